//! Client side of both access interfaces: an incremental OAI-PMH harvester
//! that keeps a local mirror of DIPs, and an OpenURL agent that walks the
//! level-1 and level-2 handshakes.

mod agent;
mod client;
mod mirror;
mod transport;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use bytes::Bytes;
use chrono::{DateTime, Utc};

pub use agent::{Chooser, Disseminated, OpenUrlAgent};
pub use client::{DiscoveredFormat, HarvestedRecord, OaiClient, RecordsPage};
pub use mirror::{Checkpoint, HarvestCursor, HarvestReport, Harvester, Mirror, Quarantined};
pub use transport::{HttpResponse, RetryPolicy, Transport, TransportError};

use crate::archive::{AipId, CiId, Datastream};
use crate::oaipmh::OaiError;
use crate::packaging::{DipParseError, FormatLookup, Payload, parse_dip};

#[derive(Debug, thiserror::Error)]
pub enum HarvestError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("OAI-PMH error {0}")]
    Oai(#[from] OaiError),
    #[error("resolver answered {status}: {message}")]
    Resolver { status: u16, message: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("nothing to choose from at the {0} step")]
    EmptyChoice(&'static str),
    #[error("no offer matches {0}")]
    NotOffered(String),
    #[error("dissemination of {fragment} failed with status {status}")]
    Dissemination { status: u16, fragment: String },
    #[error(transparent)]
    Dip(#[from] DipParseError),
    #[error("mirror I/O: {0}")]
    Io(#[from] io::Error),
    #[error("mirror is locked by another harvest ({0})")]
    Locked(PathBuf),
    #[error("mirror cursor belongs to a different harvest: {0}")]
    CursorMismatch(String),
    #[error("interrupted at {0:?}")]
    Interrupted(Checkpoint),
}

impl HarvestError {
    /// No HTTP response was obtained.
    pub fn is_transport(&self) -> bool {
        matches!(self, HarvestError::Transport(_))
    }

    /// The peer answered, but not with what the protocol allows here.
    pub fn is_protocol(&self) -> bool {
        matches!(
            self,
            HarvestError::Oai(_)
                | HarvestError::Resolver { .. }
                | HarvestError::Malformed(_)
                | HarvestError::EmptyChoice(_)
                | HarvestError::NotOffered(_)
                | HarvestError::Dissemination { .. }
                | HarvestError::Dip(_)
        )
    }
}

/// A DIP with its inline datastreams unpacked.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MirrorEntry {
    pub ci_id: CiId,
    pub datestamp: DateTime<Utc>,
    pub dip_format_uri: String,
    pub source_aip: AipId,
    pub dip_bytes: Bytes,
    /// Inline components only; by-reference components stay in the DIP.
    pub datastreams: Vec<Datastream>,
}

impl MirrorEntry {
    pub fn from_dip<L: FormatLookup + ?Sized>(
        dip_bytes: Bytes,
        formats: &L,
    ) -> Result<Self, DipParseError> {
        let parsed = parse_dip(&dip_bytes, formats)?;
        let datastreams = parsed
            .components
            .into_iter()
            .filter_map(|c| match c.payload {
                Payload::Inline(bytes) => Some(Datastream::new(c.fragment_id, c.media_type, bytes)),
                Payload::Reference(_) => None,
            })
            .collect();
        Ok(Self {
            ci_id: parsed.ci_id,
            datestamp: parsed.created,
            dip_format_uri: parsed.format_uri,
            source_aip: parsed.source_aip,
            dip_bytes,
            datastreams,
        })
    }

    /// Writes `entry.xml` and `ds/{fragment_id}` under `dir`.
    pub fn write_to(&self, dir: &Path) -> io::Result<()> {
        let ds_dir = dir.join("ds");
        fs::create_dir_all(&ds_dir)?;
        mirror::write_synced(&dir.join("entry.xml"), &self.dip_bytes)?;
        for ds in &self.datastreams {
            mirror::write_synced(&ds_dir.join(ds.fragment_id.as_str()), &ds.content)?;
        }
        Ok(())
    }
}
