//! Versioned archival package store with OAI-PMH and OpenURL access interfaces.
//!
//! The crate is organised bottom-up:
//!
//! * [`archive`] stores immutable AIPs and answers version-resolution queries.
//! * [`packaging`] turns AIPs into DIP documents and back.
//! * [`oaipmh`] serves batches of DIPs through the six OAI-PMH verbs.
//! * [`openurl`] resolves KEV ContextObjects for DIP ordering (level 1) and
//!   datastream dissemination (level 2).
//! * [`harvest`] is the client side of both interfaces.
//! * [`gateway`] routes HTTP-shaped requests to the two interfaces.

pub mod archive;
pub mod config;
pub mod gateway;
pub mod harvest;
pub mod lockfile;
pub mod oaipmh;
pub mod openurl;
pub mod packaging;
pub mod time;
pub mod xml;

#[cfg(test)]
mod test_support;

pub use archive::{
    Aip, AipId, Archive, ArchiveError, ChangeKind, CiId, Datastream, FragmentId, MediaType,
    Provenance, SetSpec, Sip, Snapshot,
};
pub use config::{ConfigError, GatewayConfig};
pub use gateway::{Gateway, GatewayRequest, GatewayResponse, LocalTransport};
pub use openurl::{AutoSelect, VersionKeyMode};
pub use packaging::{DipDocument, DipFormat, EmbedMode, FormatRegistry, Packager, ParsedDip};
