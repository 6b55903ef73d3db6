//! DIP format registry and the neutral `info:pathways/dip.xml` packaging.
//!
//! A DIP document looks like this (no whitespace between elements, base64
//! unwrapped):
//!
//! ```xml
//! <dip xmlns="info:pathways/dip.xml" format="info:pathways/dip.xml"
//!      ciId="urn:isbn:90-70002-04-3" aipId="info:repo/demo/000000000002"
//!      created="2005-09-26T13:45:07Z">
//!   <component id="ds1" mimeType="application/pdf" length="1234">
//!     <resource>JVBERi0xLjQK...</resource>
//!   </component>
//! </dip>
//! ```
//!
//! In by-reference formats `<resource ref="..."/>` carries a level-2
//! dissemination URL instead of the bytes.

mod parse;

use std::sync::Arc;

use base64::Engine;
use base64::engine::general_purpose::STANDARD;
use bytes::Bytes;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub use parse::{
    AnyFormat, DipComponent, DipParseError, FormatLookup, ParsedDip, Payload, parse_dip,
};

use crate::archive::{Aip, AipId, CiId, FragmentId, is_absolute_uri};
use crate::time::format_datestamp;
use crate::xml::XmlWriter;

pub const NATIVE_FORMAT_URI: &str = "info:pathways/dip.xml";
pub const NATIVE_PREFIX: &str = "pathways_dip_xml";
pub const DIP_FORMAT_URI_PREFIX: &str = "info:pathways/dip.";
/// Raw-URI spelling used in metadataPrefix arguments, mapped onto `info:pathways/dip.*`.
const SVC_DIP_ALIAS_PREFIX: &str = "info:pathways/svc/dip.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EmbedMode {
    #[default]
    Inline,
    ByReference,
}

/// A registered DIP format.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DipFormat {
    pub format_uri: String,
    pub metadata_prefix: String,
    pub namespace_uri: String,
    pub schema_url: String,
    #[serde(default)]
    pub embed_mode: EmbedMode,
}

impl DipFormat {
    pub fn native() -> Self {
        Self {
            format_uri: NATIVE_FORMAT_URI.to_owned(),
            metadata_prefix: NATIVE_PREFIX.to_owned(),
            namespace_uri: NATIVE_FORMAT_URI.to_owned(),
            schema_url: "info:pathways/dip.xml.xsd".to_owned(),
            embed_mode: EmbedMode::Inline,
        }
    }

    /// A format in the `info:pathways/dip.{suffix}` family using the neutral
    /// structure, with its format URI doubling as the namespace.
    pub fn pathways(suffix: &str, embed_mode: EmbedMode) -> Self {
        let format_uri = format!("{DIP_FORMAT_URI_PREFIX}{suffix}");
        Self {
            metadata_prefix: format!("pathways_dip_{suffix}"),
            namespace_uri: format_uri.clone(),
            schema_url: format!("{format_uri}.xsd"),
            format_uri,
            embed_mode,
        }
    }

    fn validate(&self) -> Result<(), PackagingError> {
        let bad = |why: &str| {
            Err(PackagingError::InvalidFormat(format!(
                "{}: {why}",
                self.format_uri
            )))
        };
        if !self.format_uri.starts_with(DIP_FORMAT_URI_PREFIX)
            || self.format_uri.len() == DIP_FORMAT_URI_PREFIX.len()
            || !is_absolute_uri(&self.format_uri)
        {
            return bad("format URI must have the form info:pathways/dip.*");
        }
        if !is_metadata_prefix(&self.metadata_prefix) {
            return bad("metadata prefix must match [A-Za-z0-9._!~*'()-]+");
        }
        if !is_absolute_uri(&self.namespace_uri) {
            return bad("namespace must be an absolute URI");
        }
        if self.schema_url.trim().is_empty() {
            return bad("schema URL is empty");
        }
        Ok(())
    }
}

pub fn is_metadata_prefix(value: &str) -> bool {
    !value.is_empty()
        && value
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || "._!~*'()-".contains(c))
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PackagingError {
    #[error("format {0} is already registered")]
    DuplicateFormat(String),
    #[error("invalid format descriptor: {0}")]
    InvalidFormat(String),
    #[error("format {0} is not registered")]
    UnknownFormat(String),
    #[error("format {0} embeds by reference but no dissemination linker is configured")]
    NoLinker(String),
}

/// Registered DIP formats, in registration order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FormatRegistry {
    formats: Vec<DipFormat>,
}

impl FormatRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_native() -> Self {
        let mut registry = Self::new();
        registry
            .register(DipFormat::native())
            .expect("native format is valid");
        registry
    }

    pub fn register(&mut self, format: DipFormat) -> Result<(), PackagingError> {
        format.validate()?;
        if let Some(existing) = self.formats.iter().find(|f| {
            f.format_uri == format.format_uri || f.metadata_prefix == format.metadata_prefix
        }) {
            let clash = if existing.format_uri == format.format_uri {
                &format.format_uri
            } else {
                &format.metadata_prefix
            };
            return Err(PackagingError::DuplicateFormat(clash.clone()));
        }
        self.formats.push(format);
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &DipFormat> {
        self.formats.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.formats.is_empty()
    }

    pub fn len(&self) -> usize {
        self.formats.len()
    }

    pub fn by_uri(&self, format_uri: &str) -> Option<&DipFormat> {
        self.formats.iter().find(|f| f.format_uri == format_uri)
    }

    /// Resolves a metadataPrefix argument: the registered token, the raw
    /// format URI, or the `info:pathways/svc/dip.*` spelling of it.
    pub fn resolve(&self, prefix_or_uri: &str) -> Option<&DipFormat> {
        if let Some(found) = self
            .formats
            .iter()
            .find(|f| f.metadata_prefix == prefix_or_uri)
        {
            return Some(found);
        }
        if let Some(found) = self.by_uri(prefix_or_uri) {
            return Some(found);
        }
        prefix_or_uri
            .strip_prefix(SVC_DIP_ALIAS_PREFIX)
            .and_then(|suffix| self.by_uri(&format!("{DIP_FORMAT_URI_PREFIX}{suffix}")))
    }
}

/// Produces dissemination URLs for by-reference components.
pub trait ReferenceLinker: Send + Sync {
    fn dissemination_url(&self, aip: &Aip, fragment_id: &FragmentId) -> String;
}

/// A serialized DIP.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DipDocument {
    pub format_uri: String,
    pub xml: Bytes,
    pub source_aip: AipId,
    pub ci_id: CiId,
    pub created: DateTime<Utc>,
}

impl DipDocument {
    /// Reads the identifying attributes of a DIP's root element without
    /// checking the format against a registry.
    pub fn from_xml(xml: impl Into<Bytes>) -> Result<Self, DipParseError> {
        let xml = xml.into();
        let header = parse::read_header(&xml)?;
        Ok(Self {
            format_uri: header.format_uri,
            source_aip: header.source_aip,
            ci_id: header.ci_id,
            created: header.created,
            xml,
        })
    }
}

/// Derives DIP documents from AIPs.
#[derive(Clone, Default)]
pub struct Packager {
    registry: FormatRegistry,
    linker: Option<Arc<dyn ReferenceLinker>>,
}

impl std::fmt::Debug for Packager {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Packager")
            .field("registry", &self.registry)
            .field("linker", &self.linker.is_some())
            .finish()
    }
}

impl Packager {
    pub fn new(registry: FormatRegistry) -> Self {
        Self {
            registry,
            linker: None,
        }
    }

    pub fn with_linker(mut self, linker: Arc<dyn ReferenceLinker>) -> Self {
        self.linker = Some(linker);
        self
    }

    pub fn registry(&self) -> &FormatRegistry {
        &self.registry
    }

    pub fn derive_dip(&self, aip: &Aip, format_uri: &str) -> Result<DipDocument, PackagingError> {
        let format = self
            .registry
            .by_uri(format_uri)
            .ok_or_else(|| PackagingError::UnknownFormat(format_uri.to_owned()))?;
        let linker = match format.embed_mode {
            EmbedMode::Inline => None,
            EmbedMode::ByReference => Some(
                self.linker
                    .as_deref()
                    .ok_or_else(|| PackagingError::NoLinker(format_uri.to_owned()))?,
            ),
        };
        let created = format_datestamp(aip.created());
        let mut w = XmlWriter::new();
        w.open(
            "dip",
            &[
                ("xmlns", &format.namespace_uri),
                ("format", &format.format_uri),
                ("ciId", aip.ci_id().as_str()),
                ("aipId", aip.aip_id().as_str()),
                ("created", &created),
            ],
        );
        for ds in aip.datastreams() {
            let length = ds.len().to_string();
            w.open(
                "component",
                &[
                    ("id", ds.fragment_id.as_str()),
                    ("mimeType", ds.media_type.as_str()),
                    ("length", &length),
                ],
            );
            match linker {
                None => {
                    w.leaf("resource", &[], &STANDARD.encode(&ds.content));
                }
                Some(linker) => {
                    let url = linker.dissemination_url(aip, &ds.fragment_id);
                    w.empty("resource", &[("ref", &url)]);
                }
            }
            w.close("component");
        }
        w.close("dip");
        Ok(DipDocument {
            format_uri: format.format_uri.clone(),
            xml: Bytes::from(w.finish()),
            source_aip: aip.aip_id().clone(),
            ci_id: aip.ci_id().clone(),
            created: aip.created(),
        })
    }
}
