use std::collections::HashSet;

use base64::Engine;
use base64::engine::general_purpose::STANDARD;
use bytes::Bytes;
use chrono::{DateTime, Utc};

use super::FormatRegistry;
use crate::archive::{AipId, CiId, Datastream, FragmentId, MediaType};
use crate::time::parse_datestamp;
use crate::xml::{self, Element};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DipParseError {
    #[error("malformed DIP XML: {0}")]
    MalformedXml(String),
    #[error("DIP namespace {0:?} does not belong to a known format")]
    UnknownFormat(String),
    #[error("component {0}: invalid base64 payload")]
    BadBase64(String),
    #[error("component without an id attribute")]
    MissingFragmentId,
    #[error("component {0}: payload is a reference, not inline bytes")]
    NotInline(String),
}

/// Anything that can say whether a DIP root namespace is a known format.
pub trait FormatLookup {
    fn knows_namespace(&self, namespace: &str) -> bool;
}

impl FormatLookup for FormatRegistry {
    fn knows_namespace(&self, namespace: &str) -> bool {
        self.iter().any(|f| f.namespace_uri == namespace)
    }
}

/// Accepts every namespace.
#[derive(Debug, Clone, Copy, Default)]
pub struct AnyFormat;

impl FormatLookup for AnyFormat {
    fn knows_namespace(&self, _namespace: &str) -> bool {
        true
    }
}

impl<T: AsRef<str>> FormatLookup for [T] {
    fn knows_namespace(&self, namespace: &str) -> bool {
        self.iter().any(|ns| ns.as_ref() == namespace)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    Inline(Bytes),
    Reference(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DipComponent {
    pub fragment_id: FragmentId,
    pub media_type: MediaType,
    pub length: u64,
    pub payload: Payload,
}

/// The decoded content of a DIP document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedDip {
    pub format_uri: String,
    pub ci_id: CiId,
    pub source_aip: AipId,
    pub created: DateTime<Utc>,
    pub components: Vec<DipComponent>,
}

impl ParsedDip {
    /// The datastream table; fails on the first by-reference component.
    pub fn datastreams(&self) -> Result<Vec<Datastream>, DipParseError> {
        self.components
            .iter()
            .map(|c| match &c.payload {
                Payload::Inline(bytes) => Ok(Datastream::new(
                    c.fragment_id.clone(),
                    c.media_type.clone(),
                    bytes.clone(),
                )),
                Payload::Reference(_) => Err(DipParseError::NotInline(c.fragment_id.to_string())),
            })
            .collect()
    }
}

fn malformed(msg: impl Into<String>) -> DipParseError {
    DipParseError::MalformedXml(msg.into())
}

fn required<'a>(el: &'a Element, name: &str) -> Result<&'a str, DipParseError> {
    el.attr(name)
        .ok_or_else(|| malformed(format!("<{}> lacks {name}", el.name)))
}

pub(super) struct Header {
    pub namespace: String,
    pub format_uri: String,
    pub ci_id: CiId,
    pub source_aip: AipId,
    pub created: DateTime<Utc>,
}

fn header_of(root: &Element) -> Result<Header, DipParseError> {
    if root.name != "dip" {
        return Err(malformed(format!(
            "root element is <{}>, not <dip>",
            root.name
        )));
    }
    let namespace = root
        .namespace
        .clone()
        .ok_or_else(|| malformed("<dip> has no namespace"))?;
    Ok(Header {
        namespace,
        format_uri: required(root, "format")?.to_owned(),
        ci_id: CiId::new(required(root, "ciId")?).map_err(|e| malformed(e.to_string()))?,
        source_aip: AipId::new(required(root, "aipId")?).map_err(|e| malformed(e.to_string()))?,
        created: parse_datestamp(required(root, "created")?)
            .map_err(|e| malformed(e.to_string()))?,
    })
}

pub(super) fn read_header(input: &[u8]) -> Result<Header, DipParseError> {
    let root = xml::parse(input).map_err(|e| malformed(e.0))?;
    header_of(&root)
}

/// Inverse of [`super::Packager::derive_dip`].
pub fn parse_dip<L: FormatLookup + ?Sized>(
    input: &[u8],
    formats: &L,
) -> Result<ParsedDip, DipParseError> {
    let root = xml::parse(input).map_err(|e| malformed(e.0))?;
    let header = header_of(&root)?;
    if !formats.knows_namespace(&header.namespace) {
        return Err(DipParseError::UnknownFormat(header.namespace));
    }
    let mut seen = HashSet::new();
    let mut components = Vec::new();
    for el in root.elements() {
        if el.name != "component" || el.namespace != root.namespace {
            return Err(malformed(format!("unexpected element <{}>", el.name)));
        }
        let raw_id = el.attr("id").ok_or(DipParseError::MissingFragmentId)?;
        let fragment_id = FragmentId::new(raw_id).map_err(|e| malformed(e.to_string()))?;
        if !seen.insert(fragment_id.clone()) {
            return Err(malformed(format!("duplicate component id {fragment_id}")));
        }
        let media_type =
            MediaType::new(required(el, "mimeType")?).map_err(|e| malformed(e.to_string()))?;
        let length: u64 = required(el, "length")?
            .parse()
            .map_err(|_| malformed(format!("component {fragment_id}: bad length")))?;
        let resource = el
            .child("resource")
            .ok_or_else(|| malformed(format!("component {fragment_id} has no <resource>")))?;
        let payload = match resource.attr("ref") {
            Some(url) => Payload::Reference(url.to_owned()),
            None => {
                let bytes = STANDARD
                    .decode(resource.text().trim())
                    .map_err(|_| DipParseError::BadBase64(fragment_id.to_string()))?;
                if bytes.len() as u64 != length {
                    return Err(malformed(format!(
                        "component {fragment_id}: length mismatch"
                    )));
                }
                Payload::Inline(Bytes::from(bytes))
            }
        };
        components.push(DipComponent {
            fragment_id,
            media_type,
            length,
            payload,
        });
    }
    Ok(ParsedDip {
        format_uri: header.format_uri,
        ci_id: header.ci_id,
        source_aip: header.source_aip,
        created: header.created,
        components,
    })
}
