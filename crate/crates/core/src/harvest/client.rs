use std::sync::Arc;

use bytes::Bytes;
use chrono::{DateTime, Utc};

use super::transport::{RetryPolicy, Transport};
use super::{HarvestError, MirrorEntry};
use crate::archive::SetSpec;
use crate::oaipmh::{OAI_NAMESPACE, OaiError, OaiErrorCode};
use crate::openurl::encode_pairs;
use crate::time::{format_datestamp, parse_datestamp};
use crate::xml::{self, Element};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscoveredFormat {
    pub prefix: String,
    pub namespace: String,
    pub schema: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HarvestedRecord {
    pub identifier: String,
    pub datestamp: DateTime<Utc>,
    pub set_specs: Vec<String>,
    /// The embedded DIP, sliced verbatim out of the response.
    pub dip: Bytes,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RecordsPage {
    pub records: Vec<HarvestedRecord>,
    /// `None` when the list is complete.
    pub resumption_token: Option<String>,
}

/// OAI-PMH harvester requests against one base URL.
#[derive(Clone)]
pub struct OaiClient {
    transport: Arc<dyn Transport>,
    base_url: String,
    retry: RetryPolicy,
}

impl std::fmt::Debug for OaiClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OaiClient")
            .field("base_url", &self.base_url)
            .field("retry", &self.retry)
            .finish()
    }
}

fn malformed(msg: impl Into<String>) -> HarvestError {
    HarvestError::Malformed(msg.into())
}

fn child_text(el: &Element, name: &str) -> Result<String, HarvestError> {
    el.child(name)
        .map(|c| c.text().trim().to_owned())
        .ok_or_else(|| malformed(format!("<{}> lacks <{name}>", el.name)))
}

impl OaiClient {
    pub fn new(transport: Arc<dyn Transport>, base_url: impl Into<String>) -> Self {
        Self {
            transport,
            base_url: base_url.into(),
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    /// Issues one request and returns the raw body with the verb element's
    /// parsed root, or the protocol error it carries.
    fn call(&self, verb: &str, args: &[(&str, &str)]) -> Result<(Bytes, Element), HarvestError> {
        let mut pairs = vec![("verb", verb)];
        pairs.extend_from_slice(args);
        let url = format!("{}?{}", self.base_url, encode_pairs(pairs));
        let response = self.retry.get(self.transport.as_ref(), &url)?;
        if response.status != 200 {
            return Err(malformed(format!("HTTP status {}", response.status)));
        }
        let root = xml::parse(&response.body).map_err(|e| malformed(e.0))?;
        if !root.is(Some(OAI_NAMESPACE), "OAI-PMH") {
            return Err(malformed(format!("root element is <{}>", root.name)));
        }
        if let Some(err) = root.child("error") {
            let code = err.attr("code").unwrap_or_default();
            let code = OaiErrorCode::parse(code)
                .ok_or_else(|| malformed(format!("unknown error code {code:?}")))?;
            return Err(OaiError::new(code, err.text().trim()).into());
        }
        if root.child("responseDate").is_none() {
            return Err(malformed("response lacks responseDate"));
        }
        let body = response.body;
        let verb_el = root
            .children_named(verb)
            .next()
            .cloned()
            .ok_or_else(|| malformed(format!("response lacks <{verb}>")))?;
        Ok((body, verb_el))
    }

    pub fn discover_formats(&self) -> Result<Vec<DiscoveredFormat>, HarvestError> {
        let (_, el) = self.call("ListMetadataFormats", &[])?;
        el.children_named("metadataFormat")
            .map(|f| {
                Ok(DiscoveredFormat {
                    prefix: child_text(f, "metadataPrefix")?,
                    namespace: child_text(f, "metadataNamespace")?,
                    schema: child_text(f, "schema")?,
                })
            })
            .collect()
    }

    /// Formats known to the server, as a namespace lookup for `parse_dip`.
    pub fn format_namespaces(&self) -> Result<Vec<String>, HarvestError> {
        Ok(self
            .discover_formats()?
            .into_iter()
            .map(|f| f.namespace)
            .collect())
    }

    fn record(body: &Bytes, el: &Element) -> Result<HarvestedRecord, HarvestError> {
        let header = el
            .child("header")
            .ok_or_else(|| malformed("record lacks <header>"))?;
        if header.attr("status") == Some("deleted") {
            return Err(malformed("deleted records are not supported"));
        }
        let datestamp = parse_datestamp(&child_text(header, "datestamp")?)
            .map_err(|e| malformed(e.to_string()))?;
        let dip = el
            .child("metadata")
            .and_then(|m| m.elements().next())
            .ok_or_else(|| malformed("record lacks metadata"))?;
        Ok(HarvestedRecord {
            identifier: child_text(header, "identifier")?,
            datestamp,
            set_specs: header
                .children_named("setSpec")
                .map(|s| s.text().trim().to_owned())
                .collect(),
            dip: body.slice(dip.span.clone()),
        })
    }

    pub fn get_record(
        &self,
        identifier: &str,
        prefix: &str,
    ) -> Result<HarvestedRecord, HarvestError> {
        let (body, el) = self.call(
            "GetRecord",
            &[("identifier", identifier), ("metadataPrefix", prefix)],
        )?;
        let record = el
            .child("record")
            .ok_or_else(|| malformed("GetRecord without <record>"))?;
        Self::record(&body, record)
    }

    /// Single-record fetch, unpacked.
    pub fn order_dip(&self, identifier: &str, format: &str) -> Result<MirrorEntry, HarvestError> {
        let namespaces = self.format_namespaces()?;
        let record = self.get_record(identifier, format)?;
        Ok(MirrorEntry::from_dip(record.dip, namespaces.as_slice())?)
    }

    fn page(&self, verb_el: &Element, body: &Bytes) -> Result<RecordsPage, HarvestError> {
        let records = verb_el
            .children_named("record")
            .map(|r| Self::record(body, r))
            .collect::<Result<_, _>>()?;
        let resumption_token = verb_el
            .child("resumptionToken")
            .map(|t| t.text().trim().to_owned())
            .filter(|t| !t.is_empty());
        Ok(RecordsPage {
            records,
            resumption_token,
        })
    }

    /// First page of ListRecords. `noRecordsMatch` becomes an empty page.
    pub fn list_records(
        &self,
        prefix: &str,
        from: Option<DateTime<Utc>>,
        until: Option<DateTime<Utc>>,
        set: Option<&SetSpec>,
    ) -> Result<RecordsPage, HarvestError> {
        let from = from.map(format_datestamp);
        let until = until.map(format_datestamp);
        let mut args = vec![("metadataPrefix", prefix)];
        if let Some(from) = &from {
            args.push(("from", from));
        }
        if let Some(until) = &until {
            args.push(("until", until));
        }
        if let Some(set) = set {
            args.push(("set", set.as_str()));
        }
        self.list_call(&args)
    }

    pub fn resume(&self, token: &str) -> Result<RecordsPage, HarvestError> {
        self.list_call(&[("resumptionToken", token)])
    }

    fn list_call(&self, args: &[(&str, &str)]) -> Result<RecordsPage, HarvestError> {
        match self.call("ListRecords", args) {
            Ok((body, el)) => self.page(&el, &body),
            Err(HarvestError::Oai(e)) if e.code == OaiErrorCode::NoRecordsMatch => {
                Ok(RecordsPage::default())
            }
            Err(e) => Err(e),
        }
    }
}
