//! OAI-PMH 2.0 data provider over the archive.
//!
//! Items are Content Information: the OAI-PMH identifier is the CI
//! identifier, the datestamp is the creation instant of the AIP a record was
//! derived from, and metadata formats are the registered DIP formats.

mod render;
mod request;
mod selection;
mod token;

use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Utc};

pub use request::{OaiRequest, Verb, WindowBound};
pub use selection::{Window, select};

use crate::archive::{Archive, CiId, SetSpec};
use crate::packaging::{DipDocument, DipFormat, Packager};
use crate::time::epoch;
use selection::sort_key;
use token::{TokenCodec, TokenState};

pub const OAI_NAMESPACE: &str = "http://www.openarchives.org/OAI/2.0/";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OaiErrorCode {
    BadVerb,
    BadArgument,
    IdDoesNotExist,
    CannotDisseminateFormat,
    NoRecordsMatch,
    BadResumptionToken,
    NoMetadataFormats,
    NoSetHierarchy,
}

impl OaiErrorCode {
    pub const ALL: [OaiErrorCode; 8] = [
        OaiErrorCode::BadVerb,
        OaiErrorCode::BadArgument,
        OaiErrorCode::IdDoesNotExist,
        OaiErrorCode::CannotDisseminateFormat,
        OaiErrorCode::NoRecordsMatch,
        OaiErrorCode::BadResumptionToken,
        OaiErrorCode::NoMetadataFormats,
        OaiErrorCode::NoSetHierarchy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OaiErrorCode::BadVerb => "badVerb",
            OaiErrorCode::BadArgument => "badArgument",
            OaiErrorCode::IdDoesNotExist => "idDoesNotExist",
            OaiErrorCode::CannotDisseminateFormat => "cannotDisseminateFormat",
            OaiErrorCode::NoRecordsMatch => "noRecordsMatch",
            OaiErrorCode::BadResumptionToken => "badResumptionToken",
            OaiErrorCode::NoMetadataFormats => "noMetadataFormats",
            OaiErrorCode::NoSetHierarchy => "noSetHierarchy",
        }
    }

    pub fn parse(value: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == value)
    }
}

impl std::fmt::Display for OaiErrorCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{code}: {message}")]
pub struct OaiError {
    pub code: OaiErrorCode,
    pub message: String,
}

impl OaiError {
    pub fn new(code: OaiErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OaiSettings {
    pub repository_name: String,
    pub base_url: String,
    pub admin_email: String,
    pub page_size: usize,
    pub token_ttl: Duration,
    pub token_secret: Vec<u8>,
    /// Flat set list; empty means the repository has no set hierarchy.
    pub sets: Vec<(SetSpec, String)>,
}

impl Default for OaiSettings {
    fn default() -> Self {
        Self {
            repository_name: "OAIS gateway".into(),
            base_url: "http://localhost:8080/oai".into(),
            admin_email: "admin@localhost".into(),
            page_size: 100,
            token_ttl: Duration::from_secs(24 * 3600),
            token_secret: b"change-me".to_vec(),
            sets: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Identity {
    pub repository_name: String,
    pub base_url: String,
    pub admin_email: String,
    pub earliest_datestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OaiHeader {
    pub identifier: CiId,
    pub datestamp: DateTime<Utc>,
    pub set_specs: Vec<SetSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OaiRecord {
    pub header: OaiHeader,
    pub metadata: DipDocument,
}

/// The `resumptionToken` element of a list response. `token` is `None` on
/// the last page of a resumed list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Resumption {
    pub token: Option<String>,
    pub expiration: Option<DateTime<Utc>>,
    pub complete_list_size: usize,
    pub cursor: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Page<T> {
    pub items: Vec<T>,
    pub resumption: Option<Resumption>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OaiReply {
    Identify(Identity),
    ListMetadataFormats(Vec<DipFormat>),
    ListSets(Vec<(SetSpec, String)>),
    GetRecord(OaiRecord),
    ListRecords(Page<OaiRecord>),
    ListIdentifiers(Page<OaiHeader>),
}

/// The OAI-PMH endpoint. Cheap to clone; shares the archive and packager.
#[derive(Debug, Clone)]
pub struct OaiService {
    archive: Arc<Archive>,
    packager: Arc<Packager>,
    settings: Arc<OaiSettings>,
    tokens: TokenCodec,
}

impl OaiService {
    pub fn new(archive: Arc<Archive>, packager: Arc<Packager>, settings: OaiSettings) -> Self {
        assert!(settings.page_size > 0, "page_size must be positive");
        Self {
            tokens: TokenCodec::new(&settings.token_secret),
            archive,
            packager,
            settings: Arc::new(settings),
        }
    }

    pub fn settings(&self) -> &OaiSettings {
        &self.settings
    }

    /// Handles raw query arguments and returns the XML response document.
    pub fn respond(&self, args: &[(String, String)], now: DateTime<Utc>) -> String {
        let outcome = OaiRequest::parse(args).map(|req| {
            let reply = self.execute(&req, now);
            (req, reply)
        });
        match outcome {
            Err(err) => render::error(&self.settings.base_url, None, &err, now),
            Ok((req, Err(err))) => render::error(&self.settings.base_url, Some(&req), &err, now),
            Ok((req, Ok(reply))) => render::reply(&self.settings.base_url, &req, &reply, now),
        }
    }

    /// An error response for a request whose arguments could not be decoded.
    pub fn respond_error(&self, err: &OaiError, now: DateTime<Utc>) -> String {
        render::error(&self.settings.base_url, None, err, now)
    }

    fn sets_enabled(&self) -> bool {
        !self.settings.sets.is_empty()
    }

    pub fn execute(&self, req: &OaiRequest, now: DateTime<Utc>) -> Result<OaiReply, OaiError> {
        match req.verb {
            Verb::Identify => Ok(OaiReply::Identify(self.identify())),
            Verb::ListMetadataFormats => self.list_metadata_formats(req.identifier.as_deref()),
            Verb::ListSets => self.list_sets(req.resumption_token.as_deref()),
            Verb::GetRecord => self.get_record(
                req.identifier.as_deref().unwrap_or_default(),
                req.metadata_prefix.as_deref().unwrap_or_default(),
            ),
            Verb::ListRecords | Verb::ListIdentifiers => self.list(req, now),
        }
    }

    pub fn identify(&self) -> Identity {
        Identity {
            repository_name: self.settings.repository_name.clone(),
            base_url: self.settings.base_url.clone(),
            admin_email: self.settings.admin_email.clone(),
            earliest_datestamp: self
                .archive
                .snapshot()
                .earliest_created()
                .unwrap_or(epoch()),
        }
    }

    fn known_ci(&self, identifier: &str) -> Result<CiId, OaiError> {
        let unknown = || {
            OaiError::new(
                OaiErrorCode::IdDoesNotExist,
                format!("{identifier} is unknown"),
            )
        };
        let ci = CiId::new(identifier).map_err(|_| unknown())?;
        if self.archive.snapshot().contains_ci(&ci) {
            Ok(ci)
        } else {
            Err(unknown())
        }
    }

    fn list_metadata_formats(&self, identifier: Option<&str>) -> Result<OaiReply, OaiError> {
        if let Some(identifier) = identifier {
            self.known_ci(identifier)?;
        }
        let formats: Vec<DipFormat> = self.packager.registry().iter().cloned().collect();
        if formats.is_empty() {
            return Err(OaiError::new(
                OaiErrorCode::NoMetadataFormats,
                "no DIP formats are registered",
            ));
        }
        Ok(OaiReply::ListMetadataFormats(formats))
    }

    fn list_sets(&self, token: Option<&str>) -> Result<OaiReply, OaiError> {
        if !self.sets_enabled() {
            return Err(OaiError::new(
                OaiErrorCode::NoSetHierarchy,
                "this repository does not support sets",
            ));
        }
        if token.is_some() {
            return Err(OaiError::new(
                OaiErrorCode::BadResumptionToken,
                "set lists are never split",
            ));
        }
        Ok(OaiReply::ListSets(self.settings.sets.clone()))
    }

    fn format(&self, prefix: &str) -> Result<&DipFormat, OaiError> {
        self.packager.registry().resolve(prefix).ok_or_else(|| {
            OaiError::new(
                OaiErrorCode::CannotDisseminateFormat,
                format!("{prefix} is not a supported metadata format"),
            )
        })
    }

    fn header(&self, aip: &crate::archive::Aip) -> OaiHeader {
        OaiHeader {
            identifier: aip.ci_id().clone(),
            datestamp: aip.created(),
            set_specs: if self.sets_enabled() {
                aip.sets().to_vec()
            } else {
                Vec::new()
            },
        }
    }

    fn record(&self, aip: &crate::archive::Aip, format: &DipFormat) -> Result<OaiRecord, OaiError> {
        let metadata = self
            .packager
            .derive_dip(aip, &format.format_uri)
            .map_err(|e| OaiError::new(OaiErrorCode::CannotDisseminateFormat, e.to_string()))?;
        Ok(OaiRecord {
            header: self.header(aip),
            metadata,
        })
    }

    fn get_record(&self, identifier: &str, prefix: &str) -> Result<OaiReply, OaiError> {
        let ci = self.known_ci(identifier)?;
        let format = self.format(prefix)?;
        let aip = self
            .archive
            .latest_aip_for_ci(&ci, None)
            .map_err(|e| OaiError::new(OaiErrorCode::IdDoesNotExist, e.to_string()))?;
        Ok(OaiReply::GetRecord(self.record(&aip, format)?))
    }

    fn bad_token(message: impl Into<String>) -> OaiError {
        OaiError::new(OaiErrorCode::BadResumptionToken, message)
    }

    /// Decodes a token and checks it against the request it arrived with.
    fn resume(
        &self,
        req: &OaiRequest,
        token: &str,
        now: DateTime<Utc>,
    ) -> Result<TokenState, OaiError> {
        let state = self.tokens.decode(token).map_err(Self::bad_token)?;
        if state.verb != req.verb.as_str() {
            return Err(Self::bad_token(format!(
                "token was issued for {}",
                state.verb
            )));
        }
        let issued = state
            .issued_at()
            .ok_or_else(|| Self::bad_token("malformed token"))?;
        let ttl =
            chrono::Duration::from_std(self.settings.token_ttl).unwrap_or(chrono::TimeDelta::MAX);
        if issued
            .checked_add_signed(ttl)
            .is_some_and(|expires| now > expires)
        {
            return Err(Self::bad_token("token has expired"));
        }
        // The token is exclusive; extra arguments that contradict the pinned
        // query mean the token is being replayed against a different query.
        let mut contradicts = false;
        if let Some(prefix) = &req.metadata_prefix {
            contradicts |= self
                .packager
                .registry()
                .resolve(prefix)
                .is_none_or(|f| f.format_uri != state.format);
        }
        if let Some(from) = req.from {
            contradicts |= state.from != Some(from.instant.timestamp());
        }
        if let Some(until) = req.until {
            contradicts |= !state.until_given || state.until != until.instant.timestamp();
        }
        if let Some(set) = &req.set {
            contradicts |= state.set.as_deref() != Some(set.as_str());
        }
        if contradicts {
            return Err(Self::bad_token("token does not belong to this query"));
        }
        if req.metadata_prefix.is_some()
            || req.from.is_some()
            || req.until.is_some()
            || req.set.is_some()
        {
            return Err(OaiError::new(
                OaiErrorCode::BadArgument,
                "resumptionToken is an exclusive argument",
            ));
        }
        Ok(state)
    }

    fn fresh_state(&self, req: &OaiRequest, now: DateTime<Utc>) -> Result<TokenState, OaiError> {
        let prefix = req.metadata_prefix.as_deref().unwrap_or_default();
        let format = self.format(prefix)?;
        if let Some(set) = &req.set {
            if !self.sets_enabled() {
                return Err(OaiError::new(
                    OaiErrorCode::NoSetHierarchy,
                    "this repository does not support sets",
                ));
            }
            SetSpec::new(set.as_str())
                .map_err(|e| OaiError::new(OaiErrorCode::BadArgument, e.to_string()))?;
        }
        Ok(TokenState {
            verb: req.verb.as_str().to_owned(),
            format: format.format_uri.clone(),
            from: req.from.map(|b| b.instant.timestamp()),
            until: req.until.map_or(now, |b| b.instant).timestamp(),
            until_given: req.until.is_some(),
            set: req.set.clone(),
            after: (i64::MIN, String::new()),
            issued: now.timestamp(),
        })
    }

    fn list(&self, req: &OaiRequest, now: DateTime<Utc>) -> Result<OaiReply, OaiError> {
        let (state, resumed) = match &req.resumption_token {
            Some(token) => (self.resume(req, token, now)?, true),
            None => (self.fresh_state(req, now)?, false),
        };
        let format = self
            .packager
            .registry()
            .by_uri(&state.format)
            .ok_or_else(|| Self::bad_token("format is no longer offered"))?;
        let instant = |secs: i64| {
            DateTime::from_timestamp(secs, 0).ok_or_else(|| Self::bad_token("malformed token"))
        };
        let window = Window {
            from: state.from.map(instant).transpose()?,
            until: Some(instant(state.until)?),
            set: state
                .set
                .as_deref()
                .map(SetSpec::new)
                .transpose()
                .map_err(|_| Self::bad_token("malformed token"))?,
        };
        let selected = select(&self.archive.snapshot(), &window);
        let start = selected.partition_point(|aip| {
            let (secs, ci) = sort_key(aip);
            (secs, ci) <= (state.after.0, state.after.1.as_str())
        });
        let end = (start + self.settings.page_size).min(selected.len());
        if start == end {
            return Err(OaiError::new(
                OaiErrorCode::NoRecordsMatch,
                "no records match the request",
            ));
        }
        let page = &selected[start..end];
        let resumption = if end < selected.len() {
            let last = &page[page.len() - 1];
            let next = TokenState {
                after: (last.created().timestamp(), last.ci_id().to_string()),
                issued: now.timestamp(),
                ..state
            };
            let ttl = chrono::Duration::from_std(self.settings.token_ttl).ok();
            Some(Resumption {
                token: Some(self.tokens.encode(&next)),
                expiration: ttl.and_then(|ttl| now.checked_add_signed(ttl)),
                complete_list_size: selected.len(),
                cursor: start,
            })
        } else if resumed {
            Some(Resumption {
                token: None,
                expiration: None,
                complete_list_size: selected.len(),
                cursor: start,
            })
        } else {
            None
        };
        if req.verb == Verb::ListIdentifiers {
            let items = page.iter().map(|aip| self.header(aip)).collect();
            return Ok(OaiReply::ListIdentifiers(Page { items, resumption }));
        }
        let items = page
            .iter()
            .map(|aip| self.record(aip, format))
            .collect::<Result<_, _>>()?;
        Ok(OaiReply::ListRecords(Page { items, resumption }))
    }
}
