use chrono::{DateTime, Utc};

use super::{OaiError, OaiErrorCode};
use crate::time::{Bound, Granularity, parse_window_bound};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verb {
    Identify,
    ListMetadataFormats,
    ListSets,
    GetRecord,
    ListRecords,
    ListIdentifiers,
}

impl Verb {
    pub const ALL: [Verb; 6] = [
        Verb::Identify,
        Verb::ListMetadataFormats,
        Verb::ListSets,
        Verb::GetRecord,
        Verb::ListRecords,
        Verb::ListIdentifiers,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Verb::Identify => "Identify",
            Verb::ListMetadataFormats => "ListMetadataFormats",
            Verb::ListSets => "ListSets",
            Verb::GetRecord => "GetRecord",
            Verb::ListRecords => "ListRecords",
            Verb::ListIdentifiers => "ListIdentifiers",
        }
    }

    pub fn parse(value: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.as_str() == value)
    }

    fn allowed(self) -> &'static [&'static str] {
        match self {
            Verb::Identify => &[],
            Verb::ListMetadataFormats => &["identifier"],
            Verb::ListSets => &["resumptionToken"],
            Verb::GetRecord => &["identifier", "metadataPrefix"],
            Verb::ListRecords | Verb::ListIdentifiers => {
                &["metadataPrefix", "from", "until", "set", "resumptionToken"]
            }
        }
    }
}

/// A window bound as given on the wire, after day expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowBound {
    pub instant: DateTime<Utc>,
    pub granularity: Granularity,
}

/// A syntactically legal OAI-PMH request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OaiRequest {
    pub verb: Verb,
    pub identifier: Option<String>,
    pub metadata_prefix: Option<String>,
    pub from: Option<WindowBound>,
    pub until: Option<WindowBound>,
    pub set: Option<String>,
    pub resumption_token: Option<String>,
}

impl OaiRequest {
    pub fn new(verb: Verb) -> Self {
        Self {
            verb,
            identifier: None,
            metadata_prefix: None,
            from: None,
            until: None,
            set: None,
            resumption_token: None,
        }
    }

    /// Validates raw query arguments against the verb's argument rules.
    pub fn parse(args: &[(String, String)]) -> Result<Self, OaiError> {
        let verbs: Vec<&str> = args
            .iter()
            .filter(|(k, _)| k == "verb")
            .map(|(_, v)| v.as_str())
            .collect();
        let verb = match verbs[..] {
            [] => {
                return Err(OaiError::new(
                    OaiErrorCode::BadVerb,
                    "missing verb argument",
                ));
            }
            [one] => Verb::parse(one).ok_or_else(|| {
                OaiError::new(OaiErrorCode::BadVerb, format!("illegal verb {one:?}"))
            })?,
            _ => {
                return Err(OaiError::new(
                    OaiErrorCode::BadVerb,
                    "verb argument repeated",
                ));
            }
        };
        let bad = |msg: String| OaiError::new(OaiErrorCode::BadArgument, msg);
        let mut req = Self::new(verb);
        let mut seen: Vec<&str> = Vec::new();
        for (key, value) in args {
            if key == "verb" {
                continue;
            }
            if !verb.allowed().contains(&key.as_str()) {
                return Err(bad(format!("{key} is not allowed for {}", verb.as_str())));
            }
            if seen.contains(&key.as_str()) {
                return Err(bad(format!("{key} is repeated")));
            }
            seen.push(key);
            match key.as_str() {
                "identifier" => req.identifier = Some(value.clone()),
                "metadataPrefix" => req.metadata_prefix = Some(value.clone()),
                "set" => req.set = Some(value.clone()),
                "resumptionToken" => req.resumption_token = Some(value.clone()),
                "from" | "until" => {
                    let bound = if key == "from" {
                        Bound::From
                    } else {
                        Bound::Until
                    };
                    let (instant, granularity) = parse_window_bound(value, bound)
                        .map_err(|_| bad(format!("{key} is not a legal datestamp: {value:?}")))?;
                    let parsed = Some(WindowBound {
                        instant,
                        granularity,
                    });
                    if bound == Bound::From {
                        req.from = parsed;
                    } else {
                        req.until = parsed;
                    }
                }
                _ => unreachable!("filtered by allowed()"),
            }
        }
        if let (Some(from), Some(until)) = (req.from, req.until) {
            if from.granularity != until.granularity {
                return Err(bad("from and until have different granularities".into()));
            }
            if from.instant > until.instant {
                return Err(bad("from is later than until".into()));
            }
        }
        match verb {
            Verb::GetRecord if req.identifier.is_none() || req.metadata_prefix.is_none() => {
                return Err(bad(
                    "GetRecord requires identifier and metadataPrefix".into()
                ));
            }
            Verb::ListRecords | Verb::ListIdentifiers
                if req.resumption_token.is_none() && req.metadata_prefix.is_none() =>
            {
                return Err(bad("metadataPrefix is required".into()));
            }
            _ => {}
        }
        Ok(req)
    }

    /// Query arguments in wire form, as echoed in the response envelope.
    pub fn to_args(&self) -> Vec<(&'static str, String)> {
        use crate::time::format_datestamp;
        let bound = |b: &WindowBound| match b.granularity {
            Granularity::Day => b.instant.format("%Y-%m-%d").to_string(),
            Granularity::Seconds => format_datestamp(b.instant),
        };
        let mut args = vec![("verb", self.verb.as_str().to_owned())];
        let optional = [
            ("identifier", self.identifier.clone()),
            ("metadataPrefix", self.metadata_prefix.clone()),
            ("from", self.from.as_ref().map(bound)),
            ("until", self.until.as_ref().map(bound)),
            ("set", self.set.clone()),
            ("resumptionToken", self.resumption_token.clone()),
        ];
        args.extend(optional.into_iter().filter_map(|(k, v)| v.map(|v| (k, v))));
        args
    }
}
