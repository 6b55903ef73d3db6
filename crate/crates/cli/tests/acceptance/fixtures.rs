//! Store generators, an independent model of what was ingested, and a small
//! OAI-PMH list walker.

use std::collections::BTreeMap;
use std::sync::Arc;

use chrono::{DateTime, TimeZone, Utc};
use oais_core::archive::{
    Archive, ChangeKind, CiId, Datastream, FragmentId, MediaType, SetSpec, Sip,
};
use oais_core::harvest::Transport;
use oais_core::openurl::encode_pairs;
use oais_core::packaging::{AnyFormat, parse_dip};
use oais_core::xml::{self, Element};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub const OAI_NS: &str = "http://www.openarchives.org/OAI/2.0/";
pub const NATIVE: &str = "info:pathways/dip.xml";
pub const NATIVE_PREFIX: &str = "pathways_dip_xml";
pub const SETS: [&str; 3] = ["physics", "maths", "theses"];

pub fn at(secs: i64) -> DateTime<Utc> {
    Utc.timestamp_opt(1_230_000_000 + secs, 0).unwrap()
}

pub fn stamp(when: DateTime<Utc>) -> String {
    when.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

/// What the harness ingested, recorded independently of the archive.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub ci: String,
    pub aip: String,
    pub created: DateTime<Utc>,
    pub sets: Vec<String>,
    pub streams: Vec<(String, String, Vec<u8>)>,
}

impl Ingested {
    pub fn key(&self) -> (DateTime<Utc>, &str) {
        (self.created, self.aip.as_str())
    }
}

pub struct Store {
    pub archive: Arc<Archive>,
    pub model: Vec<Ingested>,
}

impl Store {
    pub fn empty(instance: &str) -> Self {
        Self {
            archive: Arc::new(Archive::in_memory(instance).unwrap()),
            model: Vec::new(),
        }
    }

    pub fn ingest(
        &mut self,
        ci: &str,
        source: Option<&str>,
        streams: &[(&str, &str, &[u8])],
        sets: &[&str],
        created: DateTime<Utc>,
    ) -> String {
        let ci_id = CiId::new(ci).unwrap();
        let mut sip = match source {
            Some(src) => Sip::derived(
                ChangeKind::Version,
                ci_id,
                oais_core::AipId::new(src).unwrap(),
                "update",
            ),
            None => Sip::original(ci_id),
        };
        for (frag, mime, bytes) in streams {
            sip = sip.with_datastream(Datastream::new(
                FragmentId::new(*frag).unwrap(),
                MediaType::new(*mime).unwrap(),
                bytes.to_vec(),
            ));
        }
        for set in sets {
            sip = sip.with_set(SetSpec::new(*set).unwrap());
        }
        let aip = self.archive.ingest(sip, created).unwrap();
        self.model.push(Ingested {
            ci: ci.to_owned(),
            aip: aip.aip_id().to_string(),
            created,
            sets: sets.iter().map(|s| s.to_string()).collect(),
            streams: streams
                .iter()
                .map(|(f, m, b)| (f.to_string(), m.to_string(), b.to_vec()))
                .collect(),
        });
        aip.aip_id().to_string()
    }

    /// `n_aips` AIPs over exactly `n_cis` CIs, timestamps drawn from
    /// `[0, span)` so that collisions are frequent.
    pub fn random(seed: u64, n_aips: usize, n_cis: usize, span: i64) -> Self {
        assert!(n_aips >= n_cis);
        let mut rng = StdRng::seed_from_u64(seed);
        let mut store = Self::empty("acc");
        let frags = ["main", "thumb", "ds-2", "x.meta", "alt_1"];
        let mimes = [
            "application/pdf",
            "text/plain",
            "image/jpeg",
            "application/octet-stream",
        ];
        for i in 0..n_aips {
            let ci = format!(
                "urn:acc:ci-{}",
                if i < n_cis {
                    i
                } else {
                    rng.gen_range(0..n_cis)
                }
            );
            let source = store.latest_of(&ci).map(|r| r.aip.clone());
            let mut streams: Vec<(&str, &str, Vec<u8>)> = Vec::new();
            for frag in frags {
                if streams.is_empty() || rng.gen_bool(0.35) {
                    let len = rng.gen_range(0..96);
                    let bytes: Vec<u8> = (0..len).map(|_| rng.r#gen()).collect();
                    streams.push((frag, mimes[rng.gen_range(0..mimes.len())], bytes));
                }
            }
            let sets: Vec<&str> = SETS.iter().copied().filter(|_| rng.gen_bool(0.4)).collect();
            let borrowed: Vec<(&str, &str, &[u8])> = streams
                .iter()
                .map(|(f, m, b)| (*f, *m, b.as_slice()))
                .collect();
            store.ingest(
                &ci,
                source.as_deref(),
                &borrowed,
                &sets,
                at(rng.gen_range(0..span)),
            );
        }
        store
    }

    pub fn cis(&self) -> Vec<String> {
        let mut cis: Vec<String> = self.model.iter().map(|r| r.ci.clone()).collect();
        cis.sort();
        cis.dedup();
        cis
    }

    /// Brute force: every record of `ci`, in `(created, aip)` order.
    pub fn versions_of(&self, ci: &str) -> Vec<&Ingested> {
        let mut all: Vec<&Ingested> = self.model.iter().filter(|r| r.ci == ci).collect();
        all.sort_by(|a, b| a.key().cmp(&b.key()));
        all
    }

    pub fn latest_of(&self, ci: &str) -> Option<&Ingested> {
        self.model
            .iter()
            .filter(|r| r.ci == ci)
            .max_by(|a, b| a.key().cmp(&b.key()))
    }

    pub fn by_aip(&self, aip: &str) -> &Ingested {
        self.model.iter().find(|r| r.aip == aip).unwrap()
    }

    /// The selective-harvest oracle: per CI, the greatest record inside the
    /// window.
    pub fn window(
        &self,
        from: Option<DateTime<Utc>>,
        until: Option<DateTime<Utc>>,
        set: Option<&str>,
    ) -> BTreeMap<String, &Ingested> {
        let mut best: BTreeMap<String, &Ingested> = BTreeMap::new();
        for r in &self.model {
            let inside = from.is_none_or(|f| r.created >= f)
                && until.is_none_or(|u| r.created <= u)
                && set.is_none_or(|s| r.sets.iter().any(|x| x == s));
            if !inside {
                continue;
            }
            let slot = best.entry(r.ci.clone()).or_insert(r);
            if r.key() > slot.key() {
                *slot = r;
            }
        }
        best
    }
}

/// One header (and, for ListRecords, the DIP) from a list response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Listed {
    pub identifier: String,
    pub datestamp: String,
    pub sets: Vec<String>,
    pub aip: Option<String>,
}

#[derive(Debug, Default)]
pub struct Listing {
    pub items: Vec<Listed>,
    pub pages: usize,
    /// `completeListSize` of the first page, when present.
    pub complete_size: Option<usize>,
}

pub fn get_xml(transport: &dyn Transport, url: &str) -> Result<(Element, Vec<u8>), String> {
    let response = transport.get(url).map_err(|e| e.to_string())?;
    if response.status != 200 {
        return Err(format!("{url}: HTTP {}", response.status));
    }
    let root = xml::parse(&response.body).map_err(|e| format!("{url}: {}", e.0))?;
    Ok((root, response.body.to_vec()))
}

pub fn oai_error(root: &Element) -> Option<String> {
    root.child("error")
        .map(|e| e.attr("code").unwrap_or_default().to_owned())
}

fn header(el: &Element) -> Listed {
    Listed {
        identifier: el
            .child("identifier")
            .map(Element::text)
            .unwrap_or_default(),
        datestamp: el.child("datestamp").map(Element::text).unwrap_or_default(),
        sets: el.children_named("setSpec").map(Element::text).collect(),
        aip: None,
    }
}

/// Items of one list page plus its resumption token (if non-empty).
pub fn page_items(
    root: &Element,
    body: &[u8],
    verb: &str,
) -> Result<(Vec<Listed>, Option<String>), String> {
    let list = root
        .child(verb)
        .ok_or_else(|| format!("no <{verb}> element"))?;
    let mut items = Vec::new();
    for el in list.elements() {
        match el.name.as_str() {
            "header" => items.push(header(el)),
            "record" => {
                let mut item = header(el.child("header").ok_or("record without header")?);
                let dip = el
                    .child("metadata")
                    .and_then(|m| m.elements().next())
                    .ok_or("record without metadata")?;
                let parsed =
                    parse_dip(&body[dip.span.clone()], &AnyFormat).map_err(|e| e.to_string())?;
                item.aip = Some(parsed.source_aip.to_string());
                items.push(item);
            }
            _ => {}
        }
    }
    let token = list
        .child("resumptionToken")
        .map(Element::text)
        .filter(|t| !t.is_empty());
    Ok((items, token))
}

/// Follows resumption tokens to the end. `noRecordsMatch` is an empty list;
/// any other error is returned as its code.
pub fn list_all(
    transport: &dyn Transport,
    base: &str,
    args: &[(&str, String)],
) -> Result<Listing, String> {
    let verb = args
        .iter()
        .find(|(k, _)| *k == "verb")
        .map(|(_, v)| v.clone())
        .unwrap();
    let mut url = format!(
        "{base}?{}",
        encode_pairs(args.iter().map(|(k, v)| (*k, v.as_str())))
    );
    let mut listing = Listing::default();
    loop {
        let (root, body) = get_xml(transport, &url)?;
        if let Some(code) = oai_error(&root) {
            return if code == "noRecordsMatch" && listing.pages == 0 {
                Ok(listing)
            } else {
                Err(code)
            };
        }
        if listing.pages == 0 {
            listing.complete_size = root
                .child(&verb)
                .and_then(|l| l.child("resumptionToken"))
                .and_then(|t| t.attr("completeListSize"))
                .and_then(|n| n.parse().ok());
        }
        let (items, token) = page_items(&root, &body, &verb)?;
        listing.pages += 1;
        listing.items.extend(items);
        match token {
            Some(token) => {
                url = format!(
                    "{base}?{}",
                    encode_pairs([("verb", verb.as_str()), ("resumptionToken", token.as_str())])
                );
            }
            None => return Ok(listing),
        }
    }
}

pub trait Context<T> {
    fn ctx(self, what: impl std::fmt::Display) -> Result<T, String>;
}

impl<T, E: std::fmt::Display> Context<T> for Result<T, E> {
    fn ctx(self, what: impl std::fmt::Display) -> Result<T, String> {
        self.map_err(|e| format!("{what}: {e}"))
    }
}

/// `(fragment, media type, bytes)`, sorted by fragment.
pub type Streams = Vec<(String, String, Vec<u8>)>;

pub fn sorted(mut streams: Streams) -> Streams {
    streams.sort();
    streams
}

/// Source AIP and inline datastreams of a DIP document.
pub fn unpack_dip(bytes: &[u8]) -> Result<(String, Streams), String> {
    let dip = parse_dip(bytes, &AnyFormat).ctx("DIP")?;
    let streams = dip
        .datastreams()
        .ctx("DIP payload")?
        .into_iter()
        .map(|d| {
            (
                d.fragment_id.to_string(),
                d.media_type.to_string(),
                d.content.to_vec(),
            )
        })
        .collect();
    Ok((dip.source_aip.to_string(), sorted(streams)))
}

impl Ingested {
    pub fn streams_sorted(&self) -> Streams {
        sorted(self.streams.clone())
    }
}
