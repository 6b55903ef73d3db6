use std::str::FromStr;
use std::sync::Arc;

use bytes::Bytes;

use super::HarvestError;
use super::transport::{HttpResponse, RetryPolicy, Transport};
use crate::openurl::{
    ContextObject, Entity, SVC_BOOTSTRAP, SVC_DIP, parse_container, serialize_kev,
};
use crate::packaging::{DipDocument, NATIVE_FORMAT_URI};

/// Parallel fetches per batch in [`OpenUrlAgent::disseminate`].
const FETCH_BATCH: usize = 8;

/// Deterministic pick from a list of ContextObjects describing AIPs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Chooser {
    /// The last offer; resolvers list AIPs oldest first.
    Latest,
    First,
    /// The offer whose `aip` or `version` key equals the value.
    ByAip(String),
}

impl Chooser {
    pub fn choose<'a>(&self, offers: &'a [ContextObject]) -> Option<&'a ContextObject> {
        match self {
            Chooser::Latest => offers.last(),
            Chooser::First => offers.first(),
            Chooser::ByAip(id) => offers.iter().find(|co| {
                co.pathways().is_some_and(|k| {
                    k.aip.as_deref() == Some(id.as_str())
                        || k.version.as_deref() == Some(id.as_str())
                })
            }),
        }
    }
}

impl FromStr for Chooser {
    type Err = String;

    /// `latest`, `first` or `aip:{id}`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "latest" => Ok(Chooser::Latest),
            "first" => Ok(Chooser::First),
            _ => match s.strip_prefix("aip:") {
                Some(id) if !id.is_empty() => Ok(Chooser::ByAip(id.to_owned())),
                _ => Err(format!(
                    "unknown chooser {s:?}; expected latest, first or aip:ID"
                )),
            },
        }
    }
}

/// One level-2 dissemination.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Disseminated {
    /// The `args` of the request: one fragment id, or several comma-joined.
    pub fragment_id: String,
    pub service: String,
    pub media_type: String,
    pub bytes: Bytes,
}

/// Scripted OpenURL client for the level-1 and level-2 handshakes.
#[derive(Clone)]
pub struct OpenUrlAgent {
    transport: Arc<dyn Transport>,
    base_url: String,
    retry: RetryPolicy,
    requester: Option<Entity>,
    referrer: Option<Entity>,
}

impl std::fmt::Debug for OpenUrlAgent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OpenUrlAgent")
            .field("base_url", &self.base_url)
            .finish_non_exhaustive()
    }
}

fn malformed(msg: impl Into<String>) -> HarvestError {
    HarvestError::Malformed(msg.into())
}

impl OpenUrlAgent {
    pub fn new(transport: Arc<dyn Transport>, base_url: impl Into<String>) -> Self {
        Self {
            transport,
            base_url: base_url.into(),
            retry: RetryPolicy::default(),
            requester: None,
            referrer: None,
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Sent with the bootstrap request; resolvers carry it forward.
    pub fn with_requester(mut self, requester: Entity) -> Self {
        self.requester = Some(requester);
        self
    }

    pub fn with_referrer(mut self, referrer: Entity) -> Self {
        self.referrer = Some(referrer);
        self
    }

    pub fn url_for(&self, co: &ContextObject) -> Result<String, HarvestError> {
        let kev = serialize_kev(co).map_err(|e| malformed(e.to_string()))?;
        Ok(format!("{}?{kev}", self.base_url))
    }

    /// Raw GET of one ContextObject.
    pub fn send(&self, co: &ContextObject) -> Result<HttpResponse, HarvestError> {
        let url = self.url_for(co)?;
        Ok(self.retry.get(self.transport.as_ref(), &url)?)
    }

    fn expect_ok(&self, co: &ContextObject) -> Result<HttpResponse, HarvestError> {
        let response = self.send(co)?;
        if response.status != 200 {
            return Err(HarvestError::Resolver {
                status: response.status,
                message: String::from_utf8_lossy(&response.body).trim().to_owned(),
            });
        }
        Ok(response)
    }

    pub fn container(&self, co: &ContextObject) -> Result<Vec<ContextObject>, HarvestError> {
        let response = self.expect_ok(co)?;
        parse_container(&response.body).map_err(|e| malformed(e.to_string()))
    }

    pub fn bootstrap_request(&self, ci_id: &str, service: &str) -> ContextObject {
        let mut co = ContextObject::new(Entity::identified(ci_id));
        co.service_type = Some(Entity::identified(service));
        co.requester = self.requester.clone();
        co.referrer = self.referrer.clone();
        co
    }

    /// Bootstrap, then the AIP choice unless the resolver skipped it.
    /// Returns the offers of the selection step.
    fn selection_offers(
        &self,
        ci_id: &str,
        service: &str,
        chooser: &Chooser,
    ) -> Result<Vec<ContextObject>, HarvestError> {
        let offers = self.container(&self.bootstrap_request(ci_id, service))?;
        if offers.is_empty() {
            return Err(HarvestError::EmptyChoice("bootstrap"));
        }
        let is_aip_step = offers.iter().all(|co| co.service_id() == Some(service));
        if !is_aip_step {
            return Ok(offers);
        }
        let chosen = chooser
            .choose(&offers)
            .ok_or(HarvestError::EmptyChoice("AIP"))?;
        self.container(chosen)
    }

    /// Level 1: bootstrap, choose an AIP, choose a format, receive the DIP.
    /// Without `format` the native format is preferred, else the first offer.
    pub fn order_dip(
        &self,
        ci_id: &str,
        chooser: &Chooser,
        format: Option<&str>,
    ) -> Result<DipDocument, HarvestError> {
        let offers = self.selection_offers(ci_id, SVC_DIP, chooser)?;
        let pick = match format {
            Some(format) => offers
                .iter()
                .find(|co| co.service_id() == Some(format))
                .ok_or_else(|| HarvestError::NotOffered(format.to_owned()))?,
            None => offers
                .iter()
                .find(|co| co.service_id() == Some(NATIVE_FORMAT_URI))
                .or(offers.first())
                .ok_or(HarvestError::EmptyChoice("format"))?,
        };
        let response = self.expect_ok(pick)?;
        DipDocument::from_xml(response.body).map_err(Into::into)
    }

    /// Level 2: fetches every offered dissemination whose service URI
    /// contains `service_filter`, ordered by fragment id.
    pub fn disseminate(
        &self,
        ci_id: &str,
        chooser: &Chooser,
        service_filter: &str,
    ) -> Result<Vec<Disseminated>, HarvestError> {
        let offers = self.selection_offers(ci_id, SVC_BOOTSTRAP, chooser)?;
        let targets: Vec<&ContextObject> = offers
            .iter()
            .filter(|co| co.service_id().is_some_and(|s| s.contains(service_filter)))
            .collect();
        let mut results = Vec::with_capacity(targets.len());
        for batch in targets.chunks(FETCH_BATCH) {
            let fetched: Vec<Result<Disseminated, HarvestError>> = std::thread::scope(|scope| {
                let handles: Vec<_> = batch
                    .iter()
                    .map(|co| scope.spawn(move || self.fetch_dissemination(co)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("dissemination fetch panicked"))
                    .collect()
            });
            for item in fetched {
                results.push(item?);
            }
        }
        results.sort_by(|a, b| {
            (a.fragment_id.as_str(), a.service.as_str())
                .cmp(&(b.fragment_id.as_str(), b.service.as_str()))
        });
        Ok(results)
    }

    fn fetch_dissemination(&self, co: &ContextObject) -> Result<Disseminated, HarvestError> {
        let fragment_id = co.pathways().and_then(|k| k.args).unwrap_or_default();
        let response = self.send(co)?;
        if !(200..300).contains(&response.status) {
            return Err(HarvestError::Dissemination {
                status: response.status,
                fragment: fragment_id,
            });
        }
        Ok(Disseminated {
            fragment_id,
            service: co.service_id().unwrap_or_default().to_owned(),
            media_type: response
                .content_type
                .unwrap_or_else(|| "application/octet-stream".to_owned()),
            bytes: response.body,
        })
    }
}
