use std::sync::Arc;

use bytes::Bytes;
use serde::{Deserialize, Serialize};

use super::container::write_container;
use super::context::{
    ContextObject, Entity, PathwaysKeys, SVC_BOOTSTRAP, SVC_DIP, SVC_GET_DATASTREAM,
};
use super::kev::{KevError, parse_kev};
use crate::archive::{Aip, Archive, CiId, FragmentId, Snapshot};
use crate::packaging::{DIP_FORMAT_URI_PREFIX, DipDocument, DipFormat, Packager};
use crate::time::{format_datestamp, parse_datestamp};

/// How the referent's AIP is named in post-bootstrap requests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum VersionKeyMode {
    /// `rft.aip` carries the AIP identifier.
    #[default]
    Aip,
    /// `rft.version` carries a value unique across the repository (the AIP
    /// identifier).
    VersionGlobal,
    /// `rft.version` carries the creation datestamp, unique only among the
    /// AIPs of one CI.
    VersionScoped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AutoSelect {
    #[default]
    Off,
    /// Bootstrap requests skip AIP disambiguation and use the latest AIP.
    Latest,
}

#[derive(Debug, Clone, Default)]
pub struct ResolverSettings {
    pub version_key_mode: VersionKeyMode,
    /// In scoped mode, break datestamp collisions by the greatest AIP id
    /// instead of failing with `AmbiguousVersion`.
    pub version_tiebreak: bool,
    pub auto_select: AutoSelect,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ResolveError {
    #[error(transparent)]
    Kev(#[from] KevError),
    #[error("referent has no identifier")]
    MissingReferentId,
    #[error("request has no service type identifier")]
    MissingServiceType,
    #[error("referent lacks the {0} key")]
    MissingReferentKey(&'static str),
    #[error("{0} keys are not accepted in this resolver's version-key mode")]
    ModeMismatch(&'static str),
    #[error("no content is known under {0}")]
    UnknownReferent(String),
    #[error("unknown AIP {0}")]
    UnknownAip(String),
    #[error("unknown version {0}")]
    UnknownVersion(String),
    #[error("version {0} matches more than one AIP")]
    AmbiguousVersion(String),
    #[error("AIP {aip} belongs to {actual}, not {requested}")]
    AipCiMismatch {
        aip: String,
        requested: String,
        actual: String,
    },
    #[error("DIP format {0} is not offered")]
    UnknownFormat(String),
    #[error("service {0} is not offered")]
    UnknownService(String),
    #[error("AIP has no datastream {0}")]
    UnknownFragment(String),
    #[error("invalid service arguments: {0}")]
    BadArguments(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl ResolveError {
    pub fn http_status(&self) -> u16 {
        match self {
            ResolveError::UnknownReferent(_)
            | ResolveError::UnknownAip(_)
            | ResolveError::UnknownVersion(_)
            | ResolveError::UnknownFragment(_) => 404,
            ResolveError::AmbiguousVersion(_) => 409,
            ResolveError::UnknownFormat(_) | ResolveError::UnknownService(_) => 501,
            ResolveError::Internal(_) => 500,
            _ => 400,
        }
    }
}

/// A MIME-typed dissemination.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dissemination {
    pub media_type: String,
    pub body: Bytes,
}

/// A Level-2 service over the datastreams of one AIP.
pub trait DisseminationService: Send + Sync {
    fn service_uri(&self) -> &str;

    /// The fragment groups this service can be requested for; one
    /// ContextObject is offered per group.
    fn targets(&self, aip: &Aip) -> Vec<Vec<FragmentId>>;

    fn disseminate(
        &self,
        aip: &Aip,
        fragments: &[FragmentId],
        service_args: &[(String, String)],
    ) -> Result<Dissemination, ResolveError>;
}

/// Returns a datastream unchanged with its stored media type.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityService;

impl DisseminationService for IdentityService {
    fn service_uri(&self) -> &str {
        SVC_GET_DATASTREAM
    }

    fn targets(&self, aip: &Aip) -> Vec<Vec<FragmentId>> {
        aip.datastreams()
            .iter()
            .map(|ds| vec![ds.fragment_id.clone()])
            .collect()
    }

    fn disseminate(
        &self,
        aip: &Aip,
        fragments: &[FragmentId],
        _service_args: &[(String, String)],
    ) -> Result<Dissemination, ResolveError> {
        let [fragment] = fragments else {
            return Err(ResolveError::BadArguments(
                "getDatastream takes exactly one fragment".into(),
            ));
        };
        let ds = aip
            .datastream(fragment.as_str())
            .ok_or_else(|| ResolveError::UnknownFragment(fragment.to_string()))?;
        Ok(Dissemination {
            media_type: ds.media_type.to_string(),
            body: ds.content.clone(),
        })
    }
}

/// Context-sensitivity hook: decides which services are offered for a
/// request, with the whole ContextObject (requester, referrer, ...) in view.
pub trait ContextPolicy: Send + Sync {
    fn offers(&self, request: &ContextObject, service_uri: &str) -> bool;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PassThrough;

impl ContextPolicy for PassThrough {
    fn offers(&self, _request: &ContextObject, _service_uri: &str) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Resolution {
    Container(Vec<ContextObject>),
    Dip(DipDocument),
    Dissemination(Dissemination),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpReply {
    pub status: u16,
    pub content_type: String,
    pub body: Bytes,
}

impl Resolution {
    pub fn into_http(self) -> HttpReply {
        let (content_type, body) = match self {
            Resolution::Container(objects) => (
                "application/xml".to_owned(),
                Bytes::from(write_container(&objects)),
            ),
            Resolution::Dip(dip) => ("application/xml".to_owned(), dip.xml),
            Resolution::Dissemination(d) => (d.media_type, d.body),
        };
        HttpReply {
            status: 200,
            content_type,
            body,
        }
    }
}

/// The `(key, value)` naming `aip` in post-bootstrap requests.
pub fn version_key(aip: &Aip, mode: VersionKeyMode) -> (&'static str, String) {
    match mode {
        VersionKeyMode::Aip => ("aip", aip.aip_id().to_string()),
        VersionKeyMode::VersionGlobal => ("version", aip.aip_id().to_string()),
        VersionKeyMode::VersionScoped => ("version", format_datestamp(aip.created())),
    }
}

/// Finds the AIP named by a version value, without consulting the request.
pub fn resolve_version_key(
    snapshot: &Snapshot,
    ci: &CiId,
    value: &str,
    mode: VersionKeyMode,
    tiebreak: bool,
) -> Result<Arc<Aip>, ResolveError> {
    let unknown = || ResolveError::UnknownVersion(value.to_owned());
    match mode {
        VersionKeyMode::Aip | VersionKeyMode::VersionGlobal => {
            let aip = snapshot.find_aip(value).ok_or_else(unknown)?;
            if aip.ci_id() != ci {
                return Err(ResolveError::AipCiMismatch {
                    aip: value.to_owned(),
                    requested: ci.to_string(),
                    actual: aip.ci_id().to_string(),
                });
            }
            Ok(aip.clone())
        }
        VersionKeyMode::VersionScoped => {
            let created = parse_datestamp(value).map_err(|_| unknown())?;
            let matches: Vec<_> = snapshot
                .list_aips_for_ci(ci)
                .iter()
                .filter(|a| a.created() == created)
                .collect();
            match matches[..] {
                [] => Err(unknown()),
                [one] => Ok(one.clone()),
                // Sorted by (created, aip_id), so the last is the greatest id.
                [.., last] if tiebreak => Ok(last.clone()),
                _ => Err(ResolveError::AmbiguousVersion(value.to_owned())),
            }
        }
    }
}

/// The OpenURL resolver for both conformance levels.
#[derive(Clone)]
pub struct Resolver {
    archive: Arc<Archive>,
    packager: Arc<Packager>,
    services: Vec<Arc<dyn DisseminationService>>,
    policy: Arc<dyn ContextPolicy>,
    settings: ResolverSettings,
}

impl std::fmt::Debug for Resolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let services: Vec<_> = self.services.iter().map(|s| s.service_uri()).collect();
        f.debug_struct("Resolver")
            .field("services", &services)
            .field("settings", &self.settings)
            .finish_non_exhaustive()
    }
}

impl Resolver {
    /// A resolver offering the identity service and a pass-through policy.
    pub fn new(archive: Arc<Archive>, packager: Arc<Packager>, settings: ResolverSettings) -> Self {
        Self {
            archive,
            packager,
            services: vec![Arc::new(IdentityService)],
            policy: Arc::new(PassThrough),
            settings,
        }
    }

    /// Registers another dissemination service. Its URI must not clash with
    /// the reserved bootstrap URIs, a DIP format, or an existing service.
    pub fn with_service(mut self, service: Arc<dyn DisseminationService>) -> Result<Self, String> {
        let uri = service.service_uri();
        if !uri.starts_with("info:pathways/svc/") || uri == SVC_DIP || uri == SVC_BOOTSTRAP {
            return Err(format!("{uri} is not a usable dissemination service URI"));
        }
        if self.services.iter().any(|s| s.service_uri() == uri) {
            return Err(format!("{uri} is already registered"));
        }
        self.services.push(service);
        Ok(self)
    }

    pub fn with_policy(mut self, policy: Arc<dyn ContextPolicy>) -> Self {
        self.policy = policy;
        self
    }

    pub fn settings(&self) -> &ResolverSettings {
        &self.settings
    }

    /// Parses a KEV query and resolves it into an HTTP reply.
    pub fn handle_query(&self, query: &str) -> HttpReply {
        let result = parse_kev(query)
            .map_err(ResolveError::from)
            .and_then(|co| self.resolve(&co));
        match result {
            Ok(resolution) => resolution.into_http(),
            Err(err) => HttpReply {
                status: err.http_status(),
                content_type: "text/plain; charset=utf-8".into(),
                body: Bytes::from(format!("{err}\n")),
            },
        }
    }

    pub fn resolve(&self, co: &ContextObject) -> Result<Resolution, ResolveError> {
        let svc = co.service_id().ok_or(ResolveError::MissingServiceType)?;
        let keyed = co.pathways().is_some_and(|k| k.has_key());
        match svc {
            SVC_DIP | SVC_BOOTSTRAP => {
                let level2 = svc == SVC_BOOTSTRAP;
                if keyed {
                    let snapshot = self.archive.snapshot();
                    let aip = self.referenced_aip(&snapshot, co)?;
                    Ok(Resolution::Container(self.selection(co, &aip, level2)))
                } else if self.settings.auto_select == AutoSelect::Latest {
                    let ci = self.referent_ci(co)?;
                    let aip = self
                        .archive
                        .latest_aip_for_ci(&ci, None)
                        .map_err(|_| ResolveError::UnknownReferent(ci.to_string()))?;
                    let keyed = self.keyed_request(co, &aip);
                    Ok(Resolution::Container(self.selection(&keyed, &aip, level2)))
                } else {
                    Ok(Resolution::Container(self.bootstrap(co)?))
                }
            }
            _ => {
                if let Some(format) = self.packager.registry().by_uri(svc) {
                    return self.order_dip(co, format).map(Resolution::Dip);
                }
                if let Some(service) = self.services.iter().find(|s| s.service_uri() == svc) {
                    return self
                        .disseminate(co, service.as_ref())
                        .map(Resolution::Dissemination);
                }
                if svc.starts_with(DIP_FORMAT_URI_PREFIX) {
                    Err(ResolveError::UnknownFormat(svc.to_owned()))
                } else {
                    Err(ResolveError::UnknownService(svc.to_owned()))
                }
            }
        }
    }

    fn referent_ci(&self, co: &ContextObject) -> Result<CiId, ResolveError> {
        let id = co
            .referent
            .identifier
            .as_deref()
            .ok_or(ResolveError::MissingReferentId)?;
        CiId::new(id).map_err(|_| ResolveError::UnknownReferent(id.to_owned()))
    }

    /// Copy of `co` whose referent names `aip` by the configured key.
    fn keyed_request(&self, co: &ContextObject, aip: &Aip) -> ContextObject {
        let (key, value) = version_key(aip, self.settings.version_key_mode);
        let mut keys = PathwaysKeys::default();
        match key {
            "aip" => keys.aip = Some(value),
            _ => keys.version = Some(value),
        }
        let mut out = co.clone();
        out.referent.by_value = Some(keys.to_by_value());
        out
    }

    /// One ContextObject per AIP of the referent CI; every other entity is
    /// carried over unchanged.
    pub fn bootstrap(&self, co: &ContextObject) -> Result<Vec<ContextObject>, ResolveError> {
        let ci = self.referent_ci(co)?;
        let snapshot = self.archive.snapshot();
        let aips = snapshot.list_aips_for_ci(&ci);
        if aips.is_empty() {
            return Err(ResolveError::UnknownReferent(ci.to_string()));
        }
        Ok(aips.iter().map(|aip| self.keyed_request(co, aip)).collect())
    }

    fn referenced_aip(
        &self,
        snapshot: &Snapshot,
        co: &ContextObject,
    ) -> Result<Arc<Aip>, ResolveError> {
        let ci = self.referent_ci(co)?;
        let keys = co.pathways().unwrap_or_default();
        let mode = self.settings.version_key_mode;
        let value = match (mode, &keys.aip, &keys.version) {
            (VersionKeyMode::Aip, _, Some(_)) => {
                return Err(ResolveError::ModeMismatch("rft.version"));
            }
            (VersionKeyMode::Aip, Some(aip), None) => {
                let found = snapshot
                    .find_aip(aip)
                    .ok_or_else(|| ResolveError::UnknownAip(aip.clone()))?;
                if found.ci_id() != &ci {
                    return Err(ResolveError::AipCiMismatch {
                        aip: aip.clone(),
                        requested: ci.to_string(),
                        actual: found.ci_id().to_string(),
                    });
                }
                return Ok(found.clone());
            }
            (VersionKeyMode::Aip, None, None) => {
                return Err(ResolveError::MissingReferentKey("rft.aip"));
            }
            (_, Some(_), _) => return Err(ResolveError::ModeMismatch("rft.aip")),
            (_, None, Some(version)) => version,
            (_, None, None) => return Err(ResolveError::MissingReferentKey("rft.version")),
        };
        resolve_version_key(snapshot, &ci, value, mode, self.settings.version_tiebreak)
    }

    fn selection(&self, co: &ContextObject, aip: &Aip, level2: bool) -> Vec<ContextObject> {
        if level2 {
            self.dissemination_choices(co, aip)
        } else {
            self.format_choices(co)
        }
    }

    /// One ContextObject per offered DIP format.
    fn format_choices(&self, co: &ContextObject) -> Vec<ContextObject> {
        self.packager
            .registry()
            .iter()
            .filter(|f| self.policy.offers(co, &f.format_uri))
            .map(|f| {
                let mut out = co.clone();
                out.service_type = Some(Entity::identified(&f.format_uri));
                out
            })
            .collect()
    }

    /// One ContextObject per (service, fragment group).
    fn dissemination_choices(&self, co: &ContextObject, aip: &Aip) -> Vec<ContextObject> {
        let keys = co.pathways().unwrap_or_default();
        let mut out = Vec::new();
        for service in &self.services {
            if !self.policy.offers(co, service.service_uri()) {
                continue;
            }
            for fragments in service.targets(aip) {
                let mut next = co.clone();
                let keys = PathwaysKeys {
                    args: Some(PathwaysKeys::join_args(&fragments)),
                    ..keys.clone()
                };
                next.referent.by_value = Some(keys.to_by_value());
                next.service_type = Some(Entity::identified(service.service_uri()));
                out.push(next);
            }
        }
        out
    }

    fn order_dip(
        &self,
        co: &ContextObject,
        format: &DipFormat,
    ) -> Result<DipDocument, ResolveError> {
        if !self.policy.offers(co, &format.format_uri) {
            return Err(ResolveError::UnknownFormat(format.format_uri.clone()));
        }
        let snapshot = self.archive.snapshot();
        let aip = self.referenced_aip(&snapshot, co)?;
        self.packager
            .derive_dip(&aip, &format.format_uri)
            .map_err(|e| ResolveError::Internal(e.to_string()))
    }

    fn disseminate(
        &self,
        co: &ContextObject,
        service: &dyn DisseminationService,
    ) -> Result<Dissemination, ResolveError> {
        if !self.policy.offers(co, service.service_uri()) {
            return Err(ResolveError::UnknownService(
                service.service_uri().to_owned(),
            ));
        }
        let snapshot = self.archive.snapshot();
        let aip = self.referenced_aip(&snapshot, co)?;
        let keys = co.pathways().unwrap_or_default();
        if keys.args.is_none() {
            return Err(ResolveError::MissingReferentKey("rft.args"));
        }
        let fragments = keys
            .fragments()
            .into_iter()
            .map(|f| match aip.datastream(f) {
                Some(ds) => Ok(ds.fragment_id.clone()),
                None => Err(ResolveError::UnknownFragment(f.to_owned())),
            })
            .collect::<Result<Vec<_>, _>>()?;
        if fragments.is_empty() {
            return Err(ResolveError::BadArguments(
                "rft.args names no fragment".into(),
            ));
        }
        let service_args = co
            .service_type
            .as_ref()
            .and_then(|s| s.by_value.as_ref())
            .map(|bv| bv.pairs.clone())
            .unwrap_or_default();
        service.disseminate(&aip, &fragments, &service_args)
    }
}
