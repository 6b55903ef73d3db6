//! The abstract ContextObject: six entities, each described by up to four
//! kinds of descriptor.

use crate::archive::FragmentId;

pub const URL_VER: &str = "Z39.88-2004";
pub const URL_CTX_FMT: &str = "info:ofi/fmt:kev:mtx:ctx";
/// By-value metadata format of the pathways referent keys.
pub const PATHWAYS_FMT: &str = "info:ofi/fmt:kev:mtx:pathways";

pub const SVC_DIP: &str = "info:pathways/svc/dip";
pub const SVC_BOOTSTRAP: &str = "info:pathways/svc/bootstrap";
pub const SVC_GET_DATASTREAM: &str = "info:pathways/svc/getDatastream";

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ByValue {
    pub format: String,
    pub pairs: Vec<(String, String)>,
}

impl ByValue {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.pairs
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ByReference {
    pub format: String,
    pub location: String,
}

/// One entity. Each descriptor kind appears at most once; at least one must
/// be present for the entity to be transportable.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Entity {
    pub identifier: Option<String>,
    pub by_value: Option<ByValue>,
    pub by_reference: Option<ByReference>,
    pub private_data: Option<String>,
}

impl Entity {
    pub fn identified(identifier: impl Into<String>) -> Self {
        Self {
            identifier: Some(identifier.into()),
            ..Self::default()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.identifier.is_none()
            && self.by_value.is_none()
            && self.by_reference.is_none()
            && self.private_data.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EntityRole {
    Referent,
    ServiceType,
    Requester,
    Referrer,
    ReferringEntity,
    Resolver,
}

impl EntityRole {
    /// Serialization order.
    pub const ALL: [EntityRole; 6] = [
        EntityRole::Referent,
        EntityRole::ServiceType,
        EntityRole::Requester,
        EntityRole::Referrer,
        EntityRole::ReferringEntity,
        EntityRole::Resolver,
    ];

    pub fn kev_prefix(self) -> &'static str {
        match self {
            EntityRole::Referent => "rft",
            EntityRole::ServiceType => "svc",
            EntityRole::Requester => "req",
            EntityRole::Referrer => "rfr",
            EntityRole::ReferringEntity => "rfe",
            EntityRole::Resolver => "res",
        }
    }

    pub fn xml_name(self) -> &'static str {
        match self {
            EntityRole::Referent => "referent",
            EntityRole::ServiceType => "service-type",
            EntityRole::Requester => "requester",
            EntityRole::Referrer => "referrer",
            EntityRole::ReferringEntity => "referring-entity",
            EntityRole::Resolver => "resolver",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ContextObject {
    pub referent: Entity,
    pub service_type: Option<Entity>,
    pub requester: Option<Entity>,
    pub referrer: Option<Entity>,
    pub referring_entity: Option<Entity>,
    pub resolver: Option<Entity>,
    /// Unrecognized KEV pairs, kept in arrival order.
    pub extras: Vec<(String, String)>,
}

impl ContextObject {
    pub fn new(referent: Entity) -> Self {
        Self {
            referent,
            ..Self::default()
        }
    }

    pub fn entity(&self, role: EntityRole) -> Option<&Entity> {
        match role {
            EntityRole::Referent => Some(&self.referent),
            EntityRole::ServiceType => self.service_type.as_ref(),
            EntityRole::Requester => self.requester.as_ref(),
            EntityRole::Referrer => self.referrer.as_ref(),
            EntityRole::ReferringEntity => self.referring_entity.as_ref(),
            EntityRole::Resolver => self.resolver.as_ref(),
        }
    }

    pub fn entity_mut(&mut self, role: EntityRole) -> &mut Option<Entity> {
        match role {
            EntityRole::Referent => unreachable!("the referent is not optional"),
            EntityRole::ServiceType => &mut self.service_type,
            EntityRole::Requester => &mut self.requester,
            EntityRole::Referrer => &mut self.referrer,
            EntityRole::ReferringEntity => &mut self.referring_entity,
            EntityRole::Resolver => &mut self.resolver,
        }
    }

    pub fn service_id(&self) -> Option<&str> {
        self.service_type.as_ref()?.identifier.as_deref()
    }

    pub fn pathways(&self) -> Option<PathwaysKeys> {
        PathwaysKeys::from_entity(&self.referent)
    }
}

/// The pathways by-value referent keys: `aip`, `version`, `args`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PathwaysKeys {
    pub aip: Option<String>,
    pub version: Option<String>,
    pub args: Option<String>,
}

impl PathwaysKeys {
    pub fn from_entity(entity: &Entity) -> Option<Self> {
        let by_value = entity
            .by_value
            .as_ref()
            .filter(|bv| bv.format == PATHWAYS_FMT)?;
        Some(Self {
            aip: by_value.get("aip").map(str::to_owned),
            version: by_value.get("version").map(str::to_owned),
            args: by_value.get("args").map(str::to_owned),
        })
    }

    pub fn has_key(&self) -> bool {
        self.aip.is_some() || self.version.is_some()
    }

    pub fn fragments(&self) -> Vec<&str> {
        self.args
            .as_deref()
            .map(|a| a.split(',').filter(|s| !s.is_empty()).collect())
            .unwrap_or_default()
    }

    pub fn to_by_value(&self) -> ByValue {
        let pairs = [
            ("aip", &self.aip),
            ("version", &self.version),
            ("args", &self.args),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_owned(), v.clone())))
        .collect();
        ByValue {
            format: PATHWAYS_FMT.to_owned(),
            pairs,
        }
    }

    pub fn join_args(fragments: &[FragmentId]) -> String {
        fragments
            .iter()
            .map(FragmentId::as_str)
            .collect::<Vec<_>>()
            .join(",")
    }
}
