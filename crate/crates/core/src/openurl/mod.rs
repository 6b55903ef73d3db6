//! OpenURL resolver: KEV ContextObjects over HTTP GET, DIP ordering
//! (conformance level 1) and datastream dissemination (level 2).
//!
//! Level 1 handshake:
//!
//! 1. `rft_id=CI&svc_id=info:pathways/svc/dip` returns one ContextObject per
//!    AIP of the CI, each naming its AIP with `rft.aip` (or `rft.version`).
//! 2. Sending one of those back returns one ContextObject per DIP format,
//!    with `svc_id` set to the format URI.
//! 3. Sending one of those back returns the DIP.
//!
//! Level 2 is the same with `info:pathways/svc/bootstrap`; step 2 offers one
//! ContextObject per dissemination service and fragment (`rft.args`), and
//! step 3 returns the MIME-typed dissemination.

mod container;
mod context;
mod kev;
mod resolver;

pub use container::{ContainerError, parse_container, write_container};
pub use context::{
    ByReference, ByValue, ContextObject, Entity, EntityRole, PATHWAYS_FMT, PathwaysKeys,
    SVC_BOOTSTRAP, SVC_DIP, SVC_GET_DATASTREAM, URL_CTX_FMT, URL_VER,
};
pub use kev::{KevError, decode_pairs, encode_component, encode_pairs, parse_kev, serialize_kev};
pub use resolver::{
    AutoSelect, ContextPolicy, Dissemination, DisseminationService, HttpReply, IdentityService,
    PassThrough, Resolution, ResolveError, Resolver, ResolverSettings, VersionKeyMode,
    resolve_version_key, version_key,
};

use crate::archive::{Aip, FragmentId};
use crate::packaging::ReferenceLinker;

/// Builds the level-2 identity-service request for a datastream, used as the
/// payload location of by-reference DIP formats.
#[derive(Debug, Clone)]
pub struct IdentityLinker {
    base_url: String,
    mode: VersionKeyMode,
}

impl IdentityLinker {
    pub fn new(base_url: impl Into<String>, mode: VersionKeyMode) -> Self {
        Self {
            base_url: base_url.into(),
            mode,
        }
    }

    pub fn request(&self, aip: &Aip, fragment_id: &FragmentId) -> ContextObject {
        let (key, value) = version_key(aip, self.mode);
        let mut keys = PathwaysKeys {
            args: Some(fragment_id.to_string()),
            ..PathwaysKeys::default()
        };
        match key {
            "aip" => keys.aip = Some(value),
            _ => keys.version = Some(value),
        }
        let mut referent = Entity::identified(aip.ci_id().as_str());
        referent.by_value = Some(keys.to_by_value());
        let mut co = ContextObject::new(referent);
        co.service_type = Some(Entity::identified(SVC_GET_DATASTREAM));
        co
    }
}

impl ReferenceLinker for IdentityLinker {
    fn dissemination_url(&self, aip: &Aip, fragment_id: &FragmentId) -> String {
        let query = serialize_kev(&self.request(aip, fragment_id))
            .expect("identity requests are always representable");
        format!("{}?{query}", self.base_url)
    }
}
