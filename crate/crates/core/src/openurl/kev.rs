//! Key/Encoded-Value transport of ContextObjects.
//!
//! Per entity prefix `p`: `p_id` (identifier), `p_val_fmt` plus `p.KEY`
//! pairs (by-value metadata), `p_ref_fmt` and `p_ref` (by-reference
//! metadata), `p_dat` (private data).

use percent_encoding::{AsciiSet, NON_ALPHANUMERIC, percent_decode_str, utf8_percent_encode};

use super::context::{
    ByReference, ByValue, ContextObject, Entity, EntityRole, URL_CTX_FMT, URL_VER,
};

/// Everything except RFC 3986 unreserved characters is escaped.
const KEV_ESCAPE: &AsciiSet = &NON_ALPHANUMERIC
    .remove(b'-')
    .remove(b'.')
    .remove(b'_')
    .remove(b'~');

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum KevError {
    #[error("malformed KEV: {0}")]
    Malformed(String),
    #[error("ContextObject cannot be expressed as KEV: {0}")]
    Unrepresentable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Id,
    ValFmt,
    RefFmt,
    Ref,
    Dat,
}

#[derive(Debug, PartialEq, Eq)]
enum KeyClass<'a> {
    UrlVer,
    UrlCtxFmt,
    Singleton(EntityRole, Slot),
    Metadata(EntityRole, &'a str),
    Extra,
}

fn classify(key: &str) -> KeyClass<'_> {
    match key {
        "url_ver" => return KeyClass::UrlVer,
        "url_ctx_fmt" => return KeyClass::UrlCtxFmt,
        _ => {}
    }
    for role in EntityRole::ALL {
        let Some(rest) = key.strip_prefix(role.kev_prefix()) else {
            continue;
        };
        if let Some(meta_key) = rest.strip_prefix('.') {
            return KeyClass::Metadata(role, meta_key);
        }
        let slot = match rest {
            "_id" => Slot::Id,
            "_val_fmt" => Slot::ValFmt,
            "_ref_fmt" => Slot::RefFmt,
            "_ref" => Slot::Ref,
            "_dat" => Slot::Dat,
            _ => continue,
        };
        return KeyClass::Singleton(role, slot);
    }
    KeyClass::Extra
}

fn decode(raw: &str) -> Result<String, KevError> {
    let bytes = raw.as_bytes();
    for (i, b) in bytes.iter().enumerate() {
        if *b == b'%'
            && !(i + 2 < bytes.len()
                && bytes[i + 1].is_ascii_hexdigit()
                && bytes[i + 2].is_ascii_hexdigit())
        {
            return Err(KevError::Malformed(format!(
                "bad percent escape in {raw:?}"
            )));
        }
    }
    let plus_decoded = raw.replace('+', " ");
    percent_decode_str(&plus_decoded)
        .decode_utf8()
        .map(|s| s.into_owned())
        .map_err(|_| KevError::Malformed(format!("{raw:?} is not UTF-8")))
}

pub fn encode_component(value: &str) -> String {
    utf8_percent_encode(value, KEV_ESCAPE).to_string()
}

/// Splits a query string into decoded pairs. Empty segments are skipped; a
/// segment without `=` has an empty value.
pub fn decode_pairs(query: &str) -> Result<Vec<(String, String)>, KevError> {
    let query = query.strip_prefix('?').unwrap_or(query);
    query
        .split('&')
        .filter(|seg| !seg.is_empty())
        .map(|seg| {
            let (k, v) = seg.split_once('=').unwrap_or((seg, ""));
            Ok((decode(k)?, decode(v)?))
        })
        .collect()
}

pub fn encode_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> String {
    pairs
        .into_iter()
        .map(|(k, v)| format!("{}={}", encode_component(k), encode_component(v)))
        .collect::<Vec<_>>()
        .join("&")
}

#[derive(Default)]
struct EntityDraft {
    id: Option<String>,
    val_fmt: Option<String>,
    pairs: Vec<(String, String)>,
    ref_fmt: Option<String>,
    reference: Option<String>,
    dat: Option<String>,
}

impl EntityDraft {
    fn slot(&mut self, slot: Slot) -> &mut Option<String> {
        match slot {
            Slot::Id => &mut self.id,
            Slot::ValFmt => &mut self.val_fmt,
            Slot::RefFmt => &mut self.ref_fmt,
            Slot::Ref => &mut self.reference,
            Slot::Dat => &mut self.dat,
        }
    }

    fn finish(self, role: EntityRole) -> Result<Option<Entity>, KevError> {
        let p = role.kev_prefix();
        if self.val_fmt.is_none() && !self.pairs.is_empty() {
            return Err(KevError::Malformed(format!(
                "{p}.* keys without {p}_val_fmt"
            )));
        }
        let by_reference = match (self.ref_fmt, self.reference) {
            (Some(format), Some(location)) => Some(ByReference { format, location }),
            (None, None) => None,
            _ => {
                return Err(KevError::Malformed(format!(
                    "{p}_ref and {p}_ref_fmt must appear together"
                )));
            }
        };
        let entity = Entity {
            identifier: self.id,
            by_value: self.val_fmt.map(|format| ByValue {
                format,
                pairs: self.pairs,
            }),
            by_reference,
            private_data: self.dat,
        };
        Ok((!entity.is_empty()).then_some(entity))
    }
}

pub fn parse_kev(query: &str) -> Result<ContextObject, KevError> {
    let mut drafts: [EntityDraft; 6] = Default::default();
    let mut extras = Vec::new();
    let mut url_ver_seen = false;
    let mut url_ctx_fmt_seen = false;
    for (key, value) in decode_pairs(query)? {
        match classify(&key) {
            KeyClass::UrlVer | KeyClass::UrlCtxFmt => {
                let (seen, expected) = if key == "url_ver" {
                    (&mut url_ver_seen, URL_VER)
                } else {
                    (&mut url_ctx_fmt_seen, URL_CTX_FMT)
                };
                if std::mem::replace(seen, true) {
                    return Err(KevError::Malformed(format!("{key} repeated")));
                }
                if value != expected {
                    return Err(KevError::Malformed(format!("unsupported {key}={value}")));
                }
            }
            KeyClass::Singleton(role, slot) => {
                let draft = &mut drafts[role as usize];
                if draft.slot(slot).replace(value).is_some() {
                    return Err(KevError::Malformed(format!("{key} repeated")));
                }
            }
            KeyClass::Metadata(role, meta_key) => {
                let meta_key = meta_key.to_owned();
                drafts[role as usize].pairs.push((meta_key, value));
            }
            KeyClass::Extra => extras.push((key, value)),
        }
    }
    let mut entities = EntityRole::ALL
        .into_iter()
        .zip(drafts)
        .map(|(role, draft)| draft.finish(role));
    let referent = entities
        .next()
        .expect("six roles")?
        .ok_or_else(|| KevError::Malformed("no referent".into()))?;
    let mut co = ContextObject::new(referent);
    co.extras = extras;
    for (role, entity) in EntityRole::ALL[1..].iter().zip(entities) {
        *co.entity_mut(*role) = entity?;
    }
    Ok(co)
}

pub fn serialize_kev(co: &ContextObject) -> Result<String, KevError> {
    let mut pairs: Vec<(String, &str)> = vec![
        ("url_ver".into(), URL_VER),
        ("url_ctx_fmt".into(), URL_CTX_FMT),
    ];
    for role in EntityRole::ALL {
        let Some(entity) = co.entity(role) else {
            continue;
        };
        let p = role.kev_prefix();
        if entity.is_empty() {
            return Err(KevError::Unrepresentable(format!(
                "{p} entity has no descriptors"
            )));
        }
        if let Some(id) = &entity.identifier {
            pairs.push((format!("{p}_id"), id));
        }
        if let Some(bv) = &entity.by_value {
            pairs.push((format!("{p}_val_fmt"), &bv.format));
            for (k, v) in &bv.pairs {
                pairs.push((format!("{p}.{k}"), v));
            }
        }
        if let Some(br) = &entity.by_reference {
            pairs.push((format!("{p}_ref_fmt"), &br.format));
            pairs.push((format!("{p}_ref"), &br.location));
        }
        if let Some(dat) = &entity.private_data {
            pairs.push((format!("{p}_dat"), dat));
        }
    }
    for (k, v) in &co.extras {
        if k.is_empty() || classify(k) != KeyClass::Extra {
            return Err(KevError::Unrepresentable(format!(
                "extra key {k:?} collides with ContextObject keys"
            )));
        }
        pairs.push((k.clone(), v));
    }
    Ok(encode_pairs(pairs.iter().map(|(k, v)| (k.as_str(), *v))))
}
