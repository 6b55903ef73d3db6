//! XML container of ContextObjects returned by the bootstrap and selection
//! steps.
//!
//! ```xml
//! <context-objects count="2">
//!   <context-object>
//!     <referent>
//!       <identifier>urn:isbn:90-70002-04-3</identifier>
//!       <metadata-by-val format="info:ofi/fmt:kev:mtx:pathways">aip=...</metadata-by-val>
//!     </referent>
//!     <service-type><identifier>info:pathways/svc/dip</identifier></service-type>
//!   </context-object>
//!   ...
//! </context-objects>
//! ```
//!
//! Entities may also carry `<metadata-by-ref format=".." location=".."/>` and
//! `<private-data>`. KEV extras are not part of the container.

use super::context::{ByReference, ByValue, ContextObject, Entity, EntityRole};
use super::kev::{decode_pairs, encode_pairs};
use crate::xml::{self, Element, XmlWriter};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed ContextObject container: {0}")]
pub struct ContainerError(pub String);

fn write_entity(w: &mut XmlWriter, name: &str, entity: &Entity) {
    w.open(name, &[]);
    if let Some(id) = &entity.identifier {
        w.leaf("identifier", &[], id);
    }
    if let Some(bv) = &entity.by_value {
        let kev = encode_pairs(bv.pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())));
        w.leaf("metadata-by-val", &[("format", &bv.format)], &kev);
    }
    if let Some(br) = &entity.by_reference {
        w.empty(
            "metadata-by-ref",
            &[("format", &br.format), ("location", &br.location)],
        );
    }
    if let Some(dat) = &entity.private_data {
        w.leaf("private-data", &[], dat);
    }
    w.close(name);
}

pub fn write_container(objects: &[ContextObject]) -> String {
    let mut w = XmlWriter::with_declaration();
    let count = objects.len().to_string();
    w.open("context-objects", &[("count", &count)]);
    for co in objects {
        w.open("context-object", &[]);
        for role in EntityRole::ALL {
            if let Some(entity) = co.entity(role) {
                write_entity(&mut w, role.xml_name(), entity);
            }
        }
        w.close("context-object");
    }
    w.close("context-objects");
    w.finish()
}

fn err(msg: impl Into<String>) -> ContainerError {
    ContainerError(msg.into())
}

fn read_entity(el: &Element) -> Result<Entity, ContainerError> {
    let mut entity = Entity::default();
    for child in el.elements() {
        let dup = |present: bool| {
            if present {
                Err(err(format!("<{}> repeated in <{}>", child.name, el.name)))
            } else {
                Ok(())
            }
        };
        match child.name.as_str() {
            "identifier" => {
                dup(entity.identifier.is_some())?;
                entity.identifier = Some(child.text());
            }
            "metadata-by-val" => {
                dup(entity.by_value.is_some())?;
                let format = child
                    .attr("format")
                    .ok_or_else(|| err("metadata-by-val without format"))?;
                let pairs = decode_pairs(&child.text()).map_err(|e| err(e.to_string()))?;
                entity.by_value = Some(ByValue {
                    format: format.to_owned(),
                    pairs,
                });
            }
            "metadata-by-ref" => {
                dup(entity.by_reference.is_some())?;
                let attr = |name| {
                    child
                        .attr(name)
                        .map(str::to_owned)
                        .ok_or_else(|| err(format!("metadata-by-ref without {name}")))
                };
                entity.by_reference = Some(ByReference {
                    format: attr("format")?,
                    location: attr("location")?,
                });
            }
            "private-data" => {
                dup(entity.private_data.is_some())?;
                entity.private_data = Some(child.text());
            }
            other => return Err(err(format!("unexpected <{other}> in <{}>", el.name))),
        }
    }
    if entity.is_empty() {
        return Err(err(format!("<{}> has no descriptors", el.name)));
    }
    Ok(entity)
}

pub fn parse_container(input: &[u8]) -> Result<Vec<ContextObject>, ContainerError> {
    let root = xml::parse(input).map_err(|e| err(e.0))?;
    if !root.is(None, "context-objects") {
        return Err(err(format!("root element is <{}>", root.name)));
    }
    let mut objects = Vec::new();
    for el in root.elements() {
        if el.name != "context-object" {
            return Err(err(format!("unexpected <{}>", el.name)));
        }
        let mut referent = None;
        let mut co = ContextObject::default();
        for child in el.elements() {
            let role = EntityRole::ALL
                .into_iter()
                .find(|r| r.xml_name() == child.name)
                .ok_or_else(|| err(format!("unexpected <{}>", child.name)))?;
            let entity = read_entity(child)?;
            let slot = if role == EntityRole::Referent {
                &mut referent
            } else {
                co.entity_mut(role)
            };
            if slot.replace(entity).is_some() {
                return Err(err(format!("<{}> repeated", child.name)));
            }
        }
        co.referent = referent.ok_or_else(|| err("context-object without referent"))?;
        objects.push(co);
    }
    let count: usize = root
        .attr("count")
        .and_then(|c| c.parse().ok())
        .ok_or_else(|| err("missing or invalid count"))?;
    if count != objects.len() {
        return Err(err(format!(
            "count says {count}, found {} context objects",
            objects.len()
        )));
    }
    Ok(objects)
}
