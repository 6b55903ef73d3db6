//! The OAIS identifier and versioning model.
//!
//! Every ingest mints a new AIP; nothing is ever updated in place. Many AIPs
//! may share one Content Information Identifier, and the version-resolution
//! rule used by both access interfaces picks the AIP with the greatest
//! `(created, aip_id)` pair.

mod ids;
mod persist;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use bytes::Bytes;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub use ids::{AipId, CiId, FragmentId, IdentifierError, MediaType, SetSpec, is_absolute_uri};
pub(crate) use persist::sha256_hex;

use crate::time::truncate_to_seconds;

#[derive(Debug, thiserror::Error)]
pub enum ArchiveError {
    #[error("source AIP {0} does not exist")]
    UnknownSourceAip(AipId),
    #[error("source AIP {source_aip} packages {found}, not {expected}")]
    CiMismatch {
        source_aip: AipId,
        expected: CiId,
        found: CiId,
    },
    #[error("fragment identifier {0} appears more than once")]
    DuplicateFragmentId(FragmentId),
    #[error("a package needs at least one datastream")]
    EmptyPackage,
    #[error("inconsistent provenance: {0}")]
    InvalidProvenance(&'static str),
    #[error("AIP {0} does not exist")]
    UnknownAip(AipId),
    #[error("no AIP packages {0}")]
    NoSuchContent(CiId),
    #[error("invalid instance name {0:?}")]
    InvalidInstanceName(String),
    #[error("store is locked by another process ({0})")]
    Locked(String),
    #[error("corrupt store: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One Content Data Object file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Datastream {
    pub fragment_id: FragmentId,
    pub media_type: MediaType,
    pub content: Bytes,
}

impl Datastream {
    pub fn new(fragment_id: FragmentId, media_type: MediaType, content: impl Into<Bytes>) -> Self {
        Self {
            fragment_id,
            media_type,
            content: content.into(),
        }
    }

    pub fn len(&self) -> u64 {
        self.content.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.content.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChangeKind {
    Original,
    Version,
    Edition,
}

impl ChangeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ChangeKind::Original => "Original",
            ChangeKind::Version => "Version",
            ChangeKind::Edition => "Edition",
        }
    }

    pub fn parse(value: &str) -> Option<Self> {
        match value {
            "Original" => Some(ChangeKind::Original),
            "Version" => Some(ChangeKind::Version),
            "Edition" => Some(ChangeKind::Edition),
            _ => None,
        }
    }
}

/// What was done to produce an AIP, and from which source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    change_kind: ChangeKind,
    source_aip: Option<AipId>,
    note: String,
}

impl Provenance {
    pub fn new(
        change_kind: ChangeKind,
        source_aip: Option<AipId>,
        note: impl Into<String>,
    ) -> Result<Self, ArchiveError> {
        let note = note.into();
        match (change_kind, &source_aip) {
            (ChangeKind::Original, Some(_)) => {
                return Err(ArchiveError::InvalidProvenance(
                    "an Original has no source AIP",
                ));
            }
            (ChangeKind::Version | ChangeKind::Edition, None) => {
                return Err(ArchiveError::InvalidProvenance(
                    "a Version or Edition needs a source AIP",
                ));
            }
            (ChangeKind::Version | ChangeKind::Edition, Some(_)) if note.trim().is_empty() => {
                return Err(ArchiveError::InvalidProvenance(
                    "a Version or Edition needs a note describing the change",
                ));
            }
            _ => {}
        }
        Ok(Self {
            change_kind,
            source_aip,
            note,
        })
    }

    pub fn change_kind(&self) -> ChangeKind {
        self.change_kind
    }

    pub fn source_aip(&self) -> Option<&AipId> {
        self.source_aip.as_ref()
    }

    pub fn note(&self) -> &str {
        &self.note
    }
}

/// An immutable stored package.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Aip {
    aip_id: AipId,
    ci_id: CiId,
    created: DateTime<Utc>,
    datastreams: Vec<Datastream>,
    provenance: Provenance,
    sets: Vec<SetSpec>,
}

impl Aip {
    pub fn aip_id(&self) -> &AipId {
        &self.aip_id
    }

    pub fn ci_id(&self) -> &CiId {
        &self.ci_id
    }

    pub fn created(&self) -> DateTime<Utc> {
        self.created
    }

    pub fn datastreams(&self) -> &[Datastream] {
        &self.datastreams
    }

    pub fn datastream(&self, fragment_id: &str) -> Option<&Datastream> {
        self.datastreams
            .iter()
            .find(|ds| ds.fragment_id.as_str() == fragment_id)
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn sets(&self) -> &[SetSpec] {
        &self.sets
    }

    pub fn in_set(&self, set: &SetSpec) -> bool {
        self.sets.contains(set)
    }

    /// The version-resolution ordering key.
    pub fn version_key(&self) -> (DateTime<Utc>, &AipId) {
        (self.created, &self.aip_id)
    }
}

/// Ingest-time input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sip {
    pub ci_id: CiId,
    pub datastreams: Vec<Datastream>,
    pub change_kind: ChangeKind,
    pub source_aip: Option<AipId>,
    pub note: String,
    pub sets: Vec<SetSpec>,
}

impl Sip {
    pub fn original(ci_id: CiId) -> Self {
        Self {
            ci_id,
            datastreams: Vec::new(),
            change_kind: ChangeKind::Original,
            source_aip: None,
            note: String::new(),
            sets: Vec::new(),
        }
    }

    pub fn derived(
        change_kind: ChangeKind,
        ci_id: CiId,
        source_aip: AipId,
        note: impl Into<String>,
    ) -> Self {
        Self {
            ci_id,
            datastreams: Vec::new(),
            change_kind,
            source_aip: Some(source_aip),
            note: note.into(),
            sets: Vec::new(),
        }
    }

    pub fn with_datastream(mut self, datastream: Datastream) -> Self {
        self.datastreams.push(datastream);
        self
    }

    pub fn with_set(mut self, set: SetSpec) -> Self {
        self.sets.push(set);
        self
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }
}

fn check_datastreams(datastreams: &[Datastream]) -> Result<(), ArchiveError> {
    if datastreams.is_empty() {
        return Err(ArchiveError::EmptyPackage);
    }
    let mut seen = HashSet::new();
    for ds in datastreams {
        if !seen.insert(ds.fragment_id.as_str()) {
            return Err(ArchiveError::DuplicateFragmentId(ds.fragment_id.clone()));
        }
    }
    Ok(())
}

/// A consistent read view of the archive.
#[derive(Debug, Clone, Default)]
pub struct Snapshot {
    aips: HashMap<AipId, Arc<Aip>>,
    /// Per CI, sorted by `(created, aip_id)` ascending.
    by_ci: BTreeMap<CiId, Vec<Arc<Aip>>>,
}

impl Snapshot {
    fn insert(&mut self, aip: Arc<Aip>) {
        let versions = self.by_ci.entry(aip.ci_id.clone()).or_default();
        let at = versions.partition_point(|v| v.version_key() < aip.version_key());
        versions.insert(at, Arc::clone(&aip));
        self.aips.insert(aip.aip_id.clone(), aip);
    }

    pub fn len(&self) -> usize {
        self.aips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.aips.is_empty()
    }

    pub fn get_aip(&self, aip_id: &AipId) -> Result<Arc<Aip>, ArchiveError> {
        self.aips
            .get(aip_id)
            .cloned()
            .ok_or_else(|| ArchiveError::UnknownAip(aip_id.clone()))
    }

    pub fn find_aip(&self, aip_id: &str) -> Option<&Arc<Aip>> {
        AipId::new(aip_id).ok().and_then(|id| self.aips.get(&id))
    }

    /// All AIPs of one CI, ordered by `(created, aip_id)`.
    pub fn list_aips_for_ci(&self, ci_id: &CiId) -> &[Arc<Aip>] {
        self.by_ci.get(ci_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn contains_ci(&self, ci_id: &CiId) -> bool {
        self.by_ci.contains_key(ci_id)
    }

    /// The `(created, aip_id)`-maximal AIP of `ci_id` created no later than `until`.
    pub fn latest_aip_for_ci(
        &self,
        ci_id: &CiId,
        until: Option<DateTime<Utc>>,
    ) -> Result<Arc<Aip>, ArchiveError> {
        let versions = self.list_aips_for_ci(ci_id);
        let end = match until {
            Some(until) => versions.partition_point(|aip| aip.created <= until),
            None => versions.len(),
        };
        end.checked_sub(1)
            .map(|i| Arc::clone(&versions[i]))
            .ok_or_else(|| ArchiveError::NoSuchContent(ci_id.clone()))
    }

    /// `(ci_id, versions)` pairs in CI order.
    pub fn groups(&self) -> impl Iterator<Item = (&CiId, &[Arc<Aip>])> {
        self.by_ci.iter().map(|(ci, v)| (ci, v.as_slice()))
    }

    pub fn aips(&self) -> impl Iterator<Item = &Arc<Aip>> {
        self.aips.values()
    }

    pub fn earliest_created(&self) -> Option<DateTime<Utc>> {
        self.by_ci
            .values()
            .filter_map(|v| v.first())
            .map(|a| a.created)
            .min()
    }
}

struct Writer {
    next_counter: u64,
    store: Option<persist::FileStore>,
}

/// The AIP store. Ingests are serialized; reads work on shared snapshots.
pub struct Archive {
    instance: String,
    snapshot: RwLock<Arc<Snapshot>>,
    writer: Mutex<Writer>,
}

impl std::fmt::Debug for Archive {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Archive")
            .field("instance", &self.instance)
            .field("aips", &self.snapshot().len())
            .finish()
    }
}

fn check_instance_name(name: &str) -> Result<(), ArchiveError> {
    let ok = !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(ArchiveError::InvalidInstanceName(name.to_owned()))
    }
}

impl Archive {
    /// A volatile archive, used by tests and demos.
    pub fn in_memory(instance: &str) -> Result<Self, ArchiveError> {
        check_instance_name(instance)?;
        Ok(Self {
            instance: instance.to_owned(),
            snapshot: RwLock::new(Arc::new(Snapshot::default())),
            writer: Mutex::new(Writer {
                next_counter: 1,
                store: None,
            }),
        })
    }

    /// Opens (or creates) a file-backed store, replaying its index.
    ///
    /// The directory is locked for the lifetime of the returned archive.
    pub fn open(dir: impl AsRef<Path>, instance: &str) -> Result<Self, ArchiveError> {
        check_instance_name(instance)?;
        let (store, aips) = persist::FileStore::open(dir.as_ref())?;
        let prefix = id_prefix(instance);
        let mut snapshot = Snapshot::default();
        let mut max_counter = 0;
        for aip in aips {
            if let Some(n) = aip
                .aip_id
                .as_str()
                .strip_prefix(&prefix)
                .and_then(|n| n.parse::<u64>().ok())
            {
                max_counter = max_counter.max(n);
            }
            if snapshot.aips.contains_key(&aip.aip_id) {
                return Err(ArchiveError::Corrupt(format!(
                    "duplicate index entry for {}",
                    aip.aip_id
                )));
            }
            snapshot.insert(Arc::new(aip));
        }
        Ok(Self {
            instance: instance.to_owned(),
            snapshot: RwLock::new(Arc::new(snapshot)),
            writer: Mutex::new(Writer {
                next_counter: max_counter + 1,
                store: Some(store),
            }),
        })
    }

    pub fn instance(&self) -> &str {
        &self.instance
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        Arc::clone(&self.snapshot.read().expect("snapshot lock poisoned"))
    }

    pub fn ingest(&self, sip: Sip, now: DateTime<Utc>) -> Result<Arc<Aip>, ArchiveError> {
        let mut writer = self.writer.lock().expect("writer lock poisoned");
        check_datastreams(&sip.datastreams)?;
        let provenance = Provenance::new(sip.change_kind, sip.source_aip, sip.note)?;
        let current = self.snapshot();
        if let Some(source) = provenance.source_aip() {
            let source_aip = current
                .get_aip(source)
                .map_err(|_| ArchiveError::UnknownSourceAip(source.clone()))?;
            if source_aip.ci_id != sip.ci_id {
                return Err(ArchiveError::CiMismatch {
                    source_aip: source.clone(),
                    expected: sip.ci_id,
                    found: source_aip.ci_id.clone(),
                });
            }
        }
        let mut sets = Vec::new();
        for set in sip.sets {
            if !sets.contains(&set) {
                sets.push(set);
            }
        }
        let aip_id = self.mint(writer.next_counter);
        let aip = Aip {
            aip_id,
            ci_id: sip.ci_id,
            created: truncate_to_seconds(now),
            datastreams: sip.datastreams,
            provenance,
            sets,
        };
        if let Some(store) = writer.store.as_mut() {
            store.append(&aip)?;
        }
        writer.next_counter += 1;
        let aip = Arc::new(aip);
        let mut guard = self.snapshot.write().expect("snapshot lock poisoned");
        Arc::make_mut(&mut guard).insert(Arc::clone(&aip));
        Ok(aip)
    }

    fn mint(&self, counter: u64) -> AipId {
        AipId::new(format!("{}{counter:012}", id_prefix(&self.instance)))
            .expect("minted identifiers are absolute URIs")
    }

    pub fn get_aip(&self, aip_id: &AipId) -> Result<Arc<Aip>, ArchiveError> {
        self.snapshot().get_aip(aip_id)
    }

    pub fn list_aips_for_ci(&self, ci_id: &CiId) -> Vec<Arc<Aip>> {
        self.snapshot().list_aips_for_ci(ci_id).to_vec()
    }

    pub fn latest_aip_for_ci(
        &self,
        ci_id: &CiId,
        until: Option<DateTime<Utc>>,
    ) -> Result<Arc<Aip>, ArchiveError> {
        self.snapshot().latest_aip_for_ci(ci_id, until)
    }
}

fn id_prefix(instance: &str) -> String {
    format!("info:repo/{instance}/")
}
