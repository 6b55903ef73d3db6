//! On-disk mirror and the incremental harvester that fills it.
//!
//! ```text
//! {mirror}/{sha256(ci_id)}/entry.xml     the DIP
//! {mirror}/{sha256(ci_id)}/ds/{frag}     unpacked inline datastreams
//! {mirror}/cursor.tsv                    harvest state, key<TAB>value lines
//! {mirror}/quarantine/                   DIPs that failed to parse
//! {mirror}/.lock                         held while a harvest runs
//! ```
//!
//! An entry is replaced by staging the new one in `.tmp-{hash}`, moving the
//! old one to `.old-{hash}` and renaming the staged directory into place.
//! [`Mirror::open`] finishes or rolls back any swap left half done.

use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use bytes::Bytes;
use chrono::{DateTime, Utc};

use super::client::{HarvestedRecord, OaiClient};
use super::{HarvestError, MirrorEntry};
use crate::archive::{SetSpec, sha256_hex};
use crate::lockfile::DirLock;
use crate::oaipmh::OaiErrorCode;
use crate::packaging::{AnyFormat, DipDocument};
use crate::time::{format_datestamp, parse_datestamp, truncate_to_seconds};

const CURSOR_FILE: &str = "cursor.tsv";
const QUARANTINE_DIR: &str = "quarantine";
const TMP_PREFIX: &str = ".tmp-";
const OLD_PREFIX: &str = ".old-";

/// Persistence boundaries, in the order they are crossed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Checkpoint {
    /// New entry fully written to its staging directory.
    EntryStaged,
    /// Previous entry moved aside; the live slot is empty.
    EntryMovedAside,
    /// Staged entry renamed into place.
    EntryCommitted,
    /// Cursor file replaced.
    CursorSaved,
}

pub(crate) fn write_synced(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut file = File::create(path)?;
    file.write_all(bytes)?;
    file.sync_all()
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    write_synced(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HarvestCursor {
    pub base_url: String,
    pub metadata_prefix: String,
    pub set: Option<SetSpec>,
    /// `until` of the last completed harvest.
    pub high_water: Option<DateTime<Utc>>,
    pub pending_token: Option<String>,
    /// `until` of the list `pending_token` belongs to.
    pub pending_until: Option<DateTime<Utc>>,
}

impl HarvestCursor {
    pub fn new(base_url: impl Into<String>, metadata_prefix: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            metadata_prefix: metadata_prefix.into(),
            set: None,
            high_water: None,
            pending_token: None,
            pending_until: None,
        }
    }

    fn to_tsv(&self) -> Result<String, HarvestError> {
        let mut lines = vec![
            ("base_url", self.base_url.clone()),
            ("metadata_prefix", self.metadata_prefix.clone()),
        ];
        if let Some(set) = &self.set {
            lines.push(("set", set.to_string()));
        }
        if let Some(hw) = self.high_water {
            lines.push(("high_water", format_datestamp(hw)));
        }
        if let Some(token) = &self.pending_token {
            lines.push(("pending_token", token.clone()));
        }
        if let Some(until) = self.pending_until {
            lines.push(("pending_until", format_datestamp(until)));
        }
        let mut out = String::new();
        for (key, value) in lines {
            if value.contains(['\t', '\n', '\r']) {
                return Err(HarvestError::Malformed(format!(
                    "{key} contains control characters"
                )));
            }
            out.push_str(key);
            out.push('\t');
            out.push_str(&value);
            out.push('\n');
        }
        Ok(out)
    }

    fn from_tsv(text: &str) -> Result<Self, HarvestError> {
        let corrupt = |msg: String| HarvestError::Malformed(format!("cursor.tsv: {msg}"));
        let mut cursor = Self::new("", "");
        let mut seen = std::collections::HashSet::new();
        for line in text.lines().filter(|l| !l.is_empty()) {
            let (key, value) = line
                .split_once('\t')
                .ok_or_else(|| corrupt(format!("bad line {line:?}")))?;
            if !seen.insert(key) {
                return Err(corrupt(format!("{key} repeated")));
            }
            let instant = || parse_datestamp(value).map_err(|e| corrupt(e.to_string()));
            match key {
                "base_url" => cursor.base_url = value.to_owned(),
                "metadata_prefix" => cursor.metadata_prefix = value.to_owned(),
                "set" => {
                    cursor.set = Some(SetSpec::new(value).map_err(|e| corrupt(e.to_string()))?)
                }
                "high_water" => cursor.high_water = Some(instant()?),
                "pending_token" => cursor.pending_token = Some(value.to_owned()),
                "pending_until" => cursor.pending_until = Some(instant()?),
                _ => return Err(corrupt(format!("unknown key {key}"))),
            }
        }
        if cursor.base_url.is_empty() || cursor.metadata_prefix.is_empty() {
            return Err(corrupt("base_url and metadata_prefix are required".into()));
        }
        if cursor.pending_token.is_some() != cursor.pending_until.is_some() {
            return Err(corrupt(
                "pending_token and pending_until go together".into(),
            ));
        }
        Ok(cursor)
    }
}

/// A harvested record that could not be unpacked.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Quarantined {
    pub identifier: String,
    pub reason: String,
    pub path: PathBuf,
}

/// A locked mirror directory.
#[derive(Debug)]
pub struct Mirror {
    dir: PathBuf,
    _lock: DirLock,
}

impl Mirror {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, HarvestError> {
        let dir = dir.as_ref().to_owned();
        let lock = DirLock::acquire(&dir).map_err(|e| {
            if e.kind() == io::ErrorKind::AlreadyExists {
                HarvestError::Locked(dir.join(".lock"))
            } else {
                HarvestError::Io(e)
            }
        })?;
        let mirror = Self { dir, _lock: lock };
        mirror.recover()?;
        Ok(mirror)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn recover(&self) -> io::Result<()> {
        for item in fs::read_dir(&self.dir)? {
            let item = item?;
            let name = item.file_name().to_string_lossy().into_owned();
            if name.starts_with(TMP_PREFIX) {
                fs::remove_dir_all(item.path())?;
            } else if let Some(hash) = name.strip_prefix(OLD_PREFIX) {
                let live = self.dir.join(hash);
                if live.exists() {
                    fs::remove_dir_all(item.path())?;
                } else {
                    fs::rename(item.path(), live)?;
                }
            }
        }
        let stray = self.dir.join(CURSOR_FILE).with_extension("tmp");
        if stray.exists() {
            fs::remove_file(stray)?;
        }
        Ok(())
    }

    fn entry_dir(&self, ci_id: &str) -> PathBuf {
        self.dir.join(sha256_hex(ci_id))
    }

    /// Datestamp of the mirrored entry for `ci_id`, if any.
    pub fn datestamp_of(&self, ci_id: &str) -> Result<Option<DateTime<Utc>>, HarvestError> {
        let path = self.entry_dir(ci_id).join("entry.xml");
        match fs::read(&path) {
            Ok(bytes) => Ok(Some(DipDocument::from_xml(Bytes::from(bytes))?.created)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    /// Installs `entry` unless the mirror already holds a newer one. Returns
    /// whether the entry was written.
    pub fn upsert(
        &self,
        entry: &MirrorEntry,
        checkpoint: &mut dyn FnMut(Checkpoint) -> Result<(), HarvestError>,
    ) -> Result<bool, HarvestError> {
        if let Some(existing) = self.datestamp_of(entry.ci_id.as_str())?
            && existing > entry.datestamp
        {
            return Ok(false);
        }
        let hash = sha256_hex(entry.ci_id.as_str());
        let live = self.dir.join(&hash);
        let staged = self.dir.join(format!("{TMP_PREFIX}{hash}"));
        let old = self.dir.join(format!("{OLD_PREFIX}{hash}"));
        if staged.exists() {
            fs::remove_dir_all(&staged)?;
        }
        entry.write_to(&staged)?;
        checkpoint(Checkpoint::EntryStaged)?;
        if live.exists() {
            fs::rename(&live, &old)?;
            checkpoint(Checkpoint::EntryMovedAside)?;
        }
        fs::rename(&staged, &live)?;
        checkpoint(Checkpoint::EntryCommitted)?;
        if old.exists() {
            fs::remove_dir_all(&old)?;
        }
        Ok(true)
    }

    pub fn read_cursor(&self) -> Result<Option<HarvestCursor>, HarvestError> {
        match fs::read_to_string(self.dir.join(CURSOR_FILE)) {
            Ok(text) => HarvestCursor::from_tsv(&text).map(Some),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn write_cursor(&self, cursor: &HarvestCursor) -> Result<(), HarvestError> {
        write_atomic(&self.dir.join(CURSOR_FILE), cursor.to_tsv()?.as_bytes())?;
        Ok(())
    }

    fn quarantine(&self, record: &HarvestedRecord, reason: &str) -> Result<PathBuf, HarvestError> {
        let dir = self.dir.join(QUARANTINE_DIR);
        fs::create_dir_all(&dir)?;
        let stem = format!(
            "{}-{}",
            sha256_hex(&record.identifier),
            record.datestamp.format("%Y%m%dT%H%M%SZ")
        );
        let path = dir.join(format!("{stem}.xml"));
        write_synced(&path, &record.dip)?;
        write_synced(
            &dir.join(format!("{stem}.txt")),
            format!("{}\n{reason}\n", record.identifier).as_bytes(),
        )?;
        Ok(path)
    }

    /// All mirrored entries, ordered by CI identifier.
    pub fn entries(&self) -> Result<Vec<MirrorEntry>, HarvestError> {
        let mut entries = Vec::new();
        for item in fs::read_dir(&self.dir)? {
            let item = item?;
            let name = item.file_name().to_string_lossy().into_owned();
            if name.len() != 64 || !item.file_type()?.is_dir() {
                continue;
            }
            let dip = Bytes::from(fs::read(item.path().join("entry.xml"))?);
            let mut entry = MirrorEntry::from_dip(dip, &AnyFormat)?;
            for ds in &mut entry.datastreams {
                let on_disk = fs::read(item.path().join("ds").join(ds.fragment_id.as_str()))?;
                if on_disk != ds.content {
                    return Err(HarvestError::Malformed(format!(
                        "{}: ds/{} differs from entry.xml",
                        entry.ci_id, ds.fragment_id
                    )));
                }
            }
            entries.push(entry);
        }
        entries.sort_by(|a, b| a.ci_id.cmp(&b.ci_id));
        Ok(entries)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HarvestReport {
    /// Records received and unpacked, in arrival order.
    pub entries: Vec<MirrorEntry>,
    /// How many of them replaced or created a mirror entry.
    pub written: usize,
    pub quarantined: Vec<Quarantined>,
    pub high_water: Option<DateTime<Utc>>,
}

impl HarvestReport {
    pub fn records(&self) -> usize {
        self.entries.len() + self.quarantined.len()
    }
}

/// Datestamp-based incremental harvesting into a [`Mirror`].
#[derive(Debug)]
pub struct Harvester {
    client: OaiClient,
    mirror: Mirror,
    cursor: HarvestCursor,
}

impl Harvester {
    /// Opens (and locks) the mirror. An existing cursor must belong to the
    /// same base URL, prefix and set.
    pub fn open(
        client: OaiClient,
        mirror_dir: impl AsRef<Path>,
        metadata_prefix: &str,
        set: Option<SetSpec>,
    ) -> Result<Self, HarvestError> {
        let mirror = Mirror::open(mirror_dir)?;
        let cursor = match mirror.read_cursor()? {
            Some(cursor) => {
                if cursor.base_url != client.base_url()
                    || cursor.metadata_prefix != metadata_prefix
                    || cursor.set != set
                {
                    return Err(HarvestError::CursorMismatch(format!(
                        "{} {} {:?}",
                        cursor.base_url, cursor.metadata_prefix, cursor.set
                    )));
                }
                cursor
            }
            None => HarvestCursor {
                set,
                ..HarvestCursor::new(client.base_url(), metadata_prefix)
            },
        };
        Ok(Self {
            client,
            mirror,
            cursor,
        })
    }

    pub fn cursor(&self) -> &HarvestCursor {
        &self.cursor
    }

    pub fn mirror(&self) -> &Mirror {
        &self.mirror
    }

    pub fn harvest_increment(&mut self, now: DateTime<Utc>) -> Result<HarvestReport, HarvestError> {
        self.harvest_increment_with(now, &mut |_| Ok(()))
    }

    /// As [`Self::harvest_increment`], calling `checkpoint` after each
    /// persistence step; an error from it aborts the harvest on the spot.
    pub fn harvest_increment_with(
        &mut self,
        now: DateTime<Utc>,
        checkpoint: &mut dyn FnMut(Checkpoint) -> Result<(), HarvestError>,
    ) -> Result<HarvestReport, HarvestError> {
        let now = truncate_to_seconds(now);
        let namespaces = self.client.format_namespaces()?;
        let mut report = HarvestReport::default();

        if let (Some(token), Some(until)) =
            (self.cursor.pending_token.clone(), self.cursor.pending_until)
        {
            match self.follow(
                self.client.resume(&token),
                until,
                &namespaces,
                &mut report,
                checkpoint,
            ) {
                Err(HarvestError::Oai(e)) if e.code == OaiErrorCode::BadResumptionToken => {
                    // Expired or foreign token: drop it and re-cover the
                    // window from the unchanged high-water mark.
                    tracing::warn!(error = %e, "discarding pending resumption token");
                    self.cursor.pending_token = None;
                    self.cursor.pending_until = None;
                    self.save(checkpoint)?;
                }
                other => other?,
            }
        }

        if self.cursor.high_water.is_none_or(|hw| hw <= now) {
            let first = self.client.list_records(
                &self.cursor.metadata_prefix,
                self.cursor.high_water,
                Some(now),
                self.cursor.set.as_ref(),
            );
            self.follow(first, now, &namespaces, &mut report, checkpoint)?;
        }
        report.high_water = self.cursor.high_water;
        Ok(report)
    }

    /// Processes `page` and every page after it, then advances the
    /// high-water mark to `until`.
    fn follow(
        &mut self,
        mut page: Result<super::RecordsPage, HarvestError>,
        until: DateTime<Utc>,
        namespaces: &[String],
        report: &mut HarvestReport,
        checkpoint: &mut dyn FnMut(Checkpoint) -> Result<(), HarvestError>,
    ) -> Result<(), HarvestError> {
        loop {
            let current = page?;
            for record in &current.records {
                self.absorb(record, namespaces, report, checkpoint)?;
            }
            match current.resumption_token {
                Some(token) => {
                    self.cursor.pending_token = Some(token.clone());
                    self.cursor.pending_until = Some(until);
                    self.save(checkpoint)?;
                    page = self.client.resume(&token);
                }
                None => break,
            }
        }
        self.cursor.pending_token = None;
        self.cursor.pending_until = None;
        self.cursor.high_water = Some(self.cursor.high_water.map_or(until, |hw| hw.max(until)));
        self.save(checkpoint)
    }

    fn absorb(
        &mut self,
        record: &HarvestedRecord,
        namespaces: &[String],
        report: &mut HarvestReport,
        checkpoint: &mut dyn FnMut(Checkpoint) -> Result<(), HarvestError>,
    ) -> Result<(), HarvestError> {
        let entry = MirrorEntry::from_dip(record.dip.clone(), namespaces)
            .map_err(|e| e.to_string())
            .and_then(|entry| {
                if entry.ci_id.as_str() == record.identifier {
                    Ok(entry)
                } else {
                    Err(format!(
                        "DIP is for {}, header says {}",
                        entry.ci_id, record.identifier
                    ))
                }
            });
        match entry {
            Ok(entry) => {
                if self.mirror.upsert(&entry, checkpoint)? {
                    report.written += 1;
                }
                report.entries.push(entry);
            }
            Err(reason) => {
                tracing::warn!(identifier = %record.identifier, %reason, "quarantining record");
                let path = self.mirror.quarantine(record, &reason)?;
                report.quarantined.push(Quarantined {
                    identifier: record.identifier.clone(),
                    reason,
                    path,
                });
            }
        }
        Ok(())
    }

    fn save(
        &self,
        checkpoint: &mut dyn FnMut(Checkpoint) -> Result<(), HarvestError>,
    ) -> Result<(), HarvestError> {
        self.mirror.write_cursor(&self.cursor)?;
        checkpoint(Checkpoint::CursorSaved)
    }
}
