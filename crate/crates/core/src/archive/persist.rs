//! File-backed AIP store.
//!
//! Layout under the store directory:
//!
//! ```text
//! aips/{sha256(aip_id)}.xml   one document per AIP
//! index.tsv                   aip_id, ci_id, created, sets, file
//! .lock                       held while the store is open
//! ```
//!
//! The index is append-only and is the source of truth: an AIP file without
//! an index line is ignored.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use base64::Engine;
use base64::engine::general_purpose::STANDARD;
use sha2::{Digest, Sha256};

use super::{
    Aip, AipId, ArchiveError, ChangeKind, CiId, Datastream, MediaType, Provenance, SetSpec,
};
use super::{FragmentId, check_datastreams};
use crate::lockfile::DirLock;
use crate::time::{format_datestamp, parse_datestamp};
use crate::xml::{self, XmlWriter};

pub(super) struct FileStore {
    dir: PathBuf,
    index: File,
    _lock: DirLock,
}

pub(crate) fn sha256_hex(value: &str) -> String {
    hex::encode(Sha256::digest(value.as_bytes()))
}

fn corrupt(msg: impl Into<String>) -> ArchiveError {
    ArchiveError::Corrupt(msg.into())
}

impl FileStore {
    pub(super) fn open(dir: &Path) -> Result<(Self, Vec<Aip>), ArchiveError> {
        let lock = DirLock::acquire(dir).map_err(|e| {
            if e.kind() == io::ErrorKind::AlreadyExists {
                ArchiveError::Locked(dir.join(".lock").display().to_string())
            } else {
                ArchiveError::Io(e)
            }
        })?;
        fs::create_dir_all(dir.join("aips"))?;
        let index_path = dir.join("index.tsv");
        let raw = match fs::read_to_string(&index_path) {
            Ok(raw) => raw,
            Err(e) if e.kind() == io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(e.into()),
        };
        // A trailing line without a newline is a torn append; drop it.
        let complete = match raw.rfind('\n') {
            Some(i) => &raw[..=i],
            None => "",
        };
        if complete.len() != raw.len() {
            tracing::warn!(
                path = %index_path.display(),
                "discarding incomplete trailing index line"
            );
            let file = OpenOptions::new().write(true).open(&index_path)?;
            file.set_len(complete.len() as u64)?;
            file.sync_all()?;
        }
        let mut aips = Vec::new();
        for (n, line) in complete.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            aips.push(load_entry(dir, line).map_err(|e| match e {
                ArchiveError::Corrupt(msg) => corrupt(format!("index line {}: {msg}", n + 1)),
                other => other,
            })?);
        }
        let index = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&index_path)?;
        Ok((
            Self {
                dir: dir.to_owned(),
                index,
                _lock: lock,
            },
            aips,
        ))
    }

    pub(super) fn append(&mut self, aip: &Aip) -> Result<(), ArchiveError> {
        let file_name = format!("{}.xml", sha256_hex(aip.aip_id.as_str()));
        let path = self.dir.join("aips").join(&file_name);
        let tmp = path.with_extension("xml.tmp");
        {
            let mut out = File::create(&tmp)?;
            out.write_all(encode_aip(aip).as_bytes())?;
            out.sync_all()?;
        }
        fs::rename(&tmp, &path)?;
        let sets = aip
            .sets
            .iter()
            .map(SetSpec::as_str)
            .collect::<Vec<_>>()
            .join(",");
        let line = format!(
            "{}\t{}\t{}\t{}\t{}\n",
            aip.aip_id,
            aip.ci_id,
            format_datestamp(aip.created),
            sets,
            file_name
        );
        self.index.write_all(line.as_bytes())?;
        self.index.sync_data()?;
        Ok(())
    }
}

fn load_entry(dir: &Path, line: &str) -> Result<Aip, ArchiveError> {
    let cols: Vec<&str> = line.split('\t').collect();
    let [aip_id, ci_id, created, sets, file] = cols[..] else {
        return Err(corrupt(format!("expected 5 columns, found {}", cols.len())));
    };
    if file.contains(['/', '\\']) || file.starts_with('.') {
        return Err(corrupt(format!("bad file name {file:?}")));
    }
    let bytes = fs::read(dir.join("aips").join(file))?;
    let mut aip = decode_aip(&bytes)?;
    if aip.aip_id.as_str() != aip_id
        || aip.ci_id.as_str() != ci_id
        || format_datestamp(aip.created) != created
    {
        return Err(corrupt(format!("{file} does not match its index line")));
    }
    aip.sets = sets
        .split(',')
        .filter(|s| !s.is_empty())
        .map(SetSpec::new)
        .collect::<Result<_, _>>()
        .map_err(|e| corrupt(e.to_string()))?;
    Ok(aip)
}

pub(super) fn encode_aip(aip: &Aip) -> String {
    let created = format_datestamp(aip.created);
    let mut w = XmlWriter::with_declaration();
    w.open(
        "aip",
        &[
            ("aipId", aip.aip_id.as_str()),
            ("ciId", aip.ci_id.as_str()),
            ("created", &created),
        ],
    );
    let provenance = &aip.provenance;
    let mut attrs = vec![("changeKind", provenance.change_kind.as_str())];
    if let Some(source) = &provenance.source_aip {
        attrs.push(("sourceAip", source.as_str()));
    }
    w.leaf("provenance", &attrs, &provenance.note);
    for ds in &aip.datastreams {
        let length = ds.len().to_string();
        w.leaf(
            "datastream",
            &[
                ("id", ds.fragment_id.as_str()),
                ("mimeType", ds.media_type.as_str()),
                ("length", &length),
            ],
            &STANDARD.encode(&ds.content),
        );
    }
    w.close("aip");
    w.finish()
}

pub(super) fn decode_aip(bytes: &[u8]) -> Result<Aip, ArchiveError> {
    let root = xml::parse(bytes).map_err(|e| corrupt(e.to_string()))?;
    if !root.is(None, "aip") {
        return Err(corrupt("root element is not <aip>"));
    }
    let attr = |el: &xml::Element, name: &str| {
        el.attr(name)
            .map(str::to_owned)
            .ok_or_else(|| corrupt(format!("<{}> lacks {name}", el.name)))
    };
    let aip_id = AipId::new(attr(&root, "aipId")?).map_err(|e| corrupt(e.to_string()))?;
    let ci_id = CiId::new(attr(&root, "ciId")?).map_err(|e| corrupt(e.to_string()))?;
    let created = parse_datestamp(&attr(&root, "created")?).map_err(|e| corrupt(e.to_string()))?;
    let prov = root
        .child("provenance")
        .ok_or_else(|| corrupt("missing <provenance>"))?;
    let change_kind =
        ChangeKind::parse(&attr(prov, "changeKind")?).ok_or_else(|| corrupt("bad changeKind"))?;
    let source_aip = prov
        .attr("sourceAip")
        .map(AipId::new)
        .transpose()
        .map_err(|e| corrupt(e.to_string()))?;
    let provenance = Provenance::new(change_kind, source_aip, prov.text())?;
    let mut datastreams = Vec::new();
    for el in root.children_named("datastream") {
        let fragment_id = FragmentId::new(attr(el, "id")?).map_err(|e| corrupt(e.to_string()))?;
        let media_type =
            MediaType::new(attr(el, "mimeType")?).map_err(|e| corrupt(e.to_string()))?;
        let length: u64 = attr(el, "length")?
            .parse()
            .map_err(|_| corrupt("bad length"))?;
        let content = STANDARD
            .decode(el.text().trim())
            .map_err(|e| corrupt(format!("datastream {fragment_id}: {e}")))?;
        if content.len() as u64 != length {
            return Err(corrupt(format!(
                "datastream {fragment_id}: length mismatch"
            )));
        }
        datastreams.push(Datastream::new(fragment_id, media_type, content));
    }
    check_datastreams(&datastreams).map_err(|e| corrupt(e.to_string()))?;
    Ok(Aip {
        aip_id,
        ci_id,
        created,
        datastreams,
        provenance,
        sets: Vec::new(),
    })
}
