//! Shared fixtures for unit tests.

use chrono::{DateTime, TimeZone, Utc};
use rand::Rng;
use rand::rngs::StdRng;

use crate::archive::{Archive, ChangeKind, CiId, Datastream, FragmentId, MediaType, SetSpec, Sip};

pub fn t(secs: i64) -> DateTime<Utc> {
    Utc.timestamp_opt(1_100_000_000 + secs, 0).unwrap()
}

pub fn ci(s: &str) -> CiId {
    CiId::new(s).unwrap()
}

pub fn ds(id: &str, mime: &str, content: &[u8]) -> Datastream {
    Datastream::new(
        FragmentId::new(id).unwrap(),
        MediaType::new(mime).unwrap(),
        content.to_vec(),
    )
}

pub const TWO_VERSION_CI: &str = "urn:isbn:90-70002-04-3";

/// An Original and a Version sharing one CI, ingested 10s apart.
pub fn two_version_archive() -> Archive {
    let archive = Archive::in_memory("test").unwrap();
    let original = archive
        .ingest(
            Sip::original(ci(TWO_VERSION_CI)).with_datastream(ds(
                "ds1",
                "application/pdf",
                b"%PDF-1.4 v1",
            )),
            t(0),
        )
        .unwrap();
    archive
        .ingest(
            Sip::derived(
                ChangeKind::Version,
                ci(TWO_VERSION_CI),
                original.aip_id().clone(),
                "migrated PDF 1.4 to PDF/A",
            )
            .with_datastream(ds("ds1", "application/pdf", b"%PDF-1.7 v2"))
            .with_datastream(ds("ds2", "image/jpeg", b"\xff\xd8\xff thumbnail")),
            t(10),
        )
        .unwrap();
    archive
}

/// Random store: `n_aips` AIPs over `n_cis` CIs with timestamps drawn from a
/// small range so that collisions occur.
pub fn random_archive(rng: &mut StdRng, n_aips: usize, n_cis: usize, time_span: i64) -> Archive {
    let archive = Archive::in_memory("rnd").unwrap();
    let sets = ["journals", "theses", "data"];
    for _ in 0..n_aips {
        let c = ci(&format!("urn:test:ci-{}", rng.gen_range(0..n_cis)));
        let mut sip = match archive.snapshot().list_aips_for_ci(&c).last() {
            Some(prev) => Sip::derived(ChangeKind::Version, c, prev.aip_id().clone(), "update"),
            None => Sip::original(c),
        };
        let n_ds = rng.gen_range(1..=3);
        for k in 0..n_ds {
            let len = rng.gen_range(0..64);
            let bytes: Vec<u8> = (0..len).map(|_| rng.r#gen()).collect();
            sip = sip.with_datastream(ds(&format!("ds{k}"), "application/octet-stream", &bytes));
        }
        for s in sets {
            if rng.gen_bool(0.4) {
                sip = sip.with_set(SetSpec::new(s).unwrap());
            }
        }
        archive.ingest(sip, t(rng.gen_range(0..time_span))).unwrap();
    }
    archive
}
