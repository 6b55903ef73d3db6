//! Deterministic fixtures shared by the benchmarks.

use chrono::{DateTime, TimeZone, Utc};
use oais_core::archive::{
    Archive, ChangeKind, CiId, Datastream, FragmentId, MediaType, SetSpec, Sip,
};

pub fn at(secs: i64) -> DateTime<Utc> {
    Utc.timestamp_opt(1_300_000_000 + secs, 0).unwrap()
}

/// `n_aips` AIPs spread round-robin over `n_cis` CIs, each with
/// `streams` datastreams of `stream_len` bytes. Every seventh AIP shares its
/// timestamp with the previous one.
pub fn store(n_aips: usize, n_cis: usize, streams: usize, stream_len: usize) -> Archive {
    let archive = Archive::in_memory("bench").unwrap();
    let set = SetSpec::new("bench").unwrap();
    for i in 0..n_aips {
        let ci = CiId::new(format!("urn:bench:{}", i % n_cis)).unwrap();
        let mut sip = match archive.snapshot().list_aips_for_ci(&ci).last() {
            Some(prev) => Sip::derived(ChangeKind::Version, ci, prev.aip_id().clone(), "bench"),
            None => Sip::original(ci),
        };
        for k in 0..streams {
            let content: Vec<u8> = (0..stream_len).map(|b| (b * 31 + i + k) as u8).collect();
            sip = sip.with_datastream(Datastream::new(
                FragmentId::new(format!("ds{k}")).unwrap(),
                MediaType::new("application/octet-stream").unwrap(),
                content,
            ));
        }
        if i % 2 == 0 {
            sip = sip.with_set(set.clone());
        }
        let secs = (i - usize::from(i % 7 == 6)) as i64;
        archive.ingest(sip, at(secs)).unwrap();
    }
    archive
}
