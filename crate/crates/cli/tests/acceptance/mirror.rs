use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;
use std::sync::Arc;

use oais_core::harvest::{Checkpoint, HarvestError, Harvester, Mirror, OaiClient, RetryPolicy};

use crate::Outcome;
use crate::common::TestServer;
use crate::fixtures::*;

type State = BTreeMap<String, (String, Streams)>;

fn mirror_state(dir: &Path) -> Result<State, String> {
    let mirror = Mirror::open(dir).ctx("open mirror")?;
    Ok(mirror
        .entries()
        .ctx("read mirror")?
        .into_iter()
        .map(|e| {
            let streams = e
                .datastreams
                .iter()
                .map(|d| {
                    (
                        d.fragment_id.to_string(),
                        d.media_type.to_string(),
                        d.content.to_vec(),
                    )
                })
                .collect();
            (
                e.ci_id.to_string(),
                (e.source_aip.to_string(), sorted(streams)),
            )
        })
        .collect())
}

fn oracle(store: &Store) -> State {
    store
        .cis()
        .into_iter()
        .map(|ci| {
            let latest = store.latest_of(&ci).unwrap();
            (ci, (latest.aip.clone(), latest.streams_sorted()))
        })
        .collect()
}

fn copy_dir(from: &Path, to: &Path) {
    for item in fs::read_dir(from).unwrap() {
        let item = item.unwrap();
        let target = to.join(item.file_name());
        if item.file_type().unwrap().is_dir() {
            fs::create_dir_all(&target).unwrap();
            copy_dir(&item.path(), &target);
        } else if item.file_name() != ".lock" {
            fs::copy(item.path(), target).unwrap();
        }
    }
}

/// Runs one harvest that aborts at the `target`-th persistence boundary
/// crossed, then a clean harvest, and returns the kind it aborted at (None
/// if the harvest finished before reaching `target`).
fn interrupted(
    client: &OaiClient,
    dir: &Path,
    now: chrono::DateTime<chrono::Utc>,
    target: usize,
) -> Result<Option<Checkpoint>, String> {
    let mut crossed = 0;
    let mut harvester = Harvester::open(client.clone(), dir, NATIVE_PREFIX, None).ctx("open")?;
    let outcome = harvester.harvest_increment_with(now, &mut |cp| {
        crossed += 1;
        if crossed - 1 == target {
            Err(HarvestError::Interrupted(cp))
        } else {
            Ok(())
        }
    });
    drop(harvester);
    match outcome {
        Ok(_) => Ok(None),
        Err(HarvestError::Interrupted(cp)) => {
            Harvester::open(client.clone(), dir, NATIVE_PREFIX, None)
                .ctx("reopen")?
                .harvest_increment(now)
                .ctx("resumed harvest")?;
            Ok(Some(cp))
        }
        Err(e) => Err(format!("harvest failed at boundary {target}: {e}")),
    }
}

pub fn convergence() -> Outcome {
    let mut store = Store::random(8, 150, 50, 300);
    let server = TestServer::start(Arc::clone(&store.archive), |c| c.page_size = 10);
    let client =
        OaiClient::new(server.transport(), server.oai_url()).with_retry(RetryPolicy::none());
    let open = |dir: &Path| Harvester::open(client.clone(), dir, NATIVE_PREFIX, None).ctx("open");

    let first = at(1_000);
    let base = tempfile::tempdir().unwrap();
    let report = open(base.path())?
        .harvest_increment(first)
        .ctx("first harvest")?;
    if report.records() != 50 || !report.quarantined.is_empty() {
        return Err(format!("first harvest took {} records", report.records()));
    }
    if mirror_state(base.path())? != oracle(&store) {
        return Err("first harvest did not reach latest-AIP-per-CI".into());
    }
    let again = open(base.path())?
        .harvest_increment(at(1_001))
        .ctx("second harvest")?;
    if again.records() != 0 {
        return Err(format!(
            "second run transferred {} records",
            again.records()
        ));
    }

    // New versions for some CIs, then the incremental harvest.
    let cis = store.cis();
    for (i, ci) in cis.iter().step_by(6).enumerate() {
        let source = store.latest_of(ci).unwrap().aip.clone();
        let bytes = format!("revised {ci}");
        store.ingest(
            ci,
            Some(&source),
            &[("main", "text/plain", bytes.as_bytes())],
            &[],
            at(1_100 + i as i64),
        );
    }
    let second = at(2_000);
    let expected = oracle(&store);
    let clean = tempfile::tempdir().unwrap();
    copy_dir(base.path(), clean.path());
    let update = open(clean.path())?
        .harvest_increment(second)
        .ctx("incremental harvest")?;
    if update.records() != cis.len().div_ceil(6) || mirror_state(clean.path())? != expected {
        return Err(format!(
            "incremental harvest moved {} records",
            update.records()
        ));
    }
    if open(clean.path())?
        .harvest_increment(at(2_001))
        .ctx("repeat")?
        .records()
        != 0
    {
        return Err("repeated incremental harvest transferred records".into());
    }

    // Interrupt at every boundary: cold (empty mirror) and warm (from the
    // first harvest's state).
    let mut kinds = HashSet::new();
    let mut runs = 0;
    for warm in [false, true] {
        let mut target = 0;
        loop {
            let dir = tempfile::tempdir().unwrap();
            if warm {
                copy_dir(base.path(), dir.path());
            }
            let Some(kind) = interrupted(&client, dir.path(), second, target)? else {
                break;
            };
            kinds.insert(kind);
            runs += 1;
            if mirror_state(dir.path())? != expected {
                return Err(format!(
                    "warm={warm}: interruption at boundary {target} ({kind:?}) diverged"
                ));
            }
            target += 1;
        }
    }
    let all = [
        Checkpoint::EntryStaged,
        Checkpoint::EntryMovedAside,
        Checkpoint::EntryCommitted,
        Checkpoint::CursorSaved,
    ];
    if let Some(missing) = all.iter().find(|k| !kinds.contains(k)) {
        return Err(format!("no interruption at {missing:?}"));
    }
    Ok(format!(
        "50 CIs converged, second run 0 records, {runs} interrupted runs over 4 boundary kinds converged"
    ))
}
