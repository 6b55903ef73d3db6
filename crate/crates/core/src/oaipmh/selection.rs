use std::sync::Arc;

use chrono::{DateTime, Utc};

use crate::archive::{Aip, SetSpec, Snapshot};

/// A closed harvesting window, optionally restricted to one set.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Window {
    pub from: Option<DateTime<Utc>>,
    pub until: Option<DateTime<Utc>>,
    pub set: Option<SetSpec>,
}

impl Window {
    pub fn contains(&self, aip: &Aip) -> bool {
        self.from.is_none_or(|from| aip.created() >= from)
            && self.until.is_none_or(|until| aip.created() <= until)
            && self.set.as_ref().is_none_or(|set| aip.in_set(set))
    }
}

/// One AIP per CI: the `(created, aip_id)`-greatest AIP of the CI inside the
/// window. Ordered by `(created, ci_id)`.
pub fn select(snapshot: &Snapshot, window: &Window) -> Vec<Arc<Aip>> {
    let mut picked: Vec<Arc<Aip>> = snapshot
        .groups()
        .filter_map(|(_, aips)| aips.iter().rev().find(|a| window.contains(a)).cloned())
        .collect();
    picked.sort_by(|a, b| sort_key(a).cmp(&sort_key(b)));
    picked
}

pub(crate) fn sort_key(aip: &Aip) -> (i64, &str) {
    (aip.created().timestamp(), aip.ci_id().as_str())
}
