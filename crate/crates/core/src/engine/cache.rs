//! Unique `(text, view)` score cache filled in one scoring phase.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use crate::adapters::{ModelPort, PortError};
use crate::types::{ScoreVector, ViewRequest};

pub type EntryId = u32;

type Slot = Option<Result<ScoreVector, Arc<str>>>;

#[derive(Debug, Default)]
pub struct ScoreCache {
    text_ids: HashMap<String, u32>,
    texts: Vec<String>,
    index: HashMap<(u32, ViewRequest), EntryId>,
    entries: Vec<(u32, ViewRequest)>,
    values: Vec<Slot>,
}

/// What one scoring phase did.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FillStats {
    pub scored: usize,
    pub batches: usize,
    pub failed: usize,
}

impl ScoreCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Id of the `(text, view)` entry, creating it unscored if new.
    pub fn register(&mut self, text: &str, view: &ViewRequest) -> EntryId {
        let tid = match self.text_ids.get(text) {
            Some(&t) => t,
            None => {
                let t = self.texts.len() as u32;
                self.texts.push(text.to_string());
                self.text_ids.insert(text.to_string(), t);
                t
            }
        };
        if let Some(&id) = self.index.get(&(tid, view.clone())) {
            return id;
        }
        let id = self.entries.len() as EntryId;
        self.entries.push((tid, view.clone()));
        self.index.insert((tid, view.clone()), id);
        self.values.push(None);
        id
    }

    /// Stores an already computed score.
    pub fn insert(&mut self, text: &str, view: &ViewRequest, value: ScoreVector) -> EntryId {
        let id = self.register(text, view);
        self.values[id as usize] = Some(Ok(value));
        id
    }

    pub fn lookup(&self, text: &str, view: &ViewRequest) -> Option<EntryId> {
        let tid = *self.text_ids.get(text)?;
        self.index.get(&(tid, view.clone())).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn unique_texts(&self) -> usize {
        self.texts.len()
    }

    pub fn pending(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }

    #[inline]
    pub fn get(&self, id: EntryId) -> Result<&ScoreVector, &str> {
        match self.values.get(id as usize) {
            Some(Some(Ok(v))) => Ok(v),
            Some(Some(Err(e))) => Err(e),
            Some(None) => Err("entry was never scored"),
            None => Err("unknown cache entry"),
        }
    }

    /// Distinct views across all entries.
    pub fn views(&self) -> Vec<ViewRequest> {
        let mut out: Vec<ViewRequest> = Vec::new();
        for (_, v) in &self.entries {
            if !out.contains(v) {
                out.push(v.clone());
            }
        }
        out
    }

    /// Scores every pending entry. Texts needing the same set of views share
    /// batches of at most the port's `max_batch`; up to `max_in_flight`
    /// batches run concurrently. Without `fail_fast`, entries of a failed
    /// batch hold the error and the rest of the cache is still filled.
    pub fn fill(&mut self, port: &dyn ModelPort, fail_fast: bool) -> Result<FillStats, PortError> {
        let caps = port.capabilities();
        for v in self.views() {
            caps.supports(&v)?;
        }
        let mut per_text: BTreeMap<u32, Vec<EntryId>> = BTreeMap::new();
        for (id, v) in self.values.iter().enumerate() {
            if v.is_none() {
                per_text.entry(self.entries[id].0).or_default().push(id as EntryId);
            }
        }
        // Group texts by the exact list of views they need; each request holds
        // at most one hidden view.
        let mut groups: BTreeMap<Vec<String>, (Vec<ViewRequest>, Vec<(u32, Vec<EntryId>)>)> = BTreeMap::new();
        for (tid, ids) in per_text {
            let mut ids = ids;
            ids.sort_by_key(|&id| self.entries[id as usize].1.fingerprint());
            let mut main: Vec<EntryId> = Vec::new();
            let mut extra: Vec<EntryId> = Vec::new();
            let mut has_hidden = false;
            for id in ids {
                if matches!(self.entries[id as usize].1, ViewRequest::Hidden { .. }) {
                    if has_hidden {
                        extra.push(id);
                        continue;
                    }
                    has_hidden = true;
                }
                main.push(id);
            }
            for set in std::iter::once(main).chain(extra.into_iter().map(|id| vec![id])) {
                let views: Vec<ViewRequest> = set.iter().map(|&id| self.entries[id as usize].1.clone()).collect();
                let key: Vec<String> = views.iter().map(ViewRequest::fingerprint).collect();
                groups.entry(key).or_insert_with(|| (views, Vec::new())).1.push((tid, set));
            }
        }
        let max_batch = caps.max_batch.max(1);
        let batches: Vec<(&[ViewRequest], &[(u32, Vec<EntryId>)])> = groups
            .values()
            .flat_map(|(views, members)| members.chunks(max_batch).map(move |c| (views.as_slice(), c)))
            .collect();

        let next = AtomicUsize::new(0);
        let results: Vec<Mutex<Option<Result<Vec<Vec<ScoreVector>>, PortError>>>> =
            batches.iter().map(|_| Mutex::new(None)).collect();
        let threads = port.max_in_flight().clamp(1, batches.len().max(1));
        let texts = &self.texts;
        std::thread::scope(|s| {
            for _ in 0..threads {
                s.spawn(|| loop {
                    let b = next.fetch_add(1, Ordering::Relaxed);
                    let Some((views, members)) = batches.get(b) else { break };
                    let batch_texts: Vec<&str> = members.iter().map(|(t, _)| texts[*t as usize].as_str()).collect();
                    let r = port.score_batch(&batch_texts, views);
                    *results[b].lock().expect("batch result lock") = Some(r);
                });
            }
        });

        let mut stats = FillStats { batches: batches.len(), ..FillStats::default() };
        for ((views, members), result) in batches.iter().zip(results) {
            let result = result.into_inner().expect("batch result lock").expect("every batch runs");
            match result {
                Ok(rows) if rows.len() == members.len() && rows.iter().all(|r| r.len() == views.len()) => {
                    for ((_, ids), row) in members.iter().zip(rows) {
                        for (&id, y) in ids.iter().zip(row) {
                            self.values[id as usize] = Some(Ok(y));
                            stats.scored += 1;
                        }
                    }
                }
                Ok(_) => {
                    let e = PortError::Protocol("result shape does not match the request".into());
                    if fail_fast {
                        return Err(e);
                    }
                    stats.failed += self.fail_members(members, &e);
                }
                Err(e) => {
                    if fail_fast {
                        return Err(e);
                    }
                    tracing::warn!(error = %e, texts = members.len(), "scoring batch failed");
                    stats.failed += self.fail_members(members, &e);
                }
            }
        }
        Ok(stats)
    }

    fn fail_members(&mut self, members: &[(u32, Vec<EntryId>)], e: &PortError) -> usize {
        let msg: Arc<str> = Arc::from(e.to_string());
        let mut n = 0;
        for (_, ids) in members {
            for &id in ids {
                self.values[id as usize] = Some(Err(msg.clone()));
                n += 1;
            }
        }
        n
    }
}
