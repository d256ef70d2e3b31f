//! Test-suite execution.
//!
//! A run has two phases. The scoring phase registers every `(text, view)`
//! pair the suite needs in a [`ScoreCache`] and fills it with as few model
//! calls as possible. The evaluation phase walks the enumerated tuples in
//! disjoint rank ranges on a worker pool, reading scores from the cache and
//! merging integer counters, so results do not depend on scheduling.

mod cache;
pub mod enumerate;

use std::collections::HashMap;
use std::io::Write;
use std::ops::AddAssign;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{EntryId, FillStats, ScoreCache};
pub use enumerate::{count, rank, sample_ranks, unrank, EnumerationMode, RankRange, Selection, Shape, Tuple};

use crate::adapters::{ModelPort, PortError};
use crate::properties::{verdict_given_premise, Connective, PropertyExpr, Verdict};
use crate::relations::{PlanClass, PlanError, RelationPlan};
use crate::transforms::form_pair;
use crate::types::{Dataset, ScoreVector, TextInput};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("{shape} needs more than {k} items")]
    EmptyEnumeration { shape: Shape, k: usize },
    #[error("rank {index} out of range for {count} tuples")]
    RankOutOfBounds { index: u64, count: u64 },
    #[error("tuple count overflows 64 bits")]
    Overflow,
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Port(#[from] PortError),
    #[error("case {tuple} of `{group}`: {message}")]
    Case { group: String, tuple: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Verdict of one case, including cases that could not be evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Satisfied,
    Violated,
    Vacuous,
    Error,
}

impl From<Verdict> for Outcome {
    fn from(v: Verdict) -> Self {
        match v {
            Verdict::Satisfied => Outcome::Satisfied,
            Verdict::Violated => Outcome::Violated,
            Verdict::Vacuous => Outcome::Vacuous,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Counters {
    pub satisfied: u64,
    pub violated: u64,
    pub vacuous: u64,
    pub errors: u64,
}

impl Counters {
    #[inline]
    pub fn record(&mut self, outcome: Outcome) {
        match outcome {
            Outcome::Satisfied => self.satisfied += 1,
            Outcome::Violated => self.violated += 1,
            Outcome::Vacuous => self.vacuous += 1,
            Outcome::Error => self.errors += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.satisfied + self.violated + self.vacuous + self.errors
    }

    /// Violated plus satisfied; vacuous and failed cases are excluded.
    pub fn denominator(&self) -> u64 {
        self.satisfied + self.violated
    }

    /// `None` when no case was decided.
    pub fn proportion(&self) -> Option<f64> {
        let d = self.denominator();
        (d > 0).then(|| self.violated as f64 / d as f64)
    }
}

impl AddAssign for Counters {
    fn add_assign(&mut self, o: Self) {
        self.satisfied += o.satisfied;
        self.violated += o.violated;
        self.vacuous += o.vacuous;
        self.errors += o.errors;
    }
}

impl std::iter::Sum for Counters {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Counters::default(), |mut a, b| {
            a += b;
            a
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPlan {
    pub label: String,
    pub plan: RelationPlan,
}

impl LabeledPlan {
    /// Labels the plan by its transformation, or by its class.
    pub fn new(plan: RelationPlan) -> Self {
        let label = match &plan {
            RelationPlan::SingleInput { transform, .. } | RelationPlan::PairwiseSystematicity { transform, .. } => {
                transform.describe()
            }
            other => other.class().name().to_string(),
        };
        Self { label, plan }
    }

    pub fn labeled(label: impl Into<String>, plan: RelationPlan) -> Self {
        Self { label: label.into(), plan }
    }
}

/// Source inputs sharing an enumeration, with the plans run over them. A
/// partition is a context in template experiments and a language in lexical
/// ones.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub label: String,
    pub sources: Vec<TextInput>,
    /// Per-source keys for by-insertion-pair grouping.
    pub insertion_keys: Option<Vec<String>>,
    pub plans: Vec<LabeledPlan>,
    pub mode: EnumerationMode,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TestSuite {
    pub partitions: Vec<Partition>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EngineConfig {
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    /// Abort on the first model or case failure instead of counting it.
    pub fail_fast: bool,
    /// Retain one record per case.
    pub keep_records: bool,
    /// Ranks per work unit.
    pub chunk_size: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self { workers: 0, fail_fast: false, keep_records: false, chunk_size: 1 << 16 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CaseRecord {
    pub partition: usize,
    pub plan: usize,
    pub tuple: Tuple,
    pub outcome: Outcome,
    /// `None` when the case failed before its premise was known.
    pub premise: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanResult {
    pub label: String,
    pub counters: Counters,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionResult {
    pub label: String,
    pub plans: Vec<PlanResult>,
    pub source_ids: Vec<String>,
    pub insertion_keys: Option<Vec<String>>,
    /// Cases each source took part in, over all plans, counted once per case.
    pub per_source: Vec<Counters>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerdictSet {
    pub model_id: String,
    pub partitions: Vec<PartitionResult>,
    pub records: Option<Vec<CaseRecord>>,
}

impl VerdictSet {
    pub fn totals(&self) -> Counters {
        self.partitions.iter().flat_map(|p| &p.plans).map(|p| p.counters).sum()
    }

    /// Per-plan counters recomputed from retained records.
    pub fn recount(&self) -> Option<Vec<Vec<Counters>>> {
        let records = self.records.as_ref()?;
        let mut out: Vec<Vec<Counters>> =
            self.partitions.iter().map(|p| vec![Counters::default(); p.plans.len()]).collect();
        for r in records {
            out[r.partition][r.plan].record(r.outcome);
        }
        Some(out)
    }
}

type SlotRef = Result<EntryId, Arc<str>>;

enum PairTable {
    Dense { k: usize, cells: Vec<Option<SlotRef>> },
    Sparse(HashMap<(usize, usize), SlotRef>),
}

impl PairTable {
    fn new(k: usize) -> Self {
        if k.checked_mul(k).is_some_and(|n| n <= 1 << 24) {
            PairTable::Dense { k, cells: vec![None; k * k] }
        } else {
            PairTable::Sparse(HashMap::new())
        }
    }

    fn contains(&self, i: usize, j: usize) -> bool {
        match self {
            PairTable::Dense { k, cells } => cells[i * k + j].is_some(),
            PairTable::Sparse(m) => m.contains_key(&(i, j)),
        }
    }

    fn set(&mut self, i: usize, j: usize, v: SlotRef) {
        match self {
            PairTable::Dense { k, cells } => cells[i * *k + j] = Some(v),
            PairTable::Sparse(m) => {
                m.insert((i, j), v);
            }
        }
    }

    fn get(&self, i: usize, j: usize) -> Option<&SlotRef> {
        match self {
            PairTable::Dense { k, cells } => cells[i * k + j].as_ref(),
            PairTable::Sparse(m) => m.get(&(i, j)),
        }
    }
}

enum Layout {
    /// Slot `s` reads `columns[c][tuple[p]]` for `slots[s] = (p, c)`.
    Columns { slots: Vec<(usize, usize)>, columns: Vec<Vec<SlotRef>> },
    /// Slot `s` reads the pair `(tuple[a], tuple[b])` for `slots[s] = (a, b)`.
    Pairs { slots: Vec<(usize, usize)>, table: PairTable },
}

struct CompiledPlan {
    label: String,
    group: String,
    premise: PropertyExpr,
    hypothesis: PropertyExpr,
    connective: Connective,
    layout: Layout,
}

struct PreparedPartition {
    label: String,
    source_ids: Vec<String>,
    insertion_keys: Option<Vec<String>>,
    k: usize,
    mode: EnumerationMode,
    ranks: Option<Vec<u64>>,
    selected: u64,
    plans: Vec<CompiledPlan>,
}

/// A suite with its scores cached, ready for evaluation.
pub struct Prepared {
    model_id: String,
    cache: ScoreCache,
    partitions: Vec<PreparedPartition>,
    fill: FillStats,
}

impl Prepared {
    pub fn cache(&self) -> &ScoreCache {
        &self.cache
    }

    pub fn fill_stats(&self) -> FillStats {
        self.fill
    }

    /// Cases an evaluation will visit.
    pub fn case_count(&self) -> u64 {
        self.partitions.iter().map(|p| p.selected * p.plans.len() as u64).sum()
    }
}

fn group_key(partition: &str, plan: &str) -> String {
    if partition.is_empty() {
        plan.to_string()
    } else {
        format!("{partition}/{plan}")
    }
}

struct Evaluated {
    outcome: Outcome,
    premise: Option<bool>,
    error: Option<String>,
}

impl CompiledPlan {
    #[inline]
    fn slot(&self, t: &Tuple, s: usize) -> Result<EntryId, &str> {
        let r = match &self.layout {
            Layout::Columns { slots, columns } => {
                let (p, c) = slots[s];
                &columns[c][t[p]]
            }
            Layout::Pairs { slots, table } => {
                let (a, b) = slots[s];
                match table.get(t[a], t[b]) {
                    Some(r) => r,
                    None => return Err("pair was not prepared"),
                }
            }
        };
        r.as_ref().map(|id| *id).map_err(|e| &**e)
    }

    fn arity(&self) -> usize {
        match &self.layout {
            Layout::Columns { slots, .. } | Layout::Pairs { slots, .. } => slots.len(),
        }
    }

    #[inline]
    fn outputs<'c>(&self, cache: &'c ScoreCache, t: &Tuple) -> Result<([&'c ScoreVector; 4], usize), String> {
        let n = self.arity();
        let first = cache.get(self.slot(t, 0)?)?;
        let mut out = [first; 4];
        for (s, o) in out.iter_mut().enumerate().take(n).skip(1) {
            *o = cache.get(self.slot(t, s)?)?;
        }
        Ok((out, n))
    }

    #[inline]
    fn evaluate(&self, cache: &ScoreCache, t: &Tuple) -> Evaluated {
        let fail = |e: String, premise| Evaluated { outcome: Outcome::Error, premise, error: Some(e) };
        let (outs, n) = match self.outputs(cache, t) {
            Ok(o) => o,
            Err(e) => return fail(e, None),
        };
        let outs = &outs[..n];
        let premise = match self.premise.eval(outs) {
            Ok(p) => p,
            Err(e) => return fail(e.to_string(), None),
        };
        match verdict_given_premise(premise, &self.hypothesis, self.connective, outs) {
            Ok(v) => Evaluated { outcome: v.into(), premise: Some(premise), error: None },
            Err(e) => fail(e.to_string(), Some(premise)),
        }
    }

    fn premise(&self, cache: &ScoreCache, t: &Tuple) -> Result<bool, String> {
        let (outs, n) = self.outputs(cache, t)?;
        self.premise.eval(&outs[..n]).map_err(|e| e.to_string())
    }
}

struct Unit {
    partition: usize,
    plan: usize,
    start: u64,
    len: u64,
}

struct UnitOut {
    counters: Counters,
    per_source: Vec<Counters>,
    lines: Vec<u8>,
    records: Vec<CaseRecord>,
    error: Option<EngineError>,
}

#[derive(Serialize)]
struct CaseLine<'a> {
    tuple: Vec<&'a str>,
    group: &'a str,
    verdict: Outcome,
}

pub struct Engine {
    config: EngineConfig,
    pool: rayon::ThreadPool,
}

impl Engine {
    pub fn new(config: EngineConfig) -> Result<Self, EngineError> {
        if config.chunk_size == 0 {
            return Err(EngineError::Config("chunk size must be positive".into()));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| EngineError::Config(format!("worker pool: {e}")))?;
        Ok(Self { config, pool })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn workers(&self) -> usize {
        self.pool.current_num_threads()
    }

    /// Runs one plan over a dataset.
    pub fn run(
        &self,
        plan: &RelationPlan,
        dataset: &Dataset,
        mode: EnumerationMode,
        port: &dyn ModelPort,
    ) -> Result<VerdictSet, EngineError> {
        let suite = TestSuite {
            partitions: vec![Partition {
                label: String::new(),
                sources: dataset.entries().to_vec(),
                insertion_keys: None,
                plans: vec![LabeledPlan::new(plan.clone())],
                mode,
            }],
        };
        self.run_suite(&suite, port, None)
    }

    pub fn run_suite(
        &self,
        suite: &TestSuite,
        port: &dyn ModelPort,
        sink: Option<&mut dyn Write>,
    ) -> Result<VerdictSet, EngineError> {
        let prepared = self.prepare(suite, port)?;
        self.evaluate(&prepared, sink)
    }

    /// Scoring phase.
    pub fn prepare(&self, suite: &TestSuite, port: &dyn ModelPort) -> Result<Prepared, EngineError> {
        let mut cache = ScoreCache::new();
        let mut partitions = Vec::with_capacity(suite.partitions.len());
        for part in &suite.partitions {
            let ranks = enumerate::selected_ranks(&part.mode, part.sources.len())?;
            partitions.push(self.compile_partition(part, ranks, &mut cache)?);
        }
        let fill = cache.fill(port, self.config.fail_fast)?;
        tracing::info!(entries = cache.len(), texts = cache.unique_texts(), batches = fill.batches, "scoring phase done");
        Ok(Prepared { model_id: port.model_id(), cache, partitions, fill })
    }

    fn compile_partition(
        &self,
        part: &Partition,
        ranks: Option<Vec<u64>>,
        cache: &mut ScoreCache,
    ) -> Result<PreparedPartition, EngineError> {
        let k = part.sources.len();
        if let Some(keys) = &part.insertion_keys {
            if keys.len() != k {
                return Err(EngineError::Config(format!(
                    "partition `{}` has {} insertion keys for {k} sources",
                    part.label,
                    keys.len()
                )));
            }
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = part.sources.iter().find(|s| !seen.insert(s.id.as_str())) {
            return Err(EngineError::Config(format!("duplicate source id `{}` in partition `{}`", dup.id, part.label)));
        }
        let selected = match &ranks {
            Some(r) => r.len() as u64,
            None => part.mode.count(k)?,
        };
        let fail = |e: &dyn std::fmt::Display| -> SlotRef { Err(Arc::from(e.to_string())) };
        let mut plans = Vec::with_capacity(part.plans.len());
        for lp in &part.plans {
            let plan = &lp.plan;
            plan.validate()?;
            let class = plan.class();
            if class.source_arity() != part.mode.shape.arity() {
                return Err(EngineError::Config(format!(
                    "plan `{}` ({}) takes {} sources but the enumeration shape {} yields {}",
                    lp.label,
                    class.name(),
                    class.source_arity(),
                    part.mode.shape,
                    part.mode.shape.arity()
                )));
            }
            let view = plan.output_view();
            let layout = match plan {
                RelationPlan::SingleInput { transform, .. } | RelationPlan::PairwiseSystematicity { transform, .. } => {
                    let src: Vec<SlotRef> = part.sources.iter().map(|x| Ok(cache.register(&x.text, view))).collect();
                    let fol: Vec<SlotRef> = part
                        .sources
                        .iter()
                        .map(|x| match transform.apply(x) {
                            Ok(y) => Ok(cache.register(&y.text, view)),
                            Err(e) => fail(&e),
                        })
                        .collect();
                    let slots = if class == PlanClass::SingleInput {
                        vec![(0, 0), (0, 1)]
                    } else {
                        vec![(0, 0), (1, 0), (0, 1), (1, 1)]
                    };
                    Layout::Columns { slots, columns: vec![src, fol] }
                }
                RelationPlan::PairwiseCompositionality { .. } => {
                    let hid: Vec<SlotRef> = part
                        .sources
                        .iter()
                        .map(|x| match plan.hidden_view_for(x) {
                            Ok(h) => Ok(cache.register(&x.text, &h)),
                            Err(e) => fail(&e),
                        })
                        .collect();
                    let out: Vec<SlotRef> = part.sources.iter().map(|x| Ok(cache.register(&x.text, view))).collect();
                    Layout::Columns { slots: vec![(0, 0), (1, 0), (0, 1), (1, 1)], columns: vec![hid, out] }
                }
                RelationPlan::ThreeWayTransitivity { separator, .. } => {
                    let mut table = PairTable::new(k);
                    let mut add = |i: usize, j: usize, table: &mut PairTable| {
                        if !table.contains(i, j) {
                            let text = form_pair(&part.sources[i], &part.sources[j], separator).text;
                            table.set(i, j, Ok(cache.register(&text, view)));
                        }
                    };
                    match &ranks {
                        None => {
                            for i in 0..k {
                                for j in 0..k {
                                    if i != j || part.mode.allow_self {
                                        add(i, j, &mut table);
                                    }
                                }
                            }
                        }
                        Some(ranks) => {
                            for &r in ranks {
                                let t = unrank(&part.mode, k, r)?;
                                for (a, b) in [(0, 1), (0, 2), (1, 2)] {
                                    add(t[a], t[b], &mut table);
                                }
                            }
                        }
                    }
                    Layout::Pairs { slots: vec![(0, 1), (0, 2), (1, 2)], table }
                }
            };
            let recipe = plan.recipe();
            plans.push(CompiledPlan {
                label: lp.label.clone(),
                group: group_key(&part.label, &lp.label),
                premise: recipe.premise,
                hypothesis: recipe.hypothesis,
                connective: recipe.connective,
                layout,
            });
        }
        Ok(PreparedPartition {
            label: part.label.clone(),
            source_ids: part.sources.iter().map(|s| s.id.clone()).collect(),
            insertion_keys: part.insertion_keys.clone(),
            k,
            mode: part.mode,
            ranks,
            selected,
            plans,
        })
    }

    /// Evaluation phase. With a sink, one JSON line per case is written in
    /// enumeration order.
    pub fn evaluate(&self, prepared: &Prepared, mut sink: Option<&mut dyn Write>) -> Result<VerdictSet, EngineError> {
        let chunk = self.config.chunk_size;
        let mut units = Vec::new();
        for (pi, part) in prepared.partitions.iter().enumerate() {
            for plan in 0..part.plans.len() {
                let mut start = 0;
                while start < part.selected {
                    let len = chunk.min(part.selected - start);
                    units.push(Unit { partition: pi, plan, start, len });
                    start += len;
                }
            }
        }
        let mut results: Vec<PartitionResult> = prepared
            .partitions
            .iter()
            .map(|p| PartitionResult {
                label: p.label.clone(),
                plans: p.plans.iter().map(|c| PlanResult { label: c.label.clone(), counters: Counters::default() }).collect(),
                source_ids: p.source_ids.clone(),
                insertion_keys: p.insertion_keys.clone(),
                per_source: vec![Counters::default(); p.k],
            })
            .collect();
        let mut records = self.config.keep_records.then(Vec::new);
        let emit = sink.is_some();
        let wave = (self.workers() * 4).max(1);
        for batch in units.chunks(wave) {
            let outs: Vec<UnitOut> =
                self.pool.install(|| batch.par_iter().map(|u| self.run_unit(prepared, u, emit)).collect());
            for (u, out) in batch.iter().zip(outs) {
                if let Some(e) = out.error {
                    return Err(e);
                }
                let r = &mut results[u.partition];
                r.plans[u.plan].counters += out.counters;
                for (acc, c) in r.per_source.iter_mut().zip(out.per_source) {
                    *acc += c;
                }
                if let Some(records) = records.as_mut() {
                    records.extend(out.records);
                }
                if let Some(w) = sink.as_deref_mut() {
                    w.write_all(&out.lines)?;
                }
            }
        }
        if let Some(w) = sink {
            w.flush()?;
        }
        Ok(VerdictSet { model_id: prepared.model_id.clone(), partitions: results, records })
    }

    fn run_unit(&self, prepared: &Prepared, u: &Unit, emit: bool) -> UnitOut {
        let part = &prepared.partitions[u.partition];
        let plan = &part.plans[u.plan];
        let mut out = UnitOut {
            counters: Counters::default(),
            per_source: vec![Counters::default(); part.k],
            lines: Vec::new(),
            records: Vec::new(),
            error: None,
        };
        let keep = self.config.keep_records;
        let fail_fast = self.config.fail_fast;
        let mut visit = |t: Tuple| -> bool {
            let e = plan.evaluate(&prepared.cache, &t);
            out.counters.record(e.outcome);
            for s in t.distinct() {
                out.per_source[s].record(e.outcome);
            }
            if keep {
                out.records.push(CaseRecord {
                    partition: u.partition,
                    plan: u.plan,
                    tuple: t,
                    outcome: e.outcome,
                    premise: e.premise,
                });
            }
            if emit {
                let line = CaseLine {
                    tuple: t.as_slice().iter().map(|&i| part.source_ids[i].as_str()).collect(),
                    group: &plan.group,
                    verdict: e.outcome,
                };
                serde_json::to_writer(&mut out.lines, &line).expect("serialising to memory");
                out.lines.push(b'\n');
            }
            if let (true, Some(message)) = (fail_fast, e.error) {
                let ids: Vec<&str> = t.as_slice().iter().map(|&i| part.source_ids[i].as_str()).collect();
                out.error = Some(EngineError::Case { group: plan.group.clone(), tuple: format!("{ids:?}"), message });
                return false;
            }
            true
        };
        match &part.ranks {
            None => match RankRange::new(&part.mode, part.k, u.start, u.len) {
                Ok(range) => {
                    for t in range {
                        if !visit(t) {
                            break;
                        }
                    }
                }
                Err(e) => out.error = Some(e),
            },
            Some(ranks) => {
                for &r in &ranks[u.start as usize..(u.start + u.len) as usize] {
                    match unrank(&part.mode, part.k, r) {
                        Ok(t) => {
                            if !visit(t) {
                                break;
                            }
                        }
                        Err(e) => {
                            out.error = Some(e);
                            break;
                        }
                    }
                }
            }
        }
        out
    }

    /// Keeps the transitivity triplets whose premise holds, in input order.
    pub fn premise_filter(
        &self,
        plan: &RelationPlan,
        dataset: &Dataset,
        triplets: &[Tuple],
        port: &dyn ModelPort,
    ) -> Result<Vec<Tuple>, EngineError> {
        if plan.class() != PlanClass::ThreeWayTransitivity {
            return Err(EngineError::Config("premise filtering needs a three-way transitivity plan".into()));
        }
        let mode = EnumerationMode::exhaustive(Shape::OrderedTriplets);
        let k = dataset.len();
        let mut ranks = triplets.iter().map(|t| rank(&mode, k, t)).collect::<Result<Vec<_>, _>>()?;
        ranks.sort_unstable();
        ranks.dedup();
        let part = Partition {
            label: String::new(),
            sources: dataset.entries().to_vec(),
            insertion_keys: None,
            plans: vec![LabeledPlan::new(plan.clone())],
            mode,
        };
        let mut cache = ScoreCache::new();
        let prepared = self.compile_partition(&part, Some(ranks), &mut cache)?;
        cache.fill(port, self.config.fail_fast)?;
        let compiled = &prepared.plans[0];
        let mut out = Vec::new();
        for t in triplets {
            let holds = compiled.premise(&cache, t).map_err(|message| EngineError::Case {
                group: compiled.group.clone(),
                tuple: format!("{t:?}"),
                message,
            })?;
            if holds {
                out.push(*t);
            }
        }
        Ok(out)
    }
}
