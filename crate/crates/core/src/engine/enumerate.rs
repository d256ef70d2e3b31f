//! Closed-form counting, lexicographic ranking and sampling of index tuples.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::EngineError;
use crate::hash::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Singles,
    OrderedPairs,
    UnorderedPairs,
    OrderedTriplets,
}

impl Shape {
    pub fn arity(self) -> usize {
        match self {
            Shape::Singles => 1,
            Shape::OrderedPairs | Shape::UnorderedPairs => 2,
            Shape::OrderedTriplets => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Shape::Singles => "singles",
            Shape::OrderedPairs => "ordered_pairs",
            Shape::UnorderedPairs => "unordered_pairs",
            Shape::OrderedTriplets => "ordered_triplets",
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum Selection {
    Exhaustive,
    /// `n` distinct tuples drawn uniformly without replacement.
    Sample { n: u64, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnumerationMode {
    pub shape: Shape,
    #[serde(default = "exhaustive")]
    pub selection: Selection,
    /// Admit tuples that repeat an index.
    #[serde(default)]
    pub allow_self: bool,
}

fn exhaustive() -> Selection {
    Selection::Exhaustive
}

impl EnumerationMode {
    pub fn exhaustive(shape: Shape) -> Self {
        Self { shape, selection: Selection::Exhaustive, allow_self: false }
    }

    pub fn sample(shape: Shape, n: u64, seed: u64) -> Self {
        Self { shape, selection: Selection::Sample { n, seed }, allow_self: false }
    }

    pub fn with_self(mut self) -> Self {
        self.allow_self = true;
        self
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if let Selection::Sample { n: 0, .. } = self.selection {
            return Err(EngineError::Config("sample size must be at least 1".into()));
        }
        Ok(())
    }

    /// Number of tuples over `k` items before sampling.
    pub fn count(&self, k: usize) -> Result<u64, EngineError> {
        count(self.shape, k, self.allow_self)
    }

    /// Number of cases a run evaluates.
    pub fn selected(&self, k: usize) -> Result<u64, EngineError> {
        let total = self.count(k)?;
        Ok(match self.selection {
            Selection::Exhaustive => total,
            Selection::Sample { n, .. } => n.min(total),
        })
    }
}

/// Indices of one test case's source inputs.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Tuple {
    items: [usize; 3],
    len: u8,
}

impl Tuple {
    pub fn new(items: &[usize]) -> Self {
        assert!((1..=3).contains(&items.len()), "tuples hold one to three indices");
        let mut t = Tuple { items: [0; 3], len: items.len() as u8 };
        t.items[..items.len()].copy_from_slice(items);
        t
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.items[..self.len as usize]
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Distinct indices, each reported once.
    pub fn distinct(&self) -> impl Iterator<Item = usize> + '_ {
        let s = self.as_slice();
        s.iter().enumerate().filter(move |(p, v)| !s[..*p].contains(v)).map(|(_, v)| *v)
    }
}

impl fmt::Debug for Tuple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.as_slice())
    }
}

impl std::ops::Index<usize> for Tuple {
    type Output = usize;

    fn index(&self, i: usize) -> &usize {
        &self.as_slice()[i]
    }
}

fn mul(values: &[u64]) -> Result<u64, EngineError> {
    values.iter().try_fold(1u64, |acc, &v| acc.checked_mul(v)).ok_or(EngineError::Overflow)
}

pub fn count(shape: Shape, k: usize, allow_self: bool) -> Result<u64, EngineError> {
    let min = if allow_self { 1 } else { shape.arity() };
    if k < min {
        return Err(EngineError::EmptyEnumeration { shape, k });
    }
    let k = k as u64;
    match (shape, allow_self) {
        (Shape::Singles, _) => Ok(k),
        (Shape::OrderedPairs, false) => mul(&[k, k - 1]),
        (Shape::OrderedPairs, true) => mul(&[k, k]),
        (Shape::UnorderedPairs, false) => Ok(mul(&[k, k - 1])? / 2),
        (Shape::UnorderedPairs, true) => Ok(mul(&[k, k + 1])? / 2),
        (Shape::OrderedTriplets, false) => mul(&[k, k - 1, k - 2]),
        (Shape::OrderedTriplets, true) => mul(&[k, k, k]),
    }
}

/// Unordered pairs in the rows before row `i`.
fn rows_before(i: u64, k: u64, allow_self: bool) -> u128 {
    let (i, k) = (u128::from(i), u128::from(k));
    if allow_self {
        i * (2 * k - i + 1) / 2
    } else {
        i * (2 * k - i - 1) / 2
    }
}

/// Tuple at lexicographic position `index`.
pub fn unrank(mode: &EnumerationMode, k: usize, index: u64) -> Result<Tuple, EngineError> {
    let total = mode.count(k)?;
    if index >= total {
        return Err(EngineError::RankOutOfBounds { index, count: total });
    }
    let n = k as u64;
    let s = mode.allow_self;
    let t = match mode.shape {
        Shape::Singles => Tuple::new(&[index as usize]),
        Shape::OrderedPairs if s => Tuple::new(&[(index / n) as usize, (index % n) as usize]),
        Shape::OrderedPairs => {
            let i = index / (n - 1);
            let r = index % (n - 1);
            let j = r + u64::from(r >= i);
            Tuple::new(&[i as usize, j as usize])
        }
        Shape::UnorderedPairs => {
            let b = if s { 2.0 * n as f64 + 1.0 } else { 2.0 * n as f64 - 1.0 };
            let est = ((b - (b * b - 8.0 * index as f64).max(0.0).sqrt()) / 2.0).floor().max(0.0) as u64;
            let mut i = est.min(n - 1);
            let idx = u128::from(index);
            while i > 0 && rows_before(i, n, s) > idx {
                i -= 1;
            }
            while i + 1 < n && rows_before(i + 1, n, s) <= idx {
                i += 1;
            }
            let offset = (idx - rows_before(i, n, s)) as u64;
            let j = i + offset + u64::from(!s);
            Tuple::new(&[i as usize, j as usize])
        }
        Shape::OrderedTriplets if s => {
            Tuple::new(&[(index / (n * n)) as usize, (index / n % n) as usize, (index % n) as usize])
        }
        Shape::OrderedTriplets => {
            let block = (n - 1) * (n - 2);
            let i = index / block;
            let rem = index % block;
            let jr = rem / (n - 2);
            let j = jr + u64::from(jr >= i);
            let mut l = rem % (n - 2);
            let (lo, hi) = (i.min(j), i.max(j));
            if l >= lo {
                l += 1;
            }
            if l >= hi {
                l += 1;
            }
            Tuple::new(&[i as usize, j as usize, l as usize])
        }
    };
    Ok(t)
}

/// Inverse of [`unrank`].
pub fn rank(mode: &EnumerationMode, k: usize, tuple: &Tuple) -> Result<u64, EngineError> {
    let total = mode.count(k)?;
    let t = tuple.as_slice();
    let bad = || EngineError::Config(format!("tuple {t:?} is not a valid {} tuple over {k} items", mode.shape));
    if t.len() != mode.shape.arity() || t.iter().any(|&v| v >= k) {
        return Err(bad());
    }
    let distinct = tuple.distinct().count() == t.len();
    if !mode.allow_self && !distinct {
        return Err(bad());
    }
    let n = k as u64;
    let v: Vec<u64> = t.iter().map(|&x| x as u64).collect();
    let r = match mode.shape {
        Shape::Singles => v[0],
        Shape::OrderedPairs if mode.allow_self => v[0] * n + v[1],
        Shape::OrderedPairs => v[0] * (n - 1) + v[1] - u64::from(v[1] > v[0]),
        Shape::UnorderedPairs => {
            if v[1] < v[0] {
                return Err(bad());
            }
            let offset = v[1] - v[0] - u64::from(!mode.allow_self);
            (rows_before(v[0], n, mode.allow_self) as u64) + offset
        }
        Shape::OrderedTriplets if mode.allow_self => (v[0] * n + v[1]) * n + v[2],
        Shape::OrderedTriplets => {
            let jr = v[1] - u64::from(v[1] > v[0]);
            let lr = v[2] - u64::from(v[2] > v[0]) - u64::from(v[2] > v[1]);
            v[0] * (n - 1) * (n - 2) + jr * (n - 2) + lr
        }
    };
    debug_assert!(r < total);
    Ok(r)
}

/// Lexicographic successor. The caller guarantees one exists.
pub(crate) fn advance(shape: Shape, k: usize, allow_self: bool, t: &mut Tuple) {
    let it = &mut t.items;
    match shape {
        Shape::Singles => it[0] += 1,
        Shape::OrderedPairs => loop {
            it[1] += 1;
            if it[1] == k {
                it[0] += 1;
                it[1] = 0;
            }
            if allow_self || it[0] != it[1] {
                break;
            }
        },
        Shape::UnorderedPairs => {
            it[1] += 1;
            if it[1] == k {
                it[0] += 1;
                it[1] = it[0] + usize::from(!allow_self);
            }
        }
        Shape::OrderedTriplets => loop {
            it[2] += 1;
            if it[2] == k {
                it[2] = 0;
                it[1] += 1;
                if it[1] == k {
                    it[1] = 0;
                    it[0] += 1;
                }
            }
            if allow_self || (it[0] != it[1] && it[0] != it[2] && it[1] != it[2]) {
                break;
            }
        },
    }
}

/// Tuples at ranks `start .. start + len` in order.
pub struct RankRange {
    shape: Shape,
    k: usize,
    allow_self: bool,
    next: Tuple,
    remaining: u64,
}

impl RankRange {
    pub fn new(mode: &EnumerationMode, k: usize, start: u64, len: u64) -> Result<Self, EngineError> {
        let total = mode.count(k)?;
        if start.checked_add(len).is_none_or(|end| end > total) {
            return Err(EngineError::RankOutOfBounds { index: start.saturating_add(len), count: total });
        }
        let next = if len == 0 { Tuple::new(&[0]) } else { unrank(mode, k, start)? };
        Ok(Self { shape: mode.shape, k, allow_self: mode.allow_self, next, remaining: len })
    }
}

impl Iterator for RankRange {
    type Item = Tuple;

    fn next(&mut self) -> Option<Tuple> {
        if self.remaining == 0 {
            return None;
        }
        let out = self.next;
        self.remaining -= 1;
        if self.remaining > 0 {
            advance(self.shape, self.k, self.allow_self, &mut self.next);
        }
        Some(out)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = usize::try_from(self.remaining).unwrap_or(usize::MAX);
        (n, Some(n))
    }
}

/// `n` distinct ranks below `total`, sorted ascending (Floyd's algorithm).
pub fn sample_ranks(total: u64, n: u64, seed: u64) -> Vec<u64> {
    if n >= total {
        return (0..total).collect();
    }
    let mut rng = SplitMix64::new(seed);
    let mut chosen: HashSet<u64> = HashSet::with_capacity(n as usize);
    for j in total - n..total {
        let t = rng.below(j + 1);
        if !chosen.insert(t) {
            chosen.insert(j);
        }
    }
    let mut out: Vec<u64> = chosen.into_iter().collect();
    out.sort_unstable();
    out
}

/// Ranks a mode selects over `k` items: `None` for the full range.
pub fn selected_ranks(mode: &EnumerationMode, k: usize) -> Result<Option<Vec<u64>>, EngineError> {
    mode.validate()?;
    let total = mode.count(k)?;
    Ok(match mode.selection {
        Selection::Exhaustive => None,
        Selection::Sample { n, seed } => Some(sample_ranks(total, n, seed)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SHAPES: [Shape; 4] = [Shape::Singles, Shape::OrderedPairs, Shape::UnorderedPairs, Shape::OrderedTriplets];

    #[test]
    fn closed_forms() {
        assert_eq!(count(Shape::OrderedPairs, 10_605, false).unwrap(), 112_455_420);
        assert_eq!(count(Shape::UnorderedPairs, 292, false).unwrap() * 211, 8_964_546);
        assert_eq!(count(Shape::OrderedTriplets, 3, false).unwrap(), 6);
        assert_eq!(count(Shape::Singles, 7, false).unwrap(), 7);
        assert_eq!(count(Shape::OrderedPairs, 5, true).unwrap(), 25);
        assert_eq!(count(Shape::UnorderedPairs, 5, true).unwrap(), 15);
        assert_eq!(count(Shape::OrderedTriplets, 4, true).unwrap(), 64);
        assert!(matches!(count(Shape::OrderedTriplets, 2, false), Err(EngineError::EmptyEnumeration { .. })));
        assert!(matches!(count(Shape::OrderedPairs, 1, false), Err(EngineError::EmptyEnumeration { .. })));
        assert!(count(Shape::OrderedPairs, 1, true).is_ok());
        assert!(matches!(count(Shape::OrderedTriplets, usize::MAX / 2, false), Err(EngineError::Overflow)));
    }

    #[test]
    fn unrank_examples() {
        let op = EnumerationMode::exhaustive(Shape::OrderedPairs);
        assert_eq!(unrank(&op, 4, 0).unwrap().as_slice(), &[0, 1]);
        assert_eq!(unrank(&op, 4, 11).unwrap().as_slice(), &[3, 2]);
        let up = EnumerationMode::exhaustive(Shape::UnorderedPairs);
        assert_eq!(unrank(&up, 4, 5).unwrap().as_slice(), &[2, 3]);
        assert!(matches!(unrank(&op, 4, 12), Err(EngineError::RankOutOfBounds { index: 12, count: 12 })));
    }

    fn brute(shape: Shape, k: usize, allow_self: bool) -> Vec<Tuple> {
        let mut out = Vec::new();
        let ok = |t: &[usize]| allow_self || t.iter().enumerate().all(|(p, v)| !t[..p].contains(v));
        match shape {
            Shape::Singles => out.extend((0..k).map(|i| Tuple::new(&[i]))),
            Shape::OrderedPairs | Shape::UnorderedPairs => {
                for i in 0..k {
                    for j in 0..k {
                        if shape == Shape::UnorderedPairs && j < i {
                            continue;
                        }
                        if ok(&[i, j]) {
                            out.push(Tuple::new(&[i, j]));
                        }
                    }
                }
            }
            Shape::OrderedTriplets => {
                for i in 0..k {
                    for j in 0..k {
                        for l in 0..k {
                            if ok(&[i, j, l]) {
                                out.push(Tuple::new(&[i, j, l]));
                            }
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn unrank_matches_lexicographic_brute_force() {
        for shape in SHAPES {
            for allow_self in [false, true] {
                let mode = EnumerationMode { shape, selection: Selection::Exhaustive, allow_self };
                for k in 1..=9 {
                    let Ok(total) = mode.count(k) else { continue };
                    let want = brute(shape, k, allow_self);
                    assert_eq!(want.len() as u64, total, "{shape} k={k} self={allow_self}");
                    let got: Vec<Tuple> = (0..total).map(|i| unrank(&mode, k, i).unwrap()).collect();
                    assert_eq!(got, want, "{shape} k={k} self={allow_self}");
                    let seq: Vec<Tuple> = RankRange::new(&mode, k, 0, total).unwrap().collect();
                    assert_eq!(seq, want);
                    for (i, t) in want.iter().enumerate() {
                        assert_eq!(rank(&mode, k, t).unwrap(), i as u64);
                    }
                }
            }
        }
    }

    #[test]
    fn rank_rejects_invalid_tuples() {
        let op = EnumerationMode::exhaustive(Shape::OrderedPairs);
        assert!(rank(&op, 4, &Tuple::new(&[1, 1])).is_err());
        assert!(rank(&op, 4, &Tuple::new(&[1, 4])).is_err());
        assert!(rank(&op, 4, &Tuple::new(&[1])).is_err());
        let up = EnumerationMode::exhaustive(Shape::UnorderedPairs);
        assert!(rank(&up, 4, &Tuple::new(&[2, 1])).is_err());
    }

    #[test]
    fn large_unordered_unrank_is_exact() {
        let up = EnumerationMode::exhaustive(Shape::UnorderedPairs);
        let k = 3_000_000;
        let total = up.count(k).unwrap();
        for idx in [0, 1, k as u64 - 2, k as u64 - 1, total / 2, total - 2, total - 1] {
            let t = unrank(&up, k, idx).unwrap();
            assert_eq!(rank(&up, k, &t).unwrap(), idx);
        }
    }

    #[test]
    fn samples_are_sorted_distinct_and_deterministic() {
        let s = sample_ranks(1000, 100, 9);
        assert_eq!(s.len(), 100);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert!(s.iter().all(|&r| r < 1000));
        assert_eq!(s, sample_ranks(1000, 100, 9));
        assert_ne!(s, sample_ranks(1000, 100, 10));
        assert_eq!(sample_ranks(5, 10, 1), vec![0, 1, 2, 3, 4]);
        let mode = EnumerationMode::sample(Shape::OrderedPairs, 0, 1);
        assert!(mode.validate().is_err());
    }

    #[test]
    fn tuple_distinct() {
        assert_eq!(Tuple::new(&[2, 2, 1]).distinct().collect::<Vec<_>>(), vec![2, 1]);
        assert_eq!(format!("{:?}", Tuple::new(&[0, 1])), "[0, 1]");
    }

    #[test]
    fn mode_json() {
        let m: EnumerationMode = serde_json::from_str(r#"{"shape":"ordered_pairs"}"#).unwrap();
        assert_eq!(m, EnumerationMode::exhaustive(Shape::OrderedPairs));
        let m: EnumerationMode =
            serde_json::from_str(r#"{"shape":"ordered_triplets","selection":{"kind":"sample","n":5,"seed":2}}"#).unwrap();
        assert_eq!(m.selection, Selection::Sample { n: 5, seed: 2 });
        assert!(serde_json::from_str::<EnumerationMode>(r#"{"shape":"pairs"}"#).is_err());
    }

    proptest! {
        #[test]
        fn range_iteration_matches_unrank(k in 3usize..40, start_frac in 0.0f64..1.0, len in 0u64..200, shape_i in 0usize..4, allow_self: bool) {
            let mode = EnumerationMode { shape: SHAPES[shape_i], selection: Selection::Exhaustive, allow_self };
            let total = mode.count(k).unwrap();
            let start = ((total as f64) * start_frac) as u64;
            let len = len.min(total - start);
            let got: Vec<Tuple> = RankRange::new(&mode, k, start, len).unwrap().collect();
            let want: Vec<Tuple> = (start..start + len).map(|i| unrank(&mode, k, i).unwrap()).collect();
            prop_assert_eq!(got, want);
        }

        #[test]
        fn rank_inverts_unrank(k in 3usize..5000, frac in 0.0f64..1.0, shape_i in 0usize..4, allow_self: bool) {
            let mode = EnumerationMode { shape: SHAPES[shape_i], selection: Selection::Exhaustive, allow_self };
            let total = mode.count(k).unwrap();
            let idx = (((total as f64) * frac) as u64).min(total - 1);
            let t = unrank(&mode, k, idx).unwrap();
            prop_assert_eq!(rank(&mode, k, &t).unwrap(), idx);
        }
    }
}
