//! Decidable output properties over a tuple of model outputs.
//!
//! Atoms compare outputs by predicted class ([`PropertyExpr::Eq`]), cosine
//! similarity ([`PropertyExpr::Sim`]), a strict order on a scalar score
//! ([`PropertyExpr::Ord`]) or a Boolean prediction ([`PropertyExpr::Pred`]).
//! Slots are indices into the output tuple supplied to [`PropertyExpr::eval`].

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::probe::LinearProbe;
use crate::types::{cosine_similarity, predicted_class, ScoreKind, ScoreVector};

pub const DEFAULT_SIM_THRESHOLD: f64 = 0.9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("slot {slot} is not bound (tuple has {bound} outputs)")]
    UnboundSlot { slot: usize, bound: usize },
    #[error("slot {slot}: {reason}")]
    Atom { slot: usize, reason: String },
}

/// How a scalar score is read off one output.
#[derive(Debug, Clone, PartialEq)]
pub enum Extraction {
    SoftmaxComponent(usize),
    Probe(Arc<LinearProbe>),
    ScalarPassthrough,
}

/// A named order score such as `s_pos`, `s_ent` or `s_hyp`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreView {
    pub name: String,
    pub extraction: Extraction,
}

impl ScoreView {
    pub fn softmax_component(name: impl Into<String>, index: usize) -> Self {
        Self { name: name.into(), extraction: Extraction::SoftmaxComponent(index) }
    }

    pub fn probe(name: impl Into<String>, probe: Arc<LinearProbe>) -> Self {
        Self { name: name.into(), extraction: Extraction::Probe(probe) }
    }

    pub fn scalar(name: impl Into<String>) -> Self {
        Self { name: name.into(), extraction: Extraction::ScalarPassthrough }
    }

    pub fn extract(&self, y: &ScoreVector) -> Result<f64, String> {
        match &self.extraction {
            Extraction::SoftmaxComponent(i) => {
                if y.kind() != ScoreKind::Softmax {
                    return Err(format!("{} needs a softmax output, got {}", self.name, y.kind()));
                }
                y.values()
                    .get(*i)
                    .copied()
                    .ok_or_else(|| format!("{}: component {i} out of {} classes", self.name, y.len()))
            }
            Extraction::Probe(p) => {
                if y.kind() == ScoreKind::Softmax {
                    return Err(format!("{} needs a hidden or embedding output", self.name));
                }
                p.score(y).map_err(|e| format!("{}: {e}", self.name))
            }
            Extraction::ScalarPassthrough => {
                if y.kind() != ScoreKind::Scalar {
                    return Err(format!("{} needs a scalar output, got {}", self.name, y.kind()));
                }
                Ok(y.values()[0])
            }
        }
    }
}

/// A Boolean prediction: true when the predicted class is `class_index`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BooleanPredicate {
    pub name: String,
    pub class_index: usize,
}

impl BooleanPredicate {
    pub fn new(name: impl Into<String>, class_index: usize) -> Self {
        Self { name: name.into(), class_index }
    }

    pub fn holds(&self, y: &ScoreVector) -> Result<bool, String> {
        if self.class_index >= y.len() {
            return Err(format!("{}: class {} out of {} classes", self.name, self.class_index, y.len()));
        }
        predicted_class(y).map(|c| c == self.class_index).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PropertyExpr {
    Const(bool),
    /// Same predicted class.
    Eq(usize, usize),
    /// Cosine similarity strictly above `theta`.
    Sim { a: usize, b: usize, theta: f64 },
    /// `view(a) < view(b)`, strict.
    Ord { view: Arc<ScoreView>, a: usize, b: usize },
    Pred { predicate: Arc<BooleanPredicate>, slot: usize },
    Not(Box<PropertyExpr>),
    And(Box<PropertyExpr>, Box<PropertyExpr>),
    Or(Box<PropertyExpr>, Box<PropertyExpr>),
    Implies(Box<PropertyExpr>, Box<PropertyExpr>),
    Iff(Box<PropertyExpr>, Box<PropertyExpr>),
}

impl PropertyExpr {
    pub fn ord(view: &Arc<ScoreView>, a: usize, b: usize) -> Self {
        PropertyExpr::Ord { view: Arc::clone(view), a, b }
    }

    pub fn pred(predicate: &Arc<BooleanPredicate>, slot: usize) -> Self {
        PropertyExpr::Pred { predicate: Arc::clone(predicate), slot }
    }

    pub fn sim(a: usize, b: usize, theta: f64) -> Self {
        PropertyExpr::Sim { a, b, theta }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(self) -> Self {
        PropertyExpr::Not(Box::new(self))
    }

    pub fn and(self, rhs: Self) -> Self {
        PropertyExpr::And(Box::new(self), Box::new(rhs))
    }

    pub fn or(self, rhs: Self) -> Self {
        PropertyExpr::Or(Box::new(self), Box::new(rhs))
    }

    pub fn implies(self, rhs: Self) -> Self {
        PropertyExpr::Implies(Box::new(self), Box::new(rhs))
    }

    pub fn iff(self, rhs: Self) -> Self {
        PropertyExpr::Iff(Box::new(self), Box::new(rhs))
    }

    /// Highest slot referenced, if any.
    pub fn max_slot(&self) -> Option<usize> {
        match self {
            PropertyExpr::Const(_) => None,
            PropertyExpr::Eq(a, b) | PropertyExpr::Sim { a, b, .. } | PropertyExpr::Ord { a, b, .. } => {
                Some(*a.max(b))
            }
            PropertyExpr::Pred { slot, .. } => Some(*slot),
            PropertyExpr::Not(e) => e.max_slot(),
            PropertyExpr::And(l, r) | PropertyExpr::Or(l, r) | PropertyExpr::Implies(l, r) | PropertyExpr::Iff(l, r) => {
                match (l.max_slot(), r.max_slot()) {
                    (Some(x), Some(y)) => Some(x.max(y)),
                    (x, y) => x.or(y),
                }
            }
        }
    }

    /// Checks that every slot is below `arity` and every threshold finite.
    pub fn validate(&self, arity: usize) -> Result<(), EvalError> {
        if let Some(s) = self.max_slot() {
            if s >= arity {
                return Err(EvalError::UnboundSlot { slot: s, bound: arity });
            }
        }
        self.check_thresholds()
    }

    fn check_thresholds(&self) -> Result<(), EvalError> {
        match self {
            PropertyExpr::Sim { a, theta, .. } if !theta.is_finite() => {
                Err(EvalError::Atom { slot: *a, reason: format!("non-finite threshold {theta}") })
            }
            PropertyExpr::Not(e) => e.check_thresholds(),
            PropertyExpr::And(l, r) | PropertyExpr::Or(l, r) | PropertyExpr::Implies(l, r) | PropertyExpr::Iff(l, r) => {
                l.check_thresholds()?;
                r.check_thresholds()
            }
            _ => Ok(()),
        }
    }

    /// Renumbers slots: slot `i` becomes `map[i]`.
    pub fn remap(&self, map: &[usize]) -> Self {
        let m = |s: &usize| map[*s];
        match self {
            PropertyExpr::Const(c) => PropertyExpr::Const(*c),
            PropertyExpr::Eq(a, b) => PropertyExpr::Eq(m(a), m(b)),
            PropertyExpr::Sim { a, b, theta } => PropertyExpr::Sim { a: m(a), b: m(b), theta: *theta },
            PropertyExpr::Ord { view, a, b } => PropertyExpr::Ord { view: Arc::clone(view), a: m(a), b: m(b) },
            PropertyExpr::Pred { predicate, slot } => PropertyExpr::Pred { predicate: Arc::clone(predicate), slot: m(slot) },
            PropertyExpr::Not(e) => PropertyExpr::Not(Box::new(e.remap(map))),
            PropertyExpr::And(l, r) => PropertyExpr::And(Box::new(l.remap(map)), Box::new(r.remap(map))),
            PropertyExpr::Or(l, r) => PropertyExpr::Or(Box::new(l.remap(map)), Box::new(r.remap(map))),
            PropertyExpr::Implies(l, r) => PropertyExpr::Implies(Box::new(l.remap(map)), Box::new(r.remap(map))),
            PropertyExpr::Iff(l, r) => PropertyExpr::Iff(Box::new(l.remap(map)), Box::new(r.remap(map))),
        }
    }

    pub fn eval(&self, outputs: &[&ScoreVector]) -> Result<bool, EvalError> {
        let get = |slot: usize| -> Result<&ScoreVector, EvalError> {
            outputs.get(slot).copied().ok_or(EvalError::UnboundSlot { slot, bound: outputs.len() })
        };
        let atom = |slot: usize| move |reason: String| EvalError::Atom { slot, reason };
        Ok(match self {
            PropertyExpr::Const(c) => *c,
            PropertyExpr::Eq(a, b) => {
                let ca = predicted_class(get(*a)?).map_err(|e| atom(*a)(e.to_string()))?;
                let cb = predicted_class(get(*b)?).map_err(|e| atom(*b)(e.to_string()))?;
                ca == cb
            }
            PropertyExpr::Sim { a, b, theta } => {
                cosine_similarity(get(*a)?, get(*b)?).map_err(|e| atom(*a)(e.to_string()))? > *theta
            }
            PropertyExpr::Ord { view, a, b } => {
                let sa = view.extract(get(*a)?).map_err(atom(*a))?;
                let sb = view.extract(get(*b)?).map_err(atom(*b))?;
                sa < sb
            }
            PropertyExpr::Pred { predicate, slot } => predicate.holds(get(*slot)?).map_err(atom(*slot))?,
            PropertyExpr::Not(e) => !e.eval(outputs)?,
            PropertyExpr::And(l, r) => l.eval(outputs)? && r.eval(outputs)?,
            PropertyExpr::Or(l, r) => l.eval(outputs)? || r.eval(outputs)?,
            PropertyExpr::Implies(l, r) => !l.eval(outputs)? || r.eval(outputs)?,
            PropertyExpr::Iff(l, r) => l.eval(outputs)? == r.eval(outputs)?,
        })
    }
}

impl fmt::Display for PropertyExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PropertyExpr::Const(c) => write!(f, "{c}"),
            PropertyExpr::Eq(a, b) => write!(f, "eq(y{a}, y{b})"),
            PropertyExpr::Sim { a, b, theta } => write!(f, "sim(y{a}, y{b}) > {theta}"),
            PropertyExpr::Ord { view, a, b } => write!(f, "{0}(y{a}) < {0}(y{b})", view.name),
            PropertyExpr::Pred { predicate, slot } => write!(f, "{}(y{slot})", predicate.name),
            PropertyExpr::Not(e) => write!(f, "¬({e})"),
            PropertyExpr::And(l, r) => write!(f, "({l} ∧ {r})"),
            PropertyExpr::Or(l, r) => write!(f, "({l} ∨ {r})"),
            PropertyExpr::Implies(l, r) => write!(f, "({l} ⇒ {r})"),
            PropertyExpr::Iff(l, r) => write!(f, "({l} ⇔ {r})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Connective {
    Implies,
    Iff,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Satisfied,
    Violated,
    /// The premise is false under implication.
    Vacuous,
}

/// Combines a premise and a hypothesis into a tri-state verdict.
pub fn verdict(
    premise: &PropertyExpr,
    hypothesis: &PropertyExpr,
    connective: Connective,
    outputs: &[&ScoreVector],
) -> Result<Verdict, EvalError> {
    let p = premise.eval(outputs)?;
    verdict_given_premise(p, hypothesis, connective, outputs)
}

/// As [`verdict`], with the premise already evaluated.
pub fn verdict_given_premise(
    premise: bool,
    hypothesis: &PropertyExpr,
    connective: Connective,
    outputs: &[&ScoreVector],
) -> Result<Verdict, EvalError> {
    match connective {
        Connective::Implies => {
            if !premise {
                return Ok(Verdict::Vacuous);
            }
            Ok(if hypothesis.eval(outputs)? { Verdict::Satisfied } else { Verdict::Violated })
        }
        Connective::Iff => {
            Ok(if premise == hypothesis.eval(outputs)? { Verdict::Satisfied } else { Verdict::Violated })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sm(v: &[f64]) -> ScoreVector {
        ScoreVector::softmax(v.to_vec()).unwrap()
    }

    fn c(b: bool) -> PropertyExpr {
        PropertyExpr::Const(b)
    }

    #[test]
    fn eq_atom_compares_predicted_classes() {
        let a = sm(&[0.2, 0.8]);
        let b = sm(&[0.4, 0.6]);
        let d = sm(&[0.9, 0.1]);
        assert!(PropertyExpr::Eq(0, 1).eval(&[&a, &b]).unwrap());
        assert!(!PropertyExpr::Eq(0, 1).eval(&[&a, &d]).unwrap());
    }

    #[test]
    fn ord_atom_is_strict() {
        let s = Arc::new(ScoreView::softmax_component("s0", 0));
        let lo = sm(&[0.3, 0.7]);
        let hi = sm(&[0.7, 0.3]);
        assert!(PropertyExpr::ord(&s, 0, 1).eval(&[&lo, &hi]).unwrap());
        assert!(!PropertyExpr::ord(&s, 0, 1).eval(&[&hi, &lo]).unwrap());
        assert!(!PropertyExpr::ord(&s, 0, 1).eval(&[&lo, &lo]).unwrap());
    }

    #[test]
    fn implication_with_false_premise() {
        let anything = PropertyExpr::Eq(0, 1);
        assert!(c(false).implies(anything).eval(&[]).unwrap());
    }

    #[test]
    fn sim_atom_threshold() {
        let a = ScoreVector::embedding(vec![1.0, 0.0]);
        let b = ScoreVector::embedding(vec![1.0, 0.1]);
        assert!(PropertyExpr::sim(0, 1, DEFAULT_SIM_THRESHOLD).eval(&[&a, &b]).unwrap());
        assert!(!PropertyExpr::sim(0, 1, 0.999).eval(&[&a, &b]).unwrap());
    }

    #[test]
    fn pred_atom() {
        let v = Arc::new(BooleanPredicate::new("v_hyp", 2));
        let y = sm(&[0.1, 0.1, 0.8]);
        let n = sm(&[0.8, 0.1, 0.1]);
        assert!(PropertyExpr::pred(&v, 0).eval(&[&y]).unwrap());
        assert!(!PropertyExpr::pred(&v, 0).eval(&[&n]).unwrap());
        let two = sm(&[0.5, 0.5]);
        assert!(PropertyExpr::pred(&v, 0).eval(&[&two]).is_err());
    }

    #[test]
    fn atom_errors_carry_slot() {
        let e = ScoreVector::embedding(vec![1.0, 0.0]);
        let s = sm(&[0.5, 0.5]);
        assert_eq!(
            PropertyExpr::Eq(0, 1).eval(&[&s, &e]).unwrap_err(),
            EvalError::Atom { slot: 1, reason: "expected a softmax vector, found embedding".into() }
        );
        assert!(matches!(PropertyExpr::Eq(0, 3).eval(&[&s]), Err(EvalError::UnboundSlot { slot: 3, .. })));
        let z = ScoreVector::embedding(vec![0.0, 0.0]);
        assert!(matches!(PropertyExpr::sim(0, 1, 0.5).eval(&[&z, &e]), Err(EvalError::Atom { .. })));
    }

    #[test]
    fn validate_rejects_unbound_and_nonfinite() {
        assert!(PropertyExpr::Eq(0, 2).validate(2).is_err());
        assert!(PropertyExpr::sim(0, 1, f64::NAN).validate(2).is_err());
        assert!(PropertyExpr::Eq(0, 1).and(PropertyExpr::sim(0, 1, 0.9)).validate(2).is_ok());
    }

    #[test]
    fn remap_moves_slots() {
        let s = Arc::new(ScoreView::softmax_component("s", 1));
        let e = PropertyExpr::ord(&s, 0, 1).remap(&[2, 3]);
        assert_eq!(e, PropertyExpr::ord(&s, 2, 3));
        assert_eq!(e.max_slot(), Some(3));
    }

    #[test]
    fn truth_tables() {
        for p in [false, true] {
            assert_eq!(c(p).not().eval(&[]).unwrap(), !p);
            for q in [false, true] {
                assert_eq!(c(p).and(c(q)).eval(&[]).unwrap(), p && q);
                assert_eq!(c(p).or(c(q)).eval(&[]).unwrap(), p || q);
                assert_eq!(c(p).implies(c(q)).eval(&[]).unwrap(), !p || q);
                assert_eq!(c(p).iff(c(q)).eval(&[]).unwrap(), p == q);
            }
        }
    }

    #[test]
    fn verdict_contract() {
        use Connective::*;
        use Verdict::*;
        let cases = [
            (true, true, Implies, Satisfied),
            (true, false, Implies, Violated),
            (false, true, Implies, Vacuous),
            (false, false, Implies, Vacuous),
            (true, true, Iff, Satisfied),
            (true, false, Iff, Violated),
            (false, true, Iff, Violated),
            (false, false, Iff, Satisfied),
        ];
        for (p, h, conn, expected) in cases {
            assert_eq!(verdict(&c(p), &c(h), conn, &[]).unwrap(), expected, "{p} {h} {conn:?}");
        }
    }

    #[test]
    fn scalar_and_probe_views() {
        let probe = Arc::new(LinearProbe::new(vec![1.0, -1.0], 0.0));
        let s_hyp = Arc::new(ScoreView::probe("s_hyp", probe));
        let z1 = ScoreVector::embedding(vec![0.0, 1.0]);
        let z2 = ScoreVector::embedding(vec![1.0, 0.0]);
        assert!(PropertyExpr::ord(&s_hyp, 0, 1).eval(&[&z1, &z2]).unwrap());
        let sm = sm(&[0.5, 0.5]);
        assert!(PropertyExpr::ord(&s_hyp, 0, 1).eval(&[&sm, &z2]).is_err());

        let scalar = Arc::new(ScoreView::scalar("s"));
        let a = ScoreVector::scalar(0.1);
        let b = ScoreVector::scalar(0.2);
        assert!(PropertyExpr::ord(&scalar, 0, 1).eval(&[&a, &b]).unwrap());
    }

    fn softmax2() -> impl Strategy<Value = ScoreVector> {
        (0.0f64..=1.0).prop_map(|p| ScoreVector::softmax(vec![p, 1.0 - p]).unwrap())
    }

    fn softmax3() -> impl Strategy<Value = ScoreVector> {
        prop::collection::vec(0.01f64..1.0, 3).prop_map(|v| {
            let s: f64 = v.iter().sum();
            ScoreVector::from_logits(&v.iter().map(|x| (x / s).ln()).collect::<Vec<_>>())
        })
    }

    proptest! {
        #[test]
        fn ord_irreflexive_and_asymmetric(a in softmax2(), b in softmax2()) {
            let s = Arc::new(ScoreView::softmax_component("s", 1));
            let ab = PropertyExpr::ord(&s, 0, 1).eval(&[&a, &b]).unwrap();
            let ba = PropertyExpr::ord(&s, 1, 0).eval(&[&a, &b]).unwrap();
            prop_assert!(!(ab && ba));
            prop_assert!(!PropertyExpr::ord(&s, 0, 0).eval(&[&a]).unwrap());
        }

        #[test]
        fn eq_is_an_equivalence(a in softmax3(), b in softmax3(), c in softmax3()) {
            let o = [&a, &b, &c];
            let eq = |i, j| PropertyExpr::Eq(i, j).eval(&o).unwrap();
            prop_assert!(eq(0, 0));
            prop_assert_eq!(eq(0, 1), eq(1, 0));
            if eq(0, 1) && eq(1, 2) {
                prop_assert!(eq(0, 2));
            }
        }

        #[test]
        fn sim_symmetric(
            a in prop::collection::vec(-1.0f64..1.0, 3),
            b in prop::collection::vec(-1.0f64..1.0, 3),
            theta in -1.0f64..1.0,
        ) {
            let a = ScoreVector::embedding(a);
            let b = ScoreVector::embedding(b);
            let ab = PropertyExpr::sim(0, 1, theta).eval(&[&a, &b]);
            let ba = PropertyExpr::sim(1, 0, theta).eval(&[&a, &b]);
            if let (Ok(x), Ok(y)) = (ab, ba) {
                prop_assert_eq!(x, y);
            }
        }
    }
}
