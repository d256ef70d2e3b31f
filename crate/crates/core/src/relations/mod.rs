//! The four relation shapes and their binding to concrete test cases.

mod dot;
mod graph;

use std::sync::Arc;

use thiserror::Error;

pub use dot::{parse_dot, DotError, ParsedDot};
pub use graph::{compile, emit_dot, Census, Edge, EdgeLabel, EvaluationGraph, Node, NodeShape};

use crate::properties::{BooleanPredicate, Connective, EvalError, PropertyExpr, ScoreView};
use crate::transforms::{form_pair, Monotonicity, TransformError, TransformSpec};
use crate::types::{TextInput, ViewRequest};

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("plan structure: {0}")]
    Structure(String),
    #[error("property: {0}")]
    Property(#[from] EvalError),
    #[error("case {case}: {source}")]
    Transform {
        case: String,
        #[source]
        source: TransformError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PlanClass {
    SingleInput,
    PairwiseSystematicity,
    PairwiseCompositionality,
    ThreeWayTransitivity,
}

impl PlanClass {
    /// Number of source inputs per test case.
    pub fn source_arity(self) -> usize {
        match self {
            PlanClass::SingleInput => 1,
            PlanClass::PairwiseSystematicity | PlanClass::PairwiseCompositionality => 2,
            PlanClass::ThreeWayTransitivity => 3,
        }
    }

    /// Number of output slots the property is attached to.
    pub fn output_arity(self) -> usize {
        match self {
            PlanClass::SingleInput => 2,
            PlanClass::PairwiseSystematicity | PlanClass::PairwiseCompositionality => 4,
            PlanClass::ThreeWayTransitivity => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PlanClass::SingleInput => "single_input",
            PlanClass::PairwiseSystematicity => "pairwise_systematicity",
            PlanClass::PairwiseCompositionality => "pairwise_compositionality",
            PlanClass::ThreeWayTransitivity => "three_way_transitivity",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RelationPlan {
    /// `P(y, y')` with `x' = T(x)`; violated when `P` is false.
    SingleInput { transform: TransformSpec, property: PropertyExpr, view: ViewRequest },
    /// `P_src(y1, y2) => P_flw(y1', y2')`; both properties are written over
    /// slots 0 and 1.
    PairwiseSystematicity {
        transform: TransformSpec,
        premise: PropertyExpr,
        hypothesis: PropertyExpr,
        connective: Connective,
        view: ViewRequest,
    },
    /// `s_hid(z1) < s_hid(z2)` against `s_out(y1) < s_out(y2)`, negated for
    /// upward-monotone contexts. Sources must carry two insertion spans.
    PairwiseCompositionality {
        hidden_layer: i32,
        hidden_score: Arc<ScoreView>,
        output_score: Arc<ScoreView>,
        monotonicity: Monotonicity,
        connective: Connective,
        view: ViewRequest,
    },
    /// `v(y12) ∧ v(y23) => v(y13)` over pair-encoded inputs.
    ThreeWayTransitivity { separator: String, predicate: Arc<BooleanPredicate>, view: ViewRequest },
}

/// Premise, hypothesis and connective over the plan's output slots.
#[derive(Debug, Clone, PartialEq)]
pub struct Recipe {
    pub premise: PropertyExpr,
    pub hypothesis: PropertyExpr,
    pub connective: Connective,
}

impl RelationPlan {
    pub fn class(&self) -> PlanClass {
        match self {
            RelationPlan::SingleInput { .. } => PlanClass::SingleInput,
            RelationPlan::PairwiseSystematicity { .. } => PlanClass::PairwiseSystematicity,
            RelationPlan::PairwiseCompositionality { .. } => PlanClass::PairwiseCompositionality,
            RelationPlan::ThreeWayTransitivity { .. } => PlanClass::ThreeWayTransitivity,
        }
    }

    pub fn transform(&self) -> Option<&TransformSpec> {
        match self {
            RelationPlan::SingleInput { transform, .. } | RelationPlan::PairwiseSystematicity { transform, .. } => {
                Some(transform)
            }
            _ => None,
        }
    }

    pub fn output_view(&self) -> &ViewRequest {
        match self {
            RelationPlan::SingleInput { view, .. }
            | RelationPlan::PairwiseSystematicity { view, .. }
            | RelationPlan::PairwiseCompositionality { view, .. }
            | RelationPlan::ThreeWayTransitivity { view, .. } => view,
        }
    }

    /// Checks slot arities and transform shapes.
    pub fn validate(&self) -> Result<(), PlanError> {
        let unary = |t: &TransformSpec| {
            if t.arity() == 1 {
                Ok(())
            } else {
                Err(PlanError::Structure(format!("{} takes {} inputs; this relation needs a unary transform", t.name(), t.arity())))
            }
        };
        let not_hidden = |v: &ViewRequest| {
            if matches!(v, ViewRequest::Hidden { .. }) {
                Err(PlanError::Structure("output view cannot be a hidden view".into()))
            } else {
                Ok(())
            }
        };
        match self {
            RelationPlan::SingleInput { transform, property, view } => {
                unary(transform)?;
                not_hidden(view)?;
                property.validate(2)?;
            }
            RelationPlan::PairwiseSystematicity { transform, premise, hypothesis, view, .. } => {
                unary(transform)?;
                not_hidden(view)?;
                premise.validate(2)?;
                hypothesis.validate(2)?;
            }
            RelationPlan::PairwiseCompositionality { view, .. } => not_hidden(view)?,
            RelationPlan::ThreeWayTransitivity { view, .. } => not_hidden(view)?,
        }
        Ok(())
    }

    /// Premise and hypothesis over absolute output slots. Slot order:
    /// single `(y, y')`; systematicity `(y1, y2, y1', y2')`; compositionality
    /// `(z1, z2, y1, y2)`; transitivity `(y12, y13, y23)`.
    pub fn recipe(&self) -> Recipe {
        match self {
            RelationPlan::SingleInput { property, .. } => Recipe {
                premise: PropertyExpr::Const(true),
                hypothesis: property.clone(),
                connective: Connective::Implies,
            },
            RelationPlan::PairwiseSystematicity { premise, hypothesis, connective, .. } => Recipe {
                premise: premise.clone(),
                hypothesis: hypothesis.remap(&[2, 3]),
                connective: *connective,
            },
            RelationPlan::PairwiseCompositionality { hidden_score, output_score, monotonicity, connective, .. } => {
                let out = PropertyExpr::ord(output_score, 2, 3);
                Recipe {
                    premise: PropertyExpr::ord(hidden_score, 0, 1),
                    hypothesis: match monotonicity {
                        Monotonicity::Up => out.not(),
                        Monotonicity::Down => out,
                    },
                    connective: *connective,
                }
            }
            RelationPlan::ThreeWayTransitivity { predicate, .. } => Recipe {
                premise: PropertyExpr::pred(predicate, 0).and(PropertyExpr::pred(predicate, 2)),
                hypothesis: PropertyExpr::pred(predicate, 1),
                connective: Connective::Implies,
            },
        }
    }

    /// Hidden view for one compositionality source, using its insertion spans.
    pub fn hidden_view_for(&self, source: &TextInput) -> Result<ViewRequest, PlanError> {
        match self {
            RelationPlan::PairwiseCompositionality { hidden_layer, .. } => {
                if source.spans.len() != 2 {
                    return Err(PlanError::Structure(format!(
                        "source `{}` needs two insertion spans, has {}",
                        source.id,
                        source.spans.len()
                    )));
                }
                Ok(ViewRequest::Hidden { layer: *hidden_layer, spans: source.spans.clone() })
            }
            _ => Err(PlanError::Structure("only compositionality plans read hidden views".into())),
        }
    }

    /// Materialises one test case from its source inputs.
    pub fn bind(&self, sources: &[&TextInput]) -> Result<ConcreteCase, PlanError> {
        self.validate()?;
        let class = self.class();
        if sources.len() != class.source_arity() {
            return Err(PlanError::Structure(format!(
                "{} takes {} source inputs, got {}",
                class.name(),
                class.source_arity(),
                sources.len()
            )));
        }
        let case_id = sources.iter().map(|s| s.id.as_str()).collect::<Vec<_>>().join(",");
        let follow = |t: &TransformSpec, x: &TextInput| {
            t.apply(x).map_err(|source| PlanError::Transform { case: case_id.clone(), source })
        };
        let src = |x: &TextInput| CaseText { input: x.clone(), source: true };
        let derived = |x: TextInput| CaseText { input: x, source: false };
        let view = self.output_view().clone();
        let slot = |text: usize, view: &ViewRequest| SlotBinding { text, view: view.clone() };

        let (texts, slots) = match self {
            RelationPlan::SingleInput { transform, .. } => {
                let x = sources[0];
                (vec![src(x), derived(follow(transform, x)?)], vec![slot(0, &view), slot(1, &view)])
            }
            RelationPlan::PairwiseSystematicity { transform, .. } => {
                let (x1, x2) = (sources[0], sources[1]);
                (
                    vec![src(x1), src(x2), derived(follow(transform, x1)?), derived(follow(transform, x2)?)],
                    (0..4).map(|i| slot(i, &view)).collect(),
                )
            }
            RelationPlan::PairwiseCompositionality { .. } => {
                let (x1, x2) = (sources[0], sources[1]);
                let h1 = self.hidden_view_for(x1)?;
                let h2 = self.hidden_view_for(x2)?;
                (vec![src(x1), src(x2)], vec![slot(0, &h1), slot(1, &h2), slot(0, &view), slot(1, &view)])
            }
            RelationPlan::ThreeWayTransitivity { separator, .. } => {
                let (a, b, c) = (sources[0], sources[1], sources[2]);
                (
                    vec![
                        src(a),
                        src(b),
                        src(c),
                        derived(form_pair(a, b, separator)),
                        derived(form_pair(a, c, separator)),
                        derived(form_pair(b, c, separator)),
                    ],
                    vec![slot(3, &view), slot(4, &view), slot(5, &view)],
                )
            }
        };
        let recipe = self.recipe();
        Ok(ConcreteCase {
            texts,
            slots,
            premise: recipe.premise,
            hypothesis: recipe.hypothesis,
            connective: recipe.connective,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseText {
    pub input: TextInput,
    pub source: bool,
}

/// Output slot `i` is the model's `view` of `texts[text]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotBinding {
    pub text: usize,
    pub view: ViewRequest,
}

/// A fully materialised test case.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcreteCase {
    /// Every textual node of the relation, sources first.
    pub texts: Vec<CaseText>,
    pub slots: Vec<SlotBinding>,
    pub premise: PropertyExpr,
    pub hypothesis: PropertyExpr,
    pub connective: Connective,
}

impl ConcreteCase {
    /// Texts the model must score, with the views requested for each.
    pub fn requests(&self) -> Vec<(&TextInput, Vec<&ViewRequest>)> {
        let mut out: Vec<(usize, Vec<&ViewRequest>)> = Vec::new();
        for s in &self.slots {
            match out.iter_mut().find(|(t, _)| *t == s.text) {
                Some((_, views)) => {
                    if !views.contains(&&s.view) {
                        views.push(&s.view);
                    }
                }
                None => out.push((s.text, vec![&s.view])),
            }
        }
        out.into_iter().map(|(t, v)| (&self.texts[t].input, v)).collect()
    }
}
