//! Turns a [`RunConfig`] into a model port and a test suite.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use morphcheck_core::adapters::{HashEmbedding, HttpPort, LexiconSentiment, ModelPort, RetryPolicy, Taxonomy, TaxonomyLexical};
use morphcheck_core::engine::{EnumerationMode, LabeledPlan, Partition, Selection, TestSuite};
use morphcheck_core::hash::fnv1a64;
use morphcheck_core::probe::{train, LinearProbe, ProbeExample, TrainConfig};
use morphcheck_core::properties::{BooleanPredicate, PropertyExpr, ScoreView};
use morphcheck_core::relations::RelationPlan;
use morphcheck_core::transforms::{
    instantiate_pair, read_contexts, read_insertions, Context, InsertionPair, KeyboardLayout, LexicalRelation, Lexicon,
    Monotonicity, TransformSpec,
};
use morphcheck_core::{Dataset, TextInput, ViewRequest};

use crate::config::{ConfigError, DataConfig, ExprConfig, ModelConfig, RelationConfig, RunConfig, ScoreConfig, TransformConfig};

/// Model selection from the command line: a URL or `stub:NAME`.
pub fn resolve_model(config: Option<&ModelConfig>, flag: Option<&str>, env_url: Option<String>) -> Result<ModelConfig, ConfigError> {
    let from_url = |url: &str| ModelConfig::Http { url: url.to_string(), in_flight: None, backoff_ms: None };
    match flag {
        Some(f) if f.starts_with("stub:") => {
            let name = &f[5..];
            match config {
                Some(c) if c.stub_name() == Some(name) => Ok(c.clone()),
                _ if name == "hash_embedding" => Ok(ModelConfig::HashEmbedding { dim: 8, classes: 2, seed: None }),
                _ if matches!(name, "lexicon_sentiment" | "taxonomy_lexical") => Err(ConfigError::at(
                    "/model",
                    format!("--model stub:{name} needs a `{name}` model section with its data file"),
                )),
                _ => Err(ConfigError::at(
                    "/model",
                    format!("unknown stub `{name}` (expected lexicon_sentiment, hash_embedding or taxonomy_lexical)"),
                )),
            }
        }
        Some(f) if f.starts_with("http://") || f.starts_with("https://") => Ok(from_url(f)),
        Some(f) => Err(ConfigError::at("/model", format!("--model `{f}` is neither a URL nor stub:NAME"))),
        None => match (config, env_url) {
            (Some(c), _) => Ok(c.clone()),
            (None, Some(url)) => Ok(from_url(&url)),
            (None, None) => Err(ConfigError::at("/model", "no model: set /model, pass --model or MORPHCHECK_MODEL_URL")),
        },
    }
}

pub fn build_port(model: &ModelConfig, seed: u64) -> anyhow::Result<Box<dyn ModelPort>> {
    Ok(match model {
        ModelConfig::Http { url, in_flight, backoff_ms } => {
            let retry = match backoff_ms {
                Some(ms) => RetryPolicy { backoff: ms.iter().map(|m| Duration::from_millis(*m)).collect() },
                None => RetryPolicy::default(),
            };
            Box::new(HttpPort::connect(url, retry, in_flight.unwrap_or(HttpPort::DEFAULT_IN_FLIGHT))?)
        }
        ModelConfig::LexiconSentiment { lexicon, length_normalize } => Box::new(
            LexiconSentiment::load(lexicon, *length_normalize).map_err(|e| ConfigError::at("/model/lexicon", e))?,
        ),
        ModelConfig::HashEmbedding { dim, classes, seed: own } => {
            if *dim == 0 || *classes < 2 {
                return Err(ConfigError::at("/model", "hash_embedding needs dim >= 1 and classes >= 2").into());
            }
            Box::new(HashEmbedding::new(*dim, own.unwrap_or(seed), *classes))
        }
        ModelConfig::TaxonomyLexical { taxonomy, transitive_closure, separator } => {
            let t = Taxonomy::load(taxonomy).map_err(|e| ConfigError::at("/model/taxonomy", e))?;
            Box::new(TaxonomyLexical::new(t, *transitive_closure, separator.clone()))
        }
    })
}

/// Everything `run` needs besides the port.
pub struct Built {
    pub suite: TestSuite,
    /// Tested insertion pairs sharing a word with the probe's training pairs.
    pub probe_overlap: Vec<String>,
}

enum Sources {
    Flat(Vec<(String, Vec<TextInput>)>),
    Templates { contexts: Vec<Context>, pairs: Vec<InsertionPair>, separator: String },
}

fn load_sources(data: &DataConfig) -> Result<Sources, ConfigError> {
    match data {
        DataConfig::Texts { path } => {
            let ds = Dataset::load(path).map_err(|e| ConfigError::at("/data/path", e))?;
            Ok(Sources::Flat(vec![(String::new(), ds.entries().to_vec())]))
        }
        DataConfig::Templates { contexts, insertions, separator } => {
            let open = |p: &Path, at: &str| {
                std::fs::File::open(p).map(std::io::BufReader::new).map_err(|e| ConfigError::at(at, format!("{}: {e}", p.display())))
            };
            let contexts = read_contexts(open(contexts, "/data/contexts")?).map_err(|e| ConfigError::at("/data/contexts", e))?;
            let pairs = read_insertions(open(insertions, "/data/insertions")?).map_err(|e| ConfigError::at("/data/insertions", e))?;
            if contexts.is_empty() {
                return Err(ConfigError::at("/data/contexts", "no contexts"));
            }
            let mut seen = HashSet::new();
            for p in &pairs {
                if !seen.insert(p.key()) {
                    return Err(ConfigError::at("/data/insertions", format!("duplicate insertion pair {}", p.key())));
                }
            }
            Ok(Sources::Templates { contexts, pairs, separator: separator.clone() })
        }
        DataConfig::Vocabulary { languages } => {
            let mut out = Vec::new();
            for (i, lang) in languages.iter().enumerate() {
                let at = format!("/data/languages/{i}/path");
                let text = std::fs::read_to_string(&lang.path).map_err(|e| ConfigError::at(&at, format!("{}: {e}", lang.path.display())))?;
                let words: Vec<TextInput> = text
                    .lines()
                    .map(str::trim)
                    .filter(|w| !w.is_empty())
                    .map(|w| TextInput::new(w, w))
                    .collect::<Result<_, _>>()
                    .map_err(|e| ConfigError::at(&at, e))?;
                // Rejects duplicate words.
                Dataset::new(lang.label.clone(), words.clone()).map_err(|e| ConfigError::at(&at, e))?;
                out.push((lang.label.clone(), words));
            }
            Ok(Sources::Flat(out))
        }
    }
}

fn template_sources(contexts: &[Context], pairs: &[&InsertionPair], separator: &str) -> Result<Vec<Vec<TextInput>>, ConfigError> {
    contexts
        .iter()
        .enumerate()
        .map(|(i, c)| {
            pairs
                .iter()
                .map(|p| instantiate_pair(p.key(), &c.context, &p.a, &p.b, separator))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| ConfigError::at(format!("/data/contexts/{i}"), e))
        })
        .collect()
}

/// Deterministic split: the `holdout` fraction with the smallest seeded hash
/// is tested, the rest trains the probe.
fn split_pairs(pairs: &[InsertionPair], holdout: f64, seed: u64) -> (Vec<&InsertionPair>, Vec<&InsertionPair>) {
    let mut order: Vec<(u64, &InsertionPair)> =
        pairs.iter().map(|p| (fnv1a64(format!("{seed}\u{1f}{}", p.key()).as_bytes()), p)).collect();
    order.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.key().cmp(&b.1.key())));
    let n_test = ((pairs.len() as f64 * holdout).round() as usize).clamp(1, pairs.len().saturating_sub(1).max(1));
    let test = order[..n_test].iter().map(|(_, p)| *p).collect();
    let trainset = order[n_test..].iter().map(|(_, p)| *p).collect();
    (trainset, test)
}

fn probe_examples(
    port: &dyn ModelPort,
    sources: &[Vec<TextInput>],
    labels: &[u8],
    layer: i32,
) -> anyhow::Result<Vec<ProbeExample>> {
    let mut out = Vec::new();
    for ctx in sources {
        for (x, y) in ctx.iter().zip(labels) {
            let view = ViewRequest::Hidden { layer, spans: x.spans.clone() };
            let z = port.score_batch(&[&x.text], &[view])?.remove(0).remove(0);
            out.push(ProbeExample::new(z.values().to_vec(), *y)?);
        }
    }
    Ok(out)
}

struct Scores {
    views: BTreeMap<String, Arc<ScoreView>>,
    predicates: BTreeMap<String, Arc<BooleanPredicate>>,
}

fn convert_expr(e: &ExprConfig, scores: &Scores, at: &str) -> Result<PropertyExpr, ConfigError> {
    let pair = |p: &(ExprConfig, ExprConfig), at: &str| -> Result<(PropertyExpr, PropertyExpr), ConfigError> {
        Ok((convert_expr(&p.0, scores, &format!("{at}/0"))?, convert_expr(&p.1, scores, &format!("{at}/1"))?))
    };
    let fold = |items: &[ExprConfig], at: &str, and: bool| -> Result<PropertyExpr, ConfigError> {
        if items.is_empty() {
            return Err(ConfigError::at(at, "needs at least one operand"));
        }
        let mut acc = convert_expr(&items[0], scores, &format!("{at}/0"))?;
        for (i, item) in items.iter().enumerate().skip(1) {
            let rhs = convert_expr(item, scores, &format!("{at}/{i}"))?;
            acc = if and { acc.and(rhs) } else { acc.or(rhs) };
        }
        Ok(acc)
    };
    Ok(match e {
        ExprConfig::Const(b) => PropertyExpr::Const(*b),
        ExprConfig::Eq([a, b]) => PropertyExpr::Eq(*a, *b),
        ExprConfig::Sim { a, b, theta } => PropertyExpr::sim(*a, *b, *theta),
        ExprConfig::Ord { score, a, b } => {
            let view = scores.views.get(score).ok_or_else(|| ConfigError::at(format!("{at}/ord/score"), format!("unknown score `{score}`")))?;
            PropertyExpr::ord(view, *a, *b)
        }
        ExprConfig::Pred { predicate, slot } => {
            let p = scores
                .predicates
                .get(predicate)
                .ok_or_else(|| ConfigError::at(format!("{at}/pred/predicate"), format!("unknown predicate `{predicate}`")))?;
            PropertyExpr::pred(p, *slot)
        }
        ExprConfig::Not(inner) => convert_expr(inner, scores, &format!("{at}/not"))?.not(),
        ExprConfig::And(items) => fold(items, &format!("{at}/and"), true)?,
        ExprConfig::Or(items) => fold(items, &format!("{at}/or"), false)?,
        ExprConfig::Implies(p) => {
            let (a, b) = pair(p, &format!("{at}/implies"))?;
            a.implies(b)
        }
        ExprConfig::Iff(p) => {
            let (a, b) = pair(p, &format!("{at}/iff"))?;
            a.iff(b)
        }
    })
}

fn convert_transform(t: &TransformConfig, seed: u64, at: &str) -> Result<TransformSpec, ConfigError> {
    let lexicon = |path: &Path, cs: bool| -> Result<Arc<Lexicon>, ConfigError> {
        Lexicon::load(path, cs).map(Arc::new).map_err(|e| ConfigError::at(format!("{at}/lexicon"), e))
    };
    Ok(match t {
        TransformConfig::ConcatSentence { text, position } => TransformSpec::ConcatSentence { text: text.clone(), position: *position },
        TransformConfig::SynonymReplace { lexicon: p, case_sensitive, rate, seed: s } => {
            TransformSpec::SynonymReplace { lexicon: lexicon(p, *case_sensitive)?, rate: *rate, seed: s.unwrap_or(seed) }
        }
        TransformConfig::AntonymReplace { lexicon: p, case_sensitive, rate, seed: s } => {
            TransformSpec::AntonymReplace { lexicon: lexicon(p, *case_sensitive)?, rate: *rate, seed: s.unwrap_or(seed) }
        }
        TransformConfig::KeywordSwap { mapping } => TransformSpec::KeywordSwap { mapping: mapping.clone() },
        TransformConfig::CharKeyboardTypo { layout, rate, seed: s } => {
            let layout = match layout {
                Some(p) => KeyboardLayout::load(p).map_err(|e| ConfigError::at(format!("{at}/layout"), e))?,
                None => KeyboardLayout::qwerty(),
            };
            TransformSpec::CharKeyboardTypo { layout: Arc::new(layout), rate: *rate, seed: s.unwrap_or(seed) }
        }
        TransformConfig::CharRandomReplace { rate, seed: s } => TransformSpec::CharRandomReplace { rate: *rate, seed: s.unwrap_or(seed) },
        TransformConfig::CharSwapNeighbors { rate, seed: s } => TransformSpec::CharSwapNeighbors { rate: *rate, seed: s.unwrap_or(seed) },
        TransformConfig::CharShuffleWord { rate, seed: s } => TransformSpec::CharShuffleWord { rate: *rate, seed: s.unwrap_or(seed) },
        TransformConfig::SentenceShuffle { seed: s } => TransformSpec::SentenceShuffle { seed: s.unwrap_or(seed) },
        TransformConfig::TemplateInstantiate { insertion } => TransformSpec::TemplateInstantiate { insertion: insertion.clone() },
    })
}

fn score_ref(scores: &Scores, name: &str, at: String) -> Result<Arc<ScoreView>, ConfigError> {
    scores.views.get(name).cloned().ok_or_else(|| ConfigError::at(at, format!("unknown score `{name}`")))
}

/// The plan for relation `i`; `context` supplies the monotonicity of a
/// template partition.
fn convert_relation(
    r: &RelationConfig,
    i: usize,
    scores: &Scores,
    seed: u64,
    context: Option<Monotonicity>,
) -> Result<LabeledPlan, ConfigError> {
    let at = format!("/relations/{i}");
    let view = |v: &Option<ViewRequest>| v.clone().unwrap_or(ViewRequest::Softmax);
    let plan = match r {
        RelationConfig::SingleInput { transform, property, view: v, .. } => RelationPlan::SingleInput {
            transform: convert_transform(transform, seed, &format!("{at}/transform"))?,
            property: convert_expr(property, scores, &format!("{at}/property"))?,
            view: view(v),
        },
        RelationConfig::PairwiseSystematicity { transform, premise, hypothesis, connective, view: v, .. } => {
            RelationPlan::PairwiseSystematicity {
                transform: convert_transform(transform, seed, &format!("{at}/transform"))?,
                premise: convert_expr(premise, scores, &format!("{at}/premise"))?,
                hypothesis: convert_expr(hypothesis, scores, &format!("{at}/hypothesis"))?,
                connective: *connective,
                view: view(v),
            }
        }
        RelationConfig::PairwiseCompositionality { hidden_layer, hidden_score, output_score, monotonicity, connective, view: v, .. } => {
            let monotonicity = monotonicity.or(context).ok_or_else(|| {
                ConfigError::at(format!("{at}/monotonicity"), "required unless the data is templates with per-context monotonicity")
            })?;
            RelationPlan::PairwiseCompositionality {
                hidden_layer: *hidden_layer,
                hidden_score: score_ref(scores, hidden_score, format!("{at}/hidden_score"))?,
                output_score: score_ref(scores, output_score, format!("{at}/output_score"))?,
                monotonicity,
                connective: *connective,
                view: view(v),
            }
        }
        RelationConfig::ThreeWayTransitivity { separator, predicate, view: v, .. } => RelationPlan::ThreeWayTransitivity {
            separator: separator.clone(),
            predicate: scores
                .predicates
                .get(predicate)
                .cloned()
                .ok_or_else(|| ConfigError::at(format!("{at}/predicate"), format!("unknown predicate `{predicate}`")))?,
            view: view(v),
        },
    };
    plan.validate().map_err(|e| ConfigError::at(&at, e))?;
    let label = match r {
        RelationConfig::SingleInput { label, .. }
        | RelationConfig::PairwiseSystematicity { label, .. }
        | RelationConfig::PairwiseCompositionality { label, .. }
        | RelationConfig::ThreeWayTransitivity { label, .. } => label.clone(),
    };
    Ok(match (label, &plan) {
        (Some(l), _) => LabeledPlan::labeled(l, plan),
        (None, RelationPlan::PairwiseCompositionality { monotonicity, .. }) => LabeledPlan::labeled(monotonicity.to_string(), plan),
        (None, RelationPlan::ThreeWayTransitivity { predicate, .. }) => LabeledPlan::labeled(predicate.name.clone(), plan),
        (None, _) => LabeledPlan::new(plan),
    })
}

pub fn enumeration_mode(cfg: &RunConfig) -> EnumerationMode {
    let e = &cfg.enumeration;
    EnumerationMode {
        shape: e.shape,
        selection: match e.sample {
            Some(n) => Selection::Sample { n, seed: e.seed.unwrap_or(cfg.seed) },
            None => Selection::Exhaustive,
        },
        allow_self: e.allow_self,
    }
}

/// Loads data, trains any probes and assembles the suite.
pub fn build_suite(cfg: &RunConfig, port: &dyn ModelPort) -> anyhow::Result<Built> {
    let sources = load_sources(&cfg.data)?;
    let mode = enumeration_mode(cfg);
    let mut probe_overlap = Vec::new();
    let mut views = BTreeMap::new();
    let mut tested: Option<Vec<&InsertionPair>> = None;
    for (name, s) in &cfg.scores {
        let at = format!("/scores/{name}");
        let view = match s {
            ScoreConfig::SoftmaxComponent { index } => ScoreView::softmax_component(name, *index),
            ScoreConfig::Scalar => ScoreView::scalar(name),
            ScoreConfig::Probe { path } => {
                ScoreView::probe(name, Arc::new(LinearProbe::load(path).map_err(|e| ConfigError::at(format!("{at}/path"), e))?))
            }
            ScoreConfig::TrainedProbe { layer, holdout, epochs, learning_rate } => {
                let Sources::Templates { contexts, pairs, separator } = &sources else {
                    return Err(ConfigError::at(&at, "trained_probe needs template data").into());
                };
                for (i, r) in cfg.relations.iter().enumerate() {
                    if let RelationConfig::PairwiseCompositionality { hidden_layer, hidden_score, .. } = r {
                        if hidden_score == name && hidden_layer != layer {
                            return Err(ConfigError::at(
                                format!("/relations/{i}/hidden_layer"),
                                format!("probe `{name}` is trained on layer {layer}, not {hidden_layer}"),
                            )
                            .into());
                        }
                    }
                }
                let (trainset, test) = split_pairs(pairs, *holdout, cfg.seed);
                let train_words: HashSet<&str> = trainset.iter().flat_map(|p| [p.a.as_str(), p.b.as_str()]).collect();
                probe_overlap.extend(
                    test.iter().filter(|p| train_words.contains(p.a.as_str()) || train_words.contains(p.b.as_str())).map(|p| p.key()),
                );
                let labels: Vec<u8> = trainset.iter().map(|p| u8::from(p.relation == LexicalRelation::Hyper)).collect();
                if labels.iter().all(|&l| l == labels[0]) {
                    return Err(ConfigError::at(&at, "the training split has a single label; add hyper and non-hyper pairs").into());
                }
                let train_sources = template_sources(contexts, &trainset, separator)?;
                let examples = probe_examples(port, &train_sources, &labels, *layer)?;
                let defaults = TrainConfig::default();
                let tc = TrainConfig {
                    epochs: epochs.unwrap_or(defaults.epochs),
                    learning_rate: learning_rate.unwrap_or(defaults.learning_rate),
                    seed: cfg.seed,
                    ..defaults
                };
                let probe = train(&examples, &tc)?;
                tracing::info!(score = %name, examples = examples.len(), accuracy = probe.meta.train_accuracy, "trained probe");
                if tested.as_ref().is_some_and(|t: &Vec<&InsertionPair>| t.iter().map(|p| p.key()).ne(test.iter().map(|p| p.key()))) {
                    return Err(ConfigError::at(&at, "all trained probes must share one split").into());
                }
                tested = Some(test);
                ScoreView::probe(name, Arc::new(probe))
            }
        };
        views.insert(name.clone(), Arc::new(view));
    }
    let predicates =
        cfg.predicates.iter().map(|(n, &c)| (n.clone(), Arc::new(BooleanPredicate::new(n.clone(), c)))).collect();
    let scores = Scores { views, predicates };

    let mut partitions = Vec::new();
    match &sources {
        Sources::Flat(groups) => {
            let plans = cfg
                .relations
                .iter()
                .enumerate()
                .map(|(i, r)| convert_relation(r, i, &scores, cfg.seed, None))
                .collect::<Result<Vec<_>, _>>()?;
            for (label, sources) in groups {
                partitions.push(Partition { label: label.clone(), sources: sources.clone(), insertion_keys: None, plans: plans.clone(), mode });
            }
        }
        Sources::Templates { contexts, pairs, separator } => {
            let used: Vec<&InsertionPair> = tested.unwrap_or_else(|| pairs.iter().collect());
            let per_context = template_sources(contexts, &used, separator)?;
            for (c, sources) in contexts.iter().zip(per_context) {
                let plans = cfg
                    .relations
                    .iter()
                    .enumerate()
                    .map(|(i, r)| convert_relation(r, i, &scores, cfg.seed, Some(c.monotonicity)))
                    .collect::<Result<Vec<_>, _>>()?;
                let keys = used.iter().map(|p| p.key()).collect();
                partitions.push(Partition { label: c.context.clone(), sources, insertion_keys: Some(keys), plans, mode });
            }
        }
    }
    Ok(Built { suite: TestSuite { partitions }, probe_overlap })
}
