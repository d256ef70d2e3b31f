//! Run configuration: the JSON document `morphcheck run` consumes.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use morphcheck_core::engine::Shape;
use morphcheck_core::properties::Connective;
use morphcheck_core::report::{Grouping, ReportFormat};
use morphcheck_core::transforms::{Monotonicity, Position, Rate};
use morphcheck_core::ViewRequest;
use serde::Deserialize;

/// A configuration problem located by JSON pointer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub pointer: String,
    pub message: String,
}

impl ConfigError {
    pub fn at(pointer: impl Into<String>, message: impl fmt::Display) -> Self {
        Self { pointer: pointer.into(), message: message.to_string() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let at = if self.pointer.is_empty() { "/" } else { &self.pointer };
        write!(f, "config error at {at}: {}", self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub data: DataConfig,
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub scores: BTreeMap<String, ScoreConfig>,
    /// Boolean predicates by name: true when the predicted class is the index.
    #[serde(default)]
    pub predicates: BTreeMap<String, usize>,
    pub relations: Vec<RelationConfig>,
    pub enumeration: EnumerationConfig,
    #[serde(default = "default_groupings")]
    pub groupings: Vec<Grouping>,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default = "default_budget")]
    pub budget: f64,
    #[serde(default)]
    pub engine: EngineSection,
}

fn default_groupings() -> Vec<Grouping> {
    vec![Grouping::ByTransformation]
}

fn default_budget() -> f64 {
    1.0
}

fn space() -> String {
    " ".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    /// Plain text (one input per line) or JSONL with `id`, `text`, `spans`.
    Texts { path: PathBuf },
    /// Every insertion pair instantiated in every context; one partition per
    /// context.
    Templates {
        contexts: PathBuf,
        insertions: PathBuf,
        #[serde(default = "space")]
        separator: String,
    },
    /// Word lists, one partition per language.
    Vocabulary { languages: Vec<LanguageConfig> },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LanguageConfig {
    pub label: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Http {
        url: String,
        #[serde(default)]
        in_flight: Option<usize>,
        #[serde(default)]
        backoff_ms: Option<Vec<u64>>,
    },
    LexiconSentiment {
        lexicon: PathBuf,
        #[serde(default)]
        length_normalize: bool,
    },
    HashEmbedding {
        dim: usize,
        classes: usize,
        #[serde(default)]
        seed: Option<u64>,
    },
    TaxonomyLexical {
        taxonomy: PathBuf,
        #[serde(default)]
        transitive_closure: bool,
        #[serde(default = "space")]
        separator: String,
    },
}

impl ModelConfig {
    pub fn stub_name(&self) -> Option<&'static str> {
        match self {
            ModelConfig::Http { .. } => None,
            ModelConfig::LexiconSentiment { .. } => Some("lexicon_sentiment"),
            ModelConfig::HashEmbedding { .. } => Some("hash_embedding"),
            ModelConfig::TaxonomyLexical { .. } => Some("taxonomy_lexical"),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScoreConfig {
    SoftmaxComponent { index: usize },
    Scalar,
    /// A saved linear probe.
    Probe { path: PathBuf },
    /// A probe trained on the hidden views of a held-out part of the
    /// template insertions; the rest is what gets tested.
    TrainedProbe {
        layer: i32,
        #[serde(default = "default_holdout")]
        holdout: f64,
        #[serde(default)]
        epochs: Option<usize>,
        #[serde(default)]
        learning_rate: Option<f64>,
    },
}

fn default_holdout() -> f64 {
    0.5
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case", deny_unknown_fields)]
pub enum RelationConfig {
    SingleInput {
        #[serde(default)]
        label: Option<String>,
        transform: TransformConfig,
        property: ExprConfig,
        #[serde(default)]
        view: Option<ViewRequest>,
    },
    PairwiseSystematicity {
        #[serde(default)]
        label: Option<String>,
        transform: TransformConfig,
        premise: ExprConfig,
        hypothesis: ExprConfig,
        connective: Connective,
        #[serde(default)]
        view: Option<ViewRequest>,
    },
    PairwiseCompositionality {
        #[serde(default)]
        label: Option<String>,
        hidden_layer: i32,
        hidden_score: String,
        output_score: String,
        /// Taken from each context when the data is templates.
        #[serde(default)]
        monotonicity: Option<Monotonicity>,
        connective: Connective,
        #[serde(default)]
        view: Option<ViewRequest>,
    },
    ThreeWayTransitivity {
        #[serde(default)]
        label: Option<String>,
        #[serde(default = "space")]
        separator: String,
        predicate: String,
        #[serde(default)]
        view: Option<ViewRequest>,
    },
}

impl RelationConfig {
    pub fn arity(&self) -> usize {
        match self {
            RelationConfig::SingleInput { .. } => 1,
            RelationConfig::PairwiseSystematicity { .. } | RelationConfig::PairwiseCompositionality { .. } => 2,
            RelationConfig::ThreeWayTransitivity { .. } => 3,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TransformConfig {
    ConcatSentence {
        text: String,
        position: Position,
    },
    SynonymReplace {
        lexicon: PathBuf,
        #[serde(default)]
        case_sensitive: bool,
        rate: Rate,
        #[serde(default)]
        seed: Option<u64>,
    },
    AntonymReplace {
        lexicon: PathBuf,
        #[serde(default)]
        case_sensitive: bool,
        rate: Rate,
        #[serde(default)]
        seed: Option<u64>,
    },
    KeywordSwap {
        mapping: BTreeMap<String, String>,
    },
    CharKeyboardTypo {
        /// QWERTY when absent.
        #[serde(default)]
        layout: Option<PathBuf>,
        rate: Rate,
        #[serde(default)]
        seed: Option<u64>,
    },
    CharRandomReplace {
        rate: Rate,
        #[serde(default)]
        seed: Option<u64>,
    },
    CharSwapNeighbors {
        rate: Rate,
        #[serde(default)]
        seed: Option<u64>,
    },
    CharShuffleWord {
        rate: Rate,
        #[serde(default)]
        seed: Option<u64>,
    },
    SentenceShuffle {
        #[serde(default)]
        seed: Option<u64>,
    },
    TemplateInstantiate {
        insertion: String,
    },
}

/// Property expression tree. Slots index the relation's outputs.
#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ExprConfig {
    Const(bool),
    Eq([usize; 2]),
    Sim {
        a: usize,
        b: usize,
        #[serde(default = "default_theta")]
        theta: f64,
    },
    Ord {
        score: String,
        a: usize,
        b: usize,
    },
    Pred {
        predicate: String,
        slot: usize,
    },
    Not(Box<ExprConfig>),
    And(Vec<ExprConfig>),
    Or(Vec<ExprConfig>),
    Implies(Box<(ExprConfig, ExprConfig)>),
    Iff(Box<(ExprConfig, ExprConfig)>),
}

fn default_theta() -> f64 {
    0.9
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnumerationConfig {
    pub shape: Shape,
    /// Number of tuples to sample; all tuples when absent.
    #[serde(default)]
    pub sample: Option<u64>,
    /// Sampling seed; the run seed when absent.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub allow_self: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_formats")]
    pub formats: Vec<ReportFormat>,
    /// Report file. With several formats the extension is replaced per format.
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// JSONL verdict stream, one line per case.
    #[serde(default)]
    pub emit_cases: Option<PathBuf>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { formats: default_formats(), path: None, emit_cases: None }
    }
}

fn default_formats() -> Vec<ReportFormat> {
    vec![ReportFormat::Json]
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineSection {
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub fail_fast: bool,
    #[serde(default)]
    pub chunk_size: Option<u64>,
}

/// Converts a serde path (`relations[0].premise`) to a JSON pointer.
fn pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => out.push_str(&format!("/{}", key.replace('~', "~0").replace('/', "~1"))),
            Segment::Enum { variant } => out.push_str(&format!("/{variant}")),
            Segment::Unknown => {}
        }
    }
    out
}

impl RunConfig {
    pub fn parse(json: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(json);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let at = pointer(e.path());
            ConfigError::at(at, e.into_inner())
        })?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::at("", format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    /// Structural checks that need no files.
    pub fn check(&self) -> Result<(), ConfigError> {
        if !(0.0..=1.0).contains(&self.budget) {
            return Err(ConfigError::at("/budget", format!("{} is outside [0, 1]", self.budget)));
        }
        if self.relations.is_empty() {
            return Err(ConfigError::at("/relations", "at least one relation is required"));
        }
        if self.groupings.is_empty() {
            return Err(ConfigError::at("/groupings", "at least one grouping is required"));
        }
        if self.output.formats.is_empty() {
            return Err(ConfigError::at("/output/formats", "at least one format is required"));
        }
        if self.enumeration.sample == Some(0) {
            return Err(ConfigError::at("/enumeration/sample", "sample size must be at least 1"));
        }
        let shape_arity = self.enumeration.shape.arity();
        for (i, r) in self.relations.iter().enumerate() {
            if r.arity() != shape_arity {
                return Err(ConfigError::at(
                    "/enumeration/shape",
                    format!("{} yields {shape_arity}-tuples but relation {i} takes {} sources", self.enumeration.shape.name(), r.arity()),
                ));
            }
        }
        if let DataConfig::Vocabulary { languages } = &self.data {
            if languages.is_empty() {
                return Err(ConfigError::at("/data/languages", "at least one language is required"));
            }
        }
        for (name, s) in &self.scores {
            if let ScoreConfig::TrainedProbe { holdout, .. } = s {
                if !(*holdout > 0.0 && *holdout < 1.0) {
                    return Err(ConfigError::at(format!("/scores/{name}/holdout"), format!("{holdout} is outside (0, 1)")));
                }
            }
        }
        Ok(())
    }

    /// Makes relative file references relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.data {
            DataConfig::Texts { path } => fix(path),
            DataConfig::Templates { contexts, insertions, .. } => {
                fix(contexts);
                fix(insertions);
            }
            DataConfig::Vocabulary { languages } => languages.iter_mut().for_each(|l| fix(&mut l.path)),
        }
        match &mut self.model {
            Some(ModelConfig::LexiconSentiment { lexicon, .. }) => fix(lexicon),
            Some(ModelConfig::TaxonomyLexical { taxonomy, .. }) => fix(taxonomy),
            _ => {}
        }
        for s in self.scores.values_mut() {
            if let ScoreConfig::Probe { path } = s {
                fix(path);
            }
        }
        for r in &mut self.relations {
            if let RelationConfig::SingleInput { transform, .. } | RelationConfig::PairwiseSystematicity { transform, .. } = r {
                match transform {
                    TransformConfig::SynonymReplace { lexicon, .. } | TransformConfig::AntonymReplace { lexicon, .. } => fix(lexicon),
                    TransformConfig::CharKeyboardTypo { layout: Some(layout), .. } => fix(layout),
                    _ => {}
                }
            }
        }
        for p in [&mut self.output.path, &mut self.output.emit_cases].into_iter().flatten() {
            fix(p);
        }
    }
}
