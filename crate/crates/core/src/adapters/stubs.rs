//! Deterministic in-process models used as test doubles.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::BufRead;
use std::path::Path;

use petgraph::algo::toposort;
use petgraph::graphmap::DiGraphMap;

use super::{Capabilities, PerText, PortError};
use crate::hash::{fnv1a64, SplitMix64};
use crate::transforms::words;
use crate::types::{ScoreVector, ViewKind, ViewRequest};
use crate::CoreError;

fn parse_err(line: usize, message: impl Into<String>) -> CoreError {
    CoreError::Parse { line, message: message.into() }
}

fn class_score(sm: ScoreVector, view: &ViewRequest) -> ScoreVector {
    match view {
        ViewRequest::ClassScore { label } => ScoreVector::scalar(sm.values()[*label]),
        _ => sm,
    }
}

/// Two-class sentiment from a word valence table: `softmax(-t, t)` where `t`
/// sums the valences of matched words (case-insensitive).
#[derive(Debug, Clone)]
pub struct LexiconSentiment {
    valence: HashMap<String, f64>,
    /// Divide `t` by the number of words in the text.
    length_normalize: bool,
    caps: Capabilities,
}

impl LexiconSentiment {
    pub fn new(valence: impl IntoIterator<Item = (String, f64)>, length_normalize: bool) -> Self {
        Self {
            valence: valence.into_iter().map(|(w, v)| (w.to_lowercase(), v)).collect(),
            length_normalize,
            caps: Capabilities {
                views: vec![ViewKind::Softmax],
                classes: vec!["negative".into(), "positive".into()],
                hidden_dim: 0,
                max_batch: 256,
            },
        }
    }

    /// Reads `word<TAB>valence` lines; `#` starts a comment.
    pub fn from_tsv<R: BufRead>(reader: R, length_normalize: bool) -> Result<Self, CoreError> {
        let mut valence = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (w, v) = line.split_once('\t').ok_or_else(|| parse_err(i + 1, "expected word<TAB>valence"))?;
            let v: f64 = v.trim().parse().map_err(|e| parse_err(i + 1, format!("bad valence: {e}")))?;
            if !v.is_finite() {
                return Err(parse_err(i + 1, "valence must be finite"));
            }
            valence.push((w.trim().to_string(), v));
        }
        Ok(Self::new(valence, length_normalize))
    }

    pub fn load(path: &Path, length_normalize: bool) -> Result<Self, CoreError> {
        Self::from_tsv(std::io::BufReader::new(std::fs::File::open(path)?), length_normalize)
    }

    /// The signed sentiment strength `t`.
    pub fn strength(&self, text: &str) -> f64 {
        let mut n = 0usize;
        let mut t = 0.0;
        for w in words(text) {
            n += 1;
            if let Some(v) = self.valence.get(&w.to_lowercase()) {
                t += v;
            }
        }
        if self.length_normalize && n > 0 {
            t / n as f64
        } else {
            t
        }
    }
}

impl PerText for LexiconSentiment {
    fn caps(&self) -> &Capabilities {
        &self.caps
    }

    fn score_text(&self, text: &str, view: &ViewRequest) -> Result<ScoreVector, PortError> {
        let t = self.strength(text);
        Ok(class_score(ScoreVector::from_logits(&[-t, t]), view))
    }
}

/// Pseudo-embeddings hashed from text bytes. Serves every view kind.
#[derive(Debug, Clone)]
pub struct HashEmbedding {
    dim: usize,
    seed: u64,
    caps: Capabilities,
}

impl HashEmbedding {
    pub fn new(dim: usize, seed: u64, classes: usize) -> Self {
        assert!(dim > 0 && classes >= 2, "HashEmbedding needs dim > 0 and at least two classes");
        Self {
            dim,
            seed,
            caps: Capabilities {
                views: vec![ViewKind::Softmax, ViewKind::Hidden, ViewKind::Embedding],
                classes: (0..classes).map(|c| format!("class_{c}")).collect(),
                hidden_dim: dim,
                max_batch: 256,
            },
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn vector(&self, key: &str, out: &mut Vec<f64>) {
        let mut rng = SplitMix64::new(self.seed ^ fnv1a64(key.as_bytes()));
        out.extend((0..self.dim).map(|_| rng.next_f64() * 2.0 - 1.0));
    }
}

impl PerText for HashEmbedding {
    fn caps(&self) -> &Capabilities {
        &self.caps
    }

    fn score_text(&self, text: &str, view: &ViewRequest) -> Result<ScoreVector, PortError> {
        match view {
            ViewRequest::Embedding => {
                let mut v = Vec::with_capacity(self.dim);
                self.vector(&format!("embedding\u{1f}{text}"), &mut v);
                Ok(ScoreVector::embedding(v))
            }
            ViewRequest::Hidden { layer, spans } => {
                let mut v = Vec::with_capacity(self.dim * spans.len().max(1));
                if spans.is_empty() {
                    self.vector(&format!("hidden\u{1f}{layer}\u{1f}{text}"), &mut v);
                }
                for s in spans {
                    let piece = s.slice(text).unwrap_or_default();
                    self.vector(&format!("hidden\u{1f}{layer}\u{1f}{piece}\u{1f}{text}"), &mut v);
                }
                Ok(ScoreVector::embedding(v))
            }
            ViewRequest::Softmax | ViewRequest::ClassScore { .. } => {
                let mut rng = SplitMix64::new(self.seed ^ fnv1a64(format!("softmax\u{1f}{text}").as_bytes()));
                let logits: Vec<f64> = (0..self.caps.classes.len()).map(|_| rng.next_f64() * 6.0 - 3.0).collect();
                Ok(class_score(ScoreVector::from_logits(&logits), view))
            }
        }
    }
}

/// Synonym and hypernym edges between words.
///
/// Hypernym edges point from a word to its broader term (`pine -> tree`) and
/// must be acyclic. Synonymy is symmetric.
#[derive(Debug, Clone, Default)]
pub struct Taxonomy {
    synonyms: BTreeSet<(String, String)>,
    hypernyms: BTreeSet<(String, String)>,
}

impl Taxonomy {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_synonym(&mut self, a: &str, b: &str) {
        self.synonyms.insert((a.to_string(), b.to_string()));
        self.synonyms.insert((b.to_string(), a.to_string()));
    }

    pub fn add_hypernym(&mut self, word: &str, broader: &str) -> Result<(), CoreError> {
        self.hypernyms.insert((word.to_string(), broader.to_string()));
        if let Err(cycle) = self.check_acyclic() {
            self.hypernyms.remove(&(word.to_string(), broader.to_string()));
            return Err(cycle);
        }
        Ok(())
    }

    /// Reads `a<TAB>syn|hyper<TAB>b` lines; `#` starts a comment.
    pub fn from_tsv<R: BufRead>(reader: R) -> Result<Self, CoreError> {
        let mut t = Self::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
            let [a, rel, b] = fields[..] else {
                return Err(parse_err(i + 1, "expected a<TAB>syn|hyper<TAB>b"));
            };
            if a.is_empty() || b.is_empty() || a == b {
                return Err(parse_err(i + 1, "edge endpoints must be distinct nonempty words"));
            }
            match rel {
                "syn" => t.add_synonym(a, b),
                "hyper" => {
                    t.hypernyms.insert((a.to_string(), b.to_string()));
                }
                other => return Err(parse_err(i + 1, format!("unknown relation `{other}`"))),
            }
        }
        t.check_acyclic()?;
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self, CoreError> {
        Self::from_tsv(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    fn check_acyclic(&self) -> Result<(), CoreError> {
        let g: DiGraphMap<&str, ()> =
            self.hypernyms.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        toposort(&g, None)
            .map(|_| ())
            .map_err(|c| parse_err(0, format!("hypernym edges form a cycle through `{}`", c.node_id())))
    }

    pub fn words(&self) -> BTreeSet<&str> {
        self.synonyms.iter().chain(&self.hypernyms).flat_map(|(a, b)| [a.as_str(), b.as_str()]).collect()
    }

    pub fn is_synonym(&self, a: &str, b: &str) -> bool {
        self.synonyms.contains(&(a.to_string(), b.to_string()))
    }

    pub fn is_hypernym(&self, word: &str, broader: &str) -> bool {
        self.hypernyms.contains(&(word.to_string(), broader.to_string()))
    }

    /// Adds every edge implied by transitivity: synonym classes become
    /// cliques and hypernyms reach all ancestors.
    pub fn closed(&self) -> Self {
        let mut adj: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (a, b) in &self.synonyms {
            adj.entry(a).or_default().push(b);
        }
        let mut synonyms = BTreeSet::new();
        let mut seen: BTreeSet<&str> = BTreeSet::new();
        for &start in adj.keys() {
            if !seen.insert(start) {
                continue;
            }
            let mut class = vec![start];
            let mut i = 0;
            while i < class.len() {
                for &n in &adj[class[i]] {
                    if seen.insert(n) {
                        class.push(n);
                    }
                }
                i += 1;
            }
            for &a in &class {
                for &b in &class {
                    if a != b {
                        synonyms.insert((a.to_string(), b.to_string()));
                    }
                }
            }
        }
        let mut up: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (a, b) in &self.hypernyms {
            up.entry(a).or_default().push(b);
        }
        let mut hypernyms = BTreeSet::new();
        for &start in up.keys() {
            let mut stack = up[start].clone();
            let mut reached = BTreeSet::new();
            while let Some(n) = stack.pop() {
                if reached.insert(n) {
                    stack.extend(up.get(n).into_iter().flatten());
                }
            }
            hypernyms.extend(reached.into_iter().map(|b| (start.to_string(), b.to_string())));
        }
        Self { synonyms, hypernyms }
    }
}

/// Lexical-relation classifier over pair-encoded inputs `a<sep>b`.
///
/// Classes are `[none, synonym, hypernym]`; the predicted class gets 0.8 and
/// the others 0.1.
#[derive(Debug, Clone)]
pub struct TaxonomyLexical {
    taxonomy: Taxonomy,
    separator: String,
    caps: Capabilities,
}

impl TaxonomyLexical {
    pub const NONE: usize = 0;
    pub const SYNONYM: usize = 1;
    pub const HYPERNYM: usize = 2;

    pub fn new(taxonomy: Taxonomy, transitive_closure: bool, separator: impl Into<String>) -> Self {
        let taxonomy = if transitive_closure { taxonomy.closed() } else { taxonomy };
        Self {
            taxonomy,
            separator: separator.into(),
            caps: Capabilities {
                views: vec![ViewKind::Softmax],
                classes: vec!["none".into(), "synonym".into(), "hypernym".into()],
                hidden_dim: 0,
                max_batch: 256,
            },
        }
    }

    pub fn taxonomy(&self) -> &Taxonomy {
        &self.taxonomy
    }

    pub fn relation(&self, text: &str) -> usize {
        let Some((a, b)) = text.split_once(self.separator.as_str()) else {
            return Self::NONE;
        };
        let (a, b) = (a.trim(), b.trim());
        if self.taxonomy.is_synonym(a, b) {
            Self::SYNONYM
        } else if self.taxonomy.is_hypernym(a, b) {
            Self::HYPERNYM
        } else {
            Self::NONE
        }
    }
}

impl PerText for TaxonomyLexical {
    fn caps(&self) -> &Capabilities {
        &self.caps
    }

    fn score_text(&self, text: &str, view: &ViewRequest) -> Result<ScoreVector, PortError> {
        let mut p = vec![0.1; 3];
        p[self.relation(text)] = 0.8;
        Ok(class_score(ScoreVector::softmax(p)?, view))
    }
}
