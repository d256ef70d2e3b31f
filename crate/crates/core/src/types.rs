//! Texts, datasets, model outputs and view requests.

use std::collections::HashSet;
use std::fmt;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::CoreError;

/// Half-open character range `[start, end)` into a text, counted in Unicode
/// scalar values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    /// Returns the substring covered by this span, or `None` when it falls
    /// outside the text.
    pub fn slice<'a>(&self, text: &'a str) -> Option<&'a str> {
        if self.start > self.end {
            return None;
        }
        let mut indices = text.char_indices().map(|(i, _)| i).chain(std::iter::once(text.len()));
        let start = indices.nth(self.start)?;
        let end = if self.end == self.start {
            start
        } else {
            indices.nth(self.end - self.start - 1)?
        };
        Some(&text[start..end])
    }
}

impl From<[usize; 2]> for Span {
    fn from(v: [usize; 2]) -> Self {
        Span::new(v[0], v[1])
    }
}

impl From<Span> for [usize; 2] {
    fn from(s: Span) -> Self {
        [s.start, s.end]
    }
}

/// A single identified text. `spans` optionally marks regions of interest
/// (insertions) for hidden-view extraction.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TextInput {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub spans: Vec<Span>,
}

impl TextInput {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self, CoreError> {
        let id = id.into();
        let text = text.into();
        if text.trim().is_empty() {
            return Err(CoreError::EmptyText { id });
        }
        Ok(Self { id, text, spans: Vec::new() })
    }

    pub fn with_spans(mut self, spans: Vec<Span>) -> Result<Self, CoreError> {
        let chars = self.text.chars().count();
        if let Some(bad) = spans.iter().find(|s| s.start > s.end || s.end > chars) {
            return Err(CoreError::SpanOutOfBounds { span: *bad, len: chars });
        }
        self.spans = spans;
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    entries: Vec<TextInput>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, entries: Vec<TextInput>) -> Result<Self, CoreError> {
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if !seen.insert(e.id.as_str()) {
                return Err(CoreError::DuplicateId(e.id.clone()));
            }
        }
        Ok(Self { name: name.into(), entries })
    }

    /// Builds a dataset from bare strings, assigning `line-<n>` ids.
    pub fn from_texts<I, S>(name: impl Into<String>, texts: I) -> Result<Self, CoreError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let entries = texts
            .into_iter()
            .enumerate()
            .map(|(n, t)| TextInput::new(format!("line-{n}"), t))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(name, entries)
    }

    pub fn entries(&self) -> &[TextInput] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&TextInput> {
        self.entries.get(i)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, TextInput> {
        self.entries.iter()
    }

    /// Reads `{"id": ..., "text": ...}` objects, one per line. Blank lines
    /// are skipped.
    pub fn read_jsonl<R: BufRead>(name: impl Into<String>, reader: R) -> Result<Self, CoreError> {
        #[derive(Deserialize)]
        struct Row {
            id: String,
            text: String,
        }
        let mut entries = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: Row = serde_json::from_str(&line).map_err(|e| CoreError::Parse {
                line: lineno + 1,
                message: e.to_string(),
            })?;
            entries.push(TextInput::new(row.id, row.text)?);
        }
        Self::new(name, entries)
    }

    /// Reads one text per line. Ids are `line-<n>` with `n` the zero-based
    /// physical line number; blank lines are skipped but still counted.
    pub fn read_plain<R: BufRead>(name: impl Into<String>, reader: R) -> Result<Self, CoreError> {
        let mut entries = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(TextInput::new(format!("line-{n}"), line)?);
        }
        Self::new(name, entries)
    }

    /// Loads a dataset, choosing JSONL for `.jsonl`/`.json` extensions and
    /// plain text otherwise.
    pub fn load(path: &Path) -> Result<Self, CoreError> {
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => Self::read_jsonl(name, file),
            _ => Self::read_plain(name, file),
        }
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a TextInput;
    type IntoIter = std::slice::Iter<'a, TextInput>;

    fn into_iter(self) -> Self::IntoIter {
        self.entries.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Softmax,
    Embedding,
    Scalar,
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreKind::Softmax => "softmax",
            ScoreKind::Embedding => "embedding",
            ScoreKind::Scalar => "scalar",
        })
    }
}

const SOFTMAX_SUM_TOLERANCE: f64 = 1e-9;

/// A model output: a probability vector, an embedding, or a single score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    values: Vec<f64>,
    kind: ScoreKind,
}

impl ScoreVector {
    pub fn new(kind: ScoreKind, values: Vec<f64>) -> Result<Self, CoreError> {
        match kind {
            ScoreKind::Softmax => {
                if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(CoreError::InvalidSoftmax("component outside [0, 1]".into()));
                }
                let sum: f64 = values.iter().sum();
                if (sum - 1.0).abs() > SOFTMAX_SUM_TOLERANCE {
                    return Err(CoreError::InvalidSoftmax(format!("components sum to {sum}")));
                }
            }
            ScoreKind::Scalar => {
                if values.len() != 1 {
                    return Err(CoreError::DimensionMismatch { expected: 1, found: values.len() });
                }
            }
            ScoreKind::Embedding => {}
        }
        Ok(Self { values, kind })
    }

    pub fn softmax(values: Vec<f64>) -> Result<Self, CoreError> {
        Self::new(ScoreKind::Softmax, values)
    }

    pub fn embedding(values: Vec<f64>) -> Self {
        Self { values, kind: ScoreKind::Embedding }
    }

    pub fn scalar(value: f64) -> Self {
        Self { values: vec![value], kind: ScoreKind::Scalar }
    }

    /// Normalises raw logits into a softmax vector.
    pub fn from_logits(logits: &[f64]) -> Self {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        Self { values: exps.into_iter().map(|e| e / sum).collect(), kind: ScoreKind::Softmax }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kind(&self) -> ScoreKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Index of the largest softmax component; ties go to the lowest index.
pub fn predicted_class(y: &ScoreVector) -> Result<usize, CoreError> {
    if y.kind != ScoreKind::Softmax {
        return Err(CoreError::InvalidViewKind { expected: ScoreKind::Softmax, found: y.kind });
    }
    if y.values.len() < 2 {
        return Err(CoreError::DimensionMismatch { expected: 2, found: y.values.len() });
    }
    let mut best = 0;
    for (i, v) in y.values.iter().enumerate().skip(1) {
        if *v > y.values[best] {
            best = i;
        }
    }
    Ok(best)
}

pub fn cosine_similarity(a: &ScoreVector, b: &ScoreVector) -> Result<f64, CoreError> {
    if a.len() != b.len() {
        return Err(CoreError::DimensionMismatch { expected: a.len(), found: b.len() });
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.values.iter().zip(&b.values) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(CoreError::DegenerateVector);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// What to extract from a model for one text.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ViewRequest {
    Softmax,
    /// Probability of one class, derived from the softmax view.
    ClassScore { label: usize },
    /// Hidden layer `layer` (negative = counted from the last layer),
    /// mean-pooled over each span and concatenated.
    Hidden { layer: i32, spans: Vec<Span> },
    Embedding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewKind {
    Softmax,
    Hidden,
    Embedding,
}

impl ViewRequest {
    /// The wire-level view this request is served from.
    pub fn kind(&self) -> ViewKind {
        match self {
            ViewRequest::Softmax | ViewRequest::ClassScore { .. } => ViewKind::Softmax,
            ViewRequest::Hidden { .. } => ViewKind::Hidden,
            ViewRequest::Embedding => ViewKind::Embedding,
        }
    }

    /// Stable string key, used for cache lookups and ids.
    pub fn fingerprint(&self) -> String {
        match self {
            ViewRequest::Softmax => "softmax".into(),
            ViewRequest::ClassScore { label } => format!("class:{label}"),
            ViewRequest::Embedding => "embedding".into(),
            ViewRequest::Hidden { layer, spans } => {
                let spans: Vec<String> = spans.iter().map(|s| format!("{}-{}", s.start, s.end)).collect();
                format!("hidden:{layer}:{}", spans.join(","))
            }
        }
    }

    /// Checks that hidden spans lie within `text`.
    pub fn validate_for(&self, text: &str) -> Result<(), CoreError> {
        if let ViewRequest::Hidden { spans, .. } = self {
            let len = text.chars().count();
            if let Some(bad) = spans.iter().find(|s| s.start > s.end || s.end > len) {
                return Err(CoreError::SpanOutOfBounds { span: *bad, len });
            }
        }
        Ok(())
    }
}

impl fmt::Display for ViewKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ViewKind::Softmax => "softmax",
            ViewKind::Hidden => "hidden",
            ViewKind::Embedding => "embedding",
        })
    }
}
