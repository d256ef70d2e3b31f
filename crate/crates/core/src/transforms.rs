//! Input transformations producing follow-up texts from source texts.
//!
//! All transforms are pure: stochastic variants draw only from a
//! [`SplitMix64`] stream seeded with `seed XOR fnv1a64(input id)`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::BufRead;
use std::ops::Range;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::{fnv1a64, SplitMix64};
use crate::types::{Span, TextInput};
use crate::CoreError;

/// Placeholder token marking the insertion point in a context template.
pub const PLACEHOLDER: &str = "⟨x⟩";

#[derive(Debug, Error)]
pub enum TransformError {
    #[error("text `{id}` has no placeholder {PLACEHOLDER}")]
    PlaceholderMissing { id: String },
    #[error("text `{id}` has {count} placeholders, expected exactly one")]
    PlaceholderRepeated { id: String, count: usize },
    #[error("no applicable site for {transform} in `{id}`")]
    NoApplicableSite { transform: &'static str, id: String },
    #[error("{transform} takes {expected} input(s), got {found}")]
    Arity { transform: &'static str, expected: usize, found: usize },
    #[error("rate must lie in (0, 1], got {0}")]
    InvalidRate(f64),
    #[error("lexicon: {0}")]
    InvalidLexicon(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Probability in `(0, 1]` that a site is modified.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
pub struct Rate(f64);

impl Rate {
    pub fn new(r: f64) -> Result<Self, TransformError> {
        if r > 0.0 && r <= 1.0 {
            Ok(Self(r))
        } else {
            Err(TransformError::InvalidRate(r))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl<'de> Deserialize<'de> for Rate {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = f64::deserialize(d)?;
        Rate::new(r).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Position {
    Start,
    End,
}

/// Word-to-replacements table.
#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    entries: BTreeMap<String, Vec<String>>,
    case_sensitive: bool,
    fingerprint: u64,
}

impl Lexicon {
    pub fn new(entries: BTreeMap<String, Vec<String>>, case_sensitive: bool) -> Result<Self, TransformError> {
        let mut normalized = BTreeMap::new();
        for (word, replacements) in entries {
            if replacements.is_empty() {
                return Err(TransformError::InvalidLexicon(format!("`{word}` has no replacements")));
            }
            let key = if case_sensitive { word.clone() } else { word.to_lowercase() };
            if replacements.iter().any(|r| {
                if case_sensitive {
                    *r == word
                } else {
                    r.to_lowercase() == key
                }
            }) {
                return Err(TransformError::InvalidLexicon(format!("`{word}` maps to itself")));
            }
            normalized.insert(key, replacements);
        }
        let mut canon = String::new();
        for (k, v) in &normalized {
            canon.push_str(k);
            canon.push('\t');
            canon.push_str(&v.join(","));
            canon.push('\n');
        }
        canon.push_str(if case_sensitive { "cs" } else { "ci" });
        Ok(Self { entries: normalized, case_sensitive, fingerprint: fnv1a64(canon.as_bytes()) })
    }

    /// Parses `word<TAB>replacement1,replacement2,...` lines.
    pub fn from_tsv<R: BufRead>(reader: R, case_sensitive: bool) -> Result<Self, TransformError> {
        let mut entries = BTreeMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (word, reps) = line.split_once('\t').ok_or_else(|| TransformError::Parse {
                line: i + 1,
                message: "expected `word<TAB>replacements`".into(),
            })?;
            let reps: Vec<String> =
                reps.split(',').map(str::trim).filter(|r| !r.is_empty()).map(String::from).collect();
            entries.insert(word.trim().to_string(), reps);
        }
        Self::new(entries, case_sensitive)
    }

    pub fn load(path: &Path, case_sensitive: bool) -> Result<Self, TransformError> {
        Self::from_tsv(std::io::BufReader::new(std::fs::File::open(path)?), case_sensitive)
    }

    pub fn lookup(&self, word: &str) -> Option<&[String]> {
        if self.case_sensitive {
            self.entries.get(word)
        } else {
            self.entries.get(&word.to_lowercase())
        }
        .map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }
}

/// Key adjacency for keyboard-typo noise.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyboardLayout {
    neighbors: BTreeMap<char, Vec<char>>,
    fingerprint: u64,
}

const QWERTY: &str = include_str!("../data/qwerty.tsv");

impl KeyboardLayout {
    pub fn qwerty() -> Self {
        Self::from_tsv(QWERTY.as_bytes()).expect("bundled layout parses")
    }

    /// Parses `key<TAB>n1,n2,...` lines.
    pub fn from_tsv<R: BufRead>(reader: R) -> Result<Self, TransformError> {
        let mut neighbors = BTreeMap::new();
        let mut canon = String::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || TransformError::Parse { line: i + 1, message: "expected `key<TAB>neighbors`".into() };
            let (key, ns) = line.split_once('\t').ok_or_else(bad)?;
            let mut chars = key.trim().chars();
            let k = chars.next().ok_or_else(bad)?;
            if chars.next().is_some() {
                return Err(bad());
            }
            let ns: Vec<char> = ns.split(',').filter_map(|n| n.trim().chars().next()).collect();
            if ns.is_empty() {
                return Err(bad());
            }
            neighbors.insert(k.to_ascii_lowercase(), ns);
        }
        for (k, ns) in &neighbors {
            canon.push(*k);
            canon.extend(ns.iter());
            canon.push('\n');
        }
        Ok(Self { neighbors, fingerprint: fnv1a64(canon.as_bytes()) })
    }

    pub fn load(path: &Path) -> Result<Self, TransformError> {
        Self::from_tsv(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn neighbors(&self, c: char) -> Option<&[char]> {
        let lower = c.to_lowercase().next().unwrap_or(c);
        self.neighbors.get(&lower).map(Vec::as_slice)
    }
}

/// A deterministic text transformation.
#[derive(Debug, Clone, PartialEq)]
pub enum TransformSpec {
    ConcatSentence { text: String, position: Position },
    SynonymReplace { lexicon: Arc<Lexicon>, rate: Rate, seed: u64 },
    AntonymReplace { lexicon: Arc<Lexicon>, rate: Rate, seed: u64 },
    /// Replaces every occurrence of a mapped word. Also serves phrase-free
    /// paraphrase tables.
    KeywordSwap { mapping: BTreeMap<String, String> },
    CharKeyboardTypo { layout: Arc<KeyboardLayout>, rate: Rate, seed: u64 },
    CharRandomReplace { rate: Rate, seed: u64 },
    CharSwapNeighbors { rate: Rate, seed: u64 },
    /// Shuffles the interior letters of words of four or more letters.
    CharShuffleWord { rate: Rate, seed: u64 },
    SentenceShuffle { seed: u64 },
    /// Fills the single placeholder of the input text with `insertion`.
    TemplateInstantiate { insertion: String },
    PairConcat { separator: String },
}

impl TransformSpec {
    pub fn name(&self) -> &'static str {
        match self {
            TransformSpec::ConcatSentence { .. } => "concat_sentence",
            TransformSpec::SynonymReplace { .. } => "synonym_replace",
            TransformSpec::AntonymReplace { .. } => "antonym_replace",
            TransformSpec::KeywordSwap { .. } => "keyword_swap",
            TransformSpec::CharKeyboardTypo { .. } => "char_keyboard_typo",
            TransformSpec::CharRandomReplace { .. } => "char_random_replace",
            TransformSpec::CharSwapNeighbors { .. } => "char_swap_neighbors",
            TransformSpec::CharShuffleWord { .. } => "char_shuffle_word",
            TransformSpec::SentenceShuffle { .. } => "sentence_shuffle",
            TransformSpec::TemplateInstantiate { .. } => "template_instantiate",
            TransformSpec::PairConcat { .. } => "pair_concat",
        }
    }

    /// Canonical description; two specs with equal descriptions behave
    /// identically.
    pub fn describe(&self) -> String {
        match self {
            TransformSpec::ConcatSentence { text, position } => {
                let pos = match position {
                    Position::Start => "start",
                    Position::End => "end",
                };
                format!("concat_sentence({pos}): {text}")
            }
            TransformSpec::SynonymReplace { lexicon, rate, seed }
            | TransformSpec::AntonymReplace { lexicon, rate, seed } => {
                format!("{}(lexicon={:016x}, rate={}, seed={seed})", self.name(), lexicon.fingerprint(), rate.0)
            }
            TransformSpec::KeywordSwap { mapping } => {
                let pairs: Vec<String> = mapping.iter().map(|(k, v)| format!("{k}->{v}")).collect();
                format!("keyword_swap({})", pairs.join(", "))
            }
            TransformSpec::CharKeyboardTypo { layout, rate, seed } => {
                format!("char_keyboard_typo(layout={:016x}, rate={}, seed={seed})", layout.fingerprint, rate.0)
            }
            TransformSpec::CharRandomReplace { rate, seed }
            | TransformSpec::CharSwapNeighbors { rate, seed }
            | TransformSpec::CharShuffleWord { rate, seed } => {
                format!("{}(rate={}, seed={seed})", self.name(), rate.0)
            }
            TransformSpec::SentenceShuffle { seed } => format!("sentence_shuffle(seed={seed})"),
            TransformSpec::TemplateInstantiate { insertion } => format!("template_instantiate: {insertion}"),
            TransformSpec::PairConcat { separator } => format!("pair_concat({separator:?})"),
        }
    }

    /// 16 hex digits identifying this transform.
    pub fn fingerprint(&self) -> String {
        format!("{:016x}", fnv1a64(self.describe().as_bytes()))
    }

    pub fn arity(&self) -> usize {
        match self {
            TransformSpec::PairConcat { .. } => 2,
            _ => 1,
        }
    }

    /// Applies a unary transform.
    pub fn apply(&self, x: &TextInput) -> Result<TextInput, TransformError> {
        self.apply_many(&[x])
    }

    /// Applies the transform to its source inputs.
    pub fn apply_many(&self, inputs: &[&TextInput]) -> Result<TextInput, TransformError> {
        if inputs.len() != self.arity() {
            return Err(TransformError::Arity { transform: self.name(), expected: self.arity(), found: inputs.len() });
        }
        if let TransformSpec::PairConcat { separator } = self {
            return Ok(form_pair(inputs[0], inputs[1], separator));
        }
        let x = inputs[0];
        let text = match self {
            TransformSpec::ConcatSentence { text, position } => match position {
                Position::Start => format!("{text} {}", x.text),
                Position::End => format!("{} {text}", x.text),
            },
            TransformSpec::SynonymReplace { lexicon, rate, seed }
            | TransformSpec::AntonymReplace { lexicon, rate, seed } => {
                let mut rng = SplitMix64::for_input(*seed, &x.id);
                replace_words(self.name(), x, |word| {
                    let reps = lexicon.lookup(word)?;
                    let pick = rng.next_f64() < rate.0;
                    let choice = rng.below(reps.len() as u64) as usize;
                    Some(pick.then(|| reps[choice].clone()))
                })?
            }
            TransformSpec::KeywordSwap { mapping } => replace_words(self.name(), x, |word| {
                mapping
                    .get(word)
                    .or_else(|| mapping.get(&word.to_lowercase()))
                    .map(|r| Some(r.clone()))
            })?,
            TransformSpec::CharKeyboardTypo { layout, rate, seed } => {
                let mut rng = SplitMix64::for_input(*seed, &x.id);
                map_word_chars(&x.text, |chars| {
                    for c in chars.iter_mut() {
                        if let Some(ns) = layout.neighbors(*c) {
                            if rng.next_f64() < rate.0 {
                                let n = ns[rng.below(ns.len() as u64) as usize];
                                *c = match_case(*c, n);
                            }
                        }
                    }
                })
            }
            TransformSpec::CharRandomReplace { rate, seed } => {
                let mut rng = SplitMix64::for_input(*seed, &x.id);
                map_word_chars(&x.text, |chars| {
                    for c in chars.iter_mut().filter(|c| c.is_alphabetic()) {
                        if rng.next_f64() < rate.0 {
                            let orig = c.to_ascii_lowercase();
                            let mut pick = b'a' + rng.below(25) as u8;
                            if orig.is_ascii_lowercase() && pick >= orig as u8 {
                                pick += 1;
                            }
                            *c = match_case(*c, pick as char);
                        }
                    }
                })
            }
            TransformSpec::CharSwapNeighbors { rate, seed } => {
                let mut rng = SplitMix64::for_input(*seed, &x.id);
                map_word_chars(&x.text, |chars| {
                    let mut i = 0;
                    while i + 1 < chars.len() {
                        if rng.next_f64() < rate.0 {
                            chars.swap(i, i + 1);
                            i += 2;
                        } else {
                            i += 1;
                        }
                    }
                })
            }
            TransformSpec::CharShuffleWord { rate, seed } => {
                let mut rng = SplitMix64::for_input(*seed, &x.id);
                map_word_chars(&x.text, |chars| {
                    if chars.len() >= 4 && rng.next_f64() < rate.0 {
                        let n = chars.len();
                        rng.shuffle(&mut chars[1..n - 1]);
                    }
                })
            }
            TransformSpec::SentenceShuffle { seed } => {
                let mut rng = SplitMix64::for_input(*seed, &x.id);
                let mut sentences = split_sentences(&x.text);
                rng.shuffle(&mut sentences);
                sentences.join(" ")
            }
            TransformSpec::TemplateInstantiate { insertion } => {
                let (before, after) = split_placeholder(&x.id, &x.text)?;
                format!("{before}{insertion}{after}")
            }
            TransformSpec::PairConcat { .. } => unreachable!("handled above"),
        };
        Ok(TextInput::new(format!("{}#{}", x.id, self.fingerprint()), text)?)
    }
}

impl fmt::Display for TransformSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.describe())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum SegmentKind {
    Space,
    Word,
    Punct,
}

/// Splits on Unicode whitespace and detaches trailing non-alphanumeric
/// characters from each token. Byte ranges cover the whole text.
pub(crate) fn segments(text: &str) -> Vec<(SegmentKind, Range<usize>)> {
    let mut out = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some(&(start, c)) = chars.peek() {
        if c.is_whitespace() {
            let mut end = start;
            while let Some(&(i, c)) = chars.peek() {
                if !c.is_whitespace() {
                    break;
                }
                end = i + c.len_utf8();
                chars.next();
            }
            out.push((SegmentKind::Space, start..end));
            continue;
        }
        let mut end = start;
        while let Some(&(i, c)) = chars.peek() {
            if c.is_whitespace() {
                break;
            }
            end = i + c.len_utf8();
            chars.next();
        }
        let token = &text[start..end];
        let word_len = token.trim_end_matches(|c: char| !c.is_alphanumeric()).len();
        if word_len > 0 {
            out.push((SegmentKind::Word, start..start + word_len));
        }
        if word_len < token.len() {
            out.push((SegmentKind::Punct, start + word_len..end));
        }
    }
    out
}

/// Words of `text` as defined by [`segments`].
pub fn words(text: &str) -> impl Iterator<Item = &str> {
    segments(text).into_iter().filter(|(k, _)| *k == SegmentKind::Word).map(move |(_, r)| &text[r])
}

fn match_case(original: char, replacement: char) -> char {
    if original.is_uppercase() {
        replacement.to_uppercase().next().unwrap_or(replacement)
    } else {
        replacement
    }
}

fn transfer_case(original: &str, replacement: &str) -> String {
    let mut chars = original.chars();
    match (chars.next(), replacement.chars().next()) {
        (Some(o), Some(r)) if o.is_uppercase() && !r.is_uppercase() => {
            let mut s: String = r.to_uppercase().collect();
            s.push_str(&replacement[r.len_utf8()..]);
            s
        }
        _ => replacement.to_string(),
    }
}

/// Rewrites words in place. `site` returns `None` when the word is not a
/// site, `Some(None)` for a site left unchanged and `Some(Some(r))` to
/// replace it. Zero sites is an error.
fn replace_words(
    transform: &'static str,
    x: &TextInput,
    mut site: impl FnMut(&str) -> Option<Option<String>>,
) -> Result<String, TransformError> {
    let mut out = String::with_capacity(x.text.len() + 16);
    let mut sites = 0usize;
    for (kind, range) in segments(&x.text) {
        let seg = &x.text[range];
        if kind == SegmentKind::Word {
            if let Some(decision) = site(seg) {
                sites += 1;
                if let Some(rep) = decision {
                    out.push_str(&transfer_case(seg, &rep));
                    continue;
                }
            }
        }
        out.push_str(seg);
    }
    if sites == 0 {
        return Err(TransformError::NoApplicableSite { transform, id: x.id.clone() });
    }
    Ok(out)
}

fn map_word_chars(text: &str, mut f: impl FnMut(&mut Vec<char>)) -> String {
    let mut out = String::with_capacity(text.len());
    let mut buf = Vec::new();
    for (kind, range) in segments(text) {
        let seg = &text[range];
        if kind == SegmentKind::Word {
            buf.clear();
            buf.extend(seg.chars());
            f(&mut buf);
            out.extend(buf.iter());
        } else {
            out.push_str(seg);
        }
    }
    out
}

fn split_sentences(text: &str) -> Vec<String> {
    let mut sentences = Vec::new();
    let mut current = String::new();
    let mut chars = text.trim().chars().peekable();
    while let Some(c) = chars.next() {
        current.push(c);
        if matches!(c, '.' | '!' | '?') {
            while let Some(&n) = chars.peek() {
                if matches!(n, '.' | '!' | '?' | '"' | '\'' | ')') {
                    current.push(n);
                    chars.next();
                } else {
                    break;
                }
            }
            if chars.peek().is_none_or(|n| n.is_whitespace()) {
                let s = current.trim();
                if !s.is_empty() {
                    sentences.push(s.to_string());
                }
                current.clear();
            }
        }
    }
    let rest = current.trim();
    if !rest.is_empty() {
        sentences.push(rest.to_string());
    }
    sentences
}

fn split_placeholder<'a>(id: &str, context: &'a str) -> Result<(&'a str, &'a str), TransformError> {
    let count = context.matches(PLACEHOLDER).count();
    match count {
        0 => Err(TransformError::PlaceholderMissing { id: id.to_string() }),
        1 => {
            let at = context.find(PLACEHOLDER).expect("counted");
            Ok((&context[..at], &context[at + PLACEHOLDER.len()..]))
        }
        _ => Err(TransformError::PlaceholderRepeated { id: id.to_string(), count }),
    }
}

/// Builds `C(a) + separator + C(b)` and records the character spans of both
/// insertions.
pub fn instantiate_pair(
    id: impl Into<String>,
    context: &str,
    a: &str,
    b: &str,
    separator: &str,
) -> Result<TextInput, TransformError> {
    let id = id.into();
    let (before, after) = split_placeholder(&id, context)?;
    let before_chars = before.chars().count();
    let first_len = before_chars + a.chars().count() + after.chars().count();
    let sep_chars = separator.chars().count();
    let span_a = Span::new(before_chars, before_chars + a.chars().count());
    let b_start = first_len + sep_chars + before_chars;
    let span_b = Span::new(b_start, b_start + b.chars().count());
    let text = format!("{before}{a}{after}{separator}{before}{b}{after}");
    Ok(TextInput::new(id, text)?.with_spans(vec![span_a, span_b])?)
}

/// Ordered pair encoding `a + separator + b`.
pub fn form_pair(a: &TextInput, b: &TextInput, separator: &str) -> TextInput {
    TextInput {
        id: format!("({},{})", a.id, b.id),
        text: format!("{}{separator}{}", a.text, b.text),
        spans: Vec::new(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monotonicity {
    Up,
    Down,
}

impl fmt::Display for Monotonicity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Monotonicity::Up => "up",
            Monotonicity::Down => "down",
        })
    }
}

/// A sentence template with one placeholder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Context {
    pub context: String,
    pub monotonicity: Monotonicity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LexicalRelation {
    Hyper,
    Hypo,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InsertionPair {
    pub a: String,
    pub b: String,
    pub relation: LexicalRelation,
}

impl InsertionPair {
    pub fn key(&self) -> String {
        format!("({},{})", self.a, self.b)
    }
}

fn read_jsonl<T: serde::de::DeserializeOwned, R: BufRead>(reader: R) -> Result<Vec<T>, TransformError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| TransformError::Parse { line: i + 1, message: e.to_string() })?,
        );
    }
    Ok(out)
}

/// Reads `{"context": ..., "monotonicity": "up"|"down"}` lines; every
/// context must contain exactly one placeholder.
pub fn read_contexts<R: BufRead>(reader: R) -> Result<Vec<Context>, TransformError> {
    let contexts: Vec<Context> = read_jsonl(reader)?;
    for (i, c) in contexts.iter().enumerate() {
        split_placeholder(&format!("context {i}"), &c.context)?;
    }
    Ok(contexts)
}

/// Reads `{"a": ..., "b": ..., "relation": "hyper"|"hypo"|"none"}` lines.
pub fn read_insertions<R: BufRead>(reader: R) -> Result<Vec<InsertionPair>, TransformError> {
    read_jsonl(reader)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn input(text: &str) -> TextInput {
        TextInput::new("x", text).unwrap()
    }

    fn lexicon(pairs: &[(&str, &[&str])]) -> Arc<Lexicon> {
        let map = pairs.iter().map(|(k, v)| (k.to_string(), v.iter().map(|s| s.to_string()).collect())).collect();
        Arc::new(Lexicon::new(map, false).unwrap())
    }

    #[test]
    fn concat_at_start() {
        let t = TransformSpec::ConcatSentence { text: "Thank you.".into(), position: Position::Start };
        let out = t.apply(&input("Light, cute and forgettable.")).unwrap();
        assert_eq!(out.text, "Thank you. Light, cute and forgettable.");
        assert!(out.id.starts_with("x#"));
        assert_eq!(out.id.len(), 2 + 16);
    }

    #[test]
    fn concat_at_end() {
        let t = TransformSpec::ConcatSentence { text: "My friends were happy, though.".into(), position: Position::End };
        assert_eq!(t.apply(&input("Fine.")).unwrap().text, "Fine. My friends were happy, though.");
    }

    #[test]
    fn synonym_replace_full_rate() {
        let lex = lexicon(&[("cat", &["pet"]), ("sat", &["stood"]), ("on", &["onto"])]);
        let t = TransformSpec::SynonymReplace { lexicon: lex, rate: Rate::new(1.0).unwrap(), seed: 3 };
        assert_eq!(t.apply(&input("The cat sat on the mat.")).unwrap().text, "The pet stood onto the mat.");
    }

    #[test]
    fn synonym_replace_without_sites() {
        let lex = lexicon(&[("dog", &["hound"])]);
        let t = TransformSpec::SynonymReplace { lexicon: lex, rate: Rate::new(1.0).unwrap(), seed: 0 };
        assert!(matches!(t.apply(&input("The cat sat.")), Err(TransformError::NoApplicableSite { .. })));
    }

    #[test]
    fn synonym_replace_keeps_capitalisation() {
        let lex = lexicon(&[("good", &["fine"])]);
        let t = TransformSpec::SynonymReplace { lexicon: lex, rate: Rate::new(1.0).unwrap(), seed: 0 };
        assert_eq!(t.apply(&input("Good movie, good cast!")).unwrap().text, "Fine movie, fine cast!");
    }

    #[test]
    fn lexicon_rejects_self_maps_and_empty_lists() {
        let mut m = BTreeMap::new();
        m.insert("cat".to_string(), vec!["Cat".to_string()]);
        assert!(Lexicon::new(m, false).is_err());
        let mut m = BTreeMap::new();
        m.insert("cat".to_string(), vec![]);
        assert!(Lexicon::new(m, false).is_err());
    }

    #[test]
    fn lexicon_tsv() {
        let lex = Lexicon::from_tsv("cat\tpet, feline\n\n# comment\nsat\tstood\n".as_bytes(), false).unwrap();
        assert_eq!(lex.lookup("CAT").unwrap(), ["pet", "feline"]);
        assert_eq!(lex.len(), 2);
    }

    #[test]
    fn keyword_swap() {
        let mut mapping = BTreeMap::new();
        mapping.insert("he".to_string(), "she".to_string());
        mapping.insert("his".to_string(), "her".to_string());
        let t = TransformSpec::KeywordSwap { mapping };
        assert_eq!(t.apply(&input("He liked his seat.")).unwrap().text, "She liked her seat.");
    }

    #[test]
    fn swap_neighbors_on_single_char_is_identity() {
        for seed in [0, 1, 99] {
            for rate in [0.1, 1.0] {
                let t = TransformSpec::CharSwapNeighbors { rate: Rate::new(rate).unwrap(), seed };
                assert_eq!(t.apply(&input("a")).unwrap().text, "a");
            }
        }
    }

    #[test]
    fn swap_neighbors_full_rate_swaps_pairs() {
        let t = TransformSpec::CharSwapNeighbors { rate: Rate::new(1.0).unwrap(), seed: 5 };
        assert_eq!(t.apply(&input("abcde fg.")).unwrap().text, "badce gf.");
    }

    #[test]
    fn keyboard_typo_full_rate_uses_neighbors() {
        let layout = Arc::new(KeyboardLayout::qwerty());
        let t = TransformSpec::CharKeyboardTypo { layout: layout.clone(), rate: Rate::new(1.0).unwrap(), seed: 1 };
        let out = t.apply(&input("Cat")).unwrap().text;
        let orig: Vec<char> = "Cat".chars().collect();
        for (o, n) in orig.iter().zip(out.chars()) {
            assert!(layout.neighbors(*o).unwrap().contains(&n.to_ascii_lowercase()));
            assert_eq!(o.is_uppercase(), n.is_uppercase());
        }
    }

    #[test]
    fn random_replace_changes_every_letter_at_full_rate() {
        let t = TransformSpec::CharRandomReplace { rate: Rate::new(1.0).unwrap(), seed: 11 };
        let out = t.apply(&input("abc, xyz!")).unwrap().text;
        assert_eq!(out.len(), 9);
        for (o, n) in "abc, xyz!".chars().zip(out.chars()) {
            if o.is_alphabetic() {
                assert_ne!(o, n);
            } else {
                assert_eq!(o, n);
            }
        }
    }

    #[test]
    fn shuffle_word_keeps_ends_and_letters() {
        let t = TransformSpec::CharShuffleWord { rate: Rate::new(1.0).unwrap(), seed: 2 };
        let out = t.apply(&input("wonderful cast")).unwrap().text;
        let (w, c) = out.split_once(' ').unwrap();
        assert!(w.starts_with('w') && w.ends_with('l'));
        let mut a: Vec<char> = w.chars().collect();
        let mut b: Vec<char> = "wonderful".chars().collect();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
        assert!(c.starts_with('c') && c.ends_with('t'));
    }

    #[test]
    fn sentence_shuffle_permutes_sentences() {
        let t = TransformSpec::SentenceShuffle { seed: 4 };
        let out = t.apply(&input("One. Two! Three? Four.")).unwrap().text;
        let mut got: Vec<&str> = out.split(' ').collect();
        got.sort_unstable();
        assert_eq!(got, ["Four.", "One.", "Three?", "Two!"]);
        assert_eq!(t.apply(&input("Only one sentence here.")).unwrap().text, "Only one sentence here.");
    }

    #[test]
    fn template_instantiate() {
        let t = TransformSpec::TemplateInstantiate { insertion: "tree".into() };
        assert_eq!(t.apply(&input("There was no ⟨x⟩.")).unwrap().text, "There was no tree.");
        assert!(matches!(t.apply(&input("No slot.")), Err(TransformError::PlaceholderMissing { .. })));
        assert!(matches!(t.apply(&input("⟨x⟩ and ⟨x⟩")), Err(TransformError::PlaceholderRepeated { count: 2, .. })));
    }

    #[test]
    fn instantiate_pair_examples() {
        let p = instantiate_pair("p", "There was no ⟨x⟩.", "tree", "cherry tree", " ").unwrap();
        assert_eq!(p.text, "There was no tree. There was no cherry tree.");
        assert_eq!(p.spans[0].slice(&p.text), Some("tree"));
        assert_eq!(p.spans[1].slice(&p.text), Some("cherry tree"));

        let same = instantiate_pair("q", "There was no ⟨x⟩.", "tree", "tree", " ").unwrap();
        assert_ne!(same.spans[0], same.spans[1]);
        let half = same.text.chars().count() / 2;
        assert_eq!(&same.text[..half], "There was no tree.");

        let bare = instantiate_pair("r", "⟨x⟩", "a", "b", " ").unwrap();
        assert_eq!(bare.text, "a b");
        assert_eq!(bare.spans, vec![Span::new(0, 1), Span::new(2, 3)]);

        assert!(matches!(
            instantiate_pair("s", "no slot", "a", "b", " "),
            Err(TransformError::PlaceholderMissing { .. })
        ));
    }

    #[test]
    fn form_pair_is_ordered() {
        let a = TextInput::new("1", "arrangement").unwrap();
        let b = TextInput::new("2", "symmetrical").unwrap();
        let c = TextInput::new("3", "together").unwrap();
        assert_eq!(form_pair(&a, &b, "</s>").text, "arrangement</s>symmetrical");
        assert_eq!(form_pair(&b, &c, "</s>").text, "symmetrical</s>together");
        assert_eq!(form_pair(&a, &a, " ").text, "arrangement arrangement");
        assert_ne!(form_pair(&a, &b, " ").text, form_pair(&b, &a, " ").text);
        assert_eq!(form_pair(&a, &b, " ").id, "(1,2)");
        let t = TransformSpec::PairConcat { separator: " ".into() };
        assert_eq!(t.apply_many(&[&b, &c]).unwrap().text, "symmetrical together");
        assert!(matches!(t.apply(&a), Err(TransformError::Arity { .. })));
    }

    #[test]
    fn segmentation_detaches_trailing_punctuation() {
        let got: Vec<&str> = words("Light, cute and forgettable. isn't (it)?").collect();
        assert_eq!(got, ["Light", "cute", "and", "forgettable", "isn't", "(it"]);
    }

    #[test]
    fn context_and_insertion_files() {
        let ctx = read_contexts(r#"{"context": "There was no ⟨x⟩.", "monotonicity": "down"}"#.as_bytes()).unwrap();
        assert_eq!(ctx[0].monotonicity, Monotonicity::Down);
        assert!(read_contexts(r#"{"context": "nothing", "monotonicity": "up"}"#.as_bytes()).is_err());
        let ins = read_insertions(r#"{"a": "tree", "b": "cherry tree", "relation": "hyper"}"#.as_bytes()).unwrap();
        assert_eq!(ins[0].relation, LexicalRelation::Hyper);
        assert_eq!(ins[0].key(), "(tree,cherry tree)");
    }

    fn stochastic_specs(seed: u64, rate: f64) -> Vec<TransformSpec> {
        let rate = Rate::new(rate).unwrap();
        vec![
            TransformSpec::CharKeyboardTypo { layout: Arc::new(KeyboardLayout::qwerty()), rate, seed },
            TransformSpec::CharRandomReplace { rate, seed },
            TransformSpec::CharSwapNeighbors { rate, seed },
            TransformSpec::CharShuffleWord { rate, seed },
            TransformSpec::SentenceShuffle { seed },
        ]
    }

    proptest! {
        #[test]
        fn apply_is_deterministic(text in "[a-zA-Z .,!?]{1,60}", seed: u64, rate in 0.01f64..=1.0) {
            prop_assume!(!text.trim().is_empty());
            let x = input(&text);
            for t in stochastic_specs(seed, rate) {
                let a = t.apply(&x).unwrap();
                let b = t.clone().apply(&x.clone()).unwrap();
                prop_assert_eq!(a, b);
            }
        }

        #[test]
        fn concat_never_identity(text in "\\PC{1,40}", extra in "[A-Za-z]{1,10}") {
            prop_assume!(!text.trim().is_empty());
            let t = TransformSpec::ConcatSentence { text: extra, position: Position::End };
            prop_assert_ne!(t.apply(&input(&text)).unwrap().text, text);
        }

        #[test]
        fn instantiated_spans_slice_back(
            before in "[a-zé ]{0,12}",
            after in "[a-z. ]{0,12}",
            a in "[a-zü]{1,8}",
            b in "[a-z ]{1,8}",
            sep in "[ |]{1,3}",
        ) {
            let ctx = format!("{before}{PLACEHOLDER}{after}");
            prop_assume!(!format!("{before}{a}{after}").trim().is_empty());
            let p = instantiate_pair("p", &ctx, &a, &b, &sep).unwrap();
            prop_assert_eq!(p.spans[0].slice(&p.text), Some(a.as_str()));
            prop_assert_eq!(p.spans[1].slice(&p.text), Some(b.as_str()));
        }
    }
}
