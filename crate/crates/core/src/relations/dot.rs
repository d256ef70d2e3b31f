//! A small DOT reader covering the subset [`emit_dot`](super::emit_dot)
//! writes: one digraph with node statements, `->` edges, attribute lists and
//! `key=value` graph attributes.

use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DotError {
    #[error("unexpected end of input")]
    Eof,
    #[error("offset {at}: {message}")]
    Syntax { at: usize, message: String },
}

pub type Attrs = BTreeMap<String, String>;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedDot {
    pub name: Option<String>,
    pub graph_attrs: Attrs,
    pub nodes: BTreeMap<String, Attrs>,
    pub edges: Vec<(String, String, Attrs)>,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Id(String),
    Arrow,
    Sym(char),
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>, DotError> {
    let mut toks = Vec::new();
    let mut chars = src.char_indices().peekable();
    while let Some(&(at, c)) = chars.peek() {
        match c {
            c if c.is_whitespace() => {
                chars.next();
            }
            '{' | '}' | '[' | ']' | '=' | ';' | ',' => {
                chars.next();
                toks.push((at, Tok::Sym(c)));
            }
            '-' => {
                chars.next();
                match chars.next() {
                    Some((_, '>')) => toks.push((at, Tok::Arrow)),
                    _ => return Err(DotError::Syntax { at, message: "expected `->`".into() }),
                }
            }
            '"' => {
                chars.next();
                let mut s = String::new();
                loop {
                    match chars.next() {
                        None => return Err(DotError::Eof),
                        Some((_, '"')) => break,
                        Some((_, '\\')) => match chars.next() {
                            Some((_, e)) => {
                                if e != '"' && e != '\\' {
                                    s.push('\\');
                                }
                                s.push(e);
                            }
                            None => return Err(DotError::Eof),
                        },
                        Some((_, ch)) => s.push(ch),
                    }
                }
                toks.push((at, Tok::Id(s)));
            }
            c if c.is_alphanumeric() || c == '_' || c == '.' => {
                let mut s = String::new();
                while let Some(&(_, ch)) = chars.peek() {
                    if ch.is_alphanumeric() || ch == '_' || ch == '.' {
                        s.push(ch);
                        chars.next();
                    } else {
                        break;
                    }
                }
                toks.push((at, Tok::Id(s)));
            }
            _ => return Err(DotError::Syntax { at, message: format!("unexpected `{c}`") }),
        }
    }
    Ok(toks)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn next(&mut self) -> Result<Tok, DotError> {
        let t = self.toks.get(self.pos).map(|(_, t)| t.clone()).ok_or(DotError::Eof)?;
        self.pos += 1;
        Ok(t)
    }

    fn fail<T>(&self, message: impl Into<String>) -> Result<T, DotError> {
        let at = self.toks.get(self.pos.saturating_sub(1)).map_or(0, |(a, _)| *a);
        Err(DotError::Syntax { at, message: message.into() })
    }

    fn id(&mut self) -> Result<String, DotError> {
        match self.next()? {
            Tok::Id(s) => Ok(s),
            t => self.fail(format!("expected identifier, found {t:?}")),
        }
    }

    fn expect(&mut self, c: char) -> Result<(), DotError> {
        match self.next()? {
            Tok::Sym(s) if s == c => Ok(()),
            t => self.fail(format!("expected `{c}`, found {t:?}")),
        }
    }

    fn attrs(&mut self) -> Result<Attrs, DotError> {
        let mut attrs = Attrs::new();
        if self.peek() != Some(&Tok::Sym('[')) {
            return Ok(attrs);
        }
        self.next()?;
        loop {
            match self.peek() {
                Some(Tok::Sym(']')) => {
                    self.next()?;
                    return Ok(attrs);
                }
                Some(Tok::Sym(',')) | Some(Tok::Sym(';')) => {
                    self.next()?;
                }
                _ => {
                    let k = self.id()?;
                    self.expect('=')?;
                    let v = self.id()?;
                    attrs.insert(k, v);
                }
            }
        }
    }
}

pub fn parse_dot(src: &str) -> Result<ParsedDot, DotError> {
    let mut p = Parser { toks: lex(src)?, pos: 0 };
    let mut out = ParsedDot::default();
    match p.id()?.as_str() {
        "digraph" => {}
        other => return p.fail(format!("expected `digraph`, found `{other}`")),
    }
    if let Some(Tok::Id(_)) = p.peek() {
        out.name = Some(p.id()?);
    }
    p.expect('{')?;
    loop {
        match p.peek() {
            None => return Err(DotError::Eof),
            Some(Tok::Sym('}')) => {
                p.next()?;
                break;
            }
            Some(Tok::Sym(';')) => {
                p.next()?;
            }
            _ => {
                let first = p.id()?;
                match p.peek() {
                    Some(Tok::Sym('=')) => {
                        p.next()?;
                        let v = p.id()?;
                        out.graph_attrs.insert(first, v);
                    }
                    Some(Tok::Arrow) => {
                        p.next()?;
                        let to = p.id()?;
                        let attrs = p.attrs()?;
                        out.nodes.entry(first.clone()).or_default();
                        out.nodes.entry(to.clone()).or_default();
                        out.edges.push((first, to, attrs));
                    }
                    _ => {
                        let attrs = p.attrs()?;
                        if matches!(first.as_str(), "node" | "edge" | "graph") {
                            continue;
                        }
                        out.nodes.entry(first).or_default().extend(attrs);
                    }
                }
            }
        }
    }
    if p.peek().is_some() {
        return p.fail("trailing input after graph");
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::properties::{BooleanPredicate, Connective, PropertyExpr, ScoreView};
    use crate::relations::{compile, emit_dot, Census, RelationPlan};
    use crate::transforms::{Monotonicity, Position, TransformSpec};
    use crate::types::ViewRequest;

    fn plans() -> Vec<RelationPlan> {
        let t = TransformSpec::ConcatSentence { text: "Thank you.".into(), position: Position::Start };
        let s = Arc::new(ScoreView::softmax_component("s_pos", 1));
        vec![
            RelationPlan::SingleInput { transform: t.clone(), property: PropertyExpr::Eq(0, 1), view: ViewRequest::Softmax },
            RelationPlan::PairwiseSystematicity {
                transform: t,
                premise: PropertyExpr::ord(&s, 0, 1),
                hypothesis: PropertyExpr::ord(&s, 0, 1),
                connective: Connective::Implies,
                view: ViewRequest::Softmax,
            },
            RelationPlan::PairwiseCompositionality {
                hidden_layer: -2,
                hidden_score: Arc::new(ScoreView::scalar("s_hyp")),
                output_score: s,
                monotonicity: Monotonicity::Down,
                connective: Connective::Iff,
                view: ViewRequest::Softmax,
            },
            RelationPlan::ThreeWayTransitivity {
                separator: " ".into(),
                predicate: Arc::new(BooleanPredicate::new("v", 1)),
                view: ViewRequest::Softmax,
            },
        ]
    }

    fn census(st: usize, dt: usize, num: usize, t: usize, f: usize, g: usize, p: usize) -> Census {
        Census { source_text: st, derived_text: dt, numeric: num, t_edges: t, f_edges: f, g_edges: g, property_links: p }
    }

    #[test]
    fn census_of_each_class() {
        let expected = [
            census(1, 1, 2, 1, 2, 0, 2),
            census(2, 2, 4, 2, 4, 0, 4),
            census(2, 0, 4, 0, 2, 2, 4),
            census(3, 3, 3, 6, 3, 0, 3),
        ];
        for (plan, want) in plans().iter().zip(expected) {
            assert_eq!(compile(plan).unwrap().census(), want, "{}", plan.class().name());
        }
    }

    #[test]
    fn transitivity_pairs_have_two_incoming_t_edges() {
        let g = compile(&plans()[3]).unwrap();
        for (i, n) in g.nodes.iter().enumerate().filter(|(_, n)| !n.source && n.key.starts_with('x')) {
            let incoming = g.edges.iter().filter(|e| e.to == i).count();
            assert_eq!(incoming, 2, "{}", n.key);
        }
    }

    #[test]
    fn dot_round_trips_structure() {
        for plan in plans() {
            let g = compile(&plan).unwrap();
            let dot = emit_dot(&g);
            let parsed = parse_dot(&dot).unwrap();
            assert_eq!(parsed.name.as_deref(), Some(g.name.as_str()));
            assert_eq!(parsed.nodes.len(), g.nodes.len() + 1);
            let grey = parsed.nodes.values().filter(|a| a.get("fillcolor").map(String::as_str) == Some("lightgray")).count();
            assert_eq!(grey, g.census().source_text);
            let dashed: Vec<_> = parsed.edges.iter().filter(|(_, _, a)| a.get("style").map(String::as_str) == Some("dashed")).collect();
            assert_eq!(dashed.len(), g.property.len());
            assert!(dashed.iter().all(|(_, to, _)| to == "P"));
            let squares = parsed.nodes.values().filter(|a| a.get("shape").map(String::as_str) == Some("square")).count();
            assert_eq!(squares, g.census().numeric);
            // Deterministic.
            assert_eq!(dot, emit_dot(&compile(&plan).unwrap()));
        }
    }

    #[test]
    fn dot_labels_for_systematicity() {
        let dot = emit_dot(&compile(&plans()[1]).unwrap());
        let parsed = parse_dot(&dot).unwrap();
        let t = parsed.edges.iter().filter(|(_, _, a)| a.get("label").map(String::as_str) == Some("T")).count();
        assert_eq!(t, 2);
        assert_eq!(dot.matches("style=dashed").count(), 4);
    }

    #[test]
    fn parser_rejects_garbage() {
        assert!(parse_dot("graph g {}").is_err());
        assert!(parse_dot("digraph g { a -> }").is_err());
        assert!(matches!(parse_dot("digraph g { a [label=\"x"), Err(DotError::Eof)));
        assert!(parse_dot("digraph g { a - b }").is_err());
    }

    #[test]
    fn parser_handles_escapes() {
        let p = parse_dot(r#"digraph { "a\"b" [label="q\\"]; }"#).unwrap();
        assert_eq!(p.nodes["a\"b"]["label"], "q\\");
    }
}
