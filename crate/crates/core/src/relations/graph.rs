//! Evaluation graphs in circle/square notation and their DOT rendering.
//!
//! Textual variables are circles, numeric variables (model outputs, hidden
//! representations) are squares, source inputs are shaded. Edges carry the
//! model `f`, the output head `g` or a transformation `T`; the output property
//! `P` links to the numeric nodes it constrains.

use std::fmt::Write as _;

use super::{PlanClass, PlanError, RelationPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeShape {
    Textual,
    Numeric,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    /// Stable ASCII identifier, also the DOT node id.
    pub key: String,
    pub label: String,
    pub shape: NodeShape,
    pub source: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeLabel {
    F,
    G,
    T,
}

impl EdgeLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeLabel::F => "f",
            EdgeLabel::G => "g",
            EdgeLabel::T => "T",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub label: EdgeLabel,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvaluationGraph {
    pub name: String,
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    /// Numeric nodes linked to the output property.
    pub property: Vec<usize>,
}

/// Node and edge counts of a graph.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Census {
    pub source_text: usize,
    pub derived_text: usize,
    pub numeric: usize,
    pub t_edges: usize,
    pub f_edges: usize,
    pub g_edges: usize,
    pub property_links: usize,
}

impl EvaluationGraph {
    pub fn census(&self) -> Census {
        let mut c = Census { property_links: self.property.len(), ..Census::default() };
        for n in &self.nodes {
            match (n.shape, n.source) {
                (NodeShape::Textual, true) => c.source_text += 1,
                (NodeShape::Textual, false) => c.derived_text += 1,
                (NodeShape::Numeric, _) => c.numeric += 1,
            }
        }
        for e in &self.edges {
            match e.label {
                EdgeLabel::T => c.t_edges += 1,
                EdgeLabel::F => c.f_edges += 1,
                EdgeLabel::G => c.g_edges += 1,
            }
        }
        c
    }

    pub fn textual_nodes(&self) -> usize {
        self.nodes.iter().filter(|n| n.shape == NodeShape::Textual).count()
    }

    /// Checks the notation's typing rules.
    pub fn validate(&self) -> Result<(), PlanError> {
        let err = |m: String| Err(PlanError::Structure(m));
        if self.nodes.is_empty() {
            return err("graph has no nodes".into());
        }
        for n in &self.nodes {
            if n.source && n.shape != NodeShape::Textual {
                return err(format!("source node {} must be textual", n.key));
            }
        }
        for e in &self.edges {
            let (Some(from), Some(to)) = (self.nodes.get(e.from), self.nodes.get(e.to)) else {
                return err("edge refers to a missing node".into());
            };
            let ok = match e.label {
                EdgeLabel::T => from.shape == NodeShape::Textual && to.shape == NodeShape::Textual,
                EdgeLabel::F | EdgeLabel::G => to.shape == NodeShape::Numeric,
            };
            if !ok {
                return err(format!("{} edge {} -> {} violates node typing", e.label.as_str(), from.key, to.key));
            }
        }
        if let Some(&p) = self.property.iter().find(|&&p| self.nodes.get(p).is_none_or(|n| n.shape != NodeShape::Numeric)) {
            return err(format!("property attached to non-numeric node #{p}"));
        }
        Ok(())
    }
}

struct Builder {
    g: EvaluationGraph,
}

impl Builder {
    fn new(name: &str) -> Self {
        Self { g: EvaluationGraph { name: name.into(), nodes: Vec::new(), edges: Vec::new(), property: Vec::new() } }
    }

    fn node(&mut self, key: &str, label: &str, shape: NodeShape, source: bool) -> usize {
        self.g.nodes.push(Node { key: key.into(), label: label.into(), shape, source });
        self.g.nodes.len() - 1
    }

    fn text(&mut self, key: &str, label: &str, source: bool) -> usize {
        self.node(key, label, NodeShape::Textual, source)
    }

    fn num(&mut self, key: &str, label: &str) -> usize {
        self.node(key, label, NodeShape::Numeric, false)
    }

    fn edge(&mut self, from: usize, to: usize, label: EdgeLabel) {
        self.g.edges.push(Edge { from, to, label });
    }
}

/// Builds the graph structure of a plan's relation class.
pub fn compile(plan: &RelationPlan) -> Result<EvaluationGraph, PlanError> {
    plan.validate()?;
    let class = plan.class();
    let mut b = Builder::new(class.name());
    match class {
        PlanClass::SingleInput => {
            let x = b.text("x", "x", true);
            let xp = b.text("xp", "x′", false);
            let y = b.num("y", "y");
            let yp = b.num("yp", "y′");
            b.edge(x, xp, EdgeLabel::T);
            b.edge(x, y, EdgeLabel::F);
            b.edge(xp, yp, EdgeLabel::F);
            b.g.property = vec![y, yp];
        }
        PlanClass::PairwiseSystematicity => {
            for (i, sub) in [(1, "₁"), (2, "₂")] {
                let x = b.text(&format!("x{i}"), &format!("x{sub}"), true);
                let xp = b.text(&format!("x{i}p"), &format!("x{sub}′"), false);
                let y = b.num(&format!("y{i}"), &format!("y{sub}"));
                let yp = b.num(&format!("y{i}p"), &format!("y{sub}′"));
                b.edge(x, xp, EdgeLabel::T);
                b.edge(x, y, EdgeLabel::F);
                b.edge(xp, yp, EdgeLabel::F);
                b.g.property.extend([y, yp]);
            }
        }
        PlanClass::PairwiseCompositionality => {
            for (i, sub) in [(1, "₁"), (2, "₂")] {
                let x = b.text(&format!("x{i}"), &format!("x{sub}"), true);
                let z = b.num(&format!("z{i}"), &format!("z{sub}"));
                let y = b.num(&format!("y{i}"), &format!("y{sub}"));
                b.edge(x, z, EdgeLabel::F);
                b.edge(z, y, EdgeLabel::G);
                b.g.property.extend([z, y]);
            }
        }
        PlanClass::ThreeWayTransitivity => {
            let xs: Vec<usize> =
                [(1, "₁"), (2, "₂"), (3, "₃")].iter().map(|(i, s)| b.text(&format!("x{i}"), &format!("x{s}"), true)).collect();
            for (i, j) in [(0, 1), (0, 2), (1, 2)] {
                let key = format!("{}{}", i + 1, j + 1);
                let sub: String = key.chars().map(|c| char::from_u32(0x2080 + c.to_digit(10).unwrap()).unwrap()).collect();
                let pair = b.text(&format!("x{key}"), &format!("x{sub}"), false);
                let y = b.num(&format!("y{key}"), &format!("y{sub}"));
                b.edge(xs[i], pair, EdgeLabel::T);
                b.edge(xs[j], pair, EdgeLabel::T);
                b.edge(pair, y, EdgeLabel::F);
                b.g.property.push(y);
            }
        }
    }
    b.g.validate()?;
    Ok(b.g)
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        if c == '"' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('"');
    out
}

/// Renders the graph as a DOT digraph. Nodes and edges are emitted in key
/// order so output is byte-stable.
pub fn emit_dot(g: &EvaluationGraph) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "digraph {} {{", quote(&g.name));
    out.push_str("  rankdir=LR;\n");
    let mut nodes: Vec<&Node> = g.nodes.iter().collect();
    nodes.sort_by(|a, b| a.key.cmp(&b.key));
    for n in nodes {
        let shape = match n.shape {
            NodeShape::Textual => "circle",
            NodeShape::Numeric => "square",
        };
        let fill = if n.source { ", style=filled, fillcolor=lightgray" } else { "" };
        let _ = writeln!(out, "  {} [label={}, shape={shape}{fill}];", quote(&n.key), quote(&n.label));
    }
    out.push_str("  \"P\" [label=\"P\", shape=plaintext];\n");
    let mut edges: Vec<(&str, &str, EdgeLabel)> =
        g.edges.iter().map(|e| (g.nodes[e.from].key.as_str(), g.nodes[e.to].key.as_str(), e.label)).collect();
    edges.sort();
    for (from, to, label) in edges {
        let _ = writeln!(out, "  {} -> {} [label={}];", quote(from), quote(to), quote(label.as_str()));
    }
    let mut links: Vec<&str> = g.property.iter().map(|&p| g.nodes[p].key.as_str()).collect();
    links.sort_unstable();
    for key in links {
        let _ = writeln!(out, "  {} -> \"P\" [style=dashed, dir=none];", quote(key));
    }
    out.push_str("}\n");
    out
}
