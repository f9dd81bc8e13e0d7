//! Reward evaluation: a name-keyed interpreter and an index-compiled form
//! used inside training loops.

use std::collections::{BTreeMap, HashMap};

use super::ast::{BinaryOp, Expr, RewardProgram, UnaryOp};
use super::EvalError;
use crate::envkit::EnvSpec;

/// Source of named feature values.
pub trait FeatureSource {
    fn feature(&self, name: &str) -> Option<f64>;
}

impl FeatureSource for HashMap<String, f64> {
    fn feature(&self, name: &str) -> Option<f64> {
        self.get(name).copied()
    }
}

impl FeatureSource for BTreeMap<String, f64> {
    fn feature(&self, name: &str) -> Option<f64> {
        self.get(name).copied()
    }
}

/// Observation features first, then action features.
impl<A: FeatureSource, B: FeatureSource> FeatureSource for (&A, &B) {
    fn feature(&self, name: &str) -> Option<f64> {
        self.0.feature(name).or_else(|| self.1.feature(name))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub total: f64,
    pub components: BTreeMap<String, f64>,
}

#[inline]
fn apply_unary(op: UnaryOp, v: f64) -> f64 {
    match op {
        UnaryOp::Neg => -v,
        UnaryOp::Abs => v.abs(),
        UnaryOp::Exp => v.exp(),
        UnaryOp::Tanh => v.tanh(),
    }
}

/// IEEE semantics; `min`/`max` propagate NaN rather than ignoring it.
#[inline]
fn apply_binary(op: BinaryOp, a: f64, b: f64) -> f64 {
    match op {
        BinaryOp::Add => a + b,
        BinaryOp::Sub => a - b,
        BinaryOp::Mul => a * b,
        BinaryOp::Div => a / b,
        BinaryOp::Min | BinaryOp::Max if a.is_nan() || b.is_nan() => f64::NAN,
        BinaryOp::Min => a.min(b),
        BinaryOp::Max => a.max(b),
    }
}

#[inline]
fn apply_clamp(v: f64, lo: f64, hi: f64) -> f64 {
    if v.is_nan() {
        v
    } else {
        v.max(lo).min(hi)
    }
}

fn eval_expr<S: FeatureSource + ?Sized>(e: &Expr, src: &S) -> Result<f64, EvalError> {
    Ok(match e {
        Expr::Const(c) => *c,
        Expr::Feature(n) => src
            .feature(n)
            .ok_or_else(|| EvalError::MissingFeature(n.clone()))?,
        Expr::Unary(op, inner) => apply_unary(*op, eval_expr(inner, src)?),
        Expr::Binary(op, l, r) => apply_binary(*op, eval_expr(l, src)?, eval_expr(r, src)?),
        Expr::Clamp(inner, lo, hi) => apply_clamp(eval_expr(inner, src)?, *lo, *hi),
    })
}

impl RewardProgram {
    /// Evaluates every component and the weighted total.
    pub fn evaluate<S: FeatureSource + ?Sized>(&self, features: &S) -> Result<Evaluation, EvalError> {
        let mut components = BTreeMap::new();
        let mut total = 0.0;
        for c in &self.components {
            let v = eval_expr(&c.expr, features)?;
            total += c.weight * v;
            components.insert(c.name.clone(), v);
        }
        Ok(Evaluation { total, components })
    }
}

/// Expression with feature names resolved to catalog indices.
#[derive(Debug, Clone)]
enum Node {
    Const(f64),
    Feature(usize),
    Unary(UnaryOp, Box<Node>),
    Binary(BinaryOp, Box<Node>, Box<Node>),
    Clamp(Box<Node>, f64, f64),
}

impl Node {
    fn compile(e: &Expr, spec: &EnvSpec) -> Result<Node, EvalError> {
        Ok(match e {
            Expr::Const(c) => Node::Const(*c),
            Expr::Feature(n) => Node::Feature(
                spec.feature_index(n)
                    .ok_or_else(|| EvalError::MissingFeature(n.clone()))?,
            ),
            Expr::Unary(op, inner) => Node::Unary(*op, Box::new(Node::compile(inner, spec)?)),
            Expr::Binary(op, l, r) => Node::Binary(
                *op,
                Box::new(Node::compile(l, spec)?),
                Box::new(Node::compile(r, spec)?),
            ),
            Expr::Clamp(inner, lo, hi) => Node::Clamp(Box::new(Node::compile(inner, spec)?), *lo, *hi),
        })
    }

    #[inline]
    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Node::Const(c) => *c,
            Node::Feature(i) => x[*i],
            Node::Unary(op, inner) => apply_unary(*op, inner.eval(x)),
            Node::Binary(op, l, r) => apply_binary(*op, l.eval(x), r.eval(x)),
            Node::Clamp(inner, lo, hi) => apply_clamp(inner.eval(x), *lo, *hi),
        }
    }
}

/// A program bound to an environment's feature catalog.
#[derive(Debug, Clone)]
pub struct CompiledProgram {
    names: Vec<String>,
    nodes: Vec<Node>,
    weights: Vec<f64>,
}

impl CompiledProgram {
    pub fn new(program: &RewardProgram, spec: &EnvSpec) -> Result<Self, EvalError> {
        Ok(CompiledProgram {
            names: program.components.iter().map(|c| c.name.clone()).collect(),
            nodes: program
                .components
                .iter()
                .map(|c| Node::compile(&c.expr, spec))
                .collect::<Result<_, _>>()?,
            weights: program.components.iter().map(|c| c.weight).collect(),
        })
    }

    pub fn component_names(&self) -> &[String] {
        &self.names
    }

    pub fn n_components(&self) -> usize {
        self.nodes.len()
    }

    /// Writes component values into `out` and returns the total.
    #[inline]
    pub fn eval_into(&self, features: &[f64], out: &mut [f64]) -> f64 {
        let mut total = 0.0;
        for ((node, w), slot) in self.nodes.iter().zip(&self.weights).zip(out.iter_mut()) {
            let v = node.eval(features);
            *slot = v;
            total += w * v;
        }
        total
    }

    pub fn total(&self, features: &[f64]) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(n, w)| w * n.eval(features))
            .sum()
    }

    pub fn evaluate(&self, features: &[f64]) -> Evaluation {
        let mut vals = vec![0.0; self.nodes.len()];
        let total = self.eval_into(features, &mut vals);
        Evaluation {
            total,
            components: self.names.iter().cloned().zip(vals).collect(),
        }
    }
}
