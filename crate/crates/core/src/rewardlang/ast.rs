use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Abs,
    Exp,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Min,
    Max,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Feature(String),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    Clamp(Box<Expr>, f64, f64),
}

impl Expr {
    pub fn unary(op: UnaryOp, e: Expr) -> Expr {
        Expr::Unary(op, Box::new(e))
    }

    pub fn binary(op: BinaryOp, l: Expr, r: Expr) -> Expr {
        Expr::Binary(op, Box::new(l), Box::new(r))
    }

    pub fn feature(name: &str) -> Expr {
        Expr::Feature(name.to_string())
    }

    pub fn depth(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Feature(_) => 1,
            Expr::Unary(_, e) | Expr::Clamp(e, _, _) => 1 + e.depth(),
            Expr::Binary(_, l, r) => 1 + l.depth().max(r.depth()),
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Feature(_) => 1,
            Expr::Unary(_, e) | Expr::Clamp(e, _, _) => 1 + e.node_count(),
            Expr::Binary(_, l, r) => 1 + l.node_count() + r.node_count(),
        }
    }

    /// Calls `f` on every node, parents before children.
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        f(self);
        match self {
            Expr::Const(_) | Expr::Feature(_) => {}
            Expr::Unary(_, e) | Expr::Clamp(e, _, _) => e.visit(f),
            Expr::Binary(_, l, r) => {
                l.visit(f);
                r.visit(f);
            }
        }
    }

    pub fn features(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.visit(&mut |e| {
            if let Expr::Feature(n) = e {
                if !out.contains(&n.as_str()) {
                    out.push(n.as_str());
                }
            }
        });
        out
    }

    /// Applies `f` to every constant in place (clamp bounds excluded).
    pub fn map_consts(&mut self, f: &mut impl FnMut(f64) -> f64) {
        match self {
            Expr::Const(c) => *c = f(*c),
            Expr::Feature(_) => {}
            Expr::Unary(_, e) | Expr::Clamp(e, _, _) => e.map_consts(f),
            Expr::Binary(_, l, r) => {
                l.map_consts(f);
                r.map_consts(f);
            }
        }
    }
}

/// One named reward term and its weight in the total.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub name: String,
    pub expr: Expr,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramMeta {
    pub iteration: usize,
    pub sample_index: usize,
}

/// A parsed reward program: named components combined by a weighted sum.
///
/// Components declared but absent from the `total` line carry weight 0.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardProgram {
    pub source: String,
    pub components: Vec<Component>,
    pub meta: ProgramMeta,
}

impl RewardProgram {
    pub fn component(&self, name: &str) -> Option<&Component> {
        self.components.iter().find(|c| c.name == name)
    }

    pub fn component_names(&self) -> impl Iterator<Item = &str> {
        self.components.iter().map(|c| c.name.as_str())
    }

    pub fn node_count(&self) -> usize {
        self.components.iter().map(|c| c.expr.node_count() + 1).sum()
    }

    pub fn depth(&self) -> usize {
        self.components.iter().map(|c| c.expr.depth()).max().unwrap_or(0)
    }

    /// Structural equality: same components with equal expressions and
    /// weights, independent of declaration order and source text.
    pub fn structurally_eq(&self, other: &RewardProgram) -> bool {
        self.components.len() == other.components.len()
            && self.components.iter().all(|c| {
                other
                    .component(&c.name)
                    .is_some_and(|o| o.expr == c.expr && o.weight == c.weight)
            })
    }

    /// Canonical source text; parsing it yields a structurally equal program.
    pub fn unparse(&self) -> String {
        super::printer::print_program(self)
    }

    pub fn with_meta(mut self, iteration: usize, sample_index: usize) -> Self {
        self.meta = ProgramMeta {
            iteration,
            sample_index,
        };
        self
    }

    /// Stable identifier used in file names and traces.
    pub fn id(&self) -> String {
        format!("{}_{}", self.meta.iteration, self.meta.sample_index)
    }
}
