//! Structural diff between reward programs, keyed on component names.

use std::fmt::Write;

use super::ast::{Component, Expr, RewardProgram};
use super::printer::{expr_to_string, fmt_num};

#[derive(Debug, Clone, PartialEq)]
pub enum Edit {
    ComponentRemoved { name: String },
    ComponentAdded { name: String, expr: Expr, weight: f64 },
    ExprChanged { name: String, before: Expr, after: Expr },
    WeightChanged { name: String, before: f64, after: f64 },
}

impl Edit {
    pub fn name(&self) -> &str {
        match self {
            Edit::ComponentRemoved { name }
            | Edit::ComponentAdded { name, .. }
            | Edit::ExprChanged { name, .. }
            | Edit::WeightChanged { name, .. } => name,
        }
    }

    pub fn render(&self) -> String {
        match self {
            Edit::ComponentRemoved { name } => format!("removed component `{name}`"),
            Edit::ComponentAdded { name, expr, weight } => format!(
                "added component `{name}` = {} with weight {}",
                expr_to_string(expr),
                fmt_num(*weight)
            ),
            Edit::ExprChanged { name, before, after } => format!(
                "changed component `{name}` from {} to {}",
                expr_to_string(before),
                expr_to_string(after)
            ),
            Edit::WeightChanged { name, before, after } => format!(
                "changed weight of `{name}` from {} to {}",
                fmt_num(*before),
                fmt_num(*after)
            ),
        }
    }
}

/// Edits turning one program into another. Removals come first, then changes
/// in the target's order, then additions in the target's order.
#[derive(Debug, Clone, PartialEq)]
pub struct ProgramDiff {
    pub edits: Vec<Edit>,
}

impl ProgramDiff {
    pub fn is_empty(&self) -> bool {
        self.edits.is_empty()
    }

    /// One edit per line; empty text for identical programs.
    pub fn rendered(&self) -> String {
        let mut out = String::new();
        for e in &self.edits {
            let _ = writeln!(out, "{}", e.render());
        }
        out
    }

    /// Names of components touched by any edit.
    pub fn touched(&self) -> Vec<&str> {
        let mut names: Vec<&str> = self.edits.iter().map(Edit::name).collect();
        names.dedup();
        names
    }

    /// Applies the edits to `a`. For `d = diff(a, b)`, `d.apply(a)` is
    /// structurally equal to `b`.
    pub fn apply(&self, a: &RewardProgram) -> RewardProgram {
        let mut out = a.clone();
        for e in &self.edits {
            match e {
                Edit::ComponentRemoved { name } => out.components.retain(|c| &c.name != name),
                Edit::ComponentAdded { name, expr, weight } => out.components.push(Component {
                    name: name.clone(),
                    expr: expr.clone(),
                    weight: *weight,
                }),
                Edit::ExprChanged { name, after, .. } => {
                    if let Some(c) = out.components.iter_mut().find(|c| &c.name == name) {
                        c.expr = after.clone();
                    }
                }
                Edit::WeightChanged { name, after, .. } => {
                    if let Some(c) = out.components.iter_mut().find(|c| &c.name == name) {
                        c.weight = *after;
                    }
                }
            }
        }
        out.source = out.unparse();
        out
    }
}

pub fn diff(a: &RewardProgram, b: &RewardProgram) -> ProgramDiff {
    let mut edits = Vec::new();
    for c in &a.components {
        if b.component(&c.name).is_none() {
            edits.push(Edit::ComponentRemoved { name: c.name.clone() });
        }
    }
    for c in &b.components {
        if let Some(old) = a.component(&c.name) {
            if old.expr != c.expr {
                edits.push(Edit::ExprChanged {
                    name: c.name.clone(),
                    before: old.expr.clone(),
                    after: c.expr.clone(),
                });
            }
            if old.weight != c.weight {
                edits.push(Edit::WeightChanged {
                    name: c.name.clone(),
                    before: old.weight,
                    after: c.weight,
                });
            }
        }
    }
    for c in &b.components {
        if a.component(&c.name).is_none() {
            edits.push(Edit::ComponentAdded {
                name: c.name.clone(),
                expr: c.expr.clone(),
                weight: c.weight,
            });
        }
    }
    ProgramDiff { edits }
}
