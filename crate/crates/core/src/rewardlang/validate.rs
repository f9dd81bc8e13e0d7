use thiserror::Error;

use super::ast::{BinaryOp, Expr, RewardProgram, UnaryOp};
use crate::envkit::EnvSpec;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("component `{component}`: unknown feature `{feature}`")]
    UnknownFeature { component: String, feature: String },
    #[error("component `{component}`: clamp bounds {lo} > {hi}")]
    BadClampBounds { component: String, lo: f64, hi: f64 },
    #[error("component `{component}`: division by constant zero")]
    ConstantDivisionByZero { component: String },
    #[error("component `{component}`: non-finite weight")]
    NonFiniteWeight { component: String },
}

/// Value of a feature-free subtree.
fn const_value(e: &Expr) -> Option<f64> {
    match e {
        Expr::Const(c) => Some(*c),
        Expr::Feature(_) => None,
        Expr::Unary(op, inner) => {
            let v = const_value(inner)?;
            Some(match op {
                UnaryOp::Neg => -v,
                UnaryOp::Abs => v.abs(),
                UnaryOp::Exp => v.exp(),
                UnaryOp::Tanh => v.tanh(),
            })
        }
        Expr::Binary(op, l, r) => {
            let (a, b) = (const_value(l)?, const_value(r)?);
            Some(match op {
                BinaryOp::Add => a + b,
                BinaryOp::Sub => a - b,
                BinaryOp::Mul => a * b,
                BinaryOp::Div => a / b,
                BinaryOp::Min => a.min(b),
                BinaryOp::Max => a.max(b),
            })
        }
        Expr::Clamp(inner, lo, hi) => Some(const_value(inner)?.max(*lo).min(*hi)),
    }
}

/// Static checks against an environment. Returns every problem found.
pub fn validate(program: &RewardProgram, spec: &EnvSpec) -> Result<(), Vec<ValidationError>> {
    let mut errors = Vec::new();
    for c in &program.components {
        let component = || c.name.clone();
        if !c.weight.is_finite() {
            errors.push(ValidationError::NonFiniteWeight {
                component: component(),
            });
        }
        c.expr.visit(&mut |e| match e {
            Expr::Feature(f) if spec.feature_index(f).is_none() => {
                let err = ValidationError::UnknownFeature {
                    component: component(),
                    feature: f.clone(),
                };
                if !errors.contains(&err) {
                    errors.push(err);
                }
            }
            Expr::Clamp(_, lo, hi) if !(lo <= hi) => errors.push(ValidationError::BadClampBounds {
                component: component(),
                lo: *lo,
                hi: *hi,
            }),
            Expr::Binary(BinaryOp::Div, _, r) if const_value(r) == Some(0.0) => {
                errors.push(ValidationError::ConstantDivisionByZero {
                    component: component(),
                })
            }
            _ => {}
        });
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors)
    }
}
