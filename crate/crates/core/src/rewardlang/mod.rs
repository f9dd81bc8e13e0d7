//! Sandboxed reward-expression language.
//!
//! A program is a list of named components, each an arithmetic expression
//! over environment features, combined by a weighted sum:
//!
//! ```text
//! component speed = exp((feature(vx) - 4.0) / 2.0) - 1.0;
//! component effort = feature(action_sq);
//! total = 0.9*speed - 0.1*effort;
//! ```

mod ast;
mod diff;
mod eval;
mod parser;
mod printer;
mod probe;
mod trace;
mod validate;

pub use ast::{BinaryOp, Component, Expr, ProgramMeta, RewardProgram, UnaryOp};
pub use diff::{diff, Edit, ProgramDiff};
pub use eval::{CompiledProgram, Evaluation, FeatureSource};
pub use parser::{parse, parse_expr};
pub use printer::expr_to_string;
pub use probe::{probe_executability, probe_observations, FailureKind, NonExecutable, DEFAULT_PROBES};
pub use trace::{RewardTrace, TraceCheckpoint, TraceRecorder, DEFAULT_TRACE_INTERVAL};
pub use validate::{validate, ValidationError};

use thiserror::Error;

pub const MAX_DEPTH: usize = 32;
pub const MAX_NODES: usize = 512;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("{line}:{col}: {message}")]
    Syntax {
        line: usize,
        col: usize,
        message: String,
    },
    #[error("limit exceeded: {0}")]
    LimitExceeded(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("missing feature `{0}`")]
    MissingFeature(String),
}
