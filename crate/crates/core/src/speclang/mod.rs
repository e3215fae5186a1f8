//! The stream specification language: AST, parser and canonical printer.

pub mod ast;
pub mod lexer;
pub mod parser;
pub mod render;

use thiserror::Error;

pub use ast::*;
pub use lexer::Pos;
pub use parser::{parse_compiled, parse_specification, parse_with, ParseOptions};
pub use render::{format_duration, render_expr, render_specification};

#[derive(Clone, Debug, PartialEq, Error)]
pub enum SpecError {
    #[error("{pos}: {message}")]
    Lex { pos: Pos, message: String },
    #[error("{pos}: syntax error: expected {}, found {found}", expected.join(" or "))]
    Syntax { pos: Pos, expected: Vec<String>, found: String },
    #[error("{pos}: duplicate stream `{name}`")]
    DuplicateStream { name: String, pos: Pos },
    #[error("{pos}: unknown stream `{name}`")]
    UnknownReference { name: String, pos: Pos },
    #[error("{pos}: offsets must be negative integers (`by: 0` is a plain access)")]
    InvalidOffset { pos: Pos },
    #[error("{pos}: lower bound exceeds upper bound")]
    InvalidRange { pos: Pos },
    #[error("{pos}: {message}")]
    InvalidPacing { pos: Pos, message: String },
    #[error("{pos}: input `{name}` needs a `range [lo, hi]` because it reaches a public output")]
    MissingRange { name: String, pos: Pos },
    #[error("{pos}: `{form}` is reserved for compiler output")]
    ReservedForm { form: String, pos: Pos },
}

impl SpecError {
    pub fn pos(&self) -> Pos {
        match self {
            SpecError::Lex { pos, .. }
            | SpecError::Syntax { pos, .. }
            | SpecError::DuplicateStream { pos, .. }
            | SpecError::UnknownReference { pos, .. }
            | SpecError::InvalidOffset { pos }
            | SpecError::InvalidRange { pos }
            | SpecError::InvalidPacing { pos, .. }
            | SpecError::MissingRange { pos, .. }
            | SpecError::ReservedForm { pos, .. } => *pos,
        }
    }
}

/// The motivating rating specification used throughout the docs and tests.
pub const RATINGS_SPEC: &str = "\
input score : Int64 range [1, 6]
input conf : Int64 range [-1, 1]
output adj := (6 - score) * 3 + conf + 1
output davg @1d@ := adj.aggregate(over: 3d, using: avg).defaults(to: 0.0)
output low @1d@ := min(low.offset(by: -1).defaults(to: 15.0), davg)
output high @1d@ := max(high.offset(by: -1).defaults(to: 0.0), davg)
#[public] output range @1d@ := (low, high)
";
