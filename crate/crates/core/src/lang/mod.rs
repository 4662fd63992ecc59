//! Constraint language: a small boolean formula DSL over concept atoms.
//!
//! ```text
//! class=stop_sign -> color=red and shape=octagon
//! ```
//!
//! Every constraint is implicitly universally quantified over a single
//! input, so its truth-grounding count is 0 or 1.

mod ast;
mod compile;
mod parser;

pub use ast::{ConstraintAst, Expr};
pub use compile::{compile, compile_all, compile_file, compile_str, CompiledConstraint, OpCounts};
pub(crate) use compile::WORD;
pub(crate) use parser::at_line;
pub use parser::{constraint_lines, parse, parse_file, SourceLine};
