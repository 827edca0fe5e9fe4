//! The causal-power language: every structure's behaviour is a small program
//! that senses and affects properties.
//!
//! The language is straight-line code with branches (no loops, no calls), so
//! a program's per-step energy demand is a static property of its syntax tree.

mod ast;
mod cost;
mod eval;
mod niche;
mod parser;
mod printer;

pub use ast::{ArithOp, CmpOp, Expr, Node, OpKind, PropRef, Span};
pub use cost::{static_costs, CostError, CostOverrides, CostTable, StaticCosts};
pub use eval::{execute, execute_with_demand, EffectSet, ExecError, PropertyView, Write};
pub use niche::{niche_check, Access, Niche, NicheViolation};
pub use parser::{parse, ParseError, MAX_NESTING};
pub use printer::print;
