//! Metered evaluation.
//!
//! Programs are billed statically: an execution always dissipates exactly the
//! program's FED, whichever branches run. Writes are returned as data and
//! applied by the engine afterwards.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ast::{ArithOp, Expr, Node, PropRef, Span};
use super::cost::{static_costs, CostError, CostTable};
use super::niche::Access;
use crate::energy::Energy;

/// Read access to the properties a program may touch.
pub trait PropertyView {
    /// Current value of `r`, or `None` if the program may not sense it.
    fn sense(&self, r: &PropRef) -> Option<i64>;
    fn may_affect(&self, r: &PropRef) -> bool;
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExecError {
    #[error("budget {budget} µE is below the program's demand of {fed} µE")]
    EnergyShortfall { budget: Energy, fed: Energy },
    #[error("{span}: {access:?} of {reference} is outside the niche")]
    RefOutsideNiche {
        reference: PropRef,
        access: Access,
        span: Span,
    },
    #[error(transparent)]
    Cost(#[from] CostError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Write {
    pub target: PropRef,
    pub value: i64,
}

/// Buffered outcome of one execution.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EffectSet {
    /// In program order. The engine applies them in this order.
    pub writes: Vec<Write>,
    pub dissipated: Energy,
    /// Number of divisions by zero, each of which yielded 0.
    pub div_by_zero: u32,
}

/// Evaluate `ast` against `view`, charging its static FED.
pub fn execute(ast: &Node, view: &dyn PropertyView, budget: Energy, table: &CostTable) -> Result<EffectSet, ExecError> {
    let fed = static_costs(ast, table)?.fed;
    execute_with_demand(ast, view, budget, fed)
}

/// As [`execute`], with the FED already derived (the engine caches it per kind).
pub fn execute_with_demand(
    ast: &Node,
    view: &dyn PropertyView,
    budget: Energy,
    fed: Energy,
) -> Result<EffectSet, ExecError> {
    if budget < fed {
        return Err(ExecError::EnergyShortfall { budget, fed });
    }
    let mut ev = Evaluator {
        view,
        locals: Vec::new(),
        effects: EffectSet {
            dissipated: fed,
            ..EffectSet::default()
        },
    };
    ev.eval(ast)?;
    Ok(ev.effects)
}

struct Evaluator<'v> {
    view: &'v dyn PropertyView,
    locals: Vec<(String, i64)>,
    effects: EffectSet,
}

impl Evaluator<'_> {
    fn eval(&mut self, node: &Node) -> Result<i64, ExecError> {
        Ok(match &node.expr {
            Expr::Literal(v) => *v,
            Expr::ReadLocal(name) => self.locals.iter().rev().find(|(n, _)| n == name).map_or(0, |(_, v)| *v),
            Expr::WriteLocal(name, value) => {
                let v = self.eval(value)?;
                match self.locals.iter_mut().find(|(n, _)| n == name) {
                    Some(slot) => slot.1 = v,
                    None => self.locals.push((name.clone(), v)),
                }
                v
            }
            Expr::Sense(r) => self.view.sense(r).ok_or_else(|| ExecError::RefOutsideNiche {
                reference: r.clone(),
                access: Access::Sense,
                span: node.span,
            })?,
            Expr::Affect(r, value) => {
                if !self.view.may_affect(r) {
                    return Err(ExecError::RefOutsideNiche {
                        reference: r.clone(),
                        access: Access::Affect,
                        span: node.span,
                    });
                }
                let v = self.eval(value)?;
                self.effects.writes.push(Write {
                    target: r.clone(),
                    value: v,
                });
                v
            }
            Expr::Arith(op, a, b) => {
                let (a, b) = (self.eval(a)?, self.eval(b)?);
                match op {
                    ArithOp::Add => a.saturating_add(b),
                    ArithOp::Sub => a.saturating_sub(b),
                    ArithOp::Mul => a.saturating_mul(b),
                    ArithOp::Div => {
                        if b == 0 {
                            self.effects.div_by_zero += 1;
                            0
                        } else {
                            a.checked_div(b).unwrap_or(i64::MAX)
                        }
                    }
                }
            }
            Expr::Compare(op, a, b) => {
                let (a, b) = (self.eval(a)?, self.eval(b)?);
                i64::from(op.apply(a, b))
            }
            Expr::If(c, t, e) => {
                if self.eval(c)? != 0 {
                    self.eval(t)?
                } else {
                    self.eval(e)?
                }
            }
            Expr::Clamp(v, lo, hi) => {
                let (v, lo, hi) = (self.eval(v)?, self.eval(lo)?, self.eval(hi)?);
                // An inverted range collapses to `lo`.
                v.min(hi).max(lo)
            }
            Expr::Seq(items) => {
                let mut last = 0;
                for item in items {
                    last = self.eval(item)?;
                }
                last
            }
        })
    }
}
