//! Per-operation energy costs and static demand/limit derivation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ast::{Node, OpKind};
use crate::energy::Energy;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CostError {
    #[error("cost table has no entry for {0:?}")]
    UnknownNodeKind(OpKind),
    #[error("cost of {kind:?} must be at least 1 (got {cost})")]
    CostTooSmall { kind: OpKind, cost: Energy },
    #[error("dissipation of {kind:?} ({dissipation}) is below its cost ({cost})")]
    DissipationBelowCost {
        kind: OpKind,
        cost: Energy,
        dissipation: Energy,
    },
}

/// Energy charged per executed node (`cost`) and the most each node can dissipate (`dissipation`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostTable {
    pub cost: BTreeMap<OpKind, Energy>,
    pub dissipation: BTreeMap<OpKind, Energy>,
}

/// Partial override of the default table. A kind whose cost is overridden
/// without an explicit dissipation gets twice the new cost.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostOverrides {
    #[serde(default)]
    pub cost: BTreeMap<OpKind, Energy>,
    #[serde(default)]
    pub dissipation: BTreeMap<OpKind, Energy>,
}

impl Default for CostTable {
    fn default() -> Self {
        use OpKind::*;
        let cost: BTreeMap<OpKind, Energy> = [
            (Literal, 1),
            (ReadLocal, 1),
            (WriteLocal, 1),
            (Add, 2),
            (Sub, 2),
            (Compare, 2),
            (Clamp, 3),
            (If, 3),
            (Mul, 4),
            (Div, 8),
            (Sense, 5),
            (Affect, 5),
            (Seq, 1),
        ]
        .into_iter()
        .collect();
        let dissipation = cost.iter().map(|(k, c)| (*k, 2 * c)).collect();
        CostTable { cost, dissipation }
    }
}

impl CostTable {
    /// The default table with `overrides` applied, validated.
    pub fn with_overrides(overrides: &CostOverrides) -> Result<Self, CostError> {
        let mut table = CostTable::default();
        for (kind, cost) in &overrides.cost {
            table.cost.insert(*kind, *cost);
            table.dissipation.insert(*kind, cost.saturating_mul(2));
        }
        for (kind, d) in &overrides.dissipation {
            table.dissipation.insert(*kind, *d);
        }
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<(), CostError> {
        for kind in OpKind::ALL {
            let cost = *self.cost.get(&kind).ok_or(CostError::UnknownNodeKind(kind))?;
            let dissipation = *self.dissipation.get(&kind).ok_or(CostError::UnknownNodeKind(kind))?;
            if cost < 1 {
                return Err(CostError::CostTooSmall { kind, cost });
            }
            if dissipation < cost {
                return Err(CostError::DissipationBelowCost {
                    kind,
                    cost,
                    dissipation,
                });
            }
        }
        Ok(())
    }
}

/// Free energy demand and free energy limit of a program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaticCosts {
    pub fed: Energy,
    pub fel: Energy,
}

/// Sum every node's cost (FED) and dissipation (FEL), branches included.
pub fn static_costs(ast: &Node, table: &CostTable) -> Result<StaticCosts, CostError> {
    let mut fed: Energy = 0;
    let mut fel: Energy = 0;
    let mut missing = None;
    ast.walk(&mut |node| {
        let kind = node.op_kind();
        match (table.cost.get(&kind), table.dissipation.get(&kind)) {
            (Some(c), Some(d)) => {
                fed = fed.saturating_add(*c);
                fel = fel.saturating_add(*d);
            }
            _ => {
                missing.get_or_insert(kind);
            }
        }
    });
    match missing {
        Some(kind) => Err(CostError::UnknownNodeKind(kind)),
        None => Ok(StaticCosts { fed, fel }),
    }
}
