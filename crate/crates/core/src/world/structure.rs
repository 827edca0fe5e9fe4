use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{self, niche_check, static_costs, CostTable, Niche, NicheViolation, Node, PropRef, Span};
use crate::energy::{default_property_energy, Energy, Property};
use crate::ids::{InstanceId, KindId, LoopId};

/// Built-in own properties: an instance's grid position.
pub const POSITION_PROPS: [&str; 2] = ["x", "y"];

/// An integer grid cell.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub x: i32,
    pub y: i32,
}

impl Cell {
    pub fn new(x: i32, y: i32) -> Self {
        Cell { x, y }
    }

    /// Chebyshev distance.
    pub fn distance(self, other: Cell) -> u32 {
        (self.x - other.x).unsigned_abs().max((self.y - other.y).unsigned_abs())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KindError {
    #[error(transparent)]
    Parse(#[from] dsl::ParseError),
    #[error(transparent)]
    Cost(#[from] dsl::CostError),
    #[error("program leaves its causal niche: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Niche(Vec<NicheViolation>),
    #[error("{span}: `self.{name}` is not a property of this structure")]
    UnknownOwnProperty { name: String, span: Span },
    #[error("property name `{0}` is reserved")]
    ReservedName(String),
    #[error("property `{0}` declared twice")]
    DuplicateProperty(String),
}

/// A structure kind: a compiled program plus its derived energetics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureKind {
    pub id: KindId,
    pub name: String,
    /// Canonical printed source.
    pub source: String,
    #[serde(skip, default = "placeholder_program")]
    pub program: Node,
    pub fed: Energy,
    pub fel: Energy,
    /// Equal to `fed`.
    pub assembly_cost: Energy,
    pub radius: u32,
    pub props: Vec<Property>,
    pub niche: Niche,
}

fn placeholder_program() -> Node {
    Node::new(dsl::Expr::Literal(0))
}

impl StructureKind {
    /// Parse, cost and niche-check a program for catalog slot `id`.
    pub fn compile(
        id: KindId,
        name: impl Into<String>,
        source: &str,
        props: Vec<Property>,
        radius: u32,
        table: &CostTable,
        niche: Niche,
    ) -> Result<Self, KindError> {
        let program = dsl::parse(source)?;
        Self::from_program(id, name, program, props, radius, table, niche)
    }

    pub fn from_program(
        id: KindId,
        name: impl Into<String>,
        program: Node,
        props: Vec<Property>,
        radius: u32,
        table: &CostTable,
        niche: Niche,
    ) -> Result<Self, KindError> {
        for (i, p) in props.iter().enumerate() {
            if POSITION_PROPS.contains(&p.name.as_str()) {
                return Err(KindError::ReservedName(p.name.clone()));
            }
            if props[..i].iter().any(|q| q.name == p.name) {
                return Err(KindError::DuplicateProperty(p.name.clone()));
            }
        }
        let costs = static_costs(&program, table)?;
        let violations = niche_check(&program, &niche);
        if !violations.is_empty() {
            return Err(KindError::Niche(violations));
        }
        let mut unknown = None;
        program.walk(&mut |n| {
            let r = match &n.expr {
                dsl::Expr::Sense(r) | dsl::Expr::Affect(r, _) => r,
                _ => return,
            };
            if let PropRef::Own(name) = r {
                let known = POSITION_PROPS.contains(&name.as_str()) || props.iter().any(|p| &p.name == name);
                if !known && unknown.is_none() {
                    unknown = Some((name.clone(), n.span));
                }
            }
        });
        if let Some((name, span)) = unknown {
            return Err(KindError::UnknownOwnProperty { name, span });
        }
        Ok(StructureKind {
            id,
            name: name.into(),
            source: dsl::print(&program),
            program,
            fed: costs.fed,
            fel: costs.fel,
            assembly_cost: costs.fed,
            radius,
            props,
            niche,
        })
    }

    /// Assembly cost plus the energy of raising every property to its default.
    pub fn assembly_energy(&self) -> Energy {
        self.assembly_cost + self.props.iter().map(default_property_energy).sum::<Energy>()
    }

    pub fn prop_template(&self, name: &str) -> Option<&Property> {
        self.props.iter().find(|p| p.name == name)
    }

    /// Kinds whose properties the program references.
    pub fn referenced_kinds(&self) -> Vec<KindId> {
        let mut out = Vec::new();
        self.program.walk(&mut |n| {
            if let dsl::Expr::Sense(PropRef::Kind(k, _)) | dsl::Expr::Affect(PropRef::Kind(k, _), _) = &n.expr {
                if !out.contains(k) {
                    out.push(*k);
                }
            }
        });
        out.sort();
        out
    }
}

/// A live (or dead, kept for the record) instance of a kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureInstance {
    pub id: InstanceId,
    pub kind: KindId,
    pub pos: Cell,
    pub alive: bool,
    pub props: Vec<Property>,
    pub intake: Energy,
    pub born: u64,
    /// Loops this instance belongs to; the first is the owner for refunds.
    pub loops: Vec<LoopId>,
}

impl StructureInstance {
    pub fn prop(&self, name: &str) -> Option<&Property> {
        self.props.iter().find(|p| p.name == name)
    }

    pub fn prop_mut(&mut self, name: &str) -> Option<&mut Property> {
        self.props.iter_mut().find(|p| p.name == name)
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::energy::PerturbationModel;

    fn niche(refs: &[PropRef]) -> Niche {
        let s: BTreeSet<PropRef> = refs.iter().cloned().collect();
        Niche {
            sensable: s.clone(),
            affectable: s,
        }
    }

    #[test]
    fn compile_derives_costs() {
        let k = StructureKind::compile(
            KindId(0),
            "s0",
            "affect(env.alloc_self, sense(env.alloc_self) + 1)",
            vec![],
            2,
            &CostTable::default(),
            niche(&[PropRef::env("alloc_self")]),
        )
        .unwrap();
        assert_eq!((k.fed, k.fel, k.assembly_cost), (13, 26, 13));
        assert_eq!(k.assembly_energy(), 13);
    }

    #[test]
    fn property_defaults_add_to_assembly_energy() {
        let k = StructureKind::compile(
            KindId(0),
            "cell",
            "affect(self.v, sense(self.v) + 1)",
            vec![Property::new("v", 3, PerturbationModel::quadratic(2))],
            1,
            &CostTable::default(),
            Niche::default(),
        )
        .unwrap();
        assert_eq!(k.assembly_energy(), k.fed + 18);
    }

    #[test]
    fn compile_rejects_bad_programs() {
        let t = CostTable::default();
        let err = StructureKind::compile(
            KindId(2),
            "k",
            "affect(struct[3].p, 1)",
            vec![],
            1,
            &t,
            Niche::default(),
        )
        .unwrap_err();
        assert!(matches!(err, KindError::Niche(ref v) if v.len() == 1));
        let err = StructureKind::compile(KindId(0), "k", "sense(self.q)", vec![], 1, &t, Niche::default()).unwrap_err();
        assert!(matches!(err, KindError::UnknownOwnProperty { .. }));
        let err = StructureKind::compile(
            KindId(0),
            "k",
            "1",
            vec![Property::new("x", 0, PerturbationModel::FREE)],
            1,
            &t,
            Niche::default(),
        )
        .unwrap_err();
        assert_eq!(err, KindError::ReservedName("x".into()));
        assert!(matches!(
            StructureKind::compile(KindId(0), "k", "affect(env.x, 1", vec![], 1, &t, Niche::default()),
            Err(KindError::Parse(_))
        ));
        // Position is always addressable.
        assert!(StructureKind::compile(
            KindId(0),
            "k",
            "affect(self.x, sense(self.x) + 1)",
            vec![],
            1,
            &t,
            Niche::default()
        )
        .is_ok());
    }

    #[test]
    fn chebyshev_distance() {
        assert_eq!(Cell::new(0, 0).distance(Cell::new(3, -5)), 5);
        assert_eq!(Cell::new(2, 2).distance(Cell::new(2, 2)), 0);
    }
}
