use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::ast::{Node, PropRef, Span};

/// The properties a structure may sense and affect.
///
/// `self.*` references are a structure's own causal properties and are not
/// part of any niche; [`niche_check`] always accepts them.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Niche {
    pub sensable: BTreeSet<PropRef>,
    pub affectable: BTreeSet<PropRef>,
}

impl Niche {
    pub fn may_sense(&self, r: &PropRef) -> bool {
        matches!(r, PropRef::Own(_)) || self.sensable.contains(r)
    }

    pub fn may_affect(&self, r: &PropRef) -> bool {
        matches!(r, PropRef::Own(_)) || self.affectable.contains(r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Access {
    Sense,
    Affect,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NicheViolation {
    pub span: Span,
    pub reference: PropRef,
    pub access: Access,
}

impl fmt::Display for NicheViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verb = match self.access {
            Access::Sense => "senses",
            Access::Affect => "affects",
        };
        write!(f, "{}: {verb} {} outside its niche", self.span, self.reference)
    }
}

/// Every sense/affect reference that falls outside `niche`, in source order.
pub fn niche_check(ast: &Node, niche: &Niche) -> Vec<NicheViolation> {
    let mut out = Vec::new();
    ast.walk(&mut |node| match &node.expr {
        super::Expr::Sense(r) if !niche.may_sense(r) => out.push(NicheViolation {
            span: node.span,
            reference: r.clone(),
            access: Access::Sense,
        }),
        super::Expr::Affect(r, _) if !niche.may_affect(r) => out.push(NicheViolation {
            span: node.span,
            reference: r.clone(),
            access: Access::Affect,
        }),
        _ => {}
    });
    out
}
