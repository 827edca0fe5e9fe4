use super::{World, ALLOC_SELF};
use crate::dsl::{PropRef, PropertyView};
use crate::ids::{InstanceId, KindId};
use crate::world::{StructureInstance, StructureKind};

/// Which live instance each `struct[k]` reference of a program binds to this step.
pub(super) type Resolution = Vec<(KindId, Option<InstanceId>)>;

pub(super) fn lookup(resolved: &[(KindId, Option<InstanceId>)], kind: KindId) -> Option<InstanceId> {
    resolved.iter().find(|(k, _)| *k == kind).and_then(|(_, i)| *i)
}

impl World {
    /// Bind every kind the program references to the nearest eligible live
    /// instance within the executing instance's radius (ties: lowest id).
    pub(super) fn resolve(&self, inst: &StructureInstance, kind: &StructureKind, doomed: &[InstanceId]) -> Resolution {
        kind.referenced_kinds()
            .into_iter()
            .map(|k| {
                let best = self
                    .by_kind
                    .get(k.index())
                    .into_iter()
                    .flatten()
                    .filter(|c| **c != inst.id && doomed.binary_search(c).is_err())
                    .map(|c| (self.instances[c].pos.distance(inst.pos), *c))
                    .filter(|(d, _)| *d <= kind.radius)
                    .min()
                    .map(|(_, c)| c);
                (k, best)
            })
            .collect()
    }
}

/// Read-only view of the world from one executing instance.
pub(super) struct ExecView<'w> {
    pub world: &'w World,
    pub inst: &'w StructureInstance,
    pub kind: &'w StructureKind,
    pub resolved: &'w [(KindId, Option<InstanceId>)],
}

impl PropertyView for ExecView<'_> {
    fn sense(&self, r: &PropRef) -> Option<i64> {
        if !self.kind.niche.may_sense(r) {
            return None;
        }
        match r {
            PropRef::Env(n) if n == ALLOC_SELF => Some(self.world.alloc_of(self.inst.id)),
            PropRef::Env(n) => self.world.env_value(n),
            PropRef::Own(n) => match n.as_str() {
                "x" => Some(self.inst.pos.x as i64),
                "y" => Some(self.inst.pos.y as i64),
                _ => self.inst.prop(n).map(|p| p.value),
            },
            PropRef::Kind(k, n) => match lookup(self.resolved, *k) {
                Some(target) => self.world.instances[&target].prop(n).map(|p| p.value),
                // Nothing in range: the kind's unperturbed default.
                None => self.world.catalog.get(*k)?.prop_template(n).map(|p| p.default),
            },
        }
    }

    fn may_affect(&self, r: &PropRef) -> bool {
        self.kind.niche.may_affect(r)
    }
}
