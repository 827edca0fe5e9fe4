use serde::{Deserialize, Serialize};

use super::EelError;
use crate::dsl::{Niche, PropRef};
use crate::ids::KindId;
use crate::world::StructureKind;

/// Birth-ordered structure kinds. Append-only.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    kinds: Vec<StructureKind>,
    discovery_steps: Vec<Option<u64>>,
}

impl Catalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn kinds(&self) -> &[StructureKind] {
        &self.kinds
    }

    pub fn get(&self, id: KindId) -> Option<&StructureKind> {
        self.kinds.get(id.index())
    }

    /// The id the next appended kind will receive.
    pub fn next_id(&self) -> KindId {
        KindId(self.kinds.len() as u32)
    }

    /// Append a kind compiled for the next slot.
    pub fn push(&mut self, kind: StructureKind) -> KindId {
        let id = kind.id;
        assert_eq!(id, self.next_id(), "kinds must be appended in birth order");
        self.kinds.push(kind);
        self.discovery_steps.push(None);
        id
    }

    pub fn discovery_step(&self, id: KindId) -> Option<u64> {
        self.discovery_steps.get(id.index()).copied().flatten()
    }

    pub fn discovery_steps(&self) -> &[Option<u64>] {
        &self.discovery_steps
    }

    /// Note that an instance of `id` exists at `step`. True the first time only.
    pub fn record_discovery(&mut self, id: KindId, step: u64) -> bool {
        match self.discovery_steps.get_mut(id.index()) {
            Some(slot @ None) => {
                *slot = Some(step);
                true
            }
            _ => false,
        }
    }
}

/// The niche of catalog slot `index`: every environment property plus every
/// causal property of an earlier kind, for both sensing and affecting.
pub fn niche_of<'a>(
    index: KindId,
    catalog: &Catalog,
    env_props: impl IntoIterator<Item = &'a str>,
) -> Result<Niche, EelError> {
    if index.index() > catalog.len() {
        return Err(EelError::IndexBeyondNext {
            index,
            len: catalog.len(),
        });
    }
    let mut refs: Vec<PropRef> = env_props.into_iter().map(PropRef::env).collect();
    for kind in &catalog.kinds()[..index.index()] {
        refs.extend(kind.props.iter().map(|p| PropRef::Kind(kind.id, p.name.clone())));
    }
    let set: std::collections::BTreeSet<PropRef> = refs.into_iter().collect();
    Ok(Niche {
        sensable: set.clone(),
        affectable: set,
    })
}
