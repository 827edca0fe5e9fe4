use serde::Serialize;

use crate::eel::Catalog;
use crate::ids::KindId;

/// Complexity proxies for one kind: program size and depth in the niche DAG.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct KindComplexity {
    pub kind: KindId,
    pub name: String,
    pub ast_size: usize,
    /// 1 for environment-only programs, else 1 + the deepest referenced kind.
    pub niche_depth: u32,
}

pub fn complexity_report(catalog: &Catalog) -> Vec<KindComplexity> {
    let mut depths: Vec<u32> = Vec::with_capacity(catalog.len());
    let mut out = Vec::with_capacity(catalog.len());
    for kind in catalog.kinds() {
        // Birth order guarantees every referenced kind is already measured.
        let depth = 1 + kind
            .referenced_kinds()
            .iter()
            .filter_map(|k| depths.get(k.index()))
            .max()
            .copied()
            .unwrap_or(0);
        depths.push(depth);
        out.push(KindComplexity {
            kind: kind.id,
            name: kind.name.clone(),
            ast_size: kind.program.node_count(),
            niche_depth: depth,
        });
    }
    out
}
