//! Random programs from the DSL grammar, restricted to a niche.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::provider::ProposalRequest;
use crate::dsl::{ArithOp, CmpOp, Expr, Node, PropRef};
use crate::energy::{PerturbationModel, Property};
use crate::ids::KindId;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorMode {
    #[default]
    Grammar,
    /// Ask the HTTP endpoint in `ENERSTAT_PROVIDER_URL` (or `provider_url`).
    Provider,
}

/// Relative frequency of each node family in generated expressions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KindMix {
    pub literal: u32,
    pub sense: u32,
    pub local: u32,
    pub arith: u32,
    pub compare: u32,
    pub branch: u32,
    pub clamp: u32,
}

impl Default for KindMix {
    fn default() -> Self {
        KindMix {
            literal: 4,
            sense: 4,
            local: 1,
            arith: 4,
            compare: 1,
            branch: 1,
            clamp: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub mode: GeneratorMode,
    /// Programs with more nodes are rejected.
    pub max_nodes: usize,
    pub max_statements: usize,
    pub mix: KindMix,
    pub literal_min: i64,
    pub literal_max: i64,
    /// Causal properties per generated kind, chosen uniformly in `0..=max_props`.
    pub max_props: usize,
    pub min_radius: u32,
    pub max_radius: u32,
    /// Proposals tried per invention before giving up.
    pub max_attempts: u32,
    /// Probability of drawing a reference from outside the niche. Only useful
    /// for exercising the rejection path.
    pub foreign_rate: f64,
    /// Steps per invention epoch; 0 disables invention during runs.
    pub epoch: u64,
    /// Most kinds invented per epoch.
    pub invention_budget: u32,
    /// Instances of each new kind placed by the environment, paid from the pool.
    pub spawn: u32,
    /// Generator stream seed. Defaults to the world seed.
    pub seed: Option<u64>,
    pub provider_url: Option<String>,
    pub provider_timeout_ms: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            mode: GeneratorMode::Grammar,
            max_nodes: 24,
            max_statements: 3,
            mix: KindMix::default(),
            literal_min: -4,
            literal_max: 8,
            max_props: 2,
            min_radius: 1,
            max_radius: 3,
            max_attempts: 64,
            foreign_rate: 0.0,
            epoch: 0,
            invention_budget: 1,
            spawn: 1,
            seed: None,
            provider_url: None,
            provider_timeout_ms: 2_000,
        }
    }
}

/// Causal properties for a new kind.
pub fn random_props(config: &GeneratorConfig, rng: &mut impl Rng) -> Vec<Property> {
    let n = rng.random_range(0..=config.max_props);
    (0..n)
        .map(|i| {
            let model = match rng.random_range(0..4) {
                0 => PerturbationModel::FREE,
                1 | 2 => PerturbationModel::linear(rng.random_range(1..=2)),
                _ => PerturbationModel::quadratic(1),
            };
            Property::new(format!("p{i}"), rng.random_range(0..=2), model)
        })
        .collect()
}

/// Draw one program for `request`. Sizes are bounded by `max_nodes` only
/// approximately; the caller rejects oversized results.
pub fn generate_program(request: &ProposalRequest, config: &GeneratorConfig, rng: &mut impl Rng) -> Node {
    let mut g = Gen {
        config,
        sensable: request
            .sensable
            .iter()
            .cloned()
            .chain(request.own_props.iter().map(|p| PropRef::Own(p.clone())))
            .collect(),
        affectable: request
            .affectable
            .iter()
            .cloned()
            .chain(request.own_props.iter().map(|p| PropRef::Own(p.clone())))
            .collect(),
        index: request.index,
        locals: Vec::new(),
        rng,
    };
    let statements = g.rng.random_range(1..=config.max_statements.max(1));
    let per_stmt = (config.max_nodes / statements).max(2);
    let mut nodes: Vec<Node> = (0..statements).map(|_| g.statement(per_stmt)).collect();
    if nodes.len() == 1 {
        nodes.pop().unwrap()
    } else {
        Node::new(Expr::Seq(nodes))
    }
}

struct Gen<'a, R: Rng> {
    config: &'a GeneratorConfig,
    sensable: Vec<PropRef>,
    affectable: Vec<PropRef>,
    index: KindId,
    locals: Vec<String>,
    rng: &'a mut R,
}

impl<R: Rng> Gen<'_, R> {
    fn statement(&mut self, budget: usize) -> Node {
        let roll = self.rng.random_range(0..10);
        if roll < 6 {
            if let Some(target) = self.pick(false) {
                let value = self.expr(budget.saturating_sub(1).max(1), 0);
                return Node::new(Expr::Affect(target, Box::new(value)));
            }
        }
        if roll < 8 && budget > 2 {
            let name = format!("v{}", self.locals.len());
            let value = self.expr(budget - 1, 0);
            self.locals.push(name.clone());
            return Node::new(Expr::WriteLocal(name, Box::new(value)));
        }
        self.expr(budget, 0)
    }

    /// A reference to sense (or affect), occasionally from outside the niche.
    fn pick(&mut self, sense: bool) -> Option<PropRef> {
        if self.config.foreign_rate > 0.0 && self.rng.random_bool(self.config.foreign_rate.clamp(0.0, 1.0)) {
            let k = self.index.0 + self.rng.random_range(0..3);
            return Some(PropRef::Kind(KindId(k), "p0".into()));
        }
        let pool = if sense { &self.sensable } else { &self.affectable };
        pool.choose(self.rng).cloned()
    }

    fn leaf(&mut self) -> Node {
        let m = self.config.mix;
        let local = if self.locals.is_empty() { 0 } else { m.local };
        let sense = if self.sensable.is_empty() && self.config.foreign_rate <= 0.0 {
            0
        } else {
            m.sense
        };
        let total = m.literal + sense + local;
        let mut roll = if total == 0 { 0 } else { self.rng.random_range(0..total) };
        if roll < sense {
            if let Some(r) = self.pick(true) {
                return Node::new(Expr::Sense(r));
            }
        }
        roll = roll.saturating_sub(sense);
        if roll < local {
            let name = self.locals.choose(self.rng).cloned().unwrap_or_default();
            return Node::new(Expr::ReadLocal(name));
        }
        let (lo, hi) = (
            self.config.literal_min,
            self.config.literal_max.max(self.config.literal_min),
        );
        Node::new(Expr::Literal(self.rng.random_range(lo..=hi)))
    }

    fn expr(&mut self, budget: usize, depth: usize) -> Node {
        if budget <= 2 || depth > 12 {
            return self.leaf();
        }
        let m = self.config.mix;
        let weights = [
            m.literal + m.sense + m.local,
            m.arith,
            m.compare,
            if budget >= 4 { m.branch } else { 0 },
            if budget >= 4 { m.clamp } else { 0 },
        ];
        let total: u32 = weights.iter().sum();
        if total == 0 {
            return self.leaf();
        }
        let mut roll = self.rng.random_range(0..total);
        let mut choice = 0;
        for (i, w) in weights.iter().enumerate() {
            if roll < *w {
                choice = i;
                break;
            }
            roll -= w;
        }
        let rest = budget - 1;
        match choice {
            1 => {
                let op = *[ArithOp::Add, ArithOp::Sub, ArithOp::Mul, ArithOp::Div]
                    .choose(self.rng)
                    .unwrap();
                let left = self.rng.random_range(1..rest);
                let a = self.expr(left, depth + 1);
                let b = self.expr(rest - left, depth + 1);
                Node::new(Expr::Arith(op, Box::new(a), Box::new(b)))
            }
            2 => {
                let op = *[CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge, CmpOp::Eq, CmpOp::Ne]
                    .choose(self.rng)
                    .unwrap();
                let left = self.rng.random_range(1..rest);
                let a = self.expr(left, depth + 1);
                let b = self.expr(rest - left, depth + 1);
                Node::new(Expr::Compare(op, Box::new(a), Box::new(b)))
            }
            3 | 4 => {
                let third = (rest / 3).max(1);
                let a = self.expr(third, depth + 1);
                let b = self.expr(third, depth + 1);
                let c = self.expr(rest.saturating_sub(2 * third).max(1), depth + 1);
                let e = if choice == 3 {
                    Expr::If(Box::new(a), Box::new(b), Box::new(c))
                } else {
                    Expr::Clamp(Box::new(a), Box::new(b), Box::new(c))
                };
                Node::new(e)
            }
            _ => self.leaf(),
        }
    }
}
