//! The environmental loop: the free pool, the causal-niche ordering of kinds,
//! structure invention and per-step allocation.

mod catalog;
mod generator;
mod provider;

use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use catalog::{niche_of, Catalog};
pub use generator::{generate_program, random_props, GeneratorConfig, GeneratorMode, KindMix};
pub use provider::{GrammarProvider, HttpProvider, ProgramProvider, ProposalRequest, ProviderError, PROVIDER_URL_VAR};

pub use crate::world::{allocate, Allocation, AllocationOutcome};

use crate::dsl::{self, CostTable};
use crate::energy::Energy;
use crate::ids::KindId;
use crate::world::{StructureKind, World};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EelError {
    #[error("catalog index {index} is beyond the next slot ({len})")]
    IndexBeyondNext { index: KindId, len: usize },
    #[error("no admissible program after {attempts} attempts (last rejection: {last})")]
    GenerationExhausted { attempts: u32, last: String },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("invention budget of {0} kinds per epoch is spent")]
    BudgetExhausted(u32),
}

/// Outcome of a successful invention.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Invented {
    pub kind: KindId,
    /// Proposals drawn, including the admitted one.
    pub attempts: u32,
}

/// Draw proposals until one parses, fits the node limit, stays in its niche and
/// costs out, then append it to the catalog.
pub fn invent_structure(
    config: &GeneratorConfig,
    catalog: &mut Catalog,
    env_props: &[String],
    table: &CostTable,
    provider: &mut dyn ProgramProvider,
    rng: &mut ChaCha8Rng,
) -> Result<Invented, EelError> {
    let index = catalog.next_id();
    let niche = niche_of(index, catalog, env_props.iter().map(String::as_str))?;
    let props = random_props(config, rng);
    let radius = rng.random_range(config.min_radius..=config.max_radius.max(config.min_radius));
    let request = ProposalRequest {
        index,
        sensable: niche.sensable.iter().cloned().collect(),
        affectable: niche.affectable.iter().cloned().collect(),
        own_props: props.iter().map(|p| p.name.clone()).collect(),
        max_nodes: config.max_nodes,
    };
    let mut last = String::from("none");
    for attempt in 1..=config.max_attempts {
        let source = provider.propose(&request, rng)?;
        let program = match dsl::parse(&source) {
            Ok(p) => p,
            Err(e) => {
                last = e.to_string();
                continue;
            }
        };
        if program.node_count() > config.max_nodes {
            last = format!(
                "{} nodes exceed the limit of {}",
                program.node_count(),
                config.max_nodes
            );
            continue;
        }
        match StructureKind::from_program(
            index,
            format!("gen{}", index.0),
            program,
            props.clone(),
            radius,
            table,
            niche.clone(),
        ) {
            Ok(kind) => {
                catalog.push(kind);
                return Ok(Invented {
                    kind: index,
                    attempts: attempt,
                });
            }
            Err(e) => last = e.to_string(),
        }
    }
    Err(EelError::GenerationExhausted {
        attempts: config.max_attempts,
        last,
    })
}

/// Invention state owned by a world.
pub struct Eel {
    pub config: GeneratorConfig,
    rng: ChaCha8Rng,
    provider: Box<dyn ProgramProvider + Send>,
    invented_this_epoch: u32,
}

impl std::fmt::Debug for Eel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Eel")
            .field("config", &self.config)
            .field("remote", &self.provider.is_remote())
            .field("invented_this_epoch", &self.invented_this_epoch)
            .finish()
    }
}

impl Eel {
    /// Build from config. Provider mode needs `provider_url` or `ENERSTAT_PROVIDER_URL`.
    pub fn new(config: GeneratorConfig, world_seed: u64) -> Result<Self, EelError> {
        let provider: Box<dyn ProgramProvider + Send> = match config.mode {
            GeneratorMode::Grammar => Box::new(GrammarProvider::new(config.clone())),
            GeneratorMode::Provider => {
                let timeout = Duration::from_millis(config.provider_timeout_ms);
                let http = match &config.provider_url {
                    Some(url) => Some(HttpProvider::new(url.clone(), timeout)),
                    None => HttpProvider::from_env(timeout),
                };
                Box::new(http.ok_or_else(|| {
                    ProviderError::Unavailable(format!("provider mode needs `provider_url` or {PROVIDER_URL_VAR}"))
                })?)
            }
        };
        Ok(Self::with_provider(config, world_seed, provider))
    }

    pub fn with_provider(config: GeneratorConfig, world_seed: u64, provider: Box<dyn ProgramProvider + Send>) -> Self {
        let seed = config.seed.unwrap_or(world_seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::MAX);
        Eel {
            config,
            rng,
            provider,
            invented_this_epoch: 0,
        }
    }

    pub fn is_remote(&self) -> bool {
        self.provider.is_remote()
    }

    pub fn begin_epoch(&mut self) {
        self.invented_this_epoch = 0;
    }

    pub fn invent(
        &mut self,
        catalog: &mut Catalog,
        env_props: &[String],
        table: &CostTable,
    ) -> Result<Invented, EelError> {
        if self.invented_this_epoch >= self.config.invention_budget {
            return Err(EelError::BudgetExhausted(self.config.invention_budget));
        }
        let out = invent_structure(
            &self.config,
            catalog,
            env_props,
            table,
            self.provider.as_mut(),
            &mut self.rng,
        )?;
        self.invented_this_epoch += 1;
        Ok(out)
    }

    pub fn rng_word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }
}

/// Energy not trapped in any structure: the free pool.
pub fn free_energy(world: &World) -> Energy {
    world.ledger().free_pool()
}
