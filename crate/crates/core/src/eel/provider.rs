//! Sources of candidate programs: the built-in grammar sampler or an HTTP endpoint.

use std::time::Duration;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::generator::{generate_program, GeneratorConfig};
use crate::dsl::{self, PropRef};
use crate::ids::KindId;

/// Environment variable naming the external provider endpoint.
pub const PROVIDER_URL_VAR: &str = "ENERSTAT_PROVIDER_URL";

/// What a provider is asked to fill: the niche and the new kind's own properties.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProposalRequest {
    pub index: KindId,
    pub sensable: Vec<PropRef>,
    pub affectable: Vec<PropRef>,
    pub own_props: Vec<String>,
    pub max_nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    #[error("program provider unavailable: {0}")]
    Unavailable(String),
}

pub trait ProgramProvider {
    /// DSL source for one candidate. The caller parses and validates it.
    fn propose(&mut self, request: &ProposalRequest, rng: &mut ChaCha8Rng) -> Result<String, ProviderError>;

    /// Whether this provider reaches outside the process.
    fn is_remote(&self) -> bool {
        false
    }
}

/// Samples programs from the grammar. Never touches the network.
#[derive(Debug, Clone, Default)]
pub struct GrammarProvider {
    pub config: GeneratorConfig,
}

impl GrammarProvider {
    pub fn new(config: GeneratorConfig) -> Self {
        GrammarProvider { config }
    }
}

impl ProgramProvider for GrammarProvider {
    fn propose(&mut self, request: &ProposalRequest, rng: &mut ChaCha8Rng) -> Result<String, ProviderError> {
        Ok(dsl::print(&generate_program(request, &self.config, rng)))
    }
}

/// JSON request document sent to an external provider.
#[derive(Debug, Serialize)]
struct NicheDocument<'a> {
    index: u32,
    sensable: Vec<String>,
    affectable: Vec<String>,
    own_props: &'a [String],
    max_nodes: usize,
    grammar: &'static str,
}

const GRAMMAR_SUMMARY: &str = "program = stmt {';' stmt}; stmt = 'let' ident '=' expr | expr; \
expr = 'if' expr 'then' expr 'else' expr | sum [cmp sum]; atoms: int, ident, sense(ref), \
affect(ref, expr), clamp(e, lo, hi), (expr), { program }; ref = env.name | self.name | struct[k].name";

/// POSTs the niche document and reads DSL source back as the response body.
#[derive(Debug, Clone)]
pub struct HttpProvider {
    url: String,
    agent: ureq::Agent,
}

impl HttpProvider {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(true)
            .build()
            .into();
        HttpProvider { url: url.into(), agent }
    }

    /// Endpoint from `ENERSTAT_PROVIDER_URL`, if set.
    pub fn from_env(timeout: Duration) -> Option<Self> {
        std::env::var(PROVIDER_URL_VAR)
            .ok()
            .filter(|u| !u.is_empty())
            .map(|u| Self::new(u, timeout))
    }
}

impl ProgramProvider for HttpProvider {
    fn propose(&mut self, request: &ProposalRequest, _rng: &mut ChaCha8Rng) -> Result<String, ProviderError> {
        let doc = NicheDocument {
            index: request.index.0,
            sensable: request.sensable.iter().map(ToString::to_string).collect(),
            affectable: request.affectable.iter().map(ToString::to_string).collect(),
            own_props: &request.own_props,
            max_nodes: request.max_nodes,
            grammar: GRAMMAR_SUMMARY,
        };
        let body = serde_json::to_string(&doc).expect("niche document serializes");
        let unavailable = |e: ureq::Error| ProviderError::Unavailable(e.to_string());
        let mut response = self
            .agent
            .post(&self.url)
            .header("content-type", "application/json")
            .send(body.as_str())
            .map_err(unavailable)?;
        response.body_mut().read_to_string().map_err(unavailable)
    }

    fn is_remote(&self) -> bool {
        true
    }
}
