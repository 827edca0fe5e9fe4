//! Scenario files: a versioned JSON document plus sibling `.cp` program files.

mod run;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{CostOverrides, CostTable};
use crate::eel::{Eel, GeneratorConfig};
use crate::energy::{Energy, PerturbationModel, Property};
use crate::fraction::Fraction;
use crate::ids::{KindId, LoopId};
use crate::learning::{Action, ActionPolicy};
use crate::metrics::TcvConfig;
use crate::world::{
    Cell, DriveMode, Driver, Grid, KindError, LoopSpec, Mode, ScheduledPerturbation, Signal, Target, Windows, World,
    WorldConfig, WorldError,
};

pub use run::{
    perturb_bundle, read_manifest, run_scenario, run_world, sweep, BundleManifest, RunBundle, RunError, RunOptions,
    BUNDLE_SCHEMA,
};

pub const SCENARIO_SCHEMA: &str = "enerstat.scenario/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: String,
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub seed: u64,
    pub steps: u64,
    pub world: WorldSection,
    #[serde(default)]
    pub cost_table: CostOverrides,
    #[serde(default)]
    pub env: Vec<PropSpec>,
    #[serde(default)]
    pub kinds: Vec<KindSpec>,
    #[serde(default)]
    pub loops: Vec<LoopSection>,
    #[serde(default)]
    pub structures: Vec<PlacementSpec>,
    #[serde(default)]
    pub channels: Vec<ChannelSpec>,
    #[serde(default)]
    pub perturbations: Vec<ScheduledPerturbation>,
    #[serde(default)]
    pub drivers: Vec<Driver>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tcv: Option<TcvSection>,
    #[serde(default)]
    pub metrics: MetricsSection,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSection {
    pub mode: Mode,
    /// Closed: the fixed total. Open: the initial pool.
    pub total_energy: Energy,
    #[serde(default)]
    pub grid: Grid,
    #[serde(default = "one")]
    pub c_squared: Energy,
    #[serde(default)]
    pub density_threshold: Energy,
    #[serde(default)]
    pub log_transfers: bool,
}

fn one() -> Energy {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropSpec {
    pub name: String,
    #[serde(default)]
    pub default: i64,
    /// Starting value; its stored energy is paid from the pool.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<i64>,
    pub perturbation: PerturbationModel,
}

impl PropSpec {
    fn to_property(&self) -> Property {
        let mut p = Property::new(self.name.clone(), self.default, self.perturbation);
        if let Some(v) = self.value {
            p.value = v;
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KindSpec {
    pub name: String,
    /// Path of a `.cp` file, relative to the scenario file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    /// Inline program text. Exactly one of `source` and `program` is set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub program: Option<String>,
    pub radius: u32,
    #[serde(default)]
    pub props: Vec<PropSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    pub stasis: Energy,
    pub action: Energy,
    pub cap: Energy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSpec {
    Assemble(String),
    DisassembleOldest(String),
    NoOp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    pub eta: Fraction,
    pub actions: Vec<ActionSpec>,
    /// Initial weights; uniform when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<Fraction>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemberSpec {
    pub kind: String,
    /// Defaults to the loop's anchor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pos: Option<[i32; 2]>,
    /// Per-step allocation; defaults to the kind's FED plus `surplus`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alloc: Option<Energy>,
    #[serde(default)]
    pub surplus: Energy,
    #[serde(default = "one_u32")]
    pub count: u32,
}

fn one_u32() -> u32 {
    1
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopSection {
    pub name: String,
    #[serde(default)]
    pub setpoint: Energy,
    pub windows: WindowSpec,
    #[serde(default)]
    pub effector_rate: Energy,
    #[serde(default)]
    pub anchor: [i32; 2],
    /// Energy moved from the pool into the loop's reserve before the first step.
    #[serde(default)]
    pub initial_energy: Energy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<PolicySpec>,
    #[serde(default = "yes")]
    pub learning: bool,
    #[serde(default)]
    pub adopt_inventions: bool,
    #[serde(default)]
    pub members: Vec<MemberSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlacementSpec {
    pub kind: String,
    pub pos: [i32; 2],
    #[serde(default)]
    pub loops: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alloc: Option<Energy>,
    #[serde(default)]
    pub surplus: Energy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CarrierSpec {
    pub kind: String,
    /// Defaults to the origin loop's anchor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pos: Option<[i32; 2]>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub origin: String,
    pub target: String,
    pub gain: Fraction,
    pub cap: Energy,
    /// A structure spawned into the origin loop; the channel works while it lives.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub carrier: Option<CarrierSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TcvSection {
    /// Names of the loops that make up the controller.
    pub controllers: Vec<String>,
    pub variables: Vec<Target>,
    /// Applied to whichever variable is under test.
    pub disturbance: DisturbanceSpec,
    pub theta: f64,
    #[serde(default = "one_u32")]
    pub trials: u32,
    /// Defaults to the scenario's step count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<u64>,
    #[serde(default)]
    pub warmup: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceSpec {
    pub mode: DriveMode,
    pub signal: Signal,
    #[serde(default)]
    pub noise: i64,
    #[serde(default)]
    pub random_phase: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSection {
    pub window: u64,
    pub hysteresis: usize,
}

impl Default for MetricsSection {
    fn default() -> Self {
        MetricsSection {
            window: 100,
            hysteresis: 3,
        }
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{}: file not found", .0.display())]
    MissingFile(PathBuf),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}{}: {message}", path.display(), location.map(|(l, c)| format!(":{l}:{c}")).unwrap_or_default())]
    Schema {
        path: PathBuf,
        location: Option<(usize, usize)>,
        message: String,
    },
    #[error("{}:{line}:{column}: in kind `{kind}`: {message}", path.display())]
    Dsl {
        path: PathBuf,
        kind: String,
        line: u32,
        column: u32,
        message: String,
    },
}

impl ScenarioError {
    fn schema(path: &Path, message: impl Into<String>) -> Self {
        ScenarioError::Schema {
            path: path.to_path_buf(),
            location: None,
            message: message.into(),
        }
    }
}

fn fed(w: &World, k: KindId) -> Energy {
    w.catalog().get(k).map_or(0, |k| k.fed)
}

/// A scenario with its program sources resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub path: PathBuf,
    /// Program text per kind, in catalog order.
    pub programs: Vec<String>,
    /// Where each program came from (for diagnostics).
    pub program_paths: Vec<PathBuf>,
}

fn read(path: &Path) -> Result<String, ScenarioError> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => ScenarioError::MissingFile(path.to_path_buf()),
        _ => ScenarioError::Io {
            path: path.to_path_buf(),
            source: e,
        },
    })
}

/// Read, schema-check and fully validate a scenario: every program is parsed,
/// costed and niche-checked, and the world is built once, before any run.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<LoadedScenario, ScenarioError> {
    let path = path.as_ref();
    let text = read(path)?;
    parse_scenario(&text, path)
}

/// Like [`load_scenario`], for text already in memory; `.cp` paths resolve against `path`'s directory.
pub fn parse_scenario(text: &str, path: &Path) -> Result<LoadedScenario, ScenarioError> {
    let scenario: Scenario = serde_json::from_str(text).map_err(|e| ScenarioError::Schema {
        path: path.to_path_buf(),
        location: Some((e.line(), e.column())),
        message: e.to_string(),
    })?;
    if scenario.schema != SCENARIO_SCHEMA {
        return Err(ScenarioError::schema(
            path,
            format!(
                "unsupported schema `{}` (expected `{SCENARIO_SCHEMA}`)",
                scenario.schema
            ),
        ));
    }
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut programs = Vec::new();
    let mut program_paths = Vec::new();
    for k in &scenario.kinds {
        match (&k.source, &k.program) {
            (Some(src), None) => {
                let p = dir.join(src);
                programs.push(read(&p)?);
                program_paths.push(p);
            }
            (None, Some(text)) => {
                programs.push(text.clone());
                program_paths.push(path.to_path_buf());
            }
            _ => {
                return Err(ScenarioError::schema(
                    path,
                    format!("kind `{}` needs exactly one of `source` and `program`", k.name),
                ))
            }
        }
    }
    let loaded = LoadedScenario {
        scenario,
        path: path.to_path_buf(),
        programs,
        program_paths,
    };
    loaded.validate()?;
    loaded.build()?;
    Ok(loaded)
}

impl LoadedScenario {
    /// A self-contained copy: programs inlined, `source` paths dropped.
    pub fn snapshot(&self) -> Scenario {
        let mut s = self.scenario.clone();
        for (k, text) in s.kinds.iter_mut().zip(&self.programs) {
            k.source = None;
            k.program = Some(text.clone());
        }
        s
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.scenario.seed = seed;
        self
    }

    pub fn with_steps(mut self, steps: u64) -> Self {
        self.scenario.steps = steps;
        self
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        let s = &self.scenario;
        let err = |m: String| Err(ScenarioError::schema(&self.path, m));
        let mut seen = BTreeSet::new();
        for k in &s.kinds {
            if !seen.insert(k.name.as_str()) {
                return err(format!("kind `{}` declared twice", k.name));
            }
        }
        let mut loops = BTreeSet::new();
        for l in &s.loops {
            if !loops.insert(l.name.as_str()) {
                return err(format!("loop `{}` declared twice", l.name));
            }
        }
        if s.metrics.window == 0 {
            return err("metrics.window must be at least 1".into());
        }
        if let Some(t) = &s.tcv {
            if !(t.theta > 0.0 && t.theta <= 0.5) {
                return err("tcv.theta must lie in (0, 0.5]".into());
            }
            for c in &t.controllers {
                if !loops.contains(c.as_str()) {
                    return err(format!("tcv controller `{c}` is not a declared loop"));
                }
            }
        }
        if matches!(s.world.mode, Mode::Closed) && s.world.total_energy < 0 {
            return err("world.total_energy must be non-negative".into());
        }
        Ok(())
    }

    fn kind_error(&self, index: usize, e: KindError) -> ScenarioError {
        let span = match &e {
            KindError::Parse(p) => Some(p.span()),
            KindError::Niche(v) => v.first().map(|v| v.span),
            KindError::UnknownOwnProperty { span, .. } => Some(*span),
            _ => None,
        };
        ScenarioError::Dsl {
            path: self.program_paths[index].clone(),
            kind: self.scenario.kinds[index].name.clone(),
            line: span.map_or(0, |s| s.line),
            column: span.map_or(0, |s| s.column),
            message: e.to_string(),
        }
    }

    /// World configuration with the scenario's seed.
    pub fn world_config(&self) -> Result<WorldConfig, ScenarioError> {
        let s = &self.scenario;
        let mut c = WorldConfig::new(s.seed, s.world.total_energy);
        c.mode = s.world.mode.clone();
        c.grid = s.world.grid;
        c.c_squared = s.world.c_squared;
        c.density_threshold = s.world.density_threshold;
        c.log_transfers = s.world.log_transfers;
        c.step_limit = Some(s.steps);
        c.cost_table = CostTable::with_overrides(&s.cost_table)
            .map_err(|e| ScenarioError::schema(&self.path, format!("cost_table: {e}")))?;
        Ok(c)
    }

    /// Build the initial world for this scenario's seed.
    pub fn build(&self) -> Result<World, ScenarioError> {
        self.build_seeded(self.scenario.seed)
    }

    pub fn build_seeded(&self, seed: u64) -> Result<World, ScenarioError> {
        let s = &self.scenario;
        let mut config = self.world_config()?;
        config.seed = seed;
        let mut w = World::new(config);
        let path = &self.path;
        let wrap = |what: String, e: WorldError| ScenarioError::schema(path, format!("{what}: {e}"));

        for p in &s.env {
            w.add_env_prop(p.to_property())
                .map_err(|e| wrap(format!("env `{}`", p.name), e))?;
        }
        let mut kinds: BTreeMap<&str, KindId> = BTreeMap::new();
        for (i, k) in s.kinds.iter().enumerate() {
            let props = k.props.iter().map(PropSpec::to_property).collect();
            let id = w
                .add_kind(k.name.clone(), &self.programs[i], props, k.radius)
                .map_err(|e| match e {
                    WorldError::Kind(ke) => self.kind_error(i, ke),
                    other => wrap(format!("kind `{}`", k.name), other),
                })?;
            kinds.insert(k.name.as_str(), id);
        }
        let kind = |name: &str| {
            kinds
                .get(name)
                .copied()
                .ok_or_else(|| ScenarioError::schema(path, format!("unknown kind `{name}`")))
        };

        let controllers: BTreeSet<&str> = s
            .tcv
            .iter()
            .flat_map(|t| t.controllers.iter().map(String::as_str))
            .collect();
        let mut loops: BTreeMap<&str, LoopId> = BTreeMap::new();
        for l in &s.loops {
            let windows = Windows::new(l.windows.stasis, l.windows.action, l.windows.cap)
                .map_err(|e| ScenarioError::schema(path, format!("loop `{}`: {e}", l.name)))?;
            let mut spec = LoopSpec::new(l.name.clone(), l.setpoint, windows);
            spec.effector_rate = l.effector_rate;
            spec.anchor = Cell::new(l.anchor[0], l.anchor[1]);
            spec.learning = l.learning;
            spec.adopt_inventions = l.adopt_inventions;
            spec.controller = controllers.contains(l.name.as_str());
            if let Some(p) = &l.policy {
                let actions = p
                    .actions
                    .iter()
                    .map(|a| {
                        Ok(match a {
                            ActionSpec::Assemble(k) => Action::Assemble(kind(k)?),
                            ActionSpec::DisassembleOldest(k) => Action::DisassembleOldest(kind(k)?),
                            ActionSpec::NoOp => Action::NoOp,
                        })
                    })
                    .collect::<Result<Vec<_>, ScenarioError>>()?;
                let policy = match &p.weights {
                    Some(ws) => ActionPolicy::new(actions, ws.clone(), p.eta),
                    None => ActionPolicy::uniform(actions, p.eta),
                }
                .map_err(|e| ScenarioError::schema(path, format!("loop `{}` policy: {e}", l.name)))?;
                spec.policy = Some(policy);
            }
            let id = w.add_loop(spec).map_err(|e| wrap(format!("loop `{}`", l.name), e))?;
            if l.initial_energy != 0 {
                w.perturb(&Target::LoopEnergy(id), l.initial_energy)
                    .map_err(|e| wrap(format!("loop `{}` initial_energy", l.name), e))?;
            }
            for m in &l.members {
                let k = kind(&m.kind)?;
                let pos = m.pos.unwrap_or(l.anchor);
                let alloc = m.alloc.unwrap_or(fed(&w, k) + m.surplus);
                for _ in 0..m.count {
                    w.spawn(k, Cell::new(pos[0], pos[1]), &[id], Some(alloc))
                        .map_err(|e| wrap(format!("loop `{}` member `{}`", l.name, m.kind), e))?;
                }
            }
            loops.insert(l.name.as_str(), id);
        }
        let loop_id = |name: &str| {
            loops
                .get(name)
                .copied()
                .ok_or_else(|| ScenarioError::schema(path, format!("unknown loop `{name}`")))
        };

        for p in &s.structures {
            let ids = p.loops.iter().map(|n| loop_id(n)).collect::<Result<Vec<_>, _>>()?;
            let k = kind(&p.kind)?;
            let alloc = p.alloc.unwrap_or(fed(&w, k) + p.surplus);
            w.spawn(k, Cell::new(p.pos[0], p.pos[1]), &ids, Some(alloc))
                .map_err(|e| wrap(format!("structure `{}`", p.kind), e))?;
        }
        for c in &s.channels {
            let (origin, target) = (loop_id(&c.origin)?, loop_id(&c.target)?);
            let carrier = match &c.carrier {
                Some(cs) => {
                    let anchor = s.loops[origin.index()].anchor;
                    let pos = cs.pos.unwrap_or(anchor);
                    Some(
                        w.spawn(kind(&cs.kind)?, Cell::new(pos[0], pos[1]), &[origin], None)
                            .map_err(|e| wrap(format!("channel carrier `{}`", cs.kind), e))?,
                    )
                }
                None => None,
            };
            w.add_channel(origin, target, c.gain, c.cap, carrier)
                .map_err(|e| wrap(format!("channel {} -> {}", c.origin, c.target), e))?;
        }
        for p in &s.perturbations {
            w.schedule(p.clone())
                .map_err(|e| wrap(format!("perturbation at step {}", p.at), e))?;
        }
        for d in &s.drivers {
            w.add_driver(d.clone())
                .map_err(|e| wrap(format!("driver on `{}`", d.target), e))?;
        }
        if let Some(g) = &s.generator {
            let eel = Eel::new(g.clone(), seed).map_err(|e| ScenarioError::schema(path, format!("generator: {e}")))?;
            w.set_eel(eel);
        }
        Ok(w)
    }

    /// TCV configuration for one declared variable over `seeds`.
    pub fn tcv_config(
        &self,
        variable: &Target,
        theta: Option<f64>,
        seeds: Vec<u64>,
    ) -> Result<TcvConfig, ScenarioError> {
        let t = self
            .scenario
            .tcv
            .as_ref()
            .ok_or_else(|| ScenarioError::schema(&self.path, "scenario has no `tcv` section"))?;
        Ok(TcvConfig {
            variable: variable.clone(),
            disturbance: Driver {
                target: variable.clone(),
                mode: t.disturbance.mode,
                signal: t.disturbance.signal.clone(),
                noise: t.disturbance.noise,
                random_phase: t.disturbance.random_phase,
            },
            theta: theta.unwrap_or(t.theta),
            seeds,
            steps: t.steps.unwrap_or(self.scenario.steps),
            warmup: t.warmup,
        })
    }
}
