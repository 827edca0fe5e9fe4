//! The world: structures, loops, channels and the synchronous timestep.

mod channel;
mod event;
mod loops;
mod signal;
mod step;
mod structure;
mod view;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use channel::{channel_flow, EnergyChannel};
pub use event::{read_jsonl, write_jsonl, DeathCause, Event, EventData, EVENT_SCHEMA_VERSION};
pub use loops::{classify_window, loop_window_bounds, step_minimal_loop, EnerstaticLoop, LoopError, Window, Windows};
pub use signal::{DriveMode, Driver, DriverState, Signal, Target};
pub use step::{allocate, step_world, Allocation, AllocationOutcome};
pub use structure::{Cell, KindError, StructureInstance, StructureKind, POSITION_PROPS};

use crate::dsl::{CostTable, ExecError, PropRef};
use crate::eel::{niche_of, Catalog, Eel, EelError};
use crate::energy::{stored_property_energy, Account, Energy, Ledger, LedgerError, Property};
use crate::fraction::Fraction;
use crate::ids::{ChannelId, InstanceId, KindId, LoopId};
use crate::learning::{ActionPolicy, ActionTrace};

/// The environment property through which each structure sees its own allocation.
pub const ALLOC_SELF: &str = "alloc_self";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub width: u32,
    pub height: u32,
}

impl Default for Grid {
    fn default() -> Self {
        Grid { width: 64, height: 64 }
    }
}

impl Grid {
    pub fn clamp(&self, c: Cell) -> Cell {
        Cell {
            x: c.x.clamp(0, self.width.max(1) as i32 - 1),
            y: c.y.clamp(0, self.height.max(1) as i32 - 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Mode {
    /// Energy is neither created nor destroyed; dissipation returns to the pool.
    Closed,
    /// The inflow signal feeds the pool each step; dissipation leaves the world.
    Open { inflow: Signal },
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    pub seed: u64,
    /// Closed: the fixed total. Open: the initial pool.
    pub total_energy: Energy,
    pub mode: Mode,
    pub grid: Grid,
    pub c_squared: Energy,
    pub cost_table: CostTable,
    /// Least loop energy per member at which the loop may assemble.
    pub density_threshold: Energy,
    /// Log every ledger transfer (verbose).
    pub log_transfers: bool,
    pub step_limit: Option<u64>,
}

impl WorldConfig {
    pub fn new(seed: u64, total_energy: Energy) -> Self {
        WorldConfig {
            seed,
            total_energy,
            mode: Mode::Closed,
            grid: Grid::default(),
            c_squared: 1,
            cost_table: CostTable::default(),
            density_threshold: 0,
            log_transfers: false,
            step_limit: None,
        }
    }
}

/// A one-off shift of a target at the start of step `at`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduledPerturbation {
    pub at: u64,
    pub target: Target,
    pub delta: i64,
}

/// Parameters of a new loop.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopSpec {
    pub name: String,
    pub setpoint: Energy,
    pub windows: Windows,
    pub effector_rate: Energy,
    pub anchor: Cell,
    pub policy: Option<ActionPolicy>,
    pub learning: bool,
    pub adopt_inventions: bool,
    pub controller: bool,
}

impl LoopSpec {
    pub fn new(name: impl Into<String>, setpoint: Energy, windows: Windows) -> Self {
        LoopSpec {
            name: name.into(),
            setpoint,
            windows,
            effector_rate: 0,
            anchor: Cell::default(),
            policy: None,
            learning: true,
            adopt_inventions: false,
            controller: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Payer {
    Pool,
    Loop(LoopId),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorldError {
    #[error("{payer} holds {balance} µE, cannot pay {amount} µE")]
    InsufficientBalance {
        payer: String,
        balance: Energy,
        amount: Energy,
    },
    #[error("unknown structure kind {0}")]
    UnknownKind(KindId),
    #[error("unknown or dead instance {0}")]
    UnknownInstance(InstanceId),
    #[error("unknown or dissolved loop {0}")]
    UnknownLoop(LoopId),
    #[error("energy density {density} µE per member in {loop_id} is below the assembly threshold {threshold}")]
    DensityTooLow {
        loop_id: LoopId,
        density: Energy,
        threshold: Energy,
    },
    #[error("step {step}: conservation violated (expected {expected} µE, found {found} µE)\n{dump}")]
    ConservationViolation {
        step: u64,
        expected: Energy,
        found: Energy,
        dump: String,
    },
    #[error("step limit {0} reached")]
    StepLimitReached(u64),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Kind(#[from] KindError),
    #[error("{instance}: {source}")]
    Exec { instance: InstanceId, source: ExecError },
    #[error(transparent)]
    Loop(#[from] LoopError),
    #[error(transparent)]
    Eel(#[from] EelError),
    #[error("{0}")]
    Config(String),
}

/// A world and everything in it.
#[derive(Debug)]
pub struct World {
    config: WorldConfig,
    ledger: Ledger,
    catalog: Catalog,
    instances: BTreeMap<InstanceId, StructureInstance>,
    /// Live instance ids per kind, ascending.
    by_kind: Vec<Vec<InstanceId>>,
    next_instance: u32,
    loops: Vec<EnerstaticLoop>,
    channels: Vec<EnergyChannel>,
    env: BTreeMap<String, Property>,
    /// Allocation request per instance id.
    alloc: Vec<Energy>,
    rng: ChaCha8Rng,
    step: u64,
    started: bool,
    drivers: Vec<DriverState>,
    perturbations: Vec<ScheduledPerturbation>,
    eel: Option<Eel>,
    events: Vec<Event>,
    outflow_this_step: Energy,
}

impl World {
    pub fn new(config: WorldConfig) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        World {
            ledger: Ledger::new(config.total_energy),
            catalog: Catalog::new(),
            instances: BTreeMap::new(),
            by_kind: Vec::new(),
            next_instance: 0,
            loops: Vec::new(),
            channels: Vec::new(),
            env: BTreeMap::new(),
            alloc: Vec::new(),
            rng,
            step: 0,
            started: false,
            drivers: Vec::new(),
            perturbations: Vec::new(),
            eel: None,
            events: Vec::new(),
            outflow_this_step: 0,
            config,
        }
    }

    // ---- accessors ----

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn instance(&self, id: InstanceId) -> Option<&StructureInstance> {
        self.instances.get(&id)
    }

    /// Live instances in ascending id order.
    pub fn instances(&self) -> impl Iterator<Item = &StructureInstance> {
        self.instances.values()
    }

    pub fn live_count(&self) -> usize {
        self.instances.len()
    }

    /// Live instances of `kind`.
    pub fn copy_number(&self, kind: KindId) -> usize {
        self.by_kind.get(kind.index()).map_or(0, Vec::len)
    }

    pub fn loops(&self) -> &[EnerstaticLoop] {
        &self.loops
    }

    pub fn get_loop(&self, id: LoopId) -> Option<&EnerstaticLoop> {
        self.loops.get(id.index())
    }

    pub fn find_loop(&self, name: &str) -> Option<LoopId> {
        self.loops.iter().find(|l| l.name == name).map(|l| l.id)
    }

    pub fn channels(&self) -> &[EnergyChannel] {
        &self.channels
    }

    pub fn env_props(&self) -> impl Iterator<Item = &Property> {
        self.env.values()
    }

    pub fn env_value(&self, name: &str) -> Option<i64> {
        self.env.get(name).map(|p| p.value)
    }

    /// Names visible as `env.*`, including `alloc_self`.
    pub fn env_names(&self) -> Vec<String> {
        std::iter::once(ALLOC_SELF.to_string())
            .chain(self.env.keys().cloned())
            .collect()
    }

    pub fn alloc_of(&self, id: InstanceId) -> Energy {
        self.alloc.get(id.index()).copied().unwrap_or(0)
    }

    /// Reserve plus member buffers.
    pub fn loop_energy(&self, id: LoopId) -> Energy {
        let Some(l) = self.loops.get(id.index()) else {
            return 0;
        };
        let reserve = self.ledger.balance(Account::Reserve(id)).unwrap_or(0);
        reserve
            + l.members
                .iter()
                .map(|m| self.ledger.balance(Account::Buffer(*m)).unwrap_or(0))
                .sum::<Energy>()
    }

    /// Current value of a target, if it exists.
    pub fn target_value(&self, target: &Target) -> Option<i64> {
        match target {
            Target::Env(n) => self.env_value(n),
            Target::LoopEnergy(id) => self
                .loops
                .get(id.index())
                .filter(|l| l.alive)
                .map(|_| self.loop_energy(*id)),
            Target::Instance(id, n) => {
                let inst = self.instances.get(id)?;
                match n.as_str() {
                    "alloc" => Some(self.alloc_of(*id)),
                    "x" => Some(inst.pos.x as i64),
                    "y" => Some(inst.pos.y as i64),
                    _ => inst.prop(n).map(|p| p.value),
                }
            }
        }
    }

    pub fn is_extinct(&self) -> bool {
        self.instances.is_empty() && self.eel.as_ref().is_none_or(|e| e.config.epoch == 0)
    }

    pub fn at_step_limit(&self) -> bool {
        self.config.step_limit.is_some_and(|l| self.step >= l)
    }

    pub fn controllers(&self) -> Vec<LoopId> {
        self.loops.iter().filter(|l| l.controller).map(|l| l.id).collect()
    }

    /// Events emitted since the last drain.
    pub fn drain_events(&mut self) -> Vec<Event> {
        std::mem::take(&mut self.events)
    }

    pub fn eel(&self) -> Option<&Eel> {
        self.eel.as_ref()
    }

    // ---- setup ----

    /// Declare an environment property. Must precede every kind, so niches stay complete.
    pub fn add_env_prop(&mut self, prop: Property) -> Result<(), WorldError> {
        if !self.catalog.is_empty() {
            return Err(WorldError::Config(
                "environment properties must be declared before structure kinds".into(),
            ));
        }
        if prop.name == ALLOC_SELF || self.env.contains_key(&prop.name) {
            return Err(WorldError::Config(format!(
                "environment property `{}` already exists",
                prop.name
            )));
        }
        let stored = stored_property_energy(&prop);
        self.pay(Account::Pool, Account::Environment, stored)?;
        self.env.insert(prop.name.clone(), prop);
        Ok(())
    }

    /// Compile a program into the next catalog slot, with that slot's niche.
    pub fn add_kind(
        &mut self,
        name: impl Into<String>,
        source: &str,
        props: Vec<Property>,
        radius: u32,
    ) -> Result<KindId, WorldError> {
        let id = self.catalog.next_id();
        let names = self.env_names();
        let niche = niche_of(id, &self.catalog, names.iter().map(String::as_str))?;
        let kind = StructureKind::compile(id, name, source, props, radius, &self.config.cost_table, niche)?;
        self.by_kind.push(Vec::new());
        Ok(self.catalog.push(kind))
    }

    pub fn add_loop(&mut self, spec: LoopSpec) -> Result<LoopId, WorldError> {
        if spec.effector_rate < 0 {
            return Err(WorldError::Config("effector rate must be non-negative".into()));
        }
        if let Some(p) = &spec.policy {
            for a in &p.actions {
                if let crate::learning::Action::Assemble(k) | crate::learning::Action::DisassembleOldest(k) = a {
                    if self.catalog.get(*k).is_none() {
                        return Err(WorldError::UnknownKind(*k));
                    }
                }
            }
        }
        let id = LoopId(self.loops.len() as u32);
        self.ledger.open(Account::Reserve(id))?;
        let window = spec.windows.classify(-spec.setpoint);
        self.loops.push(EnerstaticLoop {
            id,
            name: spec.name,
            members: Vec::new(),
            setpoint: spec.setpoint,
            windows: spec.windows,
            effector_rate: spec.effector_rate,
            anchor: spec.anchor,
            policy: spec.policy,
            learning: spec.learning,
            adopt_inventions: spec.adopt_inventions,
            trace: ActionTrace::default(),
            window,
            alive: true,
            disabled: false,
            controller: spec.controller,
        });
        Ok(id)
    }

    /// Put an instance in the world, paid from the free pool.
    pub fn spawn(
        &mut self,
        kind: KindId,
        pos: Cell,
        loops: &[LoopId],
        alloc: Option<Energy>,
    ) -> Result<InstanceId, WorldError> {
        self.assemble_with(Payer::Pool, kind, Some(pos), loops, alloc)
    }

    /// Assemble one instance of `kind`, paid from the loop's energy, near its members.
    pub fn assemble(&mut self, loop_id: LoopId, kind: KindId) -> Result<InstanceId, WorldError> {
        self.assemble_with(Payer::Loop(loop_id), kind, None, &[loop_id], None)
    }

    pub fn add_channel(
        &mut self,
        origin: LoopId,
        target: LoopId,
        gain: Fraction,
        cap: Energy,
        carrier: Option<InstanceId>,
    ) -> Result<ChannelId, WorldError> {
        for l in [origin, target] {
            if self.loops.get(l.index()).is_none() {
                return Err(WorldError::UnknownLoop(l));
            }
        }
        if origin == target {
            return Err(WorldError::Config(format!("channel from {origin} to itself")));
        }
        if cap < 0 {
            return Err(WorldError::Config("channel cap must be non-negative".into()));
        }
        if let Some(c) = carrier {
            if !self.instances.contains_key(&c) {
                return Err(WorldError::UnknownInstance(c));
            }
        }
        let id = ChannelId(self.channels.len() as u32);
        self.channels.push(EnergyChannel {
            id,
            origin,
            target,
            gain,
            cap,
            carrier,
        });
        Ok(id)
    }

    fn check_target(&self, target: &Target) -> Result<(), WorldError> {
        let ok = match target {
            Target::Env(n) => self.env.contains_key(n),
            Target::LoopEnergy(id) => self.loops.get(id.index()).is_some(),
            Target::Instance(id, n) => self
                .instances
                .get(id)
                .is_some_and(|i| n == "alloc" || i.prop(n).is_some()),
        };
        if ok {
            Ok(())
        } else {
            Err(WorldError::Config(format!("unknown target `{target}`")))
        }
    }

    pub fn add_driver(&mut self, driver: Driver) -> Result<(), WorldError> {
        self.check_target(&driver.target)?;
        let index = self.drivers.len();
        self.drivers.push(DriverState::new(driver, self.config.seed, index));
        Ok(())
    }

    /// Schedule a perturbation. A zero delta is dropped: it would change nothing.
    pub fn schedule(&mut self, p: ScheduledPerturbation) -> Result<(), WorldError> {
        if p.target_is_position() {
            return Err(WorldError::Config(format!("cannot perturb position `{}`", p.target)));
        }
        self.check_target(&p.target)?;
        if p.delta == 0 {
            return Ok(());
        }
        if p.at < self.step {
            return Err(WorldError::Config(format!("step {} is already past", p.at)));
        }
        let pos = self.perturbations.partition_point(|q| q.at <= p.at);
        self.perturbations.insert(pos, p);
        Ok(())
    }

    pub fn set_eel(&mut self, eel: Eel) {
        self.eel = Some(eel);
    }

    pub fn set_alloc(&mut self, id: InstanceId, value: Energy) -> Result<(), WorldError> {
        if !self.instances.contains_key(&id) {
            return Err(WorldError::UnknownInstance(id));
        }
        self.alloc[id.index()] = value;
        Ok(())
    }

    /// Disable or re-enable a loop's causal power (effects, effector, policy).
    pub fn set_loop_disabled(&mut self, id: LoopId, disabled: bool) -> Result<(), WorldError> {
        let l = self.loops.get_mut(id.index()).ok_or(WorldError::UnknownLoop(id))?;
        l.disabled = disabled;
        Ok(())
    }

    /// Add an existing instance to another loop.
    pub fn join_loop(&mut self, id: InstanceId, loop_id: LoopId) -> Result<(), WorldError> {
        if !self.loops.get(loop_id.index()).is_some_and(|l| l.alive) {
            return Err(WorldError::UnknownLoop(loop_id));
        }
        let inst = self.instances.get_mut(&id).ok_or(WorldError::UnknownInstance(id))?;
        if !inst.loops.contains(&loop_id) {
            inst.loops.push(loop_id);
        }
        let loops = inst.loops.clone();
        self.loops[loop_id.index()].add_member(id);
        if loops.len() > 1 {
            self.emit(EventData::SharedMember { instance: id, loops });
        }
        Ok(())
    }

    // ---- energy plumbing ----

    fn emit(&mut self, data: EventData) {
        self.events.push(Event::new(self.step, data));
    }

    /// Ledger transfer, logged when transfer logging is on.
    fn pay(&mut self, from: Account, to: Account, amount: Energy) -> Result<(), LedgerError> {
        if amount == 0 {
            return Ok(());
        }
        self.ledger.transfer(from, to, amount)?;
        if self.config.log_transfers {
            self.emit(EventData::Transfer { from, to, amount });
        }
        Ok(())
    }

    /// Settle a signed change in stored energy between a payer and a store.
    fn settle(&mut self, payer: Account, store: Account, delta: Energy) -> Result<(), LedgerError> {
        if delta >= 0 {
            self.pay(payer, store, delta)
        } else {
            self.pay(store, payer, -delta)
        }
    }

    /// Spend energy as heat: back to the pool when closed, out of the world when open.
    fn dissipate(&mut self, from: Account, amount: Energy) -> Result<(), LedgerError> {
        match self.config.mode {
            Mode::Closed => self.pay(from, Account::Pool, amount),
            Mode::Open { .. } => {
                if amount > 0 {
                    self.ledger.outflow(from, amount)?;
                    self.outflow_this_step += amount;
                }
                Ok(())
            }
        }
    }

    /// Take `amount` from a loop: reserve first, then member buffers in ascending id.
    fn debit_loop(&mut self, id: LoopId, amount: Energy, to: Account) -> Result<(), WorldError> {
        let available = self.loop_energy(id);
        if available < amount {
            return Err(WorldError::InsufficientBalance {
                payer: id.to_string(),
                balance: available,
                amount,
            });
        }
        let mut left = amount;
        let reserve = Account::Reserve(id);
        let take = self.ledger.balance(reserve)?.min(left);
        self.pay(reserve, to, take)?;
        left -= take;
        let mut i = 0;
        while left > 0 {
            let m = self.loops[id.index()].members[i];
            let acct = Account::Buffer(m);
            let take = self.ledger.balance(acct)?.min(left);
            self.pay(acct, to, take)?;
            left -= take;
            i += 1;
        }
        Ok(())
    }

    fn kind(&self, id: KindId) -> Result<&StructureKind, WorldError> {
        self.catalog.get(id).ok_or(WorldError::UnknownKind(id))
    }

    fn random_cell_near(&mut self, center: Cell, radius: u32) -> Cell {
        let r = radius as i32;
        let dx = self.rng.random_range(-r..=r);
        let dy = self.rng.random_range(-r..=r);
        self.config.grid.clamp(Cell::new(center.x + dx, center.y + dy))
    }

    fn placement(&mut self, payer: Payer) -> Cell {
        match payer {
            Payer::Loop(l) => {
                let members = &self.loops[l.index()].members;
                if members.is_empty() {
                    return self.loops[l.index()].anchor;
                }
                let m = members[self.rng.random_range(0..members.len())];
                let inst = &self.instances[&m];
                let radius = self.catalog.get(inst.kind).map_or(0, |k| k.radius);
                let center = inst.pos;
                self.random_cell_near(center, radius)
            }
            Payer::Pool => {
                let g = self.config.grid;
                Cell::new(
                    self.rng.random_range(0..g.width.max(1) as i32),
                    self.rng.random_range(0..g.height.max(1) as i32),
                )
            }
        }
    }

    fn assemble_with(
        &mut self,
        payer: Payer,
        kind_id: KindId,
        pos: Option<Cell>,
        loops: &[LoopId],
        alloc: Option<Energy>,
    ) -> Result<InstanceId, WorldError> {
        let kind = self.kind(kind_id)?;
        let cost = kind.assembly_energy();
        let fed = kind.fed;
        let props = kind.props.clone();
        for l in loops {
            if !self.loops.get(l.index()).is_some_and(|l| l.alive) {
                return Err(WorldError::UnknownLoop(*l));
            }
        }
        match payer {
            Payer::Pool => {
                let balance = self.ledger.free_pool();
                if balance < cost {
                    return Err(WorldError::InsufficientBalance {
                        payer: Account::Pool.to_string(),
                        balance,
                        amount: cost,
                    });
                }
            }
            Payer::Loop(l) => {
                let balance = self.loop_energy(l);
                if balance < cost {
                    return Err(WorldError::InsufficientBalance {
                        payer: l.to_string(),
                        balance,
                        amount: cost,
                    });
                }
                let members = self.loops[l.index()].members.len().max(1) as Energy;
                let density = balance / members;
                if density < self.config.density_threshold {
                    return Err(WorldError::DensityTooLow {
                        loop_id: l,
                        density,
                        threshold: self.config.density_threshold,
                    });
                }
            }
        }
        let pos = match pos {
            Some(p) => self.config.grid.clamp(p),
            None => self.placement(payer),
        };
        let id = InstanceId(self.next_instance);
        self.next_instance += 1;
        self.ledger.open(Account::Trapped(id))?;
        self.ledger.open(Account::Buffer(id))?;
        let payer_account = match payer {
            Payer::Pool => {
                self.pay(Account::Pool, Account::Trapped(id), cost)?;
                Account::Pool
            }
            Payer::Loop(l) => {
                self.debit_loop(l, cost, Account::Trapped(id))?;
                Account::Reserve(l)
            }
        };
        if self.alloc.len() <= id.index() {
            self.alloc.resize(id.index() + 1, 0);
        }
        self.alloc[id.index()] = alloc.unwrap_or(fed);
        self.instances.insert(
            id,
            StructureInstance {
                id,
                kind: kind_id,
                pos,
                alive: true,
                props,
                intake: 0,
                born: self.step,
                loops: loops.to_vec(),
            },
        );
        self.by_kind[kind_id.index()].push(id);
        for l in loops {
            self.loops[l.index()].add_member(id);
        }
        self.emit(EventData::Assemble {
            instance: id,
            kind: kind_id,
            payer: payer_account,
            cost,
            pos,
            loop_id: loops.first().copied(),
        });
        if loops.len() > 1 {
            self.emit(EventData::SharedMember {
                instance: id,
                loops: loops.to_vec(),
            });
        }
        if self.catalog.record_discovery(kind_id, self.step) {
            self.emit(EventData::Discovery { kind: kind_id });
        }
        Ok(id)
    }

    fn detach(&mut self, id: InstanceId) -> Result<StructureInstance, WorldError> {
        let inst = self.instances.remove(&id).ok_or(WorldError::UnknownInstance(id))?;
        for l in &inst.loops {
            self.loops[l.index()].remove_member(id);
        }
        let list = &mut self.by_kind[inst.kind.index()];
        if let Ok(pos) = list.binary_search(&id) {
            list.remove(pos);
        }
        self.alloc[id.index()] = 0;
        Ok(inst)
    }

    /// Take an instance apart. Trapped energy (and any buffer) goes to its owner
    /// loop's reserve, or to the pool if it has none. Returns the trapped amount.
    pub fn disassemble(&mut self, id: InstanceId) -> Result<Energy, WorldError> {
        let owner = self
            .instances
            .get(&id)
            .ok_or(WorldError::UnknownInstance(id))?
            .loops
            .iter()
            .copied()
            .find(|l| self.loops[l.index()].alive);
        let to = owner.map_or(Account::Pool, Account::Reserve);
        let inst = self.detach(id)?;
        let trapped = self.ledger.balance(Account::Trapped(id))?;
        let buffer = self.ledger.balance(Account::Buffer(id))?;
        self.pay(Account::Trapped(id), to, trapped)?;
        self.pay(Account::Buffer(id), to, buffer)?;
        self.ledger.close(Account::Trapped(id))?;
        self.ledger.close(Account::Buffer(id))?;
        self.emit(EventData::Disassemble {
            instance: id,
            kind: inst.kind,
            refund: trapped,
            buffer,
            to,
        });
        Ok(trapped)
    }

    /// Death: everything the instance held returns to the pool.
    fn kill(&mut self, id: InstanceId, cause: DeathCause, intake: Option<Energy>) -> Result<(), WorldError> {
        let inst = self.detach(id)?;
        let trapped = self.ledger.balance(Account::Trapped(id))?;
        let buffer = self.ledger.balance(Account::Buffer(id))?;
        self.pay(Account::Trapped(id), Account::Pool, trapped)?;
        self.pay(Account::Buffer(id), Account::Pool, buffer)?;
        self.ledger.close(Account::Trapped(id))?;
        self.ledger.close(Account::Buffer(id))?;
        self.emit(EventData::Death {
            instance: id,
            kind: inst.kind,
            cause,
            intake,
            trapped,
            buffer,
        });
        Ok(())
    }

    /// Pairs that lie within each other's radius where at least one program
    /// affects the other's kind. Diagnostic only: membership is declared by
    /// the scenario and inherited at assembly.
    pub fn relationships(&self) -> Vec<(InstanceId, InstanceId)> {
        let affects = |a: &StructureInstance, b: &StructureInstance| {
            self.catalog.get(a.kind).is_some_and(|k| {
                k.program
                    .affected_refs()
                    .iter()
                    .any(|(r, _)| matches!(r, PropRef::Kind(t, _) if *t == b.kind))
            })
        };
        let radius = |i: &StructureInstance| self.catalog.get(i.kind).map_or(0, |k| k.radius);
        let all: Vec<&StructureInstance> = self.instances.values().collect();
        let mut out = Vec::new();
        for (i, a) in all.iter().enumerate() {
            for b in &all[i + 1..] {
                let d = a.pos.distance(b.pos);
                if d <= radius(a).min(radius(b)) && (affects(a, b) || affects(b, a)) {
                    out.push((a.id, b.id));
                }
            }
        }
        out
    }

    // ---- state digest ----

    /// A JSON document of the full simulation state.
    pub fn snapshot(&self) -> serde_json::Value {
        #[derive(Serialize)]
        struct KindDigest<'a> {
            id: KindId,
            name: &'a str,
            source: &'a str,
            fed: Energy,
            fel: Energy,
            radius: u32,
            props: &'a [Property],
            discovered: Option<u64>,
        }
        #[derive(Serialize)]
        struct Snapshot<'a> {
            step: u64,
            seed: u64,
            ledger: &'a Ledger,
            catalog: Vec<KindDigest<'a>>,
            instances: Vec<&'a StructureInstance>,
            alloc: Vec<(u32, Energy)>,
            loops: &'a [EnerstaticLoop],
            channels: &'a [EnergyChannel],
            env: &'a BTreeMap<String, Property>,
            rng: String,
            drivers: Vec<String>,
            eel: Option<String>,
            pending_perturbations: &'a [ScheduledPerturbation],
        }
        let snap = Snapshot {
            step: self.step,
            seed: self.config.seed,
            ledger: &self.ledger,
            catalog: self
                .catalog
                .kinds()
                .iter()
                .map(|k| KindDigest {
                    id: k.id,
                    name: &k.name,
                    source: &k.source,
                    fed: k.fed,
                    fel: k.fel,
                    radius: k.radius,
                    props: &k.props,
                    discovered: self.catalog.discovery_step(k.id),
                })
                .collect(),
            instances: self.instances.values().collect(),
            alloc: self.instances.keys().map(|id| (id.0, self.alloc_of(*id))).collect(),
            loops: &self.loops,
            channels: &self.channels,
            env: &self.env,
            rng: self.rng.get_word_pos().to_string(),
            drivers: self.drivers.iter().map(|d| d.word_pos().to_string()).collect(),
            eel: self.eel.as_ref().map(|e| e.rng_word_pos().to_string()),
            pending_perturbations: &self.perturbations,
        };
        serde_json::to_value(&snap).expect("snapshot serializes")
    }

    /// SHA-256 of the snapshot, hex encoded.
    pub fn checksum(&self) -> String {
        let bytes = serde_json::to_vec(&self.snapshot()).expect("snapshot serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

impl ScheduledPerturbation {
    fn target_is_position(&self) -> bool {
        matches!(&self.target, Target::Instance(_, n) if POSITION_PROPS.contains(&n.as_str()))
    }
}

#[cfg(test)]
mod tests;
