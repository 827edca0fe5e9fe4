//! The synchronous timestep.
//!
//! Phases, each visiting instances, loops and channels in ascending id:
//! 1. perturbations, drivers, inflow and allocation;
//! 2. causal execution against the state at the end of phase 1, billing FED;
//! 3. write application, loop effectors, channels;
//! 4. deaths from phase 1;
//! 5. loop windows, learning, one policy action per loop, invention;
//! 6. conservation audit.

use serde::{Deserialize, Serialize};

use super::view::{lookup, ExecView, Resolution};
use super::{
    channel_flow, DeathCause, DriveMode, EventData, Mode, Payer, ScheduledPerturbation, Target, Window, World,
    WorldError, ALLOC_SELF,
};
use crate::dsl::{execute_with_demand, EffectSet, PropRef, Write};
use crate::energy::{mass_of, move_cost, stored_delta, stored_property_energy, Account, Energy};
use crate::fraction::Fraction;
use crate::ids::{InstanceId, LoopId};
use crate::learning::{select_action, Action, Outcome, TraceEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationOutcome {
    /// Intake exactly FED.
    Persisted,
    /// FED < intake ≤ FEL; the surplus stays in the buffer.
    Surplus(Energy),
    Starved,
    OverLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocation {
    pub instance: InstanceId,
    pub requested: Energy,
    pub intake: Energy,
    pub outcome: AllocationOutcome,
}

/// Move each instance's intake from the pool into its buffer, in ascending id.
///
/// `intake = min(max(alloc, 0), pool)`. Instances whose intake falls outside
/// `[fed, fel]` take nothing and are reported for death.
pub fn allocate(world: &mut World) -> Result<Vec<Allocation>, WorldError> {
    let ids: Vec<InstanceId> = world.instances.keys().copied().collect();
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let kind = world.instances[&id].kind;
        let (fed, fel) = {
            let k = world.kind(kind)?;
            (k.fed, k.fel)
        };
        let requested = world.alloc_of(id);
        let intake = requested.max(0).min(world.ledger.free_pool());
        world.instances.get_mut(&id).expect("live").intake = intake;
        let outcome = if intake < fed {
            AllocationOutcome::Starved
        } else if intake > fel {
            AllocationOutcome::OverLimit
        } else {
            world.pay(Account::Pool, Account::Buffer(id), intake)?;
            if intake == fed {
                AllocationOutcome::Persisted
            } else {
                AllocationOutcome::Surplus(intake - fed)
            }
        };
        out.push(Allocation {
            instance: id,
            requested,
            intake,
            outcome,
        });
    }
    Ok(out)
}

/// Advance the world by one step and return the events it produced (plus any
/// emitted by setup calls since the last drain).
pub fn step_world(world: &mut World) -> Result<Vec<super::Event>, WorldError> {
    world.advance()?;
    Ok(world.drain_events())
}

struct Executed {
    id: InstanceId,
    effects: EffectSet,
    resolved: Resolution,
}

impl World {
    /// Run one step. Events accumulate until [`World::drain_events`].
    pub fn advance(&mut self) -> Result<(), WorldError> {
        if let Some(limit) = self.config.step_limit {
            if self.step >= limit {
                return Err(WorldError::StepLimitReached(limit));
            }
        }
        if !self.started {
            self.started = true;
            for i in 0..self.loops.len() {
                let e = self.loop_energy(self.loops[i].id);
                let w = self.loops[i].classify(e);
                self.loops[i].window = w;
            }
        }
        self.outflow_this_step = 0;

        // 1
        self.apply_scheduled()?;
        self.apply_drivers()?;
        if let Mode::Open { inflow } = &self.config.mode {
            let amount = inflow.value(self.step).max(0);
            if amount > 0 {
                self.ledger.inflow(Account::Pool, amount)?;
                self.emit(EventData::Inflow { amount });
            }
        }
        let allocations = allocate(self)?;
        let doomed: Vec<(InstanceId, DeathCause, Energy)> = allocations
            .iter()
            .filter_map(|a| match a.outcome {
                AllocationOutcome::Starved => Some((a.instance, DeathCause::Starved, a.intake)),
                AllocationOutcome::OverLimit => Some((a.instance, DeathCause::OverLimit, a.intake)),
                _ => None,
            })
            .collect();
        let doomed_ids: Vec<InstanceId> = doomed.iter().map(|d| d.0).collect();

        // 2
        let executed = self.execute_all(&doomed_ids)?;
        for ex in &executed {
            self.dissipate(Account::Buffer(ex.id), ex.effects.dissipated)?;
            if ex.effects.div_by_zero > 0 {
                self.emit(EventData::DivZero {
                    instance: ex.id,
                    count: ex.effects.div_by_zero,
                });
            }
        }

        // 3
        for ex in executed {
            if self.suppressed(ex.id) {
                continue;
            }
            for w in ex.effects.writes {
                self.apply_write(ex.id, &ex.resolved, w)?;
            }
        }
        self.run_effectors()?;
        self.run_channels()?;

        // 4
        for (id, cause, intake) in doomed {
            if self.instances.contains_key(&id) {
                self.kill(id, cause, Some(intake))?;
            }
        }

        // 5
        for i in 0..self.loops.len() {
            self.update_loop(LoopId(i as u32))?;
        }
        self.run_invention()?;

        // 6
        if self.outflow_this_step > 0 {
            let amount = self.outflow_this_step;
            self.emit(EventData::Outflow { amount });
        }
        self.audit()?;
        self.step += 1;
        Ok(())
    }

    fn audit(&self) -> Result<(), WorldError> {
        let env_stored: Energy = self.env.values().map(stored_property_energy).sum();
        let closed_total_moved =
            matches!(self.config.mode, Mode::Closed) && self.ledger.total() != self.config.total_energy;
        let violation = self.ledger.audit().err();
        if violation.is_some() || closed_total_moved || env_stored != self.ledger.environment() {
            return Err(WorldError::ConservationViolation {
                step: self.step,
                expected: self.config.total_energy,
                found: self.ledger.accounted(),
                dump: serde_json::to_string_pretty(&self.snapshot()).unwrap_or_default(),
            });
        }
        Ok(())
    }

    fn suppressed(&self, id: InstanceId) -> bool {
        self.instances
            .get(&id)
            .is_some_and(|i| i.loops.iter().any(|l| self.loops[l.index()].disabled))
    }

    fn execute_all(&self, doomed: &[InstanceId]) -> Result<Vec<Executed>, WorldError> {
        let mut out = Vec::with_capacity(self.instances.len());
        for inst in self.instances.values() {
            if doomed.binary_search(&inst.id).is_ok() {
                continue;
            }
            let kind = self.kind(inst.kind)?;
            let resolved = self.resolve(inst, kind, doomed);
            let view = ExecView {
                world: self,
                inst,
                kind,
                resolved: &resolved,
            };
            let budget = self.ledger.balance(Account::Buffer(inst.id))?;
            let effects =
                execute_with_demand(&kind.program, &view, budget, kind.fed).map_err(|source| WorldError::Exec {
                    instance: inst.id,
                    source,
                })?;
            out.push(Executed {
                id: inst.id,
                effects,
                resolved,
            });
        }
        Ok(out)
    }

    fn reject(&mut self, instance: Option<InstanceId>, target: String, value: i64, reason: impl ToString) {
        self.emit(EventData::WriteRejected {
            instance,
            target,
            value,
            reason: reason.to_string(),
        });
    }

    fn apply_write(
        &mut self,
        id: InstanceId,
        resolved: &[(crate::ids::KindId, Option<InstanceId>)],
        w: Write,
    ) -> Result<(), WorldError> {
        let Write { target, value } = w;
        match &target {
            PropRef::Env(n) if n == ALLOC_SELF => {
                self.alloc[id.index()] = value;
            }
            PropRef::Env(n) => {
                let Some(prop) = self.env.get(n) else {
                    self.reject(Some(id), target.to_string(), value, "unknown property");
                    return Ok(());
                };
                let delta = stored_delta(prop, value);
                match self.settle(Account::Buffer(id), Account::Environment, delta) {
                    Ok(()) => self.env.get_mut(n).expect("checked").value = value,
                    Err(e) => self.reject(Some(id), target.to_string(), value, e),
                }
            }
            PropRef::Own(n) if n == "x" || n == "y" => {
                let inst = &self.instances[&id];
                let mut next = inst.pos;
                if n == "x" {
                    next.x = value.clamp(i32::MIN as i64, i32::MAX as i64) as i32;
                } else {
                    next.y = value.clamp(i32::MIN as i64, i32::MAX as i64) as i32;
                }
                let next = self.config.grid.clamp(next);
                let distance = inst.pos.distance(next) as i64;
                let mass = mass_of(self.kind(inst.kind)?.assembly_cost, self.config.c_squared);
                let cost = move_cost(mass, distance);
                match self.dissipate(Account::Buffer(id), cost) {
                    Ok(()) => self.instances.get_mut(&id).expect("live").pos = next,
                    Err(e) => self.reject(Some(id), target.to_string(), value, e),
                }
            }
            PropRef::Own(n) => {
                let Some(prop) = self.instances[&id].prop(n) else {
                    self.reject(Some(id), target.to_string(), value, "unknown property");
                    return Ok(());
                };
                let delta = stored_delta(prop, value);
                match self.settle(Account::Buffer(id), Account::Trapped(id), delta) {
                    Ok(()) => {
                        self.instances
                            .get_mut(&id)
                            .and_then(|i| i.prop_mut(n))
                            .expect("checked")
                            .value = value
                    }
                    Err(e) => self.reject(Some(id), target.to_string(), value, e),
                }
            }
            PropRef::Kind(k, n) => {
                let Some(t) = lookup(resolved, *k).filter(|t| self.instances.contains_key(t)) else {
                    self.reject(Some(id), target.to_string(), value, "no instance of the kind in range");
                    return Ok(());
                };
                let Some(prop) = self.instances[&t].prop(n) else {
                    self.reject(Some(id), target.to_string(), value, "unknown property");
                    return Ok(());
                };
                let delta = stored_delta(prop, value);
                match self.settle(Account::Buffer(id), Account::Trapped(t), delta) {
                    Ok(()) => {
                        self.instances
                            .get_mut(&t)
                            .and_then(|i| i.prop_mut(n))
                            .expect("checked")
                            .value = value;
                        let writer_kind = self.instances[&id].kind;
                        self.emit(EventData::Affect {
                            instance: id,
                            writer_kind,
                            target_instance: t,
                            target_kind: *k,
                            prop: n.clone(),
                            value,
                        });
                    }
                    Err(e) => self.reject(Some(id), target.to_string(), value, e),
                }
            }
        }
        Ok(())
    }

    /// Each active loop exchanges up to its effector rate with the pool, toward its setpoint.
    fn run_effectors(&mut self) -> Result<(), WorldError> {
        for i in 0..self.loops.len() {
            let l = &self.loops[i];
            if !l.alive || l.disabled || l.effector_rate == 0 {
                continue;
            }
            let (id, rate, setpoint) = (l.id, l.effector_rate, l.setpoint);
            let deviation = self.loop_energy(id) - setpoint;
            let amount = if deviation > 0 {
                let a = deviation.min(rate);
                self.debit_loop(id, a, Account::Pool)?;
                -a
            } else if deviation < 0 {
                let a = (-deviation).min(rate).min(self.ledger.free_pool());
                self.pay(Account::Pool, Account::Reserve(id), a)?;
                a
            } else {
                0
            };
            if amount != 0 {
                self.emit(EventData::Effector { loop_id: id, amount });
            }
        }
        Ok(())
    }

    fn run_channels(&mut self) -> Result<(), WorldError> {
        for i in 0..self.channels.len() {
            let ch = self.channels[i].clone();
            let (o, t) = (&self.loops[ch.origin.index()], &self.loops[ch.target.index()]);
            if !o.alive || !t.alive {
                continue;
            }
            if let Some(c) = ch.carrier {
                if !self.instances.contains_key(&c) || self.suppressed(c) {
                    continue;
                }
            }
            let origin_setpoint = o.setpoint;
            let eo = self.loop_energy(ch.origin);
            let et = self.loop_energy(ch.target);
            let amount =
                self.apply_channel_flow(ch.gain, ch.cap, eo - origin_setpoint, eo, et, ch.origin, ch.target)?;
            if amount != 0 {
                self.emit(EventData::ChannelFlow {
                    channel: ch.id,
                    origin: ch.origin,
                    target: ch.target,
                    amount,
                });
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn apply_channel_flow(
        &mut self,
        gain: Fraction,
        cap: Energy,
        deviation: Energy,
        eo: Energy,
        et: Energy,
        origin: LoopId,
        target: LoopId,
    ) -> Result<Energy, WorldError> {
        let t = channel_flow(gain, cap, deviation, eo, et);
        if t > 0 {
            self.debit_loop(origin, t, Account::Reserve(target))?;
        } else if t < 0 {
            self.debit_loop(target, -t, Account::Reserve(origin))?;
        }
        Ok(t)
    }

    fn update_loop(&mut self, id: LoopId) -> Result<(), WorldError> {
        if !self.loops[id.index()].alive {
            return Ok(());
        }
        let energy = self.loop_energy(id);
        let l = &self.loops[id.index()];
        let (old, new) = (l.window, l.classify(energy));
        if old != new {
            self.emit(EventData::WindowTransition {
                loop_id: id,
                from: old,
                to: new,
                energy,
            });
            if old == Window::Action {
                let outcome = match new {
                    Window::Stasis => Some(Outcome::ReachedStasis),
                    Window::Cap => Some(Outcome::ReachedCap),
                    _ => None,
                };
                let l = &mut self.loops[id.index()];
                if let (Some(outcome), Some(policy), true) = (outcome, &l.policy, l.learning) {
                    if !l.trace.entries.is_empty() {
                        let updated = policy.credit_update(&l.trace, outcome);
                        let credited = l.trace.entries.len();
                        let counts = updated.credit_counts();
                        let probabilities = updated.probabilities();
                        l.policy = Some(updated);
                        self.emit(EventData::PolicyUpdate {
                            loop_id: id,
                            outcome,
                            credited,
                            counts,
                            probabilities,
                        });
                    }
                }
                self.loops[id.index()].trace.clear();
            }
            if new == Window::Action {
                self.loops[id.index()].trace.window_entered_at = Some(self.step);
            }
            self.loops[id.index()].window = new;
        }
        if new == Window::Fatal {
            return self.dissolve(id, energy);
        }
        let l = &self.loops[id.index()];
        if l.disabled {
            return Ok(());
        }
        let Some(policy) = &l.policy else {
            return Ok(());
        };
        let Some(index) = select_action(policy, new, &mut self.rng).map_err(|e| WorldError::Config(e.to_string()))?
        else {
            return Ok(());
        };
        let action = policy.actions[index];
        let (instance, failure) = match action {
            Action::Assemble(k) => match self.assemble_with(Payer::Loop(id), k, None, &[id], None) {
                Ok(i) => (Some(i), None),
                Err(e) => (None, Some(e.to_string())),
            },
            Action::DisassembleOldest(k) => {
                let oldest = self.loops[id.index()]
                    .members
                    .iter()
                    .copied()
                    .find(|m| self.instances[m].kind == k);
                match oldest {
                    Some(m) => {
                        self.disassemble(m)?;
                        (Some(m), None)
                    }
                    None => (None, Some(format!("no member of kind {k}"))),
                }
            }
            Action::NoOp => (None, None),
        };
        self.emit(EventData::PolicyAction {
            loop_id: id,
            index,
            action,
            window: new,
            energy,
            instance,
            failure,
        });
        if new == Window::Action {
            self.loops[id.index()].trace.entries.push(TraceEntry {
                step: self.step,
                action: index,
                energy,
            });
        }
        Ok(())
    }

    /// Past the CAP window: members die, the reserve returns to the pool, the policy is dropped.
    fn dissolve(&mut self, id: LoopId, energy: Energy) -> Result<(), WorldError> {
        let members = self.loops[id.index()].members.clone();
        for m in members {
            if self.instances.contains_key(&m) {
                self.kill(m, DeathCause::LoopDissolved, None)?;
            }
        }
        let reserve = self.ledger.balance(Account::Reserve(id))?;
        self.pay(Account::Reserve(id), Account::Pool, reserve)?;
        self.ledger.close(Account::Reserve(id))?;
        let l = &mut self.loops[id.index()];
        l.alive = false;
        l.policy = None;
        l.trace.clear();
        self.emit(EventData::LoopDissolved {
            loop_id: id,
            energy,
            reserve,
        });
        Ok(())
    }

    fn run_invention(&mut self) -> Result<(), WorldError> {
        let Some(eel) = self.eel.as_mut() else {
            return Ok(());
        };
        let epoch = eel.config.epoch;
        if epoch == 0 || !(self.step + 1).is_multiple_of(epoch) {
            return Ok(());
        }
        eel.begin_epoch();
        let budget = eel.config.invention_budget;
        let spawn = eel.config.spawn;
        let names = self.env_names();
        for _ in 0..budget {
            let eel = self.eel.as_mut().expect("present");
            let invented = match eel.invent(&mut self.catalog, &names, &self.config.cost_table) {
                Ok(i) => i,
                Err(crate::eel::EelError::GenerationExhausted { attempts, last }) => {
                    self.emit(EventData::InventionFailed {
                        kind: None,
                        reason: format!("no admissible program in {attempts} attempts: {last}"),
                    });
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            self.by_kind.push(Vec::new());
            let k = &self.catalog.kinds()[invented.kind.index()];
            let data = EventData::Invention {
                kind: k.id,
                name: k.name.clone(),
                fed: k.fed,
                fel: k.fel,
                source: k.source.clone(),
            };
            self.emit(data);
            for _ in 0..spawn {
                if let Err(e) = self.assemble_with(Payer::Pool, invented.kind, None, &[], None) {
                    self.emit(EventData::InventionFailed {
                        kind: Some(invented.kind),
                        reason: e.to_string(),
                    });
                }
            }
            for l in self.loops.iter_mut().filter(|l| l.alive && l.adopt_inventions) {
                if let Some(p) = l.policy.as_mut() {
                    p.push_action(Action::Assemble(invented.kind), Fraction::integer(1))
                        .map_err(|e| WorldError::Config(e.to_string()))?;
                }
            }
        }
        Ok(())
    }

    fn apply_scheduled(&mut self) -> Result<(), WorldError> {
        let due = self.perturbations.partition_point(|p| p.at <= self.step);
        let now: Vec<ScheduledPerturbation> = self.perturbations.drain(..due).collect();
        for p in now {
            if p.at < self.step {
                continue;
            }
            match self.shift_target(&p.target, p.delta) {
                Ok(energy) => self.emit(EventData::Perturbation {
                    target: p.target,
                    delta: p.delta,
                    energy,
                }),
                Err(reason) => self.reject(None, p.target.to_string(), p.delta, reason),
            }
        }
        Ok(())
    }

    fn apply_drivers(&mut self) -> Result<(), WorldError> {
        for i in 0..self.drivers.len() {
            let v = self.drivers[i].sample(self.step);
            let target = self.drivers[i].driver.target.clone();
            let delta = match self.drivers[i].driver.mode {
                DriveMode::Add => v,
                DriveMode::Set => match self.target_value(&target) {
                    Some(cur) => v.saturating_sub(cur),
                    None => {
                        self.reject(None, target.to_string(), v, "target no longer exists");
                        continue;
                    }
                },
            };
            if delta == 0 {
                continue;
            }
            if let Err(reason) = self.shift_target(&target, delta) {
                self.reject(None, target.to_string(), v, reason);
            }
        }
        Ok(())
    }

    /// Apply a perturbation now, outside the schedule. Returns the energy taken from the pool.
    pub fn perturb(&mut self, target: &Target, delta: i64) -> Result<Energy, WorldError> {
        self.check_target(target)?;
        if delta == 0 {
            return Ok(0);
        }
        let energy = self.shift_target(target, delta).map_err(WorldError::Config)?;
        self.emit(EventData::Perturbation {
            target: target.clone(),
            delta,
            energy,
        });
        Ok(energy)
    }

    /// Move a target by `delta`, paying (or being repaid) from the pool.
    /// Returns the energy taken from the pool; nothing changes on error.
    fn shift_target(&mut self, target: &Target, delta: i64) -> Result<Energy, String> {
        match target {
            Target::Env(n) => {
                let prop = self.env.get(n).ok_or("unknown property")?;
                let value = prop.value.saturating_add(delta);
                let energy = stored_delta(prop, value);
                self.settle(Account::Pool, Account::Environment, energy)
                    .map_err(|e| e.to_string())?;
                self.env.get_mut(n).expect("checked").value = value;
                Ok(energy)
            }
            Target::LoopEnergy(id) => {
                if !self.loops.get(id.index()).is_some_and(|l| l.alive) {
                    return Err(format!("{id} is dissolved"));
                }
                if delta > 0 {
                    self.pay(Account::Pool, Account::Reserve(*id), delta)
                        .map_err(|e| e.to_string())?;
                } else {
                    self.debit_loop(*id, -delta, Account::Pool).map_err(|e| e.to_string())?;
                }
                Ok(delta)
            }
            Target::Instance(id, n) => {
                let inst = self.instances.get(id).ok_or_else(|| format!("{id} is not alive"))?;
                if n == "alloc" {
                    let a = &mut self.alloc[id.index()];
                    *a = a.saturating_add(delta);
                    return Ok(0);
                }
                let prop = inst.prop(n).ok_or("unknown property")?;
                let value = prop.value.saturating_add(delta);
                let energy = stored_delta(prop, value);
                self.settle(Account::Pool, Account::Trapped(*id), energy)
                    .map_err(|e| e.to_string())?;
                self.instances
                    .get_mut(id)
                    .and_then(|i| i.prop_mut(n))
                    .expect("checked")
                    .value = value;
                Ok(energy)
            }
        }
    }
}
