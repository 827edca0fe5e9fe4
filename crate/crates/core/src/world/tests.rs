use super::*;
use crate::energy::PerturbationModel;
use crate::learning::{Action, Outcome};

const S0: &str = "affect(env.alloc_self, sense(env.alloc_self))";
/// Assembly cost 13.
const S13: &str = "affect(env.alloc_self, sense(env.alloc_self) + 1)";

fn world(total: Energy) -> World {
    World::new(WorldConfig::new(1, total))
}

fn windows() -> Windows {
    Windows::new(5, 20, 40).unwrap()
}

fn deaths(events: &[Event]) -> Vec<DeathCause> {
    events
        .iter()
        .filter_map(|e| match &e.data {
            EventData::Death { cause, .. } => Some(*cause),
            _ => None,
        })
        .collect()
}

#[test]
fn empty_world_only_advances() {
    let mut w = world(1_000);
    let before = w.checksum();
    let events = step_world(&mut w).unwrap();
    assert!(events.is_empty());
    assert_eq!(w.step(), 1);
    assert_eq!(w.ledger().free_pool(), 1_000);
    assert_ne!(before, w.checksum());
}

#[test]
fn exact_fed_persists_and_returns_to_pool() {
    let mut w = world(1_000);
    let k = w.add_kind("s0", S0, vec![], 1).unwrap();
    let fed = w.catalog().get(k).unwrap().fed;
    let id = w.spawn(k, Cell::new(0, 0), &[], Some(fed)).unwrap();
    let pool = w.ledger().free_pool();
    for _ in 0..5 {
        let ev = step_world(&mut w).unwrap();
        assert!(deaths(&ev).is_empty());
    }
    assert!(w.instance(id).is_some());
    assert_eq!(w.ledger().free_pool(), pool);
    assert_eq!(w.ledger().balance(Account::Buffer(id)).unwrap(), 0);
    assert_eq!(w.ledger().total(), 1_000);
}

#[test]
fn starving_structure_dies_and_refunds() {
    let mut w = world(1_000);
    let k = w.add_kind("s0", S0, vec![], 1).unwrap();
    let fed = w.catalog().get(k).unwrap().fed;
    let id = w.spawn(k, Cell::new(0, 0), &[], Some(fed - 1)).unwrap();
    let ev = step_world(&mut w).unwrap();
    assert_eq!(deaths(&ev), vec![DeathCause::Starved]);
    assert!(w.instance(id).is_none());
    assert_eq!(w.ledger().free_pool(), 1_000);
}

#[test]
fn surplus_is_buffered_and_overlimit_kills() {
    let mut w = world(1_000);
    let k = w.add_kind("s0", S0, vec![], 1).unwrap();
    let (fed, fel) = {
        let kind = w.catalog().get(k).unwrap();
        (kind.fed, kind.fel)
    };
    let a = w.spawn(k, Cell::new(0, 0), &[], Some(fed + 5)).unwrap();
    let b = w.spawn(k, Cell::new(5, 5), &[], Some(fel + 1)).unwrap();
    let ev = step_world(&mut w).unwrap();
    assert_eq!(w.ledger().balance(Account::Buffer(a)).unwrap(), 5);
    assert_eq!(deaths(&ev), vec![DeathCause::OverLimit]);
    assert!(w.instance(b).is_none());
    w.ledger().audit().unwrap();
}

#[test]
fn assembly_from_loop_and_discovery() {
    let mut w = world(1_000);
    let k = w.add_kind("s0", S13, vec![], 1).unwrap();
    let l = w.add_loop(LoopSpec::new("l", 0, windows())).unwrap();
    w.perturb(&Target::LoopEnergy(l), 30).unwrap();
    w.drain_events();
    let i1 = w.assemble(l, k).unwrap();
    assert_eq!(w.ledger().balance(Account::Trapped(i1)).unwrap(), 13);
    assert_eq!(w.loop_energy(l), 17);
    let first: Vec<&str> = w.drain_events().iter().map(|e| e.data.name()).collect();
    assert_eq!(first, vec!["assemble", "discovery"]);
    w.assemble(l, k).unwrap();
    let second: Vec<&str> = w.drain_events().iter().map(|e| e.data.name()).collect();
    assert_eq!(second, vec!["assemble"]);
    match w.assemble(l, k) {
        Err(WorldError::InsufficientBalance {
            balance: 4, amount: 13, ..
        }) => {}
        other => panic!("{other:?}"),
    }
    assert!(matches!(w.assemble(l, KindId(7)), Err(WorldError::UnknownKind(_))));
}

#[test]
fn density_rule_blocks_assembly() {
    let mut cfg = WorldConfig::new(1, 1_000);
    cfg.density_threshold = 50;
    let mut w = World::new(cfg);
    let k = w.add_kind("s0", S0, vec![], 1).unwrap();
    let l = w.add_loop(LoopSpec::new("l", 0, windows())).unwrap();
    w.perturb(&Target::LoopEnergy(l), 30).unwrap();
    assert!(matches!(
        w.assemble(l, k),
        Err(WorldError::DensityTooLow { density: 30, .. })
    ));
}

#[test]
fn disassembly_refunds_trapped_including_moved_props() {
    let mut w = world(1_000);
    let k = w
        .add_kind("s0", S13, vec![Property::new("p", 0, PerturbationModel::linear(1))], 1)
        .unwrap();
    let l = w.add_loop(LoopSpec::new("l", 0, windows())).unwrap();
    let a = w.spawn(k, Cell::new(1, 1), &[l], None).unwrap();
    assert_eq!(w.disassemble(a).unwrap(), 13);
    assert_eq!(w.ledger().balance(Account::Reserve(l)).unwrap(), 13);
    let b = w.spawn(k, Cell::new(1, 1), &[l], None).unwrap();
    assert_eq!(w.perturb(&Target::Instance(b, "p".into()), 4).unwrap(), 4);
    assert_eq!(w.disassemble(b).unwrap(), 17);
    assert!(matches!(w.disassemble(b), Err(WorldError::UnknownInstance(_))));
    w.ledger().audit().unwrap();
}

#[test]
fn channel_moves_between_loops() {
    let mut w = world(1_000);
    let a = w
        .add_loop(LoopSpec::new("a", 0, Windows::new(50, 100, 200).unwrap()))
        .unwrap();
    let b = w
        .add_loop(LoopSpec::new("b", 0, Windows::new(50, 100, 200).unwrap()))
        .unwrap();
    w.perturb(&Target::LoopEnergy(a), 10).unwrap();
    w.add_channel(a, b, Fraction::new(1, 2), 4, None).unwrap();
    let ev = step_world(&mut w).unwrap();
    assert_eq!(w.loop_energy(a), 6);
    assert_eq!(w.loop_energy(b), 4);
    let flows: Vec<Energy> = ev
        .iter()
        .filter_map(|e| match e.data {
            EventData::ChannelFlow { amount, .. } => Some(amount),
            _ => None,
        })
        .collect();
    assert_eq!(flows, vec![4]);
}

#[test]
fn minimal_loop_reaches_stasis() {
    let mut w = world(10_000);
    let k = w.add_kind("s0", S0, vec![], 1).unwrap();
    let mut spec = LoopSpec::new("minimal", 0, Windows::new(0, 100, 200).unwrap());
    spec.effector_rate = 2;
    let l = w.add_loop(spec).unwrap();
    w.spawn(k, Cell::new(0, 0), &[l], None).unwrap();
    w.schedule(ScheduledPerturbation {
        at: 0,
        target: Target::LoopEnergy(l),
        delta: 50,
    })
    .unwrap();
    let mut stasis_at = None;
    for _ in 0..40 {
        let ev = step_world(&mut w).unwrap();
        for e in &ev {
            if let EventData::WindowTransition { to: Window::Stasis, .. } = e.data {
                stasis_at.get_or_insert(e.step);
            }
        }
    }
    // Steps 0..=24: 25 steps of 2 µE each.
    assert_eq!(stasis_at, Some(24));
    assert_eq!(w.loop_energy(l), 0);
}

#[test]
fn fatal_window_dissolves_loop() {
    let mut w = world(1_000);
    let k = w.add_kind("s0", S0, vec![], 1).unwrap();
    let l = w.add_loop(LoopSpec::new("l", 0, windows())).unwrap();
    w.spawn(k, Cell::new(0, 0), &[l], None).unwrap();
    w.schedule(ScheduledPerturbation {
        at: 0,
        target: Target::LoopEnergy(l),
        delta: 41,
    })
    .unwrap();
    let ev = step_world(&mut w).unwrap();
    assert!(ev.iter().any(|e| matches!(e.data, EventData::LoopDissolved { .. })));
    assert_eq!(deaths(&ev), vec![DeathCause::LoopDissolved]);
    assert!(!w.get_loop(l).unwrap().alive);
    assert_eq!(w.ledger().free_pool(), 1_000);
}

#[test]
fn writes_pay_perturbation_energy() {
    let mut w = world(1_000);
    w.add_env_prop(Property::new("heat", 0, PerturbationModel::linear(2)))
        .unwrap();
    let k = w
        .add_kind(
            "heater",
            "affect(env.alloc_self, sense(env.alloc_self)); affect(env.heat, 3)",
            vec![],
            1,
        )
        .unwrap();
    let fed = w.catalog().get(k).unwrap().fed;
    let id = w.spawn(k, Cell::new(0, 0), &[], Some(fed + 6)).unwrap();
    step_world(&mut w).unwrap();
    assert_eq!(w.env_value("heat"), Some(3));
    assert_eq!(w.ledger().environment(), 6);
    assert_eq!(w.ledger().balance(Account::Buffer(id)).unwrap(), 0);
    // Not enough buffer the second time: the write is rejected, nothing moves.
    w.drain_events();
    w.set_alloc(id, fed).unwrap();
    w.env.get_mut("heat").unwrap();
    step_world(&mut w).unwrap();
    assert_eq!(w.ledger().environment(), 6);
}

#[test]
fn movement_costs_work() {
    let mut w = world(1_000);
    let k = w
        .add_kind(
            "walker",
            "affect(env.alloc_self, sense(env.alloc_self)); affect(self.x, sense(self.x) + 1)",
            vec![],
            1,
        )
        .unwrap();
    let fed = w.catalog().get(k).unwrap().fed;
    let mass = mass_of_kind(&w, k);
    let cost = crate::energy::move_cost(mass, 1);
    let id = w.spawn(k, Cell::new(0, 0), &[], Some(fed + cost)).unwrap();
    step_world(&mut w).unwrap();
    assert_eq!(w.instance(id).unwrap().pos, Cell::new(1, 0));
    assert_eq!(w.ledger().free_pool() + w.ledger().trapped_sum(), 1_000);
}

fn mass_of_kind(w: &World, k: KindId) -> Energy {
    crate::energy::mass_of(w.catalog().get(k).unwrap().assembly_cost, w.config().c_squared)
}

#[test]
fn cross_structure_writes_resolve_by_distance() {
    let mut w = world(10_000);
    let a = w
        .add_kind("a", S0, vec![Property::new("p", 0, PerturbationModel::FREE)], 1)
        .unwrap();
    let b = w
        .add_kind(
            "b",
            "affect(env.alloc_self, sense(env.alloc_self)); affect(struct[0].p, 9)",
            vec![],
            3,
        )
        .unwrap();
    let far = w.spawn(a, Cell::new(10, 10), &[], None).unwrap();
    let near = w.spawn(a, Cell::new(1, 0), &[], None).unwrap();
    let outside = w.spawn(a, Cell::new(3, 0), &[], None).unwrap();
    let writer = w.spawn(b, Cell::new(0, 0), &[], None).unwrap();
    let ev = step_world(&mut w).unwrap();
    assert_eq!(w.instance(near).unwrap().prop("p").unwrap().value, 9);
    assert_eq!(w.instance(far).unwrap().prop("p").unwrap().value, 0);
    // Only the nearest instance in reach is written.
    assert_eq!(w.instance(outside).unwrap().prop("p").unwrap().value, 0);
    let affect = ev.iter().find_map(|e| match &e.data {
        EventData::Affect {
            instance,
            writer_kind,
            target_kind,
            ..
        } => Some((*instance, *writer_kind, *target_kind)),
        _ => None,
    });
    assert_eq!(affect, Some((writer, b, a)));
    assert_eq!(w.relationships(), vec![(near, writer)]);
}

#[test]
fn policy_acts_only_outside_stasis_and_learns() {
    let mut w = world(100_000);
    let k = w.add_kind("s0", S0, vec![], 1).unwrap();
    let mut spec = LoopSpec::new("l", 0, Windows::new(2, 30, 60).unwrap());
    spec.policy = Some(ActionPolicy::uniform(vec![Action::Assemble(k), Action::NoOp], Fraction::new(1, 10)).unwrap());
    let l = w.add_loop(spec).unwrap();
    w.schedule(ScheduledPerturbation {
        at: 0,
        target: Target::LoopEnergy(l),
        delta: 15,
    })
    .unwrap();
    let mut log = Vec::new();
    for _ in 0..20 {
        log.extend(step_world(&mut w).unwrap());
    }
    let actions = log
        .iter()
        .filter(|e| matches!(e.data, EventData::PolicyAction { .. }))
        .count();
    assert!(actions >= 1);
    // 15 - 10 leaves 5: too little for a second assembly, so the loop never crosses a boundary.
    let updates: Vec<_> = log
        .iter()
        .filter(|e| matches!(e.data, EventData::PolicyUpdate { .. }))
        .collect();
    assert!(updates.is_empty(), "{log:#?}");
    let pl = w.get_loop(l).unwrap();
    assert!(!pl.trace.entries.is_empty());
    assert!(pl
        .trace
        .entries
        .iter()
        .all(|t| t.step >= pl.trace.window_entered_at.unwrap()));
}

#[test]
fn stasis_crossing_credits_trace() {
    let mut w = world(100_000);
    let k = w.add_kind("s0", S13, vec![], 1).unwrap();
    let mut spec = LoopSpec::new("l", 0, Windows::new(2, 30, 60).unwrap());
    spec.policy = Some(ActionPolicy::uniform(vec![Action::Assemble(k)], Fraction::new(1, 10)).unwrap());
    let l = w.add_loop(spec).unwrap();
    w.schedule(ScheduledPerturbation {
        at: 0,
        target: Target::LoopEnergy(l),
        delta: 14,
    })
    .unwrap();
    let first = step_world(&mut w).unwrap();
    assert!(first.iter().any(|e| matches!(e.data, EventData::PolicyAction { .. })));
    let second = step_world(&mut w).unwrap();
    let update = second.iter().find_map(|e| match &e.data {
        EventData::PolicyUpdate { outcome, counts, .. } => Some((*outcome, counts.clone())),
        _ => None,
    });
    assert_eq!(update, Some((Outcome::ReachedStasis, vec![(1, 0)])));
    assert!(w.get_loop(l).unwrap().trace.entries.is_empty());
}

#[test]
fn disabled_loop_members_bill_but_do_not_act() {
    let mut w = world(1_000);
    w.add_env_prop(Property::new("t", 0, PerturbationModel::FREE)).unwrap();
    let k = w
        .add_kind(
            "h",
            "affect(env.alloc_self, sense(env.alloc_self)); affect(env.t, 5)",
            vec![],
            1,
        )
        .unwrap();
    let mut spec = LoopSpec::new("ctl", 0, Windows::new(100, 200, 300).unwrap());
    spec.controller = true;
    let l = w.add_loop(spec).unwrap();
    w.spawn(k, Cell::new(0, 0), &[l], None).unwrap();
    w.set_loop_disabled(l, true).unwrap();
    step_world(&mut w).unwrap();
    assert_eq!(w.env_value("t"), Some(0));
    w.set_loop_disabled(l, false).unwrap();
    step_world(&mut w).unwrap();
    assert_eq!(w.env_value("t"), Some(5));
    assert_eq!(w.controllers(), vec![l]);
}

#[test]
fn open_world_flows_are_logged() {
    let mut cfg = WorldConfig::new(1, 100);
    cfg.mode = Mode::Open {
        inflow: Signal::Constant { value: 20 },
    };
    let mut w = World::new(cfg);
    let k = w.add_kind("s0", S0, vec![], 1).unwrap();
    w.spawn(k, Cell::new(0, 0), &[], None).unwrap();
    let fed = w.catalog().get(k).unwrap().fed;
    let mut inflow = 0;
    let mut outflow = 0;
    for _ in 0..10 {
        for e in step_world(&mut w).unwrap() {
            match e.data {
                EventData::Inflow { amount } => inflow += amount,
                EventData::Outflow { amount } => outflow += amount,
                _ => {}
            }
        }
    }
    assert_eq!(w.ledger().total(), 100 + inflow - outflow);
    assert_eq!(outflow, 10 * fed);
}

#[test]
fn zero_delta_perturbation_is_elided() {
    let mut w = world(100);
    let l = w.add_loop(LoopSpec::new("l", 0, windows())).unwrap();
    w.schedule(ScheduledPerturbation {
        at: 0,
        target: Target::LoopEnergy(l),
        delta: 0,
    })
    .unwrap();
    assert!(step_world(&mut w).unwrap().is_empty());
}

#[test]
fn step_limit_is_enforced() {
    let mut cfg = WorldConfig::new(1, 10);
    cfg.step_limit = Some(2);
    let mut w = World::new(cfg);
    step_world(&mut w).unwrap();
    step_world(&mut w).unwrap();
    assert_eq!(step_world(&mut w), Err(WorldError::StepLimitReached(2)));
}

#[test]
fn shared_members_are_flagged() {
    let mut w = world(1_000);
    let k = w.add_kind("s0", S0, vec![], 1).unwrap();
    let a = w.add_loop(LoopSpec::new("a", 0, windows())).unwrap();
    let b = w.add_loop(LoopSpec::new("b", 0, windows())).unwrap();
    w.spawn(k, Cell::new(0, 0), &[a, b], None).unwrap();
    let names: Vec<&str> = w.drain_events().iter().map(|e| e.data.name()).collect();
    assert_eq!(names, vec!["assemble", "shared_member", "discovery"]);
}

mod props {
    use super::*;
    use crate::eel::{Eel, GeneratorConfig};
    use proptest::prelude::*;

    /// A busy world: invented kinds, two policy loops joined by channels, a
    /// noisy driver and scheduled shocks.
    fn busy(seed: u64, total: Energy, shock: i64) -> World {
        let mut w = World::new(WorldConfig::new(seed, total));
        w.add_env_prop(Property::new("temp", 0, PerturbationModel::quadratic(1)))
            .unwrap();
        let k = w
            .add_kind("s0", S0, vec![Property::new("p", 0, PerturbationModel::linear(1))], 2)
            .unwrap();
        w.set_eel(
            Eel::new(
                GeneratorConfig {
                    epoch: 7,
                    invention_budget: 1,
                    spawn: 2,
                    ..GeneratorConfig::default()
                },
                seed,
            )
            .unwrap(),
        );
        let mut loops = Vec::new();
        for i in 0..2 {
            let mut spec = LoopSpec::new(format!("l{i}"), 40, Windows::new(10, 60, 200).unwrap());
            spec.effector_rate = 1;
            spec.anchor = Cell::new(10 * i, 0);
            spec.adopt_inventions = true;
            spec.policy = Some(
                ActionPolicy::uniform(
                    vec![Action::Assemble(k), Action::DisassembleOldest(k), Action::NoOp],
                    Fraction::new(1, 5),
                )
                .unwrap(),
            );
            let l = w.add_loop(spec).unwrap();
            w.spawn(k, Cell::new(10 * i, 0), &[l], None).unwrap();
            loops.push(l);
        }
        w.add_channel(loops[0], loops[1], Fraction::new(1, 3), 5, None).unwrap();
        w.add_channel(loops[1], loops[0], Fraction::new(1, 4), 3, None).unwrap();
        w.add_driver(Driver {
            target: "env.temp".parse().unwrap(),
            mode: DriveMode::Add,
            signal: Signal::Square {
                amplitude: 2,
                period: 6,
                offset: 0,
                phase: 0,
            },
            noise: 1,
            random_phase: true,
        })
        .unwrap();
        for (i, l) in loops.iter().enumerate() {
            w.schedule(ScheduledPerturbation {
                at: 3 + i as u64,
                target: Target::LoopEnergy(*l),
                delta: shock,
            })
            .unwrap();
        }
        w
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn closed_worlds_conserve_every_step(seed in any::<u64>(), total in 500i64..5_000, shock in -80i64..120) {
            let mut w = busy(seed, total, shock);
            let mut inventions = 0;
            for _ in 0..60 {
                let events = step_world(&mut w).unwrap();
                inventions += events.iter().filter(|e| e.data.name() == "invention").count();
                prop_assert_eq!(w.ledger().total(), total);
                prop_assert_eq!(w.ledger().accounted(), total);
            }
            prop_assert!(inventions > 0);
        }

        #[test]
        fn same_seed_same_log(seed in any::<u64>()) {
            let run = |s| {
                let mut w = busy(s, 3_000, 50);
                let mut log = Vec::new();
                for _ in 0..40 {
                    log.extend(step_world(&mut w).unwrap());
                }
                (log, w.checksum())
            };
            prop_assert_eq!(run(seed), run(seed));
        }

        #[test]
        fn channel_flows_cancel(seed in any::<u64>()) {
            let mut w = busy(seed, 3_000, 90);
            for _ in 0..30 {
                let before: Vec<Energy> = w.loops().iter().map(|l| w.loop_energy(l.id)).collect();
                let events = step_world(&mut w).unwrap();
                let mut net = vec![0; before.len()];
                for e in &events {
                    if let EventData::ChannelFlow { origin, target, amount, .. } = e.data {
                        net[origin.index()] -= amount;
                        net[target.index()] += amount;
                    }
                }
                prop_assert_eq!(net.iter().sum::<Energy>(), 0);
            }
        }
    }
}
