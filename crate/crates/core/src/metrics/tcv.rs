use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::{step_world, Driver, Target, World, WorldError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Controlled,
    NotControlled,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TcvConfig {
    pub variable: Target,
    pub disturbance: Driver,
    pub theta: f64,
    /// One paired trial per seed.
    pub seeds: Vec<u64>,
    pub steps: u64,
    /// Leading steps excluded from the variance.
    #[serde(default)]
    pub warmup: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TcvReport {
    pub variable: Target,
    /// Pooled active variance over pooled severed variance.
    pub attenuation: f64,
    pub verdict: Verdict,
    pub trials: usize,
    pub theta: f64,
    pub var_active: f64,
    pub var_severed: f64,
    pub disturbance: Driver,
}

#[derive(Debug, Error)]
pub enum TcvError {
    #[error("disturbance has zero variance")]
    DegenerateDisturbance,
    #[error("scenario declares no controller loops to sever")]
    SeverUndefined,
    #[error("variable `{0}` is not observable")]
    Unobservable(Target),
    #[error("the variable never moves, even with control severed")]
    NoSeveredVariance,
    #[error("need at least one seed and more steps than warmup")]
    NoSamples,
    #[error("theta must lie in (0, 0.5]")]
    Theta,
    #[error("building the world: {0}")]
    Setup(String),
    #[error(transparent)]
    World(#[from] WorldError),
}

/// Population variance.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

fn disturbance_varies(d: &Driver, steps: u64) -> bool {
    if d.noise > 0 {
        return true;
    }
    let first = d.signal.value(0);
    (1..steps.max(d.signal.period() * 2)).any(|t| d.signal.value(t) != first)
}

fn trial<E: std::fmt::Display>(
    factory: &mut impl FnMut(u64) -> Result<World, E>,
    config: &TcvConfig,
    seed: u64,
    severed: bool,
) -> Result<f64, TcvError> {
    let mut world = factory(seed).map_err(|e| TcvError::Setup(e.to_string()))?;
    let controllers = world.controllers();
    if controllers.is_empty() {
        return Err(TcvError::SeverUndefined);
    }
    if severed {
        for l in controllers {
            world.set_loop_disabled(l, true)?;
        }
    }
    world.add_driver(config.disturbance.clone())?;
    let mut samples = Vec::with_capacity(config.steps.saturating_sub(config.warmup) as usize);
    for t in 0..config.steps {
        step_world(&mut world)?;
        let v = world
            .target_value(&config.variable)
            .ok_or_else(|| TcvError::Unobservable(config.variable.clone()))?;
        if t >= config.warmup {
            samples.push(v as f64);
        }
    }
    Ok(variance(&samples))
}

/// Paired active/severed runs for every seed. The factory builds a fresh
/// world for a seed; severing disables the world's controller loops.
pub fn tcv<E: std::fmt::Display>(
    mut factory: impl FnMut(u64) -> Result<World, E>,
    config: &TcvConfig,
) -> Result<TcvReport, TcvError> {
    if !(config.theta > 0.0 && config.theta <= 0.5) {
        return Err(TcvError::Theta);
    }
    if config.seeds.is_empty() || config.steps <= config.warmup {
        return Err(TcvError::NoSamples);
    }
    if !disturbance_varies(&config.disturbance, config.steps) {
        return Err(TcvError::DegenerateDisturbance);
    }
    let (mut active, mut severed) = (0.0, 0.0);
    for &seed in &config.seeds {
        active += trial(&mut factory, config, seed, false)?;
        severed += trial(&mut factory, config, seed, true)?;
    }
    let n = config.seeds.len() as f64;
    let (active, severed) = (active / n, severed / n);
    if severed == 0.0 {
        return Err(TcvError::NoSeveredVariance);
    }
    let s = active / severed;
    let verdict = if s < config.theta {
        Verdict::Controlled
    } else if s > 1.0 - config.theta {
        Verdict::NotControlled
    } else {
        Verdict::Inconclusive
    };
    Ok(TcvReport {
        variable: config.variable.clone(),
        attenuation: s,
        verdict,
        trials: config.seeds.len(),
        theta: config.theta,
        var_active: active,
        var_severed: severed,
        disturbance: config.disturbance.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum VafError {
    #[error("model has {model} points, observed {observed}; need equal lengths of at least 2")]
    LengthMismatch { model: usize, observed: usize },
    #[error("observed trajectory has zero variance")]
    ZeroVarianceObserved,
}

/// Variance accounted for: `1 - Var(observed - model) / Var(observed)`, clamped to [0, 1].
pub fn vaf(model: &[f64], observed: &[f64]) -> Result<f64, VafError> {
    if model.len() != observed.len() || observed.len() < 2 {
        return Err(VafError::LengthMismatch {
            model: model.len(),
            observed: observed.len(),
        });
    }
    let v = variance(observed);
    if v == 0.0 {
        return Err(VafError::ZeroVarianceObserved);
    }
    let residual: Vec<f64> = observed.iter().zip(model).map(|(o, m)| o - m).collect();
    Ok((1.0 - variance(&residual) / v).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{PerturbationModel, Property};
    use crate::world::{Cell, DriveMode, LoopSpec, Signal, Windows, WorldConfig};
    use proptest::prelude::*;

    #[test]
    fn vaf_perfect_and_baseline() {
        let obs = [1.0, 4.0, 2.0, 8.0];
        assert_eq!(vaf(&obs, &obs), Ok(1.0));
        let mean = obs.iter().sum::<f64>() / 4.0;
        assert_eq!(vaf(&[mean; 4], &obs), Ok(0.0));
    }

    #[test]
    fn vaf_errors() {
        assert!(matches!(vaf(&[1.0], &[1.0]), Err(VafError::LengthMismatch { .. })));
        assert!(matches!(
            vaf(&[1.0, 2.0], &[1.0, 2.0, 3.0]),
            Err(VafError::LengthMismatch { .. })
        ));
        assert_eq!(vaf(&[0.0, 1.0], &[3.0, 3.0]), Err(VafError::ZeroVarianceObserved));
    }

    #[test]
    fn vaf_hand_computed() {
        // residual (0, 1, 0, -1): var 0.5; observed (0, 2, 4, 6): var 5.
        let v = vaf(&[0.0, 1.0, 4.0, 7.0], &[0.0, 2.0, 4.0, 6.0]).unwrap();
        assert!((v - 0.9).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn vaf_is_shift_invariant(xs in prop::collection::vec(-100i32..100, 3..30), shift in -50i32..50) {
            let obs: Vec<f64> = xs.iter().map(|&x| x as f64).collect();
            prop_assume!(variance(&obs) > 0.0);
            let model: Vec<f64> = obs.iter().enumerate().map(|(i, x)| x + (i % 3) as f64).collect();
            let a = vaf(&model, &obs).unwrap();
            let so: Vec<f64> = obs.iter().map(|x| x + shift as f64).collect();
            let sm: Vec<f64> = model.iter().map(|x| x + shift as f64).collect();
            let b = vaf(&sm, &so).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }

    fn square(target: &str) -> Driver {
        Driver {
            target: target.parse().unwrap(),
            mode: DriveMode::Add,
            signal: Signal::Square {
                amplitude: 1,
                period: 8,
                offset: 0,
                phase: 0,
            },
            noise: 0,
            random_phase: false,
        }
    }

    /// A clamp controller pinning `temp` to 20 while `dummy` drifts freely.
    fn thermostat(seed: u64) -> Result<World, WorldError> {
        let mut w = World::new(WorldConfig::new(seed, 10_000));
        w.add_env_prop(Property::new("temp", 20, PerturbationModel::FREE))?;
        w.add_env_prop(Property::new("dummy", 0, PerturbationModel::FREE))?;
        let k = w.add_kind(
            "heater",
            "affect(env.alloc_self, sense(env.alloc_self)); affect(env.temp, clamp(20, sense(env.temp) - 1, sense(env.temp) + 1))",
            vec![],
            1,
        )?;
        let mut spec = LoopSpec::new("ctl", 0, Windows::new(100, 200, 300).unwrap());
        spec.controller = true;
        let l = w.add_loop(spec)?;
        w.spawn(k, Cell::new(0, 0), &[l], None)?;
        Ok(w)
    }

    fn config(variable: &str, disturbance: Driver) -> TcvConfig {
        TcvConfig {
            variable: variable.parse().unwrap(),
            disturbance,
            theta: 0.25,
            seeds: vec![1, 2],
            steps: 64,
            warmup: 0,
        }
    }

    #[test]
    fn regulated_variable_is_controlled() {
        let r = tcv(thermostat, &config("env.temp", square("env.temp"))).unwrap();
        assert_eq!(r.verdict, Verdict::Controlled, "{r:?}");
        assert!(r.attenuation < 0.25);
    }

    #[test]
    fn free_variable_is_not() {
        let r = tcv(thermostat, &config("env.dummy", square("env.dummy"))).unwrap();
        assert_eq!(r.verdict, Verdict::NotControlled);
        assert_eq!(r.attenuation, 1.0);
    }

    #[test]
    fn constant_disturbance_is_degenerate() {
        let mut d = square("env.temp");
        d.signal = Signal::Constant { value: 3 };
        assert!(matches!(
            tcv(thermostat, &config("env.temp", d)),
            Err(TcvError::DegenerateDisturbance)
        ));
    }

    #[test]
    fn needs_declared_controller() {
        let plain = |seed| -> Result<World, WorldError> {
            let mut w = World::new(WorldConfig::new(seed, 100));
            w.add_env_prop(Property::new("temp", 0, PerturbationModel::FREE))?;
            Ok(w)
        };
        assert!(matches!(
            tcv(plain, &config("env.temp", square("env.temp"))),
            Err(TcvError::SeverUndefined)
        ));
    }

    #[test]
    fn seed_order_does_not_matter() {
        let mut d = square("env.temp");
        d.noise = 1;
        d.random_phase = true;
        let mut a = config("env.temp", d);
        a.seeds = vec![3, 9, 4];
        let mut b = a.clone();
        b.seeds = vec![4, 3, 9];
        let (ra, rb) = (tcv(thermostat, &a).unwrap(), tcv(thermostat, &b).unwrap());
        assert_eq!(ra.verdict, rb.verdict);
        assert!((ra.attenuation - rb.attenuation).abs() < 1e-12);
    }
}
