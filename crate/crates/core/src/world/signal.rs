//! Scripted external signals: disturbances, stimulation patterns, inflow schedules.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::ids::{InstanceId, LoopId};

/// A deterministic integer signal over steps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Signal {
    Constant {
        value: i64,
    },
    /// `offset ± amplitude`, high for the first half of each period.
    Square {
        amplitude: i64,
        period: u64,
        #[serde(default)]
        offset: i64,
        #[serde(default)]
        phase: u64,
    },
    /// `base + amplitude` for `width` steps every `period` steps from `start`, else `base`.
    Pulses {
        start: u64,
        period: u64,
        width: u64,
        amplitude: i64,
        #[serde(default)]
        base: i64,
    },
    /// Piecewise constant: the value of the last point at or before the step, 0 before the first.
    Steps {
        points: Vec<(u64, i64)>,
    },
}

impl Signal {
    pub fn value(&self, step: u64) -> i64 {
        match self {
            Signal::Constant { value } => *value,
            Signal::Square {
                amplitude,
                period,
                offset,
                phase,
            } => {
                let p = (*period).max(1);
                let t = (step + phase) % p;
                if t * 2 < p {
                    offset + amplitude
                } else {
                    offset - amplitude
                }
            }
            Signal::Pulses {
                start,
                period,
                width,
                amplitude,
                base,
            } => {
                let on = step >= *start && (step - start) % (*period).max(1) < *width;
                base + if on { *amplitude } else { 0 }
            }
            Signal::Steps { points } => points
                .iter()
                .take_while(|(s, _)| *s <= step)
                .last()
                .map_or(0, |(_, v)| *v),
        }
    }

    pub fn period(&self) -> u64 {
        match self {
            Signal::Square { period, .. } | Signal::Pulses { period, .. } => (*period).max(1),
            _ => 1,
        }
    }
}

/// Something a driver or a perturbation can act on.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Target {
    /// `env.name`
    Env(String),
    /// `loopN.energy`
    LoopEnergy(LoopId),
    /// `instN.name`
    Instance(InstanceId, String),
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Env(n) => write!(f, "env.{n}"),
            Target::LoopEnergy(id) => write!(f, "loop{}.energy", id.0),
            Target::Instance(id, n) => write!(f, "inst{}.{n}", id.0),
        }
    }
}

impl FromStr for Target {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("invalid target `{s}` (expected env.NAME, loopN.energy or instN.NAME)");
        let (head, name) = s.split_once('.').ok_or_else(bad)?;
        if name.is_empty() {
            return Err(bad());
        }
        if head == "env" {
            return Ok(Target::Env(name.to_string()));
        }
        if let Some(n) = head.strip_prefix("loop") {
            let id: u32 = n.parse().map_err(|_| bad())?;
            if name != "energy" {
                return Err(bad());
            }
            return Ok(Target::LoopEnergy(LoopId(id)));
        }
        if let Some(n) = head.strip_prefix("inst") {
            let id: u32 = n.parse().map_err(|_| bad())?;
            return Ok(Target::Instance(InstanceId(id), name.to_string()));
        }
        Err(bad())
    }
}

impl Serialize for Target {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Target {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriveMode {
    /// Overwrite the target with the signal value.
    Set,
    /// Add the signal value to the target every step.
    Add,
}

/// A signal applied to an environment property at the start of every step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Driver {
    pub target: Target,
    pub mode: DriveMode,
    pub signal: Signal,
    /// Uniform integer noise in `[-noise, noise]` added to each sample.
    #[serde(default)]
    pub noise: i64,
    /// Shift the signal by a seeded random phase in `[0, period)`.
    #[serde(default)]
    pub random_phase: bool,
}

/// A driver with its own random stream, so disturbances are identical across
/// runs that share a seed regardless of what else consumes randomness.
#[derive(Debug, Clone)]
pub struct DriverState {
    pub driver: Driver,
    rng: ChaCha8Rng,
    shift: u64,
}

impl DriverState {
    pub fn new(driver: Driver, seed: u64, index: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index as u64 + 1);
        let shift = if driver.random_phase {
            rng.random_range(0..driver.signal.period())
        } else {
            0
        };
        DriverState { driver, rng, shift }
    }

    /// Next sample. Must be called exactly once per step, in step order.
    pub fn sample(&mut self, step: u64) -> i64 {
        let base = self.driver.signal.value(step + self.shift);
        let noise = if self.driver.noise > 0 {
            self.rng.random_range(-self.driver.noise..=self.driver.noise)
        } else {
            0
        };
        base.saturating_add(noise)
    }

    pub fn word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }
}

impl Driver {
    /// The samples this driver would produce over `steps` steps.
    pub fn preview(&self, seed: u64, index: usize, steps: u64) -> Vec<i64> {
        let mut state = DriverState::new(self.clone(), seed, index);
        (0..steps).map(|t| state.sample(t)).collect()
    }
}
