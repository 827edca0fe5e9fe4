use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::structure::{Cell, StructureKind};
use crate::energy::Energy;
use crate::ids::{InstanceId, LoopId};
use crate::learning::{ActionPolicy, ActionTrace};

/// Where a loop's energy sits relative to its setpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Window {
    Stasis,
    Action,
    Cap,
    Fatal,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LoopError {
    #[error("window radii must satisfy 0 <= stasis < action < cap (got {0}, {1}, {2})")]
    InvalidWindows(Energy, Energy, Energy),
    #[error("a loop needs at least one member")]
    EmptyLoop,
}

/// Nested window radii around the setpoint, in µE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Windows {
    pub stasis: Energy,
    pub action: Energy,
    pub cap: Energy,
}

impl Windows {
    pub fn new(stasis: Energy, action: Energy, cap: Energy) -> Result<Self, LoopError> {
        if !(0 <= stasis && stasis < action && action < cap) {
            return Err(LoopError::InvalidWindows(stasis, action, cap));
        }
        Ok(Windows { stasis, action, cap })
    }

    /// Classify a deviation from the setpoint. Boundaries belong to the inner window.
    pub fn classify(&self, deviation: Energy) -> Window {
        let d = deviation.unsigned_abs();
        if d <= self.stasis as u64 {
            Window::Stasis
        } else if d <= self.action as u64 {
            Window::Action
        } else if d <= self.cap as u64 {
            Window::Cap
        } else {
            Window::Fatal
        }
    }
}

/// A set of related structures regulating their summed energy toward a setpoint.
///
/// The loop's energy is its reserve account plus the buffers of its members.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnerstaticLoop {
    pub id: LoopId,
    pub name: String,
    /// Ascending.
    pub members: Vec<InstanceId>,
    pub setpoint: Energy,
    pub windows: Windows,
    /// Per-step exchange with the free pool that pulls energy toward the setpoint.
    pub effector_rate: Energy,
    pub anchor: Cell,
    pub policy: Option<ActionPolicy>,
    pub learning: bool,
    /// Extend the policy with `assemble(k)` for every newly invented kind.
    pub adopt_inventions: bool,
    pub trace: ActionTrace,
    pub window: Window,
    pub alive: bool,
    /// Severed controllers keep their energy accounting but exert no causal power.
    pub disabled: bool,
    pub controller: bool,
}

impl EnerstaticLoop {
    pub fn classify(&self, energy: Energy) -> Window {
        classify_window(energy, self.setpoint, &self.windows)
    }

    pub fn add_member(&mut self, id: InstanceId) {
        if let Err(pos) = self.members.binary_search(&id) {
            self.members.insert(pos, id);
        }
    }

    pub fn remove_member(&mut self, id: InstanceId) {
        if let Ok(pos) = self.members.binary_search(&id) {
            self.members.remove(pos);
        }
    }
}

pub fn classify_window(energy: Energy, setpoint: Energy, windows: &Windows) -> Window {
    windows.classify(energy.saturating_sub(setpoint))
}

/// One step of the single-effector loop with setpoint 0: move toward 0 by at most `rate`.
pub fn step_minimal_loop(energy: Energy, effector_rate: Energy) -> Energy {
    assert!(effector_rate >= 0, "effector rate must be non-negative");
    let step = energy.unsigned_abs().min(effector_rate as u64) as Energy;
    energy - energy.signum() * step
}

/// Lower and upper energetic bounds of a set of structures: Σ FED and Σ FEL.
pub fn loop_window_bounds<'a>(
    members: impl IntoIterator<Item = &'a StructureKind>,
) -> Result<(Energy, Energy), LoopError> {
    let mut any = false;
    let (mut lower, mut upper) = (0, 0);
    for kind in members {
        any = true;
        lower += kind.fed;
        upper += kind.fel;
    }
    if !any {
        return Err(LoopError::EmptyLoop);
    }
    Ok((lower, upper))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn window_examples() {
        let w = Windows::new(5, 20, 40).unwrap();
        assert_eq!(classify_window(3, 0, &w), Window::Stasis);
        assert_eq!(classify_window(-12, 0, &w), Window::Action);
        assert_eq!(classify_window(41, 0, &w), Window::Fatal);
        assert_eq!(classify_window(5, 0, &w), Window::Stasis);
        assert_eq!(classify_window(-20, 0, &w), Window::Action);
        assert_eq!(classify_window(140, 100, &w), Window::Cap);
        assert!(Windows::new(5, 5, 40).is_err());
        assert!(Windows::new(-1, 5, 40).is_err());
    }

    #[test]
    fn minimal_loop_examples() {
        assert_eq!(step_minimal_loop(5, 2), 3);
        assert_eq!(step_minimal_loop(0, 7), 0);
        assert_eq!(step_minimal_loop(-1, 2), 0);
        assert_eq!(step_minimal_loop(-9, 0), -9);
    }

    proptest! {
        #[test]
        fn minimal_loop_converges_without_overshoot(e in -1_000_000i64..=1_000_000, rate in 1i64..5_000) {
            let expected = (e.unsigned_abs()).div_ceil(rate as u64);
            let mut x = e;
            let mut steps = 0u64;
            while x != 0 {
                let next = step_minimal_loop(x, rate);
                prop_assert!(next.signum() == x.signum() || next == 0);
                prop_assert!(next.abs() < x.abs());
                x = next;
                steps += 1;
            }
            prop_assert_eq!(steps, expected);
        }
    }
}
