use serde::{Deserialize, Serialize};

use crate::energy::Energy;
use crate::fraction::Fraction;
use crate::ids::{ChannelId, InstanceId, LoopId};

/// Moves energy between two loops in proportion to the origin's deviation from its setpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnergyChannel {
    pub id: ChannelId,
    pub origin: LoopId,
    pub target: LoopId,
    pub gain: Fraction,
    /// Largest magnitude moved per step.
    pub cap: Energy,
    /// Structure whose causal power the channel is; the channel is inert once it dies.
    pub carrier: Option<InstanceId>,
}

/// Signed amount a channel moves this step (positive: origin → target).
///
/// `gain · deviation` is truncated toward zero, clamped to `±cap`, then
/// limited by what the paying side holds.
pub fn channel_flow(
    gain: Fraction,
    cap: Energy,
    origin_deviation: Energy,
    origin_energy: Energy,
    target_energy: Energy,
) -> Energy {
    let raw = gain.scale_truncate(origin_deviation).clamp(-cap, cap);
    if raw > 0 {
        raw.min(origin_energy.max(0))
    } else {
        raw.max(-target_energy.max(0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn half() -> Fraction {
        Fraction::new(1, 2)
    }

    #[test]
    fn capped_outflow() {
        // min(1/2·10, 4)
        assert_eq!(channel_flow(half(), 4, 10, 10, 0), 4);
    }

    #[test]
    fn at_setpoint_nothing_moves() {
        assert_eq!(channel_flow(half(), 4, 0, 50, 50), 0);
    }

    #[test]
    fn below_setpoint_draws_from_target() {
        assert_eq!(channel_flow(half(), 10, -6, 0, 100), -3);
        assert_eq!(channel_flow(half(), 10, -6, 0, 2), -2);
    }

    #[test]
    fn never_overdraws_origin() {
        assert_eq!(channel_flow(Fraction::integer(3), 100, 40, 7, 0), 7);
    }
}
