//! Action policies for loop reconfiguration and their hebbian-like updates.
//!
//! A policy keeps exact weights. Each weight is its initial value times
//! `(1+η)^s · (1−η)^w`, where `s` and `w` count how often the action was
//! credited by a return to stasis or blamed for a push into the CAP window.
//! Storing the exponents rather than the expanded rationals keeps snapshots
//! small; probabilities are expanded exactly on demand.

use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::Energy;
use crate::fraction::Fraction;
use crate::ids::KindId;
use crate::world::Window;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    /// Build one instance of the kind, paid from the loop's energy.
    Assemble(KindId),
    /// Take apart the loop's oldest member of the kind, refunding the loop.
    DisassembleOldest(KindId),
    NoOp,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("policy has no actions")]
    EmptyPolicy,
    #[error("policy has {actions} actions but {weights} weights")]
    WeightCount { actions: usize, weights: usize },
    #[error("weight {0} is not positive")]
    NonPositiveWeight(Fraction),
    #[error("learning rate {0} is outside (0, 1)")]
    BadLearningRate(Fraction),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionPolicy {
    pub actions: Vec<Action>,
    initial: Vec<Fraction>,
    strengthened: Vec<u64>,
    weakened: Vec<u64>,
    eta: Fraction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    ReachedStasis,
    ReachedCap,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub step: u64,
    pub action: usize,
    /// Loop energy when the action was taken. Recorded, not used by the update.
    pub energy: Energy,
}

/// Actions taken since the loop last entered its action window.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionTrace {
    pub entries: Vec<TraceEntry>,
    pub window_entered_at: Option<u64>,
}

impl ActionTrace {
    pub fn clear(&mut self) {
        self.entries.clear();
        self.window_entered_at = None;
    }
}

impl ActionPolicy {
    pub fn new(actions: Vec<Action>, weights: Vec<Fraction>, eta: Fraction) -> Result<Self, PolicyError> {
        if actions.is_empty() {
            return Err(PolicyError::EmptyPolicy);
        }
        if actions.len() != weights.len() {
            return Err(PolicyError::WeightCount {
                actions: actions.len(),
                weights: weights.len(),
            });
        }
        if let Some(w) = weights.iter().find(|w| !w.is_positive()) {
            return Err(PolicyError::NonPositiveWeight(*w));
        }
        if !(eta.is_positive() && (eta.numer() as u64) < eta.denom()) {
            return Err(PolicyError::BadLearningRate(eta));
        }
        let n = actions.len();
        Ok(ActionPolicy {
            actions,
            initial: weights,
            strengthened: vec![0; n],
            weakened: vec![0; n],
            eta,
        })
    }

    /// Equal initial weights.
    pub fn uniform(actions: Vec<Action>, eta: Fraction) -> Result<Self, PolicyError> {
        let w = vec![Fraction::integer(1); actions.len()];
        Self::new(actions, w, eta)
    }

    pub fn eta(&self) -> Fraction {
        self.eta
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Add an action with the given initial weight and no credit history.
    pub fn push_action(&mut self, action: Action, weight: Fraction) -> Result<(), PolicyError> {
        if !weight.is_positive() {
            return Err(PolicyError::NonPositiveWeight(weight));
        }
        self.actions.push(action);
        self.initial.push(weight);
        self.strengthened.push(0);
        self.weakened.push(0);
        Ok(())
    }

    /// `(strengthened, weakened)` counts per action.
    pub fn credit_counts(&self) -> Vec<(u64, u64)> {
        self.strengthened
            .iter()
            .copied()
            .zip(self.weakened.iter().copied())
            .collect()
    }

    /// Integer weights sharing one implicit denominator, exactly proportional to the policy.
    fn integer_weights(&self) -> Vec<BigUint> {
        let p = self.eta.numer() as u64;
        let q = self.eta.denom();
        let up = BigUint::from(q + p);
        let down = BigUint::from(q - p);
        let qb = BigUint::from(q);
        let min_s = *self.strengthened.iter().min().unwrap_or(&0);
        let min_w = *self.weakened.iter().min().unwrap_or(&0);
        let shifted: Vec<(u64, u64)> = self
            .strengthened
            .iter()
            .zip(&self.weakened)
            .map(|(s, w)| (s - min_s, w - min_w))
            .collect();
        let top = shifted.iter().map(|(s, w)| s + w).max().unwrap_or(0);
        let lcm = self.initial.iter().fold(1u64, |acc, w| acc.lcm(&w.denom()));
        self.initial
            .iter()
            .zip(&shifted)
            .map(|(w, (s, d))| {
                let base = BigUint::from(w.numer() as u64) * BigUint::from(lcm / w.denom());
                base * pow(&up, *s) * pow(&down, *d) * pow(&qb, top - s - d)
            })
            .collect()
    }

    /// Normalised selection probabilities, exact.
    pub fn weights(&self) -> Vec<BigRational> {
        let ints = self.integer_weights();
        let total: BigUint = ints.iter().sum();
        let total = BigInt::from_biguint(Sign::Plus, total);
        ints.into_iter()
            .map(|w| BigRational::new(BigInt::from_biguint(Sign::Plus, w), total.clone()))
            .collect()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.weights().iter().map(|r| r.to_f64().unwrap_or(0.0)).collect()
    }

    /// Draw an action index with probability proportional to its weight.
    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        let ints = self.integer_weights();
        let total: BigUint = ints.iter().sum();
        let mut ticket = uniform_below(&total, rng);
        for (i, w) in ints.iter().enumerate() {
            if ticket < *w {
                return i;
            }
            ticket -= w;
        }
        unreachable!("ticket below total weight")
    }

    /// Multiplicative credit for every traced action.
    pub fn credit_update(&self, trace: &ActionTrace, outcome: Outcome) -> ActionPolicy {
        let mut next = self.clone();
        for entry in &trace.entries {
            let counter = match outcome {
                Outcome::ReachedStasis => &mut next.strengthened,
                Outcome::ReachedCap => &mut next.weakened,
            };
            if let Some(c) = counter.get_mut(entry.action) {
                *c += 1;
            }
        }
        next
    }
}

/// Choose an action for a loop in the given window. Stasis and fatal windows never act.
pub fn select_action(policy: &ActionPolicy, window: Window, rng: &mut impl Rng) -> Result<Option<usize>, PolicyError> {
    if policy.is_empty() {
        return Err(PolicyError::EmptyPolicy);
    }
    Ok(match window {
        Window::Stasis | Window::Fatal => None,
        Window::Action | Window::Cap => Some(policy.sample(rng)),
    })
}

/// Pure function form of [`ActionPolicy::credit_update`].
pub fn credit_update(policy: &ActionPolicy, trace: &ActionTrace, outcome: Outcome) -> ActionPolicy {
    policy.credit_update(trace, outcome)
}

fn pow(base: &BigUint, exp: u64) -> BigUint {
    if exp == 0 {
        return BigUint::one();
    }
    num_traits::pow(base.clone(), exp as usize)
}

/// Uniform integer in `[0, bound)` by rejection on the bit length.
fn uniform_below(bound: &BigUint, rng: &mut impl Rng) -> BigUint {
    assert!(!bound.is_zero(), "empty range");
    if let Some(b) = bound.to_u64() {
        return BigUint::from(rng.random_range(0..b));
    }
    let bits = bound.bits();
    let words = bits.div_ceil(32) as usize;
    let spare = (words as u64 * 32 - bits) as u32;
    loop {
        let mut digits: Vec<u32> = (0..words).map(|_| rng.random::<u32>()).collect();
        if let Some(top) = digits.last_mut() {
            *top >>= spare;
        }
        let candidate = BigUint::new(digits);
        if candidate < *bound {
            return candidate;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn frac(n: i64, d: u64) -> Fraction {
        Fraction::new(n, d)
    }

    fn two_actions(wa: Fraction, wb: Fraction) -> ActionPolicy {
        ActionPolicy::new(
            vec![Action::Assemble(KindId(0)), Action::DisassembleOldest(KindId(0))],
            vec![wa, wb],
            frac(1, 10),
        )
        .unwrap()
    }

    fn trace(actions: &[usize]) -> ActionTrace {
        ActionTrace {
            entries: actions
                .iter()
                .enumerate()
                .map(|(i, a)| TraceEntry {
                    step: i as u64,
                    action: *a,
                    energy: 0,
                })
                .collect(),
            window_entered_at: Some(0),
        }
    }

    fn rat(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    #[test]
    fn stasis_never_acts() {
        let p = two_actions(frac(1, 1), frac(1, 1));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(select_action(&p, Window::Stasis, &mut rng).unwrap(), None);
        assert_eq!(select_action(&p, Window::Fatal, &mut rng).unwrap(), None);
    }

    #[test]
    fn single_action_is_always_chosen() {
        let p = ActionPolicy::uniform(vec![Action::NoOp], frac(1, 10)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            assert_eq!(select_action(&p, Window::Action, &mut rng).unwrap(), Some(0));
        }
    }

    #[test]
    fn sampling_frequency_tracks_weights() {
        let p = two_actions(frac(3, 1), frac(1, 1));
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let draws = 100_000;
        let hits = (0..draws)
            .filter(|_| select_action(&p, Window::Action, &mut rng).unwrap() == Some(0))
            .count();
        let freq = hits as f64 / draws as f64;
        assert!((freq - 0.75).abs() <= 0.01, "frequency {freq}");
    }

    #[test]
    fn stasis_credit_compounds() {
        let p = two_actions(frac(1, 2), frac(1, 2));
        let next = credit_update(&p, &trace(&[0, 0]), Outcome::ReachedStasis);
        // 0.5·1.1² = 0.605 against 0.5, normalised by 1.105.
        assert_eq!(next.weights(), vec![rat(121, 221), rat(100, 221)]);
        let probs = next.probabilities();
        assert!((probs[0] - 0.5475).abs() < 1e-4 && (probs[1] - 0.4525).abs() < 1e-4);
    }

    #[test]
    fn cap_blame_shrinks_weight() {
        let p = two_actions(frac(1, 2), frac(1, 2));
        let next = credit_update(&p, &trace(&[1]), Outcome::ReachedCap);
        // B: 0.5·0.9 = 0.45, A: 0.5 → 0.5/0.95, 0.45/0.95
        assert_eq!(next.weights(), vec![rat(10, 19), rat(9, 19)]);
    }

    #[test]
    fn empty_trace_is_identity() {
        let p = two_actions(frac(2, 3), frac(1, 7));
        assert_eq!(credit_update(&p, &ActionTrace::default(), Outcome::ReachedCap), p);
    }

    #[test]
    fn construction_errors() {
        assert_eq!(ActionPolicy::uniform(vec![], frac(1, 2)), Err(PolicyError::EmptyPolicy));
        assert!(matches!(
            ActionPolicy::new(vec![Action::NoOp], vec![frac(0, 1)], frac(1, 2)),
            Err(PolicyError::NonPositiveWeight(_))
        ));
        assert!(matches!(
            ActionPolicy::uniform(vec![Action::NoOp], frac(1, 1)),
            Err(PolicyError::BadLearningRate(_))
        ));
        assert!(matches!(
            ActionPolicy::new(vec![Action::NoOp], vec![], frac(1, 2)),
            Err(PolicyError::WeightCount { .. })
        ));
    }

    #[test]
    fn huge_exponents_still_sample() {
        let mut p = two_actions(frac(1, 1), frac(1, 1));
        p.strengthened[0] = 5_000;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        assert!((0..50).all(|_| p.sample(&mut rng) == 0));
        p.strengthened[1] = 5_000;
        p.weakened[0] = 1;
        let hits = (0..2000).filter(|_| p.sample(&mut rng) == 1).count();
        // 1 : 0.9 odds
        assert!((hits as f64 / 2000.0 - 1.0 / 1.9).abs() < 0.05, "{hits}");
    }

    fn update_strategy() -> impl Strategy<Value = Vec<(Vec<usize>, bool)>> {
        prop::collection::vec((prop::collection::vec(0usize..3, 0..6), prop::bool::ANY), 0..25)
    }

    proptest! {
        #[test]
        fn weights_stay_positive_and_normalised(updates in update_strategy()) {
            let mut p = ActionPolicy::new(
                vec![Action::NoOp, Action::Assemble(KindId(1)), Action::Assemble(KindId(2))],
                vec![frac(1, 3), frac(2, 5), frac(7, 1)],
                frac(1, 4),
            ).unwrap();
            for (acts, good) in updates {
                let outcome = if good { Outcome::ReachedStasis } else { Outcome::ReachedCap };
                p = credit_update(&p, &trace(&acts), outcome);
                let w = p.weights();
                prop_assert!(w.iter().all(|x| *x > BigRational::zero()));
                prop_assert_eq!(w.iter().fold(BigRational::zero(), |a, b| a + b), BigRational::one());
            }
        }

        #[test]
        fn stasis_only_action_never_loses_ground(updates in update_strategy()) {
            // Action 0 is only ever credited on stasis; action 2 never on stasis.
            let mut p = ActionPolicy::uniform(
                vec![Action::NoOp, Action::Assemble(KindId(1)), Action::Assemble(KindId(2))],
                frac(1, 5),
            ).unwrap();
            let mut prev = {
                let w = p.weights();
                w[0].clone() / w[2].clone()
            };
            for (acts, good) in updates {
                let acts: Vec<usize> = if good {
                    acts.into_iter().filter(|a| *a != 2).collect()
                } else {
                    acts.into_iter().filter(|a| *a != 0).collect()
                };
                let outcome = if good { Outcome::ReachedStasis } else { Outcome::ReachedCap };
                p = credit_update(&p, &trace(&acts), outcome);
                let w = p.weights();
                let ratio = w[0].clone() / w[2].clone();
                prop_assert!(ratio >= prev);
                prev = ratio;
            }
        }

        #[test]
        fn sampling_is_replayable(seed in any::<u64>()) {
            let p = credit_update(&two_actions(frac(1, 3), frac(2, 3)), &trace(&[0, 1, 1]), Outcome::ReachedStasis);
            let mut a = ChaCha8Rng::seed_from_u64(seed);
            let mut b = ChaCha8Rng::seed_from_u64(seed);
            let xs: Vec<usize> = (0..16).map(|_| p.sample(&mut a)).collect();
            let ys: Vec<usize> = (0..16).map(|_| p.sample(&mut b)).collect();
            prop_assert_eq!(xs, ys);
        }
    }
}
