//! Exact integer energy accounting.
//!
//! Every quantity of energy in a world is an integer number of micro-energy
//! units (µE). The [`Ledger`] holds every account and can audit itself: the
//! sum of all balances always equals the world total, which only changes
//! through explicit inflow/outflow in open worlds.
//!
//! Fractional physics (mass from assembly cost, work of motion) always rounds
//! up, so a mover can never gain energy through rounding.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::ids::{InstanceId, LoopId};

/// Micro-energy units.
pub type Energy = i64;

/// A ledger account.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Account {
    /// Free energy held by the environment loop.
    Pool,
    /// Energy stored in environment properties moved off their defaults.
    Environment,
    /// Assembly cost plus stored property energy of one instance.
    Trapped(InstanceId),
    /// Surplus intake of one instance.
    Buffer(InstanceId),
    /// Loop-level reserve (channel inflow, disassembly refunds).
    Reserve(LoopId),
}

impl fmt::Display for Account {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Account::Pool => f.write_str("pool"),
            Account::Environment => f.write_str("env"),
            Account::Trapped(id) => write!(f, "trapped:{}", id.0),
            Account::Buffer(id) => write!(f, "buffer:{}", id.0),
            Account::Reserve(id) => write!(f, "reserve:{}", id.0),
        }
    }
}

impl FromStr for Account {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pool" => return Ok(Account::Pool),
            "env" => return Ok(Account::Environment),
            _ => {}
        }
        let (tag, num) = s.split_once(':').ok_or_else(|| format!("bad account `{s}`"))?;
        let n: u32 = num.parse().map_err(|_| format!("bad account `{s}`"))?;
        match tag {
            "trapped" => Ok(Account::Trapped(InstanceId(n))),
            "buffer" => Ok(Account::Buffer(InstanceId(n))),
            "reserve" => Ok(Account::Reserve(LoopId(n))),
            _ => Err(format!("bad account `{s}`")),
        }
    }
}

impl Serialize for Account {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Account {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("account {account} holds {balance} µE, cannot pay {amount} µE")]
    InsufficientBalance {
        account: Account,
        balance: Energy,
        amount: Energy,
    },
    #[error("unknown account {0}")]
    UnknownAccount(Account),
    #[error("negative transfer amount {0}")]
    NegativeAmount(Energy),
    #[error("account {0} already exists")]
    AccountExists(Account),
    #[error("account {account} still holds {balance} µE")]
    NonZeroClose { account: Account, balance: Energy },
    #[error("conservation violated: expected total {expected} µE, accounts sum to {found} µE")]
    ConservationViolation { expected: Energy, found: Energy },
}

/// A completed movement of energy between two accounts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transfer {
    pub from: Account,
    pub to: Account,
    pub amount: Energy,
}

/// The world's energy accounts.
///
/// Per-instance and per-loop accounts are stored densely by id; ids are never
/// reused, so closed accounts simply become `None`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ledger {
    free_pool: Energy,
    environment: Energy,
    trapped: Vec<Option<Energy>>,
    buffer: Vec<Option<Energy>>,
    reserve: Vec<Option<Energy>>,
    total: Energy,
}

impl Ledger {
    /// A fresh ledger with everything in the free pool.
    pub fn new(total: Energy) -> Self {
        assert!(total >= 0, "ledger total must be non-negative");
        Ledger {
            free_pool: total,
            environment: 0,
            trapped: Vec::new(),
            buffer: Vec::new(),
            reserve: Vec::new(),
            total,
        }
    }

    pub fn total(&self) -> Energy {
        self.total
    }

    pub fn free_pool(&self) -> Energy {
        self.free_pool
    }

    /// Energy stored in moved environment properties.
    pub fn environment(&self) -> Energy {
        self.environment
    }

    /// Σ trapped over all live instances.
    pub fn trapped_sum(&self) -> Energy {
        self.trapped.iter().flatten().sum()
    }

    /// Σ instance buffers plus Σ loop reserves.
    pub fn buffer_sum(&self) -> Energy {
        self.buffer.iter().flatten().sum::<Energy>() + self.reserve.iter().flatten().sum::<Energy>()
    }

    fn slot(&self, account: Account) -> Option<&Option<Energy>> {
        match account {
            Account::Trapped(id) => self.trapped.get(id.index()),
            Account::Buffer(id) => self.buffer.get(id.index()),
            Account::Reserve(id) => self.reserve.get(id.index()),
            Account::Pool | Account::Environment => None,
        }
    }

    fn cell(&mut self, account: Account) -> Result<&mut Energy, LedgerError> {
        let slot = match account {
            Account::Pool => return Ok(&mut self.free_pool),
            Account::Environment => return Ok(&mut self.environment),
            Account::Trapped(id) => self.trapped.get_mut(id.index()),
            Account::Buffer(id) => self.buffer.get_mut(id.index()),
            Account::Reserve(id) => self.reserve.get_mut(id.index()),
        };
        slot.and_then(Option::as_mut)
            .ok_or(LedgerError::UnknownAccount(account))
    }

    pub fn exists(&self, account: Account) -> bool {
        match account {
            Account::Pool | Account::Environment => true,
            _ => matches!(self.slot(account), Some(Some(_))),
        }
    }

    pub fn balance(&self, account: Account) -> Result<Energy, LedgerError> {
        match account {
            Account::Pool => Ok(self.free_pool),
            Account::Environment => Ok(self.environment),
            _ => self
                .slot(account)
                .copied()
                .flatten()
                .ok_or(LedgerError::UnknownAccount(account)),
        }
    }

    /// Create an empty per-instance or per-loop account.
    pub fn open(&mut self, account: Account) -> Result<(), LedgerError> {
        let (vec, idx) = match account {
            Account::Trapped(id) => (&mut self.trapped, id.index()),
            Account::Buffer(id) => (&mut self.buffer, id.index()),
            Account::Reserve(id) => (&mut self.reserve, id.index()),
            Account::Pool | Account::Environment => return Err(LedgerError::AccountExists(account)),
        };
        if vec.len() <= idx {
            vec.resize(idx + 1, None);
        }
        if vec[idx].is_some() {
            return Err(LedgerError::AccountExists(account));
        }
        vec[idx] = Some(0);
        Ok(())
    }

    /// Remove an account. Its balance must already have been moved out.
    pub fn close(&mut self, account: Account) -> Result<(), LedgerError> {
        let balance = self.balance(account)?;
        if balance != 0 {
            return Err(LedgerError::NonZeroClose { account, balance });
        }
        let vec = match account {
            Account::Trapped(_) => &mut self.trapped,
            Account::Buffer(_) => &mut self.buffer,
            Account::Reserve(_) => &mut self.reserve,
            Account::Pool | Account::Environment => return Err(LedgerError::UnknownAccount(account)),
        };
        let idx = match account {
            Account::Trapped(id) | Account::Buffer(id) => id.index(),
            Account::Reserve(id) => id.index(),
            _ => unreachable!(),
        };
        vec[idx] = None;
        Ok(())
    }

    /// Move `amount` from one account to another. Never partial.
    pub fn transfer(&mut self, from: Account, to: Account, amount: Energy) -> Result<Transfer, LedgerError> {
        if amount < 0 {
            return Err(LedgerError::NegativeAmount(amount));
        }
        if !self.exists(to) {
            return Err(LedgerError::UnknownAccount(to));
        }
        let balance = self.balance(from)?;
        if balance < amount {
            return Err(LedgerError::InsufficientBalance {
                account: from,
                balance,
                amount,
            });
        }
        *self.cell(from)? -= amount;
        *self.cell(to)? += amount;
        Ok(Transfer { from, to, amount })
    }

    /// Energy entering an open world from outside.
    pub fn inflow(&mut self, to: Account, amount: Energy) -> Result<(), LedgerError> {
        if amount < 0 {
            return Err(LedgerError::NegativeAmount(amount));
        }
        *self.cell(to)? += amount;
        self.total += amount;
        Ok(())
    }

    /// Energy leaving an open world.
    pub fn outflow(&mut self, from: Account, amount: Energy) -> Result<(), LedgerError> {
        if amount < 0 {
            return Err(LedgerError::NegativeAmount(amount));
        }
        let balance = self.balance(from)?;
        if balance < amount {
            return Err(LedgerError::InsufficientBalance {
                account: from,
                balance,
                amount,
            });
        }
        *self.cell(from)? -= amount;
        self.total -= amount;
        Ok(())
    }

    /// Sum of every account balance.
    pub fn accounted(&self) -> Energy {
        self.free_pool + self.environment + self.trapped_sum() + self.buffer_sum()
    }

    /// Check `pool + env + Σ trapped + Σ buffer == total` and that nothing is negative.
    pub fn audit(&self) -> Result<(), LedgerError> {
        let found = self.accounted();
        let negative = self.free_pool < 0
            || self.environment < 0
            || self
                .trapped
                .iter()
                .chain(&self.buffer)
                .chain(&self.reserve)
                .flatten()
                .any(|b| *b < 0);
        if found != self.total || negative {
            return Err(LedgerError::ConservationViolation {
                expected: self.total,
                found,
            });
        }
        Ok(())
    }
}

/// Shape of a property's perturbation energy function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbationShape {
    /// Every unit step costs `kappa`.
    Linear,
    /// The k-th unit step away from default costs `kappa·(2k−1)`.
    Quadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PerturbationModel {
    pub shape: PerturbationShape,
    pub kappa: Energy,
}

impl PerturbationModel {
    pub const FREE: PerturbationModel = PerturbationModel::linear(0);

    pub const fn linear(kappa: Energy) -> Self {
        PerturbationModel {
            shape: PerturbationShape::Linear,
            kappa,
        }
    }

    pub const fn quadratic(kappa: Energy) -> Self {
        PerturbationModel {
            shape: PerturbationShape::Quadratic,
            kappa,
        }
    }

    /// Energy stored at distance `d` from the default: the sum of the first `d` unit steps.
    pub fn stored_at(&self, distance: u64) -> Energy {
        let d = distance as i128;
        let k = self.kappa as i128;
        let e = match self.shape {
            PerturbationShape::Linear => k * d,
            PerturbationShape::Quadratic => k * d * d,
        };
        saturate(e)
    }

    /// Work along the monotone path `from → to`, both measured as offsets from the default.
    pub fn path_cost(&self, from: i64, to: i64) -> Energy {
        let (a, b) = (from as i128, to as i128);
        if a == b {
            return 0;
        }
        let same_side = (a >= 0 && b >= 0) || (a <= 0 && b <= 0);
        if same_side {
            (self.stored_at(b.unsigned_abs() as u64) - self.stored_at(a.unsigned_abs() as u64)).abs()
        } else {
            saturate(self.stored_at(a.unsigned_abs() as u64) as i128 + self.stored_at(b.unsigned_abs() as u64) as i128)
        }
    }
}

fn saturate(v: i128) -> Energy {
    v.clamp(Energy::MIN as i128, Energy::MAX as i128) as Energy
}

/// A named integer property with a default and a perturbation energy model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Property {
    pub name: String,
    pub value: i64,
    pub default: i64,
    pub perturbation: PerturbationModel,
}

impl Property {
    pub fn new(name: impl Into<String>, default: i64, perturbation: PerturbationModel) -> Self {
        Property {
            name: name.into(),
            value: default,
            default,
            perturbation,
        }
    }

    fn offset(&self, value: i64) -> i64 {
        value.saturating_sub(self.default)
    }
}

/// Energy stored in `prop`: the unit-step costs summed from its default to its current value.
pub fn stored_property_energy(prop: &Property) -> Energy {
    prop.perturbation.stored_at(prop.offset(prop.value).unsigned_abs())
}

/// Cost of moving `prop` from its current value by `delta`.
pub fn perturbation_cost(prop: &Property, delta: i64) -> Energy {
    let from = prop.offset(prop.value);
    let to = prop.offset(prop.value.saturating_add(delta));
    prop.perturbation.path_cost(from, to)
}

/// Signed change in stored energy if `prop` were set to `new_value`.
///
/// Positive means the mover must pay; negative means energy is released.
pub fn stored_delta(prop: &Property, new_value: i64) -> Energy {
    let after = prop.perturbation.stored_at(prop.offset(new_value).unsigned_abs());
    after - stored_property_energy(prop)
}

/// Energy needed to raise a property template from 0 to its default at assembly.
pub fn default_property_energy(prop: &Property) -> Energy {
    prop.perturbation.path_cost(0, prop.default)
}

/// Mass from assembly cost: `ceil(E / c²)`.
pub fn mass_of(assembly_cost: Energy, c_squared: Energy) -> Energy {
    assert!(c_squared >= 1, "c² must be at least 1");
    let e = assembly_cost.max(0);
    (e + c_squared - 1) / c_squared
}

/// Work to move `mass` at `speed` cells per step: `ceil(m·v²/2)`.
pub fn move_cost(mass: Energy, speed: i64) -> Energy {
    assert!(speed >= 0, "speed must be non-negative");
    let w = mass.max(0) as i128 * (speed as i128) * (speed as i128);
    saturate((w + 1) / 2)
}
