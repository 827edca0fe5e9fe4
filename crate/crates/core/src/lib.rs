//! Deterministic simulator for energy-homeostatic ("enerstatic") systems.
//!
//! Worlds hold an exact integer energy ledger, structures whose behavior is a
//! cost-metered program in a small causal DSL, loops that regulate their
//! energy toward a setpoint by reconfiguring themselves, and an environment
//! that invents new structure kinds inside a birth-ordered niche hierarchy.

pub mod dsl;
pub mod eel;
pub mod energy;
pub mod fraction;
pub mod ids;
pub mod learning;
pub mod metrics;
pub mod scenario;
pub mod world;

pub use energy::{Account, Energy, Ledger, LedgerError, PerturbationModel, PerturbationShape, Property};
pub use fraction::Fraction;
pub use ids::{ChannelId, InstanceId, KindId, LoopId};
pub use world::{step_world, Event, EventData, World, WorldConfig, WorldError};
