//! The append-only event log and its line-delimited JSON encoding.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use super::loops::Window;
use super::signal::Target;
use super::structure::Cell;
use crate::energy::{Account, Energy};
use crate::ids::{ChannelId, InstanceId, KindId, LoopId};
use crate::learning::{Action, Outcome};

/// Current event schema version, written as the `v` field of every line.
pub const EVENT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeathCause {
    /// Intake below FED.
    Starved,
    /// Intake above FEL.
    OverLimit,
    /// A loop it belonged to left its CAP window.
    LoopDissolved,
}

/// Event payloads. Field order is part of the log format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventData {
    Transfer {
        from: Account,
        to: Account,
        amount: Energy,
    },
    Inflow {
        amount: Energy,
    },
    /// Dissipation leaving an open world, summed over the step.
    Outflow {
        amount: Energy,
    },
    Assemble {
        instance: InstanceId,
        #[serde(rename = "type")]
        kind: KindId,
        payer: Account,
        cost: Energy,
        pos: Cell,
        #[serde(rename = "loop")]
        loop_id: Option<LoopId>,
    },
    Discovery {
        #[serde(rename = "type")]
        kind: KindId,
    },
    Disassemble {
        instance: InstanceId,
        #[serde(rename = "type")]
        kind: KindId,
        refund: Energy,
        buffer: Energy,
        to: Account,
    },
    Death {
        instance: InstanceId,
        #[serde(rename = "type")]
        kind: KindId,
        cause: DeathCause,
        intake: Option<Energy>,
        trapped: Energy,
        buffer: Energy,
    },
    WindowTransition {
        #[serde(rename = "loop")]
        loop_id: LoopId,
        from: Window,
        to: Window,
        energy: Energy,
    },
    LoopDissolved {
        #[serde(rename = "loop")]
        loop_id: LoopId,
        energy: Energy,
        reserve: Energy,
    },
    PolicyAction {
        #[serde(rename = "loop")]
        loop_id: LoopId,
        index: usize,
        action: Action,
        window: Window,
        energy: Energy,
        instance: Option<InstanceId>,
        failure: Option<String>,
    },
    PolicyUpdate {
        #[serde(rename = "loop")]
        loop_id: LoopId,
        outcome: Outcome,
        credited: usize,
        /// Per action: (times strengthened, times weakened).
        counts: Vec<(u64, u64)>,
        probabilities: Vec<f64>,
    },
    DivZero {
        instance: InstanceId,
        count: u32,
    },
    ChannelFlow {
        channel: ChannelId,
        origin: LoopId,
        target: LoopId,
        amount: Energy,
    },
    Effector {
        #[serde(rename = "loop")]
        loop_id: LoopId,
        amount: Energy,
    },
    Perturbation {
        target: Target,
        delta: i64,
        /// Energy moved from the pool (negative: returned to it).
        energy: Energy,
    },
    WriteRejected {
        instance: Option<InstanceId>,
        target: String,
        value: i64,
        reason: String,
    },
    Invention {
        #[serde(rename = "type")]
        kind: KindId,
        name: String,
        fed: Energy,
        fel: Energy,
        source: String,
    },
    InventionFailed {
        #[serde(rename = "type")]
        kind: Option<KindId>,
        reason: String,
    },
    SharedMember {
        instance: InstanceId,
        loops: Vec<LoopId>,
    },
    /// A write to a property owned by another structure.
    Affect {
        instance: InstanceId,
        writer_kind: KindId,
        target_instance: InstanceId,
        target_kind: KindId,
        prop: String,
        value: i64,
    },
}

impl EventData {
    pub fn name(&self) -> &'static str {
        match self {
            EventData::Transfer { .. } => "transfer",
            EventData::Inflow { .. } => "inflow",
            EventData::Outflow { .. } => "outflow",
            EventData::Assemble { .. } => "assemble",
            EventData::Discovery { .. } => "discovery",
            EventData::Disassemble { .. } => "disassemble",
            EventData::Death { .. } => "death",
            EventData::WindowTransition { .. } => "window_transition",
            EventData::LoopDissolved { .. } => "loop_dissolved",
            EventData::PolicyAction { .. } => "policy_action",
            EventData::PolicyUpdate { .. } => "policy_update",
            EventData::DivZero { .. } => "div_zero",
            EventData::ChannelFlow { .. } => "channel_flow",
            EventData::Effector { .. } => "effector",
            EventData::Perturbation { .. } => "perturbation",
            EventData::WriteRejected { .. } => "write_rejected",
            EventData::Invention { .. } => "invention",
            EventData::InventionFailed { .. } => "invention_failed",
            EventData::SharedMember { .. } => "shared_member",
            EventData::Affect { .. } => "affect",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    #[serde(rename = "v")]
    pub version: u32,
    pub step: u64,
    #[serde(flatten)]
    pub data: EventData,
}

impl Event {
    pub fn new(step: u64, data: EventData) -> Self {
        Event {
            version: EVENT_SCHEMA_VERSION,
            step,
            data,
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("events always serialize")
    }
}

pub fn write_jsonl<'a>(out: &mut impl Write, events: impl IntoIterator<Item = &'a Event>) -> io::Result<()> {
    for e in events {
        out.write_all(e.to_json_line().as_bytes())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Parse a log. Blank lines are skipped; errors carry the 1-based line number.
pub fn read_jsonl(input: impl BufRead) -> io::Result<Vec<Event>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let event: Event = serde_json::from_str(&line)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1)))?;
        out.push(event);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_order_is_stable() {
        let e = Event::new(
            4,
            EventData::ChannelFlow {
                channel: ChannelId(1),
                origin: LoopId(0),
                target: LoopId(2),
                amount: -3,
            },
        );
        assert_eq!(
            e.to_json_line(),
            r#"{"v":1,"step":4,"kind":"channel_flow","channel":1,"origin":0,"target":2,"amount":-3}"#
        );
    }

    #[test]
    fn jsonl_round_trip() {
        let events = vec![
            Event::new(0, EventData::Discovery { kind: KindId(0) }),
            Event::new(
                1,
                EventData::Death {
                    instance: InstanceId(3),
                    kind: KindId(0),
                    cause: DeathCause::OverLimit,
                    intake: Some(27),
                    trapped: 13,
                    buffer: 0,
                },
            ),
            Event::new(
                2,
                EventData::PolicyAction {
                    loop_id: LoopId(1),
                    index: 0,
                    action: Action::Assemble(KindId(2)),
                    window: Window::Action,
                    energy: 40,
                    instance: None,
                    failure: Some("insufficient".into()),
                },
            ),
            Event::new(
                3,
                EventData::Perturbation {
                    target: "loop3.energy".parse().unwrap(),
                    delta: -40,
                    energy: -40,
                },
            ),
        ];
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &events).unwrap();
        let back = read_jsonl(&buf[..]).unwrap();
        assert_eq!(back, events);
    }

    #[test]
    fn bad_line_reports_position() {
        let err = read_jsonl("\n{\"v\":1}\n".as_bytes()).unwrap_err();
        assert!(err.to_string().starts_with("line 2:"), "{err}");
    }
}
