//! Assembly-style metrics folded from the event log, complexity proxies and
//! the controlled-variable test.

mod complexity;
mod tcv;

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Write};

use num_rational::Ratio;
use serde::Serialize;
use thiserror::Error;

use crate::ids::KindId;
use crate::world::{Event, EventData};

pub use complexity::{complexity_report, KindComplexity};
pub use tcv::{tcv, vaf, variance, TcvConfig, TcvError, TcvReport, VafError, Verdict};

/// Exact per-step rate.
pub type Rate = Ratio<u64>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("metrics window must be at least one step")]
    EmptyWindow,
    #[error("events out of order: step {found} after {previous}")]
    OutOfOrder { previous: u64, found: u64 },
}

/// Counts and rates for one window `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WindowRates {
    pub index: u64,
    pub start: u64,
    pub end: u64,
    pub discoveries: u64,
    pub productions: u64,
    /// Kinds discovered before `end`; the denominator of the k_p mean.
    pub kinds: u64,
    #[serde(serialize_with = "ser_rate")]
    pub k_d: Rate,
    #[serde(serialize_with = "ser_rate")]
    pub k_p: Rate,
}

fn ser_rate<S: serde::Serializer>(r: &Rate, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format!("{}/{}", r.numer(), r.denom()))
}

#[derive(Debug, Clone, Default)]
struct Tally {
    discoveries: u64,
    productions: BTreeMap<KindId, u64>,
}

/// Running fold over an event stream.
#[derive(Debug, Clone)]
pub struct AssemblyMetrics {
    window: u64,
    last_step: Option<u64>,
    /// Live instances per kind; kinds at zero are dropped.
    pub copy_number: BTreeMap<KindId, u64>,
    pub discoveries: Vec<(u64, KindId)>,
    pub productions: Vec<(u64, KindId)>,
    tallies: BTreeMap<u64, Tally>,
}

impl AssemblyMetrics {
    pub fn new(window: u64) -> Result<Self, MetricsError> {
        if window == 0 {
            return Err(MetricsError::EmptyWindow);
        }
        Ok(AssemblyMetrics {
            window,
            last_step: None,
            copy_number: BTreeMap::new(),
            discoveries: Vec::new(),
            productions: Vec::new(),
            tallies: BTreeMap::new(),
        })
    }

    pub fn window(&self) -> u64 {
        self.window
    }

    pub fn update<'a>(&mut self, events: impl IntoIterator<Item = &'a Event>) -> Result<(), MetricsError> {
        for e in events {
            self.push(e)?;
        }
        Ok(())
    }

    pub fn push(&mut self, e: &Event) -> Result<(), MetricsError> {
        if let Some(previous) = self.last_step {
            if e.step < previous {
                return Err(MetricsError::OutOfOrder {
                    previous,
                    found: e.step,
                });
            }
        }
        self.last_step = Some(e.step);
        let w = e.step / self.window;
        match e.data {
            EventData::Assemble { kind, .. } => {
                *self.copy_number.entry(kind).or_default() += 1;
                self.productions.push((e.step, kind));
                *self.tallies.entry(w).or_default().productions.entry(kind).or_default() += 1;
            }
            EventData::Discovery { kind } => {
                self.discoveries.push((e.step, kind));
                self.tallies.entry(w).or_default().discoveries += 1;
            }
            EventData::Disassemble { kind, .. } | EventData::Death { kind, .. } => {
                if let Some(n) = self.copy_number.get_mut(&kind) {
                    *n -= 1;
                    if *n == 0 {
                        self.copy_number.remove(&kind);
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Rates for every window up to the last event seen, or through `steps`
    /// when given (trailing quiet windows included).
    pub fn series(&self, steps: Option<u64>) -> Vec<WindowRates> {
        let last = match (steps, self.last_step) {
            (Some(0), _) => return Vec::new(),
            (Some(n), _) => (n - 1) / self.window,
            (None, Some(s)) => s / self.window,
            (None, None) => return Vec::new(),
        };
        let mut seen = BTreeSet::new();
        let mut disc = self.discoveries.iter().peekable();
        let empty = Tally::default();
        (0..=last)
            .map(|index| {
                let start = index * self.window;
                let end = start + self.window;
                while let Some((_, k)) = disc.next_if(|(s, _)| *s < end) {
                    seen.insert(*k);
                }
                let t = self.tallies.get(&index).unwrap_or(&empty);
                let productions: u64 = t.productions.values().sum();
                let kinds = seen.len() as u64;
                WindowRates {
                    index,
                    start,
                    end,
                    discoveries: t.discoveries,
                    productions,
                    kinds,
                    k_d: Rate::new(t.discoveries, self.window),
                    k_p: if kinds == 0 {
                        Rate::from_integer(0)
                    } else {
                        Rate::new(productions, kinds * self.window)
                    },
                }
            })
            .collect()
    }

    /// Rates of the most recent window; zero before any event.
    pub fn current(&self) -> (Rate, Rate) {
        self.series(None)
            .last()
            .map_or((Rate::from_integer(0), Rate::from_integer(0)), |w| (w.k_d, w.k_p))
    }
}

/// Fold a whole log.
pub fn update_metrics<'a>(
    events: impl IntoIterator<Item = &'a Event>,
    window: u64,
) -> Result<AssemblyMetrics, MetricsError> {
    let mut m = AssemblyMetrics::new(window)?;
    m.update(events)?;
    Ok(m)
}

/// First window at which `k_p < k_d` gives way to `k_d < k_p` for at least
/// `hysteresis` consecutive windows. Returns that window's start step.
///
/// Windows with `k_d == k_p` count as neither side.
pub fn detect_transition(series: &[WindowRates], hysteresis: usize) -> Option<u64> {
    let h = hysteresis.max(1);
    let mut discovery_led = false;
    for (i, w) in series.iter().enumerate() {
        if w.k_p < w.k_d {
            discovery_led = true;
            continue;
        }
        if discovery_led && w.k_d < w.k_p && i + h <= series.len() && series[i..i + h].iter().all(|x| x.k_d < x.k_p) {
            return Some(w.start);
        }
    }
    None
}

pub const CSV_HEADER: &str = "window,start,end,discoveries,productions,kinds,k_d,k_p,k_d_value,k_p_value";

pub fn write_csv(out: &mut impl Write, series: &[WindowRates]) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for w in series {
        writeln!(
            out,
            "{},{},{},{},{},{},{}/{},{}/{},{},{}",
            w.index,
            w.start,
            w.end,
            w.discoveries,
            w.productions,
            w.kinds,
            w.k_d.numer(),
            w.k_d.denom(),
            w.k_p.numer(),
            w.k_p.denom(),
            ratio_f64(&w.k_d),
            ratio_f64(&w.k_p),
        )?;
    }
    Ok(())
}

fn ratio_f64(r: &Rate) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::Account;
    use crate::ids::{InstanceId, LoopId};
    use crate::world::{Cell, DeathCause};

    fn assemble(step: u64, inst: u64, kind: u32) -> Event {
        Event::new(
            step,
            EventData::Assemble {
                instance: InstanceId(inst as u32),
                kind: KindId(kind),
                payer: Account::Reserve(LoopId(0)),
                cost: 1,
                pos: Cell::new(0, 0),
                loop_id: Some(LoopId(0)),
            },
        )
    }

    fn discovery(step: u64, kind: u32) -> Event {
        Event::new(step, EventData::Discovery { kind: KindId(kind) })
    }

    #[test]
    fn discovery_rate_counts_window() {
        let log: Vec<Event> = (0..3).map(|k| discovery(2 * k as u64, k)).collect();
        let m = update_metrics(&log, 10).unwrap();
        assert_eq!(m.current().0, Rate::new(3, 10));
    }

    #[test]
    fn empty_log_is_zero() {
        let m = update_metrics(&[], 10).unwrap();
        assert_eq!(m.current(), (Rate::from_integer(0), Rate::from_integer(0)));
        assert!(m.copy_number.is_empty());
        assert!(m.series(None).is_empty());
    }

    #[test]
    fn production_rate_of_one_kind() {
        let mut log = vec![discovery(0, 0)];
        log.extend((0..12).map(|i| assemble(i / 2, i, 0)));
        log.sort_by_key(|e| e.step);
        let m = update_metrics(&log, 10).unwrap();
        assert_eq!(m.current().1, Rate::new(12, 10));
        assert_eq!(m.copy_number[&KindId(0)], 12);
    }

    #[test]
    fn zero_window_rejected() {
        assert_eq!(update_metrics(&[], 0).unwrap_err(), MetricsError::EmptyWindow);
    }

    #[test]
    fn out_of_order_rejected() {
        let log = [discovery(5, 0), discovery(3, 1)];
        assert!(matches!(update_metrics(&log, 2), Err(MetricsError::OutOfOrder { .. })));
    }

    #[test]
    fn copy_numbers_follow_deaths() {
        let log = vec![
            assemble(0, 0, 0),
            assemble(0, 1, 0),
            assemble(1, 2, 1),
            Event::new(
                2,
                EventData::Death {
                    instance: InstanceId(2),
                    kind: KindId(1),
                    cause: DeathCause::Starved,
                    intake: Some(0),
                    trapped: 1,
                    buffer: 0,
                },
            ),
            Event::new(
                3,
                EventData::Disassemble {
                    instance: InstanceId(0),
                    kind: KindId(0),
                    refund: 1,
                    buffer: 0,
                    to: Account::Pool,
                },
            ),
        ];
        let m = update_metrics(&log, 4).unwrap();
        assert_eq!(m.copy_number.into_iter().collect::<Vec<_>>(), vec![(KindId(0), 1)]);
    }

    #[test]
    fn series_includes_quiet_windows() {
        let m = update_metrics(&[discovery(0, 0)], 5).unwrap();
        let s = m.series(Some(23));
        assert_eq!(s.len(), 5);
        assert_eq!(s[4].start, 20);
        assert!(s[1..].iter().all(|w| w.k_d == Rate::from_integer(0) && w.kinds == 1));
    }

    fn rates(pairs: &[(u64, u64)]) -> Vec<WindowRates> {
        pairs
            .iter()
            .enumerate()
            .map(|(i, &(d, p))| WindowRates {
                index: i as u64,
                start: i as u64 * 10,
                end: i as u64 * 10 + 10,
                discoveries: d,
                productions: p,
                kinds: 1,
                k_d: Rate::new(d, 10),
                k_p: Rate::new(p, 10),
            })
            .collect()
    }

    #[test]
    fn transition_found_with_hysteresis() {
        let mut pairs = vec![(3, 1); 7];
        pairs.extend([(1, 4); 5]);
        assert_eq!(detect_transition(&rates(&pairs), 2), Some(70));
    }

    #[test]
    fn no_flip_no_transition() {
        assert_eq!(detect_transition(&rates(&[(3, 1); 12]), 2), None);
    }

    #[test]
    fn blip_is_suppressed() {
        let mut pairs = vec![(3, 1); 5];
        pairs.push((0, 2));
        pairs.extend([(3, 1); 5]);
        assert_eq!(detect_transition(&rates(&pairs), 2), None);
        assert_eq!(detect_transition(&rates(&pairs), 1), Some(50));
    }

    #[test]
    fn production_led_start_is_not_a_transition() {
        assert_eq!(detect_transition(&rates(&[(0, 3), (0, 3), (0, 3)]), 1), None);
    }

    #[test]
    fn csv_layout() {
        let mut out = Vec::new();
        write_csv(&mut out, &rates(&[(3, 1)])).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text, format!("{CSV_HEADER}\n0,0,10,3,1,1,3/10,1/10,0.3,0.1\n"));
    }
}
