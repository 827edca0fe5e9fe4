use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{load_scenario, LoadedScenario, ScenarioError};
use crate::metrics::{complexity_report, detect_transition, write_csv, AssemblyMetrics, MetricsError};
use crate::world::{step_world, write_jsonl, Event, ScheduledPerturbation, Target, World, WorldError};

pub const BUNDLE_SCHEMA: &str = "enerstat.bundle/1";

pub const SCENARIO_FILE: &str = "scenario.json";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const METRICS_FILE: &str = "metrics.csv";
pub const COMPLEXITY_FILE: &str = "complexity.jsonl";
pub const MANIFEST_FILE: &str = "bundle.json";

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("step {step}: {source} (partial log kept in {})", log.display())]
    World {
        step: u64,
        source: WorldError,
        log: PathBuf,
    },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{0}")]
    Bundle(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// The `bundle.json` manifest written next to a run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleManifest {
    pub schema: String,
    pub name: String,
    pub seed: u64,
    pub steps: u64,
    pub steps_run: u64,
    pub extinct: bool,
    pub events: u64,
    pub initial_checksum: String,
    pub checksum: String,
    pub metrics_window: u64,
    /// Start step of the first k_p<k_d to k_d<k_p window, if any.
    pub transition: Option<u64>,
    /// The injected perturbation, for replays.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub injected: Option<ScheduledPerturbation>,
    /// Bundle this run replays, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replay_of: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunBundle {
    pub dir: PathBuf,
    pub manifest: BundleManifest,
}

impl RunBundle {
    pub fn events_path(&self) -> PathBuf {
        self.dir.join(EVENTS_FILE)
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.dir.join(METRICS_FILE)
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Injected at the start of its step, after replaying up to it.
    pub inject: Option<ScheduledPerturbation>,
    pub replay_of: Option<String>,
}

/// Step a world in memory, returning every event including setup events
/// still pending. Stops early when a populated world goes extinct.
pub fn run_world(world: &mut World, steps: u64) -> Result<Vec<Event>, WorldError> {
    let mut log = world.drain_events();
    let populated = world.live_count() > 0;
    for _ in 0..steps {
        log.extend(step_world(world)?);
        if populated && world.is_extinct() {
            break;
        }
    }
    Ok(log)
}

/// Run a scenario into `out`, writing the event log as it goes.
pub fn run_scenario(scenario: &LoadedScenario, out: &Path, options: &RunOptions) -> Result<RunBundle, RunError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let snapshot = serde_json::to_string_pretty(&scenario.snapshot()).expect("scenario serializes");
    let scenario_path = out.join(SCENARIO_FILE);
    fs::write(&scenario_path, snapshot + "\n").map_err(io_err(&scenario_path))?;

    let s = &scenario.scenario;
    let mut world = scenario.build()?;
    let initial_checksum = world.checksum();
    let mut metrics = AssemblyMetrics::new(s.metrics.window)?;
    let log_path = out.join(EVENTS_FILE);
    let mut log = BufWriter::new(File::create(&log_path).map_err(io_err(&log_path))?);
    let mut count = 0u64;

    let mut sink = |events: &[Event], log: &mut BufWriter<File>| -> Result<(), RunError> {
        write_jsonl(log, events).map_err(io_err(&log_path))?;
        metrics.update(events)?;
        count += events.len() as u64;
        Ok(())
    };

    if let Some(p) = &options.inject {
        if p.at >= s.steps {
            return Err(RunError::Bundle(format!(
                "injection step {} is beyond the run's {} steps",
                p.at, s.steps
            )));
        }
    }
    sink(&world.drain_events(), &mut log)?;
    let populated = world.live_count() > 0;
    let mut extinct = false;
    while world.step() < s.steps {
        if let Some(p) = options.inject.as_ref().filter(|p| p.at == world.step()) {
            world.schedule(p.clone()).map_err(|source| RunError::World {
                step: world.step(),
                source,
                log: log_path.clone(),
            })?;
        }
        match step_world(&mut world) {
            Ok(events) => sink(&events, &mut log)?,
            Err(source) => {
                let pending = world.drain_events();
                sink(&pending, &mut log)?;
                log.flush().map_err(io_err(&log_path))?;
                return Err(RunError::World {
                    step: world.step(),
                    source,
                    log: log_path.clone(),
                });
            }
        }
        if populated && world.is_extinct() {
            extinct = true;
            break;
        }
    }
    log.flush().map_err(io_err(&log_path))?;

    let series = metrics.series(Some(world.step()));
    let metrics_path = out.join(METRICS_FILE);
    let mut f = BufWriter::new(File::create(&metrics_path).map_err(io_err(&metrics_path))?);
    write_csv(&mut f, &series).map_err(io_err(&metrics_path))?;
    f.flush().map_err(io_err(&metrics_path))?;

    let complexity_path = out.join(COMPLEXITY_FILE);
    let mut f = BufWriter::new(File::create(&complexity_path).map_err(io_err(&complexity_path))?);
    for k in complexity_report(world.catalog()) {
        serde_json::to_writer(&mut f, &k).expect("report serializes");
        f.write_all(b"\n").map_err(io_err(&complexity_path))?;
    }
    f.flush().map_err(io_err(&complexity_path))?;

    let manifest = BundleManifest {
        schema: BUNDLE_SCHEMA.into(),
        name: s.name.clone(),
        seed: s.seed,
        steps: s.steps,
        steps_run: world.step(),
        extinct,
        events: count,
        initial_checksum,
        checksum: world.checksum(),
        metrics_window: s.metrics.window,
        transition: detect_transition(&series, s.metrics.hysteresis),
        injected: options.inject.clone(),
        replay_of: options.replay_of.clone(),
    };
    let manifest_path = out.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&manifest_path, text + "\n").map_err(io_err(&manifest_path))?;
    Ok(RunBundle {
        dir: out.to_path_buf(),
        manifest,
    })
}

pub fn read_manifest(bundle: &Path) -> Result<BundleManifest, RunError> {
    let path = bundle.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let m: BundleManifest =
        serde_json::from_str(&text).map_err(|e| RunError::Bundle(format!("{}: {e}", path.display())))?;
    if m.schema != BUNDLE_SCHEMA {
        return Err(RunError::Bundle(format!(
            "{}: unsupported schema `{}`",
            path.display(),
            m.schema
        )));
    }
    Ok(m)
}

/// Replay a bundle's scenario and seed into `out`, injecting `delta` on
/// `target` at the start of step `at`.
pub fn perturb_bundle(bundle: &Path, at: u64, target: Target, delta: i64, out: &Path) -> Result<RunBundle, RunError> {
    let manifest = read_manifest(bundle)?;
    let scenario = load_scenario(bundle.join(SCENARIO_FILE))?
        .with_seed(manifest.seed)
        .with_steps(manifest.steps);
    let options = RunOptions {
        inject: Some(ScheduledPerturbation { at, target, delta }),
        replay_of: Some(bundle.display().to_string()),
    };
    run_scenario(&scenario, out, &options)
}

/// Run one bundle per seed under `out/seed-<n>`, in parallel.
pub fn sweep(scenario: &LoadedScenario, seeds: &[u64], out: &Path) -> Vec<Result<RunBundle, RunError>> {
    let threads = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(seeds.len().max(1));
    let next = AtomicUsize::new(0);
    let results: Vec<Mutex<Option<Result<RunBundle, RunError>>>> = seeds.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&seed) = seeds.get(i) else { break };
                let run = scenario.clone().with_seed(seed);
                let dir = out.join(format!("seed-{seed}"));
                let r = run_scenario(&run, &dir, &RunOptions::default());
                *results[i].lock().expect("no poisoned runs") = Some(r);
            });
        }
    });
    results
        .into_iter()
        .map(|m| m.into_inner().expect("no poisoned runs").expect("every seed ran"))
        .collect()
}
