use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use enerstat_core::metrics::{complexity_report, detect_transition, tcv, update_metrics, write_csv, Verdict};
use enerstat_core::scenario::{
    load_scenario, perturb_bundle, read_manifest, run_scenario, sweep, LoadedScenario, RunOptions,
};
use enerstat_core::world::{read_jsonl, Target};

#[derive(Parser)]
#[command(name = "enerstat", version, about = "Run and analyse enerstatic-loop scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write a bundle (events, metrics, checksum).
    Run {
        scenario: PathBuf,
        /// Override the scenario's seed.
        #[arg(long, conflicts_with = "seeds")]
        seed: Option<u64>,
        /// Run a seed range such as `1..8` (end exclusive), one bundle per seed.
        #[arg(long, value_parser = parse_range)]
        seeds: Option<(u64, u64)>,
        /// Override the scenario's step count.
        #[arg(long)]
        steps: Option<u64>,
        /// Output directory. Defaults to `runs/<name>-seed<seed>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay a bundle, inject a perturbation at a step, and continue.
    Perturb {
        bundle: PathBuf,
        #[arg(long)]
        at: u64,
        /// Target such as `loop3.energy`, `env.temp` or `inst4.p`.
        #[arg(long)]
        prop: Target,
        #[arg(long, allow_hyphen_values = true)]
        delta: i64,
        /// Output directory. Defaults to `<bundle>-at<step>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Test whether a variable is controlled (paired active/severed runs).
    Tcv {
        scenario: PathBuf,
        #[arg(long)]
        variable: Target,
        /// Attenuation threshold; defaults to the scenario's.
        #[arg(long)]
        theta: Option<f64>,
        /// Paired trials, seeded from `--seed` upward.
        #[arg(long)]
        trials: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Recompute k_d/k_p series from a bundle's event log.
    Metrics {
        bundle: PathBuf,
        /// Window length in steps; defaults to the bundle's.
        #[arg(long)]
        window: Option<u64>,
        /// Write the CSV here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Load and check a scenario without running it.
    Validate { scenario: PathBuf },
}

fn parse_range(s: &str) -> Result<(u64, u64), String> {
    let (a, b) = s.split_once("..").ok_or("expected `start..end`")?;
    let a: u64 = a.trim().parse().map_err(|e| format!("start: {e}"))?;
    let b: u64 = b.trim().parse().map_err(|e| format!("end: {e}"))?;
    if b <= a {
        return Err("empty seed range".into());
    }
    Ok((a, b))
}

type Failure = Box<dyn std::error::Error>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            scenario,
            seed,
            seeds,
            steps,
            out,
        } => cmd_run(&scenario, seed, seeds, steps, out),
        Command::Perturb {
            bundle,
            at,
            prop,
            delta,
            out,
        } => cmd_perturb(&bundle, at, prop, delta, out),
        Command::Tcv {
            scenario,
            variable,
            theta,
            trials,
            seed,
        } => cmd_tcv(&scenario, variable, theta, trials, seed),
        Command::Metrics { bundle, window, out } => cmd_metrics(&bundle, window, out),
        Command::Validate { scenario } => cmd_validate(&scenario),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn load(path: &Path, seed: Option<u64>, steps: Option<u64>) -> Result<LoadedScenario, Failure> {
    let mut s = load_scenario(path)?;
    if let Some(seed) = seed {
        s = s.with_seed(seed);
    }
    if let Some(steps) = steps {
        s = s.with_steps(steps);
    }
    Ok(s)
}

fn cmd_run(
    path: &Path,
    seed: Option<u64>,
    seeds: Option<(u64, u64)>,
    steps: Option<u64>,
    out: Option<PathBuf>,
) -> Result<(), Failure> {
    let scenario = load(path, seed, steps)?;
    let name = scenario.scenario.name.clone();
    if let Some((a, b)) = seeds {
        let out = out.unwrap_or_else(|| PathBuf::from("runs").join(&name));
        let seeds: Vec<u64> = (a..b).collect();
        let mut failed = 0;
        for (seed, r) in seeds.iter().zip(sweep(&scenario, &seeds, &out)) {
            match r {
                Ok(b) => println!(
                    "seed {seed}: {} steps, checksum {}",
                    b.manifest.steps_run, b.manifest.checksum
                ),
                Err(e) => {
                    failed += 1;
                    eprintln!("seed {seed}: {e}");
                }
            }
        }
        if failed > 0 {
            return Err(format!("{failed} of {} seeds failed", seeds.len()).into());
        }
        return Ok(());
    }
    let out = out.unwrap_or_else(|| PathBuf::from("runs").join(format!("{name}-seed{}", scenario.scenario.seed)));
    let b = run_scenario(&scenario, &out, &RunOptions::default())?;
    println!("{}", b.dir.display());
    println!(
        "steps {} of {}{}, {} events, checksum {}",
        b.manifest.steps_run,
        b.manifest.steps,
        if b.manifest.extinct { " (extinct)" } else { "" },
        b.manifest.events,
        b.manifest.checksum
    );
    Ok(())
}

fn cmd_perturb(bundle: &Path, at: u64, prop: Target, delta: i64, out: Option<PathBuf>) -> Result<(), Failure> {
    let out = out.unwrap_or_else(|| {
        let mut name = bundle.file_name().unwrap_or_default().to_os_string();
        name.push(format!("-at{at}"));
        bundle.with_file_name(name)
    });
    let b = perturb_bundle(bundle, at, prop, delta, &out)?;
    println!("{}", b.dir.display());
    println!("steps {}, checksum {}", b.manifest.steps_run, b.manifest.checksum);
    Ok(())
}

fn cmd_tcv(
    path: &Path,
    variable: Target,
    theta: Option<f64>,
    trials: Option<u32>,
    seed: Option<u64>,
) -> Result<(), Failure> {
    let scenario = load(path, None, None)?;
    let first = seed.unwrap_or(scenario.scenario.seed);
    let n = trials
        .or(scenario.scenario.tcv.as_ref().map(|t| t.trials))
        .unwrap_or(1)
        .max(1);
    let seeds = (first..first + n as u64).collect();
    let config = scenario.tcv_config(&variable, theta, seeds)?;
    let report = tcv(|s| scenario.build_seeded(s), &config)?;
    println!("{}", serde_json::to_string(&report)?);
    let word = match report.verdict {
        Verdict::Controlled => "controlled",
        Verdict::NotControlled => "not controlled",
        Verdict::Inconclusive => "inconclusive",
    };
    eprintln!(
        "{variable}: {word} (S = {:.4}, theta = {})",
        report.attenuation, report.theta
    );
    Ok(())
}

fn cmd_metrics(bundle: &Path, window: Option<u64>, out: Option<PathBuf>) -> Result<(), Failure> {
    let manifest = read_manifest(bundle)?;
    let window = window.unwrap_or(manifest.metrics_window);
    let log = bundle.join("events.jsonl");
    let events = read_jsonl(BufReader::new(
        File::open(&log).map_err(|e| format!("{}: {e}", log.display()))?,
    ))?;
    let metrics = update_metrics(&events, window)?;
    let series = metrics.series(Some(manifest.steps_run));
    match out {
        Some(p) => {
            let mut f = BufWriter::new(File::create(&p)?);
            write_csv(&mut f, &series)?;
            f.flush()?;
            println!("{}", p.display());
        }
        None => {
            let stdout = io::stdout();
            write_csv(&mut stdout.lock(), &series)?;
        }
    }
    let copies: Vec<String> = metrics.copy_number.iter().map(|(k, n)| format!("{k}:{n}")).collect();
    eprintln!(
        "copy numbers: {}",
        if copies.is_empty() {
            "none".into()
        } else {
            copies.join(" ")
        }
    );
    match detect_transition(&series, 3) {
        Some(step) => eprintln!("k_p<k_d to k_d<k_p transition at step {step}"),
        None => eprintln!("no k_p<k_d to k_d<k_p transition"),
    }
    Ok(())
}

fn cmd_validate(path: &Path) -> Result<(), Failure> {
    let scenario = load(path, None, None)?;
    let world = scenario.build()?;
    let s = &scenario.scenario;
    println!("{}: ok ({} seed {}, {} steps)", path.display(), s.name, s.seed, s.steps);
    println!(
        "{:<4} {:<16} {:>6} {:>6} {:>6} {:>6} {:>6}",
        "id", "kind", "fed", "fel", "radius", "nodes", "depth"
    );
    for (k, c) in world.catalog().kinds().iter().zip(complexity_report(world.catalog())) {
        println!(
            "{:<4} {:<16} {:>6} {:>6} {:>6} {:>6} {:>6}",
            k.id.0, k.name, k.fed, k.fel, k.radius, c.ast_size, c.niche_depth
        );
    }
    println!(
        "{} loops, {} channels, {} structures, pool {}",
        world.loops().len(),
        world.channels().len(),
        world.live_count(),
        world.ledger().free_pool()
    );
    Ok(())
}
