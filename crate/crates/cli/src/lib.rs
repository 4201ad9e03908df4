//! Command-line front end: `validate`, `run` and `oracle-check`.
//!
//! Exit codes: 0 ok, 1 domain violation or mismatch, 2 usage or parse error.

use std::ffi::OsString;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use gossiplearn::analysis::{
    discrimination, phi_infinity, prior_constant, second_likeliest_state, variance_constant,
};
use gossiplearn::distributed::{gossip_step, replay};
use gossiplearn::network::sample_tick_durations;
use gossiplearn::oracle::{
    check_instance_with, OracleInstance, StepFn, MAX_AGENTS, MAX_SLOTS, MAX_STATES, ORACLE_TOL,
};
use gossiplearn::output::{write_bundle, write_centralized, write_event_log, write_ticks};
use gossiplearn::scenario::{run_experiment, validate_scenario, Scenario, ScenarioError};
use gossiplearn::seed::{trial_rng, trial_seed, Stream};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VIOLATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "gossiplearn",
    version,
    about = "Distributed estimation by gossip dual averaging"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a scenario file and print its diagnostics.
    Validate { scenario: PathBuf },
    /// Run every trial of a scenario and write CSV/JSON outputs.
    Run(RunArgs),
    /// Compare the gossip recursion with its matrix and closed forms.
    OracleCheck {
        scenario: PathBuf,
        #[arg(long, default_value_t = 50)]
        t_max: u64,
        #[arg(long, default_value_t = 100)]
        instances: u64,
    },
}

#[derive(Debug, Clone, clap::Args)]
pub struct RunArgs {
    pub scenario: PathBuf,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub trials: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub horizon: Option<u64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Also run centralized dual averaging and write `centralized.csv`.
    #[arg(long)]
    pub centralized: bool,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub snapshot_cadence: Option<u64>,
    /// Worker threads; defaults to one per core.
    #[arg(long, env = "GOSSIPLEARN_JOBS", value_parser = clap::value_parser!(u64).range(1..))]
    pub jobs: Option<u64>,
    /// Write exponential inter-tick times to `ticks.csv`.
    #[arg(long)]
    pub timestamps: bool,
}

/// Parses `args` (program name first) and dispatches.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{e}");
                    EXIT_USAGE
                }
            };
        }
    };
    match cli.command {
        Command::Validate { scenario } => cmd_validate(&scenario, out, err),
        Command::Run(args) => cmd_run(&args, out, err),
        Command::OracleCheck {
            scenario,
            t_max,
            instances,
        } => cmd_oracle_check_with(&scenario, t_max, instances, &gossip_step, out, err),
    }
}

fn load(path: &Path, err: &mut dyn Write) -> Result<Scenario, i32> {
    Scenario::from_path(path).map_err(|e| {
        match &e {
            ScenarioError::Io { .. } => writeln!(err, "error: {e}"),
            _ => writeln!(err, "error: {}: {e}", path.display()),
        }
        .ok();
        EXIT_USAGE
    })
}

fn fmt_vec(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|v| format!("{v:.6}")).collect();
    format!("[{}]", parts.join(", "))
}

/// Prints the validation report; 0 iff there are no violations.
pub fn cmd_validate(path: &Path, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let s = match load(path, err) {
        Ok(s) => s,
        Err(code) => return code,
    };
    match print_validation(&s, out) {
        Ok(code) => code,
        Err(e) => {
            writeln!(err, "error: {e}").ok();
            EXIT_VIOLATION
        }
    }
}

fn print_validation(s: &Scenario, out: &mut dyn Write) -> std::io::Result<i32> {
    let report = validate_scenario(s);
    let labels = s.model.states().labels();
    let names = |set: &std::collections::BTreeSet<usize>| -> String {
        set.iter()
            .map(|&j| labels[j].as_str())
            .collect::<Vec<_>>()
            .join(", ")
    };
    writeln!(
        out,
        "agents: {}, states: {}, true state: {}",
        s.model.num_agents(),
        labels.len(),
        labels[s.model.true_state()]
    )?;
    for (i, set) in report.equivalent_sets.iter().enumerate() {
        writeln!(out, "equivalent set of agent {i}: {{{}}}", names(set))?;
    }
    writeln!(
        out,
        "global equivalent set: {{{}}}",
        names(&report.identifiability.equivalent)
    )?;
    match report.network.lambda2 {
        Some(l) => writeln!(out, "lambda2(E[W]) = {l:.6}")?,
        None => writeln!(out, "lambda2(E[W]) = n/a")?,
    }
    if report.model_violations.is_empty() {
        let d: Vec<String> = (0..labels.len())
            .map(|j| format!("D({})={:.6}", labels[j], discrimination(&s.model, j)))
            .collect();
        writeln!(out, "discrimination: {}", d.join(" "))?;
        if report.identifiability.identifiable {
            let j2 = second_likeliest_state(&s.model);
            writeln!(
                out,
                "D(θ_2)={:.6} (second likeliest state {})",
                discrimination(&s.model, j2),
                labels[j2]
            )?;
        }
        writeln!(out, "phi_infinity: {}", fmt_vec(&phi_infinity(&s.model)))?;
        writeln!(out, "C = {:.6}", variance_constant(&s.model))?;
        let k: Vec<f64> = s
            .priors
            .iter()
            .filter_map(|p| prior_constant(p, s.model.true_state()).ok())
            .collect();
        writeln!(out, "K per agent: {}", fmt_vec(&k))?;
    }
    for w in &report.warnings {
        writeln!(out, "warning: {w}")?;
    }
    let violations = report.violations();
    for v in &violations {
        writeln!(out, "violation: {v}")?;
    }
    if violations.is_empty() {
        writeln!(out, "ok")?;
        Ok(EXIT_OK)
    } else {
        Ok(EXIT_VIOLATION)
    }
}

/// Applies command-line overrides to a loaded scenario.
pub fn apply_overrides(s: &mut Scenario, args: &RunArgs) {
    if let Some(seed) = args.seed {
        s.master_seed = seed;
    }
    if let Some(t) = args.trials {
        s.trials = t;
    }
    if let Some(h) = args.horizon {
        s.horizon = h;
    }
    if let Some(a) = args.alpha {
        s.alpha = a;
    }
    if let Some(c) = args.snapshot_cadence {
        s.snapshot_cadence = c;
    }
}

pub fn cmd_run(args: &RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let mut s = match load(&args.scenario, err) {
        Ok(s) => s,
        Err(code) => return code,
    };
    apply_overrides(&mut s, args);
    if !(s.alpha > 0.0 && s.alpha.is_finite()) {
        writeln!(err, "error: --alpha must be positive and finite").ok();
        return EXIT_USAGE;
    }
    let report = validate_scenario(&s);
    if !report.is_ok() {
        for v in report.violations() {
            writeln!(err, "violation: {v}").ok();
        }
        return EXIT_VIOLATION;
    }
    for w in &report.warnings {
        writeln!(err, "warning: {w}").ok();
    }
    match execute(&s, args, out, err) {
        Ok(code) => code,
        Err(e) => {
            writeln!(err, "error: {e}").ok();
            EXIT_VIOLATION
        }
    }
}

type BoxError = Box<dyn std::error::Error + Send + Sync>;

fn execute(
    s: &Scenario,
    args: &RunArgs,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<i32, BoxError> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = args.jobs {
        pool = pool.num_threads(j as usize);
    }
    let pool = pool.build()?;
    let report = pool.install(|| run_experiment(s))?;
    for w in &report.plan.warnings {
        writeln!(err, "warning: {w}")?;
    }
    let bundle = write_bundle(&args.out, &report.plan, &report.trials, &report.summary)?;
    writeln!(out, "wrote {}", bundle.beliefs_csv_path.display())?;
    writeln!(out, "wrote {}", bundle.ratecheck_csv_path.display())?;
    writeln!(out, "wrote {}", bundle.summary_json_path.display())?;

    let labels = s.model.states().labels();
    if args.centralized {
        let runs = pool.install(|| {
            use rayon::prelude::*;
            (0..s.trials)
                .into_par_iter()
                .map(|k| report.plan.run_centralized_trial(k).map(|st| (k, st)))
                .collect::<Result<Vec<_>, _>>()
        })?;
        let path = args.out.join("centralized.csv");
        write_centralized(BufWriter::new(std::fs::File::create(&path)?), &runs, labels)?;
        writeln!(out, "wrote {}", path.display())?;
    }
    if args.timestamps {
        let runs: Vec<(u64, Vec<f64>)> = (0..s.trials)
            .map(|k| {
                let mut rng = trial_rng(s.master_seed, k, Stream::Ticks);
                (
                    k,
                    sample_tick_durations(s.model.num_agents(), s.horizon as usize, &mut rng),
                )
            })
            .collect();
        let path = args.out.join("ticks.csv");
        write_ticks(BufWriter::new(std::fs::File::create(&path)?), &runs)?;
        writeln!(out, "wrote {}", path.display())?;
    }
    let mut code = EXIT_OK;
    if s.oracle_replay {
        let dir = args.out.join("events");
        std::fs::create_dir_all(&dir)?;
        let schedule = s.schedule();
        for t in &report.trials {
            let log = t.event_log.as_ref().ok_or("event log missing")?;
            let path = dir.join(format!("trial_{:04}.csv", t.trial_index));
            write_event_log(
                BufWriter::new(std::fs::File::create(&path)?),
                log,
                s.model.num_agents(),
            )?;
            let replayed = replay(log, &s.model, &schedule, &s.priors)?;
            if replayed.beliefs() != t.final_beliefs {
                writeln!(err, "replay mismatch in trial {}", t.trial_index)?;
                code = EXIT_VIOLATION;
            }
        }
        writeln!(
            out,
            "wrote {} event logs to {}",
            report.trials.len(),
            dir.display()
        )?;
    }
    let f = &report.summary.final_stats;
    writeln!(
        out,
        "trials {}: learned {:.2}, argmax {:.2}, consensus {:.2}",
        report.trials.len(),
        f.learned_fraction,
        f.argmax_fraction,
        f.consensus_fraction
    )?;
    Ok(code)
}

/// [`cmd_oracle_check_with`] using the library's gossip step.
pub fn cmd_oracle_check(
    path: &Path,
    t_max: u64,
    instances: u64,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    cmd_oracle_check_with(path, t_max, instances, &gossip_step, out, err)
}

/// Checks `instances` independent logs of `t_max` slots each, drawn from the
/// scenario, with `step` as the recursion under test.
pub fn cmd_oracle_check_with<F: StepFn>(
    path: &Path,
    t_max: u64,
    instances: u64,
    step: &F,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    let s = match load(path, err) {
        Ok(s) => s,
        Err(code) => return code,
    };
    let n = s.model.num_agents();
    let m = s.model.num_states();
    let usage = if t_max == 0 || t_max > MAX_SLOTS {
        Some(format!("--t-max must be in 1..={MAX_SLOTS}, got {t_max}"))
    } else if instances == 0 {
        Some("--instances must be at least 1".to_string())
    } else if n > MAX_AGENTS || m > MAX_STATES {
        Some(format!("oracle check supports at most {MAX_AGENTS} agents and {MAX_STATES} states, got {n} and {m}"))
    } else {
        None
    };
    if let Some(msg) = usage {
        writeln!(err, "error: {msg}").ok();
        return EXIT_USAGE;
    }
    let instance = OracleInstance {
        model: s.model.clone(),
        contact: s.effective_contact(),
        priors: s.priors.clone(),
        schedule: s.schedule(),
    };
    let mut worst: f64 = 0.0;
    for k in 0..instances {
        let mut rng = trial_rng(s.master_seed, k, Stream::Simulation);
        let report = match check_instance_with(&instance, t_max, &mut rng, step) {
            Ok(r) => r,
            Err(e) => {
                writeln!(
                    err,
                    "instance {k} (seed {:#018x}): {e}",
                    trial_seed(s.master_seed, k)
                )
                .ok();
                return EXIT_VIOLATION;
            }
        };
        worst = if report.max_deviation().is_nan() {
            f64::NAN
        } else {
            worst.max(report.max_deviation())
        };
        if !report.passes(ORACLE_TOL) {
            writeln!(
                err,
                "mismatch in instance {k} (seed {:#018x}): max deviation {:.3e}",
                trial_seed(s.master_seed, k),
                report.max_deviation()
            )
            .ok();
            writeln!(out, "max deviation {worst:.3e}").ok();
            return EXIT_VIOLATION;
        }
    }
    writeln!(
        out,
        "{instances} instances, t_max {t_max}: max deviation {worst:.3e}"
    )
    .ok();
    EXIT_OK
}
