use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use etfusion::harness::{
    check_stability, first_step_problems, meta_json, prepare_output_dir, run_config, sweep, sweep_csv,
    write_run_outputs, Metrics, Prepared, ScenarioConfig,
};
use etfusion::lmi::{dump, solve};
use etfusion::Error;
use serde_json::json;

const SCHEMA: &str = "\
CONFIGURATION FILES

Sectioned key-value text (TOML syntax). Unknown keys are rejected and listed.

[scenario]     algorithm = \"sre\" | \"sfc\" (required); name; noise = \"bounded\" | \"gaussian\";
               horizon (300); runs (100); seed; burn_in (50);
               baselines = [\"ekf\", \"ukf\", \"ckf\"] (measurement links only)
[channel]      mode = \"none\" | \"ets\" | \"drs\" | \"ets+drs\" (required);
               thresholds = [per link]; budgets = [per link]; global_budget;
               policy = \"round_robin\" | \"greedy_residual\" | \"categorical\" | \"fixed\";
               probabilities = [[per pattern] per link]; fixed = [[indices] per link]
[model]        sample_time; speed; turn_rate; anchors = [[[x, y], ...] per link];
               noise_gains; x0; xhat0; p0; command_scale; command_offset;
               sensor_scale; sensor_offset; process_variance; sensor_variance
[uncertainty]  m_f; m_h; l_f; l_h; l_c (diagonals per link); alpha_m; alpha_s
[solver]       gap_tol; max_newton; mu; newton_tol; zeta = \"literal\" | \"contractive\";
               alpha_border = \"scaled\" | \"unscaled\"; freeze_after; warm_start (true)
[stability]    window (10); samples (1000); trigger_rate; pilot (true)
[sweep]        axis = \"threshold\" | \"budget\" | \"strategy\";
               thresholds = [...]; budgets = [[...], ...]; strategies = [modes]

A bare file name that does not exist is looked up in ./configs.

EXIT CODES
  0 success, 2 configuration error, 3 numerical failure, 1 anything else";

#[derive(Parser)]
#[command(name = "etfusion", version, about = "Event-triggered distributed fusion estimation simulator", after_long_help = SCHEMA)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Suppress everything except errors.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(clap::Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for the Monte Carlo runs.
    #[arg(long)]
    jobs: Option<usize>,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo runs of one scenario.
    Run(Common),
    /// One Monte Carlo batch per value of the sweep axis.
    Sweep(Common),
    /// Mean and window stability conditions of the compensation loops.
    CheckStability(Common),
    /// Export the step-1 gain and fusion problems, then solve them.
    SolveLmiDump(Common),
    /// List the shipped scenario files.
    ListScenarios {
        #[arg(long, default_value = "configs")]
        dir: PathBuf,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_config() {
            2
        } else if matches!(e, Error::Numerical(_) | Error::NonFinite { .. } | Error::Diverged { .. }) {
            3
        } else {
            1
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}

struct Printer {
    quiet: bool,
}

impl Printer {
    fn line(&self, s: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", s.as_ref());
        }
    }

    fn timing(&self, what: &str, start: Instant) {
        self.line(format!("# {what} took {:.2} s", start.elapsed().as_secs_f64()));
    }
}

fn resolve(path: &Path) -> PathBuf {
    if !path.exists() && path.is_relative() {
        let shipped = Path::new("configs").join(path);
        if shipped.exists() {
            return shipped;
        }
    }
    path.to_path_buf()
}

fn load(c: &Common) -> Result<ScenarioConfig, Failure> {
    let mut config = ScenarioConfig::load(&resolve(&c.config))?;
    if let Some(seed) = c.seed {
        config.scenario.seed = Some(seed);
    }
    Ok(config)
}

fn output_dir(c: &Common) -> Result<Option<&Path>, Failure> {
    match &c.out {
        Some(dir) => {
            prepare_output_dir(dir, c.force)?;
            Ok(Some(dir))
        }
        None => Ok(None),
    }
}

fn print_metrics(p: &Printer, m: &Metrics) {
    p.line("estimator,time_avg_rmse");
    for (name, v) in m.names.iter().zip(&m.time_avg_rmse) {
        p.line(format!("{name},{v:.6}"));
    }
    let rates: Vec<String> = m.trigger_rate.iter().map(|r| format!("{r:.4}")).collect();
    p.line(format!("trigger_rate,{}", rates.join(",")));
    p.line(format!("bandwidth,{:.4}", m.bandwidth));
}

fn cmd_run(p: &Printer, c: &Common) -> Result<(), Failure> {
    let config = load(c)?;
    let out = output_dir(c)?;
    let start = Instant::now();
    let (records, metrics) = run_config(&config, c.jobs)?;
    p.timing("monte carlo", start);
    print_metrics(p, &metrics);
    if let Some(dir) = out {
        write_run_outputs(dir, &config, &records, &metrics, json!({"verb": "run"}))?;
    }
    Ok(())
}

fn cmd_sweep(p: &Printer, c: &Common) -> Result<(), Failure> {
    let config = load(c)?;
    let out = output_dir(c)?;
    let start = Instant::now();
    let cells = sweep(&config, c.jobs)?;
    p.timing("sweep", start);
    let table = sweep_csv(&cells);
    for line in table.lines() {
        p.line(line);
    }
    if let Some(dir) = out {
        fs::write(dir.join("sweep.csv"), &table)?;
        let extra = json!({"verb": "sweep", "cells": cells});
        fs::write(dir.join("meta.json"), meta_json(&config, None, &[], extra))?;
    }
    Ok(())
}

fn cmd_check_stability(p: &Printer, c: &Common) -> Result<(), Failure> {
    let config = load(c)?;
    let out = output_dir(c)?;
    let prep = Prepared::new(&config)?;
    let start = Instant::now();
    let links = check_stability(&prep)?;
    p.timing("stability checks", start);
    let verdict = |ok: bool| if ok { "holds" } else { "fails" };
    for l in &links {
        p.line(format!(
            "link {}: trigger_rate {:.4} ({})",
            l.link, l.trigger_rate, l.trigger_source
        ));
        let rho = l.rho.map_or("-".to_string(), |r| format!("{r:.6}"));
        p.line(format!(
            "  mean condition {}: rho {rho}, nominal norm {:.6}, sampled max {:.6}",
            verdict(l.mean_holds),
            l.mean_nominal,
            l.mean_sampled_max
        ));
        p.line(format!(
            "  window condition {}: nominal {:.6}, envelope {:.6}, sampled max {:.6}",
            verdict(l.window_holds),
            l.window_nominal,
            l.window_envelope,
            l.window_sampled_max
        ));
    }
    if let Some(dir) = out {
        let extra = json!({"verb": "check-stability", "links": links});
        fs::write(dir.join("meta.json"), meta_json(&config, None, &[], extra))?;
    }
    Ok(())
}

fn cmd_solve_lmi_dump(p: &Printer, c: &Common) -> Result<(), Failure> {
    let config = load(c)?;
    let out = output_dir(c)?;
    let prep = Prepared::new(&config)?;
    let problems = first_step_problems(&prep)?;
    if problems.is_empty() {
        p.line("no problems are assembled at step 1");
    }
    for (name, problem) in &problems {
        if let Some(dir) = out {
            fs::write(dir.join(format!("step1_{name}.lmi")), dump(problem))?;
        }
        let start = Instant::now();
        let sol = solve(problem, &prep.solver);
        p.timing(name, start);
        p.line(format!(
            "{name}: {} coordinates, {} constraints, status {:?}, objective {:.9e}, newton steps {}",
            problem.n_coords,
            problem.constraints.len(),
            sol.status,
            sol.objective,
            sol.newton_steps
        ));
    }
    Ok(())
}

fn cmd_list(p: &Printer, dir: &Path) -> Result<(), Failure> {
    let mut files = Vec::new();
    let mut pending = vec![dir.to_path_buf()];
    while let Some(d) = pending.pop() {
        let entries = fs::read_dir(&d).map_err(|e| Failure {
            code: 2,
            message: format!("cannot list {}: {e}", d.display()),
        })?;
        for entry in entries {
            let path = entry?.path();
            if path.is_dir() {
                pending.push(path);
            } else if path.extension().is_some_and(|e| e == "cfg") {
                files.push(path);
            }
        }
    }
    files.sort();
    for f in files {
        let rel = f.strip_prefix(dir).unwrap_or(&f);
        let desc = match ScenarioConfig::load(&f) {
            Ok(c) => {
                let sweep = c.sweep.as_ref().and_then(|s| s.axis).map(|a| format!(", sweep over {a:?}").to_lowercase());
                format!("{:?} / {}{}", c.algorithm(), c.mode().label(), sweep.unwrap_or_default()).to_lowercase()
            }
            Err(e) => format!("invalid: {e}"),
        };
        p.line(format!("{}\t{desc}", rel.display()));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if cli.quiet { "error" } else { "warn" }))
        .format_timestamp(None)
        .init();
    let p = Printer { quiet: cli.quiet };
    let result = match &cli.command {
        Command::Run(c) => cmd_run(&p, c),
        Command::Sweep(c) => cmd_sweep(&p, c),
        Command::CheckStability(c) => cmd_check_stability(&p, c),
        Command::SolveLmiDump(c) => cmd_solve_lmi_dump(&p, c),
        Command::ListScenarios { dir } => cmd_list(&p, dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
