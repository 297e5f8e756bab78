//! Command-line front end. Every file written carries the digest of the
//! resolved configuration; nothing time-dependent is written to disk.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::csvfmt::{fmt_f64, write_digest_header};
use crate::error::{Error, Result};
use crate::experiments::{
    evaluate_model, inverse_experiment, oracle_measurements, reference_trajectory,
    residual_point_sweep, run_trials, transfer_experiment, StudySetup, Suite, TrialTable,
};
use crate::network::{load_checkpoint, save_checkpoint};
use crate::oracle::integrate_swing;
use crate::physics::{classify_regime, TrainableMask};
use crate::training::{
    train_forward, train_inverse, warm_start_trainer, LossMode, Measurement, TrainResult,
};

/// Exit code when too few experiment trials succeed.
pub const EXIT_QUOTA: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "swing-pinn", version, about = "Physics-informed networks for the swing equation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub mode: Option<LossMode>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Epoch budget; for warm starts this replaces the transfer budget.
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate the swing equation and classify the regime.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Train a forward model, optionally warm-started from a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        warm_start: Option<PathBuf>,
    },
    /// Estimate inertia and damping from angle measurements.
    Inverse {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        train: TrainArgs,
        /// CSV with columns `t,delta`.
        #[arg(long, conflicts_with = "auto")]
        measurements: Option<PathBuf>,
        /// Draw this many oracle measurements at random times.
        #[arg(long)]
        auto: Option<usize>,
    },
    /// Run a multi-seed study.
    Experiment {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        suite: Suite,
        /// Worker threads; defaults to the available cores.
        #[arg(long)]
        workers: Option<usize>,
    },
}

fn load_config(common: &Common, train: Option<&TrainArgs>) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(dir) = &common.out_dir {
        cfg.output.out_dir = dir.clone();
    }
    if let Some(t) = train {
        if let Some(mode) = t.mode {
            cfg.train.mode = mode;
        }
        if let Some(seed) = t.seed {
            cfg.train.seed = seed;
        }
        if let Some(epochs) = t.epochs {
            cfg.train.epochs = epochs;
            cfg.train.transfer_epochs = epochs;
        }
    }
    Ok(cfg)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_file(dir: &Path, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut out = create(dir, name)?;
    f(&mut out)?;
    out.flush()?;
    Ok(())
}

fn write_metrics(dir: &Path, digest: &str, rows: &[(&str, f64)]) -> Result<()> {
    write_file(dir, "metrics.csv", |out| {
        write_digest_header(out, digest)?;
        writeln!(out, "metric,value")?;
        for (name, v) in rows {
            writeln!(out, "{name},{}", fmt_f64(*v))?;
        }
        Ok(())
    })
}

fn save_run(dir: &Path, digest: &str, result: &TrainResult) -> Result<()> {
    fs::create_dir_all(dir)?;
    save_checkpoint(&result.checkpoint(digest), &dir.join("checkpoint.txt"))?;
    write_file(dir, "history.csv", |out| result.write_history_csv(out, digest))
}

fn cmd_simulate(cfg: &RunConfig) -> Result<i32> {
    let digest = cfg.digest()?;
    let traj = integrate_swing(&cfg.swing, &cfg.initial_condition, cfg.train.horizon, cfg.simulate.step)?;
    let regime = classify_regime(&traj, &cfg.swing)?;
    write_file(&cfg.output.out_dir, "trajectory.csv", |out| traj.write_csv(out, Some(&digest)))?;
    println!("regime: {regime}");
    println!("rows: {}", traj.len());
    Ok(0)
}

fn cmd_train(mut cfg: RunConfig, warm: Option<PathBuf>) -> Result<i32> {
    if warm.is_some() {
        cfg.train.warm_start = warm;
    }
    cfg.validate()?;
    let digest = cfg.digest()?;
    let (p, ic) = (cfg.swing, cfg.initial_condition);
    let result = match &cfg.train.warm_start {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            let mut tr = warm_start_trainer(&ck, &cfg.train, &p, &ic)?;
            tr.run(cfg.train.transfer_epochs)?;
            tr.finish()?
        }
        None => train_forward(&cfg.train, &p, &ic)?,
    };
    let err = evaluate_model(&result.mlp, &p, &ic, cfg.train.horizon, cfg.experiment.grid_resolution)?;
    let dir = &cfg.output.out_dir;
    save_run(dir, &digest, &result)?;
    write_metrics(
        dir,
        &digest,
        &[
            ("final_loss", result.final_loss),
            ("delta_l2", err.delta_l2),
            ("omega_l2", err.omega_l2),
        ],
    )?;
    println!("final loss: {}", fmt_f64(result.final_loss));
    println!("delta L2 relative error: {}", fmt_f64(err.delta_l2));
    println!("omega L2 relative error: {}", fmt_f64(err.omega_l2));
    Ok(0)
}

/// Reads `t,delta` rows; `#` lines and a `t,delta` header are skipped.
pub fn read_measurements(path: &Path) -> Result<Vec<Measurement>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::invalid(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.replace(' ', "") == "t,delta" {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = || Error::invalid(format!("{}:{}: expected `t,delta`, got `{line}`", path.display(), i + 1));
        if fields.len() != 2 {
            return Err(bad());
        }
        let t: f64 = fields[0].parse().map_err(|_| bad())?;
        let delta: f64 = fields[1].parse().map_err(|_| bad())?;
        out.push(Measurement { t, delta });
    }
    if out.is_empty() {
        return Err(Error::invalid(format!("{} has no measurements", path.display())));
    }
    Ok(out)
}

fn cmd_inverse(cfg: RunConfig, file: Option<PathBuf>, auto: Option<usize>) -> Result<i32> {
    cfg.validate()?;
    let digest = cfg.digest()?;
    let ic = cfg.initial_condition;
    let truth = cfg.swing;
    let mut unknown = truth;
    if unknown.trainable.is_empty() {
        unknown.trainable = TrainableMask::BOTH;
    }
    let (measurements, truth_known) = match (file, auto) {
        (Some(path), _) => (read_measurements(&path)?, false),
        (None, n) => {
            let n = n.unwrap_or(5);
            if n == 0 {
                return Err(Error::invalid("--auto needs at least one measurement"));
            }
            let traj = reference_trajectory(&truth, &ic, cfg.train.horizon)?;
            (
                oracle_measurements(&traj, ic.t0, cfg.train.horizon, n, cfg.train.seed)?,
                true,
            )
        }
    };
    let result = train_inverse(&cfg.train, &unknown, &ic, &measurements)?;
    let (m, d) = result.estimates(&unknown)?;
    let dir = &cfg.output.out_dir;
    save_run(dir, &digest, &result)?;
    write_file(dir, "measurements.csv", |out| {
        write_digest_header(out, &digest)?;
        writeln!(out, "t,delta")?;
        for m in &measurements {
            writeln!(out, "{},{}", fmt_f64(m.t), fmt_f64(m.delta))?;
        }
        Ok(())
    })?;
    let mut rows = vec![("m_hat", m), ("d_hat", d), ("final_loss", result.final_loss)];
    println!("m_g estimate: {}", fmt_f64(m));
    println!("d_g estimate: {}", fmt_f64(d));
    if truth_known {
        let m_l1 = crate::experiments::l1_rel_error(m, truth.m_g)?;
        let d_l1 = crate::experiments::l1_rel_error(d, truth.d_g)?;
        println!("m_g L1 relative error: {}", fmt_f64(m_l1));
        println!("d_g L1 relative error: {}", fmt_f64(d_l1));
        rows.push(("m_l1", m_l1));
        rows.push(("d_l1", d_l1));
    }
    if result.negative_estimates {
        println!("warning: negative parameter estimate");
    }
    write_metrics(dir, &digest, &rows)?;
    Ok(0)
}

fn quota(table: &TrialTable, min_fraction: f64) -> i32 {
    let frac = table.success_fraction();
    println!("trials succeeded: {}/{}", table.successes(), table.records.len());
    if frac + 1e-12 < min_fraction {
        eprintln!("error: success fraction {frac:.3} below required {min_fraction:.3}");
        EXIT_QUOTA
    } else {
        0
    }
}

fn cmd_experiment(cfg: RunConfig, suite: Suite, workers: Option<usize>) -> Result<i32> {
    cfg.validate()?;
    let digest = cfg.digest()?;
    let workers = workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    let setup = StudySetup {
        train: cfg.train.clone(),
        params: cfg.swing,
        ic: cfg.initial_condition,
        experiment: cfg.experiment.clone(),
        workers,
    };
    let dir = &cfg.output.out_dir;
    let min_fraction = cfg.experiment.min_success_fraction;
    let cal = setup.calibration()?;
    write_file(dir, "calibration.csv", |out| cal.write_csv(out, &digest))?;
    println!(
        "calibrated P_m: stable {}, oscillating {}, unstable {}",
        cal.stable, cal.oscillating, cal.unstable
    );
    match suite {
        Suite::Forward => {
            let table = run_trials(&setup, &cal)?;
            write_file(dir, "trials.csv", |out| table.write_trials_csv(out, &digest))?;
            write_file(dir, "summary.csv", |out| table.write_summary_csv(out, &digest))?;
            Ok(quota(&table, min_fraction))
        }
        Suite::Inverse => {
            let table = inverse_experiment(&setup, &cal)?;
            write_file(dir, "trials.csv", |out| table.write_trials_csv(out, &digest))?;
            write_file(dir, "summary.csv", |out| table.write_summary_csv(out, &digest))?;
            Ok(quota(&table, min_fraction))
        }
        Suite::Sweep => {
            let sweep = residual_point_sweep(&setup, &cal, &cfg.experiment.point_counts)?;
            write_file(dir, "sweep.csv", |out| sweep.write_sweep_csv(out, &digest))?;
            write_file(dir, "trials.csv", |out| sweep.write_trials_csv(out, &digest))?;
            Ok(quota(&sweep.trials, min_fraction))
        }
        Suite::Transfer => {
            let result = transfer_experiment(&setup, &cal)?;
            write_file(dir, "transfer.csv", |out| result.write_transfer_csv(out, &digest))?;
            write_file(dir, "transfer_summary.csv", |out| {
                write_digest_header(out, &digest)?;
                writeln!(
                    out,
                    "model,source_p_m,target_p_m,source_final_loss,continuity_loss,cold_loss_1000,warm_loss_1000,cold_delta_l2,warm_delta_l2,warm_omega_l2"
                )?;
                for r in &result.runs {
                    let (c, w) = r.losses_at(1000).unwrap_or((f64::NAN, f64::NAN));
                    writeln!(
                        out,
                        "{},{},{},{},{},{},{},{},{},{}",
                        r.model,
                        fmt_f64(r.source_p_m),
                        fmt_f64(r.target_p_m),
                        fmt_f64(r.source_final_loss),
                        fmt_f64(r.continuity_loss),
                        fmt_f64(c),
                        fmt_f64(w),
                        fmt_f64(r.cold_errors.delta_l2),
                        fmt_f64(r.warm_errors.delta_l2),
                        fmt_f64(r.warm_errors.omega_l2)
                    )?;
                }
                Ok(())
            })?;
            Ok(0)
        }
    }
}

/// Runs a parsed command and returns the process exit code.
pub fn execute(cli: Cli) -> i32 {
    let outcome = match cli.command {
        Command::Simulate { common } => load_config(&common, None).and_then(|cfg| {
            cfg.validate()?;
            cmd_simulate(&cfg)
        }),
        Command::Train { common, train, warm_start } => {
            load_config(&common, Some(&train)).and_then(|cfg| cmd_train(cfg, warm_start))
        }
        Command::Inverse {
            common,
            train,
            measurements,
            auto,
        } => load_config(&common, Some(&train)).and_then(|cfg| cmd_inverse(cfg, measurements, auto)),
        Command::Experiment {
            common,
            train,
            suite,
            workers,
        } => load_config(&common, Some(&train)).and_then(|cfg| cmd_experiment(cfg, suite, workers)),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Usage errors exit with the configuration error code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(cli),
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            code
        }
    }
}
