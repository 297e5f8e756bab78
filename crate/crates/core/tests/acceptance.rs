//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Training criteria use the ci-small profile by default. Set
//! `SWING_PINN_FULL=1` to run the full-architecture variants of the
//! forward-accuracy and superiority criteria instead. Positional
//! arguments select criteria by number, e.g. `-- 1 3 7`.

use std::path::Path;
use std::process::Command;
use std::sync::Mutex;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use swing_pinn::autodiff::{derivative_extract, jet_seed_time, Jet3};
use swing_pinn::experiments::{
    inverse_experiment, residual_point_sweep, run_trials, transfer_experiment, ExperimentConfig,
    RegimeCalibration, StudySetup,
};
use swing_pinn::network::{init_mlp, Mlp};
use swing_pinn::oracle::{convergence_check, integrate_swing, DEFAULT_STEP};
use swing_pinn::physics::{energy, InitialCondition, Regime, SwingParams, TrainableMask};
use swing_pinn::training::{
    evaluate_loss, sample_collocation, taped_gradient, Architecture, LossMode, LossProblem,
    LossWeights, Measurement, TrainConfig,
};

/// Worst loss-accounting mismatch seen in any training run so far.
static ACCOUNTING: Mutex<(f64, usize)> = Mutex::new((0.0, 0));

fn audit(err: f64) {
    let mut g = ACCOUNTING.lock().unwrap();
    g.0 = g.0.max(err);
    g.1 += 1;
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn full_scale() -> bool {
    std::env::var_os("SWING_PINN_FULL").is_some()
}

fn ci_train(epochs: usize) -> TrainConfig {
    TrainConfig {
        architecture: Architecture::CiSmall,
        epochs,
        ..TrainConfig::default()
    }
}

fn calibration() -> RegimeCalibration {
    StudySetup {
        train: TrainConfig::default(),
        params: SwingParams::default(),
        ic: InitialCondition::default(),
        experiment: ExperimentConfig::default(),
        workers: 1,
    }
    .calibration()
    .expect("regime calibration")
}

fn setup(train: TrainConfig, experiment: ExperimentConfig) -> StudySetup {
    StudySetup {
        train,
        params: SwingParams::default(),
        ic: InitialCondition::default(),
        experiment,
        workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Fourth-order central difference of `f` at `x`.
fn central(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (-f(x + 2.0 * h) + 8.0 * f(x + h) - 8.0 * f(x - h) + f(x - 2.0 * h)) / (12.0 * h)
}

fn random_sizes(rng: &mut ChaCha8Rng) -> Vec<usize> {
    let hidden = rng.random_range(1..=2);
    let mut sizes = vec![1];
    for _ in 0..hidden {
        sizes.push(rng.random_range(1..=16));
    }
    sizes.push(1);
    sizes
}

fn c1_gradient_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    let mut route_gap = 0.0f64;
    for net in 0..20u64 {
        let sizes = random_sizes(&mut rng);
        let mlp = init_mlp(&sizes, 100 + net).unwrap();
        // Odd networks also estimate m_g and d_g from two measurements.
        let inverse = net % 2 == 1;
        let params = SwingParams {
            p_m: rng.random_range(0.0..0.25),
            trainable: if inverse { TrainableMask::BOTH } else { TrainableMask::NONE },
            ..SwingParams::default()
        };
        let physical = if inverse { vec![0.7, 0.3] } else { vec![] };
        let mut set = sample_collocation(20.0, &InitialCondition::default(), 8, net).unwrap();
        if inverse {
            set.measurements = vec![Measurement { t: 2.5, delta: 0.4 }, Measurement { t: 13.0, delta: 0.7 }];
        }
        for mode in [LossMode::Pinn, LossMode::Gpinn] {
            let problem = LossProblem {
                params: &params,
                set: &set,
                weights: LossWeights::default(),
                mode,
            };
            let fast = evaluate_loss(&mlp, &problem, &physical, true).unwrap();
            let taped = taped_gradient(&mlp, &problem, &physical).unwrap();
            let mut grad = fast.network_grad.clone();
            grad.extend(&fast.physical_grad);
            let mut theta = mlp.flat_params();
            theta.extend(&physical);
            let n_net = mlp.param_count();
            let loss_at = |i: usize, v: f64| {
                let mut th = theta.clone();
                th[i] = v;
                let mut m: Mlp = mlp.clone();
                m.set_flat_params(&th[..n_net]).unwrap();
                evaluate_loss(&m, &problem, &th[n_net..], false).unwrap().total
            };
            for i in 0..theta.len() {
                let fd = central(|v| loss_at(i, v), theta[i], 1e-4);
                let err = (grad[i] - fd).abs();
                let tol = (1e-6 * fd.abs()).max(1e-9);
                worst = worst.max(err / tol * 1e-6);
                if err > tol {
                    println!("    net {net} {mode} param {i}: analytic {} fd {fd}", grad[i]);
                }
                route_gap = route_gap.max((grad[i] - taped.values[i]).abs() / taped.values[i].abs().max(1e-9));
                checked += 1;
            }
        }
    }
    let pass = worst <= 1e-6;
    outcome(
        pass,
        format!("{checked} gradients, worst scaled error {worst:.2e} (tol 1e-6, floor 1e-9); tape vs batched gap {route_gap:.2e}"),
    )
}

fn c2_jet_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for pair in 0..100u64 {
        let sizes = random_sizes(&mut rng);
        let mlp = init_mlp(&sizes, pair).unwrap();
        let t = rng.random_range(0.0..20.0);
        let d = |k: usize, t: f64| derivative_extract(&mlp.forward_jet(jet_seed_time(t).unwrap()).unwrap(), k).unwrap();
        for k in 1..=3 {
            let fd = central(|s| d(k - 1, s), t, 1e-3);
            let exact = d(k, t);
            let rel = (exact - fd).abs() / fd.abs().max(1e-6);
            worst = worst.max(rel);
        }
    }
    let tanh = Jet3::new(0.0, 1.0, 0.0, 0.0).tanh();
    let sin = Jet3::new(0.0, 1.0, 0.0, 0.0).sin();
    let cos = Jet3::new(0.0, 1.0, 0.0, 0.0).cos();
    let cases = [
        (tanh.c, [0.0, 1.0, 0.0, -1.0 / 3.0]),
        (sin.c, [0.0, 1.0, 0.0, -1.0 / 6.0]),
        (cos.c, [1.0, 0.0, -0.5, 0.0]),
    ];
    let maclaurin = cases
        .iter()
        .flat_map(|(got, want)| got.iter().zip(want).map(|(g, w)| (g - w).abs()))
        .fold(0.0, f64::max);
    outcome(
        worst < 1e-4 && maclaurin <= 1e-14,
        format!("100 (network, t) pairs, worst relative error {worst:.2e} (tol 1e-4); Maclaurin max gap {maclaurin:.1e} (tol 1e-14)"),
    )
}

fn c3_oracle_validity() -> Outcome {
    let ic = InitialCondition::default();
    let undamped = SwingParams {
        d_g: 0.0,
        ..SwingParams::default()
    };
    let traj = integrate_swing(&undamped, &ic, 20.0, DEFAULT_STEP).unwrap();
    let e0 = energy(&undamped, traj.delta[0], traj.omega[0]);
    let drift = traj
        .delta
        .iter()
        .zip(&traj.omega)
        .map(|(d, w)| (energy(&undamped, *d, *w) - e0).abs())
        .fold(0.0, f64::max);
    let order = convergence_check(&SwingParams::default().with_p_m(0.14), &ic, 20.0).unwrap();
    let small = SwingParams {
        d_g: 0.0,
        p_m: 0.0,
        ..SwingParams::default()
    };
    let small_ic = InitialCondition {
        delta0: 0.01,
        omega0: 0.0,
        t0: 0.0,
    };
    let lin = integrate_swing(&small, &small_ic, 20.0, DEFAULT_STEP).unwrap();
    let w = (small.synchronizing_coefficient() / small.m_g).sqrt();
    let small_gap = lin
        .times
        .iter()
        .zip(&lin.delta)
        .map(|(t, d)| (d - 0.01 * (w * t).cos()).abs())
        .fold(0.0, f64::max);
    outcome(
        drift < 1e-8 && (3.8..=4.2).contains(&order) && small_gap < 2e-6,
        format!("energy drift {drift:.2e} (tol 1e-8); convergence order {order:.3} (in [3.8, 4.2]); small-angle gap {small_gap:.2e} (tol 2e-6)"),
    )
}

fn c4_forward_accuracy(cal: &RegimeCalibration) -> Outcome {
    let full = full_scale();
    let (train, seeds, tol_d, tol_w) = if full {
        (TrainConfig::default(), vec![0, 1, 2], 4.5e-2, Some(7e-2))
    } else {
        (ci_train(5000), vec![0, 1, 2], 1e-1, None)
    };
    let exp = ExperimentConfig {
        seeds,
        modes: vec![LossMode::Gpinn],
        regimes: vec![Regime::Stable],
        ..ExperimentConfig::default()
    };
    let started = Instant::now();
    let s = setup(train, exp);
    let table = run_trials(&s, cal).unwrap();
    let per_seed = started.elapsed().as_secs_f64() / table.records.len() as f64;
    for r in &table.records {
        audit(r.accounting_error);
    }
    let ok = table.records.iter().all(|r| {
        r.succeeded() && r.delta_l2 < tol_d && tol_w.is_none_or(|t| r.omega_l2 < t)
    });
    let profile = if full { "full" } else { "ci-small" };
    let errs: Vec<String> = table
        .records
        .iter()
        .map(|r| format!("seed {} δ {:.3e} ω {:.3e}", r.seed, r.delta_l2, r.omega_l2))
        .collect();
    let budget = if full { f64::INFINITY } else { 300.0 };
    outcome(
        ok && per_seed < budget,
        format!(
            "{profile}, P_m {}: {} (δ tol {tol_d:e}{}); {per_seed:.0} s per seed",
            cal.stable,
            errs.join(", "),
            tol_w.map(|t| format!(", ω tol {t:e}")).unwrap_or_default()
        ),
    )
}

fn c5_gpinn_superiority(cal: &RegimeCalibration) -> Outcome {
    let full = full_scale();
    let (train, factor) = if full {
        (TrainConfig::default(), 3.0)
    } else {
        (ci_train(20_000), 2.0)
    };
    let exp = ExperimentConfig {
        regimes: vec![Regime::Oscillating],
        ..ExperimentConfig::default()
    };
    let table = run_trials(&setup(train, exp), cal).unwrap();
    for r in &table.records {
        audit(r.accounting_error);
    }
    let g = mean(&table.values(LossMode::Gpinn, Regime::Oscillating, "delta_l2"));
    let p = mean(&table.values(LossMode::Pinn, Regime::Oscillating, "delta_l2"));
    outcome(
        g <= p / factor,
        format!(
            "{}, P_m {}, 10 seed pairs: gPINN mean δ {g:.3e}, PINN mean δ {p:.3e}, ratio {:.2} (need ≥ {factor})",
            if full { "full" } else { "ci-small" },
            cal.oscillating,
            p / g
        ),
    )
}

fn c6_point_sweep(cal: &RegimeCalibration) -> Outcome {
    let counts = [30, 70, 110, 150];
    let s = setup(ci_train(5000), ExperimentConfig::default());
    let sweep = residual_point_sweep(&s, cal, &counts).unwrap();
    for r in &sweep.trials.records {
        audit(r.accounting_error);
    }
    let mut ok = sweep.trials.successes() == sweep.trials.records.len();
    let mut parts = Vec::new();
    for n in counts {
        let g = sweep.row(n, LossMode::Gpinn).map_or(f64::NAN, |r| r.mean);
        let p = sweep.row(n, LossMode::Pinn).map_or(f64::NAN, |r| r.mean);
        ok &= g <= p;
        parts.push(format!("{n}: gPINN {g:.3e} vs PINN {p:.3e}"));
    }
    outcome(ok, format!("ci-small, 10 seeds, mean δ error by count: {}", parts.join("; ")))
}

fn c7_transfer(cal: &RegimeCalibration) -> Outcome {
    let started = Instant::now();
    let train = TrainConfig {
        transfer_epochs: 5000,
        ..ci_train(20_000)
    };
    let exp = ExperimentConfig {
        seeds: vec![0],
        ..ExperimentConfig::default()
    };
    let result = transfer_experiment(&setup(train, exp), cal).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for run in &result.runs {
        audit(run.accounting_error);
        let (cold, warm) = run.losses_at(1000).unwrap();
        let continuity = (run.continuity_loss - run.source_final_loss).abs() / run.source_final_loss;
        ok &= warm <= 1e-2 * cold && continuity <= 1e-12;
        parts.push(format!(
            "{}: warm/cold at epoch 1000 = {:.3e}/{:.3e} = {:.2e} (need ≤ 1e-2), continuity gap {continuity:.1e}, warm δ {:.3e}",
            run.model,
            warm,
            cold,
            warm / cold,
            run.warm_errors.delta_l2
        ));
    }
    let secs = started.elapsed().as_secs_f64();
    ok &= secs < 1800.0;
    let target = result.runs.first().map_or(f64::NAN, |r| r.target_p_m);
    outcome(
        ok,
        format!("P_m {} → {target:.4}: {}; {secs:.0} s", cal.stable, parts.join("; ")),
    )
}

fn c8_inverse(cal: &RegimeCalibration) -> Outcome {
    let s = setup(ci_train(20_000), ExperimentConfig::default());
    let table = inverse_experiment(&s, cal).unwrap();
    for r in &table.records {
        audit(r.accounting_error);
    }
    let g_m = table.values(LossMode::Gpinn, Regime::Stable, "m_l1");
    let g_d = table.values(LossMode::Gpinn, Regime::Stable, "d_l1");
    let p_m = table.values(LossMode::Pinn, Regime::Stable, "m_l1");
    let p_d = table.values(LossMode::Pinn, Regime::Stable, "d_l1");
    let good = g_m.iter().zip(&g_d).filter(|(m, d)| **m < 2e-2 && **d < 2e-2).count();
    let ok = good >= 8 && mean(&g_m) < mean(&p_m) && mean(&g_d) < mean(&p_d);
    outcome(
        ok,
        format!(
            "ci-small, 5 measurements: gPINN seeds within 2e-2 on both: {good}/10 (need ≥ 8); mean m_l1 gPINN {:.3e} vs PINN {:.3e}; mean d_l1 gPINN {:.3e} vs PINN {:.3e}",
            mean(&g_m),
            mean(&p_m),
            mean(&g_d),
            mean(&p_d)
        ),
    )
}

fn run_cli(args: &[&str]) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_swing-pinn"))
        .args(args)
        .output()
        .expect("run CLI")
        .status
        .code()
        .unwrap_or(-1)
}

fn dir_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn c9_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("run.toml");
    std::fs::write(
        &cfg_path,
        "[swing]\np_m = 0.14\n\n[train]\narchitecture = \"ci-small\"\nepochs = 30\nresidual_points = 40\n\n\
         [experiment]\nseeds = [3]\nregimes = [\"Stable\"]\ngrid_resolution = 200\n",
    )
    .unwrap();
    let cfg = cfg_path.to_str().unwrap();
    let digest = swing_pinn::config::RunConfig::load(&cfg_path).unwrap().digest().unwrap();
    let commands: [&[&str]; 4] = [
        &["simulate"],
        &["train", "--mode", "gpinn"],
        &["inverse", "--auto", "5"],
        &["experiment", "--suite", "forward", "--workers", "1"],
    ];
    let mut ok = true;
    let mut files_checked = 0;
    let mut notes = Vec::new();
    for (i, cmd) in commands.iter().enumerate() {
        let mut runs = Vec::new();
        for rep in 0..2 {
            let out = tmp.path().join(format!("c{i}_r{rep}"));
            let mut args = cmd.to_vec();
            args.extend(["--config", cfg, "--out-dir", out.to_str().unwrap()]);
            let code = run_cli(&args);
            if code != 0 {
                ok = false;
                notes.push(format!("`{}` exited {code}", cmd.join(" ")));
            }
            runs.push(dir_files(&out));
        }
        if runs[0] != runs[1] || runs[0].is_empty() {
            ok = false;
            notes.push(format!("`{}` outputs differ", cmd.join(" ")));
        }
        for (name, bytes) in &runs[0] {
            files_checked += 1;
            let text = String::from_utf8_lossy(bytes);
            // Commands with flag overrides stamp the digest of the resolved config.
            let stamped = text.lines().take(2).any(|l| {
                let tag = l.strip_prefix("# config_digest: ").or_else(|| l.strip_prefix("config_digest "));
                tag.is_some_and(|d| {
                    d.len() == 64 && (i != 0 || d == digest)
                })
            });
            if !stamped {
                ok = false;
                notes.push(format!("{name} lacks the config digest"));
            }
        }
    }
    outcome(
        ok,
        format!("4 commands run twice, {files_checked} files byte-identical with digest headers{}", if notes.is_empty() { String::new() } else { format!(": {}", notes.join("; ")) }),
    )
}

fn c10_accounting() -> Outcome {
    let (mut worst, mut runs) = *ACCOUNTING.lock().unwrap();
    if runs == 0 {
        // Run standalone: a few short training runs in both modes.
        for mode in [LossMode::Pinn, LossMode::Gpinn] {
            let cfg = TrainConfig { mode, ..ci_train(200) };
            let r = swing_pinn::training::train_forward(&cfg, &SwingParams::default().with_p_m(0.14), &InitialCondition::default()).unwrap();
            worst = worst.max(r.accounting_error());
            runs += 1;
        }
    }
    outcome(
        worst <= 1e-12,
        format!("{runs} training runs, worst relative gap between total and weighted components {worst:.2e} (tol 1e-12)"),
    )
}

fn main() {
    let selected: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let want = |n: u32| selected.is_empty() || selected.contains(&n);
    let needs_cal = (4..=8).any(want);
    let cal = needs_cal.then(calibration);
    if let Some(c) = &cal {
        println!(
            "calibrated P_m: stable {}, oscillating {}, unstable {}",
            c.stable, c.oscillating, c.unstable
        );
    }
    type Criterion<'a> = (u32, &'a str, Box<dyn Fn() -> Outcome + 'a>);
    let cal_ref = cal.as_ref();
    let criteria: Vec<Criterion> = vec![
        (1, "gradient exactness", Box::new(c1_gradient_exactness)),
        (2, "jet correctness", Box::new(c2_jet_correctness)),
        (3, "oracle validity", Box::new(c3_oracle_validity)),
        (4, "forward accuracy", Box::new(move || c4_forward_accuracy(cal_ref.unwrap()))),
        (5, "gPINN superiority", Box::new(move || c5_gpinn_superiority(cal_ref.unwrap()))),
        (6, "residual-point sweep", Box::new(move || c6_point_sweep(cal_ref.unwrap()))),
        (7, "transfer learning", Box::new(move || c7_transfer(cal_ref.unwrap()))),
        (8, "inverse identification", Box::new(move || c8_inverse(cal_ref.unwrap()))),
        (9, "determinism and provenance", Box::new(c9_determinism)),
        (10, "loss accounting", Box::new(c10_accounting)),
    ];
    let mut failed = Vec::new();
    for (n, name, run) in &criteria {
        if !want(*n) {
            continue;
        }
        let started = Instant::now();
        let o = run();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {n:>2} [{tag}] {name}: {} ({:.1} s)",
            o.detail,
            started.elapsed().as_secs_f64()
        );
        if !o.pass {
            failed.push(*n);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all selected criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
