//! Error metrics, regime calibration, and the multi-seed studies: forward
//! accuracy statistics, residual-point sweep, transfer learning, and
//! inverse parameter discovery.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::jet_seed_time;
use crate::csvfmt::{fmt_f64, write_digest_header};
use crate::error::{Error, Result};
use crate::network::Mlp;
use crate::oracle::{integrate_swing, integrate_swing_partial, sample_trajectory, Trajectory, DEFAULT_STEP};
use crate::physics::{classify_regime, InitialCondition, Regime, SwingParams, TrainableMask};
use crate::training::{
    sample_measurement_times, train_forward, train_inverse, warm_start_trainer, EpochRecord,
    LossMode, Measurement, TrainConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Forward,
    Sweep,
    Transfer,
    Inverse,
}

impl std::str::FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(Suite::Forward),
            "sweep" => Ok(Suite::Sweep),
            "transfer" => Ok(Suite::Transfer),
            "inverse" => Ok(Suite::Inverse),
            other => Err(Error::invalid(format!(
                "unknown suite `{other}` (forward|sweep|transfer|inverse)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub modes: Vec<LossMode>,
    pub regimes: Vec<Regime>,
    pub grid_resolution: usize,
    pub point_counts: Vec<usize>,
    /// Measurements per inverse trial.
    pub measurements: usize,
    /// Bounds of the calibration sweep over `P_m`, p.u.
    pub p_m_range: [f64; 2],
    pub p_m_step: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stable_p_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oscillating_p_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unstable_p_m: Option<f64>,
    /// Target of the transfer study; defaults to the stable value plus
    /// `transfer_offset`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transfer_target_p_m: Option<f64>,
    pub transfer_offset: f64,
    /// Fraction of trials that must succeed.
    pub min_success_fraction: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seeds: (0..10).collect(),
            modes: vec![LossMode::Pinn, LossMode::Gpinn],
            regimes: Regime::ALL.to_vec(),
            grid_resolution: 1000,
            point_counts: vec![30, 70, 110, 150, 190],
            measurements: 5,
            p_m_range: [0.0, 0.25],
            p_m_step: 0.005,
            stable_p_m: None,
            oscillating_p_m: None,
            unstable_p_m: None,
            transfer_target_p_m: None,
            transfer_offset: 0.005,
            min_success_fraction: 0.8,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::invalid("experiment needs at least one seed"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("experiment seeds must be distinct"));
        }
        if self.modes.is_empty() || self.regimes.is_empty() {
            return Err(Error::invalid("experiment needs at least one mode and one regime"));
        }
        if self.grid_resolution < 2 {
            return Err(Error::invalid("grid_resolution must be at least 2"));
        }
        if self.point_counts.is_empty()
            || self.point_counts.contains(&0)
            || self.point_counts.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::invalid("point_counts must be positive and strictly ascending"));
        }
        if self.measurements == 0 {
            return Err(Error::invalid("measurements must be positive"));
        }
        let [lo, hi] = self.p_m_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi && self.p_m_step > 0.0) {
            return Err(Error::invalid("p_m_range must be an increasing pair and p_m_step positive"));
        }
        if !(0.0..=1.0).contains(&self.min_success_fraction) {
            return Err(Error::invalid("min_success_fraction must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// `‖pred − truth‖₂ / ‖truth‖₂`.
pub fn l2_rel_error(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() || truth.is_empty() {
        return Err(Error::invalid(format!(
            "need equal non-empty lengths, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    let num: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    let den: f64 = truth.iter().map(|t| t * t).sum();
    if den == 0.0 {
        return Err(Error::invalid("reference vector has zero norm"));
    }
    Ok((num / den).sqrt())
}

/// `|pred − truth| / |truth|`.
pub fn l1_rel_error(pred: f64, truth: f64) -> Result<f64> {
    if truth == 0.0 {
        return Err(Error::invalid("reference value is zero"));
    }
    Ok((pred - truth).abs() / truth.abs())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatSummary {
    pub label: String,
    pub n_trials: usize,
    pub min: f64,
    pub average: f64,
    pub max: f64,
    /// Sample standard deviation (`n − 1` denominator); 0 for one trial.
    pub standard_deviation: f64,
}

impl StatSummary {
    pub fn from_values(label: impl Into<String>, values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("cannot summarize zero values"));
        }
        let n = values.len();
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let average = values.iter().sum::<f64>() / n as f64;
        let standard_deviation = if n > 1 {
            let ss: f64 = values.iter().map(|v| (v - average).powi(2)).sum();
            (ss / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Ok(StatSummary {
            label: label.into(),
            n_trials: n,
            min,
            average,
            max,
            standard_deviation,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelErrors {
    pub delta_l2: f64,
    pub omega_l2: f64,
    /// Last grid time included in the comparison.
    pub evaluated_until: f64,
    /// Set when the oracle diverged before the end of the horizon.
    pub truncated: bool,
}

/// `n` uniformly spaced times covering `[t0, t0 + horizon]`.
pub fn evaluation_grid(t0: f64, horizon: f64, n: usize) -> Vec<f64> {
    let denom = (n.max(2) - 1) as f64;
    (0..n).map(|i| t0 + horizon * i as f64 / denom).collect()
}

/// Compares δ̂ = c0 and ω̂ = dδ̂/dt with an oracle trajectory on `grid`.
pub fn errors_against(mlp: &Mlp, traj: &Trajectory, grid: &[f64]) -> Result<ModelErrors> {
    let t_end = traj.t_end();
    let kept: Vec<f64> = grid.iter().copied().filter(|&t| t <= t_end).collect();
    if kept.len() < 2 {
        return Err(Error::invalid("oracle covers fewer than two evaluation points"));
    }
    let truth = sample_trajectory(traj, &kept)?;
    let mut pred_d = Vec::with_capacity(kept.len());
    let mut pred_w = Vec::with_capacity(kept.len());
    for &t in &kept {
        let y = mlp.forward_jet(jet_seed_time(t)?)?;
        pred_d.push(y.c[0]);
        pred_w.push(y.c[1]);
    }
    let (true_d, true_w): (Vec<f64>, Vec<f64>) = truth.into_iter().unzip();
    Ok(ModelErrors {
        delta_l2: l2_rel_error(&pred_d, &true_d)?,
        omega_l2: l2_rel_error(&pred_w, &true_w)?,
        evaluated_until: *kept.last().expect("non-empty"),
        truncated: kept.len() < grid.len(),
    })
}

/// Oracle over `[t0, t0 + horizon]`, cut at divergence instead of failing.
pub fn reference_trajectory(p: &SwingParams, ic: &InitialCondition, horizon: f64) -> Result<Trajectory> {
    let (traj, _) = integrate_swing_partial(p, ic, horizon, DEFAULT_STEP)?;
    if traj.len() < 2 {
        return Err(Error::Divergence { time: ic.t0 });
    }
    Ok(traj)
}

pub fn evaluate_model(
    mlp: &Mlp,
    p: &SwingParams,
    ic: &InitialCondition,
    horizon: f64,
    grid_resolution: usize,
) -> Result<ModelErrors> {
    let traj = reference_trajectory(p, ic, horizon)?;
    errors_against(mlp, &traj, &evaluation_grid(ic.t0, horizon, grid_resolution))
}

/// Regime labels over a `P_m` sweep and one representative value per
/// regime: the lower median of the first contiguous run of that label.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeCalibration {
    pub sweep: Vec<(f64, Regime)>,
    pub stable: f64,
    pub oscillating: f64,
    pub unstable: f64,
}

impl RegimeCalibration {
    pub fn p_m(&self, regime: Regime) -> f64 {
        match regime {
            Regime::Stable => self.stable,
            Regime::Oscillating => self.oscillating,
            Regime::Unstable => self.unstable,
        }
    }

    /// Replaces representatives with explicitly configured values.
    pub fn with_overrides(mut self, cfg: &ExperimentConfig) -> Self {
        if let Some(v) = cfg.stable_p_m {
            self.stable = v;
        }
        if let Some(v) = cfg.oscillating_p_m {
            self.oscillating = v;
        }
        if let Some(v) = cfg.unstable_p_m {
            self.unstable = v;
        }
        self
    }

    pub fn write_csv<W: Write>(&self, out: &mut W, digest: &str) -> Result<()> {
        write_digest_header(out, digest)?;
        writeln!(out, "p_m,regime,selected")?;
        for &(p_m, regime) in &self.sweep {
            let selected = self.p_m(regime) == p_m;
            writeln!(out, "{},{regime},{}", fmt_f64(p_m), selected as u8)?;
        }
        Ok(())
    }
}

pub fn calibrate_regimes(
    p: &SwingParams,
    ic: &InitialCondition,
    horizon: f64,
    range: [f64; 2],
    step: f64,
) -> Result<RegimeCalibration> {
    let [lo, hi] = range;
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    let mut sweep = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let p_m = lo + step * i as f64;
        let q = p.with_p_m(p_m);
        let traj = integrate_swing(&q, ic, horizon, DEFAULT_STEP)?;
        sweep.push((p_m, classify_regime(&traj, &q)?));
    }
    let pick = |regime: Regime| -> Result<f64> {
        let start = sweep
            .iter()
            .position(|&(_, r)| r == regime)
            .ok_or_else(|| Error::invalid(format!("no {regime} case in the P_m sweep")))?;
        let len = sweep[start..].iter().take_while(|&&(_, r)| r == regime).count();
        Ok(sweep[start + (len - 1) / 2].0)
    };
    Ok(RegimeCalibration {
        stable: pick(Regime::Stable)?,
        oscillating: pick(Regime::Oscillating)?,
        unstable: pick(Regime::Unstable)?,
        sweep,
    })
}

/// Inputs shared by every study.
#[derive(Debug, Clone)]
pub struct StudySetup {
    pub train: TrainConfig,
    pub params: SwingParams,
    pub ic: InitialCondition,
    pub experiment: ExperimentConfig,
    /// Worker threads for independent trials.
    pub workers: usize,
}

impl StudySetup {
    pub fn calibration(&self) -> Result<RegimeCalibration> {
        let e = &self.experiment;
        Ok(calibrate_regimes(&self.params, &self.ic, self.train.horizon, e.p_m_range, e.p_m_step)?
            .with_overrides(e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub seed: u64,
    pub model: LossMode,
    pub regime: Regime,
    pub n_points: usize,
    pub delta_l2: f64,
    pub omega_l2: f64,
    pub m_l1: Option<f64>,
    pub d_l1: Option<f64>,
    pub negative_estimate: bool,
    /// Worst relative mismatch between logged totals and their components.
    pub accounting_error: f64,
    /// Why the trial failed; failed trials are excluded from summaries.
    pub failure: Option<String>,
}

impl TrialRecord {
    fn failed(seed: u64, model: LossMode, regime: Regime, n_points: usize, why: String) -> Self {
        TrialRecord {
            seed,
            model,
            regime,
            n_points,
            delta_l2: f64::NAN,
            omega_l2: f64::NAN,
            m_l1: None,
            d_l1: None,
            negative_estimate: false,
            accounting_error: 0.0,
            failure: Some(why),
        }
    }

    pub fn succeeded(&self) -> bool {
        self.failure.is_none()
    }

    fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "delta_l2" => Some(self.delta_l2),
            "omega_l2" => Some(self.omega_l2),
            "m_l1" => self.m_l1,
            "d_l1" => self.d_l1,
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub model: LossMode,
    pub regime: Regime,
    pub metric: &'static str,
    pub stats: StatSummary,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrialTable {
    pub records: Vec<TrialRecord>,
    /// Whether records carry parameter errors.
    pub inverse: bool,
}

impl TrialTable {
    pub fn metrics(&self) -> &'static [&'static str] {
        if self.inverse {
            &["delta_l2", "omega_l2", "m_l1", "d_l1"]
        } else {
            &["delta_l2", "omega_l2"]
        }
    }

    pub fn successes(&self) -> usize {
        self.records.iter().filter(|r| r.succeeded()).count()
    }

    pub fn success_fraction(&self) -> f64 {
        if self.records.is_empty() {
            return 1.0;
        }
        self.successes() as f64 / self.records.len() as f64
    }

    /// Successful metric values for one (model, regime) group.
    pub fn values(&self, model: LossMode, regime: Regime, metric: &str) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.succeeded() && r.model == model && r.regime == regime)
            .filter_map(|r| r.metric(metric))
            .collect()
    }

    /// One row per (model, regime, metric) with at least one success, in
    /// first-appearance order.
    pub fn summaries(&self) -> Vec<SummaryRow> {
        let mut groups: Vec<(LossMode, Regime)> = Vec::new();
        for r in &self.records {
            if !groups.contains(&(r.model, r.regime)) {
                groups.push((r.model, r.regime));
            }
        }
        let mut rows = Vec::new();
        for (model, regime) in groups {
            for &metric in self.metrics() {
                let values = self.values(model, regime, metric);
                if let Ok(stats) = StatSummary::from_values(metric, &values) {
                    rows.push(SummaryRow {
                        model,
                        regime,
                        metric,
                        stats,
                    });
                }
            }
        }
        rows
    }

    pub fn write_trials_csv<W: Write>(&self, out: &mut W, digest: &str) -> Result<()> {
        write_digest_header(out, digest)?;
        if self.inverse {
            writeln!(out, "seed,model,regime,delta_l2,omega_l2,m_l1,d_l1,negative_estimate,failed")?;
        } else {
            writeln!(out, "seed,model,regime,delta_l2,omega_l2,failed")?;
        }
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        for r in &self.records {
            write!(
                out,
                "{},{},{},{},{}",
                r.seed,
                r.model,
                r.regime,
                fmt_f64(r.delta_l2),
                fmt_f64(r.omega_l2)
            )?;
            if self.inverse {
                write!(out, ",{},{},{}", opt(r.m_l1), opt(r.d_l1), r.negative_estimate as u8)?;
            }
            writeln!(out, ",{}", csv_flag(&r.failure))?;
        }
        Ok(())
    }

    pub fn write_summary_csv<W: Write>(&self, out: &mut W, digest: &str) -> Result<()> {
        write_digest_header(out, digest)?;
        writeln!(out, "model,regime,metric,min,avg,max,std")?;
        for row in self.summaries() {
            let s = &row.stats;
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                row.model,
                row.regime,
                row.metric,
                fmt_f64(s.min),
                fmt_f64(s.average),
                fmt_f64(s.max),
                fmt_f64(s.standard_deviation)
            )?;
        }
        Ok(())
    }
}

/// Failure text safe for a single CSV field; empty on success.
fn csv_flag(failure: &Option<String>) -> String {
    failure
        .as_deref()
        .map(|f| f.replace([',', '\n', '\r'], ";"))
        .unwrap_or_default()
}

/// Errors that mark a trial as failed instead of aborting the study.
fn is_trial_failure(e: &Error) -> bool {
    e.exit_code() == 3
}

/// Runs `f` on every job, in parallel when `workers > 1`, preserving order.
fn map_jobs<J, T, F>(workers: usize, jobs: &[J], f: F) -> Result<Vec<T>>
where
    J: Sync,
    T: Send,
    F: Fn(&J) -> Result<T> + Sync,
{
    if workers <= 1 {
        return jobs.iter().map(&f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    pool.install(|| jobs.par_iter().map(&f).collect())
}

struct ForwardJob {
    seed: u64,
    model: LossMode,
    regime: Regime,
    n_points: usize,
}

fn forward_trials(setup: &StudySetup, cal: &RegimeCalibration, jobs: &[ForwardJob]) -> Result<TrialTable> {
    let e = &setup.experiment;
    e.validate()?;
    let grid = evaluation_grid(setup.ic.t0, setup.train.horizon, e.grid_resolution);
    let mut oracles = Vec::new();
    for &regime in &e.regimes {
        let p = setup.params.with_p_m(cal.p_m(regime));
        oracles.push((regime, reference_trajectory(&p, &setup.ic, setup.train.horizon)?));
    }
    let records = map_jobs(setup.workers, jobs, |job| {
        let p = setup.params.with_p_m(cal.p_m(job.regime));
        let cfg = TrainConfig {
            mode: job.model,
            seed: job.seed,
            residual_points: job.n_points,
            ..setup.train.clone()
        };
        let traj = &oracles.iter().find(|(r, _)| *r == job.regime).expect("oracle per regime").1;
        let outcome = train_forward(&cfg, &p, &setup.ic)
            .and_then(|r| Ok((r.accounting_error(), errors_against(&r.mlp, traj, &grid)?)));
        match outcome {
            Ok((accounting_error, err)) => Ok(TrialRecord {
                seed: job.seed,
                model: job.model,
                regime: job.regime,
                n_points: job.n_points,
                delta_l2: err.delta_l2,
                omega_l2: err.omega_l2,
                m_l1: None,
                d_l1: None,
                negative_estimate: false,
                accounting_error,
                failure: None,
            }),
            Err(err) if is_trial_failure(&err) => Ok(TrialRecord::failed(
                job.seed,
                job.model,
                job.regime,
                job.n_points,
                err.to_string(),
            )),
            Err(err) => Err(err),
        }
    })?;
    Ok(TrialTable {
        records,
        inverse: false,
    })
}

/// Forward accuracy over every (regime, model, seed). PINN and gPINN
/// trials with the same seed share initial parameters and collocation.
pub fn run_trials(setup: &StudySetup, cal: &RegimeCalibration) -> Result<TrialTable> {
    let e = &setup.experiment;
    let mut jobs = Vec::new();
    for &regime in &e.regimes {
        for &model in &e.modes {
            for &seed in &e.seeds {
                jobs.push(ForwardJob {
                    seed,
                    model,
                    regime,
                    n_points: setup.train.residual_points,
                });
            }
        }
    }
    forward_trials(setup, cal, &jobs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub n_points: usize,
    pub model: LossMode,
    pub mean: f64,
    pub std: f64,
    pub n_trials: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub trials: TrialTable,
}

impl SweepResult {
    pub fn row(&self, n_points: usize, model: LossMode) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.n_points == n_points && r.model == model)
    }

    pub fn write_sweep_csv<W: Write>(&self, out: &mut W, digest: &str) -> Result<()> {
        write_digest_header(out, digest)?;
        writeln!(out, "n_points,model,mean,std")?;
        for r in &self.rows {
            writeln!(out, "{},{},{},{}", r.n_points, r.model, fmt_f64(r.mean), fmt_f64(r.std))?;
        }
        Ok(())
    }

    /// Per-trial δ and ω errors, keyed by point count.
    pub fn write_trials_csv<W: Write>(&self, out: &mut W, digest: &str) -> Result<()> {
        write_digest_header(out, digest)?;
        writeln!(out, "n_points,seed,model,regime,delta_l2,omega_l2,failed")?;
        for r in &self.trials.records {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.n_points,
                r.seed,
                r.model,
                r.regime,
                fmt_f64(r.delta_l2),
                fmt_f64(r.omega_l2),
                csv_flag(&r.failure)
            )?;
        }
        Ok(())
    }
}

/// δ error versus residual-point count in the stable regime.
pub fn residual_point_sweep(
    setup: &StudySetup,
    cal: &RegimeCalibration,
    point_counts: &[usize],
) -> Result<SweepResult> {
    if point_counts.is_empty() || point_counts.contains(&0) || point_counts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("point counts must be positive and strictly ascending"));
    }
    let e = &setup.experiment;
    let setup = StudySetup {
        experiment: ExperimentConfig {
            regimes: vec![Regime::Stable],
            ..e.clone()
        },
        ..setup.clone()
    };
    let mut jobs = Vec::new();
    for &n_points in point_counts {
        for &model in &e.modes {
            for &seed in &e.seeds {
                jobs.push(ForwardJob {
                    seed,
                    model,
                    regime: Regime::Stable,
                    n_points,
                });
            }
        }
    }
    let trials = forward_trials(&setup, cal, &jobs)?;
    let mut rows = Vec::new();
    for &n_points in point_counts {
        for &model in &e.modes {
            let values: Vec<f64> = trials
                .records
                .iter()
                .filter(|r| r.succeeded() && r.n_points == n_points && r.model == model)
                .map(|r| r.delta_l2)
                .collect();
            if let Ok(s) = StatSummary::from_values("delta_l2", &values) {
                rows.push(SweepRow {
                    n_points,
                    model,
                    mean: s.average,
                    std: s.standard_deviation,
                    n_trials: s.n_trials,
                });
            }
        }
    }
    Ok(SweepResult { rows, trials })
}

#[derive(Debug, Clone)]
pub struct TransferRun {
    pub model: LossMode,
    pub source_p_m: f64,
    pub target_p_m: f64,
    /// Loss at the end of source training.
    pub source_final_loss: f64,
    /// First-epoch loss of a warm start onto the unchanged source problem.
    pub continuity_loss: f64,
    pub cold: Vec<EpochRecord>,
    pub warm: Vec<EpochRecord>,
    pub cold_errors: ModelErrors,
    pub warm_errors: ModelErrors,
    /// Worst accounting mismatch over the source, cold, and warm runs.
    pub accounting_error: f64,
}

impl TransferRun {
    /// `(cold, warm)` loss at a 1-based epoch.
    pub fn losses_at(&self, epoch: usize) -> Option<(f64, f64)> {
        let c = self.cold.get(epoch.checked_sub(1)?)?;
        let w = self.warm.get(epoch - 1)?;
        Some((c.total, w.total))
    }
}

#[derive(Debug, Clone)]
pub struct TransferResult {
    pub runs: Vec<TransferRun>,
}

impl TransferResult {
    pub fn run(&self, model: LossMode) -> Option<&TransferRun> {
        self.runs.iter().find(|r| r.model == model)
    }

    /// Aligned histories over the warm-start window.
    pub fn write_transfer_csv<W: Write>(&self, out: &mut W, digest: &str) -> Result<()> {
        write_digest_header(out, digest)?;
        writeln!(out, "epoch,cold_loss,warm_loss,model")?;
        for run in &self.runs {
            for (c, w) in run.cold.iter().zip(&run.warm) {
                writeln!(out, "{},{},{},{}", w.epoch, fmt_f64(c.total), fmt_f64(w.total), run.model)?;
            }
        }
        Ok(())
    }
}

/// Source training at the stable `P_m`, then the target problem trained
/// cold (`epochs`) and warm from the source weights (`transfer_epochs`),
/// for each model with the first configured seed.
pub fn transfer_experiment(setup: &StudySetup, cal: &RegimeCalibration) -> Result<TransferResult> {
    let e = &setup.experiment;
    e.validate()?;
    let source = setup.params.with_p_m(cal.stable);
    let target_p_m = e.transfer_target_p_m.unwrap_or(cal.stable + e.transfer_offset);
    let target = setup.params.with_p_m(target_p_m);
    let horizon = setup.train.horizon;
    let grid = evaluation_grid(setup.ic.t0, horizon, e.grid_resolution);
    let target_traj = reference_trajectory(&target, &setup.ic, horizon)?;
    let runs = map_jobs(setup.workers, &e.modes, |&model| {
        let cfg = TrainConfig {
            mode: model,
            seed: e.seeds[0],
            ..setup.train.clone()
        };
        let src = train_forward(&cfg, &source, &setup.ic)?;
        let ck = src.checkpoint(&src.config_digest);
        let continuity_loss = warm_start_trainer(&ck, &cfg, &source, &setup.ic)?.step()?.total;
        let cold = train_forward(&cfg, &target, &setup.ic)?;
        let mut warm = warm_start_trainer(&ck, &cfg, &target, &setup.ic)?;
        warm.run(cfg.transfer_epochs)?;
        let warm = warm.finish()?;
        let accounting_error = [&src, &cold, &warm]
            .iter()
            .map(|r| r.accounting_error())
            .fold(0.0, f64::max);
        Ok(TransferRun {
            accounting_error,
            model,
            source_p_m: cal.stable,
            target_p_m,
            source_final_loss: src.final_loss,
            continuity_loss,
            cold_errors: errors_against(&cold.mlp, &target_traj, &grid)?,
            warm_errors: errors_against(&warm.mlp, &target_traj, &grid)?,
            cold: cold.history,
            warm: warm.history,
        })
    })?;
    Ok(TransferResult { runs })
}

/// Oracle angle samples at `n` random times in the horizon.
pub fn oracle_measurements(
    traj: &Trajectory,
    t0: f64,
    horizon: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<Measurement>> {
    let times = sample_measurement_times(t0, horizon, n, seed)?;
    let samples = sample_trajectory(traj, &times)?;
    Ok(times
        .into_iter()
        .zip(samples)
        .map(|(t, (delta, _))| Measurement { t, delta })
        .collect())
}

/// Joint recovery of `m_g` and `d_g` from scarce angle measurements in the
/// stable regime, for every (model, seed).
pub fn inverse_experiment(setup: &StudySetup, cal: &RegimeCalibration) -> Result<TrialTable> {
    let e = &setup.experiment;
    e.validate()?;
    let truth = setup.params.with_p_m(cal.stable);
    let horizon = setup.train.horizon;
    let traj = reference_trajectory(&truth, &setup.ic, horizon)?;
    let grid = evaluation_grid(setup.ic.t0, horizon, e.grid_resolution);
    let unknown = SwingParams {
        trainable: TrainableMask::BOTH,
        ..truth
    };
    let mut jobs = Vec::new();
    for &model in &e.modes {
        for &seed in &e.seeds {
            jobs.push((model, seed));
        }
    }
    let records = map_jobs(setup.workers, &jobs, |&(model, seed)| {
        let meas = oracle_measurements(&traj, setup.ic.t0, horizon, e.measurements, seed)?;
        let cfg = TrainConfig {
            mode: model,
            seed,
            ..setup.train.clone()
        };
        let outcome = train_inverse(&cfg, &unknown, &setup.ic, &meas).and_then(|r| {
            let (m, d) = r.estimates(&unknown)?;
            let acc = r.accounting_error();
            Ok((r.negative_estimates, m, d, acc, errors_against(&r.mlp, &traj, &grid)?))
        });
        match outcome {
            Ok((negative, m, d, accounting_error, err)) => Ok(TrialRecord {
                seed,
                model,
                regime: Regime::Stable,
                n_points: cfg.residual_points,
                delta_l2: err.delta_l2,
                omega_l2: err.omega_l2,
                m_l1: Some(l1_rel_error(m, truth.m_g)?),
                d_l1: Some(l1_rel_error(d, truth.d_g)?),
                negative_estimate: negative,
                accounting_error,
                failure: None,
            }),
            Err(err) if is_trial_failure(&err) => Ok(TrialRecord::failed(
                seed,
                model,
                Regime::Stable,
                cfg.residual_points,
                err.to_string(),
            )),
            Err(err) => Err(err),
        }
    })?;
    Ok(TrialTable {
        records,
        inverse: true,
    })
}
