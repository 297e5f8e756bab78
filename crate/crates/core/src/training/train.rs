use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::collocation::{sample_collocation, CollocationSet, Measurement, DEFAULT_RESIDUAL_POINTS};
use super::loss::{
    effective_coefficients, evaluate_loss, physical_ids, LossEvaluation, LossMode, LossProblem,
    LossTerms, LossWeights,
};
use crate::autodiff::ParamId;
use crate::csvfmt::{fmt_f64, write_digest_header};
use crate::error::{Error, Result};
use crate::network::{
    init_mlp, load_checkpoint, Checkpoint, CheckpointMeta, Mlp, CI_SMALL_ARCHITECTURE,
    FULL_ARCHITECTURE,
};
use crate::physics::{InitialCondition, SwingParams};

pub const DEFAULT_EPOCHS: usize = 20_000;
pub const DEFAULT_TRANSFER_EPOCHS: usize = 5_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    Full,
    CiSmall,
}

impl Architecture {
    pub fn layer_sizes(&self) -> &'static [usize] {
        match self {
            Architecture::Full => &FULL_ARCHITECTURE,
            Architecture::CiSmall => &CI_SMALL_ARCHITECTURE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: LossMode,
    pub epochs: usize,
    /// Epoch budget of a warm-started run.
    pub transfer_epochs: usize,
    pub adam: AdamConfig,
    /// Simulation horizon `T`, s.
    pub horizon: f64,
    pub architecture: Architecture,
    /// Overrides the preset when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layer_sizes: Option<Vec<usize>>,
    pub seed: u64,
    pub residual_points: usize,
    pub weights: LossWeights,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warm_start: Option<PathBuf>,
    /// Starting value of every unknown physical parameter.
    pub inverse_init: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: LossMode::Gpinn,
            epochs: DEFAULT_EPOCHS,
            transfer_epochs: DEFAULT_TRANSFER_EPOCHS,
            adam: AdamConfig::default(),
            horizon: 20.0,
            architecture: Architecture::Full,
            layer_sizes: None,
            seed: 0,
            residual_points: DEFAULT_RESIDUAL_POINTS,
            weights: LossWeights::default(),
            warm_start: None,
            inverse_init: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn layer_sizes(&self) -> Vec<usize> {
        self.layer_sizes
            .clone()
            .unwrap_or_else(|| self.architecture.layer_sizes().to_vec())
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.transfer_epochs == 0 {
            return Err(Error::invalid("epochs must be positive"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::invalid(format!("horizon must be positive, got {}", self.horizon)));
        }
        if self.residual_points == 0 {
            return Err(Error::invalid("residual_points must be positive"));
        }
        if !self.inverse_init.is_finite() {
            return Err(Error::invalid("inverse_init must be finite"));
        }
        crate::network::validate_layer_sizes(&self.layer_sizes())?;
        self.adam.validate()?;
        self.weights.validate()
    }
}

/// Loss at the parameters an epoch starts from, i.e. before its update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub total: f64,
    pub terms: LossTerms,
    /// `(m̂_g, d̂_g)` in effect during the epoch; inverse runs only.
    pub estimates: Option<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub mlp: Mlp,
    /// Final estimates of the unknown physical parameters.
    pub physical: Vec<f64>,
    pub history: Vec<EpochRecord>,
    /// Loss at the final parameters.
    pub final_loss: f64,
    pub final_terms: LossTerms,
    /// Set when any final physical estimate is negative.
    pub negative_estimates: bool,
    pub wall_clock_seconds: f64,
    pub config_digest: String,
    pub adam: AdamState,
    pub mode: LossMode,
    pub weights: LossWeights,
    pub has_measurements: bool,
}

/// Largest relative gap between a logged total and the weighted sum of
/// its logged components.
pub fn accounting_error(history: &[EpochRecord], w: &LossWeights, mode: LossMode, has_measurements: bool) -> f64 {
    history
        .iter()
        .map(|r| {
            let sum = r.terms.total(w, mode, has_measurements);
            let scale = r.total.abs().max(f64::MIN_POSITIVE);
            (sum - r.total).abs() / scale
        })
        .fold(0.0, f64::max)
}

impl TrainResult {
    pub fn accounting_error(&self) -> f64 {
        accounting_error(&self.history, &self.weights, self.mode, self.has_measurements)
    }

    /// `(m̂_g, d̂_g)` at the end of training, known values for anything
    /// that was not estimated.
    pub fn estimates(&self, p: &SwingParams) -> Result<(f64, f64)> {
        effective_coefficients(p, &self.physical)
    }

    pub fn checkpoint(&self, digest: &str) -> Checkpoint {
        Checkpoint {
            mlp: self.mlp.clone(),
            physical: self.physical.clone(),
            adam: Some(self.adam.clone()),
            meta: CheckpointMeta {
                epoch: self.history.last().map_or(0, |r| r.epoch),
                loss: self.final_loss,
                config_digest: digest.to_owned(),
            },
        }
    }

    pub fn write_history_csv<W: Write>(&self, out: &mut W, digest: &str) -> Result<()> {
        write_history_csv(out, &self.history, digest)
    }
}

pub fn write_history_csv<W: Write>(out: &mut W, history: &[EpochRecord], digest: &str) -> Result<()> {
    write_digest_header(out, digest)?;
    let inverse = history.first().is_some_and(|r| r.estimates.is_some());
    if inverse {
        writeln!(out, "epoch,total,l_f,l_b,l_i,l_g,m_hat,d_hat")?;
    } else {
        writeln!(out, "epoch,total,l_f,l_b,l_i,l_g")?;
    }
    for r in history {
        let t = &r.terms;
        write!(
            out,
            "{},{},{},{},{},{}",
            r.epoch,
            fmt_f64(r.total),
            fmt_f64(t.l_f),
            fmt_f64(t.l_b),
            fmt_f64(t.l_i),
            fmt_f64(t.l_g)
        )?;
        if let Some((m, d)) = r.estimates {
            write!(out, ",{},{}", fmt_f64(m), fmt_f64(d))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Full-batch Adam loop over one problem instance.
#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: TrainConfig,
    params: SwingParams,
    set: CollocationSet,
    mlp: Mlp,
    theta: Vec<f64>,
    ids: Arc<[ParamId]>,
    adam: AdamState,
    /// Epochs completed before this trainer was created (resume only).
    epoch_base: usize,
    history: Vec<EpochRecord>,
    last_finite: f64,
    started: Instant,
}

impl Trainer {
    /// `physical` holds the starting estimates for `params.trainable`.
    pub fn new(
        cfg: TrainConfig,
        params: SwingParams,
        set: CollocationSet,
        mlp: Mlp,
        physical: Vec<f64>,
    ) -> Result<Self> {
        cfg.validate()?;
        params.validate()?;
        set.validate(cfg.horizon)?;
        effective_coefficients(&params, &physical)?;
        if mlp.layer_sizes() != cfg.layer_sizes() {
            return Err(Error::ShapeMismatch(format!(
                "network {:?} does not match configured {:?}",
                mlp.layer_sizes(),
                cfg.layer_sizes()
            )));
        }
        let mut ids = mlp.param_ids();
        ids.extend(physical_ids(params.trainable));
        let mut theta = mlp.flat_params();
        theta.extend(&physical);
        let adam = AdamState::new(theta.len());
        Ok(Trainer {
            cfg,
            params,
            set,
            mlp,
            theta,
            ids: ids.into(),
            adam,
            epoch_base: 0,
            history: Vec::new(),
            last_finite: f64::NAN,
            started: Instant::now(),
        })
    }

    /// Continues from a checkpoint with its optimizer state; the epoch
    /// counter resumes from the checkpoint's.
    pub fn resume(cfg: TrainConfig, params: SwingParams, set: CollocationSet, ck: Checkpoint) -> Result<Self> {
        ck.expect_architecture(&cfg.layer_sizes())?;
        let adam = ck.adam.clone().ok_or_else(|| Error::CorruptCheckpoint {
            field: "adam_step".into(),
            reason: "checkpoint has no optimizer state to resume".into(),
        })?;
        let mut tr = Trainer::new(cfg, params, set, ck.mlp, ck.physical)?;
        if adam.len() != tr.theta.len() {
            return Err(Error::ShapeMismatch(format!(
                "optimizer state has {} entries, model has {}",
                adam.len(),
                tr.theta.len()
            )));
        }
        tr.adam = adam;
        tr.epoch_base = ck.meta.epoch;
        Ok(tr)
    }

    fn n_net(&self) -> usize {
        self.theta.len() - physical_ids(self.params.trainable).len()
    }

    fn problem(&self) -> LossProblem<'_> {
        LossProblem {
            params: &self.params,
            set: &self.set,
            weights: self.cfg.weights,
            mode: self.cfg.mode,
        }
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch_base + self.history.len()
    }

    /// Records of the epochs run by this trainer.
    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn physical(&self) -> &[f64] {
        &self.theta[self.n_net()..]
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    /// Loss at the current parameters, without gradients.
    pub fn evaluate(&self) -> Result<LossEvaluation> {
        evaluate_loss(&self.mlp, &self.problem(), self.physical(), false)
    }

    fn diverged(&self, epoch: usize) -> Error {
        Error::TrainingDiverged {
            epoch,
            last_finite_loss: self.last_finite,
        }
    }

    /// One epoch: loss and gradient at the current parameters, then one
    /// Adam update.
    pub fn step(&mut self) -> Result<EpochRecord> {
        let epoch = self.epochs_done() + 1;
        let physical = self.physical().to_vec();
        let ev = match evaluate_loss(&self.mlp, &self.problem(), &physical, true) {
            Ok(ev) => ev,
            Err(Error::NonFinite { .. }) => return Err(self.diverged(epoch)),
            Err(e) => return Err(e),
        };
        if !ev.total.is_finite() {
            return Err(self.diverged(epoch));
        }
        self.last_finite = ev.total;
        let estimates = if self.params.trainable.is_empty() {
            None
        } else {
            Some(effective_coefficients(&self.params, &physical)?)
        };
        let record = EpochRecord {
            epoch,
            total: ev.total,
            terms: ev.terms,
            estimates,
        };
        let grads = ev.into_record(self.ids.clone());
        match super::adam::adam_step(&mut self.adam, &grads, &mut self.theta, &self.cfg.adam) {
            Ok(()) => {}
            Err(Error::NonFiniteGradient(_)) => return Err(self.diverged(epoch)),
            Err(e) => return Err(e),
        }
        let n = self.n_net();
        self.mlp.set_flat_params(&self.theta[..n])?;
        if self.theta.iter().any(|v| !v.is_finite()) {
            return Err(self.diverged(epoch));
        }
        self.history.push(record);
        Ok(record)
    }

    pub fn run(&mut self, epochs: usize) -> Result<()> {
        for _ in 0..epochs {
            self.step()?;
        }
        Ok(())
    }

    pub fn checkpoint(&self, digest: &str) -> Result<Checkpoint> {
        Ok(Checkpoint {
            mlp: self.mlp.clone(),
            physical: self.physical().to_vec(),
            adam: Some(self.adam.clone()),
            meta: CheckpointMeta {
                epoch: self.epochs_done(),
                loss: self.evaluate()?.total,
                config_digest: digest.to_owned(),
            },
        })
    }

    pub fn finish(self) -> Result<TrainResult> {
        let final_ev = self.evaluate()?;
        let digest = train_digest(&self.cfg, &self.params, &self.set.boundary)?;
        let physical = self.physical().to_vec();
                Ok(TrainResult {
            negative_estimates: physical.iter().any(|&v| v < 0.0),
            mlp: self.mlp,
            physical,
            history: self.history,
            final_loss: final_ev.total,
            final_terms: final_ev.terms,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            config_digest: digest,
            adam: self.adam,
            mode: self.cfg.mode,
            weights: self.cfg.weights,
            has_measurements: !self.set.measurements.is_empty(),
        })
    }
}

/// Digest of the inputs that determine a training run.
pub fn train_digest(cfg: &TrainConfig, p: &SwingParams, ic: &InitialCondition) -> Result<String> {
    #[derive(Serialize)]
    struct Provenance<'a> {
        train: &'a TrainConfig,
        swing: &'a SwingParams,
        initial_condition: &'a InitialCondition,
    }
    crate::config::digest_of(&Provenance {
        train: cfg,
        swing: p,
        initial_condition: ic,
    })
}

fn collocation_for(cfg: &TrainConfig, ic: &InitialCondition) -> Result<CollocationSet> {
    sample_collocation(cfg.horizon, ic, cfg.residual_points, cfg.seed)
}

/// Forward problem with every physical parameter known.
pub fn train_forward(cfg: &TrainConfig, p: &SwingParams, ic: &InitialCondition) -> Result<TrainResult> {
    if !p.trainable.is_empty() {
        return Err(Error::invalid("forward training needs all physical parameters known"));
    }
    cfg.validate()?;
    ic.validate()?;
    let mlp = init_mlp(&cfg.layer_sizes(), cfg.seed)?;
    let mut tr = Trainer::new(cfg.clone(), *p, collocation_for(cfg, ic)?, mlp, Vec::new())?;
    tr.run(cfg.epochs)?;
    tr.finish()
}

/// Joint estimation of the network and the unknowns in `p.trainable`.
pub fn train_inverse(
    cfg: &TrainConfig,
    p: &SwingParams,
    ic: &InitialCondition,
    measurements: &[Measurement],
) -> Result<TrainResult> {
    if p.trainable.is_empty() {
        return Err(Error::invalid("inverse training needs at least one trainable parameter"));
    }
    if measurements.is_empty() {
        return Err(Error::invalid("inverse training needs at least one measurement"));
    }
    cfg.validate()?;
    ic.validate()?;
    let set = collocation_for(cfg, ic)?.with_measurements(measurements.to_vec());
    let mlp = init_mlp(&cfg.layer_sizes(), cfg.seed)?;
    let physical = physical_ids(p.trainable).iter().map(|_| cfg.inverse_init).collect();
    let mut tr = Trainer::new(cfg.clone(), *p, set, mlp, physical)?;
    tr.run(cfg.epochs)?;
    tr.finish()
}

/// Trainer initialized from checkpointed network weights with a fresh
/// optimizer, for a forward problem.
pub fn warm_start_trainer(
    checkpoint: &Checkpoint,
    cfg: &TrainConfig,
    p: &SwingParams,
    ic: &InitialCondition,
) -> Result<Trainer> {
    if !p.trainable.is_empty() {
        return Err(Error::invalid("warm start supports forward problems only"));
    }
    checkpoint.expect_architecture(&cfg.layer_sizes())?;
    ic.validate()?;
    Trainer::new(cfg.clone(), *p, collocation_for(cfg, ic)?, checkpoint.mlp.clone(), Vec::new())
}

/// Loads a checkpoint and trains `cfg.transfer_epochs` on a new problem.
pub fn warm_start(
    checkpoint_path: &Path,
    cfg: &TrainConfig,
    p: &SwingParams,
    ic: &InitialCondition,
) -> Result<TrainResult> {
    cfg.validate()?;
    let ck = load_checkpoint(checkpoint_path)?;
    let mut tr = warm_start_trainer(&ck, cfg, p, ic)?;
    tr.run(cfg.transfer_epochs)?;
    tr.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::TrainableMask;

    fn tiny() -> TrainConfig {
        TrainConfig {
            layer_sizes: Some(vec![1, 6, 1]),
            residual_points: 12,
            epochs: 5,
            seed: 7,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn single_epoch_history() {
        let cfg = TrainConfig { epochs: 1, ..tiny() };
        let r = train_forward(&cfg, &SwingParams::default(), &InitialCondition::default()).unwrap();
        assert_eq!(r.history.len(), 1);
        assert_eq!(r.history[0].epoch, 1);
        assert!(r.history[0].estimates.is_none());
    }

    #[test]
    fn deterministic_histories() {
        let p = SwingParams::default();
        let ic = InitialCondition::default();
        let a = train_forward(&tiny(), &p, &ic).unwrap();
        let b = train_forward(&tiny(), &p, &ic).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.config_digest, b.config_digest);
    }

    #[test]
    fn totals_match_weighted_terms() {
        let cfg = TrainConfig { epochs: 20, ..tiny() };
        let r = train_forward(&cfg, &SwingParams::default(), &InitialCondition::default()).unwrap();
        for rec in &r.history {
            let sum = rec.terms.total(&cfg.weights, cfg.mode, false);
            assert!((sum - rec.total).abs() <= 1e-12 * rec.total.abs());
        }
        assert!(r.accounting_error() <= 1e-12);
    }

    #[test]
    fn inverse_preconditions() {
        let ic = InitialCondition::default();
        let meas = [Measurement { t: 1.0, delta: 0.2 }];
        assert!(train_inverse(&tiny(), &SwingParams::default(), &ic, &meas).is_err());
        let p = SwingParams {
            trainable: TrainableMask::BOTH,
            ..SwingParams::default()
        };
        assert!(train_inverse(&tiny(), &p, &ic, &[]).is_err());
        assert!(train_forward(&tiny(), &p, &ic).is_err());
        let r = train_inverse(&tiny(), &p, &ic, &meas).unwrap();
        assert_eq!(r.history.len(), 5);
        assert_eq!(r.history[0].estimates, Some((1.0, 1.0)));
        assert_eq!(r.physical.len(), 2);
    }

    #[test]
    fn warm_start_architecture_mismatch() {
        let p = SwingParams::default();
        let ic = InitialCondition::default();
        let r = train_forward(&tiny(), &p, &ic).unwrap();
        let ck = r.checkpoint("x");
        let other = TrainConfig {
            layer_sizes: Some(vec![1, 7, 1]),
            ..tiny()
        };
        let err = warm_start_trainer(&ck, &other, &p, &ic).unwrap_err();
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn warm_start_continuity() {
        let p = SwingParams::default();
        let ic = InitialCondition::default();
        let r = train_forward(&tiny(), &p, &ic).unwrap();
        let mut tr = warm_start_trainer(&r.checkpoint("x"), &tiny(), &p, &ic).unwrap();
        let first = tr.step().unwrap();
        assert_eq!(first.total.to_bits(), r.final_loss.to_bits());
        assert_eq!(tr.adam().step, 1);
    }

    #[test]
    fn resume_matches_uninterrupted() {
        let p = SwingParams::default();
        let ic = InitialCondition::default();
        let cfg = TrainConfig { epochs: 6, ..tiny() };
        let full = train_forward(&cfg, &p, &ic).unwrap();

        let half = train_forward(&TrainConfig { epochs: 3, ..tiny() }, &p, &ic).unwrap();
        let ck = crate::network::Checkpoint::parse(&half.checkpoint("d").to_text()).unwrap();
        let set = collocation_for(&cfg, &ic).unwrap();
        let mut tr = Trainer::resume(cfg.clone(), p, set, ck).unwrap();
        let rec = tr.step().unwrap();
        assert_eq!(rec.epoch, 4);
        assert_eq!(rec.total.to_bits(), full.history[3].total.to_bits());
        tr.run(2).unwrap();
        assert_eq!(tr.history(), &full.history[3..]);
    }

    #[test]
    fn divergence_reports_epoch() {
        let cfg = TrainConfig {
            adam: AdamConfig {
                learning_rate: 1e300,
                ..AdamConfig::default()
            },
            epochs: 50,
            ..tiny()
        };
        let err = train_forward(&cfg, &SwingParams::default(), &InitialCondition::default()).unwrap_err();
        match err {
            Error::TrainingDiverged { epoch, last_finite_loss } => {
                assert!(epoch >= 1);
                assert!(last_finite_loss.is_finite());
            }
            other => panic!("unexpected {other}"),
        }
    }
}
