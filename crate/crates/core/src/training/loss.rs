//! Residual, boundary, data, and residual-gradient losses.
//!
//! Two routes compute the same quantities: [`evaluate_loss`] runs the
//! batched jet pass with its hand-derived adjoint (used for training), and
//! the `*_loss` functions record the loss on a [`Tape`] as a differentiable
//! node.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::collocation::{CollocationSet, Measurement};
use crate::autodiff::{GradientRecord, ParamId, Tape, Var};
use crate::error::{Error, Result};
use crate::network::{Mlp, RecordedMlp};
use crate::physics::{residual_raw, residual_time_grad_raw, SwingParams, TrainableMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    Pinn,
    Gpinn,
}

impl LossMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            LossMode::Pinn => "pinn",
            LossMode::Gpinn => "gpinn",
        }
    }
}

impl std::fmt::Display for LossMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for LossMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pinn" => Ok(LossMode::Pinn),
            "gpinn" => Ok(LossMode::Gpinn),
            other => Err(Error::invalid(format!("unknown mode `{other}` (pinn|gpinn)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub w_f: f64,
    pub w_b: f64,
    pub w_i: f64,
    pub w_g: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_f: 1.0,
            w_b: 1.0,
            w_i: 1.0,
            w_g: 0.01,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("w_f", self.w_f), ("w_b", self.w_b), ("w_i", self.w_i), ("w_g", self.w_g)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::invalid(format!("{name} must be non-negative, got {w}")));
            }
        }
        Ok(())
    }
}

/// Unweighted loss components. `l_i` is zero without measurements and
/// `l_g` is zero in PINN mode.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub l_f: f64,
    pub l_b: f64,
    pub l_i: f64,
    pub l_g: f64,
}

impl LossTerms {
    /// Weighted total, summed in the same order as the training loss.
    pub fn total(&self, w: &LossWeights, mode: LossMode, has_measurements: bool) -> f64 {
        let mut total = w.w_f * self.l_f + w.w_b * self.l_b;
        if has_measurements {
            total += w.w_i * self.l_i;
        }
        if mode == LossMode::Gpinn {
            total += w.w_g * self.l_g;
        }
        total
    }
}

/// Everything that defines a loss except the network itself.
#[derive(Debug, Clone, Copy)]
pub struct LossProblem<'a> {
    pub params: &'a SwingParams,
    pub set: &'a CollocationSet,
    pub weights: LossWeights,
    pub mode: LossMode,
}

/// Physical coefficients seen by the residual: known values, or the
/// current estimates for the unknowns flagged in `mask`.
pub fn effective_coefficients(p: &SwingParams, physical: &[f64]) -> Result<(f64, f64)> {
    let mask = p.trainable;
    let expected = mask.inertia as usize + mask.damping as usize;
    if physical.len() != expected {
        return Err(Error::invalid(format!(
            "expected {expected} physical estimates, got {}",
            physical.len()
        )));
    }
    let m = if mask.inertia { physical[0] } else { p.m_g };
    let d = if mask.damping {
        physical[mask.inertia as usize]
    } else {
        p.d_g
    };
    Ok((m, d))
}

pub fn physical_ids(mask: TrainableMask) -> Vec<ParamId> {
    let mut ids = Vec::new();
    if mask.inertia {
        ids.push(ParamId::Inertia);
    }
    if mask.damping {
        ids.push(ParamId::Damping);
    }
    ids
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossEvaluation {
    pub terms: LossTerms,
    pub total: f64,
    /// ∂L/∂θ for the network, flat order.
    pub network_grad: Vec<f64>,
    /// ∂L/∂λ for the trainable physical parameters.
    pub physical_grad: Vec<f64>,
}

impl LossEvaluation {
    pub fn into_record(self, ids: Arc<[ParamId]>) -> GradientRecord {
        let mut values = self.network_grad;
        values.extend(self.physical_grad);
        GradientRecord {
            loss_value: self.total,
            ids,
            values,
        }
    }
}

struct Layout {
    times: Vec<f64>,
    n_f: usize,
    /// Start of gradient columns; equals 0 when `T_g = T_f`.
    g_start: usize,
    n_g: usize,
    boundary: usize,
    meas_start: usize,
}

fn layout(set: &CollocationSet, mode: LossMode) -> Layout {
    let n_f = set.residual_points.len();
    let mut times = set.residual_points.clone();
    let (g_start, n_g) = match mode {
        LossMode::Pinn => (0, 0),
        LossMode::Gpinn if set.gradient_points == set.residual_points => (0, n_f),
        LossMode::Gpinn => {
            let start = times.len();
            times.extend(&set.gradient_points);
            (start, set.gradient_points.len())
        }
    };
    let boundary = times.len();
    times.push(set.boundary.t0);
    let meas_start = times.len();
    times.extend(set.measurements.iter().map(|m| m.t));
    Layout {
        times,
        n_f,
        g_start,
        n_g,
        boundary,
        meas_start,
    }
}

/// Batched loss evaluation; with `want_grad` also returns exact gradients
/// with respect to network and physical parameters.
pub fn evaluate_loss(
    mlp: &Mlp,
    problem: &LossProblem<'_>,
    physical: &[f64],
    want_grad: bool,
) -> Result<LossEvaluation> {
    let LossProblem {
        params,
        set,
        weights: w,
        mode,
    } = *problem;
    let (m, d) = effective_coefficients(params, physical)?;
    let k = params.synchronizing_coefficient();
    let lay = layout(set, mode);
    let batch = mlp.forward_batch(&lay.times)?;
    for j in 0..batch.len() {
        let jet = batch.jet(j);
        if !jet.is_finite() {
            let bad = jet.c.iter().copied().find(|v| !v.is_finite()).unwrap_or(f64::NAN);
            return Err(Error::NonFinite {
                context: format!("network output at t = {}", lay.times[j]),
                index: j,
                value: bad,
            });
        }
    }
    let mut adj = if want_grad {
        vec![[0.0; 4]; batch.len()]
    } else {
        Vec::new()
    };
    let (mut dm, mut dd) = (0.0, 0.0);

    // Residual loss.
    let inv_f = 1.0 / lay.n_f as f64;
    let mut l_f = 0.0;
    for j in 0..lay.n_f {
        let (u, u_t, u_tt) = (batch.derivative(0, j), batch.derivative(1, j), batch.derivative(2, j));
        let f = residual_raw(m, d, k, params.p_m, u, u_t, u_tt);
        l_f += f * f;
        if want_grad {
            let a = w.w_f * 2.0 * f * inv_f;
            adj[j][0] += a * k * u.cos();
            adj[j][1] += a * d;
            adj[j][2] += a * 2.0 * m;
            dm += a * u_tt;
            dd += a * u_t;
        }
    }
    l_f *= inv_f;

    // Residual-gradient loss.
    let mut l_g = 0.0;
    if lay.n_g > 0 {
        let inv_g = 1.0 / lay.n_g as f64;
        for j in lay.g_start..lay.g_start + lay.n_g {
            let u = batch.derivative(0, j);
            let u_t = batch.derivative(1, j);
            let u_tt = batch.derivative(2, j);
            let u_ttt = batch.derivative(3, j);
            let g = residual_time_grad_raw(m, d, k, u, u_t, u_tt, u_ttt);
            l_g += g * g;
            if want_grad {
                let a = w.w_g * 2.0 * g * inv_g;
                let (s, c) = u.sin_cos();
                adj[j][0] += a * (-k * s * u_t);
                adj[j][1] += a * k * c;
                adj[j][2] += a * 2.0 * d;
                adj[j][3] += a * 6.0 * m;
                dm += a * u_ttt;
                dd += a * u_tt;
            }
        }
        l_g *= inv_g;
    }

    // Initial condition: angle and frequency at t0.
    let b = lay.boundary;
    let ed = batch.derivative(0, b) - set.boundary.delta0;
    let ew = batch.derivative(1, b) - set.boundary.omega0;
    let l_b = ed * ed + ew * ew;
    if want_grad {
        adj[b][0] += w.w_b * 2.0 * ed;
        adj[b][1] += w.w_b * 2.0 * ew;
    }

    // Data loss.
    let n_i = set.measurements.len();
    let mut l_i = 0.0;
    if n_i > 0 {
        let inv_i = 1.0 / n_i as f64;
        for (q, meas) in set.measurements.iter().enumerate() {
            let j = lay.meas_start + q;
            let e = batch.derivative(0, j) - meas.delta;
            l_i += e * e;
            if want_grad {
                adj[j][0] += w.w_i * 2.0 * e * inv_i;
            }
        }
        l_i *= inv_i;
    }

    let terms = LossTerms { l_f, l_b, l_i, l_g };
    let total = terms.total(&w, mode, n_i > 0);
    let (network_grad, physical_grad) = if want_grad {
        let mut phys = Vec::new();
        if params.trainable.inertia {
            phys.push(dm);
        }
        if params.trainable.damping {
            phys.push(dd);
        }
        (mlp.backward_batch(&batch, &adj)?, phys)
    } else {
        (Vec::new(), Vec::new())
    };
    Ok(LossEvaluation {
        terms,
        total,
        network_grad,
        physical_grad,
    })
}

/// Physical coefficients on a tape: constants when known, leaves when
/// they are inverse-problem unknowns.
#[derive(Clone, Copy)]
pub struct RecordedPhysics<'t> {
    pub m: Var<'t>,
    pub d: Var<'t>,
    pub k: f64,
    pub p_m: f64,
}

impl<'t> RecordedPhysics<'t> {
    pub fn new(tape: &'t Tape, p: &SwingParams, physical: &[f64]) -> Result<Self> {
        let (m, d) = effective_coefficients(p, physical)?;
        let m = if p.trainable.inertia {
            tape.param(ParamId::Inertia, m)?
        } else {
            tape.constant(m)
        };
        let d = if p.trainable.damping {
            tape.param(ParamId::Damping, d)?
        } else {
            tape.constant(d)
        };
        Ok(RecordedPhysics {
            m,
            d,
            k: p.synchronizing_coefficient(),
            p_m: p.p_m,
        })
    }
}

fn mean<'t>(tape: &'t Tape, terms: impl Iterator<Item = Var<'t>>, n: usize) -> Var<'t> {
    let mut acc = tape.constant(0.0);
    for t in terms {
        acc = acc + t;
    }
    acc.scale(1.0 / n as f64)
}

fn check_output(v: Var<'_>, t: f64) -> Result<()> {
    if v.value().is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            context: format!("network output at t = {t}"),
            index: 0,
            value: v.value(),
        })
    }
}

fn residual_terms<'t>(
    tape: &'t Tape,
    net: &RecordedMlp<'t>,
    phys: &RecordedPhysics<'t>,
    set: &CollocationSet,
) -> Result<(Var<'t>, Var<'t>)> {
    let mut sq = Vec::with_capacity(set.residual_points.len());
    for &t in &set.residual_points {
        let y = net.forward_jet(tape.constant_jet(crate::autodiff::jet_seed_time(t)?));
        for c in y.c {
            check_output(c, t)?;
        }
        let u_t = y.c[1];
        let u_tt = y.c[2].scale(2.0);
        let f = (phys.m * u_tt + phys.d * u_t + y.c[0].sin().scale(phys.k)).add_const(-phys.p_m);
        sq.push(f.square());
    }
    let l_f = mean(tape, sq.into_iter(), set.residual_points.len());

    let y0 = net.forward_jet(tape.constant_jet(crate::autodiff::jet_seed_time(set.boundary.t0)?));
    let ed = y0.c[0].add_const(-set.boundary.delta0);
    let ew = y0.c[1].add_const(-set.boundary.omega0);
    Ok((l_f, ed.square() + ew.square()))
}

/// `w_f L_f + w_b L_b` as a tape node.
pub fn pinn_loss<'t>(
    tape: &'t Tape,
    net: &RecordedMlp<'t>,
    phys: &RecordedPhysics<'t>,
    set: &CollocationSet,
    w: &LossWeights,
) -> Result<Var<'t>> {
    let (l_f, l_b) = residual_terms(tape, net, phys, set)?;
    Ok(l_f.scale(w.w_f) + l_b.scale(w.w_b))
}

/// Mean squared mismatch between the network and measured angles.
pub fn data_loss<'t>(
    tape: &'t Tape,
    net: &RecordedMlp<'t>,
    measurements: &[Measurement],
) -> Result<Var<'t>> {
    if measurements.is_empty() {
        return Err(Error::invalid("data loss needs at least one measurement"));
    }
    let mut sq = Vec::with_capacity(measurements.len());
    for m in measurements {
        let y = net.forward_jet(tape.constant_jet(crate::autodiff::jet_seed_time(m.t)?));
        check_output(y.c[0], m.t)?;
        sq.push(y.c[0].add_const(-m.delta).square());
    }
    Ok(mean(tape, sq.into_iter(), measurements.len()))
}

/// Mean squared time derivative of the residual over the gradient points.
pub fn gradient_residual_loss<'t>(
    tape: &'t Tape,
    net: &RecordedMlp<'t>,
    phys: &RecordedPhysics<'t>,
    points: &[f64],
) -> Result<Var<'t>> {
    let mut sq = Vec::with_capacity(points.len());
    for &t in points {
        let y = net.forward_jet(tape.constant_jet(crate::autodiff::jet_seed_time(t)?));
        let u = y.c[0];
        let u_t = y.c[1];
        let u_tt = y.c[2].scale(2.0);
        let u_ttt = y.c[3].scale(6.0);
        let g = phys.m * u_ttt + phys.d * u_tt + u.cos().scale(phys.k) * u_t;
        sq.push(g.square());
    }
    Ok(mean(tape, sq.into_iter(), points.len()))
}

/// PINN loss plus the data term (when measurements exist) plus the
/// weighted residual-gradient term.
pub fn gpinn_loss<'t>(
    tape: &'t Tape,
    net: &RecordedMlp<'t>,
    phys: &RecordedPhysics<'t>,
    set: &CollocationSet,
    w: &LossWeights,
) -> Result<Var<'t>> {
    let mut total = pinn_loss(tape, net, phys, set, w)?;
    if !set.measurements.is_empty() {
        total = total + data_loss(tape, net, &set.measurements)?.scale(w.w_i);
    }
    let l_g = gradient_residual_loss(tape, net, phys, &set.gradient_points)?;
    Ok(total + l_g.scale(w.w_g))
}

/// Full training loss for `mode`, recorded on a fresh tape, differentiated
/// in reverse mode. Gradient order matches [`evaluate_loss`].
pub fn taped_gradient(mlp: &Mlp, problem: &LossProblem<'_>, physical: &[f64]) -> Result<GradientRecord> {
    let tape = Tape::new();
    let net = mlp.record(&tape)?;
    let phys = RecordedPhysics::new(&tape, problem.params, physical)?;
    let set = problem.set;
    let loss = match problem.mode {
        LossMode::Pinn => {
            let base = pinn_loss(&tape, &net, &phys, set, &problem.weights)?;
            if set.measurements.is_empty() {
                base
            } else {
                base + data_loss(&tape, &net, &set.measurements)?.scale(problem.weights.w_i)
            }
        }
        LossMode::Gpinn => gpinn_loss(&tape, &net, &phys, set, &problem.weights)?,
    };
    tape.backward(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::init_mlp;
    use crate::physics::InitialCondition;
    use crate::training::collocation::sample_collocation;
    use ndarray::{Array1, Array2};

    fn zero_net(sizes: &[usize]) -> Mlp {
        let mut mlp = init_mlp(sizes, 0).unwrap();
        let z = vec![0.0; mlp.param_count()];
        mlp.set_flat_params(&z).unwrap();
        mlp
    }

    #[test]
    fn zero_network_closed_form() {
        let p = SwingParams::default().with_p_m(0.1);
        let set = sample_collocation(20.0, &InitialCondition::default(), 17, 3).unwrap();
        let prob = LossProblem {
            params: &p,
            set: &set,
            weights: LossWeights::default(),
            mode: LossMode::Pinn,
        };
        let ev = evaluate_loss(&zero_net(&[1, 4, 1]), &prob, &[], false).unwrap();
        assert!((ev.terms.l_b - 0.02).abs() < 1e-15);
        assert!((ev.terms.l_f - 0.01).abs() < 1e-15);
        assert!((ev.total - 0.03).abs() < 1e-15);

        let tape = Tape::new();
        let net = zero_net(&[1, 4, 1]).record(&tape).unwrap();
        let phys = RecordedPhysics::new(&tape, &p, &[]).unwrap();
        let v = pinn_loss(&tape, &net, &phys, &set, &LossWeights::default()).unwrap();
        assert!((v.value() - 0.03).abs() < 1e-15);
    }

    /// `δ(t) = a + b t` with `K sin δ` negligible is not exact, so use
    /// K-free manufactured physics: a linear network with `d · b = P_m`.
    #[test]
    fn manufactured_exact_solution_zeroes_residuals() {
        let (a, b) = (0.1, 0.1);
        let mlp = Mlp::from_parts(
            vec![Array2::from_elem((1, 1), b)],
            vec![Array1::from_elem(1, a)],
            0,
        )
        .unwrap();
        // With B tiny, K sin δ is ~1e-300; P_m = d b balances damping.
        let p = SwingParams {
            b_susceptance: 1e-300,
            p_m: 0.15 * b,
            ..SwingParams::default()
        };
        let ic = InitialCondition {
            delta0: a,
            omega0: b,
            t0: 0.0,
        };
        let set = sample_collocation(20.0, &ic, 40, 5).unwrap();
        let prob = LossProblem {
            params: &p,
            set: &set,
            weights: LossWeights::default(),
            mode: LossMode::Gpinn,
        };
        let ev = evaluate_loss(&mlp, &prob, &[], false).unwrap();
        assert!(ev.terms.l_f < 1e-10);
        assert!(ev.terms.l_g < 1e-10);
        assert!(ev.terms.l_b < 1e-30);
    }

    #[test]
    fn zero_gradient_weight_reproduces_pinn_exactly() {
        let mlp = init_mlp(&[1, 8, 1], 3).unwrap();
        let p = SwingParams::default();
        let set = sample_collocation(20.0, &InitialCondition::default(), 10, 1).unwrap();
        let w = LossWeights {
            w_g: 0.0,
            ..LossWeights::default()
        };
        let mk = |mode| LossProblem {
            params: &p,
            set: &set,
            weights: w,
            mode,
        };
        let a = evaluate_loss(&mlp, &mk(LossMode::Pinn), &[], true).unwrap();
        let b = evaluate_loss(&mlp, &mk(LossMode::Gpinn), &[], true).unwrap();
        assert_eq!(a.total.to_bits(), b.total.to_bits());
        assert_eq!(a.network_grad, b.network_grad);
    }

    #[test]
    fn data_loss_cases() {
        let mlp = init_mlp(&[1, 5, 1], 8).unwrap();
        let times = [1.0, 4.5, 9.1];
        let self_meas: Vec<Measurement> = times
            .iter()
            .map(|&t| Measurement {
                t,
                delta: mlp.forward_jet(crate::autodiff::jet_seed_time(t).unwrap()).unwrap().c[0],
            })
            .collect();
        let tape = Tape::new();
        let net = mlp.record(&tape).unwrap();
        assert!(data_loss(&tape, &net, &self_meas).unwrap().value().abs() < 1e-30);
        let one = [Measurement { t: 2.0, delta: 0.7 }];
        let pred = mlp.forward_jet(crate::autodiff::jet_seed_time(2.0).unwrap()).unwrap().c[0];
        let v = data_loss(&tape, &net, &one).unwrap().value();
        assert!((v - (pred - 0.7).powi(2)).abs() < 1e-15);
        assert!(data_loss(&tape, &net, &[]).is_err());
    }

    #[test]
    fn fast_and_taped_routes_agree() {
        let mlp = init_mlp(&[1, 6, 4, 1], 12).unwrap();
        let p = SwingParams {
            trainable: TrainableMask::BOTH,
            ..SwingParams::default()
        };
        let set = sample_collocation(20.0, &InitialCondition::default(), 9, 2)
            .unwrap()
            .with_measurements(vec![
                Measurement { t: 3.0, delta: 0.4 },
                Measurement { t: 11.0, delta: 0.2 },
            ]);
        for mode in [LossMode::Pinn, LossMode::Gpinn] {
            let prob = LossProblem {
                params: &p,
                set: &set,
                weights: LossWeights::default(),
                mode,
            };
            let phys = [0.8, 0.3];
            let fast = evaluate_loss(&mlp, &prob, &phys, true).unwrap();
            let taped = taped_gradient(&mlp, &prob, &phys).unwrap();
            assert!((fast.total - taped.loss_value).abs() < 1e-13 * taped.loss_value);
            let mut ids = mlp.param_ids();
            ids.extend(physical_ids(p.trainable));
            let record = fast.into_record(ids.into());
            assert_eq!(record.ids, taped.ids);
            for (i, (a, b)) in record.values.iter().zip(&taped.values).enumerate() {
                assert!((a - b).abs() <= 1e-11 * b.abs().max(1e-3), "{mode} {i}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn distinct_gradient_points_supported() {
        let mlp = init_mlp(&[1, 5, 1], 2).unwrap();
        let p = SwingParams::default();
        let mut set = sample_collocation(20.0, &InitialCondition::default(), 6, 2).unwrap();
        set.gradient_points = vec![1.0, 2.0, 17.0];
        let prob = LossProblem {
            params: &p,
            set: &set,
            weights: LossWeights::default(),
            mode: LossMode::Gpinn,
        };
        let fast = evaluate_loss(&mlp, &prob, &[], true).unwrap();
        let taped = taped_gradient(&mlp, &prob, &[]).unwrap();
        assert!((fast.total - taped.loss_value).abs() < 1e-14);
        for (a, b) in fast.network_grad.iter().zip(&taped.values) {
            assert!((a - b).abs() <= 1e-11 * b.abs().max(1e-3));
        }
    }

    #[test]
    fn physical_estimate_count_checked() {
        let p = SwingParams {
            trainable: TrainableMask::BOTH,
            ..SwingParams::default()
        };
        assert!(effective_coefficients(&p, &[1.0]).is_err());
        assert_eq!(effective_coefficients(&p, &[0.5, 0.2]).unwrap(), (0.5, 0.2));
        let only_d = SwingParams {
            trainable: TrainableMask {
                inertia: false,
                damping: true,
            },
            ..SwingParams::default()
        };
        assert_eq!(effective_coefficients(&only_d, &[0.2]).unwrap(), (0.4, 0.2));
    }
}
