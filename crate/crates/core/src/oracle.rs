//! Ground-truth trajectories from fixed-step classical Runge–Kutta.

use std::io::Write;

use crate::csvfmt::{fmt_f64, write_digest_header};
use crate::error::{Error, Result};
use crate::physics::{InitialCondition, SwingParams};

/// Default oracle step, s.
pub const DEFAULT_STEP: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub delta: Vec<f64>,
    pub omega: Vec<f64>,
    pub params: SwingParams,
    pub step_size: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn t0(&self) -> f64 {
        self.times[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().expect("non-empty trajectory")
    }

    /// Keeps every `stride`-th sample.
    pub fn decimate(&self, stride: usize) -> Trajectory {
        let stride = stride.max(1);
        let pick = |v: &[f64]| v.iter().step_by(stride).copied().collect::<Vec<_>>();
        Trajectory {
            times: pick(&self.times),
            delta: pick(&self.delta),
            omega: pick(&self.omega),
            params: self.params,
            step_size: self.step_size * stride as f64,
        }
    }

    pub fn write_csv<W: Write>(&self, mut out: W, digest: Option<&str>) -> Result<()> {
        if let Some(d) = digest {
            write_digest_header(&mut out, d)?;
        }
        writeln!(out, "t,delta,omega")?;
        for i in 0..self.len() {
            writeln!(
                out,
                "{},{},{}",
                fmt_f64(self.times[i]),
                fmt_f64(self.delta[i]),
                fmt_f64(self.omega[i])
            )?;
        }
        Ok(())
    }
}

/// Right-hand side of the first-order system `δ' = ω`,
/// `ω' = (P_m − d ω − K sin δ) / m`.
#[inline]
pub fn swing_rhs(p: &SwingParams, k: f64, delta: f64, omega: f64) -> (f64, f64) {
    (omega, (p.p_m - p.d_g * omega - k * delta.sin()) / p.m_g)
}

#[inline]
fn rk4_step(p: &SwingParams, k: f64, h: f64, d: f64, w: f64) -> (f64, f64) {
    let (k1d, k1w) = swing_rhs(p, k, d, w);
    let (k2d, k2w) = swing_rhs(p, k, d + 0.5 * h * k1d, w + 0.5 * h * k1w);
    let (k3d, k3w) = swing_rhs(p, k, d + 0.5 * h * k2d, w + 0.5 * h * k2w);
    let (k4d, k4w) = swing_rhs(p, k, d + h * k3d, w + h * k3w);
    (
        d + h / 6.0 * (k1d + 2.0 * k2d + 2.0 * k3d + k4d),
        w + h / 6.0 * (k1w + 2.0 * k2w + 2.0 * k3w + k4w),
    )
}

fn step_count(horizon: f64, h: f64) -> Result<usize> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!("step size must be positive, got {h}")));
    }
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::invalid(format!("horizon must be non-negative, got {horizon}")));
    }
    let n = (horizon / h).round();
    if (n * h - horizon).abs() > 1e-9 * horizon.max(1.0) {
        return Err(Error::invalid(format!(
            "horizon {horizon} is not a multiple of step {h}"
        )));
    }
    Ok(n as usize)
}

/// Integrates until the horizon or the first non-finite state. Returns the
/// samples computed so far and, on divergence, the failing time.
pub fn integrate_swing_partial(
    p: &SwingParams,
    ic: &InitialCondition,
    horizon: f64,
    h: f64,
) -> Result<(Trajectory, Option<f64>)> {
    let n = step_count(horizon, h)?;
    ic.validate()?;
    if !(p.m_g > 0.0) {
        return Err(Error::invalid(format!("m_g must be positive, got {}", p.m_g)));
    }
    let k = p.synchronizing_coefficient();
    let mut times = Vec::with_capacity(n + 1);
    let mut delta = Vec::with_capacity(n + 1);
    let mut omega = Vec::with_capacity(n + 1);
    let (mut d, mut w) = (ic.delta0, ic.omega0);
    times.push(ic.t0);
    delta.push(d);
    omega.push(w);
    let mut failed = None;
    for i in 1..=n {
        (d, w) = rk4_step(p, k, h, d, w);
        let t = ic.t0 + i as f64 * h;
        if !(d.is_finite() && w.is_finite()) {
            failed = Some(t);
            break;
        }
        times.push(t);
        delta.push(d);
        omega.push(w);
    }
    Ok((
        Trajectory {
            times,
            delta,
            omega,
            params: *p,
            step_size: h,
        },
        failed,
    ))
}

pub fn integrate_swing(
    p: &SwingParams,
    ic: &InitialCondition,
    horizon: f64,
    h: f64,
) -> Result<Trajectory> {
    match integrate_swing_partial(p, ic, horizon, h)? {
        (traj, None) => Ok(traj),
        (_, Some(time)) => Err(Error::Divergence { time }),
    }
}

/// Cubic Hermite interpolation of `(δ, ω)` at each query time. `δ` uses
/// the stored `ω` as its derivative; `ω` uses the ODE right-hand side.
pub fn sample_trajectory(traj: &Trajectory, query_times: &[f64]) -> Result<Vec<(f64, f64)>> {
    if traj.is_empty() {
        return Err(Error::invalid("cannot sample an empty trajectory"));
    }
    let (t0, t1) = (traj.t0(), traj.t_end());
    let h = traj.step_size;
    let p = &traj.params;
    let k = p.synchronizing_coefficient();
    let last = traj.len() - 1;
    query_times
        .iter()
        .map(|&t| {
            let tol = 1e-12 * h;
            if !(t >= t0 - tol && t <= t1 + tol) {
                return Err(Error::invalid(format!(
                    "query time {t} outside [{t0}, {t1}]"
                )));
            }
            let x = ((t - t0) / h).clamp(0.0, last as f64);
            let nearest = x.round();
            if (x - nearest).abs() < 1e-9 {
                let i = nearest as usize;
                return Ok((traj.delta[i], traj.omega[i]));
            }
            let i = (x.floor() as usize).min(last);
            let s = x - i as f64;
            if i == last {
                return Ok((traj.delta[i], traj.omega[i]));
            }
            let (d0, d1) = (traj.delta[i], traj.delta[i + 1]);
            let (w0, w1) = (traj.omega[i], traj.omega[i + 1]);
            let (_, a0) = swing_rhs(p, k, d0, w0);
            let (_, a1) = swing_rhs(p, k, d1, w1);
            let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
            let h10 = s * (1.0 - s) * (1.0 - s);
            let h01 = s * s * (3.0 - 2.0 * s);
            let h11 = s * s * (s - 1.0);
            Ok((
                h00 * d0 + h10 * h * w0 + h01 * d1 + h11 * h * w1,
                h00 * w0 + h10 * h * a0 + h01 * w1 + h11 * h * a1,
            ))
        })
        .collect()
}

/// Richardson estimate of the observed order from runs at `h`, `h/2`,
/// `h/4` with `h = horizon / 200`.
pub fn convergence_check(p: &SwingParams, ic: &InitialCondition, horizon: f64) -> Result<f64> {
    if !(horizon > 0.0) {
        return Err(Error::invalid("convergence check needs a positive horizon"));
    }
    let coarse_steps = 200usize;
    let h = horizon / coarse_steps as f64;
    let runs = [1usize, 2, 4]
        .map(|r| integrate_swing(p, ic, horizon, h / r as f64).map(|t| (t, r)));
    let mut trajs = Vec::with_capacity(3);
    for run in runs {
        trajs.push(run?);
    }
    let gap = |a: &(Trajectory, usize), b: &(Trajectory, usize)| {
        (0..=coarse_steps)
            .map(|i| {
                let (ia, ib) = (i * a.1, i * b.1);
                (a.0.delta[ia] - b.0.delta[ib])
                    .abs()
                    .max((a.0.omega[ia] - b.0.omega[ib]).abs())
            })
            .fold(0.0, f64::max)
    };
    let e1 = gap(&trajs[0], &trajs[1]);
    let e2 = gap(&trajs[1], &trajs[2]);
    if !(e1 > 0.0 && e2 > 0.0) {
        return Err(Error::invalid("step refinement produced no measurable change"));
    }
    Ok((e1 / e2).log2())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::{energy, residual, TrainableMask};

    fn harmonic(delta0: f64) -> (SwingParams, InitialCondition) {
        (
            SwingParams {
                m_g: 0.4,
                d_g: 0.0,
                e_g: 1.0,
                e_inf: 1.0,
                b_susceptance: 0.2,
                p_m: 0.0,
                trainable: TrainableMask::NONE,
            },
            InitialCondition {
                delta0,
                omega0: 0.0,
                t0: 0.0,
            },
        )
    }

    #[test]
    fn small_angle_matches_cosine() {
        let (p, ic) = harmonic(0.01);
        let tr = integrate_swing(&p, &ic, 20.0, 1e-3).unwrap();
        let freq = (p.synchronizing_coefficient() / p.m_g).sqrt();
        let worst = tr
            .times
            .iter()
            .zip(&tr.delta)
            .map(|(t, d)| (d - 0.01 * (freq * t).cos()).abs())
            .fold(0.0, f64::max);
        assert!(worst < 2e-6, "worst {worst}");
    }

    #[test]
    fn zero_horizon_is_initial_state() {
        let (p, ic) = harmonic(0.3);
        let tr = integrate_swing(&p, &ic, 0.0, 1e-3).unwrap();
        assert_eq!(tr.len(), 1);
        assert_eq!((tr.delta[0], tr.omega[0]), (0.3, 0.0));
    }

    #[test]
    fn undamped_energy_conserved() {
        let p = SwingParams {
            d_g: 0.0,
            ..SwingParams::default()
        };
        let ic = InitialCondition::default();
        let tr = integrate_swing(&p, &ic, 20.0, 1e-3).unwrap();
        let e0 = energy(&p, tr.delta[0], tr.omega[0]);
        let drift = tr
            .delta
            .iter()
            .zip(&tr.omega)
            .map(|(d, w)| (energy(&p, *d, *w) - e0).abs())
            .fold(0.0, f64::max);
        assert!(drift < 1e-8, "drift {drift}");
    }

    #[test]
    fn residual_vanishes_along_trajectory() {
        let p = SwingParams::default();
        let tr = integrate_swing(&p, &InitialCondition::default(), 20.0, 1e-3).unwrap();
        let k = p.synchronizing_coefficient();
        for i in (0..tr.len()).step_by(97) {
            let (_, acc) = swing_rhs(&p, k, tr.delta[i], tr.omega[i]);
            let f = residual(&p, tr.delta[i], tr.omega[i], acc).unwrap();
            assert!(f.abs() < 1e-15);
        }
    }

    #[test]
    fn deterministic() {
        let p = SwingParams::default();
        let ic = InitialCondition::default();
        let a = integrate_swing(&p, &ic, 5.0, 1e-3).unwrap();
        let b = integrate_swing(&p, &ic, 5.0, 1e-3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rk4_order() {
        let p = SwingParams::default().with_p_m(0.15);
        let order = convergence_check(&p, &InitialCondition::default(), 20.0).unwrap();
        assert!((3.8..=4.2).contains(&order), "order {order}");
        let unstable = SwingParams::default().with_p_m(0.22);
        let order = convergence_check(&unstable, &InitialCondition::default(), 20.0).unwrap();
        assert!((3.8..=4.2).contains(&order), "order {order}");
    }

    #[test]
    fn step_halving_error_ratio() {
        let p = SwingParams::default().with_p_m(0.15);
        let ic = InitialCondition::default();
        let horizon = 10.0;
        let reference = integrate_swing(&p, &ic, horizon, 1e-5).unwrap();
        let end = |h: f64| {
            let tr = integrate_swing(&p, &ic, horizon, h).unwrap();
            (tr.delta.last().unwrap() - reference.delta.last().unwrap()).abs()
        };
        let ratio = end(0.1) / end(0.05);
        assert!((14.0..18.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn divergence_reported() {
        let p = SwingParams {
            m_g: 1e-300,
            ..SwingParams::default()
        };
        let err = integrate_swing(&p, &InitialCondition::default(), 1.0, 0.1).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }

    #[test]
    fn sampling() {
        let (p, ic) = harmonic(1e-3);
        let tr = integrate_swing(&p, &ic, 20.0, 1e-3).unwrap();
        let at_node = sample_trajectory(&tr, &[tr.times[1234]]).unwrap()[0];
        assert_eq!(at_node, (tr.delta[1234], tr.omega[1234]));
        let freq = (p.synchronizing_coefficient() / p.m_g).sqrt();
        for i in [0usize, 777, 12345, 19998] {
            let t = tr.times[i] + 0.5e-3;
            let (d, w) = sample_trajectory(&tr, &[t]).unwrap()[0];
            assert!((d - 1e-3 * (freq * t).cos()).abs() < 1e-8);
            assert!((w + 1e-3 * freq * (freq * t).sin()).abs() < 1e-8);
        }
        assert!(sample_trajectory(&tr, &[21.0]).is_err());
        assert!(sample_trajectory(&tr, &[-0.1]).is_err());
    }

    #[test]
    fn csv_export() {
        let tr = integrate_swing(&SwingParams::default(), &InitialCondition::default(), 0.002, 1e-3).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf, Some("abc")).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = s.lines().collect();
        assert_eq!(lines[0], "# config_digest: abc");
        assert_eq!(lines[1], "t,delta,omega");
        assert_eq!(lines.len(), 5);
        let back: f64 = lines[3].split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(back, tr.delta[1]);
    }
}
