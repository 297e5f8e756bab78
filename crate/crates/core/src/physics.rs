//! Single-machine infinite-bus swing dynamics.
//!
//! `m_g δ̈ + d_g δ̇ + K sin δ − P_m = 0` with synchronizing coefficient
//! `K = E_g E_∞ B_g∞`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::Trajectory;

/// Which physical parameters are unknowns of the inverse problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainableMask {
    #[serde(default)]
    pub inertia: bool,
    #[serde(default)]
    pub damping: bool,
}

impl TrainableMask {
    pub const NONE: TrainableMask = TrainableMask {
        inertia: false,
        damping: false,
    };
    pub const BOTH: TrainableMask = TrainableMask {
        inertia: true,
        damping: true,
    };

    pub fn is_empty(&self) -> bool {
        !self.inertia && !self.damping
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SwingParams {
    /// Inertia, p.u.·s².
    pub m_g: f64,
    /// Damping, p.u.·s.
    pub d_g: f64,
    /// Generator internal voltage, p.u.
    pub e_g: f64,
    /// Infinite-bus voltage, p.u.
    pub e_inf: f64,
    /// Combined susceptance `1 / (x_g + x_l)`, p.u.
    pub b_susceptance: f64,
    /// Mechanical power input, p.u.
    pub p_m: f64,
    pub trainable: TrainableMask,
}

impl Default for SwingParams {
    fn default() -> Self {
        SwingParams {
            m_g: 0.4,
            d_g: 0.15,
            e_g: 1.0,
            e_inf: 1.0,
            b_susceptance: 0.2,
            p_m: 0.1,
            trainable: TrainableMask::NONE,
        }
    }
}

impl SwingParams {
    pub fn with_p_m(mut self, p_m: f64) -> Self {
        self.p_m = p_m;
        self
    }

    /// `K = E_g E_∞ B_g∞`.
    pub fn synchronizing_coefficient(&self) -> f64 {
        self.e_g * self.e_inf * self.b_susceptance
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("m_g", self.m_g),
            ("d_g", self.d_g),
            ("e_g", self.e_g),
            ("e_inf", self.e_inf),
            ("b_susceptance", self.b_susceptance),
            ("p_m", self.p_m),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be finite, got {v}")));
            }
        }
        for (name, v) in &fields[2..5] {
            if *v <= 0.0 {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.trainable.inertia && self.m_g <= 0.0 {
            return Err(Error::invalid(format!("m_g must be positive, got {}", self.m_g)));
        }
        if !self.trainable.damping && self.d_g <= 0.0 {
            return Err(Error::invalid(format!("d_g must be positive, got {}", self.d_g)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialCondition {
    /// Angle at `t0`, rad.
    pub delta0: f64,
    /// Angular frequency at `t0`, rad/s.
    pub omega0: f64,
    pub t0: f64,
}

impl Default for InitialCondition {
    fn default() -> Self {
        InitialCondition {
            delta0: 0.1,
            omega0: 0.1,
            t0: 0.0,
        }
    }
}

impl InitialCondition {
    pub fn validate(&self) -> Result<()> {
        if self.delta0.is_finite() && self.omega0.is_finite() && self.t0.is_finite() {
            Ok(())
        } else {
            Err(Error::invalid(format!("non-finite initial condition {self:?}")))
        }
    }
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().find(|v| !v.is_finite()) {
        Some(v) => Err(Error::invalid(format!("non-finite residual input {v}"))),
        None => Ok(()),
    }
}

#[inline]
pub(crate) fn residual_raw(m: f64, d: f64, k: f64, p_m: f64, u: f64, u_t: f64, u_tt: f64) -> f64 {
    m * u_tt + d * u_t + k * u.sin() - p_m
}

#[inline]
pub(crate) fn residual_time_grad_raw(
    m: f64,
    d: f64,
    k: f64,
    u: f64,
    u_t: f64,
    u_tt: f64,
    u_ttt: f64,
) -> f64 {
    m * u_ttt + d * u_tt + k * u.cos() * u_t
}

/// Swing residual `m u_tt + d u_t + K sin u − P_m`.
pub fn residual(p: &SwingParams, u: f64, u_t: f64, u_tt: f64) -> Result<f64> {
    check_finite(&[u, u_t, u_tt])?;
    Ok(residual_raw(
        p.m_g,
        p.d_g,
        p.synchronizing_coefficient(),
        p.p_m,
        u,
        u_t,
        u_tt,
    ))
}

/// Time derivative of the residual: `m u_ttt + d u_tt + K cos(u) u_t`.
pub fn residual_time_grad(p: &SwingParams, u: f64, u_t: f64, u_tt: f64, u_ttt: f64) -> Result<f64> {
    check_finite(&[u, u_t, u_tt, u_ttt])?;
    Ok(residual_time_grad_raw(
        p.m_g,
        p.d_g,
        p.synchronizing_coefficient(),
        u,
        u_t,
        u_tt,
        u_ttt,
    ))
}

/// Stable stationary angle `arcsin(P_m / K)`.
pub fn equilibrium_angle(p: &SwingParams) -> Result<f64> {
    let k = p.synchronizing_coefficient();
    if k <= 0.0 || !k.is_finite() {
        return Err(Error::invalid(format!("synchronizing coefficient must be positive, got {k}")));
    }
    if p.p_m.abs() > k {
        return Err(Error::NoEquilibrium { p_m: p.p_m, k });
    }
    Ok((p.p_m / k).asin())
}

/// Undamped energy `½ m ω² − K cos δ − P_m δ`.
pub fn energy(p: &SwingParams, delta: f64, omega: f64) -> f64 {
    0.5 * p.m_g * omega * omega - p.synchronizing_coefficient() * delta.cos() - p.p_m * delta
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Regime {
    Stable,
    Oscillating,
    Unstable,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::Stable, Regime::Oscillating, Regime::Unstable];

    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Stable => "Stable",
            Regime::Oscillating => "Oscillating",
            Regime::Unstable => "Unstable",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Pole-slip bound on `|δ(t) − δ(0)|`, rad.
pub const POLE_SLIP_BOUND: f64 = std::f64::consts::PI;
/// Minimum number of frequency sign changes for an oscillating label.
pub const OSCILLATION_SIGN_CHANGES: usize = 4;
/// Settling band around the equilibrium angle, rad.
pub const SETTLING_BAND: f64 = 0.01;

/// Number of strict sign changes in a sequence, ignoring exact zeros.
pub fn sign_changes(values: &[f64]) -> usize {
    let mut last = 0.0f64;
    let mut count = 0;
    for &v in values {
        if v == 0.0 {
            continue;
        }
        if last != 0.0 && (v > 0.0) != (last > 0.0) {
            count += 1;
        }
        last = v;
    }
    count
}

pub fn classify_regime(traj: &Trajectory, p: &SwingParams) -> Result<Regime> {
    if traj.is_empty() {
        return Err(Error::invalid("cannot classify an empty trajectory"));
    }
    let d0 = traj.delta[0];
    let slip = traj
        .delta
        .iter()
        .map(|d| (d - d0).abs())
        .fold(0.0, f64::max);
    if slip > POLE_SLIP_BOUND {
        return Ok(Regime::Unstable);
    }
    if sign_changes(&traj.omega) >= OSCILLATION_SIGN_CHANGES {
        return Ok(Regime::Oscillating);
    }
    let last = *traj.delta.last().unwrap_or(&d0);
    match equilibrium_angle(p) {
        Ok(eq) if (last - eq).abs() < SETTLING_BAND => Ok(Regime::Stable),
        _ => Ok(Regime::Oscillating),
    }
}
