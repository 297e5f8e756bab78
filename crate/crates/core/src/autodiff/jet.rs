//! Order-3 truncated Taylor arithmetic in the time variable.
//!
//! A [`Jet3`] holds the normalized coefficients `c_k = u^(k)(t) / k!` of a
//! scalar signal expanded around a point. Elementary functions are applied
//! by composing their own Taylor coefficients with the input series
//! (Faà di Bruno, truncated at third order).

use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// Highest time-derivative order carried by a jet.
pub const JET_ORDER: usize = 3;

const FACTORIAL: [f64; 4] = [1.0, 1.0, 2.0, 6.0];

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Jet3 {
    pub c: [f64; 4],
}

/// Elementary operation tags understood by [`jet_op`] and the recording tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum JetOp {
    Add,
    Sub,
    Mul,
    Neg,
    Sin,
    Cos,
    Tanh,
    Scale,
}

impl JetOp {
    pub fn arity(self) -> usize {
        match self {
            JetOp::Add | JetOp::Sub | JetOp::Mul => 2,
            JetOp::Neg | JetOp::Sin | JetOp::Cos | JetOp::Tanh | JetOp::Scale => 1,
        }
    }

    pub fn needs_scalar(self) -> bool {
        matches!(self, JetOp::Scale)
    }
}

impl Jet3 {
    pub const fn new(c0: f64, c1: f64, c2: f64, c3: f64) -> Self {
        Jet3 {
            c: [c0, c1, c2, c3],
        }
    }

    pub const fn constant(v: f64) -> Self {
        Jet3::new(v, 0.0, 0.0, 0.0)
    }

    pub fn value(&self) -> f64 {
        self.c[0]
    }

    pub fn is_finite(&self) -> bool {
        self.c.iter().all(|v| v.is_finite())
    }

    pub fn scale(self, s: f64) -> Self {
        Jet3 {
            c: self.c.map(|v| v * s),
        }
    }

    /// Composes an outer function, given by its normalized derivatives at
    /// `c0` (`g[k] = g^(k)(c0) / k!`), with this series.
    pub fn compose(&self, g: [f64; 4]) -> Self {
        let [_, a1, a2, a3] = self.c;
        Jet3::new(
            g[0],
            g[1] * a1,
            g[1] * a2 + g[2] * a1 * a1,
            g[1] * a3 + 2.0 * g[2] * a1 * a2 + g[3] * a1 * a1 * a1,
        )
    }

    pub fn sin(&self) -> Self {
        let (s, c) = self.c[0].sin_cos();
        self.compose([s, c, -s / 2.0, -c / 6.0])
    }

    pub fn cos(&self) -> Self {
        let (s, c) = self.c[0].sin_cos();
        self.compose([c, -s, -c / 2.0, s / 6.0])
    }

    pub fn tanh(&self) -> Self {
        self.compose(tanh_taylor(self.c[0].tanh()))
    }
}

/// Normalized Taylor coefficients of `tanh` at a point, given `y = tanh(z)`.
#[inline]
pub fn tanh_taylor(y: f64) -> [f64; 4] {
    let s = 1.0 - y * y;
    [y, s, -y * s, s * (3.0 * y * y - 1.0) / 3.0]
}

impl Add for Jet3 {
    type Output = Jet3;
    fn add(self, rhs: Jet3) -> Jet3 {
        Jet3 {
            c: std::array::from_fn(|k| self.c[k] + rhs.c[k]),
        }
    }
}

impl Sub for Jet3 {
    type Output = Jet3;
    fn sub(self, rhs: Jet3) -> Jet3 {
        Jet3 {
            c: std::array::from_fn(|k| self.c[k] - rhs.c[k]),
        }
    }
}

impl Mul for Jet3 {
    type Output = Jet3;
    fn mul(self, rhs: Jet3) -> Jet3 {
        let a = self.c;
        let b = rhs.c;
        Jet3::new(
            a[0] * b[0],
            a[0] * b[1] + a[1] * b[0],
            a[0] * b[2] + a[1] * b[1] + a[2] * b[0],
            a[0] * b[3] + a[1] * b[2] + a[2] * b[1] + a[3] * b[0],
        )
    }
}

impl Neg for Jet3 {
    type Output = Jet3;
    fn neg(self) -> Jet3 {
        Jet3 { c: self.c.map(|v| -v) }
    }
}

/// Seeds the independent variable: the identity signal expanded at `t`.
pub fn jet_seed_time(t: f64) -> Result<Jet3> {
    if !t.is_finite() {
        return Err(Error::invalid(format!("seed time must be finite, got {t}")));
    }
    Ok(Jet3::new(t, 1.0, 0.0, 0.0))
}

/// Applies a tagged elementary operation. `scalar` is required by `Scale`
/// and rejected otherwise.
pub fn jet_op(op: JetOp, args: &[Jet3], scalar: Option<f64>) -> Result<Jet3> {
    if args.len() != op.arity() {
        return Err(Error::invalid(format!(
            "{op:?} takes {} argument(s), got {}",
            op.arity(),
            args.len()
        )));
    }
    if op.needs_scalar() != scalar.is_some() {
        return Err(Error::invalid(format!("scalar argument mismatch for {op:?}")));
    }
    if let Some(s) = scalar {
        if !s.is_finite() {
            return Err(Error::invalid(format!("non-finite scalar {s} for {op:?}")));
        }
    }
    if let Some(bad) = args.iter().find(|j| !j.is_finite()) {
        return Err(Error::invalid(format!("non-finite jet argument {bad:?}")));
    }
    let a = args[0];
    Ok(match op {
        JetOp::Add => a + args[1],
        JetOp::Sub => a - args[1],
        JetOp::Mul => a * args[1],
        JetOp::Neg => -a,
        JetOp::Sin => a.sin(),
        JetOp::Cos => a.cos(),
        JetOp::Tanh => a.tanh(),
        JetOp::Scale => a.scale(scalar.unwrap_or_default()),
    })
}

/// Returns the `k`-th time derivative `k! * c_k`.
pub fn derivative_extract(jet: &Jet3, k: usize) -> Result<f64> {
    if k > JET_ORDER {
        return Err(Error::invalid(format!(
            "derivative order {k} exceeds {JET_ORDER}"
        )));
    }
    Ok(FACTORIAL[k] * jet.c[k])
}
