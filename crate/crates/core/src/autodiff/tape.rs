//! Scalar Wengert tape for reverse-mode differentiation.
//!
//! Every jet coefficient built through [`JetVar`] is an ordinary tape node,
//! so a loss assembled from time derivatives of a network output can be
//! differentiated with respect to the network parameters (and any physical
//! parameters registered as leaves) in one backward sweep.

use std::cell::RefCell;
use std::collections::HashSet;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use super::jet::{tanh_taylor, Jet3, JetOp};
use crate::error::{Error, Result};

/// Identifier of a trainable parameter.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamId {
    Weight { layer: usize, row: usize, col: usize },
    Bias { layer: usize, row: usize },
    Inertia,
    Damping,
    Named(String),
}

impl fmt::Display for ParamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamId::Weight { layer, row, col } => write!(f, "W{layer}[{row},{col}]"),
            ParamId::Bias { layer, row } => write!(f, "b{layer}[{row}]"),
            ParamId::Inertia => write!(f, "m_g"),
            ParamId::Damping => write!(f, "d_g"),
            ParamId::Named(name) => write!(f, "{name}"),
        }
    }
}

/// Loss value plus one partial derivative per trainable parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientRecord {
    pub loss_value: f64,
    pub ids: Arc<[ParamId]>,
    pub values: Vec<f64>,
}

impl GradientRecord {
    pub fn get(&self, id: &ParamId) -> Option<f64> {
        self.ids.iter().position(|p| p == id).map(|i| self.values[i])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamId, f64)> {
        self.ids.iter().zip(self.values.iter().copied())
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    op: &'static str,
    value: f64,
    parents: [(usize, f64); 2],
    arity: u8,
}

#[derive(Default)]
struct TapeInner {
    nodes: Vec<Node>,
    params: Vec<(ParamId, usize)>,
    seen: HashSet<ParamId>,
}

/// Recording graph. Confined to a single thread; independent tapes share
/// nothing.
#[derive(Default)]
pub struct Tape {
    inner: RefCell<TapeInner>,
}

/// Handle to a scalar node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}({})", self.idx, self.value())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: &'static str, value: f64, parents: &[(usize, f64)]) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        let mut p = [(0, 0.0); 2];
        p[..parents.len()].copy_from_slice(parents);
        inner.nodes.push(Node {
            op,
            value,
            parents: p,
            arity: parents.len() as u8,
        });
        Var {
            tape: self,
            idx: inner.nodes.len() - 1,
        }
    }

    /// Registers a trainable leaf.
    pub fn param(&self, id: ParamId, value: f64) -> Result<Var<'_>> {
        {
            let inner = self.inner.borrow();
            if inner.seen.contains(&id) {
                return Err(Error::invalid(format!("parameter {id} registered twice")));
            }
        }
        let v = self.push("param", value, &[]);
        let mut inner = self.inner.borrow_mut();
        inner.seen.insert(id.clone());
        inner.params.push((id, v.idx));
        Ok(v)
    }

    /// A non-trainable leaf.
    pub fn constant(&self, value: f64) -> Var<'_> {
        self.push("const", value, &[])
    }

    /// Constant jet (e.g. the seeded time signal).
    pub fn constant_jet(&self, jet: Jet3) -> JetVar<'_> {
        JetVar {
            c: jet.c.map(|v| self.constant(v)),
        }
    }

    pub fn jet_op<'t>(
        &'t self,
        op: JetOp,
        args: &[JetVar<'t>],
        scalar: Option<f64>,
    ) -> Result<JetVar<'t>> {
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

    /// Reverse sweep from `loss`, returning partials for every registered
    /// parameter in registration order.
    pub fn backward(&self, loss: Var<'_>) -> Result<GradientRecord> {
        let inner = self.inner.borrow();
        let loss_value = inner.nodes[loss.idx].value;
        if !loss_value.is_finite() {
            let (index, node) = inner
                .nodes
                .iter()
                .enumerate()
                .find(|(_, n)| !n.value.is_finite())
                .map(|(i, n)| (i, *n))
                .unwrap_or((loss.idx, inner.nodes[loss.idx]));
            return Err(Error::NonFinite {
                context: format!("tape op `{}`", node.op),
                index,
                value: node.value,
            });
        }
        let mut adj = vec![0.0; loss.idx + 1];
        adj[loss.idx] = 1.0;
        for i in (0..=loss.idx).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let node = &inner.nodes[i];
            for &(p, d) in &node.parents[..node.arity as usize] {
                adj[p] += a * d;
            }
        }
        let ids: Arc<[ParamId]> = inner.params.iter().map(|(id, _)| id.clone()).collect();
        let values = inner
            .params
            .iter()
            .map(|&(_, idx)| if idx <= loss.idx { adj[idx] } else { 0.0 })
            .collect();
        Ok(GradientRecord {
            loss_value,
            ids,
            values,
        })
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> f64 {
        self.tape.inner.borrow().nodes[self.idx].value
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        self.tape.push("scale", self.value() * s, &[(self.idx, s)])
    }

    pub fn add_const(self, c: f64) -> Var<'t> {
        self.tape.push("add_const", self.value() + c, &[(self.idx, 1.0)])
    }

    pub fn square(self) -> Var<'t> {
        let v = self.value();
        self.tape.push("square", v * v, &[(self.idx, 2.0 * v)])
    }

    pub fn sin(self) -> Var<'t> {
        let (s, c) = self.value().sin_cos();
        self.tape.push("sin", s, &[(self.idx, c)])
    }

    pub fn cos(self) -> Var<'t> {
        let (s, c) = self.value().sin_cos();
        self.tape.push("cos", c, &[(self.idx, -s)])
    }

    pub fn tanh(self) -> Var<'t> {
        let y = self.value().tanh();
        self.tape.push("tanh", y, &[(self.idx, 1.0 - y * y)])
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.tape
            .push("add", self.value() + rhs.value(), &[(self.idx, 1.0), (rhs.idx, 1.0)])
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.tape
            .push("sub", self.value() - rhs.value(), &[(self.idx, 1.0), (rhs.idx, -1.0)])
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), rhs.value());
        self.tape
            .push("mul", a * b, &[(self.idx, b), (rhs.idx, a)])
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.tape.push("neg", -self.value(), &[(self.idx, -1.0)])
    }
}

/// Order-3 jet whose coefficients are tape nodes.
#[derive(Debug, Clone, Copy)]
pub struct JetVar<'t> {
    pub c: [Var<'t>; 4],
}

impl<'t> JetVar<'t> {
    pub fn values(&self) -> Jet3 {
        Jet3 {
            c: self.c.map(|v| v.value()),
        }
    }

    pub fn scale(self, s: f64) -> JetVar<'t> {
        JetVar {
            c: self.c.map(|v| v.scale(s)),
        }
    }

    /// Multiplies every coefficient by a (time-constant) scalar node.
    pub fn scale_var(self, s: Var<'t>) -> JetVar<'t> {
        JetVar {
            c: self.c.map(|v| v * s),
        }
    }

    /// Adds a time-constant node to the value coefficient.
    pub fn add_value(self, b: Var<'t>) -> JetVar<'t> {
        let [c0, c1, c2, c3] = self.c;
        JetVar {
            c: [c0 + b, c1, c2, c3],
        }
    }

    fn compose(self, g: [Var<'t>; 4]) -> JetVar<'t> {
        let [_, a1, a2, a3] = self.c;
        let a1sq = a1 * a1;
        JetVar {
            c: [
                g[0],
                g[1] * a1,
                g[1] * a2 + g[2] * a1sq,
                g[1] * a3 + (g[2] * a1 * a2).scale(2.0) + g[3] * a1sq * a1,
            ],
        }
    }

    pub fn sin(self) -> JetVar<'t> {
        let s = self.c[0].sin();
        let c = self.c[0].cos();
        self.compose([s, c, s.scale(-0.5), c.scale(-1.0 / 6.0)])
    }

    pub fn cos(self) -> JetVar<'t> {
        let s = self.c[0].sin();
        let c = self.c[0].cos();
        self.compose([c, -s, c.scale(-0.5), s.scale(1.0 / 6.0)])
    }

    pub fn tanh(self) -> JetVar<'t> {
        let y = self.c[0].tanh();
        // 1 - y^2, -y(1 - y^2), (1 - y^2)(3y^2 - 1)/3
        let ysq = y.square();
        let g1 = (-ysq).add_const(1.0);
        let g2 = -(y * g1);
        let g3 = (g1 * ysq.scale(3.0).add_const(-1.0)).scale(1.0 / 3.0);
        debug_assert!({
            let t = tanh_taylor(y.value());
            (t[3] - g3.value()).abs() <= 1e-14
        });
        self.compose([y, g1, g2, g3])
    }
}

impl<'t> Add for JetVar<'t> {
    type Output = JetVar<'t>;
    fn add(self, rhs: JetVar<'t>) -> JetVar<'t> {
        JetVar {
            c: std::array::from_fn(|k| self.c[k] + rhs.c[k]),
        }
    }
}

impl<'t> Sub for JetVar<'t> {
    type Output = JetVar<'t>;
    fn sub(self, rhs: JetVar<'t>) -> JetVar<'t> {
        JetVar {
            c: std::array::from_fn(|k| self.c[k] - rhs.c[k]),
        }
    }
}

impl<'t> Mul for JetVar<'t> {
    type Output = JetVar<'t>;
    fn mul(self, rhs: JetVar<'t>) -> JetVar<'t> {
        let a = self.c;
        let b = rhs.c;
        JetVar {
            c: [
                a[0] * b[0],
                a[0] * b[1] + a[1] * b[0],
                a[0] * b[2] + a[1] * b[1] + a[2] * b[0],
                a[0] * b[3] + a[1] * b[2] + a[2] * b[1] + a[3] * b[0],
            ],
        }
    }
}

impl<'t> Neg for JetVar<'t> {
    type Output = JetVar<'t>;
    fn neg(self) -> JetVar<'t> {
        JetVar {
            c: self.c.map(|v| -v),
        }
    }
}
