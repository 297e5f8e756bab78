//! Batched jet propagation with a hand-derived adjoint.
//!
//! Columns of every activation matrix are laid out as four blocks
//! `[c0 | c1 | c2 | c3]`, each `n` wide, so one matrix product per layer
//! moves all Taylor coefficients of all time points at once. The adjoint
//! pass is reverse mode over exactly the same jet arithmetic.

use ndarray::{s, Array2, ArrayView1, Axis};

use super::Mlp;
use crate::autodiff::{tanh_taylor, Jet3};
use crate::error::{Error, Result};

/// Forward cache for a batch of seeded time points.
#[derive(Debug, Clone)]
pub struct BatchJets {
    n: usize,
    /// Input jets to each layer, `(in_l, 4n)`.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation jets of hidden layers, `(out_l, 4n)`.
    pre: Vec<Array2<f64>>,
    output: Array2<f64>,
}

const FACT: [f64; 4] = [1.0, 1.0, 2.0, 6.0];

impl BatchJets {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Output coefficient `c_k` at column `j`.
    #[inline]
    pub fn coeff(&self, k: usize, j: usize) -> f64 {
        self.output[[0, k * self.n + j]]
    }

    /// `k`-th time derivative of the output at column `j`.
    #[inline]
    pub fn derivative(&self, k: usize, j: usize) -> f64 {
        FACT[k] * self.coeff(k, j)
    }

    pub fn jet(&self, j: usize) -> Jet3 {
        Jet3 {
            c: std::array::from_fn(|k| self.coeff(k, j)),
        }
    }

    /// Values (c0 block) of each hidden layer's activations.
    pub fn hidden_values(&self) -> impl Iterator<Item = ndarray::ArrayView2<'_, f64>> {
        self.inputs[1..]
            .iter()
            .map(move |a| a.slice(s![.., 0..self.n]))
    }
}

#[inline]
fn tanh_jet(z: [f64; 4]) -> [f64; 4] {
    let g = tanh_taylor(z[0].tanh());
    let [_, a1, a2, a3] = z;
    [
        g[0],
        g[1] * a1,
        g[1] * a2 + g[2] * a1 * a1,
        g[1] * a3 + 2.0 * g[2] * a1 * a2 + g[3] * a1 * a1 * a1,
    ]
}

/// Adjoint of [`tanh_jet`]: maps output adjoints to input adjoints.
#[inline]
fn tanh_jet_adjoint(z: [f64; 4], y0: f64, ybar: [f64; 4]) -> [f64; 4] {
    let g = tanh_taylor(y0);
    let s = g[1];
    let g4 = y0 * s * (2.0 * s - y0 * y0) / 3.0;
    let [_, z1, z2, z3] = z;
    let [b0, b1, b2, b3] = ybar;
    let z1sq = z1 * z1;
    [
        b0 * g[1]
            + (b1 * z1 + b2 * z2 + b3 * z3) * (2.0 * g[2])
            + (b2 * z1sq + 2.0 * b3 * z1 * z2) * (3.0 * g[3])
            + b3 * z1sq * z1 * (4.0 * g4),
        b1 * g[1] + 2.0 * b2 * g[2] * z1 + b3 * (2.0 * g[2] * z2 + 3.0 * g[3] * z1sq),
        b2 * g[1] + 2.0 * b3 * g[2] * z1,
        b3 * g[1],
    ]
}

fn add_bias(z: &mut Array2<f64>, b: ArrayView1<'_, f64>, n: usize) {
    for (mut row, &bias) in z.axis_iter_mut(Axis(0)).zip(b.iter()) {
        for v in row.slice_mut(s![0..n]) {
            *v += bias;
        }
    }
}

impl Mlp {
    /// Jets of the output at each seeded time `(t, 1, 0, 0)`.
    pub fn forward_batch(&self, times: &[f64]) -> Result<BatchJets> {
        self.check_finite()?;
        if let Some(t) = times.iter().find(|t| !t.is_finite()) {
            return Err(Error::invalid(format!("non-finite time {t}")));
        }
        let n = times.len();
        let mut a = Array2::zeros((1, 4 * n));
        for (j, &t) in times.iter().enumerate() {
            a[[0, j]] = t;
            a[[0, n + j]] = 1.0;
        }
        let last = self.num_layers() - 1;
        let mut inputs = Vec::with_capacity(self.num_layers());
        let mut pre = Vec::with_capacity(last);
        for l in 0..=last {
            let mut z = self.weights[l].dot(&a);
            add_bias(&mut z, self.biases[l].view(), n);
            inputs.push(a);
            if l == last {
                return Ok(BatchJets {
                    n,
                    inputs,
                    pre,
                    output: z,
                });
            }
            let mut y = Array2::zeros(z.raw_dim());
            for (zr, mut yr) in z.axis_iter(Axis(0)).zip(y.axis_iter_mut(Axis(0))) {
                for j in 0..n {
                    let out = tanh_jet([zr[j], zr[n + j], zr[2 * n + j], zr[3 * n + j]]);
                    for k in 0..4 {
                        yr[k * n + j] = out[k];
                    }
                }
            }
            pre.push(z);
            a = y;
        }
        unreachable!("network has at least one layer")
    }

    /// Reverse pass: given adjoints of the output coefficients
    /// (`out_adj[j][k]` = ∂L/∂c_k at column `j`), returns ∂L/∂θ in flat
    /// parameter order.
    pub fn backward_batch(&self, cache: &BatchJets, out_adj: &[[f64; 4]]) -> Result<Vec<f64>> {
        let n = cache.n;
        if out_adj.len() != n {
            return Err(Error::invalid(format!(
                "adjoint has {} columns, batch has {n}",
                out_adj.len()
            )));
        }
        let mut zbar = Array2::zeros((1, 4 * n));
        for (j, adj) in out_adj.iter().enumerate() {
            for k in 0..4 {
                zbar[[0, k * n + j]] = adj[k];
            }
        }
        let layers = self.num_layers();
        let mut per_layer: Vec<(Array2<f64>, Vec<f64>)> = Vec::with_capacity(layers);
        for l in (0..layers).rev() {
            let a = &cache.inputs[l];
            let wbar = zbar.dot(&a.t());
            let bbar: Vec<f64> = zbar
                .axis_iter(Axis(0))
                .map(|row| row.slice(s![0..n]).sum())
                .collect();
            per_layer.push((wbar, bbar));
            if l == 0 {
                break;
            }
            let abar = self.weights[l].t().dot(&zbar);
            let z = &cache.pre[l - 1];
            let mut next = Array2::zeros(z.raw_dim());
            for ((zr, ar), (mut nr, yr)) in z
                .axis_iter(Axis(0))
                .zip(abar.axis_iter(Axis(0)))
                .zip(next.axis_iter_mut(Axis(0)).zip(a.axis_iter(Axis(0))))
            {
                for j in 0..n {
                    let out = tanh_jet_adjoint(
                        [zr[j], zr[n + j], zr[2 * n + j], zr[3 * n + j]],
                        yr[j],
                        [ar[j], ar[n + j], ar[2 * n + j], ar[3 * n + j]],
                    );
                    for k in 0..4 {
                        nr[k * n + j] = out[k];
                    }
                }
            }
            zbar = next;
        }
        let mut flat = Vec::with_capacity(self.param_count());
        for (wbar, bbar) in per_layer.into_iter().rev() {
            flat.extend(wbar.iter().copied());
            flat.extend(bbar);
        }
        Ok(flat)
    }
}
