//! Fully connected tanh surrogate `δ̂(t; θ)`: one time input, one angle
//! output, affine output layer.

mod batch;
mod checkpoint;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Jet3, JetVar, ParamId, Tape, Var};
use crate::error::{Error, Result};

pub use batch::BatchJets;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};

/// Hidden widths used for the full-fidelity surrogate.
pub const FULL_ARCHITECTURE: [usize; 6] = [1, 200, 150, 100, 50, 1];
/// Reduced architecture for minute-scale runs.
pub const CI_SMALL_ARCHITECTURE: [usize; 4] = [1, 64, 64, 1];

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    /// `weights[l]` has shape `(layer_sizes[l + 1], layer_sizes[l])`.
    pub(crate) weights: Vec<Array2<f64>>,
    pub(crate) biases: Vec<Array1<f64>>,
    seed: u64,
}

pub fn validate_layer_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::invalid(format!(
            "need at least an input and an output layer, got {layer_sizes:?}"
        )));
    }
    if layer_sizes.iter().any(|&n| n == 0) {
        return Err(Error::invalid(format!("layer sizes must be positive: {layer_sizes:?}")));
    }
    if layer_sizes[0] != 1 || *layer_sizes.last().unwrap() != 1 {
        return Err(Error::invalid(format!(
            "input and output widths must be 1: {layer_sizes:?}"
        )));
    }
    Ok(())
}

/// Glorot-uniform weights, zero biases, reproducible from `seed`.
pub fn init_mlp(layer_sizes: &[usize], seed: u64) -> Result<Mlp> {
    validate_layer_sizes(layer_sizes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
    let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
    for pair in layer_sizes.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        weights.push(Array2::from_shape_simple_fn((fan_out, fan_in), || {
            rng.random_range(-bound..bound)
        }));
        biases.push(Array1::zeros(fan_out));
    }
    Ok(Mlp {
        layer_sizes: layer_sizes.to_vec(),
        weights,
        biases,
        seed,
    })
}

impl Mlp {
    /// Builds a network from explicit parameters.
    pub fn from_parts(weights: Vec<Array2<f64>>, biases: Vec<Array1<f64>>, seed: u64) -> Result<Mlp> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::invalid("weights and biases must be non-empty and paired"));
        }
        let mut sizes = vec![weights[0].ncols()];
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.ncols() != *sizes.last().unwrap() || w.nrows() != b.len() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {l}: weight {:?}, bias {}",
                    w.dim(),
                    b.len()
                )));
            }
            sizes.push(w.nrows());
        }
        validate_layer_sizes(&sizes)?;
        let mlp = Mlp {
            layer_sizes: sizes,
            weights,
            biases,
            seed,
        };
        mlp.check_finite()?;
        Ok(mlp)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|p| p[0] * p[1] + p[1])
            .sum()
    }

    /// Parameter identifiers in flat order: per layer, weights row-major
    /// then biases.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::with_capacity(self.param_count());
        for (layer, w) in self.weights.iter().enumerate() {
            for row in 0..w.nrows() {
                for col in 0..w.ncols() {
                    ids.push(ParamId::Weight { layer, row, col });
                }
            }
            for row in 0..w.nrows() {
                ids.push(ParamId::Bias { layer, row });
            }
        }
        ids
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut pos = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            for v in w.iter_mut() {
                *v = flat[pos];
                pos += 1;
            }
            for v in b.iter_mut() {
                *v = flat[pos];
                pos += 1;
            }
        }
        Ok(())
    }

    pub fn check_finite(&self) -> Result<()> {
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            if let Some((i, v)) = w.iter().enumerate().find(|(_, v)| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("weight matrix of layer {l}"),
                    index: i,
                    value: *v,
                });
            }
            if let Some((i, v)) = b.iter().enumerate().find(|(_, v)| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("bias vector of layer {l}"),
                    index: i,
                    value: *v,
                });
            }
        }
        Ok(())
    }

    /// Propagates an input jet through the network.
    pub fn forward_jet(&self, t: Jet3) -> Result<Jet3> {
        self.check_finite()?;
        let mut act = vec![t];
        let last = self.num_layers() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut next = Vec::with_capacity(w.nrows());
            for r in 0..w.nrows() {
                let mut z = Jet3::constant(b[r]);
                for (c, a) in act.iter().enumerate() {
                    z = z + a.scale(w[[r, c]]);
                }
                next.push(if l == last { z } else { z.tanh() });
            }
            act = next;
        }
        Ok(act[0])
    }

    /// Registers all weights and biases as trainable leaves on `tape`.
    pub fn record<'t>(&self, tape: &'t Tape) -> Result<RecordedMlp<'t>> {
        self.check_finite()?;
        let mut weights = Vec::with_capacity(self.num_layers());
        let mut biases = Vec::with_capacity(self.num_layers());
        for (layer, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut wl = Vec::with_capacity(w.len());
            for row in 0..w.nrows() {
                for col in 0..w.ncols() {
                    wl.push(tape.param(ParamId::Weight { layer, row, col }, w[[row, col]])?);
                }
            }
            let mut bl = Vec::with_capacity(b.len());
            for row in 0..b.len() {
                bl.push(tape.param(ParamId::Bias { layer, row }, b[row])?);
            }
            weights.push(wl);
            biases.push(bl);
        }
        Ok(RecordedMlp {
            layer_sizes: self.layer_sizes.clone(),
            weights,
            biases,
        })
    }
}

/// Network parameters living on a tape.
pub struct RecordedMlp<'t> {
    layer_sizes: Vec<usize>,
    weights: Vec<Vec<Var<'t>>>,
    biases: Vec<Vec<Var<'t>>>,
}

impl<'t> RecordedMlp<'t> {
    pub fn forward_jet(&self, t: JetVar<'t>) -> JetVar<'t> {
        let mut act = vec![t];
        let last = self.weights.len() - 1;
        for l in 0..self.weights.len() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let mut next = Vec::with_capacity(n_out);
            for r in 0..n_out {
                let mut z = act[0].scale_var(self.weights[l][r * n_in]);
                for (c, a) in act.iter().enumerate().skip(1) {
                    z = z + a.scale_var(self.weights[l][r * n_in + c]);
                }
                let z = z.add_value(self.biases[l][r]);
                next.push(if l == last { z } else { z.tanh() });
            }
            act = next;
        }
        act[0]
    }
}
