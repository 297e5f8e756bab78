use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::physics::InitialCondition;

/// RNG stream for collocation draws (network init uses stream 0).
pub(crate) const COLLOCATION_STREAM: u64 = 1;
/// RNG stream for automatically drawn measurement times.
pub(crate) const MEASUREMENT_STREAM: u64 = 2;

pub const DEFAULT_RESIDUAL_POINTS: usize = 150;
pub const DEFAULT_BOUNDARY_MULTIPLICITY: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub t: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollocationSet {
    /// Interior residual points, s.
    pub residual_points: Vec<f64>,
    /// Initial condition enforced at `boundary.t0`.
    pub boundary: InitialCondition,
    /// Number of copies of the initial point. All copies coincide, so
    /// averaging over them equals a single evaluation.
    pub boundary_multiplicity: usize,
    /// Points for the residual-gradient loss.
    pub gradient_points: Vec<f64>,
    pub measurements: Vec<Measurement>,
    pub seed: u64,
}

impl CollocationSet {
    pub fn with_measurements(mut self, measurements: Vec<Measurement>) -> Self {
        self.measurements = measurements;
        self
    }

    pub fn validate(&self, horizon: f64) -> Result<()> {
        let t0 = self.boundary.t0;
        let t1 = t0 + horizon;
        let in_range = |t: f64| t.is_finite() && t >= t0 && t <= t1;
        if self.residual_points.is_empty() {
            return Err(Error::invalid("collocation set has no residual points"));
        }
        if let Some(t) = self
            .residual_points
            .iter()
            .chain(&self.gradient_points)
            .chain(self.measurements.iter().map(|m| &m.t))
            .find(|t| !in_range(**t))
        {
            return Err(Error::invalid(format!("collocation time {t} outside [{t0}, {t1}]")));
        }
        if let Some(m) = self.measurements.iter().find(|m| !m.delta.is_finite()) {
            return Err(Error::invalid(format!("non-finite measurement {m:?}")));
        }
        Ok(())
    }
}

fn open_interval_draws(rng: &mut ChaCha8Rng, t0: f64, horizon: f64, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let t = t0 + rng.random_range(0.0..horizon);
        if t > t0 && t < t0 + horizon {
            out.push(t);
        }
    }
    out
}

/// `n_f` residual times drawn uniformly from the open interval
/// `(t0, t0 + horizon)`; gradient points coincide with residual points.
pub fn sample_collocation(
    horizon: f64,
    ic: &InitialCondition,
    n_f: usize,
    seed: u64,
) -> Result<CollocationSet> {
    if n_f == 0 {
        return Err(Error::invalid("need at least one residual point"));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::invalid(format!("horizon must be positive, got {horizon}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(COLLOCATION_STREAM);
    let residual_points = open_interval_draws(&mut rng, ic.t0, horizon, n_f);
    Ok(CollocationSet {
        gradient_points: residual_points.clone(),
        residual_points,
        boundary: *ic,
        boundary_multiplicity: DEFAULT_BOUNDARY_MULTIPLICITY,
        measurements: Vec::new(),
        seed,
    })
}

/// Measurement times drawn uniformly from the open horizon.
pub fn sample_measurement_times(t0: f64, horizon: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::invalid("need at least one measurement"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(MEASUREMENT_STREAM);
    Ok(open_interval_draws(&mut rng, t0, horizon, n))
}
