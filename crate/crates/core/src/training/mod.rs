//! Loss assembly and Adam optimization for forward, inverse, and
//! warm-started problems.

mod adam;
mod collocation;
mod loss;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use collocation::{
    sample_collocation, sample_measurement_times, CollocationSet, Measurement,
    DEFAULT_BOUNDARY_MULTIPLICITY, DEFAULT_RESIDUAL_POINTS,
};
pub use loss::{
    data_loss, effective_coefficients, evaluate_loss, gpinn_loss, gradient_residual_loss,
    physical_ids, pinn_loss, taped_gradient, LossEvaluation, LossMode, LossProblem, LossTerms,
    LossWeights, RecordedPhysics,
};
pub use train::{
    accounting_error, train_digest, train_forward, train_inverse, warm_start, warm_start_trainer, write_history_csv,
    Architecture, EpochRecord, TrainConfig, TrainResult, Trainer, DEFAULT_EPOCHS,
    DEFAULT_TRANSFER_EPOCHS,
};
