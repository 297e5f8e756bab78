//! Exact time derivatives (order-3 Taylor jets) and parameter gradients
//! (reverse mode over jet arithmetic).

mod jet;
mod tape;

pub use jet::{derivative_extract, jet_op, jet_seed_time, tanh_taylor, Jet3, JetOp, JET_ORDER};
pub use tape::{GradientRecord, JetVar, ParamId, Tape, Var};
