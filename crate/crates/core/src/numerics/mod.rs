//! Deterministic numeric substrate shared by every other module.

pub mod gaussian;
pub mod mlp;
pub mod optim;
pub mod rng;

pub use gaussian::{gaussian_log_pdf, log_sum_exp, softmax};
pub use mlp::{time_embedding, Activation, LossSpec, MlpModel, DEFAULT_TIME_FEATURES};
pub use optim::{AdamState, EmaState};
pub use rng::Rng;
