//! Day-ahead PV generation forecasting with a multi-level fusion
//! transformer.
//!
//! The crate covers the whole path from raw meter and weather CSVs to
//! evaluated forecasts:
//!
//! - [`tensor`], [`autodiff`], [`params`] and [`gradcheck`]: a small f64
//!   tensor library with tape-based reverse-mode differentiation.
//! - [`data`]: resampling, normalization, weather encoding, sliding
//!   windows and a deterministic synthetic generator.
//! - [`model`]: the attention model and its LSTM/GRU baselines.
//! - [`train`]: Adam, plateau scheduling, the epoch loop and checkpoints.
//! - [`eval`]: forecast metrics, the Diebold–Mariano test, branch ablation
//!   and plot export.
//! - [`cli`]: the `matnet` command-line front end.

pub mod autodiff;
pub mod checks;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod params;
pub mod tensor;
pub mod train;

pub use autodiff::{Tape, Var};
pub use error::{Error, Result};
pub use model::{Model, ModelConfig};
pub use params::ParamStore;
pub use tensor::Tensor;
