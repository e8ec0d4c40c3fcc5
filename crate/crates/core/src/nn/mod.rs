//! Minimal deterministic layer engine with exact reverse-mode gradients.

pub mod gradcheck;
pub mod io;
pub mod layer;
pub mod loss;
pub mod model;
pub mod ops;

pub use gradcheck::{gradient_check, GradCheckReport};
pub use layer::{Layer, LayerSpec, Param};
pub use loss::{bce_grad, bce_loss};
pub use model::ModelGraph;
pub use ops::Activation;
