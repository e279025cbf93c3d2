//! Self-supervised monocular depth estimation with dense skip connections and
//! feature-fusion squeeze-excitation blocks, built on a small double-precision
//! autograd engine.

pub mod arch;
pub mod autograd;
pub mod data;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod gradcheck;
pub mod gradsuite;
pub mod kv;
pub mod losses;
pub mod ops;
pub mod tensor;
pub mod train;

pub use autograd::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use tensor::{Shape, Tensor};
