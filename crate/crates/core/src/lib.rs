//! Bit-accurate datapath simulator and analytical performance model for a
//! ternary-weight LLM accelerator.

pub mod booth;
pub mod codec;
pub mod error;
pub mod lop;
pub mod nonlinear;
pub mod perf;
pub mod runtime;
pub mod tensor;
pub mod tint;

pub use codec::{Trit, TritTensor};
pub use error::{Error, Result};
pub use tensor::{IntMatrix, QTensor};
