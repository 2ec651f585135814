//! Small dense-network toolkit: MLPs with hand-written backprop, Adam, and a
//! sinusoidal time embedding.

mod adam;
mod kernels;
mod mlp;
mod params;
mod time;

pub use adam::{Adam, AdamConfig};
pub use kernels::{axpy, dot, gemm};
pub use mlp::{silu, silu_grad, Mlp, Tape};
pub use params::{decode_params, encode_params, ParamManifest, TensorEntry, PARAM_FORMAT_VERSION};
pub use time::TimeEmbedding;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NnError {
    #[error("input width {found} does not match network width {expected}")]
    WidthMismatch { expected: usize, found: usize },
    #[error("buffer of length {found} does not match expected length {expected}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("parameter file: {0}")]
    Format(String),
}
