//! Exact integer entropy coding for the CCA image codec: a byte rANS
//! coder over 16-bit quantized CDFs, deterministic CDF construction for
//! Gaussian residuals and the factorized hyperprior, and the `.cca`
//! bitstream container.

mod container;
mod error;
mod rans;
mod symbol_cdf;

pub use container::{fnv1a64, BitstreamContainer, MAGIC, VERSION};
pub use error::{CodecError, CodecResult};
pub use rans::{quantize_cdf, quantize_cdf_offset, rc_decode, rc_encode, QuantizedCdf, RansDecoder};
pub use symbol_cdf::{build_factorized_cdf, build_symbol_cdf, PRECISION, RESIDUAL_CLAMP};
