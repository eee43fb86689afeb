//! Bit-exact entropy path: quantized logits to integer CDFs, and rANS.

pub mod cdf;
pub mod rans;
pub mod vectors;

pub use cdf::{
    logits_to_cdf, quantize_logits, rank_order, IntegerCdf, QuantizedLogits, ALPHABET,
    LOGIT_SCALE, PROB_BITS, TEMPLATE_COUNTS, TOTAL_MASS,
};
pub use rans::{rans_decode, rans_decode_with, rans_encode, STATE_LOWER};
