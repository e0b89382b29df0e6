pub mod array;
pub mod crlb;
pub mod detect;
pub mod doa;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod mlnn;
pub mod quant;
pub mod rng;
pub mod spectral;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/array.md")]
    mod array {}
    #[doc = include_str!("../../../book/src/quantization.md")]
    mod quantization {}
    #[doc = include_str!("../../../book/src/detection.md")]
    mod detection {}
    #[doc = include_str!("../../../book/src/mlnn.md")]
    mod mlnn {}
    #[doc = include_str!("../../../book/src/doa.md")]
    mod doa {}
    #[doc = include_str!("../../../book/src/crlb.md")]
    mod crlb {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
