//! Core building blocks for distributed content-based image retrieval:
//! texture features, the broker's feature index, the signed agent wire
//! protocol, and purchaser watermarks.

pub mod gabor;
pub mod imaging;
pub mod index;
pub mod protocol;
pub mod synth;
pub mod watermark;
pub(crate) mod wire;
pub mod b64;

mod timestamp;
pub use timestamp::Timestamp;
