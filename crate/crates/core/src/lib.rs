//! Desk-scale laboratory for contrastive training of tiny causal
//! transformers, contrastive search decoding, and text-degeneration and
//! representation-isotropy metrics.

pub mod autodiff;
pub mod corpus;
pub mod decode;
pub mod error;
pub mod fsutil;
pub mod kernels;
pub mod metrics;
pub mod model;
pub mod par;
pub mod tensor;
pub mod tokenizer;
pub mod toy;
pub mod train;


pub use error::{CheckpointError, Error, Result};
pub use par::Execution;
pub use tensor::Tensor;
