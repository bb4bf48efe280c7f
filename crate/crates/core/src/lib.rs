//! Sequence labelers for argumentative unit segmentation.
//!
//! ```text
//! brat essays → tokens → BIO sequences → embeddings → model → weighted F1
//!                                                      ├── BiLSTM (×1 or ×2)
//!                                                      ├── additive self-attention
//!                                                      └── multi-head scaled dot-product attention
//! ```

pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod labels;
pub mod layers;
pub mod models;
pub mod numeric;
pub mod selftest;
pub mod train;

pub use error::{Error, Result};
pub use labels::{argmax_label, Label};
