//! Learned vector embeddings whose scaled squared Euclidean distance approximates
//! Levenshtein distance.
//!
//! The crate is organised as a pipeline:
//!
//! * [`seqcore`] – alphabets, sequences and the exact edit-distance oracle,
//! * [`datagen`] – synthetic cluster/pair datasets and TSV loaders,
//! * [`ndnet`] – a small fixed-topology differentiable engine (conv/pool/linear/batch norm, Adam),
//! * [`siamese`] – the CNN embedding networks, distance head, losses and training loop,
//! * [`esd`] – covariance spectra of embedding differences and early-stopping-dimension detection,
//! * [`eval`] – approximation-error metrics and distributional diagnostics,
//! * [`checkpoint`] – the binary model checkpoint format.

pub mod checkpoint;
pub mod datagen;
pub mod error;
pub mod esd;
pub mod eval;
pub mod ndnet;
pub mod rng;
pub mod seqcore;
pub mod siamese;

pub use error::{Error, Result};
