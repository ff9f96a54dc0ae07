//! Yes/no question engine for annotating binary-classification datasets.
//!
//! Given per-item positive-class probabilities from a predictor, the engine
//! picks questions of the form "are these pseudo-labels all correct?" so that
//! the whole dataset gets labeled with as few answers as possible. Optimal
//! coding baselines (Huffman over labelings, an exhaustive subset DP) live
//! next to the practical lookahead questioner so the two can be compared.

pub mod error;
pub mod harness;
pub mod huffman;
pub mod labels;
pub mod predictors;
pub mod search;
pub mod session;
pub mod state;
pub mod synthetic;

pub use error::{Error, Result};
pub use labels::{ItemProbabilities, Labeling};
pub use search::{AlMethod, CostFn, SearchConfig, SearchTree};
pub use state::{AnnotationState, Guess};
