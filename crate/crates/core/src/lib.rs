//! Frame-level alignment of two phonetically segmented parallel speech
//! corpora, plus evaluation of predicted articulator contours in millimeters.
//!
//! The pipeline pairs sentences by Gestalt string similarity, pairs words by
//! text and relative position, pairs phones by label, and time-stretches each
//! source frame into the paired target phone. A DTW aligner over acoustic
//! features is provided as a baseline producing the same mapping format.

pub mod corpus;
pub mod dtw;
pub mod error;
pub mod eval;
pub mod phonetic;
pub mod similarity;
pub mod synth;

pub use error::{Error, Result};
