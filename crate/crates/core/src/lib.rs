//! Acoustically grounded word embeddings for CTC acoustics-to-word recognition.
//!
//! A character-view encoder and an acoustic-view encoder are trained jointly
//! with a two-sided contrastive loss so that spoken words and their spellings
//! land close together. The character view then supplies rows for the
//! recognizer's prediction layer: as initialization, as an L2 anchor during
//! CTC training, as a frozen layer, and to score out-of-vocabulary words when
//! the recognizer emits `<unk>`.

pub mod agwe;
pub mod config;
pub mod corpus;
pub mod ctc;
pub mod decode;
pub mod error;
pub mod eval;
pub mod nets;
pub mod parallel;
pub mod pipeline;
pub mod recognizer;
pub mod seed;
pub mod tensor;

pub use error::{Error, Result};
