//! Scene-text retrieval engine.
//!
//! The crate trains a miniature two-tower vision/text model whose image
//! embedding is steered toward text-bearing regions by a localization head,
//! refined by cross-attention onto probe-sentence token states, and tuned
//! with learned prompt contexts routed by a word-class clusterer. Everything
//! runs on a self-contained reverse-mode autodiff core over dense arrays;
//! there are no external numeric dependencies, so results are reproducible
//! bit-for-bit from a seed.

pub mod adam;
pub mod array;
pub mod checkpoint;
pub mod cluster;
pub mod config;
pub mod error;
pub mod font;
pub mod fusion;
pub mod gradcheck;
pub mod loss;
pub mod model;
pub mod nn;
pub mod ops;
pub mod params;
pub mod pixmap;
pub mod retrieval;
pub mod rng;
pub mod synth;
pub mod tape;
pub mod text;
pub mod tokenizer;
pub mod train;
pub mod verify;
pub mod vision;

pub use array::{Array, Real, Shape};
pub use error::{Error, Result};
pub use params::{ParamId, ParamSet, Parameter};
pub use tape::{Gradients, Tape, Var};
pub use verify::{verify_gradients, GradGroup};
