//! Streaming referring video object segmentation at desk scale.
//!
//! The crate is organized around a small dense-tensor autograd core
//! ([`tensor`], [`graph`]) on which the model components are built:
//! frozen hierarchical visual/text encoders ([`encoder`]), cross-modal
//! temporal adapters ([`adapter`]), prompt construction ([`prompt`]),
//! the promptable segmenter with memory attention and a bounded memory
//! bank ([`segmenter`]), the tracking-correction module ([`cme`]), and
//! the streaming pipeline ([`pipeline`]). Training stages and losses
//! live in [`train`], [`loss`] and [`optim`]; evaluation in [`metrics`]
//! and [`eval`]; the captioned synthetic video generator in [`synth`].
//!
//! Everything computes in `f64` through `libm`, so results are
//! bit-identical across platforms for a fixed seed. The crate is
//! `no_std` + `alloc`; file formats, CLI and wall-clock timing live in
//! the companion `rvos` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod adapter;
pub mod cme;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod prompt;
pub mod pe;
pub mod pipeline;
pub mod rng;
pub mod segmenter;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{CoreError, Result};
pub use graph::{Graph, Var};
pub use tensor::Tensor;
