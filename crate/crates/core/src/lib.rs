//! Allocation-only building blocks for promptable OCTA segmentation.
//!
//! Everything in this crate is a pure function over in-memory grids and is
//! usable without `std` (only `alloc` is required):
//!
//! - [`grid`]: row-major planes and binary masks.
//! - [`sample`], [`stack`], [`standardize`], [`augment`], [`folds`]: the data
//!   pipeline from multi-depth en-face projections to fixed-size model input.
//! - [`components`], [`band`], [`prompts`]: 8-connected component labeling and
//!   global/local prompt-point generation.
//! - [`loss`], [`metrics`]: Dice and clDice losses with exact gradients, and
//!   the Dice/Jaccard evaluation metrics.
//! - [`schedule`]: warm-up learning-rate schedule.
//! - [`synth`]: procedural vessel images used as a desk-scale stand-in dataset.
//!
//! Tensor-level training, checkpoints, file formats and the HTTP service live
//! in the `octa-seg` companion crate.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod augment;
pub mod band;
pub mod components;
mod error;
pub mod folds;
pub mod grid;
pub mod loss;
pub mod metrics;
pub mod prompts;
pub mod sample;
pub mod schedule;
pub mod seed;
pub mod stack;
pub mod standardize;
pub mod synth;

pub use error::{Error, Result};
pub use grid::{Grid, Mask, Plane};
pub use prompts::{PromptGenConfig, PromptPoint, PromptSet, PromptSource};
pub use sample::{Fov, Mode, OctaSample, SegTask, TaskName};
