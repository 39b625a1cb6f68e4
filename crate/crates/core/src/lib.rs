//! Algorithmic core of a label-free hair segmentation and mask-guided
//! augmentation toolkit for trichoscopy images.
//!
//! - [`raster`]: binary masks, erosion/dilation, connected components
//! - [`pseudogen`]: synthetic hair strokes and dandruff on scalp patches
//! - [`prompter`]: skeleton-based point prompts for a promptable segmenter
//! - [`fusion`]: mask ensembling, overlap metrics, hair statistics
//! - [`segclient`]: score binarization and the segmenter backend contract
//! - [`guidance`]: masked diffusion-guidance update rules
//! - [`planner`]: inverse-frequency augmentation planning
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the CLI and
//! network transport live in the `hairseg` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod error;
pub mod fusion;
pub mod guidance;
pub mod planner;
pub mod prompter;
pub mod pseudogen;
pub mod raster;
pub mod rng;
pub mod segclient;

pub use error::{GuidanceError, MaskError, PlanError, PromptError, SegError, SynthError};
pub use raster::{BinaryMask, Connectivity, StructuringElement};
