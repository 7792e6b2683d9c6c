//! Detection of tiny cells in anterior-chamber OCT scans.
//!
//! The pipeline narrows its field of view in three steps:
//!
//! 1. [`fof`] finds the anterior chamber. Prompt points come from the centroid
//!    of the bright anterior segment; a pluggable [`fof::Segmenter`] turns
//!    them into a chamber mask.
//! 2. [`mirp`] proposes fixed-size candidate boxes around small bright
//!    components inside the chamber, using a λ-scaled Otsu threshold.
//! 3. [`san`] classifies each candidate patch as cell or background with a
//!    small convolutional network that includes a spatial attention block.
//!
//! [`baselines`] holds the Otsu/Isodata threshold detectors, [`eval`] the
//! metrics and file formats, [`tuning`] the λ search, and [`synth`] a
//! generator for synthetic images with full ground truth.

pub mod baselines;
pub mod boxes;
pub mod cli;
pub mod components;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod fof;
pub mod image;
pub mod io;
pub mod kv;
pub mod mirp;
pub mod pipeline;
pub mod san;
pub mod synth;
pub mod tuning;

pub use boxes::{CandidateBox, Detection};
pub use components::{connected_components, ComponentLabeling, Connectivity};
pub use error::{ErrorClass, McdError, Result};
pub use image::{BinaryMask, GrayImage, Histogram256};
