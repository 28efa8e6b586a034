//! Sky segmentation and skyline detection toolkit.
//!
//! The crate is organized around one pipeline:
//!
//! 1. **data** — dataset ingestion (webcam-per-folder and flat layouts),
//!    letterbox preprocessing, and a deterministic synthetic horizon
//!    generator for desk-scale experiments.
//! 2. **model** — an encoder/neck/decoder convolutional network that scores
//!    every pixel as sky / non-sky, in five capacity variants (n/s/m/l/x).
//! 3. **train** — SGD-with-momentum training of the model on image/mask
//!    pairs, with self-describing binary checkpoints.
//! 4. **skyline** — conversion of a binary sky mask into an edge map
//!    (Canny or Sobel) and a per-column skyline vector.
//! 5. **metrics** — confusion-count segmentation metrics and per-column
//!    absolute skyline distance statistics, plus dataset-level evaluation.
//!
//! Everything is CPU-only, deterministic per seed, and built on `ndarray`.

pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod render;
pub mod report;
pub mod skyline;
pub mod train;

pub use error::{Error, Result};
pub use metrics::{
    aggregate_pad, confusion_counts, pad, segmentation_metrics, MaskPredictor, PadAggregate,
    PadResult, SegmentationCounts, SegmentationMetrics,
};
pub use model::{build_variant, FeaturePyramid, MicroNet, Network, NetworkSpec, ScaleConfig, Variant};
pub use skyline::{EdgeMap, EdgeMethod, EdgeParams, SkylineMethod, SkylineVector};
pub use train::{Checkpoint, TrainConfig, TrainHistory};
