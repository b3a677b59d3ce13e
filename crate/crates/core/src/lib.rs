//! calcmatch spatially matches a cluster of bright point-like objects
//! segmented from a small specimen raster to its source region in a large
//! scene raster.
//!
//! The pipeline stages are:
//!
//! 1. **detect** - multi-scale difference-of-Gaussians blob detection with a
//!    Hessian curvature-ratio filter, producing a binary mask and centroids.
//! 2. **cluster** - DBSCAN over the specimen centroids, largest-cluster
//!    bounding box, template crop, magnification rescale, and the four
//!    90-degree rotation variants.
//! 3. **match** - zero-padded cross-correlation of each variant against the
//!    scene mask (FFT-accelerated with a direct-summation oracle), then
//!    99th-percentile match selection.
//! 4. **evaluate** - 300x300 patch grid, positive patches from a reference
//!    box, confusion counts, and the accuracy/precision/recall/specificity/
//!    NPV metrics.
//!
//! The `synth` module generates seeded scene/specimen pairs with known
//! ground truth so the whole chain is testable without clinical data, and
//! `pipeline` wires the stages end to end behind a JSON config.

pub mod cluster;
pub mod detect;
pub mod error;
pub mod evaluate;
pub mod image;
pub mod io;
pub mod matching;
pub mod pipeline;
pub mod synth;

pub use cluster::{ClusterLabeling, Template};
pub use detect::{Blob, DetectParams};
pub use error::{Error, Result};
pub use evaluate::{ConfusionCounts, EvalMetrics, EvalReport, PatchGrid, PredictionMode};
pub use image::{BinaryMask, CaseMeta, GrayImage, PointSet, Rect};
pub use matching::{MatchLocation, MatchSet, ScoreMap};
pub use pipeline::{PipelineConfig, PipelineParams};
pub use synth::{GroundTruth, SynthParams};
