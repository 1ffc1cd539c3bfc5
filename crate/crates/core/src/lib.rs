//! Loop-closure detection for visual SLAM from binary salient-region maps.
//!
//! Each frame is reduced to a bit-packed map of its spectral-residual
//! salient regions ([`saliency`], [`binary_content`]). Past frames whose maps
//! overlap strongly with the current one ([`retrieval`]) are then confirmed
//! by local-feature matching ([`verification`]). [`dataset`] and
//! [`evaluation`] provide the sequence loaders, ground truth and scoring used
//! to measure the detector; [`pipeline`] wires everything together.

pub mod binary_content;
pub mod dataset;
pub mod evaluation;
mod filter;
pub mod image_io;
pub mod pipeline;
pub mod retrieval;
pub mod saliency;
pub mod verification;

pub use binary_content::{BinaryMap, Centroid};
pub use dataset::{Dataset, FrameSource, GroundTruthPairs, PoseFormat, Trajectory};
pub use evaluation::{score, EvalReport, StageTimer};
pub use image_io::GrayImage;
pub use pipeline::{run_detection, PipelineConfig};
pub use retrieval::{FrameDatabase, FrameRecord, LoopCandidate, RetrievalParams};
pub use saliency::SaliencyParams;
pub use verification::{
    FeatureExtractor, HessianFeatures, KeypointSet, LoopDetection, VerifyParams,
};
