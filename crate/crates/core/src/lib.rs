//! Battery degradation analysis: cycle segmentation and per-cycle features,
//! continuous trajectory surrogates, knee and end-of-life detection,
//! lifetime distributions, statistics and early-life RUL prediction.

pub mod features;
pub mod ingest;
pub mod inr;
pub mod io;
pub mod knee;
pub mod predict;
pub mod reliability;
pub mod rng;
pub mod special;
pub mod stats;
pub mod synth;

pub use features::{CapacityTrajectory, CycleFeatures};
pub use ingest::{Cycle, RawTimeSeries, SegmentationConfig};
pub use inr::{InrConfig, InrModel, Variant};
pub use predict::{ForestConfig, ForestModel, SupervisedDataset, UncertainPrediction};
pub use reliability::{KaplanMeierCurve, LifetimeFit, LifetimeSample};
