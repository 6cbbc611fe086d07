//! Online feature selection and classification of switchgear actuations.
//!
//! The pipeline: compress a vibration or acoustic channel into interval
//! powers and detect actuations against a noise threshold ([`detector`]),
//! compute a bank of time and frequency features on raw and low-passed
//! excerpts ([`features`]), rank the features by how well they separate the
//! labeled scenarios and keep the best few ([`selector`]), then classify new
//! actuations by nearest center with a vote across the kept features while
//! tracking slow drift of the centers ([`classifier`], [`monitor`]).
//! [`synth`] generates labeled recordings for testing.
#![allow(clippy::neg_cmp_op_on_partial_ord)]


pub mod classifier;
pub mod detector;
pub mod error;
pub mod features;
pub mod monitor;
pub mod scenario;
pub mod selector;
pub mod signal;
pub mod synth;

pub use classifier::{
    classify_one, infer, majority_vote, AlarmEvent, DriftConfig, DriftState, Inference, ScenarioEstimate, Vote, VoteMode,
};
pub use detector::{auto_label, calibrate, detect, DetectionCalibration, EventSegment, EventWindow, StreamingDetector};
pub use error::{Error, Result};
pub use features::{compute_feature, extract_candidates, FeatureDescriptor, FeatureKind, FeatureMatrix, Normalizer};
pub use monitor::{MonitorOutput, StreamingMonitor};
pub use scenario::ScenarioId;
pub use selector::{
    compute_centers, feature_quality, select_top, train, ClusterCenters, DetectionSettings, FeatureQualityReport, Model,
    TrainOptions, Training,
};
pub use signal::{compute_interval_psd, lowpass, segment_spectrum, IntervalPsdSeries, Spectrum, TimeSeries};
