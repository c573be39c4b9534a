//! Classification of perceived passage of time from wearable physiology.
//!
//! The crate covers the whole offline chain: loading or synthesizing
//! sessions, conditioning PPG/EDA/temperature channels, extracting 24
//! biomarkers, building a background-subtracted dataset, training eleven
//! classical classifiers, feature selection, Shapley attributions and
//! leave-one-subject-out evaluation.

pub mod classifiers;
pub mod dsp;
pub mod evaluate;
pub mod explain;
pub mod features;
pub mod ingest;
pub mod model;
pub mod pipeline;
pub mod selection;
