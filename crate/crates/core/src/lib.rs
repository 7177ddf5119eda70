//! Engine for geolocated crowd-sensing experiments.
//!
//! Designers describe experiments as assets (points of interest with survey
//! questions and sensor configurations). Assets are deployed as tasks to
//! participants whose sessions follow one of three navigation modalities.
//! Answers are accepted only inside a point's geofence, optionally after a
//! witnessed-presence proof, and feed localized real-time aggregates that roll
//! back when participants depart.

pub mod aggregation;
pub mod asset;
pub mod fixtures;
pub mod geo;
pub mod modality;
pub mod model;
pub mod presence;
pub mod sensing;
pub mod time;
pub mod service;
pub mod simulator;
