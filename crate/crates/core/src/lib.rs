//! Model-based test walking with live front-end, back-end and requirement
//! coverage.

pub mod aggregation;
pub mod formats;
pub mod generator;
pub mod journal;
pub mod model;
pub mod report;
pub mod sim;
pub mod walker;
