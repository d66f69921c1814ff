//! Matching, error metrics and report generation.

mod metrics;
mod report;

pub use metrics::*;
pub use report::*;
