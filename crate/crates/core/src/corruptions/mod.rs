//! Deterministic test-time corruptions (seven families, five severities),
//! suite generation and the Chamfer distance used to sanity-check severity
//! ordering.

mod chamfer;
mod families;
mod suite;

pub use chamfer::chamfer_distance;
pub use families::{apply_corruption, CorruptionSpec, Family, Severity, SeverityTable};
pub use suite::{build_suite, corrupt_sample, suite_stream, SuiteOptions, SuiteManifest, SuiteRecord, SUITE_HEADER, SUITE_MANIFEST_FILE};
