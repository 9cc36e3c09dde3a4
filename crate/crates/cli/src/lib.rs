//! Configuration, commands and experiment drivers behind the `pvad` binary.

pub mod commands;
pub mod config;
pub mod experiments;

pub use config::RunConfig;

/// One line per on-disk format this build reads and writes.
pub fn version_text() -> String {
    format!(
        "pvad {}\ndataset manifest schema {}\ncheckpoint format {}\nreport schema {}\n",
        env!("CARGO_PKG_VERSION"),
        pvad::synth::MANIFEST_SCHEMA_VERSION,
        pvad::nn::checkpoint::FORMAT_VERSION,
        pvad::scoring::REPORT_SCHEMA_VERSION,
    )
}

/// Short machine-readable name of an error's kind, used in the structured
/// error line and to pick the exit code.
pub fn error_kind(e: &pvad::Error) -> (&'static str, i32) {
    use pvad::Error::*;
    match e {
        Config(_) | Interval { .. } => ("config", 2),
        Manifest(_) | Frame { .. } | Checksum { .. } | Io { .. } | Json(_) => ("data", 3),
        Checkpoint(_) | Adapter(_) => ("checkpoint", 4),
        Shape { .. } | OutOfRange { .. } | NonFinite(_) | UndefinedAuc { .. } => ("numeric", 5),
    }
}
