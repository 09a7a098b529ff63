use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("negative pulse length {0} s")]
    NegativePulseLength(f64),

    #[error("need at least {needed} data points, found {found}")]
    InsufficientData { needed: usize, found: usize },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("fit did not converge after {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error(
        "rate-equation model not valid for pulse length {:.1} ns (shorter than the intermediate-state lifetime {:.1} ns)",
        t_p * 1e9,
        lifetime * 1e9
    )]
    RateModelInvalid { t_p: f64, lifetime: f64 },

    #[error("particle reflected inside segment (turning point at {turning_point} m of {length} m)")]
    Reflected { turning_point: f64, length: f64 },

    #[error("particle at rest without acceleration never traverses the segment")]
    Stalled,

    #[error("fragment charge sign does not route it to a detector: {0}")]
    Routing(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("channel `{0}` has no hits")]
    EmptyChannel(&'static str),

    #[error("no significant peak: maximum bin {peak} counts vs median {median}")]
    NoSignificantPeak { peak: u64, median: f64 },

    #[error("coincidence window [{lo} s, {hi} s] exceeds histogram span [{span_lo} s, {span_hi} s]")]
    WindowOutsideSpan {
        lo: f64,
        hi: f64,
        span_lo: f64,
        span_hi: f64,
    },

    #[error("stream is not a laser-off background run")]
    NotBackgroundRun,

    #[error(
        "calibration invalid: corrected singles N'_i={corrected_ion}, N'_e={corrected_electron} must exceed zero and N_c={coincidences}"
    )]
    CalibrationInvalid {
        corrected_ion: f64,
        corrected_electron: f64,
        coincidences: f64,
    },

    #[error("no true coincidences: N_c={coincidences} does not exceed accidental estimate {accidentals}")]
    NoTrueCoincidences { coincidences: f64, accidentals: f64 },

    #[error("run windows overlap partially: [{a_start}, {a_end}] and [{b_start}, {b_end}]")]
    OverlappingRuns {
        a_start: f64,
        a_end: f64,
        b_start: f64,
        b_end: f64,
    },

    #[error("offset {offset} outside grid range [{min}, {max}]")]
    OffsetOutsideGrid { offset: f64, min: f64, max: f64 },

    #[error("no grid point exceeds threshold {0}")]
    NoPointAboveThreshold(f64),

    #[error("config key `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
