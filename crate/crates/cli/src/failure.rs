//! Exit codes and machine-readable failure reasons.

use serde::Serialize;
use volstop::montecarlo::McError;
use volstop::stopping::StoppingError;
use volstop::{ChainError, ModelError, TimeChangeError};

pub const EXIT_PASS: u8 = 0;
pub const EXIT_CHECK_FAILED: u8 = 1;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_NO_CONVERGENCE: u8 = 3;

/// A run that ended without its artifact; printed as one JSON line on stderr.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub exit_code: u8,
    pub reason: String,
    pub message: String,
}

impl Failure {
    pub fn input(reason: &str, message: impl Into<String>) -> Self {
        Self {
            exit_code: EXIT_INPUT,
            reason: reason.into(),
            message: message.into(),
        }
    }

    pub fn io(err: std::io::Error, what: &std::path::Path) -> Self {
        Self::input("Io", format!("{}: {err}", what.display()))
    }
}

fn chain_reason(e: &ChainError) -> &'static str {
    match e {
        ChainError::EmptyStates => "EmptyStates",
        ChainError::BadStates { .. } => "BadStates",
        ChainError::DimensionMismatch { .. } => "DimensionMismatch",
        ChainError::BadGenerator { .. } => "BadGenerator",
        ChainError::NotTridiagonal { .. } => "NotSkipFree",
        ChainError::StartOrderViolated { .. } => "StartOrderViolated",
        ChainError::IndexOutOfRange { .. } => "IndexOutOfRange",
        ChainError::BadHorizon(_) => "BadHorizon",
        ChainError::MalformedPath(_) => "MalformedPath",
        ChainError::HorizonExceeded { .. } => "HorizonExceeded",
    }
}

fn model_reason(e: &ModelError) -> &'static str {
    match e {
        ModelError::DeltaOutOfRange(_) => "DeltaOutOfRange",
        ModelError::NonpositiveParameter { .. } => "NonpositiveParameter",
        ModelError::InvalidModel { .. } => "InvalidModel",
        ModelError::SchemeBreakdown { .. } => "SchemeBreakdown",
        ModelError::BadGrid { .. } => "BadGrid",
        ModelError::BadInitial(_) => "BadInitial",
        ModelError::OutOfRange { .. } => "OutOfRange",
        ModelError::TimeChange(e) => time_change_reason(e),
    }
}

fn time_change_reason(e: &TimeChangeError) -> &'static str {
    match e {
        TimeChangeError::HorizonExceeded { .. } => "HorizonExceeded",
        TimeChangeError::RangeExceeded { .. } => "RangeExceeded",
        TimeChangeError::NonpositiveSample { .. } => "NonpositiveSample",
        TimeChangeError::BadStep(_) => "BadStep",
        TimeChangeError::TooFewSamples => "TooFewSamples",
    }
}

fn stopping_reason(e: &StoppingError) -> &'static str {
    match e {
        StoppingError::Chain(e) => chain_reason(e),
        StoppingError::UnsupportedModel(_) => "UnsupportedModel",
        StoppingError::NoConvergence { .. } => "NoConvergence",
        StoppingError::GridTooCoarse { .. } => "GridTooCoarse",
        StoppingError::NoContact { .. } => "NoContact",
        StoppingError::NotSkipFree { .. } => "NotSkipFree",
        StoppingError::GainPropertyViolated { .. } => "GainPropertyViolated",
        StoppingError::BadGrid(_) => "BadGrid",
        StoppingError::BadProblem(_) => "BadProblem",
        StoppingError::TooManyOrderings { .. } => "TooManyOrderings",
    }
}

fn mc_reason(e: &McError) -> &'static str {
    match e {
        McError::BadConfig(_) => "BadConfig",
        McError::TruncationDominates { .. } => "TruncationDominates",
        McError::RuleStopsAtNegativeGain { .. } => "RuleStopsAtNegativeGain",
        McError::RegressionSingular { .. } => "RegressionSingular",
        McError::UnsupportedRule(_) => "UnsupportedRule",
        McError::NotSkipFree { .. } => "NotSkipFree",
        McError::Chain(e) => chain_reason(e),
        McError::Model(e) => model_reason(e),
        McError::TimeChange(e) => time_change_reason(e),
        McError::Stopping(e) => stopping_reason(e),
    }
}

fn from_reason(reason: &'static str, message: String) -> Failure {
    let exit_code = if reason == "NoConvergence" {
        EXIT_NO_CONVERGENCE
    } else {
        EXIT_INPUT
    };
    Failure {
        exit_code,
        reason: reason.into(),
        message,
    }
}

impl From<ChainError> for Failure {
    fn from(e: ChainError) -> Self {
        from_reason(chain_reason(&e), e.to_string())
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        from_reason(model_reason(&e), e.to_string())
    }
}

impl From<TimeChangeError> for Failure {
    fn from(e: TimeChangeError) -> Self {
        from_reason(time_change_reason(&e), e.to_string())
    }
}

impl From<StoppingError> for Failure {
    fn from(e: StoppingError) -> Self {
        from_reason(stopping_reason(&e), e.to_string())
    }
}

impl From<McError> for Failure {
    fn from(e: McError) -> Self {
        from_reason(mc_reason(&e), e.to_string())
    }
}
