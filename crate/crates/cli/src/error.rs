use std::fmt;

use taesar::contrastive::ContrastiveError;
use taesar::corpus::CorpusError;
use taesar::evaluation::EvaluationError;
use taesar::predictor::PredictorError;
use taesar::synthgen::SynthError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Config,
    Data,
    Numerical,
}

impl Kind {
    pub fn exit_code(self) -> i32 {
        match self {
            Kind::Config => 2,
            Kind::Data => 3,
            Kind::Numerical => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Config => "config",
            Kind::Data => "data",
            Kind::Numerical => "numerical",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl CliError {
    pub fn config(m: impl Into<String>) -> Self {
        Self { kind: Kind::Config, message: m.into() }
    }

    pub fn data(m: impl Into<String>) -> Self {
        Self { kind: Kind::Data, message: m.into() }
    }

    /// `error kind=<kind> stage=<stage>: <message>` on a single line.
    pub fn line(&self, stage: &str) -> String {
        let msg: String = self.message.split_whitespace().collect::<Vec<_>>().join(" ");
        format!("error kind={} stage={stage}: {msg}", self.kind.as_str())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind.as_str(), self.message)
    }
}

fn predictor_kind(e: &PredictorError) -> Kind {
    match e {
        PredictorError::InvalidConfig(_) | PredictorError::InvalidArgument(_) => Kind::Config,
        PredictorError::DivergedLoss { .. } | PredictorError::NonFinite | PredictorError::CheckFailed { .. } => {
            Kind::Numerical
        }
        _ => Kind::Data,
    }
}

impl From<PredictorError> for CliError {
    fn from(e: PredictorError) -> Self {
        Self { kind: predictor_kind(&e), message: e.to_string() }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        Self::data(e.to_string())
    }
}

fn contrastive_kind(e: &ContrastiveError) -> Kind {
    match e {
        ContrastiveError::InvalidConfig(_) => Kind::Config,
        ContrastiveError::Predictor(p) => predictor_kind(p),
        _ => Kind::Data,
    }
}

impl From<ContrastiveError> for CliError {
    fn from(e: ContrastiveError) -> Self {
        Self { kind: contrastive_kind(&e), message: e.to_string() }
    }
}

impl From<EvaluationError> for CliError {
    fn from(e: EvaluationError) -> Self {
        let kind = match &e {
            EvaluationError::TooFewSeeds(_) => Kind::Config,
            EvaluationError::NonFiniteScore => Kind::Numerical,
            EvaluationError::Predictor(p) => predictor_kind(p),
            EvaluationError::Contrastive(c) => contrastive_kind(c),
            _ => Kind::Data,
        };
        Self { kind, message: e.to_string() }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        let kind = match e {
            SynthError::InvalidSpec(_) => Kind::Config,
            _ => Kind::Data,
        };
        Self { kind, message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::data(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
