//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A risk set was requested from an empty collection of subjects.
    #[error("no subjects in the requested risk set")]
    EmptyRiskSet,

    /// No events were observed on [0, tau].
    #[error("no events observed on [0, tau]")]
    NoEvents,

    /// Dataset failed validation.
    #[error("invalid dataset: {0}")]
    Invalid(String),

    /// The observed information is zero at every event time, so the
    /// treatment effect is not identified from the score.
    #[error("observed information is zero at every event time; log-HR not identified")]
    DegenerateInformation,

    /// The score function does not change sign on the search bracket.
    #[error("score does not change sign on [{lo}, {hi}]; no root in bracket")]
    NoRootInBracket { lo: f64, hi: f64 },

    /// Within-arm regression cannot be formed at all.
    #[error("within-arm covariate design is unusable (arm {arm}: {n} subjects, {p} columns)")]
    SingularDesign { arm: u8, n: usize, p: usize },

    /// A stratum contributes events but only one arm is present.
    #[error("stratum {0} has events but only one arm present")]
    StratumDegenerate(u32),

    /// A time argument is outside its admissible range.
    #[error("time {0} is outside the admissible range")]
    InvalidTime(f64),

    /// Scoring input is missing covariate columns the model was trained on.
    #[error("missing covariate columns: {}", .0.join(", "))]
    FeatureMismatch(Vec<String>),

    /// A serialized model failed structural or integrity checks.
    #[error("invalid model container: {0}")]
    InvalidModel(String),

    /// A numeric argument is outside its admissible range.
    #[error("{0}")]
    OutOfRange(String),
}
