use crate::expr::{EvalError, ParseError};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("{context}: {source}")]
    Eval { context: String, source: EvalError },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("metric is degenerate at {point:?} (|det g| = {det:e})")]
    DegenerateMetric { point: Vec<f64>, det: f64 },
    #[error("metric signature at {point:?} is {found:?}, expected {expected:?}")]
    Signature { point: Vec<f64>, found: (usize, usize), expected: (usize, usize) },
    #[error("degenerate tangents at vertex {vertex} (rank {rank} < {expected})")]
    DegenerateTangents { vertex: usize, rank: usize, expected: usize },
    #[error("normal plane is not definite at vertex {vertex} (eigenvalue signs {signs:?})")]
    Indefinite { vertex: usize, signs: (i8, i8) },
    #[error("2-plane is not definite (Gram determinant {det:e})")]
    IndefinitePlane { det: f64 },
    #[error("induced metric is degenerate at vertex {vertex} (det = {det:e})")]
    DegenerateInduced { vertex: usize, det: f64 },
    #[error("sheets do not share a grid")]
    MismatchedSheets,
    #[error("rank check failed for {what}: computed {computed}, expected {expected}")]
    Rank { what: &'static str, computed: usize, expected: usize },
    #[error("gauge is degenerate at vertex {vertex}")]
    Gauge { vertex: usize },
    #[error("sheet is not transverse at vertex {vertex} (smallest singular value {value:e})")]
    NotTransverse { vertex: usize, value: f64 },
    #[error("flow failed at step {step}: {source}")]
    Flow { step: usize, source: Box<Error> },
    #[error("{0}")]
    Check(String),
}

impl Error {
    pub(crate) fn eval(context: impl Into<String>, source: EvalError) -> Error {
        Error::Eval { context: context.into(), source }
    }
}
