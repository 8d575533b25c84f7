use thiserror::Error;

use crate::expr::{EvalError, ParseError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("parse error in `{field}`: {source}")]
    Parse {
        field: String,
        #[source]
        source: ParseError,
    },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("invalid chart: {0}")]
    InvalidChart(String),
    #[error("fields are defined on different charts")]
    ChartMismatch,
    #[error("metric is not positive definite at ({x}, {y}): g11 = {g11}, det = {det}")]
    NotPositiveDefinite { x: f64, y: f64, g11: f64, det: f64 },
    #[error("volume form density {value} is not positive at ({x}, {y})")]
    NonPositiveVolume { x: f64, y: f64, value: f64 },
    #[error("frame is not orientation preserving (det u = {det})")]
    SingularFrame { det: f64 },
    #[error("not a unit tangent vector: {0}")]
    InvalidUnitTangent(String),
    #[error("degenerate Liouville solution: h11 h22 - h12^2 = {det}")]
    DegenerateSolution { det: f64 },
    #[error("Liouville solution gives an indefinite form (h11 = {h11}, det = {det})")]
    IndefiniteSolution { h11: f64, det: f64 },
    #[error("metric sample (p, q, r) = ({p}, {q}, {r}) is not positive definite")]
    IndefiniteSample { p: f64, q: f64, r: f64 },
    #[error("point lies outside the chart domain: {0}")]
    OutsideDomain(String),
    #[error("geodesic blew up after t = {t_last}")]
    Blowup { t_last: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
