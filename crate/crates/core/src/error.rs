use thiserror::Error;

use crate::geo::CellIndex;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point ({lat}, {lon}) lies outside the grid")]
    OutOfBounds { lat: f64, lon: f64 },
    #[error("cell {0} lies outside the grid")]
    CellOutOfBounds(CellIndex),
    #[error("degenerate segment: {0}")]
    DegenerateSegment(&'static str),
    #[error("segment duration must be positive (got {0} s)")]
    NonPositiveDuration(f64),
    #[error("bad configuration: {0}")]
    BadConfig(String),
    #[error("trajectory has fewer than 2 usable points")]
    EmptyTrajectory,
    #[error("averaging window {window} must satisfy 2 <= window <= {max}")]
    BadWindow { window: usize, max: usize },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("bad record: {0}")]
    BadRecord(String),
    #[error("road graph needs at least 2 vertices (got {0})")]
    InsufficientGraph(usize),
    #[error("forward cache does not belong to the current network parameters")]
    StaleCache,
    #[error("speed profile has no observed directions")]
    EmptyProfile,
    #[error("top-k requires 1 <= k <= {n} (got {k})")]
    BadK { k: usize, n: usize },
    #[error("feature width {got} does not match model input width {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("route has fewer than 2 points")]
    EmptyRoute,
    #[error("model bundle and knowledge grids were built for different grids")]
    ModelGridMismatch,
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("file {0} is empty")]
    EmptyFile(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("need at least {need} trajectories to split (got {got})")]
    TooFew { need: usize, got: usize },
    #[error("ground truth contains a zero value at index {0}")]
    ZeroTruth(usize),
    #[error("length mismatch: {0} truths vs {1} predictions")]
    LengthMismatch(usize, usize),
    #[error("no results to group")]
    EmptyGroupSet,
    #[error("container: {0}")]
    Container(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Input-data problems (as opposed to invalid configuration or arguments).
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::OutOfBounds { .. }
                | Error::CellOutOfBounds(_)
                | Error::EmptyTrajectory
                | Error::InsufficientData(_)
                | Error::BadRecord(_)
                | Error::InsufficientGraph(_)
                | Error::EmptyProfile
                | Error::EmptyRoute
                | Error::Parse { .. }
                | Error::EmptyFile(_)
                | Error::Schema(_)
                | Error::TooFew { .. }
                | Error::ZeroTruth(_)
                | Error::EmptyGroupSet
                | Error::Container(_)
                | Error::Io(_)
                | Error::Json(_)
                | Error::Csv(_)
        )
    }
}
