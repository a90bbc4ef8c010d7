use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("scale exceeds width (C = {scale}, width = {width})")]
    ScaleExceedsWidth { scale: f64, width: f64 },

    #[error("no closed form for {0} model")]
    NoClosedForm(&'static str),

    #[error("grid too coarse: grid_h = {grid_h} exceeds m/4 = {limit}")]
    GridTooCoarse { grid_h: f64, limit: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty admissible grid: {0}")]
    EmptyGrid(String),

    #[error("width {width} below C1 = {c1}; single-step bound unavailable")]
    WidthBelowC1 { width: f64, c1: f64 },

    #[error("lower envelope annihilated at level {level} (u = {u}, x = {x})")]
    Annihilated { level: usize, u: f64, x: f64 },

    #[error("ladder collapsed at level {level}")]
    LadderCollapsed { level: usize },

    #[error("calibration failed: no candidate C1 passes; worst violation {worst_violation} at C1 = {c1}")]
    Calibration { c1: f64, worst_violation: f64 },

    #[error("degenerate variance, MDP statement requires sigma != 0")]
    DegenerateVariance,

    #[error("{0}")]
    Precondition(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
