use thiserror::Error;

/// Errors produced by the AOI pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("point lies outside the polygon: {0}")]
    OutsidePolygon(String),

    #[error("too many entrances: {entrances} entrances for {slots} reference slots")]
    TooManyEntrances { entrances: usize, slots: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid category code {0} (expected 0..=19)")]
    InvalidCategory(u8),

    #[error("missing tile at grid position (row {row}, col {col})")]
    MissingTile { row: usize, col: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("training diverged at step {step}: loss is {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("single-class training set: {0}")]
    SingleClass(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;
