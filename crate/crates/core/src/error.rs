use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violates an operation's precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A non-finite cost at a specific pixel and disparity index.
    #[error("non-finite cost {value} at row {row}, col {col}, disparity {disparity}")]
    NonFiniteCost {
        row: usize,
        col: usize,
        disparity: usize,
        value: f64,
    },

    /// Shapes of two operands disagree, or a buffer does not match its declared shape.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// The input is well-formed but the quantity is undefined on it (empty mask, M = 0, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A value lies outside what a codec can represent.
    #[error("value out of range: {0}")]
    Range(String),

    /// A byte stream could not be decoded.
    #[error("format error: {0}")]
    Format(String),

    /// The sampled point sits too close to a non-differentiable set; draw another.
    #[error("resample: {0}")]
    Resample(String),

    /// The loss became non-finite during gradient descent.
    #[error("diverged at step {step}: loss = {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}
