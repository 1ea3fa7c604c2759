use thiserror::Error;

/// Errors produced by the reconstruction library.
#[derive(Debug, Error)]
pub enum Error {
    /// Two arrays that must agree in shape do not.
    #[error("shape mismatch: {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    /// A patch grid is inconsistent with the image it is applied to.
    #[error("invalid patch grid: {0}")]
    InvalidGrid(String),

    /// Some pixel is covered by zero patch windows.
    #[error("patch coverage gap: stride {stride} exceeds patch side {patch_side}")]
    CoverageGap { patch_side: usize, stride: usize },

    /// Configuration value missing or out of range.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A loss or gradient became NaN or infinite.
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    /// Malformed checkpoint or weight file.
    #[error("bad file format: {0}")]
    BadFormat(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(context: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
