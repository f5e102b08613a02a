use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("point ({x}, {y}) lies outside the grid extent")]
    OutOfBounds { x: f64, y: f64 },

    #[error("destination grid extent is not contained in the source extent")]
    ExtentMismatch,

    #[error("sound speed must be strictly positive and finite, found {0}")]
    InvalidSpeed(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("epsilon {epsilon:e} is below the required max |k^2 - k0^2| = {required:e}")]
    EpsilonTooSmall { epsilon: f64, required: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("missing wavefield for transducer {0}")]
    MissingWavefield(usize),

    #[error("grid {nx}x{ny} exceeds the oracle limit of {limit}x{limit}")]
    GridTooLarge { nx: usize, ny: usize, limit: usize },

    #[error("grid is smaller than the {0}x{0} metric window")]
    GridTooSmall(usize),

    #[error("coincident source and evaluation point")]
    CoincidentPoint,

    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported container version {0}")]
    UnsupportedVersion(u16),

    #[error("truncated container: {0}")]
    Truncated(String),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}
