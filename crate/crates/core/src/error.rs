use num_complex::Complex64;
use thiserror::Error;

/// Errors raised by the numerical routines in this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid Schottky parameters: {0}")]
    InvalidParams(String),

    #[error("discs {a} and {b} intersect (margin {margin:.3e})")]
    DiscsIntersect { a: i32, b: i32, margin: f64 },

    #[error("no multiplier with |q| < 1 for handle {handle} (|q| = {modulus})")]
    OutsideSewingDomain { handle: usize, modulus: f64 },

    #[error("degenerate handle {0}: w_a = w_-a")]
    DegenerateHandle(usize),

    #[error("Möbius image of handle {0} is at infinity")]
    ImageAtInfinity(usize),

    #[error("evaluation point {point} is within {distance:.3e} of a pole")]
    PoleProximity { point: Complex64, distance: f64 },

    #[error("point {0} lies inside a Schottky disc")]
    InsideDisc(Complex64),

    #[error("Poincaré series tail did not converge by word length {max_len} (last shell ratio {ratio:.3e})")]
    TailNotConverged { max_len: usize, ratio: f64 },

    #[error("limit point configuration: {0}")]
    LimitPoints(String),

    #[error("period matrix asymmetry {0:.3e} exceeds tolerance")]
    Asymmetric(f64),

    #[error("no admissible integration path for handle {0}")]
    NoPath(usize),

    #[error("quadrature failed to converge: {0}")]
    Quadrature(String),

    #[error("ill-conditioned fit: {0}")]
    IllConditioned(String),

    #[error("fit residual {0:.3e} above threshold")]
    FitResidual(f64),

    #[error("finite-difference stencil leaves the valid parameter region")]
    StencilInvalid,

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("derivative of order {requested} exceeds supported order {supported}")]
    DerivativeOrder { requested: usize, supported: usize },

    #[error("form weight mismatch: {0:?} vs {1:?}")]
    WeightMismatch(Vec<i32>, Vec<i32>),

    #[error("imaginary part of the period matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("lattice: {0}")]
    Lattice(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("graph order {0} exceeds the supported maximum")]
    TooManyVertices(usize),
}

pub type Result<T> = std::result::Result<T, Error>;
