//! Genus g surfaces from Schottky data: Poincaré-series differentials,
//! parameter-space variations, Virasoro graph operators and their behaviour
//! under symplectic changes of homology basis.

pub mod differentials;
pub mod error;
pub mod modular;
pub mod moduli;
pub mod quadrature;
pub mod schottky;
pub mod variations;
pub mod virgraphs;

mod kahan;

pub use differentials::{
    FormValue, LimitPoint, LimitPointConfig, PeriodMatrix, Surface, ThetaFit, TruncationMode,
    TruncationPolicy,
};
pub use error::{Error, Result};
pub use moduli::{EvenLattice, ExpLinear, ModuliFunction, Monomial, Polynomial, SiegelTheta};
pub use schottky::{GroupElement, Handle, HandleData, MobiusMap, SchottkyParams};

pub use num_complex::Complex64;

/// `i` as a `Complex64`.
pub const I: Complex64 = Complex64::new(0.0, 1.0);

/// `2πi`.
pub const TWO_PI_I: Complex64 = Complex64::new(0.0, 2.0 * std::f64::consts::PI);

/// `n` points drawn uniformly on the circle `|z| = radius`.
pub fn circle_points<R: rand::Rng>(rng: &mut R, n: usize, radius: f64) -> Vec<Complex64> {
    (0..n)
        .map(|_| Complex64::from_polar(radius, rng.gen_range(0.0..std::f64::consts::TAU)))
        .collect()
}
