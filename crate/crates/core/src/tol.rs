//! Numeric tolerances shared by construction checks, estimators, tests, and
//! the CPTP projector. Keeping them in one record avoids drift between the
//! thresholds a builder enforces and the ones a test asserts.

/// Tolerance bundle used across the crate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Max entrywise deviation `|M - M^dag|` accepted as Hermitian.
    pub hermiticity: f64,
    /// Max deviation accepted for unitarity and trace-orthogonality checks.
    pub unitarity: f64,
    /// Residual accepted when reassembling a matrix from a decomposition
    /// (eigen reassembly, PSD square roots, outer-product decompositions).
    pub reconstruction: f64,
    /// Max deviation of squared inter-basis overlaps from `1/d`.
    pub unbiasedness: f64,
    /// Eigenvalues above `-psd_clip` are clipped to zero in PSD projections
    /// and square roots; anything below is an error.
    pub psd_clip: f64,
    /// Accepted trace-preservation residual on χ and Choi matrices.
    pub tp_residual: f64,
    /// Minimum overlap modulus for a covariance image lookup to succeed
    /// (as a deficit from 1: accept when `1 - |overlap| <= covariance_match`).
    pub covariance_match: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        TOL
    }
}

/// Crate-wide defaults.
pub const TOL: Tolerances = Tolerances {
    hermiticity: 1e-10,
    unitarity: 1e-12,
    reconstruction: 1e-9,
    unbiasedness: 1e-10,
    psd_clip: 1e-10,
    tp_residual: 1e-8,
    covariance_match: 1e-8,
};
