//! Dense complex linear algebra on small matrices. No physics in here: the
//! rest of the crate builds operator bases, channels, and estimators on top
//! of these primitives.
//!
//! Matrices are `ndarray::Array2<Complex64>` in row-major order; pure states
//! are a thin newtype over `Array1<Complex64>` that enforces unit norm at
//! construction. Everything is sized for dimensions up to a few dozen, so
//! dense storage and O(n^3) kernels are the right trade.

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::tol::TOL;

/// Dense complex matrix, row-major.
pub type CMat = Array2<C64>;
/// Dense complex vector.
pub type CVec = Array1<C64>;

/// Identity matrix of dimension `d`.
pub fn identity(d: usize) -> CMat {
    Array2::from_diag_elem(d, C64::new(1.0, 0.0))
}

/// Zero matrix of dimension `rows x cols`.
pub fn zeros(rows: usize, cols: usize) -> CMat {
    Array2::zeros((rows, cols))
}

/// Conjugate transpose.
pub fn dagger(m: &CMat) -> CMat {
    m.t().mapv(|z| z.conj())
}

/// Matrix trace.
pub fn trace(m: &CMat) -> C64 {
    m.diag().sum()
}

/// Frobenius norm.
pub fn frob_norm(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Largest entrywise modulus.
pub fn max_abs(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Largest entrywise modulus of `a - b`.
pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    assert_eq!(a.dim(), b.dim(), "max_abs_diff on unequal shapes");
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// Largest entrywise modulus of `M - M^dag`.
pub fn hermiticity_deviation(m: &CMat) -> f64 {
    max_abs_diff(m, &dagger(m))
}

/// `(M + M^dag) / 2`.
pub fn symmetrize(m: &CMat) -> CMat {
    let half = C64::new(0.5, 0.0);
    (m + &dagger(m)).mapv(|z| z * half)
}

/// Kronecker product with the block convention
/// `(a (x) b)[i*rb + k, j*cb + l] = a[i,j] * b[k,l]`.
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    ndarray::linalg::kron(a, b)
}

/// Which tensor factor to keep in a partial trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subsystem {
    First,
    Second,
}

/// Partial trace of a `(d1*d2) x (d1*d2)` matrix over the discarded factor.
pub fn partial_trace(m: &CMat, d1: usize, d2: usize, keep: Subsystem) -> Result<CMat> {
    let n = d1 * d2;
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::DimensionMismatch {
            context: "partial_trace",
            expected: n,
            got: m.nrows(),
        });
    }
    match keep {
        Subsystem::First => {
            let mut out = zeros(d1, d1);
            for i in 0..d1 {
                for j in 0..d1 {
                    let mut acc = C64::new(0.0, 0.0);
                    for k in 0..d2 {
                        acc += m[[i * d2 + k, j * d2 + k]];
                    }
                    out[[i, j]] = acc;
                }
            }
            Ok(out)
        }
        Subsystem::Second => {
            let mut out = zeros(d2, d2);
            for i in 0..d2 {
                for j in 0..d2 {
                    let mut acc = C64::new(0.0, 0.0);
                    for k in 0..d1 {
                        acc += m[[k * d2 + i, k * d2 + j]];
                    }
                    out[[i, j]] = acc;
                }
            }
            Ok(out)
        }
    }
}

const MAX_JACOBI_SWEEPS: usize = 100;

/// Eigendecomposition of a Hermitian matrix by cyclic complex Jacobi
/// rotations. Returns eigenvalues in ascending order and the matching
/// orthonormal eigenvectors as columns.
///
/// The input is symmetrized first; inputs with `|M - M^dag|` beyond the
/// Hermiticity tolerance are rejected. No contract is made on the
/// eigenvector choice inside degenerate eigenspaces.
pub fn hermitian_eig(m: &CMat) -> Result<(Array1<f64>, CMat)> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::DimensionMismatch {
            context: "hermitian_eig",
            expected: n,
            got: m.ncols(),
        });
    }
    let deviation = hermiticity_deviation(m);
    if deviation > TOL.hermiticity {
        return Err(Error::NotHermitian { deviation });
    }
    let mut a = symmetrize(m);
    let mut v = identity(n);
    let scale = frob_norm(&a).max(1.0);

    for _ in 0..MAX_JACOBI_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|p| (0..n).map(move |q| (p, q)))
            .filter(|(p, q)| p != q)
            .map(|(p, q)| a[[p, q]].norm_sqr())
            .sum();
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[[p, q]];
                let beta = apq.norm();
                if beta <= 1e-300 {
                    continue;
                }
                let phase = apq / beta; // e^{i phi}
                let app = a[[p, p]].re;
                let aqq = a[[q, q]].re;
                let tau = (app - aqq) / (2.0 * beta);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let cs = C64::new(c, 0.0);
                let sp = phase * s; // s * e^{i phi}
                let spc = sp.conj(); // s * e^{-i phi}

                // A <- U^dag A U with the rotation acting on rows/cols p, q.
                for r in 0..n {
                    if r == p || r == q {
                        continue;
                    }
                    let arp = a[[r, p]];
                    let arq = a[[r, q]];
                    a[[r, p]] = cs * arp + spc * arq;
                    a[[r, q]] = -sp * arp + cs * arq;
                    a[[p, r]] = a[[r, p]].conj();
                    a[[q, r]] = a[[r, q]].conj();
                }
                let app_new = c * c * app + 2.0 * beta * c * s + s * s * aqq;
                let aqq_new = s * s * app - 2.0 * beta * c * s + c * c * aqq;
                a[[p, p]] = C64::new(app_new, 0.0);
                a[[q, q]] = C64::new(aqq_new, 0.0);
                a[[p, q]] = C64::new(0.0, 0.0);
                a[[q, p]] = C64::new(0.0, 0.0);

                // V <- V U.
                for r in 0..n {
                    let vrp = v[[r, p]];
                    let vrq = v[[r, q]];
                    v[[r, p]] = cs * vrp + spc * vrq;
                    v[[r, q]] = -sp * vrp + cs * vrq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[[i, i]].re.partial_cmp(&a[[j, j]].re).unwrap());
    let values = Array1::from_iter(order.iter().map(|&i| a[[i, i]].re));
    let mut vectors = zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for r in 0..n {
            vectors[[r, dst]] = v[[r, src]];
        }
    }
    Ok((values, vectors))
}

/// Hermitian PSD square root. Eigenvalues in `[-psd_clip, 0)` are clipped to
/// zero; anything more negative is an error.
pub fn psd_sqrt(m: &CMat) -> Result<CMat> {
    let (values, vectors) = hermitian_eig(m)?;
    let mut roots = Vec::with_capacity(values.len());
    for &lambda in values.iter() {
        if lambda < -TOL.psd_clip {
            return Err(Error::NegativeEigenvalue(lambda));
        }
        roots.push(lambda.max(0.0).sqrt());
    }
    Ok(reassemble(&Array1::from(roots), &vectors))
}

/// `V diag(values) V^dag`.
pub fn reassemble(values: &Array1<f64>, vectors: &CMat) -> CMat {
    let n = vectors.nrows();
    let mut out = zeros(n, n);
    for k in 0..values.len() {
        let lambda = values[k];
        if lambda == 0.0 {
            continue;
        }
        for i in 0..n {
            let vik = vectors[[i, k]];
            for j in 0..n {
                out[[i, j]] += C64::new(lambda, 0.0) * vik * vectors[[j, k]].conj();
            }
        }
    }
    out
}

/// Unit-norm complex vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    amps: CVec,
}

impl PureState {
    /// Wrap a vector that is already normalized to within 1e-12.
    pub fn new(amps: CVec) -> Result<Self> {
        let norm = vec_norm(&amps);
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::NotNormalized(norm));
        }
        Ok(Self { amps })
    }

    /// Normalize an arbitrary nonzero vector.
    pub fn normalized(amps: CVec) -> Result<Self> {
        let norm = vec_norm(&amps);
        if norm < 1e-150 {
            return Err(Error::NotNormalized(norm));
        }
        let inv = C64::new(1.0 / norm, 0.0);
        Ok(Self {
            amps: amps.mapv(|z| z * inv),
        })
    }

    /// Computational basis state `|k>` in dimension `dim`.
    pub fn basis_state(dim: usize, k: usize) -> Self {
        assert!(k < dim, "basis index {k} out of range for dim {dim}");
        let mut amps = Array1::zeros(dim);
        amps[k] = C64::new(1.0, 0.0);
        Self { amps }
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &CVec {
        &self.amps
    }

    /// `<self|other>`.
    pub fn overlap(&self, other: &PureState) -> C64 {
        self.amps
            .iter()
            .zip(other.amps.iter())
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// Rank-1 projector `|psi><psi|`.
    pub fn projector(&self) -> CMat {
        let d = self.dim();
        let mut out = zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                out[[i, j]] = self.amps[i] * self.amps[j].conj();
            }
        }
        out
    }

    /// Tensor product `|self> (x) |other>` under the composite index
    /// convention `index = k1 * d2 + k2`.
    pub fn tensor(&self, other: &PureState) -> PureState {
        let d1 = self.dim();
        let d2 = other.dim();
        let mut amps = Array1::zeros(d1 * d2);
        for k1 in 0..d1 {
            for k2 in 0..d2 {
                amps[k1 * d2 + k2] = self.amps[k1] * other.amps[k2];
            }
        }
        PureState { amps }
    }

    /// Apply a unitary and re-normalize away the O(eps) drift.
    pub fn apply_unitary(&self, u: &CMat) -> Result<PureState> {
        if u.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "apply_unitary",
                expected: self.dim(),
                got: u.ncols(),
            });
        }
        PureState::normalized(u.dot(&self.amps))
    }

    /// Canonical byte key: the IEEE-754 bit patterns of the amplitudes in
    /// order. Used to deduplicate measurement settings.
    pub fn key_bytes(&self) -> Vec<u8> {
        let mut bytes = Vec::with_capacity(16 * self.amps.len());
        for z in self.amps.iter() {
            bytes.extend_from_slice(&z.re.to_bits().to_le_bytes());
            bytes.extend_from_slice(&z.im.to_bits().to_le_bytes());
        }
        bytes
    }
}

impl Serialize for PureState {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.amps.to_vec().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for PureState {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let amps = Vec::<C64>::deserialize(deserializer)?;
        PureState::new(Array1::from(amps)).map_err(D::Error::custom)
    }
}

fn vec_norm(v: &CVec) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Haar-random pure state: i.i.d. standard complex Gaussian components,
/// normalized.
pub fn random_pure_state<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> PureState {
    assert!(dim >= 1, "random_pure_state needs dim >= 1");
    loop {
        let amps: CVec = (0..dim)
            .map(|_| {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                C64::new(re, im)
            })
            .collect();
        if let Ok(state) = PureState::normalized(amps) {
            return state;
        }
    }
}

/// Random Hermitian matrix with independent Gaussian entries, `(G + G^dag)/2`.
pub fn random_hermitian<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CMat {
    let g = random_gaussian_matrix(dim, rng);
    symmetrize(&g)
}

/// Haar-random unitary via modified Gram-Schmidt on a Gaussian matrix
/// (the R factor's diagonal comes out real positive, which makes the Q
/// factor Haar distributed).
pub fn random_unitary_matrix<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CMat {
    let g = random_gaussian_matrix(dim, rng);
    let mut cols: Vec<CVec> = (0..dim).map(|j| g.column(j).to_owned()).collect();
    for j in 0..dim {
        for i in 0..j {
            let proj: C64 = cols[i]
                .iter()
                .zip(cols[j].iter())
                .map(|(a, b)| a.conj() * b)
                .sum();
            let head = cols[i].clone();
            cols[j].zip_mut_with(&head, |x, y| *x -= proj * y);
        }
        let norm = vec_norm(&cols[j]);
        let inv = C64::new(1.0 / norm, 0.0);
        cols[j].mapv_inplace(|z| z * inv);
    }
    let mut u = zeros(dim, dim);
    for (j, col) in cols.iter().enumerate() {
        for i in 0..dim {
            u[[i, j]] = col[i];
        }
    }
    u
}

fn random_gaussian_matrix<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CMat {
    let mut m = zeros(dim, dim);
    for i in 0..dim {
        for j in 0..dim {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            m[[i, j]] = C64::new(re, im);
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::derive_rng;
    use ndarray::array;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn sigma_x() -> CMat {
        array![[c(0.0, 0.0), c(1.0, 0.0)], [c(1.0, 0.0), c(0.0, 0.0)]]
    }

    fn sigma_z() -> CMat {
        array![[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(-1.0, 0.0)]]
    }

    #[test]
    fn kron_identities() {
        let i6 = kron(&identity(2), &identity(3));
        assert_eq!(max_abs_diff(&i6, &identity(6)), 0.0);
    }

    #[test]
    fn kron_maps_composite_basis_indices() {
        // sigma_x (x) I3 on |0>(x)|1> = |1>(x)|1>, i.e. index 1 -> index 4
        // under index = k1*3 + k2.
        let op = kron(&sigma_x(), &identity(3));
        let input = PureState::basis_state(2, 0).tensor(&PureState::basis_state(3, 1));
        let expect = PureState::basis_state(2, 1).tensor(&PureState::basis_state(3, 1));
        let moved = input.apply_unitary(&op).unwrap();
        assert!((moved.overlap(&expect).norm() - 1.0).abs() < 1e-12);
        assert_eq!(expect.amplitudes()[4], c(1.0, 0.0));
    }

    #[test]
    fn kron_mixed_product_identity() {
        // (A(x)B)(C(x)D) = AC (x) BD, checked against direct multiplication.
        let mut rng = derive_rng(11, &[0]);
        for _ in 0..10 {
            let a = random_gaussian_matrix(2, &mut rng);
            let b = random_gaussian_matrix(3, &mut rng);
            let cm = random_gaussian_matrix(2, &mut rng);
            let d = random_gaussian_matrix(3, &mut rng);
            let lhs = kron(&a, &b).dot(&kron(&cm, &d));
            let rhs = kron(&a.dot(&cm), &b.dot(&d));
            assert!(max_abs_diff(&lhs, &rhs) <= 1e-12);
        }
    }

    #[test]
    fn kron_bilinear() {
        let mut rng = derive_rng(12, &[0]);
        let a = random_gaussian_matrix(2, &mut rng);
        let b = random_gaussian_matrix(2, &mut rng);
        let x = random_gaussian_matrix(3, &mut rng);
        let alpha = c(0.3, -1.1);
        let lhs = kron(&(&a * alpha + &b), &x);
        let rhs = &kron(&a, &x) * alpha + &kron(&b, &x);
        assert!(max_abs_diff(&lhs, &rhs) <= 1e-12);
    }

    #[test]
    fn partial_trace_factorizes() {
        let mut rng = derive_rng(13, &[0]);
        let a = random_gaussian_matrix(2, &mut rng);
        let third = identity(3).mapv(|z| z / 3.0);
        let m = kron(&a, &third);
        let back = partial_trace(&m, 2, 3, Subsystem::First).unwrap();
        assert!(max_abs_diff(&back, &a) <= 1e-12);

        let p0 = PureState::basis_state(2, 0).projector();
        let p2 = PureState::basis_state(3, 2).projector();
        let m2 = kron(&p0, &p2);
        let back2 = partial_trace(&m2, 2, 3, Subsystem::Second).unwrap();
        assert!(max_abs_diff(&back2, &p2) <= 1e-12);

        // partial_trace(A (x) B, keep first) = A * Tr B.
        let b = random_gaussian_matrix(3, &mut rng);
        let tb = trace(&b);
        let kept = partial_trace(&kron(&a, &b), 2, 3, Subsystem::First).unwrap();
        assert!(max_abs_diff(&kept, &a.mapv(|z| z * tb)) <= 1e-12);
    }

    #[test]
    fn partial_trace_preserves_trace() {
        // Oracle: direct summation of the diagonal.
        let mut rng = derive_rng(14, &[0]);
        let h = random_hermitian(6, &mut rng);
        let reduced = partial_trace(&h, 2, 3, Subsystem::Second).unwrap();
        let direct: C64 = (0..6).map(|i| h[[i, i]]).sum();
        assert!((trace(&reduced) - direct).norm() <= 1e-12);
    }

    #[test]
    fn partial_trace_rejects_bad_dims() {
        let m = identity(5);
        assert!(partial_trace(&m, 2, 3, Subsystem::First).is_err());
    }

    #[test]
    fn eig_sigma_z() {
        let (vals, _) = hermitian_eig(&sigma_z()).unwrap();
        assert!((vals[0] + 1.0).abs() < 1e-12);
        assert!((vals[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eig_identity() {
        let (vals, _) = hermitian_eig(&identity(6)).unwrap();
        for v in vals.iter() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn eig_reassembles_random_hermitian() {
        let mut rng = derive_rng(15, &[0]);
        for _ in 0..5 {
            let h = random_hermitian(6, &mut rng);
            let (vals, vecs) = hermitian_eig(&h).unwrap();
            let back = reassemble(&vals, &vecs);
            assert!(max_abs_diff(&back, &symmetrize(&h)) <= 1e-10);
            // Eigenvalue sum equals the trace.
            let sum: f64 = vals.iter().sum();
            assert!((sum - trace(&h).re).abs() <= 1e-10);
            // Columns orthonormal.
            let gram = dagger(&vecs).dot(&vecs);
            assert!(max_abs_diff(&gram, &identity(6)) <= 1e-10);
        }
    }

    #[test]
    fn eig_rejects_non_hermitian() {
        let m = array![[c(0.0, 0.0), c(1.0, 0.0)], [c(0.0, 0.0), c(0.0, 0.0)]];
        assert!(matches!(
            hermitian_eig(&m),
            Err(Error::NotHermitian { .. })
        ));
    }

    #[test]
    fn sqrt_diagonal_cases() {
        assert!(max_abs_diff(&psd_sqrt(&identity(3)).unwrap(), &identity(3)) <= 1e-12);
        let m = Array2::from_diag(&array![c(4.0, 0.0), c(9.0, 0.0), c(0.0, 0.0)]);
        let s = psd_sqrt(&m).unwrap();
        let expect = Array2::from_diag(&array![c(2.0, 0.0), c(3.0, 0.0), c(0.0, 0.0)]);
        assert!(max_abs_diff(&s, &expect) <= 1e-12);
    }

    #[test]
    fn sqrt_squares_back() {
        let mut rng = derive_rng(16, &[0]);
        let g = random_gaussian_matrix(6, &mut rng);
        let m = dagger(&g).dot(&g);
        let s = psd_sqrt(&m).unwrap();
        assert!(hermiticity_deviation(&s) <= 1e-10);
        assert!(max_abs_diff(&s.dot(&s), &m) <= 1e-9 * frob_norm(&m).max(1.0));
    }

    #[test]
    fn sqrt_scalar_multiples() {
        let mut rng = derive_rng(17, &[0]);
        let g = random_gaussian_matrix(4, &mut rng);
        let m = dagger(&g).dot(&g);
        let c0 = 2.7;
        let lhs = psd_sqrt(&m.mapv(|z| z * c0)).unwrap();
        let rhs = psd_sqrt(&m).unwrap().mapv(|z| z * c0.sqrt());
        assert!(max_abs_diff(&lhs, &rhs) <= 1e-10);
    }

    #[test]
    fn sqrt_rejects_negative() {
        let m = Array2::from_diag(&array![c(1.0, 0.0), c(-0.5, 0.0)]);
        assert!(matches!(
            psd_sqrt(&m),
            Err(Error::NegativeEigenvalue(_))
        ));
    }

    #[test]
    fn random_states_are_normalized() {
        let mut rng = derive_rng(18, &[0]);
        let s1 = random_pure_state(1, &mut rng);
        assert!((s1.overlap(&s1).re - 1.0).abs() <= 1e-12);
        for _ in 0..10_000 {
            let s = random_pure_state(6, &mut rng);
            assert!((s.overlap(&s).re - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn random_states_average_to_maximally_mixed() {
        // Monte Carlo check of the 1-design property of the Haar measure.
        let mut rng = derive_rng(19, &[0]);
        let n = 100_000;
        let mut acc = zeros(2, 2);
        for _ in 0..n {
            acc += &random_pure_state(2, &mut rng).projector();
        }
        acc.mapv_inplace(|z| z / n as f64);
        let half = identity(2).mapv(|z| z * 0.5);
        assert!(max_abs_diff(&acc, &half) <= 5e-3);
    }

    #[test]
    fn haar_unitary_is_unitary() {
        let mut rng = derive_rng(20, &[0]);
        let u = random_unitary_matrix(6, &mut rng);
        assert!(max_abs_diff(&dagger(&u).dot(&u), &identity(6)) <= 1e-12);
    }

    #[test]
    fn pure_state_validation() {
        assert!(PureState::new(array![c(1.0, 0.0), c(0.1, 0.0)]).is_err());
        let s = PureState::normalized(array![c(3.0, 0.0), c(4.0, 0.0)]).unwrap();
        assert!((s.amplitudes()[0].re - 0.6).abs() < 1e-15);
        assert!(PureState::normalized(array![c(0.0, 0.0)]).is_err());
    }
}
