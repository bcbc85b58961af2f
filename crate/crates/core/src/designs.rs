//! Operator bases and state 2-designs.
//!
//! The operator side is the Sylvester (clock-and-shift) basis
//! `E_kl = sum_m w^{ml} |m+k><m|` with `w = exp(2 pi i / d)`; the state side
//! is the maximal set of `d+1` mutually unbiased bases available for prime
//! `d`, which forms a uniform state 2-design. For a composite dimension
//! `d = D1*D2` the working family is the tensor product of the two factor
//! designs; it is *not* a 2-design in dimension `d`, which is exactly why the
//! estimator combines three mean fidelities instead of one.
//!
//! Every Sylvester operator permutes each MUB within itself up to a phase.
//! [`covariance_action`] looks that permutation up, with the phase, so
//! experiment plans can prepare design states only.

use ndarray::Array1;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::algebra::{dagger, identity, max_abs_diff, trace, zeros, CMat, CVec, PureState};
use crate::error::{Error, Result};
use crate::tol::TOL;

/// Trial-division primality; fine for the dimensions this crate handles.
pub fn is_prime(n: usize) -> bool {
    if n < 2 {
        return false;
    }
    let mut k = 2;
    while k * k <= n {
        if n.is_multiple_of(k) {
            return false;
        }
        k += 1;
    }
    true
}

/// Identifies how an operator basis was built, for compatibility checks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum BasisKind {
    /// Sylvester basis in one dimension.
    Sylvester { dim: usize },
    /// Kronecker products of two factor bases, flat index `n = n1*d2^2 + n2`.
    Product { d1: usize, d2: usize },
}

/// Indexed family of `d^2` unitary, trace-orthogonal operators.
#[derive(Debug, Clone)]
pub struct OperatorBasis {
    dim: usize,
    elements: Vec<CMat>,
    kind: BasisKind,
}

impl OperatorBasis {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn kind(&self) -> &BasisKind {
        &self.kind
    }

    /// Element by flat index.
    pub fn element(&self, n: usize) -> &CMat {
        &self.elements[n]
    }

    /// Element by `(k, l)` pair, flat index `n = k*d + l`.
    pub fn element_kl(&self, k: usize, l: usize) -> &CMat {
        &self.elements[self.flat(k, l)]
    }

    pub fn flat(&self, k: usize, l: usize) -> usize {
        debug_assert!(k < self.dim && l < self.dim);
        k * self.dim + l
    }

    pub fn kl(&self, n: usize) -> (usize, usize) {
        (n / self.dim, n % self.dim)
    }

    /// For a product basis, split a flat index into the two factor indices.
    pub fn split_product(&self, n: usize) -> Option<(usize, usize)> {
        match self.kind {
            BasisKind::Product { d2, .. } => {
                let block = d2 * d2;
                Some((n / block, n % block))
            }
            _ => None,
        }
    }

    /// Check unitarity, trace orthogonality `Tr(E_m E_n^dag) = d delta_mn`,
    /// and that element 0 is the identity.
    pub fn verify(&self) -> Result<()> {
        let d = self.dim;
        if max_abs_diff(self.element(0), &identity(d)) > TOL.unitarity {
            return Err(Error::BasisMismatch(
                "element 0 is not the identity".into(),
            ));
        }
        for (m, e) in self.elements.iter().enumerate() {
            let gram = e.dot(&dagger(e));
            if max_abs_diff(&gram, &identity(d)) > TOL.unitarity {
                return Err(Error::BasisMismatch(format!("element {m} is not unitary")));
            }
            for (n, f) in self.elements.iter().enumerate() {
                let t = trace(&e.dot(&dagger(f)));
                let expect = if m == n { d as f64 } else { 0.0 };
                if (t - C64::new(expect, 0.0)).norm() > TOL.unitarity * d as f64 {
                    return Err(Error::BasisMismatch(format!(
                        "elements {m},{n} violate trace orthogonality"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Sylvester basis `E_kl = sum_m w^{ml} |m+k mod d><m|`, `w = exp(2 pi i/d)`.
pub fn sylvester_basis(d: usize) -> OperatorBasis {
    assert!(d >= 2, "sylvester_basis needs d >= 2");
    let mut elements = Vec::with_capacity(d * d);
    for k in 0..d {
        for l in 0..d {
            let mut e = zeros(d, d);
            for m in 0..d {
                e[[(m + k) % d, m]] = root_of_unity(d, m * l);
            }
            elements.push(e);
        }
    }
    OperatorBasis {
        dim: d,
        elements,
        kind: BasisKind::Sylvester { dim: d },
    }
}

/// Kronecker products of two factor bases with flat index `n = n1*d2^2 + n2`.
pub fn product_basis(b1: &OperatorBasis, b2: &OperatorBasis) -> OperatorBasis {
    let mut elements = Vec::with_capacity(b1.len() * b2.len());
    for e1 in &b1.elements {
        for e2 in &b2.elements {
            elements.push(crate::algebra::kron(e1, e2));
        }
    }
    OperatorBasis {
        dim: b1.dim * b2.dim,
        elements,
        kind: BasisKind::Product {
            d1: b1.dim,
            d2: b2.dim,
        },
    }
}

fn root_of_unity(d: usize, exponent: usize) -> C64 {
    let angle = 2.0 * std::f64::consts::PI * (exponent % d) as f64 / d as f64;
    C64::new(angle.cos(), angle.sin())
}

/// Maximal set of `d+1` mutually unbiased bases for prime `d`.
/// Basis 0 is the canonical basis.
#[derive(Debug, Clone)]
pub struct MubDesign {
    dim: usize,
    bases: Vec<Vec<PureState>>,
}

impl MubDesign {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_bases(&self) -> usize {
        self.bases.len()
    }

    pub fn basis(&self, j: usize) -> &[PureState] {
        &self.bases[j]
    }

    pub fn state(&self, j: usize, m: usize) -> &PureState {
        &self.bases[j][m]
    }

    /// Total number of states, `(d+1) * d`.
    pub fn len(&self) -> usize {
        self.bases.len() * self.dim
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// All states in a fixed order: basis-major, then member index.
    pub fn iter_states(&self) -> impl Iterator<Item = &PureState> {
        self.bases.iter().flatten()
    }

    /// Find the design state in basis `j` that matches `v` up to a phase.
    /// Returns `(m', overlap)` where `overlap = <psi_m'|v>`.
    pub fn image_of(&self, j: usize, v: &CVec) -> Option<(usize, C64)> {
        let mut best: Option<(usize, C64)> = None;
        for (m, state) in self.bases[j].iter().enumerate() {
            let ov: C64 = state
                .amplitudes()
                .iter()
                .zip(v.iter())
                .map(|(a, b)| a.conj() * b)
                .sum();
            if best.is_none_or(|(_, b)| ov.norm() > b.norm()) {
                best = Some((m, ov));
            }
        }
        let (m, ov) = best?;
        if 1.0 - ov.norm() <= TOL.covariance_match {
            Some((m, ov))
        } else {
            None
        }
    }
}

/// Build the maximal MUB set for a prime dimension.
///
/// For `d = 2` the non-canonical bases are the explicit sigma_x and sigma_y
/// eigenbases. For odd prime `d` basis `j` (j = 1..d) has components
/// `<k|psi_m^j> = w^{t k^2 + m k} / sqrt(d)` with `t = j - 1`, so basis 1 is
/// the Fourier basis. All states get the deterministic phase convention
/// "first nonzero component real positive".
pub fn mub_prime(d: usize) -> Result<MubDesign> {
    if !is_prime(d) {
        return Err(Error::NotPrime(d));
    }
    let mut bases = Vec::with_capacity(d + 1);
    bases.push((0..d).map(|m| PureState::basis_state(d, m)).collect());

    if d == 2 {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let re = |x: f64| C64::new(x, 0.0);
        let im = |x: f64| C64::new(0.0, x);
        bases.push(vec![
            PureState::new(Array1::from(vec![re(s), re(s)])).unwrap(),
            PureState::new(Array1::from(vec![re(s), re(-s)])).unwrap(),
        ]);
        bases.push(vec![
            PureState::new(Array1::from(vec![re(s), im(s)])).unwrap(),
            PureState::new(Array1::from(vec![re(s), im(-s)])).unwrap(),
        ]);
    } else {
        let inv_sqrt = 1.0 / (d as f64).sqrt();
        for t in 0..d {
            let mut basis = Vec::with_capacity(d);
            for m in 0..d {
                let amps: CVec = (0..d)
                    .map(|k| root_of_unity(d, t * k * k + m * k) * inv_sqrt)
                    .collect();
                basis.push(fix_phase(amps));
            }
            bases.push(basis);
        }
    }

    let design = MubDesign { dim: d, bases };
    verify_diagonalizes_abelian_subsets(&design);
    Ok(design)
}

/// Multiply by a global phase so the first component of modulus > 1e-8 is
/// real positive. Keeps covariance phases reproducible across runs.
fn fix_phase(amps: CVec) -> PureState {
    let pivot = amps.iter().find(|z| z.norm() > 1e-8).copied();
    let adjusted = match pivot {
        Some(z) => {
            let phase = z / z.norm();
            amps.mapv(|a| a * phase.conj())
        }
        None => amps,
    };
    PureState::new(adjusted).expect("MUB construction yields unit vectors")
}

/// Each non-canonical basis must diagonalize one abelian subset of the
/// Sylvester basis (for exponent t, the set `{E_{k, 2tk mod d}}`); the
/// canonical basis diagonalizes the diagonal subset `{E_{0,l}}`. A state is
/// an eigenvector of a unitary iff `|<psi|E|psi>| = 1`.
fn verify_diagonalizes_abelian_subsets(design: &MubDesign) {
    let d = design.dim;
    let basis = sylvester_basis(d);
    let subset_for = |j: usize| -> Vec<(usize, usize)> {
        if j == 0 {
            (0..d).map(|l| (0, l)).collect()
        } else if d == 2 {
            // sigma_x eigenbasis for E_10, sigma_y eigenbasis for E_11.
            match j {
                1 => vec![(0, 0), (1, 0)],
                _ => vec![(0, 0), (1, 1)],
            }
        } else {
            let t = j - 1;
            (0..d).map(|k| (k, (2 * t * k) % d)).collect()
        }
    };
    for j in 0..design.num_bases() {
        for (k, l) in subset_for(j) {
            let e = basis.element_kl(k, l);
            for state in design.basis(j) {
                let ev: C64 = state
                    .amplitudes()
                    .iter()
                    .zip(e.dot(state.amplitudes()).iter())
                    .map(|(a, b)| a.conj() * b)
                    .sum();
                assert!(
                    (ev.norm() - 1.0).abs() < 1e-10,
                    "basis {j} does not diagonalize E_{k}{l} (|<E>| = {})",
                    ev.norm()
                );
            }
        }
    }
}

/// Index tuple of a product-design element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignIndex {
    pub j1: usize,
    pub m1: usize,
    pub j2: usize,
    pub m2: usize,
}

/// All tensor products of two factor designs, with a fixed flat enumeration.
#[derive(Debug, Clone)]
pub struct ProductDesign {
    factor1: MubDesign,
    factor2: MubDesign,
    states: Vec<PureState>,
    tuples: Vec<DesignIndex>,
}

impl ProductDesign {
    pub fn new(factor1: MubDesign, factor2: MubDesign) -> Self {
        let mut states = Vec::new();
        let mut tuples = Vec::new();
        for j1 in 0..factor1.num_bases() {
            for m1 in 0..factor1.dim() {
                for j2 in 0..factor2.num_bases() {
                    for m2 in 0..factor2.dim() {
                        states.push(factor1.state(j1, m1).tensor(factor2.state(j2, m2)));
                        tuples.push(DesignIndex { j1, m1, j2, m2 });
                    }
                }
            }
        }
        Self {
            factor1,
            factor2,
            states,
            tuples,
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.factor1.dim(), self.factor2.dim())
    }

    pub fn dim(&self) -> usize {
        self.factor1.dim() * self.factor2.dim()
    }

    pub fn factor1(&self) -> &MubDesign {
        &self.factor1
    }

    pub fn factor2(&self) -> &MubDesign {
        &self.factor2
    }

    pub fn state(&self, flat: usize) -> &PureState {
        &self.states[flat]
    }

    pub fn tuple(&self, flat: usize) -> DesignIndex {
        self.tuples[flat]
    }

    pub fn flat(&self, idx: DesignIndex) -> usize {
        let d1 = self.factor1.dim();
        let d2 = self.factor2.dim();
        let inner = (self.factor2.num_bases()) * d2;
        (idx.j1 * d1 + idx.m1) * inner + (idx.j2 * d2 + idx.m2)
    }
}

/// Result of applying a basis operator to a design state: the state maps to
/// member `image_m` of the *same* basis, up to the phase `alpha` (radians).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceAction {
    pub basis_id: usize,
    pub image_m: usize,
    pub phase: f64,
}

/// Look up the design image of `E_kl |psi_m^j>`.
pub fn covariance_action(
    basis: &OperatorBasis,
    design: &MubDesign,
    op: (usize, usize),
    st: (usize, usize),
) -> Result<CovarianceAction> {
    let (k, l) = op;
    let (j, m) = st;
    if basis.dim() != design.dim() {
        return Err(Error::DimensionMismatch {
            context: "covariance_action",
            expected: design.dim(),
            got: basis.dim(),
        });
    }
    let v = basis.element_kl(k, l).dot(design.state(j, m).amplitudes());
    match design.image_of(j, &v) {
        Some((image_m, overlap)) => {
            let phase = overlap.arg();
            let image = design.state(j, image_m).amplitudes();
            let rot = C64::from_polar(1.0, phase);
            let residual: f64 = v
                .iter()
                .zip(image.iter())
                .map(|(a, b)| (a - rot * b).norm_sqr())
                .sum::<f64>()
                .sqrt();
            if residual > 1e-10 {
                return Err(Error::NoCovarianceImage {
                    k,
                    l,
                    j,
                    m,
                    best: overlap.norm(),
                });
            }
            Ok(CovarianceAction {
                basis_id: j,
                image_m,
                phase,
            })
        }
        None => Err(Error::NoCovarianceImage {
            k,
            l,
            j,
            m,
            best: 0.0,
        }),
    }
}

/// `| mean_S Tr[P A P B] - (Tr A Tr B + Tr[AB]) / (d(d+1)) |` for a state
/// family `S`. Zero (to precision) iff the family averages quadratics like
/// the Haar measure does.
pub fn two_design_residual_states(states: &[PureState], a: &CMat, b: &CMat) -> f64 {
    let d = a.nrows();
    assert!(!states.is_empty());
    assert_eq!(a.dim(), b.dim());
    assert_eq!(states[0].dim(), d);
    let mut acc = C64::new(0.0, 0.0);
    for psi in states {
        let ea = expectation(psi, a);
        let eb = expectation(psi, b);
        acc += ea * eb;
    }
    acc /= states.len() as f64;
    let rhs = (trace(a) * trace(b) + trace(&a.dot(b))) / (d as f64 * (d as f64 + 1.0));
    (acc - rhs).norm()
}

/// [`two_design_residual_states`] over a full MUB design.
pub fn two_design_residual(design: &MubDesign, a: &CMat, b: &CMat) -> f64 {
    let states: Vec<PureState> = design.iter_states().cloned().collect();
    two_design_residual_states(&states, a, b)
}

fn expectation(psi: &PureState, m: &CMat) -> C64 {
    psi.amplitudes()
        .iter()
        .zip(m.dot(psi.amplitudes()).iter())
        .map(|(a, b)| a.conj() * b)
        .sum()
}
