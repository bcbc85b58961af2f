//! The selective-estimation core.
//!
//! One process-matrix coefficient chi[row, col] (flat indices into the
//! product operator basis) is recovered from three mean fidelities of the
//! modified channel `rho -> E(E_row^dag rho E_col)`:
//!
//! ```text
//! chi = F_tensor (1+D1)(1+D2)/d + delta/d - F_1 (1+D1)/d - F_2 (1+D2)/d
//! ```
//!
//! where the averages run over the tensor-product design (or a random subset
//! of it), `F_1`/`F_2` are the marginal survival expectations of the factors,
//! and `delta` is 1 on diagonal coefficients. The constants come symbolically
//! from `(D1, D2)`; the averaging is exact over the full family, which the
//! noiseless tests pin down against the direct Kraus expansion.
//!
//! Diagonal coefficients only require preparing design states: the operator
//! basis permutes each MUB within itself, so `E^dag |psi>` is looked up as
//! another design element instead of being synthesized. Off-diagonal
//! coefficients turn `|alpha><beta|` into at most five weighted projectors
//! via [`decompose_outer`] and combine the measured survivals linearly.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{dagger, zeros, CMat, CVec, PureState};
use crate::channels::{Channel, ChiMatrix};
use crate::designs::{MubDesign, OperatorBasis, ProductDesign};
use crate::error::{Error, Result};
use crate::stream::derive_rng;

/// Weighted projector expansion of an outer product `|alpha><beta|`.
#[derive(Debug, Clone)]
pub struct OuterDecomposition {
    pub terms: Vec<(C64, PureState)>,
}

impl OuterDecomposition {
    /// `sum_k w_k |s_k><s_k|`, for reassembly checks.
    pub fn reassemble(&self) -> CMat {
        let d = self.terms[0].1.dim();
        let mut out = zeros(d, d);
        for (w, s) in &self.terms {
            out += &s.projector().mapv(|z| z * w);
        }
        out
    }
}

/// Expand `|alpha><beta|` as a weighted sum of at most five projectors.
///
/// The identity `|a><b| = uu^dag + i vv^dag - (1+i)/2 (P_a + P_b)` with
/// `u = (a+b)/sqrt(2)`, `v = (a+ib)/sqrt(2)` holds for *any* pair, orthogonal
/// or not; the non-unit vectors enter as (squared norm) x (normalized
/// projector). Pairs that are parallel to machine precision collapse to the
/// single term `<beta|alpha> P_alpha`.
pub fn decompose_outer(alpha: &PureState, beta: &PureState) -> OuterDecomposition {
    let ov = alpha.overlap(beta);
    let residual: f64 = beta
        .amplitudes()
        .iter()
        .zip(alpha.amplitudes().iter())
        .map(|(b, a)| (b - ov * a).norm_sqr())
        .sum::<f64>()
        .sqrt();
    if residual <= 1e-13 {
        return OuterDecomposition {
            terms: vec![(ov.conj(), alpha.clone())],
        };
    }

    let inv_sqrt2 = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let i_unit = C64::new(0.0, 1.0);
    let mut terms = Vec::with_capacity(4);
    for (factor, weight_unit) in [(C64::new(1.0, 0.0), C64::new(1.0, 0.0)), (i_unit, i_unit)] {
        let combo: CVec = alpha
            .amplitudes()
            .iter()
            .zip(beta.amplitudes().iter())
            .map(|(a, b)| (a + factor * b) * inv_sqrt2)
            .collect();
        let norm_sqr: f64 = combo.iter().map(|z| z.norm_sqr()).sum();
        if norm_sqr < 1e-30 {
            continue;
        }
        let state = PureState::normalized(combo).expect("norm checked above");
        terms.push((weight_unit * norm_sqr, state));
    }
    let tail = C64::new(-0.5, -0.5);
    terms.push((tail, alpha.clone()));
    terms.push((tail, beta.clone()));
    OuterDecomposition { terms }
}

/// Flat coefficient index into a `d^2 x d^2` process matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CoeffIndex {
    pub row: usize,
    pub col: usize,
}

impl CoeffIndex {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    pub fn is_diagonal(&self) -> bool {
        self.row == self.col
    }

    /// The representative with `row <= col`, plus whether it was flipped.
    pub fn canonical(&self) -> (CoeffIndex, bool) {
        if self.row <= self.col {
            (*self, false)
        } else {
            (
                CoeffIndex {
                    row: self.col,
                    col: self.row,
                },
                true,
            )
        }
    }
}

/// Subset of design elements used to estimate one coefficient.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplePlan {
    pub coeff: CoeffIndex,
    pub elements: Vec<usize>,
    pub seed: u64,
    pub permutation: u64,
}

/// Draw `m` design elements without replacement, reproducibly from
/// `(seed, coefficient, permutation)`.
pub fn sample_plan(
    design: &ProductDesign,
    coeff: CoeffIndex,
    m: usize,
    seed: u64,
    permutation: u64,
) -> Result<SamplePlan> {
    let n = design.len();
    if m == 0 {
        return Err(Error::EmptyPlan);
    }
    if m > n {
        return Err(Error::InvalidConfig(format!(
            "sample size {m} exceeds the design size {n}"
        )));
    }
    let mut rng = derive_rng(
        seed,
        &[0x504c_414e, coeff.row as u64, coeff.col as u64, permutation],
    );
    let mut pool: Vec<usize> = (0..n).collect();
    // Partial Fisher-Yates: the first m slots are the sample.
    for k in 0..m {
        let pick = k + rand::Rng::random_range(&mut rng, 0..(n - k));
        pool.swap(k, pick);
    }
    pool.truncate(m);
    Ok(SamplePlan {
        coeff,
        elements: pool,
        seed,
        permutation,
    })
}

/// Survival and marginal-survival requirements of one sampled design element
/// for one coefficient. Shared between the settings enumerator and the
/// estimator so both enumerate the same states bit for bit.
#[derive(Debug, Clone)]
pub struct ElementPlan {
    /// Flat design index of the sampled element.
    pub element: usize,
    /// Projector decomposition of `E_row^dag P_psi E_col`; a single
    /// weight-one design state on diagonal coefficients.
    pub terms: Vec<(C64, PureState)>,
    /// Survival projector `|psi>`.
    pub proj_survival: PureState,
    /// Factor-1 marginal projectors `{ |psi_1> (x) |phi> }`, phi in the MUB
    /// basis that contains psi_2.
    pub proj_marg1: Vec<PureState>,
    /// Factor-2 marginal projectors `{ |phi> (x) |psi_2> }`.
    pub proj_marg2: Vec<PureState>,
}

/// Build the measurement requirements of `(coeff, element)`.
pub fn element_plan(
    basis: &OperatorBasis,
    design: &ProductDesign,
    coeff: CoeffIndex,
    element: usize,
) -> Result<ElementPlan> {
    let (d1, d2) = design.dims();
    let (i1, i2) = split_flat(basis, coeff.row)?;
    let (j1, j2) = split_flat(basis, coeff.col)?;
    let tuple = design.tuple(element);
    let psi1 = design.factor1().state(tuple.j1, tuple.m1);
    let psi2 = design.factor2().state(tuple.j2, tuple.m2);
    let psi = psi1.tensor(psi2);

    let b1 = crate::designs::sylvester_basis(d1);
    let b2 = crate::designs::sylvester_basis(d2);

    let terms = if coeff.is_diagonal() {
        // Covariance economy: E^dag psi is itself a design state up to a
        // phase that cancels in the projector. Asserted, not assumed.
        let a1 = covariant_image(design.factor1(), &b1, i1, tuple.j1, psi1)?;
        let a2 = covariant_image(design.factor2(), &b2, i2, tuple.j2, psi2)?;
        vec![(C64::new(1.0, 0.0), a1.tensor(&a2))]
    } else {
        let alpha = adjoint_prep(&b1, &b2, i1, i2, &psi)?;
        let beta = adjoint_prep(&b1, &b2, j1, j2, &psi)?;
        decompose_outer(&alpha, &beta).terms
    };

    let proj_marg1 = design
        .factor2()
        .basis(tuple.j2)
        .iter()
        .map(|phi| psi1.tensor(phi))
        .collect();
    let proj_marg2 = design
        .factor1()
        .basis(tuple.j1)
        .iter()
        .map(|phi| phi.tensor(psi2))
        .collect();

    Ok(ElementPlan {
        element,
        terms,
        proj_survival: psi,
        proj_marg1,
        proj_marg2,
    })
}

fn split_flat(basis: &OperatorBasis, flat: usize) -> Result<(usize, usize)> {
    if flat >= basis.len() {
        return Err(Error::InvalidIndex {
            row: flat,
            col: flat,
            dim: basis.len(),
        });
    }
    basis
        .split_product(flat)
        .ok_or_else(|| Error::BasisMismatch("expected a product operator basis".into()))
}

/// Design image of `E_i^dag |psi_m^j>`, with the phase cancellation checked.
fn covariant_image(
    design: &MubDesign,
    factor_basis: &OperatorBasis,
    op_flat: usize,
    basis_id: usize,
    psi: &PureState,
) -> Result<PureState> {
    let op = dagger(factor_basis.element(op_flat));
    let v = op.dot(psi.amplitudes());
    let (k, l) = factor_basis.kl(op_flat);
    match design.image_of(basis_id, &v) {
        Some((m, ov)) => {
            if (ov.norm() - 1.0).abs() > 1e-10 {
                return Err(Error::NoCovarianceImage {
                    k,
                    l,
                    j: basis_id,
                    m,
                    best: ov.norm(),
                });
            }
            Ok(design.state(basis_id, m).clone())
        }
        None => Err(Error::NoCovarianceImage {
            k,
            l,
            j: basis_id,
            m: 0,
            best: 0.0,
        }),
    }
}

/// `(E_{n1}^dag (x) E_{n2}^dag) |psi>` as a normalized state.
fn adjoint_prep(
    b1: &OperatorBasis,
    b2: &OperatorBasis,
    n1: usize,
    n2: usize,
    psi: &PureState,
) -> Result<PureState> {
    let op = crate::algebra::kron(&dagger(b1.element(n1)), &dagger(b2.element(n2)));
    psi.apply_unitary(&op)
}

/// Provider of measured (or exact) projection rates.
///
/// `rates(prep, projs)` returns one `(rate, variance)` pair per projector for
/// a channel input `|prep><prep|`. Implementations must be pure lookups or
/// pure computations; reconstruction runs them from multiple threads.
pub trait RateSource: Sync {
    fn rates(&self, prep: &PureState, projs: &[&PureState]) -> Result<Vec<(f64, f64)>>;
}

/// Exact (infinite-shot) rates straight from a channel, with the channel
/// action compiled into a `d^2 x d^2` transfer matrix once.
pub struct ExactChannelSource {
    dim: usize,
    transfer: CMat,
}

impl ExactChannelSource {
    pub fn new<C: Channel>(ch: &C) -> Self {
        let d = ch.dim();
        let mut transfer = zeros(d * d, d * d);
        for i in 0..d {
            for j in 0..d {
                let mut unit = zeros(d, d);
                unit[[i, j]] = C64::new(1.0, 0.0);
                let out = ch.apply(&unit);
                for a in 0..d {
                    for b in 0..d {
                        transfer[[a * d + b, i * d + j]] = out[[a, b]];
                    }
                }
            }
        }
        Self { dim: d, transfer }
    }

    /// Vectorized channel output for the projector of `prep`.
    fn output_vec(&self, prep: &PureState) -> CVec {
        let d = self.dim;
        let mut x = ndarray::Array1::zeros(d * d);
        for i in 0..d {
            for j in 0..d {
                x[i * d + j] = prep.amplitudes()[i] * prep.amplitudes()[j].conj();
            }
        }
        self.transfer.dot(&x)
    }
}

impl RateSource for ExactChannelSource {
    fn rates(&self, prep: &PureState, projs: &[&PureState]) -> Result<Vec<(f64, f64)>> {
        let d = self.dim;
        if prep.dim() != d {
            return Err(Error::DimensionMismatch {
                context: "ExactChannelSource::rates",
                expected: d,
                got: prep.dim(),
            });
        }
        let out = self.output_vec(prep);
        let mut result = Vec::with_capacity(projs.len());
        for proj in projs {
            let mut acc = C64::new(0.0, 0.0);
            for a in 0..d {
                let pa = proj.amplitudes()[a].conj();
                if pa.norm_sqr() < 1e-32 {
                    continue;
                }
                for b in 0..d {
                    acc += pa * out[a * d + b] * proj.amplitudes()[b];
                }
            }
            let p = acc.re;
            if !(-1e-9..=1.0 + 1e-9).contains(&p) {
                return Err(Error::NonPhysicalProbability(p));
            }
            result.push((p.clamp(0.0, 1.0), 0.0));
        }
        Ok(result)
    }
}

/// The three mean fidelities of a modified channel, averaged over a plan.
/// Values are complex on off-diagonal coefficients; variances are the
/// shot-noise contributions (zero for exact sources).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FidelityTriple {
    pub f_tensor: C64,
    pub f1: C64,
    pub f2: C64,
    pub var_tensor: f64,
    pub var_f1: f64,
    pub var_f2: f64,
}

/// Estimate the fidelity triple of `plan.coeff` from a rate source.
pub fn fidelity_triple<S: RateSource>(
    source: &S,
    basis: &OperatorBasis,
    design: &ProductDesign,
    plan: &SamplePlan,
) -> Result<FidelityTriple> {
    if plan.elements.is_empty() {
        return Err(Error::EmptyPlan);
    }
    let mut acc = FidelityTriple {
        f_tensor: C64::new(0.0, 0.0),
        f1: C64::new(0.0, 0.0),
        f2: C64::new(0.0, 0.0),
        var_tensor: 0.0,
        var_f1: 0.0,
        var_f2: 0.0,
    };
    for &element in &plan.elements {
        let eplan = element_plan(basis, design, plan.coeff, element)?;
        for (weight, prep) in &eplan.terms {
            let mut projs: Vec<&PureState> = vec![&eplan.proj_survival];
            projs.extend(eplan.proj_marg1.iter());
            projs.extend(eplan.proj_marg2.iter());
            let rates = source.rates(prep, &projs)?;
            let wsq = weight.norm_sqr();

            let (p_surv, v_surv) = rates[0];
            acc.f_tensor += weight * p_surv;
            acc.var_tensor += wsq * v_surv;

            let n1 = eplan.proj_marg1.len();
            for (p, v) in &rates[1..1 + n1] {
                acc.f1 += weight * *p;
                acc.var_f1 += wsq * v;
            }
            for (p, v) in &rates[1 + n1..] {
                acc.f2 += weight * *p;
                acc.var_f2 += wsq * v;
            }
        }
    }
    let m = plan.elements.len() as f64;
    acc.f_tensor /= m;
    acc.f1 /= m;
    acc.f2 /= m;
    acc.var_tensor /= m * m;
    acc.var_f1 /= m * m;
    acc.var_f2 /= m * m;
    Ok(acc)
}

/// One estimated process-matrix coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiEstimate {
    pub coeff: CoeffIndex,
    pub value: C64,
    pub stderr: f64,
    pub sample_size: usize,
}

/// Invert the fidelity relation for one coefficient:
/// `chi = F_t (1+D1)(1+D2)/d + delta/d - F_1 (1+D1)/d - F_2 (1+D2)/d`,
/// with the variance propagated linearly.
pub fn chi_from_fidelities(
    triple: &FidelityTriple,
    coeff: CoeffIndex,
    dims: (usize, usize),
    sample_size: usize,
) -> ChiEstimate {
    let (d1, d2) = (dims.0 as f64, dims.1 as f64);
    let d = d1 * d2;
    let c_tensor = (1.0 + d1) * (1.0 + d2) / d;
    let c1 = (1.0 + d1) / d;
    let c2 = (1.0 + d2) / d;
    let delta = if coeff.is_diagonal() { 1.0 / d } else { 0.0 };
    let value =
        triple.f_tensor * c_tensor + C64::new(delta, 0.0) - triple.f1 * c1 - triple.f2 * c2;
    let variance = c_tensor * c_tensor * triple.var_tensor
        + c1 * c1 * triple.var_f1
        + c2 * c2 * triple.var_f2;
    ChiEstimate {
        coeff,
        value,
        stderr: variance.sqrt(),
        sample_size,
    }
}

/// Which coefficients to estimate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Selection {
    /// Every independent entry (`row <= col`).
    Full,
    /// An explicit list; conjugate duplicates collapse onto `row <= col`.
    Coefficients(Vec<CoeffIndex>),
}

impl Selection {
    /// Canonical, sorted, deduplicated list of coefficients to estimate.
    pub fn canonical_list(&self, basis_len: usize) -> Result<Vec<CoeffIndex>> {
        let mut list = match self {
            Selection::Full => {
                let mut v = Vec::with_capacity(basis_len * (basis_len + 1) / 2);
                for row in 0..basis_len {
                    for col in row..basis_len {
                        v.push(CoeffIndex::new(row, col));
                    }
                }
                v
            }
            Selection::Coefficients(list) => {
                let mut v = Vec::with_capacity(list.len());
                for idx in list {
                    if idx.row >= basis_len || idx.col >= basis_len {
                        return Err(Error::InvalidIndex {
                            row: idx.row,
                            col: idx.col,
                            dim: basis_len,
                        });
                    }
                    v.push(idx.canonical().0);
                }
                v
            }
        };
        list.sort();
        list.dedup();
        Ok(list)
    }
}

/// Partial process matrix: estimated entries only, everything else is
/// explicitly "not estimated" (distinct from zero).
#[derive(Debug, Clone)]
pub struct ChiReconstruction {
    basis_len: usize,
    dims: (usize, usize),
    seed: u64,
    permutation: u64,
    entries: BTreeMap<(usize, usize), ChiEstimate>,
}

impl ChiReconstruction {
    pub fn basis_len(&self) -> usize {
        self.basis_len
    }

    pub fn dims(&self) -> (usize, usize) {
        self.dims
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn permutation(&self) -> u64 {
        self.permutation
    }

    /// Estimated value at `(row, col)`, following Hermitian symmetry.
    pub fn value(&self, row: usize, col: usize) -> Option<C64> {
        if row <= col {
            self.entries.get(&(row, col)).map(|e| e.value)
        } else {
            self.entries.get(&(col, row)).map(|e| e.value.conj())
        }
    }

    pub fn estimate(&self, row: usize, col: usize) -> Option<&ChiEstimate> {
        let (canon, _) = CoeffIndex::new(row, col).canonical();
        self.entries.get(&(canon.row, canon.col))
    }

    pub fn estimates(&self) -> impl Iterator<Item = &ChiEstimate> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Dense process matrix with unestimated entries filled with zero.
    /// The fill keeps selectivity out of the physics path only; serialized
    /// reports keep the distinction (`null`, never `0.0`).
    pub fn to_chi(&self, basis: &Arc<OperatorBasis>) -> Result<ChiMatrix> {
        let n = self.basis_len;
        if basis.len() != n {
            return Err(Error::BasisMismatch(format!(
                "reconstruction is over {n} basis elements, basis has {}",
                basis.len()
            )));
        }
        let mut m = zeros(n, n);
        for est in self.entries.values() {
            let CoeffIndex { row, col } = est.coeff;
            if row == col {
                // Diagonal estimates are real by construction; discard the
                // zero imaginary part so the matrix is exactly Hermitian.
                m[[row, col]] = C64::new(est.value.re, 0.0);
            } else {
                m[[row, col]] = est.value;
                m[[col, row]] = est.value.conj();
            }
        }
        ChiMatrix::new(basis.clone(), m)
    }

    /// Matrix-shaped JSON export: estimated entries as `[re, im]`, missing
    /// ones as `null`.
    pub fn matrix_json(&self) -> serde_json::Value {
        let n = self.basis_len;
        let rows: Vec<serde_json::Value> = (0..n)
            .map(|r| {
                let cols: Vec<serde_json::Value> = (0..n)
                    .map(|c| match self.value(r, c) {
                        Some(v) => serde_json::json!([v.re, v.im]),
                        None => serde_json::Value::Null,
                    })
                    .collect();
                serde_json::Value::Array(cols)
            })
            .collect();
        serde_json::json!({ "dim": n, "entries": rows })
    }

    /// Flat per-coefficient report rows.
    pub fn coefficient_reports(&self) -> Vec<CoefficientReport> {
        let d2sq = self.dims.1 * self.dims.1;
        self.entries
            .values()
            .map(|est| {
                let (i1, i2) = (est.coeff.row / d2sq, est.coeff.row % d2sq);
                let (j1, j2) = (est.coeff.col / d2sq, est.coeff.col % d2sq);
                CoefficientReport {
                    row: est.coeff.row,
                    col: est.coeff.col,
                    i1,
                    i2,
                    j1,
                    j2,
                    re: est.value.re,
                    im: est.value.im,
                    stderr: est.stderr,
                    m: est.sample_size,
                    seed: self.seed,
                    permutation: self.permutation,
                }
            })
            .collect()
    }
}

/// Serialized form of one estimated coefficient.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoefficientReport {
    pub row: usize,
    pub col: usize,
    pub i1: usize,
    pub i2: usize,
    pub j1: usize,
    pub j2: usize,
    pub re: f64,
    pub im: f64,
    pub stderr: f64,
    pub m: usize,
    pub seed: u64,
    pub permutation: u64,
}

/// Estimate a set of coefficients, one independent sample plan per
/// coefficient. Tasks run in parallel; every task derives its own RNG
/// stream, so the result does not depend on scheduling.
pub fn reconstruct<S: RateSource>(
    source: &S,
    basis: &Arc<OperatorBasis>,
    design: &ProductDesign,
    selection: &Selection,
    m: usize,
    seed: u64,
    permutation: u64,
) -> Result<ChiReconstruction> {
    let coeffs = selection.canonical_list(basis.len())?;
    let estimates: Result<Vec<ChiEstimate>> = coeffs
        .par_iter()
        .map(|&coeff| {
            let plan = sample_plan(design, coeff, m, seed, permutation)?;
            let triple = fidelity_triple(source, basis, design, &plan)?;
            Ok(chi_from_fidelities(
                &triple,
                coeff,
                design.dims(),
                plan.elements.len(),
            ))
        })
        .collect();
    let mut entries = BTreeMap::new();
    for est in estimates? {
        entries.insert((est.coeff.row, est.coeff.col), est);
    }
    Ok(ChiReconstruction {
        basis_len: basis.len(),
        dims: design.dims(),
        seed,
        permutation,
        entries,
    })
}

/// Mean fidelity of the modified channel `rho -> E(E_i^dag rho E_j)` over a
/// single-system MUB design (prime dimension path). Complex for `i != j`.
pub fn mean_fidelity_prime<C: Channel>(
    ch: &C,
    basis: &OperatorBasis,
    design: &MubDesign,
    i: usize,
    j: usize,
) -> Result<C64> {
    let d = basis.dim();
    if ch.dim() != d || design.dim() != d {
        return Err(Error::DimensionMismatch {
            context: "mean_fidelity_prime",
            expected: d,
            got: ch.dim(),
        });
    }
    let mut acc = C64::new(0.0, 0.0);
    let mut count = 0usize;
    for psi in design.iter_states() {
        let modified = crate::channels::modified_apply(ch, basis, i, j, &psi.projector())?;
        let out = modified.dot(psi.amplitudes());
        let val: C64 = psi
            .amplitudes()
            .iter()
            .zip(out.iter())
            .map(|(a, b)| a.conj() * b)
            .sum();
        acc += val;
        count += 1;
    }
    Ok(acc / count as f64)
}

/// Invert the single-system relation `F = (d chi + delta)/(d+1)`.
pub fn chi_single_from_fidelity(f: C64, d: usize, diagonal: bool) -> C64 {
    let delta = if diagonal { 1.0 } else { 0.0 };
    (f * (d as f64 + 1.0) - delta) / d as f64
}

/// Noiseless single-system reconstruction through the fidelity relation;
/// the cross-check partner of `chi_from_kraus` on prime dimensions.
pub fn reconstruct_prime_noiseless<C: Channel>(
    ch: &C,
    basis: &Arc<OperatorBasis>,
    design: &MubDesign,
) -> Result<ChiMatrix> {
    let n = basis.len();
    let d = basis.dim();
    let mut entries = zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let f = mean_fidelity_prime(ch, basis, design, i, j)?;
            let chi = chi_single_from_fidelity(f, d, i == j);
            entries[[i, j]] = chi;
            entries[[j, i]] = chi.conj();
        }
    }
    for i in 0..n {
        entries[[i, i]] = C64::new(entries[[i, i]].re, 0.0);
    }
    ChiMatrix::new(basis.clone(), entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{max_abs_diff, random_pure_state};
    use crate::channels::{
        chi_from_kraus, depolarizing, phase_slab, random_unitary_channel, KrausChannel,
    };
    use crate::designs::{mub_prime, product_basis, sylvester_basis};
    use crate::stream::derive_rng;

    fn product_basis_6() -> Arc<OperatorBasis> {
        Arc::new(product_basis(&sylvester_basis(2), &sylvester_basis(3)))
    }

    fn design_6() -> ProductDesign {
        ProductDesign::new(mub_prime(2).unwrap(), mub_prime(3).unwrap())
    }

    #[test]
    fn decompose_identical_states() {
        let mut rng = derive_rng(30, &[0]);
        let a = random_pure_state(6, &mut rng);
        let dec = decompose_outer(&a, &a);
        assert_eq!(dec.terms.len(), 1);
        assert!((dec.terms[0].0 - C64::new(1.0, 0.0)).norm() <= 1e-12);
        assert!(max_abs_diff(&dec.reassemble(), &a.projector()) <= 1e-12);
    }

    #[test]
    fn decompose_orthogonal_states_weights() {
        let a = PureState::basis_state(6, 0);
        let b = PureState::basis_state(6, 3);
        let dec = decompose_outer(&a, &b);
        assert_eq!(dec.terms.len(), 4);
        let expect = [
            C64::new(1.0, 0.0),
            C64::new(0.0, 1.0),
            C64::new(-0.5, -0.5),
            C64::new(-0.5, -0.5),
        ];
        for (k, (w, _)) in dec.terms.iter().enumerate() {
            assert!((w - expect[k]).norm() <= 1e-12);
        }
        let mut outer = zeros(6, 6);
        outer[[0, 3]] = C64::new(1.0, 0.0);
        assert!(max_abs_diff(&dec.reassemble(), &outer) <= 1e-12);
    }

    #[test]
    fn decompose_random_pairs_reassemble() {
        let mut rng = derive_rng(31, &[0]);
        for _ in 0..200 {
            let a = random_pure_state(6, &mut rng);
            let b = random_pure_state(6, &mut rng);
            let dec = decompose_outer(&a, &b);
            assert!(dec.terms.len() <= 5);
            let mut outer = zeros(6, 6);
            for i in 0..6 {
                for j in 0..6 {
                    outer[[i, j]] = a.amplitudes()[i] * b.amplitudes()[j].conj();
                }
            }
            assert!(max_abs_diff(&dec.reassemble(), &outer) <= 1e-12);
        }
    }

    #[test]
    fn decompose_near_parallel_pairs() {
        let mut rng = derive_rng(32, &[0]);
        for scale in [1e-6, 1e-9, 1e-12, 0.0] {
            let a = random_pure_state(6, &mut rng);
            let phase = C64::from_polar(1.0, 2.13);
            let noise = random_pure_state(6, &mut rng);
            let amps: CVec = a
                .amplitudes()
                .iter()
                .zip(noise.amplitudes().iter())
                .map(|(x, n)| phase * x + n * scale)
                .collect();
            let b = PureState::normalized(amps).unwrap();
            let dec = decompose_outer(&a, &b);
            let mut outer = zeros(6, 6);
            for i in 0..6 {
                for j in 0..6 {
                    outer[[i, j]] = a.amplitudes()[i] * b.amplitudes()[j].conj();
                }
            }
            assert!(max_abs_diff(&dec.reassemble(), &outer) <= 1e-12);
        }
    }

    #[test]
    fn sample_plan_is_reproducible_without_replacement() {
        let design = design_6();
        let coeff = CoeffIndex::new(3, 7);
        let p1 = sample_plan(&design, coeff, 10, 99, 1).unwrap();
        let p2 = sample_plan(&design, coeff, 10, 99, 1).unwrap();
        let p3 = sample_plan(&design, coeff, 10, 99, 2).unwrap();
        assert_eq!(p1, p2);
        assert_ne!(p1.elements, p3.elements);
        let mut sorted = p1.elements.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 10);
        assert!(sample_plan(&design, coeff, 0, 1, 0).is_err());
        assert!(sample_plan(&design, coeff, 73, 1, 0).is_err());
    }

    #[test]
    fn identity_diagonal_triple_is_unity() {
        let basis = product_basis_6();
        let design = design_6();
        let source = ExactChannelSource::new(&phase_slab(6, 0.0, &[]));
        let plan = sample_plan(&design, CoeffIndex::new(0, 0), 72, 7, 0).unwrap();
        let triple = fidelity_triple(&source, &basis, &design, &plan).unwrap();
        assert!((triple.f_tensor - C64::new(1.0, 0.0)).norm() <= 1e-12);
        assert!((triple.f1 - C64::new(1.0, 0.0)).norm() <= 1e-12);
        assert!((triple.f2 - C64::new(1.0, 0.0)).norm() <= 1e-12);
        let est = chi_from_fidelities(&triple, CoeffIndex::new(0, 0), (2, 3), 72);
        assert!((est.value - C64::new(1.0, 0.0)).norm() <= 1e-12);
    }

    #[test]
    fn zero_triple_gives_zero_off_diagonal() {
        let triple = FidelityTriple {
            f_tensor: C64::new(0.0, 0.0),
            f1: C64::new(0.0, 0.0),
            f2: C64::new(0.0, 0.0),
            var_tensor: 0.0,
            var_f1: 0.0,
            var_f2: 0.0,
        };
        let est = chi_from_fidelities(&triple, CoeffIndex::new(0, 5), (2, 3), 72);
        assert!(est.value.norm() <= 1e-15);
    }

    #[test]
    fn off_diagonal_triple_matches_direct_evaluation() {
        // The decomposition route must equal the direct trace
        // Tr[P_psi E(E_i^dag P_psi E_j)] term by term.
        let basis = product_basis_6();
        let design = design_6();
        let ch = phase_slab(6, 5.42, &[0, 1]);
        let source = ExactChannelSource::new(&ch);
        let coeff = CoeffIndex::new(1, 10);
        let plan = sample_plan(&design, coeff, 72, 11, 0).unwrap();
        let triple = fidelity_triple(&source, &basis, &design, &plan).unwrap();

        let mut direct = C64::new(0.0, 0.0);
        for &e in &plan.elements {
            let psi = design.state(e);
            let modified = crate::channels::modified_apply(
                &ch,
                &basis,
                coeff.row,
                coeff.col,
                &psi.projector(),
            )
            .unwrap();
            let out = modified.dot(psi.amplitudes());
            direct += psi
                .amplitudes()
                .iter()
                .zip(out.iter())
                .map(|(a, b)| a.conj() * b)
                .sum::<C64>();
        }
        direct /= plan.elements.len() as f64;
        assert!((triple.f_tensor - direct).norm() <= 1e-10);
    }

    #[test]
    fn full_noiseless_reconstruction_matches_kraus_expansion() {
        // Master oracle on a nontrivial unitary channel: every coefficient
        // from the fidelity route equals the direct expansion.
        let basis = product_basis_6();
        let design = design_6();
        let ch = phase_slab(6, 5.42, &[0, 1]);
        let oracle = chi_from_kraus(&ch, &basis).unwrap();
        let source = ExactChannelSource::new(&ch);
        let rec = reconstruct(&source, &basis, &design, &Selection::Full, 72, 5, 0).unwrap();
        let chi = rec.to_chi(&basis).unwrap();
        assert!(max_abs_diff(chi.entries(), oracle.entries()) <= 1e-8);
    }

    #[test]
    fn selective_single_coefficient_matches_oracle() {
        let basis = product_basis_6();
        let design = design_6();
        let ch = phase_slab(6, 5.42, &[0, 1]);
        let oracle = chi_from_kraus(&ch, &basis).unwrap();
        let source = ExactChannelSource::new(&ch);
        let coeff = CoeffIndex::new(9, 9);
        let rec = reconstruct(
            &source,
            &basis,
            &design,
            &Selection::Coefficients(vec![coeff]),
            72,
            1,
            0,
        )
        .unwrap();
        assert_eq!(rec.len(), 1);
        let got = rec.value(9, 9).unwrap();
        assert!((got - oracle.entries()[[9, 9]]).norm() <= 1e-10);
        assert!(rec.value(0, 0).is_none());
        // Unestimated entries serialize as null.
        let json = rec.matrix_json();
        assert!(json["entries"][0][0].is_null());
        assert!(!json["entries"][9][9].is_null());
    }

    #[test]
    fn mean_fidelity_identity_d2() {
        let basis = sylvester_basis(2);
        let design = mub_prime(2).unwrap();
        let ch = phase_slab(2, 0.0, &[]);
        let f = mean_fidelity_prime(&ch, &basis, &design, 0, 0).unwrap();
        assert!((f - C64::new(1.0, 0.0)).norm() <= 1e-12);
        let chi = chi_single_from_fidelity(f, 2, true);
        assert!((chi - C64::new(1.0, 0.0)).norm() <= 1e-12);
    }

    #[test]
    fn mean_fidelity_sigma_x_channel() {
        let basis = Arc::new(sylvester_basis(2));
        let design = mub_prime(2).unwrap();
        let sx = basis.element_kl(1, 0).clone();
        let ch = KrausChannel::new(2, vec![sx]).unwrap();
        let rec = reconstruct_prime_noiseless(&ch, &basis, &design).unwrap();
        let idx = basis.flat(1, 0);
        for i in 0..4 {
            let expect = if i == idx { 1.0 } else { 0.0 };
            assert!((rec.entries()[[i, i]] - C64::new(expect, 0.0)).norm() <= 1e-10);
        }
    }

    #[test]
    fn prime_path_equals_expansion_d3() {
        let basis = Arc::new(sylvester_basis(3));
        let design = mub_prime(3).unwrap();
        let mut rng = derive_rng(33, &[0]);
        let ch = random_unitary_channel(3, &mut rng);
        let via_fidelity = reconstruct_prime_noiseless(&ch, &basis, &design).unwrap();
        let via_expansion = chi_from_kraus(&ch, &basis).unwrap();
        assert!(max_abs_diff(via_fidelity.entries(), via_expansion.entries()) <= 1e-10);
    }

    #[test]
    fn estimates_are_unbiased_over_plans() {
        // Mean of size-10 subsample estimates approaches the full-design
        // value within three standard errors of the empirical spread.
        let basis = product_basis_6();
        let design = design_6();
        let ch = depolarizing(6, 0.35).unwrap();
        let source = ExactChannelSource::new(&ch);
        let coeff = CoeffIndex::new(0, 0);
        let full_plan = sample_plan(&design, coeff, 72, 0, 0).unwrap();
        let full_triple = fidelity_triple(&source, &basis, &design, &full_plan).unwrap();
        let full_value = chi_from_fidelities(&full_triple, coeff, (2, 3), 72).value;

        let runs = 200usize;
        let mut values = Vec::with_capacity(runs);
        for r in 0..runs {
            let plan = sample_plan(&design, coeff, 10, 1234, r as u64).unwrap();
            let triple = fidelity_triple(&source, &basis, &design, &plan).unwrap();
            values.push(chi_from_fidelities(&triple, coeff, (2, 3), 10).value.re);
        }
        let mean: f64 = values.iter().sum::<f64>() / runs as f64;
        let var: f64 =
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (runs as f64 - 1.0);
        let sem = (var / runs as f64).sqrt();
        assert!(
            (mean - full_value.re).abs() <= 3.0 * sem.max(1e-12),
            "mean {mean} vs full-design value {}",
            full_value.re
        );
    }
}
