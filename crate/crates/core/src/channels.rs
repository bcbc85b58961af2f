//! Quantum channel representations and conversions.
//!
//! A channel lives here in one of three equivalent forms: a Kraus operator
//! list `E(rho) = sum_i A_i rho A_i^dag`, a process matrix chi relative to a
//! declared operator basis (`E(rho) = sum_mn chi_mn E_m rho E_n^dag`), or a
//! Choi state, normalized to unit trace, obtained by sending one half of a
//! maximally entangled pair through the channel. The Choi factor order is
//! fixed crate-wide as (output, input): tracing out the *first* factor of a
//! trace-preserving channel's Choi state leaves `I/d`.

use std::sync::Arc;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::algebra::{
    dagger, hermitian_eig, hermiticity_deviation, identity, max_abs_diff, partial_trace,
    random_unitary_matrix, trace, zeros, CMat, Subsystem,
};
use crate::designs::OperatorBasis;
use crate::error::{Error, Result};
use crate::stream::derive_rng;
use crate::tol::TOL;

/// Linear action of a channel on matrices (not only density matrices; the
/// off-diagonal estimator feeds non-Hermitian inputs through this).
pub trait Channel {
    fn dim(&self) -> usize;
    fn apply(&self, x: &CMat) -> CMat;
}

/// Channel in operator-sum form.
#[derive(Debug, Clone)]
pub struct KrausChannel {
    dim: usize,
    ops: Vec<CMat>,
    tp_deviation: f64,
}

impl KrausChannel {
    pub fn new(dim: usize, ops: Vec<CMat>) -> Result<Self> {
        if ops.is_empty() {
            return Err(Error::InvalidConfig("empty Kraus list".into()));
        }
        for op in &ops {
            if op.nrows() != dim || op.ncols() != dim {
                return Err(Error::DimensionMismatch {
                    context: "KrausChannel::new",
                    expected: dim,
                    got: op.nrows(),
                });
            }
        }
        let mut acc = zeros(dim, dim);
        for op in &ops {
            acc += &dagger(op).dot(op);
        }
        let tp_deviation = max_abs_diff(&acc, &identity(dim));
        Ok(Self {
            dim,
            ops,
            tp_deviation,
        })
    }

    pub fn ops(&self) -> &[CMat] {
        &self.ops
    }

    /// Max deviation of `sum_i A_i^dag A_i` from the identity.
    pub fn tp_deviation(&self) -> f64 {
        self.tp_deviation
    }

    pub fn is_trace_preserving(&self) -> bool {
        self.tp_deviation <= TOL.hermiticity
    }
}

impl Channel for KrausChannel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &CMat) -> CMat {
        let mut out = zeros(self.dim, self.dim);
        for op in &self.ops {
            out += &op.dot(x).dot(&dagger(op));
        }
        out
    }
}

/// Process matrix relative to a declared operator basis.
#[derive(Debug, Clone)]
pub struct ChiMatrix {
    basis: Arc<OperatorBasis>,
    entries: CMat,
}

impl ChiMatrix {
    pub fn new(basis: Arc<OperatorBasis>, entries: CMat) -> Result<Self> {
        let n = basis.len();
        if entries.nrows() != n || entries.ncols() != n {
            return Err(Error::DimensionMismatch {
                context: "ChiMatrix::new",
                expected: n,
                got: entries.nrows(),
            });
        }
        let deviation = hermiticity_deviation(&entries);
        if deviation > TOL.hermiticity {
            return Err(Error::NotHermitian { deviation });
        }
        Ok(Self { basis, entries })
    }

    pub fn basis(&self) -> &Arc<OperatorBasis> {
        &self.basis
    }

    pub fn entries(&self) -> &CMat {
        &self.entries
    }

    /// Residual of the trace-preserving condition
    /// `sum_mn chi_mn E_n^dag E_m = I`.
    pub fn tp_deviation(&self) -> f64 {
        let d = self.basis.dim();
        let mut acc = zeros(d, d);
        for m in 0..self.basis.len() {
            for n in 0..self.basis.len() {
                let coeff = self.entries[[m, n]];
                if coeff.norm() < 1e-15 {
                    continue;
                }
                acc += &dagger(self.basis.element(n))
                    .dot(self.basis.element(m))
                    .mapv(|z| z * coeff);
            }
        }
        max_abs_diff(&acc, &identity(d))
    }

    /// Choi state of the channel this matrix describes.
    pub fn to_choi(&self) -> ChoiMatrix {
        let d = self.basis.dim();
        let frame = choi_frame(&self.basis);
        let n = self.basis.len();
        let mut entries = zeros(d * d, d * d);
        for m in 0..n {
            for p in 0..n {
                let coeff = self.entries[[m, p]] / d as f64;
                if coeff.norm() < 1e-18 {
                    continue;
                }
                for r in 0..d * d {
                    let fm = frame[m][r];
                    if fm.norm() < 1e-18 {
                        continue;
                    }
                    for s in 0..d * d {
                        entries[[r, s]] += coeff * fm * frame[p][s].conj();
                    }
                }
            }
        }
        ChoiMatrix { dim: d, entries }
    }
}

impl Channel for ChiMatrix {
    fn dim(&self) -> usize {
        self.basis.dim()
    }

    fn apply(&self, x: &CMat) -> CMat {
        let d = self.basis.dim();
        let mut out = zeros(d, d);
        for m in 0..self.basis.len() {
            let ex = self.basis.element(m).dot(x);
            for n in 0..self.basis.len() {
                let coeff = self.entries[[m, n]];
                if coeff.norm() < 1e-15 {
                    continue;
                }
                out += &ex.dot(&dagger(self.basis.element(n))).mapv(|z| z * coeff);
            }
        }
        out
    }
}

/// Choi state, normalized to unit trace for trace-preserving channels.
#[derive(Debug, Clone)]
pub struct ChoiMatrix {
    dim: usize,
    entries: CMat,
}

impl ChoiMatrix {
    pub fn new(dim: usize, entries: CMat) -> Result<Self> {
        let n = dim * dim;
        if entries.nrows() != n || entries.ncols() != n {
            return Err(Error::DimensionMismatch {
                context: "ChoiMatrix::new",
                expected: n,
                got: entries.nrows(),
            });
        }
        let deviation = hermiticity_deviation(&entries);
        if deviation > TOL.hermiticity {
            return Err(Error::NotHermitian { deviation });
        }
        Ok(Self { dim, entries })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &CMat {
        &self.entries
    }

    /// Smallest eigenvalue (complete positivity check).
    pub fn min_eigenvalue(&self) -> Result<f64> {
        let (vals, _) = hermitian_eig(&self.entries)?;
        Ok(vals[0])
    }

    /// Max deviation of the input-side marginal from `I/d` (the
    /// trace-preservation residual in Choi form).
    pub fn tp_residual(&self) -> f64 {
        let marginal =
            partial_trace(&self.entries, self.dim, self.dim, Subsystem::Second).unwrap();
        let mixed = identity(self.dim).mapv(|z| z / self.dim as f64);
        max_abs_diff(&marginal, &mixed)
    }
}

/// Frame vectors `|e_m> = (E_m (x) I) sum_i |ii>`; they satisfy
/// `<e_m|e_n> = d delta_mn`, so the Choi state is
/// `C = (1/d) sum_mn chi_mn |e_m><e_n|` and the inversion is
/// `chi_mn = <e_m| C |e_n> / d`.
fn choi_frame(basis: &OperatorBasis) -> Vec<Vec<C64>> {
    let d = basis.dim();
    let mut frame = Vec::with_capacity(basis.len());
    for m in 0..basis.len() {
        let e = basis.element(m);
        // (E_m (x) I) sum_i |ii> has component (a, b) = E_m[a, b].
        let mut v = vec![C64::new(0.0, 0.0); d * d];
        for a in 0..d {
            for b in 0..d {
                v[a * d + b] = e[[a, b]];
            }
        }
        frame.push(v);
    }
    frame
}

/// Expand a channel given in Kraus form into a process matrix:
/// `A = sum_m a_m E_m` with `a_m = Tr(E_m^dag A)/d`, then
/// `chi = sum_kraus a a^dag`.
pub fn chi_from_kraus(ch: &KrausChannel, basis: &Arc<OperatorBasis>) -> Result<ChiMatrix> {
    let d = basis.dim();
    if ch.dim() != d {
        return Err(Error::DimensionMismatch {
            context: "chi_from_kraus",
            expected: d,
            got: ch.dim(),
        });
    }
    let n = basis.len();
    let mut entries = zeros(n, n);
    for op in ch.ops() {
        let coeffs: Vec<C64> = (0..n)
            .map(|m| trace(&dagger(basis.element(m)).dot(op)) / d as f64)
            .collect();
        for m in 0..n {
            for p in 0..n {
                entries[[m, p]] += coeffs[m] * coeffs[p].conj();
            }
        }
    }
    ChiMatrix::new(basis.clone(), entries)
}

/// Recover the process matrix from a Choi state.
pub fn chi_from_choi(choi: &ChoiMatrix, basis: &Arc<OperatorBasis>) -> Result<ChiMatrix> {
    let d = basis.dim();
    if choi.dim() != d {
        return Err(Error::DimensionMismatch {
            context: "chi_from_choi",
            expected: d,
            got: choi.dim(),
        });
    }
    let frame = choi_frame(basis);
    let n = basis.len();
    let nn = d * d;
    let mut entries = zeros(n, n);
    for m in 0..n {
        for p in 0..n {
            let mut acc = C64::new(0.0, 0.0);
            for r in 0..nn {
                let fm = frame[m][r].conj();
                if fm.norm() < 1e-18 {
                    continue;
                }
                for (s, fp) in frame[p].iter().enumerate() {
                    acc += fm * choi.entries[[r, s]] * fp;
                }
            }
            entries[[m, p]] = acc / d as f64;
        }
    }
    // Round off the hermiticity drift from accumulation before validating.
    let entries = crate::algebra::symmetrize(&entries);
    ChiMatrix::new(basis.clone(), entries)
}

/// Choi state of any channel, built by applying it to one half of the
/// maximally entangled pair: `C = (1/d) sum_ij E(|i><j|) (x) |i><j|`.
pub fn choi_of_channel<C: Channel>(ch: &C) -> ChoiMatrix {
    let d = ch.dim();
    let mut entries = zeros(d * d, d * d);
    for i in 0..d {
        for j in 0..d {
            let mut unit = zeros(d, d);
            unit[[i, j]] = C64::new(1.0, 0.0);
            let out = ch.apply(&unit);
            for a in 0..d {
                for b in 0..d {
                    entries[[a * d + i, b * d + j]] = out[[a, b]] / d as f64;
                }
            }
        }
    }
    ChoiMatrix { dim: d, entries }
}

/// The modified channel `x -> E(E_i^dag x E_j)` evaluated at `x`.
pub fn modified_apply<C: Channel>(
    ch: &C,
    basis: &OperatorBasis,
    i: usize,
    j: usize,
    x: &CMat,
) -> Result<CMat> {
    let d = basis.dim();
    if ch.dim() != d || x.nrows() != d || x.ncols() != d {
        return Err(Error::DimensionMismatch {
            context: "modified_apply",
            expected: d,
            got: x.nrows(),
        });
    }
    if i >= basis.len() || j >= basis.len() {
        return Err(Error::InvalidIndex {
            row: i,
            col: j,
            dim: basis.len(),
        });
    }
    let inner = dagger(basis.element(i)).dot(x).dot(basis.element(j));
    Ok(ch.apply(&inner))
}

/// Diagonal unitary adding a constant phase on a subset of basis states.
pub fn phase_slab(d: usize, phase: f64, support: &[usize]) -> KrausChannel {
    let mut a = identity(d);
    let factor = C64::from_polar(1.0, phase);
    for &k in support {
        assert!(k < d, "phase_slab support index {k} out of range");
        a[[k, k]] = factor;
    }
    KrausChannel::new(d, vec![a]).expect("diagonal unitary is a valid channel")
}

/// Depolarizing channel `E(rho) = (1-p) rho + p I/d`, realized with `d^2`
/// Kraus operators: `sqrt(1 - p + p/d^2) I` and `sqrt(p)/d E_kl` for
/// `(k,l) != (0,0)`. The coefficients are fixed by requiring exact agreement
/// with the analytic action (see the unit test).
pub fn depolarizing(d: usize, p: f64) -> Result<KrausChannel> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::ProbabilityRange(p));
    }
    let basis = sylvester_for(d);
    let mut ops = Vec::with_capacity(d * d);
    let c0 = (1.0 - p + p / (d * d) as f64).sqrt();
    ops.push(identity(d).mapv(|z| z * c0));
    let cs = p.sqrt() / d as f64;
    for n in 1..basis.len() {
        ops.push(basis.element(n).mapv(|z| z * cs));
    }
    KrausChannel::new(d, ops)
}

fn sylvester_for(d: usize) -> OperatorBasis {
    crate::designs::sylvester_basis(d)
}

/// Channel with a single Haar-random unitary Kraus operator.
pub fn random_unitary_channel<R: rand::Rng + ?Sized>(d: usize, rng: &mut R) -> KrausChannel {
    let u = random_unitary_matrix(d, rng);
    KrausChannel::new(d, vec![u]).expect("unitary is a valid channel")
}

/// Declarative channel description used in configs and dataset headers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ChannelSpec {
    PhaseSlab {
        dim: usize,
        phase: f64,
        support: Vec<usize>,
    },
    Depolarizing {
        dim: usize,
        p: f64,
    },
    RandomUnitary {
        dim: usize,
        seed: u64,
    },
    Kraus {
        dim: usize,
        /// Row-major matrices; complex numbers serialize as `[re, im]`.
        ops: Vec<Vec<Vec<C64>>>,
    },
}

impl ChannelSpec {
    pub fn identity(dim: usize) -> Self {
        ChannelSpec::PhaseSlab {
            dim,
            phase: 0.0,
            support: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ChannelSpec::PhaseSlab { dim, .. }
            | ChannelSpec::Depolarizing { dim, .. }
            | ChannelSpec::RandomUnitary { dim, .. }
            | ChannelSpec::Kraus { dim, .. } => *dim,
        }
    }

    pub fn build(&self) -> Result<KrausChannel> {
        match self {
            ChannelSpec::PhaseSlab { dim, phase, support } => {
                for &k in support {
                    if k >= *dim {
                        return Err(Error::InvalidConfig(format!(
                            "phase_slab support index {k} out of range for dim {dim}"
                        )));
                    }
                }
                Ok(phase_slab(*dim, *phase, support))
            }
            ChannelSpec::Depolarizing { dim, p } => depolarizing(*dim, *p),
            ChannelSpec::RandomUnitary { dim, seed } => {
                let mut rng = derive_rng(*seed, &[0x75]);
                Ok(random_unitary_channel(*dim, &mut rng))
            }
            ChannelSpec::Kraus { dim, ops } => {
                let mut mats = Vec::with_capacity(ops.len());
                for rows in ops {
                    let mut m = zeros(*dim, *dim);
                    if rows.len() != *dim {
                        return Err(Error::InvalidConfig("kraus op has wrong row count".into()));
                    }
                    for (i, row) in rows.iter().enumerate() {
                        if row.len() != *dim {
                            return Err(Error::InvalidConfig(
                                "kraus op has wrong column count".into(),
                            ));
                        }
                        for (j, z) in row.iter().enumerate() {
                            m[[i, j]] = *z;
                        }
                    }
                    mats.push(m);
                }
                KrausChannel::new(*dim, mats)
            }
        }
    }
}

/// Upper-triangle (independent Hermitian entry) support of a process matrix:
/// indices `(m, n)` with `m <= n` and `|chi_mn|` above the threshold.
pub fn support_indices(chi: &ChiMatrix, threshold: f64) -> Vec<(usize, usize)> {
    let n = chi.basis().len();
    let mut out = Vec::new();
    for m in 0..n {
        for p in m..n {
            if chi.entries()[[m, p]].norm() > threshold {
                out.push((m, p));
            }
        }
    }
    out
}
