//! Physicality restoration and cross-validation baselines.
//!
//! [`cptp_project`] maps an estimated (possibly unphysical) Choi state to the
//! nearest completely positive trace-preserving one in Frobenius norm, using
//! Dykstra's alternating projections between the PSD cone and the TP affine
//! set. Plain alternation only reaches a feasible point; the Dykstra
//! correction terms make the limit the actual projection.
//!
//! [`standard_qpt`] and [`qst_ls`] are the conventional tomography baselines
//! used to cross-check the selective estimator: spanning-input process
//! tomography and least-squares state tomography over the product-MUB
//! projector family.

use std::sync::Arc;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::algebra::{
    dagger, hermitian_eig, identity, kron, max_abs_diff, partial_trace, psd_sqrt, reassemble,
    symmetrize, trace, zeros, CMat, PureState, Subsystem,
};
use crate::channels::{chi_from_choi, Channel, ChannelSpec, ChiMatrix, ChoiMatrix};
use crate::designs::{OperatorBasis, ProductDesign};
use crate::error::{Error, Result};
use crate::sim::{qst_settings, run_experiment, MeasurementDataset, Role, ShotMode};

/// Convergence thresholds of the CPTP projection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionTolerances {
    /// Accepted most-negative eigenvalue of the output.
    pub psd: f64,
    /// Accepted trace-preservation residual of the output.
    pub tp: f64,
}

impl Default for ProjectionTolerances {
    fn default() -> Self {
        Self {
            psd: crate::tol::TOL.psd_clip,
            tp: crate::tol::TOL.tp_residual,
        }
    }
}

pub const DEFAULT_MAX_ITER: usize = 10_000;

/// Outcome of a CPTP projection run.
#[derive(Debug, Clone)]
pub struct ProjectionReport {
    pub input: ChoiMatrix,
    pub output: ChoiMatrix,
    pub iterations: usize,
    pub tp_residual: f64,
    pub min_eigenvalue: f64,
    pub converged: bool,
}

/// Project a Hermitian Choi state onto the CPTP set (Dykstra's algorithm
/// between the PSD cone and the TP affine set). Non-convergence within
/// `max_iter` is reported through the flag, never silently.
pub fn cptp_project(
    choi: &ChoiMatrix,
    tol: ProjectionTolerances,
    max_iter: usize,
) -> Result<ProjectionReport> {
    let d = choi.dim();
    let mut x = symmetrize(choi.entries());
    let n = x.nrows();
    let mut p = zeros(n, n);
    let mut q = zeros(n, n);

    let mut iterations = 0;
    let mut converged = false;
    let mut min_eig = f64::NEG_INFINITY;
    let mut tp_res = f64::INFINITY;
    while iterations < max_iter {
        iterations += 1;
        let (y, _) = psd_clip(&(&x + &p))?;
        p = &x + &p - &y;
        let z = tp_shift(&(&y + &q), d);
        q = &y + &q - &z;
        x = z;

        let (_, lambda_min) = psd_clip_eigenvalues(&x)?;
        min_eig = lambda_min;
        tp_res = tp_residual_of(&x, d);
        if min_eig >= -tol.psd && tp_res <= tol.tp {
            converged = true;
            break;
        }
    }

    let output = ChoiMatrix::new(d, symmetrize(&x))?;
    Ok(ProjectionReport {
        input: choi.clone(),
        output,
        iterations,
        tp_residual: tp_res,
        min_eigenvalue: min_eig,
        converged,
    })
}

/// Eigen-clip onto the PSD cone; returns the projection and the most
/// negative input eigenvalue.
fn psd_clip(m: &CMat) -> Result<(CMat, f64)> {
    let (vals, vecs) = hermitian_eig(&symmetrize(m))?;
    let min = vals[0];
    let clipped = vals.mapv(|v| v.max(0.0));
    Ok((reassemble(&clipped, &vecs), min))
}

fn psd_clip_eigenvalues(m: &CMat) -> Result<(ndarray::Array1<f64>, f64)> {
    let (vals, _) = hermitian_eig(&symmetrize(m))?;
    let min = vals[0];
    Ok((vals, min))
}

/// Orthogonal projection onto the TP affine set
/// `{C : Tr_out C = I/d}`: `C + (1/d) I (x) (I/d - Tr_out C)`.
fn tp_shift(c: &CMat, d: usize) -> CMat {
    let marginal = partial_trace(c, d, d, Subsystem::Second).unwrap();
    let target = identity(d).mapv(|z| z / d as f64);
    let delta = (&target - &marginal).mapv(|z| z / d as f64);
    c + &kron(&identity(d), &delta)
}

fn tp_residual_of(c: &CMat, d: usize) -> f64 {
    let marginal = partial_trace(c, d, d, Subsystem::Second).unwrap();
    let target = identity(d).mapv(|z| z / d as f64);
    max_abs_diff(&marginal, &target)
}

/// Uhlmann fidelity `Tr sqrt(sqrt(r1) r2 sqrt(r1))` between density
/// matrices. Inputs must be PSD within 1e-8; small negative eigenvalues are
/// clipped and the trace renormalized (logged when the adjustment is above
/// working precision).
pub fn state_fidelity(r1: &CMat, r2: &CMat) -> Result<f64> {
    let a = sanitize_density(r1)?;
    let b = sanitize_density(r2)?;
    let sa = psd_sqrt(&a)?;
    let inner = sa.dot(&b).dot(&sa);
    let (vals, _) = hermitian_eig(&symmetrize(&inner))?;
    // sqrt amplifies eigenvalue-level roundoff (sqrt(1e-16) = 1e-8); zero
    // out anything below the spectral noise floor before summing.
    let floor = vals[vals.len() - 1].max(0.0) * vals.len() as f64 * f64::EPSILON;
    Ok(vals
        .iter()
        .map(|v| if *v > floor { v.sqrt() } else { 0.0 })
        .sum())
}

fn sanitize_density(r: &CMat) -> Result<CMat> {
    let (vals, vecs) = hermitian_eig(&symmetrize(r))?;
    if vals[0] < -1e-8 {
        return Err(Error::NegativeEigenvalue(vals[0]));
    }
    let clipped = vals.mapv(|v| v.max(0.0));
    let total: f64 = clipped.iter().sum();
    if total < 1e-12 {
        return Err(Error::NotNormalized(total));
    }
    if vals[0] < -1e-12 || (total - 1.0).abs() > 1e-8 {
        log::debug!(
            "state_fidelity: clipped min eigenvalue {:.3e}, renormalized trace {:.12}",
            vals[0],
            total
        );
    }
    Ok(reassemble(&clipped.mapv(|v| v / total), &vecs))
}

/// Process fidelity: the state fidelity of the two normalized Choi states.
pub fn process_fidelity(chi_a: &ChiMatrix, chi_b: &ChiMatrix) -> Result<f64> {
    if chi_a.basis().kind() != chi_b.basis().kind()
        || chi_a.basis().dim() != chi_b.basis().dim()
    {
        return Err(Error::BasisMismatch(
            "process matrices use different operator bases".into(),
        ));
    }
    let ca = chi_a.to_choi();
    let cb = chi_b.to_choi();
    state_fidelity(ca.entries(), cb.entries())
}

/// Process fidelity directly between Choi states.
pub fn choi_fidelity(a: &ChoiMatrix, b: &ChoiMatrix) -> Result<f64> {
    state_fidelity(a.entries(), b.entries())
}

/// The `d^2` spanning input states of standard process tomography:
/// `|j>`, then `(|j>+|k>)/sqrt(2)` and `(|j>+i|k>)/sqrt(2)` for `j < k`.
pub fn spanning_inputs(d: usize) -> Vec<PureState> {
    let mut inputs = Vec::with_capacity(d * d);
    for j in 0..d {
        inputs.push(PureState::basis_state(d, j));
    }
    let s = std::f64::consts::FRAC_1_SQRT_2;
    for j in 0..d {
        for k in (j + 1)..d {
            for factor in [C64::new(s, 0.0), C64::new(0.0, s)] {
                let mut amps = ndarray::Array1::zeros(d);
                amps[j] = C64::new(s, 0.0);
                amps[k] = factor;
                inputs.push(PureState::new(amps).expect("unit by construction"));
            }
        }
    }
    inputs
}

/// Assemble the process matrix from the channel outputs on the spanning
/// inputs. `outputs[s]` is the (estimated) density matrix of input `s` in
/// the [`spanning_inputs`] order.
pub fn chi_from_spanning_outputs(
    outputs: &[CMat],
    d: usize,
    basis: &Arc<OperatorBasis>,
) -> Result<ChiMatrix> {
    let inputs = spanning_inputs(d);
    if outputs.len() != inputs.len() {
        return Err(Error::DimensionMismatch {
            context: "chi_from_spanning_outputs",
            expected: inputs.len(),
            got: outputs.len(),
        });
    }
    check_spanning_rank(&inputs, d)?;

    // Position of the x/y superposition outputs for a pair (j, k), j < k.
    let pair_base = |j: usize, k: usize| {
        let rank: usize = (0..j).map(|a| d - 1 - a).sum::<usize>() + (k - j - 1);
        d + 2 * rank
    };

    // E(|j><k|) for all j, k via the projector combination identity.
    let half = C64::new(0.5, 0.5);
    let i_unit = C64::new(0.0, 1.0);
    let mut blocks: Vec<Vec<CMat>> = vec![vec![zeros(d, d); d]; d];
    for j in 0..d {
        blocks[j][j] = outputs[j].clone();
    }
    for j in 0..d {
        for k in (j + 1)..d {
            let base = pair_base(j, k);
            let e_x = &outputs[base];
            let e_y = &outputs[base + 1];
            let combo = e_x + &e_y.mapv(|z| z * i_unit)
                - (&outputs[j] + &outputs[k]).mapv(|z| z * half);
            blocks[k][j] = dagger(&combo);
            blocks[j][k] = combo;
        }
    }

    let mut choi_entries = zeros(d * d, d * d);
    for j in 0..d {
        for k in 0..d {
            for a in 0..d {
                for b in 0..d {
                    choi_entries[[a * d + j, b * d + k]] = blocks[j][k][[a, b]] / d as f64;
                }
            }
        }
    }
    let choi = ChoiMatrix::new(d, symmetrize(&choi_entries))?;
    chi_from_choi(&choi, basis)
}

/// The spanning projectors must span Hermitian space; a deficient set means
/// the linear system for chi is underdetermined.
fn check_spanning_rank(inputs: &[PureState], d: usize) -> Result<()> {
    let n = inputs.len();
    let mut gram = zeros(n, n);
    for (s, a) in inputs.iter().enumerate() {
        for (t, b) in inputs.iter().enumerate() {
            // Tr[P_a P_b] = |<a|b>|^2.
            let ov = a.overlap(b).norm_sqr();
            gram[[s, t]] = C64::new(ov, 0.0);
        }
    }
    let (vals, _) = hermitian_eig(&gram)?;
    let max = vals[vals.len() - 1].max(1e-300);
    let rank = vals.iter().filter(|v| **v > 1e-10 * max).count();
    if rank < d * d {
        return Err(Error::RankDeficient {
            rank,
            required: d * d,
        });
    }
    Ok(())
}

/// Standard QPT with exact (noiseless) output states.
pub fn standard_qpt_exact<C: Channel>(ch: &C, basis: &Arc<OperatorBasis>) -> Result<ChiMatrix> {
    let d = ch.dim();
    if basis.dim() != d {
        return Err(Error::DimensionMismatch {
            context: "standard_qpt_exact",
            expected: d,
            got: basis.dim(),
        });
    }
    let outputs: Vec<CMat> = spanning_inputs(d)
        .iter()
        .map(|input| ch.apply(&input.projector()))
        .collect();
    chi_from_spanning_outputs(&outputs, d, basis)
}

/// Standard QPT through the simulator: every spanning input is measured
/// against all product-design projectors, each output density matrix is fit
/// by least squares, and the process matrix is assembled from the fits.
pub fn standard_qpt_simulated<C: Channel>(
    ch: &C,
    spec: &ChannelSpec,
    basis: &Arc<OperatorBasis>,
    design: &ProductDesign,
    mode: ShotMode,
    seed: u64,
) -> Result<(MeasurementDataset, ChiMatrix)> {
    let d = ch.dim();
    let inputs = spanning_inputs(d);
    let mut settings = Vec::with_capacity(inputs.len() * design.len());
    for (s, input) in inputs.iter().enumerate() {
        settings.extend(qst_settings(input, design, s as u64, Role::Sqpt));
    }
    let dataset = run_experiment(ch, spec, &settings, mode, seed)?;
    let mut outputs = Vec::with_capacity(inputs.len());
    for input in &inputs {
        let rates = design_rates(&dataset, design, input)?;
        outputs.push(qst_ls(&rates, design)?);
    }
    let chi = chi_from_spanning_outputs(&outputs, d, basis)?;
    Ok((dataset, chi))
}

/// Collect the rates of one preparation against every design projector.
pub fn design_rates(
    dataset: &MeasurementDataset,
    design: &ProductDesign,
    prep: &PureState,
) -> Result<Vec<f64>> {
    (0..design.len())
        .map(|flat| Ok(dataset.rate_for(prep, design.state(flat))?.0))
        .collect()
}

/// Least-squares state tomography over the product-design projectors.
///
/// Fits `rho = I/d + sum x_a G_a` (traceless Hermitian basis `G`) to the
/// projector expectations, then clips to the PSD cone and renormalizes the
/// trace. The 72 projectors of the 2x3 family overdetermine the 35 free
/// parameters.
pub fn qst_ls(rates: &[f64], design: &ProductDesign) -> Result<CMat> {
    let d = design.dim();
    let n = design.len();
    if rates.len() != n {
        return Err(Error::DimensionMismatch {
            context: "qst_ls",
            expected: n,
            got: rates.len(),
        });
    }
    let gens = traceless_hermitian_basis(d);
    let params = gens.len();

    // Overdetermined real system A x = b.
    let mut a = vec![vec![0.0f64; params]; n];
    let mut b = vec![0.0f64; n];
    for s in 0..n {
        let proj = design.state(s).projector();
        for (alpha, g) in gens.iter().enumerate() {
            a[s][alpha] = trace(&proj.dot(g)).re;
        }
        b[s] = rates[s] - 1.0 / d as f64;
    }

    // Normal equations solved through the eigendecomposition, with a rank
    // check for identifiability.
    let mut m = zeros(params, params);
    let mut rhs = vec![0.0f64; params];
    for s in 0..n {
        for alpha in 0..params {
            rhs[alpha] += a[s][alpha] * b[s];
            for beta in 0..params {
                m[[alpha, beta]] += C64::new(a[s][alpha] * a[s][beta], 0.0);
            }
        }
    }
    let (vals, vecs) = hermitian_eig(&m)?;
    let max = vals[vals.len() - 1].max(1e-300);
    let rank = vals.iter().filter(|v| **v > 1e-10 * max).count();
    if rank < params {
        return Err(Error::RankDeficient {
            rank,
            required: params,
        });
    }
    let mut x = vec![0.0f64; params];
    for k in 0..params {
        let lambda = vals[k];
        let mut proj = 0.0;
        for alpha in 0..params {
            proj += vecs[[alpha, k]].re * rhs[alpha];
        }
        for alpha in 0..params {
            x[alpha] += vecs[[alpha, k]].re * proj / lambda;
        }
    }

    let mut rho = identity(d).mapv(|z| z / d as f64);
    for (alpha, g) in gens.iter().enumerate() {
        rho += &g.mapv(|z| z * x[alpha]);
    }
    // Physicality: clip negative eigenvalues, renormalize.
    let (vals, vecs) = hermitian_eig(&symmetrize(&rho))?;
    let clipped = vals.mapv(|v| v.max(0.0));
    let total: f64 = clipped.iter().sum();
    Ok(reassemble(&clipped.mapv(|v| v / total), &vecs))
}

/// Real basis of traceless Hermitian matrices: symmetric and antisymmetric
/// pair generators plus diagonal differences, `d^2 - 1` in total.
fn traceless_hermitian_basis(d: usize) -> Vec<CMat> {
    let mut gens = Vec::with_capacity(d * d - 1);
    for a in 0..d {
        for b in (a + 1)..d {
            let mut x = zeros(d, d);
            x[[a, b]] = C64::new(1.0, 0.0);
            x[[b, a]] = C64::new(1.0, 0.0);
            gens.push(x);
            let mut y = zeros(d, d);
            y[[a, b]] = C64::new(0.0, -1.0);
            y[[b, a]] = C64::new(0.0, 1.0);
            gens.push(y);
        }
    }
    for k in 1..d {
        let mut z = zeros(d, d);
        z[[0, 0]] = C64::new(1.0, 0.0);
        z[[k, k]] = C64::new(-1.0, 0.0);
        gens.push(z);
    }
    gens
}
