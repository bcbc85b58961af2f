//! Cross-module oracle tests: the estimator path checked against the direct
//! Kraus expansion, the conventional tomography baseline, and the dataset
//! simulator, on channels of every supported kind.

use std::sync::Arc;

use seqpt::algebra::max_abs_diff;
use seqpt::channels::{
    chi_from_kraus, depolarizing, phase_slab, random_unitary_channel, ChannelSpec, KrausChannel,
};
use seqpt::designs::{mub_prime, product_basis, sylvester_basis, OperatorBasis, ProductDesign};
use seqpt::estimator::{
    element_plan, fidelity_triple, reconstruct, reconstruct_prime_noiseless, sample_plan,
    ChiEstimate, CoeffIndex, ExactChannelSource, Selection,
};
use seqpt::postprocess::{process_fidelity, standard_qpt_exact};
use seqpt::sim::{audit_plan, run_experiment, settings_for, DatasetSource, ShotMode};
use seqpt::stream::derive_rng;

fn fixtures() -> (Arc<OperatorBasis>, ProductDesign) {
    (
        Arc::new(product_basis(&sylvester_basis(2), &sylvester_basis(3))),
        ProductDesign::new(mub_prime(2).unwrap(), mub_prime(3).unwrap()),
    )
}

fn target_channel() -> KrausChannel {
    phase_slab(6, 5.42, &[0, 1])
}

#[test]
fn noiseless_full_reconstruction_is_exact_for_all_channel_kinds() {
    let (basis, design) = fixtures();
    let mut rng = derive_rng(1001, &[0]);
    let channels: Vec<(&str, KrausChannel)> = vec![
        ("target", target_channel()),
        ("random_unitary", random_unitary_channel(6, &mut rng)),
        ("depolarizing", depolarizing(6, 0.3).unwrap()),
    ];
    for (name, ch) in &channels {
        let oracle = chi_from_kraus(ch, &basis).unwrap();
        let source = ExactChannelSource::new(ch);
        let rec = reconstruct(&source, &basis, &design, &Selection::Full, 72, 42, 0).unwrap();
        let chi = rec.to_chi(&basis).unwrap();
        let err = max_abs_diff(chi.entries(), oracle.entries());
        assert!(err <= 1e-8, "{name}: max entrywise error {err:.3e}");
        let f = process_fidelity(&chi, &oracle).unwrap();
        assert!(f >= 1.0 - 1e-8, "{name}: process fidelity {f}");
    }
}

#[test]
fn prime_path_consistency_small_dims() {
    for d in [2usize, 3] {
        let basis = Arc::new(sylvester_basis(d));
        let design = mub_prime(d).unwrap();
        let mut rng = derive_rng(1002, &[d as u64]);
        for trial in 0..3 {
            let ch = if trial == 2 {
                depolarizing(d, 0.4).unwrap()
            } else {
                random_unitary_channel(d, &mut rng)
            };
            let via_fidelity = reconstruct_prime_noiseless(&ch, &basis, &design).unwrap();
            let via_expansion = chi_from_kraus(&ch, &basis).unwrap();
            assert!(
                max_abs_diff(via_fidelity.entries(), via_expansion.entries()) <= 1e-10,
                "d={d} trial={trial}"
            );
        }
    }
}

#[test]
fn covariance_economy_holds_exhaustively_in_d6() {
    // Every diagonal coefficient's preparation must resolve to a product of
    // design elements, for every sampled state.
    let (basis, design) = fixtures();
    for flat in 0..36 {
        let coeff = CoeffIndex::new(flat, flat);
        for element in 0..design.len() {
            let plan = element_plan(&basis, &design, coeff, element).unwrap();
            assert_eq!(plan.terms.len(), 1);
            assert!((plan.terms[0].0.re - 1.0).abs() <= 1e-12);
        }
    }
}

#[test]
fn standard_qpt_and_seqpt_agree_noiselessly() {
    // Two independent routes to the process matrix.
    let (basis, design) = fixtures();
    let ch = target_channel();
    let via_qpt = standard_qpt_exact(&ch, &basis).unwrap();
    let source = ExactChannelSource::new(&ch);
    let via_seqpt = reconstruct(&source, &basis, &design, &Selection::Full, 72, 9, 0)
        .unwrap()
        .to_chi(&basis)
        .unwrap();
    assert!(max_abs_diff(via_qpt.entries(), via_seqpt.entries()) <= 1e-7);
}

#[test]
fn shared_dataset_estimates_match_exact_path() {
    // Settings deduplicated across two coefficients still reproduce the
    // exact estimator values in the infinite-shot mode.
    let (basis, design) = fixtures();
    let ch = target_channel();
    let spec = ChannelSpec::PhaseSlab {
        dim: 6,
        phase: 5.42,
        support: vec![0, 1],
    };
    let coeffs = [CoeffIndex::new(0, 0), CoeffIndex::new(0, 9)];
    let plans: Vec<_> = coeffs
        .iter()
        .map(|&c| sample_plan(&design, c, 24, 77, 0).unwrap())
        .collect();
    let settings = settings_for(&basis, &design, &plans).unwrap();
    let ds = run_experiment(&ch, &spec, &settings, ShotMode::Exact, 77).unwrap();
    let exact = ExactChannelSource::new(&ch);
    for plan in &plans {
        audit_plan(&ds, &basis, &design, plan).unwrap();
        let from_data =
            fidelity_triple(&DatasetSource { dataset: &ds }, &basis, &design, plan).unwrap();
        let direct = fidelity_triple(&exact, &basis, &design, plan).unwrap();
        assert!((from_data.f_tensor - direct.f_tensor).norm() <= 1e-12);
        assert!((from_data.f1 - direct.f1).norm() <= 1e-12);
        assert!((from_data.f2 - direct.f2).norm() <= 1e-12);
    }
}

#[test]
fn empirical_rates_concentrate() {
    // |successes/shots - p| <= 5/sqrt(shots) for at least 99% of records.
    let (basis, design) = fixtures();
    let ch = target_channel();
    let spec = ChannelSpec::identity(6);
    let plan = sample_plan(&design, CoeffIndex::new(3, 12), 30, 5, 0).unwrap();
    let settings = settings_for(&basis, &design, &[plan]).unwrap();
    let shots = 10_000u64;
    let exact = run_experiment(&ch, &spec, &settings, ShotMode::Exact, 5).unwrap();
    let mut total = 0usize;
    let mut bad = 0usize;
    for seed in 0..5u64 {
        let noisy = run_experiment(
            &ch,
            &spec,
            &settings,
            ShotMode::Shots { per_setting: shots },
            seed,
        )
        .unwrap();
        for (e, n) in exact.records().iter().zip(noisy.records().iter()) {
            total += 1;
            if (n.rate - e.rate).abs() > 5.0 / (shots as f64).sqrt() {
                bad += 1;
            }
        }
    }
    assert!(
        (bad as f64) <= 0.01 * total as f64,
        "{bad} of {total} records out of the concentration band"
    );
}

#[test]
fn shot_noise_estimates_carry_errors_and_converge() {
    // Reconstruct a diagonal coefficient at increasing shot budgets; the
    // estimates approach the exact value and stderr shrinks.
    let (basis, design) = fixtures();
    let ch = target_channel();
    let spec = ChannelSpec::PhaseSlab {
        dim: 6,
        phase: 5.42,
        support: vec![0, 1],
    };
    let coeff = CoeffIndex::new(0, 0);
    let selection = Selection::Coefficients(vec![coeff]);
    let oracle = chi_from_kraus(&ch, &basis).unwrap().entries()[[0, 0]].re;

    let mut last_err = f64::INFINITY;
    let mut last_stderr = f64::INFINITY;
    for shots in [100u64, 10_000, 1_000_000] {
        let plan = sample_plan(&design, coeff, 72, 13, 0).unwrap();
        let settings = settings_for(&basis, &design, &[plan.clone()]).unwrap();
        let ds = run_experiment(
            &ch,
            &spec,
            &settings,
            ShotMode::Shots {
                per_setting: shots,
            },
            13,
        )
        .unwrap();
        let rec = reconstruct(
            &DatasetSource { dataset: &ds },
            &basis,
            &design,
            &selection,
            72,
            13,
            0,
        )
        .unwrap();
        let est: &ChiEstimate = rec.estimate(0, 0).unwrap();
        let err = (est.value.re - oracle).abs();
        assert!(est.stderr > 0.0);
        assert!(err <= 6.0 * est.stderr + 1e-3, "err {err} stderr {}", est.stderr);
        last_err = err.min(last_err);
        assert!(est.stderr < last_stderr);
        last_stderr = est.stderr;
    }
    assert!(last_err <= 1e-2);
}
