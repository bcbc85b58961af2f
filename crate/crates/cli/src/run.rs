//! The three experiment commands: full/selective reconstruction, the
//! sampling-efficiency sweep, and the state-tomography cross-validation
//! histogram. Every command echoes its configuration (plus hash and seed)
//! into each output file, and re-running with the same configuration
//! produces byte-identical outputs.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;

use seqpt::algebra::{random_pure_state, zeros, PureState};
use seqpt::channels::{
    chi_from_choi, chi_from_kraus, support_indices, Channel, ChannelSpec, ChiMatrix, KrausChannel,
};
use seqpt::designs::{mub_prime, product_basis, OperatorBasis, ProductDesign};
use seqpt::error::{Error, Result};
use seqpt::estimator::{
    reconstruct, sample_plan, ChiReconstruction, CoeffIndex, ExactChannelSource, Selection,
};
use seqpt::postprocess::{
    choi_fidelity, cptp_project, design_rates, qst_ls, standard_qpt_simulated, state_fidelity,
    ProjectionReport, ProjectionTolerances, DEFAULT_MAX_ITER,
};
use seqpt::sim::{
    audit_plan, qst_settings, run_experiment, settings_for, DatasetSource, MeasurementDataset,
    Role,
};
use seqpt::stream::{derive_rng, derive_seed};

use crate::config::{CoeffSelection, ExperimentConfig, Mode};
use crate::output::{fmt_f64, write_json, CsvFile};

/// Everything a run needs, built once from the configuration.
pub struct Bench {
    pub basis: Arc<OperatorBasis>,
    pub design: ProductDesign,
    pub channel: KrausChannel,
    pub spec: ChannelSpec,
    pub target_chi: ChiMatrix,
}

pub fn bench(config: &ExperimentConfig) -> Result<Bench> {
    config.validate()?;
    let (d1, d2) = config.dims;
    let b1 = seqpt::designs::sylvester_basis(d1);
    let b2 = seqpt::designs::sylvester_basis(d2);
    let basis = Arc::new(product_basis(&b1, &b2));
    let design = ProductDesign::new(mub_prime(d1)?, mub_prime(d2)?);
    let channel = config.channel.build()?;
    let target_chi = chi_from_kraus(&channel, &basis)?;
    Ok(Bench {
        basis,
        design,
        channel,
        spec: config.channel.clone(),
        target_chi,
    })
}

fn selection(config: &ExperimentConfig, bench: &Bench) -> Result<Selection> {
    Ok(match &config.coefficients {
        CoeffSelection::Full => Selection::Full,
        CoeffSelection::Support => {
            let support = support_indices(&bench.target_chi, 1e-10);
            Selection::Coefficients(
                support
                    .into_iter()
                    .map(|(r, c)| CoeffIndex::new(r, c))
                    .collect(),
            )
        }
        CoeffSelection::Indices { list } => Selection::Coefficients(
            list.iter().map(|&(r, c)| CoeffIndex::new(r, c)).collect(),
        ),
    })
}

/// One reconstruction pass: simulate (unless noiseless), estimate, and
/// return the dataset (when one was taken) with the partial matrix.
fn reconstruct_once(
    bench: &Bench,
    selection: &Selection,
    m: usize,
    master_seed: u64,
    permutation: u64,
    experiment_seed: u64,
    mode: Mode,
) -> Result<(Option<MeasurementDataset>, ChiReconstruction)> {
    match mode {
        Mode::Noiseless => {
            let source = ExactChannelSource::new(&bench.channel);
            let rec = reconstruct(
                &source,
                &bench.basis,
                &bench.design,
                selection,
                m,
                master_seed,
                permutation,
            )?;
            Ok((None, rec))
        }
        Mode::Shots { .. } => {
            let coeffs = selection.canonical_list(bench.basis.len())?;
            let plans: Result<Vec<_>> = coeffs
                .iter()
                .map(|&c| sample_plan(&bench.design, c, m, master_seed, permutation))
                .collect();
            let plans = plans?;
            let settings = settings_for(&bench.basis, &bench.design, &plans)?;
            let dataset = run_experiment(
                &bench.channel,
                &bench.spec,
                &settings,
                mode.shot_mode(),
                experiment_seed,
            )?;
            for plan in &plans {
                audit_plan(&dataset, &bench.basis, &bench.design, plan)?;
            }
            let rec = reconstruct(
                &DatasetSource { dataset: &dataset },
                &bench.basis,
                &bench.design,
                selection,
                m,
                master_seed,
                permutation,
            )?;
            Ok((Some(dataset), rec))
        }
    }
}

fn project_reconstruction(
    bench: &Bench,
    rec: &ChiReconstruction,
) -> Result<(ChiMatrix, ProjectionReport)> {
    let raw = rec.to_chi(&bench.basis)?;
    let report = cptp_project(&raw.to_choi(), ProjectionTolerances::default(), DEFAULT_MAX_ITER)?;
    let projected = chi_from_choi(&report.output, &bench.basis)?;
    Ok((projected, report))
}

pub struct ReconstructOutcome {
    pub out_dir: PathBuf,
    pub reconstruction: ChiReconstruction,
    pub chi_projected: ChiMatrix,
    pub fidelity_vs_target: f64,
    pub projection: ProjectionSummary,
    pub settings_count: Option<usize>,
    pub audits_passed: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct ProjectionSummary {
    pub iterations: usize,
    pub converged: bool,
    pub tp_residual: f64,
    pub min_eigenvalue: f64,
}

impl From<&ProjectionReport> for ProjectionSummary {
    fn from(r: &ProjectionReport) -> Self {
        Self {
            iterations: r.iterations,
            converged: r.converged,
            tp_residual: r.tp_residual,
            min_eigenvalue: r.min_eigenvalue,
        }
    }
}

/// Reconstruct the configured coefficients, restore physicality, compare to
/// the declared target, and write the report, matrix exports, and CSVs.
pub fn cmd_reconstruct(config: &ExperimentConfig) -> Result<ReconstructOutcome> {
    let bench = bench(config)?;
    let selection = selection(config, &bench)?;
    let (dataset, rec) = reconstruct_once(
        &bench,
        &selection,
        config.m,
        config.master_seed,
        0,
        derive_seed(config.master_seed, &[0x7265]),
        config.mode,
    )?;
    let (chi_projected, report) = project_reconstruction(&bench, &rec)?;
    let fidelity = seqpt::postprocess::process_fidelity(&chi_projected, &bench.target_chi)?;

    let out_dir = &config.out_dir;
    let hash = config.hash();
    let seed = config.master_seed;

    let mut dataset_roundtrip_ok = None;
    let mut settings_count = None;
    if let Some(ds) = &dataset {
        let path = out_dir.join("dataset.jsonl");
        ds.store(&path)?;
        let reloaded = MeasurementDataset::load(&path)?;
        let tmp = out_dir.join("dataset.check.jsonl");
        reloaded.store(&tmp)?;
        let same = std::fs::read(&path).ok() == std::fs::read(&tmp).ok();
        std::fs::remove_file(&tmp).ok();
        dataset_roundtrip_ok = Some(same);
        settings_count = Some(ds.len());
    }

    // Matrix exports: the raw partial estimate (nulls preserved) and the
    // dense post-projection matrix.
    let mut estimate_json = rec.matrix_json();
    estimate_json["schema"] = serde_json::json!("seqpt-chi-partial/1");
    estimate_json["config_hash"] = serde_json::json!(hash);
    estimate_json["master_seed"] = serde_json::json!(seed);
    write_json(&out_dir.join("chi_estimate.json"), &estimate_json)?;
    write_json(
        &out_dir.join("chi_projected.json"),
        &chi_matrix_json(&chi_projected, &hash, seed),
    )?;

    let mut abs_csv = CsvFile::new(
        "chi-abs",
        1,
        &hash,
        seed,
        &["row", "col", "abs_projected", "abs_estimate"],
    );
    let n = bench.basis.len();
    for row in 0..n {
        for col in 0..n {
            let est = rec
                .value(row, col)
                .map(|v| fmt_f64(v.norm()))
                .unwrap_or_default();
            abs_csv.row(&[
                row.to_string(),
                col.to_string(),
                fmt_f64(chi_projected.entries()[[row, col]].norm()),
                est,
            ]);
        }
    }
    abs_csv.write(&out_dir.join("chi_abs.csv"))?;

    let audits_passed = report.converged
        && report.tp_residual <= 1e-8
        && report.min_eigenvalue >= -1e-10
        && fidelity.is_finite()
        && dataset_roundtrip_ok.unwrap_or(true);

    let mut summary = CsvFile::new(
        "reconstruct-summary",
        1,
        &hash,
        seed,
        &[
            "fidelity_vs_target",
            "estimated_coefficients",
            "settings_count",
            "projection_iterations",
            "projection_converged",
            "tp_residual",
            "min_eigenvalue",
            "audits_passed",
        ],
    );
    summary.row(&[
        fmt_f64(fidelity),
        rec.len().to_string(),
        settings_count.map(|c| c.to_string()).unwrap_or_default(),
        report.iterations.to_string(),
        report.converged.to_string(),
        fmt_f64(report.tp_residual),
        fmt_f64(report.min_eigenvalue),
        audits_passed.to_string(),
    ]);
    summary.write(&out_dir.join("summary.csv"))?;

    let report_json = serde_json::json!({
        "schema": "seqpt-reconstruct-report/1",
        "config_hash": hash,
        "master_seed": seed,
        "config": serde_json::to_value(config).expect("config serializes"),
        "fidelity_vs_target": fidelity,
        "projection": {
            "iterations": report.iterations,
            "converged": report.converged,
            "tp_residual": report.tp_residual,
            "min_eigenvalue": report.min_eigenvalue,
        },
        "settings_count": settings_count,
        "dataset": dataset.as_ref().map(|_| "dataset.jsonl"),
        "audits": {
            "projection_converged": report.converged,
            "tp_residual_ok": report.tp_residual <= 1e-8,
            "psd_ok": report.min_eigenvalue >= -1e-10,
            "dataset_roundtrip_ok": dataset_roundtrip_ok,
            "passed": audits_passed,
        },
        "coefficients": rec.coefficient_reports(),
    });
    write_json(&out_dir.join("report.json"), &report_json)?;

    Ok(ReconstructOutcome {
        out_dir: out_dir.clone(),
        reconstruction: rec,
        chi_projected,
        fidelity_vs_target: fidelity,
        projection: ProjectionSummary::from(&report),
        settings_count,
        audits_passed,
    })
}

fn chi_matrix_json(chi: &ChiMatrix, hash: &str, seed: u64) -> serde_json::Value {
    let n = chi.entries().nrows();
    let rows: Vec<serde_json::Value> = (0..n)
        .map(|r| {
            let cols: Vec<serde_json::Value> = (0..n)
                .map(|c| {
                    let v = chi.entries()[[r, c]];
                    serde_json::json!([v.re, v.im])
                })
                .collect();
            serde_json::Value::Array(cols)
        })
        .collect();
    serde_json::json!({
        "schema": "seqpt-chi/1",
        "config_hash": hash,
        "master_seed": seed,
        "dim": n,
        "entries": rows,
    })
}

/// Parse a dense or partial chi JSON export; missing entries load as zero.
pub fn load_chi_json(path: &Path, basis: &Arc<OperatorBasis>) -> Result<ChiMatrix> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    let n = value["dim"].as_u64().unwrap_or(0) as usize;
    if n != basis.len() {
        return Err(Error::BasisMismatch(format!(
            "chi file has dim {n}, expected {}",
            basis.len()
        )));
    }
    let mut m = zeros(n, n);
    let entries = value["entries"]
        .as_array()
        .ok_or_else(|| Error::InvalidConfig(format!("{}: no entries array", path.display())))?;
    for (r, row) in entries.iter().enumerate() {
        for (c, cell) in row
            .as_array()
            .ok_or_else(|| Error::InvalidConfig("bad chi row".into()))?
            .iter()
            .enumerate()
        {
            if cell.is_null() {
                continue;
            }
            let re = cell[0].as_f64().unwrap_or(0.0);
            let im = cell[1].as_f64().unwrap_or(0.0);
            m[[r, c]] = num_complex::Complex64::new(re, im);
        }
    }
    ChiMatrix::new(basis.clone(), m)
}

pub struct EfficiencyPoint {
    pub m: usize,
    pub settings_count: usize,
    /// Per-repetition fidelities `(target, identity, alt)`.
    pub per_run: Vec<(f64, f64, f64)>,
    pub mean: (f64, f64, f64),
    pub std: (f64, f64, f64),
}

pub struct EfficiencyOutcome {
    pub out_dir: PathBuf,
    pub points: Vec<EfficiencyPoint>,
    pub coefficients: usize,
    pub audits_passed: bool,
}

/// Sweep the per-coefficient sample size over the configured grid, with
/// fresh random subsets per repetition, and compare each projected
/// reconstruction against the target, the identity, and the detuned
/// comparison channel.
pub fn cmd_efficiency_curve(config: &ExperimentConfig) -> Result<EfficiencyOutcome> {
    let bench = bench(config)?;
    let selection = selection(config, &bench)?;
    let n_coeffs = selection.canonical_list(bench.basis.len())?.len();
    let alt_spec = config.alt_channel_spec()?;

    let target_choi = bench.target_chi.to_choi();
    let identity_choi = chi_from_kraus(&ChannelSpec::identity(config.dim()).build()?, &bench.basis)?
        .to_choi();
    let alt_choi = chi_from_kraus(&alt_spec.build()?, &bench.basis)?.to_choi();

    let mut grid = config.m_grid.clone();
    grid.sort_unstable();
    grid.dedup();

    let tasks: Vec<(usize, usize)> = grid
        .iter()
        .enumerate()
        .flat_map(|(mi, _)| (0..config.repetitions).map(move |rep| (mi, rep)))
        .collect();

    struct RunResult {
        mi: usize,
        rep: usize,
        fidelities: (f64, f64, f64),
        converged: bool,
    }

    let results: Result<Vec<RunResult>> = tasks
        .par_iter()
        .map(|&(mi, rep)| {
            let m = grid[mi];
            let experiment_seed =
                derive_seed(config.master_seed, &[0xeff1, mi as u64, rep as u64]);
            let (_, rec) = reconstruct_once(
                &bench,
                &selection,
                m,
                config.master_seed,
                rep as u64,
                experiment_seed,
                config.mode,
            )?;
            let (chi_projected, report) = project_reconstruction(&bench, &rec)?;
            let choi = chi_projected.to_choi();
            let f_target = choi_fidelity(&choi, &target_choi)?;
            let f_identity = choi_fidelity(&choi, &identity_choi)?;
            let f_alt = choi_fidelity(&choi, &alt_choi)?;
            Ok(RunResult {
                mi,
                rep,
                fidelities: (f_target, f_identity, f_alt),
                converged: report.converged,
            })
        })
        .collect();
    let results = results?;
    let audits_passed = results.iter().all(|r| r.converged);

    let mut points: Vec<EfficiencyPoint> = grid
        .iter()
        .map(|&m| EfficiencyPoint {
            m,
            settings_count: n_coeffs * m,
            per_run: vec![(0.0, 0.0, 0.0); config.repetitions],
            mean: (0.0, 0.0, 0.0),
            std: (0.0, 0.0, 0.0),
        })
        .collect();
    for r in &results {
        points[r.mi].per_run[r.rep] = r.fidelities;
    }
    for p in &mut points {
        let n = p.per_run.len() as f64;
        let mean = |f: fn(&(f64, f64, f64)) -> f64, runs: &[(f64, f64, f64)]| {
            runs.iter().map(f).sum::<f64>() / n
        };
        let std = |f: fn(&(f64, f64, f64)) -> f64, runs: &[(f64, f64, f64)], mu: f64| {
            if runs.len() < 2 {
                0.0
            } else {
                (runs.iter().map(|r| (f(r) - mu).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            }
        };
        let mu = (
            mean(|r| r.0, &p.per_run),
            mean(|r| r.1, &p.per_run),
            mean(|r| r.2, &p.per_run),
        );
        p.std = (
            std(|r| r.0, &p.per_run, mu.0),
            std(|r| r.1, &p.per_run, mu.1),
            std(|r| r.2, &p.per_run, mu.2),
        );
        p.mean = mu;
    }

    let hash = config.hash();
    let seed = config.master_seed;
    let out_dir = &config.out_dir;

    let mut points_csv = CsvFile::new(
        "efficiency-points",
        1,
        &hash,
        seed,
        &[
            "settings_count",
            "m",
            "rep",
            "fidelity_target",
            "fidelity_identity",
            "fidelity_alt",
        ],
    );
    for p in &points {
        for (rep, f) in p.per_run.iter().enumerate() {
            points_csv.row(&[
                p.settings_count.to_string(),
                p.m.to_string(),
                rep.to_string(),
                fmt_f64(f.0),
                fmt_f64(f.1),
                fmt_f64(f.2),
            ]);
        }
    }
    points_csv.write(&out_dir.join("efficiency_points.csv"))?;

    let mut curve_csv = CsvFile::new(
        "efficiency-curve",
        1,
        &hash,
        seed,
        &[
            "settings_count",
            "m",
            "target_label",
            "fidelity_mean",
            "fidelity_std",
        ],
    );
    for p in &points {
        for (label, mu, sd) in [
            ("target", p.mean.0, p.std.0),
            ("identity", p.mean.1, p.std.1),
            ("alt", p.mean.2, p.std.2),
        ] {
            curve_csv.row(&[
                p.settings_count.to_string(),
                p.m.to_string(),
                label.to_string(),
                fmt_f64(mu),
                fmt_f64(sd),
            ]);
        }
    }
    curve_csv.write(&out_dir.join("efficiency_curve.csv"))?;

    let report_json = serde_json::json!({
        "schema": "seqpt-efficiency-report/1",
        "config_hash": hash,
        "master_seed": seed,
        "config": serde_json::to_value(config).expect("config serializes"),
        "coefficients": n_coeffs,
        "audits": { "all_projections_converged": audits_passed, "passed": audits_passed },
    });
    write_json(&out_dir.join("efficiency_report.json"), &report_json)?;

    Ok(EfficiencyOutcome {
        out_dir: out_dir.clone(),
        points,
        coefficients: n_coeffs,
        audits_passed,
    })
}

pub struct QstOutcome {
    pub out_dir: PathBuf,
    pub fidelities_seqpt: Vec<f64>,
    pub fidelities_sqpt: Vec<f64>,
    pub mean_seqpt: f64,
    pub std_seqpt: f64,
    pub mean_sqpt: f64,
    pub std_sqpt: f64,
    pub audits_passed: bool,
}

/// Draw random input states, push them through the (simulated) channel,
/// tomograph the outputs, and compare with the predictions of previously
/// reconstructed process matrices (selective and standard).
pub fn cmd_qst_histogram(config: &ExperimentConfig) -> Result<QstOutcome> {
    let bench = bench(config)?;
    let seqpt_path = config.reconstruction.as_ref().ok_or_else(|| {
        Error::InvalidConfig(
            "reconstruction: missing prior reconstruction (run `reconstruct` first and point \
             `reconstruction` at its chi_projected.json)"
                .into(),
        )
    })?;
    let chi_seqpt = load_chi_json(seqpt_path, &bench.basis)?;

    let chi_sqpt = match &config.sqpt_reconstruction {
        Some(path) => load_chi_json(path, &bench.basis)?,
        None => {
            let (_, raw) = standard_qpt_simulated(
                &bench.channel,
                &bench.spec,
                &bench.basis,
                &bench.design,
                config.mode.shot_mode(),
                derive_seed(config.master_seed, &[0x5150]),
            )?;
            let report =
                cptp_project(&raw.to_choi(), ProjectionTolerances::default(), DEFAULT_MAX_ITER)?;
            chi_from_choi(&report.output, &bench.basis)?
        }
    };

    // Random input states and their tomography settings, one shared run.
    let states: Vec<PureState> = (0..config.qst_states)
        .map(|s| {
            let mut rng = derive_rng(config.master_seed, &[0x5153, s as u64]);
            random_pure_state(config.dim(), &mut rng)
        })
        .collect();
    let mut settings = Vec::with_capacity(states.len() * bench.design.len());
    for (s, state) in states.iter().enumerate() {
        settings.extend(qst_settings(state, &bench.design, s as u64, Role::Qst));
    }
    let dataset = run_experiment(
        &bench.channel,
        &bench.spec,
        &settings,
        config.mode.shot_mode(),
        derive_seed(config.master_seed, &[0x5154]),
    )?;

    let fidelities: Result<Vec<(f64, f64)>> = states
        .par_iter()
        .map(|state| {
            let rates = design_rates(&dataset, &bench.design, state)?;
            let rho_out = qst_ls(&rates, &bench.design)?;
            let p_in = state.projector();
            let f_seqpt = state_fidelity(&rho_out, &chi_seqpt.apply(&p_in))?;
            let f_sqpt = state_fidelity(&rho_out, &chi_sqpt.apply(&p_in))?;
            Ok((f_seqpt, f_sqpt))
        })
        .collect();
    let fidelities = fidelities?;
    let (fidelities_seqpt, fidelities_sqpt): (Vec<f64>, Vec<f64>) =
        fidelities.into_iter().unzip();

    let stats = |v: &[f64]| {
        let n = v.len() as f64;
        let mu = v.iter().sum::<f64>() / n;
        let sd = if v.len() < 2 {
            0.0
        } else {
            (v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        (mu, sd)
    };
    let (mean_seqpt, std_seqpt) = stats(&fidelities_seqpt);
    let (mean_sqpt, std_sqpt) = stats(&fidelities_sqpt);
    let audits_passed = fidelities_seqpt.iter().chain(&fidelities_sqpt).all(|f| {
        f.is_finite() && (-1e-9..=1.0 + 1e-9).contains(f)
    });

    let hash = config.hash();
    let seed = config.master_seed;
    let out_dir = &config.out_dir;

    let mut hist_csv = CsvFile::new(
        "qst-histogram",
        1,
        &hash,
        seed,
        &["state", "fidelity_seqpt", "fidelity_sqpt"],
    );
    for (s, (fa, fb)) in fidelities_seqpt.iter().zip(&fidelities_sqpt).enumerate() {
        hist_csv.row(&[s.to_string(), fmt_f64(*fa), fmt_f64(*fb)]);
    }
    hist_csv.write(&out_dir.join("qst_histogram.csv"))?;

    let mut summary_csv = CsvFile::new(
        "qst-summary",
        1,
        &hash,
        seed,
        &[
            "states",
            "mean_seqpt",
            "std_seqpt",
            "mean_sqpt",
            "std_sqpt",
        ],
    );
    summary_csv.row(&[
        config.qst_states.to_string(),
        fmt_f64(mean_seqpt),
        fmt_f64(std_seqpt),
        fmt_f64(mean_sqpt),
        fmt_f64(std_sqpt),
    ]);
    summary_csv.write(&out_dir.join("qst_summary.csv"))?;

    let report_json = serde_json::json!({
        "schema": "seqpt-qst-report/1",
        "config_hash": hash,
        "master_seed": seed,
        "config": serde_json::to_value(config).expect("config serializes"),
        "mean_seqpt": mean_seqpt,
        "std_seqpt": std_seqpt,
        "mean_sqpt": mean_sqpt,
        "std_sqpt": std_sqpt,
        "audits": { "fidelities_in_range": audits_passed, "passed": audits_passed },
    });
    write_json(&out_dir.join("qst_report.json"), &report_json)?;

    Ok(QstOutcome {
        out_dir: out_dir.clone(),
        fidelities_seqpt,
        fidelities_sqpt,
        mean_seqpt,
        std_seqpt,
        mean_sqpt,
        std_sqpt,
        audits_passed,
    })
}
