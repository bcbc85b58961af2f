//! Stand-in for the measurement bench: turns (preparation, projector) pairs
//! into shot-limited counts and persists the resulting datasets.
//!
//! A "measurement setting" is one such pair executed with a shot budget.
//! Settings are deduplicated on the exact bit patterns of the two states, so
//! a projector that serves several estimator roles (the survival projector
//! also appears in both marginal lists) is measured once and its counts are
//! shared, the same way a bench reuses one dataset for every coefficient.
//!
//! Counting statistics are binomial: the bench normalizes by total counts,
//! and a binomial successes/shots converges to the same estimator as Poisson
//! rates do.

use std::collections::HashMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use num_complex::Complex64 as C64;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::algebra::PureState;
use crate::channels::{Channel, ChannelSpec};
use crate::designs::{OperatorBasis, ProductDesign};
use crate::error::{Error, Result};
use crate::estimator::{element_plan, ExactChannelSource, RateSource, SamplePlan};

pub const DATASET_SCHEMA_VERSION: u32 = 1;

/// Estimator role a setting was generated for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    #[serde(rename = "f_tensor")]
    FTensor,
    #[serde(rename = "f1-marginal")]
    F1Marginal,
    #[serde(rename = "f2-marginal")]
    F2Marginal,
    #[serde(rename = "qst")]
    Qst,
    #[serde(rename = "sqpt")]
    Sqpt,
}

/// One projective measurement: prepare `prep`, send it through the channel,
/// project onto `proj`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Setting {
    pub tag: Role,
    pub prep: PureState,
    pub proj: PureState,
    /// Provenance: `[coeff_row, coeff_col, element, term, slot]` for SEQPT
    /// roles, `[input_index, projector_index]` for qst/sqpt.
    pub indices: Vec<u64>,
}

impl Setting {
    pub fn key(&self) -> (Vec<u8>, Vec<u8>) {
        (self.prep.key_bytes(), self.proj.key_bytes())
    }
}

/// Shot budget of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShotMode {
    /// Store exact probabilities as rates (infinite-shot limit).
    Exact,
    /// Binomial counts with the given number of shots per setting.
    Shots { per_setting: u64 },
}

/// A measured setting: counts and the empirical rate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SettingRecord {
    #[serde(flatten)]
    pub setting: Setting,
    pub shots: u64,
    pub successes: u64,
    pub rate: f64,
}

/// Persisted measurement run.
#[derive(Debug, Clone)]
pub struct MeasurementDataset {
    pub channel: ChannelSpec,
    pub seed: u64,
    pub schema_version: u32,
    pub mode: ShotMode,
    records: Vec<SettingRecord>,
    index: HashMap<(Vec<u8>, Vec<u8>), usize>,
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    schema_version: u32,
    channel: ChannelSpec,
    seed: u64,
    mode: ShotMode,
    records: usize,
}

impl MeasurementDataset {
    fn from_parts(
        channel: ChannelSpec,
        seed: u64,
        mode: ShotMode,
        records: Vec<SettingRecord>,
    ) -> Self {
        let mut index = HashMap::with_capacity(records.len());
        for (i, rec) in records.iter().enumerate() {
            index.entry(rec.setting.key()).or_insert(i);
        }
        Self {
            channel,
            seed,
            schema_version: DATASET_SCHEMA_VERSION,
            mode,
            records,
            index,
        }
    }

    pub fn records(&self) -> &[SettingRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Empirical rate and its binomial variance estimate for a
    /// (preparation, projector) pair.
    pub fn rate_for(&self, prep: &PureState, proj: &PureState) -> Result<(f64, f64)> {
        let key = (prep.key_bytes(), proj.key_bytes());
        let idx = self.index.get(&key).ok_or_else(|| {
            Error::MissingSetting(format!(
                "no record for prep[0]={:?} proj[0]={:?}",
                prep.amplitudes()[0],
                proj.amplitudes()[0]
            ))
        })?;
        let rec = &self.records[*idx];
        let variance = match self.mode {
            ShotMode::Exact => 0.0,
            ShotMode::Shots { .. } => {
                let n = rec.shots as f64;
                rec.rate * (1.0 - rec.rate) / n
            }
        };
        Ok((rec.rate, variance))
    }

    /// Serialize as JSON lines: a header line, then one line per record.
    pub fn store(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        let header = DatasetHeader {
            schema_version: self.schema_version,
            channel: self.channel.clone(),
            seed: self.seed,
            mode: self.mode,
            records: self.records.len(),
        };
        let json_err = |source| Error::Json {
            path: path.to_path_buf(),
            source,
        };
        writeln!(out, "{}", serde_json::to_string(&header).map_err(json_err)?).unwrap();
        for rec in &self.records {
            writeln!(out, "{}", serde_json::to_string(rec).map_err(json_err)?).unwrap();
        }
        fs::write(path, out).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let json_err = |source| Error::Json {
            path: path.to_path_buf(),
            source,
        };
        let mut lines = text.lines();
        let header: DatasetHeader = serde_json::from_str(
            lines
                .next()
                .ok_or_else(|| Error::MissingSetting("empty dataset file".into()))?,
        )
        .map_err(json_err)?;
        let mut records = Vec::with_capacity(header.records);
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(line).map_err(json_err)?);
        }
        if records.len() != header.records {
            return Err(Error::MissingSetting(format!(
                "dataset header promises {} records, file has {}",
                header.records,
                records.len()
            )));
        }
        Ok(Self::from_parts(
            header.channel,
            header.seed,
            header.mode,
            records,
        ))
    }
}

/// Rate source backed by measured counts.
pub struct DatasetSource<'a> {
    pub dataset: &'a MeasurementDataset,
}

impl RateSource for DatasetSource<'_> {
    fn rates(&self, prep: &PureState, projs: &[&PureState]) -> Result<Vec<(f64, f64)>> {
        projs
            .iter()
            .map(|proj| self.dataset.rate_for(prep, proj))
            .collect()
    }
}

/// Exact projection probability `<proj| E(|prep><prep|) |proj>`, clipped to
/// `[0, 1]`; values outside `[-1e-9, 1+1e-9]` before clipping signal a
/// non-physical channel.
pub fn survival_probability<C: Channel>(ch: &C, setting: &Setting) -> Result<f64> {
    if setting.prep.dim() != ch.dim() || setting.proj.dim() != ch.dim() {
        return Err(Error::DimensionMismatch {
            context: "survival_probability",
            expected: ch.dim(),
            got: setting.prep.dim(),
        });
    }
    let out = ch.apply(&setting.prep.projector());
    let v = out.dot(setting.proj.amplitudes());
    let p: C64 = setting
        .proj
        .amplitudes()
        .iter()
        .zip(v.iter())
        .map(|(a, b)| a.conj() * b)
        .sum();
    let p = p.re;
    if !(-1e-9..=1.0 + 1e-9).contains(&p) {
        return Err(Error::NonPhysicalProbability(p));
    }
    Ok(p.clamp(0.0, 1.0))
}

/// Binomial draw of successes out of `shots` at probability `p`.
pub fn simulate_counts<R: rand::Rng + ?Sized>(p: f64, shots: u64, rng: &mut R) -> Result<u64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::ProbabilityRange(p));
    }
    if shots == 0 {
        return Ok(0);
    }
    let dist = rand_distr::Binomial::new(shots, p).map_err(|_| Error::ProbabilityRange(p))?;
    Ok(dist.sample(rng))
}

/// Enumerate the deduplicated settings required by a set of sample plans.
///
/// Per sampled element: the survival setting plus the two marginal projector
/// lists; per decomposition term on off-diagonal coefficients. Duplicate
/// (preparation, projector) pairs collapse onto their first occurrence, so
/// one record can serve several roles and coefficients.
pub fn settings_for(
    basis: &OperatorBasis,
    design: &ProductDesign,
    plans: &[SamplePlan],
) -> Result<Vec<Setting>> {
    let mut settings: Vec<Setting> = Vec::new();
    let mut seen: HashMap<(Vec<u8>, Vec<u8>), usize> = HashMap::new();
    let mut push = |s: Setting| {
        if let std::collections::hash_map::Entry::Vacant(slot) = seen.entry(s.key()) {
            slot.insert(settings.len());
            settings.push(s);
        }
    };
    for plan in plans {
        for &element in &plan.elements {
            let eplan = element_plan(basis, design, plan.coeff, element)?;
            let base = [
                plan.coeff.row as u64,
                plan.coeff.col as u64,
                element as u64,
            ];
            for (term, (_, prep)) in eplan.terms.iter().enumerate() {
                let idx = |slot: usize| {
                    let mut v = base.to_vec();
                    v.push(term as u64);
                    v.push(slot as u64);
                    v
                };
                push(Setting {
                    tag: Role::FTensor,
                    prep: prep.clone(),
                    proj: eplan.proj_survival.clone(),
                    indices: idx(0),
                });
                for (slot, proj) in eplan.proj_marg1.iter().enumerate() {
                    push(Setting {
                        tag: Role::F1Marginal,
                        prep: prep.clone(),
                        proj: proj.clone(),
                        indices: idx(slot),
                    });
                }
                for (slot, proj) in eplan.proj_marg2.iter().enumerate() {
                    push(Setting {
                        tag: Role::F2Marginal,
                        prep: prep.clone(),
                        proj: proj.clone(),
                        indices: idx(slot),
                    });
                }
            }
        }
    }
    Ok(settings)
}

/// State-tomography settings: project `input` (after the channel) onto every
/// design element.
pub fn qst_settings(
    input: &PureState,
    design: &ProductDesign,
    input_index: u64,
    tag: Role,
) -> Vec<Setting> {
    (0..design.len())
        .map(|flat| Setting {
            tag,
            prep: input.clone(),
            proj: design.state(flat).clone(),
            indices: vec![input_index, flat as u64],
        })
        .collect()
}

/// Execute settings against a channel. Exact mode stores probabilities as
/// rates; shot mode draws binomial counts from a per-record stream derived
/// from `(seed, record index)`, so the dataset is reproducible and
/// independent of evaluation order.
pub fn run_experiment<C: Channel>(
    ch: &C,
    channel_spec: &ChannelSpec,
    settings: &[Setting],
    mode: ShotMode,
    seed: u64,
) -> Result<MeasurementDataset> {
    let source = ExactChannelSource::new(ch);
    let mut records = Vec::with_capacity(settings.len());
    for (i, setting) in settings.iter().enumerate() {
        let p = source.rates(&setting.prep, &[&setting.proj])?[0].0;
        let record = match mode {
            ShotMode::Exact => SettingRecord {
                setting: setting.clone(),
                shots: 0,
                successes: 0,
                rate: p,
            },
            ShotMode::Shots { per_setting } => {
                let mut rng = crate::stream::derive_rng(seed, &[0x5245_4331, i as u64]);
                let successes = simulate_counts(p, per_setting, &mut rng)?;
                SettingRecord {
                    setting: setting.clone(),
                    shots: per_setting,
                    successes,
                    rate: successes as f64 / per_setting as f64,
                }
            }
        };
        records.push(record);
    }
    Ok(MeasurementDataset::from_parts(
        channel_spec.clone(),
        seed,
        mode,
        records,
    ))
}

/// Verify a dataset contains every setting a plan needs; run before
/// estimation so missing data fails loudly, not mid-average.
pub fn audit_plan(
    dataset: &MeasurementDataset,
    basis: &OperatorBasis,
    design: &ProductDesign,
    plan: &SamplePlan,
) -> Result<()> {
    for &element in &plan.elements {
        let eplan = element_plan(basis, design, plan.coeff, element)?;
        for (_, prep) in &eplan.terms {
            dataset.rate_for(prep, &eplan.proj_survival)?;
            for proj in eplan.proj_marg1.iter().chain(eplan.proj_marg2.iter()) {
                dataset.rate_for(prep, proj)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::random_pure_state;
    use crate::channels::phase_slab;
    use crate::designs::{mub_prime, product_basis, sylvester_basis};
    use crate::estimator::{sample_plan, CoeffIndex};
    use crate::stream::derive_rng;
    use std::sync::Arc;

    fn fixtures() -> (Arc<OperatorBasis>, ProductDesign) {
        (
            Arc::new(product_basis(&sylvester_basis(2), &sylvester_basis(3))),
            ProductDesign::new(mub_prime(2).unwrap(), mub_prime(3).unwrap()),
        )
    }

    #[test]
    fn survival_probability_basics() {
        let ch = phase_slab(6, 0.0, &[]);
        let mut rng = derive_rng(40, &[0]);
        let psi = random_pure_state(6, &mut rng);
        let same = Setting {
            tag: Role::FTensor,
            prep: psi.clone(),
            proj: psi.clone(),
            indices: vec![],
        };
        assert!((survival_probability(&ch, &same).unwrap() - 1.0).abs() <= 1e-12);

        let ortho = Setting {
            tag: Role::FTensor,
            prep: PureState::basis_state(6, 0),
            proj: PureState::basis_state(6, 1),
            indices: vec![],
        };
        assert!(survival_probability(&ch, &ortho).unwrap() <= 1e-12);
    }

    #[test]
    fn survival_probability_target_channel() {
        let ch = phase_slab(6, 5.42, &[0, 1]);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let amps = ndarray::Array1::from(vec![
            C64::new(s, 0.0),
            C64::new(0.0, 0.0),
            C64::new(s, 0.0),
            C64::new(0.0, 0.0),
            C64::new(0.0, 0.0),
            C64::new(0.0, 0.0),
        ]);
        let plus = PureState::new(amps).unwrap();
        let setting = Setting {
            tag: Role::FTensor,
            prep: plus.clone(),
            proj: plus,
            indices: vec![],
        };
        let p = survival_probability(&ch, &setting).unwrap();
        assert!((p - (5.42_f64 / 2.0).cos().powi(2)).abs() <= 1e-12);
    }

    #[test]
    fn counts_edge_cases_and_concentration() {
        let mut rng = derive_rng(41, &[0]);
        assert_eq!(simulate_counts(1.0, 1000, &mut rng).unwrap(), 1000);
        assert_eq!(simulate_counts(0.0, 1000, &mut rng).unwrap(), 0);
        assert!(simulate_counts(1.5, 10, &mut rng).is_err());
        for s in 0..100u64 {
            let mut rng = derive_rng(42, &[s]);
            let k = simulate_counts(0.5, 1_000_000, &mut rng).unwrap();
            let rate = k as f64 / 1e6;
            assert!((rate - 0.5).abs() <= 0.002, "seed {s}: rate {rate}");
        }
    }

    #[test]
    fn settings_for_diagonal_coefficient_dedups() {
        let (basis, design) = fixtures();
        let plan = SamplePlan {
            coeff: CoeffIndex::new(7, 7),
            elements: vec![0],
            seed: 0,
            permutation: 0,
        };
        let settings = settings_for(&basis, &design, &[plan]).unwrap();
        // 1 survival + 3 factor-1 marginals + 2 factor-2 marginals, with the
        // survival projector shared by both marginal lists: 4 unique.
        assert_eq!(settings.len(), 4);
        // The survival projector must appear in both marginal enumerations;
        // oracle: count naive (non-deduplicated) occurrences of its key.
        let eplan = element_plan(&basis, &design, CoeffIndex::new(7, 7), 0).unwrap();
        let survival_key = eplan.proj_survival.key_bytes();
        let naive_hits = eplan
            .proj_marg1
            .iter()
            .chain(eplan.proj_marg2.iter())
            .filter(|p| p.key_bytes() == survival_key)
            .count();
        assert_eq!(naive_hits, 2);
    }

    #[test]
    fn settings_count_bound_for_full_plan() {
        let (basis, design) = fixtures();
        let plan = sample_plan(&design, CoeffIndex::new(0, 0), 72, 3, 0).unwrap();
        let settings = settings_for(&basis, &design, &[plan]).unwrap();
        assert!(settings.len() <= 72 * 6);
    }

    #[test]
    fn off_diagonal_multiplies_settings_by_terms() {
        // Element 24 has psi_1 = (|0>+|1>)/sqrt(2), which sigma_z maps to an
        // orthogonal state, so coefficient (0, 9) = (I, sigma_z (x) I) needs
        // the full four-projector decomposition there.
        let (basis, design) = fixtures();
        let diag = SamplePlan {
            coeff: CoeffIndex::new(0, 0),
            elements: vec![24],
            seed: 0,
            permutation: 0,
        };
        let off = SamplePlan {
            coeff: CoeffIndex::new(0, 9),
            elements: vec![24],
            seed: 0,
            permutation: 0,
        };
        let n_diag = settings_for(&basis, &design, &[diag]).unwrap().len();
        let n_off = settings_for(&basis, &design, &[off]).unwrap().len();
        // Four preparations (orthogonal decomposition) instead of one.
        assert_eq!(n_off, 4 * n_diag);
    }

    #[test]
    fn exact_mode_equals_noiseless_estimation() {
        let (basis, design) = fixtures();
        let ch = phase_slab(6, 5.42, &[0, 1]);
        let spec = ChannelSpec::PhaseSlab {
            dim: 6,
            phase: 5.42,
            support: vec![0, 1],
        };
        let coeff = CoeffIndex::new(9, 10);
        let plan = sample_plan(&design, coeff, 20, 17, 0).unwrap();
        let settings = settings_for(&basis, &design, std::slice::from_ref(&plan)).unwrap();
        let ds = run_experiment(&ch, &spec, &settings, ShotMode::Exact, 17).unwrap();
        audit_plan(&ds, &basis, &design, &plan).unwrap();

        let from_data = crate::estimator::fidelity_triple(
            &DatasetSource { dataset: &ds },
            &basis,
            &design,
            &plan,
        )
        .unwrap();
        let exact = crate::estimator::fidelity_triple(
            &ExactChannelSource::new(&ch),
            &basis,
            &design,
            &plan,
        )
        .unwrap();
        assert!((from_data.f_tensor - exact.f_tensor).norm() <= 1e-12);
        assert!((from_data.f1 - exact.f1).norm() <= 1e-12);
        assert!((from_data.f2 - exact.f2).norm() <= 1e-12);
    }

    #[test]
    fn dataset_round_trips_bit_exactly() {
        let (basis, design) = fixtures();
        let ch = phase_slab(6, 5.42, &[0, 1]);
        let spec = ChannelSpec::PhaseSlab {
            dim: 6,
            phase: 5.42,
            support: vec![0, 1],
        };
        let plan = sample_plan(&design, CoeffIndex::new(0, 0), 10, 4, 0).unwrap();
        let settings = settings_for(&basis, &design, &[plan]).unwrap();
        let ds = run_experiment(
            &ch,
            &spec,
            &settings,
            ShotMode::Shots { per_setting: 500 },
            4,
        )
        .unwrap();

        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.jsonl");
        let p2 = dir.path().join("b.jsonl");
        ds.store(&p1).unwrap();
        let loaded = MeasurementDataset::load(&p1).unwrap();
        loaded.store(&p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
        assert_eq!(ds.len(), loaded.len());
        for (a, b) in ds.records().iter().zip(loaded.records().iter()) {
            assert_eq!(a.successes, b.successes);
            assert_eq!(a.rate.to_bits(), b.rate.to_bits());
        }
    }

    #[test]
    fn missing_setting_fails_loudly() {
        let (basis, design) = fixtures();
        let ch = phase_slab(6, 0.0, &[]);
        let spec = ChannelSpec::identity(6);
        let plan = sample_plan(&design, CoeffIndex::new(0, 0), 5, 8, 0).unwrap();
        let settings = settings_for(&basis, &design, std::slice::from_ref(&plan)).unwrap();
        let ds = run_experiment(&ch, &spec, &settings, ShotMode::Exact, 8).unwrap();
        let other_plan = sample_plan(&design, CoeffIndex::new(3, 3), 5, 8, 0).unwrap();
        assert!(matches!(
            audit_plan(&ds, &basis, &design, &other_plan),
            Err(Error::MissingSetting(_))
        ));
    }

    #[test]
    fn experiment_is_reproducible() {
        let (basis, design) = fixtures();
        let ch = phase_slab(6, 5.42, &[0, 1]);
        let spec = ChannelSpec::identity(6);
        let plan = sample_plan(&design, CoeffIndex::new(1, 1), 8, 21, 0).unwrap();
        let settings = settings_for(&basis, &design, &[plan]).unwrap();
        let mode = ShotMode::Shots { per_setting: 1000 };
        let d1 = run_experiment(&ch, &spec, &settings, mode, 21).unwrap();
        let d2 = run_experiment(&ch, &spec, &settings, mode, 21).unwrap();
        for (a, b) in d1.records().iter().zip(d2.records().iter()) {
            assert_eq!(a.successes, b.successes);
        }
    }
}
