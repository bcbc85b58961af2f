//! Experiment configuration: parsing, validation, and hashing.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use seqpt::channels::ChannelSpec;
use seqpt::designs::is_prime;
use seqpt::error::{Error, Result};
use seqpt::sim::ShotMode;

/// Noise model of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mode {
    Noiseless,
    Shots { per_setting: u64 },
}

impl Mode {
    /// Parse the CLI form `noiseless` or `shots:<N>`.
    pub fn parse(text: &str) -> Result<Mode> {
        if text == "noiseless" {
            return Ok(Mode::Noiseless);
        }
        if let Some(n) = text.strip_prefix("shots:") {
            let per_setting: u64 = n
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad shot count in mode '{text}'")))?;
            if per_setting == 0 {
                return Err(Error::InvalidConfig("shots must be >= 1".into()));
            }
            return Ok(Mode::Shots { per_setting });
        }
        Err(Error::InvalidConfig(format!(
            "mode '{text}' is not 'noiseless' or 'shots:<N>'"
        )))
    }

    pub fn shot_mode(&self) -> ShotMode {
        match self {
            Mode::Noiseless => ShotMode::Exact,
            Mode::Shots { per_setting } => ShotMode::Shots {
                per_setting: *per_setting,
            },
        }
    }
}

/// Which process-matrix coefficients a reconstruction estimates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoeffSelection {
    /// All independent entries.
    Full,
    /// The nonzero support of the declared channel's exact process matrix
    /// (independent Hermitian entries above 1e-10).
    Support,
    /// Explicit flat `(row, col)` pairs.
    Indices { list: Vec<(usize, usize)> },
}

fn default_m() -> usize {
    72
}
fn default_m_grid() -> Vec<usize> {
    vec![1, 2, 3, 5, 8, 10, 15, 20, 25, 30, 40, 50, 60, 72]
}
fn default_repetitions() -> usize {
    20
}
fn default_qst_states() -> usize {
    250
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Full experiment description. Every field is echoed into the outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Prime factor dimensions `(D1, D2)`; the composite space is `D1*D2`.
    pub dims: (usize, usize),
    /// The channel under reconstruction (also the simulator's ground truth).
    pub channel: ChannelSpec,
    /// Comparison channel for the efficiency sweep. Defaults to the same
    /// phase slab detuned by +1 rad when `channel` is a phase slab.
    #[serde(default)]
    pub alt_channel: Option<ChannelSpec>,
    pub mode: Mode,
    pub coefficients: CoeffSelection,
    /// Per-coefficient sample size used by `reconstruct`.
    #[serde(default = "default_m")]
    pub m: usize,
    /// Sample sizes swept by `efficiency-curve`.
    #[serde(default = "default_m_grid")]
    pub m_grid: Vec<usize>,
    /// Repetitions per grid point.
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    /// Number of random input states for `qst-histogram`.
    #[serde(default = "default_qst_states")]
    pub qst_states: usize,
    /// Prior reconstruction (the `chi_projected.json` of a `reconstruct`
    /// run) consumed by `qst-histogram`.
    #[serde(default)]
    pub reconstruction: Option<PathBuf>,
    /// Optional prior standard-QPT matrix for `qst-histogram`; computed
    /// in-run when absent.
    #[serde(default)]
    pub sqpt_reconstruction: Option<PathBuf>,
    pub master_seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let config: ExperimentConfig =
            serde_json::from_str(&text).map_err(|source| Error::Json {
                path: path.to_path_buf(),
                source,
            })?;
        Ok(config)
    }

    pub fn dim(&self) -> usize {
        self.dims.0 * self.dims.1
    }

    pub fn design_len(&self) -> usize {
        let (d1, d2) = self.dims;
        (d1 + 1) * d1 * (d2 + 1) * d2
    }

    /// Field-level validation; runs before any computation.
    pub fn validate(&self) -> Result<()> {
        let (d1, d2) = self.dims;
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if !is_prime(d1) || !is_prime(d2) {
            return fail(format!("dims: factors ({d1}, {d2}) must both be prime"));
        }
        if self.channel.dim() != self.dim() {
            return fail(format!(
                "channel: dimension {} does not match dims product {}",
                self.channel.dim(),
                self.dim()
            ));
        }
        if let Some(alt) = &self.alt_channel {
            if alt.dim() != self.dim() {
                return fail(format!(
                    "alt_channel: dimension {} does not match dims product {}",
                    alt.dim(),
                    self.dim()
                ));
            }
        }
        let n = self.design_len();
        if self.m == 0 || self.m > n {
            return fail(format!("m: {} outside [1, {n}]", self.m));
        }
        if self.m_grid.is_empty() {
            return fail("m_grid: empty".into());
        }
        for &m in &self.m_grid {
            if m == 0 || m > n {
                return fail(format!("m_grid: entry {m} outside [1, {n}]"));
            }
        }
        if self.repetitions == 0 {
            return fail("repetitions: must be >= 1".into());
        }
        if self.qst_states == 0 {
            return fail("qst_states: must be >= 1".into());
        }
        if let CoeffSelection::Indices { list } = &self.coefficients {
            let len = self.dim() * self.dim();
            if list.is_empty() {
                return fail("coefficients: empty index list".into());
            }
            for &(r, c) in list {
                if r >= len || c >= len {
                    return fail(format!("coefficients: index ({r},{c}) outside {len}x{len}"));
                }
            }
        }
        if let Mode::Shots { per_setting } = self.mode {
            if per_setting == 0 {
                return fail("mode: shots must be >= 1".into());
            }
        }
        Ok(())
    }

    /// The efficiency-sweep comparison channel: explicit `alt_channel`, or
    /// the +1 rad detuning of a phase slab.
    pub fn alt_channel_spec(&self) -> Result<ChannelSpec> {
        if let Some(alt) = &self.alt_channel {
            return Ok(alt.clone());
        }
        match &self.channel {
            ChannelSpec::PhaseSlab {
                dim,
                phase,
                support,
            } => Ok(ChannelSpec::PhaseSlab {
                dim: *dim,
                phase: phase + 1.0,
                support: support.clone(),
            }),
            _ => Err(Error::InvalidConfig(
                "alt_channel: required unless channel is a phase_slab".into(),
            )),
        }
    }

    /// Hash of the configuration with the output directory cleared, so runs
    /// into different directories are still byte-comparable.
    pub fn hash(&self) -> String {
        let mut stripped = self.clone();
        stripped.out_dir = PathBuf::new();
        let text = serde_json::to_string(&stripped).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        let mut hex = String::with_capacity(64);
        for byte in digest {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_config() -> ExperimentConfig {
        ExperimentConfig {
            dims: (2, 3),
            channel: ChannelSpec::PhaseSlab {
                dim: 6,
                phase: 5.42,
                support: vec![0, 1],
            },
            alt_channel: None,
            mode: Mode::Shots { per_setting: 10_000 },
            coefficients: CoeffSelection::Support,
            m: 72,
            m_grid: default_m_grid(),
            repetitions: 20,
            qst_states: 250,
            reconstruction: None,
            sqpt_reconstruction: None,
            master_seed: 42,
            out_dir: PathBuf::from("out"),
        }
    }

    #[test]
    fn mode_parsing() {
        assert_eq!(Mode::parse("noiseless").unwrap(), Mode::Noiseless);
        assert_eq!(
            Mode::parse("shots:500").unwrap(),
            Mode::Shots { per_setting: 500 }
        );
        assert!(Mode::parse("shots:x").is_err());
        assert!(Mode::parse("exact").is_err());
    }

    #[test]
    fn validation_catches_field_errors() {
        let ok = base_config();
        ok.validate().unwrap();

        let mut bad = base_config();
        bad.dims = (2, 4);
        assert!(bad.validate().is_err());

        let mut bad = base_config();
        bad.m = 73;
        assert!(bad.validate().is_err());

        let mut bad = base_config();
        bad.m_grid = vec![0];
        assert!(bad.validate().is_err());

        let mut bad = base_config();
        bad.channel = ChannelSpec::identity(4);
        assert!(bad.validate().is_err());

        let mut bad = base_config();
        bad.coefficients = CoeffSelection::Indices {
            list: vec![(0, 2000)],
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn hash_ignores_out_dir_only() {
        let a = base_config();
        let mut b = base_config();
        b.out_dir = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        let mut c = base_config();
        c.master_seed = 43;
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn alt_channel_defaults_to_detuned_slab() {
        let cfg = base_config();
        match cfg.alt_channel_spec().unwrap() {
            ChannelSpec::PhaseSlab { phase, .. } => {
                assert!((phase - 6.42).abs() < 1e-15);
            }
            _ => panic!("expected a phase slab"),
        }
        let mut other = base_config();
        other.channel = ChannelSpec::Depolarizing { dim: 6, p: 0.5 };
        assert!(other.alt_channel_spec().is_err());
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = base_config();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }
}
