//! JSON experiment configuration.
//!
//! ```json
//! {
//!   "system":  { "fixture": "appendix-d" },
//!   "learner": { "eta": 5e-4, "r": 0.1, "iterations": 200000,
//!                "seeds": [0, 1, 2], "z0": { "oracle_minus": [1, 1, 1] } },
//!   "output":  { "dir": "out" }
//! }
//! ```
//!
//! An explicit plant replaces the fixture name with `horizon`, `a`, `b`, `c`,
//! `m`, `r` (each one row-major matrix, or a list of per-time matrices) and
//! `mu0`, plus a `noise` block. The `pattern` block picks a named fixture
//! basis, a 0/1 sparsity matrix, or explicit basis columns (`vec(K)`, column
//! stacking); without it a fixture keeps its own basis and an explicit plant
//! gets the full causal mask.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cost::CostContext;
use crate::error::{Error, Result};
use crate::fixtures;
use crate::policy_space::{basis_from_pattern, SparsityPattern, SubspaceBasis};
use crate::system::{NoiseModel, SystemSpec};

/// One matrix reused at every time step, or one per time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSeq {
    Single(Vec<Vec<f64>>),
    PerTime(Vec<Vec<Vec<f64>>>),
}

fn to_matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Config(format!("system.{name}: matrices must be nonempty with rows of equal length")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl MatrixSeq {
    fn expand(&self, name: &str, len: usize) -> Result<Vec<DMatrix<f64>>> {
        match self {
            MatrixSeq::Single(m) => Ok(vec![to_matrix(name, m)?; len]),
            MatrixSeq::PerTime(ms) => {
                if ms.len() != len {
                    return Err(Error::Config(format!("system.{name}: expected {len} per-time matrices, got {}", ms.len())));
                }
                ms.iter().map(|m| to_matrix(name, m)).collect()
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<MatrixSeq>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<MatrixSeq>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<MatrixSeq>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<MatrixSeq>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<MatrixSeq>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture: Option<String>,
    /// 0/1 matrix of shape `mN x p(N+1)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sparsity: Option<Vec<Vec<u8>>>,
    /// Each entry is one spanning vector `vec(K_i)`; orthonormalised on load.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basis_columns: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub full_causal: Option<bool>,
}

/// Initial parameter for learning runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialPoint {
    Explicit(Vec<f64>),
    /// `z* - offset`, with `z*` from the oracle (or the direct minimiser).
    OracleMinus(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerBlock {
    pub eta: f64,
    pub r: f64,
    pub iterations: usize,
    pub seeds: Vec<u64>,
    pub z0: InitialPoint,
    #[serde(default)]
    pub log_true_cost_every: usize,
    /// Stop each run once the exact gap drops to this value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_at_gap: Option<f64>,
}

fn default_delta() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    /// Precision levels, strictly decreasing.
    pub epsilons: Vec<f64>,
    /// Seeds `0..runs` are used at every level.
    pub runs: usize,
    /// Iteration cap; levels not reached within it are censored.
    pub max_iterations: usize,
    /// Level at which the learner block's `eta` and `r` apply; defaults to the loosest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_epsilon: Option<f64>,
    /// Failure probability used for the theoretical column.
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_samples() -> usize {
    500
}
fn default_rho0() -> f64 {
    1.0
}
fn default_inflation() -> f64 {
    crate::oracle::DEFAULT_INFLATION
}
fn default_epsilon() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeBlock {
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    #[serde(default = "default_rho0")]
    pub rho0: f64,
    #[serde(default = "default_inflation")]
    pub inflation: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ProbeBlock {
    fn default() -> Self {
        Self {
            delta: default_delta(),
            epsilon: default_epsilon(),
            n_samples: default_samples(),
            rho0: default_rho0(),
            inflation: default_inflation(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_formats() -> Vec<OutputFormat> {
    vec![OutputFormat::Csv, OutputFormat::Json]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<OutputFormat>,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self { dir: default_dir(), formats: default_formats() }
    }
}

impl OutputBlock {
    pub fn wants(&self, format: OutputFormat) -> bool {
        self.formats.contains(&format)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<PatternBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learner: Option<LearnerBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<ProbeBlock>,
    #[serde(default)]
    pub output: OutputBlock,
}

/// Precision levels of the reference sweep.
pub const DEFAULT_SWEEP_EPSILONS: [f64; 7] = [0.2, 0.17, 0.14, 0.11, 0.08, 0.05, 0.02];

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("{e}")))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// SHA-256 of the compact serialised config, hex encoded.
    pub fn hash(&self) -> String {
        let compact = serde_json::to_string(self).expect("config serialises");
        Sha256::digest(compact.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Defaults for a named fixture: the reference learner settings and sweep.
    pub fn for_fixture(name: &str) -> Result<Self> {
        let (_, basis) = fixtures::by_name(name)
            .ok_or_else(|| Error::Config(format!("unknown fixture '{name}' (known: {})", fixtures::NAMES.join(", "))))?;
        Ok(Self {
            system: SystemBlock { fixture: Some(name.to_string()), ..Default::default() },
            pattern: None,
            noise: None,
            learner: Some(LearnerBlock {
                eta: 5e-4,
                r: 0.1,
                iterations: 200_000,
                seeds: (0..10).collect(),
                z0: InitialPoint::OracleMinus(vec![1.0; basis.dim()]),
                log_true_cost_every: 100,
                stop_at_gap: None,
            }),
            sweep: Some(SweepBlock {
                epsilons: DEFAULT_SWEEP_EPSILONS.to_vec(),
                runs: 10,
                max_iterations: 2_000_000,
                base_epsilon: None,
                delta: default_delta(),
            }),
            probe: Some(ProbeBlock::default()),
            output: OutputBlock::default(),
        })
    }

    /// Builds the plant and basis this config describes.
    pub fn build(&self) -> Result<CostContext> {
        let s = &self.system;
        let explicit = [s.horizon.is_some(), s.a.is_some(), s.b.is_some(), s.c.is_some(), s.m.is_some(), s.r.is_some(), s.mu0.is_some()];
        let (spec, fixture_basis) = match &s.fixture {
            Some(name) => {
                if explicit.iter().any(|b| *b) {
                    return Err(Error::Config("system: give either 'fixture' or explicit matrices, not both".into()));
                }
                let (spec, basis) = fixtures::by_name(name).ok_or_else(|| {
                    Error::Config(format!("system.fixture: unknown fixture '{name}' (known: {})", fixtures::NAMES.join(", ")))
                })?;
                let spec = match &self.noise {
                    Some(noise) => spec.with_noise(*noise)?,
                    None => spec,
                };
                (spec, Some(basis))
            }
            None => (self.explicit_system()?, None),
        };
        let basis = match &self.pattern {
            Some(p) => build_pattern(p, &spec)?,
            None => match fixture_basis {
                Some(b) => b,
                None => full_causal(&spec)?,
            },
        };
        CostContext::new(&spec, basis)
    }

    fn explicit_system(&self) -> Result<SystemSpec> {
        let s = &self.system;
        let missing = |name: &str| Error::Config(format!("system.{name} is required without a fixture"));
        let horizon = s.horizon.ok_or_else(|| missing("horizon"))?;
        let a = s.a.as_ref().ok_or_else(|| missing("a"))?.expand("a", horizon + 1)?;
        let b = s.b.as_ref().ok_or_else(|| missing("b"))?.expand("b", horizon)?;
        let c = s.c.as_ref().ok_or_else(|| missing("c"))?.expand("c", horizon + 1)?;
        let m = s.m.as_ref().ok_or_else(|| missing("m"))?.expand("m", horizon + 1)?;
        let r = s.r.as_ref().ok_or_else(|| missing("r"))?.expand("r", horizon)?;
        let mu0 = DVector::from_vec(s.mu0.clone().ok_or_else(|| missing("mu0"))?);
        let noise = self.noise.ok_or_else(|| Error::Config("noise block is required without a fixture".into()))?;
        SystemSpec::new(horizon, a, b, c, m, r, mu0, noise)
    }
}

fn full_causal(spec: &SystemSpec) -> Result<SubspaceBasis> {
    Ok(fixtures::full_causal(spec))
}

fn build_pattern(p: &PatternBlock, spec: &SystemSpec) -> Result<SubspaceBasis> {
    let chosen = [p.fixture.is_some(), p.sparsity.is_some(), p.basis_columns.is_some(), p.full_causal.unwrap_or(false)];
    if chosen.iter().filter(|b| **b).count() != 1 {
        return Err(Error::Config(
            "pattern: give exactly one of 'fixture', 'sparsity', 'basis_columns', 'full_causal: true'".into(),
        ));
    }
    let shape = spec.dims().policy_shape();
    if let Some(name) = &p.fixture {
        let (_, basis) = fixtures::by_name(name)
            .ok_or_else(|| Error::Config(format!("pattern.fixture: unknown fixture '{name}'")))?;
        return Ok(basis);
    }
    if let Some(rows) = &p.sparsity {
        return basis_from_pattern(&SparsityPattern::from_rows(shape, rows)?);
    }
    if let Some(cols) = &p.basis_columns {
        let len = shape.rows() * shape.cols();
        if cols.iter().any(|c| c.len() != len) {
            return Err(Error::Config(format!("pattern.basis_columns: every column must have length {len}")));
        }
        let mat = DMatrix::from_fn(len, cols.len(), |i, j| cols[j][i]);
        return SubspaceBasis::from_spanning_columns(shape, &mat);
    }
    full_causal(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn explicit_json() -> &'static str {
        r#"{
            "system": {
                "horizon": 2,
                "a": [[1.0]], "b": [[1.0]], "c": [[1.0]],
                "m": [[[0.0]], [[0.0]], [[0.0]]], "r": [[1.0]],
                "mu0": [0.0]
            },
            "noise": { "delta0_halfwidth": 1.0, "w_halfwidth": 1.0, "v_halfwidth": 1.0 },
            "pattern": { "sparsity": [[1, 0, 0], [1, 1, 0]] },
            "learner": { "eta": 0.001, "r": 0.1, "iterations": 10, "seeds": [1, 2],
                         "z0": { "explicit": [0.0, 0.0, 0.0] } },
            "output": { "dir": "somewhere", "formats": ["csv"] }
        }"#
    }

    #[test]
    fn round_trip_is_identity() {
        for cfg in [ExperimentConfig::from_json(explicit_json()).unwrap(), ExperimentConfig::for_fixture("appendix-d").unwrap()] {
            let again = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
            assert_eq!(cfg, again);
            assert_eq!(cfg.hash(), again.hash());
        }
    }

    #[test]
    fn explicit_plant_builds() {
        let ctx = ExperimentConfig::from_json(explicit_json()).unwrap().build().unwrap();
        assert_eq!(ctx.dim(), 3);
        assert_eq!(ctx.ops.cp12, DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 0.0, 1.0, 1.0]));
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = explicit_json().replace("\"eta\"", "\"etta\"");
        let err = ExperimentConfig::from_json(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("etta") && msg.contains("line"), "{msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn fixture_names_resolve() {
        for name in fixtures::NAMES {
            let cfg = ExperimentConfig::for_fixture(name).unwrap();
            assert!(cfg.build().is_ok(), "{name}");
        }
        assert!(ExperimentConfig::for_fixture("nope").is_err());
    }

    #[test]
    fn fixture_and_explicit_conflict() {
        let text = r#"{ "system": { "fixture": "b2", "horizon": 2 } }"#;
        assert!(matches!(ExperimentConfig::from_json(text).unwrap().build(), Err(Error::Config(_))));
    }

    #[test]
    fn tied_basis_columns_load() {
        let mut cols = vec![vec![0.0; 24]; 2];
        cols[0][0] = 1.0;
        cols[0][2 * 4 + 2] = 1.0;
        cols[1][4 + 1] = 1.0;
        cols[1][3 * 4 + 3] = 1.0;
        let cfg = ExperimentConfig {
            system: SystemBlock { fixture: Some("b3".into()), ..Default::default() },
            pattern: Some(PatternBlock { basis_columns: Some(cols), ..Default::default() }),
            noise: None,
            learner: None,
            sweep: None,
            probe: None,
            output: OutputBlock::default(),
        };
        let ctx = cfg.build().unwrap();
        let (_, reference) = fixtures::b3();
        assert!((ctx.basis.matrix() - reference.matrix()).amax() < 1e-15);
    }

    #[test]
    fn hash_changes_with_content() {
        let a = ExperimentConfig::for_fixture("b2").unwrap();
        let mut b = a.clone();
        b.learner.as_mut().unwrap().eta = 1e-3;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
