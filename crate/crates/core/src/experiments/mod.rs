//! End-to-end desk-scale runs: linear response, moderate deviations, CLT,
//! variance additivity, certificate audits and `C1` calibration.
//!
//! Each run produces flat rows that carry their own pass rule inputs
//! (estimate, ci, reference, tolerance), so a row's verdict can be
//! recomputed from the CSV alone. Rows with a non-empty `flag` are excluded
//! from the verdict.

mod additivity;
mod audit;
mod calibrate;
mod clt;
mod lrp;
mod mdp;

pub use additivity::{run_additivity, AdditivityRow};
pub use audit::{run_certificate_audit, AuditRow};
pub use calibrate::{run_calibrate, CalibrateRow};
pub use clt::{run_clt, CltRow};
pub use lrp::{run_lrp, LrpRow};
pub use mdp::{run_mdp, MdpRow};

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::engine::EngineParams;
use crate::error::{Error, Result};
use crate::field::{BoxSampler, FieldModel};
use crate::geometry::AxisBox;
use crate::stats::{jackknife_variance, par_generate};

pub const MIN_CONFIG_SAMPLES: usize = 1000;
const JACKKNIFE_GROUPS: usize = 20;

fn default_samples() -> usize {
    100_000
}

fn default_scaled_lambdas() -> Vec<f64> {
    vec![-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0]
}

fn half() -> f64 {
    0.5
}

fn tenth() -> f64 {
    0.1
}

fn default_c_grid() -> Vec<f64> {
    vec![1.5, 2.0, 2.5]
}

fn default_p_grid() -> Vec<f64> {
    vec![1.1, 1.5, 2.0, 4.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrpConfig {
    /// Tilts `mu = lambda sqrt(vol)` probed at every box.
    #[serde(default = "default_scaled_lambdas")]
    pub scaled_lambdas: Vec<f64>,
    /// Rows with `|lambda| log^d(vol)` above this bound are flagged.
    #[serde(default = "half")]
    pub lambda_log_bound: f64,
    #[serde(default = "tenth")]
    pub tolerance_rel: f64,
}

impl Default for LrpConfig {
    fn default() -> Self {
        Self { scaled_lambdas: default_scaled_lambdas(), lambda_log_bound: 0.5, tolerance_rel: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpConfig {
    #[serde(default = "default_c_grid")]
    pub c_grid: Vec<f64>,
    /// Adds exponentially tilted rows (Gaussian models only).
    #[serde(default)]
    pub importance_sampling: bool,
    /// Absolute tolerance on `(1/c^2) log P`.
    #[serde(default = "tenth")]
    pub tolerance: f64,
    /// Parameters handed to the moderate-deviation parameter map.
    #[serde(default = "mdp_eps")]
    pub eps: f64,
    #[serde(default = "one")]
    pub c_envelope: f64,
}

fn mdp_eps() -> f64 {
    crate::tail::MDP_MAX_EPS
}

fn one() -> f64 {
    1.0
}

impl Default for MdpConfig {
    fn default() -> Self {
        Self { c_grid: default_c_grid(), importance_sampling: false, tolerance: 0.1, eps: mdp_eps(), c_envelope: 1.0 }
    }
}

fn ks_alpha() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CltConfig {
    /// Defaults to `n_samples`.
    #[serde(default)]
    pub replicas: Option<usize>,
    #[serde(default = "ks_alpha")]
    pub alpha: f64,
}

impl Default for CltConfig {
    fn default() -> Self {
        Self { replicas: None, alpha: ks_alpha() }
    }
}

fn default_pairs() -> Vec<[f64; 2]> {
    vec![[4.0, 4.0], [8.0, 16.0], [32.0, 32.0]]
}

fn exact_tol() -> f64 {
    1e-9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdditivityConfig {
    /// `(r, s)` lengths along the first axis.
    #[serde(default = "default_pairs")]
    pub pairs: Vec<[f64; 2]>,
    /// Remaining sides for `d > 1`; defaults to `4 m` each.
    #[serde(default)]
    pub other_sides: Option<Vec<f64>>,
    #[serde(default = "exact_tol")]
    pub exact_tolerance: f64,
}

impl Default for AdditivityConfig {
    fn default() -> Self {
        Self { pairs: default_pairs(), other_sides: None, exact_tolerance: exact_tol() }
    }
}

fn default_ladder_lambdas() -> Vec<f64> {
    vec![0.5, 1.0, 2.0]
}

fn default_levels() -> usize {
    2
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    #[serde(default = "default_p_grid")]
    pub p_grid: Vec<f64>,
    #[serde(default = "default_ladder_lambdas")]
    pub ladder_lambdas: Vec<f64>,
    /// Number of smallest levels with single-step rows.
    #[serde(default = "default_levels")]
    pub single_step_levels: usize,
    /// Use exact CGFs when the model has them.
    #[serde(default = "yes")]
    pub oracle: bool,
    /// Tail split for the schedule diagnostics; defaults to `n / 2`.
    #[serde(default)]
    pub split: Option<usize>,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            p_grid: default_p_grid(),
            ladder_lambdas: default_ladder_lambdas(),
            single_step_levels: default_levels(),
            oracle: true,
            split: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateConfig {
    #[serde(default = "default_p_grid")]
    pub p_grid: Vec<f64>,
}

impl Default for CalibrateConfig {
    fn default() -> Self {
        Self { p_grid: default_p_grid() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: FieldModel,
    pub boxes: Vec<AxisBox>,
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    /// Replicas for estimated reference variances; defaults to `n_samples`.
    #[serde(default)]
    pub reference_samples: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Defaults to `C1 = 3` in the model's dimension.
    #[serde(default)]
    pub engine: Option<EngineParams>,
    #[serde(default)]
    pub lrp: LrpConfig,
    #[serde(default)]
    pub mdp: MdpConfig,
    #[serde(default)]
    pub clt: CltConfig,
    #[serde(default)]
    pub additivity: AdditivityConfig,
    #[serde(default)]
    pub audit: AuditConfig,
    #[serde(default)]
    pub calibrate: CalibrateConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: FieldModel::gaussian(1, 1.0),
            boxes: vec![AxisBox::new(vec![1000.0]).unwrap(), AxisBox::new(vec![10_000.0]).unwrap()],
            n_samples: default_samples(),
            reference_samples: None,
            seed: 0,
            engine: None,
            lrp: LrpConfig::default(),
            mdp: MdpConfig::default(),
            clt: CltConfig::default(),
            additivity: AdditivityConfig::default(),
            audit: AuditConfig::default(),
            calibrate: CalibrateConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        self.model.validate()?;
        if self.boxes.is_empty() {
            return bad("boxes must be non-empty");
        }
        if let Some(b) = self.boxes.iter().find(|b| b.dim() != self.model.d) {
            return Err(Error::Config(format!("box {b} does not have dimension {}", self.model.d)));
        }
        if self.n_samples < MIN_CONFIG_SAMPLES || self.reference_samples() < MIN_CONFIG_SAMPLES {
            return Err(Error::Config(format!("sample counts must be at least {MIN_CONFIG_SAMPLES}")));
        }
        if self.lrp.scaled_lambdas.is_empty() || self.mdp.c_grid.is_empty() {
            return bad("lambda and c grids must be non-empty");
        }
        if self.audit.p_grid.is_empty() || self.calibrate.p_grid.is_empty() {
            return bad("p grids must be non-empty");
        }
        if self.additivity.pairs.is_empty() {
            return bad("additivity pairs must be non-empty");
        }
        if let Some(r) = self.clt.replicas {
            if r < MIN_CONFIG_SAMPLES {
                return Err(Error::Config(format!("clt replicas must be at least {MIN_CONFIG_SAMPLES}")));
            }
        }
        let e = self.engine();
        if e.d != self.model.d {
            return bad("engine dimension differs from model dimension");
        }
        e.validate()
    }

    pub fn engine(&self) -> EngineParams {
        self.engine.unwrap_or_else(|| EngineParams::new(3.0, self.model.d))
    }

    pub fn reference_samples(&self) -> usize {
        self.reference_samples.unwrap_or(self.n_samples)
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Independent stream seed for `(base, experiment tag, index)`.
pub(crate) fn derive_seed(base: u64, tag: u64, index: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ index.wrapping_mul(0xd1b5_4a32_d192_ed03);
    for _ in 0..2 {
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

pub(crate) fn sample_box(sampler: &BoxSampler, n: usize, seed: u64) -> Vec<f64> {
    par_generate(n as u64, |i| sampler.sample(seed, i))
}

/// `Var(int_B X) / vol B` from an independent replica set, with its standard error.
pub(crate) fn reference_sigma2(model: &FieldModel, b: &AxisBox, n: usize, seed: u64) -> Result<(f64, f64)> {
    let sampler = BoxSampler::new(model, b)?;
    let xs = sample_box(&sampler, n, seed);
    let (var, se) = jackknife_variance(&xs, JACKKNIFE_GROUPS);
    Ok((var / b.vol(), se / b.vol()))
}

pub trait ReportRow: Serialize {
    fn pass(&self) -> bool;
    fn flag(&self) -> &str;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Lrp,
    Mdp,
    Clt,
    Additivity,
    Audit,
    Calibrate,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Lrp => "lrp",
            Experiment::Mdp => "mdp",
            Experiment::Clt => "clt",
            Experiment::Additivity => "additivity",
            Experiment::Audit => "audit",
            Experiment::Calibrate => "calibrate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metadata {
    pub experiment: &'static str,
    pub config_hash: String,
    pub seed: u64,
    pub version: &'static str,
    pub runtime_ms: u128,
    pub rows: usize,
    pub passed: usize,
    pub failed: usize,
    pub flagged: usize,
}

/// Rows of one run, already encoded, with the verdict tally.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metadata: Metadata,
    pub csv: Vec<u8>,
    pub rows_json: serde_json::Value,
}

impl RunOutput {
    fn new<R: ReportRow>(experiment: Experiment, cfg: &ExperimentConfig, rows: &[R], start: Instant) -> Result<Self> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r)?;
        }
        let csv = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        let flagged = rows.iter().filter(|r| !r.flag().is_empty()).count();
        let passed = rows.iter().filter(|r| r.flag().is_empty() && r.pass()).count();
        let metadata = Metadata {
            experiment: experiment.name(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
            version: env!("CARGO_PKG_VERSION"),
            runtime_ms: start.elapsed().as_millis(),
            rows: rows.len(),
            passed,
            failed: rows.len() - flagged - passed,
            flagged,
        };
        Ok(Self { metadata, csv, rows_json: serde_json::to_value(rows)? })
    }

    /// True iff every unflagged row passes.
    pub fn success(&self) -> bool {
        self.metadata.failed == 0
    }

    /// Writes `<name>.csv` or `<name>.json`, plus `<name>.meta.json`.
    pub fn write(&self, dir: &Path, format: OutputFormat) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let name = self.metadata.experiment;
        let meta_path = dir.join(format!("{name}.meta.json"));
        let out_path = match format {
            OutputFormat::Csv => {
                let p = dir.join(format!("{name}.csv"));
                std::fs::write(&p, &self.csv)?;
                p
            }
            OutputFormat::Json => {
                let p = dir.join(format!("{name}.json"));
                let mut f = std::fs::File::create(&p)?;
                let doc = serde_json::json!({ "metadata": self.metadata, "rows": self.rows_json });
                serde_json::to_writer_pretty(&mut f, &doc)?;
                f.write_all(b"\n")?;
                p
            }
        };
        std::fs::write(&meta_path, serde_json::to_vec_pretty(&self.metadata)?)?;
        Ok(vec![out_path, meta_path])
    }
}

pub fn run(experiment: Experiment, cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let start = Instant::now();
    match experiment {
        Experiment::Lrp => RunOutput::new(experiment, cfg, &run_lrp(cfg)?, start),
        Experiment::Mdp => RunOutput::new(experiment, cfg, &run_mdp(cfg)?, start),
        Experiment::Clt => RunOutput::new(experiment, cfg, &run_clt(cfg)?, start),
        Experiment::Additivity => RunOutput::new(experiment, cfg, &run_additivity(cfg)?, start),
        Experiment::Audit => RunOutput::new(experiment, cfg, &run_certificate_audit(cfg)?, start),
        Experiment::Calibrate => RunOutput::new(experiment, cfg, &run_calibrate(cfg)?, start),
    }
}

pub(crate) fn join_flags(flags: &[&str]) -> String {
    flags.iter().filter(|f| !f.is_empty()).cloned().collect::<Vec<_>>().join(";")
}
