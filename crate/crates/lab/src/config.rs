//! Experiment configuration, read from TOML. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use vme_core::model::{Boundary, HamiltonianSpec, LocalKind};
use vme_core::vqa::{BandwidthMode, VmeConfig, APPROX_BANDWIDTH_PER_SITE};

use crate::error::{LabError, LabResult};

/// Environment variable overriding `io.spectrum_cache_dir`.
pub const CACHE_DIR_ENV: &str = "VME_CACHE_DIR";

/// Targets must lie within this fraction of the half-bandwidth per site.
pub const MAX_TARGET_FRACTION: f64 = 0.9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub vme: VmeSection,
    pub analysis: AnalysisSection,
    pub io: IoSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub sizes: Vec<usize>,
    pub coupling_j: f64,
    pub field_x: f64,
    pub field_z: f64,
    pub disorder_amplitude: f64,
    pub disorder_seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let s = HamiltonianSpec::standard(8, 1);
        Self {
            sizes: vec![8],
            coupling_j: s.coupling_j,
            field_x: s.field_x,
            field_z: s.field_z,
            disorder_amplitude: s.disorder_amplitude,
            disorder_seed: s.disorder_seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VmeSection {
    /// `λ/N` values.
    pub target_densities: Vec<f64>,
    pub window_exponent: f64,
    /// Ensemble size `R`.
    pub runs: u64,
    pub master_seed: u64,
    pub bandwidth_mode: BandwidthMode,
    pub grad_tol_start: f64,
    pub grad_tol_floor: f64,
    pub grad_tol_shrink: f64,
    pub max_layers: usize,
    pub max_cost_evals: u64,
    pub max_iter_per_stage: usize,
}

impl Default for VmeSection {
    fn default() -> Self {
        let c = VmeConfig::default();
        Self {
            target_densities: vec![c.target_energy_density],
            window_exponent: c.window_exponent,
            runs: 8,
            master_seed: 1,
            bandwidth_mode: c.bandwidth_mode,
            grad_tol_start: c.grad_tol_start,
            grad_tol_floor: c.grad_tol_floor,
            grad_tol_shrink: c.grad_tol_shrink,
            max_layers: c.max_layers,
            max_cost_evals: c.max_cost_evals,
            max_iter_per_stage: c.max_iter_per_stage,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub operators: Vec<LocalKind>,
    /// Window half-width in units of `δ` for the truncated operators.
    pub window_multiple: f64,
    /// Coarse-graining resolution for diagonal-ensemble profiles.
    pub resolution_diag: usize,
    /// Coarse-graining resolution for the smooth diagonal fit.
    pub resolution_eth: usize,
    pub scrambles: usize,
    /// Trace-distance ensembles have `⌊factor · N²⌋` members.
    pub trace_ensemble_factor: f64,
    pub trace_subsystem_sizes: Vec<usize>,
    pub realizations: usize,
    pub analysis_seed: u64,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            operators: LocalKind::ALL.to_vec(),
            window_multiple: 3.0,
            resolution_diag: 64,
            resolution_eth: 32,
            scrambles: 100,
            trace_ensemble_factor: 1.5,
            trace_subsystem_sizes: vec![1, 2],
            realizations: 20,
            analysis_seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoSection {
    pub output_dir: PathBuf,
    pub spectrum_cache_dir: PathBuf,
}

impl Default for IoSection {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("out"),
            spectrum_cache_dir: PathBuf::from("cache"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> LabResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> LabResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| LabError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> LabResult<()> {
        let bad = |m: String| Err(LabError::Config(m));
        if self.model.sizes.is_empty() || self.vme.target_densities.is_empty() || self.analysis.operators.is_empty() {
            return bad("model.sizes, vme.target_densities and analysis.operators must be non-empty".into());
        }
        if let Some(&n) = self.model.sizes.iter().find(|&&n| !(3..=vme_core::model::MAX_DENSE_SITES).contains(&n)) {
            return bad(format!(
                "chain length {n} outside 3..={}",
                vme_core::model::MAX_DENSE_SITES
            ));
        }
        let limit = MAX_TARGET_FRACTION * 0.5 * APPROX_BANDWIDTH_PER_SITE;
        if let Some(l) = self.vme.target_densities.iter().find(|l| !(l.abs() < limit)) {
            return bad(format!("target density {l} outside (-{limit}, {limit})"));
        }
        if self.vme.runs == 0 {
            return bad("vme.runs must be >= 1".into());
        }
        for spec in self.models() {
            spec.validate().map_err(|e| LabError::Config(e.to_string()))?;
        }
        for l in &self.vme.target_densities {
            self.vme_config(*l).validate().map_err(|e| LabError::Config(e.to_string()))?;
        }
        let a = &self.analysis;
        if !(a.window_multiple > 0.0) || a.resolution_diag == 0 || a.resolution_eth == 0 || a.scrambles == 0 {
            return bad("analysis window_multiple, resolutions and scrambles must be positive".into());
        }
        if !(a.trace_ensemble_factor > 0.0) || a.realizations == 0 || a.trace_subsystem_sizes.is_empty() {
            return bad("analysis trace-distance settings must be positive and non-empty".into());
        }
        if let Some(k) = a
            .trace_subsystem_sizes
            .iter()
            .find(|&&k| k == 0 || k > vme_core::analysis::MAX_RDM_SITES)
        {
            return bad(format!(
                "trace subsystem size {k} outside 1..={}",
                vme_core::analysis::MAX_RDM_SITES
            ));
        }
        Ok(())
    }

    pub fn model(&self, n_sites: usize) -> HamiltonianSpec {
        HamiltonianSpec {
            n_sites,
            coupling_j: self.model.coupling_j,
            field_x: self.model.field_x,
            field_z: self.model.field_z,
            disorder_amplitude: self.model.disorder_amplitude,
            disorder_seed: self.model.disorder_seed,
            boundary: Boundary::Periodic,
        }
    }

    pub fn models(&self) -> impl Iterator<Item = HamiltonianSpec> + '_ {
        self.model.sizes.iter().map(|&n| self.model(n))
    }

    pub fn vme_config(&self, target_density: f64) -> VmeConfig {
        let v = &self.vme;
        VmeConfig {
            target_energy_density: target_density,
            window_exponent: v.window_exponent,
            bandwidth_mode: v.bandwidth_mode,
            grad_tol_start: v.grad_tol_start,
            grad_tol_floor: v.grad_tol_floor,
            grad_tol_shrink: v.grad_tol_shrink,
            max_layers: v.max_layers,
            max_cost_evals: v.max_cost_evals,
            max_iter_per_stage: v.max_iter_per_stage,
        }
    }

    /// Cache directory, with the environment override applied.
    pub fn cache_dir(&self) -> PathBuf {
        match std::env::var_os(CACHE_DIR_ENV) {
            Some(d) if !d.is_empty() => PathBuf::from(d),
            _ => self.io.spectrum_cache_dir.clone(),
        }
    }

    pub fn trace_ensemble_size(&self, n_sites: usize) -> usize {
        (self.analysis.trace_ensemble_factor * (n_sites * n_sites) as f64).floor() as usize
    }

    /// SHA-256 of the canonical JSON form, without the io section so that
    /// moving outputs does not change identities.
    pub fn hash_hex(&self) -> String {
        let canon = serde_json::json!({
            "model": self.model,
            "vme": self.vme,
            "analysis": self.analysis,
        });
        hex::encode(Sha256::digest(canon.to_string().as_bytes()))
    }

    /// Hash of the sections that determine the run records.
    pub fn runs_hash_hex(&self) -> String {
        let canon = serde_json::json!({ "model": self.model, "vme": self.vme });
        hex::encode(Sha256::digest(canon.to_string().as_bytes()))
    }
}
