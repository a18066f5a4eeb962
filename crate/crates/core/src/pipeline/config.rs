//! Experiment configuration (TOML). Unknown keys are rejected at every level.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chart::{GridChart, StencilOrder};
use crate::constraints::InitialDataSpec;
use crate::coupling::{CouplingControls, FinalData, Variant};
use crate::error::{Error, Result};
use crate::field::MetricField;
use crate::flow::{FlowControls, Gauge};
use crate::homogeneous::{self, HomogeneousState, Model, Normalization};
use crate::kernel::KernelControls;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub homogeneous: Option<HomogeneousConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_data: Option<InitialDataSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow: Option<FlowConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling: Option<CouplingConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernels: Option<KernelConfig>,
    #[serde(default)]
    pub backreaction: BackreactionConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Direct run of a reduced model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HomogeneousConfig {
    pub model: Model,
    pub coefficients: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<f64>,
    pub step: f64,
    pub target_beta: f64,
    #[serde(default)]
    pub normalization: Normalization,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rm_ceiling: Option<f64>,
    #[serde(default = "half")]
    pub alpha3: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub resolution: [usize; 3],
    #[serde(default = "two_pi")]
    pub period: [f64; 3],
    #[serde(default = "second")]
    pub stencil_order: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GaugeChoice {
    Plain,
    /// Background is the initial metric.
    Deturck,
    VolumeNormalized,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    #[serde(default = "plain")]
    pub gauge: GaugeChoice,
    /// `beta*`, the end of the forward run.
    pub target_beta: f64,
    #[serde(default = "half")]
    pub safety: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rm_ceiling: Option<f64>,
    #[serde(default = "tiny")]
    pub det_floor: f64,
    #[serde(default = "tiny")]
    pub min_step: f64,
    #[serde(default = "one")]
    pub store_every: usize,
    /// Snapshot every n-th stored state; 0 keeps only the first and last.
    #[serde(default)]
    pub snapshot_every: usize,
    #[serde(default)]
    pub strict_positivity: bool,
    #[serde(default = "tenth")]
    pub pinching_alpha1: f64,
    #[serde(default = "half")]
    pub pinching_alpha3: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingConfig {
    #[serde(default)]
    pub variant: Variant,
    #[serde(default = "unit")]
    pub tau_star: f64,
    #[serde(default = "normalizing")]
    pub final_data: FinalData,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default = "half")]
    pub safety: f64,
    /// Largest tolerated `|int dw - 1|`; not applied to the as-written variant.
    #[serde(default = "normalization_tolerance")]
    pub normalization_tolerance: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankChoice {
    Scalar,
    Tensor,
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    /// Source nodes as grid coordinates.
    pub sources: Vec<[usize; 3]>,
    pub eta0: f64,
    pub etas: Vec<f64>,
    #[serde(default = "both")]
    pub rank: RankChoice,
    #[serde(default = "half")]
    pub safety: f64,
    #[serde(default = "yes")]
    pub write_snapshots: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackreactionConfig {
    /// Report on every n-th stored state (the last one is always included).
    #[serde(default = "one")]
    pub every: usize,
}

impl Default for BackreactionConfig {
    fn default() -> Self {
        BackreactionConfig { every: 1 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Relative paths are resolved against the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directory: Option<PathBuf>,
}

fn half() -> f64 {
    0.5
}
fn tenth() -> f64 {
    0.1
}
fn unit() -> f64 {
    1.0
}
fn tiny() -> f64 {
    1e-12
}
fn normalization_tolerance() -> f64 {
    1e-4
}
fn one() -> usize {
    1
}
fn yes() -> bool {
    true
}
fn two_pi() -> [f64; 3] {
    [2.0 * PI; 3]
}
fn second() -> u8 {
    2
}
fn plain() -> GaugeChoice {
    GaugeChoice::Plain
}
fn both() -> RankChoice {
    RankChoice::Both
}
fn normalizing() -> FinalData {
    FinalData::Normalizing
}

fn positive(what: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} must be positive, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form without the output section, so
    /// comments, key order and the output location do not matter.
    pub fn input_hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.output = OutputConfig::default();
        let canonical = serde_json::to_vec(&c)?;
        Ok(hex::encode(Sha256::digest(&canonical)))
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.homogeneous, &self.grid) {
            (Some(h), None) => {
                if self.initial_data.is_some()
                    || self.flow.is_some()
                    || self.coupling.is_some()
                    || self.kernels.is_some()
                {
                    return Err(Error::Config(
                        "a homogeneous experiment takes no grid, flow, coupling or kernel sections".into(),
                    ));
                }
                positive("homogeneous.step", h.step)?;
                if !(h.target_beta >= 0.0) {
                    return Err(Error::Config("homogeneous.target_beta must be non-negative".into()));
                }
                if let Some(c) = h.rm_ceiling {
                    positive("homogeneous.rm_ceiling", c)?;
                }
                h.initial_state()?;
                Ok(())
            }
            (None, Some(_)) => self.validate_grid(),
            _ => Err(Error::Config(
                "exactly one of [homogeneous] and [grid] is required".into(),
            )),
        }
    }

    fn validate_grid(&self) -> Result<()> {
        let chart = self.chart()?;
        self.initial_data
            .as_ref()
            .ok_or_else(|| Error::Config("[initial_data] is required for grid experiments".into()))?;
        let flow = self
            .flow
            .as_ref()
            .ok_or_else(|| Error::Config("[flow] is required for grid experiments".into()))?;
        if !(flow.target_beta >= 0.0) {
            return Err(Error::Config("flow.target_beta must be non-negative".into()));
        }
        positive("flow.safety", flow.safety)?;
        positive("flow.det_floor", flow.det_floor)?;
        positive("flow.min_step", flow.min_step)?;
        for (what, v) in [
            ("flow.max_step", flow.max_step),
            ("flow.fixed_step", flow.fixed_step),
            ("flow.rm_ceiling", flow.rm_ceiling),
        ] {
            if let Some(v) = v {
                positive(what, v)?;
            }
        }
        if flow.store_every == 0 {
            return Err(Error::Config("flow.store_every must be at least 1".into()));
        }
        if self.backreaction.every == 0 {
            return Err(Error::Config("backreaction.every must be at least 1".into()));
        }
        if let Some(c) = &self.coupling {
            positive("coupling.tau_star", c.tau_star)?;
            positive("coupling.safety", c.safety)?;
            positive("coupling.normalization_tolerance", c.normalization_tolerance)?;
            if let FinalData::Bump { node, width } = c.final_data {
                if node >= chart.node_count() {
                    return Err(Error::Config(format!("coupling bump node {node} is not a grid node")));
                }
                positive("coupling bump width", width)?;
            }
        }
        if let Some(k) = &self.kernels {
            positive("kernels.eta0", k.eta0)?;
            positive("kernels.safety", k.safety)?;
            if k.sources.is_empty() || k.etas.is_empty() {
                return Err(Error::Config("kernels need at least one source and one eta".into()));
            }
            let res = chart.resolution();
            for s in &k.sources {
                if (0..3).any(|a| s[a] >= res[a]) {
                    return Err(Error::Config(format!("kernel source {s:?} is not a grid node")));
                }
            }
            for &eta in &k.etas {
                if !(eta >= k.eta0) || eta > flow.target_beta {
                    return Err(Error::Config(format!(
                        "kernel label eta = {eta} must lie in [eta0, beta*] = [{}, {}]",
                        k.eta0, flow.target_beta
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn chart(&self) -> Result<GridChart> {
        let g = self
            .grid
            .as_ref()
            .ok_or_else(|| Error::Config("no [grid] section".into()))?;
        let order = StencilOrder::try_from(g.stencil_order).map_err(Error::Config)?;
        GridChart::new(g.resolution, g.period, order)
    }

    pub fn flow_controls(&self) -> Result<FlowControls> {
        let f = self
            .flow
            .as_ref()
            .ok_or_else(|| Error::Config("no [flow] section".into()))?;
        Ok(FlowControls {
            target_beta: f.target_beta,
            safety: f.safety,
            max_step: f.max_step,
            fixed_step: f.fixed_step,
            rm_ceiling: f.rm_ceiling,
            det_floor: f.det_floor,
            min_step: f.min_step,
            store_every: f.store_every,
            strict_positivity: f.strict_positivity,
            pinching_alpha1: f.pinching_alpha1,
            pinching_alpha3: f.pinching_alpha3,
        })
    }

    pub fn gauge(&self, initial: &MetricField) -> Result<Gauge> {
        match self.flow.as_ref().map(|f| f.gauge) {
            Some(GaugeChoice::Deturck) => Gauge::deturck(initial),
            Some(GaugeChoice::VolumeNormalized) => Ok(Gauge::VolumeNormalized),
            _ => Ok(Gauge::Plain),
        }
    }

    pub fn beta_star(&self) -> f64 {
        self.flow.as_ref().map_or(0.0, |f| f.target_beta)
    }
}

impl HomogeneousConfig {
    pub fn initial_state(&self) -> Result<HomogeneousState> {
        let mut s = HomogeneousState::from_coefficients(self.model, &self.coefficients)?;
        if let Some(k) = self.kappa {
            s = s.with_kappa(k);
        }
        if let Some(r) = self.density {
            s = s.with_density(r);
        }
        Ok(s)
    }

    pub fn controls(&self) -> homogeneous::RunControls {
        homogeneous::RunControls {
            step: self.step,
            target: self.target_beta,
            normalization: self.normalization,
            rm_ceiling: self.rm_ceiling,
        }
    }
}

impl CouplingConfig {
    pub fn controls(&self) -> CouplingControls {
        CouplingControls {
            variant: self.variant,
            tau_star: self.tau_star,
            beta_star: None,
            final_data: self.final_data,
            steps: self.steps,
            safety: self.safety,
            store_every: 1,
        }
    }
}

impl KernelConfig {
    pub fn controls(&self) -> KernelControls {
        let eta_max = self.etas.iter().copied().fold(self.eta0, f64::max);
        let mut c = KernelControls::new(self.eta0, eta_max);
        c.etas = self.etas.clone();
        c.safety = self.safety;
        c
    }
}
