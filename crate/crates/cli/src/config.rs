//! Run configuration: a TOML file merged with command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use sarlearn::admm::AdmmConfig;
use sarlearn::bench::BenchConfig;
use sarlearn::boston;
use sarlearn::dataset::{load_csv, Column, ColumnSpec, Dataset, MissingPolicy};
use sarlearn::sar_fixed::{SarMlOptions, SarObjective};
use sarlearn::synth::SynthSpec;

pub const RESOLVED_NAME: &str = "config.resolved";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Single source of randomness; copied into every seeded stage.
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataConfig,
    pub admm: AdmmConfig,
    pub sweep: SweepConfig,
    pub sar: SarConfig,
    pub cluster: ClusterConfig,
    pub submarkets: SubmarketConfig,
    pub spillover: SpilloverConfig,
    pub synth: SynthSpec,
    pub bench: BenchRunConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            out: PathBuf::from("out"),
            data: DataConfig::default(),
            admm: AdmmConfig::default(),
            sweep: SweepConfig::default(),
            sar: SarConfig::default(),
            cluster: ClusterConfig::default(),
            submarkets: SubmarketConfig::default(),
            spillover: SpilloverConfig::default(),
            synth: SynthSpec::default(),
            bench: BenchRunConfig::default(),
        }
    }
}

/// Input table. Without `path` the bundled Boston table is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub path: Option<PathBuf>,
    pub dependent: String,
    pub explanatory: Vec<String>,
    pub id: Option<String>,
    pub coords: Option<(String, String)>,
    pub missing: MissingPolicy,
    /// Replace the dependent variable by its natural log.
    pub log_dependent: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            path: None,
            dependent: boston::DEPENDENT.into(),
            explanatory: boston::EXPLANATORY.iter().map(|s| s.to_string()).collect(),
            id: Some(boston::ID.into()),
            coords: None,
            missing: MissingPolicy::Strict,
            log_dependent: true,
        }
    }
}

impl DataConfig {
    pub fn load(&self) -> Result<Dataset> {
        let d = match &self.path {
            None => {
                if self.explanatory.is_empty() {
                    bail!("data.explanatory is empty");
                }
                let spec = ColumnSpec { coords: None, ..self.column_spec() };
                sarlearn::dataset::load_csv_from_reader(boston::BOSTON_CSV.as_bytes(), &spec)?.0
            }
            Some(path) => {
                let (d, report) = load_csv(path, &self.column_spec())?;
                if !report.dropped_rows.is_empty() {
                    log::warn!("dropped {} rows with missing values: {:?}", report.dropped_rows.len(), report.dropped_rows);
                }
                d
            }
        };
        Ok(if self.log_dependent { d.log_transform(Column::Dependent)? } else { d })
    }

    fn column_spec(&self) -> ColumnSpec {
        ColumnSpec {
            dependent: self.dependent.clone(),
            explanatory: self.explanatory.clone(),
            coords: self.coords.clone(),
            id: self.id.clone(),
            missing: self.missing,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Explicit grid; when absent the grid is `0, step, …, max`.
    pub lambdas: Option<Vec<f64>>,
    pub max: f64,
    pub step: f64,
    pub warm_start: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { lambdas: None, max: 2.0, step: 0.2, warm_start: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SarConfig {
    /// Neighbours per location for k-NN weights (needs coordinates).
    pub k_neighbours: usize,
    /// Edge list `from,to` by location id; overrides k-NN when set.
    pub edges: Option<PathBuf>,
    pub grid_step: f64,
    pub rho_bound: f64,
    pub golden_tol: f64,
    pub objective: SarObjective,
}

impl Default for SarConfig {
    fn default() -> Self {
        let o = SarMlOptions::default();
        Self {
            k_neighbours: 5,
            edges: None,
            grid_step: o.grid_step,
            rho_bound: o.rho_bound,
            golden_tol: o.golden_tol,
            objective: o.objective,
        }
    }
}

impl SarConfig {
    pub fn options(&self) -> SarMlOptions {
        SarMlOptions {
            grid_step: self.grid_step,
            rho_bound: self.rho_bound,
            golden_tol: self.golden_tol,
            objective: self.objective,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    /// Learnt `W` as triplets; when absent `W` is fitted with `[admm]`.
    pub w: Option<PathBuf>,
    /// Embedding dimension; chosen by eigen-gap when absent.
    pub k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubmarketConfig {
    /// `clusters.csv` from a previous run; computed with `[cluster]` when absent.
    pub clusters: Option<PathBuf>,
    pub per_cluster: usize,
}

impl Default for SubmarketConfig {
    fn default() -> Self {
        Self { clusters: None, per_cluster: 30 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpilloverConfig {
    /// Edits as `id,column_name,new_value`.
    pub scenario: Option<PathBuf>,
    /// Learnt `W` as triplets; fitted with `[admm]` when absent.
    pub w: Option<PathBuf>,
    /// `beta.json` matching `w`; required together with `w`.
    pub beta: Option<PathBuf>,
    /// `clusters.csv` whose labels are copied into the output.
    pub clusters: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchRunConfig {
    /// Size of the full timed fit.
    pub n: usize,
    /// Also time single iterations across `sizes`.
    pub scaling: bool,
    pub sizes: Vec<usize>,
    pub p: usize,
    /// Iterations timed per size.
    pub iterations: usize,
    pub repeats: usize,
    pub admm: AdmmConfig,
}

impl Default for BenchRunConfig {
    fn default() -> Self {
        let b = BenchConfig::default();
        Self {
            n: 862,
            scaling: true,
            sizes: b.sizes,
            p: b.p,
            iterations: b.iterations,
            repeats: b.repeats,
            admm: b.admm,
        }
    }
}

impl BenchRunConfig {
    pub fn harness(&self, seed: u64) -> BenchConfig {
        BenchConfig {
            sizes: self.sizes.clone(),
            p: self.p,
            iterations: self.iterations,
            repeats: self.repeats,
            seed,
            admm: self.admm.clone(),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Copies the top-level seed into every seeded section.
    pub fn propagate_seed(&mut self) {
        self.admm.seed = self.seed;
        self.synth.seed = self.seed;
        self.bench.admm.seed = self.seed;
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).context("serializing resolved config")
    }
}
