//! Command-line flags. Every flag is optional and, when given, overrides
//! the corresponding key of the config file.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use sarlearn::admm::WUpdate;
use sarlearn::dataset::MissingPolicy;
use sarlearn::sar_fixed::SarObjective;

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "sarlearn", version, about = "Learn sparse spatial weights and regression coefficients jointly, then cluster and simulate")]
pub struct Cli {
    /// Log level (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    pub log: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ordinary least squares of the dependent variable on the explanatory columns.
    FitOls(Common),
    /// Classical SAR with a fixed k-NN or adjacency W, fitted by concentrated ML.
    FitSar {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sar: SarArgs,
    },
    /// Joint ADMM fit of W and beta.
    FitAdmm {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        admm: AdmmArgs,
    },
    /// ADMM fits over a grid of lambda1 values.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        admm: AdmmArgs,
        #[command(flatten)]
        sweep: SweepArgs,
    },
    /// Spectral clustering of a learnt W.
    Cluster {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        admm: AdmmArgs,
        #[command(flatten)]
        cluster: ClusterArgs,
    },
    /// Global versus per-cluster OLS on a held-out split.
    Submarkets {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        admm: AdmmArgs,
        #[command(flatten)]
        cluster: ClusterArgs,
        /// clusters.csv from an earlier run.
        #[arg(long)]
        clusters: Option<PathBuf>,
        /// Held-out rows per cluster.
        #[arg(long)]
        per_cluster: Option<usize>,
    },
    /// Price response of every location to edits of the explanatory variables.
    Spillover {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        admm: AdmmArgs,
        #[command(flatten)]
        spill: SpilloverArgs,
    },
    /// Synthetic dataset with a known sparse W.
    Synth {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        synth: SynthArgs,
    },
    /// Wall time of a full fit and per-iteration scaling on synthetic data.
    Bench {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        bench: BenchArgs,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Input CSV; the bundled Boston table when omitted.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub dependent: Option<String>,
    /// Comma-separated explanatory columns.
    #[arg(long, value_delimiter = ',')]
    pub explanatory: Option<Vec<String>>,
    #[arg(long)]
    pub id: Option<String>,
    /// Coordinate columns as `x,y`.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pub coords: Option<Vec<String>>,
    /// Drop rows with missing cells instead of failing.
    #[arg(long)]
    pub lenient: bool,
    /// Log-transform the dependent variable (true/false).
    #[arg(long)]
    pub log_dependent: Option<bool>,
}

#[derive(Debug, Args)]
pub struct AdmmArgs {
    #[arg(long, allow_negative_numbers = true)]
    pub lambda1: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub rho1: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub eps_abs: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub eps_rel: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Residual-balancing penalty adaptation (true/false).
    #[arg(long)]
    pub adaptive_rho: Option<bool>,
    #[arg(long, value_parser = parse_w_update)]
    pub w_update: Option<WUpdate>,
    /// Use the update formulas exactly as printed in the original derivation.
    #[arg(long)]
    pub paper_literal: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Comma-separated grid; overrides --lambda-max/--lambda-step.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub lambdas: Option<Vec<f64>>,
    #[arg(long, allow_negative_numbers = true)]
    pub lambda_max: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub lambda_step: Option<f64>,
    /// Warm-start each fit from the previous one (true/false).
    #[arg(long)]
    pub warm_start: Option<bool>,
}

#[derive(Debug, Args)]
pub struct SarArgs {
    #[arg(long)]
    pub k_neighbours: Option<usize>,
    /// Edge list `from,to` of location ids.
    #[arg(long)]
    pub edges: Option<PathBuf>,
    #[arg(long, value_parser = parse_objective)]
    pub objective: Option<SarObjective>,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    /// W triplets from an earlier fit; fitted when omitted.
    #[arg(long)]
    pub w: Option<PathBuf>,
    /// Embedding dimension; chosen by eigen-gap when omitted.
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SpilloverArgs {
    /// Edits as `id,column_name,new_value`.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// W triplets from an earlier fit; fitted when omitted.
    #[arg(long)]
    pub w: Option<PathBuf>,
    /// beta.json from the same fit as --w.
    #[arg(long)]
    pub beta: Option<PathBuf>,
    /// clusters.csv whose labels are copied into the output.
    #[arg(long)]
    pub clusters: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub density: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub spectral_scale: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub blocks: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Size of the full timed fit.
    #[arg(long)]
    pub n: Option<usize>,
    /// Use generated data (the only supported source).
    #[arg(long)]
    pub synthetic: bool,
    /// Skip the per-iteration scaling runs.
    #[arg(long)]
    pub no_scaling: bool,
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub lambda1: Option<f64>,
}

fn parse_w_update(s: &str) -> Result<WUpdate, String> {
    match s {
        "exact" => Ok(WUpdate::Exact),
        "projected" => Ok(WUpdate::Projected),
        _ => Err(format!("expected `exact` or `projected`, got `{s}`")),
    }
}

fn parse_objective(s: &str) -> Result<SarObjective, String> {
    match s {
        "quoted" => Ok(SarObjective::Quoted),
        "concentrated" => Ok(SarObjective::Concentrated),
        _ => Err(format!("expected `quoted` or `concentrated`, got `{s}`")),
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl Common {
    pub fn apply(&self, c: &mut RunConfig) {
        set(&mut c.out, self.out.clone());
        set(&mut c.seed, self.seed);
        if let Some(path) = &self.data {
            c.data.path = Some(path.clone());
        }
        set(&mut c.data.dependent, self.dependent.clone());
        set(&mut c.data.explanatory, self.explanatory.clone());
        if let Some(id) = &self.id {
            c.data.id = Some(id.clone());
        }
        if let Some(xy) = &self.coords {
            c.data.coords = Some((xy[0].clone(), xy[1].clone()));
        }
        if self.lenient {
            c.data.missing = MissingPolicy::Lenient;
        }
        set(&mut c.data.log_dependent, self.log_dependent);
    }
}

impl AdmmArgs {
    pub fn apply(&self, c: &mut RunConfig) {
        let a = &mut c.admm;
        set(&mut a.lambda1, self.lambda1);
        set(&mut a.rho1, self.rho1);
        set(&mut a.eps_abs, self.eps_abs);
        set(&mut a.eps_rel, self.eps_rel);
        set(&mut a.max_iter, self.max_iter);
        set(&mut a.adaptive_rho, self.adaptive_rho);
        set(&mut a.w_update, self.w_update);
        if self.paper_literal {
            a.paper_literal = true;
        }
    }
}

impl SweepArgs {
    pub fn apply(&self, c: &mut RunConfig) {
        if let Some(l) = &self.lambdas {
            c.sweep.lambdas = Some(l.clone());
        }
        set(&mut c.sweep.max, self.lambda_max);
        set(&mut c.sweep.step, self.lambda_step);
        set(&mut c.sweep.warm_start, self.warm_start);
    }
}

impl SarArgs {
    pub fn apply(&self, c: &mut RunConfig) {
        set(&mut c.sar.k_neighbours, self.k_neighbours);
        if let Some(e) = &self.edges {
            c.sar.edges = Some(e.clone());
        }
        set(&mut c.sar.objective, self.objective);
    }
}

impl ClusterArgs {
    pub fn apply(&self, c: &mut RunConfig) {
        if let Some(w) = &self.w {
            c.cluster.w = Some(w.clone());
        }
        if let Some(k) = self.k {
            c.cluster.k = Some(k);
        }
    }
}

impl SpilloverArgs {
    pub fn apply(&self, c: &mut RunConfig) {
        let s = &mut c.spillover;
        for (slot, value) in [(&mut s.scenario, &self.scenario), (&mut s.w, &self.w), (&mut s.beta, &self.beta), (&mut s.clusters, &self.clusters)] {
            if let Some(v) = value {
                *slot = Some(v.clone());
            }
        }
    }
}

impl SynthArgs {
    pub fn apply(&self, c: &mut RunConfig) {
        let s = &mut c.synth;
        set(&mut s.n, self.n);
        set(&mut s.p, self.p);
        set(&mut s.density, self.density);
        set(&mut s.spectral_scale, self.spectral_scale);
        set(&mut s.noise_sigma, self.noise_sigma);
        if let Some(b) = self.blocks {
            s.n_blocks = Some(b);
        }
    }
}

impl BenchArgs {
    pub fn apply(&self, c: &mut RunConfig) {
        let b = &mut c.bench;
        set(&mut b.n, self.n);
        if self.no_scaling {
            b.scaling = false;
        }
        set(&mut b.sizes, self.sizes.clone());
        set(&mut b.p, self.p);
        set(&mut b.admm.lambda1, self.lambda1);
    }
}
