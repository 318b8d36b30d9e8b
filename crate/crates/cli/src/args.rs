use std::path::PathBuf;

use clap::{Parser, ValueEnum};
use funfx_core::simlab::StructureSpec;
use funfx_core::{BandCenter, BootstrapKind, NullResampling, PointwiseMethod};

use crate::config::{Command, Experiment, RunConfig};
use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StructureArg {
    Linear,
    LinearInteraction,
    PartialLinear,
    Bivariate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Data,
    Residual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Normal,
    Quantile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CenterArg {
    Mean,
    Fit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ResamplingArg {
    Literal,
    Residual,
}

/// Fixed-effects estimation and bootstrap inference for correlated functional data.
///
/// Settings come from the defaults, then `--config`, then the flags below.
#[derive(Debug, Parser)]
#[command(name = "funfx", version)]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Long-format CSV input.
    #[arg(long, short)]
    pub input: Option<PathBuf>,
    #[arg(long, short)]
    pub output_dir: Option<PathBuf>,
    /// Transform responses by ln(1 + y).
    #[arg(long)]
    pub log1p: bool,
    #[arg(long, value_enum)]
    pub structure: Option<StructureArg>,
    #[arg(long)]
    pub d_t: Option<usize>,
    #[arg(long)]
    pub d_x: Option<usize>,
    /// Bootstrap flavor for bands and coverage studies.
    #[arg(long, value_enum)]
    pub kind: Option<KindArg>,
    /// Bootstrap replicates (bands, test and simulations).
    #[arg(long, short = 'B')]
    pub replicates: Option<usize>,
    /// Seed for every random component of the command.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    #[arg(long)]
    pub grid_t: Option<usize>,
    #[arg(long)]
    pub grid_x: Option<usize>,
    /// Normal draws for the joint band.
    #[arg(long)]
    pub draws: Option<usize>,
    /// Standardize joint-band deviations by √s instead of s.
    #[arg(long)]
    pub legacy_sqrt_s: bool,
    #[arg(long, value_enum)]
    pub center: Option<CenterArg>,
    #[arg(long)]
    pub null_d_t: Option<usize>,
    #[arg(long, value_enum)]
    pub resampling: Option<ResamplingArg>,
    #[arg(long, value_enum)]
    pub experiment: Option<Experiment>,
    #[arg(long)]
    pub nsim: Option<usize>,
    /// Write the generated dataset alongside a simulation report.
    #[arg(long)]
    pub export_dataset: bool,
    /// Worker threads; 0 uses all cores.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Run on the calling thread only.
    #[arg(long)]
    pub single_threaded: bool,
    /// Print the effective configuration as TOML and exit.
    #[arg(long)]
    pub print_config: bool,
}

impl Cli {
    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        c.command = self.command;
        if let Some(p) = &self.input {
            c.input_path = Some(p.clone());
        }
        if let Some(p) = &self.output_dir {
            c.output_dir = p.clone();
        }
        c.log1p |= self.log1p;

        let (old_t, old_x) = match c.model.structure {
            StructureSpec::Bivariate { d_t, d_x } => (d_t, d_x),
            StructureSpec::PartialLinear { d_t } => (d_t, 7),
            _ => (7, 7),
        };
        let (d_t, d_x) = (self.d_t.unwrap_or(old_t), self.d_x.unwrap_or(old_x));
        let structure = self.structure.or(match c.model.structure {
            StructureSpec::Linear => Some(StructureArg::Linear),
            StructureSpec::LinearInteraction => Some(StructureArg::LinearInteraction),
            StructureSpec::PartialLinear { .. } => Some(StructureArg::PartialLinear),
            StructureSpec::Bivariate { .. } => Some(StructureArg::Bivariate),
        });
        if self.d_x.is_some() && !matches!(structure, Some(StructureArg::Bivariate)) {
            return Err(CliError::Config(
                "--d-x applies only to the bivariate structure".into(),
            ));
        }
        c.model.structure = match structure.expect("set above") {
            StructureArg::Linear => StructureSpec::Linear,
            StructureArg::LinearInteraction => StructureSpec::LinearInteraction,
            StructureArg::PartialLinear => StructureSpec::PartialLinear { d_t },
            StructureArg::Bivariate => StructureSpec::Bivariate { d_t, d_x },
        };
        if c.command == Command::Simulate
            && (self.structure.is_some() || self.d_t.is_some() || self.d_x.is_some())
        {
            c.sim.coverage.structure = c.model.structure;
            c.sim.size_power.structure = c.model.structure;
        }

        if let Some(k) = self.kind {
            let k = match k {
                KindArg::Data => BootstrapKind::Data,
                KindArg::Residual => BootstrapKind::Residual,
            };
            c.bootstrap.kind = k;
            c.sim.coverage.kind = k;
        }
        if let Some(b) = self.replicates {
            c.bootstrap.replicates = b;
            c.test.replicates = b;
            c.sim.coverage.replicates = b;
            c.sim.size_power.test.replicates = b;
        }
        if let Some(s) = self.seed {
            c.bootstrap.seed = s;
            c.test.seed = s;
            c.sim.dgp.seed = s;
        }
        if let Some(a) = self.alpha {
            c.band.alpha = a;
            c.test.alpha = a;
        }
        if let Some(m) = self.method {
            let m = match m {
                MethodArg::Normal => PointwiseMethod::Normal,
                MethodArg::Quantile => PointwiseMethod::Quantile,
            };
            c.band.method = m;
            c.sim.coverage.pointwise = m;
        }
        if let Some(g) = self.grid_t {
            c.band.grid_t = g;
        }
        if let Some(g) = self.grid_x {
            c.band.grid_x = g;
        }
        if let Some(d) = self.draws {
            c.band.draws = d;
            c.sim.coverage.joint_draws = d;
        }
        if self.legacy_sqrt_s {
            c.band.legacy_sqrt_s = true;
            c.sim.coverage.legacy_sqrt_s = true;
        }
        if let Some(center) = self.center {
            let center = match center {
                CenterArg::Mean => BandCenter::Mean,
                CenterArg::Fit => BandCenter::Fit,
            };
            c.band.center = center;
            c.sim.coverage.center = center;
        }
        if let Some(d) = self.null_d_t {
            c.test.null_d_t = d;
            c.sim.size_power.test.null_d_t = d;
        }
        if let Some(r) = self.resampling {
            let r = match r {
                ResamplingArg::Literal => NullResampling::Literal,
                ResamplingArg::Residual => NullResampling::Residual,
            };
            c.test.resampling = r;
            c.sim.size_power.test.resampling = r;
        }
        if let Some(e) = self.experiment {
            c.sim.experiment = e;
        }
        if let Some(n) = self.nsim {
            c.sim.nsim = n;
        }
        c.sim.export_dataset |= self.export_dataset;
        if let Some(t) = self.threads {
            c.threads = t;
        }
        if self.single_threaded {
            c.threads = 1;
        }
        Ok(c)
    }
}
