//! Run configuration: a TOML file, then command-line overrides.

use std::path::{Path, PathBuf};

use funfx_core::simlab::{CoverageSpec, DgpConfig, SizePowerSpec, StructureSpec};
use funfx_core::{BandCenter, BootstrapKind, LambdaGrid, NullResampling, PointwiseMethod};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    #[default]
    Fit,
    Bands,
    Test,
    Simulate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::Fit => "fit",
            Self::Bands => "bands",
            Self::Test => "test",
            Self::Simulate => "simulate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    /// Long-format CSV; required by `fit`, `bands` and `test`.
    pub input_path: Option<PathBuf>,
    /// Apply `y → ln(1 + y)` on ingestion.
    pub log1p: bool,
    pub model: ModelConfig,
    pub bootstrap: BootstrapConfig,
    pub band: BandConfig,
    pub test: TestConfig,
    pub sim: SimConfig,
    pub output_dir: PathBuf,
    /// Worker threads; 0 uses every available core, 1 runs single-threaded.
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: Command::Fit,
            input_path: None,
            log1p: false,
            model: ModelConfig::default(),
            bootstrap: BootstrapConfig::default(),
            band: BandConfig::default(),
            test: TestConfig::default(),
            sim: SimConfig::default(),
            output_dir: PathBuf::from("funfx-out"),
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Mean structure and basis sizes (`kind` = linear, linear_interaction,
    /// partial_linear, bivariate).
    pub structure: StructureSpec,
    /// Smoothing grid: `lambda_points` log-spaced values per axis on
    /// `[lambda_min, lambda_max]`.
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub lambda_points: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            structure: StructureSpec::Bivariate { d_t: 7, d_x: 7 },
            lambda_min: 1e-4,
            lambda_max: 1e4,
            lambda_points: 7,
        }
    }
}

impl ModelConfig {
    pub fn lambda_grid(&self) -> Result<LambdaGrid> {
        if !(self.lambda_min > 0.0
            && self.lambda_max >= self.lambda_min
            && self.lambda_max.is_finite())
        {
            return Err(CliError::Config(format!(
                "invalid smoothing range [{}, {}]",
                self.lambda_min, self.lambda_max
            )));
        }
        if self.lambda_points == 0 {
            return Err(CliError::Config("lambda_points must be positive".into()));
        }
        Ok(LambdaGrid::log_spaced(
            self.lambda_min,
            self.lambda_max,
            self.lambda_points,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    pub kind: BootstrapKind,
    pub replicates: usize,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            kind: BootstrapKind::Residual,
            replicates: 300,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BandConfig {
    pub alpha: f64,
    pub grid_t: usize,
    pub grid_x: usize,
    /// Normal draws for the joint band.
    pub draws: usize,
    pub method: PointwiseMethod,
    pub legacy_sqrt_s: bool,
    pub center: BandCenter,
}

impl Default for BandConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            grid_t: 101,
            grid_x: 101,
            draws: 1000,
            method: PointwiseMethod::Normal,
            legacy_sqrt_s: false,
            center: BandCenter::Mean,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestConfig {
    pub replicates: usize,
    pub seed: u64,
    pub null_d_t: usize,
    pub resampling: NullResampling,
    /// Quadrature grid for the L2 statistic.
    pub grid_t: usize,
    pub grid_x: usize,
    /// Level reported in `rejects`.
    pub alpha: f64,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self {
            replicates: 300,
            seed: 0,
            null_d_t: 7,
            resampling: NullResampling::Literal,
            grid_t: 101,
            grid_x: 101,
            alpha: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Coverage,
    #[default]
    SizePower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub experiment: Experiment,
    /// Monte Carlo replications; replaces the `nsim` of both experiment specs.
    pub nsim: usize,
    pub dgp: DgpConfig,
    pub coverage: CoverageSpec,
    pub size_power: SizePowerSpec,
    /// Also write the dataset generated from `dgp` as long-format CSV.
    pub export_dataset: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            experiment: Experiment::SizePower,
            nsim: 200,
            dgp: DgpConfig::default(),
            coverage: CoverageSpec::default(),
            size_power: SizePowerSpec::default(),
            export_dataset: false,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("invalid configuration: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes to TOML")
    }

    /// Checks that do not need the data.
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, a: f64| {
            if a > 0.0 && a < 1.0 {
                Ok(())
            } else {
                Err(CliError::Config(format!(
                    "{name} must lie in (0, 1), got {a}"
                )))
            }
        };
        unit("band.alpha", self.band.alpha)?;
        unit("test.alpha", self.test.alpha)?;
        self.model.lambda_grid()?;
        if self.bootstrap.replicates == 0 || self.test.replicates == 0 {
            return Err(CliError::Config("replicate counts must be positive".into()));
        }
        if self.sim.nsim == 0 {
            return Err(CliError::Config("sim.nsim must be positive".into()));
        }
        if self.command != Command::Simulate && self.input_path.is_none() {
            return Err(CliError::Config(format!(
                "`{}` needs an input file",
                self.command.name()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use funfx_core::simlab::{MeanFunction, VisitCount};

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn non_default_round_trip() {
        let mut c = RunConfig::default();
        c.command = Command::Simulate;
        c.input_path = Some("data/x.csv".into());
        c.model.structure = StructureSpec::PartialLinear { d_t: 9 };
        c.model.lambda_min = 0.123456789e-3;
        c.bootstrap.kind = BootstrapKind::Data;
        c.band.method = PointwiseMethod::Quantile;
        c.band.center = BandCenter::Fit;
        c.test.resampling = NullResampling::Residual;
        c.sim.experiment = Experiment::Coverage;
        c.sim.dgp.tau = Some(8.0);
        c.sim.dgp.visits = VisitCount::Uniform { lo: 5, hi: 9 };
        c.sim.dgp.mean = MeanFunction::power_family(4.0);
        c.sim.size_power.deltas = vec![0.01, 2.0, 4.0, 6.0];
        c.threads = 3;
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let c = RunConfig::from_toml("command = \"bands\"\n[band]\nalpha = 0.1\n").unwrap();
        assert_eq!(c.command, Command::Bands);
        assert_eq!(c.band.alpha, 0.1);
        assert_eq!(c.band.grid_t, 101);
        assert_eq!(c.bootstrap, BootstrapConfig::default());
    }

    #[test]
    fn unknown_key_is_config_error() {
        let e = RunConfig::from_toml("[band]\nalpah = 0.1\n").unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }
}
