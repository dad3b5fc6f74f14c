//! Run configuration: a TOML file, built-in defaults, and flag overrides.
//!
//! Precedence, highest first: command-line flags, the config file, the
//! built-in defaults below.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use latent_corrector::autoencoder::AutoEncoderMode;
use latent_corrector::bench::pipeline::{desk_guidance, DiffusionSetup, PoolSetup};
use latent_corrector::bench::{BiasSpec, GroupSpec};
use latent_corrector::denoiser::TrainConfig;
use latent_corrector::diffusion::SamplerKind;
use latent_corrector::guidance::{Application, GuidanceConfig};
use latent_corrector::prior::ProjectorTrainConfig;

use crate::CliError;

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    #[serde(default)]
    pub paths: PathsSection,
    pub dataset: Option<DatasetSection>,
    #[serde(default)]
    pub diffusion: DiffusionSection,
    #[serde(default)]
    pub pools: PoolsSection,
    #[serde(default)]
    pub prior: PriorSection,
    #[serde(default)]
    pub guidance: GuidanceSection,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    /// Output directory; other relative paths resolve against it.
    pub out: PathBuf,
    pub diffusion: PathBuf,
    pub prior: PathBuf,
    pub positives: PathBuf,
    pub negatives: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            out: "out".into(),
            diffusion: "diffusion.ckpt".into(),
            prior: "prior.ckpt".into(),
            positives: "fair_pool.csv".into(),
            negatives: "negative_pool.csv".into(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub size: usize,
    pub attribute_offset: Vec<f64>,
    pub groups: Vec<GroupSection>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GroupSection {
    pub mean: Vec<f64>,
    pub cov_scale: f64,
    pub proportion: f64,
    pub attribute_prob: f64,
}

impl DatasetSection {
    fn benchmark() -> Self {
        let spec = BiasSpec::benchmark();
        Self {
            size: DiffusionSetup::default().dataset_size,
            attribute_offset: spec.attribute_offset,
            groups: spec
                .groups
                .into_iter()
                .map(|g| GroupSection { mean: g.mean, cov_scale: g.cov_scale, proportion: g.proportion, attribute_prob: g.attribute_prob })
                .collect(),
        }
    }

    pub fn spec(&self) -> BiasSpec {
        BiasSpec {
            attribute_offset: self.attribute_offset.clone(),
            groups: self
                .groups
                .iter()
                .map(|g| GroupSpec { mean: g.mean.clone(), cov_scale: g.cov_scale, proportion: g.proportion, attribute_prob: g.attribute_prob })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum AutoEncoderName {
    Identity,
    Linear,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionSection {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub autoencoder: AutoEncoderName,
    pub latent_dim: usize,
}

impl Default for DiffusionSection {
    fn default() -> Self {
        let d = DiffusionSetup::default();
        Self {
            steps: d.steps,
            beta_min: d.beta_min,
            beta_max: d.beta_max,
            hidden: d.hidden,
            epochs: d.train.epochs,
            batch_size: d.train.batch_size,
            learning_rate: d.train.learning_rate,
            autoencoder: AutoEncoderName::Identity,
            latent_dim: d.latent_dim,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PoolsSection {
    pub positives: usize,
    pub negatives: usize,
}

impl Default for PoolsSection {
    fn default() -> Self {
        let p = PoolSetup::default();
        Self { positives: p.positives, negatives: p.negatives }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PriorSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub tau: f64,
    pub negatives_per_batch: usize,
    pub output_dim: Option<usize>,
}

impl Default for PriorSection {
    fn default() -> Self {
        let p = ProjectorTrainConfig::default();
        Self {
            epochs: p.train.epochs,
            batch_size: p.train.batch_size,
            learning_rate: p.train.learning_rate,
            tau: p.tau,
            negatives_per_batch: p.negatives_per_batch,
            output_dim: p.output_dim,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ApplicationName {
    Double,
    Single,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SamplerName {
    Ancestral,
    Deterministic,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct GuidanceSection {
    pub lambda_tc: f64,
    pub lambda_c: f64,
    pub eta: f64,
    pub tau_prime: f64,
    pub window_start: usize,
    pub window_end: usize,
    pub pools_per_step: usize,
    pub application: ApplicationName,
    pub sampler: SamplerName,
}

impl Default for GuidanceSection {
    fn default() -> Self {
        let g = desk_guidance();
        Self {
            lambda_tc: g.lambda_tc,
            lambda_c: g.lambda_c,
            eta: g.eta,
            tau_prime: g.tau_prime,
            window_start: g.window_start,
            window_end: g.window_end,
            pools_per_step: g.pools_per_step,
            application: ApplicationName::Double,
            sampler: SamplerName::Ancestral,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub samples: usize,
    /// Diversity cluster count; defaults to the number of groups.
    pub clusters: Option<usize>,
    pub max_pairs: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { samples: 500, clusters: None, max_pairs: 2000 }
    }
}

/// Values from flags that override the file.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// First corrected sampling step (1 = noisiest).
    #[arg(long, global = true)]
    pub window_start: Option<usize>,
    /// Last corrected sampling step; below the start disables correction.
    #[arg(long, global = true)]
    pub window_end: Option<usize>,
    #[arg(long, global = true)]
    pub eta: Option<f64>,
    #[arg(long, global = true)]
    pub lambda_tc: Option<f64>,
    #[arg(long, global = true)]
    pub lambda_c: Option<f64>,
    #[arg(long, global = true)]
    pub tau_prime: Option<f64>,
    #[arg(long, global = true, value_enum)]
    pub application: Option<ApplicationName>,
    #[arg(long, global = true, value_enum)]
    pub sampler: Option<SamplerName>,
}

/// Fully resolved configuration for one command.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub file: FileConfig,
    pub guidance: GuidanceConfig,
}

impl FileConfig {
    /// Configuration used when no file is given.
    pub fn builtin() -> Self {
        Self {
            seed: Some(0),
            paths: PathsSection::default(),
            dataset: Some(DatasetSection::benchmark()),
            diffusion: DiffusionSection::default(),
            pools: PoolsSection::default(),
            prior: PriorSection::default(),
            guidance: GuidanceSection::default(),
            eval: EvalSection::default(),
        }
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("{}: {e}", origin.display())))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, path)
    }
}

impl RunConfig {
    pub fn resolve(
        file: Option<FileConfig>,
        seed: Option<u64>,
        out: Option<PathBuf>,
        o: &Overrides,
    ) -> Result<Self, CliError> {
        let file = file.unwrap_or_else(FileConfig::builtin);
        let seed = seed
            .or(file.seed)
            .ok_or_else(|| CliError::Config("no seed: set `seed` in the config file or pass --seed".into()))?;
        let out = out.unwrap_or_else(|| file.paths.out.clone());
        let g = &file.guidance;
        let application = o.application.unwrap_or(g.application);
        let sampler = o.sampler.unwrap_or(g.sampler);
        let guidance = GuidanceConfig {
            lambda_tc: o.lambda_tc.unwrap_or(g.lambda_tc),
            lambda_c: o.lambda_c.unwrap_or(g.lambda_c),
            eta: o.eta.unwrap_or(g.eta),
            tau_prime: o.tau_prime.unwrap_or(g.tau_prime),
            window_start: o.window_start.unwrap_or(g.window_start),
            window_end: o.window_end.unwrap_or(g.window_end),
            pools_per_step: g.pools_per_step,
            application: match application {
                ApplicationName::Double => Application::Double,
                ApplicationName::Single => Application::Single,
            },
            sampler: match sampler {
                SamplerName::Ancestral => SamplerKind::Ancestral,
                SamplerName::Deterministic => SamplerKind::Deterministic,
            },
        };
        Ok(Self { seed, out, file, guidance })
    }

    pub fn path(&self, p: &Path) -> PathBuf {
        self.out.join(p)
    }

    pub fn spec(&self) -> Result<BiasSpec, CliError> {
        self.file
            .dataset
            .as_ref()
            .map(DatasetSection::spec)
            .ok_or_else(|| CliError::Config("config has no [dataset] section".into()))
    }

    pub fn diffusion_setup(&self) -> Result<DiffusionSetup, CliError> {
        let d = &self.file.diffusion;
        let dataset = self.file.dataset.as_ref().ok_or_else(|| CliError::Config("config has no [dataset] section".into()))?;
        Ok(DiffusionSetup {
            spec: dataset.spec(),
            dataset_size: dataset.size,
            steps: d.steps,
            beta_min: d.beta_min,
            beta_max: d.beta_max,
            autoencoder: match d.autoencoder {
                AutoEncoderName::Identity => AutoEncoderMode::Identity,
                AutoEncoderName::Linear => AutoEncoderMode::Linear,
            },
            latent_dim: d.latent_dim,
            hidden: d.hidden,
            train: TrainConfig { epochs: d.epochs, batch_size: d.batch_size, learning_rate: d.learning_rate, seed: 0 },
            seed: self.seed,
        })
    }

    pub fn pool_setup(&self) -> PoolSetup {
        PoolSetup { positives: self.file.pools.positives, negatives: self.file.pools.negatives, seed: self.seed.wrapping_add(1) }
    }

    pub fn projector_config(&self) -> ProjectorTrainConfig {
        let p = &self.file.prior;
        ProjectorTrainConfig {
            train: TrainConfig { epochs: p.epochs, batch_size: p.batch_size, learning_rate: p.learning_rate, seed: self.seed },
            tau: p.tau,
            output_dim: p.output_dim,
            negatives_per_batch: p.negatives_per_batch,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_matches_shipped_default_file() {
        let text = include_str!("../../../configs/default.toml");
        let parsed = FileConfig::parse(text, Path::new("default.toml")).unwrap();
        assert_eq!(parsed, FileConfig::builtin());
    }

    #[test]
    fn unknown_key_is_named() {
        let err = FileConfig::parse("seed = 1\n[guidance]\netaa = 2.0\n", Path::new("c.toml")).unwrap_err();
        assert!(err.to_string().contains("etaa"), "{err}");
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let file = FileConfig::parse("seed = 5\n[guidance]\neta = 0.5\nlambda_c = 10.0\n", Path::new("c.toml")).unwrap();
        let o = Overrides { eta: Some(0.25), ..Default::default() };
        let run = RunConfig::resolve(Some(file), None, None, &o).unwrap();
        assert_eq!(run.seed, 5);
        assert_eq!(run.guidance.eta, 0.25);
        assert_eq!(run.guidance.lambda_c, 10.0);
        assert_eq!(run.guidance.lambda_tc, desk_guidance().lambda_tc);
        let run = RunConfig::resolve(Some(run.file), Some(9), None, &Overrides::default()).unwrap();
        assert_eq!((run.seed, run.guidance.eta), (9, 0.5));
    }

    #[test]
    fn seed_is_mandatory() {
        let file = FileConfig::parse("[eval]\nsamples = 3\n", Path::new("c.toml")).unwrap();
        assert!(RunConfig::resolve(Some(file), None, None, &Overrides::default()).is_err());
    }

    #[test]
    fn missing_dataset_is_config_error() {
        let file = FileConfig::parse("seed = 1\n", Path::new("c.toml")).unwrap();
        let run = RunConfig::resolve(Some(file), None, None, &Overrides::default()).unwrap();
        assert!(matches!(run.diffusion_setup(), Err(CliError::Config(_))));
    }
}
