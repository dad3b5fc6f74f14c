//! End-to-end training of every benchmark component from a [`BiasSpec`].

use super::data::{make_biased_dataset, BiasSpec, LabeledPoint};
use crate::autoencoder::{train_autoencoder, AutoEncoder, AutoEncoderConfig, AutoEncoderMode};
use crate::denoiser::{train_denoiser, DenoiserConfig, TrainConfig, TrainReport};
use crate::diffusion::{sample, SamplerKind};
use crate::error::Result;
use crate::guidance::GuidanceConfig;
use crate::model::DiffusionModel;
use crate::prior::{train_projector, Exemplar, Projector, ProjectorReport, ProjectorTrainConfig, SamplePools};
use crate::schedule::NoiseSchedule;

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSetup {
    pub spec: BiasSpec,
    pub dataset_size: usize,
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub autoencoder: AutoEncoderMode,
    /// Latent width for the linear autoencoder; ignored for identity.
    pub latent_dim: usize,
    pub hidden: usize,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for DiffusionSetup {
    fn default() -> Self {
        Self {
            spec: BiasSpec::benchmark(),
            dataset_size: 4000,
            steps: 30,
            beta_min: 1e-3,
            beta_max: 0.35,
            autoencoder: AutoEncoderMode::Identity,
            latent_dim: 2,
            hidden: 64,
            train: TrainConfig { epochs: 150, batch_size: 64, learning_rate: 2e-3, seed: 0 },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedDiffusion {
    pub model: DiffusionModel,
    pub data: Vec<LabeledPoint>,
    pub report: TrainReport,
}

/// Draws the biased training set, fits the autoencoder, then trains the
/// denoiser on encoded latents.
pub fn train_diffusion(setup: &DiffusionSetup) -> Result<TrainedDiffusion> {
    let data = make_biased_dataset(&setup.spec, setup.dataset_size, setup.seed)?;
    let raw: Vec<Vec<f64>> = data.iter().map(|p| p.values.clone()).collect();
    let autoencoder = match setup.autoencoder {
        AutoEncoderMode::Identity => AutoEncoder::identity(setup.spec.dim()),
        AutoEncoderMode::Linear => train_autoencoder(
            &raw,
            &AutoEncoderConfig { latent_dim: setup.latent_dim, seed: setup.seed, ..Default::default() },
        )?,
    };
    let examples = data
        .iter()
        .map(|p| Ok(crate::denoiser::TrainingExample { latent: autoencoder.encode(&p.values)?, label: p.group }))
        .collect::<Result<Vec<_>>>()?;
    let schedule = NoiseSchedule::linear(setup.steps, setup.beta_min, setup.beta_max)?;
    let cfg = DenoiserConfig {
        latent_dim: autoencoder.latent_dim(),
        num_classes: setup.spec.num_groups(),
        hidden: setup.hidden,
        ..Default::default()
    };
    let train = TrainConfig { seed: setup.train.seed ^ setup.seed, ..setup.train.clone() };
    let (denoiser, report) = train_denoiser(&examples, &schedule, cfg, &train)?;
    Ok(TrainedDiffusion { model: DiffusionModel { denoiser, schedule, autoencoder }, data, report })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolSetup {
    /// Fair exemplars per pool, drawn from the balanced version of the spec.
    pub positives: usize,
    /// Stereotyped exemplars, drawn as unguided samples of the model.
    pub negatives: usize,
    pub seed: u64,
}

impl Default for PoolSetup {
    fn default() -> Self {
        Self { positives: 200, negatives: 200, seed: 1 }
    }
}

/// Positives from the balanced mixture; negatives from the model itself,
/// labels cycling over groups.
pub fn build_pools(model: &DiffusionModel, spec: &BiasSpec, setup: &PoolSetup) -> Result<SamplePools> {
    let positives = make_biased_dataset(&spec.balanced(), setup.positives.max(1), setup.seed)?
        .iter()
        .map(LabeledPoint::exemplar)
        .collect();
    let classes = model.denoiser.config().num_classes;
    let negatives = (0..setup.negatives)
        .map(|i| {
            let label = i % classes;
            // offset keeps negative chains disjoint from evaluation seeds
            let seed = setup.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1 << 40).wrapping_add(i as u64);
            let z = sample(&model.denoiser, label, &model.schedule, seed, SamplerKind::Ancestral)?;
            Ok(Exemplar { label, values: model.autoencoder.decode(&z)? })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SamplePools { positives, negatives })
}

/// Trained projector and the report of its run.
pub fn train_prior(pools: &SamplePools, ae: &AutoEncoder, cfg: &ProjectorTrainConfig) -> Result<(Projector, ProjectorReport)> {
    train_projector(pools, ae, cfg)
}

/// Guidance weights as published with the step size rescaled for toy
/// latents.
///
/// The gradient of both losses scales with `1 / ‖z_t‖`, so a step size
/// tuned for latents with thousands of entries overshoots by orders of
/// magnitude on two-dimensional ones.
pub fn desk_guidance() -> GuidanceConfig {
    GuidanceConfig { eta: DESK_ETA, ..GuidanceConfig::default() }
}

pub const DESK_ETA: f64 = 0.0025;
