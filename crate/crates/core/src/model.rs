//! Bundles persisted together by the diffusion checkpoint.

use std::path::Path;

use crate::autoencoder::AutoEncoder;
use crate::checkpoint::Checkpoint;
use crate::denoiser::Denoiser;
use crate::diffusion::{schedule_from_checkpoint, schedule_tensors};
use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;

pub const DIFFUSION_KIND: &str = "diffusion";

/// Trained denoiser with the schedule and autoencoder it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionModel {
    pub denoiser: Denoiser,
    pub schedule: NoiseSchedule,
    pub autoencoder: AutoEncoder,
}

impl DiffusionModel {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(DIFFUSION_KIND);
        c.push(schedule_tensors(&self.schedule));
        c.extend(self.autoencoder.to_tensors());
        c.extend(self.denoiser.to_tensors("denoiser"));
        c
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.kind != DIFFUSION_KIND {
            return Err(Error::Checkpoint(format!("expected a `{DIFFUSION_KIND}` checkpoint, found `{}`", ckpt.kind)));
        }
        let model = Self {
            schedule: schedule_from_checkpoint(ckpt)?,
            autoencoder: AutoEncoder::from_checkpoint(ckpt)?,
            denoiser: Denoiser::from_checkpoint(ckpt, "denoiser")?,
        };
        if model.autoencoder.latent_dim() != model.denoiser.latent_dim() {
            return Err(Error::Checkpoint("autoencoder and denoiser latent sizes differ".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
