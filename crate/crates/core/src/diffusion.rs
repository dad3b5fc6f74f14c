//! Forward noising and unguided reverse sampling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{Checkpoint, Tensor};
use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::latent::Latent;
use crate::schedule::NoiseSchedule;

/// Reverse update rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SamplerKind {
    /// DDPM posterior-mean step plus posterior-variance noise.
    #[default]
    Ancestral,
    /// Noise-free DDIM update; ignores the supplied noise.
    Deterministic,
}

/// `sqrt(alpha_bar_t) * z0 + sqrt(1 - alpha_bar_t) * noise`.
pub fn forward_sample(z0: &Latent, t: usize, schedule: &NoiseSchedule, noise: &Latent) -> Result<Latent> {
    schedule.check_timestep(t)?;
    noise.check_dim(z0.dim())?;
    let ab = schedule.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(Latent::new(z0.as_slice().iter().zip(noise.as_slice()).map(|(z, e)| a * z + b * e).collect()))
}

/// Noise-free part of the reverse step from level `t` to `t - 1`.
pub fn denoise_mean(
    d: &Denoiser,
    z_t: &Latent,
    t: usize,
    label: usize,
    schedule: &NoiseSchedule,
    kind: SamplerKind,
) -> Result<Latent> {
    schedule.check_timestep(t)?;
    let eps = d.predict_noise(z_t, t, label)?;
    let out = match kind {
        SamplerKind::Ancestral => {
            let coef = schedule.beta(t) / (1.0 - schedule.alpha_bar(t)).sqrt();
            let inv = 1.0 / schedule.alpha(t).sqrt();
            z_t.as_slice().iter().zip(eps.as_slice()).map(|(z, e)| inv * (z - coef * e)).collect()
        }
        SamplerKind::Deterministic => {
            let ab = schedule.alpha_bar(t);
            let ab_prev = schedule.alpha_bar_prev(t);
            z_t.as_slice()
                .iter()
                .zip(eps.as_slice())
                .map(|(z, e)| {
                    let x0 = (z - (1.0 - ab).sqrt() * e) / ab.sqrt();
                    ab_prev.sqrt() * x0 + (1.0 - ab_prev).sqrt() * e
                })
                .collect()
        }
    };
    Ok(Latent::new(out))
}

/// One reverse step `z_t -> z_{t-1}`. Noise is added only for `t > 1`.
pub fn denoise_step(
    d: &Denoiser,
    z_t: &Latent,
    t: usize,
    label: usize,
    schedule: &NoiseSchedule,
    noise: &Latent,
    kind: SamplerKind,
) -> Result<Latent> {
    let mean = denoise_mean(d, z_t, t, label, schedule, kind)?;
    if t == 1 || kind == SamplerKind::Deterministic {
        return Ok(mean);
    }
    noise.check_dim(mean.dim())?;
    Ok(mean.axpy(schedule.posterior_variance(t).sqrt(), noise))
}

/// Random source driving a reverse chain: the initial latent and one
/// noise draw per step with `t > 1`, in sampling order.
pub fn chain_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Draws `z_T` and runs the reverse chain to `z_0`, recording every
/// intermediate latent (`z_T` first, `z_0` last).
pub fn sample_trajectory(
    d: &Denoiser,
    label: usize,
    schedule: &NoiseSchedule,
    seed: u64,
    kind: SamplerKind,
) -> Result<Vec<Latent>> {
    d.check_label(label)?;
    let dim = d.latent_dim();
    let mut rng = chain_rng(seed);
    let mut z = Latent::gaussian(dim, &mut rng);
    let mut traj = Vec::with_capacity(schedule.len() + 1);
    traj.push(z.clone());
    for step in 1..=schedule.len() {
        let t = schedule.timestep_for_step(step);
        let noise = step_noise(t, dim, &mut rng);
        z = denoise_step(d, &z, t, label, schedule, &noise, kind)?;
        if !z.is_finite() {
            return Err(Error::NonFinite(format!("sample diverged at timestep {t}")));
        }
        traj.push(z.clone());
    }
    Ok(traj)
}

/// Final `z_0` of [`sample_trajectory`].
pub fn sample(d: &Denoiser, label: usize, schedule: &NoiseSchedule, seed: u64, kind: SamplerKind) -> Result<Latent> {
    Ok(sample_trajectory(d, label, schedule, seed, kind)?.pop().expect("trajectory is non-empty"))
}

pub(crate) fn step_noise(t: usize, dim: usize, rng: &mut ChaCha8Rng) -> Latent {
    if t > 1 {
        Latent::gaussian(dim, rng)
    } else {
        Latent::zeros(dim)
    }
}

pub(crate) fn schedule_tensors(schedule: &NoiseSchedule) -> Tensor {
    Tensor::new("schedule.betas", vec![schedule.len()], schedule.betas().to_vec())
}

pub(crate) fn schedule_from_checkpoint(ckpt: &Checkpoint) -> Result<NoiseSchedule> {
    NoiseSchedule::from_betas(ckpt.tensor("schedule.betas")?.to_vec())
}
