//! Inference-time latent correction.
//!
//! Inside a window of sampling steps the latent is pushed along the
//! negative gradient of a weighted pair of contrastive losses: a direct
//! loss between the normalized latent and noised positive/negative
//! exemplars, and the same loss measured after the trained projector.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autoencoder::AutoEncoder;
use crate::denoiser::Denoiser;
use crate::diffusion::{self, denoise_mean, denoise_step, forward_sample, SamplerKind};
use crate::error::{Error, Result};
use crate::latent::{dot, Latent};
use crate::prior::{neg_log_softmax_first, normalize_backward, softmax, Projector, SamplePools, UnitVector};
use crate::schedule::NoiseSchedule;

/// How many denoiser applications a corrected step performs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Application {
    /// Reverse-step mean, gradient shift, then a full reverse step at the
    /// same timestep.
    #[default]
    Double,
    /// Gradient shift on `z_t`, then one reverse step.
    Single,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceConfig {
    /// Weight of the projected (prior) loss.
    pub lambda_tc: f64,
    /// Weight of the direct loss.
    pub lambda_c: f64,
    /// Gradient step size.
    pub eta: f64,
    /// Temperature of both guidance losses.
    pub tau_prime: f64,
    /// First corrected sampling step (1 = noisiest).
    pub window_start: usize,
    /// Last corrected sampling step, inclusive. `window_start > window_end`
    /// disables correction.
    pub window_end: usize,
    /// Positive/negative pairs drawn per corrected step; losses are averaged.
    pub pools_per_step: usize,
    pub application: Application,
    pub sampler: SamplerKind,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            lambda_tc: 9.0,
            lambda_c: 150.0,
            eta: 2.0,
            tau_prime: 0.1,
            window_start: 26,
            window_end: 30,
            pools_per_step: 1,
            application: Application::Double,
            sampler: SamplerKind::Ancestral,
        }
    }
}

impl GuidanceConfig {
    pub fn window_enabled(&self) -> bool {
        self.window_start <= self.window_end
    }

    pub fn in_window(&self, step: usize) -> bool {
        self.window_enabled() && (self.window_start..=self.window_end).contains(&step)
    }

    /// Window that corrects no step.
    pub fn disabled_window(mut self) -> Self {
        self.window_start = 1;
        self.window_end = 0;
        self
    }

    pub fn validate(&self, steps: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.lambda_tc >= 0.0 && self.lambda_c >= 0.0) {
            return bad(format!("loss weights must be non-negative, got {} and {}", self.lambda_tc, self.lambda_c));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return bad(format!("step size must be finite and non-negative, got {}", self.eta));
        }
        if !(self.tau_prime > 0.0) {
            return bad(format!("temperature must be positive, got {}", self.tau_prime));
        }
        if self.pools_per_step == 0 {
            return bad("pools_per_step must be at least 1".into());
        }
        if self.window_enabled() && (self.window_start < 1 || self.window_end > steps) {
            return bad(format!(
                "window [{}, {}] outside sampling steps 1..={steps}",
                self.window_start, self.window_end
            ));
        }
        Ok(())
    }

    fn check_loss_params(&self) -> Result<()> {
        if !(self.tau_prime > 0.0) {
            return Err(Error::InvalidConfig(format!("temperature must be positive, got {}", self.tau_prime)));
        }
        Ok(())
    }
}

/// Two-way contrastive loss `-log(s_p / (s_p + s_n))` for unit vectors at
/// temperature `tau`, plus its gradient with respect to `anchor`.
fn pair_loss(anchor: &[f64], pos: &[f64], neg: &[f64], tau: f64) -> (f64, Vec<f64>) {
    let logits = [dot(anchor, pos) / tau, dot(anchor, neg) / tau];
    let loss = neg_log_softmax_first(&logits);
    let probs = softmax(&logits);
    // dL/danchor = (p_pos - 1) pos / tau + p_neg neg / tau = p_neg (neg - pos) / tau
    let grad = pos.iter().zip(neg).map(|(p, n)| probs[1] * (n - p) / tau).collect();
    (loss, grad)
}

fn normalized(z: &Latent) -> Result<(UnitVector, f64)> {
    UnitVector::normalize(z.as_slice())
}

fn check_dims(z_t: &Latent, zp_t: &Latent, zn_t: &Latent) -> Result<()> {
    zp_t.check_dim(z_t.dim())?;
    zn_t.check_dim(z_t.dim())
}

/// Direct guidance loss on normalized latents.
pub fn direct_loss(z_t: &Latent, zp_t: &Latent, zn_t: &Latent, tau_prime: f64) -> Result<f64> {
    if !(tau_prime > 0.0) {
        return Err(Error::InvalidConfig(format!("temperature must be positive, got {tau_prime}")));
    }
    check_dims(z_t, zp_t, zn_t)?;
    let (a, _) = normalized(z_t)?;
    let (p, _) = normalized(zp_t)?;
    let (n, _) = normalized(zn_t)?;
    Ok(pair_loss(a.as_slice(), p.as_slice(), n.as_slice(), tau_prime).0)
}

/// Guidance loss measured after projecting every normalized latent.
pub fn prior_guidance_loss(z_t: &Latent, zp_t: &Latent, zn_t: &Latent, projector: &Projector, tau_prime: f64) -> Result<f64> {
    if !(tau_prime > 0.0) {
        return Err(Error::InvalidConfig(format!("temperature must be positive, got {tau_prime}")));
    }
    check_dims(z_t, zp_t, zn_t)?;
    let a = projector.project(&normalized(z_t)?.0)?;
    let p = projector.project(&normalized(zp_t)?.0)?;
    let n = projector.project(&normalized(zn_t)?.0)?;
    Ok(pair_loss(a.as_slice(), p.as_slice(), n.as_slice(), tau_prime).0)
}

/// `lambda_tc * prior_guidance_loss + lambda_c * direct_loss`.
pub fn total_loss(z_t: &Latent, zp_t: &Latent, zn_t: &Latent, projector: &Projector, cfg: &GuidanceConfig) -> Result<f64> {
    loss_and_gradient(z_t, &[(zp_t.clone(), zn_t.clone())], projector, cfg).map(|(l, _)| l)
}

/// Gradient of [`total_loss`] with respect to `z_t`; the exemplars are constants.
pub fn loss_gradient(z_t: &Latent, zp_t: &Latent, zn_t: &Latent, projector: &Projector, cfg: &GuidanceConfig) -> Result<Latent> {
    loss_and_gradient(z_t, &[(zp_t.clone(), zn_t.clone())], projector, cfg).map(|(_, g)| g)
}

/// Total loss averaged over exemplar pairs, and its gradient w.r.t. `z_t`.
/// Terms with zero weight are skipped entirely.
pub fn loss_and_gradient(
    z_t: &Latent,
    pairs: &[(Latent, Latent)],
    projector: &Projector,
    cfg: &GuidanceConfig,
) -> Result<(f64, Latent)> {
    cfg.check_loss_params()?;
    if pairs.is_empty() {
        return Err(Error::Empty("exemplar pairs".into()));
    }
    let (z_unit, z_len) = normalized(z_t)?;
    let z_unit_s = z_unit.as_slice();
    let tau = cfg.tau_prime;
    let scale = 1.0 / pairs.len() as f64;
    let projected_z = if cfg.lambda_tc != 0.0 { Some(projector.project_full(&z_unit)?) } else { None };

    let mut loss = 0.0;
    let mut grad_unit = vec![0.0; z_t.dim()];
    for (zp, zn) in pairs {
        check_dims(z_t, zp, zn)?;
        let (p, _) = normalized(zp)?;
        let (n, _) = normalized(zn)?;
        if cfg.lambda_c != 0.0 {
            let (l, g) = pair_loss(z_unit_s, p.as_slice(), n.as_slice(), tau);
            loss += scale * cfg.lambda_c * l;
            for (acc, gi) in grad_unit.iter_mut().zip(&g) {
                *acc += scale * cfg.lambda_c * gi;
            }
        }
        if let Some(a) = &projected_z {
            let p_hat = projector.project(&p)?;
            let n_hat = projector.project(&n)?;
            let (l, g) = pair_loss(a.unit.as_slice(), p_hat.as_slice(), n_hat.as_slice(), tau);
            loss += scale * cfg.lambda_tc * l;
            let back = projector.backward_input(a, &g);
            for (acc, gi) in grad_unit.iter_mut().zip(&back) {
                *acc += scale * cfg.lambda_tc * gi;
            }
        }
    }
    let grad = normalize_backward(z_unit_s, z_len, &grad_unit);
    Ok((loss, Latent::new(grad)))
}

/// Immutable trained components plus the per-chain random source used for
/// exemplar selection and exemplar noising.
pub struct GuidanceContext<'a> {
    pub projector: &'a Projector,
    pub pools: &'a SamplePools,
    pub autoencoder: &'a AutoEncoder,
    pub schedule: &'a NoiseSchedule,
    rng: ChaCha8Rng,
}

/// Stream id that separates exemplar randomness from the chain's
/// diffusion noise, so guided and unguided chains share the latter.
const EXEMPLAR_STREAM: u64 = 1;

impl<'a> GuidanceContext<'a> {
    pub fn new(
        projector: &'a Projector,
        pools: &'a SamplePools,
        autoencoder: &'a AutoEncoder,
        schedule: &'a NoiseSchedule,
        seed: u64,
    ) -> Result<Self> {
        pools.validate()?;
        if projector.input_dim != autoencoder.latent_dim() {
            return Err(Error::DimensionMismatch { expected: autoencoder.latent_dim(), got: projector.input_dim });
        }
        Ok(Self { projector, pools, autoencoder, schedule, rng: exemplar_rng(seed) })
    }

    pub fn reseed(&mut self, seed: u64) {
        self.rng = exemplar_rng(seed);
    }

    /// Draws, encodes and noises one positive/negative pair at timestep `t`.
    fn draw_pair(&mut self, label: usize, t: usize) -> Result<(Latent, Latent)> {
        let positives = self.pools.positives_for(label);
        let negatives = self.pools.negatives_for(label);
        let pos = positives[self.rng.gen_range(0..positives.len())];
        let neg = negatives[self.rng.gen_range(0..negatives.len())];
        let zp0 = self.autoencoder.encode(&pos.values)?;
        let zn0 = self.autoencoder.encode(&neg.values)?;
        let ep = Latent::gaussian(zp0.dim(), &mut self.rng);
        let en = Latent::gaussian(zn0.dim(), &mut self.rng);
        Ok((forward_sample(&zp0, t, self.schedule, &ep)?, forward_sample(&zn0, t, self.schedule, &en)?))
    }
}

fn exemplar_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(EXEMPLAR_STREAM);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub latent: Latent,
    /// Present only for corrected steps.
    pub loss: Option<StepLoss>,
}

/// Guidance loss of one corrected step, before and after the gradient
/// shift, on the same exemplar pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLoss {
    pub step: usize,
    /// Loss at `z_t`.
    pub before: f64,
    /// Loss at the shifted latent fed to the final reverse step.
    pub after: f64,
}

/// One reverse step at sampling step `step`, corrected when the step lies
/// inside the window. `noise` is the chain's diffusion noise for this step.
#[allow(clippy::too_many_arguments)]
pub fn corrected_step(
    d: &Denoiser,
    ctx: &mut GuidanceContext<'_>,
    cfg: &GuidanceConfig,
    z_t: &Latent,
    step: usize,
    label: usize,
    noise: &Latent,
) -> Result<StepOutcome> {
    let schedule = ctx.schedule;
    cfg.validate(schedule.len())?;
    if step == 0 || step > schedule.len() {
        return Err(Error::TimestepOutOfRange { t: step, max: schedule.len() });
    }
    let t = schedule.timestep_for_step(step);
    if !cfg.in_window(step) {
        let latent = denoise_step(d, z_t, t, label, schedule, noise, cfg.sampler)?;
        return Ok(StepOutcome { latent, loss: None });
    }

    let pairs = (0..cfg.pools_per_step).map(|_| ctx.draw_pair(label, t)).collect::<Result<Vec<_>>>()?;
    let (loss, grad) = loss_and_gradient(z_t, &pairs, ctx.projector, cfg)?;
    let base = match cfg.application {
        Application::Double => denoise_mean(d, z_t, t, label, schedule, cfg.sampler)?,
        Application::Single => z_t.clone(),
    };
    let shifted = base.axpy(-cfg.eta, &grad);
    if !shifted.is_finite() || !loss.is_finite() {
        return Err(Error::NonFinite(format!("corrected step diverged at sampling step {step}")));
    }
    let (after, _) = loss_and_gradient(&shifted, &pairs, ctx.projector, cfg)?;
    let latent = denoise_step(d, &shifted, t, label, schedule, noise, cfg.sampler)?;
    if !latent.is_finite() {
        return Err(Error::NonFinite(format!("corrected step diverged at sampling step {step}")));
    }
    Ok(StepOutcome { latent, loss: Some(StepLoss { step, before: loss, after }) })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidedTrajectory {
    /// `z_T` first, `z_0` last.
    pub latents: Vec<Latent>,
    /// One entry per corrected step, in sampling order.
    pub step_losses: Vec<StepLoss>,
}

impl GuidedTrajectory {
    pub fn final_latent(&self) -> &Latent {
        self.latents.last().expect("trajectory is non-empty")
    }
}

/// Full reverse chain with [`corrected_step`] at every step. The chain's
/// diffusion noise matches [`diffusion::sample_trajectory`] for the same seed.
pub fn guided_trajectory(
    d: &Denoiser,
    ctx: &mut GuidanceContext<'_>,
    cfg: &GuidanceConfig,
    label: usize,
    seed: u64,
) -> Result<GuidedTrajectory> {
    d.check_label(label)?;
    cfg.validate(ctx.schedule.len())?;
    ctx.reseed(seed);
    let dim = d.latent_dim();
    let mut rng = diffusion::chain_rng(seed);
    let mut z = Latent::gaussian(dim, &mut rng);
    let mut latents = Vec::with_capacity(ctx.schedule.len() + 1);
    let mut step_losses = Vec::new();
    latents.push(z.clone());
    for step in 1..=ctx.schedule.len() {
        let t = ctx.schedule.timestep_for_step(step);
        let noise = diffusion::step_noise(t, dim, &mut rng);
        let out = corrected_step(d, ctx, cfg, &z, step, label, &noise)?;
        step_losses.extend(out.loss);
        z = out.latent;
        if !z.is_finite() {
            return Err(Error::NonFinite(format!("guided sample diverged at sampling step {step}")));
        }
        latents.push(z.clone());
    }
    Ok(GuidedTrajectory { latents, step_losses })
}

pub fn guided_sample(
    d: &Denoiser,
    ctx: &mut GuidanceContext<'_>,
    cfg: &GuidanceConfig,
    label: usize,
    seed: u64,
) -> Result<Latent> {
    guided_trajectory(d, ctx, cfg, label, seed).map(|t| t.latents.into_iter().last().expect("non-empty"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::DenoiserConfig;
    use crate::prior::Exemplar;
    use rand_distr::StandardNormal;

    fn cfg_with(lambda_tc: f64, lambda_c: f64) -> GuidanceConfig {
        GuidanceConfig { lambda_tc, lambda_c, ..Default::default() }
    }

    fn random_latent(rng: &mut ChaCha8Rng, dim: usize) -> Latent {
        Latent::new((0..dim).map(|_| rng.sample(StandardNormal)).collect())
    }

    #[test]
    fn direct_loss_anchors() {
        let z = Latent::new(vec![0.0, 2.0]);
        let saturated = direct_loss(&z, &Latent::new(vec![0.0, 5.0]), &Latent::new(vec![0.0, -1.0]), 0.1).unwrap();
        let want = (-20.0f64).exp().ln_1p();
        assert!((saturated - want).abs() <= 1e-12 * want);
        let sym = direct_loss(&z, &Latent::new(vec![1.0, 0.0]), &Latent::new(vec![-1.0, 0.0]), 0.1).unwrap();
        assert!((sym - 2f64.ln()).abs() < 1e-12);
        assert!(matches!(direct_loss(&Latent::zeros(2), &z, &z, 0.1), Err(Error::ZeroNorm)));
        assert!(direct_loss(&z, &z, &z, 0.0).is_err());
    }

    #[test]
    fn identity_projector_reduces_to_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (z, p, n) = (random_latent(&mut rng, 4), random_latent(&mut rng, 4), random_latent(&mut rng, 4));
        let a = direct_loss(&z, &p, &n, 0.1).unwrap();
        let b = prior_guidance_loss(&z, &p, &n, &Projector::identity(4), 0.1).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn collapsing_projector_gives_log_two() {
        // zero weight, nonzero bias: every input maps to the same unit vector
        let proj = Projector { input_dim: 3, output_dim: 3, weight: vec![0.0; 9], bias: vec![0.0, 0.0, 1.0] };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (z, p, n) = (random_latent(&mut rng, 3), random_latent(&mut rng, 3), random_latent(&mut rng, 3));
        let l = prior_guidance_loss(&z, &p, &n, &proj, 0.1).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn total_loss_weighting() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let proj = Projector::random(3, 3, &mut rng);
        let (z, p, n) = (random_latent(&mut rng, 3), random_latent(&mut rng, 3), random_latent(&mut rng, 3));
        assert_eq!(total_loss(&z, &p, &n, &proj, &cfg_with(0.0, 0.0)).unwrap(), 0.0);
        let only_prior = total_loss(&z, &p, &n, &proj, &cfg_with(1.0, 0.0)).unwrap();
        assert!((only_prior - prior_guidance_loss(&z, &p, &n, &proj, 0.1).unwrap()).abs() < 1e-12);
        let full = total_loss(&z, &p, &n, &proj, &cfg_with(9.0, 150.0)).unwrap();
        let oracle = 9.0 * prior_guidance_loss(&z, &p, &n, &proj, 0.1).unwrap() + 150.0 * direct_loss(&z, &p, &n, 0.1).unwrap();
        assert!((full - oracle).abs() < 1e-10 * oracle);
    }

    #[test]
    fn zero_weights_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let proj = Projector::random(3, 3, &mut rng);
        let (z, p, n) = (random_latent(&mut rng, 3), random_latent(&mut rng, 3), random_latent(&mut rng, 3));
        let g = loss_gradient(&z, &p, &n, &proj, &cfg_with(0.0, 0.0)).unwrap();
        assert!(g.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn saturated_gradient_vanishes() {
        let z = Latent::new(vec![1.0, 2.0, -1.0]);
        let g = loss_gradient(&z, &z.scaled(3.0), &z.scaled(-1.0), &Projector::identity(3), &cfg_with(9.0, 150.0)).unwrap();
        assert!(g.norm() <= 1e-6, "{}", g.norm());
    }

    #[test]
    fn window_membership_and_validation() {
        let cfg = GuidanceConfig::default();
        assert!(!cfg.in_window(25));
        assert!(cfg.in_window(26) && cfg.in_window(30));
        assert!(cfg.validate(30).is_ok());
        assert!(cfg.validate(20).is_err());
        let off = cfg.clone().disabled_window();
        assert!(!off.window_enabled());
        assert!((1..=30).all(|s| !off.in_window(s)));
        assert!(off.validate(30).is_ok());
        assert!(GuidanceConfig { tau_prime: 0.0, ..cfg.clone() }.validate(30).is_err());
        assert!(GuidanceConfig { eta: -1.0, ..cfg.clone() }.validate(30).is_err());
        assert!(GuidanceConfig { pools_per_step: 0, ..cfg }.validate(30).is_err());
    }

    fn fixture() -> (Denoiser, NoiseSchedule, Projector, SamplePools, AutoEncoder) {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let d = Denoiser::new(DenoiserConfig { latent_dim: 2, hidden: 16, ..Default::default() }, &mut rng).unwrap();
        let s = NoiseSchedule::linear(30, 1e-4, 0.2).unwrap();
        let proj = Projector::random(2, 2, &mut rng);
        let ex = |label, x: f64, y: f64| Exemplar { label, values: vec![x, y] };
        let pools = SamplePools {
            positives: vec![ex(0, -1.0, 1.0), ex(0, 1.0, 1.0), ex(1, -1.0, -1.0)],
            negatives: vec![ex(0, 1.0, 1.0), ex(1, 1.0, -1.0)],
        };
        (d, s, proj, pools, AutoEncoder::identity(2))
    }

    #[test]
    fn outside_window_matches_plain_step() {
        let (d, s, proj, pools, ae) = fixture();
        let mut ctx = GuidanceContext::new(&proj, &pools, &ae, &s, 0).unwrap();
        let cfg = GuidanceConfig::default();
        let z = Latent::new(vec![0.4, -1.3]);
        let noise = Latent::new(vec![0.1, 0.2]);
        let out = corrected_step(&d, &mut ctx, &cfg, &z, 5, 0, &noise).unwrap();
        let plain = denoise_step(&d, &z, s.timestep_for_step(5), 0, &s, &noise, SamplerKind::Ancestral).unwrap();
        assert_eq!(out.latent, plain);
        assert!(out.loss.is_none());
    }

    #[test]
    fn zero_step_size_is_double_application() {
        let (d, s, proj, pools, ae) = fixture();
        let mut ctx = GuidanceContext::new(&proj, &pools, &ae, &s, 0).unwrap();
        let cfg = GuidanceConfig { eta: 0.0, ..Default::default() };
        let z = Latent::new(vec![0.4, -1.3]);
        let noise = Latent::new(vec![0.1, 0.2]);
        let t = s.timestep_for_step(27);
        let out = corrected_step(&d, &mut ctx, &cfg, &z, 27, 0, &noise).unwrap();
        let mean = denoise_mean(&d, &z, t, 0, &s, SamplerKind::Ancestral).unwrap();
        let twice = denoise_step(&d, &mean, t, 0, &s, &noise, SamplerKind::Ancestral).unwrap();
        assert_eq!(out.latent, twice);
        assert!(out.loss.is_some());

        let single = GuidanceConfig { application: Application::Single, ..cfg };
        let out = corrected_step(&d, &mut ctx, &single, &z, 27, 0, &noise).unwrap();
        assert_eq!(out.latent, denoise_step(&d, &z, t, 0, &s, &noise, SamplerKind::Ancestral).unwrap());
    }

    #[test]
    fn disabled_window_reproduces_unguided_sample() {
        let (d, s, proj, pools, ae) = fixture();
        let mut ctx = GuidanceContext::new(&proj, &pools, &ae, &s, 0).unwrap();
        let cfg = GuidanceConfig::default().disabled_window();
        for seed in 0..5 {
            let guided = guided_sample(&d, &mut ctx, &cfg, 1, seed).unwrap();
            assert_eq!(guided, diffusion::sample(&d, 1, &s, seed, SamplerKind::Ancestral).unwrap());
        }
    }

    #[test]
    fn trajectories_agree_before_window() {
        let (d, s, proj, pools, ae) = fixture();
        let mut ctx = GuidanceContext::new(&proj, &pools, &ae, &s, 0).unwrap();
        let cfg = GuidanceConfig { eta: 1e-2, ..Default::default() };
        let guided = guided_trajectory(&d, &mut ctx, &cfg, 0, 17).unwrap();
        let plain = diffusion::sample_trajectory(&d, 0, &s, 17, SamplerKind::Ancestral).unwrap();
        // latents[k] is the state after k steps; step 26 is the first corrected one
        assert_eq!(guided.latents[..26], plain[..26]);
        assert_ne!(guided.latents[26], plain[26]);
        assert_eq!(guided.step_losses.iter().map(|l| l.step).collect::<Vec<_>>(), vec![26, 27, 28, 29, 30]);
    }

    #[test]
    fn context_rejects_bad_components() {
        let (_, s, proj, pools, _) = fixture();
        let ae3 = AutoEncoder::identity(3);
        assert!(GuidanceContext::new(&proj, &pools, &ae3, &s, 0).is_err());
        let empty = SamplePools::default();
        assert!(GuidanceContext::new(&proj, &empty, &AutoEncoder::identity(2), &s, 0).is_err());
    }
}
