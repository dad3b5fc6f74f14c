//! Contrastive latent prior: normalization, a single affine projection
//! layer, and its InfoNCE-style training objective.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autoencoder::AutoEncoder;
use crate::checkpoint::{Checkpoint, Tensor};
use crate::denoiser::TrainConfig;
use crate::error::{Error, Result};
use crate::latent::{dot, norm, Latent};

/// A vector of Euclidean norm one.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitVector(Vec<f64>);

impl UnitVector {
    /// Normalizes `v`, rejecting zero and non-finite norms.
    pub fn normalize(v: &[f64]) -> Result<(Self, f64)> {
        let n = norm(v);
        if n == 0.0 {
            return Err(Error::ZeroNorm);
        }
        if !n.is_finite() {
            return Err(Error::NonFinite("vector norm".into()));
        }
        Ok((Self(v.iter().map(|x| x / n).collect()), n))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Flattens (identity for the flat storage) and scales `z` to unit length.
pub fn flatten_normalize(z: &Latent) -> Result<UnitVector> {
    UnitVector::normalize(z.as_slice()).map(|(u, _)| u)
}

/// Dot-product similarity of two unit vectors.
pub fn similarity(a: &UnitVector, b: &UnitVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), got: b.dim() });
    }
    Ok(dot(&a.0, &b.0))
}

/// Backpropagates `grad` (w.r.t. `u / |u|`) to `u`: `(I - û ûᵀ) grad / |u|`.
pub(crate) fn normalize_backward(unit: &[f64], length: f64, grad: &[f64]) -> Vec<f64> {
    let along = dot(unit, grad);
    unit.iter().zip(grad).map(|(u, g)| (g - along * u) / length).collect()
}

/// `-log softmax(logits)[0]`, evaluated stably.
pub(crate) fn neg_log_softmax_first(logits: &[f64]) -> f64 {
    let (arg, max) = logits
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, l)| if l > best.1 { (i, l) } else { best });
    // ln_1p keeps precision when the loss saturates towards zero
    let rest: f64 = logits.iter().enumerate().filter(|(i, _)| *i != arg).map(|(_, l)| (l - max).exp()).sum();
    (max - logits[0]) + rest.ln_1p()
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// One fully connected layer followed by re-normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    pub input_dim: usize,
    pub output_dim: usize,
    /// Row-major `output_dim x input_dim`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Projection output with the pre-normalization length kept for backprop.
#[derive(Debug, Clone)]
pub(crate) struct Projected {
    pub unit: UnitVector,
    pub length: f64,
}

impl Projector {
    pub fn identity(dim: usize) -> Self {
        let mut weight = vec![0.0; dim * dim];
        for i in 0..dim {
            weight[i * dim + i] = 1.0;
        }
        Self { input_dim: dim, output_dim: dim, weight, bias: vec![0.0; dim] }
    }

    /// Gaussian weights with variance `1 / input_dim`, zero bias.
    pub fn random<R: Rng + ?Sized>(input_dim: usize, output_dim: usize, rng: &mut R) -> Self {
        let std = 1.0 / (input_dim as f64).sqrt();
        Self {
            input_dim,
            output_dim,
            weight: (0..input_dim * output_dim).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect(),
            bias: vec![0.0; output_dim],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weight.iter().chain(&self.bias).all(|v| v.is_finite())
    }

    fn affine(&self, v: &[f64]) -> Vec<f64> {
        self.weight
            .chunks_exact(self.input_dim)
            .zip(&self.bias)
            .map(|(row, b)| b + dot(row, v))
            .collect()
    }

    pub(crate) fn project_full(&self, v: &UnitVector) -> Result<Projected> {
        if v.dim() != self.input_dim {
            return Err(Error::DimensionMismatch { expected: self.input_dim, got: v.dim() });
        }
        let (unit, length) = UnitVector::normalize(&self.affine(v.as_slice()))?;
        Ok(Projected { unit, length })
    }

    /// `normalize(W v + b)`.
    pub fn project(&self, v: &UnitVector) -> Result<UnitVector> {
        self.project_full(v).map(|p| p.unit)
    }

    /// Vector-Jacobian product of [`Self::project`] with respect to its input.
    pub(crate) fn backward_input(&self, projected: &Projected, grad_unit: &[f64]) -> Vec<f64> {
        let grad_u = normalize_backward(projected.unit.as_slice(), projected.length, grad_unit);
        let mut out = vec![0.0; self.input_dim];
        for (row, g) in self.weight.chunks_exact(self.input_dim).zip(&grad_u) {
            for (o, w) in out.iter_mut().zip(row) {
                *o += g * w;
            }
        }
        out
    }

    /// Accumulates parameter gradients given `grad_unit` w.r.t. `project(v)`.
    fn backward_params(&self, v: &UnitVector, projected: &Projected, grad_unit: &[f64], grads: &mut ProjectorGradients) {
        let grad_u = normalize_backward(projected.unit.as_slice(), projected.length, grad_unit);
        for (o, g) in grad_u.iter().enumerate() {
            grads.bias[o] += g;
            for (gw, x) in grads.weight[o * self.input_dim..(o + 1) * self.input_dim].iter_mut().zip(v.as_slice()) {
                *gw += g * x;
            }
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new("projector");
        c.push(Tensor::new("projector.weight", vec![self.output_dim, self.input_dim], self.weight.clone()));
        c.push(Tensor::new("projector.bias", vec![self.output_dim], self.bias.clone()));
        c
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let w = ckpt.tensor("projector.weight")?;
        let [output_dim, input_dim] = w.shape[..] else {
            return Err(Error::Checkpoint("projector.weight must be rank 2".into()));
        };
        let bias = ckpt.tensor_with_shape("projector.bias", &[output_dim])?.to_vec();
        Ok(Self { input_dim, output_dim, weight: w.to_vec(), bias })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorGradients {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ProjectorGradients {
    fn zeros_like(p: &Projector) -> Self {
        Self { weight: vec![0.0; p.weight.len()], bias: vec![0.0; p.bias.len()] }
    }
}

/// Contrastive prior loss for one anchor:
/// `-log( s_p / (s_p + Σ_m s_n^m) )` with `s = exp(sim(F(a), F(x)) / τ)`.
pub fn prior_loss(
    anchor: &UnitVector,
    positive: &UnitVector,
    negatives: &[UnitVector],
    projector: &Projector,
    tau: f64,
) -> Result<f64> {
    prior_loss_and_gradient(anchor, positive, negatives, projector, tau).map(|(l, _)| l)
}

/// [`prior_loss`] together with its gradient w.r.t. the projector parameters.
pub fn prior_loss_and_gradient(
    anchor: &UnitVector,
    positive: &UnitVector,
    negatives: &[UnitVector],
    projector: &Projector,
    tau: f64,
) -> Result<(f64, ProjectorGradients)> {
    let mut grads = ProjectorGradients::zeros_like(projector);
    let loss = accumulate_prior_loss(anchor, positive, negatives, projector, tau, 1.0, &mut grads)?;
    Ok((loss, grads))
}

fn accumulate_prior_loss(
    anchor: &UnitVector,
    positive: &UnitVector,
    negatives: &[UnitVector],
    projector: &Projector,
    tau: f64,
    weight: f64,
    grads: &mut ProjectorGradients,
) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::InvalidConfig(format!("temperature must be positive, got {tau}")));
    }
    if negatives.is_empty() {
        return Err(Error::Empty("negative set".into()));
    }
    let a = projector.project_full(anchor)?;
    let others: Vec<(&UnitVector, Projected)> = std::iter::once(positive)
        .chain(negatives)
        .map(|v| projector.project_full(v).map(|p| (v, p)))
        .collect::<Result<_>>()?;
    let logits: Vec<f64> = others.iter().map(|(_, p)| dot(a.unit.as_slice(), p.unit.as_slice()) / tau).collect();
    let loss = neg_log_softmax_first(&logits);

    // dL/dlogit_k = softmax_k - [k == 0]; logit_k = <â, x̂_k> / τ
    let probs = softmax(&logits);
    let dim = projector.output_dim;
    let mut grad_anchor = vec![0.0; dim];
    for (k, ((v, p), prob)) in others.iter().zip(&probs).enumerate() {
        let coeff = weight * (prob - if k == 0 { 1.0 } else { 0.0 }) / tau;
        for (g, x) in grad_anchor.iter_mut().zip(p.unit.as_slice()) {
            *g += coeff * x;
        }
        let grad_other: Vec<f64> = a.unit.as_slice().iter().map(|x| coeff * x).collect();
        projector.backward_params(v, p, &grad_other, grads);
    }
    projector.backward_params(anchor, &a, &grad_anchor, grads);
    Ok(loss)
}

/// Labeled exemplar in data space.
#[derive(Debug, Clone, PartialEq)]
pub struct Exemplar {
    pub label: usize,
    pub values: Vec<f64>,
}

/// Anti-stereotypical ("positive") and stereotypical ("negative") exemplars.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SamplePools {
    pub positives: Vec<Exemplar>,
    pub negatives: Vec<Exemplar>,
}

impl SamplePools {
    pub fn validate(&self) -> Result<()> {
        if self.positives.is_empty() {
            return Err(Error::Empty("positive pool".into()));
        }
        if self.negatives.is_empty() {
            return Err(Error::Empty("negative pool".into()));
        }
        Ok(())
    }

    /// Exemplars of `label`, or the whole pool when none carry that label.
    pub fn positives_for(&self, label: usize) -> Vec<&Exemplar> {
        for_label(&self.positives, label)
    }

    pub fn negatives_for(&self, label: usize) -> Vec<&Exemplar> {
        for_label(&self.negatives, label)
    }
}

fn for_label(pool: &[Exemplar], label: usize) -> Vec<&Exemplar> {
    let matching: Vec<&Exemplar> = pool.iter().filter(|e| e.label == label).collect();
    if matching.is_empty() {
        pool.iter().collect()
    } else {
        matching
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorTrainConfig {
    pub train: TrainConfig,
    pub tau: f64,
    /// Projection width; `None` keeps the input width.
    pub output_dim: Option<usize>,
    /// Negatives per batch; the rest of the batch holds the positive pair.
    pub negatives_per_batch: usize,
}

impl Default for ProjectorTrainConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig { epochs: 4, batch_size: 4, learning_rate: 1e-2, seed: 0 },
            tau: 0.1,
            output_dim: None,
            negatives_per_batch: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorReport {
    /// Mean batch loss per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Trains the projector with plain SGD on the batch-mean prior loss.
///
/// Each batch holds a positive pair `(i, j)` of distinct positives and
/// `negatives_per_batch` negatives; both orderings of the pair are used as
/// anchors. An epoch walks the shuffled positive pool once, two at a time.
pub fn train_projector(pools: &SamplePools, ae: &AutoEncoder, cfg: &ProjectorTrainConfig) -> Result<(Projector, ProjectorReport)> {
    cfg.train.validate()?;
    pools.validate()?;
    if pools.positives.len() < 2 {
        return Err(Error::Empty("positive pool needs at least two exemplars to form a pair".into()));
    }
    if cfg.negatives_per_batch == 0 {
        return Err(Error::InvalidConfig("need at least one negative per batch".into()));
    }
    let normalize_all = |pool: &[Exemplar]| -> Result<Vec<UnitVector>> {
        pool.iter().map(|e| ae.encode(&e.values).and_then(|z| flatten_normalize(&z))).collect()
    };
    let positives = normalize_all(&pools.positives)?;
    let negatives = normalize_all(&pools.negatives)?;
    let dim = ae.latent_dim();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let mut projector = Projector::random(dim, cfg.output_dim.unwrap_or(dim), &mut rng);
    let mut pos_order: Vec<usize> = (0..positives.len()).collect();
    let mut neg_order: Vec<usize> = (0..negatives.len()).collect();
    neg_order.shuffle(&mut rng);
    let mut neg_cursor = 0;
    let mut epoch_losses = Vec::with_capacity(cfg.train.epochs);

    for epoch in 0..cfg.train.epochs {
        pos_order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for pair in pos_order.chunks_exact(2) {
            let batch_neg: Vec<UnitVector> = (0..cfg.negatives_per_batch)
                .map(|_| {
                    if neg_cursor == neg_order.len() {
                        neg_order.shuffle(&mut rng);
                        neg_cursor = 0;
                    }
                    neg_cursor += 1;
                    negatives[neg_order[neg_cursor - 1]].clone()
                })
                .collect();
            let (i, j) = (&positives[pair[0]], &positives[pair[1]]);
            let mut grads = ProjectorGradients::zeros_like(&projector);
            let loss = (accumulate_prior_loss(i, j, &batch_neg, &projector, cfg.tau, 0.5, &mut grads)?
                + accumulate_prior_loss(j, i, &batch_neg, &projector, cfg.tau, 0.5, &mut grads)?)
                / 2.0;
            let lr = cfg.train.learning_rate;
            for (p, g) in projector.weight.iter_mut().zip(&grads.weight).chain(projector.bias.iter_mut().zip(&grads.bias)) {
                *p -= lr * g;
            }
            total += loss;
            batches += 1;
        }
        if !projector.is_finite() || !total.is_finite() {
            return Err(Error::NonFinite(format!("projector training diverged at epoch {}", epoch + 1)));
        }
        epoch_losses.push(total / batches as f64);
    }
    Ok((projector, ProjectorReport { epoch_losses }))
}

/// Mean prior loss of `projector` over every positive pair `(i, i+1)` of the
/// pool in order, with all negatives in the denominator.
pub fn evaluate_prior_loss(pools: &SamplePools, ae: &AutoEncoder, projector: &Projector, tau: f64) -> Result<f64> {
    pools.validate()?;
    let enc = |e: &Exemplar| ae.encode(&e.values).and_then(|z| flatten_normalize(&z));
    let pos: Vec<UnitVector> = pools.positives.iter().map(enc).collect::<Result<_>>()?;
    let neg: Vec<UnitVector> = pools.negatives.iter().map(enc).collect::<Result<_>>()?;
    if pos.len() < 2 {
        return Err(Error::Empty("positive pool needs at least two exemplars".into()));
    }
    let mut total = 0.0;
    for w in pos.windows(2) {
        total += prior_loss(&w[0], &w[1], &neg, projector, tau)?;
    }
    Ok(total / (pos.len() - 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn unit(v: &[f64]) -> UnitVector {
        UnitVector::normalize(v).unwrap().0
    }

    #[test]
    fn three_four_five() {
        let u = flatten_normalize(&Latent::new(vec![3.0, 4.0])).unwrap();
        assert!((u.as_slice()[0] - 0.6).abs() < 1e-15);
        assert!((u.as_slice()[1] - 0.8).abs() < 1e-15);
        let again = flatten_normalize(&Latent::new(u.as_slice().to_vec())).unwrap();
        for (a, b) in again.as_slice().iter().zip(u.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(matches!(flatten_normalize(&Latent::zeros(2)), Err(Error::ZeroNorm)));
    }

    #[test]
    fn similarity_cases() {
        let a = unit(&[1.0, 1.0]);
        let b = unit(&[1.0, -1.0]);
        let neg = unit(&[-1.0, -1.0]);
        assert!((similarity(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert!(similarity(&a, &b).unwrap().abs() < 1e-15);
        assert!((similarity(&a, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!(similarity(&a, &unit(&[1.0, 0.0, 0.0])).is_err());
    }

    #[test]
    fn projection_reductions() {
        let v = unit(&[0.3, -0.4, 1.2]);
        let id = Projector::identity(3);
        for (a, b) in id.project(&v).unwrap().as_slice().iter().zip(v.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
        let mut scaled = Projector::identity(3);
        scaled.weight.iter_mut().for_each(|w| *w *= 7.5);
        for (a, b) in scaled.project(&v).unwrap().as_slice().iter().zip(v.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
        let mut zero = Projector::identity(3);
        zero.weight.iter_mut().for_each(|w| *w = 0.0);
        assert!(matches!(zero.project(&v), Err(Error::ZeroNorm)));
    }

    #[test]
    fn random_projection_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = Projector { bias: vec![0.1, -0.2, 0.3, 0.0], ..Projector::random(3, 4, &mut rng) };
        let v = unit(&[1.0, 2.0, -0.5]);
        let out = p.project(&v).unwrap();
        let mut raw = [0.0; 4];
        for r in 0..4 {
            raw[r] = p.bias[r];
            for c in 0..3 {
                raw[r] += p.weight[r * 3 + c] * v.as_slice()[c];
            }
        }
        let n = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        for r in 0..4 {
            assert!((out.as_slice()[r] - raw[r] / n).abs() < 1e-14);
        }
    }

    #[test]
    fn saturated_prior_loss() {
        let a = unit(&[1.0, 0.0]);
        let neg = unit(&[-1.0, 0.0]);
        let loss = prior_loss(&a, &a, &[neg], &Projector::identity(2), 0.1).unwrap();
        let want = (-20.0f64).exp().ln_1p();
        assert!((loss - want).abs() <= 1e-12 * want);
        assert!((loss - 2.06e-9).abs() < 1e-11);
    }

    #[test]
    fn symmetric_prior_loss_is_log_two() {
        let a = unit(&[1.0, 0.0]);
        let p = unit(&[0.0, 1.0]);
        let n = unit(&[0.0, -1.0]);
        let loss = prior_loss(&a, &p, &[n], &Projector::identity(2), 0.1).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn random_batch_matches_softmax_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let p = Projector::random(4, 4, &mut rng);
        let mk = |rng: &mut ChaCha8Rng| unit(&(0..4).map(|_| rng.sample(StandardNormal)).collect::<Vec<f64>>());
        let a = mk(&mut rng);
        let pos = mk(&mut rng);
        let negs: Vec<UnitVector> = (0..5).map(|_| mk(&mut rng)).collect();
        let tau = 0.1;
        let pa = p.project(&a).unwrap();
        let sp = (dot(pa.as_slice(), p.project(&pos).unwrap().as_slice()) / tau).exp();
        let sn: f64 = negs.iter().map(|n| (dot(pa.as_slice(), p.project(n).unwrap().as_slice()) / tau).exp()).sum();
        let oracle = -(sp / (sp + sn)).ln();
        let got = prior_loss(&a, &pos, &negs, &p, tau).unwrap();
        assert!((got - oracle).abs() < 1e-12 * oracle.max(1.0));
    }

    #[test]
    fn prior_loss_errors() {
        let a = unit(&[1.0, 0.0]);
        let id = Projector::identity(2);
        assert!(prior_loss(&a, &a, &[], &id, 0.1).is_err());
        assert!(prior_loss(&a, &a, &[a.clone()], &id, 0.0).is_err());
    }

    fn separable_pools(n: usize, seed: u64) -> SamplePools {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |center: [f64; 3]| Exemplar {
            label: 0,
            values: center.iter().map(|c| c + 0.2 * rng.sample::<f64, _>(StandardNormal)).collect(),
        };
        SamplePools {
            positives: (0..n).map(|_| draw([1.0, 1.0, 0.0])).collect(),
            negatives: (0..n).map(|_| draw([-1.0, -1.0, 0.0])).collect(),
        }
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let pools = separable_pools(10, 1);
        let cfg = ProjectorTrainConfig {
            train: TrainConfig { epochs: 1, batch_size: 4, learning_rate: 0.0, seed: 5 },
            ..Default::default()
        };
        let (trained, _) = train_projector(&pools, &AutoEncoder::identity(3), &cfg).unwrap();
        let fresh = Projector::random(3, 3, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(trained, fresh);
    }

    #[test]
    fn training_needs_a_pair() {
        let mut pools = separable_pools(10, 1);
        pools.positives.truncate(1);
        assert!(train_projector(&pools, &AutoEncoder::identity(3), &ProjectorTrainConfig::default()).is_err());
        pools.positives.clear();
        assert!(train_projector(&pools, &AutoEncoder::identity(3), &ProjectorTrainConfig::default()).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let pools = separable_pools(40, 3);
        let cfg = ProjectorTrainConfig::default();
        let a = train_projector(&pools, &AutoEncoder::identity(3), &cfg).unwrap();
        let b = train_projector(&pools, &AutoEncoder::identity(3), &cfg).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn normalization_is_scale_invariant(v in prop::collection::vec(-10.0f64..10.0, 1..8), c in 1e-3f64..1e3) {
            prop_assume!(norm(&v) > 1e-6);
            let a = flatten_normalize(&Latent::new(v.clone())).unwrap();
            let b = flatten_normalize(&Latent::new(v.iter().map(|x| x * c).collect())).unwrap();
            prop_assert!((norm(a.as_slice()) - 1.0).abs() < 1e-10);
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn loss_decreases_with_positive_similarity(s1 in -0.9f64..0.9, ds in 0.01f64..0.09, sn in -1.0f64..1.0) {
            // Fix the anchor, move the positive towards it, keep the negative fixed.
            let a = unit(&[1.0, 0.0, 0.0]);
            let pos = |s: f64| unit(&[s, (1.0 - s * s).sqrt(), 0.0]);
            let n = unit(&[sn, 0.0, (1.0 - sn * sn).sqrt()]);
            let id = Projector::identity(3);
            let l1 = prior_loss(&a, &pos(s1), &[n.clone()], &id, 0.1).unwrap();
            let l2 = prior_loss(&a, &pos(s1 + ds), &[n], &id, 0.1).unwrap();
            prop_assert!(l2 < l1);
        }
    }
}
