//! Conditional noise predictor: a small MLP over `[z_t, time embedding, label embedding]`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;

use crate::checkpoint::{Checkpoint, Tensor};
use crate::error::{Error, Result};
use crate::latent::Latent;

/// Number of hidden layers in the noise predictor.
pub const HIDDEN_LAYERS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserConfig {
    pub latent_dim: usize,
    pub num_classes: usize,
    pub hidden: usize,
    pub time_dim: usize,
    pub label_dim: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self { latent_dim: 8, num_classes: 2, hidden: 64, time_dim: 16, label_dim: 8 }
    }
}

impl DenoiserConfig {
    pub fn input_dim(&self) -> usize {
        self.latent_dim + self.time_dim + self.label_dim
    }

    fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.num_classes == 0 || self.hidden == 0 {
            return Err(Error::InvalidConfig("denoiser dimensions must be positive".into()));
        }
        if self.time_dim == 0 || self.time_dim % 2 != 0 {
            return Err(Error::InvalidConfig("time embedding dimension must be even and positive".into()));
        }
        Ok(())
    }

    /// (in, out) shape of every dense layer, input layer first.
    fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = vec![(self.input_dim(), self.hidden)];
        shapes.extend((1..HIDDEN_LAYERS).map(|_| (self.hidden, self.hidden)));
        shapes.push((self.hidden, self.latent_dim));
        shapes
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Dense {
    inputs: usize,
    outputs: usize,
    /// Row-major `outputs x inputs`.
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl Dense {
    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.weight.chunks_exact(self.inputs).zip(&self.bias).map(|(row, b)| {
            b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
        }));
    }
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// Noise predictor `eps_theta(z_t, t, label)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    cfg: DenoiserConfig,
    /// Frequencies of the sinusoidal timestep embedding.
    frequencies: Vec<f64>,
    /// Row-major `num_classes x label_dim`.
    label_table: Vec<f64>,
    layers: Vec<Dense>,
}

/// Activations kept from a forward pass for backprop.
struct ForwardCache {
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

impl Denoiser {
    /// Randomly initialized predictor (uniform fan-in init, zero biases,
    /// standard normal label embeddings).
    pub fn new<R: Rng + ?Sized>(cfg: DenoiserConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let label_table = (0..cfg.num_classes * cfg.label_dim).map(|_| rng.sample(StandardNormal)).collect();
        let layers = cfg
            .layer_shapes()
            .into_iter()
            .map(|(inputs, outputs)| {
                let bound = 1.0 / (inputs as f64).sqrt();
                Dense {
                    inputs,
                    outputs,
                    weight: (0..inputs * outputs).map(|_| rng.gen_range(-bound..bound)).collect(),
                    bias: vec![0.0; outputs],
                }
            })
            .collect();
        Ok(Self { frequencies: default_frequencies(cfg.time_dim), cfg, label_table, layers })
    }

    /// Every parameter set to zero.
    pub fn zeroed(cfg: DenoiserConfig) -> Result<Self> {
        cfg.validate()?;
        let layers = cfg
            .layer_shapes()
            .into_iter()
            .map(|(inputs, outputs)| Dense {
                inputs,
                outputs,
                weight: vec![0.0; inputs * outputs],
                bias: vec![0.0; outputs],
            })
            .collect();
        Ok(Self {
            frequencies: default_frequencies(cfg.time_dim),
            label_table: vec![0.0; cfg.num_classes * cfg.label_dim],
            cfg,
            layers,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.cfg
    }

    pub fn latent_dim(&self) -> usize {
        self.cfg.latent_dim
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// `(weight, bias, inputs, outputs)` of dense layer `i`; weight is row-major.
    pub fn layer(&self, i: usize) -> (&[f64], &[f64], usize, usize) {
        let l = &self.layers[i];
        (&l.weight, &l.bias, l.inputs, l.outputs)
    }

    pub fn layer_mut(&mut self, i: usize) -> (&mut [f64], &mut [f64]) {
        let l = &mut self.layers[i];
        (&mut l.weight, &mut l.bias)
    }

    pub fn check_label(&self, label: usize) -> Result<()> {
        if label >= self.cfg.num_classes {
            return Err(Error::LabelOutOfRange { label, classes: self.cfg.num_classes });
        }
        Ok(())
    }

    pub fn label_embedding(&self, label: usize) -> Result<&[f64]> {
        self.check_label(label)?;
        let d = self.cfg.label_dim;
        Ok(&self.label_table[label * d..(label + 1) * d])
    }

    /// Sinusoidal embedding: `[sin(t f_k)..., cos(t f_k)...]`.
    pub fn time_embedding(&self, t: usize) -> Vec<f64> {
        let t = t as f64;
        let sin = self.frequencies.iter().map(|f| (t * f).sin());
        let cos = self.frequencies.iter().map(|f| (t * f).cos());
        sin.chain(cos).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.label_table.iter().all(|v| v.is_finite())
            && self.layers.iter().all(|l| l.weight.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    fn assemble_input(&self, z: &[f64], t: usize, label: usize) -> Result<Vec<f64>> {
        if z.len() != self.cfg.latent_dim {
            return Err(Error::DimensionMismatch { expected: self.cfg.latent_dim, got: z.len() });
        }
        let mut input = Vec::with_capacity(self.cfg.input_dim());
        input.extend_from_slice(z);
        input.extend(self.time_embedding(t));
        input.extend_from_slice(self.label_embedding(label)?);
        Ok(input)
    }

    fn forward_cached(&self, z: &[f64], t: usize, label: usize) -> Result<(Vec<f64>, ForwardCache)> {
        let input = self.assemble_input(z, t, label)?;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let x = if i == 0 { &input } else { &post[i - 1] };
            let mut h = Vec::new();
            layer.forward(x, &mut h);
            if i < last {
                post.push(h.iter().map(|v| silu(*v)).collect());
                pre.push(h);
            } else {
                let out = h.clone();
                pre.push(h);
                return Ok((out, ForwardCache { input, pre, post }));
            }
        }
        unreachable!("denoiser has at least one layer")
    }

    /// Predicted noise `eps_theta(z_t, t, label)`.
    pub fn predict_noise(&self, z_t: &Latent, t: usize, label: usize) -> Result<Latent> {
        let input = self.assemble_input(z_t.as_slice(), t, label)?;
        let mut x = input;
        let mut h = Vec::new();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.forward(&x, &mut h);
            if i < last {
                x.clear();
                x.extend(h.iter().map(|v| silu(*v)));
            }
        }
        Ok(Latent::new(h))
    }

    /// Accumulates parameter gradients of `<grad_out, eps_theta(z, t, label)>`.
    fn backward(&self, cache: &ForwardCache, label: usize, grad_out: &[f64], grads: &mut Gradients) {
        let mut delta = grad_out.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let x = if i == 0 { &cache.input } else { &cache.post[i - 1] };
            let (gw, gb) = &mut grads.layers[i];
            for (o, d) in delta.iter().enumerate() {
                gb[o] += d;
                let row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                for (g, v) in row.iter_mut().zip(x) {
                    *g += d * v;
                }
            }
            let mut back = vec![0.0; layer.inputs];
            for (o, d) in delta.iter().enumerate() {
                let row = &layer.weight[o * layer.inputs..(o + 1) * layer.inputs];
                for (b, w) in back.iter_mut().zip(row) {
                    *b += d * w;
                }
            }
            if i > 0 {
                delta = back.iter().zip(&cache.pre[i - 1]).map(|(b, p)| b * silu_grad(*p)).collect();
            } else {
                let offset = self.cfg.latent_dim + self.cfg.time_dim;
                let d = self.cfg.label_dim;
                for (g, b) in grads.label_table[label * d..(label + 1) * d].iter_mut().zip(&back[offset..]) {
                    *g += b;
                }
            }
        }
    }

    pub(crate) fn to_tensors(&self, prefix: &str) -> Vec<Tensor> {
        let c = &self.cfg;
        let mut out = vec![
            Tensor::new(
                format!("{prefix}.config"),
                vec![5],
                [c.latent_dim, c.num_classes, c.hidden, c.time_dim, c.label_dim].iter().map(|v| *v as f64).collect(),
            ),
            Tensor::new(format!("{prefix}.time_frequencies"), vec![self.frequencies.len()], self.frequencies.clone()),
            Tensor::new(format!("{prefix}.label_table"), vec![c.num_classes, c.label_dim], self.label_table.clone()),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            out.push(Tensor::new(format!("{prefix}.layer{i}.weight"), vec![l.outputs, l.inputs], l.weight.clone()));
            out.push(Tensor::new(format!("{prefix}.layer{i}.bias"), vec![l.outputs], l.bias.clone()));
        }
        out
    }

    pub(crate) fn from_checkpoint(ckpt: &Checkpoint, prefix: &str) -> Result<Self> {
        let raw = ckpt.tensor(&format!("{prefix}.config"))?.as_usizes()?;
        if raw.len() != 5 {
            return Err(Error::Checkpoint(format!("{prefix}.config must hold 5 values")));
        }
        let cfg = DenoiserConfig {
            latent_dim: raw[0],
            num_classes: raw[1],
            hidden: raw[2],
            time_dim: raw[3],
            label_dim: raw[4],
        };
        let mut model = Self::zeroed(cfg)?;
        model.frequencies =
            ckpt.tensor_with_shape(&format!("{prefix}.time_frequencies"), &[model.cfg.time_dim / 2])?.to_vec();
        model.label_table = ckpt
            .tensor_with_shape(&format!("{prefix}.label_table"), &[model.cfg.num_classes, model.cfg.label_dim])?
            .to_vec();
        for (i, l) in model.layers.iter_mut().enumerate() {
            l.weight = ckpt.tensor_with_shape(&format!("{prefix}.layer{i}.weight"), &[l.outputs, l.inputs])?.to_vec();
            l.bias = ckpt.tensor_with_shape(&format!("{prefix}.layer{i}.bias"), &[l.outputs])?.to_vec();
        }
        Ok(model)
    }
}

fn default_frequencies(time_dim: usize) -> Vec<f64> {
    let half = time_dim / 2;
    // Timesteps are small integers, so a short max period keeps the
    // embedding informative across the whole schedule.
    let max_period: f64 = 100.0;
    (0..half).map(|k| (-(max_period.ln()) * k as f64 / half as f64).exp()).collect()
}

/// Gradient buffers shaped like the denoiser's parameters.
struct Gradients {
    label_table: Vec<f64>,
    layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Gradients {
    fn zeros_like(d: &Denoiser) -> Self {
        Self {
            label_table: vec![0.0; d.label_table.len()],
            layers: d.layers.iter().map(|l| (vec![0.0; l.weight.len()], vec![0.0; l.bias.len()])).collect(),
        }
    }

    fn clear(&mut self) {
        self.label_table.iter_mut().for_each(|g| *g = 0.0);
        for (w, b) in &mut self.layers {
            w.iter_mut().chain(b.iter_mut()).for_each(|g| *g = 0.0);
        }
    }

    fn slices(&self) -> impl Iterator<Item = &[f64]> {
        std::iter::once(self.label_table.as_slice())
            .chain(self.layers.iter().flat_map(|(w, b)| [w.as_slice(), b.as_slice()]))
    }
}

impl Denoiser {
    fn param_slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        std::iter::once(self.label_table.as_mut_slice())
            .chain(self.layers.iter_mut().flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()]))
    }
}

/// Plain Adam with bias correction.
struct Adam {
    lr: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(lr: f64, grads: &Gradients) -> Self {
        let zeros: Vec<Vec<f64>> = grads.slices().map(|s| vec![0.0; s.len()]).collect();
        Self { lr, step: 0, m: zeros.clone(), v: zeros }
    }

    fn update(&mut self, model: &mut Denoiser, grads: &Gradients) {
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        let lr = self.lr;
        for (((p, g), m), v) in model.param_slices_mut().zip(grads.slices()).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * g[i];
                v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
            }
        }
    }
}

/// Optimization settings shared by denoiser and projector training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 300, batch_size: 64, learning_rate: 2e-3, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning rate must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// One labeled clean latent used for training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub latent: Latent,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean per-coordinate squared error of the noise prediction, per epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }
}

/// Fits `eps_theta` by minimizing `|| eps - eps_theta(z_t, t, label) ||^2` with
/// `t` uniform over the schedule and `z_t` drawn by forward noising.
pub fn train_denoiser(
    data: &[TrainingExample],
    schedule: &crate::schedule::NoiseSchedule,
    model_cfg: DenoiserConfig,
    cfg: &TrainConfig,
) -> Result<(Denoiser, TrainReport)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training dataset".into()));
    }
    for ex in data {
        ex.latent.check_dim(model_cfg.latent_dim)?;
        if ex.label >= model_cfg.num_classes {
            return Err(Error::LabelOutOfRange { label: ex.label, classes: model_cfg.num_classes });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Denoiser::new(model_cfg, &mut rng)?;
    let mut grads = Gradients::zeros_like(&model);
    let mut adam = Adam::new(cfg.learning_rate, &grads);
    let dim = model.latent_dim() as f64;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grads.clear();
            let scale = 1.0 / (dim * batch.len() as f64);
            for &idx in batch {
                let ex = &data[idx];
                let t = rng.gen_range(1..=schedule.len());
                let noise = Latent::gaussian(ex.latent.dim(), &mut rng);
                let z_t = crate::diffusion::forward_sample(&ex.latent, t, schedule, &noise)?;
                let (pred, cache) = model.forward_cached(z_t.as_slice(), t, ex.label)?;
                let mut grad_out = Vec::with_capacity(pred.len());
                for (p, e) in pred.iter().zip(noise.as_slice()) {
                    let r = p - e;
                    total += r * r / dim;
                    grad_out.push(2.0 * r * scale);
                }
                model.backward(&cache, ex.label, &grad_out, &mut grads);
            }
            adam.update(&mut model, &grads);
        }
        let mean = total / data.len() as f64;
        if !mean.is_finite() || !model.is_finite() {
            return Err(Error::NonFinite(format!("denoiser training diverged at epoch {}", epoch + 1)));
        }
        epoch_losses.push(mean);
    }
    Ok((model, TrainReport { epoch_losses }))
}
