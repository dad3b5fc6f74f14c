//! Encoder/decoder pair between data space and latent space.

use nalgebra::{DMatrix, DVector};
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{Checkpoint, Tensor};
use crate::error::{Error, Result};
use crate::latent::Latent;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AutoEncoderMode {
    #[default]
    Identity,
    Linear,
}

/// Affine encoder `z = E x + b_e` and decoder `x = D z + b_d`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearAutoEncoder {
    pub data_dim: usize,
    pub latent_dim: usize,
    /// Row-major `latent_dim x data_dim`.
    pub encoder: Vec<f64>,
    pub encoder_bias: Vec<f64>,
    /// Row-major `data_dim x latent_dim`.
    pub decoder: Vec<f64>,
    pub decoder_bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AutoEncoder {
    Identity { dim: usize },
    Linear(LinearAutoEncoder),
}

/// Gradient of the mean reconstruction error, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGradients {
    pub encoder: Vec<f64>,
    pub encoder_bias: Vec<f64>,
    pub decoder: Vec<f64>,
    pub decoder_bias: Vec<f64>,
}

fn matvec(m: &[f64], cols: usize, x: &[f64], bias: &[f64]) -> Vec<f64> {
    m.chunks_exact(cols).zip(bias).map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()).collect()
}

impl LinearAutoEncoder {
    pub fn zeros(data_dim: usize, latent_dim: usize) -> Self {
        Self {
            data_dim,
            latent_dim,
            encoder: vec![0.0; latent_dim * data_dim],
            encoder_bias: vec![0.0; latent_dim],
            decoder: vec![0.0; data_dim * latent_dim],
            decoder_bias: vec![0.0; data_dim],
        }
    }

    fn encode_raw(&self, x: &[f64]) -> Vec<f64> {
        matvec(&self.encoder, self.data_dim, x, &self.encoder_bias)
    }

    fn decode_raw(&self, z: &[f64]) -> Vec<f64> {
        matvec(&self.decoder, self.latent_dim, z, &self.decoder_bias)
    }

    /// Mean over points of `|| D(E x + b_e) + b_d - x ||^2`.
    pub fn reconstruction_error(&self, data: &[Vec<f64>]) -> f64 {
        data.iter()
            .map(|x| {
                let r = self.decode_raw(&self.encode_raw(x));
                r.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            })
            .sum::<f64>()
            / data.len() as f64
    }

    /// Analytic gradient of [`Self::reconstruction_error`].
    pub fn reconstruction_gradient(&self, data: &[Vec<f64>]) -> LinearGradients {
        let (p, k) = (self.data_dim, self.latent_dim);
        let mut g = LinearGradients {
            encoder: vec![0.0; k * p],
            encoder_bias: vec![0.0; k],
            decoder: vec![0.0; p * k],
            decoder_bias: vec![0.0; p],
        };
        let scale = 2.0 / data.len() as f64;
        for x in data {
            let z = self.encode_raw(x);
            let r: Vec<f64> = self.decode_raw(&z).iter().zip(x).map(|(a, b)| scale * (a - b)).collect();
            for i in 0..p {
                g.decoder_bias[i] += r[i];
                for j in 0..k {
                    g.decoder[i * k + j] += r[i] * z[j];
                }
            }
            // back through the decoder: D^T r
            let back: Vec<f64> = (0..k).map(|j| (0..p).map(|i| self.decoder[i * k + j] * r[i]).sum()).collect();
            for j in 0..k {
                g.encoder_bias[j] += back[j];
                for i in 0..p {
                    g.encoder[j * p + i] += back[j] * x[i];
                }
            }
        }
        g
    }
}

impl AutoEncoder {
    pub fn identity(dim: usize) -> Self {
        Self::Identity { dim }
    }

    pub fn mode(&self) -> AutoEncoderMode {
        match self {
            Self::Identity { .. } => AutoEncoderMode::Identity,
            Self::Linear(_) => AutoEncoderMode::Linear,
        }
    }

    pub fn data_dim(&self) -> usize {
        match self {
            Self::Identity { dim } => *dim,
            Self::Linear(l) => l.data_dim,
        }
    }

    pub fn latent_dim(&self) -> usize {
        match self {
            Self::Identity { dim } => *dim,
            Self::Linear(l) => l.latent_dim,
        }
    }

    pub fn encode(&self, x: &[f64]) -> Result<Latent> {
        if x.len() != self.data_dim() {
            return Err(Error::DimensionMismatch { expected: self.data_dim(), got: x.len() });
        }
        Ok(match self {
            Self::Identity { .. } => Latent::new(x.to_vec()),
            Self::Linear(l) => Latent::new(l.encode_raw(x)),
        })
    }

    pub fn decode(&self, z: &Latent) -> Result<Vec<f64>> {
        z.check_dim(self.latent_dim())?;
        Ok(match self {
            Self::Identity { .. } => z.as_slice().to_vec(),
            Self::Linear(l) => l.decode_raw(z.as_slice()),
        })
    }

    pub(crate) fn to_tensors(&self) -> Vec<Tensor> {
        match self {
            Self::Identity { dim } => vec![Tensor::new("autoencoder.mode", vec![2], vec![0.0, *dim as f64])],
            Self::Linear(l) => vec![
                Tensor::new("autoencoder.mode", vec![3], vec![1.0, l.data_dim as f64, l.latent_dim as f64]),
                Tensor::new("autoencoder.encoder", vec![l.latent_dim, l.data_dim], l.encoder.clone()),
                Tensor::new("autoencoder.encoder_bias", vec![l.latent_dim], l.encoder_bias.clone()),
                Tensor::new("autoencoder.decoder", vec![l.data_dim, l.latent_dim], l.decoder.clone()),
                Tensor::new("autoencoder.decoder_bias", vec![l.data_dim], l.decoder_bias.clone()),
            ],
        }
    }

    pub(crate) fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mode = ckpt.tensor("autoencoder.mode")?.as_usizes()?;
        match mode.as_slice() {
            [0, dim] => Ok(Self::Identity { dim: *dim }),
            [1, p, k] => {
                let (p, k) = (*p, *k);
                Ok(Self::Linear(LinearAutoEncoder {
                    data_dim: p,
                    latent_dim: k,
                    encoder: ckpt.tensor_with_shape("autoencoder.encoder", &[k, p])?.to_vec(),
                    encoder_bias: ckpt.tensor_with_shape("autoencoder.encoder_bias", &[k])?.to_vec(),
                    decoder: ckpt.tensor_with_shape("autoencoder.decoder", &[p, k])?.to_vec(),
                    decoder_bias: ckpt.tensor_with_shape("autoencoder.decoder_bias", &[p])?.to_vec(),
                }))
            }
            other => Err(Error::Checkpoint(format!("unknown autoencoder mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoEncoderConfig {
    pub mode: AutoEncoderMode,
    pub latent_dim: usize,
    pub max_iters: usize,
    /// Stop once the relative improvement of the reconstruction error drops below this.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for AutoEncoderConfig {
    fn default() -> Self {
        Self { mode: AutoEncoderMode::Linear, latent_dim: 2, max_iters: 500, tolerance: 1e-12, seed: 0 }
    }
}

/// Fits a linear autoencoder by alternating least squares on centered data:
/// the encoder is the pseudo-inverse of the decoder, and the decoder is the
/// least-squares map from the resulting codes back to the data.
pub fn train_autoencoder(data: &[Vec<f64>], cfg: &AutoEncoderConfig) -> Result<AutoEncoder> {
    if cfg.mode == AutoEncoderMode::Identity {
        return Err(Error::InvalidConfig("identity autoencoder has nothing to train".into()));
    }
    if data.is_empty() {
        return Err(Error::Empty("autoencoder training data".into()));
    }
    let p = data[0].len();
    if let Some(bad) = data.iter().find(|x| x.len() != p) {
        return Err(Error::DimensionMismatch { expected: p, got: bad.len() });
    }
    let k = cfg.latent_dim;
    if k == 0 || p == 0 {
        return Err(Error::InvalidConfig("autoencoder dimensions must be positive".into()));
    }
    let n = data.len();
    let mean = data.iter().fold(DVector::zeros(p), |acc, x| acc + DVector::from_column_slice(x)) / n as f64;
    let centered = DMatrix::from_fn(n, p, |i, j| data[i][j] - mean[j]);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut decoder = DMatrix::from_fn(p, k, |_, _| rng.gen_range(-1.0..1.0));
    let eps = 1e-12;
    let pinv = |m: &DMatrix<f64>| m.clone().pseudo_inverse(eps).map_err(|e| Error::NonFinite(e.to_string()));
    let mut encoder = pinv(&decoder)?;
    let mut prev = f64::INFINITY;
    for _ in 0..cfg.max_iters {
        let codes = &centered * encoder.transpose();
        decoder = (pinv(&codes)? * &centered).transpose();
        encoder = pinv(&decoder)?;
        let recon = &centered * encoder.transpose() * decoder.transpose();
        let err = (&centered - recon).norm_squared() / n as f64;
        if !err.is_finite() {
            return Err(Error::NonFinite("autoencoder reconstruction error".into()));
        }
        if err == 0.0 || (prev.is_finite() && prev - err <= cfg.tolerance * prev) {
            break;
        }
        prev = err;
    }

    let enc_bias = -(&encoder * &mean);
    let row_major = |m: &DMatrix<f64>| m.transpose().as_slice().to_vec();
    Ok(AutoEncoder::Linear(LinearAutoEncoder {
        data_dim: p,
        latent_dim: k,
        encoder: row_major(&encoder),
        encoder_bias: enc_bias.as_slice().to_vec(),
        decoder: row_major(&decoder),
        decoder_bias: mean.as_slice().to_vec(),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn identity_round_trip_is_exact() {
        let ae = AutoEncoder::identity(3);
        let x = vec![0.1, -2.5, 1e-300];
        let z = ae.encode(&x).unwrap();
        assert_eq!(z.as_slice(), x.as_slice());
        assert_eq!(ae.decode(&z).unwrap(), x);
    }

    #[test]
    fn zero_linear_maps_to_zero() {
        let ae = AutoEncoder::Linear(LinearAutoEncoder::zeros(3, 2));
        assert_eq!(ae.encode(&[1.0, 2.0, 3.0]).unwrap().as_slice(), &[0.0, 0.0]);
        assert_eq!(ae.decode(&Latent::zeros(2)).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn dimension_mismatch() {
        let ae = AutoEncoder::identity(2);
        assert!(ae.encode(&[1.0]).is_err());
        assert!(ae.decode(&Latent::zeros(3)).is_err());
    }

    #[test]
    fn random_linear_encode_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut l = LinearAutoEncoder::zeros(4, 3);
        l.encoder.iter_mut().chain(l.encoder_bias.iter_mut()).for_each(|v| *v = rng.sample(StandardNormal));
        let x = [0.5, -1.0, 2.0, 0.25];
        let ae = AutoEncoder::Linear(l.clone());
        let z = ae.encode(&x).unwrap();
        for r in 0..3 {
            let mut want = l.encoder_bias[r];
            for c in 0..4 {
                want += l.encoder[r * 4 + c] * x[c];
            }
            assert!((z.0[r] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_training_rejected_and_empty_rejected() {
        let cfg = AutoEncoderConfig { mode: AutoEncoderMode::Identity, ..Default::default() };
        assert!(train_autoencoder(&[vec![1.0]], &cfg).is_err());
        assert!(matches!(train_autoencoder(&[], &AutoEncoderConfig::default()), Err(Error::Empty(_))));
    }

    #[test]
    fn exact_subspace_fit() {
        // 5-dim data spanning a 2-dim affine subspace
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let basis: Vec<Vec<f64>> = (0..2).map(|_| (0..5).map(|_| rng.sample(StandardNormal)).collect()).collect();
        let offset: Vec<f64> = (0..5).map(|i| i as f64).collect();
        let data: Vec<Vec<f64>> = (0..100)
            .map(|_| {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                (0..5).map(|i| offset[i] + a * basis[0][i] + b * basis[1][i]).collect()
            })
            .collect();
        for k in [2, 3] {
            let ae = train_autoencoder(&data, &AutoEncoderConfig { latent_dim: k, ..Default::default() }).unwrap();
            let AutoEncoder::Linear(l) = &ae else { unreachable!() };
            assert!(l.reconstruction_error(&data) <= 1e-6, "k={k}");
            for x in &data {
                let back = ae.decode(&ae.encode(x).unwrap()).unwrap();
                let rel = crate::latent::distance(&back, x) / crate::latent::norm(x);
                assert!(rel <= 1e-3);
            }
        }
    }

    #[test]
    fn truncated_fit_matches_pca_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let scales = [3.0, 2.0, 1.0, 0.5];
        let data: Vec<Vec<f64>> = (0..400)
            .map(|_| scales.iter().map(|s| s * rng.sample::<f64, _>(StandardNormal) + 1.0).collect())
            .collect();
        let ae = train_autoencoder(&data, &AutoEncoderConfig { latent_dim: 2, ..Default::default() }).unwrap();
        let AutoEncoder::Linear(l) = &ae else { unreachable!() };

        // oracle: sum of discarded covariance eigenvalues
        let n = data.len() as f64;
        let mean: Vec<f64> = (0..4).map(|j| data.iter().map(|x| x[j]).sum::<f64>() / n).collect();
        let cov = DMatrix::from_fn(4, 4, |a, b| data.iter().map(|x| (x[a] - mean[a]) * (x[b] - mean[b])).sum::<f64>() / n);
        let mut eig: Vec<f64> = cov.symmetric_eigen().eigenvalues.iter().copied().collect();
        eig.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let residual: f64 = eig[2..].iter().sum();
        let err = l.reconstruction_error(&data);
        assert!((err - residual).abs() <= 0.05 * residual, "err {err} residual {residual}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn gradient_matches_central_differences(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut l = LinearAutoEncoder::zeros(3, 2);
            for v in l.encoder.iter_mut().chain(&mut l.encoder_bias).chain(&mut l.decoder).chain(&mut l.decoder_bias) {
                *v = rng.sample(StandardNormal);
            }
            let data: Vec<Vec<f64>> =
                (0..6).map(|_| (0..3).map(|_| rng.sample(StandardNormal)).collect()).collect();
            let g = l.reconstruction_gradient(&data);
            let h = 1e-5;
            let check = |get: fn(&mut LinearAutoEncoder) -> &mut Vec<f64>, analytic: &[f64]| {
                for i in 0..analytic.len() {
                    let mut plus = l.clone();
                    get(&mut plus)[i] += h;
                    let mut minus = l.clone();
                    get(&mut minus)[i] -= h;
                    let fd = (plus.reconstruction_error(&data) - minus.reconstruction_error(&data)) / (2.0 * h);
                    let denom = fd.abs().max(analytic[i].abs()).max(1e-8);
                    assert!((fd - analytic[i]).abs() / denom <= 1e-5, "fd {fd} analytic {}", analytic[i]);
                }
            };
            check(|m| &mut m.encoder, &g.encoder);
            check(|m| &mut m.encoder_bias, &g.encoder_bias);
            check(|m| &mut m.decoder, &g.decoder);
            check(|m| &mut m.decoder_bias, &g.decoder_bias);
        }
    }
}
