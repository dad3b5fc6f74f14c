//! Fairness, diversity, accuracy and distribution-distance metrics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::data::BiasSpec;
use crate::error::{Error, Result};
use crate::latent::distance;

/// `Σ g_i / Σ |g_i|` over ±1 signals. Zero means balanced.
pub fn group_distance(signals: &[i8]) -> Result<f64> {
    if signals.is_empty() {
        return Err(Error::Empty("attribute signals".into()));
    }
    let sum: i64 = signals.iter().map(|g| i64::from(*g)).sum();
    let abs: i64 = signals.iter().map(|g| i64::from(g.abs())).sum();
    if abs == 0 {
        return Err(Error::InvalidConfig("attribute signals must be ±1".into()));
    }
    Ok(sum as f64 / abs as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiversityConfig {
    pub clusters: usize,
    /// Clusters with more distinct pairs than this are estimated from this
    /// many random pairs; smaller clusters use every pair.
    pub max_pairs: usize,
    pub seed: u64,
}

/// Mean within-cluster pairwise Euclidean distance.
///
/// Picks `clusters` centers by k-means++ seeding, assigns each sample to its
/// nearest center, averages pairwise distances inside each cluster and then
/// across clusters. A cluster with fewer than two members contributes zero.
pub fn intra_cluster_diversity(samples: &[Vec<f64>], cfg: &DiversityConfig) -> Result<f64> {
    let k = cfg.clusters;
    if k == 0 {
        return Err(Error::InvalidConfig("cluster count must be positive".into()));
    }
    if samples.len() < 2 * k {
        return Err(Error::Empty(format!("need at least {} samples for {k} clusters, got {}", 2 * k, samples.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let centers = kmeans_plus_plus(samples, k, &mut rng);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, x) in samples.iter().enumerate() {
        let nearest = centers
            .iter()
            .enumerate()
            .map(|(c, &idx)| (c, distance(x, &samples[idx])))
            .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
            .0;
        members[nearest].push(i);
    }
    let total: f64 = members.iter().map(|m| mean_pair_distance(samples, m, cfg.max_pairs, &mut rng)).sum();
    Ok(total / k as f64)
}

fn kmeans_plus_plus(samples: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut centers = vec![rng.gen_range(0..samples.len())];
    let mut d2: Vec<f64> = samples.iter().map(|x| distance(x, &samples[centers[0]]).powi(2)).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen_range(0.0..total);
            let mut pick = samples.len() - 1;
            for (i, w) in d2.iter().enumerate() {
                if target < *w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            // every sample coincides with a center already
            rng.gen_range(0..samples.len())
        };
        centers.push(next);
        for (d, x) in d2.iter_mut().zip(samples) {
            *d = d.min(distance(x, &samples[next]).powi(2));
        }
    }
    centers
}

fn mean_pair_distance(samples: &[Vec<f64>], members: &[usize], max_pairs: usize, rng: &mut ChaCha8Rng) -> f64 {
    let n = members.len();
    if n < 2 {
        return 0.0;
    }
    let all_pairs = n * (n - 1) / 2;
    if all_pairs <= max_pairs {
        let mut sum = 0.0;
        for a in 0..n {
            for b in a + 1..n {
                sum += distance(&samples[members[a]], &samples[members[b]]);
            }
        }
        return sum / all_pairs as f64;
    }
    let mut sum = 0.0;
    for _ in 0..max_pairs {
        let a = rng.gen_range(0..n);
        let mut b = rng.gen_range(0..n - 1);
        if b >= a {
            b += 1;
        }
        sum += distance(&samples[members[a]], &samples[members[b]]);
    }
    sum / max_pairs as f64
}

/// Bayes-optimal classifier for the generating mixture of a [`BiasSpec`].
#[derive(Debug, Clone, Default)]
pub struct GroupOracle {
    spec: Option<BiasSpec>,
}

impl GroupOracle {
    /// An oracle with no mixture attached; every query fails.
    pub fn unfitted() -> Self {
        Self { spec: None }
    }

    pub fn fit(spec: &BiasSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec: Some(spec.clone()) })
    }

    fn spec(&self) -> Result<&BiasSpec> {
        self.spec.as_ref().ok_or(Error::Unfitted)
    }

    fn log_component(spec: &BiasSpec, group: usize, attribute: i8, x: &[f64]) -> f64 {
        let s = spec.groups[group].cov_scale;
        let d2 = distance(x, &spec.component_mean(group, attribute)).powi(2);
        -0.5 * d2 / (s * s) - x.len() as f64 * s.ln()
    }

    /// Most probable group under the mixture, priors included.
    pub fn classify_group(&self, x: &[f64]) -> Result<usize> {
        let spec = self.spec()?;
        if x.len() != spec.dim() {
            return Err(Error::DimensionMismatch { expected: spec.dim(), got: x.len() });
        }
        let score = |k: usize| {
            let g = &spec.groups[k];
            let terms = [(1i8, g.attribute_prob), (-1i8, 1.0 - g.attribute_prob)]
                .map(|(a, p)| if p > 0.0 { (g.proportion * p).ln() + Self::log_component(spec, k, a, x) } else { f64::NEG_INFINITY });
            let m = terms[0].max(terms[1]);
            if m == f64::NEG_INFINITY {
                m
            } else {
                m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
            }
        };
        Ok((0..spec.num_groups())
            .map(|k| (k, score(k)))
            .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best })
            .0)
    }

    /// Attribute signal of `x` within `group`, comparing the two
    /// sub-component likelihoods with equal priors.
    pub fn classify_attribute(&self, x: &[f64], group: usize) -> Result<i8> {
        let spec = self.spec()?;
        if group >= spec.num_groups() {
            return Err(Error::LabelOutOfRange { label: group, classes: spec.num_groups() });
        }
        if x.len() != spec.dim() {
            return Err(Error::DimensionMismatch { expected: spec.dim(), got: x.len() });
        }
        let plus = Self::log_component(spec, group, 1, x);
        let minus = Self::log_component(spec, group, -1, x);
        Ok(if plus >= minus { 1 } else { -1 })
    }

    /// Per conditioned group, the share of samples the oracle assigns back
    /// to that group; `None` for groups with no samples.
    pub fn group_accuracy(&self, samples: &[(usize, Vec<f64>)]) -> Result<Vec<Option<f64>>> {
        let spec = self.spec()?;
        let mut hits = vec![0usize; spec.num_groups()];
        let mut counts = vec![0usize; spec.num_groups()];
        for (label, x) in samples {
            if *label >= spec.num_groups() {
                return Err(Error::LabelOutOfRange { label: *label, classes: spec.num_groups() });
            }
            counts[*label] += 1;
            if self.classify_group(x)? == *label {
                hits[*label] += 1;
            }
        }
        Ok(hits.iter().zip(&counts).map(|(h, c)| (*c > 0).then(|| *h as f64 / *c as f64)).collect())
    }
}

/// 1-Wasserstein distance between two empirical distributions on the line.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("wasserstein inputs".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    // integrate |F_a - F_b| over the merged support
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut prev = a[0].min(b[0]);
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(x), Some(y)) => x.min(*y),
            (Some(x), None) => *x,
            (None, Some(y)) => *y,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (next - prev);
        prev = next;
        while i < a.len() && a[i] == next {
            i += 1;
        }
        while j < b.len() && b[j] == next {
            j += 1;
        }
    }
    Ok(total)
}

/// Per-coordinate 1-Wasserstein distances between two point sets.
pub fn marginal_wasserstein(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<Vec<f64>> {
    let dim = a.first().map(Vec::len).ok_or_else(|| Error::Empty("wasserstein inputs".into()))?;
    (0..dim)
        .map(|d| {
            let xa: Vec<f64> = a.iter().map(|x| x[d]).collect();
            let xb: Vec<f64> = b.iter().map(|x| x[d]).collect();
            wasserstein_1d(&xa, &xb)
        })
        .collect()
}
