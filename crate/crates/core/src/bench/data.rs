//! Synthetic biased mixtures.
//!
//! Each group is an isotropic Gaussian around its mean, shifted by
//! `+attribute_offset` or `-attribute_offset` depending on a ±1 attribute
//! signal drawn with the group's own probability.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal, WeightedIndex};

use crate::denoiser::TrainingExample;
use crate::error::{Error, Result};
use crate::latent::Latent;
use crate::prior::Exemplar;

#[derive(Debug, Clone, PartialEq)]
pub struct GroupSpec {
    pub mean: Vec<f64>,
    /// Standard deviation of the isotropic component.
    pub cov_scale: f64,
    /// Share of the dataset drawn from this group.
    pub proportion: f64,
    /// Probability that a point carries attribute signal `+1`.
    pub attribute_prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasSpec {
    pub groups: Vec<GroupSpec>,
    pub attribute_offset: Vec<f64>,
}

impl BiasSpec {
    /// Two groups above and below the horizontal axis, attribute along the
    /// horizontal axis, each group skewed 90/10 towards attribute `+1`.
    pub fn benchmark() -> Self {
        let group = |y: f64| GroupSpec { mean: vec![0.0, y], cov_scale: 0.35, proportion: 0.5, attribute_prob: 0.9 };
        Self { groups: vec![group(2.5), group(-2.5)], attribute_offset: vec![1.5, 0.0] }
    }

    /// Same components with every attribute split evenly.
    pub fn balanced(&self) -> Self {
        let mut out = self.clone();
        out.groups.iter_mut().for_each(|g| g.attribute_prob = 0.5);
        out
    }

    pub fn dim(&self) -> usize {
        self.attribute_offset.len()
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.groups.is_empty() {
            return bad("bias spec needs at least one group".into());
        }
        let dim = self.dim();
        if dim == 0 {
            return bad("attribute offset must be non-empty".into());
        }
        for (i, g) in self.groups.iter().enumerate() {
            if g.mean.len() != dim {
                return bad(format!("group {i} mean has dimension {}, expected {dim}", g.mean.len()));
            }
            if !(g.cov_scale > 0.0 && g.cov_scale.is_finite()) {
                return bad(format!("group {i} covariance scale must be positive"));
            }
            if !(0.0..=1.0).contains(&g.proportion) || !(0.0..=1.0).contains(&g.attribute_prob) {
                return bad(format!("group {i} probabilities must lie in [0, 1]"));
            }
        }
        let total: f64 = self.groups.iter().map(|g| g.proportion).sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("group proportions sum to {total}, expected 1"));
        }
        Ok(())
    }

    /// Mean of the sub-component for `group` with attribute signal `attribute`.
    pub fn component_mean(&self, group: usize, attribute: i8) -> Vec<f64> {
        let s = f64::from(attribute);
        self.groups[group].mean.iter().zip(&self.attribute_offset).map(|(m, a)| m + s * a).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPoint {
    pub group: usize,
    /// ±1 attribute signal.
    pub attribute: i8,
    pub values: Vec<f64>,
}

impl LabeledPoint {
    pub fn training_example(&self) -> TrainingExample {
        TrainingExample { latent: Latent::new(self.values.clone()), label: self.group }
    }

    pub fn exemplar(&self) -> Exemplar {
        Exemplar { label: self.group, values: self.values.clone() }
    }
}

/// Draws `n` labeled points; deterministic given `seed`.
pub fn make_biased_dataset(spec: &BiasSpec, n: usize, seed: u64) -> Result<Vec<LabeledPoint>> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::InvalidConfig("dataset size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = WeightedIndex::new(spec.groups.iter().map(|g| g.proportion))
        .map_err(|e| Error::InvalidConfig(format!("group proportions: {e}")))?;
    let attributes: Vec<Bernoulli> = spec
        .groups
        .iter()
        .map(|g| Bernoulli::new(g.attribute_prob).map_err(|e| Error::InvalidConfig(e.to_string())))
        .collect::<Result<_>>()?;
    Ok((0..n)
        .map(|_| {
            let group = groups.sample(&mut rng);
            let attribute = if attributes[group].sample(&mut rng) { 1 } else { -1 };
            let scale = spec.groups[group].cov_scale;
            let values = spec
                .component_mean(group, attribute)
                .into_iter()
                .map(|m| m + scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            LabeledPoint { group, attribute, values }
        })
        .collect())
}
