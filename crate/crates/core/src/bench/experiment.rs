//! Paired-seed guided/unguided runs, loss-term ablation and window sweeps.

use std::time::Instant;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::metrics::{group_distance, intra_cluster_diversity, DiversityConfig, GroupOracle};
use crate::diffusion::{sample, sample_trajectory};
use crate::error::{Error, Result};
use crate::guidance::{guided_trajectory, GuidanceConfig, GuidanceContext, StepLoss};
use crate::latent::{distance, Latent};
use crate::model::DiffusionModel;
use crate::prior::{Projector, SamplePools};

/// Trained pieces an experiment runs against.
#[derive(Clone, Copy)]
pub struct Components<'a> {
    pub model: &'a DiffusionModel,
    pub projector: &'a Projector,
    pub pools: &'a SamplePools,
    pub oracle: &'a GroupOracle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub guidance: GuidanceConfig,
    pub samples: usize,
    /// Sample `i` uses seed `seed + i` and label `i % groups`.
    pub seed: u64,
    /// Cluster count for diversity; `None` uses the number of groups.
    pub clusters: Option<usize>,
    pub max_pairs: usize,
    /// Worker threads; 1 runs inline.
    pub jobs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self { guidance: GuidanceConfig::default(), samples: 500, seed: 0, clusters: None, max_pairs: 2000, jobs: 1 }
    }
}

impl ExperimentConfig {
    pub fn sample_seed(&self, i: usize) -> u64 {
        self.seed.wrapping_add(i as u64)
    }

    /// Short hex digest of every field that affects results.
    pub fn config_hash(&self) -> String {
        let text = format!(
            "{:?}|{}|{}|{:?}|{}",
            self.guidance, self.samples, self.seed, self.clusters, self.max_pairs
        );
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub group_distance: f64,
    pub intra_diversity: Vec<f64>,
    pub group_accuracy: Vec<Option<f64>>,
    pub seconds_per_sample: f64,
    pub config_hash: String,
    pub seed: u64,
}

impl MetricsReport {
    /// Same report with wall time zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> Self {
        Self { seconds_per_sample: 0.0, ..self.clone() }
    }

    /// Mean accuracy over groups that received samples.
    pub fn mean_accuracy(&self) -> f64 {
        let present: Vec<f64> = self.group_accuracy.iter().flatten().copied().collect();
        present.iter().sum::<f64>() / present.len().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub index: usize,
    pub seed: u64,
    pub label: usize,
    /// Decoded final samples in data space.
    pub unguided: Vec<f64>,
    pub guided: Vec<f64>,
    pub step_losses: Vec<StepLoss>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub unguided: MetricsReport,
    pub guided: MetricsReport,
    pub samples: Vec<SampleRecord>,
}

impl ExperimentReport {
    pub fn correction(&self) -> f64 {
        correction_metric(self.unguided.group_distance, self.guided.group_distance)
    }

    /// Share of corrected steps whose loss did not increase across the shift.
    pub fn non_increasing_fraction(&self) -> Option<f64> {
        let all: Vec<&StepLoss> = self.samples.iter().flat_map(|s| &s.step_losses).collect();
        (!all.is_empty()).then(|| all.iter().filter(|l| l.after <= l.before).count() as f64 / all.len() as f64)
    }

    /// Mean data-space distance between paired guided and unguided samples.
    pub fn mean_displacement(&self) -> f64 {
        let n = self.samples.len().max(1) as f64;
        self.samples.iter().map(|s| distance(&s.guided, &s.unguided)).sum::<f64>() / n
    }
}

/// `1 - |guided| / |unguided|` group distance; 1 is perfect balance, 0 no change.
pub fn correction_metric(unguided: f64, guided: f64) -> f64 {
    if unguided == 0.0 {
        return if guided == 0.0 { 0.0 } else { f64::NEG_INFINITY };
    }
    1.0 - guided.abs() / unguided.abs()
}

fn map_jobs<T: Send, F>(n: usize, jobs: usize, f: F) -> Result<Vec<T>>
where
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    if jobs <= 1 {
        return (0..n).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| (0..n).into_par_iter().map(f).collect())
}

fn labels(c: &Components<'_>) -> usize {
    c.model.denoiser.config().num_classes
}

/// Unguided final samples (data space) and seconds per sample.
fn unguided_samples(c: &Components<'_>, cfg: &ExperimentConfig) -> Result<(Vec<Vec<f64>>, f64)> {
    let classes = labels(c);
    let start = Instant::now();
    let out = map_jobs(cfg.samples, cfg.jobs, |i| {
        let z = sample(&c.model.denoiser, i % classes, &c.model.schedule, cfg.sample_seed(i), cfg.guidance.sampler)?;
        c.model.autoencoder.decode(&z)
    })?;
    Ok((out, per_sample(start, cfg.samples)))
}

type Guided = (Vec<f64>, Vec<StepLoss>);

fn guided_samples(c: &Components<'_>, cfg: &ExperimentConfig, guidance: &GuidanceConfig) -> Result<(Vec<Guided>, f64)> {
    let classes = labels(c);
    let m = c.model;
    let start = Instant::now();
    let out = map_jobs(cfg.samples, cfg.jobs, |i| {
        let mut ctx = GuidanceContext::new(c.projector, c.pools, &m.autoencoder, &m.schedule, 0)?;
        let traj = guided_trajectory(&m.denoiser, &mut ctx, guidance, i % classes, cfg.sample_seed(i))?;
        Ok((m.autoencoder.decode(traj.final_latent())?, traj.step_losses))
    })?;
    Ok((out, per_sample(start, cfg.samples)))
}

fn per_sample(start: Instant, n: usize) -> f64 {
    start.elapsed().as_secs_f64() / n.max(1) as f64
}

fn metrics(c: &Components<'_>, cfg: &ExperimentConfig, finals: &[Vec<f64>], seconds: f64, hash: &str) -> Result<MetricsReport> {
    let classes = labels(c);
    let labeled: Vec<(usize, Vec<f64>)> = finals.iter().enumerate().map(|(i, x)| (i % classes, x.clone())).collect();
    let signals = labeled.iter().map(|(g, x)| c.oracle.classify_attribute(x, *g)).collect::<Result<Vec<_>>>()?;
    let div = DiversityConfig { clusters: cfg.clusters.unwrap_or(classes), max_pairs: cfg.max_pairs, seed: cfg.seed };
    let intra_diversity = (0..classes)
        .map(|g| {
            let members: Vec<Vec<f64>> = labeled.iter().filter(|(l, _)| *l == g).map(|(_, x)| x.clone()).collect();
            if members.len() < 2 * div.clusters {
                Ok(0.0)
            } else {
                intra_cluster_diversity(&members, &div)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport {
        group_distance: group_distance(&signals)?,
        intra_diversity,
        group_accuracy: c.oracle.group_accuracy(&labeled)?,
        seconds_per_sample: seconds,
        config_hash: hash.to_string(),
        seed: cfg.seed,
    })
}

fn check(c: &Components<'_>, cfg: &ExperimentConfig) -> Result<()> {
    if cfg.samples == 0 {
        return Err(Error::InvalidConfig("experiment needs at least one sample".into()));
    }
    cfg.guidance.validate(c.model.schedule.len())
}

/// Runs `cfg.samples` paired chains with and without correction.
pub fn run_experiment(c: &Components<'_>, cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    check(c, cfg)?;
    let hash = cfg.config_hash();
    let (plain, plain_secs) = unguided_samples(c, cfg)?;
    let (guided, guided_secs) = guided_samples(c, cfg, &cfg.guidance)?;
    let classes = labels(c);
    let guided_finals: Vec<Vec<f64>> = guided.iter().map(|(x, _)| x.clone()).collect();
    let report = ExperimentReport {
        unguided: metrics(c, cfg, &plain, plain_secs, &hash)?,
        guided: metrics(c, cfg, &guided_finals, guided_secs, &hash)?,
        samples: plain
            .into_iter()
            .zip(guided)
            .enumerate()
            .map(|(i, (unguided, (guided, step_losses)))| SampleRecord {
                index: i,
                seed: cfg.sample_seed(i),
                label: i % classes,
                unguided,
                guided,
                step_losses,
            })
            .collect(),
    };
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationCell {
    pub name: String,
    pub lambda_tc: f64,
    pub lambda_c: f64,
}

impl AblationCell {
    pub fn new(name: impl Into<String>, lambda_tc: f64, lambda_c: f64) -> Self {
        Self { name: name.into(), lambda_tc, lambda_c }
    }
}

/// Full model and both single-loss variants at the weights of `base`.
pub fn loss_term_grid(base: &GuidanceConfig) -> Vec<AblationCell> {
    vec![
        AblationCell::new("full", base.lambda_tc, base.lambda_c),
        AblationCell::new("no_prior", 0.0, base.lambda_c),
        AblationCell::new("no_direct", base.lambda_tc, 0.0),
    ]
}

/// Scales both weights of `base` by each factor.
pub fn weight_sweep_grid(base: &GuidanceConfig, factors: &[f64]) -> Vec<AblationCell> {
    factors
        .iter()
        .map(|f| AblationCell::new(format!("scale_{f}"), base.lambda_tc * f, base.lambda_c * f))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub cell: AblationCell,
    pub report: MetricsReport,
    pub correction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub unguided: MetricsReport,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.cell.name == name)
    }
}

/// One guided run per cell against a shared unguided baseline. A cell with
/// both weights zero runs with correction disabled.
pub fn run_ablation(c: &Components<'_>, cfg: &ExperimentConfig, grid: &[AblationCell]) -> Result<AblationTable> {
    if grid.is_empty() {
        return Err(Error::Empty("ablation grid".into()));
    }
    check(c, cfg)?;
    let (plain, secs) = unguided_samples(c, cfg)?;
    let unguided = metrics(c, cfg, &plain, secs, &cfg.config_hash())?;
    let rows = grid
        .iter()
        .map(|cell| {
            let mut guidance = GuidanceConfig { lambda_tc: cell.lambda_tc, lambda_c: cell.lambda_c, ..cfg.guidance.clone() };
            if cell.lambda_tc == 0.0 && cell.lambda_c == 0.0 {
                // no guidance signal: the cell is the unguided baseline
                guidance = guidance.disabled_window();
            }
            let cell_cfg = ExperimentConfig { guidance: guidance.clone(), ..cfg.clone() };
            let (guided, secs) = guided_samples(c, cfg, &guidance)?;
            let finals: Vec<Vec<f64>> = guided.into_iter().map(|(x, _)| x).collect();
            let report = metrics(c, cfg, &finals, secs, &cell_cfg.config_hash())?;
            let correction = correction_metric(unguided.group_distance, report.group_distance);
            Ok(AblationRow { cell: cell.clone(), report, correction })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationTable { unguided, rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub window: (usize, usize),
    pub displacement: f64,
    pub group_distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSweep {
    pub rows: Vec<SweepRow>,
    /// Whether displacement never decreases as the window moves later.
    pub monotone: bool,
    /// Share of consecutive rows where displacement does not decrease.
    pub monotone_fraction: f64,
}

/// Windows of `width` steps starting at each of `starts`.
pub fn window_positions(starts: &[usize], width: usize) -> Vec<(usize, usize)> {
    starts.iter().map(|&s| (s, s + width - 1)).collect()
}

/// Mean paired displacement and guided group distance per window, in the
/// order given. Windows with `start > end` correct nothing.
pub fn window_sweep(c: &Components<'_>, cfg: &ExperimentConfig, windows: &[(usize, usize)]) -> Result<WindowSweep> {
    if windows.is_empty() {
        return Err(Error::Empty("window list".into()));
    }
    check(c, cfg)?;
    for &(start, end) in windows {
        let g = GuidanceConfig { window_start: start, window_end: end, ..cfg.guidance.clone() };
        g.validate(c.model.schedule.len())?;
    }
    let (plain, _) = unguided_samples(c, cfg)?;
    let rows = windows
        .iter()
        .map(|&(start, end)| {
            let g = GuidanceConfig { window_start: start, window_end: end, ..cfg.guidance.clone() };
            let (guided, _) = guided_samples(c, cfg, &g)?;
            let finals: Vec<Vec<f64>> = guided.into_iter().map(|(x, _)| x).collect();
            let displacement = finals.iter().zip(&plain).map(|(a, b)| distance(a, b)).sum::<f64>() / finals.len() as f64;
            let report = metrics(c, cfg, &finals, 0.0, "")?;
            Ok(SweepRow { window: (start, end), displacement, group_distance: report.group_distance })
        })
        .collect::<Result<Vec<_>>>()?;
    let steps = rows.windows(2).filter(|w| w[1].displacement >= w[0].displacement).count();
    let pairs = rows.len().saturating_sub(1);
    Ok(WindowSweep {
        monotone: steps == pairs,
        monotone_fraction: if pairs == 0 { 1.0 } else { steps as f64 / pairs as f64 },
        rows,
    })
}

/// Unguided trajectory for sample `i` of an experiment, as the report's
/// paired baseline would draw it.
pub fn unguided_trajectory(c: &Components<'_>, cfg: &ExperimentConfig, i: usize) -> Result<Vec<Latent>> {
    let m = c.model;
    sample_trajectory(&m.denoiser, i % labels(c), &m.schedule, cfg.sample_seed(i), cfg.guidance.sampler)
}
