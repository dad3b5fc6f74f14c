mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use latent_corrector::bench::pipeline::{build_pools, train_diffusion};
use latent_corrector::bench::report;
use latent_corrector::bench::{
    loss_term_grid, run_ablation, run_experiment, weight_sweep_grid, window_positions, window_sweep, Components,
    ExperimentConfig, GroupOracle,
};
use latent_corrector::checkpoint::Checkpoint;
use latent_corrector::diffusion::sample_trajectory;
use latent_corrector::guidance::{guided_trajectory, GuidanceContext};
use latent_corrector::io::write_atomic;
use latent_corrector::model::DiffusionModel;
use latent_corrector::prior::{evaluate_prior_loss, train_projector, Projector, SamplePools};

use config::{FileConfig, Overrides, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Core(#[from] latent_corrector::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_numerical() => 3,
            _ => 2,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "latent-corrector", version, about = "Train, sample and correct small conditional diffusion models")]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `paths.out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for evaluate, ablate and window-sweep.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the denoiser; also writes the training set and both exemplar pools.
    TrainDiffusion,
    /// Train the projector on the exemplar pools.
    TrainPrior,
    /// Unguided samples to samples.csv.
    Sample(SampleArgs),
    /// Corrected samples to corrected.csv plus per-step losses.
    Correct(SampleArgs),
    /// Paired guided/unguided run with metrics.
    Evaluate,
    /// Loss-term ablation and weight sweep.
    Ablate {
        /// Factors applied to both loss weights, one extra row each.
        #[arg(long, value_delimiter = ',', default_values_t = [0.5, 2.0])]
        scales: Vec<f64>,
    },
    /// Displacement and group distance per window position.
    WindowSweep {
        /// First step of each window.
        #[arg(long, value_delimiter = ',', default_values_t = [1, 6, 11, 16, 21, 26])]
        starts: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        width: usize,
    },
}

#[derive(Debug, clap::Args)]
struct SampleArgs {
    /// Number of samples.
    #[arg(long, short, default_value_t = 100)]
    n: usize,
    /// Class label for every sample; cycles through classes when omitted.
    #[arg(long)]
    label: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let file = cli.config.as_deref().map(FileConfig::load).transpose()?;
    let cfg = RunConfig::resolve(file, cli.seed, cli.out, &cli.overrides)?;
    let jobs = cli.jobs.max(1);
    match cli.command {
        Command::TrainDiffusion => train_diffusion_cmd(&cfg),
        Command::TrainPrior => train_prior_cmd(&cfg),
        Command::Sample(args) => sample_cmd(&cfg, &args, false),
        Command::Correct(args) => sample_cmd(&cfg, &args, true),
        Command::Evaluate => evaluate_cmd(&cfg, jobs),
        Command::Ablate { scales } => ablate_cmd(&cfg, jobs, &scales),
        Command::WindowSweep { starts, width } => sweep_cmd(&cfg, jobs, &starts, width),
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, bytes).map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn require(path: &Path, what: &str) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::Input(format!("missing {what} {}: {e}", path.display())))
}

fn load_model(cfg: &RunConfig) -> Result<DiffusionModel> {
    let path = cfg.path(&cfg.file.paths.diffusion);
    let bytes = require(&path, "diffusion checkpoint")?;
    Checkpoint::from_bytes(&bytes)
        .and_then(|c| DiffusionModel::from_checkpoint(&c))
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn load_projector(cfg: &RunConfig) -> Result<Projector> {
    let path = cfg.path(&cfg.file.paths.prior);
    let bytes = require(&path, "prior checkpoint")?;
    Checkpoint::from_bytes(&bytes)
        .and_then(|c| Projector::from_checkpoint(&c))
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn load_pools(cfg: &RunConfig) -> Result<SamplePools> {
    let read = |p: &Path, what: &str| -> Result<_> {
        let path = cfg.path(p);
        let bytes = require(&path, what)?;
        report::read_exemplars(&bytes, &format!("{what} {}", path.display())).map_err(|e| CliError::Input(e.to_string()))
    };
    Ok(SamplePools {
        positives: read(&cfg.file.paths.positives, "positive pool")?,
        negatives: read(&cfg.file.paths.negatives, "negative pool")?,
    })
}

fn train_diffusion_cmd(cfg: &RunConfig) -> Result<()> {
    let setup = cfg.diffusion_setup()?;
    let trained = train_diffusion(&setup)?;
    let model = &trained.model;
    let pools = build_pools(model, &setup.spec, &cfg.pool_setup())?;
    let dim = setup.spec.dim();
    write(&cfg.path(&cfg.file.paths.diffusion), &model.to_checkpoint().to_bytes())?;
    write(&cfg.out.join("train_data.csv"), &report::dataset_csv(dim, &trained.data)?)?;
    write(&cfg.path(&cfg.file.paths.positives), &report::exemplars_csv(dim, &pools.positives)?)?;
    write(&cfg.path(&cfg.file.paths.negatives), &report::exemplars_csv(dim, &pools.negatives)?)?;
    println!("final training loss: {}", trained.report.final_loss().unwrap_or(f64::NAN));
    Ok(())
}

fn train_prior_cmd(cfg: &RunConfig) -> Result<()> {
    let model = load_model(cfg)?;
    let pools = load_pools(cfg)?;
    let pcfg = cfg.projector_config();
    let (projector, rep) = train_projector(&pools, &model.autoencoder, &pcfg)?;
    write(&cfg.path(&cfg.file.paths.prior), &projector.to_checkpoint().to_bytes())?;
    if let Some(last) = rep.epoch_losses.last() {
        println!("final epoch loss: {last}");
    }
    println!("prior loss: {}", evaluate_prior_loss(&pools, &model.autoencoder, &projector, pcfg.tau)?);
    Ok(())
}

fn sample_cmd(cfg: &RunConfig, args: &SampleArgs, corrected: bool) -> Result<()> {
    let model = load_model(cfg)?;
    let classes = model.denoiser.config().num_classes;
    if let Some(l) = args.label {
        model.denoiser.check_label(l)?;
    }
    let guided = if corrected { Some((load_projector(cfg)?, load_pools(cfg)?)) } else { None };
    let mut rows = Vec::with_capacity(args.n);
    let mut losses = Vec::new();
    for i in 0..args.n {
        let label = args.label.unwrap_or(i % classes);
        let seed = cfg.seed.wrapping_add(i as u64);
        let z = match &guided {
            None => sample_trajectory(&model.denoiser, label, &model.schedule, seed, cfg.guidance.sampler)?
                .pop()
                .expect("non-empty trajectory"),
            Some((projector, pools)) => {
                let mut ctx = GuidanceContext::new(projector, pools, &model.autoencoder, &model.schedule, seed)?;
                let traj = guided_trajectory(&model.denoiser, &mut ctx, &cfg.guidance, label, seed)?;
                losses.push((i, traj.step_losses.clone()));
                traj.latents.into_iter().last().expect("non-empty trajectory")
            }
        };
        rows.push((i, seed, label, model.autoencoder.decode(&z)?));
    }
    let dim = model.autoencoder.data_dim();
    let name = if corrected { "corrected" } else { "samples" };
    write(&cfg.out.join(format!("{name}.csv")), &report::samples_csv(dim, &rows)?)?;
    if dim == 2 && !rows.is_empty() {
        let points: Vec<(usize, Vec<f64>)> = rows.iter().map(|r| (r.2, r.3.clone())).collect();
        write(&cfg.out.join(format!("{name}.svg")), report::scatter_svg(&points, name)?.as_bytes())?;
    }
    if corrected {
        write(&cfg.out.join("step_losses.csv"), &report::step_losses_csv(&losses)?)?;
    }
    Ok(())
}

struct Trained {
    model: DiffusionModel,
    projector: Projector,
    pools: SamplePools,
    oracle: GroupOracle,
}

impl Trained {
    fn load(cfg: &RunConfig) -> Result<Self> {
        Ok(Self {
            oracle: GroupOracle::fit(&cfg.spec()?)?,
            model: load_model(cfg)?,
            projector: load_projector(cfg)?,
            pools: load_pools(cfg)?,
        })
    }

    fn components(&self) -> Components<'_> {
        Components { model: &self.model, projector: &self.projector, pools: &self.pools, oracle: &self.oracle }
    }
}

fn experiment_config(cfg: &RunConfig, jobs: usize) -> ExperimentConfig {
    let e = &cfg.file.eval;
    ExperimentConfig {
        guidance: cfg.guidance.clone(),
        samples: e.samples,
        seed: cfg.seed,
        clusters: e.clusters,
        max_pairs: e.max_pairs,
        jobs,
    }
}

fn evaluate_cmd(cfg: &RunConfig, jobs: usize) -> Result<()> {
    let t = Trained::load(cfg)?;
    let ecfg = experiment_config(cfg, jobs);
    let r = run_experiment(&t.components(), &ecfg)?;
    let dim = t.model.autoencoder.data_dim();
    write(&cfg.out.join("metrics.csv"), &report::metrics_csv(&[("unguided", &r.unguided), ("guided", &r.guided)])?)?;
    let rows = |guided: bool| -> Vec<(usize, u64, usize, Vec<f64>)> {
        r.samples.iter().map(|s| (s.index, s.seed, s.label, if guided { s.guided.clone() } else { s.unguided.clone() })).collect()
    };
    write(&cfg.out.join("eval_unguided.csv"), &report::samples_csv(dim, &rows(false))?)?;
    write(&cfg.out.join("eval_guided.csv"), &report::samples_csv(dim, &rows(true))?)?;
    let losses: Vec<_> = r.samples.iter().map(|s| (s.index, s.step_losses.clone())).collect();
    write(&cfg.out.join("eval_step_losses.csv"), &report::step_losses_csv(&losses)?)?;
    if dim == 2 {
        let pts: Vec<(usize, Vec<f64>)> = r.samples.iter().map(|s| (s.label, s.guided.clone())).collect();
        write(&cfg.out.join("eval_guided.svg"), report::scatter_svg(&pts, "guided samples")?.as_bytes())?;
        let pts: Vec<(usize, Vec<f64>)> = r.samples.iter().map(|s| (s.label, s.unguided.clone())).collect();
        write(&cfg.out.join("eval_unguided.svg"), report::scatter_svg(&pts, "unguided samples")?.as_bytes())?;
    }
    println!("group distance: unguided {} guided {}", r.unguided.group_distance, r.guided.group_distance);
    println!("correction: {}", r.correction());
    println!(
        "seconds per sample: unguided {:.3e} guided {:.3e}",
        r.unguided.seconds_per_sample, r.guided.seconds_per_sample
    );
    Ok(())
}

fn ablate_cmd(cfg: &RunConfig, jobs: usize, scales: &[f64]) -> Result<()> {
    let t = Trained::load(cfg)?;
    let ecfg = experiment_config(cfg, jobs);
    let mut grid = loss_term_grid(&cfg.guidance);
    grid.extend(weight_sweep_grid(&cfg.guidance, scales));
    let table = run_ablation(&t.components(), &ecfg, &grid)?;
    write(&cfg.out.join("ablation.csv"), &report::ablation_csv(&table)?)?;
    for row in &table.rows {
        println!("{}: correction {} group distance {}", row.cell.name, row.correction, row.report.group_distance);
    }
    Ok(())
}

fn sweep_cmd(cfg: &RunConfig, jobs: usize, starts: &[usize], width: usize) -> Result<()> {
    if width == 0 {
        return Err(CliError::Config("window width must be positive".into()));
    }
    let t = Trained::load(cfg)?;
    let ecfg = experiment_config(cfg, jobs);
    let sweep = window_sweep(&t.components(), &ecfg, &window_positions(starts, width))?;
    write(&cfg.out.join("window_sweep.csv"), &report::window_sweep_csv(&sweep.rows)?)?;
    println!("monotone: {} ({:.2} of consecutive windows non-decreasing)", sweep.monotone, sweep.monotone_fraction);
    Ok(())
}
