use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mmf_core::bench::{benchmark_controllers, BENCH_HEADER};
use mmf_core::experiment::{output_paths, run_experiment, ExperimentConfig, GainMode, PolicyKind, Scenario};
use mmf_core::sim::{equal_groups, generate_synthetic_rating_matrix, write_groups};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "mmf", version, about = "Fair dynamic learning-to-rank simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a multi-trial simulation and write the trial log and summary.
    Run(RunArgs),
    /// Time FairCo and MMF top-k selection across corpus sizes.
    Bench(BenchArgs),
    /// Write a synthetic low-rank rating matrix, user features and groups.
    GenRatings(GenArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML config file; flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scenario: Option<Scenario>,
    #[arg(long)]
    policy: Option<PolicyKind>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    mmf_k: Option<usize>,
    #[arg(long)]
    fairco_gain: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated prefixes, e.g. 1,3,5,10.
    #[arg(long, value_delimiter = ',')]
    tracked_ks: Option<Vec<usize>>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    metric_cadence: Option<usize>,
    #[arg(long)]
    final_window: Option<usize>,
    /// Use realized binary relevance as NDCG gains.
    #[arg(long)]
    realized_gains: bool,
    /// Record per-step policy wall time in the log.
    #[arg(long)]
    timing: bool,
    /// Run trials one after another.
    #[arg(long)]
    serial: bool,
    #[arg(long)]
    p_neg: Option<f64>,
    #[arg(long)]
    num_docs: Option<usize>,
    #[arg(long)]
    num_users: Option<usize>,
    #[arg(long)]
    num_groups: Option<usize>,
    #[arg(long)]
    latent_rank: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    ratings: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    groups: Option<PathBuf>,
}

macro_rules! apply {
    ($target:expr, $($field:ident),+ from $src:expr) => {
        $(if let Some(v) = $src.$field.clone() { $target.$field = v.into(); })+
    };
}

impl RunArgs {
    fn into_config(self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)
                .with_context(|| format!("reading config {}", path.display()))?,
            None => ExperimentConfig::default(),
        };
        apply!(cfg, scenario, policy, lambda, mmf_k, fairco_gain, trials, steps, seed,
            metric_cadence, final_window from self);
        if let Some(ks) = self.tracked_ks.clone() {
            cfg.tracked_ks = Some(ks);
        }
        if self.output_dir.is_some() {
            cfg.output_dir = self.output_dir.clone();
        }
        if self.realized_gains {
            cfg.ndcg_gains = GainMode::Realization;
        }
        cfg.timing |= self.timing;
        if self.serial {
            cfg.parallel = false;
        }
        apply!(cfg.news, p_neg from self);
        if let Some(n) = self.num_docs {
            cfg.news.num_docs = n;
            cfg.movie.num_docs = n;
        }
        apply!(cfg.movie, num_users, num_groups, latent_rank, learning_rate from self);
        for (slot, value) in [
            (&mut cfg.movie.ratings, &self.ratings),
            (&mut cfg.movie.features, &self.features),
            (&mut cfg.movie.groups, &self.groups),
        ] {
            if value.is_some() {
                *slot = value.clone();
            }
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "1000,10000")]
    n: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 5)]
    m: usize,
    #[arg(long, default_value_t = 200)]
    repetitions: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 10_000)]
    users: usize,
    #[arg(long, default_value_t = 100)]
    docs: usize,
    #[arg(long, default_value_t = 5)]
    groups: usize,
    #[arg(long, default_value_t = 10)]
    rank: usize,
    #[arg(long, default_value_t = 10.0)]
    slope: f64,
    #[arg(long, default_value_t = 3.0)]
    center: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

fn run(args: RunArgs) -> Result<()> {
    let cfg = args.into_config()?;
    let out = run_experiment(&cfg)?;
    if let Some(dir) = &cfg.output_dir {
        let (log, summary) = output_paths(&cfg, dir);
        eprintln!("wrote {} and {}", log.display(), summary.display());
    } else {
        print!("{}", out.log.to_csv_string());
    }
    for (key, m) in &out.summary.metrics {
        if key.ends_with("@10") || key == "ips_error" {
            eprintln!("{key:>18}: {:.4} ± {:.4}", m.mean, m.std);
        }
    }
    Ok(())
}

fn bench(args: BenchArgs) -> Result<()> {
    let rows = benchmark_controllers(&args.n, args.k, args.m, args.repetitions, args.seed)?;
    let mut text = format!("{BENCH_HEADER}\n");
    for r in &rows {
        text.push_str(&r.to_csv_line());
        text.push('\n');
    }
    match &args.out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn gen_ratings(args: GenArgs) -> Result<()> {
    if args.groups == 0 || args.groups > args.docs {
        bail!("groups must lie in 1..={}", args.docs);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let matrix = generate_synthetic_rating_matrix(
        args.users, args.docs, args.rank, args.slope, args.center, &mut rng,
    )?;
    std::fs::create_dir_all(&args.out_dir)?;
    let ratings = args.out_dir.join("ratings.csv");
    let features = args.out_dir.join("features.csv");
    let groups = args.out_dir.join("groups.csv");
    matrix.write_csv(&ratings, &features)?;
    write_groups(&groups, &equal_groups(args.docs, args.groups))?;
    eprintln!("wrote {}, {} and {}", ratings.display(), features.display(), groups.display());
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(a) => run(a),
        Command::Bench(a) => bench(a),
        Command::GenRatings(a) => gen_ratings(a),
    }
}
