use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use muffin::data::SplitName;
use muffin::mlp::Activation;
use muffin::report::{self, RunConfig};
use muffin::search::{ProxyMode, UnprivBasis};
use muffin::Result;

/// Fairness-driven search over fused off-the-shelf classifiers.
#[derive(Parser)]
#[command(name = "muffin", version)]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for splits, sampling and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for candidate evaluation.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and model pool from a preset.
    Synth {
        /// complementary-2attr or uniform-fair.
        #[arg(long, default_value = "complementary-2attr")]
        preset: String,
        /// Override the preset's complementarity rate.
        #[arg(long)]
        complementarity: Option<f64>,
    },
    /// Score every pool model on its own and break down pairwise agreement.
    Metrics {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        fairness: FairnessArgs,
        /// Split for breakdown.csv: all, train, val or test.
        #[arg(long)]
        breakdown_split: Option<SplitName>,
    },
    /// Run the controller-driven search.
    Search(SearchArgs),
    /// Train and score every structure in the space.
    Oracle(SearchArgs),
}

#[derive(Args)]
struct Inputs {
    /// Directory holding dataset.csv, schema.json and pool.json.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Pool manifest (JSON list of model output files).
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct FairnessArgs {
    /// Floor on unfairness in the reward denominator.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Groups must trail overall accuracy by more than this to be flagged.
    #[arg(long)]
    margin: Option<f64>,
    /// Let an attribute's unknown group be flagged unprivileged.
    #[arg(long)]
    include_unknown: bool,
}

#[derive(Args)]
struct SearchArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[command(flatten)]
    fairness: FairnessArgs,
    #[arg(long)]
    episodes: Option<usize>,
    /// Models fused per structure.
    #[arg(long)]
    n_select: Option<usize>,
    /// Comma-separated hidden-layer counts to choose from.
    #[arg(long, value_delimiter = ',')]
    depths: Option<Vec<usize>>,
    /// Comma-separated hidden-layer widths to choose from.
    #[arg(long, value_delimiter = ',')]
    widths: Option<Vec<usize>>,
    /// Comma-separated activations (relu, tanh, sigmoid).
    #[arg(long, value_delimiter = ',')]
    activations: Option<Vec<Activation>>,
    /// Force this pool model into every structure.
    #[arg(long)]
    pin_model: Option<String>,
    /// weighted (default) or uniform.
    #[arg(long)]
    proxy_mode: Option<ProxyMode>,
    /// pool_mean (default) or per_episode.
    #[arg(long)]
    unpriv_basis: Option<UnprivBasis>,
    /// Comma-separated Pareto objectives, e.g. U_age,U_site,accuracy.
    #[arg(long, value_delimiter = ',')]
    objectives: Option<Vec<String>>,
    /// Episodes between controller checkpoints.
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Record per-episode wall time in history.csv.
    #[arg(long)]
    timing: bool,
}

fn base_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if let Some(o) = &cli.out {
        config.out = o.clone();
    }
    if let Some(w) = cli.workers {
        config.workers = w;
    }
    Ok(config)
}

fn apply_inputs(config: &mut RunConfig, inputs: &Inputs) {
    if let Some(dir) = &inputs.data {
        config.use_data_dir(dir);
    }
    if let Some(p) = &inputs.dataset {
        config.dataset = Some(p.clone());
    }
    if let Some(p) = &inputs.schema {
        config.schema = Some(p.clone());
    }
    if let Some(p) = &inputs.manifest {
        config.manifest = Some(p.clone());
    }
}

fn apply_fairness(config: &mut RunConfig, args: &FairnessArgs) {
    if let Some(e) = args.epsilon {
        config.epsilon = e;
    }
    if let Some(m) = args.margin {
        config.margin = m;
    }
    if args.include_unknown {
        config.exclude_unknown = false;
    }
}

fn apply_search(config: &mut RunConfig, args: &SearchArgs) {
    apply_inputs(config, &args.inputs);
    apply_fairness(config, &args.fairness);
    macro_rules! set {
        ($field:ident, $value:expr) => {
            if let Some(v) = $value {
                config.$field = v;
            }
        };
    }
    set!(episodes, args.episodes);
    set!(n_select, args.n_select);
    set!(depth_choices, args.depths.clone());
    set!(width_choices, args.widths.clone());
    set!(activations, args.activations.clone());
    set!(proxy_mode, args.proxy_mode);
    set!(unpriv_basis, args.unpriv_basis);
    set!(objectives, args.objectives.clone());
    set!(checkpoint_every, args.checkpoint_every);
    if args.pin_model.is_some() {
        config.pin_model = args.pin_model.clone();
    }
    if args.timing {
        config.timing = true;
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut config = base_config(&cli)?;
    match &cli.command {
        Command::Synth {
            preset,
            complementarity,
        } => {
            let (files, table) = report::cmd_synth(preset, config.seed, *complementarity, &config.out)?;
            print!("{table}");
            println!("wrote {} files to {}", files.len(), config.out.display());
        }
        Command::Metrics {
            inputs,
            fairness,
            breakdown_split,
        } => {
            apply_inputs(&mut config, inputs);
            apply_fairness(&mut config, fairness);
            if let Some(s) = breakdown_split {
                config.breakdown_split = *s;
            }
            for f in report::cmd_metrics(&config)? {
                println!("wrote {}", f.display());
            }
        }
        Command::Search(args) => {
            apply_search(&mut config, args);
            let best = report::cmd_search(&config)?;
            println!(
                "best episode {}: {} depth {} widths {:?} reward {:.4}, test accuracy {:.4}",
                best.episode,
                best.spec.selected_models.join("+"),
                best.spec.depth,
                best.spec.widths,
                best.reward,
                best.test.overall_accuracy
            );
        }
        Command::Oracle(args) => {
            apply_search(&mut config, args);
            let best = report::cmd_oracle(&config)?;
            println!(
                "{} structures; best {} depth {} widths {:?} reward {:.4}",
                best.evaluated.unwrap_or(0),
                best.spec.selected_models.join("+"),
                best.spec.depth,
                best.spec.widths,
                best.reward
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
