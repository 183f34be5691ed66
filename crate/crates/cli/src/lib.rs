//! Command-line driver for the `conetax` toolkit.

pub mod commands;
pub mod config;
pub mod svg;

use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use conetax::{Error, Hierarchy, HierarchyMode, ItemSet, Result};

use commands::Ctx;
use config::RunConfig;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "conetax", version, about = "Order-preserving taxonomy embeddings and hierarchy-aware heads")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Mode {
    Tree,
    Dag,
}

#[derive(Debug, Args)]
pub struct HierArgs {
    #[arg(long)]
    pub nodes: PathBuf,
    #[arg(long)]
    pub edges: PathBuf,
    #[arg(long, value_enum, default_value = "tree")]
    pub mode: Mode,
}

impl HierArgs {
    fn load(&self) -> Result<Hierarchy> {
        let mode = match self.mode {
            Mode::Tree => HierarchyMode::Tree,
            Mode::Dag => HierarchyMode::Dag,
        };
        commands::load_hierarchy(&self.nodes, &self.edges, mode)
    }
}

#[derive(Debug, Args, Default)]
pub struct ConfigArgs {
    /// `key = value` config file with `[section]` headers.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set train.lr=0.01`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Shorthand for `model.kind`.
    #[arg(long)]
    pub model: Option<String>,
    /// Shorthand for `model.dim`.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Shorthand for `train.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Shorthand for `train.epochs`.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Shorthand for `heads.head`.
    #[arg(long)]
    pub head: Option<String>,
}

impl ConfigArgs {
    /// File, then shorthand flags, then `--set`.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut rc = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(m) = &self.model {
            rc.set("model.kind", m)?;
        }
        if let Some(d) = self.dim {
            rc.set("model.dim", &d.to_string())?;
        }
        if let Some(s) = self.seed {
            rc.set("train.seed", &s.to_string())?;
        }
        if let Some(e) = self.epochs {
            rc.set("train.epochs", &e.to_string())?;
            rc.set("heads.epochs", &e.to_string())?;
        }
        if let Some(h) = &self.head {
            rc.set("heads.head", h)?;
        }
        for kv in &self.set {
            rc.apply_override(kv)?;
        }
        Ok(rc)
    }

    /// Whether the model was named on the command line or in a file.
    fn names_model(&self) -> bool {
        self.model.is_some() || self.config.is_some() || self.set.iter().any(|s| s.trim_start().starts_with("model."))
    }
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Generate hierarchies or synthetic items.
    #[command(subcommand)]
    Gen(GenCmd),
    /// Split a hierarchy's closure into basic/train/val/test edges.
    Split {
        #[command(flatten)]
        hier: HierArgs,
        #[arg(long, default_value_t = 0.1)]
        val: f64,
        #[arg(long, default_value_t = 0.2)]
        test: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train label embeddings on a hierarchy.
    TrainLabels {
        #[command(flatten)]
        hier: HierArgs,
        /// Split file; generated from `split.*` keys when absent.
        #[arg(long)]
        split: Option<PathBuf>,
        /// Warm start, `from=labels.tsv`.
        #[arg(long)]
        init: Option<String>,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train label embeddings and the item map jointly.
    TrainJoint {
        #[command(flatten)]
        hier: HierArgs,
        #[arg(long)]
        features: PathBuf,
        /// Warm start, `from=labels.tsv`.
        #[arg(long)]
        init: Option<String>,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a linear scorer under one of the probability heads.
    TrainHeads {
        #[command(flatten)]
        hier: HierArgs,
        #[arg(long)]
        features: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score full graph reconstruction of a label checkpoint.
    EvalReconstruction {
        #[command(flatten)]
        hier: HierArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        /// JSON output; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classify items with a joint checkpoint.
    EvalClassify {
        #[command(flatten)]
        hier: HierArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        features: PathBuf,
        /// Comma-separated hit@k cut-offs.
        #[arg(long, default_value = "1,3,5", value_delimiter = ',')]
        k: Vec<usize>,
        #[arg(long)]
        split_file: Option<PathBuf>,
        /// all, train, val or test.
        #[arg(long, default_value = "all")]
        part: String,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a probability head on a logits file.
    EvalHeads {
        #[command(flatten)]
        hier: HierArgs,
        #[arg(long)]
        logits: PathBuf,
        /// Items giving the true labels; probabilities only when absent.
        #[arg(long)]
        features: Option<PathBuf>,
        /// Head report whose tuned thresholds the one-vs-rest head uses.
        #[arg(long)]
        thresholds: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Best F1 threshold for positive and negative energies, one per line.
    TuneThreshold {
        #[arg(long)]
        pos: PathBuf,
        #[arg(long)]
        neg: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a checkpoint as TSV or an SVG scatter plot.
    Export {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "svg")]
        format: Format,
        /// Hierarchy nodes for level colours and edges.
        #[arg(long, requires = "edges")]
        nodes: Option<PathBuf>,
        #[arg(long, requires = "nodes")]
        edges: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "tree")]
        mode: Mode,
        /// Rescale every vector to `r` times the largest norm.
        #[arg(long, value_name = "R")]
        invert_radial: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Tsv,
    Svg,
}

#[derive(Debug, Subcommand)]
pub enum GenCmd {
    /// Full b-ary tree with one root.
    Toy {
        #[arg(long, default_value_t = 3)]
        levels: usize,
        #[arg(long, default_value_t = 7)]
        branching: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Built-in label tree: cifar10 or fmnist.
    Fixture {
        #[arg(long)]
        name: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Random leveled forest with the given per-level counts.
    Forest {
        #[arg(long, default_value = "6,21,135,561", value_delimiter = ',')]
        counts: Vec<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Gaussian-cluster items for the leaves of a hierarchy.
    Items {
        #[command(flatten)]
        hier: HierArgs,
        #[arg(long, default_value_t = 20)]
        per_leaf: usize,
        #[arg(long, default_value_t = 8)]
        dim: usize,
        #[arg(long, default_value_t = 0.3)]
        noise: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Argument(_) => EXIT_USAGE,
        Error::Training { .. } | Error::Numeric(_) | Error::Domain(_) => EXIT_DIVERGED,
        _ => EXIT_DATA,
    }
}

fn seed_or_env(seed: Option<u64>) -> Result<u64> {
    match seed {
        Some(s) => Ok(s),
        None => RunConfig::default().seed(),
    }
}

fn read_items(path: &Path, h: &Hierarchy) -> Result<ItemSet> {
    conetax::io::read_features(path, h)
}

pub fn command() -> clap::Command {
    let mut cmd = Cli::command().after_help(config::schema_help());
    for sub in ["train-labels", "train-joint", "train-heads", "eval-reconstruction", "eval-classify", "eval-heads"] {
        cmd = cmd.mut_subcommand(sub, |c| c.after_help(config::schema_help()));
    }
    cmd
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot set thread count: {e}")))?;
    }
    let ctx = Ctx { force: cli.force };
    match cli.cmd {
        Cmd::Gen(g) => match g {
            GenCmd::Toy { levels, branching, out } => commands::gen_toy(&ctx, levels, branching, &out),
            GenCmd::Fixture { name, out } => commands::gen_fixture(&ctx, &name, &out),
            GenCmd::Forest { counts, seed, out } => commands::gen_forest(&ctx, &counts, seed_or_env(seed)?, &out),
            GenCmd::Items { hier, per_leaf, dim, noise, seed, out } => {
                commands::gen_item_file(&ctx, &hier.load()?, per_leaf, dim, noise, seed_or_env(seed)?, &out)
            }
        },
        Cmd::Split { hier, val, test, seed, out } => {
            commands::split(&ctx, &hier.load()?, val, test, seed_or_env(seed)?, &out)
        }
        Cmd::TrainLabels { hier, split, init, cfg, out } => {
            commands::train_labels_cmd(&ctx, &hier.load()?, split.as_deref(), &cfg.resolve()?, init.as_deref(), &out)
        }
        Cmd::TrainJoint { hier, features, init, cfg, out } => {
            let h = hier.load()?;
            let items = read_items(&features, &h)?;
            commands::train_joint_cmd(&ctx, &h, &items, &cfg.resolve()?, init.as_deref(), &out)
        }
        Cmd::TrainHeads { hier, features, cfg, out } => {
            let h = hier.load()?;
            let items = read_items(&features, &h)?;
            commands::train_heads_cmd(&ctx, &h, &items, &cfg.resolve()?, &out)
        }
        Cmd::EvalReconstruction { hier, checkpoint, cfg, out } => commands::eval_reconstruction(
            &ctx,
            &hier.load()?,
            &checkpoint,
            &cfg.resolve()?,
            cfg.names_model(),
            out.as_deref(),
        ),
        Cmd::EvalClassify { hier, checkpoint, features, k, split_file, part, cfg, out } => {
            let h = hier.load()?;
            let items = read_items(&features, &h)?;
            let items = commands::select_items(&items, split_file.as_deref(), &part)?;
            commands::eval_classify(&ctx, &h, &checkpoint, &items, &k, &cfg.resolve()?, cfg.names_model(), &out)
        }
        Cmd::EvalHeads { hier, logits, features, thresholds, cfg, out } => {
            let h = hier.load()?;
            let items = features.map(|f| read_items(&f, &h)).transpose()?;
            commands::eval_heads(&ctx, &h, &logits, items.as_ref(), thresholds.as_deref(), &cfg.resolve()?, &out)
        }
        Cmd::TuneThreshold { pos, neg, out } => commands::tune_threshold_cmd(&ctx, &pos, &neg, out.as_deref()),
        Cmd::Export { checkpoint, format, nodes, edges, mode, invert_radial, out } => {
            let h = match (nodes, edges) {
                (Some(nodes), Some(edges)) => Some(HierArgs { nodes, edges, mode }.load()?),
                _ => None,
            };
            commands::export(&ctx, &checkpoint, h.as_ref(), format == Format::Svg, invert_radial, &out)
        }
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return EXIT_USAGE;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
