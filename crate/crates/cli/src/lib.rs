//! `lddmm` command line: dataset generation, single-pair registration, EM
//! training, prediction, evaluation and the baseline comparison.

pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use lddmm_metric::metric_learning::Selection;
use lddmm_metric::Jobs;

pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "lddmm", version, about = "Learn the LDDMM smoothness parameter by kernel discriminant analysis")]
pub struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    /// Errors only.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SelectArg {
    Train,
    Val,
}

impl From<SelectArg> for Selection {
    fn from(s: SelectArg) -> Self {
        match s {
            SelectArg::Train => Selection::Training,
            SelectArg::Val => Selection::Validation,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic rectangles/ellipses dataset.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        n_per_class: Option<usize>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Register I0 onto I1.
    Register {
        i0: PathBuf,
        i1: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        #[arg(long)]
        sigma2: Option<f64>,
        #[arg(long)]
        time_steps: Option<usize>,
        /// Result JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        dump_velocity: Option<PathBuf>,
        /// Report the zero-velocity energy without optimizing.
        #[arg(long)]
        no_opt: bool,
    },
    /// Run EM training on the training split and score the test split.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        em_iters: Option<usize>,
        #[arg(long, value_enum)]
        select: Option<SelectArg>,
        #[arg(long)]
        jobs: Option<usize>,
        /// Continue from the checkpoint in OUT/checkpoints.
        #[arg(long)]
        resume: bool,
        /// Skip test-split scoring.
        #[arg(long)]
        no_test: bool,
    },
    /// Score images with a trained model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        images: Vec<PathBuf>,
        /// Also score every image listed in this labels CSV.
        #[arg(long)]
        list: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// ROC AUC of a scores CSV against a labels CSV.
    Evaluate {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        roc: Option<PathBuf>,
    },
    /// Logistic, MI-selected-α and optimized-α comparison.
    Baseline {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Reuse the optimized model and split of a finished `train` run.
        #[arg(long)]
        train_dir: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
    },
}

fn jobs(n: Option<usize>) -> Jobs {
    n.map(Jobs::new).unwrap_or_default()
}

pub fn execute(command: Command) -> Result<(), CliError> {
    use commands::*;
    match command {
        Command::Generate {
            config,
            seed,
            out,
            n_per_class,
            jobs: j,
        } => cmd_generate(&GenerateArgs {
            config,
            seed,
            out,
            n_per_class,
            jobs: jobs(j),
        }),
        Command::Register {
            i0,
            i1,
            config,
            alpha,
            beta,
            sigma2,
            time_steps,
            out,
            dump_velocity,
            no_opt,
        } => cmd_register(&RegisterArgs {
            i0,
            i1,
            config,
            alpha,
            beta,
            sigma2,
            time_steps,
            out,
            dump_velocity,
            no_opt,
        }),
        Command::Train {
            config,
            seed,
            out,
            em_iters,
            select,
            jobs: j,
            resume,
            no_test,
        } => cmd_train(&TrainArgs {
            config,
            seed,
            out,
            em_iters,
            select: select.map(Into::into),
            jobs: jobs(j),
            resume,
            no_test,
        }),
        Command::Predict {
            model,
            images,
            list,
            out,
            jobs: j,
        } => cmd_predict(&PredictArgs {
            model,
            images,
            list,
            out,
            jobs: jobs(j),
        }),
        Command::Evaluate { scores, labels, out, roc } => cmd_evaluate(&EvaluateArgs { scores, labels, out, roc }),
        Command::Baseline {
            config,
            seed,
            out,
            train_dir,
            jobs: j,
        } => cmd_baseline(&BaselineArgs {
            config,
            seed,
            out,
            train_dir,
            jobs: jobs(j),
        }),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = if cli.quiet {
        log::LevelFilter::Error
    } else {
        match cli.verbose {
            0 => log::LevelFilter::Warn,
            1 => log::LevelFilter::Info,
            _ => log::LevelFilter::Debug,
        }
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
