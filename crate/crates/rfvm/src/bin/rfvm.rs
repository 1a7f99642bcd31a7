//! Command-line front end: flag parsing, logging, and exit-code mapping.
//!
//! All real work lives in the library's `commands` module; this file only
//! translates between the shell and those functions. Errors print a single
//! `error[category] message` line on stderr and exit with the category's
//! stable code.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use rfvm::commands::{
    cmd_cv, cmd_predict, cmd_rank, cmd_scaling, cmd_synth, cmd_train,
};
use rfvm::data::LabelColumn;
use rfvm::state::Hyperparams;

#[derive(Parser)]
#[command(
    name = "rfvm",
    version,
    about = "Sparse Bayesian classifier for fat data: joint feature and sample selection"
)]
struct Cli {
    /// Also print per-step progress to stderr.
    #[arg(long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

/// Hyperparameter flags shared by every fitting subcommand. Defaults are
/// the library defaults.
#[derive(Args)]
struct HyperFlags {
    /// Seed for fold assignment and synthetic data; fits are deterministic.
    #[arg(long, default_value_t = Hyperparams::default().seed)]
    seed: u64,
    /// Shape of the gamma prior on dual-weight precisions.
    #[arg(long, default_value_t = Hyperparams::default().alpha0_psi)]
    alpha0_psi: f64,
    /// Rate of the gamma prior on dual-weight precisions.
    #[arg(long, default_value_t = Hyperparams::default().beta0_psi)]
    beta0_psi: f64,
    /// Shape of the gamma prior on relevance precisions.
    #[arg(long, default_value_t = Hyperparams::default().alpha0_delta)]
    alpha0_delta: f64,
    /// Rate of the gamma prior on relevance precisions.
    #[arg(long, default_value_t = Hyperparams::default().beta0_delta)]
    beta0_delta: f64,
    /// Shape of the gamma prior on the noise precision.
    #[arg(long, default_value_t = Hyperparams::default().alpha0_tau)]
    alpha0_tau: f64,
    /// Rate of the gamma prior on the noise precision.
    #[arg(long, default_value_t = Hyperparams::default().beta0_tau)]
    beta0_tau: f64,
    /// Relative threshold below which features are pruned.
    #[arg(long, default_value_t = Hyperparams::default().prune_threshold_v)]
    prune_v: f64,
    /// Relative threshold below which relevance vectors are pruned.
    #[arg(long, default_value_t = Hyperparams::default().prune_threshold_a)]
    prune_a: f64,
    /// Iteration budget.
    #[arg(long, default_value_t = Hyperparams::default().max_iters)]
    max_iters: usize,
    /// Width of the convergence window, in iterations.
    #[arg(long, default_value_t = Hyperparams::default().conv_window)]
    conv_window: usize,
    /// Relative tolerance of the convergence rule.
    #[arg(long, default_value_t = Hyperparams::default().conv_rel_tol)]
    conv_tol: f64,
    /// Iterations to run before pruning starts.
    #[arg(long, default_value_t = Hyperparams::default().prune_warmup_iters)]
    warmup: usize,
}

impl HyperFlags {
    fn to_hyperparams(&self) -> Hyperparams {
        Hyperparams {
            alpha0_psi: self.alpha0_psi,
            beta0_psi: self.beta0_psi,
            alpha0_delta: self.alpha0_delta,
            beta0_delta: self.beta0_delta,
            alpha0_tau: self.alpha0_tau,
            beta0_tau: self.beta0_tau,
            prune_threshold_v: self.prune_v,
            prune_threshold_a: self.prune_a,
            conv_window: self.conv_window,
            conv_rel_tol: self.conv_tol,
            max_iters: self.max_iters,
            prune_warmup_iters: self.warmup,
            seed: self.seed,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model on a labeled CSV and save it as JSON.
    Train {
        /// Training CSV; one row per sample, one column per feature plus a
        /// label column of 0/1 values.
        train_csv: PathBuf,
        /// Label column: a header name, or a zero-based column index.
        #[arg(long, default_value = "label")]
        label_col: String,
        /// Treat the first row as data instead of a header.
        #[arg(long)]
        no_header: bool,
        /// Where to write the model JSON.
        #[arg(long, short)]
        out: PathBuf,
        /// Optional per-iteration trace CSV (iter, elbo, n_feat, n_rv, seconds).
        #[arg(long)]
        trace: Option<PathBuf>,
        #[command(flatten)]
        hp: HyperFlags,
    },
    /// Score a CSV of inputs with a saved model.
    Predict {
        /// Model JSON written by `train`.
        model: PathBuf,
        /// Input CSV of features; pass --label-col to drop a label column.
        input_csv: PathBuf,
        /// Label column to drop before scoring (name or zero-based index).
        #[arg(long)]
        label_col: Option<String>,
        /// Treat the first row as data instead of a header.
        #[arg(long)]
        no_header: bool,
        /// Probability at or above which the hard label is 1.
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Where to write predictions (row_index, proba, label).
        #[arg(long, short)]
        out: PathBuf,
    },
    /// k-fold cross-validation; prints a JSON report to stdout.
    Cv {
        /// Training CSV; one row per sample, one column per feature plus a label column of 0/1 values.
        train_csv: PathBuf,
        /// Label column: a header name, or a zero-based column index.
        #[arg(long, default_value = "label")]
        label_col: String,
        /// Treat the first row as data instead of a header.
        #[arg(long)]
        no_header: bool,
        /// Number of folds; k equal to the sample count is leave-one-out.
        #[arg(long, short, default_value_t = 5)]
        k: usize,
        #[command(flatten)]
        hp: HyperFlags,
    },
    /// Generate a synthetic two-class dataset with known informative columns.
    Synth {
        /// Number of rows.
        #[arg(long)]
        n: usize,
        /// Number of feature columns.
        #[arg(long)]
        d: usize,
        /// Fraction of columns that carry class signal.
        #[arg(long, default_value_t = 0.1)]
        frac: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV; ground-truth indices land in `<out>.informative`.
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Time fits across feature counts and report the log-log slope.
    Scaling {
        /// Number of rows in each synthetic dataset.
        #[arg(long, default_value_t = 300)]
        n: usize,
        /// Strictly ascending feature counts, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "50,150,450,1350,4050,13500")]
        d_list: Vec<usize>,
        /// Fits per feature count, each on fresh data.
        #[arg(long, default_value_t = 10)]
        repeats: usize,
        /// Fraction of informative columns in the synthetic data.
        #[arg(long, default_value_t = 0.1)]
        frac: f64,
        /// Where to write the timing report CSV.
        #[arg(long, short)]
        out: PathBuf,
        #[command(flatten)]
        hp: HyperFlags,
    },
    /// Export the strongest positive and negative feature weights.
    Rank {
        /// Model JSON written by `train`.
        model: PathBuf,
        /// Features per block.
        #[arg(long, default_value_t = 10)]
        top_k: usize,
        /// Rank by the signed location of the underlying normal instead of
        /// the folded mean.
        #[arg(long)]
        underlying: bool,
        /// Where to write the ranking CSV.
        #[arg(long, short)]
        out: PathBuf,
    },
}

/// Prints a report to stdout; a closed pipe (e.g. `rfvm cv ... | head`)
/// ends the process quietly instead of panicking.
fn print_report(body: &str) {
    use std::io::Write as _;
    if writeln!(std::io::stdout(), "{body}").is_err() {
        std::process::exit(0);
    }
}

/// Minimal logger: warnings and errors always, info with --verbose, all on
/// stderr so stdout stays machine-parsable.
struct StderrLogger {
    verbose: bool,
}

impl log::Log for StderrLogger {
    fn enabled(&self, metadata: &log::Metadata<'_>) -> bool {
        metadata.level() <= log::Level::Warn
            || (self.verbose && metadata.level() == log::Level::Info)
    }

    fn log(&self, record: &log::Record<'_>) {
        if self.enabled(record.metadata()) {
            eprintln!("{}: {}", record.level().to_string().to_lowercase(), record.args());
        }
    }

    fn flush(&self) {}
}

fn run(command: Command) -> rfvm::Result<()> {
    match command {
        Command::Train {
            train_csv,
            label_col,
            no_header,
            out,
            trace,
            hp,
        } => {
            let summary = cmd_train(
                &train_csv,
                &LabelColumn::parse(&label_col),
                !no_header,
                &hp.to_hyperparams(),
                &out,
                trace.as_deref(),
            )?;
            print_report(&serde_json::to_string_pretty(&summary).expect("summary is plain data"));
        }
        Command::Predict {
            model,
            input_csv,
            label_col,
            no_header,
            threshold,
            out,
        } => {
            let label = label_col.as_deref().map(LabelColumn::parse);
            cmd_predict(&model, &input_csv, label.as_ref(), !no_header, threshold, &out)?;
        }
        Command::Cv {
            train_csv,
            label_col,
            no_header,
            k,
            hp,
        } => {
            let report = cmd_cv(
                &train_csv,
                &LabelColumn::parse(&label_col),
                !no_header,
                k,
                &hp.to_hyperparams(),
            )?;
            print_report(&serde_json::to_string_pretty(&report).expect("report is plain data"));
        }
        Command::Synth { n, d, frac, seed, out } => {
            cmd_synth(n, d, frac, seed, &out)?;
        }
        Command::Scaling {
            n,
            d_list,
            repeats,
            frac,
            out,
            hp,
        } => {
            cmd_scaling(n, &d_list, repeats, frac, &hp.to_hyperparams(), &out)?;
        }
        Command::Rank {
            model,
            top_k,
            underlying,
            out,
        } => {
            cmd_rank(&model, top_k, underlying, &out)?;
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let logger = Box::leak(Box::new(StderrLogger {
        verbose: cli.verbose,
    }));
    if log::set_logger(logger).is_ok() {
        log::set_max_level(log::LevelFilter::Info);
    }
    if let Err(e) = run(cli.command) {
        eprintln!("error[{}] {}", e.category(), e);
        std::process::exit(e.exit_code());
    }
}
