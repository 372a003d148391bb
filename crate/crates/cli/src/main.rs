use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

/// Mask one category at a time out of a COCO dataset, evaluate detections on
/// every masked copy and report which categories each detector leans on.
#[derive(Debug, Parser)]
#[command(name = "ctxmask", version)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_parser = clap::value_parser!(u32).range(1..))]
    jobs: Option<u32>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse an annotation file (and optionally detections) and list violations.
    Validate {
        #[arg(long)]
        ann: PathBuf,
        /// Detection results to check against the annotations.
        #[arg(long)]
        dets: Option<PathBuf>,
        /// Accept detections on images missing from the annotations.
        #[arg(long)]
        lenient: bool,
    },
    /// Write grey-masked copies of the images, one directory per category.
    Mask {
        #[arg(long)]
        ann: PathBuf,
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Category id, name, or `all`.
        #[arg(long)]
        category: String,
        #[command(flatten)]
        look: Look,
        #[arg(long, value_enum, default_value_t = ImageFormat::Png)]
        format: ImageFormat,
    },
    /// Image-level co-occurrence counts as CSV.
    Cooccur {
        #[arg(long)]
        ann: PathBuf,
        /// Output CSV (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-category AP of a detection file; writes <out>.csv and <out>.json.
    Eval {
        #[arg(long)]
        ann: PathBuf,
        #[arg(long)]
        dets: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        lenient: bool,
    },
    /// Compare masked evaluations with the baseline; writes <out>.json and <out>.csv.
    Analyze {
        #[arg(long)]
        ann: PathBuf,
        /// Evaluation of the unmasked dataset (.json or .csv).
        #[arg(long)]
        baseline: PathBuf,
        /// Directory holding eval_<category_id>.json or .csv files.
        #[arg(long)]
        evals: Option<PathBuf>,
        /// Explicit masked evaluation, overriding discovery.
        #[arg(long = "masked-eval", value_name = "ID=PATH")]
        masked_eval: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        /// Entries kept per target.
        #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u32).range(1..))]
        top_k: u32,
    },
    /// Render an analysis as tables.
    Report {
        #[arg(long)]
        analysis: PathBuf,
        #[arg(long, value_enum, default_value_t = ReportFormat::Md)]
        format: ReportFormat,
        /// Rows of the top-accuracy table.
        #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u32).range(1..))]
        rows: u32,
        /// Rows of the context-dependence table.
        #[arg(long, default_value_t = 15, value_parser = clap::value_parser!(u32).range(1..))]
        context_rows: u32,
        /// Output file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic benchmark with scripted detections for every mask.
    Synth {
        /// Synthetic dataset config (JSON).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        look: Look,
    },
}

#[derive(Debug, Args)]
struct Look {
    /// Fill color as R,G,B.
    #[arg(long, default_value = "128,128,128", value_parser = parse_grey)]
    grey: [u8; 3],
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ImageFormat {
    Png,
    Jpeg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ReportFormat {
    Md,
    Csv,
}

fn parse_grey(s: &str) -> Result<[u8; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [r, g, b] = parts[..] else {
        return Err(format!("expected R,G,B, got `{s}`"));
    };
    let channel = |v: &str| v.parse::<u8>().map_err(|_| format!("`{v}` is not a value in 0..=255"));
    Ok([channel(r)?, channel(g)?, channel(b)?])
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs as usize).build_global() {
            eprintln!("error: cannot start {jobs} worker threads: {e}");
            return ExitCode::from(3);
        }
    }

    let outcome = match cli.command {
        Command::Validate { ann, dets, lenient } => commands::validate(&ann, dets.as_deref(), lenient),
        Command::Mask { ann, images, out, category, look, format } => {
            let format = match format {
                ImageFormat::Png => ctxmask_core::masker::OutputFormat::Png,
                ImageFormat::Jpeg => ctxmask_core::masker::OutputFormat::Jpeg,
            };
            commands::mask(&ann, &images, &out, &category, look.grey, format)
        }
        Command::Cooccur { ann, out } => commands::cooccur(&ann, out.as_deref()),
        Command::Eval { ann, dets, out, lenient } => commands::eval(&ann, &dets, &out, lenient),
        Command::Analyze { ann, baseline, evals, masked_eval, out, top_k } => {
            commands::analyze(&ann, &baseline, evals.as_deref(), &masked_eval, &out, top_k as usize)
        }
        Command::Report { analysis, format, rows, context_rows, out } => {
            let format = match format {
                ReportFormat::Md => ctxmask_core::report::ReportFormat::Markdown,
                ReportFormat::Csv => ctxmask_core::report::ReportFormat::Csv,
            };
            let options = ctxmask_core::report::ReportOptions {
                accuracy_rows: rows as usize,
                context_rows: context_rows as usize,
            };
            commands::report(&analysis, format, &options, out.as_deref())
        }
        Command::Synth { config, out, seed, look } => commands::synth(&config, &out, seed, look.grey),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.exit_code())
        }
    }
}
