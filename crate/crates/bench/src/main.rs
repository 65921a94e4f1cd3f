use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dnnp::{ElemType, Engine};
use dnnp_bench::{batch_sweep, load_suite, run_suite, verify_failures, write_csv, write_json, BenchError, RunOptions};
use serde::Serialize;

/// Convolution benchmark and verification harness.
#[derive(Parser)]
#[command(name = "bench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Time every suite layer on each engine.
    Run(RunArgs),
    /// Time one layer across batch sizes.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Dtype {
    F32,
    F64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct Common {
    /// Layer suite file; a missing `table2.suite` uses the bundled copy.
    #[arg(long, default_value = "table2.suite")]
    suite: PathBuf,
    #[arg(long, value_enum, default_value_t = Dtype::F32)]
    dtype: Dtype,
    /// Timed runs per measurement; the median is reported.
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    /// Untimed runs before timing.
    #[arg(long, default_value_t = 1)]
    warmup: usize,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value_t = 0x5eed)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Output file; defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_delimiter = ',', default_values = ["direct", "explicit", "implicit"])]
    engines: Vec<Engine>,
    /// Override every layer's batch size.
    #[arg(long)]
    batch: Option<usize>,
    /// Compare each engine against the direct engine.
    #[arg(long)]
    verify: bool,
    /// Peak rate in GFLOP/s for the utilization column.
    #[arg(long)]
    peak: Option<f64>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    layer: String,
    #[arg(long, value_delimiter = ',', default_values = ["16", "32", "64", "128"])]
    batches: Vec<usize>,
    #[arg(long, default_value = "implicit")]
    engine: Engine,
}

impl Common {
    fn options(&self) -> RunOptions {
        RunOptions {
            elem_type: match self.dtype {
                Dtype::F32 => ElemType::F32,
                Dtype::F64 => ElemType::F64,
            },
            repeats: self.repeats,
            warmup: self.warmup,
            threads: self.threads,
            seed: self.seed,
            ..RunOptions::default()
        }
    }

    fn emit<R: Serialize>(&self, rows: &[R]) -> Result<(), BenchError> {
        let sink: Box<dyn Write> = match &self.out {
            Some(path) => Box::new(File::create(path).map_err(|source| io_error(path, source))?),
            None => Box::new(io::stdout().lock()),
        };
        match self.format {
            Format::Csv => write_csv(rows, sink),
            Format::Json => write_json(rows, sink),
        }
    }
}

fn io_error(path: &Path, source: io::Error) -> BenchError {
    BenchError::Io { path: path.display().to_string(), source }
}

fn run(args: RunArgs) -> Result<(), BenchError> {
    let layers = load_suite(&args.common.suite)?;
    let opts = RunOptions {
        engines: args.engines,
        batch: args.batch,
        verify: args.verify,
        peak_gflops: args.peak,
        ..args.common.options()
    };
    if opts.repeats == 0 || opts.batch == Some(0) || opts.peak_gflops.is_some_and(|p| p.is_nan() || p <= 0.0) {
        return Err(BenchError::Usage("--repeats, --batch and --peak must be positive".into()));
    }
    let rows = run_suite(&layers, &opts)?;
    args.common.emit(&rows)?;
    let failures = verify_failures(&rows, opts.tolerance());
    if failures.is_empty() {
        Ok(())
    } else {
        for row in &failures {
            eprintln!("verification failed: {} on {}: max_abs_err {:?}", row.layer, row.engine, row.max_abs_err);
        }
        Err(BenchError::VerifyFailed { failures: failures.len(), tolerance: opts.tolerance() })
    }
}

fn sweep(args: SweepArgs) -> Result<(), BenchError> {
    let layers = load_suite(&args.common.suite)?;
    let layer = layers
        .iter()
        .find(|l| l.name == args.layer)
        .ok_or_else(|| BenchError::Usage(format!("no layer named `{}` in the suite", args.layer)))?;
    let opts = args.common.options();
    if opts.repeats == 0 || args.batches.is_empty() || args.batches.contains(&0) {
        return Err(BenchError::Usage("--repeats and every batch size must be positive".into()));
    }
    let rows = batch_sweep(layer, &args.batches, args.engine, &opts)?;
    args.common.emit(&rows)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Sweep(args) => sweep(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if matches!(e, BenchError::VerifyFailed { .. }) { 2 } else { 1 })
        }
    }
}
