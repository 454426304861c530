//! Command-line front end: rank analysis, scaling benchmark, gradient
//! checking, toy training, and model cost inspection.
//!
//! Exit codes: 0 success, 1 runtime/numerical failure, 2 usage error.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use rala_kit::analysis::{
    export_table, fitted_slopes, model_rank_trace, rank_trace_table, scaling_benchmark,
    scaling_table, single_layer_trace, TableFormat,
};
use rala_kit::attention::Variant;
use rala_kit::backbone::{count_costs, ModelConfig, PRESET_NAMES};
use rala_kit::linalg::DEFAULT_REL_EPS;
use rala_kit::trainer::{metrics_csv, save_checkpoint, train_loop, TrainConfig};

#[derive(Parser)]
#[command(
    name = "rala-kit",
    version,
    about = "Rank-augmented linear attention: analysis, benchmarks, training"
)]
struct Cli {
    /// Seed for all randomness (printed with every run).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output file; tables go to standard output when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Table format: csv or json.
    #[arg(long, global = true, default_value = "csv")]
    format: String,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Numerical-rank trace of the attention intermediates.
    Rank(RankArgs),
    /// Wall-time and analytic-FLOPs scaling over token count.
    Bench(BenchArgs),
    /// Finite-difference checks of the autodiff ops.
    Gradcheck(GradcheckArgs),
    /// Train the toy model on the synthetic task.
    Train(TrainArgs),
    /// Parameter and FLOP counts for a model preset.
    Info(InfoArgs),
}

#[derive(Args, Serialize)]
struct RankArgs {
    /// Trace every layer of this preset instead of a single constructed layer.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, default_value = "rala")]
    variant: String,
    /// Token count for the constructed single-layer trace.
    #[arg(long, default_value_t = 196)]
    n: usize,
    /// Head dimension for the constructed single-layer trace.
    #[arg(long, default_value_t = 64)]
    d: usize,
    /// Construct kernelized keys at exactly this rank.
    #[arg(long)]
    key_rank: Option<usize>,
    /// Relative singular-value cutoff for numerical rank.
    #[arg(long, default_value_t = DEFAULT_REL_EPS)]
    rel_eps: f64,
}

#[derive(Args, Serialize)]
struct BenchArgs {
    /// Comma-separated variants to time.
    #[arg(long, default_value = "softmax,rala")]
    variants: String,
    /// Comma-separated token counts, strictly increasing, at least 4.
    #[arg(long, default_value = "196,392,784,1568,3136")]
    n_list: String,
    #[arg(long, default_value_t = 64)]
    d: usize,
    /// Timed repeats per point (median is reported).
    #[arg(long, default_value_t = 5)]
    repeats: usize,
}

#[derive(Args, Serialize)]
struct GradcheckArgs {
    /// "all" or one op name from the registry.
    #[arg(long, default_value = "all")]
    ops: String,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    h: f64,
    /// Maximum acceptable relative error.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
}

#[derive(Args, Serialize)]
struct TrainArgs {
    /// Training config JSON; flags below override the preset defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "toy")]
    preset: String,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    n_samples: Option<usize>,
    /// Stop early once train accuracy reaches this fraction.
    #[arg(long)]
    target_accuracy: Option<f64>,
    /// Write the trained weights here.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct InfoArgs {
    #[arg(long)]
    preset: String,
    /// Count FLOPs at this input resolution (defaults to the preset's).
    #[arg(long)]
    resolution: Option<usize>,
}

enum CliError {
    Usage(String),
    Run(rala_kit::Error),
}

impl From<rala_kit::Error> for CliError {
    fn from(e: rala_kit::Error) -> Self {
        CliError::Run(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn parse_variant(s: &str) -> CliResult<Variant> {
    Variant::from_str(s).map_err(usage)
}

fn parse_format(s: &str) -> CliResult<TableFormat> {
    TableFormat::from_str(s).map_err(usage)
}

fn threads_from_env() -> CliResult<usize> {
    match std::env::var("RALA_KIT_THREADS") {
        Ok(v) => v
            .parse::<usize>()
            .map_err(|_| usage(format!("RALA_KIT_THREADS must be an integer, got '{v}'"))),
        Err(_) => Ok(0),
    }
}

/// Every run logs its resolved configuration for reproducibility.
fn log_resolved(cmd: &str, seed: u64, threads: usize, args: &impl Serialize) {
    let args_json = serde_json::to_string(args).expect("args serialize");
    eprintln!("resolved config: cmd={cmd} seed={seed} threads={threads} args={args_json}");
}

/// Tables go to --out when given, standard output otherwise.
fn emit(out: Option<&Path>, rendered: &str) -> CliResult<()> {
    match out {
        Some(path) => export_table(rendered, path)?,
        None => print!("{rendered}"),
    }
    Ok(())
}

fn run_rank(cli: &Cli, args: &RankArgs) -> CliResult<()> {
    let variant = parse_variant(&args.variant)?;
    let format = parse_format(&cli.format)?;
    let trace = match &args.preset {
        Some(name) => {
            let config = ModelConfig::preset(name)?;
            model_rank_trace(&config, variant, cli.seed, args.rel_eps)?
        }
        None => single_layer_trace(variant, args.n, args.d, args.key_rank, cli.seed, args.rel_eps)?,
    };
    emit(cli.out.as_deref(), &rank_trace_table(&trace, format)?)
}

fn run_bench(cli: &Cli, args: &BenchArgs) -> CliResult<()> {
    let format = parse_format(&cli.format)?;
    let variants: Vec<Variant> = args
        .variants
        .split(',')
        .map(|s| parse_variant(s.trim()))
        .collect::<CliResult<_>>()?;
    let n_list: Vec<usize> = args
        .n_list
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| usage(format!("bad token count '{s}'")))
        })
        .collect::<CliResult<_>>()?;
    if n_list.len() < 4 {
        return Err(usage(format!(
            "need at least 4 token counts for a slope fit, got {}",
            n_list.len()
        )));
    }
    if args.repeats == 1 {
        eprintln!("warning: --repeats 1 skips the median; timings will be noisy");
    }
    let records = scaling_benchmark(&variants, &n_list, args.d, args.repeats, cli.seed)?;
    for (variant, slope) in fitted_slopes(&records)? {
        eprintln!("fitted wall-time slope: variant={variant} slope={slope:.3}");
    }
    emit(cli.out.as_deref(), &scaling_table(&records, format)?)
}

#[derive(Serialize)]
struct GradcheckRow {
    op_name: String,
    max_rel_err: f64,
    h: f64,
}

fn run_gradcheck(cli: &Cli, args: &GradcheckArgs) -> CliResult<()> {
    let format = parse_format(&cli.format)?;
    let reports = if args.ops == "all" {
        rala_kit::gradcheck::run_all(args.trials, args.h, cli.seed)?
    } else {
        vec![rala_kit::gradcheck::run_case(
            &args.ops, args.trials, args.h, cli.seed,
        )?]
    };
    let rows: Vec<GradcheckRow> = reports
        .iter()
        .map(|r| GradcheckRow {
            op_name: r.op_name.clone(),
            max_rel_err: r.max_rel_err,
            h: r.h,
        })
        .collect();
    let rendered = match format {
        TableFormat::Json => serde_json::to_string_pretty(&rows).expect("serializable") + "\n",
        TableFormat::Csv => {
            let mut s = String::from("op_name,max_rel_err,h\n");
            for r in &rows {
                s.push_str(&format!("{},{},{}\n", r.op_name, r.max_rel_err, r.h));
            }
            s
        }
    };
    emit(cli.out.as_deref(), &rendered)?;
    let worst = rows
        .iter()
        .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
        .expect("at least one report");
    if worst.max_rel_err >= args.tol {
        return Err(CliError::Run(rala_kit::Error::numerical(
            "gradcheck",
            format!(
                "{} exceeded tolerance: {} >= {}",
                worst.op_name, worst.max_rel_err, args.tol
            ),
        )));
    }
    Ok(())
}

fn run_train(cli: &Cli, args: &TrainArgs) -> CliResult<()> {
    let mut config: TrainConfig = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Run(rala_kit::Error::Io {
                    path: path.display().to_string(),
                    source: e,
                })
            })?;
            serde_json::from_str(&text)
                .map_err(|e| usage(format!("bad train config {}: {e}", path.display())))?
        }
        None => TrainConfig {
            preset: args.preset.clone(),
            ..TrainConfig::default()
        },
    };
    config.seed = cli.seed;
    if let Some(e) = args.epochs {
        config.epochs = e;
    }
    if let Some(n) = args.n_samples {
        config.n_samples = n;
    }
    if let Some(t) = args.target_accuracy {
        config.target_accuracy = Some(t);
    }
    eprintln!(
        "train config: {}",
        serde_json::to_string(&config).expect("config serializes")
    );
    let outcome = train_loop(&config)?;
    if let Some(path) = &args.checkpoint {
        save_checkpoint(path, &outcome.model_config, &outcome.weights, &outcome.metrics)?;
        eprintln!("checkpoint written to {}", path.display());
    }
    let rendered = match parse_format(&cli.format)? {
        TableFormat::Csv => metrics_csv(&outcome.metrics),
        TableFormat::Json => {
            serde_json::to_string_pretty(&outcome.metrics).expect("serializable") + "\n"
        }
    };
    emit(cli.out.as_deref(), &rendered)
}

fn run_info(cli: &Cli, args: &InfoArgs) -> CliResult<()> {
    let config = ModelConfig::preset(&args.preset).map_err(|e| match e {
        rala_kit::Error::InvalidArg { .. } => usage(format!(
            "unknown preset '{}'; known presets: {}",
            args.preset,
            PRESET_NAMES.join(", ")
        )),
        other => CliError::Run(other),
    })?;
    let resolution = args.resolution.unwrap_or(config.input_resolution);
    let report = count_costs(&config, resolution)?;
    eprintln!(
        "model config: {}",
        serde_json::to_string(&config).expect("config serializes")
    );
    let rendered = match parse_format(&cli.format)? {
        TableFormat::Json => {
            #[derive(Serialize)]
            struct Info<'a> {
                preset: &'a str,
                config: &'a ModelConfig,
                cost: &'a rala_kit::backbone::CostReport,
            }
            serde_json::to_string_pretty(&Info {
                preset: &args.preset,
                config: &config,
                cost: &report,
            })
            .expect("serializable")
                + "\n"
        }
        TableFormat::Csv => {
            let mut s = String::from("field,value\n");
            s.push_str(&format!("preset,{}\n", args.preset));
            s.push_str(&format!("resolution,{}\n", report.resolution));
            s.push_str(&format!("parameter_count,{}\n", report.parameter_count));
            s.push_str(&format!("macs,{}\n", report.macs));
            s.push_str(&format!("flops,{}\n", report.flops));
            for seg in &report.breakdown {
                s.push_str(&format!("macs.{},{}\n", seg.name, seg.macs));
            }
            s
        }
    };
    emit(cli.out.as_deref(), &rendered)
}

fn dispatch(cli: &Cli, threads: usize) -> CliResult<()> {
    match &cli.cmd {
        Cmd::Rank(args) => {
            log_resolved("rank", cli.seed, threads, args);
            run_rank(cli, args)
        }
        Cmd::Bench(args) => {
            log_resolved("bench", cli.seed, threads, args);
            run_bench(cli, args)
        }
        Cmd::Gradcheck(args) => {
            log_resolved("gradcheck", cli.seed, threads, args);
            run_gradcheck(cli, args)
        }
        Cmd::Train(args) => {
            log_resolved("train", cli.seed, threads, args);
            run_train(cli, args)
        }
        Cmd::Info(args) => {
            log_resolved("info", cli.seed, threads, args);
            run_info(cli, args)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    let threads = match threads_from_env() {
        Ok(t) => t,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            std::process::exit(2);
        }
        Err(CliError::Run(_)) => unreachable!("env parsing only yields usage errors"),
    };
    match dispatch(&cli, threads) {
        Ok(()) => {}
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            std::process::exit(2);
        }
        Err(CliError::Run(e)) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}
