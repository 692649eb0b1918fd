use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};
use serde_json::json;

use resa::assignment::{sinkhorn_self_assignment, SinkhornConfig};
use resa::config::{parse_overrides, RunConfig};
use resa::datagen::{load_labels, load_matrix, save_matrix, MatrixFormat};
use resa::gradcheck::{run_gradcheck, GradcheckOptions};
use resa::metrics::{evaluate_features, EvalOptions, MetricsRecord};
use resa::numerics::{Matrix, Rng};
use resa::objectives::{LossConfig, LossVariant};
use resa::trainer::{resume, Trainer};
use resa::{Error, Result};

#[derive(Parser)]
#[command(name = "resa", version, about = "Self-assignment representation learning lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network and write the run log and a checkpoint
    Train(TrainArgs),
    /// Clustering and classification metrics of a labelled feature matrix, as JSON
    Metrics(MetricsArgs),
    /// Self-assignment of a square similarity matrix
    Sinkhorn(SinkhornArgs),
    /// Compare analytic gradients with reference values
    Gradcheck(GradcheckArgs),
    /// Train ReSA, InfoNCE and SwAV on the same data and tabulate the final metrics
    Compare(CompareArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON config; nested objects or dotted keys, merged over the defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run seed (same as --seed in the overrides)
    #[arg(long)]
    seed: Option<u64>,
    /// Feature matrix to train on (.csv or RSAM binary) instead of generated data
    #[arg(long, requires = "labels")]
    data: Option<PathBuf>,
    /// Labels for --data, one integer per line (diagnostics only)
    #[arg(long, requires = "data")]
    labels: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Config overrides as `--dotted.key value`, e.g. `--loss.variant InfoNCE`
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OVERRIDES")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct TrainArgs {
    /// Continue from a checkpoint directory; the config must match the checkpoint's
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Stop (and checkpoint) after this many epochs
    #[arg(long)]
    stop_after: Option<usize>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct MetricsArgs {
    /// Feature matrix (.csv or RSAM binary)
    features: PathBuf,
    /// Labels, one integer per line
    labels: PathBuf,
    /// Seed for k-means and the probe
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also fit a linear probe
    #[arg(long)]
    linear_probe: bool,
}

#[derive(Args)]
struct SinkhornArgs {
    /// Square similarity matrix (.csv or RSAM binary)
    matrix: PathBuf,
    #[arg(long, default_value_t = SinkhornConfig::default().epsilon)]
    epsilon: f64,
    #[arg(long, default_value_t = SinkhornConfig::default().iterations)]
    iterations: usize,
    /// Where to write the assignment matrix; format follows the extension
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Negate every analytic gradient; the check must then fail
    #[arg(long)]
    inject_sign_flip: bool,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    run: RunArgs,
}

/// Moves the subcommand's own flags ahead of the first override so they may appear anywhere.
fn hoist_named_flags(args: Vec<String>) -> Vec<String> {
    let Some(sub) = args.get(1).and_then(|name| Cli::command().find_subcommand(name).cloned()) else {
        return args;
    };
    let named: Vec<(String, bool)> = sub
        .get_arguments()
        .filter_map(|a| a.get_long().map(|l| (format!("--{l}"), a.get_action().takes_values())))
        .collect();
    let (mut front, mut rest) = (args[..2].to_vec(), Vec::new());
    let mut it = args.into_iter().skip(2);
    while let Some(tok) = it.next() {
        let name = tok.split('=').next().unwrap_or_default();
        match named.iter().find(|(n, _)| n == name) {
            Some((_, takes_value)) => {
                let inline = tok.contains('=');
                front.push(tok);
                if *takes_value && !inline {
                    front.extend(it.next());
                }
            }
            None => rest.push(tok),
        }
    }
    front.extend(rest);
    front
}

fn main() -> ExitCode {
    let cli = Cli::parse_from(hoist_named_flags(std::env::args().collect()));
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Metrics(args) => cmd_metrics(args),
        Command::Sinkhorn(args) => cmd_sinkhorn(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Compare(args) => cmd_compare(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("ERROR:{}:{}", e.kind(), e);
            match e {
                Error::NonFiniteLoss { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn threads() -> usize {
    std::env::var("RESA_THREADS").ok().and_then(|v| v.parse().ok()).filter(|&t| t >= 1).unwrap_or(1)
}

fn load_run_config(args: &RunArgs) -> Result<RunConfig> {
    let mut overrides = parse_overrides(&args.overrides)?;
    if let Some(seed) = args.seed {
        overrides.insert(0, ("seed".into(), json!(seed)));
    }
    let cfg = RunConfig::load(args.config.as_deref(), &overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

fn load_data(args: &RunArgs, cfg: &RunConfig) -> Result<(Matrix, Vec<usize>)> {
    match (&args.data, &args.labels) {
        (Some(x), Some(y)) => {
            let x = load_matrix(x, MatrixFormat::from_path(x))?;
            let y = load_labels(y)?;
            if x.rows() != y.len() {
                return Err(Error::LengthMismatch(x.rows(), y.len()));
            }
            Ok((x, y))
        }
        _ => {
            let d = cfg.generate_data()?;
            Ok((d.x, d.labels))
        }
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<ExitCode> {
    let cfg = load_run_config(&args.run)?;
    let (x, y) = load_data(&args.run, &cfg)?;
    let out = &args.run.out;
    std::fs::create_dir_all(out)?;
    write_json(&out.join("config.json"), &cfg.to_value())?;

    let mut trainer = match &args.resume {
        Some(dir) => {
            let ckpt = resume(dir)?;
            ckpt.ensure_matches(&cfg.train)?;
            Trainer::from_checkpoint(ckpt, &x, &y)?
        }
        None => Trainer::new(cfg.train.clone(), &x, &y)?,
    }
    .with_threads(threads());
    let target = args.stop_after.unwrap_or(cfg.train.epochs);
    trainer.run_until(target)?;
    trainer.checkpoint(&out.join("checkpoint"))?;
    let (_, log) = trainer.into_parts();
    log.write(out)?;
    if let Some(last) = log.last() {
        println!("{}", MetricsRecord::CSV_HEADER);
        println!("{}", last.csv_row());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_metrics(args: MetricsArgs) -> Result<ExitCode> {
    let x = load_matrix(&args.features, MatrixFormat::from_path(&args.features))?;
    let y = load_labels(&args.labels)?;
    let opts = EvalOptions { linear_probe: args.linear_probe, threads: threads(), ..EvalOptions::default() };
    let record = evaluate_features(&x, &y, &opts, &mut Rng::new(args.seed))?;
    println!("{}", serde_json::to_string_pretty(&record)?);
    Ok(ExitCode::SUCCESS)
}

fn cmd_sinkhorn(args: SinkhornArgs) -> Result<ExitCode> {
    let s = load_matrix(&args.matrix, MatrixFormat::from_path(&args.matrix))?;
    let cfg = SinkhornConfig { epsilon: args.epsilon, iterations: args.iterations };
    let a = sinkhorn_self_assignment(&s, &cfg)?;
    save_matrix(&a.values, &args.out, MatrixFormat::from_path(&args.out))?;
    let report = json!({
        "size": a.size(),
        "epsilon": cfg.epsilon,
        "iterations": cfg.iterations,
        "row_marginal_error": a.row_marginal_error,
        "col_marginal_error": a.col_marginal_error,
        "diag_mass": a.diag_mass(),
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<ExitCode> {
    let reports = run_gradcheck(&GradcheckOptions { seed: args.seed, inject_sign_flip: args.inject_sign_flip })?;
    let mut ok = true;
    for r in &reports {
        ok &= r.passed();
        println!(
            "{:<20} worst={:.3e} tol={:.0e} instances={} skipped={} {}",
            r.name,
            r.worst_error,
            r.tolerance,
            r.instances,
            r.skipped,
            if r.passed() { "PASS" } else { "FAIL" }
        );
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_compare(args: CompareArgs) -> Result<ExitCode> {
    let cfg = load_run_config(&args.run)?;
    let (x, y) = load_data(&args.run, &cfg)?;
    let out = &args.run.out;
    std::fs::create_dir_all(out)?;
    write_json(&out.join("config.json"), &cfg.to_value())?;
    let mut table = format!("method,{}\n", MetricsRecord::CSV_HEADER);
    for variant in [LossVariant::ReSA, LossVariant::InfoNCE, LossVariant::SwAV] {
        let mut train_cfg = cfg.train.clone();
        // the configured temperature belongs to the configured variant; the others use their defaults
        if train_cfg.loss.variant != variant {
            train_cfg.loss = LossConfig::for_variant(variant);
        }
        let (_, log) = Trainer::new(train_cfg, &x, &y)?.with_threads(threads()).run()?;
        log.write(&out.join(variant.to_string()))?;
        if let Some(last) = log.last() {
            table.push_str(&format!("{variant},{}\n", last.csv_row()));
        }
    }
    std::fs::write(out.join("compare.csv"), &table)?;
    print!("{table}");
    Ok(ExitCode::SUCCESS)
}
