use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use tcpvit::analysis::{compare_params, emit_flops, emit_params, flops_model, Format};
use tcpvit::checkpoint;
use tcpvit::config::{DatasetKind, RunConfig, DATA_DIR_ENV};
use tcpvit::grad::{evaluate, gradcheck, train, write_metrics, MetricRow};
use tcpvit::selfcheck::{run_selfcheck, Fault};
use tcpvit::{init_params, Variant};

#[derive(Parser)]
#[command(
    name = "tcpvit",
    version,
    about = "Vision transformer over the tensor cosine product"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration (overrides --preset).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Named configuration: cls-paper, seg-paper, synthetic or gradcheck.
    #[arg(long, global = true)]
    preset: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Single-threaded, bit-reproducible execution.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Output file (stdout when absent; checkpoint path for `train`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// table, csv or json.
    #[arg(long, global = true, default_value = "table")]
    format: Format,
    /// synthetic or cifar10.
    #[arg(long, global = true)]
    dataset: Option<DatasetKind>,
    #[arg(long, global = true, env = DATA_DIR_ENV)]
    data_dir: Option<PathBuf>,
    /// Cap on training samples.
    #[arg(long, global = true)]
    limit: Option<usize>,
    /// Cap on test samples.
    #[arg(long, global = true)]
    test_limit: Option<usize>,
    /// tcp or std.
    #[arg(long, global = true)]
    variant: Option<Variant>,
}

#[derive(Subcommand)]
enum Command {
    /// Check algebraic and numerical invariants.
    Selfcheck {
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Compare analytic gradients against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
        /// Number of consecutive seeds starting at --seed.
        #[arg(long, default_value_t = 3)]
        seeds: u64,
    },
    /// Parameter counts of both variants.
    Params,
    /// Encoder FLOPs of both variants.
    Flops {
        /// Sequence length (patches plus class token by default).
        #[arg(long)]
        tokens: Option<usize>,
    },
    /// Train and write per-epoch metrics.
    Train {
        /// Metrics CSV (stdout when absent).
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

impl Command {
    fn default_preset(&self) -> &'static str {
        match self {
            Command::Gradcheck { .. } => "gradcheck",
            Command::Train { .. } | Command::Eval { .. } => "synthetic",
            _ => "cls-paper",
        }
    }
}

fn resolve(common: &Common, command: &Command) -> Result<RunConfig> {
    let mut cfg = match (&common.config, &common.preset) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(name)) => RunConfig::preset(name)?,
        (None, None) => RunConfig::preset(command.default_preset())?,
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if common.deterministic {
        cfg.deterministic = true;
    }
    if let Some(kind) = common.dataset {
        cfg.dataset = kind;
    }
    if let Some(dir) = &common.data_dir {
        cfg.dataset_path = Some(dir.clone());
    }
    if let Some(n) = common.limit {
        cfg.train_limit = Some(n);
    }
    if let Some(n) = common.test_limit {
        cfg.test_limit = Some(n);
    }
    if let Some(v) = common.variant {
        cfg.variant = v;
    }
    if let Command::Train {
        epochs: Some(e), ..
    } = command
    {
        cfg.epochs = *e;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn selfcheck(fault: Option<&str>) -> Result<bool> {
    let fault = match fault {
        None => None,
        Some("dct") => Some(Fault::PerturbDct),
        Some(other) => bail!("unknown fault `{other}`"),
    };
    let results = run_selfcheck(fault);
    for r in &results {
        let tag = if r.passed { "PASS" } else { "FAIL" };
        println!("{tag} {:<22} {}", r.name, r.detail);
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} checks, {failed} failed", results.len());
    Ok(failed == 0)
}

fn run_gradcheck(cfg: &RunConfig, tolerance: f64, seeds: u64) -> Result<bool> {
    let model = cfg.model();
    let mut worst = 0.0f64;
    for seed in cfg.seed..cfg.seed + seeds {
        let report = gradcheck(&model, seed)?;
        println!("seed {seed}: {} scalars checked", report.checked);
        for g in &report.groups {
            println!(
                "  {:<36} {:.3e}  (analytic {:+.6e}, numeric {:+.6e})",
                g.name, g.max_error, g.analytic, g.numeric
            );
        }
        println!("  max relative error {:.3e}", report.max_error);
        worst = worst.max(report.max_error);
    }
    let ok = worst <= tolerance;
    println!(
        "{} max relative error {worst:.3e} (tolerance {tolerance:.0e})",
        if ok { "PASS" } else { "FAIL" }
    );
    Ok(ok)
}

fn run_train(cfg: &RunConfig, metrics: Option<&Path>, ckpt: Option<&Path>) -> Result<()> {
    let (train_set, test_set) = cfg.datasets()?;
    let model = cfg.model();
    let initial = init_params::<f64>(&model, cfg.seed)?;
    eprintln!(
        "training {} on {} samples ({} test) for {} epochs",
        model.variant,
        train_set.len(),
        test_set.len(),
        cfg.epochs
    );
    let mut progress = |row: &MetricRow| {
        eprintln!(
            "epoch {:>3} {:<5} loss {:.4} acc {:.4}",
            row.epoch,
            format!("{:?}", row.split).to_lowercase(),
            row.loss,
            row.accuracy
        );
    };
    let outcome = train(
        &model,
        &cfg.training(),
        &train_set,
        Some(&test_set),
        initial,
        &mut progress,
    )?;
    let mut out = output(metrics)?;
    write_metrics(&outcome.metrics, &mut out)?;
    out.flush()?;
    if let Some(path) = ckpt {
        checkpoint::save(path, &outcome.params)?;
        eprintln!("saved {}", path.display());
    }
    Ok(())
}

fn run_eval(cfg: &RunConfig, ckpt: &Path, out: Option<&Path>) -> Result<()> {
    let model = cfg.model();
    let params =
        checkpoint::load(ckpt, &model).with_context(|| format!("loading {}", ckpt.display()))?;
    let (_, test_set) = cfg.datasets()?;
    let (loss, accuracy) = evaluate(&params, &model, &test_set, cfg.deterministic)?;
    let mut w = output(out)?;
    writeln!(w, "split,loss,accuracy")?;
    writeln!(w, "test,{loss},{accuracy}")?;
    w.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    let cfg = resolve(&cli.common, &cli.command)?;
    let out = cli.common.out.as_deref();
    match &cli.command {
        Command::Selfcheck { inject_fault } => selfcheck(inject_fault.as_deref()),
        Command::Gradcheck { tolerance, seeds } => run_gradcheck(&cfg, *tolerance, *seeds),
        Command::Params => {
            let text = emit_params(&compare_params(&cfg.model())?, cli.common.format)?;
            let mut w = output(out)?;
            w.write_all(text.as_bytes())?;
            w.flush()?;
            Ok(true)
        }
        Command::Flops { tokens } => {
            let model = cfg.model();
            let n = tokens.unwrap_or_else(|| model.tokens());
            let text = emit_flops(&flops_model(&model, n)?, cli.common.format)?;
            let mut w = output(out)?;
            w.write_all(text.as_bytes())?;
            w.flush()?;
            Ok(true)
        }
        Command::Train { metrics, .. } => {
            run_train(&cfg, metrics.as_deref(), out)?;
            Ok(true)
        }
        Command::Eval { checkpoint } => {
            run_eval(&cfg, checkpoint, out)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
