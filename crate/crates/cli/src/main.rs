use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use gplvm_density::harness::grid::LARGE_ENTRIES;
use gplvm_density::harness::selftest::run_selftest;
use gplvm_density::harness::{
    evaluate_model, fit_method, load_dataset, make_splits, preprocess, run_grid, write_outcome, Family, GridSpec,
    Method, PreprocMode, SavedModel,
};

#[derive(Parser)]
#[command(name = "gplvm-bench", version, about = "Fit, score and benchmark GPLVM density estimators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one model on one dataset
    Fit(FitArgs),
    /// Score a saved model on a dataset
    Eval(EvalArgs),
    /// Run an experiment grid over methods, preprocessing and splits
    Bench(BenchArgs),
    /// Run the built-in oracle checks
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct FitArgs {
    /// svmlight file or a synth:curve|gaussian|pairs[:N[:seed]] specifier
    #[arg(long)]
    dataset: String,
    /// lz, loo-det, loo-rd, lpo-det, lpo-rd, gm, kde or mp
    #[arg(long)]
    method: String,
    /// Latent dimension (GPLVM) or local rank (mp)
    #[arg(long, default_value_t = 1)]
    d: usize,
    /// Left-out components for LPO
    #[arg(long = "P", default_value_t = 5)]
    p: usize,
    /// Cluster count for gm
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// Neighbour count for mp
    #[arg(long, default_value_t = 5)]
    r: usize,
    #[arg(long, default_value = "s")]
    preproc: String,
    /// Hold out all but this many points for testing; all points train when absent
    #[arg(long = "n-tr")]
    n_tr: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 600)]
    steps: usize,
    /// Where to write the fitted model
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    allow_large: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dataset: String,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    dataset: String,
    /// Comma-separated method families
    #[arg(long, default_value = "lz,lpo-det,lpo-rd,gm,kde,mp")]
    method: String,
    #[arg(long, default_value = "1,2,3")]
    d: String,
    #[arg(long = "P", default_value = "1,2,5,10,15")]
    p: String,
    #[arg(long, default_value = "r,s,w")]
    preproc: String,
    #[arg(long = "n-tr", default_value = "50")]
    n_tr: String,
    #[arg(long, default_value_t = 10)]
    splits: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 600)]
    steps: usize,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Output directory for run records and the summary
    #[arg(long, default_value = "bench-out")]
    out: PathBuf,
    #[arg(long)]
    allow_large: bool,
}

fn list<T>(s: &str, parse: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    s.split(',').map(str::trim).filter(|t| !t.is_empty()).map(parse).collect()
}

fn method_from(args: &FitArgs) -> Result<Method> {
    Ok(match Family::parse(&args.method)? {
        Family::Lz => Method::Lz { d: args.d },
        Family::LooDet => Method::Loo { d: args.d, stochastic: false },
        Family::LooRd => Method::Loo { d: args.d, stochastic: true },
        Family::LpoDet => Method::Lpo { d: args.d, leave_out: args.p, stochastic: false },
        Family::LpoRd => Method::Lpo { d: args.d, leave_out: args.p, stochastic: true },
        Family::Gm => Method::Gm { k: args.k },
        Family::Kde => Method::Kde,
        Family::Mp => Method::Mp { d: args.d, r: args.r },
    })
}

fn fit(args: FitArgs) -> Result<()> {
    let data = load_dataset(&args.dataset)?;
    if data.dim() * data.len() > LARGE_ENTRIES && !args.allow_large {
        bail!("dataset has {} entries; pass --allow-large to fit it", data.dim() * data.len());
    }
    let method = method_from(&args)?;
    let mode: PreprocMode = args.preproc.parse()?;
    let (train_idx, test_idx) = match args.n_tr {
        Some(n_tr) => {
            let s = make_splits(data.len(), n_tr, 1, args.seed)?.remove(0);
            (s.train, s.test)
        }
        None => ((0..data.len()).collect(), Vec::new()),
    };
    let (pre, train_y) = preprocess(&data.select(&train_idx), mode)?;
    let model = fit_method(&method, &train_y, args.steps, args.seed)?;
    let train_ld = evaluate_model(&model, &train_y)?;
    println!("dataset {} (D={}, N={}), method {method}, preprocessing {mode}", data.name, data.dim(), data.len());
    println!("train mean log density {train_ld:.6} (raw space {:.6})", train_ld + pre.log_abs_det);
    if !test_idx.is_empty() {
        let test_y = pre.apply(&data.select(&test_idx))?;
        let ld = evaluate_model(&model, &test_y)?;
        println!(
            "test mean log density {ld:.6} (raw space {:.6}) over {} points",
            ld + pre.log_abs_det,
            test_idx.len()
        );
    }
    if let Some(out) = args.out {
        SavedModel::new(method, pre, &model)
            .save(&out)
            .with_context(|| format!("writing {}", out.display()))?;
        println!("model written to {}", out.display());
    }
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let saved = SavedModel::load(&args.model).with_context(|| format!("reading {}", args.model.display()))?;
    let model = saved.to_fitted()?;
    let data = load_dataset(&args.dataset)?;
    let y = saved.preprocessing.apply(&data.features)?;
    let ld = evaluate_model(&model, &y)?;
    println!(
        "{}: mean log density {ld:.6} (raw space {:.6}) over {} points",
        saved.method,
        ld + saved.preprocessing.log_abs_det,
        data.len()
    );
    Ok(())
}

fn bench(args: BenchArgs) -> Result<()> {
    let data = load_dataset(&args.dataset)?;
    let number = |t: &str| t.parse::<usize>().with_context(|| format!("'{t}' is not a count"));
    let spec = GridSpec {
        families: list(&args.method, |t| Ok(Family::parse(t)?))?,
        latent_dims: list(&args.d, number)?,
        leave_outs: list(&args.p, number)?,
        preprocs: list(&args.preproc, |t| Ok(t.parse::<PreprocMode>()?))?,
        n_tr: list(&args.n_tr, number)?,
        n_splits: args.splits,
        seed: args.seed,
        steps: args.steps,
        workers: args.workers,
        allow_large: args.allow_large,
    };
    let outcome = run_grid(&data, &spec)?;
    write_outcome(&outcome, &args.out)?;
    let failures: usize = outcome.results.iter().map(|r| r.failures).sum();
    println!(
        "{} cells, {} runs, {failures} failed; results in {}",
        outcome.results.len(),
        outcome.runs.len(),
        args.out.display()
    );
    for b in &outcome.best {
        println!(
            "best {:<8} n_tr={:<5} {:>10.3}  {}({})",
            b.family.tag(),
            b.n_tr,
            b.mean_raw_space,
            b.method,
            b.preproc
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(a) => fit(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench(a),
        Command::Selftest { seed } => {
            let checks = run_selftest(seed);
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if checks.iter().all(|c| c.passed) {
                Ok(())
            } else {
                Err(anyhow::anyhow!("some checks failed"))
            }
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
