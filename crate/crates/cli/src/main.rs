//! `svpinn` command-line driver.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use svpinn::basis::GridSpec;
use svpinn::problems::ProblemSpec;
use svpinn::sampler::sample_wm_batch;
use svpinn::train::{train, LossKind, OptimizerConfig, TrainConfig};
use svpinn::verify::{
    aggregate_runs, comparison_table, render_markdown, run_named, study_comparison, RunRecord, StudyOptions,
    StudyReport, STUDIES,
};
use svpinn::Error;

#[derive(Parser, Debug)]
#[command(
    name = "svpinn",
    version,
    about = "Stochastically weak PINN training and verification studies"
)]
struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw Whittle-Matern test functions on a grid and save them as a binary batch.
    Sample {
        /// Spatial dimension (1, 2 or 3).
        #[arg(long)]
        d: usize,
        /// Interior nodes per axis.
        #[arg(long)]
        n: usize,
        /// Field scale.
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
        /// Number of test functions.
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one (experiment, method, optimizer) cell and write metrics.csv,
    /// checkpoint.bin, summary.json and config.toml.
    Train {
        /// Experiment spec, e.g. "exp1 a=1" or "exp5 k=1 n=48".
        #[arg(long)]
        experiment: String,
        /// Loss: svpinn or pinn [default: svpinn, or the config file's].
        #[arg(long)]
        method: Option<String>,
        /// Optimiser: gd (Adam) or lbfgs [default: lbfgs, or the config file's].
        #[arg(long)]
        optimizer: Option<String>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Stop once the L2 relative error falls below this value.
        #[arg(long)]
        target_l2: Option<f64>,
        /// TOML training configuration; flags override its values.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run a verification study; exits nonzero if any assertion fails.
    Verify {
        /// equivalence, trapezoid, eigen, consistency, regularity, comparison or all.
        study: String,
        /// Halve repetitions; slope assertions become informational.
        #[arg(long)]
        quick: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Experiment for the comparison study.
        #[arg(long)]
        experiment: Option<String>,
        /// Step budget per comparison run.
        #[arg(long, default_value_t = 200)]
        steps: usize,
        /// Comparison seeds, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Aggregate run directories into a comparison table (mean ± std).
    Report {
        /// Run directories, or parents whose subdirectories are runs.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Steps at which to tabulate the error [default: a fifth of and the full budget].
        #[arg(long, value_delimiter = ',')]
        checkpoints: Vec<usize>,
        /// Where to write comparison.csv and comparison.md (printed to stdout otherwise).
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

enum Failure {
    Usage(String),
    Run(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter(_)
            | Error::Unknown { .. }
            | Error::Dimension(_)
            | Error::InvalidIndex(_)
            | Error::IndexDimension { .. }
            | Error::Toml(_) => Failure::Usage(e.to_string()),
            other => Failure::Run(other.to_string()),
        }
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Sample {
            d,
            n,
            tau,
            count,
            seed,
            out,
        } => cmd_sample(d, n, tau, count, seed, &out),
        Command::Train {
            experiment,
            method,
            optimizer,
            steps,
            seed,
            target_l2,
            config,
            out_dir,
        } => cmd_train(TrainArgs {
            experiment,
            method,
            optimizer,
            steps,
            seed,
            target_l2,
            config,
            out_dir,
        }),
        Command::Verify {
            study,
            quick,
            seed,
            experiment,
            steps,
            seeds,
            out_dir,
        } => cmd_verify(
            &study,
            StudyOptions { quick, seed },
            experiment.as_deref(),
            steps,
            &seeds,
            &out_dir,
        ),
        Command::Report {
            runs,
            checkpoints,
            out_dir,
        } => cmd_report(&runs, &checkpoints, out_dir.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn cmd_sample(d: usize, n: usize, tau: f64, count: usize, seed: u64, out: &Path) -> CmdResult {
    let grid = GridSpec::new(d, n)?;
    if count == 0 {
        return Err(Failure::Usage("--count must be positive".into()));
    }
    let batch = sample_wm_batch(&grid, tau, count, seed)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(Error::from)?;
    }
    batch.save(out)?;
    println!("wrote {count} test functions on {}^{d} nodes to {}", n, out.display());
    Ok(())
}

struct TrainArgs {
    experiment: String,
    method: Option<String>,
    optimizer: Option<String>,
    steps: Option<usize>,
    seed: Option<u64>,
    target_l2: Option<f64>,
    config: Option<PathBuf>,
    out_dir: PathBuf,
}

/// Defaults, then the config file, then flags.
fn resolve_config(problem: &ProblemSpec, args: &TrainArgs) -> std::result::Result<TrainConfig, Failure> {
    let method = args.method.as_deref().map(LossKind::parse).transpose()?;
    let optimizer = args.optimizer.as_deref().map(OptimizerConfig::parse).transpose()?;
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
            TrainConfig::from_toml(&text)?
        }
        None => TrainConfig::default_for(
            problem,
            method.unwrap_or(LossKind::Svpinn),
            optimizer.unwrap_or(OptimizerConfig::parse("lbfgs")?),
        ),
    };
    if let Some(m) = method {
        cfg.method = m;
    }
    if let Some(o) = optimizer {
        // Keep the file's optimiser settings when only the kind is restated.
        if o.name() != cfg.optimizer.name() {
            cfg.optimizer = o;
        }
    }
    if let Some(s) = args.steps {
        cfg.steps = s;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if args.target_l2.is_some() {
        cfg.target_l2 = args.target_l2;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(args: TrainArgs) -> CmdResult {
    let problem = ProblemSpec::parse(&args.experiment)?;
    let cfg = resolve_config(&problem, &args)?;
    let out = train(&problem, &cfg)?;
    out.write_artifacts(&args.out_dir, &cfg)?;
    let s = &out.summary;
    println!(
        "{} {} {}: {} after {} steps, loss {:.3e}, L2 RE {}, {:.1}s -> {}",
        s.experiment,
        s.method,
        s.optimizer,
        s.status,
        s.steps_run,
        s.final_loss.unwrap_or(f64::NAN),
        s.final_l2.map(|v| format!("{v:.3e}")).unwrap_or_else(|| "-".into()),
        s.wall_s,
        args.out_dir.display()
    );
    if s.succeeded() {
        Ok(())
    } else {
        Err(Failure::Run(
            s.error.clone().unwrap_or_else(|| "training aborted".into()),
        ))
    }
}

fn print_report(r: &StudyReport) {
    println!("{}: {}", r.study, if r.passed { "PASS" } else { "FAIL" });
    for c in &r.checks {
        let bounds = match (c.lower, c.upper) {
            (Some(l), Some(u)) => format!("in [{l}, {u}]"),
            (Some(l), None) => format!(">= {l}"),
            (None, Some(u)) => format!("<= {u}"),
            (None, None) => String::new(),
        };
        let state = match (c.passed, c.enforced) {
            (true, _) => "ok",
            (false, true) => "FAILED",
            (false, false) => "off (informational)",
        };
        println!("  {:<40} {:>14.6e} {bounds:<24} {state}", c.name, c.value);
    }
}

fn cmd_verify(
    study: &str,
    opts: StudyOptions,
    experiment: Option<&str>,
    steps: usize,
    seeds: &[u64],
    out_dir: &Path,
) -> CmdResult {
    let reports = match study {
        "comparison" => {
            let exp = experiment.ok_or_else(|| Failure::Usage("comparison needs --experiment".into()))?;
            let problem = ProblemSpec::parse(exp)?;
            let seeds = if opts.quick {
                &seeds[..seeds.len().div_ceil(2)]
            } else {
                seeds
            };
            let (report, runs) = study_comparison(&problem, steps, seeds, |_| {})?;
            for run in &runs {
                let s = &run.summary;
                let dir = out_dir
                    .join("runs")
                    .join(format!("{}_{}_seed{}", s.method, s.optimizer, s.seed));
                std::fs::create_dir_all(&dir).map_err(Error::from)?;
                s.save(&dir.join("summary.json"))?;
                run.metrics.save(&dir.join("metrics.csv"))?;
            }
            let checkpoints = [(steps / 5).max(1), steps];
            let rows = aggregate_runs(&runs, &checkpoints);
            std::fs::create_dir_all(out_dir).map_err(Error::from)?;
            std::fs::write(out_dir.join("comparison.md"), render_markdown(&rows, &checkpoints)).map_err(Error::from)?;
            print!("{}", render_markdown(&rows, &checkpoints));
            vec![report]
        }
        "all" => {
            let mut all = Vec::new();
            for name in STUDIES {
                all.extend(run_named(name, opts)?);
            }
            all
        }
        name => run_named(name, opts)?,
    };
    let mut failed = Vec::new();
    for r in &reports {
        r.write(out_dir)?;
        print_report(r);
        if !r.passed {
            failed.push(r.study.clone());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Run(format!("assertions failed in {}", failed.join(", "))))
    }
}

fn collect_runs(paths: &[PathBuf]) -> std::result::Result<Vec<RunRecord>, Failure> {
    let mut runs = Vec::new();
    for p in paths {
        if p.join("summary.json").is_file() {
            runs.push(RunRecord::load(p)?);
            continue;
        }
        let mut subdirs: Vec<PathBuf> = std::fs::read_dir(p)
            .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", p.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|d| d.join("summary.json").is_file())
            .collect();
        if subdirs.is_empty() {
            return Err(Failure::Usage(format!("{} holds no run directories", p.display())));
        }
        subdirs.sort();
        for d in subdirs {
            runs.push(RunRecord::load(&d)?);
        }
    }
    Ok(runs)
}

fn cmd_report(paths: &[PathBuf], checkpoints: &[usize], out_dir: Option<&Path>) -> CmdResult {
    let runs = collect_runs(paths)?;
    let checkpoints: Vec<usize> = if checkpoints.is_empty() {
        let max = runs.iter().map(|r| r.summary.steps_requested).max().unwrap_or(1);
        let mut c = vec![(max / 5).max(1), max];
        c.dedup();
        c
    } else {
        checkpoints.to_vec()
    };
    let rows = aggregate_runs(&runs, &checkpoints);
    let md = render_markdown(&rows, &checkpoints);
    print!("{md}");
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(Error::from)?;
        comparison_table(&rows, &checkpoints)
            .write_csv(std::fs::File::create(dir.join("comparison.csv")).map_err(Error::from)?)?;
        std::fs::write(dir.join("comparison.md"), md).map_err(Error::from)?;
    }
    Ok(())
}
