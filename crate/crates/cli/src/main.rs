//! `dicerl`: training runs, evaluation, OPE checks, verification suites,
//! sweeps and plots.
//!
//! Exit status: 0 on success, 1 when a check fails or a run aborts, 2 on
//! usage errors (bad flags, unreadable or invalid config, unknown names).

mod plot;
mod summary;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::thread;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use dicerl_core::checkpoint;
use dicerl_core::policies::GaussianPolicy;
use dicerl_core::trainer::{evaluate, make_env};
use dicerl_core::{ope_check, run_suite, Config, Mode, Rng, Suite, Trainer, TrainingLog};

use plot::{line_chart, Series};
use summary::{aggregate, create_unique, summary_csv, summary_header, summary_rows, write_unique};

#[derive(Parser)]
#[command(name = "dicerl", version, about = "Optimistic exploration with DICE distribution correction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct RunArgs {
    /// Config file; the desk profile is used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    /// Overrides the config's mode.
    #[arg(long)]
    mode: Option<Mode>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run per seed; writes per-seed CSV logs, checkpoints and a summary.
    Train(RunArgs),
    /// Evaluate a saved policy checkpoint.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "target")]
        policy: WhichPolicy,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compare dual estimates and batch rewards against on-policy rewards.
    OpeCheck {
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        /// Minimum win fraction per log.
        #[arg(long, default_value_t = 0.7)]
        threshold: f64,
    },
    /// Run a verification suite: grad, tabular-dice, prop1, theorem1, bounds or all.
    Verify { suite: String },
    /// Train across values of one hyperparameter.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Learning-curve and OPE charts from logs sharing one step grid.
    Plot {
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        #[arg(long, default_value = "plots")]
        out: PathBuf,
        #[arg(long, default_value = "")]
        title: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum WhichPolicy {
    Target,
    Explore,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepParam {
    #[value(name = "T")]
    Temperature,
    BetaUb,
    BetaLb,
    Alpha,
}

impl SweepParam {
    fn name(self) -> &'static str {
        match self {
            SweepParam::Temperature => "T",
            SweepParam::BetaUb => "beta_ub",
            SweepParam::BetaLb => "beta_lb",
            SweepParam::Alpha => "alpha",
        }
    }

    fn apply(self, config: &mut Config, v: f64) {
        match self {
            SweepParam::Temperature => config.dice.temperature = v,
            SweepParam::BetaUb => config.beta_ub = v,
            SweepParam::BetaLb => config.beta_lb = v,
            SweepParam::Alpha => config.alpha = v,
        }
    }
}

/// Bad input from the user; maps to exit status 2.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    let Some(path) = path else { return Ok(Config::desk()) };
    let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    Config::parse_onto(Config::desk(), &text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn run_config(args: &RunArgs) -> Result<Config> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(mode) = args.mode {
        config.mode = mode;
    }
    config.validate().map_err(|e| usage(e.to_string()))?;
    make_env(&config).map_err(|e| usage(e.to_string()))?;
    Ok(config)
}

fn file_stem(config: &Config) -> String {
    let env: String = config.env.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect();
    format!("{env}_{}_seed{}", config.mode, config.seed)
}

/// Trains every seed on its own thread and writes its log and checkpoint.
fn train_seeds(base: &Config, seeds: &[u64], out: &Path) -> Result<Vec<TrainingLog>> {
    if seeds.is_empty() {
        return Err(usage("no seeds given"));
    }
    let results: Vec<Result<(TrainingLog, PathBuf)>> = thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                let config = Config { seed, ..base.clone() };
                scope.spawn(move || -> Result<(TrainingLog, PathBuf)> {
                    let stem = file_stem(&config);
                    let mut trainer = Trainer::new(config)?;
                    trainer.run(&mut ())?;
                    let path = write_unique(out, &stem, "csv", trainer.log().to_csv().as_bytes())?;
                    let (ckpt, file) = create_unique(out, &stem, "ckpt")?;
                    checkpoint::write_arrays(std::io::BufWriter::new(file), &trainer.checkpoint_arrays())
                        .with_context(|| format!("writing {}", ckpt.display()))?;
                    Ok((trainer.into_log(), path))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("training thread panicked")).collect()
    });
    let mut logs = Vec::new();
    for (seed, r) in seeds.iter().zip(results) {
        let (log, path) = r.with_context(|| format!("seed {seed}"))?;
        match log.last() {
            Some(last) => println!("seed {seed}: final return {:.4} ({})", last.return_target, path.display()),
            None => println!("seed {seed}: no evaluations ({})", path.display()),
        }
        logs.push(log);
    }
    Ok(logs)
}

fn cmd_train(args: RunArgs) -> Result<()> {
    let config = run_config(&args)?;
    let logs = train_seeds(&config, &args.seeds, &args.out)?;
    let stem = format!("{}_summary", file_stem(&config).rsplit_once("_seed").unwrap().0);
    let path = write_unique(&args.out, &stem, "csv", summary_csv(&logs)?.as_bytes())?;
    println!("summary: {}", path.display());
    Ok(())
}

fn cmd_eval(config: Option<&Path>, ckpt: &Path, which: WhichPolicy, episodes: Option<usize>, seed: u64) -> Result<()> {
    let config = load_config(config)?;
    let env = make_env(&config).map_err(|e| usage(e.to_string()))?;
    let arrays = checkpoint::load(ckpt).with_context(|| format!("reading {}", ckpt.display()))?;
    let prefix = match which {
        WhichPolicy::Target => "target_policy",
        WhichPolicy::Explore => "explore_policy",
    };
    let mut policy = GaussianPolicy::new(env.obs_dim(), env.action_dim(), &config.hidden, config.alpha, &mut Rng::new(0));
    policy
        .load_named_arrays(prefix, &arrays)
        .map_err(|e| usage(format!("{} does not match the config's networks: {e}", ckpt.display())))?;
    let episodes = episodes.unwrap_or(config.eval_episodes);
    if episodes == 0 {
        return Err(usage("episodes must be at least 1"));
    }
    let e = evaluate(&policy, &env, episodes, config.gamma, &mut Rng::new(seed))?;
    println!("episodes,mean_return,mean_reward,normalized_discounted");
    println!("{episodes},{:?},{:?},{:?}", e.mean_return, e.mean_reward, e.normalized_discounted);
    Ok(())
}

fn read_log(path: &Path) -> Result<TrainingLog> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    TrainingLog::from_csv(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

/// Returns whether every log met the threshold.
fn cmd_ope_check(paths: &[PathBuf], threshold: f64) -> Result<bool> {
    let mut all = true;
    println!("log,points,win_fraction,mean_abs_error_dual,mean_abs_error_batch,passed");
    for p in paths {
        let log = read_log(p)?;
        let Some(c) = ope_check(&log) else {
            return Err(usage(format!("{} has no evaluation rows", p.display())));
        };
        let ok = c.win_fraction >= threshold;
        all &= ok;
        println!(
            "{},{},{:.4},{:.6},{:.6},{}",
            p.display(),
            c.points,
            c.win_fraction,
            c.mean_abs_error_dual,
            c.mean_abs_error_batch,
            ok
        );
    }
    Ok(all)
}

fn cmd_verify(name: &str) -> Result<bool> {
    let suites: Vec<Suite> = if name == "all" {
        Suite::ALL.to_vec()
    } else {
        vec![name.parse().map_err(|e: dicerl_core::verify::UnknownSuite| usage(e.to_string()))?]
    };
    let mut ok = true;
    for s in suites {
        println!("[{s}]");
        let report = run_suite(s);
        print!("{report}");
        ok &= report.passed();
    }
    Ok(ok)
}

fn cmd_sweep(run: RunArgs, param: SweepParam, values: &[f64]) -> Result<()> {
    let base = run_config(&run)?;
    let mut combined = format!("{},{}\n", param.name(), summary_header());
    for &v in values {
        let mut config = base.clone();
        param.apply(&mut config, v);
        config.validate().map_err(|e| usage(format!("{}={v}: {e}", param.name())))?;
        println!("{} = {v}", param.name());
        let dir = run.out.join(format!("{}_{v}", param.name()));
        let logs = train_seeds(&config, &run.seeds, &dir)?;
        combined.push_str(&summary_rows(&logs, &format!("{v:?},"))?);
    }
    let path = write_unique(&run.out, &format!("sweep_{}", param.name()), "csv", combined.as_bytes())?;
    println!("sweep summary: {}", path.display());
    Ok(())
}

fn cmd_plot(paths: &[PathBuf], out: &Path, title: &str) -> Result<()> {
    let logs = paths.iter().map(|p| read_log(p)).collect::<Result<Vec<_>>>()?;
    let stats = aggregate(&logs).map_err(|e| usage(e.to_string()))?;
    let xs: Vec<f64> = stats.iter().map(|(s, _)| *s as f64).collect();
    let column = |k: usize| -> (Vec<f64>, Vec<f64>) { stats.iter().map(|(_, v)| v[k]).unzip() };
    let series = |label: &str, k: usize, band: bool| {
        let (mean, std) = column(k);
        Series {
            label: label.into(),
            xs: xs.clone(),
            mean,
            std: band.then_some(std),
        }
    };
    let suffix = if logs.len() > 1 { format!(" ({} runs, ±1 std)", logs.len()) } else { String::new() };
    let returns = line_chart(
        &format!("{title}{}return{suffix}", if title.is_empty() { "" } else { ": " }),
        "environment steps",
        "average return",
        &[series("target policy", 0, true), series("exploration policy", 1, true)],
    );
    let ope = line_chart(
        &format!("{title}{}per-step reward estimates", if title.is_empty() { "" } else { ": " }),
        "environment steps",
        "reward",
        &[series("dual estimate", 2, false), series("batch rewards", 3, false), series("on-policy rewards", 4, false)],
    );
    let a = write_unique(out, "returns", "svg", returns.as_bytes())?;
    let b = write_unique(out, "ope", "svg", ope.as_bytes())?;
    println!("{}\n{}", a.display(), b.display());
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train(args) => cmd_train(args).map(|_| true),
        Command::Eval {
            config,
            checkpoint,
            policy,
            episodes,
            seed,
        } => cmd_eval(config.as_deref(), &checkpoint, policy, episodes, seed).map(|_| true),
        Command::OpeCheck { logs, threshold } => cmd_ope_check(&logs, threshold),
        Command::Verify { suite } => cmd_verify(&suite),
        Command::Sweep { run, param, values } => cmd_sweep(run, param, &values).map(|_| true),
        Command::Plot { logs, out, title } => cmd_plot(&logs, &out, &title).map(|_| true),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            let mut msg = format!("error: {e}");
            for cause in e.chain().skip(1) {
                write!(msg, "\n  caused by: {cause}").unwrap();
            }
            eprintln!("{msg}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
