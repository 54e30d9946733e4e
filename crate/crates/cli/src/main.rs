use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use latnas::baselines::Strategy;
use latnas::controller::UpdateRule;
use latnas::eval::SurrogateConfig;
use latnas::explore::DEFAULT_ENUMERATION_LIMIT;
use latnas::reward::RewardConfig;
use latnas_cli::commands::{self, CostFormat};
use latnas_cli::config::{load_profile, load_skeleton, EvaluatorConfig};
use latnas_cli::{CliError, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "latnas", version, about = "Latency-aware architecture search")]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Worker threads for evaluation.
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the policy-gradient controller.
    Search(SearchArgs),
    /// Run random or evolutionary search with the same outputs.
    Baselines(BaselineArgs),
    /// List every arch of a small skeleton with its costs.
    Enumerate(EnumerateArgs),
    /// Extract the accuracy/latency front of a ledger.
    Pareto(ParetoArgs),
    /// Per-layer cost breakdown of one arch.
    Cost(CostArgs),
    /// Costs over a depth-multiplier by input-size grid.
    Scale(ScaleArgs),
    /// Score (accuracy, latency) pairs or sweep the reward over latency.
    RewardEval(RewardArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum RuleArg {
    Reinforce,
    Ppo,
}

#[derive(Args)]
struct RunFlags {
    /// Total samples to evaluate.
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    /// Shell command of an external accuracy evaluator.
    #[arg(long)]
    evaluator_cmd: Option<String>,
    #[arg(long)]
    evaluator_timeout_s: Option<f64>,
}

#[derive(Args)]
struct SearchArgs {
    #[command(flatten)]
    run: RunFlags,
    #[arg(long, value_enum)]
    update_rule: Option<RuleArg>,
    /// Continue from this checkpoint and the ledger in the output directory.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Random,
    Evolution,
}

#[derive(Args)]
struct BaselineArgs {
    #[command(flatten)]
    run: RunFlags,
    #[arg(long, value_enum, default_value = "random")]
    strategy: StrategyArg,
    #[arg(long, default_value_t = 64)]
    population: usize,
    #[arg(long, default_value_t = 1.0)]
    mutation_rate: f64,
}

#[derive(Args)]
struct EnumerateArgs {
    /// Defaults to the config's skeleton.
    #[arg(long)]
    skeleton: Option<PathBuf>,
    /// Defaults to the config's device profile.
    #[arg(long)]
    profile: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_ENUMERATION_LIMIT)]
    limit: u64,
    /// Add surrogate accuracy (the config's surrogate, else defaults).
    #[arg(long)]
    surrogate: bool,
    /// Output file; stdout when absent.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ParetoArgs {
    /// Ledger (JSON lines); defaults to ledger.jsonl in the output directory.
    ledger: Option<PathBuf>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Table,
}

#[derive(Args)]
struct CostArgs {
    /// Arch file (JSON).
    arch: PathBuf,
    #[arg(long)]
    skeleton: Option<PathBuf>,
    #[arg(long)]
    profile: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "table")]
    format: FormatArg,
}

#[derive(Args)]
struct ScaleArgs {
    /// Arch file (JSON).
    arch: PathBuf,
    #[arg(long)]
    skeleton: Option<PathBuf>,
    #[arg(long)]
    profile: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0.35,0.5,0.75,1.0,1.3,1.4")]
    multipliers: Vec<f64>,
    /// Input resolutions; the arch's own when empty.
    #[arg(long, value_delimiter = ',')]
    input_sizes: Vec<u32>,
    #[arg(long)]
    surrogate: bool,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Hard,
    Soft,
    Custom,
}

#[derive(Args)]
struct RewardArgs {
    /// CSV with `accuracy` and `latency_ms` columns; omit with --sweep.
    input: Option<PathBuf>,
    /// Target latency; defaults to the config's reward.
    #[arg(long)]
    target_ms: Option<f64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, allow_hyphen_values = true)]
    alpha: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    beta: Option<f64>,
    /// Emit reward over a latency grid at fixed accuracy instead.
    #[arg(long)]
    sweep: bool,
    #[arg(long, default_value_t = 0.75)]
    accuracy: f64,
    #[arg(long, default_value_t = 10.0)]
    lat_min_ms: f64,
    #[arg(long, default_value_t = 300.0)]
    lat_max_ms: f64,
    #[arg(long, default_value_t = 100)]
    steps: usize,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

struct Globals {
    config: Option<PathBuf>,
    seed: Option<u64>,
    output_dir: Option<PathBuf>,
    parallelism: Option<usize>,
}

impl Globals {
    fn overrides(&self, run: &RunFlags, rule: Option<UpdateRule>) -> Overrides {
        Overrides {
            seed: self.seed,
            output_dir: self.output_dir.clone(),
            parallelism: self.parallelism,
            budget: run.budget,
            batch: run.batch,
            update_rule: rule,
            evaluator_cmd: run.evaluator_cmd.clone(),
            evaluator_timeout_s: run.evaluator_timeout_s,
        }
    }

    fn run_config(&self, run: &RunFlags, rule: Option<UpdateRule>) -> Result<RunConfig, CliError> {
        let path = self
            .config
            .as_deref()
            .ok_or_else(|| CliError::Config("--config is required".into()))?;
        let mut cfg = RunConfig::load(path)?;
        cfg.apply(&self.overrides(run, rule));
        Ok(cfg)
    }

    fn optional_config(&self) -> Result<Option<RunConfig>, CliError> {
        self.config.as_deref().map(RunConfig::load).transpose()
    }
}

fn surrogate_of(cfg: Option<&RunConfig>, wanted: bool, seed: Option<u64>) -> Option<SurrogateConfig> {
    if !wanted {
        return None;
    }
    let mut s = match cfg.map(|c| &c.evaluator) {
        Some(EvaluatorConfig::Surrogate(s)) => *s,
        _ => SurrogateConfig::default(),
    };
    if let Some(seed) = seed {
        s.seed = seed;
    }
    Some(s)
}

fn pick(flag: Option<&PathBuf>, cfg: Option<&RunConfig>, from_cfg: fn(&RunConfig) -> &PathBuf, what: &str) -> Result<PathBuf, CliError> {
    flag.cloned()
        .or_else(|| cfg.map(|c| from_cfg(c).clone()))
        .ok_or_else(|| CliError::Config(format!("--{what} or --config is required")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let g = Globals {
        config: cli.config,
        seed: cli.seed,
        output_dir: cli.output_dir,
        parallelism: cli.parallelism,
    };
    match cli.command {
        Command::Search(a) => {
            let rule = a.update_rule.map(|r| match r {
                RuleArg::Reinforce => UpdateRule::Reinforce,
                RuleArg::Ppo => UpdateRule::ppo(),
            });
            let cfg = g.run_config(&a.run, rule)?;
            let s = commands::cmd_search(&cfg, a.resume.as_deref())?;
            report_done(&s, &cfg);
        }
        Command::Baselines(a) => {
            let cfg = g.run_config(&a.run, None)?;
            let strategy = match a.strategy {
                StrategyArg::Random => Strategy::Random,
                StrategyArg::Evolution => Strategy::Evolution {
                    population: a.population,
                    mutation_rate: a.mutation_rate,
                },
            };
            let s = commands::cmd_baselines(&cfg, strategy)?;
            report_done(&s, &cfg);
        }
        Command::Enumerate(a) => {
            let cfg = g.optional_config()?;
            let skeleton = load_skeleton(&pick(a.skeleton.as_ref(), cfg.as_ref(), |c| &c.skeleton_path, "skeleton")?)?;
            let profile = load_profile(&pick(a.profile.as_ref(), cfg.as_ref(), |c| &c.device_profile_path, "profile")?)?;
            let surrogate = surrogate_of(cfg.as_ref(), a.surrogate, g.seed);
            let n = commands::cmd_enumerate(&skeleton, &profile, surrogate.as_ref(), a.limit, sink(a.out.as_deref())?)?;
            eprintln!("{n} archs");
        }
        Command::Pareto(a) => {
            let ledger = match a.ledger {
                Some(p) => p,
                None => {
                    let dir = match (&g.output_dir, g.optional_config()?) {
                        (Some(d), _) => d.clone(),
                        (None, Some(c)) => c.output_dir,
                        (None, None) => return Err(CliError::Config("give a ledger path, --output-dir, or --config".into())),
                    };
                    dir.join(latnas_cli::report::LEDGER_FILE)
                }
            };
            let front = commands::cmd_pareto(&ledger, sink(a.out.as_deref())?)?;
            eprintln!("{} points on the front", front.len());
        }
        Command::Cost(a) => {
            let cfg = g.optional_config()?;
            let skeleton = match a.skeleton.as_ref().or(cfg.as_ref().map(|c| &c.skeleton_path)) {
                Some(p) => Some(load_skeleton(p)?),
                None => None,
            };
            let profile = load_profile(&pick(a.profile.as_ref(), cfg.as_ref(), |c| &c.device_profile_path, "profile")?)?;
            let arch = commands::load_arch(&a.arch, skeleton.as_ref())?;
            let format = match a.format {
                FormatArg::Json => CostFormat::Json,
                FormatArg::Table => CostFormat::Table,
            };
            let mut out = sink(None)?;
            commands::cmd_cost(&arch, &profile, format, &mut out)?;
            out.flush().map_err(commands::io_err)?;
        }
        Command::Scale(a) => {
            let cfg = g.optional_config()?;
            let skeleton = match a.skeleton.as_ref().or(cfg.as_ref().map(|c| &c.skeleton_path)) {
                Some(p) => Some(load_skeleton(p)?),
                None => None,
            };
            let profile = load_profile(&pick(a.profile.as_ref(), cfg.as_ref(), |c| &c.device_profile_path, "profile")?)?;
            let arch = commands::load_arch(&a.arch, skeleton.as_ref())?;
            let surrogate = surrogate_of(cfg.as_ref(), a.surrogate, g.seed);
            let failed = commands::cmd_scale(
                &arch,
                &a.multipliers,
                &a.input_sizes,
                &profile,
                surrogate.as_ref(),
                sink(a.out.as_deref())?,
            )?;
            if failed > 0 {
                eprintln!("{failed} grid cells could not be built (see the error column)");
            }
        }
        Command::RewardEval(a) => {
            let base = g.optional_config()?.map(|c| c.reward);
            let target = a
                .target_ms
                .or(base.map(|r| r.target_latency_ms))
                .ok_or_else(|| CliError::Config("--target-ms or --config is required".into()))?;
            let cfg = match (a.mode, base) {
                (Some(ModeArg::Hard), _) => RewardConfig::hard(target),
                (Some(ModeArg::Soft), _) => match a.alpha.or(a.beta) {
                    Some(e) => RewardConfig::soft_with(target, e),
                    None => RewardConfig::soft(target),
                },
                (Some(ModeArg::Custom), _) => RewardConfig::custom(
                    target,
                    a.alpha.ok_or_else(|| CliError::Config("custom mode needs --alpha".into()))?,
                    a.beta.ok_or_else(|| CliError::Config("custom mode needs --beta".into()))?,
                ),
                (None, Some(mut r)) => {
                    r.target_latency_ms = target;
                    r
                }
                (None, None) => RewardConfig::soft(target),
            };
            let mut out = sink(a.out.as_deref())?;
            if a.sweep {
                commands::cmd_reward_sweep(a.accuracy, &cfg, a.lat_min_ms, a.lat_max_ms, a.steps, &mut out)?;
            } else {
                let path = a
                    .input
                    .ok_or_else(|| CliError::Config("give an input CSV or --sweep".into()))?;
                let file = File::open(&path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                commands::cmd_reward_eval(file, &cfg, &mut out)?;
            }
            out.flush().map_err(commands::io_err)?;
        }
    }
    Ok(())
}

fn report_done(s: &latnas_cli::report::Summary, cfg: &RunConfig) {
    match &s.best {
        Some(b) => eprintln!(
            "{} samples, best reward {:.6} ({} acc {:.4} lat {:.3} ms), front {} points -> {}",
            s.samples,
            b.reward,
            b.arch_id,
            b.accuracy,
            b.latency_ms,
            s.front_size,
            cfg.output_dir.display()
        ),
        None => eprintln!("no samples"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) | Err(CliError::OutputClosed) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("latnas: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
