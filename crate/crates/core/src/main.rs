use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use selfdistill::experiments::{
    cmd_gap_study, cmd_real_data, cmd_risk_eval, cmd_separation, cmd_synth_sweep, cmd_tune, render_pairs,
    GapStudyConfig, LambdaGrid, OutputDir, RealDataConfig, RiskEvalConfig, RunMeta, SeparationConfig,
    SynthSweepConfig, TuneConfig, TuneData,
};
use selfdistill::serial::format_f64;
use selfdistill::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_INFEASIBLE: u8 = 4;

#[derive(Parser)]
#[command(name = "selfdistill", version, about = "Ridge and multi-step self-distillation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimal k-step risk versus λ on a synthetic instance.
    SynthSweep(Common),
    /// Ridge over r-step risk ratio as the rank grows.
    Separation(Common),
    /// Optimal ξ magnitudes as neighbouring singular values approach.
    GapStudy(Common),
    /// Ridge, 1-step and 2-step SD tuned on a real dataset.
    RealData(Common),
    /// Tune λ and ξ on validation data.
    Tune(Common),
    /// Closed-form risk against Monte Carlo.
    RiskEval(Common),
}

#[derive(Args)]
struct Common {
    /// JSON config; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for CSV/JSON outputs.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// `LO:HI:PER_DECADE` or a comma-separated list.
    #[arg(long)]
    lambda_grid: Option<LambdaGrid>,
    /// Number of distillation steps (sweeps run 0..=k).
    #[arg(long)]
    k: Option<usize>,
}

enum Failure {
    Config(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, Failure> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn unused(flag: &str, command: &str, present: bool) -> Result<(), Failure> {
    if present {
        return Err(Failure::Config(format!("{flag} has no effect on {command}")));
    }
    Ok(())
}

fn output<T: Serialize>(args: &Common, name: &str, config: &T, seeds: Vec<u64>, trials: Option<usize>) -> Result<Option<OutputDir>, Failure> {
    let Some(dir) = &args.out_dir else {
        return Ok(None);
    };
    let meta = RunMeta::new(name, config, seeds, trials)?;
    Ok(Some(OutputDir::create(dir, config, meta)?))
}

fn run(cli: Cli) -> Result<String, Failure> {
    match cli.command {
        Command::SynthSweep(args) => {
            let mut cfg: SynthSweepConfig = load_config(args.config.as_deref())?;
            unused("--trials", "synth-sweep", args.trials.is_some())?;
            if let Some(s) = args.seed {
                cfg.instance.seed = s;
            }
            if let Some(g) = args.lambda_grid.clone() {
                cfg.lambda_grid = g;
            }
            if let Some(k) = args.k {
                cfg.ks = (0..=k).collect();
            }
            let out = output(&args, "synth-sweep", &cfg, vec![cfg.instance.seed], None)?;
            let res = cmd_synth_sweep(&cfg, out.as_ref())?;
            Ok(render_pairs(&[
                ("rank", res.rank.to_string()),
                ("lower_bound", format_f64(res.lower_bound)),
                ("grid points meeting bound", res.meets_bound.len().to_string()),
                ("grid points missing bound", res.misses_bound.len().to_string()),
                ("pointwise dominance", res.pointwise_dominance.to_string()),
            ]))
        }
        Command::Separation(args) => {
            let mut cfg: SeparationConfig = load_config(args.config.as_deref())?;
            unused("--trials", "separation", args.trials.is_some())?;
            unused("--k", "separation", args.k.is_some())?;
            if let Some(s) = args.seed {
                cfg.seed = s;
            }
            if let Some(g) = args.lambda_grid.clone() {
                cfg.lambda_grid = g;
            }
            let out = output(&args, "separation", &cfg, vec![cfg.seed], None)?;
            let res = cmd_separation(&cfg, out.as_ref())?;
            let mut pairs: Vec<(&str, String)> = Vec::new();
            let lines: Vec<String> = res
                .rows
                .iter()
                .map(|r| format!("r={} ratio={:.4}", r.r, r.ratio))
                .collect();
            pairs.push(("slope", format!("{:.6}", res.fit.slope)));
            pairs.push(("r_squared", format!("{:.6}", res.fit.r_squared)));
            Ok(lines.join("\n") + "\n" + &render_pairs(&pairs))
        }
        Command::GapStudy(args) => {
            let mut cfg: GapStudyConfig = load_config(args.config.as_deref())?;
            unused("--trials", "gap-study", args.trials.is_some())?;
            unused("--lambda-grid", "gap-study", args.lambda_grid.is_some())?;
            if let Some(s) = args.seed {
                cfg.seed = s;
            }
            if let Some(k) = args.k {
                cfg.ks = (1..=k).collect();
            }
            let out = output(&args, "gap-study", &cfg, vec![cfg.seed], None)?;
            let res = cmd_gap_study(&cfg, out.as_ref())?;
            let mut text = String::new();
            for r in &res.rows {
                let max = r.max_abs_xi.map_or("undefined".to_string(), |v| format!("{v:.6e}"));
                text += &format!("eps={} k={} max|xi|={max} cond={:.3e}\n", r.epsilon, r.k, r.condition_number);
            }
            for (k, ok) in &res.monotone_by_k {
                text += &format!("k={k} nondecreasing as eps shrinks: {ok}\n");
            }
            Ok(text)
        }
        Command::RealData(args) => {
            let Some(path) = args.config.as_deref() else {
                return Err(Failure::Config("real-data needs --config with a dataset spec".into()));
            };
            let mut cfg: RealDataConfig = serde_json::from_str(
                &fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?,
            )
            .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            unused("--trials", "real-data", args.trials.is_some())?;
            if let Some(g) = args.lambda_grid.clone() {
                cfg.lambda_grid = g;
            }
            if let Some(k) = args.k {
                cfg.ks = (0..=k).collect();
            }
            if let Some(seed) = args.seed {
                if let selfdistill::data::SplitMode::Shuffle { .. } = cfg.dataset.split {
                    cfg.dataset.split = selfdistill::data::SplitMode::Shuffle { seed };
                } else {
                    return Err(Failure::Config("--seed only applies to shuffled splits".into()));
                }
            }
            let seeds = match cfg.dataset.split {
                selfdistill::data::SplitMode::Shuffle { seed } => vec![seed],
                selfdistill::data::SplitMode::Sequential => Vec::new(),
            };
            let out = output(&args, "real-data", &cfg, seeds, None)?;
            let res = cmd_real_data(&cfg, out.as_ref())?;
            let mut text = format!(
                "{}: {} rows ({} train / {} validation / {} test)\n",
                res.manifest.name,
                res.manifest.provenance.rows_after_cleaning,
                res.manifest.sizes.train,
                res.manifest.sizes.validation,
                res.manifest.sizes.test
            );
            for r in &res.rows {
                text += &format!(
                    "{:<10} lambda={:<10} xi={:<30} test_mse={:.4}\n",
                    r.estimator,
                    format!("{:.4e}", r.lambda),
                    r.xi.as_ref().map_or("-".into(), |x| format!("{x:.3?}")),
                    r.test_mse
                );
            }
            Ok(text)
        }
        Command::Tune(args) => {
            let mut cfg: TuneConfig = load_config(args.config.as_deref())?;
            unused("--trials", "tune", args.trials.is_some())?;
            if let Some(g) = args.lambda_grid.clone() {
                cfg.lambda_grid = g;
            }
            if let Some(k) = args.k {
                cfg.k = k;
            }
            if let Some(seed) = args.seed {
                match &mut cfg.data {
                    TuneData::Synthetic(spec) => spec.seed = seed,
                    TuneData::Dataset(_) => return Err(Failure::Config("--seed applies to synthetic data only".into())),
                }
            }
            let seeds = match &cfg.data {
                TuneData::Synthetic(spec) => vec![spec.seed],
                TuneData::Dataset(_) => Vec::new(),
            };
            let out = output(&args, "tune", &cfg, seeds, None)?;
            let res = cmd_tune(&cfg, out.as_ref())?;
            let mut pairs = vec![
                ("lambda", format_f64(res.tuned.lambda)),
                ("xi", res.tuned.xi.as_ref().map_or("undefined".into(), |x| format!("{x:?}"))),
                ("xibar", format!("{:?}", res.tuned.xibar)),
                ("validation_mse", format_f64(res.tuned.validation_mse)),
                ("test_mse", format_f64(res.test_mse)),
                ("skipped grid points", res.tuned.skipped.len().to_string()),
            ];
            if let Some(note) = &res.tuned.note {
                pairs.push(("note", note.clone()));
            }
            Ok(render_pairs(&pairs))
        }
        Command::RiskEval(args) => {
            let mut cfg: RiskEvalConfig = load_config(args.config.as_deref())?;
            unused("--lambda-grid", "risk-eval", args.lambda_grid.is_some())?;
            unused("--k", "risk-eval", args.k.is_some())?;
            if let Some(s) = args.seed {
                cfg.seed = s;
            }
            if let Some(t) = args.trials {
                cfg.trials = t;
            }
            let out = output(&args, "risk-eval", &cfg, vec![cfg.seed], Some(cfg.trials))?;
            let rows = cmd_risk_eval(&cfg, out.as_ref())?;
            Ok(rows
                .iter()
                .map(|r| {
                    format!(
                        "xibar={:?} closed={:.6e} mc={:.6e} se={:.2e} z={:+.2}\n",
                        r.xibar, r.closed_form, r.monte_carlo, r.standard_error, r.z_score
                    )
                })
                .collect())
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Infeasible(_) | Error::DegenerateParametrization { .. } => EXIT_INFEASIBLE,
        Error::Data(_) | Error::Schema { .. } | Error::Io(_) | Error::Csv(_) => EXIT_DATA,
        Error::Input(_) | Error::Dimension { .. } | Error::TooManySteps { .. } | Error::Json(_) => EXIT_CONFIG,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
