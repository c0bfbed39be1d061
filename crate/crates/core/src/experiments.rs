//! Experiment drivers behind the command-line tool: synthetic risk sweeps,
//! the separation and singular-gap studies, the real-data protocol, tuning
//! and Monte-Carlo risk checks. Every output file carries the config hash
//! and seed, and reruns are bit-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{manifest, mse, random_design, DatasetSpec, PreparedManifest, Split};
use crate::error::{Error, Result};
use crate::estimators::{xibar_to_xi, XiBar};
use crate::risk::{
    excess_risk_closed, lower_bound, monte_carlo_batch, quadratic_coefficients, ridge_lambda_star, ridge_risk,
    LambdaRange, DEFAULT_MC_TRIALS, NOISE_DISTRIBUTION,
};
use crate::serial::format_f64;
use crate::solver::{build_system, log_grid, solve_xibar_argmin};
use crate::spectral::{make_synthetic, BasisKind, ProblemInstance, SyntheticSpec, ThetaSpec};
use crate::tuner::{tune, TunedResult};

/// `k`-step curve may exceed the `(k−1)`-step one by at most this.
pub const DOMINANCE_SLACK: f64 = 1e-10;
/// Relative distance below which a risk is said to meet the lower bound.
pub const MEETS_BOUND_TOLERANCE: f64 = 1e-6;

/// Either `{lo, hi, per_decade}` (log spaced, endpoints included) or an
/// explicit list. On the command line: `LO:HI:PER_DECADE` or `a,b,c`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaGrid {
    Log { lo: f64, hi: f64, per_decade: usize },
    Values(Vec<f64>),
}

impl LambdaGrid {
    pub fn values(&self) -> Result<Vec<f64>> {
        let values = match self {
            LambdaGrid::Log { lo, hi, per_decade } => {
                if !(lo.is_finite() && hi.is_finite() && *lo > 0.0 && hi >= lo && *per_decade > 0) {
                    return Err(Error::Input(format!(
                        "bad λ grid {lo}:{hi}:{per_decade}; need 0 < lo ≤ hi and per_decade ≥ 1"
                    )));
                }
                log_grid(*lo, *hi, *per_decade)
            }
            LambdaGrid::Values(v) => v.clone(),
        };
        if values.is_empty() || values.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(Error::Input("λ grid must be nonempty with positive finite entries".into()));
        }
        Ok(values)
    }
}

impl FromStr for LambdaGrid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Input(format!("cannot parse λ grid {s:?}; expected LO:HI:PER_DECADE or a,b,c"));
        let grid = if s.contains(':') {
            let parts: Vec<&str> = s.split(':').collect();
            if parts.len() != 3 {
                return Err(bad());
            }
            LambdaGrid::Log {
                lo: parts[0].trim().parse().map_err(|_| bad())?,
                hi: parts[1].trim().parse().map_err(|_| bad())?,
                per_decade: parts[2].trim().parse().map_err(|_| bad())?,
            }
        } else {
            LambdaGrid::Values(
                s.split(',')
                    .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
                    .collect::<Result<_>>()?,
            )
        };
        grid.values()?;
        Ok(grid)
    }
}

pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    Ok(crate::data::sha256_hex(serde_json::to_string(config)?.as_bytes()))
}

/// Provenance written next to every result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub experiment: String,
    pub config_sha256: String,
    pub seeds: Vec<u64>,
    pub noise_distribution: String,
    pub trials: Option<usize>,
    pub version: String,
}

impl RunMeta {
    pub fn new<T: Serialize>(experiment: &str, config: &T, seeds: Vec<u64>, trials: Option<usize>) -> Result<Self> {
        Ok(Self {
            experiment: experiment.to_string(),
            config_sha256: config_hash(config)?,
            seeds,
            noise_distribution: NOISE_DISTRIBUTION.to_string(),
            trials,
            version: env!("CARGO_PKG_VERSION").to_string(),
        })
    }

    fn header(&self) -> String {
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        format!("# config_sha256={} seed={}\n", self.config_sha256, seeds.join(";"))
    }
}

/// Writes result files under one directory.
pub struct OutputDir {
    root: PathBuf,
    meta: RunMeta,
}

impl OutputDir {
    /// Creates the directory and writes `config.json` and `meta.json`.
    pub fn create<T: Serialize>(root: &Path, config: &T, meta: RunMeta) -> Result<Self> {
        fs::create_dir_all(root)?;
        fs::write(root.join("config.json"), serde_json::to_string_pretty(config)? + "\n")?;
        fs::write(root.join("meta.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
        Ok(Self {
            root: root.to_path_buf(),
            meta,
        })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn write_csv(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf> {
        let mut text = self.meta.header();
        text.push_str(&header.join(","));
        text.push('\n');
        for row in rows {
            text.push_str(&row.join(","));
            text.push('\n');
        }
        let path = self.root.join(name);
        fs::write(&path, text)?;
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        #[derive(Serialize)]
        struct Wrapped<'a, T> {
            meta: &'a RunMeta,
            result: &'a T,
        }
        let path = self.root.join(name);
        let body = serde_json::to_string_pretty(&Wrapped {
            meta: &self.meta,
            result: value,
        })?;
        fs::write(&path, body + "\n")?;
        Ok(path)
    }
}

fn join_f64(values: &[f64]) -> String {
    values.iter().map(|v| format_f64(*v)).collect::<Vec<_>>().join(";")
}

// ---------------------------------------------------------------------------
// synthetic sweep

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSweepConfig {
    pub instance: SyntheticSpec,
    pub lambda_grid: LambdaGrid,
    pub ks: Vec<usize>,
    /// Fail with an infeasibility error when the `k = r` curve misses the
    /// lower bound somewhere on the grid.
    #[serde(default)]
    pub require_bound: bool,
}

impl Default for SynthSweepConfig {
    fn default() -> Self {
        Self {
            instance: SyntheticSpec {
                d: 4,
                n: 4,
                singular_values: vec![1.0, 0.5, 1.0 / 3.0, 0.25],
                theta: ThetaSpec::Aligned { direction: 1, norm: 1.0 },
                gamma: 0.125,
                seed: 0,
                basis: BasisKind::Random,
            },
            lambda_grid: LambdaGrid::Log {
                lo: 1e-3,
                hi: 1e3,
                per_decade: 10,
            },
            ks: vec![0, 1, 2, 3, 4],
            require_bound: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub lambda: f64,
    pub k: usize,
    pub excess_risk: f64,
    pub bias: f64,
    pub variance: f64,
    pub xibar: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSweepOutput {
    pub rank: usize,
    pub lower_bound: f64,
    pub curves: Vec<CurvePoint>,
    /// `λ` values at which the `k = r` curve is within
    /// [`MEETS_BOUND_TOLERANCE`] of the lower bound (empty when `r` is not
    /// among the swept `k`).
    pub meets_bound: Vec<f64>,
    pub misses_bound: Vec<f64>,
    /// Every `k`-step curve is below the previous swept one up to
    /// [`DOMINANCE_SLACK`].
    pub pointwise_dominance: bool,
}

pub fn sweep_instance(instance: &ProblemInstance, grid: &[f64], ks: &[usize]) -> Result<SynthSweepOutput> {
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let per_lambda: Vec<Result<Vec<CurvePoint>>> = grid
        .par_iter()
        .map(|&lambda| {
            ks.iter()
                .map(|&k| {
                    let (xibar, report) = if k == 0 {
                        (XiBar::zeros(0), ridge_risk(instance, lambda)?)
                    } else {
                        let q = quadratic_coefficients(instance, lambda, k)?;
                        let xb = solve_xibar_argmin(&q);
                        let rep = excess_risk_closed(instance, lambda, &xb)?;
                        (xb, rep)
                    };
                    Ok(CurvePoint {
                        lambda,
                        k,
                        excess_risk: report.excess_risk,
                        bias: report.bias_part,
                        variance: report.variance_part,
                        xibar: xibar.xibar,
                    })
                })
                .collect()
        })
        .collect();
    let mut curves = Vec::with_capacity(grid.len() * ks.len());
    let mut dominance = true;
    for points in per_lambda {
        let points = points?;
        for w in points.windows(2) {
            if w[1].excess_risk > w[0].excess_risk + DOMINANCE_SLACK {
                dominance = false;
            }
        }
        curves.extend(points);
    }
    let rank = instance.rank();
    let lb = lower_bound(instance);
    let (mut meets, mut misses) = (Vec::new(), Vec::new());
    for p in curves.iter().filter(|p| p.k == rank) {
        if (p.excess_risk - lb).abs() <= MEETS_BOUND_TOLERANCE * lb.max(f64::MIN_POSITIVE) {
            meets.push(p.lambda);
        } else {
            misses.push(p.lambda);
        }
    }
    Ok(SynthSweepOutput {
        rank,
        lower_bound: lb,
        curves,
        meets_bound: meets,
        misses_bound: misses,
        pointwise_dominance: dominance,
    })
}

pub fn curve_rows(curves: &[CurvePoint]) -> Vec<Vec<String>> {
    curves
        .iter()
        .map(|p| {
            vec![
                format_f64(p.lambda),
                p.k.to_string(),
                format_f64(p.excess_risk),
                format_f64(p.bias),
                format_f64(p.variance),
            ]
        })
        .collect()
}

pub const CURVE_HEADER: [&str; 5] = ["lambda", "k", "excess_risk", "bias", "variance"];

pub fn cmd_synth_sweep(config: &SynthSweepConfig, out: Option<&OutputDir>) -> Result<SynthSweepOutput> {
    let instance = make_synthetic(&config.instance)?;
    let output = sweep_instance(&instance, &config.lambda_grid.values()?, &config.ks)?;
    if let Some(out) = out {
        out.write_csv("curves.csv", &CURVE_HEADER, &curve_rows(&output.curves))?;
        out.write_json("summary.json", &output)?;
    }
    if config.require_bound && config.ks.contains(&output.rank) && !output.misses_bound.is_empty() {
        return Err(Error::Infeasible(format!(
            "the {}-step curve misses the lower bound at λ = {:?}",
            output.rank, output.misses_bound
        )));
    }
    Ok(output)
}

// ---------------------------------------------------------------------------
// separation ratio versus rank

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationConfig {
    pub d: usize,
    pub n: usize,
    pub gamma: f64,
    /// Singular values follow `s_j = j^(−α)` from `s_1 = 1` down to
    /// `s_r = s_last`.
    pub s_last: f64,
    pub ranks: Vec<usize>,
    pub lambda_grid: LambdaGrid,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SeparationConfig {
    fn default() -> Self {
        Self {
            d: 100,
            n: 100,
            gamma: 0.1,
            s_last: 0.8,
            ranks: (1..=10).map(|i| 5 * i).collect(),
            lambda_grid: LambdaGrid::Log {
                lo: 1e-4,
                hi: 1e4,
                per_decade: 10,
            },
            seed: 0,
        }
    }
}

pub fn power_law_singular_values(r: usize, s_last: f64) -> Vec<f64> {
    if r == 1 {
        return vec![1.0];
    }
    let alpha = -s_last.ln() / (r as f64).ln();
    (1..=r).map(|j| (j as f64).powf(-alpha)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationRow {
    pub r: usize,
    /// `A = min_λ` ridge risk.
    pub ridge_min: f64,
    pub ridge_lambda: f64,
    /// `B = min` over grid `λ` and `ξ̄ ∈ ℝ^r` of the r-step risk.
    pub sd_min: f64,
    pub sd_lambda: f64,
    pub ratio: f64,
    pub lower_bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn fit_line(x: &[f64], y: &[f64]) -> LineFit {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let r_squared = if sxx > 0.0 && syy > 0.0 {
        sxy * sxy / (sxx * syy)
    } else {
        1.0
    };
    LineFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationOutput {
    pub rows: Vec<SeparationRow>,
    pub fit: LineFit,
}

pub fn separation_row(instance: &ProblemInstance, grid: &[f64]) -> Result<SeparationRow> {
    let r = instance.rank();
    let ridge = ridge_lambda_star(instance, LambdaRange::default())?;
    let evals: Vec<Result<(f64, f64)>> = grid
        .par_iter()
        .map(|&lambda| {
            let q = quadratic_coefficients(instance, lambda, r)?;
            let risk = q.evaluate(&solve_xibar_argmin(&q).xibar)?.excess_risk;
            Ok((risk, lambda))
        })
        .collect();
    let mut best = (f64::INFINITY, f64::NAN);
    for e in evals {
        let (risk, lambda) = e?;
        if risk < best.0 {
            best = (risk, lambda);
        }
    }
    Ok(SeparationRow {
        r,
        ridge_min: ridge.risk,
        ridge_lambda: ridge.lambda,
        sd_min: best.0,
        sd_lambda: best.1,
        ratio: ridge.risk / best.0,
        lower_bound: lower_bound(instance),
    })
}

pub fn cmd_separation(config: &SeparationConfig, out: Option<&OutputDir>) -> Result<SeparationOutput> {
    let grid = config.lambda_grid.values()?;
    let mut rows = Vec::new();
    for &r in &config.ranks {
        let instance = make_synthetic(&SyntheticSpec {
            d: config.d,
            n: config.n,
            singular_values: power_law_singular_values(r, config.s_last),
            theta: ThetaSpec::Aligned { direction: 1, norm: 1.0 },
            gamma: config.gamma,
            seed: config.seed,
            basis: BasisKind::Identity,
        })?;
        rows.push(separation_row(&instance, &grid)?);
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.r as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.ratio).collect();
    let output = SeparationOutput {
        fit: fit_line(&xs, &ys),
        rows,
    };
    if let Some(out) = out {
        let table: Vec<Vec<String>> = output
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.r.to_string(),
                    format_f64(r.ridge_min),
                    format_f64(r.ridge_lambda),
                    format_f64(r.sd_min),
                    format_f64(r.sd_lambda),
                    format_f64(r.ratio),
                    format_f64(r.lower_bound),
                ]
            })
            .collect();
        out.write_csv(
            "separation.csv",
            &["r", "ridge_min", "ridge_lambda", "sd_min", "sd_lambda", "ratio", "lower_bound"],
            &table,
        )?;
        out.write_json("summary.json", &output)?;
    }
    Ok(output)
}

// ---------------------------------------------------------------------------
// singular-gap study

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapStudyConfig {
    pub epsilons: Vec<f64>,
    pub ks: Vec<usize>,
    pub lambda: f64,
    pub gamma: f64,
    /// Rank and dimension; singular values are `1 − (j−1)ε`.
    pub r: usize,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for GapStudyConfig {
    fn default() -> Self {
        Self {
            epsilons: vec![0.2, 0.1, 0.05, 0.02, 0.01],
            ks: vec![1, 2, 3],
            lambda: 0.125,
            gamma: 0.125,
            r: 4,
            n: 4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub epsilon: f64,
    pub k: usize,
    pub xibar: Vec<f64>,
    pub xi: Option<Vec<f64>>,
    pub max_abs_xi: Option<f64>,
    pub risk: f64,
    /// Condition number of the r-column achievability system at `λ`.
    pub condition_number: f64,
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapStudyOutput {
    pub rows: Vec<GapRow>,
    /// Per `k`: `max|ξ|` never decreases as `ε` shrinks.
    pub monotone_by_k: Vec<(usize, bool)>,
}

pub fn cmd_gap_study(config: &GapStudyConfig, out: Option<&OutputDir>) -> Result<GapStudyOutput> {
    let mut rows = Vec::new();
    for &eps in &config.epsilons {
        let singular_values: Vec<f64> = (0..config.r).map(|j| 1.0 - j as f64 * eps).collect();
        let instance = make_synthetic(&SyntheticSpec {
            d: config.r,
            n: config.n,
            singular_values,
            theta: ThetaSpec::Aligned { direction: 1, norm: 1.0 },
            gamma: config.gamma,
            seed: config.seed,
            basis: BasisKind::Random,
        })?;
        let condition_number = build_system(&instance, config.lambda, config.r)?.condition_number;
        for &k in &config.ks {
            let q = quadratic_coefficients(&instance, config.lambda, k)?;
            let xibar = solve_xibar_argmin(&q);
            let risk = q.evaluate(&xibar.xibar)?.excess_risk;
            let (xi, note) = match xibar_to_xi(&xibar) {
                Ok(xi) => (Some(xi), None),
                Err(e) => (None, Some(e.to_string())),
            };
            rows.push(GapRow {
                epsilon: eps,
                k,
                max_abs_xi: xi.as_ref().map(|v| v.iter().fold(0.0f64, |m, x| m.max(x.abs()))),
                xi,
                xibar: xibar.xibar,
                risk,
                condition_number,
                note,
            });
        }
    }
    let mut monotone_by_k = Vec::new();
    for &k in &config.ks {
        let mut cells: Vec<(f64, Option<f64>)> =
            rows.iter().filter(|r| r.k == k).map(|r| (r.epsilon, r.max_abs_xi)).collect();
        cells.sort_by(|a, b| b.0.total_cmp(&a.0));
        let ok = cells.windows(2).all(|w| match (w[0].1, w[1].1) {
            (Some(a), Some(b)) => b >= a,
            _ => false,
        });
        monotone_by_k.push((k, ok));
    }
    let output = GapStudyOutput { rows, monotone_by_k };
    if let Some(out) = out {
        let table: Vec<Vec<String>> = output
            .rows
            .iter()
            .map(|r| {
                vec![
                    format_f64(r.epsilon),
                    r.k.to_string(),
                    r.max_abs_xi.map_or_else(|| "nan".into(), format_f64),
                    r.xi.as_deref().map_or_else(String::new, join_f64),
                    join_f64(&r.xibar),
                    format_f64(r.risk),
                    format_f64(r.condition_number),
                ]
            })
            .collect();
        out.write_csv(
            "gap_study.csv",
            &["epsilon", "k", "max_abs_xi", "xi", "xibar", "excess_risk", "condition_number"],
            &table,
        )?;
        out.write_json("summary.json", &output)?;
    }
    Ok(output)
}

// ---------------------------------------------------------------------------
// real data and tuning

fn default_real_grid() -> LambdaGrid {
    LambdaGrid::Log {
        lo: 1e-3,
        hi: 1e6,
        per_decade: 2,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealDataConfig {
    pub dataset: DatasetSpec,
    #[serde(default = "default_real_grid")]
    pub lambda_grid: LambdaGrid,
    #[serde(default = "default_real_ks")]
    pub ks: Vec<usize>,
}

fn default_real_ks() -> Vec<usize> {
    vec![0, 1, 2]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealDataRow {
    pub estimator: String,
    pub k: usize,
    pub lambda: f64,
    pub xi: Option<Vec<f64>>,
    pub xibar: Vec<f64>,
    pub validation_mse: f64,
    pub test_mse: f64,
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealDataReport {
    pub manifest: PreparedManifest,
    pub rows: Vec<RealDataRow>,
    /// Best validation MSE per `(λ, k)`.
    pub validation_curves: Vec<(f64, usize, f64)>,
}

pub fn estimator_name(k: usize) -> String {
    if k == 0 {
        "ridge".into()
    } else {
        format!("{k}-step SD")
    }
}

/// Tunes each `k` on validation and scores the winners on test.
pub fn evaluate_splits(train: &Split, validation: &Split, test: &Split, grid: &[f64], ks: &[usize]) -> Result<(Vec<RealDataRow>, Vec<TunedResult>)> {
    let mut rows = Vec::new();
    let mut tuned_all = Vec::new();
    for &k in ks {
        let tuned = tune(train, validation, grid, k)?;
        rows.push(RealDataRow {
            estimator: estimator_name(k),
            k,
            lambda: tuned.lambda,
            xi: tuned.xi.clone(),
            xibar: tuned.xibar.clone(),
            validation_mse: tuned.validation_mse,
            test_mse: mse(&tuned.weights, test)?,
            note: tuned.note.clone(),
        });
        tuned_all.push(tuned);
    }
    Ok((rows, tuned_all))
}

pub fn cmd_real_data(config: &RealDataConfig, out: Option<&OutputDir>) -> Result<RealDataReport> {
    let context = |e: Error| match e {
        Error::Data(m) => Error::Data(format!("{}: {m}", config.dataset.name)),
        Error::Input(m) => Error::Input(format!("{}: {m}", config.dataset.name)),
        other => other,
    };
    let dataset = config.dataset.prepare().map_err(context)?;
    let grid = config.lambda_grid.values()?;
    let (rows, tuned) =
        evaluate_splits(&dataset.train, &dataset.validation, &dataset.test, &grid, &config.ks).map_err(context)?;
    let validation_curves = tuned
        .iter()
        .flat_map(|t| t.traces.iter().map(move |tr| (tr.lambda, t.k, tr.validation_mse)))
        .collect();
    let report = RealDataReport {
        manifest: manifest(&config.dataset, &dataset),
        rows,
        validation_curves,
    };
    if let Some(out) = out {
        write_validation_curves(out, &report.validation_curves)?;
        for t in &tuned {
            write_tuning_trace(out, &format!("tuning_trace_k{}.csv", t.k), t)?;
        }
        out.write_json("manifest.json", &report.manifest)?;
        out.write_json("table.json", &report.rows)?;
    }
    Ok(report)
}

fn write_validation_curves(out: &OutputDir, curves: &[(f64, usize, f64)]) -> Result<()> {
    let rows: Vec<Vec<String>> = curves
        .iter()
        .map(|(l, k, m)| vec![format_f64(*l), k.to_string(), format_f64(*m)])
        .collect();
    out.write_csv("validation_curves.csv", &["lambda", "k", "validation_mse"], &rows)?;
    Ok(())
}

pub fn write_tuning_trace(out: &OutputDir, name: &str, tuned: &TunedResult) -> Result<PathBuf> {
    let mut rows = Vec::new();
    for trace in &tuned.traces {
        for p in &trace.probes {
            rows.push(vec![
                format_f64(trace.lambda),
                tuned.k.to_string(),
                join_f64(&p.xi),
                format_f64(p.validation_mse),
            ]);
        }
    }
    out.write_csv(name, &["lambda", "k", "probe_xi", "validation_mse"], &rows)
}

/// Synthetic random-design data for tuning without a dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomDesignSpec {
    pub theta_star: Vec<f64>,
    pub n_train: usize,
    pub n_validation: usize,
    pub n_test: usize,
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for RandomDesignSpec {
    fn default() -> Self {
        Self {
            theta_star: vec![1.0, -0.5, 0.25, 0.125, 0.0, 0.0, 2.0, -1.0],
            n_train: 2000,
            n_validation: 2000,
            n_test: 2000,
            noise_sd: 1.0,
            seed: 0,
        }
    }
}

impl RandomDesignSpec {
    pub fn splits(&self) -> [Split; 3] {
        let s = self.seed.wrapping_mul(3);
        [
            random_design(&self.theta_star, self.n_train, self.noise_sd, s),
            random_design(&self.theta_star, self.n_validation, self.noise_sd, s + 1),
            random_design(&self.theta_star, self.n_test, self.noise_sd, s + 2),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum TuneData {
    Dataset(DatasetSpec),
    Synthetic(RandomDesignSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneConfig {
    pub data: TuneData,
    #[serde(default = "default_real_grid")]
    pub lambda_grid: LambdaGrid,
    pub k: usize,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            data: TuneData::Synthetic(RandomDesignSpec::default()),
            lambda_grid: default_real_grid(),
            k: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneOutput {
    pub tuned: TunedResult,
    pub test_mse: f64,
}

pub fn cmd_tune(config: &TuneConfig, out: Option<&OutputDir>) -> Result<TuneOutput> {
    let [train, validation, test] = match &config.data {
        TuneData::Dataset(spec) => {
            let ds = spec.prepare()?;
            [ds.train, ds.validation, ds.test]
        }
        TuneData::Synthetic(spec) => spec.splits(),
    };
    let tuned = tune(&train, &validation, &config.lambda_grid.values()?, config.k)?;
    let test_mse = mse(&tuned.weights, &test)?;
    let output = TuneOutput { tuned, test_mse };
    if let Some(out) = out {
        write_tuning_trace(out, "tuning_trace.csv", &output.tuned)?;
        out.write_json("tuned.json", &output)?;
    }
    Ok(output)
}

// ---------------------------------------------------------------------------
// closed form versus Monte Carlo

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskEvalConfig {
    pub instance: SyntheticSpec,
    pub lambda: f64,
    /// Points in `ξ̄` coordinates; all must have the same length.
    pub xibars: Vec<Vec<f64>>,
    pub trials: usize,
    pub seed: u64,
}

impl Default for RiskEvalConfig {
    fn default() -> Self {
        Self {
            instance: SynthSweepConfig::default().instance,
            lambda: 0.1,
            xibars: vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![-0.5, 1.5]],
            trials: DEFAULT_MC_TRIALS,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskEvalRow {
    pub xibar: Vec<f64>,
    pub closed_form: f64,
    pub monte_carlo: f64,
    pub standard_error: f64,
    /// `(monte_carlo − closed_form) / standard_error`.
    pub z_score: f64,
}

pub fn cmd_risk_eval(config: &RiskEvalConfig, out: Option<&OutputDir>) -> Result<Vec<RiskEvalRow>> {
    let instance = make_synthetic(&config.instance)?;
    let points: Vec<XiBar> = config.xibars.iter().map(|x| XiBar::new(x.clone())).collect();
    let mc = monte_carlo_batch(&instance, config.lambda, &points, config.trials, config.seed)?;
    let mut rows = Vec::new();
    for (p, m) in points.iter().zip(mc) {
        let closed = excess_risk_closed(&instance, config.lambda, p)?.excess_risk;
        let se = m.standard_error.unwrap_or(0.0);
        rows.push(RiskEvalRow {
            xibar: p.xibar.clone(),
            closed_form: closed,
            monte_carlo: m.excess_risk,
            standard_error: se,
            z_score: if se > 0.0 { (m.excess_risk - closed) / se } else { 0.0 },
        });
    }
    if let Some(out) = out {
        let table: Vec<Vec<String>> = rows
            .iter()
            .map(|r| {
                vec![
                    join_f64(&r.xibar),
                    format_f64(r.closed_form),
                    format_f64(r.monte_carlo),
                    format_f64(r.standard_error),
                    format_f64(r.z_score),
                ]
            })
            .collect();
        out.write_csv(
            "risk_eval.csv",
            &["xibar", "closed_form", "monte_carlo", "standard_error", "z_score"],
            &table,
        )?;
        out.write_json("summary.json", &rows)?;
    }
    Ok(rows)
}

/// Renders a `(name, value)` table for terminal output.
pub fn render_pairs(pairs: &[(&str, String)]) -> String {
    let width = pairs.iter().map(|p| p.0.len()).max().unwrap_or(0);
    let mut s = String::new();
    for (k, v) in pairs {
        let _ = writeln!(s, "{k:<width$}  {v}");
    }
    s
}
