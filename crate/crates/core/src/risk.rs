//! Fixed-design excess risk `E‖θ̂ − θ*‖²_Σ̂` with `Σ̂ = XXᵀ/n`.
//!
//! In the singular basis the k-step estimator acts on direction `j` through
//! `t_j = Σ_i ξ̄_i C_j(i)` with `C_j(i) = 1 − a_j^i`, and the risk splits as
//!
//! ```text
//! bias_j     = (s_j² θ*_j / n) (1 − a_j + a_j t_j)²
//! variance_j = (γ² / n) a_j² (1 − t_j)²
//! ```
//!
//! which is a quadratic `ξ̄ᵀMξ̄ + 2ξ̄ᵀm + c` in `ξ̄`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, ensure_positive_lambda, Error, Result};
use crate::estimators::{sd_recursive_path, RidgeSystem, XiBar};
use crate::serial::{exact_dvector, exact_f64, exact_vec, row_major};
use crate::spectral::{theta_components, ProblemInstance};

/// Noise law used whenever responses are sampled.
pub const NOISE_DISTRIBUTION: &str = "gaussian";

pub const DEFAULT_MC_TRIALS: usize = 100_000;

/// Trials per independently seeded Monte-Carlo batch.
const MC_BATCH: usize = 2048;

/// Relative tolerance used when checking degenerate structure.
const DEGENERACY_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskMethod {
    ClosedForm,
    MonteCarlo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    #[serde(with = "exact_f64")]
    pub excess_risk: f64,
    #[serde(with = "exact_f64")]
    pub bias_part: f64,
    #[serde(with = "exact_f64")]
    pub variance_part: f64,
    pub method: RiskMethod,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub standard_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub trials: Option<usize>,
}

impl RiskReport {
    fn closed(bias_part: f64, variance_part: f64) -> Self {
        Self {
            excess_risk: bias_part + variance_part,
            bias_part,
            variance_part,
            method: RiskMethod::ClosedForm,
            standard_error: None,
            trials: None,
        }
    }
}

/// Excess risk as a quadratic in `ξ̄` at a fixed `λ`, split into bias and
/// variance parts, together with the per-direction factors it was built
/// from.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QuadraticRisk {
    #[serde(with = "exact_f64")]
    pub lambda: f64,
    pub k: usize,
    #[serde(with = "row_major")]
    pub m_matrix: DMatrix<f64>,
    #[serde(with = "exact_dvector")]
    pub m_vector: DVector<f64>,
    #[serde(with = "exact_f64")]
    pub c_scalar: f64,
    #[serde(with = "row_major")]
    pub bias_matrix: DMatrix<f64>,
    #[serde(with = "exact_dvector")]
    pub bias_vector: DVector<f64>,
    #[serde(with = "exact_f64")]
    pub bias_scalar: f64,
    #[serde(with = "row_major")]
    pub variance_matrix: DMatrix<f64>,
    #[serde(with = "exact_dvector")]
    pub variance_vector: DVector<f64>,
    #[serde(with = "exact_f64")]
    pub variance_scalar: f64,
    /// `ρ_j = λ / s_j²` for `j ≤ r`.
    #[serde(with = "exact_vec")]
    pub rho: Vec<f64>,
    /// `r × k`, entry `(j, i)` is `C_j(i) = 1 − (1 + ρ_j)^{−i}`.
    #[serde(with = "row_major")]
    pub c_coeffs: DMatrix<f64>,
    /// `a_j = s_j² / (λ + s_j²)`.
    #[serde(with = "exact_vec")]
    pub shrinkage: Vec<f64>,
    /// `1 − a_j = λ / (λ + s_j²)`, computed without cancellation.
    #[serde(with = "exact_vec")]
    pub shrinkage_complement: Vec<f64>,
    /// `s_j² θ*_j / n`.
    #[serde(with = "exact_vec")]
    pub signal_weights: Vec<f64>,
    /// `γ² / n`.
    #[serde(with = "exact_f64")]
    pub noise_weight: f64,
}

impl QuadraticRisk {
    pub fn rank(&self) -> usize {
        self.rho.len()
    }

    /// `t_j = Σ_i ξ̄_i C_j(i)` for every direction.
    pub fn direction_loads(&self, xibar: &[f64]) -> Result<Vec<f64>> {
        if xibar.len() != self.k {
            return Err(Error::Dimension {
                expected: self.k,
                found: xibar.len(),
                context: "xibar length",
            });
        }
        Ok((0..self.rank())
            .map(|j| (0..self.k).map(|i| xibar[i] * self.c_coeffs[(j, i)]).sum())
            .collect())
    }

    /// Risk from the per-direction factors; the preferred evaluation.
    pub fn evaluate(&self, xibar: &[f64]) -> Result<RiskReport> {
        let loads = self.direction_loads(xibar)?;
        let mut bias = 0.0;
        let mut variance = 0.0;
        for (j, t) in loads.into_iter().enumerate() {
            let a = self.shrinkage[j];
            let e = self.shrinkage_complement[j] + a * t;
            bias += self.signal_weights[j] * e * e;
            let q = a * (1.0 - t);
            variance += self.noise_weight * q * q;
        }
        Ok(RiskReport::closed(bias, variance))
    }

    /// `ξ̄ᵀMξ̄ + 2ξ̄ᵀm + c` from the expanded coefficients.
    pub fn evaluate_expanded(&self, xibar: &[f64]) -> Result<RiskReport> {
        if xibar.len() != self.k {
            return Err(Error::Dimension {
                expected: self.k,
                found: xibar.len(),
                context: "xibar length",
            });
        }
        let x = DVector::from_column_slice(xibar);
        let quad = |m: &DMatrix<f64>, v: &DVector<f64>, c: f64| x.dot(&(m * &x)) + 2.0 * x.dot(v) + c;
        Ok(RiskReport::closed(
            quad(&self.bias_matrix, &self.bias_vector, self.bias_scalar),
            quad(&self.variance_matrix, &self.variance_vector, self.variance_scalar),
        ))
    }

    /// Rows `√w_j C_jᵀ` and targets `−μ_j / √w_j` of the least-squares
    /// problem whose residual norm equals the risk up to a constant.
    pub fn least_squares_form(&self) -> (DMatrix<f64>, DVector<f64>) {
        let r = self.rank();
        let mut rows = DMatrix::zeros(r, self.k);
        let mut rhs = DVector::zeros(r);
        for j in 0..r {
            let a = self.shrinkage[j];
            let w = (self.signal_weights[j] + self.noise_weight) * a * a;
            if w <= 0.0 {
                continue;
            }
            let mu = (self.signal_weights[j] * self.shrinkage_complement[j] - self.noise_weight * a) * a;
            let sw = w.sqrt();
            for i in 0..self.k {
                rows[(j, i)] = sw * self.c_coeffs[(j, i)];
            }
            rhs[j] = -mu / sw;
        }
        (rows, rhs)
    }
}

/// Coefficients of the risk quadratic at `λ` for `k` steps.
pub fn quadratic_coefficients(instance: &ProblemInstance, lambda: f64, k: usize) -> Result<QuadraticRisk> {
    ensure_positive_lambda(lambda)?;
    let n = instance.n_samples() as f64;
    let r = instance.rank();
    let s = instance.spectrum().nonzero();
    let theta = theta_components(instance).components;
    let noise_weight = instance.gamma2() / n;

    let mut rho = Vec::with_capacity(r);
    let mut shrinkage = Vec::with_capacity(r);
    let mut complement = Vec::with_capacity(r);
    let mut signal_weights = Vec::with_capacity(r);
    let mut c_coeffs = DMatrix::zeros(r, k);
    for j in 0..r {
        let s2 = s[j] * s[j];
        let rho_j = lambda / s2;
        rho.push(rho_j);
        shrinkage.push(s2 / (lambda + s2));
        complement.push(lambda / (lambda + s2));
        signal_weights.push(s2 * theta[j] / n);
        let log_growth = rho_j.ln_1p();
        for i in 0..k {
            // 1 − (1+ρ)^{−i} without cancellation for small ρ
            c_coeffs[(j, i)] = -(-((i + 1) as f64) * log_growth).exp_m1();
        }
    }

    let mut bias_matrix = DMatrix::zeros(k, k);
    let mut variance_matrix = DMatrix::zeros(k, k);
    let mut bias_vector = DVector::zeros(k);
    let mut variance_vector = DVector::zeros(k);
    let mut bias_scalar = 0.0;
    let mut variance_scalar = 0.0;
    for j in 0..r {
        let a = shrinkage[j];
        let bw = signal_weights[j] * a * a;
        let vw = noise_weight * a * a;
        let cj = c_coeffs.row(j).transpose();
        bias_matrix.ger(bw, &cj, &cj, 1.0);
        variance_matrix.ger(vw, &cj, &cj, 1.0);
        bias_vector.axpy(signal_weights[j] * complement[j] * a, &cj, 1.0);
        variance_vector.axpy(-vw, &cj, 1.0);
        bias_scalar += signal_weights[j] * complement[j] * complement[j];
        variance_scalar += vw;
    }

    Ok(QuadraticRisk {
        lambda,
        k,
        m_matrix: &bias_matrix + &variance_matrix,
        m_vector: &bias_vector + &variance_vector,
        c_scalar: bias_scalar + variance_scalar,
        bias_matrix,
        bias_vector,
        bias_scalar,
        variance_matrix,
        variance_vector,
        variance_scalar,
        rho,
        c_coeffs,
        shrinkage,
        shrinkage_complement: complement,
        signal_weights,
        noise_weight,
    })
}

/// Closed-form risk of the k-step estimator with `k = xibar.len()`.
pub fn excess_risk_closed(instance: &ProblemInstance, lambda: f64, xibar: &XiBar) -> Result<RiskReport> {
    ensure_finite(xibar.as_slice(), "xibar")?;
    quadratic_coefficients(instance, lambda, xibar.k())?.evaluate(xibar.as_slice())
}

/// Ridge risk `(1/n) Σ_j (λ²θ*_j + γ²s_j²) s_j² / (λ + s_j²)²`.
pub fn ridge_risk(instance: &ProblemInstance, lambda: f64) -> Result<RiskReport> {
    ensure_positive_lambda(lambda)?;
    let n = instance.n_samples() as f64;
    let theta = theta_components(instance).components;
    let mut bias = 0.0;
    let mut variance = 0.0;
    for (j, &s) in instance.spectrum().nonzero().iter().enumerate() {
        let s2 = s * s;
        let denom = (lambda + s2) * (lambda + s2);
        bias += lambda * lambda * theta[j] * s2 / denom;
        variance += instance.gamma2() * s2 * s2 / denom;
    }
    Ok(RiskReport::closed(bias / n, variance / n))
}

/// `d/dλ` of the ridge risk: `(2/n) Σ_j s_j⁴ (λθ*_j − γ²) / (λ + s_j²)³`.
pub fn ridge_risk_derivative(instance: &ProblemInstance, lambda: f64) -> f64 {
    let n = instance.n_samples() as f64;
    let theta = theta_components(instance).components;
    let g2 = instance.gamma2();
    let sum: f64 = instance
        .spectrum()
        .nonzero()
        .iter()
        .enumerate()
        .map(|(j, &s)| {
            let s2 = s * s;
            s2 * s2 * (lambda * theta[j] - g2) / (lambda + s2).powi(3)
        })
        .sum();
    2.0 * sum / n
}

/// Relative residual of the stationarity condition
/// `λ = γ² Σ s⁴/(λ+s²)³ / Σ θ*_j s⁴/(λ+s²)³`; `None` when the signal sum
/// vanishes.
pub fn ridge_fixed_point_residual(instance: &ProblemInstance, lambda: f64) -> Option<f64> {
    let theta = theta_components(instance).components;
    let mut noise_sum = 0.0;
    let mut signal_sum = 0.0;
    for (j, &s) in instance.spectrum().nonzero().iter().enumerate() {
        let s2 = s * s;
        let w = s2 * s2 / (lambda + s2).powi(3);
        noise_sum += w;
        signal_sum += theta[j] * w;
    }
    if signal_sum <= 0.0 {
        return None;
    }
    let rhs = instance.gamma2() * noise_sum / signal_sum;
    Some((lambda - rhs).abs() / lambda)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaRange {
    pub lo: f64,
    pub hi: f64,
}

impl Default for LambdaRange {
    fn default() -> Self {
        Self { lo: 1e-6, hi: 1e6 }
    }
}

impl LambdaRange {
    fn validate(&self) -> Result<()> {
        if !(self.lo > 0.0 && self.hi > self.lo && self.hi.is_finite()) {
            return Err(Error::Input(format!(
                "lambda range must satisfy 0 < lo < hi < inf, got [{}, {}]",
                self.lo, self.hi
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaStar {
    #[serde(with = "exact_f64")]
    pub lambda: f64,
    #[serde(with = "exact_f64")]
    pub risk: f64,
    /// Relative stationarity residual; absent when the signal is zero.
    pub fixed_point_residual: Option<f64>,
    /// The minimum over the range sits on an endpoint.
    pub at_boundary: bool,
}

const BRACKET_POINTS_PER_DECADE: usize = 20;

/// Global minimizer of the ridge risk over a range: log-grid bracketing,
/// golden-section refinement, then a bisection polish on the sign of the
/// derivative.
pub fn ridge_lambda_star(instance: &ProblemInstance, range: LambdaRange) -> Result<LambdaStar> {
    range.validate()?;
    let (tlo, thi) = (range.lo.ln(), range.hi.ln());
    let decades = (range.hi / range.lo).log10();
    let points = ((decades * BRACKET_POINTS_PER_DECADE as f64).ceil() as usize).max(2) + 1;
    let grid: Vec<f64> = (0..points)
        .map(|i| tlo + (thi - tlo) * i as f64 / (points - 1) as f64)
        .collect();
    let risk_at = |t: f64| ridge_risk(instance, t.exp()).map(|r| r.excess_risk);
    let mut best = 0;
    let mut best_risk = f64::INFINITY;
    for (i, &t) in grid.iter().enumerate() {
        let r = risk_at(t)?;
        if r < best_risk {
            best_risk = r;
            best = i;
        }
    }
    if best == 0 || best == points - 1 {
        let lambda = grid[best].exp();
        return Ok(LambdaStar {
            lambda,
            risk: best_risk,
            fixed_point_residual: ridge_fixed_point_residual(instance, lambda),
            at_boundary: true,
        });
    }

    let (mut a, mut b) = (grid[best - 1], grid[best + 1]);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = risk_at(c)?;
    let mut fd = risk_at(d)?;
    for _ in 0..200 {
        if (b - a).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = risk_at(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = risk_at(d)?;
        }
    }
    let mut t_star = 0.5 * (a + b);

    // the risk is flat at its minimum, so locate the derivative's sign
    // change for full precision in λ
    let (mut lo, mut hi) = (grid[best - 1], grid[best + 1]);
    let deriv = |t: f64| ridge_risk_derivative(instance, t.exp());
    if deriv(lo) < 0.0 && deriv(hi) > 0.0 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if deriv(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let polished = 0.5 * (lo + hi);
        if risk_at(polished)? <= risk_at(t_star)? * (1.0 + 1e-14) {
            t_star = polished;
        }
    }
    let lambda = t_star.exp();
    Ok(LambdaStar {
        lambda,
        risk: ridge_risk(instance, lambda)?.excess_risk,
        fixed_point_residual: ridge_fixed_point_residual(instance, lambda),
        at_boundary: false,
    })
}

/// Best risk over estimators that rescale each singular direction:
/// `(1/n) Σ_{j≤r} γ² θ*_j s_j² / (θ*_j s_j² + γ²)`.
pub fn lower_bound(instance: &ProblemInstance) -> f64 {
    let n = instance.n_samples() as f64;
    let g2 = instance.gamma2();
    let theta = theta_components(instance).components;
    instance
        .spectrum()
        .nonzero()
        .iter()
        .enumerate()
        .map(|(j, &s)| {
            let signal = theta[j] * s * s;
            let denom = signal + g2;
            if denom > 0.0 {
                g2 * signal / denom
            } else {
                0.0
            }
        })
        .sum::<f64>()
        / n
}

/// Optimal per-direction scaling `θ*_j / (θ*_j s_j² + γ²)` for `j ≤ r` and
/// zero beyond the rank.
pub fn optimal_preconditioner(instance: &ProblemInstance) -> Vec<f64> {
    let theta = theta_components(instance).components;
    let g2 = instance.gamma2();
    let s = instance.spectrum().nonzero();
    (0..instance.dim())
        .map(|j| {
            if j >= s.len() {
                return 0.0;
            }
            let denom = theta[j] * s[j] * s[j] + g2;
            if denom > 0.0 {
                theta[j] / denom
            } else {
                0.0
            }
        })
        .collect()
}

/// Risk of `θ̂ = U diag(ts) Uᵀ XY`, i.e. the estimator whose coefficient on
/// `u_j` is `ts_j s_j ⟨Y, v_j⟩`.
pub fn diagonal_preconditioner_risk(instance: &ProblemInstance, ts: &[f64]) -> Result<RiskReport> {
    if ts.len() != instance.dim() {
        return Err(Error::Dimension {
            expected: instance.dim(),
            found: ts.len(),
            context: "diagonal preconditioner length",
        });
    }
    let n = instance.n_samples() as f64;
    let theta = theta_components(instance).components;
    let mut bias = 0.0;
    let mut variance = 0.0;
    for (j, &s) in instance.spectrum().nonzero().iter().enumerate() {
        let s2 = s * s;
        let e = ts[j] * s2 - 1.0;
        bias += s2 * theta[j] * e * e;
        variance += instance.gamma2() * ts[j] * ts[j] * s2 * s2;
    }
    Ok(RiskReport::closed(bias / n, variance / n))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegenerateCase {
    /// All nonzero singular values coincide.
    EqualSingulars,
    /// All components `θ*_j`, `j ≤ r`, coincide.
    EqualComponents,
}

fn all_close(values: &[f64]) -> bool {
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    values
        .iter()
        .all(|v| (v - values[0]).abs() <= DEGENERACY_TOLERANCE * scale.max(f64::MIN_POSITIVE))
}

fn check_degenerate(instance: &ProblemInstance, case: DegenerateCase) -> Result<Vec<f64>> {
    let r = instance.rank();
    if r == 0 {
        return Err(Error::Input("instance has rank zero".into()));
    }
    let theta = theta_components(instance).components;
    let ok = match case {
        DegenerateCase::EqualSingulars => all_close(instance.spectrum().nonzero()),
        DegenerateCase::EqualComponents => all_close(&theta[..r]),
    };
    if !ok {
        return Err(Error::Input(format!("instance does not satisfy {case:?}")));
    }
    Ok(theta)
}

/// Optimal risk in a degenerate case, which ridge attains and extra
/// distillation steps cannot improve on.
///
/// Equal singular values `s`: `(rγ²/n) / (1 + rγ²/(s²Q))` with
/// `Q = Σ_{j≤r} θ*_j`. Equal components `z`: `(γ²/n) Σ_j 1/(1 + γ²/(z s_j²))`.
pub fn degenerate_case_bounds(instance: &ProblemInstance, case: DegenerateCase) -> Result<f64> {
    let theta = check_degenerate(instance, case)?;
    let n = instance.n_samples() as f64;
    let g2 = instance.gamma2();
    let s = instance.spectrum().nonzero();
    let r = s.len();
    match case {
        DegenerateCase::EqualSingulars => {
            let q: f64 = theta[..r].iter().sum();
            let s2 = s[0] * s[0];
            let signal = q * s2;
            if signal + r as f64 * g2 == 0.0 {
                return Ok(0.0);
            }
            Ok((r as f64 * g2 / n) * signal / (signal + r as f64 * g2))
        }
        DegenerateCase::EqualComponents => {
            let z = theta[0];
            Ok(s.iter()
                .map(|&sj| {
                    let signal = z * sj * sj;
                    if signal + g2 > 0.0 {
                        g2 * signal / (signal + g2)
                    } else {
                        0.0
                    }
                })
                .sum::<f64>()
                / n)
        }
    }
}

/// Closed-form optimal ridge penalty in a degenerate case: `rγ²/Q` for
/// equal singular values, `γ²/z` for equal components. `None` when the
/// optimum is at `λ → ∞` (no signal) or `λ → 0` (no noise).
pub fn degenerate_lambda_star(instance: &ProblemInstance, case: DegenerateCase) -> Result<Option<f64>> {
    let theta = check_degenerate(instance, case)?;
    let r = instance.rank();
    let g2 = instance.gamma2();
    let signal = match case {
        DegenerateCase::EqualSingulars => theta[..r].iter().sum::<f64>() / r as f64,
        DegenerateCase::EqualComponents => theta[0],
    };
    if signal <= 0.0 || g2 == 0.0 {
        return Ok(None);
    }
    Ok(Some(g2 / signal))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DominanceCheck {
    /// Distillation strictly beats the best ridge.
    pub dominates: bool,
    pub sum: f64,
    /// The same sum with both differences replaced by sums; `|sum|` within
    /// `1e-12` of it counts as zero.
    pub magnitude: f64,
    pub lambda_star: f64,
}

/// Sufficient condition for one-step distillation to strictly beat the best
/// ridge:
///
/// ```text
/// Σ_{k ≤ r} Σ_{j < k} s_j⁴ s_k⁴ (s_j² − s_k²)(θ*_k − θ*_j)
///                     / ((λ* + s_j²)⁴ (λ* + s_k²)⁴)  <  0
/// ```
///
/// evaluated at the optimal ridge penalty λ*.
pub fn strict_dominance_condition(instance: &ProblemInstance) -> Result<DominanceCheck> {
    let lambda_star = ridge_lambda_star(instance, LambdaRange::default())?.lambda;
    let theta = theta_components(instance).components;
    let s = instance.spectrum().nonzero();
    let mut sum = 0.0;
    let mut magnitude = 0.0;
    for k in 0..s.len() {
        for j in 0..k {
            let (sj2, sk2) = (s[j] * s[j], s[k] * s[k]);
            let num = sj2 * sj2 * sk2 * sk2 * (sj2 - sk2) * (theta[k] - theta[j]);
            let den = (lambda_star + sj2).powi(4) * (lambda_star + sk2).powi(4);
            sum += num / den;
            magnitude += sj2 * sj2 * sk2 * sk2 * (sj2 + sk2) * (theta[k] + theta[j]) / den;
        }
    }
    Ok(DominanceCheck {
        // rounding in θ*_j can leave a sign on an exactly-zero sum
        dominates: sum < -1e-12 * magnitude,
        sum,
        magnitude,
        lambda_star,
    })
}

/// Welford accumulator; partial results merge in a fixed order.
#[derive(Clone, Copy, Debug, Default)]
struct Moments {
    count: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.count += 1.0;
        let delta = x - self.mean;
        self.mean += delta / self.count;
        self.m2 += delta * (x - self.mean);
    }

    fn merge(&mut self, other: &Moments) {
        if other.count == 0.0 {
            return;
        }
        if self.count == 0.0 {
            *self = *other;
            return;
        }
        let total = self.count + other.count;
        let delta = other.mean - self.mean;
        self.mean += delta * other.count / total;
        self.m2 += other.m2 + delta * delta * self.count * other.count / total;
        self.count = total;
    }

    fn standard_error(&self) -> f64 {
        if self.count < 2.0 {
            return 0.0;
        }
        (self.m2 / (self.count - 1.0) / self.count).sqrt()
    }
}

/// Runs `trials` noise draws split into fixed-size batches. Batch `b` draws
/// from the master seed's ChaCha stream `b`, so the result does not depend
/// on the thread count.
fn monte_carlo_moments<F>(instance: &ProblemInstance, trials: usize, seed: u64, points: usize, eval: F) -> Vec<Moments>
where
    F: Fn(&DVector<f64>, &mut [f64]) + Sync,
{
    let batches = trials.div_ceil(MC_BATCH);
    let partials: Vec<Vec<Moments>> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let size = MC_BATCH.min(trials - b * MC_BATCH);
            let mut acc = vec![Moments::default(); points];
            let mut losses = vec![0.0; points];
            for _ in 0..size {
                let y = instance.sample_response(&mut rng);
                eval(&y, &mut losses);
                for (m, &l) in acc.iter_mut().zip(&losses) {
                    m.push(l);
                }
            }
            acc
        })
        .collect();
    let mut total = vec![Moments::default(); points];
    for part in &partials {
        for (t, p) in total.iter_mut().zip(part) {
            t.merge(p);
        }
    }
    total
}

fn sigma_hat(instance: &ProblemInstance) -> DMatrix<f64> {
    let x = instance.x_matrix();
    (x * x.transpose()) / instance.n_samples() as f64
}

fn sigma_loss(sigma: &DMatrix<f64>, diff: &DVector<f64>) -> f64 {
    diff.dot(&(sigma * diff))
}

fn mc_report(moments: &Moments, bias: f64, trials: usize) -> RiskReport {
    RiskReport {
        excess_risk: moments.mean,
        bias_part: bias,
        variance_part: moments.mean - bias,
        method: RiskMethod::MonteCarlo,
        standard_error: Some(moments.standard_error()),
        trials: Some(trials),
    }
}

/// Monte-Carlo estimate of the risk of the recursively fitted k-step
/// estimator. The bias part is the exact loss of the noiseless fit; the
/// variance part is the remainder of the sample mean.
pub fn excess_risk_monte_carlo(
    instance: &ProblemInstance,
    lambda: f64,
    xi: &[f64],
    trials: usize,
    seed: u64,
) -> Result<RiskReport> {
    if trials == 0 {
        return Err(Error::Input("trials must be at least 1".into()));
    }
    ensure_finite(xi, "xi")?;
    let system = RidgeSystem::new(instance.x_matrix(), lambda)?;
    let sigma = sigma_hat(instance);
    let theta_star = instance.theta_star();
    let loss_of = |y: &DVector<f64>| -> f64 {
        let path = sd_recursive_path(&system, y, xi).expect("validated inputs");
        sigma_loss(&sigma, &(path.last().expect("nonempty") - theta_star))
    };
    let bias = loss_of(&instance.noiseless_response());
    let moments = monte_carlo_moments(instance, trials, seed, 1, |y, out| out[0] = loss_of(y));
    Ok(mc_report(&moments[0], bias, trials))
}

/// Monte-Carlo risk at many `ξ̄` points sharing the same noise draws.
///
/// Each draw builds `H^i θ_0` (`H = Ω⁻¹XXᵀ`, `θ_0` the ridge fit) once and
/// evaluates every point as `(1 − Σξ̄)θ_0 + Σ_i ξ̄_i H^i θ_0` in the
/// ambient space.
pub fn monte_carlo_batch(
    instance: &ProblemInstance,
    lambda: f64,
    points: &[XiBar],
    trials: usize,
    seed: u64,
) -> Result<Vec<RiskReport>> {
    if trials == 0 {
        return Err(Error::Input("trials must be at least 1".into()));
    }
    for p in points {
        ensure_finite(p.as_slice(), "xibar")?;
    }
    let system = RidgeSystem::new(instance.x_matrix(), lambda)?;
    let sigma = sigma_hat(instance);
    let theta_star = instance.theta_star();
    let kmax = points.iter().map(XiBar::k).max().unwrap_or(0);

    let eval = |y: &DVector<f64>, out: &mut [f64]| {
        let mut ladder = Vec::with_capacity(kmax + 1);
        ladder.push(system.solve_targets(y));
        for i in 0..kmax {
            let next = system.smooth(&ladder[i]);
            ladder.push(next);
        }
        for (slot, p) in out.iter_mut().zip(points) {
            let w = p.as_slice();
            let mut theta = ladder[0].scale(1.0 - w.iter().sum::<f64>());
            for (i, wi) in w.iter().enumerate() {
                theta.axpy(*wi, &ladder[i + 1], 1.0);
            }
            *slot = sigma_loss(&sigma, &(theta - theta_star));
        }
    };

    let mut bias = vec![0.0; points.len()];
    eval(&instance.noiseless_response(), &mut bias);
    let moments = monte_carlo_moments(instance, trials, seed, points.len(), eval);
    Ok(moments
        .iter()
        .zip(bias)
        .map(|(m, b)| mc_report(m, b, trials))
        .collect())
}
