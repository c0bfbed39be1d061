//! Ridge and k-step self-distillation estimators.
//!
//! Two evaluation paths are provided. The recursive path replays the
//! distillation loop: each student is fit by ridge on a mix of the labels and
//! the previous model's predictions,
//!
//! ```text
//! θ_i = (1 − ξ_i) Ω⁻¹XY + ξ_i Ω⁻¹XXᵀ θ_{i−1},    Ω = XXᵀ + λI.
//! ```
//!
//! The preconditioner path works in the singular basis of `X`, where the
//! k-step estimator is the ridge solution rescaled per direction by
//! `1 − Σ_i ξ̄_i (1 − a_j^i)` with `a_j = s_j² / (λ + s_j²)`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, ensure_positive_lambda, Error, Result};
use crate::serial::{exact_dvector, exact_f64, exact_vec};
use crate::spectral::Spectrum;

/// Default cap on the number of distillation steps.
pub const DEFAULT_MAX_STEPS: usize = 64;

/// Ridge penalty plus the imitation vector `ξ`; an empty `xi` is plain ridge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdParams {
    #[serde(with = "exact_f64")]
    pub lambda: f64,
    #[serde(with = "exact_vec")]
    pub xi: Vec<f64>,
}

impl SdParams {
    pub fn new(lambda: f64, xi: Vec<f64>) -> Result<Self> {
        ensure_positive_lambda(lambda)?;
        ensure_finite(&xi, "xi")?;
        Ok(Self { lambda, xi })
    }

    pub fn k(&self) -> usize {
        self.xi.len()
    }

    pub fn xibar(&self) -> XiBar {
        xi_to_xibar(&self.xi)
    }
}

/// Reparametrized imitation vector under which the estimator is linear in
/// each coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct XiBar {
    #[serde(with = "exact_vec")]
    pub xibar: Vec<f64>,
}

impl XiBar {
    pub fn new(xibar: Vec<f64>) -> Self {
        Self { xibar }
    }

    pub fn zeros(k: usize) -> Self {
        Self { xibar: vec![0.0; k] }
    }

    pub fn k(&self) -> usize {
        self.xibar.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.xibar
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    Ridge,
    Recursive,
    Preconditioner,
    FullTwoStep,
    /// `(1 − Σξ̄_i)θ_0 + Σ ξ̄_i H^i θ_0`, computed in the ambient space.
    Polynomial,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(with = "exact_f64")]
    pub lambda: f64,
    pub k: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub xi: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub xibar: Option<Vec<f64>>,
    pub method: FitMethod,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorWeights {
    #[serde(with = "exact_dvector")]
    pub theta_hat: DVector<f64>,
    pub provenance: Provenance,
}

impl EstimatorWeights {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.provenance.seed = Some(seed);
        self
    }

    /// Predictions `Xᵀθ̂` for covariates stored as columns.
    pub fn predict_columns(&self, x_matrix: &DMatrix<f64>) -> DVector<f64> {
        x_matrix.tr_mul(&self.theta_hat)
    }
}

/// Factorized `Ω = XXᵀ + λI` for repeated ridge-type solves against one
/// design.
pub struct RidgeSystem<'a> {
    x_matrix: &'a DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    lambda: f64,
}

impl<'a> RidgeSystem<'a> {
    pub fn new(x_matrix: &'a DMatrix<f64>, lambda: f64) -> Result<Self> {
        ensure_positive_lambda(lambda)?;
        ensure_finite(x_matrix.as_slice(), "data matrix")?;
        let mut omega = x_matrix * x_matrix.transpose();
        for i in 0..omega.nrows() {
            omega[(i, i)] += lambda;
        }
        let chol = Cholesky::new(omega).ok_or_else(|| {
            Error::Input(format!("XXᵀ + λI is not numerically positive definite at λ = {lambda}"))
        })?;
        Ok(Self {
            x_matrix,
            chol,
            lambda,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn n_samples(&self) -> usize {
        self.x_matrix.ncols()
    }

    /// Ridge fit to arbitrary targets: `Ω⁻¹ X t`.
    pub fn solve_targets(&self, targets: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(&(self.x_matrix * targets))
    }

    /// `Ω⁻¹XXᵀ θ`: refits ridge to the predictions of `θ`.
    pub fn smooth(&self, theta: &DVector<f64>) -> DVector<f64> {
        self.solve_targets(&self.x_matrix.tr_mul(theta))
    }

    fn check_labels(&self, y: &DVector<f64>) -> Result<()> {
        if y.len() != self.n_samples() {
            return Err(Error::Dimension {
                expected: self.n_samples(),
                found: y.len(),
                context: "response length",
            });
        }
        ensure_finite(y.as_slice(), "response")
    }
}

fn check_steps(k: usize, cap: usize) -> Result<()> {
    if k > cap {
        return Err(Error::TooManySteps { k, cap });
    }
    Ok(())
}

/// `θ̂ = (XXᵀ + λI)⁻¹ X Y`.
pub fn fit_ridge(x_matrix: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<EstimatorWeights> {
    let system = RidgeSystem::new(x_matrix, lambda)?;
    system.check_labels(y)?;
    Ok(EstimatorWeights {
        theta_hat: system.solve_targets(y),
        provenance: Provenance {
            lambda,
            k: 0,
            xi: None,
            xibar: None,
            method: FitMethod::Ridge,
            seed: None,
        },
    })
}

/// Every intermediate model `θ_0, …, θ_k` of the distillation chain.
///
/// Only the last one is tuned when `ξ` is chosen for a k-step target; the
/// intermediate models carry no optimality guarantee.
pub fn sd_recursive_path(system: &RidgeSystem<'_>, y: &DVector<f64>, xi: &[f64]) -> Result<Vec<DVector<f64>>> {
    system.check_labels(y)?;
    ensure_finite(xi, "xi")?;
    let ridge = system.solve_targets(y);
    let mut path = Vec::with_capacity(xi.len() + 1);
    path.push(ridge.clone());
    for &xi_i in xi {
        let prev = path.last().expect("path starts with ridge");
        let next = ridge.scale(1.0 - xi_i) + system.smooth(prev).scale(xi_i);
        path.push(next);
    }
    Ok(path)
}

pub fn fit_sd_recursive(
    x_matrix: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    xi: &[f64],
) -> Result<EstimatorWeights> {
    fit_sd_recursive_capped(x_matrix, y, lambda, xi, DEFAULT_MAX_STEPS)
}

pub fn fit_sd_recursive_capped(
    x_matrix: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    xi: &[f64],
    max_steps: usize,
) -> Result<EstimatorWeights> {
    check_steps(xi.len(), max_steps)?;
    let system = RidgeSystem::new(x_matrix, lambda)?;
    let mut path = sd_recursive_path(&system, y, xi)?;
    Ok(EstimatorWeights {
        theta_hat: path.pop().expect("nonempty path"),
        provenance: Provenance {
            lambda,
            k: xi.len(),
            xi: Some(xi.to_vec()),
            xibar: Some(xi_to_xibar(xi).xibar),
            method: FitMethod::Recursive,
            seed: None,
        },
    })
}

/// The k-step estimator written directly in `ξ̄`:
/// `(1 − Σ ξ̄_i) θ_0 + Σ ξ̄_i H^i θ_0` with `H = Ω⁻¹XXᵀ`. Defined for every
/// `ξ̄`, including points where the map back to `ξ` is degenerate.
pub fn sd_polynomial(system: &RidgeSystem<'_>, y: &DVector<f64>, xibar: &XiBar) -> Result<DVector<f64>> {
    system.check_labels(y)?;
    ensure_finite(xibar.as_slice(), "xibar")?;
    let ridge = system.solve_targets(y);
    let mut out = ridge.scale(1.0 - xibar.as_slice().iter().sum::<f64>());
    let mut power = ridge;
    for &w in xibar.as_slice() {
        power = system.smooth(&power);
        out.axpy(w, &power, 1.0);
    }
    Ok(out)
}

pub fn fit_sd_polynomial(
    x_matrix: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    xibar: &XiBar,
) -> Result<EstimatorWeights> {
    check_steps(xibar.k(), DEFAULT_MAX_STEPS)?;
    let system = RidgeSystem::new(x_matrix, lambda)?;
    Ok(EstimatorWeights {
        theta_hat: sd_polynomial(&system, y, xibar)?,
        provenance: Provenance {
            lambda,
            k: xibar.k(),
            xi: xibar_to_xi(xibar).ok(),
            xibar: Some(xibar.as_slice().to_vec()),
            method: FitMethod::Polynomial,
            seed: None,
        },
    })
}

/// Per-direction shrinkage `a_j = s_j² / (λ + s_j²)` of `Ω⁻¹XXᵀ`; each lies
/// in `[0, 1)` for `λ > 0`.
pub fn shrinkage_factors(singular_values: &[f64], lambda: f64) -> Vec<f64> {
    singular_values
        .iter()
        .map(|&s| {
            let s2 = s * s;
            s2 / (lambda + s2)
        })
        .collect()
}

/// Preconditioner eigenvalues `p_j = 1 − Σ_i ξ̄_i (1 − a_j^i)`.
pub fn preconditioner_coefficients(singular_values: &[f64], lambda: f64, xibar: &[f64]) -> Vec<f64> {
    shrinkage_factors(singular_values, lambda)
        .into_iter()
        .map(|a| {
            let mut p = 1.0;
            let mut power = 1.0;
            for &w in xibar {
                power *= a;
                p -= w * (1.0 - power);
            }
            p
        })
        .collect()
}

/// k-step estimator assembled in the singular basis of `X`.
pub fn fit_sd_preconditioner(
    spectrum: &Spectrum,
    y: &DVector<f64>,
    lambda: f64,
    xibar: &XiBar,
) -> Result<EstimatorWeights> {
    ensure_positive_lambda(lambda)?;
    ensure_finite(xibar.as_slice(), "xibar")?;
    ensure_finite(y.as_slice(), "response")?;
    check_steps(xibar.k(), DEFAULT_MAX_STEPS)?;
    if y.len() != spectrum.n_samples() {
        return Err(Error::Dimension {
            expected: spectrum.n_samples(),
            found: y.len(),
            context: "response length",
        });
    }
    let s = &spectrum.singular_values;
    let p = preconditioner_coefficients(s, lambda, xibar.as_slice());
    let proj = spectrum.right_vectors.tr_mul(y);
    let mut coeffs = DVector::zeros(spectrum.dim());
    for j in 0..s.len() {
        coeffs[j] = p[j] * s[j] / (lambda + s[j] * s[j]) * proj[j];
    }
    let xi = xibar_to_xi(xibar).ok();
    Ok(EstimatorWeights {
        theta_hat: &spectrum.left_vectors * coeffs,
        provenance: Provenance {
            lambda,
            k: xibar.k(),
            xi,
            xibar: Some(xibar.xibar.clone()),
            method: FitMethod::Preconditioner,
            seed: None,
        },
    })
}

/// `ξ̄_i = (1 − ξ_{k−i}) ∏_{l=k−i+1}^{k} ξ_l` (1-based, `ξ_0 = 0`).
pub fn xi_to_xibar(xi: &[f64]) -> XiBar {
    let k = xi.len();
    let mut xibar = vec![0.0; k];
    let mut tail_product = 1.0;
    for i in 1..=k {
        tail_product *= xi[k - i];
        let before = if i == k { 0.0 } else { xi[k - i - 1] };
        xibar[i - 1] = (1.0 - before) * tail_product;
    }
    XiBar { xibar }
}

/// Inverse of [`xi_to_xibar`].
///
/// With tail sums `T_m = Σ_{i ≥ m} ξ̄_i`, the product of the last `m`
/// entries of `ξ` equals `T_m`, so `ξ_k = T_1` and
/// `ξ_{k−m+1} = T_m / T_{m−1}`.
pub fn xibar_to_xi(xibar: &XiBar) -> Result<Vec<f64>> {
    let k = xibar.k();
    let mut tails = vec![0.0; k + 1];
    for m in (1..=k).rev() {
        tails[m - 1] = tails[m] + xibar.xibar[m - 1];
    }
    let mut xi = vec![0.0; k];
    if k == 0 {
        return Ok(xi);
    }
    xi[k - 1] = tails[0];
    for m in 2..=k {
        let divisor = tails[m - 2];
        if divisor == 0.0 {
            return Err(Error::DegenerateParametrization { index: m - 1 });
        }
        xi[k - m] = tails[m - 1] / divisor;
    }
    if xi.iter().any(|v| !v.is_finite()) {
        let index = (1..k).find(|&m| tails[m - 1].abs() < f64::MIN_POSITIVE).unwrap_or(1);
        return Err(Error::DegenerateParametrization { index });
    }
    Ok(xi)
}

/// Coefficients `(ξ̃_1, ξ̃_2a, ξ̃_2b)` of the fully connected two-step chain,
/// where the last student also imitates the ridge teacher directly, mapped
/// to the equivalent repeated-chain `ξ̄`.
pub fn full_two_step_equivalent(xi_tilde: [f64; 3]) -> XiBar {
    let [t1, t2a, t2b] = xi_tilde;
    XiBar {
        xibar: vec![t2a + t2b - t1 * t2b, t1 * t2b],
    }
}

/// Fits the fully connected two-step chain directly:
/// `θ̃_2 = Ω⁻¹X(ξ̃_2a Xᵀθ_0 + ξ̃_2b Xᵀθ_1 + (1 − ξ̃_2a − ξ̃_2b) Y)`.
pub fn fit_full_two_step(
    x_matrix: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    xi_tilde: [f64; 3],
) -> Result<EstimatorWeights> {
    ensure_finite(&xi_tilde, "xi_tilde")?;
    let system = RidgeSystem::new(x_matrix, lambda)?;
    system.check_labels(y)?;
    let [t1, t2a, t2b] = xi_tilde;
    let theta0 = system.solve_targets(y);
    let pred0 = x_matrix.tr_mul(&theta0);
    let theta1 = system.solve_targets(&(pred0.scale(t1) + y.scale(1.0 - t1)));
    let pred1 = x_matrix.tr_mul(&theta1);
    let mix = pred0.scale(t2a) + pred1.scale(t2b) + y.scale(1.0 - t2a - t2b);
    Ok(EstimatorWeights {
        theta_hat: system.solve_targets(&mix),
        provenance: Provenance {
            lambda,
            k: 2,
            xi: Some(xi_tilde.to_vec()),
            xibar: Some(full_two_step_equivalent(xi_tilde).xibar),
            method: FitMethod::FullTwoStep,
            seed: None,
        },
    })
}
