//! Validation-driven choice of `λ` and `ξ` on real data.
//!
//! For a fixed train split the estimator is linear in `ξ̄`, so validation
//! MSE is an exact quadratic in `ξ̄`. A handful of probe fits pins it down,
//! and its minimizer replaces a k-dimensional grid search.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{mse_theta, Split};
use crate::error::{Error, Result};
use crate::estimators::{
    sd_polynomial, sd_recursive_path, xi_to_xibar, xibar_to_xi, EstimatorWeights, FitMethod, Provenance,
    RidgeSystem, XiBar,
};
use crate::serial::{exact_dvector, exact_f64, row_major};
use crate::solver::{least_squares_min_norm, minimize_quadratic};

/// Monomial designs whose pivoted-QR diagonal ratio falls below this are
/// rejected as singular.
pub const SINGULAR_DESIGN_TOLERANCE: f64 = 1e-12;

/// Number of coefficients of a quadratic in `k` variables,
/// `(k + 1)(k + 2) / 2 = k(k + 3)/2 + 1`.
pub fn monomial_count(k: usize) -> usize {
    (k + 1) * (k + 2) / 2
}

/// Row `[1, 2x_i, x_i², 2x_i x_l (i < l)]` matching
/// `q(x) = xᵀAx + 2bᵀx + c` with unknowns `(c, b, A upper triangle)`.
fn monomial_row(x: &[f64]) -> Vec<f64> {
    let k = x.len();
    let mut row = Vec::with_capacity(monomial_count(k));
    row.push(1.0);
    row.extend(x.iter().map(|v| 2.0 * v));
    for i in 0..k {
        for l in i..k {
            row.push(if i == l { x[i] * x[i] } else { 2.0 * x[i] * x[l] });
        }
    }
    row
}

fn design_matrix(points: &[Vec<f64>]) -> DMatrix<f64> {
    let rows: Vec<Vec<f64>> = points.iter().map(|p| monomial_row(p)).collect();
    let cols = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeDesign {
    pub k: usize,
    /// Probe imitation vectors, in evaluation order.
    pub probes: Vec<Vec<f64>>,
    /// The same probes in `ξ̄` coordinates.
    pub xibars: Vec<Vec<f64>>,
}

impl ProbeDesign {
    pub fn count(&self) -> usize {
        self.probes.len()
    }

    pub fn design_matrix(&self) -> DMatrix<f64> {
        design_matrix(&self.xibars)
    }

    pub fn condition_number(&self) -> f64 {
        crate::solver::condition_number(&self.design_matrix())
    }
}

/// Probes at the `ξ̄` points `0`, `±e_i` and `(e_i + e_l)/2` (`i < l`),
/// each realized by a `ξ` made of 0, ±1 and 0.5 entries.
///
/// For `k = 1` this is `ξ ∈ {0, 1, −1}`; for `k = 2` it gives, in
/// `(ξ_1, ξ_2)`, `(0,0), (0,1), (0,−1), (1,1), (1,−1), (0.5,1)`. `k = 0`
/// yields the single empty probe (plain ridge).
pub fn probe_design(k: usize) -> ProbeDesign {
    let mut probes = vec![vec![0.0; k]];
    // ξ̄ = ±e_i: the last i entries of ξ carry the product, the one before
    // them is zero so that no earlier ξ̄ picks up weight
    for i in 1..=k {
        let mut plus = vec![0.0; k];
        plus[k - i..].fill(1.0);
        probes.push(plus);
        let mut minus = vec![0.0; k];
        minus[k - i..].fill(1.0);
        minus[k - 1] = -1.0;
        probes.push(minus);
    }
    // ξ̄ = (e_i + e_l)/2: tail product 1 for the last i entries, then a
    // factor 0.5 that splits the mass between positions i and l
    for i in 1..=k {
        for l in i + 1..=k {
            let mut xi = vec![0.0; k];
            xi[k - i..].fill(1.0);
            xi[k - i - 1] = 0.5;
            xi[k - l..k - i - 1].fill(1.0);
            probes.push(xi);
        }
    }
    let xibars = probes.iter().map(|xi| xi_to_xibar(xi).xibar).collect();
    ProbeDesign { k, probes, xibars }
}

/// `q(x) = xᵀAx + 2bᵀx + c` over `ξ̄`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedQuadratic {
    #[serde(with = "row_major")]
    pub a_matrix: DMatrix<f64>,
    #[serde(with = "exact_dvector")]
    pub b_vector: DVector<f64>,
    #[serde(with = "exact_f64")]
    pub c: f64,
}

impl FittedQuadratic {
    pub fn k(&self) -> usize {
        self.b_vector.len()
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        let x = DVector::from_column_slice(x);
        (self.a_matrix.clone() * &x).dot(&x) + 2.0 * self.b_vector.dot(&x) + self.c
    }

    /// Smallest eigenvalue of `A` is at least `−1e-12` times the largest.
    pub fn is_convex(&self) -> bool {
        if self.k() == 0 {
            return true;
        }
        let eig = self.a_matrix.clone().symmetric_eigen().eigenvalues;
        let top = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        eig.min() >= -1e-12 * top
    }

    /// Stationary point `−A⁺b`, the minimizer when [`Self::is_convex`].
    pub fn stationary_point(&self) -> DVector<f64> {
        minimize_quadratic(&self.a_matrix, &self.b_vector)
    }

    /// Coefficient of determination of the fit on `(ξ̄, value)` pairs.
    pub fn r_squared(&self, evals: &[(Vec<f64>, f64)]) -> f64 {
        let mean = evals.iter().map(|e| e.1).sum::<f64>() / evals.len() as f64;
        let total: f64 = evals.iter().map(|e| (e.1 - mean).powi(2)).sum();
        let resid: f64 = evals.iter().map(|(x, v)| (v - self.evaluate(x)).powi(2)).sum();
        if total == 0.0 {
            let scale: f64 = evals.iter().map(|e| e.1 * e.1).sum();
            if resid <= 1e-20 * scale {
                1.0
            } else {
                0.0
            }
        } else {
            1.0 - resid / total
        }
    }
}

/// Fits `xᵀAx + 2bᵀx + c` to `(ξ̄, value)` pairs: interpolation at the
/// minimal count, least squares beyond it.
pub fn fit_quadratic_from_evals(evals: &[(Vec<f64>, f64)]) -> Result<FittedQuadratic> {
    let k = evals.first().map_or(0, |e| e.0.len());
    let needed = monomial_count(k);
    if evals.len() < needed {
        return Err(Error::Input(format!(
            "a quadratic in {k} variables needs {needed} evaluations, got {}",
            evals.len()
        )));
    }
    if evals.iter().any(|e| e.0.len() != k) {
        return Err(Error::Input("evaluation points have mixed dimensions".into()));
    }
    if evals.iter().any(|e| !e.1.is_finite() || e.0.iter().any(|v| !v.is_finite())) {
        return Err(Error::Input("non-finite evaluation".into()));
    }
    let points: Vec<Vec<f64>> = evals.iter().map(|e| e.0.clone()).collect();
    let design = design_matrix(&points);
    let diag = design.clone().col_piv_qr().r().diagonal();
    let top = diag[0].abs();
    if diag.iter().any(|v| v.abs() <= SINGULAR_DESIGN_TOLERANCE * top) {
        return Err(Error::Input("probe points do not determine a quadratic (singular design)".into()));
    }
    let values = DVector::from_iterator(evals.len(), evals.iter().map(|e| e.1));
    let coef = least_squares_min_norm(&design, &values);
    let mut a_matrix = DMatrix::zeros(k, k);
    let mut idx = 1 + k;
    for i in 0..k {
        for l in i..k {
            a_matrix[(i, l)] = coef[idx];
            a_matrix[(l, i)] = coef[idx];
            idx += 1;
        }
    }
    Ok(FittedQuadratic {
        a_matrix,
        b_vector: coef.rows(1, k).into_owned(),
        c: coef[0],
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeEval {
    pub xi: Vec<f64>,
    pub xibar: Vec<f64>,
    #[serde(with = "exact_f64")]
    pub validation_mse: f64,
}

/// Everything computed at one grid `λ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaTrace {
    #[serde(with = "exact_f64")]
    pub lambda: f64,
    pub probes: Vec<ProbeEval>,
    pub fitted: Option<FittedQuadratic>,
    pub xibar: Vec<f64>,
    pub xi: Option<Vec<f64>>,
    #[serde(with = "exact_f64")]
    pub validation_mse: f64,
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedLambda {
    pub lambda: f64,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TunedResult {
    #[serde(with = "exact_f64")]
    pub lambda: f64,
    pub k: usize,
    /// `None` when the chosen `ξ̄` has a vanishing partial sum.
    pub xi: Option<Vec<f64>>,
    pub xibar: Vec<f64>,
    pub fitted: Option<FittedQuadratic>,
    #[serde(with = "exact_f64")]
    pub validation_mse: f64,
    pub note: Option<String>,
    /// Final estimator at the chosen `(λ, ξ̄)`, fitted on train.
    pub weights: EstimatorWeights,
    /// One entry per grid `λ` that could be fitted, in grid order.
    pub traces: Vec<LambdaTrace>,
    pub skipped: Vec<SkippedLambda>,
}

fn check_split(split: &Split, name: &str) -> Result<()> {
    if split.is_empty() {
        return Err(Error::Input(format!("{name} split is empty")));
    }
    if split.x_matrix.ncols() != split.y.len() {
        return Err(Error::Dimension {
            expected: split.x_matrix.ncols(),
            found: split.y.len(),
            context: "split targets",
        });
    }
    Ok(())
}

fn tune_at(train: &Split, validation: &Split, lambda: f64, design: &ProbeDesign) -> Result<(LambdaTrace, DVector<f64>)> {
    let system = RidgeSystem::new(&train.x_matrix, lambda)?;
    let mut probes = Vec::with_capacity(design.count());
    for (xi, xibar) in design.probes.iter().zip(&design.xibars) {
        let theta = sd_recursive_path(&system, &train.y, xi)?.pop().expect("nonempty path");
        probes.push(ProbeEval {
            xi: xi.clone(),
            xibar: xibar.clone(),
            validation_mse: mse_theta(&theta, validation)?,
        });
    }
    if design.k == 0 {
        let theta = system.solve_targets(&train.y);
        let mse = probes[0].validation_mse;
        let trace = LambdaTrace {
            lambda,
            probes,
            fitted: None,
            xibar: Vec::new(),
            xi: Some(Vec::new()),
            validation_mse: mse,
            note: None,
        };
        return Ok((trace, theta));
    }

    let evals: Vec<(Vec<f64>, f64)> = probes.iter().map(|p| (p.xibar.clone(), p.validation_mse)).collect();
    let fitted = fit_quadratic_from_evals(&evals)?;
    let mut note = None;
    let xibar = if fitted.is_convex() {
        fitted.stationary_point()
    } else {
        note = Some("fitted quadratic is not convex; using the best probe".to_string());
        let best = probes
            .iter()
            .min_by(|a, b| a.validation_mse.total_cmp(&b.validation_mse))
            .expect("at least one probe");
        DVector::from_column_slice(&best.xibar)
    };
    let xibar = XiBar::new(xibar.iter().copied().collect());
    let xi = match xibar_to_xi(&xibar) {
        Ok(xi) => Some(xi),
        Err(e) => {
            let msg = format!("{e}; the estimator is reported in ξ̄ only");
            note = Some(note.map_or(msg.clone(), |n| format!("{n}; {msg}")));
            None
        }
    };
    let theta = sd_polynomial(&system, &train.y, &xibar)?;
    let trace = LambdaTrace {
        lambda,
        probes,
        fitted: Some(fitted),
        xibar: xibar.xibar,
        xi,
        validation_mse: mse_theta(&theta, validation)?,
        note,
    };
    Ok((trace, theta))
}

/// Grid search over `λ`; at each `λ` the `ξ̄` minimizing the fitted
/// validation quadratic is taken. Returns the `λ` with the lowest
/// validation MSE of the final estimator, preferring the larger `λ` on
/// ties. Grid points whose fits fail are skipped and listed.
pub fn tune(train: &Split, validation: &Split, lambda_grid: &[f64], k: usize) -> Result<TunedResult> {
    check_split(train, "train")?;
    check_split(validation, "validation")?;
    if validation.dim() != train.dim() {
        return Err(Error::Dimension {
            expected: train.dim(),
            found: validation.dim(),
            context: "validation features",
        });
    }
    if lambda_grid.is_empty() {
        return Err(Error::Input("empty λ grid".into()));
    }
    let design = probe_design(k);
    let outcomes: Vec<Result<(LambdaTrace, DVector<f64>)>> = lambda_grid
        .par_iter()
        .map(|&lambda| tune_at(train, validation, lambda, &design))
        .collect();

    let mut traces = Vec::new();
    let mut thetas = Vec::new();
    let mut skipped = Vec::new();
    for (&lambda, outcome) in lambda_grid.iter().zip(outcomes) {
        match outcome {
            Ok((trace, theta)) => {
                traces.push(trace);
                thetas.push(theta);
            }
            Err(e) => skipped.push(SkippedLambda {
                lambda,
                reason: e.to_string(),
            }),
        }
    }
    let mut best: Option<usize> = None;
    for i in 0..traces.len() {
        let mse = traces[i].validation_mse;
        if !mse.is_finite() {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(b) => {
                let (bm, bl) = (traces[b].validation_mse, traces[b].lambda);
                if mse < bm || (mse == bm && traces[i].lambda > bl) {
                    Some(i)
                } else {
                    Some(b)
                }
            }
        };
    }
    let Some(best) = best else {
        let reasons: Vec<String> = skipped.iter().map(|s| format!("λ={}: {}", s.lambda, s.reason)).collect();
        return Err(Error::Input(format!("no grid λ could be fitted ({})", reasons.join("; "))));
    };
    let chosen = traces[best].clone();
    let weights = EstimatorWeights {
        theta_hat: thetas[best].clone(),
        provenance: Provenance {
            lambda: chosen.lambda,
            k,
            xi: chosen.xi.clone(),
            xibar: Some(chosen.xibar.clone()),
            method: if k == 0 { FitMethod::Ridge } else { FitMethod::Polynomial },
            seed: None,
        },
    };
    Ok(TunedResult {
        lambda: chosen.lambda,
        k,
        xi: chosen.xi,
        xibar: chosen.xibar,
        fitted: chosen.fitted,
        validation_mse: chosen.validation_mse,
        note: chosen.note,
        weights,
        traces,
        skipped,
    })
}

/// Validation MSE of the k-step estimator at each given `ξ` (one fit per
/// entry), for dense grid checks.
pub fn validation_mse_at(train: &Split, validation: &Split, lambda: f64, xis: &[Vec<f64>]) -> Result<Vec<f64>> {
    check_split(train, "train")?;
    check_split(validation, "validation")?;
    let system = RidgeSystem::new(&train.x_matrix, lambda)?;
    xis.iter()
        .map(|xi| {
            let theta = sd_recursive_path(&system, &train.y, xi)?.pop().expect("nonempty path");
            mse_theta(&theta, validation)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::random_design;
    use crate::risk::{excess_risk_closed, quadratic_coefficients};
    use crate::solver::log_grid;
    use crate::spectral::{make_synthetic, BasisKind, SyntheticSpec, ThetaSpec};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn one_step_probes() {
        let d = probe_design(1);
        assert_eq!(d.probes, vec![vec![0.0], vec![1.0], vec![-1.0]]);
        assert_eq!(d.xibars, d.probes);
    }

    #[test]
    fn two_step_probes_follow_the_six_evaluations() {
        let d = probe_design(2);
        let expected = vec![
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, -1.0],
            vec![1.0, 1.0],
            vec![1.0, -1.0],
            vec![0.5, 1.0],
        ];
        assert_eq!(d.probes, expected);
        let xibars = vec![
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![-1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, -1.0],
            vec![0.5, 0.5],
        ];
        assert_eq!(d.xibars, xibars);
    }

    #[test]
    fn probe_counts_and_conditioning() {
        assert_eq!(probe_design(0).count(), 1);
        for k in 1..=6 {
            let d = probe_design(k);
            assert_eq!(d.count(), k * (k + 3) / 2 + 1);
            let cond = d.condition_number();
            assert!(cond < 1e6, "k={k} cond={cond}");
            for xi in &d.probes {
                assert_eq!(xi.len(), k);
            }
        }
        let three = probe_design(3);
        assert_eq!(three.count(), 10);
        let rank = three.design_matrix().rank(1e-12);
        assert_eq!(rank, 10);
    }

    fn random_quadratic(k: usize, rng: &mut ChaCha8Rng) -> FittedQuadratic {
        let mut a = DMatrix::from_fn(k, k, |_, _| rng.random_range(-2.0..2.0));
        a = &a + a.transpose();
        FittedQuadratic {
            a_matrix: a,
            b_vector: DVector::from_fn(k, |_, _| rng.random_range(-2.0..2.0)),
            c: rng.random_range(-2.0..2.0),
        }
    }

    #[test]
    fn recovers_known_quadratic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for k in 0..=5 {
            let q = random_quadratic(k, &mut rng);
            let evals: Vec<_> = probe_design(k).xibars.into_iter().map(|x| {
                let v = q.evaluate(&x);
                (x, v)
            }).collect();
            let fit = fit_quadratic_from_evals(&evals).unwrap();
            assert!((&fit.a_matrix - &q.a_matrix).amax() <= 1e-10);
            assert!((&fit.b_vector - &q.b_vector).amax() <= 1e-10);
            assert!((fit.c - q.c).abs() <= 1e-10);
            // overdetermined: extra random points, still exact data
            let mut more = evals.clone();
            for _ in 0..7 {
                let x: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
                let v = q.evaluate(&x);
                more.push((x, v));
            }
            let fit = fit_quadratic_from_evals(&more).unwrap();
            assert!((&fit.a_matrix - &q.a_matrix).amax() <= 1e-10);
            assert!((fit.r_squared(&more) - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn singular_or_short_designs_are_rejected() {
        let same: Vec<_> = (0..6).map(|_| (vec![1.0, 2.0], 0.0)).collect();
        assert!(matches!(fit_quadratic_from_evals(&same), Err(Error::Input(_))));
        let short = vec![(vec![0.0], 1.0), (vec![1.0], 2.0)];
        assert!(matches!(fit_quadratic_from_evals(&short), Err(Error::Input(_))));
    }

    #[test]
    fn recovers_closed_form_risk_quadratic() {
        let inst = make_synthetic(&SyntheticSpec {
            d: 4,
            n: 6,
            singular_values: vec![1.0, 0.7, 0.4, 0.2],
            theta: ThetaSpec::Coefficients { values: vec![1.0, -0.5, 0.3, 0.8] },
            gamma: 0.3,
            seed: 2,
            basis: BasisKind::Random,
        })
        .unwrap();
        for k in 1..=3 {
            let q = quadratic_coefficients(&inst, 0.1, k).unwrap();
            let evals: Vec<_> = probe_design(k)
                .xibars
                .into_iter()
                .map(|x| {
                    let r = excess_risk_closed(&inst, 0.1, &XiBar::new(x.clone())).unwrap().excess_risk;
                    (x, r)
                })
                .collect();
            let fit = fit_quadratic_from_evals(&evals).unwrap();
            assert!((&fit.a_matrix - &q.m_matrix).amax() <= 1e-8);
            assert!((&fit.b_vector - &q.m_vector).amax() <= 1e-8);
            assert!((fit.c - q.c_scalar).abs() <= 1e-8);
        }
    }

    fn problem(seed: u64) -> (Split, Split) {
        let theta = [1.0, -0.5, 0.25, 0.0, 2.0, -1.0];
        (random_design(&theta, 60, 1.5, seed), random_design(&theta, 200, 1.5, seed + 1000))
    }

    #[test]
    fn ridge_only_tuning_is_grid_argmin() {
        let (train, val) = problem(1);
        let grid = log_grid(1e-2, 1e3, 2);
        let tuned = tune(&train, &val, &grid, 0).unwrap();
        let mut best = (f64::INFINITY, 0.0);
        for &l in &grid {
            let m = validation_mse_at(&train, &val, l, &[vec![]]).unwrap()[0];
            if m < best.0 || (m == best.0 && l > best.1) {
                best = (m, l);
            }
        }
        assert_eq!(tuned.lambda, best.1);
        assert_eq!(tuned.validation_mse, best.0);
        assert_eq!(tuned.traces.len(), grid.len());
    }

    #[test]
    fn more_steps_never_hurt_validation() {
        let (train, val) = problem(2);
        let grid = log_grid(1e-2, 1e3, 2);
        let r0 = tune(&train, &val, &grid, 0).unwrap();
        let r1 = tune(&train, &val, &grid, 1).unwrap();
        let r2 = tune(&train, &val, &grid, 2).unwrap();
        assert!(r1.validation_mse <= r0.validation_mse * (1.0 + 1e-10));
        assert!(r2.validation_mse <= r1.validation_mse * (1.0 + 1e-10));
        let refit = mse_theta(&r2.weights.theta_hat, &val).unwrap();
        assert!((refit - r2.validation_mse).abs() <= 1e-12 * refit);
    }

    #[test]
    fn probe_argmin_matches_dense_scan() {
        let (train, val) = problem(3);
        let lambda = 30.0;
        let tuned = tune(&train, &val, &[lambda], 1).unwrap();
        let xi_star = tuned.xi.as_ref().unwrap()[0];
        let step = 0.01;
        let grid: Vec<Vec<f64>> = (0..=1000).map(|i| vec![-5.0 + step * i as f64]).collect();
        let curve = validation_mse_at(&train, &val, lambda, &grid).unwrap();
        let (arg, _) = curve
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        assert!((grid[arg][0] - xi_star).abs() <= step);
        let evals: Vec<_> = grid.iter().cloned().zip(curve).collect();
        assert!(tuned.fitted.as_ref().unwrap().r_squared(&evals) >= 0.999);
    }

    #[test]
    fn tuning_is_deterministic() {
        let (train, val) = problem(4);
        let grid = log_grid(1e-1, 1e2, 2);
        let a = tune(&train, &val, &grid, 2).unwrap();
        let b = tune(&train, &val, &grid, 2).unwrap();
        assert_eq!(a, b);
        let text = serde_json::to_string(&a).unwrap();
        let back: TunedResult = serde_json::from_str(&text).unwrap();
        assert_eq!(a, back);
    }

    #[test]
    fn bad_grid_points_are_skipped() {
        let (train, val) = problem(5);
        let tuned = tune(&train, &val, &[-1.0, 1.0, f64::NAN], 1).unwrap();
        assert_eq!(tuned.lambda, 1.0);
        assert_eq!(tuned.skipped.len(), 2);
        assert!(tune(&train, &val, &[-1.0], 1).is_err());
        assert!(tune(&train, &val, &[], 1).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn validation_mse_is_exactly_quadratic(seed in any::<u64>(), k in 1usize..=3, log_lambda in -1.0f64..2.0) {
            let (train, val) = problem(seed % 1000);
            let lambda = 10f64.powf(log_lambda);
            let design = probe_design(k);
            let mses = validation_mse_at(&train, &val, lambda, &design.probes).unwrap();
            let evals: Vec<_> = design.xibars.iter().cloned().zip(mses).collect();
            let fit = fit_quadratic_from_evals(&evals).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let xi: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
            let direct = validation_mse_at(&train, &val, lambda, std::slice::from_ref(&xi)).unwrap()[0];
            let predicted = fit.evaluate(&xi_to_xibar(&xi).xibar);
            prop_assert!((direct - predicted).abs() <= 1e-8 * direct.max(1.0));
        }
    }
}
