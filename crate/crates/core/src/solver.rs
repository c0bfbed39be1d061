//! Optimal `ξ̄` for a given `λ`.
//!
//! With `k = r` steps, the estimator can reproduce the optimal per-direction
//! scaling exactly whenever the linear system
//!
//! ```text
//! Σ_i ξ̄_i (1 − a_j^i) = 1 − (λ + s_j²) ts_j⋆,    j = 1..r
//! ```
//!
//! is solvable. For any `k` the risk quadratic can be minimized directly.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive_lambda, Result};
use crate::estimators::{xibar_to_xi, XiBar};
use crate::risk::{lower_bound, optimal_preconditioner, quadratic_coefficients, QuadraticRisk};
use crate::serial::{exact_dvector, exact_f64, exact_vec, row_major};
use crate::spectral::ProblemInstance;

/// Eigenvalue cutoff, relative to the largest, for the pseudo-inverse of a
/// quadratic form's matrix.
pub const PINV_CUTOFF: f64 = 1e-12;
/// Relative residual above which the achievability system counts as
/// unsolved.
pub const MAX_RELATIVE_RESIDUAL: f64 = 1e-6;
pub const MAX_CONDITION_NUMBER: f64 = 1e12;
/// Relative risk gap to the lower bound accepted as achieving it.
pub const ACHIEVEMENT_TOLERANCE: f64 = 1e-8;
/// Residual the λ search demands before it stops at a grid point. Tighter
/// than the per-λ infeasibility threshold so that the reported `ξ̄` solves
/// the system to working accuracy, not just the risk.
pub const SEARCH_RESIDUAL_TOLERANCE: f64 = 1e-8;
/// Relative gap below which neighbouring singular values count as equal.
const DISTINCT_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AchievabilitySystem {
    /// `r × k`, `A_{j,i} = 1 − a_j^i`.
    #[serde(with = "row_major")]
    pub a_matrix: DMatrix<f64>,
    /// `α_j = 1 − (λ + s_j²) ts_j⋆`.
    #[serde(with = "exact_dvector")]
    pub alpha: DVector<f64>,
    #[serde(with = "exact_f64")]
    pub lambda: f64,
    /// Ratio of extreme singular values; infinite when rank deficient.
    pub condition_number: f64,
}

pub fn build_system(instance: &ProblemInstance, lambda: f64, k: usize) -> Result<AchievabilitySystem> {
    ensure_positive_lambda(lambda)?;
    let q = quadratic_coefficients(instance, lambda, k)?;
    let ts = optimal_preconditioner(instance);
    let s = instance.spectrum().nonzero();
    let alpha = DVector::from_fn(s.len(), |j, _| 1.0 - (lambda + s[j] * s[j]) * ts[j]);
    let condition_number = condition_number(&q.c_coeffs);
    Ok(AchievabilitySystem {
        a_matrix: q.c_coeffs,
        alpha,
        lambda,
        condition_number,
    })
}

/// `σ_max / σ_min` over the `min(rows, cols)` singular values.
pub fn condition_number(matrix: &DMatrix<f64>) -> f64 {
    if matrix.is_empty() {
        return 1.0;
    }
    let sv = matrix.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Minimum-norm solution of `min ‖A x − b‖` through a complete orthogonal
/// decomposition: column-pivoted QR `AP = QR`, numerical rank from the
/// diagonal of `R` with cutoff `ε · max(rows, cols) · |R₁₁|`, then a second
/// QR of the leading rows of `R` for the minimum-norm part.
pub fn least_squares_min_norm(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    if n == 0 {
        return DVector::zeros(0);
    }
    if a.nrows() == 0 {
        return DVector::zeros(n);
    }
    // nalgebra's SVD loses accuracy on the badly scaled Vandermonde-like
    // systems that show up here, Householder QR does not
    let qr = a.clone().col_piv_qr();
    let r = qr.r();
    let top = r[(0, 0)].abs();
    let cutoff = f64::EPSILON * a.nrows().max(n) as f64 * top;
    let rank = (0..r.nrows().min(n)).take_while(|&i| r[(i, i)].abs() > cutoff).count();
    if rank == 0 {
        return DVector::zeros(n);
    }
    let c = (qr.q().tr_mul(b)).rows(0, rank).into_owned();
    // R₁ = [R₁₁ R₁₂] is rank × n with full row rank; R₁ᵀ = Z L
    let r1_t = r.rows(0, rank).transpose();
    let second = r1_t.qr();
    let l = second.r();
    let w = l
        .transpose()
        .solve_lower_triangular(&c)
        .expect("leading diagonal is above the cutoff");
    let mut x = second.q() * w;
    qr.p().inv_permute_rows(&mut x);
    x
}

/// Minimizer of `xᵀMx + 2xᵀm` through the eigen-decomposition
/// pseudo-inverse, `x = −M⁺m`. For rank-deficient `M` this is the
/// minimum-norm stationary point.
pub fn minimize_quadratic(m_matrix: &DMatrix<f64>, m_vector: &DVector<f64>) -> DVector<f64> {
    let k = m_vector.len();
    if k == 0 {
        return DVector::zeros(0);
    }
    let sym = (m_matrix + m_matrix.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut x = DVector::zeros(k);
    for (i, &ev) in eig.eigenvalues.iter().enumerate() {
        if ev.abs() <= PINV_CUTOFF * top || top == 0.0 {
            continue;
        }
        let v = eig.eigenvectors.column(i);
        x.axpy(-v.dot(m_vector) / ev, &v, 1.0);
    }
    x
}

/// Minimum-norm minimizer of the risk quadratic.
///
/// Solved as the weighted least-squares problem behind the quadratic
/// rather than through `M` itself, which squares its condition number.
///
/// A `ξ̄` padded with trailing zeros gives the same estimator, so the
/// solutions restricted to the first `m < k` entries are feasible too.
/// Each is evaluated and the lowest risk wins; near machine-precision
/// conditioning the full solve can otherwise land above a shorter one.
pub fn solve_xibar_argmin(quadratic: &QuadraticRisk) -> XiBar {
    let (rows, rhs) = quadratic.least_squares_form();
    let k = rows.ncols();
    let mut best = XiBar::zeros(k);
    let mut best_risk = quadratic.c_scalar;
    for m in 1..=k {
        let head = least_squares_min_norm(&rows.columns(0, m).into_owned(), &rhs);
        let mut candidate = vec![0.0; k];
        candidate[..m].copy_from_slice(head.as_slice());
        let risk = match quadratic.evaluate(&candidate) {
            Ok(report) => report.excess_risk,
            Err(_) => continue,
        };
        if risk < best_risk {
            best_risk = risk;
            best = XiBar::new(candidate);
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    #[serde(with = "exact_f64")]
    pub lambda: f64,
    pub achieved: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reason: Option<String>,
    /// Solved `ξ̄`; the risk minimizer when the exact system fails.
    #[serde(with = "exact_vec")]
    pub xibar: Vec<f64>,
    /// `ξ` when the reparametrization is invertible at `xibar`.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub xi: Option<Vec<f64>>,
    /// `‖Aξ̄ − α‖ / ‖α‖` for the exact system.
    pub residual: f64,
    pub condition_number: f64,
    #[serde(with = "exact_f64")]
    pub risk: f64,
    #[serde(with = "exact_f64")]
    pub lower_bound: f64,
    /// `(risk − bound) / bound`, or the absolute gap when the bound is zero.
    #[serde(with = "exact_f64")]
    pub relative_gap: f64,
}

fn relative_gap(risk: f64, bound: f64) -> f64 {
    if bound > 0.0 {
        (risk - bound) / bound
    } else {
        risk - bound
    }
}

fn distinct_singular_values(s: &[f64]) -> bool {
    s.windows(2).all(|w| w[0] - w[1] > DISTINCT_TOLERANCE * w[0])
}

fn pivoted_solve_refined(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let qr = a.clone().col_piv_qr();
    let mut x = qr.solve(b)?;
    for _ in 0..3 {
        let correction = qr.solve(&(b - a * &x))?;
        x += correction;
    }
    Some(x)
}

/// Solves the `r`-step achievability system at `λ`.
///
/// Returns a report with `achieved = false` instead of an error when the
/// singular values repeat, the system is too ill-conditioned, or the solve
/// leaves a residual; in that case `xibar` holds the risk minimizer and the
/// gap to the bound.
pub fn solve_xibar_exact(instance: &ProblemInstance, lambda: f64) -> Result<SolverReport> {
    let r = instance.rank();
    let system = build_system(instance, lambda, r)?;
    let quadratic = quadratic_coefficients(instance, lambda, r)?;
    let bound = lower_bound(instance);
    let cond = system.condition_number;
    let alpha_norm = system.alpha.norm();
    let residual_of = |x: &DVector<f64>| {
        let res = (&system.a_matrix * x - &system.alpha).norm();
        if alpha_norm > 0.0 {
            res / alpha_norm
        } else {
            res
        }
    };

    let mut reason = None;
    let mut candidate = None;
    if !distinct_singular_values(instance.spectrum().nonzero()) {
        reason = Some("nonzero singular values are not distinct".to_string());
    } else if !(cond <= MAX_CONDITION_NUMBER) {
        reason = Some(format!("condition number {cond:.3e} exceeds {MAX_CONDITION_NUMBER:.0e}"));
    } else {
        match pivoted_solve_refined(&system.a_matrix, &system.alpha) {
            None => reason = Some("pivoted factorization is singular".to_string()),
            Some(x) => {
                let res = residual_of(&x);
                if res > MAX_RELATIVE_RESIDUAL {
                    reason = Some(format!("relative residual {res:.3e} exceeds {MAX_RELATIVE_RESIDUAL:.0e}"));
                } else {
                    candidate = Some(x);
                }
            }
        }
    }

    let x = match candidate {
        Some(x) => x,
        None => DVector::from_vec(solve_xibar_argmin(&quadratic).xibar),
    };
    let xibar: Vec<f64> = x.iter().copied().collect();
    let risk = quadratic.evaluate(&xibar)?.excess_risk;
    let gap = relative_gap(risk, bound);
    if reason.is_none() && gap > ACHIEVEMENT_TOLERANCE {
        reason = Some(format!("risk gap {gap:.3e} to the lower bound exceeds {ACHIEVEMENT_TOLERANCE:.0e}"));
    }
    Ok(SolverReport {
        lambda,
        achieved: reason.is_none(),
        reason,
        xi: xibar_to_xi(&XiBar::new(xibar.clone())).ok(),
        residual: residual_of(&x),
        condition_number: cond,
        risk,
        lower_bound: bound,
        relative_gap: gap,
        xibar,
    })
}

/// `√10`-spaced grid from `1e-4` to `1e4`.
pub fn default_lambda_grid() -> Vec<f64> {
    log_grid(1e-4, 1e4, 2)
}

/// Log-spaced grid with `per_decade` points per decade, endpoints included.
pub fn log_grid(lo: f64, hi: f64, per_decade: usize) -> Vec<f64> {
    let steps = ((hi / lo).log10() * per_decade as f64).round() as usize;
    if steps == 0 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..=steps)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / steps as f64))
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LambdaSearchReport {
    pub success: bool,
    /// Winning report: the lowest grid `λ` that achieves the bound, or the
    /// smallest gap seen.
    pub best: SolverReport,
    /// Every grid point in increasing `λ`.
    pub evaluated: Vec<SolverReport>,
    pub refined: bool,
}

/// Scans a `λ` grid for a point where the `r`-step estimator attains the
/// lower bound. If no grid point does, the neighbourhood of the smallest
/// gap is rescanned on a finer grid.
pub fn search_lambda_achieving_bound(instance: &ProblemInstance, lambda_grid: &[f64]) -> Result<LambdaSearchReport> {
    let mut grid = lambda_grid.to_vec();
    for &l in &grid {
        ensure_positive_lambda(l)?;
    }
    if grid.is_empty() {
        return Err(crate::Error::Input("lambda grid is empty".into()));
    }
    grid.sort_by(f64::total_cmp);
    let accept = |r: &SolverReport| r.achieved && r.residual <= SEARCH_RESIDUAL_TOLERANCE;
    let evaluated: Vec<SolverReport> = grid
        .par_iter()
        .map(|&l| solve_xibar_exact(instance, l))
        .collect::<Result<_>>()?;

    if let Some(hit) = evaluated.iter().find(|r| accept(r)) {
        return Ok(LambdaSearchReport {
            success: true,
            best: hit.clone(),
            evaluated,
            refined: false,
        });
    }

    let closest = (0..evaluated.len())
        .min_by(|&a, &b| evaluated[a].relative_gap.total_cmp(&evaluated[b].relative_gap))
        .expect("grid is nonempty");
    let lo = if closest > 0 { grid[closest - 1] } else { grid[closest] / 10f64.sqrt() };
    let hi = if closest + 1 < grid.len() { grid[closest + 1] } else { grid[closest] * 10f64.sqrt() };
    let fine = log_grid(lo, hi, 20);
    let refined: Vec<SolverReport> = fine
        .par_iter()
        .map(|&l| solve_xibar_exact(instance, l))
        .collect::<Result<_>>()?;
    let best = refined
        .iter()
        .find(|r| accept(r))
        .or_else(|| {
            refined
                .iter()
                .chain(std::iter::once(&evaluated[closest]))
                .min_by(|a, b| a.relative_gap.total_cmp(&b.relative_gap))
        })
        .expect("refined grid is nonempty")
        .clone();
    Ok(LambdaSearchReport {
        success: accept(&best),
        best,
        evaluated,
        refined: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{fit_sd_preconditioner, xi_to_xibar};
    use crate::risk::{degenerate_case_bounds, excess_risk_closed, DegenerateCase};
    use crate::spectral::{make_synthetic, BasisKind, SyntheticSpec, ThetaSpec};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn synth(s: Vec<f64>, theta: ThetaSpec, gamma: f64, d: usize, n: usize, seed: u64) -> ProblemInstance {
        make_synthetic(&SyntheticSpec {
            d,
            n,
            singular_values: s,
            theta,
            gamma,
            seed,
            basis: BasisKind::Random,
        })
        .unwrap()
    }

    fn fig3a() -> ProblemInstance {
        synth(
            vec![1.0, 0.5, 1.0 / 3.0, 0.25],
            ThetaSpec::Aligned { direction: 1, norm: 1.0 },
            0.125,
            4,
            4,
            0,
        )
    }

    #[test]
    fn one_direction_scalar_system() {
        let inst = synth(vec![0.7], ThetaSpec::Aligned { direction: 1, norm: 1.3 }, 0.4, 2, 3, 1);
        let sys = build_system(&inst, 0.5, 1).unwrap();
        let a1 = 0.49 / (0.5 + 0.49);
        assert!((sys.a_matrix[(0, 0)] - (1.0 - a1)).abs() < 1e-15);
        let exact = solve_xibar_exact(&inst, 0.5).unwrap();
        assert!(exact.achieved, "{exact:?}");
        let expected = sys.alpha[0] / (1.0 - a1);
        assert!((exact.xibar[0] - expected).abs() <= 1e-12 * expected.abs());
        let argmin = solve_xibar_argmin(&quadratic_coefficients(&inst, 0.5, 1).unwrap());
        assert!((argmin.xibar[0] - expected).abs() <= 1e-10 * expected.abs());
    }

    #[test]
    fn equal_singular_values_give_identical_rows() {
        let inst = synth(vec![1.0; 3], ThetaSpec::Aligned { direction: 2, norm: 1.0 }, 0.2, 3, 5, 2);
        let sys = build_system(&inst, 0.3, 3).unwrap();
        for j in 1..3 {
            assert!((sys.a_matrix.row(j) - sys.a_matrix.row(0)).amax() == 0.0);
        }
        assert!(sys.condition_number > 1e12);
        let report = solve_xibar_exact(&inst, 0.3).unwrap();
        assert!(!report.achieved);
    }

    #[test]
    fn distinct_values_full_rank_for_large_lambda() {
        let inst = fig3a();
        let sys = build_system(&inst, 10.0, 4).unwrap();
        assert!(sys.condition_number.is_finite());
        assert!(sys.condition_number < 1e12);
    }

    #[test]
    fn fig3a_achieves_bound_across_grid() {
        let inst = fig3a();
        let lb = lower_bound(&inst);
        let mut achieved = 0;
        for &l in &default_lambda_grid() {
            let rep = solve_xibar_exact(&inst, l).unwrap();
            assert!(rep.risk >= lb * (1.0 - 1e-10));
            if rep.achieved {
                achieved += 1;
                let r = excess_risk_closed(&inst, l, &XiBar::new(rep.xibar.clone())).unwrap();
                assert!(r.excess_risk <= lb + 1e-9);
            }
        }
        assert!(achieved >= 5, "only {achieved} grid points achieved the bound");
    }

    #[test]
    fn achieving_estimator_matches_optimal_scaling() {
        let inst = fig3a();
        let rep = solve_xibar_exact(&inst, 0.1).unwrap();
        assert!(rep.achieved);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = DVector::from_fn(4, |_, _| rng.sample::<f64, _>(StandardNormal));
        let fit = fit_sd_preconditioner(inst.spectrum(), &y, 0.1, &XiBar::new(rep.xibar)).unwrap();
        let ts = optimal_preconditioner(&inst);
        let spec = inst.spectrum();
        let proj = spec.right_vectors.tr_mul(&y);
        let coeffs = spec.left_vectors.tr_mul(&fit.theta_hat);
        for j in 0..4 {
            let target = ts[j] * spec.singular_values[j] * proj[j];
            assert!((coeffs[j] - target).abs() <= 1e-7 * target.abs().max(1e-3));
        }
    }

    #[test]
    fn repeated_singular_values_leave_a_gap() {
        let inst = synth(
            vec![1.0, 1.0, 0.5, 1.0 / 3.0],
            ThetaSpec::Aligned { direction: 1, norm: 1.0 },
            0.125,
            4,
            4,
            5,
        );
        let report = search_lambda_achieving_bound(&inst, &default_lambda_grid()).unwrap();
        assert!(!report.success);
        assert!(report.best.relative_gap > 1e-6);
    }

    #[test]
    fn equal_singular_search_gap_matches_closed_form() {
        let inst = synth(vec![1.0; 4], ThetaSpec::EqualWeight { count: 2, weight: 0.7 }, 0.2, 4, 6, 4);
        let report = search_lambda_achieving_bound(&inst, &default_lambda_grid()).unwrap();
        assert!(!report.success);
        // in this case no number of steps beats the best ridge, so the best
        // reachable risk is the closed-form degenerate optimum
        let degenerate = degenerate_case_bounds(&inst, DegenerateCase::EqualSingulars).unwrap();
        let lb = lower_bound(&inst);
        let expected_gap = (degenerate - lb) / lb;
        assert!((report.best.relative_gap - expected_gap).abs() <= 1e-6 * expected_gap);
    }

    #[test]
    fn rank_one_succeeds_everywhere() {
        let inst = synth(vec![2.0], ThetaSpec::Aligned { direction: 1, norm: 0.6 }, 0.3, 3, 5, 6);
        for &l in &default_lambda_grid() {
            assert!(solve_xibar_exact(&inst, l).unwrap().achieved);
        }
        let search = search_lambda_achieving_bound(&inst, &default_lambda_grid()).unwrap();
        assert!(search.success && !search.refined);
        assert_eq!(search.best.lambda, 1e-4);
    }

    #[test]
    fn argmin_k1_and_k2_closed_forms() {
        let inst = fig3a();
        let q1 = quadratic_coefficients(&inst, 0.2, 1).unwrap();
        let x1 = solve_xibar_argmin(&q1);
        let expected = -q1.m_vector[0] / q1.m_matrix[(0, 0)];
        assert!((x1.xibar[0] - expected).abs() <= 1e-10 * expected.abs());

        let q2 = quadratic_coefficients(&inst, 0.2, 2).unwrap();
        let (a, b, c) = (q2.m_matrix[(0, 0)], q2.m_matrix[(1, 1)], q2.m_matrix[(0, 1)]);
        let (d, e) = (q2.m_vector[0], q2.m_vector[1]);
        let det = a * b - c * c;
        assert!(det > 0.0);
        let x2 = solve_xibar_argmin(&q2);
        let e1 = (c * e - d * b) / det;
        let e2 = (c * d - a * e) / det;
        assert!((x2.xibar[0] - e1).abs() <= 1e-7 * e1.abs());
        assert!((x2.xibar[1] - e2).abs() <= 1e-7 * e2.abs());
        let via_eigen = minimize_quadratic(&q2.m_matrix, &q2.m_vector);
        assert!((via_eigen[0] - e1).abs() <= 1e-6 * e1.abs());
    }

    #[test]
    fn extra_steps_beyond_rank_do_not_help() {
        let inst = fig3a();
        for &l in &[0.05, 0.5, 5.0] {
            let qr = quadratic_coefficients(&inst, l, 4).unwrap();
            let qk = quadratic_coefficients(&inst, l, 6).unwrap();
            let rr = qr.evaluate(&solve_xibar_argmin(&qr).xibar).unwrap().excess_risk;
            let rk = qk.evaluate(&solve_xibar_argmin(&qk).xibar).unwrap().excess_risk;
            assert!((rr - rk).abs() <= 1e-10 * rr, "{rr} vs {rk}");
        }
    }

    #[test]
    fn condition_number_grows_as_gap_shrinks() {
        let mut last = 0.0;
        for &eps in &[0.2, 0.1, 0.05, 0.02, 0.01] {
            let s: Vec<f64> = (0..4).map(|j| 1.0 - j as f64 * eps).collect();
            let inst = synth(s, ThetaSpec::Aligned { direction: 1, norm: 1.0 }, 0.125, 4, 4, 0);
            let cond = build_system(&inst, 0.125, 4).unwrap().condition_number;
            assert!(cond >= last, "cond {cond} after {last} at eps {eps}");
            last = cond;
        }
    }

    #[test]
    fn grid_spacing_is_root_ten() {
        let g = default_lambda_grid();
        assert_eq!(g.len(), 17);
        assert!((g[0] - 1e-4).abs() < 1e-18 && (g[16] - 1e4).abs() < 1e-9);
        for w in g.windows(2) {
            assert!((w[1] / w[0] - 10f64.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn reports_serialize() {
        let rep = solve_xibar_exact(&fig3a(), 0.1).unwrap();
        let text = serde_json::to_string(&rep).unwrap();
        let back: SolverReport = serde_json::from_str(&text).unwrap();
        assert_eq!(rep, back);
        let eq = synth(vec![1.0; 2], ThetaSpec::Aligned { direction: 1, norm: 1.0 }, 0.2, 2, 3, 1);
        let rep = solve_xibar_exact(&eq, 0.1).unwrap();
        assert!(serde_json::to_string(&rep).is_ok());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn argmin_beats_origin_and_is_monotone_in_k(seed in any::<u64>(), log_lambda in -2.0f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = rng.random_range(2..=6);
            let x = DMatrix::from_fn(d, d + 2, |_, _| rng.sample::<f64, _>(StandardNormal));
            let theta = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let inst = ProblemInstance::new(x, theta, 0.3).unwrap();
            let lambda = 10f64.powf(log_lambda);
            let mut prev = f64::INFINITY;
            for k in 0..=6 {
                let q = quadratic_coefficients(&inst, lambda, k).unwrap();
                let best = q.evaluate(&solve_xibar_argmin(&q).xibar).unwrap().excess_risk;
                prop_assert!(best <= q.c_scalar * (1.0 + 1e-12));
                prop_assert!(best <= prev * (1.0 + 1e-10), "k={} best={} prev={} rank={}", k, best, prev, inst.rank());
                prev = best;
            }
        }

        #[test]
        fn random_distinct_instances_reach_bound(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = rng.random_range(1..=4);
            let mut s: Vec<f64> = vec![rng.random_range(0.5..2.0)];
            for _ in 1..r {
                let prev = *s.last().unwrap();
                s.push(prev * rng.random_range(0.3..0.9));
            }
            let values: Vec<f64> = (0..r).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let inst = synth(s, ThetaSpec::Coefficients { values }, 0.2, r + 1, r + 3, seed);
            let report = search_lambda_achieving_bound(&inst, &default_lambda_grid()).unwrap();
            prop_assert!(report.success, "{:?}", report.best);
            prop_assert!(report.best.relative_gap <= ACHIEVEMENT_TOLERANCE);
            let xi = report.best.xi.clone();
            if let Some(xi) = xi {
                let back = xi_to_xibar(&xi);
                for (a, b) in back.xibar.iter().zip(&report.best.xibar) {
                    prop_assert!((a - b).abs() <= 1e-8 * b.abs().max(1.0));
                }
            }
        }
    }
}
