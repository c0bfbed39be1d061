//! Fixed-design problem instances and the singular value decomposition they
//! are read through.
//!
//! Covariates are stored as the columns of a `d × n` matrix `X`. Every
//! closed-form risk quantity is expressed in the left singular basis of `X`,
//! so an instance caches its [`Spectrum`] at construction.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::serial::{exact_dvector, exact_f64, exact_vec, row_major};

/// Numerical rank cutoff relative to the largest singular value.
pub const DEFAULT_RANK_TOLERANCE: f64 = 1e-9;

/// Relative Frobenius tolerance for accepting a supplied spectrum.
const RECONSTRUCTION_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Spectrum {
    /// Nonincreasing, length `min(d, n)`.
    #[serde(with = "exact_vec")]
    pub singular_values: Vec<f64>,
    /// `d × d` orthonormal; column `j` is `u_j`.
    #[serde(with = "row_major")]
    pub left_vectors: DMatrix<f64>,
    /// `n × min(d, n)` with orthonormal columns; column `j` is `v_j`.
    #[serde(with = "row_major")]
    pub right_vectors: DMatrix<f64>,
    pub rank: usize,
    pub rank_tolerance: f64,
}

impl Spectrum {
    pub fn dim(&self) -> usize {
        self.left_vectors.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.right_vectors.nrows()
    }

    /// Nonzero singular values `s_1 ≥ … ≥ s_r`.
    pub fn nonzero(&self) -> &[f64] {
        &self.singular_values[..self.rank]
    }

    /// `Σ_{j ≤ r} s_j u_j v_jᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let d = self.dim();
        let n = self.n_samples();
        let mut out = DMatrix::zeros(d, n);
        for j in 0..self.rank {
            let u = self.left_vectors.column(j);
            let v = self.right_vectors.column(j);
            out.ger(self.singular_values[j], &u, &v, 1.0);
        }
        out
    }

    /// Largest entrywise deviation of `UᵀU` from the identity.
    pub fn orthonormality_defect(&self) -> f64 {
        let gram = self.left_vectors.transpose() * &self.left_vectors;
        let id = DMatrix::<f64>::identity(gram.nrows(), gram.ncols());
        (gram - id).amax()
    }

    fn recount_rank(&mut self) {
        let top = self.singular_values.first().copied().unwrap_or(0.0);
        self.rank = if top > 0.0 {
            self.singular_values
                .iter()
                .take_while(|&&s| s > self.rank_tolerance * top)
                .count()
        } else {
            0
        };
    }
}

/// Singular value decomposition of a `d × n` matrix with a completed left
/// basis and a relative rank cutoff.
pub fn decompose(x_matrix: &DMatrix<f64>, rank_tolerance: f64) -> Result<Spectrum> {
    ensure_finite(x_matrix.as_slice(), "data matrix")?;
    if !(rank_tolerance > 0.0 && rank_tolerance < 1.0) {
        return Err(Error::Input(format!(
            "rank tolerance must lie in (0, 1), got {rank_tolerance}"
        )));
    }
    let (d, n) = x_matrix.shape();
    if d == 0 || n == 0 {
        return Err(Error::Input("data matrix must be non-empty".into()));
    }
    let m = d.min(n);
    let svd = x_matrix.clone().svd(true, true);
    let u = svd.u.expect("left vectors requested");
    let v_t = svd.v_t.expect("right vectors requested");

    let mut order: Vec<usize> = (0..m).collect();
    // stable: exact ties keep the factorization's order
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));

    let singular_values: Vec<f64> = order.iter().map(|&j| svd.singular_values[j]).collect();
    let u_thin = DMatrix::from_fn(d, m, |i, c| u[(i, order[c])]);
    let right_vectors = DMatrix::from_fn(n, m, |i, c| v_t[(order[c], i)]);
    let left_vectors = complete_basis(&u_thin);

    let mut spectrum = Spectrum {
        singular_values,
        left_vectors,
        right_vectors,
        rank: 0,
        rank_tolerance,
    };
    spectrum.recount_rank();
    Ok(spectrum)
}

/// Extends orthonormal columns to a square orthonormal matrix.
fn complete_basis(columns: &DMatrix<f64>) -> DMatrix<f64> {
    let (rows, cols) = columns.shape();
    if cols >= rows {
        return columns.columns(0, rows).into_owned();
    }
    let mut stacked = DMatrix::zeros(rows, cols + rows);
    stacked.columns_mut(0, cols).copy_from(columns);
    stacked
        .columns_mut(cols, rows)
        .copy_from(&DMatrix::<f64>::identity(rows, rows));
    let q = stacked.qr().q();
    let mut out = DMatrix::zeros(rows, rows);
    out.columns_mut(0, cols).copy_from(columns);
    out.columns_mut(cols, rows - cols)
        .copy_from(&q.columns(cols, rows - cols));
    out
}

/// A fixed-design regression problem `(X, θ*, γ²)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "InstanceDocument", into = "InstanceDocument")]
pub struct ProblemInstance {
    x_matrix: DMatrix<f64>,
    theta_star: DVector<f64>,
    gamma2: f64,
    spectrum: Spectrum,
}

impl ProblemInstance {
    pub fn new(x_matrix: DMatrix<f64>, theta_star: DVector<f64>, gamma2: f64) -> Result<Self> {
        let spectrum = decompose(&x_matrix, DEFAULT_RANK_TOLERANCE)?;
        Self::with_spectrum(x_matrix, theta_star, gamma2, spectrum)
    }

    /// Builds an instance around a known decomposition, which must
    /// reconstruct `x_matrix`. Used when exact ties in the singular values
    /// matter (a fresh SVD would pick an arbitrary basis inside a tied
    /// eigenspace).
    pub fn with_spectrum(
        x_matrix: DMatrix<f64>,
        theta_star: DVector<f64>,
        gamma2: f64,
        spectrum: Spectrum,
    ) -> Result<Self> {
        ensure_finite(x_matrix.as_slice(), "data matrix")?;
        ensure_finite(theta_star.as_slice(), "true parameter")?;
        if !(gamma2.is_finite() && gamma2 >= 0.0) {
            return Err(Error::Input(format!(
                "noise variance must be finite and nonnegative, got {gamma2}"
            )));
        }
        let (d, n) = x_matrix.shape();
        if theta_star.len() != d {
            return Err(Error::Dimension {
                expected: d,
                found: theta_star.len(),
                context: "true parameter length",
            });
        }
        if spectrum.dim() != d || spectrum.n_samples() != n {
            return Err(Error::Input(format!(
                "spectrum is for a {}x{} matrix, data is {d}x{n}",
                spectrum.dim(),
                spectrum.n_samples()
            )));
        }
        let scale = x_matrix.norm().max(f64::MIN_POSITIVE);
        let err = (spectrum.reconstruct() - &x_matrix).norm() / scale;
        if err > RECONSTRUCTION_TOLERANCE && x_matrix.norm() > 0.0 {
            return Err(Error::Input(format!(
                "spectrum does not reconstruct the data matrix (relative error {err:.3e})"
            )));
        }
        Ok(Self {
            x_matrix,
            theta_star,
            gamma2,
            spectrum,
        })
    }

    pub fn x_matrix(&self) -> &DMatrix<f64> {
        &self.x_matrix
    }

    pub fn theta_star(&self) -> &DVector<f64> {
        &self.theta_star
    }

    pub fn gamma2(&self) -> f64 {
        self.gamma2
    }

    pub fn n_samples(&self) -> usize {
        self.x_matrix.ncols()
    }

    pub fn dim(&self) -> usize {
        self.x_matrix.nrows()
    }

    pub fn rank(&self) -> usize {
        self.spectrum.rank
    }

    pub fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }

    /// `Xᵀθ*`, the noiseless response.
    pub fn noiseless_response(&self) -> DVector<f64> {
        self.x_matrix.tr_mul(&self.theta_star)
    }

    /// `Xᵀθ* + ε` with `ε ~ N(0, γ² I)`.
    pub fn sample_response<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let gamma = self.gamma2.sqrt();
        let mut y = self.noiseless_response();
        for v in y.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += gamma * z;
        }
        y
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Clone, Serialize, Deserialize)]
struct InstanceDocument {
    #[serde(with = "row_major")]
    x_matrix: DMatrix<f64>,
    #[serde(with = "exact_dvector")]
    theta_star: DVector<f64>,
    #[serde(with = "exact_f64")]
    gamma2: f64,
    n_samples: usize,
    spectrum: Spectrum,
}

impl From<ProblemInstance> for InstanceDocument {
    fn from(p: ProblemInstance) -> Self {
        Self {
            n_samples: p.n_samples(),
            x_matrix: p.x_matrix,
            theta_star: p.theta_star,
            gamma2: p.gamma2,
            spectrum: p.spectrum,
        }
    }
}

impl TryFrom<InstanceDocument> for ProblemInstance {
    type Error = Error;

    fn try_from(doc: InstanceDocument) -> Result<Self> {
        if doc.n_samples != doc.x_matrix.ncols() {
            return Err(Error::Input(format!(
                "n_samples {} disagrees with {} data columns",
                doc.n_samples,
                doc.x_matrix.ncols()
            )));
        }
        ProblemInstance::with_spectrum(doc.x_matrix, doc.theta_star, doc.gamma2, doc.spectrum)
    }
}

/// Squared projections `⟨θ*, u_j⟩²` of the true parameter on the left
/// singular basis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaComponents {
    pub components: Vec<f64>,
}

impl ThetaComponents {
    pub fn total(&self) -> f64 {
        self.components.iter().sum()
    }
}

pub fn theta_components(instance: &ProblemInstance) -> ThetaComponents {
    let proj = instance
        .spectrum
        .left_vectors
        .tr_mul(&instance.theta_star);
    ThetaComponents {
        components: proj.iter().map(|p| p * p).collect(),
    }
}

/// How the synthetic `θ*` is assembled from the left singular vectors.
/// Directions are 1-based, matching `u_1, u_2, …`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ThetaSpec {
    /// `θ* = norm · u_direction`.
    Aligned { direction: usize, norm: f64 },
    /// `θ* = weight · (u_1 + … + u_count)`.
    EqualWeight { count: usize, weight: f64 },
    /// `θ* = Σ_j values[j] · u_{j+1}`.
    Coefficients { values: Vec<f64> },
}

impl ThetaSpec {
    fn coefficients(&self, d: usize) -> Result<Vec<f64>> {
        let mut c = vec![0.0; d];
        match self {
            ThetaSpec::Aligned { direction, norm } => {
                if *direction == 0 || *direction > d {
                    return Err(Error::Input(format!(
                        "direction u_{direction} does not exist in dimension {d}"
                    )));
                }
                c[direction - 1] = *norm;
            }
            ThetaSpec::EqualWeight { count, weight } => {
                if *count > d {
                    return Err(Error::Input(format!(
                        "cannot weight {count} directions in dimension {d}"
                    )));
                }
                c[..*count].fill(*weight);
            }
            ThetaSpec::Coefficients { values } => {
                if values.len() > d {
                    return Err(Error::Dimension {
                        expected: d,
                        found: values.len(),
                        context: "theta coefficients",
                    });
                }
                c[..values.len()].copy_from_slice(values);
            }
        }
        ensure_finite(&c, "theta coefficients")?;
        Ok(c)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    /// Orthonormal factors of seeded Gaussian matrices.
    #[default]
    Random,
    /// Coordinate axes; handy when debugging by hand.
    Identity,
}

/// Recipe for a synthetic fixed-design instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub d: usize,
    pub n: usize,
    /// Nonzero singular values, nonincreasing; their count is the rank.
    pub singular_values: Vec<f64>,
    pub theta: ThetaSpec,
    /// Noise standard deviation γ.
    pub gamma: f64,
    pub seed: u64,
    #[serde(default)]
    pub basis: BasisKind,
}

impl SyntheticSpec {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }
}

/// Builds `X = U_r diag(s) V_rᵀ` with exactly the requested singular values
/// and caches that decomposition on the instance.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<ProblemInstance> {
    let SyntheticSpec { d, n, .. } = *spec;
    let r = spec.rank();
    if d == 0 || n == 0 {
        return Err(Error::Input("d and n must be positive".into()));
    }
    if r > d.min(n) {
        return Err(Error::Input(format!(
            "rank {r} exceeds min(d, n) = {}",
            d.min(n)
        )));
    }
    ensure_finite(&spec.singular_values, "singular values")?;
    if spec.singular_values.iter().any(|&s| s <= 0.0) {
        return Err(Error::Input("singular values must be strictly positive".into()));
    }
    if spec.singular_values.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::Input("singular values must be nonincreasing".into()));
    }
    if !(spec.gamma.is_finite() && spec.gamma >= 0.0) {
        return Err(Error::Input(format!("gamma must be nonnegative, got {}", spec.gamma)));
    }
    let m = d.min(n);

    let (left, right) = match spec.basis {
        BasisKind::Identity => (
            DMatrix::<f64>::identity(d, d),
            DMatrix::<f64>::identity(n, m),
        ),
        BasisKind::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let left = orthonormal_factor(d, d, &mut rng);
            let right = orthonormal_factor(n, m, &mut rng);
            (left, right)
        }
    };

    let mut singular_values = spec.singular_values.clone();
    singular_values.resize(m, 0.0);

    let mut x_matrix = DMatrix::zeros(d, n);
    for j in 0..r {
        x_matrix.ger(singular_values[j], &left.column(j), &right.column(j), 1.0);
    }

    let coeffs = spec.theta.coefficients(d)?;
    let theta_star = &left * DVector::from_vec(coeffs);

    let mut spectrum = Spectrum {
        singular_values,
        left_vectors: left,
        right_vectors: right,
        rank: r,
        rank_tolerance: DEFAULT_RANK_TOLERANCE,
    };
    spectrum.recount_rank();
    ProblemInstance::with_spectrum(x_matrix, theta_star, spec.gamma * spec.gamma, spectrum)
}

fn orthonormal_factor<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    // fix column signs so the factor is a deterministic function of g
    for j in 0..cols {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig3a(seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            d: 4,
            n: 4,
            singular_values: vec![1.0, 0.5, 1.0 / 3.0, 0.25],
            theta: ThetaSpec::Aligned { direction: 1, norm: 1.0 },
            gamma: 0.125,
            seed,
            basis: BasisKind::Random,
        }
    }

    #[test]
    fn identity_has_full_rank_and_unit_values() {
        let s = decompose(&DMatrix::identity(3, 3), DEFAULT_RANK_TOLERANCE).unwrap();
        assert_eq!(s.rank, 3);
        for v in &s.singular_values {
            assert!((v - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_matrix_has_rank_zero() {
        let s = decompose(&DMatrix::zeros(2, 4), DEFAULT_RANK_TOLERANCE).unwrap();
        assert_eq!(s.rank, 0);
        assert_eq!(s.left_vectors.shape(), (2, 2));
        assert!(s.orthonormality_defect() < 1e-12);
    }

    #[test]
    fn padded_diagonal_reconstructs() {
        let mut x = DMatrix::zeros(2, 5);
        x[(0, 0)] = 1.0;
        x[(1, 1)] = 2.0;
        let s = decompose(&x, DEFAULT_RANK_TOLERANCE).unwrap();
        assert_eq!(s.rank, 2);
        assert!((s.singular_values[0] - 2.0).abs() < 1e-14);
        assert!((s.singular_values[1] - 1.0).abs() < 1e-14);
        assert!((s.reconstruct() - x).norm() < 1e-14);
    }

    #[test]
    fn wide_and_tall_matrices_get_complete_left_basis() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(d, n) in &[(6usize, 3usize), (3, 6), (5, 5)] {
            let x = DMatrix::from_fn(d, n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let s = decompose(&x, DEFAULT_RANK_TOLERANCE).unwrap();
            assert_eq!(s.left_vectors.shape(), (d, d));
            assert!(s.orthonormality_defect() < 1e-10);
            assert!((s.reconstruct() - &x).norm() <= 1e-10 * x.norm());
            assert!(s.singular_values.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let mut x = DMatrix::<f64>::identity(2, 2);
        x[(0, 1)] = f64::NAN;
        assert!(matches!(decompose(&x, 1e-9), Err(Error::Input(_))));
        assert!(decompose(&DMatrix::identity(2, 2), 1.5).is_err());
    }

    #[test]
    fn theta_aligned_with_first_direction() {
        let inst = make_synthetic(&fig3a(1)).unwrap();
        let c = theta_components(&inst);
        assert!((c.components[0] - 1.0).abs() < 1e-12);
        assert!(c.components[1..].iter().all(|&v| v < 1e-24));
    }

    #[test]
    fn theta_split_over_two_directions() {
        let mut spec = fig3a(2);
        spec.theta = ThetaSpec::EqualWeight {
            count: 2,
            weight: 1.0 / 2f64.sqrt(),
        };
        let c = theta_components(&make_synthetic(&spec).unwrap());
        assert!((c.components[0] - 0.5).abs() < 1e-12);
        assert!((c.components[1] - 0.5).abs() < 1e-12);
        assert!(c.components[2].abs() < 1e-24);
    }

    #[test]
    fn components_sum_to_squared_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = DMatrix::from_fn(5, 9, |_, _| rng.sample::<f64, _>(StandardNormal));
        let theta = DVector::from_fn(5, |_, _| rng.sample::<f64, _>(StandardNormal));
        let inst = ProblemInstance::new(x, theta.clone(), 0.3).unwrap();
        let c = theta_components(&inst);
        // independent route: direct dot products against each column of U
        for (j, cj) in c.components.iter().enumerate() {
            let dot = inst.spectrum().left_vectors.column(j).dot(&theta);
            assert!((cj - dot * dot).abs() < 1e-12);
        }
        let norm2 = theta.norm_squared();
        assert!((c.total() - norm2).abs() <= 1e-10 * norm2);
    }

    #[test]
    fn synthetic_recovers_requested_singular_values() {
        for seed in 0..5 {
            let spec = SyntheticSpec {
                d: 6,
                n: 9,
                singular_values: vec![3.0, 2.0, 0.7],
                theta: ThetaSpec::Aligned { direction: 2, norm: 1.5 },
                gamma: 0.2,
                seed,
                basis: BasisKind::Random,
            };
            let inst = make_synthetic(&spec).unwrap();
            let fresh = decompose(inst.x_matrix(), DEFAULT_RANK_TOLERANCE).unwrap();
            assert_eq!(fresh.rank, 3);
            for (a, b) in fresh.singular_values.iter().zip([3.0, 2.0, 0.7]) {
                assert!((a - b).abs() < 1e-8);
            }
            let x = inst.x_matrix();
            assert!((inst.spectrum().reconstruct() - x).norm() <= 1e-8 * x.norm());
        }
    }

    #[test]
    fn synthetic_is_bit_deterministic() {
        let a = make_synthetic(&fig3a(42)).unwrap();
        let b = make_synthetic(&fig3a(42)).unwrap();
        let c = make_synthetic(&fig3a(43)).unwrap();
        assert!(a
            .x_matrix()
            .iter()
            .zip(b.x_matrix().iter())
            .all(|(p, q)| p.to_bits() == q.to_bits()));
        assert!(a.x_matrix() != c.x_matrix());
    }

    #[test]
    fn tied_singular_values_are_kept() {
        let spec = SyntheticSpec {
            d: 4,
            n: 6,
            singular_values: vec![1.0; 4],
            theta: ThetaSpec::Aligned { direction: 1, norm: 1.0 },
            gamma: 0.1,
            seed: 5,
            basis: BasisKind::Random,
        };
        let inst = make_synthetic(&spec).unwrap();
        assert_eq!(inst.rank(), 4);
        assert!(inst.spectrum().nonzero().iter().all(|&s| s == 1.0));
    }

    #[test]
    fn rank_above_min_dimension_is_rejected() {
        let mut spec = fig3a(0);
        spec.n = 3;
        assert!(matches!(make_synthetic(&spec), Err(Error::Input(_))));
    }

    #[test]
    fn identity_basis_places_theta_on_axes() {
        let mut spec = fig3a(0);
        spec.basis = BasisKind::Identity;
        let inst = make_synthetic(&spec).unwrap();
        assert_eq!(inst.theta_star()[0], 1.0);
        assert_eq!(inst.x_matrix()[(1, 1)], 0.5);
    }

    #[test]
    fn json_roundtrip_is_exact() {
        let inst = make_synthetic(&fig3a(9)).unwrap();
        let text = inst.to_json().unwrap();
        let back = ProblemInstance::from_json(&text).unwrap();
        assert!(inst
            .x_matrix()
            .iter()
            .zip(back.x_matrix().iter())
            .all(|(p, q)| p.to_bits() == q.to_bits()));
        assert_eq!(back.gamma2().to_bits(), inst.gamma2().to_bits());
        assert_eq!(back.rank(), 4);
    }

    #[test]
    fn mismatched_spectrum_is_rejected() {
        let inst = make_synthetic(&fig3a(9)).unwrap();
        let other = make_synthetic(&fig3a(10)).unwrap();
        let err = ProblemInstance::with_spectrum(
            inst.x_matrix().clone(),
            inst.theta_star().clone(),
            inst.gamma2(),
            other.spectrum().clone(),
        );
        assert!(err.is_err());
    }
}
