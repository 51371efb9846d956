//! Dense symmetric matrix primitives.
//!
//! Everything downstream (covariances, kernel matrices, whitening transforms)
//! is a symmetric matrix, so the module is built around [`SymMatrix`] and a
//! cyclic Jacobi eigensolver. Storage is `nalgebra::DMatrix`; the eigensolver
//! itself is implemented here.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Eigenvalues at or below this (relative to the spectrum scale) are treated
/// as zero when inverting.
pub const SINGULAR_TOL: f64 = 1e-12;

const JACOBI_MAX_SWEEPS: usize = 100;

/// A real symmetric matrix. Construction symmetrizes by averaging, so
/// `get(i, j) == get(j, i)` holds exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::InvalidInput(format!(
                "symmetric matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.nrows() == 0 {
            return Err(Error::InvalidInput("matrix order must be at least 1".into()));
        }
        Ok(Self::symmetrized(m))
    }

    /// Symmetrizes without shape checks. Callers guarantee a nonempty square input.
    pub(crate) fn symmetrized(mut m: DMatrix<f64>) -> Self {
        let n = m.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        SymMatrix(m)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidInput("ragged or non-square matrix rows".into()));
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(DMatrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix(DMatrix::zeros(n, n))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn order(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.order()).map(|i| self.0[(i, i)]).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.order())
            .map(|i| (0..self.order()).map(|j| self.0[(i, j)]).collect())
            .collect()
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 - &other.0)
    }

    pub fn scale(&self, s: f64) -> SymMatrix {
        SymMatrix(&self.0 * s)
    }

    /// `bᵀ · self · b`, symmetric for any conformable `b`.
    pub fn congruence(&self, b: &DMatrix<f64>) -> SymMatrix {
        SymMatrix::symmetrized(b.transpose() * &self.0 * b)
    }

    /// `x · self · x` for symmetric `x`, i.e. the product `X A X`.
    pub fn sandwich(&self, x: &SymMatrix) -> SymMatrix {
        SymMatrix::symmetrized(&x.0 * &self.0 * &x.0)
    }

    /// Inverse through the eigendecomposition. Fails on (numerically) singular input.
    pub fn inverse(&self) -> Result<SymMatrix> {
        let eig = sym_eigen(self)?;
        let scale = eig.values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for (idx, &v) in eig.values.iter().enumerate() {
            if v.abs() <= SINGULAR_TOL * scale {
                return Err(Error::Singular { index: idx, value: v });
            }
        }
        Ok(eig.reconstruct_with(|v| 1.0 / v))
    }
}

impl Serialize for SymMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for SymMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        SymMatrix::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// Eigenvalues sorted nonincreasing, with matching orthonormal eigenvector columns.
#[derive(Debug, Clone)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

impl EigenPairs {
    /// `V · diag(f(values)) · Vᵀ`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for (j, &v) in self.values.iter().enumerate() {
            let fv = f(v);
            for i in 0..n {
                scaled[(i, j)] *= fv;
            }
        }
        SymMatrix::symmetrized(scaled * self.vectors.transpose())
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
pub fn sym_eigen(a: &SymMatrix) -> Result<EigenPairs> {
    if !a.is_finite() {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    let n = a.order();
    // row-major working copy
    let mut w: Vec<f64> = (0..n * n).map(|k| a.0[(k / n, k % n)]).collect();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let total: f64 = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    if total > 0.0 {
        let stop = (f64::EPSILON * total).powi(2);
        for _ in 0..JACOBI_MAX_SWEEPS {
            let mut off = 0.0;
            for p in 0..n {
                for q in (p + 1)..n {
                    off += w[p * n + q] * w[p * n + q];
                }
            }
            if off <= stop {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = w[p * n + q];
                    if apq == 0.0 {
                        continue;
                    }
                    let app = w[p * n + p];
                    let aqq = w[q * n + q];
                    let theta = (aqq - app) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = w[k * n + p];
                        let akq = w[k * n + q];
                        w[k * n + p] = c * akp - s * akq;
                        w[k * n + q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = w[p * n + k];
                        let aqk = w[q * n + k];
                        w[p * n + k] = c * apk - s * aqk;
                        w[q * n + k] = s * apk + c * aqk;
                    }
                    w[p * n + q] = 0.0;
                    w[q * n + p] = 0.0;
                    for k in 0..n {
                        let vkp = v[k * n + p];
                        let vkq = v[k * n + q];
                        v[k * n + p] = c * vkp - s * vkq;
                        v[k * n + q] = s * vkp + c * vkq;
                    }
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| w[j * n + j].total_cmp(&w[i * n + i]));
    let values = order.iter().map(|&i| w[i * n + i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| v[r * n + order[c]]);
    Ok(EigenPairs { values, vectors })
}

/// Automatic ridge: `1e-8 · trace(A) / order`.
pub fn auto_ridge(a: &SymMatrix) -> f64 {
    1e-8 * a.trace().abs() / a.order() as f64
}

/// `(A + ridge·I)^{-1/2}` through the eigendecomposition.
pub fn inv_sqrt(a: &SymMatrix, ridge: f64) -> Result<SymMatrix> {
    if !(ridge >= 0.0) {
        return Err(Error::InvalidInput(format!("ridge must be nonnegative, got {ridge}")));
    }
    let eig = sym_eigen(a)?;
    let scale = eig.values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    for (idx, &v) in eig.values.iter().enumerate() {
        if v + ridge <= SINGULAR_TOL * scale {
            return Err(Error::Singular { index: idx, value: v });
        }
    }
    Ok(eig.reconstruct_with(|v| 1.0 / (v + ridge).sqrt()))
}

/// Solution of `M β = l S β` with `βᵀ S β = I`.
#[derive(Debug, Clone)]
pub struct GeneralizedEigen {
    /// Generalized eigenvalues, nonincreasing.
    pub values: Vec<f64>,
    /// Eigenvectors of the whitened problem `S^{-1/2} M S^{-1/2}`.
    pub whitened: EigenPairs,
    /// Columns are the generalized eigenvectors `β_j = S^{-1/2} v_j`.
    pub basis: DMatrix<f64>,
}

pub fn generalized_eigen(m: &SymMatrix, s: &SymMatrix) -> Result<GeneralizedEigen> {
    if m.order() != s.order() {
        return Err(Error::DimensionMismatch {
            expected: s.order(),
            found: m.order(),
        });
    }
    let w = inv_sqrt(s, 0.0).map_err(|e| match e {
        Error::Singular { .. } => Error::NotPositiveDefinite,
        other => other,
    })?;
    generalized_eigen_whitened(m, &w)
}

/// Same as [`generalized_eigen`] with a precomputed `S^{-1/2}`.
pub fn generalized_eigen_whitened(m: &SymMatrix, s_inv_sqrt: &SymMatrix) -> Result<GeneralizedEigen> {
    if m.order() != s_inv_sqrt.order() {
        return Err(Error::DimensionMismatch {
            expected: s_inv_sqrt.order(),
            found: m.order(),
        });
    }
    let c = m.sandwich(s_inv_sqrt);
    let whitened = sym_eigen(&c)?;
    let basis = s_inv_sqrt.matrix() * &whitened.vectors;
    Ok(GeneralizedEigen {
        values: whitened.values.clone(),
        whitened,
        basis,
    })
}

fn orthonormal_columns(a: &DMatrix<f64>) -> DMatrix<f64> {
    let k = a.ncols();
    let q = a.clone().qr().q();
    q.columns(0, k).into_owned()
}

/// Largest principal angle (radians) between the column spaces of `a` and `b`,
/// measured in the inner product `⟨x, y⟩ = xᵀ S y` when a metric is given.
///
/// Computed from the sine side (`‖(I − P_a) Q_b‖₂`) so that small angles keep
/// full relative precision.
pub fn principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>, metric: Option<&SymMatrix>) -> Result<f64> {
    if a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            found: b.nrows(),
        });
    }
    if a.ncols() != b.ncols() || a.ncols() == 0 {
        return Err(Error::InvalidInput(format!(
            "subspaces must have equal positive dimension, got {} and {}",
            a.ncols(),
            b.ncols()
        )));
    }
    let (a, b) = match metric {
        Some(s) => {
            let root = sym_eigen(s)?.reconstruct_with(|v| v.max(0.0).sqrt());
            (root.matrix() * a, root.matrix() * b)
        }
        None => (a.clone(), b.clone()),
    };
    let qa = orthonormal_columns(&a);
    let qb = orthonormal_columns(&b);
    let resid = &qb - &qa * (qa.transpose() * &qb);
    let gram = SymMatrix::symmetrized(resid.transpose() * resid);
    let top = sym_eigen(&gram)?.values[0].max(0.0);
    Ok(top.sqrt().min(1.0).asin())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn random_spd(n: usize, seed: u64) -> SymMatrix {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        SymMatrix::new(&g * g.transpose() + DMatrix::identity(n, n) * 0.5).unwrap()
    }

    #[test]
    fn construction_symmetrizes() {
        let m = SymMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 4.0, 3.0])).unwrap();
        assert_eq!(m.get(0, 1), 3.0);
        assert_eq!(m.get(1, 0), 3.0);
        assert!(SymMatrix::new(DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn eigen_of_identity() {
        let e = sym_eigen(&SymMatrix::identity(3)).unwrap();
        assert_eq!(e.values, vec![1.0, 1.0, 1.0]);
        let vtv = e.vectors.transpose() * &e.vectors;
        assert_abs_diff_eq!((vtv - DMatrix::identity(3, 3)).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn eigen_of_two_by_two() {
        // characteristic polynomial (2-l)^2 - 1 = 0 -> l = 3, 1
        let a = SymMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let e = sym_eigen(&a).unwrap();
        assert_abs_diff_eq!(e.values[0], 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(e.values[1], 1.0, epsilon = 1e-14);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert_abs_diff_eq!(e.vectors[(0, 0)].abs(), h, epsilon = 1e-12);
        assert_abs_diff_eq!(e.vectors[(1, 0)].abs(), h, epsilon = 1e-12);
        assert!(e.vectors[(0, 1)] * e.vectors[(1, 1)] < 0.0);
    }

    #[test]
    fn eigen_of_diagonal() {
        let e = sym_eigen(&SymMatrix::from_diagonal(&[2.0, 5.0, 0.0])).unwrap();
        assert_eq!(e.values, vec![5.0, 2.0, 0.0]);
    }

    #[test]
    fn eigen_rejects_non_finite() {
        let a = SymMatrix::from_diagonal(&[1.0, f64::NAN]);
        assert!(matches!(sym_eigen(&a), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn inv_sqrt_examples() {
        let i4 = inv_sqrt(&SymMatrix::identity(4), 0.0).unwrap();
        assert_abs_diff_eq!((i4.matrix() - DMatrix::identity(4, 4)).norm(), 0.0, epsilon = 1e-14);

        let d = inv_sqrt(&SymMatrix::from_diagonal(&[4.0, 9.0]), 0.0).unwrap();
        assert_abs_diff_eq!(d.get(0, 0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(d.get(1, 1), 1.0 / 3.0, epsilon = 1e-15);
        assert_eq!(d.get(0, 1), 0.0);

        let r = inv_sqrt(&SymMatrix::from_diagonal(&[1.0, 0.0]), 1e-6).unwrap();
        assert_abs_diff_eq!(r.get(0, 0), 1.0 / (1.0f64 + 1e-6).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(r.get(1, 1), 1e3, epsilon = 1e-9);
    }

    #[test]
    fn inv_sqrt_singular_names_index() {
        let err = inv_sqrt(&SymMatrix::from_diagonal(&[3.0, 0.0, 1.0]), 0.0).unwrap_err();
        match err {
            Error::Singular { index, value } => {
                assert_eq!(index, 2);
                assert_eq!(value, 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn generalized_identity_metric() {
        let g = generalized_eigen(&SymMatrix::from_diagonal(&[1.0, 3.0]), &SymMatrix::identity(2)).unwrap();
        assert_eq!(g.values, vec![3.0, 1.0]);
        assert_abs_diff_eq!(g.basis[(1, 0)].abs(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g.basis[(0, 1)].abs(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn generalized_equal_pair_gives_unit_values() {
        let s = random_spd(5, 3);
        let g = generalized_eigen(&s, &s).unwrap();
        for v in g.values {
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn generalized_matches_cholesky_whitening_oracle() {
        // independent route: S = L Lᵀ, C = L⁻¹ M L⁻ᵀ, β = L⁻ᵀ u
        let m = random_spd(4, 11);
        let s = random_spd(4, 12);
        let g = generalized_eigen(&m, &s).unwrap();

        let l = s.matrix().clone().cholesky().unwrap().l();
        let linv = l.clone().try_inverse().unwrap();
        let c = &linv * m.matrix() * linv.transpose();
        let sc = nalgebra::SymmetricEigen::new(c);
        let mut oracle: Vec<f64> = sc.eigenvalues.iter().copied().collect();
        oracle.sort_by(|a, b| b.total_cmp(a));
        for (a, b) in g.values.iter().zip(&oracle) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10 * oracle[0]);
        }
        for j in 0..4 {
            let k = sc.eigenvalues.iter().position(|&v| (v - g.values[j]).abs() < 1e-9).unwrap();
            let beta = linv.transpose() * sc.eigenvectors.column(k);
            let angle = principal_angle(
                &DMatrix::from_column_slice(4, 1, beta.as_slice()),
                &g.basis.columns(j, 1).into_owned(),
                None,
            )
            .unwrap();
            assert!(angle < 1e-8, "direction {j}: angle {angle}");
        }
    }

    #[test]
    fn generalized_errors() {
        let m = SymMatrix::identity(3);
        assert!(matches!(
            generalized_eigen(&m, &SymMatrix::identity(2)),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            generalized_eigen(&m, &SymMatrix::from_diagonal(&[1.0, -1.0, 1.0])),
            Err(Error::NotPositiveDefinite)
        ));
    }

    #[test]
    fn principal_angle_basics() {
        let e1 = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let e2 = DMatrix::from_column_slice(3, 1, &[0.0, 2.0, 0.0]);
        let diag = DMatrix::from_column_slice(3, 1, &[1.0, 1.0, 0.0]);
        assert_abs_diff_eq!(principal_angle(&e1, &e1.scale(-3.0), None).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            principal_angle(&e1, &e2, None).unwrap(),
            std::f64::consts::FRAC_PI_2,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            principal_angle(&e1, &diag, None).unwrap(),
            std::f64::consts::FRAC_PI_4,
            epsilon = 1e-12
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn eigen_reconstructs(n in 1usize..9, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let a = SymMatrix::new(DMatrix::from_fn(n, n, |_, _| rng.random_range(-5.0..5.0))).unwrap();
            let e = sym_eigen(&a).unwrap();
            let scale = a.norm().max(1e-300);
            prop_assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
            let vtv = e.vectors.transpose() * &e.vectors;
            prop_assert!((vtv - DMatrix::identity(n, n)).norm() < 1e-10);
            let rec = e.reconstruct_with(|v| v);
            prop_assert!((rec.matrix() - a.matrix()).norm() < 1e-8 * scale);
            for j in 0..n {
                let v = e.vectors.column(j);
                let r = a.matrix() * v - v * e.values[j];
                prop_assert!(r.norm() < 1e-8 * scale);
            }
        }

        #[test]
        fn generalized_contract(n in 1usize..7, seed in any::<u64>()) {
            let m = random_spd(n, seed);
            let s = random_spd(n, seed.wrapping_add(1));
            let g = generalized_eigen(&m, &s).unwrap();
            let btsb = g.basis.transpose() * s.matrix() * &g.basis;
            prop_assert!((btsb - DMatrix::identity(n, n)).norm() < 1e-8);
            for j in 0..n {
                let b = g.basis.column(j);
                let r = m.matrix() * b - s.matrix() * b * g.values[j];
                prop_assert!(r.norm() < 1e-6 * m.norm());
            }
            // Σ l_j = trace(S⁻¹ M)
            let tr = (s.inverse().unwrap().matrix() * m.matrix()).trace();
            let sum: f64 = g.values.iter().sum();
            prop_assert!((sum - tr).abs() < 1e-6 * tr.abs().max(1e-12));
        }

        #[test]
        fn spd_spectrum_nonnegative(n in 1usize..9, seed in any::<u64>()) {
            let e = sym_eigen(&random_spd(n, seed)).unwrap();
            prop_assert!(e.values.iter().all(|&v| v >= -1e-10));
        }

        #[test]
        fn inv_sqrt_whitens(n in 1usize..7, seed in any::<u64>()) {
            let a = random_spd(n, seed);
            let r = inv_sqrt(&a, 0.0).unwrap();
            let w = r.matrix() * a.matrix() * r.matrix();
            prop_assert!((w - DMatrix::identity(n, n)).norm() < 1e-6);
        }
    }
}
