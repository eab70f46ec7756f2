//! Geometry of `(S^{d-1})^n`: normalization, tangent projection, Gram
//! matrices, simplex configurations and scalar order parameters.

// `!(x <= tol)` comparisons deliberately treat NaN as a failure.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use nalgebra::{DMatrix, DVector, DVectorView, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rand_core::RngCore;

use crate::error::{Error, Result};

pub const NORM_TOL: f64 = 1e-12;
pub const GRAM_TOL: f64 = 1e-10;
pub const PSD_TOL: f64 = 1e-8;

/// A vector of Euclidean norm one.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitVector(DVector<f64>);

impl UnitVector {
    /// Wraps `v`, checking `|‖v‖ − 1| ≤ 1e-12`.
    pub fn new(v: DVector<f64>) -> Result<Self> {
        let norm = v.norm();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::param("unit vector", format!("norm {norm} is not 1")));
        }
        Ok(UnitVector(v))
    }

    pub fn coords(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl AsRef<DVector<f64>> for UnitVector {
    fn as_ref(&self) -> &DVector<f64> {
        &self.0
    }
}

/// `N(v) = v / ‖v‖`.
pub fn normalize(v: &DVector<f64>) -> Result<UnitVector> {
    let norm = v.norm();
    if !(norm >= 1e-300) {
        return Err(if norm.is_nan() {
            Error::NonFinite("normalize")
        } else {
            Error::ZeroVector
        });
    }
    Ok(UnitVector(v / norm))
}

/// A vector `vec` orthogonal to the unit vector `base`.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentVector {
    pub base: UnitVector,
    pub vec: DVector<f64>,
}

/// `P⊥_x v = v − ⟨x, v⟩ x`.
pub fn tangent_project(x: &UnitVector, v: &DVector<f64>) -> TangentVector {
    let xv = x.0.dot(v);
    TangentVector {
        base: x.clone(),
        vec: v - &x.0 * xv,
    }
}

/// The projector `I − x xᵀ` as a dense matrix.
pub fn projector(x: &DVector<f64>) -> DMatrix<f64> {
    let d = x.len();
    DMatrix::identity(d, d) - x * x.transpose()
}

/// `n` unit vectors in `R^d`, stored as the columns of a `d × n` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenConfig {
    x: DMatrix<f64>,
}

impl TokenConfig {
    /// Wraps the columns of `x`; each must be a unit vector and `n, d ≥ 2`.
    pub fn new(x: DMatrix<f64>) -> Result<Self> {
        Self::check_shape(x.nrows(), x.ncols())?;
        for (i, c) in x.column_iter().enumerate() {
            let norm = c.norm();
            if !((norm - 1.0).abs() <= NORM_TOL) {
                return Err(Error::param(
                    "tokens",
                    format!("token {i} has norm {norm}"),
                ));
            }
        }
        Ok(TokenConfig { x })
    }

    /// Normalizes every column of `x`.
    pub fn from_unnormalized(mut x: DMatrix<f64>) -> Result<Self> {
        Self::check_shape(x.nrows(), x.ncols())?;
        normalize_columns(&mut x)?;
        Ok(TokenConfig { x })
    }

    pub fn from_vectors(tokens: &[UnitVector]) -> Result<Self> {
        let d = tokens.first().map_or(0, |t| t.dim());
        if tokens.iter().any(|t| t.dim() != d) {
            return Err(Error::Shape("tokens have different dimensions".into()));
        }
        let cols: Vec<DVector<f64>> = tokens.iter().map(|t| t.0.clone()).collect();
        Self::check_shape(d, cols.len())?;
        Ok(TokenConfig {
            x: DMatrix::from_columns(&cols),
        })
    }

    fn check_shape(d: usize, n: usize) -> Result<()> {
        if n < 2 || d < 2 {
            return Err(Error::Shape(format!("need n ≥ 2 and d ≥ 2, got n = {n}, d = {d}")));
        }
        Ok(())
    }

    /// Skips validation; callers guarantee unit columns.
    pub(crate) fn from_matrix_unchecked(x: DMatrix<f64>) -> Self {
        debug_assert!(x.column_iter().all(|c| (c.norm() - 1.0).abs() <= NORM_TOL));
        TokenConfig { x }
    }

    pub fn n(&self) -> usize {
        self.x.ncols()
    }

    pub fn d(&self) -> usize {
        self.x.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.x
    }

    pub fn token(&self, i: usize) -> DVectorView<'_, f64> {
        self.x.column(i)
    }

    pub fn unit(&self, i: usize) -> UnitVector {
        UnitVector(self.x.column(i).into_owned())
    }

    /// Token `i` of the result is token `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let cols: Vec<DVector<f64>> = perm.iter().map(|&k| self.x.column(k).into_owned()).collect();
        TokenConfig {
            x: DMatrix::from_columns(&cols),
        }
    }

    /// Applies the orthogonal matrix `o` to every token and renormalizes
    /// away the rounding.
    pub fn rotated(&self, o: &DMatrix<f64>) -> Result<Self> {
        Self::from_unnormalized(o * &self.x)
    }

    pub fn max_norm_error(&self) -> f64 {
        self.x
            .column_iter()
            .map(|c| (c.norm() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// `(1/n) Σ x_i`.
    pub fn barycenter(&self) -> DVector<f64> {
        self.x.column_mean()
    }
}

pub(crate) fn normalize_columns(x: &mut DMatrix<f64>) -> Result<()> {
    for mut c in x.column_iter_mut() {
        let norm = c.norm();
        if !(norm >= 1e-300) {
            return Err(if norm.is_nan() {
                Error::NonFinite("token update")
            } else {
                Error::ZeroVector
            });
        }
        c /= norm;
    }
    Ok(())
}

/// Symmetric, unit-diagonal, positive semi-definite overlap matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix(DMatrix<f64>);

impl GramMatrix {
    /// Validates symmetry, the unit diagonal (1e-12) and PSD (λ_min ≥ −1e-8).
    pub fn new(r: DMatrix<f64>) -> Result<Self> {
        if !r.is_square() {
            return Err(Error::Shape("Gram matrix must be square".into()));
        }
        let n = r.nrows();
        for i in 0..n {
            if (r[(i, i)] - 1.0).abs() > NORM_TOL {
                return Err(Error::param("gram", format!("diagonal entry {i} is {}", r[(i, i)])));
            }
            for j in 0..i {
                if r[(i, j)] != r[(j, i)] {
                    return Err(Error::param("gram", "matrix is not symmetric"));
                }
            }
        }
        let lmin = SymmetricEigen::new(r.clone()).eigenvalues.min();
        if lmin < -PSD_TOL {
            return Err(Error::param("gram", format!("smallest eigenvalue {lmin}")));
        }
        Ok(GramMatrix(r))
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn eigenvalues(&self) -> DVector<f64> {
        SymmetricEigen::new(self.0.clone()).eigenvalues
    }

    /// Largest and smallest off-diagonal entry.
    pub fn off_diagonal_range(&self) -> (f64, f64) {
        let n = self.n();
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for j in 0..n {
            for i in 0..j {
                lo = lo.min(self.0[(i, j)]);
                hi = hi.max(self.0[(i, j)]);
            }
        }
        (lo, hi)
    }
}

/// `R_ij = ⟨x_i, x_j⟩`, exactly symmetric.
pub fn gram(x: &TokenConfig) -> GramMatrix {
    let mut r = x.x.tr_mul(&x.x);
    let n = r.nrows();
    for j in 0..n {
        for i in 0..j {
            r[(j, i)] = r[(i, j)];
        }
    }
    GramMatrix(r)
}

/// `‖(1/n) Σ x_i‖²`, the mean overlap `(1/n²) Σ_ij ⟨x_i, x_j⟩`.
pub fn mean_overlap(x: &TokenConfig) -> f64 {
    x.barycenter().norm_squared().clamp(0.0, 1.0)
}

/// `mean_overlap / d`.
pub fn kappa(x: &TokenConfig) -> f64 {
    mean_overlap(x) / x.d() as f64
}

/// Fills a `rows × cols` matrix with i.i.d. `N(0, std²)` entries in
/// column-major order.
pub fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| std * rng.sample::<f64, _>(StandardNormal))
}

/// A uniformly distributed point on `S^{d-1}`.
pub fn uniform_point<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<UnitVector> {
    normalize(&DVector::from_fn(d, |_, _| rng.sample(StandardNormal)))
}

/// `n` i.i.d. uniform tokens.
pub fn uniform_config<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Result<TokenConfig> {
    TokenConfig::from_unnormalized(gaussian_matrix(d, n, 1.0, rng))
}

/// First `k` columns of a Haar-distributed orthogonal `d × d` matrix
/// (QR of a Gaussian matrix with the sign convention `diag(R) > 0`).
pub fn haar_frame<R: Rng + ?Sized>(d: usize, k: usize, rng: &mut R) -> DMatrix<f64> {
    let g = gaussian_matrix(d, k, 1.0, rng);
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

pub fn haar_orthogonal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DMatrix<f64> {
    haar_frame(d, d, rng)
}

/// Tokens with Gram matrix `(1 − γ) I + γ 11ᵀ`.
///
/// The Cholesky factor of the target Gram matrix supplies coordinates in
/// `R^n`; with an rng they are placed in a uniformly random `n`-frame of
/// `R^d`, otherwise in the first `n` canonical axes.
pub fn simplex_config(
    n: usize,
    d: usize,
    gamma: f64,
    rng: Option<&mut dyn RngCore>,
) -> Result<TokenConfig> {
    if n < 2 {
        return Err(Error::Shape(format!("simplex needs n ≥ 2, got {n}")));
    }
    if d < n {
        return Err(Error::DimensionTooSmall { n, d });
    }
    let lower = -1.0 / (n as f64 - 1.0);
    if !(gamma > lower && gamma < 1.0) {
        return Err(Error::OverlapOutOfRange { gamma, lower });
    }
    let s = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { gamma });
    let chol = s.cholesky().ok_or(Error::OverlapOutOfRange { gamma, lower })?;
    // rows of L are the token coordinates
    let coords = chol.l().transpose();
    let x = match rng {
        Some(rng) => haar_frame(d, n, rng) * coords,
        None => {
            let mut x = DMatrix::zeros(d, n);
            x.view_mut((0, 0), (n, n)).copy_from(&coords);
            x
        }
    };
    TokenConfig::from_unnormalized(x)
}
