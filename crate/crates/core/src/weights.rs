//! The weight law and head sampling: `V = V̄ + σ_V G`, `A = Ā + W W'ᵀ`.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::sphere::gaussian_matrix;

/// Distribution of one attention head.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightLaw {
    pub d: usize,
    pub sigma_v: f64,
    pub sigma_a: f64,
    pub mean_v: DMatrix<f64>,
    pub mean_a: DMatrix<f64>,
    /// Keep the factors `W, W'` on sampled heads (debugging aid).
    pub retain_factors: bool,
}

impl WeightLaw {
    /// Centered law with the given entry scales.
    pub fn centered(d: usize, sigma_v: f64, sigma_a: f64) -> Result<Self> {
        Self::new(d, sigma_v, sigma_a, DMatrix::zeros(d, d), DMatrix::zeros(d, d))
    }

    pub fn new(
        d: usize,
        sigma_v: f64,
        sigma_a: f64,
        mean_v: DMatrix<f64>,
        mean_a: DMatrix<f64>,
    ) -> Result<Self> {
        if d < 2 {
            return Err(Error::param("d", "dimension must be at least 2"));
        }
        if !(sigma_v >= 0.0 && sigma_v.is_finite()) {
            return Err(Error::param("sigma_v", "must be finite and non-negative"));
        }
        if !(sigma_a >= 0.0 && sigma_a.is_finite()) {
            return Err(Error::param("sigma_a", "must be finite and non-negative"));
        }
        if mean_v.shape() != (d, d) || mean_a.shape() != (d, d) {
            return Err(Error::Shape(format!("mean matrices must be {d}×{d}")));
        }
        Ok(WeightLaw {
            d,
            sigma_v,
            sigma_a,
            mean_v,
            mean_a,
            retain_factors: false,
        })
    }

    pub fn with_retained_factors(mut self) -> Self {
        self.retain_factors = true;
        self
    }

    /// `V̄ = 0`: the attention drift vanishes identically.
    pub fn is_centered(&self) -> bool {
        self.mean_v.iter().all(|&v| v == 0.0)
    }

    pub fn has_mean_a(&self) -> bool {
        self.mean_a.iter().any(|&v| v != 0.0)
    }

    /// Whether `A` is almost surely constant.
    pub fn attention_is_deterministic(&self) -> bool {
        self.sigma_a == 0.0
    }
}

/// `σ_V = σ_A = 1/√d`, zero means.
pub fn gaussian_default(d: usize) -> Result<WeightLaw> {
    let s = 1.0 / (d as f64).sqrt();
    WeightLaw::centered(d, s, s)
}

/// One sampled `(V, A)` pair.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadWeights {
    pub v: DMatrix<f64>,
    pub a: DMatrix<f64>,
    /// `(W, W')` when the law asks for them to be kept.
    pub factors: Option<(DMatrix<f64>, DMatrix<f64>)>,
}

impl HeadWeights {
    pub fn new(v: DMatrix<f64>, a: DMatrix<f64>) -> Result<Self> {
        if v.shape() != a.shape() || !v.is_square() {
            return Err(Error::Shape("V and A must be square and of equal size".into()));
        }
        if v.iter().chain(a.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("head weights"));
        }
        Ok(HeadWeights { v, a, factors: None })
    }

    pub fn d(&self) -> usize {
        self.v.nrows()
    }
}

/// Draws `V`, then `W`, then `W'` from `rng` (column-major within each).
pub fn sample_head<R: Rng + ?Sized>(law: &WeightLaw, rng: &mut R) -> HeadWeights {
    draw_head(law, rng, true)
}

/// Same draws as [`sample_head`], but `A` is left at `Ā` when `form_a` is
/// false (the product `W W'ᵀ` is irrelevant when `β = 0`).
pub(crate) fn draw_head<R: Rng + ?Sized>(law: &WeightLaw, rng: &mut R, form_a: bool) -> HeadWeights {
    let d = law.d;
    let v = if law.sigma_v > 0.0 {
        &law.mean_v + gaussian_matrix(d, d, law.sigma_v, rng)
    } else {
        law.mean_v.clone()
    };
    let mut factors = None;
    let a = if law.sigma_a > 0.0 {
        let w = gaussian_matrix(d, d, law.sigma_a, rng);
        let w2 = gaussian_matrix(d, d, law.sigma_a, rng);
        let a = if form_a {
            let mut a = law.mean_a.clone();
            a.gemm(1.0, &w, &w2.transpose(), 1.0);
            a
        } else {
            law.mean_a.clone()
        };
        if law.retain_factors {
            factors = Some((w, w2));
        }
        a
    } else {
        law.mean_a.clone()
    };
    HeadWeights { v, a, factors }
}

/// `H` heads drawn sequentially from one rng.
pub fn sample_layer<R: Rng + ?Sized>(law: &WeightLaw, heads: usize, rng: &mut R) -> Vec<HeadWeights> {
    (0..heads).map(|_| sample_head(law, rng)).collect()
}

pub(crate) fn draw_layer<R: Rng + ?Sized>(
    law: &WeightLaw,
    heads: usize,
    rng: &mut R,
    form_a: bool,
) -> Vec<HeadWeights> {
    (0..heads).map(|_| draw_head(law, rng, form_a)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamRng;
    use crate::stats::RunningStats;

    #[test]
    fn degenerate_law_returns_means() {
        let mv = DMatrix::from_fn(3, 3, |i, j| (i * 3 + j) as f64);
        let ma = DMatrix::from_fn(3, 3, |i, j| i as f64 - j as f64);
        let law = WeightLaw::new(3, 0.0, 0.0, mv.clone(), ma.clone()).unwrap();
        let h = sample_head(&law, &mut StreamRng::seed_from(0));
        assert_eq!(h.v, mv);
        assert_eq!(h.a, ma);
    }

    #[test]
    fn default_scalings() {
        assert_eq!(gaussian_default(4).unwrap().sigma_v.powi(2), 0.25);
        assert!((gaussian_default(100).unwrap().sigma_a.powi(2) - 0.01).abs() < 1e-17);
        for d in [2, 3, 7, 64, 1000] {
            assert!((gaussian_default(d).unwrap().sigma_v * (d as f64).sqrt() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn entry_moments() {
        let d = 4;
        let mut law = gaussian_default(d).unwrap();
        law.mean_a = DMatrix::from_fn(d, d, |i, j| 0.1 * (i as f64 - j as f64));
        let mut rng = StreamRng::seed_from(5);
        let mut v01 = RunningStats::new();
        let mut v_mean = RunningStats::new();
        let mut a12 = RunningStats::new();
        for _ in 0..100_000 {
            let h = sample_head(&law, &mut rng);
            v01.push(h.v[(0, 1)].powi(2));
            v_mean.push(h.v[(2, 3)]);
            a12.push(h.a[(1, 2)]);
        }
        let target = 1.0 / d as f64;
        assert!((v01.mean - target).abs() < 3.0 * v01.stderr());
        assert!(v_mean.mean.abs() < 4.0 / (100_000.0 * d as f64).sqrt());
        assert!((a12.mean - law.mean_a[(1, 2)]).abs() < 3.0 * a12.stderr());
    }

    #[test]
    fn layers_are_deterministic_and_sequential() {
        let law = gaussian_default(5).unwrap();
        let a = sample_layer(&law, 3, &mut StreamRng::seed_from(42));
        let b = sample_layer(&law, 3, &mut StreamRng::seed_from(42));
        assert_eq!(a, b);
        let single = sample_layer(&law, 1, &mut StreamRng::seed_from(42));
        assert_eq!(single[0], sample_head(&law, &mut StreamRng::seed_from(42)));
        assert_ne!(a[0].v, a[1].v);
    }

    #[test]
    fn heads_are_uncorrelated() {
        let law = gaussian_default(3).unwrap();
        let mut rng = StreamRng::seed_from(8);
        let mut c = RunningStats::new();
        for _ in 0..50_000 {
            let l = sample_layer(&law, 2, &mut rng);
            c.push(l[0].v[(0, 0)] * l[1].v[(0, 0)]);
        }
        assert!(c.mean.abs() < 3.0 * c.stderr());
    }

    #[test]
    fn retained_factors_reproduce_a() {
        let law = gaussian_default(6).unwrap().with_retained_factors();
        let h = sample_head(&law, &mut StreamRng::seed_from(2));
        let (w, w2) = h.factors.as_ref().unwrap();
        assert!((&h.a - w * w2.transpose()).amax() < 1e-15);
        let skipped = draw_head(&law, &mut StreamRng::seed_from(2), false);
        assert_eq!(skipped.v, h.v);
    }
}
