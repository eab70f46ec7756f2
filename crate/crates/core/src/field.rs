//! Exact-in-law sampling of attention fields restricted to a token span.
//!
//! Only the products `Wᵀ k`, `W'ᵀ q` and `G m` ever enter the dynamics, and
//! for an orthonormal frame `Q` of the relevant vectors, `Wᵀ Q` has i.i.d.
//! `N(0, σ²)` entries. Sampling the `d × r` block instead of the full
//! `d × d` matrix gives the same joint law of all velocities at a fraction
//! of the cost when `r ≪ d`. When the vectors span half the space or more
//! the canonical basis is used, which is the plain dense computation.

use nalgebra::DMatrix;
use rand::Rng;

use crate::attention::softmax_columns;
use crate::sphere::gaussian_matrix;
use crate::weights::WeightLaw;

const RANK_TOL: f64 = 1e-10;

/// Orthonormal basis of a subspace, or the whole space.
#[derive(Clone, Debug)]
pub(crate) struct Frame {
    basis: Option<DMatrix<f64>>,
    d: usize,
}

impl Frame {
    pub fn canonical(d: usize) -> Self {
        Frame { basis: None, d }
    }

    /// Frame spanning the columns of `v` (rank-revealing Gram–Schmidt with
    /// re-orthogonalization); falls back to the canonical basis when the
    /// span is at least `d/2`-dimensional or `dense` is set.
    pub fn spanning(v: &DMatrix<f64>, dense: bool) -> Self {
        let d = v.nrows();
        if dense || 2 * v.ncols() >= d {
            return Self::canonical(d);
        }
        let mut basis: Vec<nalgebra::DVector<f64>> = Vec::new();
        for c in v.column_iter() {
            let scale = c.norm();
            if scale == 0.0 {
                continue;
            }
            let mut w = c.into_owned();
            for _ in 0..2 {
                for q in &basis {
                    let p = q.dot(&w);
                    w.axpy(-p, q, 1.0);
                }
            }
            let r = w.norm();
            if r > RANK_TOL * scale {
                basis.push(w / r);
            }
        }
        if 2 * basis.len() >= d {
            return Self::canonical(d);
        }
        Frame {
            basis: Some(DMatrix::from_columns(&basis)),
            d,
        }
    }

    pub fn rank(&self) -> usize {
        self.basis.as_ref().map_or(self.d, |b| b.ncols())
    }

    pub fn coords(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.basis {
            Some(b) => b.tr_mul(v),
            None => v.clone(),
        }
    }

    pub fn lift(&self, c: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.basis {
            Some(b) => b * c,
            None => c.clone(),
        }
    }
}

/// Samples head velocities at a fixed set of points. The first `n_keys`
/// points are the attended tokens; every point is a query.
pub(crate) struct FieldSampler<'a> {
    law: &'a WeightLaw,
    beta: f64,
    points: &'a DMatrix<f64>,
    key_frame: Frame,
    key_coords: DMatrix<f64>,
    query_frame: Frame,
    query_coords: DMatrix<f64>,
    /// `β Kᵀ Ā Q` (`n_keys × q`), when `Ā ≠ 0`.
    mean_logits: Option<DMatrix<f64>>,
    /// Attention that does not depend on the head draw.
    fixed: Option<Means>,
}

/// Attended means in some frame: `vectors = frame.lift(coords)`.
#[derive(Clone, Debug)]
pub(crate) struct Means {
    pub frame: Frame,
    pub coords: DMatrix<f64>,
    pub vectors: DMatrix<f64>,
}

impl<'a> FieldSampler<'a> {
    pub fn new(law: &'a WeightLaw, beta: f64, points: &'a DMatrix<f64>, n_keys: usize, dense: bool) -> Self {
        let keys = points.columns(0, n_keys).into_owned();
        let mean_logits = (beta != 0.0 && law.has_mean_a()).then(|| {
            let mut l = (law.mean_a.tr_mul(&keys)).tr_mul(points);
            l *= beta;
            l
        });
        let deterministic = beta == 0.0 || law.sigma_a == 0.0;
        if deterministic {
            let mut p = match &mean_logits {
                Some(l) => l.clone(),
                None => DMatrix::zeros(n_keys, points.ncols()),
            };
            let vectors = if mean_logits.is_none() {
                let bar = keys.column_mean();
                DMatrix::from_fn(points.nrows(), points.ncols(), |r, _| bar[r])
            } else {
                softmax_columns(&mut p);
                &keys * p
            };
            let frame = Frame::spanning(&vectors, dense);
            let coords = frame.coords(&vectors);
            let d = points.nrows();
            return FieldSampler {
                law,
                beta,
                points,
                key_frame: Frame::canonical(d),
                key_coords: DMatrix::zeros(0, 0),
                query_frame: Frame::canonical(d),
                query_coords: DMatrix::zeros(0, 0),
                mean_logits,
                fixed: Some(Means { frame, coords, vectors }),
            };
        }
        let key_frame = Frame::spanning(&keys, dense);
        let key_coords = key_frame.coords(&keys);
        let (query_frame, query_coords) = if points.ncols() == n_keys {
            (key_frame.clone(), key_coords.clone())
        } else {
            let f = Frame::spanning(points, dense);
            let c = f.coords(points);
            (f, c)
        };
        FieldSampler {
            law,
            beta,
            points,
            key_frame,
            key_coords,
            query_frame,
            query_coords,
            mean_logits,
            fixed: None,
        }
    }

    pub fn fixed_means(&self) -> Option<&Means> {
        self.fixed.as_ref()
    }

    /// One draw of the attended means (consumes `Wᵀ Q_k`, then `W'ᵀ Q_q`).
    pub fn draw_means<R: Rng + ?Sized>(&self, rng: &mut R) -> Means {
        if let Some(m) = &self.fixed {
            return m.clone();
        }
        let d = self.points.nrows();
        let s = self.law.sigma_a;
        let gk = gaussian_matrix(d, self.key_frame.rank(), s, rng);
        let gq = gaussian_matrix(d, self.query_frame.rank(), s, rng);
        let pk = gk * &self.key_coords;
        let pq = gq * &self.query_coords;
        let mut l = pk.tr_mul(&pq);
        l *= self.beta;
        if let Some(ml) = &self.mean_logits {
            l += ml;
        }
        softmax_columns(&mut l);
        let coords = &self.key_coords * l;
        let vectors = self.key_frame.lift(&coords);
        Means {
            frame: self.key_frame.clone(),
            coords,
            vectors,
        }
    }

    /// Fluctuating part `σ_V G m` of the velocity, `G` drawn in the means
    /// frame and scaled by `scale`.
    pub fn draw_value_noise<R: Rng + ?Sized>(&self, means: &Means, scale: f64, rng: &mut R) -> DMatrix<f64> {
        let d = self.points.nrows();
        let g = gaussian_matrix(d, means.frame.rank(), self.law.sigma_v * scale, rng);
        g * &means.coords
    }

    /// `V̄ m` (zero matrix when the law is centered).
    pub fn mean_velocity(&self, means: &Means) -> Option<DMatrix<f64>> {
        (!self.law.is_centered()).then(|| &self.law.mean_v * &means.vectors)
    }

    /// A full head velocity `V m` at every point.
    #[cfg(test)]
    pub fn draw_velocity<R: Rng + ?Sized>(&self, rng: &mut R) -> DMatrix<f64> {
        let means = self.draw_means(rng);
        let mut v = self.draw_value_noise(&means, 1.0, rng);
        if let Some(mv) = self.mean_velocity(&means) {
            v += mv;
        }
        v
    }
}
