//! Softmax attention: weights `π`, attended means `m_{β,A}`, velocities
//! `V m`, and Monte-Carlo estimators of the drift and fluctuation kernel.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::sphere::{gaussian_matrix, projector, TokenConfig, UnitVector};
use crate::stats::MatrixStats;
use crate::weights::{sample_head, HeadWeights, WeightLaw};

/// Inverse temperature `β ≥ 0`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct Temperature(f64);

impl Temperature {
    pub fn new(beta: f64) -> Result<Self> {
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(Error::param("beta", format!("must be finite and ≥ 0, got {beta}")));
        }
        Ok(Temperature(beta))
    }

    pub fn zero() -> Self {
        Temperature(0.0)
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0.0
    }
}

/// One row `π_{i→·}` of the attention matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionRow {
    pub weights: Vec<f64>,
}

/// Token indices sorted lexicographically by coordinates.
///
/// Sums over tokens are always carried out in this order, which makes every
/// result exactly equivariant under relabelling the tokens.
pub fn canonical_order(x: &DMatrix<f64>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..x.ncols()).collect();
    idx.sort_by(|&a, &b| {
        let (ca, cb) = (x.column(a), x.column(b));
        ca.iter()
            .zip(cb.iter())
            .map(|(u, v)| u.total_cmp(v))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    });
    idx
}

/// Numerically stable softmax; the normalizing sum runs in `order`.
fn softmax_ordered(logits: &mut [f64], order: &[usize]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
    }
    let z: f64 = order.iter().map(|&k| logits[k]).sum();
    for l in logits.iter_mut() {
        *l /= z;
    }
}

/// `exp(l_k − max l) / Σ exp(l − max l)`, invariant under adding a constant
/// to every logit.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = logits.to_vec();
    let order: Vec<usize> = (0..out.len()).collect();
    softmax_ordered(&mut out, &order);
    out
}

/// In-place column softmax of a logit matrix (column `i` = query `i`).
pub(crate) fn softmax_columns(l: &mut DMatrix<f64>) {
    for mut c in l.column_iter_mut() {
        let max = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in c.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        c /= z;
    }
}

fn check_dims(a: &DMatrix<f64>, x: &DVector<f64>, tokens: &TokenConfig) {
    assert!(
        a.nrows() == tokens.d() && a.ncols() == tokens.d() && x.len() == tokens.d(),
        "dimension mismatch between A, x and the token configuration"
    );
}

/// `π_k ∝ exp(β ⟨A x, x_k⟩)`.
pub fn attention_row(a: &DMatrix<f64>, x: &UnitVector, tokens: &TokenConfig, beta: Temperature) -> AttentionRow {
    attention_row_with(a, x.coords(), tokens, beta, &canonical_order(tokens.matrix()))
}

fn attention_row_with(
    a: &DMatrix<f64>,
    x: &DVector<f64>,
    tokens: &TokenConfig,
    beta: Temperature,
    order: &[usize],
) -> AttentionRow {
    check_dims(a, x, tokens);
    let n = tokens.n();
    let mut logits = if beta.is_zero() {
        vec![0.0; n]
    } else {
        let ax = a * x;
        (0..n).map(|k| beta.0 * ax.dot(&tokens.token(k))).collect()
    };
    softmax_ordered(&mut logits, order);
    AttentionRow { weights: logits }
}

/// `m_{β,A}(x) = Σ_k π_k x_k`.
pub fn attended_mean(a: &DMatrix<f64>, x: &UnitVector, tokens: &TokenConfig, beta: Temperature) -> DVector<f64> {
    let order = canonical_order(tokens.matrix());
    attended_mean_with(a, x.coords(), tokens, beta, &order)
}

fn attended_mean_with(
    a: &DMatrix<f64>,
    x: &DVector<f64>,
    tokens: &TokenConfig,
    beta: Temperature,
    order: &[usize],
) -> DVector<f64> {
    let pi = attention_row_with(a, x, tokens, beta, order);
    let mut m = DVector::zeros(tokens.d());
    for &k in order {
        m.axpy(pi.weights[k], &tokens.token(k), 1.0);
    }
    m
}

/// `B_θ(x) = V m_{β,A}(x)`.
pub fn velocity(head: &HeadWeights, x: &UnitVector, tokens: &TokenConfig, beta: Temperature) -> DVector<f64> {
    &head.v * attended_mean(&head.a, x, tokens, beta)
}

/// Attention weights for all queries: row `i` is `π_{i→·}`.
pub fn attention_matrix(a: &DMatrix<f64>, tokens: &TokenConfig, beta: Temperature) -> DMatrix<f64> {
    let order = canonical_order(tokens.matrix());
    let n = tokens.n();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        let row = attention_row_with(a, &tokens.token(i).into_owned(), tokens, beta, &order);
        out.row_mut(i).copy_from_slice(&row.weights);
    }
    out
}

/// Attended means of all tokens for one `A` (columns of a `d × n` matrix),
/// with tokens presented in canonical order.
pub(crate) fn attended_means_sorted(a: &DMatrix<f64>, xs: &DMatrix<f64>, beta: Temperature) -> DMatrix<f64> {
    let n = xs.ncols();
    if beta.is_zero() {
        let bar = xs.column_mean();
        return DMatrix::from_fn(xs.nrows(), n, |r, _| bar[r]);
    }
    let ax = a * xs;
    let mut l = xs.tr_mul(&ax);
    l *= beta.0;
    softmax_columns(&mut l);
    xs * l
}

/// Monte-Carlo estimate with entrywise standard errors.
#[derive(Clone, Debug, PartialEq)]
pub struct Estimate<T> {
    pub mean: T,
    pub stderr: T,
    pub samples: usize,
}

/// Sample mean of `B_θ(x)` over i.i.d. heads.
pub fn mc_drift<R: Rng + ?Sized>(
    law: &WeightLaw,
    x: &UnitVector,
    tokens: &TokenConfig,
    beta: Temperature,
    samples: usize,
    rng: &mut R,
) -> Result<Estimate<DVector<f64>>> {
    if samples < 2 {
        return Err(Error::param("samples", "need at least 2 samples"));
    }
    let order = canonical_order(tokens.matrix());
    let mut acc = MatrixStats::new(law.d, 1);
    for _ in 0..samples {
        let head = sample_head(law, rng);
        let v = &head.v * attended_mean_with(&head.a, x.coords(), tokens, beta, &order);
        acc.push(&DMatrix::from_column_slice(law.d, 1, v.as_slice()));
    }
    Ok(Estimate {
        mean: acc.mean_vector(),
        stderr: acc.stderr_vector(),
        samples,
    })
}

/// Sample mean of `(P⊥_i ξ_θ(x_i)) (P⊥_j ξ_θ(x_j))ᵀ` over i.i.d. heads.
pub fn mc_kernel<R: Rng + ?Sized>(
    law: &WeightLaw,
    tokens: &TokenConfig,
    beta: Temperature,
    i: usize,
    j: usize,
    samples: usize,
    rng: &mut R,
) -> Result<Estimate<DMatrix<f64>>> {
    if !law.is_centered() {
        return Err(Error::NonCenteredLaw);
    }
    if samples < 2 {
        return Err(Error::param("samples", "need at least 2 samples"));
    }
    let (xi, xj) = (tokens.token(i).into_owned(), tokens.token(j).into_owned());
    let (pi, pj) = (projector(&xi), projector(&xj));
    let order = canonical_order(tokens.matrix());
    let mut acc = MatrixStats::new(law.d, law.d);
    for _ in 0..samples {
        let head = sample_head(law, rng);
        let mi = attended_mean_with(&head.a, &xi, tokens, beta, &order);
        let mj = attended_mean_with(&head.a, &xj, tokens, beta, &order);
        let gi = &pi * (&head.v * mi);
        let gj = &pj * (&head.v * mj);
        acc.push(&(gi * gj.transpose()));
    }
    Ok(Estimate {
        mean: acc.mean().clone(),
        stderr: acc.stderr(),
        samples,
    })
}

/// `(1/d) P⊥_i E_A⟨m_i, m_j⟩ P⊥_j`, with the scalar expectation estimated
/// over `samples_a` draws of `A` (exact when attention is deterministic).
pub fn gaussian_kernel_closed<R: Rng + ?Sized>(
    law: &WeightLaw,
    tokens: &TokenConfig,
    beta: Temperature,
    i: usize,
    j: usize,
    samples_a: usize,
    rng: &mut R,
) -> Result<Estimate<DMatrix<f64>>> {
    let d = law.d as f64;
    if !law.is_centered() {
        return Err(Error::NonCenteredLaw);
    }
    let expected = 1.0 / d;
    if (law.sigma_v.powi(2) - expected).abs() > 1e-12 * expected {
        return Err(Error::WrongScaling {
            got: law.sigma_v.powi(2),
            expected,
        });
    }
    let (xi, xj) = (tokens.token(i).into_owned(), tokens.token(j).into_owned());
    let order = canonical_order(tokens.matrix());
    let overlap = |a: &DMatrix<f64>| {
        let mi = attended_mean_with(a, &xi, tokens, beta, &order);
        let mj = attended_mean_with(a, &xj, tokens, beta, &order);
        mi.dot(&mj)
    };
    let (s, se, samples) = if beta.is_zero() || law.sigma_a == 0.0 {
        (overlap(&law.mean_a), 0.0, 0)
    } else {
        if samples_a < 2 {
            return Err(Error::param("samples_a", "need at least 2 samples"));
        }
        let mut acc = crate::stats::RunningStats::new();
        for _ in 0..samples_a {
            let w = gaussian_matrix(law.d, law.d, law.sigma_a, rng);
            let w2 = gaussian_matrix(law.d, law.d, law.sigma_a, rng);
            let mut a = law.mean_a.clone();
            a.gemm(1.0, &w, &w2.transpose(), 1.0);
            acc.push(overlap(&a));
        }
        (acc.mean, acc.stderr(), samples_a)
    };
    let base = projector(&xi) * projector(&xj) / d;
    Ok(Estimate {
        mean: &base * s,
        stderr: base.map(|v| v.abs() * se),
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamRng;
    use crate::sphere::{normalize, uniform_config, uniform_point};
    use crate::weights::gaussian_default;
    use proptest::prelude::*;
    use rand::Rng;

    fn setup(seed: u64, n: usize, d: usize) -> (TokenConfig, DMatrix<f64>, StreamRng) {
        let mut rng = StreamRng::seed_from(seed);
        let x = uniform_config(n, d, &mut rng).unwrap();
        let a = gaussian_matrix(d, d, 1.0, &mut rng);
        (x, a, rng)
    }

    #[test]
    fn temperature_validation() {
        assert!(Temperature::new(-1.0).is_err());
        assert!(Temperature::new(f64::NAN).is_err());
        assert!(Temperature::new(f64::INFINITY).is_err());
        assert!(Temperature::new(0.0).unwrap().is_zero());
    }

    #[test]
    fn row_examples() {
        let (x, a, _) = setup(1, 5, 4);
        let row = attention_row(&a, &x.unit(0), &x, Temperature::zero());
        assert!(row.weights.iter().all(|&w| (w - 0.2).abs() < 1e-16));
        let e = normalize(&DVector::from_vec(vec![1.0, 0.0, 0.0])).unwrap();
        let same = TokenConfig::from_vectors(&[e.clone(), e.clone(), e.clone()]).unwrap();
        let a3 = DMatrix::from_fn(3, 3, |i, j| (i + 2 * j) as f64);
        let row = attention_row(&a3, &e, &same, Temperature::new(5.0).unwrap());
        assert!(row.weights.iter().all(|&w| (w - 1.0 / 3.0).abs() < 1e-15));
        // n = 2, logits (ln 3, 0): A = ln3 · e1 e1ᵀ, x = e1, tokens e1, e2
        let pair = TokenConfig::new(DMatrix::identity(2, 2)).unwrap();
        let mut a2 = DMatrix::zeros(2, 2);
        a2[(0, 0)] = 3f64.ln();
        let row = attention_row(&a2, &pair.unit(0), &pair, Temperature::new(1.0).unwrap());
        assert!((row.weights[0] - 0.75).abs() < 1e-15 && (row.weights[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn mean_examples() {
        let (x, a, _) = setup(2, 6, 5);
        let m = attended_mean(&a, &x.unit(1), &x, Temperature::zero());
        assert!((m - x.barycenter()).amax() < 1e-15);
        // β = 1e4: pick the argmax token
        let q = x.unit(1);
        let ax = &a * q.coords();
        let logits: Vec<f64> = (0..6).map(|k| ax.dot(&x.token(k))).collect();
        let best = (0..6).max_by(|&u, &v| logits[u].total_cmp(&logits[v])).unwrap();
        let m = attended_mean(&a, &q, &x, Temperature::new(1e4).unwrap());
        assert!((m - x.token(best)).amax() < 1e-6);
    }

    #[test]
    fn velocity_examples() {
        let (x, a, mut rng) = setup(3, 4, 6);
        let beta = Temperature::new(2.0).unwrap();
        let q = x.unit(2);
        let m = attended_mean(&a, &q, &x, beta);
        let id = HeadWeights::new(DMatrix::identity(6, 6), a.clone()).unwrap();
        assert_eq!(velocity(&id, &q, &x, beta), m);
        let zero = HeadWeights::new(DMatrix::zeros(6, 6), a.clone()).unwrap();
        assert_eq!(velocity(&zero, &q, &x, beta), DVector::zeros(6));
        let v = gaussian_matrix(6, 6, 1.0, &mut rng);
        let h = HeadWeights::new(v.clone(), a).unwrap();
        let got = velocity(&h, &q, &x, beta);
        for r in 0..6 {
            let direct: f64 = (0..6).map(|c| v[(r, c)] * m[c]).sum();
            assert!((got[r] - direct).abs() < 1e-14);
        }
    }

    #[test]
    fn means_stay_in_the_ball() {
        let mut rng = StreamRng::seed_from(4);
        for _ in 0..1000 {
            let n = rng.random_range(2..8);
            let d = rng.random_range(2..8);
            let x = uniform_config(n, d, &mut rng).unwrap();
            let a = gaussian_matrix(d, d, 3.0, &mut rng);
            let beta = Temperature::new(rng.random_range(0.0..50.0)).unwrap();
            let q = uniform_point(d, &mut rng).unwrap();
            let row = attention_row(&a, &q, &x, beta);
            let m = attended_mean(&a, &q, &x, beta);
            assert!(m.norm() <= 1.0 + 1e-12);
            let direct = (0..n).fold(DVector::zeros(d), |acc, k| acc + x.token(k) * row.weights[k]);
            assert!((m - direct).amax() < 1e-14);
            assert!((row.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn batched_means_match_single_token() {
        let (x, a, _) = setup(5, 7, 5);
        let beta = Temperature::new(3.0).unwrap();
        let order = canonical_order(x.matrix());
        let sorted = x.permuted(&order);
        let all = attended_means_sorted(&a, sorted.matrix(), beta);
        for (j, &k) in order.iter().enumerate() {
            let single = attended_mean(&a, &x.unit(k), &x, beta);
            assert!((all.column(j) - single).amax() < 1e-14);
        }
        let p = attention_matrix(&a, &x, beta);
        for i in 0..7 {
            assert!((p.row(i).sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn drift_estimators() {
        let mut rng = StreamRng::seed_from(6);
        let x = uniform_config(4, 6, &mut rng).unwrap();
        let law = gaussian_default(6).unwrap();
        let beta = Temperature::new(1.0).unwrap();
        let est = mc_drift(&law, &x.unit(0), &x, beta, 4000, &mut rng).unwrap();
        for k in 0..6 {
            assert!(est.mean[k].abs() < 4.0 * est.stderr[k]);
        }
        let det = WeightLaw::new(6, 0.0, 0.0, DMatrix::identity(6, 6), DMatrix::zeros(6, 6)).unwrap();
        let est = mc_drift(&det, &x.unit(0), &x, beta, 3, &mut rng).unwrap();
        assert!((est.mean - x.barycenter()).amax() < 1e-15);
    }

    #[test]
    fn stderr_scales_like_inverse_root_samples() {
        let law = gaussian_default(4).unwrap();
        let mut rng = StreamRng::seed_from(7);
        let x = uniform_config(3, 4, &mut rng).unwrap();
        let beta = Temperature::new(1.0).unwrap();
        let (mut r1, mut r2) = (0.0, 0.0);
        for _ in 0..20 {
            r1 += mc_drift(&law, &x.unit(0), &x, beta, 500, &mut rng).unwrap().stderr[0];
            r2 += mc_drift(&law, &x.unit(0), &x, beta, 1000, &mut rng).unwrap().stderr[0];
        }
        let ratio = r2 / r1;
        assert!((0.6..=0.82).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn kernel_identical_tokens() {
        let d = 6;
        let law = gaussian_default(d).unwrap();
        let e = normalize(&DVector::from_fn(d, |i, _| (i + 1) as f64)).unwrap();
        let x = TokenConfig::from_vectors(&[e.clone(), e.clone(), e.clone()]).unwrap();
        let mut rng = StreamRng::seed_from(9);
        let beta = Temperature::new(2.0).unwrap();
        let k = mc_kernel(&law, &x, beta, 0, 0, 20_000, &mut rng).unwrap();
        let target = projector(e.coords()) * law.sigma_v.powi(2);
        for (idx, (&m, &t)) in k.mean.iter().zip(target.iter()).enumerate() {
            assert!((m - t).abs() <= 4.0 * k.stderr[idx] + 1e-12, "entry {idx}: {m} vs {t}");
        }
        let closed = gaussian_kernel_closed(&law, &x, beta, 0, 0, 100, &mut rng).unwrap();
        assert!((closed.mean - target).amax() < 1e-14);
    }

    #[test]
    fn kernel_errors_and_beta_zero() {
        let d = 5;
        let mut rng = StreamRng::seed_from(10);
        let x = uniform_config(3, d, &mut rng).unwrap();
        let mut law = gaussian_default(d).unwrap();
        let k = gaussian_kernel_closed(&law, &x, Temperature::zero(), 0, 1, 10, &mut rng).unwrap();
        let bar = x.barycenter();
        let expect = projector(&x.token(0).into_owned()) * projector(&x.token(1).into_owned()) * (bar.norm_squared() / d as f64);
        assert!((k.mean - expect).amax() < 1e-15);
        assert!(k.stderr.amax() == 0.0);
        law.sigma_v = 0.5;
        assert!(matches!(
            gaussian_kernel_closed(&law, &x, Temperature::zero(), 0, 1, 10, &mut rng),
            Err(Error::WrongScaling { .. })
        ));
        law.mean_v = DMatrix::identity(d, d);
        assert!(matches!(
            mc_kernel(&law, &x, Temperature::zero(), 0, 1, 10, &mut rng),
            Err(Error::NonCenteredLaw)
        ));
    }

    #[test]
    fn kernel_symmetry_and_trace() {
        let d = 5;
        let law = gaussian_default(d).unwrap();
        let mut rng = StreamRng::seed_from(12);
        let x = uniform_config(3, d, &mut rng).unwrap();
        let beta = Temperature::new(1.0).unwrap();
        let kij = mc_kernel(&law, &x, beta, 0, 2, 20_000, &mut rng).unwrap();
        let kji = mc_kernel(&law, &x, beta, 2, 0, 20_000, &mut rng).unwrap();
        let kt = kji.mean.transpose();
        let se = kji.stderr.transpose();
        for idx in 0..d * d {
            let tol = 4.0 * (kij.stderr[idx].powi(2) + se[idx].powi(2)).sqrt();
            assert!((kij.mean[idx] - kt[idx]).abs() <= tol);
        }
        // trace of the closed form at i = j
        let closed = gaussian_kernel_closed(&law, &x, beta, 1, 1, 4000, &mut rng).unwrap();
        let mut em = crate::stats::RunningStats::new();
        for _ in 0..4000 {
            let w = gaussian_matrix(d, d, law.sigma_a, &mut rng);
            let w2 = gaussian_matrix(d, d, law.sigma_a, &mut rng);
            em.push(attended_mean(&(w * w2.transpose()), &x.unit(1), &x, beta).norm_squared());
        }
        let target = (d as f64 - 1.0) / d as f64 * em.mean;
        let se_target = (d as f64 - 1.0) / d as f64 * em.stderr();
        let se_closed = closed.stderr.trace().abs();
        assert!((closed.mean.trace() - target).abs() <= 4.0 * (se_target.powi(2) + se_closed.powi(2)).sqrt());
    }

    proptest! {
        #[test]
        fn softmax_shift_invariance(seed in any::<u64>(), shift in -50.0f64..50.0) {
            let (x, a, _) = setup(seed, 6, 4);
            let q = x.unit(0);
            let order = canonical_order(x.matrix());
            let beta = Temperature::new(1.5).unwrap();
            let ax = &a * q.coords();
            let base: Vec<f64> = (0..6).map(|k| 1.5 * ax.dot(&x.token(k))).collect();
            let mut l1 = base.clone();
            let mut l2: Vec<f64> = base.iter().map(|v| v + shift).collect();
            softmax_ordered(&mut l1, &order);
            softmax_ordered(&mut l2, &order);
            for (p1, p2) in l1.iter().zip(&l2) {
                prop_assert!((p1 - p2).abs() <= 1e-14);
            }
            let row = attention_row(&a, &q, &x, beta);
            for (w, p1) in row.weights.iter().zip(&l1) {
                prop_assert!((w - p1).abs() <= 1e-15);
            }
        }

        #[test]
        fn permutation_equivariance(seed in any::<u64>(), beta in 0.0f64..20.0) {
            let (x, a, mut rng) = setup(seed, 7, 5);
            let mut perm: Vec<usize> = (0..7).collect();
            for i in (1..7).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            let y = x.permuted(&perm);
            let beta = Temperature::new(beta).unwrap();
            let q = uniform_point(5, &mut rng).unwrap();
            let rx = attention_row(&a, &q, &x, beta);
            let ry = attention_row(&a, &q, &y, beta);
            for (i, &k) in perm.iter().enumerate() {
                prop_assert_eq!(ry.weights[i].to_bits(), rx.weights[k].to_bits());
            }
            prop_assert_eq!(attended_mean(&a, &q, &x, beta), attended_mean(&a, &q, &y, beta));
        }
    }
}
