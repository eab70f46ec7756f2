//! Scalar reductions of the Gaussian model: the simplex ODE for the common
//! overlap `γ(t)`, the logistic law of the mean overlap, the Gram drift, the
//! limiting logistic SDE, and the large-`β` / large-`d` expansions.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_core::RngCore;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::attention::{softmax_columns, Estimate, Temperature};
use crate::error::{Error, Result};
use crate::field::Frame;
use crate::sphere::{gaussian_matrix, normalize, simplex_config, GramMatrix, UnitVector};
use crate::stats::RunningStats;
use crate::weights::WeightLaw;

/// Monte-Carlo estimates of `f = E Σ_k π_{1k}²` and `g = E Σ_k π_{1k} π_{2k}`
/// on a simplex configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FgEstimate {
    pub f_hat: f64,
    pub g_hat: f64,
    pub stderr_f: f64,
    pub stderr_g: f64,
    pub samples: usize,
}

impl FgEstimate {
    /// Uniform attention: `f = g = 1/n`.
    pub fn uniform(n: usize) -> Self {
        let v = 1.0 / n as f64;
        FgEstimate {
            f_hat: v,
            g_hat: v,
            stderr_f: 0.0,
            stderr_g: 0.0,
            samples: 0,
        }
    }
}

/// Time series of one scalar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarPath {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl ScalarPath {
    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    /// Linear interpolation; `None` outside `[t_0, t_last]`.
    pub fn at(&self, t: f64) -> Option<f64> {
        let (t0, t1) = (*self.times.first()?, *self.times.last()?);
        if t < t0 - 1e-12 || t > t1 + 1e-12 {
            return None;
        }
        let k = self.times.partition_point(|&s| s <= t);
        if k == 0 {
            return Some(self.values[0]);
        }
        if k >= self.times.len() {
            return self.values.last().copied();
        }
        let (a, b) = (self.times[k - 1], self.times[k]);
        let w = (t - a) / (b - a);
        Some(self.values[k - 1] + w * (self.values[k] - self.values[k - 1]))
    }
}

struct FgSampler {
    beta: f64,
    sigma_a: f64,
    key_frame: Frame,
    key_coords: DMatrix<f64>,
    query_frame: Frame,
    query_coords: DMatrix<f64>,
    mean_logits: Option<DMatrix<f64>>,
    dim: usize,
}

impl FgSampler {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let gk = gaussian_matrix(self.dim, self.key_frame.rank(), self.sigma_a, rng);
        let gq = gaussian_matrix(self.dim, self.query_frame.rank(), self.sigma_a, rng);
        let pk = gk * &self.key_coords;
        let pq = gq * &self.query_coords;
        let mut l = pk.tr_mul(&pq);
        l *= self.beta;
        if let Some(ml) = &self.mean_logits {
            l += ml;
        }
        softmax_columns(&mut l);
        let (p1, p2) = (l.column(0), l.column(1));
        (p1.norm_squared(), p1.dot(&p2))
    }
}

/// Estimates `(f, g)` at overlap `γ` from `samples` draws of `A`.
///
/// Only `Wᵀ x_k` and `W'ᵀ x_{1,2}` enter the logits, so they are sampled in
/// orthonormal frames of the tokens (exact in law).
pub fn fg_estimate(
    gamma: f64,
    n: usize,
    d: usize,
    beta: Temperature,
    law: &WeightLaw,
    samples: usize,
    rng: &mut dyn RngCore,
) -> Result<FgEstimate> {
    let x = simplex_config(n, d, gamma, Some(&mut *rng))?;
    if law.d != d {
        return Err(Error::Shape("law dimension differs from d".into()));
    }
    if beta.is_zero() || (law.sigma_a == 0.0 && !law.has_mean_a()) {
        return Ok(FgEstimate::uniform(n));
    }
    if samples < 2 {
        return Err(Error::param("samples", "need at least 2 samples"));
    }
    let sampler = fg_sampler(x.matrix(), beta.value(), law);
    let (mut f, mut g) = (RunningStats::new(), RunningStats::new());
    accumulate(&sampler, samples, rng, &mut f, &mut g);
    Ok(finish(&f, &g))
}

fn fg_sampler(x: &DMatrix<f64>, beta: f64, law: &WeightLaw) -> FgSampler {
    let queries = x.columns(0, 2).into_owned();
    let key_frame = Frame::spanning(x, false);
    let query_frame = Frame::spanning(&queries, false);
    let mean_logits = law.has_mean_a().then(|| {
        let mut l = law.mean_a.tr_mul(x).tr_mul(&queries);
        l *= beta;
        l
    });
    FgSampler {
        beta,
        sigma_a: law.sigma_a,
        key_coords: key_frame.coords(x),
        query_coords: query_frame.coords(&queries),
        key_frame,
        query_frame,
        mean_logits,
        dim: x.nrows(),
    }
}

fn accumulate(s: &FgSampler, samples: usize, rng: &mut dyn RngCore, f: &mut RunningStats, g: &mut RunningStats) {
    for _ in 0..samples {
        let (a, b) = s.draw(rng);
        f.push(a);
        g.push(b);
    }
}

fn finish(f: &RunningStats, g: &RunningStats) -> FgEstimate {
    FgEstimate {
        f_hat: f.mean,
        g_hat: g.mean,
        stderr_f: f.stderr(),
        stderr_g: g.stderr(),
        samples: f.count as usize,
    }
}

/// Like [`fg_estimate`], drawing batches until both standard errors are at
/// most `target_stderr` or `max_samples` is reached.
#[allow(clippy::too_many_arguments)]
pub fn fg_estimate_adaptive(
    gamma: f64,
    n: usize,
    d: usize,
    beta: Temperature,
    law: &WeightLaw,
    target_stderr: f64,
    max_samples: usize,
    rng: &mut dyn RngCore,
) -> Result<FgEstimate> {
    let x = simplex_config(n, d, gamma, Some(&mut *rng))?;
    if beta.is_zero() || (law.sigma_a == 0.0 && !law.has_mean_a()) {
        return Ok(FgEstimate::uniform(n));
    }
    let sampler = fg_sampler(x.matrix(), beta.value(), law);
    let (mut f, mut g) = (RunningStats::new(), RunningStats::new());
    let batch = 256;
    while (f.count as usize) < max_samples.max(2) {
        accumulate(&sampler, batch.min(max_samples.max(2) - f.count as usize), rng, &mut f, &mut g);
        if f.count >= 2 * batch as u64 && f.stderr() <= target_stderr && g.stderr() <= target_stderr {
            break;
        }
    }
    Ok(finish(&f, &g))
}

/// `b(γ) = γ + (1−γ) g − γ (γ + (1−γ) f)`.
pub fn simplex_drift(gamma: f64, fg: &FgEstimate) -> f64 {
    gamma + (1.0 - gamma) * fg.g_hat - gamma * (gamma + (1.0 - gamma) * fg.f_hat)
}

/// Tabulated `(f, g)` on a grid of overlaps with monotone cubic
/// (Fritsch–Carlson) interpolation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FgTable {
    pub gammas: Vec<f64>,
    pub estimates: Vec<FgEstimate>,
    #[serde(skip)]
    f_slopes: Vec<f64>,
    #[serde(skip)]
    g_slopes: Vec<f64>,
}

impl FgTable {
    /// `points` equispaced overlaps on `[lo, 1]`; the value at `γ = 1`
    /// (identical tokens) is exactly `1/n`.
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        lo: f64,
        n: usize,
        d: usize,
        beta: Temperature,
        law: &WeightLaw,
        points: usize,
        target_stderr: f64,
        max_samples: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        if points < 2 {
            return Err(Error::param("grid_points", "need at least two grid points"));
        }
        let gammas: Vec<f64> = (0..points)
            .map(|k| lo + (1.0 - lo) * k as f64 / (points - 1) as f64)
            .collect();
        let mut estimates = Vec::with_capacity(points);
        for (k, &g) in gammas.iter().enumerate() {
            if k + 1 == points {
                estimates.push(FgEstimate::uniform(n));
            } else {
                estimates.push(fg_estimate_adaptive(g, n, d, beta, law, target_stderr, max_samples, rng)?);
            }
        }
        Ok(Self::from_estimates(gammas, estimates))
    }

    pub fn from_estimates(gammas: Vec<f64>, estimates: Vec<FgEstimate>) -> Self {
        let f: Vec<f64> = estimates.iter().map(|e| e.f_hat).collect();
        let g: Vec<f64> = estimates.iter().map(|e| e.g_hat).collect();
        FgTable {
            f_slopes: pchip_slopes(&gammas, &f),
            g_slopes: pchip_slopes(&gammas, &g),
            gammas,
            estimates,
        }
    }

    pub fn eval(&self, gamma: f64) -> FgEstimate {
        let f: Vec<f64> = self.estimates.iter().map(|e| e.f_hat).collect();
        let g: Vec<f64> = self.estimates.iter().map(|e| e.g_hat).collect();
        let k = self.segment(gamma);
        FgEstimate {
            f_hat: hermite(&self.gammas, &f, &self.f_slopes, k, gamma),
            g_hat: hermite(&self.gammas, &g, &self.g_slopes, k, gamma),
            stderr_f: self.estimates[k].stderr_f.max(self.estimates[k + 1].stderr_f),
            stderr_g: self.estimates[k].stderr_g.max(self.estimates[k + 1].stderr_g),
            samples: 0,
        }
    }

    fn segment(&self, x: f64) -> usize {
        let k = self.gammas.partition_point(|&g| g <= x);
        k.clamp(1, self.gammas.len() - 1) - 1
    }

    pub fn max_stderr(&self) -> f64 {
        self.estimates
            .iter()
            .map(|e| e.stderr_f.max(e.stderr_g))
            .fold(0.0, f64::max)
    }
}

fn pchip_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
    if n == 2 {
        return vec![delta[0]; 2];
    }
    let mut m = vec![0.0; n];
    for k in 1..n - 1 {
        if delta[k - 1] * delta[k] > 0.0 {
            let w1 = 2.0 * h[k] + h[k - 1];
            let w2 = h[k] + 2.0 * h[k - 1];
            m[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
        }
    }
    let end = |h0: f64, h1: f64, d0: f64, d1: f64| {
        let s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
        if s * d0 <= 0.0 {
            0.0
        } else if d0 * d1 <= 0.0 && s.abs() > 3.0 * d0.abs() {
            3.0 * d0
        } else {
            s
        }
    };
    m[0] = end(h[0], h[1], delta[0], delta[1]);
    m[n - 1] = end(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    m
}

fn hermite(x: &[f64], y: &[f64], m: &[f64], k: usize, t: f64) -> f64 {
    let h = x[k + 1] - x[k];
    let s = (t - x[k]) / h;
    let (s2, s3) = (s * s, s * s * s);
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    h00 * y[k] + h10 * h * m[k] + h01 * y[k + 1] + h11 * h * m[k + 1]
}

fn rk4<F: Fn(f64) -> f64>(b: &F, y0: f64, h: f64, steps: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(steps + 1);
    let mut y = y0;
    out.push(y);
    for _ in 0..steps {
        let k1 = b(y);
        let k2 = b(y + 0.5 * h * k1);
        let k3 = b(y + 0.5 * h * k2);
        let k4 = b(y + h * k3);
        y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        out.push(y);
    }
    out
}

/// Fixed-step RK4 for `γ̇ = b(γ)`, with a built-in check that ten times
/// finer steps change the solution by at most `1e-6`.
pub fn solve_simplex_ode(gamma0: f64, table: &FgTable, t: f64, dt: f64) -> Result<ScalarPath> {
    let b = |g: f64| {
        let g = g.min(1.0);
        simplex_drift(g, &table.eval(g.max(table.gammas[0])))
    };
    let steps = ((t / dt) - 1e-9).ceil().max(0.0) as usize;
    let h = if steps == 0 { 0.0 } else { t / steps as f64 };
    let coarse = rk4(&b, gamma0, h, steps);
    let fine = rk4(&b, gamma0, h / 10.0, steps * 10);
    let discrepancy = coarse
        .iter()
        .enumerate()
        .map(|(k, v)| (v - fine[10 * k]).abs())
        .fold(0.0, f64::max);
    if discrepancy > 1e-6 {
        return Err(Error::OdeRefinement {
            discrepancy,
            tolerance: 1e-6,
        });
    }
    Ok(ScalarPath {
        times: (0..=steps).map(|k| k as f64 * h).collect(),
        values: coarse,
    })
}

/// Builds the `(f, g)` table on `[min(γ0, 0), 1]` and solves the simplex ODE.
#[allow(clippy::too_many_arguments)]
pub fn simplex_ode_solve(
    gamma0: f64,
    n: usize,
    d: usize,
    beta: Temperature,
    law: &WeightLaw,
    t: f64,
    dt: f64,
    grid_points: usize,
    samples: usize,
    rng: &mut dyn RngCore,
) -> Result<(ScalarPath, FgTable)> {
    let lower = -1.0 / (n as f64 - 1.0);
    if !(gamma0 > lower && gamma0 < 1.0) {
        return Err(Error::OverlapOutOfRange { gamma: gamma0, lower });
    }
    if d < n {
        return Err(Error::DimensionTooSmall { n, d });
    }
    let table = FgTable::build(gamma0, n, d, beta, law, grid_points, 1e-3, samples, rng)?;
    Ok((solve_simplex_ode(gamma0, &table, t, dt)?, table))
}

/// Closed-form solution at `β = 0`:
/// `γ(t) = 1 − 1 / (c + (1/(1−γ0) − c) eᵗ)` with `c = (n−1)/n`.
pub fn simplex_beta_zero(gamma0: f64, n: usize, t: f64) -> f64 {
    let c = (n as f64 - 1.0) / n as f64;
    1.0 - 1.0 / (c + (1.0 / (1.0 - gamma0) - c) * t.exp())
}

/// `u(t) = u0 / (u0 + (1 − u0) e^{−t})`.
pub fn logistic_solution(u0: f64, t: f64) -> f64 {
    if u0 == 0.0 {
        return 0.0;
    }
    u0 / (u0 + (1.0 - u0) * (-t).exp())
}

/// Drift of the overlaps `R_ij` under the driftless Gaussian SDE (`α = 1`):
/// `D_ij = (1/d)(d − 2 + R_ij²) s_ij − ((d − 1)/(2d)) R_ij (s_i + s_j)`.
pub fn gram_drift(r: &GramMatrix, s_diag: &[f64], s_pair: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    let n = r.n();
    assert!(s_diag.len() == n && s_pair.shape() == (n, n), "shape mismatch");
    let d = d as f64;
    DMatrix::from_fn(n, n, |i, j| {
        let rij = r.get(i, j);
        (d - 2.0 + rij * rij) * s_pair[(i, j)] / d - (d - 1.0) / (2.0 * d) * rij * (s_diag[i] + s_diag[j])
    })
}

const ABSORB: f64 = 1.0 - 1e-9;

fn logistic_sde_step(u: f64, dt: f64, z: f64) -> f64 {
    let q = 1.0 - u * u;
    let next = (u - u * q * dt + std::f64::consts::SQRT_2 * q * dt.sqrt() * z).clamp(-1.0, 1.0);
    if next.abs() >= ABSORB {
        next.signum()
    } else {
        next
    }
}

fn check_logistic(u0: f64, dt: f64) -> Result<()> {
    if !(-1.0..=1.0).contains(&u0) {
        return Err(Error::param("u0", "must lie in [-1, 1]"));
    }
    if !(dt > 0.0 && dt <= 1e-2) {
        return Err(Error::param("dt", "must lie in (0, 1e-2]"));
    }
    Ok(())
}

/// Euler–Maruyama for `du = −u(1−u²) dt + √2 (1−u²) dB`, clamped to
/// `[−1, 1]` and frozen at `±1` once `|u| ≥ 1 − 1e-9`.
pub fn logistic_sde_path<R: Rng + ?Sized>(u0: f64, t: f64, dt: f64, rng: &mut R) -> Result<ScalarPath> {
    check_logistic(u0, dt)?;
    let steps = ((t / dt) - 1e-9).ceil().max(0.0) as usize;
    let mut u = if u0.abs() >= ABSORB { u0.signum() } else { u0 };
    let mut path = ScalarPath {
        times: vec![0.0],
        values: vec![u],
    };
    for s in 0..steps {
        if u.abs() < 1.0 {
            u = logistic_sde_step(u, dt, rng.sample(StandardNormal));
        }
        path.times.push(if s + 1 == steps { t } else { (s + 1) as f64 * dt });
        path.values.push(u);
    }
    Ok(path)
}

/// Final value of [`logistic_sde_path`] without storing the path; the
/// noise sequence is the same, so both agree exactly.
pub fn logistic_sde_endpoint<R: Rng + ?Sized>(u0: f64, t: f64, dt: f64, rng: &mut R) -> Result<f64> {
    check_logistic(u0, dt)?;
    let steps = ((t / dt) - 1e-9).ceil().max(0.0) as usize;
    let mut u = if u0.abs() >= ABSORB { u0.signum() } else { u0 };
    for _ in 0..steps {
        if u.abs() >= 1.0 {
            break;
        }
        u = logistic_sde_step(u, dt, rng.sample(StandardNormal));
    }
    Ok(u)
}

/// `A x / ‖A x‖`, the `β → ∞` limit of the attended mean against a
/// rotation-invariant measure.
pub fn laplace_limit(a: &DMatrix<f64>, x: &UnitVector) -> Result<UnitVector> {
    normalize(&(a * x.coords()))
}

/// Attended mean of `x` against the uniform measure on `S^{d-1}`:
/// `ρ(κ) A x/‖A x‖` with `κ = β ‖A x‖` and `ρ` the mean of `⟨e, y⟩` under
/// the tilted density `(1 − t²)^{(d−3)/2} e^{κ t}` (computed by quadrature).
pub fn uniform_attended_mean(a: &DMatrix<f64>, x: &UnitVector, beta: Temperature) -> Result<DVector<f64>> {
    let ax = a * x.coords();
    let norm = ax.norm();
    if norm < 1e-300 {
        return Err(Error::ZeroVector);
    }
    let d = ax.len() as f64;
    let rho = tilted_mean(beta.value() * norm, d);
    Ok(ax * (rho / norm))
}

fn tilted_mean(kappa: f64, d: f64) -> f64 {
    // t = 1 − s: weight (s (2 − s))^{k} e^{−κ s}, k = (d − 3)/2, s ∈ [0, 2]
    let k = (d - 3.0) / 2.0;
    let hi = if kappa > 0.0 {
        ((k + 1.0 + 30.0 * (k + 1.0).sqrt() + 60.0) / kappa).min(2.0)
    } else {
        2.0
    };
    let m = 20_000;
    let h = hi / m as f64;
    let logw = |s: f64| {
        if s <= 0.0 || s >= 2.0 {
            f64::NEG_INFINITY
        } else {
            k * (s * (2.0 - s)).ln() - kappa * s
        }
    };
    let peak = (0..=m).map(|i| logw(i as f64 * h)).fold(f64::NEG_INFINITY, f64::max);
    let (mut z, mut zt) = (0.0, 0.0);
    for i in 0..=m {
        let s = i as f64 * h;
        let c = if i == 0 || i == m { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        let w = c * (logw(s) - peak).exp();
        z += w;
        zt += w * (1.0 - s);
    }
    zt / z
}

/// `r + (r³ − r)/(2d)`.
pub fn delta_expansion(r: f64, d: usize) -> f64 {
    r + (r * r * r - r) / (2.0 * d as f64)
}

/// Monte-Carlo estimate of `E⟨A x/‖A x‖, A y/‖A y‖⟩` for `A = W W'ᵀ` with
/// i.i.d. Gaussian factors and `⟨x, y⟩ = r`.
///
/// The estimator uses `E⟨A x, A y⟩ ∝ r` and `E‖A x‖² = E‖A y‖²` as control
/// variates. Only `W'ᵀ [x y]` and `W` applied to a two-dimensional span
/// are needed, so each draw costs `4d` normals.
pub fn normalized_overlap_mc<R: Rng + ?Sized>(r: f64, d: usize, draws: usize, rng: &mut R) -> Result<Estimate<f64>> {
    if !(-1.0..=1.0).contains(&r) {
        return Err(Error::param("r", "overlap must lie in [-1, 1]"));
    }
    if draws < 10 {
        return Err(Error::param("draws", "need at least 10 draws"));
    }
    let s = (1.0 - r * r).sqrt();
    let df = d as f64;
    let mut ys = Vec::with_capacity(draws);
    let mut cs = Vec::with_capacity(draws);
    for _ in 0..draws {
        // W'ᵀ x = g1, W'ᵀ y = r g1 + s g2 (x, y written in an orthonormal pair)
        let g1 = gaussian_matrix(d, 1, 1.0, rng);
        let g2 = gaussian_matrix(d, 1, 1.0, rng);
        let u = g1.column(0).into_owned();
        let v = &u * r + g2.column(0) * s;
        // W [u v]: frame of (u, v)
        let nu = u.norm();
        let e1 = &u / nu;
        let v_par = e1.dot(&v);
        let v_perp_vec = &v - &e1 * v_par;
        let v_perp = v_perp_vec.norm();
        let h1 = gaussian_matrix(d, 1, 1.0, rng).column(0).into_owned();
        let h2 = gaussian_matrix(d, 1, 1.0, rng).column(0).into_owned();
        let ax = &h1 * nu;
        let ay = &h1 * v_par + &h2 * v_perp;
        let (nx, ny) = (ax.norm(), ay.norm());
        ys.push(ax.dot(&ay) / (nx * ny));
        // normalized so that E‖Ax‖² = 1 and E⟨Ax, Ay⟩ = r
        cs.push([ax.dot(&ay) / (df * df) - r, nx * nx / (df * df) - 1.0, ny * ny / (df * df) - 1.0]);
    }
    Ok(control_variate_mean(&ys, &cs))
}

fn control_variate_mean(ys: &[f64], cs: &[[f64; 3]]) -> Estimate<f64> {
    let n = ys.len() as f64;
    let ybar = ys.iter().sum::<f64>() / n;
    let mut cbar = [0.0; 3];
    for c in cs {
        for k in 0..3 {
            cbar[k] += c[k] / n;
        }
    }
    let mut scc = nalgebra::Matrix3::<f64>::zeros();
    let mut scy = nalgebra::Vector3::<f64>::zeros();
    for (y, c) in ys.iter().zip(cs) {
        let dc = nalgebra::Vector3::new(c[0] - cbar[0], c[1] - cbar[1], c[2] - cbar[2]);
        scc += dc * dc.transpose();
        scy += dc * (y - ybar);
    }
    let coef = scc
        .try_inverse()
        .map(|inv| inv * scy)
        .unwrap_or_else(nalgebra::Vector3::zeros);
    let mut acc = RunningStats::new();
    for (y, c) in ys.iter().zip(cs) {
        acc.push(y - coef[0] * c[0] - coef[1] * c[1] - coef[2] * c[2]);
    }
    Estimate {
        mean: acc.mean,
        stderr: acc.stderr(),
        samples: ys.len(),
    }
}
