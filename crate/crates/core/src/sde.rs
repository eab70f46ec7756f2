//! Projected Euler–Maruyama for the homogenized SDE with common noise.
//!
//! One step draws `M` heads `θ_m` and `M` scalars `Z_m` shared by every
//! token and sets
//!
//! ```text
//! x_i ← N(x_i + P⊥b_i dt + √(α dt / M) Σ_m Z_m ξ_{θ_m}(x_i))
//! ```
//!
//! The normalization supplies the Itô correction. Heads are sampled in the
//! span of the tokens (see the `field` module), which is exact in law.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::attention::{canonical_order, Temperature};
use crate::chain::Trajectory;
use crate::error::{Error, Result};
use crate::field::FieldSampler;
use crate::rng::{StreamKey, Tag};
use crate::sphere::{normalize_columns, uniform_config, uniform_point, TokenConfig, UnitVector};
use crate::weights::WeightLaw;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SdeVariant {
    /// Drift `P⊥ b` estimated by Monte-Carlo, fluctuations `ξ = B − b`.
    General,
    /// Centered values: no drift and `ξ = B`.
    GaussianDriftless,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Unprojected increment followed by normalization.
    Projected,
    /// Tangent increment minus the explicit Itô correction
    /// `(α dt / 2) x mean_m ‖P⊥ ξ_m‖²`, then normalization as a retraction.
    ExplicitCorrector,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampling {
    /// Reduced frames when the tokens span less than half the space.
    Auto,
    /// Always sample full `d × d` blocks.
    Dense,
}

#[derive(Clone, Debug)]
pub struct SdeParams {
    pub law: WeightLaw,
    pub beta: Temperature,
    /// Noise level `α ≥ 0`.
    pub alpha: f64,
    pub dt: f64,
    /// Heads sampled per step.
    pub modes: usize,
    pub variant: SdeVariant,
    pub seed: u64,
    /// Head draws per step for the Monte-Carlo drift (General variant).
    pub drift_samples: usize,
    pub scheme: Scheme,
    pub sampling: Sampling,
}

impl SdeParams {
    /// Driftless Gaussian model with 32 modes.
    pub fn driftless(law: WeightLaw, beta: Temperature, alpha: f64, dt: f64, seed: u64) -> Self {
        SdeParams {
            law,
            beta,
            alpha,
            dt,
            modes: 32,
            variant: SdeVariant::GaussianDriftless,
            seed,
            drift_samples: 64,
            scheme: Scheme::Projected,
            sampling: Sampling::Auto,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::param("dt", "must be positive"));
        }
        if self.modes == 0 {
            return Err(Error::param("modes", "need at least one mode"));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::param("alpha", "must be finite and ≥ 0"));
        }
        if self.variant == SdeVariant::GaussianDriftless && !self.law.is_centered() {
            return Err(Error::NonCenteredLaw);
        }
        if self.variant == SdeVariant::General && !self.law.is_centered() && self.drift_samples == 0 {
            return Err(Error::param("drift_samples", "need at least one drift sample"));
        }
        Ok(())
    }

    fn dense(&self) -> bool {
        self.sampling == Sampling::Dense
    }
}

/// Number of steps and the length of the last one for horizon `t`.
pub(crate) fn step_plan(t: f64, dt: f64) -> (usize, f64) {
    if t <= 0.0 {
        return (0, 0.0);
    }
    let k = ((t / dt) - 1e-9).ceil().max(1.0) as usize;
    (k, t - (k - 1) as f64 * dt)
}

fn project_columns(points: &DMatrix<f64>, v: &mut DMatrix<f64>) {
    for (x, mut c) in points.column_iter().zip(v.column_iter_mut()) {
        let p = x.dot(&c);
        c.axpy(-p, &x, 1.0);
    }
}

/// Advances all `points` one step of length `dt`; attention reads the first
/// `n_keys` of them.
pub(crate) fn advance(points: &DMatrix<f64>, n_keys: usize, p: &SdeParams, key: StreamKey, dt: f64) -> Result<DMatrix<f64>> {
    advance_signed(points, n_keys, p, key, dt, 1.0)
}

fn advance_signed(
    points: &DMatrix<f64>,
    n_keys: usize,
    p: &SdeParams,
    key: StreamKey,
    dt: f64,
    sign: f64,
) -> Result<DMatrix<f64>> {
    let sampler = FieldSampler::new(&p.law, p.beta.value(), points, n_keys, p.dense());
    let q = points.ncols();
    let d = points.nrows();

    // drift b = V̄ E_A m (zero for centered laws)
    let drift = match p.variant {
        SdeVariant::GaussianDriftless => None,
        SdeVariant::General if p.law.is_centered() => None,
        SdeVariant::General => {
            let mean = match sampler.fixed_means() {
                Some(m) => m.vectors.clone(),
                None => {
                    let mut rng = key.child(Tag::Drift, 0).rng();
                    let mut acc = DMatrix::zeros(d, q);
                    for _ in 0..p.drift_samples {
                        acc += sampler.draw_means(&mut rng).vectors;
                    }
                    acc / p.drift_samples as f64
                }
            };
            let mut b = &p.law.mean_v * mean;
            project_columns(points, &mut b);
            Some(b)
        }
    };
    if p.alpha == 0.0 && drift.is_none() {
        return Ok(points.clone());
    }

    let mut zrng = key.child(Tag::Noise, 0).rng();
    let z: Vec<f64> = (0..p.modes).map(|_| zrng.sample(StandardNormal)).collect();
    let scale = sign * (p.alpha * dt / p.modes as f64).sqrt();
    let corrector = p.scheme == Scheme::ExplicitCorrector;
    let mut noise = DMatrix::zeros(d, q);
    let mut sq = vec![0.0; q];

    // fluctuation of mode m at the given means: σ_V G m + (V̄ m − b)
    let fluctuation = |means: &crate::field::Means, s: f64, rng: &mut crate::rng::StreamRng| {
        let mut xi = sampler.draw_value_noise(means, s, rng);
        if let (Some(b), Some(mv)) = (&drift, sampler.mean_velocity(means)) {
            xi += (mv - b) * s;
        }
        xi
    };

    match sampler.fixed_means() {
        Some(means) if !corrector => {
            // Σ_m Z_m σ_V G_m m has the law of ‖Z‖ σ_V G m given Z
            let zn = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            let mut rng = key.child(Tag::Mode, 0).rng();
            noise = sampler.draw_value_noise(means, zn, &mut rng);
        }
        fixed => {
            for (m, &zm) in z.iter().enumerate() {
                let mut rng = key.child(Tag::Mode, m as u64).rng();
                let means = match fixed {
                    Some(f) => f.clone(),
                    None => sampler.draw_means(&mut rng),
                };
                let mut xi = fluctuation(&means, 1.0, &mut rng);
                if corrector {
                    project_columns(points, &mut xi);
                    for (s, c) in sq.iter_mut().zip(xi.column_iter()) {
                        *s += c.norm_squared();
                    }
                }
                noise.zip_apply(&xi, |a, b| *a += zm * b);
            }
        }
    }

    let mut next = points.clone();
    next.zip_apply(&noise, |a, b| *a += scale * b);
    if let Some(b) = &drift {
        next.zip_apply(b, |a, v| *a += dt * v);
    }
    if corrector {
        let c = p.alpha * dt / (2.0 * p.modes as f64);
        for ((mut col, x), s) in next.column_iter_mut().zip(points.column_iter()).zip(&sq) {
            col.axpy(-c * s, &x, 1.0);
        }
    }
    normalize_columns(&mut next)?;
    Ok(next)
}

/// One step of length `p.dt` using the random streams under `key`.
pub fn sde_step(x: &TokenConfig, p: &SdeParams, key: StreamKey) -> Result<TokenConfig> {
    p.validate()?;
    step_with(x, p, key, p.dt)
}

/// The step of [`sde_step`] and its mirror image with every `Z_m`
/// negated (same heads). Averaging over the pair cancels the martingale
/// part of the increment exactly.
pub fn sde_step_antithetic(x: &TokenConfig, p: &SdeParams, key: StreamKey) -> Result<(TokenConfig, TokenConfig)> {
    p.validate()?;
    Ok((signed_step(x, p, key, p.dt, 1.0)?, signed_step(x, p, key, p.dt, -1.0)?))
}

fn step_with(x: &TokenConfig, p: &SdeParams, key: StreamKey, dt: f64) -> Result<TokenConfig> {
    signed_step(x, p, key, dt, 1.0)
}

fn signed_step(x: &TokenConfig, p: &SdeParams, key: StreamKey, dt: f64, sign: f64) -> Result<TokenConfig> {
    if p.law.d != x.d() {
        return Err(Error::Shape("law dimension differs from token dimension".into()));
    }
    let order = canonical_order(x.matrix());
    let sorted = x.permuted(&order);
    let next = advance_signed(sorted.matrix(), x.n(), p, key, dt, sign)?;
    let mut out = DMatrix::zeros(x.d(), x.n());
    for (j, &k) in order.iter().enumerate() {
        out.set_column(k, &next.column(j));
    }
    Ok(TokenConfig::from_matrix_unchecked(out))
}

/// Integrates to time `t`; step `s` uses the streams `(seed, step s)`.
pub fn run_sde(x0: &TokenConfig, p: &SdeParams, t: f64, stride: usize) -> Result<Trajectory> {
    p.validate()?;
    let root = StreamKey::root(p.seed);
    let (steps, last) = step_plan(t, p.dt);
    let mut traj = Trajectory::start(x0, stride);
    let mut x = x0.clone();
    for s in 0..steps {
        let h = if s + 1 == steps { last } else { p.dt };
        x = step_with(&x, p, root.child(Tag::Step, s as u64), h)?;
        let time = if s + 1 == steps { t } else { (s + 1) as f64 * p.dt };
        traj.record(s + 1, time, &x, s + 1 == steps);
    }
    Ok(traj)
}

/// Overlap `R(t)` of two tagged particles carried by a background cloud.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaggedPairRun {
    pub times: Vec<f64>,
    pub overlaps: Vec<f64>,
    pub n_bg: usize,
}

impl TaggedPairRun {
    /// `sup_t |R(t) − R(0)|`.
    pub fn sup_deviation(&self) -> f64 {
        let r0 = self.overlaps[0];
        self.overlaps.iter().map(|r| (r - r0).abs()).fold(0.0, f64::max)
    }
}

/// Background of `n_bg` i.i.d. uniform particles plus two uniform tagged
/// particles, all drawn from the stream `(seed, init)`.
pub fn run_tagged_pair(n_bg: usize, d: usize, p: &SdeParams, t: f64) -> Result<TaggedPairRun> {
    if n_bg < 2 {
        return Err(Error::param("n_bg", "need at least two background particles"));
    }
    let mut rng = StreamKey::root(p.seed).child(Tag::Init, 0).rng();
    let bg = uniform_config(n_bg, d, &mut rng)?;
    let a = uniform_point(d, &mut rng)?;
    let b = uniform_point(d, &mut rng)?;
    run_tagged_pair_from(&bg, [a, b], p, t)
}

/// Evolves background and tagged particles under the same heads and
/// scalars; attention reads only the background.
pub fn run_tagged_pair_from(background: &TokenConfig, tagged: [UnitVector; 2], p: &SdeParams, t: f64) -> Result<TaggedPairRun> {
    p.validate()?;
    let (d, n_bg) = (background.d(), background.n());
    if p.law.d != d || tagged.iter().any(|u| u.dim() != d) {
        return Err(Error::Shape("dimensions of law, background and tagged particles differ".into()));
    }
    let mut points = DMatrix::zeros(d, n_bg + 2);
    points.columns_mut(0, n_bg).copy_from(background.matrix());
    points.set_column(n_bg, tagged[0].coords());
    points.set_column(n_bg + 1, tagged[1].coords());
    let overlap = |pts: &DMatrix<f64>| pts.column(n_bg).dot(&pts.column(n_bg + 1));
    let root = StreamKey::root(p.seed);
    let (steps, last) = step_plan(t, p.dt);
    let mut run = TaggedPairRun {
        times: vec![0.0],
        overlaps: vec![overlap(&points)],
        n_bg,
    };
    for s in 0..steps {
        let h = if s + 1 == steps { last } else { p.dt };
        points = advance(&points, n_bg, p, root.child(Tag::Step, s as u64), h)?;
        run.times.push(if s + 1 == steps { t } else { (s + 1) as f64 * p.dt });
        run.overlaps.push(overlap(&points));
    }
    Ok(run)
}
