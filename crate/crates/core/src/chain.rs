//! The discrete random-transformer chain on `(S^{d-1})^n`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::attention::{attended_means_sorted, canonical_order, Temperature};
use crate::error::{Error, Result};
use crate::rng::{StreamKey, Tag};
use crate::sphere::{kappa, mean_overlap, normalize_columns, TokenConfig};
use crate::weights::{draw_layer, HeadWeights, WeightLaw};

#[derive(Clone, Debug)]
pub struct ChainParams {
    pub law: WeightLaw,
    pub beta: Temperature,
    /// Residual step `η > 0`.
    pub eta: f64,
    pub heads: usize,
    pub depth: usize,
    pub seed: u64,
}

impl ChainParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::param("eta", "must be positive"));
        }
        if self.heads == 0 {
            return Err(Error::param("heads", "need at least one head"));
        }
        Ok(())
    }

    /// Macroscopic horizon `t_L = η L`.
    pub fn horizon(&self) -> f64 {
        self.eta * self.depth as f64
    }

    /// Noise level to use in the SDE so that one step of length `η`
    /// matches one layer's increment covariance: `η / H`.
    pub fn matched_sde_alpha(&self) -> f64 {
        self.eta / self.heads as f64
    }
}

/// Order parameters recorded at every layer or step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderSample {
    pub t: f64,
    pub m: f64,
    pub kappa: f64,
}

impl OrderSample {
    pub fn of(t: f64, x: &TokenConfig) -> Self {
        OrderSample {
            t,
            m: mean_overlap(x),
            kappa: kappa(x),
        }
    }
}

/// Snapshots every `stride` steps (plus the final state) and order
/// parameters at every step.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<TokenConfig>,
    pub stride: usize,
    pub series: Vec<OrderSample>,
}

impl Trajectory {
    pub(crate) fn start(x0: &TokenConfig, stride: usize) -> Self {
        Trajectory {
            times: vec![0.0],
            states: vec![x0.clone()],
            stride: stride.max(1),
            series: vec![OrderSample::of(0.0, x0)],
        }
    }

    pub(crate) fn record(&mut self, step: usize, t: f64, x: &TokenConfig, last: bool) {
        self.series.push(OrderSample::of(t, x));
        if step.is_multiple_of(self.stride) || last {
            self.times.push(t);
            self.states.push(x.clone());
        }
    }

    pub fn final_state(&self) -> &TokenConfig {
        self.states.last().expect("trajectory always holds the initial state")
    }
}

/// `x_i' = N(x_i + (η/H) Σ_h V_h m_{β,A_h}(x_i))`, all tokens reading the
/// pre-step configuration.
pub fn layer_step(x: &TokenConfig, heads: &[HeadWeights], eta: f64, beta: Temperature) -> Result<TokenConfig> {
    if heads.is_empty() {
        return Err(Error::param("heads", "need at least one head"));
    }
    if heads.iter().any(|h| h.d() != x.d()) {
        return Err(Error::Shape("head dimension differs from token dimension".into()));
    }
    if eta == 0.0 {
        return Ok(x.clone());
    }
    let order = canonical_order(x.matrix());
    let sorted = x.permuted(&order);
    let xs = sorted.matrix();
    let mut update = DMatrix::zeros(x.d(), x.n());
    if beta.is_zero() {
        // every head attends uniformly: Σ_h V_h x̄
        let means = attended_means_sorted(&heads[0].a, xs, beta);
        let mut vsum = heads[0].v.clone();
        for h in &heads[1..] {
            vsum += &h.v;
        }
        update.gemm(1.0, &vsum, &means, 0.0);
    } else {
        for h in heads {
            let means = attended_means_sorted(&h.a, xs, beta);
            update.gemm(1.0, &h.v, &means, 1.0);
        }
    }
    let mut next = xs.clone();
    let scale = eta / heads.len() as f64;
    next.zip_apply(&update, |a, b| *a += scale * b);
    normalize_columns(&mut next)?;
    let mut out = DMatrix::zeros(x.d(), x.n());
    for (j, &k) in order.iter().enumerate() {
        out.set_column(k, &next.column(j));
    }
    Ok(TokenConfig::from_matrix_unchecked(out))
}

/// Runs `depth` layers with fresh heads; layer `ℓ` draws from the stream
/// `(seed, layer ℓ)`.
pub fn run_chain(x0: &TokenConfig, p: &ChainParams, stride: usize) -> Result<Trajectory> {
    p.validate()?;
    if p.law.d != x0.d() {
        return Err(Error::Shape("law dimension differs from token dimension".into()));
    }
    let root = StreamKey::root(p.seed);
    let mut traj = Trajectory::start(x0, stride);
    let mut x = x0.clone();
    for l in 0..p.depth {
        let mut rng = root.child(Tag::Layer, l as u64).rng();
        let heads = draw_layer(&p.law, p.heads, &mut rng, !p.beta.is_zero());
        x = layer_step(&x, &heads, p.eta, p.beta)?;
        traj.record(l + 1, p.eta * (l + 1) as f64, &x, l + 1 == p.depth);
    }
    Ok(traj)
}

/// `α = η σ² / H`, with `σ² = σ_V² (d − 1)` for centered Gaussian values
/// unless an estimate is supplied.
pub fn alpha(p: &ChainParams, sigma2: Option<f64>) -> Result<f64> {
    let s2 = match sigma2 {
        Some(s) => s,
        None if p.law.is_centered() => p.law.sigma_v.powi(2) * (p.law.d as f64 - 1.0),
        None => return Err(Error::NeedsSigmaEstimate),
    };
    Ok(p.eta * s2 / p.heads as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegimeLabel {
    Static,
    Ballistic,
    Diffusive,
    SuperDiffusive,
}

impl RegimeLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            RegimeLabel::Static => "static",
            RegimeLabel::Ballistic => "ballistic",
            RegimeLabel::Diffusive => "diffusive",
            RegimeLabel::SuperDiffusive => "super-diffusive",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegimeThresholds {
    /// `t_L` below which nothing moves.
    pub static_time: f64,
    pub diffusive_lo: f64,
    pub super_diffusive: f64,
}

impl Default for RegimeThresholds {
    fn default() -> Self {
        RegimeThresholds {
            static_time: 0.05,
            diffusive_lo: 0.1,
            super_diffusive: 10.0,
        }
    }
}

/// Regime from `t_L = η L` and the accumulated noise `s = α t_L`.
pub fn classify_regime(eta: f64, alpha: f64, depth: usize, th: &RegimeThresholds) -> RegimeLabel {
    let t_l = eta * depth as f64;
    let s = t_l * alpha;
    if t_l < th.static_time {
        RegimeLabel::Static
    } else if s > th.super_diffusive {
        RegimeLabel::SuperDiffusive
    } else if s >= th.diffusive_lo {
        RegimeLabel::Diffusive
    } else {
        RegimeLabel::Ballistic
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamRng;
    use crate::sphere::{normalize, uniform_config};
    use crate::weights::{gaussian_default, sample_layer};
    use nalgebra::DVector;

    fn params(d: usize, beta: f64, eta: f64, heads: usize, depth: usize, seed: u64) -> ChainParams {
        ChainParams {
            law: gaussian_default(d).unwrap(),
            beta: Temperature::new(beta).unwrap(),
            eta,
            heads,
            depth,
            seed,
        }
    }

    #[test]
    fn step_examples() {
        let mut rng = StreamRng::seed_from(1);
        let x = uniform_config(4, 5, &mut rng).unwrap();
        let heads = sample_layer(&gaussian_default(5).unwrap(), 2, &mut rng);
        assert_eq!(layer_step(&x, &heads, 0.0, Temperature::zero()).unwrap(), x);
        let e = normalize(&DVector::from_fn(5, |i, _| i as f64 + 1.0)).unwrap();
        let same = TokenConfig::from_vectors(&[e.clone(), e.clone(), e]).unwrap();
        let id = HeadWeights::new(DMatrix::identity(5, 5), DMatrix::zeros(5, 5)).unwrap();
        let next = layer_step(&same, &[id], 0.3, Temperature::zero()).unwrap();
        assert!((next.matrix() - same.matrix()).amax() < 1e-15);
        let y = layer_step(&x, &heads, 0.7, Temperature::new(2.0).unwrap()).unwrap();
        assert!(y.max_norm_error() <= 1e-12);
    }

    #[test]
    fn step_matches_single_token_formula() {
        let mut rng = StreamRng::seed_from(2);
        let x = uniform_config(5, 4, &mut rng).unwrap();
        let heads = sample_layer(&gaussian_default(4).unwrap(), 3, &mut rng);
        let beta = Temperature::new(1.5).unwrap();
        let y = layer_step(&x, &heads, 0.2, beta).unwrap();
        for i in 0..5 {
            let mut v = x.token(i).into_owned();
            for h in &heads {
                v += crate::attention::velocity(h, &x.unit(i), &x, beta) * (0.2 / 3.0);
            }
            let expect = normalize(&v).unwrap();
            assert!((y.token(i) - expect.coords()).amax() < 1e-14);
        }
    }

    #[test]
    fn run_examples() {
        let mut rng = StreamRng::seed_from(3);
        let x = uniform_config(4, 6, &mut rng).unwrap();
        let t0 = run_chain(&x, &params(6, 1.0, 0.1, 2, 0, 1), 1).unwrap();
        assert_eq!(t0.states.len(), 1);
        let a = run_chain(&x, &params(6, 1.0, 0.1, 2, 25, 9), 4).unwrap();
        let b = run_chain(&x, &params(6, 1.0, 0.1, 2, 25, 9), 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.series.len(), 26);
        assert_eq!(a.times, vec![0.0, 0.4, 0.8, 1.2000000000000002, 1.6, 2.0, 2.4000000000000004, 2.5]);
        assert!(a.times.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn many_heads_suppress_noise() {
        let mut rng = StreamRng::seed_from(4);
        let d = 64;
        let x = uniform_config(8, d, &mut rng).unwrap();
        let p = params(d, 0.0, 0.05, 4096, 20, 17);
        let tr = run_chain(&x, &p, 20).unwrap();
        let drift = (tr.series.last().unwrap().m - tr.series[0].m).abs();
        assert!(drift < 0.05, "drift {drift}");
    }

    #[test]
    fn alpha_examples() {
        let mut p = params(101, 0.0, 0.1, 10, 1, 0);
        let a = alpha(&p, None).unwrap();
        assert!((a - 0.1 * (100.0 / 101.0) / 10.0).abs() < 1e-15);
        p.eta *= 2.0;
        p.heads *= 2;
        assert!((alpha(&p, None).unwrap() - a).abs() < 1e-16);
        p.heads = 1 << 40;
        assert!(alpha(&p, None).unwrap() < 1e-12);
        p.law.mean_v = DMatrix::identity(101, 101);
        assert!(matches!(alpha(&p, None), Err(Error::NeedsSigmaEstimate)));
        assert_eq!(alpha(&p, Some(2.0)).unwrap(), p.eta * 2.0 / p.heads as f64);
    }

    #[test]
    fn regime_examples() {
        let th = RegimeThresholds::default();
        let l = 1000;
        let eta = 1.0 / l as f64;
        assert_eq!(classify_regime(eta, 1.0, l, &th), RegimeLabel::Diffusive);
        assert_eq!(classify_regime(0.01 / l as f64, 1.0, l, &th), RegimeLabel::Static);
        assert_eq!(classify_regime(eta, 0.0, l, &th), RegimeLabel::Ballistic);
        assert_eq!(classify_regime(eta, 50.0, l, &th), RegimeLabel::SuperDiffusive);
    }
}
