//! Flat TOML run configuration.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::attention::Temperature;
use crate::chain::RegimeThresholds;
use crate::diagnostics::TestFunction;
use crate::error::{Error, Result};
use crate::sde::{Sampling, Scheme, SdeVariant};
use crate::weights::WeightLaw;

/// Recognized scenario names, in display order.
pub const SCENARIOS: &[(&str, &str)] = &[
    ("chain", "layer-by-layer token chain; order parameters per layer"),
    ("sde", "homogenized SDE with common noise; order parameters per step"),
    ("simplex-ode", "overlap ODE from simplex initialization (optional SDE comparison)"),
    ("small-beta", "mean overlap of a large cloud against the logistic solution"),
    ("slow-motion", "tagged pair overlap in a large-β background cloud"),
    ("logistic-sde", "limiting logistic SDE paths and absorption fractions"),
    ("weak-error", "chain vs SDE gap across step sizes at fixed α"),
    ("phase-diagram", "regime labels and empirical noise on an (η, α) grid"),
    ("kernel-check", "Monte-Carlo covariance kernel vs the Gaussian closed form"),
    ("delta-check", "normalized overlap of Gaussian projections vs its expansion"),
];

pub(crate) const DEFAULT_SMALL_BETA_D: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Init {
    Uniform,
    Simplex,
}

/// One flat table of typed keys. Keys a scenario does not use must be absent
/// or are rejected; omitted optional keys are filled in by [`RunConfig::resolve`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: String,
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Entry scale of `V`; defaults to `1/√d`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_v: Option<f64>,
    /// Entry scale of `W`, `W'`; defaults to `1/√d`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_a: Option<f64>,
    /// `V̄ = mean_v_scale · I`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_v_scale: Option<f64>,
    /// `Ā = mean_a_scale · I`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_a_scale: Option<f64>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub init: Option<Init>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma0: Option<f64>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heads: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_horizon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub modes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variant: Option<SdeVariant>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scheme: Option<Scheme>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sampling: Option<Sampling>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drift_samples: Option<usize>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_points: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fg_max_samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ode_dt: Option<f64>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_bg: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u0: Option<f64>,
    /// Number of individual paths written to CSV.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub record_paths: Option<usize>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub etas: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alphas: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_l: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phi: Option<TestFunction>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ref_dt_divisor: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub self_consistency: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<RegimeThresholds>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dims: Option<Vec<usize>>,
}

/// Keys each scenario accepts beyond the common ones, and which are required.
fn keys(scenario: &str) -> Option<(&'static [&'static str], &'static [&'static str])> {
    Some(match scenario {
        "chain" => (
            &["n", "d", "beta", "sigma_v", "sigma_a", "mean_v_scale", "mean_a_scale", "init", "gamma0", "eta", "heads", "depth"],
            &["n", "d", "eta", "depth"],
        ),
        "sde" => (
            &[
                "n", "d", "beta", "sigma_v", "sigma_a", "mean_v_scale", "mean_a_scale", "init", "gamma0", "alpha", "dt",
                "t_horizon", "modes", "variant", "scheme", "sampling", "drift_samples",
            ],
            &["n", "d", "dt", "t_horizon"],
        ),
        "simplex-ode" => (
            &[
                "n", "d", "beta", "sigma_v", "sigma_a", "gamma0", "t_horizon", "grid_points", "fg_max_samples", "ode_dt",
                "alpha", "dt", "modes", "drift_samples", "sampling",
            ],
            &["n", "d", "gamma0", "t_horizon"],
        ),
        "small-beta" => (&["n", "d", "beta", "alpha", "dt", "t_horizon", "modes", "sampling"], &["n", "dt", "t_horizon"]),
        "slow-motion" => (&["n_bg", "d", "beta", "alpha", "dt", "t_horizon", "modes", "sampling"], &["n_bg", "d", "dt", "t_horizon"]),
        "logistic-sde" => (&["u0", "dt", "t_horizon", "record_paths"], &["u0", "dt", "t_horizon"]),
        "weak-error" => (
            &["n", "d", "beta", "sigma_v", "sigma_a", "init", "gamma0", "alpha", "etas", "t_l", "phi", "ref_dt_divisor", "modes", "self_consistency"],
            &["n", "d", "alpha", "etas", "t_l"],
        ),
        "phase-diagram" => (&["n", "d", "beta", "sigma_a", "heads", "etas", "alphas", "depth", "thresholds"], &["n", "d", "etas", "alphas", "depth"]),
        "kernel-check" => (&["n", "d", "beta", "samples"], &["n", "d"]),
        "delta-check" => (&["r", "dims", "samples"], &["r", "dims"]),
        _ => return None,
    })
}

impl RunConfig {
    pub fn from_toml_str(text: &str, path: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let key = e.message().split('`').nth(1).unwrap_or("").to_string();
            Error::config(if key.is_empty() { path.to_string() } else { format!("{path}:{key}") }, e.message())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    fn present(&self) -> Vec<&'static str> {
        let v = serde_json::to_value(self).expect("config serializes");
        let obj = v.as_object().expect("config is a table");
        ALL_KEYS.iter().copied().filter(|k| obj.get(*k).is_some_and(|x| !x.is_null())).collect()
    }

    /// Checks the scenario and its keys, then fills in defaults. The result
    /// has every key the scenario reads set explicitly.
    pub fn resolve(&self) -> Result<RunConfig> {
        let (allowed, required) =
            keys(&self.scenario).ok_or_else(|| Error::config("scenario", format!("unknown scenario `{}`", self.scenario)))?;
        if self.seed.is_none() {
            return Err(Error::config("seed", "an explicit seed is required"));
        }
        for k in self.present() {
            if !COMMON.contains(&k) && !allowed.contains(&k) {
                return Err(Error::config(k, format!("not used by scenario `{}`", self.scenario)));
            }
        }
        let present = self.present();
        for k in required {
            if !present.contains(k) {
                return Err(Error::config(*k, format!("required by scenario `{}`", self.scenario)));
            }
        }
        let mut c = self.clone();
        c.threads.get_or_insert(1);
        c.trials.get_or_insert(if c.scenario == "simplex-ode" { 0 } else { 1 });
        c.stride.get_or_insert(1);
        let has = |k: &str| allowed.contains(&k);
        if has("d") && c.d.is_none() && c.scenario == "small-beta" {
            c.d = Some(DEFAULT_SMALL_BETA_D);
        }
        if has("beta") {
            let d = c.d.unwrap_or(2) as f64;
            c.beta.get_or_insert(if c.scenario == "slow-motion" { 10.0 * d * d } else { 0.0 });
        }
        if has("sigma_v") {
            c.sigma_v.get_or_insert(1.0 / (c.d.unwrap() as f64).sqrt());
        }
        if has("sigma_a") {
            c.sigma_a.get_or_insert(1.0 / (c.d.unwrap() as f64).sqrt());
        }
        if has("mean_v_scale") {
            c.mean_v_scale.get_or_insert(0.0);
        }
        if has("mean_a_scale") {
            c.mean_a_scale.get_or_insert(0.0);
        }
        if has("init") {
            c.init.get_or_insert(Init::Uniform);
        }
        if has("heads") {
            c.heads.get_or_insert(1);
        }
        if has("alpha") {
            c.alpha.get_or_insert(1.0);
        }
        if has("modes") {
            c.modes.get_or_insert(32);
        }
        if has("variant") {
            c.variant.get_or_insert(SdeVariant::GaussianDriftless);
        }
        if has("scheme") {
            c.scheme.get_or_insert(Scheme::Projected);
        }
        if has("sampling") {
            c.sampling.get_or_insert(Sampling::Auto);
        }
        if has("drift_samples") {
            c.drift_samples.get_or_insert(64);
        }
        if has("grid_points") {
            c.grid_points.get_or_insert(33);
            c.fg_max_samples.get_or_insert(200_000);
            c.ode_dt.get_or_insert(1e-3);
        }
        if c.scenario == "simplex-ode" {
            c.dt.get_or_insert(1e-3);
        }
        if has("record_paths") {
            c.record_paths.get_or_insert(10);
        }
        if has("phi") {
            c.phi.get_or_insert(TestFunction::MeanOverlap);
            c.ref_dt_divisor.get_or_insert(8);
            c.self_consistency.get_or_insert(false);
        }
        if has("thresholds") {
            c.thresholds.get_or_insert_with(RegimeThresholds::default);
        }
        if has("samples") {
            c.samples.get_or_insert(if c.scenario == "kernel-check" { 20_000 } else { 100_000 });
        }
        c.validate()?;
        Ok(c)
    }

    fn validate(&self) -> Result<()> {
        let pos = |k: &str, v: Option<f64>| match v {
            Some(x) if !(x > 0.0 && x.is_finite()) => Err(Error::config(k, "must be positive and finite")),
            _ => Ok(()),
        };
        pos("dt", self.dt)?;
        pos("t_horizon", self.t_horizon)?;
        pos("eta", self.eta)?;
        pos("t_l", self.t_l)?;
        pos("ode_dt", self.ode_dt)?;
        if let Some(b) = self.beta {
            if !(b >= 0.0 && b.is_finite()) {
                return Err(Error::config("beta", "must be finite and non-negative"));
            }
        }
        if let Some(a) = self.alpha {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(Error::config("alpha", "must be finite and non-negative"));
            }
        }
        for (k, v) in [("threads", self.threads), ("stride", self.stride), ("heads", self.heads), ("modes", self.modes)] {
            if v == Some(0) {
                return Err(Error::config(k, "must be at least 1"));
            }
        }
        if self.scenario != "simplex-ode" && self.trials == Some(0) {
            return Err(Error::config("trials", "must be at least 1"));
        }
        if let Some(n) = self.n {
            if n < 2 {
                return Err(Error::config("n", "need at least two tokens"));
            }
        }
        if let Some(d) = self.d {
            if d < 2 {
                return Err(Error::config("d", "need d ≥ 2"));
            }
        }
        if self.init == Some(Init::Simplex) && self.gamma0.is_none() {
            return Err(Error::config("gamma0", "required for simplex initialization"));
        }
        for (k, v) in [("etas", &self.etas), ("alphas", &self.alphas)] {
            if let Some(v) = v {
                if v.is_empty() || v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                    return Err(Error::config(k, "must be a non-empty list of non-negative numbers"));
                }
            }
        }
        if let Some(u) = self.u0 {
            if !(-1.0..=1.0).contains(&u) {
                return Err(Error::config("u0", "must lie in [-1, 1]"));
            }
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed.expect("resolved config has a seed")
    }

    /// The weight law described by the scale keys.
    pub fn law(&self) -> Result<WeightLaw> {
        let d = self.d.ok_or_else(|| Error::config("d", "missing"))?;
        let eye = DMatrix::<f64>::identity(d, d);
        WeightLaw::new(
            d,
            self.sigma_v.unwrap_or(1.0 / (d as f64).sqrt()),
            self.sigma_a.unwrap_or(1.0 / (d as f64).sqrt()),
            &eye * self.mean_v_scale.unwrap_or(0.0),
            &eye * self.mean_a_scale.unwrap_or(0.0),
        )
    }

    pub fn temperature(&self) -> Result<Temperature> {
        Temperature::new(self.beta.unwrap_or(0.0)).map_err(|e| Error::config("beta", e.to_string()))
    }

    /// Copy with the fields that do not affect results cleared.
    pub(crate) fn identity(&self) -> RunConfig {
        RunConfig {
            out_dir: None,
            threads: None,
            ..self.clone()
        }
    }
}

const COMMON: &[&str] = &["scenario", "seed", "out_dir", "threads", "trials", "stride"];

const ALL_KEYS: &[&str] = &[
    "scenario", "seed", "out_dir", "threads", "trials", "stride", "n", "d", "beta", "sigma_v", "sigma_a", "mean_v_scale",
    "mean_a_scale", "init", "gamma0", "eta", "heads", "depth", "alpha", "dt", "t_horizon", "modes", "variant", "scheme",
    "sampling", "drift_samples", "grid_points", "fg_max_samples", "ode_dt", "n_bg", "u0", "record_paths", "etas", "alphas",
    "t_l", "phi", "ref_dt_divisor", "self_consistency", "thresholds", "samples", "r", "dims",
];
