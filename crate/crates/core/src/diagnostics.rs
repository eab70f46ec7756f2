//! Comparisons between the chain, the SDE and the scalar reductions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::Temperature;
use crate::chain::{run_chain, ChainParams, Trajectory};
use crate::error::{Error, Result};
use crate::reductions::ScalarPath;
use crate::rng::{StreamKey, Tag};
use crate::sde::{run_sde, SdeParams, SdeVariant};
use crate::sphere::{gram, kappa, mean_overlap, TokenConfig};
use crate::stats::{fit_line, LineFit, RunningStats};
use crate::weights::WeightLaw;

/// Bounded smooth observables `φ: (S^{d-1})^n → [−1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestFunction {
    MeanOverlap,
    Kappa,
    /// `⟨x_1, x_2⟩`.
    R12,
    /// `exp(1 − 1/(1 − R12²))`, zero at `R12 = ±1`.
    BumpR12,
}

impl TestFunction {
    pub fn eval(self, x: &TokenConfig) -> f64 {
        match self {
            TestFunction::MeanOverlap => mean_overlap(x),
            TestFunction::Kappa => kappa(x),
            TestFunction::R12 => x.token(0).dot(&x.token(1)).clamp(-1.0, 1.0),
            TestFunction::BumpR12 => {
                let r = x.token(0).dot(&x.token(1));
                let q = 1.0 - r * r;
                if q <= 0.0 {
                    0.0
                } else {
                    (1.0 - 1.0 / q).exp()
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TestFunction::MeanOverlap => "mean_overlap",
            TestFunction::Kappa => "kappa",
            TestFunction::R12 => "r12",
            TestFunction::BumpR12 => "bump_r12",
        }
    }
}

pub fn test_functions() -> Vec<TestFunction> {
    vec![
        TestFunction::MeanOverlap,
        TestFunction::Kappa,
        TestFunction::R12,
        TestFunction::BumpR12,
    ]
}

/// Everything a weak-error sweep holds fixed.
#[derive(Clone, Debug)]
pub struct WeakErrorConfig {
    pub law: WeightLaw,
    pub beta: Temperature,
    /// `α = η σ² / H`, held fixed by choosing `H = η σ² / α`.
    pub alpha: f64,
    /// Macroscopic horizon `t_L`; `L = t_L / η`.
    pub t_l: f64,
    pub phi: TestFunction,
    pub trials: usize,
    /// SDE step `dt = η / ref_dt_divisor`.
    pub ref_dt_divisor: usize,
    pub sde_modes: usize,
    pub seed: u64,
    /// Also compare the SDE at `dt` with the SDE at `dt/2`.
    pub self_consistency: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakErrorReport {
    pub phi: TestFunction,
    pub trials: usize,
    pub seed: u64,
    pub etas: Vec<f64>,
    pub heads: Vec<usize>,
    pub depths: Vec<usize>,
    pub chain_mean: Vec<f64>,
    pub chain_stderr: Vec<f64>,
    pub sde_mean: Vec<f64>,
    pub sde_stderr: Vec<f64>,
    pub gaps: Vec<f64>,
    pub gap_stderr: Vec<f64>,
    /// Gap within three standard errors of zero (excluded from the fit).
    pub censored: Vec<bool>,
    pub fit: Option<LineFit>,
    pub self_gaps: Option<Vec<f64>>,
    pub self_gap_stderr: Option<Vec<f64>>,
}

impl WeakErrorReport {
    /// Gaps do not grow by more than two combined standard errors as `η`
    /// decreases.
    pub fn non_increasing_within(&self, sigmas: f64) -> bool {
        (1..self.gaps.len()).all(|k| {
            let se = (self.gap_stderr[k].powi(2) + self.gap_stderr[k - 1].powi(2)).sqrt();
            self.gaps[k] <= self.gaps[k - 1] + sigmas * se
        })
    }
}

fn heads_for(eta: f64, sigma2: f64, alpha: f64) -> Result<usize> {
    let h = eta * sigma2 / alpha;
    let r = h.round();
    if r < 1.0 || (h - r).abs() > 1e-6 * r {
        return Err(Error::param(
            "eta",
            format!("η σ²/α = {h} must be a positive integer head count"),
        ));
    }
    Ok(r as usize)
}

fn ensemble<F>(trials: usize, f: F) -> Result<RunningStats>
where
    F: Fn(u64) -> Result<f64> + Sync,
{
    let values: Vec<f64> = (0..trials as u64)
        .into_par_iter()
        .map(&f)
        .collect::<Result<Vec<_>>>()?;
    Ok(values.into_iter().collect())
}

/// Estimates `|E φ(chain at η) − E φ(SDE)|` at `t_L` for each `η`.
///
/// Chain and SDE use independent random streams. `α` is held fixed by the
/// head count; the SDE runs with the matched noise level `η/H` and step
/// `η / ref_dt_divisor`.
pub fn weak_error_sweep(x0: &TokenConfig, cfg: &WeakErrorConfig, etas: &[f64]) -> Result<WeakErrorReport> {
    if etas.len() < 3 || etas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::param("etas", "need at least three decreasing step sizes"));
    }
    if cfg.trials < 2 {
        return Err(Error::param("trials", "need at least two trials"));
    }
    if !cfg.law.is_centered() {
        return Err(Error::NeedsSigmaEstimate);
    }
    let sigma2 = cfg.law.sigma_v.powi(2) * (cfg.law.d as f64 - 1.0);
    let root = StreamKey::root(cfg.seed);
    let mut rep = WeakErrorReport {
        phi: cfg.phi,
        trials: cfg.trials,
        seed: cfg.seed,
        etas: etas.to_vec(),
        heads: vec![],
        depths: vec![],
        chain_mean: vec![],
        chain_stderr: vec![],
        sde_mean: vec![],
        sde_stderr: vec![],
        gaps: vec![],
        gap_stderr: vec![],
        censored: vec![],
        fit: None,
        self_gaps: cfg.self_consistency.then(Vec::new),
        self_gap_stderr: cfg.self_consistency.then(Vec::new),
    };
    for (e, &eta) in etas.iter().enumerate() {
        let heads = heads_for(eta, sigma2, cfg.alpha)?;
        let depth = (cfg.t_l / eta).round() as usize;
        if ((depth as f64) * eta - cfg.t_l).abs() > 1e-9 * cfg.t_l.max(1.0) {
            return Err(Error::param("eta", format!("t_L / η = {} is not an integer", cfg.t_l / eta)));
        }
        let key = root.child(Tag::Trial, e as u64);
        let chain = ensemble(cfg.trials, |i| {
            let p = ChainParams {
                law: cfg.law.clone(),
                beta: cfg.beta,
                eta,
                heads,
                depth,
                seed: key.child(Tag::Chain, i).raw(),
            };
            Ok(cfg.phi.eval(run_chain(x0, &p, depth.max(1))?.final_state()))
        })?;
        let sde_at = |dt: f64, tag: Tag| {
            ensemble(cfg.trials, |i| {
                let p = SdeParams {
                    law: cfg.law.clone(),
                    beta: cfg.beta,
                    alpha: eta / heads as f64,
                    dt,
                    modes: cfg.sde_modes,
                    variant: SdeVariant::General,
                    seed: key.child(tag, i).raw(),
                    drift_samples: 16,
                    scheme: crate::sde::Scheme::Projected,
                    sampling: crate::sde::Sampling::Auto,
                };
                let tr = run_sde(x0, &p, cfg.t_l, usize::MAX)?;
                Ok(cfg.phi.eval(tr.final_state()))
            })
        };
        let dt = eta / cfg.ref_dt_divisor as f64;
        let sde = sde_at(dt, Tag::Sde)?;
        let gap = (chain.mean - sde.mean).abs();
        let se = (chain.stderr().powi(2) + sde.stderr().powi(2)).sqrt();
        if cfg.self_consistency {
            let fine = sde_at(dt / 2.0, Tag::Reference)?;
            rep.self_gaps.as_mut().unwrap().push((fine.mean - sde.mean).abs());
            rep.self_gap_stderr
                .as_mut()
                .unwrap()
                .push((fine.stderr().powi(2) + sde.stderr().powi(2)).sqrt());
        }
        rep.heads.push(heads);
        rep.depths.push(depth);
        rep.chain_mean.push(chain.mean);
        rep.chain_stderr.push(chain.stderr());
        rep.sde_mean.push(sde.mean);
        rep.sde_stderr.push(sde.stderr());
        rep.gaps.push(gap);
        rep.gap_stderr.push(se);
        rep.censored.push(gap <= 3.0 * se);
    }
    if rep.gaps.iter().zip(&rep.gap_stderr).all(|(g, s)| g < s) {
        return Err(Error::InsufficientTrials);
    }
    let (lx, ly): (Vec<f64>, Vec<f64>) = rep
        .etas
        .iter()
        .zip(&rep.gaps)
        .zip(&rep.censored)
        .filter(|(_, &c)| !c)
        .map(|((e, g), _)| (e.ln(), g.ln()))
        .unzip();
    rep.fit = fit_line(&lx, &ly);
    Ok(rep)
}

/// `max_{i≠j} |R_ij(t) − γ(t)|` at every snapshot of `traj`.
pub fn overlap_deviation(traj: &Trajectory, reference: &ScalarPath) -> Result<ScalarPath> {
    let mut out = ScalarPath {
        times: Vec::with_capacity(traj.times.len()),
        values: Vec::with_capacity(traj.times.len()),
    };
    for (&t, x) in traj.times.iter().zip(&traj.states) {
        let g = reference.at(t).ok_or(Error::TimeMismatch {
            t,
            horizon: reference.horizon(),
        })?;
        let r = gram(x);
        let (lo, hi) = r.off_diagonal_range();
        out.times.push(t);
        out.values.push((hi - g).abs().max((lo - g).abs()));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapseMetrics {
    pub m: f64,
    /// `(Σλ)² / Σλ²` over Gram eigenvalues, in `[1, n]`.
    pub participation_ratio: f64,
    pub max_overlap: f64,
    pub min_overlap: f64,
}

/// Uses `(tr R)² / ‖R‖_F²`, which equals the eigenvalue participation ratio.
pub fn collapse_metrics(x: &TokenConfig) -> CollapseMetrics {
    let r = gram(x);
    let e = r.entries();
    let pr = e.trace().powi(2) / e.norm_squared();
    let (lo, hi) = r.off_diagonal_range();
    CollapseMetrics {
        m: mean_overlap(x),
        participation_ratio: pr.clamp(1.0, x.n() as f64),
        max_overlap: hi,
        min_overlap: lo,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reductions::simplex_beta_zero;
    use crate::rng::StreamRng;
    use crate::sphere::{haar_orthogonal, normalize, simplex_config, uniform_config};
    use crate::weights::gaussian_default;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn test_function_examples() {
        let e = normalize(&DVector::from_element(4, 1.0)).unwrap();
        let same = TokenConfig::from_vectors(&[e.clone(), e.clone()]).unwrap();
        assert!((TestFunction::MeanOverlap.eval(&same) - 1.0).abs() < 1e-15);
        let ortho = TokenConfig::new(DMatrix::identity(3, 3)).unwrap();
        assert_eq!(TestFunction::R12.eval(&ortho), 0.0);
        let mut rng = StreamRng::seed_from(1);
        for _ in 0..1000 {
            let x = uniform_config(3, 4, &mut rng).unwrap();
            assert!(test_functions().iter().all(|f| f.eval(&x).abs() <= 1.0));
        }
    }

    #[test]
    fn collapse_examples() {
        let e = normalize(&DVector::from_element(5, 1.0)).unwrap();
        let same = TokenConfig::from_vectors(&[e.clone(), e.clone(), e]).unwrap();
        let c = collapse_metrics(&same);
        assert!((c.participation_ratio - 1.0).abs() < 1e-12 && (c.m - 1.0).abs() < 1e-15);
        let ortho = TokenConfig::new(DMatrix::identity(6, 6)).unwrap();
        assert!((collapse_metrics(&ortho).participation_ratio - 6.0).abs() < 1e-12);
        let (n, g) = (7, 0.3);
        let s = simplex_config(n, 10, g, Some(&mut StreamRng::seed_from(2))).unwrap();
        let c = collapse_metrics(&s);
        let l1 = 1.0 - g;
        let l2 = 1.0 + (n as f64 - 1.0) * g;
        let pr = (l1 * (n as f64 - 1.0) + l2).powi(2) / (l1 * l1 * (n as f64 - 1.0) + l2 * l2);
        assert!((c.participation_ratio - pr).abs() < 1e-10);
        let eig = gram(&s).eigenvalues();
        let pr_eig = eig.sum().powi(2) / eig.norm_squared();
        assert!((c.participation_ratio - pr_eig).abs() < 1e-10);
        assert!((c.max_overlap - g).abs() < 1e-10 && (c.min_overlap - g).abs() < 1e-10);
        assert!((c.m - l2 / n as f64).abs() < 1e-10);
    }

    fn simplex_traj(n: usize, d: usize, gammas: &[f64]) -> Trajectory {
        let states: Vec<TokenConfig> = gammas.iter().map(|&g| simplex_config(n, d, g, None).unwrap()).collect();
        Trajectory {
            times: (0..gammas.len()).map(|k| k as f64 * 0.1).collect(),
            states,
            stride: 1,
            series: vec![],
        }
    }

    #[test]
    fn deviation_examples() {
        let gammas: Vec<f64> = (0..5).map(|k| simplex_beta_zero(0.2, 4, k as f64 * 0.1)).collect();
        let traj = simplex_traj(4, 6, &gammas);
        let reference = ScalarPath {
            times: traj.times.clone(),
            values: gammas.clone(),
        };
        let dev = overlap_deviation(&traj, &reference).unwrap();
        assert!(dev.values.iter().all(|&v| v < 1e-10));
        // perturb one token
        let eps = 1e-3;
        let mut m = traj.states[0].matrix().clone();
        m[(1, 0)] += eps;
        m[(2, 0)] -= eps;
        let mut perturbed = traj.clone();
        perturbed.states[0] = TokenConfig::from_unnormalized(m).unwrap();
        let r = gram(&perturbed.states[0]);
        let direct = (0..4)
            .flat_map(|i| (0..4).map(move |j| (i, j)))
            .filter(|(i, j)| i != j)
            .map(|(i, j)| (r.get(i, j) - gammas[0]).abs())
            .fold(0.0, f64::max);
        let dev = overlap_deviation(&perturbed, &reference).unwrap();
        assert!((dev.values[0] - direct).abs() < 1e-14, "{} vs {direct}", dev.values[0]);
        assert!(direct > 0.01 * eps, "{direct}");
        // global rotation leaves the deviation unchanged
        let o = haar_orthogonal(6, &mut StreamRng::seed_from(3));
        let mut rotated = perturbed.clone();
        rotated.states = perturbed.states.iter().map(|s| s.rotated(&o).unwrap()).collect();
        let dr = overlap_deviation(&rotated, &reference).unwrap();
        for (a, b) in dr.values.iter().zip(&dev.values) {
            assert!((a - b).abs() < 1e-12);
        }
        let short = ScalarPath {
            times: vec![0.0, 0.2],
            values: vec![0.2, 0.3],
        };
        assert!(matches!(overlap_deviation(&traj, &short), Err(Error::TimeMismatch { .. })));
    }

    #[test]
    fn chain_against_itself_has_zero_gap() {
        let mut rng = StreamRng::seed_from(4);
        let x = uniform_config(3, 5, &mut rng).unwrap();
        let p = ChainParams {
            law: gaussian_default(5).unwrap(),
            beta: Temperature::new(1.0).unwrap(),
            eta: 0.1,
            heads: 2,
            depth: 10,
            seed: 7,
        };
        let a: RunningStats = (0..50u64)
            .map(|s| mean_overlap(run_chain(&x, &ChainParams { seed: s, ..p.clone() }, 10).unwrap().final_state()))
            .collect();
        let b: RunningStats = (0..50u64)
            .map(|s| mean_overlap(run_chain(&x, &ChainParams { seed: s, ..p.clone() }, 10).unwrap().final_state()))
            .collect();
        assert_eq!((a.mean - b.mean).abs(), 0.0);
    }

    #[test]
    fn sweep_validates_inputs_and_reports() {
        let d = 4;
        let law = crate::weights::WeightLaw::centered(d, (1.0f64 / 3.0).sqrt(), 0.5).unwrap();
        // σ² = σ_V²(d−1) = 1, α = 0.25: H = 4η
        let cfg = WeakErrorConfig {
            law,
            beta: Temperature::zero(),
            alpha: 0.25,
            t_l: 1.0,
            phi: TestFunction::MeanOverlap,
            trials: 400,
            ref_dt_divisor: 4,
            sde_modes: 8,
            seed: 3,
            self_consistency: true,
        };
        let x = simplex_config(3, d, 0.0, Some(&mut StreamRng::seed_from(5))).unwrap();
        assert!(weak_error_sweep(&x, &cfg, &[1.0, 0.5]).is_err());
        assert!(weak_error_sweep(&x, &cfg, &[0.3, 0.25, 0.2]).is_err());
        match weak_error_sweep(&x, &cfg, &[1.0, 0.5, 0.25]) {
            Ok(rep) => {
                assert_eq!(rep.heads, vec![4, 2, 1]);
                assert_eq!(rep.depths, vec![1, 2, 4]);
                assert!(rep.gaps.iter().all(|&g| g >= 0.0));
                assert_eq!(rep.self_gaps.as_ref().unwrap().len(), 3);
            }
            Err(Error::InsufficientTrials) => {}
            Err(e) => panic!("{e}"),
        }
    }
}
