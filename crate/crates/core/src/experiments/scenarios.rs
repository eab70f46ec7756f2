//! One function per scenario: resolved config in, tables and summary out.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde_json::{json, Value};

use super::config::{Init, RunConfig, DEFAULT_SMALL_BETA_D};
use super::output::{Cell, Table};
use crate::attention::{gaussian_kernel_closed, mc_kernel};
use crate::chain::{alpha, classify_regime, run_chain, ChainParams, Trajectory};
use crate::diagnostics::{collapse_metrics, overlap_deviation, test_functions, weak_error_sweep, WeakErrorConfig};
use crate::error::{Error, Result};
use crate::reductions::{
    delta_expansion, logistic_sde_endpoint, logistic_sde_path, logistic_solution, normalized_overlap_mc,
    simplex_beta_zero, simplex_ode_solve,
};
use crate::rng::{StreamKey, StreamRng, Tag};
use crate::sde::{run_sde, run_tagged_pair, Scheme, SdeParams, SdeVariant};
use crate::sphere::{simplex_config, uniform_config, TokenConfig};
use crate::stats::{median, RunningStats};
use crate::weights::WeightLaw;

/// Everything a scenario produces besides `meta.json`.
#[derive(Debug, Default)]
pub struct ScenarioOutput {
    pub tables: Vec<Table>,
    pub summary: serde_json::Map<String, Value>,
    pub flags: Vec<String>,
    pub notes: BTreeMap<String, Value>,
}

pub(crate) fn run(cfg: &RunConfig, run_id: &str) -> Result<ScenarioOutput> {
    match cfg.scenario.as_str() {
        "chain" => chain(cfg, run_id),
        "sde" => sde(cfg, run_id),
        "simplex-ode" => simplex_ode(cfg, run_id),
        "small-beta" => small_beta(cfg, run_id),
        "slow-motion" => slow_motion(cfg, run_id),
        "logistic-sde" => logistic(cfg, run_id),
        "weak-error" => weak_error(cfg),
        "phase-diagram" => phase_diagram(cfg),
        "kernel-check" => kernel_check(cfg),
        "delta-check" => delta_check(cfg),
        other => Err(Error::config("scenario", format!("unknown scenario `{other}`"))),
    }
}

fn trial_key(cfg: &RunConfig, i: usize) -> StreamKey {
    StreamKey::root(cfg.seed()).child(Tag::Trial, i as u64)
}

fn initial(cfg: &RunConfig, key: StreamKey) -> Result<TokenConfig> {
    let mut rng = key.child(Tag::Init, 0).rng();
    let (n, d) = (cfg.n.unwrap(), cfg.d.unwrap());
    match cfg.init.unwrap_or(Init::Uniform) {
        Init::Uniform => uniform_config(n, d, &mut rng),
        Init::Simplex => simplex_config(n, d, cfg.gamma0.unwrap(), Some(&mut rng)),
    }
}

fn trials<T: Send>(count: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    (0..count).into_par_iter().map(f).collect()
}

fn sde_params(cfg: &RunConfig, law: WeightLaw, seed: u64) -> Result<SdeParams> {
    Ok(SdeParams {
        law,
        beta: cfg.temperature()?,
        alpha: cfg.alpha.unwrap(),
        dt: cfg.dt.unwrap(),
        modes: cfg.modes.unwrap(),
        variant: cfg.variant.unwrap_or(SdeVariant::GaussianDriftless),
        seed,
        drift_samples: cfg.drift_samples.unwrap_or(64),
        scheme: cfg.scheme.unwrap_or(Scheme::Projected),
        sampling: cfg.sampling.unwrap(),
    })
}

fn stats_json(s: &RunningStats) -> Value {
    json!({ "mean": s.mean, "stderr": s.stderr(), "count": s.count })
}

/// Order-parameter and collapse tables for a set of trajectories; `every`
/// thins the per-step series.
fn trajectory_tables(
    run_id: &str,
    trajs: &[Trajectory],
    every: usize,
    reference: Option<&dyn Fn(f64, f64) -> f64>,
) -> (Table, Table) {
    let mut cols = vec!["run_id", "trial", "step", "time", "m", "kappa"];
    if reference.is_some() {
        cols.push("reference");
    }
    let mut order = Table::new("order", &cols);
    let mut collapse = Table::new(
        "collapse",
        &["run_id", "trial", "time", "participation_ratio", "max_overlap", "min_overlap"],
    );
    for (k, tr) in trajs.iter().enumerate() {
        let last = tr.series.len() - 1;
        let m0 = tr.series[0].m;
        for (s, o) in tr.series.iter().enumerate() {
            if s % every != 0 && s != last {
                continue;
            }
            let mut row: Vec<Cell> = vec![run_id.into(), k.into(), s.into(), o.t.into(), o.m.into(), o.kappa.into()];
            if let Some(f) = reference {
                row.push(f(m0, o.t).into());
            }
            order.push(row);
        }
        for (t, x) in tr.times.iter().zip(&tr.states) {
            let c = collapse_metrics(x);
            collapse.push(vec![
                run_id.into(),
                k.into(),
                (*t).into(),
                c.participation_ratio.into(),
                c.max_overlap.into(),
                c.min_overlap.into(),
            ]);
        }
    }
    (order, collapse)
}

fn sup_reference_gap(tr: &Trajectory, f: &dyn Fn(f64, f64) -> f64) -> f64 {
    let m0 = tr.series[0].m;
    tr.series.iter().map(|o| (o.m - f(m0, o.t)).abs()).fold(0.0, f64::max)
}

fn chain(cfg: &RunConfig, run_id: &str) -> Result<ScenarioOutput> {
    let law = cfg.law()?;
    let stride = cfg.stride.unwrap();
    let base = ChainParams {
        law,
        beta: cfg.temperature()?,
        eta: cfg.eta.unwrap(),
        heads: cfg.heads.unwrap(),
        depth: cfg.depth.unwrap(),
        seed: 0,
    };
    base.validate()?;
    let trajs = trials(cfg.trials.unwrap(), |i| {
        let key = trial_key(cfg, i);
        let x0 = initial(cfg, key)?;
        run_chain(&x0, &ChainParams { seed: key.child(Tag::Chain, 0).raw(), ..base.clone() }, stride)
    })?;
    let (order, collapse) = trajectory_tables(run_id, &trajs, stride, None);
    let finals: RunningStats = trajs.iter().map(|t| t.series.last().unwrap().m).collect();
    let mut out = ScenarioOutput::default();
    let a = alpha(&base, None).ok();
    out.summary.insert("horizon".into(), json!(base.horizon()));
    out.summary.insert("alpha".into(), json!(a));
    out.summary.insert(
        "regime".into(),
        json!(a.map(|a| classify_regime(base.eta, a, base.depth, &Default::default()).as_str())),
    );
    out.summary.insert("final_m".into(), stats_json(&finals));
    out.tables = vec![order, collapse];
    Ok(out)
}

fn sde(cfg: &RunConfig, run_id: &str) -> Result<ScenarioOutput> {
    let p = sde_params(cfg, cfg.law()?, 0)?;
    p.validate()?;
    let t = cfg.t_horizon.unwrap();
    let stride = cfg.stride.unwrap();
    let trajs = trials(cfg.trials.unwrap(), |i| {
        let key = trial_key(cfg, i);
        let x0 = initial(cfg, key)?;
        run_sde(&x0, &SdeParams { seed: key.child(Tag::Sde, 0).raw(), ..p.clone() }, t, stride)
    })?;
    let a = p.alpha;
    let logistic = move |m0: f64, t: f64| logistic_solution(m0, a * t);
    let closes = p.beta.is_zero() && p.variant == SdeVariant::GaussianDriftless;
    let reference: Option<&dyn Fn(f64, f64) -> f64> = if closes { Some(&logistic) } else { None };
    let (order, collapse) = trajectory_tables(run_id, &trajs, stride, reference);
    let mut out = ScenarioOutput::default();
    let finals: RunningStats = trajs.iter().map(|t| t.series.last().unwrap().m).collect();
    out.summary.insert("final_m".into(), stats_json(&finals));
    if closes {
        let gaps: Vec<f64> = trajs.iter().map(|t| sup_reference_gap(t, &logistic)).collect();
        out.summary.insert("median_sup_logistic_gap".into(), json!(median(&gaps)));
        out.summary.insert("sup_logistic_gaps".into(), json!(gaps));
    }
    out.tables = vec![order, collapse];
    Ok(out)
}

fn simplex_ode(cfg: &RunConfig, run_id: &str) -> Result<ScenarioOutput> {
    let (n, d, g0, t) = (cfg.n.unwrap(), cfg.d.unwrap(), cfg.gamma0.unwrap(), cfg.t_horizon.unwrap());
    let law = cfg.law()?;
    let beta = cfg.temperature()?;
    let mut rng = StreamKey::root(cfg.seed()).child(Tag::Sample, 0).rng();
    let (path, table) = simplex_ode_solve(
        g0,
        n,
        d,
        beta,
        &law,
        t,
        cfg.ode_dt.unwrap(),
        cfg.grid_points.unwrap(),
        cfg.fg_max_samples.unwrap(),
        &mut rng,
    )?;
    let closed = beta.is_zero();
    let mut out = ScenarioOutput::default();
    let mut cols = vec!["run_id", "time", "gamma"];
    if closed {
        cols.push("reference");
    }
    let mut gamma = Table::new("gamma", &cols);
    let mut max_err: f64 = 0.0;
    for (k, (&s, &g)) in path.times.iter().zip(&path.values).enumerate() {
        let mut row: Vec<Cell> = vec![run_id.into(), s.into(), g.into()];
        if closed {
            let r = simplex_beta_zero(g0, n, s);
            max_err = max_err.max((g - r).abs());
            row.push(r.into());
        }
        if k % cfg.stride.unwrap() == 0 || k + 1 == path.times.len() {
            gamma.push(row);
        }
    }
    let mut fg = Table::new("fg", &["run_id", "gamma", "f", "g", "stderr_f", "stderr_g"]);
    for (g, e) in table.gammas.iter().zip(&table.estimates) {
        fg.push(vec![run_id.into(), (*g).into(), e.f_hat.into(), e.g_hat.into(), e.stderr_f.into(), e.stderr_g.into()]);
    }
    let increasing = path.values.windows(2).all(|w| w[1] > w[0]);
    out.summary.insert("gamma_final".into(), json!(path.values.last()));
    out.summary.insert("strictly_increasing".into(), json!(increasing));
    out.summary.insert("fg_max_stderr".into(), json!(table.max_stderr()));
    if closed {
        out.summary.insert("max_closed_form_error".into(), json!(max_err));
    }
    out.tables = vec![gamma, fg];

    let runs = cfg.trials.unwrap();
    if runs > 0 {
        let variant = if law.is_centered() { SdeVariant::GaussianDriftless } else { SdeVariant::General };
        let p = SdeParams { variant, ..sde_params(cfg, law, 0)? };
        let stride = cfg.stride.unwrap();
        let devs = trials(runs, |i| {
            let key = trial_key(cfg, i);
            let x0 = simplex_config(n, d, g0, Some(&mut key.child(Tag::Init, 0).rng()))?;
            let tr = run_sde(&x0, &SdeParams { seed: key.child(Tag::Sde, 0).raw(), ..p.clone() }, t, stride)?;
            overlap_deviation(&tr, &path)
        })?;
        let mut dev = Table::new("deviation", &["run_id", "trial", "time", "deviation"]);
        for (k, dp) in devs.iter().enumerate() {
            for (&s, &v) in dp.times.iter().zip(&dp.values) {
                dev.push(vec![run_id.into(), k.into(), s.into(), v.into()]);
            }
        }
        let sups: Vec<f64> = devs.iter().map(|dp| dp.values.iter().cloned().fold(0.0, f64::max)).collect();
        out.summary.insert("median_sup_deviation".into(), json!(median(&sups)));
        out.summary.insert("sup_deviations".into(), json!(sups));
        out.tables.push(dev);
    }
    Ok(out)
}

fn small_beta(cfg: &RunConfig, run_id: &str) -> Result<ScenarioOutput> {
    let law = cfg.law()?;
    let p = sde_params(cfg, law, 0)?;
    let mut out = ScenarioOutput::default();
    let t = cfg.t_horizon.unwrap();
    let stride = cfg.stride.unwrap();
    let trajs = trials(cfg.trials.unwrap(), |i| {
        let key = trial_key(cfg, i);
        let x0 = initial(&RunConfig { init: Some(Init::Uniform), ..cfg.clone() }, key)?;
        run_sde(&x0, &SdeParams { seed: key.child(Tag::Sde, 0).raw(), ..p.clone() }, t, stride)
    })?;
    let a = p.alpha;
    let logistic = move |m0: f64, t: f64| logistic_solution(m0, a * t);
    let (order, collapse) = trajectory_tables(run_id, &trajs, stride, Some(&logistic));
    let gaps: Vec<f64> = trajs.iter().map(|t| sup_reference_gap(t, &logistic)).collect();
    out.summary.insert("median_sup_logistic_gap".into(), json!(median(&gaps)));
    out.summary.insert("sup_logistic_gaps".into(), json!(gaps));
    out.tables = vec![order, collapse];
    if cfg.d == Some(DEFAULT_SMALL_BETA_D) {
        out.flags.push(format!("d = {DEFAULT_SMALL_BETA_D} is a guess: the reference experiment does not state d"));
    }
    Ok(out)
}

fn slow_motion(cfg: &RunConfig, run_id: &str) -> Result<ScenarioOutput> {
    let d = cfg.d.unwrap();
    let n_bg = cfg.n_bg.unwrap();
    let t = cfg.t_horizon.unwrap();
    let p = sde_params(cfg, cfg.law()?, 0)?;
    let runs = trials(cfg.trials.unwrap(), |i| {
        run_tagged_pair(n_bg, d, &SdeParams { seed: trial_key(cfg, i).child(Tag::Sde, 0).raw(), ..p.clone() }, t)
    })?;
    let stride = cfg.stride.unwrap();
    let mut pair = Table::new("pair", &["run_id", "trial", "step", "time", "R"]);
    for (k, r) in runs.iter().enumerate() {
        let last = r.times.len() - 1;
        for (s, (&time, &v)) in r.times.iter().zip(&r.overlaps).enumerate() {
            if s % stride == 0 || s == last {
                pair.push(vec![run_id.into(), k.into(), s.into(), time.into(), v.into()]);
            }
        }
    }
    let sups: Vec<f64> = runs.iter().map(|r| r.sup_deviation()).collect();
    let bound = t / d as f64 + 3.0 * (t / d as f64).sqrt();
    let within = sups.iter().filter(|&&s| s <= bound).count() as f64 / sups.len() as f64;
    let mut out = ScenarioOutput::default();
    out.summary.insert("bound".into(), json!(bound));
    out.summary.insert("fraction_within_bound".into(), json!(within));
    out.summary.insert("median_sup_deviation".into(), json!(median(&sups)));
    out.summary.insert("sup_deviations".into(), json!(sups));
    out.tables = vec![pair];
    Ok(out)
}

fn logistic(cfg: &RunConfig, run_id: &str) -> Result<ScenarioOutput> {
    let (u0, dt, t) = (cfg.u0.unwrap(), cfg.dt.unwrap(), cfg.t_horizon.unwrap());
    let paths = cfg.trials.unwrap();
    let ends = trials(paths, |i| logistic_sde_endpoint(u0, t, dt, &mut trial_key(cfg, i).rng()))?;
    let shown = cfg.record_paths.unwrap().min(paths);
    let recorded = trials(shown, |i| logistic_sde_path(u0, t, dt, &mut trial_key(cfg, i).rng()))?;
    let stride = cfg.stride.unwrap();
    let mut table = Table::new("paths", &["run_id", "trial", "step", "time", "u"]);
    for (k, p) in recorded.iter().enumerate() {
        let last = p.times.len() - 1;
        for (s, (&time, &u)) in p.times.iter().zip(&p.values).enumerate() {
            if s % stride == 0 || s == last {
                table.push(vec![run_id.into(), k.into(), s.into(), time.into(), u.into()]);
            }
        }
    }
    let frac = |pred: &dyn Fn(f64) -> bool| ends.iter().filter(|&&u| pred(u)).count() as f64 / paths as f64;
    let plus = frac(&|u| u == 1.0);
    let minus = frac(&|u| u == -1.0);
    let mut out = ScenarioOutput::default();
    out.summary.insert("paths".into(), json!(paths));
    out.summary.insert("absorbed_plus".into(), json!(plus));
    out.summary.insert("absorbed_minus".into(), json!(minus));
    out.summary.insert("unabsorbed".into(), json!(1.0 - plus - minus));
    out.summary.insert("predicted_plus".into(), json!(u0.asin() / std::f64::consts::PI + 0.5));
    out.tables = vec![table];
    Ok(out)
}

fn weak_error(cfg: &RunConfig) -> Result<ScenarioOutput> {
    let x0 = initial(cfg, StreamKey::root(cfg.seed()))?;
    let etas = cfg.etas.clone().unwrap();
    let wc = WeakErrorConfig {
        law: cfg.law()?,
        beta: cfg.temperature()?,
        alpha: cfg.alpha.unwrap(),
        t_l: cfg.t_l.unwrap(),
        phi: cfg.phi.unwrap(),
        trials: cfg.trials.unwrap(),
        ref_dt_divisor: cfg.ref_dt_divisor.unwrap(),
        sde_modes: cfg.modes.unwrap(),
        seed: cfg.seed(),
        self_consistency: cfg.self_consistency.unwrap(),
    };
    let rep = weak_error_sweep(&x0, &wc, &etas)?;
    let mut cols = vec![
        "eta", "heads", "depth", "chain_mean", "chain_stderr", "sde_mean", "sde_stderr", "gap", "gap_stderr", "censored",
    ];
    if rep.self_gaps.is_some() {
        cols.extend(["self_gap", "self_gap_stderr"]);
    }
    let mut table = Table::new("weak_error", &cols);
    for k in 0..rep.etas.len() {
        let mut row: Vec<Cell> = vec![
            rep.etas[k].into(),
            rep.heads[k].into(),
            rep.depths[k].into(),
            rep.chain_mean[k].into(),
            rep.chain_stderr[k].into(),
            rep.sde_mean[k].into(),
            rep.sde_stderr[k].into(),
            rep.gaps[k].into(),
            rep.gap_stderr[k].into(),
            rep.censored[k].into(),
        ];
        if let (Some(g), Some(s)) = (&rep.self_gaps, &rep.self_gap_stderr) {
            row.extend([g[k].into(), s[k].into()]);
        }
        table.push(row);
    }
    let mut out = ScenarioOutput::default();
    out.summary.insert("report".into(), serde_json::to_value(&rep)?);
    out.summary.insert("slope".into(), json!(rep.fit.as_ref().map(|f| f.slope)));
    out.summary.insert("slope_ci".into(), json!(rep.fit.as_ref().map(|f| f.slope_ci)));
    out.summary.insert("non_increasing_within_2sigma".into(), json!(rep.non_increasing_within(2.0)));
    out.notes.insert(
        "test_functions".into(),
        json!(test_functions().iter().map(|f| f.name()).collect::<Vec<_>>()),
    );
    out.tables = vec![table];
    Ok(out)
}

/// Per cell: chain with `H` heads and `σ_V` chosen so that `ησ²/H = α`.
fn phase_diagram(cfg: &RunConfig) -> Result<ScenarioOutput> {
    let (n, d, depth, heads) = (cfg.n.unwrap(), cfg.d.unwrap(), cfg.depth.unwrap(), cfg.heads.unwrap());
    let beta = cfg.temperature()?;
    let th = cfg.thresholds.unwrap();
    let seeds = cfg.trials.unwrap();
    let root = StreamKey::root(cfg.seed());
    let x0 = uniform_config(n, d, &mut root.child(Tag::Init, 0).rng())?;
    let m0 = crate::sphere::mean_overlap(&x0);
    let cells: Vec<(f64, f64)> = cfg
        .etas
        .as_ref()
        .unwrap()
        .iter()
        .flat_map(|&e| cfg.alphas.as_ref().unwrap().iter().map(move |&a| (e, a)))
        .collect();
    let work: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..seeds).map(move |s| (c, s))).collect();
    let finals: Vec<f64> = work
        .par_iter()
        .map(|&(c, s)| {
            let (eta, a) = cells[c];
            let sigma_v = (a * heads as f64 / (eta * (d as f64 - 1.0))).sqrt();
            let law = WeightLaw::centered(d, sigma_v, cfg.sigma_a.unwrap())?;
            // keyed by the cell's values, not its position, so traversal order is irrelevant
            let key = root.child(Tag::Trial, eta.to_bits()).child(Tag::Trial, a.to_bits()).child(Tag::Chain, s as u64);
            let p = ChainParams { law, beta, eta, heads, depth, seed: key.raw() };
            Ok(run_chain(&x0, &p, depth.max(1))?.series.last().unwrap().m)
        })
        .collect::<Result<_>>()?;
    let mut grid = Table::new("grid", &["eta", "alpha", "t_l", "label", "m0", "m_mean", "m_var", "m_drift"]);
    for (c, &(eta, a)) in cells.iter().enumerate() {
        let s: RunningStats = finals[c * seeds..(c + 1) * seeds].iter().copied().collect();
        let label = classify_regime(eta, a, depth, &th);
        grid.push(vec![
            eta.into(),
            a.into(),
            (eta * depth as f64).into(),
            label.as_str().into(),
            m0.into(),
            s.mean.into(),
            s.variance().into(),
            (s.mean - m0).abs().into(),
        ]);
    }
    let mut out = ScenarioOutput::default();
    out.summary.insert("cells".into(), json!(cells.len()));
    out.summary.insert("seeds_per_cell".into(), json!(seeds));
    out.summary.insert("thresholds".into(), serde_json::to_value(th)?);
    out.tables = vec![grid];
    Ok(out)
}

fn kernel_check(cfg: &RunConfig) -> Result<ScenarioOutput> {
    let (n, d, samples) = (cfg.n.unwrap(), cfg.d.unwrap(), cfg.samples.unwrap());
    let law = crate::weights::gaussian_default(d)?;
    let beta = cfg.temperature()?;
    let root = StreamKey::root(cfg.seed());
    let x = uniform_config(n, d, &mut root.child(Tag::Init, 0).rng())?;
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    let rows = pairs
        .par_iter()
        .map(|&(i, j)| {
            let key = root.child(Tag::Sample, (i * n + j) as u64);
            let mc = mc_kernel(&law, &x, beta, i, j, samples, &mut key.child(Tag::Sample, 0).rng())?;
            let cf = gaussian_kernel_closed(&law, &x, beta, i, j, samples, &mut key.child(Tag::Sample, 1).rng())?;
            let (mut max_z, mut max_diff) = (0.0f64, 0.0f64);
            for k in 0..d * d {
                let diff = (mc.mean[k] - cf.mean[k]).abs();
                let se = (mc.stderr[k].powi(2) + cf.stderr[k].powi(2)).sqrt();
                max_diff = max_diff.max(diff);
                if se > 0.0 {
                    max_z = max_z.max(diff / se);
                } else if diff > 1e-12 {
                    max_z = f64::INFINITY;
                }
            }
            Ok((i, j, max_z, max_diff))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut table = Table::new("kernel", &["i", "j", "max_z", "max_abs_diff"]);
    for &(i, j, z, m) in &rows {
        table.push(vec![i.into(), j.into(), z.into(), m.into()]);
    }
    let worst = rows.iter().map(|r| r.2).fold(0.0, f64::max);
    let mut out = ScenarioOutput::default();
    out.summary.insert("max_z".into(), json!(worst));
    out.summary.insert("entries".into(), json!(rows.len() * d * d));
    out.summary.insert("samples".into(), json!(samples));
    out.tables = vec![table];
    Ok(out)
}

fn delta_check(cfg: &RunConfig) -> Result<ScenarioOutput> {
    let r = cfg.r.unwrap();
    let dims = cfg.dims.clone().unwrap();
    let draws = cfg.samples.unwrap();
    let rows = trials(dims.len(), |k| {
        let mut rng: StreamRng = trial_key(cfg, k).rng();
        let est = normalized_overlap_mc(r, dims[k], draws, &mut rng)?;
        Ok((dims[k], est))
    })?;
    let mut table = Table::new("delta", &["d", "r", "mc", "mc_stderr", "expansion", "discrepancy"]);
    let mut disc = Vec::new();
    for (d, est) in &rows {
        let e = delta_expansion(r, *d);
        disc.push(est.mean - e);
        table.push(vec![(*d).into(), r.into(), est.mean.into(), est.stderr.into(), e.into(), (est.mean - e).into()]);
    }
    let mut out = ScenarioOutput::default();
    out.summary.insert("dims".into(), json!(dims));
    out.summary.insert("discrepancies".into(), json!(disc));
    out.tables = vec![table];
    Ok(out)
}
