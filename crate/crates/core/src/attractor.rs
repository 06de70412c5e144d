//! Attractor sampling by long-run ensembles, box-counting dimension
//! estimation on leading modal coordinates, and the abstract dimension
//! bound evaluated from quasi-stability fits.

use std::collections::HashSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::equilibria::{distance_to_set, EquilibriumSet};
use crate::error::{Error, Result};
use crate::integrator::{integrate, StepConfig};
use crate::models::{Model, State};
use crate::quasistab::QuasiFit;
use crate::spectral::fit_slope;

/// Ensemble sampling configuration.
#[derive(Debug, Clone, Serialize)]
pub struct SampleConfig {
    pub ensemble: usize,
    pub burn_in: f64,
    pub t_final: f64,
    /// Snapshot stride in steps, applied after burn-in.
    pub stride: usize,
    pub seed: u64,
    /// Radius of the phase-norm ball the initial data are drawn from.
    pub radius: f64,
    /// Number of projected phase coordinates kept (even; u and v halves).
    pub projection_dim: usize,
    /// Cap on the mode rank of the random initial data (defaults to the
    /// whole basis); capping keeps draws identical across refinements.
    pub ic_mode_cap: Option<usize>,
    pub retain_full: bool,
    pub step: StepConfig,
}

impl SampleConfig {
    pub fn new(ensemble: usize, burn_in: f64, t_final: f64, seed: u64) -> Self {
        Self {
            ensemble,
            burn_in,
            t_final,
            stride: 20,
            seed,
            radius: 1.0,
            projection_dim: 6,
            ic_mode_cap: None,
            retain_full: false,
            step: StepConfig::midpoint(5e-3),
        }
    }
}

/// Snapshots projected to the leading phase coordinates.
#[derive(Debug, Clone)]
pub struct AttractorSample {
    /// Row-major points, `projection_dim` coordinates each.
    pub points: Vec<Vec<f64>>,
    pub projection_dim: usize,
    /// Ensemble member of each row.
    pub member_of_row: Vec<usize>,
    /// Full states (same order as rows) when retained.
    pub full_states: Option<Vec<State>>,
    pub dropped_members: usize,
    pub seed: u64,
}

/// Random state in the phase-norm ball of the given radius, with
/// coefficient support capped to the first `cap` eigenvalue ranks.
pub fn draw_initial_state(model: &Model, rng: &mut ChaCha8Rng, cap: usize, radius: f64) -> State {
    let basis = model.basis();
    let n = basis.total_modes();
    let cap = cap.min(n).max(1);
    let mut u = basis.zero_field();
    let mut v = basis.zero_field();
    for k in 0..cap {
        let lam = basis.eigenvalues()[k];
        let gu: f64 = sample_normal(rng);
        let gv: f64 = sample_normal(rng);
        u.coeffs[k] = gu / lam;
        v.coeffs[k] = gv / lam.sqrt();
    }
    let r = radius * rng.gen::<f64>().sqrt();
    let state = State { u, v };
    let norm = model.phase_norm(&state);
    if norm == 0.0 {
        state
    } else {
        State { u: state.u.scaled(r / norm), v: state.v.scaled(r / norm) }
    }
}

fn sample_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Integrates an ensemble past burn-in and collects projected snapshots.
/// Members that blow up are dropped (with a count); losing every member
/// is an error.
pub fn sample(model: &Model, config: &SampleConfig) -> Result<AttractorSample> {
    if config.ensemble == 0 {
        return Err(Error::EmptySample(0));
    }
    if config.projection_dim % 2 != 0 || config.projection_dim == 0 {
        return Err(Error::OutOfRange("projection dimension must be even and positive".into()));
    }
    let half = config.projection_dim / 2;
    if half > model.basis().total_modes() {
        return Err(Error::OutOfRange("projection dimension exceeds the basis".into()));
    }
    let cap = config.ic_mode_cap.unwrap_or(model.basis().total_modes());

    let member_runs: Vec<Option<Vec<State>>> = (0..config.ensemble)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(i as u64));
            let ic = draw_initial_state(model, &mut rng, cap, config.radius);
            let traj =
                integrate(model, &ic, &config.step, config.t_final, config.stride).ok()?;
            if traj.blew_up() {
                return None;
            }
            let keep: Vec<State> = traj
                .times
                .iter()
                .zip(&traj.states)
                .filter(|(t, _)| **t >= config.burn_in - 1e-12)
                .map(|(_, s)| s.clone())
                .collect();
            Some(keep)
        })
        .collect();

    let mut points = Vec::new();
    let mut member_of_row = Vec::new();
    let mut full_states = if config.retain_full { Some(Vec::new()) } else { None };
    let mut dropped = 0usize;
    for (i, run) in member_runs.into_iter().enumerate() {
        match run {
            None => dropped += 1,
            Some(states) => {
                for s in states {
                    let mut row = Vec::with_capacity(config.projection_dim);
                    row.extend_from_slice(&s.u.coeffs[..half]);
                    row.extend_from_slice(&s.v.coeffs[..half]);
                    points.push(row);
                    member_of_row.push(i);
                    if let Some(fs) = &mut full_states {
                        fs.push(s);
                    }
                }
            }
        }
    }
    if points.is_empty() {
        return Err(Error::EmptySample(config.ensemble));
    }
    Ok(AttractorSample {
        points,
        projection_dim: config.projection_dim,
        member_of_row,
        full_states,
        dropped_members: dropped,
        seed: config.seed,
    })
}

/// Box-counting ladder and regression result.
#[derive(Debug, Clone, Serialize)]
pub struct DimensionEstimate {
    /// Box sizes relative to the normalised bounding box, factor 2.
    pub eps: Vec<f64>,
    pub counts: Vec<usize>,
    /// Least-squares slope of `ln n` against `ln(1/eps)` on the mask.
    pub slope: f64,
    /// Half width of the slope confidence interval (2 standard errors).
    pub slope_halfwidth: f64,
    /// Rungs used in the regression.
    pub used: Vec<bool>,
}

/// Counts occupied dyadic boxes per rung and regresses the middle of the
/// ladder. Points are normalised to the bounding box first; a fully
/// degenerate cloud short-circuits to dimension zero.
pub fn box_counting(points: &[Vec<f64>], rungs: usize) -> Result<DimensionEstimate> {
    if points.len() < 100 {
        return Err(Error::Validation(format!(
            "box counting needs at least 100 points, got {}",
            points.len()
        )));
    }
    let d = points[0].len();
    if d == 0 || d > 10 {
        return Err(Error::OutOfRange("box counting supports 1..=10 coordinates".into()));
    }
    if points.iter().any(|p| p.len() != d || p.iter().any(|x| !x.is_finite())) {
        return Err(Error::Validation("box counting needs finite, equal-length points".into()));
    }
    let rungs = rungs.max(4).min(20);

    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for p in points {
        for j in 0..d {
            lo[j] = lo[j].min(p[j]);
            hi[j] = hi[j].max(p[j]);
        }
    }
    let extent: Vec<f64> = (0..d).map(|j| hi[j] - lo[j]).collect();
    let max_extent = extent.iter().cloned().fold(0.0f64, f64::max);
    if max_extent <= 0.0 {
        // single repeated point
        return Ok(DimensionEstimate {
            eps: (0..rungs).map(|k| 0.5f64.powi(k as i32)).collect(),
            counts: vec![1; rungs],
            slope: 0.0,
            slope_halfwidth: 0.0,
            used: vec![false; rungs],
        });
    }

    let mut eps = Vec::with_capacity(rungs);
    let mut counts = Vec::with_capacity(rungs);
    for k in 0..rungs {
        let e = 0.5f64.powi(k as i32);
        let cells = (1.0 / e).round() as u64;
        let mut seen: HashSet<u128> = HashSet::new();
        for p in points {
            let mut key: u128 = 0;
            for j in 0..d {
                let x = if extent[j] > 0.0 { (p[j] - lo[j]) / max_extent } else { 0.0 };
                let idx = ((x / e).floor() as u64).min(cells.saturating_mul(2)) as u128;
                key = (key << 12) | (idx & 0xfff);
            }
            seen.insert(key);
        }
        eps.push(e);
        counts.push(seen.len());
    }

    // regression mask: drop the top and bottom two rungs, rungs too
    // close to saturation and rungs with too few boxes
    let npts = points.len();
    let used: Vec<bool> = (0..rungs)
        .map(|k| {
            k >= 2
                && k + 2 < rungs
                && counts[k] >= 4
                && counts[k] * 4 <= npts
        })
        .collect();
    let data: Vec<(f64, f64)> = (0..rungs)
        .filter(|&k| used[k])
        .map(|k| ((1.0 / eps[k]).ln(), (counts[k] as f64).ln()))
        .collect();
    let slope = fit_slope(&data).unwrap_or(0.0).max(0.0);

    // standard error of the slope
    let halfwidth = if data.len() >= 3 {
        let n = data.len() as f64;
        let mx = data.iter().map(|p| p.0).sum::<f64>() / n;
        let my = data.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = data.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let ss_res: f64 = data
            .iter()
            .map(|p| (p.1 - my - slope * (p.0 - mx)).powi(2))
            .sum();
        let var = ss_res / (n - 2.0) / sxx;
        2.0 * var.sqrt()
    } else {
        f64::INFINITY
    };

    Ok(DimensionEstimate { eps, counts, slope, slope_halfwidth: halfwidth, used })
}

/// The closed-form attractor dimension bound
/// `(dim P1 + dim P2) ln(1 + 8 (1+L) sqrt(2) K / (1-eta)) / ln(2/(1+eta))`.
pub fn dim_bound_eval(eta: f64, l: f64, k: f64, dim_p1: usize, dim_p2: usize) -> Result<f64> {
    if !(0.0 < eta && eta < 1.0) {
        return Err(Error::OutOfRange(format!("eta must lie in (0,1), got {eta}")));
    }
    if l <= 0.0 || k <= 0.0 || dim_p1 == 0 || dim_p2 == 0 {
        return Err(Error::OutOfRange("dimension bound needs L, K > 0 and dims >= 1".into()));
    }
    let dims = (dim_p1 + dim_p2) as f64;
    let num = (1.0 + 8.0 * (1.0 + l) * 2.0f64.sqrt() * k / (1.0 - eta)).ln();
    let den = (2.0 / (1.0 + eta)).ln();
    Ok(dims * num / den)
}

/// Dimension-bound inputs assembled from a quasi-stability fit via
/// `eta_T^2 = b(T) + int_T^{2T} b` on a dyadic horizon ladder.
#[derive(Debug, Clone, Serialize)]
pub struct DimBoundReport {
    pub eta: f64,
    pub horizon: f64,
    pub lipschitz: f64,
    pub k_constant: f64,
    pub seminorm_rank: usize,
    pub bound: f64,
}

/// Picks the smallest dyadic horizon with `eta < 1` and evaluates the
/// abstract bound. `mu_over_norm` is the observed sup of
/// `mu_X(z)/|z|_H`, used to convert the fitted constants; the result is
/// reported as-is (this kind of bound tends to be conservative).
pub fn dim_bound_from_fit(fit: &QuasiFit, mu_over_norm: f64) -> Option<DimBoundReport> {
    if fit.degenerate || fit.omega <= 0.0 {
        return None;
    }
    let b = |t: f64| fit.b0 * (-2.0 * fit.omega * t).exp();
    let mut horizon = 0.5;
    for _ in 0..24 {
        let b_int = fit.b0 / (2.0 * fit.omega)
            * ((-2.0 * fit.omega * horizon).exp() - (-4.0 * fit.omega * horizon).exp());
        let eta_sq = b(horizon) + b_int;
        if eta_sq < 1.0 {
            let eta = eta_sq.sqrt();
            let c_t = fit.c_bar * (1.0 + horizon);
            let l = (b(horizon) + c_t * mu_over_norm * mu_over_norm).sqrt().max(1.0);
            let k = c_t.sqrt().max(1e-8);
            let bound =
                dim_bound_eval(eta.max(1e-6), l, k, fit.seminorm.rank, fit.seminorm.rank).ok()?;
            return Some(DimBoundReport {
                eta,
                horizon,
                lipschitz: l,
                k_constant: k,
                seminorm_rank: fit.seminorm.rank,
                bound,
            });
        }
        horizon *= 2.0;
    }
    None
}

/// Sup of spectral Sobolev norms over the retained snapshots, with the
/// refinement-stability ratio under one mode-count doubling.
#[derive(Debug, Clone, Serialize)]
pub struct RegularityReport {
    /// Sobolev order used for the displacement (2 for waves, 4 for plates).
    pub u_order: f64,
    pub sup_u: f64,
    /// Velocity norm order for plates (2), none for waves.
    pub sup_v: Option<f64>,
    /// Sup norms at doubled mode counts.
    pub sup_u_refined: f64,
    pub sup_v_refined: Option<f64>,
    /// max of the refined/base ratios.
    pub ratio: f64,
}

/// Runs the sampling at the base resolution and with doubled mode counts
/// (identical initial draws, capped to the base band) and compares the
/// sup Sobolev norms of the snapshots.
pub fn regularity_report(model: &Model, config: &SampleConfig) -> Result<RegularityReport> {
    let mut cfg = config.clone();
    cfg.retain_full = true;
    cfg.ic_mode_cap = Some(cfg.ic_mode_cap.unwrap_or(model.basis().total_modes()));

    let mut refined_spec = model.spec.clone();
    refined_spec.domain.modes[0] *= 2;
    if refined_spec.domain.dimension == 2 {
        refined_spec.domain.modes[1] *= 2;
    }
    let refined = Model::new(refined_spec)?;

    let u_order = if model.is_plate() { 4.0 } else { 2.0 };
    let sups = |m: &Model, s: &AttractorSample| -> (f64, Option<f64>) {
        let states = s.full_states.as_ref().expect("retain_full set");
        let mut su = 0.0f64;
        let mut sv = 0.0f64;
        for st in states {
            su = su.max(m.basis().sobolev_norm(&st.u, u_order));
            if m.is_plate() {
                sv = sv.max(m.basis().sobolev_norm(&st.v, 2.0));
            }
        }
        (su, if m.is_plate() { Some(sv) } else { None })
    };

    let base_sample = sample(model, &cfg)?;
    let refined_sample = sample(&refined, &cfg)?;
    let (sup_u, sup_v) = sups(model, &base_sample);
    let (sup_u_refined, sup_v_refined) = sups(&refined, &refined_sample);

    let mut ratio = if sup_u > 0.0 { sup_u_refined / sup_u } else { 1.0 };
    if let (Some(a), Some(b)) = (sup_v, sup_v_refined) {
        if a > 0.0 {
            ratio = ratio.max(b / a);
        }
    }
    Ok(RegularityReport { u_order, sup_u, sup_v, sup_u_refined, sup_v_refined, ratio })
}

/// Distances of the sampled snapshots to the equilibrium set, with
/// candidate heteroclinic arcs.
#[derive(Debug, Clone, Serialize)]
pub struct StructureReport {
    /// Histogram of distances (10 uniform bins up to the max distance).
    pub histogram: Vec<usize>,
    pub max_distance: f64,
    pub fraction_within_tol: f64,
    /// Members whose endpoints converge to distinct equilibria, as
    /// (member, from-equilibrium, to-equilibrium).
    pub arcs: Vec<(usize, usize, usize)>,
    /// Snapshots farther than tol from the set on arc members.
    pub arc_points: usize,
}

pub fn structure_report(
    model: &Model,
    sample: &AttractorSample,
    eqset: &EquilibriumSet,
    tol: f64,
) -> Result<StructureReport> {
    if eqset.is_empty() {
        return Err(Error::Validation("structure report needs a nonempty equilibrium set".into()));
    }
    let states = sample
        .full_states
        .as_ref()
        .ok_or_else(|| Error::Validation("structure report needs retained full states".into()))?;

    let distances: Vec<f64> = states
        .iter()
        .map(|s| distance_to_set(model, s, eqset))
        .collect::<Result<_>>()?;
    let max_distance = distances.iter().cloned().fold(0.0f64, f64::max);
    let mut histogram = vec![0usize; 10];
    for d in &distances {
        let bin = if max_distance > 0.0 {
            ((d / max_distance * 10.0).floor() as usize).min(9)
        } else {
            0
        };
        histogram[bin] += 1;
    }
    let within = distances.iter().filter(|d| **d <= tol).count();
    let fraction_within_tol = within as f64 / distances.len() as f64;

    let nearest = |s: &State| -> usize {
        eqset
            .members
            .iter()
            .enumerate()
            .map(|(i, eq)| {
                let eq_state = State { u: eq.w.clone(), v: model.basis().zero_field() };
                (i, model.phase_dist(s, &eq_state))
            })
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap()
    };

    let mut arcs = Vec::new();
    let mut arc_points = 0usize;
    let mut row = 0usize;
    while row < states.len() {
        let member = sample.member_of_row[row];
        let mut end = row;
        while end + 1 < states.len() && sample.member_of_row[end + 1] == member {
            end += 1;
        }
        let from = nearest(&states[row]);
        let to = nearest(&states[end]);
        if from != to {
            arcs.push((member, from, to));
            arc_points += (row..=end).filter(|i| distances[*i] > tol).count();
        }
        row = end + 1;
    }
    Ok(StructureReport { histogram, max_distance, fraction_within_tol, arcs, arc_points })
}

// ---------------------------------------------------------------------
// Fixtures for dimension-estimation oracles
// ---------------------------------------------------------------------

/// Uniform points on a random segment embedded in `dim` coordinates.
pub fn segment_points(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dir: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
    (0..n)
        .map(|_| {
            let t: f64 = rng.gen();
            dir.iter().map(|d| t * d / norm).collect()
        })
        .collect()
}

/// Middle-thirds Cantor set at the given construction depth (2^depth
/// left endpoints in one coordinate).
pub fn cantor_points(depth: usize) -> Vec<Vec<f64>> {
    let mut pts = vec![0.0f64];
    let mut scale = 1.0;
    for _ in 0..depth {
        scale /= 3.0;
        let mut next = Vec::with_capacity(pts.len() * 2);
        for p in &pts {
            next.push(*p);
            next.push(p + 2.0 * scale);
        }
        pts = next;
    }
    pts.into_iter().map(|p| vec![p]).collect()
}
