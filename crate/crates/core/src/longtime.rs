//! Convergence to equilibria: the concave majorant k0 capturing the
//! damping near the origin, the derived contraction Q and its decay ODE,
//! envelope fits of trajectory distances, and the Ball/Lyapunov identity
//! audit for the Kirchhoff-Boussinesq model.

use serde::Serialize;

use crate::equilibria::{distance_to_set, EquilibriumSet};
use crate::error::{Error, Result};
use crate::integrator::Trajectory;
use crate::models::{DampingLaw, Model, State};
use crate::spectral::fit_slope;

/// Concave majorant data for the damping law: `k(s) = k0(s) + c s` with
/// k0 the least concave majorant of the sample cloud
/// `(s g(s), s^2 + g(s)^2)`, `|s| <= 1`, pinned at the origin.
#[derive(Debug, Clone, Serialize)]
pub struct DecayLaw {
    /// Vertices of the piecewise-linear concave hull, increasing in y.
    pub hull: Vec<(f64, f64)>,
    /// Linear correction constant of `k = k0 + c s`.
    pub c: f64,
    /// True iff g'(0) > 0 (exponential decay regime).
    pub exponential: bool,
}

impl DecayLaw {
    /// Linear law `k(s) = slope * s` (used for closed-form checks).
    pub fn linear(slope: f64) -> Self {
        Self { hull: vec![(0.0, 0.0), (1.0, slope)], c: 0.0, exponential: true }
    }

    /// Piecewise-linear evaluation of k0, extended by the last slope.
    pub fn k0(&self, y: f64) -> f64 {
        let h = &self.hull;
        if y <= 0.0 {
            return 0.0;
        }
        let i = h.partition_point(|p| p.0 < y);
        if i == 0 {
            h[0].1
        } else if i < h.len() {
            let (y0, z0) = h[i - 1];
            let (y1, z1) = h[i];
            z0 + (z1 - z0) * (y - y0) / (y1 - y0)
        } else {
            let n = h.len();
            if n < 2 {
                return h.last().map_or(0.0, |p| p.1);
            }
            let (y0, z0) = h[n - 2];
            let (y1, z1) = h[n - 1];
            z1 + (z1 - z0) / (y1 - y0) * (y - y1)
        }
    }

    pub fn k(&self, s: f64) -> f64 {
        self.k0(s) + self.c * s
    }
}

/// Builds the decay law from a damping law by sampling `|s| <= 1` and
/// taking the least concave majorant through the origin.
pub fn build_k0(damping: &DampingLaw, samples: usize) -> Result<DecayLaw> {
    if damping.is_zero() {
        return Err(Error::Validation("decay law needs a nontrivial damping".into()));
    }
    let n = samples.max(16);
    let mut pts: Vec<(f64, f64)> = Vec::with_capacity(n + 1);
    pts.push((0.0, 0.0));
    for i in 1..=n {
        let s = i as f64 / n as f64;
        let g = damping.g(s);
        pts.push((s * g, s * s + g * g));
    }
    pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    // upper concave hull by monotone chain: drop the middle point when
    // it lies below the chord of its neighbours
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for p in pts {
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
            if cross >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }

    // constant of the linear correction: c >= s / g(s) for |s| >= 1
    let mut c: f64 = 0.0;
    let mut s = 1.0;
    while s <= 1e6 {
        c = c.max(s / damping.g(s));
        s *= 2.0;
    }

    let law = DecayLaw { hull, c, exponential: damping.g_prime_zero() > 0.0 };

    // certify domination of the sample cloud
    for i in 1..=n {
        let sv = i as f64 / n as f64;
        let g = damping.g(sv);
        let (y, z) = (sv * g, sv * sv + g * g);
        if z > law.k0(y) * (1.0 + 1e-9) + 1e-12 {
            return Err(Error::Validation(format!(
                "concave hull fails to dominate sample ({y}, {z})"
            )));
        }
    }
    Ok(law)
}

/// The contraction `Q(s) = s - (I + G0)^(-1) s` with
/// `H0(s) = k(s/c3)` and `G0 = c1 (I + H0)^(-1) (c2 s)`,
/// inverses computed by bisection.
#[derive(Debug, Clone)]
pub struct QFunction {
    pub law: DecayLaw,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

fn bisect_inverse(f: impl Fn(f64) -> f64, target: f64, tol: f64) -> f64 {
    if target <= 0.0 {
        return 0.0;
    }
    let mut hi = 1.0;
    while f(hi) < target {
        hi *= 2.0;
        if hi > 1e300 {
            return hi;
        }
    }
    let mut lo = 0.0;
    while hi - lo > tol * (1.0 + hi.abs()) {
        let mid = 0.5 * (lo + hi);
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

impl QFunction {
    pub fn h0(&self, s: f64) -> f64 {
        self.law.k(s / self.c3)
    }

    pub fn g0(&self, s: f64) -> f64 {
        let inv = bisect_inverse(|x| x + self.h0(x), self.c2 * s, 1e-14);
        self.c1 * inv
    }

    pub fn q(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        let inv = bisect_inverse(|x| x + self.g0(x), s, 1e-14);
        s - inv
    }

    /// Tabulates Q on [0, s_max].
    pub fn table(&self, s_max: f64, n: usize) -> Vec<(f64, f64)> {
        (0..=n)
            .map(|i| {
                let s = s_max * i as f64 / n as f64;
                (s, self.q(s))
            })
            .collect()
    }

    /// Monotone interpolation table for fast repeated evaluation (the
    /// nested bisections only run once per node).
    pub fn tabulated(&self, s_max: f64, n: usize) -> TabulatedQ {
        TabulatedQ { pts: self.table(s_max, n.max(16)) }
    }
}

/// Piecewise-linear interpolant of a tabulated Q.
#[derive(Debug, Clone, Serialize)]
pub struct TabulatedQ {
    pts: Vec<(f64, f64)>,
}

impl TabulatedQ {
    pub fn eval(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        let i = self.pts.partition_point(|p| p.0 < s);
        if i == 0 {
            self.pts[0].1
        } else if i < self.pts.len() {
            let (s0, q0) = self.pts[i - 1];
            let (s1, q1) = self.pts[i];
            q0 + (q1 - q0) * (s - s0) / (s1 - s0)
        } else {
            // extend with the final slope
            let n = self.pts.len();
            let (s0, q0) = self.pts[n - 2];
            let (s1, q1) = self.pts[n - 1];
            q1 + (q1 - q0) / (s1 - s0) * (s - s1)
        }
    }
}

/// Builds the Q contraction from a decay law and positive constants.
pub fn build_q(law: &DecayLaw, c1: f64, c2: f64, c3: f64) -> Result<QFunction> {
    if c1 <= 0.0 || c2 <= 0.0 || c3 <= 0.0 {
        return Err(Error::OutOfRange("Q constants must be positive".into()));
    }
    Ok(QFunction { law: law.clone(), c1, c2, c3 })
}

/// Solution samples of `sigma' = -Q(sigma)` on a uniform grid.
#[derive(Debug, Clone, Serialize)]
pub struct SigmaSolution {
    pub dt: f64,
    pub values: Vec<f64>,
}

impl SigmaSolution {
    /// Linear interpolation, clamped at the endpoints.
    pub fn eval(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return self.values[0];
        }
        let x = t / self.dt;
        let i = x.floor() as usize;
        if i + 1 >= self.values.len() {
            return *self.values.last().unwrap();
        }
        let frac = x - i as f64;
        self.values[i] * (1.0 - frac) + self.values[i + 1] * frac
    }
}

/// RK4 on the scalar decay ODE; sigma stays nonnegative and
/// nonincreasing for monotone Q.
pub fn solve_sigma_ode(q: impl Fn(f64) -> f64, sigma0: f64, t_final: f64, dt: f64) -> Result<SigmaSolution> {
    if sigma0 < 0.0 {
        return Err(Error::OutOfRange("sigma0 must be nonnegative".into()));
    }
    if !(dt > 0.0) || !(t_final >= 0.0) {
        return Err(Error::OutOfRange("sigma ODE needs dt > 0, T >= 0".into()));
    }
    let n = (t_final / dt).round() as usize;
    let mut values = Vec::with_capacity(n + 1);
    let mut s = sigma0;
    values.push(s);
    for _ in 0..n {
        let k1 = -q(s);
        let k2 = -q((s + 0.5 * dt * k1).max(0.0));
        let k3 = -q((s + 0.5 * dt * k2).max(0.0));
        let k4 = -q((s + dt * k3).max(0.0));
        s += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        s = s.max(0.0);
        values.push(s);
    }
    Ok(SigmaSolution { dt, values })
}

/// Outcome of tracking a trajectory against an equilibrium set.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub converged: bool,
    pub hit_time: Option<f64>,
    /// Index of the nearest equilibrium at the final time.
    pub limit_index: Option<usize>,
    pub distances: Vec<f64>,
    pub final_distance: f64,
}

/// Finds the first time the distance to the set drops below `tol` and
/// verifies it stays below `2 tol` afterwards.
pub fn converge_trajectory(
    model: &Model,
    traj: &Trajectory,
    eqset: &EquilibriumSet,
    tol: f64,
) -> Result<ConvergenceReport> {
    if eqset.is_empty() {
        return Err(Error::Validation("convergence check needs a nonempty equilibrium set".into()));
    }
    let distances: Vec<f64> = traj
        .states
        .iter()
        .map(|s| distance_to_set(model, s, eqset))
        .collect::<Result<_>>()?;
    let mut hit = None;
    for (i, d) in distances.iter().enumerate() {
        if *d <= tol {
            let stays = distances[i..].iter().all(|x| *x <= 2.0 * tol);
            if stays {
                hit = Some(traj.times[i]);
                break;
            }
        }
    }
    let final_state = traj.last_state();
    let limit_index = eqset
        .members
        .iter()
        .enumerate()
        .map(|(i, eq)| {
            let eq_state = State { u: eq.w.clone(), v: model.basis().zero_field() };
            (i, model.phase_dist(final_state, &eq_state))
        })
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .map(|(i, _)| i);
    Ok(ConvergenceReport {
        converged: hit.is_some(),
        hit_time: hit,
        limit_index,
        final_distance: *distances.last().unwrap(),
        distances,
    })
}

/// Fitted decay envelope `dist(t) <= C sigma(floor(t/T))`.
#[derive(Debug, Clone, Serialize)]
pub struct DecayEnvelope {
    pub c: f64,
    pub t_scale: f64,
    pub violations: usize,
    pub burn_in_index: usize,
    /// Affine fit of log-distance over the decay window (negated slope),
    /// when the window is long enough.
    pub exponential_rate: Option<f64>,
}

/// Grid-searches the window length T over a dyadic ladder and fits the
/// smallest C that drives violations to zero past the burn-in window
/// (first 10% of samples by default usage).
pub fn fit_envelope(
    times: &[f64],
    distances: &[f64],
    sigma: &SigmaSolution,
    burn_in_frac: f64,
) -> Result<DecayEnvelope> {
    if times.len() != distances.len() || times.is_empty() {
        return Err(Error::Validation("envelope fit needs aligned nonempty series".into()));
    }
    let burn_in_index = ((times.len() as f64) * burn_in_frac).floor() as usize;
    let burn_in_index = burn_in_index.min(times.len() - 1);
    let t_total = *times.last().unwrap();

    let floor = 1e-14 * distances.iter().cloned().fold(1.0f64, f64::max);
    if distances[burn_in_index..].iter().all(|d| *d <= floor) {
        return Ok(DecayEnvelope {
            c: 0.0,
            t_scale: t_total.max(1.0),
            violations: 0,
            burn_in_index,
            exponential_rate: None,
        });
    }

    let mut best: Option<(f64, f64, f64)> = None; // (misfit, C, T)
    let mut t_scale = t_total.max(1e-6);
    for _ in 0..16 {
        // require sigma support: floor(t/T) must stay inside the table
        let m_max = (t_total / t_scale).floor();
        if sigma.eval(m_max) > 0.0 {
            let mut c: f64 = 0.0;
            for (t, d) in times[burn_in_index..].iter().zip(&distances[burn_in_index..]) {
                let sv = sigma.eval((t / t_scale).floor());
                if sv > 0.0 {
                    c = c.max(d / sv);
                }
            }
            if c > 0.0 {
                let mut misfit = 0.0;
                let mut count = 0usize;
                for (t, d) in times[burn_in_index..].iter().zip(&distances[burn_in_index..]) {
                    if *d > floor {
                        let sv = sigma.eval((t / t_scale).floor());
                        if sv > 0.0 {
                            let r = (d.ln() - (c * sv).ln()).powi(2);
                            misfit += r;
                            count += 1;
                        }
                    }
                }
                if count > 0 {
                    misfit /= count as f64;
                    if best.map_or(true, |(m, _, _)| misfit < m) {
                        best = Some((misfit, c, t_scale));
                    }
                }
            }
        }
        t_scale *= 0.5;
    }
    let (_, c, t_scale) =
        best.ok_or_else(|| Error::Validation("no admissible envelope window".into()))?;

    let violations = times[burn_in_index..]
        .iter()
        .zip(&distances[burn_in_index..])
        .filter(|(t, d)| {
            let sv = sigma.eval((*t / t_scale).floor());
            **d > c * sv * (1.0 + 1e-9)
        })
        .count();

    let pts: Vec<(f64, f64)> = times[burn_in_index..]
        .iter()
        .zip(&distances[burn_in_index..])
        .filter(|(_, d)| **d > floor)
        .map(|(t, d)| (*t, d.ln()))
        .collect();
    let exponential_rate = fit_slope(&pts).map(|s| -s);

    Ok(DecayEnvelope { c, t_scale, violations, burn_in_index, exponential_rate })
}

/// Affine fit of log-distance over the decay window; returns the
/// (positive) decay rate.
pub fn exponential_rate_fit(times: &[f64], distances: &[f64], burn_in_frac: f64) -> Option<f64> {
    let n = times.len();
    if n < 4 {
        return None;
    }
    let start = ((n as f64) * burn_in_frac).floor() as usize;
    let dmax = distances.iter().cloned().fold(0.0f64, f64::max);
    let floor = 1e-13 * dmax.max(1e-300);
    let pts: Vec<(f64, f64)> = times[start..]
        .iter()
        .zip(&distances[start..])
        .filter(|(_, d)| **d > floor)
        .map(|(t, d)| (*t, d.ln()))
        .collect();
    fit_slope(&pts).map(|s| -s)
}

/// Residual series of the Ball identity
/// `dPsi/dt + k Psi + int (a_eff - k)|w_t|^2 - K(w) = 0`
/// accumulated by the integrator for KB runs with linear damping.
pub fn ball_identity_audit(traj: &Trajectory) -> Result<Vec<f64>> {
    let kb = traj
        .kb
        .as_ref()
        .ok_or_else(|| Error::WrongModel("Ball audit requires a KB trajectory".into()))?;
    if kb.ball_k.is_none() || kb.psi.is_empty() {
        return Err(Error::WrongModel("Ball audit requires linear damping with inf a > 0".into()));
    }
    let psi0 = kb.psi[0];
    Ok(kb
        .psi
        .iter()
        .zip(&kb.ball_int)
        .map(|(p, i)| p - psi0 + i)
        .collect())
}
