//! Trajectory-pair experiments: fitting the quasi-stability inequality
//! `|z(t)|^2 <= b(t) |z(0)|^2 + c sup_s mu_X(z(s))^2`, the
//! stabilizability estimate, and single-trajectory decay audits.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::integrator::{integrate, StepConfig, Trajectory};
use crate::models::{Model, ModelKind, State};
use crate::spectral::fit_slope;

/// Compact seminorm `mu_X(z) = |P_K z_u|_{2 - eps}`: the Sobolev norm of
/// the first `rank` displacement modes. Finite-rank modal seminorms are
/// compact, which is all the theory asks of mu_X.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SeminormSpec {
    pub rank: usize,
    pub eps: f64,
}

impl Default for SeminormSpec {
    fn default() -> Self {
        Self { rank: 16, eps: 0.25 }
    }
}

impl SeminormSpec {
    pub fn apply(&self, model: &Model, z: &State) -> f64 {
        let basis = model.basis();
        let rank = self.rank.min(basis.total_modes()).max(1);
        let low = basis.project_low(&z.u, rank).expect("rank clamped");
        basis.sobolev_norm(&low, 2.0 - self.eps)
    }
}

/// Two synchronized trajectories and the difference series.
#[derive(Debug)]
pub struct PairRun {
    pub times: Vec<f64>,
    /// Phase norms |z(t)|_H of the difference.
    pub z_norms: Vec<f64>,
    /// mu_X(z(t)).
    pub mu_values: Vec<f64>,
    pub z0_norm: f64,
    pub seminorm: SeminormSpec,
    pub traj1: Trajectory,
    pub traj2: Trajectory,
}

/// Integrates two initial states with the same scheme and dt; aborts if
/// either trajectory blows up.
pub fn evolve_pair(
    model: &Model,
    state1: &State,
    state2: &State,
    config: &StepConfig,
    t_final: f64,
    stride: usize,
    seminorm: SeminormSpec,
) -> Result<PairRun> {
    let traj1 = integrate(model, state1, config, t_final, stride)?;
    let traj2 = integrate(model, state2, config, t_final, stride)?;
    if traj1.blew_up() || traj2.blew_up() {
        return Err(Error::Validation("pair run aborted: trajectory blow-up".into()));
    }
    let n = traj1.times.len().min(traj2.times.len());
    let mut z_norms = Vec::with_capacity(n);
    let mut mu_values = Vec::with_capacity(n);
    for i in 0..n {
        let z = traj1.states[i].sub(&traj2.states[i]);
        z_norms.push(model.phase_norm(&z));
        mu_values.push(seminorm.apply(model, &z));
    }
    Ok(PairRun {
        times: traj1.times[..n].to_vec(),
        z_norms,
        mu_values,
        z0_norm: model.phase_dist(state1, state2),
        seminorm,
        traj1,
        traj2,
    })
}

/// Fitted constants of the quasi-stability inequality.
///
/// The inequality is normalised as
/// `|z(t)|^2 <= b0 e^(-2 omega t) |z(0)|^2 + c_bar sup_{s<=t} mu_X(z(s))^2`,
/// so `omega` is the decay rate of the norm |z| itself.
#[derive(Debug, Clone, Serialize)]
pub struct QuasiFit {
    pub degenerate: bool,
    pub b0: f64,
    pub omega: f64,
    pub c_bar: f64,
    /// Largest violation of the fitted inequality relative to |z(t)|^2
    /// (zero up to rounding by construction; reported as tightness).
    pub max_relative_residual: f64,
    pub seminorm: SeminormSpec,
}

fn running_max_from_right(xs: &[f64]) -> Vec<f64> {
    let mut env = xs.to_vec();
    for i in (0..env.len().saturating_sub(1)).rev() {
        env[i] = env[i].max(env[i + 1]);
    }
    env
}

/// Fits the stabilizability-estimate constants on a pair run.
///
/// `b(t)` must be integrable, so a non-decaying fit is inadmissible: the
/// exponential is fitted to the envelope of `|z|^2/|z0|^2 - c sup mu^2`
/// over a ladder of candidate constants, and the smallest `c` whose
/// remainder genuinely decays wins. Differences that converge to two
/// distinct equilibria plateau, which forces a positive `c_bar`; clean
/// contractions keep `c_bar = 0`.
pub fn fit_8_4_2(pair: &PairRun) -> QuasiFit {
    let n = pair.times.len();
    if pair.z0_norm == 0.0 || n < 4 {
        return QuasiFit {
            degenerate: true,
            b0: 0.0,
            omega: 0.0,
            c_bar: 0.0,
            max_relative_residual: 0.0,
            seminorm: pair.seminorm,
        };
    }
    let z0sq = pair.z0_norm * pair.z0_norm;
    let r: Vec<f64> = pair.z_norms.iter().map(|z| z * z / z0sq).collect();
    // running sup of the seminorm, squared and normalised
    let mut sup_mu = 0.0f64;
    let m: Vec<f64> = pair
        .mu_values
        .iter()
        .map(|mu| {
            sup_mu = sup_mu.max(*mu);
            sup_mu * sup_mu / z0sq
        })
        .collect();
    let floor = 1e-28;
    let r_max = r.iter().cloned().fold(0.0f64, f64::max);

    // candidate constants: zero, then a geometric ladder up to the value
    // that dominates the difference outright
    let c_hi = (0..n)
        .filter(|&i| m[i] > floor)
        .map(|i| r[i] / m[i])
        .fold(0.0f64, f64::max);
    let mut candidates = vec![0.0];
    if c_hi > 0.0 {
        let mut c = c_hi * 1e-6;
        while c <= c_hi * 1.0001 {
            candidates.push(c);
            c *= 1.2;
        }
    }

    let try_fit = |c: f64| -> Option<(f64, f64)> {
        let h: Vec<f64> = (0..n).map(|i| (r[i] - c * m[i]).max(0.0)).collect();
        let env = running_max_from_right(&h);
        let tail = *env.last().unwrap();
        // the remainder must decay for b(t) to be integrable
        if tail > 1e-4 * env[0].max(floor) {
            return None;
        }
        let window: Vec<(f64, f64)> = pair
            .times
            .iter()
            .zip(&env)
            .filter(|(_, e)| **e > (4.0 * tail).max(floor))
            .map(|(t, e)| (*t, e.ln()))
            .collect();
        let slope = fit_slope(&window)?;
        if slope >= 0.0 || window.len() < 3 {
            return None;
        }
        // touching prefactor over the fit window
        let b0 = pair
            .times
            .iter()
            .zip(&env)
            .filter(|(_, e)| **e > (4.0 * tail).max(floor))
            .map(|(t, e)| e * (-slope * t).exp())
            .fold(0.0f64, f64::max)
            .max(1.0);
        Some((-slope, b0))
    };

    let mut fitted: Option<(f64, f64, f64)> = None; // (c, omega2, b0)
    for &c in &candidates {
        if let Some((omega2, b0)) = try_fit(c) {
            fitted = Some((c, omega2, b0));
            break;
        }
    }
    // fall back to a constant bound when nothing decays (reported with
    // omega = 0 so the caller can see the fit is vacuous)
    let (_c_pre, omega2, b0) = fitted.unwrap_or((0.0, 0.0, r_max.max(1.0)));

    // tighten: the smallest constant closing the inequality at every
    // sample for the fitted exponential part (at most the ladder value)
    let mut c_bar = 0.0f64;
    for i in 0..n {
        let b_part = b0 * (-omega2 * pair.times[i]).exp();
        let excess = r[i] - b_part;
        if excess > 0.0 && m[i] > floor {
            c_bar = c_bar.max(excess / m[i]);
        }
    }

    let mut max_rel = 0.0f64;
    for i in 0..n {
        let rhs = b0 * (-omega2 * pair.times[i]).exp() + c_bar * m[i];
        if r[i] > floor {
            max_rel = max_rel.max((r[i] - rhs) / r[i]);
        }
    }
    QuasiFit {
        degenerate: false,
        b0,
        omega: 0.5 * omega2,
        c_bar,
        max_relative_residual: max_rel.max(0.0),
        seminorm: pair.seminorm,
    }
}

/// Closed-form decay rate of the damped modal oscillator
/// `z'' + g z' + lambda z = 0` (rate of |z|, not |z|^2).
pub fn modal_decay_rate(g: f64, lambda: f64) -> f64 {
    let disc = 0.25 * g * g - lambda;
    if disc < 0.0 {
        0.5 * g
    } else {
        0.5 * g - disc.sqrt()
    }
}

/// Stabilizability-estimate audit over a window [0, T].
#[derive(Debug, Clone, Serialize)]
pub struct StabilizabilityReport {
    /// Smallest C with `E0z(T) + int E0z <= C (int D_z + LOT)`.
    pub c_t: f64,
    pub lot: f64,
    pub damping_integral: f64,
    pub energy_integral: f64,
    pub energy_at_t: f64,
    /// False when there is no dissipation to absorb the energy.
    pub holds: bool,
}

/// Computes the stabilizability constants from pair snapshots by
/// trapezoid quadrature; H1 lower-order norm is L2 of the displacement.
pub fn stabilizability_audit(model: &Model, pair: &PairRun, t_window: f64) -> Result<StabilizabilityReport> {
    let damping = model
        .damping()
        .ok_or_else(|| Error::WrongModel("stabilizability audit needs a damped model".into()))?
        .clone();
    let basis = model.basis();
    let n = pair.times.iter().take_while(|t| **t <= t_window + 1e-12).count();
    if n < 2 {
        return Err(Error::Validation("stabilizability window shorter than two snapshots".into()));
    }
    let pos_energy = |z: &State| {
        0.5 * (basis.sobolev_norm(&z.u, 1.0).powi(2) + basis.sobolev_norm(&z.v, 0.0).powi(2))
    };
    let mut e_vals = Vec::with_capacity(n);
    let mut d_vals = Vec::with_capacity(n);
    let mut lot = 0.0f64;
    for i in 0..n {
        let z = pair.traj1.states[i].sub(&pair.traj2.states[i]);
        e_vals.push(pos_energy(&z));
        lot = lot.max(basis.sobolev_norm(&z.u, 0.0).powi(2));
        // difference-damping functional ((a [g(v1) - g(v2)]), v1 - v2)
        let v1 = basis.to_grid(&pair.traj1.states[i].v);
        let v2 = basis.to_grid(&pair.traj2.states[i].v);
        let w = basis.quad_weight();
        let d: f64 = v1
            .values
            .iter()
            .zip(&v2.values)
            .map(|(&a, &b)| (damping.g(a) - damping.g(b)) * (a - b))
            .sum();
        d_vals.push(w * d);
    }
    let trapezoid = |vals: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 1..n {
            s += 0.5 * (vals[i] + vals[i - 1]) * (pair.times[i] - pair.times[i - 1]);
        }
        s
    };
    let energy_integral = trapezoid(&e_vals);
    let damping_integral = trapezoid(&d_vals);
    let lhs = e_vals[n - 1] + energy_integral;
    let rhs = damping_integral + lot;
    let c_t = if lhs <= 1e-30 {
        0.0
    } else if rhs > 0.0 {
        lhs / rhs
    } else {
        f64::INFINITY
    };
    // without genuine dissipation the constant is driven entirely by the
    // lower-order term and diverges with the mode index: flag it
    let holds = lhs <= 1e-30 || (c_t.is_finite() && damping_integral > 1e-12 * lhs);
    Ok(StabilizabilityReport {
        c_t,
        lot,
        damping_integral,
        energy_integral,
        energy_at_t: e_vals[n - 1],
        holds,
    })
}

/// `int_0^T |u_t|^2 dt` accumulated by the integrator, with a
/// saturation check (last 10% of the run contributes < 1%).
#[derive(Debug, Clone, Serialize)]
pub struct DissipativityIntegral {
    pub value: f64,
    pub saturated: bool,
}

pub fn dissipativity_integral(traj: &Trajectory) -> DissipativityIntegral {
    let series = &traj.velocity_l2_int;
    let value = series.last().copied().unwrap_or(0.0);
    let saturated = if value > 0.0 && series.len() > 10 {
        let idx = series.len() - 1 - series.len() / 10;
        (value - series[idx]) < 0.01 * value
    } else {
        value == 0.0
    };
    DissipativityIntegral { value, saturated }
}

/// Single-trajectory decay audit via the observability constant
/// `E(T) <= C [E(0) - E(T)]`, which yields the per-window contraction
/// factor `C / (1 + C)`.
#[derive(Debug, Clone, Serialize)]
pub struct SingleDecayReport {
    /// None when E(0) = E(T) (no dissipation to observe).
    pub c: Option<f64>,
    pub contraction_factor: Option<f64>,
    /// Energies at the window boundaries E(0), E(T), E(2T), ...
    pub window_energies: Vec<f64>,
    /// Observed per-window ratios.
    pub observed_ratios: Vec<f64>,
}

pub fn single_decay_audit(traj: &Trajectory, t_window: f64) -> Result<SingleDecayReport> {
    if t_window <= 0.0 {
        return Err(Error::OutOfRange("decay window must be positive".into()));
    }
    let t_total = *traj.times.last().unwrap();
    let windows = (t_total / t_window).floor() as usize;
    if windows < 1 {
        return Err(Error::Validation("trajectory shorter than one window".into()));
    }
    let energy_at = |t: f64| -> f64 {
        // nearest snapshot
        let mut best = (f64::INFINITY, 0usize);
        for (i, ti) in traj.times.iter().enumerate() {
            let d = (ti - t).abs();
            if d < best.0 {
                best = (d, i);
            }
        }
        traj.energy[best.1]
    };
    let window_energies: Vec<f64> = (0..=windows).map(|k| energy_at(k as f64 * t_window)).collect();
    let e0 = window_energies[0];
    let e1 = window_energies[1];
    let c = if e1 <= 0.0 {
        Some(0.0)
    } else if e0 - e1 > 1e-14 * e0.abs().max(1.0) {
        Some(e1 / (e0 - e1))
    } else {
        None
    };
    let contraction_factor = c.map(|c| c / (1.0 + c));
    let observed_ratios = window_energies
        .windows(2)
        .map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 })
        .collect();
    Ok(SingleDecayReport { c, contraction_factor, window_energies, observed_ratios })
}

/// Convenience: the phase-space norm of a pure modal difference used to
/// seed pair experiments.
pub fn perturbed_state(model: &Model, base: &State, rank: usize, delta: f64) -> State {
    let mut s = base.clone();
    let r = rank.min(model.basis().total_modes() - 1);
    let mut bump = model.basis().unit_field(r);
    bump = bump.scaled(delta);
    s.u.add_scaled(&bump, 1.0);
    s
}

/// True when the model is a wave with purely linear damping and no
/// source, where the closed-form modal oracle applies.
pub fn is_linear_wave(model: &Model) -> bool {
    match &model.spec.kind {
        ModelKind::Wave { damping, source } => {
            damping.is_linear()
                && source.kappa == 0.0
                && source.c == 0.0
                && source.mu == 0.0
        }
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{DampingLaw, ModelSpec, WaveSource};
    use crate::spectral::DomainSpec;
    use approx::assert_relative_eq;

    fn linear_wave(nx: usize, g1: f64) -> Model {
        Model::new(ModelSpec {
            domain: DomainSpec::interval(std::f64::consts::PI, nx),
            kind: ModelKind::Wave { damping: DampingLaw::linear(g1), source: WaveSource::zero() },
        })
        .unwrap()
    }

    fn default_nonlinear_wave(nx: usize, g1: f64) -> Model {
        // f(s) = -s^3 + c s^2 and g(s) = g1 s + |s|^4 s
        Model::new(ModelSpec {
            domain: DomainSpec::interval(std::f64::consts::PI, nx),
            kind: ModelKind::Wave {
                damping: DampingLaw { g1, g2: 1.0, exponent_m: 5.0, coeff: crate::models::CoeffProfile::Constant(1.0) },
                source: WaveSource { kappa: 1.0, p: 3.0, c: 0.3, mu: 0.0 },
            },
        })
        .unwrap()
    }

    #[test]
    fn identical_pair_is_degenerate() {
        let model = linear_wave(8, 0.5);
        let state = State { u: model.basis().unit_field(0), v: model.basis().zero_field() };
        let pair = evolve_pair(
            &model,
            &state,
            &state,
            &StepConfig::midpoint(1e-2),
            2.0,
            5,
            SeminormSpec::default(),
        )
        .unwrap();
        assert!(pair.z_norms.iter().all(|z| *z == 0.0));
        let fit = fit_8_4_2(&pair);
        assert!(fit.degenerate);
        assert_eq!(fit.max_relative_residual, 0.0);
    }

    #[test]
    fn linear_difference_matches_closed_form() {
        // difference in mode k obeys z'' + g1 z' + lambda_k z = 0
        let g1 = 0.5;
        let model = linear_wave(6, g1);
        let base = State { u: model.basis().unit_field(0), v: model.basis().zero_field() };
        let pert = perturbed_state(&model, &base, 2, 0.1);
        let lam = model.basis().eigenvalues()[2];
        let pair = evolve_pair(
            &model,
            &base,
            &pert,
            &StepConfig::midpoint(5e-5),
            0.5,
            1000,
            SeminormSpec::default(),
        )
        .unwrap();
        let om = (lam - 0.25 * g1 * g1).sqrt();
        for (t, zn) in pair.times.iter().zip(&pair.z_norms) {
            // z(t) and z'(t) in closed form, |z|_H = sqrt(lam z^2 + z'^2)
            let decay = (-0.5 * g1 * t).exp();
            let z = 0.1 * decay * ((om * t).cos() + 0.5 * g1 / om * (om * t).sin());
            let zdot = -0.1 * decay * (om + 0.25 * g1 * g1 / om) * (om * t).sin();
            let expect = (lam * z * z + zdot * zdot).sqrt();
            assert!((zn - expect).abs() <= 1e-8, "t={t}: {zn} vs {expect}");
        }
        // linearity: doubling the offset doubles the difference norm
        let pert2 = perturbed_state(&model, &base, 2, 0.2);
        let pair2 = evolve_pair(
            &model,
            &base,
            &pert2,
            &StepConfig::midpoint(5e-5),
            0.5,
            1000,
            SeminormSpec::default(),
        )
        .unwrap();
        for (a, b) in pair.z_norms.iter().zip(&pair2.z_norms) {
            assert_relative_eq!(2.0 * a, *b, epsilon = 1e-10);
        }
    }

    #[test]
    fn linear_fit_recovers_half_g1() {
        let g1 = 0.5;
        let model = linear_wave(8, g1);
        let base = State { u: model.basis().unit_field(0).scaled(0.5), v: model.basis().zero_field() };
        let pert = perturbed_state(&model, &base, 1, 0.2);
        let pair = evolve_pair(
            &model,
            &base,
            &pert,
            &StepConfig::midpoint(5e-3),
            30.0,
            10,
            SeminormSpec::default(),
        )
        .unwrap();
        let fit = fit_8_4_2(&pair);
        assert!(!fit.degenerate);
        let oracle = g1 / 2.0;
        assert!(
            (fit.omega - oracle).abs() <= 0.1 * oracle,
            "omega {} vs oracle {oracle}",
            fit.omega
        );
        assert!(fit.c_bar <= 1e-6, "c_bar = {}", fit.c_bar);
        assert!(fit.max_relative_residual <= 1e-9);
    }

    #[test]
    fn fit_is_symmetric_in_the_pair() {
        let model = default_nonlinear_wave(8, 1.0);
        let s1 = State { u: model.basis().unit_field(0).scaled(0.4), v: model.basis().zero_field() };
        let s2 = perturbed_state(&model, &s1, 1, 0.15);
        let cfg = StepConfig::midpoint(5e-3);
        let p12 = evolve_pair(&model, &s1, &s2, &cfg, 10.0, 10, SeminormSpec::default()).unwrap();
        let p21 = evolve_pair(&model, &s2, &s1, &cfg, 10.0, 10, SeminormSpec::default()).unwrap();
        let f12 = fit_8_4_2(&p12);
        let f21 = fit_8_4_2(&p21);
        assert_eq!(f12.omega, f21.omega);
        assert_eq!(f12.b0, f21.b0);
        assert_eq!(f12.c_bar, f21.c_bar);
    }

    #[test]
    fn nonlinear_default_pairs_have_positive_omega() {
        let model = default_nonlinear_wave(8, 1.0);
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        for _ in 0..3 {
            let u = model.basis().normalize(&model.basis().random_field(&mut rng, 1.5), 1.0);
            let base = State { u: u.scaled(0.5), v: model.basis().zero_field() };
            let pert = perturbed_state(&model, &base, 1, 0.1);
            let pair = evolve_pair(
                &model,
                &base,
                &pert,
                &StepConfig::midpoint(5e-3),
                12.0,
                10,
                SeminormSpec::default(),
            )
            .unwrap();
            let fit = fit_8_4_2(&pair);
            assert!(!fit.degenerate);
            assert!(fit.omega > 0.0, "omega = {}", fit.omega);
            assert!(fit.c_bar.is_finite());
            assert!(fit.max_relative_residual <= 1e-9);
        }
    }

    #[test]
    fn linear_oracle_five_configurations() {
        // fitted omega within 10% of the slowest active modal rate
        let cases = [
            (0.5, vec![0usize, 1]),
            (0.8, vec![0]),
            (1.2, vec![1, 3]),
            (0.3, vec![2]),
            (2.5, vec![0, 2]), // mode 1 overdamped at g1 = 2.5
        ];
        for (g1, active) in cases {
            let model = linear_wave(8, g1);
            let mut u = model.basis().zero_field();
            for &k in &active {
                u.coeffs[k] = 0.4;
            }
            let base = State { u, v: model.basis().zero_field() };
            let mut pert = base.clone();
            for &k in &active {
                pert.u.coeffs[k] += 0.05;
            }
            let oracle = active
                .iter()
                .map(|&k| modal_decay_rate(g1, model.basis().eigenvalues()[k]))
                .fold(f64::INFINITY, f64::min);
            let t_final = (14.0 / oracle).min(120.0);
            let pair = evolve_pair(
                &model,
                &base,
                &pert,
                &StepConfig::midpoint(5e-3),
                t_final,
                10,
                SeminormSpec::default(),
            )
            .unwrap();
            let fit = fit_8_4_2(&pair);
            assert!(
                (fit.omega - oracle).abs() <= 0.1 * oracle,
                "g1={g1}, active {active:?}: omega {} vs oracle {oracle}",
                fit.omega
            );
        }
    }

    #[test]
    fn straddling_pairs_force_positive_c_bar() {
        // two trajectories converging to distinct pitchfork equilibria:
        // |z| plateaus, the exponential part cannot absorb it, and the
        // compact term must carry it. Fitted c_bar stays positive and
        // does not shrink as the pair energies grow.
        let model = Model::new(ModelSpec {
            domain: DomainSpec::interval(std::f64::consts::PI, 12),
            kind: ModelKind::Wave {
                damping: DampingLaw::linear(1.0),
                source: WaveSource::pitchfork(2.0),
            },
        })
        .unwrap();
        let mut cbars = Vec::new();
        for scale in [0.05, 0.1, 0.2] {
            let mut u1 = model.basis().unit_field(0).scaled(scale);
            u1.add_scaled(&model.basis().unit_field(1), 0.3 * scale);
            let s1 = State { u: u1.clone(), v: model.basis().zero_field() };
            let s2 = State { u: u1.scaled(-1.0), v: model.basis().zero_field() };
            let pair = evolve_pair(
                &model,
                &s1,
                &s2,
                &StepConfig::midpoint(5e-3),
                30.0,
                10,
                SeminormSpec::default(),
            )
            .unwrap();
            let fit = fit_8_4_2(&pair);
            assert!(fit.omega > 0.0, "decaying part must carry a positive rate");
            assert!(fit.c_bar > 0.0, "plateau must force a positive c_bar");
            assert!(fit.max_relative_residual <= 1e-9);
            cbars.push(fit.c_bar);
        }
        for w in cbars.windows(2) {
            assert!(
                w[1] >= 0.8 * w[0],
                "c_bar shrank along the energy ladder: {cbars:?}"
            );
        }
    }

    #[test]
    fn stabilizability_linear_and_undamped() {
        let model = linear_wave(8, 0.6);
        let base = State { u: model.basis().unit_field(0).scaled(0.5), v: model.basis().zero_field() };
        let cfg = StepConfig::midpoint(2e-3);
        let mut cts = Vec::new();
        for rank in [1usize, 2, 3, 4] {
            let pert = perturbed_state(&model, &base, rank, 0.1);
            let pair = evolve_pair(&model, &base, &pert, &cfg, 8.0, 4, SeminormSpec::default()).unwrap();
            let rep = stabilizability_audit(&model, &pair, 8.0).unwrap();
            assert!(rep.holds);
            cts.push(rep.c_t);
        }
        let cmin = cts.iter().cloned().fold(f64::INFINITY, f64::min);
        let cmax = cts.iter().cloned().fold(0.0f64, f64::max);
        assert!(cmax <= 1.6 * cmin, "C_T spread too wide: {cts:?}");

        // zero pair: the inequality holds with C = 0
        let pair = evolve_pair(&model, &base, &base, &cfg, 4.0, 4, SeminormSpec::default()).unwrap();
        let rep = stabilizability_audit(&model, &pair, 4.0).unwrap();
        assert_eq!(rep.c_t, 0.0);

        // undamped: no dissipation, only the lower-order term remains;
        // the constant is flagged and blows up with the mode index
        let undamped = linear_wave(32, 0.0);
        let base = State { u: undamped.basis().unit_field(0), v: undamped.basis().zero_field() };
        let pert = perturbed_state(&undamped, &base, 31, 0.05);
        let pair = evolve_pair(&undamped, &base, &pert, &cfg, 4.0, 4, SeminormSpec::default()).unwrap();
        let rep = stabilizability_audit(&undamped, &pair, 4.0).unwrap();
        assert!(!rep.holds, "undamped stabilizability must be flagged");
        assert!(rep.c_t > 1e3, "undamped high-mode C_T should be large, got {}", rep.c_t);
    }

    #[test]
    fn dissipativity_closed_form() {
        // linear damped single mode: int |u_t|^2 = E(0)/g1
        let g1 = 0.8;
        let model = linear_wave(6, g1);
        let c = 1.3;
        let state = State { u: model.basis().unit_field(0).scaled(c), v: model.basis().zero_field() };
        let lam1 = model.basis().eigenvalues()[0];
        let traj = integrate(&model, &state, &StepConfig::midpoint(2e-3), 60.0, 100).unwrap();
        let rep = dissipativity_integral(&traj);
        let oracle = 0.5 * lam1 * c * c / g1;
        assert!(
            (rep.value - oracle).abs() <= 0.01 * oracle,
            "integral {} vs closed form {oracle}",
            rep.value
        );
        assert!(rep.saturated);

        // equilibrium start gives zero
        let z = State::zero(model.basis());
        let traj = integrate(&model, &z, &StepConfig::midpoint(1e-2), 2.0, 10).unwrap();
        let rep = dissipativity_integral(&traj);
        assert_eq!(rep.value, 0.0);
        assert!(rep.saturated);
    }

    #[test]
    fn single_decay_contraction() {
        let model = linear_wave(6, 0.7);
        let state = State { u: model.basis().unit_field(0), v: model.basis().zero_field() };
        let traj = integrate(&model, &state, &StepConfig::midpoint(2e-3), 40.0, 25).unwrap();
        let rep = single_decay_audit(&traj, 8.0).unwrap();
        let factor = rep.contraction_factor.unwrap();
        for ratio in &rep.observed_ratios {
            assert!(*ratio <= factor + 0.05, "window ratio {ratio} vs factor {factor}");
        }

        // undamped: E(0) = E(T), constant undefined
        let undamped = linear_wave(6, 0.0);
        let state = State { u: undamped.basis().unit_field(0), v: undamped.basis().zero_field() };
        let traj = integrate(&undamped, &state, &StepConfig::midpoint(2e-3), 10.0, 25).unwrap();
        let rep = single_decay_audit(&traj, 5.0).unwrap();
        assert!(rep.c.is_none());
    }
}
