//! Time integration with per-step energy bookkeeping.
//!
//! The default scheme is the implicit midpoint rule. The stage equation
//! is solved by a preconditioned fixed-point iteration whose linear part
//! (modal stiffness and linear damping diagonals) is inverted exactly,
//! so stiff bilaplacian terms do not constrain the step size. All audit
//! integrals (dissipation, source work, the Boussinesq and Ball
//! integrands) are accumulated at the converged stage state with
//! midpoint quadrature; for linear models the discrete energy balance
//! then closes to rounding, and for nonlinear ones the residual is pure
//! O(dt^2) time discretisation error.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::models::{Model, ModelKind, State};
use crate::spectral::ModalField;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Scheme {
    ImplicitMidpoint,
    ExplicitRk4,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct StepConfig {
    pub scheme: Scheme,
    pub dt: f64,
    pub solver_tol: f64,
    pub max_inner_iters: usize,
    pub blowup_threshold: f64,
}

impl StepConfig {
    pub fn midpoint(dt: f64) -> Self {
        Self {
            scheme: Scheme::ImplicitMidpoint,
            dt,
            solver_tol: 1e-12,
            max_inner_iters: 50,
            blowup_threshold: 1e6,
        }
    }

    pub fn rk4(dt: f64) -> Self {
        Self { scheme: Scheme::ExplicitRk4, ..Self::midpoint(dt) }
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::Validation(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.solver_tol > 0.0) {
            return Err(Error::Validation("solver tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Kirchhoff-Boussinesq audit series sampled with the trajectory.
#[derive(Debug, Clone, Default, Serialize)]
pub struct KbAuditSeries {
    /// Cumulative `int ((Delta[w^2], w_t))`.
    pub boussinesq_int: Vec<f64>,
    /// Cumulative `int ((|grad w|^2, w_t))`.
    pub grad2_int: Vec<f64>,
    /// `((|grad w|^2, w))` at the snapshot.
    pub boundary: Vec<f64>,
    /// Ball audit: damping floor k (when linear damping is present).
    pub ball_k: Option<f64>,
    /// `Psi = E + (k/2)(w, w_t)` at snapshots.
    pub psi: Vec<f64>,
    /// Cumulative `int (k Psi + L - K)`.
    pub ball_int: Vec<f64>,
}

/// Discrete trajectory with snapshots and cumulative audit integrals.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub energy: Vec<f64>,
    /// Cumulative dissipation integral at each snapshot.
    pub dissipated: Vec<f64>,
    /// Cumulative non-conservative source work.
    pub work: Vec<f64>,
    /// Cumulative `int |u_t|^2` (dissipativity integral).
    pub velocity_l2_int: Vec<f64>,
    pub kb: Option<KbAuditSeries>,
    pub blowup_time: Option<f64>,
    pub dt: f64,
}

impl Trajectory {
    pub fn blew_up(&self) -> bool {
        self.blowup_time.is_some()
    }

    pub fn last_state(&self) -> &State {
        self.states.last().expect("trajectory holds at least the initial state")
    }
}

/// Energy-balance audit of a trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct EnergyAudit {
    /// Residual `E(t) + int D - E(0) - int work` at each snapshot.
    pub residuals: Vec<f64>,
    pub max_abs: f64,
    pub dt: f64,
}

struct Accumulators {
    dissipated: f64,
    work: f64,
    vel_l2: f64,
    boussinesq: f64,
    grad2: f64,
    ball: f64,
}

impl Accumulators {
    fn new() -> Self {
        Self { dissipated: 0.0, work: 0.0, vel_l2: 0.0, boussinesq: 0.0, grad2: 0.0, ball: 0.0 }
    }

    /// Adds `weight` times the audit integrands at the given state.
    fn add(&mut self, model: &Model, state: &State, ball_k: Option<f64>, weight: f64) {
        self.dissipated += weight * model.damping_power(state);
        self.work += weight * model.work_rate(state);
        self.vel_l2 += weight * model.basis().sobolev_norm(&state.v, 0.0).powi(2);
        if matches!(model.spec.kind, ModelKind::KirchhoffBoussinesq { .. }) {
            self.boussinesq += weight * model.kb_boussinesq_rate(state);
            self.grad2 += weight * model.kb_grad2_rate(state);
            if let Some(k) = ball_k {
                let integrand = k * model.kb_ball_psi(state, k) + model.kb_ball_l(state, k)
                    - model.kb_ball_k_term(state, k);
                self.ball += weight * integrand;
            }
        }
    }
}

/// One implicit-midpoint step; returns the new state and the converged
/// stage (midpoint) state used for quadrature.
///
/// The stage equation is first attacked with a preconditioned
/// fixed-point iteration (the modal stiffness diagonal is inverted
/// exactly, so linear problems converge in one update). Strongly
/// nonlinear damping makes that iteration diverge at large velocity;
/// after ten iterations a damped Newton with a finite-difference
/// Jacobian takes over.
fn midpoint_step(
    model: &Model,
    state: &State,
    config: &StepConfig,
    dt: f64,
    t: f64,
    warm: Option<&ModalField>,
) -> Result<(State, State)> {
    let n = model.basis().total_modes();
    let (l_diag, d_diag) = model.stiffness_diagonals(state);
    let half = 0.5 * dt;

    let residual = |v_h: &ModalField| -> Result<ModalField> {
        let mut u_h = state.u.clone();
        u_h.add_scaled(v_h, half);
        let acc = model.acceleration(&State { u: u_h, v: v_h.clone() })?;
        let coeffs = (0..n)
            .map(|k| state.v.coeffs[k] + half * acc.coeffs[k] - v_h.coeffs[k])
            .collect();
        Ok(ModalField { coeffs })
    };
    let sup = |f: &ModalField| f.coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let finish = |v_h: ModalField| -> Result<(State, State)> {
        let mut u_h = state.u.clone();
        u_h.add_scaled(&v_h, half);
        let stage = State { u: u_h, v: v_h };
        let acc = model.acceleration(&stage)?;
        let mut u1 = state.u.clone();
        u1.add_scaled(&stage.v, dt);
        let mut v1 = state.v.clone();
        v1.add_scaled(&acc, dt);
        Ok((State { u: u1, v: v1 }, stage))
    };

    let mut v_h = warm.cloned().unwrap_or_else(|| state.v.clone());
    let scale = 1.0 + sup(&state.v) + sup(&state.u);
    let fp_iters = 10.min(config.max_inner_iters);
    let mut best = f64::INFINITY;
    let mut best_v = v_h.clone();

    for _ in 0..fp_iters {
        let f = residual(&v_h)?;
        if !f.is_finite() {
            break;
        }
        let res_norm = sup(&f);
        if res_norm <= config.solver_tol * scale {
            return finish(v_h);
        }
        if res_norm < best {
            best = res_norm;
            best_v = v_h.clone();
        } else if res_norm > 10.0 * best {
            break; // diverging, hand the best iterate to Newton
        }
        for k in 0..n {
            let precond = 1.0 + half * d_diag[k] + half * half * l_diag[k];
            v_h.coeffs[k] += f.coeffs[k] / precond;
        }
    }

    // Newton fallback with a forward-difference Jacobian, started from
    // the best fixed-point iterate.
    let mut v_h = best_v;
    let mut f = residual(&v_h)?;
    let mut res_norm = sup(&f);
    let mut iters = fp_iters;
    while iters < config.max_inner_iters {
        if res_norm <= config.solver_tol * scale {
            return finish(v_h);
        }
        let mut jac = nalgebra::DMatrix::<f64>::zeros(n, n);
        let fd = (f64::EPSILON).sqrt();
        for j in 0..n {
            let h = fd * (1.0 + v_h.coeffs[j].abs());
            let mut vp = v_h.clone();
            vp.coeffs[j] += h;
            let fp = residual(&vp)?;
            for i in 0..n {
                jac[(i, j)] = (fp.coeffs[i] - f.coeffs[i]) / h;
            }
        }
        let rhs = nalgebra::DVector::from_column_slice(&f.coeffs);
        let lu = nalgebra::linalg::LU::new(jac);
        let delta = lu
            .solve(&rhs)
            .ok_or(Error::StageSolve { t, residual: res_norm, iters })?;
        // line search on the residual sup norm
        let mut step_len = 1.0;
        let mut improved = false;
        for _ in 0..8 {
            let mut cand = v_h.clone();
            for k in 0..n {
                cand.coeffs[k] -= step_len * delta[k];
            }
            if let Ok(fc) = residual(&cand) {
                let rn = sup(&fc);
                if rn.is_finite() && rn < res_norm {
                    v_h = cand;
                    f = fc;
                    res_norm = rn;
                    improved = true;
                    break;
                }
            }
            step_len *= 0.5;
        }
        iters += 1;
        if !improved {
            return Err(Error::StageSolve { t, residual: res_norm, iters });
        }
    }
    if res_norm <= config.solver_tol * scale {
        return finish(v_h);
    }
    Err(Error::StageSolve { t, residual: res_norm, iters })
}

fn rk4_step(model: &Model, state: &State, dt: f64) -> Result<(State, [State; 4])> {
    let deriv = |s: &State| -> Result<(ModalField, ModalField)> {
        Ok((s.v.clone(), model.acceleration(s)?))
    };
    let advance = |s: &State, du: &ModalField, dv: &ModalField, h: f64| {
        let mut u = s.u.clone();
        u.add_scaled(du, h);
        let mut v = s.v.clone();
        v.add_scaled(dv, h);
        State { u, v }
    };
    let s1 = state.clone();
    let (k1u, k1v) = deriv(&s1)?;
    let s2 = advance(state, &k1u, &k1v, 0.5 * dt);
    let (k2u, k2v) = deriv(&s2)?;
    let s3 = advance(state, &k2u, &k2v, 0.5 * dt);
    let (k3u, k3v) = deriv(&s3)?;
    let s4 = advance(state, &k3u, &k3v, dt);
    let (k4u, k4v) = deriv(&s4)?;
    let mut u = state.u.clone();
    let mut v = state.v.clone();
    let w = dt / 6.0;
    u.add_scaled(&k1u, w);
    u.add_scaled(&k2u, 2.0 * w);
    u.add_scaled(&k3u, 2.0 * w);
    u.add_scaled(&k4u, w);
    v.add_scaled(&k1v, w);
    v.add_scaled(&k2v, 2.0 * w);
    v.add_scaled(&k3v, 2.0 * w);
    v.add_scaled(&k4v, w);
    Ok((State { u, v }, [s1, s2, s3, s4]))
}

/// Advances one step. Deterministic given inputs; fails if the inner
/// solver does not converge (the caller may halve dt).
pub fn step(model: &Model, state: &State, config: &StepConfig) -> Result<State> {
    config.validate()?;
    match config.scheme {
        Scheme::ImplicitMidpoint => {
            midpoint_step(model, state, config, config.dt, 0.0, None).map(|(s, _)| s)
        }
        Scheme::ExplicitRk4 => rk4_step(model, state, config.dt).map(|(s, _)| s),
    }
}

/// Integrates to `t_final`, snapshotting every `stride` steps.
///
/// Halts early with the blow-up flag set when the phase norm crosses the
/// threshold or the inner solver diverges on a growing trajectory. A
/// failed step is retried once as two half steps before giving up.
pub fn integrate(
    model: &Model,
    state0: &State,
    config: &StepConfig,
    t_final: f64,
    stride: usize,
) -> Result<Trajectory> {
    config.validate()?;
    if t_final < 0.0 {
        return Err(Error::Validation("t_final must be nonnegative".into()));
    }
    let stride = stride.max(1);
    let n_steps = (t_final / config.dt).round() as usize;

    let ball_k = match &model.spec.kind {
        ModelKind::KirchhoffBoussinesq { .. } => model.kb_ball_k().ok(),
        _ => None,
    };
    let is_kb = matches!(model.spec.kind, ModelKind::KirchhoffBoussinesq { .. });

    let mut traj = Trajectory {
        times: Vec::new(),
        states: Vec::new(),
        energy: Vec::new(),
        dissipated: Vec::new(),
        work: Vec::new(),
        velocity_l2_int: Vec::new(),
        kb: if is_kb { Some(KbAuditSeries { ball_k, ..Default::default() }) } else { None },
        blowup_time: None,
        dt: config.dt,
    };

    let mut acc = Accumulators::new();
    let mut state = state0.clone();
    let mut warm: Option<ModalField> = None;

    let push_snapshot = |traj: &mut Trajectory, acc: &Accumulators, state: &State, t: f64| {
        traj.times.push(t);
        traj.energy.push(model.energy(state));
        traj.dissipated.push(acc.dissipated);
        traj.work.push(acc.work);
        traj.velocity_l2_int.push(acc.vel_l2);
        if let Some(kb) = &mut traj.kb {
            kb.boussinesq_int.push(acc.boussinesq);
            kb.grad2_int.push(acc.grad2);
            kb.boundary.push(model.kb_boundary_term(state));
            if let Some(k) = kb.ball_k {
                kb.psi.push(model.kb_ball_psi(state, k));
                kb.ball_int.push(acc.ball);
            }
        }
        traj.states.push(state.clone());
    };

    push_snapshot(&mut traj, &acc, &state, 0.0);
    let initial_norm = model.phase_norm(&state);

    for i in 0..n_steps {
        let t = i as f64 * config.dt;
        let result = match config.scheme {
            Scheme::ImplicitMidpoint => {
                match midpoint_step(model, &state, config, config.dt, t, warm.as_ref()) {
                    Ok((next, stage)) => {
                        acc.add(model, &stage, ball_k, config.dt);
                        warm = Some(stage.v);
                        Ok(next)
                    }
                    Err(first_err) => {
                        // one retry at dt/2 (two half steps)
                        let half_cfg = config;
                        let attempt = midpoint_step(model, &state, half_cfg, 0.5 * config.dt, t, None)
                            .and_then(|(mid, stage1)| {
                                midpoint_step(model, &mid, half_cfg, 0.5 * config.dt, t, None)
                                    .map(|(next, stage2)| (next, stage1, stage2))
                            });
                        match attempt {
                            Ok((next, stage1, stage2)) => {
                                acc.add(model, &stage1, ball_k, 0.5 * config.dt);
                                acc.add(model, &stage2, ball_k, 0.5 * config.dt);
                                warm = None;
                                Ok(next)
                            }
                            Err(_) => Err(first_err),
                        }
                    }
                }
            }
            Scheme::ExplicitRk4 => rk4_step(model, &state, config.dt).map(|(next, stages)| {
                let w = config.dt / 6.0;
                acc.add(model, &stages[0], ball_k, w);
                acc.add(model, &stages[1], ball_k, 2.0 * w);
                acc.add(model, &stages[2], ball_k, 2.0 * w);
                acc.add(model, &stages[3], ball_k, w);
                next
            }),
        };

        let t_next = (i + 1) as f64 * config.dt;
        match result {
            Ok(next) => {
                let norm = model.phase_norm(&next);
                if !norm.is_finite() || norm > config.blowup_threshold {
                    traj.blowup_time = Some(t_next);
                    push_snapshot(&mut traj, &acc, &next, t_next);
                    return Ok(traj);
                }
                state = next;
                if (i + 1) % stride == 0 || i + 1 == n_steps {
                    push_snapshot(&mut traj, &acc, &state, t_next);
                }
            }
            Err(err) => {
                // a diverging inner solve on a grown trajectory is the
                // blow-up signature; anything else is a genuine failure
                let norm = model.phase_norm(&state);
                if norm > 5.0 * (1.0 + initial_norm) {
                    traj.blowup_time = Some(t_next);
                    push_snapshot(&mut traj, &acc, &state, t_next);
                    return Ok(traj);
                }
                return Err(err);
            }
        }
    }
    Ok(traj)
}

/// Energy-balance residual `E(t) + int D - E(0) - int work` per snapshot.
pub fn audit_energy(traj: &Trajectory) -> EnergyAudit {
    let e0 = traj.energy.first().copied().unwrap_or(0.0);
    let residuals: Vec<f64> = traj
        .energy
        .iter()
        .zip(&traj.dissipated)
        .zip(&traj.work)
        .map(|((e, d), w)| e + d - e0 - w)
        .collect();
    let max_abs = residuals.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    EnergyAudit { residuals, max_abs, dt: traj.dt }
}

/// Discrete residual of the Boussinesq work identity
/// `int ((Delta w^2, w_t)) + [((|grad w|^2, w))] - int ((|grad w|^2, w_t))`
/// per snapshot.
pub fn audit_boussinesq_identity(traj: &Trajectory) -> Result<Vec<f64>> {
    let kb = traj
        .kb
        .as_ref()
        .ok_or_else(|| Error::WrongModel("Boussinesq audit requires a KB trajectory".into()))?;
    let b0 = kb.boundary.first().copied().unwrap_or(0.0);
    Ok(kb
        .boussinesq_int
        .iter()
        .zip(&kb.boundary)
        .zip(&kb.grad2_int)
        .map(|((bi, bd), g)| bi + (bd - b0) - g)
        .collect())
}

/// Blow-up flag and first crossing time for a trajectory.
pub fn detect_blowup(traj: &Trajectory, threshold: f64, model: &Model) -> (bool, Option<f64>) {
    if let Some(t) = traj.blowup_time {
        return (true, Some(t));
    }
    for (t, s) in traj.times.iter().zip(&traj.states) {
        let n = model.phase_norm(s);
        if !n.is_finite() || n > threshold {
            return (true, Some(*t));
        }
    }
    (false, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{DampingLaw, ModelKind, ModelSpec, WaveSource};
    use crate::spectral::DomainSpec;

    fn wave_model(nx: usize, damping: DampingLaw, source: WaveSource) -> Model {
        Model::new(ModelSpec {
            domain: DomainSpec::interval(std::f64::consts::PI, nx),
            kind: ModelKind::Wave { damping, source },
        })
        .unwrap()
    }

    #[test]
    fn zero_state_is_fixed_point() {
        let model = wave_model(8, DampingLaw::power(0.5, 3.0), WaveSource::defocusing(3.0));
        let z = State::zero(model.basis());
        let next = step(&model, &z, &StepConfig::midpoint(1e-2)).unwrap();
        assert_eq!(next.u.norm(), 0.0);
        assert_eq!(next.v.norm(), 0.0);
    }

    #[test]
    fn linear_mode_conserves_energy_per_step() {
        let model = wave_model(4, DampingLaw::none(), WaveSource::zero());
        let mut state = State { u: model.basis().unit_field(0), v: model.basis().zero_field() };
        let cfg = StepConfig::midpoint(1e-2);
        let e0 = model.energy(&state);
        for _ in 0..100 {
            let next = step(&model, &state, &cfg).unwrap();
            let e1 = model.energy(&next);
            assert!((e1 - e0).abs() <= 1e-12 * e0.max(1.0), "per-step drift {}", e1 - e0);
            state = next;
        }
    }

    #[test]
    fn undamped_conservation_long_run() {
        let model = wave_model(4, DampingLaw::none(), WaveSource::zero());
        let state = State { u: model.basis().unit_field(0), v: model.basis().zero_field() };
        let traj = integrate(&model, &state, &StepConfig::midpoint(1e-3), 10.0, 100).unwrap();
        let e0 = traj.energy[0];
        for e in &traj.energy {
            assert!((e - e0).abs() <= 1e-9, "drift {}", e - e0);
        }
    }

    #[test]
    fn zero_horizon_single_snapshot() {
        let model = wave_model(4, DampingLaw::none(), WaveSource::zero());
        let state = State { u: model.basis().unit_field(0), v: model.basis().zero_field() };
        let traj = integrate(&model, &state, &StepConfig::midpoint(1e-2), 0.0, 10).unwrap();
        assert_eq!(traj.times.len(), 1);
        assert_eq!(traj.states.len(), 1);
    }

    #[test]
    fn damped_energy_nonincreasing() {
        let model = wave_model(6, DampingLaw::linear(0.8), WaveSource::zero());
        let mut u = model.basis().unit_field(0);
        u.add_scaled(&model.basis().unit_field(2), 0.5);
        let state = State { u, v: model.basis().zero_field() };
        let traj = integrate(&model, &state, &StepConfig::midpoint(5e-3), 20.0, 20).unwrap();
        for w in traj.energy.windows(2) {
            assert!(w[1] <= w[0] + 1e-11, "energy increased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn audit_linear_undamped_machine_zero() {
        let model = wave_model(6, DampingLaw::none(), WaveSource::zero());
        let mut u = model.basis().unit_field(0);
        u.add_scaled(&model.basis().unit_field(3), 0.3);
        let state = State { u, v: model.basis().unit_field(1).scaled(0.2) };
        let traj = integrate(&model, &state, &StepConfig::midpoint(1e-3), 1.0, 50).unwrap();
        let audit = audit_energy(&traj);
        assert!(audit.max_abs <= 1e-10, "audit residual {}", audit.max_abs);
    }

    #[test]
    fn audit_linear_damped_machine_zero() {
        // midpoint quadrature of the dissipation closes the balance
        // exactly for linear dynamics
        let model = wave_model(6, DampingLaw::linear(0.7), WaveSource::zero());
        let state = State { u: model.basis().unit_field(0), v: model.basis().zero_field() };
        let traj = integrate(&model, &state, &StepConfig::midpoint(1e-3), 2.0, 40).unwrap();
        let audit = audit_energy(&traj);
        assert!(audit.max_abs <= 1e-10, "audit residual {}", audit.max_abs);
    }

    #[test]
    fn damped_mode_matches_closed_form() {
        // z'' + g z' + lambda z = 0, z(0) = 1, z'(0) = 0 (underdamped)
        let g = 0.5;
        let model = wave_model(4, DampingLaw::linear(g), WaveSource::zero());
        let lam = model.basis().eigenvalues()[0];
        let state = State { u: model.basis().unit_field(0), v: model.basis().zero_field() };
        let dt = 5e-5;
        let traj = integrate(&model, &state, &StepConfig::midpoint(dt), 0.5, 1000).unwrap();
        let om = (lam - 0.25 * g * g).sqrt();
        for (t, s) in traj.times.iter().zip(&traj.states) {
            let z = (-0.5 * g * t).exp() * ((om * t).cos() + 0.5 * g / om * (om * t).sin());
            assert!(
                (s.u.coeffs[0] - z).abs() <= 1e-8,
                "t={t}: {} vs {z}",
                s.u.coeffs[0]
            );
        }
    }

    #[test]
    fn nonlinear_refinement_second_order() {
        let model = wave_model(8, DampingLaw::power(0.3, 3.0), WaveSource::defocusing(3.0));
        let mut u = model.basis().unit_field(0).scaled(0.8);
        u.add_scaled(&model.basis().unit_field(1), 0.4);
        let state = State { u, v: model.basis().zero_field() };
        let t_final = 1.0;
        let run = |dt: f64| {
            integrate(&model, &state, &StepConfig::midpoint(dt), t_final, usize::MAX).unwrap()
        };
        let fine = run(2.5e-4);
        let mid = run(5e-4);
        let coarse = run(1e-3);
        let err = |t: &Trajectory, r: &Trajectory| t.last_state().sub(r.last_state()).u.norm();
        let ratio = err(&coarse, &fine) / err(&mid, &fine);
        // dt vs dt/2 against a dt/4 reference: O(dt^2) gives ~4.67
        assert!((3.0..7.0).contains(&ratio), "refinement ratio {ratio}");
    }

    #[test]
    fn audit_residual_second_order_nonlinear() {
        let model = wave_model(8, DampingLaw::power(0.4, 3.0), WaveSource::defocusing(3.0));
        let state = State { u: model.basis().unit_field(0).scaled(0.9), v: model.basis().zero_field() };
        let res = |dt: f64| {
            let traj = integrate(&model, &state, &StepConfig::midpoint(dt), 1.0, 50).unwrap();
            audit_energy(&traj).max_abs
        };
        let ratio = res(2e-3) / res(1e-3);
        assert!((3.2..4.8).contains(&ratio), "audit halving ratio {ratio}");
    }

    #[test]
    fn rk4_cross_check() {
        let model = wave_model(6, DampingLaw::linear(0.5), WaveSource::defocusing(3.0));
        let state = State { u: model.basis().unit_field(0), v: model.basis().zero_field() };
        let dt = 1e-3;
        let mid = integrate(&model, &state, &StepConfig::midpoint(dt), 1.0, usize::MAX).unwrap();
        let rk = integrate(&model, &state, &StepConfig::rk4(dt), 1.0, usize::MAX).unwrap();
        let diff = mid.last_state().sub(rk.last_state()).u.norm();
        assert!(diff <= 1e-5, "schemes disagree by {diff}");
    }

    #[test]
    fn blowup_dichotomy() {
        // focusing cubic source with negative initial energy blows up
        // under weak linear damping, and is global under m = 5 damping
        let basis_amp = 2.5;
        let focusing = WaveSource::focusing(3.0);
        let weak = wave_model(8, DampingLaw::linear(0.1), focusing);
        let u0 = weak.basis().unit_field(0).scaled(basis_amp);
        let state = State { u: u0.clone(), v: weak.basis().zero_field() };
        assert!(weak.energy(&state) < 0.0, "E(0) = {}", weak.energy(&state));
        let traj = integrate(&weak, &state, &StepConfig::midpoint(1e-3), 50.0, 100).unwrap();
        let (flag, time) = detect_blowup(&traj, 1e6, &weak);
        assert!(flag, "expected blow-up");
        assert!(time.unwrap() < 50.0);

        // p <= m is global; the solution still grows (the energy stays
        // negative), so resolve the large amplitudes with a finer dt.
        // The acceptance suite runs the full T = 50 horizon.
        let strong = wave_model(8, DampingLaw::power(0.1, 5.0), focusing);
        let state = State { u: u0, v: strong.basis().zero_field() };
        let traj = integrate(&strong, &state, &StepConfig::midpoint(2.5e-4), 20.0, 2000).unwrap();
        let (flag, _) = detect_blowup(&traj, 1e6, &strong);
        assert!(!flag, "p <= m should be global");

        let defocusing = wave_model(8, DampingLaw::linear(0.1), WaveSource::defocusing(3.0));
        let state = State { u: defocusing.basis().unit_field(0).scaled(basis_amp), v: defocusing.basis().zero_field() };
        let traj = integrate(&defocusing, &state, &StepConfig::midpoint(1e-3), 10.0, 100).unwrap();
        assert!(!traj.blew_up());
    }

    #[test]
    fn karman_audit_second_order_and_monotone() {
        use crate::models::PlateLoad;
        let spec = ModelSpec {
            domain: DomainSpec::unit_square(8),
            kind: ModelKind::KarmanPlate {
                alpha: 0.0,
                damping: DampingLaw::linear(0.5),
                rotational: None,
                load: PlateLoad {
                    f0_modes: vec![(1, 1, 0.4)],
                    p_modes: vec![(1, 2, 0.2)],
                },
            },
        };
        let model = Model::new(spec).unwrap();
        let mut u = model.basis().unit_field(0).scaled(0.3);
        u.add_scaled(&model.basis().unit_field(2), 0.15);
        let state = State { u, v: model.basis().zero_field() };
        let res = |dt: f64| {
            let traj = integrate(&model, &state, &StepConfig::midpoint(dt), 0.4, 20).unwrap();
            for w in traj.energy.windows(2) {
                let slack = 10.0 * audit_energy(&traj).max_abs;
                assert!(w[1] <= w[0] + slack, "energy increased beyond audit slack");
            }
            audit_energy(&traj).max_abs
        };
        let ratio = res(1e-3) / res(5e-4);
        assert!(ratio >= 3.5 && ratio <= 4.8, "Karman audit halving ratio {ratio}");
    }

    #[test]
    fn karman_rotational_alpha_audit() {
        use crate::models::{PlateLoad, RotDamping};
        let spec = ModelSpec {
            domain: DomainSpec::unit_square(6),
            kind: ModelKind::KarmanPlate {
                alpha: 0.5,
                damping: DampingLaw::power(0.5, 3.0),
                rotational: Some(RotDamping { g1: 0.3, g2: 0.2 }),
                load: PlateLoad { f0_modes: vec![(1, 1, 0.3)], p_modes: vec![] },
            },
        };
        let model = Model::new(spec).unwrap();
        let state = State {
            u: model.basis().unit_field(0).scaled(0.4),
            v: model.basis().unit_field(1).scaled(0.3),
        };
        assert!(model.damping_power(&state) > 0.0);
        let res = |dt: f64| {
            let traj = integrate(&model, &state, &StepConfig::midpoint(dt), 0.4, 20).unwrap();
            for w in traj.energy.windows(2) {
                assert!(w[1] <= w[0] + 10.0 * audit_energy(&traj).max_abs);
            }
            audit_energy(&traj).max_abs
        };
        let ratio = res(2e-3) / res(1e-3);
        assert!((3.2..4.8).contains(&ratio), "rotational-damping audit ratio {ratio}");
    }

    #[test]
    fn kb_identities_second_order() {
        use crate::models::KbSource;
        let spec = ModelSpec {
            domain: DomainSpec::unit_square(6),
            kind: ModelKind::KirchhoffBoussinesq {
                alpha: 0.0,
                damping: DampingLaw::linear(1.0),
                source: KbSource { sigma: 0.2, rho: 1.0, ell: 3.0 },
            },
        };
        let model = Model::new(spec).unwrap();
        let state = State {
            u: model.basis().unit_field(0).scaled(0.5),
            v: model.basis().unit_field(1).scaled(0.2),
        };
        let run = |dt: f64| integrate(&model, &state, &StepConfig::midpoint(dt), 0.4, 20).unwrap();
        let coarse = run(2e-3);
        let fine = run(1e-3);

        let bmax = |t: &Trajectory| {
            audit_boussinesq_identity(t)
                .unwrap()
                .iter()
                .fold(0.0f64, |m, r| m.max(r.abs()))
        };
        let ratio = bmax(&coarse) / bmax(&fine);
        assert!((3.2..4.8).contains(&ratio), "Boussinesq identity halving ratio {ratio}");

        let ball_max = |t: &Trajectory| {
            let kb = t.kb.as_ref().unwrap();
            let psi0 = kb.psi[0];
            kb.psi
                .iter()
                .zip(&kb.ball_int)
                .map(|(p, i)| (p - psi0 + i).abs())
                .fold(0.0f64, f64::max)
        };
        let ratio = ball_max(&coarse) / ball_max(&fine);
        assert!((3.2..4.8).contains(&ratio), "Ball identity halving ratio {ratio}");

        // energy audit halves at second order too
        let ratio = audit_energy(&coarse).max_abs / audit_energy(&fine).max_abs;
        assert!((3.2..4.8).contains(&ratio), "KB energy audit halving ratio {ratio}");
    }

    #[test]
    fn kb_ball_constant_coefficient_l_vanishes() {
        use crate::models::KbSource;
        let spec = ModelSpec {
            domain: DomainSpec::unit_square(4),
            kind: ModelKind::KirchhoffBoussinesq {
                alpha: 0.0,
                damping: DampingLaw::linear(0.7),
                source: KbSource::none(),
            },
        };
        let model = Model::new(spec).unwrap();
        let k = model.kb_ball_k().unwrap();
        let state = State {
            u: model.basis().unit_field(0),
            v: model.basis().unit_field(1).scaled(0.5),
        };
        // a(x) constant: the (a_eff - k) weight is identically zero
        assert_eq!(model.kb_ball_l(&state, k), 0.0);

        // zero trajectory keeps every audit series at zero
        let z = State::zero(model.basis());
        let traj = integrate(&model, &z, &StepConfig::midpoint(1e-2), 0.1, 1).unwrap();
        let kb = traj.kb.as_ref().unwrap();
        let psi0 = kb.psi[0];
        for (p, i) in kb.psi.iter().zip(&kb.ball_int) {
            assert!((p - psi0 + i).abs() <= 1e-12);
        }
    }

    #[test]
    fn kirchhoff_wave_audit_second_order() {
        use crate::models::ScalarLaw;
        let spec = ModelSpec {
            domain: DomainSpec::interval(std::f64::consts::PI, 8),
            kind: ModelKind::KirchhoffWave {
                phi: ScalarLaw::affine(1.0, 0.5),
                sigma: ScalarLaw::affine(0.3, 0.1),
                source: WaveSource::defocusing(3.0),
                h_modes: vec![(2, 1, 0.1)],
            },
        };
        let model = Model::new(spec).unwrap();
        let state = State { u: model.basis().unit_field(0).scaled(0.8), v: model.basis().zero_field() };
        let res = |dt: f64| {
            let traj = integrate(&model, &state, &StepConfig::midpoint(dt), 0.5, 25).unwrap();
            audit_energy(&traj).max_abs
        };
        let ratio = res(2e-3) / res(1e-3);
        assert!((3.2..4.8).contains(&ratio), "Kirchhoff audit halving ratio {ratio}");
    }

    #[test]
    fn deterministic_trajectories() {
        let model = wave_model(8, DampingLaw::power(0.3, 3.0), WaveSource::defocusing(3.0));
        let state = State { u: model.basis().unit_field(0).scaled(0.7), v: model.basis().zero_field() };
        let cfg = StepConfig::midpoint(1e-3);
        let t1 = integrate(&model, &state, &cfg, 1.0, 10).unwrap();
        let t2 = integrate(&model, &state, &cfg, 1.0, 10).unwrap();
        for (a, b) in t1.states.iter().zip(&t2.states) {
            assert_eq!(a.u.coeffs, b.u.coeffs);
            assert_eq!(a.v.coeffs, b.v.coeffs);
        }
        assert_eq!(t1.energy, t2.energy);
    }
}
