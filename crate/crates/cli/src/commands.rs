//! The six subcommands: simulate, equilibria, decay, quasistab,
//! dimension, audit. Each writes a JSON report plus CSV tables into the
//! output directory and finishes with a checksum manifest.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use modalpde::attractor::{
    box_counting, cantor_points, dim_bound_from_fit, draw_initial_state, sample, segment_points,
    SampleConfig,
};
use modalpde::equilibria::{
    certify_residual, multistart_enumerate, linearized_spectrum, summarize, EquilibriumSet,
};
use modalpde::error::Error as CoreError;
use modalpde::integrator::{audit_boussinesq_identity, audit_energy, integrate, StepConfig, Trajectory};
use modalpde::longtime::{
    ball_identity_audit, build_k0, build_q, converge_trajectory, exponential_rate_fit,
    fit_envelope, solve_sigma_ode,
};
use modalpde::models::{Model, ModelKind, State};
use modalpde::quasistab::{
    dissipativity_integral, evolve_pair, fit_8_4_2, is_linear_wave, modal_decay_rate,
    perturbed_state, single_decay_audit, stabilizability_audit, SeminormSpec,
};

use crate::config::RunConfig;
use crate::output::OutputDir;

/// Failure modes mapped to process exit codes.
#[derive(Debug)]
pub enum CmdError {
    /// Exit 2: configuration or model validation.
    Validation(String),
    /// Exit 3: blow-up with --fail-on-blowup.
    Blowup { time: f64 },
    /// Exit 4: internal failures (solvers, IO).
    Internal(String),
}

impl From<CoreError> for CmdError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Validation(_)
            | CoreError::Shape { .. }
            | CoreError::NeedsTwoDim(_)
            | CoreError::WrongModel(_)
            | CoreError::OutOfRange(_) => CmdError::Validation(e.to_string()),
            _ => CmdError::Internal(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CmdError {
    fn from(e: std::io::Error) -> Self {
        CmdError::Internal(format!("io: {e}"))
    }
}

pub struct Ctx<'a> {
    pub config: &'a RunConfig,
    pub out: &'a Path,
    pub seed: u64,
    pub fail_on_blowup: bool,
    pub config_hash: String,
}

fn build_model(config: &RunConfig) -> Result<Model, CmdError> {
    let spec = config.model_spec().map_err(CmdError::Validation)?;
    Ok(Model::new(spec)?)
}

fn initial_state(model: &Model, config: &RunConfig, seed: u64) -> Result<State, CmdError> {
    let init = &config.init;
    match init.kind.as_str() {
        "modes" => {
            let mut state = State::zero(model.basis());
            let fill = |triples: &[(usize, usize, f64)],
                            field: &mut modalpde::spectral::ModalField|
             -> Result<(), CmdError> {
                for &(jx, jy, amp) in triples {
                    let rank = model.basis().rank_of_mode(jx, jy).ok_or_else(|| {
                        CmdError::Validation(format!("init mode ({jx},{jy}) outside the basis"))
                    })?;
                    field.coeffs[rank] += amp;
                }
                Ok(())
            };
            fill(&init.u, &mut state.u)?;
            fill(&init.v, &mut state.v)?;
            Ok(state)
        }
        "random" => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok(draw_initial_state(model, &mut rng, model.basis().total_modes(), init.radius))
        }
        other => Err(CmdError::Validation(format!("unknown init kind '{other}'"))),
    }
}

fn run_trajectory(
    model: &Model,
    state: &State,
    step: &StepConfig,
    t_final: f64,
    stride: usize,
) -> Result<Trajectory, CmdError> {
    Ok(integrate(model, state, step, t_final, stride)?)
}

fn energy_csv(out: &mut OutputDir, traj: &Trajectory) -> Result<(), CmdError> {
    let audit = audit_energy(traj);
    let rows: Vec<Vec<f64>> = traj
        .times
        .iter()
        .zip(&traj.energy)
        .zip(&traj.dissipated)
        .zip(&traj.work)
        .zip(&audit.residuals)
        .map(|((((t, e), d), w), r)| vec![*t, *e, *d, *w, *r])
        .collect();
    out.write_csv("energy.csv", "t,energy,dissipated,work,residual", &rows)?;
    Ok(())
}

#[derive(Serialize)]
struct SnapshotSidecar {
    rows: usize,
    cols: usize,
    dimension: usize,
    nx: usize,
    ny: usize,
    lx: f64,
    ly: f64,
    dt: f64,
    stride: usize,
    components: [&'static str; 2],
    ordering: &'static str,
    endianness: &'static str,
}

fn write_snapshots(out: &mut OutputDir, model: &Model, traj: &Trajectory, stride: usize) -> Result<(), CmdError> {
    let n = model.basis().total_modes();
    let rows: Vec<Vec<f64>> = traj
        .states
        .iter()
        .map(|s| {
            let mut row = Vec::with_capacity(2 * n);
            row.extend_from_slice(&s.u.coeffs);
            row.extend_from_slice(&s.v.coeffs);
            row
        })
        .collect();
    out.write_f64_matrix("snapshots.bin", &rows)?;
    let d = &model.spec.domain;
    out.write_json(
        "snapshots.json",
        &SnapshotSidecar {
            rows: rows.len(),
            cols: 2 * n,
            dimension: d.dimension,
            nx: d.modes[0],
            ny: if d.dimension == 2 { d.modes[1] } else { 1 },
            lx: d.lengths[0],
            ly: if d.dimension == 2 { d.lengths[1] } else { 0.0 },
            dt: traj.dt,
            stride,
            components: ["u", "v"],
            ordering: "eigenvalue-ranked modal coefficients",
            endianness: "little",
        },
    )?;
    Ok(())
}

// ---------------------------------------------------------------------

#[derive(Serialize)]
struct SimulateReport {
    validation: modalpde::models::ValidationReport,
    max_energy_residual: f64,
    final_energy: f64,
    final_phase_norm: f64,
    blowup: bool,
    blowup_time: Option<f64>,
    boussinesq_max_residual: Option<f64>,
    ball_max_residual: Option<f64>,
}

pub fn cmd_simulate(ctx: &Ctx) -> Result<(), CmdError> {
    let model = build_model(ctx.config)?;
    let state = initial_state(&model, ctx.config, ctx.seed)?;
    let step = ctx.config.step_config().map_err(CmdError::Validation)?;
    let stride = ctx.config.integrator.stride;
    let traj = run_trajectory(&model, &state, &step, ctx.config.integrator.t_final, stride)?;

    let mut out = OutputDir::create(ctx.out)?;
    energy_csv(&mut out, &traj)?;
    write_snapshots(&mut out, &model, &traj, stride)?;

    let boussinesq_max_residual = audit_boussinesq_identity(&traj)
        .ok()
        .map(|r| r.iter().fold(0.0f64, |m, x| m.max(x.abs())));
    let ball_max_residual = ball_identity_audit(&traj)
        .ok()
        .map(|r| r.iter().fold(0.0f64, |m, x| m.max(x.abs())));

    let report = SimulateReport {
        validation: model.report.clone(),
        max_energy_residual: audit_energy(&traj).max_abs,
        final_energy: *traj.energy.last().unwrap(),
        final_phase_norm: model.phase_norm(traj.last_state()),
        blowup: traj.blew_up(),
        blowup_time: traj.blowup_time,
        boussinesq_max_residual,
        ball_max_residual,
    };
    out.write_json("report.json", &report)?;
    out.write_manifest(&ctx.config_hash, ctx.seed, 0.0)?;

    if traj.blew_up() && ctx.fail_on_blowup {
        return Err(CmdError::Blowup { time: traj.blowup_time.unwrap_or(f64::NAN) });
    }
    Ok(())
}

// ---------------------------------------------------------------------

#[derive(Serialize)]
struct EquilibriaReport {
    count: usize,
    attempts: usize,
    failed_starts: usize,
    dedup_tol: f64,
    members: Vec<modalpde::equilibria::EquilibriumSummary>,
    certified_residuals: Vec<f64>,
}

fn enumerate_equilibria(model: &Model, ctx: &Ctx) -> Result<EquilibriumSet, CmdError> {
    let section = &ctx.config.equilibria;
    let mut set = multistart_enumerate(model, section.starts, ctx.seed, section.tol)?;
    if matches!(model.spec.kind, ModelKind::Wave { .. }) {
        for eq in &mut set.members {
            if let Ok((vals, verdict)) = linearized_spectrum(model, eq, 4, section.tol) {
                eq.spectral_margin = vals.first().map(|v| v.abs());
                eq.hyperbolic = verdict;
            }
        }
    }
    Ok(set)
}

pub fn cmd_equilibria(ctx: &Ctx) -> Result<(), CmdError> {
    let model = build_model(ctx.config)?;
    let set = enumerate_equilibria(&model, ctx)?;
    let summaries = summarize(&model, &set);
    let certified: Vec<f64> = set
        .members
        .iter()
        .map(|eq| certify_residual(&model, &eq.w))
        .collect::<Result<_, _>>()?;

    let mut out = OutputDir::create(ctx.out)?;
    let rows: Vec<Vec<f64>> = summaries
        .iter()
        .zip(&certified)
        .map(|(s, c)| {
            vec![
                s.amplitude,
                s.h1_norm,
                s.residual,
                *c,
                s.spectral_margin.unwrap_or(f64::NAN),
                match s.hyperbolic {
                    Some(true) => 1.0,
                    Some(false) => 0.0,
                    None => -1.0,
                },
            ]
        })
        .collect();
    out.write_csv(
        "equilibria.csv",
        "amplitude,h1_norm,residual,certified_residual,spectral_margin,hyperbolic",
        &rows,
    )?;
    out.write_json(
        "report.json",
        &EquilibriaReport {
            count: set.len(),
            attempts: set.attempts,
            failed_starts: set.failed_starts,
            dedup_tol: set.dedup_tol,
            members: summaries,
            certified_residuals: certified,
        },
    )?;
    out.write_manifest(&ctx.config_hash, ctx.seed, 0.0)?;
    Ok(())
}

// ---------------------------------------------------------------------

#[derive(Serialize)]
struct DecayReport {
    converged: bool,
    hit_time: Option<f64>,
    /// "zero equilibrium" or the index of the limit in the enumerated set.
    limit: String,
    limit_h1_norm: f64,
    envelope_c: f64,
    envelope_t: f64,
    violations: usize,
    exponential_regime: bool,
    fitted_rate: Option<f64>,
    modal_oracle_rate: Option<f64>,
    q_is_linear: bool,
}

pub fn cmd_decay(ctx: &Ctx) -> Result<(), CmdError> {
    let model = build_model(ctx.config)?;
    if !model.report.gradient_system {
        return Err(CmdError::Validation("decay analysis needs a gradient configuration".into()));
    }
    let damping = model
        .damping()
        .ok_or_else(|| CmdError::Validation("decay analysis needs a damping law".into()))?
        .clone();
    let state = initial_state(&model, ctx.config, ctx.seed)?;
    let step = ctx.config.step_config().map_err(CmdError::Validation)?;
    let traj = run_trajectory(
        &model,
        &state,
        &step,
        ctx.config.integrator.t_final,
        ctx.config.integrator.stride,
    )?;
    if traj.blew_up() && ctx.fail_on_blowup {
        return Err(CmdError::Blowup { time: traj.blowup_time.unwrap_or(f64::NAN) });
    }

    let set = enumerate_equilibria(&model, ctx)?;
    let d = &ctx.config.decay;
    let conv = converge_trajectory(&model, &traj, &set, d.tol)?;

    // distance to the limit equilibrium, per the rate theorem
    let limit_idx = conv.limit_index.unwrap_or(0);
    let limit_state = State {
        u: set.members[limit_idx].w.clone(),
        v: model.basis().zero_field(),
    };
    let distances: Vec<f64> =
        traj.states.iter().map(|s| model.phase_dist(s, &limit_state)).collect();

    let law = build_k0(&damping, d.k0_samples)?;
    let q = build_q(&law, d.c1, d.c2, d.c3)?.tabulated(1.25, 2000);
    let sigma = solve_sigma_ode(|s| q.eval(s), 1.0, d.sigma_t, d.sigma_dt)?;
    let envelope = fit_envelope(&traj.times, &distances, &sigma, d.burn_in_frac)?;

    let fitted_rate = exponential_rate_fit(&traj.times, &distances, d.burn_in_frac);
    let modal_oracle_rate = if is_linear_wave(&model) {
        let g1 = damping.linear_coefficient();
        let active: Vec<usize> = (0..model.basis().total_modes())
            .filter(|&k| state.u.coeffs[k].abs() + state.v.coeffs[k].abs() > 0.0)
            .collect();
        active
            .iter()
            .map(|&k| modal_decay_rate(g1, model.basis().eigenvalues()[k]))
            .fold(None, |m: Option<f64>, r| Some(m.map_or(r, |x| x.min(r))))
    } else {
        None
    };

    let mut out = OutputDir::create(ctx.out)?;
    let rows: Vec<Vec<f64>> = traj
        .times
        .iter()
        .zip(&distances)
        .map(|(t, dist)| {
            let env = envelope.c * sigma.eval((t / envelope.t_scale).floor());
            vec![*t, *dist, env]
        })
        .collect();
    out.write_csv("decay.csv", "t,distance,envelope", &rows)?;

    let limit_h1 = model.basis().sobolev_norm(&set.members[limit_idx].w, 1.0);
    out.write_json(
        "report.json",
        &DecayReport {
            converged: conv.converged,
            hit_time: conv.hit_time,
            limit: if limit_h1 <= set.dedup_tol {
                "zero equilibrium".into()
            } else {
                format!("equilibrium #{limit_idx}")
            },
            limit_h1_norm: limit_h1,
            envelope_c: envelope.c,
            envelope_t: envelope.t_scale,
            violations: envelope.violations,
            exponential_regime: law.exponential,
            fitted_rate,
            modal_oracle_rate,
            q_is_linear: law.exponential,
        },
    )?;
    out.write_manifest(&ctx.config_hash, ctx.seed, 0.0)?;
    Ok(())
}

// ---------------------------------------------------------------------

#[derive(Serialize)]
struct PairFitRow {
    pair: usize,
    b0: f64,
    omega: f64,
    c_bar: f64,
    max_relative_residual: f64,
    degenerate: bool,
}

#[derive(Serialize)]
struct QuasistabReport {
    fits: Vec<PairFitRow>,
    omega_min: f64,
    omega_max: f64,
    c_bar_max: f64,
    linear_oracle_omega: Option<f64>,
    seminorm_rank: usize,
    seminorm_eps: f64,
    stabilizability: modalpde::quasistab::StabilizabilityReport,
    dissipativity_integral: modalpde::quasistab::DissipativityIntegral,
    single_decay: Option<modalpde::quasistab::SingleDecayReport>,
    dim_bound: Option<modalpde::attractor::DimBoundReport>,
}

pub fn cmd_quasistab(ctx: &Ctx) -> Result<(), CmdError> {
    let model = build_model(ctx.config)?;
    let step = ctx.config.step_config().map_err(CmdError::Validation)?;
    let q = &ctx.config.quasistab;
    let seminorm = SeminormSpec { rank: q.seminorm_rank, eps: q.seminorm_eps };
    let base = initial_state(&model, ctx.config, ctx.seed)?;
    let t_final = ctx.config.integrator.t_final;
    let stride = ctx.config.integrator.stride;

    let mut fits = Vec::new();
    let mut first_pair = None;
    let mut mu_over_norm = 0.0f64;
    for i in 0..q.pairs.max(1) {
        let rank = 1 + (i % model.basis().total_modes().saturating_sub(1).max(1));
        let scale = 1.0 + 0.5 * (i / 4) as f64;
        let pert = perturbed_state(&model, &base, rank, q.perturbation * scale);
        let pair = evolve_pair(&model, &base, &pert, &step, t_final, stride, seminorm)?;
        for (z, mu) in pair.z_norms.iter().zip(&pair.mu_values) {
            if *z > 0.0 {
                mu_over_norm = mu_over_norm.max(mu / z);
            }
        }
        let fit = fit_8_4_2(&pair);
        fits.push(PairFitRow {
            pair: i,
            b0: fit.b0,
            omega: fit.omega,
            c_bar: fit.c_bar,
            max_relative_residual: fit.max_relative_residual,
            degenerate: fit.degenerate,
        });
        if first_pair.is_none() {
            first_pair = Some((pair, fit));
        }
    }
    let (pair0, fit0) = first_pair.expect("at least one pair");

    let stab = stabilizability_audit(&model, &pair0, q.window.min(t_final))?;
    let base_traj = run_trajectory(&model, &base, &step, t_final, stride)?;
    let dissip = dissipativity_integral(&base_traj);
    let single_decay = single_decay_audit(&base_traj, q.window.min(t_final)).ok();
    let dim_bound = dim_bound_from_fit(&fit0, mu_over_norm);

    let linear_oracle_omega = if is_linear_wave(&model) {
        let g1 = model.damping().map(|d| d.linear_coefficient()).unwrap_or(0.0);
        Some(modal_decay_rate(g1, model.basis().eigenvalues()[0]))
    } else {
        None
    };

    let omega_min = fits.iter().filter(|f| !f.degenerate).map(|f| f.omega).fold(f64::INFINITY, f64::min);
    let omega_max = fits.iter().filter(|f| !f.degenerate).map(|f| f.omega).fold(0.0f64, f64::max);
    let c_bar_max = fits.iter().map(|f| f.c_bar).fold(0.0f64, f64::max);

    let mut out = OutputDir::create(ctx.out)?;
    let rows: Vec<Vec<f64>> = fits
        .iter()
        .map(|f| {
            vec![
                f.pair as f64,
                f.b0,
                f.omega,
                f.c_bar,
                f.max_relative_residual,
                if f.degenerate { 1.0 } else { 0.0 },
            ]
        })
        .collect();
    out.write_csv("quasistab.csv", "pair,b0,omega,c_bar,max_relative_residual,degenerate", &rows)?;
    out.write_json(
        "report.json",
        &QuasistabReport {
            fits,
            omega_min,
            omega_max,
            c_bar_max,
            linear_oracle_omega,
            seminorm_rank: seminorm.rank,
            seminorm_eps: seminorm.eps,
            stabilizability: stab,
            dissipativity_integral: dissip,
            single_decay,
            dim_bound,
        },
    )?;
    out.write_manifest(&ctx.config_hash, ctx.seed, 0.0)?;
    Ok(())
}

// ---------------------------------------------------------------------

#[derive(Serialize)]
struct DimensionReport {
    source: String,
    points: usize,
    dropped_members: Option<usize>,
    slope: f64,
    slope_halfwidth: f64,
    eps: Vec<f64>,
    counts: Vec<usize>,
    used: Vec<bool>,
}

pub fn cmd_dimension(ctx: &Ctx) -> Result<(), CmdError> {
    let d = &ctx.config.dimension;
    let mut dropped = None;
    let points: Vec<Vec<f64>> = match d.source.as_str() {
        "ensemble" => {
            let model = build_model(ctx.config)?;
            let mut cfg = SampleConfig::new(
                d.ensemble,
                d.burn_in,
                ctx.config.integrator.t_final,
                ctx.seed,
            );
            cfg.stride = ctx.config.integrator.stride;
            cfg.radius = d.radius;
            cfg.projection_dim = d.projection_dim;
            cfg.step = ctx.config.step_config().map_err(CmdError::Validation)?;
            let s = sample(&model, &cfg)?;
            dropped = Some(s.dropped_members);
            s.points
        }
        "segment" => segment_points(d.points, d.dim, ctx.seed),
        "cantor" => cantor_points(d.depth),
        "file" => {
            let path = d
                .path
                .as_ref()
                .ok_or_else(|| CmdError::Validation("dimension.source = \"file\" needs a path".into()))?;
            let text = std::fs::read_to_string(path)
                .map_err(|e| CmdError::Validation(format!("cannot read {path}: {e}")))?;
            let mut pts = Vec::new();
            for line in text.lines() {
                let line = line.trim();
                if line.is_empty() {
                    continue;
                }
                let row: Result<Vec<f64>, _> =
                    line.split(',').map(|c| c.trim().parse::<f64>()).collect();
                match row {
                    Ok(r) => pts.push(r),
                    Err(_) => continue, // header line
                }
            }
            pts
        }
        other => return Err(CmdError::Validation(format!("unknown dimension source '{other}'"))),
    };

    let est = box_counting(&points, d.rungs)?;
    let mut out = OutputDir::create(ctx.out)?;
    let rows: Vec<Vec<f64>> = est
        .eps
        .iter()
        .zip(&est.counts)
        .zip(&est.used)
        .map(|((e, c), u)| vec![*e, *c as f64, if *u { 1.0 } else { 0.0 }])
        .collect();
    out.write_csv("dimension.csv", "eps,count,used", &rows)?;
    out.write_json(
        "report.json",
        &DimensionReport {
            source: d.source.clone(),
            points: points.len(),
            dropped_members: dropped,
            slope: est.slope,
            slope_halfwidth: est.slope_halfwidth,
            eps: est.eps.clone(),
            counts: est.counts.clone(),
            used: est.used.clone(),
        },
    )?;
    out.write_manifest(&ctx.config_hash, ctx.seed, 0.0)?;
    Ok(())
}

// ---------------------------------------------------------------------

#[derive(Serialize)]
struct RatioEntry {
    coarse: f64,
    fine: f64,
    ratio: f64,
}

#[derive(Serialize)]
struct AuditReport {
    dt: f64,
    energy: RatioEntry,
    boussinesq: Option<RatioEntry>,
    ball: Option<RatioEntry>,
}

fn max_abs(xs: &[f64]) -> f64 {
    xs.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Runs the configured trajectory at dt and dt/2 and reports the
/// residual halving ratios of every applicable identity.
pub fn cmd_audit(ctx: &Ctx) -> Result<(), CmdError> {
    let model = build_model(ctx.config)?;
    let state = initial_state(&model, ctx.config, ctx.seed)?;
    let step = ctx.config.step_config().map_err(CmdError::Validation)?;
    let t_final = ctx.config.integrator.t_final;
    let stride = ctx.config.integrator.stride;

    let coarse = run_trajectory(&model, &state, &step, t_final, stride)?;
    let mut half = step;
    half.dt *= 0.5;
    let fine = run_trajectory(&model, &state, &half, t_final, stride * 2)?;
    if (coarse.blew_up() || fine.blew_up()) && ctx.fail_on_blowup {
        return Err(CmdError::Blowup {
            time: coarse.blowup_time.or(fine.blowup_time).unwrap_or(f64::NAN),
        });
    }

    let entry = |c: f64, f: f64| RatioEntry { coarse: c, fine: f, ratio: if f > 0.0 { c / f } else { f64::NAN } };
    let energy = entry(audit_energy(&coarse).max_abs, audit_energy(&fine).max_abs);
    let boussinesq = match (audit_boussinesq_identity(&coarse), audit_boussinesq_identity(&fine)) {
        (Ok(a), Ok(b)) => Some(entry(max_abs(&a), max_abs(&b))),
        _ => None,
    };
    let ball = match (ball_identity_audit(&coarse), ball_identity_audit(&fine)) {
        (Ok(a), Ok(b)) => Some(entry(max_abs(&a), max_abs(&b))),
        _ => None,
    };

    let mut out = OutputDir::create(ctx.out)?;
    out.write_json("audit.json", &AuditReport { dt: step.dt, energy, boussinesq, ball })?;
    out.write_manifest(&ctx.config_hash, ctx.seed, 0.0)?;
    Ok(())
}
