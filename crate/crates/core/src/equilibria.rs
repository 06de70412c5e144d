//! Stationary states: damped Newton solves, multistart enumeration with
//! deduplication, and hyperbolicity of the linearised operator.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::models::{Model, ModelKind, State};
use crate::spectral::{GridField, ModalField};

/// A converged stationary displacement with its certification data.
#[derive(Debug, Clone)]
pub struct Equilibrium {
    pub w: ModalField,
    /// Norm of the stationary residual at convergence.
    pub residual: f64,
    /// Smallest |eigenvalue| of the linearisation, when computed.
    pub spectral_margin: Option<f64>,
    /// `Some(true/false)` when the margin is decisive, `None` when it is
    /// below the truncation trust level.
    pub hyperbolic: Option<bool>,
}

/// Deduplicated set of equilibria with multistart metadata.
#[derive(Debug, Clone)]
pub struct EquilibriumSet {
    pub members: Vec<Equilibrium>,
    pub attempts: usize,
    pub failed_starts: usize,
    pub seed: u64,
    pub dedup_tol: f64,
}

impl EquilibriumSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Summary row for reports.
#[derive(Debug, Clone, Serialize)]
pub struct EquilibriumSummary {
    pub amplitude: f64,
    pub h1_norm: f64,
    pub residual: f64,
    pub spectral_margin: Option<f64>,
    pub hyperbolic: Option<bool>,
}

pub fn summarize(model: &Model, set: &EquilibriumSet) -> Vec<EquilibriumSummary> {
    set.members
        .iter()
        .map(|eq| EquilibriumSummary {
            amplitude: amplitude(model, &eq.w),
            h1_norm: model.basis().sobolev_norm(&eq.w, 1.0),
            residual: eq.residual,
            spectral_margin: eq.spectral_margin,
            hyperbolic: eq.hyperbolic,
        })
        .collect()
}

/// Sup norm of the displacement on a dense evaluation lattice (the
/// quadrature grid can miss the peak at very low mode counts).
pub fn amplitude(model: &Model, w: &ModalField) -> f64 {
    let basis = model.basis();
    let lx = basis.domain.lengths[0];
    let two_d = basis.domain.dimension == 2;
    let ly = if two_d { basis.domain.lengths[1] } else { 1.0 };
    let nx = 4 * basis.domain.modes[0] + 1;
    let ny = if two_d { 4 * basis.domain.modes[1] + 1 } else { 1 };
    let mut sup: f64 = 0.0;
    for i in 1..=nx {
        let x = i as f64 * lx / (nx + 1) as f64;
        for j in 1..=ny {
            let y = j as f64 * ly / (ny + 1) as f64;
            sup = sup.max(basis.eval_at(w, x, y).abs());
        }
    }
    sup
}

/// Damped Newton on the stationary residual with a forward-difference
/// Jacobian and halving line search.
pub fn newton_solve(
    model: &Model,
    guess: &ModalField,
    tol: f64,
    max_iters: usize,
) -> Result<Equilibrium> {
    let n = model.basis().total_modes();
    if guess.len() != n {
        return Err(Error::Shape { expected: n, got: guess.len() });
    }
    let mut w = guess.clone();
    let mut r = model.stationary_residual(&w)?;
    let mut rnorm = r.norm();

    for _ in 0..max_iters {
        if rnorm <= tol {
            return Ok(Equilibrium { w, residual: rnorm, spectral_margin: None, hyperbolic: None });
        }
        let mut jac = DMatrix::<f64>::zeros(n, n);
        let fd = f64::EPSILON.sqrt();
        for j in 0..n {
            let h = fd * (1.0 + w.coeffs[j].abs());
            let mut wp = w.clone();
            wp.coeffs[j] += h;
            let rp = model.stationary_residual(&wp)?;
            for i in 0..n {
                jac[(i, j)] = (rp.coeffs[i] - r.coeffs[i]) / h;
            }
        }
        let rhs = DVector::from_column_slice(&r.coeffs);
        let delta = nalgebra::linalg::LU::new(jac)
            .solve(&rhs)
            .ok_or(Error::NewtonFailed { residual: rnorm, iters: max_iters })?;

        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..12 {
            let mut cand = w.clone();
            for k in 0..n {
                cand.coeffs[k] -= step * delta[k];
            }
            if let Ok(rc) = model.stationary_residual(&cand) {
                let rn = rc.norm();
                if rn.is_finite() && rn < rnorm {
                    w = cand;
                    r = rc;
                    rnorm = rn;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            return Err(Error::NewtonFailed { residual: rnorm, iters: max_iters });
        }
    }
    if rnorm <= tol {
        Ok(Equilibrium { w, residual: rnorm, spectral_margin: None, hyperbolic: None })
    } else {
        Err(Error::NewtonFailed { residual: rnorm, iters: max_iters })
    }
}

/// Recomputes the stationary residual of `w` on a model rebuilt with a
/// doubled dealiasing grid; an independent certification of convergence.
pub fn certify_residual(model: &Model, w: &ModalField) -> Result<f64> {
    let mut spec = model.spec.clone();
    spec.domain.grid_factor *= 2.0;
    let padded = Model::new(spec)?;
    Ok(padded.stationary_residual(w)?.norm())
}

/// Random plus structured multistart enumeration; converged solutions
/// are deduplicated at H1 distance `dedup_tol` (1e-6 by default usage).
pub fn multistart_enumerate(
    model: &Model,
    starts: usize,
    seed: u64,
    tol: f64,
) -> Result<EquilibriumSet> {
    let dedup_tol = 1e-6;
    let basis = model.basis();
    let n = basis.total_modes();

    let mut guesses: Vec<ModalField> = Vec::with_capacity(starts);
    if starts > 0 {
        guesses.push(basis.zero_field());
    }
    // structured starts: +/- single modes at two amplitudes
    let mut k = 0usize;
    'outer: for amp in [1.0, 2.0] {
        for rank in 0..n.min(8) {
            for sgn in [1.0, -1.0] {
                if guesses.len() >= starts || guesses.len() >= 1 + 4 * n.min(8) {
                    break 'outer;
                }
                guesses.push(basis.unit_field(rank).scaled(sgn * amp));
                k += 1;
            }
        }
    }
    let _ = k;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while guesses.len() < starts {
        let f = basis.random_field(&mut rng, 1.0);
        let nrm = basis.sobolev_norm(&f, 1.0);
        let scale = if nrm > 0.0 { 2.0 / nrm } else { 0.0 };
        guesses.push(f.scaled(scale));
    }

    let results: Vec<Option<Equilibrium>> = guesses
        .par_iter()
        .map(|g| newton_solve(model, g, tol, 60).ok())
        .collect();

    let mut members: Vec<Equilibrium> = Vec::new();
    let mut failed = 0usize;
    for res in results {
        match res {
            None => failed += 1,
            Some(eq) => {
                let dup = members.iter().any(|m| {
                    basis.sobolev_norm(&m.w.sub(&eq.w), 1.0) <= dedup_tol
                });
                if !dup {
                    members.push(eq);
                }
            }
        }
    }
    // deterministic ordering: by H1 norm, then leading coefficient
    members.sort_by(|a, b| {
        let na = basis.sobolev_norm(&a.w, 1.0);
        let nb = basis.sobolev_norm(&b.w, 1.0);
        na.partial_cmp(&nb)
            .unwrap()
            .then_with(|| a.w.coeffs[0].partial_cmp(&b.w.coeffs[0]).unwrap())
    });

    Ok(EquilibriumSet { members, attempts: starts, failed_starts: failed, seed, dedup_tol })
}

/// Eigenvalues of the linearised stationary operator at an equilibrium
/// of the wave model (`-Delta - f'(w)` in modal coordinates), sorted by
/// magnitude, together with the hyperbolicity verdict.
///
/// The verdict is `None` (undetermined) when the margin falls below the
/// truncation trust level of 1e-6.
pub fn linearized_spectrum(
    model: &Model,
    eq: &Equilibrium,
    count: usize,
    tol: f64,
) -> Result<(Vec<f64>, Option<bool>)> {
    if !matches!(model.spec.kind, ModelKind::Wave { .. }) {
        return Err(Error::WrongModel("linearised spectrum is defined for the wave model".into()));
    }
    let basis = model.basis();
    let n = basis.total_modes();
    let fp = model
        .source_derivative_grid(&eq.w)
        .expect("wave model has a pointwise source");

    // A_jk = lambda_j delta_jk - <f'(w) e_j, e_k>
    let mut a = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let ej = basis.to_grid(&basis.unit_field(j));
        let weighted = GridField {
            values: ej.values.iter().zip(&fp.values).map(|(e, f)| e * f).collect(),
            shape: ej.shape,
        };
        let col = basis.analyze_sine(&weighted);
        for i in 0..n {
            a[(i, j)] = -col.coeffs[i];
        }
        a[(j, j)] += basis.eigenvalues()[j];
    }
    // symmetrise against quadrature rounding
    let a = (&a + a.transpose()) * 0.5;
    let eig = a.symmetric_eigen();
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(|x, y| x.abs().partial_cmp(&y.abs()).unwrap());
    vals.truncate(count.max(1));

    let margin = vals.first().map(|v| v.abs()).unwrap_or(0.0);
    let verdict = if margin > 1e-6_f64.max(10.0 * tol) {
        Some(true)
    } else if margin <= 10.0 * tol {
        Some(false)
    } else {
        None
    };
    Ok((vals, verdict))
}

/// Phase-space distance from a state to the set `{(w, 0)}`.
pub fn distance_to_set(model: &Model, state: &State, set: &EquilibriumSet) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Validation("distance to an empty equilibrium set".into()));
    }
    Ok(set
        .members
        .iter()
        .map(|eq| {
            let eq_state = State { u: eq.w.clone(), v: model.basis().zero_field() };
            model.phase_dist(state, &eq_state)
        })
        .fold(f64::INFINITY, f64::min))
}

/// A-priori H1 bound on wave equilibria from the dissipativity of f:
/// `|grad w|^2 <= 2 |Omega| sup_s (f(s) s - lambda_1/2 s^2)`.
pub fn wave_equilibrium_h1_bound(model: &Model) -> Option<f64> {
    let source = match &model.spec.kind {
        ModelKind::Wave { source, .. } => *source,
        _ => return None,
    };
    let lam1 = model.basis().eigenvalues()[0];
    let mut sup: f64 = 0.0;
    for i in 0..=40000 {
        let s = -200.0 + i as f64 * 0.01;
        sup = sup.max(source.f(s) * s - 0.5 * lam1 * s * s);
    }
    if !sup.is_finite() {
        return None;
    }
    let area = model.spec.domain.lengths[0]
        * if model.spec.domain.dimension == 2 { model.spec.domain.lengths[1] } else { 1.0 };
    Some((2.0 * sup * area).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{DampingLaw, ModelSpec, WaveSource};
    use crate::spectral::DomainSpec;
    use approx::assert_relative_eq;

    fn pitchfork_model(nx: usize) -> Model {
        Model::new(ModelSpec {
            domain: DomainSpec::interval(std::f64::consts::PI, nx),
            kind: ModelKind::Wave {
                damping: DampingLaw::linear(1.0),
                source: WaveSource::pitchfork(2.0),
            },
        })
        .unwrap()
    }

    #[test]
    fn trivial_kernel_free_solve() {
        let model = Model::new(ModelSpec {
            domain: DomainSpec::interval(std::f64::consts::PI, 8),
            kind: ModelKind::Wave { damping: DampingLaw::linear(1.0), source: WaveSource::zero() },
        })
        .unwrap();
        let eq = newton_solve(&model, &model.basis().zero_field(), 1e-12, 30).unwrap();
        assert_eq!(eq.w.norm(), 0.0);
    }

    #[test]
    fn pitchfork_single_mode_amplitude() {
        // single-mode Galerkin: lambda_1 a = mu a - (3/4) a^3 in the
        // sin-amplitude normalisation, so the amplitude is sqrt(4/3)
        let model = pitchfork_model(1);
        let guess = model.basis().unit_field(0).scaled(1.0);
        let eq = newton_solve(&model, &guess, 1e-12, 40).unwrap();
        let amp = amplitude(&model, &eq.w);
        assert_relative_eq!(amp, (4.0f64 / 3.0).sqrt(), max_relative = 1e-10);
    }

    #[test]
    fn pitchfork_resolved_amplitude_and_certification() {
        let model = pitchfork_model(32);
        let guess = model.basis().unit_field(0).scaled(1.0);
        let eq = newton_solve(&model, &guess, 1e-10, 60).unwrap();
        let amp = amplitude(&model, &eq.w);
        let single_mode = (4.0f64 / 3.0).sqrt();
        assert!(
            (amp - single_mode).abs() <= 0.02 * single_mode,
            "amplitude {amp} vs single-mode {single_mode}"
        );
        assert!(eq.residual <= 1e-10);
        // independent recomputation at doubled padding
        let certified = certify_residual(&model, &eq.w).unwrap();
        assert!(certified <= 1e-10, "padded residual {certified}");
    }

    #[test]
    fn defocusing_has_only_zero() {
        let model = Model::new(ModelSpec {
            domain: DomainSpec::interval(std::f64::consts::PI, 16),
            kind: ModelKind::Wave {
                damping: DampingLaw::linear(1.0),
                source: WaveSource::defocusing(3.0),
            },
        })
        .unwrap();
        let set = multistart_enumerate(&model, 40, 7, 1e-11).unwrap();
        assert_eq!(set.len(), 1, "defocusing cubic admits only w = 0");
        assert!(set.members[0].w.norm() <= 1e-9);
    }

    #[test]
    fn pitchfork_finds_three() {
        let model = pitchfork_model(16);
        let set = multistart_enumerate(&model, 48, 11, 1e-11).unwrap();
        assert_eq!(set.len(), 3, "expected {{0, +w*, -w*}}");
        // closed under sign flip
        for eq in &set.members {
            let neg = eq.w.scaled(-1.0);
            let found = set.members.iter().any(|m| {
                model.basis().sobolev_norm(&m.w.sub(&neg), 1.0) <= 1e-6
            });
            assert!(found, "set not symmetric under w -> -w");
        }
        // a-priori H1 bound holds for every member
        let bound = wave_equilibrium_h1_bound(&model).unwrap();
        for eq in &set.members {
            let h1 = model.basis().sobolev_norm(&eq.w, 1.0);
            assert!(h1 <= bound, "H1 norm {h1} above a-priori bound {bound}");
        }
    }

    #[test]
    fn zero_starts_empty_set() {
        let model = pitchfork_model(8);
        let set = multistart_enumerate(&model, 0, 1, 1e-10).unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn linearized_spectrum_at_origin() {
        // f'(0) = mu: eigenvalues are lambda_k - mu exactly
        let model = pitchfork_model(8);
        let zero = Equilibrium {
            w: model.basis().zero_field(),
            residual: 0.0,
            spectral_margin: None,
            hyperbolic: None,
        };
        let (vals, verdict) = linearized_spectrum(&model, &zero, 8, 1e-12).unwrap();
        let mut expect: Vec<f64> =
            model.basis().eigenvalues().iter().map(|l| l - 2.0).collect();
        expect.sort_by(|a, b| a.abs().partial_cmp(&b.abs()).unwrap());
        for (v, e) in vals.iter().zip(&expect) {
            assert_relative_eq!(v, e, epsilon = 1e-9);
        }
        assert_eq!(verdict, Some(true)); // margin |lambda_2 - 2| = 2

        // mu = lambda_1 puts a kernel at the origin
        let model = Model::new(ModelSpec {
            domain: DomainSpec::interval(std::f64::consts::PI, 8),
            kind: ModelKind::Wave {
                damping: DampingLaw::linear(1.0),
                source: WaveSource::pitchfork(1.0),
            },
        })
        .unwrap();
        let zero = Equilibrium {
            w: model.basis().zero_field(),
            residual: 0.0,
            spectral_margin: None,
            hyperbolic: None,
        };
        let (vals, verdict) = linearized_spectrum(&model, &zero, 4, 1e-12).unwrap();
        assert!(vals[0].abs() <= 1e-9);
        assert_eq!(verdict, Some(false));
    }

    #[test]
    fn nontrivial_margin_matches_dense_oracle() {
        // at w* of the pitchfork, the smallest eigenvalue of
        // -Delta - f'(w*) restricted to one mode: analytic check via the
        // single-mode truncation: f'(w*) = mu - 3 w*^2 and the mode-1
        // Galerkin eigenvalue is lambda_1 - mu + (9/4) a^2 <f e1^4>...
        // here we simply cross-check the dense eigensolver against a
        // finite-difference quadratic form evaluation.
        let model = pitchfork_model(12);
        let guess = model.basis().unit_field(0).scaled(1.0);
        let eq = newton_solve(&model, &guess, 1e-12, 40).unwrap();
        let (vals, verdict) = linearized_spectrum(&model, &eq, 3, 1e-12).unwrap();
        assert_eq!(verdict, Some(true));
        // Rayleigh quotient of the first eigenvector direction must not
        // be smaller than the reported minimum eigenvalue: probe with
        // random directions
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let basis = model.basis();
        let fp = model.source_derivative_grid(&eq.w).unwrap();
        for _ in 0..20 {
            let d = basis.random_field(&mut rng, 0.0);
            let dg = basis.to_grid(&d);
            let quad: f64 = basis.sobolev_norm(&d, 1.0).powi(2)
                - basis.quad_weight()
                    * dg.values.iter().zip(&fp.values).map(|(x, f)| f * x * x).sum::<f64>();
            let rq = quad / d.dot(&d);
            assert!(rq >= vals[0] - 1e-8, "Rayleigh quotient {rq} below minimum {}", vals[0]);
        }
    }

    #[test]
    fn distance_to_set_cases() {
        let model = pitchfork_model(12);
        let set = multistart_enumerate(&model, 32, 5, 1e-11).unwrap();
        assert_eq!(set.len(), 3);
        // at an equilibrium the distance vanishes
        let w = set.members.last().unwrap().w.clone();
        let state = State { u: w.clone(), v: model.basis().zero_field() };
        assert!(distance_to_set(&model, &state, &set).unwrap() <= 1e-12);
        // adding velocity gives exactly |v| when the w-part matches
        let v = model.basis().unit_field(1).scaled(0.3);
        let state = State { u: w, v: v.clone() };
        let d = distance_to_set(&model, &state, &set).unwrap();
        assert_relative_eq!(d, 0.3, max_relative = 1e-6);
        // distance to {0} is the phase norm itself
        let only_zero = EquilibriumSet {
            members: vec![Equilibrium {
                w: model.basis().zero_field(),
                residual: 0.0,
                spectral_margin: None,
                hyperbolic: None,
            }],
            attempts: 1,
            failed_starts: 0,
            seed: 0,
            dedup_tol: 1e-6,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let state = State {
            u: model.basis().random_field(&mut rng, 1.0),
            v: model.basis().random_field(&mut rng, 1.0),
        };
        let d = distance_to_set(&model, &state, &only_zero).unwrap();
        assert_relative_eq!(d, model.phase_norm(&state), max_relative = 1e-12);

        let empty = EquilibriumSet {
            members: vec![],
            attempts: 0,
            failed_starts: 0,
            seed: 0,
            dedup_tol: 1e-6,
        };
        assert!(distance_to_set(&model, &state, &empty).is_err());
    }
}
