//! The four PDE models in modal coordinates: damped wave, von Karman
//! plate, Kirchhoff-Boussinesq plate and the Kirchhoff wave model with
//! nonlocal strong damping.
//!
//! Nonlinear forces are realised as exact gradients of the discrete
//! (quadrature-evaluated) potentials. With that convention the
//! semi-discrete balance `dE/dt = -damping_power + work_rate` holds to
//! machine precision and time integration is the only source of audit
//! residual.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::spectral::{Basis, DomainSpec, GridField, ModalField};

// ---------------------------------------------------------------------
// Laws
// ---------------------------------------------------------------------

/// Damping coefficient profile a(x) >= 0, materialised on the grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum CoeffProfile {
    Constant(f64),
    /// `base + amp sin(pi x/Lx) [sin(pi y/Ly)]`; nonnegative when
    /// `base >= 0` and `base + amp >= 0`.
    SineBump { base: f64, amp: f64 },
}

impl CoeffProfile {
    fn min_value(&self) -> f64 {
        match self {
            CoeffProfile::Constant(c) => *c,
            CoeffProfile::SineBump { base, amp } => base.min(base + amp),
        }
    }
}

/// Pointwise damping law `g(s) = g1 s + g2 |s|^(m-1) s` with spatial
/// coefficient a(x).
///
/// The classical form has g2 = 1; g2 = 0 gives purely linear damping.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DampingLaw {
    pub g1: f64,
    pub g2: f64,
    pub exponent_m: f64,
    pub coeff: CoeffProfile,
}

impl DampingLaw {
    pub fn linear(g1: f64) -> Self {
        Self { g1, g2: 0.0, exponent_m: 1.0, coeff: CoeffProfile::Constant(1.0) }
    }

    pub fn power(g1: f64, m: f64) -> Self {
        Self { g1, g2: 1.0, exponent_m: m, coeff: CoeffProfile::Constant(1.0) }
    }

    pub fn none() -> Self {
        Self { g1: 0.0, g2: 0.0, exponent_m: 1.0, coeff: CoeffProfile::Constant(1.0) }
    }

    pub fn g(&self, s: f64) -> f64 {
        self.g1 * s + self.g2 * s.abs().powf(self.exponent_m - 1.0) * s
    }

    /// Derivative at the origin; decides whether decay rates are
    /// exponential.
    pub fn g_prime_zero(&self) -> f64 {
        if self.exponent_m == 1.0 {
            self.g1 + self.g2
        } else {
            self.g1
        }
    }

    pub fn is_linear(&self) -> bool {
        self.g2 == 0.0 || self.exponent_m == 1.0
    }

    /// Total linear coefficient when the law is linear.
    pub fn linear_coefficient(&self) -> f64 {
        self.g1 + if self.exponent_m == 1.0 { self.g2 } else { 0.0 }
    }

    pub fn is_zero(&self) -> bool {
        self.g1 == 0.0 && self.g2 == 0.0
    }

    fn validate(&self) -> Result<()> {
        if self.exponent_m < 1.0 {
            return Err(Error::Validation(format!(
                "damping exponent m must be >= 1, got {}",
                self.exponent_m
            )));
        }
        if self.g1 < 0.0 || self.g2 < 0.0 {
            return Err(Error::Validation("damping coefficients must be nonnegative".into()));
        }
        if self.coeff.min_value() < 0.0 {
            return Err(Error::Validation("damping coefficient a(x) must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Wave/Kirchhoff source `f(s) = mu s - kappa |s|^(p-1) s + c s^2`.
///
/// `kappa = 1` is the canonical defocusing example; `kappa = -1, c = 0`
/// is the focusing source used in blow-up runs. The linear term `mu s`
/// shifts stiffness and produces pitchfork equilibria.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WaveSource {
    pub kappa: f64,
    pub p: f64,
    pub c: f64,
    pub mu: f64,
}

impl WaveSource {
    pub fn defocusing(p: f64) -> Self {
        Self { kappa: 1.0, p, c: 0.0, mu: 0.0 }
    }

    pub fn focusing(p: f64) -> Self {
        Self { kappa: -1.0, p, c: 0.0, mu: 0.0 }
    }

    pub fn zero() -> Self {
        Self { kappa: 0.0, p: 1.0, c: 0.0, mu: 0.0 }
    }

    /// Pitchfork nonlinearity `mu s - s^3`.
    pub fn pitchfork(mu: f64) -> Self {
        Self { kappa: 1.0, p: 3.0, c: 0.0, mu }
    }

    pub fn f(&self, s: f64) -> f64 {
        self.mu * s - self.kappa * s.abs().powf(self.p - 1.0) * s + self.c * s * s
    }

    pub fn f_hat(&self, s: f64) -> f64 {
        0.5 * self.mu * s * s - self.kappa * s.abs().powf(self.p + 1.0) / (self.p + 1.0)
            + self.c * s * s * s / 3.0
    }

    pub fn f_prime(&self, s: f64) -> f64 {
        self.mu - self.kappa * self.p * s.abs().powf(self.p - 1.0) + 2.0 * self.c * s
    }

    /// Numerical check of `liminf -f(s)/s > -lambda_1`.
    fn dissipative(&self, lambda1: f64) -> bool {
        [-1e6f64, -1e3, 1e3, 1e6].iter().all(|&s| -self.f(s) / s > -lambda1 + 1e-9)
    }
}

/// Plate load `P(w) = [F0, w] - p` with in-plane stress F0 and
/// transversal force p, both given as mode triples (jx, jy, amplitude).
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct PlateLoad {
    pub f0_modes: Vec<(usize, usize, f64)>,
    pub p_modes: Vec<(usize, usize, f64)>,
}

/// Kirchhoff-Boussinesq source `P(w) = sigma Delta[w^2] - rho |w|^(l-1) w`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KbSource {
    pub sigma: f64,
    pub rho: f64,
    pub ell: f64,
}

impl KbSource {
    pub fn none() -> Self {
        Self { sigma: 0.0, rho: 0.0, ell: 1.0 }
    }
}

/// Positive scalar law `c0 + c1 s^q` for the Kirchhoff stiffness and
/// strong-damping coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalarLaw {
    pub c0: f64,
    pub c1: f64,
    pub q: f64,
}

impl ScalarLaw {
    pub fn constant(c0: f64) -> Self {
        Self { c0, c1: 0.0, q: 1.0 }
    }

    pub fn affine(c0: f64, c1: f64) -> Self {
        Self { c0, c1, q: 1.0 }
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.c0 + self.c1 * s.powf(self.q)
    }

    pub fn antiderivative(&self, s: f64) -> f64 {
        self.c0 * s + self.c1 * s.powf(self.q + 1.0) / (self.q + 1.0)
    }

    fn positive_sampled(&self) -> bool {
        (0..=40).all(|i| self.eval(i as f64 * 2.5) > 0.0)
    }
}

/// Rotational damping for alpha > 0 plates, diagonal form sharing the
/// exponent of the transversal law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RotDamping {
    pub g1: f64,
    pub g2: f64,
}

// ---------------------------------------------------------------------
// Model specification
// ---------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ModelKind {
    Wave {
        damping: DampingLaw,
        source: WaveSource,
    },
    KarmanPlate {
        alpha: f64,
        damping: DampingLaw,
        rotational: Option<RotDamping>,
        load: PlateLoad,
    },
    KirchhoffBoussinesq {
        alpha: f64,
        damping: DampingLaw,
        source: KbSource,
    },
    KirchhoffWave {
        phi: ScalarLaw,
        sigma: ScalarLaw,
        source: WaveSource,
        /// Forcing h as mode triples (jx, jy, amplitude).
        h_modes: Vec<(usize, usize, f64)>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSpec {
    pub domain: DomainSpec,
    pub kind: ModelKind,
}

/// Phase-space point (u, u_t) in modal coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub u: ModalField,
    pub v: ModalField,
}

impl State {
    pub fn zero(basis: &Basis) -> Self {
        Self { u: basis.zero_field(), v: basis.zero_field() }
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }

    pub fn sub(&self, other: &State) -> State {
        State { u: self.u.sub(&other.u), v: self.v.sub(&other.v) }
    }
}

/// Well-posedness and long-time-theory flags for a configuration.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub wellposed_subcritical: bool,
    pub wellposed_supercritical: bool,
    pub attractor_ready: bool,
    pub global_guaranteed: bool,
    pub gradient_system: bool,
    pub notes: Vec<String>,
}

// ---------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------

/// Validates a specification; hard violations (exponent ranges, the
/// compatibility growth condition) are errors, the rest become flags.
pub fn validate(spec: &ModelSpec) -> Result<ValidationReport> {
    spec.domain.validate()?;
    let lambda1 = {
        let pi = std::f64::consts::PI;
        let lx = spec.domain.lengths[0];
        let mut l = (pi / lx) * (pi / lx);
        if spec.domain.dimension == 2 {
            let ly = spec.domain.lengths[1];
            l += (pi / ly) * (pi / ly);
        }
        l
    };
    let mut notes = Vec::new();

    let check_alpha = |alpha: f64| -> Result<()> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Validation(format!("alpha must lie in [0, 1], got {alpha}")));
        }
        Ok(())
    };
    let check_source = |src: &WaveSource| -> Result<()> {
        if !(1.0..6.0).contains(&src.p) {
            return Err(Error::Validation(format!(
                "source exponent p must lie in [1, 6), got {}",
                src.p
            )));
        }
        Ok(())
    };

    let report = match &spec.kind {
        ModelKind::Wave { damping, source } => {
            damping.validate()?;
            check_source(source)?;
            let m = damping.exponent_m;
            if source.p > 3.0 {
                let bound = 6.0 * m / (m + 1.0);
                if source.p > bound + 1e-12 {
                    return Err(Error::Validation(format!(
                        "supercritical source p = {} violates p <= 6m/(m+1) = {bound}",
                        source.p
                    )));
                }
            }
            let sub = source.p <= 3.0;
            let sup = source.p > 3.0 && source.p <= (6.0 * m / (m + 1.0)).min(5.0);
            let dissip = source.dissipative(lambda1);
            let has_damping = !damping.is_zero();
            let attractor_ready =
                sub && has_damping && m <= 5.0 && damping.coeff.min_value() > 0.0 && dissip;
            if !sub && !sup {
                notes.push("p in (5,6): globality needs extra integrability of the data".into());
            }
            ValidationReport {
                wellposed_subcritical: sub,
                wellposed_supercritical: sup,
                attractor_ready,
                global_guaranteed: source.p <= m || dissip,
                gradient_system: true,
                notes,
            }
        }
        ModelKind::KarmanPlate { alpha, damping, rotational, .. } => {
            if spec.domain.dimension != 2 {
                return Err(Error::NeedsTwoDim("von Karman plate"));
            }
            check_alpha(*alpha)?;
            damping.validate()?;
            if let Some(rot) = rotational {
                if rot.g1 < 0.0 || rot.g2 < 0.0 {
                    return Err(Error::Validation(
                        "rotational damping coefficients must be nonnegative".into(),
                    ));
                }
                if *alpha == 0.0 {
                    notes.push("rotational damping is inactive at alpha = 0".into());
                }
            }
            ValidationReport {
                wellposed_subcritical: true,
                wellposed_supercritical: false,
                attractor_ready: !damping.is_zero() && damping.coeff.min_value() > 0.0,
                global_guaranteed: true,
                gradient_system: true,
                notes,
            }
        }
        ModelKind::KirchhoffBoussinesq { alpha, damping, source } => {
            check_alpha(*alpha)?;
            damping.validate()?;
            if source.ell < 1.0 {
                return Err(Error::Validation(format!(
                    "KB exponent l must be >= 1, got {}",
                    source.ell
                )));
            }
            if source.sigma < 0.0 || source.rho < 0.0 {
                return Err(Error::Validation("KB source coefficients must be nonnegative".into()));
            }
            let k = damping.coeff.min_value() * damping.linear_coefficient();
            let absorbing = source.sigma * source.sigma < 0.25 * k * k.min(1.0);
            if source.sigma > 0.0 && !damping.is_linear() {
                notes.push("Boussinesq source with nonlinear damping: long-time theory open".into());
            }
            if source.sigma > 0.0 && !absorbing {
                notes.push("sigma^2 >= k min(1,k)/4: absorbing-set condition fails".into());
            }
            ValidationReport {
                wellposed_subcritical: true,
                wellposed_supercritical: false,
                attractor_ready: (source.sigma == 0.0 || absorbing)
                    && damping.coeff.min_value() > 0.0
                    && !damping.is_zero(),
                global_guaranteed: true,
                gradient_system: source.sigma == 0.0,
                notes,
            }
        }
        ModelKind::KirchhoffWave { phi, sigma, source, .. } => {
            check_source(source)?;
            if !phi.positive_sampled() || !sigma.positive_sampled() {
                return Err(Error::Validation("Kirchhoff laws phi, sigma must be positive".into()));
            }
            if phi.c1 < 0.0 || sigma.c1 < 0.0 || phi.q < 1.0 || sigma.q < 1.0 {
                return Err(Error::Validation(
                    "Kirchhoff laws need c1 >= 0 and exponent q >= 1".into(),
                ));
            }
            let dissip = source.dissipative(lambda1 * phi.c0.min(1.0));
            ValidationReport {
                wellposed_subcritical: source.p <= 3.0,
                wellposed_supercritical: source.p > 3.0,
                attractor_ready: dissip,
                global_guaranteed: dissip,
                gradient_system: true,
                notes,
            }
        }
    };
    Ok(report)
}

// ---------------------------------------------------------------------
// Built model
// ---------------------------------------------------------------------

/// A validated model with its basis and grid-materialised data.
#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    basis: Basis,
    pub report: ValidationReport,
    a_grid: Vec<f64>,
    inf_a: f64,
    /// `1 + alpha lambda_k`, the modal mass for the plates.
    mass: Vec<f64>,
    f0_grid: Option<GridField>,
    p_modal: Option<ModalField>,
    h_modal: Option<ModalField>,
}

impl Model {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        let report = validate(&spec)?;
        let basis = Basis::new(spec.domain.clone())?;
        let (mx, my) = basis.grid_shape();

        let damping = spec_damping(&spec);
        let a_grid: Vec<f64> = match damping.map(|d| &d.coeff) {
            None => vec![1.0; mx * my],
            Some(CoeffProfile::Constant(c)) => vec![*c; mx * my],
            Some(CoeffProfile::SineBump { base, amp }) => {
                let pi = std::f64::consts::PI;
                let lx = basis.domain.lengths[0];
                let mut vals = Vec::with_capacity(mx * my);
                for iy in 0..my {
                    for ix in 0..mx {
                        let sx = (pi * basis.grid_xs()[ix] / lx).sin();
                        let sy = if basis.domain.dimension == 2 {
                            (pi * basis.grid_ys()[iy] / basis.domain.lengths[1]).sin()
                        } else {
                            1.0
                        };
                        vals.push(base + amp * sx * sy);
                    }
                }
                vals
            }
        };
        let inf_a = a_grid.iter().cloned().fold(f64::INFINITY, f64::min);

        let alpha = match &spec.kind {
            ModelKind::KarmanPlate { alpha, .. } | ModelKind::KirchhoffBoussinesq { alpha, .. } => *alpha,
            _ => 0.0,
        };
        let mass = basis.eigenvalues().iter().map(|l| 1.0 + alpha * l).collect();

        let modal_from_triples = |triples: &[(usize, usize, f64)]| -> Result<ModalField> {
            let mut f = basis.zero_field();
            for &(jx, jy, amp) in triples {
                let rank = basis
                    .rank_of_mode(jx, jy)
                    .ok_or_else(|| Error::Validation(format!("mode ({jx},{jy}) outside the basis")))?;
                f.coeffs[rank] += amp;
            }
            Ok(f)
        };

        let (f0_grid, p_modal, h_modal) = match &spec.kind {
            ModelKind::KarmanPlate { load, .. } => {
                let f0_grid = if load.f0_modes.is_empty() {
                    None
                } else {
                    Some(basis.to_grid(&modal_from_triples(&load.f0_modes)?))
                };
                let p_modal = if load.p_modes.is_empty() {
                    None
                } else {
                    Some(modal_from_triples(&load.p_modes)?)
                };
                (f0_grid, p_modal, None)
            }
            ModelKind::KirchhoffWave { h_modes, .. } => {
                let h_modal = if h_modes.is_empty() { None } else { Some(modal_from_triples(h_modes)?) };
                (None, None, h_modal)
            }
            _ => (None, None, None),
        };

        Ok(Self { spec, basis, report, a_grid, inf_a, mass, f0_grid, p_modal, h_modal })
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn damping(&self) -> Option<&DampingLaw> {
        spec_damping(&self.spec)
    }

    pub fn alpha(&self) -> f64 {
        match &self.spec.kind {
            ModelKind::KarmanPlate { alpha, .. } | ModelKind::KirchhoffBoussinesq { alpha, .. } => *alpha,
            _ => 0.0,
        }
    }

    pub fn is_plate(&self) -> bool {
        matches!(
            self.spec.kind,
            ModelKind::KarmanPlate { .. } | ModelKind::KirchhoffBoussinesq { .. }
        )
    }

    /// Infimum of a(x) over the grid.
    pub fn inf_a(&self) -> f64 {
        self.inf_a
    }

    /// Model-dependent phase norm |(u, v)|_H.
    pub fn phase_norm(&self, state: &State) -> f64 {
        let b = &self.basis;
        match &self.spec.kind {
            ModelKind::Wave { .. } | ModelKind::KirchhoffWave { .. } => {
                let a = b.sobolev_norm(&state.u, 1.0);
                let c = b.sobolev_norm(&state.v, 0.0);
                (a * a + c * c).sqrt()
            }
            ModelKind::KarmanPlate { alpha, .. } | ModelKind::KirchhoffBoussinesq { alpha, .. } => {
                let a = b.sobolev_norm(&state.u, 2.0);
                let c = b.sobolev_norm(&state.v, 0.0);
                let r = b.sobolev_norm(&state.v, 1.0);
                (a * a + c * c + alpha * r * r).sqrt()
            }
        }
    }

    pub fn phase_dist(&self, s1: &State, s2: &State) -> f64 {
        self.phase_norm(&s1.sub(s2))
    }

    fn damping_grid_force(&self, v_grid: &GridField, law: &DampingLaw) -> GridField {
        let vals = v_grid
            .values
            .iter()
            .zip(&self.a_grid)
            .map(|(&s, &a)| a * law.g(s))
            .collect();
        GridField { values: vals, shape: v_grid.shape }
    }

    /// Total energy: kinetic + elastic + source potentials.
    pub fn energy(&self, state: &State) -> f64 {
        let b = &self.basis;
        match &self.spec.kind {
            ModelKind::Wave { source, .. } => {
                let kin = 0.5 * b.sobolev_norm(&state.v, 0.0).powi(2);
                let ela = 0.5 * b.sobolev_norm(&state.u, 1.0).powi(2);
                let ug = b.to_grid(&state.u);
                let pot: f64 =
                    ug.values.iter().map(|&s| source.f_hat(s)).sum::<f64>() * b.quad_weight();
                kin + ela - pot
            }
            ModelKind::KarmanPlate { alpha, .. } => {
                let kin = 0.5
                    * (b.sobolev_norm(&state.v, 0.0).powi(2)
                        + alpha * b.sobolev_norm(&state.v, 1.0).powi(2));
                let bend = 0.5 * b.sobolev_norm(&state.u, 2.0).powi(2);
                kin + bend + self.airy_potential(&state.u) + self.load_potential(&state.u)
            }
            ModelKind::KirchhoffBoussinesq { alpha, source, .. } => {
                let kin = 0.5
                    * (b.sobolev_norm(&state.v, 0.0).powi(2)
                        + alpha * b.sobolev_norm(&state.v, 1.0).powi(2));
                let bend = 0.5 * b.sobolev_norm(&state.u, 2.0).powi(2);
                let (gx, gy) = b.gradient_grid(&state.u);
                let ug = b.to_grid(&state.u);
                let w = b.quad_weight();
                let mut quart = 0.0;
                let mut sig = 0.0;
                let mut rho_pot = 0.0;
                for i in 0..ug.values.len() {
                    let g2 = gx.values[i] * gx.values[i] + gy.values[i] * gy.values[i];
                    quart += g2 * g2;
                    sig += ug.values[i] * g2;
                    if source.rho > 0.0 {
                        rho_pot += ug.values[i].abs().powf(source.ell + 1.0);
                    }
                }
                kin + bend
                    + 0.25 * w * quart
                    + source.sigma * w * sig
                    + source.rho / (source.ell + 1.0) * w * rho_pot
            }
            ModelKind::KirchhoffWave { phi, source, .. } => {
                let kin = 0.5 * b.sobolev_norm(&state.v, 0.0).powi(2);
                let s = b.sobolev_norm(&state.u, 1.0).powi(2);
                let stiff = 0.5 * phi.antiderivative(s);
                let ug = b.to_grid(&state.u);
                let pot: f64 =
                    ug.values.iter().map(|&x| source.f_hat(x)).sum::<f64>() * b.quad_weight();
                let forcing = self.h_modal.as_ref().map_or(0.0, |h| h.dot(&state.u));
                // f enters this model with a plus sign, so its
                // antiderivative is added.
                kin + stiff + pot - forcing
            }
        }
    }

    fn airy_potential(&self, u: &ModalField) -> f64 {
        let bracket = vk_bracket(&self.basis, u, u).expect("2-D checked at build");
        bracket
            .coeffs
            .iter()
            .zip(self.basis.eigenvalues())
            .map(|(bk, l)| 0.25 * bk * bk / (l * l))
            .sum()
    }

    fn load_potential(&self, u: &ModalField) -> f64 {
        let mut pot = 0.0;
        if let Some(f0g) = &self.f0_grid {
            let br = vk_bracket_grid(&self.basis, u, u);
            pot -= 0.5 * self.basis.quad_inner(f0g, &br);
        }
        if let Some(p) = &self.p_modal {
            pot += p.dot(u);
        }
        pot
    }

    /// Dissipation functional; nonnegative for monotone laws.
    pub fn damping_power(&self, state: &State) -> f64 {
        let b = &self.basis;
        match &self.spec.kind {
            ModelKind::Wave { damping, .. } => {
                let vg = b.to_grid(&state.v);
                let force = self.damping_grid_force(&vg, damping);
                b.quad_inner(&force, &vg)
            }
            ModelKind::KarmanPlate { alpha, damping, rotational, .. } => {
                let vg = b.to_grid(&state.v);
                let mut d = b.quad_inner(&self.damping_grid_force(&vg, damping), &vg);
                if *alpha > 0.0 {
                    if let Some(rot) = rotational {
                        let (gx, gy) = b.gradient_grid(&state.v);
                        let m = damping.exponent_m;
                        let w = b.quad_weight();
                        let mut rd = 0.0;
                        for i in 0..gx.values.len() {
                            let gvx = rot.g1 * gx.values[i]
                                + rot.g2 * gx.values[i].abs().powf(m - 1.0) * gx.values[i];
                            let gvy = rot.g1 * gy.values[i]
                                + rot.g2 * gy.values[i].abs().powf(m - 1.0) * gy.values[i];
                            rd += self.a_grid[i] * (gvx * gx.values[i] + gvy * gy.values[i]);
                        }
                        d += alpha * w * rd;
                    }
                }
                d
            }
            ModelKind::KirchhoffBoussinesq { damping, .. } => {
                let vg = b.to_grid(&state.v);
                b.quad_inner(&self.damping_grid_force(&vg, damping), &vg)
            }
            ModelKind::KirchhoffWave { sigma, .. } => {
                let s = b.sobolev_norm(&state.u, 1.0).powi(2);
                sigma.eval(s) * b.sobolev_norm(&state.v, 1.0).powi(2)
            }
        }
    }

    /// Rate of work of the non-conservative source part (only the
    /// Boussinesq term contributes).
    pub fn work_rate(&self, state: &State) -> f64 {
        match &self.spec.kind {
            ModelKind::KirchhoffBoussinesq { source, .. } if source.sigma > 0.0 => {
                source.sigma * self.kb_grad2_rate(state)
            }
            _ => 0.0,
        }
    }

    /// Right-hand side u_tt in modal coordinates.
    pub fn acceleration(&self, state: &State) -> Result<ModalField> {
        let b = &self.basis;
        let n = b.total_modes();
        if state.u.len() != n || state.v.len() != n {
            return Err(Error::Shape { expected: n, got: state.u.len() });
        }
        let eigs = b.eigenvalues();
        match &self.spec.kind {
            ModelKind::Wave { damping, source } => {
                let vg = b.to_grid(&state.v);
                let damp = b.analyze_sine(&self.damping_grid_force(&vg, damping));
                let ug = b.to_grid(&state.u);
                let fgrid = GridField {
                    values: ug.values.iter().map(|&s| source.f(s)).collect(),
                    shape: ug.shape,
                };
                let fmod = b.analyze_sine(&fgrid);
                let coeffs = (0..n)
                    .map(|k| -eigs[k] * state.u.coeffs[k] - damp.coeffs[k] + fmod.coeffs[k])
                    .collect();
                Ok(ModalField { coeffs })
            }
            ModelKind::KarmanPlate { alpha, damping, rotational, .. } => {
                let mut rhs = self.plate_damping_rhs(state, damping, *alpha, *rotational);
                let airy = airy_stress(b, &state.u)?;
                let airy_grid = b.to_grid(&airy);
                let af = bracket_weighted_force(b, &airy_grid, &state.u);
                for k in 0..n {
                    rhs.coeffs[k] += af.coeffs[k] - eigs[k] * eigs[k] * state.u.coeffs[k];
                }
                if let Some(f0g) = &self.f0_grid {
                    rhs.add_scaled(&bracket_weighted_force(b, f0g, &state.u), 1.0);
                }
                if let Some(p) = &self.p_modal {
                    rhs.add_scaled(p, -1.0);
                }
                for k in 0..n {
                    rhs.coeffs[k] /= self.mass[k];
                }
                Ok(rhs)
            }
            ModelKind::KirchhoffBoussinesq { alpha, damping, source } => {
                let mut rhs = self.plate_damping_rhs(state, damping, *alpha, None);
                let nl = self.kb_nonlinear_force(&state.u, source);
                for k in 0..n {
                    rhs.coeffs[k] += nl.coeffs[k] - eigs[k] * eigs[k] * state.u.coeffs[k];
                    rhs.coeffs[k] /= self.mass[k];
                }
                Ok(rhs)
            }
            ModelKind::KirchhoffWave { phi, sigma, source, .. } => {
                let s = b.sobolev_norm(&state.u, 1.0).powi(2);
                let (phv, sgv) = (phi.eval(s), sigma.eval(s));
                let ug = b.to_grid(&state.u);
                let fgrid = GridField {
                    values: ug.values.iter().map(|&x| source.f(x)).collect(),
                    shape: ug.shape,
                };
                let fmod = b.analyze_sine(&fgrid);
                let coeffs = (0..n)
                    .map(|k| {
                        let mut a = -phv * eigs[k] * state.u.coeffs[k]
                            - sgv * eigs[k] * state.v.coeffs[k]
                            - fmod.coeffs[k];
                        if let Some(h) = &self.h_modal {
                            a += h.coeffs[k];
                        }
                        a
                    })
                    .collect();
                Ok(ModalField { coeffs })
            }
        }
    }

    /// Modal multipliers of the stiff linear part of the acceleration
    /// and of the linear-in-velocity damping part, used by the implicit
    /// stage solver as a preconditioner:
    /// `u_tt ~ -L u - D v + (rest)`.
    pub fn stiffness_diagonals(&self, state: &State) -> (Vec<f64>, Vec<f64>) {
        let b = &self.basis;
        let eigs = b.eigenvalues();
        match &self.spec.kind {
            ModelKind::Wave { damping, .. } => {
                let d = damping.g1 * match damping.coeff {
                    CoeffProfile::Constant(c) => c,
                    CoeffProfile::SineBump { base, amp } => base + 0.5 * amp,
                };
                (eigs.to_vec(), vec![d; eigs.len()])
            }
            ModelKind::KarmanPlate { damping, .. } | ModelKind::KirchhoffBoussinesq { damping, .. } => {
                let d = damping.g1 * match damping.coeff {
                    CoeffProfile::Constant(c) => c,
                    CoeffProfile::SineBump { base, amp } => base + 0.5 * amp,
                };
                let l = eigs
                    .iter()
                    .zip(&self.mass)
                    .map(|(e, m)| e * e / m)
                    .collect();
                (l, vec![d; eigs.len()])
            }
            ModelKind::KirchhoffWave { phi, sigma, .. } => {
                let s = b.sobolev_norm(&state.u, 1.0).powi(2);
                let (phv, sgv) = (phi.eval(s), sigma.eval(s));
                (
                    eigs.iter().map(|e| phv * e).collect(),
                    eigs.iter().map(|e| sgv * e).collect(),
                )
            }
        }
    }

    fn plate_damping_rhs(
        &self,
        state: &State,
        damping: &DampingLaw,
        alpha: f64,
        rotational: Option<RotDamping>,
    ) -> ModalField {
        let b = &self.basis;
        let vg = b.to_grid(&state.v);
        let mut rhs = b.analyze_sine(&self.damping_grid_force(&vg, damping)).scaled(-1.0);
        if alpha > 0.0 {
            if let Some(rot) = rotational {
                let (gx, gy) = b.gradient_grid(&state.v);
                let m = damping.exponent_m;
                let tx: Vec<f64> = gx
                    .values
                    .iter()
                    .zip(&self.a_grid)
                    .map(|(&s, &a)| a * (rot.g1 * s + rot.g2 * s.abs().powf(m - 1.0) * s))
                    .collect();
                let ty: Vec<f64> = gy
                    .values
                    .iter()
                    .zip(&self.a_grid)
                    .map(|(&s, &a)| a * (rot.g1 * s + rot.g2 * s.abs().powf(m - 1.0) * s))
                    .collect();
                rhs.add_scaled(&b.analyze_dx(&GridField { values: tx, shape: gx.shape }), -alpha);
                rhs.add_scaled(&b.analyze_dy(&GridField { values: ty, shape: gy.shape }), -alpha);
            }
        }
        rhs
    }

    /// Gradient-form Kirchhoff-Boussinesq force
    /// `div(|grad u|^2 grad u) + sigma Delta[u^2] - rho |u|^(l-1) u`.
    fn kb_nonlinear_force(&self, u: &ModalField, source: &KbSource) -> ModalField {
        let b = &self.basis;
        let (gx, gy) = b.gradient_grid(u);
        let ug = b.to_grid(u);
        let nvals = ug.values.len();
        let mut tx = vec![0.0; nvals];
        let mut ty = vec![0.0; nvals];
        for i in 0..nvals {
            let g2 = gx.values[i] * gx.values[i] + gy.values[i] * gy.values[i];
            // |grad u|^2 grad u plus the weak form of sigma Delta[u^2]
            tx[i] = g2 * gx.values[i] + 2.0 * source.sigma * ug.values[i] * gx.values[i];
            ty[i] = g2 * gy.values[i] + 2.0 * source.sigma * ug.values[i] * gy.values[i];
        }
        let shape = ug.shape;
        let mut out = b.analyze_dx(&GridField { values: tx, shape });
        out.add_scaled(&b.analyze_dy(&GridField { values: ty, shape }), 1.0);
        let mut out = out.scaled(-1.0);
        if source.rho > 0.0 {
            let pw = GridField {
                values: ug.values.iter().map(|&s| s.abs().powf(source.ell - 1.0) * s).collect(),
                shape,
            };
            out.add_scaled(&b.analyze_sine(&pw), -source.rho);
        }
        out
    }

    /// Residual of the stationary problem at displacement w.
    pub fn stationary_residual(&self, w: &ModalField) -> Result<ModalField> {
        let b = &self.basis;
        let n = b.total_modes();
        if w.len() != n {
            return Err(Error::Shape { expected: n, got: w.len() });
        }
        let eigs = b.eigenvalues();
        match &self.spec.kind {
            ModelKind::Wave { source, .. } => {
                let ug = b.to_grid(w);
                let fgrid = GridField {
                    values: ug.values.iter().map(|&s| source.f(s)).collect(),
                    shape: ug.shape,
                };
                let fmod = b.analyze_sine(&fgrid);
                Ok(ModalField {
                    coeffs: (0..n).map(|k| eigs[k] * w.coeffs[k] - fmod.coeffs[k]).collect(),
                })
            }
            ModelKind::KarmanPlate { .. } => {
                let airy = airy_stress(b, w)?;
                let airy_grid = b.to_grid(&airy);
                let af = bracket_weighted_force(b, &airy_grid, w);
                let mut res = ModalField {
                    coeffs: (0..n)
                        .map(|k| eigs[k] * eigs[k] * w.coeffs[k] - af.coeffs[k])
                        .collect(),
                };
                if let Some(f0g) = &self.f0_grid {
                    res.add_scaled(&bracket_weighted_force(b, f0g, w), -1.0);
                }
                if let Some(p) = &self.p_modal {
                    res.add_scaled(p, 1.0);
                }
                Ok(res)
            }
            ModelKind::KirchhoffBoussinesq { source, .. } => {
                let nl = self.kb_nonlinear_force(w, source);
                Ok(ModalField {
                    coeffs: (0..n)
                        .map(|k| eigs[k] * eigs[k] * w.coeffs[k] - nl.coeffs[k])
                        .collect(),
                })
            }
            ModelKind::KirchhoffWave { phi, source, .. } => {
                let s = b.sobolev_norm(w, 1.0).powi(2);
                let phv = phi.eval(s);
                let ug = b.to_grid(w);
                let fgrid = GridField {
                    values: ug.values.iter().map(|&x| source.f(x)).collect(),
                    shape: ug.shape,
                };
                let fmod = b.analyze_sine(&fgrid);
                Ok(ModalField {
                    coeffs: (0..n)
                        .map(|k| {
                            let mut r = phv * eigs[k] * w.coeffs[k] + fmod.coeffs[k];
                            if let Some(h) = &self.h_modal {
                                r -= h.coeffs[k];
                            }
                            r
                        })
                        .collect(),
                })
            }
        }
    }

    /// Pointwise derivative of the source at the displacement, on the
    /// grid (for linearisations).
    pub fn source_derivative_grid(&self, w: &ModalField) -> Option<GridField> {
        let src = match &self.spec.kind {
            ModelKind::Wave { source, .. } => *source,
            _ => return None,
        };
        let ug = self.basis.to_grid(w);
        Some(GridField {
            values: ug.values.iter().map(|&s| src.f_prime(s)).collect(),
            shape: ug.shape,
        })
    }

    // -- Kirchhoff-Boussinesq audit quantities -------------------------

    /// `((Delta[w^2], w_t))` in the discrete weak form.
    pub fn kb_boussinesq_rate(&self, state: &State) -> f64 {
        let b = &self.basis;
        let (gx, gy) = b.gradient_grid(&state.u);
        let ug = b.to_grid(&state.u);
        let (vx, vy) = b.gradient_grid(&state.v);
        let w = b.quad_weight();
        let s: f64 = (0..ug.values.len())
            .map(|i| ug.values[i] * (gx.values[i] * vx.values[i] + gy.values[i] * vy.values[i]))
            .sum();
        -2.0 * w * s
    }

    /// `((|grad w|^2, w_t))`.
    pub fn kb_grad2_rate(&self, state: &State) -> f64 {
        let b = &self.basis;
        let (gx, gy) = b.gradient_grid(&state.u);
        let vg = b.to_grid(&state.v);
        let w = b.quad_weight();
        let s: f64 = (0..vg.values.len())
            .map(|i| (gx.values[i] * gx.values[i] + gy.values[i] * gy.values[i]) * vg.values[i])
            .sum();
        w * s
    }

    /// `((|grad w|^2, w))`, the boundary term of the Boussinesq identity.
    pub fn kb_boundary_term(&self, state: &State) -> f64 {
        let b = &self.basis;
        let (gx, gy) = b.gradient_grid(&state.u);
        let ug = b.to_grid(&state.u);
        let w = b.quad_weight();
        let s: f64 = (0..ug.values.len())
            .map(|i| (gx.values[i] * gx.values[i] + gy.values[i] * gy.values[i]) * ug.values[i])
            .sum();
        w * s
    }

    /// Effective damping floor `k = inf_x g1 a(x)` for the Ball audit;
    /// requires the KB model with linear damping.
    pub fn kb_ball_k(&self) -> Result<f64> {
        if !matches!(self.spec.kind, ModelKind::KirchhoffBoussinesq { .. }) {
            return Err(Error::WrongModel("ball audit requires the Kirchhoff-Boussinesq model".into()));
        }
        let damping = self.damping().expect("KB carries damping");
        if !damping.is_linear() {
            return Err(Error::WrongModel("ball audit requires linear damping".into()));
        }
        let k = damping.linear_coefficient() * self.inf_a;
        if k <= 0.0 {
            return Err(Error::Validation("ball audit needs inf a(x) g1 > 0".into()));
        }
        Ok(k)
    }

    /// Lyapunov function `Psi = E + (k/2)(w, w_t)`.
    pub fn kb_ball_psi(&self, state: &State, k: f64) -> f64 {
        self.energy(state) + 0.5 * k * state.u.dot(&state.v)
    }

    /// `int (a_eff - k) |w_t|^2`.
    pub fn kb_ball_l(&self, state: &State, k: f64) -> f64 {
        let g1 = self.damping().expect("KB carries damping").linear_coefficient();
        let b = &self.basis;
        let vg = b.to_grid(&state.v);
        let s: f64 = vg
            .values
            .iter()
            .zip(&self.a_grid)
            .map(|(&v, &a)| (g1 * a - k) * v * v)
            .sum();
        b.quad_weight() * s
    }

    /// Subcritical right side of the Ball identity
    /// `dPsi/dt + k Psi + int (a_eff - k)|w_t|^2 = K(w)`:
    ///
    /// `K = ((sigma |grad w|^2 - (k/2)(a_eff - k) w, w_t))
    ///      - (k/4) int |grad w|^4 - k rho (l-1)/(2l+2) int |w|^(l+1)`.
    pub fn kb_ball_k_term(&self, state: &State, k: f64) -> f64 {
        let (sigma, rho, ell) = match &self.spec.kind {
            ModelKind::KirchhoffBoussinesq { source, .. } => (source.sigma, source.rho, source.ell),
            _ => unreachable!("guarded by kb_ball_k"),
        };
        let g1 = self.damping().expect("KB carries damping").linear_coefficient();
        let b = &self.basis;
        let ug = b.to_grid(&state.u);
        let vg = b.to_grid(&state.v);
        let (gx, gy) = b.gradient_grid(&state.u);
        let mut total = 0.0;
        for i in 0..ug.values.len() {
            let g2 = gx.values[i] * gx.values[i] + gy.values[i] * gy.values[i];
            total +=
                (sigma * g2 - 0.5 * k * (g1 * self.a_grid[i] - k) * ug.values[i]) * vg.values[i];
            total -= 0.25 * k * g2 * g2;
            if rho > 0.0 {
                total -=
                    k * rho * (ell - 1.0) / (2.0 * ell + 2.0) * ug.values[i].abs().powf(ell + 1.0);
            }
        }
        b.quad_weight() * total
    }
}

fn spec_damping(spec: &ModelSpec) -> Option<&DampingLaw> {
    match &spec.kind {
        ModelKind::Wave { damping, .. }
        | ModelKind::KarmanPlate { damping, .. }
        | ModelKind::KirchhoffBoussinesq { damping, .. } => Some(damping),
        ModelKind::KirchhoffWave { .. } => None,
    }
}

// ---------------------------------------------------------------------
// Von Karman bracket machinery
// ---------------------------------------------------------------------

/// Pointwise von Karman bracket on the quadrature grid:
/// `u_xx w_yy + u_yy w_xx - 2 u_xy w_xy`.
pub fn vk_bracket_grid(basis: &Basis, u: &ModalField, w: &ModalField) -> GridField {
    let (uxx, uxy, uyy) = basis.second_derivs_grid(u);
    let (wxx, wxy, wyy) = basis.second_derivs_grid(w);
    let values = (0..uxx.values.len())
        .map(|i| {
            uxx.values[i] * wyy.values[i] + uyy.values[i] * wxx.values[i]
                - 2.0 * uxy.values[i] * wxy.values[i]
        })
        .collect();
    GridField { values, shape: uxx.shape }
}

/// Dealiased modal projection of the von Karman bracket.
pub fn vk_bracket(basis: &Basis, u: &ModalField, w: &ModalField) -> Result<ModalField> {
    if basis.domain.dimension != 2 {
        return Err(Error::NeedsTwoDim("vk_bracket"));
    }
    Ok(basis.analyze_sine(&vk_bracket_grid(basis, u, w)))
}

/// Pointwise bracket value at (x, y) from the exact derivative series.
pub fn bracket_eval_at(basis: &Basis, u: &ModalField, w: &ModalField, x: f64, y: f64) -> f64 {
    let (uxx, uxy, uyy) = basis.eval_second_derivs_at(u, x, y);
    let (wxx, wxy, wyy) = basis.eval_second_derivs_at(w, x, y);
    uxx * wyy + uyy * wxx - 2.0 * uxy * wxy
}

/// Airy stress function `F = -Delta^(-2) [w, w]` (hinged spectral
/// realisation).
pub fn airy_stress(basis: &Basis, w: &ModalField) -> Result<ModalField> {
    let b = vk_bracket(basis, w, w)?;
    basis.biharmonic_inverse(&b.scaled(-1.0))
}

/// Modal force with components `<G [u, e_j]>` for a fixed grid factor G:
/// the exact gradient of `-1/2 <G, [u, u]>` in the modal coordinates of
/// u, coinciding with the Galerkin projection of `[G, u]` up to
/// quadrature.
pub fn bracket_weighted_force(basis: &Basis, g: &GridField, u: &ModalField) -> ModalField {
    let (uxx, uxy, uyy) = basis.second_derivs_grid(u);
    let mul = |a: &GridField, b: &GridField| GridField {
        values: a.values.iter().zip(&b.values).map(|(x, y)| x * y).collect(),
        shape: a.shape,
    };
    let sxx = basis.analyze_sine(&mul(g, &uxx));
    let syy = basis.analyze_sine(&mul(g, &uyy));
    let cxy = basis.analyze_coscos(&mul(g, &uxy));
    let mut out = basis.zero_field();
    for (rank, mode) in basis.modes().iter().enumerate() {
        let kx = basis.kx()[mode.jx - 1];
        let ky = basis.ky()[mode.jy - 1];
        out.coeffs[rank] = -ky * ky * sxx.coeffs[rank] - kx * kx * syy.coeffs[rank]
            - 2.0 * kx * ky * cxy.coeffs[rank];
    }
    out
}

/// Result of the hidden-regularity experiment for `Delta^(-2)[u, v]`.
#[derive(Debug, Clone, Serialize)]
pub struct HiddenRegularityReport {
    /// Sup over trials of `max |D^2 Delta^(-2)[u,v]| / (|u|_2 |v|_2)`.
    pub sup_base: f64,
    /// Same at doubled mode counts.
    pub sup_refined: f64,
}

/// W^(2,inf) bound of Airy-type solves on random unit-H2 pairs,
/// evaluated at the base resolution and with the same fields re-solved
/// at doubled mode counts. Boundedness of the ratio under refinement is
/// the testable content of the hidden-regularity estimate.
pub fn hidden_regularity_ratio(
    domain: &DomainSpec,
    trials: usize,
    seed: u64,
) -> Result<HiddenRegularityReport> {
    if domain.dimension != 2 {
        return Err(Error::NeedsTwoDim("hidden_regularity_ratio"));
    }
    let base = Basis::new(domain.clone())?;
    let mut refined_domain = domain.clone();
    refined_domain.modes[0] *= 2;
    refined_domain.modes[1] *= 2;
    let refined = Basis::new(refined_domain)?;

    let ratio = |basis: &Basis, u: &ModalField, v: &ModalField| -> Result<f64> {
        let br = vk_bracket(basis, u, v)?;
        let z = basis.biharmonic_inverse(&br)?;
        let (zxx, zxy, zyy) = basis.second_derivs_grid(&z);
        Ok(zxx.max_abs().max(zxy.max_abs()).max(zyy.max_abs()))
    };
    // inject a base-band field into the refined basis
    let lift = |f: &ModalField| -> ModalField {
        let mut out = refined.zero_field();
        for (rank, mode) in base.modes().iter().enumerate() {
            let r = refined.rank_of_mode(mode.jx, mode.jy).expect("refined superset");
            out.coeffs[r] = f.coeffs[rank];
        }
        out
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sup_base: f64 = 0.0;
    let mut sup_refined: f64 = 0.0;
    for _ in 0..trials {
        let u = base.normalize(&base.random_field(&mut rng, 2.0), 2.0);
        let v = base.normalize(&base.random_field(&mut rng, 2.0), 2.0);
        sup_base = sup_base.max(ratio(&base, &u, &v)?);
        sup_refined = sup_refined.max(ratio(&refined, &lift(&u), &lift(&v))?);
    }
    Ok(HiddenRegularityReport { sup_base, sup_refined })
}

/// Smallest M with `|u|^2 <= eps (|Delta u|^2 + |Delta F(u)|^2) + M`
/// over random trial fields.
pub fn low_freq_control_check(basis: &Basis, eps: f64, trials: usize, seed: u64) -> Result<f64> {
    if basis.domain.dimension != 2 {
        return Err(Error::NeedsTwoDim("low_freq_control_check"));
    }
    if eps <= 0.0 {
        return Err(Error::OutOfRange("eps must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m_fit: f64 = 0.0;
    for _ in 0..trials {
        let amp = rng.gen_range(0.1..3.0);
        let u = basis.normalize(&basis.random_field(&mut rng, 2.0), 2.0).scaled(amp);
        let l2 = basis.sobolev_norm(&u, 0.0).powi(2);
        let h2 = basis.sobolev_norm(&u, 2.0).powi(2);
        let f = airy_stress(basis, &u)?;
        let af = basis.sobolev_norm(&f, 2.0).powi(2);
        m_fit = m_fit.max(l2 - eps * (h2 + af));
    }
    Ok(m_fit.max(0.0))
}
