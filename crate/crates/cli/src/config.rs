//! Strict TOML run configuration: unknown keys are rejected so that
//! experiment files stay citable.

use serde::Deserialize;

use modalpde::integrator::{Scheme, StepConfig};
use modalpde::models::{
    CoeffProfile, DampingLaw, KbSource, ModelKind, ModelSpec, PlateLoad, RotDamping, ScalarLaw,
    WaveSource,
};
use modalpde::spectral::DomainSpec;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub domain: DomainSection,
    pub model: ModelSection,
    #[serde(default)]
    pub init: InitSection,
    pub integrator: IntegratorSection,
    #[serde(default)]
    pub equilibria: EquilibriaSection,
    #[serde(default)]
    pub decay: DecaySection,
    #[serde(default)]
    pub quasistab: QuasistabSection,
    #[serde(default)]
    pub dimension: DimensionSection,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    pub dimension: usize,
    pub lx: f64,
    pub ly: Option<f64>,
    pub nx: usize,
    pub ny: Option<usize>,
    #[serde(default = "default_grid_factor")]
    pub grid_factor: f64,
}

fn default_grid_factor() -> f64 {
    2.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: String,
    #[serde(default)]
    pub alpha: f64,
    pub damping: Option<DampingSection>,
    #[serde(default)]
    pub source: SourceSection,
    pub rotational: Option<RotSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DampingSection {
    #[serde(default)]
    pub g1: f64,
    #[serde(default)]
    pub g2: f64,
    #[serde(default = "one")]
    pub m: f64,
    #[serde(default = "one")]
    pub a_base: f64,
    #[serde(default)]
    pub a_bump: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSection {
    // wave / kirchhoff_wave
    pub kappa: Option<f64>,
    pub p: Option<f64>,
    pub c: Option<f64>,
    pub mu: Option<f64>,
    // kirchhoff_boussinesq
    pub sigma: Option<f64>,
    pub rho: Option<f64>,
    pub l: Option<f64>,
    // karman load
    pub f0: Option<Vec<(usize, usize, f64)>>,
    pub p_load: Option<Vec<(usize, usize, f64)>>,
    // kirchhoff_wave laws and forcing
    pub phi0: Option<f64>,
    pub phi1: Option<f64>,
    pub phi_q: Option<f64>,
    pub sig0: Option<f64>,
    pub sig1: Option<f64>,
    pub sig_q: Option<f64>,
    pub h: Option<Vec<(usize, usize, f64)>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RotSection {
    #[serde(default)]
    pub g1: f64,
    #[serde(default)]
    pub g2: f64,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct InitSection {
    #[serde(default = "modes_kind")]
    pub kind: String,
    #[serde(default)]
    pub u: Vec<(usize, usize, f64)>,
    #[serde(default)]
    pub v: Vec<(usize, usize, f64)>,
    #[serde(default = "one")]
    pub radius: f64,
}

fn modes_kind() -> String {
    "modes".into()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSection {
    #[serde(default = "midpoint_scheme")]
    pub scheme: String,
    pub dt: f64,
    pub t_final: f64,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_inner")]
    pub max_inner: usize,
    #[serde(default = "default_blowup")]
    pub blowup_threshold: f64,
}

fn midpoint_scheme() -> String {
    "midpoint".into()
}
fn default_stride() -> usize {
    20
}
fn default_tol() -> f64 {
    1e-12
}
fn default_inner() -> usize {
    50
}
fn default_blowup() -> f64 {
    1e6
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquilibriaSection {
    #[serde(default = "default_starts")]
    pub starts: usize,
    #[serde(default = "default_eq_tol")]
    pub tol: f64,
}

impl Default for EquilibriaSection {
    fn default() -> Self {
        Self { starts: default_starts(), tol: default_eq_tol() }
    }
}

fn default_starts() -> usize {
    64
}
fn default_eq_tol() -> f64 {
    1e-10
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecaySection {
    #[serde(default = "default_decay_tol")]
    pub tol: f64,
    #[serde(default = "default_burn_in_frac")]
    pub burn_in_frac: f64,
    #[serde(default = "default_sigma_t")]
    pub sigma_t: f64,
    #[serde(default = "default_sigma_dt")]
    pub sigma_dt: f64,
    #[serde(default = "two")]
    pub c1: f64,
    #[serde(default = "two")]
    pub c2: f64,
    #[serde(default = "one")]
    pub c3: f64,
    #[serde(default = "default_k0_samples")]
    pub k0_samples: usize,
}

impl Default for DecaySection {
    fn default() -> Self {
        Self {
            tol: default_decay_tol(),
            burn_in_frac: default_burn_in_frac(),
            sigma_t: default_sigma_t(),
            sigma_dt: default_sigma_dt(),
            c1: 2.0,
            c2: 2.0,
            c3: 1.0,
            k0_samples: default_k0_samples(),
        }
    }
}

fn two() -> f64 {
    2.0
}
fn default_decay_tol() -> f64 {
    1e-3
}
fn default_burn_in_frac() -> f64 {
    0.1
}
fn default_sigma_t() -> f64 {
    60.0
}
fn default_sigma_dt() -> f64 {
    1e-2
}
fn default_k0_samples() -> usize {
    10000
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuasistabSection {
    #[serde(default = "default_pairs")]
    pub pairs: usize,
    #[serde(default = "default_pert")]
    pub perturbation: f64,
    #[serde(default = "default_rank")]
    pub seminorm_rank: usize,
    #[serde(default = "default_eps")]
    pub seminorm_eps: f64,
    #[serde(default = "default_window")]
    pub window: f64,
}

impl Default for QuasistabSection {
    fn default() -> Self {
        Self {
            pairs: default_pairs(),
            perturbation: default_pert(),
            seminorm_rank: default_rank(),
            seminorm_eps: default_eps(),
            window: default_window(),
        }
    }
}

fn default_pairs() -> usize {
    8
}
fn default_pert() -> f64 {
    0.1
}
fn default_rank() -> usize {
    16
}
fn default_eps() -> f64 {
    0.25
}
fn default_window() -> f64 {
    8.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimensionSection {
    #[serde(default = "ensemble_source")]
    pub source: String,
    #[serde(default = "default_ensemble")]
    pub ensemble: usize,
    #[serde(default = "default_dim_burn_in")]
    pub burn_in: f64,
    #[serde(default = "default_dim_radius")]
    pub radius: f64,
    #[serde(default = "default_proj_dim")]
    pub projection_dim: usize,
    #[serde(default = "default_rungs")]
    pub rungs: usize,
    // fixture parameters
    #[serde(default = "default_fixture_points")]
    pub points: usize,
    #[serde(default = "default_fixture_dim")]
    pub dim: usize,
    #[serde(default = "default_fixture_depth")]
    pub depth: usize,
    pub path: Option<String>,
}

impl Default for DimensionSection {
    fn default() -> Self {
        Self {
            source: ensemble_source(),
            ensemble: default_ensemble(),
            burn_in: default_dim_burn_in(),
            radius: default_dim_radius(),
            projection_dim: default_proj_dim(),
            rungs: default_rungs(),
            points: default_fixture_points(),
            dim: default_fixture_dim(),
            depth: default_fixture_depth(),
            path: None,
        }
    }
}

fn ensemble_source() -> String {
    "ensemble".into()
}
fn default_ensemble() -> usize {
    16
}
fn default_dim_burn_in() -> f64 {
    20.0
}
fn default_dim_radius() -> f64 {
    1.0
}
fn default_proj_dim() -> usize {
    6
}
fn default_rungs() -> usize {
    12
}
fn default_fixture_points() -> usize {
    10000
}
fn default_fixture_dim() -> usize {
    6
}
fn default_fixture_depth() -> usize {
    10
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| format!("config parse error: {e}"))
    }

    pub fn domain_spec(&self) -> Result<DomainSpec, String> {
        let d = &self.domain;
        if d.dimension == 2 && (d.ly.is_none() || d.ny.is_none()) {
            return Err("2-D domains need ly and ny".into());
        }
        Ok(DomainSpec {
            dimension: d.dimension,
            lengths: [d.lx, d.ly.unwrap_or(1.0)],
            modes: [d.nx, d.ny.unwrap_or(1)],
            grid_factor: d.grid_factor,
        })
    }

    fn damping_law(&self) -> Result<DampingLaw, String> {
        let d = self
            .model
            .damping
            .as_ref()
            .ok_or_else(|| "this model kind needs a [model.damping] section".to_string())?;
        let coeff = if d.a_bump == 0.0 {
            CoeffProfile::Constant(d.a_base)
        } else {
            CoeffProfile::SineBump { base: d.a_base, amp: d.a_bump }
        };
        Ok(DampingLaw { g1: d.g1, g2: d.g2, exponent_m: d.m, coeff })
    }

    fn wave_source(&self) -> WaveSource {
        let s = &self.model.source;
        WaveSource {
            kappa: s.kappa.unwrap_or(0.0),
            p: s.p.unwrap_or(1.0),
            c: s.c.unwrap_or(0.0),
            mu: s.mu.unwrap_or(0.0),
        }
    }

    pub fn model_spec(&self) -> Result<ModelSpec, String> {
        let domain = self.domain_spec()?;
        let kind = match self.model.kind.as_str() {
            "wave" => ModelKind::Wave { damping: self.damping_law()?, source: self.wave_source() },
            "karman" => ModelKind::KarmanPlate {
                alpha: self.model.alpha,
                damping: self.damping_law()?,
                rotational: self
                    .model
                    .rotational
                    .as_ref()
                    .map(|r| RotDamping { g1: r.g1, g2: r.g2 }),
                load: PlateLoad {
                    f0_modes: self.model.source.f0.clone().unwrap_or_default(),
                    p_modes: self.model.source.p_load.clone().unwrap_or_default(),
                },
            },
            "kirchhoff_boussinesq" => ModelKind::KirchhoffBoussinesq {
                alpha: self.model.alpha,
                damping: self.damping_law()?,
                source: KbSource {
                    sigma: self.model.source.sigma.unwrap_or(0.0),
                    rho: self.model.source.rho.unwrap_or(0.0),
                    ell: self.model.source.l.unwrap_or(1.0),
                },
            },
            "kirchhoff_wave" => {
                let s = &self.model.source;
                ModelKind::KirchhoffWave {
                    phi: ScalarLaw {
                        c0: s.phi0.unwrap_or(1.0),
                        c1: s.phi1.unwrap_or(0.0),
                        q: s.phi_q.unwrap_or(1.0),
                    },
                    sigma: ScalarLaw {
                        c0: s.sig0.unwrap_or(1.0),
                        c1: s.sig1.unwrap_or(0.0),
                        q: s.sig_q.unwrap_or(1.0),
                    },
                    source: self.wave_source(),
                    h_modes: s.h.clone().unwrap_or_default(),
                }
            }
            other => return Err(format!("unknown model kind '{other}'")),
        };
        Ok(ModelSpec { domain, kind })
    }

    pub fn step_config(&self) -> Result<StepConfig, String> {
        let i = &self.integrator;
        let scheme = match i.scheme.as_str() {
            "midpoint" => Scheme::ImplicitMidpoint,
            "rk4" => Scheme::ExplicitRk4,
            other => return Err(format!("unknown scheme '{other}'")),
        };
        Ok(StepConfig {
            scheme,
            dt: i.dt,
            solver_tol: i.tol,
            max_inner_iters: i.max_inner,
            blowup_threshold: i.blowup_threshold,
        })
    }
}
