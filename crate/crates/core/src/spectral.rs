//! Dirichlet sine eigenbasis on intervals and rectangles.
//!
//! Eigenfunctions are normalised products of `sin(j pi x / Lx)` factors,
//! so both the Laplacian and the bilaplacian are diagonal in modal
//! coordinates (hinged conditions for the fourth-order operators).
//! Transforms between modal coefficients and nodal values on the interior
//! tensor quadrature grid are plain sine matrices; the interior rectangle
//! rule is exact for products of band-limited sine fields, which keeps
//! Parseval checks and energy audits at machine precision.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::Serialize;

use crate::error::{Error, Result};

/// Rectangle or interval domain with mode counts and dealiasing factor.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DomainSpec {
    /// 1 for an interval, 2 for a rectangle.
    pub dimension: usize,
    /// Side lengths; `lengths[1]` is ignored in 1-D.
    pub lengths: [f64; 2],
    /// Modes per direction; `modes[1]` is ignored in 1-D.
    pub modes: [usize; 2],
    /// Quadrature points per mode direction, at least 3/2.
    pub grid_factor: f64,
}

impl DomainSpec {
    pub fn interval(lx: f64, nx: usize) -> Self {
        Self { dimension: 1, lengths: [lx, 1.0], modes: [nx, 1], grid_factor: 2.0 }
    }

    pub fn rectangle(lx: f64, ly: f64, nx: usize, ny: usize) -> Self {
        Self { dimension: 2, lengths: [lx, ly], modes: [nx, ny], grid_factor: 2.0 }
    }

    pub fn unit_square(n: usize) -> Self {
        Self::rectangle(1.0, 1.0, n, n)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension != 1 && self.dimension != 2 {
            return Err(Error::Validation(format!("dimension must be 1 or 2, got {}", self.dimension)));
        }
        for d in 0..self.dimension {
            if !(self.lengths[d] > 0.0) || !self.lengths[d].is_finite() {
                return Err(Error::Validation(format!("length[{d}] must be positive, got {}", self.lengths[d])));
            }
            if self.modes[d] == 0 {
                return Err(Error::Validation(format!("modes[{d}] must be at least 1")));
            }
        }
        if !(self.grid_factor >= 1.5) {
            return Err(Error::Validation(format!("grid factor must be >= 3/2, got {}", self.grid_factor)));
        }
        Ok(())
    }

    fn grid_points(&self, d: usize) -> usize {
        let n = self.modes[d];
        let m = (self.grid_factor * n as f64).ceil() as usize;
        m.max((3 * n + 1) / 2).max(n)
    }
}

/// A single tensor mode: 1-based indices and its Laplacian eigenvalue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Mode {
    pub jx: usize,
    pub jy: usize,
    pub lambda: f64,
}

/// Scalar field in eigencoefficient representation, ordered by the
/// basis ranking (nondecreasing eigenvalue).
#[derive(Debug, Clone, PartialEq)]
pub struct ModalField {
    pub coeffs: Vec<f64>,
}

impl ModalField {
    pub fn zeros(len: usize) -> Self {
        Self { coeffs: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { coeffs: self.coeffs.iter().map(|c| c * s).collect() }
    }

    pub fn add_scaled(&mut self, other: &Self, s: f64) {
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += s * b;
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self { coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a - b).collect() }
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a * b).sum()
    }

    /// Euclidean norm of the coefficients (the L2 norm of the field).
    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }
}

/// Nodal values on the interior tensor quadrature grid, row-major in x.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub values: Vec<f64>,
    pub shape: (usize, usize),
}

impl GridField {
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Sine eigenbasis with precomputed transform matrices and quadrature.
#[derive(Debug, Clone)]
pub struct Basis {
    pub domain: DomainSpec,
    modes: Vec<Mode>,
    rank_of: Vec<usize>,
    eigs: Vec<f64>,
    // Per-direction synthesis matrices, grid x modes.
    sx: DMatrix<f64>,
    cx: DMatrix<f64>,
    sy: DMatrix<f64>,
    cy: DMatrix<f64>,
    kx: Vec<f64>,
    ky: Vec<f64>,
    xs: Vec<f64>,
    ys: Vec<f64>,
    weight: f64,
}

/// Builds the sine eigenbasis for a validated domain.
pub fn build_basis(domain: &DomainSpec) -> Result<Basis> {
    Basis::new(domain.clone())
}

impl Basis {
    pub fn new(domain: DomainSpec) -> Result<Self> {
        domain.validate()?;
        let two_d = domain.dimension == 2;
        let (nx, ny) = (domain.modes[0], if two_d { domain.modes[1] } else { 1 });
        let (lx, ly) = (domain.lengths[0], if two_d { domain.lengths[1] } else { 1.0 });
        let mx = domain.grid_points(0);
        let my = if two_d { domain.grid_points(1) } else { 1 };

        let kx: Vec<f64> = (1..=nx).map(|j| j as f64 * std::f64::consts::PI / lx).collect();
        let ky: Vec<f64> = if two_d {
            (1..=ny).map(|l| l as f64 * std::f64::consts::PI / ly).collect()
        } else {
            vec![0.0]
        };

        let mut modes = Vec::with_capacity(nx * ny);
        for jx in 1..=nx {
            for jy in 1..=ny {
                let lam = kx[jx - 1] * kx[jx - 1] + if two_d { ky[jy - 1] * ky[jy - 1] } else { 0.0 };
                modes.push(Mode { jx, jy, lambda: lam });
            }
        }
        modes.sort_by(|a, b| {
            a.lambda
                .partial_cmp(&b.lambda)
                .unwrap()
                .then(a.jx.cmp(&b.jx))
                .then(a.jy.cmp(&b.jy))
        });
        let mut rank_of = vec![0usize; nx * ny];
        for (rank, m) in modes.iter().enumerate() {
            rank_of[(m.jx - 1) * ny + (m.jy - 1)] = rank;
        }
        let eigs = modes.iter().map(|m| m.lambda).collect();

        let (sx, cx, xs) = sine_cosine_matrices(mx, nx, lx);
        let (sy, cy, ys) = if two_d {
            sine_cosine_matrices(my, ny, ly)
        } else {
            (DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 1.0), vec![0.0])
        };

        let wx = lx / (mx + 1) as f64;
        let wy = if two_d { ly / (my + 1) as f64 } else { 1.0 };

        Ok(Self { domain, modes, rank_of, eigs, sx, cx, sy, cy, kx, ky, xs, ys, weight: wx * wy })
    }

    pub fn total_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    /// Eigenvalues of the negative Laplacian, nondecreasing.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigs
    }

    pub fn grid_shape(&self) -> (usize, usize) {
        (self.sx.nrows(), self.sy.nrows())
    }

    /// Quadrature weight of one grid node.
    pub fn quad_weight(&self) -> f64 {
        self.weight
    }

    pub fn grid_xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn grid_ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn zero_field(&self) -> ModalField {
        ModalField::zeros(self.total_modes())
    }

    /// Field with a single unit coefficient at the given rank (0-based).
    pub fn unit_field(&self, rank: usize) -> ModalField {
        let mut f = self.zero_field();
        f.coeffs[rank] = 1.0;
        f
    }

    /// Rank of the tensor mode (jx, jy), 1-based indices.
    pub fn rank_of_mode(&self, jx: usize, jy: usize) -> Option<usize> {
        let ny = if self.domain.dimension == 2 { self.domain.modes[1] } else { 1 };
        if jx == 0 || jy == 0 || jx > self.domain.modes[0] || jy > ny {
            return None;
        }
        Some(self.rank_of[(jx - 1) * ny + (jy - 1)])
    }

    fn check(&self, f: &ModalField) -> Result<()> {
        if f.len() != self.total_modes() {
            return Err(Error::Shape { expected: self.total_modes(), got: f.len() });
        }
        Ok(())
    }

    // Scatter ranked coefficients into an (nx, ny) matrix, optionally
    // scaling each mode by a per-direction factor.
    fn to_matrix(&self, f: &ModalField, fx: impl Fn(usize) -> f64, fy: impl Fn(usize) -> f64) -> DMatrix<f64> {
        let nx = self.sx.ncols();
        let ny = self.sy.ncols();
        let mut m = DMatrix::zeros(nx, ny);
        for (rank, mode) in self.modes.iter().enumerate() {
            m[(mode.jx - 1, mode.jy - 1)] = f.coeffs[rank] * fx(mode.jx - 1) * fy(mode.jy - 1);
        }
        m
    }

    fn from_matrix(&self, m: &DMatrix<f64>) -> ModalField {
        let mut f = self.zero_field();
        for (rank, mode) in self.modes.iter().enumerate() {
            f.coeffs[rank] = m[(mode.jx - 1, mode.jy - 1)];
        }
        f
    }

    fn synth(&self, m: &DMatrix<f64>, bx: &DMatrix<f64>, by: &DMatrix<f64>) -> GridField {
        let g = bx * m * by.transpose();
        GridField { values: g.as_slice().to_vec(), shape: (g.nrows(), g.ncols()) }
    }

    /// Nodal values of the field on the quadrature grid.
    pub fn to_grid(&self, f: &ModalField) -> GridField {
        let m = self.to_matrix(f, |_| 1.0, |_| 1.0);
        self.synth(&m, &self.sx, &self.sy)
    }

    /// Modal coefficients of a nodal field (exact inverse of `to_grid`
    /// for band-limited fields).
    pub fn to_modal(&self, g: &GridField) -> ModalField {
        let (mx, my) = self.grid_shape();
        let gm = DMatrix::from_column_slice(mx, my, &g.values);
        let m = (self.sx.transpose() * gm * &self.sy) * self.weight;
        self.from_matrix(&m)
    }

    /// Discrete quadrature of a nodal field.
    pub fn quadrature(&self, g: &GridField) -> f64 {
        self.weight * g.values.iter().sum::<f64>()
    }

    /// Discrete inner product of two nodal fields.
    pub fn quad_inner(&self, a: &GridField, b: &GridField) -> f64 {
        self.weight * a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum::<f64>()
    }

    /// Gradient components on the grid.
    pub fn gradient_grid(&self, f: &ModalField) -> (GridField, GridField) {
        let mdx = self.to_matrix(f, |j| self.kx[j], |_| 1.0);
        let gx = self.synth(&mdx, &self.cx, &self.sy);
        let gy = if self.domain.dimension == 2 {
            let mdy = self.to_matrix(f, |_| 1.0, |l| self.ky[l]);
            self.synth(&mdy, &self.sx, &self.cy)
        } else {
            GridField { values: vec![0.0; gx.values.len()], shape: gx.shape }
        };
        (gx, gy)
    }

    /// Second derivatives (u_xx, u_xy, u_yy) on the grid.
    pub fn second_derivs_grid(&self, f: &ModalField) -> (GridField, GridField, GridField) {
        let mxx = self.to_matrix(f, |j| -self.kx[j] * self.kx[j], |_| 1.0);
        let gxx = self.synth(&mxx, &self.sx, &self.sy);
        if self.domain.dimension == 2 {
            let mxy = self.to_matrix(f, |j| self.kx[j], |l| self.ky[l]);
            let gxy = self.synth(&mxy, &self.cx, &self.cy);
            let myy = self.to_matrix(f, |_| 1.0, |l| -self.ky[l] * self.ky[l]);
            let gyy = self.synth(&myy, &self.sx, &self.sy);
            (gxx, gxy, gyy)
        } else {
            let zero = GridField { values: vec![0.0; gxx.values.len()], shape: gxx.shape };
            (gxx, zero.clone(), zero)
        }
    }

    /// Modal coefficients `<g, e_k>` of a nodal field under quadrature.
    /// Identical to `to_modal`; named for use as a weak-form analysis.
    pub fn analyze_sine(&self, g: &GridField) -> ModalField {
        self.to_modal(g)
    }

    /// Cosine-cosine analysis `<g, c_k>` against the normalised
    /// `cos(jx pi x/Lx) cos(jy pi y/Ly)` products (2-D mixed derivative
    /// pairings).
    pub fn analyze_coscos(&self, g: &GridField) -> ModalField {
        let (mx, my) = self.grid_shape();
        let gm = DMatrix::from_column_slice(mx, my, &g.values);
        let m = (self.cx.transpose() * gm * &self.cy) * self.weight;
        self.from_matrix(&m)
    }

    /// Weak-form pairing `<g, d/dx e_k>` under quadrature.
    pub fn analyze_dx(&self, g: &GridField) -> ModalField {
        let (mx, my) = self.grid_shape();
        let gm = DMatrix::from_column_slice(mx, my, &g.values);
        let m = (self.cx.transpose() * gm * &self.sy) * self.weight;
        let mut f = self.from_matrix(&m);
        for (rank, mode) in self.modes.iter().enumerate() {
            f.coeffs[rank] *= self.kx[mode.jx - 1];
        }
        f
    }

    /// Weak-form pairing `<g, d/dy e_k>`; zero in 1-D.
    pub fn analyze_dy(&self, g: &GridField) -> ModalField {
        if self.domain.dimension != 2 {
            return self.zero_field();
        }
        let (mx, my) = self.grid_shape();
        let gm = DMatrix::from_column_slice(mx, my, &g.values);
        let m = (self.sx.transpose() * gm * &self.cy) * self.weight;
        let mut f = self.from_matrix(&m);
        for (rank, mode) in self.modes.iter().enumerate() {
            f.coeffs[rank] *= self.ky[mode.jy - 1];
        }
        f
    }

    /// Wavenumbers in x, indexed by `jx - 1`.
    pub fn kx(&self) -> &[f64] {
        &self.kx
    }

    /// Wavenumbers in y, indexed by `jy - 1` (a single zero in 1-D).
    pub fn ky(&self) -> &[f64] {
        &self.ky
    }

    /// Pointwise evaluation of the modal field at (x, y).
    pub fn eval_at(&self, f: &ModalField, x: f64, y: f64) -> f64 {
        let lx = self.domain.lengths[0];
        let nx_norm = (2.0 / lx).sqrt();
        let two_d = self.domain.dimension == 2;
        let ny_norm = if two_d { (2.0 / self.domain.lengths[1]).sqrt() } else { 1.0 };
        self.modes
            .iter()
            .zip(&f.coeffs)
            .map(|(m, c)| {
                let ex = nx_norm * (self.kx[m.jx - 1] * x).sin();
                let ey = if two_d { ny_norm * (self.ky[m.jy - 1] * y).sin() } else { 1.0 };
                c * ex * ey
            })
            .sum()
    }

    /// Second derivatives (u_xx, u_xy, u_yy) of the field at a point.
    pub fn eval_second_derivs_at(&self, f: &ModalField, x: f64, y: f64) -> (f64, f64, f64) {
        let lx = self.domain.lengths[0];
        let nx_norm = (2.0 / lx).sqrt();
        let two_d = self.domain.dimension == 2;
        let ny_norm = if two_d { (2.0 / self.domain.lengths[1]).sqrt() } else { 1.0 };
        let (mut dxx, mut dxy, mut dyy) = (0.0, 0.0, 0.0);
        for (m, c) in self.modes.iter().zip(&f.coeffs) {
            let kx = self.kx[m.jx - 1];
            let ky = if two_d { self.ky[m.jy - 1] } else { 0.0 };
            let sxv = nx_norm * (kx * x).sin();
            let cxv = nx_norm * (kx * x).cos();
            let (syv, cyv) = if two_d {
                (ny_norm * (ky * y).sin(), ny_norm * (ky * y).cos())
            } else {
                (1.0, 0.0)
            };
            dxx += c * (-kx * kx) * sxv * syv;
            dxy += c * kx * ky * cxv * cyv;
            dyy += c * (-ky * ky) * sxv * syv;
        }
        (dxx, dxy, dyy)
    }

    /// Negative Laplacian in modal coordinates.
    pub fn neg_laplacian(&self, f: &ModalField) -> Result<ModalField> {
        self.check(f)?;
        Ok(ModalField {
            coeffs: f.coeffs.iter().zip(&self.eigs).map(|(c, l)| c * l).collect(),
        })
    }

    /// Bilaplacian (square of the negative Laplacian).
    pub fn bilaplacian(&self, f: &ModalField) -> Result<ModalField> {
        self.check(f)?;
        Ok(ModalField {
            coeffs: f.coeffs.iter().zip(&self.eigs).map(|(c, l)| c * l * l).collect(),
        })
    }

    /// Inverse bilaplacian with hinged spectral boundary conditions.
    pub fn biharmonic_inverse(&self, f: &ModalField) -> Result<ModalField> {
        self.check(f)?;
        Ok(ModalField {
            coeffs: f.coeffs.iter().zip(&self.eigs).map(|(c, l)| c / (l * l)).collect(),
        })
    }

    /// Spectral Sobolev norm `(sum lambda^s c^2)^(1/2)` for s in [-2, 4].
    pub fn sobolev_norm(&self, f: &ModalField, s: f64) -> f64 {
        debug_assert!((-2.0..=4.0).contains(&s), "sobolev scale s out of [-2, 4]");
        f.coeffs
            .iter()
            .zip(&self.eigs)
            .map(|(c, l)| l.powf(s) * c * c)
            .sum::<f64>()
            .sqrt()
    }

    /// Projection onto the first `n` modes of the eigenvalue ranking.
    pub fn project_low(&self, f: &ModalField, n: usize) -> Result<ModalField> {
        self.check(f)?;
        if n == 0 || n > self.total_modes() {
            return Err(Error::OutOfRange(format!(
                "projection rank {n} not in 1..={}",
                self.total_modes()
            )));
        }
        let mut out = f.clone();
        for c in out.coeffs.iter_mut().skip(n) {
            *c = 0.0;
        }
        Ok(out)
    }

    /// Random field with coefficients `g_k / lambda_k^(decay/2)`,
    /// g_k standard normal.
    pub fn random_field<R: Rng>(&self, rng: &mut R, decay: f64) -> ModalField {
        let coeffs = self
            .eigs
            .iter()
            .map(|l| {
                let g: f64 = sample_std_normal(rng);
                g * l.powf(-decay / 2.0)
            })
            .collect();
        ModalField { coeffs }
    }

    /// Rescale a field to unit spectral Sobolev norm of order `s`.
    pub fn normalize(&self, f: &ModalField, s: f64) -> ModalField {
        let n = self.sobolev_norm(f, s);
        if n == 0.0 {
            f.clone()
        } else {
            f.scaled(1.0 / n)
        }
    }
}

fn sine_cosine_matrices(m: usize, n: usize, length: f64) -> (DMatrix<f64>, DMatrix<f64>, Vec<f64>) {
    let norm = (2.0 / length).sqrt();
    let h = length / (m + 1) as f64;
    let xs: Vec<f64> = (1..=m).map(|i| i as f64 * h).collect();
    let mut s = DMatrix::zeros(m, n);
    let mut c = DMatrix::zeros(m, n);
    for (i, &x) in xs.iter().enumerate() {
        for j in 1..=n {
            let arg = j as f64 * std::f64::consts::PI * x / length;
            s[(i, j - 1)] = norm * arg.sin();
            c[(i, j - 1)] = norm * arg.cos();
        }
    }
    (s, c, xs)
}

fn sample_std_normal<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller; two uniforms per draw keeps us off rand_distr.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

// ---------------------------------------------------------------------
// Log-projection growth check
// ---------------------------------------------------------------------

/// Configuration of the log-projection growth experiment.
#[derive(Debug, Clone, Serialize)]
pub struct LogProjectionConfig {
    /// Projection ranks, increasing.
    pub ladder: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
}

impl Default for LogProjectionConfig {
    fn default() -> Self {
        Self { ladder: vec![64, 128, 256, 512], trials: 200, seed: 7 }
    }
}

/// Domain used by the default log-projection experiment; the pi x pi
/// square keeps the eigenvalue ladder wide enough for a clean fit.
pub fn log_projection_domain() -> DomainSpec {
    DomainSpec::rectangle(std::f64::consts::PI, std::f64::consts::PI, 32, 32)
}

/// One rung of the projection experiment.
#[derive(Debug, Clone, Serialize)]
pub struct LogProjectionRung {
    pub n: usize,
    /// Biharmonic eigenvalue of the last retained mode.
    pub lambda_n: f64,
    /// Largest grid sup of `P_N f` over the trials (unit H1 draws).
    pub max_ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LogProjectionReport {
    pub rungs: Vec<LogProjectionRung>,
    /// Fitted exponent of `max_ratio ~ (log(1 + lambda_N))^beta`.
    pub beta: Option<f64>,
}

/// Grid sup of `P_n f` divided by the H1 norm of `f`.
pub fn projection_sup_ratio(basis: &Basis, f: &ModalField, n: usize) -> Result<f64> {
    let h1 = basis.sobolev_norm(f, 1.0);
    if h1 == 0.0 {
        return Ok(0.0);
    }
    let p = basis.project_low(f, n)?;
    Ok(basis.to_grid(&p).max_abs() / h1)
}

/// Measures the growth of `max_x |P_N f|` for unit-H1 fields against
/// `(log(1 + lambda_N))^(1/2)` and fits the exponent.
///
/// Trials sample the worst-case directions: each draw is the H1 Riesz
/// representer of point evaluation at a random interior node (the
/// maximiser of `|P_N f|(x0)` over the unit H1 ball), perturbed by a
/// small random field. A plain random draw only probes typical fields
/// and says nothing about the sharpness of the bound.
pub fn verify_log_projection(
    basis: &Basis,
    config: &LogProjectionConfig,
) -> Result<LogProjectionReport> {
    if basis.domain.dimension != 2 {
        return Err(Error::NeedsTwoDim("verify_log_projection"));
    }
    for &n in &config.ladder {
        if n == 0 || n > basis.total_modes() {
            return Err(Error::OutOfRange(format!(
                "ladder rank {n} not in 1..={}",
                basis.total_modes()
            )));
        }
    }
    let mut best = vec![0.0f64; config.ladder.len()];

    for (i, &n) in config.ladder.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(i as u64));
        for _ in 0..config.trials {
            // Candidate worst case for P_N: the H1 Riesz representer of
            // evaluation at a random interior point, supported on the
            // first N modes (a tail only wastes H1 budget), plus a small
            // full-spectrum perturbation.
            let x0 = rng.gen_range(0.05..0.95) * basis.domain.lengths[0];
            let y0 = rng.gen_range(0.05..0.95) * basis.domain.lengths[1];
            let lx = basis.domain.lengths[0];
            let ly = basis.domain.lengths[1];
            let nx_norm = (2.0 / lx).sqrt();
            let ny_norm = (2.0 / ly).sqrt();
            let mut f = basis.zero_field();
            for (rank, m) in basis.modes().iter().enumerate().take(n) {
                let e = nx_norm
                    * (basis.kx[m.jx - 1] * x0).sin()
                    * ny_norm
                    * (basis.ky[m.jy - 1] * y0).sin();
                f.coeffs[rank] = e / m.lambda;
            }
            let jitter = basis.random_field(&mut rng, 1.0);
            let jn = basis.sobolev_norm(&jitter, 1.0);
            if jn > 0.0 {
                f.add_scaled(&jitter, 0.05 * basis.sobolev_norm(&f, 1.0) / jn);
            }
            let f = basis.normalize(&f, 1.0);
            let r = projection_sup_ratio(basis, &f, n)?;
            if r > best[i] {
                best[i] = r;
            }
        }
    }

    let rungs: Vec<LogProjectionRung> = config
        .ladder
        .iter()
        .zip(&best)
        .map(|(&n, &r)| {
            let lam = basis.eigenvalues()[n - 1];
            LogProjectionRung { n, lambda_n: lam * lam, max_ratio: r }
        })
        .collect();

    let beta = if config.trials == 0 || rungs.len() < 2 {
        None
    } else {
        let pts: Vec<(f64, f64)> = rungs
            .iter()
            .filter(|r| r.max_ratio > 0.0)
            .map(|r| ((1.0 + r.lambda_n).ln().ln(), r.max_ratio.ln()))
            .collect();
        fit_slope(&pts)
    };

    Ok(LogProjectionReport { rungs, beta })
}

/// Least-squares slope of y against x; `None` for degenerate data.
pub fn fit_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= 0.0 {
        None
    } else {
        Some(sxy / sxx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn eigenvalues_1d() {
        let b = Basis::new(DomainSpec::interval(std::f64::consts::PI, 3)).unwrap();
        let eig = b.eigenvalues();
        assert_relative_eq!(eig[0], 1.0, max_relative = 1e-14);
        assert_relative_eq!(eig[1], 4.0, max_relative = 1e-14);
        assert_relative_eq!(eig[2], 9.0, max_relative = 1e-14);
    }

    #[test]
    fn eigenvalue_2d_first_mode() {
        let b = Basis::new(DomainSpec::unit_square(4)).unwrap();
        let pi2 = std::f64::consts::PI * std::f64::consts::PI;
        assert_relative_eq!(b.eigenvalues()[0], 2.0 * pi2, max_relative = 1e-14);
    }

    #[test]
    fn rejects_zero_modes() {
        assert!(Basis::new(DomainSpec::interval(std::f64::consts::PI, 0)).is_err());
        let mut d = DomainSpec::interval(1.0, 4);
        d.lengths[0] = -1.0;
        assert!(Basis::new(d).is_err());
        let mut d = DomainSpec::interval(1.0, 4);
        d.grid_factor = 1.2;
        assert!(Basis::new(d).is_err());
    }

    #[test]
    fn discrete_orthonormality() {
        let b = Basis::new(DomainSpec::rectangle(1.0, 1.3, 5, 4)).unwrap();
        let n = b.total_modes();
        let grids: Vec<GridField> = (0..n).map(|k| b.to_grid(&b.unit_field(k))).collect();
        for j in 0..n {
            for k in 0..n {
                let ip = b.quad_inner(&grids[j], &grids[k]);
                let expect = if j == k { 1.0 } else { 0.0 };
                assert!((ip - expect).abs() <= 1e-12, "modes {j},{k}: {ip}");
            }
        }
    }

    #[test]
    fn transform_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = Basis::new(DomainSpec::rectangle(1.0, 2.0, 6, 5)).unwrap();
        let f = b.random_field(&mut rng, 1.0);
        let back = b.to_modal(&b.to_grid(&f));
        let err = f.sub(&back).norm();
        assert!(err <= 1e-12 * f.norm().max(1.0), "round trip error {err}");
    }

    #[test]
    fn parseval_against_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = Basis::new(DomainSpec::rectangle(1.0, 1.0, 8, 8)).unwrap();
        let f = b.random_field(&mut rng, 1.0);
        let g = b.to_grid(&f);
        let l2sq = b.quad_inner(&g, &g);
        let norm = b.sobolev_norm(&f, 0.0);
        assert_relative_eq!(l2sq, norm * norm, max_relative = 1e-10);
    }

    #[test]
    fn laplacian_single_mode() {
        let b = Basis::new(DomainSpec::interval(std::f64::consts::PI, 4)).unwrap();
        let f = b.unit_field(1); // mode 2, lambda 4
        let lf = b.neg_laplacian(&f).unwrap();
        assert_relative_eq!(lf.coeffs[1], 4.0, max_relative = 1e-14);
        let z = b.neg_laplacian(&b.zero_field()).unwrap();
        assert_eq!(z.norm(), 0.0);
    }

    #[test]
    fn laplacian_2d_mode() {
        let b = Basis::new(DomainSpec::unit_square(3)).unwrap();
        let rank = b.rank_of_mode(1, 1).unwrap();
        let lf = b.neg_laplacian(&b.unit_field(rank)).unwrap();
        let pi2 = std::f64::consts::PI * std::f64::consts::PI;
        assert_relative_eq!(lf.coeffs[rank], 2.0 * pi2, max_relative = 1e-14);
    }

    #[test]
    fn bilaplacian_is_laplacian_squared() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = Basis::new(DomainSpec::rectangle(1.0, 1.0, 6, 6)).unwrap();
        let f = b.random_field(&mut rng, 0.0);
        let twice = b.neg_laplacian(&b.neg_laplacian(&f).unwrap()).unwrap();
        let bil = b.bilaplacian(&f).unwrap();
        assert_eq!(twice, bil);
    }

    #[test]
    fn biharmonic_inverse_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b = Basis::new(DomainSpec::rectangle(1.0, 1.0, 8, 8)).unwrap();
        let f = b.random_field(&mut rng, 0.0);
        let inv = b.biharmonic_inverse(&f).unwrap();
        let res = b.bilaplacian(&inv).unwrap().sub(&f).norm();
        assert!(res <= 1e-12 * f.norm(), "residual {res}");

        let single = b.unit_field(0);
        let lam = b.eigenvalues()[0];
        let inv = b.biharmonic_inverse(&single.scaled(lam * lam)).unwrap();
        assert_relative_eq!(inv.coeffs[0], 1.0, max_relative = 1e-12);

        assert_eq!(b.biharmonic_inverse(&b.zero_field()).unwrap().norm(), 0.0);
    }

    #[test]
    fn sobolev_norm_cases() {
        let b = Basis::new(DomainSpec::interval(std::f64::consts::PI, 4)).unwrap();
        // single mode lambda = 4, s = 2 -> lambda^(s/2) * |c| = 4
        let f = b.unit_field(1);
        assert_relative_eq!(b.sobolev_norm(&f, 2.0), 4.0, max_relative = 1e-14);
        // s = 0 is the Euclidean norm of the coefficients
        let mut g = b.zero_field();
        g.coeffs = vec![3.0, 0.0, 4.0, 0.0];
        assert_relative_eq!(b.sobolev_norm(&g, 0.0), 5.0, max_relative = 1e-14);
        // e1 + e2 with lambdas 1, 4 at s = 1 -> sqrt(5)
        let mut h = b.zero_field();
        h.coeffs[0] = 1.0;
        h.coeffs[1] = 1.0;
        assert_relative_eq!(b.sobolev_norm(&h, 1.0), 5.0f64.sqrt(), max_relative = 1e-14);
    }

    #[test]
    fn projection_truncates_and_is_idempotent() {
        let b = Basis::new(DomainSpec::interval(1.0, 6)).unwrap();
        let mut f = b.zero_field();
        f.coeffs[0] = 1.0;
        f.coeffs[4] = 2.0;
        let p = b.project_low(&f, 3).unwrap();
        assert_eq!(p.coeffs, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let pp = b.project_low(&p, 3).unwrap();
        assert_eq!(p, pp);
        // full projection is the identity
        assert_eq!(b.project_low(&f, 6).unwrap(), f);
        // e1 survives any projection
        let e1 = b.unit_field(0);
        assert_eq!(b.project_low(&e1, 1).unwrap(), e1);
        assert!(b.project_low(&f, 0).is_err());
        assert!(b.project_low(&f, 7).is_err());
    }

    #[test]
    fn gradient_matches_analytic_single_mode() {
        let b = Basis::new(DomainSpec::rectangle(1.0, 1.0, 4, 4)).unwrap();
        let rank = b.rank_of_mode(2, 1).unwrap();
        let f = b.unit_field(rank);
        let (gx, _gy) = b.gradient_grid(&f);
        // d/dx [sqrt2 sin(2 pi x) * sqrt2 sin(pi y)] at first grid node
        let x = b.grid_xs()[0];
        let y = b.grid_ys()[0];
        let pi = std::f64::consts::PI;
        let expect = 2.0 * pi * 2.0 * (2.0 * pi * x).cos() * (pi * y).sin();
        assert_relative_eq!(gx.values[0], expect, max_relative = 1e-12);
    }

    #[test]
    fn point_eval_matches_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = Basis::new(DomainSpec::rectangle(1.0, 1.5, 5, 4)).unwrap();
        let f = b.random_field(&mut rng, 1.0);
        let g = b.to_grid(&f);
        let (mx, _) = b.grid_shape();
        let (ix, iy) = (2, 3);
        let v = b.eval_at(&f, b.grid_xs()[ix], b.grid_ys()[iy]);
        assert_relative_eq!(v, g.values[iy * mx + ix], max_relative = 1e-11);
    }

    #[test]
    fn log_projection_fixed_mode_ratio_constant() {
        let b = Basis::new(DomainSpec::unit_square(8)).unwrap();
        let e1 = b.unit_field(0);
        let r4 = projection_sup_ratio(&b, &e1, 4).unwrap();
        let r32 = projection_sup_ratio(&b, &e1, 32).unwrap();
        assert_relative_eq!(r4, r32, max_relative = 1e-13);
    }

    #[test]
    fn log_projection_zero_trials_empty() {
        let b = Basis::new(log_projection_domain()).unwrap();
        let cfg = LogProjectionConfig { ladder: vec![8, 16], trials: 0, seed: 1 };
        let rep = verify_log_projection(&b, &cfg).unwrap();
        assert!(rep.beta.is_none());
        assert!(rep.rungs.iter().all(|r| r.max_ratio == 0.0));
    }

    #[test]
    fn log_projection_beta_in_range() {
        let b = Basis::new(log_projection_domain()).unwrap();
        let rep = verify_log_projection(&b, &LogProjectionConfig::default()).unwrap();
        let beta = rep.beta.unwrap();
        assert!((0.3..=0.7).contains(&beta), "beta = {beta}");
        // ratios grow along the ladder
        for w in rep.rungs.windows(2) {
            assert!(w[1].max_ratio >= w[0].max_ratio * 0.99);
        }
    }

    proptest::proptest! {
        #[test]
        fn round_trip_random_fields(seed in 0u64..32) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = Basis::new(DomainSpec::rectangle(1.0, 0.7, 5, 3)).unwrap();
            let f = b.random_field(&mut rng, 0.5);
            let back = b.to_modal(&b.to_grid(&f));
            proptest::prop_assert!(f.sub(&back).norm() <= 1e-12 * f.norm().max(1.0));
        }

        #[test]
        fn parseval_random(seed in 0u64..16) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = Basis::new(DomainSpec::interval(2.0, 9)).unwrap();
            let f = b.random_field(&mut rng, 0.0);
            let g = b.to_grid(&f);
            let q = b.quad_inner(&g, &g).sqrt();
            let n = b.sobolev_norm(&f, 0.0);
            proptest::prop_assert!((q - n).abs() <= 1e-10 * n.max(1.0));
        }
    }
}
