//! Radial p-Dirichlet energy, Rayleigh quotient and the fundamental-tone
//! solver.
//!
//! The energy `∫ |u'|^p S(r) dr` is discretized with cell-centered finite
//! volumes on a uniform grid. Gradients live on cell interfaces, weighted by
//! the sphere area there, so the pole of a ball (where `S(0) = 0`) carries no
//! flux. Dirichlet ends use a ghost value `0` one cell beyond the boundary.
//!
//! The first eigenpair is found by inverse iteration: each step minimizes the
//! strictly convex functional `(1/p) E(v) - <S |u|^{p-2} u, v>` with a damped
//! Newton method on the tridiagonal Hessian and renormalizes the minimizer.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::SolverError;
use crate::geometry::{RadialDomain, WarpedModel};

/// Exponent `p` of the p-Laplacian with its conjugate `q = p/(p-1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralParams {
    p: f64,
    q: f64,
}

impl SpectralParams {
    pub fn new(p: f64) -> Result<Self, SolverError> {
        if !(p > 1.0) || !p.is_finite() {
            return Err(SolverError::InvalidExponent(p));
        }
        let q = p / (p - 1.0);
        debug_assert!((1.0 / p + 1.0 / q - 1.0).abs() < 1e-12);
        Ok(Self { p, q })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// `|x|^{p-2} x`.
    pub fn phi(&self, x: f64) -> f64 {
        if x == 0.0 {
            0.0
        } else {
            x.abs().powf(self.p - 1.0).copysign(x)
        }
    }
}

/// Boundary behaviour at one end of a radial grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    /// Ghost value 0 one cell beyond the end.
    Dirichlet,
    /// No flux through the end (pole of a ball, Neumann end).
    Natural,
}

/// Uniform cell-centered grid carrying the sphere-area weights.
#[derive(Debug, Clone)]
pub struct RadialGrid {
    domain: Option<RadialDomain>,
    spacing: f64,
    centers: Vec<f64>,
    interfaces: Vec<f64>,
    center_weights: Vec<f64>,
    interface_weights: Vec<f64>,
    left: Boundary,
    right: Boundary,
}

impl RadialGrid {
    /// Grid over a ball or annulus of `model` with `cells` cells. Balls get a
    /// natural pole end and a Dirichlet outer end; annuli are Dirichlet at
    /// both ends.
    pub fn new(model: &WarpedModel, domain: RadialDomain, cells: usize) -> Result<Self, SolverError> {
        if cells < 2 {
            return Err(SolverError::InvalidCellCount { min: 2, got: cells });
        }
        domain.validate(model)?;
        let (lo, hi) = domain.bounds();
        let left = match domain {
            RadialDomain::Ball { .. } => Boundary::Natural,
            RadialDomain::Annulus { .. } => Boundary::Dirichlet,
        };
        Self::assemble(Some(domain), lo, hi, cells, left, Boundary::Dirichlet, |r| model.sphere_area(r))
    }

    /// Grid with unit weight on `[lo, hi]`, the one-dimensional problem.
    pub fn flat(lo: f64, hi: f64, cells: usize, left: Boundary, right: Boundary) -> Result<Self, SolverError> {
        if cells < 2 {
            return Err(SolverError::InvalidCellCount { min: 2, got: cells });
        }
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(SolverError::Geometry(crate::error::GeometryError::InvalidDomain(format!(
                "interval [{lo}, {hi}]"
            ))));
        }
        Self::assemble(None, lo, hi, cells, left, right, |_| Ok(1.0))
    }

    fn assemble<W>(
        domain: Option<RadialDomain>,
        lo: f64,
        hi: f64,
        cells: usize,
        left: Boundary,
        right: Boundary,
        weight: W,
    ) -> Result<Self, SolverError>
    where
        W: Fn(f64) -> Result<f64, crate::error::GeometryError>,
    {
        let h = (hi - lo) / cells as f64;
        let interfaces: Vec<f64> =
            (0..=cells).map(|j| if j == cells { hi } else { lo + j as f64 * h }).collect();
        let centers: Vec<f64> = interfaces.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let center_weights = centers.iter().map(|&r| weight(r)).collect::<Result<Vec<_>, _>>()?;
        let interface_weights = interfaces.iter().map(|&r| weight(r)).collect::<Result<Vec<_>, _>>()?;
        Ok(Self { domain, spacing: h, centers, interfaces, center_weights, interface_weights, left, right })
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn domain(&self) -> Option<RadialDomain> {
        self.domain
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn interfaces(&self) -> &[f64] {
        &self.interfaces
    }

    pub fn center_weights(&self) -> &[f64] {
        &self.center_weights
    }

    pub fn interface_weights(&self) -> &[f64] {
        &self.interface_weights
    }

    pub fn boundaries(&self) -> (Boundary, Boundary) {
        (self.left, self.right)
    }

    /// Interface weight entering the energy; natural ends carry none.
    fn flux_weight(&self, j: usize) -> f64 {
        let n = self.len();
        if (j == 0 && self.left == Boundary::Natural) || (j == n && self.right == Boundary::Natural) {
            0.0
        } else {
            self.interface_weights[j]
        }
    }

    /// Difference quotient across interface `j` (ghost 0 at Dirichlet ends,
    /// 0 at natural ends).
    pub fn interface_gradient(&self, values: &[f64], j: usize) -> f64 {
        let n = self.len();
        let h = self.spacing;
        if j == 0 {
            match self.left {
                Boundary::Dirichlet => values[0] / h,
                Boundary::Natural => 0.0,
            }
        } else if j == n {
            match self.right {
                Boundary::Dirichlet => -values[n - 1] / h,
                Boundary::Natural => 0.0,
            }
        } else {
            (values[j] - values[j - 1]) / h
        }
    }

    fn has_dirichlet(&self) -> bool {
        self.left == Boundary::Dirichlet || self.right == Boundary::Dirichlet
    }

    /// Distance of each center to the nearest Dirichlet end.
    fn tent(&self) -> Vec<f64> {
        let lo = self.interfaces[0];
        let hi = self.interfaces[self.len()];
        self.centers
            .iter()
            .map(|&r| {
                let dl = if self.left == Boundary::Dirichlet { r - lo } else { f64::INFINITY };
                let dr = if self.right == Boundary::Dirichlet { hi - r } else { f64::INFINITY };
                let d = dl.min(dr);
                if d.is_finite() {
                    d
                } else {
                    1.0
                }
            })
            .collect()
    }
}

/// Cell-center samples of a radial function on a grid.
#[derive(Debug, Clone)]
pub struct RadialFunction {
    grid: Arc<RadialGrid>,
    values: Vec<f64>,
}

impl RadialFunction {
    pub fn new(grid: Arc<RadialGrid>, values: Vec<f64>) -> Self {
        assert_eq!(grid.len(), values.len(), "one value per cell");
        Self { grid, values }
    }

    /// Samples `f` at the cell centers.
    pub fn from_fn(grid: Arc<RadialGrid>, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.centers().iter().map(|&r| f(r)).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn scaled(&self, t: f64) -> Self {
        Self { grid: self.grid.clone(), values: self.values.iter().map(|v| v * t).collect() }
    }

    /// Two-column CSV `r,u` with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("r,u\n");
        for (r, u) in self.grid.centers().iter().zip(&self.values) {
            out.push_str(&format!("{r:.16e},{u:.16e}\n"));
        }
        out
    }
}

fn energy_of(grid: &RadialGrid, values: &[f64], p: f64) -> f64 {
    let h = grid.spacing();
    (0..=grid.len())
        .map(|j| {
            let w = grid.flux_weight(j);
            if w == 0.0 {
                0.0
            } else {
                w * grid.interface_gradient(values, j).abs().powf(p) * h
            }
        })
        .sum()
}

fn mass_of(grid: &RadialGrid, values: &[f64], p: f64) -> f64 {
    let h = grid.spacing();
    grid.center_weights().iter().zip(values).map(|(s, u)| s * u.abs().powf(p) * h).sum()
}

/// Discrete p-Dirichlet energy `Σ_j S_j |D_j u|^p h`.
pub fn p_energy(u: &RadialFunction, params: &SpectralParams) -> f64 {
    energy_of(&u.grid, &u.values, params.p())
}

/// Discrete p-mass `Σ_i S_i |u_i|^p h`.
pub fn p_mass(u: &RadialFunction, params: &SpectralParams) -> f64 {
    mass_of(&u.grid, &u.values, params.p())
}

pub fn rayleigh_quotient(u: &RadialFunction, params: &SpectralParams) -> Result<f64, SolverError> {
    let mass = p_mass(u, params);
    if !(mass > 0.0) {
        return Err(SolverError::ZeroMass);
    }
    Ok(p_energy(u, params) / mass)
}

/// Gradient of `(1/p) E` with respect to the cell values.
fn energy_gradient(grid: &RadialGrid, values: &[f64], params: &SpectralParams, out: &mut [f64]) {
    let n = grid.len();
    let mut flux_prev = grid.flux_weight(0) * params.phi(grid.interface_gradient(values, 0));
    for i in 0..n {
        let flux_next = grid.flux_weight(i + 1) * params.phi(grid.interface_gradient(values, i + 1));
        out[i] = flux_prev - flux_next;
        flux_prev = flux_next;
    }
}

/// Max-norm residual of `Δ_p u = λ |u|^{p-2} u`, weighted by the cell
/// measure and normalized by the largest weighted `|u|^{p-1}`.
pub fn eigen_residual(u: &RadialFunction, params: &SpectralParams, lambda: f64) -> f64 {
    let grid = &u.grid;
    let h = grid.spacing();
    let mut grad = vec![0.0; grid.len()];
    energy_gradient(grid, &u.values, params, &mut grad);
    let mut num: f64 = 0.0;
    let mut den: f64 = 0.0;
    for ((g, s), v) in grad.iter().zip(grid.center_weights()).zip(&u.values) {
        let b = s * h * params.phi(*v);
        num = num.max((g - lambda * b).abs());
        den = den.max(b.abs());
    }
    if den > 0.0 {
        num / den
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToneKind {
    VariationalUpper,
    ConvergedEigenvalue,
    RigorousLower,
}

impl fmt::Display for ToneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ToneKind::VariationalUpper => "variational_upper",
            ToneKind::ConvergedEigenvalue => "converged_eigenvalue",
            ToneKind::RigorousLower => "rigorous_lower",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToneEstimate {
    pub value: f64,
    pub kind: ToneKind,
    pub p: f64,
    pub domain: String,
    pub cells: usize,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Relative change of the Rayleigh quotient between outer iterations.
    pub tol: f64,
    /// Required residual relative to λ.
    pub residual_tol: f64,
    pub max_outer: usize,
    pub max_newton: usize,
    pub inner: InnerSolver,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-10, residual_tol: 1e-7, max_outer: 500, max_newton: 200, inner: InnerSolver::FluxIntegration }
    }
}

/// Method for the convex subproblem of each inverse-iteration step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerSolver {
    /// Exact minimizer from the first integral of the discrete
    /// Euler–Lagrange equation: interface fluxes are partial sums of the
    /// right-hand side.
    FluxIntegration,
    /// Damped Newton on the tridiagonal Hessian with Armijo backtracking and
    /// a gradient-descent fallback.
    DampedNewton,
}

impl SolverOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }
}

/// Solves the symmetric tridiagonal system `(diag, off) x = rhs` in place.
fn thomas(diag: &[f64], off: &[f64], rhs: &mut [f64]) -> bool {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut denom = diag[0];
    if !(denom.abs() > 0.0) {
        return false;
    }
    c[0] = if n > 1 { off[0] / denom } else { 0.0 };
    rhs[0] /= denom;
    for i in 1..n {
        denom = diag[i] - off[i - 1] * c[i - 1];
        if !(denom.abs() > 0.0) || !denom.is_finite() {
            return false;
        }
        if i + 1 < n {
            c[i] = off[i] / denom;
        }
        rhs[i] = (rhs[i] - off[i - 1] * rhs[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
    rhs.iter().all(|v| v.is_finite())
}

/// Exact minimizer of `J(v) = (1/p) E(v) - <b, v>`.
///
/// Stationarity reads `F_i - F_{i+1} = b_i` for the interface fluxes
/// `F_j = w_j φ(D_j)`, so `F_j = F_0 - Σ_{i<j} b_i`. A natural end pins its
/// flux to zero; with two Dirichlet ends `F_0` is the root of the monotone
/// closure condition `Σ_j D_j = 0`.
fn minimize_by_flux(grid: &RadialGrid, params: &SpectralParams, b: &[f64], v: &mut [f64]) -> Result<(), SolverError> {
    let n = grid.len();
    let h = grid.spacing();
    let q = params.q();
    let phi_inv = |y: f64| if y == 0.0 { 0.0 } else { y.abs().powf(q - 1.0).copysign(y) };
    let mut partial = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    partial.push(0.0);
    for bi in b {
        acc += bi;
        partial.push(acc);
    }
    let weights: Vec<f64> = (0..=n).map(|j| grid.flux_weight(j)).collect();
    let slope = |f0: f64, j: usize| {
        let w = weights[j];
        if w == 0.0 {
            0.0
        } else {
            phi_inv((f0 - partial[j]) / w)
        }
    };
    let (left, right) = grid.boundaries();
    let f0 = match (left, right) {
        (Boundary::Natural, Boundary::Natural) => {
            return Err(SolverError::InnerSolve("grid has no Dirichlet end".into()));
        }
        (Boundary::Natural, Boundary::Dirichlet) => 0.0,
        (Boundary::Dirichlet, Boundary::Natural) => partial[n],
        (Boundary::Dirichlet, Boundary::Dirichlet) => {
            let closure = |f0: f64| (0..=n).map(|j| slope(f0, j)).sum::<f64>();
            let lo = partial.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = partial.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            find_root_increasing(closure, lo, hi)
        }
    };
    match right {
        Boundary::Dirichlet if left == Boundary::Natural => {
            // integrate inward from the outer ghost
            let mut val = -h * slope(f0, n);
            for i in (0..n).rev() {
                v[i] = val;
                val -= h * slope(f0, i);
            }
        }
        _ => {
            let mut val = 0.0;
            for (i, vi) in v.iter_mut().enumerate() {
                val += h * slope(f0, i);
                *vi = val;
            }
        }
    }
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(SolverError::InnerSolve("flux integration produced non-finite values".into()))
    }
}

/// Root of an increasing function on `[lo, hi]` by the Illinois variant of
/// regula falsi, falling back to bisection.
fn find_root_increasing<F: Fn(f64) -> f64>(g: F, mut lo: f64, mut hi: f64) -> f64 {
    let mut g_lo = g(lo);
    let mut g_hi = g(hi);
    if g_lo >= 0.0 {
        return lo;
    }
    if g_hi <= 0.0 {
        return hi;
    }
    let mut side = 0i8;
    for it in 0..400 {
        let x = if it % 4 == 3 { 0.5 * (lo + hi) } else { (lo * g_hi - hi * g_lo) / (g_hi - g_lo) };
        if !(x > lo && x < hi) {
            break;
        }
        let gx = g(x);
        if gx == 0.0 {
            return x;
        }
        if gx < 0.0 {
            lo = x;
            g_lo = gx;
            if side == -1 {
                g_hi *= 0.5;
            }
            side = -1;
        } else {
            hi = x;
            g_hi = gx;
            if side == 1 {
                g_lo *= 0.5;
            }
            side = 1;
        }
    }
    if -g_lo < g_hi {
        lo
    } else {
        hi
    }
}

/// Minimizes `J(v) = (1/p) E(v) - <b, v>` starting from `v`.
fn minimize_convex(
    grid: &RadialGrid,
    params: &SpectralParams,
    b: &[f64],
    v: &mut [f64],
    damping: f64,
    max_newton: usize,
) -> Result<(), SolverError> {
    let n = grid.len();
    let p = params.p();
    let h = grid.spacing();
    let objective = |x: &[f64]| energy_of(grid, x, p) / p - b.iter().zip(x).map(|(bi, xi)| bi * xi).sum::<f64>();
    let mut grad = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n.saturating_sub(1)];
    let mut dir = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let b_scale = b.iter().fold(0.0f64, |m, x| m.max(x.abs()));

    let mut j_cur = objective(v);
    for _ in 0..max_newton {
        energy_gradient(grid, v, params, &mut grad);
        let mut flux_scale = b_scale;
        let mut d_scale: f64 = 0.0;
        for j in 0..=n {
            let w = grid.flux_weight(j);
            let d = grid.interface_gradient(v, j);
            flux_scale = flux_scale.max(w * d.abs().powf(p - 1.0));
            d_scale = d_scale.max(d.abs());
        }
        for (g, bi) in grad.iter_mut().zip(b) {
            *g -= bi;
        }
        let g_norm = grad.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if g_norm <= 1e-13 * flux_scale {
            return Ok(());
        }

        // Hessian of (1/p)E with |D|^{p-2} regularized at D = 0
        let eps = 1e-12 * d_scale.max(f64::MIN_POSITIVE);
        let curvature = |j: usize| {
            let w = grid.flux_weight(j);
            if w == 0.0 {
                return 0.0;
            }
            let d = grid.interface_gradient(v, j);
            w * (p - 1.0) * (d * d + eps * eps).powf(0.5 * (p - 2.0)) / h
        };
        let mut c_prev = curvature(0);
        for i in 0..n {
            let c_next = curvature(i + 1);
            diag[i] = c_prev + c_next;
            if i + 1 < n {
                off[i] = -c_next;
            }
            c_prev = c_next;
        }
        for (d, g) in dir.iter_mut().zip(&grad) {
            *d = -g;
        }
        let newton_ok = thomas(&diag, &off, &mut dir);
        let slope: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();

        let accepted = if newton_ok && slope < 0.0 {
            line_search(&objective, v, &dir, slope, j_cur, damping, &mut trial)
        } else {
            None
        };
        let accepted = match accepted {
            Some(val) => Some(val),
            None => {
                // gradient fallback, scaled by the Hessian diagonal
                let dmax = diag.iter().fold(0.0f64, |m, x| m.max(*x)).max(f64::MIN_POSITIVE);
                for (d, g) in dir.iter_mut().zip(&grad) {
                    *d = -g / dmax;
                }
                let slope: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
                line_search(&objective, v, &dir, slope, j_cur, 1.0, &mut trial)
            }
        };
        match accepted {
            Some(val) => {
                v.copy_from_slice(&trial);
                j_cur = val;
            }
            None => {
                // no representable decrease left: accept if the gradient is at
                // round-off level
                if g_norm <= 1e-9 * flux_scale {
                    return Ok(());
                }
                return Err(SolverError::InnerSolve(format!(
                    "line search stalled with gradient {g_norm:e} (flux scale {flux_scale:e})"
                )));
            }
        }
    }
    energy_gradient(grid, v, params, &mut grad);
    let g_norm = grad.iter().zip(b).fold(0.0f64, |m, (g, bi)| m.max((g - bi).abs()));
    let flux_scale = (0..=n).fold(b_scale, |m, j| {
        m.max(grid.flux_weight(j) * grid.interface_gradient(v, j).abs().powf(p - 1.0))
    });
    // slow degenerate convergence near D = 0 for p > 2 stalls well above
    // round-off; accept at the outer residual scale
    if g_norm <= 1e-7 * flux_scale {
        Ok(())
    } else {
        Err(SolverError::InnerSolve(format!("Newton did not converge (gradient {g_norm:e}, flux scale {flux_scale:e})")))
    }
}

/// Armijo backtracking; writes the accepted point into `trial`.
fn line_search<F: Fn(&[f64]) -> f64>(
    objective: &F,
    v: &[f64],
    dir: &[f64],
    slope: f64,
    j_cur: f64,
    t0: f64,
    trial: &mut [f64],
) -> Option<f64> {
    const C1: f64 = 1e-4;
    let mut t = t0;
    for _ in 0..60 {
        for ((x, vi), d) in trial.iter_mut().zip(v).zip(dir) {
            *x = vi + t * d;
        }
        let val = objective(trial);
        if val.is_finite() && val <= j_cur + C1 * t * slope {
            return Some(val);
        }
        t *= 0.5;
    }
    None
}

fn normalize(grid: &RadialGrid, values: &mut [f64], p: f64) -> Result<(), SolverError> {
    let mass = mass_of(grid, values, p);
    if !(mass > 0.0) || !mass.is_finite() {
        return Err(SolverError::ZeroMass);
    }
    let s = mass.powf(-1.0 / p);
    values.iter_mut().for_each(|v| *v *= s);
    Ok(())
}

/// First eigenpair of the discrete problem on `grid` by inverse iteration.
pub fn solve_on_grid(
    grid: Arc<RadialGrid>,
    params: &SpectralParams,
    opts: &SolverOptions,
) -> Result<(ToneEstimate, RadialFunction), SolverError> {
    if !(opts.tol > 0.0) {
        return Err(SolverError::InvalidTolerance(opts.tol));
    }
    if !grid.has_dirichlet() {
        return Err(SolverError::InnerSolve("grid has no Dirichlet end".into()));
    }
    let p = params.p();
    let h = grid.spacing();
    let n = grid.len();
    let mut u = grid.tent();
    normalize(&grid, &mut u, p)?;
    let mut lambda = energy_of(&grid, &u, p);
    let mut best = (lambda, u.clone());
    let mut b = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut damping = 1.0;
    let mut retried = false;
    let mut iterations = 0;
    let mut converged = false;

    for it in 1..=opts.max_outer {
        iterations = it;
        for ((bi, s), ui) in b.iter_mut().zip(grid.center_weights()).zip(&u) {
            *bi = s * h * params.phi(*ui);
        }
        let warm = lambda.powf(-1.0 / (p - 1.0));
        for (vi, ui) in v.iter_mut().zip(&u) {
            *vi = ui * warm;
        }
        match opts.inner {
            InnerSolver::FluxIntegration => minimize_by_flux(&grid, params, &b, &mut v)?,
            InnerSolver::DampedNewton => minimize_convex(&grid, params, &b, &mut v, damping, opts.max_newton)?,
        }
        normalize(&grid, &mut v, p)?;
        let next = energy_of(&grid, &v, p);
        if next > lambda * (1.0 + 1e-14) {
            if retried {
                break;
            }
            retried = true;
            damping *= 0.5;
            continue;
        }
        let change = (lambda - next).abs() / next;
        std::mem::swap(&mut u, &mut v);
        lambda = next;
        if lambda <= best.0 {
            best = (lambda, u.clone());
        }
        if change < opts.tol {
            let f = RadialFunction::new(grid.clone(), u.clone());
            if eigen_residual(&f, params, lambda) <= opts.residual_tol * lambda {
                converged = true;
                break;
            }
        }
    }

    let (value, values) = if converged { (lambda, u) } else { best };
    let mut u = RadialFunction::new(grid.clone(), values);
    if u.values.iter().sum::<f64>() < 0.0 {
        u = u.scaled(-1.0);
    }
    let residual = eigen_residual(&u, params, value);
    let estimate = ToneEstimate {
        value,
        kind: if converged { ToneKind::ConvergedEigenvalue } else { ToneKind::VariationalUpper },
        p,
        domain: grid.domain().map_or_else(|| "interval".to_string(), |d| d.to_string()),
        cells: n,
        iterations,
        residual,
    };
    Ok((estimate, u))
}

/// Fundamental tone of `domain` in `model` on an `cells`-cell grid.
pub fn solve_first_tone(
    model: &WarpedModel,
    domain: RadialDomain,
    params: &SpectralParams,
    cells: usize,
    tol: f64,
) -> Result<(ToneEstimate, RadialFunction), SolverError> {
    let grid = Arc::new(RadialGrid::new(model, domain, cells)?);
    solve_on_grid(grid, params, &SolverOptions::with_tol(tol))
}

/// Independent oracle for tiny grids: random sampling of the unit sphere of
/// cell values followed by coordinate pattern search on the quotient.
pub fn brute_force_tone(grid: &RadialGrid, params: &SpectralParams, samples: usize, seed: u64) -> Result<f64, SolverError> {
    let n = grid.len();
    if n < 2 {
        return Err(SolverError::InvalidCellCount { min: 2, got: n });
    }
    if n > 6 {
        return Err(SolverError::BruteForceTooLarge(n));
    }
    let p = params.p();
    let quotient = |x: &[f64]| {
        let m = mass_of(grid, x, p);
        if m > 0.0 {
            energy_of(grid, x, p) / m
        } else {
            f64::INFINITY
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts: Vec<(f64, Vec<f64>)> = Vec::new();
    for _ in 0..samples.max(1) {
        let mut x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // sign normalization: first nonzero entry positive
        if let Some(first) = x.iter().find(|v| **v != 0.0).copied() {
            if first < 0.0 {
                x.iter_mut().for_each(|v| *v = -*v);
            }
        }
        let val = quotient(&x);
        starts.push((val, x));
        starts.sort_by(|a, b| a.0.total_cmp(&b.0));
        starts.truncate(8);
    }
    let mut best = f64::INFINITY;
    for (mut val, mut x) in starts {
        let mut step = 0.25;
        while step > 1e-12 {
            let mut improved = false;
            for i in 0..n {
                for dir in [1.0, -1.0] {
                    let old = x[i];
                    x[i] = old + dir * step;
                    let trial = quotient(&x);
                    if trial < val {
                        val = trial;
                        improved = true;
                    } else {
                        x[i] = old;
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
            let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if scale > 0.0 && (scale - 1.0).abs() > 0.5 {
                x.iter_mut().for_each(|v| *v /= scale);
            }
        }
        best = best.min(val);
    }
    Ok(best)
}

/// Limit of `values` as the widths grow, assuming `λ(w) = L + C w^{-α}` on
/// the last three points. Falls back to the last value when the tail is not
/// strictly decreasing or the fit is degenerate. The result is clamped to
/// `[0, last]`.
pub fn extrapolate_limit(widths: &[f64], values: &[f64]) -> f64 {
    let n = values.len();
    let last = match values.last() {
        Some(&v) => v,
        None => return f64::NAN,
    };
    if n < 3 || widths.len() != n {
        return last;
    }
    let (w1, w2, w3) = (widths[n - 3], widths[n - 2], widths[n - 1]);
    let (l1, l2, l3) = (values[n - 3], values[n - 2], values[n - 1]);
    let (d1, d2) = (l1 - l2, l2 - l3);
    if !(d1 > 0.0 && d2 > 0.0) || !(w1 > 0.0 && w2 > w1 && w3 > w2) {
        return last;
    }
    let target = d1 / d2;
    let ratio = |a: f64| (w1.powf(-a) - w2.powf(-a)) / (w2.powf(-a) - w3.powf(-a));
    let (mut lo, mut hi) = (1e-3, 40.0);
    if !(ratio(lo) <= target && target <= ratio(hi)) {
        return last;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ratio(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let alpha = 0.5 * (lo + hi);
    let c = d2 / (w2.powf(-alpha) - w3.powf(-alpha));
    let limit = l3 - c * w3.powf(-alpha);
    limit.clamp(0.0, last)
}

/// Tones of an exhaustion by balls or annuli plus the extrapolated limit.
#[derive(Debug, Clone)]
pub struct ExhaustionEstimate {
    pub radii: Vec<f64>,
    pub tones: Vec<ToneEstimate>,
    /// Whether the sequence is non-increasing.
    pub monotone: bool,
    pub last: f64,
    pub extrapolated: f64,
}

pub(crate) fn exhaustion(
    model: &WarpedModel,
    params: &SpectralParams,
    inner: f64,
    radii: &[f64],
    cells: usize,
    opts: &SolverOptions,
) -> Result<ExhaustionEstimate, SolverError> {
    if radii.is_empty() || radii.windows(2).any(|w| w[1] <= w[0]) || radii[0] <= inner {
        return Err(SolverError::InvalidRadii);
    }
    let tones = radii
        .par_iter()
        .map(|&r| {
            let domain = if inner > 0.0 { RadialDomain::annulus(inner, r)? } else { RadialDomain::ball(r)? };
            let grid = Arc::new(RadialGrid::new(model, domain, cells)?);
            solve_on_grid(grid, params, opts).map(|(t, _)| t)
        })
        .collect::<Result<Vec<_>, SolverError>>()?;
    let values: Vec<f64> = tones.iter().map(|t| t.value).collect();
    let widths: Vec<f64> = radii.iter().map(|r| r - inner).collect();
    let monotone = values.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));
    let last = *values.last().unwrap();
    Ok(ExhaustionEstimate {
        radii: radii.to_vec(),
        monotone,
        last,
        extrapolated: extrapolate_limit(&widths, &values),
        tones,
    })
}

/// Fundamental tones of the balls `B_R`, `R` in `radii`, approximating the
/// tone of the whole open manifold.
pub fn tone_of_open_manifold(
    model: &WarpedModel,
    params: &SpectralParams,
    radii: &[f64],
    cells: usize,
    opts: &SolverOptions,
) -> Result<ExhaustionEstimate, SolverError> {
    exhaustion(model, params, 0.0, radii, cells, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn flat(cells: usize) -> Arc<RadialGrid> {
        Arc::new(RadialGrid::flat(0.0, 1.0, cells, Boundary::Dirichlet, Boundary::Dirichlet).unwrap())
    }

    #[test]
    fn params_reject_p_at_most_one() {
        assert!(SpectralParams::new(1.0).is_err());
        assert!(SpectralParams::new(0.5).is_err());
        assert!(SpectralParams::new(f64::NAN).is_err());
        let sp = SpectralParams::new(3.0).unwrap();
        assert_relative_eq!(sp.q(), 1.5);
    }

    #[test]
    fn grid_layout() {
        let m = WarpedModel::euclidean(3).unwrap();
        let g = RadialGrid::new(&m, RadialDomain::ball(1.0).unwrap(), 4).unwrap();
        assert_eq!(g.interfaces(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(g.centers(), &[0.125, 0.375, 0.625, 0.875]);
        assert_eq!(g.boundaries(), (Boundary::Natural, Boundary::Dirichlet));

        let g = RadialGrid::new(&m, RadialDomain::annulus(1.0, 3.0).unwrap(), 8).unwrap();
        assert_eq!(g.spacing(), 0.25);
        assert_eq!(g.interfaces()[0], 1.0);

        let m = WarpedModel::hyperbolic(2, 1.0).unwrap();
        let g = RadialGrid::new(&m, RadialDomain::ball(2.0).unwrap(), 2).unwrap();
        let w = g.interface_weights();
        assert_eq!(w[0], 0.0);
        assert_relative_eq!(w[1], 2.0 * PI * 1f64.sinh(), max_relative = 1e-15);
        assert_relative_eq!(w[2], 2.0 * PI * 2f64.sinh(), max_relative = 1e-15);

        assert!(RadialGrid::new(&m, RadialDomain::ball(2.0).unwrap(), 1).is_err());
    }

    #[test]
    fn energy_examples() {
        let sp = SpectralParams::new(2.0).unwrap();
        let zero = RadialFunction::new(flat(5), vec![0.0; 5]);
        assert_eq!(p_energy(&zero, &sp), 0.0);
        assert_eq!(rayleigh_quotient(&zero, &sp), Err(SolverError::ZeroMass));
        let ones = RadialFunction::new(flat(2), vec![1.0, 1.0]);
        assert_relative_eq!(p_energy(&ones, &sp), 4.0, max_relative = 1e-15);
    }

    #[test]
    fn sine_energy_converges_at_first_order() {
        // the ghost value sits one cell outside, so the boundary cells
        // contribute an O(h) defect
        let sp = SpectralParams::new(2.0).unwrap();
        let err = |n: usize| {
            let u = RadialFunction::from_fn(flat(n), |x| (PI * x).sin());
            (p_energy(&u, &sp) - PI * PI / 2.0).abs()
        };
        let (e1, e2) = (err(1024), err(2048));
        assert!(e2 < 1e-3 * PI * PI / 2.0);
        assert_relative_eq!(e1 / e2, 2.0, max_relative = 0.05);
        let u = RadialFunction::from_fn(flat(2048), |x| (PI * x).sin());
        assert_relative_eq!(rayleigh_quotient(&u, &sp).unwrap(), PI * PI, max_relative = 1e-3);
    }

    #[test]
    fn tent_quotient_matches_exact_integrals() {
        // piecewise linear tent sampled finely: ∫u'^2 = 4, ∫u^2 = 1/3
        let sp = SpectralParams::new(2.0).unwrap();
        let u = RadialFunction::from_fn(flat(4096), |x| 1.0 - (2.0 * x - 1.0).abs());
        assert_relative_eq!(rayleigh_quotient(&u, &sp).unwrap(), 12.0, max_relative = 1e-3);
    }

    #[test]
    fn quotient_is_homogeneous() {
        let sp = SpectralParams::new(2.7).unwrap();
        let u = RadialFunction::from_fn(flat(50), |x| x * (1.0 - x) * (1.0 + x));
        let a = rayleigh_quotient(&u, &sp).unwrap();
        let b = rayleigh_quotient(&u.scaled(3.0), &sp).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-12);
    }

    #[test]
    fn thomas_solves_small_system() {
        let diag = [2.0, 2.0, 2.0];
        let off = [-1.0, -1.0];
        let mut rhs = [1.0, 0.0, 1.0];
        assert!(thomas(&diag, &off, &mut rhs));
        for x in rhs {
            assert_relative_eq!(x, 1.0, max_relative = 1e-15);
        }
    }

    #[test]
    fn brute_force_matches_three_by_three_matrix() {
        // smallest eigenvalue of tridiag(-1, 2, -1) is 2 - √2 (roots of the
        // characteristic polynomial (2-μ)((2-μ)^2 - 2)); the quotient carries 1/h^2 = 9
        let sp = SpectralParams::new(2.0).unwrap();
        let g = flat(3);
        let bf = brute_force_tone(&g, &sp, 4000, 7).unwrap();
        assert_relative_eq!(bf, 9.0 * (2.0 - 2f64.sqrt()), max_relative = 1e-9);
        let (t, _) = solve_on_grid(g, &sp, &SolverOptions::default()).unwrap();
        assert_relative_eq!(t.value, 9.0 * (2.0 - 2f64.sqrt()), max_relative = 1e-9);
    }

    #[test]
    fn brute_force_preconditions() {
        let sp = SpectralParams::new(2.0).unwrap();
        assert_eq!(brute_force_tone(&flat(7), &sp, 10, 1), Err(SolverError::BruteForceTooLarge(7)));
        assert!(RadialGrid::flat(0.0, 1.0, 1, Boundary::Dirichlet, Boundary::Dirichlet).is_err());
    }

    #[test]
    fn all_natural_grid_is_rejected() {
        let sp = SpectralParams::new(2.0).unwrap();
        let g = Arc::new(RadialGrid::flat(0.0, 1.0, 8, Boundary::Natural, Boundary::Natural).unwrap());
        assert!(solve_on_grid(g, &sp, &SolverOptions::default()).is_err());
    }

    #[test]
    fn solver_converges_on_small_grids_for_several_p() {
        for p in [1.3, 2.0, 3.5] {
            let sp = SpectralParams::new(p).unwrap();
            let (t, u) = solve_on_grid(flat(64), &sp, &SolverOptions::default()).unwrap();
            assert_eq!(t.kind, ToneKind::ConvergedEigenvalue, "p = {p}");
            assert!(u.values().iter().all(|v| *v > 0.0));
            assert!(t.residual <= 1e-7 * t.value);
        }
    }

    #[test]
    fn extrapolation_recovers_power_law_limit() {
        let widths = [4.0, 6.0, 9.0, 13.0];
        let values: Vec<f64> = widths.iter().map(|w: &f64| 0.25 + 3.0 * w.powf(-1.7)).collect();
        assert_relative_eq!(extrapolate_limit(&widths, &values), 0.25, max_relative = 1e-9);
        // non-monotone tails fall back to the last value
        assert_eq!(extrapolate_limit(&[1.0, 2.0, 3.0], &[1.0, 0.5, 0.6]), 0.6);
        assert_eq!(extrapolate_limit(&[2.0], &[0.7]), 0.7);
    }
}
