//! Rotationally symmetric model manifolds `dr² + f(r)² dθ²`.
//!
//! A [`WarpedModel`] is a dimension together with a warp function `f`. The
//! space forms of constant curvature `k` use the closed forms
//!
//! ```text
//! f_k(r) = sin(√k r)/√k   (k > 0),   r   (k = 0),   sinh(√-k r)/√-k   (k < 0)
//! ```
//!
//! and every radial quantity the solver and the bounds need (`f'/f`, the
//! Laplacian of the distance function, sphere areas, ball volumes) is
//! evaluated here.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use crate::error::GeometryError;
use crate::interp::MonotoneCubic;
use crate::quadrature::adaptive_simpson;

/// Relative tolerance for ball-volume quadrature.
pub const VOLUME_REL_TOL: f64 = 1e-10;

pub type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// User supplied warp `f` with its first derivative and, optionally, its
/// second derivative.
#[derive(Clone)]
pub struct CustomWarp {
    pub f: RealFn,
    pub f_prime: RealFn,
    pub f_second: Option<RealFn>,
    pub label: String,
}

impl CustomWarp {
    pub fn new(
        label: impl Into<String>,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        f_prime: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { f: Arc::new(f), f_prime: Arc::new(f_prime), f_second: None, label: label.into() }
    }

    pub fn with_second_derivative(mut self, f_second: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.f_second = Some(Arc::new(f_second));
        self
    }
}

#[derive(Clone)]
pub enum Warp {
    SpaceForm { curvature: f64 },
    Custom(CustomWarp),
}

impl fmt::Debug for Warp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Warp::SpaceForm { curvature } => write!(f, "SpaceForm(k = {curvature})"),
            Warp::Custom(c) => write!(f, "Custom({})", c.label),
        }
    }
}

#[derive(Debug, Clone)]
pub struct WarpedModel {
    dim: usize,
    warp: Warp,
    r_min: f64,
    r_max: f64,
    pole: bool,
    unit_sphere_area: f64,
}

/// Area of the unit `(n-1)`-sphere, `2 π^{n/2} / Γ(n/2)`.
pub fn unit_sphere_area(n: usize) -> f64 {
    // Γ(n/2) by the recursion Γ(x+1) = x Γ(x) from Γ(1) = 1 or Γ(1/2) = √π
    let mut gamma = if n.is_multiple_of(2) { 1.0 } else { PI.sqrt() };
    let mut x = if n.is_multiple_of(2) { 1.0 } else { 0.5 };
    while x < n as f64 / 2.0 - 0.25 {
        gamma *= x;
        x += 1.0;
    }
    2.0 * PI.powf(n as f64 / 2.0) / gamma
}

impl WarpedModel {
    /// Space form of constant curvature `k`. For `k > 0` the model is the
    /// round sphere and `r_max = π/√k`; otherwise `r_max = ∞`.
    pub fn space_form(dim: usize, curvature: f64) -> Result<Self, GeometryError> {
        check_dim(dim)?;
        if !curvature.is_finite() {
            return Err(GeometryError::InvalidDomain(format!("curvature {curvature} is not finite")));
        }
        let r_max = if curvature > 0.0 { PI / curvature.sqrt() } else { f64::INFINITY };
        Ok(Self {
            dim,
            warp: Warp::SpaceForm { curvature },
            r_min: 0.0,
            r_max,
            pole: true,
            unit_sphere_area: unit_sphere_area(dim),
        })
    }

    pub fn euclidean(dim: usize) -> Result<Self, GeometryError> {
        Self::space_form(dim, 0.0)
    }

    /// Hyperbolic space `H^n(-c²)`.
    pub fn hyperbolic(dim: usize, c: f64) -> Result<Self, GeometryError> {
        if !(c > 0.0) {
            return Err(GeometryError::InvalidDomain(format!("hyperbolic scale c = {c} must be positive")));
        }
        Self::space_form(dim, -c * c)
    }

    /// Custom warp valid on `[r_min, r_max]`. The model has a pole when
    /// `r_min = 0` and `f(0) = 0`.
    pub fn custom(dim: usize, warp: CustomWarp, r_min: f64, r_max: f64) -> Result<Self, GeometryError> {
        check_dim(dim)?;
        if !(r_min >= 0.0 && r_max > r_min && r_max.is_finite()) {
            return Err(GeometryError::InvalidDomain(format!("custom warp range [{r_min}, {r_max}]")));
        }
        let pole = r_min == 0.0 && (warp.f)(0.0).abs() < 1e-14;
        Ok(Self { dim, warp: Warp::Custom(warp), r_min, r_max, pole, unit_sphere_area: unit_sphere_area(dim) })
    }

    /// Model whose warp is read from a two-column CSV `r,f(r)` (header
    /// optional, at least three rows) and interpolated by a monotone cubic.
    pub fn from_warp_table(dim: usize, path: &Path, r_max: Option<f64>) -> Result<Self, GeometryError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| GeometryError::WarpTable(format!("{}: {e}", path.display())))?;
        let mut rs = Vec::new();
        let mut fs = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| GeometryError::WarpTable(e.to_string()))?;
            if record.len() < 2 {
                return Err(GeometryError::WarpTable(format!("row {} has fewer than two columns", line + 1)));
            }
            match (record[0].parse::<f64>(), record[1].parse::<f64>()) {
                (Ok(r), Ok(f)) => {
                    rs.push(r);
                    fs.push(f);
                }
                // a non-numeric first row is a header
                _ if line == 0 => continue,
                _ => return Err(GeometryError::WarpTable(format!("row {} is not numeric", line + 1))),
            }
        }
        Self::from_samples(dim, rs, fs, r_max)
    }

    /// Model from tabulated warp samples, interpolated by a monotone cubic.
    pub fn from_samples(dim: usize, rs: Vec<f64>, fs: Vec<f64>, r_max: Option<f64>) -> Result<Self, GeometryError> {
        if rs.len() < 3 {
            return Err(GeometryError::WarpTable(format!("need at least 3 points, got {}", rs.len())));
        }
        if fs.iter().skip(1).any(|&f| f <= 0.0) {
            return Err(GeometryError::WarpTable("warp must be positive away from r_min".into()));
        }
        let interp = Arc::new(
            MonotoneCubic::new(rs, fs).ok_or_else(|| GeometryError::WarpTable("abscissae must increase".into()))?,
        );
        let (lo, hi) = (interp.x_min(), interp.x_max());
        let r_max = match r_max {
            Some(r) if r <= hi => r,
            Some(r) => return Err(GeometryError::Domain { r, lo, hi }),
            None => hi,
        };
        let (fv, fd) = (interp.clone(), interp);
        let warp = CustomWarp::new("warp_table", move |r| fv.value(r), move |r| fd.derivative(r));
        Self::custom(dim, warp, lo, r_max)
    }

    /// Restricts the validity range to `(r_min, r_max]`.
    pub fn with_r_max(mut self, r_max: f64) -> Result<Self, GeometryError> {
        if !(r_max > self.r_min && r_max <= self.r_max) {
            return Err(GeometryError::Domain { r: r_max, lo: self.r_min, hi: self.r_max });
        }
        self.r_max = r_max;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn warp(&self) -> &Warp {
        &self.warp
    }

    pub fn r_min(&self) -> f64 {
        self.r_min
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn has_pole(&self) -> bool {
        self.pole
    }

    pub fn unit_sphere_area(&self) -> f64 {
        self.unit_sphere_area
    }

    /// Constant curvature of a space form, `None` for custom warps.
    pub fn curvature(&self) -> Option<f64> {
        match self.warp {
            Warp::SpaceForm { curvature } => Some(curvature),
            Warp::Custom(_) => None,
        }
    }

    /// Upper limit for `f'/f` evaluation: `π/(2√k)` on positively curved
    /// space forms, `r_max` otherwise.
    pub fn ratio_limit(&self) -> f64 {
        match self.warp {
            Warp::SpaceForm { curvature } if curvature > 0.0 => 0.5 * PI / curvature.sqrt(),
            _ => self.r_max,
        }
    }

    fn check_closed(&self, r: f64) -> Result<(), GeometryError> {
        if r >= self.r_min && r <= self.r_max && r.is_finite() {
            Ok(())
        } else {
            Err(GeometryError::Domain { r, lo: self.r_min, hi: self.r_max })
        }
    }

    fn check_ratio(&self, r: f64) -> Result<(), GeometryError> {
        let limit = self.ratio_limit();
        let strict_upper = matches!(self.warp, Warp::SpaceForm { curvature } if curvature > 0.0);
        let above = if strict_upper { r >= limit } else { r > limit };
        if r <= self.r_min || r <= 0.0 || above || !r.is_finite() {
            Err(GeometryError::Domain { r, lo: self.r_min.max(0.0), hi: limit })
        } else {
            Ok(())
        }
    }

    /// Warp `f(r)`.
    pub fn warp_value(&self, r: f64) -> Result<f64, GeometryError> {
        self.check_closed(r)?;
        Ok(self.raw_warp(r))
    }

    /// Warp derivative `f'(r)`.
    pub fn warp_derivative(&self, r: f64) -> Result<f64, GeometryError> {
        self.check_closed(r)?;
        Ok(self.raw_warp_prime(r))
    }

    fn raw_warp(&self, r: f64) -> f64 {
        match &self.warp {
            Warp::SpaceForm { curvature: k } => {
                let k = *k;
                if k > 0.0 {
                    let s = k.sqrt();
                    (s * r).sin() / s
                } else if k < 0.0 {
                    let s = (-k).sqrt();
                    (s * r).sinh() / s
                } else {
                    r
                }
            }
            Warp::Custom(c) => (c.f)(r),
        }
    }

    fn raw_warp_prime(&self, r: f64) -> f64 {
        match &self.warp {
            Warp::SpaceForm { curvature: k } => {
                let k = *k;
                if k > 0.0 {
                    (k.sqrt() * r).cos()
                } else if k < 0.0 {
                    ((-k).sqrt() * r).cosh()
                } else {
                    1.0
                }
            }
            Warp::Custom(c) => (c.f_prime)(r),
        }
    }

    /// `ln f(r)`, stable for large `r` on hyperbolic space forms.
    pub fn log_warp(&self, r: f64) -> Result<f64, GeometryError> {
        self.check_closed(r)?;
        Ok(match self.warp {
            Warp::SpaceForm { curvature: k } if k < 0.0 => {
                let s = (-k).sqrt();
                let x = s * r;
                if x > 20.0 {
                    x + (-(-2.0 * x).exp()).ln_1p() - std::f64::consts::LN_2 - s.ln()
                } else {
                    (x.sinh() / s).ln()
                }
            }
            _ => self.raw_warp(r).ln(),
        })
    }

    /// `μ_f(r) = f'(r)/f(r)`.
    pub fn warp_ratio(&self, r: f64) -> Result<f64, GeometryError> {
        self.check_ratio(r)?;
        match self.warp {
            Warp::SpaceForm { curvature: k } => Ok(if k < 0.0 {
                let s = (-k).sqrt();
                s / (s * r).tanh()
            } else if k > 0.0 {
                let s = k.sqrt();
                s / (s * r).tan()
            } else {
                1.0 / r
            }),
            Warp::Custom(ref c) => {
                let f = (c.f)(r);
                if f == 0.0 {
                    return Err(GeometryError::Pole(r));
                }
                Ok((c.f_prime)(r) / f)
            }
        }
    }

    /// Laplacian of the distance function on the model, `(n-1) f'/f`.
    pub fn distance_laplacian(&self, r: f64) -> Result<f64, GeometryError> {
        Ok((self.dim - 1) as f64 * self.warp_ratio(r)?)
    }

    /// Radial sectional curvature `-f''/f`.
    pub fn radial_curvature(&self, r: f64) -> Result<f64, GeometryError> {
        if r <= self.r_min || r > self.r_max || !r.is_finite() {
            return Err(GeometryError::Domain { r, lo: self.r_min, hi: self.r_max });
        }
        match &self.warp {
            Warp::SpaceForm { curvature } => Ok(*curvature),
            Warp::Custom(c) => {
                let f = (c.f)(r);
                if f == 0.0 {
                    return Err(GeometryError::Pole(r));
                }
                let second = match &c.f_second {
                    Some(fs) => fs(r),
                    None => {
                        let h = (1e-5 * r).max(1e-5);
                        if r - h > self.r_min {
                            ((c.f_prime)(r + h) - (c.f_prime)(r - h)) / (2.0 * h)
                        } else {
                            (-3.0 * (c.f_prime)(r) + 4.0 * (c.f_prime)(r + h) - (c.f_prime)(r + 2.0 * h))
                                / (2.0 * h)
                        }
                    }
                };
                Ok(-second / f)
            }
        }
    }

    /// Area of the geodesic sphere of radius `r`, `ω_{n-1} f(r)^{n-1}`.
    pub fn sphere_area(&self, r: f64) -> Result<f64, GeometryError> {
        self.check_closed(r)?;
        if r == 0.0 && self.pole {
            return Ok(0.0);
        }
        Ok(self.unit_sphere_area * self.raw_warp(r).powi(self.dim as i32 - 1))
    }

    /// `ln S(r)`.
    pub fn log_sphere_area(&self, r: f64) -> Result<f64, GeometryError> {
        Ok(self.unit_sphere_area.ln() + (self.dim - 1) as f64 * self.log_warp(r)?)
    }

    /// Volume enclosed between `r_min` and `r`; the geodesic ball `B_r` for
    /// models with a pole. Space forms use the closed-form antiderivative
    /// where it is well conditioned and adaptive quadrature elsewhere.
    pub fn ball_volume(&self, r: f64) -> Result<f64, GeometryError> {
        self.check_closed(r)?;
        if let Warp::SpaceForm { curvature: k } = self.warp {
            if let Some(v) = space_form_volume(self.dim, k, r, self.unit_sphere_area) {
                return Ok(v);
            }
        }
        self.ball_volume_quadrature(r)
    }

    /// Ball volume by adaptive Simpson on the sphere area.
    pub fn ball_volume_quadrature(&self, r: f64) -> Result<f64, GeometryError> {
        self.check_closed(r)?;
        adaptive_simpson(|t| self.sphere_area(t).unwrap_or(f64::NAN), self.r_min, r, VOLUME_REL_TOL)
            .ok_or(GeometryError::Quadrature { lo: self.r_min, hi: r })
    }

    /// `ln V(r)` without overflow: the integrand is rescaled by `S(r)`.
    pub fn log_ball_volume(&self, r: f64) -> Result<f64, GeometryError> {
        self.check_closed(r)?;
        if r <= self.r_min {
            return Ok(f64::NEG_INFINITY);
        }
        let log_s = self.log_sphere_area(r)?;
        if log_s < 600.0 {
            return Ok(self.ball_volume(r)?.ln());
        }
        let scaled = adaptive_simpson(
            |t| {
                if t <= self.r_min && self.pole {
                    0.0
                } else {
                    self.log_sphere_area(t).map(|l| (l - log_s).exp()).unwrap_or(f64::NAN)
                }
            },
            self.r_min,
            r,
            VOLUME_REL_TOL,
        )
        .ok_or(GeometryError::Quadrature { lo: self.r_min, hi: r })?;
        Ok(log_s + scaled.ln())
    }
}

fn check_dim(dim: usize) -> Result<(), GeometryError> {
    if dim < 2 {
        Err(GeometryError::InvalidDimension(dim))
    } else {
        Ok(())
    }
}

/// Closed-form `∫_0^r ω f_k^{n-1}`; `None` where the reduction formula loses
/// precision (small `√|k| r`).
fn space_form_volume(dim: usize, k: f64, r: f64, omega: f64) -> Option<f64> {
    let m = dim - 1;
    if k == 0.0 {
        return Some(omega * r.powi(dim as i32) / dim as f64);
    }
    let s = k.abs().sqrt();
    let x = s * r;
    if m > 1 && x < 1.0 {
        return None;
    }
    let integral = if k < 0.0 { sinh_power_integral(m, x) } else { sin_power_integral(m, x) };
    Some(omega * integral / s.powi(dim as i32))
}

/// `∫_0^x sinh^m t dt` by the reduction formula.
fn sinh_power_integral(m: usize, x: f64) -> f64 {
    let (sh, ch) = (x.sinh(), x.cosh());
    let mut prev2 = x; // I_0
    let half = (0.5 * x).sinh();
    let mut prev1 = 2.0 * half * half; // I_1 = cosh x - 1
    if m == 0 {
        return prev2;
    }
    for j in 2..=m {
        let jf = j as f64;
        let next = sh.powi(j as i32 - 1) * ch / jf - (jf - 1.0) / jf * prev2;
        prev2 = prev1;
        prev1 = next;
    }
    prev1
}

/// `∫_0^x sin^m t dt` by the reduction formula.
fn sin_power_integral(m: usize, x: f64) -> f64 {
    let (sn, cs) = (x.sin(), x.cos());
    let mut prev2 = x;
    let half = (0.5 * x).sin();
    let mut prev1 = 2.0 * half * half; // 1 - cos x
    if m == 0 {
        return prev2;
    }
    for j in 2..=m {
        let jf = j as f64;
        let next = -sn.powi(j as i32 - 1) * cs / jf + (jf - 1.0) / jf * prev2;
        prev2 = prev1;
        prev1 = next;
    }
    prev1
}

/// Domain on which a fundamental tone is computed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RadialDomain {
    Ball { radius: f64 },
    Annulus { inner: f64, outer: f64 },
}

impl RadialDomain {
    pub fn ball(radius: f64) -> Result<Self, GeometryError> {
        if radius > 0.0 && radius.is_finite() {
            Ok(Self::Ball { radius })
        } else {
            Err(GeometryError::InvalidDomain(format!("ball radius {radius} must be positive")))
        }
    }

    pub fn annulus(inner: f64, outer: f64) -> Result<Self, GeometryError> {
        if inner > 0.0 && outer > inner && outer.is_finite() {
            Ok(Self::Annulus { inner, outer })
        } else {
            Err(GeometryError::InvalidDomain(format!("annulus ({inner}, {outer}) needs 0 < r0 < r1")))
        }
    }

    /// Radial extent `(lo, hi)`.
    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            Self::Ball { radius } => (0.0, radius),
            Self::Annulus { inner, outer } => (inner, outer),
        }
    }

    /// Checks that the domain fits the model's validity range.
    pub fn validate(&self, model: &WarpedModel) -> Result<(), GeometryError> {
        match *self {
            Self::Ball { radius } => {
                if !model.has_pole() {
                    return Err(GeometryError::InvalidDomain("geodesic balls need a model with a pole".into()));
                }
                let antipode = matches!(model.curvature(), Some(k) if k > 0.0 && radius >= PI / k.sqrt());
                if radius > model.r_max() || antipode {
                    return Err(GeometryError::Domain { r: radius, lo: 0.0, hi: model.r_max() });
                }
            }
            Self::Annulus { inner, outer } => {
                if inner < model.r_min() || outer > model.r_max() {
                    return Err(GeometryError::InvalidDomain(format!(
                        "annulus ({inner}, {outer}) outside model range [{}, {}]",
                        model.r_min(),
                        model.r_max()
                    )));
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for RadialDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Ball { radius } => write!(f, "ball(R={radius})"),
            Self::Annulus { inner, outer } => write!(f, "annulus({inner},{outer})"),
        }
    }
}
