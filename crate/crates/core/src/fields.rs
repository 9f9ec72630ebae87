//! Vector-field lower bounds for the fundamental tone.
//!
//! Every field here is radial, `X = a(r) ∂r`, so `‖X‖ = |a|` and
//! `div X = a'(r) + a(r) (n-1) f'(r)/f(r)`. Two families of bounds are
//! evaluated:
//!
//! * the ratio bound `μ ≥ (inf div X / sup ‖X‖)^p / p^p`, valid when
//!   `inf div X > 0`;
//! * the pointwise bound `μ ≥ inf ((1-p) ‖X‖^q + div X)`, valid for any field.
//!
//! The infimum and supremum over the domain are approximated by dense
//! sampling plus the analytic limit at the pole of a ball.

use std::fmt;
use std::sync::Arc;

use crate::error::{FieldError, GeometryError};
use crate::geometry::{RadialDomain, RealFn, WarpedModel};
use crate::quadrature::golden_section_max;
use crate::tone::{Boundary, RadialFunction, SpectralParams};

/// Fields are clamped to this magnitude inside optimized families.
pub const FIELD_CLAMP: f64 = 1e6;

/// Radial component `a(r)` of a field `a(r) ∂r`.
#[derive(Clone)]
pub enum FieldShape {
    Constant(f64),
    /// `a(r) = slope · r`.
    Linear { slope: f64 },
    /// Linear interpolation between knots, constant beyond them.
    PiecewiseLinear { knots: Vec<f64>, values: Vec<f64> },
    Closed { a: RealFn, da: Option<RealFn> },
}

impl fmt::Debug for FieldShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(b) => write!(f, "Constant({b})"),
            Self::Linear { slope } => write!(f, "Linear({slope})"),
            Self::PiecewiseLinear { knots, .. } => write!(f, "PiecewiseLinear({} knots)", knots.len()),
            Self::Closed { .. } => f.write_str("Closed"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RadialField {
    shape: FieldShape,
    tag: String,
    /// Radial range on which the field is trusted; `None` means the whole
    /// domain.
    window: Option<(f64, f64)>,
}

impl RadialField {
    pub fn constant(beta: f64) -> Self {
        Self { shape: FieldShape::Constant(beta), tag: format!("constant:{beta}"), window: None }
    }

    /// `∇ρ`, the gradient of the distance to the pole.
    pub fn gradient_distance() -> Self {
        Self { shape: FieldShape::Constant(1.0), tag: "gradient_distance".into(), window: None }
    }

    pub fn linear(slope: f64) -> Self {
        Self { shape: FieldShape::Linear { slope }, tag: format!("linear:{slope}"), window: None }
    }

    pub fn piecewise_linear(knots: Vec<f64>, values: Vec<f64>) -> Result<Self, FieldError> {
        if knots.len() < 2 || knots.len() != values.len() {
            return Err(FieldError::InvalidFamily("need matching knots and values, at least two".into()));
        }
        if knots.windows(2).any(|w| w[1] <= w[0]) || values.iter().any(|v| !v.is_finite()) {
            return Err(FieldError::InvalidFamily("knots must increase and values be finite".into()));
        }
        Ok(Self { shape: FieldShape::PiecewiseLinear { knots, values }, tag: "piecewise_linear".into(), window: None })
    }

    pub fn closed(
        tag: impl Into<String>,
        a: impl Fn(f64) -> f64 + Send + Sync + 'static,
        da: Option<RealFn>,
    ) -> Self {
        Self { shape: FieldShape::Closed { a: Arc::new(a), da }, tag: tag.into(), window: None }
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.tag = tag.into();
        self
    }

    pub fn shape(&self) -> &FieldShape {
        &self.shape
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn window(&self) -> Option<(f64, f64)> {
        self.window
    }

    /// `a(r)`.
    pub fn value(&self, r: f64) -> f64 {
        match &self.shape {
            FieldShape::Constant(b) => *b,
            FieldShape::Linear { slope } => slope * r,
            FieldShape::PiecewiseLinear { knots, values } => {
                let n = knots.len();
                if r <= knots[0] {
                    return values[0];
                }
                if r >= knots[n - 1] {
                    return values[n - 1];
                }
                let k = knots.partition_point(|&x| x <= r) - 1;
                let t = (r - knots[k]) / (knots[k + 1] - knots[k]);
                values[k] + t * (values[k + 1] - values[k])
            }
            FieldShape::Closed { a, .. } => a(r),
        }
    }

    /// Left and right derivatives of `a` at `r`; equal away from breakpoints.
    pub fn one_sided_derivatives(&self, r: f64) -> (f64, f64) {
        match &self.shape {
            FieldShape::Constant(_) => (0.0, 0.0),
            FieldShape::Linear { slope } => (*slope, *slope),
            FieldShape::PiecewiseLinear { knots, values } => {
                let n = knots.len();
                let slope = |k: usize| (values[k + 1] - values[k]) / (knots[k + 1] - knots[k]);
                let seg_right = |x: f64| {
                    if x < knots[0] || x >= knots[n - 1] {
                        None
                    } else {
                        Some(knots.partition_point(|&k| k <= x) - 1)
                    }
                };
                let seg_left = |x: f64| {
                    if x <= knots[0] || x > knots[n - 1] {
                        None
                    } else {
                        Some(knots.partition_point(|&k| k < x) - 1)
                    }
                };
                (seg_left(r).map_or(0.0, slope), seg_right(r).map_or(0.0, slope))
            }
            FieldShape::Closed { a, da } => {
                let d = match da {
                    Some(da) => da(r),
                    None => {
                        let h = 1e-6 * r.abs().max(1.0);
                        (a(r + h) - a(r - h)) / (2.0 * h)
                    }
                };
                (d, d)
            }
        }
    }

    /// `a'(r)`; fails at breakpoints of a piecewise field.
    pub fn derivative(&self, r: f64) -> Result<f64, FieldError> {
        let (l, rt) = self.one_sided_derivatives(r);
        if l == rt {
            Ok(l)
        } else {
            Err(FieldError::Breakpoint(r))
        }
    }

    pub fn breakpoints(&self) -> &[f64] {
        match &self.shape {
            FieldShape::PiecewiseLinear { knots, .. } => knots,
            _ => &[],
        }
    }

    /// `t · a`.
    pub fn scaled(&self, t: f64) -> Self {
        let shape = match &self.shape {
            FieldShape::Constant(b) => FieldShape::Constant(t * b),
            FieldShape::Linear { slope } => FieldShape::Linear { slope: t * slope },
            FieldShape::PiecewiseLinear { knots, values } => {
                FieldShape::PiecewiseLinear { knots: knots.clone(), values: values.iter().map(|v| t * v).collect() }
            }
            FieldShape::Closed { a, da } => {
                let (a, da) = (a.clone(), da.clone());
                FieldShape::Closed {
                    a: Arc::new(move |r| t * a(r)),
                    da: da.map(|d| Arc::new(move |r| t * d(r)) as RealFn),
                }
            }
        };
        Self { shape, tag: self.tag.clone(), window: self.window }
    }
}

/// `div(a ∂r)(r) = a'(r) + a(r) (n-1) f'(r)/f(r)`.
pub fn field_divergence(model: &WarpedModel, field: &RadialField, r: f64) -> Result<f64, FieldError> {
    let da = field.derivative(r)?;
    let a = field.value(r);
    if a == 0.0 {
        return Ok(da);
    }
    Ok(da + a * model.distance_laplacian(r)?)
}

/// Sample points of a radial range with the model's `Δr` cached.
#[derive(Debug, Clone)]
pub struct DomainSampler {
    points: Vec<f64>,
    laplacians: Vec<f64>,
    /// Whether the range starts at the pole of a ball.
    pole: bool,
    dim: usize,
    lo: f64,
    hi: f64,
}

impl DomainSampler {
    /// `count` cell midpoints of the domain plus its closed endpoints; the
    /// pole of a ball enters through its analytic limit instead.
    pub fn new(model: &WarpedModel, domain: RadialDomain, count: usize) -> Result<Self, FieldError> {
        domain.validate(model)?;
        let (lo, hi) = domain.bounds();
        Self::on_range(model, lo, hi, matches!(domain, RadialDomain::Ball { .. }), count)
    }

    pub fn on_range(model: &WarpedModel, lo: f64, hi: f64, pole: bool, count: usize) -> Result<Self, FieldError> {
        if !(hi > lo) || count == 0 {
            return Err(FieldError::Geometry(GeometryError::InvalidDomain(format!("sample range [{lo}, {hi}]"))));
        }
        let step = (hi - lo) / count as f64;
        let mut points = Vec::with_capacity(count + 2);
        if !pole {
            points.push(lo);
        }
        points.extend((0..count).map(|i| lo + (i as f64 + 0.5) * step));
        points.push(hi);
        let laplacians = points.iter().map(|&r| model.distance_laplacian(r)).collect::<Result<Vec<_>, _>>()?;
        Ok(Self { points, laplacians, pole, dim: model.dim(), lo, hi })
    }

    /// Restricts to the part of the range inside `window`.
    fn restricted(&self, window: Option<(f64, f64)>) -> Self {
        match window {
            None => self.clone(),
            Some((a, b)) => {
                let keep: Vec<usize> = (0..self.points.len()).filter(|&i| self.points[i] >= a && self.points[i] <= b).collect();
                Self {
                    points: keep.iter().map(|&i| self.points[i]).collect(),
                    laplacians: keep.iter().map(|&i| self.laplacians[i]).collect(),
                    pole: self.pole && a <= self.lo,
                    dim: self.dim,
                    lo: self.lo.max(a),
                    hi: self.hi.min(b),
                }
            }
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn range(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }
}

/// Pointwise divergence and norm samples of a field.
struct FieldSamples {
    /// `(r, div)`; both one-sided values at breakpoints.
    div: Vec<(f64, f64)>,
    /// `(r, |a|)`.
    norm: Vec<(f64, f64)>,
}

fn sample_field(sampler: &DomainSampler, field: &RadialField) -> FieldSamples {
    let mut div = Vec::with_capacity(sampler.len() + 2);
    let mut norm = Vec::with_capacity(sampler.len() + field.breakpoints().len() + 1);
    for (&r, &lap) in sampler.points.iter().zip(&sampler.laplacians) {
        let a = field.value(r);
        // only the derivative from inside the range counts at its ends
        let (mut dl, mut dr) = field.one_sided_derivatives(r);
        if r <= sampler.lo {
            dl = dr;
        } else if r >= sampler.hi {
            dr = dl;
        }
        let transport = if a == 0.0 { 0.0 } else { a * lap };
        div.push((r, dl + transport));
        if dr != dl {
            div.push((r, dr + transport));
        }
        norm.push((r, a.abs()));
    }
    if sampler.pole {
        // a ≈ a(0) + a'(0) r and (n-1) f'/f ≈ (n-1)/r near the pole
        let a0 = field.value(sampler.lo);
        let limit = if a0 > 0.0 {
            f64::INFINITY
        } else if a0 < 0.0 {
            f64::NEG_INFINITY
        } else {
            sampler.dim as f64 * field.one_sided_derivatives(sampler.lo).1
        };
        div.push((sampler.lo, limit));
        norm.push((sampler.lo, a0.abs()));
    }
    for &k in field.breakpoints() {
        if k >= sampler.lo && k <= sampler.hi {
            norm.push((k, field.value(k).abs()));
        }
    }
    FieldSamples { div, norm }
}

fn arg_inf(values: impl Iterator<Item = (f64, f64)>) -> (f64, f64) {
    values.fold((f64::NAN, f64::INFINITY), |best, (r, v)| if v < best.1 || v.is_nan() { (r, v) } else { best })
}

fn arg_sup(values: impl Iterator<Item = (f64, f64)>) -> (f64, f64) {
    values.fold((f64::NAN, f64::NEG_INFINITY), |best, (r, v)| if v > best.1 || v.is_nan() { (r, v) } else { best })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundMethod {
    /// `(inf div X / sup ‖X‖)^p / p^p`.
    CConstant,
    /// `inf ((1-p) ‖X‖^q + div X)`.
    Pointwise,
    McKean,
    BallComparison,
    EigenfieldSharpness,
}

impl BoundMethod {
    pub fn key(&self) -> &'static str {
        match self {
            Self::CConstant => "c_constant",
            Self::Pointwise => "pointwise",
            Self::McKean => "mckean",
            Self::BallComparison => "ball_comparison",
            Self::EigenfieldSharpness => "eigenfield",
        }
    }
}

impl fmt::Display for BoundMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// A lower bound together with the data that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub method: BoundMethod,
    pub value: f64,
    /// Preconditions of the bound held.
    pub valid: bool,
    /// The value is a certified lower bound for the whole domain.
    pub certified: bool,
    pub field: String,
    /// Location of the infimum (divergence or functional).
    pub inf_at: f64,
    /// Location of the supremum of `‖X‖`, when used.
    pub sup_at: Option<f64>,
    /// Infimum of the divergence or of the pointwise functional.
    pub inf_value: f64,
    /// Supremum of `‖X‖`, when used.
    pub sup_value: Option<f64>,
    pub samples: usize,
    pub note: Option<String>,
}

/// Ratio bound `(inf div X / sup ‖X‖)^p / p^p`. An invalid field (non-positive
/// infimum of the divergence, vanishing or unbounded norm) yields a report
/// with `valid = false` and value 0.
pub fn c_constant_bound(params: &SpectralParams, sampler: &DomainSampler, field: &RadialField) -> BoundReport {
    let s = sample_field(sampler, field);
    let (inf_at, inf_div) = arg_inf(s.div.iter().copied());
    let (sup_at, sup_norm) = arg_sup(s.norm.iter().copied());
    let p = params.p();
    let mut report = BoundReport {
        method: BoundMethod::CConstant,
        value: 0.0,
        valid: false,
        certified: false,
        field: field.tag().to_string(),
        inf_at,
        sup_at: Some(sup_at),
        inf_value: inf_div,
        sup_value: Some(sup_norm),
        samples: s.div.len(),
        note: None,
    };
    if !(inf_div > 0.0) {
        report.note = Some(format!("invalid field: inf div = {inf_div:e} is not positive"));
    } else if !(sup_norm > 0.0) || !sup_norm.is_finite() || !inf_div.is_finite() {
        report.note = Some(format!("invalid field: sup |X| = {sup_norm:e}"));
    } else {
        report.value = (inf_div / sup_norm).powf(p) / p.powf(p);
        report.valid = true;
        report.certified = field.window().is_none();
    }
    report
}

/// `inf ((1-p) |a|^q + div)`. A value of `-∞` is reported as a vacuous bound.
pub fn pointwise_bound(params: &SpectralParams, sampler: &DomainSampler, field: &RadialField) -> BoundReport {
    let sampler = sampler.restricted(field.window());
    let s = sample_field(&sampler, field);
    let (p, q) = (params.p(), params.q());
    // norms are listed in the same order as the divergence samples except for
    // one-sided duplicates, so evaluate |a| afresh
    let functional = s.div.iter().map(|&(r, d)| (r, (1.0 - p) * field.value(r).abs().powf(q) + d));
    let (inf_at, value) = arg_inf(functional);
    let vacuous = !value.is_finite();
    BoundReport {
        method: BoundMethod::Pointwise,
        value,
        valid: !vacuous,
        certified: !vacuous && field.window().is_none(),
        field: field.tag().to_string(),
        inf_at,
        sup_at: None,
        inf_value: value,
        sup_value: None,
        samples: s.div.len(),
        note: vacuous.then(|| "vacuous bound: functional unbounded below".to_string()),
    }
}

/// Pointwise values of `(1-p) |a|^q + div` at the sample points, for
/// sharpness diagnostics.
pub fn functional_profile(params: &SpectralParams, sampler: &DomainSampler, field: &RadialField) -> Vec<(f64, f64)> {
    let sampler = sampler.restricted(field.window());
    let s = sample_field(&sampler, field);
    let (p, q) = (params.p(), params.q());
    s.div.iter().map(|&(r, d)| (r, (1.0 - p) * field.value(r).abs().powf(q) + d)).collect()
}

/// Parameters of `ψ(ε) = ε^p (A - B ε^q)`.
#[derive(Debug, Clone, Copy)]
pub struct YoungParams {
    a: f64,
    b: f64,
    params: SpectralParams,
}

impl YoungParams {
    pub fn new(a: f64, b: f64, params: SpectralParams) -> Result<Self, FieldError> {
        if !(a >= 0.0) || !(b > 0.0) || !a.is_finite() || !b.is_finite() {
            return Err(FieldError::InvalidYoung { a, b });
        }
        Ok(Self { a, b, params })
    }

    pub fn psi(&self, eps: f64) -> f64 {
        let (p, q) = (self.params.p(), self.params.q());
        eps.powf(p) * (self.a - self.b * eps.powf(q))
    }
}

/// Maximizer and maximum of `ψ`:
/// `ε* = (pA/((p+q)B))^{1/q}`, `ψ(ε*) = q p^{p/q} A^p / ((p+q)^p B^{p/q})`.
pub fn young_psi_max(yp: &YoungParams) -> (f64, f64) {
    let (p, q) = (yp.params.p(), yp.params.q());
    let eps = (p * yp.a / ((p + q) * yp.b)).powf(1.0 / q);
    let psi = q * p.powf(p / q) * yp.a.powf(p) / ((p + q).powf(p) * yp.b.powf(p / q));
    (eps, psi)
}

/// The ratio bound obtained through the ε-Young chain:
/// `p^{1-p} max_ε ε^p (inf div - ε^q sup‖X‖^q / q)`.
pub fn ratio_bound_via_young(inf_div: f64, sup_norm: f64, params: &SpectralParams) -> Result<f64, FieldError> {
    let (p, q) = (params.p(), params.q());
    let yp = YoungParams::new(inf_div, sup_norm.powf(q) / q, *params)?;
    Ok(young_psi_max(&yp).1 / p.powf(p - 1.0))
}

/// Canonical ball field `q^{p-1} r ∂r`, the `p`-gradient of `ρ^q`.
pub fn canonical_ball_field(domain: RadialDomain, params: &SpectralParams) -> Result<RadialField, FieldError> {
    match domain {
        RadialDomain::Ball { .. } => {
            let slope = params.q().powf(params.p() - 1.0);
            Ok(RadialField::linear(slope).with_tag("canonical_pq"))
        }
        RadialDomain::Annulus { .. } => Err(FieldError::NotABall),
    }
}

/// Comparison bound on a geodesic ball of the model:
/// `((1 + (n-1) inf_{(0,R]} r f'(r)/f(r)) / (pR))^p`.
pub fn ball_comparison_bound(
    model: &WarpedModel,
    radius: f64,
    params: &SpectralParams,
    samples: usize,
) -> Result<BoundReport, FieldError> {
    let domain = RadialDomain::ball(radius)?;
    domain.validate(model)?;
    if radius >= model.ratio_limit() && model.curvature().is_some_and(|k| k > 0.0) {
        return Err(GeometryError::Domain { r: radius, lo: 0.0, hi: model.ratio_limit() }.into());
    }
    let samples = samples.max(1);
    let step = radius / samples as f64;
    // r f'/f → 1 at the pole
    let mut best = (0.0, 1.0);
    for i in 0..=samples {
        let r = if i == samples { radius } else { (i as f64 + 0.5) * step };
        let v = r * model.warp_ratio(r)?;
        if v < best.1 {
            best = (r, v);
        }
    }
    let (n, p) = ((model.dim() - 1) as f64, params.p());
    let value = ((1.0 + n * best.1) / (p * radius)).powf(p);
    Ok(BoundReport {
        method: BoundMethod::BallComparison,
        value,
        valid: true,
        certified: true,
        field: "canonical_pq".into(),
        inf_at: best.0,
        sup_at: Some(radius),
        inf_value: best.1,
        sup_value: None,
        samples: samples + 2,
        note: None,
    })
}

/// Generalized McKean bound `((n-1) c / p)^p` for curvature `≤ -c²`.
pub fn mckean_bound(dim: usize, c: f64, params: &SpectralParams) -> f64 {
    ((dim - 1) as f64 * c / params.p()).powf(params.p())
}

/// Cells with `u` below this fraction of its maximum are excluded from the
/// trusted window of an eigenfunction field.
pub const EIGENFIELD_TRUST_FRACTION: f64 = 0.1;

/// Cells next to the pole of a ball excluded from the trusted window.
pub const EIGENFIELD_POLE_CELLS: usize = 16;

/// Field `-|u'|^{p-2} u' / (|u|^{p-2} u)` of a one-signed discrete
/// eigenfunction, sampled at the grid interfaces and linearly interpolated.
/// Next to a Dirichlet end `u → 0` and the field is unresolved; the field's
/// window excludes the cells where `u < trust · max u` and, on a ball, the
/// first cells at the pole.
pub fn eigenfunction_field(u: &RadialFunction, params: &SpectralParams, trust: f64) -> Result<RadialField, FieldError> {
    let grid = u.grid();
    let raw = u.values();
    let n = raw.len();
    let sign = if raw[0] < 0.0 { -1.0 } else { 1.0 };
    let vals: Vec<f64> = raw.iter().map(|v| sign * v).collect();
    if let Some(i) = vals.iter().position(|v| !(*v > 0.0)) {
        return Err(FieldError::SignChange(i));
    }
    let (left, right) = grid.boundaries();
    let values: Vec<f64> = (0..=n)
        .map(|j| {
            let (avg, natural) = if j == 0 {
                (0.5 * vals[0], left == Boundary::Natural)
            } else if j == n {
                (0.5 * vals[n - 1], right == Boundary::Natural)
            } else {
                (0.5 * (vals[j - 1] + vals[j]), false)
            };
            if natural {
                return 0.0;
            }
            let d = grid.interface_gradient(&vals, j);
            -params.phi(d) / params.phi(avg)
        })
        .collect();
    let mut field = RadialField::piecewise_linear(grid.interfaces().to_vec(), values)?.with_tag("eigenfield");
    let peak = vals.iter().copied().fold(0.0f64, f64::max);
    let first = vals.iter().position(|v| *v >= trust * peak).unwrap_or(0);
    let last = vals.iter().rposition(|v| *v >= trust * peak).unwrap_or(n - 1);
    let at_pole = matches!(grid.domain(), Some(RadialDomain::Ball { .. }));
    let lo = if at_pole {
        // midpoint masses of the cells next to the pole are first-order off
        grid.centers()[first.max(EIGENFIELD_POLE_CELLS).min(n - 1)]
    } else if first == 0 && left == Boundary::Natural {
        grid.interfaces()[0]
    } else {
        grid.centers()[first]
    };
    let hi = if last == n - 1 && right == Boundary::Natural { grid.interfaces()[n] } else { grid.centers()[last] };
    if lo >= hi {
        return Err(FieldError::EmptyWindow(n));
    }
    let full = (lo, hi) == (grid.interfaces()[0], grid.interfaces()[n]);
    if !full {
        field.window = Some((lo, hi));
    }
    Ok(field)
}

/// Which bound a field family is optimized for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilyObjective {
    Ratio,
    Pointwise,
}

#[derive(Debug, Clone)]
pub struct FamilyOptions {
    pub control_points: usize,
    pub budget: usize,
    /// Samples used while searching; the final report uses the caller's
    /// dense sampler.
    pub search_samples: usize,
}

impl Default for FamilyOptions {
    fn default() -> Self {
        Self { control_points: 16, budget: 2000, search_samples: 512 }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizedBound {
    pub report: BoundReport,
    pub field: RadialField,
    pub evaluations: usize,
    pub budget_exhausted: bool,
}

/// Maximizes a bound over piecewise-linear fields on a uniform control grid
/// by derivative-free coordinate ascent, seeded from `seeds` (projected onto
/// the control grid and, for the pointwise bound, optimally rescaled).
///
/// When `tone` is given, a result exceeding it by more than a relative `1e-6`
/// is an error.
#[allow(clippy::too_many_arguments)]
pub fn optimize_field_family(
    model: &WarpedModel,
    domain: RadialDomain,
    params: &SpectralParams,
    objective: FamilyObjective,
    seeds: &[RadialField],
    dense: &DomainSampler,
    tone: Option<f64>,
    opts: &FamilyOptions,
) -> Result<OptimizedBound, FieldError> {
    let k = opts.control_points;
    if !(1..=64).contains(&k) {
        return Err(FieldError::InvalidFamily(format!("family dimension {k} outside 1..=64")));
    }
    if seeds.is_empty() {
        return Err(FieldError::InvalidFamily("no seed fields".into()));
    }
    let (lo, hi) = domain.bounds();
    let knots: Vec<f64> =
        if k == 1 { vec![lo, hi] } else { (0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64).collect() };
    let search = DomainSampler::new(model, domain, opts.search_samples)?;
    let p = params.p();
    let mut evaluations = 0usize;

    let build = |vals: &[f64]| -> RadialField {
        let values: Vec<f64> =
            if k == 1 { vec![vals[0], vals[0]] } else { vals.iter().map(|v| v.clamp(-FIELD_CLAMP, FIELD_CLAMP)).collect() };
        RadialField::piecewise_linear(knots.clone(), values).expect("uniform knots").with_tag("optimized_pl")
    };
    // search score: the bound where valid, a continuous surrogate elsewhere
    let score = |field: &RadialField, sampler: &DomainSampler| -> f64 {
        match objective {
            FamilyObjective::Pointwise => pointwise_bound(params, sampler, field).value,
            FamilyObjective::Ratio => {
                let s = sample_field(sampler, field);
                let inf_div = arg_inf(s.div.iter().copied()).1;
                let sup = arg_sup(s.norm.iter().copied()).1;
                if !(sup > 0.0) || !sup.is_finite() || !inf_div.is_finite() {
                    f64::NEG_INFINITY
                } else if inf_div > 0.0 {
                    (inf_div / sup).powf(p) / p.powf(p)
                } else {
                    inf_div / sup
                }
            }
        }
    };

    let mut best_vals: Vec<f64> = Vec::new();
    let mut best_score = f64::NEG_INFINITY;
    for seed in seeds {
        let mut vals: Vec<f64> = if k == 1 {
            vec![seed.value(0.5 * (lo + hi))]
        } else {
            knots.iter().map(|&r| seed.value(r).clamp(-FIELD_CLAMP, FIELD_CLAMP)).collect()
        };
        if objective == FamilyObjective::Pointwise {
            let base = vals.clone();
            let mut g = |t: f64| {
                evaluations += 1;
                let scaled: Vec<f64> = base.iter().map(|v| t * v).collect();
                let s = score(&build(&scaled), &search);
                if s.is_nan() {
                    f64::NEG_INFINITY
                } else {
                    s
                }
            };
            let mut top = 1.0;
            let mut g_top = g(top);
            for _ in 0..40 {
                let g2 = g(2.0 * top);
                if g2 > g_top {
                    top *= 2.0;
                    g_top = g2;
                } else {
                    break;
                }
            }
            let (t, _) = golden_section_max(&mut g, 0.0, 2.0 * top, 1e-9 * top);
            vals.iter_mut().for_each(|v| *v *= t);
        }
        evaluations += 1;
        let s = score(&build(&vals), &search);
        if s > best_score || best_vals.is_empty() {
            best_score = s;
            best_vals = vals;
        }
    }

    let scale = best_vals.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-3);
    let mut step = 0.1 * scale;
    let mut exhausted = false;
    'ascent: while step > 1e-9 * scale {
        let mut improved = false;
        for i in 0..best_vals.len() {
            for dir in [1.0, -1.0] {
                if evaluations >= opts.budget {
                    exhausted = true;
                    break 'ascent;
                }
                let mut trial = best_vals.clone();
                trial[i] = (trial[i] + dir * step).clamp(-FIELD_CLAMP, FIELD_CLAMP);
                evaluations += 1;
                let s = score(&build(&trial), &search);
                if s > best_score {
                    best_score = s;
                    best_vals = trial;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }

    let field = build(&best_vals);
    let report = match objective {
        FamilyObjective::Ratio => c_constant_bound(params, dense, &field),
        FamilyObjective::Pointwise => pointwise_bound(params, dense, &field),
    };
    if let Some(t) = tone {
        if report.valid && report.value > t * (1.0 + 1e-6) {
            return Err(FieldError::SandwichViolation { bound: report.value, tone: t });
        }
    }
    Ok(OptimizedBound { report, field, evaluations, budget_exhausted: exhausted })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tone::RadialGrid;
    use approx::assert_relative_eq;

    fn sp(p: f64) -> SpectralParams {
        SpectralParams::new(p).unwrap()
    }

    #[test]
    fn divergence_examples() {
        let m = WarpedModel::euclidean(3).unwrap();
        let f = RadialField::linear(2.0);
        for r in [0.1, 0.5, 2.0] {
            assert_relative_eq!(field_divergence(&m, &f, r).unwrap(), 6.0, max_relative = 1e-14);
        }
        let zero = RadialField::constant(0.0);
        assert_eq!(field_divergence(&m, &zero, 0.3).unwrap(), 0.0);
        let h = WarpedModel::hyperbolic(2, 1.0).unwrap();
        let one = RadialField::constant(1.0);
        assert_relative_eq!(field_divergence(&h, &one, 3.0).unwrap(), 1.0 / 3f64.tanh(), max_relative = 1e-15);
        assert_relative_eq!(field_divergence(&h, &one, 3.0).unwrap(), 1.00496, max_relative = 1e-5);
    }

    #[test]
    fn breakpoints_are_reported() {
        let m = WarpedModel::euclidean(2).unwrap();
        let f = RadialField::piecewise_linear(vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(field_divergence(&m, &f, 1.0), Err(FieldError::Breakpoint(1.0)));
        assert_eq!(f.one_sided_derivatives(1.0), (1.0, -1.0));
        assert_relative_eq!(field_divergence(&m, &f, 0.5).unwrap(), 1.0 + 0.5 / 0.5);
    }

    #[test]
    fn closed_field_uses_central_differences() {
        let m = WarpedModel::euclidean(3).unwrap();
        let f = RadialField::closed("cube", |r| r * r * r, None);
        assert_relative_eq!(field_divergence(&m, &f, 2.0).unwrap(), 12.0 + 8.0, max_relative = 1e-8);
    }

    #[test]
    fn c_constant_examples() {
        let m = WarpedModel::euclidean(3).unwrap();
        let ball = RadialDomain::ball(1.0).unwrap();
        let s = DomainSampler::new(&m, ball, 1000).unwrap();
        let r = c_constant_bound(&sp(2.0), &s, &RadialField::linear(1.0));
        assert!(r.valid && r.certified);
        assert_relative_eq!(r.value, 2.25, max_relative = 1e-13);

        let r = c_constant_bound(&sp(2.0), &s, &RadialField::constant(0.0));
        assert!(!r.valid);
        assert_eq!(r.value, 0.0);

        let h = WarpedModel::hyperbolic(2, 1.0).unwrap();
        let s = DomainSampler::new(&h, RadialDomain::ball(40.0).unwrap(), 4000).unwrap();
        let r = c_constant_bound(&sp(2.0), &s, &RadialField::gradient_distance());
        assert_relative_eq!(r.value, 0.25, max_relative = 1e-14);
        // coth r rounds to 1 well before the outer radius
        assert!(r.inf_at > 15.0);
    }

    #[test]
    fn negative_field_at_pole_is_invalid_and_vacuous() {
        let m = WarpedModel::euclidean(2).unwrap();
        let s = DomainSampler::new(&m, RadialDomain::ball(1.0).unwrap(), 100).unwrap();
        let f = RadialField::constant(-1.0);
        assert!(!c_constant_bound(&sp(2.0), &s, &f).valid);
        let r = pointwise_bound(&sp(2.0), &s, &f);
        assert!(!r.valid);
        assert_eq!(r.value, f64::NEG_INFINITY);
    }

    #[test]
    fn pointwise_examples() {
        let h = WarpedModel::hyperbolic(2, 1.0).unwrap();
        let s = DomainSampler::new(&h, RadialDomain::ball(30.0).unwrap(), 3000).unwrap();
        assert_eq!(pointwise_bound(&sp(2.0), &s, &RadialField::constant(0.0)).value, 0.0);
        let r = pointwise_bound(&sp(2.0), &s, &RadialField::constant(0.5));
        assert_relative_eq!(r.value, 0.25, max_relative = 1e-12);
    }

    #[test]
    fn optimal_constant_from_scalar_search() {
        // max_β β (n-1) c - (p-1) β^q by golden section reproduces the McKean value
        for (n, c, p) in [(2usize, 1.0, 2.0), (3, 2.0, 3.0), (4, 0.5, 1.5)] {
            let params = sp(p);
            let q = params.q();
            let g = |b: f64| b * (n - 1) as f64 * c - (p - 1.0) * b.powf(q);
            let (beta, val) = golden_section_max(g, 0.0, 100.0, 1e-12);
            let beta_star = ((n - 1) as f64 * c / p).powf(p - 1.0);
            assert_relative_eq!(beta, beta_star, max_relative = 1e-6);
            assert_relative_eq!(val, mckean_bound(n, c, &params), max_relative = 1e-12);
        }
    }

    #[test]
    fn young_examples() {
        let (eps, psi) = young_psi_max(&YoungParams::new(1.0, 1.0, sp(2.0)).unwrap());
        assert_relative_eq!(eps, 0.5f64.sqrt(), max_relative = 1e-15);
        assert_relative_eq!(psi, 0.25, max_relative = 1e-15);
        let (eps, psi) = young_psi_max(&YoungParams::new(0.0, 3.0, sp(2.5)).unwrap());
        assert_eq!((eps, psi), (0.0, 0.0));
        let yp = YoungParams::new(2.0, 1.0, sp(3.0)).unwrap();
        let (eps, psi) = young_psi_max(&yp);
        let (e2, p2) = golden_section_max(|e| yp.psi(e), 0.0, 3.0, 1e-12);
        assert_relative_eq!(eps, e2, max_relative = 1e-6);
        assert!((psi - p2).abs() <= 1e-10);
        assert!(YoungParams::new(1.0, 0.0, sp(2.0)).is_err());
        assert!(YoungParams::new(-1.0, 1.0, sp(2.0)).is_err());
    }

    #[test]
    fn canonical_field_examples() {
        let ball = RadialDomain::ball(2.0).unwrap();
        let f = canonical_ball_field(ball, &sp(2.0)).unwrap();
        assert_eq!(f.value(1.0), 2.0);
        let f3 = canonical_ball_field(ball, &sp(3.0)).unwrap();
        assert_relative_eq!(f3.value(1.0), 2.25, max_relative = 1e-15);
        let m = WarpedModel::euclidean(2).unwrap();
        let s = DomainSampler::new(&m, ball, 100).unwrap();
        let r = c_constant_bound(&sp(2.0), &s, &f);
        assert_eq!(r.sup_at, Some(2.0));
        assert!(canonical_ball_field(RadialDomain::annulus(1.0, 2.0).unwrap(), &sp(2.0)).is_err());
    }

    #[test]
    fn ball_comparison_examples() {
        let m = WarpedModel::euclidean(3).unwrap();
        let r = ball_comparison_bound(&m, 1.0, &sp(2.0), 1000).unwrap();
        assert_relative_eq!(r.value, 2.25, max_relative = 1e-12);
        let h = WarpedModel::hyperbolic(4, 1.0).unwrap();
        let r = ball_comparison_bound(&h, 3.0, &sp(2.5), 1000).unwrap();
        assert_relative_eq!(r.value, (4.0 / (2.5 * 3.0f64)).powf(2.5), max_relative = 1e-12);
        let sphere = WarpedModel::space_form(3, 1.0).unwrap();
        let rr = std::f64::consts::PI / 3.0;
        let r = ball_comparison_bound(&sphere, rr, &sp(2.0), 1000).unwrap();
        let inf = rr / rr.tan();
        assert_relative_eq!(r.value, ((1.0 + 2.0 * inf) / (2.0 * rr)).powi(2), max_relative = 1e-12);
        assert_eq!(r.inf_at, rr);
        assert!(ball_comparison_bound(&sphere, 1.7, &sp(2.0), 100).is_err());
    }

    #[test]
    fn mckean_examples() {
        assert_relative_eq!(mckean_bound(2, 1.0, &sp(2.0)), 0.25);
        assert_relative_eq!(mckean_bound(3, 2.0, &sp(2.0)), 4.0);
        let near_one = mckean_bound(2, 1.0, &sp(1.0001));
        assert!(near_one < 1.0 && near_one > 0.99);
    }

    #[test]
    fn eigenfield_of_constant_on_neumann_grid_vanishes() {
        let g = Arc::new(RadialGrid::flat(1.0, 2.0, 16, Boundary::Natural, Boundary::Natural).unwrap());
        let u = RadialFunction::new(g, vec![2.0; 16]);
        let f = eigenfunction_field(&u, &sp(2.0), EIGENFIELD_TRUST_FRACTION).unwrap();
        assert!(f.window().is_none());
        for r in [1.0, 1.3, 2.0] {
            assert_eq!(f.value(r), 0.0);
        }
        let m = WarpedModel::custom(
            2,
            crate::geometry::CustomWarp::new("cyl", |_| 1.0, |_| 0.0),
            0.0,
            3.0,
        )
        .unwrap();
        let s = DomainSampler::on_range(&m, 1.0, 2.0, false, 100).unwrap();
        assert_eq!(pointwise_bound(&sp(2.0), &s, &f).value, 0.0);
    }

    #[test]
    fn eigenfield_rejects_sign_change() {
        let g = Arc::new(RadialGrid::flat(0.0, 1.0, 4, Boundary::Dirichlet, Boundary::Dirichlet).unwrap());
        let u = RadialFunction::new(g.clone(), vec![1.0, 2.0, -1.0, 1.0]);
        assert_eq!(eigenfunction_field(&u, &sp(2.0), 0.1).unwrap_err(), FieldError::SignChange(2));
        // globally negative functions are fine
        let u = RadialFunction::new(g, vec![-1.0, -2.0, -2.0, -1.0]);
        assert!(eigenfunction_field(&u, &sp(2.0), 0.1).is_ok());
    }

    #[test]
    fn scaling_covariance_of_pointwise_functional() {
        // F(t) = (1-p) t^q |a|^q + t div; at the optimal constant β* the
        // derivative in t vanishes at t = 1
        let h = WarpedModel::hyperbolic(3, 1.0).unwrap();
        let s = DomainSampler::new(&h, RadialDomain::ball(30.0).unwrap(), 1000).unwrap();
        let params = sp(2.5);
        let beta = (2.0f64 / 2.5).powf(1.5);
        let f = RadialField::constant(beta);
        let at = |t: f64| pointwise_bound(&params, &s, &f.scaled(t)).value;
        let d = (at(1.0 + 1e-5) - at(1.0 - 1e-5)) / 2e-5;
        assert!(d.abs() < 1e-6, "derivative {d}");
    }

    #[test]
    fn zero_family_yields_zero() {
        let m = WarpedModel::euclidean(2).unwrap();
        let ball = RadialDomain::ball(1.0).unwrap();
        let dense = DomainSampler::new(&m, ball, 500).unwrap();
        let opts = FamilyOptions { control_points: 1, budget: 0, search_samples: 100 };
        let out = optimize_field_family(
            &m,
            ball,
            &sp(2.0),
            FamilyObjective::Pointwise,
            &[RadialField::constant(0.0)],
            &dense,
            None,
            &opts,
        )
        .unwrap();
        assert_eq!(out.report.value, 0.0);
        assert!(out.budget_exhausted);
    }
}
