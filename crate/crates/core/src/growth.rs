//! Volume growth, the essential tone and the radial Cheeger constant.

use std::fmt;

use crate::error::{GeometryError, SolverError};
use crate::geometry::WarpedModel;
use crate::tone::{exhaustion, ExhaustionEstimate, SolverOptions, SpectralParams};

/// Samples used by the default θ fit.
pub const THETA_SAMPLES: usize = 64;

/// Absolute slack for comparisons of quantities that should vanish.
pub const ABS_FLOOR: f64 = 1e-3;

/// Exponential volume growth fitted as the least-squares slope of `ln V(r)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrowthEstimate {
    pub theta: f64,
    pub fit_window: (f64, f64),
    /// RMS deviation of `ln V` from the fitted line.
    pub fit_residual: f64,
    pub samples: usize,
    pub method: &'static str,
    pub infinite_volume: bool,
}

fn check_window(model: &WarpedModel, lo: f64, hi: f64) -> Result<(), GeometryError> {
    if !(lo > 0.0 && hi > lo && hi.is_finite()) || lo < model.r_min() || hi > model.r_max() {
        return Err(GeometryError::InvalidDomain(format!("window [{lo}, {hi}]")));
    }
    Ok(())
}

/// Least-squares slope of `ln V` on `samples` equispaced radii of
/// `[r_lo, r_hi]`, clamped at zero.
pub fn theta_estimate(model: &WarpedModel, r_lo: f64, r_hi: f64, samples: usize) -> Result<GrowthEstimate, GeometryError> {
    check_window(model, r_lo, r_hi)?;
    let samples = samples.max(2);
    let xs: Vec<f64> = (0..samples).map(|i| r_lo + (r_hi - r_lo) * i as f64 / (samples - 1) as f64).collect();
    let ys = xs.iter().map(|&r| model.log_ball_volume(r)).collect::<Result<Vec<_>, _>>()?;
    let m = samples as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / m, ys.iter().sum::<f64>() / m);
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let rms = (xs.iter().zip(&ys).map(|(x, y)| (y - my - slope * (x - mx)).powi(2)).sum::<f64>() / m).sqrt();
    Ok(GrowthEstimate {
        theta: slope.max(0.0),
        fit_window: (r_lo, r_hi),
        fit_residual: rms,
        samples,
        method: "log_volume_slope",
        infinite_volume: infinite_volume(model, r_hi)?,
    })
}

/// θ over the default window `[r_max/2, r_max]`.
pub fn theta_default(model: &WarpedModel, r_max: f64) -> Result<GrowthEstimate, GeometryError> {
    theta_estimate(model, 0.5 * r_max, r_max, THETA_SAMPLES)
}

/// Classifies the volume as infinite when `V` still grows by more than 1%
/// per step over ten steps covering the last tenth of `[0, r_max]`.
pub fn infinite_volume(model: &WarpedModel, r_max: f64) -> Result<bool, GeometryError> {
    let lo = (0.9 * r_max).max(model.r_min());
    let step = (r_max - lo) / 10.0;
    let mut prev = model.log_ball_volume(lo)?;
    for i in 1..=10 {
        let cur = model.log_ball_volume(lo + step * i as f64)?;
        if !(cur - prev > 1.01f64.ln()) {
            return Ok(false);
        }
        prev = cur;
    }
    Ok(true)
}

/// Upper bound `θ^p / p^p` for the essential tone.
pub fn brooks_bound(theta: f64, params: &SpectralParams) -> f64 {
    let p = params.p();
    (theta / p).powf(p)
}

#[derive(Debug, Clone)]
pub struct EssentialToneEstimate {
    pub value: f64,
    pub inner_radius: f64,
    pub exhaustion: ExhaustionEstimate,
    /// Brooks bound used for the check, when the volume is infinite.
    pub brooks: Option<f64>,
    /// `value ≤ brooks (1 + 1e-2)`; `None` when the check does not apply.
    pub within_brooks: Option<bool>,
}

/// Tones of the annuli `r0 < r < R` for `R` in `radii` (balls when `r0 = 0`)
/// and their extrapolated limit. When `growth` reports infinite volume the
/// limit is checked against the Brooks bound.
pub fn essential_tone(
    model: &WarpedModel,
    params: &SpectralParams,
    r0: f64,
    radii: &[f64],
    cells: usize,
    opts: &SolverOptions,
    growth: Option<&GrowthEstimate>,
) -> Result<EssentialToneEstimate, SolverError> {
    if !(r0 >= 0.0) {
        return Err(SolverError::InvalidRadii);
    }
    let ex = exhaustion(model, params, r0, radii, cells, opts)?;
    let value = ex.extrapolated.max(0.0);
    let brooks = growth.filter(|g| g.infinite_volume).map(|g| brooks_bound(g.theta, params));
    let within_brooks = brooks.map(|b| value <= b * (1.0 + 1e-2) + ABS_FLOOR);
    Ok(EssentialToneEstimate { value, inner_radius: r0, exhaustion: ex, brooks, within_brooks })
}

/// Infimum of `S(r)/V(r)` over geodesic spheres.
#[derive(Debug, Clone, PartialEq)]
pub struct CheegerEstimate {
    pub h: f64,
    pub argmin_r: f64,
    /// `S(r_hi)/V(r_hi)`.
    pub tail: f64,
    pub profile: Vec<(f64, f64)>,
}

/// Radial Cheeger constant: infimum of `S/V` over `samples` equispaced
/// spheres of `[r_lo, r_hi]`.
pub fn radial_cheeger(model: &WarpedModel, r_lo: f64, r_hi: f64, samples: usize) -> Result<CheegerEstimate, GeometryError> {
    check_window(model, r_lo, r_hi)?;
    let samples = samples.max(2);
    let profile = (0..samples)
        .map(|i| {
            let r = r_lo + (r_hi - r_lo) * i as f64 / (samples - 1) as f64;
            Ok((r, (model.log_sphere_area(r)? - model.log_ball_volume(r)?).exp()))
        })
        .collect::<Result<Vec<_>, GeometryError>>()?;
    let (argmin_r, h) = profile.iter().copied().fold((f64::NAN, f64::INFINITY), |b, (r, v)| if v < b.1 { (r, v) } else { b });
    let tail = profile.last().unwrap().1;
    Ok(CheegerEstimate { h: h.max(0.0), argmin_r, tail, profile })
}

/// One line of an ordering report; `pass` is `None` for plain values.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderingLine {
    pub key: &'static str,
    pub value: f64,
    pub pass: Option<bool>,
    pub detail: String,
}

impl fmt::Display for OrderingLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = match self.pass {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "INFO",
        };
        write!(f, "{status} {} = {:.16e} {}", self.key, self.value, self.detail)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderingReport {
    pub lines: Vec<OrderingLine>,
    pub pass: bool,
}

/// Checks `h ≤ θ + tol`, the Brooks inequality for `tone` when the volume is
/// infinite, and in the equality case `|S(r_hi)/V(r_hi) - h| ≤ tol` also
/// `|tone - θ^p/p^p| ≤ equality · θ^p/p^p`.
pub fn verify_orderings(
    params: &SpectralParams,
    growth: &GrowthEstimate,
    cheeger: &CheegerEstimate,
    tone: Option<f64>,
    tol: f64,
    equality: f64,
) -> OrderingReport {
    let theta = growth.theta;
    let brooks = brooks_bound(theta, params);
    let mut lines = vec![
        OrderingLine { key: "theta", value: theta, pass: None, detail: format!("window [{}, {}]", growth.fit_window.0, growth.fit_window.1) },
        OrderingLine { key: "brooks_bound", value: brooks, pass: None, detail: String::new() },
        OrderingLine {
            key: "cheeger_h",
            value: cheeger.h,
            pass: Some(cheeger.h <= theta + tol),
            detail: format!("h <= theta + {tol}"),
        },
    ];
    if let Some(t) = tone {
        let applies = growth.infinite_volume;
        lines.push(OrderingLine {
            key: "ess_tone",
            value: t,
            pass: applies.then_some(t <= brooks * (1.0 + 1e-2) + ABS_FLOOR),
            detail: if applies { "tone <= brooks_bound".into() } else { "finite volume".into() },
        });
        if (cheeger.tail - cheeger.h).abs() <= tol {
            let ok = (t - brooks).abs() <= equality * brooks.max(t) + ABS_FLOOR;
            lines.push(OrderingLine {
                key: "ess_tone",
                value: t,
                pass: Some(ok),
                detail: format!("equality case: |tone - brooks_bound| <= {equality} relative"),
            });
        }
    }
    let pass = lines.iter().all(|l| l.pass != Some(false));
    lines.push(OrderingLine { key: "ordering_pass", value: if pass { 1.0 } else { 0.0 }, pass: Some(pass), detail: String::new() });
    OrderingReport { lines, pass }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sp(p: f64) -> SpectralParams {
        SpectralParams::new(p).unwrap()
    }

    #[test]
    fn theta_examples() {
        let h3 = WarpedModel::hyperbolic(3, 1.0).unwrap();
        let g = theta_estimate(&h3, 20.0, 40.0, THETA_SAMPLES).unwrap();
        assert_relative_eq!(g.theta, 2.0, max_relative = 1e-2);
        assert!(g.infinite_volume);
        let h2 = WarpedModel::hyperbolic(2, 2.0).unwrap();
        let g = theta_estimate(&h2, 10.0, 30.0, THETA_SAMPLES).unwrap();
        assert_relative_eq!(g.theta, 2.0, max_relative = 1e-2);
        let e3 = WarpedModel::euclidean(3).unwrap();
        let g = theta_default(&e3, 1000.0).unwrap();
        assert!(g.theta <= 0.02 && g.infinite_volume);
    }

    #[test]
    fn theta_window_is_validated() {
        let s = WarpedModel::space_form(2, 1.0).unwrap();
        assert!(theta_estimate(&s, 1.0, 4.0, 8).is_err());
        assert!(theta_estimate(&s, 0.0, 1.0, 8).is_err());
        assert!(!infinite_volume(&s, std::f64::consts::PI).unwrap());
    }

    #[test]
    fn brooks_examples() {
        assert_relative_eq!(brooks_bound(2.0, &sp(2.0)), 1.0);
        assert_eq!(brooks_bound(0.0, &sp(2.7)), 0.0);
        assert_relative_eq!(brooks_bound(3.0, &sp(3.0)), 1.0, max_relative = 1e-15);
    }

    #[test]
    fn cheeger_examples() {
        let h2 = WarpedModel::hyperbolic(2, 1.0).unwrap();
        let c = radial_cheeger(&h2, 0.1, 40.0, 400).unwrap();
        assert_relative_eq!(c.h, 1.0, max_relative = 1e-2);
        assert_relative_eq!(c.profile[0].1, 1.0 / (0.05f64).tanh(), max_relative = 1e-9);
        let e3 = WarpedModel::euclidean(3).unwrap();
        let c = radial_cheeger(&e3, 0.5, 50.0, 100).unwrap();
        assert_relative_eq!(c.h, 3.0 / 50.0, max_relative = 1e-9);
        assert_eq!(c.argmin_r, 50.0);
        let h3 = WarpedModel::hyperbolic(3, 1.0).unwrap();
        let c = radial_cheeger(&h3, 0.1, 40.0, 400).unwrap();
        assert_relative_eq!(c.h, 2.0, max_relative = 1e-2);
    }

    #[test]
    fn orderings_on_closed_forms() {
        let h2 = WarpedModel::hyperbolic(2, 1.0).unwrap();
        let g = theta_default(&h2, 40.0).unwrap();
        let c = radial_cheeger(&h2, 0.1, 40.0, 400).unwrap();
        let rep = verify_orderings(&sp(2.0), &g, &c, Some(0.25), 1e-2, 0.05);
        assert!(rep.pass, "{:?}", rep.lines);
        let bad = verify_orderings(&sp(2.0), &g, &c, Some(0.4), 1e-2, 0.05);
        assert!(!bad.pass);
        assert_eq!(bad.lines.last().unwrap().key, "ordering_pass");
    }

    #[test]
    fn euclidean_essential_tone_decays() {
        let e2 = WarpedModel::euclidean(2).unwrap();
        let g = theta_default(&e2, 1000.0).unwrap();
        let est = essential_tone(&e2, &sp(2.0), 1.0, &[10.0, 20.0, 40.0], 512, &SolverOptions::default(), Some(&g)).unwrap();
        assert!(est.exhaustion.monotone);
        assert!(est.exhaustion.last < 0.01);
        assert_eq!(est.within_brooks, Some(true));
    }
}
