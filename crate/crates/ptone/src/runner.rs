//! Executes scenario tasks. Shared results (the tone, θ, the Cheeger
//! estimate, the essential tone) are computed on first use and cached, so
//! tasks run in dependency order while the report keeps declaration order.

use std::sync::Arc;

use ptone_core::fields::{
    ball_comparison_bound, c_constant_bound, canonical_ball_field, eigenfunction_field, functional_profile,
    mckean_bound, optimize_field_family, pointwise_bound, FamilyOptions, EIGENFIELD_TRUST_FRACTION,
};
use ptone_core::growth::{
    essential_tone, radial_cheeger, theta_estimate, verify_orderings, CheegerEstimate, EssentialToneEstimate,
    GrowthEstimate,
};
use ptone_core::tone::{solve_on_grid, tone_of_open_manifold, ExhaustionEstimate};
use ptone_core::{
    BoundReport, DomainSampler, FieldError, RadialDomain, RadialField, RadialFunction, RadialGrid, SolverOptions,
    SpectralParams, ToneEstimate, WarpedModel,
};

use crate::report::{CertificationReport, Status, TaskRecord};
use crate::scenario::{BoundKind, DomainSpec, FieldSpec, ModelSpec, Scenario, Task};

/// Tolerance of the eigenfunction-field sharpness check.
pub const EIGENFIELD_SHARPNESS_TOL: f64 = 1e-2;

/// Dense field sampling relative to the solver grid.
pub const SAMPLE_FACTOR: usize = 10;

struct ToneContext {
    estimate: ToneEstimate,
    /// Reported tone: the solve itself, or the extrapolated limit.
    value: f64,
    /// Domain on which bounds are evaluated and its computed tone.
    domain: RadialDomain,
    domain_tone: f64,
    eigenfunction: RadialFunction,
    open: Option<ExhaustionEstimate>,
}

pub struct Runner<'a> {
    sc: &'a Scenario,
    model: Result<WarpedModel, String>,
    params: SpectralParams,
    opts: SolverOptions,
    tone: Option<Result<Arc<ToneContext>, String>>,
    growth: Option<Result<GrowthEstimate, String>>,
    cheeger: Option<Result<CheegerEstimate, String>>,
    ess: Option<Result<Arc<EssentialToneEstimate>, String>>,
}

pub fn build_model(sc: &Scenario) -> Result<WarpedModel, String> {
    let model = match &sc.model {
        ModelSpec::SpaceForm { curvature } => {
            let m = WarpedModel::space_form(sc.dim, *curvature).map_err(|e| e.to_string())?;
            match sc.r_max {
                Some(r) if r < m.r_max() => m.with_r_max(r).map_err(|e| e.to_string())?,
                _ => m,
            }
        }
        ModelSpec::WarpTable { path } => {
            WarpedModel::from_warp_table(sc.dim, path, sc.r_max).map_err(|e| e.to_string())?
        }
    };
    Ok(model)
}

/// Runs every task of the scenario and assembles the report.
pub fn run(sc: &Scenario) -> CertificationReport {
    let mut runner = Runner::new(sc);
    let mut results = Vec::new();
    for task in &sc.tasks {
        results.extend(runner.task(task));
    }
    CertificationReport { scenario: sc.echo(), results }
}

impl<'a> Runner<'a> {
    pub fn new(sc: &'a Scenario) -> Self {
        Self {
            sc,
            model: build_model(sc),
            params: SpectralParams::new(sc.p).expect("validated p"),
            opts: SolverOptions::with_tol(sc.tolerance),
            tone: None,
            growth: None,
            cheeger: None,
            ess: None,
        }
    }

    fn model(&self) -> Result<&WarpedModel, String> {
        self.model.as_ref().map_err(|e| format!("model: {e}"))
    }

    fn task(&mut self, task: &Task) -> Vec<TaskRecord> {
        match task {
            Task::Tone => self.tone_task(),
            Task::Bound { kind, field } => vec![self.bound_task(*kind, field.as_ref())],
            Task::Growth => self.growth_task(),
            Task::Cheeger => self.cheeger_task(),
            Task::EssTone => self.ess_task(),
            Task::Certify => self.certify_task(),
        }
    }

    fn tone_context(&mut self) -> Result<Arc<ToneContext>, String> {
        if self.tone.is_none() {
            let computed = self.compute_tone().map(Arc::new);
            self.tone = Some(computed);
        }
        self.tone.clone().unwrap()
    }

    fn compute_tone(&self) -> Result<ToneContext, String> {
        let model = self.model()?;
        let solve = |domain: RadialDomain| -> Result<(ToneEstimate, RadialFunction), String> {
            let grid = Arc::new(RadialGrid::new(model, domain, self.sc.grid).map_err(|e| e.to_string())?);
            solve_on_grid(grid, &self.params, &self.opts).map_err(|e| e.to_string())
        };
        match self.sc.domain.as_ref().ok_or("no domain")? {
            DomainSpec::Ball(r) => {
                let domain = RadialDomain::ball(*r).map_err(|e| e.to_string())?;
                let (estimate, eigenfunction) = solve(domain)?;
                Ok(ToneContext { value: estimate.value, domain_tone: estimate.value, estimate, domain, eigenfunction, open: None })
            }
            DomainSpec::Annulus(a, b) => {
                let domain = if *a == 0.0 { RadialDomain::ball(*b) } else { RadialDomain::annulus(*a, *b) }
                    .map_err(|e| e.to_string())?;
                let (estimate, eigenfunction) = solve(domain)?;
                Ok(ToneContext { value: estimate.value, domain_tone: estimate.value, estimate, domain, eigenfunction, open: None })
            }
            DomainSpec::Open(radii) => {
                let ex = tone_of_open_manifold(model, &self.params, radii, self.sc.grid, &self.opts)
                    .map_err(|e| e.to_string())?;
                let domain = RadialDomain::ball(*radii.last().unwrap()).map_err(|e| e.to_string())?;
                let (estimate, eigenfunction) = solve(domain)?;
                Ok(ToneContext {
                    value: ex.extrapolated,
                    domain_tone: ex.last,
                    estimate,
                    domain,
                    eigenfunction,
                    open: Some(ex),
                })
            }
        }
    }

    fn tone_task(&mut self) -> Vec<TaskRecord> {
        let ctx = match self.tone_context() {
            Ok(c) => c,
            Err(e) => return vec![TaskRecord::error("tone", "numeric", e)],
        };
        let mut out = Vec::new();
        match &ctx.open {
            None => {
                let e = &ctx.estimate;
                out.push(TaskRecord::info("tone", e.value, &e.kind.to_string(), "numeric").with_detail(format!(
                    "{}, cells {}, iterations {}, residual {:.3e}",
                    e.domain, e.cells, e.iterations, e.residual
                )));
            }
            Some(ex) => {
                for (r, t) in ex.radii.iter().zip(&ex.tones) {
                    out.push(
                        TaskRecord::info(format!("tone[R={r}]"), t.value, &t.kind.to_string(), "numeric")
                            .with_detail(format!("iterations {}, residual {:.3e}", t.iterations, t.residual)),
                    );
                }
                let status = if ex.monotone { Status::Pass } else { Status::Fail };
                out.push(
                    TaskRecord::info("tone_monotone", ex.last, "monotone_in_radius", "numeric")
                        .with_status(status, Some(1e-12))
                        .with_detail("ball tones non-increasing in R"),
                );
                out.push(
                    TaskRecord::info("tone", ctx.value, "extrapolated_limit", "numeric")
                        .with_detail(format!("last ball tone {:.16e}", ex.last)),
                );
            }
        }
        if let Some(path) = &self.sc.dump_eigenfunction {
            if let Err(e) = std::fs::write(path, ctx.eigenfunction.to_csv()) {
                out.push(TaskRecord::error("eigenfunction_dump", "numeric", format!("{}: {e}", path.display())));
            }
        }
        out
    }

    fn field(&self, spec: &FieldSpec, domain: RadialDomain) -> Result<RadialField, String> {
        Ok(match spec {
            FieldSpec::GradientDistance => RadialField::gradient_distance(),
            FieldSpec::CanonicalPq => canonical_ball_field(domain, &self.params).map_err(|e| e.to_string())?,
            FieldSpec::Constant(b) => RadialField::constant(*b),
            FieldSpec::Values(v) => {
                let (lo, hi) = domain.bounds();
                let k = v.len();
                let knots = (0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64).collect();
                RadialField::piecewise_linear(knots, v.clone()).map_err(|e| e.to_string())?.with_tag(spec.to_string())
            }
        })
    }

    fn hyperbolic_c(&self) -> Option<f64> {
        match self.sc.model {
            ModelSpec::SpaceForm { curvature } if curvature < 0.0 => Some((-curvature).sqrt()),
            _ => None,
        }
    }

    fn default_field(&self, kind: BoundKind, domain: RadialDomain) -> FieldSpec {
        match (kind, domain, self.hyperbolic_c()) {
            (BoundKind::CConstant, RadialDomain::Ball { .. }, _) => FieldSpec::CanonicalPq,
            (BoundKind::Pointwise, _, Some(c)) => {
                FieldSpec::Constant(((self.sc.dim - 1) as f64 * c / self.sc.p).powf(self.sc.p - 1.0))
            }
            _ => FieldSpec::GradientDistance,
        }
    }

    fn compare(&self, name: String, citation: &str, report: &BoundReport, tone: f64) -> TaskRecord {
        let slack = self.sc.bound_slack;
        let rec = TaskRecord::info(name, report.value, "lower_bound", citation);
        let detail = format!(
            "field {}, tone {:.16e}, inf at r = {}, samples {}",
            report.field, tone, report.inf_at, report.samples
        );
        if !report.valid {
            let note = report.note.clone().unwrap_or_default();
            return rec.with_status(Status::InvalidField, Some(slack)).with_detail(format!("{note}; {detail}"));
        }
        let status = if report.value <= tone * (1.0 + slack) { Status::Pass } else { Status::Fail };
        rec.with_status(status, Some(slack)).with_detail(detail)
    }

    fn bound_task(&mut self, kind: BoundKind, field: Option<&FieldSpec>) -> TaskRecord {
        let name = match field {
            Some(f) => format!("bound:{}:{f}", kind.key()),
            None => format!("bound:{}", kind.key()),
        };
        let citation = match kind {
            BoundKind::CConstant | BoundKind::Optimize(ptone_core::fields::FamilyObjective::Ratio) => "ratio_bound",
            BoundKind::Pointwise | BoundKind::Optimize(_) => "pointwise_bound",
            BoundKind::McKean => "mckean",
            BoundKind::BallComparison => "ball_comparison",
            BoundKind::Eigenfield => "eigenfield_sharpness",
        };
        match self.bound_record(kind, field, name.clone(), citation) {
            Ok(r) => r,
            Err(e) => TaskRecord::error(name, citation, e),
        }
    }

    fn bound_record(
        &mut self,
        kind: BoundKind,
        field: Option<&FieldSpec>,
        name: String,
        citation: &str,
    ) -> Result<TaskRecord, String> {
        let ctx = self.tone_context().map_err(|e| format!("tone unavailable: {e}"))?;
        let model = self.model()?.clone();
        let domain = ctx.domain;
        let dense = || DomainSampler::new(&model, domain, SAMPLE_FACTOR * self.sc.grid).map_err(|e| e.to_string());
        match kind {
            BoundKind::McKean => {
                let c = self.hyperbolic_c().ok_or("mckean needs a space form of negative curvature")?;
                let value = mckean_bound(self.sc.dim, c, &self.params);
                // every ball of the exhaustion must respect the bound
                let tone = match &ctx.open {
                    Some(ex) => ex.tones.iter().map(|t| t.value).fold(f64::INFINITY, f64::min),
                    None => ctx.domain_tone,
                };
                let slack = self.sc.bound_slack;
                let status = if value <= tone * (1.0 + slack) { Status::Pass } else { Status::Fail };
                Ok(TaskRecord::info(name, value, "lower_bound", citation)
                    .with_status(status, Some(slack))
                    .with_detail(format!("c = {c}, smallest tone {tone:.16e}")))
            }
            BoundKind::BallComparison => {
                let RadialDomain::Ball { radius } = domain else {
                    return Err("ball_comparison needs a ball".into());
                };
                let report = ball_comparison_bound(&model, radius, &self.params, SAMPLE_FACTOR * self.sc.grid)
                    .map_err(|e| e.to_string())?;
                Ok(self.compare(name, citation, &report, ctx.domain_tone))
            }
            BoundKind::CConstant | BoundKind::Pointwise => {
                let spec = field.cloned().unwrap_or_else(|| self.default_field(kind, domain));
                let f = self.field(&spec, domain)?.with_tag(spec.to_string());
                let sampler = dense()?;
                let report = if kind == BoundKind::CConstant {
                    c_constant_bound(&self.params, &sampler, &f)
                } else {
                    pointwise_bound(&self.params, &sampler, &f)
                };
                Ok(self.compare(name, citation, &report, ctx.domain_tone))
            }
            BoundKind::Eigenfield => {
                let f = eigenfunction_field(&ctx.eigenfunction, &self.params, EIGENFIELD_TRUST_FRACTION)
                    .map_err(|e| e.to_string())?;
                let sampler = DomainSampler::new(&model, domain, self.sc.grid).map_err(|e| e.to_string())?;
                let report = pointwise_bound(&self.params, &sampler, &f);
                let profile = functional_profile(&self.params, &sampler, &f);
                let (lo, hi) = profile
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &(_, v)| (a.min(v), b.max(v)));
                let tone = ctx.domain_tone;
                let window = match f.window() {
                    Some((a, b)) => format!("[{a}, {b}]"),
                    None => "whole domain".to_string(),
                };
                let rel = (report.value - tone).abs() / tone;
                let status = if rel <= EIGENFIELD_SHARPNESS_TOL { Status::Pass } else { Status::Fail };
                Ok(TaskRecord::info(name, report.value, "sharpness", citation)
                    .with_status(status, Some(EIGENFIELD_SHARPNESS_TOL))
                    .with_detail(format!(
                        "tone {tone:.16e}, relative gap {rel:.3e}, spread/tone {:.3e}, window {window}",
                        (hi - lo) / tone
                    )))
            }
            BoundKind::Optimize(objective) => {
                let mut seeds = vec![RadialField::gradient_distance()];
                if let Ok(f) = canonical_ball_field(domain, &self.params) {
                    seeds.push(f);
                }
                if let Some(c) = self.hyperbolic_c() {
                    seeds.push(RadialField::constant(((self.sc.dim - 1) as f64 * c / self.sc.p).powf(self.sc.p - 1.0)));
                }
                if let Ok(f) = eigenfunction_field(&ctx.eigenfunction, &self.params, EIGENFIELD_TRUST_FRACTION) {
                    seeds.push(f);
                }
                let opts = FamilyOptions {
                    control_points: self.sc.control_points,
                    budget: self.sc.budget,
                    ..FamilyOptions::default()
                };
                let sampler = dense()?;
                let slack = self.sc.bound_slack;
                match optimize_field_family(&model, domain, &self.params, objective, &seeds, &sampler, Some(ctx.domain_tone), &opts) {
                    Ok(out) => {
                        let rec = self.compare(name, citation, &out.report, ctx.domain_tone);
                        let detail = format!(
                            "{}; evaluations {}{}",
                            rec.detail,
                            out.evaluations,
                            if out.budget_exhausted { ", budget exhausted" } else { "" }
                        );
                        Ok(rec.with_detail(detail))
                    }
                    Err(FieldError::SandwichViolation { bound, tone }) => {
                        Ok(TaskRecord::info(name, bound, "lower_bound", citation)
                            .with_status(Status::Fail, Some(slack))
                            .with_detail(format!("exceeds tone {tone:.16e}")))
                    }
                    Err(e) => Err(e.to_string()),
                }
            }
        }
    }

    fn growth_window(&self) -> Result<(f64, f64), String> {
        if let Some(w) = self.sc.growth_window {
            return Ok(w);
        }
        let model = self.model()?;
        let hi = self.sc.r_max.unwrap_or(model.r_max());
        if !hi.is_finite() {
            return Err("growth needs r_max or a [growth] window".into());
        }
        Ok((0.5 * hi, hi))
    }

    fn growth(&mut self) -> Result<GrowthEstimate, String> {
        if self.growth.is_none() {
            let computed = self.growth_window().and_then(|(lo, hi)| {
                theta_estimate(self.model()?, lo, hi, self.sc.growth_samples).map_err(|e| e.to_string())
            });
            self.growth = Some(computed);
        }
        self.growth.clone().unwrap()
    }

    fn growth_task(&mut self) -> Vec<TaskRecord> {
        match self.growth() {
            Err(e) => vec![TaskRecord::error("theta", "volume_growth", e)],
            Ok(g) => vec![
                TaskRecord::info("theta", g.theta, g.method, "volume_growth").with_detail(format!(
                    "window [{}, {}], samples {}, fit residual {:.3e}",
                    g.fit_window.0, g.fit_window.1, g.samples, g.fit_residual
                )),
                TaskRecord::info(
                    "brooks_bound",
                    ptone_core::growth::brooks_bound(g.theta, &self.params),
                    "upper_bound",
                    "brooks",
                ),
                TaskRecord::info("infinite_volume", if g.infinite_volume { 1.0 } else { 0.0 }, "flag", "volume_growth"),
            ],
        }
    }

    fn cheeger(&mut self) -> Result<CheegerEstimate, String> {
        if self.cheeger.is_none() {
            let window = match self.sc.cheeger_window {
                Some(w) => Ok(w),
                None => self.growth_window().map(|(_, hi)| (hi / 1000.0, hi)),
            };
            let computed = window.and_then(|(lo, hi)| {
                radial_cheeger(self.model()?, lo, hi, self.sc.cheeger_samples).map_err(|e| e.to_string())
            });
            self.cheeger = Some(computed);
        }
        self.cheeger.clone().unwrap()
    }

    fn cheeger_task(&mut self) -> Vec<TaskRecord> {
        match self.cheeger() {
            Err(e) => vec![TaskRecord::error("cheeger_h", "cheeger", e)],
            Ok(c) => vec![
                TaskRecord::info("cheeger_h", c.h, "radial_cheeger", "cheeger")
                    .with_detail(format!("argmin r = {}, {} spheres", c.argmin_r, c.profile.len())),
                TaskRecord::info("cheeger_tail", c.tail, "radial_cheeger", "cheeger"),
            ],
        }
    }

    fn essential(&mut self) -> Result<Arc<EssentialToneEstimate>, String> {
        if self.ess.is_none() {
            let growth = self.growth().ok();
            let computed = (|| {
                let radii = self.sc.ess_radii.as_ref().ok_or("no [essential] radii")?;
                essential_tone(self.model()?, &self.params, self.sc.ess_r0, radii, self.sc.grid, &self.opts, growth.as_ref())
                    .map(Arc::new)
                    .map_err(|e| e.to_string())
            })();
            self.ess = Some(computed);
        }
        self.ess.clone().unwrap()
    }

    fn ess_task(&mut self) -> Vec<TaskRecord> {
        let est = match self.essential() {
            Ok(e) => e,
            Err(e) => return vec![TaskRecord::error("ess_tone", "brooks", e)],
        };
        let mut rec = TaskRecord::info("ess_tone", est.value, "extrapolated_limit", "brooks").with_detail(format!(
            "r0 = {}, last annulus tone {:.16e}",
            est.inner_radius, est.exhaustion.last
        ));
        if let (Some(ok), Some(b)) = (est.within_brooks, est.brooks) {
            let detail = format!("{}, brooks bound {b:.16e}", rec.detail);
            rec = rec.with_status(if ok { Status::Pass } else { Status::Fail }, Some(1e-2)).with_detail(detail);
        }
        let mono = if est.exhaustion.monotone { Status::Pass } else { Status::Fail };
        vec![
            rec,
            TaskRecord::info("ess_tone_monotone", est.exhaustion.last, "monotone_in_radius", "numeric")
                .with_status(mono, Some(1e-12)),
        ]
    }

    fn certify_task(&mut self) -> Vec<TaskRecord> {
        let growth = match self.growth() {
            Ok(g) => g,
            Err(e) => return vec![TaskRecord::error("ordering_pass", "ordering", e)],
        };
        let cheeger = match self.cheeger() {
            Ok(c) => c,
            Err(e) => return vec![TaskRecord::error("ordering_pass", "ordering", e)],
        };
        let tone = if self.sc.ess_radii.is_some() {
            match self.essential() {
                Ok(e) => Some(e.value),
                Err(e) => return vec![TaskRecord::error("ordering_pass", "ordering", e)],
            }
        } else if matches!(self.sc.domain, Some(DomainSpec::Open(_))) {
            match self.tone_context() {
                Ok(c) => Some(c.value),
                Err(e) => return vec![TaskRecord::error("ordering_pass", "ordering", e)],
            }
        } else {
            None
        };
        let report = verify_orderings(&self.params, &growth, &cheeger, tone, self.sc.ordering_tol, self.sc.equality_tol);
        report
            .lines
            .iter()
            .map(|l| {
                let status = match l.pass {
                    Some(true) => Status::Pass,
                    Some(false) => Status::Fail,
                    None => Status::Info,
                };
                TaskRecord::info(l.key, l.value, "ordering", "ordering")
                    .with_status(status, l.pass.map(|_| self.sc.ordering_tol))
                    .with_detail(l.detail.clone())
            })
            .collect()
    }
}
