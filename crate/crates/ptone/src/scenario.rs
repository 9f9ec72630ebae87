//! Scenario files: `[section]` headers, `key = value` lines and `#`
//! comments. The `[tasks]` section lists one task per line.
//!
//! ```text
//! [model]
//! dim = 2
//! curvature = -1
//!
//! [params]
//! p = 2
//!
//! [domain]
//! open = 1, 2, 5, 10, 15
//!
//! [tasks]
//! tone
//! bound:mckean
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use thiserror::Error;

use ptone_core::fields::FamilyObjective;

pub const DEFAULT_GRID: usize = 2048;
pub const DEFAULT_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid `{key}`: {message}")]
    Invalid { key: String, message: String },
}

fn invalid(key: &str, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid { key: key.to_string(), message: message.into() }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    SpaceForm { curvature: f64 },
    WarpTable { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub enum DomainSpec {
    Ball(f64),
    Annulus(f64, f64),
    /// Exhaustion of the whole manifold by balls of the listed radii.
    Open(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum FieldSpec {
    GradientDistance,
    CanonicalPq,
    Constant(f64),
    /// Values on equispaced control points spanning the domain.
    Values(Vec<f64>),
}

impl fmt::Display for FieldSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::GradientDistance => f.write_str("gradient_distance"),
            Self::CanonicalPq => f.write_str("canonical_pq"),
            Self::Constant(b) => write!(f, "constant:{b}"),
            Self::Values(v) => {
                let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                write!(f, "values({})", parts.join(","))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundKind {
    CConstant,
    Pointwise,
    McKean,
    BallComparison,
    Eigenfield,
    Optimize(FamilyObjective),
}

impl BoundKind {
    pub fn key(&self) -> &'static str {
        match self {
            Self::CConstant => "c_constant",
            Self::Pointwise => "pointwise",
            Self::McKean => "mckean",
            Self::BallComparison => "ball_comparison",
            Self::Eigenfield => "eigenfield",
            Self::Optimize(FamilyObjective::Ratio) => "optimize_c_constant",
            Self::Optimize(FamilyObjective::Pointwise) => "optimize_pointwise",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "c_constant" => Self::CConstant,
            "pointwise" => Self::Pointwise,
            "mckean" => Self::McKean,
            "ball_comparison" => Self::BallComparison,
            "eigenfield" => Self::Eigenfield,
            "optimize_c_constant" => Self::Optimize(FamilyObjective::Ratio),
            "optimize_pointwise" => Self::Optimize(FamilyObjective::Pointwise),
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Task {
    Tone,
    Bound { kind: BoundKind, field: Option<FieldSpec> },
    Growth,
    EssTone,
    Cheeger,
    Certify,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Tone => f.write_str("tone"),
            Self::Bound { kind, field: None } => write!(f, "bound:{}", kind.key()),
            Self::Bound { kind, field: Some(field) } => write!(f, "bound:{}:{field}", kind.key()),
            Self::Growth => f.write_str("growth"),
            Self::EssTone => f.write_str("ess_tone"),
            Self::Cheeger => f.write_str("cheeger"),
            Self::Certify => f.write_str("certify"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

impl Format {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "json" => Some(Self::Json),
            "csv" => Some(Self::Csv),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub dim: usize,
    pub model: ModelSpec,
    pub r_max: Option<f64>,
    pub p: f64,
    pub tolerance: f64,
    pub grid: usize,
    pub domain: Option<DomainSpec>,
    pub growth_window: Option<(f64, f64)>,
    pub growth_samples: usize,
    pub cheeger_window: Option<(f64, f64)>,
    pub cheeger_samples: usize,
    pub ess_r0: f64,
    pub ess_radii: Option<Vec<f64>>,
    /// Relative slack for lower bounds against the computed tone.
    pub bound_slack: f64,
    /// Additive slack of the `h ≤ θ` ordering and of the equality test.
    pub ordering_tol: f64,
    /// Relative tolerance of the equality-case tone check.
    pub equality_tol: f64,
    pub control_points: usize,
    pub budget: usize,
    pub tasks: Vec<Task>,
    pub format: Format,
    pub output: Option<PathBuf>,
    pub dump_eigenfunction: Option<PathBuf>,
}

impl Scenario {
    /// Resolved settings as sorted key/value strings, for report headers.
    /// Output locations are left out so reports do not depend on them.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
        m.insert("model.dim".into(), self.dim.to_string());
        match &self.model {
            ModelSpec::SpaceForm { curvature } => m.insert("model.curvature".into(), curvature.to_string()),
            ModelSpec::WarpTable { path } => m.insert(
                "model.warp_table".into(),
                path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
            ),
        };
        if let Some(r) = self.r_max {
            m.insert("model.r_max".into(), r.to_string());
        }
        m.insert("params.p".into(), self.p.to_string());
        m.insert("params.tolerance".into(), self.tolerance.to_string());
        m.insert("params.grid".into(), self.grid.to_string());
        match &self.domain {
            Some(DomainSpec::Ball(r)) => m.insert("domain.ball".into(), r.to_string()),
            Some(DomainSpec::Annulus(a, b)) => m.insert("domain.annulus".into(), list(&[*a, *b])),
            Some(DomainSpec::Open(v)) => m.insert("domain.open".into(), list(v)),
            None => None,
        };
        if let Some((a, b)) = self.growth_window {
            m.insert("growth.window".into(), list(&[a, b]));
        }
        if let Some((a, b)) = self.cheeger_window {
            m.insert("growth.cheeger_window".into(), list(&[a, b]));
        }
        m.insert("growth.samples".into(), self.growth_samples.to_string());
        m.insert("growth.cheeger_samples".into(), self.cheeger_samples.to_string());
        m.insert("essential.r0".into(), self.ess_r0.to_string());
        if let Some(v) = &self.ess_radii {
            m.insert("essential.radii".into(), list(v));
        }
        m.insert("tolerance.bound".into(), self.bound_slack.to_string());
        m.insert("tolerance.ordering".into(), self.ordering_tol.to_string());
        m.insert("tolerance.equality".into(), self.equality_tol.to_string());
        m.insert("optimize.control_points".into(), self.control_points.to_string());
        m.insert("optimize.budget".into(), self.budget.to_string());
        let tasks: Vec<String> = self.tasks.iter().map(|t| t.to_string()).collect();
        m.insert("tasks".into(), tasks.join("; "));
        m
    }
}

const KEYS: &[&str] = &[
    "model.dim",
    "model.curvature",
    "model.warp_table",
    "model.r_max",
    "params.p",
    "params.tolerance",
    "params.grid",
    "domain.ball",
    "domain.annulus",
    "domain.open",
    "growth.window",
    "growth.samples",
    "growth.cheeger_window",
    "growth.cheeger_samples",
    "essential.r0",
    "essential.radii",
    "tolerance.bound",
    "tolerance.ordering",
    "tolerance.equality",
    "optimize.control_points",
    "optimize.budget",
    "output.format",
    "output.path",
    "output.eigenfunction",
];

const SECTIONS: &[&str] = &["model", "params", "domain", "growth", "essential", "tolerance", "optimize", "tasks", "output"];

/// Reads and validates a scenario file. Relative paths inside it are
/// resolved against the file's directory.
pub fn parse_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ScenarioError::Io { path: path.to_path_buf(), message: e.to_string() })?;
    parse_scenario_str(&text, path.parent())
}

/// Parses scenario text; `base` anchors relative paths.
pub fn parse_scenario_str(text: &str, base: Option<&Path>) -> Result<Scenario, ScenarioError> {
    let mut values: BTreeMap<String, (usize, String)> = BTreeMap::new();
    let mut tasks: Vec<(usize, String)> = Vec::new();
    let mut section: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| ScenarioError::Parse { line: line_no, message: format!("unterminated section header `{line}`") })?
                .trim();
            if !SECTIONS.contains(&name) {
                return Err(ScenarioError::Parse { line: line_no, message: format!("unknown section `[{name}]`") });
            }
            section = Some(name.to_string());
            continue;
        }
        let Some(sec) = section.as_deref() else {
            return Err(ScenarioError::Parse { line: line_no, message: "entry before any section header".into() });
        };
        if sec == "tasks" {
            tasks.push((line_no, line.to_string()));
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| ScenarioError::Parse { line: line_no, message: format!("expected `key = value`, got `{line}`") })?;
        let key = format!("{sec}.{}", key.trim());
        if values.insert(key.clone(), (line_no, value.trim().to_string())).is_some() {
            return Err(ScenarioError::Parse { line: line_no, message: format!("duplicate key `{key}`") });
        }
    }
    build(values, tasks, base)
}

struct Entries {
    values: BTreeMap<String, (usize, String)>,
}

impl Entries {
    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.values.remove(key)
    }

    fn number(&mut self, key: &str) -> Result<Option<f64>, ScenarioError> {
        match self.take(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse::<f64>()
                .map(Some)
                .map_err(|_| ScenarioError::Parse { line, message: format!("`{key}` expects a number, got `{v}`") }),
        }
    }

    fn count(&mut self, key: &str) -> Result<Option<usize>, ScenarioError> {
        match self.take(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse::<usize>()
                .map(Some)
                .map_err(|_| ScenarioError::Parse { line, message: format!("`{key}` expects a non-negative integer, got `{v}`") }),
        }
    }

    fn list(&mut self, key: &str) -> Result<Option<Vec<f64>>, ScenarioError> {
        match self.take(key) {
            None => Ok(None),
            Some((line, v)) => v
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map(Some)
                .map_err(|_| ScenarioError::Parse { line, message: format!("`{key}` expects a comma-separated list of numbers") }),
        }
    }

    fn pair(&mut self, key: &str) -> Result<Option<(f64, f64)>, ScenarioError> {
        match self.list(key)? {
            None => Ok(None),
            Some(v) if v.len() == 2 => Ok(Some((v[0], v[1]))),
            Some(_) => Err(invalid(key, "expects exactly two numbers")),
        }
    }
}

fn resolve(base: Option<&Path>, p: &str) -> PathBuf {
    let path = PathBuf::from(p);
    match base {
        Some(b) if path.is_relative() => b.join(path),
        _ => path,
    }
}

fn parse_field(s: &str) -> Option<FieldSpec> {
    let s = s.trim();
    if s == "gradient_distance" {
        return Some(FieldSpec::GradientDistance);
    }
    if s == "canonical_pq" {
        return Some(FieldSpec::CanonicalPq);
    }
    if let Some(b) = s.strip_prefix("constant:") {
        return b.trim().parse().ok().map(FieldSpec::Constant);
    }
    let inner = s.strip_prefix("values(")?.strip_suffix(')')?;
    let v: Vec<f64> = inner.split(',').map(|x| x.trim().parse().ok()).collect::<Option<_>>()?;
    (v.len() >= 2).then_some(FieldSpec::Values(v))
}

fn parse_task(line: usize, s: &str) -> Result<Task, ScenarioError> {
    let err = |m: String| ScenarioError::Parse { line, message: m };
    Ok(match s {
        "tone" => Task::Tone,
        "growth" => Task::Growth,
        "ess_tone" => Task::EssTone,
        "cheeger" => Task::Cheeger,
        "certify" => Task::Certify,
        _ => {
            let rest = s.strip_prefix("bound:").ok_or_else(|| err(format!("unknown task `{s}`")))?;
            let (method, field) = match rest.split_once(':') {
                Some((m, f)) => (m, Some(f)),
                None => (rest, None),
            };
            let kind = BoundKind::parse(method.trim()).ok_or_else(|| err(format!("unknown bound method `{method}`")))?;
            let field = match field {
                None => None,
                Some(f) => Some(parse_field(f).ok_or_else(|| err(format!("unknown field `{f}`")))?),
            };
            Task::Bound { kind, field }
        }
    })
}

fn increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] > w[0])
}

fn build(
    values: BTreeMap<String, (usize, String)>,
    task_lines: Vec<(usize, String)>,
    base: Option<&Path>,
) -> Result<Scenario, ScenarioError> {
    if let Some((key, (line, _))) = values.iter().find(|(k, _)| !KEYS.contains(&k.as_str())) {
        return Err(ScenarioError::Parse { line: *line, message: format!("unknown key `{key}`") });
    }
    let mut e = Entries { values };
    let dim = e.count("model.dim")?.ok_or_else(|| invalid("dim", "missing"))?;
    if dim < 2 {
        return Err(invalid("dim", "dim must be at least 2"));
    }
    let curvature = e.number("model.curvature")?;
    let table = e.take("model.warp_table");
    let model = match (curvature, table) {
        (Some(k), None) => {
            if !k.is_finite() {
                return Err(invalid("curvature", "must be finite"));
            }
            ModelSpec::SpaceForm { curvature: k }
        }
        (None, Some((_, p))) => {
            let path = resolve(base, &p);
            if !path.is_file() {
                return Err(invalid("warp_table", format!("file {} does not exist", path.display())));
            }
            ModelSpec::WarpTable { path }
        }
        (Some(_), Some(_)) => return Err(invalid("curvature", "give either curvature or warp_table, not both")),
        (None, None) => return Err(invalid("curvature", "missing: give curvature or warp_table")),
    };
    let r_max = e.number("model.r_max")?;
    if let Some(r) = r_max {
        if !(r > 0.0) {
            return Err(invalid("r_max", "must be positive"));
        }
    }

    let p = e.number("params.p")?.ok_or_else(|| invalid("p", "missing"))?;
    if !(p > 1.0) || !p.is_finite() {
        return Err(invalid("p", "p must exceed 1"));
    }
    let tolerance = e.number("params.tolerance")?.unwrap_or(DEFAULT_TOLERANCE);
    if !(tolerance > 0.0 && tolerance < 1.0) {
        return Err(invalid("tolerance", "must lie in (0, 1)"));
    }
    let grid = e.count("params.grid")?.unwrap_or(DEFAULT_GRID);
    if grid < 2 {
        return Err(invalid("grid", "need at least 2 cells"));
    }

    let limit = r_max.unwrap_or(f64::INFINITY);
    let within = |key: &str, r: f64| -> Result<(), ScenarioError> {
        if !(r > 0.0) || !r.is_finite() {
            return Err(invalid(key, "radii must be positive and finite"));
        }
        if r > limit {
            return Err(invalid(key, format!("radius {r} exceeds r_max = {limit}")));
        }
        Ok(())
    };
    let ball = e.number("domain.ball")?;
    let annulus = e.pair("domain.annulus")?;
    let open = e.list("domain.open")?;
    let domain = match (ball, annulus, open) {
        (None, None, None) => None,
        (Some(r), None, None) => {
            within("ball", r)?;
            Some(DomainSpec::Ball(r))
        }
        (None, Some((a, b)), None) => {
            if !(a >= 0.0) {
                return Err(invalid("annulus", "r0 must be non-negative"));
            }
            if !(a < b) {
                return Err(invalid("annulus", "r0 must be less than r1"));
            }
            within("annulus", b)?;
            Some(DomainSpec::Annulus(a, b))
        }
        (None, None, Some(v)) => {
            if v.is_empty() || !increasing(&v) {
                return Err(invalid("open", "radii must increase"));
            }
            for &r in &v {
                within("open", r)?;
            }
            Some(DomainSpec::Open(v))
        }
        _ => return Err(invalid("domain", "give exactly one of ball, annulus, open")),
    };

    let growth_window = e.pair("growth.window")?;
    let cheeger_window = e.pair("growth.cheeger_window")?;
    for (key, w) in [("window", growth_window), ("cheeger_window", cheeger_window)] {
        if let Some((a, b)) = w {
            if !(a > 0.0 && b > a) {
                return Err(invalid(key, "need 0 < lo < hi"));
            }
            within(key, b)?;
        }
    }
    let growth_samples = e.count("growth.samples")?.unwrap_or(ptone_core::growth::THETA_SAMPLES);
    let cheeger_samples = e.count("growth.cheeger_samples")?.unwrap_or(1000);
    if growth_samples < 2 || cheeger_samples < 2 {
        return Err(invalid("samples", "need at least 2 samples"));
    }

    let ess_r0 = e.number("essential.r0")?.unwrap_or(1.0);
    if !(ess_r0 >= 0.0) {
        return Err(invalid("r0", "must be non-negative"));
    }
    let ess_radii = e.list("essential.radii")?;
    if let Some(v) = &ess_radii {
        if v.is_empty() || !increasing(v) || v[0] <= ess_r0 {
            return Err(invalid("radii", "must increase and exceed r0"));
        }
        for &r in v {
            within("radii", r)?;
        }
    }

    let bound_slack = e.number("tolerance.bound")?.unwrap_or(1e-6);
    let ordering_tol = e.number("tolerance.ordering")?.unwrap_or(1e-2);
    let equality_tol = e.number("tolerance.equality")?.unwrap_or(0.05);
    for (key, v) in [("bound", bound_slack), ("ordering", ordering_tol), ("equality", equality_tol)] {
        if !(v >= 0.0) {
            return Err(invalid(key, "tolerances must be non-negative"));
        }
    }
    let control_points = e.count("optimize.control_points")?.unwrap_or(16);
    if !(1..=64).contains(&control_points) {
        return Err(invalid("control_points", "must lie in 1..=64"));
    }
    let budget = e.count("optimize.budget")?.unwrap_or(2000);

    let format = match e.take("output.format") {
        None => Format::Json,
        Some((_, f)) => Format::parse(&f).ok_or_else(|| invalid("format", format!("expected json or csv, got `{f}`")))?,
    };
    let output = e.take("output.path").map(|(_, p)| resolve(base, &p));
    let dump_eigenfunction = e.take("output.eigenfunction").map(|(_, p)| resolve(base, &p));

    let tasks = task_lines.iter().map(|(l, s)| parse_task(*l, s)).collect::<Result<Vec<_>, _>>()?;
    for t in &tasks {
        let needs_domain = matches!(t, Task::Tone | Task::Bound { .. });
        if needs_domain && domain.is_none() {
            return Err(invalid("domain", format!("task `{t}` needs a [domain]")));
        }
        if *t == Task::EssTone && ess_radii.is_none() {
            return Err(invalid("radii", "task `ess_tone` needs [essential] radii"));
        }
    }

    Ok(Scenario {
        dim,
        model,
        r_max,
        p,
        tolerance,
        grid,
        domain,
        growth_window,
        growth_samples,
        cheeger_window,
        cheeger_samples,
        ess_r0,
        ess_radii,
        bound_slack,
        ordering_tol,
        equality_tol,
        control_points,
        budget,
        tasks,
        format,
        output,
        dump_eigenfunction,
    })
}
