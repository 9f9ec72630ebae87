use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ptone::{parse_scenario, parse_scenario_str, run, CertificationReport, Format, Scenario};

#[derive(Parser)]
#[command(name = "ptone", version, about = "Fundamental tone of the p-Laplacian on model manifolds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and write its report.
    Run(ScenarioArgs),
    /// Run a scenario file, print one line per check and exit with the verdict.
    Certify(ScenarioArgs),
    /// First Dirichlet eigenvalue of a ball, an annulus or an exhaustion.
    Tone {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        domain: DomainArgs,
        /// Write the eigenfunction as CSV (r,u).
        #[arg(long)]
        dump_eigenfunction: Option<PathBuf>,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// A lower bound checked against the computed tone.
    Bound {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        domain: DomainArgs,
        /// mckean, c_constant, pointwise, ball_comparison, eigenfield,
        /// optimize_c_constant or optimize_pointwise.
        #[arg(long, default_value = "mckean")]
        method: String,
        /// gradient_distance, canonical_pq, constant:<b> or values(v1,...,vk).
        #[arg(long)]
        field: Option<String>,
        #[arg(long)]
        budget: Option<usize>,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Exponential volume growth and the Brooks bound.
    Growth {
        #[command(flatten)]
        model: ModelArgs,
        /// Fit window `lo,hi`; defaults to [r_max/2, r_max].
        #[arg(long)]
        window: Option<String>,
        #[arg(long)]
        samples: Option<usize>,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Essential tone from annuli r0 < r < R.
    EssTone {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 1.0)]
        r0: f64,
        /// Outer radii `R1,R2,...`.
        #[arg(long)]
        radii: String,
        #[arg(long)]
        window: Option<String>,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Radial Cheeger constant.
    Cheeger {
        #[command(flatten)]
        model: ModelArgs,
        /// Window `lo,hi`; defaults to [r_max/1000, r_max].
        #[arg(long)]
        window: Option<String>,
        #[arg(long)]
        samples: Option<usize>,
        #[command(flatten)]
        out: OutputArgs,
    },
}

#[derive(Args)]
struct ScenarioArgs {
    scenario: PathBuf,
    /// Overrides the scenario's output format.
    #[arg(long)]
    format: Option<String>,
    /// Overrides the scenario's output path.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long, allow_hyphen_values = true)]
    curvature: Option<f64>,
    /// Two-column CSV `r,f(r)`.
    #[arg(long)]
    warp_table: Option<PathBuf>,
    #[arg(long)]
    r_max: Option<f64>,
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args)]
struct DomainArgs {
    #[arg(long)]
    ball: Option<f64>,
    /// `r0,r1`.
    #[arg(long)]
    annulus: Option<String>,
    /// Exhaustion radii `R1,R2,...`.
    #[arg(long)]
    open: Option<String>,
}

#[derive(Args)]
struct OutputArgs {
    #[arg(long, default_value = "json")]
    format: String,
    #[arg(long)]
    output: Option<PathBuf>,
}

fn model_text(m: &ModelArgs) -> String {
    let mut s = format!("[model]\ndim = {}\n", m.dim);
    if let Some(k) = m.curvature {
        let _ = writeln!(s, "curvature = {k}");
    }
    if let Some(t) = &m.warp_table {
        let _ = writeln!(s, "warp_table = {}", t.display());
    }
    if let Some(r) = m.r_max {
        let _ = writeln!(s, "r_max = {r}");
    }
    let _ = write!(s, "[params]\np = {}\n", m.p);
    if let Some(g) = m.grid {
        let _ = writeln!(s, "grid = {g}");
    }
    if let Some(t) = m.tol {
        let _ = writeln!(s, "tolerance = {t}");
    }
    s
}

fn domain_text(d: &DomainArgs) -> String {
    let mut s = String::from("[domain]\n");
    if let Some(r) = d.ball {
        let _ = writeln!(s, "ball = {r}");
    }
    if let Some(a) = &d.annulus {
        let _ = writeln!(s, "annulus = {a}");
    }
    if let Some(o) = &d.open {
        let _ = writeln!(s, "open = {o}");
    }
    s
}

fn output_text(o: &OutputArgs, extra: &str) -> String {
    let mut s = format!("[output]\nformat = {}\n", o.format);
    if let Some(p) = &o.output {
        let _ = writeln!(s, "path = {}", p.display());
    }
    s.push_str(extra);
    s
}

fn encode(report: &CertificationReport, format: Format) -> String {
    match format {
        Format::Json => report.to_json(),
        Format::Csv => report.to_csv(),
    }
}

fn emit(sc: &Scenario, report: &CertificationReport) -> Result<(), String> {
    let text = encode(report, sc.format);
    match &sc.output {
        Some(path) => std::fs::write(path, text).map_err(|e| format!("cannot write {}: {e}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn scenario_from(command: Command) -> Result<(Scenario, bool), String> {
    let parsed = |text: String| parse_scenario_str(&text, None).map_err(|e| e.to_string());
    Ok(match command {
        Command::Run(a) => (load(a)?, false),
        Command::Certify(a) => (load(a)?, true),
        Command::Tone { model, domain, dump_eigenfunction, out } => {
            let extra = dump_eigenfunction.map(|p| format!("eigenfunction = {}\n", p.display())).unwrap_or_default();
            let text = format!("{}{}{}[tasks]\ntone\n", model_text(&model), domain_text(&domain), output_text(&out, &extra));
            (parsed(text)?, false)
        }
        Command::Bound { model, domain, method, field, budget, out } => {
            let task = match field {
                Some(f) => format!("bound:{method}:{f}"),
                None => format!("bound:{method}"),
            };
            let opt = budget.map(|b| format!("[optimize]\nbudget = {b}\n")).unwrap_or_default();
            let text = format!(
                "{}{}{}{opt}[tasks]\ntone\n{task}\n",
                model_text(&model),
                domain_text(&domain),
                output_text(&out, "")
            );
            (parsed(text)?, false)
        }
        Command::Growth { model, window, samples, out } => {
            let mut g = String::from("[growth]\n");
            if let Some(w) = window {
                let _ = writeln!(g, "window = {w}");
            }
            if let Some(n) = samples {
                let _ = writeln!(g, "samples = {n}");
            }
            let text = format!("{}{g}{}[tasks]\ngrowth\n", model_text(&model), output_text(&out, ""));
            (parsed(text)?, false)
        }
        Command::EssTone { model, r0, radii, window, out } => {
            let g = window.map(|w| format!("[growth]\nwindow = {w}\n")).unwrap_or_default();
            let text = format!(
                "{}{g}[essential]\nr0 = {r0}\nradii = {radii}\n{}[tasks]\ness_tone\n",
                model_text(&model),
                output_text(&out, "")
            );
            (parsed(text)?, false)
        }
        Command::Cheeger { model, window, samples, out } => {
            let mut g = String::from("[growth]\n");
            if let Some(w) = window {
                let _ = writeln!(g, "cheeger_window = {w}");
            }
            if let Some(n) = samples {
                let _ = writeln!(g, "cheeger_samples = {n}");
            }
            let text = format!("{}{g}{}[tasks]\ncheeger\n", model_text(&model), output_text(&out, ""));
            (parsed(text)?, false)
        }
    })
}

fn load(a: ScenarioArgs) -> Result<Scenario, String> {
    let mut sc = parse_scenario(&a.scenario).map_err(|e| e.to_string())?;
    if let Some(f) = a.format {
        sc.format = Format::parse(&f).ok_or_else(|| format!("invalid `format`: expected json or csv, got `{f}`"))?;
    }
    if a.output.is_some() {
        sc.output = a.output;
    }
    Ok(sc)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (scenario, certify) = match scenario_from(cli.command) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let report = run(&scenario);
    if certify {
        for line in report.summary_lines() {
            eprintln!("{line}");
        }
    }
    if let Err(e) = emit(&scenario, &report) {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    ExitCode::from(report.verdict().exit_code() as u8)
}
