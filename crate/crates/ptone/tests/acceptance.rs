//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit when
//! any criterion fails.

use std::f64::consts::PI;
use std::process::Command;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ptone_core::fields::*;
use ptone_core::growth::*;
use ptone_core::quadrature::golden_section_max;
use ptone_core::tone::*;
use ptone_core::*;

type Outcome = Result<String, String>;

fn sp(p: f64) -> SpectralParams {
    SpectralParams::new(p).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn interval(p: f64, cells: usize) -> Result<f64, String> {
    let g = Arc::new(RadialGrid::flat(0.0, 1.0, cells, Boundary::Dirichlet, Boundary::Dirichlet).map_err(|e| e.to_string())?);
    Ok(solve_on_grid(g, &sp(p), &SolverOptions::default()).map_err(|e| e.to_string())?.0.value)
}

fn criterion_1() -> Outcome {
    let lam = interval(2.0, 2048)?;
    let err = rel(lam, PI * PI);
    check(err <= 1e-3, format!("lambda = {lam:.10}, relative error {err:.3e} (limit 1e-3)"))
}

fn criterion_2() -> Outcome {
    let p = 3.0;
    let exact = (p - 1.0) * (2.0 * PI / (p * (PI / p).sin())).powf(p);
    let lam = interval(p, 2048)?;
    let err = rel(lam, exact);
    let g = Arc::new(RadialGrid::flat(0.0, 1.0, 5, Boundary::Dirichlet, Boundary::Dirichlet).unwrap());
    let bf = brute_force_tone(&g, &sp(p), 4000, 2024).map_err(|e| e.to_string())?;
    let small = solve_on_grid(g, &sp(p), &SolverOptions::default()).map_err(|e| e.to_string())?.0.value;
    let oracle = rel(small, bf);
    check(
        err <= 5e-3 && oracle <= 1e-3,
        format!("lambda = {lam:.8} vs {exact:.8} (rel {err:.3e}, limit 5e-3); N=5 solver {small:.10} vs brute force {bf:.10} (rel {oracle:.3e}, limit 1e-3)"),
    )
}

fn criterion_3() -> Outcome {
    let m = WarpedModel::euclidean(3).unwrap();
    let ball = RadialDomain::ball(1.0).unwrap();
    let lam = solve_first_tone(&m, ball, &sp(2.0), 2048, 1e-10).map_err(|e| e.to_string())?.0.value;
    let err = rel(lam, PI * PI);
    let b = ball_comparison_bound(&m, 1.0, &sp(2.0), 20480).map_err(|e| e.to_string())?.value;
    check(
        err <= 2e-3 && rel(b, 2.25) <= 1e-12 && b <= lam,
        format!("lambda = {lam:.8} (rel {err:.3e}, limit 2e-3); ball comparison bound {b:.15} <= lambda"),
    )
}

fn criterion_4() -> Outcome {
    let mut worst_gap = 0.0f64;
    let mut worst_raw = 0.0f64;
    let mut failures = Vec::new();
    let mut runs = 0;
    for n in [2usize, 3, 4] {
        for c in [1.0, 2.0] {
            for p in [1.5, 2.0, 3.0] {
                let m = WarpedModel::hyperbolic(n, c).unwrap();
                let params = sp(p);
                let radii: Vec<f64> = [1.0, 2.0, 5.0, 10.0, 15.0].iter().map(|r| r / c).collect();
                let est = tone_of_open_manifold(&m, &params, &radii, 2048, &SolverOptions::default())
                    .map_err(|e| format!("n={n} c={c} p={p}: {e}"))?;
                runs += 1;
                let mk = mckean_bound(n, c, &params);
                if !est.monotone {
                    failures.push(format!("n={n} c={c} p={p}: not monotone"));
                }
                if let Some(t) = est.tones.iter().find(|t| t.value < mk * (1.0 - 1e-6)) {
                    failures.push(format!("n={n} c={c} p={p}: tone {} below McKean {mk}", t.value));
                }
                if p == 2.0 {
                    let target = ((n - 1) as f64 * c).powi(2) / 4.0;
                    let gap = rel(est.extrapolated, target);
                    worst_gap = worst_gap.max(gap);
                    worst_raw = worst_raw.max(rel(est.tones.last().unwrap().value, target));
                    if gap > 0.02 {
                        failures.push(format!("n={n} c={c}: extrapolated {} vs {target}", est.extrapolated));
                    }
                }
            }
        }
    }
    check(
        failures.is_empty(),
        format!(
            "{runs} exhaustions; worst p=2 gap of the extrapolated R=15/c tone {worst_gap:.3e} (limit 2e-2; raw ball tone gap {worst_raw:.3e}) {failures:?}"
        ),
    )
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_young = 0.0f64;
    for _ in 0..100 {
        let (a, b, p) = (rng.gen_range(0.0..10.0), rng.gen_range(0.05..10.0), rng.gen_range(1.1..5.0));
        let yp = YoungParams::new(a, b, sp(p)).map_err(|e| e.to_string())?;
        let (eps, psi) = young_psi_max(&yp);
        let (_, gs) = golden_section_max(|e| yp.psi(e), 0.0, 4.0 * eps.max(1e-3) + 1.0, 1e-13);
        worst_young = worst_young.max((psi - gs).abs() / psi.max(1.0));
    }
    // the ratio bound of actual fields against the ε-chain
    let mut worst_chain = 0.0f64;
    for (model, radius) in [
        (WarpedModel::euclidean(3).unwrap(), 1.0),
        (WarpedModel::hyperbolic(2, 1.0).unwrap(), 10.0),
        (WarpedModel::hyperbolic(4, 0.5).unwrap(), 3.0),
    ] {
        let ball = RadialDomain::ball(radius).unwrap();
        let s = DomainSampler::new(&model, ball, 5000).unwrap();
        for _ in 0..10 {
            let params = sp(rng.gen_range(1.1..5.0));
            let field = if rng.gen_bool(0.5) {
                RadialField::linear(rng.gen_range(0.1..3.0))
            } else {
                RadialField::constant(rng.gen_range(0.1..3.0))
            };
            let r = c_constant_bound(&params, &s, &field);
            if !r.valid {
                continue;
            }
            let chain = ratio_bound_via_young(r.inf_value, r.sup_value.unwrap(), &params).map_err(|e| e.to_string())?;
            worst_chain = worst_chain.max(rel(chain, r.value));
        }
    }
    check(
        worst_young <= 1e-10 && worst_chain <= 1e-12,
        format!("closed form vs golden section {worst_young:.3e} (limit 1e-10); ratio bound vs chain {worst_chain:.3e} (limit 1e-12)"),
    )
}

fn criterion_6() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for (name, model, radius, p) in [
        ("R^3", WarpedModel::euclidean(3).unwrap(), 1.0, 2.0),
        ("R^3", WarpedModel::euclidean(3).unwrap(), 1.0, 3.0),
        ("H^2", WarpedModel::hyperbolic(2, 1.0).unwrap(), 5.0, 2.0),
        ("H^3", WarpedModel::hyperbolic(3, 1.0).unwrap(), 3.0, 1.5),
    ] {
        let params = sp(p);
        let ball = RadialDomain::ball(radius).unwrap();
        let grid = Arc::new(RadialGrid::new(&model, ball, 4096).unwrap());
        let (t, u) = solve_on_grid(grid, &params, &SolverOptions::default()).map_err(|e| e.to_string())?;
        let f = eigenfunction_field(&u, &params, EIGENFIELD_TRUST_FRACTION).map_err(|e| e.to_string())?;
        let s = DomainSampler::new(&model, ball, 4096).unwrap();
        let b = pointwise_bound(&params, &s, &f).value;
        let prof = functional_profile(&params, &s, &f);
        let (lo, hi) = prof.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &(_, v)| (a.min(v), b.max(v)));
        let gap = rel(b, t.value);
        let spread = (hi - lo) / t.value;
        ok &= gap <= 1e-2 && spread <= 5e-2;
        lines.push(format!("{name} R={radius} p={p}: gap {gap:.2e} spread {spread:.2e}"));
    }
    check(ok, format!("{} (limits 1e-2, 5e-2)", lines.join("; ")))
}

fn criterion_7() -> Outcome {
    let mut worst = 0.0f64;
    for n in [2usize, 3, 4] {
        for c in [1.0, 2.0] {
            let m = WarpedModel::hyperbolic(n, c).unwrap();
            let g = theta_default(&m, 30.0 / c).map_err(|e| e.to_string())?;
            worst = worst.max(rel(g.theta, (n - 1) as f64 * c));
        }
    }
    let e3 = WarpedModel::euclidean(3).unwrap();
    let flat = theta_default(&e3, 1000.0).map_err(|e| e.to_string())?.theta;
    let short = theta_estimate(&e3, 20.0, 40.0, THETA_SAMPLES).map_err(|e| e.to_string())?.theta;
    check(
        worst <= 1e-2 && flat <= 0.02,
        format!("worst hyperbolic error {worst:.3e} (limit 1e-2); euclidean theta {flat:.4} on [500, 1000] (limit 0.02; {short:.4} on [20, 40])"),
    )
}

fn h2_essential() -> Result<(GrowthEstimate, EssentialToneEstimate), String> {
    let m = WarpedModel::hyperbolic(2, 1.0).unwrap();
    let g = theta_default(&m, 40.0).map_err(|e| e.to_string())?;
    let e = essential_tone(&m, &sp(2.0), 1.0, &[5.0, 10.0, 15.0, 20.0], 2048, &SolverOptions::default(), Some(&g))
        .map_err(|e| e.to_string())?;
    Ok((g, e))
}

fn criterion_8() -> Outcome {
    let (g, e) = h2_essential()?;
    let brooks = brooks_bound(g.theta, &sp(2.0));
    check(
        e.value <= brooks * 1.01 && rel(e.value, 0.25) <= 0.02 && e.exhaustion.monotone,
        format!("essential tone {:.8} <= {:.8} (theta {:.8}); gap to 1/4 {:.3e} (limit 2e-2)", e.value, brooks * 1.01, g.theta, rel(e.value, 0.25)),
    )
}

fn criterion_9() -> Outcome {
    let mut worst = f64::NEG_INFINITY;
    let mut scenarios = 0;
    let mut models: Vec<(WarpedModel, f64)> = Vec::new();
    for n in [2usize, 3, 4] {
        for c in [1.0, 2.0] {
            models.push((WarpedModel::hyperbolic(n, c).unwrap(), 30.0 / c));
        }
    }
    models.push((WarpedModel::euclidean(2).unwrap(), 1000.0));
    models.push((WarpedModel::euclidean(3).unwrap(), 1000.0));
    for (m, r_max) in &models {
        let g = theta_default(m, *r_max).map_err(|e| e.to_string())?;
        let h = radial_cheeger(m, r_max / 1000.0, *r_max, 1000).map_err(|e| e.to_string())?;
        worst = worst.max(h.h - g.theta);
        scenarios += 1;
    }
    let (g, e) = h2_essential()?;
    let m = WarpedModel::hyperbolic(2, 1.0).unwrap();
    let h = radial_cheeger(&m, 0.04, 40.0, 1000).map_err(|e| e.to_string())?;
    let eq = (h.h - g.theta).abs() / g.theta;
    let report = verify_orderings(&sp(2.0), &g, &h, Some(e.value), 1e-2, 0.05);
    let tone_gap = rel(e.value, brooks_bound(g.theta, &sp(2.0)));
    check(
        worst <= 1e-2 && eq <= 1e-2 && tone_gap <= 0.05 && report.pass,
        format!("max h - theta over {scenarios} scenarios {worst:.3e} (limit 1e-2); H^2 |h - theta|/theta {eq:.3e}; tone vs theta^2/4 {tone_gap:.3e} (limit 5e-2); ordering report pass = {}", report.pass),
    )
}

fn criterion_10() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (mut bounds, mut valid_ratio, mut positive) = (0usize, 0usize, 0usize);
    let mut failures = Vec::new();
    let mut closest = f64::INFINITY;
    for case in 0..50 {
        let n = rng.gen_range(2..=5usize);
        let k = -rng.gen_range(0.0..4.0);
        let p = rng.gen_range(1.2..4.0);
        let params = sp(p);
        let m = WarpedModel::space_form(n, k).unwrap();
        let domain = if rng.gen_bool(0.5) {
            RadialDomain::ball(rng.gen_range(0.5..3.0)).unwrap()
        } else {
            let a = rng.gen_range(0.2..1.5);
            RadialDomain::annulus(a, a + rng.gen_range(0.5..2.0)).unwrap()
        };
        let tone = solve_first_tone(&m, domain, &params, 1024, 1e-10).map_err(|e| e.to_string())?.0.value;
        let s = DomainSampler::new(&m, domain, 10240).unwrap();
        let (lo, hi) = domain.bounds();
        for _ in 0..4 {
            let knots: Vec<f64> = (0..16).map(|i| lo + (hi - lo) * i as f64 / 15.0).collect();
            let scale = rng.gen_range(0.1..5.0);
            let mut values: Vec<f64> = (0..16).map(|_| scale * rng.gen_range(-1.0..1.0)).collect();
            if rng.gen_bool(0.5) {
                // increasing positive profiles have positive divergence more often
                values.iter_mut().for_each(|v| *v = v.abs());
                values.sort_by(f64::total_cmp);
            }
            let field = RadialField::piecewise_linear(knots, values).unwrap();
            let ratio = c_constant_bound(&params, &s, &field);
            let (_, best_scaled) = golden_section_max(|t| pointwise_bound(&params, &s, &field.scaled(t)).value, 0.0, 4.0, 1e-8);
            let mut reports = vec![pointwise_bound(&params, &s, &field).value, best_scaled];
            if ratio.valid {
                valid_ratio += 1;
                reports.push(ratio.value);
            }
            for v in reports {
                bounds += 1;
                if v > 0.0 {
                    positive += 1;
                    closest = closest.min((tone - v) / tone);
                }
                if v > tone * (1.0 + 1e-6) {
                    failures.push(format!("case {case}: bound {v} > tone {tone}"));
                }
            }
        }
    }
    check(
        failures.is_empty(),
        format!("{bounds} bounds over 50 scenarios ({valid_ratio} valid ratio bounds, {positive} positive; smallest relative margin {closest:.3e}) {failures:?}"),
    )
}

fn criterion_11() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let scenario = concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/h2_mckean.scn");
    let run = |name: &str, format: &str| -> Result<Vec<u8>, String> {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_ptone"))
            .args(["certify", scenario, "--format", format, "--output"])
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        if status.status.code() != Some(0) {
            return Err(format!("certify exited with {:?}", status.status.code()));
        }
        std::fs::read(&out).map_err(|e| e.to_string())
    };
    let a = run("a.json", "json")?;
    let b = run("b.json", "json")?;
    let c = run("a.csv", "csv")?;
    let d = run("b.csv", "csv")?;
    // same numbers in both encodings
    let json: serde_json::Value = serde_json::from_slice(&a).map_err(|e| e.to_string())?;
    let json_values: Vec<String> = json["results"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["value"].as_f64().map(|v| format!("{v:.16e}")).unwrap_or_default())
        .collect();
    let csv_text = String::from_utf8(c.clone()).map_err(|e| e.to_string())?;
    let csv_values: Vec<String> = csv_text.lines().skip(1).filter(|l| !l.starts_with("verdict")).map(|l| l.split(',').nth(1).unwrap_or("").to_string()).collect();
    check(
        a == b && c == d && json_values == csv_values,
        format!("json {} bytes and csv {} bytes identical across runs; {} values agree between encodings", a.len(), c.len(), json_values.len()),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("interval eigenvalue, p = 2", criterion_1),
        ("interval eigenvalue, p = 3, brute-force oracle", criterion_2),
        ("euclidean unit ball and comparison bound", criterion_3),
        ("McKean certification on hyperbolic spaces", criterion_4),
        ("Young machinery", criterion_5),
        ("eigenfunction field sharpness", criterion_6),
        ("volume growth", criterion_7),
        ("Brooks certification", criterion_8),
        ("Cheeger ordering", criterion_9),
        ("sandwich property", criterion_10),
        ("determinism", criterion_11),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = std::time::Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {:>2} PASS {name}: {d} [{secs:.1}s]", i + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name}: {d} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
