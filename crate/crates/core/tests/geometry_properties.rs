use approx::assert_relative_eq;
use proptest::prelude::*;
use ptone_core::{RadialDomain, WarpedModel};
use std::f64::consts::PI;

#[test]
fn hyperbolic_plane_volume_closed_form() {
    let m = WarpedModel::hyperbolic(2, 1.0).unwrap();
    for r in [0.1, 1.0, 5.0, 20.0] {
        assert_relative_eq!(m.ball_volume(r).unwrap(), 2.0 * PI * (r.cosh() - 1.0), max_relative = 1e-10);
    }
    // far beyond f64 range of V itself
    let l = m.log_ball_volume(900.0).unwrap();
    assert_relative_eq!(l, (PI).ln() + 900.0, max_relative = 1e-10);
}

#[test]
fn sphere_has_finite_volume() {
    let m = WarpedModel::space_form(3, 1.0).unwrap();
    assert_relative_eq!(m.ball_volume(PI).unwrap(), 2.0 * PI * PI, max_relative = 1e-10);
    assert!(RadialDomain::ball(PI).unwrap().validate(&m).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn volume_matches_quadrature_and_grows(dim in 2usize..=6, k in -4.0f64..4.0, frac in 0.05f64..0.9) {
        let m = WarpedModel::space_form(dim, k).unwrap();
        let r = if k > 0.0 { frac * PI / k.sqrt() } else { frac * 10.0 };
        let v = m.ball_volume(r).unwrap();
        let vq = m.ball_volume_quadrature(r).unwrap();
        prop_assert!(((v - vq) / vq).abs() < 1e-8, "closed {v} quadrature {vq}");
        prop_assert!(m.ball_volume(r * 0.99).unwrap() < v);
        prop_assert!((m.log_ball_volume(r).unwrap() - v.ln()).abs() < 1e-9);
        prop_assert!(m.sphere_area(r).unwrap() > 0.0);
    }

    #[test]
    fn warp_ratio_is_log_derivative(dim in 2usize..=5, k in -4.0f64..4.0, frac in 0.05f64..0.9) {
        let m = WarpedModel::space_form(dim, k).unwrap();
        let r = frac * m.ratio_limit().min(10.0);
        let mu = m.warp_ratio(r).unwrap();
        let df = m.warp_derivative(r).unwrap();
        prop_assert!((mu * m.warp_value(r).unwrap() - df).abs() < 1e-12 * (1.0 + df.abs()));
        prop_assert!((m.distance_laplacian(r).unwrap() - (dim - 1) as f64 * mu).abs() < 1e-12 * (1.0 + mu.abs()));
        prop_assert!((m.radial_curvature(r).unwrap() - k).abs() < 1e-12);
    }

    #[test]
    fn tabulated_warp_tracks_sinh(r in 0.2f64..4.5) {
        let rs: Vec<f64> = (0..=500).map(|i| i as f64 * 0.01).collect();
        let fs: Vec<f64> = rs.iter().map(|r| r.sinh()).collect();
        let m = WarpedModel::from_samples(2, rs, fs, None).unwrap();
        prop_assert!((m.warp_value(r).unwrap() - r.sinh()).abs() < 1e-5 * r.cosh());
        prop_assert!((m.warp_derivative(r).unwrap() - r.cosh()).abs() < 1e-3 * r.cosh());
    }
}
