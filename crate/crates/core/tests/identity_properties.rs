use proptest::prelude::*;
use rellich::diffops::{Calculus, VectorField};
use rellich::expr::{Expr, Tape};
use rellich::identities::{
    evaluate_integral, evaluate_pointwise, polyharmonic_flux, IdentityReport, IntegralCase, IntegralId, PointwiseCase,
    PointwiseId,
};
use rellich::measure::{integrate_boundary, integrate_volume, Domain, QuadratureSpec};
use rellich::presets::{self, check_points};

fn scale(r: &IdentityReport) -> f64 {
    r.terms.iter().fold(1.0f64, |acc, t| acc.max(t.value.abs()))
}

fn x(i: usize) -> Expr {
    Expr::var(i)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn swap_symmetry_on_flat_box(seed in 0u64..10_000, which in 0usize..3) {
        let n = 3;
        let e = presets::euclidean(n).unwrap();
        let h = presets::dilation(&e).unwrap();
        let id = [IntegralId::GeneralRellichN9, IntegralId::LaplaceRellichN13, IntegralId::PolyN30][which];
        let f = x(n) * x(2 * n) + x(0) * x(n + 1) * x(2 * n + 2) + x(n) * x(n) * x(2 * n + 1);
        let case = IntegralCase::new(id, e.metric.clone(), Domain::unit_box(n), presets::random_polynomial(n, 4, seed))
            .with_v(presets::random_polynomial(n, 4, seed + 1))
            .with_h(h.field)
            .with_f(f)
            .with_quadrature(QuadratureSpec::uniform(8).unwrap());
        let a = evaluate_integral(&case).unwrap();
        let b = evaluate_integral(&case.swapped()).unwrap();
        let s = scale(&a).max(scale(&b));
        prop_assert!((a.lhs - b.lhs).abs() <= 1e-12 * s, "{id}: lhs {} vs {}", a.lhs, b.lhs);
        prop_assert!((a.rhs - b.rhs).abs() <= 1e-12 * s, "{id}: rhs {} vs {}", a.rhs, b.rhs);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn swap_symmetry_biharmonic_on_sphere(seed in 0u64..10_000) {
        let s = presets::sphere_stereographic(3).unwrap();
        let h = presets::sphere_conformal(&s, 1).unwrap();
        let bump = presets::bump(3, 2);
        let case = IntegralCase::new(
            IntegralId::BiharmonicN38,
            s.metric.clone(),
            Domain::cap(3, 1.0).unwrap(),
            &bump * presets::random_polynomial(3, 2, seed),
        )
        .with_v(&bump * presets::random_polynomial(3, 2, seed + 1))
        .with_h(h.field)
        .with_quadrature(QuadratureSpec::uniform(10).unwrap());
        let a = evaluate_integral(&case).unwrap();
        let b = evaluate_integral(&case.swapped()).unwrap();
        let sc = scale(&a).max(scale(&b));
        prop_assert!((a.lhs - b.lhs).abs() <= 1e-12 * sc);
        prop_assert!((a.rhs - b.rhs).abs() <= 1e-12 * sc);
    }

    /// With an isometric field every μ term of N38 vanishes.
    #[test]
    fn isometry_kills_mu_terms(seed in 0u64..10_000, sphere in any::<bool>()) {
        let (metric, domain) = if sphere {
            (presets::sphere_stereographic(3).unwrap(), Domain::cap(3, 0.8).unwrap())
        } else {
            (presets::euclidean(3).unwrap(), Domain::ball(vec![0.0; 3], 1.0).unwrap())
        };
        let h = presets::rotation(&metric).unwrap();
        let case = IntegralCase::new(IntegralId::BiharmonicN38, metric.metric.clone(), domain, presets::random_polynomial(3, 4, seed))
            .with_v(presets::random_polynomial(3, 4, seed + 1))
            .with_h(h.field)
            .with_quadrature(QuadratureSpec::uniform(10).unwrap());
        let r = evaluate_integral(&case).unwrap();
        prop_assert!(r.max_mu_term() <= 1e-12, "μ term {:e}", r.max_mu_term());
        prop_assert!(r.rel_residual <= 1e-9, "residual {:e}", r.rel_residual);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// `u(λx)` on `Ω/λ`: the identity still closes and every term scales
    /// by `λ^{4m−n}`.
    #[test]
    fn single_polyharmonic_scaling_covariance(seed in 0u64..10_000, lambda in 0.5..2.0f64, n in 2usize..4, ball in any::<bool>()) {
        let e = presets::euclidean(n).unwrap();
        let h = presets::dilation(&e).unwrap();
        let u = presets::random_polynomial(n, 6, seed);
        let scaled: Vec<Option<Expr>> = (0..n).map(|i| Some(lambda * x(i))).collect();
        let u_lambda = u.substitute(&scaled);
        let domain = |r: f64| {
            if ball {
                Domain::ball(vec![0.0; n], r).unwrap()
            } else {
                Domain::cuboid(vec![0.0; n], vec![r; n]).unwrap()
            }
        };
        let case = |u: Expr, r: f64| {
            IntegralCase::new(IntegralId::PolySingleN31, e.metric.clone(), domain(r), u)
                .with_h(h.field.clone())
                .with_quadrature(QuadratureSpec::uniform(12).unwrap())
        };
        let a = evaluate_integral(&case(u, 1.0)).unwrap();
        let b = evaluate_integral(&case(u_lambda, 1.0 / lambda)).unwrap();
        prop_assert!(a.rel_residual <= 1e-9 && b.rel_residual <= 1e-9, "{:e} {:e}", a.rel_residual, b.rel_residual);
        let factor = lambda.powi(4 - n as i32);
        for (ta, tb) in a.terms.iter().zip(&b.terms) {
            prop_assert!((tb.value - factor * ta.value).abs() <= 1e-9 * scale(&a) * factor.max(1.0), "{}: {} vs {}", ta.label, tb.value, factor * ta.value);
        }
    }

    /// Integrating the pointwise generator and applying the divergence
    /// theorem to its flux reproduces both sides of N28.
    #[test]
    fn integrated_generator_reproduces_compact_identity(seed in 0u64..10_000, ball in any::<bool>()) {
        let n = 3;
        let e = presets::euclidean(n).unwrap();
        let h = presets::dilation(&e).unwrap();
        let domain = if ball { Domain::ball(vec![0.0; n], 1.0).unwrap() } else { Domain::unit_box(n) };
        let u = presets::random_polynomial(n, 5, seed);
        let v = presets::random_polynomial(n, 4, seed + 1);
        let spec = QuadratureSpec::uniform(10).unwrap();

        let mut c = Calculus::new(e.metric.clone());
        let eta = Expr::dot(&h.field.components, &c.gradient(&v));
        let phi = Expr::dot(&h.field.components, &c.gradient(&u));
        let generator = c.laplacian(&u) * c.laplacian(&eta) + c.laplacian(&v) * c.laplacian(&phi);
        let w = polyharmonic_flux(&mut c, &u, &v, &h.field.components, 1).unwrap();
        let flux = Expr::sum((0..n).map(|i| &w[i] * x(n + i)));
        let a = integrate_volume(&Tape::compile(&[generator]), &domain, &e.metric, &spec).unwrap()[0];
        let b = integrate_boundary(&Tape::compile(&[flux]), &domain, &e.metric, &spec).unwrap()[0];

        let case = IntegralCase::new(IntegralId::PolyCompactN28, e.metric.clone(), domain, u)
            .with_v(v)
            .with_h(h.field.clone())
            .with_quadrature(spec);
        let r = evaluate_integral(&case).unwrap();
        let s = scale(&r).max(a.abs()).max(b.abs());
        prop_assert!((r.lhs - (a - b)).abs() <= 1e-9 * s, "lhs {} vs {}", r.lhs, a - b);
        prop_assert!((r.rhs - (a - b)).abs() <= 1e-9 * s, "rhs {} vs {}", r.rhs, a - b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// Curvature lemmas on random data for conformal fields with varying μ.
    #[test]
    fn pointwise_lemmas_on_random_data(seed in 0u64..10_000, sphere in any::<bool>(), b in proptest::collection::vec(-1.0..1.0f64, 3)) {
        let (metric, h) = if sphere {
            let s = presets::sphere_stereographic(3).unwrap();
            let h = presets::sphere_conformal(&s, 1 + (seed % 4) as usize).unwrap();
            (s, h)
        } else {
            let c = presets::conformally_flat(3, presets::default_conformal_exponent(3)).unwrap();
            let h = presets::special_conformal(&c, &b).unwrap();
            (c, h)
        };
        let points = check_points(&metric.metric, 25, seed);
        let u = presets::random_polynomial(3, 3, seed);
        let v = Expr::sin(presets::random_polynomial(3, 2, seed + 1));
        for id in [PointwiseId::N20, PointwiseId::N21, PointwiseId::N22, PointwiseId::N34, PointwiseId::N35, PointwiseId::N37, PointwiseId::D4] {
            let case = PointwiseCase::new(id, metric.metric.clone())
                .with_u(u.clone())
                .with_v(v.clone())
                .with_h(h.field.clone())
                .with_points(points.clone());
            let r = evaluate_pointwise(&case).unwrap();
            prop_assert!(r.max_residual <= 1e-8, "{id} on {}: {:e}", metric.name, r.max_residual);
        }
        let arbitrary = VectorField::new(metric.metric.clone(), vec![presets::random_polynomial(3, 2, seed + 2), Expr::cos(x(0)), x(1) * x(2)], "h").unwrap();
        let f = x(3) * x(6) + (x(4) * x(4) + x(0)) * x(8);
        let case = PointwiseCase::new(PointwiseId::AB8, metric.metric.clone())
            .with_u(u)
            .with_v(v)
            .with_h(arbitrary)
            .with_f(f)
            .with_points(points);
        let r = evaluate_pointwise(&case).unwrap();
        prop_assert!(r.max_residual <= 1e-8, "AB8 on {}: {:e}", metric.name, r.max_residual);
    }
}
