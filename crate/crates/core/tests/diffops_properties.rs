use proptest::prelude::*;
use rellich::diffops::Calculus;
use rellich::expr::{Expr, Tape};
use rellich::identities::{evaluate_pointwise, PointwiseCase, PointwiseId};
use rellich::presets::{self, check_points, MetricPreset};

fn metrics() -> Vec<MetricPreset> {
    vec![
        presets::euclidean(3).unwrap(),
        presets::conformally_flat(3, presets::default_conformal_exponent(3)).unwrap(),
        presets::sphere_stereographic(3).unwrap(),
        presets::hyperbolic_ball(3).unwrap(),
    ]
}

fn trig_or_poly(n: usize, seed: u64) -> Expr {
    let p = presets::random_polynomial(n, 3, seed);
    if seed % 2 == 0 {
        p
    } else {
        Expr::sin(p) + presets::sine_product(n)
    }
}

/// Max `|H_ij − H_ji| / max(1, |H_ij|)` of a row-major Hessian at `x`.
fn asymmetry(hessian: &Tape, n: usize, x: &[f64]) -> f64 {
    let h = hessian.eval(x).unwrap();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let (a, b) = (h[i * n + j], h[j * n + i]);
            worst = worst.max((a - b).abs() / a.abs().max(b.abs()).max(1.0));
        }
    }
    worst
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn hessian_is_symmetric(which in 0usize..4, seed in 0u64..1000) {
        let m = &metrics()[which];
        let n = m.n();
        let mut c = Calculus::new(m.metric.clone());
        let tape = Tape::compile(&c.hessian(&trig_or_poly(n, seed)));
        for x in check_points(&m.metric, 10, seed) {
            let a = asymmetry(&tape, n, &x);
            prop_assert!(a <= 1e-12, "asymmetry {a:e} at {x:?}");
        }
    }

    #[test]
    fn hessian_of_iterated_laplacian_is_symmetric(which in 1usize..3, seed in 0u64..1000, l in 1usize..3) {
        let m = &metrics()[which];
        let n = m.n();
        let mut c = Calculus::new(m.metric.clone());
        let v = presets::random_polynomial(n, 2 * l + 1, seed);
        let lv = c.polyharmonic(&v, l).unwrap();
        let tape = Tape::compile(&c.hessian(&lv));
        for x in check_points(&m.metric, 5, seed) {
            let a = asymmetry(&tape, n, &x);
            prop_assert!(a <= 1e-9, "asymmetry {a:e} at {x:?}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// `∇_i∇_k∇^i(Δ^l v) = ∇_k Δ^{l+1} v + R^s_k ∇_s Δ^l v` on the sphere chart.
    #[test]
    fn third_derivative_commutation_on_sphere(seed in 0u64..1000, l in 0usize..2) {
        let s = presets::sphere_stereographic(3).unwrap();
        let v = presets::random_polynomial(3, 3, seed);
        let case = PointwiseCase::new(PointwiseId::D4, s.metric.clone())
            .with_v(v)
            .with_l(l)
            .with_points(check_points(&s.metric, 10, seed));
        let r = evaluate_pointwise(&case).unwrap();
        prop_assert!(r.max_residual <= 1e-8, "residual {:e}", r.max_residual);
    }
}
