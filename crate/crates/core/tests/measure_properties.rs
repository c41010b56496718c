use proptest::prelude::*;
use rellich::diffops::VectorField;
use rellich::expr::{multi_indices, Expr, Tape};
use rellich::measure::{divergence_theorem_residual, integrate_boundary, integrate_volume, Domain, QuadratureSpec};
use rellich::presets::{self, monomial, MetricPreset};
use rellich::rng::SplitMix64;

fn axis_moment(k: u32, a: f64, b: f64) -> f64 {
    (b.powi(k as i32 + 1) - a.powi(k as i32 + 1)) / (k as f64 + 1.0)
}

fn abs_moment(k: u32, a: f64, b: f64) -> f64 {
    // ∫|x|^k over [a, b]
    let f = |t: f64| t.abs().powi(k as i32 + 1) / (k as f64 + 1.0) * t.signum();
    f(b) - f(a)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Gauss tensor rules with `q` nodes integrate degree `2q − 1` exactly.
    #[test]
    fn polynomials_up_to_degree_2q_minus_1_are_exact(
        n in 2usize..4,
        q in 2usize..7,
        seed in 0u64..10_000,
        lo in -1.0..0.0f64,
        width in 0.5..2.0f64,
    ) {
        let metric = presets::euclidean(n).unwrap();
        let lower = vec![lo; n];
        let upper = vec![lo + width; n];
        let domain = Domain::cuboid(lower.clone(), upper.clone()).unwrap();
        let mut rng = SplitMix64::new(seed);
        let mut terms = Vec::new();
        let (mut exact, mut scale) = (0.0, 0.0);
        // Per-axis degree ≤ 2q − 1 is what the tensor rule guarantees.
        for alpha in multi_indices(n, 2 * q - 1) {
            if alpha.iter().any(|&k| k as usize > 2 * q - 1) {
                continue;
            }
            let c = rng.uniform(-1.0, 1.0);
            terms.push(c * monomial(&alpha));
            exact += c * alpha.iter().map(|&k| axis_moment(k, lo, lo + width)).product::<f64>();
            scale += c.abs() * alpha.iter().map(|&k| abs_moment(k, lo, lo + width)).product::<f64>();
        }
        let tape = Tape::compile(&[Expr::sum(terms)]);
        let spec = QuadratureSpec::new(q, 2).unwrap();
        let got = integrate_volume(&tape, &domain, &metric.metric, &spec).unwrap()[0];
        prop_assert!((got - exact).abs() <= 1e-13 * scale.max(1e-300), "got {got}, exact {exact}, scale {scale}");
    }

    /// Doubling the order shrinks the error of a smooth integrand tenfold
    /// once the rule resolves it (from q = 4).
    #[test]
    fn refinement_reduces_error(a in -2.0..2.0f64, b in -2.0..2.0f64, which in 0usize..3) {
        let metric = match which {
            0 => presets::euclidean(2).unwrap(),
            1 => presets::sphere_stereographic(2).unwrap(),
            _ => presets::conformally_flat(2, presets::default_conformal_exponent(2)).unwrap(),
        };
        let f = Expr::exp(a * Expr::var(0)) * Expr::cos(b * Expr::var(1) + 0.3);
        let vol = Tape::compile(std::slice::from_ref(&f));
        let bdy = Tape::compile(&[f]);
        let ball = Domain::ball(vec![0.0, 0.0], 1.0).unwrap();
        for (name, domain) in [("box", Domain::unit_box(2)), ("ball", ball)] {
            let at = |q: usize| -> (f64, f64) {
                let spec = QuadratureSpec::uniform(q).unwrap();
                (
                    integrate_volume(&vol, &domain, &metric.metric, &spec).unwrap()[0],
                    integrate_boundary(&bdy, &domain, &metric.metric, &spec).unwrap()[0],
                )
            };
            let reference = at(32);
            let err = |q: usize| {
                let v = at(q);
                ((v.0 - reference.0).abs(), (v.1 - reference.1).abs())
            };
            for (q, e, e2) in [(4, err(4), err(8)), (8, err(8), err(16))] {
                for (coarse, fine, part) in [(e.0, e2.0, "volume"), (e.1, e2.1, "boundary")] {
                    if coarse > 1e-12 {
                        prop_assert!(fine <= coarse / 10.0, "{name} {part}: q={q} error {coarse:e}, q={} error {fine:e}", 2 * q);
                    }
                }
            }
        }
    }
}

fn pairs() -> Vec<(MetricPreset, Domain)> {
    let ball = Domain::ball(vec![0.0; 3], 1.0).unwrap();
    vec![
        (presets::euclidean(3).unwrap(), ball.clone()),
        (presets::conformally_flat(3, presets::default_conformal_exponent(3)).unwrap(), Domain::unit_box(3)),
        (presets::sphere_stereographic(3).unwrap(), Domain::cap(3, 1.0).unwrap()),
        (presets::hyperbolic_ball(3).unwrap(), Domain::cap(3, 0.5).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn divergence_theorem_for_random_fields(which in 0usize..4, seed in 0u64..10_000) {
        let (metric, domain) = &pairs()[which];
        let comps = (0..3).map(|i| presets::random_polynomial(3, 3, seed * 7 + i)).collect();
        let w = VectorField::new(metric.metric.clone(), comps, "w").unwrap();
        let d = divergence_theorem_residual(&w, domain, &QuadratureSpec::default()).unwrap();
        prop_assert!(d.residual <= 1e-8, "{}: residual {:e}", metric.name, d.residual);
    }
}
