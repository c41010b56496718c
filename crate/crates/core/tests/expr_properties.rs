use proptest::prelude::*;
use rellich::expr::{jet, sequence, DiffCache, Expr};

const N: usize = 3;

/// Expression trees that stay finite on `[-1, 1]^3`.
#[derive(Debug, Clone)]
enum Tree {
    Var(usize),
    Const(f64),
    Add(Box<Tree>, Box<Tree>),
    Sub(Box<Tree>, Box<Tree>),
    Mul(Box<Tree>, Box<Tree>),
    /// `a / (1 + b²)`
    Quot(Box<Tree>, Box<Tree>),
    Sin(Box<Tree>),
    Cos(Box<Tree>),
    /// `exp(sin(a))`
    ExpSin(Box<Tree>),
    /// `sqrt(1 + a²)`
    Hypot(Box<Tree>),
    /// `log(1 + a²)`
    LogSq(Box<Tree>),
}

impl Tree {
    fn build(&self) -> Expr {
        match self {
            Tree::Var(i) => Expr::var(*i),
            Tree::Const(c) => Expr::constant(*c),
            Tree::Add(a, b) => a.build() + b.build(),
            Tree::Sub(a, b) => a.build() - b.build(),
            Tree::Mul(a, b) => a.build() * b.build(),
            Tree::Quot(a, b) => a.build() / (1.0 + Expr::square(b.build())),
            Tree::Sin(a) => Expr::sin(a.build()),
            Tree::Cos(a) => Expr::cos(a.build()),
            Tree::ExpSin(a) => Expr::exp(Expr::sin(a.build())),
            Tree::Hypot(a) => Expr::sqrt(1.0 + Expr::square(a.build())),
            Tree::LogSq(a) => Expr::log(1.0 + Expr::square(a.build())),
        }
    }
}

fn tree() -> impl Strategy<Value = Tree> {
    let leaf = prop_oneof![(0..N).prop_map(Tree::Var), (-2.0..2.0f64).prop_map(Tree::Const)];
    leaf.prop_recursive(5, 48, 2, |inner| {
        let b = || inner.clone().prop_map(Box::new);
        prop_oneof![
            (b(), b()).prop_map(|(a, c)| Tree::Add(a, c)),
            (b(), b()).prop_map(|(a, c)| Tree::Sub(a, c)),
            (b(), b()).prop_map(|(a, c)| Tree::Mul(a, c)),
            (b(), b()).prop_map(|(a, c)| Tree::Quot(a, c)),
            b().prop_map(Tree::Sin),
            b().prop_map(Tree::Cos),
            b().prop_map(Tree::ExpSin),
            b().prop_map(Tree::Hypot),
            b().prop_map(Tree::LogSq),
        ]
    })
}

fn point() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-1.0..1.0f64, N)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn derivative_matches_central_difference(t in tree(), x in point(), i in 0..N) {
        let e = t.build();
        let step = 1e-5;
        let mut plus = x.clone();
        let mut minus = x.clone();
        plus[i] += step;
        minus[i] -= step;
        let fd = (e.eval(&plus).unwrap() - e.eval(&minus).unwrap()) / (2.0 * step);
        let d = e.diff(i).eval(&x).unwrap();
        prop_assert!((d - fd).abs() <= 1e-6 * (1.0 + d.abs()), "{e}: d = {d}, fd = {fd}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn mixed_partials_commute(t in tree(), x in point(), i in 0..N, j in 0..N) {
        prop_assume!(i != j);
        let e = t.build();
        let a = e.diff(i).diff(j).eval(&x).unwrap();
        let b = e.diff(j).diff(i).eval(&x).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0), "{e}: {a} vs {b}");
    }

    #[test]
    fn jet_entries_equal_nested_derivatives(t in tree(), x in point()) {
        let e = t.build();
        let j = jet(&e, &x, 3).unwrap();
        for alpha in j.indices() {
            let d = DiffCache::new().partial(&e, &sequence(alpha)).eval(&x).unwrap();
            prop_assert_eq!(j.get(alpha).unwrap().to_bits(), d.to_bits(), "{} at {:?}", e, alpha);
        }
    }

    #[test]
    fn display_round_trips(t in tree(), x in point()) {
        let e = t.build();
        let back = rellich::expr::parse(&e.to_string(), N).unwrap();
        let (a, b) = (e.eval(&x).unwrap(), back.eval(&x).unwrap());
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{e}: {a} vs {b}");
    }
}
