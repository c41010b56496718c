use std::collections::HashMap;

use super::{Expr, Op};

/// Memo table for symbolic partial derivatives.
///
/// Keys are node identities, so differentiating a DAG costs time linear in
/// its number of distinct nodes, and repeated requests (all second partials
/// of a field, say) reuse earlier work. The source node is stored alongside
/// the result so the key cannot be recycled while the entry lives.
#[derive(Default)]
pub struct DiffCache {
    memo: HashMap<(usize, usize), (Expr, Expr)>,
}

impl DiffCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.memo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.memo.is_empty()
    }

    /// `∂e/∂x_var`.
    pub fn diff(&mut self, e: &Expr, var: usize) -> Expr {
        match e.op() {
            Op::Const(_) => return Expr::zero(),
            Op::Var(i) => return Expr::constant(if i == var { 1.0 } else { 0.0 }),
            _ => {}
        }
        let key = (e.addr(), var);
        if let Some((_, d)) = self.memo.get(&key) {
            return d.clone();
        }
        let d = self.rule(e, var);
        self.memo.insert(key, (e.clone(), d.clone()));
        d
    }

    fn rule(&mut self, e: &Expr, var: usize) -> Expr {
        let args = e.args();
        match e.op() {
            Op::Const(_) | Op::Var(_) => unreachable!("handled before memo lookup"),
            Op::Sum => {
                let terms: Vec<Expr> = args.iter().map(|a| self.diff(a, var)).collect();
                Expr::sum(terms)
            }
            Op::Product => {
                let mut terms = Vec::with_capacity(args.len());
                for k in 0..args.len() {
                    let dk = self.diff(&args[k], var);
                    if dk.is_zero() {
                        continue;
                    }
                    let others = args
                        .iter()
                        .enumerate()
                        .filter(|&(j, _)| j != k)
                        .map(|(_, a)| a.clone());
                    terms.push(Expr::product(others.chain(std::iter::once(dk))));
                }
                Expr::sum(terms)
            }
            Op::Quotient => {
                let (a, b) = (&args[0], &args[1]);
                let da = self.diff(a, var);
                let db = self.diff(b, var);
                let first = Expr::quotient(da, b.clone());
                if db.is_zero() {
                    return first;
                }
                first - Expr::quotient(a * db, Expr::square(b.clone()))
            }
            Op::Pow(p) => {
                let a = &args[0];
                let da = self.diff(a, var);
                if da.is_zero() {
                    return Expr::zero();
                }
                Expr::product([Expr::constant(p), Expr::pow(a.clone(), p - 1.0), da])
            }
            Op::Neg => Expr::neg(self.diff(&args[0], var)),
            Op::Exp => {
                let da = self.diff(&args[0], var);
                e * da
            }
            Op::Log => {
                let da = self.diff(&args[0], var);
                Expr::quotient(da, args[0].clone())
            }
            Op::Sin => {
                let da = self.diff(&args[0], var);
                Expr::cos(args[0].clone()) * da
            }
            Op::Cos => {
                let da = self.diff(&args[0], var);
                -(Expr::sin(args[0].clone()) * da)
            }
            Op::Sinh => {
                let da = self.diff(&args[0], var);
                Expr::cosh(args[0].clone()) * da
            }
            Op::Cosh => {
                let da = self.diff(&args[0], var);
                Expr::sinh(args[0].clone()) * da
            }
        }
    }

    /// Mixed partial along the index sequence `vars`, applied left to right.
    pub fn partial(&mut self, e: &Expr, vars: &[usize]) -> Expr {
        vars.iter().fold(e.clone(), |acc, &v| self.diff(&acc, v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x(i: usize) -> Expr {
        Expr::var(i)
    }

    #[test]
    fn product_rule_on_monomial() {
        let e = &x(0) * &x(0) * &x(1);
        let d = e.diff(0);
        assert_eq!(d.eval(&[1.0, 1.0]).unwrap(), 2.0);
        assert_eq!(d.eval(&[3.0, 2.0]).unwrap(), 12.0);
    }

    #[test]
    fn derivative_of_constant_vanishes() {
        assert!(Expr::constant(7.0).diff(0).is_zero());
    }

    #[test]
    fn conformal_factor_derivative_matches_finite_difference() {
        // d/dx1 of 4/(1+x1^2)^2, closed form -16 x1/(1+x1^2)^3.
        let e = 4.0 / Expr::square(1.0 + &x(0) * &x(0));
        let d = e.diff(0);
        let at = |t: f64| e.eval(&[t]).unwrap();
        let h = 1e-5;
        let fd = (at(1.0 + h) - at(1.0 - h)) / (2.0 * h);
        let exact = d.eval(&[1.0]).unwrap();
        assert!((exact - fd).abs() < 1e-6, "{exact} vs {fd}");
        assert!((exact - (-2.0)).abs() < 1e-14);
    }

    #[test]
    fn memo_reuses_entries() {
        let mut cache = DiffCache::new();
        let e = Expr::sin(&x(0) * &x(1));
        let a = cache.diff(&e, 0);
        let size = cache.len();
        let b = cache.diff(&e, 0);
        assert_eq!(size, cache.len());
        assert_eq!(a, b);
    }

    #[test]
    fn all_elementary_rules() {
        let t: f64 = 0.37;
        let cases: Vec<(Expr, f64)> = vec![
            (Expr::exp(2.0 * x(0)), 2.0 * (2.0 * t).exp()),
            (Expr::log(1.0 + x(0)), 1.0 / (1.0 + t)),
            (Expr::sin(x(0)), t.cos()),
            (Expr::cos(x(0)), -t.sin()),
            (Expr::sinh(x(0)), t.cosh()),
            (Expr::cosh(x(0)), t.sinh()),
            (Expr::sqrt(x(0)), 0.5 / t.sqrt()),
            (Expr::pow(x(0), -1.5), -1.5 * t.powf(-2.5)),
            (1.0 / x(0), -1.0 / (t * t)),
        ];
        for (e, expected) in cases {
            let got = e.diff(0).eval(&[t]).unwrap();
            assert!((got - expected).abs() < 1e-14, "{e}: {got} vs {expected}");
        }
    }
}
