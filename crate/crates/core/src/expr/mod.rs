//! Closed-form expressions over chart coordinates.
//!
//! An [`Expr`] is an immutable, reference-counted DAG. Subexpressions are
//! shared by pointer, so differentiating a product reuses its factors rather
//! than copying them. Construction goes through smart constructors that fold
//! constants and drop neutral elements (`0·e → 0`, `e + 0 → e`, `1·e → e`);
//! there is no canonical form beyond that.
//!
//! Variables are plain indices. Chart coordinates `x1..xn` are variables
//! `0..n`; callers that need extra slots (unit normals on a boundary, the
//! gradient slots of a Lagrangian) place them after the coordinates.

mod diff;
mod jet;
mod parse;
mod tape;

pub use diff::DiffCache;
pub use jet::{jet, multi_indices, sequence, JetValue};
pub use parse::{parse, parse_with, ParseError, Symbols};
pub use tape::{EvalError, Tape};

use std::collections::HashSet;
use std::fmt;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::ops;
use std::sync::Arc;

/// Node kind of an expression.
#[derive(Debug, Clone, Copy)]
pub enum Op {
    Const(f64),
    Var(usize),
    Sum,
    Product,
    Quotient,
    /// `arg^p` with a real exponent.
    Pow(f64),
    Neg,
    Exp,
    Log,
    Sin,
    Cos,
    Sinh,
    Cosh,
}

impl Op {
    fn key(&self) -> (u8, u64) {
        match *self {
            Op::Const(c) => (0, canonical_bits(c)),
            Op::Var(i) => (1, i as u64),
            Op::Sum => (2, 0),
            Op::Product => (3, 0),
            Op::Quotient => (4, 0),
            Op::Pow(p) => (5, canonical_bits(p)),
            Op::Neg => (6, 0),
            Op::Exp => (7, 0),
            Op::Log => (8, 0),
            Op::Sin => (9, 0),
            Op::Cos => (10, 0),
            Op::Sinh => (11, 0),
            Op::Cosh => (12, 0),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Sin => "sin",
            Op::Cos => "cos",
            Op::Sinh => "sinh",
            Op::Cosh => "cosh",
            _ => "",
        }
    }
}

fn canonical_bits(c: f64) -> u64 {
    if c == 0.0 {
        0
    } else {
        c.to_bits()
    }
}

struct Node {
    op: Op,
    args: Vec<Expr>,
    hash: u64,
}

/// An analytic function of chart coordinates.
#[derive(Clone)]
pub struct Expr(Arc<Node>);

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
            || (self.0.hash == other.0.hash
                && self.0.op.key() == other.0.op.key()
                && self.0.args == other.0.args)
    }
}

impl Eq for Expr {}

impl Hash for Expr {
    fn hash<H: Hasher>(&self, state: &mut H) {
        state.write_u64(self.0.hash);
    }
}

impl Expr {
    fn node(op: Op, args: Vec<Expr>) -> Expr {
        let mut hasher = DefaultHasher::new();
        op.key().hash(&mut hasher);
        for a in &args {
            hasher.write_u64(a.0.hash);
        }
        let hash = hasher.finish();
        Expr(Arc::new(Node { op, args, hash }))
    }

    pub fn constant(c: f64) -> Expr {
        Expr::node(Op::Const(if c == 0.0 { 0.0 } else { c }), Vec::new())
    }

    pub fn zero() -> Expr {
        Expr::constant(0.0)
    }

    pub fn one() -> Expr {
        Expr::constant(1.0)
    }

    /// Variable with zero-based index `i` (`x1` is `var(0)`).
    pub fn var(i: usize) -> Expr {
        Expr::node(Op::Var(i), Vec::new())
    }

    /// The `n` chart coordinates as expressions.
    pub fn coordinates(n: usize) -> Vec<Expr> {
        (0..n).map(Expr::var).collect()
    }

    pub fn op(&self) -> Op {
        self.0.op
    }

    pub fn args(&self) -> &[Expr] {
        &self.0.args
    }

    pub fn as_const(&self) -> Option<f64> {
        match self.0.op {
            Op::Const(c) => Some(c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const() == Some(0.0)
    }

    pub fn is_one(&self) -> bool {
        self.as_const() == Some(1.0)
    }

    /// Stable identity of the underlying node, used as a memo key.
    pub(crate) fn addr(&self) -> usize {
        Arc::as_ptr(&self.0) as usize
    }

    /// Number of distinct nodes in the DAG.
    pub fn node_count(&self) -> usize {
        Expr::node_count_all(std::slice::from_ref(self))
    }

    /// Number of distinct nodes reachable from any of `roots`.
    pub fn node_count_all(roots: &[Expr]) -> usize {
        let mut seen = HashSet::new();
        let mut stack: Vec<&Expr> = roots.iter().collect();
        while let Some(e) = stack.pop() {
            if seen.insert(e.addr()) {
                stack.extend(e.args().iter());
            }
        }
        seen.len()
    }

    /// Largest variable index used, plus one.
    pub fn arity(&self) -> usize {
        let mut seen = HashSet::new();
        let mut stack = vec![self];
        let mut arity = 0;
        while let Some(e) = stack.pop() {
            if !seen.insert(e.addr()) {
                continue;
            }
            if let Op::Var(i) = e.op() {
                arity = arity.max(i + 1);
            }
            stack.extend(e.args().iter());
        }
        arity
    }

    pub fn sum(terms: impl IntoIterator<Item = Expr>) -> Expr {
        let mut constant = 0.0;
        let mut rest = Vec::new();
        for t in terms {
            match t.op() {
                Op::Const(c) => constant += c,
                Op::Sum => {
                    for a in t.args() {
                        match a.as_const() {
                            Some(c) => constant += c,
                            None => rest.push(a.clone()),
                        }
                    }
                }
                _ => rest.push(t),
            }
        }
        if rest.is_empty() {
            return Expr::constant(constant);
        }
        if constant != 0.0 {
            rest.insert(0, Expr::constant(constant));
        }
        if rest.len() == 1 {
            return rest.pop().unwrap();
        }
        Expr::node(Op::Sum, rest)
    }

    pub fn product(factors: impl IntoIterator<Item = Expr>) -> Expr {
        let mut coeff = 1.0;
        let mut rest = Vec::new();
        let mut pending: Vec<Expr> = factors.into_iter().collect();
        pending.reverse();
        while let Some(f) = pending.pop() {
            match f.op() {
                Op::Const(c) => coeff *= c,
                Op::Product => {
                    for a in f.args().iter().rev() {
                        pending.push(a.clone());
                    }
                }
                Op::Neg => {
                    coeff = -coeff;
                    pending.push(f.args()[0].clone());
                }
                _ => rest.push(f),
            }
            if coeff == 0.0 {
                return Expr::zero();
            }
        }
        if rest.is_empty() {
            return Expr::constant(coeff);
        }
        if coeff == -1.0 && rest.len() == 1 {
            return Expr::node(Op::Neg, rest);
        }
        if coeff != 1.0 {
            rest.insert(0, Expr::constant(coeff));
        }
        if rest.len() == 1 {
            return rest.pop().unwrap();
        }
        Expr::node(Op::Product, rest)
    }

    pub fn neg(a: Expr) -> Expr {
        match a.op() {
            Op::Const(c) => Expr::constant(-c),
            Op::Neg => a.args()[0].clone(),
            Op::Product if a.args()[0].as_const().is_some() => {
                Expr::product(std::iter::once(Expr::constant(-1.0)).chain(a.args().iter().cloned()))
            }
            _ => Expr::node(Op::Neg, vec![a]),
        }
    }

    pub fn quotient(a: Expr, b: Expr) -> Expr {
        if a.is_zero() {
            return Expr::zero();
        }
        match (a.as_const(), b.as_const()) {
            (_, Some(1.0)) => a,
            (Some(x), Some(y)) if y != 0.0 => Expr::constant(x / y),
            (None, Some(y)) if y != 0.0 => Expr::product([Expr::constant(1.0 / y), a]),
            _ => Expr::node(Op::Quotient, vec![a, b]),
        }
    }

    pub fn pow(a: Expr, p: f64) -> Expr {
        if p == 0.0 {
            return Expr::one();
        }
        if p == 1.0 {
            return a;
        }
        if let Some(c) = a.as_const() {
            let v = if p.fract() == 0.0 && p.abs() < i32::MAX as f64 {
                c.powi(p as i32)
            } else {
                c.powf(p)
            };
            if v.is_finite() {
                return Expr::constant(v);
            }
        }
        if let Op::Pow(q) = a.op() {
            if p.fract() == 0.0 {
                return Expr::pow(a.args()[0].clone(), p * q);
            }
        }
        Expr::node(Op::Pow(p), vec![a])
    }

    pub fn sqrt(a: Expr) -> Expr {
        Expr::pow(a, 0.5)
    }

    pub fn square(a: Expr) -> Expr {
        Expr::pow(a, 2.0)
    }

    fn unary(op: Op, a: Expr, fold: fn(f64) -> f64) -> Expr {
        if let Some(c) = a.as_const() {
            let v = fold(c);
            if v.is_finite() {
                return Expr::constant(v);
            }
        }
        Expr::node(op, vec![a])
    }

    pub fn exp(a: Expr) -> Expr {
        Expr::unary(Op::Exp, a, f64::exp)
    }

    pub fn log(a: Expr) -> Expr {
        match a.as_const() {
            Some(c) if c > 0.0 => Expr::constant(c.ln()),
            _ => Expr::node(Op::Log, vec![a]),
        }
    }

    pub fn sin(a: Expr) -> Expr {
        Expr::unary(Op::Sin, a, f64::sin)
    }

    pub fn cos(a: Expr) -> Expr {
        Expr::unary(Op::Cos, a, f64::cos)
    }

    pub fn sinh(a: Expr) -> Expr {
        Expr::unary(Op::Sinh, a, f64::sinh)
    }

    pub fn cosh(a: Expr) -> Expr {
        Expr::unary(Op::Cosh, a, f64::cosh)
    }

    /// Rebuild with `Var(i)` replaced by `replacements[i]` where present.
    pub fn substitute(&self, replacements: &[Option<Expr>]) -> Expr {
        let mut memo = std::collections::HashMap::new();
        self.substitute_memo(replacements, &mut memo)
    }

    fn substitute_memo(
        &self,
        replacements: &[Option<Expr>],
        memo: &mut std::collections::HashMap<usize, Expr>,
    ) -> Expr {
        if let Some(e) = memo.get(&self.addr()) {
            return e.clone();
        }
        let out = match self.op() {
            Op::Const(_) => self.clone(),
            Op::Var(i) => match replacements.get(i) {
                Some(Some(r)) => r.clone(),
                _ => self.clone(),
            },
            op => {
                let args: Vec<Expr> = self
                    .args()
                    .iter()
                    .map(|a| a.substitute_memo(replacements, memo))
                    .collect();
                Expr::rebuild(op, args)
            }
        };
        memo.insert(self.addr(), out.clone());
        out
    }

    /// Apply the smart constructor for `op` to already-built arguments.
    pub(crate) fn rebuild(op: Op, mut args: Vec<Expr>) -> Expr {
        match op {
            Op::Const(c) => Expr::constant(c),
            Op::Var(i) => Expr::var(i),
            Op::Sum => Expr::sum(args),
            Op::Product => Expr::product(args),
            Op::Quotient => {
                let b = args.pop().unwrap();
                Expr::quotient(args.pop().unwrap(), b)
            }
            Op::Pow(p) => Expr::pow(args.pop().unwrap(), p),
            Op::Neg => Expr::neg(args.pop().unwrap()),
            Op::Exp => Expr::exp(args.pop().unwrap()),
            Op::Log => Expr::log(args.pop().unwrap()),
            Op::Sin => Expr::sin(args.pop().unwrap()),
            Op::Cos => Expr::cos(args.pop().unwrap()),
            Op::Sinh => Expr::sinh(args.pop().unwrap()),
            Op::Cosh => Expr::cosh(args.pop().unwrap()),
        }
    }

    /// Evaluate at a point. Compiles a throwaway tape; callers evaluating
    /// repeatedly should build a [`Tape`] once.
    pub fn eval(&self, x: &[f64]) -> Result<f64, EvalError> {
        Tape::compile(std::slice::from_ref(self)).eval(x).map(|v| v[0])
    }

    /// Partial derivative with respect to variable `i`.
    pub fn diff(&self, i: usize) -> Expr {
        DiffCache::default().diff(self, i)
    }

    /// Inner product of two expression vectors with plain summation.
    pub fn dot(a: &[Expr], b: &[Expr]) -> Expr {
        Expr::sum(a.iter().zip(b).map(|(x, y)| x * y))
    }
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

fn precedence(e: &Expr) -> u8 {
    match e.op() {
        Op::Sum => 1,
        Op::Neg => 2,
        Op::Product | Op::Quotient => 3,
        Op::Pow(_) => 4,
        Op::Const(c) if c < 0.0 => 2,
        _ => 5,
    }
}

fn write_operand(f: &mut fmt::Formatter<'_>, e: &Expr, min: u8) -> fmt::Result {
    if precedence(e) < min {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

/// Prints in the textual syntax accepted by [`parse`].
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.op() {
            Op::Const(c) => write!(f, "{c:?}"),
            Op::Var(i) => write!(f, "x{}", i + 1),
            Op::Sum => {
                for (k, a) in self.args().iter().enumerate() {
                    if k > 0 {
                        if let Op::Neg = a.op() {
                            write!(f, " - ")?;
                            write_operand(f, &a.args()[0], 2)?;
                            continue;
                        }
                        write!(f, " + ")?;
                    }
                    write_operand(f, a, 2)?;
                }
                Ok(())
            }
            Op::Product => {
                for (k, a) in self.args().iter().enumerate() {
                    if k > 0 {
                        write!(f, "*")?;
                    }
                    write_operand(f, a, 4)?;
                }
                Ok(())
            }
            Op::Quotient => {
                write_operand(f, &self.args()[0], 3)?;
                write!(f, "/")?;
                write_operand(f, &self.args()[1], 4)
            }
            Op::Pow(p) => {
                write_operand(f, &self.args()[0], 5)?;
                if p < 0.0 {
                    write!(f, "^({p:?})")
                } else {
                    write!(f, "^{p:?}")
                }
            }
            Op::Neg => {
                write!(f, "-")?;
                write_operand(f, &self.args()[0], 3)
            }
            op => write!(f, "{}({})", op.name(), self.args()[0]),
        }
    }
}

impl From<f64> for Expr {
    fn from(c: f64) -> Self {
        Expr::constant(c)
    }
}

macro_rules! binary_ops {
    ($trait:ident, $method:ident, $build:expr) => {
        impl ops::$trait<Expr> for Expr {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                $build(self, rhs)
            }
        }
        impl ops::$trait<&Expr> for Expr {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                $build(self, rhs.clone())
            }
        }
        impl ops::$trait<Expr> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                $build(self.clone(), rhs)
            }
        }
        impl ops::$trait<&Expr> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                $build(self.clone(), rhs.clone())
            }
        }
        impl ops::$trait<f64> for Expr {
            type Output = Expr;
            fn $method(self, rhs: f64) -> Expr {
                $build(self, Expr::constant(rhs))
            }
        }
        impl ops::$trait<f64> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: f64) -> Expr {
                $build(self.clone(), Expr::constant(rhs))
            }
        }
        impl ops::$trait<Expr> for f64 {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                $build(Expr::constant(self), rhs)
            }
        }
        impl ops::$trait<&Expr> for f64 {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                $build(Expr::constant(self), rhs.clone())
            }
        }
    };
}

binary_ops!(Add, add, |a, b| Expr::sum([a, b]));
binary_ops!(Sub, sub, |a, b| Expr::sum([a, Expr::neg(b)]));
binary_ops!(Mul, mul, |a, b| Expr::product([a, b]));
binary_ops!(Div, div, Expr::quotient);

impl ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::neg(self)
    }
}

impl ops::Neg for &Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::neg(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x(i: usize) -> Expr {
        Expr::var(i)
    }

    #[test]
    fn evaluates_polynomial() {
        let e = &x(0) * &x(0) + &x(1) * &x(1);
        assert_eq!(e.eval(&[3.0, 4.0]).unwrap(), 25.0);
    }

    #[test]
    fn exp_of_zero_times_coordinate_is_one() {
        let e = Expr::exp(0.0 * x(0));
        assert_eq!(e.eval(&[1.7]).unwrap(), 1.0);
        assert_eq!(e.eval(&[-4.0]).unwrap(), 1.0);
    }

    #[test]
    fn stereographic_factor_at_origin() {
        let r2 = &x(0) * &x(0) + &x(1) * &x(1);
        let e = 4.0 / Expr::square(1.0 + r2);
        assert_eq!(e.eval(&[0.0, 0.0]).unwrap(), 4.0);
    }

    #[test]
    fn constant_folding_rules() {
        assert!((0.0 * x(0)).is_zero());
        assert_eq!(x(0) + 0.0, x(0));
        assert_eq!(1.0 * x(1), x(1));
        assert_eq!(Expr::pow(x(0), 1.0), x(0));
        assert!(Expr::pow(x(0), 0.0).is_one());
        assert_eq!((2.0 * Expr::constant(3.0)).as_const(), Some(6.0));
        assert_eq!(-(-x(0)), x(0));
    }

    #[test]
    fn structural_equality_ignores_sharing() {
        let a = Expr::sin(&x(0) * 2.0);
        let b = Expr::sin(&x(0) * 2.0);
        assert_eq!(a, b);
        assert_ne!(a, Expr::cos(&x(0) * 2.0));
    }

    #[test]
    fn display_round_trips_through_parser() {
        let e = Expr::exp(-(&x(0) * &x(1))) / (1.0 + Expr::pow(x(2), -2.5)) - Expr::log(x(0));
        let printed = e.to_string();
        let back = parse(&printed, 3).unwrap();
        let p = [0.7, -0.3, 1.9];
        assert!((back.eval(&p).unwrap() - e.eval(&p).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn substitution_replaces_variables() {
        let e = &x(0) * &x(1);
        let s = e.substitute(&[Some(Expr::constant(2.0)), None]);
        assert_eq!(s.eval(&[100.0, 5.0]).unwrap(), 10.0);
    }

    #[test]
    fn node_count_counts_shared_nodes_once() {
        let a = Expr::sin(x(0));
        let e = &a * &a + &a;
        // x1, sin, a*a is a product node, sum node
        assert_eq!(e.node_count(), 4);
    }
}
