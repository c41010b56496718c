use super::{DiffCache, EvalError, Expr, Tape};

/// All partial derivatives of a scalar up to total order `K` at one point.
///
/// Multi-indices are stored in graded lexicographic order: all of order 0,
/// then order 1, and so on. Within an order, `(2,0)` precedes `(1,1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct JetValue {
    n: usize,
    order: usize,
    indices: Vec<Vec<u32>>,
    entries: Vec<f64>,
}

impl JetValue {
    pub fn dimension(&self) -> usize {
        self.n
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn indices(&self) -> &[Vec<u32>] {
        &self.indices
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Entry for a multi-index given as per-variable counts.
    pub fn get(&self, alpha: &[u32]) -> Option<f64> {
        self.indices.iter().position(|a| a == alpha).map(|k| self.entries[k])
    }

    /// Entry for an index sequence such as `[0, 1, 1]` (`∂1∂2∂2`).
    /// Any permutation of the sequence addresses the same entry.
    pub fn get_sequence(&self, vars: &[usize]) -> Option<f64> {
        let mut alpha = vec![0u32; self.n];
        for &v in vars {
            *alpha.get_mut(v)? += 1;
        }
        self.get(&alpha)
    }
}

/// Multi-indices of total order at most `order` in `n` variables, graded.
pub fn multi_indices(n: usize, order: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    for k in 0..=order {
        let mut current = vec![0u32; n];
        fill(&mut out, &mut current, 0, k as u32);
    }
    out
}

fn fill(out: &mut Vec<Vec<u32>>, current: &mut [u32], pos: usize, remaining: u32) {
    if pos + 1 == current.len() {
        current[pos] = remaining;
        out.push(current.to_vec());
        return;
    }
    if current.is_empty() {
        if remaining == 0 {
            out.push(Vec::new());
        }
        return;
    }
    for c in (0..=remaining).rev() {
        current[pos] = c;
        fill(out, current, pos + 1, remaining - c);
    }
    current[pos] = 0;
}

/// The canonical differentiation sequence for `alpha`: variables in
/// ascending order, each repeated by its count.
pub fn sequence(alpha: &[u32]) -> Vec<usize> {
    alpha.iter().enumerate().flat_map(|(i, &c)| std::iter::repeat(i).take(c as usize)).collect()
}

/// Evaluate all partials of `e` up to order `order` at `x`.
///
/// Each entry is reached by differentiating its graded parent once more, in
/// the canonical ascending sequence, so an entry is bit-identical to
/// `DiffCache::partial(e, sequence)` evaluated at `x`.
pub fn jet(e: &Expr, x: &[f64], order: usize) -> Result<JetValue, EvalError> {
    let n = x.len();
    let indices = multi_indices(n, order);
    let mut cache = DiffCache::new();
    let mut exprs: Vec<Expr> = Vec::with_capacity(indices.len());
    for alpha in &indices {
        let expr = match alpha.iter().rposition(|&c| c > 0) {
            None => e.clone(),
            Some(j) => {
                let mut parent = alpha.clone();
                parent[j] -= 1;
                let p = indices.iter().position(|a| *a == parent).expect("parent has lower order");
                cache.diff(&exprs[p], j)
            }
        };
        exprs.push(expr);
    }
    let entries = Tape::compile(&exprs).eval(x)?;
    Ok(JetValue { n, order, indices, entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binomial(n: usize, k: usize) -> usize {
        (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
    }

    #[test]
    fn size_is_binomial() {
        for n in 1..5 {
            for k in 0..7 {
                assert_eq!(multi_indices(n, k).len(), binomial(n + k, k), "n={n} k={k}");
            }
        }
    }

    #[test]
    fn bilinear_jet() {
        let e = Expr::var(0) * Expr::var(1);
        let j = jet(&e, &[2.0, 3.0], 2).unwrap();
        assert_eq!(j.get(&[0, 0]), Some(6.0));
        assert_eq!(j.get(&[1, 0]), Some(3.0));
        assert_eq!(j.get(&[0, 1]), Some(2.0));
        assert_eq!(j.get(&[1, 1]), Some(1.0));
        assert_eq!(j.get(&[2, 0]), Some(0.0));
        assert_eq!(j.get(&[0, 2]), Some(0.0));
        assert_eq!(j.get_sequence(&[1, 0]), j.get_sequence(&[0, 1]));
    }

    #[test]
    fn quartic_fourth_derivative() {
        let e = Expr::pow(Expr::var(0), 4.0);
        let j = jet(&e, &[1.0], 4).unwrap();
        assert_eq!(j.get(&[4]), Some(24.0));
    }

    #[test]
    fn exponential_derivatives_are_one() {
        let e = Expr::exp(Expr::var(0));
        let j = jet(&e, &[0.0], 8).unwrap();
        assert_eq!(j.len(), 9);
        assert!(j.entries().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn entries_match_nested_differentiation_bitwise() {
        let x = [0.3, -0.7];
        let e = Expr::sin(Expr::var(0) * Expr::var(1)) / (2.0 + Expr::cos(Expr::var(1)));
        let j = jet(&e, &x, 4).unwrap();
        for alpha in j.indices() {
            let d = DiffCache::new().partial(&e, &sequence(alpha));
            assert_eq!(j.get(alpha).unwrap().to_bits(), d.eval(&x).unwrap().to_bits(), "{alpha:?}");
        }
    }
}
