use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;

/// Gauss–Legendre nodes and weights mapped to `[a, b]`.
pub fn gauss_legendre(q: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let q = NonZeroUsize::new(q).expect("quadrature order must be positive");
    let rule = GaussLegendre::new(q);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    rule.as_node_weight_pairs().iter().map(|&(t, w)| (mid + half * t, half * w)).unzip()
}

/// Tensor product of one-dimensional rules over a parameter box.
#[derive(Debug, Clone)]
pub struct TensorRule {
    axes: Vec<(Vec<f64>, Vec<f64>)>,
    len: usize,
}

impl TensorRule {
    pub fn new(orders: &[usize], lower: &[f64], upper: &[f64]) -> TensorRule {
        let axes: Vec<_> = orders
            .iter()
            .zip(lower.iter().zip(upper))
            .map(|(&q, (&a, &b))| gauss_legendre(q, a, b))
            .collect();
        let len = axes.iter().map(|(t, _)| t.len()).product();
        TensorRule { axes, len }
    }

    pub fn dims(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Write node `k` into `t` and return its weight. The last axis varies
    /// fastest.
    pub fn node(&self, mut k: usize, t: &mut [f64]) -> f64 {
        let mut w = 1.0;
        for (d, (nodes, weights)) in self.axes.iter().enumerate().rev() {
            let i = k % nodes.len();
            k /= nodes.len();
            t[d] = nodes[i];
            w *= weights[i];
        }
        w
    }
}

/// Pairwise (cascade) summation; the result depends only on the order of
/// `values`.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 8 {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}
