use std::sync::Arc;

use crate::diffops::{Calculus, DiffopsError};
use crate::expr::Expr;
use crate::geometry::ChartMetric;

/// Expression builders shared by the pointwise and integral plans.
pub(crate) struct Ctx {
    pub c: Calculus,
    pub n: usize,
    pub h: Vec<Expr>,
    grad_h_raised: Option<Vec<Expr>>,
    mu: Option<Expr>,
}

impl Ctx {
    pub fn new(metric: Arc<ChartMetric>, h: Option<&[Expr]>) -> Ctx {
        let n = metric.n();
        let h = h.map(|h| h.to_vec()).unwrap_or_else(|| vec![Expr::zero(); n]);
        Ctx { c: Calculus::new(metric), n, h, grad_h_raised: None, mu: None }
    }

    pub fn metric(&self) -> Arc<ChartMetric> {
        self.c.metric().clone()
    }

    /// The covariant normal slots `ν_i = Var(n + i)`.
    pub fn nu(&self) -> Vec<Expr> {
        (0..self.n).map(|i| Expr::var(self.n + i)).collect()
    }

    pub fn lap(&mut self, u: &Expr, k: usize) -> Result<Expr, DiffopsError> {
        self.c.polyharmonic(u, k)
    }

    /// `μ = (2/n) div h`.
    pub fn mu(&mut self) -> Expr {
        if self.mu.is_none() {
            let h = self.h.clone();
            self.mu = Some(self.c.conformal_factor(&h));
        }
        self.mu.clone().unwrap()
    }

    fn grad_h(&mut self) -> Vec<Expr> {
        if self.grad_h_raised.is_none() {
            let h = self.h.clone();
            self.grad_h_raised = Some(self.c.vector_gradient_raised(&h));
        }
        self.grad_h_raised.clone().unwrap()
    }

    /// `h^k ∂_k f`.
    pub fn h_dot(&mut self, f: &Expr) -> Expr {
        let df = self.c.gradient(f);
        Expr::dot(&self.h, &df)
    }

    /// `(h, ν) = h^i ν_i`.
    pub fn h_nu(&self) -> Expr {
        Expr::dot(&self.h, &self.nu())
    }

    /// `(∇f, ν) = g^{ij} f_j ν_i`.
    pub fn flux(&mut self, f: &Expr) -> Expr {
        let df = self.c.gradient(f);
        self.c.inner_dual(&df, &self.nu())
    }

    /// `(∇a, ∇b) = g^{ij} a_i b_j`.
    pub fn grad_inner(&mut self, a: &Expr, b: &Expr) -> Expr {
        let da = self.c.gradient(a);
        let db = self.c.gradient(b);
        self.c.inner_dual(&da, &db)
    }

    /// `∇^i h^k ∇_k f ν_i`.
    pub fn grad_h_term(&mut self, f: &Expr) -> Expr {
        let n = self.n;
        let gh = self.grad_h();
        let df = self.c.gradient(f);
        let nu = self.nu();
        Expr::sum((0..n * n).map(|ik| &gh[ik] * &df[ik % n] * &nu[ik / n]))
    }

    /// `h^k ∇^i ∇_k f ν_i`.
    pub fn h_hess_term(&mut self, f: &Expr) -> Expr {
        let n = self.n;
        let hess = self.c.hessian(f);
        // ∇^i∇_k f ν_i = g^{ij} ∇_j∇_k f ν_i
        let nu = self.nu();
        let metric = self.metric();
        let mut terms = Vec::new();
        for k in 0..n {
            let raised = Expr::sum((0..n * n).map(|ij| metric.g_inv(ij / n, ij % n) * &hess[(ij % n) * n + k] * &nu[ij / n]));
            terms.push(&self.h[k] * raised);
        }
        Expr::sum(terms)
    }

    /// `2l (∇f, ν) + ∇^i h^k ∇_k f ν_i + h^k ∇^i ∇_k f ν_i`, the normal
    /// component of `∇^i(2l f + h^k ∇_k f)` for a homothety.
    pub fn eta_flux(&mut self, f: &Expr, l: usize) -> Expr {
        let a = self.flux(f);
        let b = self.grad_h_term(f);
        let c = self.h_hess_term(f);
        Expr::sum([(2.0 * l as f64) * a, b, c])
    }

    /// `2l f + h^k ∇_k f`.
    pub fn eta_value(&mut self, f: &Expr, l: usize) -> Expr {
        let hd = self.h_dot(f);
        (2.0 * l as f64) * f + hd
    }

    /// `L_h R + μ R`.
    pub fn curvature_source(&mut self) -> Expr {
        let r = self.metric().scalar_curvature().clone();
        let lhr = self.h_dot(&r);
        let mu = self.mu();
        lhr + mu * r
    }
}
