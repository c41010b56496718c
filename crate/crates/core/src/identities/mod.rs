//! Both sides of each pointwise and integral identity, evaluated on concrete
//! metrics, fields and domains.
//!
//! Pointwise identities are residuals of expression pairs at sample points.
//! Integral identities are lists of named terms, each a coefficient times a
//! volume or boundary integral; the report carries every term so that a
//! mismatch can be traced to the piece responsible.
//!
//! Variable slots follow one convention throughout. Coordinates are
//! `Var(0..n)`. Boundary integrands also see the covariant unit normal as
//! `Var(n..2n)`. The general Lagrangian `F` of [`IntegralId::GeneralRellichN9`]
//! and [`PointwiseId::AB8`] takes `p = ∇u` in `Var(n..2n)` and `q = ∇v` in
//! `Var(2n..3n)`, and the nonlinearity `G` of [`IntegralId::NavierW7`] is a
//! function of `s = Var(0)`, `t = Var(1)`.

mod context;
mod integral;
mod pointwise;

use std::fmt;
use std::str::FromStr;

pub use integral::{
    convergence_study, cross_check_formulations, evaluate_integral, outline, Coefficients, ConvergenceRow, ConvergenceStudy,
    CrossCheck, IdentityReport, IntegralCase, Region, Side, SubCheck, TermOutline, TermValue,
};
pub use pointwise::{evaluate_pointwise, polyharmonic_flux, PointwiseCase, PointwiseReport, MAX_L};

use crate::diffops::{DiffopsError, KillingDiagnostics};
use crate::expr::EvalError;
use crate::geometry::GeometryError;
use crate::measure::MeasureError;

/// Largest supported `m` for the polyharmonic identities.
pub const MAX_M: usize = 2;
/// Tolerance for boundary-data and system preconditions.
pub const PRECONDITION_TOLERANCE: f64 = 1e-8;
/// Interior sample points for Killing and system checks of integral cases.
pub const GATE_SAMPLES: usize = 50;

/// Pointwise identities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PointwiseId {
    AB8,
    N17,
    N20,
    N21,
    N22,
    N24,
    N25,
    N34,
    N35,
    N37,
    D4,
    V1,
}

/// Integral identities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum IntegralId {
    GeneralRellichN9,
    LaplaceRellichN13,
    PolyN30,
    PolySingleN31,
    PolyCompactN28,
    PartsN29,
    BiharmonicN38,
    BiharmonicSingleN39,
    NavierW7,
}

/// Any identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum IdentityId {
    Pointwise(PointwiseId),
    Integral(IntegralId),
}

/// What an identity needs from `h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Requirement {
    None,
    /// `∇^i h^j + ∇^j h^i = μ g^{ij}` for some function `μ` (possibly zero).
    ConformalKilling,
    /// Conformal Killing with `div h = n` at every sample.
    Homothety,
}

impl PointwiseId {
    pub const ALL: [PointwiseId; 12] = [
        PointwiseId::AB8,
        PointwiseId::N17,
        PointwiseId::N20,
        PointwiseId::N21,
        PointwiseId::N22,
        PointwiseId::N24,
        PointwiseId::N25,
        PointwiseId::N34,
        PointwiseId::N35,
        PointwiseId::N37,
        PointwiseId::D4,
        PointwiseId::V1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PointwiseId::AB8 => "AB8",
            PointwiseId::N17 => "N17",
            PointwiseId::N20 => "N20",
            PointwiseId::N21 => "N21",
            PointwiseId::N22 => "N22",
            PointwiseId::N24 => "N24",
            PointwiseId::N25 => "N25",
            PointwiseId::N34 => "N34",
            PointwiseId::N35 => "N35",
            PointwiseId::N37 => "N37",
            PointwiseId::D4 => "D4",
            PointwiseId::V1 => "V1",
        }
    }

    pub fn requirement(self) -> Requirement {
        match self {
            PointwiseId::N24 | PointwiseId::N25 => Requirement::Homothety,
            PointwiseId::N20 | PointwiseId::N21 | PointwiseId::N34 | PointwiseId::N35 | PointwiseId::N37 => {
                Requirement::ConformalKilling
            }
            PointwiseId::AB8 | PointwiseId::N17 | PointwiseId::N22 | PointwiseId::D4 | PointwiseId::V1 => {
                Requirement::None
            }
        }
    }

    /// Statement of the identity, `LHS = RHS`.
    pub fn statement(self) -> &'static str {
        match self {
            PointwiseId::AB8 => {
                "div F_p (h,F_q) + div F_q (h,F_p) = −L_h g_ij F_u^i F_v^j − h_j (F_u^i ∇_i F_v^j + F_v^i ∇_i F_u^j) + ∇_i[F_u^i (h,F_q) + F_v^i (h,F_p)]"
            }
            PointwiseId::N17 => "Δ^m u Δ^m η + Δ^m v Δ^m φ = Δ^{2m}u η + Δ^{2m}v φ + ∇_i w^i,  η = (h,∇v), φ = (h,∇u)",
            PointwiseId::N20 => "Δh^k + R^k_s h^s = ((2−n)/2) g^{kj} μ_j",
            PointwiseId::N21 => "2 ∇^i h^k ∇_i ∇_k (Δ^l v) = μ Δ^{l+1} v",
            PointwiseId::N22 => "Δ(∇_k Δ^l v) = ∇_k Δ^{l+1} v + R^s_k ∇_s Δ^l v",
            PointwiseId::N24 => "Δ^l η = 2l Δ^l v + h^k ∇_k Δ^l v,  η = (h,∇v)",
            PointwiseId::N25 => "Δ^l φ = 2l Δ^l u + h^k ∇_k Δ^l u,  φ = (h,∇u)",
            PointwiseId::N34 => "Δη = μ Δv + h^k ∇_k Δv + ((2−n)/2) μ^k ∇_k v",
            PointwiseId::N35 => "Δφ = μ Δu + h^k ∇_k Δu + ((2−n)/2) μ^k ∇_k u",
            PointwiseId::N37 => "Δμ = −(1/(n−1)) (L_h R + μ R)",
            PointwiseId::D4 => "∇_i ∇_k ∇^i (Δ^l v) = ∇_k Δ^{l+1} v + R^s_k ∇_s Δ^l v",
            PointwiseId::V1 => "u_k ν_j = u_j ν_k on ∂M when u = 0 on ∂M",
        }
    }
}

impl IntegralId {
    pub const ALL: [IntegralId; 9] = [
        IntegralId::GeneralRellichN9,
        IntegralId::LaplaceRellichN13,
        IntegralId::PolyN30,
        IntegralId::PolySingleN31,
        IntegralId::PolyCompactN28,
        IntegralId::PartsN29,
        IntegralId::BiharmonicN38,
        IntegralId::BiharmonicSingleN39,
        IntegralId::NavierW7,
    ];

    pub fn name(self) -> &'static str {
        match self {
            IntegralId::GeneralRellichN9 => "GENERAL_RELLICH_N9",
            IntegralId::LaplaceRellichN13 => "LAPLACE_RELLICH_N13",
            IntegralId::PolyN30 => "POLY_N30",
            IntegralId::PolySingleN31 => "POLY_SINGLE_N31",
            IntegralId::PolyCompactN28 => "POLY_COMPACT_N28",
            IntegralId::PartsN29 => "PARTS_N29",
            IntegralId::BiharmonicN38 => "BIHARMONIC_N38",
            IntegralId::BiharmonicSingleN39 => "BIHARMONIC_SINGLE_N39",
            IntegralId::NavierW7 => "NAVIER_W7",
        }
    }

    pub fn requirement(self) -> Requirement {
        match self {
            IntegralId::GeneralRellichN9 | IntegralId::PartsN29 => Requirement::None,
            IntegralId::LaplaceRellichN13 | IntegralId::BiharmonicN38 | IntegralId::BiharmonicSingleN39 => {
                Requirement::ConformalKilling
            }
            IntegralId::PolyN30 | IntegralId::PolySingleN31 | IntegralId::PolyCompactN28 | IntegralId::NavierW7 => {
                Requirement::Homothety
            }
        }
    }

    /// Whether the identity is symmetric under exchanging `u` and `v`.
    pub fn swap_symmetric(self) -> bool {
        matches!(
            self,
            IntegralId::GeneralRellichN9
                | IntegralId::LaplaceRellichN13
                | IntegralId::PolyN30
                | IntegralId::PolyCompactN28
                | IntegralId::BiharmonicN38
        )
    }
}

impl IdentityId {
    pub fn name(self) -> &'static str {
        match self {
            IdentityId::Pointwise(p) => p.name(),
            IdentityId::Integral(i) => i.name(),
        }
    }

    pub fn requirement(self) -> Requirement {
        match self {
            IdentityId::Pointwise(p) => p.requirement(),
            IdentityId::Integral(i) => i.requirement(),
        }
    }

    pub fn all() -> Vec<IdentityId> {
        PointwiseId::ALL
            .iter()
            .map(|&p| IdentityId::Pointwise(p))
            .chain(IntegralId::ALL.iter().map(|&i| IdentityId::Integral(i)))
            .collect()
    }
}

impl fmt::Display for PointwiseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for IntegralId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for IdentityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown identity id `{0}`")]
pub struct UnknownId(pub String);

impl FromStr for IdentityId {
    type Err = UnknownId;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        IdentityId::all().into_iter().find(|id| id.name() == s).ok_or_else(|| UnknownId(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IdentityError {
    #[error("{id} needs `{input}`")]
    Missing { id: IdentityId, input: &'static str },
    #[error("{id}: {reason}")]
    Parameter { id: IdentityId, reason: String },
    #[error("{id} rejected: h is not conformal Killing (Killing deviation {deviation:e} exceeds {tolerance:e})")]
    NotConformal { id: IdentityId, deviation: f64, tolerance: f64 },
    #[error("{id} rejected: h is not a normalized homothety ({detail})")]
    NotHomothety { id: IdentityId, detail: String },
    #[error("{id} rejected: boundary data {quantity} reaches {max:e} on ∂M (tolerance {tolerance:e})")]
    BoundaryData { id: IdentityId, quantity: &'static str, max: f64, tolerance: f64 },
    #[error("{id} rejected: system equation {equation} has residual {max:e} (tolerance {tolerance:e})")]
    SystemEquation { id: IdentityId, equation: &'static str, max: f64, tolerance: f64 },
    #[error("{id} rejected: G(0, 0) = {value:e}, must vanish")]
    NonlinearityAtOrigin { id: IdentityId, value: f64 },
    #[error(transparent)]
    Diffops(#[from] DiffopsError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl IdentityError {
    /// Whether this is a rejected precondition rather than bad input or a
    /// numerical failure.
    pub fn is_precondition(&self) -> bool {
        matches!(
            self,
            IdentityError::NotConformal { .. }
                | IdentityError::NotHomothety { .. }
                | IdentityError::BoundaryData { .. }
                | IdentityError::SystemEquation { .. }
                | IdentityError::NonlinearityAtOrigin { .. }
        )
    }
}

/// Summary of the conformal Killing test behind a report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gate {
    pub deviation: f64,
    pub mu_min: f64,
    pub mu_max: f64,
    pub homothety: bool,
}

impl Gate {
    pub fn from_diagnostics(d: &KillingDiagnostics) -> Gate {
        Gate {
            deviation: d.deviation,
            mu_min: d.mu.iter().cloned().fold(f64::INFINITY, f64::min),
            mu_max: d.mu.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            homothety: d.is_homothety_normalized,
        }
    }
}

/// Relative residual `|lhs − rhs| / max(1, max |term|)`.
pub fn relative_residual(lhs: f64, rhs: f64, terms: impl IntoIterator<Item = f64>) -> f64 {
    let scale = terms.into_iter().fold(1.0f64, |acc, t| acc.max(t.abs()));
    (lhs - rhs).abs() / scale
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_round_trip() {
        for id in IdentityId::all() {
            assert_eq!(id.name().parse::<IdentityId>().unwrap(), id);
        }
        assert!("N99".parse::<IdentityId>().is_err());
        assert_eq!(IdentityId::all().len(), 21);
    }

    #[test]
    fn relative_residual_floor() {
        assert_eq!(relative_residual(0.0, 1e-3, [0.5]), 1e-3);
        assert_eq!(relative_residual(10.0, 11.0, [10.0, 11.0, -20.0]), 0.05);
    }
}
