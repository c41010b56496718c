//! Term listings for `rellich explain`.

use std::fmt::Write as _;

use rellich::expr::Expr;
use rellich::identities::{outline, IdentityError, IdentityId, IntegralCase, IntegralId, Region, Requirement, Side};
use rellich::measure::Domain;
use rellich::presets::{self, PresetError};

/// Dimension used for the numeric coefficients in listings.
pub const EXPLAIN_DIMENSION: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum ExplainError {
    #[error(transparent)]
    Preset(#[from] PresetError),
    #[error(transparent)]
    Identity(#[from] IdentityError),
}

fn requirement(r: Requirement) -> &'static str {
    match r {
        Requirement::None => "any vector field",
        Requirement::ConformalKilling => "conformal Killing field (L_h g = μ g)",
        Requirement::Homothety => "homothety (conformal Killing with div h = n)",
    }
}

/// Scenario sections and keys an identity reads.
pub fn inputs(id: IdentityId) -> &'static [&'static str] {
    use rellich::identities::PointwiseId as P;
    match id {
        IdentityId::Pointwise(p) => match p {
            P::AB8 => &["u", "v", "h", "F", "points"],
            P::N17 => &["u", "v", "h", "m", "points"],
            P::N20 | P::N37 => &["h", "points"],
            P::N21 => &["v", "h", "l", "points"],
            P::N22 | P::D4 => &["v", "l", "points"],
            P::N24 | P::N34 => &["v", "h", "l", "points"],
            P::N25 | P::N35 => &["u", "h", "l", "points"],
            P::V1 => &["u", "domain"],
        },
        IdentityId::Integral(i) => match i {
            IntegralId::GeneralRellichN9 => &["u", "v", "h", "F", "domain", "quadrature"],
            IntegralId::LaplaceRellichN13 | IntegralId::BiharmonicN38 => &["u", "v", "h", "domain", "quadrature"],
            IntegralId::PolyN30 | IntegralId::PolyCompactN28 => &["u", "v", "h", "m", "domain", "quadrature"],
            IntegralId::PartsN29 => &["u", "v", "m", "domain", "quadrature"],
            IntegralId::PolySingleN31 => &["u", "h", "m", "domain", "quadrature"],
            IntegralId::BiharmonicSingleN39 => &["u", "h", "domain", "quadrature"],
            IntegralId::NavierW7 => &["u", "v", "h", "G", "a", "domain", "quadrature"],
        },
    }
}

fn summary(id: IntegralId) -> &'static str {
    match id {
        IntegralId::GeneralRellichN9 => "Rellich identity for a Lagrangian F(∇u, ∇v) and an arbitrary field h.",
        IntegralId::LaplaceRellichN13 => "Rellich identity for the Laplacian pair (u, v) with a conformal Killing field.",
        IntegralId::PolyN30 => "Polyharmonic Rellich identity for Δ^{2m} with a homothety.",
        IntegralId::PolySingleN31 => "Single-function polyharmonic Rellich identity for Δ^{2m} with a homothety.",
        IntegralId::PolyCompactN28 => "Polyharmonic identity with the boundary written as one divergence flux.",
        IntegralId::PartsN29 => "Repeated integration by parts of ∫Δ^{2m}u·v.",
        IntegralId::BiharmonicN38 => "Biharmonic Rellich identity with a general conformal Killing field.",
        IntegralId::BiharmonicSingleN39 => "Single-function biharmonic Rellich identity with a general conformal Killing field.",
        IntegralId::NavierW7 => "Pohozaev identity for the biharmonic system Δ²u = G_v, Δ²v = G_u under Navier data.",
    }
}

/// Placeholder data in the explain dimension; only the term structure is used.
fn placeholder(id: IntegralId) -> Result<IntegralCase, ExplainError> {
    let n = EXPLAIN_DIMENSION;
    let metric = presets::euclidean(n)?;
    let h = presets::dilation(&metric)?;
    let u = presets::random_polynomial(n, 3, 1);
    let v = presets::random_polynomial(n, 3, 2);
    let f = Expr::var(n) * Expr::var(2 * n);
    let g = Expr::var(0) * Expr::var(1);
    Ok(IntegralCase::new(id, metric.metric.clone(), Domain::unit_box(n), u)
        .with_v(v)
        .with_h(h.field)
        .with_f(f)
        .with_g(g, 0.5))
}

/// The full listing for one id.
pub fn explain(id: IdentityId) -> Result<String, ExplainError> {
    let mut out = String::new();
    let _ = writeln!(out, "{}", id.name());
    let _ = writeln!(out, "  field requirement: {}", requirement(id.requirement()));
    let _ = writeln!(out, "  inputs: {}", inputs(id).join(", "));
    match id {
        IdentityId::Pointwise(p) => {
            let _ = writeln!(out, "  kind: pointwise, max over points and components of |lhs − rhs|");
            let _ = writeln!(out, "  statement: {}", p.statement());
        }
        IdentityId::Integral(i) => {
            let _ = writeln!(out, "  kind: integral, |lhs − rhs| / max(1, max |term|)");
            let _ = writeln!(out, "  {}", summary(i));
            let (terms, checks) = outline(&placeholder(i)?)?;
            let _ = writeln!(out, "  terms (coefficients for n = {EXPLAIN_DIMENSION}, m = 1):");
            for (side, title) in [(Side::Lhs, "LHS"), (Side::Rhs, "RHS"), (Side::Auxiliary, "auxiliary")] {
                let group: Vec<_> = terms.iter().filter(|t| t.side == side).collect();
                if group.is_empty() {
                    continue;
                }
                let _ = writeln!(out, "    {title}:");
                for t in group {
                    let region = match t.region {
                        Region::Volume => "volume",
                        Region::Boundary => "boundary",
                    };
                    let mu = if t.involves_mu { "  [μ]" } else { "" };
                    let _ = writeln!(out, "      {:>+9.4} × {}  ({region}){mu}", t.coefficient, t.label);
                }
            }
            if !checks.is_empty() {
                let _ = writeln!(out, "  sub-checks:");
                for c in checks {
                    let _ = writeln!(out, "    {c}");
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_id_explains() {
        for id in IdentityId::all() {
            let text = explain(id).unwrap();
            assert!(text.starts_with(id.name()));
        }
    }

    #[test]
    fn laplace_rellich_lists_both_sides() {
        let text = explain("LAPLACE_RELLICH_N13".parse().unwrap()).unwrap();
        assert!(text.contains("LHS:") && text.contains("RHS:"), "{text}");
    }

    #[test]
    fn navier_lists_sub_checks() {
        let text = explain("NAVIER_W7".parse().unwrap()).unwrap();
        assert!(text.contains("∫Δ²u·v = ∫Δu Δv"), "{text}");
    }
}
