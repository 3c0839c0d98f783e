//! High-dimensional efficiency of locally-balanced proposals on product
//! targets `π_n = ∏ e^{φ(x_i)}`.
//!
//! With step `σ = ℓ n^{−1/6}` the log-MH ratio is asymptotically
//! `N(−½ℓ⁶θ², ℓ⁶θ²)`, where `θ²` depends on the target only through
//! `A = E[(φ‴)²]`, `B = E[(φ′φ″)²]`, `C = E[φ′φ″φ‴]`, on the noise through
//! `μ₄, μ₆` and on the balancing function through `𝔤 = g″(1)`. The expected
//! squared jump distance is then `h(ℓ) n^{−1/3}` with `h(ℓ) = 2ℓ²Φ(−ℓ³θ/2)`.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quadrature::{norm_cdf, norm_pdf};
use crate::targets::ProductFactor;

const FUNCTIONAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetFunctionals {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl TargetFunctionals {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self> {
        if !(a >= 0.0 && b >= 0.0 && a.is_finite() && b.is_finite() && c.is_finite()) {
            return Err(invalid(format!("functionals need A, B >= 0, got ({a}, {b}, {c})")));
        }
        if a * b < c * c * (1.0 - 1e-12) {
            return Err(invalid(format!("functionals violate A*B >= C^2: ({a}, {b}, {c})")));
        }
        Ok(TargetFunctionals { a, b, c })
    }

    /// Functionals of the standard normal factor.
    pub fn gaussian() -> Self {
        TargetFunctionals { a: 0.0, b: 1.0, c: 0.0 }
    }
}

/// `A`, `B`, `C` by adaptive quadrature against the normalized factor.
pub fn abc_functionals(factor: &ProductFactor) -> Result<TargetFunctionals> {
    let a = factor.expect(|x| factor.d3phi(x).powi(2), FUNCTIONAL_TOL)?;
    let b = factor.expect(|x| (factor.dphi(x) * factor.d2phi(x)).powi(2), FUNCTIONAL_TOL)?;
    let c = factor.expect(|x| factor.dphi(x) * factor.d2phi(x) * factor.d3phi(x), FUNCTIONAL_TOL)?;
    // exact zeros for odd integrands are not guaranteed by quadrature
    TargetFunctionals::new(a.max(0.0), b.max(0.0), c)
}

fn check_moments(mu4: f64, mu6: f64) -> Result<()> {
    let feasible = mu4.is_finite()
        && mu6.is_finite()
        && mu4 >= 1.0 - 1e-12
        && mu4 <= mu6.max(0.0).sqrt() * (1.0 + 1e-12);
    if feasible {
        Ok(())
    } else {
        Err(Error::MomentInfeasible { mu4, mu6 })
    }
}

/// The constant `θ²` of the limiting log-MH ratio.
pub fn theta_squared(f: &TargetFunctionals, mu4: f64, mu6: f64, gfrak: f64) -> Result<f64> {
    check_moments(mu4, mu6)?;
    if !gfrak.is_finite() {
        return Err(invalid("balancing curvature must be finite"));
    }
    let q = 0.25 + gfrak;
    let h = 0.5 + gfrak;
    let TargetFunctionals { a, b, c } = *f;
    let v = mu6 * (a / 144.0 + q * q * b - q * c / 6.0) + mu4 * (h * c / 6.0 - 2.0 * q * h * b) + h * h * b;
    if v < 0.0 {
        let scale = mu6 * (a / 144.0 + q * q * b + (q * c).abs()) + mu4 * (h * c).abs() + h * h * b;
        if v < -1e-12 * scale.max(1.0) {
            return Err(Error::Numerical(format!("theta^2 evaluated to {v}")));
        }
        return Ok(0.0);
    }
    Ok(v)
}

/// `θ²` for the Langevin design via `5A/48 − E[(φ″)³]/16`, a form obtained
/// by integrating by parts and independent of [`theta_squared`].
pub fn theta_squared_langevin_ibp(factor: &ProductFactor) -> Result<f64> {
    for edge in [-40.0, 40.0] {
        let boundary = factor.density(edge) * factor.dphi(edge) * factor.d2phi(edge).powi(2);
        if !(boundary.abs() < 1e-12) {
            return Err(Error::Numerical(format!(
                "boundary term e^phi phi' (phi'')^2 = {boundary} at x = {edge} does not vanish"
            )));
        }
    }
    let a = factor.expect(|x| factor.d3phi(x).powi(2), FUNCTIONAL_TOL)?;
    let cube = factor.expect(|x| factor.d2phi(x).powi(3), FUNCTIONAL_TOL)?;
    Ok(5.0 * a / 48.0 - cube / 16.0)
}

/// Solution of `2/3 = s φ_N(s) / Φ(−s)`.
pub fn s_star() -> f64 {
    static S: OnceLock<f64> = OnceLock::new();
    *S.get_or_init(|| {
        let f = |s: f64| s * norm_pdf(s) / norm_cdf(-s) - 2.0 / 3.0;
        let (mut lo, mut hi) = (1e-6, 10.0);
        while hi - lo > 1e-12 {
            let mid = 0.5 * (lo + hi);
            if f(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    })
}

/// `h(ℓ) θ^{2/3}` at the optimum, `2^{5/3} s*^{2/3} Φ(−s*)`.
pub fn c_h() -> f64 {
    let s = s_star();
    2f64.powf(5.0 / 3.0) * s.powf(2.0 / 3.0) * norm_cdf(-s)
}

/// `h(ℓ) = 2ℓ²Φ(−ℓ³θ/2)`.
pub fn h_of_ell(ell: f64, theta: f64) -> f64 {
    2.0 * ell * ell * norm_cdf(-ell.powi(3) * theta / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencySummary {
    pub theta_sq: f64,
    pub ell_star: f64,
    pub h_star: f64,
    pub limiting_acc: f64,
    pub s_star: f64,
}

/// Maximizer of `h`. A zero `θ²` has no finite optimum at this order and is
/// reported as [`Error::Degenerate`].
pub fn optimal_ell(theta_sq: f64) -> Result<EfficiencySummary> {
    if theta_sq.is_nan() || theta_sq < 0.0 {
        return Err(invalid(format!("theta^2 must be non-negative, got {theta_sq}")));
    }
    if theta_sq == 0.0 {
        return Err(Error::Degenerate(theta_sq));
    }
    let s = s_star();
    let theta = theta_sq.sqrt();
    let ell_star = (2.0 * s / theta).cbrt();
    Ok(EfficiencySummary {
        theta_sq,
        ell_star,
        h_star: 2.0 * ell_star * ell_star * norm_cdf(-s),
        limiting_acc: 2.0 * norm_cdf(-s),
        s_star: s,
    })
}

/// Curvature `𝔤` minimizing `θ²` for fixed noise moments.
pub fn optimal_gfrak_fixed_mu(f: &TargetFunctionals, mu4: f64, mu6: f64) -> Result<f64> {
    check_moments(mu4, mu6)?;
    if !(f.b > 0.0) {
        return Err(invalid("optimal curvature needs B > 0"));
    }
    let denom = mu6 - 2.0 * mu4 + 1.0;
    if denom.abs() < 1e-12 {
        return Err(Error::AllBalancingEquivalent);
    }
    let TargetFunctionals { b, c, .. } = *f;
    Ok((mu6 * (c - 3.0 * b) + mu4 * (9.0 * b - c) - 6.0 * b) / (12.0 * b * denom))
}

/// Curvature minimizing `θ²` jointly with three-point noise of fourth
/// moment `mu4` (so `μ₆ = μ₄²`).
pub fn optimal_gfrak_joint(f: &TargetFunctionals, mu4: f64) -> Result<f64> {
    if !(mu4 > 1.0 && mu4.is_finite()) {
        return Err(invalid(format!("joint optimum requires mu4 > 1, got {mu4}")));
    }
    if !(f.b > 0.0) {
        return Err(invalid("optimal curvature needs B > 0"));
    }
    Ok((mu4 * (f.c - 3.0 * f.b) + 6.0 * f.b) / (12.0 * f.b * (mu4 - 1.0)))
}

/// `(A − C²/B)/144`, a lower bound on `θ²` over all designs.
pub fn theta_lower_bound(f: &TargetFunctionals) -> Result<f64> {
    if !(f.b > 0.0) {
        return Err(invalid("lower bound needs B > 0"));
    }
    Ok(((f.a - f.c * f.c / f.b) / 144.0).max(0.0))
}

/// Predicted ratio of optimally tuned ESJD, design 1 over design 2.
pub fn efficiency_ratio(theta_sq_1: f64, theta_sq_2: f64) -> Result<f64> {
    if !(theta_sq_1 > 0.0 && theta_sq_2 > 0.0) {
        return Err(invalid(format!(
            "efficiency ratio needs positive theta^2, got {theta_sq_1} and {theta_sq_2}"
        )));
    }
    Ok((theta_sq_2 / theta_sq_1).cbrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::FactorSpec;
    use proptest::prelude::*;

    fn hyperbolic() -> TargetFunctionals {
        abc_functionals(&ProductFactor::hyperbolic(0.1).unwrap()).unwrap()
    }

    #[test]
    fn gaussian_constants() {
        let f = TargetFunctionals::gaussian();
        assert!((theta_squared(&f, 3.0, 15.0, -0.25).unwrap() - 1.0 / 16.0).abs() < 1e-15);
        assert!((theta_squared(&f, 3.0, 15.0, -0.5).unwrap() - 15.0 / 16.0).abs() < 1e-15);
        assert_eq!(theta_squared(&f, 2.0, 4.0, 0.0).unwrap(), 0.0);
        let q = abc_functionals(&ProductFactor::gaussian()).unwrap();
        assert!(q.a.abs() < 1e-12 && (q.b - 1.0).abs() < 1e-8 && q.c.abs() < 1e-12);
    }

    #[test]
    fn infeasible_moments() {
        let f = TargetFunctionals::gaussian();
        assert!(matches!(theta_squared(&f, 0.5, 1.0, 0.0), Err(Error::MomentInfeasible { .. })));
        assert!(matches!(theta_squared(&f, 3.0, 8.0, 0.0), Err(Error::MomentInfeasible { .. })));
    }

    #[test]
    fn hyperbolic_functionals() {
        let f = hyperbolic();
        assert!((f.a - 12.99).abs() < 0.01, "{f:?}");
        assert!((f.b - 0.22).abs() < 0.01, "{f:?}");
        assert!((f.c - 1.68).abs() < 0.01, "{f:?}");
        assert!(f.a * f.b >= f.c * f.c);
    }

    #[test]
    fn langevin_forms_agree() {
        for spec in [
            FactorSpec::Gaussian,
            FactorSpec::Hyperbolic { delta_sq: 0.1 },
            FactorSpec::Hyperbolic { delta_sq: 1.0 },
            FactorSpec::GaussianPair { offset: 0.8 },
            FactorSpec::GaussianPair { offset: 1.5 },
        ] {
            let factor = ProductFactor::new(spec).unwrap();
            let direct = theta_squared(&abc_functionals(&factor).unwrap(), 3.0, 15.0, -0.25).unwrap();
            let ibp = theta_squared_langevin_ibp(&factor).unwrap();
            assert!((direct - ibp).abs() < 1e-6, "{spec:?}: {direct} vs {ibp}");
        }
        let g = theta_squared_langevin_ibp(&ProductFactor::gaussian()).unwrap();
        assert!((g - 1.0 / 16.0).abs() < 1e-10);
    }

    #[test]
    fn optimal_scaling_constants() {
        // brute-force maximization of h on a fine grid as the oracle
        let theta = 1.0;
        let (mut best_ell, mut best_h) = (0.0, 0.0);
        for k in 1..=200_000 {
            let ell = k as f64 * 1e-5;
            let h = h_of_ell(ell, theta);
            if h > best_h {
                best_h = h;
                best_ell = ell;
            }
        }
        let s = optimal_ell(1.0).unwrap();
        assert!((s.ell_star - best_ell).abs() < 2e-5, "{} vs {best_ell}", s.ell_star);
        assert!((s.h_star - best_h).abs() < 1e-9);
        assert!((c_h() - best_h).abs() < 1e-9);
        assert!((s.limiting_acc - 0.574).abs() < 5e-4);
        assert!((s.s_star - 0.56).abs() < 0.01);
        assert!((s.ell_star - (2.0 * s.s_star).cbrt()).abs() < 1e-15);
    }

    #[test]
    fn degenerate_theta() {
        assert!(matches!(optimal_ell(0.0), Err(Error::Degenerate(_))));
        assert!(optimal_ell(-1.0).is_err());
    }

    #[test]
    fn fixed_mu_optimum() {
        let g = TargetFunctionals::gaussian();
        assert!((optimal_gfrak_fixed_mu(&g, 3.0, 15.0).unwrap() + 0.2).abs() < 1e-15);
        assert!(matches!(optimal_gfrak_fixed_mu(&g, 1.0, 1.0), Err(Error::AllBalancingEquivalent)));
        // rounded hyperbolic functionals
        let r = TargetFunctionals::new(12.99, 0.22, 1.68).unwrap();
        let v = optimal_gfrak_fixed_mu(&r, 3.0, 15.0).unwrap();
        assert!((v - (1.68 / 2.2 - 0.2)).abs() < 1e-12);
        assert!((v - 0.5636).abs() < 1e-4);
    }

    #[test]
    fn joint_optimum() {
        let g = TargetFunctionals::gaussian();
        assert_eq!(optimal_gfrak_joint(&g, 2.0).unwrap(), 0.0);
        assert_eq!(theta_squared(&g, 2.0, 4.0, 0.0).unwrap(), 0.0);
        assert!(optimal_gfrak_joint(&g, 1.0).is_err());
        // at the joint optimum θ² = μ₄² times the bound
        let f = hyperbolic();
        let bound = theta_lower_bound(&f).unwrap();
        for mu4 in [1.05, 1.25, 2.0, 3.0] {
            let gf = optimal_gfrak_joint(&f, mu4).unwrap();
            let t = theta_squared(&f, mu4, mu4 * mu4, gf).unwrap();
            assert!((t - mu4 * mu4 * bound).abs() < 1e-12 * t.max(1.0), "mu4 {mu4}: {t} vs {}", mu4 * mu4 * bound);
        }
    }

    #[test]
    fn lower_bound_examples() {
        assert_eq!(theta_lower_bound(&TargetFunctionals::gaussian()).unwrap(), 0.0);
        let r = TargetFunctionals::new(12.99, 0.22, 1.68).unwrap();
        assert!((theta_lower_bound(&r).unwrap() - 0.0011).abs() < 5e-5);
        assert!(theta_lower_bound(&TargetFunctionals { a: 1.0, b: 0.0, c: 0.0 }).is_err());
    }

    #[test]
    fn efficiency_ratio_examples() {
        let g = TargetFunctionals::gaussian();
        let mala = theta_squared(&g, 3.0, 15.0, -0.25).unwrap();
        let barker = theta_squared(&g, 3.0, 15.0, -0.5).unwrap();
        assert!((efficiency_ratio(mala, barker).unwrap() - 15f64.cbrt()).abs() < 1e-12);
        let f = hyperbolic();
        let mala = theta_squared(&f, 3.0, 15.0, -0.25).unwrap();
        let barker = theta_squared(&f, 3.0, 15.0, -0.5).unwrap();
        let rad = theta_squared(&f, 1.0, 1.0, -0.5).unwrap();
        assert!((efficiency_ratio(mala, barker).unwrap() - 1.18).abs() < 0.005);
        assert!((efficiency_ratio(rad, mala).unwrap() - 2.08).abs() < 0.005);
        assert!(efficiency_ratio(0.0, 1.0).is_err());
    }

    fn functionals() -> impl Strategy<Value = TargetFunctionals> {
        (0.0..20.0f64, 0.05..5.0f64, -1.0..1.0f64).prop_map(|(a, b, r)| {
            let c = r * (a * b).sqrt();
            TargetFunctionals { a, b, c }
        })
    }

    fn design() -> impl Strategy<Value = (f64, f64, f64)> {
        (1.0..5.0f64, 0.0..30.0f64, -2.0..2.0f64).prop_map(|(mu4, extra, g)| (mu4, mu4 * mu4 + extra, g))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn barker_reduction(f in functionals(), mu4 in 1.0..5.0f64, extra in 0.0..30.0f64) {
            let mu6 = mu4 * mu4 + extra;
            let t = theta_squared(&f, mu4, mu6, -0.5).unwrap();
            let closed = mu6 * (f.a + 6.0 * f.c + 9.0 * f.b) / 144.0;
            prop_assert!((t - closed).abs() <= 1e-12 * closed.abs().max(1.0));
        }

        #[test]
        fn bound_dominates(f in functionals(), (mu4, mu6, g) in design()) {
            let t = theta_squared(&f, mu4, mu6, g).unwrap();
            let bound = theta_lower_bound(&f).unwrap();
            prop_assert!(t >= bound - 1e-12, "{t} < {bound}");
        }

        #[test]
        fn fixed_mu_argmin(f in functionals(), (mu4, mu6, _g) in design()) {
            prop_assume!((mu6 - 2.0 * mu4 + 1.0).abs() > 1e-3);
            let g = optimal_gfrak_fixed_mu(&f, mu4, mu6).unwrap();
            let best = theta_squared(&f, mu4, mu6, g).unwrap();
            for dg in [-0.01, 0.01] {
                prop_assert!(theta_squared(&f, mu4, mu6, g + dg).unwrap() > best);
            }
        }

        #[test]
        fn h_maximized_at_ell_star(theta_sq in 0.01..100.0f64) {
            let s = optimal_ell(theta_sq).unwrap();
            let theta = theta_sq.sqrt();
            for k in 1..=100 {
                let ell = s.ell_star * k as f64 / 25.0;
                prop_assert!(h_of_ell(ell, theta) <= s.h_star * (1.0 + 1e-12));
            }
            prop_assert!(h_of_ell(1e-6, theta) < 1e-10);
            prop_assert!(h_of_ell(1e3 * s.ell_star, theta) < 1e-10);
        }
    }

    #[test]
    fn limiting_acceptance_independent_of_theta() {
        let accs: Vec<f64> = [0.01, 1.0, 100.0].iter().map(|t| optimal_ell(*t).unwrap().limiting_acc).collect();
        assert_eq!(accs[0], accs[1]);
        assert_eq!(accs[1], accs[2]);
    }
}
