//! Balancing functions `g` with `g(t) = t g(1/t)`, their log-form
//! `b(x) = log g(e^x)` and the curvature `g''(1)`.

use std::f64::consts::LN_2;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// An even, non-negative generator `h` for the family `g_h(t) = √t h(log t)`.
pub type EvenFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum BalancingKind {
    Sqrt,
    Barker,
    Min,
    Max,
    /// `g(t) = ½(t^{½+γ} + t^{½−γ})`.
    GGamma(f64),
    /// `g(t) = √t h(log t) / h(0)`.
    FromEven(EvenFn),
}

impl fmt::Debug for BalancingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BalancingKind::Sqrt => write!(f, "Sqrt"),
            BalancingKind::Barker => write!(f, "Barker"),
            BalancingKind::Min => write!(f, "Min"),
            BalancingKind::Max => write!(f, "Max"),
            BalancingKind::GGamma(g) => write!(f, "GGamma({g})"),
            BalancingKind::FromEven(_) => write!(f, "FromEven(..)"),
        }
    }
}

/// Config-level name of a balancing function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalancingSpec {
    Sqrt,
    Barker,
    Min,
    Max,
    GGamma(f64),
}

#[derive(Clone, Debug)]
pub struct BalancingFunction {
    kind: BalancingKind,
    // log h(0) for FromEven; unused otherwise.
    log_h0: f64,
    gfrak: Option<f64>,
}

/// Probe grid `{e^{-5}, …, e^{5}}` in log space, step 0.25.
pub fn probe_grid_log() -> Vec<f64> {
    (0..=40).map(|k| -5.0 + 0.25 * k as f64).collect()
}

const EVEN_TOL: f64 = 1e-10;
const FD_STEP: f64 = 1e-4;

impl BalancingFunction {
    pub fn new(kind: BalancingKind) -> Result<Self> {
        match kind {
            BalancingKind::Sqrt => Ok(Self::closed(kind, Some(-0.25))),
            BalancingKind::Barker => Ok(Self::closed(kind, Some(-0.5))),
            BalancingKind::Min | BalancingKind::Max => Ok(Self::closed(kind, None)),
            BalancingKind::GGamma(gamma) => {
                if !(gamma >= 0.0 && gamma.is_finite()) {
                    return Err(invalid(format!("g_gamma requires gamma >= 0, got {gamma}")));
                }
                Ok(Self::closed(kind, Some(gamma * gamma - 0.25)))
            }
            BalancingKind::FromEven(h) => Self::from_even_function(h),
        }
    }

    fn closed(kind: BalancingKind, gfrak: Option<f64>) -> Self {
        BalancingFunction {
            kind,
            log_h0: 0.0,
            gfrak,
        }
    }

    pub fn sqrt() -> Self {
        Self::closed(BalancingKind::Sqrt, Some(-0.25))
    }

    pub fn barker() -> Self {
        Self::closed(BalancingKind::Barker, Some(-0.5))
    }

    pub fn min() -> Self {
        Self::closed(BalancingKind::Min, None)
    }

    pub fn max() -> Self {
        Self::closed(BalancingKind::Max, None)
    }

    pub fn g_gamma(gamma: f64) -> Result<Self> {
        Self::new(BalancingKind::GGamma(gamma))
    }

    pub fn from_spec(spec: BalancingSpec) -> Result<Self> {
        match spec {
            BalancingSpec::Sqrt => Ok(Self::sqrt()),
            BalancingSpec::Barker => Ok(Self::barker()),
            BalancingSpec::Min => Ok(Self::min()),
            BalancingSpec::Max => Ok(Self::max()),
            BalancingSpec::GGamma(g) => Self::g_gamma(g),
        }
    }

    /// Builds `g_h(t) = √t h(log t)`, rescaled so that `g(1) = 1`.
    ///
    /// `h` must be even and non-negative on the probe grid, with `h(0) > 0`.
    pub fn from_even_function(h: EvenFn) -> Result<Self> {
        let h0 = h(0.0);
        if !(h0 > 0.0 && h0.is_finite()) {
            return Err(invalid(format!("even generator needs 0 < h(0) < inf, got {h0}")));
        }
        for x in probe_grid_log() {
            let (hp, hm) = (h(x), h(-x));
            if !(hp >= 0.0 && hm >= 0.0) {
                return Err(invalid(format!("even generator is negative near x = {x}")));
            }
            if (hp - hm).abs() > EVEN_TOL * hp.abs().max(1.0) {
                return Err(invalid(format!(
                    "generator is not even: h({x}) = {hp}, h({}) = {hm}",
                    -x
                )));
            }
        }
        // g''(1) = b''(0) - 1/4 and b''(0) = (log h)''(0).
        let lh = |x: f64| h(x).ln();
        let d2 = (lh(FD_STEP) - 2.0 * lh(0.0) + lh(-FD_STEP)) / (FD_STEP * FD_STEP);
        let gfrak = if d2.is_finite() { Some(d2 - 0.25) } else { None };
        Ok(BalancingFunction {
            kind: BalancingKind::FromEven(h),
            log_h0: h0.ln(),
            gfrak,
        })
    }

    pub fn kind(&self) -> &BalancingKind {
        &self.kind
    }

    pub fn name(&self) -> String {
        match &self.kind {
            BalancingKind::Sqrt => "sqrt".into(),
            BalancingKind::Barker => "barker".into(),
            BalancingKind::Min => "min".into(),
            BalancingKind::Max => "max".into(),
            BalancingKind::GGamma(g) => format!("g_gamma({g})"),
            BalancingKind::FromEven(_) => "from_even".into(),
        }
    }

    pub fn is_barker(&self) -> bool {
        matches!(self.kind, BalancingKind::Barker)
    }

    /// `γ` of the `g_gamma` family, treating `sqrt` as `γ = 0`.
    pub fn gamma(&self) -> Option<f64> {
        match self.kind {
            BalancingKind::Sqrt => Some(0.0),
            BalancingKind::GGamma(g) => Some(g),
            _ => None,
        }
    }

    pub fn is_bounded(&self) -> bool {
        matches!(self.kind, BalancingKind::Barker | BalancingKind::Min)
    }

    pub fn is_smooth(&self) -> bool {
        !matches!(self.kind, BalancingKind::Min | BalancingKind::Max)
    }

    /// `g''(1)`; absent for the non-smooth kinds.
    pub fn gfrak(&self) -> Option<f64> {
        self.gfrak
    }

    pub fn require_gfrak(&self) -> Result<f64> {
        self.gfrak
            .ok_or_else(|| Error::NonSmoothBalancing(self.name()))
    }

    /// `g(t)` for `t >= 0`.
    pub fn eval_g(&self, t: f64) -> f64 {
        match &self.kind {
            BalancingKind::Sqrt => t.sqrt(),
            BalancingKind::Barker => 2.0 * t / (1.0 + t),
            BalancingKind::Min => t.min(1.0),
            BalancingKind::Max => t.max(1.0),
            BalancingKind::GGamma(g) => 0.5 * (t.powf(0.5 + g) + t.powf(0.5 - g)),
            BalancingKind::FromEven(h) => {
                if t == 0.0 {
                    return 0.0;
                }
                t.sqrt() * h(t.ln()) / self.log_h0.exp()
            }
        }
    }

    /// `b(x) = log g(e^x)`, evaluated without forming `e^x`.
    pub fn eval_b(&self, x: f64) -> f64 {
        match &self.kind {
            BalancingKind::Sqrt => 0.5 * x,
            BalancingKind::Barker => {
                if x > 0.0 {
                    LN_2 - (-x).exp().ln_1p()
                } else {
                    LN_2 + x - x.exp().ln_1p()
                }
            }
            BalancingKind::Min => x.min(0.0),
            BalancingKind::Max => x.max(0.0),
            BalancingKind::GGamma(g) => {
                // x/2 + log cosh(γx)
                let a = (g * x).abs();
                0.5 * x + a + (-2.0 * a).exp().ln_1p() - LN_2
            }
            BalancingKind::FromEven(h) => 0.5 * x + h(x).ln() - self.log_h0,
        }
    }

    /// The even generator `h_g(x) = e^{-x/2} g(e^x)`.
    pub fn to_even_function(&self) -> EvenFn {
        let g = self.clone();
        Arc::new(move |x: f64| (g.eval_b(x) - 0.5 * x).exp())
    }
}
