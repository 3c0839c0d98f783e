//! Named algorithm designs.
//!
//! | name                   | balancing | noise                 |
//! |------------------------|-----------|-----------------------|
//! | `mala`                 | `√t`      | Gaussian              |
//! | `barker`               | Barker    | Gaussian              |
//! | `barker-rademacher`    | Barker    | Rademacher            |
//! | `barker-bimodal(σ_b)`  | Barker    | bimodal mixture       |
//! | `three-point(a[, 𝔤])`  | `g_γ`, `γ = √(𝔤 + ¼)` | three-point `ν(a)` |
//! | `rwm`                  | none      | Gaussian random walk  |
//!
//! When `𝔤` is omitted for `three-point(a)` it is set to the curvature that is
//! jointly optimal with `a` for the target's functionals.

use std::fmt;
use std::str::FromStr;

use serde_with::{DeserializeFromStr, SerializeDisplay};

use crate::asymptotics::{optimal_gfrak_joint, theta_squared, TargetFunctionals};
use crate::balancing::BalancingFunction;
use crate::error::{Error, Result};
use crate::noise::NoiseDistribution;
use crate::proposal::LBProposal;

pub const DEFAULT_SIGMA_B: f64 = 0.1;
pub const LB_TARGET_ACCEPTANCE: f64 = 0.574;
pub const RWM_TARGET_ACCEPTANCE: f64 = 0.234;

/// Serialized as its name, e.g. `"barker-bimodal(0.1)"`.
#[derive(Debug, Clone, Copy, PartialEq, SerializeDisplay, DeserializeFromStr)]
pub enum Preset {
    Mala,
    Barker,
    BarkerRademacher,
    BarkerBimodal(f64),
    ThreePoint { a: f64, gfrak: Option<f64> },
    Rwm,
}

fn parse_args(s: &str, name: &str) -> Result<Option<Vec<f64>>> {
    let Some(rest) = s.strip_prefix(name) else {
        return Ok(None);
    };
    if rest.is_empty() {
        return Ok(Some(Vec::new()));
    }
    let inner = rest
        .strip_prefix('(')
        .and_then(|r| r.strip_suffix(')'))
        .ok_or_else(|| Error::Config(format!("malformed preset '{s}'")))?;
    inner
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad number '{}' in preset '{s}'", v.trim())))
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let simple = match s.as_str() {
            "mala" => Some(Preset::Mala),
            "barker" => Some(Preset::Barker),
            "barker-rademacher" => Some(Preset::BarkerRademacher),
            "rwm" => Some(Preset::Rwm),
            _ => None,
        };
        if let Some(p) = simple {
            return Ok(p);
        }
        if let Some(args) = parse_args(&s, "barker-bimodal")? {
            return match args.as_slice() {
                [] => Ok(Preset::BarkerBimodal(DEFAULT_SIGMA_B)),
                [sb] if *sb > 0.0 && *sb < 1.0 => Ok(Preset::BarkerBimodal(*sb)),
                _ => Err(Error::Config(format!("barker-bimodal needs one sigma_b in (0, 1): '{s}'"))),
            };
        }
        if let Some(args) = parse_args(&s, "three-point")? {
            return match args.as_slice() {
                [a] if *a > 1.0 => Ok(Preset::ThreePoint { a: *a, gfrak: None }),
                [a, g] if *a > 1.0 && g.is_finite() => Ok(Preset::ThreePoint { a: *a, gfrak: Some(*g) }),
                _ => Err(Error::Config(format!("three-point needs a > 1 and optional curvature: '{s}'"))),
            };
        }
        Err(Error::Config(format!("unknown preset '{s}'")))
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Preset::Mala => write!(f, "mala"),
            Preset::Barker => write!(f, "barker"),
            Preset::BarkerRademacher => write!(f, "barker-rademacher"),
            Preset::BarkerBimodal(sb) => write!(f, "barker-bimodal({sb})"),
            Preset::ThreePoint { a, gfrak: None } => write!(f, "three-point({a})"),
            Preset::ThreePoint { a, gfrak: Some(g) } => write!(f, "three-point({a},{g})"),
            Preset::Rwm => write!(f, "rwm"),
        }
    }
}

/// Parses a comma-separated preset list, respecting parentheses.
pub fn parse_preset_list(s: &str) -> Result<Vec<Preset>> {
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut start = 0;
    for (i, ch) in s.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => depth = depth.saturating_sub(1),
            ',' if depth == 0 => {
                out.push(s[start..i].parse()?);
                start = i + 1;
            }
            _ => {}
        }
    }
    if !s[start..].trim().is_empty() {
        out.push(s[start..].parse()?);
    }
    if out.is_empty() {
        return Err(Error::Config("empty preset list".into()));
    }
    Ok(out)
}

impl Preset {
    pub fn is_rwm(&self) -> bool {
        matches!(self, Preset::Rwm)
    }

    pub fn target_acceptance(&self) -> f64 {
        if self.is_rwm() {
            RWM_TARGET_ACCEPTANCE
        } else {
            LB_TARGET_ACCEPTANCE
        }
    }

    pub fn noise(&self) -> Result<NoiseDistribution> {
        match self {
            Preset::Mala | Preset::Barker | Preset::Rwm => Ok(NoiseDistribution::gaussian()),
            Preset::BarkerRademacher => Ok(NoiseDistribution::rademacher()),
            Preset::BarkerBimodal(sb) => NoiseDistribution::bimodal(*sb),
            Preset::ThreePoint { a, .. } => NoiseDistribution::three_point(*a),
        }
    }

    /// Balancing curvature `𝔤`; `None` for the random walk. Target
    /// functionals are needed only for `three-point(a)` without explicit `𝔤`.
    pub fn gfrak(&self, functionals: Option<&TargetFunctionals>) -> Result<Option<f64>> {
        Ok(match self {
            Preset::Mala => Some(-0.25),
            Preset::Barker | Preset::BarkerRademacher | Preset::BarkerBimodal(_) => Some(-0.5),
            Preset::ThreePoint { gfrak: Some(g), .. } => Some(*g),
            Preset::ThreePoint { a, gfrak: None } => {
                let f = functionals.ok_or_else(|| {
                    Error::Config(format!("{self} needs target functionals or an explicit curvature"))
                })?;
                Some(optimal_gfrak_joint(f, *a)?)
            }
            Preset::Rwm => None,
        })
    }

    pub fn balancing(&self, functionals: Option<&TargetFunctionals>) -> Result<BalancingFunction> {
        match self {
            Preset::Mala | Preset::Rwm => Ok(BalancingFunction::sqrt()),
            Preset::Barker | Preset::BarkerRademacher | Preset::BarkerBimodal(_) => Ok(BalancingFunction::barker()),
            Preset::ThreePoint { .. } => {
                let g = self.gfrak(functionals)?.expect("three-point has a curvature");
                if g < -0.25 {
                    return Err(Error::InvalidParameter(format!(
                        "{self}: curvature {g} < -1/4 is outside the g_gamma family"
                    )));
                }
                BalancingFunction::g_gamma((g + 0.25).sqrt())
            }
        }
    }

    /// Asymptotic `θ²` of the design on a product target.
    pub fn theta_sq(&self, f: &TargetFunctionals) -> Result<f64> {
        let g = self
            .gfrak(Some(f))?
            .ok_or_else(|| Error::InvalidParameter("random walk has no locally-balanced efficiency constant".into()))?;
        let mu = self.noise()?;
        theta_squared(f, mu.mu4(), mu.mu6(), g)
    }

    pub fn build(&self, sigma: f64, functionals: Option<&TargetFunctionals>) -> Result<LBProposal> {
        if self.is_rwm() {
            return LBProposal::rwm(sigma);
        }
        LBProposal::new(self.balancing(functionals)?, self.noise()?, sigma)
    }
}
