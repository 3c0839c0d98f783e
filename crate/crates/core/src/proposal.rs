//! First-order locally-balanced proposals.
//!
//! Coordinate `i` moves by `w_i = y_i − x_i` drawn from the density
//! proportional to `g(e^{β_i w}) μ(w / s_i) / s_i`, where `β_i = ∂_i log π(x)`
//! and `s_i = σ d_i` is the global scale times an optional diagonal
//! preconditioner. Four samplers are provided:
//!
//! * [`SamplingPath::BarkerFlip`]: draw `z ~ μ` and keep its sign with
//!   probability `F(β s z)`, `F` the logistic function. Exact for the Barker
//!   balancing function and any symmetric `μ`.
//! * [`SamplingPath::GammaGaussian`]: the `g_γ` family with Gaussian `μ` is a
//!   two-component Gaussian mixture with shifts `(½ ± γ) s² β`.
//! * [`SamplingPath::DiscreteAtoms`]: for atomic `μ` the proposal is a finite
//!   reweighting of the atoms.
//! * [`SamplingPath::Rwm`]: Gaussian random walk, gradients ignored.

use std::f64::consts::LN_2;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::balancing::{BalancingFunction, BalancingKind};
use crate::error::{invalid, Error, Result};
use crate::noise::{log_sum_exp, NoiseDistribution};
use crate::quadrature::{gauss_hermite_64, gauss_hermite_96, GaussHermite};
use crate::targets::TargetModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingPath {
    BarkerFlip,
    GammaGaussian,
    DiscreteAtoms,
    Rwm,
}

/// Which closed form (if any) computes `log Z` for a `(g, μ)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormalizerBranch {
    /// Barker: `g(e^t) + g(e^{−t}) = 2`, so `Z = 1` for symmetric `μ`.
    Barker,
    /// Finite sum over the atoms of `μ`.
    AtomSum,
    /// `g_γ` with Gaussian `μ`, via the normal moment generating function.
    GaussianMgf,
    /// Gauss–Hermite quadrature over the Gaussian components of `μ`; approximate.
    Quadrature,
}

impl NormalizerBranch {
    pub fn select(g: &BalancingFunction, mu: &NoiseDistribution) -> Self {
        if g.is_barker() {
            NormalizerBranch::Barker
        } else if mu.atoms().is_some() {
            NormalizerBranch::AtomSum
        } else if g.gamma().is_some() && mu.is_gaussian() {
            NormalizerBranch::GaussianMgf
        } else {
            NormalizerBranch::Quadrature
        }
    }

    pub fn is_exact(&self) -> bool {
        !matches!(self, NormalizerBranch::Quadrature)
    }
}

/// Logistic function `e^t / (1 + e^t)`.
#[inline]
pub fn barker_flip_prob(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn gamma_gaussian_log_z(gamma: f64, t: f64) -> f64 {
    let a = (0.5 + gamma) * t;
    let b = (0.5 - gamma) * t;
    let (ea, eb) = (0.5 * a * a, 0.5 * b * b);
    let m = ea.max(eb);
    m + ((ea - m).exp() + (eb - m).exp()).ln() - LN_2
}

fn atom_log_z(g: &BalancingFunction, mu: &NoiseDistribution, t: f64) -> f64 {
    let atoms = mu.atoms().expect("atom branch needs atoms");
    let terms: Vec<f64> = atoms
        .iter()
        .map(|a| a.prob.ln() + g.eval_b(t * a.value))
        .collect();
    log_sum_exp(&terms)
}

fn quadrature_log_z(rule: &GaussHermite, g: &BalancingFunction, mu: &NoiseDistribution, t: f64) -> f64 {
    let mut terms = Vec::with_capacity(rule.nodes.len() * mu.components().len());
    for c in mu.components() {
        for (&z, &w) in rule.nodes.iter().zip(&rule.weights) {
            terms.push(c.weight.ln() + w.ln() + g.eval_b(t * (c.mean + c.sd * z)));
        }
    }
    log_sum_exp(&terms)
}

/// Gauss–Hermite evaluation of `log ∫ g(e^{tz}) μ(dz)` for Gaussian-mixture
/// `μ`, regardless of whether a closed form exists. Checked against a
/// higher-order rule.
pub fn log_normalizer_quadrature(g: &BalancingFunction, mu: &NoiseDistribution, t: f64) -> Result<f64> {
    if mu.atoms().is_some() {
        return Err(invalid("quadrature normalizer needs a continuous noise law"));
    }
    if t.abs() > 20.0 && !g.is_bounded() {
        return Err(Error::NormalizerUnstable(format!(
            "|beta * sigma| = {} > 20 with unbounded g = {}",
            t.abs(),
            g.name()
        )));
    }
    let lo = quadrature_log_z(gauss_hermite_64(), g, mu, t);
    let hi = quadrature_log_z(gauss_hermite_96(), g, mu, t);
    if !((lo - hi).abs() <= 1e-6) {
        return Err(Error::NormalizerUnstable(format!(
            "Gauss-Hermite orders 64 and 96 disagree at t = {t}: {lo} vs {hi}"
        )));
    }
    Ok(lo)
}

/// `log ∫ g(e^{t z}) μ(dz)` with `t = β σ d_i`.
pub fn log_normalizer(g: &BalancingFunction, mu: &NoiseDistribution, t: f64) -> Result<f64> {
    match NormalizerBranch::select(g, mu) {
        NormalizerBranch::Barker => Ok(0.0),
        NormalizerBranch::AtomSum => Ok(atom_log_z(g, mu, t)),
        NormalizerBranch::GaussianMgf => Ok(gamma_gaussian_log_z(g.gamma().unwrap_or(0.0), t)),
        NormalizerBranch::Quadrature => log_normalizer_quadrature(g, mu, t),
    }
}

/// Per-coordinate scales `s_i = σ d_i`.
#[derive(Debug, Clone, Copy)]
pub struct Scales<'a> {
    pub sigma: f64,
    pub precond: Option<&'a [f64]>,
}

impl Scales<'_> {
    #[inline]
    pub fn at(&self, i: usize) -> f64 {
        match self.precond {
            Some(d) => self.sigma * d[i],
            None => self.sigma,
        }
    }
}

/// A proposed point with the quantities the acceptance ratio needs.
#[derive(Debug, Clone)]
pub struct ProposalDraw {
    pub y: Vec<f64>,
    pub grad_x: Vec<f64>,
    pub grad_y: Vec<f64>,
    pub log_pi_x: f64,
    pub log_pi_y: f64,
}

#[derive(Debug, Clone)]
pub struct LBProposal {
    g: BalancingFunction,
    mu: NoiseDistribution,
    sigma: f64,
    precond: Option<Vec<f64>>,
    path: SamplingPath,
    gamma: f64,
    atom_values: Vec<f64>,
    atom_log_p: Vec<f64>,
    // index of the atom at -v for each negative atom v, so b is evaluated once per pair
    atom_mirror: Vec<Option<usize>>,
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("proposal scale must be positive, got {sigma}")))
    }
}

impl LBProposal {
    /// Chooses the sampling path from `(g, μ)`: Barker flip for the Barker
    /// function, the atom path for discrete `μ`, the mixture path for `g_γ`
    /// with Gaussian `μ`.
    pub fn new(g: BalancingFunction, mu: NoiseDistribution, sigma: f64) -> Result<Self> {
        let path = if g.is_barker() {
            SamplingPath::BarkerFlip
        } else if mu.atoms().is_some() {
            SamplingPath::DiscreteAtoms
        } else if g.gamma().is_some() && mu.is_gaussian() {
            SamplingPath::GammaGaussian
        } else {
            return Err(Error::IncompatiblePath(format!(
                "no sampler for g = {} with noise {}",
                g.name(),
                mu.name()
            )));
        };
        Self::with_path(g, mu, sigma, path)
    }

    pub fn with_path(g: BalancingFunction, mu: NoiseDistribution, sigma: f64, path: SamplingPath) -> Result<Self> {
        check_sigma(sigma)?;
        let ok = match path {
            SamplingPath::BarkerFlip => g.is_barker(),
            SamplingPath::GammaGaussian => g.gamma().is_some() && mu.is_gaussian(),
            SamplingPath::DiscreteAtoms => mu.atoms().is_some(),
            SamplingPath::Rwm => true,
        };
        if !ok {
            return Err(Error::IncompatiblePath(format!(
                "{path:?} cannot sample g = {} with noise {}",
                g.name(),
                mu.name()
            )));
        }
        let (atom_values, atom_log_p) = match mu.atoms() {
            Some(atoms) => (
                atoms.iter().map(|a| a.value).collect(),
                atoms.iter().map(|a| a.prob.ln()).collect(),
            ),
            None => (Vec::new(), Vec::new()),
        };
        let atom_mirror = atom_values
            .iter()
            .map(|&v: &f64| {
                if v < 0.0 {
                    atom_values.iter().position(|&u| u == -v)
                } else {
                    None
                }
            })
            .collect();
        let gamma = g.gamma().unwrap_or(0.0);
        Ok(LBProposal {
            g,
            mu,
            sigma,
            precond: None,
            path,
            gamma,
            atom_values,
            atom_log_p,
            atom_mirror,
        })
    }

    pub fn rwm(sigma: f64) -> Result<Self> {
        Self::with_path(
            BalancingFunction::sqrt(),
            NoiseDistribution::gaussian(),
            sigma,
            SamplingPath::Rwm,
        )
    }

    pub fn with_precond(mut self, d: Vec<f64>) -> Result<Self> {
        if d.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(invalid("preconditioner entries must be positive"));
        }
        self.precond = Some(d);
        Ok(self)
    }

    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        check_sigma(sigma)?;
        let mut p = self.clone();
        p.sigma = sigma;
        Ok(p)
    }

    pub fn g(&self) -> &BalancingFunction {
        &self.g
    }

    pub fn mu(&self) -> &NoiseDistribution {
        &self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn precond(&self) -> Option<&[f64]> {
        self.precond.as_deref()
    }

    pub fn path(&self) -> SamplingPath {
        self.path
    }

    pub fn is_rwm(&self) -> bool {
        self.path == SamplingPath::Rwm
    }

    pub fn scales(&self) -> Scales<'_> {
        Scales {
            sigma: self.sigma,
            precond: self.precond.as_deref(),
        }
    }

    /// Writes `b(t·v_j)` for every atom, using `b(-x) = b(x) - x` for mirrored
    /// pairs and `b(0) = 0`.
    #[inline]
    fn fill_atom_b(&self, t: f64, out: &mut [f64]) {
        for (j, &v) in self.atom_values.iter().enumerate() {
            if self.atom_mirror[j].is_none() {
                out[j] = if v == 0.0 { 0.0 } else { self.g.eval_b(t * v) };
            }
        }
        for (j, mirror) in self.atom_mirror.iter().enumerate() {
            if let Some(k) = *mirror {
                let x = t * self.atom_values[k];
                out[j] = out[k] - x;
            }
        }
    }

    /// `log Z(t)` on the path's exact branch.
    #[inline]
    pub fn log_z(&self, t: f64) -> f64 {
        match self.path {
            SamplingPath::BarkerFlip | SamplingPath::Rwm => 0.0,
            SamplingPath::GammaGaussian => gamma_gaussian_log_z(self.gamma, t),
            SamplingPath::DiscreteAtoms => {
                let mut m = f64::NEG_INFINITY;
                let mut buf = [0.0f64; 8];
                let k = self.atom_values.len();
                let terms: &mut [f64] = if k <= 8 { &mut buf[..k] } else { &mut [] };
                if terms.is_empty() {
                    return atom_log_z(&self.g, &self.mu, t);
                }
                self.fill_atom_b(t, terms);
                for (j, slot) in terms.iter_mut().enumerate() {
                    *slot += self.atom_log_p[j];
                    m = m.max(*slot);
                }
                m + terms.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
            }
        }
    }

    /// Draws the increment `w = y_i − x_i` for one coordinate with gradient
    /// `beta` and scale `s`.
    #[inline]
    pub fn draw_increment<R: Rng + ?Sized>(&self, beta: f64, s: f64, rng: &mut R) -> f64 {
        match self.path {
            SamplingPath::BarkerFlip => {
                let z = self.mu.sample(rng);
                let u: f64 = rng.random();
                if u < barker_flip_prob(beta * s * z) {
                    s * z
                } else {
                    -s * z
                }
            }
            SamplingPath::GammaGaussian => {
                let t = beta * s;
                let p = 1.0 / (1.0 + (-self.gamma * t * t).exp());
                let u: f64 = rng.random();
                let sign = if u < p { 1.0 } else { -1.0 };
                let z: f64 = rng.sample(StandardNormal);
                (0.5 + sign * self.gamma) * s * t + s * z
            }
            SamplingPath::DiscreteAtoms => {
                let t = beta * s;
                let k = self.atom_values.len();
                let mut w = [0.0f64; 8];
                let mut logw: Vec<f64>;
                let weights: &mut [f64] = if k <= 8 {
                    &mut w[..k]
                } else {
                    logw = vec![0.0; k];
                    &mut logw
                };
                let mut m = f64::NEG_INFINITY;
                self.fill_atom_b(t, weights);
                for (j, slot) in weights.iter_mut().enumerate() {
                    *slot += self.atom_log_p[j];
                    m = m.max(*slot);
                }
                let mut total = 0.0;
                for slot in weights.iter_mut() {
                    *slot = (*slot - m).exp();
                    total += *slot;
                }
                let u: f64 = rng.random::<f64>() * total;
                let mut acc = 0.0;
                for (j, &v) in weights.iter().enumerate() {
                    acc += v;
                    if u < acc {
                        return s * self.atom_values[j];
                    }
                }
                s * self.atom_values[k - 1]
            }
            SamplingPath::Rwm => s * rng.sample::<f64, _>(StandardNormal),
        }
    }

    /// Contribution of coordinate `i` to the log-MH ratio beyond
    /// `log π(y) − log π(x)`:
    /// `b(β_y (x−y)) − b(β_x (y−x)) + log Z(β_x s) − log Z(β_y s)`.
    #[inline]
    pub fn coord_log_ratio(&self, beta_x: f64, beta_y: f64, w: f64, s: f64) -> f64 {
        if self.is_rwm() {
            return 0.0;
        }
        let fwd = self.g.eval_b(beta_x * w);
        let bwd = self.g.eval_b(-(beta_y * w));
        match self.path {
            SamplingPath::BarkerFlip => bwd - fwd,
            // grouped so that swapping x and y negates the term exactly
            _ => (bwd - fwd) + (self.log_z(beta_x * s) - self.log_z(beta_y * s)),
        }
    }

    /// Log density (continuous `μ`) or log mass (discrete `μ`) of the
    /// one-coordinate increment `w` given gradient `beta` and scale `s`.
    pub fn log_increment_density(&self, beta: f64, s: f64, w: f64) -> Result<f64> {
        if self.is_rwm() {
            let z = w / s;
            return Ok(-0.5 * z * z - s.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln());
        }
        let log_z = log_normalizer(&self.g, &self.mu, beta * s)?;
        let z = w / s;
        let base = if self.mu.atoms().is_some() {
            // exact atom lookup on the scaled lattice
            self.atom_values
                .iter()
                .zip(&self.atom_log_p)
                .find(|(v, _)| (s * **v - w).abs() <= 1e-12 * s.max(1.0))
                .map_or(f64::NEG_INFINITY, |(_, lp)| *lp)
        } else {
            self.mu.log_density(z) - s.ln()
        };
        Ok(self.g.eval_b(beta * w) + base - log_z)
    }

    /// Proposes `y` from `x` using the proposal's own scales.
    pub fn propose<R: Rng + ?Sized>(&self, model: &TargetModel, x: &[f64], rng: &mut R) -> Result<ProposalDraw> {
        let n = model.dim();
        let mut grad_x = vec![0.0; n];
        let log_pi_x = model.log_density_and_grad(x, &mut grad_x);
        let mut y = vec![0.0; n];
        let mut grad_y = vec![0.0; n];
        let log_pi_y = self.propose_into(model, x, &grad_x, self.scales(), rng, &mut y, &mut grad_y)?;
        Ok(ProposalDraw {
            y,
            grad_x,
            grad_y,
            log_pi_x,
            log_pi_y,
        })
    }

    /// Buffer-reusing form of [`propose`](Self::propose): fills `y` and
    /// `grad_y` and returns `log π(y)`.
    #[allow(clippy::too_many_arguments)]
    pub fn propose_into<R: Rng + ?Sized>(
        &self,
        model: &TargetModel,
        x: &[f64],
        grad_x: &[f64],
        scales: Scales<'_>,
        rng: &mut R,
        y: &mut [f64],
        grad_y: &mut [f64],
    ) -> Result<f64> {
        for i in 0..x.len() {
            let beta = if self.is_rwm() { 0.0 } else { grad_x[i] };
            if !beta.is_finite() {
                return Err(Error::NonFiniteGradient { coord: i });
            }
            y[i] = x[i] + self.draw_increment(beta, scales.at(i), rng);
        }
        Ok(model.log_density_and_grad(y, grad_y))
    }
}

/// `g` must be smooth to enter the asymptotic formulas; `min`/`max` are only
/// sampleable through atoms.
pub fn requires_atoms(g: &BalancingFunction) -> bool {
    matches!(g.kind(), BalancingKind::Min | BalancingKind::Max)
}
