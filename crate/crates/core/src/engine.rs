//! Metropolis–Hastings with the exact locally-balanced acceptance ratio,
//! an adaptive chain driver and effective-sample-size diagnostics.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{invalid, Error, Result};
use crate::proposal::{LBProposal, ProposalDraw, Scales};
use crate::targets::TargetModel;

/// Coordinates beyond this magnitude abort the chain.
pub const DIVERGENCE_BOUND: f64 = 1e8;
/// Iterations during which only the global scale adapts.
pub const WARM_START_ITERS: usize = 100;
pub const DEFAULT_DECAY: f64 = 0.6;
const LOG_SCALE_RANGE: (f64, f64) = (-30.0, 10.0);
const MIN_VARIANCE: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct MhLogRatio {
    pub rho: f64,
    pub per_coord_terms: Option<Vec<f64>>,
}

/// `log π(y) − log π(x) + Σ_i [b(β_y,i (x_i − y_i)) − b(β_x,i (y_i − x_i))
/// + log Z(β_x,i s_i) − log Z(β_y,i s_i)]`. The noise densities cancel by
/// symmetry. Terms are accumulated in coordinate order so that swapping `x`
/// and `y` negates the result exactly.
#[allow(clippy::too_many_arguments)]
pub fn log_ratio(
    prop: &LBProposal,
    scales: Scales<'_>,
    x: &[f64],
    y: &[f64],
    grad_x: &[f64],
    grad_y: &[f64],
    log_pi_x: f64,
    log_pi_y: f64,
) -> f64 {
    let mut rho = log_pi_y - log_pi_x;
    if prop.is_rwm() {
        return rho;
    }
    for i in 0..x.len() {
        rho += prop.coord_log_ratio(grad_x[i], grad_y[i], y[i] - x[i], scales.at(i));
    }
    rho
}

pub fn log_mh_rho(prop: &LBProposal, x: &[f64], draw: &ProposalDraw, keep_terms: bool) -> MhLogRatio {
    let scales = prop.scales();
    let rho = log_ratio(prop, scales, x, &draw.y, &draw.grad_x, &draw.grad_y, draw.log_pi_x, draw.log_pi_y);
    let per_coord_terms = keep_terms.then(|| {
        (0..x.len())
            .map(|i| prop.coord_log_ratio(draw.grad_x[i], draw.grad_y[i], draw.y[i] - x[i], scales.at(i)))
            .collect()
    });
    MhLogRatio { rho, per_coord_terms }
}

/// Acceptance probability `min(1, e^ρ)`; zero for non-finite `ρ`.
#[inline]
pub fn acceptance_prob(rho: f64) -> f64 {
    if rho.is_nan() {
        0.0
    } else if rho >= 0.0 {
        1.0
    } else {
        rho.exp()
    }
}

/// Accept iff `log U < min(0, ρ)`. Returns `(accepted, flagged)`, where
/// `flagged` marks a non-finite `ρ`, which is always rejected.
#[inline]
pub fn accept<R: Rng + ?Sized>(rho: f64, rng: &mut R) -> (bool, bool) {
    if !rho.is_finite() {
        return (false, true);
    }
    let u: f64 = rng.random();
    (u.ln() < rho.min(0.0), false)
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub next: Vec<f64>,
    pub accepted: bool,
    pub rho: f64,
    pub flagged: bool,
}

pub fn mh_step<R: Rng + ?Sized>(prop: &LBProposal, model: &TargetModel, x: &[f64], rng: &mut R) -> Result<StepOutcome> {
    let draw = prop.propose(model, x, rng)?;
    let rho = log_mh_rho(prop, x, &draw, false).rho;
    let (accepted, flagged) = accept(rho, rng);
    Ok(StepOutcome {
        next: if accepted { draw.y } else { x.to_vec() },
        accepted,
        rho,
        flagged,
    })
}

#[derive(Debug, Clone)]
pub struct AdaptState {
    pub log_scale: f64,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub t: usize,
    pub target_acc: f64,
    pub decay: f64,
}

impl AdaptState {
    pub fn new(sigma0: f64, dim: usize, target_acc: f64, decay: f64) -> Result<Self> {
        if !(decay > 0.5 && decay <= 1.0) {
            return Err(invalid(format!("adaptation decay must lie in (0.5, 1], got {decay}")));
        }
        if !(target_acc > 0.0 && target_acc < 1.0) {
            return Err(invalid(format!("target acceptance must lie in (0, 1), got {target_acc}")));
        }
        if !(sigma0 > 0.0 && sigma0.is_finite()) {
            return Err(invalid(format!("initial scale must be positive, got {sigma0}")));
        }
        Ok(AdaptState {
            log_scale: sigma0.ln(),
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            t: 0,
            target_acc,
            decay,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.log_scale.exp()
    }

    /// Preconditioner `d_i = √var_i`, or `None` during the warm start.
    pub fn precond(&self) -> Option<Vec<f64>> {
        (self.t > WARM_START_ITERS).then(|| self.running_var.iter().map(|v| v.sqrt()).collect())
    }

    /// One Robbins–Monro update with acceptance probability `alpha` and the
    /// post-step state `x`. Moments are plain averages during the warm start.
    pub fn update(&mut self, alpha: f64, x: &[f64], precond: &mut [f64]) {
        self.t += 1;
        let t = self.t;
        let gamma = (t as f64).powf(-self.decay);
        self.log_scale = (self.log_scale + gamma * (alpha - self.target_acc)).clamp(LOG_SCALE_RANGE.0, LOG_SCALE_RANGE.1);
        if t <= WARM_START_ITERS {
            let w = 1.0 / t as f64;
            for (i, &xi) in x.iter().enumerate() {
                let delta = xi - self.running_mean[i];
                self.running_mean[i] += w * delta;
                if t == 1 {
                    self.running_var[i] = 0.0;
                } else {
                    self.running_var[i] += w * (delta * (xi - self.running_mean[i]) - self.running_var[i]);
                }
            }
            if t == WARM_START_ITERS {
                for (v, d) in self.running_var.iter_mut().zip(precond.iter_mut()) {
                    *v = v.max(MIN_VARIANCE);
                    *d = v.sqrt();
                }
            }
        } else {
            for (i, &xi) in x.iter().enumerate() {
                let delta = xi - self.running_mean[i];
                self.running_mean[i] += gamma * delta;
                self.running_var[i] = (self.running_var[i] + gamma * (delta * delta - self.running_var[i])).max(MIN_VARIANCE);
                precond[i] = self.running_var[i].sqrt();
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ChainSettings {
    pub n_iters: usize,
    /// Fraction of iterations after which adaptation stops and samples are
    /// kept for diagnostics.
    pub burn_in_fraction: f64,
    pub thin: usize,
    /// Coordinates written to the trace; `None` disables tracing.
    pub trace_coords: Option<Vec<usize>>,
}

impl ChainSettings {
    pub fn new(n_iters: usize) -> Self {
        ChainSettings {
            n_iters,
            burn_in_fraction: 0.5,
            thin: 1,
            trace_coords: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub coords: Vec<f64>,
    pub accepted: bool,
    pub rho: f64,
}

#[derive(Debug, Clone)]
pub struct ChainOutput {
    /// Retained (post burn-in, thinned) states.
    pub samples: Vec<Vec<f64>>,
    /// Mean acceptance probability after burn-in.
    pub acc_rate: f64,
    /// Mean of `(y₁ − x₁)²` times the acceptance indicator after burn-in.
    pub esjd_per_coord: f64,
    /// Per-coordinate effective sample sizes of the retained samples; empty
    /// when fewer than 100 samples are retained.
    pub ess: Vec<f64>,
    pub final_sigma: f64,
    pub final_precond: Option<Vec<f64>>,
    pub flagged: usize,
    pub trace: Vec<TraceRow>,
}

/// Runs `n_iters` Metropolis–Hastings steps from `init`. With `adapt`, the
/// global log-scale and a diagonal preconditioner are tuned until the burn-in
/// point and frozen afterwards.
pub fn run_chain<R: Rng + ?Sized>(
    prop: &LBProposal,
    model: &TargetModel,
    settings: &ChainSettings,
    init: &[f64],
    rng: &mut R,
    mut adapt: Option<AdaptState>,
) -> Result<ChainOutput> {
    let n = model.dim();
    if settings.n_iters == 0 {
        return Err(invalid("chain needs at least one iteration"));
    }
    if init.len() != n {
        return Err(invalid(format!("initial state has length {}, target dimension is {n}", init.len())));
    }
    if settings.thin == 0 || !(0.0..1.0).contains(&settings.burn_in_fraction) {
        return Err(invalid("thin must be positive and burn-in fraction in [0, 1)"));
    }
    let burn_in = (settings.burn_in_fraction * settings.n_iters as f64).floor() as usize;
    let mut sigma = prop.sigma();
    let mut precond: Vec<f64> = prop.precond().map_or_else(|| vec![1.0; n], <[f64]>::to_vec);
    let mut use_precond = prop.precond().is_some();
    if let Some(a) = adapt.as_mut() {
        sigma = a.sigma();
        if a.running_mean.len() != n {
            return Err(invalid("adaptation state dimension mismatch"));
        }
        a.running_mean.copy_from_slice(init);
    }

    let mut x = init.to_vec();
    let mut grad_x = vec![0.0; n];
    let mut log_pi_x = model.log_density_and_grad(&x, &mut grad_x);
    let mut y = vec![0.0; n];
    let mut grad_y = vec![0.0; n];

    let mut samples = Vec::new();
    let mut trace = Vec::new();
    let (mut acc_sum, mut jump_sum, mut flagged) = (0.0, 0.0, 0usize);
    for iter in 0..settings.n_iters {
        let scales = Scales {
            sigma,
            precond: use_precond.then_some(precond.as_slice()),
        };
        let log_pi_y = prop.propose_into(model, &x, &grad_x, scales, rng, &mut y, &mut grad_y)?;
        let rho = log_ratio(prop, scales, &x, &y, &grad_x, &grad_y, log_pi_x, log_pi_y);
        let (accepted, bad) = accept(rho, rng);
        let alpha = acceptance_prob(if bad { f64::NEG_INFINITY } else { rho });
        flagged += bad as usize;
        let jump = y[0] - x[0];
        if accepted {
            std::mem::swap(&mut x, &mut y);
            std::mem::swap(&mut grad_x, &mut grad_y);
            log_pi_x = log_pi_y;
            if let Some((coord, value)) = x.iter().enumerate().find(|(_, v)| !(v.abs() <= DIVERGENCE_BOUND)) {
                return Err(Error::Diverged { iter, coord, value: *value });
            }
        }
        if iter < burn_in {
            if let Some(a) = adapt.as_mut() {
                a.update(alpha, &x, &mut precond);
                sigma = a.sigma();
                use_precond = a.t >= WARM_START_ITERS;
            }
        } else {
            acc_sum += alpha;
            if accepted {
                jump_sum += jump * jump;
            }
            if (iter - burn_in).is_multiple_of(settings.thin) {
                samples.push(x.clone());
            }
        }
        if let Some(coords) = &settings.trace_coords {
            trace.push(TraceRow {
                iter,
                coords: coords.iter().map(|&c| x[c]).collect(),
                accepted,
                rho,
            });
        }
    }
    let kept_iters = (settings.n_iters - burn_in) as f64;
    let ess = if samples.len() >= 100 {
        let mut series = vec![0.0; samples.len()];
        (0..n)
            .map(|i| {
                for (s, row) in series.iter_mut().zip(&samples) {
                    *s = row[i];
                }
                ess(&series)
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    Ok(ChainOutput {
        samples,
        acc_rate: acc_sum / kept_iters,
        esjd_per_coord: jump_sum / kept_iters,
        ess,
        final_sigma: sigma,
        final_precond: use_precond.then_some(precond),
        flagged,
        trace,
    })
}

/// Writes a trace as CSV with header `iter,coord_<i>…,accepted,rho`.
pub fn write_trace_csv(path: &Path, coords: &[usize], rows: &[TraceRow]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut header = vec!["iter".to_string()];
    header.extend(coords.iter().map(|c| format!("coord_{c}")));
    header.push("accepted".into());
    header.push("rho".into());
    writeln!(w, "{}", header.join(","))?;
    for r in rows {
        write!(w, "{}", r.iter)?;
        for v in &r.coords {
            write!(w, ",{v}")?;
        }
        writeln!(w, ",{},{}", r.accepted as u8, r.rho)?;
    }
    w.flush()?;
    Ok(())
}

/// Sample autocorrelations at lags `0..len` via zero-padded FFT.
fn autocorrelation(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let m = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = xs.iter().map(|v| Complex::new(v - mean, 0.0)).collect();
    buf.resize(m, Complex::new(0.0, 0.0));
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(m).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(m).process(&mut buf);
    let c0 = buf[0].re;
    buf[..n].iter().map(|c| c.re / c0).collect()
}

/// Effective sample size by Geyer's initial monotone sequence estimator,
/// capped at the series length. A constant series has ESS 1.
pub fn ess(xs: &[f64]) -> Result<f64> {
    let n = xs.len();
    if n < 100 {
        return Err(invalid(format!("ESS needs at least 100 samples, got {n}")));
    }
    if xs.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite value in ESS input".into()));
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    if !(var > 1e-300 * mean.abs().max(1.0).powi(2)) {
        return Ok(1.0);
    }
    let rho = autocorrelation(xs);
    let mut tau = -1.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = rho[2 * k] + rho[2 * k + 1];
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        tau += 2.0 * pair;
        prev = pair;
        k += 1;
    }
    Ok((n as f64 / tau).min(n as f64))
}
