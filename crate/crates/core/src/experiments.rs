//! Experiment harness: direct ESJD estimation, step-size search, scaling
//! scans, CLT checks, the Poisson random-effects study and the three-point
//! fourth-moment sweep. Every stochastic quantity is seeded from a master seed
//! through [`derive_seed`], and parallel results are merged in index order, so
//! outputs do not depend on the number of worker threads.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{abc_functionals, optimal_ell, TargetFunctionals};
use crate::engine::{acceptance_prob, log_ratio, run_chain, AdaptState, ChainSettings, DEFAULT_DECAY};
use crate::error::{invalid, Error, Result};
use crate::presets::Preset;
use crate::proposal::LBProposal;
use crate::quadrature::norm_cdf;
use crate::seeds::{derive_seed, label};
use crate::targets::{
    poisson_generate, CovSpec, CovStructure, ProductFactor, TargetModel, POISSON_GROUPS, PRIOR_SD_MU,
};

pub const DEFAULT_ESJD_SAMPLES: usize = 200_000;
pub const DEFAULT_GOLDEN_ITERS: usize = 30;
/// Half-width of the step-size search bracket in `log σ`.
pub const SEARCH_HALF_WIDTH: f64 = 3.0;

const CRN_STREAM: u64 = 0;
const FINAL_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EsjdEstimate {
    /// Mean over samples and coordinates of `(y_i − x_i)² α(x, y)`.
    pub esjd: f64,
    pub std_err: f64,
    pub acc_rate: f64,
    /// Mean squared proposed jump, without the acceptance weight.
    pub jump_sq: f64,
    pub n_samples: usize,
}

struct Workspace {
    x: Vec<f64>,
    gx: Vec<f64>,
    y: Vec<f64>,
    gy: Vec<f64>,
    scratch: Vec<f64>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        Workspace {
            x: vec![0.0; n],
            gx: vec![0.0; n],
            y: vec![0.0; n],
            gy: vec![0.0; n],
            scratch: vec![0.0; n],
        }
    }
}

/// One stationary draw `X ~ π`, one proposal, and `(Y, ρ)`.
fn stationary_step(prop: &LBProposal, model: &TargetModel, seed: u64, j: usize, ws: &mut Workspace) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[j as u64]));
    model.sample_into(&mut rng, &mut ws.x, &mut ws.scratch)?;
    let lx = model.log_density_and_grad(&ws.x, &mut ws.gx);
    let scales = prop.scales();
    let ly = prop.propose_into(model, &ws.x, &ws.gx, scales, &mut rng, &mut ws.y, &mut ws.gy)?;
    Ok(log_ratio(prop, scales, &ws.x, &ws.y, &ws.gx, &ws.gy, lx, ly))
}

/// Unbiased one-step ESJD estimate from independent stationary starts. The
/// jump is averaged over all coordinates, which leaves the expectation
/// unchanged on exchangeable targets and reduces variance. Sample `j` uses
/// the stream `derive_seed(seed, [j])`, so reusing `seed` across step sizes
/// gives common random numbers.
pub fn esjd_direct(prop: &LBProposal, model: &TargetModel, n_samples: usize, seed: u64) -> Result<EsjdEstimate> {
    if n_samples == 0 {
        return Err(invalid("ESJD needs at least one sample"));
    }
    if !model.has_exact_sampler() {
        return Err(Error::NoExactSampler);
    }
    let n = model.dim();
    let per: Vec<(f64, f64, f64)> = (0..n_samples)
        .into_par_iter()
        .map_init(
            || Workspace::new(n),
            |ws, j| {
                let rho = stationary_step(prop, model, seed, j, ws)?;
                let alpha = acceptance_prob(if rho.is_finite() { rho } else { f64::NEG_INFINITY });
                let jump = ws.x.iter().zip(&ws.y).map(|(a, b)| (b - a).powi(2)).sum::<f64>() / n as f64;
                Ok((jump * alpha, alpha, jump))
            },
        )
        .collect::<Result<_>>()?;
    let m = n_samples as f64;
    let esjd = per.iter().map(|p| p.0).sum::<f64>() / m;
    let acc_rate = per.iter().map(|p| p.1).sum::<f64>() / m;
    let jump_sq = per.iter().map(|p| p.2).sum::<f64>() / m;
    let std_err = if n_samples > 1 {
        let var = per.iter().map(|p| (p.0 - esjd).powi(2)).sum::<f64>() / (m - 1.0);
        (var / m).sqrt()
    } else {
        f64::INFINITY
    };
    Ok(EsjdEstimate {
        esjd,
        std_err,
        acc_rate,
        jump_sq,
        n_samples,
    })
}

/// Settings shared by the scan-type experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub seed: u64,
    pub n_samples: usize,
    pub golden_iters: usize,
}

impl SearchConfig {
    pub fn new(seed: u64) -> Self {
        SearchConfig {
            seed,
            n_samples: DEFAULT_ESJD_SAMPLES,
            golden_iters: DEFAULT_GOLDEN_ITERS,
        }
    }
}

/// A preset together with the functionals used to resolve its curvature.
#[derive(Debug, Clone, Copy)]
pub struct Family<'a> {
    pub preset: Preset,
    pub functionals: Option<&'a TargetFunctionals>,
}

impl Family<'_> {
    pub fn build(&self, sigma: f64) -> Result<LBProposal> {
        self.preset.build(sigma, self.functionals)
    }
}

/// Step size suggested by the asymptotic theory, `ℓ* n^{−1/6}`, times
/// `length_scale`. The random walk uses `2.38/√n`. Designs with `θ² = 0`
/// fall back to the Langevin constant.
pub fn initial_sigma(preset: &Preset, functionals: Option<&TargetFunctionals>, n: usize, length_scale: f64) -> f64 {
    let nf = n as f64;
    if preset.is_rwm() {
        return 2.38 / nf.sqrt() * length_scale;
    }
    let gaussian = TargetFunctionals::gaussian();
    let f = functionals.unwrap_or(&gaussian);
    let ell = preset
        .theta_sq(f)
        .and_then(optimal_ell)
        .or_else(|_| Preset::Mala.theta_sq(f).and_then(optimal_ell))
        .map(|s| s.ell_star)
        .unwrap_or(1.0);
    ell * nf.powf(-1.0 / 6.0) * length_scale
}

/// Golden-section maximization on `[lo, hi]`; returns the best point seen.
fn golden_max<F: FnMut(f64) -> Result<f64>>(mut f: F, lo: f64, hi: f64, iters: usize) -> Result<(f64, f64)> {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    let mut best = if fd > fc { (d, fd) } else { (c, fc) };
    for _ in 0..iters {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c)?;
            if fc > best.1 {
                best = (c, fc);
            }
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d)?;
            if fd > best.1 {
                best = (d, fd);
            }
        }
    }
    Ok(best)
}

/// Maximizes ESJD over `log σ ∈ [log σ₀ − 3, log σ₀ + 3]` by golden-section
/// search with common random numbers. An optimum on the bracket edge widens
/// the bracket once around that edge; a second edge hit is an error. The
/// returned estimate is recomputed at the optimum on fresh random numbers.
pub fn optimize_sigma(family: &Family<'_>, model: &TargetModel, sigma0: f64, cfg: &SearchConfig, seed: u64) -> Result<(f64, EsjdEstimate)> {
    if !(sigma0 > 0.0 && sigma0.is_finite()) {
        return Err(invalid(format!("initial step size must be positive, got {sigma0}")));
    }
    let crn = derive_seed(seed, &[CRN_STREAM]);
    let objective = |log_s: f64| -> Result<f64> {
        let prop = family.build(log_s.exp())?;
        Ok(esjd_direct(&prop, model, cfg.n_samples, crn)?.esjd)
    };
    let edge_tol = 1e-2;
    let mut center = sigma0.ln();
    let mut widened = false;
    let log_opt = loop {
        let (lo, hi) = (center - SEARCH_HALF_WIDTH, center + SEARCH_HALF_WIDTH);
        let (x, _) = golden_max(objective, lo, hi, cfg.golden_iters)?;
        let at_edge = x - lo < edge_tol || hi - x < edge_tol;
        if !at_edge {
            break x;
        }
        if widened {
            return Err(Error::NotUnimodal(format!(
                "{}: ESJD maximum at the edge of the widened bracket (sigma = {})",
                family.preset,
                x.exp()
            )));
        }
        log::debug!("{}: optimum at bracket edge, widening", family.preset);
        widened = true;
        center = x;
    };
    let sigma = log_opt.exp();
    let est = esjd_direct(&family.build(sigma)?, model, cfg.n_samples, derive_seed(seed, &[FINAL_STREAM]))?;
    Ok((sigma, est))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub n: usize,
    pub preset: String,
    pub sigma_opt: f64,
    pub esjd: f64,
    pub acc_at_opt: f64,
    pub esjd_scaled: f64,
}

impl ScanRow {
    fn new(n: usize, preset: &Preset, sigma: f64, est: &EsjdEstimate) -> Self {
        ScanRow {
            n,
            preset: preset.to_string(),
            sigma_opt: sigma,
            esjd: est.esjd,
            acc_at_opt: est.acc_rate,
            esjd_scaled: est.esjd * (n as f64).cbrt(),
        }
    }
}

fn check_grid(n_grid: &[usize]) -> Result<()> {
    if n_grid.is_empty() || n_grid.contains(&0) {
        return Err(invalid("dimension grid must be non-empty and positive"));
    }
    if n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("dimension grid must be strictly ascending"));
    }
    Ok(())
}

fn grid_seed(master: u64, tag: &str, preset: &Preset, n: usize) -> u64 {
    derive_seed(master, &[label(tag), label(&preset.to_string()), n as u64])
}

/// Runs `job` over all `(preset, n)` pairs in parallel and returns the rows
/// ordered by preset (as given) and then `n`.
fn run_grid<T: Send, F>(presets: &[Preset], n_grid: &[usize], job: F) -> Result<Vec<T>>
where
    F: Fn(&Preset, usize) -> Result<T> + Sync,
{
    let tasks: Vec<(usize, usize)> = (0..presets.len())
        .flat_map(|p| n_grid.iter().map(move |&n| (p, n)))
        .collect();
    tasks.par_iter().map(|&(p, n)| job(&presets[p], n)).collect()
}

/// Optimally tuned ESJD against dimension on the product target built from
/// `factor`.
pub fn esjd_scan(presets: &[Preset], factor: &ProductFactor, n_grid: &[usize], cfg: &SearchConfig) -> Result<Vec<ScanRow>> {
    check_grid(n_grid)?;
    let f = abc_functionals(factor)?;
    run_grid(presets, n_grid, |preset, n| {
        let model = TargetModel::product(factor.clone(), n)?;
        let family = Family {
            preset: *preset,
            functionals: Some(&f),
        };
        let sigma0 = initial_sigma(preset, Some(&f), n, 1.0);
        let (sigma, est) = optimize_sigma(&family, &model, sigma0, cfg, grid_seed(cfg.seed, "scan", preset, n))?;
        log::info!("scan {preset} n={n}: sigma={sigma:.4} esjd={:.5} acc={:.3}", est.esjd, est.acc_rate);
        Ok(ScanRow::new(n, preset, sigma, &est))
    })
}

/// Least-squares slope of `log esjd` on `log n` for one preset, over the
/// upper half of its dimensions.
pub fn fit_slope(rows: &[ScanRow], preset: &str) -> Result<f64> {
    let mut pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.preset == preset)
        .map(|r| ((r.n as f64).ln(), r.esjd.ln()))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let k = pts.len();
    let pts = &pts[k / 2..];
    if pts.len() < 2 || pts.iter().any(|p| !p.1.is_finite()) {
        return Err(invalid(format!("not enough positive ESJD values to fit a slope for {preset}")));
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

pub fn write_scan_csv(path: &Path, rows: &[ScanRow]) -> Result<()> {
    let mut s = String::from("n,preset,sigma_opt,esjd,acc,esjd_n13\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{},{}", r.n, csv_field(&r.preset), r.sigma_opt, r.esjd, r.acc_at_opt, r.esjd_scaled);
    }
    write_text(path, &s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CltCheck {
    pub ell: f64,
    pub theta_sq: f64,
    pub n: usize,
    pub n_samples: usize,
    pub emp_mean: f64,
    pub emp_var: f64,
    pub pred_mean: f64,
    pub pred_var: f64,
    pub ks_stat: f64,
}

/// Compares the law of the log-MH ratio at `σ = ℓ n^{−1/6}` from stationarity
/// with its limit `N(−½ℓ⁶θ², ℓ⁶θ²)`.
pub fn clt_check(preset: &Preset, factor: &ProductFactor, n: usize, ell: f64, n_samples: usize, seed: u64) -> Result<CltCheck> {
    if n_samples < 2 || !(ell > 0.0) {
        return Err(invalid("CLT check needs ell > 0 and at least two samples"));
    }
    let f = abc_functionals(factor)?;
    let theta_sq = preset.theta_sq(&f)?;
    if theta_sq <= 0.0 {
        return Err(Error::Degenerate(theta_sq));
    }
    let model = TargetModel::product(factor.clone(), n)?;
    let prop = preset.build(ell * (n as f64).powf(-1.0 / 6.0), Some(&f))?;
    let stream = derive_seed(seed, &[label("clt"), label(&preset.to_string()), n as u64]);
    let mut rhos: Vec<f64> = (0..n_samples)
        .into_par_iter()
        .map_init(|| Workspace::new(n), |ws, j| stationary_step(&prop, &model, stream, j, ws))
        .collect::<Result<_>>()?;
    if rhos.iter().any(|r| !r.is_finite()) {
        return Err(Error::Numerical("non-finite log ratio in CLT check".into()));
    }
    let m = n_samples as f64;
    let emp_mean = rhos.iter().sum::<f64>() / m;
    let emp_var = rhos.iter().map(|r| (r - emp_mean).powi(2)).sum::<f64>() / (m - 1.0);
    let pred_var = ell.powi(6) * theta_sq;
    let pred_mean = -0.5 * pred_var;
    rhos.sort_by(f64::total_cmp);
    let sd = pred_var.sqrt();
    let ks_stat = rhos
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            let c = norm_cdf((r - pred_mean) / sd);
            (c - i as f64 / m).abs().max(((i + 1) as f64 / m - c).abs())
        })
        .fold(0.0, f64::max);
    Ok(CltCheck {
        ell,
        theta_sq,
        n,
        n_samples,
        emp_mean,
        emp_var,
        pred_mean,
        pred_var,
        ks_stat,
    })
}

pub fn write_clt_csv(path: &Path, rows: &[CltCheck]) -> Result<()> {
    let mut s = String::from("n,ell,emp_mean,emp_var,pred_mean,pred_var,ks\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{},{},{}", r.n, r.ell, r.emp_mean, r.emp_var, r.pred_mean, r.pred_var, r.ks_stat);
    }
    write_text(path, &s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonConfig {
    pub sigma_etas: Vec<f64>,
    pub presets: Vec<Preset>,
    pub reps: usize,
    pub n_iters: usize,
    /// Draw fresh data for every repetition; otherwise one dataset per
    /// scenario.
    pub regenerate_data: bool,
    pub sigma0: f64,
    pub seed: u64,
}

impl PoissonConfig {
    pub fn new(seed: u64, full: bool) -> Self {
        PoissonConfig {
            sigma_etas: vec![1.0, 3.0],
            presets: vec![Preset::Barker, Preset::BarkerBimodal(0.1), Preset::Mala, Preset::Rwm],
            reps: if full { 100 } else { 20 },
            n_iters: if full { 50_000 } else { 20_000 },
            regenerate_data: true,
            sigma0: 0.1,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonRow {
    pub scenario: f64,
    pub rep: usize,
    pub preset: String,
    pub median_ess: f64,
    pub min_ess: f64,
    pub acc: f64,
    /// The chain left the divergence bound; ESS is recorded as 1.
    pub diverged: bool,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// Adaptive chains on the Poisson random-effects posterior, started from a
/// prior draw; per repetition the median and minimum ESS over parameters.
pub fn poisson_experiment(cfg: &PoissonConfig) -> Result<Vec<PoissonRow>> {
    if cfg.reps == 0 || cfg.presets.is_empty() || cfg.sigma_etas.is_empty() {
        return Err(invalid("Poisson study needs repetitions, presets and scenarios"));
    }
    if cfg.n_iters < 200 {
        return Err(invalid("Poisson study needs at least 200 iterations for ESS"));
    }
    for p in &cfg.presets {
        if matches!(p, Preset::ThreePoint { .. }) {
            return Err(Error::Config(format!("{p} is not supported in the Poisson study")));
        }
    }
    let tasks: Vec<(usize, usize, usize)> = (0..cfg.sigma_etas.len())
        .flat_map(|s| (0..cfg.reps).flat_map(move |r| (0..cfg.presets.len()).map(move |p| (s, r, p))))
        .collect();
    tasks
        .par_iter()
        .map(|&(s, rep, p)| {
            let sigma_eta = cfg.sigma_etas[s];
            let preset = &cfg.presets[p];
            let data_rep = if cfg.regenerate_data { rep as u64 } else { 0 };
            let data = poisson_generate(derive_seed(cfg.seed, &[label("data"), s as u64, data_rep]), sigma_eta)?;
            let model = TargetModel::poisson(data);
            // the same prior draw starts every preset of a repetition
            let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[label("init"), s as u64, rep as u64]));
            let mu: f64 = PRIOR_SD_MU * init_rng.sample::<f64, _>(StandardNormal);
            let init: Vec<f64> = std::iter::once(mu)
                .chain((0..POISSON_GROUPS).map(|_| mu + sigma_eta * init_rng.sample::<f64, _>(StandardNormal)))
                .collect();
            let prop = preset.build(cfg.sigma0, None)?;
            let adapt = AdaptState::new(cfg.sigma0, model.dim(), preset.target_acceptance(), DEFAULT_DECAY)?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                cfg.seed,
                &[label("chain"), s as u64, rep as u64, label(&preset.to_string())],
            ));
            let row = |median_ess, min_ess, acc, diverged| PoissonRow {
                scenario: sigma_eta,
                rep,
                preset: preset.to_string(),
                median_ess,
                min_ess,
                acc,
                diverged,
            };
            match run_chain(&prop, &model, &ChainSettings::new(cfg.n_iters), &init, &mut rng, Some(adapt)) {
                Ok(out) => {
                    let mut ess = out.ess.clone();
                    let min = ess.iter().copied().fold(f64::INFINITY, f64::min);
                    Ok(row(median(&mut ess), min, out.acc_rate, false))
                }
                Err(Error::Diverged { iter, coord, value }) => {
                    log::warn!(
                        "poisson sigma_eta={sigma_eta} rep={rep} {preset}: diverged at iteration {iter} (coordinate {coord} = {value:e})"
                    );
                    Ok(row(1.0, 1.0, 0.0, true))
                }
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// Ratio of the across-repetition medians of `median_ess` for two presets in
/// one scenario.
pub fn median_ess_ratio(rows: &[PoissonRow], scenario: f64, numerator: &str, denominator: &str) -> Result<f64> {
    let pick = |name: &str| {
        let mut v: Vec<f64> = rows
            .iter()
            .filter(|r| r.scenario == scenario && r.preset == name)
            .map(|r| r.median_ess)
            .collect();
        if v.is_empty() {
            Err(invalid(format!("no Poisson rows for {name} in scenario {scenario}")))
        } else {
            Ok(median(&mut v))
        }
    };
    Ok(pick(numerator)? / pick(denominator)?)
}

pub fn write_poisson_csv(path: &Path, rows: &[PoissonRow]) -> Result<()> {
    let mut s = String::from("scenario,rep,preset,median_ess,min_ess,acc\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{},{}", r.scenario, r.rep, csv_field(&r.preset), r.median_ess, r.min_ess, r.acc);
    }
    write_text(path, &s)
}

/// Optimally tuned isotropic proposals on `N(0, Σ)`. The step-size search is
/// centred on the product-target value shrunk by the largest precision
/// diagonal entry.
pub fn correlated_scan(presets: &[Preset], structure: CovStructure, n_grid: &[usize], cfg: &SearchConfig) -> Result<Vec<ScanRow>> {
    check_grid(n_grid)?;
    let f = TargetFunctionals::gaussian();
    run_grid(presets, n_grid, |preset, n| {
        let cov = CovSpec::new(n, structure)?;
        let shrink = 1.0 / cov.max_precision_diag().sqrt();
        let model = TargetModel::correlated_gaussian(cov);
        let family = Family {
            preset: *preset,
            functionals: Some(&f),
        };
        let sigma0 = initial_sigma(preset, Some(&f), n, shrink);
        let tag = format!("correlated-{}", structure.name());
        let (sigma, est) = optimize_sigma(&family, &model, sigma0, cfg, grid_seed(cfg.seed, &tag, preset, n))?;
        log::info!("correlated {} {preset} n={n}: esjd={:.5} acc={:.3}", structure.name(), est.esjd, est.acc_rate);
        Ok(ScanRow::new(n, preset, sigma, &est))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub mu4: f64,
    pub sigma_opt: f64,
    pub esjd: f64,
    pub acc: f64,
}

/// Three-point proposals with the jointly optimal curvature for each `μ₄`.
pub fn mu4_sweep(factor: &ProductFactor, mu4_list: &[f64], n_grid: &[usize], cfg: &SearchConfig) -> Result<Vec<SweepRow>> {
    if mu4_list.is_empty() || mu4_list.iter().any(|m| !(*m > 1.0 && m.is_finite())) {
        return Err(invalid("fourth moments must all exceed 1"));
    }
    let presets: Vec<Preset> = mu4_list.iter().map(|&a| Preset::ThreePoint { a, gfrak: None }).collect();
    let rows = esjd_scan(&presets, factor, n_grid, cfg)?;
    let mut out: Vec<SweepRow> = rows
        .iter()
        .zip(presets.iter().flat_map(|p| n_grid.iter().map(move |_| p)))
        .map(|(r, p)| {
            let Preset::ThreePoint { a, .. } = p else { unreachable!() };
            SweepRow {
                n: r.n,
                mu4: *a,
                sigma_opt: r.sigma_opt,
                esjd: r.esjd,
                acc: r.acc_at_opt,
            }
        })
        .collect();
    out.sort_by(|a, b| a.n.cmp(&b.n).then(a.mu4.total_cmp(&b.mu4)));
    Ok(out)
}

/// Best fourth moment at each dimension of a sweep.
pub fn best_mu4_by_n(rows: &[SweepRow]) -> Vec<(usize, f64)> {
    let mut ns: Vec<usize> = rows.iter().map(|r| r.n).collect();
    ns.dedup();
    ns.into_iter()
        .map(|n| {
            let best = rows
                .iter()
                .filter(|r| r.n == n)
                .max_by(|a, b| a.esjd.total_cmp(&b.esjd))
                .expect("dimension present");
            (n, best.mu4)
        })
        .collect()
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut s = String::from("n,mu4,esjd,acc\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.n, r.mu4, r.esjd, r.acc);
    }
    write_text(path, &s)
}

/// Quotes fields containing commas, such as `three-point(2,0)`.
fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn write_text(path: &Path, s: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(path, s)?;
    Ok(())
}
