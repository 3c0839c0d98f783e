//! `lbmh`: command-line driver for the locally-balanced MH experiment harness.
//!
//! Exit codes: 0 on success, 2 for configuration errors (including a missing
//! `--seed`), 3 for numerical failures.

mod config;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use lbmh::asymptotics::{abc_functionals, efficiency_ratio, optimal_ell};
use lbmh::engine::{run_chain, write_trace_csv, DEFAULT_DECAY};
use lbmh::experiments::{
    best_mu4_by_n, clt_check, correlated_scan, esjd_scan, fit_slope, initial_sigma, median_ess_ratio, mu4_sweep,
    poisson_experiment, write_clt_csv, write_poisson_csv, write_scan_csv, write_sweep_csv, PoissonConfig, ScanRow,
    SearchConfig, DEFAULT_ESJD_SAMPLES, DEFAULT_GOLDEN_ITERS,
};
use lbmh::seeds::{derive_seed, label};
use lbmh::{AdaptState, ChainSettings, EfficiencySummary, Error, Preset, Result, TargetFunctionals};

use config::{parse_f64_list, parse_presets, parse_usize_list, resolve_out, FileConfig, TargetArg};

#[derive(Parser, Debug)]
#[command(name = "lbmh", version, about = "Locally-balanced Metropolis-Hastings experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// Target: gaussian, hyperbolic[:d2], gaussian-pair[:a], ar1:rho, equicorrelated:rho, poisson[:sigma_eta]
    #[arg(long, global = true)]
    target: Option<String>,
    /// Comma-separated presets, e.g. mala,barker,three-point(2)
    #[arg(long, global = true)]
    presets: Option<String>,
    /// Comma-separated dimensions
    #[arg(long, global = true)]
    n_grid: Option<String>,
    /// Master seed (required, here or in the config file)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Monte Carlo sample count (ESJD samples, CLT replicates)
    #[arg(long, global = true)]
    samples: Option<usize>,
    /// Worker threads; results do not depend on this
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory (the LBMH_OUT environment variable takes precedence)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// JSON file with default values for any of these flags
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Full-size sample counts (slow)
    #[arg(long, global = true)]
    full: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Asymptotic efficiency of presets on a product target, as JSON
    Design,
    /// Optimally tuned ESJD against dimension
    EsjdScan {
        #[arg(long)]
        golden_iters: Option<usize>,
    },
    /// Law of the log-MH ratio against its Gaussian limit
    CltCheck {
        /// Step-size constant: sigma = ell * n^(-1/6)
        #[arg(long)]
        ell: Option<f64>,
    },
    /// Adaptive chains on the Poisson random-effects posterior
    Poisson {
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        iters: Option<usize>,
        /// Reuse one dataset per scenario instead of redrawing per repetition
        #[arg(long)]
        shared_data: bool,
    },
    /// Optimally tuned ESJD on correlated Gaussian targets
    Correlated {
        #[arg(long)]
        golden_iters: Option<usize>,
    },
    /// Three-point proposals across fourth moments
    Mu4Sweep {
        /// Comma-separated fourth moments, each > 1
        #[arg(long)]
        mu4: Option<String>,
        #[arg(long)]
        golden_iters: Option<usize>,
    },
    /// A single chain with a trace file
    Chain {
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        sigma: Option<f64>,
        /// Robbins-Monro adaptation of the scale and diagonal preconditioner
        #[arg(long)]
        adapt: bool,
    },
}

/// Flags merged over the config file.
struct Run {
    target: Option<TargetArg>,
    presets: Option<Vec<Preset>>,
    n_grid: Option<Vec<usize>>,
    seed: u64,
    samples: Option<usize>,
    out: PathBuf,
    full: bool,
    file: FileConfig,
}

impl Run {
    fn target_or(&self, default: &str) -> Result<TargetArg> {
        match self.target {
            Some(t) => Ok(t),
            None => default.parse(),
        }
    }

    fn presets_or(&self, default: &str) -> Result<Vec<Preset>> {
        match &self.presets {
            Some(p) => Ok(p.clone()),
            None => parse_presets(default),
        }
    }

    fn grid_or(&self, default: &[usize]) -> Vec<usize> {
        self.n_grid.clone().unwrap_or_else(|| default.to_vec())
    }

    fn search(&self, golden_iters: Option<usize>) -> SearchConfig {
        let (samples, iters) = if self.full {
            (DEFAULT_ESJD_SAMPLES, DEFAULT_GOLDEN_ITERS)
        } else {
            (20_000, 20)
        };
        SearchConfig {
            seed: self.seed,
            n_samples: self.samples.unwrap_or(samples),
            golden_iters: golden_iters.or(self.file.golden_iters).unwrap_or(iters),
        }
    }

    fn out_file(&self, name: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out)?;
        Ok(self.out.join(name))
    }
}

fn build_run(common: Common) -> std::result::Result<Run, RunError> {
    let file = match &common.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let Some(seed) = common.seed.or(file.seed) else {
        return Err(RunError::MissingSeed);
    };
    let target = match common.target.as_deref().or(file.target.as_deref()) {
        Some(t) => Some(t.parse()?),
        None => None,
    };
    let presets = match common.presets.as_deref().or(file.presets.as_deref()) {
        Some(p) => Some(parse_presets(p)?),
        None => None,
    };
    let n_grid = match &common.n_grid {
        Some(g) => Some(parse_usize_list(g)?),
        None => file.n_grid.clone(),
    };
    if let Some(t) = common.threads.or(file.threads) {
        if t == 0 {
            return Err(Error::Config("--threads must be positive".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot size the thread pool: {e}")))?;
    }
    Ok(Run {
        target,
        presets,
        n_grid,
        seed,
        samples: common.samples.or(file.samples),
        out: resolve_out(common.out, file.out.clone()),
        full: common.full || file.full.unwrap_or(false),
        file,
    })
}

enum RunError {
    MissingSeed,
    Lib(Error),
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        RunError::Lib(e)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = build_run(cli.common).and_then(|run| dispatch(&cli.command, &run).map_err(RunError::from));
    match result {
        Ok(summary) => {
            // design keeps stdout pure JSON
            if matches!(cli.command, Command::Design) {
                eprintln!("{summary}");
            } else {
                println!("{summary}");
            }
            ExitCode::SUCCESS
        }
        Err(RunError::MissingSeed) => {
            let mut cmd = Cli::command();
            cmd.error(clap::error::ErrorKind::MissingRequiredArgument, "--seed is required (flag or config file)")
                .print()
                .ok();
            ExitCode::from(2)
        }
        Err(RunError::Lib(e)) => {
            eprintln!("error: {e}");
            if e.is_config() || matches!(e, Error::Io(_)) {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}

fn dispatch(cmd: &Command, run: &Run) -> Result<String> {
    match cmd {
        Command::Design => design(run),
        Command::EsjdScan { golden_iters } => scan(run, *golden_iters),
        Command::CltCheck { ell } => clt(run, ell.or(run.file.ell).unwrap_or(1.0)),
        Command::Poisson { reps, iters, shared_data } => poisson(
            run,
            reps.or(run.file.reps),
            iters.or(run.file.iters),
            *shared_data || run.file.shared_data.unwrap_or(false),
        ),
        Command::Correlated { golden_iters } => correlated(run, *golden_iters),
        Command::Mu4Sweep { mu4, golden_iters } => {
            let list = match mu4 {
                Some(s) => parse_f64_list(s)?,
                None => run.file.mu4.clone().unwrap_or_else(|| vec![1.25, 1.5, 2.0, 3.0, 5.0]),
            };
            sweep(run, &list, *golden_iters)
        }
        Command::Chain { iters, sigma, adapt } => chain(
            run,
            iters.or(run.file.iters),
            sigma.or(run.file.sigma),
            *adapt || run.file.adapt.unwrap_or(false),
        ),
    }
}

#[derive(Serialize)]
struct DesignEntry {
    preset: String,
    gfrak: Option<f64>,
    mu4: f64,
    mu6: f64,
    /// `None` when `θ² = 0`, where the step size has no finite optimum at
    /// this order.
    summary: Option<EfficiencySummary>,
}

#[derive(Serialize)]
struct DesignReport {
    target: String,
    functionals: TargetFunctionals,
    designs: Vec<DesignEntry>,
    /// Predicted optimally tuned ESJD ratio, keyed `numerator/denominator`.
    ratios: BTreeMap<String, f64>,
}

fn design(run: &Run) -> Result<String> {
    let target = run.target_or("gaussian")?;
    let factor = target.factor()?;
    let f = abc_functionals(&factor)?;
    let presets = run.presets_or("mala,barker,barker-rademacher,barker-bimodal(0.1)")?;
    let mut designs = Vec::new();
    for p in presets.iter().filter(|p| !p.is_rwm()) {
        let mu = p.noise()?;
        let summary = match optimal_ell(p.theta_sq(&f)?) {
            Ok(s) => Some(s),
            Err(Error::Degenerate(_)) => None,
            Err(e) => return Err(e),
        };
        designs.push(DesignEntry {
            preset: p.to_string(),
            gfrak: p.gfrak(Some(&f))?,
            mu4: mu.mu4(),
            mu6: mu.mu6(),
            summary,
        });
    }
    let mut ratios = BTreeMap::new();
    for a in &designs {
        for b in &designs {
            if let (Some(sa), Some(sb)) = (&a.summary, &b.summary) {
                if a.preset != b.preset {
                    ratios.insert(format!("{}/{}", a.preset, b.preset), efficiency_ratio(sa.theta_sq, sb.theta_sq)?);
                }
            }
        }
    }
    let report = DesignReport {
        target: factor.spec().name(),
        functionals: f,
        designs,
        ratios,
    };
    let json = serde_json::to_string_pretty(&report)?;
    let path = run.out_file("design.json")?;
    std::fs::write(&path, format!("{json}\n"))?;
    println!("{json}");
    let best = report
        .designs
        .iter()
        .filter_map(|d| d.summary.map(|s| (d.preset.as_str(), s.theta_sq)))
        .min_by(|a, b| a.1.total_cmp(&b.1));
    Ok(format!(
        "design: {} presets on {} -> {}{}",
        report.designs.len(),
        report.target,
        path.display(),
        best.map(|(p, t)| format!("; smallest theta^2 {t:.4} ({p})")).unwrap_or_default()
    ))
}

fn slopes(rows: &[ScanRow], presets: &[Preset]) -> String {
    let fitted: Vec<String> = presets
        .iter()
        .filter_map(|p| fit_slope(rows, &p.to_string()).ok().map(|s| format!("{p} {s:.3}")))
        .collect();
    if fitted.is_empty() {
        "n/a (needs at least three dimensions)".into()
    } else {
        fitted.join(", ")
    }
}

fn scan(run: &Run, golden_iters: Option<usize>) -> Result<String> {
    let factor = run.target_or("gaussian")?.factor()?;
    let presets = run.presets_or("mala,barker")?;
    let grid = run.grid_or(&[64, 128, 256, 512, 1024, 2048, 4096]);
    let rows = esjd_scan(&presets, &factor, &grid, &run.search(golden_iters))?;
    let path = run.out_file("scan.csv")?;
    write_scan_csv(&path, &rows)?;
    Ok(format!(
        "esjd-scan: {} rows -> {}; slopes: {}",
        rows.len(),
        path.display(),
        slopes(&rows, &presets)
    ))
}

fn clt(run: &Run, ell: f64) -> Result<String> {
    let factor = run.target_or("gaussian")?.factor()?;
    let presets = run.presets_or("barker")?;
    let [preset] = presets.as_slice() else {
        return Err(Error::Config("clt-check takes exactly one preset".into()));
    };
    let grid = run.grid_or(&[256, 1024, 4096]);
    let samples = run.samples.unwrap_or(if run.full { 100_000 } else { 20_000 });
    let rows = grid
        .iter()
        .map(|&n| clt_check(preset, &factor, n, ell, samples, derive_seed(run.seed, &[label("clt"), n as u64])))
        .collect::<Result<Vec<_>>>()?;
    let path = run.out_file("clt.csv")?;
    write_clt_csv(&path, &rows)?;
    let last = rows.last().expect("non-empty grid");
    Ok(format!(
        "clt-check: {preset}, {} dimensions -> {}; at n={}: var ratio {:.3}, ks {:.4}",
        rows.len(),
        path.display(),
        last.n,
        last.emp_var / last.pred_var,
        last.ks_stat
    ))
}

fn poisson(run: &Run, reps: Option<usize>, iters: Option<usize>, shared: bool) -> Result<String> {
    let mut cfg = PoissonConfig::new(run.seed, run.full);
    if let Some(p) = &run.presets {
        cfg.presets = p.clone();
    }
    if let Some(r) = reps {
        cfg.reps = r;
    }
    if let Some(i) = iters.or(run.samples) {
        cfg.n_iters = i;
    }
    cfg.regenerate_data = !shared;
    let rows = poisson_experiment(&cfg)?;
    let path = run.out_file("poisson.csv")?;
    write_poisson_csv(&path, &rows)?;
    let mut ratios = Vec::new();
    let names: Vec<String> = cfg.presets.iter().map(|p| p.to_string()).collect();
    if names.iter().any(|n| n == "barker") {
        for num in names.iter().filter(|n| *n != "barker") {
            for &sc in &cfg.sigma_etas {
                if let Ok(r) = median_ess_ratio(&rows, sc, num, "barker") {
                    ratios.push(format!("{num}/barker@{sc} {r:.2}"));
                }
            }
        }
    }
    let diverged = rows.iter().filter(|r| r.diverged).count();
    Ok(format!(
        "poisson: {} chains ({diverged} diverged) -> {}; median-ESS ratios: {}",
        rows.len(),
        path.display(),
        if ratios.is_empty() { "n/a".into() } else { ratios.join(", ") }
    ))
}

fn correlated(run: &Run, golden_iters: Option<usize>) -> Result<String> {
    let structure = run.target_or("ar1:0.99")?.structure()?;
    let presets = run.presets_or("mala,barker")?;
    let grid = run.grid_or(&[256, 1024]);
    let rows = correlated_scan(&presets, structure, &grid, &run.search(golden_iters))?;
    let path = run.out_file("correlated.csv")?;
    write_scan_csv(&path, &rows)?;
    Ok(format!(
        "correlated: {} {} rows -> {}; slopes: {}",
        structure.name(),
        rows.len(),
        path.display(),
        slopes(&rows, &presets)
    ))
}

fn sweep(run: &Run, mu4: &[f64], golden_iters: Option<usize>) -> Result<String> {
    let factor = run.target_or("gaussian")?.factor()?;
    let grid = run.grid_or(&[64, 256, 1024]);
    let rows = mu4_sweep(&factor, mu4, &grid, &run.search(golden_iters))?;
    let path = run.out_file("mu4_sweep.csv")?;
    write_sweep_csv(&path, &rows)?;
    let best: Vec<String> = best_mu4_by_n(&rows).iter().map(|(n, m)| format!("n={n}: {m}")).collect();
    Ok(format!("mu4-sweep: {} rows -> {}; best mu4 {}", rows.len(), path.display(), best.join(", ")))
}

fn chain(run: &Run, iters: Option<usize>, sigma: Option<f64>, adapt: bool) -> Result<String> {
    let target = run.target_or("gaussian")?;
    let presets = run.presets_or("mala")?;
    let [preset] = presets.as_slice() else {
        return Err(Error::Config("chain takes exactly one preset".into()));
    };
    let n = run.grid_or(&[100])[0];
    let model = target.model(n, derive_seed(run.seed, &[label("data")]))?;
    let dim = model.dim();
    let functionals = match target {
        TargetArg::Product(_) => Some(abc_functionals(&target.factor()?)?),
        _ => None,
    };
    let sigma = sigma.unwrap_or_else(|| initial_sigma(preset, functionals.as_ref(), dim, 1.0));
    let prop = preset.build(sigma, functionals.as_ref())?;
    let iters = iters.or(run.samples).unwrap_or(10_000);
    let mut settings = ChainSettings::new(iters);
    let coords: Vec<usize> = (0..dim.min(3)).collect();
    settings.trace_coords = Some(coords.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(run.seed, &[label("chain")]));
    let init = model.sample(&mut ChaCha8Rng::seed_from_u64(derive_seed(run.seed, &[label("init")])));
    // targets without an exact sampler start at the origin
    let init = init.unwrap_or_else(|_| vec![0.0; dim]);
    let adapt_state = if adapt {
        Some(AdaptState::new(sigma, dim, preset.target_acceptance(), DEFAULT_DECAY)?)
    } else {
        None
    };
    let out = run_chain(&prop, &model, &settings, &init, &mut rng, adapt_state)?;
    let path = run.out_file("trace.csv")?;
    write_trace_csv(&path, &coords, &out.trace)?;
    let mut ess = out.ess.clone();
    ess.sort_by(f64::total_cmp);
    let median_ess = ess.get(ess.len() / 2).copied().unwrap_or(f64::NAN);
    Ok(format!(
        "chain: {preset}, dim {dim}, {iters} iterations -> {}; acc {:.3}, final sigma {:.4}, median ESS {median_ess:.1}",
        path.display(),
        out.acc_rate,
        out.final_sigma
    ))
}
