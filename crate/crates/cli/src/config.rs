//! Run configuration: command-line flags merged over an optional JSON file.

use std::path::PathBuf;
use std::str::FromStr;

use serde::Deserialize;

use lbmh::presets::parse_preset_list;
use lbmh::targets::{CovSpec, CovStructure, ProductFactor};
use lbmh::{Error, FactorSpec, Preset, Result, TargetModel};

pub const DEFAULT_OUT: &str = "out";
pub const OUT_ENV: &str = "LBMH_OUT";

/// A target named on the command line.
///
/// Syntax: `gaussian`, `hyperbolic[:δ²]`, `gaussian-pair[:offset]`,
/// `ar1:ρ`, `equicorrelated:ρ`, `poisson[:σ_η]`. Dimensions come from the
/// dimension grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TargetArg {
    Product(FactorSpec),
    Correlated(CovStructure),
    Poisson { sigma_eta: f64 },
}

impl FromStr for TargetArg {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => {
                let v = a
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad number in target '{s}'")))?;
                (n.trim(), Some(v))
            }
            None => (s.as_str(), None),
        };
        let need = |what: &str| arg.ok_or_else(|| Error::Config(format!("target '{name}' needs :{what}")));
        Ok(match name {
            "gaussian" => TargetArg::Product(FactorSpec::Gaussian),
            "hyperbolic" => TargetArg::Product(FactorSpec::Hyperbolic {
                delta_sq: arg.unwrap_or(lbmh::targets::DEFAULT_DELTA_SQ),
            }),
            "gaussian-pair" | "gaussian_pair" => TargetArg::Product(FactorSpec::GaussianPair {
                offset: arg.unwrap_or(1.0),
            }),
            "ar1" => TargetArg::Correlated(CovStructure::Ar1(need("rho")?)),
            "equicorrelated" => TargetArg::Correlated(CovStructure::Equicorrelated(need("rho")?)),
            "poisson" => TargetArg::Poisson {
                sigma_eta: arg.unwrap_or(1.0),
            },
            _ => return Err(Error::Config(format!("unknown target '{s}'"))),
        })
    }
}

impl TargetArg {
    pub fn factor(&self) -> Result<ProductFactor> {
        match self {
            TargetArg::Product(spec) => ProductFactor::new(*spec),
            _ => Err(Error::Config("this subcommand needs a product target".into())),
        }
    }

    pub fn structure(&self) -> Result<CovStructure> {
        match self {
            TargetArg::Correlated(s) => Ok(*s),
            _ => Err(Error::Config("this subcommand needs an ar1:rho or equicorrelated:rho target".into())),
        }
    }

    /// A model of dimension `n`; the Poisson target has a fixed dimension
    /// and draws its data from `seed`.
    pub fn model(&self, n: usize, seed: u64) -> Result<TargetModel> {
        match self {
            TargetArg::Product(spec) => TargetModel::product(ProductFactor::new(*spec)?, n),
            TargetArg::Correlated(s) => Ok(TargetModel::correlated_gaussian(CovSpec::new(n, *s)?)),
            TargetArg::Poisson { sigma_eta } => Ok(TargetModel::poisson(lbmh::targets::poisson_generate(seed, *sigma_eta)?)),
        }
    }
}

/// Fields accepted in a `--config` JSON file. All are optional; flags win.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub target: Option<String>,
    pub presets: Option<String>,
    pub n_grid: Option<Vec<usize>>,
    pub seed: Option<u64>,
    pub samples: Option<usize>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub full: Option<bool>,
    pub golden_iters: Option<usize>,
    pub ell: Option<f64>,
    pub mu4: Option<Vec<f64>>,
    pub reps: Option<usize>,
    pub iters: Option<usize>,
    pub sigma: Option<f64>,
    pub adapt: Option<bool>,
    pub shared_data: Option<bool>,
}

impl FileConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("malformed config {}: {e}", path.display())))
    }
}

/// Parses `64,128,256`.
pub fn parse_usize_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad integer '{}' in list '{s}'", v.trim())))
        })
        .collect()
}

pub fn parse_f64_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad number '{}' in list '{s}'", v.trim())))
        })
        .collect()
}

pub fn parse_presets(s: &str) -> Result<Vec<Preset>> {
    parse_preset_list(s)
}

/// `LBMH_OUT` beats `--out`, which beats the config file.
pub fn resolve_out(flag: Option<PathBuf>, file: Option<PathBuf>) -> PathBuf {
    if let Some(env) = std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(env);
    }
    flag.or(file).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}
