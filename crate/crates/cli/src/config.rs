use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use calibnet::PipelineConfig;
use clap::Args;

use crate::error::CliError;

pub const SEED_ENV: &str = "CALIB_SEED";

/// Network size and threshold overrides.
#[derive(Args, Clone, Debug, Default)]
pub struct NetArgs {
    /// Number of instance kernels N.
    #[arg(long)]
    pub n_kernels: Option<usize>,
    /// Feature channels c.
    #[arg(long)]
    pub channels: Option<usize>,
    /// Group-norm groups (defaults to a divisor of the channel count).
    #[arg(long)]
    pub groups: Option<usize>,
    #[arg(long)]
    pub score_threshold: Option<f64>,
    #[arg(long)]
    pub mask_threshold: Option<f64>,
}

/// Reads a `key = value` file; blank lines and `#` comments are ignored.
pub fn read_kv(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    parse_kv(&text).map_err(|m| CliError::Usage(format!("{}: {m}", path.display())))
}

pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| format!("line {}: expected key=value", i + 1))?;
        out.insert(k.trim().replace('-', "_"), v.trim().to_string());
    }
    Ok(out)
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.parse().map_err(|_| CliError::Usage(format!("config: bad value `{v}` for {key}")))
}

/// `CALIB_SEED`, or 0 when unset.
pub fn env_seed() -> Result<u64, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| CliError::Usage(format!("{SEED_ENV}: bad seed `{v}`"))),
        Err(_) => Ok(0),
    }
}

/// Everything a run depends on, resolved from flags, the config file and the environment.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub seed: u64,
    pub pipeline: PipelineConfig,
}

impl RunConfig {
    /// Precedence: flag, then config file, then `CALIB_SEED` (seed only), then defaults.
    pub fn resolve(seed: Option<u64>, config: Option<&PathBuf>, net: &NetArgs) -> Result<Self, CliError> {
        let kv = match config {
            Some(p) => read_kv(p)?,
            None => BTreeMap::new(),
        };
        for key in kv.keys() {
            if !["seed", "n_kernels", "channels", "groups", "score_threshold", "mask_threshold"].contains(&key.as_str()) {
                return Err(CliError::Usage(format!("config: unknown key `{key}`")));
            }
        }
        let seed = match seed {
            Some(s) => s,
            None => match kv.get("seed") {
                Some(v) => parse("seed", v)?,
                None => env_seed()?,
            },
        };
        let get = |flag: Option<usize>, key: &str| -> Result<Option<usize>, CliError> {
            match flag {
                Some(v) => Ok(Some(v)),
                None => kv.get(key).map(|v| parse(key, v)).transpose(),
            }
        };
        let getf = |flag: Option<f64>, key: &str| -> Result<Option<f64>, CliError> {
            match flag {
                Some(v) => Ok(Some(v)),
                None => kv.get(key).map(|v| parse(key, v)).transpose(),
            }
        };
        let base = PipelineConfig::default();
        let n = get(net.n_kernels, "n_kernels")?.unwrap_or(base.n_kernels);
        let c = get(net.channels, "channels")?.unwrap_or(base.channels);
        let mut pipeline = PipelineConfig::with_size(n, c);
        if let Some(g) = get(net.groups, "groups")? {
            pipeline.groups = g;
        }
        if let Some(t) = getf(net.score_threshold, "score_threshold")? {
            pipeline.score_threshold = t;
        }
        if let Some(t) = getf(net.mask_threshold, "mask_threshold")? {
            pipeline.mask_threshold = t;
        }
        pipeline.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(Self { seed, pipeline })
    }
}
