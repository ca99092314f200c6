//! Settings resolution: command-line flag, then `PATCHGRID_*` environment
//! variable (both handled by clap), then the `--config` file, then the
//! built-in default.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;

pub const DEFAULT_DELTA: f64 = 1.0;
pub const DEFAULT_BITS_PER_AXIS: u32 = 21;
pub const DEFAULT_TAU_PP: f64 = 0.9;
pub const DEFAULT_TAU_PROT: f64 = 0.5;
pub const DEFAULT_MEM_BUDGET: usize = 1 << 22;

const KEYS: [&str; 7] = ["delta", "bits_per_axis", "tau_pp", "tau_prot", "mem_budget", "db", "tmp"];

#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// Flat `key = value` file (keys: delta, bits_per_axis, tau_pp,
    /// tau_prot, mem_budget, db, tmp)
    #[arg(long, env = "PATCHGRID_CONFIG", value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Grid cell edge in Å [default: 1.0]
    #[arg(long, env = "PATCHGRID_DELTA")]
    pub delta: Option<f64>,
    /// Bits per axis of the Morton code [default: 21]
    #[arg(long, env = "PATCHGRID_BITS_PER_AXIS")]
    pub bits_per_axis: Option<u32>,
    /// Protein-patch score threshold [default: 0.9]
    #[arg(long, env = "PATCHGRID_TAU_PP")]
    pub tau_pp: Option<f64>,
    /// Protein-protein identity threshold [default: 0.5]
    #[arg(long, env = "PATCHGRID_TAU_PROT")]
    pub tau_prot: Option<f64>,
    /// Grid entries held in memory before the sorter spills [default: 4194304]
    #[arg(long, env = "PATCHGRID_MEM_BUDGET")]
    pub mem_budget: Option<usize>,
    /// Database directory
    #[arg(long, env = "PATCHGRID_DB", value_name = "DIR")]
    pub db: Option<PathBuf>,
    /// Scratch directory for spills and query grids
    #[arg(long, env = "PATCHGRID_TMP", value_name = "DIR")]
    pub tmp: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub delta: f64,
    pub bits_per_axis: u32,
    pub tau_pp: f64,
    pub tau_prot: f64,
    pub mem_budget: usize,
    pub db: Option<PathBuf>,
    pub tmp: Option<PathBuf>,
    /// Whether delta / bits_per_axis were set anywhere rather than defaulted.
    pub explicit_grid: (bool, bool),
}

impl Config {
    pub fn db(&self) -> Result<&Path, String> {
        self.db
            .as_deref()
            .ok_or_else(|| "no database directory given (use --db or PATCHGRID_DB)".to_string())
    }
}

fn parse_file(path: &Path) -> Result<HashMap<String, String>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("{}:{}: expected key = value", path.display(), i + 1))?;
        let k = k.trim().replace('-', "_");
        if !KEYS.contains(&k.as_str()) {
            return Err(format!("{}:{}: unknown key {k:?}", path.display(), i + 1));
        }
        out.insert(k, v.trim().to_string());
    }
    Ok(out)
}

fn pick<T: FromStr>(flag: Option<T>, file: &HashMap<String, String>, key: &str) -> Result<Option<T>, String> {
    if flag.is_some() {
        return Ok(flag);
    }
    file.get(key)
        .map(|v| v.parse::<T>().map_err(|_| format!("config: bad value for {key}: {v:?}")))
        .transpose()
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<Config, String> {
        let file = match &self.config {
            Some(p) => parse_file(p)?,
            None => HashMap::new(),
        };
        let delta = pick(self.delta, &file, "delta")?;
        let bits = pick(self.bits_per_axis, &file, "bits_per_axis")?;
        let cfg = Config {
            delta: delta.unwrap_or(DEFAULT_DELTA),
            bits_per_axis: bits.unwrap_or(DEFAULT_BITS_PER_AXIS),
            tau_pp: pick(self.tau_pp, &file, "tau_pp")?.unwrap_or(DEFAULT_TAU_PP),
            tau_prot: pick(self.tau_prot, &file, "tau_prot")?.unwrap_or(DEFAULT_TAU_PROT),
            mem_budget: pick(self.mem_budget, &file, "mem_budget")?.unwrap_or(DEFAULT_MEM_BUDGET),
            db: pick(self.db.clone(), &file, "db")?,
            tmp: pick(self.tmp.clone(), &file, "tmp")?,
            explicit_grid: (delta.is_some(), bits.is_some()),
        };
        for (name, v) in [("tau_pp", cfg.tau_pp), ("tau_prot", cfg.tau_prot)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} must be in [0, 1], got {v}"));
            }
        }
        if cfg.mem_budget < 2 {
            return Err("mem_budget must be at least 2".into());
        }
        Ok(cfg)
    }
}
