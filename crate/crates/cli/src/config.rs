//! Flag/file merging and run identity. Precedence is flag over file over
//! default; the resolved values are what gets hashed, so two runs with
//! the same effective configuration share a config hash no matter how it
//! was spelled.

use std::fs;
use std::path::PathBuf;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::{Failure, Flags, ModeArg, StrategyArg};

/// Scalar-or-list TOML value for sweepable axes.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    fn into_vec(self) -> Vec<f64> {
        match self {
            OneOrMany::One(v) => vec![v],
            OneOrMany::Many(v) => v,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub t: Option<f64>,
    pub g: Option<OneOrMany>,
    pub f: Option<f64>,
    pub d: Option<OneOrMany>,
    pub n: Option<u32>,
    pub k: Option<u32>,
    pub th: Option<u32>,
    pub trials: Option<u32>,
    pub seed: Option<u64>,
    pub strategy: Option<StrategyArg>,
    pub mode: Option<ModeArg>,
    pub randomize_middle: Option<bool>,
    pub dir: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub guards_g: Option<u32>,
    pub phase1_budget_factor: Option<u64>,
}

pub fn load_file(flags: &Flags) -> Result<FileConfig, Failure> {
    let Some(path) = &flags.config else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("config {}: {e}", path.display())))?;
    // toml errors carry line/column positions; pass them through verbatim
    toml::from_str(&text).map_err(|e| Failure::Usage(format!("config {}: {e}", path.display())))
}

/// Pool size request: a number, or derived from (t, g).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NSpec {
    Given(u32),
    Auto,
}

/// Integer grid request for K or Th.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RangeSpec {
    One(u32),
    Span { lo: u32, hi: u32 },
    /// "1..K": full threshold range for whichever K the row uses
    UpToK,
}

pub fn parse_range(s: &str, what: &str) -> Result<RangeSpec, Failure> {
    let bad = || Failure::Usage(format!("{what}: expected an integer or inclusive range like 2..5, got {s:?}"));
    if let Some((lo, hi)) = s.split_once("..") {
        let lo: u32 = lo.trim().parse().map_err(|_| bad())?;
        if hi.trim() == "K" {
            if lo != 1 {
                return Err(Failure::Usage(format!("{what}: the ..K form starts at 1, got {s:?}")));
            }
            return Ok(RangeSpec::UpToK);
        }
        let hi: u32 = hi.trim().parse().map_err(|_| bad())?;
        if lo == 0 || hi < lo {
            return Err(bad());
        }
        Ok(RangeSpec::Span { lo, hi })
    } else {
        let v: u32 = s.trim().parse().map_err(|_| bad())?;
        if v == 0 {
            return Err(bad());
        }
        Ok(RangeSpec::One(v))
    }
}

pub fn parse_float_list(s: &str, what: &str) -> Result<Vec<f64>, Failure> {
    s.split(',')
        .map(|part| {
            part.trim()
                .parse::<f64>()
                .map_err(|_| Failure::Usage(format!("{what}: {part:?} is not a number")))
        })
        .collect()
}

/// Everything a command needs, after merging flags, file, and defaults.
/// `k` and `th` stay as grid requests because their meaning is
/// per-command; `n` stays a request because "auto" resolves differently
/// for tables than for crossover scans.
#[derive(Debug)]
pub struct Settings {
    pub t: f64,
    pub g: Vec<f64>,
    pub f: f64,
    pub d: Vec<f64>,
    pub n: Option<NSpec>,
    pub k: Option<RangeSpec>,
    pub th: Option<RangeSpec>,
    pub trials: u32,
    pub seed: u64,
    pub seed_was_chosen: bool,
    pub strategy: StrategyArg,
    pub mode: ModeArg,
    pub randomize_middle: bool,
    pub dir: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub guards_g: u32,
    pub phase1_budget_factor: u64,
}

/// `default_d` differs per command: sweeps default to the full drop-rate
/// grid, closed-form tables to the pure attack d = 1.
pub fn resolve(flags: &Flags, default_d: &[f64]) -> Result<Settings, Failure> {
    let file = load_file(flags)?;

    let g = match &flags.g {
        Some(s) => parse_float_list(s, "--g")?,
        None => file.g.clone().map(OneOrMany::into_vec).unwrap_or_else(|| vec![1.0 / 3.0]),
    };
    let d = match &flags.d {
        Some(s) => parse_float_list(s, "--d")?,
        None => file.d.clone().map(OneOrMany::into_vec).unwrap_or_else(|| default_d.to_vec()),
    };
    let n = match flags.n.as_deref() {
        Some("auto") => Some(NSpec::Auto),
        Some(s) => Some(NSpec::Given(s.parse().map_err(|_| {
            Failure::Usage(format!("--N: expected an integer or \"auto\", got {s:?}"))
        })?)),
        None => file.n.map(NSpec::Given),
    };
    let k = match flags.k.as_deref() {
        Some(s) => Some(parse_range(s, "--K")?),
        None => file.k.map(RangeSpec::One),
    };
    let th = match flags.th.as_deref() {
        Some(s) => Some(parse_range(s, "--Th")?),
        None => file.th.map(RangeSpec::One),
    };

    let (seed, seed_was_chosen) = match flags.seed.or(file.seed) {
        Some(s) => (s, false),
        None => (rand::random::<u64>(), true),
    };

    Ok(Settings {
        t: flags.t.or(file.t).unwrap_or(0.2),
        g,
        f: flags.f.or(file.f).unwrap_or(0.23),
        d,
        n,
        k,
        th,
        trials: flags.trials.or(file.trials).unwrap_or(1000),
        seed,
        seed_was_chosen,
        strategy: flags.strategy.or(file.strategy).unwrap_or(StrategyArg::Simple),
        mode: flags.mode.or(file.mode).unwrap_or(ModeArg::Match),
        randomize_middle: flags.randomize_middle || file.randomize_middle.unwrap_or(false),
        dir: flags.dir.clone().or(file.dir),
        out: flags.out.clone().or(file.out),
        guards_g: file.guards_g.unwrap_or(3),
        phase1_budget_factor: file.phase1_budget_factor.unwrap_or(1000),
    })
}

impl Settings {
    pub fn scalar_g(&self) -> Result<f64, Failure> {
        match self.g.as_slice() {
            [v] => Ok(*v),
            _ => Err(Failure::Usage("this command takes a single --g value".into())),
        }
    }

    pub fn scalar_d(&self) -> Result<f64, Failure> {
        match self.d.as_slice() {
            [v] => Ok(*v),
            _ => Err(Failure::Usage("this command takes a single --d value".into())),
        }
    }
}

/// Identity of the resolved run: sha256 over the canonical JSON of the
/// effective configuration, seed included.
pub fn config_hash(resolved: &serde_json::Value) -> String {
    let canonical = serde_json::to_string(resolved).expect("json value serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}
