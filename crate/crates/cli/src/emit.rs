//! Output plumbing: significant-digit formatting, CSV assembly with the
//! traceability comment block, and the run manifest.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::Failure;

pub const NA: &str = "NA";

/// Six significant digits, plain decimal notation. Undefined values
/// render as the NA marker so every column keeps its width in diffs.
pub fn sig6(x: f64) -> String {
    if !x.is_finite() {
        return NA.to_string();
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let mag = x.abs().log10().floor() as i32;
    let decimals = (5 - mag).max(0) as usize;
    format!("{x:.decimals$}")
}

pub fn opt_sig6(x: Option<f64>) -> String {
    x.map(sig6).unwrap_or_else(|| NA.to_string())
}

/// CSV text: `#` comment lines carrying the tool version, config hash,
/// and seed, then the header, then rows. No quoting; every cell is
/// numeric or a bare marker.
pub fn csv_text(command: &str, hash: &str, seed: u64, header: &str, rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    out.push_str(&format!("# probesim {} {command}\n", env!("CARGO_PKG_VERSION")));
    out.push_str(&format!("# config {hash}\n"));
    out.push_str(&format!("# seed {seed}\n"));
    out.push_str(header);
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

#[derive(Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub command: String,
    pub config_hash: String,
    pub master_seed: u64,
    /// unix seconds; lives only here so CSV bytes stay reproducible
    pub timestamp: u64,
    pub outputs: Vec<String>,
    pub config: serde_json::Value,
}

impl RunManifest {
    pub fn new(command: &str, hash: &str, seed: u64, config: serde_json::Value) -> Self {
        RunManifest {
            tool: format!("probesim {}", env!("CARGO_PKG_VERSION")),
            command: command.to_string(),
            config_hash: hash.to_string(),
            master_seed: seed,
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            outputs: Vec::new(),
            config,
        }
    }
}

/// Writes `files` plus `manifest.json` under `dir`, creating it as
/// needed, and lists the written paths on stdout.
pub fn write_outputs(
    dir: &Path,
    files: &[(String, String)],
    manifest: &mut RunManifest,
) -> Result<(), Failure> {
    fs::create_dir_all(dir)?;
    for (name, content) in files {
        let path = dir.join(name);
        fs::write(&path, content)?;
        manifest.outputs.push(path.display().to_string());
        println!("wrote {}", path.display());
    }
    let path = dir.join("manifest.json");
    let mut json = serde_json::to_string_pretty(manifest)
        .map_err(|e| Failure::Runtime(format!("manifest serialization: {e}")))?;
    json.push('\n');
    fs::write(&path, json)?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Stdout variant for table commands run without --out.
pub fn print_text(text: &str) -> Result<(), Failure> {
    // write_all instead of print! so a closed pipe is an error, not a panic
    std::io::stdout().write_all(text.as_bytes())?;
    Ok(())
}

pub fn announce_seed(settings_seed: u64, was_chosen: bool) {
    if was_chosen {
        println!("seed {settings_seed} (chosen at random; pass --seed to reproduce)");
    }
}

/// Output file path bundle shared by the file-writing commands.
pub fn out_dir_or(settings_out: &Option<PathBuf>, default_name: &str) -> PathBuf {
    settings_out.clone().unwrap_or_else(|| PathBuf::from(default_name))
}
