//! Command-line front end.
//!
//! `biphoton <subcommand> [--config <file> | --preset <name>] [--set key=value]... [--out <dir>]`
//!
//! Every run writes its data files plus `manifest.json` into the output
//! directory. A manifest can be passed back as `--config` to replay the run.

mod commands;
pub mod config;
pub mod presets;

use std::ffi::OsString;
use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
pub use config::RunConfig;

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "BIPHOTON_OUT";
const DEFAULT_OUT: &str = "biphoton-out";
const LOCK_FILE: &str = ".lock";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(name = "biphoton", version, about = "Photon-pair source design and simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the dispersion correction to the anchors and write it as a config fragment.
    Calibrate(RunArgs),
    /// Phasematched signal and idler wavelengths over a pump range.
    PmCurve(RunArgs),
    /// Joint spectral amplitude, marginals and Schmidt report.
    Jsa(RunArgs),
    /// Purity over pump bandwidth and waveguide length.
    PurityMap(RunArgs),
    /// Schmidt number with and without the configured filters.
    FilterStudy(RunArgs),
    /// Simulated joint spectral intensity measurements.
    JsiSim(RunArgs),
    /// Predicted g2 for Hermite-Gauss pumps over a bandwidth list.
    G2Table(RunArgs),
    /// Monte-Carlo photon counting estimate of g2.
    G2Mc(RunArgs),
    /// Klyshko efficiency budget, waveguide loss and brightness.
    Budget(RunArgs),
    /// Pump mask sampled at the shaper resolution.
    ShaperMask(RunArgs),
    /// List the shipped presets, or print one.
    Presets { name: Option<String> },
}

#[derive(Debug, Args)]
struct RunArgs {
    /// TOML config file, or a manifest.json from an earlier run.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Shipped preset name.
    #[arg(long)]
    preset: Option<String>,
    /// Override one config key, e.g. `--set source.length_mm=20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory; defaults to $BIPHOTON_OUT, then `output.dir`, then ./biphoton-out.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub name: String,
    pub sha256: String,
}

/// Run record written next to the data files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub config_sha256: String,
    pub seed: u64,
    pub created: String,
    /// Canonical TOML of the resolved config, overrides applied.
    pub config: String,
    pub files: Vec<FileRecord>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Output directory guard; the lock file is removed on drop.
struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    fn acquire(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| {
                if e.kind() == std::io::ErrorKind::AlreadyExists {
                    Error::io(
                        &path,
                        std::io::Error::new(e.kind(), "another run is writing to this directory"),
                    )
                } else {
                    Error::io(&path, e)
                }
            })?;
        Ok(Self { path })
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// Data files written by one subcommand, relative to the output directory.
pub(crate) struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    pub(crate) fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }
}

fn load_base(args: &RunArgs, subcommand: &str) -> Result<toml::Table> {
    let text = match (&args.config, &args.preset) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            if path.extension().is_some_and(|e| e == "json") {
                let manifest: Manifest = serde_json::from_str(&text)
                    .map_err(|e| Error::config("--config", format!("not a manifest: {e}")))?;
                if manifest.subcommand != subcommand {
                    return Err(Error::config(
                        "--config",
                        format!("manifest records `{}`, not `{subcommand}`", manifest.subcommand),
                    ));
                }
                manifest.config
            } else {
                text
            }
        }
        (None, Some(name)) => presets::get(name)
            .ok_or_else(|| Error::config("--preset", format!("unknown preset `{name}`; see `biphoton presets`")))?
            .to_string(),
        (None, None) => String::new(),
    };
    toml::from_str(&text).map_err(|e| Error::config("<config>", e.message().to_string()))
}

fn output_dir(args: &RunArgs, config: &RunConfig) -> PathBuf {
    args.out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .or_else(|| config.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn execute(name: &str, args: &RunArgs) -> Result<()> {
    let mut table = load_base(args, name)?;
    if !args.overrides.is_empty() {
        let resolved = config::from_table(table.clone())?;
        let defaults = toml::Table::try_from(resolved).map_err(|e| Error::config("<config>", e.to_string()))?;
        for o in &args.overrides {
            config::apply_override_over(&mut table, Some(&defaults), o)?;
        }
    }
    let config = config::from_table(table)?;
    config.validate()?;
    let canonical = config.to_toml()?;

    let dir = output_dir(args, &config);
    let _lock = OutputLock::acquire(&dir)?;
    let mut outputs = Outputs {
        dir: dir.clone(),
        files: Vec::new(),
    };
    commands::run(name, &config, &mut outputs)?;

    let mut files = Vec::new();
    for f in &outputs.files {
        let path = dir.join(f);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        files.push(FileRecord {
            name: f.clone(),
            sha256: sha256_hex(&bytes),
        });
    }
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        subcommand: name.into(),
        config_sha256: sha256_hex(canonical.as_bytes()),
        seed: config.measurement.seed,
        created: chrono::Utc::now().to_rfc3339(),
        config: canonical,
        files,
    };
    crate::export::write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    println!("wrote {} files to {}", outputs.files.len() + 1, dir.display());
    Ok(())
}

/// Parses `args` (program name first) and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let (name, args) = match &cli.command {
        Command::Presets { name } => return presets::print(name.as_deref()),
        Command::Calibrate(a) => ("calibrate", a),
        Command::PmCurve(a) => ("pm-curve", a),
        Command::Jsa(a) => ("jsa", a),
        Command::PurityMap(a) => ("purity-map", a),
        Command::FilterStudy(a) => ("filter-study", a),
        Command::JsiSim(a) => ("jsi-sim", a),
        Command::G2Table(a) => ("g2-table", a),
        Command::G2Mc(a) => ("g2-mc", a),
        Command::Budget(a) => ("budget", a),
        Command::ShaperMask(a) => ("shaper-mask", a),
    };
    match execute(name, args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
