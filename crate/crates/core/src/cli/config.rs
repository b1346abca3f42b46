//! Run configuration: strict TOML with unit-suffixed keys.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::analysis::{Arm, GridPolicy};
use crate::dispersion::{
    calibrate, CalibrationAnchors, CalibrationSettings, DispersionCorrection, DispersionModel, Sellmeier,
};
use crate::error::{Error, Result};
use crate::jsa::{PhasematchingProfile, PhasematchingSpec, SourceDesign};
use crate::measurement::{DetectionChain, McSettings, TofSpectrometer};
use crate::spectra::{FrequencyGrid, PumpShape, PumpSpectrum, PumpSpectrumSpec, SpectralFilter};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dispersion: DispersionSection,
    pub source: SourceSection,
    pub grid: GridSection,
    pub analysis: AnalysisSection,
    pub measurement: MeasurementSection,
    pub output: OutputSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DispersionSection {
    pub sellmeier: String,
    /// Fit a correction to `anchors` before use. Ignored when `correction` is given.
    pub calibrate: bool,
    pub anchors: CalibrationAnchors,
    pub calibration: CalibrationSettings,
    pub correction: Option<DispersionCorrection>,
}

impl Default for DispersionSection {
    fn default() -> Self {
        Self {
            sellmeier: "kato2002".into(),
            calibrate: true,
            anchors: CalibrationAnchors::default(),
            calibration: CalibrationSettings::default(),
            correction: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceSection {
    pub pump: PumpSpectrumSpec,
    pub length_mm: f64,
    pub phasematching: PhasematchingProfile,
    pub signal_filter: Option<SpectralFilter>,
    pub idler_filter: Option<SpectralFilter>,
}

impl Default for SourceSection {
    fn default() -> Self {
        Self {
            pump: PumpSpectrumSpec {
                shape: PumpShape::Gaussian {
                    center_nm: 670.0,
                    fwhm_nm: 2.0,
                },
                chirp_s2: 0.0,
            },
            length_mm: 16.0,
            phasematching: PhasematchingProfile::Homogeneous,
            signal_filter: None,
            idler_filter: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub signal_window_nm: [f64; 2],
    pub idler_window_nm: [f64; 2],
    pub signal_points: usize,
    pub idler_points: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            signal_window_nm: [1366.0, 1456.0],
            idler_window_nm: [1256.0, 1296.0],
            signal_points: 512,
            idler_points: 512,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub pm_pump_range_nm: [f64; 2],
    pub pm_steps: usize,
    pub bandwidth_range_nm: [f64; 2],
    pub bandwidth_steps: usize,
    pub length_range_mm: [f64; 2],
    pub length_steps: usize,
    pub grid_policy: GridPolicy,
    pub g2_orders: Vec<u32>,
    pub g2_bandwidths_nm: Vec<f64>,
    pub g2_arm: Arm,
    /// Pumps for `jsi-sim`; empty means the source pump.
    pub jsi_pumps: Vec<PumpSpectrumSpec>,
    pub shaper_resolution_nm: f64,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            pm_pump_range_nm: [620.0, 720.0],
            pm_steps: 101,
            bandwidth_range_nm: [0.25, 5.0],
            bandwidth_steps: 25,
            length_range_mm: [2.0, 40.0],
            length_steps: 25,
            grid_policy: GridPolicy::default(),
            g2_orders: vec![0, 1, 2, 3],
            g2_bandwidths_nm: vec![0.5, 1.0, 1.5, 2.0, 2.5, 3.0],
            g2_arm: Arm::Idler,
            jsi_pumps: Vec::new(),
            shaper_resolution_nm: 0.035,
        }
    }
}

/// Raw counts for a Klyshko estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountRates {
    pub singles_signal: f64,
    pub singles_idler: f64,
    pub coincidences: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasurementSection {
    pub seed: u64,
    pub tof: TofSpectrometer,
    /// Signal-arm resolution; defaults to the time-of-flight resolution.
    pub signal_resolution_nm: Option<f64>,
    pub idler_resolution_nm: f64,
    pub events: f64,
    pub pulses: u64,
    pub mean_photons: f64,
    pub monte_carlo: McSettings,
    pub chain: DetectionChain,
    pub klyshko_signal: f64,
    pub klyshko_idler: f64,
    /// When set, the Klyshko efficiencies are computed from these counts.
    pub counts: Option<CountRates>,
    /// Also divide out the fibre coupling in the efficiency budget.
    pub include_fibre_coupling: bool,
    pub pulse_energies_pj: Vec<f64>,
    pub brightness_alpha_per_sqrt_pj: f64,
}

impl Default for MeasurementSection {
    fn default() -> Self {
        Self {
            seed: 1,
            tof: TofSpectrometer::default(),
            signal_resolution_nm: None,
            idler_resolution_nm: 0.2,
            events: 1e6,
            pulses: 1_000_000,
            mean_photons: 1.0,
            monte_carlo: McSettings::default(),
            chain: DetectionChain::default(),
            klyshko_signal: 0.08,
            klyshko_idler: 0.05,
            counts: None,
            include_fibre_coupling: false,
            pulse_energies_pj: vec![37.5],
            brightness_alpha_per_sqrt_pj: 0.28,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
    /// Also write real and imaginary JSA parts.
    pub complex_amplitudes: bool,
}

/// Parses `text` strictly; unknown keys are reported with their full path.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let value: toml::Table = toml::from_str(text).map_err(|e| Error::config("<config>", e.message().to_string()))?;
    from_table(value)
}

pub fn from_table(table: toml::Table) -> Result<RunConfig> {
    serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner().to_string();
        let key = match unknown_field(&inner) {
            Some(field) if path == "." => field.to_string(),
            _ => path,
        };
        Error::config(key, inner.trim().to_string())
    })
}

fn unknown_field(message: &str) -> Option<&str> {
    let rest = message.strip_prefix("unknown field `")?;
    rest.split('`').next()
}

/// Applies a `dotted.key=value` override; the value is parsed as a TOML value, or taken as a string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    apply_override_over(table, None, assignment)
}

/// Like [`apply_override`], but a table missing on the key path is first
/// copied from `defaults`, so `source.pump.fwhm_nm=1.5` keeps the other pump keys.
pub fn apply_override_over(table: &mut toml::Table, defaults: Option<&toml::Table>, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(assignment, "override must look like key=value"))?;
    let key = key.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(key, "empty key segment"));
    }
    let value = match toml::from_str::<toml::Table>(&format!("v = {}", raw.trim())) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    let mut node = table;
    let mut fallback = defaults;
    for part in &parts[..parts.len() - 1] {
        let seed = fallback.and_then(|d| d.get(*part)).and_then(toml::Value::as_table);
        fallback = seed;
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(seed.cloned().unwrap_or_default()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(key, format!("`{part}` is not a table")))?;
    }
    node.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(key, format!("{v} must be a positive number")))
    }
}

fn range(key: &str, r: [f64; 2], steps: usize) -> Result<Vec<f64>> {
    positive(key, r[0])?;
    positive(key, r[1])?;
    if steps == 0 || (steps == 1 && r[0] != r[1]) || r[1] < r[0] {
        return Err(Error::config(key, "range must be increasing with at least two steps"));
    }
    Ok(if steps == 1 {
        vec![r[0]]
    } else {
        crate::units::linspace(r[0], r[1], steps)
    })
}

impl RunConfig {
    /// Cheap checks that name the offending key.
    pub fn validate(&self) -> Result<()> {
        positive("source.length_mm", self.source.length_mm)?;
        positive("analysis.shaper_resolution_nm", self.analysis.shaper_resolution_nm)?;
        positive("measurement.idler_resolution_nm", self.measurement.idler_resolution_nm)?;
        positive("measurement.events", self.measurement.events)?;
        positive("measurement.mean_photons", self.measurement.mean_photons)?;
        positive("measurement.brightness_alpha_per_sqrt_pj", self.measurement.brightness_alpha_per_sqrt_pj)?;
        if let Some(r) = self.measurement.signal_resolution_nm {
            positive("measurement.signal_resolution_nm", r)?;
        }
        for (key, w) in [
            ("grid.signal_window_nm", self.grid.signal_window_nm),
            ("grid.idler_window_nm", self.grid.idler_window_nm),
        ] {
            if !(w[0] > 0.0 && w[1] > w[0]) {
                return Err(Error::config(key, "window must be [low, high] with 0 < low < high"));
            }
        }
        self.bandwidths()?;
        self.lengths()?;
        if self.analysis.pm_steps < 2 {
            return Err(Error::config("analysis.pm_steps", "need at least 2 steps"));
        }
        for (i, b) in self.analysis.g2_bandwidths_nm.iter().enumerate() {
            positive(&format!("analysis.g2_bandwidths_nm[{i}]"), *b)?;
        }
        if self.analysis.g2_orders.iter().any(|&o| o > 3) {
            return Err(Error::config("analysis.g2_orders", "orders must lie in 0..=3"));
        }
        self.measurement
            .chain
            .validate()
            .map_err(|e| Error::config("measurement.chain", e.to_string()))?;
        if let Some(p) = &self.source.signal_filter {
            p.validate().map_err(|e| Error::config("source.signal_filter", e.to_string()))?;
        }
        if let Some(p) = &self.source.idler_filter {
            p.validate().map_err(|e| Error::config("source.idler_filter", e.to_string()))?;
        }
        Ok(())
    }

    pub fn bandwidths(&self) -> Result<Vec<f64>> {
        range(
            "analysis.bandwidth_range_nm",
            self.analysis.bandwidth_range_nm,
            self.analysis.bandwidth_steps,
        )
    }

    pub fn lengths(&self) -> Result<Vec<f64>> {
        range("analysis.length_range_mm", self.analysis.length_range_mm, self.analysis.length_steps)
    }

    fn sellmeier_pair(&self) -> Result<(Sellmeier, Sellmeier)> {
        Sellmeier::pair_by_name(&self.dispersion.sellmeier)
            .ok_or_else(|| Error::config("dispersion.sellmeier", format!("unknown set `{}`", self.dispersion.sellmeier)))
    }

    /// Bulk model with the configured Sellmeier set and no correction.
    pub fn bulk_model(&self) -> Result<DispersionModel> {
        let (te, tm) = self.sellmeier_pair()?;
        DispersionModel::new(te, tm, DispersionCorrection::default())
    }

    /// Model used by every subcommand: explicit correction, calibrated, or bulk.
    pub fn model(&self) -> Result<DispersionModel> {
        let bulk = self.bulk_model()?;
        if let Some(c) = self.dispersion.correction {
            return bulk.with_correction(c);
        }
        if self.dispersion.calibrate {
            return Ok(calibrate(&bulk, &self.dispersion.anchors, &self.dispersion.calibration)?.model);
        }
        Ok(bulk)
    }

    pub fn pump(&self) -> Result<PumpSpectrum> {
        PumpSpectrum::try_from(self.source.pump.clone()).map_err(|e| Error::config("source.pump", e.to_string()))
    }

    pub fn phasematching(&self) -> Result<PhasematchingSpec> {
        let spec = PhasematchingSpec {
            length_m: self.source.length_mm * 1e-3,
            profile: self.source.phasematching.clone(),
        };
        spec.validate()
            .map_err(|e| Error::config("source.phasematching", e.to_string()))?;
        Ok(spec)
    }

    pub fn grid(&self) -> Result<FrequencyGrid> {
        let g = &self.grid;
        FrequencyGrid::from_windows(
            (g.signal_window_nm[0], g.signal_window_nm[1]),
            g.signal_points,
            (g.idler_window_nm[0], g.idler_window_nm[1]),
            g.idler_points,
        )
        .map_err(|e| Error::config("grid", e.to_string()))
    }

    pub fn design_with(&self, model: DispersionModel) -> Result<SourceDesign> {
        Ok(SourceDesign {
            model,
            pump: self.pump()?,
            phasematching: self.phasematching()?,
            grid: self.grid()?,
            signal_filter: self.source.signal_filter.clone(),
            idler_filter: self.source.idler_filter.clone(),
        })
    }

    /// Canonical TOML text; the manifest stores and hashes this.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("<config>", e.to_string()))
    }
}
