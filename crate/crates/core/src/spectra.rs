//! Frequency grids, pump spectral amplitudes and bandpass filters.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::{bandwidth_nm_to_omega, linspace, nm_from_omega, omega_from_nm};

/// Smallest allowed axis length.
pub const MIN_AXIS_POINTS: usize = 16;
/// Relative intensity below which the pump counts as zero.
pub const SUPPORT_THRESHOLD: f64 = 1e-6;

/// Signal × idler angular-frequency grid, both axes uniform and increasing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    signal: Vec<f64>,
    idler: Vec<f64>,
}

impl FrequencyGrid {
    /// Axes uniform in ω spanning the given wavelength windows.
    pub fn from_windows(
        signal_nm: (f64, f64),
        signal_points: usize,
        idler_nm: (f64, f64),
        idler_points: usize,
    ) -> Result<Self> {
        let axis = |name: &'static str, (lo, hi): (f64, f64), n: usize| -> Result<Vec<f64>> {
            if !(lo > 0.0 && hi > lo && hi.is_finite()) {
                return Err(Error::invalid(name, format!("window {lo}..{hi} nm")));
            }
            Ok(linspace(omega_from_nm(hi), omega_from_nm(lo), n))
        };
        Self::from_axes(
            axis("signal window", signal_nm, signal_points)?,
            axis("idler window", idler_nm, idler_points)?,
        )
    }

    /// Default 512 × 512 grid around the star point, signal 1366–1456 nm, idler 1256–1296 nm.
    pub fn star_point_default() -> Self {
        Self::from_windows((1366.0, 1456.0), 512, (1256.0, 1296.0), 512)
            .expect("default grid is valid")
    }

    pub fn from_axes(signal: Vec<f64>, idler: Vec<f64>) -> Result<Self> {
        for (name, axis) in [("signal axis", &signal), ("idler axis", &idler)] {
            if axis.len() < MIN_AXIS_POINTS {
                return Err(Error::invalid(
                    name,
                    format!("{} points, need at least {MIN_AXIS_POINTS}", axis.len()),
                ));
            }
            if axis.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
                return Err(Error::invalid(name, "non-positive or non-finite frequency"));
            }
            if axis.windows(2).any(|p| !(p[1] > p[0])) {
                return Err(Error::invalid(name, "frequencies must be strictly increasing"));
            }
            let step = (axis[axis.len() - 1] - axis[0]) / (axis.len() - 1) as f64;
            if axis.windows(2).any(|p| ((p[1] - p[0]) / step - 1.0).abs() > 1e-6) {
                return Err(Error::invalid(name, "frequencies must be uniformly spaced"));
            }
        }
        Ok(Self { signal, idler })
    }

    pub fn signal(&self) -> &[f64] {
        &self.signal
    }

    pub fn idler(&self) -> &[f64] {
        &self.idler
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.signal.len(), self.idler.len())
    }

    pub fn signal_step(&self) -> f64 {
        step(&self.signal)
    }

    pub fn idler_step(&self) -> f64 {
        step(&self.idler)
    }

    pub fn signal_nm(&self) -> Vec<f64> {
        self.signal.iter().map(|&w| nm_from_omega(w)).collect()
    }

    pub fn idler_nm(&self) -> Vec<f64> {
        self.idler.iter().map(|&w| nm_from_omega(w)).collect()
    }

    /// Wavelength span `(min, max)` of the signal axis.
    pub fn signal_window_nm(&self) -> (f64, f64) {
        window_nm(&self.signal)
    }

    pub fn idler_window_nm(&self) -> (f64, f64) {
        window_nm(&self.idler)
    }

    /// Midpoint of the signal wavelength window.
    pub fn signal_center_nm(&self) -> f64 {
        let (a, b) = self.signal_window_nm();
        0.5 * (a + b)
    }

    pub fn idler_center_nm(&self) -> f64 {
        let (a, b) = self.idler_window_nm();
        0.5 * (a + b)
    }

    /// Grid with both axes reversed in order is not allowed; this swaps the roles of signal and idler.
    pub fn transposed(&self) -> Self {
        Self {
            signal: self.idler.clone(),
            idler: self.signal.clone(),
        }
    }
}

fn step(axis: &[f64]) -> f64 {
    (axis[axis.len() - 1] - axis[0]) / (axis.len() - 1) as f64
}

fn window_nm(axis: &[f64]) -> (f64, f64) {
    (nm_from_omega(axis[axis.len() - 1]), nm_from_omega(axis[0]))
}

/// Pump pulse shapes available from the shaper.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PumpShape {
    /// Intensity FWHM in wavelength.
    Gaussian { center_nm: f64, fwhm_nm: f64 },
    /// Hermite-Gauss mode; `fwhm_nm` refers to the underlying Gaussian.
    HermiteGauss { order: u32, center_nm: f64, fwhm_nm: f64 },
    /// `count` flat-top bins placed symmetrically about the center.
    FrequencyBins {
        count: usize,
        center_nm: f64,
        spacing_nm: f64,
        width_nm: f64,
    },
}

impl PumpShape {
    pub fn center_nm(&self) -> f64 {
        match *self {
            PumpShape::Gaussian { center_nm, .. }
            | PumpShape::HermiteGauss { center_nm, .. }
            | PumpShape::FrequencyBins { center_nm, .. } => center_nm,
        }
    }

    /// Copy with the bandwidth parameter replaced (FWHM, or bin width and spacing scaled together).
    pub fn with_bandwidth_nm(&self, width_nm: f64) -> Self {
        match *self {
            PumpShape::Gaussian { center_nm, .. } => PumpShape::Gaussian {
                center_nm,
                fwhm_nm: width_nm,
            },
            PumpShape::HermiteGauss { order, center_nm, .. } => PumpShape::HermiteGauss {
                order,
                center_nm,
                fwhm_nm: width_nm,
            },
            PumpShape::FrequencyBins {
                count,
                center_nm,
                spacing_nm,
                width_nm: w,
            } => PumpShape::FrequencyBins {
                count,
                center_nm,
                spacing_nm: spacing_nm * width_nm / w,
                width_nm,
            },
        }
    }
}

/// Unit-normalized pump amplitude `α(ω)` with optional quadratic spectral phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PumpSpectrumSpec", into = "PumpSpectrumSpec")]
pub struct PumpSpectrum {
    shape: PumpShape,
    chirp_s2: f64,
    omega0: f64,
    /// Gaussian σ, or the bin width, in rad/s.
    width: f64,
    /// Bin spacing in rad/s.
    spacing: f64,
    norm: f64,
}

/// Serialized form of [`PumpSpectrum`]. Unknown keys are rejected by the shape variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PumpSpectrumSpec {
    #[serde(flatten)]
    pub shape: PumpShape,
    #[serde(default)]
    pub chirp_s2: f64,
}

impl TryFrom<PumpSpectrumSpec> for PumpSpectrum {
    type Error = Error;
    fn try_from(spec: PumpSpectrumSpec) -> Result<Self> {
        PumpSpectrum::new(spec.shape, spec.chirp_s2)
    }
}

impl From<PumpSpectrum> for PumpSpectrumSpec {
    fn from(p: PumpSpectrum) -> Self {
        Self {
            shape: p.shape,
            chirp_s2: p.chirp_s2,
        }
    }
}

impl PumpSpectrum {
    pub fn new(shape: PumpShape, chirp_s2: f64) -> Result<Self> {
        if !chirp_s2.is_finite() {
            return Err(Error::invalid("pump chirp", "non-finite"));
        }
        let center_nm = shape.center_nm();
        if !(center_nm.is_finite() && center_nm > 0.0) {
            return Err(Error::invalid("pump center", format!("{center_nm} nm")));
        }
        let omega0 = omega_from_nm(center_nm);
        let sqrt_pi = std::f64::consts::PI.sqrt();
        let (width, spacing, norm) = match shape {
            PumpShape::Gaussian { fwhm_nm, .. } | PumpShape::HermiteGauss { fwhm_nm, .. } => {
                if !(fwhm_nm.is_finite() && fwhm_nm > 0.0) {
                    return Err(Error::invalid("pump FWHM", format!("{fwhm_nm} nm must be > 0")));
                }
                let order = match shape {
                    PumpShape::HermiteGauss { order, .. } => order,
                    _ => 0,
                };
                if order > 3 {
                    return Err(Error::invalid("Hermite-Gauss order", format!("{order} not in 0..=3")));
                }
                let sigma = bandwidth_nm_to_omega(fwhm_nm, center_nm) / (2.0 * 2f64.ln().sqrt());
                let factorial: f64 = (1..=order).map(f64::from).product();
                let norm = 1.0 / (sigma * 2f64.powi(order as i32) * factorial * sqrt_pi).sqrt();
                (sigma, 0.0, norm)
            }
            PumpShape::FrequencyBins {
                count,
                spacing_nm,
                width_nm,
                ..
            } => {
                if count == 0 {
                    return Err(Error::invalid("frequency bins", "count must be ≥ 1"));
                }
                if !(width_nm > 0.0 && width_nm.is_finite()) {
                    return Err(Error::invalid("frequency bins", format!("width {width_nm} nm must be > 0")));
                }
                if count > 1 && !(width_nm < spacing_nm) {
                    return Err(Error::invalid(
                        "frequency bins",
                        format!("width {width_nm} nm must be below spacing {spacing_nm} nm"),
                    ));
                }
                let w = bandwidth_nm_to_omega(width_nm, center_nm);
                let s = bandwidth_nm_to_omega(spacing_nm.max(0.0), center_nm);
                (w, s, 1.0 / (count as f64 * w).sqrt())
            }
        };
        Ok(Self {
            shape,
            chirp_s2,
            omega0,
            width,
            spacing,
            norm,
        })
    }

    pub fn gaussian(center_nm: f64, fwhm_nm: f64) -> Result<Self> {
        Self::new(PumpShape::Gaussian { center_nm, fwhm_nm }, 0.0)
    }

    pub fn hermite_gauss(order: u32, center_nm: f64, fwhm_nm: f64) -> Result<Self> {
        Self::new(
            PumpShape::HermiteGauss {
                order,
                center_nm,
                fwhm_nm,
            },
            0.0,
        )
    }

    pub fn frequency_bins(count: usize, center_nm: f64, spacing_nm: f64, width_nm: f64) -> Result<Self> {
        Self::new(
            PumpShape::FrequencyBins {
                count,
                center_nm,
                spacing_nm,
                width_nm,
            },
            0.0,
        )
    }

    /// Five 0.5 nm bins on a 1.0 nm pitch at 670 nm.
    pub fn default_bins() -> Self {
        Self::frequency_bins(5, 670.0, 1.0, 0.5).expect("default bins are valid")
    }

    pub fn with_chirp(mut self, chirp_s2: f64) -> Self {
        self.chirp_s2 = chirp_s2;
        self
    }

    pub fn shape(&self) -> &PumpShape {
        &self.shape
    }

    pub fn chirp_s2(&self) -> f64 {
        self.chirp_s2
    }

    pub fn center_omega(&self) -> f64 {
        self.omega0
    }

    /// Gaussian σ in rad/s (intensity `exp(−Δω²/σ²)`); `None` for bins.
    pub fn sigma(&self) -> Option<f64> {
        match self.shape {
            PumpShape::FrequencyBins { .. } => None,
            _ => Some(self.width),
        }
    }

    fn bin_centers(&self, count: usize) -> impl Iterator<Item = f64> + '_ {
        let mid = (count as f64 - 1.0) / 2.0;
        (0..count).map(move |k| self.omega0 + (k as f64 - mid) * self.spacing)
    }

    fn real_amplitude(&self, omega: f64) -> f64 {
        let d = omega - self.omega0;
        match self.shape {
            PumpShape::Gaussian { .. } => self.norm * (-0.5 * (d / self.width).powi(2)).exp(),
            PumpShape::HermiteGauss { order, .. } => {
                let x = d / self.width;
                self.norm * hermite(order, x) * (-0.5 * x * x).exp()
            }
            PumpShape::FrequencyBins { count, .. } => {
                let half = 0.5 * self.width;
                if self.bin_centers(count).any(|c| (omega - c).abs() <= half) {
                    self.norm
                } else {
                    0.0
                }
            }
        }
    }

    /// `α(ω)` in 1/√(rad/s).
    pub fn amplitude(&self, omega: f64) -> Complex64 {
        let a = self.real_amplitude(omega);
        if self.chirp_s2 == 0.0 || a == 0.0 {
            Complex64::new(a, 0.0)
        } else {
            let d = omega - self.omega0;
            Complex64::from_polar(a, 0.5 * self.chirp_s2 * d * d)
        }
    }

    pub fn intensity(&self, omega: f64) -> f64 {
        self.real_amplitude(omega).powi(2)
    }

    /// Frequency interval outside which `|α|²` stays below 10⁻⁶ of its peak.
    pub fn support_omega(&self) -> (f64, f64) {
        match self.shape {
            PumpShape::FrequencyBins { count, .. } => {
                let half_span = 0.5 * (count as f64 - 1.0) * self.spacing + 0.5 * self.width;
                (self.omega0 - half_span, self.omega0 + half_span)
            }
            PumpShape::Gaussian { .. } => {
                let r = self.width * (1.0 / SUPPORT_THRESHOLD).ln().sqrt();
                (self.omega0 - r, self.omega0 + r)
            }
            PumpShape::HermiteGauss { .. } => {
                // |H_n(x)|² e^{−x²} is far below threshold beyond |x| = 8 for n ≤ 3.
                let scan = linspace(-8.0, 8.0, 16001);
                let values: Vec<f64> = scan
                    .iter()
                    .map(|&x| self.intensity(self.omega0 + x * self.width))
                    .collect();
                let peak = values.iter().cloned().fold(0.0, f64::max);
                let level = SUPPORT_THRESHOLD * peak;
                let last = values.iter().rposition(|&v| v >= level).unwrap_or(scan.len() - 1);
                let f = |x: f64| self.intensity(self.omega0 + x * self.width) - level;
                // outer crossing between scan[last] (above) and scan[last + 1] (below)
                let (mut a, mut b) = (scan[last], scan[(last + 1).min(scan.len() - 1)]);
                for _ in 0..60 {
                    let m = 0.5 * (a + b);
                    if f(m) >= 0.0 {
                        a = m;
                    } else {
                        b = m;
                    }
                }
                let r = 0.5 * (a + b) * self.width;
                (self.omega0 - r, self.omega0 + r)
            }
        }
    }

    /// Characteristic spectral width in rad/s: intensity FWHM for Gaussian
    /// shapes, outer extent of the occupied bins otherwise.
    pub fn bandwidth_omega(&self) -> f64 {
        match self.shape {
            PumpShape::FrequencyBins { count, .. } => (count as f64 - 1.0) * self.spacing + self.width,
            _ => 2.0 * 2f64.ln().sqrt() * self.width,
        }
    }
}

/// Free-function form of [`PumpSpectrum::amplitude`].
pub fn pump_amplitude(spec: &PumpSpectrum, omega: f64) -> Complex64 {
    spec.amplitude(omega)
}

/// Physicists' Hermite polynomial `H_n(x)`.
pub fn hermite(n: u32, x: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, 2.0 * x);
    if n == 0 {
        return prev;
    }
    for k in 1..n {
        let next = 2.0 * x * cur - 2.0 * f64::from(k) * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// Pump mask sampled at the shaper resolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShaperMask {
    pub resolution_nm: f64,
    pub wavelength_nm: Vec<f64>,
    /// Amplitude relative to the largest sample.
    pub amplitude: Vec<f64>,
    pub phase_rad: Vec<f64>,
    /// `|⟨α, α_sampled⟩|²` for the nearest-neighbour reconstruction.
    pub fidelity: f64,
}

/// Samples `spec` at `resolution_nm` spacing across its support.
pub fn discretize_to_shaper(spec: &PumpSpectrum, resolution_nm: f64) -> Result<ShaperMask> {
    if !(resolution_nm > 0.0 && resolution_nm.is_finite()) {
        return Err(Error::invalid("shaper resolution", format!("{resolution_nm} nm must be > 0")));
    }
    let (w_lo, w_hi) = spec.support_omega();
    let (lam_lo, lam_hi) = (nm_from_omega(w_hi), nm_from_omega(w_lo));
    let support = lam_hi - lam_lo;
    if support < 4.0 * resolution_nm {
        return Err(Error::invalid(
            "pump spectrum",
            format!(
                "support {support:.4} nm spans fewer than 4 shaper pixels of {resolution_nm} nm; use a broader shape"
            ),
        ));
    }
    let n = (support / resolution_nm).ceil() as usize;
    let wavelength_nm: Vec<f64> = (0..n).map(|k| lam_lo + (k as f64 + 0.5) * resolution_nm).collect();
    let samples: Vec<Complex64> = wavelength_nm.iter().map(|&l| spec.amplitude(omega_from_nm(l))).collect();
    let peak = samples.iter().map(|a| a.norm()).fold(0.0, f64::max);
    if peak == 0.0 {
        return Err(Error::DegenerateState("pump mask samples are all zero".into()));
    }
    let amplitude = samples.iter().map(|a| a.norm() / peak).collect();
    let phase_rad = samples.iter().map(|a| a.arg()).collect();

    // Overlap of the staircase with the ideal shape on a fine ω grid.
    let fine = linspace(omega_from_nm(lam_lo + n as f64 * resolution_nm), omega_from_nm(lam_lo), 32 * n + 1);
    let (mut overlap, mut ideal, mut sampled) = (Complex64::new(0.0, 0.0), 0.0, 0.0);
    for &w in &fine {
        let a = spec.amplitude(w);
        let k = ((nm_from_omega(w) - lam_lo) / resolution_nm).floor();
        let s = if k >= 0.0 && (k as usize) < n {
            samples[k as usize]
        } else {
            Complex64::new(0.0, 0.0)
        };
        overlap += a.conj() * s;
        ideal += a.norm_sqr();
        sampled += s.norm_sqr();
    }
    let fidelity = overlap.norm_sqr() / (ideal * sampled);

    Ok(ShaperMask {
        resolution_nm,
        wavelength_nm,
        amplitude,
        phase_rad,
        fidelity,
    })
}

/// Bandpass filter in one arm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SpectralFilter {
    /// Ideal bandpass, edges transmitting.
    Rectangular { center_nm: f64, width_nm: f64 },
    /// `exp(−((λ−c)/(w/2))^(2·order)·ln 2)`.
    SuperGaussian { center_nm: f64, width_nm: f64, order: u32 },
}

impl SpectralFilter {
    pub fn rectangular(center_nm: f64, width_nm: f64) -> Result<Self> {
        let f = SpectralFilter::Rectangular { center_nm, width_nm };
        f.validate()?;
        Ok(f)
    }

    pub fn super_gaussian(center_nm: f64, width_nm: f64, order: u32) -> Result<Self> {
        let f = SpectralFilter::SuperGaussian {
            center_nm,
            width_nm,
            order,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        let (c, w) = (self.center_nm(), self.width_nm());
        if !(c > 0.0 && c.is_finite() && w > 0.0 && w.is_finite()) {
            return Err(Error::invalid("filter", format!("center {c} nm, width {w} nm")));
        }
        if let SpectralFilter::SuperGaussian { order: 0, .. } = self {
            return Err(Error::invalid("filter", "super-Gaussian order must be ≥ 1"));
        }
        Ok(())
    }

    pub fn center_nm(&self) -> f64 {
        match *self {
            SpectralFilter::Rectangular { center_nm, .. } | SpectralFilter::SuperGaussian { center_nm, .. } => {
                center_nm
            }
        }
    }

    pub fn width_nm(&self) -> f64 {
        match *self {
            SpectralFilter::Rectangular { width_nm, .. } | SpectralFilter::SuperGaussian { width_nm, .. } => {
                width_nm
            }
        }
    }

    pub fn transmission_nm(&self, wavelength_nm: f64) -> f64 {
        match *self {
            SpectralFilter::Rectangular { center_nm, width_nm } => {
                if (wavelength_nm - center_nm).abs() <= 0.5 * width_nm {
                    1.0
                } else {
                    0.0
                }
            }
            SpectralFilter::SuperGaussian {
                center_nm,
                width_nm,
                order,
            } => {
                let x = (wavelength_nm - center_nm) / (0.5 * width_nm);
                (-x.abs().powi(2 * order as i32) * 2f64.ln()).exp()
            }
        }
    }

    pub fn transmission(&self, omega: f64) -> f64 {
        self.transmission_nm(nm_from_omega(omega))
    }
}

/// Free-function form of [`SpectralFilter::transmission`].
pub fn filter_transmission(filter: &SpectralFilter, omega: f64) -> f64 {
    filter.transmission(omega)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn norm_on(spec: &PumpSpectrum, grid: &[f64]) -> f64 {
        let dw = grid[1] - grid[0];
        grid.iter().map(|&w| spec.amplitude(w).norm_sqr()).sum::<f64>() * dw
    }

    fn covering_grid(spec: &PumpSpectrum, n: usize) -> Vec<f64> {
        let (a, b) = spec.support_omega();
        let pad = 0.2 * (b - a);
        linspace(a - pad, b + pad, n)
    }

    #[test]
    fn default_grid_is_centered_on_star_point() {
        let g = FrequencyGrid::star_point_default();
        assert_eq!(g.dims(), (512, 512));
        assert!((g.signal_center_nm() - 1411.0).abs() < 1.0);
        assert!((g.idler_center_nm() - 1276.0).abs() < 1.0);
        assert!(g.signal().windows(2).all(|p| p[1] > p[0]));
    }

    #[test]
    fn grid_rejects_short_or_unordered_axes() {
        assert!(FrequencyGrid::from_windows((1366.0, 1456.0), 8, (1256.0, 1296.0), 64).is_err());
        let mut axis = linspace(1.0e15, 1.1e15, 32);
        axis.reverse();
        assert!(FrequencyGrid::from_axes(axis, linspace(1.0e15, 1.1e15, 32)).is_err());
    }

    #[test]
    fn hermite_values() {
        assert_eq!(hermite(0, 0.7), 1.0);
        assert_eq!(hermite(1, 0.7), 1.4);
        assert_relative_eq!(hermite(2, 0.7), 4.0 * 0.49 - 2.0, epsilon = 1e-14);
        assert_relative_eq!(hermite(3, 0.7), 8.0 * 0.343 - 12.0 * 0.7, epsilon = 1e-14);
    }

    #[test]
    fn first_order_vanishes_at_center() {
        let hg = PumpSpectrum::hermite_gauss(1, 670.0, 2.0).unwrap();
        assert_eq!(hg.amplitude(hg.center_omega()).norm(), 0.0);
    }

    #[test]
    fn gaussian_fwhm_matches_request() {
        let g = PumpSpectrum::gaussian(670.0, 2.0).unwrap();
        let lam = linspace(665.0, 675.0, 200_001);
        let inten: Vec<f64> = lam.iter().map(|&l| g.intensity(omega_from_nm(l))).collect();
        let peak = inten.iter().cloned().fold(0.0, f64::max);
        let above: Vec<f64> = lam
            .iter()
            .zip(&inten)
            .filter(|(_, &v)| v >= 0.5 * peak)
            .map(|(&l, _)| l)
            .collect();
        let fwhm = above[above.len() - 1] - above[0];
        assert!((fwhm - 2.0).abs() < 0.01, "fwhm {fwhm}");
    }

    #[test]
    fn hermite_gauss_modes_are_orthonormal() {
        let modes: Vec<PumpSpectrum> = (0..4)
            .map(|n| PumpSpectrum::hermite_gauss(n, 670.0, 2.0).unwrap())
            .collect();
        let grid = covering_grid(&modes[3], 512);
        let dw = grid[1] - grid[0];
        for m in 0..4 {
            for n in 0..4 {
                let ip: Complex64 = grid
                    .iter()
                    .map(|&w| modes[m].amplitude(w).conj() * modes[n].amplitude(w))
                    .sum::<Complex64>()
                    * dw;
                let expected = if m == n { 1.0 } else { 0.0 };
                assert!((ip.re - expected).abs() < 1e-6 && ip.im.abs() < 1e-12, "<{m},{n}> = {ip}");
            }
        }
    }

    #[test]
    fn single_bin_is_a_rectangle() {
        let bin = PumpSpectrum::frequency_bins(1, 670.0, 1.0, 0.5).unwrap();
        let w = bandwidth_nm_to_omega(0.5, 670.0);
        let w0 = omega_from_nm(670.0);
        // even count keeps samples off the edges
        for x in linspace(-w, w, 100) {
            let expected = if x.abs() <= 0.5 * w { 1.0 / w.sqrt() } else { 0.0 };
            assert_eq!(bin.amplitude(w0 + x).re, expected);
        }
    }

    #[test]
    fn bins_validate() {
        assert!(PumpSpectrum::frequency_bins(0, 670.0, 1.0, 0.5).is_err());
        assert!(PumpSpectrum::frequency_bins(3, 670.0, 0.5, 0.5).is_err());
        assert!(PumpSpectrum::gaussian(670.0, 0.0).is_err());
        assert!(PumpSpectrum::hermite_gauss(4, 670.0, 2.0).is_err());
    }

    #[test]
    fn bins_normalize_on_fine_grid() {
        let bins = PumpSpectrum::default_bins();
        let grid = covering_grid(&bins, 400_001);
        assert_relative_eq!(norm_on(&bins, &grid), 1.0, max_relative = 1e-4);
    }

    #[test]
    fn chirp_only_changes_phase() {
        let g = PumpSpectrum::gaussian(670.0, 2.0).unwrap();
        let c = g.clone().with_chirp(3e-25);
        let w = g.center_omega() + 1e12;
        assert_relative_eq!(g.amplitude(w).norm(), c.amplitude(w).norm(), max_relative = 1e-14);
        assert!(c.amplitude(w).im != 0.0);
    }

    fn staircase_fidelity(spec: &PumpSpectrum, mask: &ShaperMask) -> f64 {
        // Independent oracle: midpoint rule uniform in wavelength with Jacobian ω²,
        // mask reconstructed from its amplitude/phase columns.
        let res = mask.resolution_nm;
        let lam0 = mask.wavelength_nm[0] - 0.5 * res;
        let sub = 64;
        let peak = mask
            .wavelength_nm
            .iter()
            .map(|&l| spec.amplitude(omega_from_nm(l)).norm())
            .fold(0.0, f64::max);
        let (mut ov, mut a2, mut s2) = (Complex64::new(0.0, 0.0), 0.0, 0.0);
        for (k, _) in mask.wavelength_nm.iter().enumerate() {
            let s = Complex64::from_polar(mask.amplitude[k] * peak, mask.phase_rad[k]);
            for j in 0..sub {
                let l = lam0 + (k as f64 + (j as f64 + 0.5) / sub as f64) * res;
                let jac = 1.0 / (l * l);
                let a = spec.amplitude(omega_from_nm(l));
                ov += a.conj() * s * jac;
                a2 += a.norm_sqr() * jac;
                s2 += s.norm_sqr() * jac;
            }
        }
        ov.norm_sqr() / (a2 * s2)
    }

    #[test]
    fn shaper_fidelity_gaussian_and_hg3() {
        let g = PumpSpectrum::gaussian(670.0, 2.0).unwrap();
        let mask = discretize_to_shaper(&g, 0.035).unwrap();
        assert!(mask.fidelity > 0.999, "{}", mask.fidelity);
        assert!((mask.fidelity - staircase_fidelity(&g, &mask)).abs() < 1e-4);

        let hg = PumpSpectrum::hermite_gauss(3, 670.0, 2.0).unwrap();
        let mask = discretize_to_shaper(&hg, 0.035).unwrap();
        assert!(mask.fidelity > 0.99, "{}", mask.fidelity);
        assert!((mask.fidelity - staircase_fidelity(&hg, &mask)).abs() < 1e-4);
    }

    #[test]
    fn shaper_sample_count() {
        for spec in [
            PumpSpectrum::gaussian(670.0, 2.0).unwrap(),
            PumpSpectrum::hermite_gauss(2, 670.0, 1.5).unwrap(),
            PumpSpectrum::default_bins(),
        ] {
            let mask = discretize_to_shaper(&spec, 0.035).unwrap();
            let (a, b) = spec.support_omega();
            let support = nm_from_omega(a) - nm_from_omega(b);
            assert_eq!(mask.wavelength_nm.len(), (support / 0.035).ceil() as usize);
        }
    }

    #[test]
    fn shaper_rejects_narrow_support() {
        let g = PumpSpectrum::gaussian(670.0, 0.01).unwrap();
        assert!(discretize_to_shaper(&g, 0.035).is_err());
    }

    #[test]
    fn filter_examples() {
        let rect = SpectralFilter::rectangular(1276.0, 3.0).unwrap();
        assert_eq!(rect.transmission_nm(1276.0), 1.0);
        assert_eq!(rect.transmission_nm(1280.0), 0.0);
        assert_eq!(rect.transmission_nm(1277.5), 1.0);
        let sg = SpectralFilter::super_gaussian(1276.0, 3.0, 4).unwrap();
        assert!((sg.transmission_nm(1277.5) - 0.5).abs() < 1e-12);
        assert_eq!(sg.transmission_nm(1276.0), 1.0);
        assert!(SpectralFilter::super_gaussian(1276.0, 3.0, 0).is_err());
    }

    proptest! {
        #[test]
        fn smooth_pumps_are_normalized(order in 0u32..4, fwhm in 0.3f64..5.0, center in 600.0f64..720.0) {
            let spec = PumpSpectrum::hermite_gauss(order, center, fwhm).unwrap();
            let grid = covering_grid(&spec, 4096);
            prop_assert!((norm_on(&spec, &grid) - 1.0).abs() < 1e-6);
        }

        #[test]
        fn hermite_gauss_parity(order in 0u32..4, delta in 0.0f64..3e12) {
            let spec = PumpSpectrum::hermite_gauss(order, 670.0, 2.0).unwrap();
            let w0 = spec.center_omega();
            let sign = if order % 2 == 0 { 1.0 } else { -1.0 };
            let (p, m) = (spec.amplitude(w0 + delta).re, spec.amplitude(w0 - delta).re);
            prop_assert!((p - sign * m).abs() <= 1e-12 * p.abs().max(1e-300) + 1e-300);
        }

        #[test]
        fn filters_are_bounded_and_idempotent(center in 1200.0f64..1500.0, width in 0.1f64..50.0,
                                               order in 1u32..6, lam in 1100.0f64..1600.0) {
            let rect = SpectralFilter::rectangular(center, width).unwrap();
            let t = rect.transmission_nm(lam);
            prop_assert!(t == 0.0 || t == 1.0);
            prop_assert_eq!(t * t, t);
            let sg = SpectralFilter::super_gaussian(center, width, order).unwrap();
            let s = sg.transmission_nm(lam);
            prop_assert!((0.0..=1.0).contains(&s));
        }
    }
}
