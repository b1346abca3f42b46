//! Physical constants and wavelength/frequency conversions.
//!
//! Wavelengths are carried in nanometres at API boundaries, angular
//! frequencies in rad/s and lengths in metres unless a name says otherwise.

use std::f64::consts::PI;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Angular frequency (rad/s) of a vacuum wavelength given in nm.
pub fn omega_from_nm(wavelength_nm: f64) -> f64 {
    2.0 * PI * SPEED_OF_LIGHT / (wavelength_nm * 1e-9)
}

/// Vacuum wavelength (nm) of an angular frequency in rad/s.
pub fn nm_from_omega(omega: f64) -> f64 {
    2.0 * PI * SPEED_OF_LIGHT / omega * 1e9
}

/// Converts a wavelength interval at `center_nm` into an angular-frequency
/// interval with the linearised map `Δω = 2πcΔλ/λ₀²`.
pub fn bandwidth_nm_to_omega(width_nm: f64, center_nm: f64) -> f64 {
    let center = center_nm * 1e-9;
    2.0 * PI * SPEED_OF_LIGHT * width_nm * 1e-9 / (center * center)
}

/// Inverse of [`bandwidth_nm_to_omega`].
pub fn bandwidth_omega_to_nm(width_omega: f64, center_nm: f64) -> f64 {
    let center = center_nm * 1e-9;
    width_omega * center * center / (2.0 * PI * SPEED_OF_LIGHT) * 1e9
}

/// `sin(x)/x` with the removable singularity filled in.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-6 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Evenly spaced values from `start` to `stop` inclusive.
pub fn linspace(start: f64, stop: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![start],
        _ => {
            let step = (stop - start) / (count - 1) as f64;
            (0..count).map(|k| start + step * k as f64).collect()
        }
    }
}
