//! Phasematching curve of the type-II process versus pump wavelength.

use serde::{Deserialize, Serialize};

use super::DispersionModel;
use crate::error::{Error, Result};
use crate::units::{linspace, nm_from_omega, omega_from_nm};

/// Signal-wavelength scan resolution used to bracket roots.
const SCAN_POINTS: usize = 2000;
const ROOT_TOLERANCE_PER_M: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PmPoint {
    pub pump_nm: f64,
    pub signal_nm: f64,
    pub idler_nm: f64,
    /// Residual `Δk` at the returned root, 1/m.
    pub mismatch_per_m: f64,
}

impl PmPoint {
    /// True on the branch where the TM signal is the longer wavelength.
    pub fn signal_is_longer(&self) -> bool {
        self.signal_nm >= self.idler_nm
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PmCurve {
    pub points: Vec<PmPoint>,
    /// Pump wavelengths without a bracketed root.
    pub unsolved_pump_nm: Vec<f64>,
}

/// Solves `Δk(ω_s, ω_p − ω_s) = 0` on `steps` pump wavelengths spanning `pump_range_nm`.
pub fn solve_pm_curve(model: &DispersionModel, pump_range_nm: (f64, f64), steps: usize) -> Result<PmCurve> {
    if steps < 2 {
        return Err(Error::invalid("pm-curve steps", format!("{steps} < 2")));
    }
    let (lo, hi) = pump_range_nm;
    if !(lo < hi) {
        return Err(Error::invalid("pump range", format!("{lo}..{hi} nm")));
    }
    for nm in [lo, hi] {
        if !model.contains_nm(nm) {
            let (a, b) = model.window_nm();
            return Err(Error::Domain(format!(
                "pump wavelength {nm} nm outside validity window [{a}, {b}] nm"
            )));
        }
    }
    let mut curve = PmCurve::default();
    for pump in linspace(lo, hi, steps) {
        let roots = solve_pm_at(model, pump)?;
        if roots.is_empty() {
            curve.unsolved_pump_nm.push(pump);
        }
        curve.points.extend(roots);
    }
    Ok(curve)
}

/// All phasematched (signal, idler) pairs at one pump wavelength, sorted by signal wavelength.
///
/// The signal is scanned over `[1.4, 2.8]·λ_p`, clipped so all three fields
/// stay in the validity window.
pub fn solve_pm_at(model: &DispersionModel, pump_nm: f64) -> Result<Vec<PmPoint>> {
    let (win_lo, win_hi) = model.window_nm();
    if !model.contains_nm(pump_nm) {
        return Err(Error::Domain(format!(
            "pump wavelength {pump_nm} nm outside validity window [{win_lo}, {win_hi}] nm"
        )));
    }
    let omega_p = omega_from_nm(pump_nm);
    let omega_i_min = omega_from_nm(win_hi);
    // ω_s ranges over the scan bracket intersected with ω_s, ω_p − ω_s ∈ window.
    let ws_hi = omega_from_nm((1.4 * pump_nm).max(win_lo)).min(omega_p - omega_i_min);
    let ws_lo = omega_from_nm((2.8 * pump_nm).min(win_hi));
    if !(ws_lo < ws_hi) {
        return Ok(Vec::new());
    }
    let f = |ws: f64| model.mismatch_unchecked(ws, omega_p - ws);
    let grid = linspace(ws_lo, ws_hi, SCAN_POINTS);
    let values: Vec<f64> = grid.iter().map(|&w| f(w)).collect();

    let mut roots = Vec::new();
    for k in 0..grid.len() - 1 {
        let (a, b) = (grid[k], grid[k + 1]);
        let (fa, fb) = (values[k], values[k + 1]);
        if fa == 0.0 {
            roots.push(a);
            continue;
        }
        if k + 1 == grid.len() - 1 && fb == 0.0 {
            roots.push(b);
        }
        if fa.signum() * fb.signum() < 0.0 {
            roots.push(bisect(&f, a, b, fa)?);
        }
    }

    let mut points: Vec<PmPoint> = roots
        .into_iter()
        .map(|ws| {
            let wi = omega_p - ws;
            PmPoint {
                pump_nm,
                signal_nm: nm_from_omega(ws),
                idler_nm: nm_from_omega(wi),
                mismatch_per_m: f(ws),
            }
        })
        .collect();
    points.sort_by(|a, b| a.signal_nm.total_cmp(&b.signal_nm));
    Ok(points)
}

fn bisect(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, mut fa: f64) -> Result<f64> {
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        let fm = f(m);
        if fm.abs() < ROOT_TOLERANCE_PER_M || m == a || m == b {
            return Ok(m);
        }
        if fa.signum() * fm.signum() < 0.0 {
            b = m;
        } else {
            a = m;
            fa = fm;
        }
    }
    Err(Error::Numerical("phasematching bisection did not converge".into()))
}
