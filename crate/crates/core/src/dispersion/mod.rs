//! Chromatic dispersion of the three interacting fields.
//!
//! Bulk KTP Sellmeier data for the `y` (TE) and `z` (TM) axes are combined
//! with a smooth per-polarization index correction that stands in for the
//! waveguide effective-index shift. The correction is fitted to measured
//! phasematching anchors in [`calibration`].

pub mod calibration;
pub mod phasematching;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::{nm_from_omega, omega_from_nm, SPEED_OF_LIGHT};

pub use calibration::{
    anchor_residuals, calibrate, AnchorPoint, AnchorResiduals, Calibration, CalibrationAnchors,
    CalibrationSettings,
};
pub use phasematching::{solve_pm_at, solve_pm_curve, PmCurve, PmPoint};

/// Relative angular-frequency step of the central difference used for group velocities.
pub const GROUP_VELOCITY_STEP: f64 = 1e-6;

/// Field polarization for propagation along the crystal x axis of z-cut KTP.
///
/// TE sees the `y` index, TM the `z` index. The pump and idler are TE, the
/// signal is TM.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarization {
    #[serde(rename = "TE")]
    Te,
    #[serde(rename = "TM")]
    Tm,
}

/// Two-pole Sellmeier equation `n² = A + B/(λ² − C) + D/(λ² − E)` with λ in µm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sellmeier {
    pub name: String,
    pub coefficients: [f64; 5],
    pub window_nm: (f64, f64),
}

impl Sellmeier {
    pub fn new(name: impl Into<String>, coefficients: [f64; 5], window_nm: (f64, f64)) -> Result<Self> {
        let model = Self {
            name: name.into(),
            coefficients,
            window_nm,
        };
        model.validate()?;
        Ok(model)
    }

    /// KTP `n_y`, Kato & Takaoka (2002).
    pub fn ktp_y() -> Self {
        Self {
            name: "kato2002-y".into(),
            coefficients: [3.45018, 0.04341, 0.04597, 16.98825, 39.43799],
            window_nm: (400.0, 1800.0),
        }
    }

    /// KTP `n_z`, Kato & Takaoka (2002).
    pub fn ktp_z() -> Self {
        Self {
            name: "kato2002-z".into(),
            coefficients: [4.59423, 0.06206, 0.04763, 110.80672, 86.12171],
            window_nm: (400.0, 1800.0),
        }
    }

    /// Built-in (TE, TM) pair by set name.
    pub fn pair_by_name(name: &str) -> Option<(Self, Self)> {
        match name {
            "kato2002" => Some((Self::ktp_y(), Self::ktp_z())),
            _ => None,
        }
    }

    fn validate(&self) -> Result<()> {
        let (lo, hi) = self.window_nm;
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && hi > lo) {
            return Err(Error::invalid("Sellmeier window", format!("{lo}..{hi} nm")));
        }
        if self.coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("Sellmeier coefficients", "non-finite value"));
        }
        let scan = crate::units::linspace(lo, hi, 1000);
        for nm in scan {
            let n = self.index_unchecked(nm);
            if !(n.is_finite() && n > 1.0) {
                return Err(Error::invalid(
                    "Sellmeier coefficients",
                    format!("{}: index {n} at {nm:.1} nm", self.name),
                ));
            }
            if self.index_slope_per_um(nm) >= 0.0 {
                return Err(Error::invalid(
                    "Sellmeier coefficients",
                    format!("{}: anomalous dispersion at {nm:.1} nm", self.name),
                ));
            }
        }
        Ok(())
    }

    pub fn contains(&self, wavelength_nm: f64) -> bool {
        wavelength_nm >= self.window_nm.0 && wavelength_nm <= self.window_nm.1
    }

    pub fn index(&self, wavelength_nm: f64) -> Result<f64> {
        if !self.contains(wavelength_nm) {
            return Err(out_of_window(wavelength_nm, self.window_nm));
        }
        Ok(self.index_unchecked(wavelength_nm))
    }

    fn index_unchecked(&self, wavelength_nm: f64) -> f64 {
        let [a, b, c, d, e] = self.coefficients;
        let l2 = (wavelength_nm * 1e-3).powi(2);
        (a + b / (l2 - c) + d / (l2 - e)).sqrt()
    }

    /// Closed-form `dn/dλ` in 1/µm.
    pub fn index_slope_per_um(&self, wavelength_nm: f64) -> f64 {
        let [_, b, c, d, e] = self.coefficients;
        let l = wavelength_nm * 1e-3;
        let l2 = l * l;
        let dn2 = -2.0 * l * (b / (l2 - c).powi(2) + d / (l2 - e).powi(2));
        dn2 / (2.0 * self.index_unchecked(wavelength_nm))
    }

    /// Closed-form group index `n − λ dn/dλ`.
    pub fn group_index(&self, wavelength_nm: f64) -> Result<f64> {
        let n = self.index(wavelength_nm)?;
        Ok(n - wavelength_nm * 1e-3 * self.index_slope_per_um(wavelength_nm))
    }
}

fn out_of_window(wavelength_nm: f64, window: (f64, f64)) -> Error {
    Error::Domain(format!(
        "wavelength {wavelength_nm:.4} nm outside validity window [{}, {}] nm",
        window.0, window.1
    ))
}

/// Index offset `δn(ω) = offset + slope·u + curvature·u²` with
/// `u = (ω − ω_ref)/ω_ref`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IndexCorrection {
    pub offset: f64,
    pub slope: f64,
    pub curvature: f64,
}

impl IndexCorrection {
    pub fn constant(offset: f64) -> Self {
        Self {
            offset,
            ..Self::default()
        }
    }

    fn as_array(&self) -> [f64; 3] {
        [self.offset, self.slope, self.curvature]
    }

    fn from_array(v: [f64; 3]) -> Self {
        Self {
            offset: v[0],
            slope: v[1],
            curvature: v[2],
        }
    }

    pub fn value(&self, u: f64) -> f64 {
        self.offset + self.slope * u + self.curvature * u * u
    }

    /// `dδn/du`.
    pub fn derivative(&self, u: f64) -> f64 {
        self.slope + 2.0 * self.curvature * u
    }
}

/// Per-polarization index correction sharing one reference frequency.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DispersionCorrection {
    pub reference_nm: f64,
    pub te: IndexCorrection,
    pub tm: IndexCorrection,
}

impl Default for DispersionCorrection {
    fn default() -> Self {
        Self {
            reference_nm: 1000.0,
            te: IndexCorrection::default(),
            tm: IndexCorrection::default(),
        }
    }
}

impl DispersionCorrection {
    pub fn reference_omega(&self) -> f64 {
        omega_from_nm(self.reference_nm)
    }

    pub fn for_polarization(&self, pol: Polarization) -> &IndexCorrection {
        match pol {
            Polarization::Te => &self.te,
            Polarization::Tm => &self.tm,
        }
    }

    fn reduced(&self, omega: f64) -> f64 {
        let reference = self.reference_omega();
        (omega - reference) / reference
    }

    pub fn offset(&self, pol: Polarization, omega: f64) -> f64 {
        self.for_polarization(pol).value(self.reduced(omega))
    }

    /// Contribution of the correction to the group index, `d(ω δn)/dω`.
    pub fn group_offset(&self, pol: Polarization, omega: f64) -> f64 {
        let c = self.for_polarization(pol);
        let u = self.reduced(omega);
        c.value(u) + omega / self.reference_omega() * c.derivative(u)
    }

    /// Linear slope in seconds, `b = slope/ω_ref`.
    pub fn slope_seconds(&self, pol: Polarization) -> f64 {
        self.for_polarization(pol).slope / self.reference_omega()
    }

    /// Sum of two corrections expressed on the same reference frequency.
    pub fn compose(&self, other: &DispersionCorrection) -> Result<DispersionCorrection> {
        if self.reference_nm != other.reference_nm {
            return Err(Error::invalid(
                "dispersion correction",
                "cannot compose corrections with different reference wavelengths",
            ));
        }
        let add = |a: &IndexCorrection, b: &IndexCorrection| {
            let (x, y) = (a.as_array(), b.as_array());
            IndexCorrection::from_array([x[0] + y[0], x[1] + y[1], x[2] + y[2]])
        };
        Ok(DispersionCorrection {
            reference_nm: self.reference_nm,
            te: add(&self.te, &other.te),
            tm: add(&self.tm, &other.tm),
        })
    }

    /// Coefficient vector `[te.offset, te.slope, te.curvature, tm.offset, ...]`.
    pub fn coefficients(&self) -> [f64; 6] {
        let (a, b) = (self.te.as_array(), self.tm.as_array());
        [a[0], a[1], a[2], b[0], b[1], b[2]]
    }

    pub fn from_coefficients(reference_nm: f64, x: [f64; 6]) -> Self {
        Self {
            reference_nm,
            te: IndexCorrection::from_array([x[0], x[1], x[2]]),
            tm: IndexCorrection::from_array([x[3], x[4], x[5]]),
        }
    }

    /// Largest `|δn|` of either polarization on a 1000-point scan of `window_nm`.
    pub fn max_abs_offset(&self, window_nm: (f64, f64)) -> f64 {
        crate::units::linspace(window_nm.0, window_nm.1, 1000)
            .into_iter()
            .map(omega_from_nm)
            .flat_map(|w| [self.offset(Polarization::Te, w), self.offset(Polarization::Tm, w)])
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Calibrated dispersion of the waveguide: bulk index plus correction.
///
/// Temperature is fixed; there is no thermal tuning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DispersionModel {
    te: Sellmeier,
    tm: Sellmeier,
    correction: DispersionCorrection,
}

impl DispersionModel {
    pub fn new(te: Sellmeier, tm: Sellmeier, correction: DispersionCorrection) -> Result<Self> {
        te.validate()?;
        tm.validate()?;
        let model = Self { te, tm, correction };
        model.check_monotone_wavevector()?;
        Ok(model)
    }

    /// Uncorrected bulk KTP.
    pub fn bulk_ktp() -> Self {
        Self {
            te: Sellmeier::ktp_y(),
            tm: Sellmeier::ktp_z(),
            correction: DispersionCorrection::default(),
        }
    }

    /// Bulk KTP calibrated to the default anchors with default settings.
    pub fn calibrated_ktp() -> Result<Self> {
        let cal = calibrate(
            &Self::bulk_ktp(),
            &CalibrationAnchors::default(),
            &CalibrationSettings::default(),
        )?;
        Ok(cal.model)
    }

    pub fn with_correction(&self, correction: DispersionCorrection) -> Result<Self> {
        Self::new(self.te.clone(), self.tm.clone(), correction)
    }

    pub fn correction(&self) -> &DispersionCorrection {
        &self.correction
    }

    pub fn sellmeier(&self, pol: Polarization) -> &Sellmeier {
        match pol {
            Polarization::Te => &self.te,
            Polarization::Tm => &self.tm,
        }
    }

    /// Wavelength interval (nm) on which both polarizations are defined.
    pub fn window_nm(&self) -> (f64, f64) {
        (
            self.te.window_nm.0.max(self.tm.window_nm.0),
            self.te.window_nm.1.min(self.tm.window_nm.1),
        )
    }

    /// Window membership with a relative slack of 10⁻¹² for ω ↔ λ round trips.
    pub fn contains_nm(&self, wavelength_nm: f64) -> bool {
        let (lo, hi) = self.window_nm();
        wavelength_nm >= lo * (1.0 - 1e-12) && wavelength_nm <= hi * (1.0 + 1e-12)
    }

    pub fn contains_omega(&self, omega: f64) -> bool {
        self.contains_nm(nm_from_omega(omega))
    }

    fn check_window(&self, wavelength_nm: f64) -> Result<()> {
        if self.contains_nm(wavelength_nm) {
            Ok(())
        } else {
            Err(out_of_window(wavelength_nm, self.window_nm()))
        }
    }

    fn check_monotone_wavevector(&self) -> Result<()> {
        let (lo, hi) = self.window_nm();
        for pol in [Polarization::Te, Polarization::Tm] {
            let ks: Vec<f64> = crate::units::linspace(omega_from_nm(hi), omega_from_nm(lo), 1000)
                .into_iter()
                .map(|w| self.wavevector_unchecked(pol, w))
                .collect();
            if ks.windows(2).any(|p| !(p[1] > p[0])) {
                return Err(Error::invalid(
                    "dispersion model",
                    format!("wavevector not increasing in frequency for {pol:?}"),
                ));
            }
        }
        Ok(())
    }

    /// Effective index `n_base(λ) + δn(ω(λ))`.
    pub fn refractive_index(&self, pol: Polarization, wavelength_nm: f64) -> Result<f64> {
        self.check_window(wavelength_nm)?;
        Ok(self.index_unchecked(pol, omega_from_nm(wavelength_nm)))
    }

    pub fn index_at_omega(&self, pol: Polarization, omega: f64) -> Result<f64> {
        self.check_window(nm_from_omega(omega))?;
        Ok(self.index_unchecked(pol, omega))
    }

    fn index_unchecked(&self, pol: Polarization, omega: f64) -> f64 {
        let nm = nm_from_omega(omega);
        self.sellmeier(pol).index_unchecked(nm) + self.correction.offset(pol, omega)
    }

    fn wavevector_unchecked(&self, pol: Polarization, omega: f64) -> f64 {
        self.index_unchecked(pol, omega) * omega / SPEED_OF_LIGHT
    }

    /// Propagation constant `k(ω) = n(ω)·ω/c` in 1/m.
    pub fn wavevector(&self, pol: Polarization, omega: f64) -> Result<f64> {
        self.check_window(nm_from_omega(omega))?;
        Ok(self.wavevector_unchecked(pol, omega))
    }

    /// Group velocity `(dk/dω)⁻¹` from a central difference with relative step 10⁻⁶.
    pub fn group_velocity(&self, pol: Polarization, wavelength_nm: f64) -> Result<f64> {
        self.group_velocity_with_step(pol, wavelength_nm, GROUP_VELOCITY_STEP)
    }

    pub fn group_velocity_with_step(
        &self,
        pol: Polarization,
        wavelength_nm: f64,
        relative_step: f64,
    ) -> Result<f64> {
        let omega = omega_from_nm(wavelength_nm);
        let h = relative_step * omega;
        // The stencil itself has to stay inside the window.
        let k_plus = self.wavevector(pol, omega + h)?;
        let k_minus = self.wavevector(pol, omega - h)?;
        Ok(2.0 * h / (k_plus - k_minus))
    }

    /// Group index from the closed-form Sellmeier derivative plus the correction.
    pub fn group_index_analytic(&self, pol: Polarization, wavelength_nm: f64) -> Result<f64> {
        let omega = omega_from_nm(wavelength_nm);
        Ok(self.sellmeier(pol).group_index(wavelength_nm)? + self.correction.group_offset(pol, omega))
    }

    /// `Δk = k_TE(ω_s+ω_i) − k_TM(ω_s) − k_TE(ω_i)`.
    pub fn phase_mismatch(&self, omega_signal: f64, omega_idler: f64) -> Result<f64> {
        self.phase_mismatch_with_offset(omega_signal, omega_idler, 0.0)
    }

    /// Phase mismatch with an extra constant offset added to the TM (signal) index.
    pub fn phase_mismatch_with_offset(
        &self,
        omega_signal: f64,
        omega_idler: f64,
        tm_offset: f64,
    ) -> Result<f64> {
        let omega_pump = omega_signal + omega_idler;
        for w in [omega_pump, omega_signal, omega_idler] {
            self.check_window(nm_from_omega(w))?;
        }
        Ok(self.mismatch_unchecked(omega_signal, omega_idler) - tm_offset * omega_signal / SPEED_OF_LIGHT)
    }

    pub(crate) fn mismatch_unchecked(&self, omega_signal: f64, omega_idler: f64) -> f64 {
        self.wavevector_unchecked(Polarization::Te, omega_signal + omega_idler)
            - self.wavevector_unchecked(Polarization::Tm, omega_signal)
            - self.wavevector_unchecked(Polarization::Te, omega_idler)
    }

    /// Wavevectors for every frequency in `omegas`, checked against the window.
    pub(crate) fn wavevectors(&self, pol: Polarization, omegas: &[f64]) -> Result<Vec<f64>> {
        omegas.iter().map(|&w| self.wavevector(pol, w)).collect()
    }
}
