//! Joint spectral amplitude `f(ω_s, ω_i) = α(ω_s + ω_i)·φ(ω_s, ω_i)`.
//!
//! Matrices are indexed `[signal, idler]` on a [`FrequencyGrid`].

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dispersion::{DispersionModel, Polarization};
use crate::error::{Error, Result};
use crate::spectra::{FrequencyGrid, PumpSpectrum, SpectralFilter};
use crate::units::{nm_from_omega, sinc, SPEED_OF_LIGHT};

pub type ComplexMatrix = DMatrix<Complex64>;

/// Default segment count for inhomogeneous waveguides.
pub const DEFAULT_SEGMENTS: usize = 100;
/// Transmitted fraction below which a filtered state counts as empty.
pub const MIN_TRANSMITTED_FRACTION: f64 = 1e-6;

/// Extra TM index along the waveguide, `z ∈ [0, L]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum IndexProfile {
    /// `slope·(z − L/2)`, slope in 1/m.
    Linear { slope_per_m: f64 },
    /// `amplitude·sin(2πz/period)`.
    Sinusoidal { amplitude: f64, period_m: f64 },
    /// Cumulative Gaussian steps of width `step_sigma` per segment, seeded.
    RandomWalk { step_sigma: f64, seed: u64 },
}

impl IndexProfile {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            IndexProfile::Linear { slope_per_m } => slope_per_m.is_finite(),
            IndexProfile::Sinusoidal { amplitude, period_m } => {
                amplitude.is_finite() && period_m.is_finite() && period_m > 0.0
            }
            IndexProfile::RandomWalk { step_sigma, .. } => step_sigma.is_finite() && step_sigma >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("index profile", format!("{self:?}")))
        }
    }

    /// Index offsets at the midpoints of `segments` equal segments of a length-`length_m` guide.
    pub fn offsets(&self, segments: usize, length_m: f64) -> Vec<f64> {
        let dz = length_m / segments as f64;
        let mid = |m: usize| (m as f64 + 0.5) * dz;
        match *self {
            IndexProfile::Linear { slope_per_m } => {
                (0..segments).map(|m| slope_per_m * (mid(m) - 0.5 * length_m)).collect()
            }
            IndexProfile::Sinusoidal { amplitude, period_m } => (0..segments)
                .map(|m| amplitude * (2.0 * std::f64::consts::PI * mid(m) / period_m).sin())
                .collect(),
            IndexProfile::RandomWalk { step_sigma, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let normal = Normal::new(0.0, step_sigma).expect("validated sigma");
                let mut level = 0.0;
                (0..segments)
                    .map(|_| {
                        level += normal.sample(&mut rng);
                        level
                    })
                    .collect()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PhasematchingProfile {
    Homogeneous,
    /// Equal segments with their own TM index offset; `profile: None` means zero offset.
    Segmented {
        segments: usize,
        profile: Option<IndexProfile>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasematchingSpec {
    pub length_m: f64,
    pub profile: PhasematchingProfile,
}

impl PhasematchingSpec {
    pub fn homogeneous(length_m: f64) -> Result<Self> {
        let spec = Self {
            length_m,
            profile: PhasematchingProfile::Homogeneous,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn segmented(length_m: f64, segments: usize, profile: Option<IndexProfile>) -> Result<Self> {
        let spec = Self {
            length_m,
            profile: PhasematchingProfile::Segmented { segments, profile },
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length_m > 0.0 && self.length_m.is_finite()) {
            return Err(Error::invalid("waveguide length", format!("{} m must be > 0", self.length_m)));
        }
        if let PhasematchingProfile::Segmented { segments, profile } = &self.profile {
            if *segments == 0 {
                return Err(Error::invalid("segment count", "must be ≥ 1"));
            }
            if let Some(p) = profile {
                p.validate()?;
            }
        }
        Ok(())
    }

    /// Same spec with twice the segment count.
    pub fn refined(&self) -> Self {
        let mut s = self.clone();
        if let PhasematchingProfile::Segmented { segments, .. } = &mut s.profile {
            *segments *= 2;
        }
        s
    }
}

fn check_grid_in_window(model: &DispersionModel, grid: &FrequencyGrid) -> Result<()> {
    let (s, i) = (grid.signal(), grid.idler());
    let extremes = [
        s[0],
        s[s.len() - 1],
        i[0],
        i[i.len() - 1],
        s[0] + i[0],
        s[s.len() - 1] + i[i.len() - 1],
    ];
    for w in extremes {
        if !model.contains_omega(w) {
            let (lo, hi) = model.window_nm();
            return Err(Error::Domain(format!(
                "grid reaches {:.3} nm, outside the dispersion validity window [{lo}, {hi}] nm",
                nm_from_omega(w)
            )));
        }
    }
    Ok(())
}

/// Phase mismatch `Δk(ω_s, ω_i)` on the grid.
pub fn mismatch_matrix(model: &DispersionModel, grid: &FrequencyGrid) -> Result<DMatrix<f64>> {
    check_grid_in_window(model, grid)?;
    let (s, i) = (grid.signal(), grid.idler());
    let k_signal = model.wavevectors(Polarization::Tm, s)?;
    let k_idler = model.wavevectors(Polarization::Te, i)?;
    let columns: Vec<Vec<f64>> = (0..i.len())
        .into_par_iter()
        .map(|c| {
            (0..s.len())
                .map(|r| {
                    let kp = model
                        .wavevector(Polarization::Te, s[r] + i[c])
                        .expect("pump frequency checked against window");
                    kp - k_signal[r] - k_idler[c]
                })
                .collect()
        })
        .collect();
    Ok(DMatrix::from_vec(s.len(), i.len(), columns.concat()))
}

/// Phasematching function `φ(ω_s, ω_i)` on the grid.
pub fn phasematching_matrix(
    model: &DispersionModel,
    spec: &PhasematchingSpec,
    grid: &FrequencyGrid,
) -> Result<ComplexMatrix> {
    spec.validate()?;
    let dk = mismatch_matrix(model, grid)?;
    let length = spec.length_m;
    let signal = grid.signal();
    let values: Vec<Complex64> = match &spec.profile {
        PhasematchingProfile::Homogeneous => dk
            .as_slice()
            .par_iter()
            .map(|&d| homogeneous_phi(d, length))
            .collect(),
        PhasematchingProfile::Segmented { segments, profile } => {
            let m = *segments;
            let offsets = match profile {
                Some(p) => p.offsets(m, length),
                None => vec![0.0; m],
            };
            let seg = length / m as f64;
            let ns = signal.len();
            dk.as_slice()
                .par_iter()
                .enumerate()
                .map(|(idx, &d)| {
                    let ws = signal[idx % ns];
                    segmented_phi(d, ws, &offsets, seg)
                })
                .collect()
        }
    };
    let (ns, ni) = grid.dims();
    Ok(DMatrix::from_vec(ns, ni, values))
}

fn homogeneous_phi(dk: f64, length: f64) -> Complex64 {
    let x = 0.5 * dk * length;
    Complex64::from_polar(sinc(x), x)
}

fn segmented_phi(dk: f64, omega_signal: f64, offsets: &[f64], seg: f64) -> Complex64 {
    let weight = 1.0 / offsets.len() as f64;
    let mut phase = 0.0;
    let mut acc = Complex64::new(0.0, 0.0);
    for &dn in offsets {
        let dk_m = dk - dn * omega_signal / SPEED_OF_LIGHT;
        let x = 0.5 * dk_m * seg;
        acc += Complex64::from_polar(weight * sinc(x), phase + x);
        phase += dk_m * seg;
    }
    acc
}

/// Largest change of `|φ|` when the segment count is doubled.
pub fn segment_refinement_change(
    model: &DispersionModel,
    spec: &PhasematchingSpec,
    grid: &FrequencyGrid,
) -> Result<f64> {
    let a = phasematching_matrix(model, spec, grid)?;
    let b = phasematching_matrix(model, &spec.refined(), grid)?;
    Ok(a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x.norm() - y.norm()).abs())
        .fold(0.0, f64::max))
}

/// Two-photon spectral amplitude on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct JointSpectralAmplitude {
    values: ComplexMatrix,
    grid: FrequencyGrid,
    normalized: bool,
}

impl JointSpectralAmplitude {
    /// Wraps `values`, Frobenius-normalizing them.
    pub fn from_values(values: ComplexMatrix, grid: FrequencyGrid) -> Result<Self> {
        let mut jsa = Self::from_values_unnormalized(values, grid)?;
        jsa.normalize()?;
        Ok(jsa)
    }

    pub fn from_values_unnormalized(values: ComplexMatrix, grid: FrequencyGrid) -> Result<Self> {
        if values.shape() != grid.dims() {
            return Err(Error::invalid(
                "joint spectral amplitude",
                format!("matrix {:?} does not match grid {:?}", values.shape(), grid.dims()),
            ));
        }
        if values.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::Numerical("non-finite JSA entry".into()));
        }
        Ok(Self {
            values,
            grid,
            normalized: false,
        })
    }

    fn normalize(&mut self) -> Result<()> {
        let norm = self.values.norm();
        if !(norm > 0.0) {
            return Err(Error::DegenerateState(
                "joint spectral amplitude vanishes on the grid (pump and phasematching do not overlap)".into(),
            ));
        }
        self.values /= Complex64::new(norm, 0.0);
        self.normalized = true;
        Ok(())
    }

    pub fn values(&self) -> &ComplexMatrix {
        &self.values
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// `|f|²`.
    pub fn intensity(&self) -> DMatrix<f64> {
        self.values.map(|v| v.norm_sqr())
    }

    /// Entrywise product with `w_s(ω_s)·w_i(ω_i)`, not renormalized.
    fn weighted(&self, ws: &[f64], wi: &[f64]) -> ComplexMatrix {
        let mut v = self.values.clone();
        for (c, mut col) in v.column_iter_mut().enumerate() {
            for (r, x) in col.iter_mut().enumerate() {
                *x *= ws[r] * wi[c];
            }
        }
        v
    }
}

/// Builds `f = α(ω_s + ω_i)·φ` and normalizes it.
pub fn assemble_jsa(pump: &PumpSpectrum, phi: &ComplexMatrix, grid: &FrequencyGrid) -> Result<JointSpectralAmplitude> {
    if phi.shape() != grid.dims() {
        return Err(Error::invalid(
            "phasematching matrix",
            format!("{:?} does not match grid {:?}", phi.shape(), grid.dims()),
        ));
    }
    let (s, i) = (grid.signal(), grid.idler());
    let mut values = phi.clone();
    for (c, mut col) in values.column_iter_mut().enumerate() {
        for (r, x) in col.iter_mut().enumerate() {
            *x *= pump.amplitude(s[r] + i[c]);
        }
    }
    JointSpectralAmplitude::from_values(values, grid.clone())
}

/// A filtered state and the pair probability the filters let through.
#[derive(Clone, Debug)]
pub struct Filtered {
    pub jsa: JointSpectralAmplitude,
    pub transmitted_fraction: f64,
}

/// Multiplies by `F_s(ω_s)·F_i(ω_i)` and renormalizes.
pub fn apply_filters(
    jsa: &JointSpectralAmplitude,
    signal: Option<&SpectralFilter>,
    idler: Option<&SpectralFilter>,
) -> Result<Filtered> {
    let grid = jsa.grid();
    let profile = |axis: &[f64], filter: Option<&SpectralFilter>| -> Result<Vec<f64>> {
        match filter {
            None => Ok(vec![1.0; axis.len()]),
            Some(f) => {
                f.validate()?;
                Ok(axis.iter().map(|&w| f.transmission(w)).collect())
            }
        }
    };
    let ws = profile(grid.signal(), signal)?;
    let wi = profile(grid.idler(), idler)?;
    let before = jsa.values.norm_squared();
    let values = jsa.weighted(&ws, &wi);
    let fraction = values.norm_squared() / before;
    if !(fraction >= MIN_TRANSMITTED_FRACTION) {
        return Err(Error::DegenerateState(format!(
            "filters transmit a fraction {fraction:.3e} of the pair probability"
        )));
    }
    Ok(Filtered {
        jsa: JointSpectralAmplitude::from_values(values, grid.clone())?,
        transmitted_fraction: fraction,
    })
}

/// Single-photon spectra as densities per rad/s.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Marginals {
    pub signal: Vec<f64>,
    pub idler: Vec<f64>,
}

/// Marginal densities: `m_s(ω_s) = Σ_i |f|² / Δω_s`, so `Σ_s m_s Δω_s = 1` for a normalized JSA.
pub fn marginals(jsa: &JointSpectralAmplitude) -> Marginals {
    let inten = jsa.intensity();
    let (dws, dwi) = (jsa.grid().signal_step(), jsa.grid().idler_step());
    Marginals {
        signal: inten.row_iter().map(|r| r.sum() / dws).collect(),
        idler: inten.column_iter().map(|c| c.sum() / dwi).collect(),
    }
}

/// Full description of a source configuration.
#[derive(Clone, Debug)]
pub struct SourceDesign {
    pub model: DispersionModel,
    pub pump: PumpSpectrum,
    pub phasematching: PhasematchingSpec,
    pub grid: FrequencyGrid,
    pub signal_filter: Option<SpectralFilter>,
    pub idler_filter: Option<SpectralFilter>,
}

impl SourceDesign {
    /// Gaussian 2 nm pump at 670 nm, 16 mm homogeneous guide, default grid, no filters.
    pub fn star_point_default() -> Result<Self> {
        Ok(Self {
            model: DispersionModel::calibrated_ktp()?,
            pump: PumpSpectrum::gaussian(670.0, 2.0)?,
            phasematching: PhasematchingSpec::homogeneous(0.016)?,
            grid: FrequencyGrid::star_point_default(),
            signal_filter: None,
            idler_filter: None,
        })
    }

    pub fn unfiltered_jsa(&self) -> Result<JointSpectralAmplitude> {
        let phi = phasematching_matrix(&self.model, &self.phasematching, &self.grid)?;
        assemble_jsa(&self.pump, &phi, &self.grid)
    }

    /// JSA with the configured filters applied.
    pub fn jsa(&self) -> Result<Filtered> {
        apply_filters(
            &self.unfiltered_jsa()?,
            self.signal_filter.as_ref(),
            self.idler_filter.as_ref(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::omega_from_nm;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::sync::OnceLock;

    fn model() -> &'static DispersionModel {
        static MODEL: OnceLock<DispersionModel> = OnceLock::new();
        MODEL.get_or_init(|| DispersionModel::calibrated_ktp().unwrap())
    }

    fn small_grid() -> FrequencyGrid {
        FrequencyGrid::from_windows((1366.0, 1456.0), 64, (1256.0, 1296.0), 96).unwrap()
    }

    #[test]
    fn homogeneous_phi_is_one_at_zero_mismatch() {
        assert_eq!(homogeneous_phi(0.0, 0.016), Complex64::new(1.0, 0.0));
    }

    #[test]
    fn zero_profile_segments_match_homogeneous() {
        let grid = small_grid();
        let h = phasematching_matrix(model(), &PhasematchingSpec::homogeneous(0.016).unwrap(), &grid).unwrap();
        for m in [1, 7, 64] {
            for profile in [None, Some(IndexProfile::Linear { slope_per_m: 0.0 })] {
                let spec = PhasematchingSpec::segmented(0.016, m, profile).unwrap();
                let s = phasematching_matrix(model(), &spec, &grid).unwrap();
                let diff = (&h - &s).iter().map(|z| z.norm()).fold(0.0, f64::max);
                assert!(diff < 1e-12, "M={m}: {diff}");
            }
        }
    }

    fn fwhm(x: &[f64], y: &[f64]) -> (f64, usize) {
        let (ipk, peak) = y.iter().cloned().enumerate().fold((0, 0.0), |a, (i, v)| if v > a.1 { (i, v) } else { a });
        let idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] >= 0.5 * peak).collect();
        ((x[idx[idx.len() - 1]] - x[idx[0]]).abs(), ipk)
    }

    fn idler_cut(phi: &ComplexMatrix, row: usize) -> Vec<f64> {
        phi.row(row).iter().map(|z| z.norm_sqr()).collect()
    }

    /// Relative difference of the two sides of `|φ|²` at equal distance from its peak.
    fn asymmetry(y: &[f64], peak: usize) -> f64 {
        let reach = peak.min(y.len() - 1 - peak);
        let top = y[peak];
        (1..=reach).map(|d| (y[peak + d] - y[peak - d]).abs() / top).fold(0.0, f64::max)
    }

    #[test]
    fn inhomogeneity_broadens_phasematching() {
        let grid = FrequencyGrid::from_windows((1410.0, 1412.0), 16, (1266.0, 1286.0), 801).unwrap();
        let row = 8;
        let x = grid.idler_nm();
        let homogeneous = phasematching_matrix(model(), &PhasematchingSpec::homogeneous(0.016).unwrap(), &grid).unwrap();
        let (w0, _) = fwhm(&x, &idler_cut(&homogeneous, row));
        let linear = PhasematchingSpec::segmented(0.016, 100, Some(IndexProfile::Linear { slope_per_m: 0.06 })).unwrap();
        let (w1, _) = fwhm(&x, &idler_cut(&phasematching_matrix(model(), &linear, &grid).unwrap(), row));
        assert!(w1 > 1.05 * w0, "{w1} vs {w0}");

        let wave = PhasematchingSpec::segmented(
            0.016,
            100,
            Some(IndexProfile::Sinusoidal {
                amplitude: 4e-4,
                period_m: 0.032,
            }),
        )
        .unwrap();
        let cut = idler_cut(&phasematching_matrix(model(), &wave, &grid).unwrap(), row);
        let (w2, peak) = fwhm(&x, &cut);
        assert!(w2 > 1.05 * w0, "{w2} vs {w0}");
        assert!(asymmetry(&cut, peak) > 0.05);
        let (_, hpeak) = fwhm(&x, &idler_cut(&homogeneous, row));
        assert!(asymmetry(&idler_cut(&homogeneous, row), hpeak) < 0.05);
    }

    #[test]
    fn segment_count_converges() {
        let spec = PhasematchingSpec::segmented(0.016, 100, Some(IndexProfile::Linear { slope_per_m: 0.02 })).unwrap();
        assert!(segment_refinement_change(model(), &spec, &small_grid()).unwrap() < 1e-4);
    }

    #[test]
    fn random_walk_is_seeded() {
        let p = IndexProfile::RandomWalk { step_sigma: 1e-5, seed: 9 };
        assert_eq!(p.offsets(50, 0.016), p.offsets(50, 0.016));
        let q = IndexProfile::RandomWalk { step_sigma: 1e-5, seed: 10 };
        assert_ne!(p.offsets(50, 0.016), q.offsets(50, 0.016));
    }

    #[test]
    fn grid_outside_window_is_domain_error() {
        let grid = FrequencyGrid::from_windows((1700.0, 1850.0), 32, (1256.0, 1296.0), 32).unwrap();
        let err = phasematching_matrix(model(), &PhasematchingSpec::homogeneous(0.016).unwrap(), &grid).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn disjoint_pump_is_degenerate() {
        let grid = small_grid();
        let phi = phasematching_matrix(model(), &PhasematchingSpec::homogeneous(0.016).unwrap(), &grid).unwrap();
        let pump = PumpSpectrum::gaussian(600.0, 0.5).unwrap();
        assert!(matches!(assemble_jsa(&pump, &phi, &grid), Err(Error::DegenerateState(_))));
    }

    #[test]
    fn separable_inputs_give_separable_jsa() {
        let grid = small_grid();
        let phi = DMatrix::from_fn(64, 96, |r, c| {
            Complex64::new((-((r as f64 - 30.0) / 9.0).powi(2)).exp() * (1.0 + (c as f64 * 0.1).cos()), 0.0)
        });
        let pump = PumpSpectrum::gaussian(670.0, 500.0).unwrap();
        let jsa = assemble_jsa(&pump, &phi, &grid).unwrap();
        // rank one: every 2×2 minor vanishes
        let v = jsa.values();
        let minor = (v[(3, 4)] * v[(40, 70)] - v[(3, 70)] * v[(40, 4)]).norm();
        assert!(minor < 1e-6 * v.camax().powi(2));
        assert_relative_eq!(v.norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn marginals_integrate_to_one() {
        let design = SourceDesign::star_point_default().unwrap();
        let design = SourceDesign {
            grid: small_grid(),
            ..design
        };
        let jsa = design.unfiltered_jsa().unwrap();
        let m = marginals(&jsa);
        let ds = jsa.grid().signal_step();
        let di = jsa.grid().idler_step();
        assert_relative_eq!(m.signal.iter().sum::<f64>() * ds, 1.0, epsilon = 1e-10);
        assert_relative_eq!(m.idler.iter().sum::<f64>() * di, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn marginals_of_separable_state_are_factor_intensities() {
        let grid = small_grid();
        let g: Vec<f64> = (0..64).map(|r| (-((r as f64 - 30.0) / 7.0).powi(2)).exp()).collect();
        let h: Vec<f64> = (0..96).map(|c| 1.0 + 0.5 * (c as f64 * 0.2).sin()).collect();
        let values = DMatrix::from_fn(64, 96, |r, c| Complex64::new(g[r] * h[c], 0.0));
        let jsa = JointSpectralAmplitude::from_values(values, grid.clone()).unwrap();
        let m = marginals(&jsa);
        let gs: f64 = g.iter().map(|v| v * v).sum();
        for r in 0..64 {
            assert_relative_eq!(m.signal[r] * grid.signal_step(), g[r] * g[r] / gs, max_relative = 1e-10);
        }
    }

    #[test]
    fn no_filters_is_identity() {
        let design = SourceDesign {
            grid: small_grid(),
            ..SourceDesign::star_point_default().unwrap()
        };
        let jsa = design.unfiltered_jsa().unwrap();
        let f = apply_filters(&jsa, None, None).unwrap();
        assert_relative_eq!(f.transmitted_fraction, 1.0, epsilon = 1e-12);
        assert!((f.jsa.values() - jsa.values()).camax() < 1e-15);
    }

    #[test]
    fn filters_are_idempotent_and_can_empty_the_state() {
        let design = SourceDesign {
            grid: small_grid(),
            ..SourceDesign::star_point_default().unwrap()
        };
        let jsa = design.unfiltered_jsa().unwrap();
        let rect = SpectralFilter::rectangular(1276.0, 3.0).unwrap();
        let once = apply_filters(&jsa, None, Some(&rect)).unwrap();
        let twice = apply_filters(&once.jsa, None, Some(&rect)).unwrap();
        assert!((once.jsa.values() - twice.jsa.values()).camax() < 1e-15);
        assert_relative_eq!(twice.transmitted_fraction, 1.0, epsilon = 1e-12);
        let away = SpectralFilter::rectangular(1500.0, 3.0).unwrap();
        assert!(matches!(apply_filters(&jsa, Some(&away), None), Err(Error::DegenerateState(_))));
    }

    #[test]
    fn star_point_idler_marginal_peaks_at_anchor() {
        let design = SourceDesign::star_point_default().unwrap();
        let jsa = design.unfiltered_jsa().unwrap();
        let m = marginals(&jsa);
        let nm = jsa.grid().idler_nm();
        let k = m.idler.iter().cloned().enumerate().fold((0, 0.0), |a, (i, v)| if v > a.1 { (i, v) } else { a }).0;
        assert!((nm[k] - 1276.0).abs() < 1.0, "{}", nm[k]);
    }

    #[test]
    fn star_point_signal_marginal_width() {
        // Oracle: group-velocity matching ties the signal bandwidth to the pump's
        // in frequency, Δν_s = Δν_p, mapped to wavelength at 1411 nm.
        let design = SourceDesign::star_point_default().unwrap();
        let jsa = design.unfiltered_jsa().unwrap();
        let m = marginals(&jsa);
        let nm = jsa.grid().signal_nm();
        let (w, _) = fwhm(&nm, &m.signal);
        let dnu = SPEED_OF_LIGHT * 2.0e-9 / (670e-9f64).powi(2);
        let expected = dnu * (1411e-9f64).powi(2) / SPEED_OF_LIGHT * 1e9;
        assert!((w - expected).abs() < 1.0, "{w} vs {expected}");
    }

    #[test]
    fn idler_marginal_echoes_phasematching_for_broad_pump() {
        let grid = small_grid();
        let design = SourceDesign {
            pump: PumpSpectrum::gaussian(670.0, 40.0).unwrap(),
            grid: grid.clone(),
            ..SourceDesign::star_point_default().unwrap()
        };
        let phi = phasematching_matrix(&design.model, &design.phasematching, &grid).unwrap();
        let jsa = design.unfiltered_jsa().unwrap();
        let m = marginals(&jsa);
        let star_row = grid
            .signal()
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - omega_from_nm(1411.0)).abs().total_cmp(&(b.1 - omega_from_nm(1411.0)).abs()))
            .unwrap()
            .0;
        let cut = idler_cut(&phi, star_row);
        assert!(pearson(&m.idler, &cut) > 0.99);
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn zero_profile_identity_any_m(m in 1usize..200, length_mm in 2.0f64..40.0) {
            let grid = FrequencyGrid::from_windows((1400.0, 1420.0), 16, (1270.0, 1282.0), 16).unwrap();
            let l = length_mm * 1e-3;
            let h = phasematching_matrix(model(), &PhasematchingSpec::homogeneous(l).unwrap(), &grid).unwrap();
            let s = phasematching_matrix(model(), &PhasematchingSpec::segmented(l, m, None).unwrap(), &grid).unwrap();
            prop_assert!((&h - &s).iter().map(|z| z.norm()).fold(0.0, f64::max) < 1e-12);
        }

        #[test]
        fn assembly_commutes_with_permutation(seed in 0u64..1000) {
            use rand::seq::SliceRandom;
            let grid = FrequencyGrid::from_windows((1400.0, 1420.0), 16, (1270.0, 1282.0), 16).unwrap();
            let pump = PumpSpectrum::gaussian(670.0, 2.0).unwrap();
            let phi = phasematching_matrix(model(), &PhasematchingSpec::homogeneous(0.016).unwrap(), &grid).unwrap();
            let f = assemble_jsa(&pump, &phi, &grid).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut rows: Vec<usize> = (0..16).collect();
            let mut cols: Vec<usize> = (0..16).collect();
            rows.shuffle(&mut rng);
            cols.shuffle(&mut rng);
            // α evaluated at the permuted frequency sums, φ permuted the same way
            let s = grid.signal();
            let i = grid.idler();
            let permuted = DMatrix::from_fn(16, 16, |r, c| pump.amplitude(s[rows[r]] + i[cols[c]]) * phi[(rows[r], cols[c])]);
            let norm = permuted.norm();
            for r in 0..16 {
                for c in 0..16 {
                    prop_assert!((permuted[(r, c)] / norm - f.values()[(rows[r], cols[c])]).norm() < 1e-14);
                }
            }
        }

        #[test]
        fn conjugating_phi_preserves_intensity(length_mm in 2.0f64..40.0) {
            let grid = FrequencyGrid::from_windows((1400.0, 1420.0), 16, (1270.0, 1282.0), 16).unwrap();
            let pump = PumpSpectrum::gaussian(670.0, 2.0).unwrap();
            let phi = phasematching_matrix(model(), &PhasematchingSpec::homogeneous(length_mm * 1e-3).unwrap(), &grid).unwrap();
            let a = assemble_jsa(&pump, &phi, &grid).unwrap();
            let b = assemble_jsa(&pump, &phi.map(|z| z.conj()), &grid).unwrap();
            prop_assert!((a.intensity() - b.intensity()).amax() < 1e-15);
        }
    }
}
