//! Schmidt decomposition, purity and g²(0) predictions.

use nalgebra::{DMatrix, SVD};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dispersion::{solve_pm_at, DispersionModel, Polarization};
use crate::error::{Error, Result};
use crate::jsa::{
    apply_filters, assemble_jsa, phasematching_matrix, ComplexMatrix, JointSpectralAmplitude, PhasematchingSpec,
    SourceDesign,
};
use crate::spectra::{FrequencyGrid, PumpShape, PumpSpectrum, SpectralFilter};
use crate::units::{nm_from_omega, omega_from_nm};

/// Number of mode pairs kept by [`schmidt_decompose`].
pub const KEPT_MODES: usize = 8;

/// Schmidt weights with the derived mode number, purity and g²(0).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchmidtSpectrum {
    /// Descending, summing to one.
    pub probabilities: Vec<f64>,
    pub schmidt_number: f64,
    pub purity: f64,
    pub g2: f64,
    /// Set when the amplitude was reconstructed from an intensity under a flat-phase assumption.
    pub intensity_based: bool,
}

impl SchmidtSpectrum {
    /// Normalizes nonnegative weights and derives `K = 1/Σλ²`, `P = 1/K`, `g2 = 1 + P`.
    pub fn from_weights(weights: impl IntoIterator<Item = f64>) -> Result<Self> {
        let mut p: Vec<f64> = weights.into_iter().collect();
        if p.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("Schmidt weights", "negative or non-finite weight"));
        }
        let total: f64 = p.iter().sum();
        if !(total > 0.0) {
            return Err(Error::DegenerateState("all Schmidt weights vanish".into()));
        }
        p.iter_mut().for_each(|w| *w /= total);
        p.sort_by(|a, b| b.total_cmp(a));
        let purity: f64 = p.iter().map(|w| w * w).sum();
        Ok(Self {
            probabilities: p,
            schmidt_number: 1.0 / purity,
            purity,
            g2: 1.0 + purity,
            intensity_based: false,
        })
    }

    pub fn from_singular_values(values: &[f64]) -> Result<Self> {
        Self::from_weights(values.iter().map(|s| s * s))
    }
}

#[derive(Clone, Debug)]
pub struct SchmidtDecomposition {
    pub spectrum: SchmidtSpectrum,
    /// Leading signal modes on the grid's signal axis.
    pub signal_modes: Vec<Vec<Complex64>>,
    /// Leading idler modes, `f ≈ Σ √λ_j · signal_j ⊗ idler_j`.
    pub idler_modes: Vec<Vec<Complex64>>,
}

fn svd(values: &ComplexMatrix, vectors: bool) -> Result<SVD<Complex64, nalgebra::Dyn, nalgebra::Dyn>> {
    let (r, c) = values.shape();
    let max_iter = 200 * r.max(c);
    SVD::try_new(values.clone(), vectors, vectors, f64::EPSILON, max_iter).ok_or_else(|| {
        let frob = values.norm();
        let largest = values.iter().map(|z| z.norm()).fold(0.0, f64::max);
        Error::Numerical(format!(
            "SVD did not converge on a {r}×{c} matrix (Frobenius norm {frob:.3e}, largest entry {largest:.3e})"
        ))
    })
}

/// Full Schmidt decomposition with the leading [`KEPT_MODES`] mode pairs.
pub fn schmidt_decompose(jsa: &JointSpectralAmplitude) -> Result<SchmidtDecomposition> {
    let mut dec = svd(jsa.values(), true)?;
    dec.sort_by_singular_values();
    let spectrum = SchmidtSpectrum::from_singular_values(dec.singular_values.as_slice())?;
    let u = dec.u.as_ref().expect("requested");
    let v_t = dec.v_t.as_ref().expect("requested");
    let kept = KEPT_MODES.min(dec.singular_values.len());
    Ok(SchmidtDecomposition {
        spectrum,
        signal_modes: (0..kept).map(|k| u.column(k).iter().cloned().collect()).collect(),
        idler_modes: (0..kept).map(|k| v_t.row(k).iter().cloned().collect()).collect(),
    })
}

/// Schmidt weights only (no mode vectors).
pub fn schmidt_spectrum(jsa: &JointSpectralAmplitude) -> Result<SchmidtSpectrum> {
    let dec = svd(jsa.values(), false)?;
    SchmidtSpectrum::from_singular_values(dec.singular_values.as_slice())
}

/// `Σλ² = ‖f†f‖²_F / ‖f‖⁴_F`, evaluated with real matrix products on the smaller side.
pub fn purity_from_gram(values: &ComplexMatrix) -> Result<f64> {
    let f = if values.nrows() >= values.ncols() {
        values.clone()
    } else {
        values.transpose()
    };
    let a = f.map(|z| z.re);
    let b = f.map(|z| z.im);
    let norm2 = a.norm_squared() + b.norm_squared();
    if !(norm2 > 0.0) {
        return Err(Error::DegenerateState("zero amplitude".into()));
    }
    let at = a.transpose();
    let bt = b.transpose();
    let real = &at * &a + &bt * &b;
    let m = &at * &b;
    let imag = &m - m.transpose();
    Ok((real.norm_squared() + imag.norm_squared()) / (norm2 * norm2))
}

/// Schmidt estimate from an intensity, taking `√JSI` as a flat-phase amplitude.
pub fn k_from_jsi(jsi: &DMatrix<f64>) -> Result<SchmidtSpectrum> {
    if jsi.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::invalid("joint spectral intensity", "entries must be finite and nonnegative"));
    }
    if jsi.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateState("joint spectral intensity is zero everywhere".into()));
    }
    let amplitude = jsi.map(|v| Complex64::new(v.sqrt(), 0.0));
    let dec = svd(&amplitude, false)?;
    let mut spectrum = SchmidtSpectrum::from_singular_values(dec.singular_values.as_slice())?;
    spectrum.intensity_based = true;
    Ok(spectrum)
}

/// Per-cell window sizing for purity maps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridPolicy {
    /// Idler window in units of the phasematching zero spacing `2π/(L|k_p′ − k_i′|)`.
    /// The default reproduces the 40 nm idler window of the default grid at 16 mm.
    pub idler_lobes: f64,
    /// Minimum samples per axis.
    pub min_points: usize,
    /// Minimum samples across the sinc main lobe.
    pub lobe_samples: usize,
    /// Minimum signal samples per pump FWHM.
    pub pump_fwhm_samples: f64,
    pub max_points: usize,
}

impl Default for GridPolicy {
    fn default() -> Self {
        Self {
            idler_lobes: 21.3,
            min_points: 256,
            lobe_samples: 20,
            pump_fwhm_samples: 4.0,
            max_points: 2048,
        }
    }
}

/// Phasematched (signal, idler) frequencies for a pump wavelength, preferring the branch with the longer signal.
pub fn phasematched_pair(model: &DispersionModel, pump_nm: f64) -> Result<(f64, f64)> {
    let roots = solve_pm_at(model, pump_nm)?;
    let p = roots
        .iter()
        .rev()
        .find(|p| p.signal_is_longer())
        .or(roots.first())
        .ok_or_else(|| Error::Domain(format!("no phasematched pair for a {pump_nm} nm pump")))?;
    let ws = omega_from_nm(p.signal_nm);
    Ok((ws, omega_from_nm(pump_nm) - ws))
}

impl GridPolicy {
    /// Grid sized for `pump` and waveguide length `length_m`, centered on the phasematched pair.
    pub fn grid_for(&self, model: &DispersionModel, pump: &PumpSpectrum, length_m: f64) -> Result<FrequencyGrid> {
        if !(self.idler_lobes > 0.0 && self.min_points >= 16 && self.max_points >= self.min_points) {
            return Err(Error::invalid("grid policy", format!("{self:?}")));
        }
        let (ws, wi) = phasematched_pair(model, nm_from_omega(pump.center_omega()))?;
        let vp = model.group_velocity(Polarization::Te, nm_from_omega(ws + wi))?;
        let vi = model.group_velocity(Polarization::Te, nm_from_omega(wi))?;
        let lobe = 2.0 * std::f64::consts::PI / (length_m * (1.0 / vp - 1.0 / vi).abs());
        let idler_span = self.idler_lobes * lobe;
        let (lo, hi) = pump.support_omega();
        let signal_span = (hi - lo) + idler_span;

        let lobe_points = (self.lobe_samples as f64 * idler_span / (2.0 * lobe)).ceil() as usize;
        let ni = self.min_points.max(lobe_points);
        let ns = self
            .min_points
            .max((self.pump_fwhm_samples * signal_span / pump.bandwidth_omega()).ceil() as usize);
        if ni > self.max_points || ns > self.max_points {
            return Err(Error::invalid(
                "grid policy",
                format!("cell needs {ns}×{ni} samples, above the cap of {}", self.max_points),
            ));
        }
        let axis = |center: f64, span: f64, n: usize| crate::units::linspace(center - 0.5 * span, center + 0.5 * span, n);
        let grid = FrequencyGrid::from_axes(axis(ws, signal_span, ns), axis(wi, idler_span, ni))?;
        for w in [
            grid.signal()[0],
            grid.signal()[ns - 1],
            grid.idler()[0],
            grid.idler()[ni - 1],
        ] {
            if !model.contains_omega(w) {
                return Err(Error::Domain(format!(
                    "cell window reaches {:.1} nm, outside the dispersion model",
                    nm_from_omega(w)
                )));
            }
        }
        Ok(grid)
    }
}

/// Purity of the homogeneous, unfiltered source on the policy grid.
pub fn purity_cell(
    model: &DispersionModel,
    pump: &PumpSpectrum,
    length_m: f64,
    policy: &GridPolicy,
) -> Result<f64> {
    let grid = policy.grid_for(model, pump, length_m)?;
    let spec = PhasematchingSpec::homogeneous(length_m)?;
    let jsa = assemble_jsa(pump, &phasematching_matrix(model, &spec, &grid)?, &grid)?;
    purity_from_gram(jsa.values())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PurityMap {
    pub pump_shape: PumpShape,
    pub bandwidths_nm: Vec<f64>,
    pub lengths_mm: Vec<f64>,
    /// `purity[b][l]`; `None` marks a cell that failed validation.
    pub purity: Vec<Vec<Option<f64>>>,
    pub invalid: Vec<InvalidCell>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvalidCell {
    pub bandwidth_nm: f64,
    pub length_mm: f64,
    pub reason: String,
}

impl PurityMap {
    pub fn all_valid(&self) -> bool {
        self.invalid.is_empty()
    }

    /// Largest purity and its (bandwidth, length) cell.
    pub fn maximum(&self) -> Option<(f64, f64, f64)> {
        let mut best: Option<(f64, f64, f64)> = None;
        for (b, row) in self.purity.iter().enumerate() {
            for (l, p) in row.iter().enumerate() {
                if let Some(p) = *p {
                    if best.is_none_or(|x| p > x.0) {
                        best = Some((p, self.bandwidths_nm[b], self.lengths_mm[l]));
                    }
                }
            }
        }
        best
    }

    /// Purity along the length axis at one bandwidth index.
    pub fn length_cut(&self, bandwidth_index: usize) -> Vec<Option<f64>> {
        self.purity[bandwidth_index].clone()
    }
}

/// Purity over a bandwidth × length sweep of the homogeneous unfiltered source.
///
/// Cells are independent and evaluated in parallel; a failing cell is recorded
/// in [`PurityMap::invalid`] and the sweep continues.
pub fn purity_map(
    model: &DispersionModel,
    shape: &PumpShape,
    bandwidths_nm: &[f64],
    lengths_mm: &[f64],
    policy: &GridPolicy,
) -> Result<PurityMap> {
    if bandwidths_nm.is_empty() || lengths_mm.is_empty() {
        return Err(Error::invalid("purity map", "empty axis"));
    }
    if bandwidths_nm.iter().chain(lengths_mm).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::invalid("purity map", "bandwidths and lengths must be positive"));
    }
    let cells: Vec<(usize, usize)> = (0..bandwidths_nm.len())
        .flat_map(|b| (0..lengths_mm.len()).map(move |l| (b, l)))
        .collect();
    let results: Vec<Result<f64>> = cells
        .par_iter()
        .map(|&(b, l)| {
            let pump = PumpSpectrum::new(shape.with_bandwidth_nm(bandwidths_nm[b]), 0.0)?;
            purity_cell(model, &pump, lengths_mm[l] * 1e-3, policy)
        })
        .collect();
    let mut purity = vec![vec![None; lengths_mm.len()]; bandwidths_nm.len()];
    let mut invalid = Vec::new();
    for (&(b, l), r) in cells.iter().zip(results) {
        match r {
            Ok(p) => purity[b][l] = Some(p),
            Err(e) => invalid.push(InvalidCell {
                bandwidth_nm: bandwidths_nm[b],
                length_mm: lengths_mm[l],
                reason: e.to_string(),
            }),
        }
    }
    Ok(PurityMap {
        pump_shape: shape.clone(),
        bandwidths_nm: bandwidths_nm.to_vec(),
        lengths_mm: lengths_mm.to_vec(),
        purity,
        invalid,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Signal,
    Idler,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct G2Table {
    pub arm: Arm,
    pub idler_filter: Option<SpectralFilter>,
    pub orders: Vec<u32>,
    pub bandwidths_nm: Vec<f64>,
    /// `g2[order][bandwidth]`.
    pub g2: Vec<Vec<f64>>,
}

impl G2Table {
    pub fn get(&self, order: u32, bandwidth_nm: f64) -> Option<f64> {
        let o = self.orders.iter().position(|&x| x == order)?;
        let b = self.bandwidths_nm.iter().position(|&x| x == bandwidth_nm)?;
        Some(self.g2[o][b])
    }
}

/// Unheralded `g2 = 1 + P` of one arm for Hermite-Gauss pumps of each order and bandwidth.
///
/// An idler filter changes the idler's reduced state only; the signal arm
/// sees the design's signal filter, if any.
pub fn g2_prediction_table(
    design: &SourceDesign,
    orders: &[u32],
    bandwidths_nm: &[f64],
    arm: Arm,
    idler_filter: Option<&SpectralFilter>,
) -> Result<G2Table> {
    let center = design.pump.shape().center_nm();
    let phi = phasematching_matrix(&design.model, &design.phasematching, &design.grid)?;
    let cells: Vec<(u32, f64)> = orders
        .iter()
        .flat_map(|&o| bandwidths_nm.iter().map(move |&b| (o, b)))
        .collect();
    let values: Vec<Result<f64>> = cells
        .par_iter()
        .map(|&(order, bw)| {
            let pump = PumpSpectrum::hermite_gauss(order, center, bw)?.with_chirp(design.pump.chirp_s2());
            let jsa = assemble_jsa(&pump, &phi, &design.grid)?;
            let filtered = match arm {
                Arm::Idler => apply_filters(&jsa, None, idler_filter)?,
                Arm::Signal => apply_filters(&jsa, design.signal_filter.as_ref(), None)?,
            };
            Ok(1.0 + purity_from_gram(filtered.jsa.values())?)
        })
        .collect();
    let mut flat = Vec::with_capacity(values.len());
    for v in values {
        flat.push(v?);
    }
    Ok(G2Table {
        arm,
        idler_filter: idler_filter.cloned(),
        orders: orders.to_vec(),
        bandwidths_nm: bandwidths_nm.to_vec(),
        g2: flat.chunks(bandwidths_nm.len().max(1)).map(|c| c.to_vec()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::linspace;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn grid(n: usize) -> FrequencyGrid {
        FrequencyGrid::from_windows((1366.0, 1456.0), n, (1256.0, 1296.0), n).unwrap()
    }

    /// Mehler kernel sampled on `[-l, l]²` with `n` points per axis.
    fn mehler(rho: f64, n: usize, l: f64) -> ComplexMatrix {
        let x = linspace(-l, l, n);
        let q = 1.0 - rho * rho;
        DMatrix::from_fn(n, n, |r, c| {
            let (a, b) = (x[r], x[c]);
            Complex64::new(
                (-(a * a + b * b) * (1.0 + rho * rho) / (2.0 * q) + 2.0 * rho * a * b / q).exp(),
                0.0,
            )
        })
    }

    #[test]
    fn separable_state_has_one_mode() {
        let g = grid(64);
        let values = DMatrix::from_fn(64, 64, |r, c| {
            Complex64::new((r as f64 / 9.0).sin() + 1.5, 0.0) * Complex64::from_polar(1.0, 0.1 * c as f64)
        });
        let jsa = JointSpectralAmplitude::from_values(values, g).unwrap();
        let s = schmidt_decompose(&jsa).unwrap().spectrum;
        assert_relative_eq!(s.probabilities[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(s.schmidt_number, 1.0, epsilon = 1e-12);
        assert_relative_eq!(s.g2, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn mehler_kernel_matches_geometric_spectrum() {
        for rho in [0.3, 0.5, 0.7] {
            let jsa = JointSpectralAmplitude::from_values(mehler(rho, 200, 9.0), grid(200)).unwrap();
            let s = schmidt_decompose(&jsa).unwrap().spectrum;
            for n in 0..6 {
                let expected = (1.0 - rho * rho) * rho.powi(2 * n as i32);
                assert!((s.probabilities[n] - expected).abs() < 1e-3, "rho {rho} n {n}");
            }
            let k = (1.0 + rho * rho) / (1.0 - rho * rho);
            assert!((s.schmidt_number - k).abs() < 1e-3, "rho {rho}: {}", s.schmidt_number);
        }
    }

    #[test]
    fn gram_purity_matches_svd() {
        let jsa = JointSpectralAmplitude::from_values(mehler(0.5, 120, 9.0), grid(120)).unwrap();
        let s = schmidt_spectrum(&jsa).unwrap();
        assert_relative_eq!(purity_from_gram(jsa.values()).unwrap(), s.purity, max_relative = 1e-12);
        // complex, non-square input
        let g = FrequencyGrid::from_windows((1366.0, 1456.0), 40, (1256.0, 1296.0), 70).unwrap();
        let v = DMatrix::from_fn(40, 70, |r, c| Complex64::from_polar(((r * c) as f64 * 0.01).cos() + 1.1, 0.3 * (r as f64) * (c as f64) / 50.0));
        let jsa = JointSpectralAmplitude::from_values(v.clone(), g).unwrap();
        assert_relative_eq!(purity_from_gram(&v).unwrap(), schmidt_spectrum(&jsa).unwrap().purity, max_relative = 1e-10);
    }

    #[test]
    fn modes_reconstruct_the_leading_part() {
        let jsa = JointSpectralAmplitude::from_values(mehler(0.3, 100, 9.0), grid(100)).unwrap();
        let d = schmidt_decompose(&jsa).unwrap();
        assert_eq!(d.signal_modes.len(), KEPT_MODES);
        let mut approx = ComplexMatrix::zeros(100, 100);
        for k in 0..KEPT_MODES {
            let w = d.spectrum.probabilities[k].sqrt();
            for r in 0..100 {
                for c in 0..100 {
                    approx[(r, c)] += d.signal_modes[k][r] * d.idler_modes[k][c] * w;
                }
            }
        }
        assert!((approx - jsa.values()).norm() < 1e-3);
    }

    #[test]
    fn fifty_equal_modes() {
        let s = SchmidtSpectrum::from_weights(vec![1.0; 50]).unwrap();
        assert!((s.g2 - 1.02).abs() < 1e-6);
    }

    #[test]
    fn eq_chain_holds() {
        let s = SchmidtSpectrum::from_weights([0.5, 0.3, 0.2]).unwrap();
        assert_relative_eq!(s.g2 - 1.0, s.purity, epsilon = 1e-15);
        assert_relative_eq!(s.purity, 1.0 / s.schmidt_number, epsilon = 1e-15);
    }

    #[test]
    fn k_from_jsi_checks_input() {
        assert!(matches!(k_from_jsi(&DMatrix::zeros(20, 20)), Err(Error::DegenerateState(_))));
        let mut m = DMatrix::from_element(20, 20, 1.0);
        m[(3, 3)] = -1.0;
        assert!(k_from_jsi(&m).is_err());
        let sep = DMatrix::from_fn(20, 20, |r, c| ((r + 1) * (c + 2)) as f64);
        let s = k_from_jsi(&sep).unwrap();
        assert!(s.intensity_based);
        assert_relative_eq!(s.schmidt_number, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn flat_phase_estimate_misses_chirp_entanglement() {
        let design = SourceDesign {
            pump: PumpSpectrum::gaussian(670.0, 2.0).unwrap().with_chirp(4e-24),
            grid: grid(128),
            ..SourceDesign::star_point_default().unwrap()
        };
        let jsa = design.unfiltered_jsa().unwrap();
        let full = schmidt_spectrum(&jsa).unwrap().schmidt_number;
        let flat = k_from_jsi(&jsa.intensity()).unwrap().schmidt_number;
        assert!(flat <= full, "{flat} > {full}");
        assert!(full > 1.5);
    }

    #[test]
    fn default_star_point_reference_purity() {
        let jsa = SourceDesign::star_point_default().unwrap().unfiltered_jsa().unwrap();
        let s = schmidt_decompose(&jsa).unwrap().spectrum;
        assert!((s.schmidt_number - 1.087).abs() < 0.05, "K {}", s.schmidt_number);
        assert!((s.purity - 0.919).abs() < 0.05);
    }

    #[test]
    fn grid_refinement_is_stable() {
        let coarse = SourceDesign::star_point_default().unwrap();
        let fine = SourceDesign {
            grid: grid(1024),
            ..coarse.clone()
        };
        let k = |d: &SourceDesign| 1.0 / purity_from_gram(d.unfiltered_jsa().unwrap().values()).unwrap();
        assert!((k(&coarse) - k(&fine)).abs() < 1e-3);
    }

    #[test]
    fn single_cell_map_equals_direct_decomposition() {
        let model = DispersionModel::calibrated_ktp().unwrap();
        let shape = PumpShape::Gaussian {
            center_nm: 670.0,
            fwhm_nm: 2.0,
        };
        let policy = GridPolicy::default();
        let map = purity_map(&model, &shape, &[2.0], &[16.0], &policy).unwrap();
        let pump = PumpSpectrum::gaussian(670.0, 2.0).unwrap();
        let g = policy.grid_for(&model, &pump, 0.016).unwrap();
        let design = SourceDesign {
            model,
            pump,
            phasematching: PhasematchingSpec::homogeneous(0.016).unwrap(),
            grid: g,
            signal_filter: None,
            idler_filter: None,
        };
        let direct = schmidt_spectrum(&design.unfiltered_jsa().unwrap()).unwrap().purity;
        assert!((map.purity[0][0].unwrap() - direct).abs() < 1e-10);
    }

    #[test]
    fn map_marks_invalid_cells() {
        let model = DispersionModel::calibrated_ktp().unwrap();
        let shape = PumpShape::Gaussian {
            center_nm: 670.0,
            fwhm_nm: 1.0,
        };
        let tight = GridPolicy {
            max_points: 256,
            lobe_samples: 400,
            ..GridPolicy::default()
        };
        let map = purity_map(&model, &shape, &[1.0], &[10.0, 20.0], &tight).unwrap();
        assert_eq!(map.invalid.len(), 2);
        assert!(map.purity[0].iter().all(Option::is_none));
    }

    #[test]
    fn g2_trends() {
        let design = SourceDesign::star_point_default().unwrap();
        let filter = SpectralFilter::rectangular(1276.0, 3.0).unwrap();
        let table = g2_prediction_table(&design, &[0, 1, 2, 3], &[0.5, 1.5], Arm::Idler, Some(&filter)).unwrap();
        let at = |o, b| table.get(o, b).unwrap();
        assert!(at(0, 1.5) >= 1.95, "{}", at(0, 1.5));
        assert!(at(0, 0.5) < at(0, 1.5));
        for o in 0..3 {
            assert!(at(o + 1, 1.5) < at(o, 1.5));
        }
        let signal = g2_prediction_table(&design, &[0], &[1.5], Arm::Signal, Some(&filter)).unwrap();
        let unfiltered = g2_prediction_table(&design, &[0], &[1.5], Arm::Signal, None).unwrap();
        assert_eq!(signal.g2, unfiltered.g2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn separable_phases_leave_spectrum_unchanged(seed in 0u64..10_000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let base = mehler(0.6, 60, 8.0);
            let theta: Vec<f64> = (0..60).map(|_| rng.random_range(-3.0..3.0)).collect();
            let chi: Vec<f64> = (0..60).map(|_| rng.random_range(-3.0..3.0)).collect();
            let rotated = DMatrix::from_fn(60, 60, |r, c| base[(r, c)] * Complex64::from_polar(1.0, theta[r] + chi[c]));
            let a = schmidt_spectrum(&JointSpectralAmplitude::from_values(base, grid(60)).unwrap()).unwrap();
            let b = schmidt_spectrum(&JointSpectralAmplitude::from_values(rotated, grid(60)).unwrap()).unwrap();
            for (x, y) in a.probabilities.iter().zip(&b.probabilities) {
                prop_assert!((x - y).abs() < 1e-10);
            }
        }

        #[test]
        fn spectrum_invariants(weights in proptest::collection::vec(0.0f64..1.0, 1..40)) {
            prop_assume!(weights.iter().sum::<f64>() > 1e-6);
            let s = SchmidtSpectrum::from_weights(weights).unwrap();
            prop_assert!((s.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(s.probabilities.windows(2).all(|w| w[0] >= w[1]));
            prop_assert!(s.schmidt_number >= 1.0 - 1e-12);
            prop_assert!(s.purity > 0.0 && s.purity <= 1.0 + 1e-12);
            prop_assert!(s.g2 > 1.0 && s.g2 <= 2.0 + 1e-12);
        }
    }
}
