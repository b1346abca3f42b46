//! Detection chain: spectrometer blur and shot noise, Klyshko efficiencies,
//! loss and brightness arithmetic, and Monte-Carlo g²(0).

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Geometric, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsa::JointSpectralAmplitude;
use crate::units::{bandwidth_nm_to_omega, bandwidth_omega_to_nm, nm_from_omega};

/// Fibre time-of-flight spectrometer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TofSpectrometer {
    pub dispersion_ns_per_nm: f64,
    /// Detector timing jitter, FWHM.
    pub jitter_ps: f64,
}

impl Default for TofSpectrometer {
    fn default() -> Self {
        Self {
            dispersion_ns_per_nm: 0.3,
            jitter_ps: 70.0,
        }
    }
}

impl TofSpectrometer {
    pub fn resolution_nm(&self) -> Result<f64> {
        tof_resolution(self)
    }
}

/// Wavelength resolution `jitter / |dispersion|`.
pub fn tof_resolution(spec: &TofSpectrometer) -> Result<f64> {
    if spec.dispersion_ns_per_nm == 0.0 || !spec.dispersion_ns_per_nm.is_finite() {
        return Err(Error::Domain("time-of-flight dispersion must be nonzero".into()));
    }
    if !(spec.jitter_ps >= 0.0) {
        return Err(Error::Domain(format!("timing jitter {} ps must be ≥ 0", spec.jitter_ps)));
    }
    Ok(spec.jitter_ps * 1e-3 / spec.dispersion_ns_per_nm.abs())
}

/// Normalized Gaussian kernel with the given FWHM in samples, truncated at ±6σ.
fn gaussian_kernel(fwhm_samples: f64) -> Vec<f64> {
    let sigma = fwhm_samples / (2.0 * (2.0 * 2f64.ln()).sqrt());
    let half = (6.0 * sigma).ceil() as isize;
    let raw: Vec<f64> = (-half..=half)
        .map(|k| (-0.5 * (k as f64 / sigma).powi(2)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

fn kernel_for_axis(axis: &[f64], resolution_nm: f64, name: &str) -> Result<Option<Vec<f64>>> {
    if !(resolution_nm >= 0.0 && resolution_nm.is_finite()) {
        return Err(Error::invalid("spectrometer resolution", format!("{name}: {resolution_nm} nm")));
    }
    if resolution_nm == 0.0 {
        return Ok(None);
    }
    let center_nm = nm_from_omega(0.5 * (axis[0] + axis[axis.len() - 1]));
    let step = (axis[axis.len() - 1] - axis[0]) / (axis.len() - 1) as f64;
    let spacing_nm = bandwidth_omega_to_nm(step, center_nm);
    if resolution_nm < spacing_nm {
        return Err(Error::invalid(
            "spectrometer resolution",
            format!(
                "{name} resolution {resolution_nm} nm is finer than the grid spacing {spacing_nm:.4} nm; refine the grid"
            ),
        ));
    }
    let fwhm_samples = bandwidth_nm_to_omega(resolution_nm, center_nm) / step;
    Ok(Some(gaussian_kernel(fwhm_samples)))
}

/// Zero-padded 1-D convolution along rows (`axis = 0`) or columns (`axis = 1`).
fn convolve(m: &DMatrix<f64>, kernel: &[f64], along_rows: bool) -> DMatrix<f64> {
    let half = (kernel.len() / 2) as isize;
    let (nr, nc) = m.shape();
    DMatrix::from_fn(nr, nc, |r, c| {
        let mut acc = 0.0;
        for (k, w) in kernel.iter().enumerate() {
            let off = k as isize - half;
            let (rr, cc) = if along_rows {
                (r as isize + off, c as isize)
            } else {
                (r as isize, c as isize + off)
            };
            if rr >= 0 && cc >= 0 && (rr as usize) < nr && (cc as usize) < nc {
                acc += w * m[(rr as usize, cc as usize)];
            }
        }
        acc
    })
}

/// `|f|²` convolved with the separable instrument response (FWHM per arm, nm).
pub fn blurred_intensity(jsa: &JointSpectralAmplitude, res_signal_nm: f64, res_idler_nm: f64) -> Result<DMatrix<f64>> {
    let grid = jsa.grid();
    let ks = kernel_for_axis(grid.signal(), res_signal_nm, "signal")?;
    let ki = kernel_for_axis(grid.idler(), res_idler_nm, "idler")?;
    let mut m = jsa.intensity();
    if let Some(k) = ks {
        m = convolve(&m, &k, true);
    }
    if let Some(k) = ki {
        m = convolve(&m, &k, false);
    }
    Ok(m)
}

/// Simulated JSI histogram: blurred intensity scaled to `events` expected counts, Poisson per bin.
pub fn simulate_jsi_measurement(
    jsa: &JointSpectralAmplitude,
    res_signal_nm: f64,
    res_idler_nm: f64,
    events: f64,
    seed: u64,
) -> Result<DMatrix<f64>> {
    if !(events > 0.0 && events.is_finite()) {
        return Err(Error::invalid("event count", format!("{events} must be > 0")));
    }
    let blurred = blurred_intensity(jsa, res_signal_nm, res_idler_nm)?;
    let total = blurred.sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateState("blurred intensity vanishes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = DMatrix::zeros(blurred.nrows(), blurred.ncols());
    for (o, &b) in out.iter_mut().zip(blurred.iter()) {
        let mean = b / total * events;
        *o = if mean > 0.0 {
            Poisson::new(mean)
                .map_err(|e| Error::Numerical(format!("Poisson mean {mean}: {e}")))?
                .sample(&mut rng)
        } else {
            0.0
        };
    }
    Ok(out)
}

/// Klyshko efficiencies `(η_s, η_i) = (C/S_i, C/S_s)`.
pub fn klyshko(singles_signal: f64, singles_idler: f64, coincidences: f64) -> Result<(f64, f64)> {
    if !(singles_signal > 0.0 && singles_idler > 0.0) {
        return Err(Error::Domain("singles must be positive".into()));
    }
    if !(coincidences >= 0.0 && coincidences <= singles_signal.min(singles_idler)) {
        return Err(Error::Domain(format!(
            "coincidences {coincidences} must lie in [0, min(singles)]"
        )));
    }
    Ok((coincidences / singles_idler, coincidences / singles_signal))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicEfficiency {
    /// `min(raw, 1)`.
    pub value: f64,
    pub raw: f64,
    /// Set when the inputs imply an efficiency above one.
    pub inconsistent: bool,
}

/// Measured efficiency divided by every loss factor in `factors`.
pub fn intrinsic_efficiency(measured: f64, factors: &[f64]) -> Result<IntrinsicEfficiency> {
    if !(measured > 0.0 && measured <= 1.0) {
        return Err(Error::Domain(format!("measured efficiency {measured} not in (0, 1]")));
    }
    let mut divisor = 1.0;
    for &f in factors {
        if f == 0.0 {
            return Err(Error::Domain("zero loss factor in efficiency budget".into()));
        }
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::Domain(format!("loss factor {f} not in (0, 1]")));
        }
        divisor *= f;
    }
    let raw = measured / divisor;
    Ok(IntrinsicEfficiency {
        value: raw.min(1.0),
        raw,
        inconsistent: raw > 1.0,
    })
}

/// `measured / (transmission × detector efficiency)`.
pub fn efficiency_budget(measured: f64, transmission: f64, detector_efficiency: f64) -> Result<IntrinsicEfficiency> {
    intrinsic_efficiency(measured, &[transmission, detector_efficiency])
}

/// `10^(−loss·length/10)`.
pub fn waveguide_transmission(loss_db_per_cm: f64, length_cm: f64) -> Result<f64> {
    if !(loss_db_per_cm >= 0.0 && length_cm >= 0.0) {
        return Err(Error::Domain(format!(
            "loss {loss_db_per_cm} dB/cm and length {length_cm} cm must be ≥ 0"
        )));
    }
    Ok(10f64.powf(-loss_db_per_cm * length_cm / 10.0))
}

/// Mean photon number per arm, `sinh²(α√E)`.
pub fn mean_photon(energy_pj: f64, alpha_per_sqrt_pj: f64) -> Result<f64> {
    if !(energy_pj >= 0.0) {
        return Err(Error::Domain(format!("pulse energy {energy_pj} pJ must be ≥ 0")));
    }
    Ok((alpha_per_sqrt_pj * energy_pj.sqrt()).sinh().powi(2))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmChain {
    /// Filter or 4f-setup transmission.
    pub transmission: f64,
    pub detector_efficiency: f64,
    pub fibre_coupling: f64,
}

/// Efficiencies of both arms plus waveguide losses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionChain {
    pub signal: ArmChain,
    pub idler: ArmChain,
    pub loss_te_db_per_cm: f64,
    pub loss_tm_db_per_cm: f64,
}

impl Default for DetectionChain {
    fn default() -> Self {
        Self {
            signal: ArmChain {
                transmission: 0.26,
                detector_efficiency: 0.55,
                fibre_coupling: 0.60,
            },
            idler: ArmChain {
                transmission: 0.30,
                detector_efficiency: 0.41,
                fibre_coupling: 0.65,
            },
            loss_te_db_per_cm: 0.85,
            loss_tm_db_per_cm: 0.67,
        }
    }
}

impl DetectionChain {
    pub fn validate(&self) -> Result<()> {
        for (name, arm) in [("signal", &self.signal), ("idler", &self.idler)] {
            for (what, v) in [
                ("transmission", arm.transmission),
                ("detector_efficiency", arm.detector_efficiency),
                ("fibre_coupling", arm.fibre_coupling),
            ] {
                if !(v > 0.0 && v <= 1.0) {
                    return Err(Error::invalid("detection chain", format!("{name}.{what} = {v} not in (0, 1]")));
                }
            }
        }
        if !(self.loss_te_db_per_cm >= 0.0 && self.loss_tm_db_per_cm >= 0.0) {
            return Err(Error::invalid("detection chain", "losses must be ≥ 0 dB/cm"));
        }
        Ok(())
    }
}

/// Pair counting with independent per-photon losses: `(S_s, S_i, C)` over `pairs` pairs.
pub fn simulate_lossy_pairs(pairs: u64, eta_signal: f64, eta_idler: f64, seed: u64) -> Result<(u64, u64, u64)> {
    for eta in [eta_signal, eta_idler] {
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::invalid("arm efficiency", format!("{eta} not in [0, 1]")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let binom = |n: u64, p: f64, rng: &mut ChaCha8Rng| -> Result<u64> {
        Binomial::new(n, p.clamp(0.0, 1.0))
            .map(|b| b.sample(rng))
            .map_err(|e| Error::Numerical(e.to_string()))
    };
    // Multinomial split of pairs into both / signal only / idler only / neither.
    let p_both = eta_signal * eta_idler;
    let p_s = eta_signal * (1.0 - eta_idler);
    let p_i = (1.0 - eta_signal) * eta_idler;
    let both = binom(pairs, p_both, &mut rng)?;
    let rest = 1.0 - p_both;
    let only_s = if rest > 0.0 { binom(pairs - both, p_s / rest, &mut rng)? } else { 0 };
    let rest2 = rest - p_s;
    let only_i = if rest2 > 0.0 {
        binom(pairs - both - only_s, p_i / rest2, &mut rng)?
    } else {
        0
    };
    Ok((both + only_s, both + only_i, both))
}

/// Settings of the photon-counting Monte Carlo.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McSettings {
    pub batches: usize,
    /// Pulses per random substream.
    pub block_pulses: u64,
    /// Threshold detectors (`n ≥ 1` counts as one click) instead of number resolving.
    pub click_detectors: bool,
    /// Modes are dropped from the tail once the kept weight reaches `1 − tail`.
    pub tail: f64,
}

impl Default for McSettings {
    fn default() -> Self {
        Self {
            batches: 20,
            block_pulses: 1 << 14,
            click_detectors: false,
            tail: 1e-10,
        }
    }
}

/// Per-pulse moment sums of the two detector outputs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub pulses: u64,
    pub sum_a: u64,
    pub sum_b: u64,
    pub sum_ab: u128,
}

impl Tally {
    fn merge(&mut self, o: &Tally) {
        self.pulses += o.pulses;
        self.sum_a += o.sum_a;
        self.sum_b += o.sum_b;
        self.sum_ab += o.sum_ab;
    }

    /// `⟨n_a n_b⟩ / (⟨n_a⟩⟨n_b⟩)`; `NaN` without counts in either detector.
    pub fn g2(&self) -> f64 {
        let n = self.pulses as f64;
        self.sum_ab as f64 * n / (self.sum_a as f64 * self.sum_b as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountingRun {
    pub pulses: u64,
    pub mean_photons: f64,
    /// Schmidt weights actually simulated (tail-truncated, renormalized).
    pub probabilities: Vec<f64>,
    pub seed: u64,
    pub click_detectors: bool,
    pub g2: f64,
    pub standard_error: f64,
    pub total: Tally,
    pub batches: Vec<Tally>,
}

/// Monte-Carlo g²(0) of one unheralded arm behind a 50/50 splitter with default settings.
pub fn mc_g2(probabilities: &[f64], mean_photons: f64, pulses: u64, seed: u64) -> Result<CountingRun> {
    mc_g2_with(probabilities, mean_photons, pulses, seed, &McSettings::default())
}

/// Monte-Carlo g²(0): one thermal photon number per Schmidt mode with mean `N·λ_j`,
/// the total split binomially onto two detectors.
///
/// Pulse `p` draws from substream `p / block_pulses` of the seeded generator, so
/// the result does not depend on the number of worker threads.
pub fn mc_g2_with(
    probabilities: &[f64],
    mean_photons: f64,
    pulses: u64,
    seed: u64,
    settings: &McSettings,
) -> Result<CountingRun> {
    if pulses < 1000 {
        return Err(Error::invalid("pulse count", format!("{pulses} < 1000")));
    }
    if !(mean_photons > 0.0 && mean_photons.is_finite()) {
        return Err(Error::invalid("mean photon number", format!("{mean_photons} must be > 0")));
    }
    if settings.batches < 2 || settings.block_pulses == 0 || !(settings.tail >= 0.0 && settings.tail < 1.0) {
        return Err(Error::invalid("Monte-Carlo settings", format!("{settings:?}")));
    }
    let total: f64 = probabilities.iter().sum();
    if probabilities.iter().any(|p| !(*p >= 0.0 && p.is_finite())) || (total - 1.0).abs() > 1e-6 {
        return Err(Error::invalid("Schmidt probabilities", format!("must be nonnegative and sum to 1 (sum {total})")));
    }
    let mut sorted: Vec<f64> = probabilities.iter().copied().filter(|&p| p > 0.0).collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut kept = Vec::new();
    let mut acc = 0.0;
    for p in sorted {
        if acc >= (1.0 - settings.tail) * total {
            break;
        }
        acc += p;
        kept.push(p);
    }
    let norm: f64 = kept.iter().sum();
    kept.iter_mut().for_each(|p| *p /= norm);
    if let Some(&largest) = kept.first() {
        if mean_photons * largest > 1e6 {
            return Err(Error::Numerical(format!(
                "mean photon number per mode {:.3e} exceeds the 1e6 overflow guard",
                mean_photons * largest
            )));
        }
    }
    let thermal: Vec<Geometric> = kept
        .iter()
        .map(|p| Geometric::new(1.0 / (1.0 + mean_photons * p)).map_err(|e| Error::Numerical(e.to_string())))
        .collect::<Result<_>>()?;

    let batches = settings.batches as u64;
    let blocks = pulses.div_ceil(settings.block_pulses);
    let per_block: Vec<Vec<Tally>> = (0..blocks)
        .into_par_iter()
        .map(|block| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(block);
            let mut tallies = vec![Tally::default(); settings.batches];
            let start = block * settings.block_pulses;
            let end = (start + settings.block_pulses).min(pulses);
            for pulse in start..end {
                let n: u64 = thermal.iter().map(|g| g.sample(&mut rng)).sum();
                let na = if n == 0 {
                    0
                } else {
                    Binomial::new(n, 0.5).expect("valid probability").sample(&mut rng)
                };
                let (mut a, mut b) = (na, n - na);
                if settings.click_detectors {
                    a = a.min(1);
                    b = b.min(1);
                }
                let t = &mut tallies[((pulse as u128 * batches as u128) / pulses as u128) as usize];
                t.pulses += 1;
                t.sum_a += a;
                t.sum_b += b;
                t.sum_ab += a as u128 * b as u128;
            }
            tallies
        })
        .collect();

    let mut batch_tallies = vec![Tally::default(); settings.batches];
    for block in &per_block {
        for (acc, t) in batch_tallies.iter_mut().zip(block) {
            acc.merge(t);
        }
    }
    let mut total_tally = Tally::default();
    batch_tallies.iter().for_each(|t| total_tally.merge(t));
    let g2 = total_tally.g2();
    let estimates: Vec<f64> = batch_tallies.iter().map(Tally::g2).collect();
    let m = estimates.iter().sum::<f64>() / estimates.len() as f64;
    let var = estimates.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (estimates.len() - 1) as f64;
    let standard_error = (var / estimates.len() as f64).sqrt();
    if !(g2.is_finite() && standard_error.is_finite()) {
        return Err(Error::Numerical(
            "too few detections to estimate g2; raise the mean photon number or pulse count".into(),
        ));
    }
    Ok(CountingRun {
        pulses,
        mean_photons,
        probabilities: kept,
        seed,
        click_detectors: settings.click_detectors,
        g2,
        standard_error,
        total: total_tally,
        batches: batch_tallies,
    })
}
