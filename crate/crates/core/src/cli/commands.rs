use serde::Serialize;

use super::config::{DispersionSection, RunConfig};
use super::Outputs;
use crate::analysis::{
    g2_prediction_table, k_from_jsi, purity_from_gram, purity_map, schmidt_spectrum, Arm, SchmidtSpectrum,
};
use crate::dispersion::{calibrate, solve_pm_at, solve_pm_curve, PmPoint, Polarization};
use crate::error::{Error, Result};
use crate::export;
use crate::jsa::{apply_filters, marginals, JointSpectralAmplitude, SourceDesign};
use crate::measurement::{
    intrinsic_efficiency, klyshko, mc_g2_with, mean_photon, simulate_jsi_measurement, tof_resolution,
    waveguide_transmission, ArmChain, CountingRun, IntrinsicEfficiency,
};
use crate::spectra::{discretize_to_shaper, FrequencyGrid, PumpSpectrum, PumpSpectrumSpec, SpectralFilter};

pub(super) fn run(name: &str, config: &RunConfig, out: &mut Outputs) -> Result<()> {
    match name {
        "calibrate" => calibrate_cmd(config, out),
        "pm-curve" => pm_curve(config, out),
        "jsa" => jsa(config, out),
        "purity-map" => purity_map_cmd(config, out),
        "filter-study" => filter_study(config, out),
        "jsi-sim" => jsi_sim(config, out),
        "g2-table" => g2_table(config, out),
        "g2-mc" => g2_mc(config, out),
        "budget" => budget(config, out),
        "shaper-mask" => shaper_mask(config, out),
        _ => unreachable!("subcommand list is fixed by the parser"),
    }
}

#[derive(Serialize)]
struct GridInfo {
    signal_window_nm: (f64, f64),
    idler_window_nm: (f64, f64),
    signal_points: usize,
    idler_points: usize,
}

impl From<&FrequencyGrid> for GridInfo {
    fn from(g: &FrequencyGrid) -> Self {
        let (ns, ni) = g.dims();
        Self {
            signal_window_nm: g.signal_window_nm(),
            idler_window_nm: g.idler_window_nm(),
            signal_points: ns,
            idler_points: ni,
        }
    }
}

#[derive(Serialize)]
struct CorrectionFile<'a> {
    dispersion: &'a DispersionSection,
}

#[derive(Serialize)]
struct CalibrationReport {
    iterations: usize,
    converged_correction: crate::dispersion::DispersionCorrection,
    delta: crate::dispersion::DispersionCorrection,
    residuals: crate::dispersion::AnchorResiduals,
    max_abs_index_correction: f64,
    star_roots: Vec<PmPoint>,
    degeneracy_roots: Vec<PmPoint>,
    /// `(v_p − v_s)/v_p` with the TE pump and TM signal at the star anchor.
    group_velocity_mismatch_relative: f64,
}

fn calibrate_cmd(config: &RunConfig, out: &mut Outputs) -> Result<()> {
    let bulk = config.bulk_model()?;
    let d = &config.dispersion;
    let base = match d.correction {
        Some(c) => bulk.with_correction(c)?,
        None => bulk,
    };
    let cal = calibrate(&base, &d.anchors, &d.calibration)?;
    let model = &cal.model;
    let fragment = DispersionSection {
        calibrate: false,
        correction: Some(*model.correction()),
        ..d.clone()
    };
    let text = toml::to_string(&CorrectionFile { dispersion: &fragment })
        .map_err(|e| Error::Numerical(format!("encoding corrections: {e}")))?;
    export::write_text(&out.path("corrections.toml"), &text)?;

    let star = d.anchors.star;
    let vp = model.group_velocity(Polarization::Te, star.pump_nm)?;
    let vs = model.group_velocity(Polarization::Tm, star.signal_nm)?;
    let report = CalibrationReport {
        iterations: cal.iterations,
        converged_correction: *model.correction(),
        delta: cal.delta,
        residuals: cal.residuals,
        max_abs_index_correction: model.correction().max_abs_offset(model.window_nm()),
        star_roots: solve_pm_at(model, star.pump_nm)?,
        degeneracy_roots: solve_pm_at(model, d.anchors.degeneracy.pump_nm)?,
        group_velocity_mismatch_relative: (vp - vs) / vp,
    };
    export::write_json(&out.path("calibration.json"), &report)?;
    println!(
        "calibrated in {} iterations; max |δn| = {:.4}; group-velocity mismatch {:.2e}",
        report.iterations, report.max_abs_index_correction, report.group_velocity_mismatch_relative
    );
    Ok(())
}

#[derive(Serialize)]
struct PmReport {
    pump_range_nm: [f64; 2],
    steps: usize,
    unsolved_pump_nm: Vec<f64>,
    star_roots: Vec<PmPoint>,
    degeneracy_roots: Vec<PmPoint>,
}

fn pm_curve(config: &RunConfig, out: &mut Outputs) -> Result<()> {
    let model = config.model()?;
    let a = &config.analysis;
    let curve = solve_pm_curve(&model, (a.pm_pump_range_nm[0], a.pm_pump_range_nm[1]), a.pm_steps)?;
    export::write_pm_curve_csv(&out.path("pm_curve.csv"), &curve)?;
    let anchors = &config.dispersion.anchors;
    let report = PmReport {
        pump_range_nm: a.pm_pump_range_nm,
        steps: a.pm_steps,
        unsolved_pump_nm: curve.unsolved_pump_nm.clone(),
        star_roots: solve_pm_at(&model, anchors.star.pump_nm)?,
        degeneracy_roots: solve_pm_at(&model, anchors.degeneracy.pump_nm)?,
    };
    export::write_json(&out.path("pm_curve.json"), &report)?;
    for p in report.star_roots.iter().chain(&report.degeneracy_roots) {
        println!(
            "pump {} nm: signal {:.3} nm, idler {:.3} nm",
            p.pump_nm, p.signal_nm, p.idler_nm
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct JsaSidecar<'a> {
    grid: GridInfo,
    pump: &'a PumpSpectrum,
    phasematching: &'a crate::jsa::PhasematchingSpec,
    signal_filter: &'a Option<SpectralFilter>,
    idler_filter: &'a Option<SpectralFilter>,
    normalized: bool,
    transmitted_fraction: f64,
    layout: &'static str,
}

fn jsa(config: &RunConfig, out: &mut Outputs) -> Result<()> {
    let design = config.design_with(config.model()?)?;
    let filtered = design.jsa()?;
    let jsa = &filtered.jsa;
    export::write_jsa_csv(&out.path("jsa.csv"), jsa)?;
    if config.output.complex_amplitudes {
        export::write_jsa_complex_csv(&out.path("jsa_re.csv"), &out.path("jsa_im.csv"), jsa)?;
    }
    export::write_json(
        &out.path("jsa.json"),
        &JsaSidecar {
            grid: jsa.grid().into(),
            pump: &design.pump,
            phasematching: &design.phasematching,
            signal_filter: &design.signal_filter,
            idler_filter: &design.idler_filter,
            normalized: jsa.is_normalized(),
            transmitted_fraction: filtered.transmitted_fraction,
            layout: "|f|^2 indexed [signal, idler]; header row holds idler wavelengths, first column signal wavelengths",
        },
    )?;
    export::write_marginals_csv(&out.path("marginals.csv"), jsa.grid(), &marginals(jsa))?;
    let spectrum = schmidt_spectrum(jsa)?;
    export::write_json(&out.path("schmidt.json"), &spectrum)?;
    println!("K = {:.4}  P = {:.4}", spectrum.schmidt_number, spectrum.purity);
    Ok(())
}

#[derive(Serialize)]
struct PurityMapReport<'a> {
    map: &'a crate::analysis::PurityMap,
    grid_policy: &'a crate::analysis::GridPolicy,
    maximum: Option<(f64, f64, f64)>,
}

fn purity_map_cmd(config: &RunConfig, out: &mut Outputs) -> Result<()> {
    let model = config.model()?;
    let a = &config.analysis;
    let map = purity_map(
        &model,
        &config.source.pump.shape,
        &config.bandwidths()?,
        &config.lengths()?,
        &a.grid_policy,
    )?;
    export::write_purity_map_csv(&out.path("purity_map.csv"), &map)?;
    let maximum = map.maximum();
    export::write_json(
        &out.path("purity_map.json"),
        &PurityMapReport {
            map: &map,
            grid_policy: &a.grid_policy,
            maximum,
        },
    )?;
    if let Some((p, b, l)) = maximum {
        println!("maximum purity {p:.4} at {b:.3} nm, {l:.2} mm");
    }
    if !map.all_valid() {
        eprintln!("warning: {} invalid cells", map.invalid.len());
    }
    Ok(())
}

#[derive(Serialize)]
struct FilterCase {
    schmidt_number: f64,
    purity: f64,
    transmitted_fraction: f64,
}

#[derive(Serialize)]
struct FilterStudy {
    grid: GridInfo,
    signal_filter: SpectralFilter,
    idler_filter: SpectralFilter,
    unfiltered: FilterCase,
    idler_filtered: FilterCase,
    signal_filtered: FilterCase,
    both_filtered: FilterCase,
    signal_only_change: f64,
}

fn filter_case(jsa: &JointSpectralAmplitude, s: Option<&SpectralFilter>, i: Option<&SpectralFilter>) -> Result<FilterCase> {
    let f = apply_filters(jsa, s, i)?;
    let purity = purity_from_gram(f.jsa.values())?;
    Ok(FilterCase {
        schmidt_number: 1.0 / purity,
        purity,
        transmitted_fraction: f.transmitted_fraction,
    })
}

fn filter_study(config: &RunConfig, out: &mut Outputs) -> Result<()> {
    let design = config.design_with(config.model()?)?;
    let sf = design
        .signal_filter
        .clone()
        .ok_or_else(|| Error::config("source.signal_filter", "filter-study needs a signal filter"))?;
    let idf = design
        .idler_filter
        .clone()
        .ok_or_else(|| Error::config("source.idler_filter", "filter-study needs an idler filter"))?;
    let jsa = design.unfiltered_jsa()?;
    let unfiltered = filter_case(&jsa, None, None)?;
    let idler_filtered = filter_case(&jsa, None, Some(&idf))?;
    let signal_filtered = filter_case(&jsa, Some(&sf), None)?;
    let both_filtered = filter_case(&jsa, Some(&sf), Some(&idf))?;
    export::write_marginals_csv(&out.path("marginals_unfiltered.csv"), jsa.grid(), &marginals(&jsa))?;
    let idler_only = apply_filters(&jsa, None, Some(&idf))?.jsa;
    export::write_marginals_csv(
        &out.path("marginals_idler_filtered.csv"),
        idler_only.grid(),
        &marginals(&idler_only),
    )?;
    let study = FilterStudy {
        grid: jsa.grid().into(),
        signal_only_change: signal_filtered.schmidt_number - unfiltered.schmidt_number,
        signal_filter: sf,
        idler_filter: idf,
        unfiltered,
        idler_filtered,
        signal_filtered,
        both_filtered,
    };
    export::write_json(&out.path("filter_study.json"), &study)?;
    println!(
        "K unfiltered {:.4}, idler filtered {:.4}, signal filtered {:.4}",
        study.unfiltered.schmidt_number, study.idler_filtered.schmidt_number, study.signal_filtered.schmidt_number
    );
    Ok(())
}

#[derive(Serialize)]
struct JsiSimCase {
    file: String,
    pump: PumpSpectrumSpec,
    seed: u64,
    theory_schmidt_number: f64,
    measured_schmidt_number: f64,
    measured: SchmidtSpectrum,
}

#[derive(Serialize)]
struct JsiSimReport {
    signal_resolution_nm: f64,
    idler_resolution_nm: f64,
    events: f64,
    cases: Vec<JsiSimCase>,
}

fn jsi_sim(config: &RunConfig, out: &mut Outputs) -> Result<()> {
    let model = config.model()?;
    let m = &config.measurement;
    let res_s = match m.signal_resolution_nm {
        Some(r) => r,
        None => tof_resolution(&m.tof)?,
    };
    let pumps = if config.analysis.jsi_pumps.is_empty() {
        vec![config.source.pump.clone()]
    } else {
        config.analysis.jsi_pumps.clone()
    };
    let mut cases = Vec::new();
    for (k, spec) in pumps.into_iter().enumerate() {
        let pump = PumpSpectrum::try_from(spec.clone())
            .map_err(|e| Error::config(format!("analysis.jsi_pumps[{k}]"), e.to_string()))?;
        let design = SourceDesign {
            pump,
            ..config.design_with(model.clone())?
        };
        let jsa = design.jsa()?.jsa;
        // one substream per pump so adding a pump leaves the others unchanged
        let seed = m.seed.wrapping_add(k as u64);
        let counts = simulate_jsi_measurement(&jsa, res_s, m.idler_resolution_nm, m.events, seed)?;
        let file = format!("jsi_sim_{k}.csv");
        export::write_grid_matrix_csv(&out.path(&file), jsa.grid(), &counts)?;
        let measured = k_from_jsi(&counts)?;
        let theory = 1.0 / purity_from_gram(jsa.values())?;
        println!("pump {k}: K theory {theory:.4}, K from simulated JSI {:.4}", measured.schmidt_number);
        cases.push(JsiSimCase {
            file,
            pump: spec,
            seed,
            theory_schmidt_number: theory,
            measured_schmidt_number: measured.schmidt_number,
            measured,
        });
    }
    export::write_json(
        &out.path("jsi_sim.json"),
        &JsiSimReport {
            signal_resolution_nm: res_s,
            idler_resolution_nm: m.idler_resolution_nm,
            events: m.events,
            cases,
        },
    )
}

fn g2_table(config: &RunConfig, out: &mut Outputs) -> Result<()> {
    let design = config.design_with(config.model()?)?;
    let a = &config.analysis;
    let table = g2_prediction_table(
        &design,
        &a.g2_orders,
        &a.g2_bandwidths_nm,
        a.g2_arm,
        design.idler_filter.as_ref(),
    )?;
    export::write_g2_table_csv(&out.path("g2_table.csv"), &table)?;
    export::write_json(&out.path("g2_table.json"), &table)?;
    for (o, row) in table.orders.iter().zip(&table.g2) {
        let cells: Vec<String> = row.iter().map(|g| format!("{g:.4}")).collect();
        println!("HG{o}: {}", cells.join(" "));
    }
    Ok(())
}

#[derive(Serialize)]
struct G2McReport {
    arm: Arm,
    analytic_g2: f64,
    schmidt_number: f64,
    deviation_in_standard_errors: f64,
    run: CountingRun,
}

fn g2_mc(config: &RunConfig, out: &mut Outputs) -> Result<()> {
    let design = config.design_with(config.model()?)?;
    let m = &config.measurement;
    let arm = config.analysis.g2_arm;
    let jsa = design.unfiltered_jsa()?;
    let filtered = match arm {
        Arm::Idler => apply_filters(&jsa, None, design.idler_filter.as_ref())?,
        Arm::Signal => apply_filters(&jsa, design.signal_filter.as_ref(), None)?,
    };
    let spectrum = schmidt_spectrum(&filtered.jsa)?;
    let run = mc_g2_with(&spectrum.probabilities, m.mean_photons, m.pulses, m.seed, &m.monte_carlo)?;
    let report = G2McReport {
        arm,
        analytic_g2: spectrum.g2,
        schmidt_number: spectrum.schmidt_number,
        deviation_in_standard_errors: (run.g2 - spectrum.g2) / run.standard_error,
        run,
    };
    export::write_json(&out.path("g2_mc.json"), &report)?;
    println!(
        "g2 = {:.4} ± {:.4} (analytic {:.4})",
        report.run.g2, report.run.standard_error, report.analytic_g2
    );
    Ok(())
}

#[derive(Serialize)]
struct ArmBudget {
    klyshko: f64,
    factors: Vec<f64>,
    intrinsic: IntrinsicEfficiency,
}

#[derive(Serialize)]
struct BudgetReport {
    signal: ArmBudget,
    idler: ArmBudget,
    include_fibre_coupling: bool,
    waveguide_length_mm: f64,
    waveguide_transmission_te: f64,
    waveguide_transmission_tm: f64,
    tof_resolution_nm: f64,
    brightness_alpha_per_sqrt_pj: f64,
}

fn arm_budget(klyshko: f64, chain: &ArmChain, coupling: bool) -> Result<ArmBudget> {
    let mut factors = vec![chain.transmission, chain.detector_efficiency];
    if coupling {
        factors.push(chain.fibre_coupling);
    }
    Ok(ArmBudget {
        klyshko,
        intrinsic: intrinsic_efficiency(klyshko, &factors)?,
        factors,
    })
}

fn budget(config: &RunConfig, out: &mut Outputs) -> Result<()> {
    let m = &config.measurement;
    let (eta_s, eta_i) = match m.counts {
        Some(c) => klyshko(c.singles_signal, c.singles_idler, c.coincidences)?,
        None => (m.klyshko_signal, m.klyshko_idler),
    };
    let length_cm = config.source.length_mm / 10.0;
    let report = BudgetReport {
        signal: arm_budget(eta_s, &m.chain.signal, m.include_fibre_coupling)?,
        idler: arm_budget(eta_i, &m.chain.idler, m.include_fibre_coupling)?,
        include_fibre_coupling: m.include_fibre_coupling,
        waveguide_length_mm: config.source.length_mm,
        waveguide_transmission_te: waveguide_transmission(m.chain.loss_te_db_per_cm, length_cm)?,
        waveguide_transmission_tm: waveguide_transmission(m.chain.loss_tm_db_per_cm, length_cm)?,
        tof_resolution_nm: tof_resolution(&m.tof)?,
        brightness_alpha_per_sqrt_pj: m.brightness_alpha_per_sqrt_pj,
    };
    export::write_json(&out.path("budget.json"), &report)?;
    let mut rows = Vec::new();
    for (i, &e) in m.pulse_energies_pj.iter().enumerate() {
        let n = mean_photon(e, m.brightness_alpha_per_sqrt_pj)
            .map_err(|err| Error::config(format!("measurement.pulse_energies_pj[{i}]"), err.to_string()))?;
        rows.push((e, n));
    }
    let path = out.path("brightness.csv");
    let mut text = String::from("pulse_energy_pj,mean_photons\r\n");
    for (e, n) in &rows {
        text.push_str(&format!("{e},{n}\r\n"));
    }
    export::write_text(&path, &text)?;
    println!("signal intrinsic efficiency {:.3}", report.signal.intrinsic.value);
    println!("idler intrinsic efficiency {:.3}", report.idler.intrinsic.value);
    println!(
        "waveguide transmission TE {:.4}, TM {:.4}",
        report.waveguide_transmission_te, report.waveguide_transmission_tm
    );
    if let Some((e, n)) = rows.last() {
        println!("mean photon number {n:.3} at {e} pJ");
    }
    for (arm, b) in [("signal", &report.signal), ("idler", &report.idler)] {
        if b.intrinsic.inconsistent {
            eprintln!("warning: {arm} budget exceeds unity ({:.3})", b.intrinsic.raw);
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct MaskReport {
    pump: PumpSpectrumSpec,
    resolution_nm: f64,
    samples: usize,
    fidelity: f64,
}

fn shaper_mask(config: &RunConfig, out: &mut Outputs) -> Result<()> {
    let pump = config.pump()?;
    let mask = discretize_to_shaper(&pump, config.analysis.shaper_resolution_nm)?;
    export::write_mask_csv(&out.path("mask.csv"), &mask)?;
    export::write_json(
        &out.path("mask.json"),
        &MaskReport {
            pump: config.source.pump.clone(),
            resolution_nm: mask.resolution_nm,
            samples: mask.wavelength_nm.len(),
            fidelity: mask.fidelity,
        },
    )?;
    println!("{} mask samples, fidelity {:.6}", mask.wavelength_nm.len(), mask.fidelity);
    Ok(())
}
