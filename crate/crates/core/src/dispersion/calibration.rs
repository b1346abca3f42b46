//! Fitting the index correction to measured phasematching anchors.
//!
//! Three conditions (phasematching at the star point, phasematching at
//! degeneracy, equal pump/signal group velocity) fix three combinations of the
//! six correction coefficients. The rest is fixed by taking the correction
//! with the smallest weighted norm over the validity window, where the norm
//! counts both the index offset and its group-index contribution.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use super::{DispersionCorrection, DispersionModel, Polarization};
use crate::error::{Error, Result};
use crate::units::{linspace, omega_from_nm};

type Vector6 = SVector<f64, 6>;
type Matrix6 = SMatrix<f64, 6, 6>;
type Matrix3x6 = SMatrix<f64, 3, 6>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorPoint {
    pub pump_nm: f64,
    pub signal_nm: f64,
    pub idler_nm: f64,
}

impl AnchorPoint {
    /// Pump wavelength implied by the signal and idler, minus the stated pump.
    pub fn energy_defect_nm(&self) -> f64 {
        1.0 / (1.0 / self.signal_nm + 1.0 / self.idler_nm) - self.pump_nm
    }

    pub fn omegas(&self) -> (f64, f64) {
        (omega_from_nm(self.signal_nm), omega_from_nm(self.idler_nm))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationAnchors {
    pub star: AnchorPoint,
    pub degeneracy: AnchorPoint,
    /// Require the TE pump and TM signal group velocities to agree at the star point.
    pub match_group_velocity: bool,
}

impl Default for CalibrationAnchors {
    fn default() -> Self {
        Self {
            star: AnchorPoint {
                pump_nm: 670.0,
                signal_nm: 1411.0,
                idler_nm: 1276.0,
            },
            degeneracy: AnchorPoint {
                pump_nm: 637.5,
                signal_nm: 1275.0,
                idler_nm: 1275.0,
            },
            match_group_velocity: true,
        }
    }
}

impl CalibrationAnchors {
    pub fn validate(&self) -> Result<()> {
        for (name, anchor) in [("star", &self.star), ("degeneracy", &self.degeneracy)] {
            let defect = anchor.energy_defect_nm();
            if !(defect.abs() <= 0.2) {
                return Err(Error::invalid(
                    "calibration anchors",
                    format!("{name} anchor violates energy conservation by {defect:.3} nm in pump wavelength"),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationSettings {
    /// Weight of the group-index term in the minimum-norm objective.
    pub group_index_weight: f64,
    pub max_iterations: usize,
    pub mismatch_tolerance_per_m: f64,
    pub velocity_tolerance: f64,
    /// Quadrature nodes (uniform in wavelength) for the norm over the validity window.
    pub quadrature_points: usize,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        Self {
            group_index_weight: 3.0,
            max_iterations: 200,
            mismatch_tolerance_per_m: 1e-3,
            velocity_tolerance: 1e-3,
            quadrature_points: 512,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorResiduals {
    pub star_per_m: f64,
    pub degeneracy_per_m: f64,
    /// `(v_p − v_s)/v_p` at the star point; zero when the flag is off.
    pub group_velocity_relative: f64,
}

impl AnchorResiduals {
    fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.star_per_m, self.degeneracy_per_m, self.group_velocity_relative)
    }

    pub fn within(&self, settings: &CalibrationSettings) -> bool {
        self.star_per_m.abs() < settings.mismatch_tolerance_per_m
            && self.degeneracy_per_m.abs() < settings.mismatch_tolerance_per_m
            && self.group_velocity_relative.abs() < settings.velocity_tolerance
    }

    fn scaled_norm(&self, settings: &CalibrationSettings) -> f64 {
        (self.star_per_m / settings.mismatch_tolerance_per_m).hypot(
            (self.degeneracy_per_m / settings.mismatch_tolerance_per_m)
                .hypot(self.group_velocity_relative / settings.velocity_tolerance),
        )
    }
}

/// Evaluates the anchor conditions on `model`.
pub fn anchor_residuals(model: &DispersionModel, anchors: &CalibrationAnchors) -> Result<AnchorResiduals> {
    let (ws, wi) = anchors.star.omegas();
    let star = model.phase_mismatch(ws, wi)?;
    let (ds, di) = anchors.degeneracy.omegas();
    let degeneracy = model.phase_mismatch(ds, di)?;
    let group_velocity = if anchors.match_group_velocity {
        let pump_nm = crate::units::nm_from_omega(ws + wi);
        let vp = model.group_velocity(Polarization::Te, pump_nm)?;
        let vs = model.group_velocity(Polarization::Tm, anchors.star.signal_nm)?;
        (vp - vs) / vp
    } else {
        0.0
    };
    Ok(AnchorResiduals {
        star_per_m: star,
        degeneracy_per_m: degeneracy,
        group_velocity_relative: group_velocity,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Calibration {
    pub model: DispersionModel,
    /// Increment added to the input model's correction.
    pub delta: DispersionCorrection,
    pub residuals: AnchorResiduals,
    pub iterations: usize,
}

/// Weighted Gram matrix of the correction basis over the validity window.
fn gram_matrix(model: &DispersionModel, settings: &CalibrationSettings) -> Matrix6 {
    let (lo, hi) = model.window_nm();
    let reference = model.correction().reference_omega();
    let nodes: Vec<f64> = linspace(lo, hi, settings.quadrature_points.max(2))
        .into_iter()
        .map(omega_from_nm)
        .collect();
    let mut block = Matrix3::<f64>::zeros();
    for &w in &nodes {
        let u = (w - reference) / reference;
        let r = w / reference;
        let phi = Vector3::new(1.0, u, u * u);
        let psi = Vector3::new(1.0, u + r, u * u + 2.0 * u * r);
        block += phi * phi.transpose() + settings.group_index_weight * psi * psi.transpose();
    }
    block /= nodes.len() as f64;
    let mut g = Matrix6::zeros();
    g.fixed_view_mut::<3, 3>(0, 0).copy_from(&block);
    g.fixed_view_mut::<3, 3>(3, 3).copy_from(&block);
    g
}

/// Fits the correction increment that makes `model` satisfy `anchors`.
///
/// Damped minimum-norm Newton iteration from a zero increment. The returned
/// model carries the composed correction.
pub fn calibrate(
    model: &DispersionModel,
    anchors: &CalibrationAnchors,
    settings: &CalibrationSettings,
) -> Result<Calibration> {
    anchors.validate()?;
    if !(settings.group_index_weight >= 0.0) || settings.max_iterations == 0 {
        return Err(Error::invalid("calibration settings", "weight must be ≥ 0 and iterations ≥ 1"));
    }
    let reference_nm = model.correction().reference_nm;
    let base = *model.correction();
    let apply = |x: &Vector6| -> Result<DispersionModel> {
        let delta = DispersionCorrection::from_coefficients(reference_nm, (*x).into());
        model.with_correction(base.compose(&delta)?)
    };
    let evaluate = |x: &Vector6| -> Result<AnchorResiduals> { anchor_residuals(&apply(x)?, anchors) };

    let gram = gram_matrix(model, settings);
    let gram_inv = gram
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular calibration Gram matrix".into()))?;

    let mut x = Vector6::zeros();
    let mut current = evaluate(&x)?;
    let mut iterations = 0;
    while !current.within(settings) {
        if iterations == settings.max_iterations {
            return Err(Error::Calibration {
                iterations,
                star: current.star_per_m,
                degeneracy: current.degeneracy_per_m,
                group_velocity: current.group_velocity_relative,
            });
        }
        iterations += 1;

        let h = 1e-7;
        let mut jac = Matrix3x6::zeros();
        for j in 0..6 {
            let mut xp = x;
            xp[j] += h;
            let mut xm = x;
            xm[j] -= h;
            let col = (evaluate(&xp)?.as_vector() - evaluate(&xm)?.as_vector()) / (2.0 * h);
            jac.set_column(j, &col);
        }
        if !anchors.match_group_velocity {
            jac.row_mut(2).fill(0.0);
        }

        let gj = gram_inv * jac.transpose();
        let mut normal = jac * gj;
        if !anchors.match_group_velocity {
            normal[(2, 2)] = 1.0;
        }
        let normal_inv = normal
            .try_inverse()
            .ok_or_else(|| Error::Numerical("calibration Jacobian is rank deficient".into()))?;
        let step = gj * (normal_inv * current.as_vector());

        let start = current.scaled_norm(settings);
        let mut damping = 1.0;
        loop {
            let trial = x - damping * step;
            if let Ok(r) = evaluate(&trial) {
                if r.scaled_norm(settings) < start {
                    x = trial;
                    current = r;
                    break;
                }
            }
            damping *= 0.5;
            if damping < 1e-9 {
                return Err(Error::Calibration {
                    iterations,
                    star: current.star_per_m,
                    degeneracy: current.degeneracy_per_m,
                    group_velocity: current.group_velocity_relative,
                });
            }
        }
    }

    let delta = DispersionCorrection::from_coefficients(reference_nm, x.into());
    Ok(Calibration {
        model: apply(&x)?,
        delta,
        residuals: current,
        iterations,
    })
}
