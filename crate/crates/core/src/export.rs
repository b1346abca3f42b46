//! CSV and JSON writers.
//!
//! Numbers are written with Rust's shortest round-trip formatting so identical
//! inputs give byte-identical files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::analysis::{G2Table, PurityMap};
use crate::dispersion::phasematching::PmCurve;
use crate::error::{Error, Result};
use crate::jsa::{JointSpectralAmplitude, Marginals};
use crate::spectra::{FrequencyGrid, ShaperMask};

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(BufWriter::new(file)))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

fn write_rows<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Matrix indexed `[signal, idler]` in corner layout: the header row holds the
/// idler wavelengths, each data row starts with its signal wavelength.
pub fn write_grid_matrix_csv(path: &Path, grid: &FrequencyGrid, values: &DMatrix<f64>) -> Result<()> {
    if values.shape() != grid.dims() {
        return Err(Error::invalid("matrix export", "shape does not match the grid"));
    }
    let mut header = vec!["signal_nm\\idler_nm".to_string()];
    header.extend(grid.idler_nm().iter().map(|v| v.to_string()));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = grid.signal_nm().into_iter().enumerate().map(|(r, s)| {
        std::iter::once(s.to_string())
            .chain(values.row(r).iter().map(|v| v.to_string()))
            .collect()
    });
    write_rows(path, &header, rows)
}

/// `|f|²` in corner layout.
pub fn write_jsa_csv(path: &Path, jsa: &JointSpectralAmplitude) -> Result<()> {
    write_grid_matrix_csv(path, jsa.grid(), &jsa.intensity())
}

/// Real and imaginary parts as two corner-layout files.
pub fn write_jsa_complex_csv(re_path: &Path, im_path: &Path, jsa: &JointSpectralAmplitude) -> Result<()> {
    write_grid_matrix_csv(re_path, jsa.grid(), &jsa.values().map(|c| c.re))?;
    write_grid_matrix_csv(im_path, jsa.grid(), &jsa.values().map(|c| c.im))
}

/// Long format `arm, wavelength_nm, omega_rad_per_s, density_per_rad_per_s`.
pub fn write_marginals_csv(path: &Path, grid: &FrequencyGrid, m: &Marginals) -> Result<()> {
    let arm = |name: &'static str, axis: &[f64], dens: &[f64]| -> Vec<Vec<String>> {
        axis.iter()
            .zip(dens)
            .map(|(&w, d)| {
                vec![
                    name.to_string(),
                    crate::units::nm_from_omega(w).to_string(),
                    w.to_string(),
                    d.to_string(),
                ]
            })
            .collect()
    };
    let mut rows = arm("signal", grid.signal(), &m.signal);
    rows.extend(arm("idler", grid.idler(), &m.idler));
    write_rows(
        path,
        &["arm", "wavelength_nm", "omega_rad_per_s", "density_per_rad_per_s"],
        rows,
    )
}

/// Long format `bandwidth_nm, length_mm, purity`; invalid cells have an empty purity.
pub fn write_purity_map_csv(path: &Path, map: &PurityMap) -> Result<()> {
    let rows = map.bandwidths_nm.iter().enumerate().flat_map(|(b, bw)| {
        map.lengths_mm.iter().enumerate().map(move |(l, len)| {
            vec![
                bw.to_string(),
                len.to_string(),
                map.purity[b][l].map(|p| p.to_string()).unwrap_or_default(),
            ]
        })
    });
    write_rows(path, &["bandwidth_nm", "length_mm", "purity"], rows)
}

pub fn write_pm_curve_csv(path: &Path, curve: &PmCurve) -> Result<()> {
    let rows = curve.points.iter().map(|p| {
        vec![
            p.pump_nm.to_string(),
            p.signal_nm.to_string(),
            p.idler_nm.to_string(),
            p.mismatch_per_m.to_string(),
        ]
    });
    write_rows(path, &["pump_nm", "signal_nm", "idler_nm", "mismatch_per_m"], rows)
}

pub fn write_mask_csv(path: &Path, mask: &ShaperMask) -> Result<()> {
    let rows = (0..mask.wavelength_nm.len()).map(|k| {
        vec![
            mask.wavelength_nm[k].to_string(),
            mask.amplitude[k].to_string(),
            mask.phase_rad[k].to_string(),
        ]
    });
    write_rows(path, &["wavelength_nm", "amplitude", "phase_rad"], rows)
}

/// Long format `order, bandwidth_nm, g2`.
pub fn write_g2_table_csv(path: &Path, table: &G2Table) -> Result<()> {
    let rows = table.orders.iter().enumerate().flat_map(|(o, order)| {
        table.bandwidths_nm.iter().enumerate().map(move |(b, bw)| {
            vec![order.to_string(), bw.to_string(), table.g2[o][b].to_string()]
        })
    });
    write_rows(path, &["order", "bandwidth_nm", "g2"], rows)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Numerical(format!("JSON encoding of {}: {e}", path.display())))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `text` verbatim.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
