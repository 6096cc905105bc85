//! Output files: binary/CSV field snapshots and the CSV reports of each
//! pipeline. Floats are written with Rust's shortest round-trip format so
//! identical runs give identical bytes.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::galerkin::GalerkinState;
use crate::potentials::AssumptionReport;
use crate::semigroup::DecayReport;
use crate::solver::EnergyReport;
use crate::spectral::{Field, Grid, GridError};
use crate::stationary::StationaryPoint;

pub const SNAPSHOT_MAGIC: [u8; 8] = *b"CHTSNAP\0";

#[derive(Debug, thiserror::Error)]
pub enum SnapshotError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a snapshot file (bad magic)")]
    Magic,
    #[error("invalid snapshot header: {0}")]
    Header(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Header: magic, `u32` dims, `f64` lengths, `u32` resolution; then the
/// nodal values in row-major order (last axis fastest). All little endian.
pub fn write_snapshot(mut w: impl Write, field: &Field) -> std::io::Result<()> {
    let g = field.grid();
    let mut buf = Vec::with_capacity(16 + 12 * g.dims() + 8 * g.len());
    buf.extend_from_slice(&SNAPSHOT_MAGIC);
    buf.extend_from_slice(&(g.dims() as u32).to_le_bytes());
    for l in g.lengths() {
        buf.extend_from_slice(&l.to_le_bytes());
    }
    for &n in g.resolution() {
        buf.extend_from_slice(&(n as u32).to_le_bytes());
    }
    for v in field.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn read_snapshot(mut r: impl Read) -> Result<Field, SnapshotError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if magic != SNAPSHOT_MAGIC {
        return Err(SnapshotError::Magic);
    }
    let mut u4 = [0u8; 4];
    let mut f8 = [0u8; 8];
    r.read_exact(&mut u4)?;
    let dims = u32::from_le_bytes(u4) as usize;
    if !(1..=3).contains(&dims) {
        return Err(SnapshotError::Header(format!("dims = {dims}")));
    }
    let mut lengths = Vec::with_capacity(dims);
    for _ in 0..dims {
        r.read_exact(&mut f8)?;
        lengths.push(f64::from_le_bytes(f8));
    }
    let mut resolution = Vec::with_capacity(dims);
    for _ in 0..dims {
        r.read_exact(&mut u4)?;
        resolution.push(u32::from_le_bytes(u4) as usize);
    }
    let grid = Arc::new(Grid::new(dims, &lengths, &resolution)?);
    let mut raw = vec![0u8; 8 * grid.len()];
    r.read_exact(&mut raw)?;
    let values = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok(Field::new(grid, values)?)
}

pub fn save_snapshot(path: &Path, field: &Field) -> std::io::Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_snapshot(&mut w, field)?;
    w.flush()
}

pub fn load_snapshot(path: &Path) -> Result<Field, SnapshotError> {
    let f = std::fs::File::open(path)?;
    read_snapshot(std::io::BufReader::new(f))
}

/// Index columns `i0[,i1[,i2]]`, then `value`.
pub fn snapshot_csv(field: &Field) -> String {
    let g = field.grid();
    let mut out = String::new();
    for axis in 0..g.dims() {
        let _ = write!(out, "i{axis},");
    }
    out.push_str("value\n");
    for (flat, v) in field.values().iter().enumerate() {
        for i in g.multi_index(flat) {
            let _ = write!(out, "{i},");
        }
        let _ = writeln!(out, "{v}");
    }
    out
}

/// The `#` line that opens every CSV: seed plus assumption status.
pub fn header_line(seed: u64, assumptions: Option<&AssumptionReport>) -> String {
    let status = match assumptions {
        Some(r) if r.passed() => "pass".to_string(),
        Some(r) => {
            let failed: Vec<&str> = r.failures().map(|c| c.name).collect();
            format!("fail({})", failed.join(";"))
        }
        None => "unchecked".to_string(),
    };
    format!("# seed={seed} assumptions={status}\n")
}

fn push_row(out: &mut String, values: impl IntoIterator<Item = f64>) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(',');
        }
        first = false;
        let _ = write!(out, "{v}");
    }
    out.push('\n');
}

pub fn energy_csv(header: &str, reports: &[EnergyReport]) -> String {
    let mut out = String::from(header);
    out.push_str(&EnergyReport::CSV_HEADER.join(","));
    out.push('\n');
    for r in reports {
        push_row(&mut out, r.csv_values());
    }
    out
}

/// `t, a_1..a_n, b_1..b_n`.
pub fn galerkin_coefficients_csv(header: &str, samples: &[GalerkinState]) -> String {
    let mut out = String::from(header);
    let n = samples.first().map_or(0, GalerkinState::n);
    let mut cols = vec!["t".to_string()];
    cols.extend((1..=n).map(|j| format!("a_{j}")));
    cols.extend((1..=n).map(|j| format!("b_{j}")));
    out.push_str(&cols.join(","));
    out.push('\n');
    for s in samples {
        push_row(&mut out, std::iter::once(s.t).chain(s.a.iter().copied()).chain(s.b.iter().copied()));
    }
    out
}

pub const STATIONARY_HEADER: [&str; 10] = [
    "M", "chi_phi", "chi_sigma", "mu0", "E_value", "r1", "r2", "r3", "iterations", "converged",
];

pub fn stationary_csv(header: &str, chi_phi: f64, chi_sigma: f64, points: &[StationaryPoint]) -> String {
    let mut out = String::from(header);
    out.push_str(&STATIONARY_HEADER.join(","));
    out.push('\n');
    for p in points {
        let r = &p.residuals;
        let _ = writeln!(
            out,
            "{},{chi_phi},{chi_sigma},{},{},{},{},{},{},{}",
            p.m, p.mu0, p.e_value, r.r1, r.r2, r.r3, p.iterations, p.converged as u8
        );
    }
    out
}

pub fn decay_csv(header: &str, report: &DecayReport) -> String {
    let mut out = String::from(header);
    out.push_str("lambda,abscissa,slowest\n");
    for (i, b) in report.blocks.iter().enumerate() {
        let _ = writeln!(out, "{},{},{}", b.lambda, b.spectral_abscissa, (i == report.slowest) as u8);
    }
    out
}

/// `key = value` lines.
pub fn summary_text(seed: u64, entries: &[(&str, String)]) -> String {
    let mut out = format!("seed = {seed}\n");
    for (k, v) in entries {
        let _ = writeln!(out, "{k} = {v}");
    }
    out
}

pub fn decay_summary(seed: u64, report: &DecayReport) -> String {
    summary_text(
        seed,
        &[
            ("omega1", report.omega1.to_string()),
            ("omega2", report.omega2.to_string()),
            ("smoothing_constant", report.smoothing_constant.to_string()),
            ("small_t_slope", report.small_t_slope.to_string()),
            ("worst_decay_ratio", report.worst_decay_ratio.to_string()),
            ("violations", report.violations.len().to_string()),
            ("n_modes", report.n_modes.to_string()),
        ],
    )
}
