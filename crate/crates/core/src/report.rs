//! Verification reports (versioned JSON), CSV series and binary field
//! snapshots.
//!
//! Snapshot format: magic `PPWF`, then little-endian u32 version, d, n and
//! component count, then the components as little-endian f64 in row-major
//! order (axis 0 slowest).

use crate::grid::{GridField, TorusGrid};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"PPWF";
pub const SNAPSHOT_VERSION: u32 = 1;
pub const REPORT_SCHEMA: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bad snapshot: {0}")]
    BadSnapshot(String),
}

/// One verification check with its anchor phrase for traceability.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub anchor: String,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// A run report: schema version, scenario name, stage failures and checks.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Report {
    pub schema: u32,
    pub scenario: String,
    pub checks: Vec<CheckResult>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<StageFailure>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct StageFailure {
    pub stage: String,
    pub message: String,
}

impl Report {
    pub fn new(scenario: impl Into<String>) -> Self {
        Self {
            schema: REPORT_SCHEMA,
            scenario: scenario.into(),
            checks: Vec::new(),
            failures: Vec::new(),
        }
    }

    pub fn push(
        &mut self,
        name: impl Into<String>,
        anchor: impl Into<String>,
        residual: f64,
        tolerance: f64,
    ) {
        self.checks.push(CheckResult {
            name: name.into(),
            anchor: anchor.into(),
            residual,
            tolerance,
            pass: residual <= tolerance,
        });
    }

    pub fn fail_stage(&mut self, stage: impl Into<String>, message: impl Into<String>) {
        self.failures.push(StageFailure {
            stage: stage.into(),
            message: message.into(),
        });
    }

    pub fn all_pass(&self) -> bool {
        self.failures.is_empty() && self.checks.iter().all(|c| c.pass)
    }

    /// Deterministic serialization: fixed field order, fixed float format.
    pub fn to_json(&self) -> Result<String, ReportError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write(&self, path: &Path) -> Result<(), ReportError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Report, ReportError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Differences between two reports, for `report-diff`.
pub struct ReportDiff {
    pub missing: Vec<String>,
    pub extra: Vec<String>,
    pub changed: Vec<(String, f64, f64, bool, bool)>,
}

impl ReportDiff {
    pub fn compute(a: &Report, b: &Report) -> ReportDiff {
        let mut missing = Vec::new();
        let mut changed = Vec::new();
        for ca in &a.checks {
            match b.checks.iter().find(|cb| cb.name == ca.name) {
                None => missing.push(ca.name.clone()),
                Some(cb) => {
                    if ca.pass != cb.pass || ca.residual != cb.residual {
                        changed.push((ca.name.clone(), ca.residual, cb.residual, ca.pass, cb.pass));
                    }
                }
            }
        }
        let extra = b
            .checks
            .iter()
            .filter(|cb| a.checks.iter().all(|ca| ca.name != cb.name))
            .map(|cb| cb.name.clone())
            .collect();
        ReportDiff {
            missing,
            extra,
            changed,
        }
    }

    pub fn same_verdicts(&self) -> bool {
        self.missing.is_empty()
            && self.extra.is_empty()
            && self.changed.iter().all(|c| c.3 == c.4)
    }
}

/// Writes a field snapshot in the binary format.
pub fn write_snapshot<F: GridField>(path: &Path, field: &F) -> Result<(), ReportError> {
    let grid = field.grid();
    let mut file = std::fs::File::create(path)?;
    file.write_all(SNAPSHOT_MAGIC)?;
    file.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
    file.write_all(&(grid.dim() as u32).to_le_bytes())?;
    file.write_all(&(grid.points_per_axis() as u32).to_le_bytes())?;
    file.write_all(&(field.comps().len() as u32).to_le_bytes())?;
    for comp in field.comps() {
        for v in comp {
            file.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads a snapshot back; the caller states the expected field type.
pub fn read_snapshot<F: GridField>(path: &Path) -> Result<F, ReportError> {
    let mut file = std::fs::File::open(path)?;
    let mut header = [0u8; 4 + 4 * 4];
    file.read_exact(&mut header)?;
    if &header[0..4] != SNAPSHOT_MAGIC {
        return Err(ReportError::BadSnapshot("magic mismatch".into()));
    }
    let u32_at = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != SNAPSHOT_VERSION {
        return Err(ReportError::BadSnapshot(format!(
            "unsupported version {version}"
        )));
    }
    let d = u32_at(8) as usize;
    let n = u32_at(12) as usize;
    let comps = u32_at(16) as usize;
    let grid = TorusGrid::new(d, n)
        .map_err(|e| ReportError::BadSnapshot(e.to_string()))?;
    if comps != F::comp_count(d) {
        return Err(ReportError::BadSnapshot(format!(
            "component count {comps} does not match the requested field type"
        )));
    }
    let mut data = Vec::with_capacity(comps);
    let mut buf = vec![0u8; grid.len() * 8];
    for _ in 0..comps {
        file.read_exact(&mut buf)?;
        data.push(
            buf.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        );
    }
    Ok(F::from_comps(grid, data))
}

/// Writes `(s, max |ric_si|, max |ric_ij|, max |rho - target|)` rows.
pub fn write_curvature_csv(
    path: &Path,
    sgrid: crate::grid::SGrid,
    mixed: &[f64],
    spatial: &[f64],
    rho_err: &[f64],
) -> Result<(), ReportError> {
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "s,max_ric_si,max_ric_ij,max_rho_err")?;
    for i in 0..sgrid.len() {
        writeln!(
            file,
            "{},{},{},{}",
            sgrid.s(i),
            mixed[i],
            spatial[i],
            rho_err[i]
        )?;
    }
    Ok(())
}
