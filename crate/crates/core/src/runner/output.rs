//! Output files. Floats use the shortest representation that parses back to
//! the same bits, so every artifact round-trips exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use super::{ConvergenceReport, RunError, RunSummary, SweetSpotReport, TextureRun, TransitionRow};
use crate::topology::TextureGrid;

fn io(path: &Path, e: impl std::fmt::Display) -> RunError {
    RunError::Io(format!("{}: {e}", path.display()))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), RunError> {
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io(&path, e))?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| io(&path, e))
}

fn ensure_dir(dir: &Path) -> Result<(), RunError> {
    fs::create_dir_all(dir).map_err(|e| io(dir, e))
}

/// `kx,ky,sbar_x,sbar_y,sbar_z,omega,defined`, one row per node, `kx` fastest.
pub fn texture_csv(t: &TextureGrid) -> String {
    let mut out = String::from("kx,ky,sbar_x,sbar_y,sbar_z,omega,defined\n");
    for i in 0..t.grid.len() {
        let k = t.grid.at(i);
        let s = t.s_bar[i];
        writeln!(
            out,
            "{:?},{:?},{:?},{:?},{:?},{:?},{}",
            k.kx, k.ky, s[0], s[1], s[2], t.omega[i], t.defined[i] as u8
        )
        .expect("writing to a String cannot fail");
    }
    out
}

/// Writes `texture.csv`, `dbis.json`, `summary.json` and `timing.json`.
pub fn write_texture_run(run: &TextureRun, dir: &Path) -> Result<(), RunError> {
    ensure_dir(dir)?;
    let s = &run.summary;
    let csv_path = dir.join("texture.csv");
    fs::write(&csv_path, texture_csv(&s.texture)).map_err(|e| io(&csv_path, e))?;
    #[derive(Serialize)]
    struct DbisFile<'a> {
        dbis: &'a Option<crate::topology::DbisExtraction>,
        error: &'a Option<String>,
        windings: &'a Vec<Option<i32>>,
    }
    write_json(
        dir,
        "dbis.json",
        &DbisFile {
            dbis: &s.dbis,
            error: &s.dbis_error,
            windings: &s.windings,
        },
    )?;
    write_json(dir, "summary.json", s)?;
    write_json(dir, "timing.json", &run.timing)
}

pub fn read_summary(path: &Path) -> Result<RunSummary, RunError> {
    let text = fs::read_to_string(path).map_err(|e| io(path, e))?;
    serde_json::from_str(&text).map_err(|e| io(path, e))
}

/// Writes `transitions.json` and a compact `transitions.csv` verdict table.
pub fn write_transitions(rows: &[TransitionRow], dir: &Path) -> Result<(), RunError> {
    ensure_dir(dir)?;
    write_json(dir, "transitions.json", &rows)?;
    let mut csv = String::from("name,phase,n_e\n");
    for r in rows {
        let phase = serde_json::to_value(r.phase).expect("phase serializes");
        let ne: Vec<String> = r
            .n_e
            .iter()
            .map(|n| n.map_or_else(|| "-".to_string(), |v| v.to_string()))
            .collect();
        writeln!(
            csv,
            "{},{},{}",
            r.name.as_deref().unwrap_or(""),
            phase.as_str().unwrap_or(""),
            ne.join(" ")
        )
        .expect("writing to a String cannot fail");
    }
    let path = dir.join("transitions.csv");
    fs::write(&path, csv).map_err(|e| io(&path, e))
}

pub fn write_convergence(report: &ConvergenceReport, dir: &Path) -> Result<(), RunError> {
    ensure_dir(dir)?;
    write_json(dir, "convergence.json", report)
}

pub fn write_sweetspot(report: &SweetSpotReport, dir: &Path) -> Result<(), RunError> {
    ensure_dir(dir)?;
    write_json(dir, "sweetspot.json", report)
}
