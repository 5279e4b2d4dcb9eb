//! Dataset types and file formats: forcing grids, discharge histories,
//! ensemble trajectory sets, normalization statistics, and the synthetic
//! generator used as a test oracle.
//!
//! Forcing CSV: header `year,month,row,col,precip_mm,temp_c`, one line per
//! (month, cell); cells absent from the file are outside the basin mask.
//! Discharge CSV: header `year,month,plant_id,discharge_m3s`.
//! Ensembles: a directory of `traj_000.csv`... plus `manifest.json`.

pub mod synth;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calendar::{check_contiguous, Window, YearMonth};
use crate::error::{HydroError, Result};
use crate::fmtnum::fmt_sig9;
use crate::linalg::Mat;

/// Standard-deviation floor for zero-variance cells.
pub const STD_FLOOR: f64 = 1e-6;

const FORCING_HEADER: &str = "year,month,row,col,precip_mm,temp_c";
const DISCHARGE_HEADER: &str = "year,month,plant_id,discharge_m3s";

/// Per-month precipitation and temperature grids over a basin.
///
/// Grids are stored flattened row-major as (month, cell) matrices; cells
/// outside the mask hold zeros and are never read.
#[derive(Debug, Clone, PartialEq)]
pub struct ForcingSeries {
    pub months: Vec<YearMonth>,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub mask: Vec<bool>,
    pub precip: Mat,
    pub temp: Mat,
}

impl ForcingSeries {
    /// Number of cells inside the mask.
    pub fn n_cells(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Flat grid indices of masked cells, in row-major order. This fixed
    /// ordering defines the model's input layout.
    pub fn mask_indices(&self) -> Vec<usize> {
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n_grid = self.grid_rows * self.grid_cols;
        if self.mask.len() != n_grid {
            return Err(HydroError::Shape("mask length != grid size".into()));
        }
        if self.precip.rows() != self.months.len()
            || self.temp.rows() != self.months.len()
            || self.precip.cols() != n_grid
            || self.temp.cols() != n_grid
        {
            return Err(HydroError::Shape(
                "forcing matrices do not match months/grid".into(),
            ));
        }
        check_contiguous(&self.months)?;
        for (t, ym) in self.months.iter().enumerate() {
            for (i, &inside) in self.mask.iter().enumerate() {
                if inside && self.precip[(t, i)] < 0.0 {
                    return Err(HydroError::Data(format!(
                        "negative precipitation at {ym}, cell {i}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Restriction to the months inside a year window.
    pub fn window(&self, w: &Window) -> Result<ForcingSeries> {
        let rows = w.select(&self.months);
        if rows.is_empty() {
            return Err(HydroError::Data(format!(
                "window {}..={} selects no forcing months",
                w.start_year, w.end_year
            )));
        }
        let n_grid = self.grid_rows * self.grid_cols;
        let mut precip = Mat::zeros(rows.len(), n_grid);
        let mut temp = Mat::zeros(rows.len(), n_grid);
        for (k, &t) in rows.iter().enumerate() {
            precip.row_mut(k).copy_from_slice(self.precip.row(t));
            temp.row_mut(k).copy_from_slice(self.temp.row(t));
        }
        Ok(ForcingSeries {
            months: rows.iter().map(|&t| self.months[t]).collect(),
            grid_rows: self.grid_rows,
            grid_cols: self.grid_cols,
            mask: self.mask.clone(),
            precip,
            temp,
        })
    }

    /// Extracts the masked cells as model inputs (month × cell matrices).
    pub fn to_inputs(&self) -> InputSeq {
        let idx = self.mask_indices();
        let t_len = self.months.len();
        let mut precip = Mat::zeros(t_len, idx.len());
        let mut temp = Mat::zeros(t_len, idx.len());
        for t in 0..t_len {
            for (k, &i) in idx.iter().enumerate() {
                precip[(t, k)] = self.precip[(t, i)];
                temp[(t, k)] = self.temp[(t, i)];
            }
        }
        InputSeq {
            months: self.months.clone(),
            precip,
            temp,
        }
    }
}

/// Masked-cell model inputs extracted from a (normalized) ForcingSeries.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSeq {
    pub months: Vec<YearMonth>,
    pub precip: Mat,
    pub temp: Mat,
}

impl InputSeq {
    pub fn n_months(&self) -> usize {
        self.months.len()
    }

    pub fn n_cells(&self) -> usize {
        self.precip.cols()
    }
}

/// Observed discharge per plant per month, strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct DischargeHistory {
    pub plants: Vec<String>,
    pub months: Vec<YearMonth>,
    pub values: Mat,
}

impl DischargeHistory {
    pub fn validate(&self) -> Result<()> {
        if self.values.rows() != self.months.len() || self.values.cols() != self.plants.len() {
            return Err(HydroError::Shape(
                "discharge matrix does not match months/plants".into(),
            ));
        }
        check_contiguous(&self.months)?;
        for (t, ym) in self.months.iter().enumerate() {
            for (p, plant) in self.plants.iter().enumerate() {
                let v = self.values[(t, p)];
                if !(v > 0.0) {
                    return Err(HydroError::Data(format!(
                        "non-positive discharge {v} for plant {plant} at {ym}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Restriction to the months inside a year window.
    pub fn window(&self, w: &Window) -> Result<DischargeHistory> {
        let rows = w.select(&self.months);
        if rows.is_empty() {
            return Err(HydroError::Data(format!(
                "window {}..={} selects no discharge months",
                w.start_year, w.end_year
            )));
        }
        let mut values = Mat::zeros(rows.len(), self.plants.len());
        for (k, &t) in rows.iter().enumerate() {
            values.row_mut(k).copy_from_slice(self.values.row(t));
        }
        Ok(DischargeHistory {
            plants: self.plants.clone(),
            months: rows.iter().map(|&t| self.months[t]).collect(),
            values,
        })
    }

    /// Checks one-to-one month alignment with a forcing series.
    pub fn check_aligned(&self, forcing: &ForcingSeries) -> Result<()> {
        if self.months != forcing.months {
            return Err(HydroError::Data(
                "discharge and forcing months are not aligned".into(),
            ));
        }
        Ok(())
    }
}

/// A set of equal-shape forcing trajectories from one forecast issue.
#[derive(Debug, Clone)]
pub struct EnsembleSet {
    pub start: YearMonth,
    pub horizon: usize,
    pub source_label: String,
    /// Stable trajectory identifiers (file indices); scenario RNG substreams
    /// key off these, so list order does not affect sampled values.
    pub ids: Vec<u32>,
    pub trajectories: Vec<ForcingSeries>,
}

impl EnsembleSet {
    pub fn n_traj(&self) -> usize {
        self.trajectories.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.trajectories.is_empty() {
            return Err(HydroError::Data("ensemble has no trajectories".into()));
        }
        if self.ids.len() != self.trajectories.len() {
            return Err(HydroError::Shape("ensemble ids/trajectories mismatch".into()));
        }
        let expect_months = self.start.sequence(self.horizon);
        let first = &self.trajectories[0];
        for (k, traj) in self.trajectories.iter().enumerate() {
            traj.validate()?;
            if traj.months != expect_months {
                return Err(HydroError::Data(format!(
                    "trajectory {k} months do not match manifest start/horizon"
                )));
            }
            if traj.grid_rows != first.grid_rows
                || traj.grid_cols != first.grid_cols
                || traj.mask != first.mask
            {
                return Err(HydroError::Data(format!(
                    "trajectory {k} grid or mask differs from trajectory 0"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct EnsembleManifest {
    start_year: i32,
    start_month: u8,
    horizon: usize,
    #[serde(default)]
    source_label: String,
}

// ---------------------------------------------------------------------------
// CSV parsing helpers
// ---------------------------------------------------------------------------

struct LineParser<'a> {
    path: &'a Path,
    line_no: usize,
    fields: Vec<&'a str>,
}

impl<'a> LineParser<'a> {
    fn err(&self, msg: impl Into<String>) -> HydroError {
        HydroError::Parse {
            path: self.path.display().to_string(),
            line: self.line_no,
            msg: msg.into(),
        }
    }

    fn field<T: std::str::FromStr>(&self, idx: usize, name: &str) -> Result<T> {
        let raw = self
            .fields
            .get(idx)
            .ok_or_else(|| self.err(format!("missing field {name}")))?;
        raw.trim()
            .parse::<T>()
            .map_err(|_| self.err(format!("malformed {name}: {raw:?}")))
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| HydroError::io(path, e))?;
    Ok(text.lines().map(|l| l.to_string()).collect())
}

fn check_header(path: &Path, lines: &[String], expect: &str) -> Result<()> {
    match lines.first() {
        Some(h) if h.trim() == expect => Ok(()),
        Some(h) => Err(HydroError::Parse {
            path: path.display().to_string(),
            line: 1,
            msg: format!("expected header {expect:?}, got {h:?}"),
        }),
        None => Err(HydroError::Parse {
            path: path.display().to_string(),
            line: 1,
            msg: "empty file".into(),
        }),
    }
}

// ---------------------------------------------------------------------------
// Forcing CSV
// ---------------------------------------------------------------------------

/// Loads and validates a forcing CSV; the mask is inferred from the cells
/// present in the file.
pub fn load_forcing(path: impl AsRef<Path>) -> Result<ForcingSeries> {
    let path = path.as_ref();
    let lines = read_lines(path)?;
    check_header(path, &lines, FORCING_HEADER)?;

    type CellMap = BTreeMap<(usize, usize), (f64, f64)>;
    let mut by_month: BTreeMap<YearMonth, CellMap> = BTreeMap::new();
    let (mut max_r, mut max_c) = (0usize, 0usize);

    for (i, line) in lines.iter().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let lp = LineParser {
            path,
            line_no: i + 1,
            fields: line.split(',').collect(),
        };
        if lp.fields.len() != 6 {
            return Err(lp.err(format!("expected 6 fields, got {}", lp.fields.len())));
        }
        let year: i32 = lp.field(0, "year")?;
        let month: u8 = lp.field(1, "month")?;
        let ym = YearMonth::new(year, month).map_err(|e| lp.err(e.to_string()))?;
        let r: usize = lp.field(2, "row")?;
        let c: usize = lp.field(3, "col")?;
        let precip: f64 = lp.field(4, "precip_mm")?;
        let temp: f64 = lp.field(5, "temp_c")?;
        if !precip.is_finite() || !temp.is_finite() {
            return Err(lp.err("non-finite value"));
        }
        if precip < 0.0 {
            return Err(lp.err(format!("negative precipitation {precip}")));
        }
        max_r = max_r.max(r);
        max_c = max_c.max(c);
        if by_month.entry(ym).or_default().insert((r, c), (precip, temp)).is_some() {
            return Err(lp.err(format!("duplicate cell ({r},{c}) for {ym}")));
        }
    }

    if by_month.is_empty() {
        return Err(HydroError::Data(format!(
            "forcing file {} contains no data rows",
            path.display()
        )));
    }

    let months: Vec<YearMonth> = by_month.keys().copied().collect();
    check_contiguous(&months)?;

    let cells: Vec<(usize, usize)> = by_month.values().next().unwrap().keys().copied().collect();
    for (ym, m) in &by_month {
        if m.len() != cells.len() || !cells.iter().all(|c| m.contains_key(c)) {
            return Err(HydroError::Data(format!(
                "cell set for {ym} differs from the first month (mask must be constant)"
            )));
        }
    }

    let (grid_rows, grid_cols) = (max_r + 1, max_c + 1);
    let n_grid = grid_rows * grid_cols;
    let mut mask = vec![false; n_grid];
    for &(r, c) in &cells {
        mask[r * grid_cols + c] = true;
    }
    let mut precip = Mat::zeros(months.len(), n_grid);
    let mut temp = Mat::zeros(months.len(), n_grid);
    for (t, ym) in months.iter().enumerate() {
        for (&(r, c), &(p, tv)) in &by_month[ym] {
            let i = r * grid_cols + c;
            precip[(t, i)] = p;
            temp[(t, i)] = tv;
        }
    }

    let series = ForcingSeries {
        months,
        grid_rows,
        grid_cols,
        mask,
        precip,
        temp,
    };
    series.validate()?;
    Ok(series)
}

/// Writes a forcing CSV in canonical order (month, then row-major cell).
pub fn save_forcing(series: &ForcingSeries, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    series.validate()?;
    let idx = series.mask_indices();
    let mut out = String::with_capacity(series.months.len() * idx.len() * 32);
    out.push_str(FORCING_HEADER);
    out.push('\n');
    for (t, ym) in series.months.iter().enumerate() {
        for &i in &idx {
            let (r, c) = (i / series.grid_cols, i % series.grid_cols);
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                ym.year,
                ym.month,
                r,
                c,
                fmt_sig9(series.precip[(t, i)]),
                fmt_sig9(series.temp[(t, i)])
            ));
        }
    }
    fs::write(path, out).map_err(|e| HydroError::io(path, e))
}

// ---------------------------------------------------------------------------
// Discharge CSV
// ---------------------------------------------------------------------------

pub fn load_discharge(path: impl AsRef<Path>) -> Result<DischargeHistory> {
    let path = path.as_ref();
    let lines = read_lines(path)?;
    check_header(path, &lines, DISCHARGE_HEADER)?;

    let mut plants: Vec<String> = Vec::new();
    let mut by_month: BTreeMap<YearMonth, BTreeMap<String, f64>> = BTreeMap::new();

    for (i, line) in lines.iter().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let lp = LineParser {
            path,
            line_no: i + 1,
            fields: line.split(',').collect(),
        };
        if lp.fields.len() != 4 {
            return Err(lp.err(format!("expected 4 fields, got {}", lp.fields.len())));
        }
        let year: i32 = lp.field(0, "year")?;
        let month: u8 = lp.field(1, "month")?;
        let ym = YearMonth::new(year, month).map_err(|e| lp.err(e.to_string()))?;
        let plant = lp.fields[2].trim().to_string();
        if plant.is_empty() {
            return Err(lp.err("empty plant_id"));
        }
        let v: f64 = lp.field(3, "discharge_m3s")?;
        if !v.is_finite() || v <= 0.0 {
            return Err(lp.err(format!("non-positive discharge {v}")));
        }
        if !plants.contains(&plant) {
            plants.push(plant.clone());
        }
        if by_month.entry(ym).or_default().insert(plant.clone(), v).is_some() {
            return Err(lp.err(format!("duplicate entry for plant {plant} at {ym}")));
        }
    }

    if by_month.is_empty() {
        return Err(HydroError::Data(format!(
            "discharge file {} contains no data rows",
            path.display()
        )));
    }
    let months: Vec<YearMonth> = by_month.keys().copied().collect();
    check_contiguous(&months)?;

    let mut values = Mat::zeros(months.len(), plants.len());
    for (t, ym) in months.iter().enumerate() {
        let row = &by_month[ym];
        for (p, plant) in plants.iter().enumerate() {
            match row.get(plant) {
                Some(&v) => values[(t, p)] = v,
                None => {
                    return Err(HydroError::Data(format!(
                        "plant {plant} missing at {ym}"
                    )))
                }
            }
        }
        if row.len() != plants.len() {
            return Err(HydroError::Data(format!(
                "unexpected extra plants at {ym}"
            )));
        }
    }

    let history = DischargeHistory {
        plants,
        months,
        values,
    };
    history.validate()?;
    Ok(history)
}

pub fn save_discharge(history: &DischargeHistory, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    history.validate()?;
    let mut out = String::new();
    out.push_str(DISCHARGE_HEADER);
    out.push('\n');
    for (t, ym) in history.months.iter().enumerate() {
        for (p, plant) in history.plants.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                ym.year,
                ym.month,
                plant,
                fmt_sig9(history.values[(t, p)])
            ));
        }
    }
    fs::write(path, out).map_err(|e| HydroError::io(path, e))
}

// ---------------------------------------------------------------------------
// Ensemble directory
// ---------------------------------------------------------------------------

pub fn load_ensemble(dir: impl AsRef<Path>) -> Result<EnsembleSet> {
    let dir = dir.as_ref();
    let manifest_path = dir.join("manifest.json");
    let manifest_text =
        fs::read_to_string(&manifest_path).map_err(|e| HydroError::io(&manifest_path, e))?;
    let manifest: EnsembleManifest = serde_json::from_str(&manifest_text)
        .map_err(|e| HydroError::Data(format!("bad manifest {}: {e}", manifest_path.display())))?;
    let start = YearMonth::new(manifest.start_year, manifest.start_month)?;

    let mut entries: Vec<(u32, std::path::PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| HydroError::io(dir, e))? {
        let entry = entry.map_err(|e| HydroError::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().to_string();
        if let Some(numeric) = name.strip_prefix("traj_").and_then(|s| s.strip_suffix(".csv")) {
            let id: u32 = numeric.parse().map_err(|_| {
                HydroError::Data(format!("trajectory file name {name:?} is not traj_NNN.csv"))
            })?;
            entries.push((id, entry.path()));
        }
    }
    if entries.is_empty() {
        return Err(HydroError::Data(format!(
            "no traj_*.csv files in {}",
            dir.display()
        )));
    }
    entries.sort_by_key(|(id, _)| *id);

    let mut ids = Vec::with_capacity(entries.len());
    let mut trajectories = Vec::with_capacity(entries.len());
    for (id, path) in entries {
        ids.push(id);
        trajectories.push(load_forcing(path)?);
    }

    let set = EnsembleSet {
        start,
        horizon: manifest.horizon,
        source_label: manifest.source_label,
        ids,
        trajectories,
    };
    set.validate()?;
    Ok(set)
}

pub fn save_ensemble(set: &EnsembleSet, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    set.validate()?;
    fs::create_dir_all(dir).map_err(|e| HydroError::io(dir, e))?;
    let manifest = EnsembleManifest {
        start_year: set.start.year,
        start_month: set.start.month,
        horizon: set.horizon,
        source_label: set.source_label.clone(),
    };
    let manifest_path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| HydroError::Data(format!("manifest serialization: {e}")))?;
    fs::write(&manifest_path, text).map_err(|e| HydroError::io(&manifest_path, e))?;
    for (id, traj) in set.ids.iter().zip(&set.trajectories) {
        save_forcing(traj, dir.join(format!("traj_{id:03}.csv")))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// Per-cell standardization statistics, fitted on the training window only.
/// Vectors follow the masked-cell order of [`ForcingSeries::mask_indices`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub mask: Vec<bool>,
    pub mean_p: Vec<f64>,
    pub std_p: Vec<f64>,
    pub mean_t: Vec<f64>,
    pub std_t: Vec<f64>,
}

impl NormStats {
    /// Fits per-cell mean and standard deviation over the window's months.
    pub fn fit(series: &ForcingSeries, window: &Window) -> Result<Self> {
        series.validate()?;
        let rows = window.select(&series.months);
        if rows.is_empty() {
            return Err(HydroError::Data(format!(
                "normalization window {}..={} selects no months",
                window.start_year, window.end_year
            )));
        }
        let idx = series.mask_indices();
        let n = rows.len() as f64;
        let stat = |m: &Mat, i: usize| {
            let mean = rows.iter().map(|&t| m[(t, i)]).sum::<f64>() / n;
            let var = rows
                .iter()
                .map(|&t| (m[(t, i)] - mean).powi(2))
                .sum::<f64>()
                / n;
            (mean, var.sqrt().max(STD_FLOOR))
        };
        let mut stats = NormStats {
            grid_rows: series.grid_rows,
            grid_cols: series.grid_cols,
            mask: series.mask.clone(),
            mean_p: Vec::with_capacity(idx.len()),
            std_p: Vec::with_capacity(idx.len()),
            mean_t: Vec::with_capacity(idx.len()),
            std_t: Vec::with_capacity(idx.len()),
        };
        for &i in &idx {
            let (mp, sp) = stat(&series.precip, i);
            let (mt, st) = stat(&series.temp, i);
            stats.mean_p.push(mp);
            stats.std_p.push(sp);
            stats.mean_t.push(mt);
            stats.std_t.push(st);
        }
        Ok(stats)
    }

    fn check_compatible(&self, series: &ForcingSeries) -> Result<()> {
        if self.grid_rows != series.grid_rows
            || self.grid_cols != series.grid_cols
            || self.mask != series.mask
        {
            return Err(HydroError::Shape(
                "normalization stats grid/mask do not match the series".into(),
            ));
        }
        Ok(())
    }
}

/// Standardizes a forcing series.
///
/// Temperature becomes `(t - mean)/std` per cell. Precipitation is scaled by
/// `1/std` only (the `(p - mean)/std` value shifted up by `mean/std`), so raw
/// 0 mm maps to standardized 0 — the minimum of the standardized range —
/// preserving the non-negativity the embedding relies on.
pub fn normalize(series: &ForcingSeries, stats: &NormStats) -> Result<ForcingSeries> {
    stats.check_compatible(series)?;
    let idx = series.mask_indices();
    let mut out = series.clone();
    for t in 0..out.months.len() {
        for (k, &i) in idx.iter().enumerate() {
            out.precip[(t, i)] = series.precip[(t, i)] / stats.std_p[k];
            out.temp[(t, i)] = (series.temp[(t, i)] - stats.mean_t[k]) / stats.std_t[k];
        }
    }
    Ok(out)
}

/// Inverse of [`normalize`] for the same stats.
pub fn denormalize(series: &ForcingSeries, stats: &NormStats) -> Result<ForcingSeries> {
    stats.check_compatible(series)?;
    let idx = series.mask_indices();
    let mut out = series.clone();
    for t in 0..out.months.len() {
        for (k, &i) in idx.iter().enumerate() {
            out.precip[(t, i)] = series.precip[(t, i)] * stats.std_p[k];
            out.temp[(t, i)] = series.temp[(t, i)] * stats.std_t[k] + stats.mean_t[k];
        }
    }
    Ok(out)
}
