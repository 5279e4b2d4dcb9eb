//! Calibration and aggregation reports: quantile-band coverage tables,
//! inflow-energy aggregation, and per-plant band exports (CSV + SVG).

pub mod svg;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::calendar::{Window, YearMonth};
use crate::data::synth::GroundTruth;
use crate::data::{DischargeHistory, ForcingSeries};
use crate::dist::{DistSeq, QuantileSet};
use crate::error::{HydroError, Result};
use crate::fmtnum::fmt_sig9;
use crate::linalg::Mat;
use crate::net::{forward, Mode, ModelParams};

/// Predicted quantile curves, one (month, plant) matrix per level.
#[derive(Debug, Clone)]
pub struct QuantileCurves {
    pub levels: Vec<f64>,
    pub per_level: Vec<Mat>,
}

impl QuantileCurves {
    pub fn from_dist(dist: &DistSeq, qs: &QuantileSet) -> Self {
        QuantileCurves {
            levels: qs.levels().to_vec(),
            per_level: qs.z_values().iter().map(|&z| dist.quantile_curve(z)).collect(),
        }
    }

    /// Curves from the synthetic generative law (the test oracle's view).
    pub fn from_ground_truth(truth: &GroundTruth, qs: &QuantileSet) -> Result<Self> {
        let (t_len, p_len) = (truth.det.rows(), truth.det.cols());
        let mut per_level = Vec::with_capacity(qs.len());
        for &q in qs.levels() {
            let mut m = Mat::zeros(t_len, p_len);
            for t in 0..t_len {
                for p in 0..p_len {
                    m[(t, p)] = truth.quantile(t, p, q)?;
                }
            }
            per_level.push(m);
        }
        Ok(QuantileCurves {
            levels: qs.levels().to_vec(),
            per_level,
        })
    }

    fn check_four_levels(&self) -> Result<()> {
        if self.levels.len() != 4 {
            return Err(HydroError::Config(format!(
                "coverage needs exactly 4 quantile levels (Q1..Q4), got {}",
                self.levels.len()
            )));
        }
        Ok(())
    }
}

/// Observed band frequencies for one plant, in percent.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantCoverage {
    pub plant: String,
    pub n_months: usize,
    pub mid_count: usize,
    pub below_count: usize,
    pub above_count: usize,
}

impl PlantCoverage {
    pub fn mid_pct(&self) -> f64 {
        100.0 * self.mid_count as f64 / self.n_months as f64
    }

    pub fn below_pct(&self) -> f64 {
        100.0 * self.below_count as f64 / self.n_months as f64
    }

    pub fn above_pct(&self) -> f64 {
        100.0 * self.above_count as f64 / self.n_months as f64
    }
}

/// Coverage table: reference probabilities implied by the levels against
/// observed frequencies per plant.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    pub levels: [f64; 4],
    pub rows: Vec<PlantCoverage>,
}

impl CoverageReport {
    /// Reference probability (%) of the most probable region (Q2, Q3).
    pub fn ref_mid(&self) -> f64 {
        100.0 * (self.levels[2] - self.levels[1])
    }

    /// Reference probability (%) of falling below Q1.
    pub fn ref_below(&self) -> f64 {
        100.0 * self.levels[0]
    }

    /// Reference probability (%) of exceeding Q4.
    pub fn ref_above(&self) -> f64 {
        100.0 * (1.0 - self.levels[3])
    }

    /// Builds a report directly from counts (format/arithmetic fixture path).
    pub fn from_counts(
        levels: [f64; 4],
        rows: Vec<(String, usize, usize, usize, usize)>,
    ) -> Self {
        CoverageReport {
            levels,
            rows: rows
                .into_iter()
                .map(|(plant, n_months, mid, below, above)| PlantCoverage {
                    plant,
                    n_months,
                    mid_count: mid,
                    below_count: below,
                    above_count: above,
                })
                .collect(),
        }
    }
}

/// Counts strict band memberships over the window: below (y < Q1),
/// mid (Q2 < y < Q3), above (y > Q4). Ties sit in the unreported gaps.
pub fn coverage_from_curves(
    curves: &QuantileCurves,
    observed: &Mat,
    plants: &[String],
    window_rows: &[usize],
) -> Result<CoverageReport> {
    curves.check_four_levels()?;
    if window_rows.is_empty() {
        return Err(HydroError::Data("coverage window selects no months".into()));
    }
    let p_len = plants.len();
    for m in &curves.per_level {
        if m.cols() != p_len || m.rows() != observed.rows() || observed.cols() != p_len {
            return Err(HydroError::Shape(
                "quantile curves and observations are misaligned".into(),
            ));
        }
    }
    let q1 = &curves.per_level[0];
    let q2 = &curves.per_level[1];
    let q3 = &curves.per_level[2];
    let q4 = &curves.per_level[3];
    let mut rows = Vec::with_capacity(p_len);
    for (p, plant) in plants.iter().enumerate() {
        let mut below = 0usize;
        let mut mid = 0usize;
        let mut above = 0usize;
        for &t in window_rows {
            let y = observed[(t, p)];
            if y < q1[(t, p)] {
                below += 1;
            }
            if y > q2[(t, p)] && y < q3[(t, p)] {
                mid += 1;
            }
            if y > q4[(t, p)] {
                above += 1;
            }
        }
        rows.push(PlantCoverage {
            plant: plant.clone(),
            n_months: window_rows.len(),
            mid_count: mid,
            below_count: below,
            above_count: above,
        });
    }
    Ok(CoverageReport {
        levels: [curves.levels[0], curves.levels[1], curves.levels[2], curves.levels[3]],
        rows,
    })
}

/// Coverage of the model's predicted bands against observations on a window.
pub fn coverage_table(
    params: &ModelParams,
    forcing_norm: &ForcingSeries,
    history: &DischargeHistory,
    window: &Window,
    qs: &QuantileSet,
) -> Result<CoverageReport> {
    history.check_aligned(forcing_norm)?;
    let rows = window.select(&forcing_norm.months);
    if rows.is_empty() {
        return Err(HydroError::Data(format!(
            "coverage window {}..={} selects no months",
            window.start_year, window.end_year
        )));
    }
    let (dist, _) = forward(params, &forcing_norm.to_inputs(), Mode::Eval)?;
    let curves = QuantileCurves::from_dist(&dist, qs);
    coverage_from_curves(&curves, &history.values, &history.plants, &rows)
}

/// Writes labeled coverage reports as one CSV
/// (`window,plant,n_months,ref_mid,obs_mid,ref_below,obs_below,ref_above,obs_above`),
/// percentages at one decimal as in the paper's table.
pub fn save_coverage_csv(reports: &[(String, CoverageReport)], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out =
        String::from("window,plant,n_months,ref_mid,obs_mid,ref_below,obs_below,ref_above,obs_above\n");
    for (label, report) in reports {
        for row in &report.rows {
            out.push_str(&format!(
                "{},{},{},{:.1},{:.1},{:.1},{:.1},{:.1},{:.1}\n",
                label,
                row.plant,
                row.n_months,
                report.ref_mid(),
                row.mid_pct(),
                report.ref_below(),
                row.below_pct(),
                report.ref_above(),
                row.above_pct()
            ));
        }
    }
    fs::write(path, out).map_err(|e| HydroError::io(path, e))
}

// ---------------------------------------------------------------------------
// Inflow energy
// ---------------------------------------------------------------------------

/// Plant productivity factors (MW per m³/s).
#[derive(Debug, Clone, PartialEq)]
pub struct ProductivityTable {
    factors: BTreeMap<String, f64>,
}

impl ProductivityTable {
    pub fn uniform(plants: &[String]) -> Self {
        ProductivityTable {
            factors: plants.iter().map(|p| (p.clone(), 1.0)).collect(),
        }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, f64)>) -> Result<Self> {
        let factors: BTreeMap<String, f64> = pairs.into_iter().collect();
        for (plant, f) in &factors {
            if !(f.is_finite() && *f > 0.0) {
                return Err(HydroError::Data(format!(
                    "productivity factor for {plant} must be positive, got {f}"
                )));
            }
        }
        Ok(ProductivityTable { factors })
    }

    /// CSV with header `plant_id,mw_per_m3s`.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| HydroError::io(path, e))?;
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == "plant_id,mw_per_m3s" => {}
            other => {
                return Err(HydroError::Parse {
                    path: path.display().to_string(),
                    line: 1,
                    msg: format!("expected header \"plant_id,mw_per_m3s\", got {other:?}"),
                })
            }
        }
        let mut pairs = Vec::new();
        for (no, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split(',');
            let perr = |msg: &str| HydroError::Parse {
                path: path.display().to_string(),
                line: no + 1,
                msg: msg.into(),
            };
            let plant = it.next().ok_or_else(|| perr("missing plant_id"))?.trim();
            let f: f64 = it
                .next()
                .ok_or_else(|| perr("missing factor"))?
                .trim()
                .parse()
                .map_err(|_| perr("malformed factor"))?;
            pairs.push((plant.to_string(), f));
        }
        ProductivityTable::from_pairs(pairs)
    }

    /// Factors in the given plant order; errors on a missing plant.
    pub fn vector(&self, plants: &[String]) -> Result<Vec<f64>> {
        plants
            .iter()
            .map(|p| {
                self.factors.get(p).copied().ok_or_else(|| {
                    HydroError::Data(format!("plant {p} missing from the productivity table"))
                })
            })
            .collect()
    }
}

/// Energy per month: `Σ_p rho_p · y(t,p)`.
pub fn monthly_energy(values: &Mat, rho: &[f64]) -> Result<Vec<f64>> {
    if values.cols() != rho.len() {
        return Err(HydroError::Shape(format!(
            "{} productivity factors for {} plants",
            rho.len(),
            values.cols()
        )));
    }
    Ok((0..values.rows())
        .map(|t| values.row(t).iter().zip(rho).map(|(y, r)| y * r).sum())
        .collect())
}

/// Mean monthly energy over the whole history — the 100% baseline.
pub fn baseline_mean_energy(history: &DischargeHistory, rho: &[f64]) -> Result<f64> {
    let e = monthly_energy(&history.values, rho)?;
    Ok(e.iter().sum::<f64>() / e.len() as f64)
}

/// Annual mean energy as percent of the baseline, one row per calendar year
/// (partial years use the months available).
pub fn annual_energy_pct(
    months: &[YearMonth],
    energy: &[f64],
    baseline: f64,
) -> Result<Vec<(i32, f64)>> {
    if months.len() != energy.len() {
        return Err(HydroError::Shape("months/energy length mismatch".into()));
    }
    if !(baseline > 0.0) {
        return Err(HydroError::Data(format!(
            "baseline energy must be positive, got {baseline}"
        )));
    }
    let mut by_year: BTreeMap<i32, (f64, usize)> = BTreeMap::new();
    for (ym, e) in months.iter().zip(energy) {
        let slot = by_year.entry(ym.year).or_insert((0.0, 0));
        slot.0 += e;
        slot.1 += 1;
    }
    Ok(by_year
        .into_iter()
        .map(|(year, (sum, n))| (year, 100.0 * (sum / n as f64) / baseline))
        .collect())
}

// ---------------------------------------------------------------------------
// Band export
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BandFlag {
    InRange,
    Below,
    Above,
}

impl BandFlag {
    fn as_str(self) -> &'static str {
        match self {
            BandFlag::InRange => "",
            BandFlag::Below => "below",
            BandFlag::Above => "above",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BandRow {
    pub ym: YearMonth,
    pub q: [f64; 4],
    pub observed: Option<f64>,
    pub flag: BandFlag,
}

#[derive(Debug, Clone)]
pub struct BandTable {
    pub plant: String,
    pub rows: Vec<BandRow>,
}

/// Builds per-plant band tables; the flag marks observations strictly
/// outside the (Q1, Q4) envelope.
pub fn band_tables(
    curves: &QuantileCurves,
    observed: Option<&Mat>,
    months: &[YearMonth],
    plants: &[String],
) -> Result<Vec<BandTable>> {
    curves.check_four_levels()?;
    let t_len = months.len();
    let p_len = plants.len();
    for m in &curves.per_level {
        if m.rows() != t_len || m.cols() != p_len {
            return Err(HydroError::Shape(
                "quantile curves do not match months/plants".into(),
            ));
        }
    }
    if let Some(obs) = observed {
        if obs.rows() != t_len || obs.cols() != p_len {
            return Err(HydroError::Shape("observations do not match months/plants".into()));
        }
    }
    let mut tables = Vec::with_capacity(p_len);
    for (p, plant) in plants.iter().enumerate() {
        let mut rows = Vec::with_capacity(t_len);
        for (t, &ym) in months.iter().enumerate() {
            let q = [
                curves.per_level[0][(t, p)],
                curves.per_level[1][(t, p)],
                curves.per_level[2][(t, p)],
                curves.per_level[3][(t, p)],
            ];
            let observed_v = observed.map(|m| m[(t, p)]);
            let flag = match observed_v {
                Some(o) if o < q[0] => BandFlag::Below,
                Some(o) if o > q[3] => BandFlag::Above,
                _ => BandFlag::InRange,
            };
            rows.push(BandRow {
                ym,
                q,
                observed: observed_v,
                flag,
            });
        }
        tables.push(BandTable {
            plant: plant.clone(),
            rows,
        });
    }
    Ok(tables)
}

/// Writes `bands_<plant>.csv` and `bands_<plant>.svg` per plant under
/// `out_dir`; returns the paths written. Deterministic byte-for-byte.
pub fn band_export(tables: &[BandTable], out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| HydroError::io(out_dir, e))?;
    let mut written = Vec::new();
    for table in tables {
        for row in &table.rows {
            if !(row.q[0] <= row.q[1] && row.q[1] <= row.q[2] && row.q[2] <= row.q[3]) {
                return Err(HydroError::Numeric(format!(
                    "crossing quantile bands for {} at {}",
                    table.plant, row.ym
                )));
            }
        }
        let csv_path = out_dir.join(format!("bands_{}.csv", table.plant));
        let mut out = String::from("year,month,q1,q2,q3,q4,observed,flag\n");
        for row in &table.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                row.ym.year,
                row.ym.month,
                fmt_sig9(row.q[0]),
                fmt_sig9(row.q[1]),
                fmt_sig9(row.q[2]),
                fmt_sig9(row.q[3]),
                row.observed.map(fmt_sig9).unwrap_or_default(),
                row.flag.as_str()
            ));
        }
        fs::write(&csv_path, out).map_err(|e| HydroError::io(&csv_path, e))?;
        written.push(csv_path);

        let svg_path = out_dir.join(format!("bands_{}.svg", table.plant));
        fs::write(&svg_path, svg::band_chart_svg(table)).map_err(|e| HydroError::io(&svg_path, e))?;
        written.push(svg_path);
    }
    Ok(written)
}
