//! Ensemble-conditioned scenario generation and serial-correlation
//! restoration: one eval-mode forward pass per trajectory produces monthly
//! distributions, scenarios are sampled independently per month, then month-t
//! scenarios are relabeled to best continue month t-1 under the fitted
//! regression, by minimum-Mahalanobis assignment.

pub mod assignment;
pub mod serial;

pub use assignment::{assignment_solve, assignment_total};
pub use serial::{fit_serial_from_states, fit_serial_model, mahalanobis_cost, SerialFitOptions, SerialModel};

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calendar::{check_contiguous, YearMonth};
use crate::checkpoint::Checkpoint;
use crate::data::{normalize, EnsembleSet};
use crate::dist::ln3_sample;
use crate::error::{HydroError, Result};
use crate::fmtnum::fmt_sig9;
use crate::linalg::Mat;
use crate::net::{forward, HiddenSeq, Mode};
use crate::rngutil::{substream, STREAM_SCENARIO};

/// Sampled discharges are floored here because theta may be negative.
pub const SCENARIO_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub checkpoint: String,
    pub ensemble: String,
    pub seed: u64,
    pub n_scen: usize,
    pub reordered: bool,
}

/// Sampled discharge trajectories indexed (trajectory, scenario, month, plant).
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSet {
    pub start: YearMonth,
    pub plants: Vec<String>,
    pub traj_ids: Vec<u32>,
    pub n_scen: usize,
    pub horizon: usize,
    values: Vec<f64>,
    pub provenance: Provenance,
}

impl ScenarioSet {
    pub fn n_traj(&self) -> usize {
        self.traj_ids.len()
    }

    pub fn n_plants(&self) -> usize {
        self.plants.len()
    }

    pub fn months(&self) -> Vec<YearMonth> {
        self.start.sequence(self.horizon)
    }

    #[inline]
    fn idx(&self, tr: usize, s: usize, t: usize, p: usize) -> usize {
        ((tr * self.n_scen + s) * self.horizon + t) * self.n_plants() + p
    }

    pub fn value(&self, tr: usize, s: usize, t: usize, p: usize) -> f64 {
        self.values[self.idx(tr, s, t, p)]
    }

    pub fn set_value(&mut self, tr: usize, s: usize, t: usize, p: usize, v: f64) {
        let i = self.idx(tr, s, t, p);
        self.values[i] = v;
    }

    /// Builds a set from raw values (trajectory-major layout); values must
    /// respect the generation-time floor.
    #[allow(clippy::too_many_arguments)]
    pub fn from_values(
        start: YearMonth,
        plants: Vec<String>,
        traj_ids: Vec<u32>,
        n_scen: usize,
        horizon: usize,
        values: Vec<f64>,
        provenance: Provenance,
    ) -> Result<Self> {
        let expect = traj_ids.len() * n_scen * horizon * plants.len();
        if values.len() != expect {
            return Err(HydroError::Shape(format!(
                "scenario values have length {}, expected {expect}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < SCENARIO_FLOOR) {
            return Err(HydroError::Data(format!(
                "scenario values must be finite and >= {SCENARIO_FLOOR}"
            )));
        }
        Ok(ScenarioSet {
            start,
            plants,
            traj_ids,
            n_scen,
            horizon,
            values,
            provenance,
        })
    }

    /// Scenario × plant matrix at one (trajectory, month).
    fn month_matrix(&self, tr: usize, t: usize) -> Mat {
        let p_len = self.n_plants();
        let mut m = Mat::zeros(self.n_scen, p_len);
        for s in 0..self.n_scen {
            for p in 0..p_len {
                m[(s, p)] = self.value(tr, s, t, p);
            }
        }
        m
    }

    /// CSV rows `trajectory,scenario,year,month,plant_id,discharge_m3s`
    /// plus a provenance JSON sidecar at `<path>.provenance.json`.
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let months = self.months();
        let mut out = String::from("trajectory,scenario,year,month,plant_id,discharge_m3s\n");
        for (tr, &tid) in self.traj_ids.iter().enumerate() {
            for s in 0..self.n_scen {
                for (t, ym) in months.iter().enumerate() {
                    for (p, plant) in self.plants.iter().enumerate() {
                        out.push_str(&format!(
                            "{},{},{},{},{},{}\n",
                            tid,
                            s,
                            ym.year,
                            ym.month,
                            plant,
                            fmt_sig9(self.value(tr, s, t, p))
                        ));
                    }
                }
            }
        }
        fs::write(path, out).map_err(|e| HydroError::io(path, e))?;
        let sidecar = sidecar_path(path);
        let text = serde_json::to_string_pretty(&self.provenance)
            .map_err(|e| HydroError::Data(format!("provenance serialization: {e}")))?;
        fs::write(&sidecar, text).map_err(|e| HydroError::io(&sidecar, e))
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| HydroError::io(path, e))?;
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == "trajectory,scenario,year,month,plant_id,discharge_m3s" => {}
            other => {
                return Err(HydroError::Parse {
                    path: path.display().to_string(),
                    line: 1,
                    msg: format!("bad scenario header {other:?}"),
                })
            }
        }
        let mut plants: Vec<String> = Vec::new();
        let mut traj_ids: Vec<u32> = Vec::new();
        let mut months_seen: Vec<YearMonth> = Vec::new();
        let mut max_scen = 0usize;
        let mut rows: BTreeMap<(u32, usize, YearMonth, String), f64> = BTreeMap::new();
        for (no, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let perr = |msg: String| HydroError::Parse {
                path: path.display().to_string(),
                line: no + 2,
                msg,
            };
            if fields.len() != 6 {
                return Err(perr(format!("expected 6 fields, got {}", fields.len())));
            }
            let tid: u32 = fields[0].trim().parse().map_err(|_| perr("bad trajectory".into()))?;
            let s: usize = fields[1].trim().parse().map_err(|_| perr("bad scenario".into()))?;
            let year: i32 = fields[2].trim().parse().map_err(|_| perr("bad year".into()))?;
            let month: u8 = fields[3].trim().parse().map_err(|_| perr("bad month".into()))?;
            let ym = YearMonth::new(year, month).map_err(|e| perr(e.to_string()))?;
            let plant = fields[4].trim().to_string();
            let v: f64 = fields[5].trim().parse().map_err(|_| perr("bad discharge".into()))?;
            if !traj_ids.contains(&tid) {
                traj_ids.push(tid);
            }
            if !plants.contains(&plant) {
                plants.push(plant.clone());
            }
            if !months_seen.contains(&ym) {
                months_seen.push(ym);
            }
            max_scen = max_scen.max(s + 1);
            rows.insert((tid, s, ym, plant), v);
        }
        months_seen.sort();
        check_contiguous(&months_seen)?;
        let start = *months_seen.first().ok_or_else(|| {
            HydroError::Data(format!("scenario file {} has no rows", path.display()))
        })?;
        let horizon = months_seen.len();
        let expect = traj_ids.len() * max_scen * horizon * plants.len();
        if rows.len() != expect {
            return Err(HydroError::Data(format!(
                "scenario file {} has {} rows, expected {expect}",
                path.display(),
                rows.len()
            )));
        }
        let provenance = {
            let sidecar = sidecar_path(path);
            if sidecar.exists() {
                let text = fs::read_to_string(&sidecar).map_err(|e| HydroError::io(&sidecar, e))?;
                serde_json::from_str(&text)
                    .map_err(|e| HydroError::Data(format!("bad provenance sidecar: {e}")))?
            } else {
                Provenance {
                    checkpoint: String::new(),
                    ensemble: String::new(),
                    seed: 0,
                    n_scen: max_scen,
                    reordered: false,
                }
            }
        };
        let mut set = ScenarioSet {
            start,
            plants: plants.clone(),
            traj_ids: traj_ids.clone(),
            n_scen: max_scen,
            horizon,
            values: vec![0.0; expect],
            provenance,
        };
        for (tr, &tid) in traj_ids.iter().enumerate() {
            for s in 0..max_scen {
                for (t, ym) in months_seen.iter().enumerate() {
                    for (p, plant) in plants.iter().enumerate() {
                        let key = (tid, s, *ym, plant.clone());
                        let v = rows.get(&key).copied().ok_or_else(|| {
                            HydroError::Data(format!(
                                "scenario file missing row for trajectory {tid}, scenario {s}, {ym}, plant {plant}"
                            ))
                        })?;
                        set.set_value(tr, s, t, p, v);
                    }
                }
            }
        }
        Ok(set)
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".provenance.json");
    std::path::PathBuf::from(os)
}

/// Samples `n_scen` discharge scenarios per ensemble trajectory.
///
/// The RNG substream for each (trajectory, scenario) pair is derived from
/// `(seed, trajectory id, scenario index)`, so sampled values do not depend
/// on trajectory list order or evaluation order. Draws are consumed
/// month-major, then plant.
pub fn generate(
    ckpt: &Checkpoint,
    ensemble: &EnsembleSet,
    n_scen: usize,
    seed: u64,
) -> Result<(ScenarioSet, Vec<HiddenSeq>)> {
    ckpt.validate()?;
    ensemble.validate()?;
    if n_scen == 0 {
        return Err(HydroError::Config("n_scen must be at least 1".into()));
    }
    let horizon = ensemble.horizon;
    let p_len = ckpt.plants.len();
    let n_traj = ensemble.n_traj();

    let mut values = vec![0.0; n_traj * n_scen * horizon * p_len];
    let mut hiddens = Vec::with_capacity(n_traj);

    for (tr, traj) in ensemble.trajectories.iter().enumerate() {
        let forcing_norm = normalize(traj, &ckpt.norm)?;
        let input = forcing_norm.to_inputs();
        let (dist, hidden) = forward(&ckpt.params, &input, Mode::Eval)?;
        dist.validate()?;
        let tid = ensemble.ids[tr];
        for s in 0..n_scen {
            let mut rng = substream(seed, &[STREAM_SCENARIO, tid as u64, s as u64]);
            for t in 0..horizon {
                for p in 0..p_len {
                    let y = ln3_sample(
                        dist.mu[(t, p)],
                        dist.sigma[(t, p)],
                        dist.theta[(t, p)],
                        &mut rng,
                    );
                    let i = ((tr * n_scen + s) * horizon + t) * p_len + p;
                    values[i] = y.max(SCENARIO_FLOOR);
                }
            }
        }
        hiddens.push(hidden);
    }

    let set = ScenarioSet {
        start: ensemble.start,
        plants: ckpt.plants.clone(),
        traj_ids: ensemble.ids.clone(),
        n_scen,
        horizon,
        values,
        provenance: Provenance {
            checkpoint: String::new(),
            ensemble: ensemble.source_label.clone(),
            seed,
            n_scen,
            reordered: false,
        },
    };
    Ok((set, hiddens))
}

/// Restores serial correlation: per trajectory, sweep months left to right
/// and relabel month-t scenarios by the assignment minimizing Mahalanobis
/// distance to the regression predictions from (already reordered) month t-1.
/// Only labels change; every per-(trajectory, month) multiset of values is
/// preserved exactly.
pub fn reorder(
    scen: &ScenarioSet,
    hidden: &[HiddenSeq],
    sm: &SerialModel,
) -> Result<ScenarioSet> {
    if hidden.len() != scen.n_traj() {
        return Err(HydroError::Shape(format!(
            "{} hidden sequences for {} trajectories",
            hidden.len(),
            scen.n_traj()
        )));
    }
    if sm.n_plants() != scen.n_plants() {
        return Err(HydroError::Shape(format!(
            "serial model covers {} plants, scenarios have {}",
            sm.n_plants(),
            scen.n_plants()
        )));
    }
    let mut out = scen.clone();
    out.provenance.reordered = true;
    let p_len = scen.n_plants();
    for tr in 0..scen.n_traj() {
        if hidden[tr].h.rows() != scen.horizon || hidden[tr].h.cols() != sm.hidden_dim() {
            return Err(HydroError::Shape(format!(
                "hidden sequence {tr} is {}x{}, expected {}x{}",
                hidden[tr].h.rows(),
                hidden[tr].h.cols(),
                scen.horizon,
                sm.hidden_dim()
            )));
        }
        for t in 1..scen.horizon {
            let y_prev = out.month_matrix(tr, t - 1);
            let y_curr = out.month_matrix(tr, t);
            let h_prev = hidden[tr].h.row(t - 1);
            let cost = mahalanobis_cost(&y_prev, h_prev, &y_curr, sm)?;
            let perm = assignment_solve(&cost)?;
            for (i, &j) in perm.iter().enumerate() {
                for p in 0..p_len {
                    out.set_value(tr, i, t, p, y_curr[(j, p)]);
                }
            }
        }
    }
    Ok(out)
}
