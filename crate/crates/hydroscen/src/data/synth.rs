//! Synthetic dataset generator with a known generative law, used as the
//! ground-truth oracle for calibration and end-to-end tests.
//!
//! Discharge is generated as
//! `y(t,p) = b_{month(t)} · (1 + Σ_cells w[cell,p]·P[cell, t-L]) · exp(s·z - s²/2)`
//! with `z` standard normal, so conditional on the generated forcing the law
//! of `y(t,p)` is exactly a two-parameter log-normal whose quantiles are
//! analytic. The `exp(-s²/2)` correction makes the noise mean-one.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::calendar::YearMonth;
use crate::data::{DischargeHistory, EnsembleSet, ForcingSeries};
use crate::dist::std_normal_quantile;
use crate::error::{HydroError, Result};
use crate::linalg::Mat;
use crate::rngutil::{substream, STREAM_SYNTH};

fn default_precip_base() -> Vec<f64> {
    // wet-to-dry seasonal cycle, mm/month
    (0..12)
        .map(|m| 120.0 + 80.0 * (2.0 * std::f64::consts::PI * m as f64 / 12.0).sin())
        .collect()
}

fn default_precip_noise() -> f64 {
    0.4
}

fn default_temp_base() -> Vec<f64> {
    (0..12)
        .map(|m| 22.0 + 6.0 * (2.0 * std::f64::consts::PI * (m as f64 + 3.0) / 12.0).sin())
        .collect()
}

fn default_temp_noise() -> f64 {
    1.5
}

/// Specification of a synthetic dataset. `sensitivity[cell][plant]` holds the
/// non-negative precipitation weights; `lag` is 0 or 1 (with lag 1 the first
/// month reuses its own precipitation, i.e. the index is clamped at 0).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub n_plants: usize,
    pub n_months: usize,
    pub start_year: i32,
    pub start_month: u8,
    pub seasonal_base: Vec<f64>,
    pub sensitivity: Vec<Vec<f64>>,
    pub lag: u8,
    pub noise_scale: f64,
    #[serde(default = "default_precip_base")]
    pub precip_base: Vec<f64>,
    #[serde(default = "default_precip_noise")]
    pub precip_noise: f64,
    #[serde(default = "default_temp_base")]
    pub temp_base: Vec<f64>,
    #[serde(default = "default_temp_noise")]
    pub temp_noise: f64,
}

impl SynthSpec {
    pub fn n_cells(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_rows == 0 || self.grid_cols == 0 || self.n_plants == 0 || self.n_months == 0 {
            return Err(HydroError::Config(
                "synthetic grid, plant count, and horizon must be positive".into(),
            ));
        }
        YearMonth::new(self.start_year, self.start_month)
            .map_err(|e| HydroError::Config(e.to_string()))?;
        if self.seasonal_base.len() != 12 {
            return Err(HydroError::Config("seasonal_base needs 12 entries".into()));
        }
        if self.seasonal_base.iter().any(|&b| !(b > 0.0)) {
            return Err(HydroError::Config("seasonal_base must be positive".into()));
        }
        if self.precip_base.len() != 12 || self.temp_base.len() != 12 {
            return Err(HydroError::Config(
                "precip_base/temp_base need 12 entries".into(),
            ));
        }
        if self.precip_base.iter().any(|&b| !(b > 0.0)) {
            return Err(HydroError::Config("precip_base must be positive".into()));
        }
        if self.sensitivity.len() != self.n_cells()
            || self.sensitivity.iter().any(|row| row.len() != self.n_plants)
        {
            return Err(HydroError::Config(format!(
                "sensitivity must be {} cells x {} plants",
                self.n_cells(),
                self.n_plants
            )));
        }
        if self.sensitivity.iter().flatten().any(|&w| w < 0.0) {
            return Err(HydroError::Config(
                "sensitivity weights must be non-negative".into(),
            ));
        }
        if self.lag > 1 {
            return Err(HydroError::Config("lag must be 0 or 1".into()));
        }
        if !(self.noise_scale > 0.0) {
            return Err(HydroError::Config("noise_scale must be positive".into()));
        }
        if !(self.precip_noise > 0.0) || !(self.temp_noise > 0.0) {
            return Err(HydroError::Config(
                "precip_noise/temp_noise must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| HydroError::io(path, e))?;
        let spec: SynthSpec = serde_json::from_str(&text)
            .map_err(|e| HydroError::Config(format!("bad synth spec {}: {e}", path.display())))?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Exact conditional quantiles of the synthetic generative law.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub months: Vec<YearMonth>,
    pub plants: Vec<String>,
    pub noise_scale: f64,
    /// Deterministic part `b·(1 + Σ w·P)` per (month, plant).
    pub det: Mat,
}

impl GroundTruth {
    /// Analytic q-quantile of y(t,p): `det · exp(s·PhiInv(q) - s²/2)`.
    pub fn quantile(&self, t: usize, p: usize, q: f64) -> Result<f64> {
        let z = std_normal_quantile(q)?;
        let s = self.noise_scale;
        Ok(self.det[(t, p)] * (s * z - 0.5 * s * s).exp())
    }

    /// The law as three-parameter log-normal parameters (theta = 0).
    pub fn dist_params(&self, t: usize, p: usize) -> (f64, f64, f64) {
        let s = self.noise_scale;
        (self.det[(t, p)].ln() - 0.5 * s * s, s, 0.0)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = GroundTruthFile {
            months: self.months.clone(),
            plants: self.plants.clone(),
            noise_scale: self.noise_scale,
            n_months: self.det.rows(),
            n_plants: self.det.cols(),
            det: self.det.as_slice().to_vec(),
        };
        let text = serde_json::to_string_pretty(&file)
            .map_err(|e| HydroError::Data(format!("ground truth serialization: {e}")))?;
        fs::write(path, text).map_err(|e| HydroError::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| HydroError::io(path, e))?;
        let file: GroundTruthFile = serde_json::from_str(&text)
            .map_err(|e| HydroError::Data(format!("bad ground truth {}: {e}", path.display())))?;
        Ok(GroundTruth {
            months: file.months,
            plants: file.plants,
            noise_scale: file.noise_scale,
            det: Mat::from_vec(file.n_months, file.n_plants, file.det),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct GroundTruthFile {
    months: Vec<YearMonth>,
    plants: Vec<String>,
    noise_scale: f64,
    n_months: usize,
    n_plants: usize,
    det: Vec<f64>,
}

fn gen_forcing_months<R: Rng>(
    spec: &SynthSpec,
    months: &[YearMonth],
    rng: &mut R,
) -> (Mat, Mat) {
    let n_cells = spec.n_cells();
    let mut precip = Mat::zeros(months.len(), n_cells);
    let mut temp = Mat::zeros(months.len(), n_cells);
    let sp = spec.precip_noise;
    for (t, ym) in months.iter().enumerate() {
        let m0 = ym.month0();
        for c in 0..n_cells {
            let z: f64 = rng.sample(StandardNormal);
            precip[(t, c)] = spec.precip_base[m0] * (sp * z - 0.5 * sp * sp).exp();
        }
    }
    for (t, ym) in months.iter().enumerate() {
        let m0 = ym.month0();
        for c in 0..n_cells {
            let z: f64 = rng.sample(StandardNormal);
            temp[(t, c)] = spec.temp_base[m0] + spec.temp_noise * z;
        }
    }
    (precip, temp)
}

fn forcing_from_grids(spec: &SynthSpec, months: Vec<YearMonth>, precip: Mat, temp: Mat) -> ForcingSeries {
    ForcingSeries {
        months,
        grid_rows: spec.grid_rows,
        grid_cols: spec.grid_cols,
        mask: vec![true; spec.n_cells()],
        precip,
        temp,
    }
}

/// Generates a forcing series, a discharge history, and the exact ground
/// truth of the generative law. Deterministic in `(spec, seed)`.
pub fn synth_generate(
    spec: &SynthSpec,
    seed: u64,
) -> Result<(ForcingSeries, DischargeHistory, GroundTruth)> {
    spec.validate()?;
    let months = YearMonth::new(spec.start_year, spec.start_month)?.sequence(spec.n_months);
    let mut rng = substream(seed, &[STREAM_SYNTH]);

    let (precip, temp) = gen_forcing_months(spec, &months, &mut rng);

    let n_plants = spec.n_plants;
    let mut det = Mat::zeros(spec.n_months, n_plants);
    let mut values = Mat::zeros(spec.n_months, n_plants);
    let s = spec.noise_scale;
    for t in 0..spec.n_months {
        let t_lag = t.saturating_sub(spec.lag as usize);
        let b = spec.seasonal_base[months[t].month0()];
        for p in 0..n_plants {
            let coupling: f64 = (0..spec.n_cells())
                .map(|c| spec.sensitivity[c][p] * precip[(t_lag, c)])
                .sum();
            det[(t, p)] = b * (1.0 + coupling);
        }
    }
    for t in 0..spec.n_months {
        for p in 0..n_plants {
            let z: f64 = rng.sample(StandardNormal);
            values[(t, p)] = det[(t, p)] * (s * z - 0.5 * s * s).exp();
        }
    }

    let plants: Vec<String> = (1..=n_plants).map(|p| format!("P{p:03}")).collect();
    let forcing = forcing_from_grids(spec, months.clone(), precip, temp);
    let history = DischargeHistory {
        plants: plants.clone(),
        months: months.clone(),
        values,
    };
    history.validate()?;
    let truth = GroundTruth {
        months,
        plants,
        noise_scale: s,
        det,
    };
    Ok((forcing, history, truth))
}

/// Generates an ensemble of forcing trajectories from the same seasonal
/// process, for exercising the scenario pipeline without real GCM data.
pub fn synth_ensemble(
    spec: &SynthSpec,
    start: YearMonth,
    horizon: usize,
    n_traj: usize,
    seed: u64,
) -> Result<EnsembleSet> {
    spec.validate()?;
    if horizon == 0 || n_traj == 0 {
        return Err(HydroError::Config(
            "ensemble horizon and trajectory count must be positive".into(),
        ));
    }
    let months = start.sequence(horizon);
    let mut trajectories = Vec::with_capacity(n_traj);
    let mut ids = Vec::with_capacity(n_traj);
    for k in 0..n_traj {
        let mut rng = substream(seed, &[STREAM_SYNTH, 1, k as u64]);
        let (precip, temp) = gen_forcing_months(spec, &months, &mut rng);
        trajectories.push(forcing_from_grids(spec, months.clone(), precip, temp));
        ids.push(k as u32);
    }
    let set = EnsembleSet {
        start,
        horizon,
        source_label: "synthetic".into(),
        ids,
        trajectories,
    };
    set.validate()?;
    Ok(set)
}
