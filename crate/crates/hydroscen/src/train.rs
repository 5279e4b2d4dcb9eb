//! Full-sequence gradient training with adaptive moments, post-step
//! non-negativity projection, and early stopping on a held-out window.
//!
//! The network is unrolled over the entire provided series; the pinball loss
//! (and therefore the gradient) is restricted to the training window, and the
//! validation loss is evaluated in eval mode on the validation window.

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::calendar::Window;
use crate::data::{DischargeHistory, ForcingSeries};
use crate::dist::{pinball_loss_rows, QuantileSet};
use crate::error::{HydroError, Result};
use crate::fmtnum::fmt_sig9;
use crate::net::{backward_from_cache, dropout_stream, forward_cached, Mode, ModelParams};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub dropout_rate: f64,
    pub quantiles: Vec<f64>,
    pub train_window: Window,
    pub valid_window: Window,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            max_epochs: 2000,
            patience: 50,
            dropout_rate: 0.2,
            quantiles: vec![0.10, 0.25, 0.60, 0.95],
            train_window: Window {
                start_year: 1981,
                end_year: 2018,
            },
            valid_window: Window {
                start_year: 2019,
                end_year: 2023,
            },
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) {
            return Err(HydroError::Config("learning rate must be >= 0".into()));
        }
        if self.max_epochs == 0 {
            return Err(HydroError::Config("max_epochs must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(HydroError::Config(format!(
                "dropout rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        // out-of-sample protocol: validation strictly after training
        if self.valid_window.start_year <= self.train_window.end_year {
            return Err(HydroError::Config(format!(
                "validation window {}..={} must start strictly after the train window {}..={}",
                self.valid_window.start_year,
                self.valid_window.end_year,
                self.train_window.start_year,
                self.train_window.end_year
            )));
        }
        QuantileSet::new(&self.quantiles)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub selected_epoch: usize,
    pub wall_secs: f64,
}

impl TrainReport {
    /// CSV: `epoch,train_loss,valid_loss` (wall time is not serialized so
    /// reruns are byte-identical).
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("epoch,train_loss,valid_loss\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{}\n",
                e.epoch,
                fmt_sig9(e.train_loss),
                fmt_sig9(e.valid_loss)
            ));
        }
        fs::write(path, out).map_err(|e| HydroError::io(path, e))
    }
}

struct Adam {
    m: ModelParams,
    v: ModelParams,
    t: usize,
}

impl Adam {
    fn new(shape: &ModelParams) -> Self {
        Adam {
            m: ModelParams::zeros(shape.cfg),
            v: ModelParams::zeros(shape.cfg),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut ModelParams, grads: &ModelParams, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        let g_tensors = grads.tensors();
        let mut p_tensors = params.tensors_mut();
        let mut m_tensors = self.m.tensors_mut();
        let mut v_tensors = self.v.tensors_mut();
        for k in 0..g_tensors.len() {
            let g = g_tensors[k].1;
            let p = &mut p_tensors[k].1;
            let m = &mut m_tensors[k].1;
            let v = &mut v_tensors[k].1;
            for i in 0..g.len() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
    }
}

fn check_alignment(forcing: &ForcingSeries, history: &DischargeHistory) -> Result<()> {
    history.check_aligned(forcing)?;
    Ok(())
}

/// Deterministic eval-mode pinball loss over a window.
pub fn evaluate_loss(
    params: &ModelParams,
    forcing_norm: &ForcingSeries,
    history: &DischargeHistory,
    window: &Window,
    qs: &QuantileSet,
) -> Result<f64> {
    check_alignment(forcing_norm, history)?;
    let rows = window.select(&forcing_norm.months);
    if rows.is_empty() {
        return Err(HydroError::Data(format!(
            "window {}..={} selects no months",
            window.start_year, window.end_year
        )));
    }
    let input = forcing_norm.to_inputs();
    let mut mode = Mode::Eval;
    let (dist, _, _) = forward_cached(params, &input, &mut mode)?;
    let (loss, _) = pinball_loss_rows(&dist, &history.values, &rows, qs)?;
    Ok(loss)
}

/// Trains a model. `forcing_norm` must already be normalized with
/// training-window statistics. Returns the best-validation snapshot.
pub fn train(
    params: ModelParams,
    forcing_norm: &ForcingSeries,
    history: &DischargeHistory,
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainReport)> {
    train_observed(params, forcing_norm, history, cfg, |_, _| {})
}

/// Like [`train`] but invokes `observer(epoch, params)` after every
/// optimizer step + projection, before validation.
pub fn train_observed(
    mut params: ModelParams,
    forcing_norm: &ForcingSeries,
    history: &DischargeHistory,
    cfg: &TrainConfig,
    mut observer: impl FnMut(usize, &ModelParams),
) -> Result<(ModelParams, TrainReport)> {
    cfg.validate()?;
    check_alignment(forcing_norm, history)?;
    let qs = QuantileSet::new(&cfg.quantiles)?;
    let train_rows = cfg.train_window.select(&forcing_norm.months);
    let valid_rows = cfg.valid_window.select(&forcing_norm.months);
    if train_rows.is_empty() {
        return Err(HydroError::Data("training window selects no months".into()));
    }
    if valid_rows.is_empty() {
        return Err(HydroError::Data("validation window selects no months".into()));
    }

    let input = forcing_norm.to_inputs();
    let started = Instant::now();
    let mut adam = Adam::new(&params);
    let mut report = TrainReport {
        epochs: Vec::with_capacity(cfg.max_epochs + 1),
        selected_epoch: 0,
        wall_secs: 0.0,
    };

    let eval_losses = |p: &ModelParams| -> Result<(f64, f64)> {
        let mut mode = Mode::Eval;
        let (dist, _, _) = forward_cached(p, &input, &mut mode)?;
        let (tl, _) = pinball_loss_rows(&dist, &history.values, &train_rows, &qs)?;
        let (vl, _) = pinball_loss_rows(&dist, &history.values, &valid_rows, &qs)?;
        Ok((tl, vl))
    };

    // epoch 0: the untouched initialization is a legitimate candidate
    let (tl0, vl0) = eval_losses(&params)?;
    report.epochs.push(EpochStats {
        epoch: 0,
        train_loss: tl0,
        valid_loss: vl0,
    });
    let mut best = params.clone();
    let mut best_loss = vl0;
    let mut best_epoch = 0usize;

    for epoch in 1..=cfg.max_epochs {
        let mut rng = dropout_stream(cfg.seed, epoch as u64);
        let mut mode = Mode::Train {
            dropout_rate: cfg.dropout_rate,
            rng: &mut rng,
        };
        let (dist, _, cache) = forward_cached(&params, &input, &mut mode)?;
        let (train_loss, dist_grad) = pinball_loss_rows(&dist, &history.values, &train_rows, &qs)?;
        if !train_loss.is_finite() {
            return Err(HydroError::Numeric(format!(
                "training loss became non-finite at epoch {epoch}"
            )));
        }
        let grads = backward_from_cache(&params, &input, &cache, &dist_grad)?;
        adam.step(&mut params, &grads, cfg.learning_rate);
        params.project_nonneg();
        if !params.is_finite() {
            let name = params
                .tensors()
                .iter()
                .find(|(_, t)| t.iter().any(|v| !v.is_finite()))
                .map(|(n, _)| *n)
                .unwrap_or("unknown");
            return Err(HydroError::Numeric(format!(
                "parameter tensor {name} became non-finite at epoch {epoch}"
            )));
        }
        observer(epoch, &params);

        let (_, valid_loss) = eval_losses(&params)?;
        report.epochs.push(EpochStats {
            epoch,
            train_loss,
            valid_loss,
        });
        if valid_loss < best_loss {
            best_loss = valid_loss;
            best_epoch = epoch;
            best = params.clone();
        } else if epoch - best_epoch >= cfg.patience {
            break;
        }
    }

    report.selected_epoch = best_epoch;
    report.wall_secs = started.elapsed().as_secs_f64();
    Ok((best, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calendar::Window;
    use crate::data::synth::{synth_generate, SynthSpec};
    use crate::data::{normalize, NormStats};
    use crate::net::{init_model, ModelConfig};

    fn synth_setup(n_months: usize) -> (ForcingSeries, DischargeHistory) {
        let spec = SynthSpec {
            grid_rows: 2,
            grid_cols: 2,
            n_plants: 2,
            n_months,
            start_year: 2000,
            start_month: 1,
            seasonal_base: vec![4.0, 5.0, 7.0, 9.0, 8.0, 6.0, 5.0, 4.0, 3.5, 3.0, 3.0, 3.5],
            sensitivity: vec![
                vec![0.004, 0.001],
                vec![0.003, 0.002],
                vec![0.0, 0.004],
                vec![0.002, 0.003],
            ],
            lag: 0,
            noise_scale: 0.3,
            precip_base: (0..12)
                .map(|m| 120.0 + 80.0 * (2.0 * std::f64::consts::PI * m as f64 / 12.0).sin())
                .collect(),
            precip_noise: 0.4,
            temp_base: vec![20.0; 12],
            temp_noise: 1.5,
        };
        let (forcing, history, _) = synth_generate(&spec, 42).unwrap();
        (forcing, history)
    }

    fn quick_cfg(train_end: i32, valid_start: i32, valid_end: i32) -> TrainConfig {
        TrainConfig {
            learning_rate: 5e-3,
            max_epochs: 60,
            patience: 60,
            dropout_rate: 0.1,
            quantiles: vec![0.10, 0.25, 0.60, 0.95],
            train_window: Window {
                start_year: 2000,
                end_year: train_end,
            },
            valid_window: Window {
                start_year: valid_start,
                end_year: valid_end,
            },
            seed: 3,
        }
    }

    #[test]
    fn config_rejects_overlapping_windows() {
        let mut cfg = TrainConfig::default();
        cfg.train_window = Window {
            start_year: 2000,
            end_year: 2010,
        };
        cfg.valid_window = Window {
            start_year: 2010,
            end_year: 2012,
        };
        assert!(cfg.validate().is_err());
        cfg.valid_window = Window {
            start_year: 2011,
            end_year: 2012,
        };
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let (forcing, history) = synth_setup(36);
        let norm = NormStats::fit(&forcing, &Window::new(2000, 2001).unwrap()).unwrap();
        let forcing_n = normalize(&forcing, &norm).unwrap();
        let cfg = ModelConfig {
            n_cells: 4,
            embedding_dim: 3,
            hidden_dim: 4,
            n_plants: 2,
        };
        let init = init_model(cfg, 1).unwrap();
        let mut tc = quick_cfg(2001, 2002, 2002);
        tc.learning_rate = 0.0;
        tc.max_epochs = 5;
        let (out, report) = train(init.clone(), &forcing_n, &history, &tc).unwrap();
        assert_eq!(out, init);
        assert_eq!(report.selected_epoch, 0);
    }

    #[test]
    fn projection_holds_after_every_step() {
        let (forcing, history) = synth_setup(36);
        let norm = NormStats::fit(&forcing, &Window::new(2000, 2001).unwrap()).unwrap();
        let forcing_n = normalize(&forcing, &norm).unwrap();
        let cfg = ModelConfig {
            n_cells: 4,
            embedding_dim: 3,
            hidden_dim: 4,
            n_plants: 2,
        };
        let init = init_model(cfg, 2).unwrap();
        let mut tc = quick_cfg(2001, 2002, 2002);
        tc.max_epochs = 40;
        let mut steps = 0usize;
        let (_, _) = train_observed(init, &forcing_n, &history, &tc, |_, p| {
            steps += 1;
            assert!(p.min_w_in_p() >= 0.0);
        })
        .unwrap();
        assert_eq!(steps, 40);
    }

    #[test]
    fn training_reduces_validation_loss_on_learnable_synth_data() {
        let (forcing, history) = synth_setup(30 * 12);
        let train_w = Window::new(2000, 2024).unwrap();
        let norm = NormStats::fit(&forcing, &train_w).unwrap();
        let forcing_n = normalize(&forcing, &norm).unwrap();
        let cfg = ModelConfig {
            n_cells: 4,
            embedding_dim: 6,
            hidden_dim: 8,
            n_plants: 2,
        };
        let init = init_model(cfg, 5).unwrap();
        let mut tc = quick_cfg(2024, 2025, 2029);
        tc.max_epochs = 150;
        tc.learning_rate = 1e-2;
        let (best, report) = train(init, &forcing_n, &history, &tc).unwrap();
        let first = report.epochs[0].valid_loss;
        let last_best = report.epochs[report.selected_epoch].valid_loss;
        assert!(
            last_best < first,
            "validation loss did not improve: {first} -> {last_best}"
        );
        // train-window loss also improves relative to epoch 0
        let qs = QuantileSet::new(&tc.quantiles).unwrap();
        let l_best = evaluate_loss(&best, &forcing_n, &history, &tc.train_window, &qs).unwrap();
        let l0 = report.epochs[0].train_loss;
        assert!(l_best <= l0);
        // snapshot restored bit-for-bit: validation loss of returned params
        // equals the reported minimum
        let vl = evaluate_loss(&best, &forcing_n, &history, &tc.valid_window, &qs).unwrap();
        assert_eq!(vl, last_best);
    }

    #[test]
    fn training_is_deterministic() {
        let (forcing, history) = synth_setup(48);
        let norm = NormStats::fit(&forcing, &Window::new(2000, 2002).unwrap()).unwrap();
        let forcing_n = normalize(&forcing, &norm).unwrap();
        let cfg = ModelConfig {
            n_cells: 4,
            embedding_dim: 3,
            hidden_dim: 4,
            n_plants: 2,
        };
        let mut tc = quick_cfg(2002, 2003, 2003);
        tc.max_epochs = 25;
        let run = || {
            let init = init_model(cfg, 9).unwrap();
            train(init, &forcing_n, &history, &tc).unwrap()
        };
        let (p1, r1) = run();
        let (p2, r2) = run();
        assert_eq!(p1, p2);
        assert_eq!(r1.selected_epoch, r2.selected_epoch);
        for (a, b) in r1.epochs.iter().zip(&r2.epochs) {
            assert_eq!(a.train_loss, b.train_loss);
            assert_eq!(a.valid_loss, b.valid_loss);
        }
    }

    #[test]
    fn evaluate_loss_is_deterministic_and_windowed() {
        let (forcing, history) = synth_setup(48);
        let norm = NormStats::fit(&forcing, &Window::new(2000, 2002).unwrap()).unwrap();
        let forcing_n = normalize(&forcing, &norm).unwrap();
        let cfg = ModelConfig {
            n_cells: 4,
            embedding_dim: 3,
            hidden_dim: 4,
            n_plants: 2,
        };
        let params = init_model(cfg, 4).unwrap();
        let qs = QuantileSet::default_levels();
        let w = Window::new(2001, 2001).unwrap();
        let a = evaluate_loss(&params, &forcing_n, &history, &w, &qs).unwrap();
        let b = evaluate_loss(&params, &forcing_n, &history, &w, &qs).unwrap();
        assert_eq!(a, b);
        // empty window errors
        let w_empty = Window::new(2050, 2051).unwrap();
        assert!(evaluate_loss(&params, &forcing_n, &history, &w_empty, &qs).is_err());
    }

    #[test]
    fn single_month_window_equals_per_term_loss() {
        let (forcing, history) = synth_setup(48);
        let norm = NormStats::fit(&forcing, &Window::new(2000, 2002).unwrap()).unwrap();
        let forcing_n = normalize(&forcing, &norm).unwrap();
        let cfg = ModelConfig {
            n_cells: 4,
            embedding_dim: 3,
            hidden_dim: 4,
            n_plants: 2,
        };
        let params = init_model(cfg, 4).unwrap();
        let qs = QuantileSet::default_levels();
        // a window that selects exactly one month... windows are whole years,
        // so compare against a manual single-row pinball evaluation instead
        let input = forcing_n.to_inputs();
        let mut mode = Mode::Eval;
        let (dist, _, _) = forward_cached(&params, &input, &mut mode).unwrap();
        let t = 30usize;
        let (manual, _) = pinball_loss_rows(&dist, &history.values, &[t], &qs).unwrap();
        // the same month via evaluate_loss on a year window, cross-checked by
        // averaging the manual per-month values of that year
        let year = forcing_n.months[t].year;
        let w = Window::new(year, year).unwrap();
        let rows = w.select(&forcing_n.months);
        let mut acc = 0.0;
        for &r in &rows {
            let (l, _) = pinball_loss_rows(&dist, &history.values, &[r], &qs).unwrap();
            acc += l;
        }
        acc /= rows.len() as f64;
        let via_eval = evaluate_loss(&params, &forcing_n, &history, &w, &qs).unwrap();
        assert!((via_eval - acc).abs() < 1e-12);
        assert!(manual > 0.0);
    }
}
