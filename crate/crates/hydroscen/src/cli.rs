//! Subcommand implementations behind the `hydroscen` binary: synthetic data
//! creation, training, scenario generation, and report emission, all driven
//! by one JSON config. Outputs land only under the configured out_dir (plus
//! the checkpoint path and its serial-model cache).

use std::fs;
use std::path::{Path, PathBuf};

use crate::calendar::Window;
use crate::checkpoint::{file_fingerprint, Checkpoint};
use crate::config::{require_existing, require_path, RunConfig};
use crate::data::synth::synth_generate;
use crate::data::{
    load_discharge, load_ensemble, load_forcing, normalize, save_discharge, save_forcing,
    DischargeHistory, ForcingSeries, NormStats,
};
use crate::dist::QuantileSet;
use crate::error::{HydroError, Result};
use crate::fmtnum::fmt_sig9;
use crate::net::{init_model, ModelConfig};
use crate::report::{
    annual_energy_pct, band_export, band_tables, baseline_mean_energy, coverage_table,
    monthly_energy, save_coverage_csv, ProductivityTable, QuantileCurves,
};
use crate::scenario::{fit_serial_model, generate, reorder, ScenarioSet, SerialFitOptions, SerialModel};
use crate::train::train;

fn ensure_out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let out = require_path(&cfg.paths.out_dir, "out_dir")?;
    fs::create_dir_all(out).map_err(|e| HydroError::io(out, e))?;
    Ok(out.to_path_buf())
}

/// `synth`: writes forcing.csv, history.csv and ground_truth.json.
pub fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    let spec = cfg
        .synth
        .as_ref()
        .ok_or_else(|| HydroError::Config("config has no \"synth\" section".into()))?;
    spec.validate()?;
    let out = ensure_out_dir(cfg)?;
    let (forcing, history, truth) = synth_generate(spec, cfg.seed)?;
    save_forcing(&forcing, out.join("forcing.csv"))?;
    save_discharge(&history, out.join("history.csv"))?;
    truth.save_json(out.join("ground_truth.json"))?;
    println!(
        "synth: {} months, {} plants, {} masked cells -> {}",
        forcing.months.len(),
        history.plants.len(),
        forcing.n_cells(),
        out.display()
    );
    Ok(())
}

fn load_aligned(cfg: &RunConfig) -> Result<(ForcingSeries, DischargeHistory)> {
    let forcing = load_forcing(require_existing(&cfg.paths.forcing, "forcing")?)?;
    let history = load_discharge(require_existing(&cfg.paths.history, "history")?)?;
    history.check_aligned(&forcing)?;
    Ok((forcing, history))
}

/// `train`: fits normalization on the train window, trains, writes the
/// checkpoint and the per-epoch report CSV.
pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let out = ensure_out_dir(cfg)?;
    let ckpt_path = require_path(&cfg.paths.checkpoint, "checkpoint")?;
    let (forcing, history) = load_aligned(cfg)?;
    let tc = cfg.train_config();
    tc.validate()?;

    let norm = NormStats::fit(&forcing, &tc.train_window)?;
    let forcing_norm = normalize(&forcing, &norm)?;
    let model_cfg = ModelConfig {
        n_cells: forcing.n_cells(),
        embedding_dim: cfg.model.embedding_dim,
        hidden_dim: cfg.model.hidden_dim,
        n_plants: history.plants.len(),
    };
    let init = init_model(model_cfg, cfg.seed)?;
    let (best, report) = train(init, &forcing_norm, &history, &tc)?;

    let ckpt = Checkpoint {
        params: best,
        plants: history.plants.clone(),
        norm,
        quantiles: cfg.quantiles.clone(),
    };
    ckpt.save(ckpt_path)?;
    report.save_csv(out.join("train_report.csv"))?;
    let selected = &report.epochs[report.selected_epoch];
    println!(
        "train: {} epochs run, selected epoch {} (train {}, valid {}), {:.1}s -> {}",
        report.epochs.len() - 1,
        report.selected_epoch,
        fmt_sig9(selected.train_loss),
        fmt_sig9(selected.valid_loss),
        report.wall_secs,
        ckpt_path.display()
    );
    Ok(())
}

fn serial_cache_path(ckpt_path: &Path, fingerprint: &str, diagonal: bool) -> PathBuf {
    let stem = ckpt_path
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "checkpoint".into());
    let mode = if diagonal { "diag" } else { "full" };
    let name = format!("{stem}.serial_{}_{mode}.json", &fingerprint[..8.min(fingerprint.len())]);
    ckpt_path.with_file_name(name)
}

fn serial_model_for(
    cfg: &RunConfig,
    ckpt: &Checkpoint,
    ckpt_path: &Path,
    fingerprint: &str,
) -> Result<SerialModel> {
    let opts = SerialFitOptions {
        diagonal_phi_y: cfg.generate.diagonal_phi_y,
        ..Default::default()
    };
    let cache = serial_cache_path(ckpt_path, fingerprint, opts.diagonal_phi_y);
    if cache.exists() {
        return SerialModel::load_json(&cache);
    }
    let (forcing, history) = load_aligned(cfg)?;
    // Eq. 7 regression is fitted on the training window only
    let w = cfg.train.train_window;
    let forcing_w = forcing.window(&w)?;
    let history_w = history.window(&w)?;
    let forcing_norm = normalize(&forcing_w, &ckpt.norm)?;
    let sm = fit_serial_model(&ckpt.params, &forcing_norm, &history_w, &opts)?;
    if sm.ridge > 0.0 {
        eprintln!(
            "warning: serial regression design was rank-deficient; ridge {} applied",
            sm.ridge
        );
    }
    sm.save_json(&cache)?;
    Ok(sm)
}

/// `generate`: samples scenarios per ensemble trajectory, restores serial
/// correlation unless `--no-reorder`, and writes scenarios.csv + provenance.
pub fn cmd_generate(cfg: &RunConfig, apply_reorder: bool) -> Result<()> {
    let out = ensure_out_dir(cfg)?;
    let ckpt_path = require_existing(&cfg.paths.checkpoint, "checkpoint")?;
    let ckpt = Checkpoint::load(ckpt_path)?;
    let fingerprint = file_fingerprint(ckpt_path)?;
    let ensemble = load_ensemble(require_existing(&cfg.paths.ensemble_dir, "ensemble_dir")?)?;

    let (mut set, hidden) = generate(&ckpt, &ensemble, cfg.generate.n_scen, cfg.seed)?;
    set.provenance.checkpoint = fingerprint.clone();
    if apply_reorder {
        let sm = serial_model_for(cfg, &ckpt, ckpt_path, &fingerprint)?;
        set = reorder(&set, &hidden, &sm)?;
    }
    let path = out.join("scenarios.csv");
    set.save_csv(&path)?;
    println!(
        "generate: {} trajectories x {} scenarios x {} months x {} plants ({} rows) -> {}",
        set.n_traj(),
        set.n_scen,
        set.horizon,
        set.n_plants(),
        set.n_traj() * set.n_scen * set.horizon * set.n_plants(),
        path.display()
    );
    Ok(())
}

/// `report`: coverage tables for the train and validation windows, inflow
/// energy (history plus scenarios when present), and per-plant band exports.
pub fn cmd_report(cfg: &RunConfig) -> Result<()> {
    let out = ensure_out_dir(cfg)?;
    let ckpt_path = require_existing(&cfg.paths.checkpoint, "checkpoint")?;
    let ckpt = Checkpoint::load(ckpt_path)?;
    let (forcing, history) = load_aligned(cfg)?;
    if history.plants != ckpt.plants {
        return Err(HydroError::Data(
            "history plants do not match the checkpoint".into(),
        ));
    }
    let forcing_norm = normalize(&forcing, &ckpt.norm)?;
    let qs = QuantileSet::new(&ckpt.quantiles)?;

    // coverage per window
    let mut reports = Vec::new();
    for (label, w) in [
        ("train", cfg.train.train_window),
        ("valid", cfg.train.valid_window),
    ] {
        let window: Window = w;
        if !window.select(&forcing.months).is_empty() {
            let rep = coverage_table(&ckpt.params, &forcing_norm, &history, &window, &qs)?;
            reports.push((label.to_string(), rep));
        }
    }
    save_coverage_csv(&reports, out.join("coverage.csv"))?;

    // inflow energy, % of the historical mean
    let productivity = match &cfg.paths.productivity {
        Some(p) => ProductivityTable::load_csv(p)?,
        None => ProductivityTable::uniform(&history.plants),
    };
    let rho = productivity.vector(&history.plants)?;
    let baseline = baseline_mean_energy(&history, &rho)?;
    let mut energy_csv = String::from("source,trajectory,scenario,year,energy_pct\n");
    let hist_energy = monthly_energy(&history.values, &rho)?;
    for (year, pct) in annual_energy_pct(&history.months, &hist_energy, baseline)? {
        energy_csv.push_str(&format!("history,,,{},{}\n", year, fmt_sig9(pct)));
    }
    let scen_path = match &cfg.paths.scenarios {
        Some(p) => p.clone(),
        None => out.join("scenarios.csv"),
    };
    if scen_path.exists() {
        let set = ScenarioSet::load_csv(&scen_path)?;
        let months = set.months();
        let mut values = crate::linalg::Mat::zeros(set.horizon, set.n_plants());
        for (tr, &tid) in set.traj_ids.iter().enumerate() {
            for s in 0..set.n_scen {
                for t in 0..set.horizon {
                    for p in 0..set.n_plants() {
                        values[(t, p)] = set.value(tr, s, t, p);
                    }
                }
                let e = monthly_energy(&values, &rho)?;
                for (year, pct) in annual_energy_pct(&months, &e, baseline)? {
                    energy_csv.push_str(&format!(
                        "scenario,{tid},{s},{year},{}\n",
                        fmt_sig9(pct)
                    ));
                }
            }
        }
    }
    let energy_path = out.join("inflow_energy.csv");
    fs::write(&energy_path, energy_csv).map_err(|e| HydroError::io(&energy_path, e))?;

    // per-plant quantile bands with observations, over the full data range
    let input = forcing_norm.to_inputs();
    let (dist, _) = crate::net::forward(&ckpt.params, &input, crate::net::Mode::Eval)?;
    let curves = QuantileCurves::from_dist(&dist, &qs);
    let tables = band_tables(&curves, Some(&history.values), &forcing.months, &history.plants)?;
    band_export(&tables, out.join("bands"))?;

    println!(
        "report: coverage ({} windows), energy, bands for {} plants -> {}",
        reports.len(),
        history.plants.len(),
        out.display()
    );
    Ok(())
}
