//! The differentiable network: non-negative precipitation embedding,
//! a single GRU layer (no gate biases), inverted dropout on the embedding,
//! and three linear heads emitting (mu, sigma, theta) per plant, with exact
//! reverse-mode gradients through the full unrolled sequence.
//!
//! Gate equations, per month t with embedding e_t and previous hidden h:
//!   z = sigm(W_z·e + U_z·h)
//!   r = sigm(W_r·e + U_r·h)
//!   c = tanh(W_h·e + U_h·(r⊙h))
//!   h' = (1 - z)⊙h + z⊙c

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::InputSeq;
use crate::dist::{DistGrad, DistSeq, SIGMA_FLOOR};
use crate::error::{HydroError, Result};
use crate::linalg::Mat;
use crate::rngutil::{substream, STREAM_INIT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_cells: usize,
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub n_plants: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_cells == 0 || self.embedding_dim == 0 || self.hidden_dim == 0 || self.n_plants == 0
        {
            return Err(HydroError::Config(format!(
                "model dimensions must be positive: cells {}, embedding {}, hidden {}, plants {}",
                self.n_cells, self.embedding_dim, self.hidden_dim, self.n_plants
            )));
        }
        Ok(())
    }
}

/// All learnable weights. `w_in_p` is the precipitation embedding and is
/// kept entrywise non-negative by [`ModelParams::project_nonneg`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub cfg: ModelConfig,
    pub w_in_p: Mat,
    pub w_in_t: Mat,
    pub w_z: Mat,
    pub u_z: Mat,
    pub w_r: Mat,
    pub u_r: Mat,
    pub w_h: Mat,
    pub u_h: Mat,
    pub w_mu: Mat,
    pub w_sigma: Mat,
    pub w_theta: Mat,
    pub b_mu: Vec<f64>,
    pub b_sigma: Vec<f64>,
    pub b_theta: Vec<f64>,
}

/// Parameter-shaped gradient accumulator.
pub type Gradients = ModelParams;

pub const TENSOR_NAMES: [&str; 14] = [
    "w_in_p", "w_in_t", "w_z", "u_z", "w_r", "u_r", "w_h", "u_h", "w_mu", "w_sigma", "w_theta",
    "b_mu", "b_sigma", "b_theta",
];

impl ModelParams {
    pub fn zeros(cfg: ModelConfig) -> Self {
        let (c, e, h, p) = (cfg.n_cells, cfg.embedding_dim, cfg.hidden_dim, cfg.n_plants);
        ModelParams {
            cfg,
            w_in_p: Mat::zeros(e, c),
            w_in_t: Mat::zeros(e, c),
            w_z: Mat::zeros(h, e),
            u_z: Mat::zeros(h, h),
            w_r: Mat::zeros(h, e),
            u_r: Mat::zeros(h, h),
            w_h: Mat::zeros(h, e),
            u_h: Mat::zeros(h, h),
            w_mu: Mat::zeros(p, h),
            w_sigma: Mat::zeros(p, h),
            w_theta: Mat::zeros(p, h),
            b_mu: vec![0.0; p],
            b_sigma: vec![0.0; p],
            b_theta: vec![0.0; p],
        }
    }

    /// Named flat views over every tensor, in a fixed order.
    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("w_in_p", self.w_in_p.as_slice()),
            ("w_in_t", self.w_in_t.as_slice()),
            ("w_z", self.w_z.as_slice()),
            ("u_z", self.u_z.as_slice()),
            ("w_r", self.w_r.as_slice()),
            ("u_r", self.u_r.as_slice()),
            ("w_h", self.w_h.as_slice()),
            ("u_h", self.u_h.as_slice()),
            ("w_mu", self.w_mu.as_slice()),
            ("w_sigma", self.w_sigma.as_slice()),
            ("w_theta", self.w_theta.as_slice()),
            ("b_mu", &self.b_mu),
            ("b_sigma", &self.b_sigma),
            ("b_theta", &self.b_theta),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let ModelParams {
            cfg: _,
            w_in_p,
            w_in_t,
            w_z,
            u_z,
            w_r,
            u_r,
            w_h,
            u_h,
            w_mu,
            w_sigma,
            w_theta,
            b_mu,
            b_sigma,
            b_theta,
        } = self;
        vec![
            ("w_in_p", w_in_p.as_mut_slice()),
            ("w_in_t", w_in_t.as_mut_slice()),
            ("w_z", w_z.as_mut_slice()),
            ("u_z", u_z.as_mut_slice()),
            ("w_r", w_r.as_mut_slice()),
            ("u_r", u_r.as_mut_slice()),
            ("w_h", w_h.as_mut_slice()),
            ("u_h", u_h.as_mut_slice()),
            ("w_mu", w_mu.as_mut_slice()),
            ("w_sigma", w_sigma.as_mut_slice()),
            ("w_theta", w_theta.as_mut_slice()),
            ("b_mu", b_mu.as_mut_slice()),
            ("b_sigma", b_sigma.as_mut_slice()),
            ("b_theta", b_theta.as_mut_slice()),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// Clamps every entry of the precipitation embedding at zero; all other
    /// tensors are untouched. Idempotent.
    pub fn project_nonneg(&mut self) {
        for v in self.w_in_p.as_mut_slice() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }

    pub fn min_w_in_p(&self) -> f64 {
        self.w_in_p
            .as_slice()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Draws initial parameters. GRU and head weights are uniform in
/// ±sqrt(1/fan_in); `w_in_p` is uniform in [0, sqrt(1/fan_in)] so the
/// non-negativity invariant holds from step zero; `b_sigma` starts at
/// softplus⁻¹(0.5).
pub fn init_model(cfg: ModelConfig, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;
    let mut rng = substream(seed, &[STREAM_INIT]);
    let mut params = ModelParams::zeros(cfg);

    fn fill_uniform<R: Rng>(m: &mut Mat, lo: f64, hi: f64, rng: &mut R) {
        for v in m.as_mut_slice() {
            *v = rng.random_range(lo..hi);
        }
    }

    let c_bound = (1.0 / cfg.n_cells as f64).sqrt();
    let e_bound = (1.0 / cfg.embedding_dim as f64).sqrt();
    let h_bound = (1.0 / cfg.hidden_dim as f64).sqrt();

    fill_uniform(&mut params.w_in_p, 0.0, c_bound, &mut rng);
    fill_uniform(&mut params.w_in_t, -c_bound, c_bound, &mut rng);
    fill_uniform(&mut params.w_z, -e_bound, e_bound, &mut rng);
    fill_uniform(&mut params.u_z, -h_bound, h_bound, &mut rng);
    fill_uniform(&mut params.w_r, -e_bound, e_bound, &mut rng);
    fill_uniform(&mut params.u_r, -h_bound, h_bound, &mut rng);
    fill_uniform(&mut params.w_h, -e_bound, e_bound, &mut rng);
    fill_uniform(&mut params.u_h, -h_bound, h_bound, &mut rng);
    fill_uniform(&mut params.w_mu, -h_bound, h_bound, &mut rng);
    fill_uniform(&mut params.w_sigma, -h_bound, h_bound, &mut rng);
    fill_uniform(&mut params.w_theta, -h_bound, h_bound, &mut rng);

    // softplus(b) = 0.5
    let b_sigma0 = (0.5_f64.exp() - 1.0).ln();
    params.b_sigma.fill(b_sigma0);
    Ok(params)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Phase {
    Train,
    Eval,
}

/// Forward/backward execution mode. Train mode owns the dropout stream.
pub enum Mode<'a> {
    Train {
        dropout_rate: f64,
        rng: &'a mut ChaCha8Rng,
    },
    Eval,
}

/// Hidden-state trajectory, (month, hidden_dim).
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenSeq {
    pub h: Mat,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Linear embedding of one month's inputs:
/// `W_in_p·precip + W_in_t·temp`, no bias, so zero precipitation on the
/// non-negative path contributes exactly zero.
pub fn embed(params: &ModelParams, precip: &[f64], temp: &[f64], out: &mut [f64]) -> Result<()> {
    if precip.len() != params.cfg.n_cells || temp.len() != params.cfg.n_cells {
        return Err(HydroError::Shape(format!(
            "embed expects {} cells, got precip {} / temp {}",
            params.cfg.n_cells,
            precip.len(),
            temp.len()
        )));
    }
    let mut tmp = vec![0.0; params.cfg.embedding_dim];
    params.w_in_p.matvec(precip, out);
    params.w_in_t.matvec(temp, &mut tmp);
    for (o, t) in out.iter_mut().zip(&tmp) {
        *o += t;
    }
    Ok(())
}

/// One GRU step (the paper's gate equations, no bias terms).
pub fn gru_cell(params: &ModelParams, e_t: &[f64], h_prev: &[f64]) -> Result<Vec<f64>> {
    let h_dim = params.cfg.hidden_dim;
    if e_t.len() != params.cfg.embedding_dim || h_prev.len() != h_dim {
        return Err(HydroError::Shape("gru_cell dimension mismatch".into()));
    }
    let mut az = vec![0.0; h_dim];
    let mut ar = vec![0.0; h_dim];
    let mut ah = vec![0.0; h_dim];
    let mut tmp = vec![0.0; h_dim];
    params.w_z.matvec(e_t, &mut az);
    params.u_z.matvec(h_prev, &mut tmp);
    for (a, t) in az.iter_mut().zip(&tmp) {
        *a += t;
    }
    params.w_r.matvec(e_t, &mut ar);
    params.u_r.matvec(h_prev, &mut tmp);
    for (a, t) in ar.iter_mut().zip(&tmp) {
        *a += t;
    }
    let z: Vec<f64> = az.iter().map(|&v| sigmoid(v)).collect();
    let r: Vec<f64> = ar.iter().map(|&v| sigmoid(v)).collect();
    let rh: Vec<f64> = r.iter().zip(h_prev).map(|(ri, hi)| ri * hi).collect();
    params.w_h.matvec(e_t, &mut ah);
    params.u_h.matvec(&rh, &mut tmp);
    for (a, t) in ah.iter_mut().zip(&tmp) {
        *a += t;
    }
    Ok((0..h_dim)
        .map(|i| {
            let c = ah[i].tanh();
            (1.0 - z[i]) * h_prev[i] + z[i] * c
        })
        .collect())
}

/// Per-sequence intermediate values kept for the backward pass.
pub(crate) struct FwdCache {
    /// dropout multiplier per (month, embedding unit): 0 or 1/(1-rate); all 1 in eval
    drop: Mat,
    /// embedding after dropout
    e: Mat,
    z: Mat,
    r: Mat,
    c: Mat,
    h: Mat,
    /// pre-softplus sigma activations
    a_sigma: Mat,
}

pub(crate) fn forward_cached(
    params: &ModelParams,
    input: &InputSeq,
    mode: &mut Mode,
) -> Result<(DistSeq, HiddenSeq, FwdCache)> {
    params.cfg.validate()?;
    let cfg = params.cfg;
    if input.n_cells() != cfg.n_cells {
        return Err(HydroError::Shape(format!(
            "input has {} cells, model expects {}",
            input.n_cells(),
            cfg.n_cells
        )));
    }
    let t_len = input.n_months();
    let (e_dim, h_dim, p_dim) = (cfg.embedding_dim, cfg.hidden_dim, cfg.n_plants);

    let mut cache = FwdCache {
        drop: Mat::zeros(t_len, e_dim),
        e: Mat::zeros(t_len, e_dim),
        z: Mat::zeros(t_len, h_dim),
        r: Mat::zeros(t_len, h_dim),
        c: Mat::zeros(t_len, h_dim),
        h: Mat::zeros(t_len, h_dim),
        a_sigma: Mat::zeros(t_len, p_dim),
    };
    let mut mu = Mat::zeros(t_len, p_dim);
    let mut sigma = Mat::zeros(t_len, p_dim);
    let mut theta = Mat::zeros(t_len, p_dim);

    if let Mode::Train { dropout_rate, .. } = mode {
        if !(0.0..1.0).contains(dropout_rate) {
            return Err(HydroError::Config(format!(
                "dropout rate must lie in [0, 1), got {dropout_rate}"
            )));
        }
    }

    let mut h_prev = vec![0.0; h_dim];
    let mut e_raw = vec![0.0; e_dim];
    let mut tmp = vec![0.0; h_dim];
    let mut head = vec![0.0; p_dim];

    for t in 0..t_len {
        embed(params, input.precip.row(t), input.temp.row(t), &mut e_raw)?;

        // inverted dropout on the embedding
        match mode {
            Mode::Train { dropout_rate, rng } if *dropout_rate > 0.0 => {
                let keep = 1.0 - *dropout_rate;
                let scale = 1.0 / keep;
                for (k, d) in cache.drop.row_mut(t).iter_mut().enumerate() {
                    let kept: f64 = rng.random();
                    *d = if kept < keep { scale } else { 0.0 };
                    cache.e[(t, k)] = e_raw[k] * *d;
                }
            }
            _ => {
                for (k, d) in cache.drop.row_mut(t).iter_mut().enumerate() {
                    *d = 1.0;
                    cache.e[(t, k)] = e_raw[k];
                }
            }
        }
        let e_t = cache.e.row(t).to_vec();

        // gates
        let mut az = vec![0.0; h_dim];
        params.w_z.matvec(&e_t, &mut az);
        params.u_z.matvec(&h_prev, &mut tmp);
        for (a, v) in az.iter_mut().zip(&tmp) {
            *a += v;
        }
        let mut ar = vec![0.0; h_dim];
        params.w_r.matvec(&e_t, &mut ar);
        params.u_r.matvec(&h_prev, &mut tmp);
        for (a, v) in ar.iter_mut().zip(&tmp) {
            *a += v;
        }
        for i in 0..h_dim {
            cache.z[(t, i)] = sigmoid(az[i]);
            cache.r[(t, i)] = sigmoid(ar[i]);
        }
        let rh: Vec<f64> = (0..h_dim).map(|i| cache.r[(t, i)] * h_prev[i]).collect();
        let mut ac = vec![0.0; h_dim];
        params.w_h.matvec(&e_t, &mut ac);
        params.u_h.matvec(&rh, &mut tmp);
        for (a, v) in ac.iter_mut().zip(&tmp) {
            *a += v;
        }
        for i in 0..h_dim {
            let c = ac[i].tanh();
            cache.c[(t, i)] = c;
            cache.h[(t, i)] = (1.0 - cache.z[(t, i)]) * h_prev[i] + cache.z[(t, i)] * c;
        }
        h_prev.copy_from_slice(cache.h.row(t));

        // heads
        params.w_mu.matvec(&h_prev, &mut head);
        for p in 0..p_dim {
            mu[(t, p)] = head[p] + params.b_mu[p];
        }
        params.w_sigma.matvec(&h_prev, &mut head);
        for p in 0..p_dim {
            let a = head[p] + params.b_sigma[p];
            cache.a_sigma[(t, p)] = a;
            sigma[(t, p)] = softplus(a) + SIGMA_FLOOR;
        }
        params.w_theta.matvec(&h_prev, &mut head);
        for p in 0..p_dim {
            theta[(t, p)] = head[p] + params.b_theta[p];
        }

        for p in 0..p_dim {
            if !(mu[(t, p)].is_finite() && sigma[(t, p)].is_finite() && theta[(t, p)].is_finite()) {
                return Err(HydroError::Numeric(format!(
                    "non-finite distribution parameters at month {}",
                    input.months[t]
                )));
            }
        }
    }

    let dist = DistSeq { mu, sigma, theta };
    let hidden = HiddenSeq {
        h: cache.h.clone(),
    };
    Ok((dist, hidden, cache))
}

/// Runs the network over a normalized input sequence.
pub fn forward(params: &ModelParams, input: &InputSeq, mut mode: Mode) -> Result<(DistSeq, HiddenSeq)> {
    let (dist, hidden, _) = forward_cached(params, input, &mut mode)?;
    Ok((dist, hidden))
}

/// Exact reverse-mode gradients for an upstream dL/d(mu, sigma, theta).
///
/// The forward pass is replayed internally, so `mode` must reproduce the
/// configuration of the forward pass being differentiated (same dropout rate
/// and a fresh RNG at the same stream position).
pub fn backward(
    params: &ModelParams,
    input: &InputSeq,
    mut mode: Mode,
    upstream: &DistGrad,
) -> Result<Gradients> {
    let (_, _, cache) = forward_cached(params, input, &mut mode)?;
    backward_from_cache(params, input, &cache, upstream)
}

pub(crate) fn backward_from_cache(
    params: &ModelParams,
    input: &InputSeq,
    cache: &FwdCache,
    upstream: &DistGrad,
) -> Result<Gradients> {
    let cfg = params.cfg;
    let t_len = input.n_months();
    let (e_dim, h_dim, p_dim) = (cfg.embedding_dim, cfg.hidden_dim, cfg.n_plants);
    if upstream.dmu.rows() != t_len || upstream.dmu.cols() != p_dim {
        return Err(HydroError::Shape(format!(
            "upstream gradient is {}x{}, expected {}x{}",
            upstream.dmu.rows(),
            upstream.dmu.cols(),
            t_len,
            p_dim
        )));
    }

    let mut g = ModelParams::zeros(cfg);
    let mut dh_next = vec![0.0; h_dim]; // dL/dh_t flowing backward
    let mut tmp_h = vec![0.0; h_dim];
    let mut tmp_e = vec![0.0; e_dim];

    for t in (0..t_len).rev() {
        let h_t = cache.h.row(t);
        let h_prev_vec: Vec<f64> = if t == 0 {
            vec![0.0; h_dim]
        } else {
            cache.h.row(t - 1).to_vec()
        };
        let h_prev = &h_prev_vec[..];

        // head gradients; sigma chains through softplus' = sigmoid
        let mut dh: Vec<f64> = dh_next.clone();
        let dmu_row = upstream.dmu.row(t);
        let dth_row = upstream.dtheta.row(t);
        let ds_row: Vec<f64> = (0..p_dim)
            .map(|p| upstream.dsigma[(t, p)] * sigmoid(cache.a_sigma[(t, p)]))
            .collect();

        g.w_mu.add_outer(dmu_row, h_t, 1.0);
        g.w_sigma.add_outer(&ds_row, h_t, 1.0);
        g.w_theta.add_outer(dth_row, h_t, 1.0);
        for p in 0..p_dim {
            g.b_mu[p] += dmu_row[p];
            g.b_sigma[p] += ds_row[p];
            g.b_theta[p] += dth_row[p];
        }
        params.w_mu.matvec_t(dmu_row, &mut tmp_h);
        for (d, v) in dh.iter_mut().zip(&tmp_h) {
            *d += v;
        }
        params.w_sigma.matvec_t(&ds_row, &mut tmp_h);
        for (d, v) in dh.iter_mut().zip(&tmp_h) {
            *d += v;
        }
        params.w_theta.matvec_t(dth_row, &mut tmp_h);
        for (d, v) in dh.iter_mut().zip(&tmp_h) {
            *d += v;
        }

        // GRU cell backward
        let z = cache.z.row(t);
        let r = cache.r.row(t);
        let c = cache.c.row(t);
        let e_t = cache.e.row(t);

        let dz: Vec<f64> = (0..h_dim).map(|i| dh[i] * (c[i] - h_prev[i])).collect();
        let dc: Vec<f64> = (0..h_dim).map(|i| dh[i] * z[i]).collect();
        let mut dh_prev: Vec<f64> = (0..h_dim).map(|i| dh[i] * (1.0 - z[i])).collect();

        // candidate: c = tanh(a_c), a_c = W_h e + U_h (r ⊙ h_prev)
        let dac: Vec<f64> = (0..h_dim).map(|i| dc[i] * (1.0 - c[i] * c[i])).collect();
        let rh: Vec<f64> = (0..h_dim).map(|i| r[i] * h_prev[i]).collect();
        g.w_h.add_outer(&dac, e_t, 1.0);
        g.u_h.add_outer(&dac, &rh, 1.0);
        params.u_h.matvec_t(&dac, &mut tmp_h);
        let drh = tmp_h.clone();
        let dr: Vec<f64> = (0..h_dim).map(|i| drh[i] * h_prev[i]).collect();
        for i in 0..h_dim {
            dh_prev[i] += drh[i] * r[i];
        }

        // gates: z = sigm(a_z), r = sigm(a_r)
        let daz: Vec<f64> = (0..h_dim).map(|i| dz[i] * z[i] * (1.0 - z[i])).collect();
        let dar: Vec<f64> = (0..h_dim).map(|i| dr[i] * r[i] * (1.0 - r[i])).collect();
        g.w_z.add_outer(&daz, e_t, 1.0);
        g.u_z.add_outer(&daz, h_prev, 1.0);
        g.w_r.add_outer(&dar, e_t, 1.0);
        g.u_r.add_outer(&dar, h_prev, 1.0);
        params.u_z.matvec_t(&daz, &mut tmp_h);
        for i in 0..h_dim {
            dh_prev[i] += tmp_h[i];
        }
        params.u_r.matvec_t(&dar, &mut tmp_h);
        for i in 0..h_dim {
            dh_prev[i] += tmp_h[i];
        }

        // embedding path: de = W_zᵀ daz + W_rᵀ dar + W_hᵀ dac, then dropout
        let mut de = vec![0.0; e_dim];
        params.w_z.matvec_t(&daz, &mut tmp_e);
        for (d, v) in de.iter_mut().zip(&tmp_e) {
            *d += v;
        }
        params.w_r.matvec_t(&dar, &mut tmp_e);
        for (d, v) in de.iter_mut().zip(&tmp_e) {
            *d += v;
        }
        params.w_h.matvec_t(&dac, &mut tmp_e);
        for (d, v) in de.iter_mut().zip(&tmp_e) {
            *d += v;
        }
        for (k, d) in de.iter_mut().enumerate() {
            *d *= cache.drop[(t, k)];
        }
        g.w_in_p.add_outer(&de, input.precip.row(t), 1.0);
        g.w_in_t.add_outer(&de, input.temp.row(t), 1.0);

        dh_next = dh_prev;
    }

    if !g.is_finite() {
        return Err(HydroError::Numeric("gradients contain NaN/Inf".into()));
    }
    Ok(g)
}

/// Convenience wrapper: derive the train-mode dropout stream used by the
/// training loop. Forward and backward for the same epoch must use streams
/// created with identical arguments.
pub fn dropout_stream(seed: u64, epoch: u64) -> ChaCha8Rng {
    substream(seed, &[crate::rngutil::STREAM_DROPOUT, epoch])
}
