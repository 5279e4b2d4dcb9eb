//! The serial-correlation regression: discharge at month t regressed on the
//! previous month's discharge and the recurrent hidden state,
//! `y(t) = c + phi_y·y(t-1) + phi_h·h(t-1) + eps`, with the residual
//! covariance shrunk toward its diagonal so its inverse always exists.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{DischargeHistory, ForcingSeries};
use crate::error::{HydroError, Result};
use crate::linalg::{chol_inverse, chol_solve, cholesky, Mat};
use crate::net::{forward, Mode, ModelParams};

/// Shrinkage weight toward the diagonal of the residual covariance.
pub const THETA_SHRINKAGE: f64 = 0.1;

#[derive(Debug, Clone, Copy)]
pub struct SerialFitOptions {
    /// Restrict phi_y to a diagonal (per-plant scalar) instead of the full
    /// plant × plant matrix.
    pub diagonal_phi_y: bool,
    pub shrinkage: f64,
}

impl Default for SerialFitOptions {
    fn default() -> Self {
        SerialFitOptions {
            diagonal_phi_y: false,
            shrinkage: THETA_SHRINKAGE,
        }
    }
}

/// Fitted regression coefficients and residual covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct SerialModel {
    pub intercept: Vec<f64>,
    pub phi_y: Mat,
    pub phi_h: Mat,
    pub theta: Mat,
    pub theta_inv: Mat,
    /// Ridge actually applied to the normal equations (0 unless the design
    /// was rank-deficient and the solver had to escalate).
    pub ridge: f64,
}

impl SerialModel {
    pub fn n_plants(&self) -> usize {
        self.intercept.len()
    }

    pub fn hidden_dim(&self) -> usize {
        self.phi_h.cols()
    }

    /// Regression prediction `c + phi_y·y_prev + phi_h·h_prev`.
    pub fn predict(&self, y_prev: &[f64], h_prev: &[f64]) -> Vec<f64> {
        let p = self.n_plants();
        let mut out = self.intercept.clone();
        let mut tmp = vec![0.0; p];
        self.phi_y.matvec(y_prev, &mut tmp);
        for (o, v) in out.iter_mut().zip(&tmp) {
            *o += v;
        }
        self.phi_h.matvec(h_prev, &mut tmp);
        for (o, v) in out.iter_mut().zip(&tmp) {
            *o += v;
        }
        out
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = SerialModelFile {
            n_plants: self.n_plants(),
            hidden_dim: self.hidden_dim(),
            intercept: self.intercept.clone(),
            phi_y: self.phi_y.as_slice().to_vec(),
            phi_h: self.phi_h.as_slice().to_vec(),
            theta: self.theta.as_slice().to_vec(),
            theta_inv: self.theta_inv.as_slice().to_vec(),
            ridge: self.ridge,
        };
        let text = serde_json::to_string(&file)
            .map_err(|e| HydroError::Data(format!("serial model serialization: {e}")))?;
        fs::write(path, text).map_err(|e| HydroError::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| HydroError::io(path, e))?;
        let f: SerialModelFile = serde_json::from_str(&text)
            .map_err(|e| HydroError::Data(format!("bad serial model {}: {e}", path.display())))?;
        let (p, h) = (f.n_plants, f.hidden_dim);
        Ok(SerialModel {
            intercept: f.intercept,
            phi_y: Mat::from_vec(p, p, f.phi_y),
            phi_h: Mat::from_vec(p, h, f.phi_h),
            theta: Mat::from_vec(p, p, f.theta),
            theta_inv: Mat::from_vec(p, p, f.theta_inv),
            ridge: f.ridge,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct SerialModelFile {
    n_plants: usize,
    hidden_dim: usize,
    intercept: Vec<f64>,
    phi_y: Vec<f64>,
    phi_h: Vec<f64>,
    theta: Vec<f64>,
    theta_inv: Vec<f64>,
    ridge: f64,
}

/// Least squares of `targets` (n × m) on `design` (n × k) via the normal
/// equations, escalating a ridge term until the Cholesky factorization
/// succeeds. Returns the k × m coefficient matrix and the ridge used.
fn ridge_least_squares(design: &Mat, targets: &Mat) -> Result<(Mat, f64)> {
    let (n, k) = (design.rows(), design.cols());
    let m = targets.cols();
    let mut xtx = Mat::zeros(k, k);
    for t in 0..n {
        let row = design.row(t);
        for a in 0..k {
            for b in a..k {
                xtx[(a, b)] += row[a] * row[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            xtx[(a, b)] = xtx[(b, a)];
        }
    }
    let mut xty = Mat::zeros(k, m);
    for t in 0..n {
        let row = design.row(t);
        let y = targets.row(t);
        for a in 0..k {
            for c in 0..m {
                xty[(a, c)] += row[a] * y[c];
            }
        }
    }

    let trace: f64 = (0..k).map(|a| xtx[(a, a)]).sum();
    let mut ridge = 0.0;
    for attempt in 0..8 {
        let mut a = xtx.clone();
        for i in 0..k {
            a[(i, i)] += ridge;
        }
        if let Ok(l) = cholesky(&a) {
            let mut beta = Mat::zeros(k, m);
            let mut rhs = vec![0.0; k];
            for c in 0..m {
                for i in 0..k {
                    rhs[i] = xty[(i, c)];
                }
                let col = chol_solve(&l, &rhs);
                for i in 0..k {
                    beta[(i, c)] = col[i];
                }
            }
            return Ok((beta, ridge));
        }
        // rank-deficient design: escalate and retry
        let base = 1e-10 * (trace / k as f64).max(1e-12);
        ridge = if attempt == 0 { base } else { ridge * 100.0 };
    }
    Err(HydroError::Numeric(
        "normal equations unsolvable even with ridge escalation".into(),
    ))
}

/// Fits the serial model from aligned discharge (T × P) and hidden states
/// (T × H). Row t of the regression explains y[t] by [1, y[t-1], h[t-1]].
pub fn fit_serial_from_states(y: &Mat, h: &Mat, opts: &SerialFitOptions) -> Result<SerialModel> {
    let t_len = y.rows();
    let p_len = y.cols();
    let h_len = h.cols();
    if h.rows() != t_len {
        return Err(HydroError::Shape(format!(
            "hidden states have {} rows, discharge has {t_len}",
            h.rows()
        )));
    }
    if t_len < 24 {
        return Err(HydroError::Data(format!(
            "serial fit needs at least 24 aligned months, got {t_len}"
        )));
    }
    if !(opts.shrinkage >= 0.0 && opts.shrinkage <= 1.0) {
        return Err(HydroError::Config("shrinkage must lie in [0, 1]".into()));
    }
    let n = t_len - 1;

    let mut intercept = vec![0.0; p_len];
    let mut phi_y = Mat::zeros(p_len, p_len);
    let mut phi_h = Mat::zeros(p_len, h_len);
    let mut max_ridge = 0.0f64;

    if opts.diagonal_phi_y {
        // independent per-plant regressions on [1, y_p(t-1), h(t-1)]
        for p in 0..p_len {
            let k = 2 + h_len;
            let mut design = Mat::zeros(n, k);
            let mut target = Mat::zeros(n, 1);
            for t in 1..t_len {
                let r = t - 1;
                design[(r, 0)] = 1.0;
                design[(r, 1)] = y[(t - 1, p)];
                for j in 0..h_len {
                    design[(r, 2 + j)] = h[(t - 1, j)];
                }
                target[(r, 0)] = y[(t, p)];
            }
            let (beta, ridge) = ridge_least_squares(&design, &target)?;
            max_ridge = max_ridge.max(ridge);
            intercept[p] = beta[(0, 0)];
            phi_y[(p, p)] = beta[(1, 0)];
            for j in 0..h_len {
                phi_h[(p, j)] = beta[(2 + j, 0)];
            }
        }
    } else {
        let k = 1 + p_len + h_len;
        let mut design = Mat::zeros(n, k);
        let mut target = Mat::zeros(n, p_len);
        for t in 1..t_len {
            let r = t - 1;
            design[(r, 0)] = 1.0;
            for q in 0..p_len {
                design[(r, 1 + q)] = y[(t - 1, q)];
            }
            for j in 0..h_len {
                design[(r, 1 + p_len + j)] = h[(t - 1, j)];
            }
            for q in 0..p_len {
                target[(r, q)] = y[(t, q)];
            }
        }
        let (beta, ridge) = ridge_least_squares(&design, &target)?;
        max_ridge = ridge;
        for p in 0..p_len {
            intercept[p] = beta[(0, p)];
            for q in 0..p_len {
                phi_y[(p, q)] = beta[(1 + q, p)];
            }
            for j in 0..h_len {
                phi_h[(p, j)] = beta[(1 + p_len + j, p)];
            }
        }
    }

    // residual covariance with diagonal shrinkage and a diagonal floor
    let model_stub = SerialModel {
        intercept: intercept.clone(),
        phi_y: phi_y.clone(),
        phi_h: phi_h.clone(),
        theta: Mat::zeros(p_len, p_len),
        theta_inv: Mat::zeros(p_len, p_len),
        ridge: max_ridge,
    };
    let mut sample = Mat::zeros(p_len, p_len);
    for t in 1..t_len {
        let pred = model_stub.predict(y.row(t - 1), h.row(t - 1));
        let resid: Vec<f64> = (0..p_len).map(|p| y[(t, p)] - pred[p]).collect();
        sample.add_outer(&resid, &resid, 1.0 / n as f64);
    }
    let lam = opts.shrinkage;
    let mut theta = Mat::zeros(p_len, p_len);
    for a in 0..p_len {
        for b in 0..p_len {
            theta[(a, b)] = if a == b {
                sample[(a, b)]
            } else {
                (1.0 - lam) * sample[(a, b)]
            };
        }
    }
    let mean_diag = (0..p_len).map(|a| theta[(a, a)]).sum::<f64>() / p_len as f64;
    let floor = if mean_diag > 0.0 {
        1e-8 * mean_diag
    } else {
        1e-12
    };
    for a in 0..p_len {
        if theta[(a, a)] < floor {
            theta[(a, a)] = floor;
        }
    }
    let l = cholesky(&theta)?;
    let theta_inv = chol_inverse(&l);

    Ok(SerialModel {
        intercept,
        phi_y,
        phi_h,
        theta,
        theta_inv,
        ridge: max_ridge,
    })
}

/// Fits the serial model on historical data: an eval-mode forward pass over
/// the (normalized) training forcing provides h(t).
pub fn fit_serial_model(
    params: &ModelParams,
    forcing_norm: &ForcingSeries,
    history: &DischargeHistory,
    opts: &SerialFitOptions,
) -> Result<SerialModel> {
    history.check_aligned(forcing_norm)?;
    let input = forcing_norm.to_inputs();
    let (_, hidden) = forward(params, &input, Mode::Eval)?;
    fit_serial_from_states(&history.values, &hidden.h, opts)
}

/// Mahalanobis cost matrix between month t-1 scenarios and month t
/// candidates: `cost[i][j] = d' Theta^{-1} d` with
/// `d = y_curr[j] - (c + phi_y·y_prev[i] + phi_h·h_prev)`.
/// `h_prev` is shared by all scenarios of the trajectory.
pub fn mahalanobis_cost(
    y_prev: &Mat,
    h_prev: &[f64],
    y_curr: &Mat,
    sm: &SerialModel,
) -> Result<Mat> {
    let s = y_prev.rows();
    let p = sm.n_plants();
    if y_curr.rows() != s || y_prev.cols() != p || y_curr.cols() != p {
        return Err(HydroError::Shape(format!(
            "cost needs {s}x{p} matrices on both sides, got y_prev {}x{} / y_curr {}x{}",
            y_prev.rows(),
            y_prev.cols(),
            y_curr.rows(),
            y_curr.cols()
        )));
    }
    if h_prev.len() != sm.hidden_dim() {
        return Err(HydroError::Shape(format!(
            "hidden vector has {} entries, model expects {}",
            h_prev.len(),
            sm.hidden_dim()
        )));
    }
    let mut cost = Mat::zeros(s, s);
    let mut d = vec![0.0; p];
    let mut td = vec![0.0; p];
    for i in 0..s {
        let pred = sm.predict(y_prev.row(i), h_prev);
        for j in 0..s {
            let y_j = y_curr.row(j);
            for a in 0..p {
                d[a] = y_j[a] - pred[a];
            }
            sm.theta_inv.matvec(&d, &mut td);
            let c: f64 = d.iter().zip(&td).map(|(x, y)| x * y).sum();
            if !c.is_finite() {
                return Err(HydroError::Numeric(format!(
                    "non-finite Mahalanobis cost at pair ({i},{j})"
                )));
            }
            cost[(i, j)] = c;
        }
    }
    Ok(cost)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn ar1_history(n: usize, plants: usize, coeff: f64, seed: u64) -> Mat {
        let mut rng = crate::rngutil::substream(seed, &[900]);
        let mut y = Mat::zeros(n, plants);
        for p in 0..plants {
            let mut prev = 10.0 + p as f64;
            for t in 0..n {
                let eps: f64 = rng.sample(StandardNormal);
                let cur = 2.0 + coeff * prev + 0.5 * eps;
                y[(t, p)] = cur;
                prev = cur;
            }
        }
        y
    }

    #[test]
    fn recovers_ar1_coefficient_with_zero_hidden() {
        let y = ar1_history(500, 2, 0.8, 5);
        let h = Mat::zeros(500, 3); // zero hidden states: rank-deficient design
        let sm = fit_serial_from_states(&y, &h, &SerialFitOptions::default()).unwrap();
        for p in 0..2 {
            assert!(
                (sm.phi_y[(p, p)] - 0.8).abs() < 0.05,
                "plant {p}: phi_y {}",
                sm.phi_y[(p, p)]
            );
        }
        // independent plants: cross terms near zero (OLS noise at n=500)
        assert!(sm.phi_y[(0, 1)].abs() < 0.1);
        assert!(sm.phi_y[(1, 0)].abs() < 0.1);
        assert!(sm.ridge > 0.0, "zero hidden columns should need a ridge");
    }

    #[test]
    fn residuals_have_zero_mean() {
        let y = ar1_history(300, 2, 0.6, 9);
        let mut rng = crate::rngutil::substream(9, &[901]);
        let mut h = Mat::zeros(300, 2);
        for v in h.as_mut_slice() {
            *v = rng.random_range(-1.0..1.0);
        }
        let sm = fit_serial_from_states(&y, &h, &SerialFitOptions::default()).unwrap();
        let mut mean = vec![0.0; 2];
        for t in 1..300 {
            let pred = sm.predict(y.row(t - 1), h.row(t - 1));
            for p in 0..2 {
                mean[p] += (y[(t, p)] - pred[p]) / 299.0;
            }
        }
        for p in 0..2 {
            assert!(mean[p].abs() < 1e-8, "plant {p}: residual mean {}", mean[p]);
        }
    }

    #[test]
    fn single_plant_shrinkage_is_a_fixed_point() {
        let y = ar1_history(200, 1, 0.5, 3);
        let h = Mat::zeros(200, 1);
        let opts = SerialFitOptions::default();
        let sm = fit_serial_from_states(&y, &h, &opts).unwrap();
        // in 1-D, (1-lam)·s + lam·s = s: theta equals the raw residual variance
        let mut var = 0.0;
        for t in 1..200 {
            let pred = sm.predict(y.row(t - 1), h.row(t - 1));
            var += (y[(t, 0)] - pred[0]).powi(2) / 199.0;
        }
        assert_relative_eq!(sm.theta[(0, 0)], var, max_relative = 1e-10);
        assert_relative_eq!(sm.theta_inv[(0, 0)], 1.0 / var, max_relative = 1e-10);
    }

    #[test]
    fn diagonal_mode_zeroes_cross_terms() {
        let y = ar1_history(120, 3, 0.7, 11);
        let h = Mat::zeros(120, 2);
        let opts = SerialFitOptions {
            diagonal_phi_y: true,
            ..Default::default()
        };
        let sm = fit_serial_from_states(&y, &h, &opts).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                if a != b {
                    assert_eq!(sm.phi_y[(a, b)], 0.0);
                }
            }
        }
        assert!((sm.phi_y[(1, 1)] - 0.7).abs() < 0.1);
    }

    #[test]
    fn too_short_history_is_rejected() {
        let y = ar1_history(20, 1, 0.5, 1);
        let h = Mat::zeros(20, 1);
        assert!(fit_serial_from_states(&y, &h, &SerialFitOptions::default()).is_err());
    }

    #[test]
    fn mahalanobis_zero_for_exact_prediction_and_euclidean_for_identity() {
        let sm = SerialModel {
            intercept: vec![1.0, -2.0],
            phi_y: Mat::from_vec(2, 2, vec![0.5, 0.1, 0.0, 0.7]),
            phi_h: Mat::from_vec(2, 2, vec![0.2, 0.0, -0.1, 0.3]),
            theta: Mat::identity(2),
            theta_inv: Mat::identity(2),
            ridge: 0.0,
        };
        let y_prev = Mat::from_vec(2, 2, vec![3.0, 4.0, 1.0, 2.0]);
        let h_prev = vec![0.5, -0.5];
        let pred0 = sm.predict(y_prev.row(0), &h_prev);
        let mut y_curr = Mat::from_vec(2, 2, vec![0.0, 0.0, 10.0, 10.0]);
        y_curr.row_mut(0).copy_from_slice(&pred0);
        let cost = mahalanobis_cost(&y_prev, &h_prev, &y_curr, &sm).unwrap();
        assert_eq!(cost[(0, 0)], 0.0);
        // identity Theta: cost is squared Euclidean distance
        let pred1 = sm.predict(y_prev.row(1), &h_prev);
        let expect: f64 = (0..2).map(|a| (y_curr[(1, a)] - pred1[a]).powi(2)).sum();
        assert_relative_eq!(cost[(1, 1)], expect, max_relative = 1e-12);
    }

    /// Independent double-loop re-implementation as the oracle.
    #[test]
    fn mahalanobis_matches_naive_double_loop() {
        let mut rng = crate::rngutil::substream(21, &[903]);
        let (s, p, hd) = (3usize, 2usize, 2usize);
        let theta = {
            // SPD via A'A + I
            let a = Mat::from_vec(p, p, (0..p * p).map(|_| rng.random_range(-1.0..1.0)).collect());
            let mut t = Mat::identity(p);
            for i in 0..p {
                for j in 0..p {
                    for k in 0..p {
                        t[(i, j)] += a[(k, i)] * a[(k, j)];
                    }
                }
            }
            t
        };
        let l = cholesky(&theta).unwrap();
        let theta_inv = chol_inverse(&l);
        let sm = SerialModel {
            intercept: (0..p).map(|_| rng.random_range(-1.0..1.0)).collect(),
            phi_y: Mat::from_vec(p, p, (0..p * p).map(|_| rng.random_range(-0.5..0.9)).collect()),
            phi_h: Mat::from_vec(p, hd, (0..p * hd).map(|_| rng.random_range(-0.5..0.5)).collect()),
            theta,
            theta_inv: theta_inv.clone(),
            ridge: 0.0,
        };
        let y_prev = Mat::from_vec(s, p, (0..s * p).map(|_| rng.random_range(1.0..9.0)).collect());
        let y_curr = Mat::from_vec(s, p, (0..s * p).map(|_| rng.random_range(1.0..9.0)).collect());
        let h_prev: Vec<f64> = (0..hd).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cost = mahalanobis_cost(&y_prev, &h_prev, &y_curr, &sm).unwrap();
        for i in 0..s {
            for j in 0..s {
                // naive: pred = c + phi_y y + phi_h h, then d' Tinv d elementwise
                let mut pred = sm.intercept.clone();
                for a in 0..p {
                    for b in 0..p {
                        pred[a] += sm.phi_y[(a, b)] * y_prev[(i, b)];
                    }
                    for b in 0..hd {
                        pred[a] += sm.phi_h[(a, b)] * h_prev[b];
                    }
                }
                let mut expect = 0.0;
                for a in 0..p {
                    for b in 0..p {
                        expect += (y_curr[(j, a)] - pred[a])
                            * theta_inv[(a, b)]
                            * (y_curr[(j, b)] - pred[b]);
                    }
                }
                assert_relative_eq!(cost[(i, j)], expect, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn serial_model_json_roundtrip() {
        let y = ar1_history(100, 2, 0.6, 2);
        let h = Mat::zeros(100, 2);
        let sm = fit_serial_from_states(&y, &h, &SerialFitOptions::default()).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        sm.save_json(f.path()).unwrap();
        let back = SerialModel::load_json(f.path()).unwrap();
        assert_eq!(sm, back);
    }
}
