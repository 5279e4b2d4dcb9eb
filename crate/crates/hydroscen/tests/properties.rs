//! Property tests for the crate-wide invariants.

use hydroscen::calendar::{Window, YearMonth};
use hydroscen::data::{denormalize, load_forcing, normalize, save_forcing, ForcingSeries, NormStats};
use hydroscen::fmtnum::fmt_sig9;
use hydroscen::linalg::Mat;
use hydroscen::net::{forward, init_model, Mode, ModelConfig};
use hydroscen::scenario::assignment_solve;
use proptest::prelude::*;

fn forcing_strategy() -> impl Strategy<Value = ForcingSeries> {
    (2usize..=8, 1usize..=3, 1usize..=3).prop_flat_map(|(t_len, rows, cols)| {
        let n = rows * cols;
        (
            prop::collection::vec(0.0..300.0f64, t_len * n),
            prop::collection::vec(-10.0..40.0f64, t_len * n),
            0u8..12,
        )
            .prop_map(move |(precip, temp, m0)| ForcingSeries {
                months: YearMonth::new(2000, m0 + 1).unwrap().sequence(t_len),
                grid_rows: rows,
                grid_cols: cols,
                mask: vec![true; n],
                precip: Mat::from_vec(t_len, n, precip),
                temp: Mat::from_vec(t_len, n, temp),
            })
    })
}

proptest! {
    /// save -> load -> save reproduces the file byte-for-byte.
    #[test]
    fn forcing_serialization_is_byte_stable(series in forcing_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.csv");
        let p2 = dir.path().join("b.csv");
        save_forcing(&series, &p1).unwrap();
        let loaded = load_forcing(&p1).unwrap();
        save_forcing(&loaded, &p2).unwrap();
        prop_assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    /// normalize is invertible given the same stats (max abs error < 1e-10).
    #[test]
    fn normalize_roundtrip(series in forcing_strategy()) {
        let w = Window::new(1999, 2002).unwrap();
        let stats = NormStats::fit(&series, &w).unwrap();
        let back = denormalize(&normalize(&series, &stats).unwrap(), &stats).unwrap();
        for (a, b) in series.precip.as_slice().iter().zip(back.precip.as_slice()) {
            prop_assert!((a - b).abs() < 1e-10);
        }
        for (a, b) in series.temp.as_slice().iter().zip(back.temp.as_slice()) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    /// Nine-significant-digit formatting is idempotent through parse.
    #[test]
    fn fmt_sig9_idempotent(v in -1e12..1e12f64) {
        let s1 = fmt_sig9(v);
        let back: f64 = s1.parse().unwrap();
        prop_assert_eq!(s1, fmt_sig9(back));
    }

    /// Hidden states stay inside the unit box for any parameters and inputs
    /// when the initial state is zero.
    #[test]
    fn hidden_state_unit_box(seed in 0u64..1000, t_len in 1usize..20) {
        let cfg = ModelConfig { n_cells: 2, embedding_dim: 3, hidden_dim: 4, n_plants: 1 };
        let mut params = init_model(cfg, seed).unwrap();
        // scale weights up so gates saturate
        for (_, t) in params.tensors_mut() {
            for v in t.iter_mut() { *v *= 5.0; }
        }
        let months = YearMonth::new(2000, 1).unwrap().sequence(t_len);
        let mut rng = hydroscen::rngutil::substream(seed, &[1]);
        use rand::Rng;
        let precip = Mat::from_vec(t_len, 2, (0..t_len * 2).map(|_| rng.random_range(0.0..5.0)).collect());
        let temp = Mat::from_vec(t_len, 2, (0..t_len * 2).map(|_| rng.random_range(-5.0..5.0)).collect());
        let input = hydroscen::data::InputSeq { months, precip, temp };
        let (dist, hidden) = forward(&params, &input, Mode::Eval).unwrap();
        for v in hidden.h.as_slice() {
            prop_assert!(v.abs() <= 1.0 + 1e-12);
        }
        // sigma stays positive everywhere
        for s in dist.sigma.as_slice() {
            prop_assert!(*s > 0.0);
        }
    }

    /// The assignment solver always returns a bijection.
    #[test]
    fn assignment_is_a_permutation(n in 1usize..8, seed in 0u64..500) {
        let mut rng = hydroscen::rngutil::substream(seed, &[2]);
        use rand::Rng;
        let cost = Mat::from_vec(n, n, (0..n * n).map(|_| rng.random_range(-3.0..3.0)).collect());
        let perm = assignment_solve(&cost).unwrap();
        let mut seen = vec![false; n];
        for &j in &perm {
            prop_assert!(!seen[j]);
            seen[j] = true;
        }
        prop_assert!(seen.into_iter().all(|x| x));
    }
}
