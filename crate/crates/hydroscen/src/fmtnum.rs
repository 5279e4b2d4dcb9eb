//! Deterministic float formatting for CSV emission: values are rounded to
//! nine significant digits and printed with the shortest round-trip
//! representation, so save → load → save is byte-stable.

pub fn fmt_sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let exp = v.abs().log10().floor() as i32;
    if exp.abs() > 300 {
        return format!("{v:e}");
    }
    let scale = 10f64.powi(8 - exp);
    let r = (v * scale).round() / scale;
    format!("{r}")
}

#[cfg(test)]
mod tests {
    use super::fmt_sig9;

    #[test]
    fn idempotent_through_parse() {
        for &v in &[
            0.0,
            10.0,
            -3.25,
            1234.56789,
            0.000123456789,
            987654321.123,
            1.0 / 3.0,
            -2.0f64.sqrt(),
        ] {
            let s1 = fmt_sig9(v);
            let back: f64 = s1.parse().unwrap();
            let s2 = fmt_sig9(back);
            assert_eq!(s1, s2, "value {v}");
            if v != 0.0 {
                assert!((back - v).abs() / v.abs() < 1e-8, "value {v} -> {back}");
            }
        }
    }

    #[test]
    fn compact_integers() {
        assert_eq!(fmt_sig9(10.0), "10");
        assert_eq!(fmt_sig9(0.0), "0");
        assert_eq!(fmt_sig9(-0.0), "0");
    }
}
