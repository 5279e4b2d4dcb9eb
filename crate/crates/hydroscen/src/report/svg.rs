//! Minimal deterministic SVG band chart: two shaded quantile bands and the
//! observed series as a line.

use crate::calendar::YearMonth;
use crate::report::BandTable;

const WIDTH: f64 = 900.0;
const HEIGHT: f64 = 360.0;
const MARGIN_L: f64 = 60.0;
const MARGIN_R: f64 = 15.0;
const MARGIN_T: f64 = 28.0;
const MARGIN_B: f64 = 34.0;

fn fmt2(v: f64) -> String {
    format!("{v:.2}")
}

pub fn band_chart_svg(table: &BandTable) -> String {
    let n = table.rows.len();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for r in &table.rows {
        lo = lo.min(r.q[0]);
        hi = hi.max(r.q[3]);
        if let Some(o) = r.observed {
            lo = lo.min(o);
            hi = hi.max(o);
        }
    }
    if !lo.is_finite() || !hi.is_finite() || n == 0 {
        lo = 0.0;
        hi = 1.0;
    }
    if hi - lo < 1e-9 {
        hi = lo + 1.0;
    }
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let x = |i: usize| MARGIN_L + plot_w * (i as f64) / ((n.max(2) - 1) as f64);
    let y = |v: f64| MARGIN_T + plot_h * (1.0 - (v - lo) / (hi - lo));

    let band_path = |qlo: usize, qhi: usize| -> String {
        let mut pts = String::new();
        for (i, r) in table.rows.iter().enumerate() {
            pts.push_str(&format!("{},{} ", fmt2(x(i)), fmt2(y(r.q[qhi]))));
        }
        for (i, r) in table.rows.iter().enumerate().rev() {
            pts.push_str(&format!("{},{} ", fmt2(x(i)), fmt2(y(r.q[qlo]))));
        }
        pts.trim_end().to_string()
    };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"18\" font-family=\"sans-serif\" font-size=\"14\">{} — quantile bands</text>\n",
        MARGIN_L, table.plant
    ));
    svg.push_str(&format!(
        "<polygon points=\"{}\" fill=\"#f4b8b8\" stroke=\"none\"/>\n",
        band_path(0, 3)
    ));
    svg.push_str(&format!(
        "<polygon points=\"{}\" fill=\"#e77474\" stroke=\"none\"/>\n",
        band_path(1, 2)
    ));
    if table.rows.iter().any(|r| r.observed.is_some()) {
        let mut pts = String::new();
        for (i, r) in table.rows.iter().enumerate() {
            if let Some(o) = r.observed {
                pts.push_str(&format!("{},{} ", fmt2(x(i)), fmt2(y(o))));
            }
        }
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"#222222\" stroke-width=\"1.5\" stroke-dasharray=\"5,3\"/>\n",
            pts.trim_end()
        ));
    }
    // axes
    svg.push_str(&format!(
        "<line x1=\"{l}\" y1=\"{t}\" x2=\"{l}\" y2=\"{b}\" stroke=\"#444\"/>\n<line x1=\"{l}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"#444\"/>\n",
        l = MARGIN_L,
        t = MARGIN_T,
        b = HEIGHT - MARGIN_B,
        r = WIDTH - MARGIN_R
    ));
    svg.push_str(&format!(
        "<text x=\"6\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
        MARGIN_T + 4.0,
        fmt2(hi)
    ));
    svg.push_str(&format!(
        "<text x=\"6\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
        HEIGHT - MARGIN_B,
        fmt2(lo)
    ));
    let label = |ym: YearMonth| format!("{ym}");
    if let (Some(first), Some(last)) = (table.rows.first(), table.rows.last()) {
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
            MARGIN_L,
            HEIGHT - 12.0,
            label(first.ym)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{}</text>\n",
            WIDTH - MARGIN_R,
            HEIGHT - 12.0,
            label(last.ym)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}
