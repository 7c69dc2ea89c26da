//! Deterministic SVG 1.1 emission. Every figure is drawn from numbers read
//! back out of the run's CSV files, never recomputed, and contains no
//! timestamps, so identical CSVs give byte-identical figures.

use rfmc::eval::BoxplotStats;
use rfmc::Real;
use std::fmt::Write;

pub const WIDTH: f64 = 640.0;
pub const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 60.0;
const MARGIN_R: f64 = 130.0;
const MARGIN_T: f64 = 36.0;
const MARGIN_B: f64 = 48.0;

/// Line/marker colors cycled per series.
pub const PALETTE: [&str; 9] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
    "#bcbd22",
];

/// A figure canvas with a fixed plot rectangle and linear axes.
pub struct Figure {
    body: String,
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Figure {
    pub fn new(title: &str, x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Figure {
        let mut f = Figure {
            body: String::new(),
            x_min,
            x_max: if x_max > x_min { x_max } else { x_min + 1.0 },
            y_min,
            y_max: if y_max > y_min { y_max } else { y_min + 1.0 },
        };
        let _ = write!(
            f.body,
            "<rect x=\"{MARGIN_L}\" y=\"{MARGIN_T}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#000\"/>",
            WIDTH - MARGIN_L - MARGIN_R,
            HEIGHT - MARGIN_T - MARGIN_B
        );
        f.text(WIDTH / 2.0, MARGIN_T - 12.0, title, "middle", 14);
        f
    }

    /// Data x to pixel x.
    pub fn px(&self, x: f64) -> f64 {
        MARGIN_L + (x - self.x_min) / (self.x_max - self.x_min) * (WIDTH - MARGIN_L - MARGIN_R)
    }

    /// Data y to pixel y (SVG y grows downward).
    pub fn py(&self, y: f64) -> f64 {
        HEIGHT
            - MARGIN_B
            - (y - self.y_min) / (self.y_max - self.y_min) * (HEIGHT - MARGIN_T - MARGIN_B)
    }

    pub fn text(&mut self, x: f64, y: f64, s: &str, anchor: &str, size: u32) {
        let _ = write!(
            self.body,
            "<text x=\"{x}\" y=\"{y}\" font-family=\"sans-serif\" font-size=\"{size}\" text-anchor=\"{anchor}\">{}</text>",
            escape(s)
        );
    }

    pub fn line(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, stroke: &str, dash: Option<&str>) {
        let dash = match dash {
            Some(d) => format!(" stroke-dasharray=\"{d}\""),
            None => String::new(),
        };
        let _ = write!(
            self.body,
            "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y1}\" stroke=\"{stroke}\"{dash}/>"
        );
    }

    pub fn polyline(&mut self, pts: &[(f64, f64)], stroke: &str) {
        let mut d = String::new();
        for &(x, y) in pts {
            let _ = write!(d, "{},{} ", self.px(x), self.py(y));
        }
        let _ = write!(
            self.body,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{stroke}\" stroke-width=\"1.5\"/>",
            d.trim_end()
        );
    }

    pub fn circle(&mut self, x: f64, y: f64, r: f64, fill: &str) {
        let _ = write!(
            self.body,
            "<circle cx=\"{}\" cy=\"{}\" r=\"{r}\" fill=\"{fill}\"/>",
            self.px(x),
            self.py(y)
        );
    }

    pub fn rect(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, fill: &str, stroke: &str) {
        let (px0, px1) = (self.px(x0), self.px(x1));
        let (py0, py1) = (self.py(y1), self.py(y0)); // flip: y1 is the top
        let _ = write!(
            self.body,
            "<rect x=\"{px0}\" y=\"{py0}\" width=\"{}\" height=\"{}\" fill=\"{fill}\" stroke=\"{stroke}\"/>",
            px1 - px0,
            py1 - py0
        );
    }

    /// Mean marker: a small upright triangle at the data point.
    pub fn triangle(&mut self, x: f64, y: f64, fill: &str) {
        let (cx, cy) = (self.px(x), self.py(y));
        let _ = write!(
            self.body,
            "<polygon points=\"{},{} {},{} {},{}\" fill=\"{fill}\"/>",
            cx,
            cy - 4.0,
            cx - 4.0,
            cy + 3.0,
            cx + 4.0,
            cy + 3.0
        );
    }

    pub fn axis_labels(&mut self, x_label: &str, y_label: &str) {
        self.text(
            (MARGIN_L + WIDTH - MARGIN_R) / 2.0,
            HEIGHT - 12.0,
            x_label,
            "middle",
            12,
        );
        let x = 16.0;
        let y = (MARGIN_T + HEIGHT - MARGIN_B) / 2.0;
        let _ = write!(
            self.body,
            "<text x=\"{x}\" y=\"{y}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 {x} {y})\">{}</text>",
            escape(y_label)
        );
    }

    /// Numeric ticks on both axes at the given data coordinates.
    pub fn ticks(&mut self, xs: &[f64], ys: &[f64]) {
        for &x in xs {
            let px = self.px(x);
            self.line(
                px,
                HEIGHT - MARGIN_B,
                px,
                HEIGHT - MARGIN_B + 4.0,
                "#000",
                None,
            );
            self.text(px, HEIGHT - MARGIN_B + 16.0, &trim_num(x), "middle", 10);
        }
        for &y in ys {
            let py = self.py(y);
            self.line(MARGIN_L - 4.0, py, MARGIN_L, py, "#000", None);
            self.text(MARGIN_L - 7.0, py + 3.5, &trim_num(y), "end", 10);
        }
    }

    /// Legend entry n slots down the right margin.
    pub fn legend(&mut self, slot: usize, label: &str, color: &str) {
        let x = WIDTH - MARGIN_R + 10.0;
        let y = MARGIN_T + 14.0 + 16.0 * slot as f64;
        self.line(x, y - 3.0, x + 18.0, y - 3.0, color, None);
        self.text(x + 24.0, y, label, "start", 11);
    }

    /// A boxplot glyph centered on data x with half-width `hw` (data units).
    pub fn boxplot(&mut self, x: f64, hw: f64, s: &BoxplotStats<Real>, mean: Real, color: &str) {
        self.rect(x - hw, s.q1, x + hw, s.q3, "none", color);
        self.line(
            self.px(x - hw),
            self.py(s.median),
            self.px(x + hw),
            self.py(s.median),
            color,
            None,
        );
        for &(lo, hi) in &[(s.whisker_lo, s.q1), (s.q3, s.whisker_hi)] {
            self.line(
                self.px(x),
                self.py(lo),
                self.px(x),
                self.py(hi),
                color,
                None,
            );
        }
        for &w in &[s.whisker_lo, s.whisker_hi] {
            self.line(
                self.px(x - hw / 2.0),
                self.py(w),
                self.px(x + hw / 2.0),
                self.py(w),
                color,
                None,
            );
        }
        for &o in &s.outliers {
            self.circle(x, o, 2.0, color);
        }
        self.triangle(x, mean, "#2ca02c");
    }

    pub fn finish(self) -> String {
        format!(
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">{}</svg>\n",
            self.body
        )
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Short tick label: up to 4 significant digits, trailing zeros trimmed.
pub fn trim_num(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() || s == "-" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

/// Padded (min, max) range over finite values, with a fallback when empty.
pub fn padded_range(values: impl Iterator<Item = f64>, fallback: (f64, f64)) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo > hi {
        return fallback;
    }
    let pad = ((hi - lo) * 0.08).max(1e-3);
    (lo - pad, hi + pad)
}
