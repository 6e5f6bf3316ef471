//! Human-readable renderings of an [`Evaluation`]: a metrics table and a
//! bar chart image.

use std::fmt::Write as _;
use std::path::Path;

use super::evaluate::Evaluation;
use super::particles::SizeReport;
use crate::error::{Error, Result};
use crate::io::write_rgb8;

fn pct(v: f64) -> String {
    format!("{:.1}%", 100.0 * v)
}

/// Metric table with micro and macro columns.
pub fn metrics_table(e: &Evaluation) -> String {
    let a = &e.aggregate;
    let m = &e.macro_average;
    let rows = [
        ("IoU", a.iou, m.iou),
        ("F1-Score", a.f1, m.f1),
        ("Precision", a.precision, m.precision),
        ("Recall", a.recall, m.recall),
        ("Accuracy", a.accuracy, m.accuracy),
    ];
    let rule = "+-----------+---------+---------+\n";
    let mut out = String::new();
    writeln!(
        out,
        "Performance metrics, {} split ({} images, threshold {})",
        e.split,
        e.per_image.len(),
        e.threshold
    )
    .unwrap();
    out.push_str(rule);
    out.push_str("| Metric    | Micro   | Macro   |\n");
    out.push_str(rule);
    for (name, micro, mac) in rows {
        writeln!(out, "| {name:<9} | {:>7} | {:>7} |", pct(micro), pct(mac)).unwrap();
    }
    out.push_str(rule);
    writeln!(out, "tp={} fp={} fn={} tn={}", a.tp, a.fp, a.fn_, a.tn).unwrap();
    out
}

/// One row per image.
pub fn per_image_table(e: &Evaluation) -> String {
    let mut out = String::from("image\tiou\tf1\tprecision\trecall\taccuracy\n");
    for r in &e.per_image {
        let m = &r.metrics;
        writeln!(
            out,
            "{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
            r.image_path, m.iou, m.f1, m.precision, m.recall, m.accuracy
        )
        .unwrap();
    }
    out
}

pub fn size_table(r: &SizeReport) -> String {
    let mut out = String::from("size class\tcount\n");
    for (label, n) in r.labels.iter().zip(&r.counts) {
        writeln!(out, "{label}\t{n}").unwrap();
    }
    writeln!(out, "total\t{}", r.total).unwrap();
    out
}

/// 5×7 glyphs, one byte per row, low five bits used.
fn glyph(c: char) -> [u8; 7] {
    match c {
        '0' => [14, 17, 19, 21, 25, 17, 14],
        '1' => [4, 12, 4, 4, 4, 4, 14],
        '2' => [14, 17, 1, 2, 4, 8, 31],
        '3' => [31, 2, 4, 2, 1, 17, 14],
        '4' => [2, 6, 10, 18, 31, 2, 2],
        '5' => [31, 16, 30, 1, 1, 17, 14],
        '6' => [6, 8, 16, 30, 17, 17, 14],
        '7' => [31, 1, 2, 4, 8, 8, 8],
        '8' => [14, 17, 17, 14, 17, 17, 14],
        '9' => [14, 17, 17, 15, 1, 2, 12],
        '.' => [0, 0, 0, 0, 0, 12, 12],
        '%' => [24, 25, 2, 4, 8, 19, 3],
        'A' => [14, 17, 17, 31, 17, 17, 17],
        'C' => [14, 17, 16, 16, 16, 17, 14],
        'E' => [31, 16, 16, 30, 16, 16, 31],
        'F' => [31, 16, 16, 30, 16, 16, 16],
        'I' => [14, 4, 4, 4, 4, 4, 14],
        'O' => [14, 17, 17, 17, 17, 17, 14],
        'P' => [30, 17, 17, 30, 16, 16, 16],
        'R' => [30, 17, 17, 30, 20, 18, 17],
        'U' => [17, 17, 17, 17, 17, 17, 14],
        _ => [0; 7],
    }
}

struct Canvas {
    w: usize,
    h: usize,
    px: Vec<u8>,
}

impl Canvas {
    fn new(w: usize, h: usize) -> Self {
        Self {
            w,
            h,
            px: vec![255; w * h * 3],
        }
    }

    fn fill(&mut self, x0: usize, y0: usize, x1: usize, y1: usize, rgb: [u8; 3]) {
        for y in y0.min(self.h)..y1.min(self.h) {
            for x in x0.min(self.w)..x1.min(self.w) {
                let i = (y * self.w + x) * 3;
                self.px[i..i + 3].copy_from_slice(&rgb);
            }
        }
    }

    /// Text centered on `cx`, top at `y`, each glyph pixel drawn as a
    /// `scale × scale` square.
    fn text(&mut self, s: &str, cx: usize, y: usize, scale: usize) {
        let width = s.chars().count() * 6 * scale;
        let x0 = cx.saturating_sub(width / 2);
        for (k, c) in s.chars().enumerate() {
            for (row, bits) in glyph(c).iter().enumerate() {
                for col in 0..5 {
                    if bits >> (4 - col) & 1 == 1 {
                        let x = x0 + (k * 6 + col) * scale;
                        let yy = y + row * scale;
                        self.fill(x, yy, x + scale, yy + scale, [0, 0, 0]);
                    }
                }
            }
        }
    }
}

/// Bar chart of the five micro-averaged metrics as interleaved RGB.
pub fn bar_chart(e: &Evaluation) -> (usize, usize, Vec<u8>) {
    let (w, h) = (520, 340);
    let (left, right, top, bottom) = (30, 500, 40, 290);
    let mut c = Canvas::new(w, h);
    let a = &e.aggregate;
    let bars = [
        ("IOU", a.iou, [68, 114, 196]),
        ("F1", a.f1, [237, 125, 49]),
        ("PREC", a.precision, [112, 173, 71]),
        ("REC", a.recall, [255, 192, 0]),
        ("ACC", a.accuracy, [165, 105, 189]),
    ];
    let plot_h = (bottom - top) as f64;
    for q in 0..=4 {
        let y = bottom - (plot_h * q as f64 / 4.0).round() as usize;
        c.fill(left, y, right, y + 1, [210, 210, 210]);
    }
    let slot = (right - left) / bars.len();
    for (i, (label, v, rgb)) in bars.iter().enumerate() {
        let cx = left + slot * i + slot / 2;
        let bar_top = bottom - (plot_h * v.clamp(0.0, 1.0)).round() as usize;
        c.fill(cx - slot / 3, bar_top, cx + slot / 3, bottom, *rgb);
        c.text(&pct(*v), cx, bar_top.saturating_sub(20), 2);
        c.text(label, cx, bottom + 14, 2);
    }
    c.fill(left, top, left + 1, bottom + 1, [0, 0, 0]);
    c.fill(left, bottom, right, bottom + 1, [0, 0, 0]);
    (w, h, c.px)
}

pub fn write_bar_chart(path: impl AsRef<Path>, e: &Evaluation) -> Result<()> {
    let (w, h, px) = bar_chart(e);
    write_rgb8(path, w, h, &px)
}

pub fn write_json<T: serde::Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
