//! Minimal SVG scatter/line rendering for agreement, ROC, and trajectory
//! plots.
//!
//! The CSV outputs are the canonical data; these files exist so a run can be
//! eyeballed without further tooling. Rendering is fully deterministic — no
//! timestamps, no generator metadata — so two identical runs produce
//! byte-identical SVG.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 64.0;
const MARGIN_RIGHT: f64 = 16.0;
const MARGIN_TOP: f64 = 36.0;
const MARGIN_BOTTOM: f64 = 44.0;

/// Fixed series palette, cycled in order.
const PALETTE: [&str; 6] = [
    "#1f6fb2", "#c24d3a", "#3a8f5d", "#8258a8", "#b08a2e", "#4f6d7a",
];

enum Mark {
    Scatter,
    Line,
}

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
    mark: Mark,
}

/// A single-panel plot. Build it up with [`scatter`](Plot::scatter),
/// [`line`](Plot::line), and [`hline`](Plot::hline), then render or save.
pub struct Plot {
    title: String,
    x_label: String,
    y_label: String,
    series: Vec<Series>,
    hlines: Vec<(f64, String)>,
}

fn fmt(v: f64) -> String {
    // Two decimals is plenty for pixel coordinates and keeps files small.
    format!("{v:.2}")
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if (0.01..10_000.0).contains(&a) {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.2e}")
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Plot {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Plot {
            title: title.to_string(),
            x_label: x_label.to_string(),
            y_label: y_label.to_string(),
            series: Vec::new(),
            hlines: Vec::new(),
        }
    }

    /// Add a scatter series.
    pub fn scatter(&mut self, label: &str, points: Vec<(f64, f64)>) -> &mut Self {
        self.series.push(Series {
            label: label.to_string(),
            points,
            mark: Mark::Scatter,
        });
        self
    }

    /// Add a connected line series; points are drawn in the order given.
    pub fn line(&mut self, label: &str, points: Vec<(f64, f64)>) -> &mut Self {
        self.series.push(Series {
            label: label.to_string(),
            points,
            mark: Mark::Line,
        });
        self
    }

    /// Add a dashed horizontal reference line across the panel.
    pub fn hline(&mut self, y: f64, label: &str) -> &mut Self {
        self.hlines.push((y, label.to_string()));
        self
    }

    fn data_range(&self) -> Result<((f64, f64), (f64, f64))> {
        let mut xs: Vec<f64> = Vec::new();
        let mut ys: Vec<f64> = Vec::new();
        for s in &self.series {
            for &(x, y) in &s.points {
                xs.push(x);
                ys.push(y);
            }
        }
        for &(y, _) in &self.hlines {
            ys.push(y);
        }
        if xs.is_empty() {
            return Err(Error::invalid("plot has no data points"));
        }
        if xs.iter().chain(ys.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("plot data must be finite"));
        }
        let span = |vals: &[f64]| {
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 * lo.abs().max(1.0) };
            (lo - pad, hi + pad)
        };
        Ok((span(&xs), span(&ys)))
    }

    /// Render the plot to an SVG string.
    pub fn render(&self) -> Result<String> {
        let ((x0, x1), (y0, y1)) = self.data_range()?;
        let px = |x: f64| MARGIN_LEFT + (x - x0) / (x1 - x0) * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT);
        let py =
            |y: f64| HEIGHT - MARGIN_BOTTOM - (y - y0) / (y1 - y0) * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM);

        let mut out = String::new();
        out.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
             viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">\n"
        ));
        out.push_str(&format!(
            "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
        ));
        // panel frame
        out.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#444\"/>\n",
            fmt(MARGIN_LEFT),
            fmt(MARGIN_TOP),
            fmt(WIDTH - MARGIN_LEFT - MARGIN_RIGHT),
            fmt(HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
        ));
        // title and axis labels
        out.push_str(&format!(
            "<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
            fmt(WIDTH / 2.0),
            escape(&self.title)
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            fmt((MARGIN_LEFT + WIDTH - MARGIN_RIGHT) / 2.0),
            fmt(HEIGHT - 10.0),
            escape(&self.x_label)
        ));
        out.push_str(&format!(
            "<text x=\"14\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {})\">{}</text>\n",
            fmt((MARGIN_TOP + HEIGHT - MARGIN_BOTTOM) / 2.0),
            fmt((MARGIN_TOP + HEIGHT - MARGIN_BOTTOM) / 2.0),
            escape(&self.y_label)
        ));
        // corner tick labels: enough to read values off the plot
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            fmt(MARGIN_LEFT),
            fmt(HEIGHT - MARGIN_BOTTOM + 16.0),
            fmt_tick(x0)
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            fmt(WIDTH - MARGIN_RIGHT),
            fmt(HEIGHT - MARGIN_BOTTOM + 16.0),
            fmt_tick(x1)
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n",
            fmt(MARGIN_LEFT - 6.0),
            fmt(HEIGHT - MARGIN_BOTTOM + 4.0),
            fmt_tick(y0)
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n",
            fmt(MARGIN_LEFT - 6.0),
            fmt(MARGIN_TOP + 4.0),
            fmt_tick(y1)
        ));

        for (y, label) in &self.hlines {
            out.push_str(&format!(
                "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#888\" stroke-dasharray=\"5 3\"/>\n",
                fmt(MARGIN_LEFT),
                fmt(py(*y)),
                fmt(WIDTH - MARGIN_RIGHT),
                fmt(py(*y))
            ));
            if !label.is_empty() {
                out.push_str(&format!(
                    "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" fill=\"#666\" font-size=\"10\">{}</text>\n",
                    fmt(WIDTH - MARGIN_RIGHT - 4.0),
                    fmt(py(*y) - 3.0),
                    escape(label)
                ));
            }
        }

        for (si, s) in self.series.iter().enumerate() {
            let color = PALETTE[si % PALETTE.len()];
            match s.mark {
                Mark::Line => {
                    let pts: Vec<String> = s
                        .points
                        .iter()
                        .map(|&(x, y)| format!("{},{}", fmt(px(x)), fmt(py(y))))
                        .collect();
                    out.push_str(&format!(
                        "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
                        pts.join(" ")
                    ));
                }
                Mark::Scatter => {
                    for &(x, y) in &s.points {
                        out.push_str(&format!(
                            "<circle cx=\"{}\" cy=\"{}\" r=\"2.5\" fill=\"{color}\" fill-opacity=\"0.7\"/>\n",
                            fmt(px(x)),
                            fmt(py(y))
                        ));
                    }
                }
            }
            if !s.label.is_empty() {
                let ly = MARGIN_TOP + 16.0 + 14.0 * si as f64;
                out.push_str(&format!(
                    "<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{color}\"/>\n",
                    fmt(MARGIN_LEFT + 8.0),
                    fmt(ly - 9.0)
                ));
                out.push_str(&format!(
                    "<text x=\"{}\" y=\"{}\" font-size=\"11\">{}</text>\n",
                    fmt(MARGIN_LEFT + 22.0),
                    fmt(ly),
                    escape(&s.label)
                ));
            }
        }
        out.push_str("</svg>\n");
        Ok(out)
    }

    /// Render and write to `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render()?)?;
        Ok(())
    }
}
