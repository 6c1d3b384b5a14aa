//! Static SVG plots and CSV writers for run outputs. No display server, no
//! plotting dependency: the figures here are value histograms and
//! convergence curves, which are a few hundred SVG elements at most.

use crate::hgan::LossRecord;
use crate::optimizer::BoTrace;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 60.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;

/// Plot series colors, used in order.
const COLORS: [&str; 4] = ["#3264c8", "#c85a32", "#2e8b57", "#8b2e8b"];

fn svg_header(title: &str) -> String {
    format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" ",
            "viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">\n",
            "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n",
            "<text x=\"{cx}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{title}</text>\n"
        ),
        w = WIDTH,
        h = HEIGHT,
        cx = WIDTH / 2.0,
        title = title
    )
}

struct Scale {
    lo: f64,
    hi: f64,
    pixel_lo: f64,
    pixel_hi: f64,
}

impl Scale {
    fn map(&self, v: f64) -> f64 {
        let t = if self.hi > self.lo {
            (v - self.lo) / (self.hi - self.lo)
        } else {
            0.5
        };
        self.pixel_lo + t * (self.pixel_hi - self.pixel_lo)
    }
}

fn axes(x: &Scale, y: &Scale, x_label: &str, y_label: &str) -> String {
    let mut s = String::new();
    let (x0, x1) = (MARGIN_L, WIDTH - MARGIN_R);
    let (y0, y1) = (HEIGHT - MARGIN_B, MARGIN_T);
    s.push_str(&format!(
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n"
    ));
    s.push_str(&format!(
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>\n"
    ));
    for k in 0..=4 {
        let t = k as f64 / 4.0;
        let vx = x.lo + t * (x.hi - x.lo);
        let px = x.map(vx);
        s.push_str(&format!(
            "<line x1=\"{px}\" y1=\"{y0}\" x2=\"{px}\" y2=\"{}\" stroke=\"black\"/>\n",
            y0 + 4.0
        ));
        s.push_str(&format!(
            "<text x=\"{px}\" y=\"{}\" text-anchor=\"middle\">{:.3}</text>\n",
            y0 + 18.0,
            vx
        ));
        let vy = y.lo + t * (y.hi - y.lo);
        let py = y.map(vy);
        s.push_str(&format!(
            "<line x1=\"{}\" y1=\"{py}\" x2=\"{x0}\" y2=\"{py}\" stroke=\"black\"/>\n",
            x0 - 4.0
        ));
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.3}</text>\n",
            x0 - 7.0,
            py + 4.0,
            vy
        ));
    }
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{x_label}</text>\n",
        (x0 + x1) / 2.0,
        HEIGHT - 12.0
    ));
    s.push_str(&format!(
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{y_label}</text>\n",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    ));
    s
}

fn legend(labels: &[&str]) -> String {
    let mut s = String::new();
    for (i, label) in labels.iter().enumerate() {
        let y = MARGIN_T + 16.0 * i as f64;
        s.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"12\" height=\"12\" fill=\"{}\" fill-opacity=\"0.55\"/>\n",
            WIDTH - MARGIN_R - 150.0,
            y,
            COLORS[i % COLORS.len()]
        ));
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\">{label}</text>\n",
            WIDTH - MARGIN_R - 132.0,
            y + 10.0
        ));
    }
    s
}

/// Overlaid histograms of one or more value series with shared binning.
pub fn histogram_svg(series: &[(&str, &[f64])], title: &str, x_label: &str) -> String {
    let all: Vec<f64> = series.iter().flat_map(|(_, v)| v.iter().copied()).collect();
    let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if all.is_empty() || lo == hi {
        (lo - 0.5, lo + 0.5)
    } else {
        let pad = 0.02 * (hi - lo);
        (lo - pad, hi + pad)
    };
    let bins = 24usize;
    let mut counts: Vec<Vec<usize>> = Vec::new();
    let mut max_count = 1usize;
    for (_, values) in series {
        let mut c = vec![0usize; bins];
        for &v in values.iter() {
            let b = (((v - lo) / (hi - lo)) * bins as f64) as usize;
            c[b.min(bins - 1)] += 1;
        }
        max_count = max_count.max(c.iter().copied().max().unwrap_or(0));
        counts.push(c);
    }

    let x = Scale {
        lo,
        hi,
        pixel_lo: MARGIN_L,
        pixel_hi: WIDTH - MARGIN_R,
    };
    let y = Scale {
        lo: 0.0,
        hi: max_count as f64,
        pixel_lo: HEIGHT - MARGIN_B,
        pixel_hi: MARGIN_T,
    };

    let mut svg = svg_header(title);
    svg.push_str(&axes(&x, &y, x_label, "count"));
    let bin_w = (x.pixel_hi - x.pixel_lo) / bins as f64;
    for (si, c) in counts.iter().enumerate() {
        let color = COLORS[si % COLORS.len()];
        for (b, &n) in c.iter().enumerate() {
            if n == 0 {
                continue;
            }
            let px = x.pixel_lo + b as f64 * bin_w;
            let py = y.map(n as f64);
            let h = (HEIGHT - MARGIN_B) - py;
            svg.push_str(&format!(
                "<rect x=\"{px:.2}\" y=\"{py:.2}\" width=\"{bin_w:.2}\" height=\"{h:.2}\" fill=\"{color}\" fill-opacity=\"0.55\"/>\n"
            ));
        }
    }
    svg.push_str(&legend(
        &series.iter().map(|(l, _)| *l).collect::<Vec<_>>(),
    ));
    svg.push_str("</svg>\n");
    svg
}

/// Incumbent-vs-evaluation convergence curves for one or more runs.
pub fn convergence_svg(series: &[(&str, &BoTrace)], title: &str) -> String {
    let mut points: Vec<Vec<(f64, f64)>> = Vec::new();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut max_iter: f64 = 1.0;
    for (_, trace) in series {
        let mut p = Vec::new();
        for r in &trace.records {
            if let Some(v) = r.incumbent_value {
                p.push((r.index as f64, v));
                lo = lo.min(v);
                hi = hi.max(v);
                max_iter = max_iter.max(r.index as f64);
            }
        }
        points.push(p);
    }
    if lo > hi {
        lo = 0.0;
        hi = 1.0;
    }
    if lo == hi {
        lo -= 0.5;
        hi += 0.5;
    }

    let x = Scale {
        lo: 0.0,
        hi: max_iter,
        pixel_lo: MARGIN_L,
        pixel_hi: WIDTH - MARGIN_R,
    };
    let y = Scale {
        lo,
        hi,
        pixel_lo: HEIGHT - MARGIN_B,
        pixel_hi: MARGIN_T,
    };
    let mut svg = svg_header(title);
    svg.push_str(&axes(&x, &y, "evaluation", "best objective"));
    for (si, p) in points.iter().enumerate() {
        if p.is_empty() {
            continue;
        }
        let color = COLORS[si % COLORS.len()];
        let path: Vec<String> = p
            .iter()
            .map(|&(ix, v)| format!("{:.2},{:.2}", x.map(ix), y.map(v)))
            .collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\"/>\n",
            path.join(" ")
        ));
    }
    svg.push_str(&legend(
        &series.iter().map(|(l, _)| *l).collect::<Vec<_>>(),
    ));
    svg.push_str("</svg>\n");
    svg
}

/// Training loss history CSV: `step,loss_d,loss_g`.
pub fn loss_history_csv(history: &[LossRecord]) -> String {
    let mut out = String::from("step,loss_d,loss_g\n");
    for r in history {
        out.push_str(&format!("{},{},{}\n", r.step, r.loss_d, r.loss_g));
    }
    out
}
