//! Minimal hand-written SVG output: a log-log plot of the three error norms
//! against the mesh size h, with slope-1 and slope-2 guide lines.

use crate::manufactured::ConvergenceRow;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 50.0;

struct LogMap {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl LogMap {
    fn x(&self, h: f64) -> f64 {
        let t = (h.log10() - self.x_min) / (self.x_max - self.x_min);
        MARGIN_L + t * (WIDTH - MARGIN_L - MARGIN_R)
    }

    fn y(&self, e: f64) -> f64 {
        let t = (e.log10() - self.y_min) / (self.y_max - self.y_min);
        HEIGHT - MARGIN_B - t * (HEIGHT - MARGIN_T - MARGIN_B)
    }
}

fn polyline(map: &LogMap, pts: &[(f64, f64)], color: &str, dash: Option<&str>) -> String {
    let coords: Vec<String> = pts
        .iter()
        .map(|&(h, e)| format!("{:.2},{:.2}", map.x(h), map.y(e)))
        .collect();
    let dash = dash.map(|d| format!(" stroke-dasharray=\"{d}\"")).unwrap_or_default();
    format!(
        "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"{dash}/>\n",
        coords.join(" ")
    )
}

fn markers(map: &LogMap, pts: &[(f64, f64)], color: &str) -> String {
    pts.iter()
        .map(|&(h, e)| {
            format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>\n",
                map.x(h),
                map.y(e)
            )
        })
        .collect()
}

/// Renders the convergence table as a standalone SVG document.
pub fn convergence_svg(title: &str, rows: &[ConvergenceRow]) -> String {
    let series: [(&str, &str, Vec<(f64, f64)>); 3] = [
        (
            "L2 velocity",
            "#1f77b4",
            rows.iter().map(|r| (1.0 / r.grid as f64, r.e_l2_u)).collect(),
        ),
        (
            "V velocity",
            "#d62728",
            rows.iter().map(|r| (1.0 / r.grid as f64, r.e_v_u)).collect(),
        ),
        (
            "L2 pressure",
            "#2ca02c",
            rows.iter().map(|r| (1.0 / r.grid as f64, r.e_l2_p)).collect(),
        ),
    ];

    let mut hs: Vec<f64> = Vec::new();
    let mut es: Vec<f64> = Vec::new();
    for (_, _, pts) in &series {
        for &(h, e) in pts {
            if e > 0.0 && e.is_finite() {
                hs.push(h);
                es.push(e);
            }
        }
    }
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">{title}</text>\n",
        MARGIN_L
    ));
    if hs.is_empty() {
        svg.push_str("</svg>\n");
        return svg;
    }

    let fmin = |v: &[f64]| v.iter().cloned().fold(f64::INFINITY, f64::min);
    let fmax = |v: &[f64]| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (h_lo, h_hi) = (fmin(&hs), fmax(&hs));
    let (e_lo, e_hi) = (fmin(&es), fmax(&es));
    let pad = 0.15;
    let map = LogMap {
        x_min: h_lo.log10() - pad,
        x_max: h_hi.log10() + pad,
        y_min: e_lo.log10() - pad,
        // leave headroom for the slope-2 guide
        y_max: e_hi.log10() + pad + 0.8,
    };

    // frame and axis labels
    svg.push_str(&format!(
        "<rect x=\"{MARGIN_L}\" y=\"{MARGIN_T}\" width=\"{:.2}\" height=\"{:.2}\" \
         fill=\"none\" stroke=\"black\"/>\n",
        WIDTH - MARGIN_L - MARGIN_R,
        HEIGHT - MARGIN_T - MARGIN_B
    ));
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"12\" \
         text-anchor=\"middle\">h (log)</text>\n",
        (MARGIN_L + WIDTH - MARGIN_R) / 2.0,
        HEIGHT - 15.0
    ));
    svg.push_str(&format!(
        "<text x=\"18\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"12\" \
         text-anchor=\"middle\" transform=\"rotate(-90 18 {:.2})\">error (log)</text>\n",
        (MARGIN_T + HEIGHT - MARGIN_B) / 2.0,
        (MARGIN_T + HEIGHT - MARGIN_B) / 2.0
    ));
    for &h in &hs {
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"10\" \
             text-anchor=\"middle\">{h:.3}</text>\n",
            map.x(h),
            HEIGHT - MARGIN_B + 15.0
        ));
    }

    // slope guides anchored at the coarsest grid's largest error
    let anchor_e = es
        .iter()
        .zip(&hs)
        .filter(|&(_, &h)| h == h_hi)
        .map(|(&e, _)| e)
        .fold(f64::NEG_INFINITY, f64::max);
    for (slope, dash) in [(1.0, "6,3"), (2.0, "2,3")] {
        let pts: Vec<(f64, f64)> = [h_lo, h_hi]
            .iter()
            .map(|&h| (h, anchor_e * (h / h_hi).powf(slope)))
            .collect();
        svg.push_str(&polyline(&map, &pts, "#888888", Some(dash)));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"10\" \
             fill=\"#888888\">slope {slope}</text>\n",
            map.x(h_lo) + 4.0,
            map.y(pts[0].1) - 4.0
        ));
    }

    let mut legend_y = MARGIN_T + 15.0;
    for (name, color, pts) in &series {
        svg.push_str(&polyline(&map, pts, color, None));
        svg.push_str(&markers(&map, pts, color));
        svg.push_str(&format!(
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"12\" height=\"12\" fill=\"{color}\"/>\n\
             <text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"12\">{name}</text>\n",
            WIDTH - MARGIN_R + 15.0,
            legend_y - 10.0,
            WIDTH - MARGIN_R + 32.0,
            legend_y
        ));
        legend_y += 20.0;
    }
    svg.push_str("</svg>\n");
    svg
}
