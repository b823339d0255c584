//! Standalone SVG figures for 2-D systems.

use std::collections::BTreeMap;
use std::fmt::Write;

use pwa_mpc::control::OpenLoopRow;
use pwa_mpc::geometry::order_ccw;
use pwa_mpc::policy::{Label, SequencePolicy};
use pwa_mpc::pwa::PwaSystem;
use pwa_mpc::Result;

const SIZE: f64 = 600.0;
const MARGIN: f64 = 40.0;
const INFEASIBLE: &str = "#404040";

const PALETTE: [&str; 12] = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7",
    "#9c755f", "#bcbd22", "#17becf", "#d37295",
];

/// Maps state coordinates to pixels, `x₂` pointing up.
struct Frame {
    lo: [f64; 2],
    scale: f64,
    height: f64,
}

impl Frame {
    fn new(sys: &PwaSystem) -> Result<Self> {
        let (lo, hi) = sys
            .state_set()
            .bounding_box()?
            .ok_or_else(|| pwa_mpc::Error::Invalid("empty state set".into()))?;
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(f64::MIN_POSITIVE);
        let scale = SIZE / span;
        Ok(Self {
            lo: [lo[0], lo[1]],
            scale,
            height: (hi[1] - lo[1]) * scale,
        })
    }

    fn px(&self, x: f64, y: f64) -> (f64, f64) {
        (
            MARGIN + (x - self.lo[0]) * self.scale,
            MARGIN + self.height - (y - self.lo[1]) * self.scale,
        )
    }

    fn polygon(&self, pts: &[nalgebra::DVector<f64>]) -> String {
        let mut s = String::new();
        for p in order_ccw(pts) {
            let (x, y) = self.px(p[0], p[1]);
            let _ = write!(s, "{x:.2},{y:.2} ");
        }
        s.trim_end().to_string()
    }
}

fn header(width: f64, height: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
         viewBox=\"0 0 {width:.0} {height:.0}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

fn label_text(label: &Label) -> String {
    label.as_ref().map_or("-1".into(), |s| s.to_string())
}

/// Cells of the learned partition colored by sequence; `-1` cells dark gray.
pub fn partition(pol: &SequencePolicy, sys: &PwaSystem) -> Result<String> {
    let frame = Frame::new(sys)?;
    let cells = pol.cells(sys)?;
    let mut colors: BTreeMap<String, &str> = BTreeMap::new();
    for c in cells
        .iter()
        .filter(|c| c.full_dimensional && c.label.is_some())
    {
        let n = colors.len();
        colors
            .entry(label_text(&c.label))
            .or_insert(PALETTE[n % PALETTE.len()]);
    }
    let legend_rows = colors.len() + 1;
    let width = SIZE + 2.0 * MARGIN + 260.0;
    let height = (frame.height + 2.0 * MARGIN).max(MARGIN + 18.0 * legend_rows as f64 + 20.0);
    let mut s = header(width, height);
    for c in cells.iter().filter(|c| c.full_dimensional) {
        let verts = c.polytope.vertices()?;
        let fill = match &c.label {
            Some(_) => colors[&label_text(&c.label)],
            None => INFEASIBLE,
        };
        let _ = writeln!(
            s,
            "<polygon points=\"{}\" fill=\"{fill}\" stroke=\"black\" stroke-width=\"0.5\"/>",
            frame.polygon(verts)
        );
    }
    let _ = writeln!(
        s,
        "<polygon points=\"{}\" fill=\"none\" stroke=\"black\" stroke-width=\"1.5\"/>",
        frame.polygon(sys.state_set().vertices()?)
    );
    let lx = SIZE + 2.0 * MARGIN;
    let mut ly = MARGIN;
    for (text, fill) in colors
        .iter()
        .map(|(t, f)| (t.as_str(), *f))
        .chain([("-1", INFEASIBLE)])
    {
        let _ = writeln!(
            s,
            "<rect x=\"{lx:.0}\" y=\"{:.0}\" width=\"12\" height=\"12\" fill=\"{fill}\"/>\
             <text x=\"{:.0}\" y=\"{:.0}\">{text}</text>",
            ly - 10.0,
            lx + 18.0,
            ly
        );
        ly += 18.0;
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Piecewise-linear ramp from dark blue through green to yellow.
fn ramp(t: f64) -> String {
    let stops = [
        (68.0, 1.0, 84.0),
        (59.0, 82.0, 139.0),
        (33.0, 145.0, 140.0),
        (94.0, 201.0, 98.0),
        (253.0, 231.0, 37.0),
    ];
    let t = t.clamp(0.0, 1.0) * (stops.len() - 1) as f64;
    let k = (t.floor() as usize).min(stops.len() - 2);
    let f = t - k as f64;
    let (a, b) = (stops[k], stops[k + 1]);
    let mix = |p: f64, q: f64| (p + (q - p) * f).round() as u8;
    format!(
        "#{:02x}{:02x}{:02x}",
        mix(a.0, b.0),
        mix(a.1, b.1),
        mix(a.2, b.2)
    )
}

/// Open-loop suboptimality on a grid; states without a finite ΔJ dark gray.
pub fn heat_map(rows: &[OpenLoopRow], sys: &PwaSystem, step: f64) -> Result<String> {
    let frame = Frame::new(sys)?;
    let max = rows
        .iter()
        .filter_map(|r| r.delta)
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let width = SIZE + 2.0 * MARGIN + 120.0;
    let mut s = header(width, frame.height + 2.0 * MARGIN);
    let side = step * frame.scale;
    for r in rows {
        let (cx, cy) = frame.px(r.x[0], r.x[1]);
        let fill = r
            .delta
            .map_or(INFEASIBLE.to_string(), |d| ramp(d.max(0.0) / max));
        let _ = writeln!(
            s,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{side:.2}\" height=\"{side:.2}\" fill=\"{fill}\"/>",
            cx - side / 2.0,
            cy - side / 2.0
        );
    }
    let _ = writeln!(
        s,
        "<polygon points=\"{}\" fill=\"none\" stroke=\"black\" stroke-width=\"1.5\"/>",
        frame.polygon(sys.state_set().vertices()?)
    );
    let bx = SIZE + 2.0 * MARGIN;
    for k in 0..100 {
        let _ = writeln!(
            s,
            "<rect x=\"{bx:.0}\" y=\"{:.1}\" width=\"20\" height=\"2.1\" fill=\"{}\"/>",
            MARGIN + 200.0 - 2.0 * k as f64,
            ramp(k as f64 / 99.0)
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"{:.0}\" y=\"{:.0}\">{max:.3}%</text><text x=\"{:.0}\" y=\"{:.0}\">0%</text>",
        bx + 26.0,
        MARGIN + 10.0,
        bx + 26.0,
        MARGIN + 202.0
    );
    s.push_str("</svg>\n");
    Ok(s)
}
