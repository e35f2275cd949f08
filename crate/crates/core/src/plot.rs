//! Self-contained SVG charts.
//!
//! Every drawn series also carries its raw values in `data-x` / `data-y`
//! attributes, written with shortest round-trip formatting, so a chart can be
//! checked against the JSON report it was rendered from.

use std::fmt::Write as _;

use crate::baselines::{DetCurve, DetMode, RtmrCurve};
use crate::density::DensityPair;
use crate::linkability::LinkabilityProfile;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 70.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 60.0;

const MATED_COLOR: &str = "#2b6cb0";
const NON_MATED_COLOR: &str = "#c05621";
const LINK_COLOR: &str = "#2f855a";
const SWEEP_COLORS: [&str; 6] = [
    "#2f855a", "#6b46c1", "#b7791f", "#c53030", "#2c7a7b", "#4a5568",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn join(values: &[f64]) -> String {
    let mut out = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{v}");
    }
    out
}

/// Parses a `data-*` value list back into numbers.
pub fn parse_data_list(s: &str) -> Option<Vec<f64>> {
    s.split_whitespace().map(|t| t.parse().ok()).collect()
}

/// Linear map from a data interval to a pixel interval.
#[derive(Clone, Copy)]
struct Axis {
    lo: f64,
    hi: f64,
    px0: f64,
    px1: f64,
}

impl Axis {
    fn new(lo: f64, hi: f64, px0: f64, px1: f64) -> Self {
        let (lo, hi) = if hi > lo {
            (lo, hi)
        } else {
            (lo - 0.5, lo + 0.5)
        };
        Self { lo, hi, px0, px1 }
    }

    fn map(&self, v: f64) -> f64 {
        self.px0 + (v - self.lo) / (self.hi - self.lo) * (self.px1 - self.px0)
    }

    fn ticks(&self) -> Vec<f64> {
        (0..=4)
            .map(|k| self.lo + (self.hi - self.lo) * k as f64 / 4.0)
            .collect()
    }
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 || (v.abs() >= 0.01 && v.abs() < 1e4) {
        format!("{:.3}", v)
            .trim_end_matches('0')
            .trim_end_matches('.')
            .to_string()
    } else {
        format!("{v:.1e}")
    }
}

struct Canvas {
    out: String,
}

impl Canvas {
    fn new(title: &str, extra: &str) -> Self {
        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(
            out,
            r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
        );
        let _ = writeln!(
            out,
            r#"<text class="title" x="{}" y="28" text-anchor="middle" font-size="15"{extra}>{}</text>"#,
            WIDTH / 2.0,
            escape(title)
        );
        let _ = writeln!(
            out,
            r#"<rect x="{LEFT}" y="{TOP}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            WIDTH - LEFT - RIGHT,
            HEIGHT - TOP - BOTTOM
        );
        Self { out }
    }

    fn x_axis(&mut self, ax: &Axis, label: &str) {
        let y = HEIGHT - BOTTOM;
        for t in ax.ticks() {
            let x = ax.map(t);
            let _ = writeln!(
                self.out,
                r#"<line x1="{x:.2}" y1="{y}" x2="{x:.2}" y2="{}" stroke="black"/><text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#,
                y + 5.0,
                y + 18.0,
                fmt_tick(t)
            );
        }
        let _ = writeln!(
            self.out,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            (LEFT + WIDTH - RIGHT) / 2.0,
            HEIGHT - 18.0,
            escape(label)
        );
    }

    fn y_axis(&mut self, ax: &Axis, label: &str, right: bool) {
        let (x, dir, anchor) = if right {
            (WIDTH - RIGHT, 1.0, "start")
        } else {
            (LEFT, -1.0, "end")
        };
        for t in ax.ticks() {
            let y = ax.map(t);
            let _ = writeln!(
                self.out,
                r#"<line x1="{x}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="{anchor}">{}</text>"#,
                x + 5.0 * dir,
                x + 8.0 * dir,
                y + 4.0,
                fmt_tick(t)
            );
        }
        let lx = if right { WIDTH - 12.0 } else { 16.0 };
        let ly = (TOP + HEIGHT - BOTTOM) / 2.0;
        let _ = writeln!(
            self.out,
            r#"<text x="{lx}" y="{ly}" text-anchor="middle" transform="rotate(-90 {lx} {ly})">{}</text>"#,
            escape(label)
        );
    }

    /// A polyline through `(x, y)` with the raw values attached.
    fn series(
        &mut self,
        name: &str,
        color: &str,
        xs: &[f64],
        ys: &[f64],
        px: &[(f64, f64)],
        dash: bool,
    ) {
        let mut pts = String::new();
        for (x, y) in px {
            let _ = write!(pts, "{x:.2},{y:.2} ");
        }
        let _ = writeln!(
            self.out,
            r#"<polyline class="series" data-series="{}" data-x="{}" data-y="{}" points="{}" fill="none" stroke="{color}" stroke-width="1.8"{}/>"#,
            escape(name),
            join(xs),
            join(ys),
            pts.trim_end(),
            if dash {
                r#" stroke-dasharray="6 3""#
            } else {
                ""
            }
        );
    }

    /// Step plot of per-bin values over `edges`.
    fn step_series(
        &mut self,
        name: &str,
        color: &str,
        edges: &[f64],
        values: &[f64],
        (xa, ya): (&Axis, &Axis),
        dash: bool,
    ) {
        let mut px = Vec::with_capacity(2 * values.len());
        for (b, &v) in values.iter().enumerate() {
            px.push((xa.map(edges[b]), ya.map(v)));
            px.push((xa.map(edges[b + 1]), ya.map(v)));
        }
        self.series(name, color, edges, values, &px, dash);
    }

    fn legend(&mut self, entries: &[(&str, &str)]) {
        for (i, (name, color)) in entries.iter().enumerate() {
            let y = TOP + 16.0 + 16.0 * i as f64;
            let x = LEFT + 12.0;
            let _ = writeln!(
                self.out,
                r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
                x + 20.0,
                x + 26.0,
                y + 4.0,
                escape(name)
            );
        }
    }

    fn finish(mut self) -> String {
        self.out.push_str("</svg>\n");
        self.out
    }
}

/// Mated and non-mated densities, `D(s)` on a secondary axis, the
/// `LR * omega = 1` boundaries and `D_sys` in the title.
pub fn linkability_svg(
    name: &str,
    densities: &DensityPair,
    profile: &LinkabilityProfile,
) -> String {
    let edges = densities.edges();
    let xa = Axis::new(edges[0], edges[edges.len() - 1], LEFT, WIDTH - RIGHT);
    let ymax = densities
        .p_mated()
        .iter()
        .chain(densities.p_non_mated())
        .fold(0.0f64, |a, &b| a.max(b));
    let ya = Axis::new(
        0.0,
        if ymax > 0.0 { ymax * 1.05 } else { 1.0 },
        HEIGHT - BOTTOM,
        TOP,
    );
    let da = Axis::new(0.0, 1.0, HEIGHT - BOTTOM, TOP);

    let title = format!(
        "{name}: D_sys = {:.4} (omega = {})",
        profile.d_sys, profile.omega
    );
    let extra = format!(
        r#" data-d-sys="{}" data-omega="{}""#,
        profile.d_sys, profile.omega
    );
    let mut c = Canvas::new(&title, &extra);
    c.x_axis(&xa, "linkage score s");
    c.y_axis(&ya, "probability density", false);
    c.y_axis(&da, "local linkability D(s)", true);
    c.step_series(
        "p_mated",
        MATED_COLOR,
        edges,
        densities.p_mated(),
        (&xa, &ya),
        false,
    );
    c.step_series(
        "p_non_mated",
        NON_MATED_COLOR,
        edges,
        densities.p_non_mated(),
        (&xa, &ya),
        false,
    );
    c.step_series(
        "d_local",
        LINK_COLOR,
        &profile.edges,
        &profile.d_local,
        (&xa, &da),
        true,
    );
    for &b in &profile.boundary_scores {
        let x = xa.map(b);
        let _ = writeln!(
            c.out,
            r##"<line class="boundary" data-x="{b}" x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{}" stroke="#718096" stroke-dasharray="2 3"/>"##,
            HEIGHT - BOTTOM
        );
    }
    c.legend(&[
        ("mated", MATED_COLOR),
        ("non-mated", NON_MATED_COLOR),
        ("D(s)", LINK_COLOR),
    ]);
    c.finish()
}

/// `D(s)` for several prior ratios on one grid.
pub fn omega_sweep_svg(name: &str, profiles: &[LinkabilityProfile]) -> String {
    let Some(first) = profiles.first() else {
        return Canvas::new(name, "").finish();
    };
    let edges = &first.edges;
    let xa = Axis::new(edges[0], edges[edges.len() - 1], LEFT, WIDTH - RIGHT);
    let da = Axis::new(0.0, 1.0, HEIGHT - BOTTOM, TOP);
    let mut c = Canvas::new(name, "");
    c.x_axis(&xa, "linkage score s");
    c.y_axis(&da, "local linkability D(s)", false);
    let labels: Vec<String> = profiles
        .iter()
        .map(|p| format!("omega = {}, D_sys = {:.4}", p.omega, p.d_sys))
        .collect();
    for (i, p) in profiles.iter().enumerate() {
        let color = SWEEP_COLORS[i % SWEEP_COLORS.len()];
        c.step_series(
            &format!("d_local omega={}", p.omega),
            color,
            &p.edges,
            &p.d_local,
            (&xa, &da),
            false,
        );
    }
    let legend: Vec<(&str, &str)> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), SWEEP_COLORS[i % SWEEP_COLORS.len()]))
        .collect();
    c.legend(&legend);
    c.finish()
}

fn rate_axes() -> (Axis, Axis) {
    (
        Axis::new(0.0, 1.0, LEFT, WIDTH - RIGHT),
        Axis::new(0.0, 1.0, HEIGHT - BOTTOM, TOP),
    )
}

/// DET curves (false match rate against false non-match rate), raw rates.
pub fn det_svg(title: &str, curves: &[&DetCurve]) -> String {
    let (xa, ya) = rate_axes();
    let mut c = Canvas::new(title, "");
    c.x_axis(&xa, "FMR / CMR");
    c.y_axis(&ya, "FNMR / FCMR", false);
    let mut labels = Vec::new();
    for (i, d) in curves.iter().enumerate() {
        let color = [MATED_COLOR, LINK_COLOR][i % 2];
        let name = match d.mode {
            DetMode::Accuracy => "accuracy",
            DetMode::CrossKey => "cross-key",
        };
        let px: Vec<(f64, f64)> = d
            .fmr
            .iter()
            .zip(&d.fnmr)
            .map(|(&x, &y)| (xa.map(x), ya.map(y)))
            .collect();
        c.series(name, color, &d.fmr, &d.fnmr, &px, false);
        labels.push((format!("{name} (EER = {:.4})", d.eer), color));
    }
    let legend: Vec<(&str, &str)> = labels.iter().map(|(l, c)| (l.as_str(), *c)).collect();
    c.legend(&legend);
    c.finish()
}

/// FNMR against RTMR.
pub fn rtmr_svg(title: &str, curve: &RtmrCurve) -> String {
    let (xa, ya) = rate_axes();
    let mut c = Canvas::new(title, "");
    c.x_axis(&xa, "RTMR");
    c.y_axis(&ya, "FNMR", false);
    let px: Vec<(f64, f64)> = curve
        .rtmr
        .iter()
        .zip(&curve.fnmr)
        .map(|(&x, &y)| (xa.map(x), ya.map(y)))
        .collect();
    c.series("rtmr", LINK_COLOR, &curve.rtmr, &curve.fnmr, &px, false);
    let label = format!("crossing = {:.4}", curve.crossing);
    c.legend(&[(label.as_str(), LINK_COLOR)]);
    c.finish()
}
