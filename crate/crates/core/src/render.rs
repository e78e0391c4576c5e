//! SVG output for space-time diagrams. Time runs upward.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_traits::{One, Zero};

use crate::engine::Trace;
use crate::exactnum::{fmt_decimal, qi, Rational};
use crate::machine::{Machine, Stroke};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Viewport {
    pub x0: Rational,
    pub x1: Rational,
    pub t0: Rational,
    pub t1: Rational,
}

impl Viewport {
    pub fn new(x0: Rational, x1: Rational, t0: Rational, t1: Rational) -> Option<Self> {
        (x0 < x1 && t0 < t1).then_some(Viewport { x0, x1, t0, t1 })
    }

    /// Smallest box holding every segment end and collision, open
    /// segments counted up to the last event time.
    pub fn fit(trace: &Trace) -> Self {
        let mut xs: Vec<&Rational> = Vec::new();
        let mut ts: Vec<&Rational> = vec![&trace.halt.final_time];
        for s in &trace.segments {
            xs.push(&s.x0);
            ts.push(&s.t0);
            if let Some((x, t)) = &s.end {
                xs.push(x);
                ts.push(t);
            }
        }
        let zero = Rational::zero();
        let x0 = xs.iter().copied().min().unwrap_or(&zero).clone();
        let x1 = xs.iter().copied().max().unwrap_or(&zero).clone();
        let t0 = ts.iter().copied().min().unwrap_or(&zero).clone();
        let mut t1 = ts.iter().copied().max().unwrap_or(&zero).clone();
        if t1 <= t0 {
            t1 = &t0 + Rational::one();
        }
        let (x0, x1) = if x1 <= x0 {
            (&x0 - Rational::one(), &x1 + Rational::one())
        } else {
            let pad = (&x1 - &x0) / qi(20);
            (&x0 - &pad, &x1 + &pad)
        };
        Viewport { x0, x1, t0, t1 }
    }
}

#[derive(Debug, Clone)]
pub struct RenderStyle {
    pub colors: BTreeMap<String, String>,
    pub strokes: BTreeMap<String, Stroke>,
    /// `None` fits the trace.
    pub viewport: Option<Viewport>,
    /// Pixels per unit of space and time.
    pub scale: Rational,
    pub markers: bool,
    pub precision: usize,
}

impl Default for RenderStyle {
    fn default() -> Self {
        RenderStyle {
            colors: BTreeMap::new(),
            strokes: BTreeMap::new(),
            viewport: None,
            scale: qi(400),
            markers: false,
            precision: 9,
        }
    }
}

impl RenderStyle {
    /// Style carrying the machine's `[meta]` colours and strokes.
    pub fn from_machine(m: &Machine) -> Self {
        RenderStyle {
            colors: m.colors.clone(),
            strokes: m.styles.clone(),
            ..Default::default()
        }
    }
}

/// Colour used when the style has none for `name`.
pub fn default_color(name: &str) -> &'static str {
    let n = name.to_ascii_lowercase();
    if n.contains("border") {
        "#000000"
    } else if n.contains("tree") || n.starts_with("delay") || n.starts_with("split") {
        "#1f4fd8"
    } else if n.contains("bounce") {
        "#2e8b57"
    } else {
        "#8e44ad"
    }
}

fn dash(stroke: Stroke) -> Option<&'static str> {
    match stroke {
        Stroke::Solid => None,
        Stroke::Dashed => Some("6 3"),
        Stroke::Dotted => Some("1 2"),
    }
}

/// `(x, t)`.
pub type Point = (Rational, Rational);

/// Clip the segment `p + λ(q − p)`, λ ∈ [0,1], to the box. Exact.
fn clip(
    p: (&Rational, &Rational),
    q: (&Rational, &Rational),
    vp: &Viewport,
) -> Option<(Point, Point)> {
    let dx = q.0 - p.0;
    let dt = q.1 - p.1;
    let mut lo = Rational::zero();
    let mut hi = Rational::one();
    let checks = [
        (-&dx, p.0 - &vp.x0),
        (dx.clone(), &vp.x1 - p.0),
        (-&dt, p.1 - &vp.t0),
        (dt.clone(), &vp.t1 - p.1),
    ];
    for (a, b) in checks {
        if a.is_zero() {
            if b < Rational::zero() {
                return None;
            }
            continue;
        }
        let r = &b / &a;
        if a < Rational::zero() {
            if r > lo {
                lo = r;
            }
        } else if r < hi {
            hi = r;
        }
        if lo > hi {
            return None;
        }
    }
    let at = |l: &Rational| (p.0 + &dx * l, p.1 + &dt * l);
    Some((at(&lo), at(&hi)))
}

/// Visible part of every segment, in trace order. Open segments run to the
/// viewport top.
pub fn visible_segments(trace: &Trace, vp: &Viewport) -> Vec<(usize, Point, Point)> {
    let mut out = Vec::new();
    for (i, s) in trace.segments.iter().enumerate() {
        let end = match &s.end {
            Some((x, t)) => (x.clone(), t.clone()),
            None => {
                let t = if vp.t1 > s.t0 { vp.t1.clone() } else { s.t0.clone() };
                (trace.position(i, &t), t)
            }
        };
        if let Some((a, b)) = clip((&s.x0, &s.t0), (&end.0, &end.1), vp) {
            out.push((i, a, b));
        }
    }
    out
}

/// Render `trace` as an SVG 1.1 document.
pub fn render_svg(trace: &Trace, style: &RenderStyle) -> String {
    let vp = style.viewport.clone().unwrap_or_else(|| Viewport::fit(trace));
    let k = &style.scale;
    let num = |r: &Rational| fmt_decimal(r, style.precision);
    let px = |x: &Rational| num(&((x - &vp.x0) * k));
    let py = |t: &Rational| num(&((&vp.t1 - t) * k));
    let width = num(&((&vp.x1 - &vp.x0) * k));
    let height = num(&((&vp.t1 - &vp.t0) * k));

    let mut s = String::new();
    s.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">"
    );

    s.push_str("<g id=\"axes\" stroke=\"#999999\" stroke-width=\"0.5\" fill=\"none\">\n");
    let zero = Rational::zero();
    if vp.t0 <= zero && zero <= vp.t1 {
        let _ = writeln!(
            s,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\"/>",
            px(&vp.x0),
            py(&zero),
            px(&vp.x1),
            py(&zero)
        );
    }
    if vp.x0 <= zero && zero <= vp.x1 {
        let _ = writeln!(
            s,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\"/>",
            px(&zero),
            py(&vp.t0),
            px(&zero),
            py(&vp.t1)
        );
    }
    s.push_str("</g>\n");

    s.push_str("<g id=\"segments\" fill=\"none\" stroke-width=\"1\">\n");
    for (i, a, b) in visible_segments(trace, &vp) {
        let name = trace.name(i);
        let color = style
            .colors
            .get(name)
            .map(String::as_str)
            .unwrap_or_else(|| default_color(name));
        let _ = write!(
            s,
            "<polyline data-signal=\"{name}\" points=\"{},{} {},{}\" stroke=\"{color}\"",
            px(&a.0),
            py(&a.1),
            px(&b.0),
            py(&b.1)
        );
        if let Some(d) = style.strokes.get(name).copied().and_then(dash) {
            let _ = write!(s, " stroke-dasharray=\"{d}\"");
        }
        s.push_str("/>\n");
    }
    s.push_str("</g>\n");

    if style.markers {
        s.push_str("<g id=\"collisions\" fill=\"none\" stroke=\"#cc0000\" stroke-width=\"0.5\">\n");
        let inside = |x: &Rational, t: &Rational| vp.x0 <= *x && *x <= vp.x1 && vp.t0 <= *t && *t <= vp.t1;
        for c in trace.collisions.iter().filter(|c| inside(&c.x, &c.t)) {
            let _ = writeln!(s, "<circle cx=\"{}\" cy=\"{}\" r=\"1.5\"/>", px(&c.x), py(&c.t));
        }
        for f in trace.frozen.iter().filter(|f| inside(&f.x, &f.t)) {
            let _ = writeln!(s, "<circle cx=\"{}\" cy=\"{}\" r=\"2.5\"/>", px(&f.x), py(&f.t));
        }
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    s
}
