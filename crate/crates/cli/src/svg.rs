//! Deterministic SVG plots of 2-D projections.
//!
//! All coordinates are printed with a fixed number of decimals and every
//! collection is walked in a fixed order, so the same input gives the same
//! bytes.

use std::fmt::Write;

use lipbnb::bnb::PartitionLeaf;
use lipbnb::reach::{DirectionPolytope, ReachabilityResult, RotatedRectangle};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 48.0;
/// Extra room on the left for the y tick labels.
const LEFT: f64 = 72.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum RegionKind {
    ReachSet,
    Polytope,
    Partition,
    Pruned,
}

impl RegionKind {
    fn class(self) -> &'static str {
        match self {
            RegionKind::ReachSet => "set",
            RegionKind::Polytope => "poly",
            RegionKind::Partition => "part",
            RegionKind::Pruned => "pruned",
        }
    }

    fn legend(self) -> &'static str {
        match self {
            RegionKind::ReachSet => "reachable set",
            RegionKind::Polytope => "output polytope",
            RegionKind::Partition => "active partition",
            RegionKind::Pruned => "pruned partition",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    pub kind: RegionKind,
    pub polygon: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Scene {
    pub title: String,
    pub axes: (usize, usize),
    pub regions: Vec<Region>,
    pub points: Vec<[f64; 2]>,
}

/// Convex hull, counter-clockwise, starting from the lowest-x point.
pub fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> = if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Hull of the projected vertices of a rotated rectangle.
pub fn project_set(set: &RotatedRectangle, axes: (usize, usize)) -> Vec<[f64; 2]> {
    let pts: Vec<[f64; 2]> = set.vertices().iter().map(|v| [v[axes.0], v[axes.1]]).collect();
    convex_hull(&pts)
}

/// Vertices of `{y : d_k^T y <= h_k}` in the plane, from pairwise line
/// intersections that satisfy every constraint.
pub fn halfplane_polygon(directions: &[Vec<f64>], offsets: &[f64]) -> Vec<[f64; 2]> {
    let mut pts = Vec::new();
    let scale = offsets.iter().fold(1.0f64, |m, h| m.max(h.abs()));
    for i in 0..directions.len() {
        for j in i + 1..directions.len() {
            let (a, b) = (&directions[i], &directions[j]);
            let det = a[0] * b[1] - a[1] * b[0];
            if det.abs() < 1e-12 {
                continue;
            }
            let x = (offsets[i] * b[1] - offsets[j] * a[1]) / det;
            let y = (a[0] * offsets[j] - b[0] * offsets[i]) / det;
            let inside = directions
                .iter()
                .zip(offsets)
                .all(|(d, h)| d[0] * x + d[1] * y <= h + 1e-9 * scale);
            if inside {
                pts.push([x, y]);
            }
        }
    }
    convex_hull(&pts)
}

pub fn reach_scene(title: &str, result: &ReachabilityResult, axes: (usize, usize)) -> Scene {
    Scene {
        title: title.to_string(),
        axes,
        regions: result
            .sets
            .iter()
            .map(|s| Region {
                kind: RegionKind::ReachSet,
                polygon: project_set(s, axes),
            })
            .collect(),
        points: result
            .trajectories
            .iter()
            .flat_map(|tr| tr.iter().map(|x| [x[axes.0], x[axes.1]]))
            .collect(),
    }
}

pub fn open_loop_scene(title: &str, poly: &DirectionPolytope, samples: &[Vec<f64>]) -> Scene {
    Scene {
        title: title.to_string(),
        axes: (0, 1),
        regions: vec![Region {
            kind: RegionKind::Polytope,
            polygon: halfplane_polygon(&poly.directions, &poly.offsets),
        }],
        points: samples.iter().map(|y| [y[0], y[1]]).collect(),
    }
}

/// One rectangle per partition leaf, projected onto `axes`.
pub fn partition_scene(title: &str, leaves: &[PartitionLeaf], axes: (usize, usize)) -> Scene {
    Scene {
        title: title.to_string(),
        axes,
        regions: leaves
            .iter()
            .map(|leaf| {
                let (lo, hi) = (leaf.node.rect.lower(), leaf.node.rect.upper());
                let (x0, x1, y0, y1) = (lo[axes.0], hi[axes.0], lo[axes.1], hi[axes.1]);
                Region {
                    kind: if leaf.pruned { RegionKind::Pruned } else { RegionKind::Partition },
                    polygon: vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]],
                }
            })
            .collect(),
        points: Vec::new(),
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn render_svg(scene: &Scene) -> String {
    let all = scene.regions.iter().flat_map(|r| r.polygon.iter()).chain(&scene.points);
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in all {
        if p[0].is_finite() && p[1].is_finite() {
            xmin = xmin.min(p[0]);
            xmax = xmax.max(p[0]);
            ymin = ymin.min(p[1]);
            ymax = ymax.max(p[1]);
        }
    }
    if !xmin.is_finite() {
        (xmin, xmax, ymin, ymax) = (0.0, 1.0, 0.0, 1.0);
    }
    let pad = |lo: f64, hi: f64| {
        let w = hi - lo;
        let p = if w > 0.0 { 0.05 * w } else { 0.5 * lo.abs().max(1.0) };
        (lo - p, hi + p)
    };
    let (xmin, xmax) = pad(xmin, xmax);
    let (ymin, ymax) = pad(ymin, ymax);
    let sx = |x: f64| LEFT + (x - xmin) / (xmax - xmin) * (WIDTH - LEFT - MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - ymin) / (ymax - ymin) * (HEIGHT - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    s.push_str(
        "<style>.set{fill:#4a90d9;fill-opacity:0.15;stroke:#1f5fa8;stroke-width:1}\
.poly{fill:#e8a33d;fill-opacity:0.2;stroke:#a86a12;stroke-width:1.2}\
.part{fill:none;stroke:#2e7d32;stroke-width:0.6}\
.pruned{fill:#bbbbbb;fill-opacity:0.3;stroke:#888888;stroke-width:0.4}\
.pt{fill:#c0392b;fill-opacity:0.5}\
text{font-family:sans-serif;font-size:12px}</style>\n",
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{MARGIN}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
        WIDTH - LEFT - MARGIN,
        HEIGHT - 2.0 * MARGIN
    );
    for r in &scene.regions {
        if r.polygon.is_empty() {
            continue;
        }
        let pts: Vec<String> = r.polygon.iter().map(|p| format!("{:.3},{:.3}", sx(p[0]), sy(p[1]))).collect();
        let _ = writeln!(s, r#"<polygon class="{}" points="{}"/>"#, r.kind.class(), pts.join(" "));
    }
    for p in &scene.points {
        let _ = writeln!(s, r#"<circle class="pt" cx="{:.3}" cy="{:.3}" r="1.5"/>"#, sx(p[0]), sy(p[1]));
    }

    let _ = writeln!(s, r#"<text x="{:.1}" y="18" text-anchor="middle">{}</text>"#, WIDTH / 2.0, escape(&scene.title));
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">x{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 10.0,
        scene.axes.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">x{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        scene.axes.1
    );
    let _ = writeln!(s, r#"<text x="{LEFT}" y="{:.1}">{:.4}</text>"#, HEIGHT - MARGIN + 16.0, xmin);
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.4}</text>"#, WIDTH - MARGIN, HEIGHT - MARGIN + 16.0, xmax);
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.4}</text>"#, LEFT - 4.0, HEIGHT - MARGIN, ymin);
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.4}</text>"#, LEFT - 4.0, MARGIN + 10.0, ymax);

    let mut kinds: Vec<RegionKind> = scene.regions.iter().map(|r| r.kind).collect();
    kinds.sort();
    kinds.dedup();
    // Legend: one row in the top margin.
    let y = MARGIN - 10.0;
    let mut x = LEFT;
    for k in kinds {
        let _ = writeln!(
            s,
            r#"<rect class="{}" x="{x:.1}" y="{:.1}" width="12" height="10"/><text x="{:.1}" y="{y:.1}">{}</text>"#,
            k.class(),
            y - 9.0,
            x + 18.0,
            k.legend()
        );
        x += 150.0;
    }
    if !scene.points.is_empty() {
        let _ = writeln!(
            s,
            r#"<circle class="pt" cx="{:.1}" cy="{:.1}" r="3"/><text x="{:.1}" y="{y:.1}">samples</text>"#,
            x + 6.0,
            y - 4.0,
            x + 18.0
        );
    }
    s.push_str("</svg>\n");
    s
}
