//! Channel-with-flag benchmark mesh: a 2.5 x 0.41 channel with a rigid
//! circular cylinder at (0.2, 0.2), radius 0.05, and an elastic bar attached
//! behind it reaching to x = 0.6.
//!
//! The cylinder boundary is an n-gon. The bar is the rectangle
//! [x_root, 0.6] x [0.19, 0.21] whose left edge is the vertical chord of the
//! cylinder through the bar corners, so the obstacle cut out of the fluid is
//! the circle truncated at that chord (arc plus chord close a simple
//! polygon). The fluid region is meshed as structured rectangular blocks
//! plus one transfinite ring between the obstacle polygon and the box
//! [0.08, 0.32]^2; the bar is a structured rectangle grid. All block edges
//! share centrally computed 1D subdivisions, so the union is conforming.

use std::collections::BTreeMap;

use crate::mesh::{BoundaryLabel, Mesh, MeshError, Region, Triangle};

pub const CHANNEL_LENGTH: f64 = 2.5;
pub const CHANNEL_HEIGHT: f64 = 0.41;
pub const CYLINDER_CENTER: [f64; 2] = [0.2, 0.2];
pub const CYLINDER_RADIUS: f64 = 0.05;
pub const BAR_END_X: f64 = 0.6;
pub const BAR_BOTTOM_Y: f64 = 0.19;
pub const BAR_TOP_Y: f64 = 0.21;
/// Tip midpoint of the bar, the displacement probe of the benchmark.
pub const POINT_A: [f64; 2] = [0.6, 0.2];

/// x of the chord where the bar meets the cylinder.
pub fn bar_root_x() -> f64 {
    let half = 0.5 * (BAR_TOP_Y - BAR_BOTTOM_Y);
    CYLINDER_CENTER[0] + (CYLINDER_RADIUS * CYLINDER_RADIUS - half * half).sqrt()
}

/// Area of the obstacle polygon (uniform arc points plus closing chord),
/// by the shoelace formula evaluated in closed form.
pub fn obstacle_polygon_area(n_circle_segments: usize) -> f64 {
    let r = CYLINDER_RADIUS;
    let half = 0.5 * (BAR_TOP_Y - BAR_BOTTOM_Y);
    let theta0 = (half / r).asin();
    let dtheta = (2.0 * std::f64::consts::PI - 2.0 * theta0) / n_circle_segments as f64;
    0.5 * r * r * (n_circle_segments as f64 * dtheta.sin() + (2.0 * theta0).sin())
}

/// Uniform subdivision of [a, b] into n cells, endpoints exact.
fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(n + 1);
    v.push(a);
    for i in 1..n {
        v.push(a + (b - a) * (i as f64 / n as f64));
    }
    v.push(b);
    v
}

/// Deduplicating vertex pool keyed by quantized coordinates. Shared block
/// edges reuse the same 1D subdivision arrays, so coincident points are
/// bitwise equal and the quantization never merges distinct points.
struct PointPool {
    map: BTreeMap<(i64, i64), usize>,
    points: Vec<[f64; 2]>,
}

impl PointPool {
    fn new() -> Self {
        Self { map: BTreeMap::new(), points: Vec::new() }
    }

    fn insert(&mut self, p: [f64; 2]) -> usize {
        let key = ((p[0] * 1e9).round() as i64, (p[1] * 1e9).round() as i64);
        *self.map.entry(key).or_insert_with(|| {
            self.points.push(p);
            self.points.len() - 1
        })
    }
}

struct Builder {
    pool: PointPool,
    triangles: Vec<Triangle>,
}

impl Builder {
    /// Appends a triangle, flipping it if needed so the signed area is
    /// positive; zero-area triangles are dropped (degenerate ring ends).
    fn push(&mut self, a: [f64; 2], b: [f64; 2], c: [f64; 2], region: Region) {
        let (ia, ib, ic) = (self.pool.insert(a), self.pool.insert(b), self.pool.insert(c));
        if ia == ib || ib == ic || ia == ic {
            return;
        }
        let area2 = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
        let vertices = if area2 >= 0.0 { [ia, ib, ic] } else { [ia, ic, ib] };
        self.triangles.push(Triangle { vertices, region });
    }

    /// Structured quads over the tensor grid xs x ys, each split along the
    /// diagonal from the low corner to the high corner.
    fn push_block(&mut self, xs: &[f64], ys: &[f64], region: Region) {
        for i in 0..xs.len() - 1 {
            for j in 0..ys.len() - 1 {
                let p00 = [xs[i], ys[j]];
                let p10 = [xs[i + 1], ys[j]];
                let p01 = [xs[i], ys[j + 1]];
                let p11 = [xs[i + 1], ys[j + 1]];
                self.push(p00, p10, p11, region);
                self.push(p00, p11, p01, region);
            }
        }
    }
}

/// Polyline with a cumulative-arclength parameterization on [0, 1].
struct Path {
    points: Vec<[f64; 2]>,
    fractions: Vec<f64>,
}

impl Path {
    fn new(points: Vec<[f64; 2]>) -> Self {
        let mut cum = vec![0.0];
        for w in points.windows(2) {
            let d = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
            cum.push(cum.last().unwrap() + d);
        }
        let total = *cum.last().unwrap();
        let fractions = cum.iter().map(|s| s / total).collect();
        Self { points, fractions }
    }

    /// Point at arclength fraction s (vertices are snapped exactly).
    fn at(&self, s: f64) -> [f64; 2] {
        let n = self.points.len();
        let mut i = match self
            .fractions
            .binary_search_by(|f| f.partial_cmp(&s).unwrap())
        {
            Ok(i) => return self.points[i],
            Err(i) => i,
        };
        i = i.clamp(1, n - 1);
        let (f0, f1) = (self.fractions[i - 1], self.fractions[i]);
        let t = (s - f0) / (f1 - f0);
        let (p0, p1) = (self.points[i - 1], self.points[i]);
        [p0[0] + t * (p1[0] - p0[0]), p0[1] + t * (p1[1] - p0[1])]
    }
}

/// Builds the benchmark mesh. `refinement` scales every subdivision count;
/// `n_circle_segments` is the number of chords approximating the cylinder
/// arc (at least 8).
pub fn build_channel_flag(refinement: usize, n_circle_segments: usize) -> Result<Mesh, MeshError> {
    if refinement == 0 {
        return Err(MeshError::GeometryDegenerate {
            msg: "refinement must be at least 1".to_string(),
        });
    }
    if n_circle_segments < 8 {
        return Err(MeshError::GeometryDegenerate {
            msg: format!("{n_circle_segments} circle segments cannot resolve the cylinder (need >= 8)"),
        });
    }

    let r = refinement;
    let x_root = bar_root_x();
    // Ring box around the cylinder.
    let (box_lo, box_hi) = (0.08, 0.32);

    // Coarse x columns: inlet strip, ring box, bar span, downstream.
    let x_breaks = [0.0, box_lo, box_hi, BAR_END_X, CHANNEL_LENGTH];
    let mut nx = [2 * r, 8 * r, 6 * r, 16 * r];
    // Coarse y rows: the bar row [0.19, 0.21] is its own strip.
    let y_breaks = [0.0, box_lo, BAR_BOTTOM_Y, BAR_TOP_Y, box_hi, CHANNEL_HEIGHT];
    let mut ny = [r, 2 * r, 2 * r, 2 * r, r];

    // The ring pairs the obstacle-side path (bar top edge inside the box,
    // the arc, bar bottom edge) with the box path; both need equal cell
    // counts. The bar-edge count absorbs the difference; the box perimeter
    // is widened or the bar row deepened if the arc alone is too dense.
    let outer_cells = |nx1: usize, ny: &[usize; 5]| 2 * nx1 + 2 * ny[1] + 2 * ny[3] + ny[2];
    while outer_cells(nx[1], &ny) < n_circle_segments + 2 {
        nx[1] += 1;
    }
    if (outer_cells(nx[1], &ny) - n_circle_segments) % 2 == 1 {
        ny[2] += 1;
    }
    let n_bar_in = (outer_cells(nx[1], &ny) - n_circle_segments) / 2;

    // Shared 1D subdivisions (exact f64 reuse keeps the union conforming).
    let xs: Vec<Vec<f64>> = (0..4)
        .map(|i| linspace(x_breaks[i], x_breaks[i + 1], nx[i]))
        .collect();
    let ys: Vec<Vec<f64>> = (0..5)
        .map(|j| linspace(y_breaks[j], y_breaks[j + 1], ny[j]))
        .collect();
    let xs_bar_in = linspace(x_root, box_hi, n_bar_in);
    let mut xs_bar = xs_bar_in.clone();
    xs_bar.extend_from_slice(&xs[2][1..]);

    let mut b = Builder { pool: PointPool::new(), triangles: Vec::new() };

    // Plain rectangular fluid blocks: every coarse cell except the ring box
    // rows next to the cylinder and the solid bar cell.
    for i in 0..4 {
        for j in 0..5 {
            let ring = i == 1 && (1..=3).contains(&j);
            let bar = i == 2 && j == 2;
            if ring || bar {
                continue;
            }
            b.push_block(&xs[i], &ys[j], Region::Fluid);
        }
    }

    // Solid bar grid; its left column of edges is the clamped chord.
    b.push_block(&xs_bar, &ys[2], Region::Solid);

    // Obstacle-side ring path: bar top edge walked inward, the arc
    // counterclockwise, bar bottom edge walked outward. Arc endpoints are
    // snapped to the exact bar corners.
    let half = 0.5 * (BAR_TOP_Y - BAR_BOTTOM_Y);
    let theta0 = (half / CYLINDER_RADIUS).asin();
    let mut inner_pts: Vec<[f64; 2]> = xs_bar_in.iter().rev().map(|&x| [x, BAR_TOP_Y]).collect();
    for m in 1..n_circle_segments {
        let th = theta0
            + (2.0 * std::f64::consts::PI - 2.0 * theta0) * (m as f64 / n_circle_segments as f64);
        inner_pts.push([
            CYLINDER_CENTER[0] + CYLINDER_RADIUS * th.cos(),
            CYLINDER_CENTER[1] + CYLINDER_RADIUS * th.sin(),
        ]);
    }
    inner_pts.push([x_root, BAR_BOTTOM_Y]);
    inner_pts.extend(xs_bar_in.iter().skip(1).map(|&x| [x, BAR_BOTTOM_Y]));

    // Box-side path, counterclockwise from (box_hi, bar_top) around to
    // (box_hi, bar_bottom), concatenating the shared subdivisions.
    let mut outer_pts: Vec<[f64; 2]> = ys[3].iter().map(|&y| [box_hi, y]).collect();
    outer_pts.extend(xs[1].iter().rev().skip(1).map(|&x| [x, box_hi]));
    outer_pts.extend(ys[3].iter().rev().skip(1).map(|&y| [box_lo, y]));
    outer_pts.extend(ys[2].iter().rev().skip(1).map(|&y| [box_lo, y]));
    outer_pts.extend(ys[1].iter().rev().skip(1).map(|&y| [box_lo, y]));
    outer_pts.extend(xs[1].iter().skip(1).map(|&x| [x, box_lo]));
    outer_pts.extend(ys[1].iter().skip(1).map(|&y| [box_hi, y]));

    assert_eq!(inner_pts.len(), outer_pts.len(), "ring paths must pair up");
    let n_s = inner_pts.len() - 1;

    // Transfinite ring between the two paths. Columns use the inner path's
    // vertices on layer 0 and the outer path's on the last layer, matched by
    // arclength fraction in between; the end columns collapse to the shared
    // corner vertices and emit fans.
    let inner = Path::new(inner_pts);
    let outer = Path::new(outer_pts);
    let n_r = 2 * r;
    let layer_point = |i: usize, j: usize| -> [f64; 2] {
        if j == 0 {
            return inner.points[i];
        }
        if j == n_r {
            return outer.points[i];
        }
        // Blend of the two native fractions keeps radial lines attached to
        // both endpoint distributions without tangling.
        let t = j as f64 / n_r as f64;
        let s = (1.0 - t) * inner.fractions[i] + t * outer.fractions[i];
        let p_in = inner.at(s);
        let p_out = outer.at(s);
        [
            (1.0 - t) * p_in[0] + t * p_out[0],
            (1.0 - t) * p_in[1] + t * p_out[1],
        ]
    };
    for i in 0..n_s {
        for j in 0..n_r {
            let p00 = layer_point(i, j);
            let p10 = layer_point(i + 1, j);
            let p01 = layer_point(i, j + 1);
            let p11 = layer_point(i + 1, j + 1);
            // Split along the shorter diagonal; degenerate corners drop out
            // inside push().
            let d0 = (p11[0] - p00[0]).powi(2) + (p11[1] - p00[1]).powi(2);
            let d1 = (p10[0] - p01[0]).powi(2) + (p10[1] - p01[1]).powi(2);
            if d0 <= d1 {
                b.push(p00, p10, p11, Region::Fluid);
                b.push(p00, p11, p01, Region::Fluid);
            } else {
                b.push(p00, p10, p01, Region::Fluid);
                b.push(p10, p11, p01, Region::Fluid);
            }
        }
    }

    // Boundary labels. Interface facets (bar surface) are derived from
    // region adjacency, so only true boundary edges are listed.
    let mut boundary = BTreeMap::new();
    let mut label_edge = |b: &mut Builder, p: [f64; 2], q: [f64; 2], label: BoundaryLabel| {
        let (ip, iq) = (b.pool.insert(p), b.pool.insert(q));
        boundary.insert((ip.min(iq), ip.max(iq)), label);
    };
    let mut label_run = |b: &mut Builder, pts: Vec<[f64; 2]>, label: BoundaryLabel| {
        for w in pts.windows(2) {
            label_edge(b, w[0], w[1], label);
        }
    };

    // Channel outline.
    let y_all: Vec<f64> = ys.iter().enumerate().flat_map(|(j, v)| {
        v.iter().copied().skip(if j == 0 { 0 } else { 1 }).collect::<Vec<_>>()
    }).collect();
    let x_all: Vec<f64> = xs.iter().enumerate().flat_map(|(i, v)| {
        v.iter().copied().skip(if i == 0 { 0 } else { 1 }).collect::<Vec<_>>()
    }).collect();
    label_run(&mut b, y_all.iter().map(|&y| [0.0, y]).collect(), BoundaryLabel::Inlet);
    label_run(&mut b, y_all.iter().map(|&y| [CHANNEL_LENGTH, y]).collect(), BoundaryLabel::Outlet);
    label_run(&mut b, x_all.iter().map(|&x| [x, 0.0]).collect(), BoundaryLabel::FluidWall);
    label_run(&mut b, x_all.iter().map(|&x| [x, CHANNEL_HEIGHT]).collect(), BoundaryLabel::FluidWall);
    // Cylinder arc (rigid wall) and the clamped chord at the bar root.
    let arc: Vec<[f64; 2]> = inner.points[n_bar_in..=n_bar_in + n_circle_segments].to_vec();
    label_run(&mut b, arc, BoundaryLabel::FluidWall);
    label_run(
        &mut b,
        ys[2].iter().map(|&y| [x_root, y]).collect(),
        BoundaryLabel::SolidClamp,
    );

    Mesh::from_raw(b.pool.points, b.triangles, &boundary)
}
