//! Painter's-algorithm renderer for scene states.

use ndarray::{Array3, ArrayViewMut3};

use super::script::{ObjectState, SceneState};
use super::task::{Shape, PARTICLE_COLOR, SKIN_COLOR, TABLE_COLOR};
use crate::scenecam::{add, draw_segment, fill_disc, palette, scale, Extrinsics, Intrinsics};

pub const WRIST_MARKER_RADIUS: f64 = 2.0;
pub const TIP_MARKER_RADIUS: f64 = 1.5;
const ARM_WIDTH: usize = 3;
const NEAR: f64 = 0.02;
const CYLINDER_SEGMENTS: usize = 12;

pub(crate) fn object_vertices(o: &ObjectState) -> Vec<[f64; 3]> {
    let q = o.orientation;
    let [sx, sy, sz] = o.size;
    let local: Vec<[f64; 3]> = match o.shape {
        Shape::Block => {
            let mut v = Vec::with_capacity(8);
            for &x in &[-0.5, 0.5] {
                for &y in &[-0.5, 0.5] {
                    for &z in &[-0.5, 0.5] {
                        v.push([x * sx, y * sy, z * sz]);
                    }
                }
            }
            v
        }
        Shape::Cup | Shape::Bottle => {
            let r = sx / 2.0;
            let mut v = Vec::with_capacity(2 * CYLINDER_SEGMENTS);
            for k in 0..CYLINDER_SEGMENTS {
                let a = 2.0 * std::f64::consts::PI * k as f64 / CYLINDER_SEGMENTS as f64;
                for &z in &[-0.5, 0.5] {
                    v.push([r * a.cos(), r * a.sin(), z * sz]);
                }
            }
            v
        }
    };
    local
        .into_iter()
        .map(|p| add(o.center, q.rotate(p)))
        .collect()
}

fn convex_hull(mut pts: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let turn = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let mut lower: Vec<[f64; 2]> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && turn(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<[f64; 2]> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && turn(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn fill_convex(img: &mut ArrayViewMut3<f32>, hull: &[[f64; 2]], color: [f32; 3]) {
    if hull.len() < 3 {
        return;
    }
    let (h, w) = (img.shape()[1] as i64, img.shape()[2] as i64);
    let min_x = hull
        .iter()
        .map(|p| p[0])
        .fold(f64::INFINITY, f64::min)
        .floor()
        .max(0.0) as i64;
    let max_x = hull
        .iter()
        .map(|p| p[0])
        .fold(f64::NEG_INFINITY, f64::max)
        .ceil()
        .min((w - 1) as f64) as i64;
    let min_y = hull
        .iter()
        .map(|p| p[1])
        .fold(f64::INFINITY, f64::min)
        .floor()
        .max(0.0) as i64;
    let max_y = hull
        .iter()
        .map(|p| p[1])
        .fold(f64::NEG_INFINITY, f64::max)
        .ceil()
        .min((h - 1) as f64) as i64;
    for y in min_y..=max_y {
        for x in min_x..=max_x {
            let (px, py) = (x as f64, y as f64);
            let inside = (0..hull.len()).all(|i| {
                let a = hull[i];
                let b = hull[(i + 1) % hull.len()];
                (b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0]) >= 0.0
            });
            if inside {
                for c in 0..3 {
                    img[[c, y as usize, x as usize]] = color[c];
                }
            }
        }
    }
}

/// Clips a camera-frame segment to `z >= NEAR`; `None` if fully behind.
fn clip_near(a: [f64; 3], b: [f64; 3]) -> Option<([f64; 3], [f64; 3])> {
    match (a[2] >= NEAR, b[2] >= NEAR) {
        (true, true) => Some((a, b)),
        (false, false) => None,
        (a_in, _) => {
            let f = (NEAR - a[2]) / (b[2] - a[2]);
            let cut = add(a, scale(crate::scenecam::sub(b, a), f));
            if a_in {
                Some((a, cut))
            } else {
                Some((cut, b))
            }
        }
    }
}

/// Liang-Barsky clip of a 2D segment against a rectangle.
fn clip_rect(
    p0: [f64; 2],
    p1: [f64; 2],
    lo: [f64; 2],
    hi: [f64; 2],
) -> Option<([f64; 2], [f64; 2])> {
    let d = [p1[0] - p0[0], p1[1] - p0[1]];
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for k in 0..2 {
        for (p, q) in [(-d[k], p0[k] - lo[k]), (d[k], hi[k] - p0[k])] {
            if p == 0.0 {
                if q < 0.0 {
                    return None;
                }
            } else {
                let r = q / p;
                if p < 0.0 {
                    t0 = t0.max(r);
                } else {
                    t1 = t1.min(r);
                }
            }
        }
    }
    (t0 <= t1).then(|| {
        (
            [p0[0] + t0 * d[0], p0[1] + t0 * d[1]],
            [p0[0] + t1 * d[0], p0[1] + t1 * d[1]],
        )
    })
}

fn draw_world_segment(
    img: &mut ArrayViewMut3<f32>,
    extr: &Extrinsics,
    intr: &Intrinsics,
    a: [f64; 3],
    b: [f64; 3],
    width: usize,
    color: [f32; 3],
) {
    let Some((ca, cb)) = clip_near(extr.world_to_camera(a), extr.world_to_camera(b)) else {
        return;
    };
    let (pa, pb) = (intr.project(ca), intr.project(cb));
    let margin = 4.0;
    let lo = [-margin, -margin];
    let hi = [intr.width as f64 + margin, intr.height as f64 + margin];
    if let Some((qa, qb)) = clip_rect(pa, pb, lo, hi) {
        draw_segment(img, (qa[0], qa[1]), (qb[0], qb[1]), width, color);
    }
}

/// Pixel anchor `(x, y)` and row width of the settled-fill cells inside a
/// container; cells grow row by row upward from the anchor.
pub fn fill_cells_layout(
    o: &ObjectState,
    extr: &Extrinsics,
    intr: &Intrinsics,
) -> Option<(i64, i64, i64)> {
    let base = add(o.center, [0.0, 0.0, -o.size[2] / 2.0 + 0.01]);
    let cb = extr.world_to_camera(base);
    if cb[2] <= NEAR {
        return None;
    }
    // width from the projected diameter along the camera's x axis
    let right = extr.rotation.conjugate().rotate([1.0, 0.0, 0.0]);
    let edge = extr.world_to_camera(add(base, scale(right, o.size[0] / 2.0)));
    let [ax, ay] = intr.project(cb);
    let half = (intr.project(edge)[0] - ax).abs();
    let cells_w = ((2.0 * half).round() as i64).max(3);
    Some((
        (ax + 0.5).floor() as i64,
        (ay + 0.5).floor() as i64,
        cells_w,
    ))
}

/// Renders one RGB frame `3 x H x W`: table background, objects far to
/// near, arm, pour particles, then hand markers on top.
pub fn render_frame(state: &SceneState, extr: &Extrinsics, intr: &Intrinsics) -> Array3<f32> {
    let mut frame = Array3::<f32>::zeros((3, intr.height, intr.width));
    for c in 0..3 {
        frame
            .index_axis_mut(ndarray::Axis(0), c)
            .fill(TABLE_COLOR[c]);
    }
    let mut img = frame.view_mut();

    let mut order: Vec<(f64, usize)> = state
        .objects
        .iter()
        .enumerate()
        .map(|(i, o)| (extr.world_to_camera(o.center)[2], i))
        .collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0));
    for (_, i) in order {
        let o = &state.objects[i];
        let cam: Vec<[f64; 3]> = object_vertices(o)
            .into_iter()
            .map(|p| extr.world_to_camera(p))
            .collect();
        if cam.iter().any(|p| p[2] <= NEAR) {
            continue;
        }
        let hull = convex_hull(cam.iter().map(|p| intr.project(*p)).collect());
        fill_convex(&mut img, &hull, o.color);
    }

    let kp = &state.keypoints;
    for e in &kp.edges {
        let (a, b) = (&kp.points[e.a], &kp.points[e.b]);
        let width =
            if palette::marker_index(&b.id).is_some() && palette::marker_index(&a.id).is_some() {
                1
            } else {
                ARM_WIDTH
            };
        draw_world_segment(
            &mut img, extr, intr, a.position, b.position, width, SKIN_COLOR,
        );
    }

    for p in &state.particles {
        let c = extr.world_to_camera(*p);
        if c[2] > NEAR {
            let [u, v] = intr.project(c);
            let (x, y) = ((u + 0.5).floor(), (v + 0.5).floor());
            if x >= 0.0 && y >= 0.0 && x < intr.width as f64 && y < intr.height as f64 {
                for ch in 0..3 {
                    img[[ch, y as usize, x as usize]] = PARTICLE_COLOR[ch];
                }
            }
        }
    }
    for &(obj, count) in &state.settled {
        let Some(o) = state.objects.get(obj) else {
            continue;
        };
        let Some((ax, ay, cells_w)) = fill_cells_layout(o, extr, intr) else {
            continue;
        };
        for k in 0..count as i64 {
            let x = ax - cells_w / 2 + k % cells_w;
            let y = ay - k / cells_w;
            if x >= 0 && y >= 0 && (x as usize) < intr.width && (y as usize) < intr.height {
                for c in 0..3 {
                    img[[c, y as usize, x as usize]] = PARTICLE_COLOR[c];
                }
            }
        }
    }

    for p in &kp.points {
        let Some(m) = palette::marker_index(&p.id) else {
            continue;
        };
        let c = extr.world_to_camera(p.position);
        if c[2] <= NEAR {
            continue;
        }
        let [u, v] = intr.project(c);
        let r = if m == 0 {
            WRIST_MARKER_RADIUS
        } else {
            TIP_MARKER_RADIUS
        };
        fill_disc(&mut img, u, v, r, palette::MARKERS[m]);
    }
    frame
}
