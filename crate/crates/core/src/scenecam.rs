//! Camera mathematics: keypoint projection with frustum culling, action-map
//! rasterization and Plücker ray maps.
//!
//! Conventions: camera frame is x right, y down, z forward. Pixel `(x, y)`
//! has its center at integer coordinates `(x, y)`. Extrinsics map world
//! points into the camera frame: `p_cam = R p_world + t`.

use ndarray::{Array3, Array4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default near-plane distance in meters.
pub const DEFAULT_NEAR: f64 = 0.01;

/// Pinhole intrinsics shared by every frame of a video.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Intrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Centered principal point and a focal length of `0.8 * width`.
    pub fn standard(width: usize, height: usize) -> Self {
        let f = 0.8 * width as f64;
        Intrinsics {
            fx: f,
            fy: f,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx.is_finite()
            && self.fy.is_finite()
            && self.fx > 0.0
            && self.fy > 0.0
            && (0.0..=self.width as f64).contains(&self.cx)
            && (0.0..=self.height as f64).contains(&self.cy)
            && self.width >= 8
            && self.height >= 8;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "invalid intrinsics {self:?}"
            )))
        }
    }

    /// Maps a camera-frame point to pixel coordinates (no culling).
    pub fn project(&self, p: [f64; 3]) -> [f64; 2] {
        [
            self.fx * p[0] / p[2] + self.cx,
            self.fy * p[1] / p[2] + self.cy,
        ]
    }

    /// Camera-frame point at `depth` along the ray through pixel `(u, v)`.
    pub fn back_project(&self, u: f64, v: f64, depth: f64) -> [f64; 3] {
        [
            (u - self.cx) / self.fx * depth,
            (v - self.cy) / self.fy * depth,
            depth,
        ]
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && u < self.width as f64 && v >= 0.0 && v < self.height as f64
    }

    /// Same camera model at a different image size.
    pub fn rescaled(&self, width: usize, height: usize) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Intrinsics {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            width,
            height,
        }
    }
}

/// Quaternion `(w, x, y, z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quat { w, x, y, z }
    }

    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Self {
        let n = norm(axis);
        let (s, c) = (angle / 2.0).sin_cos();
        if n == 0.0 {
            return Quat::IDENTITY;
        }
        Quat::new(c, s * axis[0] / n, s * axis[1] / n, s * axis[2] / n)
    }

    /// Rotation whose matrix has the given rows (orthonormal, det +1).
    pub fn from_rows(r: [[f64; 3]; 3]) -> Self {
        let trace = r[0][0] + r[1][1] + r[2][2];
        let q = if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            Quat::new(
                0.25 * s,
                (r[2][1] - r[1][2]) / s,
                (r[0][2] - r[2][0]) / s,
                (r[1][0] - r[0][1]) / s,
            )
        } else if r[0][0] > r[1][1] && r[0][0] > r[2][2] {
            let s = (1.0 + r[0][0] - r[1][1] - r[2][2]).sqrt() * 2.0;
            Quat::new(
                (r[2][1] - r[1][2]) / s,
                0.25 * s,
                (r[0][1] + r[1][0]) / s,
                (r[0][2] + r[2][0]) / s,
            )
        } else if r[1][1] > r[2][2] {
            let s = (1.0 + r[1][1] - r[0][0] - r[2][2]).sqrt() * 2.0;
            Quat::new(
                (r[0][2] - r[2][0]) / s,
                (r[0][1] + r[1][0]) / s,
                0.25 * s,
                (r[1][2] + r[2][1]) / s,
            )
        } else {
            let s = (1.0 + r[2][2] - r[0][0] - r[1][1]).sqrt() * 2.0;
            Quat::new(
                (r[1][0] - r[0][1]) / s,
                (r[0][2] + r[2][0]) / s,
                (r[1][2] + r[2][1]) / s,
                0.25 * s,
            )
        };
        q.normalized()
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        Quat::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    pub fn conjugate(&self) -> Self {
        Quat::new(self.w, -self.x, -self.y, -self.z)
    }

    /// Hamilton product `self * rhs`.
    pub fn mul(&self, rhs: &Quat) -> Quat {
        Quat::new(
            self.w * rhs.w - self.x * rhs.x - self.y * rhs.y - self.z * rhs.z,
            self.w * rhs.x + self.x * rhs.w + self.y * rhs.z - self.z * rhs.y,
            self.w * rhs.y - self.x * rhs.z + self.y * rhs.w + self.z * rhs.x,
            self.w * rhs.z + self.x * rhs.y - self.y * rhs.x + self.z * rhs.w,
        )
    }

    /// Rotates `v` by this (unit) quaternion.
    pub fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        let q = [self.x, self.y, self.z];
        let t = scale(cross(q, v), 2.0);
        add(add(v, scale(t, self.w)), cross(q, t))
    }

    /// Angle of the relative rotation between two unit quaternions, radians.
    pub fn angle_to(&self, other: &Quat) -> f64 {
        let d = (self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z).abs();
        2.0 * d.min(1.0).acos()
    }
}

/// World-to-camera rigid transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extrinsics {
    pub rotation: Quat,
    pub translation: [f64; 3],
}

impl Extrinsics {
    pub fn new(rotation: Quat, translation: [f64; 3]) -> Result<Self> {
        let e = Extrinsics {
            rotation,
            translation,
        };
        e.validate()?;
        Ok(e)
    }

    pub fn identity() -> Self {
        Extrinsics {
            rotation: Quat::IDENTITY,
            translation: [0.0; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.rotation.w,
            self.rotation.x,
            self.rotation.y,
            self.rotation.z,
        ]
        .iter()
        .chain(self.translation.iter())
        .all(|v| v.is_finite());
        if !finite || (self.rotation.norm() - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!(
                "extrinsics need a finite unit quaternion, got {:?}",
                self.rotation
            )));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`; `up` is the approximate world up.
    pub fn look_at(eye: [f64; 3], target: [f64; 3], up: [f64; 3]) -> Self {
        let fwd = normalize(sub(target, eye));
        let right = normalize(cross(fwd, up));
        let down = cross(fwd, right);
        // Rows of the world->camera rotation are the camera axes in world coords.
        let rotation = Quat::from_rows([right, down, fwd]);
        let translation = scale(rotation.rotate(eye), -1.0);
        Extrinsics {
            rotation,
            translation,
        }
    }

    pub fn world_to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        add(self.rotation.rotate(p), self.translation)
    }

    pub fn camera_to_world(&self, p: [f64; 3]) -> [f64; 3] {
        self.rotation.conjugate().rotate(sub(p, self.translation))
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> [f64; 3] {
        self.camera_to_world([0.0; 3])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keypoint3 {
    pub id: String,
    pub position: [f64; 3],
}

/// Skeleton segment between two keypoints (indices into the point list).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub color: [f32; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSet3D {
    pub points: Vec<Keypoint3>,
    pub edges: Vec<Edge>,
}

impl KeypointSet3D {
    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.points.iter().enumerate() {
            if self.points[..i].iter().any(|q| q.id == p.id) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate keypoint id `{}`",
                    p.id
                )));
            }
            if p.position.iter().any(|c| !c.is_finite()) {
                return Err(Error::NonFiniteKeypoint { id: p.id.clone() });
            }
        }
        if let Some(e) = self
            .edges
            .iter()
            .find(|e| e.a >= self.points.len() || e.b >= self.points.len())
        {
            return Err(Error::InvalidArgument(format!(
                "edge ({}, {}) references a missing keypoint",
                e.a, e.b
            )));
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<[f64; 3]> {
        self.points.iter().find(|p| p.id == id).map(|p| p.position)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Keypoint2 {
    pub id: String,
    pub u: f64,
    pub v: f64,
    /// Camera-frame depth.
    pub depth: f64,
    pub visible: bool,
}

/// Projected keypoints of one frame after frustum culling.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionFrame {
    pub points: Vec<Keypoint2>,
    /// Only edges whose two endpoints are visible.
    pub edges: Vec<Edge>,
    pub width: usize,
    pub height: usize,
}

impl ActionFrame {
    pub fn empty(width: usize, height: usize) -> Self {
        ActionFrame {
            points: Vec::new(),
            edges: Vec::new(),
            width,
            height,
        }
    }

    pub fn visible(&self) -> impl Iterator<Item = &Keypoint2> {
        self.points.iter().filter(|p| p.visible)
    }
}

/// Rasterized action condition, `3 x L x H x W`, black background.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionMap {
    pub raster: Array4<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RasterStyle {
    pub line_width: usize,
    pub joint_radius: f64,
}

impl Default for RasterStyle {
    fn default() -> Self {
        RasterStyle {
            line_width: 2,
            joint_radius: 2.0,
        }
    }
}

/// Half-open pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PixelRect {
    pub fn area(&self) -> usize {
        self.x1.saturating_sub(self.x0) * self.y1.saturating_sub(self.y0)
    }

    /// Rescales to another resolution, rounding outward.
    pub fn rescaled(&self, sx: f64, sy: f64) -> PixelRect {
        PixelRect {
            x0: (self.x0 as f64 * sx).floor() as usize,
            y0: (self.y0 as f64 * sy).floor() as usize,
            x1: (self.x1 as f64 * sx).ceil() as usize,
            y1: (self.y1 as f64 * sy).ceil() as usize,
        }
    }
}

/// Per-pixel Plücker embedding `(d, o x d)`, `6 x H' x W'`.
#[derive(Debug, Clone, PartialEq)]
pub struct RayMap {
    pub embedding: Array3<f32>,
}

pub mod palette {
    //! Fixed colors keyed by semantic keypoint id.
    //!
    //! Hand keypoints use saturated marker colors; the same colors mark the
    //! hand in rendered frames so a color detector can locate them.

    pub const ARM: [f32; 3] = [1.0, 1.0, 1.0];

    /// Wrist plus five fingertips, in keypoint order.
    pub const HAND_IDS: [&str; 6] = ["wrist", "tip1", "tip2", "tip3", "tip4", "tip5"];

    pub const MARKERS: [[f32; 3]; 6] = [
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
        [1.0, 1.0, 0.0],
        [1.0, 0.0, 1.0],
        [0.0, 1.0, 1.0],
    ];

    const COOL: [[f32; 3]; 5] = [
        [0.0, 0.6, 0.8],
        [0.2, 0.4, 1.0],
        [0.4, 0.3, 0.9],
        [0.0, 0.8, 0.6],
        [0.3, 0.7, 0.9],
    ];

    const WARM: [[f32; 3]; 5] = [
        [1.0, 0.6, 0.2],
        [0.9, 0.4, 0.1],
        [1.0, 0.8, 0.3],
        [0.8, 0.3, 0.3],
        [1.0, 0.5, 0.5],
    ];

    fn strip_side(id: &str) -> (&str, bool) {
        match id.strip_prefix("l_") {
            Some(rest) => (rest, true),
            None => (id.strip_prefix("r_").unwrap_or(id), false),
        }
    }

    pub fn marker_index(id: &str) -> Option<usize> {
        let (base, _) = strip_side(id);
        HAND_IDS.iter().position(|h| *h == base)
    }

    /// Color of a joint disc.
    pub fn joint_color(id: &str) -> [f32; 3] {
        marker_index(id).map(|i| MARKERS[i]).unwrap_or(ARM)
    }

    /// Color of the segment between two joints: arm segments white, hand
    /// segments cool (right) or warm (left) hues keyed by fingertip.
    pub fn edge_color(a: &str, b: &str) -> [f32; 3] {
        let (a_base, left) = strip_side(a);
        let (b_base, _) = strip_side(b);
        let tip = [a_base, b_base]
            .iter()
            .filter_map(|s| s.strip_prefix("tip").and_then(|n| n.parse::<usize>().ok()))
            .next();
        match tip {
            Some(k) if k >= 1 => {
                let table = if left { &WARM } else { &COOL };
                table[(k - 1) % table.len()]
            }
            _ => ARM,
        }
    }
}

/// Projects keypoints into the image and culls those outside the frustum:
/// a point is visible iff its depth exceeds `near` and its pixel lies in
/// `[0, width) x [0, height)`. Edges survive only if both ends are visible.
pub fn project_keypoints(
    extr: &Extrinsics,
    intr: &Intrinsics,
    kps: &KeypointSet3D,
    near: f64,
) -> Result<ActionFrame> {
    if !(near > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "near plane must be positive, got {near}"
        )));
    }
    let mut points = Vec::with_capacity(kps.points.len());
    for kp in &kps.points {
        if kp.position.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFiniteKeypoint { id: kp.id.clone() });
        }
        let pc = extr.world_to_camera(kp.position);
        let (u, v, visible) = if pc[2] > near {
            let [u, v] = intr.project(pc);
            (u, v, intr.contains(u, v))
        } else {
            (f64::NAN, f64::NAN, false)
        };
        points.push(Keypoint2 {
            id: kp.id.clone(),
            u,
            v,
            depth: pc[2],
            visible,
        });
    }
    let edges = kps
        .edges
        .iter()
        .filter(|e| {
            points.get(e.a).is_some_and(|p| p.visible) && points.get(e.b).is_some_and(|p| p.visible)
        })
        .copied()
        .collect();
    Ok(ActionFrame {
        points,
        edges,
        width: intr.width,
        height: intr.height,
    })
}

fn round_half_up(x: f64) -> i64 {
    (x + 0.5).floor() as i64
}

/// Pixels of a solid line between the rounded endpoints, one per step along
/// the major axis.
pub fn line_pixels(p0: (f64, f64), p1: (f64, f64)) -> Vec<(i64, i64)> {
    let (x0, y0) = (round_half_up(p0.0), round_half_up(p0.1));
    let (x1, y1) = (round_half_up(p1.0), round_half_up(p1.1));
    let (dx, dy) = (x1 - x0, y1 - y0);
    let steps = dx.abs().max(dy.abs());
    if steps == 0 {
        return vec![(x0, y0)];
    }
    (0..=steps)
        .map(|k| {
            let f = k as f64 / steps as f64;
            if dx.abs() >= dy.abs() {
                (
                    x0 + k * dx.signum(),
                    round_half_up(y0 as f64 + f * dy as f64),
                )
            } else {
                (
                    round_half_up(x0 as f64 + f * dx as f64),
                    y0 + k * dy.signum(),
                )
            }
        })
        .collect()
}

/// Offsets of the square stamp used to widen a one-pixel line to `width`.
pub fn stamp_offsets(width: usize) -> std::ops::RangeInclusive<i64> {
    let w = width.max(1) as i64;
    -(w / 2)..=(w - 1) / 2
}

fn put(img: &mut ndarray::ArrayViewMut3<f32>, x: i64, y: i64, color: [f32; 3]) {
    let (h, w) = (img.shape()[1] as i64, img.shape()[2] as i64);
    if x >= 0 && y >= 0 && x < w && y < h {
        for (c, v) in color.iter().enumerate() {
            img[[c, y as usize, x as usize]] = *v;
        }
    }
}

/// Fills every pixel whose center lies within `radius` of `(u, v)`.
pub fn fill_disc(
    img: &mut ndarray::ArrayViewMut3<f32>,
    u: f64,
    v: f64,
    radius: f64,
    color: [f32; 3],
) {
    let r2 = radius * radius;
    let (x_lo, x_hi) = ((u - radius).floor() as i64, (u + radius).ceil() as i64);
    let (y_lo, y_hi) = ((v - radius).floor() as i64, (v + radius).ceil() as i64);
    for y in y_lo..=y_hi {
        for x in x_lo..=x_hi {
            let (ddx, ddy) = (x as f64 - u, y as f64 - v);
            if ddx * ddx + ddy * ddy <= r2 {
                put(img, x, y, color);
            }
        }
    }
}

/// Draws a widened line segment.
pub fn draw_segment(
    img: &mut ndarray::ArrayViewMut3<f32>,
    p0: (f64, f64),
    p1: (f64, f64),
    width: usize,
    color: [f32; 3],
) {
    for (x, y) in line_pixels(p0, p1) {
        for oy in stamp_offsets(width) {
            for ox in stamp_offsets(width) {
                put(img, x + ox, y + oy, color);
            }
        }
    }
}

/// Rasterizes projected skeletons into an action map: visible edges first,
/// then visible joints as filled discs, everything else exactly zero.
pub fn rasterize_action(
    frames: &[ActionFrame],
    intr: &Intrinsics,
    style: &RasterStyle,
) -> Result<ActionMap> {
    if frames.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot rasterize an empty frame list".into(),
        ));
    }
    if let Some(f) = frames
        .iter()
        .find(|f| f.width != intr.width || f.height != intr.height)
    {
        return Err(Error::shape(
            "action frame size",
            format!("{}x{}", intr.width, intr.height),
            format!("{}x{}", f.width, f.height),
        ));
    }
    let mut raster = Array4::<f32>::zeros((3, frames.len(), intr.height, intr.width));
    for (i, frame) in frames.iter().enumerate() {
        let mut img = raster.index_axis_mut(ndarray::Axis(1), i);
        for e in &frame.edges {
            let (a, b) = (&frame.points[e.a], &frame.points[e.b]);
            if a.visible && b.visible {
                draw_segment(&mut img, (a.u, a.v), (b.u, b.v), style.line_width, e.color);
            }
        }
        for p in frame.visible() {
            fill_disc(
                &mut img,
                p.u,
                p.v,
                style.joint_radius,
                palette::joint_color(&p.id),
            );
        }
    }
    Ok(ActionMap { raster })
}

/// Plücker ray map at latent resolution: one ray per latent pixel, through
/// the full-resolution point under the latent pixel center.
pub fn plucker_raymap(
    extr: &Extrinsics,
    intr: &Intrinsics,
    latent_h: usize,
    latent_w: usize,
) -> Result<RayMap> {
    if latent_h == 0 || latent_w == 0 {
        return Err(Error::InvalidArgument(
            "ray map needs at least one pixel".into(),
        ));
    }
    if intr.fx == 0.0 || intr.fy == 0.0 || !intr.fx.is_finite() || !intr.fy.is_finite() {
        return Err(Error::InvalidArgument(
            "degenerate intrinsics: zero focal length".into(),
        ));
    }
    let sx = intr.width as f64 / latent_w as f64;
    let sy = intr.height as f64 / latent_h as f64;
    let origin = extr.center();
    let to_world = extr.rotation.conjugate();
    let mut embedding = Array3::<f32>::zeros((6, latent_h, latent_w));
    for i in 0..latent_h {
        for j in 0..latent_w {
            let u = (j as f64 + 0.5) * sx - 0.5;
            let v = (i as f64 + 0.5) * sy - 0.5;
            let d_cam = [(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0];
            let d = normalize(to_world.rotate(d_cam));
            let m = cross(origin, d);
            for c in 0..3 {
                embedding[[c, i, j]] = d[c] as f32;
                embedding[[c + 3, i, j]] = m[c] as f32;
            }
        }
    }
    Ok(RayMap { embedding })
}

pub(crate) fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn scale(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn normalize(a: [f64; 3]) -> [f64; 3] {
    scale(a, 1.0 / norm(a))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kps(points: &[(&str, [f64; 3])]) -> KeypointSet3D {
        KeypointSet3D {
            points: points
                .iter()
                .map(|(id, p)| Keypoint3 {
                    id: id.to_string(),
                    position: *p,
                })
                .collect(),
            edges: vec![],
        }
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let k = Intrinsics::standard(64, 64);
        let f = project_keypoints(
            &Extrinsics::identity(),
            &k,
            &kps(&[("a", [0.0, 0.0, 1.0])]),
            DEFAULT_NEAR,
        )
        .unwrap();
        assert!(f.points[0].visible);
        assert_eq!((f.points[0].u, f.points[0].v), (k.cx, k.cy));
    }

    #[test]
    fn behind_camera_is_culled() {
        let k = Intrinsics::standard(64, 64);
        let f = project_keypoints(
            &Extrinsics::identity(),
            &k,
            &kps(&[("a", [0.0, 0.0, -1.0])]),
            DEFAULT_NEAR,
        )
        .unwrap();
        assert!(!f.points[0].visible);
    }

    #[test]
    fn non_finite_point_names_id() {
        let k = Intrinsics::standard(64, 64);
        let err = project_keypoints(
            &Extrinsics::identity(),
            &k,
            &kps(&[("ok", [0.0, 0.0, 1.0]), ("elbow", [f64::NAN, 0.0, 1.0])]),
            DEFAULT_NEAR,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFiniteKeypoint { ref id } if id == "elbow"));
    }

    #[test]
    fn edge_dropped_when_one_end_culled() {
        let k = Intrinsics::standard(64, 64);
        let mut set = kps(&[
            ("wrist", [0.0, 0.0, 1.0]),
            ("tip1", [0.0, 0.0, -1.0]),
            ("tip2", [0.01, 0.0, 1.0]),
        ]);
        set.edges = vec![
            Edge {
                a: 0,
                b: 1,
                color: [1.0; 3],
            },
            Edge {
                a: 0,
                b: 2,
                color: [1.0; 3],
            },
        ];
        let f = project_keypoints(&Extrinsics::identity(), &k, &set, DEFAULT_NEAR).unwrap();
        assert_eq!(f.edges.len(), 1);
        assert_eq!((f.edges[0].a, f.edges[0].b), (0, 2));
    }

    #[test]
    fn empty_frame_rasterizes_to_zero() {
        let k = Intrinsics::standard(16, 16);
        let m =
            rasterize_action(&[ActionFrame::empty(16, 16)], &k, &RasterStyle::default()).unwrap();
        assert!(m.raster.iter().all(|v| *v == 0.0));
        assert!(rasterize_action(&[], &k, &RasterStyle::default()).is_err());
    }

    #[test]
    fn segment_covers_endpoints() {
        let k = Intrinsics::standard(32, 32);
        let frame = ActionFrame {
            points: vec![
                Keypoint2 {
                    id: "shoulder".into(),
                    u: 3.2,
                    v: 4.7,
                    depth: 1.0,
                    visible: true,
                },
                Keypoint2 {
                    id: "elbow".into(),
                    u: 25.9,
                    v: 18.1,
                    depth: 1.0,
                    visible: true,
                },
            ],
            edges: vec![Edge {
                a: 0,
                b: 1,
                color: palette::ARM,
            }],
            width: 32,
            height: 32,
        };
        let style = RasterStyle {
            line_width: 1,
            joint_radius: 0.0,
        };
        let m = rasterize_action(&[frame], &k, &style).unwrap();
        assert!(m.raster[[0, 0, 5, 3]] > 0.0);
        assert!(m.raster[[0, 0, 18, 26]] > 0.0);
    }

    #[test]
    fn look_at_points_forward() {
        let e = Extrinsics::look_at([0.0, -0.5, 0.5], [0.0, 0.4, 0.0], [0.0, 0.0, 1.0]);
        e.validate().unwrap();
        let pc = e.world_to_camera([0.0, 0.4, 0.0]);
        assert!(pc[0].abs() < 1e-12 && pc[1].abs() < 1e-12 && pc[2] > 0.0);
        // World up appears as image up (negative camera y).
        let up = e.world_to_camera([0.0, 0.4, 0.1]);
        assert!(up[1] < 0.0);
        let c = e.center();
        assert!((c[1] + 0.5).abs() < 1e-12 && (c[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn identity_raymap_has_zero_moment_and_principal_center() {
        let mut k = Intrinsics::standard(20, 20);
        // center of a 5x5 latent grid maps to full-res pixel 9.5
        k.cx = 9.5;
        k.cy = 9.5;
        let r = plucker_raymap(&Extrinsics::identity(), &k, 5, 5).unwrap();
        assert!(r
            .embedding
            .slice(ndarray::s![3..6, .., ..])
            .iter()
            .all(|v| *v == 0.0));
        let d = [
            r.embedding[[0, 2, 2]],
            r.embedding[[1, 2, 2]],
            r.embedding[[2, 2, 2]],
        ];
        assert!(d[0].abs() < 1e-6 && d[1].abs() < 1e-6 && (d[2] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn zero_focal_rejected() {
        let mut k = Intrinsics::standard(16, 16);
        k.fx = 0.0;
        assert!(plucker_raymap(&Extrinsics::identity(), &k, 4, 4).is_err());
    }

    #[test]
    fn palette_hand_edges_cool_arm_white() {
        assert_eq!(palette::edge_color("shoulder", "elbow"), palette::ARM);
        assert_ne!(palette::edge_color("wrist", "tip2"), palette::ARM);
        assert_ne!(
            palette::edge_color("l_wrist", "l_tip2"),
            palette::edge_color("wrist", "tip2")
        );
        assert_eq!(palette::joint_color("tip3"), palette::MARKERS[3]);
    }
}
