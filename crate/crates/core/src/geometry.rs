//! Reference frames, pinhole projection onto the head plane and resampling of
//! image-space occupancy onto a metric grid.
//!
//! Conventions: the world frame is z-up. Camera frames are z-forward, x-right,
//! y-down. Image coordinates are continuous, pixel `(u, v)` covers
//! `[u, u + 1) x [v, v + 1)`.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::density::OccupancyGrid;
use crate::error::{Error, Result};

/// Orthonormality and determinant tolerance for rotation matrices.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Cell value for an occupied head-plane cell.
pub const CELL_OCCUPIED: u8 = 0;
/// Cell value for a people-free head-plane cell.
pub const CELL_FREE: u8 = 255;

/// A proper rigid motion `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidTransform("non-finite entry".into()));
        }
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        if ortho > ROTATION_TOLERANCE {
            return Err(Error::InvalidTransform(format!(
                "rotation is not orthonormal (max deviation {ortho:e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(Error::InvalidTransform(format!(
                "rotation determinant is {det}, expected +1"
            )));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Rotation about the z axis by `angle` radians followed by a translation.
    pub fn from_yaw(angle: f64, translation: Vector3<f64>) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            rotation: Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
            translation,
        }
    }

    /// Builds a transform from a translation and a unit quaternion given as
    /// `[qx, qy, qz, qw]`. The quaternion norm must be within 1e-6 of one.
    pub fn from_translation_quaternion(t: [f64; 3], q: [f64; 4]) -> Result<Self> {
        let [qx, qy, qz, qw] = q;
        let norm = (qx * qx + qy * qy + qz * qz + qw * qw).sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidTransform(format!(
                "quaternion norm {norm} is not unit"
            )));
        }
        let unit = UnitQuaternion::from_quaternion(Quaternion::new(qw, qx, qy, qz));
        Self::new(
            unit.to_rotation_matrix().into_inner(),
            Vector3::new(t[0], t[1], t[2]),
        )
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn then_after(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Origin of the source frame expressed in the target frame's inverse, i.e.
    /// for a world-to-camera transform this is the camera center in world.
    pub fn source_origin(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }
}

/// Composition that applies `b` then `a`.
pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    a.then_after(b)
}

/// Pinhole intrinsics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Square-pixel camera with the principal point at the image center and
    /// the given horizontal field of view in degrees.
    pub fn from_hfov(width: usize, height: usize, hfov_deg: f64) -> Result<Self> {
        if !(hfov_deg > 0.0 && hfov_deg < 180.0) {
            return Err(Error::InvalidParameter(format!(
                "horizontal field of view {hfov_deg} outside (0, 180)"
            )));
        }
        let f = (width as f64 / 2.0) / (hfov_deg.to_radians() / 2.0).tan();
        Self::new(f, f, width as f64 / 2.0, height as f64 / 2.0, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.width > 0
            && self.height > 0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid camera model {self:?}")))
        }
    }

    /// Nearest pixel containing the continuous image point, if inside the image.
    pub fn pixel_at(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        if x >= 0.0 && y >= 0.0 && x < self.width as f64 && y < self.height as f64 {
            Some((x.floor() as usize, y.floor() as usize))
        } else {
            None
        }
    }
}

/// Horizontal plane at average head height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadPlane {
    height: f64,
}

impl HeadPlane {
    pub const DEFAULT_HEIGHT: f64 = 1.7;

    pub fn new(height: f64) -> Result<Self> {
        if height > 0.0 && height.is_finite() {
            Ok(Self { height })
        } else {
            Err(Error::InvalidParameter(format!(
                "head plane height must be positive, got {height}"
            )))
        }
    }

    pub fn height(&self) -> f64 {
        self.height
    }
}

impl Default for HeadPlane {
    fn default() -> Self {
        Self {
            height: Self::DEFAULT_HEIGHT,
        }
    }
}

/// Axis-aligned world rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Roi {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Roi {
    /// Square `[0, side] x [0, side]`.
    pub fn square(side: f64) -> Self {
        Self {
            min_x: 0.0,
            min_y: 0.0,
            max_x: side,
            max_y: side,
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min_x && x <= self.max_x && y >= self.min_y && y <= self.max_y
    }

    pub fn clamp(&self, x: f64, y: f64) -> (f64, f64) {
        (x.clamp(self.min_x, self.max_x), y.clamp(self.min_y, self.max_y))
    }

    pub fn expanded(&self, margin: f64) -> Self {
        Self {
            min_x: self.min_x - margin,
            min_y: self.min_y - margin,
            max_x: self.max_x + margin,
            max_y: self.max_y + margin,
        }
    }

    pub fn intersect(&self, other: &Roi) -> Option<Roi> {
        let r = Roi {
            min_x: self.min_x.max(other.min_x),
            min_y: self.min_y.max(other.min_y),
            max_x: self.max_x.min(other.max_x),
            max_y: self.max_y.min(other.max_y),
        };
        (r.min_x < r.max_x && r.min_y < r.max_y).then_some(r)
    }
}

/// Circle on the head plane, world meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub x: f64,
    pub y: f64,
    pub r: f64,
}

impl Circle {
    pub fn new(x: f64, y: f64, r: f64) -> Self {
        Self { x, y, r }
    }

    pub fn area(&self) -> f64 {
        std::f64::consts::PI * self.r * self.r
    }

    pub fn center_distance(&self, x: f64, y: f64) -> f64 {
        (self.x - x).hypot(self.y - y)
    }
}

/// Metric raster on the head plane. Row index grows with world y, column
/// index with world x.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneGrid {
    origin_x: f64,
    origin_y: f64,
    cell_size: f64,
    rows: usize,
    cols: usize,
    values: Vec<u8>,
}

impl PlaneGrid {
    /// Grid with every cell set to `fill`.
    pub fn new(
        origin_x: f64,
        origin_y: f64,
        cell_size: f64,
        rows: usize,
        cols: usize,
        fill: u8,
    ) -> Result<Self> {
        Self::from_values(
            origin_x,
            origin_y,
            cell_size,
            rows,
            cols,
            vec![fill; rows.saturating_mul(cols)],
        )
    }

    pub fn from_values(
        origin_x: f64,
        origin_y: f64,
        cell_size: f64,
        rows: usize,
        cols: usize,
        values: Vec<u8>,
    ) -> Result<Self> {
        if !(cell_size > 0.0 && cell_size.is_finite()) || rows == 0 || cols == 0 {
            return Err(Error::InvalidParameter(format!(
                "grid needs positive cell size and extent (cell {cell_size}, {rows}x{cols})"
            )));
        }
        if values.len() != rows * cols {
            return Err(Error::InvalidParameter(format!(
                "grid has {} values, expected {}",
                values.len(),
                rows * cols
            )));
        }
        if values.iter().any(|&v| v != CELL_FREE && v != CELL_OCCUPIED) {
            return Err(Error::InvalidParameter("grid values must be 0 or 255".into()));
        }
        Ok(Self {
            origin_x,
            origin_y,
            cell_size,
            rows,
            cols,
            values,
        })
    }

    /// Free grid whose cell centers lie on the global lattice
    /// `((k + 0.5) * cell_size)` and whose extent covers `bounds`.
    pub fn covering(bounds: &Roi, cell_size: f64) -> Result<Self> {
        if !(cell_size > 0.0) {
            return Err(Error::InvalidParameter(format!("cell size {cell_size}")));
        }
        let c0 = (bounds.min_x / cell_size).floor();
        let c1 = (bounds.max_x / cell_size).ceil().max(c0 + 1.0);
        let r0 = (bounds.min_y / cell_size).floor();
        let r1 = (bounds.max_y / cell_size).ceil().max(r0 + 1.0);
        let cols = (c1 - c0) as usize;
        let rows = (r1 - r0) as usize;
        Self::new(
            (c0 + 0.5) * cell_size,
            (r0 + 0.5) * cell_size,
            cell_size,
            rows,
            cols,
            CELL_FREE,
        )
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn origin(&self) -> (f64, f64) {
        (self.origin_x, self.origin_y)
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.values[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: u8) {
        debug_assert!(value == CELL_FREE || value == CELL_OCCUPIED);
        self.values[row * self.cols + col] = value;
    }

    pub fn is_free(&self, row: usize, col: usize) -> bool {
        self.get(row, col) == CELL_FREE
    }

    pub fn fill(&mut self, value: u8) {
        self.values.fill(value);
    }

    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin_x + col as f64 * self.cell_size,
            self.origin_y + row as f64 * self.cell_size,
        )
    }

    /// Cell whose square contains the world point.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let c = ((x - self.origin_x) / self.cell_size + 0.5).floor();
        let r = ((y - self.origin_y) / self.cell_size + 0.5).floor();
        if c >= 0.0 && r >= 0.0 && (c as usize) < self.cols && (r as usize) < self.rows {
            Some((r as usize, c as usize))
        } else {
            None
        }
    }

    /// World extent of the grid (outer cell edges).
    pub fn bounds(&self) -> Roi {
        let h = self.cell_size / 2.0;
        Roi {
            min_x: self.origin_x - h,
            min_y: self.origin_y - h,
            max_x: self.origin_x + (self.cols - 1) as f64 * self.cell_size + h,
            max_y: self.origin_y + (self.rows - 1) as f64 * self.cell_size + h,
        }
    }

    pub fn occupied_count(&self) -> usize {
        self.values.iter().filter(|&&v| v == CELL_OCCUPIED).count()
    }

    /// Marks every cell whose center lies outside `roi` as occupied.
    pub fn occupy_outside(&mut self, roi: &Roi) {
        for r in 0..self.rows {
            for c in 0..self.cols {
                let (x, y) = self.cell_center(r, c);
                if !roi.contains(x, y) {
                    self.set(r, c, CELL_OCCUPIED);
                }
            }
        }
    }

    /// Marks every cell within Chebyshev distance `reach` of a cell occupied in
    /// `mask` as occupied. `mask` must have the same shape.
    pub fn occupy_near(&mut self, mask: &PlaneGrid, reach: usize) {
        assert_eq!((mask.rows, mask.cols), (self.rows, self.cols), "mask shape");
        let (rows, cols) = (self.rows, self.cols);
        let mut horizontal = vec![false; rows * cols];
        for r in 0..rows {
            let row = &mask.values[r * cols..(r + 1) * cols];
            for c in 0..cols {
                let (c0, c1) = (c.saturating_sub(reach), (c + reach + 1).min(cols));
                horizontal[r * cols + c] = row[c0..c1].contains(&CELL_OCCUPIED);
            }
        }
        for c in 0..cols {
            for r in 0..rows {
                let (r0, r1) = (r.saturating_sub(reach), (r + reach + 1).min(rows));
                if (r0..r1).any(|rr| horizontal[rr * cols + c]) {
                    self.values[r * cols + c] = CELL_OCCUPIED;
                }
            }
        }
    }

    /// Marks every cell whose center lies within `circle` (inclusive) as occupied.
    pub fn occupy_disk(&mut self, circle: &Circle) {
        for (r, c) in self.cells_in_disk(circle) {
            self.set(r, c, CELL_OCCUPIED);
        }
    }

    /// Visits the cells whose centers lie within `circle` (inclusive).
    pub fn cells_in_disk(&self, circle: &Circle) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let (r0, r1, c0, c1) = self.disk_window(circle);
        for r in r0..r1 {
            for c in c0..c1 {
                let (x, y) = self.cell_center(r, c);
                if (x - circle.x).powi(2) + (y - circle.y).powi(2) <= circle.r * circle.r {
                    out.push((r, c));
                }
            }
        }
        out
    }

    fn disk_window(&self, circle: &Circle) -> (usize, usize, usize, usize) {
        let span = |center: f64, origin: f64, n: usize| {
            let lo = ((center - circle.r - origin) / self.cell_size).floor().max(0.0);
            let hi = ((center + circle.r - origin) / self.cell_size).ceil() + 1.0;
            let hi = hi.clamp(0.0, n as f64);
            (lo.min(n as f64) as usize, hi as usize)
        };
        let (r0, r1) = span(circle.y, self.origin_y, self.rows);
        let (c0, c1) = span(circle.x, self.origin_x, self.cols);
        (r0, r1, c0, c1)
    }
}

/// Result of projecting a world point through the camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImagePoint {
    pub x: f64,
    pub y: f64,
    /// Scale factor, equal to the camera-frame depth of the point.
    pub lambda: f64,
}

/// Projects an arbitrary world point.
pub fn project_point(
    p_world: &Vector3<f64>,
    world_to_camera: &RigidTransform,
    cam: &CameraModel,
) -> Result<ImagePoint> {
    let pc = world_to_camera.apply(p_world);
    let lambda = pc.z;
    if !(lambda > 0.0) {
        return Err(Error::BehindCamera(lambda));
    }
    Ok(ImagePoint {
        x: cam.fx * pc.x / lambda + cam.cx,
        y: cam.fy * pc.y / lambda + cam.cy,
        lambda,
    })
}

/// Projects a point lying on the head plane into the image.
pub fn project_plane_point(
    p_world: &Vector3<f64>,
    plane: &HeadPlane,
    world_to_camera: &RigidTransform,
    cam: &CameraModel,
) -> Result<ImagePoint> {
    if (p_world.z - plane.height()).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "point z {} is not on the head plane at {}",
            p_world.z,
            plane.height()
        )));
    }
    project_point(p_world, world_to_camera, cam)
}

/// Intersects the viewing ray through image point `(x, y)` with the head plane.
pub fn back_project_pixel(
    x: f64,
    y: f64,
    world_to_camera: &RigidTransform,
    cam: &CameraModel,
    plane: &HeadPlane,
) -> Result<(f64, f64)> {
    let center = world_to_camera.source_origin();
    if center.z <= plane.height() {
        return Err(Error::DegenerateView(format!(
            "camera at z = {} is not above the head plane at {}",
            center.z,
            plane.height()
        )));
    }
    let ray_cam = Vector3::new((x - cam.cx) / cam.fx, (y - cam.cy) / cam.fy, 1.0);
    let ray = world_to_camera.rotation().transpose() * ray_cam;
    if !(ray.z < 0.0) {
        return Err(Error::DegenerateView(format!(
            "ray through ({x}, {y}) does not descend to the head plane"
        )));
    }
    let s = (plane.height() - center.z) / ray.z;
    Ok((center.x + s * ray.x, center.y + s * ray.y))
}

/// Head-plane footprint of the four image corners, as a bounding rectangle.
pub fn image_footprint(
    cam: &CameraModel,
    world_to_camera: &RigidTransform,
    plane: &HeadPlane,
) -> Result<Roi> {
    let (w, h) = (cam.width as f64, cam.height as f64);
    let mut bounds = Roi {
        min_x: f64::INFINITY,
        min_y: f64::INFINITY,
        max_x: f64::NEG_INFINITY,
        max_y: f64::NEG_INFINITY,
    };
    for (u, v) in [(0.0, 0.0), (w, 0.0), (0.0, h), (w, h)] {
        let (x, y) = back_project_pixel(u, v, world_to_camera, cam, plane)?;
        bounds.min_x = bounds.min_x.min(x);
        bounds.min_y = bounds.min_y.min(y);
        bounds.max_x = bounds.max_x.max(x);
        bounds.max_y = bounds.max_y.max(y);
    }
    Ok(bounds)
}

/// Free grid covering the image footprint on the head plane plus `margin`.
pub fn grid_footprint(
    cam: &CameraModel,
    world_to_camera: &RigidTransform,
    plane: &HeadPlane,
    cell_size: f64,
    margin: f64,
) -> Result<PlaneGrid> {
    if !(margin >= 0.0) {
        return Err(Error::InvalidParameter(format!("margin {margin}")));
    }
    let bounds = image_footprint(cam, world_to_camera, plane)?.expanded(margin);
    PlaneGrid::covering(&bounds, cell_size)
}

/// Copies the nearest-pixel occupancy value into every grid cell. Cells that
/// do not image inside the frame are occupied.
pub fn sample_occupancy_to_plane(
    occupancy: &OccupancyGrid,
    grid: &PlaneGrid,
    world_to_camera: &RigidTransform,
    cam: &CameraModel,
    plane: &HeadPlane,
) -> PlaneGrid {
    debug_assert_eq!(occupancy.width(), cam.width);
    debug_assert_eq!(occupancy.height(), cam.height);
    let mut out = grid.clone();
    for r in 0..grid.rows() {
        for c in 0..grid.cols() {
            let (x, y) = grid.cell_center(r, c);
            let p = Vector3::new(x, y, plane.height());
            let value = project_point(&p, world_to_camera, cam)
                .ok()
                .and_then(|ip| cam.pixel_at(ip.x, ip.y))
                .filter(|&(u, v)| u < occupancy.width() && v < occupancy.height())
                .map_or(CELL_OCCUPIED, |(u, v)| occupancy.get(u, v));
            out.set(r, c, value);
        }
    }
    out
}
