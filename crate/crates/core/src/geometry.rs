//! Planar geometry: points, voxel grids and the link ellipse used by the
//! weight matrix.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("degenerate link: endpoints coincide at ({x}, {y})")]
    DegenerateLink { x: f64, y: f64 },
    #[error("ellipse width must be positive, got {0}")]
    InvalidWidth(f64),
    #[error("invalid voxel grid: {0}")]
    InvalidGrid(String),
    #[error("non-finite coordinate")]
    NonFinite,
}

/// A point in the horizontal plane, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2D {
    pub x: f64,
    pub y: f64,
}

impl Point2D {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(&self, other: &Point2D) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Distance from this point to the closed segment `a`–`b`.
    pub fn distance_to_segment(&self, a: &Point2D, b: &Point2D) -> f64 {
        let (dx, dy) = (b.x - a.x, b.y - a.y);
        let len2 = dx * dx + dy * dy;
        if len2 == 0.0 {
            return self.distance(a);
        }
        let t = (((self.x - a.x) * dx + (self.y - a.y) * dy) / len2).clamp(0.0, 1.0);
        self.distance(&Point2D::new(a.x + t * dx, a.y + t * dy))
    }
}

/// Axis-aligned rectangle `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: Point2D,
    pub max: Point2D,
}

impl Rect {
    pub fn new(min: Point2D, max: Point2D) -> Self {
        Self { min, max }
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn contains(&self, p: &Point2D) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }
}

/// Euclidean length of the link `tx`–`rx`.
pub fn link_distance(tx: Point2D, rx: Point2D) -> Result<f64, GeometryError> {
    if !tx.is_finite() || !rx.is_finite() {
        return Err(GeometryError::NonFinite);
    }
    let d = tx.distance(&rx);
    if d == 0.0 {
        return Err(GeometryError::DegenerateLink { x: tx.x, y: tx.y });
    }
    Ok(d)
}

/// A transmitter/receiver pair with its cached length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkGeometry {
    pub tx: Point2D,
    pub rx: Point2D,
    length: f64,
}

impl LinkGeometry {
    pub fn new(tx: Point2D, rx: Point2D) -> Result<Self, GeometryError> {
        let length = link_distance(tx, rx)?;
        Ok(Self { tx, rx, length })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn reversed(&self) -> Self {
        Self { tx: self.rx, rx: self.tx, length: self.length }
    }
}

/// True when `p` lies strictly inside the ellipse with foci at the link
/// endpoints and focal-distance sum `d_l + lambda`.
pub fn ellipse_contains(p: Point2D, link: &LinkGeometry, lambda: f64) -> bool {
    p.distance(&link.tx) + p.distance(&link.rx) < link.length + lambda
}

/// Analytic area of the link ellipse: semi-major `a = (d_l + lambda) / 2`,
/// semi-minor `b = sqrt(a^2 - (d_l / 2)^2)`.
pub fn ellipse_area(d_l: f64, lambda: f64) -> Result<f64, GeometryError> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(GeometryError::InvalidWidth(lambda));
    }
    let a = 0.5 * (d_l + lambda);
    let c = 0.5 * d_l;
    // a^2 - c^2 = (a - c)(a + c) avoids cancellation for thin ellipses.
    let b = ((a - c) * (a + c)).sqrt();
    Ok(PI * a * b)
}

/// Regular grid of square voxels, indexed row-major from `origin`
/// (index = iy * nx + ix).
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    origin: Point2D,
    voxel_size: f64,
    nx: usize,
    ny: usize,
    centers: Vec<Point2D>,
}

impl VoxelGrid {
    pub fn new(origin: Point2D, voxel_size: f64, nx: usize, ny: usize) -> Result<Self, GeometryError> {
        if !origin.is_finite() {
            return Err(GeometryError::NonFinite);
        }
        if !(voxel_size > 0.0) || !voxel_size.is_finite() {
            return Err(GeometryError::InvalidGrid(format!("voxel size {voxel_size}")));
        }
        if nx == 0 || ny == 0 {
            return Err(GeometryError::InvalidGrid(format!("{nx}x{ny} voxels")));
        }
        let centers = (0..ny)
            .flat_map(|iy| {
                (0..nx).map(move |ix| {
                    Point2D::new(
                        origin.x + (ix as f64 + 0.5) * voxel_size,
                        origin.y + (iy as f64 + 0.5) * voxel_size,
                    )
                })
            })
            .collect();
        Ok(Self { origin, voxel_size, nx, ny, centers })
    }

    /// Grid covering `bounds` with voxels of side `voxel_size`; partial
    /// voxels at the far edges are dropped.
    pub fn covering(bounds: &Rect, voxel_size: f64) -> Result<Self, GeometryError> {
        if !(voxel_size > 0.0) {
            return Err(GeometryError::InvalidGrid(format!("voxel size {voxel_size}")));
        }
        let nx = (bounds.width() / voxel_size + 1e-9).floor() as usize;
        let ny = (bounds.height() / voxel_size + 1e-9).floor() as usize;
        Self::new(bounds.min, voxel_size, nx, ny)
    }

    pub fn origin(&self) -> Point2D {
        self.origin
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn centers(&self) -> &[Point2D] {
        &self.centers
    }

    pub fn center(&self, index: usize) -> Point2D {
        self.centers[index]
    }

    pub fn diagonal(&self) -> f64 {
        self.voxel_size * std::f64::consts::SQRT_2
    }

    /// Index of the voxel containing `p`, if any.
    pub fn index_of(&self, p: Point2D) -> Option<usize> {
        let fx = (p.x - self.origin.x) / self.voxel_size;
        let fy = (p.y - self.origin.y) / self.voxel_size;
        if !(fx >= 0.0 && fy >= 0.0) {
            return None;
        }
        let (ix, iy) = (fx.floor() as usize, fy.floor() as usize);
        (ix < self.nx && iy < self.ny).then(|| iy * self.nx + ix)
    }
}
