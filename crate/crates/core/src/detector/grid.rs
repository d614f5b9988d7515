use std::fmt;
use std::str::FromStr;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::TriMesh;

/// Direction the detection rays travel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum ViewAxis {
    #[serde(rename = "+x")]
    PosX,
    #[serde(rename = "-x")]
    NegX,
    #[serde(rename = "+y")]
    PosY,
    #[serde(rename = "-y")]
    NegY,
    #[default]
    #[serde(rename = "+z")]
    PosZ,
    #[serde(rename = "-z")]
    NegZ,
}

impl ViewAxis {
    pub const ALL: [ViewAxis; 6] = [
        ViewAxis::PosX,
        ViewAxis::NegX,
        ViewAxis::PosY,
        ViewAxis::NegY,
        ViewAxis::PosZ,
        ViewAxis::NegZ,
    ];

    pub fn direction(self) -> Vector3<f64> {
        match self {
            ViewAxis::PosX => Vector3::x(),
            ViewAxis::NegX => -Vector3::x(),
            ViewAxis::PosY => Vector3::y(),
            ViewAxis::NegY => -Vector3::y(),
            ViewAxis::PosZ => Vector3::z(),
            ViewAxis::NegZ => -Vector3::z(),
        }
    }

    /// Screen coordinates `(u, v)` and depth along the ray. The screen axes
    /// satisfy `u x v = direction`, so a face is front-facing exactly when its
    /// projected signed area is negative.
    #[inline]
    pub fn project(self, p: &Point3<f64>) -> (f64, f64, f64) {
        match self {
            ViewAxis::PosX => (p.y, p.z, p.x),
            ViewAxis::NegX => (p.z, p.y, -p.x),
            ViewAxis::PosY => (p.z, p.x, p.y),
            ViewAxis::NegY => (p.x, p.z, -p.y),
            ViewAxis::PosZ => (p.x, p.y, p.z),
            ViewAxis::NegZ => (p.y, p.x, -p.z),
        }
    }
}

impl fmt::Display for ViewAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ViewAxis::PosX => "+x",
            ViewAxis::NegX => "-x",
            ViewAxis::PosY => "+y",
            ViewAxis::NegY => "-y",
            ViewAxis::PosZ => "+z",
            ViewAxis::NegZ => "-z",
        };
        f.write_str(s)
    }
}

impl FromStr for ViewAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "+x" | "x" => ViewAxis::PosX,
            "-x" => ViewAxis::NegX,
            "+y" | "y" => ViewAxis::PosY,
            "-y" => ViewAxis::NegY,
            "+z" | "z" => ViewAxis::PosZ,
            "-z" => ViewAxis::NegZ,
            other => {
                return Err(Error::InvalidParameter(format!(
                    "unknown view axis {other:?} (expected one of +x -x +y -y +z -z)"
                )))
            }
        })
    }
}

/// Number of detection rays as rows x columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "[usize; 2]", from = "[usize; 2]")]
pub struct Rays {
    pub rows: usize,
    pub cols: usize,
}

impl Rays {
    pub const fn new(rows: usize, cols: usize) -> Self {
        Rays { rows, cols }
    }

    pub const fn square(n: usize) -> Self {
        Rays { rows: n, cols: n }
    }

    pub fn count(&self) -> usize {
        self.rows * self.cols
    }
}

impl Default for Rays {
    fn default() -> Self {
        Rays::square(512)
    }
}

impl From<Rays> for [usize; 2] {
    fn from(r: Rays) -> Self {
        [r.rows, r.cols]
    }
}

impl From<[usize; 2]> for Rays {
    fn from(a: [usize; 2]) -> Self {
        Rays::new(a[0], a[1])
    }
}

impl fmt::Display for Rays {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

/// `HxW`, or a single integer for a square grid.
impl FromStr for Rays {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("bad ray grid {s:?} (expected HxW or N)"));
        let s = s.trim();
        let rays = match s.split_once(['x', 'X']) {
            Some((h, w)) => Rays::new(
                h.trim().parse().map_err(|_| bad())?,
                w.trim().parse().map_err(|_| bad())?,
            ),
            None => Rays::square(s.parse().map_err(|_| bad())?),
        };
        if rays.rows == 0 || rays.cols == 0 {
            return Err(bad());
        }
        Ok(rays)
    }
}

/// Orthographic screen: pixel `(row, col)` emits a ray from its centre
/// `origin + ((col + 0.5) * pixel_size, (row + 0.5) * pixel_size)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionGrid {
    pub rows: usize,
    pub cols: usize,
    pub view_axis: ViewAxis,
    pub origin: [f64; 2],
    pub pixel_size: f64,
}

impl DetectionGrid {
    pub fn num_pixels(&self) -> usize {
        self.rows * self.cols
    }

    /// Continuous pixel coordinates in which pixel centres sit on integers.
    #[inline]
    pub fn to_pixel(&self, u: f64, v: f64) -> (f64, f64) {
        (
            (u - self.origin[0]) / self.pixel_size - 0.5,
            (v - self.origin[1]) / self.pixel_size - 0.5,
        )
    }

    pub fn pixel_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin[0] + (col as f64 + 0.5) * self.pixel_size,
            self.origin[1] + (row as f64 + 0.5) * self.pixel_size,
        )
    }

    /// Whether every projected vertex keeps at least `margin` pixels from the
    /// screen border.
    pub fn contains_with_margin(&self, mesh: &TriMesh, margin: f64) -> bool {
        let w = self.cols as f64 * self.pixel_size;
        let h = self.rows as f64 * self.pixel_size;
        let m = margin * self.pixel_size;
        mesh.vertices.iter().all(|p| {
            let (u, v, _) = self.view_axis.project(p);
            let (du, dv) = (u - self.origin[0], v - self.origin[1]);
            du > m && du < w - m && dv > m && dv < h - m
        })
    }
}

/// Square-pixel screen covering the projected bounding box with a two-pixel
/// margin on the tighter axis.
pub fn fit_grid(mesh: &TriMesh, rays: Rays, view_axis: ViewAxis) -> Result<DetectionGrid> {
    if mesh.is_empty() {
        return Err(Error::EmptyMesh);
    }
    if rays.rows < 4 || rays.cols < 4 {
        return Err(Error::InvalidParameter(format!(
            "ray grid {rays} too small (need at least 4x4)"
        )));
    }
    let (mut umin, mut umax, mut vmin, mut vmax) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for p in &mesh.vertices {
        let (u, v, _) = view_axis.project(p);
        umin = umin.min(u);
        umax = umax.max(u);
        vmin = vmin.min(v);
        vmax = vmax.max(v);
    }
    let extent = (umax - umin).max(vmax - vmin);
    let mut pixel_size = extent / (rays.rows.min(rays.cols) - 4) as f64;
    if !(pixel_size > 0.0) || !pixel_size.is_finite() {
        // Every vertex projects to one point; any positive size works.
        pixel_size = 1.0;
    }
    let cu = 0.5 * (umin + umax);
    let cv = 0.5 * (vmin + vmax);
    Ok(DetectionGrid {
        rows: rays.rows,
        cols: rays.cols,
        view_axis,
        origin: [
            cu - 0.5 * rays.cols as f64 * pixel_size,
            cv - 0.5 * rays.rows as f64 * pixel_size,
        ],
        pixel_size,
    })
}
