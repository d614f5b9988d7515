//! Deterministic closed-mesh generators used as fixtures.

use std::collections::HashMap;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::TriMesh;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeshKind {
    /// Subdivided icosahedron centred at the origin.
    Sphere { radius: f64, subdivisions: u32 },
    /// Axis-aligned box centred at the origin.
    Box { extents: [f64; 3] },
    /// Cylinder of `length` along +y with hemispherical caps.
    Capsule {
        radius: f64,
        length: f64,
        segments: usize,
    },
    BentTube(BentTube),
}

/// A hairpin: straight leg, circular bend of `arc_angle_deg`, straight leg,
/// lying in the xy-plane. Past 180 degrees the legs converge and, with the
/// fixed proportions used here (bend radius 2.5 r, legs 10 r), their ends
/// interpenetrate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BentTube {
    pub radius: f64,
    pub arc_angle_deg: f64,
    /// Number of ring intervals along the centreline.
    pub segments: usize,
}

impl BentTube {
    pub const BEND_RADIUS: f64 = 2.5;
    pub const LEG_LENGTH: f64 = 10.0;

    /// Vertices per ring: a quarter of `segments` rounded to a multiple of 4,
    /// which keeps the quads close to square. 64 segments give 16.
    pub fn ring_segments(&self) -> usize {
        (4 * ((self.segments + 8) / 16)).max(8)
    }
}

pub fn generate(kind: &MeshKind) -> Result<TriMesh> {
    match *kind {
        MeshKind::Sphere {
            radius,
            subdivisions,
        } => {
            positive("radius", radius)?;
            if subdivisions > 7 {
                return Err(Error::InvalidParameter(format!(
                    "subdivisions must be <= 7, got {subdivisions}"
                )));
            }
            Ok(icosphere(radius, subdivisions))
        }
        MeshKind::Box { extents } => {
            for e in extents {
                positive("extent", e)?;
            }
            Ok(make_box(extents))
        }
        MeshKind::Capsule {
            radius,
            length,
            segments,
        } => {
            positive("radius", radius)?;
            positive("length", length)?;
            at_least("segments", segments, 3)?;
            Ok(capsule(radius, length, segments))
        }
        MeshKind::BentTube(t) => {
            positive("radius", t.radius)?;
            if !(t.arc_angle_deg > 0.0 && t.arc_angle_deg < 360.0) {
                return Err(Error::InvalidParameter(format!(
                    "arc angle must lie in (0, 360) degrees, got {}",
                    t.arc_angle_deg
                )));
            }
            at_least("segments", t.segments, 2)?;
            Ok(bent_tube(&t))
        }
    }
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive, got {x}")))
    }
}

fn at_least(name: &str, x: usize, min: usize) -> Result<()> {
    if x >= min {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be >= {min}, got {x}")))
    }
}

fn icosphere(radius: f64, subdivisions: u32) -> TriMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vector3<f64>> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|c| Vector3::from(*c).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Vector3<f64>>| -> usize {
            let key = super::ordered(a, b);
            *cache.entry(key).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for &[a, b, c] in &faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    TriMesh::new(
        verts.into_iter().map(|v| Point3::from(v * radius)).collect(),
        faces,
    )
}

fn make_box(extents: [f64; 3]) -> TriMesh {
    let h = Vector3::from(extents) * 0.5;
    let vertices = (0..8)
        .map(|i| {
            let sx = if i & 1 == 1 { h.x } else { -h.x };
            let sy = if i & 2 == 2 { h.y } else { -h.y };
            let sz = if i & 4 == 4 { h.z } else { -h.z };
            Point3::new(sx, sy, sz)
        })
        .collect();
    // bit0 = +x, bit1 = +y, bit2 = +z
    let faces = vec![
        [0, 2, 3],
        [0, 3, 1], // -z
        [4, 5, 7],
        [4, 7, 6], // +z
        [0, 1, 5],
        [0, 5, 4], // -y
        [2, 6, 7],
        [2, 7, 3], // +y
        [0, 4, 6],
        [0, 6, 2], // -x
        [1, 3, 7],
        [1, 7, 5], // +x
    ];
    TriMesh::new(vertices, faces)
}

/// Cross-section of a tube: points are `center + cos(phi) u + sin(phi) v`,
/// with `u x v` pointing along the tube.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ring {
    pub center: Point3<f64>,
    pub u: Vector3<f64>,
    pub v: Vector3<f64>,
}

/// A closed tube: a sequence of rings capped by two pole vertices.
#[derive(Debug, Clone)]
pub struct Tube {
    pub rings: Vec<Ring>,
    pub start_pole: Point3<f64>,
    pub end_pole: Point3<f64>,
    pub segments: usize,
}

/// Sample of a tube centreline: position, unit tangent and unit in-plane
/// normal (the cross-section's `u` direction).
#[derive(Debug, Clone, Copy)]
pub struct PathSample {
    pub center: Point3<f64>,
    pub tangent: Vector3<f64>,
    pub normal: Vector3<f64>,
}

impl Tube {
    /// Sweeps an elliptical cross-section along `path` and closes both ends
    /// with half-ellipsoid caps of depth `cap_depth` made of `cap_rings` rings.
    pub fn swept(
        path: &[PathSample],
        radius_u: f64,
        radius_v: f64,
        cap_depth: f64,
        segments: usize,
        cap_rings: usize,
    ) -> Tube {
        assert!(path.len() >= 2 && segments >= 3 && cap_rings >= 1);
        let ring_at = |s: &PathSample, scale: f64, shift: f64| {
            let binormal = s.tangent.cross(&s.normal);
            Ring {
                center: s.center + s.tangent * shift,
                u: s.normal * radius_u * scale,
                v: binormal * radius_v * scale,
            }
        };
        let first = path[0];
        let last = path[path.len() - 1];
        let mut rings = Vec::with_capacity(path.len() + 2 * cap_rings);
        for j in 1..cap_rings {
            let a = std::f64::consts::FRAC_PI_2 * j as f64 / cap_rings as f64;
            rings.push(ring_at(&first, a.sin(), -cap_depth * a.cos()));
        }
        rings.extend(path.iter().map(|s| ring_at(s, 1.0, 0.0)));
        for j in (1..cap_rings).rev() {
            let a = std::f64::consts::FRAC_PI_2 * j as f64 / cap_rings as f64;
            rings.push(ring_at(&last, a.sin(), cap_depth * a.cos()));
        }
        Tube {
            rings,
            start_pole: first.center - first.tangent * cap_depth,
            end_pole: last.center + last.tangent * cap_depth,
            segments,
        }
    }

    /// Ring-major vertex layout: pole, rings (each `segments` vertices), pole.
    pub fn ring_vertex(&self, ring: usize, k: usize) -> usize {
        1 + ring * self.segments + k % self.segments
    }

    pub fn to_mesh(&self) -> TriMesh {
        let s = self.segments;
        let nr = self.rings.len();
        let mut vertices = Vec::with_capacity(nr * s + 2);
        vertices.push(self.start_pole);
        for ring in &self.rings {
            for k in 0..s {
                let phi = std::f64::consts::TAU * k as f64 / s as f64;
                vertices.push(ring.center + ring.u * phi.cos() + ring.v * phi.sin());
            }
        }
        vertices.push(self.end_pole);
        let end = vertices.len() - 1;
        let mut faces = Vec::with_capacity(2 * s * nr);
        for k in 0..s {
            faces.push([0, self.ring_vertex(0, k + 1), self.ring_vertex(0, k)]);
        }
        for r in 0..nr - 1 {
            for k in 0..s {
                let a = self.ring_vertex(r, k);
                let b = self.ring_vertex(r, k + 1);
                let c = self.ring_vertex(r + 1, k + 1);
                let d = self.ring_vertex(r + 1, k);
                faces.push([a, b, c]);
                faces.push([a, c, d]);
            }
        }
        for k in 0..s {
            faces.push([
                end,
                self.ring_vertex(nr - 1, k),
                self.ring_vertex(nr - 1, k + 1),
            ]);
        }
        TriMesh::new(vertices, faces)
    }
}

/// Samples along a straight segment at the given arc-length stations.
pub(crate) fn straight_path(
    start: Point3<f64>,
    dir: Vector3<f64>,
    normal: Vector3<f64>,
    stations: &[f64],
) -> Vec<PathSample> {
    let tangent = dir.normalize();
    stations
        .iter()
        .map(|&s| PathSample {
            center: start + tangent * s,
            tangent,
            normal,
        })
        .collect()
}

fn capsule(radius: f64, length: f64, segments: usize) -> TriMesh {
    let spacing = std::f64::consts::TAU * radius / segments as f64;
    let intervals = ((length / spacing).round() as usize).max(1);
    let stations: Vec<f64> = (0..=intervals)
        .map(|i| length * i as f64 / intervals as f64)
        .collect();
    let path = straight_path(
        Point3::new(0.0, -length / 2.0, 0.0),
        Vector3::y(),
        Vector3::z(),
        &stations,
    );
    Tube::swept(&path, radius, radius, radius, segments, (segments / 4).max(2)).to_mesh()
}

fn bent_tube(t: &BentTube) -> TriMesh {
    let r = t.radius;
    let bend = BentTube::BEND_RADIUS * r;
    let leg = BentTube::LEG_LENGTH * r;
    let alpha = t.arc_angle_deg.to_radians();
    let (phi_start, phi_end) = (-alpha / 2.0, alpha / 2.0);
    let arc_len = bend * alpha;
    let total = 2.0 * leg + arc_len;

    let arc_point = |phi: f64| Point3::new(bend * phi.cos(), bend * phi.sin(), 0.0);
    let arc_tangent = |phi: f64| Vector3::new(-phi.sin(), phi.cos(), 0.0);
    let sample = |s: f64| -> (Point3<f64>, Vector3<f64>) {
        if s <= leg {
            let tan = arc_tangent(phi_start);
            (arc_point(phi_start) - tan * (leg - s), tan)
        } else if s <= leg + arc_len {
            let phi = phi_start + (s - leg) / bend;
            (arc_point(phi), arc_tangent(phi))
        } else {
            let tan = arc_tangent(phi_end);
            (arc_point(phi_end) + tan * (s - leg - arc_len), tan)
        }
    };
    let path: Vec<PathSample> = (0..=t.segments)
        .map(|i| {
            let (center, tangent) = sample(total * i as f64 / t.segments as f64);
            PathSample {
                center,
                tangent,
                normal: Vector3::z().cross(&tangent),
            }
        })
        .collect();
    let segs = t.ring_segments();
    Tube::swept(&path, r, r, r, segs, segs / 4).to_mesh()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icosphere_counts() {
        for (sub, v, f) in [(0, 12, 20), (1, 42, 80), (3, 642, 1280), (4, 2562, 5120)] {
            let m = generate(&MeshKind::Sphere {
                radius: 1.0,
                subdivisions: sub,
            })
            .unwrap();
            assert_eq!((m.num_vertices(), m.num_faces()), (v, f));
            assert!(m.signed_volume() > 0.0);
            assert!(m.validate().is_valid());
        }
    }

    #[test]
    fn box_volume() {
        let m = generate(&MeshKind::Box {
            extents: [1.0, 1.0, 1.0],
        })
        .unwrap();
        assert!((m.signed_volume() - 1.0).abs() < 1e-12);
        let m = generate(&MeshKind::Box {
            extents: [2.0, 3.0, 0.5],
        })
        .unwrap();
        assert!((m.signed_volume() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn capsule_is_closed_and_outward() {
        let m = generate(&MeshKind::Capsule {
            radius: 0.5,
            length: 2.0,
            segments: 24,
        })
        .unwrap();
        assert!(m.validate().is_valid(), "{}", m.validate());
        let exact = std::f64::consts::PI * 0.25 * 2.0 + 4.0 / 3.0 * std::f64::consts::PI * 0.125;
        let v = m.signed_volume();
        assert!(v > 0.0 && (v - exact).abs() / exact < 0.05, "{v} vs {exact}");
    }

    #[test]
    fn bent_tube_is_valid() {
        for angle in [90.0, 180.0, 200.0] {
            let m = generate(&MeshKind::BentTube(BentTube {
                radius: 0.2,
                arc_angle_deg: angle,
                segments: 64,
            }))
            .unwrap();
            assert!(m.validate().is_valid());
            assert!(m.signed_volume() > 0.0);
        }
    }

    #[test]
    fn parameter_errors() {
        assert!(generate(&MeshKind::Sphere {
            radius: 1.0,
            subdivisions: 8
        })
        .is_err());
        assert!(generate(&MeshKind::Sphere {
            radius: -1.0,
            subdivisions: 1
        })
        .is_err());
        assert!(generate(&MeshKind::Box {
            extents: [1.0, 0.0, 1.0]
        })
        .is_err());
        assert!(generate(&MeshKind::BentTube(BentTube {
            radius: 0.2,
            arc_angle_deg: 400.0,
            segments: 10
        }))
        .is_err());
    }

    #[test]
    fn deterministic() {
        let k = MeshKind::BentTube(BentTube {
            radius: 0.2,
            arc_angle_deg: 200.0,
            segments: 32,
        });
        assert_eq!(generate(&k).unwrap(), generate(&k).unwrap());
    }
}
