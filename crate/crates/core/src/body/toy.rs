//! A procedurally built stand-in body: capsule torso, sphere head, tube limbs.
//!
//! Every part is its own closed component and the parts do not touch at rest,
//! so the zero pose is free of intersection. Each joint sits exactly on a ring
//! of its tube (or at the head's centre), and the ring's vertices share one
//! weight row, so the ring centroid follows the joint exactly under any pose.

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::{Joint, SkinnedModel};
use crate::error::{Error, Result};
use crate::mesh::{generate, straight_path, MeshKind, TriMesh, Tube};

/// Tessellation controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BodyConfig {
    /// Vertices per limb ring, 8..=32.
    pub limb_segments: usize,
    /// Vertices per torso ring, 8..=64.
    pub torso_segments: usize,
    /// Head icosphere subdivisions, 1..=4.
    pub head_subdivisions: u32,
    /// Target distance between rings, 0.01..=0.1.
    pub station_spacing: f64,
}

impl Default for BodyConfig {
    fn default() -> Self {
        BodyConfig {
            limb_segments: 16,
            torso_segments: 32,
            head_subdivisions: 3,
            station_spacing: 0.02,
        }
    }
}

pub const MIN_FACES: usize = 1_000;
pub const MAX_FACES: usize = 15_000;

// name, parent, rest position, bend axis
type JointDef = (&'static str, Option<usize>, [f64; 3], [f64; 3]);

const JOINTS: [JointDef; 15] = [
    ("pelvis", None, [0.0, 0.0, 0.0], [1.0, 0.0, 0.0]),
    ("spine", Some(0), [0.0, 0.30, 0.0], [1.0, 0.0, 0.0]),
    ("head", Some(1), [0.0, 0.82, 0.0], [1.0, 0.0, 0.0]),
    ("l_shoulder", Some(1), [0.23, 0.50, 0.0], [0.0, 0.0, 1.0]),
    ("l_elbow", Some(3), [0.50, 0.50, 0.0], [0.0, 0.0, 1.0]),
    ("l_wrist", Some(4), [0.75, 0.50, 0.0], [0.0, 0.0, 1.0]),
    ("r_shoulder", Some(1), [-0.23, 0.50, 0.0], [0.0, 0.0, -1.0]),
    ("r_elbow", Some(6), [-0.50, 0.50, 0.0], [0.0, 0.0, -1.0]),
    ("r_wrist", Some(7), [-0.75, 0.50, 0.0], [0.0, 0.0, -1.0]),
    // Hips flex forward (+z is the front), knees backward.
    ("l_hip", Some(0), [0.09, -0.28, 0.0], [-1.0, 0.0, 0.0]),
    ("l_knee", Some(9), [0.09, -0.68, 0.0], [1.0, 0.0, 0.0]),
    ("l_ankle", Some(10), [0.09, -1.08, 0.0], [1.0, 0.0, 0.0]),
    ("r_hip", Some(0), [-0.09, -0.28, 0.0], [-1.0, 0.0, 0.0]),
    ("r_knee", Some(12), [-0.09, -0.68, 0.0], [1.0, 0.0, 0.0]),
    ("r_ankle", Some(13), [-0.09, -1.08, 0.0], [1.0, 0.0, 0.0]),
];

const HEAD: usize = 2;
const HEAD_RADIUS: f64 = 0.12;

/// A straight tube whose vertices blend between consecutive bones along
/// its axis.
struct Part {
    start: Point3<f64>,
    dir: Vector3<f64>,
    normal: Vector3<f64>,
    length: f64,
    radius: f64,
    /// Bones in order along the axis, each with the arc-length of its joint.
    bones: Vec<(usize, f64)>,
    /// Arc-length interval over which bone `k` hands over to bone `k + 1`.
    blends: Vec<(f64, f64)>,
}

impl Part {
    fn weights(&self, s: f64) -> Vec<(usize, f64)> {
        for (k, &(lo, hi)) in self.blends.iter().enumerate() {
            if s <= lo {
                return vec![(self.bones[k].0, 1.0)];
            }
            if s < hi {
                let t = smoothstep((s - lo) / (hi - lo));
                return vec![(self.bones[k].0, 1.0 - t), (self.bones[k + 1].0, t)];
            }
        }
        vec![(self.bones.last().unwrap().0, 1.0)]
    }

    fn stations(&self, spacing: f64) -> Vec<f64> {
        let mut fixed = vec![0.0, self.length];
        fixed.extend(self.bones.iter().map(|b| b.1));
        for &(lo, hi) in &self.blends {
            fixed.extend([lo, hi]);
        }
        fixed.sort_by(f64::total_cmp);
        fixed.dedup();
        let mut out = vec![fixed[0]];
        for w in fixed.windows(2) {
            let n = ((w[1] - w[0]) / spacing).ceil().max(1.0) as usize;
            out.extend((1..=n).map(|i| w[0] + (w[1] - w[0]) * i as f64 / n as f64));
        }
        // Keep the joint stations exact.
        for s in &mut out {
            if let Some(f) = fixed.iter().find(|f| (**f - *s).abs() < 1e-12) {
                *s = *f;
            }
        }
        out
    }
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn parts() -> Vec<(Part, usize)> {
    let mut out = Vec::new();
    // Torso: pelvis below, spine above, 0.14 radius.
    out.push((
        Part {
            start: Point3::new(0.0, -0.05, 0.0),
            dir: Vector3::y(),
            normal: Vector3::z(),
            length: 0.55,
            radius: 0.14,
            bones: vec![(0, 0.05), (1, 0.35)],
            blends: vec![(0.15, 0.25)],
        },
        0,
    ));
    for (side, base) in [(1.0, 3), (-1.0, 6)] {
        out.push((
            Part {
                start: Point3::new(side * 0.215, 0.5, 0.0),
                dir: Vector3::x() * side,
                normal: Vector3::z(),
                length: 0.585,
                radius: 0.045,
                bones: vec![(base, 0.015), (base + 1, 0.285), (base + 2, 0.535)],
                blends: vec![(0.215, 0.355), (0.515, 0.555)],
            },
            1,
        ));
    }
    for (side, base) in [(1.0, 9), (-1.0, 12)] {
        out.push((
            Part {
                start: Point3::new(side * 0.09, -0.26, 0.0),
                dir: -Vector3::y(),
                normal: Vector3::z(),
                length: 0.88,
                radius: 0.06,
                bones: vec![(base, 0.02), (base + 1, 0.42), (base + 2, 0.82)],
                blends: vec![(0.37, 0.47), (0.79, 0.85)],
            },
            1,
        ));
    }
    out
}

fn check_config(c: &BodyConfig) -> Result<()> {
    let bad = |m: String| Err(Error::InvalidParameter(m));
    if !(8..=32).contains(&c.limb_segments) {
        return bad(format!("limb_segments must be in 8..=32, got {}", c.limb_segments));
    }
    if !(8..=64).contains(&c.torso_segments) {
        return bad(format!("torso_segments must be in 8..=64, got {}", c.torso_segments));
    }
    if !(1..=4).contains(&c.head_subdivisions) {
        return bad(format!("head_subdivisions must be in 1..=4, got {}", c.head_subdivisions));
    }
    if !(0.01..=0.1).contains(&c.station_spacing) {
        return bad(format!("station_spacing must be in [0.01, 0.1], got {}", c.station_spacing));
    }
    Ok(())
}

pub fn build_toy_body(config: &BodyConfig) -> Result<SkinnedModel> {
    check_config(config)?;
    let joints: Vec<Joint> = JOINTS
        .iter()
        .map(|&(name, parent, rest, axis)| Joint {
            name: name.to_string(),
            parent,
            rest: Point3::from(rest),
            bend_axis: Vector3::from(axis),
        })
        .collect();

    let mut meshes = Vec::new();
    let mut weights: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut regressor: Vec<Vec<(usize, f64)>> = vec![Vec::new(); joints.len()];
    let mut base = 0;
    for (part, kind) in parts() {
        let segments = if kind == 0 {
            config.torso_segments
        } else {
            config.limb_segments
        };
        let stations = part.stations(config.station_spacing);
        let path = straight_path(part.start, part.dir, part.normal, &stations);
        let tube = Tube::swept(&path, part.radius, part.radius, part.radius, segments, (segments / 4).max(2));
        let mesh = tube.to_mesh();
        weights.extend(
            mesh.vertices
                .iter()
                .map(|v| part.weights((v - part.start).dot(&part.dir))),
        );
        // Joint rings: the tube keeps `cap_rings - 1` cap rings ahead of the path.
        let lead = (segments / 4).max(2) - 1;
        for &(joint, s) in &part.bones {
            let ring = lead + stations.iter().position(|x| *x == s).expect("joint station");
            let c = 1.0 / segments as f64;
            regressor[joint] = (0..segments).map(|k| (base + tube.ring_vertex(ring, k), c)).collect();
        }
        base += mesh.num_vertices();
        meshes.push(mesh);
    }

    let head = generate(&MeshKind::Sphere {
        radius: HEAD_RADIUS,
        subdivisions: config.head_subdivisions,
    })?
    .translated(joints[HEAD].rest.coords);
    let c = 1.0 / head.num_vertices() as f64;
    regressor[HEAD] = (0..head.num_vertices()).map(|i| (base + i, c)).collect();
    weights.extend(vec![vec![(HEAD, 1.0)]; head.num_vertices()]);
    meshes.push(head);

    let template = TriMesh::merge(&meshes);
    if !(MIN_FACES..=MAX_FACES).contains(&template.num_faces()) {
        return Err(Error::InvalidParameter(format!(
            "configuration yields {} triangles, outside {MIN_FACES}..={MAX_FACES}",
            template.num_faces()
        )));
    }
    SkinnedModel::new(template, joints, weights, regressor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{classify, Rays, ViewAxis};

    #[test]
    fn default_body_is_valid() {
        let m = build_toy_body(&BodyConfig::default()).unwrap();
        assert!(m.template.validate().is_valid());
        assert!(m.template.signed_volume() > 0.0);
        assert!(m.num_joints() >= 12);
        let f = m.template.num_faces();
        eprintln!("default body: {} vertices, {f} faces", m.num_vertices());
        assert!((MIN_FACES..=MAX_FACES).contains(&f), "{f} faces");
        for row in &m.weights {
            let s: f64 = row.iter().map(|w| w.1).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let (_, components) = m.template.components();
        assert_eq!(components, 6);
    }

    #[test]
    fn build_is_deterministic() {
        let a = build_toy_body(&BodyConfig::default()).unwrap();
        let b = build_toy_body(&BodyConfig::default()).unwrap();
        assert_eq!(a.template, b.template);
        assert_eq!(a.weights, b.weights);
    }

    #[test]
    fn rest_pose_is_clean() {
        let m = build_toy_body(&BodyConfig::default()).unwrap();
        let c = classify(&m.template, Rays::default(), ViewAxis::PosZ).unwrap();
        assert_eq!(c.count_vout + c.count_vin, 0);
    }

    #[test]
    fn bent_elbow_penetrates() {
        let m = build_toy_body(&BodyConfig::default()).unwrap();
        let mut pose = m.zero_pose();
        m.bend(&mut pose, "l_elbow", 150.0).unwrap();
        let mesh = m.pose_mesh(&pose, &m.unit_shape()).unwrap();
        let c = classify(&mesh, Rays::default(), ViewAxis::PosZ).unwrap();
        assert!(c.count_vout > 0);
    }

    #[test]
    fn extreme_configs_stay_in_range() {
        let coarse = BodyConfig {
            limb_segments: 8,
            torso_segments: 8,
            head_subdivisions: 1,
            station_spacing: 0.1,
        };
        assert!(build_toy_body(&coarse).is_ok());
        let fine = BodyConfig {
            limb_segments: 20,
            torso_segments: 40,
            head_subdivisions: 3,
            station_spacing: 0.02,
        };
        assert!(build_toy_body(&fine).is_ok());
        let too_fine = BodyConfig {
            limb_segments: 32,
            torso_segments: 64,
            head_subdivisions: 4,
            station_spacing: 0.01,
        };
        assert!(build_toy_body(&too_fine).is_err());
        let bad = BodyConfig {
            limb_segments: 4,
            ..BodyConfig::default()
        };
        assert!(build_toy_body(&bad).is_err());
    }
}
