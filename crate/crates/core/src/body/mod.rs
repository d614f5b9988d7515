//! Articulated body: skeleton, linear blend skinning, joint regression and a
//! weak-perspective camera.
//!
//! Joint `j` carries the rigid-plus-scale transform
//! `G_j(v) = p_j + s_j R_j (v - rest_j)`, where `R_j` chains the axis-angle
//! rotations from the root and `p_j` is the posed joint position. A skinned
//! vertex is the weighted sum of its bones' transforms.

mod jacobian;
mod toy;

use std::path::Path;

use nalgebra::{Matrix3, Point3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::TriMesh;

pub use jacobian::{left_jacobian, PoseJacobian};
pub use toy::{build_toy_body, BodyConfig};

/// Upper bound on `|axis-angle|` per joint, away from the antipodal
/// singularity of the exponential map.
pub const DEFAULT_JOINT_LIMIT: f64 = std::f64::consts::PI;
pub const WEIGHT_SUM_TOL: f64 = 1e-9;
pub const MAX_INFLUENCES: usize = 4;
pub const SCALE_RANGE: (f64, f64) = (0.5, 2.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    /// Rest position in model space.
    pub rest: Point3<f64>,
    /// Unit axis a "bend" of this joint rotates about.
    pub bend_axis: Vector3<f64>,
}

#[derive(Debug, Clone)]
pub struct SkinnedModel {
    pub template: TriMesh,
    pub joints: Vec<Joint>,
    /// Per vertex: `(joint, weight)` pairs.
    pub weights: Vec<Vec<(usize, f64)>>,
    /// Per joint: `(vertex, coefficient)` pairs; rows sum to one.
    pub regressor: Vec<Vec<(usize, f64)>>,
    pub joint_limit: f64,
}

/// Per-joint axis-angle rotations (radians) and a global translation.
///
/// Also used as the container for gradients with respect to the pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseParams {
    pub rotations: Vec<Vector3<f64>>,
    pub translation: Vector3<f64>,
}

impl PoseParams {
    pub fn zeros(num_joints: usize) -> Self {
        PoseParams {
            rotations: vec![Vector3::zeros(); num_joints],
            translation: Vector3::zeros(),
        }
    }

    pub fn num_joints(&self) -> usize {
        self.rotations.len()
    }

    /// Flat layout: rotations joint-major, then translation.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(3 * self.rotations.len() + 3);
        for r in &self.rotations {
            out.extend_from_slice(r.as_slice());
        }
        out.extend_from_slice(self.translation.as_slice());
        out
    }

    pub fn from_slice(x: &[f64]) -> Result<Self> {
        if x.len() < 3 || x.len() % 3 != 0 {
            return Err(Error::SizeMismatch(format!(
                "pose vector length {} is not 3 * (joints + 1)",
                x.len()
            )));
        }
        let n = x.len() / 3 - 1;
        Ok(PoseParams {
            rotations: (0..n).map(|j| Vector3::from_column_slice(&x[3 * j..3 * j + 3])).collect(),
            translation: Vector3::from_column_slice(&x[3 * n..]),
        })
    }

    pub fn norm(&self) -> f64 {
        (self.rotations.iter().map(|r| r.norm_squared()).sum::<f64>()
            + self.translation.norm_squared())
        .sqrt()
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &PoseParams) {
        for (r, o) in self.rotations.iter_mut().zip(&other.rotations) {
            *r += o * a;
        }
        self.translation += other.translation * a;
    }

    /// Shrinks any rotation whose angle reaches `limit` back inside it.
    pub fn clamp_rotations(&mut self, limit: f64) -> usize {
        let cap = limit * (1.0 - 1e-9);
        let mut clamped = 0;
        for r in &mut self.rotations {
            let n = r.norm();
            if n >= cap {
                *r *= cap / n;
                clamped += 1;
            }
        }
        clamped
    }
}

/// Per-bone uniform scale factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeParams {
    pub scales: Vec<f64>,
}

impl ShapeParams {
    pub fn unit(num_joints: usize) -> Self {
        ShapeParams {
            scales: vec![1.0; num_joints],
        }
    }
}

/// Weak-perspective camera looking down `-z`: `scale * (x, y) + principal`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub scale: f64,
    pub principal: [f64; 2],
}

impl Camera {
    pub fn new(scale: f64, principal: [f64; 2]) -> Result<Self> {
        let cam = Camera { scale, principal };
        cam.check()?;
        Ok(cam)
    }

    fn check(&self) -> Result<()> {
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "camera scale must be positive, got {}",
                self.scale
            )));
        }
        if !self.principal.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidParameter("camera principal point is not finite".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn project_point(&self, p: &Point3<f64>) -> [f64; 2] {
        [
            self.scale * p.x + self.principal[0],
            self.scale * p.y + self.principal[1],
        ]
    }
}

pub fn project(points: &[Point3<f64>], camera: &Camera) -> Vec<[f64; 2]> {
    points.iter().map(|p| camera.project_point(p)).collect()
}

/// 2D joint targets with per-joint confidence, plus the camera they were
/// observed with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Targets {
    pub joints: Vec<[f64; 2]>,
    pub confidence: Vec<f64>,
    pub camera: Camera,
}

impl Targets {
    /// Projected joints of a pose, all with confidence one.
    pub fn from_pose(
        model: &SkinnedModel,
        pose: &PoseParams,
        shape: &ShapeParams,
        camera: Camera,
    ) -> Result<Self> {
        let joints = project(&model.joints_3d(pose, shape)?, &camera);
        Ok(Targets {
            confidence: vec![1.0; joints.len()],
            joints,
            camera,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let t: Targets = serde_json::from_str(text)?;
        t.check()?;
        Ok(t)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    fn check(&self) -> Result<()> {
        self.camera.check()?;
        if self.joints.len() != self.confidence.len() {
            return Err(Error::SizeMismatch(format!(
                "{} target joints but {} confidences",
                self.joints.len(),
                self.confidence.len()
            )));
        }
        if let Some(c) = self.confidence.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(Error::InvalidParameter(format!("confidence {c} outside [0, 1]")));
        }
        if self.joints.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("target joint is not finite".into()));
        }
        Ok(())
    }
}

/// Posed joint frames.
#[derive(Debug, Clone)]
pub struct Kinematics {
    pub rotations: Vec<Matrix3<f64>>,
    /// Posed joint positions, stored as displacement from rest so the zero
    /// pose is reproduced bit for bit.
    pub displacements: Vec<Vector3<f64>>,
    pub rest: Vec<Point3<f64>>,
    pub scales: Vec<f64>,
}

impl Kinematics {
    pub fn position(&self, j: usize) -> Point3<f64> {
        self.rest[j] + self.displacements[j]
    }

    /// `G_j(v) - v`.
    #[inline]
    pub fn displacement(&self, j: usize, v: &Point3<f64>) -> Vector3<f64> {
        let local = v - self.rest[j];
        self.displacements[j] + self.rotations[j] * local * self.scales[j] - local
    }

    #[inline]
    pub fn transform(&self, j: usize, v: &Point3<f64>) -> Point3<f64> {
        v + self.displacement(j, v)
    }
}

impl SkinnedModel {
    /// Checks every structural invariant before handing the model out.
    pub fn new(
        template: TriMesh,
        joints: Vec<Joint>,
        weights: Vec<Vec<(usize, f64)>>,
        regressor: Vec<Vec<(usize, f64)>>,
    ) -> Result<Self> {
        let model = SkinnedModel {
            template,
            joints,
            weights,
            regressor,
            joint_limit: DEFAULT_JOINT_LIMIT,
        };
        model.check()?;
        Ok(model)
    }

    fn check(&self) -> Result<()> {
        let nj = self.joints.len();
        let nv = self.template.num_vertices();
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if nj == 0 {
            return bad("skeleton has no joints".into());
        }
        let roots = self.joints.iter().filter(|j| j.parent.is_none()).count();
        if roots != 1 {
            return bad(format!("skeleton has {roots} roots, expected 1"));
        }
        for (j, joint) in self.joints.iter().enumerate() {
            if let Some(p) = joint.parent {
                if p >= j {
                    return bad(format!("joint {j} has parent {p}; parents must come first"));
                }
            }
        }
        if self.weights.len() != nv {
            return Err(Error::SizeMismatch(format!(
                "{} weight rows for {nv} vertices",
                self.weights.len()
            )));
        }
        for (i, row) in self.weights.iter().enumerate() {
            let sum: f64 = row.iter().map(|&(_, w)| w).sum();
            if row.len() > MAX_INFLUENCES
                || (sum - 1.0).abs() > WEIGHT_SUM_TOL
                || row.iter().any(|&(j, w)| j >= nj || !(0.0..=1.0).contains(&w))
            {
                return bad(format!("bad skinning weights at vertex {i}: {row:?}"));
            }
        }
        if self.regressor.len() != nj {
            return Err(Error::SizeMismatch(format!(
                "{} regressor rows for {nj} joints",
                self.regressor.len()
            )));
        }
        for (j, row) in self.regressor.iter().enumerate() {
            let sum: f64 = row.iter().map(|&(_, c)| c).sum();
            if (sum - 1.0).abs() > WEIGHT_SUM_TOL || row.iter().any(|&(i, _)| i >= nv) {
                return bad(format!("regressor row {j} does not sum to one"));
            }
        }
        let report = self.template.validate();
        if !report.is_valid() {
            return Err(Error::InvalidMesh(format!(
                "template has {} violations",
                report.violations.len()
            )));
        }
        Ok(())
    }

    pub fn num_joints(&self) -> usize {
        self.joints.len()
    }

    pub fn num_vertices(&self) -> usize {
        self.template.num_vertices()
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn zero_pose(&self) -> PoseParams {
        PoseParams::zeros(self.num_joints())
    }

    pub fn unit_shape(&self) -> ShapeParams {
        ShapeParams::unit(self.num_joints())
    }

    /// Sets joint `name` to a rotation of `degrees` about its bend axis.
    pub fn bend(&self, pose: &mut PoseParams, name: &str, degrees: f64) -> Result<()> {
        let j = self
            .joint_index(name)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown joint {name:?}")))?;
        pose.rotations[j] = self.joints[j].bend_axis * degrees.to_radians();
        Ok(())
    }

    pub fn check_params(&self, pose: &PoseParams, shape: &ShapeParams) -> Result<()> {
        let nj = self.num_joints();
        if pose.rotations.len() != nj || shape.scales.len() != nj {
            return Err(Error::SizeMismatch(format!(
                "model has {nj} joints, pose has {}, shape has {}",
                pose.rotations.len(),
                shape.scales.len()
            )));
        }
        if pose.to_vec().iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("pose has non-finite entries".into()));
        }
        if let Some((j, r)) = pose
            .rotations
            .iter()
            .enumerate()
            .find(|(_, r)| r.norm() >= self.joint_limit)
        {
            return Err(Error::InvalidParameter(format!(
                "joint {j} rotation {:.6} rad exceeds the limit {:.6}",
                r.norm(),
                self.joint_limit
            )));
        }
        let (lo, hi) = SCALE_RANGE;
        if let Some(s) = shape.scales.iter().find(|s| !(lo..=hi).contains(*s)) {
            return Err(Error::InvalidParameter(format!("bone scale {s} outside [{lo}, {hi}]")));
        }
        Ok(())
    }

    pub fn kinematics(&self, pose: &PoseParams, shape: &ShapeParams) -> Result<Kinematics> {
        self.check_params(pose, shape)?;
        let nj = self.num_joints();
        let mut rotations = Vec::with_capacity(nj);
        let mut displacements: Vec<Vector3<f64>> = Vec::with_capacity(nj);
        for (j, joint) in self.joints.iter().enumerate() {
            let local = Rotation3::new(pose.rotations[j]).into_inner();
            match joint.parent {
                None => {
                    rotations.push(local);
                    displacements.push(pose.translation);
                }
                Some(p) => {
                    let offset = joint.rest - self.joints[p].rest;
                    let d = displacements[p] + rotations[p] * offset * shape.scales[p] - offset;
                    rotations.push(rotations[p] * local);
                    displacements.push(d);
                }
            }
        }
        Ok(Kinematics {
            rotations,
            displacements,
            rest: self.joints.iter().map(|j| j.rest).collect(),
            scales: shape.scales.clone(),
        })
    }

    pub fn skin(&self, kin: &Kinematics) -> Vec<Point3<f64>> {
        self.template
            .vertices
            .iter()
            .zip(&self.weights)
            .map(|(v, row)| {
                let d = row
                    .iter()
                    .fold(Vector3::zeros(), |acc, &(j, w)| acc + kin.displacement(j, v) * w);
                v + d
            })
            .collect()
    }

    pub fn pose_mesh(&self, pose: &PoseParams, shape: &ShapeParams) -> Result<TriMesh> {
        let kin = self.kinematics(pose, shape)?;
        Ok(self.template.with_vertices(self.skin(&kin)))
    }

    /// Applies the joint regressor to posed vertex positions.
    pub fn regress(&self, vertices: &[Point3<f64>]) -> Vec<Point3<f64>> {
        self.regressor
            .iter()
            .map(|row| {
                Point3::from(
                    row.iter()
                        .fold(Vector3::zeros(), |acc, &(i, c)| acc + vertices[i].coords * c),
                )
            })
            .collect()
    }

    pub fn joints_3d(&self, pose: &PoseParams, shape: &ShapeParams) -> Result<Vec<Point3<f64>>> {
        let kin = self.kinematics(pose, shape)?;
        Ok(self.regress(&self.skin(&kin)))
    }

    pub fn jacobian(&self, pose: &PoseParams, shape: &ShapeParams) -> Result<PoseJacobian<'_>> {
        let kin = self.kinematics(pose, shape)?;
        Ok(PoseJacobian::new(self, pose, kin))
    }

    /// `E_J = sum_k conf_k |project(J_k) - target_k|^2` in pixels squared, and
    /// its gradient with respect to the pose.
    pub fn reprojection_energy(
        &self,
        pose: &PoseParams,
        shape: &ShapeParams,
        targets: &Targets,
    ) -> Result<(f64, PoseParams)> {
        self.check_targets(targets)?;
        let jac = self.jacobian(pose, shape)?;
        let joints = self.regress(&self.skin(jac.kinematics()));
        let cam = &targets.camera;
        let mut energy = 0.0;
        let mut joint_grads = Vec::with_capacity(joints.len());
        for (k, j) in joints.iter().enumerate() {
            let p = cam.project_point(j);
            let r = [p[0] - targets.joints[k][0], p[1] - targets.joints[k][1]];
            let c = targets.confidence[k];
            energy += c * (r[0] * r[0] + r[1] * r[1]);
            joint_grads.push(Vector3::new(r[0], r[1], 0.0) * (2.0 * c * cam.scale));
        }
        let mut field = vec![Vector3::zeros(); self.num_vertices()];
        for (row, g) in self.regressor.iter().zip(&joint_grads) {
            for &(i, c) in row {
                field[i] += g * c;
            }
        }
        Ok((energy, jac.pull_back(&field)?))
    }

    /// Pixel distance between each projected joint and its target.
    pub fn joint_errors(
        &self,
        pose: &PoseParams,
        shape: &ShapeParams,
        targets: &Targets,
    ) -> Result<Vec<f64>> {
        self.check_targets(targets)?;
        let projected = project(&self.joints_3d(pose, shape)?, &targets.camera);
        Ok(projected
            .iter()
            .zip(&targets.joints)
            .map(|(p, t)| (p[0] - t[0]).hypot(p[1] - t[1]))
            .collect())
    }

    fn check_targets(&self, targets: &Targets) -> Result<()> {
        targets.check()?;
        if targets.joints.len() != self.num_joints() {
            return Err(Error::SizeMismatch(format!(
                "{} targets for {} joints",
                targets.joints.len(),
                self.num_joints()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use nalgebra::{Isometry3, Translation3, UnitQuaternion};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::oracle::finite_difference;

    fn body() -> SkinnedModel {
        build_toy_body(&BodyConfig::default()).unwrap()
    }

    fn random_pose(model: &SkinnedModel, rng: &mut ChaCha8Rng, max_angle: f64) -> PoseParams {
        let mut pose = model.zero_pose();
        for r in &mut pose.rotations {
            *r = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ) * (max_angle / 3f64.sqrt());
        }
        pose.translation = Vector3::new(
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
        );
        pose
    }

    fn random_shape(model: &SkinnedModel, rng: &mut ChaCha8Rng) -> ShapeParams {
        ShapeParams {
            scales: (0..model.num_joints()).map(|_| rng.random_range(0.8..1.25)).collect(),
        }
    }

    /// Straightforward LBS: compose isometries down the chain and apply each
    /// bone's scale about its joint.
    fn reference_skin(model: &SkinnedModel, pose: &PoseParams, shape: &ShapeParams) -> Vec<Point3<f64>> {
        let mut world: Vec<Isometry3<f64>> = Vec::new();
        for (j, joint) in model.joints.iter().enumerate() {
            let rot = UnitQuaternion::from_scaled_axis(pose.rotations[j]);
            let iso = match joint.parent {
                None => Isometry3::from_parts(
                    Translation3::from(joint.rest.coords + pose.translation),
                    rot,
                ),
                Some(p) => {
                    let offset = (joint.rest - model.joints[p].rest) * shape.scales[p];
                    world[p] * Isometry3::from_parts(Translation3::from(offset), rot)
                }
            };
            world.push(iso);
        }
        model
            .template
            .vertices
            .iter()
            .zip(&model.weights)
            .map(|(v, row)| {
                let mut acc = Vector3::zeros();
                for &(j, w) in row {
                    let local = Point3::from((v - model.joints[j].rest) * shape.scales[j]);
                    acc += (world[j] * local).coords * w;
                }
                Point3::from(acc)
            })
            .collect()
    }

    #[test]
    fn zero_pose_reproduces_template_bit_for_bit() {
        let m = body();
        let posed = m.pose_mesh(&m.zero_pose(), &m.unit_shape()).unwrap();
        assert_eq!(posed, m.template);
        let joints = m.joints_3d(&m.zero_pose(), &m.unit_shape()).unwrap();
        for (j, p) in joints.iter().enumerate() {
            assert!((p - m.joints[j].rest).norm() < 1e-12, "joint {j}");
        }
    }

    #[test]
    fn root_rotation_is_rigid() {
        let m = body();
        let mut pose = m.zero_pose();
        pose.rotations[0] = Vector3::new(0.3, -1.1, 0.7);
        pose.translation = Vector3::new(1.0, -2.0, 0.5);
        let r = Rotation3::new(pose.rotations[0]);
        let posed = m.pose_mesh(&pose, &m.unit_shape()).unwrap();
        for (p, v) in posed.vertices.iter().zip(&m.template.vertices) {
            assert!((p - (r * v + pose.translation)).norm() < 1e-12);
        }
    }

    #[test]
    fn shared_rotation_is_rigid() {
        // The root carries R; every other joint stays at identity, so all
        // bones share one world rotation.
        let m = body();
        let mut pose = m.zero_pose();
        pose.rotations[0] = Vector3::new(0.0, 0.9, 0.2);
        let r = Rotation3::new(pose.rotations[0]);
        let posed = m.pose_mesh(&pose, &m.unit_shape()).unwrap();
        let err = posed
            .vertices
            .iter()
            .zip(&m.template.vertices)
            .map(|(p, v)| (p - r * v).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-12);
    }

    #[test]
    fn skinning_matches_reference() {
        let m = body();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let pose = random_pose(&m, &mut rng, 2.0);
            let shape = random_shape(&m, &mut rng);
            let ours = m.pose_mesh(&pose, &shape).unwrap();
            let reference = reference_skin(&m, &pose, &shape);
            let err = ours
                .vertices
                .iter()
                .zip(&reference)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            assert!(err < 1e-9, "max deviation {err:e}");
        }
    }

    #[test]
    fn bent_elbow_wrist_follows_forward_kinematics() {
        let m = body();
        let mut pose = m.zero_pose();
        m.bend(&mut pose, "l_elbow", 150.0).unwrap();
        m.bend(&mut pose, "l_shoulder", -30.0).unwrap();
        let joints = m.joints_3d(&pose, &m.unit_shape()).unwrap();

        // Independent chain: shoulder rotates the upper arm, the elbow the
        // forearm; the spine is untouched.
        let sh = m.joint_index("l_shoulder").unwrap();
        let el = m.joint_index("l_elbow").unwrap();
        let wr = m.joint_index("l_wrist").unwrap();
        let r_sh = Rotation3::new(pose.rotations[sh]);
        let r_el = Rotation3::new(pose.rotations[el]);
        let elbow = m.joints[sh].rest + r_sh * (m.joints[el].rest - m.joints[sh].rest);
        let wrist = elbow + r_sh * r_el * (m.joints[wr].rest - m.joints[el].rest);
        assert!((joints[el] - elbow).norm() < 1e-9);
        assert!((joints[wr] - wrist).norm() < 1e-9);
    }

    #[test]
    fn translation_shifts_all_joints() {
        let m = body();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pose = random_pose(&m, &mut rng, 1.0);
        let shape = m.unit_shape();
        let mut moved = pose.clone();
        let t = Vector3::new(0.25, -1.5, 3.0);
        moved.translation += t;
        let a = m.joints_3d(&pose, &shape).unwrap();
        let b = m.joints_3d(&moved, &shape).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((q - p - t).norm() < 1e-12);
        }
    }

    #[test]
    fn projection_examples() {
        let cam = Camera::new(100.0, [256.0, 256.0]).unwrap();
        assert_eq!(cam.project_point(&Point3::new(0.5, -0.5, 7.0)), [306.0, 206.0]);
        let ortho = Camera::new(1.0, [0.0, 0.0]).unwrap();
        for z in [-3.0, 0.0, 11.0] {
            assert_eq!(ortho.project_point(&Point3::new(1.5, 2.5, z)), [1.5, 2.5]);
        }
        assert!(Camera::new(0.0, [0.0, 0.0]).is_err());
    }

    #[test]
    fn energy_examples() {
        let m = body();
        let shape = m.unit_shape();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pose = random_pose(&m, &mut rng, 1.0);
        let cam = Camera::new(100.0, [256.0, 256.0]).unwrap();
        let mut targets = Targets::from_pose(&m, &pose, &shape, cam).unwrap();
        let (e, g) = m.reprojection_energy(&pose, &shape, &targets).unwrap();
        assert!(e < 1e-18);
        assert!(g.norm() < 1e-9);

        targets.joints[4][0] -= 3.0;
        targets.joints[4][1] += 4.0;
        let (e, _) = m.reprojection_energy(&pose, &shape, &targets).unwrap();
        assert!((e - 25.0).abs() < 1e-9);

        targets.confidence.pop();
        assert!(m.reprojection_energy(&pose, &shape, &targets).is_err());
    }

    #[test]
    fn energy_is_rotation_invariant_about_view_axis() {
        // A rotation about z together with the matching 2D rotation of the
        // targets about the principal point leaves E_J unchanged.
        let m = body();
        let shape = m.unit_shape();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pose = random_pose(&m, &mut rng, 0.8);
        let cam = Camera::new(80.0, [256.0, 256.0]).unwrap();
        let mut targets = Targets::from_pose(&m, &pose, &shape, cam).unwrap();
        for t in &mut targets.joints {
            t[0] += rng.random_range(-5.0..5.0);
            t[1] += rng.random_range(-5.0..5.0);
        }
        let (e0, _) = m.reprojection_energy(&pose, &shape, &targets).unwrap();

        let angle: f64 = 0.7;
        let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), angle);
        let mut turned = pose.clone();
        let r0 = rz * Rotation3::new(pose.rotations[0]);
        turned.rotations[0] = r0.scaled_axis();
        turned.translation = rz * pose.translation;
        let (c, s) = (angle.cos(), angle.sin());
        let mut rotated = targets.clone();
        for t in &mut rotated.joints {
            let (x, y) = (t[0] - 256.0, t[1] - 256.0);
            *t = [c * x - s * y + 256.0, s * x + c * y + 256.0];
        }
        let (e1, _) = m.reprojection_energy(&turned, &shape, &rotated).unwrap();
        assert!((e1 - e0).abs() <= 1e-9 * e0.max(1.0), "{e0} vs {e1}");
    }

    #[test]
    fn energy_gradient_matches_finite_differences() {
        let m = body();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for case in 0..50 {
            let pose = random_pose(&m, &mut rng, 1.5);
            let shape = random_shape(&m, &mut rng);
            let cam = Camera::new(rng.random_range(50.0..150.0), [256.0, 256.0]).unwrap();
            let mut targets = Targets::from_pose(&m, &random_pose(&m, &mut rng, 1.5), &shape, cam).unwrap();
            for c in &mut targets.confidence {
                *c = rng.random_range(0.2..1.0);
            }
            let (_, g) = m.reprojection_energy(&pose, &shape, &targets).unwrap();
            let f = |x: &[f64]| {
                let p = PoseParams::from_slice(x).unwrap();
                m.reprojection_energy(&p, &shape, &targets).unwrap().0
            };
            let fd = finite_difference(f, &pose.to_vec(), 1e-6).unwrap();
            let g = g.to_vec();
            let diff: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let scale: f64 = g.iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!(diff <= 1e-4 * scale, "case {case}: |g - fd| = {diff:e}, |g| = {scale:e}");
        }
    }

    #[test]
    fn params_are_checked() {
        let m = body();
        let mut pose = m.zero_pose();
        pose.rotations[3] = Vector3::new(4.0, 0.0, 0.0);
        assert!(m.pose_mesh(&pose, &m.unit_shape()).is_err());
        pose.clamp_rotations(m.joint_limit);
        assert!(m.pose_mesh(&pose, &m.unit_shape()).is_ok());
        let mut shape = m.unit_shape();
        shape.scales[2] = 2.5;
        assert!(m.pose_mesh(&m.zero_pose(), &shape).is_err());
        assert!(m.bend(&mut pose, "tail", 10.0).is_err());
    }

    #[test]
    fn targets_json_round_trip() {
        let text = r#"{"joints": [[1.0, 2.0], [3.5, 4.0]], "confidence": [1.0, 0.5],
                       "camera": {"scale": 100.0, "principal": [256.0, 256.0]}}"#;
        let t = Targets::from_json(text).unwrap();
        assert_eq!(t.joints[1], [3.5, 4.0]);
        assert_eq!(t.camera.scale, 100.0);
        let back = Targets::from_json(&serde_json::to_string(&t).unwrap()).unwrap();
        assert_eq!(back, t);
        assert!(Targets::from_json(r#"{"joints": [[1,2]], "confidence": [1.5],
                                       "camera": {"scale": 1, "principal": [0,0]}}"#)
        .is_err());
    }
}
