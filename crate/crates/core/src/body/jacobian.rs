use nalgebra::{Matrix3, Point3, Vector3};

use super::{Kinematics, PoseParams, SkinnedModel};
use crate::error::{Error, Result};

/// Left Jacobian of the SO(3) exponential: `d exp(theta + e) = [J e]x exp(theta)`.
pub fn left_jacobian(theta: &Vector3<f64>) -> Matrix3<f64> {
    let phi2 = theta.norm_squared();
    let k = theta.cross_matrix();
    let (a, b) = if phi2 < 1e-6 {
        (0.5 - phi2 / 24.0, 1.0 / 6.0 - phi2 / 120.0)
    } else {
        let phi = phi2.sqrt();
        ((1.0 - phi.cos()) / phi2, (phi - phi.sin()) / (phi2 * phi))
    };
    Matrix3::identity() + k * a + k * k * b
}

/// Derivative of the skinned vertex positions with respect to the pose.
///
/// Perturbing component `k` of joint `a` rotates every descendant bone about
/// the posed joint position `p_a` with angular velocity
/// `w = R_parent(a) J(theta_a) e_k`, so `dv = w x (G_b(v) - p_a)`.
pub struct PoseJacobian<'a> {
    model: &'a SkinnedModel,
    kin: Kinematics,
    /// World-space angular velocity per joint and axis-angle component.
    axes: Vec<[Vector3<f64>; 3]>,
}

impl<'a> PoseJacobian<'a> {
    pub(super) fn new(model: &'a SkinnedModel, pose: &PoseParams, kin: Kinematics) -> Self {
        let axes = model
            .joints
            .iter()
            .enumerate()
            .map(|(j, joint)| {
                let parent = joint.parent.map_or(Matrix3::identity(), |p| kin.rotations[p]);
                let m = parent * left_jacobian(&pose.rotations[j]);
                [m.column(0).into(), m.column(1).into(), m.column(2).into()]
            })
            .collect();
        PoseJacobian { model, kin, axes }
    }

    pub fn kinematics(&self) -> &Kinematics {
        &self.kin
    }

    fn check_field(&self, len: usize) -> Result<()> {
        if len != self.model.num_vertices() {
            return Err(Error::SizeMismatch(format!(
                "field has {len} vectors for {} vertices",
                self.model.num_vertices()
            )));
        }
        Ok(())
    }

    /// Transpose-apply: pulls a per-vertex field `g` back to pose space,
    /// returning `sum_i (dv_i/dpose)^T g_i`.
    pub fn pull_back(&self, field: &[Vector3<f64>]) -> Result<PoseParams> {
        self.check_field(field.len())?;
        let nj = self.model.num_joints();
        // Per bone: sum of w (G_b(v) x g) and of w g.
        let mut moment = vec![Vector3::zeros(); nj];
        let mut force = vec![Vector3::zeros(); nj];
        for ((v, row), g) in self.model.template.vertices.iter().zip(&self.model.weights).zip(field) {
            if g.iter().all(|c| *c == 0.0) {
                continue;
            }
            for &(b, w) in row {
                let y = self.kin.transform(b, v);
                moment[b] += y.coords.cross(g) * w;
                force[b] += g * w;
            }
        }
        // Accumulate subtrees; parents precede children.
        for j in (1..nj).rev() {
            if let Some(p) = self.model.joints[j].parent {
                let (m, f) = (moment[j], force[j]);
                moment[p] += m;
                force[p] += f;
            }
        }
        let mut out = PoseParams::zeros(nj);
        for j in 0..nj {
            let p = self.kin.position(j);
            let torque = moment[j] - p.coords.cross(&force[j]);
            for k in 0..3 {
                out.rotations[j][k] = self.axes[j][k].dot(&torque);
            }
        }
        out.translation = field.iter().sum();
        Ok(out)
    }

    /// Forward-apply: per-vertex displacement for a pose perturbation.
    pub fn apply(&self, delta: &PoseParams) -> Result<Vec<Vector3<f64>>> {
        let nj = self.model.num_joints();
        if delta.num_joints() != nj {
            return Err(Error::SizeMismatch(format!(
                "perturbation has {} joints, model has {nj}",
                delta.num_joints()
            )));
        }
        // Per bone, the velocity field is `spin x y - shift`.
        let mut spin: Vec<Vector3<f64>> = Vec::with_capacity(nj);
        let mut shift: Vec<Vector3<f64>> = Vec::with_capacity(nj);
        for (j, joint) in self.model.joints.iter().enumerate() {
            let w: Vector3<f64> = (0..3).map(|k| self.axes[j][k] * delta.rotations[j][k]).sum();
            let p: Point3<f64> = self.kin.position(j);
            let (s0, t0) = joint
                .parent
                .map_or((Vector3::zeros(), -delta.translation), |p| (spin[p], shift[p]));
            spin.push(s0 + w);
            shift.push(t0 + w.cross(&p.coords));
        }
        Ok(self
            .model
            .template
            .vertices
            .iter()
            .zip(&self.model.weights)
            .map(|(v, row)| {
                row.iter().fold(Vector3::zeros(), |acc, &(b, w)| {
                    let y = self.kin.transform(b, v);
                    acc + (spin[b].cross(&y.coords) - shift[b]) * w
                })
            })
            .collect())
    }
}
