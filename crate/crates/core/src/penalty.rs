//! Penalty value and gradients.
//!
//! The value is the fraction of vertices caught in an intersection. The
//! gradient of an intersecting vertex is the derivative of the enclosed volume
//! with respect to that vertex, signed so that descent shrinks outer-surface
//! overlaps and grows inner-surface ones.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::detector::{Classification, Label};
use crate::error::{Error, Result};
use crate::mesh::TriMesh;

/// Relative tolerance, against the squared bbox diagonal, below which a fan
/// sum is treated as zero.
pub const ZERO_FAN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyReport {
    pub spt: f64,
    pub n_vertices: usize,
    pub count_v0: usize,
    pub count_vout: usize,
    pub count_vin: usize,
    pub unseen: usize,
}

pub fn spt_value(classification: &Classification, n_vertices: usize) -> Result<PenaltyReport> {
    if n_vertices == 0 {
        return Err(Error::ZeroVertices);
    }
    let c = classification;
    if c.count_v0 + c.count_vout + c.count_vin + c.unseen.len() != n_vertices {
        return Err(Error::SizeMismatch(format!(
            "classification covers {} vertices, mesh has {n_vertices}",
            c.count_v0 + c.count_vout + c.count_vin + c.unseen.len()
        )));
    }
    Ok(PenaltyReport {
        spt: (c.count_vout + c.count_vin) as f64 / n_vertices as f64,
        n_vertices,
        count_v0: c.count_v0,
        count_vout: c.count_vout,
        count_vin: c.count_vin,
        unseen: c.unseen.len(),
    })
}

/// Per-vertex gradient vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientField {
    pub vectors: Vec<Vector3<f64>>,
    pub normalized: bool,
    /// Intersecting vertices whose fan sum vanished and got a zero gradient.
    pub zeroed_fans: usize,
}

impl GradientField {
    pub fn zeros(n: usize, normalized: bool) -> Self {
        GradientField {
            vectors: vec![Vector3::zeros(); n],
            normalized,
            zeroed_fans: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Euclidean norm of the stacked 3N vector.
    pub fn norm(&self) -> f64 {
        self.vectors.iter().map(|g| g.norm_squared()).sum::<f64>().sqrt()
    }

    pub fn nonzero(&self) -> usize {
        self.vectors.iter().filter(|g| **g != Vector3::zeros()).count()
    }

    pub fn is_zero(&self) -> bool {
        self.vectors.iter().all(|g| *g == Vector3::zeros())
    }
}

/// `S_l * n_l` for every face, i.e. half the edge cross product.
pub fn area_vectors(mesh: &TriMesh) -> Vec<Vector3<f64>> {
    (0..mesh.num_faces()).map(|f| mesh.area_vector(f)).collect()
}

/// `(1/3) * sum of S_l n_l` over the faces around `vertex`. For a closed
/// mesh this is the exact gradient of the signed volume in that vertex.
pub fn volume_derivative(mesh: &TriMesh, vertex: usize) -> Result<Vector3<f64>> {
    let fan = mesh.vertex_fan(vertex)?;
    Ok(fan.iter().map(|&f| mesh.area_vector(f)).sum::<Vector3<f64>>() / 3.0)
}

/// Gradient of the penalty for each vertex: zero on V0, `+(1/3) sum S n` on
/// Vout, `-(1/3) sum S n` on Vin. With `normalize` every nonzero vector is
/// replaced by its direction.
pub fn spt_gradient(
    mesh: &TriMesh,
    classification: &Classification,
    normalize: bool,
) -> Result<GradientField> {
    let n = mesh.num_vertices();
    if classification.labels.len() != n {
        return Err(Error::SizeMismatch(format!(
            "classification has {} labels, mesh has {n} vertices",
            classification.labels.len()
        )));
    }
    let mut field = GradientField::zeros(n, normalize);
    if classification.num_intersecting() == 0 {
        return Ok(field);
    }
    let diag = mesh.bbox_diagonal();
    let tol = ZERO_FAN_TOL * diag * diag;
    let areas = area_vectors(mesh);
    let fans = mesh.vertex_faces();
    for (v, &label) in classification.labels.iter().enumerate() {
        let sign = match label {
            Label::V0 => continue,
            Label::Vout => 1.0,
            Label::Vin => -1.0,
        };
        let sum: Vector3<f64> = fans.fan(v).iter().map(|&f| areas[f]).sum();
        let norm = sum.norm();
        if norm < tol || norm == 0.0 {
            field.zeroed_fans += 1;
            continue;
        }
        field.vectors[v] = if normalize {
            sign * sum / norm
        } else {
            sign * sum / 3.0
        };
    }
    Ok(field)
}

/// Uniform-weight Laplacian regularizer against a reference shape.
///
/// With `delta_i = mean(neighbours) - v_i` the term is
/// `sum |delta_i(mesh) - delta_i(reference)|^2`. Since `delta` is linear the
/// gradient is `2 L^T L (mesh - reference)`.
pub fn laplacian_term(mesh: &TriMesh, reference: &TriMesh) -> Result<(f64, GradientField)> {
    if mesh.num_vertices() != reference.num_vertices() || mesh.faces != reference.faces {
        return Err(Error::TopologyMismatch(format!(
            "mesh ({} vertices, {} faces) vs reference ({} vertices, {} faces)",
            mesh.num_vertices(),
            mesh.num_faces(),
            reference.num_vertices(),
            reference.num_faces()
        )));
    }
    let neighbors = mesh.vertex_neighbors();
    let offsets: Vec<Vector3<f64>> = mesh
        .vertices
        .iter()
        .zip(&reference.vertices)
        .map(|(a, b)| a - b)
        .collect();
    let residual: Vec<Vector3<f64>> = neighbors
        .iter()
        .enumerate()
        .map(|(i, nb)| {
            if nb.is_empty() {
                return Vector3::zeros();
            }
            nb.iter().map(|&j| offsets[j]).sum::<Vector3<f64>>() / nb.len() as f64 - offsets[i]
        })
        .collect();
    let term = residual.iter().map(|r| r.norm_squared()).sum();
    let mut field = GradientField::zeros(mesh.num_vertices(), false);
    for (i, nb) in neighbors.iter().enumerate() {
        if nb.is_empty() {
            continue;
        }
        let r = residual[i];
        field.vectors[i] -= 2.0 * r;
        let share = 2.0 * r / nb.len() as f64;
        for &j in nb {
            field.vectors[j] += share;
        }
    }
    Ok((term, field))
}
