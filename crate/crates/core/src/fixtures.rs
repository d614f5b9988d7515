//! Named test scenes shared by the tests, the acceptance suite, the CLI and
//! the benches.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::body::{Camera, PoseParams, SkinnedModel, Targets};
use crate::error::Result;
use crate::mesh::{generate, BentTube, MeshKind, TriMesh};

/// Two equal spheres whose centres are `distance` apart along `dir`.
pub fn two_spheres(radius: f64, subdivisions: u32, distance: f64, dir: Vector3<f64>) -> Result<TriMesh> {
    let s = generate(&MeshKind::Sphere {
        radius,
        subdivisions,
    })?;
    let half = dir.normalize() * (distance / 2.0);
    Ok(TriMesh::merge(&[s.translated(-half), s.translated(half)]))
}

/// Two unit-radius spheres along x whose surfaces are `gap` apart; a
/// negative gap overlaps them.
pub fn two_spheres_gap(subdivisions: u32, gap: f64) -> Result<TriMesh> {
    two_spheres(1.0, subdivisions, 2.0 + gap, Vector3::x())
}

/// Hairpin tube whose ends interpenetrate.
pub fn crossed_tube(segments: usize) -> Result<TriMesh> {
    generate(&MeshKind::BentTube(BentTube {
        radius: 0.2,
        arc_angle_deg: 200.0,
        segments,
    }))
}

/// A coarse sphere overlapping a much finer, smaller one: triangle areas
/// differ by more than two orders of magnitude.
pub fn mixed_area_pair() -> Result<TriMesh> {
    let coarse = generate(&MeshKind::Sphere {
        radius: 1.0,
        subdivisions: 1,
    })?;
    let fine = generate(&MeshKind::Sphere {
        radius: 0.6,
        subdivisions: 4,
    })?
    .translated(Vector3::new(1.1, 0.0, 0.0));
    Ok(TriMesh::merge(&[coarse, fine]))
}

/// Ratio of the largest to the smallest face area.
pub fn area_ratio(mesh: &TriMesh) -> f64 {
    let (lo, hi) = (0..mesh.num_faces())
        .map(|f| mesh.area_vector(f).norm())
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), a| (lo.min(a), hi.max(a)));
    hi / lo
}

/// Left elbow folded to 150 degrees: the forearm runs back into the upper
/// arm.
pub fn elbow_penetration_pose(model: &SkinnedModel) -> Result<PoseParams> {
    let mut pose = model.zero_pose();
    model.bend(&mut pose, "l_elbow", 150.0)?;
    Ok(pose)
}

/// `count` copies of a mesh stacked along +z, `spacing` apart, so they
/// share one screen footprint and every extra copy deepens the fragment
/// lists.
pub fn stacked(mesh: &TriMesh, count: usize, spacing: f64) -> TriMesh {
    let copies: Vec<TriMesh> = (0..count)
        .map(|k| mesh.translated(Vector3::new(0.0, 0.0, spacing * k as f64)))
        .collect();
    TriMesh::merge(&copies)
}

/// Camera for a 512-pixel canvas.
pub fn canvas_camera() -> Camera {
    Camera {
        scale: 100.0,
        principal: [256.0, 256.0],
    }
}

/// A fitting problem: where to start and what to match.
#[derive(Debug, Clone)]
pub struct FitScenario {
    pub init: PoseParams,
    pub truth: PoseParams,
    pub targets: Targets,
}

/// Targets taken from a pose in which the left hand sinks a few centimetres
/// into the torso. Matching them exactly reproduces the penetration; the
/// joints can be matched to within a couple of pixels without it.
pub fn hand_in_torso(model: &SkinnedModel) -> Result<FitScenario> {
    let mut truth = model.zero_pose();
    model.bend(&mut truth, "l_shoulder", -90.0)?;
    model.bend(&mut truth, "l_elbow", -14.0)?;
    let shape = model.unit_shape();
    let targets = Targets::from_pose(model, &truth, &shape, canvas_camera())?;
    Ok(FitScenario {
        init: model.zero_pose(),
        truth,
        targets,
    })
}

/// A relaxed standing pose.
pub fn relaxed_pose(model: &SkinnedModel) -> Result<PoseParams> {
    let mut pose = model.zero_pose();
    for (joint, deg) in [
        ("l_shoulder", -55.0),
        ("r_shoulder", -60.0),
        ("l_elbow", 35.0),
        ("r_elbow", 20.0),
        ("l_hip", 15.0),
        ("l_knee", 25.0),
        ("r_hip", -10.0),
        ("spine", 8.0),
    ] {
        model.bend(&mut pose, joint, deg)?;
    }
    Ok(pose)
}

/// Targets from [`relaxed_pose`]; the start perturbs every rotation
/// component with Gaussian noise of `sigma` radians.
pub fn noisy_recovery(model: &SkinnedModel, sigma: f64, seed: u64) -> Result<FitScenario> {
    let truth = relaxed_pose(model)?;
    let targets = Targets::from_pose(model, &truth, &model.unit_shape(), canvas_camera())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).map_err(|e| crate::Error::InvalidParameter(e.to_string()))?;
    let mut init = truth.clone();
    for r in &mut init.rotations {
        *r += Vector3::from_fn(|_, _| noise.sample(&mut rng));
    }
    init.clamp_rotations(model.joint_limit);
    Ok(FitScenario {
        init,
        truth,
        targets,
    })
}
