//! Gradient-descent loops: vertex-space and pose-space self-intersection
//! removal, and 2D joint fitting with an optional penalty term.

mod bench;

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::body::{PoseParams, ShapeParams, SkinnedModel, Targets};
use crate::detector::{Classification, Detector, Rays, ViewAxis};
use crate::error::{Error, Result};
use crate::mesh::{save_obj, TriMesh};
use crate::penalty::{area_vectors, spt_gradient, spt_value};

pub use bench::{bench, bench_mesh, BenchCell, BenchTable, LinearFitStats, REFERENCE_MS, STACK_SPACING};

pub const TRACE_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub max_iters: usize,
    pub snapshot_every: usize,
    pub rays: Rays,
    pub axis: ViewAxis,
    pub normalize_gradient: bool,
    pub stop_when_spt_zero: bool,
    pub seed: u64,
    /// Weight of the penalty gradient against the reprojection gradient when
    /// fitting.
    pub spt_weight: f64,
    /// Fitting stops once the best reprojection energy has not improved by
    /// more than `tolerance` (relative) for this many iterations.
    pub patience: usize,
    pub tolerance: f64,
    /// Where to write `iter_<k>.obj`; no snapshots when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snapshot_dir: Option<PathBuf>,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            learning_rate: 1e-4,
            max_iters: 500,
            snapshot_every: 10,
            rays: Rays::default(),
            axis: ViewAxis::default(),
            normalize_gradient: true,
            stop_when_spt_zero: true,
            seed: 0,
            spt_weight: 1.0,
            patience: 25,
            tolerance: 1e-4,
            snapshot_dir: None,
        }
    }
}

/// Pose-space removal step in radians per unit of pulled-back gradient.
/// Normalized vertex gradients pulled back through the skeleton give joint
/// gradients of order one, so the vertex-space rate would move an elbow only
/// a few degrees in a full run.
pub const POSE_LEARNING_RATE: f64 = 5e-3;

/// Fitting step. The reprojection energy is in squared pixels and its
/// curvature along the root rotation is around 1e5, so larger steps diverge.
pub const FIT_LEARNING_RATE: f64 = 1e-5;

/// Penalty weight when fitting. Smaller weights leave the iterates chattering
/// across the contact until the budget runs out; much larger ones overpower
/// the joint targets.
pub const FIT_SPT_WEIGHT: f64 = 3000.0;

impl OptimConfig {
    /// Defaults with the pose-space removal step.
    pub fn pose_removal() -> Self {
        OptimConfig {
            learning_rate: POSE_LEARNING_RATE,
            ..Default::default()
        }
    }

    /// Defaults with the fitting step and penalty weight.
    pub fn fitting() -> Self {
        OptimConfig {
            learning_rate: FIT_LEARNING_RATE,
            spt_weight: FIT_SPT_WEIGHT,
            ..Default::default()
        }
    }

    pub fn check(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be at least 1".into()));
        }
        if !(self.spt_weight >= 0.0) || !(self.tolerance >= 0.0) {
            return Err(Error::InvalidParameter(
                "spt_weight and tolerance must be non-negative".into(),
            ));
        }
        Ok(())
    }

    fn detector(&self) -> Detector {
        Detector::new(self.rays, self.axis)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// No intersecting vertex remains.
    SptZero,
    /// Fitting stalled (or hit zero energy) with the penalty at zero or off.
    Converged,
    MaxIters,
    /// The gradient vanished while intersections remain (every intersecting
    /// vertex had a degenerate fan or was unreachable by the pose).
    ZeroGradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub spt: f64,
    pub vout: usize,
    pub vin: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub e_j: Option<f64>,
    pub grad_norm: f64,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub schema: u32,
    pub run: String,
    pub config: OptimConfig,
    pub iterations: Vec<IterRecord>,
    pub termination: Termination,
    pub snapshots: Vec<String>,
}

impl RunTrace {
    fn new(run: &str, config: &OptimConfig) -> Self {
        RunTrace {
            schema: TRACE_SCHEMA,
            run: run.to_string(),
            config: config.clone(),
            iterations: Vec::new(),
            termination: Termination::MaxIters,
            snapshots: Vec::new(),
        }
    }

    pub fn final_record(&self) -> &IterRecord {
        self.iterations.last().expect("a trace has at least one record")
    }

    pub fn final_spt(&self) -> f64 {
        self.final_record().spt
    }

    pub fn spt_series(&self) -> Vec<f64> {
        self.iterations.iter().map(|r| r.spt).collect()
    }

    /// Share of consecutive pairs in which spt did not increase.
    pub fn non_increasing_fraction(&self) -> f64 {
        let s = self.spt_series();
        if s.len() < 2 {
            return 1.0;
        }
        let ok = s.windows(2).filter(|w| w[1] <= w[0]).count();
        ok as f64 / (s.len() - 1) as f64
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    fn snapshot(&mut self, cfg: &OptimConfig, iter: usize, mesh: &TriMesh) -> Result<()> {
        let Some(dir) = &cfg.snapshot_dir else {
            return Ok(());
        };
        let name = format!("iter_{iter}.obj");
        if self.snapshots.last() == Some(&name) {
            return Ok(());
        }
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_obj(mesh, dir.join(&name))?;
        self.snapshots.push(name);
        Ok(())
    }

    fn wants_snapshot(cfg: &OptimConfig, iter: usize) -> bool {
        cfg.snapshot_every > 0 && iter % cfg.snapshot_every == 0
    }
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

fn record(iter: usize, c: &Classification, e_j: Option<f64>, grad_norm: f64, start: Instant) -> Result<IterRecord> {
    let report = spt_value(c, c.num_vertices())?;
    Ok(IterRecord {
        iter,
        spt: report.spt,
        vout: report.count_vout,
        vin: report.count_vin,
        e_j,
        grad_norm,
        elapsed_ms: elapsed_ms(start),
    })
}

/// Per-iteration vertex step for the penalty gradient.
///
/// Unit gradients get `lr * diag * sqrt(N)`. Raw gradients (length squared)
/// get the same step divided by the mean fan magnitude of the starting
/// mesh, so on a uniform mesh both variants move vertices equally far and
/// any difference comes from the spread of triangle areas.
fn vertex_step(mesh: &TriMesh, cfg: &OptimConfig) -> f64 {
    let n = mesh.num_vertices() as f64;
    let unit = cfg.learning_rate * mesh.bbox_diagonal() * n.sqrt();
    if cfg.normalize_gradient {
        return unit;
    }
    let areas = area_vectors(mesh);
    let fans = mesh.vertex_faces();
    let mean = (0..mesh.num_vertices())
        .map(|v| fans.fan(v).iter().map(|&f| areas[f]).sum::<Vector3<f64>>().norm() / 3.0)
        .sum::<f64>()
        / n;
    if mean > 0.0 {
        unit / mean
    } else {
        unit
    }
}

/// Moves vertices down the penalty gradient until no intersection remains.
pub fn remove_vertex_space(mesh: &TriMesh, cfg: &OptimConfig) -> Result<(TriMesh, RunTrace)> {
    cfg.check()?;
    let report = mesh.validate();
    if !report.is_valid() {
        return Err(Error::InvalidMesh(format!("{} violations", report.violations.len())));
    }
    let detector = cfg.detector();
    let step = vertex_step(mesh, cfg);
    let mut trace = RunTrace::new("remove_vertex_space", cfg);
    let mut current = mesh.clone();
    for iter in 0..=cfg.max_iters {
        let start = Instant::now();
        let c = detector.classify(&current)?;
        let g = spt_gradient(&current, &c, cfg.normalize_gradient)?;
        trace.iterations.push(record(iter, &c, None, g.norm(), start)?);
        let done = if cfg.stop_when_spt_zero && c.num_intersecting() == 0 {
            Some(Termination::SptZero)
        } else if iter == cfg.max_iters {
            Some(Termination::MaxIters)
        } else if g.is_zero() && c.num_intersecting() > 0 {
            Some(Termination::ZeroGradient)
        } else {
            None
        };
        if RunTrace::wants_snapshot(cfg, iter) || done.is_some() {
            trace.snapshot(cfg, iter, &current)?;
        }
        if let Some(t) = done {
            trace.termination = t;
            break;
        }
        for (v, d) in current.vertices.iter_mut().zip(&g.vectors) {
            *v -= d * step;
        }
        trace.iterations.last_mut().unwrap().elapsed_ms = elapsed_ms(start);
    }
    Ok((current, trace))
}

/// Pose-space removal: `theta <- theta - lr * J^T grad`, shape frozen. Only
/// the joint rotations move; the global translation cannot change the
/// intersection and stays put.
pub fn remove_pose_space(
    model: &SkinnedModel,
    pose0: &PoseParams,
    shape: &ShapeParams,
    cfg: &OptimConfig,
) -> Result<(PoseParams, RunTrace)> {
    cfg.check()?;
    let detector = cfg.detector();
    let mut trace = RunTrace::new("remove_pose_space", cfg);
    let mut pose = pose0.clone();
    for iter in 0..=cfg.max_iters {
        let start = Instant::now();
        let jac = model.jacobian(&pose, shape)?;
        let mesh = model.template.with_vertices(model.skin(jac.kinematics()));
        let c = detector.classify(&mesh)?;
        let g = spt_gradient(&mesh, &c, cfg.normalize_gradient)?;
        let mut step = jac.pull_back(&g.vectors)?;
        step.translation = Vector3::zeros();
        trace.iterations.push(record(iter, &c, None, step.norm(), start)?);
        let done = if cfg.stop_when_spt_zero && c.num_intersecting() == 0 {
            Some(Termination::SptZero)
        } else if iter == cfg.max_iters {
            Some(Termination::MaxIters)
        } else if step.norm() == 0.0 && c.num_intersecting() > 0 {
            Some(Termination::ZeroGradient)
        } else {
            None
        };
        if RunTrace::wants_snapshot(cfg, iter) || done.is_some() {
            trace.snapshot(cfg, iter, &mesh)?;
        }
        if let Some(t) = done {
            trace.termination = t;
            break;
        }
        pose.axpy(-cfg.learning_rate, &step);
        pose.clamp_rotations(model.joint_limit);
        trace.iterations.last_mut().unwrap().elapsed_ms = elapsed_ms(start);
    }
    Ok((pose, trace))
}

/// Reprojection energy below which a fit counts as exact.
pub const EXACT_FIT_ENERGY: f64 = 1e-12;

/// Fits the pose to 2D joint targets by descending `E_J` plus, with
/// `use_spt`, the weighted penalty gradient pulled back to pose space.
///
/// The loop stops when the best `E_J` seen has not improved by more than
/// `cfg.tolerance` (relative) for `cfg.patience` iterations, at an iterate
/// whose penalty is zero when `use_spt` is on. The penalty is evaluated
/// every iteration either way so both variants report it.
pub fn fit_pose_2d(
    model: &SkinnedModel,
    shape: &ShapeParams,
    targets: &Targets,
    init: &PoseParams,
    cfg: &OptimConfig,
    use_spt: bool,
) -> Result<(PoseParams, RunTrace)> {
    cfg.check()?;
    let detector = cfg.detector();
    let run = if use_spt { "fit_re_spt" } else { "fit_re" };
    let mut trace = RunTrace::new(run, cfg);
    let mut pose = init.clone();
    let mut best = f64::INFINITY;
    let mut last_improvement = 0;
    for iter in 0..=cfg.max_iters {
        let start = Instant::now();
        let (e_j, mut grad) = model.reprojection_energy(&pose, shape, targets)?;
        let jac = model.jacobian(&pose, shape)?;
        let mesh = model.template.with_vertices(model.skin(jac.kinematics()));
        let c = detector.classify(&mesh)?;
        if use_spt && c.num_intersecting() > 0 {
            let g = spt_gradient(&mesh, &c, cfg.normalize_gradient)?;
            let pulled = jac.pull_back(&g.vectors)?;
            grad.axpy(cfg.spt_weight, &pulled);
        }
        grad.translation = Vector3::zeros();
        trace.iterations.push(record(iter, &c, Some(e_j), grad.norm(), start)?);

        if e_j < best * (1.0 - cfg.tolerance) {
            best = e_j;
            last_improvement = iter;
        }
        let clean = !use_spt || c.num_intersecting() == 0;
        let stalled = iter - last_improvement >= cfg.patience;
        let done = if clean && (e_j <= EXACT_FIT_ENERGY || stalled) {
            Some(Termination::Converged)
        } else if iter == cfg.max_iters {
            Some(Termination::MaxIters)
        } else {
            None
        };
        if RunTrace::wants_snapshot(cfg, iter) || done.is_some() {
            trace.snapshot(cfg, iter, &mesh)?;
        }
        if let Some(t) = done {
            trace.termination = t;
            break;
        }
        pose.axpy(-cfg.learning_rate, &grad);
        pose.clamp_rotations(model.joint_limit);
        trace.iterations.last_mut().unwrap().elapsed_ms = elapsed_ms(start);
    }
    Ok((pose, trace))
}

/// Mean pixel distance between projected joints and their targets.
pub fn mean_joint_error(
    model: &SkinnedModel,
    pose: &PoseParams,
    shape: &ShapeParams,
    targets: &Targets,
) -> Result<f64> {
    let e = model.joint_errors(pose, shape, targets)?;
    Ok(e.iter().sum::<f64>() / e.len() as f64)
}
