//! Per-iteration timing of detection plus gradient assembly.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::detector::{Detector, Rays, ViewAxis};
use crate::error::{Error, Result};
use crate::fixtures::stacked;
use crate::mesh::TriMesh;
use crate::numeric::{linear_fit, median, LinearFit};
use crate::penalty::spt_gradient;

/// Published timing for one body at 512x512 rays on other hardware. Echoed
/// in reports for context; never compared against.
pub const REFERENCE_MS: f64 = 56.76;

/// Spacing along the view axis between stacked bodies.
pub const STACK_SPACING: f64 = 0.4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCell {
    pub rays: Rays,
    pub bodies: usize,
    pub triangles: usize,
    pub median_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub reps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFitStats {
    /// Fit of median time against body count.
    pub per_body: LinearFit,
    /// The same data against triangle count (ms per triangle).
    pub per_triangle: LinearFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchTable {
    pub schema: u32,
    pub warmup: usize,
    pub reps: usize,
    pub threads: usize,
    pub cells: Vec<BenchCell>,
    /// Median time at the largest ray count over the smallest, one body.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ray_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub body_fit: Option<LinearFitStats>,
    /// See [`REFERENCE_MS`].
    pub reference_ms: f64,
}

/// Times `reps` iterations after `warmup` untimed ones; milliseconds.
pub fn bench_mesh(mesh: &TriMesh, rays: Rays, axis: ViewAxis, warmup: usize, reps: usize) -> Result<Vec<f64>> {
    let detector = Detector::new(rays, axis);
    let mut times = Vec::with_capacity(reps);
    for k in 0..warmup + reps {
        let start = Instant::now();
        let c = detector.classify(mesh)?;
        let g = spt_gradient(mesh, &c, true)?;
        std::hint::black_box(&g);
        if k >= warmup {
            times.push(start.elapsed().as_secs_f64() * 1e3);
        }
    }
    Ok(times)
}

/// Runs the rays x bodies matrix on copies of `body` stacked along the view
/// axis.
pub fn bench(
    body: &TriMesh,
    rays_list: &[Rays],
    bodies_list: &[usize],
    warmup: usize,
    reps: usize,
) -> Result<BenchTable> {
    if rays_list.is_empty() || bodies_list.is_empty() || reps == 0 {
        return Err(Error::InvalidParameter(
            "bench needs at least one ray grid, one body count and one repetition".into(),
        ));
    }
    if bodies_list.contains(&0) {
        return Err(Error::InvalidParameter("body counts must be positive".into()));
    }
    let mut cells = Vec::new();
    for &bodies in bodies_list {
        let mesh = stacked(body, bodies, STACK_SPACING);
        for &rays in rays_list {
            let t = bench_mesh(&mesh, rays, ViewAxis::PosZ, warmup, reps)?;
            cells.push(BenchCell {
                rays,
                bodies,
                triangles: mesh.num_faces(),
                median_ms: median(&t),
                min_ms: t.iter().copied().fold(f64::INFINITY, f64::min),
                max_ms: t.iter().copied().fold(0.0, f64::max),
                reps,
            });
        }
    }
    Ok(BenchTable {
        schema: super::TRACE_SCHEMA,
        warmup,
        reps,
        threads: rayon::current_num_threads(),
        ray_ratio: ray_ratio(&cells),
        body_fit: body_fit(&cells),
        cells,
        reference_ms: REFERENCE_MS,
    })
}

fn ray_ratio(cells: &[BenchCell]) -> Option<f64> {
    let one: Vec<&BenchCell> = cells.iter().filter(|c| c.bodies == 1).collect();
    let lo = one.iter().min_by_key(|c| c.rays.count())?;
    let hi = one.iter().max_by_key(|c| c.rays.count())?;
    (hi.rays != lo.rays).then(|| hi.median_ms / lo.median_ms)
}

fn body_fit(cells: &[BenchCell]) -> Option<LinearFitStats> {
    // Fit at the most common ray grid, the one every body count was run at.
    let rays = cells.iter().map(|c| c.rays).max_by_key(|r| {
        cells.iter().filter(|c| c.rays == *r).count()
    })?;
    let row: Vec<&BenchCell> = cells.iter().filter(|c| c.rays == rays).collect();
    let ys: Vec<f64> = row.iter().map(|c| c.median_ms).collect();
    let bodies: Vec<f64> = row.iter().map(|c| c.bodies as f64).collect();
    let tris: Vec<f64> = row.iter().map(|c| c.triangles as f64).collect();
    Some(LinearFitStats {
        per_body: linear_fit(&bodies, &ys)?,
        per_triangle: linear_fit(&tris, &ys)?,
    })
}
