//! Ray-sampled self-intersection detection.
//!
//! Rays leave the pixel centres of an orthographic screen, every triangle is
//! scan-converted into the pixels it covers, and each pixel's depth-sorted
//! crossings are walked front to back with a signed counter. A crossing seen
//! while the counter says "already inside" marks its triangle's vertices as
//! interpenetrating.

mod grid;
mod raster;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mesh::TriMesh;

pub use grid::{fit_grid, DetectionGrid, Rays, ViewAxis};
pub use raster::{rasterize, Fragment, FragmentBuffer, PARALLEL_AREA_TOL};

const PIXELS_PER_TASK: usize = 1 << 14;

/// Vertex class. The derived order is the conflict precedence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    #[default]
    V0,
    Vin,
    Vout,
}

impl Label {
    pub fn is_intersecting(self) -> bool {
        self != Label::V0
    }
}

/// Label given to a fragment's triangle after the counter update.
#[inline]
pub fn label_after(front_facing: bool, counter: i32) -> Label {
    let neutral = if front_facing { 1 } else { 0 };
    match counter.cmp(&neutral) {
        std::cmp::Ordering::Equal => Label::V0,
        std::cmp::Ordering::Greater => Label::Vout,
        std::cmp::Ordering::Less => Label::Vin,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub skipped_faces: Vec<usize>,
    /// Pixels whose walk ended with a nonzero counter.
    pub nonzero_terminal_counters: usize,
    pub coincident_depths: usize,
    /// Fragments whose counter left the range a two-layer overlap produces.
    pub deep_nesting: usize,
    pub fragments: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub labels: Vec<Label>,
    pub count_v0: usize,
    pub count_vout: usize,
    pub count_vin: usize,
    /// Vertices no fragment touched. Labelled V0 but not counted in `count_v0`.
    pub unseen: Vec<usize>,
    pub diagnostics: Diagnostics,
}

impl Classification {
    pub fn num_vertices(&self) -> usize {
        self.labels.len()
    }

    pub fn num_intersecting(&self) -> usize {
        self.count_vout + self.count_vin
    }

    /// All-V0 result for a mesh with no fragments at all.
    pub fn clean(n: usize) -> Self {
        Classification {
            labels: vec![Label::V0; n],
            count_v0: n,
            count_vout: 0,
            count_vin: 0,
            unseen: Vec::new(),
            diagnostics: Diagnostics::default(),
        }
    }

    pub fn report(&self, rays: Rays, axis: ViewAxis, with_labels: bool) -> DetectorReport {
        DetectorReport {
            rays,
            axis,
            counts: Counts {
                v0: self.count_v0,
                vout: self.count_vout,
                vin: self.count_vin,
                unseen: self.unseen.len(),
            },
            spt: if self.labels.is_empty() {
                0.0
            } else {
                self.num_intersecting() as f64 / self.labels.len() as f64
            },
            skipped_faces: self.diagnostics.skipped_faces.len(),
            nonzero_terminal_counters: self.diagnostics.nonzero_terminal_counters,
            coincident_depths: self.diagnostics.coincident_depths,
            deep_nesting: self.diagnostics.deep_nesting,
            labels: with_labels.then(|| self.labels.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub v0: usize,
    pub vout: usize,
    pub vin: usize,
    pub unseen: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorReport {
    pub rays: Rays,
    pub axis: ViewAxis,
    pub counts: Counts,
    pub spt: f64,
    pub skipped_faces: usize,
    pub nonzero_terminal_counters: usize,
    pub coincident_depths: usize,
    pub deep_nesting: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub labels: Option<Vec<Label>>,
}

/// Per-face label, `None` when the face produced no fragment.
type FaceLabels = Vec<Option<Label>>;

#[derive(Default)]
struct WalkStats {
    nonzero_terminal: usize,
    deep: usize,
}

/// Walks one pixel's depth-sorted list. Returns the terminal counter.
pub fn walk_pixel(list: &[Fragment], mut mark: impl FnMut(usize, Label)) -> (i32, usize) {
    let mut counter = 0i32;
    let mut deep = 0;
    for f in list {
        counter += if f.front_facing { 1 } else { -1 };
        if !(-1..=2).contains(&counter) {
            deep += 1;
        }
        mark(f.face as usize, label_after(f.front_facing, counter));
    }
    (counter, deep)
}

fn walk_range(buf: &FragmentBuffer, pixels: std::ops::Range<usize>, labels: &mut FaceLabels) -> WalkStats {
    let mut stats = WalkStats::default();
    let offsets = buf.offsets();
    let frags = buf.fragments();
    for px in pixels {
        let list = &frags[offsets[px] as usize..offsets[px + 1] as usize];
        if list.is_empty() {
            continue;
        }
        let (end, deep) = walk_pixel(list, |face, label| {
            let slot = &mut labels[face];
            *slot = (*slot).max(Some(label));
        });
        stats.deep += deep;
        if end != 0 {
            stats.nonzero_terminal += 1;
        }
    }
    stats
}

/// Runs the counter walk over every pixel and resolves per-vertex labels.
///
/// Pixel ranges are walked in parallel into private per-face label tables that
/// are merged with a precedence max, which is order independent.
pub fn walk_and_classify(mesh: &TriMesh, buf: &FragmentBuffer) -> Classification {
    let n_faces = mesh.num_faces();
    let n_pixels = buf.num_pixels();
    let (face_labels, stats) = if rayon::current_num_threads() <= 1 || n_pixels <= PIXELS_PER_TASK {
        let mut labels = vec![None; n_faces];
        let stats = walk_range(buf, 0..n_pixels, &mut labels);
        (labels, stats)
    } else {
        let starts: Vec<usize> = (0..n_pixels).step_by(PIXELS_PER_TASK).collect();
        starts
            .into_par_iter()
            .map(|s| {
                let mut labels = vec![None; n_faces];
                let stats = walk_range(buf, s..(s + PIXELS_PER_TASK).min(n_pixels), &mut labels);
                (labels, stats)
            })
            .reduce(
                || (vec![None; n_faces], WalkStats::default()),
                |(mut la, sa), (lb, sb)| {
                    for (a, b) in la.iter_mut().zip(lb) {
                        *a = (*a).max(b);
                    }
                    (
                        la,
                        WalkStats {
                            nonzero_terminal: sa.nonzero_terminal + sb.nonzero_terminal,
                            deep: sa.deep + sb.deep,
                        },
                    )
                },
            )
    };

    let mut vertex_labels: Vec<Option<Label>> = vec![None; mesh.num_vertices()];
    for (face, label) in mesh.faces.iter().zip(&face_labels) {
        if let Some(l) = label {
            for &v in face {
                vertex_labels[v] = vertex_labels[v].max(Some(*l));
            }
        }
    }

    let mut out = Classification {
        labels: Vec::with_capacity(vertex_labels.len()),
        count_v0: 0,
        count_vout: 0,
        count_vin: 0,
        unseen: Vec::new(),
        diagnostics: Diagnostics {
            skipped_faces: buf.skipped_faces.clone(),
            nonzero_terminal_counters: stats.nonzero_terminal,
            coincident_depths: buf.coincident_depths,
            deep_nesting: stats.deep,
            fragments: buf.num_fragments(),
        },
    };
    for (v, label) in vertex_labels.into_iter().enumerate() {
        match label {
            None => out.unseen.push(v),
            Some(Label::V0) => out.count_v0 += 1,
            Some(Label::Vout) => out.count_vout += 1,
            Some(Label::Vin) => out.count_vin += 1,
        }
        out.labels.push(label.unwrap_or(Label::V0));
    }
    if out.diagnostics.nonzero_terminal_counters > 0 {
        tracing::warn!(
            pixels = out.diagnostics.nonzero_terminal_counters,
            "counter walk ended nonzero; surface may not be closed"
        );
    }
    out
}

/// Reusable detector configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Detector {
    pub rays: Rays,
    pub axis: ViewAxis,
}

impl Detector {
    pub fn new(rays: Rays, axis: ViewAxis) -> Self {
        Detector { rays, axis }
    }

    /// Classifies every vertex. The mesh is assumed to pass `validate`; this
    /// is not re-checked here because the optimizer calls it every iteration.
    pub fn classify(&self, mesh: &TriMesh) -> Result<Classification> {
        let grid = fit_grid(mesh, self.rays, self.axis)?;
        let buf = rasterize(mesh, &grid);
        Ok(walk_and_classify(mesh, &buf))
    }
}

pub fn classify(mesh: &TriMesh, rays: Rays, axis: ViewAxis) -> Result<Classification> {
    Detector::new(rays, axis).classify(mesh)
}
