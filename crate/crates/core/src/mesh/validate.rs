use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{ordered, TriMesh, DEGENERATE_AREA_TOL};

/// One violated admissibility condition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    IndexOutOfRange { face: usize, index: usize },
    RepeatedIndex { face: usize },
    DegenerateFace { face: usize },
    /// Edge used by a single face: the surface is not closed.
    BoundaryEdge { edge: (usize, usize), face: usize },
    /// Edge shared by more than two faces.
    NonManifoldEdge { edge: (usize, usize), faces: Vec<usize> },
    /// Both incident faces traverse the edge in the same direction.
    OrientationConflict { edge: (usize, usize), faces: [usize; 2] },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, pred: impl Fn(&Violation) -> bool) -> usize {
        self.violations.iter().filter(|v| pred(v)).count()
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_valid() {
            return write!(f, "valid closed oriented mesh");
        }
        write!(f, "{} violation(s)", self.violations.len())?;
        for v in self.violations.iter().take(8) {
            write!(f, "; {v:?}")?;
        }
        Ok(())
    }
}

pub(super) fn validate(mesh: &TriMesh) -> ValidationReport {
    let n = mesh.vertices.len();
    let mut violations = Vec::new();
    let diag = mesh.bbox_diagonal();
    let area_tol = DEGENERATE_AREA_TOL * diag * diag;

    // undirected edge -> (face, traversed low-to-high)
    let mut edges: HashMap<(usize, usize), Vec<(usize, bool)>> = HashMap::new();
    for (fi, f) in mesh.faces.iter().enumerate() {
        if let Some(&bad) = f.iter().find(|&&i| i >= n) {
            violations.push(Violation::IndexOutOfRange { face: fi, index: bad });
            continue;
        }
        if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
            violations.push(Violation::RepeatedIndex { face: fi });
            continue;
        }
        let cross = mesh.face_cross(fi).norm();
        if cross == 0.0 || cross < area_tol {
            violations.push(Violation::DegenerateFace { face: fi });
        }
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            edges.entry(ordered(a, b)).or_default().push((fi, a < b));
        }
    }

    let mut keys: Vec<_> = edges.keys().copied().collect();
    keys.sort_unstable();
    for edge in keys {
        let uses = &edges[&edge];
        match uses.as_slice() {
            [(face, _)] => violations.push(Violation::BoundaryEdge { edge, face: *face }),
            [(f0, d0), (f1, d1)] => {
                if d0 == d1 {
                    violations.push(Violation::OrientationConflict {
                        edge,
                        faces: [*f0, *f1],
                    });
                }
            }
            _ => violations.push(Violation::NonManifoldEdge {
                edge,
                faces: uses.iter().map(|u| u.0).collect(),
            }),
        }
    }
    ValidationReport { violations }
}
