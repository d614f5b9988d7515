//! Closed triangle meshes.
//!
//! A [`TriMesh`] is a plain vertex array plus a list of index triples wound
//! counter-clockwise when seen from outside. The penalty machinery requires the
//! surface to be closed and consistently oriented, but components do not have to
//! be connected: two bodies merged into one mesh are still a valid input.

mod generate;
mod obj;
mod validate;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::NeumaierSum;

pub use generate::{generate, BentTube, MeshKind, PathSample, Ring, Tube};
#[allow(unused_imports)]
pub(crate) use generate::straight_path;
pub use obj::{load_obj, parse_obj, save_obj, write_obj};
pub use validate::{ValidationReport, Violation};

/// Relative tolerance, against the squared bbox diagonal, below which a face
/// counts as zero-area.
pub const DEGENERATE_AREA_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriMesh {
    pub vertices: Vec<Point3<f64>>,
    pub faces: Vec<[usize; 3]>,
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Point3<f64>,
    pub max: Point3<f64>,
}

impl Aabb {
    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Point3<f64>>) -> Option<Self> {
        let mut iter = points.into_iter();
        let first = *iter.next()?;
        let mut bb = Aabb {
            min: first,
            max: first,
        };
        for p in iter {
            bb.include(p);
        }
        Some(bb)
    }

    pub fn include(&mut self, p: &Point3<f64>) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    pub fn center(&self) -> Point3<f64> {
        nalgebra::center(&self.min, &self.max)
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }
}

/// Per-face geometry: the `S_l` and `n_l` of the vertex-fan gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceGeometry {
    pub unit_normal: Vector3<f64>,
    pub area: f64,
    pub centroid: Point3<f64>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Point3<f64>>, faces: Vec<[usize; 3]>) -> Self {
        TriMesh { vertices, faces }
    }

    pub fn empty() -> Self {
        TriMesh::new(Vec::new(), Vec::new())
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn bbox(&self) -> Option<Aabb> {
        Aabb::from_points(&self.vertices)
    }

    /// Length of the bounding-box diagonal, 0 for an empty mesh.
    pub fn bbox_diagonal(&self) -> f64 {
        self.bbox().map_or(0.0, |b| b.diagonal())
    }

    pub fn face_points(&self, face: usize) -> [Point3<f64>; 3] {
        let [a, b, c] = self.faces[face];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Twice the area times the unit normal, i.e. the raw edge cross product.
    pub fn face_cross(&self, face: usize) -> Vector3<f64> {
        let [a, b, c] = self.face_points(face);
        (b - a).cross(&(c - a))
    }

    /// Area-weighted normal `S_l * n_l`.
    pub fn area_vector(&self, face: usize) -> Vector3<f64> {
        self.face_cross(face) * 0.5
    }

    pub fn face_geometry(&self, face: usize) -> Result<FaceGeometry> {
        if face >= self.faces.len() {
            return Err(Error::OutOfBounds {
                index: face,
                size: self.faces.len(),
            });
        }
        let cross = self.face_cross(face);
        let mag = cross.norm();
        let diag = self.bbox_diagonal();
        if mag == 0.0 || mag < DEGENERATE_AREA_TOL * diag * diag {
            return Err(Error::DegenerateFace { face });
        }
        let [a, b, c] = self.face_points(face);
        Ok(FaceGeometry {
            unit_normal: cross / mag,
            area: 0.5 * mag,
            centroid: Point3::from((a.coords + b.coords + c.coords) / 3.0),
        })
    }

    /// Faces incident to every vertex, in CSR form.
    pub fn vertex_faces(&self) -> VertexFaces {
        VertexFaces::build(self)
    }

    /// Faces that contain `vertex`, in ascending order.
    pub fn vertex_fan(&self, vertex: usize) -> Result<Vec<usize>> {
        if vertex >= self.vertices.len() {
            return Err(Error::OutOfBounds {
                index: vertex,
                size: self.vertices.len(),
            });
        }
        Ok(self
            .faces
            .iter()
            .enumerate()
            .filter(|(_, f)| f.contains(&vertex))
            .map(|(i, _)| i)
            .collect())
    }

    /// Enclosed volume, positive for outward-oriented closed surfaces.
    ///
    /// Tetrahedra are taken against the bbox center and summed with
    /// compensation, so differences between nearby meshes stay accurate.
    pub fn signed_volume(&self) -> f64 {
        let Some(bb) = self.bbox() else {
            return 0.0;
        };
        let c = bb.center();
        let mut sum = NeumaierSum::default();
        for &[a, b, d] in &self.faces {
            let pa = self.vertices[a] - c;
            let pb = self.vertices[b] - c;
            let pd = self.vertices[d] - c;
            sum.add(pa.dot(&pb.cross(&pd)));
        }
        sum.value() / 6.0
    }

    pub fn validate(&self) -> ValidationReport {
        validate::validate(self)
    }

    /// Disjoint union; face indices of later meshes are re-based.
    pub fn merge(meshes: &[TriMesh]) -> TriMesh {
        let mut out = TriMesh::new(
            Vec::with_capacity(meshes.iter().map(|m| m.vertices.len()).sum()),
            Vec::with_capacity(meshes.iter().map(|m| m.faces.len()).sum()),
        );
        for m in meshes {
            let base = out.vertices.len();
            out.vertices.extend_from_slice(&m.vertices);
            out.faces
                .extend(m.faces.iter().map(|f| [f[0] + base, f[1] + base, f[2] + base]));
        }
        out
    }

    pub fn translated(&self, t: Vector3<f64>) -> TriMesh {
        self.map_vertices(|p| p + t)
    }

    pub fn scaled(&self, s: f64) -> TriMesh {
        self.map_vertices(|p| Point3::from(p.coords * s))
    }

    pub fn map_vertices(&self, f: impl Fn(&Point3<f64>) -> Point3<f64>) -> TriMesh {
        TriMesh::new(self.vertices.iter().map(f).collect(), self.faces.clone())
    }

    /// Same topology with new positions.
    pub fn with_vertices(&self, vertices: Vec<Point3<f64>>) -> TriMesh {
        assert_eq!(vertices.len(), self.vertices.len());
        TriMesh::new(vertices, self.faces.clone())
    }

    /// Reverses the winding of every face.
    pub fn flipped(&self) -> TriMesh {
        TriMesh::new(
            self.vertices.clone(),
            self.faces.iter().map(|&[a, b, c]| [a, c, b]).collect(),
        )
    }

    /// Number of unique undirected edges.
    pub fn num_edges(&self) -> usize {
        let mut edges: Vec<(usize, usize)> = self
            .faces
            .iter()
            .flat_map(|f| (0..3).map(move |k| ordered(f[k], f[(k + 1) % 3])))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges.len()
    }

    /// Connected components over face adjacency; returns a component id per
    /// vertex (isolated vertices get their own id) and the component count.
    pub fn components(&self) -> (Vec<usize>, usize) {
        let n = self.vertices.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for f in &self.faces {
            for k in 1..3 {
                let (ra, rb) = (find(&mut parent, f[0]), find(&mut parent, f[k]));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
        let mut ids = vec![usize::MAX; n];
        let mut count = 0;
        let mut out = vec![0; n];
        for v in 0..n {
            let r = find(&mut parent, v);
            if ids[r] == usize::MAX {
                ids[r] = count;
                count += 1;
            }
            out[v] = ids[r];
        }
        (out, count)
    }

    /// One-ring vertex neighbours, sorted and deduplicated.
    pub fn vertex_neighbors(&self) -> Vec<Vec<usize>> {
        let mut nbrs = vec![Vec::new(); self.vertices.len()];
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                nbrs[a].push(b);
                nbrs[b].push(a);
            }
        }
        for n in &mut nbrs {
            n.sort_unstable();
            n.dedup();
        }
        nbrs
    }
}

pub(crate) fn ordered(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Vertex-to-face incidence in compressed row form.
#[derive(Debug, Clone)]
pub struct VertexFaces {
    offsets: Vec<usize>,
    faces: Vec<usize>,
}

impl VertexFaces {
    fn build(mesh: &TriMesh) -> Self {
        let n = mesh.vertices.len();
        let mut counts = vec![0usize; n + 1];
        for f in &mesh.faces {
            for &v in f {
                counts[v + 1] += 1;
            }
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let offsets = counts.clone();
        let mut cursor = counts;
        let mut faces = vec![0; offsets[n]];
        for (fi, f) in mesh.faces.iter().enumerate() {
            for &v in f {
                faces[cursor[v]] = fi;
                cursor[v] += 1;
            }
        }
        VertexFaces { offsets, faces }
    }

    pub fn fan(&self, vertex: usize) -> &[usize] {
        &self.faces[self.offsets[vertex]..self.offsets[vertex + 1]]
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
