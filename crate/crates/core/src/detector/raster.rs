use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grid::DetectionGrid;
use crate::mesh::TriMesh;

/// Projected area, relative to the screen area, below which a triangle is
/// treated as parallel to the rays.
pub const PARALLEL_AREA_TOL: f64 = 1e-14;

const FACES_PER_TASK: usize = 4096;

/// One ray/triangle crossing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fragment {
    pub face: u32,
    pub depth: f64,
    pub front_facing: bool,
}

impl Fragment {
    pub fn new(face: usize, depth: f64, front_facing: bool) -> Self {
        Fragment {
            face: face as u32,
            depth,
            front_facing,
        }
    }

    pub fn front(face: usize, depth: f64) -> Self {
        Fragment::new(face, depth, true)
    }

    pub fn back(face: usize, depth: f64) -> Self {
        Fragment::new(face, depth, false)
    }
}

/// Per-pixel fragment lists packed into one buffer; pixel `i` owns
/// `fragments[offsets[i]..offsets[i + 1]]`, sorted by depth then face.
#[derive(Debug, Clone)]
pub struct FragmentBuffer {
    offsets: Vec<u32>,
    fragments: Vec<Fragment>,
    /// Faces dropped as parallel to the rays.
    pub skipped_faces: Vec<usize>,
    /// Adjacent fragments in one list with exactly equal depth.
    pub coincident_depths: usize,
}

impl FragmentBuffer {
    /// Builds a buffer from explicit per-pixel lists, sorting each one.
    pub fn from_lists(lists: Vec<Vec<Fragment>>) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        offsets.push(0u32);
        let mut fragments = Vec::new();
        for list in lists {
            fragments.extend(list);
            offsets.push(fragments.len() as u32);
        }
        let mut buf = FragmentBuffer {
            offsets,
            fragments,
            skipped_faces: Vec::new(),
            coincident_depths: 0,
        };
        buf.sort_lists();
        buf
    }

    pub fn num_pixels(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_fragments(&self) -> usize {
        self.fragments.len()
    }

    pub fn pixel(&self, index: usize) -> &[Fragment] {
        &self.fragments[self.offsets[index] as usize..self.offsets[index + 1] as usize]
    }

    pub fn pixels(&self) -> impl Iterator<Item = &[Fragment]> + '_ {
        self.offsets
            .windows(2)
            .map(|w| &self.fragments[w[0] as usize..w[1] as usize])
    }

    pub(crate) fn offsets(&self) -> &[u32] {
        &self.offsets
    }

    pub(crate) fn fragments(&self) -> &[Fragment] {
        &self.fragments
    }

    fn sort_lists(&mut self) {
        let mut coincident = 0;
        for w in self.offsets.windows(2) {
            let list = &mut self.fragments[w[0] as usize..w[1] as usize];
            if list.len() < 2 {
                continue;
            }
            list.sort_unstable_by(|a, b| a.depth.total_cmp(&b.depth).then(a.face.cmp(&b.face)));
            coincident += list.windows(2).filter(|p| p[0].depth == p[1].depth).count();
        }
        self.coincident_depths = coincident;
    }
}

/// Vertex in continuous pixel coordinates plus depth.
#[derive(Clone, Copy)]
struct ScreenVertex {
    x: f64,
    y: f64,
    depth: f64,
}

/// Edge function of the directed edge `p -> q` at `(x, y)`: positive on its
/// left. Always evaluated with the lower vertex index first and negated when
/// needed, so the two faces sharing an edge see bit-identical magnitudes.
#[derive(Clone, Copy)]
struct Edge {
    // E(x, y) = a * x + b * y + c, written in the canonical direction.
    ox: f64,
    oy: f64,
    dx: f64,
    dy: f64,
    sign: f64,
    owns_zero: bool,
}

impl Edge {
    fn new(verts: &[ScreenVertex], ip: usize, iq: usize) -> Self {
        let (lo, hi, sign) = if ip < iq { (ip, iq, 1.0) } else { (iq, ip, -1.0) };
        let (p, q) = (verts[lo], verts[hi]);
        let (dx, dy) = (q.x - p.x, q.y - p.y);
        // Direction as traversed by this face.
        let (tdx, tdy) = (sign * dx, sign * dy);
        Edge {
            ox: p.x,
            oy: p.y,
            dx,
            dy,
            sign,
            // Top-left ownership for a counter-clockwise triangle in a y-up frame.
            owns_zero: tdy < 0.0 || (tdy == 0.0 && tdx < 0.0),
        }
    }

    #[inline]
    fn eval(&self, x: f64, y: f64) -> f64 {
        self.sign * (self.dx * (y - self.oy) - self.dy * (x - self.ox))
    }

    #[inline]
    fn inside(&self, e: f64) -> bool {
        e > 0.0 || (e == 0.0 && self.owns_zero)
    }

    /// Column interval `[lo, hi]` (continuous) where the edge function is
    /// non-negative on row `y`, widened by one pixel to absorb rounding.
    fn span(&self, y: f64) -> (f64, f64) {
        // E(x) = k * x + m along the row.
        let k = -self.sign * self.dy;
        let m = self.sign * (self.dx * (y - self.oy) + self.dy * self.ox);
        // Nearly horizontal edges amplify rounding in the root.
        let slack = || {
            1.0 + 1e-8 * (self.dx.abs() * (y - self.oy).abs() + (self.dy * self.ox).abs()) / k.abs()
        };
        if k > 0.0 {
            (-m / k - slack(), f64::INFINITY)
        } else if k < 0.0 {
            (f64::NEG_INFINITY, -m / k + slack())
        } else if m >= 0.0 {
            (f64::NEG_INFINITY, f64::INFINITY)
        } else {
            (f64::INFINITY, f64::NEG_INFINITY)
        }
    }
}

/// Scan-converts every face into `(pixel, fragment)` pairs, then buckets them
/// per pixel. Faces are processed in parallel chunks whose outputs are
/// concatenated in face order, so the result does not depend on scheduling.
pub fn rasterize(mesh: &TriMesh, grid: &DetectionGrid) -> FragmentBuffer {
    let verts: Vec<ScreenVertex> = mesh
        .vertices
        .iter()
        .map(|p| {
            let (u, v, depth) = grid.view_axis.project(p);
            let (x, y) = grid.to_pixel(u, v);
            ScreenVertex { x, y, depth }
        })
        .collect();
    // Area threshold in pixel units: 1e-14 of the whole screen.
    let min_area = PARALLEL_AREA_TOL * grid.num_pixels() as f64;

    let chunks: Vec<(Vec<(u32, Fragment)>, Vec<usize>)> = mesh
        .faces
        .par_chunks(FACES_PER_TASK)
        .enumerate()
        .map(|(ci, faces)| {
            let mut out = Vec::new();
            let mut skipped = Vec::new();
            for (k, face) in faces.iter().enumerate() {
                let fi = ci * FACES_PER_TASK + k;
                if !scan_face(&verts, face, fi, grid, min_area, &mut out) {
                    skipped.push(fi);
                }
            }
            (out, skipped)
        })
        .collect();

    let n_pixels = grid.num_pixels();
    let mut offsets = vec![0u32; n_pixels + 1];
    let mut skipped_faces = Vec::new();
    for (frags, skipped) in &chunks {
        for (px, _) in frags {
            offsets[*px as usize + 1] += 1;
        }
        skipped_faces.extend_from_slice(skipped);
    }
    for i in 0..n_pixels {
        offsets[i + 1] += offsets[i];
    }
    let total = offsets[n_pixels] as usize;
    let mut cursor = offsets.clone();
    let mut fragments = vec![Fragment::front(0, 0.0); total];
    for (frags, _) in &chunks {
        for &(px, frag) in frags {
            let slot = &mut cursor[px as usize];
            fragments[*slot as usize] = frag;
            *slot += 1;
        }
    }
    drop(chunks);

    let mut buf = FragmentBuffer {
        offsets,
        fragments,
        skipped_faces,
        coincident_depths: 0,
    };
    buf.sort_lists();
    buf
}

/// Emits the fragments of one face. Returns false when the face was skipped
/// as parallel to the rays.
fn scan_face(
    verts: &[ScreenVertex],
    face: &[usize; 3],
    fi: usize,
    grid: &DetectionGrid,
    min_area: f64,
    out: &mut Vec<(u32, Fragment)>,
) -> bool {
    let [a, b, c] = *face;
    let (pa, pb, pc) = (verts[a], verts[b], verts[c]);
    let signed2 = (pb.x - pa.x) * (pc.y - pa.y) - (pb.y - pa.y) * (pc.x - pa.x);
    if signed2 == 0.0 || 0.5 * signed2.abs() < min_area {
        return false;
    }
    let front = signed2 < 0.0;
    // Counter-clockwise order on screen.
    let order = if front { [a, c, b] } else { [a, b, c] };
    let edges = [
        Edge::new(verts, order[1], order[2]),
        Edge::new(verts, order[2], order[0]),
        Edge::new(verts, order[0], order[1]),
    ];
    let d = [verts[order[0]].depth, verts[order[1]].depth, verts[order[2]].depth];

    let xmin = pa.x.min(pb.x).min(pc.x);
    let xmax = pa.x.max(pb.x).max(pc.x);
    let ymin = pa.y.min(pb.y).min(pc.y);
    let ymax = pa.y.max(pb.y).max(pc.y);
    let r0 = ymin.ceil().max(0.0) as i64;
    let r1 = (ymax.floor() as i64).min(grid.rows as i64 - 1);
    let cmax = grid.cols as i64 - 1;
    let c_lo = xmin.ceil().max(0.0) as i64;
    let c_hi = (xmax.floor() as i64).min(cmax);
    if r0 > r1 || c_lo > c_hi {
        return true;
    }

    for row in r0..=r1 {
        let y = row as f64;
        let (mut lo, mut hi) = (xmin, xmax);
        for e in &edges {
            let (l, h) = e.span(y);
            lo = lo.max(l);
            hi = hi.min(h);
        }
        let c0 = (lo.ceil() as i64).max(c_lo);
        let c1 = (hi.floor() as i64).min(c_hi);
        for col in c0..=c1 {
            let x = col as f64;
            let e0 = edges[0].eval(x, y);
            let e1 = edges[1].eval(x, y);
            let e2 = edges[2].eval(x, y);
            if edges[0].inside(e0) && edges[1].inside(e1) && edges[2].inside(e2) {
                let sum = e0 + e1 + e2;
                let depth = (e0 * d[0] + e1 * d[1] + e2 * d[2]) / sum;
                let px = row as usize * grid.cols + col as usize;
                out.push((px as u32, Fragment::new(fi, depth, front)));
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{fit_grid, Rays, ViewAxis};
    use crate::mesh::{generate, MeshKind};
    use nalgebra::Point3;

    fn brute_force_count(mesh: &TriMesh, grid: &DetectionGrid, face: usize) -> usize {
        // Plain barycentric containment, strict interior only.
        let p: Vec<(f64, f64)> = mesh.faces[face]
            .iter()
            .map(|&i| {
                let (u, v, _) = grid.view_axis.project(&mesh.vertices[i]);
                (u, v)
            })
            .collect();
        let cross = |a: (f64, f64), b: (f64, f64), c: (f64, f64)| {
            (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
        };
        let mut n = 0;
        for r in 0..grid.rows {
            for c in 0..grid.cols {
                let q = grid.pixel_center(r, c);
                let s = [cross(p[0], p[1], q), cross(p[1], p[2], q), cross(p[2], p[0], q)];
                if s.iter().all(|&x| x > 0.0) || s.iter().all(|&x| x < 0.0) {
                    n += 1;
                }
            }
        }
        n
    }

    fn single_triangle() -> TriMesh {
        TriMesh::new(
            vec![
                Point3::new(0.013, 0.021, 0.0),
                Point3::new(0.917, 0.113, 0.5),
                Point3::new(0.311, 0.871, 1.0),
            ],
            vec![[0, 1, 2]],
        )
    }

    #[test]
    fn single_triangle_fragment_count() {
        let m = single_triangle();
        for n in [16, 37, 64] {
            let g = fit_grid(&m, Rays::square(n), ViewAxis::PosZ).unwrap();
            let buf = rasterize(&m, &g);
            assert_eq!(buf.num_fragments(), brute_force_count(&m, &g, 0), "n={n}");
            assert!(buf.fragments().iter().all(|f| !f.front_facing));
        }
    }

    #[test]
    fn depth_is_barycentric() {
        // Plane z = x + 2y.
        let m = single_triangle().map_vertices(|p| Point3::new(p.x, p.y, p.x + 2.0 * p.y));
        let g = fit_grid(&m, Rays::square(32), ViewAxis::PosZ).unwrap();
        let buf = rasterize(&m, &g);
        for r in 0..g.rows {
            for c in 0..g.cols {
                for f in buf.pixel(r * g.cols + c) {
                    let (x, y) = g.pixel_center(r, c);
                    assert!((f.depth - (x + 2.0 * y)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn shared_edges_never_double_count() {
        // A square split along its diagonal, rasterized on a grid whose pixel
        // centres land exactly on the diagonal: every centre inside the square
        // is claimed by exactly one of the two triangles.
        let m = TriMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(8.0, 0.0, 0.0),
                Point3::new(8.0, 8.0, 0.0),
                Point3::new(0.0, 8.0, 0.0),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        );
        let g = DetectionGrid {
            rows: 12,
            cols: 12,
            view_axis: ViewAxis::PosZ,
            origin: [-2.5, -2.5],
            pixel_size: 1.0,
        };
        let buf = rasterize(&m, &g);
        let mut covered = 0;
        for r in 0..g.rows {
            for c in 0..g.cols {
                let (x, y) = g.pixel_center(r, c);
                let n = buf.pixel(r * g.cols + c).len();
                assert!(n <= 1, "pixel ({r},{c}) claimed {n} times");
                // Left and top edges are owned (y points up).
                if (0.0..8.0).contains(&x) && y > 0.0 && y <= 8.0 {
                    covered += 1;
                    assert_eq!(n, 1, "orphaned pixel at ({x},{y})");
                } else {
                    assert_eq!(n, 0, "stray pixel at ({x},{y})");
                }
            }
        }
        assert_eq!(covered, 64);
    }

    #[test]
    fn sphere_lists_alternate() {
        let s = generate(&MeshKind::Sphere {
            radius: 1.0,
            subdivisions: 3,
        })
        .unwrap();
        for axis in ViewAxis::ALL {
            let g = fit_grid(&s, Rays::square(96), axis).unwrap();
            let buf = rasterize(&s, &g);
            assert!(buf.num_fragments() > 0);
            for list in buf.pixels() {
                assert_eq!(list.len() % 2, 0, "{axis}");
                for (i, f) in list.iter().enumerate() {
                    assert_eq!(f.front_facing, i % 2 == 0, "{axis}");
                }
            }
        }
    }

    #[test]
    fn parallel_triangle_is_skipped() {
        let m = TriMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.0, 0.0, 1.0),
                Point3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [0, 1, 3]],
        );
        let g = fit_grid(&m, Rays::square(32), ViewAxis::PosZ).unwrap();
        let buf = rasterize(&m, &g);
        assert_eq!(buf.skipped_faces, vec![0]);
        assert!(buf.fragments().iter().all(|f| f.face == 1));
    }

    #[test]
    fn lists_sorted_with_face_tiebreak() {
        let buf = FragmentBuffer::from_lists(vec![vec![
            Fragment::back(4, 2.0),
            Fragment::front(3, 1.0),
            Fragment::front(1, 2.0),
        ]]);
        let faces: Vec<u32> = buf.pixel(0).iter().map(|f| f.face).collect();
        assert_eq!(faces, vec![3, 1, 4]);
        assert_eq!(buf.coincident_depths, 1);
    }
}
