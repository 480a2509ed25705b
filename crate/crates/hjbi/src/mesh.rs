//! Triangulations of the closed unit cell with periodic face identification.
//!
//! Meshes are uniform `m x m` grids of squares, each split along the same
//! diagonal. Boundary edges are paired with their periodic counterparts on
//! the opposite side of the cell and treated like interior faces carrying a
//! lattice offset.

use std::collections::HashMap;
use std::io::Write;

use crate::{Error, Result};

/// Tolerance for snapping coordinates to grid positions during pairing.
pub const PAIRING_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaceKind {
    Interior,
    BoundaryPair,
}

/// A mesh face: an edge shared by two elements, possibly modulo a lattice
/// shift. The `plus` side is the element for which `normal` is outward.
#[derive(Clone, Debug)]
pub struct Face {
    pub kind: FaceKind,
    pub elem_plus: usize,
    pub elem_minus: usize,
    pub local_edge_plus: usize,
    pub local_edge_minus: usize,
    /// Unit normal, outward from `elem_plus`.
    pub normal: [f64; 2],
    /// Lattice shift mapping minus-side coordinates onto the plus side:
    /// `x_plus = x_minus + offset`. Zero for interior faces.
    pub offset: [f64; 2],
    /// Face length.
    pub h_f: f64,
}

/// Conforming triangulation of `[0,1]^2` with periodically paired faces.
#[derive(Clone, Debug)]
pub struct PeriodicMesh {
    /// Vertex coordinates; boundary vertices are stored unwrapped, so
    /// periodic copies appear as distinct entries.
    pub vertices: Vec<[f64; 2]>,
    /// Counterclockwise vertex-index triples.
    pub elements: Vec<[usize; 3]>,
    pub faces: Vec<Face>,
    /// The mesh was built from an `m x m` grid of squares.
    pub subdivisions: usize,
}

/// Affine element map `x = origin + J xi` with cached inverse.
#[derive(Clone, Copy, Debug)]
pub struct ElementMap {
    pub origin: [f64; 2],
    /// `jac[i][j] = d x_i / d xi_j`
    pub jac: [[f64; 2]; 2],
    /// `inv[j][i] = d xi_j / d x_i`
    pub inv: [[f64; 2]; 2],
    pub det: f64,
}

impl ElementMap {
    pub fn to_physical(&self, xi: [f64; 2]) -> [f64; 2] {
        [
            self.origin[0] + self.jac[0][0] * xi[0] + self.jac[0][1] * xi[1],
            self.origin[1] + self.jac[1][0] * xi[0] + self.jac[1][1] * xi[1],
        ]
    }

    pub fn to_reference(&self, x: [f64; 2]) -> [f64; 2] {
        let d = [x[0] - self.origin[0], x[1] - self.origin[1]];
        [
            self.inv[0][0] * d[0] + self.inv[0][1] * d[1],
            self.inv[1][0] * d[0] + self.inv[1][1] * d[1],
        ]
    }
}

/// Sizes and shape regularity reported by [`mesh_size_functions`].
#[derive(Clone, Debug)]
pub struct MeshSizes {
    /// `h_K = area(K)^(1/2)` per element.
    pub h_elem: Vec<f64>,
    /// `h_F` = face length.
    pub h_face: Vec<f64>,
    /// `max_K diam(K) / inradius(K)`.
    pub shape_regularity: f64,
}

/// Build the uniform `m x m` diagonal-split triangulation with periodic
/// face pairing.
pub fn build_uniform_mesh(m: usize) -> Result<PeriodicMesh> {
    if m == 0 {
        return Err(Error::InvalidArgument(
            "mesh subdivision count must be >= 1".into(),
        ));
    }
    let nv = m + 1;
    let mut vertices = Vec::with_capacity(nv * nv);
    for j in 0..nv {
        for i in 0..nv {
            vertices.push([i as f64 / m as f64, j as f64 / m as f64]);
        }
    }
    let vid = |i: usize, j: usize| j * nv + i;

    let mut elements = Vec::with_capacity(2 * m * m);
    for j in 0..m {
        for i in 0..m {
            let v00 = vid(i, j);
            let v10 = vid(i + 1, j);
            let v01 = vid(i, j + 1);
            let v11 = vid(i + 1, j + 1);
            // split along the v00-v11 diagonal, both triangles counterclockwise
            elements.push([v00, v10, v11]);
            elements.push([v00, v11, v01]);
        }
    }

    let faces = pair_faces(&vertices, &elements, m)?;
    let mesh = PeriodicMesh {
        vertices,
        elements,
        faces,
        subdivisions: m,
    };
    debug_assert!((mesh.total_area() - 1.0).abs() < 1e-12);
    Ok(mesh)
}

/// Key an edge by its wrapped midpoint on the half-step lattice plus its
/// direction class, so periodic partners collide.
fn edge_key(a: [f64; 2], b: [f64; 2], m: usize) -> Result<(i64, i64, i64, i64)> {
    let two_m = 2 * m as i64;
    let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
    let mut key = [0i64; 2];
    for d in 0..2 {
        let scaled = mid[d] * two_m as f64;
        let snapped = scaled.round();
        if (scaled - snapped).abs() > PAIRING_TOL * two_m as f64 {
            return Err(Error::InvalidArgument(format!(
                "edge midpoint {scaled} off the grid lattice"
            )));
        }
        key[d] = (snapped as i64).rem_euclid(two_m);
    }
    let mut dir = [
        ((b[0] - a[0]) * m as f64).round() as i64,
        ((b[1] - a[1]) * m as f64).round() as i64,
    ];
    if dir[0] < 0 || (dir[0] == 0 && dir[1] < 0) {
        dir = [-dir[0], -dir[1]];
    }
    Ok((key[0], key[1], dir[0], dir[1]))
}

fn pair_faces(vertices: &[[f64; 2]], elements: &[[usize; 3]], m: usize) -> Result<Vec<Face>> {
    struct Pending {
        face: Face,
        plus_mid: [f64; 2],
        complete: bool,
    }
    let mut lookup: HashMap<(i64, i64, i64, i64), usize> = HashMap::new();
    let mut pending: Vec<Pending> = Vec::new();

    for (k, elem) in elements.iter().enumerate() {
        for e in 0..3 {
            let a = vertices[elem[e]];
            let b = vertices[elem[(e + 1) % 3]];
            let key = edge_key(a, b, m)?;
            let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
            match lookup.get(&key) {
                None => {
                    let d = [b[0] - a[0], b[1] - a[1]];
                    let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
                    let normal = [d[1] / len, -d[0] / len];
                    lookup.insert(key, pending.len());
                    pending.push(Pending {
                        face: Face {
                            kind: FaceKind::Interior,
                            elem_plus: k,
                            elem_minus: usize::MAX,
                            local_edge_plus: e,
                            local_edge_minus: usize::MAX,
                            normal,
                            offset: [0.0, 0.0],
                            h_f: len,
                        },
                        plus_mid: mid,
                        complete: false,
                    });
                }
                Some(&idx) => {
                    let entry = &mut pending[idx];
                    if entry.complete {
                        return Err(Error::InvalidArgument(
                            "more than two elements share a face key".into(),
                        ));
                    }
                    entry.face.elem_minus = k;
                    entry.face.local_edge_minus = e;
                    let mut offset = [0.0; 2];
                    for d in 0..2 {
                        let raw = entry.plus_mid[d] - mid[d];
                        let snapped = raw.round();
                        if (raw - snapped).abs() > PAIRING_TOL {
                            return Err(Error::InvalidArgument(
                                "paired edges do not differ by a lattice shift".into(),
                            ));
                        }
                        offset[d] = snapped;
                    }
                    entry.face.offset = offset;
                    entry.face.kind = if offset == [0.0, 0.0] {
                        FaceKind::Interior
                    } else {
                        FaceKind::BoundaryPair
                    };
                    entry.complete = true;
                }
            }
        }
    }

    let mut faces = Vec::with_capacity(pending.len());
    for p in pending {
        if !p.complete {
            return Err(Error::InvalidArgument("unpaired mesh face".into()));
        }
        faces.push(p.face);
    }
    Ok(faces)
}

impl PeriodicMesh {
    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    /// Number of vertex equivalence classes under periodic identification;
    /// all four cell corners count once.
    pub fn n_periodic_vertices(&self) -> usize {
        let m = self.subdivisions as i64;
        let mut seen = std::collections::HashSet::new();
        for v in &self.vertices {
            let i = (v[0] * m as f64).round() as i64;
            let j = (v[1] * m as f64).round() as i64;
            seen.insert((i.rem_euclid(m), j.rem_euclid(m)));
        }
        seen.len()
    }

    pub fn element_vertices(&self, k: usize) -> [[f64; 2]; 3] {
        let e = self.elements[k];
        [self.vertices[e[0]], self.vertices[e[1]], self.vertices[e[2]]]
    }

    /// Endpoints of a local edge, counterclockwise within the element.
    pub fn local_edge_endpoints(&self, k: usize, edge: usize) -> ([f64; 2], [f64; 2]) {
        let e = self.elements[k];
        (self.vertices[e[edge]], self.vertices[e[(edge + 1) % 3]])
    }

    pub fn element_area(&self, k: usize) -> f64 {
        let [a, b, c] = self.element_vertices(k);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
    }

    pub fn element_centroid(&self, k: usize) -> [f64; 2] {
        let [a, b, c] = self.element_vertices(k);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    pub fn total_area(&self) -> f64 {
        (0..self.n_elements()).map(|k| self.element_area(k)).sum()
    }

    pub fn element_map(&self, k: usize) -> ElementMap {
        let [a, b, c] = self.element_vertices(k);
        let jac = [[b[0] - a[0], c[0] - a[0]], [b[1] - a[1], c[1] - a[1]]];
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        let inv = [
            [jac[1][1] / det, -jac[0][1] / det],
            [-jac[1][0] / det, jac[0][0] / det],
        ];
        ElementMap {
            origin: a,
            jac,
            inv,
            det,
        }
    }

    /// Locate the element containing `y` (wrapped into the unit cell) and
    /// return its reference coordinates there.
    pub fn locate(&self, y: [f64; 2]) -> (usize, [f64; 2]) {
        let m = self.subdivisions;
        let wrap = |t: f64| {
            let w = t - t.floor();
            if w >= 1.0 {
                0.0
            } else {
                w
            }
        };
        let x = wrap(y[0]);
        let yy = wrap(y[1]);
        let i = ((x * m as f64).floor() as usize).min(m - 1);
        let j = ((yy * m as f64).floor() as usize).min(m - 1);
        let fx = x * m as f64 - i as f64;
        let fy = yy * m as f64 - j as f64;
        let cell = 2 * (j * m + i);
        if fx >= fy {
            // lower triangle (v00, v10, v11): x = xi1 + xi2, y = xi2
            (cell, [fx - fy, fy])
        } else {
            // upper triangle (v00, v11, v01): x = xi1, y = xi1 + xi2
            (cell + 1, [fx, fy - fx])
        }
    }

    /// Rebuild at twice the subdivision count; shape regularity is
    /// unchanged since all elements are similar.
    pub fn refine(&self) -> PeriodicMesh {
        build_uniform_mesh(2 * self.subdivisions).expect("refinement of a valid mesh")
    }

    /// Plain-text dump for debugging. One line per vertex, element, face.
    pub fn dump<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for v in &self.vertices {
            writeln!(w, "v {:.16} {:.16}", v[0], v[1])?;
        }
        for e in &self.elements {
            writeln!(w, "e {} {} {}", e[0], e[1], e[2])?;
        }
        for f in &self.faces {
            let kind = match f.kind {
                FaceKind::Interior => "interior",
                FaceKind::BoundaryPair => "boundary-pair",
            };
            writeln!(
                w,
                "f {} {} {} {} {} {:.16} {:.16}",
                kind, f.elem_plus, f.elem_minus, f.offset[0], f.offset[1], f.normal[0], f.normal[1]
            )?;
        }
        Ok(())
    }
}

/// Per-element and per-face size functions plus the shape-regularity
/// parameter `max_K diam(K)/inradius(K)`.
pub fn mesh_size_functions(mesh: &PeriodicMesh) -> MeshSizes {
    let h_elem: Vec<f64> = (0..mesh.n_elements())
        .map(|k| mesh.element_area(k).sqrt())
        .collect();
    let h_face: Vec<f64> = mesh.faces.iter().map(|f| f.h_f).collect();
    let mut theta: f64 = 0.0;
    for k in 0..mesh.n_elements() {
        let [a, b, c] = mesh.element_vertices(k);
        let ab = dist(a, b);
        let bc = dist(b, c);
        let ca = dist(c, a);
        let diam = ab.max(bc).max(ca);
        let s = 0.5 * (ab + bc + ca);
        let inradius = mesh.element_area(k) / s;
        theta = theta.max(diam / inradius);
    }
    MeshSizes {
        h_elem,
        h_face,
        shape_regularity: theta,
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_match_closed_forms() {
        for m in [1usize, 2, 3, 5, 8] {
            let mesh = build_uniform_mesh(m).unwrap();
            assert_eq!(mesh.n_elements(), 2 * m * m, "elements at m={m}");
            assert_eq!(mesh.n_faces(), 3 * m * m, "faces at m={m}");
            assert_eq!(mesh.n_periodic_vertices(), m * m, "vertices at m={m}");
        }
    }

    #[test]
    fn rejects_zero_subdivisions() {
        assert!(build_uniform_mesh(0).is_err());
    }

    #[test]
    fn areas_tile_the_cell() {
        for m in [1usize, 2, 8] {
            let mesh = build_uniform_mesh(m).unwrap();
            assert!((mesh.total_area() - 1.0).abs() < 1e-12);
            for k in 0..mesh.n_elements() {
                assert!(mesh.element_area(k) > 0.0, "ccw orientation at {k}");
            }
        }
    }

    /// Brute-force pairing audit: every (element, edge) belongs to exactly
    /// one face, and the two edges of each face coincide as segments once
    /// the minus side is shifted by the face offset.
    #[test]
    fn face_pairing_audit_m8() {
        let mesh = build_uniform_mesh(8).unwrap();
        let mut seen = vec![false; 3 * mesh.n_elements()];
        for f in &mesh.faces {
            for (elem, edge) in [
                (f.elem_plus, f.local_edge_plus),
                (f.elem_minus, f.local_edge_minus),
            ] {
                let slot = 3 * elem + edge;
                assert!(!seen[slot], "edge used twice");
                seen[slot] = true;
            }
            let (pa, pb) = mesh.local_edge_endpoints(f.elem_plus, f.local_edge_plus);
            let (ma, mb) = mesh.local_edge_endpoints(f.elem_minus, f.local_edge_minus);
            let shift = |p: [f64; 2]| [p[0] + f.offset[0], p[1] + f.offset[1]];
            let (sa, sb) = (shift(ma), shift(mb));
            let same = (dist(pa, sa) < 1e-12 && dist(pb, sb) < 1e-12)
                || (dist(pa, sb) < 1e-12 && dist(pb, sa) < 1e-12);
            assert!(same, "face edges disagree after offset shift");
        }
        assert!(seen.iter().all(|&s| s), "unpaired element edge");
    }

    #[test]
    fn normals_are_unit_and_outward() {
        let mesh = build_uniform_mesh(4).unwrap();
        for f in &mesh.faces {
            let n = f.normal;
            assert!((n[0] * n[0] + n[1] * n[1] - 1.0).abs() < 1e-12);
            let (a, b) = mesh.local_edge_endpoints(f.elem_plus, f.local_edge_plus);
            let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
            let c = mesh.element_centroid(f.elem_plus);
            let toward_centroid = (c[0] - mid[0]) * n[0] + (c[1] - mid[1]) * n[1];
            assert!(toward_centroid < 0.0, "normal not outward from plus side");
            assert!(f.h_f > 0.0);
        }
    }

    #[test]
    fn offsets_are_lattice_shifts_iff_boundary_pair() {
        let mesh = build_uniform_mesh(3).unwrap();
        let mut n_pairs = 0;
        for f in &mesh.faces {
            let nonzero = f.offset != [0.0, 0.0];
            assert_eq!(nonzero, f.kind == FaceKind::BoundaryPair);
            if nonzero {
                n_pairs += 1;
                let ok = matches!(
                    (f.offset[0] as i64, f.offset[1] as i64),
                    (1, 0) | (-1, 0) | (0, 1) | (0, -1)
                );
                assert!(ok, "offset {:?}", f.offset);
            }
        }
        // m boundary pairs per direction
        assert_eq!(n_pairs, 2 * mesh.subdivisions);
    }

    #[test]
    fn size_functions_on_m2() {
        let mesh = build_uniform_mesh(2).unwrap();
        let sizes = mesh_size_functions(&mesh);
        for h in &sizes.h_elem {
            assert!((h - (1.0f64 / 8.0).sqrt()).abs() < 1e-14);
        }
        for (h, f) in sizes.h_face.iter().zip(&mesh.faces) {
            let axis_aligned = f.normal[0].abs() < 1e-12 || f.normal[1].abs() < 1e-12;
            let expect = if axis_aligned {
                0.5
            } else {
                0.5 * std::f64::consts::SQRT_2
            };
            assert!((h - expect).abs() < 1e-14);
        }
        // Right isoceles triangle with legs 1/2: diam = sqrt(2)/2 and
        // inradius = area / semiperimeter, giving diam/inradius = 2 + 2*sqrt(2).
        let legs = 0.5f64;
        let area = 0.5 * legs * legs;
        let s = 0.5 * (legs + legs + legs * std::f64::consts::SQRT_2);
        let oracle = (legs * std::f64::consts::SQRT_2) / (area / s);
        assert!((oracle - (2.0 + 2.0 * std::f64::consts::SQRT_2)).abs() < 1e-12);
        assert!((sizes.shape_regularity - oracle).abs() < 1e-12);
    }

    #[test]
    fn refine_doubles_subdivisions_and_keeps_shape() {
        let mesh = build_uniform_mesh(2).unwrap();
        let fine = mesh.refine();
        assert_eq!(fine.subdivisions, 4);
        assert_eq!(fine.n_elements(), 32);
        assert!((fine.total_area() - 1.0).abs() < 1e-12);
        let t0 = mesh_size_functions(&mesh).shape_regularity;
        let t1 = mesh_size_functions(&fine).shape_regularity;
        assert!((t0 - t1).abs() < 1e-12);
    }

    #[test]
    fn locate_inverts_element_maps() {
        let mesh = build_uniform_mesh(4).unwrap();
        let pts = [
            [0.1, 0.2],
            [0.9, 0.05],
            [0.5, 0.5],
            [0.0, 0.0],
            [0.999, 0.999],
            [0.25, 0.75],
        ];
        for p in pts {
            let (k, xi) = mesh.locate(p);
            assert!(xi[0] >= -1e-12 && xi[1] >= -1e-12 && xi[0] + xi[1] <= 1.0 + 1e-12);
            let x = mesh.element_map(k).to_physical(xi);
            assert!(dist(x, p) < 1e-12);
        }
    }

    #[test]
    fn dump_is_line_per_entity() {
        let mesh = build_uniform_mesh(1).unwrap();
        let mut buf = Vec::new();
        mesh.dump(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4 + 2 + 3);
        assert!(lines[0].starts_with("v "));
        assert!(lines[4].starts_with("e "));
        assert!(lines[6].starts_with("f "));
    }
}
