//! Piecewise polynomial spaces on periodic meshes.
//!
//! Both the discontinuous Galerkin space (no interelement coupling) and the
//! C0-periodic space (Lagrange nodes identified across faces, boundary
//! face-pairs and the cell corners included) are supported, with evaluation
//! of values, gradients and Hessians, nodal interpolation, and face traces.

use std::collections::HashMap;
use std::io::Write;
use std::sync::{Arc, OnceLock};

use crate::algebra::{self, DenseMatrix, SymMat2};
use crate::mesh::PeriodicMesh;
use crate::quad::{make_quadrature, QuadratureRule};
use crate::{Error, Result};

/// Maximum supported polynomial degree. Uniform-node Vandermonde systems
/// degrade beyond this.
pub const MAX_DEGREE: usize = 6;

const REF_VERTICES: [[f64; 2]; 3] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Continuity {
    /// Fully discontinuous between elements.
    Discontinuous,
    /// Continuous and periodic across boundary face-pairs.
    C0Periodic,
}

impl Continuity {
    pub fn from_index(s: usize) -> Result<Self> {
        match s {
            0 => Ok(Continuity::Discontinuous),
            1 => Ok(Continuity::C0Periodic),
            _ => Err(Error::InvalidArgument(format!(
                "continuity must be 0 or 1, got {s}"
            ))),
        }
    }
}

/// Values and first/second derivatives of all local basis functions at one
/// reference point.
#[derive(Clone, Debug)]
pub struct BasisValues {
    pub val: Vec<f64>,
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
    pub hxx: Vec<f64>,
    pub hxy: Vec<f64>,
    pub hyy: Vec<f64>,
}

impl BasisValues {
    pub fn new(nloc: usize) -> Self {
        BasisValues {
            val: vec![0.0; nloc],
            gx: vec![0.0; nloc],
            gy: vec![0.0; nloc],
            hxx: vec![0.0; nloc],
            hxy: vec![0.0; nloc],
            hyy: vec![0.0; nloc],
        }
    }
}

/// Nodal Lagrange basis on uniform reference-triangle nodes, expanded in
/// monomials.
pub(crate) struct LagrangeBasis {
    pub degree: usize,
    pub nloc: usize,
    pub nodes: Vec<[f64; 2]>,
    monos: Vec<(u32, u32)>,
    /// coeff[m * nloc + k]: weight of monomial m in basis function k
    coeff: Vec<f64>,
}

impl LagrangeBasis {
    fn new(degree: usize) -> Result<Self> {
        let p = degree;
        let nloc = (p + 1) * (p + 2) / 2;
        let mut nodes = Vec::with_capacity(nloc);
        for j in 0..=p {
            for i in 0..=(p - j) {
                nodes.push([i as f64 / p as f64, j as f64 / p as f64]);
            }
        }
        let mut monos = Vec::with_capacity(nloc);
        for total in 0..=p as u32 {
            for a in (0..=total).rev() {
                monos.push((a, total - a));
            }
        }
        let mut vand = DenseMatrix::zeros(nloc);
        for (r, node) in nodes.iter().enumerate() {
            for (m, &(a, b)) in monos.iter().enumerate() {
                vand.set(r, m, node[0].powi(a as i32) * node[1].powi(b as i32));
            }
        }
        let inv = algebra::invert(&vand).ok_or_else(|| {
            Error::InvalidArgument(format!("singular Vandermonde at degree {degree}"))
        })?;
        // basis k at x: sum_m inv[m][k] * mono_m(x)
        let mut coeff = vec![0.0; nloc * nloc];
        for m in 0..nloc {
            for k in 0..nloc {
                coeff[m * nloc + k] = inv.get(m, k);
            }
        }
        Ok(LagrangeBasis {
            degree,
            nloc,
            nodes,
            monos,
            coeff,
        })
    }

    pub fn eval_all(&self, p: [f64; 2], out: &mut BasisValues) {
        let nloc = self.nloc;
        for arr in [
            &mut out.val,
            &mut out.gx,
            &mut out.gy,
            &mut out.hxx,
            &mut out.hxy,
            &mut out.hyy,
        ] {
            arr.iter_mut().for_each(|v| *v = 0.0);
        }
        let deg = self.degree as i32;
        let mut xp = [1.0f64; 8];
        let mut yp = [1.0f64; 8];
        for k in 1..=(deg as usize) {
            xp[k] = xp[k - 1] * p[0];
            yp[k] = yp[k - 1] * p[1];
        }
        for (m, &(a, b)) in self.monos.iter().enumerate() {
            let (a, b) = (a as usize, b as usize);
            let (af, bf) = (a as f64, b as f64);
            let v = xp[a] * yp[b];
            let dx = if a >= 1 { af * xp[a - 1] * yp[b] } else { 0.0 };
            let dy = if b >= 1 { bf * xp[a] * yp[b - 1] } else { 0.0 };
            let dxx = if a >= 2 {
                af * (af - 1.0) * xp[a - 2] * yp[b]
            } else {
                0.0
            };
            let dxy = if a >= 1 && b >= 1 {
                af * bf * xp[a - 1] * yp[b - 1]
            } else {
                0.0
            };
            let dyy = if b >= 2 {
                bf * (bf - 1.0) * xp[a] * yp[b - 2]
            } else {
                0.0
            };
            let row = &self.coeff[m * nloc..(m + 1) * nloc];
            for k in 0..nloc {
                let c = row[k];
                out.val[k] += c * v;
                out.gx[k] += c * dx;
                out.gy[k] += c * dy;
                out.hxx[k] += c * dxx;
                out.hxy[k] += c * dxy;
                out.hyy[k] += c * dyy;
            }
        }
    }
}

/// Per-face trace tables at edge quadrature points, used by the bilinear
/// forms. Stored quantities are already signed for jumps (+ for the plus
/// side, - for the minus side) and halved for averages.
pub(crate) struct FaceTables {
    pub n_qp: usize,
    pub nloc: usize,
    /// physical quadrature weight (edge weight x face length), idx = f*n_qp + q
    pub weight: Vec<f64>,
    /// flattened atom arrays, idx = ((f * n_qp + q) * 2 + side) * nloc + k
    pub sv: Vec<f64>,
    /// signed grad . n
    pub sgn: Vec<f64>,
    /// signed grad . t
    pub sgt: Vec<f64>,
    /// half of t^T H t
    pub att: Vec<f64>,
    /// half of t^T H n
    pub atn: Vec<f64>,
}

/// Finite element space over a periodic mesh.
pub struct FESpace {
    pub mesh: Arc<PeriodicMesh>,
    pub degree: usize,
    pub continuity: Continuity,
    pub n_dofs: usize,
    /// Representative physical coordinates of each global DOF.
    pub dof_points: Vec<[f64; 2]>,
    pub quad: QuadratureRule,
    elem_dofs: Vec<usize>,
    pub(crate) basis: LagrangeBasis,
    /// Reference basis tables at volume quadrature points, idx = q*nloc + k.
    vol_val: Vec<f64>,
    vol_gx: Vec<f64>,
    vol_gy: Vec<f64>,
    vol_hxx: Vec<f64>,
    vol_hxy: Vec<f64>,
    vol_hyy: Vec<f64>,
    maps: Vec<crate::mesh::ElementMap>,
    face_tables: OnceLock<FaceTables>,
}

/// Build a degree-`p` space; `p >= 2` is required so broken Hessians carry
/// information.
pub fn build_space(
    mesh: &Arc<PeriodicMesh>,
    degree: usize,
    continuity: Continuity,
) -> Result<Arc<FESpace>> {
    if degree < 2 {
        return Err(Error::InvalidArgument(format!(
            "polynomial degree must be >= 2, got {degree}"
        )));
    }
    if degree > MAX_DEGREE {
        return Err(Error::InvalidArgument(format!(
            "polynomial degree {degree} above supported maximum {MAX_DEGREE}"
        )));
    }
    let basis = LagrangeBasis::new(degree)?;
    let nloc = basis.nloc;
    let n_elem = mesh.n_elements();
    let maps: Vec<_> = (0..n_elem).map(|k| mesh.element_map(k)).collect();

    let mut elem_dofs = vec![0usize; n_elem * nloc];
    let mut dof_points = Vec::new();
    let n_dofs = match continuity {
        Continuity::Discontinuous => {
            for k in 0..n_elem {
                for (l, node) in basis.nodes.iter().enumerate() {
                    elem_dofs[k * nloc + l] = k * nloc + l;
                    dof_points.push(maps[k].to_physical(*node));
                }
            }
            n_elem * nloc
        }
        Continuity::C0Periodic => {
            // Snap nodes to the 1/(m*p) lattice and identify modulo 1.
            let lat = (mesh.subdivisions * degree) as i64;
            let mut lookup: HashMap<(i64, i64), usize> = HashMap::new();
            let mut next = 0usize;
            for k in 0..n_elem {
                for (l, node) in basis.nodes.iter().enumerate() {
                    let x = maps[k].to_physical(*node);
                    let mut key = [0i64; 2];
                    for d in 0..2 {
                        let scaled = x[d] * lat as f64;
                        let snapped = scaled.round();
                        if (scaled - snapped).abs() > 1e-10 * lat as f64 {
                            return Err(Error::InvalidArgument(
                                "Lagrange node off the periodic lattice".into(),
                            ));
                        }
                        key[d] = (snapped as i64).rem_euclid(lat);
                    }
                    let id = *lookup.entry((key[0], key[1])).or_insert_with(|| {
                        let id = next;
                        next += 1;
                        dof_points.push(x);
                        id
                    });
                    elem_dofs[k * nloc + l] = id;
                }
            }
            next
        }
    };

    let quad = make_quadrature(2 * degree + 4, 2 * degree + 4)?;
    let nq = quad.n_tri();
    let mut scratch = BasisValues::new(nloc);
    let mut vol_val = vec![0.0; nq * nloc];
    let mut vol_gx = vec![0.0; nq * nloc];
    let mut vol_gy = vec![0.0; nq * nloc];
    let mut vol_hxx = vec![0.0; nq * nloc];
    let mut vol_hxy = vec![0.0; nq * nloc];
    let mut vol_hyy = vec![0.0; nq * nloc];
    for (q, pt) in quad.tri_points.iter().enumerate() {
        basis.eval_all(*pt, &mut scratch);
        vol_val[q * nloc..(q + 1) * nloc].copy_from_slice(&scratch.val);
        vol_gx[q * nloc..(q + 1) * nloc].copy_from_slice(&scratch.gx);
        vol_gy[q * nloc..(q + 1) * nloc].copy_from_slice(&scratch.gy);
        vol_hxx[q * nloc..(q + 1) * nloc].copy_from_slice(&scratch.hxx);
        vol_hxy[q * nloc..(q + 1) * nloc].copy_from_slice(&scratch.hxy);
        vol_hyy[q * nloc..(q + 1) * nloc].copy_from_slice(&scratch.hyy);
    }

    Ok(Arc::new(FESpace {
        mesh: Arc::clone(mesh),
        degree,
        continuity,
        n_dofs,
        dof_points,
        quad,
        elem_dofs,
        basis,
        vol_val,
        vol_gx,
        vol_gy,
        vol_hxx,
        vol_hxy,
        vol_hyy,
        maps,
        face_tables: OnceLock::new(),
    }))
}

pub(crate) fn map_gradient(inv: &[[f64; 2]; 2], g: [f64; 2]) -> [f64; 2] {
    [
        inv[0][0] * g[0] + inv[1][0] * g[1],
        inv[0][1] * g[0] + inv[1][1] * g[1],
    ]
}

pub(crate) fn map_hessian(inv: &[[f64; 2]; 2], h: &SymMat2) -> SymMat2 {
    let a00 = inv[0][0];
    let a01 = inv[0][1];
    let a10 = inv[1][0];
    let a11 = inv[1][1];
    SymMat2 {
        xx: a00 * a00 * h.xx + 2.0 * a00 * a10 * h.xy + a10 * a10 * h.yy,
        xy: a00 * a01 * h.xx + (a00 * a11 + a10 * a01) * h.xy + a10 * a11 * h.yy,
        yy: a01 * a01 * h.xx + 2.0 * a01 * a11 * h.xy + a11 * a11 * h.yy,
    }
}

impl FESpace {
    pub fn nloc(&self) -> usize {
        self.basis.nloc
    }

    pub fn n_volume_qp(&self) -> usize {
        self.quad.n_tri()
    }

    pub fn elem_dofs(&self, elem: usize) -> &[usize] {
        let nloc = self.basis.nloc;
        &self.elem_dofs[elem * nloc..(elem + 1) * nloc]
    }

    pub fn element_map(&self, elem: usize) -> &crate::mesh::ElementMap {
        &self.maps[elem]
    }

    /// Physical location and quadrature weight of a volume point.
    pub fn volume_point(&self, elem: usize, q: usize) -> ([f64; 2], f64) {
        let map = &self.maps[elem];
        let x = map.to_physical(self.quad.tri_points[q]);
        (x, self.quad.tri_weights[q] * map.det)
    }

    /// Value, gradient and Hessian of a coefficient vector at a volume
    /// quadrature point, in physical coordinates.
    ///
    /// Derivatives are accumulated from mean-deflated coefficients: by
    /// partition of unity the local mean contributes only to the value, and
    /// deflation keeps derivative roundoff proportional to the local
    /// oscillation rather than the offset (small-sigma correctors carry
    /// offsets of size 1/sigma).
    pub fn eval_function_at_qp(&self, coeffs: &[f64], elem: usize, q: usize) -> (f64, [f64; 2], SymMat2) {
        let nloc = self.basis.nloc;
        let dofs = self.elem_dofs(elem);
        let base = q * nloc;
        let mean = dofs.iter().map(|&d| coeffs[d]).sum::<f64>() / nloc as f64;
        let mut v = 0.0;
        let mut g = [0.0; 2];
        let mut h = SymMat2::ZERO;
        for k in 0..nloc {
            let c = coeffs[dofs[k]] - mean;
            v += c * self.vol_val[base + k];
            g[0] += c * self.vol_gx[base + k];
            g[1] += c * self.vol_gy[base + k];
            h.xx += c * self.vol_hxx[base + k];
            h.xy += c * self.vol_hxy[base + k];
            h.yy += c * self.vol_hyy[base + k];
        }
        let inv = &self.maps[elem].inv;
        (v + mean, map_gradient(inv, g), map_hessian(inv, &h))
    }

    /// Physical-space basis tables at a volume quadrature point.
    pub(crate) fn mapped_basis_at_qp(&self, elem: usize, q: usize, out: &mut BasisValues) {
        let nloc = self.basis.nloc;
        let base = q * nloc;
        let inv = &self.maps[elem].inv;
        for k in 0..nloc {
            let g = map_gradient(inv, [self.vol_gx[base + k], self.vol_gy[base + k]]);
            let h = map_hessian(
                inv,
                &SymMat2 {
                    xx: self.vol_hxx[base + k],
                    xy: self.vol_hxy[base + k],
                    yy: self.vol_hyy[base + k],
                },
            );
            out.val[k] = self.vol_val[base + k];
            out.gx[k] = g[0];
            out.gy[k] = g[1];
            out.hxx[k] = h.xx;
            out.hxy[k] = h.xy;
            out.hyy[k] = h.yy;
        }
    }

    /// Reference coordinates of a face quadrature parameter on both sides.
    pub fn face_ref_points(&self, face: usize, t: f64) -> ([f64; 2], [f64; 2]) {
        let f = &self.mesh.faces[face];
        let ea = REF_VERTICES[f.local_edge_plus];
        let eb = REF_VERTICES[(f.local_edge_plus + 1) % 3];
        let ref_plus = [
            (1.0 - t) * ea[0] + t * eb[0],
            (1.0 - t) * ea[1] + t * eb[1],
        ];
        let x = self.maps[f.elem_plus].to_physical(ref_plus);
        let xm = [x[0] - f.offset[0], x[1] - f.offset[1]];
        let ref_minus = self.maps[f.elem_minus].to_reference(xm);
        (ref_plus, ref_minus)
    }

    /// Trace of all basis functions of one element at a reference point,
    /// mapped to physical derivatives.
    pub(crate) fn basis_trace(&self, elem: usize, ref_pt: [f64; 2], out: &mut BasisValues) {
        self.basis.eval_all(ref_pt, out);
        let inv = &self.maps[elem].inv;
        for k in 0..self.basis.nloc {
            let g = map_gradient(inv, [out.gx[k], out.gy[k]]);
            let h = map_hessian(
                inv,
                &SymMat2 {
                    xx: out.hxx[k],
                    xy: out.hxy[k],
                    yy: out.hyy[k],
                },
            );
            out.gx[k] = g[0];
            out.gy[k] = g[1];
            out.hxx[k] = h.xx;
            out.hxy[k] = h.xy;
            out.hyy[k] = h.yy;
        }
    }

    /// Lazily built face trace tables shared by the bilinear forms.
    pub(crate) fn face_tables(&self) -> &FaceTables {
        self.face_tables.get_or_init(|| self.build_face_tables())
    }

    fn build_face_tables(&self) -> FaceTables {
        let nloc = self.basis.nloc;
        let n_qp = self.quad.n_edge();
        let n_faces = self.mesh.n_faces();
        let total = n_faces * n_qp * 2 * nloc;
        let mut ft = FaceTables {
            n_qp,
            nloc,
            weight: vec![0.0; n_faces * n_qp],
            sv: vec![0.0; total],
            sgn: vec![0.0; total],
            sgt: vec![0.0; total],
            att: vec![0.0; total],
            atn: vec![0.0; total],
        };
        let mut scratch = BasisValues::new(nloc);
        for (fi, f) in self.mesh.faces.iter().enumerate() {
            let (a, b) = self
                .mesh
                .local_edge_endpoints(f.elem_plus, f.local_edge_plus);
            let d = [b[0] - a[0], b[1] - a[1]];
            let tangent = [d[0] / f.h_f, d[1] / f.h_f];
            let normal = f.normal;
            for (q, &tq) in self.quad.edge_points.iter().enumerate() {
                ft.weight[fi * n_qp + q] = self.quad.edge_weights[q] * f.h_f;
                let (ref_plus, ref_minus) = self.face_ref_points(fi, tq);
                for (side, (elem, ref_pt)) in [(f.elem_plus, ref_plus), (f.elem_minus, ref_minus)]
                    .into_iter()
                    .enumerate()
                {
                    let sign = if side == 0 { 1.0 } else { -1.0 };
                    self.basis_trace(elem, ref_pt, &mut scratch);
                    let base = ((fi * n_qp + q) * 2 + side) * nloc;
                    for k in 0..nloc {
                        let g = [scratch.gx[k], scratch.gy[k]];
                        let h = SymMat2 {
                            xx: scratch.hxx[k],
                            xy: scratch.hxy[k],
                            yy: scratch.hyy[k],
                        };
                        ft.sv[base + k] = sign * scratch.val[k];
                        ft.sgn[base + k] = sign * algebra::dot2(g, normal);
                        ft.sgt[base + k] = sign * algebra::dot2(g, tangent);
                        ft.att[base + k] = 0.5 * h.bilinear(tangent, tangent);
                        ft.atn[base + k] = 0.5 * h.bilinear(tangent, normal);
                    }
                }
            }
        }
        ft
    }
}

/// A coefficient vector over a finite element space.
#[derive(Clone)]
pub struct DiscreteFunction {
    pub space: Arc<FESpace>,
    pub coeffs: Vec<f64>,
}

impl DiscreteFunction {
    pub fn zero(space: &Arc<FESpace>) -> Self {
        DiscreteFunction {
            space: Arc::clone(space),
            coeffs: vec![0.0; space.n_dofs],
        }
    }

    pub fn from_coeffs(space: &Arc<FESpace>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != space.n_dofs {
            return Err(Error::InvalidArgument(format!(
                "coefficient length {} does not match space dimension {}",
                coeffs.len(),
                space.n_dofs
            )));
        }
        Ok(DiscreteFunction {
            space: Arc::clone(space),
            coeffs,
        })
    }

    /// Value, gradient and Hessian at a reference point of an element.
    /// Derivatives use mean-deflated coefficients, as in
    /// [`FESpace::eval_function_at_qp`].
    pub fn eval(&self, element: usize, ref_point: [f64; 2]) -> (f64, [f64; 2], SymMat2) {
        let space = &self.space;
        let nloc = space.basis.nloc;
        let mut scratch = BasisValues::new(nloc);
        space.basis.eval_all(ref_point, &mut scratch);
        let dofs = space.elem_dofs(element);
        let mean = dofs.iter().map(|&d| self.coeffs[d]).sum::<f64>() / nloc as f64;
        let mut v = 0.0;
        let mut g = [0.0; 2];
        let mut h = SymMat2::ZERO;
        for k in 0..nloc {
            let c = self.coeffs[dofs[k]] - mean;
            v += c * scratch.val[k];
            g[0] += c * scratch.gx[k];
            g[1] += c * scratch.gy[k];
            h.xx += c * scratch.hxx[k];
            h.xy += c * scratch.hxy[k];
            h.yy += c * scratch.hyy[k];
        }
        let inv = &space.maps[element].inv;
        (v + mean, map_gradient(inv, g), map_hessian(inv, &h))
    }

    /// Evaluate at a physical point (wrapped into the unit cell).
    pub fn eval_at(&self, y: [f64; 2]) -> (f64, [f64; 2], SymMat2) {
        let (elem, xi) = self.space.mesh.locate(y);
        self.eval(elem, xi)
    }

    /// Traces from both sides of a face at edge parameter `t` in `[0, 1]`
    /// (parametrized along the plus side's local edge). The minus side is
    /// evaluated at the same physical point shifted by the face offset.
    pub fn face_trace(&self, face: usize, t: f64) -> (f64, [f64; 2], f64, [f64; 2]) {
        let f = &self.space.mesh.faces[face];
        let (ref_plus, ref_minus) = self.space.face_ref_points(face, t);
        let (vp, gp, _) = self.eval(f.elem_plus, ref_plus);
        let (vm, gm, _) = self.eval(f.elem_minus, ref_minus);
        (vp, gp, vm, gm)
    }

    /// CSV export of nodal values: `element,ref_x,ref_y,value`.
    pub fn export_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "element,ref_x,ref_y,value")?;
        let space = &self.space;
        for elem in 0..space.mesh.n_elements() {
            let dofs = space.elem_dofs(elem);
            for (l, node) in space.basis.nodes.iter().enumerate() {
                writeln!(
                    w,
                    "{},{:.16},{:.16},{:.16e}",
                    elem, node[0], node[1], self.coeffs[dofs[l]]
                )?;
            }
        }
        Ok(())
    }
}

/// Nodal Lagrange interpolation. For C0-periodic spaces each shared node is
/// evaluated once at its representative coordinates; the callback must be
/// periodic-consistent.
pub fn interpolate<F: Fn([f64; 2]) -> f64>(space: &Arc<FESpace>, f: F) -> DiscreteFunction {
    let coeffs = space.dof_points.iter().map(|&x| f(x)).collect();
    DiscreteFunction {
        space: Arc::clone(space),
        coeffs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_uniform_mesh;
    use std::f64::consts::PI;

    fn space(m: usize, degree: usize, continuity: Continuity) -> Arc<FESpace> {
        let mesh = Arc::new(build_uniform_mesh(m).unwrap());
        build_space(&mesh, degree, continuity).unwrap()
    }

    #[test]
    fn dof_counts() {
        assert_eq!(space(2, 2, Continuity::Discontinuous).n_dofs, 48);
        assert_eq!(space(2, 2, Continuity::C0Periodic).n_dofs, 16);
        assert_eq!(space(3, 2, Continuity::C0Periodic).n_dofs, 36);
    }

    /// Brute-force node deduplication oracle for the C0-periodic count at
    /// degree 3: enumerate all element nodes and deduplicate modulo 1 with
    /// tolerance 1e-10 by pairwise comparison.
    #[test]
    fn c0_degree3_count_matches_dedup_oracle() {
        let m = 2;
        let sp = space(m, 3, Continuity::C0Periodic);
        let mesh = &sp.mesh;
        let mut reps: Vec<[f64; 2]> = Vec::new();
        for elem in 0..mesh.n_elements() {
            let map = mesh.element_map(elem);
            for node in &sp.basis.nodes {
                let x = map.to_physical(*node);
                let wrapped = [x[0].rem_euclid(1.0), x[1].rem_euclid(1.0)];
                let dup = reps.iter().any(|r| {
                    let mut close = true;
                    for d in 0..2 {
                        let mut diff = (r[d] - wrapped[d]).abs();
                        diff = diff.min((diff - 1.0).abs());
                        close &= diff < 1e-10;
                    }
                    close
                });
                if !dup {
                    reps.push(wrapped);
                }
            }
        }
        assert_eq!(reps.len(), 36, "dedup oracle disagrees");
        assert_eq!(sp.n_dofs, reps.len());
    }

    #[test]
    fn rejects_degree_below_two() {
        let mesh = Arc::new(build_uniform_mesh(2).unwrap());
        assert!(build_space(&mesh, 1, Continuity::Discontinuous).is_err());
        assert!(build_space(&mesh, MAX_DEGREE + 1, Continuity::Discontinuous).is_err());
    }

    #[test]
    fn partition_of_unity_at_random_points() {
        let pts = [[0.2, 0.3], [0.0, 0.0], [0.7, 0.1], [1.0 / 3.0, 1.0 / 3.0]];
        for degree in 2..=4 {
            let basis = LagrangeBasis::new(degree).unwrap();
            let mut out = BasisValues::new(basis.nloc);
            for p in pts {
                basis.eval_all(p, &mut out);
                let sum: f64 = out.val.iter().sum();
                assert!((sum - 1.0).abs() < 1e-13, "degree {degree}: sum {sum}");
                let gsum: f64 = out.gx.iter().sum();
                assert!(gsum.abs() < 1e-11);
            }
        }
    }

    #[test]
    fn constant_interpolant_evaluates_to_constant() {
        let sp = space(2, 2, Continuity::C0Periodic);
        let u = interpolate(&sp, |_| 3.5);
        let (v, g, h) = u.eval(3, [0.3, 0.3]);
        assert!((v - 3.5).abs() < 1e-13);
        assert!(g[0].abs() < 1e-12 && g[1].abs() < 1e-12);
        assert!(h.norm_sq() < 1e-22);
    }

    #[test]
    fn quadratic_reproduced_exactly_on_dg() {
        let sp = space(2, 2, Continuity::Discontinuous);
        let u = interpolate(&sp, |y| y[0] * y[0]);
        for (elem, xi) in [(0, [0.25, 0.25]), (5, [0.1, 0.6]), (7, [0.0, 0.9])] {
            let (v, g, h) = u.eval(elem, xi);
            let x = sp.mesh.element_map(elem).to_physical(xi);
            assert!((v - x[0] * x[0]).abs() < 1e-12);
            assert!((g[0] - 2.0 * x[0]).abs() < 1e-11);
            assert!(g[1].abs() < 1e-11);
            assert!((h.xx - 2.0).abs() < 1e-10);
            assert!(h.xy.abs() < 1e-10 && h.yy.abs() < 1e-10);
        }
    }

    #[test]
    fn cubic_interpolant_tracks_smooth_field() {
        let sp = space(8, 3, Continuity::C0Periodic);
        let f = |y: [f64; 2]| (2.0 * PI * y[0]).cos() * (2.0 * PI * y[1]).cos();
        let u = interpolate(&sp, f);
        // h = 1/8; interpolation error is O(h^4) with a trig-size constant
        for p in [[0.13, 0.41], [0.55, 0.92], [0.99, 0.31]] {
            let (v, _, _) = u.eval_at(p);
            assert!((v - f(p)).abs() < 5e-3, "at {p:?}: {} vs {}", v, f(p));
        }
    }

    #[test]
    fn hessian_matches_finite_differences_of_gradient() {
        let sp = space(4, 3, Continuity::Discontinuous);
        let u = interpolate(&sp, |y| {
            (2.0 * PI * y[0]).sin() * (2.0 * PI * y[1]).cos() + y[0] * y[1]
        });
        let elem = 11;
        let xi = [0.3, 0.3];
        let step = 1e-5;
        let (_, _, h) = u.eval(elem, xi);
        let map = sp.mesh.element_map(elem);
        let x0 = map.to_physical(xi);
        let grad_at = |x: [f64; 2]| {
            let xi = map.to_reference(x);
            u.eval(elem, xi).1
        };
        let gxp = grad_at([x0[0] + step, x0[1]]);
        let gxm = grad_at([x0[0] - step, x0[1]]);
        let gyp = grad_at([x0[0], x0[1] + step]);
        let gym = grad_at([x0[0], x0[1] - step]);
        let fd_xx = (gxp[0] - gxm[0]) / (2.0 * step);
        let fd_xy = (gyp[0] - gym[0]) / (2.0 * step);
        let fd_yy = (gyp[1] - gym[1]) / (2.0 * step);
        assert!((h.xx - fd_xx).abs() < 1e-6 * (1.0 + h.xx.abs()));
        assert!((h.xy - fd_xy).abs() < 1e-6 * (1.0 + h.xy.abs()));
        assert!((h.yy - fd_yy).abs() < 1e-6 * (1.0 + h.yy.abs()));
    }

    #[test]
    fn c0_traces_are_continuous_across_all_faces() {
        let sp = space(4, 2, Continuity::C0Periodic);
        let u = interpolate(&sp, |y| {
            (2.0 * PI * y[0]).cos() + (2.0 * PI * y[1]).sin()
        });
        for face in 0..sp.mesh.n_faces() {
            for t in [0.0, 0.31, 0.77, 1.0] {
                let (vp, _, vm, _) = u.face_trace(face, t);
                assert!((vp - vm).abs() < 1e-12, "face {face} t {t}: {vp} vs {vm}");
            }
        }
    }

    #[test]
    fn jump_sign_convention_is_plus_minus() {
        let sp = space(1, 2, Continuity::Discontinuous);
        let face = 0;
        let f = &sp.mesh.faces[face];
        let mut u = DiscreteFunction::zero(&sp);
        // 0 on the plus element, 1 on the minus element
        for &d in sp.elem_dofs(f.elem_minus) {
            u.coeffs[d] = 1.0;
        }
        let (vp, _, vm, _) = u.face_trace(face, 0.4);
        assert!((vp - 0.0).abs() < 1e-14);
        assert!((vm - 1.0).abs() < 1e-14);
        let jump = vp - vm;
        assert!((jump + 1.0).abs() < 1e-14);
    }

    /// Measured decay of the normal-gradient jump of an interpolant across a
    /// boundary face-pair, expected order h^(p-1) = h^2 at degree 3.
    #[test]
    fn normal_gradient_jump_decays_on_boundary_pairs() {
        let f = |y: [f64; 2]| (2.0 * PI * y[0]).cos() * (2.0 * PI * y[1]).cos();
        let mut sup_jumps = Vec::new();
        for m in [4usize, 8, 16] {
            let sp = space(m, 3, Continuity::C0Periodic);
            let u = interpolate(&sp, f);
            let mut worst: f64 = 0.0;
            for (fi, face) in sp.mesh.faces.iter().enumerate() {
                if face.kind != crate::mesh::FaceKind::BoundaryPair {
                    continue;
                }
                for t in [0.1, 0.5, 0.9] {
                    let (_, gp, _, gm) = u.face_trace(fi, t);
                    let jn = (gp[0] - gm[0]) * face.normal[0] + (gp[1] - gm[1]) * face.normal[1];
                    worst = worst.max(jn.abs());
                }
            }
            sup_jumps.push(worst);
        }
        let rate01 = (sup_jumps[0] / sup_jumps[1]).log2();
        let rate12 = (sup_jumps[1] / sup_jumps[2]).log2();
        assert!(rate01 > 1.5, "rates {sup_jumps:?} -> {rate01}");
        assert!(rate12 > 1.7, "rates {sup_jumps:?} -> {rate12}");
    }

    #[test]
    fn export_csv_lists_every_node() {
        let sp = space(1, 2, Continuity::Discontinuous);
        let u = interpolate(&sp, |y| y[0]);
        let mut buf = Vec::new();
        u.export_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 * 6);
        assert!(text.starts_with("element,ref_x,ref_y,value"));
    }
}
