//! Assembly of the nonlinear residual, the stabilization and jump-penalty
//! bilinear forms, and the policy-linearized sparse systems.
//!
//! The discrete form is
//! `a(w, v) = int F_gamma[w] (lambda v - lap v) + theta S(w, v) + J(w, v)`
//! with `S` the symmetric stabilization form pairing Hessian nonconformity
//! against face jumps, and `J` the interior-penalty jump form. Boundary
//! face-pairs enter exactly like interior faces; minus-side traces are taken
//! at plus-side coordinates shifted by the face offset.
//!
//! Element and face loops run in parallel; contributions are collected in
//! entity order and scattered sequentially, so assembled values do not
//! depend on thread count.

use std::io::Write;

use rayon::prelude::*;

use crate::algebra::SymMat2;
use crate::problem::{CoeffTable, HJBIProblem, PointEval};
use crate::space::{BasisValues, DiscreteFunction, FESpace};
use crate::{Error, Result};

/// Parameters of the scheme family: stabilization weight `theta`, jump
/// penalties `eta1` (gradients) and `eta2` (values), and the Cordes `lambda`
/// entering the test operator `lambda v - lap v`.
#[derive(Clone, Copy, Debug)]
pub struct SchemeParams {
    pub theta: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub lambda: f64,
}

impl SchemeParams {
    /// Default interior-penalty scaling `eta = 10 p^2`.
    pub fn defaults(theta: f64, degree: usize, lambda: f64) -> Self {
        let eta = 10.0 * (degree * degree) as f64;
        SchemeParams {
            theta,
            eta1: eta,
            eta2: eta,
            lambda,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::InvalidArgument(format!(
                "theta must be in [0, 1], got {}",
                self.theta
            )));
        }
        if !(self.eta1 > 0.0 && self.eta2 > 0.0) {
            return Err(Error::InvalidArgument(
                "penalty parameters must be positive".into(),
            ));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::InvalidArgument("lambda must be positive".into()));
        }
        Ok(())
    }
}

/// Compressed-row sparse matrix with sorted column indices.
///
/// `diag_comp`, when nonempty, is an exact additive diagonal correction on
/// top of `vals`; matrix entries are often orders of magnitude larger than
/// the row-sum corrections they carry, so folding the correction into a
/// stored entry would round it away.
#[derive(Clone, Debug)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
    pub diag_comp: Vec<f64>,
}

impl CsrMatrix {
    /// Build from (row, col, value) triplets, summing duplicates.
    pub fn from_triplets(n: usize, mut triplets: Vec<(u32, u32, f64)>) -> CsrMatrix {
        triplets.sort_unstable_by_key(|t| (t.0, t.1));
        let mut row_counts = vec![0usize; n + 1];
        let mut cols: Vec<usize> = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(u32, u32)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c as usize);
                vals.push(v);
                row_counts[r as usize + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            row_counts[i + 1] += row_counts[i];
        }
        CsrMatrix {
            n,
            row_ptr: row_counts,
            cols,
            vals,
            diag_comp: Vec::new(),
        }
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut s = 0.0;
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[p] * x[self.cols[p]];
            }
            if !self.diag_comp.is_empty() {
                s += self.diag_comp[i] * x[i];
            }
            y[i] = s;
        }
    }

    /// Matrix-vector product with error-free transformations (fused
    /// multiply-add product errors plus Neumaier summation). Used for
    /// iterative-refinement residuals, where the plain product cancels to
    /// roundoff.
    pub fn matvec_compensated(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut s = 0.0f64;
            let mut comp = 0.0f64;
            let acc = |a: f64, b: f64, s: &mut f64, comp: &mut f64| {
                let prod = a * b;
                *comp += a.mul_add(b, -prod);
                let t = *s + prod;
                *comp += if s.abs() >= prod.abs() {
                    (*s - t) + prod
                } else {
                    (prod - t) + *s
                };
                *s = t;
            };
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc(self.vals[p], x[self.cols[p]], &mut s, &mut comp);
            }
            if !self.diag_comp.is_empty() {
                acc(self.diag_comp[i], x[i], &mut s, &mut comp);
            }
            y[i] = s + comp;
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let fix = if i == j && !self.diag_comp.is_empty() {
            self.diag_comp[i]
        } else {
            0.0
        };
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        match self.cols[lo..hi].binary_search(&j) {
            Ok(p) => self.vals[lo + p] + fix,
            Err(_) => fix,
        }
    }

    /// Coordinate-format text dump: `row col value` per line. The diagonal
    /// compensation is merged into the diagonal entries.
    pub fn dump_coo<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for i in 0..self.n {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                let mut v = self.vals[p];
                if self.cols[p] == i && !self.diag_comp.is_empty() {
                    v += self.diag_comp[i];
                }
                writeln!(w, "{} {} {:.16e}", i, self.cols[p], v)?;
            }
        }
        Ok(())
    }

    pub fn to_dense(&self) -> crate::algebra::DenseMatrix {
        let mut d = crate::algebra::DenseMatrix::zeros(self.n);
        for i in 0..self.n {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                d.set(i, self.cols[p], self.vals[p]);
            }
            if !self.diag_comp.is_empty() {
                let v = d.get(i, i) + self.diag_comp[i];
                d.set(i, i, v);
            }
        }
        d
    }
}

/// One policy linearization: sparse matrix plus right-hand side.
#[derive(Clone, Debug)]
pub struct AssembledSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
}

/// Pointwise evaluations of `F_gamma` at every volume quadrature point of
/// the current iterate, with optimizing controls.
#[derive(Clone, Debug)]
pub struct FrozenSweep {
    pub n_qp: usize,
    pub evals: Vec<PointEval>,
}

impl FrozenSweep {
    pub fn same_policy(&self, other: &FrozenSweep) -> bool {
        self.evals.len() == other.evals.len()
            && self
                .evals
                .iter()
                .zip(&other.evals)
                .all(|(a, b)| a.alpha_index == b.alpha_index && a.beta_index == b.beta_index)
    }
}

/// Evaluate `F_gamma` with optimizers at every volume quadrature point.
pub fn sweep_f_gamma(space: &FESpace, problem: &HJBIProblem, u: &DiscreteFunction) -> FrozenSweep {
    sweep_f_gamma_warm(space, problem, u, None)
}

/// As [`sweep_f_gamma`], keeping the previous sweep's control pair at any
/// quadrature point where it is still optimal up to the tie deadband. This
/// is what lets Howard terminate on a repeated policy in the presence of
/// control combinations with equal coefficients.
pub fn sweep_f_gamma_warm(
    space: &FESpace,
    problem: &HJBIProblem,
    u: &DiscreteFunction,
    prev: Option<&FrozenSweep>,
) -> FrozenSweep {
    let nq = space.n_volume_qp();
    if let Some(p) = prev {
        assert_eq!(p.evals.len(), space.mesh.n_elements() * nq);
    }
    let evals: Vec<Vec<PointEval>> = (0..space.mesh.n_elements())
        .into_par_iter()
        .map_init(CoeffTable::new, |table, elem| {
            let mut out = Vec::with_capacity(nq);
            for q in 0..nq {
                let (y, _) = space.volume_point(elem, q);
                let (v, g, h) = space.eval_function_at_qp(&u.coeffs, elem, q);
                let incumbent = prev.map(|p| {
                    let pe = &p.evals[elem * nq + q];
                    (pe.alpha_index, pe.beta_index)
                });
                problem
                    .coeffs
                    .fill_gamma_table(y, &problem.controls, problem.lambda, table);
                out.push(crate::problem::scan_table_locked(
                    problem, v, g, &h, table, incumbent,
                ));
            }
            out
        })
        .collect();
    FrozenSweep {
        n_qp: nq,
        evals: evals.into_iter().flatten().collect(),
    }
}

/// The nonlinear residual vector `i -> a(u, phi_i)`.
pub fn residual(
    space: &FESpace,
    problem: &HJBIProblem,
    params: &SchemeParams,
    u: &DiscreteFunction,
) -> Vec<f64> {
    let sweep = sweep_f_gamma(space, problem, u);
    residual_from_sweep(space, params, u, &sweep)
}

/// Residual reusing an existing `F_gamma` sweep of the same iterate.
pub fn residual_from_sweep(
    space: &FESpace,
    params: &SchemeParams,
    u: &DiscreteFunction,
    sweep: &FrozenSweep,
) -> Vec<f64> {
    let nloc = space.nloc();
    let nq = space.n_volume_qp();
    let lambda = params.lambda;

    let volume: Vec<Vec<f64>> = (0..space.mesh.n_elements())
        .into_par_iter()
        .map_init(
            || BasisValues::new(nloc),
            |basis, elem| {
                let mut local = vec![0.0; nloc];
                for q in 0..nq {
                    let (_, w) = space.volume_point(elem, q);
                    let fv = sweep.evals[elem * nq + q].value;
                    space.mapped_basis_at_qp(elem, q, basis);
                    for i in 0..nloc {
                        let testop = lambda * basis.val[i] - (basis.hxx[i] + basis.hyy[i]);
                        local[i] += w * fv * testop;
                    }
                    if params.theta != 0.0 {
                        // volume part of S applied to the iterate
                        let (_, _, hu) = space.eval_function_at_qp(&u.coeffs, elem, q);
                        for i in 0..nloc {
                            let hi = SymMat2 {
                                xx: basis.hxx[i],
                                xy: basis.hxy[i],
                                yy: basis.hyy[i],
                            };
                            local[i] +=
                                w * params.theta * (hu.ddot(&hi) - hu.trace() * hi.trace());
                        }
                    }
                }
                local
            },
        )
        .collect();

    let faces = face_residual_contributions(space, params, &u.coeffs);

    let mut r = vec![0.0; space.n_dofs];
    for (elem, local) in volume.iter().enumerate() {
        for (i, &dof) in space.elem_dofs(elem).iter().enumerate() {
            r[dof] += local[i];
        }
    }
    for (dofs, local) in &faces {
        for (i, &dof) in dofs.iter().enumerate() {
            r[dof] += local[i];
        }
    }
    r
}

/// Per-face residual contributions `theta S(u, phi_i) + J(u, phi_i)`,
/// returned per face over the stacked plus/minus local DOFs.
fn face_residual_contributions(
    space: &FESpace,
    params: &SchemeParams,
    coeffs: &[f64],
) -> Vec<(Vec<usize>, Vec<f64>)> {
    let ft = space.face_tables();
    let nloc = ft.nloc;
    let n_qp = ft.n_qp;
    (0..space.mesh.n_faces())
        .into_par_iter()
        .map(|fi| {
            let face = &space.mesh.faces[fi];
            let dofs: Vec<usize> = space
                .elem_dofs(face.elem_plus)
                .iter()
                .chain(space.elem_dofs(face.elem_minus))
                .copied()
                .collect();
            let inv_h = 1.0 / face.h_f;
            let pen1 = params.eta1 * inv_h;
            let pen3 = params.eta2 * inv_h * inv_h * inv_h;
            // every atom functional annihilates constants, so deflate by
            // the local mean to keep roundoff offset-independent
            let mean = dofs.iter().map(|&d| coeffs[d]).sum::<f64>() / (2 * nloc) as f64;
            let mut local = vec![0.0; 2 * nloc];
            for q in 0..n_qp {
                let w = ft.weight[fi * n_qp + q];
                let base = (fi * n_qp + q) * 2 * nloc;
                let atoms = base..base + 2 * nloc;
                // function-level jump/average quantities of u
                let mut u_jv = 0.0;
                let mut u_jn = 0.0;
                let mut u_jt = 0.0;
                let mut u_att = 0.0;
                let mut u_atn = 0.0;
                for (k, a) in atoms.clone().enumerate() {
                    let c = coeffs[dofs[k]] - mean;
                    u_jv += c * ft.sv[a];
                    u_jn += c * ft.sgn[a];
                    u_jt += c * ft.sgt[a];
                    u_att += c * ft.att[a];
                    u_atn += c * ft.atn[a];
                }
                for (k, a) in atoms.enumerate() {
                    let s_term = ft.att[a] * u_jn + u_att * ft.sgn[a]
                        - ft.atn[a] * u_jt
                        - u_atn * ft.sgt[a];
                    let j_term = pen1 * (ft.sgn[a] * u_jn + ft.sgt[a] * u_jt)
                        + pen3 * ft.sv[a] * u_jv;
                    local[k] += w * (params.theta * s_term + j_term);
                }
            }
            (dofs, local)
        })
        .collect()
}

/// The symmetric stabilization bilinear form: volume Hessian/Laplacian
/// mismatch plus tangential face couplings.
pub fn stabilization_s(space: &FESpace, w_fn: &DiscreteFunction, v_fn: &DiscreteFunction) -> f64 {
    let nq = space.n_volume_qp();
    let volume_parts: Vec<f64> = (0..space.mesh.n_elements())
        .into_par_iter()
        .map(|elem| {
            let mut acc = 0.0;
            for q in 0..nq {
                let (_, wq) = space.volume_point(elem, q);
                let (_, _, hw) = space.eval_function_at_qp(&w_fn.coeffs, elem, q);
                let (_, _, hv) = space.eval_function_at_qp(&v_fn.coeffs, elem, q);
                acc += wq * (hw.ddot(&hv) - hw.trace() * hv.trace());
            }
            acc
        })
        .collect();

    let ft = space.face_tables();
    let nloc = ft.nloc;
    let n_qp = ft.n_qp;
    let face_parts: Vec<f64> = (0..space.mesh.n_faces())
        .into_par_iter()
        .map(|fi| {
            let face = &space.mesh.faces[fi];
            let dofs: Vec<usize> = space
                .elem_dofs(face.elem_plus)
                .iter()
                .chain(space.elem_dofs(face.elem_minus))
                .copied()
                .collect();
            let mean_w = dofs.iter().map(|&d| w_fn.coeffs[d]).sum::<f64>() / (2 * nloc) as f64;
            let mean_v = dofs.iter().map(|&d| v_fn.coeffs[d]).sum::<f64>() / (2 * nloc) as f64;
            let mut acc = 0.0;
            for q in 0..n_qp {
                let w = ft.weight[fi * n_qp + q];
                let base = (fi * n_qp + q) * 2 * nloc;
                let mut wq = FaceFn::default();
                let mut vq = FaceFn::default();
                for k in 0..2 * nloc {
                    let a = base + k;
                    wq.accumulate(w_fn.coeffs[dofs[k]] - mean_w, ft, a);
                    vq.accumulate(v_fn.coeffs[dofs[k]] - mean_v, ft, a);
                }
                acc += w
                    * (wq.att * vq.jn + vq.att * wq.jn - wq.atn * vq.jt - vq.atn * wq.jt);
            }
            acc
        })
        .collect();

    crate::analysis::pairwise_sum(&volume_parts) + crate::analysis::pairwise_sum(&face_parts)
}

#[derive(Default, Clone, Copy)]
struct FaceFn {
    jv: f64,
    jn: f64,
    jt: f64,
    att: f64,
    atn: f64,
}

impl FaceFn {
    #[inline]
    fn accumulate(&mut self, c: f64, ft: &crate::space::FaceTables, a: usize) {
        self.jv += c * ft.sv[a];
        self.jn += c * ft.sgn[a];
        self.jt += c * ft.sgt[a];
        self.att += c * ft.att[a];
        self.atn += c * ft.atn[a];
    }
}

/// The jump penalization form
/// `eta1 int h^-1 [grad w].[grad v] + eta2 int h^-3 [w][v]`.
pub fn penalty_j(
    space: &FESpace,
    params: &SchemeParams,
    w_fn: &DiscreteFunction,
    v_fn: &DiscreteFunction,
) -> f64 {
    let ft = space.face_tables();
    let nloc = ft.nloc;
    let n_qp = ft.n_qp;
    let parts: Vec<f64> = (0..space.mesh.n_faces())
        .into_par_iter()
        .map(|fi| {
            let face = &space.mesh.faces[fi];
            let dofs: Vec<usize> = space
                .elem_dofs(face.elem_plus)
                .iter()
                .chain(space.elem_dofs(face.elem_minus))
                .copied()
                .collect();
            let inv_h = 1.0 / face.h_f;
            let pen1 = params.eta1 * inv_h;
            let pen3 = params.eta2 * inv_h * inv_h * inv_h;
            let mean_w = dofs.iter().map(|&d| w_fn.coeffs[d]).sum::<f64>() / (2 * nloc) as f64;
            let mean_v = dofs.iter().map(|&d| v_fn.coeffs[d]).sum::<f64>() / (2 * nloc) as f64;
            let mut acc = 0.0;
            for q in 0..n_qp {
                let w = ft.weight[fi * n_qp + q];
                let base = (fi * n_qp + q) * 2 * nloc;
                let mut wq = FaceFn::default();
                let mut vq = FaceFn::default();
                for k in 0..2 * nloc {
                    let a = base + k;
                    wq.accumulate(w_fn.coeffs[dofs[k]] - mean_w, ft, a);
                    vq.accumulate(v_fn.coeffs[dofs[k]] - mean_v, ft, a);
                }
                acc += w * (pen1 * (wq.jn * vq.jn + wq.jt * vq.jt) + pen3 * wq.jv * vq.jv);
            }
            acc
        })
        .collect();
    crate::analysis::pairwise_sum(&parts)
}

/// Assemble the Howard-linearized system: coefficients frozen at the
/// optimizing controls of the sweep.
pub fn linearized_matrix(
    space: &FESpace,
    problem: &HJBIProblem,
    params: &SchemeParams,
    sweep: &FrozenSweep,
) -> AssembledSystem {
    let _ = problem;
    let nloc = space.nloc();
    let nq = space.n_volume_qp();
    let lambda = params.lambda;
    let n = space.n_dofs;

    struct ElemBlock {
        block: Vec<f64>,
        rhs: Vec<f64>,
        /// exact row action on the constant function
        row_target: Vec<f64>,
    }

    let elem_blocks: Vec<ElemBlock> = (0..space.mesh.n_elements())
        .into_par_iter()
        .map_init(
            || BasisValues::new(nloc),
            |basis, elem| {
                let mut block = vec![0.0; nloc * nloc];
                let mut rhs = vec![0.0; nloc];
                let mut row_target = vec![0.0; nloc];
                let mut lop = vec![0.0; nloc];
                let mut testop = vec![0.0; nloc];
                for q in 0..nq {
                    let (_, w) = space.volume_point(elem, q);
                    let ev = &sweep.evals[elem * nq + q];
                    space.mapped_basis_at_qp(elem, q, basis);
                    for j in 0..nloc {
                        let hj = SymMat2 {
                            xx: basis.hxx[j],
                            xy: basis.hxy[j],
                            yy: basis.hyy[j],
                        };
                        lop[j] = ev.gc * basis.val[j]
                            - ev.ga.ddot(&hj)
                            - (ev.gb[0] * basis.gx[j] + ev.gb[1] * basis.gy[j]);
                        testop[j] = lambda * basis.val[j] - (basis.hxx[j] + basis.hyy[j]);
                    }
                    for i in 0..nloc {
                        let wt = w * testop[i];
                        let row = &mut block[i * nloc..(i + 1) * nloc];
                        for j in 0..nloc {
                            row[j] += wt * lop[j];
                        }
                        rhs[i] += wt * ev.gf;
                        row_target[i] += wt * ev.gc;
                    }
                    if params.theta != 0.0 {
                        // volume part of S: Hessian pairing minus Laplacians
                        for i in 0..nloc {
                            let hi = SymMat2 {
                                xx: basis.hxx[i],
                                xy: basis.hxy[i],
                                yy: basis.hyy[i],
                            };
                            let row = &mut block[i * nloc..(i + 1) * nloc];
                            for j in 0..nloc {
                                let hj = SymMat2 {
                                    xx: basis.hxx[j],
                                    xy: basis.hxy[j],
                                    yy: basis.hyy[j],
                                };
                                row[j] += w
                                    * params.theta
                                    * (hi.ddot(&hj) - hi.trace() * hj.trace());
                            }
                        }
                    }
                }
                ElemBlock {
                    block,
                    rhs,
                    row_target,
                }
            },
        )
        .collect();

    let ft = space.face_tables();
    let n_qp = ft.n_qp;
    let face_blocks: Vec<(Vec<usize>, Vec<f64>)> = (0..space.mesh.n_faces())
        .into_par_iter()
        .map(|fi| {
            let face = &space.mesh.faces[fi];
            let dofs: Vec<usize> = space
                .elem_dofs(face.elem_plus)
                .iter()
                .chain(space.elem_dofs(face.elem_minus))
                .copied()
                .collect();
            let m = 2 * nloc;
            let inv_h = 1.0 / face.h_f;
            let pen1 = params.eta1 * inv_h;
            let pen3 = params.eta2 * inv_h * inv_h * inv_h;
            let mut block = vec![0.0; m * m];
            for q in 0..n_qp {
                let w = ft.weight[fi * n_qp + q];
                let base = (fi * n_qp + q) * m;
                for i in 0..m {
                    let ai = base + i;
                    let row = &mut block[i * m..(i + 1) * m];
                    for j in 0..m {
                        let aj = base + j;
                        let s_ij = ft.att[aj] * ft.sgn[ai] + ft.att[ai] * ft.sgn[aj]
                            - ft.atn[aj] * ft.sgt[ai]
                            - ft.atn[ai] * ft.sgt[aj];
                        let j_ij = pen1
                            * (ft.sgn[ai] * ft.sgn[aj] + ft.sgt[ai] * ft.sgt[aj])
                            + pen3 * ft.sv[ai] * ft.sv[aj];
                        row[j] += w * (params.theta * s_ij + j_ij);
                    }
                }
            }
            (dofs, block)
        })
        .collect();

    let mut triplets: Vec<(u32, u32, f64)> =
        Vec::with_capacity(elem_blocks.len() * nloc * nloc + face_blocks.len() * 4 * nloc * nloc);
    let mut rhs = vec![0.0; n];
    // Exact action of the linearization on constants: the jump and
    // stabilization parts annihilate them and only the zeroth-order volume
    // term survives. Row sums are corrected onto this target below, so the
    // near-singular constant mode of small-sigma cell problems is not
    // polluted by the roundoff of the large Hessian-block entries.
    let mut row_target = vec![0.0; n];
    for (elem, eb) in elem_blocks.iter().enumerate() {
        let dofs = space.elem_dofs(elem);
        for i in 0..nloc {
            rhs[dofs[i]] += eb.rhs[i];
            row_target[dofs[i]] += eb.row_target[i];
            for j in 0..nloc {
                triplets.push((dofs[i] as u32, dofs[j] as u32, eb.block[i * nloc + j]));
            }
        }
    }
    for (dofs, block) in &face_blocks {
        let m = dofs.len();
        for i in 0..m {
            for j in 0..m {
                triplets.push((dofs[i] as u32, dofs[j] as u32, block[i * m + j]));
            }
        }
    }
    let mut matrix = CsrMatrix::from_triplets(n, triplets);
    let mut diag_comp = vec![0.0; n];
    for i in 0..n {
        // compensated row sum: the correction must beat the roundoff of the
        // large penalty entries it is cancelling
        let mut s = 0.0f64;
        let mut comp = 0.0f64;
        for p in matrix.row_ptr[i]..matrix.row_ptr[i + 1] {
            let v = matrix.vals[p];
            let t = s + v;
            comp += if s.abs() >= v.abs() {
                (s - t) + v
            } else {
                (v - t) + s
            };
            s = t;
        }
        diag_comp[i] = row_target[i] - (s + comp);
    }
    matrix.diag_comp = diag_comp;
    AssembledSystem { matrix, rhs }
}
