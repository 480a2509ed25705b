//! Exact solver for the constant-coefficient comparison operator on the
//! uniform periodic mesh, used as a preconditioner.
//!
//! On the uniform torus triangulation the discrete form of
//! `u -> int (lambda u - lap u)(lambda v - lap v) + theta S + J` is
//! block-circulant: cells are translates of each other, so the matrix is a
//! convolution in the cell index with a small block stencil. A 2D DFT
//! diagonalizes it into independent `bs x bs` complex systems, one per
//! frequency, giving an exact `O(N m)` application. The renormalized HJBI
//! operators stay uniformly close to this comparison operator (that is what
//! the Cordes condition buys), so Krylov iterations preconditioned by it
//! converge at a mesh-independent rate.

use num_complex::Complex64;
use std::collections::BTreeMap;
use std::sync::Arc;

use crate::assembly::{linearized_matrix, sweep_f_gamma, SchemeParams};
use crate::problem::{CoeffSample, Coefficients, ControlGrid, HJBIProblem};
use crate::space::{Continuity, DiscreteFunction, FESpace};
use crate::{Error, Result, SymMat2};

struct IdentityCoefficients {
    lambda: f64,
}

impl Coefficients for IdentityCoefficients {
    fn eval(&self, _y: [f64; 2], _a: f64, _b: f64) -> CoeffSample {
        CoeffSample {
            a: SymMat2::identity(),
            b: [0.0; 2],
            c: self.lambda,
            f: 0.0,
        }
    }
}

/// Block-circulant factorization of the comparison operator.
pub struct CirculantSolver {
    m: usize,
    bs: usize,
    /// dof -> (cell row-major index, slot)
    cell_of: Vec<usize>,
    slot_of: Vec<usize>,
    /// per-frequency complex LU factors, row-major blocks
    factors: Vec<ComplexLu>,
    /// forward twiddle matrix `w[k*m + c] = exp(-2 pi i k c / m)`
    twiddle: Vec<Complex64>,
}

impl CirculantSolver {
    /// Assemble the comparison operator for the space and parameters and
    /// factor its symbol.
    pub fn build(space: &Arc<FESpace>, params: &SchemeParams) -> Result<CirculantSolver> {
        let m = space.mesh.subdivisions;
        let n = space.n_dofs;
        if n % (m * m) != 0 {
            return Err(Error::InvalidArgument(
                "space dofs do not tile the cell grid".into(),
            ));
        }
        let bs = n / (m * m);

        // classify dofs into (cell, slot) by lattice position
        let (cell_of, slot_of, dof_of) = classify_dofs(space, m, bs)?;

        // The comparison operator: identity diffusion, zero drift and
        // source. Its lambda is floored at one: tiny zeroth-order weights
        // (cell problems carry lambda ~ sigma) make the zero-frequency
        // symbol block near-singular, and its solve noise would cap the
        // attainable Krylov accuracy. With the floor the weak constant mode
        // of the preconditioned system becomes a single small eigenvalue,
        // which costs a few iterations instead of precision.
        let pc_lambda = params.lambda.max(1.0);
        let pc_params = SchemeParams {
            lambda: pc_lambda,
            ..*params
        };
        let problem = HJBIProblem::new(
            Arc::new(IdentityCoefficients { lambda: pc_lambda }),
            ControlGrid::singleton(0.0, 0.0),
            pc_lambda,
            1.0 - 1e-9,
        );
        let zero = DiscreteFunction::zero(space);
        let sweep = sweep_f_gamma(space, &problem, &zero);
        let k_matrix = linearized_matrix(space, &problem, &pc_params, &sweep).matrix;

        // extract the block stencil from the representative cell (0, 0)
        // BTreeMap: the symbol accumulation order must not depend on hash
        // seeds, or preconditioner bits would vary run to run
        let mut stencil: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
        for a in 0..bs {
            let i = dof_of[a];
            debug_assert_eq!(cell_of[i], 0);
            for p in k_matrix.row_ptr[i]..k_matrix.row_ptr[i + 1] {
                let j = k_matrix.cols[p];
                let mut v = k_matrix.vals[p];
                if i == j && !k_matrix.diag_comp.is_empty() {
                    v += k_matrix.diag_comp[i];
                }
                let cj = cell_of[j];
                let shift = (cj % m, cj / m);
                let block = stencil
                    .entry(shift)
                    .or_insert_with(|| vec![0.0; bs * bs]);
                block[a * bs + slot_of[j]] += v;
            }
        }

        // symbol and per-frequency factorization
        let tau = -2.0 * std::f64::consts::PI / m as f64;
        let mut factors = Vec::with_capacity(m * m);
        for k2 in 0..m {
            for k1 in 0..m {
                let mut sym = vec![Complex64::new(0.0, 0.0); bs * bs];
                for (&(s1, s2), block) in &stencil {
                    // column cell = row cell + shift, so the symbol carries
                    // the conjugate phase of the forward transform
                    let phase = Complex64::from_polar(
                        1.0,
                        -tau * (k1 * s1 + k2 * s2) as f64,
                    );
                    for (sy, &b) in sym.iter_mut().zip(block.iter()) {
                        *sy += phase * b;
                    }
                }
                factors.push(ComplexLu::factor(bs, sym).ok_or_else(|| {
                    Error::LinearSolve(format!(
                        "singular comparison-operator symbol at frequency ({k1},{k2})"
                    ))
                })?);
            }
        }

        let mut twiddle = vec![Complex64::new(0.0, 0.0); m * m];
        for k in 0..m {
            for c in 0..m {
                twiddle[k * m + c] = Complex64::from_polar(1.0, tau * (k * c) as f64);
            }
        }

        Ok(CirculantSolver {
            m,
            bs,
            cell_of,
            slot_of,
            factors,
            twiddle,
        })
    }

    /// `out = K^-1 r`.
    pub fn apply(&self, r: &[f64], out: &mut [f64]) {
        let m = self.m;
        let bs = self.bs;
        let nc = m * m;
        // gather into cell-major complex grid per slot: z[s][cell]
        let mut grid = vec![Complex64::new(0.0, 0.0); bs * nc];
        for (dof, &val) in r.iter().enumerate() {
            grid[self.slot_of[dof] * nc + self.cell_of[dof]] = Complex64::new(val, 0.0);
        }
        let mut work = vec![Complex64::new(0.0, 0.0); nc];
        for s in 0..bs {
            let plane = &mut grid[s * nc..(s + 1) * nc];
            self.dft2(plane, &mut work, false);
        }
        // block solve per frequency
        let mut rhs_block = vec![Complex64::new(0.0, 0.0); bs];
        for k in 0..nc {
            for s in 0..bs {
                rhs_block[s] = grid[s * nc + k];
            }
            self.factors[k].solve_in_place(&mut rhs_block);
            for s in 0..bs {
                grid[s * nc + k] = rhs_block[s];
            }
        }
        for s in 0..bs {
            let plane = &mut grid[s * nc..(s + 1) * nc];
            self.dft2(plane, &mut work, true);
        }
        for dof in 0..r.len() {
            out[dof] = grid[self.slot_of[dof] * nc + self.cell_of[dof]].re / (nc as f64);
        }
    }

    /// Separable 2D DFT over the cell grid (naive matrix transform; the
    /// grids are small enough that no FFT is warranted).
    fn dft2(&self, plane: &mut [Complex64], work: &mut [Complex64], inverse: bool) {
        let m = self.m;
        let tw = |k: usize, c: usize| {
            let t = self.twiddle[k * m + c];
            if inverse {
                t.conj()
            } else {
                t
            }
        };
        // rows: index c = c2*m + c1, transform over c1
        for c2 in 0..m {
            let row = &plane[c2 * m..(c2 + 1) * m];
            for k1 in 0..m {
                let mut acc = Complex64::new(0.0, 0.0);
                for (c1, &v) in row.iter().enumerate() {
                    acc += tw(k1, c1) * v;
                }
                work[c2 * m + k1] = acc;
            }
        }
        // columns: transform over c2
        for k1 in 0..m {
            for k2 in 0..m {
                let mut acc = Complex64::new(0.0, 0.0);
                for c2 in 0..m {
                    acc += tw(k2, c2) * work[c2 * m + k1];
                }
                plane[k2 * m + k1] = acc;
            }
        }
    }
}

fn classify_dofs(
    space: &Arc<FESpace>,
    m: usize,
    bs: usize,
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let n = space.n_dofs;
    let mut cell_of = vec![0usize; n];
    let mut slot_of = vec![0usize; n];
    let mut dof_of = vec![usize::MAX; m * m * bs];
    match space.continuity {
        Continuity::Discontinuous => {
            let nloc = space.nloc();
            for elem in 0..space.mesh.n_elements() {
                let cell = elem / 2;
                let sub = elem % 2;
                for (l, &d) in space.elem_dofs(elem).iter().enumerate() {
                    cell_of[d] = cell;
                    slot_of[d] = sub * nloc + l;
                    dof_of[cell * bs + slot_of[d]] = d;
                }
            }
        }
        Continuity::C0Periodic => {
            // lattice classification: dofs sit on the (m p)^2 grid; the cell
            // owns the p x p lattice points anchored at its lower-left corner
            let p = space.degree;
            let lat = (m * p) as i64;
            for (d, point) in space.dof_points.iter().enumerate() {
                let mut idx = [0i64; 2];
                for a in 0..2 {
                    let scaled = point[a] * lat as f64;
                    let snapped = scaled.round();
                    if (scaled - snapped).abs() > 1e-8 * lat as f64 {
                        return Err(Error::InvalidArgument(
                            "dof off the periodic lattice".into(),
                        ));
                    }
                    idx[a] = (snapped as i64).rem_euclid(lat);
                }
                let (cx, wx) = (idx[0] / p as i64, idx[0] % p as i64);
                let (cy, wy) = (idx[1] / p as i64, idx[1] % p as i64);
                let cell = (cy as usize) * m + cx as usize;
                let slot = (wy as usize) * p + wx as usize;
                cell_of[d] = cell;
                slot_of[d] = slot;
                dof_of[cell * bs + slot] = d;
            }
        }
    }
    if dof_of.iter().any(|&d| d == usize::MAX) {
        return Err(Error::InvalidArgument(
            "dof classification is not a bijection".into(),
        ));
    }
    Ok((cell_of, slot_of, dof_of))
}

/// Dense complex LU with partial pivoting.
struct ComplexLu {
    n: usize,
    lu: Vec<Complex64>,
    piv: Vec<usize>,
}

impl ComplexLu {
    fn factor(n: usize, mut a: Vec<Complex64>) -> Option<ComplexLu> {
        let mut piv = vec![0usize; n];
        for k in 0..n {
            let mut p = k;
            let mut best = a[k * n + k].norm_sqr();
            for i in (k + 1)..n {
                let v = a[i * n + k].norm_sqr();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return None;
            }
            piv[k] = p;
            if p != k {
                for j in 0..n {
                    a.swap(k * n + j, p * n + j);
                }
            }
            let pivot = a[k * n + k];
            for i in (k + 1)..n {
                let l = a[i * n + k] / pivot;
                a[i * n + k] = l;
                if l.norm_sqr() != 0.0 {
                    for j in (k + 1)..n {
                        let sub = l * a[k * n + j];
                        a[i * n + j] -= sub;
                    }
                }
            }
        }
        Some(ComplexLu { n, lu: a, piv })
    }

    fn solve_in_place(&self, b: &mut [Complex64]) {
        let n = self.n;
        for k in 0..n {
            b.swap(k, self.piv[k]);
        }
        for i in 0..n {
            let mut s = b[i];
            for j in 0..i {
                s -= self.lu[i * n + j] * b[j];
            }
            b[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for j in (i + 1)..n {
                s -= self.lu[i * n + j] * b[j];
            }
            b[i] = s / self.lu[i * n + i];
        }
    }
}
