//! Broken H2-type norms, the jump seminorm, the a posteriori estimator, and
//! convergence-order bookkeeping.
//!
//! Reductions collect per-entity partial sums in entity order and combine
//! them by pairwise summation, so results are identical across thread
//! counts.

use std::io::Write;

use rayon::prelude::*;

use crate::algebra::SymMat2;
use crate::problem::{CoeffTable, HJBIProblem};
use crate::space::{BasisValues, DiscreteFunction, FESpace};
use crate::{Error, Result};

/// Reference against which errors are measured.
pub enum Reference<'a> {
    /// Closed-form solution with derivatives; assumed periodic and smooth,
    /// so it contributes no jumps.
    Analytic {
        u: &'a (dyn Fn([f64; 2]) -> f64 + Sync),
        grad: &'a (dyn Fn([f64; 2]) -> [f64; 2] + Sync),
        hess: &'a (dyn Fn([f64; 2]) -> SymMat2 + Sync),
    },
    /// Another function on the same space.
    Discrete(&'a DiscreteFunction),
    /// The zero function (norm of the argument itself).
    Zero,
}

/// Deterministic pairwise summation.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}

/// Plain integral of a discrete function over the cell.
pub fn integrate(space: &FESpace, u: &DiscreteFunction) -> f64 {
    let nq = space.n_volume_qp();
    let parts: Vec<f64> = (0..space.mesh.n_elements())
        .into_par_iter()
        .map(|elem| {
            let mut acc = 0.0;
            for q in 0..nq {
                let (_, w) = space.volume_point(elem, q);
                let (v, _, _) = space.eval_function_at_qp(&u.coeffs, elem, q);
                acc += w * v;
            }
            acc
        })
        .collect();
    pairwise_sum(&parts)
}

/// Volume part of the norm squared:
/// `int |hess u|^2 + 2 lambda |grad u|^2 + lambda^2 u^2`.
pub fn volume_norm_sq(space: &FESpace, lambda: f64, u: &DiscreteFunction) -> f64 {
    let nq = space.n_volume_qp();
    let parts: Vec<f64> = (0..space.mesh.n_elements())
        .into_par_iter()
        .map(|elem| {
            let mut acc = 0.0;
            for q in 0..nq {
                let (_, w) = space.volume_point(elem, q);
                let (v, g, h) = space.eval_function_at_qp(&u.coeffs, elem, q);
                acc += w
                    * (h.norm_sq()
                        + 2.0 * lambda * (g[0] * g[0] + g[1] * g[1])
                        + lambda * lambda * v * v);
            }
            acc
        })
        .collect();
    pairwise_sum(&parts)
}

/// Broken L2 norm of the piecewise Hessian.
pub fn broken_hessian_norm(space: &FESpace, u: &DiscreteFunction) -> f64 {
    let nq = space.n_volume_qp();
    let parts: Vec<f64> = (0..space.mesh.n_elements())
        .into_par_iter()
        .map(|elem| {
            let mut acc = 0.0;
            for q in 0..nq {
                let (_, w) = space.volume_point(elem, q);
                let (_, _, h) = space.eval_function_at_qp(&u.coeffs, elem, q);
                acc += w * h.norm_sq();
            }
            acc
        })
        .collect();
    pairwise_sum(&parts).sqrt()
}

/// Squared jump seminorm `int_F h^-1 |[grad v]|^2 + h^-3 |[v]|^2` over all
/// faces, boundary pairs included.
///
/// Traces are evaluated directly from the basis on both sides of each face
/// rather than through the assembly tables, so this is an independent route
/// for cross-checks against the penalty form.
pub fn jump_seminorm_sq(space: &FESpace, v: &DiscreteFunction) -> f64 {
    let nloc = space.nloc();
    let parts: Vec<f64> = (0..space.mesh.n_faces())
        .into_par_iter()
        .map_init(
            || (BasisValues::new(nloc), BasisValues::new(nloc)),
            |(bp, bm), fi| {
                let face = &space.mesh.faces[fi];
                let dofs_p = space.elem_dofs(face.elem_plus);
                let dofs_m = space.elem_dofs(face.elem_minus);
                let inv_h = 1.0 / face.h_f;
                // jumps annihilate constants; deflate by the local mean
                let mean = dofs_p
                    .iter()
                    .chain(dofs_m)
                    .map(|&d| v.coeffs[d])
                    .sum::<f64>()
                    / (2 * nloc) as f64;
                let mut acc = 0.0;
                for (q, &tq) in space.quad.edge_points.iter().enumerate() {
                    let w = space.quad.edge_weights[q] * face.h_f;
                    let (rp, rm) = space.face_ref_points(fi, tq);
                    space.basis_trace(face.elem_plus, rp, bp);
                    space.basis_trace(face.elem_minus, rm, bm);
                    let mut jv = 0.0;
                    let mut jg = [0.0; 2];
                    for k in 0..nloc {
                        let cp = v.coeffs[dofs_p[k]] - mean;
                        let cm = v.coeffs[dofs_m[k]] - mean;
                        jv += cp * bp.val[k] - cm * bm.val[k];
                        jg[0] += cp * bp.gx[k] - cm * bm.gx[k];
                        jg[1] += cp * bp.gy[k] - cm * bm.gy[k];
                    }
                    acc += w
                        * (inv_h * (jg[0] * jg[0] + jg[1] * jg[1])
                            + inv_h * inv_h * inv_h * jv * jv);
                }
                acc
            },
        )
        .collect();
    pairwise_sum(&parts)
}

/// The jump seminorm itself.
pub fn jump_seminorm(space: &FESpace, v: &DiscreteFunction) -> f64 {
    jump_seminorm_sq(space, v).sqrt()
}

/// The broken norm `(volume part + jump seminorm^2)^(1/2)` of the distance
/// between a discrete function and a reference.
///
/// Analytic references contribute to the volume terms at quadrature points
/// but have no jumps, so the jump part is that of `u_t` alone.
pub fn norm_t_lambda(
    space: &FESpace,
    lambda: f64,
    u_t: &DiscreteFunction,
    reference: &Reference,
) -> f64 {
    match reference {
        Reference::Zero => (volume_norm_sq(space, lambda, u_t) + jump_seminorm_sq(space, u_t)).sqrt(),
        Reference::Discrete(v) => {
            assert_eq!(
                v.coeffs.len(),
                u_t.coeffs.len(),
                "reference must live on the same space"
            );
            let diff: Vec<f64> = u_t
                .coeffs
                .iter()
                .zip(&v.coeffs)
                .map(|(a, b)| a - b)
                .collect();
            let d = DiscreteFunction {
                space: u_t.space.clone(),
                coeffs: diff,
            };
            (volume_norm_sq(space, lambda, &d) + jump_seminorm_sq(space, &d)).sqrt()
        }
        Reference::Analytic { u, grad, hess } => {
            let nq = space.n_volume_qp();
            let parts: Vec<f64> = (0..space.mesh.n_elements())
                .into_par_iter()
                .map(|elem| {
                    let mut acc = 0.0;
                    for q in 0..nq {
                        let (x, w) = space.volume_point(elem, q);
                        let (v, g, h) = space.eval_function_at_qp(&u_t.coeffs, elem, q);
                        let dv = v - u(x);
                        let gr = grad(x);
                        let dg = [g[0] - gr[0], g[1] - gr[1]];
                        let hr = hess(x);
                        let dh = SymMat2 {
                            xx: h.xx - hr.xx,
                            xy: h.xy - hr.xy,
                            yy: h.yy - hr.yy,
                        };
                        acc += w
                            * (dh.norm_sq()
                                + 2.0 * lambda * (dg[0] * dg[0] + dg[1] * dg[1])
                                + lambda * lambda * dv * dv);
                    }
                    acc
                })
                .collect();
            (pairwise_sum(&parts) + jump_seminorm_sq(space, u_t)).sqrt()
        }
    }
}

/// The computable a posteriori estimator
/// `eta(u) = (int |F_gamma[u]|^2 + |u|_J^2)^(1/2)`.
pub fn estimator_eta(space: &FESpace, problem: &HJBIProblem, u_t: &DiscreteFunction) -> f64 {
    let nq = space.n_volume_qp();
    let parts: Vec<f64> = (0..space.mesh.n_elements())
        .into_par_iter()
        .map_init(CoeffTable::new, |table, elem| {
            let mut acc = 0.0;
            for q in 0..nq {
                let (y, w) = space.volume_point(elem, q);
                let (v, g, h) = space.eval_function_at_qp(&u_t.coeffs, elem, q);
                let pe = crate::problem::eval_f_gamma_with(problem, y, v, g, &h, table);
                acc += w * pe.value * pe.value;
            }
            acc
        })
        .collect();
    (pairwise_sum(&parts) + jump_seminorm_sq(space, u_t)).sqrt()
}

/// One row of a refinement study.
#[derive(Clone, Debug)]
pub struct ConvergenceRow {
    pub n_dofs: usize,
    pub h_max: f64,
    pub error: f64,
    pub estimator: f64,
    pub eoc_error: Option<f64>,
    pub eoc_estimator: Option<f64>,
}

/// Fill experimental orders of convergence against the DOF count:
/// `eoc = -log(e1/e0) / log(N1/N0)`.
pub fn observed_orders(rows: &mut [ConvergenceRow]) -> Result<()> {
    if rows.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least two rows for observed orders".into(),
        ));
    }
    for i in 1..rows.len() {
        let ratio_n = rows[i].n_dofs as f64 / rows[i - 1].n_dofs as f64;
        let eoc = |e1: f64, e0: f64| {
            if e1 > 0.0 && e0 > 0.0 {
                Some(-(e1 / e0).ln() / ratio_n.ln())
            } else {
                None
            }
        };
        rows[i].eoc_error = eoc(rows[i].error, rows[i - 1].error);
        rows[i].eoc_estimator = eoc(rows[i].estimator, rows[i - 1].estimator);
    }
    Ok(())
}

/// Orders against the mesh size instead of the DOF count.
pub fn observed_orders_vs_h(rows: &[ConvergenceRow]) -> Vec<Option<f64>> {
    let mut out = vec![None; rows.len()];
    for i in 1..rows.len() {
        if rows[i].error > 0.0 && rows[i - 1].error > 0.0 {
            let ratio_h = rows[i].h_max / rows[i - 1].h_max;
            out[i] = Some((rows[i].error / rows[i - 1].error).ln() / ratio_h.ln());
        }
    }
    out
}

/// CSV emission: `N,h_max,error,estimator,eoc_error,eoc_estimator`.
pub fn rows_to_csv(rows: &[ConvergenceRow]) -> String {
    let mut s = String::from("N,h_max,error,estimator,eoc_error,eoc_estimator\n");
    for r in rows {
        let fmt_opt = |o: Option<f64>| o.map(|v| format!("{v:.6}")).unwrap_or_default();
        let fmt_err = |e: f64| {
            if e.is_nan() {
                String::new()
            } else {
                format!("{e:.10e}")
            }
        };
        s.push_str(&format!(
            "{},{:.10e},{},{:.10e},{},{}\n",
            r.n_dofs,
            r.h_max,
            fmt_err(r.error),
            r.estimator,
            fmt_opt(r.eoc_error),
            fmt_opt(r.eoc_estimator),
        ));
    }
    s
}

pub fn write_csv<W: Write>(rows: &[ConvergenceRow], mut w: W) -> std::io::Result<()> {
    w.write_all(rows_to_csv(rows).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{penalty_j, SchemeParams};
    use crate::mesh::build_uniform_mesh;
    use crate::problem::{builtin_problem, exp1_exact_hess, exp1_exact_u, BuiltinOptions};
    use crate::space::{build_space, interpolate, Continuity};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn space(m: usize, degree: usize, continuity: Continuity) -> Arc<FESpace> {
        let mesh = Arc::new(build_uniform_mesh(m).unwrap());
        build_space(&mesh, degree, continuity).unwrap()
    }

    #[test]
    fn norm_of_cosine_product_matches_closed_form() {
        // |u|^2 parts: int |hess|^2 = 16 pi^4, int |grad|^2 = 2 pi^2,
        // int u^2 = 1/4, so the lambda = 1 norm squared is
        // 16 pi^4 + 4 pi^2 + 1/4.
        let sp = space(16, 3, Continuity::C0Periodic);
        let zero = DiscreteFunction::zero(&sp);
        let reference = Reference::Analytic {
            u: &exp1_exact_u,
            grad: &crate::problem::exp1_exact_grad,
            hess: &exp1_exact_hess,
        };
        let n = norm_t_lambda(&sp, 1.0, &zero, &reference);
        let exact = (16.0 * PI.powi(4) + 4.0 * PI * PI + 0.25).sqrt();
        assert!(
            (n - exact).abs() < 1e-8 * exact,
            "norm {n} vs closed form {exact}"
        );
    }

    #[test]
    fn miranda_talenti_identity_for_smooth_periodic_fields() {
        // int (lap u)^2 = int |hess u|^2 for periodic smooth u, evaluated
        // by quadrature of the closed-form derivatives
        let sp = space(16, 3, Continuity::C0Periodic);
        let mut lap_sq = 0.0;
        let mut hess_sq = 0.0;
        for elem in 0..sp.mesh.n_elements() {
            for q in 0..sp.n_volume_qp() {
                let (x, w) = sp.volume_point(elem, q);
                let h = exp1_exact_hess(x);
                lap_sq += w * h.trace() * h.trace();
                hess_sq += w * h.norm_sq();
            }
        }
        assert!(
            (lap_sq - hess_sq).abs() < 1e-8 * hess_sq,
            "{lap_sq} vs {hess_sq}"
        );
        assert!((hess_sq - 16.0 * PI.powi(4)).abs() < 1e-7 * hess_sq);
    }

    #[test]
    fn norm_vanishes_against_identical_discrete_reference() {
        let sp = space(4, 2, Continuity::C0Periodic);
        let u = interpolate(&sp, |y| (2.0 * PI * y[0]).cos());
        let n = norm_t_lambda(&sp, 1.0, &u, &Reference::Discrete(&u));
        assert!(n < 1e-10, "self distance {n}");
    }

    #[test]
    fn lambda_scaling_identity() {
        // norm^2(lambda=2) - norm^2(lambda=1) = 2 int |grad|^2 + 3 int u^2
        let sp = space(3, 2, Continuity::Discontinuous);
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let coeffs: Vec<f64> = (0..sp.n_dofs).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let u = DiscreteFunction::from_coeffs(&sp, coeffs).unwrap();
        let n2 = volume_norm_sq(&sp, 2.0, &u) + jump_seminorm_sq(&sp, &u);
        let n1 = volume_norm_sq(&sp, 1.0, &u) + jump_seminorm_sq(&sp, &u);
        let mut grad_sq = 0.0;
        let mut val_sq = 0.0;
        for elem in 0..sp.mesh.n_elements() {
            for q in 0..sp.n_volume_qp() {
                let (_, w) = sp.volume_point(elem, q);
                let (v, g, _) = sp.eval_function_at_qp(&u.coeffs, elem, q);
                grad_sq += w * (g[0] * g[0] + g[1] * g[1]);
                val_sq += w * v * v;
            }
        }
        let expect = 2.0 * grad_sq + 3.0 * val_sq;
        assert!(
            ((n2 - n1) - expect).abs() < 1e-10 * (1.0 + expect),
            "{} vs {}",
            n2 - n1,
            expect
        );
    }

    #[test]
    fn jump_seminorm_zero_for_constants_and_value_free_for_c0() {
        let sp = space(3, 2, Continuity::C0Periodic);
        let c = interpolate(&sp, |_| 4.2);
        assert!(jump_seminorm(&sp, &c) < 1e-12);

        // For C0 functions only the gradient jumps contribute: the penalty
        // form with eta2 = 0 must reproduce the squared seminorm.
        let u = interpolate(&sp, |y| (2.0 * PI * y[0]).cos() * (2.0 * PI * y[1]).sin());
        let sq = jump_seminorm_sq(&sp, &u);
        let params = SchemeParams {
            theta: 0.0,
            eta1: 1.0,
            eta2: 0.0,
            lambda: 1.0,
        };
        let j = penalty_j(&sp, &params, &u, &u);
        assert!((sq - j).abs() < 1e-11 * (1.0 + sq), "{sq} vs {j}");
    }

    #[test]
    fn penalty_with_unit_weights_equals_jump_seminorm() {
        let sp = space(2, 2, Continuity::Discontinuous);
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let coeffs: Vec<f64> = (0..sp.n_dofs).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let u = DiscreteFunction::from_coeffs(&sp, coeffs).unwrap();
        let params = SchemeParams {
            theta: 0.0,
            eta1: 1.0,
            eta2: 1.0,
            lambda: 1.0,
        };
        let j = penalty_j(&sp, &params, &u, &u);
        let sq = jump_seminorm_sq(&sp, &u);
        assert!((j - sq).abs() < 1e-11 * (1.0 + sq), "{j} vs {sq}");
    }

    /// Interpolation error in the broken norm decays at first order against
    /// mesh size for quadratics.
    #[test]
    fn interpolation_error_order_h1_for_degree_two() {
        let f = |y: [f64; 2]| (2.0 * PI * y[0]).cos() * (2.0 * PI * y[1]).cos();
        let reference = Reference::Analytic {
            u: &exp1_exact_u,
            grad: &crate::problem::exp1_exact_grad,
            hess: &exp1_exact_hess,
        };
        let _ = f;
        let mut errs = Vec::new();
        for m in [4usize, 8, 16] {
            let sp = space(m, 2, Continuity::C0Periodic);
            let u = interpolate(&sp, exp1_exact_u);
            errs.push(norm_t_lambda(&sp, 1.0, &u, &reference));
        }
        let r01 = (errs[0] / errs[1]).log2();
        let r12 = (errs[1] / errs[2]).log2();
        assert!(r01 > 0.8 && r01 < 1.3, "{errs:?} -> {r01}");
        assert!(r12 > 0.9 && r12 < 1.15, "{errs:?} -> {r12}");
    }

    #[test]
    fn estimator_zero_at_constant_cell_solution_and_positive_at_zero() {
        let sigma = 0.25;
        let opts = BuiltinOptions {
            n_alpha: Some(5),
            n_beta: Some(5),
            sigma,
            constant_coefficients: true,
            ..BuiltinOptions::default()
        };
        let problem = builtin_problem("exp2-cell", &opts).unwrap();
        let sp = space(2, 2, Continuity::C0Periodic);
        let exact = interpolate(&sp, |_| -17.0 / sigma);
        assert!(estimator_eta(&sp, &problem, &exact) < 1e-10);

        let exp1 = builtin_problem(
            "exp1",
            &BuiltinOptions {
                n_alpha: Some(17),
                n_beta: Some(17),
                ..BuiltinOptions::default()
            },
        )
        .unwrap();
        let sp1 = space(4, 2, Continuity::C0Periodic);
        let zero = DiscreteFunction::zero(&sp1);
        let eta = estimator_eta(&sp1, &exp1, &zero);
        // zero function has no jumps: eta = L2 norm of F_gamma[0], which is
        // the L2 norm of the manufactured right-hand side
        let mut f_sq = 0.0;
        for elem in 0..sp1.mesh.n_elements() {
            for q in 0..sp1.n_volume_qp() {
                let (y, w) = sp1.volume_point(elem, q);
                let pe = crate::problem::eval_f_gamma(&exp1, y, 0.0, [0.0; 2], &SymMat2::ZERO);
                f_sq += w * pe.value * pe.value;
            }
        }
        assert!(eta > 1.0);
        assert!((eta - f_sq.sqrt()).abs() < 1e-10 * eta);
    }

    #[test]
    fn observed_orders_arithmetic() {
        let mut rows = vec![
            ConvergenceRow {
                n_dofs: 100,
                h_max: 0.1,
                error: 1.0,
                estimator: 2.0,
                eoc_error: None,
                eoc_estimator: None,
            },
            ConvergenceRow {
                n_dofs: 400,
                h_max: 0.05,
                error: 0.5,
                estimator: 0.5,
                eoc_error: None,
                eoc_estimator: None,
            },
        ];
        observed_orders(&mut rows).unwrap();
        assert!((rows[1].eoc_error.unwrap() - 0.5).abs() < 1e-12);
        assert!((rows[1].eoc_estimator.unwrap() - 1.0).abs() < 1e-12);
        let vs_h = observed_orders_vs_h(&rows);
        assert!((vs_h[1].unwrap() - 1.0).abs() < 1e-12);

        let mut single = rows[..1].to_vec();
        assert!(observed_orders(&mut single).is_err());

        let mut quarter = rows.clone();
        quarter[1].error = 0.25;
        observed_orders(&mut quarter).unwrap();
        assert!((quarter[1].eoc_error.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn csv_schema_and_determinism() {
        let rows = vec![ConvergenceRow {
            n_dofs: 48,
            h_max: 0.25,
            error: 1.25e-2,
            estimator: 3.5e-2,
            eoc_error: None,
            eoc_estimator: Some(0.5),
        }];
        let a = rows_to_csv(&rows);
        let b = rows_to_csv(&rows);
        assert_eq!(a, b);
        assert!(a.starts_with("N,h_max,error,estimator,eoc_error,eoc_estimator\n"));
        assert!(a.lines().nth(1).unwrap().starts_with("48,"));
    }

    #[test]
    fn internal_consistency_of_norm_decomposition() {
        let sp = space(2, 3, Continuity::Discontinuous);
        let mut rng = ChaCha8Rng::seed_from_u64(57);
        let coeffs: Vec<f64> = (0..sp.n_dofs).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let u = DiscreteFunction::from_coeffs(&sp, coeffs).unwrap();
        let total = norm_t_lambda(&sp, 1.5, &u, &Reference::Zero);
        let re = volume_norm_sq(&sp, 1.5, &u) + jump_seminorm_sq(&sp, &u);
        assert!((total * total - re).abs() < 1e-12 * re);
    }
}
