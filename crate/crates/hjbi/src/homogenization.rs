//! Effective Hamiltonians of ergodic HJBI operators via cell problems.
//!
//! For an operator `F(x, y, p, R) = inf_a sup_b { -A:R - b.p - f }` with
//! periodic fast variable, the regularized cell problem
//! `sigma v + F(x, y, p, R + hess v) = 0` is solved on the unit cell and
//! `H(x, p, R)` is approximated by `-sigma` times the cell mean of the
//! discrete corrector. The rewritten problem has zeroth-order coefficient
//! `sigma` and right-hand side `g = A:R + b.p + f`, and satisfies the
//! Cordes condition with `lambda_sigma = sigma * lambda`; its
//! renormalization is independent of `sigma`.

use std::sync::Arc;

use crate::algebra::SymMat2;
use crate::assembly::SchemeParams;
use crate::problem::{CoeffSample, Coefficients, ControlGrid, HJBIProblem};
use crate::solver::howard_solve;
use crate::space::{DiscreteFunction, FESpace};
use crate::{Error, Result};

/// Largest regularization parameter accepted by the driver; far below the
/// conditioning limit warned about for very small `sigma`.
pub const SIGMA_MAX: f64 = 0.5;

/// Default sweep values, decreasing.
pub const DEFAULT_SIGMAS: [f64; 4] = [1e-1, 5e-2, 2.5e-2, 1.25e-2];

/// The benchmark matrix `B` of the effective-Hamiltonian experiment.
pub const EXP2_B: SymMat2 = SymMat2 {
    xx: 2.0,
    xy: -1.0,
    yy: 4.0,
};

/// The Hessian argument used in the benchmark (`B : R = -18`).
pub const EXP2_R: SymMat2 = SymMat2 {
    xx: -2.0,
    xy: 1.0,
    yy: -3.0,
};

/// Closed-form reference for the benchmark at [`EXP2_R`], expressed through
/// a complete elliptic integral.
pub const EXP2_H_REFERENCE: f64 = 38.9429127;

/// Coefficient data of an ergodic HJBI operator; the diffusion must not
/// depend on the slow variable.
#[derive(Clone)]
pub struct EffOperatorData {
    pub a: Arc<dyn Fn([f64; 2], f64, f64) -> SymMat2 + Send + Sync>,
    pub b: Arc<dyn Fn([f64; 2], [f64; 2], f64, f64) -> [f64; 2] + Send + Sync>,
    pub f: Arc<dyn Fn([f64; 2], [f64; 2], f64, f64) -> f64 + Send + Sync>,
    pub controls: ControlGrid,
    /// Cordes parameter of the operator family.
    pub lambda: f64,
    /// Structure tag letting the cell problems use a batched coefficient
    /// evaluation where the data factorizes.
    pub(crate) kind: OperatorKind,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum OperatorKind {
    Generic,
    Exp2 { constant: bool },
}

impl EffOperatorData {
    /// Wrap user coefficient callbacks as operator data.
    pub fn new(
        a: Arc<dyn Fn([f64; 2], f64, f64) -> SymMat2 + Send + Sync>,
        b: Arc<dyn Fn([f64; 2], [f64; 2], f64, f64) -> [f64; 2] + Send + Sync>,
        f: Arc<dyn Fn([f64; 2], [f64; 2], f64, f64) -> f64 + Send + Sync>,
        controls: ControlGrid,
        lambda: f64,
    ) -> Self {
        EffOperatorData {
            a,
            b,
            f,
            controls,
            lambda,
            kind: OperatorKind::Generic,
        }
    }
}

/// The oscillatory coefficient of the benchmark operator.
pub fn exp2_a1(y: [f64; 2]) -> f64 {
    let t = 2.0 * std::f64::consts::PI;
    let s = (t * y[0]).sin();
    let c = (t * y[1]).cos();
    s * s * c * c + 1.0
}

/// Benchmark operator data: `A = (a0 + alpha beta a1) B` with `a0 = 1`,
/// controls `[1,2] x [0,1]`, no drift and unit source. The Cordes condition
/// holds with `lambda = 1/4`. With `constant_coefficients` the oscillation
/// is dropped entirely (`a1 = 0`), which makes correctors constant.
pub fn exp2_data(n_alpha: usize, n_beta: usize, constant_coefficients: bool) -> Result<EffOperatorData> {
    let controls = ControlGrid::uniform([1.0, 2.0], n_alpha, [0.0, 1.0], n_beta)?;
    let a = move |y: [f64; 2], alpha: f64, beta: f64| {
        let w = if constant_coefficients {
            1.0
        } else {
            1.0 + alpha * beta * exp2_a1(y)
        };
        EXP2_B.scale(w)
    };
    Ok(EffOperatorData {
        a: Arc::new(a),
        b: Arc::new(|_x, _y, _al, _be| [0.0; 2]),
        f: Arc::new(|_x, _y, _al, _be| 1.0),
        controls,
        lambda: 0.25,
        kind: OperatorKind::Exp2 {
            constant: constant_coefficients,
        },
    })
}

/// Batched coefficient evaluation for the benchmark cell problems: per
/// state point only the oscillation is evaluated once, and each control
/// combination reduces to a few arithmetic operations.
struct Exp2CellCoefficients {
    /// alpha * beta per combination, alpha-major
    albe: Vec<f64>,
    b_dot_r: f64,
    sigma: f64,
    constant: bool,
}

impl Coefficients for Exp2CellCoefficients {
    fn eval(&self, y: [f64; 2], alpha: f64, beta: f64) -> CoeffSample {
        let a1v = if self.constant { 0.0 } else { exp2_a1(y) };
        let w = 1.0 + alpha * beta * a1v;
        CoeffSample {
            a: EXP2_B.scale(w),
            b: [0.0; 2],
            c: self.sigma,
            f: w * self.b_dot_r + 1.0,
        }
    }

    fn fill_gamma_table(
        &self,
        y: [f64; 2],
        grid: &crate::problem::ControlGrid,
        lambda: f64,
        table: &mut crate::problem::CoeffTable,
    ) {
        let n = grid.n_combos();
        if n != self.albe.len() {
            crate::problem::fill_gamma_table_generic(self, y, grid, lambda, table);
            return;
        }
        table.ensure_len(n);
        let a1v = if self.constant { 0.0 } else { exp2_a1(y) };
        let cl = self.sigma / lambda;
        let cl2 = cl * cl;
        let tr_b = EXP2_B.trace();
        let b_sq = EXP2_B.norm_sq();
        for k in 0..n {
            let w = self.albe[k].mul_add(a1v, 1.0);
            let g = (w * tr_b + cl) / (w * w * b_sq + cl2);
            let gw = g * w;
            table.ga_xx[k] = gw * EXP2_B.xx;
            table.ga_xy[k] = gw * EXP2_B.xy;
            table.ga_yy[k] = gw * EXP2_B.yy;
            table.gb_x[k] = 0.0;
            table.gb_y[k] = 0.0;
            table.gc[k] = g * self.sigma;
            table.gf[k] = g * (w * self.b_dot_r + 1.0);
        }
    }
}

struct CellCoefficients {
    a: Arc<dyn Fn([f64; 2], f64, f64) -> SymMat2 + Send + Sync>,
    b: Arc<dyn Fn([f64; 2], [f64; 2], f64, f64) -> [f64; 2] + Send + Sync>,
    f: Arc<dyn Fn([f64; 2], [f64; 2], f64, f64) -> f64 + Send + Sync>,
    x: [f64; 2],
    p: [f64; 2],
    r: SymMat2,
    sigma: f64,
}

impl Coefficients for CellCoefficients {
    fn eval(&self, y: [f64; 2], alpha: f64, beta: f64) -> CoeffSample {
        let a = (self.a)(y, alpha, beta);
        let drift = (self.b)(self.x, y, alpha, beta);
        let source = (self.f)(self.x, y, alpha, beta);
        let g = a.ddot(&self.r) + drift[0] * self.p[0] + drift[1] * self.p[1] + source;
        CoeffSample {
            a,
            b: [0.0; 2],
            c: self.sigma,
            f: g,
        }
    }
}

/// Rewrite the cell problem at `(x, p, R, sigma)` as a periodic HJBI
/// problem: unchanged diffusion, no drift, zeroth-order `sigma`, source
/// `g = A:R + b.p + f`, Cordes parameter `sigma * lambda`.
pub fn make_cell_problem(
    data: &EffOperatorData,
    x: [f64; 2],
    p: [f64; 2],
    r: &SymMat2,
    sigma: f64,
) -> Result<HJBIProblem> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "regularization sigma must be positive, got {sigma}"
        )));
    }
    if sigma > SIGMA_MAX {
        return Err(Error::InvalidArgument(format!(
            "sigma {sigma} above supported maximum {SIGMA_MAX}"
        )));
    }
    let coeffs: Arc<dyn Coefficients> = match data.kind {
        OperatorKind::Exp2 { constant } => {
            let nb = data.controls.beta.len();
            let mut albe = vec![0.0; data.controls.n_combos()];
            for (ia, &al) in data.controls.alpha.iter().enumerate() {
                for (ib, &be) in data.controls.beta.iter().enumerate() {
                    albe[ia * nb + ib] = al * be;
                }
            }
            Arc::new(Exp2CellCoefficients {
                albe,
                b_dot_r: EXP2_B.ddot(r),
                sigma,
                constant,
            })
        }
        OperatorKind::Generic => Arc::new(CellCoefficients {
            a: data.a.clone(),
            b: data.b.clone(),
            f: data.f.clone(),
            x,
            p,
            r: *r,
            sigma,
        }),
    };
    Ok(HJBIProblem::with_estimated_delta(
        coeffs,
        data.controls.clone(),
        sigma * data.lambda,
        8,
    ))
}

/// One effective-Hamiltonian query and its diagnostics.
#[derive(Clone, Debug)]
pub struct EffHamQuery {
    pub x: [f64; 2],
    pub p: [f64; 2],
    pub r: SymMat2,
    pub sigma: f64,
    /// `-sigma` times the cell mean of the discrete corrector.
    pub h_t_sigma: f64,
    pub corrector_mean: f64,
    /// A posteriori estimator of the corrector solve.
    pub estimator: f64,
    /// Broken L2 norm of the corrector Hessian; bounded uniformly in sigma.
    pub hessian_norm: f64,
    pub iterations: usize,
}

/// Solve the cell problem and evaluate the approximate effective
/// Hamiltonian.
pub fn effective_hamiltonian(
    space: &Arc<FESpace>,
    data: &EffOperatorData,
    x: [f64; 2],
    p: [f64; 2],
    r: &SymMat2,
    sigma: f64,
    params: &SchemeParams,
    tol: f64,
) -> Result<EffHamQuery> {
    effective_hamiltonian_with_initial(space, data, x, p, r, sigma, params, tol, None)
        .map(|(q, _)| q)
}

/// As [`effective_hamiltonian`], threading a warm start for continuation
/// in `sigma` and returning the corrector.
pub fn effective_hamiltonian_with_initial(
    space: &Arc<FESpace>,
    data: &EffOperatorData,
    x: [f64; 2],
    p: [f64; 2],
    r: &SymMat2,
    sigma: f64,
    params: &SchemeParams,
    tol: f64,
    initial: Option<&DiscreteFunction>,
) -> Result<(EffHamQuery, DiscreteFunction)> {
    let problem = make_cell_problem(data, x, p, r, sigma)?;
    let params = SchemeParams {
        lambda: problem.lambda,
        ..*params
    };
    let report = howard_solve(space, &problem, &params, tol, 50, initial)?;
    if !report.converged {
        return Err(Error::NonConvergence(format!(
            "cell problem at sigma {sigma} stalled with residual {:.3e}",
            report.residual_history.last().copied().unwrap_or(f64::NAN)
        )));
    }
    let mean = crate::analysis::integrate(space, &report.solution);
    let query = EffHamQuery {
        x,
        p,
        r: *r,
        sigma,
        h_t_sigma: -sigma * mean,
        corrector_mean: mean,
        estimator: crate::analysis::estimator_eta(space, &problem, &report.solution),
        hessian_norm: crate::analysis::broken_hessian_norm(space, &report.solution),
        iterations: report.iterations,
    };
    Ok((query, report.solution))
}

/// Exact effective Hamiltonian of the benchmark operator: the larger of the
/// two harmonic-mean branches. The cell average of `1/(a0 + a1)` is
/// evaluated by a fine midpoint rule, which is spectrally accurate for the
/// periodic integrand.
pub fn exact_h_exp2(r: &SymMat2) -> f64 {
    let b_dot_r = EXP2_B.ddot(r);
    let branch_slow = -b_dot_r - 1.0; // int 1/a0 = 1
    let n = 256;
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            let y = [(i as f64 + 0.5) / n as f64, (j as f64 + 0.5) / n as f64];
            acc += 1.0 / (1.0 + exp2_a1(y));
        }
    }
    let inv_mean = acc / (n * n) as f64;
    let branch_fast = -(1.0 / inv_mean) * b_dot_r - 1.0;
    branch_slow.max(branch_fast)
}

/// One row of a sigma sweep.
#[derive(Clone, Debug)]
pub struct SweepRow {
    pub sigma: f64,
    pub h_t_sigma: f64,
    /// Relative error against the reference Hamiltonian.
    pub e_t_sigma: f64,
    pub estimator: f64,
    pub iterations: usize,
    pub hessian_norm: f64,
}

/// Solve the cell problem for each `sigma` on a shared space and tabulate
/// relative errors against the exact benchmark value (or a supplied
/// reference).
pub fn sigma_sweep(
    space: &Arc<FESpace>,
    data: &EffOperatorData,
    x: [f64; 2],
    p: [f64; 2],
    r: &SymMat2,
    sigmas: &[f64],
    params: &SchemeParams,
    tol: f64,
    reference: Option<f64>,
) -> Result<Vec<SweepRow>> {
    if sigmas.is_empty() {
        return Err(Error::InvalidArgument("empty sigma list".into()));
    }
    if sigmas.windows(2).any(|w| w[1] >= w[0]) || sigmas.iter().any(|&s| s <= 0.0) {
        return Err(Error::InvalidArgument(
            "sigma values must be positive and strictly decreasing".into(),
        ));
    }
    let h_ref = reference.unwrap_or_else(|| exact_h_exp2(r));
    let mut rows = Vec::with_capacity(sigmas.len());
    // continuation: the corrector scales like 1/sigma, so the previous
    // solution rescaled by the sigma ratio is an excellent initial guess
    let mut prev: Option<(f64, DiscreteFunction)> = None;
    for &sigma in sigmas {
        let initial = prev.as_ref().map(|(s_prev, v)| {
            let scale = s_prev / sigma;
            DiscreteFunction {
                space: v.space.clone(),
                coeffs: v.coeffs.iter().map(|c| c * scale).collect(),
            }
        });
        let (q, solution) = effective_hamiltonian_with_initial(
            space,
            data,
            x,
            p,
            r,
            sigma,
            params,
            tol,
            initial.as_ref(),
        )?;
        rows.push(SweepRow {
            sigma,
            h_t_sigma: q.h_t_sigma,
            e_t_sigma: (q.h_t_sigma - h_ref).abs() / h_ref.abs(),
            estimator: q.estimator,
            iterations: q.iterations,
            hessian_norm: q.hessian_norm,
        });
        prev = Some((sigma, solution));
    }
    Ok(rows)
}

/// CSV emission: `sigma,H_T_sigma,E_T_sigma,estimator,iterations`.
pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("sigma,H_T_sigma,E_T_sigma,estimator,iterations\n");
    for r in rows {
        s.push_str(&format!(
            "{:.10e},{:.10e},{:.10e},{:.10e},{}\n",
            r.sigma, r.h_t_sigma, r.e_t_sigma, r.estimator, r.iterations
        ));
    }
    s
}

/// Least-squares slope of `log e` against `log sigma`.
pub fn log_log_slope(rows: &[SweepRow]) -> Option<f64> {
    if rows.len() < 2 || rows.iter().any(|r| r.e_t_sigma <= 0.0) {
        return None;
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.sigma.ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.e_t_sigma.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Some(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_uniform_mesh;
    use crate::problem::gamma;
    use crate::space::{build_space, Continuity};

    fn space(m: usize, degree: usize) -> Arc<FESpace> {
        let mesh = Arc::new(build_uniform_mesh(m).unwrap());
        build_space(&mesh, degree, Continuity::C0Periodic).unwrap()
    }

    #[test]
    fn cell_problem_source_carries_b_contraction() {
        let data = exp2_data(5, 5, false).unwrap();
        let problem = make_cell_problem(&data, [0.0; 2], [0.0; 2], &EXP2_R, 0.1).unwrap();
        // g = (1 + alpha beta a1) * (B:R) + 1 with B:R = -18
        for (y, al, be) in [([0.2, 0.7], 1.0, 0.0), ([0.9, 0.1], 2.0, 1.0), ([0.4, 0.4], 1.5, 0.5)]
        {
            let s = problem.coeffs.eval(y, al, be);
            let w = 1.0 + al * be * exp2_a1(y);
            assert!((s.f - (w * -18.0 + 1.0)).abs() < 1e-12);
            assert!((s.c - 0.1).abs() < 1e-15);
            assert_eq!(s.b, [0.0; 2]);
            assert!((s.a.xx - 2.0 * w).abs() < 1e-12);
        }
        assert!((problem.lambda - 0.025).abs() < 1e-15);
        assert!(make_cell_problem(&data, [0.0; 2], [0.0; 2], &EXP2_R, 0.0).is_err());
        assert!(make_cell_problem(&data, [0.0; 2], [0.0; 2], &EXP2_R, 0.9).is_err());
    }

    #[test]
    fn gamma_is_sigma_independent_bitwise() {
        let data = exp2_data(5, 5, false).unwrap();
        let p1 = make_cell_problem(&data, [0.0; 2], [0.0; 2], &EXP2_R, 0.1).unwrap();
        let p2 = make_cell_problem(&data, [0.0; 2], [0.0; 2], &EXP2_R, 0.01).unwrap();
        for (y, al, be) in [([0.3, 0.8], 1.0, 0.25), ([0.6, 0.2], 2.0, 1.0), ([0.05, 0.95], 1.25, 0.75)]
        {
            let g1 = gamma(&p1, y, al, be);
            let g2 = gamma(&p2, y, al, be);
            assert_eq!(g1.to_bits(), g2.to_bits(), "gamma differs across sigma");
        }
    }

    #[test]
    fn zero_data_produces_zero_corrector() {
        let data = EffOperatorData::new(
            Arc::new(|_, _, _| SymMat2::identity()),
            Arc::new(|_, _, _, _| [0.0; 2]),
            Arc::new(|_, _, _, _| 0.0),
            ControlGrid::singleton(0.0, 0.0),
            0.25,
        );
        let sp = space(2, 2);
        let params = SchemeParams::defaults(0.5, 2, 1.0);
        let q = effective_hamiltonian(
            &sp,
            &data,
            [0.0; 2],
            [0.0; 2],
            &SymMat2::ZERO,
            0.1,
            &params,
            1e-11,
        )
        .unwrap();
        assert!(q.h_t_sigma.abs() < 1e-11);
        assert!(q.corrector_mean.abs() < 1e-11);
    }

    #[test]
    fn constant_coefficients_give_exact_hamiltonian_for_any_sigma() {
        let data = exp2_data(5, 5, true).unwrap();
        let sp = space(2, 2);
        let params = SchemeParams::defaults(0.5, 2, 1.0);
        for sigma in [0.4, 0.1, 0.0125] {
            let q = effective_hamiltonian(
                &sp,
                &data,
                [0.0; 2],
                [0.0; 2],
                &EXP2_R,
                sigma,
                &params,
                1e-11,
            )
            .unwrap();
            // F(R) = inf sup { -w B:R - 1 } with w = 1: 18 - 1 = 17
            assert!(
                (q.h_t_sigma - 17.0).abs() < 1e-10 * 17.0,
                "sigma {sigma}: H {}",
                q.h_t_sigma
            );
            // definitional identity
            assert!((q.h_t_sigma + sigma * q.corrector_mean).abs() < 1e-14 * q.h_t_sigma.abs());
        }
    }

    #[test]
    fn exact_h_matches_elliptic_integral_constant() {
        let h = exact_h_exp2(&EXP2_R);
        assert!(
            (h - EXP2_H_REFERENCE).abs() < 1e-6,
            "H(R) = {h} vs {EXP2_H_REFERENCE}"
        );
        // both branches equal -1 at R = 0
        assert!((exact_h_exp2(&SymMat2::ZERO) + 1.0).abs() < 1e-12);
        // B:R > 0 activates the slow branch since int 1/a0 = 1
        let r_pos = SymMat2::identity();
        let expect = -EXP2_B.ddot(&r_pos) - 1.0;
        assert!((exact_h_exp2(&r_pos) - expect).abs() < 1e-12);
    }

    #[test]
    fn degenerate_ellipticity_of_computed_hamiltonian() {
        // on the constant-coefficient variant the computed H is exact, so
        // the monotonicity of H in the Hessian argument is testable
        let data = exp2_data(3, 3, true).unwrap();
        let sp = space(2, 2);
        let params = SchemeParams::defaults(0.5, 2, 1.0);
        let pairs = [
            (SymMat2::ZERO, SymMat2::diag(-1.0, -1.0)),
            (SymMat2::diag(1.0, 0.5), SymMat2::ZERO),
            (
                SymMat2 {
                    xx: 0.5,
                    xy: 0.1,
                    yy: 0.5,
                },
                SymMat2 {
                    xx: -0.5,
                    xy: 0.1,
                    yy: -0.5,
                },
            ),
        ];
        for (r_big, r_small) in pairs {
            // r_big - r_small is positive semidefinite in all three cases
            let h_big = effective_hamiltonian(
                &sp, &data, [0.0; 2], [0.0; 2], &r_big, 0.2, &params, 1e-11,
            )
            .unwrap()
            .h_t_sigma;
            let h_small = effective_hamiltonian(
                &sp, &data, [0.0; 2], [0.0; 2], &r_small, 0.2, &params, 1e-11,
            )
            .unwrap()
            .h_t_sigma;
            assert!(
                h_big <= h_small + 1e-9,
                "monotonicity violated: {h_big} vs {h_small}"
            );
        }
    }

    #[test]
    fn sweep_on_constant_variant_is_exact_for_all_sigmas() {
        let data = exp2_data(3, 3, true).unwrap();
        let sp = space(2, 2);
        let params = SchemeParams::defaults(0.5, 2, 1.0);
        let rows = sigma_sweep(
            &sp,
            &data,
            [0.0; 2],
            [0.0; 2],
            &EXP2_R,
            &[0.1, 0.05, 0.025],
            &params,
            1e-11,
            Some(17.0),
        )
        .unwrap();
        for row in &rows {
            assert!(row.e_t_sigma < 1e-11, "sigma {}: E {}", row.sigma, row.e_t_sigma);
        }
        let csv = sweep_to_csv(&rows);
        assert!(csv.starts_with("sigma,H_T_sigma,E_T_sigma,estimator,iterations\n"));
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn sweep_rejects_unsorted_sigmas() {
        let data = exp2_data(3, 3, true).unwrap();
        let sp = space(2, 2);
        let params = SchemeParams::defaults(0.5, 2, 1.0);
        for bad in [vec![], vec![0.1, 0.2], vec![0.1, -0.05]] {
            assert!(sigma_sweep(
                &sp,
                &data,
                [0.0; 2],
                [0.0; 2],
                &EXP2_R,
                &bad,
                &params,
                1e-10,
                Some(17.0),
            )
            .is_err());
        }
    }
}
