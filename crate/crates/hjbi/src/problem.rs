//! HJBI problem data: coefficient fields over state and control variables,
//! discretized control sets, the Cordes condition, the renormalization
//! `gamma`, and pointwise evaluation of the renormalized inf-sup operator
//! `F_gamma`.

use std::sync::Arc;

use crate::algebra::SymMat2;
use crate::{Error, Result};

/// Discretized compact control sets: two closed intervals sampled uniformly
/// with endpoints included, or singletons.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlGrid {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl ControlGrid {
    pub fn uniform(
        alpha_range: [f64; 2],
        n_alpha: usize,
        beta_range: [f64; 2],
        n_beta: usize,
    ) -> Result<Self> {
        Ok(ControlGrid {
            alpha: sample_interval(alpha_range, n_alpha)?,
            beta: sample_interval(beta_range, n_beta)?,
        })
    }

    pub fn singleton(alpha: f64, beta: f64) -> Self {
        ControlGrid {
            alpha: vec![alpha],
            beta: vec![beta],
        }
    }

    pub fn n_combos(&self) -> usize {
        self.alpha.len() * self.beta.len()
    }
}

fn sample_interval(range: [f64; 2], n: usize) -> Result<Vec<f64>> {
    let [lo, hi] = range;
    if n == 0 || hi < lo {
        return Err(Error::InvalidArgument(format!(
            "bad control interval [{lo}, {hi}] with {n} samples"
        )));
    }
    if n == 1 {
        if hi > lo {
            return Err(Error::InvalidArgument(
                "a single sample requires a singleton interval".into(),
            ));
        }
        return Ok(vec![lo]);
    }
    Ok((0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect())
}

/// Raw coefficient values at one `(y, alpha, beta)`.
#[derive(Clone, Copy, Debug)]
pub struct CoeffSample {
    pub a: SymMat2,
    pub b: [f64; 2],
    pub c: f64,
    pub f: f64,
}

/// Renormalized per-combo coefficients at a fixed state point, alpha-major.
/// Reused as scratch across evaluation points.
#[derive(Clone, Debug, Default)]
pub struct CoeffTable {
    pub ga_xx: Vec<f64>,
    pub ga_xy: Vec<f64>,
    pub ga_yy: Vec<f64>,
    pub gb_x: Vec<f64>,
    pub gb_y: Vec<f64>,
    pub gc: Vec<f64>,
    pub gf: Vec<f64>,
    /// Set by fillers that cache state-independent entries across calls.
    pub statics_ready: bool,
}

impl CoeffTable {
    pub fn new() -> Self {
        CoeffTable::default()
    }

    pub fn ensure_len(&mut self, n: usize) {
        if self.gc.len() != n {
            for arr in [
                &mut self.ga_xx,
                &mut self.ga_xy,
                &mut self.ga_yy,
                &mut self.gb_x,
                &mut self.gb_y,
                &mut self.gc,
                &mut self.gf,
            ] {
                arr.clear();
                arr.resize(n, 0.0);
            }
            self.statics_ready = false;
        }
    }
}

/// Coefficient fields `(A, b, c, f)` over `(y, alpha, beta)`.
///
/// `fill_gamma_table` lets implementations batch the per-combo evaluation at
/// a fixed `y`; the default just loops `eval`. Problem factories override it
/// when coefficients factor into control-only and state-only parts.
pub trait Coefficients: Send + Sync {
    fn eval(&self, y: [f64; 2], alpha: f64, beta: f64) -> CoeffSample;

    fn fill_gamma_table(&self, y: [f64; 2], grid: &ControlGrid, lambda: f64, table: &mut CoeffTable) {
        fill_gamma_table_generic(self, y, grid, lambda, table);
    }
}

/// Default table filler: evaluate every control combination at `y`.
pub fn fill_gamma_table_generic<C: Coefficients + ?Sized>(
    coeffs: &C,
    y: [f64; 2],
    grid: &ControlGrid,
    lambda: f64,
    table: &mut CoeffTable,
) {
    let nb = grid.beta.len();
    table.ensure_len(grid.n_combos());
    for (ia, &al) in grid.alpha.iter().enumerate() {
        for (ib, &be) in grid.beta.iter().enumerate() {
            let k = ia * nb + ib;
            let s = coeffs.eval(y, al, be);
            let g = gamma_of_sample(&s, lambda);
            table.ga_xx[k] = g * s.a.xx;
            table.ga_xy[k] = g * s.a.xy;
            table.ga_yy[k] = g * s.a.yy;
            table.gb_x[k] = g * s.b[0];
            table.gb_y[k] = g * s.b[1];
            table.gc[k] = g * s.c;
            table.gf[k] = g * s.f;
        }
    }
}

/// The renormalization `gamma = (tr A + c/lambda) / (|A|^2 + |b|^2/(2 lambda) + c^2/lambda^2)`.
pub fn gamma_of_sample(s: &CoeffSample, lambda: f64) -> f64 {
    let num = s.a.trace() + s.c / lambda;
    let den = s.a.norm_sq() + (s.b[0] * s.b[0] + s.b[1] * s.b[1]) / (2.0 * lambda)
        + (s.c / lambda) * (s.c / lambda);
    num / den
}

/// An HJBI problem over the unit cell with discretized controls and Cordes
/// parameters.
#[derive(Clone)]
pub struct HJBIProblem {
    pub coeffs: Arc<dyn Coefficients>,
    pub controls: ControlGrid,
    pub lambda: f64,
    pub delta: f64,
}

impl HJBIProblem {
    pub fn new(coeffs: Arc<dyn Coefficients>, controls: ControlGrid, lambda: f64, delta: f64) -> Self {
        HJBIProblem {
            coeffs,
            controls,
            lambda,
            delta,
        }
    }

    /// Construct with `delta` estimated from the sampled Cordes inequality.
    pub fn with_estimated_delta(
        coeffs: Arc<dyn Coefficients>,
        controls: ControlGrid,
        lambda: f64,
        n_y_samples: usize,
    ) -> Self {
        let mut problem = HJBIProblem {
            coeffs,
            controls,
            lambda,
            delta: 0.5,
        };
        let report = cordes_check(&problem, n_y_samples);
        problem.delta = report.max_admissible_delta.min(1.0 - 1e-9).max(1e-9);
        problem
    }
}

pub fn gamma(problem: &HJBIProblem, y: [f64; 2], alpha: f64, beta: f64) -> f64 {
    gamma_of_sample(&problem.coeffs.eval(y, alpha, beta), problem.lambda)
}

/// Sampled Cordes diagnostics.
#[derive(Clone, Copy, Debug)]
pub struct CordesReport {
    /// Whether some admissible `delta` in (0, 1) exists at every sample.
    pub holds: bool,
    /// Smallest slack of the inequality with the problem's stored `delta`.
    pub worst_margin: f64,
    /// Tightest admissible `delta` over all samples, capped at 1.
    pub max_admissible_delta: f64,
    /// Ellipticity bounds: extreme eigenvalues of `A` over the samples.
    pub zeta1: f64,
    pub zeta2: f64,
    /// Smallest sampled zeroth-order coefficient.
    pub min_c: f64,
}

/// Evaluate the Cordes inequality on a tensor grid of state samples crossed
/// with every control sample.
pub fn cordes_check(problem: &HJBIProblem, n_y_samples: usize) -> CordesReport {
    let n = n_y_samples.max(1);
    let lambda = problem.lambda;
    let dim = 2.0;
    let mut worst_margin = f64::INFINITY;
    let mut max_adm = f64::INFINITY;
    let mut zeta1 = f64::INFINITY;
    let mut zeta2 = f64::NEG_INFINITY;
    let mut min_c = f64::INFINITY;
    for iy in 0..n {
        for jy in 0..n {
            let y = [iy as f64 / n as f64, jy as f64 / n as f64];
            for &al in &problem.controls.alpha {
                for &be in &problem.controls.beta {
                    let s = problem.coeffs.eval(y, al, be);
                    let lhs = s.a.norm_sq()
                        + (s.b[0] * s.b[0] + s.b[1] * s.b[1]) / (2.0 * lambda)
                        + (s.c / lambda) * (s.c / lambda);
                    let tr = s.a.trace() + s.c / lambda;
                    let margin = tr * tr / (dim + problem.delta) - lhs;
                    worst_margin = worst_margin.min(margin);
                    max_adm = max_adm.min(tr * tr / lhs - dim);
                    let [l1, l2] = s.a.eigenvalues();
                    zeta1 = zeta1.min(l1);
                    zeta2 = zeta2.max(l2);
                    min_c = min_c.min(s.c);
                }
            }
        }
    }
    CordesReport {
        holds: max_adm > 0.0,
        worst_margin,
        max_admissible_delta: max_adm.min(1.0),
        zeta1,
        zeta2,
        min_c,
    }
}

/// Validate the problem data invariants by sampling; rejects problems with
/// non-positive `c`, indefinite `A`, or a failing Cordes inequality.
pub fn validate_problem(problem: &HJBIProblem, n_y_samples: usize) -> Result<CordesReport> {
    let report = cordes_check(problem, n_y_samples);
    if !(report.min_c > 0.0) {
        return Err(Error::CordesViolation(format!(
            "zeroth-order coefficient must be positive, sampled min {}",
            report.min_c
        )));
    }
    if !(report.zeta1 > 0.0) {
        return Err(Error::CordesViolation(format!(
            "diffusion matrix not uniformly elliptic, sampled min eigenvalue {}",
            report.zeta1
        )));
    }
    if !report.holds {
        return Err(Error::CordesViolation(format!(
            "no admissible delta (max admissible {})",
            report.max_admissible_delta
        )));
    }
    Ok(report)
}

/// Pointwise evaluation of `F_gamma` with the optimizing controls and the
/// coefficients frozen there.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointEval {
    pub value: f64,
    pub alpha_index: u32,
    pub beta_index: u32,
    pub ga: SymMat2,
    pub gb: [f64; 2],
    pub gc: f64,
    pub gf: f64,
}

/// Evaluate `F_gamma` at one state point: the exact inf over alpha samples
/// of the sup over beta samples, ties broken toward the lowest index.
pub fn eval_f_gamma(
    problem: &HJBIProblem,
    y: [f64; 2],
    u_val: f64,
    grad: [f64; 2],
    hess: &SymMat2,
) -> PointEval {
    let mut scratch = CoeffTable::new();
    eval_f_gamma_with(problem, y, u_val, grad, hess, &mut scratch)
}

/// As [`eval_f_gamma`], reusing a caller-owned coefficient table.
pub fn eval_f_gamma_with(
    problem: &HJBIProblem,
    y: [f64; 2],
    u_val: f64,
    grad: [f64; 2],
    hess: &SymMat2,
    table: &mut CoeffTable,
) -> PointEval {
    problem
        .coeffs
        .fill_gamma_table(y, &problem.controls, problem.lambda, table);
    scan_table(problem, u_val, grad, hess, table)
}

/// Relative deadband for keeping a previous policy at a quadrature point.
/// Control grids can contain combinations with identical coefficients up to
/// rounding (rotation angles half a period apart, say); without a deadband
/// the optimizer flips between such twins forever and Howard never sees a
/// repeated policy.
pub(crate) const POLICY_TIE_TOL: f64 = 4e-12;

/// As [`scan_table`], but keep an incumbent control pair whenever its value
/// is within the tie deadband of the optimum.
pub(crate) fn scan_table_locked(
    problem: &HJBIProblem,
    u_val: f64,
    grad: [f64; 2],
    hess: &SymMat2,
    table: &CoeffTable,
    incumbent: Option<(u32, u32)>,
) -> PointEval {
    let pe = scan_table(problem, u_val, grad, hess, table);
    let Some((ia, ib)) = incumbent else {
        return pe;
    };
    if (pe.alpha_index, pe.beta_index) == (ia, ib) {
        return pe;
    }
    let nb = problem.controls.beta.len();
    let k = ia as usize * nb + ib as usize;
    if k >= table.gc.len() {
        return pe;
    }
    let v = table.gc[k] * u_val
        - (table.ga_xx[k] * hess.xx + 2.0 * table.ga_xy[k] * hess.xy + table.ga_yy[k] * hess.yy)
        - (table.gb_x[k] * grad[0] + table.gb_y[k] * grad[1])
        - table.gf[k];
    // The deadband scales with the magnitudes entering the value: cell
    // correctors carry 1/sigma-sized iterates whose evaluation noise dwarfs
    // any fixed band.
    let term_scale = (table.gc[k] * u_val).abs()
        + (table.ga_xx[k] * hess.xx).abs()
        + 2.0 * (table.ga_xy[k] * hess.xy).abs()
        + (table.ga_yy[k] * hess.yy).abs()
        + (table.gb_x[k] * grad[0]).abs()
        + (table.gb_y[k] * grad[1]).abs()
        + table.gf[k].abs();
    if (v - pe.value).abs() <= POLICY_TIE_TOL * (1.0 + pe.value.abs() + term_scale) {
        PointEval {
            value: v,
            alpha_index: ia,
            beta_index: ib,
            ga: SymMat2 {
                xx: table.ga_xx[k],
                xy: table.ga_xy[k],
                yy: table.ga_yy[k],
            },
            gb: [table.gb_x[k], table.gb_y[k]],
            gc: table.gc[k],
            gf: table.gf[k],
        }
    } else {
        pe
    }
}

pub(crate) fn scan_table(
    problem: &HJBIProblem,
    u_val: f64,
    grad: [f64; 2],
    hess: &SymMat2,
    table: &CoeffTable,
) -> PointEval {
    let nb = problem.controls.beta.len();
    let na = problem.controls.alpha.len();
    let mut best = f64::INFINITY;
    let mut best_ia = 0usize;
    let mut best_ib = 0usize;
    for ia in 0..na {
        let base = ia * nb;
        let mut sup = f64::NEG_INFINITY;
        let mut sup_ib = 0usize;
        for ib in 0..nb {
            let k = base + ib;
            let v = table.gc[k] * u_val
                - (table.ga_xx[k] * hess.xx
                    + 2.0 * table.ga_xy[k] * hess.xy
                    + table.ga_yy[k] * hess.yy)
                - (table.gb_x[k] * grad[0] + table.gb_y[k] * grad[1])
                - table.gf[k];
            if v > sup {
                sup = v;
                sup_ib = ib;
            }
        }
        if sup < best {
            best = sup;
            best_ia = ia;
            best_ib = sup_ib;
        }
    }
    let k = best_ia * nb + best_ib;
    PointEval {
        value: best,
        alpha_index: best_ia as u32,
        beta_index: best_ib as u32,
        ga: SymMat2 {
            xx: table.ga_xx[k],
            xy: table.ga_xy[k],
            yy: table.ga_yy[k],
        },
        gb: [table.gb_x[k], table.gb_y[k]],
        gc: table.gc[k],
        gf: table.gf[k],
    }
}

// ---------------------------------------------------------------------------
// Built-in problems
// ---------------------------------------------------------------------------

/// Exact solution of the manufactured two-player experiment.
pub fn exp1_exact_u(y: [f64; 2]) -> f64 {
    let t = 2.0 * std::f64::consts::PI;
    (t * y[0]).cos() * (t * y[1]).cos()
}

pub fn exp1_exact_grad(y: [f64; 2]) -> [f64; 2] {
    let t = 2.0 * std::f64::consts::PI;
    [
        -t * (t * y[0]).sin() * (t * y[1]).cos(),
        -t * (t * y[0]).cos() * (t * y[1]).sin(),
    ]
}

pub fn exp1_exact_hess(y: [f64; 2]) -> SymMat2 {
    let t = 2.0 * std::f64::consts::PI;
    let cc = (t * y[0]).cos() * (t * y[1]).cos();
    let ss = (t * y[0]).sin() * (t * y[1]).sin();
    SymMat2 {
        xx: -t * t * cc,
        xy: t * t * ss,
        yy: -t * t * cc,
    }
}

/// Diffusion matrix of the manufactured experiment: a rotation-conjugated
/// diagonal depending on both controls.
pub fn exp1_matrix(alpha: f64, beta: f64) -> SymMat2 {
    let s2 = std::f64::consts::SQRT_2;
    let d1 = (alpha.cos() + alpha.sin()) / s2;
    let d2 = (alpha.cos() - alpha.sin()) / s2;
    let (sb, cb) = beta.sin_cos();
    SymMat2 {
        xx: d1 * cb * cb + d2 * sb * sb,
        xy: (d1 - d2) * cb * sb,
        yy: d1 * sb * sb + d2 * cb * cb,
    }
}

struct Exp1Coefficients {
    grid: ControlGrid,
    /// per-combo renormalized diffusion and reaction terms, alpha-major
    ga: Vec<SymMat2>,
    gc: Vec<f64>,
}

impl Exp1Coefficients {
    fn new(grid: ControlGrid) -> Self {
        let s2 = std::f64::consts::SQRT_2;
        let nb = grid.beta.len();
        let mut ga = vec![SymMat2::ZERO; grid.n_combos()];
        let mut gc = vec![0.0; grid.n_combos()];
        for (ia, &al) in grid.alpha.iter().enumerate() {
            for (ib, &be) in grid.beta.iter().enumerate() {
                let a = exp1_matrix(al, be);
                let c = 1.0 / (s2 * al.cos());
                let g = gamma_of_sample(
                    &CoeffSample {
                        a,
                        b: [0.0; 2],
                        c,
                        f: 0.0,
                    },
                    1.0,
                );
                ga[ia * nb + ib] = a.scale(g);
                gc[ia * nb + ib] = g * c;
            }
        }
        Exp1Coefficients { grid, ga, gc }
    }

    /// Manufactured right-hand side: the renormalized operator applied to
    /// the exact solution, evaluated over the stored control grid.
    fn f_tilde(&self, y: [f64; 2]) -> f64 {
        let h = exp1_exact_hess(y);
        let nb = self.grid.beta.len();
        let mut inf = f64::INFINITY;
        for ia in 0..self.grid.alpha.len() {
            let mut sup = f64::NEG_INFINITY;
            for ib in 0..nb {
                let v = -self.ga[ia * nb + ib].ddot(&h);
                if v > sup {
                    sup = v;
                }
            }
            if sup < inf {
                inf = sup;
            }
        }
        inf + exp1_exact_u(y)
    }
}

impl Coefficients for Exp1Coefficients {
    fn eval(&self, y: [f64; 2], alpha: f64, beta: f64) -> CoeffSample {
        let c = 1.0 / (std::f64::consts::SQRT_2 * alpha.cos());
        CoeffSample {
            a: exp1_matrix(alpha, beta),
            b: [0.0; 2],
            c,
            f: c * self.f_tilde(y),
        }
    }

    fn fill_gamma_table(&self, y: [f64; 2], grid: &ControlGrid, lambda: f64, table: &mut CoeffTable) {
        if grid.alpha.len() != self.grid.alpha.len() || grid.beta.len() != self.grid.beta.len() {
            fill_gamma_table_generic(self, y, grid, lambda, table);
            return;
        }
        debug_assert_eq!(grid, &self.grid);
        let n = grid.n_combos();
        table.ensure_len(n);
        if !table.statics_ready {
            for k in 0..n {
                table.ga_xx[k] = self.ga[k].xx;
                table.ga_xy[k] = self.ga[k].xy;
                table.ga_yy[k] = self.ga[k].yy;
                table.gb_x[k] = 0.0;
                table.gb_y[k] = 0.0;
                table.gc[k] = self.gc[k];
            }
            table.statics_ready = true;
        }
        let ft = self.f_tilde(y);
        for k in 0..n {
            table.gf[k] = table.gc[k] * ft;
        }
    }
}

/// The manufactured two-player benchmark problem: anisotropic rotating
/// diffusion controlled by both players, zero drift, and a right-hand side
/// chosen so the exact solution is `cos(2 pi y1) cos(2 pi y2)`. The Cordes
/// condition holds with `lambda = 1`.
pub fn exp1_problem(n_alpha: usize, n_beta: usize) -> Result<HJBIProblem> {
    let grid = ControlGrid::uniform([0.0, 0.5], n_alpha, [0.0, 2.0 * std::f64::consts::PI], n_beta)?;
    let coeffs = Arc::new(Exp1Coefficients::new(grid.clone()));
    Ok(HJBIProblem::with_estimated_delta(coeffs, grid, 1.0, 4))
}

/// Options threaded through [`builtin_problem`].
#[derive(Clone, Debug)]
pub struct BuiltinOptions {
    pub n_alpha: Option<usize>,
    pub n_beta: Option<usize>,
    /// Cell-problem state point, gradient argument, Hessian argument and
    /// regularization for "exp2-cell".
    pub x: [f64; 2],
    pub p: [f64; 2],
    pub r: SymMat2,
    pub sigma: f64,
    /// Replace the oscillatory coefficient by its constant floor.
    pub constant_coefficients: bool,
}

impl Default for BuiltinOptions {
    fn default() -> Self {
        BuiltinOptions {
            n_alpha: None,
            n_beta: None,
            x: [0.0; 2],
            p: [0.0; 2],
            r: crate::homogenization::EXP2_R,
            sigma: 0.1,
            constant_coefficients: false,
        }
    }
}

/// Factory for the built-in problems: `"exp1"` (manufactured two-player
/// problem) and `"exp2-cell"` (the homogenization cell problem at a fixed
/// query point).
pub fn builtin_problem(name: &str, opts: &BuiltinOptions) -> Result<HJBIProblem> {
    match name {
        "exp1" => exp1_problem(opts.n_alpha.unwrap_or(33), opts.n_beta.unwrap_or(33)),
        "exp2-cell" => {
            let data = crate::homogenization::exp2_data(
                opts.n_alpha.unwrap_or(17),
                opts.n_beta.unwrap_or(17),
                opts.constant_coefficients,
            )?;
            crate::homogenization::make_cell_problem(&data, opts.x, opts.p, &opts.r, opts.sigma)
        }
        other => Err(Error::UnknownProblem(other.to_string())),
    }
}
