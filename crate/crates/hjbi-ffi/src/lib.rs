//! C ABI for the HJBI solver.
//!
//! All functions return [`HjbiStatus`]; results come back through out
//! pointers. Objects are opaque handles created and destroyed through this
//! interface, and a thread-local message describes the most recent error
//! (`hjbi_last_error_message`). The generated header lands in
//! `include/hjbi.h` at build time.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use hjbi::assembly::SchemeParams;
use hjbi::homogenization::{exp2_data, EXP2_H_REFERENCE};
use hjbi::mesh::{build_uniform_mesh, PeriodicMesh};
use hjbi::problem::{
    builtin_problem, cordes_check, exp1_exact_grad, exp1_exact_hess, exp1_exact_u,
    BuiltinOptions, HJBIProblem,
};
use hjbi::solver::howard_solve;
use hjbi::space::{build_space, Continuity, DiscreteFunction, FESpace};
use hjbi::SymMat2;

/// Status codes mirroring the CLI exit codes where they overlap.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum HjbiStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    SolverFailure = 3,
    CordesViolation = 4,
    Panic = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let cleaned: String = msg.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(cleaned).unwrap_or_default();
    });
}

fn status_of(err: &hjbi::Error) -> HjbiStatus {
    set_error(&err.to_string());
    match err {
        hjbi::Error::CordesViolation(_) => HjbiStatus::CordesViolation,
        hjbi::Error::NonConvergence(_) | hjbi::Error::LinearSolve(_) => HjbiStatus::SolverFailure,
        _ => HjbiStatus::InvalidArgument,
    }
}

fn guarded<F: FnOnce() -> HjbiStatus>(f: F) -> HjbiStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            HjbiStatus::Panic
        }
    }
}

/// Message describing the most recent error on this thread. Valid until the
/// next failing call; do not free.
#[no_mangle]
pub extern "C" fn hjbi_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version string; static storage, do not free.
#[no_mangle]
pub extern "C" fn hjbi_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Opaque periodic mesh handle.
pub struct HjbiMesh {
    inner: Arc<PeriodicMesh>,
}

/// Opaque finite element space handle.
pub struct HjbiSpace {
    inner: Arc<FESpace>,
}

/// Opaque problem handle.
pub struct HjbiProblem {
    inner: HJBIProblem,
}

/// Opaque solve-result handle.
pub struct HjbiSolution {
    solution: DiscreteFunction,
    iterations: usize,
    final_residual: f64,
    converged: bool,
    estimator: f64,
}

/// Sampled Cordes diagnostics, plain data.
#[repr(C)]
pub struct HjbiCordesReport {
    pub holds: u8,
    pub worst_margin: f64,
    pub max_admissible_delta: f64,
    pub zeta1: f64,
    pub zeta2: f64,
    pub min_c: f64,
}

/// Build the uniform periodic triangulation with `m x m` cells.
#[no_mangle]
pub extern "C" fn hjbi_mesh_create(m: usize, out: *mut *mut HjbiMesh) -> HjbiStatus {
    if out.is_null() {
        set_error("null output pointer");
        return HjbiStatus::NullPointer;
    }
    guarded(|| match build_uniform_mesh(m) {
        Ok(mesh) => {
            let handle = Box::new(HjbiMesh {
                inner: Arc::new(mesh),
            });
            unsafe { *out = Box::into_raw(handle) };
            HjbiStatus::Ok
        }
        Err(e) => status_of(&e),
    })
}

/// # Safety
/// `mesh` must be a pointer from `hjbi_mesh_create`, destroyed once.
#[no_mangle]
pub unsafe extern "C" fn hjbi_mesh_destroy(mesh: *mut HjbiMesh) {
    if !mesh.is_null() {
        drop(unsafe { Box::from_raw(mesh) });
    }
}

/// Element, face, and periodically-unique vertex counts.
#[no_mangle]
pub extern "C" fn hjbi_mesh_counts(
    mesh: *const HjbiMesh,
    elements: *mut usize,
    faces: *mut usize,
    vertices: *mut usize,
) -> HjbiStatus {
    if mesh.is_null() || elements.is_null() || faces.is_null() || vertices.is_null() {
        set_error("null pointer");
        return HjbiStatus::NullPointer;
    }
    guarded(|| {
        let mesh = unsafe { &*mesh };
        unsafe {
            *elements = mesh.inner.n_elements();
            *faces = mesh.inner.n_faces();
            *vertices = mesh.inner.n_periodic_vertices();
        }
        HjbiStatus::Ok
    })
}

/// Build a finite element space; `continuity` is 0 for the discontinuous
/// space and 1 for the C0-periodic one.
#[no_mangle]
pub extern "C" fn hjbi_space_create(
    mesh: *const HjbiMesh,
    degree: usize,
    continuity: u32,
    out: *mut *mut HjbiSpace,
) -> HjbiStatus {
    if mesh.is_null() || out.is_null() {
        set_error("null pointer");
        return HjbiStatus::NullPointer;
    }
    guarded(|| {
        let mesh = unsafe { &*mesh };
        let cont = match Continuity::from_index(continuity as usize) {
            Ok(c) => c,
            Err(e) => return status_of(&e),
        };
        match build_space(&mesh.inner, degree, cont) {
            Ok(space) => {
                let handle = Box::new(HjbiSpace { inner: space });
                unsafe { *out = Box::into_raw(handle) };
                HjbiStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    })
}

/// # Safety
/// `space` must be a pointer from `hjbi_space_create`, destroyed once.
#[no_mangle]
pub unsafe extern "C" fn hjbi_space_destroy(space: *mut HjbiSpace) {
    if !space.is_null() {
        drop(unsafe { Box::from_raw(space) });
    }
}

/// Total degrees of freedom; zero for a null handle.
#[no_mangle]
pub extern "C" fn hjbi_space_dofs(space: *const HjbiSpace) -> usize {
    if space.is_null() {
        return 0;
    }
    unsafe { &*space }.inner.n_dofs
}

/// The manufactured two-player benchmark problem.
#[no_mangle]
pub extern "C" fn hjbi_problem_create_exp1(
    n_alpha: usize,
    n_beta: usize,
    out: *mut *mut HjbiProblem,
) -> HjbiStatus {
    if out.is_null() {
        set_error("null output pointer");
        return HjbiStatus::NullPointer;
    }
    guarded(|| {
        let opts = BuiltinOptions {
            n_alpha: Some(n_alpha),
            n_beta: Some(n_beta),
            ..BuiltinOptions::default()
        };
        match builtin_problem("exp1", &opts) {
            Ok(problem) => {
                unsafe { *out = Box::into_raw(Box::new(HjbiProblem { inner: problem })) };
                HjbiStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    })
}

/// The effective-Hamiltonian benchmark cell problem at Hessian argument
/// `[[r_xx, r_xy], [r_xy, r_yy]]` and regularization `sigma`.
/// `constant_coefficients != 0` drops the oscillation.
#[no_mangle]
pub extern "C" fn hjbi_problem_create_exp2_cell(
    r_xx: f64,
    r_xy: f64,
    r_yy: f64,
    sigma: f64,
    n_alpha: usize,
    n_beta: usize,
    constant_coefficients: u8,
    out: *mut *mut HjbiProblem,
) -> HjbiStatus {
    if out.is_null() {
        set_error("null output pointer");
        return HjbiStatus::NullPointer;
    }
    guarded(|| {
        let opts = BuiltinOptions {
            n_alpha: Some(n_alpha),
            n_beta: Some(n_beta),
            r: SymMat2 {
                xx: r_xx,
                xy: r_xy,
                yy: r_yy,
            },
            sigma,
            constant_coefficients: constant_coefficients != 0,
            ..BuiltinOptions::default()
        };
        match builtin_problem("exp2-cell", &opts) {
            Ok(problem) => {
                unsafe { *out = Box::into_raw(Box::new(HjbiProblem { inner: problem })) };
                HjbiStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    })
}

/// # Safety
/// `problem` must be a pointer from a problem constructor, destroyed once.
#[no_mangle]
pub unsafe extern "C" fn hjbi_problem_destroy(problem: *mut HjbiProblem) {
    if !problem.is_null() {
        drop(unsafe { Box::from_raw(problem) });
    }
}

/// Sample the Cordes inequality on an `n_samples^2` state grid.
#[no_mangle]
pub extern "C" fn hjbi_cordes_check(
    problem: *const HjbiProblem,
    n_samples: usize,
    out: *mut HjbiCordesReport,
) -> HjbiStatus {
    if problem.is_null() || out.is_null() {
        set_error("null pointer");
        return HjbiStatus::NullPointer;
    }
    guarded(|| {
        let problem = unsafe { &*problem };
        let report = cordes_check(&problem.inner, n_samples);
        unsafe {
            *out = HjbiCordesReport {
                holds: report.holds as u8,
                worst_margin: report.worst_margin,
                max_admissible_delta: report.max_admissible_delta,
                zeta1: report.zeta1,
                zeta2: report.zeta2,
                min_c: report.min_c,
            };
        }
        HjbiStatus::Ok
    })
}

/// Howard-solve the problem on the space. Nonpositive `eta1`/`eta2` select
/// the default penalties for the space degree.
#[no_mangle]
pub extern "C" fn hjbi_solve(
    space: *const HjbiSpace,
    problem: *const HjbiProblem,
    theta: f64,
    eta1: f64,
    eta2: f64,
    tol: f64,
    max_iter: usize,
    out: *mut *mut HjbiSolution,
) -> HjbiStatus {
    if space.is_null() || problem.is_null() || out.is_null() {
        set_error("null pointer");
        return HjbiStatus::NullPointer;
    }
    guarded(|| {
        let space = unsafe { &*space };
        let problem = unsafe { &*problem };
        let mut params = SchemeParams::defaults(theta, space.inner.degree, problem.inner.lambda);
        if eta1 > 0.0 {
            params.eta1 = eta1;
        }
        if eta2 > 0.0 {
            params.eta2 = eta2;
        }
        if let Err(e) = params.validate() {
            return status_of(&e);
        }
        match howard_solve(&space.inner, &problem.inner, &params, tol, max_iter, None) {
            Ok(report) => {
                if !report.converged {
                    set_error("Howard iteration did not converge");
                    return HjbiStatus::SolverFailure;
                }
                let estimator =
                    hjbi::analysis::estimator_eta(&space.inner, &problem.inner, &report.solution);
                let handle = Box::new(HjbiSolution {
                    iterations: report.iterations,
                    final_residual: report.residual_history.last().copied().unwrap_or(f64::NAN),
                    converged: report.converged,
                    estimator,
                    solution: report.solution,
                });
                unsafe { *out = Box::into_raw(handle) };
                HjbiStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    })
}

/// # Safety
/// `solution` must be a pointer from `hjbi_solve`, destroyed once.
#[no_mangle]
pub unsafe extern "C" fn hjbi_solution_destroy(solution: *mut HjbiSolution) {
    if !solution.is_null() {
        drop(unsafe { Box::from_raw(solution) });
    }
}

#[no_mangle]
pub extern "C" fn hjbi_solution_iterations(solution: *const HjbiSolution) -> usize {
    if solution.is_null() {
        return 0;
    }
    unsafe { &*solution }.iterations
}

#[no_mangle]
pub extern "C" fn hjbi_solution_final_residual(solution: *const HjbiSolution) -> f64 {
    if solution.is_null() {
        return f64::NAN;
    }
    unsafe { &*solution }.final_residual
}

#[no_mangle]
pub extern "C" fn hjbi_solution_converged(solution: *const HjbiSolution) -> u8 {
    if solution.is_null() {
        return 0;
    }
    unsafe { &*solution }.converged as u8
}

/// A posteriori estimator of the stored solution.
#[no_mangle]
pub extern "C" fn hjbi_solution_estimator(solution: *const HjbiSolution) -> f64 {
    if solution.is_null() {
        return f64::NAN;
    }
    unsafe { &*solution }.estimator
}

/// Copy the coefficient vector into `buffer` (`len` must match the space
/// dimension).
#[no_mangle]
pub extern "C" fn hjbi_solution_copy_coefficients(
    solution: *const HjbiSolution,
    buffer: *mut f64,
    len: usize,
) -> HjbiStatus {
    if solution.is_null() || buffer.is_null() {
        set_error("null pointer");
        return HjbiStatus::NullPointer;
    }
    guarded(|| {
        let solution = unsafe { &*solution };
        if solution.solution.coeffs.len() != len {
            set_error("buffer length does not match space dimension");
            return HjbiStatus::InvalidArgument;
        }
        unsafe {
            std::ptr::copy_nonoverlapping(solution.solution.coeffs.as_ptr(), buffer, len);
        }
        HjbiStatus::Ok
    })
}

/// Point evaluation of the solution (coordinates wrap periodically).
#[no_mangle]
pub extern "C" fn hjbi_solution_value_at(
    solution: *const HjbiSolution,
    x: f64,
    y: f64,
    value: *mut f64,
) -> HjbiStatus {
    if solution.is_null() || value.is_null() {
        set_error("null pointer");
        return HjbiStatus::NullPointer;
    }
    guarded(|| {
        let solution = unsafe { &*solution };
        let (v, _, _) = solution.solution.eval_at([x, y]);
        unsafe { *value = v };
        HjbiStatus::Ok
    })
}

/// Broken-norm error of a solution of the manufactured benchmark against
/// its closed-form solution (`lambda = 1`).
#[no_mangle]
pub extern "C" fn hjbi_solution_error_vs_exp1(
    solution: *const HjbiSolution,
    error: *mut f64,
) -> HjbiStatus {
    if solution.is_null() || error.is_null() {
        set_error("null pointer");
        return HjbiStatus::NullPointer;
    }
    guarded(|| {
        let solution = unsafe { &*solution };
        let space = &solution.solution.space;
        let e = hjbi::analysis::norm_t_lambda(
            space,
            1.0,
            &solution.solution,
            &hjbi::analysis::Reference::Analytic {
                u: &exp1_exact_u,
                grad: &exp1_exact_grad,
                hess: &exp1_exact_hess,
            },
        );
        unsafe { *error = e };
        HjbiStatus::Ok
    })
}

/// One-shot approximation of the benchmark effective Hamiltonian on an
/// `m x m` C0-periodic space of the given degree.
#[no_mangle]
pub extern "C" fn hjbi_effective_hamiltonian_exp2(
    m: usize,
    degree: usize,
    r_xx: f64,
    r_xy: f64,
    r_yy: f64,
    sigma: f64,
    n_alpha: usize,
    n_beta: usize,
    constant_coefficients: u8,
    tol: f64,
    h_out: *mut f64,
) -> HjbiStatus {
    if h_out.is_null() {
        set_error("null output pointer");
        return HjbiStatus::NullPointer;
    }
    guarded(|| {
        let run = || -> hjbi::Result<f64> {
            let data = exp2_data(n_alpha, n_beta, constant_coefficients != 0)?;
            let mesh = Arc::new(build_uniform_mesh(m)?);
            let space = build_space(&mesh, degree, Continuity::C0Periodic)?;
            let params = SchemeParams::defaults(0.5, degree, 1.0);
            let r = SymMat2 {
                xx: r_xx,
                xy: r_xy,
                yy: r_yy,
            };
            let q = hjbi::homogenization::effective_hamiltonian(
                &space,
                &data,
                [0.0; 2],
                [0.0; 2],
                &r,
                sigma,
                &params,
                tol,
            )?;
            Ok(q.h_t_sigma)
        };
        match run() {
            Ok(h) => {
                unsafe { *h_out = h };
                HjbiStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    })
}

/// Closed-form reference value of the benchmark effective Hamiltonian.
#[no_mangle]
pub extern "C" fn hjbi_exp2_reference() -> f64 {
    EXP2_H_REFERENCE
}
