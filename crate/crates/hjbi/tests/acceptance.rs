//! Acceptance suite: one test per criterion, each printing a PASS/FAIL
//! line. Run with `cargo test -p hjbi --test acceptance -- --nocapture`.

use std::sync::OnceLock;

use hjbi::analysis::ConvergenceRow;
use hjbi::assembly::{residual, SchemeParams};
use hjbi::homogenization::{
    exp2_data, log_log_slope, sigma_sweep, EXP2_H_REFERENCE, EXP2_R,
};
use hjbi::mesh::build_uniform_mesh;
use hjbi::problem::{
    builtin_problem, cordes_check, eval_f_gamma, BuiltinOptions, CoeffSample, Coefficients,
    ControlGrid, HJBIProblem,
};
use hjbi::run::{run_exp1, RunConfig};
use hjbi::solver::{howard_solve, solve_gmres_ilu, LinearOptions};
use hjbi::space::{build_space, interpolate, Continuity, DiscreteFunction};
use hjbi::SymMat2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

struct Exp1Run {
    label: String,
    degree: usize,
    rows: Vec<ConvergenceRow>,
}

fn exp1_runs() -> &'static Vec<Exp1Run> {
    static RUNS: OnceLock<Vec<Exp1Run>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let mut out = Vec::new();
        for scheme in ["c0ip", "dg"] {
            for degree in [2usize, 3] {
                for theta in [0.0, 0.5] {
                    let config = RunConfig {
                        scheme: scheme.into(),
                        degree,
                        theta,
                        meshes: vec![4, 8, 16, 32],
                        ..RunConfig::default()
                    };
                    let run = run_exp1(&config).unwrap_or_else(|e| {
                        panic!("exp1 {scheme} p{degree} theta {theta} failed: {e}")
                    });
                    out.push(Exp1Run {
                        label: format!("{scheme} p{degree} theta={theta}"),
                        degree,
                        rows: run.rows,
                    });
                }
            }
        }
        out
    })
}

/// Least-squares slope of `log err` against `log N`, negated so positive
/// values mean decay.
fn ls_order(rows: &[ConvergenceRow], pick: impl Fn(&ConvergenceRow) -> f64) -> f64 {
    let xs: Vec<f64> = rows.iter().map(|r| (r.n_dofs as f64).ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| pick(r).ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    -sxy / sxx
}

#[test]
fn criterion_1_exp1_convergence_orders() {
    let mut ok = true;
    let mut detail = String::new();
    for run in exp1_runs() {
        let order = ls_order(&run.rows, |r| r.error);
        let (lo, hi) = if run.degree == 2 { (0.35, 0.65) } else { (0.8, 1.2) };
        let pass = order >= lo && order <= hi;
        ok &= pass;
        detail.push_str(&format!("{}: eoc {:.3} in [{},{}] {} | ", run.label, order, lo, hi,
            if pass { "ok" } else { "FAIL" }));
    }
    println!(
        "ACCEPTANCE 1 (exp1 convergence orders): {} — {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "{detail}");
}

#[test]
fn criterion_2_estimator_reliability() {
    let mut ok = true;
    let mut detail = String::new();
    for run in exp1_runs() {
        // reliability constant frozen from the coarsest mesh, factor 2
        let c_rel = 2.0 * run.rows[0].error / run.rows[0].estimator;
        let mut worst: f64 = 0.0;
        for row in &run.rows {
            worst = worst.max(row.error / (c_rel * row.estimator));
        }
        let err_order = ls_order(&run.rows, |r| r.error);
        let est_order = ls_order(&run.rows, |r| r.estimator);
        let pass = worst <= 1.0 && (err_order - est_order).abs() <= 0.25;
        ok &= pass;
        detail.push_str(&format!(
            "{}: reliability margin {:.2}, eoc gap {:.3} {} | ",
            run.label,
            worst,
            (err_order - est_order).abs(),
            if pass { "ok" } else { "FAIL" }
        ));
    }
    println!(
        "ACCEPTANCE 2 (estimator reliability): {} — {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "{detail}");
}

#[test]
fn criterion_3_effective_hamiltonian_value() {
    // benchmark value at sigma = 1.25e-2 on the m = 16 cubic C0-IP space
    let data = exp2_data(17, 17, false).unwrap();
    let mesh = Arc::new(build_uniform_mesh(16).unwrap());
    let space = build_space(&mesh, 3, Continuity::C0Periodic).unwrap();
    let params = SchemeParams::defaults(0.5, 3, 1.0);
    let q = hjbi::homogenization::effective_hamiltonian(
        &space,
        &data,
        [0.0; 2],
        [0.0; 2],
        &EXP2_R,
        1.25e-2,
        &params,
        1e-10,
    )
    .unwrap();
    let rel = (q.h_t_sigma - EXP2_H_REFERENCE).abs() / EXP2_H_REFERENCE;
    let main_ok = rel <= 2e-2;

    // analytically forced constant-coefficient variant, exact for every sigma
    let const_data = exp2_data(5, 5, true).unwrap();
    let small_mesh = Arc::new(build_uniform_mesh(2).unwrap());
    let small_space = build_space(&small_mesh, 2, Continuity::C0Periodic).unwrap();
    let cparams = SchemeParams::defaults(0.5, 2, 1.0);
    let mut const_ok = true;
    let mut const_detail = String::new();
    for sigma in [0.4, 0.1, 0.0125] {
        let qc = hjbi::homogenization::effective_hamiltonian(
            &small_space,
            &const_data,
            [0.0; 2],
            [0.0; 2],
            &EXP2_R,
            sigma,
            &cparams,
            1e-11,
        )
        .unwrap();
        let rel_err = (qc.h_t_sigma - 17.0).abs() / 17.0;
        const_ok &= rel_err <= 1e-10;
        const_detail.push_str(&format!("sigma {sigma}: rel {rel_err:.2e} "));
    }
    let ok = main_ok && const_ok;
    println!(
        "ACCEPTANCE 3 (effective Hamiltonian value): {} — H_T {:.7} vs {:.7} (rel {:.3e} <= 2e-2), constant variant {}",
        if ok { "PASS" } else { "FAIL" },
        q.h_t_sigma,
        EXP2_H_REFERENCE,
        rel,
        const_detail
    );
    assert!(ok);
}

#[test]
fn criterion_4_sigma_rate() {
    // fixed fine mesh: the finest affordable discretization stands in for
    // the high-degree reference runs (documented substitution)
    let data = exp2_data(17, 17, false).unwrap();
    let mesh = Arc::new(build_uniform_mesh(64).unwrap());
    let space = build_space(&mesh, 3, Continuity::C0Periodic).unwrap();
    let params = SchemeParams::defaults(0.5, 3, 1.0);
    let rows = sigma_sweep(
        &space,
        &data,
        [0.0; 2],
        [0.0; 2],
        &EXP2_R,
        &[1e-1, 5e-2, 2.5e-2, 1.25e-2],
        &params,
        1e-10,
        None,
    )
    .unwrap();
    let slope = log_log_slope(&rows).unwrap_or(f64::NAN);
    let ok = (0.7..=1.3).contains(&slope);
    let es: Vec<String> = rows.iter().map(|r| format!("{:.3e}", r.e_t_sigma)).collect();
    println!(
        "ACCEPTANCE 4 (sigma rate): {} — log-log slope {:.4} in [0.7, 1.3]; E = [{}]",
        if ok { "PASS" } else { "FAIL" },
        slope,
        es.join(", ")
    );
    assert!(ok, "slope {slope}");
}

fn l_lambda_problem(lambda: f64) -> HJBIProblem {
    struct Linear {
        lambda: f64,
    }
    impl Coefficients for Linear {
        fn eval(&self, y: [f64; 2], _a: f64, _b: f64) -> CoeffSample {
            CoeffSample {
                a: SymMat2::identity(),
                b: [0.0; 2],
                c: self.lambda,
                f: (2.0 * std::f64::consts::PI * y[0]).sin(),
            }
        }
    }
    HJBIProblem::new(
        Arc::new(Linear { lambda }),
        ControlGrid::singleton(0.0, 0.0),
        lambda,
        1.0 - 1e-9,
    )
}

#[test]
fn criterion_5_property_suite() {
    let t0 = std::time::Instant::now();
    let mut lines: Vec<String> = Vec::new();

    // pointwise Cordes estimate on 1000 random state tuples, both problems
    {
        let exp1 = builtin_problem(
            "exp1",
            &BuiltinOptions {
                n_alpha: Some(17),
                n_beta: Some(17),
                ..BuiltinOptions::default()
            },
        )
        .unwrap();
        let exp2 = builtin_problem("exp2-cell", &BuiltinOptions::default()).unwrap();
        for (name, problem) in [("exp1", &exp1), ("exp2-cell", &exp2)] {
            let lambda = problem.lambda;
            let delta = problem.delta;
            let mut rng = ChaCha8Rng::seed_from_u64(1234);
            let mut worst: f64 = 0.0;
            for _ in 0..1000 {
                let y = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
                let mut state = || {
                    (
                        rng.gen_range(-2.0..2.0),
                        [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)],
                        SymMat2 {
                            xx: rng.gen_range(-2.0..2.0),
                            xy: rng.gen_range(-2.0..2.0),
                            yy: rng.gen_range(-2.0..2.0),
                        },
                    )
                };
                let (u1, g1, h1) = state();
                let (u2, g2, h2) = state();
                let f1 = eval_f_gamma(problem, y, u1, g1, &h1).value;
                let f2 = eval_f_gamma(problem, y, u2, g2, &h2).value;
                let du = u1 - u2;
                let dg = [g1[0] - g2[0], g1[1] - g2[1]];
                let dh = SymMat2 {
                    xx: h1.xx - h2.xx,
                    xy: h1.xy - h2.xy,
                    yy: h1.yy - h2.yy,
                };
                let lhs = (f1 - f2 - (lambda * du - dh.trace())).abs();
                let rhs = (1.0 - delta).sqrt()
                    * (dh.norm_sq()
                        + 2.0 * lambda * (dg[0] * dg[0] + dg[1] * dg[1])
                        + lambda * lambda * du * du)
                        .sqrt();
                worst = worst.max(lhs - rhs);
            }
            assert!(worst <= 1e-10, "{name} pointwise estimate violated by {worst}");
            lines.push(format!("pointwise Cordes estimate ({name}) ok"));
        }
    }

    // gamma positivity and Cordes margins at the published lambda values
    {
        let exp1 = builtin_problem(
            "exp1",
            &BuiltinOptions {
                n_alpha: Some(17),
                n_beta: Some(17),
                ..BuiltinOptions::default()
            },
        )
        .unwrap();
        assert_eq!(exp1.lambda, 1.0);
        let r1 = cordes_check(&exp1, 8);
        assert!(r1.holds && r1.worst_margin >= 0.0 && r1.min_c > 0.0 && r1.zeta1 > 0.0);
        let exp2 = builtin_problem("exp2-cell", &BuiltinOptions::default()).unwrap();
        let r2 = cordes_check(&exp2, 8);
        assert!(r2.holds && r2.worst_margin >= 0.0 && r2.zeta1 > 0.0);
        // the operator-family Cordes parameter behind the cell problem
        let data = exp2_data(5, 5, false).unwrap();
        assert_eq!(data.lambda, 0.25);
        lines.push("Cordes margins at lambda = 1 and lambda = 1/4 ok".into());
    }

    // strong monotonicity on 50 random discrete pairs
    {
        let problem = builtin_problem(
            "exp1",
            &BuiltinOptions {
                n_alpha: Some(9),
                n_beta: Some(9),
                ..BuiltinOptions::default()
            },
        )
        .unwrap();
        let mesh = Arc::new(build_uniform_mesh(4).unwrap());
        let space = build_space(&mesh, 2, Continuity::C0Periodic).unwrap();
        let params = SchemeParams::defaults(0.5, 2, problem.lambda);
        let mut rng = ChaCha8Rng::seed_from_u64(4321);
        let mut worst = f64::INFINITY;
        for _ in 0..50 {
            let w = DiscreteFunction::from_coeffs(
                &space,
                (0..space.n_dofs).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let v = DiscreteFunction::from_coeffs(
                &space,
                (0..space.n_dofs).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let rw = residual(&space, &problem, &params, &w);
            let rv = residual(&space, &problem, &params, &v);
            let diff: Vec<f64> = w.coeffs.iter().zip(&v.coeffs).map(|(a, b)| a - b).collect();
            let pairing: f64 = rw
                .iter()
                .zip(&rv)
                .zip(&diff)
                .map(|((a, b), d)| (a - b) * d)
                .sum();
            let dfn = DiscreteFunction::from_coeffs(&space, diff).unwrap();
            let nrm = hjbi::analysis::norm_t_lambda(
                &space,
                params.lambda,
                &dfn,
                &hjbi::analysis::Reference::Zero,
            );
            worst = worst.min(pairing / (nrm * nrm));
        }
        assert!(worst > 0.0, "monotonicity constant {worst}");
        lines.push(format!("strong monotonicity ok (c >= {worst:.4})"));
    }

    // singleton-control Howard convergence in exactly one iteration
    {
        let problem = l_lambda_problem(1.0);
        let mesh = Arc::new(build_uniform_mesh(4).unwrap());
        let space = build_space(&mesh, 2, Continuity::C0Periodic).unwrap();
        let params = SchemeParams::defaults(0.5, 2, 1.0);
        let report = howard_solve(&space, &problem, &params, 1e-10, 5, None).unwrap();
        assert!(report.converged && report.iterations == 1);
        lines.push("singleton Howard in one iteration ok".into());
    }

    // jump operators vanish on C0-periodic interpolants
    {
        let mesh = Arc::new(build_uniform_mesh(4).unwrap());
        let space = build_space(&mesh, 2, Continuity::C0Periodic).unwrap();
        let u = interpolate(&space, |y| {
            (2.0 * std::f64::consts::PI * y[0]).cos()
                + (2.0 * std::f64::consts::PI * y[1]).sin()
        });
        for face in 0..space.mesh.n_faces() {
            for t in [0.2, 0.8] {
                let (vp, _, vm, _) = u.face_trace(face, t);
                assert!((vp - vm).abs() < 1e-12);
            }
        }
        lines.push("value jumps vanish on C0 spaces ok".into());
    }

    // norm decomposition identity
    {
        let mesh = Arc::new(build_uniform_mesh(2).unwrap());
        let space = build_space(&mesh, 3, Continuity::Discontinuous).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let u = DiscreteFunction::from_coeffs(
            &space,
            (0..space.n_dofs).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let total = hjbi::analysis::norm_t_lambda(
            &space,
            1.5,
            &u,
            &hjbi::analysis::Reference::Zero,
        );
        let parts = hjbi::analysis::volume_norm_sq(&space, 1.5, &u)
            + hjbi::analysis::jump_seminorm_sq(&space, &u);
        assert!((total * total - parts).abs() < 1e-12 * parts);
        lines.push("broken-norm decomposition ok".into());
    }

    // mesh counting formulas
    {
        for m in [1usize, 2, 4, 8] {
            let mesh = build_uniform_mesh(m).unwrap();
            assert_eq!(mesh.n_elements(), 2 * m * m);
            assert_eq!(mesh.n_faces(), 3 * m * m);
            assert_eq!(mesh.n_periodic_vertices(), m * m);
        }
        lines.push("mesh counting formulas ok".into());
    }

    // sparse solver against a test-local dense elimination oracle
    {
        let n = 200;
        let mut rng = ChaCha8Rng::seed_from_u64(777);
        let mut dense = vec![vec![0.0f64; n]; n];
        let mut triplets = Vec::new();
        for i in 0..n {
            let mut rowsum = 0.0;
            for j in 0..n {
                if i != j && rng.gen_bool(0.05) {
                    let v: f64 = rng.gen_range(-1.0..1.0);
                    dense[i][j] = v;
                    triplets.push((i as u32, j as u32, v));
                    rowsum += v.abs();
                }
            }
            let d = rowsum + 1.0 + rng.gen_range(0.0..1.0);
            dense[i][i] = d;
            triplets.push((i as u32, i as u32, d));
        }
        let matrix = hjbi::assembly::CsrMatrix::from_triplets(n, triplets);
        let rhs: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let opts = LinearOptions {
            dense_threshold: 0,
            ..LinearOptions::default()
        };
        let (x, _, _) = solve_gmres_ilu(&matrix, &rhs, None, &opts).unwrap();
        // oracle: plain Gaussian elimination with partial pivoting
        let mut a = dense;
        let mut b = rhs;
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))
                .unwrap();
            a.swap(k, p);
            b.swap(k, p);
            for i in (k + 1)..n {
                let f = a[i][k] / a[k][k];
                for j in k..n {
                    a[i][j] -= f * a[k][j];
                }
                b[i] -= f * b[k];
            }
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for j in (i + 1)..n {
                s -= a[i][j] * b[j];
            }
            b[i] = s / a[i][i];
        }
        for (xi, oi) in x.iter().zip(&b) {
            assert!((xi - oi).abs() < 1e-9, "sparse vs dense oracle: {xi} vs {oi}");
        }
        lines.push("sparse solver vs dense oracle ok".into());
    }

    let elapsed = t0.elapsed();
    let ok = elapsed.as_secs() < 60;
    println!(
        "ACCEPTANCE 5 (property suite): {} — {} checks in {:.1}s: {}",
        if ok { "PASS" } else { "FAIL" },
        lines.len(),
        elapsed.as_secs_f64(),
        lines.join("; ")
    );
    assert!(ok, "property suite exceeded 60 s: {elapsed:?}");
}

#[test]
fn criterion_6_documented_exclusions() {
    // Not reproducible at desk scale: high-degree reference runs for the
    // sigma-limit (substituted by the finest affordable discretization in
    // criterion 4) and the theoretical constants of the abstract analysis
    // (covered by the empirical stability checks of criteria 2 and 5).
    println!(
        "ACCEPTANCE 6 (documented exclusions): PASS — sigma-limit reference uses the finest affordable discretization (m=64, degree 3); abstract-theory constants covered empirically"
    );
}
