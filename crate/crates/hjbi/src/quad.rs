//! Gauss quadrature on the reference triangle and the reference edge.
//!
//! Triangle rules are conical products of Gauss-Legendre rules under the
//! collapsed-coordinate map, so they have positive weights and are exact to
//! any requested polynomial degree. Edge rules are plain Gauss-Legendre on
//! `[0, 1]`.

use crate::{Error, Result};

/// Degrees beyond this are rejected; nothing in the solver needs them and the
/// point counts grow quadratically.
pub const MAX_EXACTNESS: usize = 60;

/// Quadrature points and weights on the reference triangle
/// `{(x, y) : x, y >= 0, x + y <= 1}` and the reference edge `[0, 1]`.
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    pub tri_points: Vec<[f64; 2]>,
    pub tri_weights: Vec<f64>,
    pub edge_points: Vec<f64>,
    pub edge_weights: Vec<f64>,
    pub volume_exactness: usize,
    pub edge_exactness: usize,
}

impl QuadratureRule {
    pub fn n_tri(&self) -> usize {
        self.tri_points.len()
    }

    pub fn n_edge(&self) -> usize {
        self.edge_points.len()
    }
}

/// Build a rule exact for polynomials of the given total degrees.
pub fn make_quadrature(volume_exactness: usize, edge_exactness: usize) -> Result<QuadratureRule> {
    if volume_exactness < 1 || edge_exactness < 1 {
        return Err(Error::InvalidArgument(
            "quadrature exactness degrees must be >= 1".into(),
        ));
    }
    if volume_exactness > MAX_EXACTNESS || edge_exactness > MAX_EXACTNESS {
        return Err(Error::InvalidArgument(format!(
            "quadrature exactness above supported maximum {MAX_EXACTNESS}"
        )));
    }

    // Under x = u, y = v(1-u) the integrand gains one degree in u from the
    // Jacobian factor (1-u).
    let n_u = (volume_exactness + 3) / 2; // 2n-1 >= d+1
    let n_v = (volume_exactness + 2) / 2; // 2n-1 >= d
    let (pu, wu) = gauss_legendre_01(n_u);
    let (pv, wv) = gauss_legendre_01(n_v);

    let mut tri_points = Vec::with_capacity(n_u * n_v);
    let mut tri_weights = Vec::with_capacity(n_u * n_v);
    for (ui, wui) in pu.iter().zip(&wu) {
        for (vj, wvj) in pv.iter().zip(&wv) {
            tri_points.push([*ui, vj * (1.0 - ui)]);
            tri_weights.push(wui * wvj * (1.0 - ui));
        }
    }

    let n_e = (edge_exactness + 2) / 2;
    let (edge_points, edge_weights) = gauss_legendre_01(n_e);

    Ok(QuadratureRule {
        tri_points,
        tri_weights,
        edge_points,
        edge_weights,
        volume_exactness,
        edge_exactness,
    })
}

/// Gauss-Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre_01(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut points = vec![0.0; n];
    let mut weights = vec![0.0; n];
    // Nodes on [-1, 1] by Newton iteration from the Chebyshev guess.
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_and_derivative(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_and_derivative(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // map to [0, 1], reversing so points come out ascending
        points[n - 1 - i] = 0.5 * (x + 1.0);
        weights[n - 1 - i] = 0.5 * w;
    }
    (points, weights)
}

fn legendre_and_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}
