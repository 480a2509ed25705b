//! Small fixed-size and dense linear algebra used throughout the crate.

/// Symmetric 2x2 matrix stored as its three independent entries.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SymMat2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl SymMat2 {
    pub const ZERO: SymMat2 = SymMat2 {
        xx: 0.0,
        xy: 0.0,
        yy: 0.0,
    };

    pub fn identity() -> Self {
        SymMat2 {
            xx: 1.0,
            xy: 0.0,
            yy: 1.0,
        }
    }

    pub fn diag(a: f64, b: f64) -> Self {
        SymMat2 {
            xx: a,
            xy: 0.0,
            yy: b,
        }
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    /// Frobenius inner product `A : B`.
    pub fn ddot(&self, other: &SymMat2) -> f64 {
        self.xx * other.xx + 2.0 * self.xy * other.xy + self.yy * other.yy
    }

    /// Squared Frobenius norm `|A|^2 = A : A`.
    pub fn norm_sq(&self) -> f64 {
        self.ddot(self)
    }

    pub fn scale(&self, s: f64) -> SymMat2 {
        SymMat2 {
            xx: s * self.xx,
            xy: s * self.xy,
            yy: s * self.yy,
        }
    }

    /// Eigenvalues, ascending.
    pub fn eigenvalues(&self) -> [f64; 2] {
        let mean = 0.5 * (self.xx + self.yy);
        let d = 0.5 * (self.xx - self.yy);
        let r = (d * d + self.xy * self.xy).sqrt();
        [mean - r, mean + r]
    }

    /// Quadratic form `v^T A v`.
    pub fn quad_form(&self, v: [f64; 2]) -> f64 {
        self.xx * v[0] * v[0] + 2.0 * self.xy * v[0] * v[1] + self.yy * v[1] * v[1]
    }

    /// Bilinear form `a^T A b`.
    pub fn bilinear(&self, a: [f64; 2], b: [f64; 2]) -> f64 {
        self.xx * a[0] * b[0] + self.xy * (a[0] * b[1] + a[1] * b[0]) + self.yy * a[1] * b[1]
    }
}

pub fn dot2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

pub fn norm2(a: [f64; 2]) -> f64 {
    dot2(a, a).sqrt()
}

/// Dense row-major square matrix with an LU-based direct solver.
///
/// Used for the Lagrange basis construction and as the small-system direct
/// path of the sparse solver.
#[derive(Clone, Debug)]
pub struct DenseMatrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n: usize) -> Self {
        DenseMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = vec![0.0; n];
        for i in 0..n {
            let row = &self.data[i * n..(i + 1) * n];
            y[i] = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
        y
    }

    /// LU factorization with partial pivoting, in place.
    pub fn lu_factor(mut self) -> Option<LuFactors> {
        let n = self.n;
        let mut piv = vec![0usize; n];
        for k in 0..n {
            let mut p = k;
            let mut best = self.get(k, k).abs();
            for i in (k + 1)..n {
                let v = self.get(i, k).abs();
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
                    let t = self.get(k, j);
                    self.set(k, j, self.get(p, j));
                    self.set(p, j, t);
                }
            }
            let pivot = self.get(k, k);
            for i in (k + 1)..n {
                let l = self.get(i, k) / pivot;
                self.set(i, k, l);
                if l != 0.0 {
                    for j in (k + 1)..n {
                        let v = self.get(i, j) - l * self.get(k, j);
                        self.set(i, j, v);
                    }
                }
            }
        }
        Some(LuFactors { lu: self, piv })
    }
}

/// Packed LU factors with pivot record.
#[derive(Clone, Debug)]
pub struct LuFactors {
    lu: DenseMatrix,
    piv: Vec<usize>,
}

impl LuFactors {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.lu.n;
        let mut x = b.to_vec();
        for k in 0..n {
            x.swap(k, self.piv[k]);
        }
        // forward (unit lower)
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu.get(i, j) * x[j];
            }
            x[i] = s;
        }
        // backward
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in (i + 1)..n {
                s -= self.lu.get(i, j) * x[j];
            }
            x[i] = s / self.lu.get(i, i);
        }
        x
    }
}

/// Matrix inverse via LU with one step of Newton refinement.
///
/// The refinement keeps uniform-node Vandermonde inverses accurate enough
/// for partition-of-unity at degrees up to the supported cap.
pub fn invert(a: &DenseMatrix) -> Option<DenseMatrix> {
    let n = a.n;
    let lu = a.clone().lu_factor()?;
    let mut inv = DenseMatrix::zeros(n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        let col = lu.solve(&e);
        e[j] = 0.0;
        for i in 0..n {
            inv.set(i, j, col[i]);
        }
    }
    // X <- X (2I - A X)
    let mut ax = DenseMatrix::zeros(n);
    for i in 0..n {
        for k in 0..n {
            let aik = a.get(i, k);
            if aik != 0.0 {
                for j in 0..n {
                    ax.data[i * n + j] += aik * inv.get(k, j);
                }
            }
        }
    }
    let mut corr = DenseMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            let t = if i == j { 2.0 } else { 0.0 };
            corr.set(i, j, t - ax.get(i, j));
        }
    }
    let mut refined = DenseMatrix::zeros(n);
    for i in 0..n {
        for k in 0..n {
            let xik = inv.get(i, k);
            if xik != 0.0 {
                for j in 0..n {
                    refined.data[i * n + j] += xik * corr.get(k, j);
                }
            }
        }
    }
    Some(refined)
}
