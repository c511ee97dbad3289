//! Small dense symmetric matrices for the Fréchet distance.

use crate::error::{Error, Result};

/// Row-major square matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    n: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Matrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::shape("matrix", n * n, data.len()));
        }
        Ok(Matrix { n, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn transpose(&self) -> Matrix {
        let n = self.n;
        let mut t = Matrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                t.data[j * n + i] = self.data[i * n + j];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        let n = self.n;
        let mut out = Matrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                for j in 0..n {
                    out.data[i * n + j] += a * other.data[k * n + j];
                }
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Largest `|a_ij - a_ji|` relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        let scale = self
            .data
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(f64::MIN_POSITIVE);
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in i + 1..self.n {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst / scale
    }

    fn symmetrized(&self) -> Matrix {
        let t = self.transpose();
        let data = self.data.iter().zip(&t.data).map(|(a, b)| 0.5 * (a + b)).collect();
        Matrix { n: self.n, data }
    }
}

/// `A = V diag(values) Vᵀ`, eigenvectors in the columns of `V`.
#[derive(Clone, Debug)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

impl SymmetricEigen {
    pub fn reconstruct(&self) -> Matrix {
        self.apply(|v| v)
    }

    /// `V diag(f(values)) Vᵀ`.
    pub fn apply(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let n = self.values.len();
        let v = &self.vectors;
        let fv: Vec<f64> = self.values.iter().map(|&x| f(x)).collect();
        let mut out = Matrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                let s = fv.iter().enumerate().map(|(k, f)| v.get(i, k) * f * v.get(j, k)).sum();
                out.set(i, j, s);
            }
        }
        out
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
pub fn symmetric_eigen(a: &Matrix) -> SymmetricEigen {
    let n = a.n;
    let mut m = a.symmetrized();
    let mut v = Matrix::identity(n);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m.get(i, j).powi(2))
            .sum();
        let diag: f64 = (0..n).map(|i| m.get(i, i).powi(2)).sum();
        if off <= 1e-30 * diag.max(f64::MIN_POSITIVE) || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = (m.get(q, q) - m.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m.get(k, p), m.get(k, q));
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let (mpk, mqk) = (m.get(p, k), m.get(q, k));
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                for k in 0..n {
                    let (vkp, vkq) = (v.get(k, p), v.get(k, q));
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    SymmetricEigen {
        values: (0..n).map(|i| m.get(i, i)).collect(),
        vectors: v,
    }
}

/// Principal square root with negative eigenvalues clamped to zero.
pub fn psd_sqrt(a: &Matrix) -> Matrix {
    symmetric_eigen(a).apply(|v| v.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_of_diagonal() {
        let a = Matrix::from_vec(2, vec![3.0, 0.0, 0.0, 1.0]).unwrap();
        let e = symmetric_eigen(&a);
        let mut vals = e.values.clone();
        vals.sort_by(f64::total_cmp);
        assert_eq!(vals, vec![1.0, 3.0]);
    }

    #[test]
    fn reconstructs_dense() {
        let a = Matrix::from_vec(3, vec![4.0, 1.0, -2.0, 1.0, 2.0, 0.5, -2.0, 0.5, 3.0]).unwrap();
        let e = symmetric_eigen(&a);
        assert!(e.reconstruct().max_abs_diff(&a) < 1e-12);
        let s = psd_sqrt(&a);
        assert!(s.matmul(&s).max_abs_diff(&a) < 1e-10);
    }
}
