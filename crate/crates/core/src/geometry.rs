//! Small dense Jacobians (ambient x topological) and their pseudo-inverses.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jacobian {
    /// Row-major, `m[i][j] = d x_i / d xi_j`.
    pub m: [[f64; 3]; 3],
    pub gdim: usize,
    pub tdim: usize,
}

impl Jacobian {
    pub fn identity(n: usize) -> Self {
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate().take(n) {
            row[i] = 1.0;
        }
        Self { m, gdim: n, tdim: n }
    }

    pub fn scaled_identity(n: usize, s: f64) -> Self {
        let mut j = Self::identity(n);
        for i in 0..n {
            j.m[i][i] = s;
        }
        j
    }

    /// Metric tensor J^T J (tdim x tdim).
    pub fn metric(&self) -> [[f64; 3]; 3] {
        let mut g = [[0.0; 3]; 3];
        for a in 0..self.tdim {
            for b in 0..self.tdim {
                g[a][b] = (0..self.gdim).map(|i| self.m[i][a] * self.m[i][b]).sum();
            }
        }
        g
    }

    /// Signed determinant for square maps, sqrt(det J^T J) on manifolds.
    pub fn det(&self) -> f64 {
        if self.gdim == self.tdim {
            det_n(&self.m, self.tdim)
        } else {
            det_n(&self.metric(), self.tdim).max(0.0).sqrt()
        }
    }

    /// Pseudo-inverse transpose J (J^T J)^{-1} (gdim x tdim); equals J^{-T}
    /// for square maps.
    pub fn inverse_transpose(&self) -> [[f64; 3]; 3] {
        let g = self.metric();
        let gi = inv_n(&g, self.tdim);
        let mut k = [[0.0; 3]; 3];
        for i in 0..self.gdim {
            for b in 0..self.tdim {
                k[i][b] = (0..self.tdim).map(|a| self.m[i][a] * gi[a][b]).sum();
            }
        }
        k
    }

    pub fn apply(&self, v: &[f64]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (i, o) in out.iter_mut().enumerate().take(self.gdim) {
            *o = (0..self.tdim).map(|j| self.m[i][j] * v[j]).sum();
        }
        out
    }

    pub fn mul(&self, other: &Jacobian) -> Jacobian {
        // (gdim x k) * (k x tdim), with k = self.tdim = other.gdim
        let mut m = [[0.0; 3]; 3];
        for i in 0..self.gdim {
            for j in 0..other.tdim {
                m[i][j] = (0..self.tdim).map(|k| self.m[i][k] * other.m[k][j]).sum();
            }
        }
        Jacobian { m, gdim: self.gdim, tdim: other.tdim }
    }
}

pub fn det_n(m: &[[f64; 3]; 3], n: usize) -> f64 {
    match n {
        1 => m[0][0],
        2 => m[0][0] * m[1][1] - m[0][1] * m[1][0],
        3 => {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        }
        _ => 1.0,
    }
}

pub fn inv_n(m: &[[f64; 3]; 3], n: usize) -> [[f64; 3]; 3] {
    let d = det_n(m, n);
    let mut r = [[0.0; 3]; 3];
    match n {
        1 => r[0][0] = 1.0 / d,
        2 => {
            r[0][0] = m[1][1] / d;
            r[0][1] = -m[0][1] / d;
            r[1][0] = -m[1][0] / d;
            r[1][1] = m[0][0] / d;
        }
        3 => {
            for i in 0..3 {
                for j in 0..3 {
                    let (a, b) = ((j + 1) % 3, (j + 2) % 3);
                    let (c, e) = ((i + 1) % 3, (i + 2) % 3);
                    r[i][j] = (m[a][c] * m[b][e] - m[a][e] * m[b][c]) / d;
                }
            }
        }
        _ => {}
    }
    r
}

pub fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn check_det(det: f64, cell: usize) -> Result<()> {
    if det > 0.0 && det.is_finite() {
        Ok(())
    } else {
        Err(Error::SingularJacobian { cell, det })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_of_3x3() {
        let m = [[2.0, 1.0, 0.0], [0.0, 3.0, 1.0], [1.0, 0.0, 1.0]];
        let r = inv_n(&m, 3);
        for i in 0..3 {
            for j in 0..3 {
                let s: f64 = (0..3).map(|k| m[i][k] * r[k][j]).sum();
                assert!((s - if i == j { 1.0 } else { 0.0 }).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn manifold_det_is_area_scale() {
        // Unit right triangle lifted into the plane z = x.
        let j = Jacobian { m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]], gdim: 3, tdim: 2 };
        assert!((j.det() - 2f64.sqrt()).abs() < 1e-14);
        let k = j.inverse_transpose();
        // K^T J = I on the tangent space
        for a in 0..2 {
            for b in 0..2 {
                let s: f64 = (0..3).map(|i| k[i][a] * j.m[i][b]).sum();
                assert!((s - if a == b { 1.0 } else { 0.0 }).abs() < 1e-14);
            }
        }
    }
}
