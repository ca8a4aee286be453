//! Gauss-type quadrature on reference cells.
//!
//! Triangles use the collapsed (Duffy) product of Gauss-Legendre rules;
//! prisms and hexes are products with the interval rule.

use crate::reference::CellShape;

#[derive(Debug, Clone)]
pub struct Quadrature {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

impl Quadrature {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(&[f64; 3]) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(p, w)| w * f(p)).sum()
    }
}

/// Gauss-Legendre nodes and weights on [0, 1].
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(m >= 1);
    let mut x = vec![0.0; m];
    let mut w = vec![0.0; m];
    for i in 0..m {
        // Chebyshev-like initial guess followed by Newton on P_m.
        let mut t = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_and_derivative(m, t);
            dp = d;
            let dt = p / d;
            t -= dt;
            if dt.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_and_derivative(m, t);
        dp = if d != 0.0 { d } else { dp };
        x[m - 1 - i] = 0.5 * (t + 1.0);
        w[m - 1 - i] = 1.0 / ((1.0 - t * t) * dp * dp);
    }
    (x, w)
}

fn legendre_and_derivative(n: usize, t: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = t;
    for k in 1..n {
        let kf = k as f64;
        let p2 = ((2.0 * kf + 1.0) * t * p1 - kf * p0) / (kf + 1.0);
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (t * p1 - p0) / (t * t - 1.0);
    (p1, d)
}

fn points_for(degree: usize) -> usize {
    (degree + 2) / 2
}

/// Rule exact for polynomials of total degree `degree` (per direction on
/// tensor-product cells).
pub fn quadrature_rule(shape: CellShape, degree: usize) -> Quadrature {
    match shape {
        CellShape::Interval => {
            let (x, w) = gauss_legendre(points_for(degree));
            Quadrature { points: x.iter().map(|&s| [s, 0.0, 0.0]).collect(), weights: w, degree }
        }
        CellShape::Quad => {
            let (x, w) = gauss_legendre(points_for(degree));
            let mut points = Vec::new();
            let mut weights = Vec::new();
            for j in 0..x.len() {
                for i in 0..x.len() {
                    points.push([x[i], x[j], 0.0]);
                    weights.push(w[i] * w[j]);
                }
            }
            Quadrature { points, weights, degree }
        }
        CellShape::Triangle => {
            // The collapse factor (1 - s) raises the degree in s by one.
            let (x, w) = gauss_legendre(points_for(degree + 1));
            let mut points = Vec::new();
            let mut weights = Vec::new();
            for i in 0..x.len() {
                for j in 0..x.len() {
                    let s = x[i];
                    points.push([s, x[j] * (1.0 - s), 0.0]);
                    weights.push(w[i] * w[j] * (1.0 - s));
                }
            }
            Quadrature { points, weights, degree }
        }
        CellShape::Prism | CellShape::Hex => {
            let base = quadrature_rule(shape.base().unwrap(), degree);
            let (x, w) = gauss_legendre(points_for(degree));
            let mut points = Vec::new();
            let mut weights = Vec::new();
            for k in 0..x.len() {
                for (p, wb) in base.points.iter().zip(&base.weights) {
                    points.push([p[0], p[1], x[k]]);
                    weights.push(wb * w[k]);
                }
            }
            Quadrature { points, weights, degree }
        }
    }
}
