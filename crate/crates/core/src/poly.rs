//! Sparse polynomials in up to three reference coordinates.
//!
//! Reference bases are small, so a sorted term list is plenty fast for
//! construction; hot loops only see tabulated values.

use std::ops::{Add, Mul, Neg, Sub};

/// Exponents of (x, y, z).
pub type Exp = [u8; 3];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Poly {
    terms: Vec<(Exp, f64)>,
}

impl Poly {
    pub fn zero() -> Self {
        Self { terms: Vec::new() }
    }

    pub fn constant(c: f64) -> Self {
        Self::monomial([0, 0, 0], c)
    }

    pub fn monomial(e: Exp, c: f64) -> Self {
        let mut p = Self { terms: vec![(e, c)] };
        p.prune();
        p
    }

    /// The coordinate `x_var`.
    pub fn var(var: usize) -> Self {
        let mut e = [0u8; 3];
        e[var] = 1;
        Self::monomial(e, 1.0)
    }

    pub fn from_terms(mut terms: Vec<(Exp, f64)>) -> Self {
        terms.sort_by(|a, b| a.0.cmp(&b.0));
        let mut merged: Vec<(Exp, f64)> = Vec::with_capacity(terms.len());
        for (e, c) in terms {
            match merged.last_mut() {
                Some(last) if last.0 == e => last.1 += c,
                _ => merged.push((e, c)),
            }
        }
        let mut p = Self { terms: merged };
        p.prune();
        p
    }

    fn prune(&mut self) {
        self.terms.retain(|(_, c)| *c != 0.0);
    }

    pub fn terms(&self) -> &[(Exp, f64)] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Total degree; zero polynomial reports 0.
    pub fn degree(&self) -> usize {
        self.terms
            .iter()
            .map(|(e, _)| e.iter().map(|&k| k as usize).sum())
            .max()
            .unwrap_or(0)
    }

    /// Degree in a single variable.
    pub fn degree_in(&self, var: usize) -> usize {
        self.terms.iter().map(|(e, _)| e[var] as usize).max().unwrap_or(0)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for (e, c) in &self.terms {
            let mut t = *c;
            for (k, &ek) in e.iter().enumerate() {
                if ek > 0 {
                    t *= x[k].powi(ek as i32);
                }
            }
            s += t;
        }
        s
    }

    pub fn deriv(&self, var: usize) -> Self {
        let terms = self
            .terms
            .iter()
            .filter(|(e, _)| e[var] > 0)
            .map(|(e, c)| {
                let mut e2 = *e;
                e2[var] -= 1;
                (e2, c * e[var] as f64)
            })
            .collect();
        Self::from_terms(terms)
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::from_terms(self.terms.iter().map(|(e, c)| (*e, c * s)).collect())
    }

    /// Rename variable `from` to `to` (used to lift interval bases to the vertical axis).
    pub fn move_var(&self, from: usize, to: usize) -> Self {
        let terms = self
            .terms
            .iter()
            .map(|(e, c)| {
                let mut e2 = *e;
                let k = e2[from];
                e2[from] = 0;
                e2[to] += k;
                (e2, *c)
            })
            .collect();
        Self::from_terms(terms)
    }

    /// All monomials of total degree <= `deg` in `nvars` variables.
    pub fn monomials(nvars: usize, deg: usize) -> Vec<Poly> {
        let mut out = Vec::new();
        for d in 0..=deg {
            match nvars {
                1 => out.push(Self::monomial([d as u8, 0, 0], 1.0)),
                2 => {
                    for j in 0..=d {
                        out.push(Self::monomial([(d - j) as u8, j as u8, 0], 1.0));
                    }
                }
                3 => {
                    for j in 0..=d {
                        for k in 0..=(d - j) {
                            out.push(Self::monomial([(d - j - k) as u8, j as u8, k as u8], 1.0));
                        }
                    }
                }
                _ => panic!("monomials: nvars must be 1..=3"),
            }
        }
        out
    }

    /// Tensor monomials x^i y^j with i <= px, j <= py.
    pub fn tensor_monomials(px: usize, py: usize) -> Vec<Poly> {
        let mut out = Vec::new();
        for j in 0..=py {
            for i in 0..=px {
                out.push(Self::monomial([i as u8, j as u8, 0], 1.0));
            }
        }
        out
    }
}

impl Add for &Poly {
    type Output = Poly;
    fn add(self, o: &Poly) -> Poly {
        let mut t = self.terms.clone();
        t.extend_from_slice(&o.terms);
        Poly::from_terms(t)
    }
}

impl Sub for &Poly {
    type Output = Poly;
    fn sub(self, o: &Poly) -> Poly {
        let mut t = self.terms.clone();
        t.extend(o.terms.iter().map(|(e, c)| (*e, -c)));
        Poly::from_terms(t)
    }
}

impl Neg for &Poly {
    type Output = Poly;
    fn neg(self) -> Poly {
        self.scale(-1.0)
    }
}

impl Mul for &Poly {
    type Output = Poly;
    fn mul(self, o: &Poly) -> Poly {
        let mut t = Vec::with_capacity(self.terms.len() * o.terms.len());
        for (ea, ca) in &self.terms {
            for (eb, cb) in &o.terms {
                t.push(([ea[0] + eb[0], ea[1] + eb[1], ea[2] + eb[2]], ca * cb));
            }
        }
        Poly::from_terms(t)
    }
}

/// Vector-valued polynomial, one `Poly` per component.
pub type VecPoly = Vec<Poly>;

/// Linear combination `sum_k c[k] * v[k]` of vector polynomials.
pub fn combine(vs: &[VecPoly], c: &[f64]) -> VecPoly {
    let ncomp = vs[0].len();
    (0..ncomp)
        .map(|comp| {
            let mut terms = Vec::new();
            for (v, &ck) in vs.iter().zip(c) {
                if ck != 0.0 {
                    terms.extend(v[comp].terms().iter().map(|(e, x)| (*e, x * ck)));
                }
            }
            let mut p = Poly::from_terms(terms);
            p.terms.retain(|(_, x)| x.abs() > 1e-14);
            p
        })
        .collect()
}

/// Legendre polynomial P_n shifted to [0, 1], in variable 0.
pub fn shifted_legendre(n: usize) -> Poly {
    let t = &Poly::var(0).scale(2.0) - &Poly::constant(1.0);
    let mut p0 = Poly::constant(1.0);
    if n == 0 {
        return p0;
    }
    let mut p1 = t.clone();
    for k in 1..n {
        let kf = k as f64;
        let a = (&t * &p1).scale((2.0 * kf + 1.0) / (kf + 1.0));
        let b = p0.scale(kf / (kf + 1.0));
        let p2 = &a - &b;
        p0 = p1;
        p1 = p2;
    }
    p1
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn product_and_derivative() {
        let x = Poly::var(0);
        let y = Poly::var(1);
        let p = &(&x * &x) * &y; // x^2 y
        assert_eq!(p.eval(&[2.0, 3.0, 0.0]), 12.0);
        assert_eq!(p.deriv(0).eval(&[2.0, 3.0, 0.0]), 12.0);
        assert_eq!(p.deriv(1).eval(&[2.0, 3.0, 0.0]), 4.0);
        assert!(p.deriv(2).is_zero());
        assert_eq!(p.degree(), 3);
    }

    #[test]
    fn cancellation_prunes_terms() {
        let x = Poly::var(0);
        assert!((&x - &x).is_zero());
    }

    #[test]
    fn monomial_counts() {
        assert_eq!(Poly::monomials(1, 3).len(), 4);
        assert_eq!(Poly::monomials(2, 2).len(), 6);
        assert_eq!(Poly::monomials(3, 1).len(), 4);
        assert_eq!(Poly::tensor_monomials(2, 1).len(), 6);
    }

    #[test]
    fn legendre_values() {
        // P2(t) = (3t^2 - 1)/2 with t = 2s - 1
        let p = shifted_legendre(2);
        for s in [0.0, 0.3, 1.0] {
            let t: f64 = 2.0 * s - 1.0;
            assert!((p.eval(&[s, 0.0, 0.0]) - 0.5 * (3.0 * t * t - 1.0)).abs() < 1e-14);
        }
    }

    #[test]
    fn move_var_lifts_to_z() {
        let p = &Poly::var(0) * &Poly::var(0);
        let q = p.move_var(0, 2);
        assert_eq!(q.eval(&[5.0, 7.0, 3.0]), 9.0);
    }

    proptest! {
        #[test]
        fn product_rule(a in -2.0f64..2.0, b in -2.0f64..2.0, c in -2.0f64..2.0) {
            let x = Poly::var(0);
            let y = Poly::var(1);
            let p = &(&x * &y) + &Poly::constant(a);
            let q = &(&x * &x).scale(b) + &y.scale(c);
            let lhs = (&p * &q).deriv(0);
            let rhs = &(&p.deriv(0) * &q) + &(&p * &q.deriv(0));
            let pt = [0.3, -0.7, 0.1];
            prop_assert!((lhs.eval(&pt) - rhs.eval(&pt)).abs() < 1e-12);
        }
    }
}
