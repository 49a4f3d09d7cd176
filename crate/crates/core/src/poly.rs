//! Real polynomials in ascending coefficient order.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{eigenvalues, Mat};

#[derive(Debug, Clone, PartialEq)]
pub struct Poly(pub Vec<f64>);

impl Poly {
    pub fn new(coeffs: Vec<f64>) -> Self {
        let mut p = Poly(coeffs);
        p.trim();
        p
    }

    fn trim(&mut self) {
        while self.0.len() > 1 && *self.0.last().unwrap() == 0.0 {
            self.0.pop();
        }
    }

    pub fn degree(&self) -> usize {
        self.0.len().saturating_sub(1)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    pub fn eval_c(&self, z: Complex64) -> Complex64 {
        self.0.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, c| acc * z + c)
    }

    pub fn derivative(&self) -> Poly {
        if self.0.len() <= 1 {
            return Poly(vec![0.0]);
        }
        Poly::new(self.0.iter().enumerate().skip(1).map(|(k, c)| k as f64 * c).collect())
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut out = vec![0.0; self.0.len() + other.0.len() - 1];
        for (i, a) in self.0.iter().enumerate() {
            for (j, b) in other.0.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Poly::new(out)
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let n = self.0.len().max(other.0.len());
        let get = |p: &Poly, k: usize| p.0.get(k).copied().unwrap_or(0.0);
        Poly::new((0..n).map(|k| get(self, k) + get(other, k)).collect())
    }

    pub fn scale(&self, s: f64) -> Poly {
        Poly::new(self.0.iter().map(|c| c * s).collect())
    }

    /// All complex roots: companion-matrix eigenvalues polished by Newton.
    pub fn roots(&self) -> Result<Vec<Complex64>> {
        let n = self.degree();
        if n == 0 {
            return Ok(vec![]);
        }
        let lead = self.0[n];
        if lead == 0.0 || !lead.is_finite() {
            return Err(Error::invalid("polynomial has no finite leading coefficient"));
        }
        let mut c = Mat::zeros(n, n);
        for i in 1..n {
            c[(i, i - 1)] = 1.0;
        }
        for i in 0..n {
            c[(i, n - 1)] = -self.0[i] / lead;
        }
        let dp = self.derivative();
        let mut roots = eigenvalues(&c)?;
        for z in roots.iter_mut() {
            *z = self.polish(&dp, *z);
        }
        Ok(roots)
    }

    fn polish(&self, dp: &Poly, mut z: Complex64) -> Complex64 {
        let mut best = self.eval_c(z).norm();
        for _ in 0..8 {
            let d = dp.eval_c(z);
            if d.norm() == 0.0 {
                break;
            }
            let step = self.eval_c(z) / d;
            let cand = z - step;
            let val = self.eval_c(cand).norm();
            if val < best {
                best = val;
                z = cand;
            } else {
                break;
            }
        }
        z
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roots_of_cubic() {
        // (x - 1)(x + 2)(x - 3)
        let p = Poly::new(vec![6.0, -5.0, -2.0, 1.0]);
        let mut r: Vec<f64> = p.roots().unwrap().iter().map(|z| z.re).collect();
        r.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let want = [-2.0, 1.0, 3.0];
        for (a, b) in r.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn complex_pair() {
        let p = Poly::new(vec![1.0, 0.0, 1.0]);
        let r = p.roots().unwrap();
        assert!(r.iter().all(|z| z.re.abs() < 1e-14 && (z.im.abs() - 1.0).abs() < 1e-14));
    }

    #[test]
    fn arithmetic() {
        let a = Poly::new(vec![1.0, 1.0]);
        let b = Poly::new(vec![-1.0, 1.0]);
        assert_eq!(a.mul(&b), Poly::new(vec![-1.0, 0.0, 1.0]));
        assert_eq!(a.add(&b), Poly::new(vec![0.0, 2.0]));
        assert_eq!(a.mul(&b).derivative(), Poly::new(vec![0.0, 2.0]));
    }
}
