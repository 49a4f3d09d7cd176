//! Phase-type and double-phase-type jump laws.
//!
//! `PhaseType` is the absorption time of a finite Markov chain with initial
//! law `alpha` and sub-generator `T`; its density is `alpha exp(Tx) t` with
//! exit vector `t = -T 1`. Transforms follow the moment-generating-function
//! convention `E[exp(sX)] = alpha (-sI - T)^{-1} t`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{eigenvalues, expm, solve_vec, Mat, Vector};

/// Margin kept from the convergence abscissa when evaluating transforms.
pub const MGF_MARGIN: f64 = 1e-9;

const STRUCT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PhaseTypeRepr", into = "PhaseTypeRepr")]
pub struct PhaseType {
    alpha: Vector,
    t: Mat,
    exit: Vector,
    abscissa: f64,
}

#[derive(Serialize, Deserialize)]
struct PhaseTypeRepr {
    alpha: Vec<f64>,
    #[serde(rename = "T")]
    t: Vec<Vec<f64>>,
}

impl TryFrom<PhaseTypeRepr> for PhaseType {
    type Error = Error;

    fn try_from(r: PhaseTypeRepr) -> Result<Self> {
        let m = r.alpha.len();
        if r.t.len() != m || r.t.iter().any(|row| row.len() != m) {
            return Err(Error::invalid(format!("phase-type T must be {m}x{m} to match alpha")));
        }
        let t = DMatrix::from_fn(m, m, |i, j| r.t[i][j]);
        PhaseType::new(DVector::from_vec(r.alpha), t)
    }
}

impl From<PhaseType> for PhaseTypeRepr {
    fn from(p: PhaseType) -> Self {
        let m = p.phases();
        PhaseTypeRepr {
            alpha: p.alpha.iter().copied().collect(),
            t: (0..m).map(|i| (0..m).map(|j| p.t[(i, j)]).collect()).collect(),
        }
    }
}

/// Which tail an exponential tilt acts on: `Plus` reweights the density by
/// `exp(+gamma x)`, `Minus` by `exp(-gamma x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TiltSign {
    Plus,
    Minus,
}

impl PhaseType {
    pub fn new(alpha: Vector, t: Mat) -> Result<Self> {
        let m = alpha.len();
        if m == 0 {
            return Err(Error::invalid("phase-type needs at least one phase"));
        }
        if t.nrows() != m || t.ncols() != m {
            return Err(Error::invalid("phase-type T has the wrong shape"));
        }
        if alpha.iter().chain(t.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("phase-type parameters must be finite"));
        }
        if alpha.iter().any(|&a| a < 0.0) {
            return Err(Error::invalid("phase-type alpha has a negative entry"));
        }
        if alpha.sum() > 1.0 + STRUCT_TOL {
            return Err(Error::invalid("phase-type alpha sums to more than 1"));
        }
        let scale = t.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(1.0);
        for i in 0..m {
            if t[(i, i)] >= 0.0 {
                return Err(Error::invalid(format!("phase-type T[{i}][{i}] must be negative")));
            }
            let mut row = 0.0;
            for j in 0..m {
                if i != j && t[(i, j)] < 0.0 {
                    return Err(Error::invalid(format!("phase-type T[{i}][{j}] off-diagonal is negative")));
                }
                row += t[(i, j)];
            }
            if row > STRUCT_TOL * scale {
                return Err(Error::invalid(format!("phase-type T row {i} sums to {row} > 0")));
            }
        }
        let ones = Vector::from_element(m, 1.0);
        let exit = -(&t * &ones);
        let exit = exit.map(|v| if v < 0.0 { 0.0 } else { v });
        let mean_vec = solve_vec(&(-&t), &ones, "phase-type T")
            .map_err(|_| Error::invalid("phase-type T is singular (a phase is not transient)"))?;
        if mean_vec.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("phase-type T is singular (a phase is not transient)"));
        }
        let abscissa = -eigenvalues(&t)?.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
        Ok(PhaseType { alpha, t, exit, abscissa })
    }

    pub fn exponential(rate: f64) -> Result<Self> {
        Self::new(Vector::from_element(1, 1.0), Mat::from_element(1, 1, -rate))
    }

    pub fn erlang(k: usize, rate: f64) -> Result<Self> {
        let mut t = Mat::zeros(k, k);
        for i in 0..k {
            t[(i, i)] = -rate;
            if i + 1 < k {
                t[(i, i + 1)] = rate;
            }
        }
        let mut alpha = Vector::zeros(k);
        alpha[0] = 1.0;
        Self::new(alpha, t)
    }

    pub fn phases(&self) -> usize {
        self.alpha.len()
    }

    pub fn alpha(&self) -> &Vector {
        &self.alpha
    }

    pub fn generator(&self) -> &Mat {
        &self.t
    }

    /// Exit vector `t = -T 1`.
    pub fn exit_rates(&self) -> &Vector {
        &self.exit
    }

    /// Mass of the atom at zero, `1 - sum(alpha)`.
    pub fn atom(&self) -> f64 {
        (1.0 - self.alpha.sum()).max(0.0)
    }

    /// The MGF `E[exp(sX)]` converges for `s < abscissa`.
    pub fn abscissa(&self) -> f64 {
        self.abscissa
    }

    pub fn density(&self, x: f64) -> Result<f64> {
        if !(x > 0.0) {
            return Err(Error::Domain(format!("phase-type density needs x > 0, got {x}")));
        }
        Ok((self.alpha.transpose() * expm(&self.t, x) * &self.exit)[0].max(0.0))
    }

    /// `P(X <= x)`, counting the atom at zero.
    pub fn cdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        let ones = Vector::from_element(self.phases(), 1.0);
        (1.0 - (self.alpha.transpose() * expm(&self.t, x) * ones)[0]).clamp(0.0, 1.0)
    }

    /// `alpha (-sI - T)^{-1} t`, the transform of the absolutely continuous part.
    pub fn mgf(&self, s: f64) -> Result<f64> {
        if !(s < self.abscissa - MGF_MARGIN) {
            return Err(Error::Divergence(format!(
                "phase-type MGF at s = {s} is outside the strip s < {}",
                self.abscissa
            )));
        }
        let k = self.resolvent_exit(-s)?;
        Ok(self.alpha.dot(&k))
    }

    /// Derivative of `mgf` in `s`: `alpha (-sI - T)^{-2} t`.
    pub fn mgf_derivative(&self, s: f64) -> Result<f64> {
        if !(s < self.abscissa - MGF_MARGIN) {
            return Err(Error::Divergence(format!(
                "phase-type MGF at s = {s} is outside the strip s < {}",
                self.abscissa
            )));
        }
        let m = self.phases();
        let a = Mat::identity(m, m) * (-s) - &self.t;
        let k = solve_vec(&a, &self.exit, "phase-type resolvent")?;
        let k2 = solve_vec(&a, &k, "phase-type resolvent")?;
        Ok(self.alpha.dot(&k2))
    }

    /// `(uI - T)^{-1} t`.
    pub fn resolvent_exit(&self, u: f64) -> Result<Vector> {
        let m = self.phases();
        let a = Mat::identity(m, m) * u - &self.t;
        solve_vec(&a, &self.exit, "phase-type resolvent")
    }

    pub fn mean(&self) -> f64 {
        let ones = Vector::from_element(self.phases(), 1.0);
        let v = solve_vec(&(-&self.t), &ones, "phase-type T").expect("validated at construction");
        self.alpha.dot(&v)
    }

    /// `E[X^2] = 2 alpha T^{-2} 1`.
    pub fn second_moment(&self) -> f64 {
        let ones = Vector::from_element(self.phases(), 1.0);
        let v = solve_vec(&(-&self.t), &ones, "phase-type T").expect("validated at construction");
        let w = solve_vec(&(-&self.t), &v, "phase-type T").expect("validated at construction");
        2.0 * self.alpha.dot(&w)
    }

    /// Simulates the absorbing chain.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let m = self.phases();
        let u: f64 = rng.random();
        let mut state = None;
        let mut acc = 0.0;
        for i in 0..m {
            acc += self.alpha[i];
            if u < acc {
                state = Some(i);
                break;
            }
        }
        let mut x = 0.0;
        while let Some(i) = state {
            let rate = -self.t[(i, i)];
            let e: f64 = Exp1.sample(rng);
            x += e / rate;
            let v: f64 = rng.random::<f64>() * rate;
            let mut acc = 0.0;
            state = None;
            for j in 0..m {
                if j != i {
                    acc += self.t[(i, j)];
                    if v < acc {
                        state = Some(j);
                        break;
                    }
                }
            }
        }
        x
    }

    /// Exponentially tilted law: density proportional to `exp(+-gamma x) f(x)`.
    pub fn tilt(&self, gamma: f64, sign: TiltSign) -> Result<PhaseType> {
        if gamma == 0.0 {
            return Ok(self.clone());
        }
        let g = match sign {
            TiltSign::Plus => gamma,
            TiltSign::Minus => -gamma,
        };
        if g >= self.abscissa - MGF_MARGIN {
            return Err(Error::Domain(format!(
                "tilt by {gamma} leaves the transform strip (abscissa {})",
                self.abscissa
            )));
        }
        let m = self.phases();
        let k = self.resolvent_exit(-g).map_err(|_| Error::Domain(format!("tilt by {gamma} is singular")))?;
        if k.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Domain(format!("tilt by {gamma} gives a non-positive scaling")));
        }
        let norm = self.alpha.dot(&k);
        let alpha = Vector::from_fn(m, |i, _| self.alpha[i] * k[i] / norm);
        let t = Mat::from_fn(m, m, |i, j| {
            let v = self.t[(i, j)] * k[j] / k[i];
            if i == j {
                v + g
            } else {
                v
            }
        });
        PhaseType::new(alpha, t).map_err(|e| Error::Domain(format!("tilted law is invalid: {e}")))
    }
}

/// Two-sided jump law: with probability `p` an upward jump drawn from `plus`,
/// otherwise a downward jump whose magnitude is drawn from `minus`.
#[derive(Debug, Clone, PartialEq)]
pub struct DoublePhaseType {
    p: f64,
    plus: Option<PhaseType>,
    minus: Option<PhaseType>,
}

impl DoublePhaseType {
    /// `p` may be 0 or 1, in which case the unused side is dropped.
    pub fn new(p: f64, plus: Option<PhaseType>, minus: Option<PhaseType>) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(format!("jump probability p = {p} is outside [0, 1]")));
        }
        let plus = if p > 0.0 {
            Some(plus.ok_or_else(|| Error::invalid("p > 0 requires an upward phase-type law"))?)
        } else {
            None
        };
        let minus = if p < 1.0 {
            Some(minus.ok_or_else(|| Error::invalid("p < 1 requires a downward phase-type law"))?)
        } else {
            None
        };
        Ok(DoublePhaseType { p, plus, minus })
    }

    pub fn only_up(plus: PhaseType) -> Self {
        DoublePhaseType { p: 1.0, plus: Some(plus), minus: None }
    }

    pub fn only_down(minus: PhaseType) -> Self {
        DoublePhaseType { p: 0.0, plus: None, minus: Some(minus) }
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn plus(&self) -> Option<&PhaseType> {
        self.plus.as_ref()
    }

    pub fn minus(&self) -> Option<&PhaseType> {
        self.minus.as_ref()
    }

    /// Open interval of `s` on which the MGF converges.
    pub fn strip(&self) -> (f64, f64) {
        let lo = self.minus.as_ref().map_or(f64::NEG_INFINITY, |d| -d.abscissa());
        let hi = self.plus.as_ref().map_or(f64::INFINITY, |d| d.abscissa());
        (lo, hi)
    }

    pub fn density(&self, x: f64) -> f64 {
        if x > 0.0 {
            self.plus.as_ref().map_or(0.0, |d| self.p * d.density(x).unwrap_or(0.0))
        } else if x < 0.0 {
            self.minus.as_ref().map_or(0.0, |d| (1.0 - self.p) * d.density(-x).unwrap_or(0.0))
        } else {
            0.0
        }
    }

    /// `E[exp(sJ)]` for the signed jump `J`.
    pub fn mgf(&self, s: f64) -> Result<f64> {
        let mut v = 0.0;
        if let Some(d) = &self.plus {
            v += self.p * d.mgf(s)?;
        }
        if let Some(d) = &self.minus {
            v += (1.0 - self.p) * d.mgf(-s)?;
        }
        Ok(v)
    }

    pub fn mgf_derivative(&self, s: f64) -> Result<f64> {
        let mut v = 0.0;
        if let Some(d) = &self.plus {
            v += self.p * d.mgf_derivative(s)?;
        }
        if let Some(d) = &self.minus {
            v -= (1.0 - self.p) * d.mgf_derivative(-s)?;
        }
        Ok(v)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        if u < self.p {
            self.plus.as_ref().expect("p > 0").sample(rng)
        } else {
            -self.minus.as_ref().expect("p < 1").sample(rng)
        }
    }
}
