//! Perpetual American put: `V_k(s, i) = K v_{0,k}(log s, i) - v_{1,k}(log s, i)`
//! with discounting at the regime's short rate, and the smooth-fit search for
//! the optimal exercise levels.

pub mod two_regime;

use crate::error::{Error, Result};
use crate::first_passage::{LevelVector, PassageSolver, PiecewiseValue};
use crate::linalg::{solve_vec, stationary_distribution, Mat, Vector};
use crate::model::{ModelSpec, PutContract, RISK_NEUTRAL_TOL};

pub use two_regime::{two_regime_closed_form, two_regime_roots, TwoRegimeCase, TwoRegimeClosedForm, TwoRegimeParams};

/// Smooth-fit residuals below this (relative to the strike) end the search.
pub const SMOOTH_FIT_TOL: f64 = 1e-11;
/// Largest Newton step in log-price.
pub const MAX_STEP: f64 = 0.25;
const MAX_ITER: usize = 100;

#[derive(Debug, Clone)]
pub struct PutSolution {
    pub strike: f64,
    pub levels: LevelVector,
    pub v0: PiecewiseValue,
    pub v1: PiecewiseValue,
    /// `dV/dx (k_j+, j) + e^{k_j}` per regime.
    pub smooth_fit: Vec<f64>,
    pub iterations: usize,
}

impl PutSolution {
    /// Per-regime log exercise levels.
    pub fn k(&self) -> &[f64] {
        self.levels.levels()
    }

    pub fn value_log(&self, x: f64, i: usize) -> f64 {
        self.strike * self.v0.evaluate(x, i) - self.v1.evaluate(x, i)
    }

    /// `V(s, i)` for spot `s > 0`.
    pub fn value(&self, s: f64, i: usize) -> f64 {
        self.value_log(s.ln(), i)
    }

    /// Right derivative of `V(e^x, i)` in `x`.
    pub fn derivative_log(&self, x: f64, i: usize) -> f64 {
        self.strike * self.v0.derivative(x, i) - self.v1.derivative(x, i)
    }

    pub fn max_smooth_fit_residual(&self) -> f64 {
        self.smooth_fit.iter().fold(0.0, |m, r| m.max(r.abs()))
    }
}

/// Prices puts on one model; factorizations are shared across level vectors.
#[derive(Debug)]
pub struct PutPricer {
    model: ModelSpec,
    strike: f64,
    solver: PassageSolver,
}

impl PutPricer {
    pub fn new(m: &ModelSpec, strike: f64) -> Result<Self> {
        let strike = PutContract::new(strike)?.strike();
        let res = m.martingale_residuals()?;
        if let Some((i, r)) = res.iter().enumerate().find(|(_, r)| r.abs() > RISK_NEUTRAL_TOL) {
            return Err(Error::Precondition(format!(
                "regime {i}: discounted price is not a martingale (residual {r:.3e}); convert with emm or project the drift"
            )));
        }
        let a: Vec<f64> = m.regimes().iter().map(|r| r.r).collect();
        if let Some(i) = a.iter().position(|r| !(*r > 0.0)) {
            return Err(Error::Domain(format!("regime {i}: the short rate must be positive, got {}", a[i])));
        }
        Ok(PutPricer { model: m.clone(), strike, solver: PassageSolver::new(m, &a)? })
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn strike(&self) -> f64 {
        self.strike
    }

    pub fn price_given_levels(&self, k: &[f64]) -> Result<PutSolution> {
        let n = self.model.n_regimes();
        if k.len() != n {
            return Err(Error::invalid(format!("expected {n} exercise levels, got {}", k.len())));
        }
        let log_k = self.strike.ln();
        if let Some(j) = k.iter().position(|v| !(*v < log_k)) {
            return Err(Error::Domain(format!("level k[{j}] = {} must lie below log K = {log_k}", k[j])));
        }
        let levels = LevelVector::new(k)?;
        let ones = vec![1.0; n];
        let v0 = self.solver.solve(&levels, 0.0, &ones)?;
        let v1 = self.solver.solve(&levels, 1.0, &ones)?;
        let smooth_fit = (0..n)
            .map(|j| self.strike * v0.derivative_at_level(j) - v1.derivative_at_level(j) + levels.level(j).exp())
            .collect();
        Ok(PutSolution { strike: self.strike, levels, v0, v1, smooth_fit, iterations: 0 })
    }

    pub fn smooth_fit_residuals(&self, k: &[f64]) -> Result<Vec<f64>> {
        Ok(self.price_given_levels(k)?.smooth_fit)
    }

    /// Starting points: the McKean threshold of a stationary-averaged
    /// diffusion in every regime, each regime's own McKean threshold in every
    /// regime, and the per-regime thresholds side by side.
    fn starts(&self) -> Vec<Vec<f64>> {
        let n = self.model.n_regimes();
        let log_k = self.strike.ln();
        let mckean = |r: f64, s2: f64| {
            let gamma = if s2 > 1e-12 { 2.0 * r / s2 } else { 1.0 };
            (log_k + (gamma / (1.0 + gamma)).ln()).min(log_k - 1e-3)
        };
        let per: Vec<f64> = self
            .model
            .regimes()
            .iter()
            .map(|reg| {
                let jump_var = reg.jumps.as_ref().map_or(0.0, |j| {
                    let m2 = j.plus().map_or(0.0, |d| j.p() * d.second_moment())
                        + j.minus().map_or(0.0, |d| (1.0 - j.p()) * d.second_moment());
                    reg.lambda * m2
                });
                mckean(reg.r, reg.sigma * reg.sigma + jump_var)
            })
            .collect();
        let pi =
            stationary_distribution(self.model.generator()).unwrap_or_else(|_| Vector::from_element(n, 1.0 / n as f64));
        let (mut r_bar, mut s_bar) = (0.0, 0.0);
        for (i, reg) in self.model.regimes().iter().enumerate() {
            r_bar += pi[i] * reg.r;
            s_bar += pi[i] * reg.sigma * reg.sigma;
        }
        let mut starts = vec![vec![mckean(r_bar, s_bar); n], per.clone()];
        for &p in &per {
            starts.push(vec![p; n]);
        }
        starts.dedup();
        starts
    }

    fn newton(&self, start: &[f64]) -> Result<PutSolution> {
        let n = start.len();
        let log_k = self.strike.ln();
        let tol = SMOOTH_FIT_TOL * self.strike.max(1.0);
        let mut k = start.to_vec();
        let mut sol = self.price_given_levels(&k)?;
        let norm = |r: &[f64]| r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut trace = Vec::new();
        for it in 0..MAX_ITER {
            let f = norm(&sol.smooth_fit);
            trace.push(sol.smooth_fit.clone());
            if f < tol {
                sol.iterations = it;
                return Ok(sol);
            }
            let mut jac = Mat::zeros(n, n);
            for j in 0..n {
                let h = 1e-6 * (1.0 + k[j].abs());
                let mut kp = k.clone();
                let mut km = k.clone();
                kp[j] += h;
                km[j] -= h;
                let rp = self.smooth_fit_residuals(&kp)?;
                let rm = self.smooth_fit_residuals(&km)?;
                for i in 0..n {
                    jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
                }
            }
            let rhs = Vector::from_iterator(n, sol.smooth_fit.iter().map(|v| -v));
            let mut step = solve_vec(&jac, &rhs, "smooth-fit Jacobian")?;
            let scale = step.amax() / MAX_STEP;
            if scale > 1.0 {
                step /= scale;
            }
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..12 {
                let trial: Vec<f64> = k
                    .iter()
                    .zip(step.iter())
                    .map(|(kj, dj)| {
                        let next = kj + t * dj;
                        if next < log_k {
                            next
                        } else {
                            0.5 * (kj + log_k)
                        }
                    })
                    .collect();
                if let Ok(next) = self.price_given_levels(&trial) {
                    if norm(&next.smooth_fit) < f {
                        k = trial;
                        sol = next;
                        accepted = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if !accepted {
                if f < 1e3 * tol {
                    sol.iterations = it;
                    return Ok(sol);
                }
                break;
            }
        }
        Err(Error::Optimization { message: format!("smooth fit did not converge from {start:?}"), trace })
    }

    /// `V >= (K - s)+` on a log grid through every exercise level.
    fn dominates_payoff(&self, sol: &PutSolution) -> bool {
        let lo = sol.k().iter().cloned().fold(f64::INFINITY, f64::min) - 1.0;
        let hi = (3.0 * self.strike).ln();
        (0..=200).all(|i| {
            let x = lo + (hi - lo) * i as f64 / 200.0;
            (0..self.model.n_regimes())
                .all(|r| sol.value_log(x, r) >= (self.strike - x.exp()).max(0.0) - 1e-9 * self.strike)
        })
    }

    pub fn solve_optimal(&self) -> Result<PutSolution> {
        let starts = self.starts();
        #[cfg(feature = "parallel")]
        let results: Vec<Result<PutSolution>> = {
            use rayon::prelude::*;
            starts.par_iter().map(|s| self.newton(s)).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let results: Vec<Result<PutSolution>> = starts.iter().map(|s| self.newton(s)).collect();

        let mut best: Option<PutSolution> = None;
        let mut trace = Vec::new();
        for (start, res) in starts.iter().zip(results) {
            match res {
                Ok(sol) if self.dominates_payoff(&sol) => {
                    let better = match &best {
                        None => true,
                        Some(b) => sol.max_smooth_fit_residual() < b.max_smooth_fit_residual(),
                    };
                    if better {
                        best = Some(sol);
                    }
                }
                Ok(sol) => trace.push(sol.smooth_fit),
                Err(Error::Optimization { trace: t, .. }) => trace.extend(t.last().cloned()),
                Err(Error::Invalid(msg)) => return Err(Error::Invalid(format!("start {start:?}: {msg}"))),
                Err(_) => {}
            }
        }
        best.ok_or_else(|| Error::Optimization {
            message: format!("no exercise levels below log K satisfy smooth fit from {} starts", starts.len()),
            trace,
        })
    }
}

pub fn price_given_levels(m: &ModelSpec, strike: f64, k: &[f64]) -> Result<PutSolution> {
    PutPricer::new(m, strike)?.price_given_levels(k)
}

pub fn solve_optimal(m: &ModelSpec, strike: f64) -> Result<PutSolution> {
    PutPricer::new(m, strike)?.solve_optimal()
}
