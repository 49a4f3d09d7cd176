//! Regime-switching jump-diffusion model for the log-price.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};
use crate::phase_type::{DoublePhaseType, PhaseType};

/// Tolerance for declaring a model risk-neutral.
pub const RISK_NEUTRAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeParams {
    pub r: f64,
    pub mu: f64,
    pub sigma: f64,
    pub lambda: f64,
    /// Present iff `lambda > 0`.
    pub jumps: Option<DoublePhaseType>,
}

impl RegimeParams {
    pub fn diffusion(r: f64, mu: f64, sigma: f64) -> Self {
        RegimeParams { r, mu, sigma, lambda: 0.0, jumps: None }
    }

    pub fn with_jumps(r: f64, mu: f64, sigma: f64, lambda: f64, jumps: DoublePhaseType) -> Self {
        RegimeParams { r, mu, sigma, lambda, jumps: Some(jumps) }
    }

    fn validate(&self, i: usize) -> Result<()> {
        let finite = [self.r, self.mu, self.sigma, self.lambda].iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid(format!("regime {i}: parameters must be finite")));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::invalid(format!("regime {i}: sigma must be positive")));
        }
        if self.r < 0.0 {
            return Err(Error::invalid(format!("regime {i}: r must be nonnegative")));
        }
        if self.lambda < 0.0 {
            return Err(Error::invalid(format!("regime {i}: lambda must be nonnegative")));
        }
        if self.lambda > 0.0 && self.jumps.is_none() {
            return Err(Error::invalid(format!("regime {i}: lambda > 0 requires a jump law")));
        }
        if self.lambda == 0.0 && self.jumps.is_some() {
            return Err(Error::invalid(format!("regime {i}: jump law given with lambda = 0")));
        }
        Ok(())
    }

    /// Upward and downward jump intensities.
    pub fn jump_rates(&self) -> (f64, f64) {
        match &self.jumps {
            Some(j) => (self.lambda * j.p(), self.lambda * (1.0 - j.p())),
            None => (0.0, 0.0),
        }
    }

    /// Laplace exponent `kappa(s) = mu s + sigma^2 s^2 / 2 + lambda (F(s) - 1)`.
    pub fn kappa(&self, s: f64) -> Result<f64> {
        let jump = match &self.jumps {
            Some(j) => self.lambda * (j.mgf(s)? - 1.0),
            None => 0.0,
        };
        Ok(self.mu * s + 0.5 * self.sigma * self.sigma * s * s + jump)
    }

    pub fn kappa_derivative(&self, s: f64) -> Result<f64> {
        let jump = match &self.jumps {
            Some(j) => self.lambda * j.mgf_derivative(s)?,
            None => 0.0,
        };
        Ok(self.mu + self.sigma * self.sigma * s + jump)
    }

    /// Open interval on which `kappa` is finite.
    pub fn strip(&self) -> (f64, f64) {
        match &self.jumps {
            Some(j) => j.strip(),
            None => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelRepr", into = "ModelRepr")]
pub struct ModelSpec {
    g: Mat,
    regimes: Vec<RegimeParams>,
    pub x0: f64,
    pub z0: usize,
}

impl ModelSpec {
    pub fn new(g: Mat, regimes: Vec<RegimeParams>, x0: f64, z0: usize) -> Result<Self> {
        let n = regimes.len();
        if n == 0 {
            return Err(Error::invalid("model needs at least one regime"));
        }
        if g.nrows() != n || g.ncols() != n {
            return Err(Error::invalid(format!("G must be {n}x{n} to match the regimes")));
        }
        validate_generator(&g)?;
        for (i, r) in regimes.iter().enumerate() {
            r.validate(i)?;
        }
        if !x0.is_finite() {
            return Err(Error::invalid("x0 must be finite"));
        }
        if z0 >= n {
            return Err(Error::invalid(format!("z0 = {z0} is not a regime index")));
        }
        Ok(ModelSpec { g, regimes, x0, z0 })
    }

    pub fn n_regimes(&self) -> usize {
        self.regimes.len()
    }

    pub fn generator(&self) -> &Mat {
        &self.g
    }

    pub fn regimes(&self) -> &[RegimeParams] {
        &self.regimes
    }

    pub fn regime(&self, i: usize) -> &RegimeParams {
        &self.regimes[i]
    }

    pub fn rates(&self) -> Vector {
        Vector::from_iterator(self.n_regimes(), self.regimes.iter().map(|r| r.r))
    }

    /// Per-regime `sigma^2/2 + mu + lambda (F(1) - 1) - r`.
    pub fn martingale_residuals(&self) -> Result<Vec<f64>> {
        self.regimes
            .iter()
            .enumerate()
            .map(|(i, reg)| {
                reg.kappa(1.0).map(|k| k - reg.r).map_err(|_| {
                    Error::Divergence(format!(
                        "regime {i}: E[S_1] is infinite (upward jumps too heavy for the unit transform)"
                    ))
                })
            })
            .collect()
    }

    pub fn is_risk_neutral(&self) -> bool {
        self.martingale_residuals().map(|r| r.iter().all(|v| v.abs() < RISK_NEUTRAL_TOL)).unwrap_or(false)
    }

    /// `G + diag(kappa_i(s))`.
    pub fn characteristic_matrix(&self, s: f64) -> Result<Mat> {
        let mut k = self.g.clone();
        for (i, reg) in self.regimes.iter().enumerate() {
            k[(i, i)] += reg
                .kappa(s)
                .map_err(|_| Error::Divergence(format!("regime {i}: transform at s = {s} is outside its strip")))?;
        }
        Ok(k)
    }

    /// Resets each drift so that the discounted price is a martingale.
    pub fn with_projected_drift(&self) -> Result<ModelSpec> {
        let res = self.martingale_residuals()?;
        let mut out = self.clone();
        for (reg, d) in out.regimes.iter_mut().zip(res) {
            reg.mu -= d;
        }
        Ok(out)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| {
            let msg = e.to_string();
            Error::invalid(format!("model JSON: {}", msg.trim_start_matches("invalid input: ")))
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }
}

/// Checks the intensity-matrix structure and irreducibility of `G`.
pub fn validate_generator(g: &Mat) -> Result<()> {
    let n = g.nrows();
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("G has non-finite entries"));
    }
    let scale = g.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(1.0);
    for i in 0..n {
        for j in 0..n {
            if i != j && g[(i, j)] < 0.0 {
                return Err(Error::invalid(format!("G[{i}][{j}] off-diagonal is negative")));
            }
        }
        let row: f64 = g.row(i).sum();
        if row.abs() > 1e-12 * scale {
            return Err(Error::invalid(format!("G row {i} sums to {row}, expected 0")));
        }
    }
    // Irreducibility: every state reaches every other state.
    for start in 0..n {
        let mut seen = vec![false; n];
        seen[start] = true;
        let mut stack = vec![start];
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if !seen[j] && g[(i, j)] > 0.0 {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        if let Some(j) = seen.iter().position(|s| !s) {
            return Err(Error::invalid(format!("G is not irreducible: regime {j} is unreachable from regime {start}")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PutContract {
    strike: f64,
}

impl PutContract {
    pub fn new(strike: f64) -> Result<Self> {
        if !(strike > 0.0) || !strike.is_finite() {
            return Err(Error::invalid(format!("strike must be positive, got {strike}")));
        }
        Ok(PutContract { strike })
    }

    pub fn strike(&self) -> f64 {
        self.strike
    }
}

#[derive(Serialize, Deserialize)]
struct RegimeRepr {
    r: f64,
    mu: f64,
    sigma: f64,
    #[serde(default)]
    lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ph_plus: Option<PhaseType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ph_minus: Option<PhaseType>,
}

#[derive(Serialize, Deserialize)]
struct ModelRepr {
    #[serde(rename = "G")]
    g: Vec<Vec<f64>>,
    regimes: Vec<RegimeRepr>,
    #[serde(default)]
    x0: f64,
    #[serde(default)]
    z0: usize,
}

impl TryFrom<ModelRepr> for ModelSpec {
    type Error = Error;

    fn try_from(m: ModelRepr) -> Result<Self> {
        let n = m.g.len();
        if m.g.iter().any(|row| row.len() != n) {
            return Err(Error::invalid("G must be square"));
        }
        let g = Mat::from_fn(n, n, |i, j| m.g[i][j]);
        let mut regimes = Vec::with_capacity(m.regimes.len());
        for (i, r) in m.regimes.into_iter().enumerate() {
            let jumps = if r.lambda > 0.0 {
                let p = match (r.p, &r.ph_plus, &r.ph_minus) {
                    (Some(p), _, _) => p,
                    (None, Some(_), None) => 1.0,
                    (None, None, Some(_)) => 0.0,
                    _ => return Err(Error::invalid(format!("regime {i}: p is required"))),
                };
                Some(
                    DoublePhaseType::new(p, r.ph_plus, r.ph_minus)
                        .map_err(|e| Error::invalid(format!("regime {i}: {e}")))?,
                )
            } else {
                None
            };
            regimes.push(RegimeParams { r: r.r, mu: r.mu, sigma: r.sigma, lambda: r.lambda, jumps });
        }
        ModelSpec::new(g, regimes, m.x0, m.z0)
    }
}

impl From<ModelSpec> for ModelRepr {
    fn from(m: ModelSpec) -> Self {
        let n = m.n_regimes();
        ModelRepr {
            g: (0..n).map(|i| (0..n).map(|j| m.g[(i, j)]).collect()).collect(),
            regimes: m
                .regimes
                .into_iter()
                .map(|r| {
                    let (p, ph_plus, ph_minus) = match r.jumps {
                        Some(j) => (Some(j.p()), j.plus().cloned(), j.minus().cloned()),
                        None => (None, None, None),
                    };
                    RegimeRepr { r: r.r, mu: r.mu, sigma: r.sigma, lambda: r.lambda, p, ph_plus, ph_minus }
                })
                .collect(),
            x0: m.x0,
            z0: m.z0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_regime(mu: f64) -> ModelSpec {
        ModelSpec::new(Mat::zeros(1, 1), vec![RegimeParams::diffusion(0.05, mu, 0.3)], 0.0, 0).unwrap()
    }

    #[test]
    fn martingale_residual_examples() {
        assert!(one_regime(0.005).martingale_residuals().unwrap()[0].abs() < 1e-16);
        let r = one_regime(0.015).martingale_residuals().unwrap()[0];
        assert!((r - 0.01).abs() < 1e-15);
    }

    #[test]
    fn negative_exponential_jumps_residual() {
        let alpha = 3.0;
        let jumps = DoublePhaseType::only_down(PhaseType::exponential(alpha).unwrap());
        let (r, s, lam) = (0.04, 0.25, 0.5);
        let mu = r - s * s / 2.0 - lam * (alpha / (alpha + 1.0) - 1.0);
        let reg = RegimeParams::with_jumps(r, mu, s, lam, jumps);
        let m = ModelSpec::new(Mat::zeros(1, 1), vec![reg], 0.0, 0).unwrap();
        assert!(m.martingale_residuals().unwrap()[0].abs() < 1e-15);
    }

    #[test]
    fn characteristic_matrix_at_zero_is_g() {
        let g = Mat::from_row_slice(2, 2, &[-1.0, 1.0, 2.0, -2.0]);
        let m = ModelSpec::new(
            g.clone(),
            vec![RegimeParams::diffusion(0.1, 0.0, 0.2), RegimeParams::diffusion(0.0, 0.1, 0.4)],
            0.0,
            0,
        )
        .unwrap();
        assert_eq!(m.characteristic_matrix(0.0).unwrap(), g);
        let k = m.characteristic_matrix(2.0).unwrap();
        assert!((k[(1, 1)] - (-2.0 + 0.2 + 0.5 * 0.16 * 4.0)).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_generator_naming_row() {
        let g = Mat::from_row_slice(2, 2, &[-1.0, 1.0, 2.0, -1.0]);
        let err = ModelSpec::new(
            g,
            vec![RegimeParams::diffusion(0.1, 0.0, 0.2), RegimeParams::diffusion(0.1, 0.0, 0.2)],
            0.0,
            0,
        )
        .unwrap_err();
        assert!(err.to_string().contains("row 1"), "{err}");
    }

    #[test]
    fn rejects_reducible_generator() {
        let g = Mat::from_row_slice(2, 2, &[-1.0, 1.0, 0.0, 0.0]);
        let regs = vec![RegimeParams::diffusion(0.1, 0.0, 0.2), RegimeParams::diffusion(0.1, 0.0, 0.2)];
        assert!(ModelSpec::new(g, regs, 0.0, 0).is_err());
    }

    #[test]
    fn json_round_trip() {
        let json = r#"{"G": [[-0.5, 0.5], [1.0, -1.0]],
            "regimes": [
              {"r": 0.05, "mu": 0.005, "sigma": 0.3},
              {"r": 0.03, "mu": 0.01, "sigma": 0.2, "lambda": 0.8, "p": 0.0,
               "ph_minus": {"alpha": [1.0], "T": [[-4.0]]}}],
            "x0": 0.0, "z0": 1}"#;
        let m = ModelSpec::from_json(json).unwrap();
        assert_eq!(m.regime(1).jump_rates(), (0.0, 0.8));
        let back = ModelSpec::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn kappa_is_convex() {
        let jumps = DoublePhaseType::new(
            0.3,
            Some(PhaseType::erlang(2, 6.0).unwrap()),
            Some(PhaseType::exponential(2.0).unwrap()),
        )
        .unwrap();
        let reg = RegimeParams::with_jumps(0.05, 0.01, 0.2, 1.2, jumps);
        let h = 1e-3;
        for s in [-1.0, -0.3, 0.0, 0.8, 2.0] {
            let d2 = reg.kappa(s + h).unwrap() - 2.0 * reg.kappa(s).unwrap() + reg.kappa(s - h).unwrap();
            assert!(d2 > 0.0);
        }
    }
}
