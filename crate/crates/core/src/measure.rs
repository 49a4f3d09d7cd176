//! Structure-preserving equivalent martingale measure by exponential tilting.
//!
//! Regime `i` is tilted by `exp(a_i x)` where `kappa_i(a_i + 1) = r_i + kappa_i(a_i)`;
//! the regime chain is reweighted by the Perron-Frobenius vector `h` of
//! `G + diag(kappa_i(a_i))`.

use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};
use crate::model::{ModelSpec, RegimeParams};
use crate::phase_type::{DoublePhaseType, TiltSign, MGF_MARGIN};

#[derive(Debug, Clone, PartialEq)]
pub struct TiltSolution {
    pub a: Vec<f64>,
    pub h: Vec<f64>,
    pub lam: f64,
}

/// Root of `kappa(a + 1) - kappa(a) - r` for one regime. The map is strictly
/// increasing, so a bracket plus safeguarded Newton suffices.
fn tilt_exponent(reg: &RegimeParams, i: usize) -> Result<f64> {
    let (lo, hi) = reg.strip();
    let lo = lo + 2.0 * MGF_MARGIN;
    let hi = hi - 1.0 - 2.0 * MGF_MARGIN;
    if !(lo < hi) {
        return Err(Error::Precondition(format!(
            "regime {i}: the transform strip is narrower than 1, no equivalent martingale measure"
        )));
    }
    let phi = |a: f64| -> Result<f64> { Ok(reg.kappa(a + 1.0)? - reg.kappa(a)? - reg.r) };
    let dphi = |a: f64| -> Result<f64> { Ok(reg.kappa_derivative(a + 1.0)? - reg.kappa_derivative(a)?) };

    let start =
        if lo.is_finite() && hi.is_finite() { 0.5 * (lo + hi) } else { 0.0_f64.clamp(lo.max(-1e300), hi.min(1e300)) };
    let mut a_lo = start;
    let mut a_hi = start;
    let mut step = 1.0;
    while phi(a_lo)? > 0.0 {
        a_lo = if lo.is_finite() { 0.5 * (a_lo + lo) } else { a_lo - step };
        step *= 2.0;
        if step > 1e12 || (lo.is_finite() && a_lo - lo < 1e-15) {
            return Err(Error::Precondition(format!("regime {i}: no tilt exponent in the strip")));
        }
    }
    step = 1.0;
    while phi(a_hi)? < 0.0 {
        a_hi = if hi.is_finite() { 0.5 * (a_hi + hi) } else { a_hi + step };
        step *= 2.0;
        if step > 1e12 || (hi.is_finite() && hi - a_hi < 1e-15) {
            return Err(Error::Precondition(format!("regime {i}: no tilt exponent in the strip")));
        }
    }

    let mut a = 0.5 * (a_lo + a_hi);
    for _ in 0..200 {
        let f = phi(a)?;
        if f.abs() < 1e-14 {
            return Ok(a);
        }
        if f < 0.0 {
            a_lo = a;
        } else {
            a_hi = a;
        }
        let d = dphi(a)?;
        let newton = a - f / d;
        a = if d > 0.0 && newton > a_lo && newton < a_hi { newton } else { 0.5 * (a_lo + a_hi) };
        if a_hi - a_lo < 1e-15 * (1.0 + a.abs()) {
            break;
        }
    }
    if phi(a)?.abs() < 1e-12 {
        Ok(a)
    } else {
        Err(Error::numerical(format!("regime {i}: tilt exponent did not converge")))
    }
}

pub fn solve_tilt_exponents(m: &ModelSpec) -> Result<Vec<f64>> {
    m.martingale_residuals()?;
    m.regimes().iter().enumerate().map(|(i, r)| tilt_exponent(r, i)).collect()
}

/// Perron-Frobenius eigenpair of a Metzler matrix with irreducible pattern,
/// by power iteration on the nonnegative shift. `h` is normalized to sum 1.
pub fn perron_frobenius(k: &Mat) -> Result<(f64, Vector)> {
    let n = k.nrows();
    let shift = (0..n).map(|i| k[(i, i)].abs()).fold(0.0, f64::max) + 1.0;
    let m = k + Mat::identity(n, n) * shift;
    let mut v = Vector::from_element(n, 1.0 / n as f64);
    let mut lam = 0.0;
    for _ in 0..100_000 {
        let w = &m * &v;
        let s = w.sum();
        let next = w / s;
        let diff = (&next - &v).amax();
        v = next;
        lam = s;
        if diff < 1e-15 {
            break;
        }
    }
    let lam = lam - shift;
    if v.iter().any(|x| !(*x > 0.0)) {
        return Err(Error::numerical("Perron-Frobenius vector has a non-positive entry"));
    }
    let res = (k * &v - &v * lam).amax();
    if res > 1e-10 * (1.0 + lam.abs()) {
        return Err(Error::numerical(format!("Perron-Frobenius residual {res:.3e}")));
    }
    Ok((lam, v))
}

pub fn tilt_solution(m: &ModelSpec) -> Result<TiltSolution> {
    let a = solve_tilt_exponents(m)?;
    let mut k = m.generator().clone();
    for (i, reg) in m.regimes().iter().enumerate() {
        k[(i, i)] += reg.kappa(a[i])?;
    }
    let (lam, h) = perron_frobenius(&k)?;
    Ok(TiltSolution { a, h: h.iter().copied().collect(), lam })
}

/// The model under the tilted measure.
pub fn to_emm(m: &ModelSpec) -> Result<ModelSpec> {
    let tilt = tilt_solution(m)?;
    let n = m.n_regimes();
    let g = m.generator();
    let mut gs = Mat::zeros(n, n);
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            if i != j {
                gs[(i, j)] = g[(i, j)] * tilt.h[j] / tilt.h[i];
                row += gs[(i, j)];
            }
        }
        gs[(i, i)] = -row;
    }

    let mut regimes = Vec::with_capacity(n);
    for (i, reg) in m.regimes().iter().enumerate() {
        let a = tilt.a[i];
        let mut out = reg.clone();
        if let Some(j) = &reg.jumps {
            let (lp, lm) = reg.jump_rates();
            let plus = match j.plus() {
                Some(d) => Some((lp * d.mgf(a)?, d.tilt(a, TiltSign::Plus)?)),
                None => None,
            };
            let minus = match j.minus() {
                Some(d) => Some((lm * d.mgf(-a)?, d.tilt(a, TiltSign::Minus)?)),
                None => None,
            };
            let lp_star = plus.as_ref().map_or(0.0, |p| p.0);
            let lm_star = minus.as_ref().map_or(0.0, |p| p.0);
            let lambda = lp_star + lm_star;
            let p = if j.minus().is_none() {
                1.0
            } else if j.plus().is_none() {
                0.0
            } else {
                lp_star / lambda
            };
            out.lambda = lambda;
            out.jumps = Some(DoublePhaseType::new(p, plus.map(|x| x.1), minus.map(|x| x.1))?);
        }
        // Drift fixed by the martingale restriction under the new jump law.
        let jump_term = match &out.jumps {
            Some(j) => out.lambda * (j.mgf(1.0)? - 1.0),
            None => 0.0,
        };
        out.mu = reg.r - 0.5 * reg.sigma * reg.sigma - jump_term;
        regimes.push(out);
    }
    ModelSpec::new(gs, regimes, m.x0, m.z0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase_type::PhaseType;

    #[test]
    fn scalar_diffusion_exponent() {
        let m = ModelSpec::new(Mat::zeros(1, 1), vec![RegimeParams::diffusion(0.05, 0.12, 0.3)], 0.0, 0).unwrap();
        let a = solve_tilt_exponents(&m).unwrap()[0];
        assert!((a - ((0.05 - 0.12) / 0.09 - 0.5)).abs() < 1e-12);
        let q = to_emm(&m).unwrap();
        assert!((q.regime(0).mu - (0.05 - 0.045)).abs() < 1e-14);
    }

    #[test]
    fn risk_neutral_is_fixed_point() {
        let jumps = DoublePhaseType::only_down(PhaseType::exponential(3.0).unwrap());
        let mut reg = RegimeParams::with_jumps(0.03, 0.0, 0.2, 0.7, jumps);
        reg.mu -= reg.kappa(1.0).unwrap() - reg.r;
        let g = Mat::from_row_slice(2, 2, &[-0.4, 0.4, 0.9, -0.9]);
        let m = ModelSpec::new(g, vec![RegimeParams::diffusion(0.05, 0.005, 0.3), reg], 0.0, 0).unwrap();
        let a = solve_tilt_exponents(&m).unwrap();
        assert!(a.iter().all(|x| x.abs() < 1e-12));
        let q = to_emm(&m).unwrap();
        assert!((q.generator() - m.generator()).amax() < 1e-12);
        assert!((q.regime(1).mu - m.regime(1).mu).abs() < 1e-12);
    }

    #[test]
    fn tilted_drift_matches_girsanov() {
        let jumps = DoublePhaseType::new(
            0.4,
            Some(PhaseType::erlang(2, 8.0).unwrap()),
            Some(PhaseType::exponential(3.0).unwrap()),
        )
        .unwrap();
        let reg = RegimeParams::with_jumps(0.04, 0.09, 0.25, 1.1, jumps);
        let g = Mat::from_row_slice(2, 2, &[-0.5, 0.5, 0.3, -0.3]);
        let m = ModelSpec::new(g, vec![RegimeParams::diffusion(0.02, -0.03, 0.2), reg.clone()], 0.0, 0).unwrap();
        let tilt = tilt_solution(&m).unwrap();
        let q = to_emm(&m).unwrap();
        for i in 0..2 {
            let want = m.regime(i).mu + tilt.a[i] * m.regime(i).sigma.powi(2);
            assert!((q.regime(i).mu - want).abs() < 1e-10);
        }
        assert!(q.martingale_residuals().unwrap().iter().all(|r| r.abs() < 1e-12));
    }
}
