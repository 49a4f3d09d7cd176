//! Exit operators of the fluid embedding: one-sided passage `Phi+-`, two-sided
//! exit from `[k, l]` (`Psi+`, `Psi-`), the killed-before-exit functional
//! `Psi0`, and Gerber-Shiu penalty functions.

use crate::embedding::{FluidEmbedding, StateKind};
use crate::error::{Error, Result};
use crate::linalg::{condition_number, expm, inverse, Mat, Vector};
use crate::model::ModelSpec;
use crate::quad::integrate_to_infinity;
use crate::wiener_hopf::WHFactorization;

/// Above this condition number the exit system is reported as degenerate.
pub const MAX_CONDITION: f64 = 1e12;

/// `Phi-_l(x) = W- exp(Q- (x - l))` for `x >= l`.
pub fn phi_minus(f: &WHFactorization, l: f64, x: f64) -> Result<Mat> {
    if !(x >= l) {
        return Err(Error::Domain(format!("down-passage needs x >= level, got x = {x} < {l}")));
    }
    Ok(f.w_minus() * expm(&f.q_minus, x - l))
}

/// `Phi+_l(x) = W+ exp(Q+ (l - x))` for `x <= l`.
pub fn phi_plus(f: &WHFactorization, l: f64, x: f64) -> Result<Mat> {
    if !(x <= l) {
        return Err(Error::Domain(format!("up-passage needs x <= level, got x = {x} > {l}")));
    }
    Ok(f.w_plus() * expm(&f.q_plus, l - x))
}

/// x-derivative of `phi_minus`.
pub fn phi_minus_derivative(f: &WHFactorization, l: f64, x: f64) -> Result<Mat> {
    if !(x >= l) {
        return Err(Error::Domain(format!("down-passage needs x >= level, got x = {x} < {l}")));
    }
    Ok(f.w_minus() * &f.q_minus * expm(&f.q_minus, x - l))
}

/// Checks `s_i^2 b^2 c + m_i b < -q_ii` for every state.
pub(crate) fn check_moment_condition(fe: &FluidEmbedding, b: f64, c: f64) -> Result<()> {
    for i in 0..fe.len() {
        let lhs = c * fe.vol[i] * fe.vol[i] * b * b + fe.drift[i] * b;
        if !(lhs < -fe.q[(i, i)]) {
            return Err(Error::Precondition(format!(
                "exponent b = {b} is too large for state {i} ({:?}): {lhs:.6} >= {:.6}",
                fe.states.kind(i),
                -fe.q[(i, i)]
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct ExitOperator {
    k: f64,
    l: f64,
    fe: FluidEmbedding,
    w_plus: Mat,
    w_minus: Mat,
    q_plus: Mat,
    q_minus: Mat,
    z_plus: Mat,
    z_minus: Mat,
    inv_plus: Mat,
    inv_minus: Mat,
    condition: f64,
}

impl ExitOperator {
    pub fn new(fe: &FluidEmbedding, f: &WHFactorization, k: f64, l: f64) -> Result<Self> {
        if !(k < l) || !k.is_finite() || !l.is_finite() {
            return Err(Error::Domain(format!("exit interval needs finite k < l, got [{k}, {l}]")));
        }
        let st = &fe.states;
        let w_plus = f.w_plus();
        let w_minus = f.w_minus();
        let ep = expm(&f.q_plus, l - k);
        let em = expm(&f.q_minus, l - k);
        let down = st.down_coords();
        let up = st.up_coords();
        let z_plus = crate::linalg::select(&(&w_plus * &ep), &down, &(0..ep.ncols()).collect::<Vec<_>>());
        let z_minus = crate::linalg::select(&(&w_minus * &em), &up, &(0..em.ncols()).collect::<Vec<_>>());
        let n0p = up.len();
        let n0m = down.len();
        let a_plus = Mat::identity(n0p, n0p) - &z_minus * &z_plus;
        let a_minus = Mat::identity(n0m, n0m) - &z_plus * &z_minus;
        let condition = condition_number(&a_plus).max(condition_number(&a_minus));
        if condition > MAX_CONDITION {
            return Err(Error::Singular { what: format!("two-sided exit system on [{k}, {l}]"), condition });
        }
        Ok(ExitOperator {
            k,
            l,
            fe: fe.clone(),
            w_plus,
            w_minus,
            q_plus: f.q_plus.clone(),
            q_minus: f.q_minus.clone(),
            z_plus,
            z_minus,
            inv_plus: inverse(&a_plus, "I - Z-Z+")?,
            inv_minus: inverse(&a_minus, "I - Z+Z-")?,
            condition,
        })
    }

    pub fn lower(&self) -> f64 {
        self.k
    }

    pub fn upper(&self) -> f64 {
        self.l
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    pub fn embedding(&self) -> &FluidEmbedding {
        &self.fe
    }

    fn check(&self, x: f64) -> Result<()> {
        if x < self.k || x > self.l || !x.is_finite() {
            return Err(Error::Domain(format!("x = {x} is outside [{}, {}]", self.k, self.l)));
        }
        Ok(())
    }

    fn parts(&self, x: f64) -> (Mat, Mat) {
        (&self.w_plus * expm(&self.q_plus, self.l - x), &self.w_minus * expm(&self.q_minus, x - self.k))
    }

    /// Discounted exit law through the upper boundary, over `E+ u E0`.
    pub fn psi_plus(&self, x: f64) -> Result<Mat> {
        self.check(x)?;
        let (up, down) = self.parts(x);
        Ok((up - down * &self.z_plus) * &self.inv_plus)
    }

    /// Discounted exit law through the lower boundary, over `E0 u E-`.
    pub fn psi_minus(&self, x: f64) -> Result<Mat> {
        self.check(x)?;
        let (up, down) = self.parts(x);
        Ok((down - up * &self.z_minus) * &self.inv_minus)
    }

    pub fn psi_plus_derivative(&self, x: f64) -> Result<Mat> {
        self.check(x)?;
        let up = &self.w_plus * &self.q_plus * expm(&self.q_plus, self.l - x);
        let down = &self.w_minus * &self.q_minus * expm(&self.q_minus, x - self.k);
        Ok((-up - down * &self.z_plus) * &self.inv_plus)
    }

    pub fn psi_minus_derivative(&self, x: f64) -> Result<Mat> {
        self.check(x)?;
        let up = &self.w_plus * &self.q_plus * expm(&self.q_plus, self.l - x);
        let down = &self.w_minus * &self.q_minus * expm(&self.q_minus, x - self.k);
        Ok((down + up * &self.z_minus) * &self.inv_minus)
    }

    /// `Psi0(b, x)`: applied to a payoff-rate vector it gives the expected value
    /// of `exp(b A)` at killing before exit.
    pub fn psi_circ(&self, b: f64, x: f64) -> Result<Mat> {
        check_moment_condition(&self.fe, b, 1.0)?;
        self.psi_circ_unchecked(b, x)
    }

    pub(crate) fn psi_circ_unchecked(&self, b: f64, x: f64) -> Result<Mat> {
        let e = self.fe.len();
        let kinv = inverse(&(-self.fe.characteristic(b)), "K(b)")?;
        let mut m = Mat::identity(e, e) * (b * x).exp();
        let pp = self.psi_plus(x)? * (b * self.l).exp();
        let pm = self.psi_minus(x)? * (b * self.k).exp();
        let n0p = pp.ncols();
        let off = self.fe.states.n_plus();
        for j in 0..n0p {
            for i in 0..e {
                m[(i, j)] -= pp[(i, j)];
            }
        }
        for j in 0..pm.ncols() {
            for i in 0..e {
                m[(i, off + j)] -= pm[(i, j)];
            }
        }
        Ok(m * kinv)
    }

    pub(crate) fn psi_circ_derivative_unchecked(&self, b: f64, x: f64) -> Result<Mat> {
        let e = self.fe.len();
        let kinv = inverse(&(-self.fe.characteristic(b)), "K(b)")?;
        let mut m = Mat::identity(e, e) * (b * (b * x).exp());
        let pp = self.psi_plus_derivative(x)? * (b * self.l).exp();
        let pm = self.psi_minus_derivative(x)? * (b * self.k).exp();
        let off = self.fe.states.n_plus();
        for j in 0..pp.ncols() {
            for i in 0..e {
                m[(i, j)] -= pp[(i, j)];
            }
        }
        for j in 0..pm.ncols() {
            for i in 0..e {
                m[(i, off + j)] -= pm[(i, j)];
            }
        }
        Ok(m * kinv)
    }
}

/// Penalty at ruin as a function of the (non-positive) position and regime.
pub enum Penalty<'a> {
    One,
    /// Indicator of ruin in the given regime.
    Regime(usize),
    /// `pi(y, m) = exp(theta y)`.
    Exp(f64),
    Custom(&'a dyn Fn(f64, usize) -> f64),
}

/// Penalty vector over `E0 u E-`: the conditional expected penalty given the
/// down-ladder state at the crossing of 0.
pub fn penalty_vector(model: &ModelSpec, fe: &FluidEmbedding, penalty: &Penalty) -> Result<Vector> {
    let phases = |r: usize| -> Option<(Mat, Vector)> {
        let d = model.regime(r).jumps.as_ref()?.minus()?;
        Some((d.generator().clone(), d.exit_rates().clone()))
    };
    let down = fe.states.down_coords();
    let mut g = Vector::zeros(down.len());
    for (k, &s) in down.iter().enumerate() {
        let regime = fe.states.owner(s);
        g[k] = match fe.states.kind(s) {
            StateKind::Regime(_) => match penalty {
                Penalty::One | Penalty::Exp(_) => 1.0,
                Penalty::Regime(j) => f64::from(u8::from(*j == regime)),
                Penalty::Custom(f) => f(0.0, regime),
            },
            StateKind::Minus { phase, .. } => {
                let (t, exit) = phases(regime).ok_or_else(|| Error::invalid("missing phase law"))?;
                match penalty {
                    Penalty::One => 1.0,
                    Penalty::Regime(j) => f64::from(u8::from(*j == regime)),
                    Penalty::Exp(theta) => {
                        let m = t.nrows();
                        let a = Mat::identity(m, m) * *theta - &t;
                        let abscissa =
                            -crate::linalg::eigenvalues(&t)?.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
                        if !(*theta > -abscissa) {
                            return Err(Error::Divergence(format!(
                                "penalty exp({theta} y) is not integrable against the overshoot law"
                            )));
                        }
                        crate::linalg::solve_vec(&a, &exit, "penalty resolvent")?[phase]
                    }
                    Penalty::Custom(f) => {
                        let dens = |u: f64| {
                            let row = expm(&t, u).row(phase) * &exit;
                            row[0]
                        };
                        let v = integrate_to_infinity(|u| f(-u, regime) * dens(u), 0.0, 1e-10);
                        if !v.is_finite() {
                            return Err(Error::Divergence("penalty is not integrable".into()));
                        }
                        v
                    }
                }
            }
            StateKind::Plus { .. } => unreachable!("down coordinates exclude E+"),
        };
    }
    Ok(g)
}

/// Expected discounted penalty at the first passage below 0, from level
/// `x >= 0` in regime `i`.
pub fn gerber_shiu(
    model: &ModelSpec,
    fe: &FluidEmbedding,
    f: &WHFactorization,
    x: f64,
    i: usize,
    penalty: &Penalty,
) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::Domain(format!("initial surplus must be nonnegative, got {x}")));
    }
    let g = penalty_vector(model, fe, penalty)?;
    let s = fe.states.regime_state(i).ok_or_else(|| Error::invalid(format!("no regime {i}")))?;
    let phi = phi_minus(f, 0.0, x)?;
    Ok((phi.row(s) * g)[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::embed;
    use crate::model::RegimeParams;
    use crate::phase_type::{DoublePhaseType, PhaseType};
    use crate::wiener_hopf::solve_factorization;

    fn jump_model() -> ModelSpec {
        let g = Mat::from_row_slice(2, 2, &[-0.6, 0.6, 0.4, -0.4]);
        let j = DoublePhaseType::new(
            0.3,
            Some(PhaseType::exponential(5.0).unwrap()),
            Some(PhaseType::erlang(2, 4.0).unwrap()),
        )
        .unwrap();
        ModelSpec::new(
            g,
            vec![RegimeParams::diffusion(0.0, 0.05, 0.25), RegimeParams::with_jumps(0.0, -0.02, 0.3, 0.9, j)],
            0.0,
            0,
        )
        .unwrap()
    }

    #[test]
    fn brownian_two_sided_exit() {
        let (mu, sigma) = (0.1, 0.3);
        let m = ModelSpec::new(Mat::zeros(1, 1), vec![RegimeParams::diffusion(0.0, mu, sigma)], 0.0, 0).unwrap();
        let fe = embed(&m, &[0.0]).unwrap();
        let f = solve_factorization(&fe).unwrap();
        let (k, l) = (-0.5, 0.7);
        let op = ExitOperator::new(&fe, &f, k, l).unwrap();
        let gamma = -2.0 * mu / (sigma * sigma);
        for x in [-0.5, -0.2, 0.0, 0.3, 0.7] {
            let want = ((gamma * x).exp() - (gamma * k).exp()) / ((gamma * l).exp() - (gamma * k).exp());
            assert!((op.psi_plus(x).unwrap()[(0, 0)] - want).abs() < 1e-10);
        }
    }

    #[test]
    fn boundary_rows_and_total_probability() {
        let m = jump_model();
        let fe = embed(&m, &[0.05, 0.1]).unwrap();
        let f = solve_factorization(&fe).unwrap();
        let op = ExitOperator::new(&fe, &f, -0.3, 0.4).unwrap();
        let pp = op.psi_plus(0.4).unwrap();
        let pm = op.psi_minus(0.4).unwrap();
        for i in fe.states.up_coords() {
            for j in 0..pp.ncols() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((pp[(i, j)] - want).abs() < 1e-12);
            }
            assert!(pm.row(i).amax() < 1e-12);
        }
        let kill = fe.kill();
        for k in 0..=20 {
            let x = -0.3 + 0.7 * k as f64 / 20.0;
            let total = op.psi_plus(x).unwrap().column_sum()
                + op.psi_minus(x).unwrap().column_sum()
                + op.psi_circ(0.0, x).unwrap() * &kill;
            assert!(total.iter().all(|v| (v - 1.0).abs() < 1e-10), "{total}");
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let m = jump_model();
        let fe = embed(&m, &[0.05, 0.1]).unwrap();
        let f = solve_factorization(&fe).unwrap();
        let op = ExitOperator::new(&fe, &f, -0.3, 0.4).unwrap();
        let h = 1e-5;
        let x = 0.1;
        let fd = (op.psi_plus(x + h).unwrap() - op.psi_plus(x - h).unwrap()) / (2.0 * h);
        assert!((fd - op.psi_plus_derivative(x).unwrap()).amax() < 1e-7);
        let fd = (op.psi_minus(x + h).unwrap() - op.psi_minus(x - h).unwrap()) / (2.0 * h);
        assert!((fd - op.psi_minus_derivative(x).unwrap()).amax() < 1e-7);
        let fd = (op.psi_circ(1.0, x + h).unwrap() - op.psi_circ(1.0, x - h).unwrap()) / (2.0 * h);
        assert!((fd - op.psi_circ_derivative_unchecked(1.0, x).unwrap()).amax() < 1e-7);
    }

    #[test]
    fn two_sided_tends_to_one_sided() {
        let m = jump_model();
        let fe = embed(&m, &[0.05, 0.1]).unwrap();
        let f = solve_factorization(&fe).unwrap();
        let op = ExitOperator::new(&fe, &f, 0.0, 40.5).unwrap();
        let diff = op.psi_minus(0.5).unwrap() - phi_minus(&f, 0.0, 0.5).unwrap();
        assert!(diff.amax() < 1e-6);
    }

    #[test]
    fn ruin_at_zero_is_w_minus_row_sum() {
        let m = jump_model();
        let fe = embed(&m, &[0.0, 0.0]).unwrap();
        let f = solve_factorization(&fe).unwrap();
        let v = gerber_shiu(&m, &fe, &f, 0.0, 1, &Penalty::One).unwrap();
        let s = fe.states.regime_state(1).unwrap();
        assert!((v - f.w_minus().row(s).sum()).abs() < 1e-14);
    }
}
