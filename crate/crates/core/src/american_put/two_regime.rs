//! Closed forms for two regimes: a pure diffusion (regime 0) and a diffusion
//! with exponential downward jumps (regime 1), each killed at its short rate.
//! Everything here is built from scalar roots and 2x2 / 3x3 eigenvector
//! matrices, independent of the general factorization and passage solvers.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{inverse, Mat, Vector};
use crate::model::ModelSpec;
use crate::poly::Poly;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoRegimeParams {
    pub q1: f64,
    pub q2: f64,
    pub r1: f64,
    pub r2: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub lambda: f64,
    /// Rate of the exponential jump size.
    pub alpha: f64,
}

impl TwoRegimeParams {
    /// A jump-free second regime gets a placeholder `alpha = 1`; the jump
    /// state is then unreachable and does not affect regime values.
    pub fn from_model(m: &ModelSpec) -> Result<Self> {
        if m.n_regimes() != 2 {
            return Err(Error::invalid("the two-regime closed form needs exactly two regimes"));
        }
        let (a, b) = (m.regime(0), m.regime(1));
        if a.lambda > 0.0 && a.jumps.is_some() {
            return Err(Error::invalid("regime 0 must be a pure diffusion"));
        }
        let alpha = match (&b.jumps, b.lambda > 0.0) {
            (Some(j), true) => {
                let minus = match (j.plus(), j.minus()) {
                    (None, Some(d)) if d.phases() == 1 => d,
                    _ => return Err(Error::invalid("regime 1 jumps must be downward and exponential")),
                };
                -minus.generator()[(0, 0)]
            }
            _ => 1.0,
        };
        let g = m.generator();
        Ok(TwoRegimeParams {
            q1: g[(0, 1)],
            q2: g[(1, 0)],
            r1: a.r,
            r2: b.r,
            mu1: a.mu,
            mu2: b.mu,
            sigma1: a.sigma,
            sigma2: b.sigma,
            lambda: if b.jumps.is_some() { b.lambda } else { 0.0 },
            alpha,
        })
    }

    fn f(&self, j: usize) -> Poly {
        let (q, r, mu, s) =
            if j == 1 { (self.q1, self.r1, self.mu1, self.sigma1) } else { (self.q2, self.r2, self.mu2, self.sigma2) };
        Poly::new(vec![-q - r, mu, 0.5 * s * s])
    }

    /// `(alpha + theta) F_2(theta) - lambda theta`.
    fn jump_cubic(&self) -> Poly {
        Poly::new(vec![self.alpha, 1.0]).mul(&self.f(2)).add(&Poly::new(vec![0.0, -self.lambda]))
    }

    /// `g(theta) = F_1 ((alpha + theta) F_2 - lambda theta) - q1 q2 (alpha + theta)`.
    pub fn g(&self) -> Poly {
        self.f(1).mul(&self.jump_cubic()).add(&Poly::new(vec![self.alpha, 1.0]).scale(-self.q1 * self.q2))
    }

    /// Kernel vector of the characteristic matrix at a root of `g`.
    fn beta(&self, theta: f64) -> Vector {
        let f1 = self.f(1).eval(theta);
        let v = Vector::from_vec(vec![-self.q1 * (theta + self.alpha), f1 * (theta + self.alpha), self.alpha * f1]);
        if v.amax() > 1e-10 * (1.0 + theta.abs()).powi(3) {
            v
        } else {
            // theta = -alpha with F_1(-alpha) = 0.
            Vector::from_vec(vec![self.lambda, 0.0, -self.q2])
        }
    }
}

fn real_roots(p: &Poly, what: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for z in p.roots()? {
        if z.im.abs() > 1e-9 * z.norm().max(1.0) {
            return Err(Error::numerical(format!("{what} has a complex root {z}")));
        }
        out.push(z.re);
    }
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(out)
}

/// Divides out the linear factor `(theta - root)`.
fn deflate(p: &Poly, root: f64) -> Poly {
    let c = &p.0;
    let n = c.len() - 1;
    let mut q = vec![0.0; n];
    let mut carry = 0.0;
    for i in (0..n).rev() {
        carry = c[i + 1] + carry * root;
        q[i] = carry;
    }
    Poly::new(q)
}

/// The five roots of `g`, ascending: three negative and two positive.
pub fn two_regime_roots(p: &TwoRegimeParams) -> Result<[f64; 5]> {
    if !(p.r1 > 0.0 && p.r2 > 0.0) {
        return Err(Error::Precondition("both short rates must be positive".into()));
    }
    if !(p.sigma1 > 0.0 && p.sigma2 > 0.0) {
        return Err(Error::Precondition("both volatilities must be positive".into()));
    }
    let g = p.g();
    let g0 = g.eval(0.0);
    let want = p.alpha * ((p.q1 + p.r1) * (p.q2 + p.r2) - p.q1 * p.q2);
    debug_assert!((g0 - want).abs() <= 1e-12 * want.abs().max(1.0));
    if !(g0 > 0.0) {
        return Err(Error::numerical(format!("g(0) = {g0} is not positive")));
    }
    let f1_at = p.f(1).eval(-p.alpha);
    let roots = if f1_at.abs() < 1e-12 * (1.0 + p.alpha * p.alpha) {
        let mut r = real_roots(&deflate(&g, -p.alpha), "deflated g")?;
        r.push(-p.alpha);
        r.sort_by(|a, b| a.partial_cmp(b).unwrap());
        r
    } else {
        real_roots(&g, "g")?
    };
    if roots.len() != 5 {
        return Err(Error::numerical(format!("g has {} roots, expected 5", roots.len())));
    }
    let neg = roots.iter().filter(|r| **r < 0.0).count();
    if neg != 3 || roots.windows(2).any(|w| w[1] - w[0] <= 1e-12 * w[1].abs().max(1.0)) {
        return Err(Error::numerical(format!("unexpected root pattern {roots:?}")));
    }
    Ok([roots[0], roots[1], roots[2], roots[3], roots[4]])
}

/// Eigen-decomposed generator: `exp(Q t) = B diag(e^{theta t}) B^{-1}`.
#[derive(Debug, Clone)]
struct Spectral {
    theta: Vec<f64>,
    b: Mat,
    b_inv: Mat,
}

impl Spectral {
    fn new(theta: Vec<f64>, b: Mat) -> Result<Self> {
        let b_inv = inverse(&b, "eigenvector matrix")?;
        Ok(Spectral { theta, b, b_inv })
    }

    fn weighted(&self, w: impl Fn(f64) -> f64) -> Mat {
        let d = Mat::from_diagonal(&Vector::from_iterator(self.theta.len(), self.theta.iter().map(|t| w(*t))));
        &self.b * d * &self.b_inv
    }

    fn generator(&self) -> Mat {
        self.weighted(|t| t)
    }

    fn exp(&self, t: f64) -> Mat {
        self.weighted(|th| (th * t).exp())
    }

    fn exp_derivative(&self, t: f64) -> Mat {
        self.weighted(|th| th * (th * t).exp())
    }
}

/// `Q-` of the killed three-state embedding from its negative roots.
pub fn closed_form_q_minus(p: &TwoRegimeParams) -> Result<Mat> {
    Ok(top_spectral(p)?.generator())
}

fn top_spectral(p: &TwoRegimeParams) -> Result<Spectral> {
    let roots = two_regime_roots(p)?;
    let theta = roots[..3].to_vec();
    let mut b = Mat::zeros(3, 3);
    for (j, th) in theta.iter().enumerate() {
        b.set_column(j, &p.beta(*th));
    }
    Spectral::new(theta, b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TwoRegimeCase {
    /// Both regimes exercise at the same level.
    Equal,
    /// Regime 1 exercises first (higher level).
    SecondHigher,
    /// Regime 0 exercises first.
    FirstHigher,
}

#[derive(Debug, Clone)]
pub struct TwoRegimeClosedForm {
    pub params: TwoRegimeParams,
    pub strike: f64,
    pub roots: [f64; 5],
    pub q_minus: Mat,
    pub case: TwoRegimeCase,
    /// Log exercise levels per regime.
    pub k: [f64; 2],
    /// Value at the upper level of the regime still continuing there.
    pub c: f64,
    /// Value at the upper level of the jump state (only when regime 0 is higher).
    pub d: f64,
    /// Best residual reached in each case, in the order of `TwoRegimeCase`.
    pub case_residuals: [f64; 3],
    top: Spectral,
}

/// Ladder quantities of the jump regime alone, killed at `q2 + r2`.
#[derive(Debug, Clone)]
struct JumpRegime {
    up: f64,
    eta: f64,
    down: Spectral,
}

impl JumpRegime {
    fn new(p: &TwoRegimeParams) -> Result<Self> {
        let roots = real_roots(&p.jump_cubic(), "jump-regime cubic")?;
        let neg: Vec<f64> = roots.iter().copied().filter(|r| *r < 0.0).collect();
        let pos: Vec<f64> = roots.iter().copied().filter(|r| *r > 0.0).collect();
        if neg.len() != 2 || pos.len() != 1 {
            return Err(Error::numerical(format!("jump-regime cubic roots {roots:?}")));
        }
        let mut b = Mat::zeros(2, 2);
        for (j, th) in neg.iter().enumerate() {
            b[(0, j)] = th + p.alpha;
            b[(1, j)] = p.alpha;
        }
        Ok(JumpRegime { up: pos[0], eta: p.alpha / (pos[0] + p.alpha), down: Spectral::new(neg, b)? })
    }
}

/// Scalar two-sided exit for a killed Brownian motion on `[k, l]`.
fn scalar_exit(up: f64, down: f64, k: f64, l: f64, x: f64) -> (f64, f64, f64, f64) {
    // up > 0 > down are the roots; e^{-up (l - x)} and e^{down (x - k)}.
    let a = (-up * (l - x)).exp();
    let b = (down * (x - k)).exp();
    let ea = (-up * (l - k)).exp();
    let eb = (down * (l - k)).exp();
    let den = 1.0 - ea * eb;
    let psi_plus = (a - b * ea) / den;
    let psi_minus = (b - a * eb) / den;
    let dpsi_plus = (up * a - down * b * ea) / den;
    let dpsi_minus = (down * b - up * a * eb) / den;
    (psi_plus, psi_minus, dpsi_plus, dpsi_minus)
}

struct Case2 {
    c: f64,
    residual: [f64; 2],
}

struct Case3 {
    c: f64,
    d: f64,
    residual: [f64; 2],
}

struct Setup {
    p: TwoRegimeParams,
    strike: f64,
    q: Mat,
    ratio: f64,
}

impl Setup {
    /// Exercise value in the jump state: `E[K - e^{k - Y}]`.
    fn jump_payoff(&self, k: f64) -> f64 {
        self.strike - k.exp() * self.ratio
    }

    fn case1(&self) -> Result<[f64; 2]> {
        let d = Vector::from_vec(vec![1.0, 1.0, self.ratio]);
        let q1 = &self.q * Vector::from_element(3, 1.0);
        let qd = &self.q * d;
        let mut k = [0.0; 2];
        for i in 0..2 {
            let arg = self.strike * q1[i] / (qd[i] - 1.0);
            if !(arg > 0.0) {
                return Err(Error::numerical("common exercise level is not defined"));
            }
            k[i] = arg.ln();
        }
        Ok(k)
    }

    /// Regime 1 exercises at `k2 > k1`; regime 0 continues on `(k1, k2]`.
    fn case2(&self, k1: f64, k2: f64) -> Case2 {
        let p = &self.p;
        let big_k = self.strike;
        let f = self.p.f(1);
        let disc = (p.mu1 * p.mu1 + 2.0 * p.sigma1 * p.sigma1 * (p.q1 + p.r1)).sqrt();
        let up = (-p.mu1 + disc) / (p.sigma1 * p.sigma1);
        let down = (-p.mu1 - disc) / (p.sigma1 * p.sigma1);
        debug_assert!(f.eval(up).abs() < 1e-8 * (1.0 + up * up));
        let a1 = p.q1 * big_k / (p.q1 + p.r1);
        let fp = |x: f64| a1 - x.exp();
        let lower = big_k - k1.exp() - fp(k1);
        let (_, _, dpp_u, dpm_u) = scalar_exit(up, down, k1, k2, k2);
        // Band derivative at k2 is affine in C: d0 + dpp_u * C.
        let d0 = -k2.exp() - dpp_u * fp(k2) + dpm_u * lower;
        let rest = self.q[(0, 1)] * (big_k - k2.exp()) + self.q[(0, 2)] * self.jump_payoff(k2);
        let c = (rest - d0) / (dpp_u - self.q[(0, 0)]);
        let (_, _, dpp_l, dpm_l) = scalar_exit(up, down, k1, k2, k1);
        let deriv_k1 = -k1.exp() + dpp_l * (c - fp(k2)) + dpm_l * lower;
        let h = Vector::from_vec(vec![c, big_k - k2.exp(), self.jump_payoff(k2)]);
        let top = (&self.q * h)[1];
        Case2 { c, residual: [deriv_k1 + k1.exp(), top + k2.exp()] }
    }

    /// Regime 0 exercises at `k1 > k2`; regime 1 continues on `(k2, k1]`.
    fn case3(&self, jr: &JumpRegime, k1: f64, k2: f64) -> Case3 {
        let p = &self.p;
        let big_k = self.strike;
        let (k, l) = (k2, k1);
        let a2 = p.q2 * big_k / (p.q2 + p.r2);
        let fp = |x: f64| Vector::from_vec(vec![a2 - x.exp(), a2 - x.exp() * self.ratio]);
        let dfp = |x: f64| Vector::from_vec(vec![-x.exp(), -x.exp() * self.ratio]);
        let w = Vector::from_vec(vec![1.0, jr.eta]);
        let m = Mat::from_row_slice(2, 2, &[1.0, 0.0, jr.eta, 0.0]);
        let e_lk = jr.down.exp(l - k);
        let up_lk = (-jr.up * (l - k)).exp();
        let c_den = 1.0 - (e_lk.row(0) * &w)[0] * up_lk;
        let inv = inverse(&(Mat::identity(2, 2) - &m * e_lk.clone() * up_lk), "two-sided exit").ok();
        let Some(inv) = inv else {
            return Case3 { c: f64::NAN, d: f64::NAN, residual: [f64::NAN; 2] };
        };
        let psi = |x: f64, deriv: bool| -> (Vector, Mat) {
            let up_lx = (-jr.up * (l - x)).exp();
            let (e_xk, s) = if deriv { (jr.down.exp_derivative(x - k), jr.up) } else { (jr.down.exp(x - k), 1.0) };
            let plus = (&w * (s * up_lx) - &e_xk * &w * up_lk) / c_den;
            let minus = (&e_xk - &w * (s * up_lx) * e_lk.row(0)) * &inv;
            (plus, minus)
        };
        let lower = Vector::from_vec(vec![big_k - k.exp(), self.jump_payoff(k)]) - fp(k);
        let band = |x: f64, c: f64, deriv: bool| -> Vector {
            let (pp, pm) = psi(x, deriv);
            let base = if deriv { dfp(x) } else { fp(x) };
            base + pp * (c - fp(l)[0]) + pm * &lower
        };
        let top_h = |c: f64, d: f64| Vector::from_vec(vec![big_k - l.exp(), c, d]);
        // Value continuity in the jump state and derivative continuity in
        // regime 1 at l: both affine in (C, D).
        let eqs = |c: f64, d: f64| -> [f64; 2] {
            let qh = &self.q * top_h(c, d);
            [band(l, c, false)[1] - d, band(l, c, true)[0] - qh[1]]
        };
        let e0 = eqs(0.0, 0.0);
        let ec = eqs(1.0, 0.0);
        let ed = eqs(0.0, 1.0);
        let a = Mat::from_row_slice(2, 2, &[ec[0] - e0[0], ed[0] - e0[0], ec[1] - e0[1], ed[1] - e0[1]]);
        let sol = a.lu().solve(&Vector::from_vec(vec![-e0[0], -e0[1]]));
        let Some(sol) = sol else {
            return Case3 { c: f64::NAN, d: f64::NAN, residual: [f64::NAN; 2] };
        };
        let (c, d) = (sol[0], sol[1]);
        let top = (&self.q * top_h(c, d))[0];
        let deriv_k2 = band(k, c, true)[0];
        Case3 { c, d, residual: [top + l.exp(), deriv_k2 + k.exp()] }
    }
}

/// Damped Newton in two unknowns with a central-difference Jacobian.
fn newton2(
    f: impl Fn([f64; 2]) -> Option<[f64; 2]>,
    x0: [f64; 2],
    valid: impl Fn([f64; 2]) -> bool,
) -> Option<([f64; 2], f64)> {
    let norm = |r: [f64; 2]| r[0].abs().max(r[1].abs());
    let mut x = x0;
    let mut r = f(x)?;
    for _ in 0..100 {
        if norm(r) < 1e-13 {
            break;
        }
        let mut jac = Mat::zeros(2, 2);
        for j in 0..2 {
            let h = 1e-6 * (1.0 + x[j].abs());
            let (mut xp, mut xm) = (x, x);
            xp[j] += h;
            xm[j] -= h;
            let (rp, rm) = (f(xp)?, f(xm)?);
            for i in 0..2 {
                jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
            }
        }
        let step = jac.lu().solve(&Vector::from_vec(vec![-r[0], -r[1]]))?;
        let scale = step.amax() / 0.25;
        let step = if scale > 1.0 { step / scale } else { step };
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..30 {
            let trial = [x[0] + t * step[0], x[1] + t * step[1]];
            if valid(trial) {
                if let Some(rt) = f(trial) {
                    if norm(rt) < norm(r) {
                        x = trial;
                        r = rt;
                        moved = true;
                        break;
                    }
                }
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Some((x, norm(r)))
}

/// Solves the smooth-fit equations in each of the three orderings and returns
/// the consistent one.
pub fn two_regime_closed_form(m: &ModelSpec, strike: f64) -> Result<TwoRegimeClosedForm> {
    let p = TwoRegimeParams::from_model(m)?;
    if !(strike > 0.0) {
        return Err(Error::invalid("strike must be positive"));
    }
    let roots = two_regime_roots(&p)?;
    let top = top_spectral(&p)?;
    let q = top.generator();
    let setup = Setup { p, strike, q: q.clone(), ratio: p.alpha / (p.alpha + 1.0) };
    let log_k = strike.ln();
    let tol = 1e-10 * strike.max(1.0);
    let mut case_residuals = [f64::INFINITY; 3];

    let k_eq = setup.case1();
    let mut seeds = Vec::new();
    if let Ok(k) = k_eq {
        case_residuals[0] = (k[0] - k[1]).abs();
        seeds.push(k);
    }
    for r in [p.r1, p.r2] {
        for s in [p.sigma1, p.sigma2] {
            let gamma = 2.0 * r / (s * s);
            let kk = log_k + (gamma / (1.0 + gamma)).ln();
            seeds.push([kk, kk]);
        }
    }

    let build = |case, k: [f64; 2], c: f64, d: f64, case_residuals: [f64; 3]| TwoRegimeClosedForm {
        params: p,
        strike,
        roots,
        q_minus: q.clone(),
        case,
        k,
        c,
        d,
        case_residuals,
        top: top.clone(),
    };

    if let Ok(k) = k_eq {
        if (k[0] - k[1]).abs() < 1e-9 && k[0] < log_k {
            let c = strike - k[0].exp();
            return Ok(build(TwoRegimeCase::Equal, k, c, setup.jump_payoff(k[0]), case_residuals));
        }
    }

    let jr = JumpRegime::new(&p)?;
    let mut found: Vec<(TwoRegimeCase, [f64; 2], f64, f64)> = Vec::new();
    for seed in &seeds {
        let lo = seed[0].min(seed[1]);
        let hi = seed[0].max(seed[1]);
        for (a, b) in [(lo - 0.05, hi + 0.05), (lo - 0.2, hi), (lo, hi + 0.2)] {
            let valid2 = |k: [f64; 2]| k[0] < k[1] && k[1] < log_k;
            let f2 = |k: [f64; 2]| {
                let r = setup.case2(k[0], k[1]).residual;
                r.iter().all(|v| v.is_finite()).then_some(r)
            };
            if let Some((k, res)) = newton2(f2, [a.min(b - 1e-3), b.min(log_k - 1e-3)], valid2) {
                case_residuals[1] = case_residuals[1].min(res);
                if res < tol && valid2(k) {
                    found.push((TwoRegimeCase::SecondHigher, k, setup.case2(k[0], k[1]).c, f64::NAN));
                }
            }
            let valid3 = |k: [f64; 2]| k[1] < k[0] && k[0] < log_k;
            let f3 = |k: [f64; 2]| {
                let r = setup.case3(&jr, k[0], k[1]).residual;
                r.iter().all(|v| v.is_finite()).then_some(r)
            };
            if let Some((k, res)) = newton2(f3, [b.min(log_k - 1e-3), a.min(b - 1e-3)], valid3) {
                case_residuals[2] = case_residuals[2].min(res);
                if res < tol && valid3(k) {
                    let s = setup.case3(&jr, k[0], k[1]);
                    found.push((TwoRegimeCase::FirstHigher, k, s.c, s.d));
                }
            }
        }
    }
    let Some(first) = found.first().cloned() else {
        return Err(Error::Optimization {
            message: format!(
                "no ordering of the two exercise levels is consistent (residuals: equal {:.3e}, second higher {:.3e}, first higher {:.3e})",
                case_residuals[0], case_residuals[1], case_residuals[2]
            ),
            trace: vec![case_residuals.to_vec()],
        });
    };
    if found.iter().any(|f| f.0 != first.0 || (f.1[0] - first.1[0]).abs() + (f.1[1] - first.1[1]).abs() > 1e-6) {
        return Err(Error::numerical("more than one ordering of the exercise levels satisfies smooth fit"));
    }
    let (case, k, c, d) = first;
    Ok(build(case, k, c, d, case_residuals))
}

impl TwoRegimeClosedForm {
    fn setup(&self) -> Setup {
        Setup {
            p: self.params,
            strike: self.strike,
            q: self.q_minus.clone(),
            ratio: self.params.alpha / (self.params.alpha + 1.0),
        }
    }

    fn top_vector(&self) -> Vector {
        let s = self.setup();
        let big_k = self.strike;
        match self.case {
            TwoRegimeCase::Equal => {
                let k = self.k[0];
                Vector::from_vec(vec![big_k - k.exp(), big_k - k.exp(), s.jump_payoff(k)])
            }
            TwoRegimeCase::SecondHigher => {
                let k = self.k[1];
                Vector::from_vec(vec![self.c, big_k - k.exp(), s.jump_payoff(k)])
            }
            TwoRegimeCase::FirstHigher => Vector::from_vec(vec![big_k - self.k[0].exp(), self.c, self.d]),
        }
    }

    /// Put value at log-price `x` in regime `i`.
    pub fn value(&self, x: f64, i: usize) -> Result<f64> {
        let big_k = self.strike;
        let upper = self.k[0].max(self.k[1]);
        if x <= self.k[i] {
            return Ok(big_k - x.exp());
        }
        if x >= upper {
            return Ok((self.top.exp(x - upper).row(i) * self.top_vector())[0]);
        }
        let p = &self.params;
        let s = self.setup();
        match self.case {
            TwoRegimeCase::Equal => unreachable!("no band between equal levels"),
            TwoRegimeCase::SecondHigher => {
                let (k1, k2) = (self.k[0], self.k[1]);
                let disc = (p.mu1 * p.mu1 + 2.0 * p.sigma1 * p.sigma1 * (p.q1 + p.r1)).sqrt();
                let up = (-p.mu1 + disc) / (p.sigma1 * p.sigma1);
                let down = (-p.mu1 - disc) / (p.sigma1 * p.sigma1);
                let a1 = p.q1 * big_k / (p.q1 + p.r1);
                let fp = |x: f64| a1 - x.exp();
                let (pp, pm, _, _) = scalar_exit(up, down, k1, k2, x);
                Ok(fp(x) + pp * (self.c - fp(k2)) + pm * (big_k - k1.exp() - fp(k1)))
            }
            TwoRegimeCase::FirstHigher => {
                // Band value through the same construction as the solve.
                let jr = JumpRegime::new(p)?;
                let (k1, k2) = (self.k[0], self.k[1]);
                let probe = s.case3(&jr, k1, k2);
                debug_assert!((probe.c - self.c).abs() < 1e-9 * (1.0 + self.c.abs()));
                let a2 = p.q2 * big_k / (p.q2 + p.r2);
                let w = Vector::from_vec(vec![1.0, jr.eta]);
                let m = Mat::from_row_slice(2, 2, &[1.0, 0.0, jr.eta, 0.0]);
                let e_lk = jr.down.exp(k1 - k2);
                let up_lk = (-jr.up * (k1 - k2)).exp();
                let c_den = 1.0 - (e_lk.row(0) * &w)[0] * up_lk;
                let inv = inverse(&(Mat::identity(2, 2) - &m * e_lk.clone() * up_lk), "two-sided exit")?;
                let up_lx = (-jr.up * (k1 - x)).exp();
                let e_xk = jr.down.exp(x - k2);
                let plus = (&w * up_lx - &e_xk * &w * up_lk) / c_den;
                let minus = (&e_xk - &w * up_lx * e_lk.row(0)) * &inv;
                let fp = |y: f64| Vector::from_vec(vec![a2 - y.exp(), a2 - y.exp() * s.ratio]);
                let lower = Vector::from_vec(vec![big_k - k2.exp(), s.jump_payoff(k2)]) - fp(k2);
                let v = fp(x) + plus * (self.c - fp(k1)[0]) + minus * lower;
                Ok(v[0])
            }
        }
    }

    /// Eigenvalues of `Q-` as complex numbers, for comparison with general
    /// spectral output.
    pub fn q_minus_eigenvalues(&self) -> Vec<Complex64> {
        self.roots[..3].iter().map(|r| Complex64::new(*r, 0.0)).collect()
    }
}
