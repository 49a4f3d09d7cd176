//! Matrix Wiener-Hopf factorization of the fluid embedding.
//!
//! The ladder generators are read off the zeros of `det K(s)`, where
//! `K(s) = Sigma^2 s^2 / 2 + V s + Q_a`. The zeros are the eigenvalues of a
//! first-order linearization of the quadratic pencil; each zero's null vector
//! restricted to the ladder coordinates gives one eigen-direction of `Q+` or
//! `Q-`. Repeated or ill-separated zeros fall back to Newton's method on the
//! matrix equations themselves.

use num_complex::Complex64;

use crate::embedding::FluidEmbedding;
use crate::error::{Error, Result};

use crate::linalg::{
    eigenvalues, null_vector, null_vector_c, right_divide_c, select_c, solve_vec, stationary_distribution, CMat,
    CVector, Mat, Vector,
};
pub use crate::mc_oracle::ladder_mc_check;

/// Residual tolerance for the factorization equations.
pub const RESIDUAL_TOL: f64 = 1e-9;
/// Zeros closer than this (relative to the spectral scale) count as repeated.
pub const REPEAT_TOL: f64 = 1e-7;
/// Stationary drift below this counts as oscillating.
pub const DRIFT_TOL: f64 = 1e-10;
/// Radius within which computed zeros are taken to be the double zero at 0.
const ORIGIN_TOL: f64 = 1e-6;
const CLIP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recurrence {
    /// `Q_a` has a strictly killing row.
    Transient,
    /// Recurrent and `A` oscillates.
    Oscillating,
    /// Recurrent and `A` drifts to minus infinity.
    DriftDown,
    /// Recurrent and `A` drifts to plus infinity.
    DriftUp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Spectral,
    Newton,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WHFactorization {
    /// `N- x N0+`: law of the first up-ladder state from E- starts.
    pub eta_plus: Mat,
    /// Generator of the up-ladder process on `E+ u E0`.
    pub q_plus: Mat,
    /// `N+ x N0-`: law of the first down-ladder state from E+ starts.
    pub eta_minus: Mat,
    /// Generator of the down-ladder process on `E0 u E-`.
    pub q_minus: Mat,
    pub recurrence: Recurrence,
    /// Stationary mean slope of `A` (recurrent case only).
    pub drift: Option<f64>,
    pub method: Method,
    n_plus: usize,
    n_zero: usize,
    n_minus: usize,
}

impl WHFactorization {
    /// `W+`: identity on `E+ u E0`, `eta+` on E-.
    pub fn w_plus(&self) -> Mat {
        let n0p = self.n_plus + self.n_zero;
        let mut w = Mat::zeros(n0p + self.n_minus, n0p);
        for i in 0..n0p {
            w[(i, i)] = 1.0;
        }
        w.rows_mut(n0p, self.n_minus).copy_from(&self.eta_plus);
        w
    }

    /// `W-`: `eta-` on E+, identity on `E0 u E-`.
    pub fn w_minus(&self) -> Mat {
        let n0m = self.n_zero + self.n_minus;
        let mut w = Mat::zeros(self.n_plus + n0m, n0m);
        w.rows_mut(0, self.n_plus).copy_from(&self.eta_minus);
        for i in 0..n0m {
            w[(self.n_plus + i, i)] = 1.0;
        }
        w
    }

    /// Max-norm residuals of `Xi(-Q+, W+)` and `Xi(Q-, W-)`.
    pub fn residuals(&self, fe: &FluidEmbedding) -> (f64, f64) {
        let rp = xi(fe, &(-&self.q_plus), &self.w_plus()).amax();
        let rm = xi(fe, &self.q_minus, &self.w_minus()).amax();
        (rp, rm)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.n_plus, self.n_zero, self.n_minus)
    }
}

/// `Xi(S, W) = Sigma^2 W S^2 / 2 + V W S + Q_a W`.
pub fn xi(fe: &FluidEmbedding, s: &Mat, w: &Mat) -> Mat {
    let ws = w * s;
    let wss = &ws * s;
    let mut out = &fe.q * w;
    for i in 0..fe.len() {
        let a = 0.5 * fe.vol[i] * fe.vol[i];
        let m = fe.drift[i];
        for j in 0..out.ncols() {
            out[(i, j)] += a * wss[(i, j)] + m * ws[(i, j)];
        }
    }
    out
}

/// `K(s)` at a complex argument.
pub fn characteristic_k(fe: &FluidEmbedding, s: Complex64) -> CMat {
    let mut k = fe.q.map(|v| Complex64::new(v, 0.0));
    for i in 0..fe.len() {
        k[(i, i)] += s * s * (0.5 * fe.vol[i] * fe.vol[i]) + s * fe.drift[i];
    }
    k
}

#[derive(Debug, Clone)]
pub struct SpectralData {
    /// Zeros of `det K`, conjugate pairs adjacent.
    pub roots: Vec<Complex64>,
    /// Unit null vectors of `K(root)`, over all of E.
    pub vectors: Vec<CVector>,
    /// Number of zeros (including itself) within the repeat tolerance.
    pub multiplicity: Vec<usize>,
}

/// First-order companion of the quadratic pencil in the unknowns
/// `(beta_E0, s beta_E0, beta_E+, beta_E-)`.
fn linearization(fe: &FluidEmbedding) -> Mat {
    let st = &fe.states;
    let n0 = st.n_zero();
    let size = 2 * n0 + st.n_plus() + st.n_minus();
    // Position of each embedded state's beta in the unknown vector.
    let pos = |s: usize| -> usize {
        if st.zero().contains(&s) {
            s - st.zero().start
        } else if st.plus().contains(&s) {
            2 * n0 + s
        } else {
            2 * n0 + st.n_plus() + (s - st.minus().start)
        }
    };
    let mut l = Mat::zeros(size, size);
    for z in 0..n0 {
        l[(z, n0 + z)] = 1.0;
    }
    for s in 0..fe.len() {
        if st.zero().contains(&s) {
            let z = s - st.zero().start;
            let d = 0.5 * fe.vol[s] * fe.vol[s];
            l[(n0 + z, n0 + z)] = -fe.drift[s] / d;
            for t in 0..fe.len() {
                l[(n0 + z, pos(t))] -= fe.q[(s, t)] / d;
            }
        } else {
            let row = pos(s);
            for t in 0..fe.len() {
                l[(row, pos(t))] -= fe.q[(s, t)] / fe.drift[s];
            }
        }
    }
    l
}

fn polish_real(fe: &FluidEmbedding, mut theta: f64) -> (f64, Vector) {
    let mut k = fe.characteristic(theta);
    let (mut v, mut sv) = null_vector(&k);
    for _ in 0..4 {
        let svd = k.clone().svd(true, false);
        let u = svd.u.expect("requested U");
        let w = u.column(u.ncols() - 1);
        let dk = Vector::from_fn(fe.len(), |i, _| fe.vol[i] * fe.vol[i] * theta + fe.drift[i]);
        let num = w.dot(&(&k * &v));
        let den = w.dot(&dk.component_mul(&v));
        if den == 0.0 {
            break;
        }
        let cand = theta - num / den;
        let kc = fe.characteristic(cand);
        let (vc, svc) = null_vector(&kc);
        if svc < sv {
            theta = cand;
            k = kc;
            v = vc;
            sv = svc;
        } else {
            break;
        }
    }
    (theta, v)
}

fn polish_complex(fe: &FluidEmbedding, mut theta: Complex64) -> (Complex64, CVector) {
    let mut k = characteristic_k(fe, theta);
    let (mut v, mut sv) = null_vector_c(&k);
    for _ in 0..4 {
        let svd = k.clone().svd(true, false);
        let u = svd.u.expect("requested U");
        let w = u.column(u.ncols() - 1).into_owned();
        let dk = CVector::from_fn(fe.len(), |i, _| theta * (fe.vol[i] * fe.vol[i]) + fe.drift[i]);
        let num = w.dotc(&(&k * &v));
        let den = w.dotc(&dk.component_mul(&v));
        if den.norm() == 0.0 {
            break;
        }
        let cand = theta - num / den;
        let kc = characteristic_k(fe, cand);
        let (vc, svc) = null_vector_c(&kc);
        if svc < sv {
            theta = cand;
            k = kc;
            v = vc;
            sv = svc;
        } else {
            break;
        }
    }
    (theta, v)
}

pub fn spectral_data(fe: &FluidEmbedding) -> Result<SpectralData> {
    let raw = eigenvalues(&linearization(fe))?;
    let scale = raw.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let mut roots = Vec::with_capacity(raw.len());
    let mut vectors = Vec::with_capacity(raw.len());
    for z in &raw {
        if z.im.abs() <= REPEAT_TOL * scale {
            let (t, v) = polish_real(fe, z.re);
            roots.push(Complex64::new(t, 0.0));
            vectors.push(v.map(|x| Complex64::new(x, 0.0)));
        } else if z.im > 0.0 {
            let (t, v) = polish_complex(fe, *z);
            roots.push(t);
            vectors.push(v.clone());
            roots.push(t.conj());
            vectors.push(v.map(|x| x.conj()));
        }
    }
    if roots.len() != raw.len() {
        return Err(Error::numerical("complex zeros of det K are not in conjugate pairs"));
    }
    let multiplicity =
        roots.iter().map(|a| roots.iter().filter(|b| (*a - **b).norm() <= REPEAT_TOL * scale).count()).collect();
    Ok(SpectralData { roots, vectors, multiplicity })
}

/// Recurrence class and, if recurrent, the stationary drift of `A`.
pub fn classify(fe: &FluidEmbedding) -> Result<(Recurrence, Option<f64>)> {
    if !fe.is_recurrent() {
        return Ok((Recurrence::Transient, None));
    }
    let pi = stationary_distribution(&fe.q)?;
    let drift = pi.dot(&fe.drift);
    let class = if drift.abs() < DRIFT_TOL {
        Recurrence::Oscillating
    } else if drift < 0.0 {
        Recurrence::DriftDown
    } else {
        Recurrence::DriftUp
    };
    Ok((class, Some(drift)))
}

/// Computes `(eta+, Q+, eta-, Q-)`.
pub fn solve_factorization(fe: &FluidEmbedding) -> Result<WHFactorization> {
    let (class, drift) = classify(fe)?;
    match spectral_factorization(fe, class, drift) {
        Ok(f) => Ok(f),
        Err(spectral_err) => newton_factorization(fe, class, drift)
            .map_err(|e| Error::numerical(format!("spectral method failed ({spectral_err}); iteration failed ({e})"))),
    }
}

struct Side {
    q: Mat,
    eta: Mat,
}

fn spectral_factorization(fe: &FluidEmbedding, class: Recurrence, drift: Option<f64>) -> Result<WHFactorization> {
    let spec = spectral_data(fe)?;
    // An oscillating embedding has a double zero at the origin, shared by
    // both ladder processes; split_roots assigns it directly.
    let at_origin = |z: &Complex64| class == Recurrence::Oscillating && z.norm() <= ORIGIN_TOL;
    let near_origin = spec.roots.iter().filter(|z| at_origin(z)).count();
    if class == Recurrence::Oscillating && near_origin != 2 {
        return Err(Error::numerical(format!("expected a double zero of det K at 0, found {near_origin}")));
    }
    if spec.roots.iter().zip(&spec.multiplicity).any(|(z, &m)| m > 1 && !at_origin(z)) {
        return Err(Error::numerical("det K has repeated zeros"));
    }
    let (minus, plus) = split_roots(fe, &spec, class)?;
    let st = &fe.states;
    let mut f = WHFactorization {
        eta_plus: Mat::zeros(0, 0),
        q_plus: Mat::zeros(0, 0),
        eta_minus: Mat::zeros(0, 0),
        q_minus: Mat::zeros(0, 0),
        recurrence: class,
        drift,
        method: Method::Spectral,
        n_plus: st.n_plus(),
        n_zero: st.n_zero(),
        n_minus: st.n_minus(),
    };
    let up = st.up_coords();
    let down = st.down_coords();
    let minus_other: Vec<usize> = st.plus().collect();
    let plus_other: Vec<usize> = st.minus().collect();

    let m = reconstruct(&minus, &down, &minus_other)?;
    let p = reconstruct(&plus, &up, &plus_other)?;
    f.q_minus = m.q;
    f.eta_minus = m.eta;
    f.q_plus = -p.q;
    f.eta_plus = p.eta;

    let (rp, rm) = f.residuals(fe);
    if rp.max(rm) > 1e-11 || finalize(&mut f).is_err() {
        // Refine on the matrix equations; the spectral answer is the start.
        polish_newton(fe, &mut f)?;
    }
    finalize(&mut f)?;
    let (rp, rm) = f.residuals(fe);
    if rp.max(rm) > RESIDUAL_TOL {
        return Err(Error::numerical(format!("factorization residuals {rp:.3e} (plus), {rm:.3e} (minus)")));
    }
    Ok(f)
}

type RootSet = Vec<(Complex64, CVector)>;

fn split_roots(fe: &FluidEmbedding, spec: &SpectralData, class: Recurrence) -> Result<(RootSet, RootSet)> {
    let st = &fe.states;
    let mut order: Vec<usize> = (0..spec.roots.len()).collect();
    order.sort_by(|&a, &b| spec.roots[a].norm().partial_cmp(&spec.roots[b].norm()).unwrap());
    let ones = CVector::from_element(fe.len(), Complex64::new(1.0, 0.0));
    let zero = Complex64::new(0.0, 0.0);

    let mut minus = RootSet::new();
    let mut plus = RootSet::new();
    let skip = match class {
        Recurrence::Transient => 0,
        Recurrence::DriftDown => {
            minus.push((zero, ones.clone()));
            1
        }
        Recurrence::DriftUp => {
            plus.push((zero, ones.clone()));
            1
        }
        Recurrence::Oscillating => {
            minus.push((zero, ones.clone()));
            plus.push((zero, ones.clone()));
            2
        }
    };
    for &i in order.iter().skip(skip) {
        let z = spec.roots[i];
        if z.re < 0.0 {
            minus.push((z, spec.vectors[i].clone()));
        } else if z.re > 0.0 {
            plus.push((z, spec.vectors[i].clone()));
        } else {
            return Err(Error::numerical("det K has an unexpected zero on the imaginary axis"));
        }
    }
    let n0m = st.n_zero() + st.n_minus();
    let n0p = st.n_zero() + st.n_plus();
    if minus.len() != n0m || plus.len() != n0p {
        return Err(Error::numerical(format!(
            "zero split ({}, {}) does not match ladder sizes ({n0m}, {n0p})",
            minus.len(),
            plus.len()
        )));
    }
    Ok((minus, plus))
}

/// `S = B Theta B^{-1}` and `C = beta_other B^{-1}` from the chosen zeros.
fn reconstruct(roots: &RootSet, own: &[usize], other: &[usize]) -> Result<Side> {
    let n = roots.len();
    let e = own.len() + other.len();
    let beta = CMat::from_fn(e, n, |i, j| roots[j].1[i]);
    let b = select_c(&beta, own, &(0..n).collect::<Vec<_>>());
    let bt = CMat::from_fn(n, n, |i, j| b[(i, j)] * roots[j].0);
    let s = right_divide_c(&bt, &b, "ladder eigenvector basis")?;
    let c = right_divide_c(&select_c(&beta, other, &(0..n).collect::<Vec<_>>()), &b, "ladder eigenvector basis")?;
    let scale = s.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let imag = s.iter().chain(c.iter()).map(|z| z.im.abs()).fold(0.0, f64::max);
    if imag > 1e-8 * scale {
        return Err(Error::numerical(format!("reconstructed ladder generator has imaginary part {imag:.3e}")));
    }
    Ok(Side { q: s.map(|z| z.re), eta: c.map(|z| z.re) })
}

/// Clips rounding-level sign violations; hard error beyond the tolerance.
fn finalize(f: &mut WHFactorization) -> Result<()> {
    clean_generator(&mut f.q_plus, "Q+")?;
    clean_generator(&mut f.q_minus, "Q-")?;
    clean_subprob(&mut f.eta_plus, "eta+")?;
    clean_subprob(&mut f.eta_minus, "eta-")?;
    Ok(())
}

fn clean_generator(q: &mut Mat, what: &str) -> Result<()> {
    let n = q.nrows();
    let tol = CLIP_TOL * q.amax().max(1.0);
    for i in 0..n {
        for j in 0..n {
            if i != j && q[(i, j)] < 0.0 {
                if q[(i, j)] < -tol {
                    return Err(Error::numerical(format!("{what}[{i}][{j}] = {:.3e} is negative", q[(i, j)])));
                }
                q[(i, j)] = 0.0;
            }
        }
        let row: f64 = q.row(i).sum();
        if row > 0.0 {
            if row > tol {
                return Err(Error::numerical(format!("{what} row {i} sums to {row:.3e} > 0")));
            }
            q[(i, i)] -= row;
        }
    }
    Ok(())
}

fn clean_subprob(eta: &mut Mat, what: &str) -> Result<()> {
    for i in 0..eta.nrows() {
        for j in 0..eta.ncols() {
            if eta[(i, j)] < 0.0 {
                if eta[(i, j)] < -CLIP_TOL {
                    return Err(Error::numerical(format!("{what}[{i}][{j}] = {:.3e} is negative", eta[(i, j)])));
                }
                eta[(i, j)] = 0.0;
            }
        }
        let row: f64 = eta.row(i).sum();
        if row > 1.0 {
            if row > 1.0 + CLIP_TOL {
                return Err(Error::numerical(format!("{what} row {i} sums to {row} > 1")));
            }
            eta.row_mut(i).scale_mut(1.0 / row);
        }
    }
    Ok(())
}

/// Newton's method on `Xi(S, W) = 0` for one side. `own` rows of `W` are the
/// identity, `other` rows are the unknown `C`.
fn newton_side(fe: &FluidEmbedding, own: &[usize], other: &[usize], s0: &Mat, c0: &Mat) -> Result<(Mat, Mat)> {
    let e = fe.len();
    let n = own.len();
    let no = other.len();
    let unknowns = n * n + no * n;
    let build_w = |c: &Mat| {
        let mut w = Mat::zeros(e, n);
        for (k, &r) in own.iter().enumerate() {
            w[(r, k)] = 1.0;
        }
        for (k, &r) in other.iter().enumerate() {
            w.row_mut(r).copy_from(&c.row(k));
        }
        w
    };
    let d2 = Vector::from_fn(e, |i, _| 0.5 * fe.vol[i] * fe.vol[i]);
    let scale_rows = |m: &Mat, d: &Vector| {
        let mut out = m.clone();
        for i in 0..out.nrows() {
            out.row_mut(i).scale_mut(d[i]);
        }
        out
    };

    let mut s = s0.clone();
    let mut c = c0.clone();
    let mut w = build_w(&c);
    let mut f = xi(fe, &s, &w);
    let mut best = f.amax();
    for _ in 0..60 {
        if best < 1e-14 * (1.0 + s.amax()) {
            break;
        }
        let mut jac = Mat::zeros(e * n, unknowns);
        let mut col = 0;
        let s2 = &s * &s;
        for a in 0..n {
            for b in 0..n {
                // dS = unit matrix at (a, b).
                let mut ds = Mat::zeros(n, n);
                ds[(a, b)] = 1.0;
                let quad = &w * (&ds * &s + &s * &ds);
                let lin = &w * &ds;
                let df = scale_rows(&quad, &d2) + scale_rows(&lin, &fe.drift);
                jac.column_mut(col).copy_from_slice(df.transpose().as_slice());
                col += 1;
            }
        }
        for (k, &r) in other.iter().enumerate() {
            for b in 0..n {
                let mut dw = Mat::zeros(e, n);
                dw[(r, b)] = 1.0;
                let df = scale_rows(&(&dw * &s2), &d2) + scale_rows(&(&dw * &s), &fe.drift) + &fe.q * &dw;
                jac.column_mut(col).copy_from_slice(df.transpose().as_slice());
                col += 1;
                let _ = k;
            }
        }
        let rhs = Vector::from_column_slice(f.transpose().as_slice());
        let step = solve_vec(&jac, &rhs, "Newton Jacobian of the factorization equations")?;
        let mut ns = s.clone();
        let mut nc = c.clone();
        let mut idx = 0;
        for a in 0..n {
            for b in 0..n {
                ns[(a, b)] -= step[idx];
                idx += 1;
            }
        }
        for k in 0..no {
            for b in 0..n {
                nc[(k, b)] -= step[idx];
                idx += 1;
            }
        }
        let nw = build_w(&nc);
        let nf = xi(fe, &ns, &nw);
        let val = nf.amax();
        if !(val < best) {
            break;
        }
        s = ns;
        c = nc;
        w = nw;
        f = nf;
        best = val;
    }
    Ok((s, c))
}

fn polish_newton(fe: &FluidEmbedding, f: &mut WHFactorization) -> Result<()> {
    let st = &fe.states;
    let up = st.up_coords();
    let down = st.down_coords();
    let plus_other: Vec<usize> = st.minus().collect();
    let minus_other: Vec<usize> = st.plus().collect();
    let (s, c) = newton_side(fe, &down, &minus_other, &f.q_minus, &f.eta_minus)?;
    f.q_minus = s;
    f.eta_minus = c;
    let (s, c) = newton_side(fe, &up, &plus_other, &(-&f.q_plus), &f.eta_plus)?;
    f.q_plus = -s;
    f.eta_plus = c;
    Ok(())
}

/// Fallback: spectral answer of a slightly perturbed embedding, then Newton on
/// the true equations.
fn newton_factorization(fe: &FluidEmbedding, class: Recurrence, drift: Option<f64>) -> Result<WHFactorization> {
    let mut last = Error::numerical("no perturbation separated the zeros");
    for eps in [1e-6, 1e-5, 1e-4, 1e-3] {
        let mut pert = fe.clone();
        for (k, s) in fe.states.zero().enumerate() {
            pert.vol[s] *= 1.0 + eps * (1.0 + 0.37 * k as f64);
        }
        for (k, s) in fe.states.plus().chain(fe.states.minus()).enumerate() {
            pert.q[(s, s)] *= 1.0 + eps * 0.29 * (1.0 + k as f64);
        }
        let start = match spectral_factorization(&pert, class, drift) {
            Ok(f) => f,
            Err(e) => {
                last = e;
                continue;
            }
        };
        let mut f = start;
        f.method = Method::Newton;
        f.recurrence = class;
        f.drift = drift;
        polish_newton(fe, &mut f)?;
        if let Err(e) = finalize(&mut f) {
            last = e;
            continue;
        }
        let (rp, rm) = f.residuals(fe);
        if rp.max(rm) <= RESIDUAL_TOL {
            return Ok(f);
        }
        last = Error::numerical(format!("iteration residuals {rp:.3e} (plus), {rm:.3e} (minus)"));
    }
    Err(last)
}

/// The second factorization in the recurrent, downward-drifting case.
pub fn alternate_factorization(f: &WHFactorization) -> Result<WHFactorization> {
    if f.recurrence != Recurrence::DriftDown {
        return Err(Error::Precondition(format!(
            "alternate factorization needs a recurrent embedding drifting down, got {:?}",
            f.recurrence
        )));
    }
    let n = f.q_plus.nrows();
    let ev = eigenvalues(&f.q_plus)?;
    let top = ev.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    let shifted = f.q_plus.transpose() - Mat::identity(n, n) * top;
    let (mu, _) = null_vector(&shifted);
    let mu = &mu / mu.sum();
    let ones = Vector::from_element(n, 1.0);
    let proj = Mat::identity(n, n) - &ones * mu.transpose();
    let mu_row = mu.transpose();
    let mut eta_plus = &f.eta_plus * &proj;
    for i in 0..eta_plus.nrows() {
        let row = eta_plus.row(i) + &mu_row;
        eta_plus.row_mut(i).copy_from(&row);
    }
    Ok(WHFactorization { eta_plus, q_plus: &f.q_plus * &proj, ..f.clone() })
}
