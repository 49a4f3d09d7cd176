//! Fluid embedding of the jump process: every jump of size `y` is replaced by
//! a unit-slope linear stretch of length `|y|` through the jump law's phases.
//!
//! States are ordered `[E+ blocks by regime | E0 by regime | E- blocks by regime]`.

use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};
use crate::model::ModelSpec;

pub use crate::mc_oracle::time_change_consistency;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateKind {
    /// Upward-jump phase `phase` of regime `regime`.
    Plus {
        regime: usize,
        phase: usize,
    },
    Regime(usize),
    Minus {
        regime: usize,
        phase: usize,
    },
}

impl StateKind {
    pub fn regime(&self) -> usize {
        match *self {
            StateKind::Plus { regime, .. } | StateKind::Minus { regime, .. } => regime,
            StateKind::Regime(r) => r,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    kinds: Vec<StateKind>,
    n_plus: usize,
    n_zero: usize,
    n_minus: usize,
}

impl StateSpace {
    /// Builds the ordered space from per-state labels; labels must already be
    /// grouped as E+, then E0, then E-.
    pub fn from_kinds(kinds: Vec<StateKind>) -> Result<Self> {
        let rank = |k: &StateKind| match k {
            StateKind::Plus { .. } => 0,
            StateKind::Regime(_) => 1,
            StateKind::Minus { .. } => 2,
        };
        if kinds.windows(2).any(|w| rank(&w[0]) > rank(&w[1])) {
            return Err(Error::invalid("state labels are not ordered E+, E0, E-"));
        }
        let n_plus = kinds.iter().filter(|k| rank(k) == 0).count();
        let n_zero = kinds.iter().filter(|k| rank(k) == 1).count();
        let n_minus = kinds.len() - n_plus - n_zero;
        Ok(StateSpace { kinds, n_plus, n_zero, n_minus })
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn kinds(&self) -> &[StateKind] {
        &self.kinds
    }

    pub fn kind(&self, s: usize) -> StateKind {
        self.kinds[s]
    }

    pub fn owner(&self, s: usize) -> usize {
        self.kinds[s].regime()
    }

    pub fn n_plus(&self) -> usize {
        self.n_plus
    }

    pub fn n_zero(&self) -> usize {
        self.n_zero
    }

    pub fn n_minus(&self) -> usize {
        self.n_minus
    }

    pub fn plus(&self) -> std::ops::Range<usize> {
        0..self.n_plus
    }

    pub fn zero(&self) -> std::ops::Range<usize> {
        self.n_plus..self.n_plus + self.n_zero
    }

    pub fn minus(&self) -> std::ops::Range<usize> {
        self.n_plus + self.n_zero..self.len()
    }

    /// `E+ u E0`, the coordinates of up-crossing states.
    pub fn up_coords(&self) -> Vec<usize> {
        (0..self.n_plus + self.n_zero).collect()
    }

    /// `E0 u E-`, the coordinates of down-crossing states.
    pub fn down_coords(&self) -> Vec<usize> {
        (self.n_plus..self.len()).collect()
    }

    /// Embedded index of regime `i`'s E0 state.
    pub fn regime_state(&self, i: usize) -> Option<usize> {
        self.zero().find(|&s| self.kinds[s] == StateKind::Regime(i))
    }

    /// Regimes present in E0, in state order.
    pub fn regimes(&self) -> Vec<usize> {
        self.zero().map(|s| self.kinds[s].regime()).collect()
    }

    pub fn minus_block(&self, i: usize) -> Vec<usize> {
        self.minus().filter(|&s| self.kinds[s].regime() == i).collect()
    }

    pub fn plus_block(&self, i: usize) -> Vec<usize> {
        self.plus().filter(|&s| self.kinds[s].regime() == i).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FluidEmbedding {
    pub states: StateSpace,
    /// Killed generator `Q_a`.
    pub q: Mat,
    /// Drift `m(s)`: +1 on E+, `mu_i` on E0, -1 on E-.
    pub drift: Vector,
    /// Volatility `s(s)`: `sigma_i` on E0, 0 elsewhere.
    pub vol: Vector,
}

impl FluidEmbedding {
    pub fn from_parts(states: StateSpace, q: Mat, drift: Vector, vol: Vector) -> Result<Self> {
        let n = states.len();
        if q.nrows() != n || q.ncols() != n || drift.len() != n || vol.len() != n {
            return Err(Error::invalid("embedding parts have inconsistent sizes"));
        }
        for s in states.zero() {
            if !(vol[s] > 0.0) {
                return Err(Error::invalid(format!("state {s}: E0 states need positive volatility")));
            }
        }
        Ok(FluidEmbedding { states, q, drift, vol })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Exit-rate vector `q_a = -Q_a 1`.
    pub fn kill(&self) -> Vector {
        let scale = self.q.amax().max(1.0);
        let v = -(&self.q * Vector::from_element(self.len(), 1.0));
        v.map(|x| if x.abs() < 1e-14 * scale { 0.0 } else { x })
    }

    /// Rows of `Q_a` sum to zero up to rounding.
    pub fn is_recurrent(&self) -> bool {
        let scale = self.q.amax().max(1.0);
        self.kill().iter().all(|k| k.abs() <= 1e-12 * scale)
    }

    /// `K(s) = Sigma^2 s^2 / 2 + V s + Q_a`.
    pub fn characteristic(&self, s: f64) -> Mat {
        let mut k = self.q.clone();
        for i in 0..self.len() {
            k[(i, i)] += 0.5 * self.vol[i] * self.vol[i] * s * s + self.drift[i] * s;
        }
        k
    }

    /// Principal restriction to the states of the `alive` regimes. Also returns
    /// the exit-rate matrix from kept states into the E0 states of removed
    /// regimes, with those regimes' indices.
    pub fn restrict(&self, alive: &[bool]) -> Result<Restriction> {
        let keep: Vec<usize> = (0..self.len()).filter(|&s| alive[self.states.owner(s)]).collect();
        if keep.is_empty() {
            return Err(Error::invalid("restriction keeps no states"));
        }
        let stopped: Vec<usize> = self.states.zero().filter(|&s| !alive[self.states.owner(s)]).collect();
        let kinds = keep.iter().map(|&s| self.states.kind(s)).collect();
        let states = StateSpace::from_kinds(kinds)?;
        let q = crate::linalg::select(&self.q, &keep, &keep);
        let exit = crate::linalg::select(&self.q, &keep, &stopped);
        let drift = Vector::from_iterator(keep.len(), keep.iter().map(|&s| self.drift[s]));
        let vol = Vector::from_iterator(keep.len(), keep.iter().map(|&s| self.vol[s]));
        Ok(Restriction {
            fe: FluidEmbedding::from_parts(states, q, drift, vol)?,
            exit,
            stopped_regimes: stopped.iter().map(|&s| self.states.owner(s)).collect(),
            kept: keep,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Restriction {
    pub fe: FluidEmbedding,
    /// Rates from kept states into removed regimes' E0 states.
    pub exit: Mat,
    pub stopped_regimes: Vec<usize>,
    /// Indices of kept states in the parent embedding.
    pub kept: Vec<usize>,
}

/// Builds `(Q_a, V, Sigma)` for killing rates `a` on E0.
pub fn embed(m: &ModelSpec, a: &[f64]) -> Result<FluidEmbedding> {
    let n = m.n_regimes();
    if a.len() != n {
        return Err(Error::invalid(format!("expected {n} killing rates, got {}", a.len())));
    }
    if let Some(i) = a.iter().position(|x| !(*x >= 0.0) || !x.is_finite()) {
        return Err(Error::Domain(format!("killing rate a[{i}] = {} must be nonnegative", a[i])));
    }
    let mut kinds = Vec::new();
    for (i, reg) in m.regimes().iter().enumerate() {
        if let Some(d) = reg.jumps.as_ref().and_then(|j| j.plus()) {
            kinds.extend((0..d.phases()).map(|p| StateKind::Plus { regime: i, phase: p }));
        }
    }
    kinds.extend((0..n).map(StateKind::Regime));
    for (i, reg) in m.regimes().iter().enumerate() {
        if let Some(d) = reg.jumps.as_ref().and_then(|j| j.minus()) {
            kinds.extend((0..d.phases()).map(|p| StateKind::Minus { regime: i, phase: p }));
        }
    }
    let states = StateSpace::from_kinds(kinds)?;
    let size = states.len();
    let mut q = Mat::zeros(size, size);
    let g = m.generator();
    let z0 = states.zero().start;

    for i in 0..n {
        for j in 0..n {
            q[(z0 + i, z0 + j)] = g[(i, j)];
        }
        q[(z0 + i, z0 + i)] -= m.regime(i).lambda + a[i];
    }
    for (i, reg) in m.regimes().iter().enumerate() {
        let Some(j) = &reg.jumps else { continue };
        let (lp, lm) = reg.jump_rates();
        for (block, d, rate) in [(states.plus_block(i), j.plus(), lp), (states.minus_block(i), j.minus(), lm)] {
            let Some(d) = d else { continue };
            let t = d.generator();
            let exit = d.exit_rates();
            for (p, &s) in block.iter().enumerate() {
                q[(z0 + i, s)] = rate * d.alpha()[p];
                q[(s, z0 + i)] = exit[p];
                for (r, &u) in block.iter().enumerate() {
                    q[(s, u)] = t[(p, r)];
                }
            }
            // An atom at zero in the jump law is a jump that does nothing.
            q[(z0 + i, z0 + i)] += rate * d.atom();
        }
    }

    let drift = Vector::from_fn(size, |s, _| match states.kind(s) {
        StateKind::Plus { .. } => 1.0,
        StateKind::Regime(i) => m.regime(i).mu,
        StateKind::Minus { .. } => -1.0,
    });
    let vol = Vector::from_fn(size, |s, _| match states.kind(s) {
        StateKind::Regime(i) => m.regime(i).sigma,
        _ => 0.0,
    });
    FluidEmbedding::from_parts(states, q, drift, vol)
}
