//! First passage below a regime-dependent level:
//! `v(x, i) = E[exp(-R_T + b X_T) h0(Z_T)]` with `T = inf{t : X_t <= k(Z_t)}`.
//!
//! Levels are merged into distinct values `L_0 > L_1 > ...`. Above `L_0` the
//! value is a one-sided down-passage functional of the full embedding. In the
//! band `(L_g, L_{g-1}]` only regimes with level at most `L_g` are alive; the
//! value there is a two-sided exit functional of the restricted embedding plus
//! the payoff collected when the chain switches into a stopped regime. The
//! unknown boundary values at the interior levels are fixed by one linear
//! system of value and derivative continuity conditions.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use crate::embedding::{embed, FluidEmbedding, Restriction, StateKind};
use crate::error::{Error, Result};
use crate::exit::{check_moment_condition, phi_minus, phi_minus_derivative, ExitOperator};
use crate::linalg::{condition_number, solve_vec, Mat, Vector};
use crate::model::ModelSpec;
use crate::wiener_hopf::{solve_factorization, WHFactorization};

/// Levels closer than this are merged.
pub const TIE_TOL: f64 = 1e-9;
/// Required accuracy of the continuity conditions after solving.
pub const MATCHING_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct LevelVector {
    levels: Vec<f64>,
    /// Regimes per distinct level, highest level first.
    groups: Vec<Vec<usize>>,
    group_levels: Vec<f64>,
    group_of: Vec<usize>,
}

impl LevelVector {
    pub fn new(k: &[f64]) -> Result<Self> {
        if k.is_empty() {
            return Err(Error::invalid("level vector is empty"));
        }
        if let Some(i) = k.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("level k[{i}] is not finite")));
        }
        let mut order: Vec<usize> = (0..k.len()).collect();
        order.sort_by(|&a, &b| k[b].partial_cmp(&k[a]).unwrap().then(a.cmp(&b)));
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut group_levels = Vec::new();
        for &i in &order {
            match group_levels.last() {
                Some(&top) if top - k[i] <= TIE_TOL => groups.last_mut().unwrap().push(i),
                _ => {
                    groups.push(vec![i]);
                    group_levels.push(k[i]);
                }
            }
        }
        let mut group_of = vec![0; k.len()];
        let mut levels = vec![0.0; k.len()];
        for (g, members) in groups.iter().enumerate() {
            for &i in members {
                group_of[i] = g;
                levels[i] = group_levels[g];
            }
        }
        Ok(LevelVector { levels, groups, group_levels, group_of })
    }

    /// Per-regime levels after tie merging.
    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn level(&self, i: usize) -> f64 {
        self.levels[i]
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn group_levels(&self) -> &[f64] {
        &self.group_levels
    }

    pub fn group_of(&self, i: usize) -> usize {
        self.group_of[i]
    }

    pub fn n_regimes(&self) -> usize {
        self.levels.len()
    }

    /// Regimes in decreasing level order.
    pub fn permutation(&self) -> Vec<usize> {
        self.groups.iter().flatten().copied().collect()
    }
}

#[derive(Debug)]
struct BandModel {
    restriction: Restriction,
    fact: WHFactorization,
}

/// Factorizations depend only on the set of alive regimes, so one solver can
/// serve many level vectors, exponents and payoffs.
#[derive(Debug)]
pub struct PassageSolver {
    fe: FluidEmbedding,
    n: usize,
    /// Payoff-phase resolvents need each regime's downward phase law.
    minus_laws: Vec<Option<(Mat, Vector)>>,
    cache: Mutex<HashMap<Vec<bool>, Arc<BandModel>>>,
}

impl PassageSolver {
    pub fn new(m: &ModelSpec, a: &[f64]) -> Result<Self> {
        let fe = embed(m, a)?;
        Ok(Self::from_embedding(fe))
    }

    pub fn from_embedding(fe: FluidEmbedding) -> Self {
        let n = fe.states.kinds().iter().map(|k| k.regime() + 1).max().unwrap_or(0);
        let mut minus_laws = vec![None; n];
        for (i, law) in minus_laws.iter_mut().enumerate() {
            let block = fe.states.minus_block(i);
            if block.is_empty() {
                continue;
            }
            let t = crate::linalg::select(&fe.q, &block, &block);
            let z = fe.states.regime_state(i).expect("regime has an E0 state");
            let exit = Vector::from_iterator(block.len(), block.iter().map(|&s| fe.q[(s, z)]));
            *law = Some((t, exit));
        }
        PassageSolver { fe, n, minus_laws, cache: Mutex::new(HashMap::new()) }
    }

    pub fn embedding(&self) -> &FluidEmbedding {
        &self.fe
    }

    fn band_model(&self, alive: &[bool]) -> Result<Arc<BandModel>> {
        if let Some(b) = self.cache.lock().expect("cache lock").get(alive) {
            return Ok(b.clone());
        }
        let restriction = self.fe.restrict(alive)?;
        let fact = solve_factorization(&restriction.fe)?;
        let model = Arc::new(BandModel { restriction, fact });
        self.cache.lock().expect("cache lock").insert(alive.to_vec(), model.clone());
        Ok(model)
    }

    /// `e^{b x} (bI - T-)^{-1} t-` for regime `i`'s downward phases: the value
    /// of `exp(b X_T)` for a jump in progress at `x` that lands below the level.
    fn overshoot_factor(&self, i: usize, b: f64) -> Result<Vector> {
        match &self.minus_laws[i] {
            Some((t, exit)) => {
                let m = t.nrows();
                solve_vec(&(Mat::identity(m, m) * b - t), exit, "overshoot resolvent")
            }
            None => Ok(Vector::zeros(0)),
        }
    }

    pub fn solve(&self, k: &LevelVector, b: f64, h0: &[f64]) -> Result<PiecewiseValue> {
        solve_with(self, k, b, h0)
    }
}

/// One-off solve without a shared factorization cache.
pub fn solve_first_passage(fe: &FluidEmbedding, k: &LevelVector, b: f64, h0: &[f64]) -> Result<PiecewiseValue> {
    PassageSolver::from_embedding(fe.clone()).solve(k, b, h0)
}

#[derive(Debug, Clone)]
struct Band {
    lower: f64,
    upper: f64,
    model: Arc<BandModel>,
    op: ExitOperator,
    h_plus: Vector,
    h_minus: Vector,
    rate: Vector,
    /// Full-embedding state index to restricted index.
    local: HashMap<usize, usize>,
}

#[derive(Debug, Clone)]
struct TopBand {
    level: f64,
    model: Arc<BandModel>,
    h_minus: Vector,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchingResiduals {
    pub value: f64,
    pub derivative: f64,
}

#[derive(Debug, Clone)]
pub struct PiecewiseValue {
    b: f64,
    h0: Vec<f64>,
    levels: LevelVector,
    kinds: Vec<StateKind>,
    overshoot: Vec<Vector>,
    top: TopBand,
    bands: Vec<Band>,
    residuals: MatchingResiduals,
    condition: f64,
}

/// Affine expression `c + H u` in the unknown boundary values.
#[derive(Clone)]
struct Affine {
    c: Vector,
    h: Mat,
}

impl Affine {
    fn zeros(len: usize, n_u: usize) -> Self {
        Affine { c: Vector::zeros(len), h: Mat::zeros(len, n_u) }
    }

    fn eval(&self, u: &Vector) -> Vector {
        &self.c + &self.h * u
    }
}

fn solve_with(solver: &PassageSolver, k: &LevelVector, b: f64, h0: &[f64]) -> Result<PiecewiseValue> {
    let fe = &solver.fe;
    let n = solver.n;
    if k.n_regimes() != n {
        return Err(Error::invalid(format!("expected {n} levels, got {}", k.n_regimes())));
    }
    if h0.len() != n || h0.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::invalid(format!("h0 must be {n} nonnegative numbers")));
    }
    if !b.is_finite() {
        return Err(Error::invalid("b must be finite"));
    }
    let gl = k.group_levels();
    let m_groups = gl.len();
    if m_groups > 1 {
        check_moment_condition(fe, b, 0.5)?;
    }
    let st = &fe.states;
    let overshoot: Vec<Vector> = (0..n).map(|i| solver.overshoot_factor(i, b)).collect::<Result<_>>()?;

    // Unknowns: value at interface g of every state owned by a regime of a
    // group deeper than g.
    let mut unknown: HashMap<(usize, usize), usize> = HashMap::new();
    for g in 0..m_groups.saturating_sub(1) {
        for s in 0..fe.len() {
            if k.group_of(st.owner(s)) > g {
                let id = unknown.len();
                unknown.insert((g, s), id);
            }
        }
    }
    let n_u = unknown.len();

    // Boundary value at level `level` of a down-coordinate state, as seen
    // from a band whose stopping group is `g`.
    let lower_value = |s: usize, g: usize, aff: &mut Affine, row: usize| {
        let owner = st.owner(s);
        let level = gl[g];
        if k.group_of(owner) == g {
            let base = (b * level).exp() * h0[owner];
            aff.c[row] = match st.kind(s) {
                StateKind::Regime(_) => base,
                StateKind::Minus { .. } => {
                    let pos = st.minus_block(owner).iter().position(|&t| t == s).expect("phase in block");
                    base * overshoot[owner][pos]
                }
                StateKind::Plus { .. } => unreachable!("lower boundary uses down coordinates"),
            };
        } else {
            aff.h[(row, unknown[&(g, s)])] = 1.0;
        }
    };

    let all_alive = vec![true; n];
    let top_model = solver.band_model(&all_alive)?;
    let down_full = st.down_coords();
    let mut top_aff = Affine::zeros(down_full.len(), n_u);
    for (row, &s) in down_full.iter().enumerate() {
        lower_value(s, 0, &mut top_aff, row);
    }

    struct BandBuild {
        band: Band,
        plus: Affine,
        minus: Affine,
    }
    let mut builds = Vec::with_capacity(m_groups.saturating_sub(1));
    for g in 1..m_groups {
        let alive: Vec<bool> = (0..n).map(|i| k.group_of(i) >= g).collect();
        let model = solver.band_model(&alive)?;
        let r = &model.restriction;
        let local: HashMap<usize, usize> = r.kept.iter().enumerate().map(|(li, &s)| (s, li)).collect();
        let rst = &r.fe.states;
        let up = rst.up_coords();
        let down = rst.down_coords();
        let mut plus = Affine::zeros(up.len(), n_u);
        for (row, &ls) in up.iter().enumerate() {
            plus.h[(row, unknown[&(g - 1, r.kept[ls])])] = 1.0;
        }
        let mut minus = Affine::zeros(down.len(), n_u);
        for (row, &ls) in down.iter().enumerate() {
            lower_value(r.kept[ls], g, &mut minus, row);
        }
        let h_stop = Vector::from_iterator(r.stopped_regimes.len(), r.stopped_regimes.iter().map(|&i| h0[i]));
        let rate = &r.exit * h_stop;
        let op = ExitOperator::new(&r.fe, &model.fact, gl[g], gl[g - 1])?;
        builds.push(BandBuild {
            band: Band {
                lower: gl[g],
                upper: gl[g - 1],
                model: model.clone(),
                op,
                h_plus: Vector::zeros(0),
                h_minus: Vector::zeros(0),
                rate,
                local,
            },
            plus,
            minus,
        });
    }

    // Band value and derivative rows as affine expressions in the unknowns.
    let band_row = |bb: &BandBuild, x: f64, s: usize, deriv: bool| -> Result<(f64, Vec<f64>)> {
        let ls = bb.band.local[&s];
        let (pp, pm, pc) = if deriv {
            (
                bb.band.op.psi_plus_derivative(x)?,
                bb.band.op.psi_minus_derivative(x)?,
                bb.band.op.psi_circ_derivative_unchecked(b, x)?,
            )
        } else {
            (bb.band.op.psi_plus(x)?, bb.band.op.psi_minus(x)?, bb.band.op.psi_circ_unchecked(b, x)?)
        };
        let rp = pp.row(ls);
        let rm = pm.row(ls);
        let c = (rp * &bb.plus.c)[0] + (rm * &bb.minus.c)[0] + (pc.row(ls) * &bb.band.rate)[0];
        let h = rp * &bb.plus.h + rm * &bb.minus.h;
        Ok((c, h.iter().copied().collect()))
    };
    let top_row = |x: f64, s: usize, deriv: bool| -> Result<(f64, Vec<f64>)> {
        let phi = if deriv {
            phi_minus_derivative(&top_model.fact, gl[0], x)?
        } else {
            phi_minus(&top_model.fact, gl[0], x)?
        };
        let r = phi.row(s);
        Ok(((r * &top_aff.c)[0], (r * &top_aff.h).iter().copied().collect()))
    };

    let mut a = Mat::zeros(n_u, n_u);
    let mut rhs = Vector::zeros(n_u);
    let mut eq = 0;
    for g in 0..m_groups.saturating_sub(1) {
        let x = gl[g];
        let above = |s: usize, deriv: bool| {
            if g == 0 {
                top_row(x, s, deriv)
            } else {
                band_row(&builds[g - 1], x, s, deriv)
            }
        };
        let below = |s: usize, deriv: bool| band_row(&builds[g], x, s, deriv);
        for s in 0..fe.len() {
            if k.group_of(st.owner(s)) <= g {
                continue;
            }
            let (c, h) = match st.kind(s) {
                StateKind::Regime(_) => {
                    let (ca, ha) = above(s, true)?;
                    let (cb, hb) = below(s, true)?;
                    (ca - cb, ha.iter().zip(&hb).map(|(p, q)| p - q).collect::<Vec<_>>())
                }
                StateKind::Minus { .. } => {
                    let (cb, mut hb) = below(s, false)?;
                    hb[unknown[&(g, s)]] -= 1.0;
                    (cb, hb)
                }
                StateKind::Plus { .. } => {
                    let (ca, mut ha) = above(s, false)?;
                    ha[unknown[&(g, s)]] -= 1.0;
                    (ca, ha)
                }
            };
            for (j, v) in h.iter().enumerate() {
                a[(eq, j)] = *v;
            }
            rhs[eq] = -c;
            eq += 1;
        }
    }
    debug_assert_eq!(eq, n_u);

    let (u, condition) = if n_u > 0 {
        let cond = condition_number(&a);
        let u = solve_vec(&a, &rhs, "level matching system").map_err(|e| match e {
            Error::Singular { what, .. } => Error::Singular { what, condition: cond },
            other => other,
        })?;
        (u, cond)
    } else {
        (Vector::zeros(0), 1.0)
    };

    let top = TopBand { level: gl[0], model: top_model.clone(), h_minus: top_aff.eval(&u) };
    let bands: Vec<Band> = builds
        .into_iter()
        .map(|bb| {
            let mut band = bb.band;
            band.h_plus = bb.plus.eval(&u);
            band.h_minus = bb.minus.eval(&u);
            band
        })
        .collect();

    let mut pv = PiecewiseValue {
        b,
        h0: h0.to_vec(),
        levels: k.clone(),
        kinds: st.kinds().to_vec(),
        overshoot,
        top,
        bands,
        residuals: MatchingResiduals { value: 0.0, derivative: 0.0 },
        condition,
    };
    pv.residuals = pv.compute_residuals()?;
    if pv.residuals.value.max(pv.residuals.derivative) > MATCHING_TOL {
        return Err(Error::numerical(format!(
            "level matching residuals {:.3e} (value), {:.3e} (derivative); condition {condition:.3e}",
            pv.residuals.value, pv.residuals.derivative
        )));
    }
    Ok(pv)
}

impl PiecewiseValue {
    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn h0(&self) -> &[f64] {
        &self.h0
    }

    pub fn levels(&self) -> &LevelVector {
        &self.levels
    }

    pub fn residuals(&self) -> MatchingResiduals {
        self.residuals
    }

    /// Condition number of the matching system (1 when there is none).
    pub fn condition(&self) -> f64 {
        self.condition
    }

    fn state_of_regime(&self, i: usize) -> usize {
        self.kinds.iter().position(|k| *k == StateKind::Regime(i)).expect("regime state exists")
    }

    /// Index into `bands` for the band `[lower, upper)` holding `x`, or
    /// `None` above the highest level.
    fn band_index_right(&self, x: f64) -> Option<usize> {
        if x >= self.top.level {
            return None;
        }
        self.bands.iter().position(|b| x >= b.lower && x < b.upper)
    }

    fn band_index_left(&self, x: f64) -> Option<usize> {
        if x > self.top.level {
            return None;
        }
        self.bands.iter().position(|b| x > b.lower && x <= b.upper)
    }

    fn band_value(&self, band: &Band, x: f64, s: usize, deriv: bool) -> Result<f64> {
        Ok(self.band_terms(band, x, s, deriv)?.0)
    }

    /// Value and the sum of absolute contributions, for relative residuals.
    fn band_terms(&self, band: &Band, x: f64, s: usize, deriv: bool) -> Result<(f64, f64)> {
        let ls = *band.local.get(&s).ok_or_else(|| Error::Domain(format!("state {s} is stopped at x = {x}")))?;
        let (pp, pm, pc) = if deriv {
            (
                band.op.psi_plus_derivative(x)?,
                band.op.psi_minus_derivative(x)?,
                band.op.psi_circ_derivative_unchecked(self.b, x)?,
            )
        } else {
            (band.op.psi_plus(x)?, band.op.psi_minus(x)?, band.op.psi_circ_unchecked(self.b, x)?)
        };
        let mut value = 0.0;
        let mut mag = 0.0;
        for (m, v) in [(&pp, &band.h_plus), (&pm, &band.h_minus), (&pc, &band.rate)] {
            for (a, b) in m.row(ls).iter().zip(v.iter()) {
                value += a * b;
                mag += (a * b).abs();
            }
        }
        Ok((value, mag))
    }

    fn top_terms(&self, x: f64, s: usize, deriv: bool) -> Result<(f64, f64)> {
        let phi = if deriv {
            phi_minus_derivative(&self.top.model.fact, self.top.level, x)?
        } else {
            phi_minus(&self.top.model.fact, self.top.level, x)?
        };
        let mut value = 0.0;
        let mut mag = 0.0;
        for (a, b) in phi.row(s).iter().zip(self.top.h_minus.iter()) {
            value += a * b;
            mag += (a * b).abs();
        }
        Ok((value, mag))
    }

    fn top_value(&self, x: f64, s: usize, deriv: bool) -> Result<f64> {
        Ok(self.top_terms(x, s, deriv)?.0)
    }

    fn stopped_value(&self, x: f64, s: usize, deriv: bool) -> Result<f64> {
        let owner = self.kinds[s].regime();
        let base = self.b.powi(i32::from(deriv)) * (self.b * x).exp() * self.h0[owner];
        match self.kinds[s] {
            StateKind::Regime(_) => Ok(base),
            StateKind::Minus { regime, .. } => {
                let block: Vec<usize> = (0..self.kinds.len())
                    .filter(|&t| matches!(self.kinds[t], StateKind::Minus { regime: r, .. } if r == regime))
                    .collect();
                let pos = block.iter().position(|&t| t == s).expect("phase in block");
                Ok(base * self.overshoot[owner][pos])
            }
            StateKind::Plus { .. } => {
                Err(Error::Domain(format!("an upward jump in progress below its own level (state {s}) is not covered")))
            }
        }
    }

    /// Value at `x` for embedded state `s`.
    pub fn evaluate_state(&self, x: f64, s: usize) -> Result<f64> {
        let owner = self.kinds[s].regime();
        if x <= self.levels.level(owner) {
            return self.stopped_value(x, s, false);
        }
        match self.band_index_left(x) {
            None => self.top_value(x, s, false),
            Some(g) => self.band_value(&self.bands[g], x, s, false),
        }
    }

    /// `v(x, i)` for regime `i`.
    pub fn evaluate(&self, x: f64, i: usize) -> f64 {
        self.evaluate_state(x, self.state_of_regime(i)).expect("regime states are always covered")
    }

    /// Right derivative in `x` of `v(x, i)`.
    pub fn derivative(&self, x: f64, i: usize) -> f64 {
        let s = self.state_of_regime(i);
        let result = if x < self.levels.level(i) {
            self.stopped_value(x, s, true)
        } else {
            match self.band_index_right(x) {
                None => self.top_value(x, s, true),
                Some(g) => self.band_value(&self.bands[g], x, s, true),
            }
        };
        result.expect("regime states are always covered")
    }

    /// Right derivative at the regime's own level.
    pub fn derivative_at_level(&self, i: usize) -> f64 {
        self.derivative(self.levels.level(i), i)
    }

    /// Boundary values at the lower edge of band `g` (0 is the top band),
    /// keyed by full-embedding state index.
    pub fn lower_boundary(&self, g: usize) -> Vec<(usize, f64)> {
        if g == 0 {
            let first = self.kinds.iter().position(|k| !matches!(k, StateKind::Plus { .. })).unwrap_or(0);
            return self.top.h_minus.iter().enumerate().map(|(r, v)| (first + r, *v)).collect();
        }
        let band = &self.bands[g - 1];
        let r = &band.model.restriction;
        r.fe.states.down_coords().iter().zip(band.h_minus.iter()).map(|(&ls, v)| (r.kept[ls], *v)).collect()
    }

    /// Continuity defects at every interior level, each relative to the
    /// magnitude of the terms that produce it.
    pub fn compute_residuals(&self) -> Result<MatchingResiduals> {
        let mut value: f64 = 0.0;
        let mut derivative: f64 = 0.0;
        let gl = self.levels.group_levels();
        for (g, &x) in gl.iter().enumerate().take(gl.len().saturating_sub(1)) {
            let below = &self.bands[g];
            let above = |s: usize, deriv: bool| {
                if g == 0 {
                    self.top_terms(x, s, deriv)
                } else {
                    self.band_terms(&self.bands[g - 1], x, s, deriv)
                }
            };
            for s in 0..self.kinds.len() {
                if self.levels.group_of(self.kinds[s].regime()) <= g {
                    continue;
                }
                let (a, ma) = above(s, false)?;
                let (b, mb) = self.band_terms(below, x, s, false)?;
                value = value.max((a - b).abs() / ma.max(mb).max(1.0));
                if matches!(self.kinds[s], StateKind::Regime(_)) {
                    let (a, ma) = above(s, true)?;
                    let (b, mb) = self.band_terms(below, x, s, true)?;
                    derivative = derivative.max((a - b).abs() / ma.max(mb).max(1.0));
                }
            }
        }
        Ok(MatchingResiduals { value, derivative })
    }
}
