//! Monte Carlo for `(X, Z)` and for the fluid embedding `(A, Y)`.
//!
//! Between regime switches and jumps the log-price is a Brownian motion with
//! drift, so one-sided barrier crossings are sampled exactly: the hitting time
//! is inverse Gaussian (or Levy when driftless) and a surviving endpoint is
//! drawn from the normal law by rejection against the bridge crossing
//! probability. Two-sided exits, or any run with `dt` set, use a time grid
//! with the Brownian-bridge crossing correction. Discounting is carried as a
//! deterministic weight `exp(-R)` instead of a killing event.
//!
//! Every path draws from its own ChaCha stream `(seed, path)`, and sums are
//! pairwise over the path-ordered values, so results do not depend on the
//! thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, InverseGaussian, StandardNormal};

use crate::embedding::{FluidEmbedding, StateKind};
use crate::error::{Error, Result};
use crate::exit::{phi_minus, phi_plus, ExitOperator};
use crate::linalg::{pairwise_sum, stationary_distribution, Mat};
use crate::model::ModelSpec;
use crate::phase_type::DoublePhaseType;
use crate::wiener_hopf::WHFactorization;

/// Paths whose discount weight falls below this are stopped and counted as
/// censored.
pub const WEIGHT_FLOOR: f64 = 1e-14;
const REJECTION_TRIES: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct PathConfig {
    pub n_paths: usize,
    pub seed: u64,
    /// Maximum simulated time; `None` picks one from the discount rates.
    pub horizon: Option<f64>,
    /// Time grid for Brownian segments; `None` samples crossings exactly.
    pub dt: Option<f64>,
    pub antithetic: bool,
}

impl Default for PathConfig {
    fn default() -> Self {
        PathConfig { n_paths: 100_000, seed: 1, horizon: None, dt: None, antithetic: false }
    }
}

impl PathConfig {
    pub fn new(n_paths: usize, seed: u64) -> Self {
        PathConfig { n_paths, seed, ..Default::default() }
    }

    fn validate(&self) -> Result<()> {
        if self.n_paths < 2 {
            return Err(Error::invalid("need at least 2 paths"));
        }
        if let Some(h) = self.horizon {
            if !(h > 0.0) {
                return Err(Error::invalid(format!("horizon must be positive, got {h}")));
            }
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0) {
                return Err(Error::invalid(format!("dt must be positive, got {dt}")));
            }
        }
        Ok(())
    }

    fn rng(&self, path: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(path as u64);
        rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    /// Discount weight still alive when paths were cut off.
    pub censored_mass: f64,
    pub n_paths: usize,
}

impl Estimate {
    fn from_values(values: &[f64], censored: &[f64]) -> Self {
        let n = values.len();
        let mean = pairwise_sum(values) / n as f64;
        let dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
        let var = pairwise_sum(&dev) / (n as f64 - 1.0);
        Estimate {
            mean,
            std_error: (var / n as f64).sqrt(),
            censored_mass: pairwise_sum(censored) / n as f64,
            n_paths: n,
        }
    }

    /// `|mean - target|` in standard errors.
    pub fn z_score(&self, target: f64) -> f64 {
        let d = (self.mean - target).abs();
        if self.std_error > 0.0 {
            d / self.std_error
        } else if d < 1e-12 * target.abs().max(1.0) {
            0.0
        } else {
            f64::INFINITY
        }
    }

    pub fn agrees(&self, target: f64, n_se: f64) -> bool {
        self.z_score(target) <= n_se
    }
}

fn map_paths<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

fn exp_time<R: Rng>(rng: &mut R, rate: f64) -> f64 {
    let e: f64 = Exp1.sample(rng);
    if rate > 0.0 {
        e / rate
    } else {
        f64::INFINITY
    }
}

/// First time a Brownian motion at distance `d >= 0` from a barrier reaches
/// it, with drift `toward` in the barrier's direction.
fn hitting_time<R: Rng>(rng: &mut R, d: f64, toward: f64, sigma: f64) -> f64 {
    if sigma <= 0.0 {
        return if d <= 0.0 && toward >= 0.0 {
            0.0
        } else if toward > 0.0 {
            d / toward
        } else {
            f64::INFINITY
        };
    }
    if d <= 0.0 {
        return 0.0;
    }
    let s2 = sigma * sigma;
    let mut nu = toward;
    if nu < 0.0 {
        // Drift away: hit with probability exp(-2|nu|d/s2), and given a hit
        // the path behaves as if the drift were reflected.
        let u: f64 = rng.random();
        if u >= (2.0 * nu * d / s2).exp() {
            return f64::INFINITY;
        }
        nu = -nu;
    }
    if nu == 0.0 {
        let z: f64 = StandardNormal.sample(rng);
        return d * d / (s2 * z * z);
    }
    match InverseGaussian::new(d / nu, d * d / s2) {
        Ok(ig) => ig.sample(rng),
        Err(_) => d / nu,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Segment {
    Survived(f64),
    Lower(f64),
    Upper(f64),
}

/// One Brownian segment of length `tau` (finite) started at `x`, absorbed at
/// optional barriers. `sign` flips the Gaussian draws for antithetic pairs.
#[allow(clippy::too_many_arguments)]
fn segment<R: Rng>(
    rng: &mut R,
    x: f64,
    mu: f64,
    sigma: f64,
    tau: f64,
    lower: Option<f64>,
    upper: Option<f64>,
    dt: Option<f64>,
    sign: f64,
) -> Segment {
    if sigma <= 0.0 {
        let y = x + mu * tau;
        let tl = lower.map_or(f64::INFINITY, |k| hitting_time(rng, x - k, -mu, 0.0));
        let tu = upper.map_or(f64::INFINITY, |l| hitting_time(rng, l - x, mu, 0.0));
        return if tl <= tau && tl <= tu {
            Segment::Lower(tl)
        } else if tu <= tau {
            Segment::Upper(tu)
        } else {
            Segment::Survived(y)
        };
    }
    let s2 = sigma * sigma;
    if dt.is_some() || (lower.is_some() && upper.is_some()) {
        let h_max = dt.unwrap_or(1e-4);
        let n = (tau / h_max).ceil().max(1.0) as usize;
        let h = tau / n as f64;
        let mut y = x;
        if lower.is_some_and(|k| y <= k) {
            return Segment::Lower(0.0);
        }
        if upper.is_some_and(|l| y >= l) {
            return Segment::Upper(0.0);
        }
        for step in 0..n {
            let z: f64 = StandardNormal.sample(rng);
            let next = y + mu * h + sign * sigma * h.sqrt() * z;
            let t_end = (step + 1) as f64 * h;
            if let Some(k) = lower {
                let p = if next <= k { 1.0 } else { (-2.0 * (y - k) * (next - k) / (s2 * h)).exp() };
                if p >= 1.0 || rng.random::<f64>() < p {
                    return Segment::Lower(t_end);
                }
            }
            if let Some(l) = upper {
                let p = if next >= l { 1.0 } else { (-2.0 * (l - y) * (l - next) / (s2 * h)).exp() };
                if p >= 1.0 || rng.random::<f64>() < p {
                    return Segment::Upper(t_end);
                }
            }
            y = next;
        }
        return Segment::Survived(y);
    }
    let draw = |rng: &mut R| {
        let z: f64 = StandardNormal.sample(rng);
        x + mu * tau + sign * sigma * tau.sqrt() * z
    };
    let (barrier, below) = match (lower, upper) {
        (Some(k), None) => (k, true),
        (None, Some(l)) => (l, false),
        _ => return Segment::Survived(draw(rng)),
    };
    let d = if below { x - barrier } else { barrier - x };
    let hit = hitting_time(rng, d, if below { -mu } else { mu }, sigma);
    if hit <= tau {
        return if below { Segment::Lower(hit) } else { Segment::Upper(hit) };
    }
    for _ in 0..REJECTION_TRIES {
        let y = draw(rng);
        let e = if below { y - barrier } else { barrier - y };
        if e <= 0.0 {
            continue;
        }
        let p = (-2.0 * d * e / (s2 * tau)).exp();
        if rng.random::<f64>() >= p {
            return Segment::Survived(y);
        }
    }
    // Survival was very unlikely yet happened; stay just inside.
    let y = x + mu * tau;
    Segment::Survived(if below { y.max(barrier + 1e-12) } else { y.min(barrier - 1e-12) })
}

struct SimRegime {
    mu: f64,
    sigma: f64,
    kill: f64,
    jump_rate: f64,
    jumps: Option<DoublePhaseType>,
    switch: Vec<(usize, f64)>,
    rate: f64,
}

fn sim_regimes(m: &ModelSpec, a: &[f64]) -> Result<Vec<SimRegime>> {
    let n = m.n_regimes();
    if a.len() != n {
        return Err(Error::invalid(format!("expected {n} discount rates, got {}", a.len())));
    }
    if let Some(i) = a.iter().position(|v| !(*v >= 0.0)) {
        return Err(Error::Domain(format!("discount rate a[{i}] must be nonnegative")));
    }
    let g = m.generator();
    Ok(m.regimes()
        .iter()
        .enumerate()
        .map(|(i, reg)| {
            let switch: Vec<(usize, f64)> =
                (0..n).filter(|&j| j != i && g[(i, j)] > 0.0).map(|j| (j, g[(i, j)])).collect();
            let jump_rate = if reg.jumps.is_some() { reg.lambda } else { 0.0 };
            let mut rate = jump_rate;
            for (_, q) in &switch {
                rate += q;
            }
            SimRegime { mu: reg.mu, sigma: reg.sigma, kill: a[i], jump_rate, jumps: reg.jumps.clone(), switch, rate }
        })
        .collect())
}

/// Picks an index from `(target, rate)` pairs given `u` uniform on `[0, total)`.
fn pick(targets: &[(usize, f64)], u: f64) -> usize {
    let mut acc = 0.0;
    for &(j, q) in targets {
        acc += q;
        if u < acc {
            return j;
        }
    }
    targets.last().expect("a state with positive exit rate has targets").0
}

/// Time until the weight drops below the floor.
fn weight_room(r: f64, kill: f64) -> f64 {
    if kill > 0.0 {
        ((-WEIGHT_FLOOR.ln()) - r).max(0.0) / kill
    } else {
        f64::INFINITY
    }
}

fn default_horizon(kills: impl Iterator<Item = f64>, g: &Mat) -> f64 {
    let min_kill = kills.fold(f64::INFINITY, f64::min);
    if min_kill > 0.0 && min_kill.is_finite() {
        // The weight floor stops paths first.
        return f64::INFINITY;
    }
    let gap = crate::linalg::eigenvalues(g)
        .ok()
        .and_then(|ev| {
            ev.iter()
                .map(|z| -z.re)
                .filter(|v| *v > 1e-12)
                .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.min(v))))
        })
        .unwrap_or(1.0);
    200.0 / gap
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoppedSample {
    pub t: f64,
    pub x: f64,
    pub z: usize,
    /// Accumulated discount `R_T`.
    pub discount: f64,
    pub censored: bool,
}

fn stopped_path<R: Rng>(
    regimes: &[SimRegime],
    k: &[f64],
    x0: f64,
    z0: usize,
    horizon: f64,
    dt: Option<f64>,
    rng: &mut R,
) -> StoppedSample {
    let (mut t, mut x, mut z, mut r) = (0.0, x0, z0, 0.0);
    loop {
        if x <= k[z] {
            return StoppedSample { t, x, z, discount: r, censored: false };
        }
        let reg = &regimes[z];
        let event = exp_time(rng, reg.rate);
        let tau = event.min(horizon - t).min(weight_room(r, reg.kill));
        if !tau.is_finite() {
            return StoppedSample { t, x, z, discount: r, censored: true };
        }
        match segment(rng, x, reg.mu, reg.sigma, tau, Some(k[z]), None, dt, 1.0) {
            Segment::Lower(h) => {
                return StoppedSample { t: t + h, x: k[z], z, discount: r + reg.kill * h, censored: false };
            }
            Segment::Survived(y) => {
                t += tau;
                r += reg.kill * tau;
                x = y;
            }
            Segment::Upper(_) => unreachable!("no upper barrier"),
        }
        if tau < event {
            return StoppedSample { t, x, z, discount: r, censored: true };
        }
        let u = rng.random::<f64>() * reg.rate;
        if u < reg.jump_rate {
            x += reg.jumps.as_ref().expect("jump rate implies a jump law").sample(rng);
        } else {
            z = pick(&reg.switch, u - reg.jump_rate);
        }
    }
}

/// Samples `(T, X_T, Z_T, R_T)` for passage below `k(Z)` from the model's
/// initial state.
pub fn sample_stopped(m: &ModelSpec, a: &[f64], k: &[f64], cfg: &PathConfig) -> Result<Vec<StoppedSample>> {
    cfg.validate()?;
    let regimes = sim_regimes(m, a)?;
    if k.len() != regimes.len() || k.iter().any(|v| v.is_nan()) {
        return Err(Error::invalid(format!("expected {} levels", regimes.len())));
    }
    let horizon = cfg.horizon.unwrap_or_else(|| default_horizon(a.iter().copied(), m.generator()));
    Ok(map_paths(cfg.n_paths, |p| {
        let mut rng = cfg.rng(p);
        stopped_path(&regimes, k, m.x0, m.z0, horizon, cfg.dt, &mut rng)
    }))
}

fn stopped_estimate(samples: &[StoppedSample], payoff: impl Fn(f64, usize) -> f64) -> Estimate {
    let mut values = Vec::with_capacity(samples.len());
    let mut censored = Vec::with_capacity(samples.len());
    for s in samples {
        let w = (-s.discount).exp();
        if s.censored {
            values.push(0.0);
            censored.push(w);
        } else {
            values.push(w * payoff(s.x, s.z));
            censored.push(0.0);
        }
    }
    Estimate::from_values(&values, &censored)
}

/// `E[exp(-R_T + b X_T) h0(Z_T)]` for passage below `k(Z)`.
pub fn simulate_to_level(
    m: &ModelSpec,
    a: &[f64],
    k: &[f64],
    b: f64,
    h0: &[f64],
    cfg: &PathConfig,
) -> Result<Estimate> {
    if h0.len() != m.n_regimes() {
        return Err(Error::invalid("h0 has the wrong length"));
    }
    let samples = sample_stopped(m, a, k, cfg)?;
    Ok(stopped_estimate(&samples, |x, z| (b * x).exp() * h0[z]))
}

/// Discounted put payoff `(K - S_T)+` at passage below `k(Z)`, discounting at
/// the short rate.
pub fn simulate_put(m: &ModelSpec, strike: f64, k: &[f64], cfg: &PathConfig) -> Result<Estimate> {
    let a: Vec<f64> = m.regimes().iter().map(|r| r.r).collect();
    let samples = sample_stopped(m, &a, k, cfg)?;
    Ok(stopped_estimate(&samples, |x, _| (strike - x.exp()).max(0.0)))
}

/// `E[exp(-R_T); T < inf]` for ruin below 0 with discount rates `a`.
pub fn simulate_ruin(m: &ModelSpec, a: &[f64], cfg: &PathConfig) -> Result<Estimate> {
    let k = vec![0.0; m.n_regimes()];
    let samples = sample_stopped(m, a, &k, cfg)?;
    Ok(stopped_estimate(&samples, |_, _| 1.0))
}

/// `E[exp(-int_0^t r) S_t] / S_0`; equals 1 under a martingale measure.
pub fn martingale_check(m: &ModelSpec, t_end: f64, cfg: &PathConfig) -> Result<Estimate> {
    cfg.validate()?;
    if !(t_end > 0.0) {
        return Err(Error::invalid("time must be positive"));
    }
    let rates: Vec<f64> = m.regimes().iter().map(|r| r.r).collect();
    let regimes = sim_regimes(m, &rates)?;
    let path = |rng: &mut ChaCha8Rng, sign: f64| {
        let (mut t, mut x, mut z, mut r) = (0.0, 0.0, m.z0, 0.0);
        loop {
            let reg = &regimes[z];
            let event = exp_time(rng, reg.rate);
            let tau = event.min(t_end - t);
            if let Segment::Survived(y) = segment(rng, x, reg.mu, reg.sigma, tau, None, None, None, sign) {
                x = y;
            }
            t += tau;
            r += reg.kill * tau;
            if tau < event {
                return (x - r).exp();
            }
            let u = rng.random::<f64>() * reg.rate;
            if u < reg.jump_rate {
                x += reg.jumps.as_ref().expect("jump law").sample(rng);
            } else {
                z = pick(&reg.switch, u - reg.jump_rate);
            }
        }
    };
    let values: Vec<f64> = if cfg.antithetic {
        map_paths(cfg.n_paths / 2, |p| {
            let v1 = path(&mut cfg.rng(p), 1.0);
            let v2 = path(&mut cfg.rng(p), -1.0);
            0.5 * (v1 + v2)
        })
    } else {
        map_paths(cfg.n_paths, |p| path(&mut cfg.rng(p), 1.0))
    };
    let zeros = vec![0.0; values.len()];
    Ok(Estimate::from_values(&values, &zeros))
}

/// Time fraction spent in each regime over `[0, horizon]`, from the model's
/// initial regime.
pub fn occupation_fractions(m: &ModelSpec, horizon: f64, cfg: &PathConfig) -> Result<Vec<Estimate>> {
    cfg.validate()?;
    let n = m.n_regimes();
    let g = m.generator();
    let fractions = map_paths(cfg.n_paths, |p| {
        let mut rng = cfg.rng(p);
        let mut occ = vec![0.0; n];
        let (mut t, mut z) = (0.0, m.z0);
        while t < horizon {
            let targets: Vec<(usize, f64)> = (0..n).filter(|&j| j != z).map(|j| (j, g[(z, j)])).collect();
            let rate: f64 = targets.iter().map(|t| t.1).sum();
            let tau = exp_time(&mut rng, rate).min(horizon - t);
            occ[z] += tau;
            t += tau;
            if t < horizon {
                z = pick(&targets, rng.random::<f64>() * rate);
            }
        }
        occ.iter().map(|o| o / horizon).collect::<Vec<f64>>()
    });
    let zeros = vec![0.0; fractions.len()];
    Ok((0..n)
        .map(|i| {
            let v: Vec<f64> = fractions.iter().map(|f| f[i]).collect();
            Estimate::from_values(&v, &zeros)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Functional {
    /// First passage of `A` to or below the level.
    Down { level: f64 },
    /// First passage to or above the level.
    Up { level: f64 },
    /// First exit from `(lower, upper)`.
    TwoSided { lower: f64, upper: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum EmbeddedOutcome {
    Lower(usize),
    Upper(usize),
    Censored,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct EmbeddedPath {
    outcome: EmbeddedOutcome,
    a: f64,
    t_regime: f64,
    discount: f64,
}

struct EmbeddedRates {
    targets: Vec<Vec<(usize, f64)>>,
    rate: Vec<f64>,
    kill: Vec<f64>,
}

fn embedded_rates(fe: &FluidEmbedding) -> EmbeddedRates {
    let n = fe.len();
    let kill = fe.kill();
    let mut targets = Vec::with_capacity(n);
    let mut rate = Vec::with_capacity(n);
    for s in 0..n {
        let t: Vec<(usize, f64)> =
            (0..n).filter(|&j| j != s && fe.q[(s, j)] > 0.0).map(|j| (j, fe.q[(s, j)])).collect();
        let mut total = 0.0;
        for (_, q) in &t {
            total += q;
        }
        targets.push(t);
        rate.push(total);
    }
    EmbeddedRates { targets, rate, kill: kill.iter().copied().collect() }
}

/// Simulates `(A, Y)` until a barrier is reached. With `excise`, `E+-`
/// states never stop the path and the passage is only checked in `E0`,
/// which is the time change back to `(X, Z)`.
#[allow(clippy::too_many_arguments)]
fn embedded_path<R: Rng>(
    fe: &FluidEmbedding,
    rates: &EmbeddedRates,
    start: usize,
    x: f64,
    lower: &dyn Fn(usize) -> Option<f64>,
    upper: &dyn Fn(usize) -> Option<f64>,
    horizon: f64,
    dt: Option<f64>,
    rng: &mut R,
) -> EmbeddedPath {
    let (mut t, mut a, mut s, mut r, mut t_regime) = (0.0, x, start, 0.0, 0.0);
    loop {
        let (lo, hi) = (lower(s), upper(s));
        if lo.is_some_and(|k| a < k) {
            return EmbeddedPath { outcome: EmbeddedOutcome::Lower(s), a, t_regime, discount: r };
        }
        if hi.is_some_and(|l| a > l) {
            return EmbeddedPath { outcome: EmbeddedOutcome::Upper(s), a, t_regime, discount: r };
        }
        let event = exp_time(rng, rates.rate[s]);
        let tau = event.min(horizon - t).min(weight_room(r, rates.kill[s]));
        if !tau.is_finite() {
            return EmbeddedPath { outcome: EmbeddedOutcome::Censored, a, t_regime, discount: r };
        }
        let in_regime = matches!(fe.states.kind(s), StateKind::Regime(_));
        let seg = segment(rng, a, fe.drift[s], fe.vol[s], tau, lo, hi, dt, 1.0);
        let elapsed = match seg {
            Segment::Lower(h) | Segment::Upper(h) => h,
            Segment::Survived(_) => tau,
        };
        t += elapsed;
        r += rates.kill[s] * elapsed;
        if in_regime {
            t_regime += elapsed;
        }
        match seg {
            Segment::Lower(_) => {
                return EmbeddedPath { outcome: EmbeddedOutcome::Lower(s), a: lo.unwrap(), t_regime, discount: r };
            }
            Segment::Upper(_) => {
                return EmbeddedPath { outcome: EmbeddedOutcome::Upper(s), a: hi.unwrap(), t_regime, discount: r };
            }
            Segment::Survived(y) => a = y,
        }
        if tau < event {
            return EmbeddedPath { outcome: EmbeddedOutcome::Censored, a, t_regime, discount: r };
        }
        s = pick(&rates.targets[s], rng.random::<f64>() * rates.rate[s]);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingEstimate {
    /// Per embedded state: discounted probability of leaving through the lower
    /// barrier in that state.
    pub lower: Vec<Estimate>,
    pub upper: Vec<Estimate>,
    pub censored_mass: f64,
}

/// Passage functionals of `(A, Y)` started in state `start` at `x`.
pub fn simulate_embedding(
    fe: &FluidEmbedding,
    start: usize,
    x: f64,
    functional: Functional,
    cfg: &PathConfig,
) -> Result<EmbeddingEstimate> {
    cfg.validate()?;
    if start >= fe.len() {
        return Err(Error::invalid(format!("start state {start} out of range")));
    }
    let (lo, hi) = match functional {
        Functional::Down { level } => (Some(level), None),
        Functional::Up { level } => (None, Some(level)),
        Functional::TwoSided { lower, upper } => {
            if !(lower < upper) {
                return Err(Error::invalid("two-sided exit needs lower < upper"));
            }
            (Some(lower), Some(upper))
        }
    };
    let rates = embedded_rates(fe);
    let horizon = cfg.horizon.unwrap_or_else(|| {
        let zero = fe.states.zero();
        let g = crate::linalg::select(&fe.q, &zero.clone().collect::<Vec<_>>(), &zero.collect::<Vec<_>>());
        default_horizon(rates.kill.iter().copied().filter(|v| *v > 0.0).chain([0.0]), &g)
    });
    let lower = move |_: usize| lo;
    let upper = move |_: usize| hi;
    let paths = map_paths(cfg.n_paths, |p| {
        let mut rng = cfg.rng(p);
        embedded_path(fe, &rates, start, x, &lower, &upper, horizon, cfg.dt, &mut rng)
    });
    let n = fe.len();
    let zeros = vec![0.0; paths.len()];
    let per_state = |want: &dyn Fn(EmbeddedOutcome) -> Option<usize>| -> Vec<Estimate> {
        (0..n)
            .map(|j| {
                let v: Vec<f64> =
                    paths.iter().map(|p| if want(p.outcome) == Some(j) { (-p.discount).exp() } else { 0.0 }).collect();
                Estimate::from_values(&v, &zeros)
            })
            .collect()
    };
    let lower_est = per_state(&|o| if let EmbeddedOutcome::Lower(s) = o { Some(s) } else { None });
    let upper_est = per_state(&|o| if let EmbeddedOutcome::Upper(s) = o { Some(s) } else { None });
    let censored: Vec<f64> =
        paths.iter().map(|p| if p.outcome == EmbeddedOutcome::Censored { (-p.discount).exp() } else { 0.0 }).collect();
    Ok(EmbeddingEstimate {
        lower: lower_est,
        upper: upper_est,
        censored_mass: pairwise_sum(&censored) / paths.len() as f64,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PassageReport {
    /// Embedded-state indices of the compared columns.
    pub states: Vec<usize>,
    pub analytic: Vec<f64>,
    pub estimates: Vec<Estimate>,
    pub max_z: f64,
    pub censored_mass: f64,
}

fn report(states: Vec<usize>, analytic: Vec<f64>, estimates: Vec<Estimate>, censored_mass: f64) -> PassageReport {
    let max_z = analytic.iter().zip(&estimates).map(|(a, e)| e.z_score(*a)).fold(0.0, f64::max);
    PassageReport { states, analytic, estimates, max_z, censored_mass }
}

/// Compares the one-sided passage law from `(start, x)` to `level` with
/// `W+ e^{Q+ (level - x)}` (level above) or `W- e^{Q- (x - level)}` (below).
pub fn ladder_mc_check(
    fe: &FluidEmbedding,
    f: &WHFactorization,
    start: usize,
    x: f64,
    level: f64,
    cfg: &PathConfig,
) -> Result<PassageReport> {
    if level >= x {
        let phi = phi_plus(f, level, x)?;
        let est = simulate_embedding(fe, start, x, Functional::Up { level }, cfg)?;
        let cols = fe.states.up_coords();
        let analytic = cols.iter().enumerate().map(|(c, _)| phi[(start, c)]).collect();
        let estimates = cols.iter().map(|&s| est.upper[s]).collect();
        Ok(report(cols, analytic, estimates, est.censored_mass))
    } else {
        let phi = phi_minus(f, level, x)?;
        let est = simulate_embedding(fe, start, x, Functional::Down { level }, cfg)?;
        let cols = fe.states.down_coords();
        let analytic = cols.iter().enumerate().map(|(c, _)| phi[(start, c)]).collect();
        let estimates = cols.iter().map(|&s| est.lower[s]).collect();
        Ok(report(cols, analytic, estimates, est.censored_mass))
    }
}

/// Compares the two-sided exit split from `(start, x)` with `Psi+` and `Psi-`.
pub fn exit_mc_check(
    op: &ExitOperator,
    start: usize,
    x: f64,
    cfg: &PathConfig,
) -> Result<(PassageReport, PassageReport)> {
    let fe = op.embedding();
    let est = simulate_embedding(fe, start, x, Functional::TwoSided { lower: op.lower(), upper: op.upper() }, cfg)?;
    let pp = op.psi_plus(x)?;
    let pm = op.psi_minus(x)?;
    let up = fe.states.up_coords();
    let down = fe.states.down_coords();
    let plus = report(
        up.clone(),
        (0..up.len()).map(|c| pp[(start, c)]).collect(),
        up.iter().map(|&s| est.upper[s]).collect(),
        est.censored_mass,
    );
    let minus = report(
        down.clone(),
        (0..down.len()).map(|c| pm[(start, c)]).collect(),
        down.iter().map(|&s| est.lower[s]).collect(),
        est.censored_mass,
    );
    Ok((plus, minus))
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(|x, y| x.total_cmp(y));
    b.sort_by(|x, y| x.total_cmp(y));
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeChangeReport {
    pub ks_time: f64,
    pub ks_position: f64,
    /// Total variation distance between the regime laws at passage.
    pub tv_regime: f64,
    pub stopped_direct: usize,
    pub stopped_embedded: usize,
}

/// Simulates `(X, Z)` directly and `(A, Y)` observed only on `E0`, both until
/// passage below `k(Z)`, and compares the `(T, X_T, Z_T)` samples.
pub fn time_change_consistency(
    m: &ModelSpec,
    fe: &FluidEmbedding,
    k: &[f64],
    horizon: f64,
    cfg: &PathConfig,
) -> Result<TimeChangeReport> {
    cfg.validate()?;
    let n = m.n_regimes();
    if k.len() != n {
        return Err(Error::invalid(format!("expected {n} levels")));
    }
    let zero_kill: Vec<f64> = vec![0.0; n];
    let regimes = sim_regimes(m, &zero_kill)?;
    let direct: Vec<StoppedSample> = map_paths(cfg.n_paths, |p| {
        let mut rng = cfg.rng(p);
        stopped_path(&regimes, k, m.x0, m.z0, horizon, cfg.dt, &mut rng)
    });
    let rates = embedded_rates(fe);
    let start = fe.states.regime_state(m.z0).ok_or_else(|| Error::invalid("initial regime is not embedded"))?;
    let st = &fe.states;
    let lower = |s: usize| match st.kind(s) {
        StateKind::Regime(i) => Some(k[i]),
        _ => None,
    };
    let upper = |_: usize| None;
    let embedded: Vec<EmbeddedPath> = map_paths(cfg.n_paths, |p| {
        let mut rng = cfg.rng(p);
        embedded_path(fe, &rates, start, m.x0, &lower, &upper, horizon, cfg.dt, &mut rng)
    });

    let direct: Vec<&StoppedSample> = direct.iter().filter(|s| !s.censored).collect();
    let embedded: Vec<(f64, f64, usize)> = embedded
        .iter()
        .filter_map(|p| match p.outcome {
            EmbeddedOutcome::Lower(s) => Some((p.t_regime, p.a, st.owner(s))),
            _ => None,
        })
        .collect();
    if direct.is_empty() || embedded.is_empty() {
        return Err(Error::numerical("no path reached the level before the horizon"));
    }
    let t1: Vec<f64> = direct.iter().map(|s| s.t).collect();
    let t2: Vec<f64> = embedded.iter().map(|s| s.0).collect();
    let x1: Vec<f64> = direct.iter().map(|s| s.x).collect();
    let x2: Vec<f64> = embedded.iter().map(|s| s.1).collect();
    let mut tv = 0.0;
    for i in 0..n {
        let p1 = direct.iter().filter(|s| s.z == i).count() as f64 / direct.len() as f64;
        let p2 = embedded.iter().filter(|s| s.2 == i).count() as f64 / embedded.len() as f64;
        tv += 0.5 * (p1 - p2).abs();
    }
    Ok(TimeChangeReport {
        ks_time: ks_distance(&t1, &t2),
        ks_position: ks_distance(&x1, &x2),
        tv_regime: tv,
        stopped_direct: direct.len(),
        stopped_embedded: embedded.len(),
    })
}

/// Stationary law of the regime chain, for comparison with
/// [`occupation_fractions`].
pub fn stationary_law(m: &ModelSpec) -> Result<Vec<f64>> {
    Ok(stationary_distribution(m.generator())?.iter().copied().collect())
}
