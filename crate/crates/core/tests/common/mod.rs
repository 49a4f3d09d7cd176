#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regswitch::linalg::{Mat, Vector};
use regswitch::model::{ModelSpec, RegimeParams};
use regswitch::phase_type::{DoublePhaseType, PhaseType};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Diagonal rates in `[lo, hi]`, at least 40% of each row's rate exits.
pub fn random_ph(rng: &mut impl Rng, phases: usize, lo: f64, hi: f64) -> PhaseType {
    let mut alpha: Vec<f64> = (0..phases).map(|_| rng.random_range(0.1..1.0)).collect();
    let s: f64 = alpha.iter().sum();
    alpha.iter_mut().for_each(|a| *a /= s);
    let mut t = Mat::zeros(phases, phases);
    for i in 0..phases {
        let d = rng.random_range(lo..hi);
        t[(i, i)] = -d;
        if phases > 1 {
            let budget = rng.random_range(0.0..0.6) * d;
            let w: Vec<f64> = (0..phases - 1).map(|_| rng.random_range(0.0..1.0)).collect();
            let ws: f64 = w.iter().sum::<f64>().max(1e-12);
            let mut c = 0;
            for j in 0..phases {
                if j != i {
                    t[(i, j)] = budget * w[c] / ws;
                    c += 1;
                }
            }
        }
    }
    PhaseType::new(Vector::from_vec(alpha), t).unwrap()
}

pub fn random_generator(rng: &mut impl Rng, n: usize) -> Mat {
    let mut g = Mat::zeros(n, n);
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            if i != j {
                g[(i, j)] = rng.random_range(0.3..1.2) / (n - 1).max(1) as f64;
                row += g[(i, j)];
            }
        }
        g[(i, i)] = -row;
    }
    g
}

/// Up-jump phases have rates of at least 3, so the unit transform exists.
pub fn random_regime(rng: &mut impl Rng, max_phases: usize, jumps: bool) -> RegimeParams {
    let r = rng.random_range(0.01..0.12);
    let mu = rng.random_range(-0.15..0.15);
    let sigma = rng.random_range(0.1..0.45);
    if !jumps || rng.random_bool(0.2) {
        return RegimeParams::diffusion(r, mu, sigma);
    }
    let lambda = rng.random_range(0.2..1.5);
    let up = rng.random_range(0..=max_phases);
    let down = if up == 0 { rng.random_range(1..=max_phases) } else { rng.random_range(0..=max_phases) };
    let plus = (up > 0).then(|| random_ph(rng, up, 3.0, 9.0));
    let minus = (down > 0).then(|| random_ph(rng, down, 1.0, 8.0));
    let p = match (&plus, &minus) {
        (Some(_), Some(_)) => rng.random_range(0.2..0.8),
        (Some(_), None) => 1.0,
        _ => 0.0,
    };
    RegimeParams::with_jumps(r, mu, sigma, lambda, DoublePhaseType::new(p, plus, minus).unwrap())
}

pub fn random_model(rng: &mut impl Rng, n: usize, max_phases: usize) -> ModelSpec {
    let g = random_generator(rng, n);
    let regimes = (0..n).map(|_| random_regime(rng, max_phases, true)).collect();
    ModelSpec::new(g, regimes, 0.0, 0).unwrap()
}

/// Diffusion regime 0 and exponential down-jump regime 1, risk neutral.
#[allow(clippy::too_many_arguments)]
pub fn two_regime(q1: f64, q2: f64, r1: f64, r2: f64, s1: f64, s2: f64, lambda: f64, alpha: f64) -> ModelSpec {
    let g = Mat::from_row_slice(2, 2, &[-q1, q1, q2, -q2]);
    let jumps = DoublePhaseType::only_down(PhaseType::exponential(alpha).unwrap());
    let mu2 = r2 - 0.5 * s2 * s2 + lambda / (alpha + 1.0);
    ModelSpec::new(
        g,
        vec![RegimeParams::diffusion(r1, r1 - 0.5 * s1 * s1, s1), RegimeParams::with_jumps(r2, mu2, s2, lambda, jumps)],
        0.0,
        0,
    )
    .unwrap()
}

pub fn random_two_regime(rng: &mut impl Rng) -> ModelSpec {
    two_regime(
        rng.random_range(0.1..1.0),
        rng.random_range(0.1..1.0),
        rng.random_range(0.01..0.15),
        rng.random_range(0.01..0.15),
        rng.random_range(0.1..0.5),
        rng.random_range(0.1..0.5),
        rng.random_range(0.1..2.0),
        rng.random_range(1.0..10.0),
    )
}

/// The running example: a calm diffusion regime and a jumpy regime.
pub fn example_two_regime() -> ModelSpec {
    two_regime(0.3, 0.5, 0.03, 0.08, 0.3, 0.2, 0.8, 3.0)
}

/// Three regimes with two-sided phase-type jumps, risk neutral.
pub fn example_three_regime() -> ModelSpec {
    let g = Mat::from_row_slice(3, 3, &[-0.9, 0.5, 0.4, 0.3, -0.7, 0.4, 0.6, 0.2, -0.8]);
    let j1 =
        DoublePhaseType::new(0.4, Some(PhaseType::exponential(6.0).unwrap()), Some(PhaseType::erlang(2, 5.0).unwrap()))
            .unwrap();
    let j3 = DoublePhaseType::only_down(PhaseType::exponential(3.0).unwrap());
    ModelSpec::new(
        g,
        vec![
            RegimeParams::with_jumps(0.04, 0.0, 0.25, 0.8, j1),
            RegimeParams::diffusion(0.06, 0.0, 0.3),
            RegimeParams::with_jumps(0.03, 0.0, 0.2, 0.5, j3),
        ],
        0.0,
        0,
    )
    .unwrap()
    .with_projected_drift()
    .unwrap()
}
