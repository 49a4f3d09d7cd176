// NaN must fail every check, hence the negated comparisons.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use common::*;
use rand::Rng;
use regswitch::american_put::two_regime::closed_form_q_minus;
use regswitch::american_put::{two_regime_roots, PutPricer, PutSolution, TwoRegimeParams};
use regswitch::embedding::{embed, StateKind};
use regswitch::exit::{gerber_shiu, ExitOperator, Penalty};
use regswitch::first_passage::{LevelVector, PassageSolver};
use regswitch::linalg::{Mat, Vector};
use regswitch::mc_oracle::{martingale_check, simulate_put, simulate_ruin, simulate_to_level, PathConfig};
use regswitch::measure::to_emm;
use regswitch::model::{ModelSpec, RegimeParams};
use regswitch::phase_type::{DoublePhaseType, PhaseType};
use regswitch::wiener_hopf::{alternate_factorization, classify, solve_factorization, Recurrence};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)*) => {
        if !$cond {
            return Err(format!($($fmt)*));
        }
    };
}

fn ok<T>(r: regswitch::Result<T>, what: &str) -> Result<T, String> {
    r.map_err(|e| format!("{what}: {e}"))
}

fn within_runtime(start: Instant, limit_s: f64, detail: String) -> Outcome {
    let t = start.elapsed().as_secs_f64();
    ensure!(t < limit_s, "{detail}; runtime {t:.1} s exceeds {limit_s} s");
    Ok(detail)
}

fn generator_ok(q: &Mat) -> bool {
    let n = q.nrows();
    let scale = q.amax().max(1.0);
    (0..n).all(|i| (0..n).all(|j| i == j || q[(i, j)] >= 0.0) && q.row(i).sum() <= 1e-14 * scale)
}

fn subprob_ok(eta: &Mat) -> bool {
    eta.iter().all(|v| *v >= 0.0) && (0..eta.nrows()).all(|i| eta.row(i).sum() <= 1.0 + 1e-14)
}

fn wh_residuals() -> Outcome {
    let start = Instant::now();
    let mut rng = rng(101);
    let mut worst: f64 = 0.0;
    for case in 0..50 {
        let n = rng.random_range(1..=4);
        let m = random_model(&mut rng, n, 3);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..0.3)).collect();
        let fe = ok(embed(&m, &a), "embed")?;
        let f = ok(solve_factorization(&fe), &format!("model {case}"))?;
        let (rp, rm) = f.residuals(&fe);
        worst = worst.max(rp).max(rm);
        ensure!(rp < 1e-9 && rm < 1e-9, "model {case}: residuals {rp:.2e}, {rm:.2e}");
        ensure!(generator_ok(&f.q_plus) && generator_ok(&f.q_minus), "model {case}: Q+- not a generator");
        ensure!(subprob_ok(&f.eta_plus) && subprob_ok(&f.eta_minus), "model {case}: eta+- rows not sub-probability");
    }
    within_runtime(start, 60.0, format!("50 models, max residual {worst:.2e}"))
}

fn lemma_roots() -> Outcome {
    let start = Instant::now();
    let mut rng = rng(202);
    for case in 0..100 {
        let m = random_two_regime(&mut rng);
        let p = ok(TwoRegimeParams::from_model(&m), "params")?;
        let g = p.g();
        let g0 = g.eval(0.0);
        let want = p.alpha * ((p.q1 + p.r1) * (p.q2 + p.r2) - p.q1 * p.q2);
        ensure!(g0 > 0.0 && (g0 - want).abs() <= 1e-12 * want, "set {case}: g(0) = {g0}, expected {want}");
        let roots = ok(g.roots(), "roots")?;
        ensure!(roots.len() == 5, "set {case}: degree {}", roots.len());
        let scale = roots.iter().map(|z| z.norm()).fold(1.0, f64::max);
        ensure!(roots.iter().all(|z| z.im.abs() < 1e-9 * scale), "set {case}: complex roots {roots:?}");
        let neg = roots.iter().filter(|z| z.re < 0.0).count();
        ensure!(neg == 3, "set {case}: {neg} negative roots");
        let sorted = ok(two_regime_roots(&p), "two_regime_roots")?;
        ensure!(sorted[2] < 0.0 && sorted[3] > 0.0, "set {case}: pattern {sorted:?}");
    }
    within_runtime(start, 5.0, "100 parameter sets, 3 negative / 2 positive".into())
}

fn two_regime_q_minus() -> Outcome {
    let start = Instant::now();
    let mut rng = rng(303);
    let mut worst: f64 = 0.0;
    for case in 0..20 {
        let m = random_two_regime(&mut rng);
        let p = ok(TwoRegimeParams::from_model(&m), "params")?;
        let fe = ok(embed(&m, &[p.r1, p.r2]), "embed")?;
        let f = ok(solve_factorization(&fe), "factorization")?;
        let q = ok(closed_form_q_minus(&p), "closed form")?;
        let d = (q - &f.q_minus).amax();
        worst = worst.max(d);
        ensure!(d < 1e-8, "model {case}: entrywise difference {d:.2e}");
    }
    within_runtime(start, 10.0, format!("20 models, max difference {worst:.2e}"))
}

fn mckean() -> Outcome {
    let start = Instant::now();
    let (r, sigma, strike) = (0.05, 0.3, 1.0);
    let gamma = 2.0 * r / (sigma * sigma);
    let s_star = gamma * strike / (1.0 + gamma);
    let exact = |s: f64| if s <= s_star { strike - s } else { (strike - s_star) * (s / s_star).powf(-gamma) };
    let m = ok(
        ModelSpec::new(Mat::zeros(1, 1), vec![RegimeParams::diffusion(r, r - 0.5 * sigma * sigma, sigma)], 0.0, 0),
        "model",
    )?;
    let sol = ok(PutPricer::new(&m, strike).and_then(|p| p.solve_optimal()), "solve")?;
    let e = sol.k()[0].exp();
    ensure!((e - s_star).abs() < 1e-8, "boundary {e} vs {s_star}");
    let mut worst: f64 = 0.0;
    for j in 0..50 {
        let s = 0.3 + 2.7 * j as f64 / 49.0;
        worst = worst.max((sol.value(s, 0) - exact(s)).abs());
    }
    ensure!(worst < 1e-8, "value error {worst:.2e}");
    within_runtime(start, 1.0, format!("boundary error {:.1e}, value error {worst:.1e}", (e - s_star).abs()))
}

fn check_smooth_fit(pricer: &PutPricer, sol: &PutSolution, name: &str) -> Result<f64, String> {
    let k = sol.k().to_vec();
    let n = k.len();
    let mut worst: f64 = 0.0;
    for (j, &kj) in k.iter().enumerate() {
        let r = (sol.derivative_log(kj, j) + kj.exp()).abs();
        worst = worst.max(r);
        ensure!(r < 1e-6, "{name}: smooth fit residual {r:.2e} in regime {j}");
    }
    let lo = k.iter().copied().fold(f64::INFINITY, f64::min) - 0.5;
    let hi = k.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 1.5;
    let grid: Vec<f64> = (0..60).map(|t| lo + (hi - lo) * t as f64 / 59.0).collect();
    for j in 0..n {
        for delta in [-1e-3, 1e-3] {
            let mut kp = k.clone();
            kp[j] += delta;
            let alt = ok(pricer.price_given_levels(&kp), name)?;
            for &x in &grid {
                for i in 0..n {
                    let (a, b) = (alt.value_log(x, i), sol.value_log(x, i));
                    ensure!(a <= b + 1e-8, "{name}: k{j}{delta:+} beats optimum at x={x:.3}, i={i}: {a} > {b}");
                }
            }
        }
    }
    Ok(worst)
}

fn smooth_fit() -> Outcome {
    let mut models = vec![
        (
            "single regime".to_string(),
            ok(
                ModelSpec::new(Mat::zeros(1, 1), vec![RegimeParams::diffusion(0.05, 0.05 - 0.045, 0.3)], 0.0, 0),
                "model",
            )?,
        ),
        ("two regime".into(), example_two_regime()),
        ("two regime, diffusion first".into(), two_regime(0.3, 0.5, 0.12, 0.02, 0.2, 0.35, 0.5, 4.0)),
        ("three regime".into(), example_three_regime()),
    ];
    let mut rng = rng(505);
    for c in 0..4 {
        models.push((format!("random two regime {c}"), random_two_regime(&mut rng)));
    }
    let mut worst: f64 = 0.0;
    for (name, m) in &models {
        let pricer = ok(PutPricer::new(m, 1.0), name)?;
        let sol = ok(pricer.solve_optimal(), name)?;
        worst = worst.max(check_smooth_fit(&pricer, &sol, name)?);
    }
    Ok(format!("{} models, max smooth-fit residual {worst:.2e}, perturbations dominated", models.len()))
}

fn total_probability() -> Outcome {
    let mut rng = rng(606);
    let mut worst: f64 = 0.0;
    for case in 0..20 {
        let n = rng.random_range(1..=4);
        let m = random_model(&mut rng, n, 3);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..0.3)).collect();
        let fe = ok(embed(&m, &a), "embed")?;
        let f = ok(solve_factorization(&fe), "factorization")?;
        let (lo, hi) = (-rng.random_range(0.1..1.0), rng.random_range(0.1..1.0));
        let op = ok(ExitOperator::new(&fe, &f, lo, hi), "exit operator")?;
        let kill = fe.kill();
        for t in 0..50 {
            let x = (lo + (hi - lo) * t as f64 / 49.0).min(hi);
            let total = ok(op.psi_plus(x), "psi+")?.column_sum()
                + ok(op.psi_minus(x), "psi-")?.column_sum()
                + ok(op.psi_circ(0.0, x), "psi0")? * &kill;
            let d = total.iter().fold(0.0f64, |m, v| m.max((v - 1.0).abs()));
            worst = worst.max(d);
            ensure!(d < 1e-8, "model {case}, x = {x}: defect {d:.2e}");
        }
    }
    Ok(format!("20 models x 50 points, max defect {worst:.2e}"))
}

fn mc_case(
    name: &str,
    m: &ModelSpec,
    levels: &[f64],
    h0: &[f64],
    cfg: &PathConfig,
    lines: &mut Vec<String>,
) -> Result<(), String> {
    let n = m.n_regimes();
    let a: Vec<f64> = m.regimes().iter().map(|r| r.r).collect();
    let check = |what: String, est: regswitch::mc_oracle::Estimate, target: f64, lines: &mut Vec<String>| {
        let z = est.z_score(target);
        lines.push(format!("{what}: analytic {target:.6} mc {:.6} se {:.1e} z {z:.2}", est.mean, est.std_error));
        ensure!(z <= 3.0, "{what}: {z:.2} standard errors off");
        ensure!(est.censored_mass < 1e-4, "{what}: censored mass {:.2e}", est.censored_mass);
        Ok(())
    };

    let solver = ok(PassageSolver::new(m, &a), name)?;
    let lv = ok(LevelVector::new(levels), name)?;
    for b in [0.0, 1.0] {
        let pv = ok(solver.solve(&lv, b, h0), name)?;
        let est = ok(simulate_to_level(m, &a, levels, b, h0, cfg), name)?;
        check(format!("{name} passage b={b}"), est, pv.evaluate(m.x0, m.z0), lines)?;
    }

    let pricer = ok(PutPricer::new(m, 1.0), name)?;
    let sol = ok(pricer.solve_optimal(), name)?;
    let est = ok(simulate_put(m, 1.0, sol.k(), cfg), name)?;
    check(format!("{name} put"), est, sol.value_log(m.x0, m.z0), lines)?;

    let mut shifted = m.clone();
    shifted.x0 = 0.3;
    let fe = ok(embed(m, &a), name)?;
    let f = ok(solve_factorization(&fe), name)?;
    let ruin = ok(gerber_shiu(m, &fe, &f, shifted.x0, m.z0, &Penalty::One), name)?;
    let est = ok(simulate_ruin(&shifted, &a, cfg), name)?;
    check(format!("{name} ruin"), est, ruin, lines)?;
    ensure!(n == levels.len(), "level count");
    Ok(())
}

fn monte_carlo() -> Outcome {
    let start = Instant::now();
    let cfg = PathConfig::new(100_000, 7);
    let mut lines = Vec::new();
    mc_case("two regime", &example_two_regime(), &[-0.2, -0.35], &[1.0, 0.6], &cfg, &mut lines)?;
    mc_case("three regime", &example_three_regime(), &[-0.15, -0.3, -0.22], &[1.0, 0.5, 1.5], &cfg, &mut lines)?;
    for l in &lines {
        println!("    {l}");
    }
    within_runtime(start, 300.0, format!("{} comparisons within 3 SE", lines.len()))
}

fn measure_change() -> Outcome {
    let mut rng = rng(808);
    let cfg = PathConfig { antithetic: true, ..PathConfig::new(100_000, 9) };
    let (mut worst_res, mut worst_idem, mut worst_z): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for case in 0..30 {
        let n = rng.random_range(1..=4);
        let m = random_model(&mut rng, n, 3);
        let q = ok(to_emm(&m), &format!("model {case}"))?;
        let res = ok(q.martingale_residuals(), "residuals")?.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        worst_res = worst_res.max(res);
        ensure!(res < 1e-9, "model {case}: martingale residual {res:.2e}");
        let qq = ok(to_emm(&q), "second application")?;
        let idem = model_distance(&q, &qq);
        worst_idem = worst_idem.max(idem);
        ensure!(idem < 1e-9, "model {case}: idempotence defect {idem:.2e}");
        let est = ok(martingale_check(&q, 1.0, &cfg), "mc")?;
        let z = est.z_score(1.0);
        worst_z = worst_z.max(z);
        ensure!(z <= 3.0, "model {case}: E[e^-R S_1]/S_0 = {} +- {:.1e}", est.mean, est.std_error);
    }
    Ok(format!("30 models, residual {worst_res:.1e}, idempotence {worst_idem:.1e}, max z {worst_z:.2}"))
}

fn model_distance(a: &ModelSpec, b: &ModelSpec) -> f64 {
    let mut d = (a.generator() - b.generator()).amax();
    for (x, y) in a.regimes().iter().zip(b.regimes()) {
        d = d.max((x.mu - y.mu).abs()).max((x.sigma - y.sigma).abs()).max((x.lambda - y.lambda).abs());
        if let (Some(jx), Some(jy)) = (&x.jumps, &y.jumps) {
            d = d.max((jx.p() - jy.p()).abs());
            for (px, py) in [(jx.plus(), jy.plus()), (jx.minus(), jy.minus())] {
                if let (Some(px), Some(py)) = (px, py) {
                    d = d.max((px.generator() - py.generator()).amax()).max((px.alpha() - py.alpha()).amax());
                }
            }
        }
    }
    d
}

fn non_uniqueness() -> Outcome {
    let g = Mat::from_row_slice(2, 2, &[-0.5, 0.5, 0.7, -0.7]);
    let down =
        DoublePhaseType::new(0.3, Some(PhaseType::exponential(4.0).unwrap()), Some(PhaseType::erlang(2, 3.0).unwrap()))
            .unwrap();
    let m = ok(
        ModelSpec::new(
            g.clone(),
            vec![RegimeParams::diffusion(0.0, -0.1, 0.25), RegimeParams::with_jumps(0.0, 0.02, 0.3, 0.8, down)],
            0.0,
            0,
        ),
        "model",
    )?;
    let fe = ok(embed(&m, &[0.0, 0.0]), "embed")?;
    let f = ok(solve_factorization(&fe), "primary")?;
    ensure!(f.recurrence == Recurrence::DriftDown, "expected drift down, got {:?}", f.recurrence);
    let alt = ok(alternate_factorization(&f), "alternate")?;
    let (rp, rm) = alt.residuals(&fe);
    let diff = (&alt.q_plus - &f.q_plus).amax().max((&alt.eta_plus - &f.eta_plus).amax());
    ensure!(rp.max(rm) < 1e-9, "alternate residuals {rp:.2e}, {rm:.2e}");
    ensure!(diff > 1e-3, "alternate differs by only {diff:.2e}");

    // Mean slope 0.1 - 0.5 / 5 = 0 in regime 0, 0 in regime 1.
    let jumps = DoublePhaseType::only_down(PhaseType::exponential(5.0).unwrap());
    let osc = ok(
        ModelSpec::new(
            g,
            vec![RegimeParams::with_jumps(0.0, 0.1, 0.2, 0.5, jumps), RegimeParams::diffusion(0.0, 0.0, 0.3)],
            0.0,
            0,
        ),
        "model",
    )?;
    let fe = ok(embed(&osc, &[0.0, 0.0]), "embed")?;
    let (class, _) = ok(classify(&fe), "classify")?;
    ensure!(class == Recurrence::Oscillating, "expected oscillating, got {class:?}");
    let f = ok(solve_factorization(&fe), "oscillating")?;
    let top = |q: &Mat| -> Result<f64, String> {
        Ok(ok(regswitch::linalg::eigenvalues(q), "eigenvalues")?.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max))
    };
    let (tp, tm) = (top(&f.q_plus)?, top(&f.q_minus)?);
    ensure!(tp.abs() < 1e-8 && tm.abs() < 1e-8, "top eigenvalues {tp:.2e}, {tm:.2e}");
    let (rp, rm) = f.residuals(&fe);
    Ok(format!(
        "alternate residual {:.1e}, difference {diff:.3}; oscillating top eigenvalues {tp:.1e}, {tm:.1e}, residual {:.1e}",
        rp.max(rm),
        rp.max(rm)
    ))
}

fn overshoot(m: &ModelSpec, regime: usize, phase: usize, b: f64) -> f64 {
    let d = m.regime(regime).jumps.as_ref().and_then(|j| j.minus()).expect("down phases");
    let t = d.generator();
    let exit = -t * Vector::from_element(t.nrows(), 1.0);
    let a = Mat::identity(t.nrows(), t.nrows()) * b - t;
    a.lu().solve(&exit).expect("invertible")[phase]
}

fn matching() -> Outcome {
    let mut rng = rng(1010);
    let (mut worst_res, mut worst_dd): (f64, f64) = (0.0, 0.0);
    let mut checked = 0;
    for case in 0..20 {
        let m = random_model(&mut rng, 3, 3);
        let a: Vec<f64> = (0..3).map(|_| rng.random_range(0.05..0.3)).collect();
        let mut levels: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..0.0)).collect();
        levels.sort_by(|x, y| y.partial_cmp(x).unwrap());
        levels[1] -= 0.05;
        levels[2] -= 0.1;
        let h0: Vec<f64> = (0..3).map(|_| rng.random_range(0.5..2.0)).collect();
        let b = if case % 2 == 0 { 0.0 } else { 0.5 };
        let lv = ok(LevelVector::new(&levels), "levels")?;
        ensure!(lv.groups().len() == 3, "model {case}: levels not distinct");
        let solver = ok(PassageSolver::new(&m, &a), "solver")?;
        let pv = ok(solver.solve(&lv, b, &h0), &format!("model {case}"))?;
        let r = ok(pv.compute_residuals(), "residuals")?;
        worst_res = worst_res.max(r.value).max(r.derivative);
        ensure!(r.value < 1e-8 && r.derivative < 1e-8, "model {case}: residuals {:.2e}, {:.2e}", r.value, r.derivative);
        let kinds = solver.embedding().states.kinds().to_vec();
        for (g, &level) in lv.group_levels().iter().enumerate() {
            for (s, v) in pv.lower_boundary(g) {
                let want = match kinds[s] {
                    StateKind::Regime(i) if lv.group_of(i) == g => (b * level).exp() * h0[i],
                    StateKind::Minus { regime, phase } if lv.group_of(regime) == g => {
                        (b * level).exp() * overshoot(&m, regime, phase, b) * h0[regime]
                    }
                    _ => continue,
                };
                let d = (v - want).abs() / want.abs().max(1e-300);
                worst_dd = worst_dd.max(d);
                checked += 1;
                ensure!(d < 1e-13, "model {case}, band {g}, state {s}: {v} vs {want}");
            }
        }
    }
    Ok(format!("20 models, max residual {worst_res:.1e}, {checked} boundary entries, max rel error {worst_dd:.1e}"))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("Wiener-Hopf residuals and generator checks", wh_residuals),
        ("two-regime root structure", lemma_roots),
        ("two-regime Q- cross-check", two_regime_q_minus),
        ("single-regime put oracle", mckean),
        ("smooth fit and optimality", smooth_fit),
        ("two-sided exit total probability", total_probability),
        ("Monte Carlo agreement", monte_carlo),
        ("measure change", measure_change),
        ("non-uniqueness and oscillating certificate", non_uniqueness),
        ("level matching system", matching),
    ];
    let mut failed = 0;
    for (n, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS [{}] {name}: {detail} ({secs:.2} s)", n + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{}] {name}: {detail} ({secs:.2} s)", n + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
