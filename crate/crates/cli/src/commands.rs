use std::path::Path;
use std::time::Instant;

use regswitch::american_put::PutPricer;
use regswitch::embedding::{embed, FluidEmbedding, StateKind};
use regswitch::exit::{gerber_shiu, ExitOperator, Penalty};
use regswitch::first_passage::{LevelVector, PassageSolver};
use regswitch::linalg::Mat;
use regswitch::mc_oracle::{self, PathConfig};
use regswitch::measure::{tilt_solution, to_emm};
use regswitch::model::ModelSpec;
use regswitch::wiener_hopf::{solve_factorization, spectral_data, Recurrence};
use serde_json::{json, Value};

use crate::report::{Cell, Report, Section};
use crate::{Cli, CliError, Command, KillArg};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Target {
    Passage,
    Put,
    Ruin,
}

type CmdResult = Result<Report, CliError>;

fn validation(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

pub fn load_model(path: &Path, project_drift: bool) -> Result<ModelSpec, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| validation(format!("{}: {e}", path.display())))?;
    let m = ModelSpec::from_json(&text)?;
    Ok(if project_drift { m.with_projected_drift()? } else { m })
}

fn model_value(m: &ModelSpec) -> Value {
    serde_json::from_str(&m.to_json()).expect("model JSON")
}

fn kill_rates(m: &ModelSpec, k: &KillArg) -> Result<Vec<f64>, CliError> {
    match &k.kill {
        Some(a) if a.len() != m.n_regimes() => {
            Err(validation(format!("--kill has {} entries, the model has {} regimes", a.len(), m.n_regimes())))
        }
        Some(a) => Ok(a.clone()),
        None => Ok(m.regimes().iter().map(|r| r.r).collect()),
    }
}

fn per_regime(m: &ModelSpec, v: &Option<Vec<f64>>, what: &str, default: f64) -> Result<Vec<f64>, CliError> {
    match v {
        Some(v) if v.len() != m.n_regimes() => {
            Err(validation(format!("--{what} has {} entries, the model has {} regimes", v.len(), m.n_regimes())))
        }
        Some(v) => Ok(v.clone()),
        None => Ok(vec![default; m.n_regimes()]),
    }
}

fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| if i + 1 == n { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 }).collect()
}

fn label(k: StateKind) -> String {
    match k {
        StateKind::Plus { regime, phase } => format!("+{regime}.{phase}"),
        StateKind::Regime(i) => format!("{i}"),
        StateKind::Minus { regime, phase } => format!("-{regime}.{phase}"),
    }
}

fn rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn recurrence_name(r: Recurrence) -> &'static str {
    match r {
        Recurrence::Transient => "transient",
        Recurrence::Oscillating => "oscillating",
        Recurrence::DriftDown => "drift-down",
        Recurrence::DriftUp => "drift-up",
    }
}

pub fn dispatch(cli: &Cli) -> CmdResult {
    let pd = cli.project_drift;
    match &cli.command {
        Command::Emm { model, out } => emm(&load_model(&model.model, false)?, out.as_deref()),
        Command::Factorize { model, kill, dump_generator } => {
            let m = load_model(&model.model, pd)?;
            factorize(&m, &kill_rates(&m, kill)?, *dump_generator)
        }
        Command::Exit { model, kill, lower, upper, x } => {
            let m = load_model(&model.model, pd)?;
            let xs = x.clone().unwrap_or_else(|| grid(*lower, *upper, 11));
            exit(&m, &kill_rates(&m, kill)?, *lower, *upper, &xs)
        }
        Command::Passage { model, kill, levels, b, h0, x } => {
            let m = load_model(&model.model, pd)?;
            let h0 = per_regime(&m, h0, "h0", 1.0)?;
            passage(&m, &kill_rates(&m, kill)?, levels, *b, &h0, x.as_deref())
        }
        Command::Price { model, strike, levels, spots } => {
            let m = load_model(&model.model, pd)?;
            price(&m, *strike, levels.as_deref(), spots.as_deref())
        }
        Command::Ruin { model, kill, x, penalty } => {
            let m = load_model(&model.model, pd)?;
            ruin(&m, &kill_rates(&m, kill)?, x, penalty)
        }
        Command::Simulate { model, kill, target, levels, b, h0, strike, x0, paths, dt, seed, horizon, compare } => {
            let mut m = load_model(&model.model, pd)?;
            if let Some(x0) = x0 {
                m.x0 = *x0;
            }
            let cfg = PathConfig { n_paths: *paths, seed: *seed, horizon: *horizon, dt: *dt, antithetic: false };
            let a = kill_rates(&m, kill)?;
            let h0 = per_regime(&m, h0, "h0", 1.0)?;
            simulate(&m, &a, *target, levels.as_deref(), *b, &h0, *strike, &cfg, *compare)
        }
    }
}

pub fn emm(m: &ModelSpec, out: Option<&Path>) -> CmdResult {
    let mut r = Report::new("emm", json!({ "model": model_value(m) }));
    let t = Instant::now();
    let tilt = tilt_solution(m)?;
    let q = to_emm(m)?;
    r.timing("transform", t);
    let rows = (0..m.n_regimes())
        .map(|i| vec![Cell::Int(i), tilt.a[i].into(), tilt.h[i].into(), q.regime(i).mu.into()])
        .collect();
    r.push(Section::Table {
        name: "tilt".into(),
        columns: vec!["regime".into(), "a".into(), "h".into(), "mu".into()],
        rows,
    });
    r.push(Section::Scalar("eigenvalue".into(), tilt.lam.into()));
    r.push(Section::Json("model".into(), model_value(&q)));
    let res = q.martingale_residuals()?.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    r.residual("martingale", res);
    if let Some(path) = out {
        std::fs::write(path, q.to_json() + "\n").map_err(|e| validation(format!("{}: {e}", path.display())))?;
    }
    Ok(r)
}

fn embedding_for(m: &ModelSpec, a: &[f64]) -> Result<FluidEmbedding, CliError> {
    Ok(embed(m, a)?)
}

pub fn factorize(m: &ModelSpec, a: &[f64], dump: bool) -> CmdResult {
    let mut r = Report::new("factorize", json!({ "model": model_value(m), "kill": a }));
    let t = Instant::now();
    let fe = embedding_for(m, a)?;
    let f = solve_factorization(&fe)?;
    let spec = spectral_data(&fe)?;
    r.timing("factorize", t);

    let st = &fe.states;
    let labels = |idx: Vec<usize>| -> Vec<Cell> { idx.into_iter().map(|s| Cell::Text(label(st.kind(s)))).collect() };
    r.push(Section::Scalar("recurrence".into(), recurrence_name(f.recurrence).into()));
    if let Some(d) = f.drift {
        r.push(Section::Scalar("drift".into(), d.into()));
    }
    let mut roots: Vec<_> = spec.roots.clone();
    roots.sort_by(|x, y| x.re.partial_cmp(&y.re).unwrap().then(x.im.partial_cmp(&y.im).unwrap()));
    r.push(Section::Table {
        name: "roots".into(),
        columns: vec!["re".into(), "im".into()],
        rows: roots.iter().map(|z| vec![z.re.into(), z.im.into()]).collect(),
    });
    r.push(Section::Table {
        name: "states".into(),
        columns: vec!["index".into(), "state".into()],
        rows: (0..st.len()).map(|s| vec![Cell::Int(s), Cell::Text(label(st.kind(s)))]).collect(),
    });
    r.push(Section::Table {
        name: "ladder_states".into(),
        columns: vec!["side".into(), "state".into()],
        rows: labels(st.up_coords())
            .into_iter()
            .map(|c| vec![Cell::from("up"), c])
            .chain(labels(st.down_coords()).into_iter().map(|c| vec![Cell::from("down"), c]))
            .collect(),
    });
    r.push(Section::Matrix("q_minus".into(), rows(&f.q_minus)));
    r.push(Section::Matrix("q_plus".into(), rows(&f.q_plus)));
    r.push(Section::Matrix("eta_minus".into(), rows(&f.eta_minus)));
    r.push(Section::Matrix("eta_plus".into(), rows(&f.eta_plus)));
    if dump {
        r.push(Section::Matrix("generator".into(), rows(&fe.q)));
        r.push(Section::List("drift_vector".into(), fe.drift.iter().copied().collect()));
        r.push(Section::List("volatility".into(), fe.vol.iter().copied().collect()));
    }
    let (rp, rm) = f.residuals(&fe);
    r.residual("plus", rp);
    r.residual("minus", rm);
    Ok(r)
}

pub fn exit(m: &ModelSpec, a: &[f64], lower: f64, upper: f64, xs: &[f64]) -> CmdResult {
    let mut r =
        Report::new("exit", json!({ "model": model_value(m), "kill": a, "lower": lower, "upper": upper, "x": xs }));
    let t = Instant::now();
    let fe = embedding_for(m, a)?;
    let f = solve_factorization(&fe)?;
    let op = ExitOperator::new(&fe, &f, lower, upper)?;
    let kill = fe.kill();
    let mut table = Vec::new();
    let mut defect: f64 = 0.0;
    for &x in xs {
        let up = op.psi_plus(x)?.column_sum();
        let down = op.psi_minus(x)?.column_sum();
        let killed = op.psi_circ(0.0, x)? * &kill;
        for i in 0..m.n_regimes() {
            let s = fe.states.regime_state(i).expect("regime state");
            defect = defect.max((up[s] + down[s] + killed[s] - 1.0).abs());
            table.push(vec![x.into(), Cell::Int(i), up[s].into(), down[s].into(), killed[s].into()]);
        }
    }
    r.timing("exit", t);
    r.push(Section::Table {
        name: "exit".into(),
        columns: vec!["x".into(), "regime".into(), "upper".into(), "lower".into(), "killed".into()],
        rows: table,
    });
    r.residual("total_probability", defect);
    r.residual("condition", op.condition());
    Ok(r)
}

pub fn passage(m: &ModelSpec, a: &[f64], levels: &[f64], b: f64, h0: &[f64], xs: Option<&[f64]>) -> CmdResult {
    if levels.len() != m.n_regimes() {
        return Err(validation(format!(
            "--levels has {} entries, the model has {} regimes",
            levels.len(),
            m.n_regimes()
        )));
    }
    let lo = levels.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = levels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let xs = xs.map(<[f64]>::to_vec).unwrap_or_else(|| grid(lo, hi + 1.0, 11));
    let mut r = Report::new(
        "passage",
        json!({ "model": model_value(m), "kill": a, "levels": levels, "b": b, "h0": h0, "x": xs }),
    );
    let t = Instant::now();
    let solver = PassageSolver::new(m, a)?;
    let lv = LevelVector::new(levels)?;
    let pv = solver.solve(&lv, b, h0)?;
    r.timing("solve", t);
    let mut table = Vec::new();
    for &x in &xs {
        for i in 0..m.n_regimes() {
            table.push(vec![x.into(), Cell::Int(i), pv.evaluate(x, i).into(), pv.derivative(x, i).into()]);
        }
    }
    r.push(Section::Table {
        name: "value".into(),
        columns: vec!["x".into(), "regime".into(), "value".into(), "derivative".into()],
        rows: table,
    });
    let res = pv.residuals();
    r.residual("value_matching", res.value);
    r.residual("derivative_matching", res.derivative);
    r.residual("condition", pv.condition());
    Ok(r)
}

pub fn price(m: &ModelSpec, strike: f64, levels: Option<&[f64]>, spots: Option<&[f64]>) -> CmdResult {
    let mut r =
        Report::new("price", json!({ "model": model_value(m), "strike": strike, "levels": levels, "spots": spots }));
    let t = Instant::now();
    let pricer = PutPricer::new(m, strike)?;
    let sol = match levels {
        Some(k) => pricer.price_given_levels(k)?,
        None => pricer.solve_optimal()?,
    };
    r.timing("solve", t);
    let k = sol.k().to_vec();
    r.push(Section::Table {
        name: "exercise".into(),
        columns: vec!["regime".into(), "k".into(), "boundary".into(), "smooth_fit".into()],
        rows: (0..k.len())
            .map(|i| vec![Cell::Int(i), k[i].into(), k[i].exp().into(), sol.smooth_fit[i].into()])
            .collect(),
    });
    let spots = spots.map(<[f64]>::to_vec).unwrap_or_else(|| grid(0.5 * strike, 1.5 * strike, 11));
    if let Some(s) = spots.iter().find(|s| s.is_nan() || **s <= 0.0) {
        return Err(validation(format!("spot prices must be positive, got {s}")));
    }
    let mut table = Vec::new();
    for &s in &spots {
        for i in 0..k.len() {
            table.push(vec![s.into(), Cell::Int(i), sol.value(s, i).into(), (strike - s).max(0.0).into()]);
        }
    }
    r.push(Section::Table {
        name: "value".into(),
        columns: vec!["spot".into(), "regime".into(), "value".into(), "payoff".into()],
        rows: table,
    });
    r.push(Section::Scalar("iterations".into(), Cell::Int(sol.iterations)));
    r.residual("smooth_fit", sol.max_smooth_fit_residual());
    let m0 = sol.v0.residuals();
    let m1 = sol.v1.residuals();
    r.residual("matching", m0.value.max(m0.derivative).max(m1.value).max(m1.derivative));
    Ok(r)
}

fn parse_penalty(s: &str) -> Result<Penalty<'static>, CliError> {
    let bad = || validation(format!("unknown penalty {s:?}; use one, regime:J or exp:THETA"));
    match s.split_once(':') {
        None if s == "one" => Ok(Penalty::One),
        Some(("regime", j)) => Ok(Penalty::Regime(j.parse().map_err(|_| bad())?)),
        Some(("exp", t)) => Ok(Penalty::Exp(t.parse().map_err(|_| bad())?)),
        _ => Err(bad()),
    }
}

pub fn ruin(m: &ModelSpec, a: &[f64], xs: &[f64], penalty: &str) -> CmdResult {
    let pen = parse_penalty(penalty)?;
    let mut r = Report::new("ruin", json!({ "model": model_value(m), "kill": a, "x": xs, "penalty": penalty }));
    let t = Instant::now();
    let fe = embedding_for(m, a)?;
    let f = solve_factorization(&fe)?;
    let mut table = Vec::new();
    for &x in xs {
        for i in 0..m.n_regimes() {
            table.push(vec![x.into(), Cell::Int(i), gerber_shiu(m, &fe, &f, x, i, &pen)?.into()]);
        }
    }
    r.timing("solve", t);
    r.push(Section::Table {
        name: "value".into(),
        columns: vec!["x".into(), "regime".into(), "value".into()],
        rows: table,
    });
    let (rp, rm) = f.residuals(&fe);
    r.residual("factorization", rp.max(rm));
    Ok(r)
}

#[allow(clippy::too_many_arguments)]
pub fn simulate(
    m: &ModelSpec,
    a: &[f64],
    target: Target,
    levels: Option<&[f64]>,
    b: f64,
    h0: &[f64],
    strike: Option<f64>,
    cfg: &PathConfig,
    compare: bool,
) -> CmdResult {
    let mut r = Report::new(
        "simulate",
        json!({
            "model": model_value(m),
            "kill": a,
            "target": format!("{target:?}").to_lowercase(),
            "levels": levels,
            "b": b,
            "h0": h0,
            "strike": strike,
            "paths": cfg.n_paths,
            "dt": cfg.dt,
            "seed": cfg.seed,
            "horizon": cfg.horizon,
        }),
    );
    let t = Instant::now();
    let (est, analytic) = match target {
        Target::Passage => {
            let k = levels.ok_or_else(|| validation("--levels is required for --target passage"))?;
            let est = mc_oracle::simulate_to_level(m, a, k, b, h0, cfg)?;
            let analytic = if compare {
                let pv = PassageSolver::new(m, a)?.solve(&LevelVector::new(k)?, b, h0)?;
                Some(pv.evaluate(m.x0, m.z0))
            } else {
                None
            };
            (est, analytic)
        }
        Target::Put => {
            let strike = strike.ok_or_else(|| validation("--strike is required for --target put"))?;
            let pricer = PutPricer::new(m, strike)?;
            let sol = match levels {
                Some(k) => pricer.price_given_levels(k)?,
                None => pricer.solve_optimal()?,
            };
            let est = mc_oracle::simulate_put(m, strike, sol.k(), cfg)?;
            r.push(Section::List("levels".into(), sol.k().to_vec()));
            (est, compare.then(|| sol.value_log(m.x0, m.z0)))
        }
        Target::Ruin => {
            let est = mc_oracle::simulate_ruin(m, a, cfg)?;
            let analytic = if compare {
                let fe = embedding_for(m, a)?;
                let f = solve_factorization(&fe)?;
                Some(gerber_shiu(m, &fe, &f, m.x0, m.z0, &Penalty::One)?)
            } else {
                None
            };
            (est, analytic)
        }
    };
    r.timing("simulate", t);
    r.push(Section::Scalar("estimate".into(), est.mean.into()));
    r.push(Section::Scalar("std_error".into(), est.std_error.into()));
    r.push(Section::Scalar("censored_mass".into(), est.censored_mass.into()));
    r.push(Section::Scalar("n_paths".into(), Cell::Int(est.n_paths)));
    if let Some(v) = analytic {
        r.push(Section::Scalar("analytic".into(), v.into()));
        r.residual("z_score", est.z_score(v));
    }
    Ok(r)
}
