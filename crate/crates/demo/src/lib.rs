use regswitch::american_put::PutPricer;
use regswitch::embedding::embed;
use regswitch::first_passage::{LevelVector, PassageSolver};
use regswitch::model::ModelSpec;
use regswitch::wiener_hopf::{solve_factorization, spectral_data};
use serde_json::json;
use wasm_bindgen::prelude::*;

pub const EXAMPLE_MODEL: &str = include_str!("../www/example.json");

fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| format!("not a number: {t:?}")))
        .collect()
}

fn model(text: &str) -> Result<ModelSpec, String> {
    ModelSpec::from_json(text).map_err(|e| e.to_string())
}

fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

pub fn price_json(model_json: &str, strike: f64) -> Result<String, String> {
    let m = model(model_json)?;
    let sol = PutPricer::new(&m, strike).and_then(|p| p.solve_optimal()).map_err(|e| e.to_string())?;
    let spots = grid(0.3 * strike, 2.0 * strike, 120);
    let curves: Vec<Vec<f64>> = (0..m.n_regimes()).map(|i| spots.iter().map(|s| sol.value(*s, i)).collect()).collect();
    Ok(json!({
        "levels": sol.k(),
        "boundaries": sol.k().iter().map(|k| k.exp()).collect::<Vec<_>>(),
        "smooth_fit": sol.max_smooth_fit_residual(),
        "spots": spots,
        "values": curves,
        "payoff": spots.iter().map(|s| (strike - s).max(0.0)).collect::<Vec<_>>(),
    })
    .to_string())
}

pub fn passage_json(model_json: &str, levels: &str, b: f64) -> Result<String, String> {
    let m = model(model_json)?;
    let k = parse_list(levels)?;
    if k.len() != m.n_regimes() {
        return Err(format!("need {} levels, got {}", m.n_regimes(), k.len()));
    }
    let a: Vec<f64> = m.regimes().iter().map(|r| r.r).collect();
    let h0 = vec![1.0; m.n_regimes()];
    let pv =
        PassageSolver::new(&m, &a).and_then(|s| s.solve(&LevelVector::new(&k)?, b, &h0)).map_err(|e| e.to_string())?;
    let lo = k.iter().copied().fold(f64::INFINITY, f64::min) - 0.25;
    let hi = k.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 2.0;
    let xs = grid(lo, hi, 120);
    let curves: Vec<Vec<f64>> = (0..m.n_regimes()).map(|i| xs.iter().map(|x| pv.evaluate(*x, i)).collect()).collect();
    Ok(json!({ "x": xs, "values": curves, "matching": pv.residuals().value.max(pv.residuals().derivative) })
        .to_string())
}

pub fn factorize_json(model_json: &str, kill: &str) -> Result<String, String> {
    let m = model(model_json)?;
    let a = if kill.trim().is_empty() { m.regimes().iter().map(|r| r.r).collect() } else { parse_list(kill)? };
    let fe = embed(&m, &a).map_err(|e| e.to_string())?;
    let f = solve_factorization(&fe).map_err(|e| e.to_string())?;
    let roots = spectral_data(&fe).map_err(|e| e.to_string())?.roots;
    let rows = |q: &regswitch::linalg::Mat| -> Vec<Vec<f64>> {
        (0..q.nrows()).map(|i| q.row(i).iter().copied().collect()).collect()
    };
    let (rp, rm) = f.residuals(&fe);
    Ok(json!({
        "recurrence": format!("{:?}", f.recurrence),
        "roots": roots.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>(),
        "q_minus": rows(&f.q_minus),
        "q_plus": rows(&f.q_plus),
        "residual": rp.max(rm),
    })
    .to_string())
}

#[wasm_bindgen]
pub fn example_model() -> String {
    EXAMPLE_MODEL.to_string()
}

#[wasm_bindgen]
pub fn price(model_json: &str, strike: f64) -> Result<String, JsValue> {
    price_json(model_json, strike).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn passage(model_json: &str, levels: &str, b: f64) -> Result<String, JsValue> {
    passage_json(model_json, levels, b).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn factorize(model_json: &str, kill: &str) -> Result<String, JsValue> {
    factorize_json(model_json, kill).map_err(|e| JsValue::from_str(&e))
}
