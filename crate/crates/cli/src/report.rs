use std::fmt::Write as _;

use serde_json::{json, Map, Number, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Table,
    Csv,
    Json,
}

#[derive(Debug, Clone)]
pub enum Cell {
    Num(f64),
    Int(usize),
    Text(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

#[derive(Debug, Clone)]
pub enum Section {
    Scalar(String, Cell),
    List(String, Vec<f64>),
    Table { name: String, columns: Vec<String>, rows: Vec<Vec<Cell>> },
    Matrix(String, Vec<Vec<f64>>),
    Json(String, Value),
}

/// Rounds to `digits` significant digits.
pub fn round_sig(x: f64, digits: usize) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", digits - 1, x).parse().unwrap_or(x)
}

pub fn num(x: f64) -> Value {
    Number::from_f64(round_sig(x, 12)).map(Value::Number).unwrap_or(Value::Null)
}

/// `%g`-style text with 6 significant digits.
pub fn g6(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".into();
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let s = format!("{:.*}", decimals, round_sig(x, 6));
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        let s = format!("{:.5e}", x);
        let (mant, e) = s.split_once('e').expect("exponent");
        let mant = if mant.contains('.') { mant.trim_end_matches('0').trim_end_matches('.') } else { mant };
        format!("{mant}e{e}")
    }
}

fn cell_json(c: &Cell) -> Value {
    match c {
        Cell::Num(v) => num(*v),
        Cell::Int(v) => json!(v),
        Cell::Text(s) => json!(s),
    }
}

fn cell_text(c: &Cell) -> String {
    match c {
        Cell::Num(v) => g6(*v),
        Cell::Int(v) => v.to_string(),
        Cell::Text(s) => s.clone(),
    }
}

fn sections_json(sections: &[Section]) -> Value {
    let mut out = Map::new();
    for s in sections {
        let (k, v) = match s {
            Section::Scalar(k, c) => (k, cell_json(c)),
            Section::List(k, xs) => (k, Value::Array(xs.iter().map(|x| num(*x)).collect())),
            Section::Table { name, columns, rows } => {
                let rows = rows
                    .iter()
                    .map(|r| {
                        let obj: Map<String, Value> = columns.iter().cloned().zip(r.iter().map(cell_json)).collect();
                        Value::Object(obj)
                    })
                    .collect();
                (name, Value::Array(rows))
            }
            Section::Matrix(k, m) => {
                (k, Value::Array(m.iter().map(|r| Value::Array(r.iter().map(|x| num(*x)).collect())).collect()))
            }
            Section::Json(k, v) => (k, v.clone()),
        };
        out.insert(k.clone(), v);
    }
    Value::Object(out)
}

#[derive(Debug, Clone)]
pub struct Report {
    pub command: String,
    pub inputs: Value,
    pub outputs: Vec<Section>,
    pub residuals: Vec<(String, f64)>,
    pub timings_ms: Vec<(String, f64)>,
}

impl Report {
    pub fn new(command: &str, inputs: Value) -> Self {
        Report { command: command.into(), inputs, outputs: Vec::new(), residuals: Vec::new(), timings_ms: Vec::new() }
    }

    pub fn push(&mut self, s: Section) {
        self.outputs.push(s);
    }

    pub fn residual(&mut self, name: &str, v: f64) {
        self.residuals.push((name.into(), v));
    }

    pub fn timing(&mut self, name: &str, start: std::time::Instant) {
        self.timings_ms.push((name.into(), start.elapsed().as_secs_f64() * 1e3));
    }

    pub fn to_json(&self) -> Value {
        let residuals: Map<String, Value> = self.residuals.iter().map(|(k, v)| (k.clone(), num(*v))).collect();
        let timings: Map<String, Value> = self.timings_ms.iter().map(|(k, v)| (k.clone(), num(*v))).collect();
        json!({
            "command": self.command,
            "inputs": self.inputs,
            "outputs": sections_json(&self.outputs),
            "residuals": residuals,
            "timings_ms": timings,
        })
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Json => serde_json::to_string_pretty(&self.to_json()).expect("report serializes") + "\n",
            Format::Csv => self.render_csv(),
            Format::Table => self.render_table(),
        }
    }

    fn render_csv(&self) -> String {
        let mut out = String::new();
        for s in &self.outputs {
            match s {
                Section::Scalar(k, c) => writeln!(out, "{k},{}", csv_field(&cell_text(c))).unwrap(),
                Section::List(k, xs) => {
                    let vals: Vec<String> = xs.iter().map(|x| format!("{}", round_sig(*x, 12))).collect();
                    writeln!(out, "{k},{}", vals.join(",")).unwrap();
                }
                Section::Table { name, columns, rows } => {
                    writeln!(out, "# {name}").unwrap();
                    writeln!(out, "{}", columns.join(",")).unwrap();
                    for r in rows {
                        let vals: Vec<String> = r
                            .iter()
                            .map(|c| match c {
                                Cell::Num(v) => format!("{}", round_sig(*v, 12)),
                                other => csv_field(&cell_text(other)),
                            })
                            .collect();
                        writeln!(out, "{}", vals.join(",")).unwrap();
                    }
                }
                Section::Matrix(k, m) => {
                    writeln!(out, "# {k}").unwrap();
                    for r in m {
                        let vals: Vec<String> = r.iter().map(|x| format!("{}", round_sig(*x, 12))).collect();
                        writeln!(out, "{}", vals.join(",")).unwrap();
                    }
                }
                Section::Json(k, v) => writeln!(out, "{k},{}", csv_field(&v.to_string())).unwrap(),
            }
        }
        for (k, v) in &self.residuals {
            writeln!(out, "residual.{k},{}", round_sig(*v, 12)).unwrap();
        }
        out
    }

    fn render_table(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{}", self.command).unwrap();
        for s in &self.outputs {
            match s {
                Section::Scalar(k, c) => writeln!(out, "  {k}: {}", cell_text(c)).unwrap(),
                Section::List(k, xs) => {
                    let vals: Vec<String> = xs.iter().map(|x| g6(*x)).collect();
                    writeln!(out, "  {k}: [{}]", vals.join(", ")).unwrap();
                }
                Section::Table { name, columns, rows } => {
                    let text: Vec<Vec<String>> = rows.iter().map(|r| r.iter().map(cell_text).collect()).collect();
                    write_aligned(&mut out, name, columns, &text);
                }
                Section::Matrix(k, m) => {
                    let text: Vec<Vec<String>> = m.iter().map(|r| r.iter().map(|x| g6(*x)).collect()).collect();
                    let cols = text.first().map_or(0, |r| r.len());
                    let header: Vec<String> = (0..cols).map(|j| j.to_string()).collect();
                    write_aligned(&mut out, k, &header, &text);
                }
                Section::Json(k, v) => {
                    writeln!(out, "  {k}:").unwrap();
                    for line in serde_json::to_string_pretty(v).expect("json").lines() {
                        writeln!(out, "    {line}").unwrap();
                    }
                }
            }
        }
        if !self.residuals.is_empty() {
            writeln!(out, "  residuals:").unwrap();
            for (k, v) in &self.residuals {
                writeln!(out, "    {k}: {}", g6(*v)).unwrap();
            }
        }
        if !self.timings_ms.is_empty() {
            let parts: Vec<String> = self.timings_ms.iter().map(|(k, v)| format!("{k} {} ms", g6(*v))).collect();
            writeln!(out, "  timings: {}", parts.join(", ")).unwrap();
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn write_aligned(out: &mut String, name: &str, columns: &[String], rows: &[Vec<String>]) {
    let mut width: Vec<usize> = columns.iter().map(|c| c.len()).collect();
    for r in rows {
        for (j, c) in r.iter().enumerate() {
            if j < width.len() {
                width[j] = width[j].max(c.len());
            }
        }
    }
    writeln!(out, "  {name}:").unwrap();
    let line = |cells: &[String]| -> String {
        cells.iter().zip(&width).map(|(c, w)| format!("{c:>w$}")).collect::<Vec<_>>().join("  ")
    };
    writeln!(out, "    {}", line(columns)).unwrap();
    for r in rows {
        writeln!(out, "    {}", line(r)).unwrap();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(g6(0.30402512345), "0.304025");
        assert_eq!(g6(1234567.0), "1.23457e6");
        assert_eq!(g6(-2.5), "-2.5");
        assert_eq!(g6(1e-9), "1e-9");
        assert_eq!(g6(100.0), "100");
    }

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(num(0.1 + 0.2).to_string(), "0.3");
        assert_eq!(num(std::f64::consts::PI).to_string(), "3.14159265359");
        assert_eq!(num(f64::NAN), Value::Null);
    }
}
