//! Command-line front end: argument parsing, dispatch and report rendering.

pub mod commands;
pub mod report;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use report::Format;

pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "regswitch", version, about = "Regime-switching jump-diffusion first passage and perpetual puts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Output format.
    #[arg(long, value_enum, default_value = "table", global = true)]
    pub format: Format,

    /// Shorthand for `--format json`.
    #[arg(long, global = true)]
    pub json: bool,

    /// Leave `timings_ms` empty so output is byte-identical across runs.
    #[arg(long, global = true)]
    pub no_timings: bool,

    /// Reset each drift so the model satisfies the martingale condition.
    #[arg(long, global = true)]
    pub project_drift: bool,
}

#[derive(Debug, Args)]
pub struct ModelArg {
    /// Model JSON file.
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Debug, Args)]
pub struct KillArg {
    /// Per-regime killing rates; defaults to the short rates.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub kill: Option<Vec<f64>>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Transform a physical-measure model to its martingale measure.
    Emm {
        #[command(flatten)]
        model: ModelArg,
        /// Also write the transformed model JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Wiener-Hopf factorization of the embedded process.
    Factorize {
        #[command(flatten)]
        model: ModelArg,
        #[command(flatten)]
        kill: KillArg,
        /// Include the embedded generator, drifts and volatilities.
        #[arg(long)]
        dump_generator: bool,
    },
    /// Two-sided exit probabilities from [lower, upper].
    Exit {
        #[command(flatten)]
        model: ModelArg,
        #[command(flatten)]
        kill: KillArg,
        #[arg(long, allow_hyphen_values = true)]
        lower: f64,
        #[arg(long, allow_hyphen_values = true)]
        upper: f64,
        /// Starting positions; defaults to 11 points across the interval.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x: Option<Vec<f64>>,
    },
    /// `E[exp(-R_T + b X_T) h0(Z_T)]` for passage below regime levels.
    Passage {
        #[command(flatten)]
        model: ModelArg,
        #[command(flatten)]
        kill: KillArg,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        levels: Vec<f64>,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        b: f64,
        /// Terminal weights per regime; defaults to ones.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        h0: Option<Vec<f64>>,
        /// Starting positions; defaults to 11 points above the lowest level.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x: Option<Vec<f64>>,
    },
    /// Perpetual American put: optimal exercise levels and values.
    Price {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long)]
        strike: f64,
        /// Fixed log exercise levels instead of the optimal ones.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        levels: Option<Vec<f64>>,
        /// Spot prices for the value table; defaults to a grid around the strike.
        #[arg(long, value_delimiter = ',')]
        spots: Option<Vec<f64>>,
    },
    /// Discounted ruin probability or Gerber-Shiu function at level 0.
    Ruin {
        #[command(flatten)]
        model: ModelArg,
        #[command(flatten)]
        kill: KillArg,
        /// Initial surplus values (nonnegative).
        #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,1,2")]
        x: Vec<f64>,
        /// `one`, `regime:J` or `exp:THETA`.
        #[arg(long, default_value = "one")]
        penalty: String,
    },
    /// Monte Carlo estimate of a passage value, put price or ruin probability.
    Simulate {
        #[command(flatten)]
        model: ModelArg,
        #[command(flatten)]
        kill: KillArg,
        #[arg(long, value_enum, default_value = "passage")]
        target: commands::Target,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        levels: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        b: f64,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        h0: Option<Vec<f64>>,
        /// Strike for `--target put`.
        #[arg(long)]
        strike: Option<f64>,
        /// Initial log-price (surplus for ruin); defaults to the model's x0.
        #[arg(long, allow_hyphen_values = true)]
        x0: Option<f64>,
        #[arg(long, default_value_t = 100_000)]
        paths: usize,
        /// Time step for a discretized scheme; exact crossing sampling when omitted.
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        horizon: Option<f64>,
        /// Also compute the analytic value and the z-score.
        #[arg(long)]
        compare: bool,
    },
}

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Numerical(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Numerical(m) => m,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let kind = match self {
            CliError::Validation(_) => "validation",
            CliError::Numerical(_) => "numerical",
        };
        json!({ "error": { "kind": kind, "message": self.message() }, "exit_code": self.code() })
    }
}

impl From<regswitch::Error> for CliError {
    fn from(e: regswitch::Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Numerical(e.to_string())
        }
    }
}

impl Cli {
    pub fn output_format(&self) -> Format {
        if self.json {
            Format::Json
        } else {
            self.format
        }
    }
}

/// Runs a parsed command; returns the rendered report or the error.
pub fn execute(cli: &Cli) -> Result<String, CliError> {
    let mut report = commands::dispatch(cli)?;
    if cli.no_timings {
        report.timings_ms.clear();
    }
    Ok(report.render(cli.output_format()))
}

/// Entry point shared by the binary and the tests; returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn std::io::Write, stderr: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { 0 };
            let _ = if e.use_stderr() { write!(stderr, "{e}") } else { write!(stdout, "{e}") };
            return code;
        }
    };
    match execute(&cli) {
        Ok(text) => {
            let _ = stdout.write_all(text.as_bytes());
            0
        }
        Err(e) => {
            if cli.output_format() == Format::Json {
                let _ = writeln!(stderr, "{}", serde_json::to_string(&e.to_json()).expect("json"));
            } else {
                let _ = writeln!(stderr, "error: {}", e.message());
            }
            e.code()
        }
    }
}
