use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use gittins_core::boundary::{solve_boundary, wiener_index, BoundarySolverConfig, BoundarySource, BoundaryTable};
use gittins_core::corrected::estimate_rho;
use gittins_core::exact::{gittins_exact_general, DpConfig, IndexResult, Method};
use gittins_core::model::{Discounting, NormalArm};
use gittins_core::quadrature::Quadrature;
use gittins_core::report::{
    format_fixed, parse_key_values, parse_list, round_for_json, table1, table1_csv, table2, table2_csv, unit_index,
    TABLE1_METHODS,
};
use gittins_core::sim::{compare, results_to_csv, BanditConfig, Policy};
use gittins_core::Error;

#[derive(Parser)]
#[command(name = "gittins", version, about = "Gittins indices for normal bandits")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Output encoding.
    #[arg(long, value_enum, default_value = "csv", global = true)]
    format: OutputKind,
    /// Decimal places in printed values (ties round to even).
    #[arg(long, global = true, value_parser = clap::value_parser!(u32).range(1..=17))]
    precision: Option<u32>,
    /// Random seed for Monte Carlo commands.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputKind {
    Csv,
    Json,
}

#[derive(Args)]
struct DpFlags {
    /// z-grid nodes per boundary scale in the exact solver.
    #[arg(long, default_value_t = 300.0)]
    points_per_scale: f64,
    /// Stop the backward induction once beta^N falls below this.
    #[arg(long, default_value_t = 1e-10)]
    truncation_tol: f64,
    /// Use a Gauss-Hermite rule of this order instead of the exact
    /// interpolant expectation.
    #[arg(long)]
    gauss_hermite: Option<usize>,
}

impl DpFlags {
    fn config(&self) -> DpConfig {
        DpConfig {
            points_per_scale: self.points_per_scale,
            truncation_tol: self.truncation_tol,
            quadrature: match self.gauss_hermite {
                Some(order) => Quadrature::GaussHermite { order },
                None => Quadrature::InterpolantExact,
            },
            ..DpConfig::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Index of a single arm.
    Index {
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        u0: f64,
        #[arg(long, allow_negative_numbers = true)]
        v0: f64,
        #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
        sigma2: f64,
        #[arg(long, allow_negative_numbers = true)]
        beta: f64,
        /// exact, avg, ca, ca_prime, ua, ua_prime, wiener or all.
        #[arg(long, default_value = "exact")]
        method: String,
        /// Boundary CSV for the wiener method (default: closed-form approximation).
        #[arg(long)]
        boundary_csv: Option<PathBuf>,
        #[command(flatten)]
        dp: DpFlags,
    },
    /// Scaled indices n sqrt(1-beta) lambda(0, 1/n, beta).
    Table1 {
        #[arg(long, default_value = "0.5,0.7,0.9,0.95,0.99,0.995")]
        betas: String,
        #[arg(long, default_value = "10,50,100,500,1000")]
        ns: String,
        #[arg(long, default_value = "exact,avg,ca,ca_prime,ua,ua_prime")]
        methods: String,
        #[command(flatten)]
        dp: DpFlags,
    },
    /// Small-variance limits of the scaled approximations.
    Table2 {
        #[arg(long, default_value = "0.5,0.6,0.7,0.8,0.9,0.95")]
        betas: String,
        /// Also report the exact scaled index at this n.
        #[arg(long)]
        exact_n: Option<u64>,
        #[command(flatten)]
        dp: DpFlags,
    },
    /// Free boundary of the continuous-time problem.
    Boundary {
        #[arg(long, default_value_t = 0.01)]
        s_min: f64,
        #[arg(long, default_value_t = 25.0)]
        s_max: f64,
        #[arg(long, default_value_t = 24)]
        points_per_decade: usize,
        #[arg(long, default_value_t = 0.2)]
        rel_step: f64,
        #[arg(long, default_value_t = 100.0)]
        points_per_scale: f64,
        /// Report the discrete-ladder boundary without the continuity correction.
        #[arg(long)]
        uncorrected: bool,
    },
    /// Monte Carlo estimate of the continuity-correction constant.
    Rho {
        #[arg(long, default_value_t = 1_000_000)]
        samples: u64,
    },
    /// Compare allocation policies on simulated bandits.
    Simulate {
        /// `key = value` file; keys: arms, beta, replications, policies,
        /// truncation_tol, seed. Flags take precedence.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Arms as `u:v:sigma2` separated by commas.
        #[arg(long, allow_hyphen_values = true)]
        arms: Option<String>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        replications: Option<u64>,
        #[arg(long)]
        policies: Option<String>,
        #[arg(long)]
        truncation_tol: Option<f64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    match run(cli, &mut stdout.lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

/// 3 for numerical failures, 2 for everything else (bad flags, files, domains).
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Solver(_)) => 3,
        _ => 2,
    }
}

fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let c = cli.common;
    let precision = c.precision.map(|p| p as usize);
    match cli.command {
        Command::Index { u0, v0, sigma2, beta, method, boundary_csv, dp } => {
            let arm = NormalArm::new(u0, v0, sigma2)?;
            let d = Discounting::new(beta)?;
            let dp = dp.config();
            dp.validate()?;
            let methods = if method == "all" { Method::ALL.to_vec() } else { vec![method.parse::<Method>()?] };
            let table = match &boundary_csv {
                Some(path) => Some(BoundaryTable::from_csv(
                    &std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?,
                )?),
                None => None,
            };
            let mut results = Vec::new();
            for m in methods {
                let r = match m {
                    Method::Exact => gittins_exact_general(&arm, &d, &dp)?,
                    Method::Wiener => {
                        let source = table.as_ref().map_or(BoundarySource::Psi, BoundarySource::Table);
                        let (unit, map) = arm.normalize();
                        let value = wiener_index(0.0, unit.variance(), &d, source)?;
                        IndexResult::closed_form(map.apply(value), Method::Wiener)
                    }
                    other => {
                        let (unit, map) = arm.normalize();
                        unit_index(other, unit.variance(), beta, &dp)?.mapped(map.shift, map.scale)
                    }
                };
                results.push(r);
            }
            print_index(out, &results, c.format, precision.unwrap_or(3))?;
        }
        Command::Table1 { betas, ns, methods, dp } => {
            let betas: Vec<f64> = parse_list(&betas)?;
            let ns: Vec<u64> = parse_list(&ns)?;
            for &beta in &betas {
                Discounting::new(beta)?;
            }
            if ns.contains(&0) {
                bail!(Error::Config("n must be a positive integer".into()));
            }
            let methods: Vec<Method> = if methods == "all" {
                TABLE1_METHODS.to_vec()
            } else {
                methods.split(',').map(|m| m.trim().parse()).collect::<Result<_, _>>()?
            };
            let dp = dp.config();
            dp.validate()?;
            let rows = table1(&betas, &ns, &methods, &dp);
            for r in rows.iter().filter(|r| r.value.is_none()) {
                eprintln!("cell beta={} n={} method={}: {}", r.beta, r.n, r.method, r.error.as_deref().unwrap_or(""));
            }
            let p = precision.unwrap_or(3);
            match c.format {
                OutputKind::Csv => write!(out, "{}", table1_csv(&rows, p))?,
                OutputKind::Json => {
                    let json_rows: Vec<Value> = rows
                        .iter()
                        .map(|r| {
                            json!({"beta": r.beta, "n": r.n, "method": r.method,
                                   "value": r.value.map(|v| round_for_json(v, p)), "error": r.error})
                        })
                        .collect();
                    writeln!(out, "{}", serde_json::to_string_pretty(&json_rows)?)?;
                }
            }
            if !rows.is_empty() && rows.iter().all(|r| r.value.is_none()) {
                bail!(Error::Solver("every cell failed".into()));
            }
        }
        Command::Table2 { betas, exact_n, dp } => {
            let betas: Vec<f64> = parse_list(&betas)?;
            let dp = dp.config();
            dp.validate()?;
            let rows = table2(&betas, exact_n, &dp)?;
            let p = precision.unwrap_or(3);
            for r in rows.iter().filter(|r| r.method == "exact_large_n") {
                eprintln!("note: beta={}: {}", r.beta, r.note.as_deref().unwrap_or(""));
            }
            match c.format {
                OutputKind::Csv => write!(out, "{}", table2_csv(&rows, p))?,
                OutputKind::Json => {
                    let json_rows: Vec<Value> = rows
                        .iter()
                        .map(|r| {
                            json!({"beta": r.beta, "method": r.method,
                                   "value": r.value.map(|v| round_for_json(v, p)), "note": r.note})
                        })
                        .collect();
                    writeln!(out, "{}", serde_json::to_string_pretty(&json_rows)?)?;
                }
            }
        }
        Command::Boundary { s_min, s_max, points_per_decade, rel_step, points_per_scale, uncorrected } => {
            let cfg = BoundarySolverConfig {
                s_min,
                s_max,
                points_per_decade,
                rel_step,
                points_per_scale,
                continuity_correction: !uncorrected,
                ..BoundarySolverConfig::default()
            };
            let table = solve_boundary(&cfg)?;
            match (c.format, precision) {
                (OutputKind::Csv, None) => write!(out, "{}", table.to_csv())?,
                (OutputKind::Csv, Some(p)) => {
                    writeln!(out, "s,b,b_over_sqrt_s,psi")?;
                    for (&s, &b) in table.s_grid.iter().zip(&table.b_values) {
                        let psi = gittins_core::psi(s).map(|v| format_fixed(v, p)).unwrap_or_default();
                        writeln!(out, "{},{},{},{}", format_fixed(s, p), format_fixed(b, p), format_fixed(b / s.sqrt(), p), psi)?;
                    }
                }
                (OutputKind::Json, _) => writeln!(out, "{}", serde_json::to_string_pretty(&table)?)?,
            }
        }
        Command::Rho { samples } => {
            let est = estimate_rho(samples, c.seed.unwrap_or(0))?;
            match c.format {
                OutputKind::Json => writeln!(out, "{}", serde_json::to_string_pretty(&est)?)?,
                OutputKind::Csv => {
                    let p = precision.unwrap_or(6);
                    writeln!(out, "rho_hat,es_tau,es_tau_sq,n_samples,std_err,aborted")?;
                    writeln!(
                        out,
                        "{},{},{},{},{},{}",
                        format_fixed(est.rho_hat, p),
                        format_fixed(est.es_tau, p),
                        format_fixed(est.es_tau_sq, p),
                        est.n_samples,
                        format_fixed(est.std_err, p),
                        est.aborted
                    )?;
                }
            }
        }
        Command::Simulate { config, arms, beta, replications, policies, truncation_tol } => {
            let mut kv = match &config {
                Some(path) => parse_key_values(
                    &std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?,
                )?,
                None => Default::default(),
            };
            let mut set = |key: &str, value: Option<String>| {
                if let Some(v) = value {
                    kv.insert(key.to_string(), v);
                }
            };
            set("arms", arms);
            set("beta", beta.map(|x| x.to_string()));
            set("replications", replications.map(|x| x.to_string()));
            set("policies", policies);
            set("truncation_tol", truncation_tol.map(|x| x.to_string()));
            set("seed", c.seed.map(|x| x.to_string()));
            let (cfg, policies) = bandit_from(&kv)?;
            let results = compare(&cfg, &policies)?;
            let p = precision.unwrap_or(3);
            match c.format {
                OutputKind::Csv => write!(out, "{}", results_to_csv(&results, p))?,
                OutputKind::Json => writeln!(out, "{}", serde_json::to_string_pretty(&results)?)?,
            }
        }
    }
    Ok(())
}

fn print_index(out: &mut dyn Write, results: &[IndexResult], format: OutputKind, precision: usize) -> Result<()> {
    match format {
        OutputKind::Csv => {
            writeln!(out, "method,value,diagnostics")?;
            for r in results {
                let diag: Vec<String> = r.diagnostics.iter().map(|(k, v)| format!("{k}={v}")).collect();
                writeln!(out, "{},{},{}", r.method, format_fixed(r.value, precision), diag.join(";"))?;
            }
        }
        OutputKind::Json => {
            let json_rows: Vec<Value> = results
                .iter()
                .map(|r| json!({"method": r.method, "value": round_for_json(r.value, precision), "diagnostics": r.diagnostics}))
                .collect();
            writeln!(out, "{}", serde_json::to_string_pretty(&json_rows)?)?;
        }
    }
    Ok(())
}

fn bandit_from(kv: &std::collections::BTreeMap<String, String>) -> Result<(BanditConfig, Vec<Policy>)> {
    const KEYS: [&str; 6] = ["arms", "beta", "replications", "policies", "truncation_tol", "seed"];
    if let Some(k) = kv.keys().find(|k| !KEYS.contains(&k.as_str())) {
        bail!(Error::Config(format!("unknown simulate key `{k}`")));
    }
    let get = |k: &str| kv.get(k).map(String::as_str);
    let arms = get("arms").unwrap_or("0:1:1,0:1:1");
    let arms = arms
        .split(',')
        .map(|spec| {
            let parts: Vec<f64> = spec
                .split(':')
                .map(|x| x.trim().parse().map_err(|_| Error::Config(format!("bad arm `{spec}`"))))
                .collect::<Result<_, _>>()?;
            match parts[..] {
                [u, v] => NormalArm::new(u, v, 1.0),
                [u, v, s2] => NormalArm::new(u, v, s2),
                _ => Err(Error::Config(format!("arm `{spec}` must be u:v or u:v:sigma2"))),
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let num = |k: &str, default: &str| -> Result<f64> {
        let text = get(k).unwrap_or(default);
        text.parse().map_err(|_| Error::Config(format!("`{k}` must be a number, got `{text}`")).into())
    };
    let int = |k: &str, default: &str| -> Result<u64> {
        let text = get(k).unwrap_or(default);
        text.parse().map_err(|_| Error::Config(format!("`{k}` must be an integer, got `{text}`")).into())
    };
    let mut cfg = BanditConfig::new(arms, num("beta", "0.9")?, int("replications", "10000")?, int("seed", "0")?);
    cfg.truncation_tol = num("truncation_tol", "1e-6")?;
    cfg.validate()?;
    let policies = get("policies")
        .unwrap_or("exact,ca,greedy")
        .split(',')
        .map(|p| p.trim().parse())
        .collect::<Result<Vec<Policy>, _>>()?;
    Ok((cfg, policies))
}
