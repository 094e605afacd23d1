//! Table generation and text formats shared by the command-line tool.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::corrected::{index_avg, index_ca, index_ca_prime, index_ua, index_ua_prime, RHO};
use crate::error::{config, Result};
use crate::exact::{gittins_exact, DpConfig, IndexResult, Method};
use crate::model::{Discounting, NormalArm};

/// `x` with `precision` decimals, ties to even on the exact binary value;
/// negative zero prints as zero.
pub fn format_fixed(x: f64, precision: usize) -> String {
    let s = format!("{x:.precision$}");
    match s.strip_prefix('-') {
        Some(rest) if rest.bytes().all(|b| b == b'0' || b == b'.') => rest.to_string(),
        _ => s,
    }
}

/// Index of the unit-variance arm `N(0, v0)` by `method`. The Wiener method is
/// not tabulated here.
pub fn unit_index(method: Method, v0: f64, beta: f64, dp: &DpConfig) -> Result<IndexResult> {
    match method {
        Method::Exact => gittins_exact(&NormalArm::unit(0.0, v0)?, &Discounting::new(beta)?, dp),
        Method::Avg => index_avg(0.0, v0, beta),
        Method::Ca => index_ca(0.0, v0, beta),
        Method::CaPrime => index_ca_prime(0.0, v0, beta),
        Method::Ua => index_ua(0.0, v0, beta),
        Method::UaPrime => index_ua_prime(0.0, v0, beta),
        Method::Wiener => Err(config("the wiener method needs a boundary source")),
    }
}

/// `n sqrt(1 - beta) lambda(0, 1/n, beta)`.
pub fn scaled_index(method: Method, beta: f64, n: u64, dp: &DpConfig) -> Result<f64> {
    if n == 0 {
        return Err(config("n must be a positive integer"));
    }
    let nf = n as f64;
    Ok(nf * (1.0 - beta).sqrt() * unit_index(method, 1.0 / nf, beta, dp)?.value)
}

/// Methods shown in the small-variance table, in row order.
pub const TABLE1_METHODS: [Method; 6] =
    [Method::Exact, Method::Avg, Method::Ca, Method::CaPrime, Method::Ua, Method::UaPrime];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table1Row {
    pub beta: f64,
    pub n: u64,
    pub method: Method,
    /// `None` when the cell failed; see `error`.
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Scaled indices for every `(beta, n, method)`, ordered by beta, then n,
/// then method. Cells are computed concurrently.
pub fn table1(betas: &[f64], ns: &[u64], methods: &[Method], dp: &DpConfig) -> Vec<Table1Row> {
    let cells: Vec<(f64, u64, Method)> = betas
        .iter()
        .flat_map(|&b| ns.iter().flat_map(move |&n| methods.iter().map(move |&m| (b, n, m))))
        .collect();
    cells
        .into_par_iter()
        .map(|(beta, n, method)| match scaled_index(method, beta, n, dp) {
            Ok(v) => Table1Row { beta, n, method, value: Some(v), error: None },
            Err(e) => Table1Row { beta, n, method, value: None, error: Some(e.to_string()) },
        })
        .collect()
}

/// `sqrt(1 - beta) [(2c)^(-1/2) - RHO]`, the small-variance limit of the
/// corrected approximations.
pub fn limit_ca(beta: f64) -> Result<f64> {
    let d = Discounting::new(beta)?;
    Ok((1.0 - beta).sqrt() * ((2.0 * d.rate()).powf(-0.5) - RHO))
}

/// `sqrt((1 - beta) / (2c))`, the small-variance limit of the uncorrected ones.
pub fn limit_ua(beta: f64) -> Result<f64> {
    let d = Discounting::new(beta)?;
    Ok(((1.0 - beta) / (2.0 * d.rate())).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table2Row {
    pub beta: f64,
    pub method: String,
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Limits of the scaled indices as `n -> infinity`; with `exact_n`, also the
/// exact scaled index at that `n` as a stand-in for its limit.
pub fn table2(betas: &[f64], exact_n: Option<u64>, dp: &DpConfig) -> Result<Vec<Table2Row>> {
    let mut rows = Vec::new();
    for &beta in betas {
        if let Some(n) = exact_n {
            let (value, note) = match scaled_index(Method::Exact, beta, n, dp) {
                Ok(v) => (Some(v), format!("exact index at n = {n}")),
                Err(e) => (None, e.to_string()),
            };
            rows.push(Table2Row { beta, method: "exact_large_n".into(), value, note: Some(note) });
        }
        rows.push(Table2Row { beta, method: "limit_ca".into(), value: Some(limit_ca(beta)?), note: None });
        rows.push(Table2Row { beta, method: "limit_ua".into(), value: Some(limit_ua(beta)?), note: None });
    }
    Ok(rows)
}

fn cell(value: Option<f64>, precision: usize) -> String {
    value.map(|v| format_fixed(v, precision)).unwrap_or_default()
}

/// Beta printed with enough digits to round-trip the usual inputs.
fn beta_text(beta: f64) -> String {
    format!("{beta}")
}

pub fn table1_csv(rows: &[Table1Row], precision: usize) -> String {
    let mut out = String::from("beta,n,method,value\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", beta_text(r.beta), r.n, r.method, cell(r.value, precision));
    }
    out
}

pub fn table2_csv(rows: &[Table2Row], precision: usize) -> String {
    let mut out = String::from("beta,method,value\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", beta_text(r.beta), r.method, cell(r.value, precision));
    }
    out
}

/// Round a value for JSON output, keeping the shortest representation.
pub fn round_for_json(x: f64, precision: usize) -> f64 {
    format_fixed(x, precision).parse().unwrap_or(x)
}

/// Flat `key = value` configuration text. Blank lines and lines starting with
/// `#` are ignored; a repeated key is an error.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| config(format!("line {}: expected `key = value`", lineno + 1)))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(config(format!("line {}: empty key", lineno + 1)));
        }
        if map.insert(key.to_string(), value.trim().to_string()).is_some() {
            return Err(config(format!("line {}: duplicate key `{key}`", lineno + 1)));
        }
    }
    Ok(map)
}

/// Comma-separated list of numbers.
pub fn parse_list<T: std::str::FromStr>(text: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|_| config(format!("cannot parse `{s}`"))))
        .collect()
}
