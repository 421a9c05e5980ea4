//! JSON files for MDPs, policies and initial distributions; CSV for tables
//! and traces.
//!
//! Floats are written in shortest round-trip form, so reading a file back
//! reproduces every probability bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mdp::{Mdp, Policy};
use crate::pma::PmaTrace;

pub fn mdp_to_json(m: &Mdp) -> Result<String> {
    Ok(serde_json::to_string_pretty(m)?)
}

/// Parses and validates; a broken file yields [`Error::InvalidMdp`].
pub fn mdp_from_json(text: &str) -> Result<Mdp> {
    let m: Mdp = serde_json::from_str(text)?;
    let report = m.validate();
    if report.is_valid() {
        Ok(m)
    } else {
        Err(Error::InvalidMdp(report))
    }
}

pub fn save_mdp(m: &Mdp, path: &Path) -> Result<()> {
    fs::write(path, mdp_to_json(m)?)?;
    Ok(())
}

pub fn load_mdp(path: &Path) -> Result<Mdp> {
    mdp_from_json(&fs::read_to_string(path)?)
}

pub fn save_policy(p: &Policy, path: &Path) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(p)?)?;
    Ok(())
}

pub fn load_policy(path: &Path) -> Result<Policy> {
    let p: Policy = serde_json::from_str(&fs::read_to_string(path)?)?;
    Policy::with_floor(p.table, p.floor)
}

/// `"uniform"` or a path to a JSON array of `n` probabilities.
pub fn load_mu(arg: &str, n: usize) -> Result<DVector<f64>> {
    if arg == "uniform" {
        return Ok(DVector::from_element(n, 1.0 / n as f64));
    }
    let v: Vec<f64> = serde_json::from_str(&fs::read_to_string(arg)?)?;
    if v.len() != n {
        return Err(Error::Dimension(format!(
            "mu has {} entries, MDP has {n} states",
            v.len()
        )));
    }
    let sum: f64 = v.iter().sum();
    if v.iter().any(|x| !(*x >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!("mu is not a distribution (sum {sum})")));
    }
    Ok(DVector::from_vec(v))
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

pub const TRACE_HEADER: &str = "k,J_mu,gap,eta,divergence_to_ref,samples_cum";

/// One row per iterate, `K + 1` rows in total.
pub fn trace_to_csv(trace: &PmaTrace) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in &trace.records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.k,
            r.j_mu,
            opt(r.gap),
            r.eta,
            opt(r.divergence_to_ref),
            r.samples_cum
        );
    }
    out
}

/// A labelled matrix as CSV: `s` then one column per entry of `columns`.
pub fn matrix_to_csv(m: &DMatrix<f64>, columns: &[String]) -> String {
    let mut out = String::from("s");
    for c in columns {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for (s, row) in m.row_iter().enumerate() {
        let _ = write!(out, "{s}");
        for x in row.iter() {
            let _ = write!(out, ",{x}");
        }
        out.push('\n');
    }
    out
}

pub fn action_columns(n_actions: usize) -> Vec<String> {
    (0..n_actions).map(|a| format!("a{a}")).collect()
}

pub fn vector_to_csv(v: &DVector<f64>, name: &str) -> String {
    matrix_to_csv(
        &DMatrix::from_column_slice(v.len(), 1, v.as_slice()),
        &[name.to_string()],
    )
}
