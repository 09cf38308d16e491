//! Fock-space construction of the optimal two-state receiver checked against the closed
//! form of the classical lower bound.

use anyhow::Result;
use qread::discriminators::classical_lower_bound;
use qread::optimal_receiver::{adaptive_nmax, receiver_error_numeric};
use qread::photonstats::Truncation;
use qread::Error;
use serde::Serialize;

use super::{add_result_json, Command, Run};
use crate::config::RunConfig;
use crate::output::{Csv, Outputs};

/// Agreement required between the numeric receiver and the closed form.
pub const CLOSED_FORM_TOL: f64 = 1e-6;
/// Change allowed when the Fock truncation is doubled.
pub const DOUBLING_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReceiverRow {
    pub mu: f64,
    pub tau0: f64,
    pub tau1: f64,
    pub nmax: usize,
    pub numeric: f64,
    pub closed_form: f64,
    pub abs_diff: f64,
    pub doubling_diff: f64,
}

/// Numeric receiver error at the adaptive truncation and at twice that truncation.
/// Identical channels give ½ without building the receiver.
fn numeric(mu: f64, tau0: f64, tau1: f64) -> Result<(usize, f64, f64)> {
    let nmax = adaptive_nmax((tau1 * mu).sqrt());
    if tau0 == tau1 {
        return Ok((nmax, 0.5, 0.5));
    }
    let at = |n: usize| match receiver_error_numeric(mu, tau0, tau1, Truncation::Fixed(n)) {
        Err(Error::Degenerate(_)) => Ok(0.5),
        r => r,
    };
    Ok((nmax, at(nmax)?, at(2 * nmax)?))
}

pub fn check(cfg: &RunConfig) -> Result<Vec<ReceiverRow>> {
    cfg.grid
        .receiver
        .iter()
        .map(|&[mu, tau0, tau1]| {
            let (nmax, a, b) = numeric(mu, tau0, tau1)?;
            let closed = classical_lower_bound(mu, tau0, tau1)?.value;
            Ok(ReceiverRow {
                mu,
                tau0,
                tau1,
                nmax,
                numeric: a,
                closed_form: closed,
                abs_diff: (a - closed).abs(),
                doubling_diff: (a - b).abs(),
            })
        })
        .collect()
}

pub fn run(cfg: &RunConfig) -> Result<Run> {
    let cmd = Command::OptimalReceiverCheck;
    let rows = check(cfg)?;
    let mut csv = Csv::new(
        cmd.name(),
        &cfg.hash(),
        cfg.seed()?,
        &["mu", "tau0", "tau1", "nmax", "numeric", "closed_form", "abs_diff", "doubling_diff"],
    );
    let mut table = String::from("      mu    tau0    tau1     numeric  closed form    |diff|  doubling\n");
    for r in &rows {
        csv.row(&[&r.mu, &r.tau0, &r.tau1, &r.nmax, &r.numeric, &r.closed_form, &r.abs_diff, &r.doubling_diff]);
        table.push_str(&format!(
            "{:>8} {:>7} {:>7} {:>11.4e} {:>12.4e} {:>9.1e} {:>9.1e}\n",
            r.mu, r.tau0, r.tau1, r.numeric, r.closed_form, r.abs_diff, r.doubling_diff
        ));
    }
    let max_diff = rows.iter().map(|r| r.abs_diff).fold(0.0, f64::max);
    let max_doubling = rows.iter().map(|r| r.doubling_diff).fold(0.0, f64::max);
    let passed = max_diff <= CLOSED_FORM_TOL && max_doubling <= DOUBLING_TOL;
    table.push_str(&format!(
        "max |numeric - closed form| = {max_diff:.2e} (tolerance {CLOSED_FORM_TOL:.0e}); \
         max doubling change = {max_doubling:.2e} (tolerance {DOUBLING_TOL:.0e})"
    ));
    let mut outputs = Outputs::default();
    outputs.add(format!("{}.csv", cmd.stem()), csv.as_str().as_bytes().to_vec());
    add_result_json(&mut outputs, cmd, cfg, &rows)?;
    Ok(Run {
        outputs,
        summary: table,
        passed,
    })
}
