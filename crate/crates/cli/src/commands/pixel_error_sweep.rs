//! Single-pixel error versus τ₀: classical lower bound, classical photon counting and
//! TMSV photon counting.

use anyhow::{bail, Result};
use log::info;
use qread::discriminators::{
    build_gaussian_rule, classical_lower_bound, classical_pc_error_noisy, quantum_pc_error_exact,
    quantum_pc_error_mc, ErrorEstimate,
};
use qread::par::child_seed;
use qread::photonstats::{ReadoutParams, Truncation, M_POISSON_SWITCH};
use qread::Error;
use serde::Serialize;

use super::{add_result_json, Command, Run};
use crate::config::RunConfig;
use crate::output::{Csv, Outputs};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PixelRow {
    pub tau0: f64,
    pub p_lb_cla: f64,
    pub p_pc_cla: f64,
    pub p_pc_qua: f64,
    pub stderr: f64,
    pub method: &'static str,
}

/// Quantum error at one point: exact when the joint laws fit in memory, otherwise Monte
/// Carlo with the Gaussian rule.
pub fn quantum_point(seed: u64, params: &ReadoutParams, trials: u64) -> Result<ErrorEstimate> {
    if params.modes <= M_POISSON_SWITCH {
        match quantum_pc_error_exact(params, Truncation::Adaptive) {
            Ok(e) => return Ok(e),
            Err(Error::Resource { .. }) => bail!(
                "exact joint law too large at mu = {} with {} modes; the Monte-Carlo path needs more than {M_POISSON_SWITCH} modes",
                params.mu,
                params.modes
            ),
            Err(e) => return Err(e.into()),
        }
    }
    let rule = build_gaussian_rule(params)?;
    Ok(quantum_pc_error_mc(seed, params, &rule, trials)?)
}

pub fn sweep(cfg: &RunConfig) -> Result<Vec<PixelRow>> {
    let seed = cfg.seed()?;
    let base = cfg.readout;
    let mut rows = Vec::with_capacity(cfg.grid.tau0.len());
    for (i, &tau0) in cfg.grid.tau0.iter().enumerate() {
        let p = base.with_taus(tau0, base.tau1)?;
        let lb = classical_lower_bound(p.eta_s * p.mu, tau0, p.tau1)?;
        let cla = classical_pc_error_noisy(&p)?;
        let qua = quantum_point(child_seed(seed, i as u64), &p, cfg.trials.mc)?;
        info!("tau0 {tau0}: lb {:.5} cla {:.5} qua {:.5}", lb.value, cla.value, qua.value);
        rows.push(PixelRow {
            tau0,
            p_lb_cla: lb.value,
            p_pc_cla: cla.value,
            p_pc_qua: qua.value,
            stderr: qua.stderr,
            method: qua.method.as_str(),
        });
    }
    Ok(rows)
}

pub fn run(cfg: &RunConfig) -> Result<Run> {
    let cmd = Command::PixelErrorSweep;
    let rows = sweep(cfg)?;
    let mut csv = Csv::new(
        cmd.name(),
        &cfg.hash(),
        cfg.seed()?,
        &["tau0", "p_lb_cla", "p_pc_cla", "p_pc_qua", "stderr", "method"],
    );
    for r in &rows {
        csv.row(&[&r.tau0, &r.p_lb_cla, &r.p_pc_cla, &r.p_pc_qua, &r.stderr, &r.method]);
    }
    let below = rows
        .iter()
        .filter(|r| r.p_pc_qua + 3.0 * r.stderr < r.p_lb_cla)
        .count();
    let mut outputs = Outputs::default();
    outputs.add(format!("{}.csv", cmd.stem()), csv.as_str().as_bytes().to_vec());
    add_result_json(&mut outputs, cmd, cfg, &rows)?;
    Ok(Run {
        outputs,
        summary: format!(
            "quantum below the classical lower bound by more than 3 stderr at {below} of {} points",
            rows.len()
        ),
        passed: true,
    })
}
