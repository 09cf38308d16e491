//! Noise reduction factor of the parallel readout on a uniform, fully transmitting
//! pattern, for the twin beam and for independent arms.

use anyhow::Result;
use qread::multipixel::{resolution_sweep, SweepRow};
use qread::patterns::BinaryImage;

use super::{add_result_json, Command, Run};
use crate::config::RunConfig;
use crate::output::{Csv, Outputs};

pub fn sweep(cfg: &RunConfig) -> Result<Vec<SweepRow>> {
    let open = BinaryImage::zeros(cfg.grid.nrf_side).complement();
    let out = resolution_sweep(cfg.seed()?, &[open], &cfg.optics, &cfg.grid.d, cfg.trials.frames)?;
    Ok(out.rows)
}

pub fn run(cfg: &RunConfig) -> Result<Run> {
    let cmd = Command::Nrf;
    let rows = sweep(cfg)?;
    let mut csv = Csv::new(
        cmd.name(),
        &cfg.hash(),
        cfg.seed()?,
        &["d", "resolution_um", "strategy", "nrf", "nrf_stderr", "samples_per_frame"],
    );
    #[derive(serde::Serialize)]
    struct Row<'a> {
        d: usize,
        resolution_um: f64,
        strategy: &'a str,
        nrf: f64,
        nrf_stderr: f64,
    }
    let mut json = Vec::new();
    for r in &rows {
        let windows = (cfg.grid.nrf_side + 1 - r.d).pow(2);
        csv.row(&[&r.d, &r.resolution_um, &r.strategy.as_str(), &r.nrf, &r.nrf_stderr, &windows]);
        json.push(Row {
            d: r.d,
            resolution_um: r.resolution_um,
            strategy: r.strategy.as_str(),
            nrf: r.nrf,
            nrf_stderr: r.nrf_stderr,
        });
    }
    let mut outputs = Outputs::default();
    outputs.add(format!("{}.csv", cmd.stem()), csv.as_str().as_bytes().to_vec());
    add_result_json(&mut outputs, cmd, cfg, &json)?;
    let summary = rows
        .iter()
        .map(|r| format!("{} d={}: {:.3} ± {:.3}", r.strategy.as_str(), r.d, r.nrf, r.nrf_stderr))
        .collect::<Vec<_>>()
        .join("; ");
    Ok(Run {
        outputs,
        summary,
        passed: true,
    })
}
