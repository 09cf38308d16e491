//! QRBD containers for downstream classifiers: the clean training and test sets, and
//! one pool-noised test set per τ₀ and strategy.

use anyhow::Result;
use log::info;
use qread::discriminators::classical_pc_error_noisy;
use qread::patterns::{encode_qrbd, LabeledDataset, ReadoutStrategy, Sidecar, Split};
use serde::Serialize;

use super::scan_classify::{noisy_testset, STRATEGIES};
use super::{add_result_json, load_split, Command, Run};
use crate::config::RunConfig;
use crate::output::{Csv, Outputs};

pub const TRAIN_FILE: &str = "mnist_train.qrbd";
pub const TEST_FILE: &str = "mnist_test.qrbd";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContainerRow {
    pub file: String,
    pub tau0: Option<f64>,
    pub strategy: Option<ReadoutStrategy>,
    pub records: usize,
    pub bytes: usize,
    /// Observed pixel error of the pools the set was drawn from.
    pub pixel_error: Option<f64>,
    /// Closed-form pixel error where one exists (classical photon counting).
    pub predicted_pixel_error: Option<f64>,
}

fn add_container(outputs: &mut Outputs, name: &str, ds: &LabeledDataset) -> Result<usize> {
    let bytes = encode_qrbd(ds, Some(28))?;
    let n = bytes.len();
    outputs.add(name, bytes);
    outputs.add_json(format!("{name}.json"), &Sidecar::for_dataset(ds, Some(28)))?;
    Ok(n)
}

pub fn noisy_name(strategy: ReadoutStrategy, index: usize) -> String {
    format!("test_{}_{index:02}.qrbd", strategy.as_str())
}

pub fn run(cfg: &RunConfig) -> Result<Run> {
    let cmd = Command::MnistPrepare;
    let train = load_split(cfg, Split::Train, cfg.data.train_subset)?;
    let test = load_split(cfg, Split::Test, cfg.data.test_subset)?;
    let mut outputs = Outputs::default();
    let mut rows = Vec::new();
    for (name, ds) in [(TRAIN_FILE, &train), (TEST_FILE, &test)] {
        let bytes = add_container(&mut outputs, name, ds)?;
        rows.push(ContainerRow {
            file: name.to_string(),
            tau0: None,
            strategy: None,
            records: ds.len(),
            bytes,
            pixel_error: None,
            predicted_pixel_error: None,
        });
    }
    for (i, &tau0) in cfg.grid.tau0.iter().enumerate() {
        for strategy in STRATEGIES {
            let (noisy, pools) = noisy_testset(cfg, &test, i, tau0, strategy)?;
            let name = noisy_name(strategy, i);
            let bytes = add_container(&mut outputs, &name, &noisy)?;
            let predicted = match strategy {
                ReadoutStrategy::Classical => {
                    Some(classical_pc_error_noisy(&cfg.readout.with_taus(tau0, cfg.readout.tau1)?)?.value)
                }
                ReadoutStrategy::Quantum => None,
            };
            info!("{name}: tau0 {tau0}, pixel error {:.4}", pools.pooled_error());
            rows.push(ContainerRow {
                file: name,
                tau0: Some(tau0),
                strategy: Some(strategy),
                records: noisy.len(),
                bytes,
                pixel_error: Some(pools.pooled_error()),
                predicted_pixel_error: predicted,
            });
        }
    }
    let mut csv = Csv::new(
        cmd.name(),
        &cfg.hash(),
        cfg.seed()?,
        &["file", "tau0", "strategy", "records", "bytes", "pixel_error", "predicted_pixel_error"],
    );
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &rows {
        csv.row(&[
            &r.file,
            &opt(r.tau0),
            &r.strategy.map(|s| s.as_str()).unwrap_or(""),
            &r.records,
            &r.bytes,
            &opt(r.pixel_error),
            &opt(r.predicted_pixel_error),
        ]);
    }
    outputs.add(format!("{}.csv", cmd.stem()), csv.as_str().as_bytes().to_vec());
    add_result_json(&mut outputs, cmd, cfg, &rows)?;
    Ok(Run {
        outputs,
        summary: format!("{} containers", rows.len()),
        passed: true,
    })
}
