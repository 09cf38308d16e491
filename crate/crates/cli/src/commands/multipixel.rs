//! Parallel readout of test digits at several resolutions, followed by k-NN
//! classification of every read-out frame.

use anyhow::Result;
use log::info;
use qread::knn::{evaluate, KnnModel, NUM_CLASSES};
use qread::multipixel::{resolution_sweep, SweepRow};
use qread::patterns::{encode_qrbd, LabeledDataset, NoiseDescriptor, NoiseStrategy, Provenance, ReadoutStrategy, Sidecar, Split};
use serde::Serialize;

use super::{add_result_json, advantage_db, load_split, Command, Run};
use crate::config::RunConfig;
use crate::output::{Csv, Outputs};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultipixelRow {
    pub d: usize,
    pub resolution_um: f64,
    pub strategy: ReadoutStrategy,
    pub pixel_error: f64,
    pub pixel_stderr: f64,
    #[serde(rename = "P")]
    pub p: f64,
    pub stderr: f64,
    pub nrf: f64,
    pub nrf_stderr: f64,
    pub confusion: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

/// Sweep rows plus the classified read-out datasets, strategy-major.
pub fn sweep(cfg: &RunConfig, model: &KnnModel, test: &LabeledDataset) -> Result<(Vec<MultipixelRow>, Vec<LabeledDataset>)> {
    let n = cfg.trials.patterns.min(test.len());
    let digits = test.head(n);
    let out = resolution_sweep(cfg.seed()?, &digits.images, &cfg.optics, &cfg.grid.d, cfg.trials.frames)?;
    let mut rows = Vec::new();
    let mut sets = Vec::new();
    for (row, (si, di)) in out.rows.iter().zip(index_pairs(2, cfg.grid.d.len())) {
        let frames = &out.readouts[si][di];
        let labels: Vec<u8> = (0..frames.len()).map(|f| digits.labels[f % n]).collect();
        let mut ds = LabeledDataset::new(frames.clone(), labels, Provenance::Test)?;
        ds.noise = descriptor(cfg, row)?;
        let e = evaluate(model, &ds)?;
        info!(
            "d {} {}: pixel {:.4} P {:.4} nrf {:.3}",
            row.d,
            row.strategy.as_str(),
            row.pixel_error,
            e.error,
            row.nrf
        );
        rows.push(MultipixelRow {
            d: row.d,
            resolution_um: row.resolution_um,
            strategy: row.strategy,
            pixel_error: row.pixel_error,
            pixel_stderr: row.stderr,
            p: e.error,
            stderr: e.stderr,
            nrf: row.nrf,
            nrf_stderr: row.nrf_stderr,
            confusion: e.confusion,
        });
        sets.push(ds);
    }
    Ok((rows, sets))
}

fn index_pairs(outer: usize, inner: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..outer).flat_map(move |a| (0..inner).map(move |b| (a, b)))
}

fn descriptor(cfg: &RunConfig, row: &SweepRow) -> Result<NoiseDescriptor> {
    Ok(NoiseDescriptor {
        strategy: match row.strategy {
            ReadoutStrategy::Quantum => NoiseStrategy::MultipixelQuantum,
            ReadoutStrategy::Classical => NoiseStrategy::MultipixelClassical,
        },
        parameters: serde_json::json!({
            "optics": cfg.optics,
            "d": row.d,
            "frames": cfg.trials.frames,
            "patterns": cfg.trials.patterns,
        }),
        seed: Some(cfg.seed()?),
    })
}

pub fn run(cfg: &RunConfig) -> Result<Run> {
    let cmd = Command::Multipixel;
    let train = load_split(cfg, Split::Train, cfg.data.train_subset)?;
    let test = load_split(cfg, Split::Test, cfg.data.test_subset)?;
    let model = KnnModel::new(&train, cfg.knn.k)?;
    let (rows, sets) = sweep(cfg, &model, &test)?;
    let mut csv = Csv::new(
        cmd.name(),
        &cfg.hash(),
        cfg.seed()?,
        &["d", "resolution_um", "strategy", "pixel_error", "pixel_stderr", "P", "stderr", "nrf", "nrf_stderr"],
    );
    for r in &rows {
        csv.row(&[
            &r.d,
            &r.resolution_um,
            &r.strategy.as_str(),
            &r.pixel_error,
            &r.pixel_stderr,
            &r.p,
            &r.stderr,
            &r.nrf,
            &r.nrf_stderr,
        ]);
    }
    let mut outputs = Outputs::default();
    outputs.add(format!("{}.csv", cmd.stem()), csv.as_str().as_bytes().to_vec());
    add_result_json(&mut outputs, cmd, cfg, &rows)?;
    for (r, ds) in rows.iter().zip(&sets) {
        let name = format!("readout_{}_d{}.qrbd", r.strategy.as_str(), r.d);
        outputs.add(&name, encode_qrbd(ds, None)?);
        outputs.add_json(format!("{name}.json"), &Sidecar::for_dataset(ds, None))?;
    }
    let nd = cfg.grid.d.len();
    let widest = (0..nd).max_by_key(|&i| cfg.grid.d[i]).expect("nonempty grid");
    let coarse = (&rows[widest], &rows[nd + widest]);
    Ok(Run {
        outputs,
        summary: format!(
            "coarsest window d = {}: pixel error {:.4} vs {:.4}, classification {:.4} vs {:.4} ({:.2} dB)",
            coarse.0.d,
            coarse.0.pixel_error,
            coarse.1.pixel_error,
            coarse.0.p,
            coarse.1.p,
            advantage_db(coarse.0.p, coarse.1.p)
        ),
        passed: true,
    })
}
