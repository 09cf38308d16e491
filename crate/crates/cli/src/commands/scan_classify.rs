//! Scanning readout of the MNIST test set: bit pools per τ₀ and strategy, noisy test
//! sets assembled from them, k-NN classification against the clean training set.

use anyhow::Result;
use log::info;
use qread::discriminators::{build_exact_rule, build_gaussian_rule, classical_threshold_rule, DecisionRule};
use qread::knn::{evaluate, KnnModel, NUM_CLASSES};
use qread::par::child_seed;
use qread::patterns::{build_noisy_dataset, make_bit_pools, ImageNoise, LabeledDataset, ReadoutStrategy, Split};
use qread::photonstats::{ReadoutParams, Truncation, M_POISSON_SWITCH};
use serde::Serialize;

use super::{add_result_json, advantage_db, advantage_db_stderr, load_split, Command, Run};
use crate::config::RunConfig;
use crate::output::{Csv, Outputs};

pub const STRATEGIES: [ReadoutStrategy; 2] = [ReadoutStrategy::Quantum, ReadoutStrategy::Classical];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanRow {
    pub tau0: f64,
    pub strategy: ReadoutStrategy,
    /// Pixel error of the bit pools.
    pub pixel_error: f64,
    pub pixel_stderr: f64,
    /// Classification error.
    #[serde(rename = "P")]
    pub p: f64,
    pub stderr: f64,
    /// Same value on both rows of one τ₀.
    pub advantage_db: f64,
    pub advantage_db_stderr: f64,
    pub pixel_advantage_db: f64,
    pub pixel_advantage_db_stderr: f64,
    pub confusion: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

/// Decision rule of one strategy.
pub fn rule_for(params: &ReadoutParams, strategy: ReadoutStrategy) -> Result<DecisionRule> {
    Ok(match strategy {
        ReadoutStrategy::Classical => classical_threshold_rule(params)?,
        ReadoutStrategy::Quantum if params.modes > M_POISSON_SWITCH => build_gaussian_rule(params)?,
        ReadoutStrategy::Quantum => build_exact_rule(params, Truncation::Adaptive)?,
    })
}

/// Pools and noisy test set for one grid point and strategy. Point `i` uses the child
/// seed `i` of the root seed; strategy `s` then draws its pools from child `2s` and its
/// image noise from child `2s + 1`.
pub fn noisy_testset(
    cfg: &RunConfig,
    test: &LabeledDataset,
    index: usize,
    tau0: f64,
    strategy: ReadoutStrategy,
) -> Result<(LabeledDataset, qread::patterns::BitPools)> {
    let params = cfg.readout.with_taus(tau0, cfg.readout.tau1)?;
    let rule = rule_for(&params, strategy)?;
    let point = child_seed(cfg.seed()?, index as u64);
    let s = match strategy {
        ReadoutStrategy::Quantum => 0,
        ReadoutStrategy::Classical => 1,
    };
    let n = cfg.trials.pool;
    let pools = make_bit_pools(child_seed(point, 2 * s), &params, &rule, n, n, strategy)?;
    let noisy = build_noisy_dataset(
        child_seed(point, 2 * s + 1),
        test,
        ImageNoise::Pools(&pools),
        None,
        cfg.trials.realizations,
    )?;
    Ok((noisy, pools))
}

pub fn sweep(cfg: &RunConfig, model: &KnnModel, test: &LabeledDataset) -> Result<Vec<ScanRow>> {
    let mut rows = Vec::new();
    for (i, &tau0) in cfg.grid.tau0.iter().enumerate() {
        let mut pair = Vec::with_capacity(2);
        for strategy in STRATEGIES {
            let (noisy, pools) = noisy_testset(cfg, test, i, tau0, strategy)?;
            let e = evaluate(model, &noisy)?;
            info!(
                "tau0 {tau0} {}: pixel {:.4} P {:.4}",
                strategy.as_str(),
                pools.pooled_error(),
                e.error
            );
            pair.push((strategy, pools.pooled_error(), pools.pooled_stderr(), e));
        }
        let (q, c) = (&pair[0], &pair[1]);
        let adv = advantage_db(q.3.error, c.3.error);
        let adv_se = advantage_db_stderr(q.3.error, q.3.stderr, c.3.error, c.3.stderr);
        let padv = advantage_db(q.1, c.1);
        let padv_se = advantage_db_stderr(q.1, q.2, c.1, c.2);
        for (strategy, pe, pse, e) in pair {
            rows.push(ScanRow {
                tau0,
                strategy,
                pixel_error: pe,
                pixel_stderr: pse,
                p: e.error,
                stderr: e.stderr,
                advantage_db: adv,
                advantage_db_stderr: adv_se,
                pixel_advantage_db: padv,
                pixel_advantage_db_stderr: padv_se,
                confusion: e.confusion,
            });
        }
    }
    Ok(rows)
}

pub fn run(cfg: &RunConfig) -> Result<Run> {
    let cmd = Command::ScanClassify;
    let train = load_split(cfg, Split::Train, cfg.data.train_subset)?;
    let test = load_split(cfg, Split::Test, cfg.data.test_subset)?;
    let model = KnnModel::new(&train, cfg.knn.k)?;
    let rows = sweep(cfg, &model, &test)?;
    let mut csv = Csv::new(
        cmd.name(),
        &cfg.hash(),
        cfg.seed()?,
        &[
            "tau0",
            "strategy",
            "pixel_error",
            "pixel_stderr",
            "P",
            "stderr",
            "advantage_db",
            "advantage_db_stderr",
            "pixel_advantage_db",
            "pixel_advantage_db_stderr",
        ],
    );
    for r in &rows {
        csv.row(&[
            &r.tau0,
            &r.strategy.as_str(),
            &r.pixel_error,
            &r.pixel_stderr,
            &r.p,
            &r.stderr,
            &r.advantage_db,
            &r.advantage_db_stderr,
            &r.pixel_advantage_db,
            &r.pixel_advantage_db_stderr,
        ]);
    }
    let best = rows
        .iter()
        .map(|r| r.advantage_db)
        .filter(|a| a.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    let mut outputs = Outputs::default();
    outputs.add(format!("{}.csv", cmd.stem()), csv.as_str().as_bytes().to_vec());
    add_result_json(&mut outputs, cmd, cfg, &rows)?;
    Ok(Run {
        outputs,
        summary: format!(
            "{} test images, {} training images; largest classification advantage {best:.2} dB",
            test.len() * cfg.trials.realizations,
            train.len()
        ),
        passed: true,
    })
}
