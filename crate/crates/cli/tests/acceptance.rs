//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{ensure, Context, Result};
use qread::discriminators::{pc_classical_error, quantum_pc_error_exact};
use qread::knn::{evaluate, KnnModel};
use qread::multipixel::{resolution_sweep, OpticsParams, SweepRow};
use qread::patterns::{BinaryImage, ReadoutStrategy, Split};
use qread::photonstats::{ReadoutParams, Truncation};
use qread_cli::commands::{load_split, optimal_receiver_check, pixel_error_sweep, scan_classify, Command};
use qread_cli::RunConfig;

const SEED: u64 = 20240614;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome {
        passed,
        detail: detail.into(),
    })
}

fn data_dir() -> PathBuf {
    match std::env::var_os(qread_cli::config::DATA_DIR_ENV) {
        Some(d) => PathBuf::from(d),
        None => Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"),
    }
}

fn base_config() -> RunConfig {
    let mut cfg = RunConfig { seed: Some(SEED), ..Default::default() };
    cfg.data.mnist_dir = Some(data_dir());
    cfg
}

fn within_budget(t: Duration, limit_s: u64) -> bool {
    t < Duration::from_secs(limit_s)
}

fn receiver_saturation() -> Result<Outcome> {
    let cfg = base_config();
    ensure!(cfg.grid.receiver.len() == 12, "receiver grid must have 12 points");
    let t = Instant::now();
    let rows = optimal_receiver_check::check(&cfg)?;
    let el = t.elapsed();
    let worst = rows.iter().map(|r| r.abs_diff).fold(0.0, f64::max);
    outcome(
        worst <= 1e-6 && within_budget(el, 10),
        format!("max |numeric - closed form| = {worst:.2e} over {} points in {el:.2?}", rows.len()),
    )
}

fn ln_poisson(n: usize, lambda: f64, ln_fact: &[f64]) -> f64 {
    if lambda == 0.0 {
        return if n == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    n as f64 * lambda.ln() - lambda - ln_fact[n]
}

/// Half the summed pointwise minimum of the two Poisson laws, by direct summation.
fn brute_force_pc(mu: f64, tau0: f64, tau1: f64) -> f64 {
    let top = mu * tau1;
    let nmax = (top + 40.0 * top.sqrt() + 60.0) as usize;
    let mut ln_fact = vec![0.0; nmax + 1];
    for n in 1..=nmax {
        ln_fact[n] = ln_fact[n - 1] + (n as f64).ln();
    }
    let mut sum = 0.0;
    for n in 0..=nmax {
        let a = ln_poisson(n, mu * tau0, &ln_fact).exp();
        let b = ln_poisson(n, mu * tau1, &ln_fact).exp();
        sum += a.min(b);
    }
    0.5 * sum
}

fn classical_closed_form() -> Result<Outcome> {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    let mut points = 0;
    for mu in [0.5, 1.0, 5.0, 20.0, 100.0] {
        for (tau0, tau1) in [(0.0, 1.0), (0.25, 1.0), (0.5, 0.8), (0.999, 1.0)] {
            let v = pc_classical_error(mu, tau0, tau1)?.value;
            worst = worst.max((v - brute_force_pc(mu, tau0, tau1)).abs());
            points += 1;
        }
    }
    let el = t.elapsed();
    outcome(
        worst <= 1e-9 && within_budget(el, 10),
        format!("max |closed form - direct sum| = {worst:.2e} over {points} points in {el:.2?}"),
    )
}

fn quantum_ordering() -> Result<Outcome> {
    let mut total = 0;
    let mut strict = 0;
    let mut violations = Vec::new();
    for mu0 in [0.05, 0.1, 0.2] {
        for modes in [10u64, 50, 100] {
            for (tau0, tau1) in [(0.1, 1.0), (0.5, 1.0), (0.9, 1.0)] {
                let mu = mu0 * modes as f64;
                let params = ReadoutParams::new(mu, modes, tau0, tau1)?;
                let q = quantum_pc_error_exact(&params, Truncation::Adaptive)?.value;
                let c = pc_classical_error(mu, tau0, tau1)?.value;
                total += 1;
                if q > c {
                    violations.push(format!("(mu0 {mu0}, M {modes}, tau0 {tau0})"));
                }
                if c - q >= 1e-4 {
                    strict += 1;
                }
            }
        }
    }
    outcome(
        violations.is_empty() && 2 * strict >= total,
        format!(
            "{total} tuples, quantum above classical at {}, strictly below by 1e-4 at {strict}",
            if violations.is_empty() { "none".to_string() } else { violations.join(" ") }
        ),
    )
}

fn fig2_regime() -> Result<Outcome> {
    let mut cfg = base_config();
    cfg.trials.mc = 100_000;
    ensure!(cfg.grid.tau0.len() == 10, "tau0 grid must have 10 points");
    let t = Instant::now();
    let rows = pixel_error_sweep::sweep(&cfg)?;
    let el = t.elapsed();
    let below: Vec<String> = rows
        .iter()
        .filter(|r| r.p_pc_qua + 3.0 * r.stderr < r.p_lb_cla)
        .map(|r| format!("{}", r.tau0))
        .collect();
    let best = rows
        .iter()
        .filter(|r| r.stderr > 0.0)
        .map(|r| (r.p_lb_cla - r.p_pc_qua) / r.stderr)
        .fold(f64::NEG_INFINITY, f64::max);
    outcome(
        !below.is_empty() && within_budget(el, 300),
        format!(
            "quantum below the classical bound by >= 3 stderr at tau0 in [{}] (best margin {best:.1} stderr) in {el:.2?}",
            below.join(", ")
        ),
    )
}

fn knn_baseline() -> Result<Outcome> {
    let cfg = base_config();
    let train = load_split(&cfg, Split::Train, None)?;
    let test = load_split(&cfg, Split::Test, None)?;
    let t = Instant::now();
    let model = KnnModel::new(&train, 5)?;
    let e = evaluate(&model, &test)?;
    let el = t.elapsed();
    outcome(
        (e.error - 0.04).abs() <= 0.01 && within_budget(el, 300),
        format!(
            "error {:.4} ± {:.4} on {} test vs {} training images in {el:.2?}",
            e.error,
            e.stderr,
            test.len(),
            train.len()
        ),
    )
}

fn advantage_amplification() -> Result<Outcome> {
    let mut cfg = base_config();
    cfg.data.test_subset = Some(2000);
    let train = load_split(&cfg, Split::Train, None)?;
    let test = load_split(&cfg, Split::Test, cfg.data.test_subset)?;
    let model = KnnModel::new(&train, cfg.knn.k)?;
    let rows = scan_classify::sweep(&cfg, &model, &test)?;
    let mut checked = 0;
    let mut failures = Vec::new();
    for pair in rows.chunks(2) {
        let (q, c) = (&pair[0], &pair[1]);
        if (q.pixel_error - c.pixel_error).abs() < 0.02 {
            continue;
        }
        checked += 1;
        let sigma = q.advantage_db_stderr.hypot(q.pixel_advantage_db_stderr);
        if q.advantage_db + 3.0 * sigma < q.pixel_advantage_db {
            failures.push(format!(
                "tau0 {}: {:.2} vs {:.2} dB",
                q.tau0, q.advantage_db, q.pixel_advantage_db
            ));
        }
    }
    outcome(
        checked > 0 && failures.is_empty(),
        format!(
            "{checked} points with pixel errors 0.02 apart; classification advantage below pixel advantage at {}",
            if failures.is_empty() { "none".to_string() } else { failures.join("; ") }
        ),
    )
}

fn by_strategy(rows: &[SweepRow], s: ReadoutStrategy) -> Vec<&SweepRow> {
    rows.iter().filter(|r| r.strategy == s).collect()
}

fn nrf_twin_beam() -> Result<Outcome> {
    let optics = OpticsParams {
        pixel_pitch: 13.0,
        l_c: 0.5,
        mu_px: 1000.0,
        eta_s: 0.8,
        eta_i: 0.8,
        nu_s: 0.0,
        nu_i: 0.0,
        tau0: 1.0,
        tau1: 1.0,
    };
    let open = BinaryImage::zeros(28).complement();
    let out = resolution_sweep(SEED, &[open], &optics, &[1, 3, 5], 1000)?;
    let q = by_strategy(&out.rows, ReadoutStrategy::Quantum);
    let c = by_strategy(&out.rows, ReadoutStrategy::Classical);
    let widest = q.last().expect("rows");
    let twin_ok = (widest.nrf - 0.2).abs() <= 0.02;
    let classical_ok = c.iter().all(|r| (r.nrf - 1.0).abs() <= 0.02);
    let monotone = q
        .windows(2)
        .all(|w| w[1].nrf <= w[0].nrf + 3.0 * w[0].nrf_stderr.hypot(w[1].nrf_stderr));
    let fmt = |rows: &[&SweepRow]| {
        rows.iter()
            .map(|r| format!("{:.3}±{:.3}", r.nrf, r.nrf_stderr))
            .collect::<Vec<_>>()
            .join(" ")
    };
    outcome(
        twin_ok && classical_ok && monotone,
        format!("twin beam d=1,3,5: {}; independent arms: {}", fmt(&q), fmt(&c)),
    )
}

fn multipixel_ordering() -> Result<Outcome> {
    let cfg = base_config();
    let test = load_split(&cfg, Split::Test, None)?;
    let digits = test.head(cfg.trials.patterns);
    let out = resolution_sweep(SEED, &digits.images, &OpticsParams::reference(), &[1, 3, 5], 1000)?;
    let q = by_strategy(&out.rows, ReadoutStrategy::Quantum);
    let c = by_strategy(&out.rows, ReadoutStrategy::Classical);
    let gaps: Vec<(f64, f64)> = q
        .iter()
        .zip(&c)
        .map(|(q, c)| (c.pixel_error - q.pixel_error, q.stderr.hypot(c.stderr)))
        .collect();
    let ordered = gaps.iter().all(|&(g, s)| g > 3.0 * s);
    let widening = gaps
        .windows(2)
        .all(|w| w[1].0 - w[0].0 > 3.0 * w[0].1.hypot(w[1].1));
    let window = (0.25..=0.45).contains(&c[0].pixel_error) && (0.22..=0.42).contains(&q[0].pixel_error);
    let detail = q
        .iter()
        .zip(&c)
        .map(|(q, c)| format!("d={}: {:.4} vs {:.4}", q.d, q.pixel_error, c.pixel_error))
        .collect::<Vec<_>>()
        .join("; ");
    outcome(ordered && widening && window, format!("quantum vs classical pixel error {detail}"))
}

fn read_tree(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>> {
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        files.insert(name, std::fs::read(entry.path())?);
    }
    Ok(files)
}

fn run_cli(cmd: Command, config: &Path, out: &Path, threads: usize) -> Result<()> {
    let status = std::process::Command::new(env!("CARGO_BIN_EXE_qread"))
        .arg(cmd.name())
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .arg("--threads")
        .arg(threads.to_string())
        .env("RUST_LOG", "warn")
        .stdout(std::process::Stdio::null())
        .status()
        .with_context(|| format!("spawning {}", cmd.name()))?;
    ensure!(status.success(), "{} exited with {status}", cmd.name());
    Ok(())
}

fn determinism() -> Result<Outcome> {
    let tmp = tempfile::tempdir()?;
    let config = tmp.path().join("run.toml");
    std::fs::write(
        &config,
        format!(
            "seed = 11\n\
             [trials]\nmc = 3000\npool = 8000\nframes = 40\npatterns = 4\n\
             [data]\nmnist_dir = {:?}\ntrain_subset = 1000\ntest_subset = 100\n\
             [grid]\ntau0 = [0.99, 0.998]\nd = [1, 3]\nnrf_side = 10\n",
            data_dir().display().to_string()
        ),
    )?;
    let mut mismatched = Vec::new();
    let mut files = 0;
    for cmd in Command::ALL {
        let runs: Vec<PathBuf> = ["a", "b", "c"].iter().map(|r| tmp.path().join(cmd.stem()).join(r)).collect();
        run_cli(cmd, &config, &runs[0], 1)?;
        run_cli(cmd, &config, &runs[1], 1)?;
        run_cli(cmd, &config, &runs[2], 2)?;
        let first = read_tree(&runs[0])?;
        files += first.len();
        for other in &runs[1..] {
            if read_tree(other)? != first {
                mismatched.push(cmd.name());
            }
        }
    }
    mismatched.dedup();
    outcome(
        mismatched.is_empty() && files > 0,
        format!(
            "{} commands, {files} files per run, differing reruns: {}",
            Command::ALL.len(),
            if mismatched.is_empty() { "none".to_string() } else { mismatched.join(", ") }
        ),
    )
}

type Check = fn() -> Result<Outcome>;

fn main() -> ExitCode {
    let criteria: [(&str, Check); 9] = [
        ("classical bound saturation", receiver_saturation),
        ("photon-counting closed form", classical_closed_form),
        ("quantum below classical", quantum_ordering),
        ("single-pixel reference regime", fig2_regime),
        ("k-NN clean baseline", knn_baseline),
        ("advantage amplification", advantage_amplification),
        ("noise reduction factor", nrf_twin_beam),
        ("multi-pixel ordering", multipixel_ordering),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let (passed, detail) = match check() {
            Ok(o) => (o.passed, o.detail),
            Err(e) => (false, format!("error: {e:#}")),
        };
        if !passed {
            failed += 1;
        }
        println!(
            "criterion {} {} {name}: {detail} [{:.1} s]",
            i + 1,
            if passed { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
