//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Runs the shipped configs in `configs/`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{self, Command as Proc};
use std::time::{Duration, Instant};

use fedskew::analysis::{inversions, spearman};
use fedskew::data::{gen_synthetic, mixture_distribution, partition};
use fedskew::federation::run_deterministic_pair;
use fedskew::model::{class_conditional_grad, init_params, loss_and_grad, mean_loss};
use fedskew::{LabeledDataset, PartitionKind, PartitionSpec};
use fedskew_cli::{run, Command, ExperimentConfig, Outcome, ResolvedConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load(name: &str, out: &Path) -> ResolvedConfig {
    let mut cfg = ExperimentConfig::load(&configs().join(name)).expect("shipped config loads");
    cfg.output_dir = out.join(name.trim_end_matches(".json"));
    cfg.resolve(None).expect("shipped config is valid")
}

fn within(elapsed: Duration, limit_s: u64) -> (bool, String) {
    (elapsed.as_secs_f64() < limit_s as f64, format!("{:.1}s (limit {limit_s}s)", elapsed.as_secs_f64()))
}

/// Analytic gradients against central differences on random networks.
fn ac1() -> Verdict {
    const EPS: f64 = 1e-5;
    // Denominator floor for entries whose gradient is itself ~0.
    const FLOOR: f64 = 1e-6;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xAC1);
    let mut worst: f64 = 0.0;
    let instances = 24;
    let mut checked = 0;
    for inst in 0..instances {
        let dim = rng.random_range(1..=5);
        let classes = rng.random_range(2..=4);
        let mut dims = vec![dim];
        for _ in 0..rng.random_range(0..=2) {
            dims.push(rng.random_range(1..=5));
        }
        dims.push(classes);
        let params = init_params(&dims, inst, rng.random_range(0.3..1.5)).unwrap();
        let n = rng.random_range(1..=6);
        let features: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let data = LabeledDataset::new(features, labels, dim, classes).unwrap();

        let analytic = loss_and_grad(&params, &data).unwrap().1.flatten();
        let flat = params.flatten();
        for j in 0..flat.len() {
            let mut plus = flat.clone();
            plus[j] += EPS;
            let mut minus = flat.clone();
            minus[j] -= EPS;
            let lp = mean_loss(&params.unflatten(&plus).unwrap(), &data).unwrap();
            let lm = mean_loss(&params.unflatten(&minus).unwrap(), &data).unwrap();
            let numeric = (lp - lm) / (2.0 * EPS);
            let rel = (analytic[j] - numeric).abs() / analytic[j].abs().max(numeric.abs()).max(FLOOR);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    let (fast, t) = within(start.elapsed(), 10);
    verdict(
        worst < 1e-5 && fast,
        format!("{instances} networks, {checked} partials, max rel err {worst:.2e} (< 1e-5), {t}"),
    )
}

fn final_fedavg(cfg: &ResolvedConfig) -> (f64, f64) {
    match run(Command::Train, cfg).unwrap() {
        Outcome::Train(t) => (t.summary.final_acc_fedavg, t.summary.final_acc_sgd),
        _ => unreachable!(),
    }
}

/// IID FedAvg tracks centralized SGD with batch B·K. Returns the IID
/// FedAvg accuracy for reuse.
fn ac2(out: &Path) -> (Verdict, f64) {
    let start = Instant::now();
    let (fed, sgd) = final_fedavg(&load("train_iid.json", out));
    let gap = (fed - sgd).abs();
    let (fast, t) = within(start.elapsed(), 120);
    (
        verdict(
            gap <= 0.02 && fast,
            format!("FedAvg {fed:.4}, centralized {sgd:.4}, |gap| {:.2} pts (<= 2), {t}", gap * 100.0),
        ),
        fed,
    )
}

fn ac3(out: &Path, iid: f64) -> Verdict {
    let start = Instant::now();
    let (two, _) = final_fedavg(&load("train_2class.json", out));
    let (one, _) = final_fedavg(&load("train_1class.json", out));
    let (d1, d2) = (iid - one, iid - two);
    let (fast, t) = within(start.elapsed(), 240);
    verdict(
        d1 >= 0.03 && d1 >= d2 && fast,
        format!(
            "IID {iid:.4}, 2-class {two:.4} (-{:.1} pts), 1-class {one:.4} (-{:.1} pts; need >= 3 and >= 2-class), {t}",
            d2 * 100.0,
            d1 * 100.0
        ),
    )
}

fn ac4_ac5(out: &Path) -> (Verdict, Verdict) {
    let start = Instant::now();
    let cfg = load("sweep_emd.json", out);
    let Outcome::Sweep(s) = run(Command::SweepEmd, &cfg).unwrap() else {
        unreachable!()
    };
    let elapsed = start.elapsed();
    let emds: Vec<f64> = s.divergence.total_rows().map(|r| r.emd).collect();
    let div: Vec<f64> = s.divergence.total_rows().map(|r| r.mean).collect();
    let rho = spearman(&emds, &div).unwrap();
    let (fast, t) = within(elapsed, 300);
    let ac4 = verdict(
        rho >= 0.9 && emds.len() == 7 && fast,
        format!("Spearman(EMD, divergence) = {rho:.3} over {} points (>= 0.9), {t}", emds.len()),
    );

    let acc = s.accuracy.means();
    let inv = inversions(&acc);
    let drop = acc[0] - acc[acc.len() - 1];
    let trend_ok = inv.len() <= 1 && inv.iter().all(|&d| d <= 0.005);
    let ac5 = verdict(
        trend_ok && drop >= 0.03,
        format!(
            "mean accuracy {:?}, inversions {:?} (<= 1 of <= 0.5 pts), drop {:.1} pts (>= 3)",
            acc.iter().map(|a| (a * 1e4).round() / 1e4).collect::<Vec<_>>(),
            inv,
            drop * 100.0
        ),
    );
    (ac4, ac5)
}

fn ac6(out: &Path) -> Verdict {
    let start = Instant::now();
    let cfg = load("bound.json", out);
    let Outcome::Bound(est) = run(Command::VerifyBound, &cfg).unwrap() else {
        unreachable!()
    };
    let Outcome::Bound(zero) = run(Command::VerifyBound, &load("bound_lambda_zero.json", out)).unwrap() else {
        unreachable!()
    };
    let (fast, t) = within(start.elapsed(), 60);

    let data = fedskew_cli::experiment::load_datasets(&cfg).unwrap().train;
    let params = fedskew_cli::experiment::initial_model(&cfg, &data).unwrap().num_params();
    let b = cfg.config.bound.as_ref().unwrap();
    let shape_ok = data.num_classes() == 3
        && cfg.config.fed.clients == 3
        && params <= 200
        && b.sync_interval == 2
        && b.rounds == 3
        && b.probe.safety_factor == 1.5
        && est.rows.len() == 3;
    let min_est = est.rows.iter().map(|r| r.slack).fold(f64::INFINITY, f64::min);
    let min_zero = zero.rows.iter().map(|r| r.slack).fold(f64::INFINITY, f64::min);
    verdict(
        shape_ok && est.passed && !zero.passed && fast,
        format!(
            "C=3 K=3 T=2 m=3, {params} params: estimated-λ min slack {min_est:.3} (>= -1e-9), \
             λ=0 min slack {min_zero:.3} (violation expected), {t}"
        ),
    )
}

/// One synchronization with one local step, against the direct formula.
fn ac7() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for (seed, kind) in [
        (1, PartitionKind::KClass { classes_per_client: 1 }),
        (2, PartitionKind::KClass { classes_per_client: 2 }),
        (3, PartitionKind::TargetEmd { emd: 1.2 }),
        (4, PartitionKind::Iid),
    ] {
        let data = gen_synthetic(3, 4, 12, 2.0, seed).unwrap();
        let shards = partition(&data, &PartitionSpec { kind, clients: 3, seed }).unwrap();
        let init = init_params(&[4, 6, 3], seed, 1.0).unwrap();
        let eta = 0.7;
        let run = run_deterministic_pair(&shards, &init, eta, 1, 1).unwrap();
        let measured = run.synced[1].distance(&run.central[1]).unwrap();

        let g: Vec<Vec<f64>> = (0..3)
            .map(|i| class_conditional_grad(&init, &run.pooled, i).unwrap().flatten())
            .collect();
        let n_total: usize = run.client_n.iter().sum();
        let p = run.population.probs();
        let mut acc = vec![0.0; g[0].len()];
        for (pk, &nk) in run.client_dists.iter().zip(&run.client_n) {
            let w = nk as f64 / n_total as f64;
            for (i, gi) in g.iter().enumerate() {
                let coef = w * (pk.probs()[i] - p[i]);
                for (a, x) in acc.iter_mut().zip(gi) {
                    *a += coef * x;
                }
            }
        }
        let formula = eta * acc.iter().map(|x| x * x).sum::<f64>().sqrt();
        worst = worst.max((measured - formula).abs());
        cases += 1;
    }
    verdict(
        worst <= 1e-9,
        format!("{cases} instances, max |measured - formula| {worst:.2e} (<= 1e-9)"),
    )
}

fn ac8(out: &Path) -> Verdict {
    let start = Instant::now();
    let Outcome::Share(reports) = run(Command::Share, &load("share.json", out)).unwrap() else {
        unreachable!()
    };
    let (fast, t) = within(start.elapsed(), 180);
    let mut ok = fast;
    let mut parts = Vec::new();
    for alpha in [0.5, 1.0] {
        let Some(r) = reports.iter().find(|r| r.alpha == alpha && r.beta == 0.10) else {
            return verdict(false, format!("no β=0.10, α={alpha} run in share.json"));
        };
        let emd_ok = r.clients.iter().all(|c| c.emd_after < c.emd_before);
        ok &= r.final_shared() > r.final_control() && emd_ok;
        parts.push(format!(
            "α={alpha}: shared {:.4} vs control {:.4}, every client EMD down: {emd_ok}",
            r.final_shared(),
            r.final_control()
        ));
    }
    verdict(ok, format!("{}; {t}", parts.join("; ")))
}

/// Disjoint, exhaustive and mixture-closed shards over a matrix of specs.
fn ac9() -> Verdict {
    // Sizes divisible by every clients · classes_per_client product below.
    let balanced = gen_synthetic(4, 2, 36, 1.0, 9).unwrap();
    let skewed = {
        let base = gen_synthetic(4, 2, 48, 1.0, 10).unwrap();
        // Keep 48, 40, 32, 24 examples of the four classes.
        let keep: Vec<usize> = (0..base.len())
            .filter(|&i| i % 48 < 48 - 8 * base.label(i))
            .collect();
        base.subset(&keep)
    };
    let mut specs: Vec<(&LabeledDataset, PartitionSpec)> = Vec::new();
    for (data, seeds) in [(&balanced, 0..3u64), (&skewed, 3..6)] {
        for seed in seeds {
            for clients in [1, 4, 8] {
                specs.push((data, PartitionSpec { kind: PartitionKind::Iid, clients, seed }));
                for c in 1..=3 {
                    specs.push((
                        data,
                        PartitionSpec {
                            kind: PartitionKind::KClass { classes_per_client: c },
                            clients,
                            seed,
                        },
                    ));
                }
            }
        }
    }
    for seed in 0..3 {
        for target in [0.0, 0.5, 1.0, 1.5] {
            for clients in [4, 8] {
                specs.push((
                    &balanced,
                    PartitionSpec {
                        kind: PartitionKind::TargetEmd { emd: target },
                        clients,
                        seed,
                    },
                ));
            }
        }
    }

    let mut failures = Vec::new();
    for (data, spec) in &specs {
        let shards = partition(data, spec).unwrap();
        let mut seen = vec![0u32; data.len()];
        for s in &shards {
            for &i in &s.indices {
                seen[i] += 1;
            }
        }
        let disjoint_exhaustive = seen.iter().all(|&c| c == 1);
        let mixture = mixture_distribution(&shards).unwrap();
        let population = data.distribution().unwrap();
        let closure = mixture
            .probs()
            .iter()
            .zip(population.probs())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if !disjoint_exhaustive || closure > 1e-9 {
            failures.push(format!("{spec:?}"));
        }
    }
    verdict(
        failures.is_empty(),
        format!("{} specs audited, failures: {failures:?}", specs.len()),
    )
}

/// Two runs of the binary on the same config give identical CSV bytes.
fn ac10(out: &Path) -> Verdict {
    let bin = env!("CARGO_BIN_EXE_fedskew");
    let mut compared = 0;
    let mut diffs = Vec::new();
    for (cmd, cfg) in [
        ("train", "train_2class.json"),
        ("verify-bound", "bound.json"),
        ("share", "share.json"),
        ("sweep-emd", "sweep_emd.json"),
    ] {
        let dirs: Vec<PathBuf> = (0..2).map(|i| out.join(format!("det-{cmd}-{i}"))).collect();
        for d in &dirs {
            let status = Proc::new(bin)
                .args([cmd, "--config"])
                .arg(configs().join(cfg))
                .arg("--out")
                .arg(d)
                .output()
                .expect("binary runs");
            if !status.status.success() {
                return verdict(false, format!("{cmd} exited with {:?}", status.status.code()));
            }
        }
        let mut names: Vec<_> = fs::read_dir(&dirs[0])
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .filter(|n| n.to_string_lossy().ends_with(".csv"))
            .collect();
        names.sort();
        for name in names {
            let a = fs::read(dirs[0].join(&name)).unwrap();
            let b = fs::read(dirs[1].join(&name)).unwrap();
            compared += 1;
            if a != b {
                diffs.push(name.to_string_lossy().into_owned());
            }
        }
    }
    verdict(
        diffs.is_empty() && compared == 7,
        format!("{compared} CSV files from 4 commands run twice, differing: {diffs:?}"),
    )
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let out = tmp.path();
    let mut results: Vec<(u32, &str, Verdict)> = Vec::new();
    let mut record = |n, name, v: Verdict| {
        println!("AC{n:<2} {} {name}: {}", if v.passed { "PASS" } else { "FAIL" }, v.detail);
        results.push((n, name, v));
    };

    record(1, "gradient oracle", ac1());
    let (v2, iid) = ac2(out);
    record(2, "IID equivalence", v2);
    record(3, "non-IID degradation", ac3(out, iid));
    let (v4, v5) = ac4_ac5(out);
    record(4, "divergence monotone in EMD", v4);
    record(5, "accuracy decreases with EMD", v5);
    record(6, "divergence bound", ac6(out));
    record(7, "one-step closed form", ac7());
    record(8, "data sharing", ac8(out));
    record(9, "partition audits", ac9());
    record(10, "determinism", ac10(out));

    let failed: Vec<u32> = results.iter().filter(|r| !r.2.passed).map(|r| r.0).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
    } else {
        println!("acceptance: FAILED criteria {failed:?}");
        process::exit(1);
    }
}
