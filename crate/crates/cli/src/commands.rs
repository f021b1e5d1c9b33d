//! The four subcommands. Each returns its results in memory and writes CSV
//! artifacts, each with a JSON sidecar, into the output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use fedskew::analysis::{accuracy_vs_emd_sweep, divergence_vs_emd_sweep, verify_bound, AccuracyTable};
use fedskew::federation::{run_centralized, run_fedavg};
use fedskew::sharing::run_sharing_experiment;
use fedskew::{BoundCheckReport, LabeledDataset, RoundRecord, SharingReport, SweepTable};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{DatasetConfig, ResolvedConfig};
use crate::error::{exit, CliError, Result, SectionExt};
use crate::experiment::{client_shards, initial_model, load_datasets};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Train,
    SweepEmd,
    VerifyBound,
    Share,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::SweepEmd => "sweep-emd",
            Command::VerifyBound => "verify-bound",
            Command::Share => "share",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub final_acc_fedavg: f64,
    pub final_acc_sgd: f64,
    /// `final_acc_fedavg - final_acc_sgd`.
    pub accuracy_gap: f64,
    pub rounds: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub fedavg: Vec<RoundRecord>,
    pub sgd: Vec<RoundRecord>,
    pub summary: TrainSummary,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub divergence: SweepTable,
    pub accuracy: AccuracyTable,
}

#[derive(Debug, Clone)]
pub enum Outcome {
    Train(TrainOutcome),
    Sweep(SweepOutcome),
    Bound(BoundCheckReport),
    Share(Vec<SharingReport>),
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        match self {
            Outcome::Bound(r) if !r.passed => exit::BOUND_VIOLATED,
            _ => exit::OK,
        }
    }

    /// One-line JSON digest for stdout.
    pub fn digest(&self) -> Value {
        match self {
            Outcome::Train(t) => json!({"command": "train", "summary": t.summary}),
            Outcome::Sweep(s) => json!({
                "command": "sweep-emd",
                "divergence_total": s.divergence.total_rows().map(|r| [r.emd, r.mean]).collect::<Vec<_>>(),
                "accuracy": s.accuracy.rows.iter().map(|r| [r.emd, r.mean]).collect::<Vec<_>>(),
            }),
            Outcome::Bound(b) => json!({
                "command": "verify-bound",
                "passed": b.passed,
                "reestimated": b.reestimated,
                "min_slack": b.rows.iter().map(|r| r.slack).fold(f64::INFINITY, f64::min),
            }),
            Outcome::Share(reports) => json!({
                "command": "share",
                "runs": reports.iter().map(|r| json!({
                    "alpha": r.alpha,
                    "final_shared": r.final_shared(),
                    "final_control": r.final_control(),
                })).collect::<Vec<_>>(),
            }),
        }
    }
}

/// Runs `cmd` and writes its artifacts to `cfg.config.output_dir`.
pub fn run(cmd: Command, cfg: &ResolvedConfig) -> Result<Outcome> {
    let out = Artifacts::new(cmd, cfg)?;
    match cmd {
        Command::Train => train(cfg, &out).map(Outcome::Train),
        Command::SweepEmd => sweep_emd(cfg, &out).map(Outcome::Sweep),
        Command::VerifyBound => bound(cfg, &out).map(Outcome::Bound),
        Command::Share => share(cfg, &out).map(Outcome::Share),
    }
}

fn train(cfg: &ResolvedConfig, out: &Artifacts) -> Result<TrainOutcome> {
    let data = load_datasets(cfg)?;
    let shards = client_shards(cfg, &data.train)?;
    let init = initial_model(cfg, &data.train)?;
    let fed = cfg.fed();
    let pooled = pooled(&shards)?;
    let (fedavg, sgd) = rayon::join(
        || run_fedavg(&shards, &data.test, &init, &fed).section("fed"),
        || run_centralized(&pooled, &data.test, &init, &fed).section("fed"),
    );
    let (fedavg, sgd) = (fedavg?, sgd?);

    let mut csv = String::from("round,eta,acc_fedavg,acc_sgd\n");
    for (f, s) in fedavg.iter().zip(&sgd) {
        writeln!(csv, "{},{},{},{}", f.round, f.eta, f.test_accuracy, s.test_accuracy).unwrap();
    }
    out.csv(
        "rounds.csv",
        &csv,
        json!({"centralized_batch_size": fed.batch_size * fed.clients}),
    )?;

    let (a, b) = (last_accuracy(&fedavg), last_accuracy(&sgd));
    let summary = TrainSummary {
        final_acc_fedavg: a,
        final_acc_sgd: b,
        accuracy_gap: a - b,
        rounds: fed.rounds,
    };
    out.json("summary.json", &json!({"summary": summary, "resolved": cfg}))?;
    Ok(TrainOutcome { fedavg, sgd, summary })
}

fn sweep_emd(cfg: &ResolvedConfig, out: &Artifacts) -> Result<SweepOutcome> {
    let sweep = cfg.require_sweep()?;
    let data = load_datasets(cfg)?;
    let init = initial_model(cfg, &data.train)?;
    let fed = cfg.fed();
    let divergence =
        divergence_vs_emd_sweep(&data.train, &sweep.grid, sweep.reps, &init, &fed, cfg.seeds.sweep).section("sweep")?;
    let accuracy = accuracy_vs_emd_sweep(
        &data.train,
        &data.test,
        &sweep.grid,
        sweep.reps,
        &init,
        &fed,
        cfg.seeds.sweep,
    )
    .section("sweep")?;

    let note = json!({
        "note": "the reference grid point EMD = 1.764 is omitted: it is an artifact of one particular \
                 partition construction rather than a property of the EMD scale",
        "reps": sweep.reps,
        "std": "population standard deviation over repetitions",
    });
    out.csv("divergence.csv", &divergence.to_summary_csv(), note.clone())?;
    out.csv("divergence_reps.csv", &divergence.to_long_csv(), note.clone())?;
    out.csv("accuracy_vs_emd.csv", &accuracy.to_csv(), note)?;
    Ok(SweepOutcome { divergence, accuracy })
}

fn bound(cfg: &ResolvedConfig, out: &Artifacts) -> Result<BoundCheckReport> {
    let b = cfg.require_bound()?;
    let data = load_datasets(cfg)?;
    let shards = client_shards(cfg, &data.train)?;
    let init = initial_model(cfg, &data.train)?;
    if let Some(l) = &b.lambda_override {
        if l.len() != data.train.num_classes() {
            return Err(CliError::config(
                "bound.lambda_override",
                format!("need one value per class ({}), got {}", data.train.num_classes(), l.len()),
            ));
        }
    }
    let report = verify_bound(
        &shards,
        &init,
        b.eta,
        b.sync_interval,
        b.rounds,
        &cfg.probe()?,
        b.lambda_override.as_deref(),
    )
    .section("bound")?;
    out.csv(
        "bound.csv",
        &report.to_csv(),
        json!({
            "passed": report.passed,
            "lambda": report.lambda,
            "lambda_source": report.lambda_source,
            "reestimated": report.reestimated,
            "gmax_trace": report.gmax_trace,
            "num_params": init.num_params(),
        }),
    )?;
    Ok(report)
}

fn share(cfg: &ResolvedConfig, out: &Artifacts) -> Result<Vec<SharingReport>> {
    let s = cfg.require_share()?;
    let data = load_datasets(cfg)?;
    let holdout = data.holdout.as_ref().ok_or_else(|| {
        let field = match cfg.config.dataset {
            DatasetConfig::Synthetic { .. } => "dataset.holdout_per_class",
            DatasetConfig::Idx { .. } => "dataset.holdout_fraction",
        };
        CliError::config(field, "the share command needs a holdout set")
    })?;
    let shards = client_shards(cfg, &data.train)?;
    let init = initial_model(cfg, &data.train)?;
    let fed = cfg.fed();
    let reports = s
        .alphas
        .par_iter()
        .map(|&alpha| {
            run_sharing_experiment(&shards, holdout, &data.test, &init, &fed, &cfg.share_config(alpha)?)
                .section("share")
        })
        .collect::<Result<Vec<_>>>()?;

    let mut traj = String::from("alpha,round,accuracy_shared,accuracy_control\n");
    let mut shift = String::from("alpha,client_id,emd_before,emd_after\n");
    for r in &reports {
        for (a, b) in r.shared.iter().zip(&r.control) {
            writeln!(traj, "{},{},{},{}", r.alpha, a.round, a.test_accuracy, b.test_accuracy).unwrap();
        }
        for c in &r.clients {
            writeln!(shift, "{},{},{},{}", r.alpha, c.client_id, c.emd_before, c.emd_after).unwrap();
        }
    }
    let runs: Vec<Value> = reports
        .iter()
        .map(|r| {
            json!({
                "alpha": r.alpha,
                "share_size": r.share_size,
                "portion_size": r.portion_size,
                "warmup_accuracy": r.warmup_accuracy,
                "final_shared": r.final_shared(),
                "final_control": r.final_control(),
            })
        })
        .collect();
    out.csv("sharing.csv", &traj, json!({ "runs": runs }))?;
    out.csv("emd_shift.csv", &shift, json!({ "runs": runs }))?;
    Ok(reports)
}

fn pooled(shards: &[fedskew::ClientShard]) -> Result<LabeledDataset> {
    let parts: Vec<&LabeledDataset> = shards.iter().map(|s| &s.data).collect();
    Ok(LabeledDataset::concat(&parts)?)
}

fn last_accuracy(records: &[RoundRecord]) -> f64 {
    records.last().map_or(f64::NAN, |r| r.test_accuracy)
}

/// Writes files into the output directory. Every CSV gets a `<stem>.json`
/// sidecar carrying the resolved config (with derived seeds).
struct Artifacts<'a> {
    cmd: Command,
    cfg: &'a ResolvedConfig,
}

impl<'a> Artifacts<'a> {
    fn new(cmd: Command, cfg: &'a ResolvedConfig) -> Result<Self> {
        let dir = &cfg.config.output_dir;
        fs::create_dir_all(dir).map_err(|e| CliError::io(format!("cannot create {}", dir.display()), e))?;
        Ok(Artifacts { cmd, cfg })
    }

    fn write(&self, name: &str, contents: &str) -> Result<()> {
        let path = self.cfg.config.output_dir.join(name);
        fs::write(&path, contents).map_err(|e| CliError::io(format!("cannot write {}", path.display()), e))
    }

    fn csv(&self, name: &str, contents: &str, extra: Value) -> Result<()> {
        self.write(name, contents)?;
        let sidecar = json!({
            "command": self.cmd.name(),
            "file": name,
            "columns": contents.lines().next().unwrap_or("").split(',').collect::<Vec<_>>(),
            "details": extra,
            "resolved": self.cfg,
        });
        let stem = Path::new(name).file_stem().and_then(|s| s.to_str()).unwrap_or(name);
        self.json(&format!("{stem}.json"), &sidecar)
    }

    fn json(&self, name: &str, value: &Value) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).expect("artifact JSON serializes");
        text.push('\n');
        self.write(name, &text)
    }
}
