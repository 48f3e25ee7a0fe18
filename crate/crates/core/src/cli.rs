//! Command-line front end. Every subcommand reads the same TOML config, writes
//! its outputs under the output directory, and records the resolved config
//! next to them.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::experiments::{self, DelaySweepConfig, ExperimentInputs, ABLATION_SETS};
use crate::frame::FeatureFrame;
use crate::ingest::{parse_transactions, temporal_split, write_transactions, DatasetSplit, SplitPart};
use crate::metrics::{fpr_grid, recall_at, recall_at_fpr, roc_points};
use crate::model::{self, hyperparameter_search, write_leaderboard, ModelArtifact};
use crate::pipeline::{featurize, profile_features, rows_in, rows_where, Dataset};
use crate::rng;
use crate::synth::{false_positive_share, synthesize};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "aml-triage", version, about = "Triage rule-based AML alerts with graph features")]
pub struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed, overriding the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Target false-positive rate for recall, overriding the config.
    #[arg(long, global = true)]
    pub fpr: Option<f64>,
    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset and write its alerted subset.
    Synth,
    /// Build the feature frame from alerted transactions.
    Featurize,
    /// Run the hyperparameter search and save the best model.
    Train,
    /// Score the test split and compare feature sets.
    Evaluate,
    /// Run a label-delay or window-size sweep.
    Sweep {
        #[command(subcommand)]
        kind: SweepKind,
    },
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum SweepKind {
    /// Recall versus label delay for delay-tolerant walk features.
    Delay,
    /// Recall over the legitimate/suspicious retention grid.
    Windows,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Featurize => "featurize",
            Command::Train => "train",
            Command::Evaluate => "evaluate",
            Command::Sweep { kind: SweepKind::Delay } => "sweep_delay",
            Command::Sweep { kind: SweepKind::Windows } => "sweep_windows",
        }
    }
}

/// Parse arguments, run, and map the outcome to an exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match std::panic::catch_unwind(|| execute(&cli)) {
        Ok(Ok(())) => EXIT_OK,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            if e.is_data_error() {
                EXIT_DATA
            } else {
                EXIT_USAGE
            }
        }
        Err(_) => {
            eprintln!("error: internal failure");
            EXIT_INTERNAL
        }
    }
}

/// Load the config file (or defaults) and apply command-line overrides.
pub fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(fpr) = cli.fpr {
        cfg.fpr_target = fpr;
        cfg.search.target_fpr = fpr;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> Result<()> {
    let cfg = resolve(cli)?;
    let out = cfg.out_dir.clone();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    write_text(&out.join(format!("{}.resolved.toml", cli.command.name())), &cfg.to_toml()?)?;
    match &cli.command {
        Command::Synth => cmd_synth(&cfg),
        Command::Featurize => cmd_featurize(&cfg),
        Command::Train => cmd_train(&cfg),
        Command::Evaluate => cmd_evaluate(&cfg),
        Command::Sweep { kind: SweepKind::Delay } => cmd_sweep_delay(&cfg),
        Command::Sweep { kind: SweepKind::Windows } => cmd_sweep_windows(&cfg),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    Dataset::new(parse_transactions(cfg.input_path())?)
}

fn load_frame(cfg: &RunConfig) -> Result<(FeatureFrame, DatasetSplit)> {
    let path = cfg.out_dir.join("features.csv");
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    let frame = FeatureFrame::read_csv(std::io::BufReader::new(file))?;
    let split: DatasetSplit = read_json(&cfg.out_dir.join("split.json"))?;
    Ok((frame, split))
}

fn provenance(cfg: &RunConfig) -> Result<serde_json::Value> {
    Ok(json!({ "seed": cfg.seed, "config_hash": cfg.hash()? }))
}

fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    let synth = cfg.synth_config();
    let data = synthesize(&synth)?;
    let path = cfg.out_dir.join("transactions.csv");
    let mut w = create(&path)?;
    write_transactions(&mut w, &data.alerted)?;
    w.flush().map_err(|e| Error::io(&path, e))?;
    let suspicious = data.all.iter().filter(|t| t.label.is_suspicious()).count();
    let summary = json!({
        "provenance": provenance(cfg)?,
        "n_transactions": data.all.len(),
        "n_alerted": data.alerted.len(),
        "n_suspicious": suspicious,
        "alerted_fp_share": false_positive_share(&data.alerted),
        "target_fp_share": synth.target_alert_fp_rate,
        "calibrated_amount_threshold": data.calibration.rules.amount_threshold,
        "calibration_iterations": data.calibration.iterations,
    });
    write_json(&cfg.out_dir.join("synth_summary.json"), &summary)
}

fn cmd_featurize(cfg: &RunConfig) -> Result<()> {
    let ds = load_dataset(cfg)?;
    let f = featurize(&ds, &cfg.featurize_config())?;
    let path = cfg.out_dir.join("features.csv");
    let mut w = create(&path)?;
    f.frame.write_csv(&mut w)?;
    w.flush().map_err(|e| Error::io(&path, e))?;
    write_json(&cfg.out_dir.join("split.json"), &f.split)?;
    let selection = f.selection.map(|s| {
        json!({
            "selected": s.features,
            "ranking": s.ranking.iter().map(|(n, v)| json!([n, v])).collect::<Vec<_>>(),
        })
    });
    write_json(
        &cfg.out_dir.join("selection.json"),
        &json!({ "provenance": provenance(cfg)?, "selection": selection }),
    )
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let (frame, split) = load_frame(cfg)?;
    // walk features built from pseudo-labels saw scores fitted on the first
    // training half, so the model only learns from the second
    let uses_pseudo_labels = frame.has_provenance(crate::frame::Provenance::Gwd);
    let train_rows = if uses_pseudo_labels {
        rows_where(&frame, |d| split.in_second_half(d))
    } else {
        rows_in(&frame, &split, SplitPart::Train)
    };
    let val_rows = rows_in(&frame, &split, SplitPart::Validation);
    let outcome = hyperparameter_search(
        &frame.select_rows(&train_rows),
        &frame.select_rows(&val_rows),
        &cfg.search,
        rng::sub_seed(cfg.seed, "search"),
    )?;
    let mut best = outcome.best;
    best.metadata.insert("config_hash".into(), cfg.hash()?);
    best.metadata.insert("best_trial".into(), outcome.best_trial.to_string());
    best.metadata
        .insert("train_rows".into(), if uses_pseudo_labels { "train_half_2" } else { "train" }.into());
    best.save(&cfg.out_dir.join("model.json"))?;
    let path = cfg.out_dir.join("leaderboard.csv");
    let mut w = create(&path)?;
    write_leaderboard(&mut w, &outcome.leaderboard)?;
    w.flush().map_err(|e| Error::io(&path, e))
}

fn roc_json(scores: &[f64], labels: &[bool]) -> Result<serde_json::Value> {
    let pts = roc_points(scores, labels)?;
    Ok(fpr_grid().into_iter().map(|f| json!([f, recall_at(&pts, f)])).collect())
}

fn cmd_evaluate(cfg: &RunConfig) -> Result<()> {
    let (frame, split) = load_frame(cfg)?;
    let artifact = ModelArtifact::load(&cfg.out_dir.join("model.json"))?;
    let test = frame.select_rows(&rows_in(&frame, &split, SplitPart::Test));
    let labels = test.label_bits();
    let scores = model::predict(&artifact, &test)?;
    let ablation = experiments::ablation(
        &frame,
        &split,
        &ABLATION_SETS,
        &cfg.experiment_params(),
        rng::sub_seed(cfg.seed, "ablation"),
        cfg.fpr_target,
    )?;

    let path = cfg.out_dir.join("fig3_delta_recall.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    let sets: Vec<&String> = ablation.deltas.keys().collect();
    let mut header = vec!["fpr".to_string()];
    header.extend(sets.iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    for (i, f) in ablation.grid.iter().enumerate() {
        let mut row = vec![f.to_string()];
        row.extend(sets.iter().map(|s| ablation.deltas[*s][i].to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let report = json!({
        "provenance": provenance(cfg)?,
        "fpr_target": cfg.fpr_target,
        "n_test_rows": test.n_rows(),
        "n_test_positive": labels.iter().filter(|&&l| l).count(),
        "model": {
            "algorithm": artifact.params.algorithm().to_string(),
            "params": artifact.params.to_string(),
            "metadata": artifact.metadata,
            "test_recall": recall_at_fpr(&scores, &labels, cfg.fpr_target)?,
            "roc": roc_json(&scores, &labels)?,
        },
        "ablation": ablation,
    });
    write_json(&cfg.out_dir.join("report.json"), &report)
}

struct SweepData {
    dataset: Dataset,
    base: FeatureFrame,
    split: DatasetSplit,
}

fn sweep_data(cfg: &RunConfig) -> Result<SweepData> {
    let dataset = load_dataset(cfg)?;
    let s = cfg.split;
    let split = temporal_split(&dataset.records, (s.train, s.validation, s.test))?;
    let base = if cfg.features.profiles {
        profile_features(&dataset, &split, &cfg.profiles, cfg.fpr_target, cfg.seed)?.0
    } else {
        crate::profiles::raw_features(&dataset.records)?
    };
    Ok(SweepData { dataset, base, split })
}

fn inputs<'a>(cfg: &RunConfig, data: &'a SweepData) -> ExperimentInputs<'a> {
    ExperimentInputs {
        dataset: &data.dataset,
        base: &data.base,
        split: &data.split,
        params: cfg.experiment_params(),
        walk: cfg.walk_config(),
        seed: cfg.seed,
        fpr: cfg.fpr_target,
    }
}

fn cmd_sweep_delay(cfg: &RunConfig) -> Result<()> {
    let data = sweep_data(cfg)?;
    let sw = &cfg.sweep;
    let result = experiments::delay_sweep(
        &inputs(cfg, &data),
        &DelaySweepConfig {
            delays: sw.delays.clone(),
            n_seeds: sw.n_seeds,
            twl_days: sw.twl_days,
            tws_days: sw.tws_days,
            threshold: sw.threshold,
            threshold_delay: sw.threshold_delay,
            threshold_grid: cfg.gwd.threshold_grid.clone(),
        },
    )?;
    let path = cfg.out_dir.join("fig4_delay.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record(["delay", "seed", "recall"])?;
    for r in &result.rows {
        w.write_record([r.delay.to_string(), r.seed.to_string(), r.recall.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    write_json(
        &cfg.out_dir.join("delay_report.json"),
        &json!({ "provenance": provenance(cfg)?, "fpr_target": cfg.fpr_target, "sweep": result }),
    )
}

fn cmd_sweep_windows(cfg: &RunConfig) -> Result<()> {
    let data = sweep_data(cfg)?;
    let sw = &cfg.sweep;
    let result =
        experiments::window_sweep(&inputs(cfg, &data), &sw.twl_grid, &sw.tws_grid, sw.window_label_delay_days)?;
    let path = cfg.out_dir.join("fig5_windows.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record(["twl", "tws", "recall"])?;
    for c in &result.cells {
        w.write_record([c.twl.to_string(), c.tws.to_string(), c.recall.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    write_json(
        &cfg.out_dir.join("windows_report.json"),
        &json!({ "provenance": provenance(cfg)?, "fpr_target": cfg.fpr_target, "sweep": result }),
    )
}

