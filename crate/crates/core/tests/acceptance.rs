//! Acceptance suite. Every criterion runs even when an earlier one fails, and
//! each prints one `PASS`/`FAIL` line straight to stdout so the verdicts show
//! up without `--nocapture`.
//!
//! Criteria 6 to 8 share one default synthetic dataset, generated and
//! featurized once with the default run configuration.

mod common;

use std::collections::BTreeMap;
use std::io::Write;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use aml_triage::config::RunConfig;
use aml_triage::experiments::{self, DelaySweepConfig, ExperimentInputs, ABLATION_SETS};
use aml_triage::frame::{FeatureFrame, Provenance};
use aml_triage::graph::{GraphSnapshot, WindowConfig};
use aml_triage::ingest::{build_account_days, write_transactions};
use aml_triage::metrics::recall_at_fpr;
use aml_triage::model;
use aml_triage::pipeline::{featurize, Dataset, Featurized};
use aml_triage::profiles::{compute_profiles, default_specs, DEFAULT_WINDOWS};
use aml_triage::rng;
use aml_triage::synth::{false_positive_share, synthesize};
use aml_triage::walker::{make_label_view, run_walks, WalkConfig, Walker};
use common::{
    check_equivalence, close, exhaustive_recall, frame, gbdt, glm, naive, random_events, random_instance, random_txns,
    record, rf, star, toy, WINDOWS,
};
use rand::seq::IndexedRandom;
use rand::Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, message: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(message())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn say(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{text}");
    let _ = out.flush();
}

fn panic_text(payload: Box<dyn std::any::Any + Send>) -> String {
    payload
        .downcast_ref::<String>()
        .cloned()
        .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "panic".into())
}

#[derive(Default)]
struct Verdicts {
    failed: Vec<String>,
    total: usize,
}

impl Verdicts {
    fn check(&mut self, id: u32, name: &str, f: impl FnOnce() -> Outcome) {
        let started = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| Err(panic_text(p)));
        let secs = started.elapsed().as_secs_f64();
        self.total += 1;
        match outcome {
            Ok(detail) => say(&format!("PASS [{id:>2}] {name}: {detail} ({secs:.1}s)")),
            Err(why) => {
                say(&format!("FAIL [{id:>2}] {name}: {why} ({secs:.1}s)"));
                self.failed.push(format!("{id} {name}"));
            }
        }
    }
}

fn graph_oracle() -> Outcome {
    let started = Instant::now();
    let mut pick = rng::stream(580, &[]);
    let mut n_events = 0;
    for seed in 0..100 {
        let twl = WINDOWS[pick.random_range(0..WINDOWS.len())];
        let tws = WINDOWS[pick.random_range(0..WINDOWS.len())];
        let events = random_events(seed, 5000, 100, 400);
        n_events += events.len();
        check_equivalence(&events, WindowConfig::new(twl, tws, 0).map_err(err)?, 100)
            .map_err(|e| format!("stream {seed}: {e}"))?;
    }
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}, limit 30s"))?;
    Ok(format!("100 streams, {n_events} events, 100 days each, {:.1}s", elapsed.as_secs_f64()))
}

fn profile_oracle() -> Outcome {
    let txns = random_txns(581, 4000, 60, 120);
    let records = build_account_days(&txns);
    let specs = default_specs(&DEFAULT_WINDOWS, true);
    let frame = compute_profiles(&records, &specs).map_err(err)?;
    let mut r = rng::stream(582, &[]);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let row = r.random_range(0..records.len());
        let spec = specs.choose(&mut r).unwrap();
        let rec = &records[row];
        let expected = naive(&txns, &rec.account_id, rec.day, spec);
        let got = frame.column(&spec.name()).unwrap().values[row];
        ensure(close(got, expected), || {
            format!("{spec} for {} day {}: {got} vs {expected}", rec.account_id, rec.day)
        })?;
        if got != expected {
            worst = worst.max((got - expected).abs() / got.abs().max(expected.abs()));
        }
    }
    Ok(format!("100 probes over {} specs, worst relative error {worst:.1e}", specs.len()))
}

fn recall_oracle() -> Outcome {
    let mut tied = 0;
    for seed in 0..1000 {
        let (s, l) = random_instance(583_000 + seed, 200);
        if s.iter().all(|&v| v == s[0]) {
            tied += 1;
        }
        for target in [0.0, 0.01, 0.05, 0.2, 0.5, 1.0] {
            let got = recall_at_fpr(&s, &l, target).map_err(err)?;
            let want = exhaustive_recall(&s, &l, target);
            ensure(got == want, || format!("instance {seed} target {target}: {got} vs {want}"))?;
        }
    }
    ensure(tied > 0, || "no all-tied instance was drawn".into())?;
    let degenerate: [(&[f64], &[bool], f64); 4] = [
        (&[0.1, 0.2], &[false, false], 0.2),
        (&[0.1, 0.2], &[true, true], 0.2),
        (&[0.1], &[true, false], 0.2),
        (&[f64::NAN, 0.2], &[true, false], 0.2),
    ];
    for (s, l, t) in degenerate {
        ensure(recall_at_fpr(s, l, t).is_err(), || format!("accepted degenerate input {s:?} {l:?}"))?;
    }
    Ok(format!("1000 instances x 6 targets exact, {tied} all-tied, 4 degenerate inputs rejected"))
}

fn hops(max_hops: u32, seed: u64) -> WalkConfig {
    WalkConfig {
        max_hops,
        seed,
        ..WalkConfig::default()
    }
}

fn guilty_walker() -> Outcome {
    let (g, records) = star();
    let view = make_label_view(&records, &Default::default(), 5, 0, 0.5).map_err(err)?;
    let golden = run_walks(&g, "T", &view, &hops(1, WalkConfig::default().seed)).map_err(err)?.hit_rate;
    ensure(golden == 0.26, || format!("default-seed hit rate {golden}, recorded 0.26"))?;
    let mut sum = 0.0;
    for seed in 0..20 {
        sum += run_walks(&g, "T", &view, &hops(1, seed)).map_err(err)?.hit_rate;
    }
    let mean = sum / 20.0;
    ensure((mean - 0.25).abs() <= 0.15, || format!("mean hit rate {mean} over 20 seeds"))?;

    let pool = |threads: usize| rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    let (one, four) = (pool(1), pool(4));
    let targets: Vec<String> = (0..12).map(|i| format!("N{i}")).collect();
    let targets: Vec<&str> = targets.iter().map(String::as_str).collect();
    let mut sentinels = 0;
    for seed in 0..100u64 {
        let day = 5 + (seed % 25) as u32;
        let events = random_events(584_000 + seed, 200, 30, 40);
        let g = GraphSnapshot::build_from_scratch(&events, WindowConfig::default(), day).map_err(err)?;
        let illicit = [record("N1", 0, true), record("N2", 0, true)];
        let view = make_label_view(&illicit, &Default::default(), day, 0, 0.5).map_err(err)?;
        let cfg = hops(4, seed);
        let walker = Walker::new(&g);
        let a = one.install(|| walker.run_many(&targets, &view, &cfg)).map_err(err)?;
        let b = four.install(|| walker.run_many(&targets, &view, &cfg)).map_err(err)?;
        ensure(a == b, || format!("graph {seed}: 1-thread and 4-thread walks differ"))?;
        for (t, f) in targets.iter().zip(&a) {
            let again = run_walks(&g, t, &view, &cfg).map_err(err)?;
            ensure(&again == f, || format!("graph {seed} target {t}: rerun differs"))?;
            let sentinel = f.to_vec()[2..].iter().all(|&v| v == 5.0);
            ensure((f.hit_rate == 0.0) == sentinel, || {
                format!("graph {seed} target {t}: hit rate {} with lengths {:?}", f.hit_rate, &f.to_vec()[2..])
            })?;
            sentinels += usize::from(sentinel);
        }
    }
    Ok(format!(
        "golden 0.26, 20-seed mean {mean:.3}, 100 graphs x 12 targets deterministic ({sentinels} sentinel rows)"
    ))
}

fn model_sanity() -> Outcome {
    let data = toy(3000, 1);
    let mut losses = Vec::new();
    model::train_traced(&data, &gbdt(), 0, |l| losses.push(l)).map_err(err)?;
    ensure(losses.len() == 50, || format!("{} rounds traced", losses.len()))?;
    if let Some(w) = losses.windows(2).find(|w| w[1] >= w[0]) {
        return Err(format!("GBDT loss did not decrease: {} -> {}", w[0], w[1]));
    }

    let data = toy(1500, 3);
    let base = model::predict(&model::train(&data, &glm(true), 0).map_err(err)?, &data).map_err(err)?;
    let cols: Vec<(&str, Vec<f64>)> = data
        .columns()
        .iter()
        .map(|c| match c.name.as_str() {
            "prof_x0" => (c.name.as_str(), c.values.iter().map(|v| 250.0 * v - 40.0).collect()),
            _ => (c.name.as_str(), c.values.clone()),
        })
        .collect();
    let scaled = frame(&cols, &data.label_bits());
    let moved = model::predict(&model::train(&scaled, &glm(true), 0).map_err(err)?, &scaled).map_err(err)?;
    let drift = base.iter().zip(&moved).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    ensure(drift < 1e-6, || format!("GLM prediction moved {drift:e} under rescaling"))?;

    let data = toy(2000, 5);
    for params in [gbdt(), rf(), glm(true), glm(false)] {
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| model::train(&data, &params, 9))
                .map_err(err)
        };
        let first = run(1)?;
        ensure(first == run(1)?, || format!("{params}: two 1-thread runs differ"))?;
        let wide = run(4)?;
        ensure(first == wide, || format!("{params}: 1-thread and 4-thread models differ"))?;
        let a = model::predict(&first, &data).map_err(err)?;
        let b = model::predict(&wide, &data).map_err(err)?;
        ensure(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()), || {
            format!("{params}: predictions differ across thread counts")
        })?;
    }
    Ok(format!(
        "GBDT loss {:.4} -> {:.4} over 50 rounds, GLM drift {drift:.1e}, 4 trainers bit-deterministic",
        losses[0], losses[49]
    ))
}

struct DefaultRun {
    cfg: RunConfig,
    dataset: Dataset,
    featurized: Featurized,
    prepare: Duration,
}

fn default_run() -> Result<DefaultRun, String> {
    let started = Instant::now();
    let cfg = RunConfig::default();
    let data = synthesize(&cfg.synth_config()).map_err(err)?;
    let dataset = Dataset::new(data.alerted).map_err(err)?;
    let featurized = featurize(&dataset, &cfg.featurize_config()).map_err(err)?;
    Ok(DefaultRun {
        cfg,
        dataset,
        featurized,
        prepare: started.elapsed(),
    })
}

fn ablation_gain(run: &DefaultRun) -> Outcome {
    let started = Instant::now();
    let cfg = &run.cfg;
    let ablation = experiments::ablation(
        &run.featurized.frame,
        &run.featurized.split,
        &ABLATION_SETS,
        &cfg.experiment_params(),
        rng::sub_seed(cfg.seed, "ablation"),
        cfg.fpr_target,
    )
    .map_err(err)?;
    let total = run.prepare + started.elapsed();
    let recall = |set: &str| ablation.sets.iter().find(|s| s.set == set).map(|s| s.test_recall);
    let summary: Vec<String> = ablation.sets.iter().map(|s| format!("{} {:.4}", s.set, s.test_recall)).collect();
    let (Some(base), Some(full)) = (recall("profiles"), recall("gw_degrees")) else {
        return Err(format!("missing feature sets: {}", summary.join(", ")));
    };
    let gain = full - base;
    ensure(gain >= 0.05, || format!("gain {:.1} p.p. below 5 ({})", 100.0 * gain, summary.join(", ")))?;
    ensure(total < Duration::from_secs(300), || format!("full run took {total:?}, limit 5 min"))?;
    Ok(format!(
        "+{:.1} p.p. ({}), synth+featurize+ablation {:.0}s",
        100.0 * gain,
        summary.join(", "),
        total.as_secs_f64()
    ))
}

fn profile_base(run: &DefaultRun) -> Result<FeatureFrame, String> {
    let frame = &run.featurized.frame;
    frame
        .select_columns(&frame.names_with(&[Provenance::Raw, Provenance::Profile]))
        .map_err(err)
}

fn inputs<'a>(run: &'a DefaultRun, base: &'a FeatureFrame) -> ExperimentInputs<'a> {
    let cfg = &run.cfg;
    ExperimentInputs {
        dataset: &run.dataset,
        base,
        split: &run.featurized.split,
        params: cfg.experiment_params(),
        walk: cfg.walk_config(),
        seed: cfg.seed,
        fpr: cfg.fpr_target,
    }
}

fn delay_trend(run: &DefaultRun) -> Outcome {
    let base = profile_base(run)?;
    let inputs = inputs(run, &base);
    let sw = &run.cfg.sweep;
    let sweep = experiments::delay_sweep(
        &inputs,
        &DelaySweepConfig {
            delays: vec![0, 1, 7, 30],
            n_seeds: 5,
            twl_days: sw.twl_days,
            tws_days: sw.tws_days,
            threshold: sw.threshold,
            threshold_delay: None,
            threshold_grid: run.cfg.gwd.threshold_grid.clone(),
        },
    )
    .map_err(err)?;
    let delays = [1u32, 7, 30];
    let means: Vec<f64> = delays.iter().map(|d| sweep.means[d]).collect();
    let rho = experiments::spearman(&delays.map(f64::from), &means);
    let shown: BTreeMap<u32, String> = sweep.means.iter().map(|(d, m)| (*d, format!("{m:.4}"))).collect();
    ensure(rho <= 0.0, || format!("Spearman {rho} > 0 on means {shown:?}"))?;
    ensure(sweep.zero_delay_matches_gw, || "delay-0 GWd differs from plain GW".into())?;
    Ok(format!("means by delay {shown:?}, Spearman {rho:.2}, delay 0 matches GW"))
}

fn window_trend(run: &DefaultRun) -> Outcome {
    let base = profile_base(run)?;
    let inputs = inputs(run, &base);
    let sw = &run.cfg.sweep;
    let sweep = experiments::window_sweep(&inputs, &sw.twl_grid, &sw.tws_grid, sw.window_label_delay_days)
        .map_err(err)?;
    let twl = sweep.best.twl;
    let row: Vec<String> = sweep
        .cells
        .iter()
        .filter(|c| c.twl == twl)
        .map(|c| format!("{}:{:.4}", c.tws, c.recall))
        .collect();
    let at = |tws| sweep.cell(twl, tws).ok_or_else(|| format!("grid lacks TWL={twl} TWS={tws}"));
    let (long, none) = (at(30)?, at(0)?);
    let corner = sweep.cell(0, 0).ok_or("grid lacks the (0, 0) cell")?;
    ensure(corner == sweep.profiles_only_recall, || {
        format!("(0, 0) cell {corner} differs from profiles-only {}", sweep.profiles_only_recall)
    })?;
    ensure(long > none, || {
        format!(
            "best TWL={twl}: TWS=30 {long:.4} does not exceed TWS=0 {none:.4} (row by TWS {})",
            row.join(" ")
        )
    })?;
    Ok(format!(
        "best TWL={twl}: TWS=30 {long:.4} > TWS=0 {none:.4}; (0, 0) = profiles-only {corner:.4}"
    ))
}

fn csv_bytes(txns: &[aml_triage::ingest::Transaction]) -> Result<Vec<u8>, String> {
    let mut buf = Vec::new();
    write_transactions(&mut buf, txns).map_err(err)?;
    Ok(buf)
}

fn synthetic_contract() -> Outcome {
    let cfg = RunConfig::default().synth_config();
    let first = synthesize(&cfg).map_err(err)?;
    let share = false_positive_share(&first.alerted);
    let target = cfg.target_alert_fp_rate;
    ensure((share - target).abs() <= 0.02, || format!("FP share {share:.4}, target {target}"))?;
    let second = synthesize(&cfg).map_err(err)?;
    ensure(csv_bytes(&first.all)? == csv_bytes(&second.all)?, || "regenerated data differs".into())?;
    Ok(format!(
        "FP share {share:.4} vs target {target}, {} alerted of {} regenerate byte-identically",
        first.alerted.len(),
        first.all.len()
    ))
}

fn cli(config: &str, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_aml-triage"))
        .arg("--config")
        .arg(config)
        .args(args)
        .output()
        .map_err(err)?;
    ensure(out.status.success(), || {
        format!("`{}` exited {:?}: {}", args.join(" "), out.status.code(), String::from_utf8_lossy(&out.stderr))
    })
}

fn snapshot(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(err)? {
        let path = entry.map_err(err)?.path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        files.insert(name, std::fs::read(&path).map_err(err)?);
    }
    Ok(files)
}

fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let out = dir.path().join("out");
    let config = dir.path().join("run.toml");
    let text = format!(
        "out_dir = {out:?}\n\n[synth]\nn_accounts = 2000\nn_days = 90\nn_rings = 6\nn_decoy_groups = 60\nring_span_days = 60\n\n\
         [profiles]\nwindows = [1, 7, 14, 30]\nselection_shuffles = 2\n\n[experiment]\nn_rounds = 20\n\n\
         [search]\nn_trials = 6\ngbdt_rounds = 20\n"
    );
    std::fs::write(&config, text).map_err(err)?;
    let config = config.to_string_lossy().into_owned();
    let mut runs = Vec::new();
    for _ in 0..2 {
        if out.exists() {
            std::fs::remove_dir_all(&out).map_err(err)?;
        }
        for stage in ["synth", "featurize", "train", "evaluate"] {
            cli(&config, &[stage])?;
        }
        runs.push(snapshot(&out)?);
    }
    let names: Vec<&String> = runs[0].keys().collect();
    ensure(runs[0].contains_key("report.json"), || format!("no report.json among {names:?}"))?;
    ensure(runs[0].keys().eq(runs[1].keys()), || "the two runs wrote different files".into())?;
    if let Some(name) = names.iter().find(|n| runs[0][**n] != runs[1][**n]) {
        return Err(format!("{name} differs between runs"));
    }
    Ok(format!("{} artifacts byte-identical across two runs", names.len()))
}

#[test]
fn acceptance_criteria() {
    let mut v = Verdicts::default();
    say("");
    v.check(1, "graph oracle equivalence", graph_oracle);
    v.check(2, "profile oracle equivalence", profile_oracle);
    v.check(3, "recall_at_fpr oracle", recall_oracle);
    v.check(4, "GuiltyWalker correctness", guilty_walker);
    v.check(5, "model sanity", model_sanity);

    let run = panic::catch_unwind(default_run).unwrap_or_else(|p| Err(panic_text(p)));
    let shared = |f: fn(&DefaultRun) -> Outcome| {
        let run = &run;
        move || match run {
            Ok(r) => f(r),
            Err(e) => Err(format!("default run failed: {e}")),
        }
    };
    v.check(6, "graph features beat profiles", shared(ablation_gain));
    v.check(7, "recall falls with label delay", shared(delay_trend));
    v.check(8, "longer suspicious window helps", shared(window_trend));
    v.check(9, "synthetic data contract", synthetic_contract);
    v.check(10, "end-to-end determinism", end_to_end);

    say(&format!("acceptance: {}/{} criteria passed", v.total - v.failed.len(), v.total));
    assert!(v.failed.is_empty(), "failed criteria: {}", v.failed.join("; "));
}
