use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};

use eegd3::downstream::{fewshot_cells, motor_pool, sleep_pool, write_fewshot_csv, Budget, LabeledPool, MetricReport, Metrics, ProbeConfig};
use eegd3::stats::{mean, sample_std};
use eegd3::synth::blink::{blink_probe_eval, blink_probe_train, blink_trials, BlinkReconstructor};
use eegd3::synth::Truth;
use eegd3::training::{Checkpoint, Collection, FoldSplit};

use super::{f6, write_csv};
use crate::config::Scenario;
use crate::plot::line_svg;
use crate::run::{load_checkpoints, load_stage_labels, Run};

/// Two-way split: fold 0 holds the checkpoint's validation subjects.
fn split_of(ck: &Checkpoint, subjects: &[String]) -> Result<FoldSplit> {
    let val: Vec<&str> = ck.metadata.get("validation_subjects").context("checkpoint lacks validation_subjects")?.split(',').collect();
    Ok(FoldSplit { k: 2, assignment: subjects.iter().map(|s| (s.clone(), if val.contains(&s.as_str()) { 0 } else { 1 })).collect() })
}

/// The two components whose means differ most between the classes on
/// training subjects, in units of pooled standard deviation.
fn pick_components(pool: &LabeledPool, split: &FoldSplit) -> [usize; 2] {
    let train = split.training_subjects(0);
    let idx: Vec<usize> = (0..pool.len()).filter(|&i| train.contains(&pool.subjects[i])).collect();
    let c_n = pool.features.first().map_or(0, |f| f.len());
    let mut score: Vec<(f64, usize)> = (0..c_n)
        .map(|c| {
            let side = |l: usize| idx.iter().filter(|&&i| pool.labels[i] == l).map(|&i| pool.features[i][c]).collect::<Vec<f64>>();
            let (a, b) = (side(1), side(0));
            let sd = ((sample_std(&a).powi(2) + sample_std(&b).powi(2)) / 2.0).sqrt().max(1e-12);
            ((mean(&a) - mean(&b)).abs() / sd, c)
        })
        .collect();
    score.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
    let mut pick = [score[0].1, score.get(1).map_or(score[0].1, |s| s.1)];
    pick.sort();
    pick
}

fn metric_row(label: String, m: &Metrics) -> Vec<String> {
    vec![label, f6(m.accuracy), f6(m.uar), f6(m.macro_f1)]
}

/// Six-parameter motor probe per fold on the frozen checkpoint.
pub fn downstream(run: &Run, root: &Path) -> Result<()> {
    if run.cfg.scenario != Scenario::Motor {
        bail!("downstream runs the motor probe; use fewshot for the sleep scenario");
    }
    let (store_dir, store) = run.store()?;
    let cks = load_checkpoints(root, run.fold)?;
    let all = Collection::from_store(&store, &cks[0].1.electrodes, |_| true)?;
    let subjects = store.subject_ids();
    let timing = run.cfg.motor_timing()?;
    let d = &run.cfg.downstream;
    let mut rows = Vec::new();
    let mut folds = Vec::new();
    for (f, ck) in &cks {
        let net = ck.network()?;
        let pool = motor_pool(&net, &ck.params, &all, &timing, d.positive, d.negative, &ck.train_config.preprocess)?;
        let split = split_of(ck, &subjects)?;
        let comps = match &d.components {
            Some(c) if c.len() == 2 => [c[0], c[1]],
            Some(c) => bail!("the motor probe takes exactly two components, got {c:?}"),
            None => pick_components(&pool, &split),
        };
        let pcfg = run.cfg.probe_config(ProbeConfig::motor(comps, run.cfg.seed));
        pcfg.validate(ck.model_config.n_components)?;
        let m = fewshot_cells(&pool, &split, &[0], &[Budget::Full], &pcfg)?[0][0];
        let mut row = vec![f.to_string(), format!("{}+{}", comps[0], comps[1])];
        row.extend(metric_row(String::new(), &m).into_iter().skip(1));
        rows.push(row);
        folds.push(m);
    }
    let rep = MetricReport::from_folds(Budget::Full, folds);
    rows.push([vec!["mean".into(), String::new()], metric_row(String::new(), &rep.mean)[1..].to_vec()].concat());
    rows.push([vec!["std".into(), String::new()], metric_row(String::new(), &rep.std)[1..].to_vec()].concat());
    write_csv(&run.path("downstream.csv"), &["fold", "components", "accuracy", "uar", "macro_f1"], &rows)?;
    std::fs::write(run.path("downstream.json"), serde_json::to_string_pretty(&rep)? + "\n")?;
    run.record(&BTreeMap::from([("store".into(), store_dir.display().to_string()), ("checkpoints".into(), root.display().to_string())]))
}

/// Few-shot curve of the forty-parameter sleep probe.
pub fn fewshot(run: &Run, root: &Path) -> Result<()> {
    if run.cfg.scenario != Scenario::Sleep {
        bail!("fewshot needs sleep stage labels; set scenario to \"sleep\"");
    }
    let (store_dir, store) = run.store()?;
    let cks = load_checkpoints(root, run.fold)?;
    let labels = load_stage_labels(&store_dir)?;
    let subjects = store.subject_ids();
    let budgets = &run.cfg.downstream.budgets;
    let mut cells: Vec<Vec<Metrics>> = vec![Vec::new(); budgets.len()];
    let mut fold_rows = Vec::new();
    for (f, ck) in &cks {
        let net = ck.network()?;
        let pool = sleep_pool(&net, &ck.params, &store, &labels, &ck.electrodes, &ck.train_config.preprocess)?;
        let split = split_of(ck, &subjects)?;
        let pcfg = run.cfg.probe_config(ProbeConfig::sleep(Budget::PerClass(10), run.cfg.seed));
        pcfg.validate(ck.model_config.n_components)?;
        let res = fewshot_cells(&pool, &split, &[0], budgets, &pcfg)?;
        for (b, r) in res.into_iter().enumerate() {
            fold_rows.push(vec![budgets[b].to_string(), f.to_string(), f6(r[0].accuracy), f6(r[0].uar), f6(r[0].macro_f1)]);
            cells[b].push(r[0]);
        }
    }
    let reports: Vec<MetricReport> = budgets.iter().zip(cells).map(|(&b, m)| MetricReport::from_folds(b, m)).collect();
    write_fewshot_csv(&run.path("fewshot.csv"), "eegd3", &reports)?;
    write_csv(&run.path("fewshot_folds.csv"), &["budget", "fold", "accuracy", "uar", "macro_f1"], &fold_rows)?;
    let x: Vec<f64> = (0..budgets.len()).map(|i| i as f64).collect();
    line_svg(
        &run.path("fewshot.svg"),
        &format!("balanced accuracy vs budget ({})", budgets.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(", ")),
        &x,
        &[("uar".into(), reports.iter().map(|r| r.mean.uar).collect()), ("accuracy".into(), reports.iter().map(|r| r.mean.accuracy).collect())],
    )?;
    run.record(&BTreeMap::from([("store".into(), store_dir.display().to_string()), ("checkpoints".into(), root.display().to_string())]))
}

/// Blink reconstruction from the 8–40 Hz frontal channel.
pub fn blinkprobe(run: &Run) -> Result<()> {
    let (store_dir, store) = run.store()?;
    let truth = Truth::load(&store_dir.join("truth")).context("blinkprobe needs a synthetic store with truth")?;
    let split = run.split(&store)?;
    let fold = run.fold.unwrap_or(0);
    let (train_s, val_s) = (split.training_subjects(fold), split.validation_subjects(fold));
    let cfg = run.cfg.blink_config();
    let train = blink_trials(&store, &truth, &cfg, |s| train_s.contains(s))?;
    let val = blink_trials(&store, &truth, &cfg, |s| val_s.contains(s))?;
    if train.is_empty() || val.is_empty() {
        bail!("channel {} missing or no trials on one side of fold {fold}", cfg.channel);
    }
    let fs = store.recordings.first().context("empty store")?.fs;
    let (model, losses) = blink_probe_train(&train, &cfg, fs);
    let trained = blink_probe_eval(&model, &val, cfg.half_window, fs);
    let untrained = blink_probe_eval(&BlinkReconstructor::init(&cfg, model.scale), &val, cfg.half_window, fs);
    let metrics = serde_json::json!({ "fold": fold, "trained": trained, "untrained": untrained, "steps": cfg.steps });
    std::fs::write(run.path("blink_metrics.json"), serde_json::to_string_pretty(&metrics)? + "\n")?;
    let loss_rows: Vec<Vec<String>> = losses.iter().enumerate().map(|(i, l)| vec![i.to_string(), f6(*l)]).collect();
    write_csv(&run.path("blink_loss.csv"), &["step", "loss"], &loss_rows)?;

    // Panel data around the first few held-out blinks.
    let half = fs.round() as isize;
    let mut rows = Vec::new();
    let mut first: Option<(Vec<f64>, [Vec<f64>; 3])> = None;
    for (k, (t, e)) in val.iter().flat_map(|t| t.events.iter().map(move |e| (t, *e))).take(3).enumerate() {
        let rec = model.reconstruct(&t.input);
        let c = (e * fs).round() as isize;
        let lo = (c - half).max(0) as usize;
        let hi = ((c + half) as usize).min(t.input.len());
        let xs: Vec<f64> = (lo..hi).map(|i| (i as f64 - c as f64) / fs).collect();
        for (j, i) in (lo..hi).enumerate() {
            rows.push(vec![k.to_string(), f6(xs[j]), f6(t.input[i]), f6(t.target[i]), f6(rec[i])]);
        }
        if first.is_none() {
            first = Some((xs, [t.input[lo..hi].to_vec(), t.target[lo..hi].to_vec(), rec[lo..hi].to_vec()]));
        }
    }
    write_csv(&run.path("blink_panel.csv"), &["event", "t_rel_s", "input", "target", "reconstruction"], &rows)?;
    if let Some((xs, [a, b, c])) = first {
        line_svg(
            &run.path("blink_panel.svg"),
            &format!("held-out blink, r = {:.3}", trained.r),
            &xs,
            &[("8-40 Hz input".into(), a), ("0.5-45 Hz target".into(), b), ("reconstruction".into(), c)],
        )?;
    }
    eprintln!("blinkprobe: r trained {:.3}, untrained {:.3}, {} events", trained.r, untrained.r, trained.n_events);
    run.record(&BTreeMap::from([("store".into(), store_dir.display().to_string())]))
}
