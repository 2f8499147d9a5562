use std::collections::BTreeMap;

use anyhow::{Context, Result};

use eegd3::synth::{generate, sleep::generate_sleep};
use eegd3::training::{pretrain_with, Collection};

use super::{f6, write_csv};
use crate::config::Scenario;
use crate::plot::line_svg;
use crate::run::{fold_dir, Run};

/// Generates the scenario's synthetic store under `out/store`.
pub fn synth(run: &Run) -> Result<()> {
    let dir = run.path("store");
    let summary = match run.cfg.scenario {
        Scenario::Motor => {
            let cfg = run.cfg.motor_synth();
            let out = generate(&cfg).map_err(anyhow::Error::msg)?;
            out.write(&dir)?;
            format!("{} recordings, {} trials", out.recording_names.len(), out.truth.trials.len())
        }
        Scenario::Sleep => {
            let cfg = run.cfg.sleep_synth();
            let out = generate_sleep(&cfg).map_err(anyhow::Error::msg)?;
            out.write(&dir)?;
            format!("{} nights of {} epochs", out.recording_names.len(), cfg.epochs_per_recording)
        }
    };
    eprintln!("synth: {summary} -> {}", dir.display());
    run.record(&BTreeMap::new())
}

/// One checkpoint per fold, trained on that fold's training subjects.
pub fn pretrain(run: &Run) -> Result<()> {
    let (store_dir, store) = run.store()?;
    let electrodes = run.electrodes(&store);
    let all = Collection::from_store(&store, &electrodes, |_| true)?;
    let split = run.split(&store)?;
    let tcfg = run.cfg.train_config();
    let mcfg = run.cfg.model_config(electrodes.len(), all.fs);
    let mut rows = Vec::new();
    for f in run.folds(split.k)? {
        let keep = split.training_subjects(f);
        let train = all.filter_subjects(|s| keep.contains(s));
        let mut ck = pretrain_with(&train, &mcfg, &tcfg, |e| eprintln!("fold {f} epoch {} loss {:.5} bin acc {:.4}", e.epoch, e.mean_loss, e.bin_accuracy))
            .with_context(|| format!("pretraining fold {f}"))?;
        ck.metadata.insert("fold".into(), f.to_string());
        ck.metadata.insert("folds".into(), split.k.to_string());
        ck.metadata.insert("validation_subjects".into(), split.validation_subjects(f).into_iter().collect::<Vec<_>>().join(","));
        let dir = fold_dir(&run.out, f);
        ck.save(&dir)?;
        let x: Vec<f64> = ck.loss_curve.iter().map(|e| e.epoch as f64).collect();
        line_svg(
            &dir.join("loss_curve.svg"),
            &format!("fold {f}"),
            &x,
            &[
                ("loss".into(), ck.loss_curve.iter().map(|e| e.mean_loss).collect()),
                ("bin accuracy".into(), ck.loss_curve.iter().map(|e| e.bin_accuracy).collect()),
            ],
        )?;
        let last = ck.loss_curve.last().context("empty loss curve")?;
        rows.push(vec![f.to_string(), last.epoch.to_string(), f6(last.mean_loss), f6(last.bin_accuracy)]);
    }
    write_csv(&run.path("pretrain_summary.csv"), &["fold", "epochs", "final_loss", "final_bin_accuracy"], &rows)?;
    run.record(&BTreeMap::from([("store".into(), store_dir.display().to_string())]))
}
