use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use ndarray::Array2;

use eegd3::downstream::{sleep_pool, window_latents};
use eegd3::filterbank::magnitude_response;
use eegd3::interpret::{
    consistency_by_recording, electrode_significance, match_components, summarize_folds, surrogate_correlation, timecourse, write_consistency_csv,
    write_topography_csv,
};
use eegd3::io::SleepStage;
use eegd3::model::{spatial_relevance, ModelParams, Network};
use eegd3::rng::derived;
use eegd3::training::{make_epoch_stream, Checkpoint, Collection};

use super::{f6, write_csv};
use crate::config::Scenario;
use crate::plot::line_svg;
use crate::run::{load_checkpoints, load_stage_labels, Run};

const MATCH_WINDOWS: usize = 512;

fn validation(all: &Collection, ck: &Checkpoint) -> Result<Collection> {
    let subjects: Vec<&str> = ck.metadata.get("validation_subjects").context("checkpoint lacks validation_subjects")?.split(',').collect();
    Ok(all.filter_subjects(|s| subjects.contains(&s)))
}

/// Latents of a fixed window sample of the whole collection, `[C × N]`,
/// used to align components across folds.
fn reference_latents(net: &Network, params: &ModelParams, all: &Collection, ck: &Checkpoint, seed: u64) -> Result<Array2<f64>> {
    let cfg = net.config();
    let tc = &ck.train_config;
    let draws = make_epoch_stream(all, MATCH_WINDOWS, cfg.n_times, tc.n_bins, tc.grid_aligned, &mut derived(seed, "match", 0))?;
    let windows = draws.iter().map(|d| all.window(d, cfg.n_times, &tc.preprocess)).collect::<Result<Vec<_>, _>>()?;
    let z = window_latents(net, params, &windows)?;
    Ok(Array2::from_shape_fn((cfg.n_components, z.len()), |(c, i)| z[i][c]))
}

fn component_perms(refs: &[Array2<f64>]) -> Result<Vec<Vec<usize>>> {
    if refs.len() < 2 {
        return Ok(refs.iter().map(|r| (0..r.nrows()).collect()).collect());
    }
    Ok(match_components(refs)?)
}

fn stride(run: &Run, ck: &Checkpoint) -> usize {
    match run.cfg.scenario {
        Scenario::Motor => run.cfg.interpret.stride,
        Scenario::Sleep => ck.model_config.n_times,
    }
}

/// Filter responses, topographies, mean timecourses per fold; electrode
/// significance across folds; latent-stage correlation for sleep.
pub fn interpret(run: &Run, root: &Path) -> Result<()> {
    let (store_dir, store) = run.store()?;
    let cks = load_checkpoints(root, run.fold)?;
    let electrodes = cks[0].1.electrodes.clone();
    let all = Collection::from_store(&store, &electrodes, |_| true)?;
    let labels = match run.cfg.scenario {
        Scenario::Sleep => Some(load_stage_labels(&store_dir)?),
        Scenario::Motor => None,
    };
    let mut refs = Vec::new();
    let mut relevances = Vec::new();
    let mut stage_rows = Vec::new();
    for (f, ck) in &cks {
        let net = ck.network()?;
        let mcfg = &ck.model_config;
        let fdir = run.path(&format!("fold{f}"));
        std::fs::create_dir_all(&fdir)?;

        let filters = ck.params.filters_hz(mcfg);
        let freqs: Vec<f64> = (0..=200).map(|k| k as f64 * mcfg.fs / 400.0).collect();
        let mag = magnitude_response(&filters, &freqs);
        let mut header = vec!["freq_hz".to_string()];
        header.extend((0..mcfg.n_components).map(|c| format!("c{c}")));
        let rows: Vec<Vec<String>> =
            freqs.iter().enumerate().map(|(k, fr)| std::iter::once(f6(*fr)).chain(mag.column(k).iter().map(|v| f6(*v))).collect()).collect();
        write_csv(&fdir.join("filters.csv"), &header.iter().map(String::as_str).collect::<Vec<_>>(), &rows)?;
        let series: Vec<(String, Vec<f64>)> = (0..mcfg.n_components).map(|c| (format!("c{c}"), mag.row(c).to_vec())).collect();
        line_svg(&fdir.join("filters.svg"), &format!("fold {f} filter responses"), &freqs, &series)?;
        let prow: Vec<Vec<String>> = filters.iter().enumerate().map(|(c, g)| vec![c.to_string(), f6(g.mu), f6(g.h), f6(g.beta)]).collect();
        write_csv(&fdir.join("filter_params.csv"), &["component", "mu_hz", "h_hz", "beta"], &prow)?;

        let rel = spatial_relevance(mcfg, &ck.params);
        for c in 0..mcfg.n_components {
            write_topography_csv(&fdir.join(format!("topography_c{c}.csv")), &electrodes, &rel.row(c).to_vec())?;
        }
        relevances.push(rel);

        let val = validation(&all, ck)?;
        let st = stride(run, ck);
        for ds in &val.datasets {
            let mut sum: Option<Array2<f64>> = None;
            let mut centers = Vec::new();
            for t in &ds.trials {
                let tc = timecourse(&net, &ck.params, &t.data, t.trial.valid, st, &ck.train_config.preprocess)?;
                match sum.as_mut() {
                    Some(s) if s.dim() == tc.values.dim() => *s += &tc.values,
                    Some(_) => continue,
                    None => {
                        centers = tc.centers.clone();
                        sum = Some(tc.values);
                    }
                }
            }
            let Some(s) = sum else { continue };
            let n = ds.trials.len() as f64;
            let mean = s / n;
            let rows: Vec<Vec<String>> =
                centers.iter().enumerate().map(|(i, t)| std::iter::once(f6(*t)).chain(mean.column(i).iter().map(|v| f6(*v))).collect()).collect();
            let mut header = vec!["center_s".to_string()];
            header.extend((0..mcfg.n_components).map(|c| format!("c{c}")));
            write_csv(&fdir.join(format!("timecourse_{}.csv", ds.id)), &header.iter().map(String::as_str).collect::<Vec<_>>(), &rows)?;
            let series: Vec<(String, Vec<f64>)> = (0..mcfg.n_components).map(|c| (format!("c{c}"), mean.row(c).to_vec())).collect();
            line_svg(&fdir.join(format!("timecourse_{}.svg", ds.id)), &format!("fold {f} {}", ds.id), &centers, &series)?;
        }

        if let Some(labels) = &labels {
            let val_subjects = ck.metadata.get("validation_subjects").cloned().unwrap_or_default();
            let pool = sleep_pool(&net, &ck.params, &store, labels, &electrodes, &ck.train_config.preprocess)?;
            let mut subjects: Vec<&String> = pool.subjects.iter().filter(|s| val_subjects.split(',').any(|v| v == s.as_str())).collect();
            subjects.dedup();
            for (si, subj) in subjects.into_iter().enumerate() {
                let idx: Vec<usize> = (0..pool.len()).filter(|&i| &pool.subjects[i] == subj).collect();
                for c in 0..mcfg.n_components {
                    let series: Vec<f64> = idx.iter().map(|&i| pool.features[i][c]).collect();
                    for stage in SleepStage::ALL {
                        let ind: Vec<f64> = idx.iter().map(|&i| if pool.labels[i] == stage.index() { 1.0 } else { 0.0 }).collect();
                        if ind.iter().all(|&v| v == 0.0) {
                            continue;
                        }
                        let mut rng = derived(run.cfg.seed, "surrogate", ((*f * 1000 + si) * 100 + c * 10 + stage.index()) as u64);
                        let (r, p) = surrogate_correlation(&series, &ind, run.cfg.interpret.surrogates, &mut rng)?;
                        stage_rows.push(vec![f.to_string(), subj.clone(), c.to_string(), stage.to_string(), f6(r), f6(p)]);
                    }
                }
            }
        }
        refs.push(reference_latents(&net, &ck.params, &all, ck, run.cfg.seed)?);
    }

    let perms = component_perms(&refs)?;
    let mut match_rows = Vec::new();
    for (i, (f, _)) in cks.iter().enumerate() {
        for (c, &fc) in perms[i].iter().enumerate() {
            match_rows.push(vec![c.to_string(), f.to_string(), fc.to_string()]);
        }
    }
    write_csv(&run.path("component_matching.csv"), &["reference_component", "fold", "fold_component"], &match_rows)?;
    if cks.len() >= 2 {
        let mut rows = Vec::new();
        for c in 0..perms[0].len() {
            let folds: Vec<Vec<f64>> = relevances.iter().zip(&perms).map(|(r, p)| r.row(p[c]).to_vec()).collect();
            let rep = electrode_significance(&folds)?;
            for (e, name) in electrodes.iter().enumerate() {
                rows.push(vec![c.to_string(), name.clone(), f6(rep.reference), f6(rep.t[e]), f6(rep.p[e]), rep.significant[e].to_string()]);
            }
        }
        write_csv(&run.path("electrode_significance.csv"), &["component", "electrode", "reference", "t", "p", "significant"], &rows)?;
    }
    if labels.is_some() {
        write_csv(&run.path("stage_correlation.csv"), &["fold", "subject", "component", "stage", "r", "p"], &stage_rows)?;
    }
    run.record(&BTreeMap::from([("store".into(), store_dir.display().to_string()), ("checkpoints".into(), root.display().to_string())]))
}

/// Table of timecourse consistency per aligned component and condition.
pub fn consistency(run: &Run, root: &Path) -> Result<()> {
    if run.cfg.scenario == Scenario::Sleep {
        bail!("consistency compares repeated trials; sleep nights are single continuous trials");
    }
    let (store_dir, store) = run.store()?;
    let cks = load_checkpoints(root, run.fold)?;
    let all = Collection::from_store(&store, &cks[0].1.electrodes, |_| true)?;
    // tcs[fold][condition][component]
    let mut tcs: Vec<BTreeMap<String, Vec<f64>>> = Vec::new();
    let mut refs = Vec::new();
    for (f, ck) in &cks {
        let net = ck.network()?;
        let val = validation(&all, ck)?;
        let st = stride(run, ck);
        let mut groups: BTreeMap<String, BTreeMap<String, Vec<Array2<f64>>>> = BTreeMap::new();
        for ds in &val.datasets {
            for t in &ds.trials {
                let tc = timecourse(&net, &ck.params, &t.data, t.trial.valid, st, &ck.train_config.preprocess)?;
                let cond = t.trial.condition.clone().unwrap_or_else(|| "all".into());
                groups.entry(cond).or_default().entry(t.trial.recording.clone()).or_default().push(tc.values);
            }
        }
        let mut per_cond = BTreeMap::new();
        for (cond, recs) in &groups {
            let vals = (0..ck.model_config.n_components)
                .map(|c| {
                    let g: Vec<Vec<Vec<f64>>> = recs.values().map(|trials| trials.iter().map(|v| v.row(c).to_vec()).collect()).collect();
                    consistency_by_recording(&g)
                })
                .collect::<Result<Vec<f64>, _>>()
                .with_context(|| format!("fold {f}, condition {cond}: consistency needs at least two trials per recording"))?;
            per_cond.insert(cond.clone(), vals);
        }
        tcs.push(per_cond);
        refs.push(reference_latents(&net, &ck.params, &all, ck, run.cfg.seed)?);
    }
    let perms = component_perms(&refs)?;
    let conditions: std::collections::BTreeSet<&String> = tcs.iter().flat_map(|m| m.keys()).collect();
    let mut rows = Vec::new();
    for cond in conditions {
        for c in 0..perms[0].len() {
            let vals: Vec<f64> = tcs.iter().zip(&perms).filter_map(|(m, p)| m.get(cond).map(|v| v[p[c]])).collect();
            rows.push(summarize_folds(c, cond, &vals));
        }
    }
    write_consistency_csv(&run.path("consistency.csv"), &rows)?;
    run.record(&BTreeMap::from([("store".into(), store_dir.display().to_string()), ("checkpoints".into(), root.display().to_string())]))
}
