//! Post-hoc component characterization: timecourses, consistency,
//! electrode significance, surrogate tests and cross-fold matching.

mod layout;

pub use layout::electrode_position;

use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::{prepare_window, DspError, RealFft, WindowPreprocess};
use crate::model::{ModelError, ModelParams, Network};
use crate::stats::{max_weight_assignment, mean, one_sided_ttest_greater, pearson, var};

#[derive(Debug, Error)]
pub enum InterpretError {
    #[error("trial of {valid} valid samples is shorter than the {window}-sample window")]
    TrialTooShort { valid: usize, window: usize },
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 trials, got {0}")]
    TooFewTrials(usize),
    #[error("need at least 2 folds, got {0}")]
    TooFewFolds(usize),
    #[error("need at least {needed} values, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Component activity over window centres of one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTimecourse {
    /// `[C × S]`.
    pub values: Array2<f64>,
    /// Window centres, seconds from trial start.
    pub centers: Vec<f64>,
}

impl LatentTimecourse {
    pub fn component(&self, c: usize) -> Vec<f64> {
        self.values.row(c).to_vec()
    }
}

/// Default stride: 0.1 s at 160 Hz.
pub const DEFAULT_STRIDE: usize = 16;

/// Start offsets of every window position inside `valid`.
pub fn window_starts(valid: (usize, usize), window: usize, stride: usize) -> Result<Vec<usize>, InterpretError> {
    let (v0, v1) = valid;
    if v1 < v0 + window {
        return Err(InterpretError::TrialTooShort { valid: v1.saturating_sub(v0), window });
    }
    Ok((v0..=v1 - window).step_by(stride.max(1)).collect())
}

/// Slides the model over `trial` (`[E × L]`) in eval mode.
pub fn timecourse(
    net: &Network,
    params: &ModelParams,
    trial: &Array2<f64>,
    valid: (usize, usize),
    stride: usize,
    pre: &WindowPreprocess,
) -> Result<LatentTimecourse, InterpretError> {
    let cfg = net.config();
    let len = cfg.n_times;
    let starts = window_starts(valid, len, stride)?;
    let mut flat = Vec::with_capacity(starts.len());
    for &s in &starts {
        let w = prepare_window(trial, s, len, cfg.fs, pre)?;
        flat.push(w.iter().copied().collect::<Vec<f64>>());
    }
    let mut values = Array2::zeros((cfg.n_components, starts.len()));
    for (chunk_i, chunk) in flat.chunks(64).enumerate() {
        let refs: Vec<&[f64]> = chunk.iter().map(|v| v.as_slice()).collect();
        for (j, z) in net.latents(params, &refs)?.into_iter().enumerate() {
            for (c, v) in z.0.into_iter().enumerate() {
                values[[c, chunk_i * 64 + j]] = v;
            }
        }
    }
    let centers = starts.iter().map(|&s| (s as f64 + len as f64 / 2.0) / cfg.fs).collect();
    Ok(LatentTimecourse { values, centers })
}

/// Concordance correlation coefficient with population moments; 0 when both
/// series are constant.
pub fn ccc(x: &[f64], y: &[f64]) -> Result<f64, InterpretError> {
    if x.len() != y.len() {
        return Err(InterpretError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(InterpretError::TooShort { needed: 2, got: x.len() });
    }
    let (mx, my) = (mean(x), mean(y));
    let (vx, vy) = (var(x), var(y));
    let cov = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / x.len() as f64;
    let denom = vx + vy + (mx - my) * (mx - my);
    if denom == 0.0 || (vx == 0.0 && vy == 0.0) {
        return Ok(0.0);
    }
    Ok(2.0 * cov / denom)
}

/// Mean CCC over all unordered trial pairs.
pub fn timecourse_consistency(series: &[Vec<f64>]) -> Result<f64, InterpretError> {
    let n = series.len();
    if n < 2 {
        return Err(InterpretError::TooFewTrials(n));
    }
    let mut sum = 0.0;
    for i in 1..n {
        for k in 0..i {
            sum += ccc(&series[i], &series[k])?;
        }
    }
    Ok(sum / ((n * n - n) / 2) as f64)
}

/// TC computed per recording and then averaged over recordings; recordings
/// with fewer than 2 trials are skipped.
pub fn consistency_by_recording(groups: &[Vec<Vec<f64>>]) -> Result<f64, InterpretError> {
    let tcs: Vec<f64> = groups.iter().filter(|g| g.len() >= 2).map(|g| timecourse_consistency(g)).collect::<Result<_, _>>()?;
    if tcs.is_empty() {
        return Err(InterpretError::TooFewTrials(groups.iter().map(Vec::len).max().unwrap_or(0)));
    }
    Ok(mean(&tcs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRow {
    pub component: usize,
    pub condition: String,
    pub tc_mean: f64,
    pub tc_std: f64,
    pub n_folds: usize,
}

/// Mean and population std of per-fold TCs.
pub fn summarize_folds(component: usize, condition: &str, fold_tcs: &[f64]) -> ConsistencyRow {
    ConsistencyRow { component, condition: condition.into(), tc_mean: mean(fold_tcs), tc_std: var(fold_tcs).sqrt(), n_folds: fold_tcs.len() }
}

pub fn write_consistency_csv(path: &Path, rows: &[ConsistencyRow]) -> Result<(), InterpretError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-electrode one-sided t-tests of fold-wise relevance against the grand
/// mean over all electrodes and folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceReport {
    pub reference: f64,
    pub t: Vec<f64>,
    pub p: Vec<f64>,
    pub significant: Vec<bool>,
    pub threshold: f64,
    pub reference_kind: String,
}

pub const SIGNIFICANCE_THRESHOLD: f64 = 0.01;

/// `folds[f][e]`: relevance of electrode `e` in fold `f`.
pub fn electrode_significance(folds: &[Vec<f64>]) -> Result<SignificanceReport, InterpretError> {
    if folds.len() < 2 {
        return Err(InterpretError::TooFewFolds(folds.len()));
    }
    let e = folds[0].len();
    if let Some(bad) = folds.iter().find(|f| f.len() != e) {
        return Err(InterpretError::LengthMismatch(e, bad.len()));
    }
    let all: Vec<f64> = folds.iter().flatten().copied().collect();
    Ok(significance_against(folds, mean(&all), "grand mean over electrodes and folds"))
}

/// Same test against an explicit reference value.
pub fn significance_against(folds: &[Vec<f64>], reference: f64, kind: &str) -> SignificanceReport {
    let e = folds[0].len();
    let (t, p): (Vec<f64>, Vec<f64>) = (0..e)
        .map(|j| {
            let col: Vec<f64> = folds.iter().map(|f| f[j]).collect();
            one_sided_ttest_greater(&col, reference)
        })
        .unzip();
    let significant = p.iter().map(|&v| v < SIGNIFICANCE_THRESHOLD).collect();
    SignificanceReport { reference, t, p, significant, threshold: SIGNIFICANCE_THRESHOLD, reference_kind: kind.into() }
}

/// Series with the amplitude spectrum of `x` and uniformly random phases.
/// DC stays untouched; an even-length Nyquist bin keeps its magnitude with
/// a random sign.
pub fn phase_surrogate<R: Rng + ?Sized>(x: &[f64], rng: &mut R) -> Vec<f64> {
    let fft = RealFft::new(x.len());
    let mut spec = fft.forward(x);
    let nb = spec.len();
    for (k, bin) in spec.iter_mut().enumerate().skip(1) {
        let amp = bin.norm();
        if x.len().is_multiple_of(2) && k == nb - 1 {
            *bin = num_complex::Complex64::new(if rng.random::<bool>() { amp } else { -amp }, 0.0);
        } else {
            *bin = num_complex::Complex64::from_polar(amp, rng.random_range(0.0..std::f64::consts::TAU));
        }
    }
    fft.inverse(&spec)
}

/// Pearson r of `series` with `indicator` and its random-phase surrogate
/// p-value `(k + 1) / (n + 1)`.
pub fn surrogate_correlation<R: Rng + ?Sized>(series: &[f64], indicator: &[f64], n_surrogates: usize, rng: &mut R) -> Result<(f64, f64), InterpretError> {
    if series.len() != indicator.len() {
        return Err(InterpretError::LengthMismatch(series.len(), indicator.len()));
    }
    if series.len() < 3 {
        return Err(InterpretError::TooShort { needed: 3, got: series.len() });
    }
    let r = pearson(series, indicator);
    let k = (0..n_surrogates).filter(|_| pearson(&phase_surrogate(series, rng), indicator).abs() >= r.abs()).count();
    Ok((r, (k + 1) as f64 / (n_surrogates + 1) as f64))
}

/// For every fold, the permutation aligning its components with fold 0:
/// `perm[f][c]` is the component of fold `f` matched to reference
/// component `c`. Inputs are per-fold `[C × S]` mean condition timecourses.
pub fn match_components(folds: &[Array2<f64>]) -> Result<Vec<Vec<usize>>, InterpretError> {
    if folds.len() < 2 {
        return Err(InterpretError::TooFewFolds(folds.len()));
    }
    let reference = &folds[0];
    folds
        .iter()
        .map(|f| {
            if f.dim() != reference.dim() {
                return Err(InterpretError::LengthMismatch(f.len(), reference.len()));
            }
            let weight: Vec<Vec<f64>> = reference.outer_iter().map(|r| f.outer_iter().map(|c| pearson(&r.to_vec(), &c.to_vec())).collect()).collect();
            Ok(max_weight_assignment(&weight))
        })
        .collect()
}

/// `(electrode, x, y, value)` rows for topographic plots. Electrodes missing
/// from the bundled layout get `NaN` coordinates.
pub fn write_topography_csv(path: &Path, electrodes: &[String], values: &[f64]) -> Result<(), InterpretError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["electrode", "x", "y", "value"])?;
    for (e, v) in electrodes.iter().zip(values) {
        let (x, y) = electrode_position(e).unwrap_or((f64::NAN, f64::NAN));
        w.write_record([e.clone(), x.to_string(), y.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn ccc_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((ccc(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        assert!((ccc(&x, &[2.0, 3.0, 4.0, 5.0]).unwrap() - 2.5 / 3.5).abs() < 1e-12);
        assert!((ccc(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(ccc(&[1.0, 1.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert!(matches!(ccc(&[1.0], &[1.0, 2.0]), Err(InterpretError::LengthMismatch(1, 2))));
    }

    #[test]
    fn ccc_shift_closed_form() {
        let x = [0.3, -1.2, 2.2, 0.7, 1.1];
        let s2 = var(&x);
        for c in [0.5, -2.0, 3.0] {
            let y: Vec<f64> = x.iter().map(|v| v + c).collect();
            let got = ccc(&x, &y).unwrap();
            assert!((got - 2.0 * s2 / (2.0 * s2 + c * c)).abs() < 1e-12);
            assert!(got < 1.0);
        }
    }

    #[test]
    fn tc_pairs() {
        let mut rng = seeded(7);
        let series: Vec<Vec<f64>> = (0..6).map(|_| (0..30).map(|_| rng.random::<f64>()).collect()).collect();
        let mut brute = 0.0;
        let mut n = 0;
        for i in 0..6 {
            for k in 0..6 {
                if k < i {
                    brute += ccc(&series[i], &series[k]).unwrap();
                    n += 1;
                }
            }
        }
        assert!((timecourse_consistency(&series).unwrap() - brute / n as f64).abs() < 1e-12);
        assert_eq!(timecourse_consistency(&series[..2]).unwrap(), ccc(&series[1], &series[0]).unwrap());
        let same = vec![series[0].clone(); 4];
        assert!((timecourse_consistency(&same).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(timecourse_consistency(&series[..1]), Err(InterpretError::TooFewTrials(1))));
    }

    #[test]
    fn tc_of_white_noise_is_small() {
        let mut rng = seeded(11);
        let series: Vec<Vec<f64>> = (0..20).map(|_| (0..100).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
        assert!(timecourse_consistency(&series).unwrap().abs() < 0.1);
    }

    #[test]
    fn window_positions() {
        // 9.5 s at 160 Hz, 1.5 s windows, 0.1 s stride.
        let starts = window_starts((0, 1520), 240, 16).unwrap();
        assert_eq!(starts.len(), 81);
        let centers: Vec<f64> = starts.iter().map(|&s| (s as f64 + 120.0) / 160.0).collect();
        assert!((centers[0] - 0.75).abs() < 1e-12 && (centers[80] - 8.75).abs() < 1e-12);
        // Both ends are valid starts, so a stride of L − W still yields two.
        assert_eq!(window_starts((0, 1520), 240, 1280).unwrap().len(), 2);
        assert_eq!(window_starts((0, 1520), 240, 1281).unwrap().len(), 1);
        assert_eq!(window_starts((0, 240), 240, 16).unwrap(), vec![0]);
        assert!(window_starts((0, 100), 240, 16).is_err());
    }

    #[test]
    fn significance_examples() {
        let folds: Vec<Vec<f64>> = [0.9, 0.8, 0.85, 0.95, 0.9].iter().map(|&v| vec![v]).collect();
        let r = significance_against(&folds, 0.5, "fixed");
        assert!(r.p[0] < 0.01 && r.significant[0]);
        let flat: Vec<Vec<f64>> = vec![vec![0.5]; 5];
        assert_eq!(significance_against(&flat, 0.5, "fixed").p[0], 0.5);
        let low: Vec<Vec<f64>> = [0.3, 0.35, 0.2].iter().map(|&v| vec![v]).collect();
        assert!(significance_against(&low, 0.5, "fixed").p[0] > 0.5);
        // Grand mean: electrode 0 clearly above, electrode 1 clearly below.
        let two = vec![vec![0.9, 0.1], vec![0.92, 0.12], vec![0.88, 0.09]];
        let g = electrode_significance(&two).unwrap();
        assert!((g.reference - 0.5016666666666667).abs() < 1e-12);
        assert_eq!(g.significant, vec![true, false]);
        assert!(electrode_significance(&two[..1]).is_err());
    }

    #[test]
    fn surrogates_keep_amplitudes() {
        let mut rng = seeded(3);
        for n in [64usize, 65] {
            let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin() + 0.1 * i as f64).collect();
            let s = phase_surrogate(&x, &mut rng);
            let fft = RealFft::new(n);
            let (a, b) = (fft.forward(&x), fft.forward(&s));
            for (u, v) in a.iter().zip(&b) {
                assert!((u.norm() - v.norm()).abs() < 1e-8);
            }
            assert!((mean(&x) - mean(&s)).abs() < 1e-12);
        }
    }

    #[test]
    fn self_correlation_p() {
        let mut rng = seeded(5);
        let x: Vec<f64> = (0..200).map(|_| StandardNormal.sample(&mut rng)).collect();
        let (r, p) = surrogate_correlation(&x, &x, 200, &mut rng).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
        assert_eq!(p, 1.0 / 201.0);
    }

    #[test]
    fn independent_noise_p_is_uniformish() {
        let mut rng = seeded(9);
        let ps: Vec<f64> = (0..100)
            .map(|_| {
                let x: Vec<f64> = (0..128).map(|_| StandardNormal.sample(&mut rng)).collect();
                let y: Vec<f64> = (0..128).map(|_| StandardNormal.sample(&mut rng)).collect();
                surrogate_correlation(&x, &y, 100, &mut rng).unwrap().1
            })
            .collect();
        let m = mean(&ps);
        assert!((0.35..=0.65).contains(&m), "mean p {m}");
    }

    #[test]
    fn planted_permutation_recovered() {
        let mut rng = seeded(2);
        let (c, s) = (5, 60);
        let base = Array2::from_shape_fn((c, s), |_| rng.random::<f64>());
        let perm = [3, 0, 4, 1, 2];
        let noisy = Array2::from_shape_fn((c, s), |(i, j)| {
            let src = perm.iter().position(|&p| p == i).unwrap();
            base[[src, j]] + 0.01 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
        });
        let out = match_components(&[base.clone(), noisy, base]).unwrap();
        assert_eq!(out[0], vec![0, 1, 2, 3, 4]);
        assert_eq!(out[1], perm.to_vec());
        assert_eq!(out[2], vec![0, 1, 2, 3, 4]);
    }
}
