use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::Truth;
use crate::dsp::WindowPreprocess;
use crate::interpret::{timecourse, window_starts, InterpretError};
use crate::model::{ModelParams, Network};
use crate::stats::{max_weight_assignment_rect, pearson};
use crate::training::Collection;

/// Matched |r| between true source envelopes and model components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisentanglementScore {
    pub sources: Vec<String>,
    /// Component matched to each source.
    pub matched_component: Vec<usize>,
    pub matched_r: Vec<f64>,
    pub mean_r: f64,
    /// `|r|` for every (source, component) pair.
    pub abs_r: Vec<Vec<f64>>,
}

/// Mean of `env` over each window `[s, s + len)`.
pub fn window_mean(env: &[f64], starts: &[usize], len: usize) -> Vec<f64> {
    starts.iter().map(|&s| env[s..s + len].iter().sum::<f64>() / len as f64).collect()
}

/// Pools every trial's positions, correlates each source with each
/// component and matches them one-to-one by maximal summed `|r|`.
/// `timecourses[i]` is `[C × S_i]`, `truths[i]` is `[K × S_i]`.
pub fn score_timecourses(sources: &[String], timecourses: &[Array2<f64>], truths: &[Array2<f64>]) -> DisentanglementScore {
    let c = timecourses.first().map_or(0, |t| t.nrows());
    let k = sources.len();
    let pool = |arrs: &[Array2<f64>], row: usize| -> Vec<f64> { arrs.iter().flat_map(|a| a.row(row).to_vec()).collect() };
    let comps: Vec<Vec<f64>> = (0..c).map(|i| pool(timecourses, i)).collect();
    let truth: Vec<Vec<f64>> = (0..k).map(|i| pool(truths, i)).collect();
    let abs_r: Vec<Vec<f64>> = truth.iter().map(|t| comps.iter().map(|z| pearson(t, z).abs()).collect()).collect();
    let matched_component = if k <= c {
        max_weight_assignment_rect(&abs_r)
    } else {
        // More sources than components: match components to sources and
        // leave the rest unmatched (r = 0).
        let transposed: Vec<Vec<f64>> = (0..c).map(|j| (0..k).map(|i| abs_r[i][j]).collect()).collect();
        let by_comp = max_weight_assignment_rect(&transposed);
        let mut out = vec![usize::MAX; k];
        for (j, &i) in by_comp.iter().enumerate() {
            out[i] = j;
        }
        out
    };
    let matched_r: Vec<f64> = matched_component.iter().enumerate().map(|(i, &j)| if j == usize::MAX { 0.0 } else { abs_r[i][j] }).collect();
    let mean_r = matched_r.iter().sum::<f64>() / k.max(1) as f64;
    DisentanglementScore { sources: sources.to_vec(), matched_component, matched_r, mean_r, abs_r }
}

/// Timecourses of every trial in `collection` against window-mean truth.
pub fn score_disentanglement(
    net: &Network,
    params: &ModelParams,
    collection: &Collection,
    truth: &Truth,
    stride: usize,
    pre: &WindowPreprocess,
) -> Result<DisentanglementScore, InterpretError> {
    let len = net.config().n_times;
    let mut tcs = Vec::new();
    let mut truths = Vec::new();
    for ds in &collection.datasets {
        for t in &ds.trials {
            let Some(row) = truth.lookup(&t.trial) else { continue };
            let tc = timecourse(net, params, &t.data, t.trial.valid, stride, pre)?;
            let starts = window_starts(t.trial.valid, len, stride)?;
            let env = truth.trial_envelopes(row);
            let k = env.nrows();
            let mut tr = Array2::zeros((k, starts.len()));
            for s in 0..k {
                let wm = window_mean(&env.row(s).to_vec(), &starts, len);
                tr.row_mut(s).assign(&ndarray::Array1::from(wm));
            }
            tcs.push(tc.values);
            truths.push(tr);
        }
    }
    Ok(score_timecourses(&truth.sources, &tcs, &truths))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("s{i}")).collect()
    }

    fn random_truth(n: usize, k: usize, s: usize, seed: u64) -> Vec<Array2<f64>> {
        let mut rng = seeded(seed);
        (0..n).map(|_| Array2::from_shape_fn((k, s), |_| rng.random::<f64>())).collect()
    }

    #[test]
    fn self_match_is_perfect() {
        let truth = random_truth(5, 4, 30, 1);
        let sc = score_timecourses(&names(4), &truth, &truth);
        assert!(sc.matched_r.iter().all(|&r| (r - 1.0).abs() < 1e-12));
        assert_eq!(sc.matched_component, vec![0, 1, 2, 3]);
    }

    #[test]
    fn permutation_and_affine_invariant() {
        let truth = random_truth(5, 4, 30, 2);
        let perm = [2, 0, 3, 1, 4];
        let extra = random_truth(5, 1, 30, 9);
        let tcs: Vec<Array2<f64>> = truth
            .iter()
            .zip(&extra)
            .map(|(t, x)| {
                Array2::from_shape_fn((5, 30), |(c, j)| {
                    let src = perm[c];
                    if src < 4 {
                        -3.0 * t[[src, j]] + 0.5
                    } else {
                        x[[0, j]]
                    }
                })
            })
            .collect();
        let sc = score_timecourses(&names(4), &tcs, &truth);
        assert!((sc.mean_r - 1.0).abs() < 1e-12);
        for (src, &comp) in sc.matched_component.iter().enumerate() {
            assert_eq!(perm[comp], src);
        }
    }

    #[test]
    fn random_timecourses_score_low() {
        let truth = random_truth(40, 4, 81, 3);
        let tcs = random_truth(40, 6, 81, 4);
        let sc = score_timecourses(&names(4), &tcs, &truth);
        assert!(sc.mean_r < 0.2, "{}", sc.mean_r);
    }

    #[test]
    fn window_means() {
        let env = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(window_mean(&env, &[0, 2], 3), vec![1.0, 3.0]);
    }
}
