//! Stationarity monitor for policy parameters across IPF iterations.

use alloc::vec::Vec;

use crate::stats;

#[derive(Debug, Clone, PartialEq)]
pub enum StopDecision {
    Continue,
    /// Stop with the per-parameter means over the tested window.
    Stop(Vec<f64>),
}

/// `history[j]` holds the parameter vector after iteration `j` (`j = 0` is
/// the starting point). At iteration `i = history.len() - 1 >= min_iters`
/// each parameter's last `J = min(window_cap, i)` successive differences are
/// tested for zero mean; stop when none is significant.
pub fn early_stop_check(history: &[Vec<f64>], window_cap: usize, min_iters: usize, alpha: f64, use_bh: bool) -> StopDecision {
    if history.is_empty() {
        return StopDecision::Continue;
    }
    let i = history.len() - 1;
    if i < min_iters.max(2) {
        return StopDecision::Continue;
    }
    let window = window_cap.min(i);
    let p = history[i].len();
    let mut diffs = alloc::vec![0.0; window];
    let pvalues: Vec<f64> = (0..p)
        .map(|k| {
            for (w, j) in (i + 1 - window..=i).enumerate() {
                diffs[w] = history[j][k] - history[j - 1][k];
            }
            stats::one_sample_t_pvalue(&diffs)
        })
        .collect();
    let significant = if use_bh {
        stats::benjamini_hochberg(&pvalues, alpha).into_iter().any(|s| s)
    } else {
        pvalues.iter().any(|&pv| pv <= alpha)
    };
    if significant {
        return StopDecision::Continue;
    }
    let means = (0..p)
        .map(|k| (i + 1 - window..=i).map(|j| history[j][k]).sum::<f64>() / window as f64)
        .collect();
    StopDecision::Stop(means)
}
