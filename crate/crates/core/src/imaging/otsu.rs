//! Otsu thresholding over a fixed-range `[0, 1]` histogram.
//!
//! Bin `k` of `B` covers `(k/B, (k+1)/B]`, with bin 0 also holding exact
//! zeros, so the class below a threshold `t = (k+1)/B` is exactly the set of
//! values `<= t` and matches the strict `>` used by
//! [`threshold_map`](super::threshold_map).

use num_bigint::BigUint;

use super::DifferenceMap;

pub const DEFAULT_BINS: usize = 256;

const DEGENERATE_VARIANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OtsuOutcome {
    Threshold(f32),
    /// The binned map has (numerically) no spread: nothing to segment.
    Degenerate,
}

impl OtsuOutcome {
    pub fn threshold(self) -> Option<f32> {
        match self {
            OtsuOutcome::Threshold(t) => Some(t),
            OtsuOutcome::Degenerate => None,
        }
    }

    pub fn is_degenerate(self) -> bool {
        matches!(self, OtsuOutcome::Degenerate)
    }
}

pub fn bin_index(v: f32, bins: usize) -> usize {
    if v <= 0.0 {
        return 0;
    }
    let k = (v as f64 * bins as f64).ceil() as usize;
    k.saturating_sub(1).min(bins - 1)
}

pub fn histogram(values: &[f32], bins: usize) -> Vec<u64> {
    let mut h = vec![0u64; bins];
    for &v in values {
        h[bin_index(v, bins)] += 1;
    }
    h
}

/// Index `k` of the last bin of the lower class that maximizes the
/// between-class variance, lowest `k` on ties, or `None` when the histogram
/// variance is below the degeneracy floor.
///
/// With `n0`, `s0` the count and bin-index sum of the lower class, the
/// between-class variance is proportional to `(N·s0 − n0·S)² / (n0·n1)`; the
/// comparison is done in exact integer arithmetic.
pub fn otsu_from_histogram(hist: &[u64]) -> Option<usize> {
    let bins = hist.len();
    let total: u64 = hist.iter().sum();
    if bins < 2 || total == 0 {
        return None;
    }
    let centre = |k: usize| (k as f64 + 0.5) / bins as f64;
    let mean = hist.iter().enumerate().map(|(k, &c)| c as f64 * centre(k)).sum::<f64>() / total as f64;
    let var = hist
        .iter()
        .enumerate()
        .map(|(k, &c)| c as f64 * (centre(k) - mean).powi(2))
        .sum::<f64>()
        / total as f64;
    if var < DEGENERATE_VARIANCE {
        return None;
    }

    let n = total as i128;
    let s_total: i128 = hist.iter().enumerate().map(|(k, &c)| k as i128 * c as i128).sum();
    let (mut n0, mut s0) = (0i128, 0i128);
    let mut best: Option<(usize, BigUint, BigUint)> = None;
    for (k, &c) in hist.iter().enumerate().take(bins - 1) {
        n0 += c as i128;
        s0 += k as i128 * c as i128;
        let n1 = n - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let d = BigUint::from((n * s0 - n0 * s_total).unsigned_abs());
        let num = &d * &d;
        let den = BigUint::from((n0 * n1) as u128);
        let better = match &best {
            None => true,
            Some((_, bn, bd)) => &num * bd > bn * &den,
        };
        if better {
            best = Some((k, num, den));
        }
    }
    best.map(|(k, _, _)| k)
}

/// Otsu's threshold for a difference map on a `bins`-bin histogram.
pub fn otsu_threshold(map: &DifferenceMap, bins: usize) -> OtsuOutcome {
    assert!(bins >= 2, "Otsu needs at least two bins");
    match otsu_from_histogram(&histogram(map.values(), bins)) {
        Some(k) => OtsuOutcome::Threshold((k + 1) as f32 / bins as f32),
        None => OtsuOutcome::Degenerate,
    }
}
