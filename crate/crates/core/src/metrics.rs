//! Opinion-trend and rating-concentration statistics.
//!
//! Trend metrics work on the majority-conforming opinion (MCO) series: the
//! larger of the cumulative positive and negative shares at each step.
//! Concentration metrics work on the last `L` raw ratings of a sequence.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::model::{round_half_up, RatingSequence};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("sequence has {len} events, {needed} required")]
    SequenceTooShort { needed: usize, len: usize },
    #[error("series has {n} points, at least 2 required")]
    SeriesTooShort { n: usize },
    #[error("all values are tied; rank correlation is undefined")]
    ConstantSeries,
    #[error("zero variance; kurtosis is undefined")]
    ZeroVariance,
    #[error("input is empty")]
    Empty,
    #[error("input lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Polarity {
    Positive,
    Negative,
}

/// Positive iff the half-up rounded rating reaches `threshold`.
pub fn classify(rating: f64, threshold: f64) -> Polarity {
    if round_half_up(rating) >= threshold {
        Polarity::Positive
    } else {
        Polarity::Negative
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McoStep {
    /// 1-based step over the whole sequence.
    pub k: usize,
    pub pos: f64,
    pub neg: f64,
    pub mco: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McoSeries {
    pub movie_id: String,
    pub start_round: usize,
    pub steps: Vec<McoStep>,
}

impl McoSeries {
    pub fn values(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.mco).collect()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Cumulative shares from `start_round` (1-based) to the end of the
/// sequence. Counts always include every event before `start_round`.
pub fn mco_series(
    seq: &RatingSequence,
    threshold: f64,
    start_round: usize,
) -> Result<McoSeries, MetricError> {
    let start_round = start_round.max(1);
    if seq.len() < start_round {
        return Err(MetricError::SequenceTooShort {
            needed: start_round,
            len: seq.len(),
        });
    }
    let mut positives = 0usize;
    let mut steps = Vec::with_capacity(seq.len() + 1 - start_round);
    for (i, event) in seq.events.iter().enumerate() {
        if classify(event.rating.get(), threshold) == Polarity::Positive {
            positives += 1;
        }
        let k = i + 1;
        if k < start_round {
            continue;
        }
        let pos = positives as f64 / k as f64;
        let neg = (k - positives) as f64 / k as f64;
        steps.push(McoStep {
            k,
            pos,
            neg,
            mco: pos.max(neg),
        });
    }
    Ok(McoSeries {
        movie_id: seq.movie_id.clone(),
        start_round,
        steps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannKendall {
    pub s: i64,
    pub variance: f64,
    /// Two-sided normal-approximation p-value; 1.0 when the variance is 0.
    pub p_value: f64,
}

/// Sizes of groups of exactly equal values.
fn tie_groups(values: &[f64]) -> Vec<usize> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut groups = Vec::new();
    let mut run = 1;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            groups.push(run);
            run = 1;
        }
    }
    if !sorted.is_empty() {
        groups.push(run);
    }
    groups
}

/// Counts pairs `i < j` with `values[i] > values[j]` by merge sort.
fn count_inversions(values: &mut [f64], scratch: &mut Vec<f64>) -> u64 {
    let n = values.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut inv = count_inversions(&mut values[..mid], scratch)
        + count_inversions(&mut values[mid..], scratch);
    scratch.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        // Equal values are not inversions: take from the left first.
        if values[i] <= values[j] {
            scratch.push(values[i]);
            i += 1;
        } else {
            scratch.push(values[j]);
            inv += (mid - i) as u64;
            j += 1;
        }
    }
    scratch.extend_from_slice(&values[i..mid]);
    scratch.extend_from_slice(&values[j..n]);
    values.copy_from_slice(scratch);
    inv
}

/// Mann–Kendall `S = sum_{k<t} sgn(x_t - x_k)` in `O(n log n)`, with the
/// tie-corrected variance and a two-sided p-value (continuity corrected).
pub fn mann_kendall(values: &[f64]) -> Result<MannKendall, MetricError> {
    let n = values.len();
    if n < 2 {
        return Err(MetricError::SeriesTooShort { n });
    }
    let pairs = (n * (n - 1) / 2) as i64;
    let groups = tie_groups(values);
    let tied: i64 = groups.iter().map(|&t| (t * (t - 1) / 2) as i64).sum();
    let mut work = values.to_vec();
    let discordant = count_inversions(&mut work, &mut Vec::with_capacity(n)) as i64;
    let concordant = pairs - tied - discordant;
    let s = concordant - discordant;

    let nf = n as f64;
    let tie_term: f64 = groups
        .iter()
        .map(|&t| {
            let t = t as f64;
            t * (t - 1.0) * (2.0 * t + 5.0)
        })
        .sum();
    let variance = (nf * (nf - 1.0) * (2.0 * nf + 5.0) - tie_term) / 18.0;
    let p_value = if variance <= 0.0 {
        1.0
    } else {
        let z = match s.cmp(&0) {
            Ordering::Greater => (s - 1) as f64 / variance.sqrt(),
            Ordering::Less => (s + 1) as f64 / variance.sqrt(),
            Ordering::Equal => 0.0,
        };
        let normal = Normal::standard();
        (2.0 * (1.0 - normal.cdf(z.abs()))).clamp(0.0, 1.0)
    };
    Ok(MannKendall {
        s,
        variance,
        p_value,
    })
}

pub fn mann_kendall_s(series: &McoSeries) -> Result<MannKendall, MetricError> {
    mann_kendall(&series.values())
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricError::ConstantSeries);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

fn has_ties(ranks: &[f64]) -> bool {
    ranks.iter().any(|r| r.fract() != 0.0) || {
        let mut seen = vec![false; ranks.len()];
        ranks
            .iter()
            .any(|&r| std::mem::replace(&mut seen[r as usize - 1], true))
    }
}

/// Spearman correlation: Pearson correlation of average ranks. Without
/// ties this is evaluated as `1 - 6 sum(d^2) / (n (n^2 - 1))` in integer
/// arithmetic, so strictly monotone inputs give exactly `1` or `-1`.
pub fn spearman_corr(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    if x.len() != y.len() {
        return Err(MetricError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(MetricError::SeriesTooShort { n: x.len() });
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    if has_ties(&rx) || has_ties(&ry) {
        return pearson(&rx, &ry);
    }
    let n = x.len() as u128;
    let d2: u128 = rx
        .iter()
        .zip(&ry)
        .map(|(a, b)| {
            let d = (*a as i128 - *b as i128).unsigned_abs();
            d * d
        })
        .sum();
    Ok(1.0 - (6 * d2) as f64 / (n * (n * n - 1)) as f64)
}

/// Rank correlation between the MCO values and time.
pub fn spearman_rho(series: &McoSeries) -> Result<f64, MetricError> {
    let time: Vec<f64> = series.steps.iter().map(|s| s.k as f64).collect();
    spearman_corr(&time, &series.values())
}

/// The last `l` ratings in step order.
pub fn late_window(seq: &RatingSequence, l: usize) -> Result<Vec<f64>, MetricError> {
    if l == 0 || seq.len() < l {
        return Err(MetricError::SequenceTooShort {
            needed: l.max(1),
            len: seq.len(),
        });
    }
    Ok(seq.events[seq.len() - l..]
        .iter()
        .map(|e| e.rating.get())
        .collect())
}

/// Excess kurtosis from population moments: `mean(((x - mu)/sigma)^4) - 3`.
pub fn excess_kurtosis(values: &[f64]) -> Result<f64, MetricError> {
    if values.len() < 2 {
        return Err(MetricError::SeriesTooShort { n: values.len() });
    }
    let first = values[0];
    if values.iter().all(|&v| v == first) {
        return Err(MetricError::ZeroVariance);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (m2, m4) = values.iter().fold((0.0, 0.0), |(m2, m4), &v| {
        let d2 = (v - mean) * (v - mean);
        (m2 + d2, m4 + d2 * d2)
    });
    let (m2, m4) = (m2 / n, m4 / n);
    if m2 == 0.0 {
        return Err(MetricError::ZeroVariance);
    }
    Ok(m4 / (m2 * m2) - 3.0)
}

/// Quantile of already-sorted data by linear interpolation at `q * (n - 1)`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn iqr(values: &[f64]) -> Result<f64, MetricError> {
    if values.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let spread = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    Ok(spread.max(0.0))
}

/// Deviation of a rating from the climate the agent observed.
pub fn rating_distance(rating: f64, history_avg: f64) -> f64 {
    (rating - history_avg).abs()
}

/// Per-movie summary of trend and concentration statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub movie_id: String,
    pub mann_kendall_s: i64,
    pub mk_p_value: Option<f64>,
    /// `None` when every MCO value is tied.
    pub spearman_rho: Option<f64>,
    /// `None` when the late window has zero variance (fully concentrated).
    pub kurtosis_late: Option<f64>,
    pub iqr_late: f64,
    pub n_trend: usize,
    pub l_window: usize,
}

impl MetricReport {
    pub fn max_abs_s(&self) -> i64 {
        let n = self.n_trend as i64;
        n * (n - 1) / 2
    }
}
