//! Shapley attributions of decision scores: an exact enumeration for small
//! feature counts and the kernel regression estimator, plus the mean |value|
//! ranking over a set of rows.
//!
//! Absent features are filled from each background row in turn and the
//! resulting scores averaged (interventional value function).

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifiers::TrainedModel;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExplainError {
    #[error("exact Shapley values need at most {max} features, got {got}")]
    TooManyFeatures { max: usize, got: usize },
    #[error("need at least {needed} coalition samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("background set is empty")]
    EmptyBackground,
    #[error("nothing to explain")]
    EmptyDataset,
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Anything producing one real score per row.
pub trait Scorer: Sync {
    fn scores(&self, rows: &[Vec<f64>]) -> Vec<f64>;
}

impl Scorer for TrainedModel {
    fn scores(&self, rows: &[Vec<f64>]) -> Vec<f64> {
        rows.iter().map(|r| self.score_row(r)).collect()
    }
}

/// Adapts a per-row closure.
pub struct FnScorer<F>(pub F);

impl<F: Fn(&[f64]) -> f64 + Sync> Scorer for FnScorer<F> {
    fn scores(&self, rows: &[Vec<f64>]) -> Vec<f64> {
        rows.iter().map(|r| (self.0)(r)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub values: Vec<f64>,
    /// Mean score over the background.
    pub base_value: f64,
    /// Score of the explained instance.
    pub score: f64,
}

pub const MAX_EXACT_FEATURES: usize = 12;
pub const BACKGROUND_CAP: usize = 100;

fn check(instance: &[f64], background: &[Vec<f64>]) -> Result<(), ExplainError> {
    if background.is_empty() {
        return Err(ExplainError::EmptyBackground);
    }
    if let Some(b) = background.iter().find(|b| b.len() != instance.len()) {
        return Err(ExplainError::DimensionMismatch {
            expected: instance.len(),
            got: b.len(),
        });
    }
    Ok(())
}

/// Mean score with features in `on` taken from `instance`, the rest from
/// each background row.
fn coalition_value<S: Scorer + ?Sized>(scorer: &S, instance: &[f64], background: &[Vec<f64>], on: &[bool]) -> f64 {
    let rows: Vec<Vec<f64>> = background
        .iter()
        .map(|b| b.iter().zip(instance).zip(on).map(|((bv, iv), &o)| if o { *iv } else { *bv }).collect())
        .collect();
    scorer.scores(&rows).iter().sum::<f64>() / rows.len() as f64
}

fn ln_factorial(n: usize) -> f64 {
    (1..=n).map(|k| (k as f64).ln()).sum()
}

/// Classic Shapley values by enumerating all `2^d` coalitions.
pub fn exact_shapley<S: Scorer + ?Sized>(
    scorer: &S,
    background: &[Vec<f64>],
    instance: &[f64],
) -> Result<Attribution, ExplainError> {
    check(instance, background)?;
    let d = instance.len();
    if d > MAX_EXACT_FEATURES {
        return Err(ExplainError::TooManyFeatures { max: MAX_EXACT_FEATURES, got: d });
    }
    let values: Vec<f64> = (0..1usize << d)
        .into_par_iter()
        .map(|mask| {
            let on: Vec<bool> = (0..d).map(|j| mask >> j & 1 == 1).collect();
            coalition_value(scorer, instance, background, &on)
        })
        .collect();
    let ln_d = ln_factorial(d);
    let phi = (0..d)
        .map(|i| {
            let mut acc = 0.0;
            for mask in 0..1usize << d {
                if mask >> i & 1 == 1 {
                    continue;
                }
                let s = mask.count_ones() as usize;
                let w = (ln_factorial(s) + ln_factorial(d - s - 1) - ln_d).exp();
                acc += w * (values[mask | 1 << i] - values[mask]);
            }
            acc
        })
        .collect();
    Ok(Attribution {
        values: phi,
        base_value: values[0],
        score: values[(1 << d) - 1],
    })
}

/// Default coalition budget for `m` features.
pub fn default_samples(m: usize) -> usize {
    2 * m + 2048
}

fn binomial(n: usize, k: usize) -> f64 {
    (ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)).exp().round()
}

/// Coalitions over `m` players with their regression weights.
///
/// Subset sizes are taken whole, smallest and largest first, while the
/// budget covers them at their kernel weight; the remainder is sampled from
/// the kernel distribution with complements paired.
fn coalitions(m: usize, n_samples: usize, rng: &mut ChaCha8Rng) -> Vec<(Vec<bool>, f64)> {
    let n_sizes = (m - 1).div_ceil(2);
    let n_paired = (m - 1) / 2;
    let mut weight: Vec<f64> = (1..=n_sizes)
        .map(|s| (m as f64 - 1.0) / (s as f64 * (m - s) as f64))
        .collect();
    for w in weight.iter_mut().take(n_paired) {
        *w *= 2.0;
    }
    let total: f64 = weight.iter().sum();
    weight.iter_mut().for_each(|w| *w /= total);

    let mut out: Vec<(Vec<bool>, f64)> = Vec::new();
    let mut remaining = weight.clone();
    let mut left = n_samples as f64;
    let mut full = 0;
    for s in 1..=n_sizes {
        let paired = s <= n_paired;
        let count = binomial(m, s) * if paired { 2.0 } else { 1.0 };
        if left * remaining[s - 1] / count < 1.0 - 1e-8 {
            break;
        }
        full += 1;
        left -= count;
        let r = remaining[s - 1];
        if r < 1.0 {
            for w in remaining.iter_mut().skip(s) {
                *w /= 1.0 - r;
            }
        }
        let mut w = weight[s - 1] / binomial(m, s);
        if paired {
            w /= 2.0;
        }
        for combo in combinations(m, s) {
            let mut on = vec![false; m];
            for &j in &combo {
                on[j] = true;
            }
            if paired {
                out.push((on.iter().map(|b| !b).collect(), w));
            }
            out.push((on, w));
        }
    }

    if full < n_sizes && left >= 1.0 {
        let rest: Vec<f64> = weight[full..].to_vec();
        let rest_total: f64 = rest.iter().sum();
        let mut sampled: Vec<(Vec<bool>, f64)> = Vec::new();
        let mut index: std::collections::HashMap<Vec<bool>, usize> = std::collections::HashMap::new();
        let mut budget = left as usize;
        while budget > 0 {
            let mut u = rng.random::<f64>() * rest_total;
            let mut k = 0;
            while k + 1 < rest.len() && u >= rest[k] {
                u -= rest[k];
                k += 1;
            }
            let s = full + k + 1;
            let mut on = vec![false; m];
            for j in sample(rng, m, s) {
                on[j] = true;
            }
            let mut add = |on: Vec<bool>| {
                if let Some(&i) = index.get(&on) {
                    let entry: &mut (Vec<bool>, f64) = &mut sampled[i];
                    entry.1 += 1.0;
                } else {
                    index.insert(on.clone(), sampled.len());
                    sampled.push((on, 1.0));
                }
            };
            budget -= 1;
            if s <= n_paired && budget > 0 {
                add(on.iter().map(|b| !b).collect());
                budget -= 1;
            }
            add(on);
        }
        let sampled_total: f64 = sampled.iter().map(|x| x.1).sum();
        let weight_left: f64 = weight[full..].iter().sum();
        for (on, w) in sampled {
            out.push((on, w * weight_left / sampled_total));
        }
    }
    out
}

/// All `k`-subsets of `0..n` in lexicographic order.
fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut c: Vec<usize> = (0..k).collect();
    loop {
        out.push(c.clone());
        let mut i = k;
        while i > 0 && c[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        c[i - 1] += 1;
        for j in i..k {
            c[j] = c[j - 1] + 1;
        }
    }
}

/// Kernel SHAP: weighted least squares over coalitions under the
/// constraint that the values sum to `score - base_value`.
///
/// Features whose instance value equals every background value get exactly
/// zero and are left out of the regression. When the budget reaches
/// `2^m - 2` for the `m` remaining features all coalitions are used and the
/// result equals the exact Shapley values.
pub fn kernel_shap<S: Scorer + ?Sized>(
    scorer: &S,
    background: &[Vec<f64>],
    instance: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<Attribution, ExplainError> {
    check(instance, background)?;
    let d = instance.len();
    if n_samples < d + 2 {
        return Err(ExplainError::TooFewSamples { needed: d + 2, got: n_samples });
    }
    let base_value = coalition_value(scorer, instance, background, &vec![false; d]);
    let score = scorer.scores(&[instance.to_vec()])[0];
    let varying: Vec<usize> = (0..d)
        .filter(|&j| background.iter().any(|b| b[j] != instance[j]))
        .collect();
    let m = varying.len();
    let mut values = vec![0.0; d];
    let target = score - base_value;
    if m == 0 {
        return Ok(Attribution { values, base_value, score });
    }
    if m == 1 {
        values[varying[0]] = target;
        return Ok(Attribution { values, base_value, score });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coalitions = coalitions(m, n_samples, &mut rng);
    let ys: Vec<f64> = coalitions
        .par_iter()
        .map(|(on_m, _)| {
            let mut on = vec![true; d];
            for (k, &j) in varying.iter().enumerate() {
                on[j] = on_m[k];
            }
            coalition_value(scorer, instance, background, &on) - base_value
        })
        .collect();

    // Eliminate the last varying feature through the sum constraint.
    let rows = coalitions.len();
    let mut a = DMatrix::<f64>::zeros(rows, m - 1);
    let mut b = DVector::<f64>::zeros(rows);
    let mut w = DVector::<f64>::zeros(rows);
    for (r, ((on, wt), y)) in coalitions.iter().zip(&ys).enumerate() {
        let last = if on[m - 1] { 1.0 } else { 0.0 };
        for k in 0..m - 1 {
            a[(r, k)] = (if on[k] { 1.0 } else { 0.0 }) - last;
        }
        b[r] = y - last * target;
        w[r] = *wt;
    }
    let mut ata = DMatrix::<f64>::zeros(m - 1, m - 1);
    let mut atb = DVector::<f64>::zeros(m - 1);
    for r in 0..rows {
        for i in 0..m - 1 {
            let ai = a[(r, i)] * w[r];
            if ai == 0.0 {
                continue;
            }
            atb[i] += ai * b[r];
            for j in 0..m - 1 {
                ata[(i, j)] += ai * a[(r, j)];
            }
        }
    }
    let phi = match ata.clone().cholesky() {
        Some(ch) => ch.solve(&atb),
        None => ata
            .svd(true, true)
            .solve(&atb, 1e-12)
            .unwrap_or_else(|_| DVector::zeros(m - 1)),
    };
    let mut sum = 0.0;
    for k in 0..m - 1 {
        values[varying[k]] = phi[k];
        sum += phi[k];
    }
    values[varying[m - 1]] = target - sum;
    Ok(Attribution { values, base_value, score })
}

fn row_seed(seed: u64, row: &[f64]) -> u64 {
    let mut h = seed ^ 0x6A09_E667_F3BC_C909;
    for v in row {
        h ^= v.to_bits();
        h = (h ^ (h >> 33)).wrapping_mul(0xFF51_AFD7_ED55_8CCD);
        h = (h ^ (h >> 33)).wrapping_mul(0xC4CE_B9FE_1A85_EC53);
    }
    h ^ (h >> 33)
}

/// Caps the background at `cap` rows by a seeded draw after sorting, so the
/// result does not depend on the input row order.
pub fn cap_background(rows: &[Vec<f64>], cap: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut sorted = rows.to_vec();
    sorted.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(u, v)| u.total_cmp(v))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    if sorted.len() <= cap {
        return sorted;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, sorted.len(), cap).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| sorted[i].clone()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureShap {
    pub feature: String,
    pub mean_abs_shap: f64,
    /// 1 = most descriptive.
    pub rank: usize,
}

/// Mean |Shapley value| per feature over `rows`, ranked descending with ties
/// in column order. Each row's estimator seed derives from the row values,
/// so the result ignores row order.
pub fn mean_abs_shap<S: Scorer + ?Sized>(
    scorer: &S,
    rows: &[Vec<f64>],
    background: &[Vec<f64>],
    feature_names: &[String],
    n_samples: Option<usize>,
    seed: u64,
) -> Result<Vec<FeatureShap>, ExplainError> {
    if rows.is_empty() {
        return Err(ExplainError::EmptyDataset);
    }
    let d = feature_names.len();
    if let Some(r) = rows.iter().find(|r| r.len() != d) {
        return Err(ExplainError::DimensionMismatch { expected: d, got: r.len() });
    }
    let background = cap_background(background, BACKGROUND_CAP, seed);
    let budget = n_samples.unwrap_or_else(|| default_samples(d));
    let attributions = rows
        .par_iter()
        .map(|r| kernel_shap(scorer, &background, r, budget, row_seed(seed, r)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut sums = vec![0.0; d];
    for a in &attributions {
        for (s, v) in sums.iter_mut().zip(&a.values) {
            *s += v.abs();
        }
    }
    let means: Vec<f64> = sums.iter().map(|s| s / rows.len() as f64).collect();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| means[b].total_cmp(&means[a]).then(a.cmp(&b)));
    let mut out: Vec<FeatureShap> = order
        .iter()
        .enumerate()
        .map(|(rank, &j)| FeatureShap {
            feature: feature_names[j].clone(),
            mean_abs_shap: means[j],
            rank: rank + 1,
        })
        .collect();
    out.sort_by_key(|f| f.rank);
    Ok(out)
}

pub fn write_shap_csv<W: Write>(ranking: &[FeatureShap], mut out: W) -> std::io::Result<()> {
    writeln!(out, "# schema_version: 1")?;
    writeln!(out, "feature,mean_abs_shap,rank")?;
    for f in ranking {
        writeln!(out, "{},{},{}", f.feature, f.mean_abs_shap, f.rank)?;
    }
    Ok(())
}
