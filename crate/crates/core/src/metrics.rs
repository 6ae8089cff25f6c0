//! Quantitative measures for repair pipelines: pass@k-style estimators over
//! filtered run sets, precision/recall sweeps, distribution distances, and a
//! simple expected-net-value model.
//!
//! Every function here is pure. Estimator means return `Option<f64>` — an
//! empty population is reported as `None`, never as 0, because a shrinking
//! denominator is itself a finding worth surfacing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-bug outcome counts before and after policy filtering.
///
/// `n`/`c` count all recorded runs and the ground-truth successes among
/// them; `n_prime`/`c_prime` count the same after the policy filters runs
/// out.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BugOutcomeSummary {
    pub bug_id: String,
    pub n: u32,
    pub c: u32,
    pub n_prime: u32,
    pub c_prime: u32,
}

impl BugOutcomeSummary {
    pub fn validate(&self) -> Result<()> {
        let ok = self.c <= self.n
            && self.n_prime <= self.n
            && self.c_prime <= self.n_prime
            && self.c_prime <= self.c;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "inconsistent outcome counts for bug {:?}: n={} c={} n'={} c'={}",
                self.bug_id, self.n, self.c, self.n_prime, self.c_prime
            )))
        }
    }
}

/// A policy score paired with its ground-truth label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledScore {
    pub label: bool,
    pub score: f64,
}

/// One point of a precision/recall sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    /// Score threshold this point was measured at (predict positive iff
    /// score ≥ threshold).
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Inputs of the expected-net-value model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetValueParams {
    /// Value of successfully closing the bug.
    pub v_b: f64,
    /// Cost of leaving the bug unrepaired.
    pub c_b: f64,
    /// Cost of running one repair trajectory.
    pub r_c: f64,
    /// Cost of one human review.
    pub h_c: f64,
    /// True probability the repair succeeds.
    pub p_star: f64,
}

impl NetValueParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.v_b >= 0.0
            && self.c_b >= 0.0
            && self.r_c >= 0.0
            && self.h_c >= 0.0
            && (0.0..=1.0).contains(&self.p_star);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(
                "net-value parameters must be non-negative with p_star in [0,1]".into(),
            ))
        }
    }
}

/// x·(x−1)·…·(x−k+1); zero when fewer than k factors exist; None on overflow.
fn falling_factorial(x: u64, k: u64) -> Option<u128> {
    let mut product: u128 = 1;
    for i in 0..k {
        let factor = x.saturating_sub(i) as u128;
        if factor == 0 {
            return Some(0);
        }
        product = product.checked_mul(factor)?;
    }
    Some(product)
}

/// Probability that a uniform sample of `min(k, n)` distinct runs out of `n`
/// (of which `c` succeed) contains at least one success:
/// `1 − C(n−c, k_eff) / C(n, k_eff)`.
///
/// The ratio is evaluated from exact integer falling factorials whenever they
/// fit in 128 bits, so small cases come out bit-exact; otherwise it falls
/// back to an overflow-safe iterative product of `(n−c−i)/(n−i)`.
pub fn success_at_k(n: u64, c: u64, k: u64) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidInput(
            "success_at_k needs at least one run (bugs with none are excluded upstream)".into(),
        ));
    }
    if c > n {
        return Err(Error::InvalidInput(format!(
            "successes exceed runs: c={c} > n={n}"
        )));
    }
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    let k_eff = k.min(n);
    if n - c < k_eff {
        // Too few failures to fill the sample: a success is guaranteed.
        return Ok(1.0);
    }
    match (
        falling_factorial(n - c, k_eff),
        falling_factorial(n, k_eff),
    ) {
        (Some(numerator), Some(denominator)) => {
            Ok((denominator - numerator) as f64 / denominator as f64)
        }
        _ => {
            let mut ratio = 1.0f64;
            for i in 0..k_eff {
                ratio *= (n - c - i) as f64 / (n - i) as f64;
            }
            Ok(1.0 - ratio)
        }
    }
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// pass@k: mean success probability over bugs with at least one recorded
/// run, using the unfiltered counts.
pub fn pass_at_k(summaries: &[BugOutcomeSummary], k: u64) -> Result<Option<f64>> {
    let mut rates = Vec::new();
    for summary in summaries {
        summary.validate()?;
        if summary.n >= 1 {
            rates.push(success_at_k(summary.n as u64, summary.c as u64, k)?);
        }
    }
    Ok(mean(&rates))
}

/// filtered-success@k: the same estimator over the post-filter counts,
/// averaged over B′ — the bugs that still have at least one surviving run.
/// `None` when B′ is empty.
pub fn filtered_success_at_k(summaries: &[BugOutcomeSummary], k: u64) -> Result<Option<f64>> {
    let mut rates = Vec::new();
    for summary in summaries {
        summary.validate()?;
        if summary.n_prime >= 1 {
            rates.push(success_at_k(
                summary.n_prime as u64,
                summary.c_prime as u64,
                k,
            )?);
        }
    }
    Ok(mean(&rates))
}

/// (pass & validation)@k: probability that a k-sample of **all** runs
/// contains one that both passed ground truth and was accepted by the
/// policy. Averaged over every bug; a bug with no runs contributes 0.
pub fn pass_and_validation_at_k(summaries: &[BugOutcomeSummary], k: u64) -> Result<Option<f64>> {
    let mut rates = Vec::new();
    for summary in summaries {
        summary.validate()?;
        if summary.n == 0 {
            rates.push(0.0);
        } else {
            rates.push(success_at_k(summary.n as u64, summary.c_prime as u64, k)?);
        }
    }
    Ok(mean(&rates))
}

/// Mean (validation recall)@k: among each bug's ground-truth-passing runs
/// (`m = c`, of which `a = c_prime` were accepted), the probability that a
/// k-sample of passing runs contains an accepted one. Bugs without passing
/// runs are excluded; `None` when none remain.
pub fn validation_recall_at_k(summaries: &[BugOutcomeSummary], k: u64) -> Result<Option<f64>> {
    let mut rates = Vec::new();
    for summary in summaries {
        summary.validate()?;
        if summary.c >= 1 {
            rates.push(success_at_k(summary.c as u64, summary.c_prime as u64, k)?);
        }
    }
    Ok(mean(&rates))
}

/// Precision/recall sweep over distinct score thresholds, descending, with
/// tied scores processed as one block. Returns the curve and its average
/// precision `AP = Σ (R_i − R_{i−1})·P_i`.
pub fn pr_curve(points: &[LabeledScore]) -> Result<(Vec<PrPoint>, f64)> {
    if points.iter().any(|p| p.score.is_nan()) {
        return Err(Error::InvalidInput("NaN score in PR input".into()));
    }
    let positives = points.iter().filter(|p| p.label).count();
    if positives == 0 {
        return Err(Error::InvalidInput(
            "precision/recall needs at least one positive label".into(),
        ));
    }
    let mut sorted: Vec<&LabeledScore> = points.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));

    let mut curve = Vec::new();
    let mut average_precision = 0.0;
    let mut true_positives = 0usize;
    let mut false_positives = 0usize;
    let mut previous_recall = 0.0;
    let mut index = 0;
    while index < sorted.len() {
        let threshold = sorted[index].score;
        // Consume the whole tie block at this threshold.
        while index < sorted.len() && sorted[index].score == threshold {
            if sorted[index].label {
                true_positives += 1;
            } else {
                false_positives += 1;
            }
            index += 1;
        }
        let precision = true_positives as f64 / (true_positives + false_positives) as f64;
        let recall = true_positives as f64 / positives as f64;
        average_precision += (recall - previous_recall) * precision;
        previous_recall = recall;
        curve.push(PrPoint {
            threshold,
            precision,
            recall,
        });
    }
    Ok((curve, average_precision))
}

/// False-positive rate of hard predictions: FP / N over `(label, predicted)`
/// pairs. Errors when there are no ground-truth negatives.
pub fn false_positive_rate(pairs: &[(bool, bool)]) -> Result<f64> {
    let negatives = pairs.iter().filter(|(label, _)| !label).count();
    if negatives == 0 {
        return Err(Error::InvalidInput(
            "false-positive rate needs at least one negative label".into(),
        ));
    }
    let false_positives = pairs
        .iter()
        .filter(|(label, predicted)| !label && *predicted)
        .count();
    Ok(false_positives as f64 / negatives as f64)
}

/// Exact 1-D Wasserstein-1 distance between two empirical distributions:
/// the integral of |F_a − F_b| over the merged sample breakpoints. For
/// equal-size samples this reduces to the mean |sortedᵢ(a) − sortedᵢ(b)|.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput(
            "wasserstein distance needs non-empty samples".into(),
        ));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::InvalidInput("NaN sample".into()));
    }
    let mut a_sorted = a.to_vec();
    let mut b_sorted = b.to_vec();
    a_sorted.sort_by(f64::total_cmp);
    b_sorted.sort_by(f64::total_cmp);
    let (size_a, size_b) = (a_sorted.len() as f64, b_sorted.len() as f64);

    let mut total = 0.0;
    let mut ia = 0usize;
    let mut ib = 0usize;
    let mut previous: Option<f64> = None;
    while ia < a_sorted.len() || ib < b_sorted.len() {
        let value = match (a_sorted.get(ia), b_sorted.get(ib)) {
            (Some(&va), Some(&vb)) => va.min(vb),
            (Some(&va), None) => va,
            (None, Some(&vb)) => vb,
            (None, None) => unreachable!(),
        };
        if let Some(prev) = previous {
            let gap = (ia as f64 / size_a - ib as f64 / size_b).abs();
            total += (value - prev) * gap;
        }
        while ia < a_sorted.len() && a_sorted[ia] == value {
            ia += 1;
        }
        while ib < b_sorted.len() && b_sorted[ib] == value {
            ib += 1;
        }
        previous = Some(value);
    }
    Ok(total)
}

/// Ratio of a filtered rate to the raw rate; `None` when either rate is
/// undefined or the raw rate is zero.
pub fn lift(filtered_rate: Option<f64>, raw_rate: Option<f64>) -> Option<f64> {
    match (filtered_rate, raw_rate) {
        (Some(filtered), Some(raw)) if raw != 0.0 => Some(filtered / raw),
        _ => None,
    }
}

/// Expected net value of attempting (or abstaining from) a repair:
/// attempted ⇒ `p*·V_b − (1−p*)·C_b − R_c`, otherwise `−C_b`.
pub fn net_value_abstention(params: &NetValueParams, attempted: bool) -> f64 {
    if attempted {
        params.p_star * params.v_b + (1.0 - params.p_star) * (-params.c_b) - params.r_c
    } else {
        -params.c_b
    }
}

/// Expected net value of surfacing (or suppressing) a patch for human
/// review: shown ⇒ `p*·V_b − (1−p*)·C_b − H_c`, otherwise `−C_b`.
pub fn net_value_validation(params: &NetValueParams, shown: bool) -> f64 {
    if shown {
        params.p_star * params.v_b + (1.0 - params.p_star) * (-params.c_b) - params.h_c
    } else {
        -params.c_b
    }
}
