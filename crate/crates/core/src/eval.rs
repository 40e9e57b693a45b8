//! Detector scoring: ranking metrics, window labeling, segmentation
//! agreement, and a rank-sum location test.
//!
//! All metric functions are pure; the file readers at the bottom understand
//! the score and truth formats the pipeline and generator write.

use std::collections::BTreeMap;

use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::types::SwitchRecord;
use crate::{Error, Result};

/// Marks windows that never got a regime (e.g. leading empty windows) in
/// expanded segmentations.
pub const NO_REGIME: u32 = u32::MAX;

fn ensure_finite(scores: &[f64]) -> Result<()> {
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::InvalidParameter(format!("score {i} is not finite")));
    }
    Ok(())
}

fn ensure_aligned(scores: usize, labels: usize) -> Result<()> {
    if scores != labels {
        return Err(Error::Alignment(format!("{scores} scores against {labels} labels")));
    }
    Ok(())
}

/// One-based ranks, ties sharing the midpoint of their span.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Rank-based area under the ROC curve; tied scores contribute one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    ensure_aligned(scores.len(), labels.len())?;
    ensure_finite(scores)?;
    let n_pos = labels.iter().filter(|&&l| l).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return Err(Error::UndefinedMetric(
            "ROC-AUC needs at least one positive and one negative window".into(),
        ));
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 =
        ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(&r, _)| r).sum();
    Ok((rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))
}

/// Average precision over descending scores, equal scores grouped into one
/// threshold step.
pub fn pr_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    ensure_aligned(scores.len(), labels.len())?;
    ensure_finite(scores)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 {
        return Err(Error::UndefinedMetric("PR-AUC needs at least one positive window".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mut group_pos = 0.0;
        for &idx in &order[i..=j] {
            if labels[idx] {
                group_pos += 1.0;
            }
        }
        tp += group_pos;
        fp += (j - i + 1) as f64 - group_pos;
        ap += group_pos * tp / (tp + fp);
        i = j + 1;
    }
    Ok(ap / n_pos as f64)
}

/// Per-window ground-truth labels from event tallies: a window is positive
/// iff it has at least one attack event and the attack fraction reaches
/// `min_attack_fraction`. Zero-event windows are negative.
pub fn label_windows(
    attack_events: &[u64],
    total_events: &[u64],
    min_attack_fraction: f64,
) -> Result<Vec<bool>> {
    if attack_events.len() != total_events.len() {
        return Err(Error::Alignment(format!(
            "{} attack tallies against {} window sizes",
            attack_events.len(),
            total_events.len()
        )));
    }
    if !(0.0..=1.0).contains(&min_attack_fraction) {
        return Err(Error::InvalidParameter(format!(
            "attack fraction threshold must be in [0, 1], got {min_attack_fraction}"
        )));
    }
    Ok(attack_events
        .iter()
        .zip(total_events)
        .map(|(&a, &n)| {
            if a == 0 || n == 0 {
                return false;
            }
            if a > n {
                return true;
            }
            a as f64 / n as f64 >= min_attack_fraction
        })
        .collect())
}

/// Expands a switch history into one regime id per window. Windows before
/// the first switch get [`NO_REGIME`].
pub fn expand_switches(switches: &[SwitchRecord], total_windows: u64) -> Result<Vec<u32>> {
    let mut out = vec![NO_REGIME; total_windows as usize];
    let mut prev_time: Option<u64> = None;
    for s in switches {
        if let Some(p) = prev_time {
            if s.switch_time <= p {
                return Err(Error::InvalidState(format!(
                    "switch times not strictly increasing at {}",
                    s.switch_time
                )));
            }
        }
        prev_time = Some(s.switch_time);
        if s.switch_time >= total_windows {
            return Err(Error::InvalidState(format!(
                "switch at window {} beyond the {total_windows}-window range",
                s.switch_time
            )));
        }
        for slot in out.iter_mut().skip(s.switch_time as usize) {
            *slot = s.regime_id.0;
        }
    }
    Ok(out)
}

/// Fraction of windows whose predicted regime matches the truth under the
/// best one-to-one relabeling (maximum-weight bipartite matching on the
/// contingency table).
pub fn segmentation_accuracy(predicted: &[u32], truth: &[u32]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::Alignment(format!(
            "{} predicted windows against {} truth windows",
            predicted.len(),
            truth.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::Alignment("segmentations are empty".into()));
    }
    let mut pred_ids = BTreeMap::new();
    let mut truth_ids = BTreeMap::new();
    for &p in predicted {
        let next = pred_ids.len();
        pred_ids.entry(p).or_insert(next);
    }
    for &t in truth {
        let next = truth_ids.len();
        truth_ids.entry(t).or_insert(next);
    }
    let side = pred_ids.len().max(truth_ids.len());
    let mut table = vec![vec![0i64; side]; side];
    for (&p, &t) in predicted.iter().zip(truth) {
        table[pred_ids[&p]][truth_ids[&t]] += 1;
    }
    let matrix = Matrix::from_rows(table)
        .map_err(|e| Error::InvalidParameter(format!("contingency table: {e}")))?;
    let (matched, _) = kuhn_munkres(&matrix);
    Ok(matched as f64 / predicted.len() as f64)
}

/// Result of a one-sided rank-sum comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MannWhitney {
    pub u_statistic: f64,
    pub z: f64,
    /// P(observing a separation at least this large) under the null that the
    /// two samples share a distribution, against "xs greater".
    pub p_value: f64,
}

/// One-sided Mann-Whitney test of whether `xs` is stochastically greater
/// than `ys`, with tie-corrected variance and continuity correction.
pub fn mann_whitney_greater(xs: &[f64], ys: &[f64]) -> Result<MannWhitney> {
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::InvalidParameter("both samples must be non-empty".into()));
    }
    ensure_finite(xs)?;
    ensure_finite(ys)?;
    let nx = xs.len() as f64;
    let ny = ys.len() as f64;
    let mut combined = Vec::with_capacity(xs.len() + ys.len());
    combined.extend_from_slice(xs);
    combined.extend_from_slice(ys);
    let ranks = average_ranks(&combined);
    let rank_sum_x: f64 = ranks[..xs.len()].iter().sum();
    let u = rank_sum_x - nx * (nx + 1.0) / 2.0;
    let n = nx + ny;
    let mut tie_term = 0.0;
    let mut sorted = combined.clone();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let variance = nx * ny / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if variance <= 0.0 {
        // Every value tied: no evidence in either direction.
        return Ok(MannWhitney { u_statistic: u, z: 0.0, p_value: 0.5 });
    }
    let mean = nx * ny / 2.0;
    let z = (u - mean - 0.5) / variance.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let p_value = 1.0 - normal.cdf(z);
    Ok(MannWhitney { u_statistic: u, z, p_value })
}

/// One row of a generator truth file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TruthRow {
    pub window_index: u64,
    pub regime_id: u32,
    pub is_anomaly: bool,
}

/// One row of the per-window label tallies the pipeline writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowLabelRow {
    pub window_index: u64,
    pub events: u64,
    pub attack_events: u64,
}

/// One row of the pipeline's score output.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub window_index: u64,
    pub chosen_regime_id: Option<u32>,
    pub anomaly_score: f64,
}

/// A truth file in either supported format.
#[derive(Debug, Clone, PartialEq)]
pub enum TruthFile {
    /// Generator format: window_index, regime_id, is_anomaly.
    Synthetic(Vec<TruthRow>),
    /// Pipeline label tallies: window_index, events, attack_events.
    Tallies(Vec<WindowLabelRow>),
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Config(format!("column '{name}' not found in the file header")))
}

fn field(record: &csv::StringRecord, idx: usize, line: u64) -> Result<&str> {
    record
        .get(idx)
        .ok_or_else(|| Error::Config(format!("row {line} is missing column {idx}")))
}

fn parse_field<T: std::str::FromStr>(raw: &str, line: u64, what: &str) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| Error::Config(format!("row {line}: cannot parse {what} from '{raw}'")))
}

/// Reads a truth file, detecting the format from its header.
pub fn read_truth_file(path: &std::path::Path) -> Result<TruthFile> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let has = |name: &str| headers.iter().any(|h| h.trim() == name);
    if has("is_anomaly") {
        let wi = column(&headers, "window_index")?;
        let ri = column(&headers, "regime_id")?;
        let an = column(&headers, "is_anomaly")?;
        let mut rows = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            let line = i as u64 + 2;
            rows.push(TruthRow {
                window_index: parse_field(field(&record, wi, line)?, line, "window index")?,
                regime_id: parse_field(field(&record, ri, line)?, line, "regime id")?,
                is_anomaly: parse_field::<u8>(field(&record, an, line)?, line, "anomaly flag")?
                    != 0,
            });
        }
        Ok(TruthFile::Synthetic(rows))
    } else if has("attack_events") {
        let wi = column(&headers, "window_index")?;
        let ev = column(&headers, "events")?;
        let at = column(&headers, "attack_events")?;
        let mut rows = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            let line = i as u64 + 2;
            rows.push(WindowLabelRow {
                window_index: parse_field(field(&record, wi, line)?, line, "window index")?,
                events: parse_field(field(&record, ev, line)?, line, "event count")?,
                attack_events: parse_field(field(&record, at, line)?, line, "attack count")?,
            });
        }
        Ok(TruthFile::Tallies(rows))
    } else {
        Err(Error::Config(
            "truth file has neither an 'is_anomaly' nor an 'attack_events' column".into(),
        ))
    }
}

/// Reads the pipeline's score output.
pub fn read_scores(path: &std::path::Path) -> Result<Vec<ScoreRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let wi = column(&headers, "window_index")?;
    let ri = column(&headers, "chosen_regime_id")?;
    let sc = column(&headers, "anomaly_score")?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i as u64 + 2;
        let regime_raw = field(&record, ri, line)?.trim();
        rows.push(ScoreRow {
            window_index: parse_field(field(&record, wi, line)?, line, "window index")?,
            chosen_regime_id: if regime_raw.is_empty() {
                None
            } else {
                Some(parse_field(regime_raw, line, "regime id")?)
            },
            anomaly_score: parse_field(field(&record, sc, line)?, line, "anomaly score")?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::RegimeId;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;

    #[test]
    fn roc_orders_perfect_and_inverted() {
        assert_eq!(roc_auc(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.1, 0.9], &[true, false]).unwrap(), 0.0);
        assert_eq!(roc_auc(&[0.5, 0.5, 0.5], &[true, false, true]).unwrap(), 0.5);
    }

    #[test]
    fn roc_rejects_single_class() {
        let err = roc_auc(&[0.1, 0.2], &[true, true]).unwrap_err();
        assert!(matches!(err, Error::UndefinedMetric(_)));
        let err = roc_auc(&[0.1, 0.2], &[false, false]).unwrap_err();
        assert!(matches!(err, Error::UndefinedMetric(_)));
    }

    #[test]
    fn roc_rejects_misaligned_or_bad_input() {
        assert!(matches!(roc_auc(&[0.1], &[true, false]), Err(Error::Alignment(_))));
        assert!(roc_auc(&[f64::NAN, 0.2], &[true, false]).is_err());
    }

    fn brute_force_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            if !li {
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if lj {
                    continue;
                }
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn average_precision_matches_definition() {
        assert_eq!(pr_auc(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
        // A single positive ranked last of n scores 1/n.
        let scores = [5.0, 4.0, 3.0, 2.0, 1.0];
        let labels = [false, false, false, false, true];
        assert!((pr_auc(&scores, &labels).unwrap() - 0.2).abs() < 1e-12);
        // All-tied scores collapse to one threshold: AP equals prevalence.
        let ap = pr_auc(&[1.0; 8], &[true, false, true, false, false, false, false, false])
            .unwrap();
        assert!((ap - 0.25).abs() < 1e-12);
        assert!(matches!(pr_auc(&[0.5], &[false]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn random_scores_hover_near_prevalence() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let n = 10_000;
        let scores: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let labels: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let ap = pr_auc(&scores, &labels).unwrap();
        assert!((ap - 0.5).abs() < 0.03, "ap {ap}");
        let auc = roc_auc(&scores, &labels).unwrap();
        assert!((auc - 0.5).abs() < 0.03, "auc {auc}");
    }

    #[test]
    fn window_labels_follow_the_fraction_rule() {
        // One attack event in ten flags the window under the default rule.
        assert_eq!(label_windows(&[1], &[10], 0.0).unwrap(), vec![true]);
        assert_eq!(label_windows(&[0], &[10], 0.0).unwrap(), vec![false]);
        assert_eq!(label_windows(&[0], &[0], 0.0).unwrap(), vec![false]);
        // 4 of 10 misses a 0.5 threshold.
        assert_eq!(label_windows(&[4], &[10], 0.5).unwrap(), vec![false]);
        assert_eq!(label_windows(&[5], &[10], 0.5).unwrap(), vec![true]);
        assert!(matches!(label_windows(&[1], &[1, 2], 0.0), Err(Error::Alignment(_))));
        assert!(label_windows(&[1], &[1], 1.5).is_err());
    }

    fn sw(t: u64, id: u32) -> SwitchRecord {
        SwitchRecord { switch_time: t, regime_id: RegimeId(id) }
    }

    #[test]
    fn switch_expansion_fills_segments() {
        let ids = expand_switches(&[sw(0, 0), sw(3, 1)], 5).unwrap();
        assert_eq!(ids, vec![0, 0, 0, 1, 1]);
        let ids = expand_switches(&[sw(2, 4)], 4).unwrap();
        assert_eq!(ids, vec![NO_REGIME, NO_REGIME, 4, 4]);
        assert!(expand_switches(&[sw(0, 0), sw(0, 1)], 3).is_err());
        assert!(expand_switches(&[sw(9, 0)], 3).is_err());
    }

    #[test]
    fn segmentation_is_permutation_invariant() {
        let truth = [0u32, 0, 0, 1, 1, 1];
        assert_eq!(segmentation_accuracy(&truth, &truth).unwrap(), 1.0);
        let permuted = [7u32, 7, 7, 3, 3, 3];
        assert_eq!(segmentation_accuracy(&permuted, &truth).unwrap(), 1.0);
    }

    #[test]
    fn constant_prediction_matches_majority() {
        let truth = [0u32, 0, 0, 1, 1, 1];
        let constant = [9u32; 6];
        assert_eq!(segmentation_accuracy(&constant, &truth).unwrap(), 0.5);
    }

    #[test]
    fn segmentation_handles_unequal_regime_counts() {
        // More predicted regimes than truth regimes and vice versa.
        let truth = [0u32, 0, 0, 0, 1, 1];
        let pred = [5u32, 5, 2, 2, 8, 8];
        let acc = segmentation_accuracy(&pred, &truth).unwrap();
        assert!((acc - 4.0 / 6.0).abs() < 1e-12, "acc {acc}");
        let acc = segmentation_accuracy(&truth, &pred).unwrap();
        assert!((acc - 4.0 / 6.0).abs() < 1e-12, "acc {acc}");
        assert!(matches!(segmentation_accuracy(&[0], &[0, 1]), Err(Error::Alignment(_))));
    }

    #[test]
    fn rank_sum_detects_a_shift() {
        let xs: Vec<f64> = (0..40).map(|i| 10.0 + i as f64 * 0.1).collect();
        let ys: Vec<f64> = (0..40).map(|i| 5.0 + i as f64 * 0.1).collect();
        let mw = mann_whitney_greater(&xs, &ys).unwrap();
        assert!(mw.p_value < 1e-6, "p {}", mw.p_value);
        // The reversed comparison is nowhere near significant.
        let mw = mann_whitney_greater(&ys, &xs).unwrap();
        assert!(mw.p_value > 0.99, "p {}", mw.p_value);
    }

    #[test]
    fn rank_sum_is_calm_under_the_null() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<f64> = (0..60).map(|_| rng.random::<f64>()).collect();
        let ys: Vec<f64> = (0..60).map(|_| rng.random::<f64>()).collect();
        let mw = mann_whitney_greater(&xs, &ys).unwrap();
        assert!(mw.p_value > 0.05 && mw.p_value < 0.95, "p {}", mw.p_value);
    }

    #[test]
    fn rank_sum_on_all_ties_is_even() {
        let mw = mann_whitney_greater(&[1.0; 5], &[1.0; 7]).unwrap();
        assert_eq!(mw.p_value, 0.5);
        assert_eq!(mw.z, 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn auc_agrees_with_pair_counting(
            scores in prop::collection::vec(-100.0f64..100.0, 2..200),
            flips in prop::collection::vec(any::<bool>(), 2..200),
        ) {
            let n = scores.len().min(flips.len());
            let scores = &scores[..n];
            let labels = &flips[..n];
            let n_pos = labels.iter().filter(|&&l| l).count();
            prop_assume!(n_pos > 0 && n_pos < n);
            let fast = roc_auc(scores, labels).unwrap();
            let slow = brute_force_auc(scores, labels);
            prop_assert!((fast - slow).abs() < 1e-12);
        }

        #[test]
        fn auc_complements_under_score_negation(
            scores in prop::collection::vec(-100.0f64..100.0, 2..80),
            flips in prop::collection::vec(any::<bool>(), 2..80),
        ) {
            let n = scores.len().min(flips.len());
            let mut scores = scores[..n].to_vec();
            scores.sort_by(f64::total_cmp);
            scores.dedup();
            let labels = &flips[..scores.len().min(flips.len())];
            let scores = &scores[..labels.len()];
            let n_pos = labels.iter().filter(|&&l| l).count();
            prop_assume!(scores.len() >= 2 && n_pos > 0 && n_pos < scores.len());
            let auc = roc_auc(scores, labels).unwrap();
            let negated: Vec<f64> = scores.iter().map(|s| -s).collect();
            let flipped = roc_auc(&negated, labels).unwrap();
            prop_assert!((auc + flipped - 1.0).abs() < 1e-12);
        }

        #[test]
        fn aucs_ignore_monotone_transforms(
            scores in prop::collection::vec(-5.0f64..5.0, 2..80),
            flips in prop::collection::vec(any::<bool>(), 2..80),
        ) {
            let n = scores.len().min(flips.len());
            let scores = &scores[..n];
            let labels = &flips[..n];
            let n_pos = labels.iter().filter(|&&l| l).count();
            prop_assume!(n_pos > 0 && n_pos < n);
            let transformed: Vec<f64> = scores.iter().map(|s| (s * 0.5).exp() + 3.0).collect();
            let a1 = roc_auc(scores, labels).unwrap();
            let a2 = roc_auc(&transformed, labels).unwrap();
            prop_assert!((a1 - a2).abs() < 1e-12);
            let p1 = pr_auc(scores, labels).unwrap();
            let p2 = pr_auc(&transformed, labels).unwrap();
            prop_assert!((p1 - p2).abs() < 1e-12);
        }
    }
}
