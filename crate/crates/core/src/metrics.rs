//! Evaluation metrics for anticipated action sequences.
//!
//! Mean-over-classes accuracy scores per-frame predictions while weighting
//! every ground-truth class equally, so a model cannot hide a missed short
//! action behind a long correct one. Segment edit distance compares the
//! run-length-collapsed action chains and forgives boundary jitter that
//! frame-level accuracy would punish.

use std::collections::BTreeMap;

/// Mean per-class recall over the classes that appear in `gt`.
/// Both slices are per-frame labels of equal length.
pub fn moc_accuracy(gt: &[usize], pred: &[usize]) -> f64 {
    assert_eq!(gt.len(), pred.len(), "frame counts differ");
    if gt.is_empty() {
        return 0.0;
    }
    let mut per_class: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (&g, &p) in gt.iter().zip(pred) {
        let entry = per_class.entry(g).or_insert((0, 0));
        entry.1 += 1;
        if g == p {
            entry.0 += 1;
        }
    }
    let recall_sum: f64 = per_class
        .values()
        .map(|&(hit, total)| hit as f64 / total as f64)
        .sum();
    recall_sum / per_class.len() as f64
}

/// Levenshtein distance between two label sequences (unit costs).
pub fn edit_distance(a: &[usize], b: &[usize]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, &ai) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &bj) in b.iter().enumerate() {
            let substitute = prev[j] + usize::from(ai != bj);
            cur[j + 1] = substitute.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance scaled into [0, 1] by the longer sequence; two empty
/// sequences are a perfect match.
pub fn normalized_edit(a: &[usize], b: &[usize]) -> f64 {
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 0.0;
    }
    edit_distance(a, b) as f64 / longest as f64
}

/// Fraction of `(predicted, actual)` pairs that agree.
pub fn next_action_accuracy(pairs: &[(usize, usize)]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let hits = pairs.iter().filter(|(p, a)| p == a).count();
    hits as f64 / pairs.len() as f64
}
