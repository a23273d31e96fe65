//! Observation/prediction window arithmetic and segment encoding.
//!
//! An episode of `N` frames is split into an observed prefix covering the
//! first `alpha` percent and a prediction target covering the following
//! `beta` percent. Both lengths round up, so small episodes still produce
//! non-empty windows. Ground-truth and predicted futures are exchanged as
//! *segments* — `(class, length)` runs — rather than per-frame labels, and
//! [`decode_durations`] converts a predicted duration simplex back into an
//! integer frame budget.

use crate::error::{Error, Result};

/// Frame ranges for one evaluation window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpisodeWindow {
    /// Observed prefix, `0..n_obs`.
    pub observed: std::ops::Range<usize>,
    /// Frames to predict, `n_obs..n_obs + n_target`.
    pub target: std::ops::Range<usize>,
    pub alpha_pct: u32,
    pub beta_pct: u32,
}

impl EpisodeWindow {
    pub fn n_observed(&self) -> usize {
        self.observed.end - self.observed.start
    }

    pub fn n_target(&self) -> usize {
        self.target.end - self.target.start
    }
}

/// Splits an episode of `ep_len` frames at `alpha_pct` percent observed,
/// `beta_pct` percent predicted. Both window lengths use ceiling division.
pub fn window(ep_len: usize, alpha_pct: u32, beta_pct: u32) -> Result<EpisodeWindow> {
    if ep_len == 0 {
        return Err(Error::Data("cannot window an empty episode".into()));
    }
    if alpha_pct == 0 || beta_pct == 0 {
        return Err(Error::Data(format!(
            "window percentages must be positive, got alpha={alpha_pct}% beta={beta_pct}%"
        )));
    }
    let n_obs = div_ceil(ep_len * alpha_pct as usize, 100);
    let n_target = div_ceil(ep_len * beta_pct as usize, 100);
    if n_obs + n_target > ep_len {
        return Err(Error::Data(format!(
            "window alpha={alpha_pct}% beta={beta_pct}% needs {} frames but the episode has {ep_len}",
            n_obs + n_target
        )));
    }
    Ok(EpisodeWindow {
        observed: 0..n_obs,
        target: n_obs..n_obs + n_target,
        alpha_pct,
        beta_pct,
    })
}

fn div_ceil(a: usize, b: usize) -> usize {
    (a + b - 1) / b
}

/// A run of identical frame labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub class: usize,
    pub len: usize,
}

/// Run-length encodes per-frame labels into segments.
pub fn segments_from_labels(labels: &[usize]) -> Vec<Segment> {
    let mut out: Vec<Segment> = Vec::new();
    for &class in labels {
        match out.last_mut() {
            Some(seg) if seg.class == class => seg.len += 1,
            _ => out.push(Segment { class, len: 1 }),
        }
    }
    out
}

/// Expands segments back into per-frame labels.
pub fn expand_segments(segments: &[Segment]) -> Vec<usize> {
    let mut out = Vec::with_capacity(segments.iter().map(|s| s.len).sum());
    for seg in segments {
        out.extend(std::iter::repeat(seg.class).take(seg.len));
    }
    out
}

/// Converts predicted classes and a duration simplex into per-frame labels
/// over a fixed horizon.
///
/// Query slots after the first `none_class` prediction are discarded, the
/// surviving durations are renormalized, and frames are apportioned by the
/// largest-remainder rule so that the result always has exactly `horizon`
/// frames. If every slot predicts `none_class` the whole horizon is filled
/// with `none_class` — callers can detect that degenerate case by inspecting
/// the output.
pub fn decode_durations(
    classes: &[usize],
    durations: &[f64],
    none_class: usize,
    horizon: usize,
) -> Vec<usize> {
    assert_eq!(
        classes.len(),
        durations.len(),
        "one duration per predicted class"
    );
    let kept = classes
        .iter()
        .position(|&c| c == none_class)
        .unwrap_or(classes.len());
    if horizon == 0 {
        return Vec::new();
    }
    if kept == 0 {
        return vec![none_class; horizon];
    }
    let classes = &classes[..kept];
    let durations = &durations[..kept];
    let total: f64 = durations.iter().map(|d| d.max(0.0)).sum();
    let shares: Vec<f64> = if total > 0.0 {
        durations
            .iter()
            .map(|d| d.max(0.0) / total * horizon as f64)
            .collect()
    } else {
        vec![horizon as f64 / kept as f64; kept]
    };
    let frames = apportion(&shares, horizon);
    let segments: Vec<Segment> = classes
        .iter()
        .zip(&frames)
        .map(|(&class, &len)| Segment { class, len })
        .collect();
    expand_segments(&segments)
}

/// Largest-remainder apportionment: rounds fractional shares (which sum to
/// `total`) down, then grants the leftover units to the largest remainders,
/// breaking ties toward earlier entries.
fn apportion(shares: &[f64], total: usize) -> Vec<usize> {
    let mut floors: Vec<usize> = shares.iter().map(|s| s.floor() as usize).collect();
    let assigned: usize = floors.iter().sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&i, &j| {
        let ri = shares[i] - shares[i].floor();
        let rj = shares[j] - shares[j].floor();
        rj.partial_cmp(&ri).unwrap().then(i.cmp(&j))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        floors[i] += 1;
    }
    floors
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn windows_round_up() {
        let w = window(100, 10, 30).unwrap();
        assert_eq!(w.observed, 0..10);
        assert_eq!(w.target, 10..40);

        let w = window(97, 10, 20).unwrap();
        assert_eq!(w.n_observed(), 10);
        assert_eq!(w.n_target(), 20);
        assert_eq!(w.target, 10..30);

        let w = window(7, 5, 20).unwrap();
        assert_eq!(w.n_observed(), 1);
        assert_eq!(w.n_target(), 2);
    }

    #[test]
    fn oversized_window_is_rejected() {
        let err = window(10, 60, 50).unwrap_err();
        assert!(err.to_string().contains("11 frames"));
        assert!(window(0, 10, 20).is_err());
        assert!(window(100, 0, 20).is_err());
    }

    #[test]
    fn rle_roundtrip() {
        let labels = vec![3, 3, 3, 1, 1, 7, 3, 3];
        let segs = segments_from_labels(&labels);
        assert_eq!(
            segs,
            vec![
                Segment { class: 3, len: 3 },
                Segment { class: 1, len: 2 },
                Segment { class: 7, len: 1 },
                Segment { class: 3, len: 2 },
            ]
        );
        assert_eq!(expand_segments(&segs), labels);
        assert!(segments_from_labels(&[]).is_empty());
    }

    #[test]
    fn largest_remainder_apportionment() {
        let out = decode_durations(&[0, 1, 2], &[0.34, 0.33, 0.33], 9, 10);
        let segs = segments_from_labels(&out);
        assert_eq!(
            segs,
            vec![
                Segment { class: 0, len: 4 },
                Segment { class: 1, len: 3 },
                Segment { class: 2, len: 3 },
            ]
        );
    }

    #[test]
    fn truncates_at_first_none() {
        let out = decode_durations(&[4, 9, 2], &[0.5, 0.25, 0.25], 9, 8);
        // Slot 1 predicts the none class, so slot 2 is dropped and slot 0
        // absorbs the full horizon.
        assert_eq!(out, vec![4; 8]);
    }

    #[test]
    fn all_none_fills_horizon_with_none() {
        let out = decode_durations(&[9, 9], &[0.5, 0.5], 9, 5);
        assert_eq!(out, vec![9; 5]);
    }

    #[test]
    fn zero_mass_durations_split_evenly() {
        let out = decode_durations(&[1, 2], &[0.0, 0.0], 9, 6);
        assert_eq!(out, vec![1, 1, 1, 2, 2, 2]);
    }

    proptest! {
        #[test]
        fn decoded_length_always_matches_horizon(
            raw in prop::collection::vec(0.0f64..1.0, 1..8),
            horizon in 1usize..60,
        ) {
            let classes: Vec<usize> = (0..raw.len()).collect();
            let total: f64 = raw.iter().sum();
            let durations: Vec<f64> = if total > 0.0 {
                raw.iter().map(|d| d / total).collect()
            } else {
                raw.clone()
            };
            let out = decode_durations(&classes, &durations, usize::MAX, horizon);
            prop_assert_eq!(out.len(), horizon);
        }

        #[test]
        fn rle_roundtrips_any_labels(labels in prop::collection::vec(0usize..5, 0..40)) {
            let segs = segments_from_labels(&labels);
            prop_assert_eq!(expand_segments(&segs), labels);
            // No two adjacent segments share a class.
            for pair in segs.windows(2) {
                prop_assert_ne!(pair[0].class, pair[1].class);
            }
        }

        #[test]
        fn window_lengths_never_exceed_episode(
            ep_len in 1usize..400,
            alpha in 1u32..50,
            beta in 1u32..50,
        ) {
            if let Ok(w) = window(ep_len, alpha, beta) {
                prop_assert!(w.target.end <= ep_len);
                prop_assert!(w.n_observed() >= 1);
                prop_assert!(w.n_target() >= 1);
            }
        }
    }
}
