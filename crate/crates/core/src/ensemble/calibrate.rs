use serde::{Deserialize, Serialize};

use super::EnsembleError;
use crate::corpus::Label;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub threshold: f64,
    pub balanced_accuracy: f64,
}

/// Outcome of a threshold search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub threshold: f64,
    pub balanced_accuracy: f64,
    pub positives: usize,
    pub negatives: usize,
    /// Every candidate in ascending order.
    pub trace: Vec<CandidateScore>,
}

/// Mean of the per-class accuracies when `score >= threshold` predicts
/// positive.
pub fn balanced_accuracy(scored: &[(f64, Label)], threshold: f64) -> f64 {
    let (mut tp, mut p, mut tn, mut n) = (0usize, 0usize, 0usize, 0usize);
    for &(s, label) in scored {
        match label {
            Label::Positive => {
                p += 1;
                tp += (s >= threshold) as usize;
            }
            Label::Negative => {
                n += 1;
                tn += (s < threshold) as usize;
            }
        }
    }
    (tp as f64 / p as f64 + tn as f64 / n as f64) / 2.0
}

/// Evaluates every midpoint between consecutive distinct scores plus 0 and
/// 1, and keeps the candidate with the highest balanced accuracy. Ties go to
/// the candidate closest to 0.5, then to the lower one.
pub fn sweep_threshold(scored: &[(f64, Label)]) -> Result<Calibration, EnsembleError> {
    let mut pos: Vec<f64> = scored.iter().filter(|s| s.1 == Label::Positive).map(|s| s.0).collect();
    let mut neg: Vec<f64> = scored.iter().filter(|s| s.1 == Label::Negative).map(|s| s.0).collect();
    if pos.is_empty() {
        return Err(EnsembleError::ClassMissing(Label::Positive));
    }
    if neg.is_empty() {
        return Err(EnsembleError::ClassMissing(Label::Negative));
    }
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);

    let mut distinct: Vec<f64> = scored.iter().map(|s| s.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut candidates = vec![0.0];
    candidates.extend(distinct.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    candidates.push(1.0);
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();

    let (np, nn) = (pos.len(), neg.len());
    // exact comparison on the common denominator 2·P·N
    let key = |t: f64| {
        let tp = np - pos.partition_point(|&s| s < t);
        let tn = neg.partition_point(|&s| s < t);
        tp * nn + tn * np
    };
    let mut trace = Vec::with_capacity(candidates.len());
    let mut best: Option<(usize, f64)> = None;
    for &t in &candidates {
        let k = key(t);
        trace.push(CandidateScore {
            threshold: t,
            balanced_accuracy: k as f64 / (2 * np * nn) as f64,
        });
        let better = match best {
            None => true,
            Some((bk, bt)) => k > bk || (k == bk && (t - 0.5).abs() < (bt - 0.5).abs()),
        };
        if better {
            best = Some((k, t));
        }
    }
    let (k, threshold) = best.expect("candidate list is never empty");
    Ok(Calibration {
        threshold,
        balanced_accuracy: k as f64 / (2 * np * nn) as f64,
        positives: np,
        negatives: nn,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Negative as N, Positive as P};

    #[test]
    fn separable_classes_pick_half() {
        let s = [(0.9, P), (0.9, P), (0.1, N), (0.1, N)];
        let c = sweep_threshold(&s).unwrap();
        assert_eq!(c.threshold, 0.5);
        assert_eq!(c.balanced_accuracy, 1.0);
    }

    #[test]
    fn five_point_example() {
        let s = [(0.7, P), (0.8, P), (0.4, P), (0.3, N), (0.6, N)];
        let c = sweep_threshold(&s).unwrap();
        assert!((c.threshold - 0.65).abs() < 1e-12);
        assert!((c.balanced_accuracy - 5.0 / 6.0).abs() < 1e-12);
        // trace covers 0, four midpoints and 1
        assert_eq!(c.trace.len(), 6);
    }

    #[test]
    fn trace_agrees_with_direct_count() {
        let s = [(0.7, P), (0.8, P), (0.4, P), (0.3, N), (0.6, N)];
        for cand in sweep_threshold(&s).unwrap().trace {
            assert!((cand.balanced_accuracy - balanced_accuracy(&s, cand.threshold)).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_class() {
        assert!(matches!(
            sweep_threshold(&[(0.3, P), (0.4, P)]),
            Err(EnsembleError::ClassMissing(Label::Negative))
        ));
    }
}
