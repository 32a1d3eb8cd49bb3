//! Threshold calibration from detection-error tradeoff curves.
//!
//! The error rates are empirical step functions of the threshold `t`:
//! `frr(t)` is the fraction of same-author trials scoring strictly below `t`
//! (they would be rejected), and `far(t)` the fraction of different-author
//! trials scoring at or above `t` (they would be accepted). Both conventions
//! mirror the decision rule's inclusive boundary. Candidate thresholds are
//! the distinct observed scores plus sentinels 0 and just-above-1, so the
//! curve always spans (frr, far) = (0, 1) to (1, 0).
//!
//! The equal-error operating point sits where the two rates cross. Because
//! the rates are steps over a finite trial set, the crossing is either an
//! interval of thresholds with exactly equal rates (the midpoint is
//! returned) or a jump that straddles zero (linear interpolation between the
//! neighboring curve points).

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::TrialLabel;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("no trials provided")]
    EmptyInput,
    #[error("no {0:?} trials; both classes are required for calibration")]
    MissingClass(TrialLabel),
    #[error("trial {trial_id:?} has score {score} outside [0, 1]")]
    InvalidScore { trial_id: String, score: f64 },
    #[error("probit is undefined at p = {0}; domain is the open interval (0, 1)")]
    ProbitDomain(f64),
    #[error("DET export: {0}")]
    Io(String),
}

/// One scored trial with its ground-truth label.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScoredTrial {
    pub trial_id: String,
    pub label: TrialLabel,
    pub score: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetPoint {
    pub threshold: f64,
    pub frr: f64,
    pub far: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DetCurve {
    pub points: Vec<DetPoint>,
    pub n_true_trials: usize,
    pub n_false_trials: usize,
}

/// Calibrated decision threshold and the error rates at the crossing.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub eer: f64,
    pub frr_at: f64,
    pub far_at: f64,
}

/// Sweeps every candidate threshold and evaluates both error rates.
/// Thresholds are strictly increasing; frr is non-decreasing and far
/// non-increasing along the curve.
pub fn compute_det(trials: &[ScoredTrial]) -> Result<DetCurve, CalibrationError> {
    if trials.is_empty() {
        return Err(CalibrationError::EmptyInput);
    }
    let mut true_scores = Vec::new();
    let mut false_scores = Vec::new();
    for trial in trials {
        if !trial.score.is_finite() || !(0.0..=1.0).contains(&trial.score) {
            return Err(CalibrationError::InvalidScore {
                trial_id: trial.trial_id.clone(),
                score: trial.score,
            });
        }
        match trial.label {
            TrialLabel::SameAuthor => true_scores.push(trial.score),
            TrialLabel::DifferentAuthor => false_scores.push(trial.score),
        }
    }
    if true_scores.is_empty() {
        return Err(CalibrationError::MissingClass(TrialLabel::SameAuthor));
    }
    if false_scores.is_empty() {
        return Err(CalibrationError::MissingClass(TrialLabel::DifferentAuthor));
    }

    let mut candidates: Vec<f64> = trials.iter().map(|t| t.score).collect();
    candidates.push(0.0);
    // Just above the score ceiling, so the final point reaches frr 1, far 0.
    candidates.push(1.0 + f64::EPSILON);
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();

    let n_tt = true_scores.len() as f64;
    let n_ft = false_scores.len() as f64;
    let points = candidates
        .into_iter()
        .map(|threshold| {
            let frr = true_scores.iter().filter(|&&s| s < threshold).count() as f64 / n_tt;
            let far = false_scores.iter().filter(|&&s| s >= threshold).count() as f64 / n_ft;
            DetPoint {
                threshold,
                frr,
                far,
            }
        })
        .collect();

    Ok(DetCurve {
        points,
        n_true_trials: true_scores.len(),
        n_false_trials: false_scores.len(),
    })
}

/// Locates the equal-error crossing of a DET curve.
///
/// `frr - far` is non-decreasing along the curve, starts at -1 and ends at
/// +1, so a crossing always exists. If the rates are exactly equal at one or
/// more consecutive candidates, every threshold in the half-open interval
/// from the previous candidate (exclusive) to the last equal candidate
/// (inclusive) realizes that common rate, and the interval midpoint is
/// returned. Otherwise the crossing falls inside a jump and is linearly
/// interpolated between the two neighboring points.
pub fn compute_eer(curve: &DetCurve) -> Result<OperatingPoint, CalibrationError> {
    if curve.points.is_empty() {
        return Err(CalibrationError::EmptyInput);
    }
    let points = &curve.points;
    let first_cross = points
        .iter()
        .position(|p| p.frr - p.far >= 0.0)
        .expect("diff reaches +1 at the final sentinel threshold");

    let diff_at = |i: usize| points[i].frr - points[i].far;

    if diff_at(first_cross) == 0.0 {
        let mut last = first_cross;
        while last + 1 < points.len() && diff_at(last + 1) == 0.0 {
            last += 1;
        }
        // The rates hold their crossing value on (prev_candidate, last]; the
        // empirical step functions only move at observed scores.
        let lo = if first_cross == 0 {
            points[0].threshold
        } else {
            points[first_cross - 1].threshold
        };
        let hi = points[last].threshold;
        let eer = points[first_cross].frr;
        return Ok(OperatingPoint {
            threshold: (lo + hi) / 2.0,
            eer,
            frr_at: eer,
            far_at: points[first_cross].far,
        });
    }

    debug_assert!(first_cross > 0, "diff starts at -1");
    let p1 = points[first_cross - 1];
    let p2 = points[first_cross];
    let denom = (p2.frr - p1.frr) - (p2.far - p1.far);
    let threshold = p1.threshold + (p1.far - p1.frr) * (p2.threshold - p1.threshold) / denom;
    let span = p2.threshold - p1.threshold;
    let eer = p1.frr + (p2.frr - p1.frr) * (threshold - p1.threshold) / span;
    Ok(OperatingPoint {
        threshold,
        eer,
        frr_at: eer,
        far_at: eer,
    })
}

// ───────────────────────────── probit ─────────────────────────────

// Rational approximation coefficients (Acklam's inverse normal CDF).
const PROBIT_A: [f64; 6] = [
    -3.969683028665376e+01,
    2.209460984245205e+02,
    -2.759285104469687e+02,
    1.38357751867269e+02,
    -3.066479806614716e+01,
    2.506628277459239e+00,
];
const PROBIT_B: [f64; 5] = [
    -5.447609879822406e+01,
    1.615858368580409e+02,
    -1.556989798598866e+02,
    6.680131188771972e+01,
    -1.328068155288572e+01,
];
const PROBIT_C: [f64; 6] = [
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758277161838e+00,
    -2.549732539343734e+00,
    4.374664141464968e+00,
    2.938163982698783e+00,
];
const PROBIT_D: [f64; 4] = [
    7.784695709041462e-03,
    3.224671290700398e-01,
    2.445134137142996e+00,
    3.754408661907416e+00,
];
const PROBIT_P_LOW: f64 = 0.02425;

/// Inverse CDF of the standard normal distribution, used to place DET curves
/// on normal-deviate axes. Absolute error is well under 1e-6 across (0, 1);
/// inputs at or beyond the endpoints are a domain error.
pub fn probit(p: f64) -> Result<f64, CalibrationError> {
    if !p.is_finite() || p <= 0.0 || p >= 1.0 {
        return Err(CalibrationError::ProbitDomain(p));
    }
    let x = if p < PROBIT_P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        polynomial_tail(q)
    } else if p <= 1.0 - PROBIT_P_LOW {
        let q = p - 0.5;
        let r = q * q;
        let num = ((((PROBIT_A[0] * r + PROBIT_A[1]) * r + PROBIT_A[2]) * r + PROBIT_A[3]) * r
            + PROBIT_A[4])
            * r
            + PROBIT_A[5];
        let den = ((((PROBIT_B[0] * r + PROBIT_B[1]) * r + PROBIT_B[2]) * r + PROBIT_B[3]) * r
            + PROBIT_B[4])
            * r
            + 1.0;
        num * q / den
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -polynomial_tail(q)
    };
    Ok(x)
}

fn polynomial_tail(q: f64) -> f64 {
    let num = ((((PROBIT_C[0] * q + PROBIT_C[1]) * q + PROBIT_C[2]) * q + PROBIT_C[3]) * q
        + PROBIT_C[4])
        * q
        + PROBIT_C[5];
    let den = (((PROBIT_D[0] * q + PROBIT_D[1]) * q + PROBIT_D[2]) * q + PROBIT_D[3]) * q + 1.0;
    num / den
}

/// Error rates at the curve extremes hit exactly 0 and 1 where probit is
/// undefined; the export clamps into this range for the transformed columns
/// while leaving the raw columns untouched.
pub const PROBIT_EXPORT_CLAMP: f64 = 1e-6;

/// Probit with error rates clamped into the open domain; export paths use
/// this so exact 0 and 1 rates stay plottable.
pub fn probit_clamped(p: f64) -> f64 {
    let clamped = p.clamp(PROBIT_EXPORT_CLAMP, 1.0 - PROBIT_EXPORT_CLAMP);
    probit(clamped).expect("clamped probability is inside the domain")
}

/// Writes a DET curve as CSV with columns `threshold,frr,far,probit_frr,
/// probit_far`, six decimal places throughout.
pub fn write_det_csv<W: Write>(curve: &DetCurve, mut out: W) -> Result<(), CalibrationError> {
    let io = |e: std::io::Error| CalibrationError::Io(e.to_string());
    writeln!(out, "threshold,frr,far,probit_frr,probit_far").map_err(io)?;
    for p in &curve.points {
        writeln!(
            out,
            "{:.6},{:.6},{:.6},{:.6},{:.6}",
            p.threshold,
            p.frr,
            p.far,
            probit_clamped(p.frr),
            probit_clamped(p.far),
        )
        .map_err(io)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn scored(label: TrialLabel, scores: &[f64]) -> Vec<ScoredTrial> {
        scores
            .iter()
            .enumerate()
            .map(|(i, &score)| ScoredTrial {
                trial_id: format!("{label:?}-{i}"),
                label,
                score,
            })
            .collect()
    }

    fn mixed(tt: &[f64], ft: &[f64]) -> Vec<ScoredTrial> {
        let mut trials = scored(TrialLabel::SameAuthor, tt);
        trials.extend(scored(TrialLabel::DifferentAuthor, ft));
        trials
    }

    #[test]
    fn perfectly_separated_scores_give_zero_eer() {
        let curve = compute_det(&mixed(&[0.8, 0.6], &[0.4, 0.2])).unwrap();
        let op = compute_eer(&curve).unwrap();
        assert_eq!(op.eer, 0.0);
        assert!((op.threshold - 0.5).abs() < 1e-12, "threshold {}", op.threshold);
        assert_eq!(op.frr_at, 0.0);
        assert_eq!(op.far_at, 0.0);
    }

    #[test]
    fn overlapping_fixture_has_one_third_eer() {
        let curve = compute_det(&mixed(&[0.9, 0.7, 0.4], &[0.6, 0.3, 0.1])).unwrap();
        let op = compute_eer(&curve).unwrap();
        assert!((op.eer - 1.0 / 3.0).abs() < 1e-12, "eer {}", op.eer);
        assert!((op.threshold - 0.5).abs() < 1e-12, "threshold {}", op.threshold);
    }

    #[test]
    fn curve_endpoints_are_pinned() {
        let curve = compute_det(&mixed(&[0.9, 0.5], &[0.5, 0.1])).unwrap();
        let first = curve.points.first().unwrap();
        let last = curve.points.last().unwrap();
        assert_eq!((first.frr, first.far), (0.0, 1.0));
        assert_eq!((last.frr, last.far), (1.0, 0.0));
        assert_eq!(first.threshold, 0.0);
        assert!(last.threshold > 1.0);
    }

    #[test]
    fn tied_scores_between_classes_are_handled() {
        // Same score on both sides exercises the inclusive/exclusive split.
        let curve = compute_det(&mixed(&[0.5, 0.5], &[0.5, 0.5])).unwrap();
        let at_half = curve
            .points
            .iter()
            .find(|p| p.threshold == 0.5)
            .unwrap();
        assert_eq!(at_half.frr, 0.0);
        assert_eq!(at_half.far, 1.0);
        let op = compute_eer(&curve).unwrap();
        assert!(op.eer > 0.0);
    }

    #[test]
    fn missing_class_is_an_error() {
        let err = compute_det(&scored(TrialLabel::SameAuthor, &[0.5])).unwrap_err();
        assert!(matches!(
            err,
            CalibrationError::MissingClass(TrialLabel::DifferentAuthor)
        ));
        assert!(matches!(
            compute_det(&[]),
            Err(CalibrationError::EmptyInput)
        ));
    }

    #[test]
    fn out_of_range_score_is_an_error() {
        let err = compute_det(&mixed(&[1.2], &[0.1])).unwrap_err();
        assert!(matches!(err, CalibrationError::InvalidScore { .. }));
    }

    #[test]
    fn probit_matches_frozen_high_precision_values() {
        // Reference values computed with a high-precision inverse normal CDF.
        let cases = [
            (0.0228, -1.99907721497177),
            (0.025, -1.95996398454005),
            (0.1, -1.2815515655446),
            (0.5, 0.0),
            (0.75, 0.674489750196082),
            (0.9, 1.2815515655446),
            (0.975, 1.95996398454005),
            (0.999999, 4.75342430881709),
            (1e-6, -4.7534243088229),
        ];
        for (p, want) in cases {
            let got = probit(p).unwrap();
            assert!(
                (got - want).abs() < 1e-6,
                "probit({p}) = {got}, want {want}"
            );
        }
        assert!((probit(0.975).unwrap() - 1.959964).abs() < 1e-4);
        assert!((probit(0.0228).unwrap() - -1.9991).abs() < 1e-3);
    }

    #[test]
    fn probit_domain_is_open() {
        for p in [0.0, 1.0, -0.1, 1.1, f64::NAN] {
            assert!(matches!(
                probit(p),
                Err(CalibrationError::ProbitDomain(_))
            ));
        }
    }

    #[test]
    fn probit_tracks_library_inverse_cdf() {
        use statrs::distribution::ContinuousCDF;
        let normal = statrs::distribution::Normal::new(0.0, 1.0).unwrap();
        let mut p = 1e-6;
        while p < 1.0 {
            let want = normal.inverse_cdf(p);
            let got = probit(p).unwrap();
            assert!(
                (got - want).abs() < 1e-6,
                "probit({p}) = {got}, library {want}"
            );
            p += 0.000917; // irregular step to avoid hitting only round values
        }
    }

    #[test]
    fn det_csv_shape() {
        let curve = compute_det(&mixed(&[0.9, 0.6], &[0.3, 0.1])).unwrap();
        let mut buf = Vec::new();
        write_det_csv(&curve, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "threshold,frr,far,probit_frr,probit_far"
        );
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), curve.points.len());
        for row in rows {
            assert_eq!(row.split(',').count(), 5);
            for field in row.split(',') {
                let (_, frac) = field.split_once('.').expect("decimal point");
                assert_eq!(frac.trim_start_matches('-').len(), 6, "field {field}");
            }
        }
    }

    /// Brute-force reference: evaluate both rates at every observed score and
    /// take the threshold minimizing |frr - far|.
    fn brute_force_eer(trials: &[ScoredTrial]) -> f64 {
        let tt: Vec<f64> = trials
            .iter()
            .filter(|t| t.label == TrialLabel::SameAuthor)
            .map(|t| t.score)
            .collect();
        let ft: Vec<f64> = trials
            .iter()
            .filter(|t| t.label == TrialLabel::DifferentAuthor)
            .map(|t| t.score)
            .collect();
        let mut best = (f64::INFINITY, 0.0);
        for trial in trials {
            let t = trial.score;
            let frr = tt.iter().filter(|&&s| s < t).count() as f64 / tt.len() as f64;
            let far = ft.iter().filter(|&&s| s >= t).count() as f64 / ft.len() as f64;
            let gap = (frr - far).abs();
            if gap < best.0 {
                best = (gap, (frr + far) / 2.0);
            }
        }
        best.1
    }

    #[test]
    fn eer_matches_brute_force_within_one_step() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for round in 0..50 {
            let n_tt = rng.random_range(5..60);
            let n_ft = rng.random_range(5..60);
            let tt: Vec<f64> = (0..n_tt)
                .map(|_| (rng.random::<f64>() * 0.7 + 0.3).min(1.0))
                .collect();
            let ft: Vec<f64> = (0..n_ft)
                .map(|_| (rng.random::<f64>() * 0.7).max(0.0))
                .collect();
            let trials = mixed(&tt, &ft);
            let op = compute_eer(&compute_det(&trials).unwrap()).unwrap();
            let reference = brute_force_eer(&trials);
            let step = (1.0 / n_tt as f64).max(1.0 / n_ft as f64);
            assert!(
                (op.eer - reference).abs() <= step,
                "round {round}: eer {} vs brute-force {reference}, step {step}",
                op.eer
            );
        }
    }

    proptest! {
        #[test]
        fn det_is_monotone(
            tt in proptest::collection::vec(0.0f64..=1.0, 1..40),
            ft in proptest::collection::vec(0.0f64..=1.0, 1..40),
        ) {
            let curve = compute_det(&mixed(&tt, &ft)).unwrap();
            for pair in curve.points.windows(2) {
                prop_assert!(pair[0].threshold < pair[1].threshold);
                prop_assert!(pair[0].frr <= pair[1].frr);
                prop_assert!(pair[0].far >= pair[1].far);
            }
            let op = compute_eer(&curve).unwrap();
            prop_assert!((0.0..=1.0).contains(&op.eer));
            let slack = (1.0 / tt.len() as f64).max(1.0 / ft.len() as f64);
            prop_assert!((op.frr_at - op.far_at).abs() <= slack);
        }

        #[test]
        fn probit_is_odd_and_monotone(p in 0.0001f64..0.9999) {
            let x = probit(p).unwrap();
            let mirrored = probit(1.0 - p).unwrap();
            prop_assert!((x + mirrored).abs() < 1e-9);
            let x2 = probit((p + 0.0001).min(0.99995)).unwrap();
            prop_assert!(x2 >= x);
        }
    }
}
