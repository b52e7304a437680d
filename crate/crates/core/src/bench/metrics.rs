//! Distance precision, overlap success and their aggregates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::otb::{Attribute, SequenceSpec};
use crate::error::{Error, Result};
use crate::geometry::Rect;

/// Largest center-error threshold of the precision curve, in pixels.
pub const PRECISION_MAX: usize = 50;
/// Number of overlap thresholds `0, 0.05, …, 1`.
pub const SUCCESS_SAMPLES: usize = 21;

/// Intersection over union; `0` when the union is empty.
pub fn overlap(a: &Rect, b: &Rect) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Euclidean distance between box centers.
pub fn center_error(a: &Rect, b: &Rect) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    (ax - bx).hypot(ay - by)
}

pub fn success_threshold(i: usize) -> f64 {
    i as f64 / (SUCCESS_SAMPLES - 1) as f64
}

/// Fraction of frames with center error strictly below `t` pixels, for
/// `t = 0..=50`.
pub fn precision_curve(errors: &[f64]) -> Vec<f64> {
    (0..=PRECISION_MAX)
        .map(|t| fraction(errors, |e| e < t as f64))
        .collect()
}

/// Fraction of frames with overlap strictly above each threshold; at the top
/// threshold an exact match counts.
pub fn success_curve(overlaps: &[f64]) -> Vec<f64> {
    (0..SUCCESS_SAMPLES)
        .map(|i| {
            let t = success_threshold(i);
            if i + 1 == SUCCESS_SAMPLES {
                fraction(overlaps, |o| o >= t)
            } else {
                fraction(overlaps, |o| o > t)
            }
        })
        .collect()
}

fn fraction(values: &[f64], pred: impl Fn(f64) -> bool) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().filter(|&&v| pred(v)).count() as f64 / values.len() as f64
}

/// Curves and scores of one tracked sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub name: String,
    pub attributes: Vec<Attribute>,
    /// Frames with a valid ground truth.
    pub frames: usize,
    pub precision: Vec<f64>,
    pub success: Vec<f64>,
    pub dp20: f64,
    pub auc: f64,
    pub mean_overlap: f64,
    pub mean_center_error: f64,
}

/// Scores a trajectory against its ground truth. Both must use the same
/// coordinate convention; frames without valid ground truth are skipped.
pub fn evaluate(trajectory: &[Rect], spec: &SequenceSpec) -> Result<EvalResult> {
    if trajectory.len() != spec.groundtruth.len() {
        return Err(Error::Data(format!(
            "{}: trajectory has {} frames, ground truth {}",
            spec.name,
            trajectory.len(),
            spec.groundtruth.len()
        )));
    }
    let (errors, overlaps): (Vec<f64>, Vec<f64>) = trajectory
        .iter()
        .zip(&spec.groundtruth)
        .filter(|(_, gt)| gt.is_valid())
        .map(|(r, gt)| {
            if r.is_valid() {
                (center_error(r, gt), overlap(r, gt))
            } else {
                (f64::INFINITY, 0.0)
            }
        })
        .unzip();
    let precision = precision_curve(&errors);
    let success = success_curve(&overlaps);
    let n = overlaps.len().max(1) as f64;
    Ok(EvalResult {
        name: spec.name.clone(),
        attributes: spec.attributes.clone(),
        frames: overlaps.len(),
        dp20: precision[20],
        auc: success.iter().sum::<f64>() / SUCCESS_SAMPLES as f64,
        precision,
        success,
        mean_overlap: overlaps.iter().sum::<f64>() / n,
        mean_center_error: errors.iter().sum::<f64>() / n,
    })
}

/// Curves averaged over a group of sequences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub sequences: usize,
    pub precision: Vec<f64>,
    pub success: Vec<f64>,
    pub dp20: f64,
    pub auc: f64,
}

impl Summary {
    pub fn of<'a>(results: impl IntoIterator<Item = &'a EvalResult>) -> Summary {
        let mut precision = vec![0.0; PRECISION_MAX + 1];
        let mut success = vec![0.0; SUCCESS_SAMPLES];
        let mut n = 0usize;
        for r in results {
            precision
                .iter_mut()
                .zip(&r.precision)
                .for_each(|(a, b)| *a += b);
            success
                .iter_mut()
                .zip(&r.success)
                .for_each(|(a, b)| *a += b);
            n += 1;
        }
        let k = n.max(1) as f64;
        precision.iter_mut().for_each(|v| *v /= k);
        success.iter_mut().for_each(|v| *v /= k);
        Summary {
            sequences: n,
            dp20: precision[20],
            auc: success.iter().sum::<f64>() / SUCCESS_SAMPLES as f64,
            precision,
            success,
        }
    }
}

/// Per-sequence results with overall and per-attribute summaries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub overall: Summary,
    pub by_attribute: BTreeMap<Attribute, Summary>,
    pub sequences: Vec<EvalResult>,
}

/// Aggregates in the order given; results are sorted by name first so the
/// report does not depend on evaluation order.
pub fn aggregate(mut results: Vec<EvalResult>) -> BenchmarkReport {
    results.sort_by(|a, b| a.name.cmp(&b.name));
    let mut by_attribute = BTreeMap::new();
    for attr in Attribute::ALL {
        let group: Vec<&EvalResult> = results
            .iter()
            .filter(|r| r.attributes.contains(&attr))
            .collect();
        if !group.is_empty() {
            by_attribute.insert(attr, Summary::of(group));
        }
    }
    BenchmarkReport {
        overall: Summary::of(&results),
        by_attribute,
        sequences: results,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::otb::RectFormat;

    fn spec(gt: Vec<Rect>) -> SequenceSpec {
        SequenceSpec {
            name: "fixture".into(),
            frames: vec![],
            groundtruth: gt,
            attributes: vec![Attribute::SV],
            format: RectFormat::default(),
        }
    }

    #[test]
    fn overlap_examples() {
        let a = Rect::new(0.0, 0.0, 2.0, 2.0);
        assert_eq!(overlap(&a, &a), 1.0);
        assert_eq!(overlap(&a, &Rect::new(5.0, 5.0, 2.0, 2.0)), 0.0);
        assert!((overlap(&a, &Rect::new(1.0, 0.0, 2.0, 2.0)) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn center_error_examples() {
        let a = Rect::new(0.0, 0.0, 4.0, 4.0);
        let b = Rect::new(3.0, 4.0, 4.0, 4.0);
        assert_eq!(center_error(&a, &a), 0.0);
        assert_eq!(center_error(&a, &b), 5.0);
        assert_eq!(center_error(&b, &a), 5.0);
    }

    #[test]
    fn perfect_trajectory() {
        let gt: Vec<Rect> = (0..5)
            .map(|i| Rect::new(i as f64, 3.0, 10.0, 12.0))
            .collect();
        let r = evaluate(&gt, &spec(gt.clone())).unwrap();
        assert_eq!(r.dp20, 1.0);
        assert_eq!(r.auc, 1.0);
    }

    #[test]
    fn far_disjoint_trajectory() {
        let gt = vec![Rect::new(0.0, 0.0, 10.0, 10.0); 3];
        let tr = vec![Rect::new(200.0, 0.0, 10.0, 10.0); 3];
        let r = evaluate(&tr, &spec(gt)).unwrap();
        assert_eq!((r.dp20, r.auc), (0.0, 0.0));
    }

    #[test]
    fn four_frame_fixture() {
        let gt = vec![Rect::new(0.0, 0.0, 4.0, 4.0); 4];
        let tr = vec![
            Rect::new(0.0, 0.0, 4.0, 4.0),
            Rect::new(0.0, 0.0, 4.0, 2.0),
            Rect::new(0.0, 0.0, 2.0, 2.0),
            Rect::new(10.0, 10.0, 4.0, 4.0),
        ];
        let r = evaluate(&tr, &spec(gt)).unwrap();
        let mut expect = vec![0.75; 5];
        expect.extend([0.5; 5]);
        expect.extend([0.25; 11]);
        assert_eq!(r.success, expect);
        assert!((r.auc - 9.0 / 21.0).abs() < 1e-15);
    }

    #[test]
    fn nan_ground_truth_skipped() {
        let nan = Rect::new(f64::NAN, f64::NAN, f64::NAN, f64::NAN);
        let gt = vec![Rect::new(0.0, 0.0, 4.0, 4.0), nan];
        let tr = vec![
            Rect::new(0.0, 0.0, 4.0, 4.0),
            Rect::new(50.0, 50.0, 1.0, 1.0),
        ];
        let r = evaluate(&tr, &spec(gt)).unwrap();
        assert_eq!(r.frames, 1);
        assert_eq!(r.auc, 1.0);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(
            evaluate(&[], &spec(vec![Rect::new(0.0, 0.0, 1.0, 1.0)])),
            Err(Error::Data(_))
        ));
    }
}
