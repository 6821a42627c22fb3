//! Classification and localization scoring.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::scene::{Area, SourceClass};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub r#fn: usize,
    /// Set when any of the three ratios had an empty denominator (reported as 0).
    pub undefined: bool,
}

fn ratio(num: usize, den: usize, undefined: &mut bool) -> f64 {
    if den == 0 {
        *undefined = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class precision, recall and F1, in the order of `classes`.
pub fn classification_metrics<T: PartialEq + Copy>(
    labels: &[T],
    preds: &[T],
    classes: &[T],
) -> Result<Vec<ClassMetrics>> {
    if labels.len() != preds.len() {
        return Err(Error::LengthMismatch {
            labels: labels.len(),
            preds: preds.len(),
        });
    }
    Ok(classes
        .iter()
        .map(|&c| {
            let mut m = ClassMetrics::default();
            for (&l, &p) in labels.iter().zip(preds) {
                match (l == c, p == c) {
                    (true, true) => m.tp += 1,
                    (false, true) => m.fp += 1,
                    (true, false) => m.r#fn += 1,
                    (false, false) => {}
                }
            }
            let mut undefined = false;
            m.precision = ratio(m.tp, m.tp + m.fp, &mut undefined);
            m.recall = ratio(m.tp, m.tp + m.r#fn, &mut undefined);
            let s = m.precision + m.recall;
            m.f1 = if s > 0.0 {
                2.0 * m.precision * m.recall / s
            } else {
                undefined = true;
                0.0
            };
            m.undefined = undefined;
            m
        })
        .collect())
}

/// Counts behind the false-alarm rate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FarCounts {
    pub fp_all: usize,
    pub tot_non_active: usize,
}

/// Fraction of non-active ground-truth samples predicted as any active class.
pub fn far<T: Copy>(labels: &[T], preds: &[T], is_active: impl Fn(T) -> bool) -> Result<f64> {
    let c = far_counts(labels, preds, is_active)?;
    Ok(c.fp_all as f64 / c.tot_non_active as f64)
}

pub fn far_counts<T: Copy>(
    labels: &[T],
    preds: &[T],
    is_active: impl Fn(T) -> bool,
) -> Result<FarCounts> {
    if labels.len() != preds.len() {
        return Err(Error::LengthMismatch {
            labels: labels.len(),
            preds: preds.len(),
        });
    }
    let mut c = FarCounts::default();
    for (&l, &p) in labels.iter().zip(preds) {
        if !is_active(l) {
            c.tot_non_active += 1;
            if is_active(p) {
                c.fp_all += 1;
            }
        }
    }
    if c.tot_non_active == 0 {
        return Err(Error::NoNonActiveSamples);
    }
    Ok(c)
}

/// Euclidean localization error in metres.
pub fn rmse(pred: Point2, truth: Point2) -> f64 {
    pred.distance(truth)
}

/// `(F1 + (1 − FAR) + (1 − RMSE/len_area)) / 3`, len_area being the area diagonal.
pub fn selc_score(mean_f1: f64, far: f64, rmse: f64, area: Area) -> Result<f64> {
    if !(area.width > 0.0 && area.height > 0.0) {
        return Err(Error::InvalidArea(area.to_string()));
    }
    Ok((mean_f1 + (1.0 - far) + (1.0 - rmse / area.diagonal())) / 3.0)
}

/// Ground truth for one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub scene_id: String,
    pub area: Area,
    pub class: SourceClass,
    /// Target position; `None` for interfering-only scenes.
    pub position: Option<Point2>,
}

/// One system output for one scene; either part may be missing.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub scene_id: String,
    pub class: Option<SourceClass>,
    pub position: Option<Point2>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneError {
    pub scene_id: String,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaReport {
    pub area: Area,
    pub scenes: usize,
    pub rmse: Option<f64>,
    pub selc_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub per_class: BTreeMap<String, ClassMetrics>,
    pub mean_f1: f64,
    pub far: Option<f64>,
    pub far_counts: FarCounts,
    pub misclassified: usize,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classification: Option<ClassificationReport>,
    pub rmse_per_scene: Vec<SceneError>,
    /// Mean of the per-scene errors.
    pub rmse: Option<f64>,
    pub selc_score: Option<f64>,
    pub per_area: Vec<AreaReport>,
    /// Active scenes without a position estimate.
    pub missing_estimates: usize,
}

/// Scores predictions against ground truth.
///
/// Classification is scored on scenes that have a predicted class (all
/// four classes, interfering being the non-active one). Localization is
/// scored only on scenes whose true class is active. The SELC score needs
/// both, and falls back to F1 = 1 and FAR = 0 when no classes were
/// predicted.
pub fn evaluate(truths: &[Truth], preds: &[Prediction]) -> Result<EvalReport> {
    let by_id: BTreeMap<&str, &Prediction> =
        preds.iter().map(|p| (p.scene_id.as_str(), p)).collect();

    let mut labels = Vec::new();
    let mut predicted = Vec::new();
    let mut errors = Vec::new();
    let mut missing = 0;
    for t in truths {
        let Some(p) = by_id.get(t.scene_id.as_str()) else {
            if t.class.is_active() {
                missing += 1;
            }
            continue;
        };
        if let Some(c) = p.class {
            labels.push(t.class);
            predicted.push(c);
        }
        if let (true, Some(truth)) = (t.class.is_active(), t.position) {
            match p.position {
                Some(est) => errors.push((t, rmse(est, truth))),
                None => missing += 1,
            }
        }
    }

    let classification = if labels.is_empty() {
        None
    } else {
        let per = classification_metrics(&labels, &predicted, &SourceClass::ALL)?;
        let mean_f1 = per.iter().map(|m| m.f1).sum::<f64>() / per.len() as f64;
        let counts = far_counts(&labels, &predicted, SourceClass::is_active).ok();
        Some(ClassificationReport {
            per_class: SourceClass::ALL
                .iter()
                .zip(&per)
                .map(|(c, m)| (c.name().to_string(), *m))
                .collect(),
            mean_f1,
            far: counts.map(|c| c.fp_all as f64 / c.tot_non_active as f64),
            far_counts: counts.unwrap_or_default(),
            misclassified: labels.iter().zip(&predicted).filter(|(l, p)| l != p).count(),
            samples: labels.len(),
        })
    };
    let (f1, far_value) = match &classification {
        Some(c) => (c.mean_f1, c.far.unwrap_or(0.0)),
        None => (1.0, 0.0),
    };

    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let all: Vec<f64> = errors.iter().map(|(_, e)| *e).collect();
    let rmse_mean = mean(&all);

    let mut areas: Vec<Area> = Vec::new();
    for (t, _) in &errors {
        if !areas.contains(&t.area) {
            areas.push(t.area);
        }
    }
    areas.sort_by(|a, b| a.width.total_cmp(&b.width).then(a.height.total_cmp(&b.height)));
    let per_area = areas
        .iter()
        .map(|&area| {
            let v: Vec<f64> = errors
                .iter()
                .filter(|(t, _)| t.area == area)
                .map(|(_, e)| *e)
                .collect();
            let r = mean(&v);
            Ok(AreaReport {
                area,
                scenes: v.len(),
                rmse: r,
                selc_score: r.map(|r| selc_score(f1, far_value, r, area)).transpose()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let selc = if per_area.len() == 1 { per_area[0].selc_score } else { None };

    Ok(EvalReport {
        classification,
        rmse_per_scene: errors
            .iter()
            .map(|(t, e)| SceneError {
                scene_id: t.scene_id.clone(),
                rmse: *e,
            })
            .collect(),
        rmse: rmse_mean,
        selc_score: selc,
        per_area,
        missing_estimates: missing,
    })
}
