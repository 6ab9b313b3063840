//! Evaluation metrics: image error (RMSE/PSNR, whole-image and
//! shadow-region), mask error (balanced error rate, whole-image and
//! shadow-region), mask-quality morphology scores, and the box/shape
//! transferability metrics, plus per-dataset aggregation and reporting.
//!
//! Image metrics are computed on the 0..255 scale.

pub mod morphology;

pub use morphology::{connected_components, d_frag, d_frag_with_threshold, d_hole, d_hole_with_threshold};

use crate::geometry::{bbox_from_mask, crop_resize, BBox, Mask};
use crate::synthdata::Image;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("evaluation region is empty")]
    EmptyRegion,
    #[error("mask is degenerate for this metric: {0}")]
    DegenerateMask(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
}

/// Region selector for the image and mask metrics.
#[derive(Debug, Clone, Copy)]
pub enum Region<'a> {
    Whole,
    Mask(&'a Mask),
}

fn check_images(a: &Image, b: &Image) -> Result<(), MetricsError> {
    if a.resolution() != b.resolution() {
        return Err(MetricsError::ShapeMismatch(format!(
            "{:?} vs {:?}",
            a.resolution(),
            b.resolution()
        )));
    }
    Ok(())
}

/// Root-mean-square error on the 0..255 scale, over the whole image or over
/// pixels selected by a region mask.
pub fn rmse(pred: &Image, gt: &Image, region: Region) -> Result<f64, MetricsError> {
    check_images(pred, gt)?;
    let (h, w) = pred.resolution();
    let mut acc = 0.0f64;
    let mut count = 0usize;
    for r in 0..h {
        for c in 0..w {
            let keep = match region {
                Region::Whole => true,
                Region::Mask(m) => {
                    if m.resolution() != (h, w) {
                        return Err(MetricsError::ShapeMismatch(
                            "region mask resolution".into(),
                        ));
                    }
                    m.data()[(r, c)] > 0.5
                }
            };
            if !keep {
                continue;
            }
            for ch in 0..3 {
                let d = (pred.data()[(r, c, ch)] as f64 - gt.data()[(r, c, ch)] as f64) * 255.0;
                acc += d * d;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(MetricsError::EmptyRegion);
    }
    Ok((acc / count as f64).sqrt())
}

/// Peak signal-to-noise ratio in dB over the selected region;
/// `f64::INFINITY` on an exact match.
pub fn psnr(pred: &Image, gt: &Image, region: Region) -> Result<f64, MetricsError> {
    let e = rmse(pred, gt, region)?;
    if e == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(20.0 * (255.0 / e).log10())
    }
}

/// Balanced error rate outcome; `positive_only_fallback` is set when the
/// region contained no negatives and the score degraded to the
/// positive-class error rate.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BerOutcome {
    pub value: f64,
    pub positive_only_fallback: bool,
}

/// Balanced error rate (percent) between binarized masks.
///
/// Whole-image mode needs both classes present in the ground truth. In
/// region mode a region holding only positives falls back to the
/// positive-class error rate `100 * FN / N_pos`.
pub fn ber(pred: &Mask, gt: &Mask, region: Region) -> Result<BerOutcome, MetricsError> {
    let res = pred.resolution();
    if gt.resolution() != res {
        return Err(MetricsError::ShapeMismatch("gt mask resolution".into()));
    }
    let mut tp = 0usize;
    let mut tn = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for ((r, c), p) in pred.data().indexed_iter() {
        let keep = match region {
            Region::Whole => true,
            Region::Mask(m) => {
                if m.resolution() != res {
                    return Err(MetricsError::ShapeMismatch("region mask resolution".into()));
                }
                m.data()[(r, c)] > 0.5
            }
        };
        if !keep {
            continue;
        }
        let p = *p > 0.5;
        let g = gt.data()[(r, c)] > 0.5;
        match (p, g) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
        }
    }
    let n_pos = tp + fn_;
    let n_neg = tn + fp;
    match region {
        Region::Whole => {
            if n_pos == 0 || n_neg == 0 {
                return Err(MetricsError::DegenerateMask(
                    "whole-image balanced error rate needs both classes".into(),
                ));
            }
            let tpr = tp as f64 / n_pos as f64;
            let tnr = tn as f64 / n_neg as f64;
            Ok(BerOutcome {
                value: 100.0 * (1.0 - 0.5 * (tpr + tnr)),
                positive_only_fallback: false,
            })
        }
        Region::Mask(_) => {
            if n_pos == 0 {
                return Err(MetricsError::EmptyRegion);
            }
            if n_neg == 0 {
                Ok(BerOutcome {
                    value: 100.0 * fn_ as f64 / n_pos as f64,
                    positive_only_fallback: true,
                })
            } else {
                let tpr = tp as f64 / n_pos as f64;
                let tnr = tn as f64 / n_neg as f64;
                Ok(BerOutcome {
                    value: 100.0 * (1.0 - 0.5 * (tpr + tnr)),
                    positive_only_fallback: false,
                })
            }
        }
    }
}

/// Intersection-over-union of two boxes.
pub fn box_iou(pred: &BBox, gt: &BBox) -> f64 {
    pred.iou(gt)
}

/// Mean absolute difference between the two masks after each is cropped by
/// its own tight box and resized to 32x32. An empty prediction borrows the
/// ground-truth box so the score stays defined.
pub fn shape_l1(pred: &Mask, gt: &Mask) -> Result<f64, MetricsError> {
    let gt_box = bbox_from_mask(gt, 0.5)?;
    let pred_box = bbox_from_mask(pred, 0.5).unwrap_or(gt_box);
    let a = crop_resize(pred, &pred_box, 32)?;
    let b = crop_resize(gt, &gt_box, 32)?;
    let mut acc = 0.0f64;
    for (x, y) in a.data().iter().zip(b.data().iter()) {
        acc += (*x as f64 - *y as f64).abs();
    }
    Ok(acc / (32.0 * 32.0))
}

/// Ground truth needed to score one tuple.
#[derive(Debug, Clone)]
pub struct EvalTarget {
    pub id: String,
    pub gt_image: Image,
    pub gt_mask: Mask,
    pub gt_box: BBox,
}

/// Model outputs for one tuple.
#[derive(Debug, Clone)]
pub struct EvalPrediction {
    pub image: Image,
    pub mask_refined: Mask,
    pub mask_rough: Mask,
    pub box_pred: BBox,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TupleMetrics {
    pub id: String,
    pub rmse: f64,
    pub s_rmse: f64,
    /// `None` means an exact match (infinite PSNR).
    pub psnr: Option<f64>,
    pub s_psnr: Option<f64>,
    pub ber: f64,
    pub s_ber: f64,
    pub s_ber_fallback: bool,
    pub d_hole: f64,
    pub d_frag: f64,
    pub box_iou: f64,
    pub shape_l1: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub rmse: f64,
    pub s_rmse: f64,
    pub psnr: Option<f64>,
    pub s_psnr: Option<f64>,
    pub ber: f64,
    pub s_ber: f64,
    pub d_hole: f64,
    pub d_frag: f64,
    pub box_iou: f64,
    pub shape_l1: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub count: usize,
    pub per_tuple: Vec<TupleMetrics>,
    pub aggregate: AggregateMetrics,
    /// Free-form echo of the evaluation configuration.
    pub config: serde_json::Value,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut acc = 0.0;
    let mut n = 0usize;
    for v in values {
        acc += v;
        n += 1;
    }
    acc / n as f64
}

fn mean_psnr(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let mut acc = 0.0;
    let mut n = 0usize;
    for v in values {
        match v {
            Some(x) => acc += x,
            None => return None,
        }
        n += 1;
    }
    Some(acc / n as f64)
}

fn finite_psnr(v: f64) -> Option<f64> {
    if v.is_finite() {
        Some(v)
    } else {
        None
    }
}

/// Scores one prediction against its target.
pub fn evaluate_tuple(
    target: &EvalTarget,
    pred: &EvalPrediction,
) -> Result<TupleMetrics, MetricsError> {
    let region = Region::Mask(&target.gt_mask);
    let pred_mask = pred.mask_refined.binarize(0.5);
    let ber_whole = ber(&pred_mask, &target.gt_mask, Region::Whole)?;
    let ber_region = ber(&pred_mask, &target.gt_mask, region)?;
    Ok(TupleMetrics {
        id: target.id.clone(),
        rmse: rmse(&pred.image, &target.gt_image, Region::Whole)?,
        s_rmse: rmse(&pred.image, &target.gt_image, region)?,
        psnr: finite_psnr(psnr(&pred.image, &target.gt_image, Region::Whole)?),
        s_psnr: finite_psnr(psnr(&pred.image, &target.gt_image, region)?),
        ber: ber_whole.value,
        s_ber: ber_region.value,
        s_ber_fallback: ber_region.positive_only_fallback,
        d_hole: d_hole(&pred_mask) as f64,
        d_frag: d_frag(&pred_mask) as f64,
        box_iou: box_iou(&pred.box_pred, &target.gt_box),
        shape_l1: shape_l1(&pred.mask_refined, &target.gt_mask)?,
    })
}

/// Scores a dataset and aggregates per-tuple values by arithmetic mean.
pub fn evaluate_dataset(
    cases: &[(EvalTarget, EvalPrediction)],
    config: serde_json::Value,
) -> Result<MetricsReport, MetricsError> {
    if cases.is_empty() {
        return Err(MetricsError::EmptyRegion);
    }
    let mut per_tuple = Vec::with_capacity(cases.len());
    for (target, pred) in cases {
        per_tuple.push(evaluate_tuple(target, pred)?);
    }
    let aggregate = AggregateMetrics {
        rmse: mean(per_tuple.iter().map(|t| t.rmse)),
        s_rmse: mean(per_tuple.iter().map(|t| t.s_rmse)),
        psnr: mean_psnr(per_tuple.iter().map(|t| t.psnr)),
        s_psnr: mean_psnr(per_tuple.iter().map(|t| t.s_psnr)),
        ber: mean(per_tuple.iter().map(|t| t.ber)),
        s_ber: mean(per_tuple.iter().map(|t| t.s_ber)),
        d_hole: mean(per_tuple.iter().map(|t| t.d_hole)),
        d_frag: mean(per_tuple.iter().map(|t| t.d_frag)),
        box_iou: mean(per_tuple.iter().map(|t| t.box_iou)),
        shape_l1: mean(per_tuple.iter().map(|t| t.shape_l1)),
    };
    Ok(MetricsReport {
        count: per_tuple.len(),
        per_tuple,
        aggregate,
        config,
    })
}

fn fmt_psnr(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.3}"),
        None => "inf".to_string(),
    }
}

/// Plain-text table with one row per labeled report, mirroring the usual
/// results-table layout.
pub fn render_table(rows: &[(String, &AggregateMetrics)]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<28} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
        "run", "RMSE", "S-RMSE", "PSNR", "S-PSNR", "BER", "S-BER", "d_hole", "d_frag", "boxIoU",
        "shapeL1"
    ));
    for (label, a) in rows {
        out.push_str(&format!(
            "{:<28} {:>8.3} {:>8.3} {:>8} {:>8} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>8.4} {:>8.4}\n",
            label,
            a.rmse,
            a.s_rmse,
            fmt_psnr(a.psnr),
            fmt_psnr(a.s_psnr),
            a.ber,
            a.s_ber,
            a.d_hole,
            a.d_frag,
            a.box_iou,
            a.shape_l1
        ));
    }
    out
}
