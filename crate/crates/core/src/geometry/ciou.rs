//! Complete-IoU loss between two boxes, with an analytic gradient.
//!
//! `loss = 1 - IoU + rho^2 / c^2 + alpha * v` where `rho` is the center
//! distance, `c` the diagonal of the smallest enclosing box,
//! `v = (4/pi^2) * (atan(w_gt/h_gt) - atan(w/h))^2` the aspect-ratio term and
//! `alpha = v / ((1 - IoU) + v)`. `alpha` is treated as a constant when
//! differentiating, following the usual convention for this loss.

use super::{BBox, GeometryError};

const FOUR_OVER_PI2: f64 = 4.0 / (std::f64::consts::PI * std::f64::consts::PI);

struct Parts {
    iou: f64,
    rho2: f64,
    c2: f64,
    v: f64,
    alpha: f64,
}

fn parts(pred: &BBox, gt: &BBox) -> Parts {
    let iw = (pred.right().min(gt.right()) - pred.left().max(gt.left())).max(0.0);
    let ih = (pred.bottom().min(gt.bottom()) - pred.top().max(gt.top())).max(0.0);
    let inter = iw * ih;
    let union = pred.area() + gt.area() - inter;
    let iou = inter / union;

    let rho2 = (pred.x - gt.x).powi(2) + (pred.y - gt.y).powi(2);
    let cw = pred.right().max(gt.right()) - pred.left().min(gt.left());
    let ch = pred.bottom().max(gt.bottom()) - pred.top().min(gt.top());
    let c2 = cw * cw + ch * ch;

    let v = FOUR_OVER_PI2 * ((gt.w / gt.h).atan() - (pred.w / pred.h).atan()).powi(2);
    let denom = (1.0 - iou) + v;
    let alpha = if denom.abs() < 1e-12 { 0.0 } else { v / denom };
    Parts {
        iou,
        rho2,
        c2,
        v,
        alpha,
    }
}

/// Scalar CIoU loss; zero iff the boxes coincide.
pub fn ciou_loss(pred: &BBox, gt: &BBox) -> Result<f64, GeometryError> {
    if !pred.is_valid() {
        return Err(GeometryError::DegenerateBox(format!("pred: {pred:?}")));
    }
    if !gt.is_valid() {
        return Err(GeometryError::DegenerateBox(format!("gt: {gt:?}")));
    }
    let p = parts(pred, gt);
    Ok(1.0 - p.iou + p.rho2 / p.c2 + p.alpha * p.v)
}

/// CIoU loss plus its gradient with respect to `(pred.x, pred.y, pred.w, pred.h)`.
///
/// At tie configurations of the min/max terms the subgradient picks the
/// closed-side branch; those points form a measure-zero set.
pub fn ciou_loss_grad(pred: &BBox, gt: &BBox) -> Result<(f64, [f64; 4]), GeometryError> {
    let loss = ciou_loss(pred, gt)?;
    let p = parts(pred, gt);

    let iw = (pred.right().min(gt.right()) - pred.left().max(gt.left())).max(0.0);
    let ih = (pred.bottom().min(gt.bottom()) - pred.top().max(gt.top())).max(0.0);
    let inter = iw * ih;
    let union = pred.area() + gt.area() - inter;

    // Intersection width/height partials. `a` marks the right edge coming
    // from the prediction, `b` the left edge.
    let (diw_dx, diw_dw) = if iw > 0.0 {
        let a = if pred.right() <= gt.right() { 1.0 } else { 0.0 };
        let b = if pred.left() >= gt.left() { 1.0 } else { 0.0 };
        (a - b, 0.5 * a + 0.5 * b)
    } else {
        (0.0, 0.0)
    };
    let (dih_dy, dih_dh) = if ih > 0.0 {
        let a = if pred.bottom() <= gt.bottom() { 1.0 } else { 0.0 };
        let b = if pred.top() >= gt.top() { 1.0 } else { 0.0 };
        (a - b, 0.5 * a + 0.5 * b)
    } else {
        (0.0, 0.0)
    };

    let dinter = [diw_dx * ih, dih_dy * iw, diw_dw * ih, dih_dh * iw];
    let dunion = [
        -dinter[0],
        -dinter[1],
        pred.h - dinter[2],
        pred.w - dinter[3],
    ];
    let mut diou = [0.0; 4];
    for i in 0..4 {
        diou[i] = (dinter[i] * union - inter * dunion[i]) / (union * union);
    }

    // rho^2 / c^2 term.
    let cw = pred.right().max(gt.right()) - pred.left().min(gt.left());
    let ch = pred.bottom().max(gt.bottom()) - pred.top().min(gt.top());
    let (dcw_dx, dcw_dw) = {
        let a = if pred.right() >= gt.right() { 1.0 } else { 0.0 };
        let b = if pred.left() <= gt.left() { 1.0 } else { 0.0 };
        (a - b, 0.5 * a + 0.5 * b)
    };
    let (dch_dy, dch_dh) = {
        let a = if pred.bottom() >= gt.bottom() { 1.0 } else { 0.0 };
        let b = if pred.top() <= gt.top() { 1.0 } else { 0.0 };
        (a - b, 0.5 * a + 0.5 * b)
    };
    let drho2 = [2.0 * (pred.x - gt.x), 2.0 * (pred.y - gt.y), 0.0, 0.0];
    let dc2 = [
        2.0 * cw * dcw_dx,
        2.0 * ch * dch_dy,
        2.0 * cw * dcw_dw,
        2.0 * ch * dch_dh,
    ];
    let mut ddist = [0.0; 4];
    for i in 0..4 {
        ddist[i] = (drho2[i] * p.c2 - p.rho2 * dc2[i]) / (p.c2 * p.c2);
    }

    // Aspect term, alpha held constant.
    let ratio = pred.w / pred.h;
    let datan = 1.0 / (1.0 + ratio * ratio);
    let gap = (gt.w / gt.h).atan() - ratio.atan();
    let dv_dw = FOUR_OVER_PI2 * 2.0 * gap * (-datan / pred.h);
    let dv_dh = FOUR_OVER_PI2 * 2.0 * gap * (datan * pred.w / (pred.h * pred.h));

    let grad = [
        -diou[0] + ddist[0],
        -diou[1] + ddist[1],
        -diou[2] + ddist[2] + p.alpha * dv_dw,
        -diou[3] + ddist[3] + p.alpha * dv_dh,
    ];
    Ok((loss, grad))
}
