//! The four training losses and their unit-weight sum: box-regression CIoU,
//! L1 on the 32x32 shape, L1 on the full-resolution mask, and the masked MSE
//! on the filled image. Each loss exists twice: a plain scalar form used for
//! reporting and oracle checks, and a tensor form used inside the training
//! graph. Tests pin the two routes to each other.

use crate::geometry::{self, BBox, GeometryError, Mask};
use crate::network::{atan, clamp_finite, NetError};
use crate::synthdata::Image;
use candle_core::Tensor;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Candle(#[from] candle_core::Error),
}

/// Normalization of the reconstruction loss: averaged over every pixel (the
/// literal masked-MSE form) or over the shadow region only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RecNorm {
    #[default]
    Full,
    Region,
}

/// Per-term loss values; the total is their plain sum.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_reg: f64,
    pub l_shape: f64,
    pub l_mask: f64,
    pub l_rec: f64,
    pub l_total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.l_reg, self.l_shape, self.l_mask, self.l_rec, self.l_total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Box-regression loss: the CIoU of the decoded boxes.
pub fn loss_reg(b_pred: &BBox, b_gt: &BBox) -> Result<f64, LossError> {
    Ok(geometry::ciou_loss(b_pred, b_gt)?)
}

fn mean_abs_diff(a: &Mask, b: &Mask) -> Result<f64, LossError> {
    if a.resolution() != b.resolution() {
        return Err(LossError::ShapeMismatch(format!(
            "{:?} vs {:?}",
            a.resolution(),
            b.resolution()
        )));
    }
    let n = a.data().len() as f64;
    let mut acc = 0.0;
    for (x, y) in a.data().iter().zip(b.data().iter()) {
        acc += (*x as f64 - *y as f64).abs();
    }
    Ok(acc / n)
}

/// L1 between the predicted and ground-truth shape at the shape-head size.
pub fn loss_shape(m_s_pred: &Mask, m_s_gt: &Mask) -> Result<f64, LossError> {
    mean_abs_diff(m_s_pred, m_s_gt)
}

/// L1 between the refined mask and the ground-truth shadow mask.
pub fn loss_mask(m_pred: &Mask, m_gt: &Mask) -> Result<f64, LossError> {
    mean_abs_diff(m_pred, m_gt)
}

/// Masked MSE between the filled image and the ground truth: images are
/// multiplied by the shadow mask and compared; `Full` averages over every
/// pixel and channel, `Region` over shadow pixels only.
pub fn loss_rec(
    pred: &Image,
    gt: &Image,
    m_fs: &Mask,
    norm: RecNorm,
) -> Result<f64, LossError> {
    if pred.resolution() != gt.resolution() {
        return Err(LossError::ShapeMismatch("image resolutions".into()));
    }
    if m_fs.resolution() != pred.resolution() {
        return Err(LossError::ShapeMismatch("mask resolution".into()));
    }
    let (h, w) = pred.resolution();
    let mut acc = 0.0f64;
    let mut region = 0.0f64;
    for r in 0..h {
        for c in 0..w {
            let m = m_fs.data()[(r, c)] as f64;
            region += m;
            for ch in 0..3 {
                let d = m * (pred.data()[(r, c, ch)] as f64 - gt.data()[(r, c, ch)] as f64);
                acc += d * d;
            }
        }
    }
    let denom = match norm {
        RecNorm::Full => (h * w * 3) as f64,
        RecNorm::Region => (region * 3.0).max(1e-9),
    };
    Ok(acc / denom)
}

/// Unit-weight sum of the four parts.
pub fn loss_total(l_reg: f64, l_shape: f64, l_mask: f64, l_rec: f64) -> LossBreakdown {
    LossBreakdown {
        l_reg,
        l_shape,
        l_mask,
        l_rec,
        l_total: l_reg + l_shape + l_mask + l_rec,
    }
}

const FOUR_OVER_PI2: f64 = 4.0 / (std::f64::consts::PI * std::f64::consts::PI);

/// In-graph CIoU between predicted and target boxes, both `(B, 4)` in
/// center-size form, averaged over the batch. The aspect-ratio weight is
/// detached, matching the convention of the scalar route.
pub fn ciou_tensor(pred: &Tensor, gt: &Tensor) -> Result<Tensor, LossError> {
    let col = |t: &Tensor, i: usize| t.narrow(1, i, 1);
    let (xp, yp, wp, hp) = (col(pred, 0)?, col(pred, 1)?, col(pred, 2)?, col(pred, 3)?);
    let (xg, yg, wg, hg) = (col(gt, 0)?, col(gt, 1)?, col(gt, 2)?, col(gt, 3)?);

    let half = |t: &Tensor| t.affine(0.5, 0.0);
    let x1p = (&xp - half(&wp)?)?;
    let x2p = (&xp + half(&wp)?)?;
    let y1p = (&yp - half(&hp)?)?;
    let y2p = (&yp + half(&hp)?)?;
    let x1g = (&xg - half(&wg)?)?;
    let x2g = (&xg + half(&wg)?)?;
    let y1g = (&yg - half(&hg)?)?;
    let y2g = (&yg + half(&hg)?)?;

    let iw = (x2p.minimum(&x2g)? - x1p.maximum(&x1g)?)?.relu()?;
    let ih = (y2p.minimum(&y2g)? - y1p.maximum(&y1g)?)?.relu()?;
    let inter = (&iw * &ih)?;
    let union = ((wp.mul(&hp)? + wg.mul(&hg)?)? - &inter)?;
    let iou = inter.div(&union)?;

    let rho2 = ((&xp - &xg)?.sqr()? + (&yp - &yg)?.sqr()?)?;
    let cw = (x2p.maximum(&x2g)? - x1p.minimum(&x1g)?)?;
    let ch = (y2p.maximum(&y2g)? - y1p.minimum(&y1g)?)?;
    let c2 = (cw.sqr()? + ch.sqr()?)?;
    let dist = rho2.div(&c2)?;

    let gap = (atan(&wg.div(&hg)?)? - atan(&wp.div(&hp)?)?)?;
    let v = gap.sqr()?.affine(FOUR_OVER_PI2, 0.0)?;
    let one_minus_iou = iou.affine(-1.0, 1.0)?;
    let alpha_denom = ((&one_minus_iou + &v)? + 1e-9)?;
    let alpha = v.div(&alpha_denom)?.detach();

    let loss = ((&one_minus_iou + dist)? + alpha.mul(&v)?)?;
    Ok(loss.mean_all()?)
}

/// Ground-truth tensors for one batch, aligned with the forward outputs.
pub struct BatchTargets {
    /// `(B, 4)` shadow boxes in center-size form.
    pub b_s: Tensor,
    /// `(B, 1, S, S)` ground-truth shapes (shadow mask cropped by its box).
    pub m_s: Tensor,
    /// `(B, 1, H, W)` ground-truth shadow masks.
    pub m_fs: Tensor,
    /// `(B, 3, H, W)` ground-truth images.
    pub i_g: Tensor,
}

/// All four losses over a batch, in-graph. Returns the total as a scalar
/// tensor plus the detached breakdown.
pub fn tensor_losses(
    outputs: &crate::network::ForwardOutputs,
    targets: &BatchTargets,
    rec_norm: RecNorm,
) -> Result<(Tensor, LossBreakdown), LossError> {
    let l_reg = ciou_tensor(&outputs.b_s_hat, &targets.b_s)?;
    let l_shape = (outputs.m_s_hat.clone() - &targets.m_s)?
        .abs()?
        .mean_all()?;
    let l_mask = (outputs.m_fs_refined.clone() - &targets.m_fs)?
        .abs()?
        .mean_all()?;
    let masked = (outputs.i_g_hat.clone() - &targets.i_g)?.broadcast_mul(&targets.m_fs)?;
    let l_rec = match rec_norm {
        RecNorm::Full => masked.sqr()?.mean_all()?,
        RecNorm::Region => {
            let area = (targets.m_fs.sum_all()? * 3.0)?;
            let area = clamp_finite(&area, 1e-9, f32::MAX as f64).map_err(NetError::from)?;
            masked.sqr()?.sum_all()?.div(&area)?
        }
    };
    let total = (((&l_reg + &l_shape)? + &l_mask)? + &l_rec)?;
    let breakdown = loss_total(
        l_reg.to_scalar::<f32>()? as f64,
        l_shape.to_scalar::<f32>()? as f64,
        l_mask.to_scalar::<f32>()? as f64,
        l_rec.to_scalar::<f32>()? as f64,
    );
    Ok((total, breakdown))
}

/// Crops the shadow mask by the ground-truth shadow box to build the
/// shape-head target.
pub fn shape_target(m_fs: &Mask, b_s: &BBox, shape_size: usize) -> Result<Mask, LossError> {
    Ok(geometry::crop_resize(m_fs, b_s, shape_size)?)
}

/// Builds loss targets for a batch of tuples.
pub fn targets_from_tuples(
    tuples: &[&crate::synthdata::ShadowTuple],
    shape_size: usize,
    device: &candle_core::Device,
) -> Result<BatchTargets, LossError> {
    use crate::network::{images_to_tensor, masks_to_tensor};
    let b_s: Vec<f32> = tuples
        .iter()
        .flat_map(|t| {
            let b = t.meta.shadow_box;
            [b.x as f32, b.y as f32, b.w as f32, b.h as f32]
        })
        .collect();
    let b_s = Tensor::from_vec(b_s, (tuples.len(), 4), device)?;
    let shapes: Vec<Mask> = tuples
        .iter()
        .map(|t| shape_target(&t.m_fs, &t.meta.shadow_box, shape_size))
        .collect::<Result<_, _>>()?;
    let m_s = masks_to_tensor(&shapes.iter().collect::<Vec<_>>(), device)?;
    let m_fs = masks_to_tensor(&tuples.iter().map(|t| &t.m_fs).collect::<Vec<_>>(), device)?;
    let i_g = images_to_tensor(
        &tuples.iter().map(|t| &t.ground_truth).collect::<Vec<_>>(),
        device,
    )?;
    Ok(BatchTargets { b_s, m_s, m_fs, i_g })
}
