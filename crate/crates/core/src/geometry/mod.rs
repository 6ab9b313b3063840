//! Box arithmetic and crop/place operators.
//!
//! Coordinate convention used everywhere in this crate: pixel `(row r, col c)`
//! has its center at continuous coordinates `(x = c, y = r)` and occupies the
//! square `[c - 0.5, c + 0.5] x [r - 0.5, r + 0.5]`. A box is stored in
//! center-size form and spans `[x - w/2, x + w/2] x [y - h/2, y + h/2]`.

mod ciou;

pub use ciou::{ciou_loss, ciou_loss_grad};

use ndarray::{Array2, ArrayView2};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("mask has no pixel above threshold")]
    EmptyMask,
    #[error("degenerate box: {0}")]
    DegenerateBox(String),
    #[error("box does not intersect the raster")]
    OutOfFrame,
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
}

/// Axis-aligned bounding box in center-size form, pixel units.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn is_valid(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.w.is_finite()
            && self.h.is_finite()
            && self.w > 0.0
            && self.h > 0.0
    }

    fn validate(&self, what: &str) -> Result<(), GeometryError> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(GeometryError::DegenerateBox(format!("{what}: {self:?}")))
        }
    }

    /// Left edge of the box interval.
    pub fn left(&self) -> f64 {
        self.x - self.w / 2.0
    }

    pub fn right(&self) -> f64 {
        self.x + self.w / 2.0
    }

    pub fn top(&self) -> f64 {
        self.y - self.h / 2.0
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h / 2.0
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Plain intersection-over-union of the two box intervals.
    pub fn iou(&self, other: &BBox) -> f64 {
        let iw = (self.right().min(other.right()) - self.left().max(other.left())).max(0.0);
        let ih = (self.bottom().min(other.bottom()) - self.top().max(other.top())).max(0.0);
        let inter = iw * ih;
        let union = self.area() + other.area() - inter;
        if union > 0.0 {
            inter / union
        } else {
            0.0
        }
    }
}

/// Normalized regression quadruplet from an object box to its shadow box:
/// offsets relative to the object size plus log size ratios.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BoxRegression {
    pub rx: f64,
    pub ry: f64,
    pub rw: f64,
    pub rh: f64,
}

impl BoxRegression {
    pub fn new(rx: f64, ry: f64, rw: f64, rh: f64) -> Self {
        Self { rx, ry, rw, rh }
    }

    pub fn zero() -> Self {
        Self::new(0.0, 0.0, 0.0, 0.0)
    }
}

/// Single-channel float raster with all values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    data: Array2<f32>,
}

impl Mask {
    pub fn new(data: Array2<f32>) -> Result<Self, GeometryError> {
        if data.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(GeometryError::DegenerateBox(
                "mask values must be finite and in [0, 1]".to_string(),
            ));
        }
        Ok(Self { data })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Self {
            data: Array2::zeros((h, w)),
        }
    }

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        Self {
            data: Array2::from_shape_fn((h, w), |(r, c)| f(r, c).clamp(0.0, 1.0)),
        }
    }

    pub fn data(&self) -> &Array2<f32> {
        &self.data
    }

    pub fn view(&self) -> ArrayView2<'_, f32> {
        self.data.view()
    }

    pub fn into_data(self) -> Array2<f32> {
        self.data
    }

    /// `(rows, cols)`.
    pub fn resolution(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn count_above(&self, threshold: f32) -> usize {
        self.data.iter().filter(|v| **v > threshold).count()
    }

    pub fn binarize(&self, threshold: f32) -> Mask {
        Mask {
            data: self.data.mapv(|v| if v > threshold { 1.0 } else { 0.0 }),
        }
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|v| *v == 0.0 || *v == 1.0)
    }

    /// Pixel-wise union, keeping the max of the two rasters.
    pub fn union(&self, other: &Mask) -> Result<Mask, GeometryError> {
        if self.resolution() != other.resolution() {
            return Err(GeometryError::ShapeMismatch {
                expected: self.resolution(),
                got: other.resolution(),
            });
        }
        let mut data = self.data.clone();
        data.zip_mut_with(&other.data, |a, b| *a = a.max(*b));
        Ok(Mask { data })
    }

    /// Fraction of this mask's above-threshold pixels that are also above
    /// threshold in `other`. Zero when this mask is empty.
    pub fn overlap_fraction(&self, other: &Mask, threshold: f32) -> f64 {
        let mut own = 0usize;
        let mut shared = 0usize;
        for (a, b) in self.data.iter().zip(other.data.iter()) {
            if *a > threshold {
                own += 1;
                if *b > threshold {
                    shared += 1;
                }
            }
        }
        if own == 0 {
            0.0
        } else {
            shared as f64 / own as f64
        }
    }
}

/// Tight axis-aligned box around all pixels strictly above `threshold`.
pub fn bbox_from_mask(mask: &Mask, threshold: f32) -> Result<BBox, GeometryError> {
    let mut rmin = usize::MAX;
    let mut rmax = 0usize;
    let mut cmin = usize::MAX;
    let mut cmax = 0usize;
    let mut any = false;
    for ((r, c), v) in mask.data.indexed_iter() {
        if *v > threshold {
            any = true;
            rmin = rmin.min(r);
            rmax = rmax.max(r);
            cmin = cmin.min(c);
            cmax = cmax.max(c);
        }
    }
    if !any {
        return Err(GeometryError::EmptyMask);
    }
    Ok(BBox::new(
        (cmin + cmax) as f64 / 2.0,
        (rmin + rmax) as f64 / 2.0,
        (cmax - cmin + 1) as f64,
        (rmax - rmin + 1) as f64,
    ))
}

/// Regression quadruplet mapping the object box onto the shadow box.
pub fn encode_regression(b_o: &BBox, b_s: &BBox) -> Result<BoxRegression, GeometryError> {
    b_o.validate("object box")?;
    b_s.validate("shadow box")?;
    Ok(BoxRegression {
        rx: (b_s.x - b_o.x) / b_o.w,
        ry: (b_s.y - b_o.y) / b_o.h,
        rw: (b_s.w / b_o.w).ln(),
        rh: (b_s.h / b_o.h).ln(),
    })
}

/// Inverse of [`encode_regression`]. The output width and height are clamped
/// to at least one pixel, so extreme regressions stay usable.
pub fn decode_regression(b_o: &BBox, r: &BoxRegression) -> BBox {
    BBox {
        x: b_o.x + r.rx * b_o.w,
        y: b_o.y + r.ry * b_o.h,
        w: (b_o.w * r.rw.exp()).max(1.0),
        h: (b_o.h * r.rh.exp()).max(1.0),
    }
}

/// Bilinear sample of a raster at continuous coordinates, zero outside.
fn sample_zero(data: &ArrayView2<f32>, x: f64, y: f64) -> f64 {
    let (h, w) = data.dim();
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let mut acc = 0.0f64;
    for (dy, wy) in [(0i64, 1.0 - fy), (1, fy)] {
        for (dx, wx) in [(0i64, 1.0 - fx), (1, fx)] {
            let yy = y0 as i64 + dy;
            let xx = x0 as i64 + dx;
            if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                acc += wy * wx * data[(yy as usize, xx as usize)] as f64;
            }
        }
    }
    acc
}

/// Bilinear sample with coordinates clamped to the raster interior.
fn sample_clamped(data: &ArrayView2<f32>, x: f64, y: f64) -> f64 {
    let (h, w) = data.dim();
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    sample_zero(data, x, y)
}

/// Crops the box region out of a raster and resizes it to
/// `out_size x out_size` with bilinear sampling. Parts of the box that fall
/// outside the raster read as zero.
pub fn crop_resize(raster: &Mask, b: &BBox, out_size: usize) -> Result<Mask, GeometryError> {
    b.validate("crop box")?;
    if out_size == 0 {
        return Err(GeometryError::DegenerateBox("out_size must be >= 1".into()));
    }
    let (h, w) = raster.resolution();
    let frame_x = (-0.5, w as f64 - 0.5);
    let frame_y = (-0.5, h as f64 - 0.5);
    if b.right() < frame_x.0 || b.left() > frame_x.1 || b.bottom() < frame_y.0 || b.top() > frame_y.1
    {
        return Err(GeometryError::OutOfFrame);
    }
    let view = raster.view();
    let s = out_size as f64;
    let data = Array2::from_shape_fn((out_size, out_size), |(i, j)| {
        let sx = b.left() + (j as f64 + 0.5) * b.w / s;
        let sy = b.top() + (i as f64 + 0.5) * b.h / s;
        sample_zero(&view, sx, sy).clamp(0.0, 1.0) as f32
    });
    Ok(Mask { data })
}

/// Canvas pixels whose centers fall inside the half-open interval
/// `[lo, lo + len)`, clipped to `0..limit`.
pub(crate) fn inside_range(lo: f64, len: f64, limit: usize) -> std::ops::Range<usize> {
    let first = lo.ceil().max(0.0) as usize;
    let last_exclusive = (lo + len).ceil().min(limit as f64).max(0.0) as usize;
    first.min(limit)..last_exclusive
}

/// Places a square patch into the box region of a fresh canvas: the patch is
/// resized to the box size, written to pixels whose centers fall inside the
/// box, and everything else stays zero. Pixels of the box outside the canvas
/// are discarded.
pub fn place_inverse(patch: &Mask, b: &BBox, canvas: (usize, usize)) -> Mask {
    let (h, w) = canvas;
    let mut out = Array2::zeros((h, w));
    if !b.is_valid() {
        return Mask { data: out };
    }
    let (ph, pw) = patch.resolution();
    let view = patch.view();
    let rows = inside_range(b.top(), b.h, h);
    let cols = inside_range(b.left(), b.w, w);
    for r in rows {
        let v = (r as f64 - b.top()) * ph as f64 / b.h - 0.5;
        for c in cols.clone() {
            let u = (c as f64 - b.left()) * pw as f64 / b.w - 0.5;
            out[(r, c)] = sample_clamped(&view, u, v).clamp(0.0, 1.0) as f32;
        }
    }
    Mask { data: out }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bbox_from_single_pixel() {
        let mut m = Mask::zeros(256, 256);
        m.data[(10, 20)] = 1.0;
        let b = bbox_from_mask(&m, 0.5).unwrap();
        assert_eq!((b.x, b.y, b.w, b.h), (20.0, 10.0, 1.0, 1.0));
    }

    #[test]
    fn bbox_from_full_frame() {
        let m = Mask::from_fn(4, 4, |_, _| 1.0);
        let b = bbox_from_mask(&m, 0.5).unwrap();
        assert_eq!((b.x, b.y, b.w, b.h), (1.5, 1.5, 4.0, 4.0));
    }

    #[test]
    fn bbox_empty_mask_errors() {
        let m = Mask::zeros(8, 8);
        assert!(matches!(
            bbox_from_mask(&m, 0.5),
            Err(GeometryError::EmptyMask)
        ));
    }

    #[test]
    fn bbox_matches_exhaustive_scan_on_random_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let m = Mask::from_fn(32, 32, |_, _| if rng.gen_bool(0.2) { 1.0 } else { 0.0 });
            if m.count_above(0.5) == 0 {
                continue;
            }
            let b = bbox_from_mask(&m, 0.5).unwrap();
            // Oracle: every above-threshold pixel center lies inside the box,
            // and each box edge is touched by at least one pixel.
            let (l, r, t, bo) = (b.left(), b.right(), b.top(), b.bottom());
            let mut touch_l = false;
            let mut touch_r = false;
            let mut touch_t = false;
            let mut touch_b = false;
            for ((row, col), v) in m.data().indexed_iter() {
                if *v > 0.5 {
                    let (x, y) = (col as f64, row as f64);
                    assert!(x > l && x < r && y > t && y < bo);
                    touch_l |= (x - 0.5 - l).abs() < 1e-9;
                    touch_r |= (x + 0.5 - r).abs() < 1e-9;
                    touch_t |= (y - 0.5 - t).abs() < 1e-9;
                    touch_b |= (y + 0.5 - bo).abs() < 1e-9;
                }
            }
            assert!(touch_l && touch_r && touch_t && touch_b);
        }
    }

    #[test]
    fn encode_identity_is_zero() {
        let b = BBox::new(10.0, 20.0, 5.0, 7.0);
        let r = encode_regression(&b, &b).unwrap();
        assert_eq!(r, BoxRegression::zero());
    }

    #[test]
    fn encode_hand_example() {
        let b_o = BBox::new(100.0, 100.0, 50.0, 40.0);
        let b_s = BBox::new(110.0, 120.0, 100.0, 40.0);
        let r = encode_regression(&b_o, &b_s).unwrap();
        assert_abs_diff_eq!(r.rx, 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(r.ry, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(r.rw, 2.0f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(r.rh, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn decode_hand_example() {
        let b_o = BBox::new(100.0, 100.0, 50.0, 40.0);
        let r = BoxRegression::new(0.2, 0.5, 2.0f64.ln(), 0.0);
        let b = decode_regression(&b_o, &r);
        assert_abs_diff_eq!(b.x, 110.0, epsilon = 1e-9);
        assert_abs_diff_eq!(b.y, 120.0, epsilon = 1e-9);
        assert_abs_diff_eq!(b.w, 100.0, epsilon = 1e-9);
        assert_abs_diff_eq!(b.h, 40.0, epsilon = 1e-9);
    }

    #[test]
    fn decode_identity_and_clamp() {
        let b_o = BBox::new(100.0, 100.0, 50.0, 40.0);
        assert_eq!(decode_regression(&b_o, &BoxRegression::zero()), b_o);
        let r = BoxRegression::new(0.0, 0.0, -20.0, 0.0);
        let b = decode_regression(&b_o, &r);
        assert_eq!(b.w, 1.0);
        assert_eq!(b.h, 40.0);
    }

    #[test]
    fn encode_degenerate_errors() {
        let good = BBox::new(0.0, 0.0, 1.0, 1.0);
        let bad = BBox::new(0.0, 0.0, 0.0, 1.0);
        assert!(encode_regression(&good, &bad).is_err());
        assert!(encode_regression(&bad, &good).is_err());
    }

    fn random_box(rng: &mut ChaCha8Rng) -> BBox {
        BBox::new(
            rng.gen_range(-50.0..300.0),
            rng.gen_range(-50.0..300.0),
            rng.gen_range(1.0..120.0),
            rng.gen_range(1.0..120.0),
        )
    }

    #[test]
    fn encode_decode_round_trip_1000() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..1000 {
            let b_o = random_box(&mut rng);
            let b_s = random_box(&mut rng);
            let r = encode_regression(&b_o, &b_s).unwrap();
            let back = decode_regression(&b_o, &r);
            assert_abs_diff_eq!(back.x, b_s.x, epsilon = 1e-6);
            assert_abs_diff_eq!(back.y, b_s.y, epsilon = 1e-6);
            assert_abs_diff_eq!(back.w, b_s.w, epsilon = 1e-6);
            assert_abs_diff_eq!(back.h, b_s.h, epsilon = 1e-6);
        }
    }

    #[test]
    fn crop_constant_field_stays_constant() {
        let m = Mask::from_fn(64, 64, |_, _| 0.625);
        let b = BBox::new(30.0, 28.0, 17.3, 9.8);
        let crop = crop_resize(&m, &b, 32).unwrap();
        for v in crop.data().iter() {
            assert_abs_diff_eq!(*v, 0.625, epsilon = 1e-6);
        }
    }

    #[test]
    fn crop_axis_aligned_box_is_pixel_copy() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = Mask::from_fn(64, 64, |_, _| rng.gen_range(0.0..1.0));
        // Box covering pixel block rows 8..40, cols 16..48 exactly.
        let b = BBox::new(31.5, 23.5, 32.0, 32.0);
        let crop = crop_resize(&m, &b, 32).unwrap();
        for i in 0..32 {
            for j in 0..32 {
                assert_abs_diff_eq!(
                    crop.data()[(i, j)],
                    m.data()[(8 + i, 16 + j)],
                    epsilon = 1e-6
                );
            }
        }
    }

    #[test]
    fn crop_checkerboard_matches_scalar_bilinear_oracle() {
        let m = Mask::from_fn(32, 32, |r, c| ((r + c) % 2) as f32);
        let b = BBox::new(11.3, 14.8, 9.7, 13.1);
        let crop = crop_resize(&m, &b, 16).unwrap();
        // Independent oracle: explicit f64 bilinear interpolation.
        let oracle = |sx: f64, sy: f64| -> f64 {
            let x0 = sx.floor() as i64;
            let y0 = sy.floor() as i64;
            let fx = sx - x0 as f64;
            let fy = sy - y0 as f64;
            let at = |yy: i64, xx: i64| -> f64 {
                if yy < 0 || xx < 0 || yy >= 32 || xx >= 32 {
                    0.0
                } else {
                    ((yy + xx) % 2) as f64
                }
            };
            at(y0, x0) * (1.0 - fy) * (1.0 - fx)
                + at(y0, x0 + 1) * (1.0 - fy) * fx
                + at(y0 + 1, x0) * fy * (1.0 - fx)
                + at(y0 + 1, x0 + 1) * fy * fx
        };
        for i in 0..16 {
            for j in 0..16 {
                let sx = b.left() + (j as f64 + 0.5) * b.w / 16.0;
                let sy = b.top() + (i as f64 + 0.5) * b.h / 16.0;
                assert_abs_diff_eq!(crop.data()[(i, j)] as f64, oracle(sx, sy), epsilon = 1e-5);
            }
        }
    }

    #[test]
    fn crop_out_of_frame_errors() {
        let m = Mask::zeros(16, 16);
        let b = BBox::new(100.0, 100.0, 4.0, 4.0);
        assert!(matches!(
            crop_resize(&m, &b, 8),
            Err(GeometryError::OutOfFrame)
        ));
    }

    #[test]
    fn place_zero_patch_gives_zero_canvas() {
        let patch = Mask::zeros(32, 32);
        let b = BBox::new(40.0, 40.0, 20.0, 20.0);
        let out = place_inverse(&patch, &b, (128, 128));
        assert!(out.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn place_ones_fills_box_exactly() {
        let patch = Mask::from_fn(32, 32, |_, _| 1.0);
        let b = BBox::new(16.0, 16.0, 32.0, 32.0);
        let out = place_inverse(&patch, &b, (256, 256));
        // Membership oracle: pixel centers in [0, 32) on both axes.
        for ((r, c), v) in out.data().indexed_iter() {
            let inside = r < 32 && c < 32;
            if inside {
                assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-6);
            } else {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn place_clips_offscreen_box_without_error() {
        let patch = Mask::from_fn(8, 8, |_, _| 1.0);
        // Box spans columns [-4, 8): the left part is clipped away.
        let b = BBox::new(2.0, 4.0, 12.0, 6.0);
        let out = place_inverse(&patch, &b, (16, 16));
        assert!(out.data().iter().any(|v| *v > 0.0));
        // Fully offscreen boxes write nothing and still do not error.
        let gone = place_inverse(&patch, &BBox::new(-10.0, 4.0, 4.0, 6.0), (16, 16));
        assert!(gone.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn place_is_zero_outside_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let patch = Mask::from_fn(16, 16, |_, _| rng.gen_range(0.0..1.0));
            let b = BBox::new(
                rng.gen_range(0.0..64.0),
                rng.gen_range(0.0..64.0),
                rng.gen_range(1.0..30.0),
                rng.gen_range(1.0..30.0),
            );
            let out = place_inverse(&patch, &b, (64, 64));
            for ((r, c), v) in out.data().indexed_iter() {
                let x = c as f64;
                let y = r as f64;
                let inside = x >= b.left() && x < b.right() && y >= b.top() && y < b.bottom();
                if !inside {
                    assert_eq!(*v, 0.0, "nonzero outside box at ({r},{c})");
                }
            }
        }
    }

    #[test]
    fn crop_place_round_trip_on_smooth_field() {
        // Smooth raster: the resampling pair is near-identity inside the box.
        let m = Mask::from_fn(64, 64, |r, c| {
            let x = c as f32 / 63.0;
            let y = r as f32 / 63.0;
            0.5 + 0.45 * ((3.0 * x).sin() * (2.0 * y).cos())
        });
        // Grid-aligned integer box, 24x20 <= 32x32.
        let b = BBox::new(29.5, 25.0, 24.0, 20.0);
        let crop = crop_resize(&m, &b, 32).unwrap();
        let back = place_inverse(&crop, &b, (64, 64));
        for ((r, c), v) in back.data().indexed_iter() {
            let x = c as f64;
            let y = r as f64;
            if x >= b.left() && x < b.right() && y >= b.top() && y < b.bottom() {
                assert!(
                    (*v - m.data()[(r, c)]).abs() < 0.1,
                    "round trip off at ({r},{c}): {} vs {}",
                    v,
                    m.data()[(r, c)]
                );
            }
        }
    }

    #[test]
    fn crop_exact_box_round_trip_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = Mask::from_fn(64, 64, |_, _| rng.gen_range(0.0..1.0));
        let b = BBox::new(31.5, 23.5, 32.0, 32.0);
        let crop = crop_resize(&m, &b, 32).unwrap();
        let back = place_inverse(&crop, &b, (64, 64));
        for i in 0..32 {
            for j in 0..32 {
                assert_abs_diff_eq!(
                    back.data()[(8 + i, 16 + j)],
                    m.data()[(8 + i, 16 + j)],
                    epsilon = 1e-5
                );
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_box() -> impl Strategy<Value = BBox> {
            (
                -50.0..300.0f64,
                -50.0..300.0f64,
                1.0..120.0f64,
                1.0..120.0f64,
            )
                .prop_map(|(x, y, w, h)| BBox::new(x, y, w, h))
        }

        proptest! {
            #[test]
            fn round_trip_prop(b_o in arb_box(), b_s in arb_box()) {
                let r = encode_regression(&b_o, &b_s).unwrap();
                let back = decode_regression(&b_o, &r);
                prop_assert!((back.x - b_s.x).abs() < 1e-6);
                prop_assert!((back.y - b_s.y).abs() < 1e-6);
                prop_assert!((back.w - b_s.w).abs() < 1e-6);
                prop_assert!((back.h - b_s.h).abs() < 1e-6);
            }

            #[test]
            fn encode_self_is_exactly_zero(b in arb_box()) {
                let r = encode_regression(&b, &b).unwrap();
                prop_assert_eq!(r, BoxRegression::zero());
            }
        }
    }
}
