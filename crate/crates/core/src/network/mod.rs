//! Learnable components and the two-stage forward pass.
//!
//! Stage one predicts the foreground shadow mask in decomposed form: a
//! context encoder feeds a box-regression head and a 32x32 shape head, the
//! shape is placed into the decoded box, and a decoder refines the placed
//! mask at full resolution. Stage two extracts multi-scale filling features
//! and darkens the composite inside the predicted mask toward an
//! attention-weighted mean of the background shadow colors.

mod blocks;
mod fill;
mod layers;

pub use fill::{attention_entropy, attentive_fill, FillOptions, FillOutputs};
pub use layers::{
    atan, clamp_finite, instance_norm, lower_bound, masked_softmax, resize_bilinear, upsample2x,
    Conv2d, Init, Linear, ParamStore,
};

use crate::geometry::{BBox, Mask};
use crate::synthdata::Image;
use blocks::{Backbone, StagePlan};
use candle_core::{Device, Tensor};
use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("predicted foreground mask collapsed to empty (sample {0})")]
    EmptyForeground(usize),
    #[error("not implemented: {0}")]
    NotImplemented(&'static str),
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Candle(#[from] candle_core::Error),
}

pub type Result<T> = std::result::Result<T, NetError>;

/// Shadow filling strategy. The linear-parameter variants document an
/// ablation surface and are intentionally not built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FillHead {
    #[default]
    Attentive,
    LinearNoBias,
    LinearWithBias,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Input resolution; must be a multiple of 16.
    pub resolution: usize,
    /// Width multiplier applied to every internal channel count.
    pub channel_mult: f64,
    /// Side length of the shape head output.
    pub shape_size: usize,
    /// Projection dimension of the shared attention map.
    pub attn_dim: usize,
    /// Seed for weight initialization.
    pub init_seed: u64,
    /// Skip the refinement decoder and use the placed mask directly.
    pub no_refine: bool,
    /// Divide the attended background mean by the pixel count.
    pub paper_literal_mean: bool,
    /// Scale used when the composite has no background shadow pixels.
    pub fallback_scale: f64,
    pub fill_head: FillHead,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            resolution: 256,
            channel_mult: 1.0,
            shape_size: 32,
            attn_dim: 32,
            init_seed: 0,
            no_refine: false,
            paper_literal_mean: false,
            fallback_scale: 0.5,
            fill_head: FillHead::Attentive,
        }
    }
}

impl NetworkConfig {
    /// Desk-scale preset: quarter-width network at 128x128.
    pub fn desk_scale() -> Self {
        Self {
            resolution: 128,
            channel_mult: 0.25,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution % 16 != 0 {
            return Err(NetError::InvalidConfig(
                "resolution must be divisible by 16".into(),
            ));
        }
        if self.channel_mult <= 0.0 || !self.channel_mult.is_finite() {
            return Err(NetError::InvalidConfig(
                "channel_mult must be positive".into(),
            ));
        }
        if self.shape_size == 0 || self.attn_dim == 0 {
            return Err(NetError::InvalidConfig("sizes must be positive".into()));
        }
        let fe = self.resolution / 16;
        if self.shape_size % fe != 0 || !(self.shape_size / fe).is_power_of_two() {
            return Err(NetError::InvalidConfig(format!(
                "shape head cannot upsample {fe} to {} by doubling",
                self.shape_size
            )));
        }
        if self.fallback_scale <= 0.0 || self.fallback_scale > 1.0 {
            return Err(NetError::InvalidConfig(
                "fallback_scale must lie in (0, 1]".into(),
            ));
        }
        Ok(())
    }

    fn scaled(&self, base: usize) -> usize {
        ((base as f64 * self.channel_mult).round() as usize).max(4)
    }
}

/// Everything the forward pass produces, kept as graph tensors so losses
/// can be taken on any of them.
pub struct ForwardOutputs {
    /// Predicted box regression, `(B, 4)`.
    pub r_hat: Tensor,
    /// Decoded shadow box `(x, y, w, h)` per sample, `(B, 4)`.
    pub b_s_hat: Tensor,
    pub b_s_hat_boxes: Vec<BBox>,
    /// Shape head output, `(B, 1, S, S)` in `[0, 1]`.
    pub m_s_hat: Tensor,
    /// Placed rough mask, `(B, 1, H, W)`.
    pub m_fs_rough: Tensor,
    /// Refined mask (or the rough mask under `no_refine`).
    pub m_fs_refined: Tensor,
    pub attention: Tensor,
    pub p_bs: Tensor,
    pub p_fs: Tensor,
    pub scale: Tensor,
    pub i_dark: Tensor,
    /// Final composite with the generated shadow, `(B, 3, H, W)`.
    pub i_g_hat: Tensor,
    pub fallback_used: Vec<bool>,
}

/// One batch of network inputs.
pub struct BatchInputs {
    pub i_c: Tensor,
    pub m_fo: Tensor,
    pub m_bo: Tensor,
    pub m_bs: Tensor,
    pub b_o: Vec<BBox>,
}

pub struct Network {
    pub config: NetworkConfig,
    store: ParamStore,
    device: Device,

    e_c: Backbone,
    hb_convs: Vec<Conv2d>,
    hb_fc: Linear,
    hs_convs: Vec<Conv2d>,
    hs_final: Conv2d,
    dt_blocks: Vec<(Conv2d, Conv2d)>,
    dt_final1: Conv2d,
    dt_final2: Conv2d,
    e_s: Backbone,
    es_projs: Vec<Conv2d>,
    es_fuse: Conv2d,
    phi: Linear,
}

impl Network {
    pub fn new(config: NetworkConfig, device: &Device) -> Result<Self> {
        config.validate()?;
        match config.fill_head {
            FillHead::Attentive => {}
            FillHead::LinearNoBias | FillHead::LinearWithBias => {
                return Err(NetError::NotImplemented(
                    "linear-parameter filling heads are documented ablations only",
                ))
            }
        }
        let mut store = ParamStore::new(device);
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let s = |b: usize| config.scaled(b);

        let ec_plan = [
            StagePlan {
                channels: s(64),
                blocks: 3,
            },
            StagePlan {
                channels: s(128),
                blocks: 4,
            },
            StagePlan {
                channels: s(256),
                blocks: 6,
            },
        ];
        let e_c = Backbone::new(&mut store, "e_c", 6, s(64), &ec_plan, &mut rng)?;
        let fe_ch = s(256);

        // Box head: three convs to a wider map, pooled, one linear layer.
        // The final layer starts at zero so the initial box equals the
        // object box.
        let mut hb_convs = Vec::new();
        let hb_mid = s(256);
        let hb_wide = s(512);
        hb_convs.push(Conv2d::new(
            &mut store, "h_b.conv0", fe_ch, hb_mid, 3, 1, 1, false, &mut rng,
        )?);
        hb_convs.push(Conv2d::new(
            &mut store, "h_b.conv1", hb_mid, hb_mid, 3, 1, 1, false, &mut rng,
        )?);
        hb_convs.push(Conv2d::new(
            &mut store, "h_b.conv2", hb_mid, hb_wide, 3, 2, 1, false, &mut rng,
        )?);
        let hb_fc = Linear::new(&mut store, "h_b.fc", hb_wide, 4, true, Init::Zeros, &mut rng)?;

        // Shape head: upsample to the shape size, four convs, one output conv.
        let hs_plan = [s(128), s(64), s(32), s(16)];
        let mut hs_convs = Vec::new();
        let mut prev = fe_ch;
        for (i, ch) in hs_plan.iter().enumerate() {
            hs_convs.push(Conv2d::new(
                &mut store,
                &format!("h_s.conv{i}"),
                prev,
                *ch,
                3,
                1,
                1,
                false,
                &mut rng,
            )?);
            prev = *ch;
        }
        let hs_final = Conv2d::new(&mut store, "h_s.out", prev, 1, 3, 1, 1, true, &mut rng)?;

        // Refinement decoder: four upsample blocks of two convs each; the
        // last block runs after the masks are concatenated, then two final
        // convs produce the mask.
        let dt_plan = [s(128), s(64), s(32), s(16)];
        let mut dt_blocks = Vec::new();
        let mut prev = fe_ch;
        for (i, ch) in dt_plan.iter().enumerate() {
            let in_ch = if i == 3 { prev + 2 } else { prev };
            let c1 = Conv2d::new(
                &mut store,
                &format!("d_t.block{i}.conv0"),
                in_ch,
                *ch,
                3,
                1,
                1,
                false,
                &mut rng,
            )?;
            let c2 = Conv2d::new(
                &mut store,
                &format!("d_t.block{i}.conv1"),
                *ch,
                *ch,
                3,
                1,
                1,
                false,
                &mut rng,
            )?;
            dt_blocks.push((c1, c2));
            prev = *ch;
        }
        let dt_final1 = Conv2d::new(&mut store, "d_t.out0", prev, prev, 3, 1, 1, false, &mut rng)?;
        let dt_final2 = Conv2d::new(&mut store, "d_t.out1", prev, 1, 3, 1, 1, true, &mut rng)?;

        // Filling encoder: narrower backbone, per-stage projections to a
        // common width, fused after upsampling to full resolution.
        let es_plan = [
            StagePlan {
                channels: s(32),
                blocks: 2,
            },
            StagePlan {
                channels: s(64),
                blocks: 2,
            },
            StagePlan {
                channels: s(128),
                blocks: 2,
            },
        ];
        let e_s = Backbone::new(&mut store, "e_s", 6, s(32), &es_plan, &mut rng)?;
        let fs_ch = s(32);
        let mut es_projs = Vec::new();
        for (i, stage) in es_plan.iter().enumerate() {
            es_projs.push(Conv2d::new(
                &mut store,
                &format!("e_s.proj{i}"),
                stage.channels,
                fs_ch,
                1,
                1,
                0,
                false,
                &mut rng,
            )?);
        }
        let es_fuse = Conv2d::new(
            &mut store,
            "e_s.fuse",
            fs_ch * es_plan.len(),
            fs_ch,
            3,
            1,
            1,
            true,
            &mut rng,
        )?;
        let phi = Linear::new(
            &mut store,
            "phi",
            fs_ch,
            config.attn_dim,
            false,
            Init::Kaiming { fan_in: fs_ch },
            &mut rng,
        )?;

        Ok(Self {
            config,
            store,
            device: device.clone(),
            e_c,
            hb_convs,
            hb_fc,
            hs_convs,
            hs_final,
            dt_blocks,
            dt_final1,
            dt_final2,
            e_s,
            es_projs,
            es_fuse,
            phi,
        })
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Total learnable scalar count.
    pub fn count_parameters(&self) -> usize {
        self.store.count()
    }

    fn check_inputs(&self, inputs: &BatchInputs) -> Result<(usize, usize, usize)> {
        let (b, c, h, w) = inputs.i_c.dims4()?;
        let n = self.config.resolution;
        if c != 3 || h != n || w != n {
            return Err(NetError::ShapeMismatch(format!(
                "composite must be (B, 3, {n}, {n}), got {:?}",
                inputs.i_c.dims()
            )));
        }
        for (name, t) in [
            ("m_fo", &inputs.m_fo),
            ("m_bo", &inputs.m_bo),
            ("m_bs", &inputs.m_bs),
        ] {
            if t.dims() != [b, 1, n, n] {
                return Err(NetError::ShapeMismatch(format!(
                    "{name} must be (B, 1, {n}, {n}), got {:?}",
                    t.dims()
                )));
            }
        }
        if inputs.b_o.len() != b {
            return Err(NetError::ShapeMismatch("object boxes vs batch size".into()));
        }
        Ok((b, h, w))
    }

    fn concat_inputs(&self, inputs: &BatchInputs) -> Result<Tensor> {
        Ok(Tensor::cat(
            &[&inputs.i_c, &inputs.m_bs, &inputs.m_bo, &inputs.m_fo],
            1,
        )?)
    }

    /// Bottleneck context features at 1/16 resolution.
    pub fn encode_context(&self, inputs: &BatchInputs) -> Result<Tensor> {
        self.check_inputs(inputs)?;
        let x = self.concat_inputs(inputs)?;
        Ok(self.e_c.forward(&x)?.pop().expect("stages"))
    }

    /// Predicts the box regression quadruplet from the context features.
    pub fn box_head(&self, f_e: &Tensor) -> Result<Tensor> {
        let mut y = f_e.clone();
        for conv in &self.hb_convs {
            y = instance_norm(&conv.forward(&y)?)?.relu()?;
        }
        let pooled = y.mean(3)?.mean(2)?;
        self.hb_fc.forward(&pooled)
    }

    /// Predicts the normalized shadow shape inside its box.
    pub fn shape_head(&self, f_e: &Tensor) -> Result<Tensor> {
        let mut y = f_e.clone();
        let mut spatial = self.config.resolution / 16;
        while spatial < self.config.shape_size {
            y = upsample2x(&y)?;
            spatial *= 2;
        }
        for conv in &self.hs_convs {
            y = instance_norm(&conv.forward(&y)?)?.relu()?;
        }
        let t = self.hs_final.forward(&y)?.tanh()?;
        Ok(((t + 1.0)? * 0.5)?)
    }

    /// Decodes boxes from regressions in-graph: offsets scaled by the
    /// object box, exponential sizes clamped to `[1, 4 * resolution]`.
    pub fn decode_boxes(&self, r_hat: &Tensor, b_o: &[BBox]) -> Result<Tensor> {
        let b = b_o.len();
        let flat: Vec<f32> = b_o
            .iter()
            .flat_map(|bb| [bb.x as f32, bb.y as f32, bb.w as f32, bb.h as f32])
            .collect();
        let b_o_t = Tensor::from_vec(flat, (b, 4), &self.device)?;
        let xo = b_o_t.narrow(1, 0, 1)?;
        let yo = b_o_t.narrow(1, 1, 1)?;
        let wo = b_o_t.narrow(1, 2, 1)?;
        let ho = b_o_t.narrow(1, 3, 1)?;
        let rx = r_hat.narrow(1, 0, 1)?;
        let ry = r_hat.narrow(1, 1, 1)?;
        let rw = clamp_finite(&r_hat.narrow(1, 2, 1)?, -20.0, 20.0)?;
        let rh = clamp_finite(&r_hat.narrow(1, 3, 1)?, -20.0, 20.0)?;
        let x = (&xo + rx.mul(&wo)?)?;
        let y = (&yo + ry.mul(&ho)?)?;
        let cap = 4.0 * self.config.resolution as f64;
        let w = clamp_finite(&wo.mul(&rw.exp()?)?, 1.0, cap)?;
        let h = clamp_finite(&ho.mul(&rh.exp()?)?, 1.0, cap)?;
        Ok(Tensor::cat(&[&x, &y, &w, &h], 1)?)
    }

    /// Places each predicted shape into its decoded box on a zero canvas.
    /// Gradients flow into the shape and, through the interpolation
    /// weights, into the box.
    pub fn place_shapes(&self, m_s_hat: &Tensor, b_s_hat: &Tensor) -> Result<Tensor> {
        let n = self.config.resolution;
        let s = self.config.shape_size;
        let (batch, _, sh, sw) = m_s_hat.dims4()?;
        if (sh, sw) != (s, s) {
            return Err(NetError::ShapeMismatch(format!(
                "shape mask must be {s}x{s}, got {sh}x{sw}"
            )));
        }
        let vals = b_s_hat.detach().to_vec2::<f32>()?;
        let grid = Tensor::arange(0f32, n as f32, &self.device)?;
        let jgrid = Tensor::arange(0f32, s as f32, &self.device)?.reshape((1, s))?;
        let mut placed = Vec::with_capacity(batch);
        for i in 0..batch {
            let row = b_s_hat.narrow(0, i, 1)?;
            let x = row.narrow(1, 0, 1)?;
            let y = row.narrow(1, 1, 1)?;
            let w = row.narrow(1, 2, 1)?;
            let h = row.narrow(1, 3, 1)?;
            let lx = (&x - (&w * 0.5)?)?;
            let ty = (&y - (&h * 0.5)?)?;

            let axis = |lo: &Tensor, len: &Tensor| -> Result<Tensor> {
                let u = ((grid.reshape((n, 1))?.broadcast_sub(lo)? * s as f64)?
                    .broadcast_div(len)?
                    - 0.5)?;
                let u = clamp_finite(&u, 0.0, (s - 1) as f64)?;
                let d = u.broadcast_sub(&jgrid)?.abs()?;
                Ok((1.0 - d)?.relu()?)
            };
            let ry = axis(&ty, &h)?; // (N, S)
            let rx = axis(&lx, &w)?; // (N, S)

            // Hard inside-the-box masks; constant w.r.t. the graph.
            let inside = |lo: f32, len: f32| -> Vec<f32> {
                let range = crate::geometry::inside_range(lo as f64, len as f64, n);
                let mut v = vec![0.0f32; n];
                for idx in range {
                    v[idx] = 1.0;
                }
                v
            };
            let my = Tensor::from_vec(
                inside(vals[i][1] - vals[i][3] / 2.0, vals[i][3]),
                (n, 1),
                &self.device,
            )?;
            let mx = Tensor::from_vec(
                inside(vals[i][0] - vals[i][2] / 2.0, vals[i][2]),
                (1, n),
                &self.device,
            )?;

            let patch = m_s_hat.narrow(0, i, 1)?.reshape((s, s))?;
            let canvas = ry.matmul(&patch)?.matmul(&rx.t()?)?;
            placed.push(canvas.broadcast_mul(&my)?.broadcast_mul(&mx)?);
        }
        let refs: Vec<&Tensor> = placed.iter().collect();
        Ok(Tensor::stack(&refs, 0)?.unsqueeze(1)?)
    }

    /// Decodes the box and places the shape: the rough mask.
    pub fn assemble_rough_mask(
        &self,
        m_s_hat: &Tensor,
        r_hat: &Tensor,
        b_o: &[BBox],
    ) -> Result<(Tensor, Tensor)> {
        let b_s_hat = self.decode_boxes(r_hat, b_o)?;
        let rough = self.place_shapes(m_s_hat, &b_s_hat)?;
        Ok((b_s_hat, rough))
    }

    /// Refinement decoder: upsamples the context features, joins the rough
    /// mask and object mask, and emits the full-resolution mask.
    pub fn refine_mask(&self, f_e: &Tensor, m_fs_rough: &Tensor, m_fo: &Tensor) -> Result<Tensor> {
        let mut y = f_e.clone();
        for (i, (c1, c2)) in self.dt_blocks.iter().enumerate() {
            y = upsample2x(&y)?;
            if i == 3 {
                y = Tensor::cat(&[&y, m_fs_rough, m_fo], 1)?;
            }
            y = instance_norm(&c1.forward(&y)?)?.relu()?;
            y = instance_norm(&c2.forward(&y)?)?.relu()?;
        }
        let y = instance_norm(&self.dt_final1.forward(&y)?)?.relu()?;
        let t = self.dt_final2.forward(&y)?.tanh()?;
        Ok(((t + 1.0)? * 0.5)?)
    }

    /// Multi-scale filling features at full resolution.
    pub fn encode_filling(&self, inputs: &BatchInputs) -> Result<Tensor> {
        self.check_inputs(inputs)?;
        let n = self.config.resolution;
        let x = self.concat_inputs(inputs)?;
        let feats = self.e_s.forward(&x)?;
        let mut scaled = Vec::with_capacity(feats.len());
        for (f, proj) in feats.iter().zip(self.es_projs.iter()) {
            // 1x1 projection commutes with the resize; projecting first
            // keeps the full-resolution maps narrow.
            scaled.push(resize_bilinear(&proj.forward(f)?, n, n)?);
        }
        let refs: Vec<&Tensor> = scaled.iter().collect();
        self.es_fuse.forward(&Tensor::cat(&refs, 1)?)
    }

    fn fill_options(&self) -> FillOptions {
        FillOptions {
            paper_literal_mean: self.config.paper_literal_mean,
            fallback_scale: self.config.fallback_scale,
        }
    }

    /// Full two-stage forward pass.
    pub fn forward(&self, inputs: &BatchInputs) -> Result<ForwardOutputs> {
        self.check_inputs(inputs)?;
        let f_e = self.encode_context(inputs)?;
        let r_hat = self.box_head(&f_e)?;
        let m_s_hat = self.shape_head(&f_e)?;
        let (b_s_hat, m_fs_rough) = self.assemble_rough_mask(&m_s_hat, &r_hat, &inputs.b_o)?;
        let m_fs_refined = if self.config.no_refine {
            m_fs_rough.clone()
        } else {
            self.refine_mask(&f_e, &m_fs_rough, &inputs.m_fo)?
        };
        let f_s = self.encode_filling(inputs)?;
        let fill = attentive_fill(
            &f_s,
            &m_fs_refined,
            &inputs.m_bs,
            &inputs.i_c,
            &self.phi,
            &self.fill_options(),
        )?;
        let b_s_hat_boxes = tensor_to_boxes(&b_s_hat)?;
        Ok(ForwardOutputs {
            r_hat,
            b_s_hat,
            b_s_hat_boxes,
            m_s_hat,
            m_fs_rough,
            m_fs_refined,
            attention: fill.attention,
            p_bs: fill.p_bs,
            p_fs: fill.p_fs,
            scale: fill.scale,
            i_dark: fill.i_dark,
            i_g_hat: fill.i_g_hat,
            fallback_used: fill.fallback_used,
        })
    }
}

pub fn tensor_to_boxes(t: &Tensor) -> Result<Vec<BBox>> {
    Ok(t.detach()
        .to_vec2::<f32>()?
        .into_iter()
        .map(|r| BBox::new(r[0] as f64, r[1] as f64, r[2] as f64, r[3] as f64))
        .collect())
}

/// Stacks images into a `(B, 3, H, W)` tensor.
pub fn images_to_tensor(images: &[&Image], device: &Device) -> Result<Tensor> {
    let (h, w) = images[0].resolution();
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        if img.resolution() != (h, w) {
            return Err(NetError::ShapeMismatch("image batch resolutions".into()));
        }
        for ch in 0..3 {
            for r in 0..h {
                for c in 0..w {
                    data.push(img.data()[(r, c, ch)]);
                }
            }
        }
    }
    Ok(Tensor::from_vec(data, (images.len(), 3, h, w), device)?)
}

/// Stacks masks into a `(B, 1, H, W)` tensor.
pub fn masks_to_tensor(masks: &[&Mask], device: &Device) -> Result<Tensor> {
    let (h, w) = masks[0].resolution();
    let mut data = Vec::with_capacity(masks.len() * h * w);
    for m in masks {
        if m.resolution() != (h, w) {
            return Err(NetError::ShapeMismatch("mask batch resolutions".into()));
        }
        data.extend(m.data().iter().copied());
    }
    Ok(Tensor::from_vec(data, (masks.len(), 1, h, w), device)?)
}

/// Extracts one sample of a `(B, 3, H, W)` tensor as an image, clamped.
pub fn tensor_to_image(t: &Tensor, index: usize) -> Result<Image> {
    let (_, c, h, w) = t.dims4()?;
    if c != 3 {
        return Err(NetError::ShapeMismatch("expected 3 channels".into()));
    }
    let flat: Vec<f32> = t.narrow(0, index, 1)?.flatten_all()?.to_vec1()?;
    let data = Array3::from_shape_fn((h, w, 3), |(r, cc, ch)| {
        flat[ch * h * w + r * w + cc].clamp(0.0, 1.0)
    });
    Ok(Image::new(data).expect("clamped values"))
}

/// Extracts one sample of a `(B, 1, H, W)` tensor as a mask, clamped.
pub fn tensor_to_mask(t: &Tensor, index: usize) -> Result<Mask> {
    let (_, c, h, w) = t.dims4()?;
    if c != 1 {
        return Err(NetError::ShapeMismatch("expected 1 channel".into()));
    }
    let flat: Vec<f32> = t.narrow(0, index, 1)?.flatten_all()?.to_vec1()?;
    let data = Array2::from_shape_fn((h, w), |(r, cc)| flat[r * w + cc].clamp(0.0, 1.0));
    Ok(Mask::new(data).expect("clamped values"))
}

/// Builds batch inputs from dataset tuples.
pub fn batch_from_tuples(
    tuples: &[&crate::synthdata::ShadowTuple],
    device: &Device,
) -> Result<BatchInputs> {
    let i_c = images_to_tensor(
        &tuples.iter().map(|t| &t.composite).collect::<Vec<_>>(),
        device,
    )?;
    let m_fo = masks_to_tensor(&tuples.iter().map(|t| &t.m_fo).collect::<Vec<_>>(), device)?;
    let m_bo = masks_to_tensor(&tuples.iter().map(|t| &t.m_bo).collect::<Vec<_>>(), device)?;
    let m_bs = masks_to_tensor(&tuples.iter().map(|t| &t.m_bs).collect::<Vec<_>>(), device)?;
    let b_o = tuples.iter().map(|t| t.meta.object_box).collect();
    Ok(BatchInputs {
        i_c,
        m_fo,
        m_bo,
        m_bs,
        b_o,
    })
}
