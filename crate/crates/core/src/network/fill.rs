//! Attentive shadow filling: pool the filling features under the predicted
//! shadow mask, score every background shadow pixel against that pooled
//! query through a shared projection, and use the attention-weighted mean
//! color of the background shadow pixels as the target mean for the
//! foreground shadow. The composite is scaled per channel toward that
//! target inside the predicted mask.

use candle_core::Tensor;

use super::layers::{clamp_finite, lower_bound, masked_softmax, Linear, Result};
use super::NetError;

pub struct FillOptions {
    /// Divide the attended mean by the background pixel count, reproducing
    /// the literal write-up of the weighted average.
    pub paper_literal_mean: bool,
    /// Per-channel scale used when the composite has no background shadow.
    pub fallback_scale: f64,
}

pub struct FillOutputs {
    /// Final composite with the shadow filled in, `(B, 3, H, W)`.
    pub i_g_hat: Tensor,
    /// Attention weights over pixels, `(B, H*W)`; zero outside the
    /// background shadow and all-zero for fallback samples.
    pub attention: Tensor,
    /// Attention-weighted mean background shadow color, `(B, 3)`.
    pub p_bs: Tensor,
    /// Mask-weighted mean color under the predicted mask, `(B, 3)`.
    pub p_fs: Tensor,
    /// Per-channel darkening scale actually applied, `(B, 3)`.
    pub scale: Tensor,
    /// Uniformly darkened composite, `(B, 3, H, W)`.
    pub i_dark: Tensor,
    pub fallback_used: Vec<bool>,
}

const EPS_FOREGROUND: f64 = 1e-4;
const EPS_MEAN: f64 = 1e-4;
const SCALE_MIN: f64 = 0.05;
const SCALE_MAX: f64 = 1.0;

/// Runs the filling head.
///
/// `f_s`: `(B, C, H, W)` filling features; `mask`: `(B, 1, H, W)` soft
/// predicted shadow mask; `m_bs`: `(B, 1, H, W)` binary background shadow
/// mask; `i_c`: `(B, 3, H, W)` composite; `phi`: the shared projection.
pub fn attentive_fill(
    f_s: &Tensor,
    mask: &Tensor,
    m_bs: &Tensor,
    i_c: &Tensor,
    phi: &Linear,
    options: &FillOptions,
) -> Result<FillOutputs> {
    let (b, c, h, w) = f_s.dims4()?;
    let hw = h * w;
    let feats = f_s.reshape((b, c, hw))?;
    let m = mask.reshape((b, 1, hw))?;
    let bs = m_bs.reshape((b, hw))?.detach();
    let colors = i_c.reshape((b, 3, hw))?;

    // Soft-mask-weighted mean feature of the predicted foreground shadow.
    let m_sum = m.sum(2)?; // (B, 1)
    for (i, v) in m_sum.flatten_all()?.to_vec1::<f32>()?.iter().enumerate() {
        if (*v as f64) < EPS_FOREGROUND {
            return Err(NetError::EmptyForeground(i));
        }
    }
    let f_fs = feats.broadcast_mul(&m)?.sum(2)?.broadcast_div(&m_sum)?; // (B, C)

    // Shared projection for the query and every pixel.
    let q = phi.forward(&f_fs)?; // (B, D)
    let pix = feats.transpose(1, 2)?.contiguous()?; // (B, HW, C)
    let k = phi.forward(&pix)?; // (B, HW, D)
    let logits = k.broadcast_matmul(&q.unsqueeze(2)?)?.squeeze(2)?; // (B, HW)

    let n_bs = bs.sum(1)?.to_vec1::<f32>()?;
    let fallback_used: Vec<bool> = n_bs.iter().map(|n| *n < 0.5).collect();

    let attention = masked_softmax(&logits, &bs)?; // (B, HW); zero rows on fallback
    let mut p_bs = attention.unsqueeze(1)?.broadcast_mul(&colors)?.sum(2)?; // (B, 3)
    if options.paper_literal_mean {
        let n_safe: Vec<f32> = n_bs.iter().map(|n| n.max(1.0)).collect();
        let n_t = Tensor::from_vec(n_safe, (b, 1), f_s.device())?;
        p_bs = p_bs.broadcast_div(&n_t)?;
    }

    let p_fs = colors.broadcast_mul(&m)?.sum(2)?.broadcast_div(&m_sum)?; // (B, 3)

    let scale_raw = p_bs.broadcast_div(&lower_bound(&p_fs, EPS_MEAN)?)?;
    // Straight-through clamp: the forward value is clipped, but the
    // gradient passes as if unclipped. An untrained network often starts
    // with the scale pinned at the upper bound, and a hard clamp there
    // would cut the only gradient path into the filling branch.
    let hard = clamp_finite(&scale_raw, SCALE_MIN, SCALE_MAX)?;
    let scale_clamped = (&scale_raw + (hard - &scale_raw)?.detach())?;
    let has: Vec<f32> = fallback_used.iter().map(|f| if *f { 0.0 } else { 1.0 }).collect();
    let has_t = Tensor::from_vec(has, (b, 1), f_s.device())?;
    let fallback_t = ((has_t.ones_like()? - &has_t)? * options.fallback_scale)?;
    let scale = (scale_clamped.broadcast_mul(&has_t)? + fallback_t.broadcast_as((b, 3))?)?;

    let i_dark = clamp_finite(&colors.broadcast_mul(&scale.unsqueeze(2)?)?, 0.0, 1.0)?;
    // i_c + m * (i_dark - i_c): bitwise-equal to i_c wherever the mask is 0.
    let i_g_hat = (&colors + (i_dark.clone() - &colors)?.broadcast_mul(&m)?)?;

    Ok(FillOutputs {
        i_g_hat: i_g_hat.reshape((b, 3, h, w))?,
        attention,
        p_bs,
        p_fs,
        scale,
        i_dark: i_dark.reshape((b, 3, h, w))?,
        fallback_used,
    })
}

/// Shannon entropy of one sample's attention weights, for diagnostics.
pub fn attention_entropy(weights: &[f32]) -> f64 {
    let mut h = 0.0f64;
    for w in weights {
        let w = *w as f64;
        if w > 0.0 {
            h -= w * w.ln();
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::layers::{Init, ParamStore};
    use approx::assert_abs_diff_eq;
    use candle_core::{Device, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dev() -> Device {
        Device::Cpu
    }

    fn identity_phi(store: &mut ParamStore, dim: usize) -> Linear {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lin = Linear::new(store, "phi", dim, dim, false, Init::Zeros, &mut rng).unwrap();
        let eye: Vec<f32> = (0..dim * dim)
            .map(|i| if i % (dim + 1) == 0 { 1.0 } else { 0.0 })
            .collect();
        store
            .get("phi.weight")
            .unwrap()
            .set(&Tensor::from_vec(eye, (dim, dim), &dev()).unwrap())
            .unwrap();
        lin
    }

    fn options() -> FillOptions {
        FillOptions {
            paper_literal_mean: false,
            fallback_scale: 0.5,
        }
    }

    /// 8x8 fixture with three background shadow pixels and fixed features.
    fn fixture() -> (Tensor, Tensor, Tensor, Tensor, Vec<usize>) {
        let h = 8usize;
        let c = 4usize;
        let hw = h * h;
        // Features: deterministic pattern.
        let f: Vec<f32> = (0..c * hw)
            .map(|i| ((i * 37 % 101) as f32) / 101.0 - 0.3)
            .collect();
        let f_s = Tensor::from_vec(f, (1, c, h, h), &dev()).unwrap();
        // Predicted mask: a 2x2 patch.
        let mut m = vec![0.0f32; hw];
        for r in 2..4 {
            for cc in 2..4 {
                m[r * h + cc] = 0.8;
            }
        }
        let mask = Tensor::from_vec(m, (1, 1, h, h), &dev()).unwrap();
        // Background shadow: three pixels.
        let bs_idx = vec![9usize, 30, 55];
        let mut bs = vec![0.0f32; hw];
        for i in &bs_idx {
            bs[*i] = 1.0;
        }
        let m_bs = Tensor::from_vec(bs, (1, 1, h, h), &dev()).unwrap();
        // Colors: another deterministic pattern.
        let colors: Vec<f32> = (0..3 * hw)
            .map(|i| ((i * 53 % 97) as f32) / 97.0)
            .collect();
        let i_c = Tensor::from_vec(colors, (1, 3, h, h), &dev()).unwrap();
        (f_s, mask, m_bs, i_c, bs_idx)
    }

    #[test]
    fn matches_brute_force_attention_oracle() {
        let (f_s, mask, m_bs, i_c, bs_idx) = fixture();
        let mut store = ParamStore::new(&dev());
        let phi = identity_phi(&mut store, 4);
        let out = attentive_fill(&f_s, &mask, &m_bs, &i_c, &phi, &options()).unwrap();

        // Brute force in f64: pooled feature, dot products, softmax,
        // weighted color mean.
        let f = f_s.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let m = mask.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let col = i_c.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let hw = 64usize;
        let c = 4usize;
        let msum: f64 = m.iter().map(|v| *v as f64).sum();
        let mut f_fs = vec![0.0f64; c];
        for ch in 0..c {
            for p in 0..hw {
                f_fs[ch] += f[ch * hw + p] as f64 * m[p] as f64;
            }
            f_fs[ch] /= msum;
        }
        let mut logits = Vec::new();
        for &p in &bs_idx {
            let mut dot = 0.0f64;
            for ch in 0..c {
                dot += f_fs[ch] * f[ch * hw + p] as f64;
            }
            logits.push(dot);
        }
        let mx = logits.iter().cloned().fold(f64::MIN, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
        let z: f64 = exps.iter().sum();
        let mut p_bs = [0.0f64; 3];
        for (i, &p) in bs_idx.iter().enumerate() {
            for ch in 0..3 {
                p_bs[ch] += exps[i] / z * col[ch * hw + p] as f64;
            }
        }

        let got_att = out.attention.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        for (i, &p) in bs_idx.iter().enumerate() {
            assert_abs_diff_eq!(got_att[p] as f64, exps[i] / z, epsilon = 1e-6);
        }
        let got_pbs = out.p_bs.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        for ch in 0..3 {
            assert_abs_diff_eq!(got_pbs[ch] as f64, p_bs[ch], epsilon = 1e-6);
        }
        assert_eq!(out.fallback_used, vec![false]);
    }

    #[test]
    fn uniform_features_give_arithmetic_mean() {
        let (_, mask, m_bs, i_c, bs_idx) = fixture();
        // Identical feature vectors at every pixel -> equal logits.
        let f_s = Tensor::full(0.37f32, (1, 4, 8, 8), &dev()).unwrap();
        let mut store = ParamStore::new(&dev());
        let phi = identity_phi(&mut store, 4);
        let out = attentive_fill(&f_s, &mask, &m_bs, &i_c, &phi, &options()).unwrap();
        let att = out.attention.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        for &p in &bs_idx {
            assert_abs_diff_eq!(att[p], 1.0 / 3.0, epsilon = 1e-6);
        }
        let col = i_c.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let got = out.p_bs.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        for ch in 0..3 {
            let mean: f32 = bs_idx.iter().map(|p| col[ch * 64 + p]).sum::<f32>() / 3.0;
            assert_abs_diff_eq!(got[ch], mean, epsilon = 1e-6);
        }
    }

    #[test]
    fn equal_means_leave_image_unchanged() {
        // Constant colors everywhere: p_bs == p_fs, scale = 1, output = input.
        let (f_s, mask, m_bs, _, _) = fixture();
        let i_c = Tensor::full(0.6f32, (1, 3, 8, 8), &dev()).unwrap();
        let mut store = ParamStore::new(&dev());
        let phi = identity_phi(&mut store, 4);
        let out = attentive_fill(&f_s, &mask, &m_bs, &i_c, &phi, &options()).unwrap();
        let scale = out.scale.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        for s in scale {
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-5);
        }
        let diff = (out.i_g_hat.flatten_all().unwrap() - i_c.flatten_all().unwrap())
            .unwrap()
            .abs()
            .unwrap()
            .max(0)
            .unwrap()
            .to_scalar::<f32>()
            .unwrap();
        assert!(diff < 1e-6);
    }

    #[test]
    fn empty_background_shadow_uses_fallback() {
        let (f_s, mask, _, i_c, _) = fixture();
        let m_bs = Tensor::zeros((1, 1, 8, 8), candle_core::DType::F32, &dev()).unwrap();
        let mut store = ParamStore::new(&dev());
        let phi = identity_phi(&mut store, 4);
        let out = attentive_fill(&f_s, &mask, &m_bs, &i_c, &phi, &options()).unwrap();
        assert_eq!(out.fallback_used, vec![true]);
        let scale = out.scale.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        for s in scale {
            assert_abs_diff_eq!(s, 0.5, epsilon = 1e-6);
        }
        let att: f32 = out.attention.sum_all().unwrap().to_scalar().unwrap();
        assert_eq!(att, 0.0);
    }

    #[test]
    fn collapsed_mask_errors() {
        let (f_s, _, m_bs, i_c, _) = fixture();
        let mask = Tensor::zeros((1, 1, 8, 8), candle_core::DType::F32, &dev()).unwrap();
        let mut store = ParamStore::new(&dev());
        let phi = identity_phi(&mut store, 4);
        let err = attentive_fill(&f_s, &mask, &m_bs, &i_c, &phi, &options());
        assert!(matches!(err, Err(NetError::EmptyForeground(0))));
    }

    #[test]
    fn attention_sums_to_one_on_random_batches() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut store = ParamStore::new(&dev());
        let mut prng = ChaCha8Rng::seed_from_u64(3);
        let phi = Linear::new(
            &mut store,
            "phi",
            6,
            5,
            false,
            Init::Kaiming { fan_in: 6 },
            &mut prng,
        )
        .unwrap();
        use rand::Rng;
        for _ in 0..100 {
            let b = 2usize;
            let f: Vec<f32> = (0..b * 6 * 64).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let f_s = Tensor::from_vec(f, (b, 6, 8, 8), &dev()).unwrap();
            let m: Vec<f32> = (0..b * 64).map(|_| rng.gen_range(0.1..1.0)).collect();
            let mask = Tensor::from_vec(m, (b, 1, 8, 8), &dev()).unwrap();
            let bsv: Vec<f32> = (0..b * 64)
                .map(|_| if rng.gen_bool(0.3) { 1.0 } else { 0.0 })
                .collect();
            let any: Vec<bool> = bsv
                .chunks(64)
                .map(|chunk| chunk.iter().any(|v| *v > 0.0))
                .collect();
            let m_bs = Tensor::from_vec(bsv, (b, 1, 8, 8), &dev()).unwrap();
            let colors: Vec<f32> = (0..b * 3 * 64).map(|_| rng.gen_range(0.0..1.0)).collect();
            let i_c = Tensor::from_vec(colors, (b, 3, 8, 8), &dev()).unwrap();
            let out = attentive_fill(&f_s, &mask, &m_bs, &i_c, &phi, &options()).unwrap();
            let att = out.attention.to_vec2::<f32>().unwrap();
            for (row, has) in att.iter().zip(any.iter()) {
                let sum: f32 = row.iter().sum();
                if *has {
                    assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-5);
                    assert!(row.iter().all(|v| *v >= 0.0));
                } else {
                    assert_eq!(sum, 0.0);
                }
            }
        }
    }

    #[test]
    fn scale_halves_when_background_colors_halve() {
        let (f_s, mask, m_bs, _, bs_idx) = fixture();
        // Colors chosen so both the base scale and the halved scale stay
        // strictly inside the clamp range: background shadow pixels around
        // 0.4, the masked region at 0.8.
        let mut colors = vec![0.8f32; 3 * 64];
        for (j, &p) in bs_idx.iter().enumerate() {
            for ch in 0..3 {
                colors[ch * 64 + p] = 0.36 + 0.04 * j as f32 + 0.02 * ch as f32;
            }
        }
        let i_c = Tensor::from_vec(colors.clone(), (1, 3, 8, 8), &dev()).unwrap();
        let mut store = ParamStore::new(&dev());
        let phi = identity_phi(&mut store, 4);
        let base = attentive_fill(&f_s, &mask, &m_bs, &i_c, &phi, &options()).unwrap();

        // Halve the colors of the background shadow pixels only, keeping
        // the features (and therefore the attention) frozen.
        for &p in &bs_idx {
            for ch in 0..3 {
                colors[ch * 64 + p] *= 0.5;
            }
        }
        let darker = Tensor::from_vec(colors, (1, 3, 8, 8), &dev()).unwrap();
        let halved = attentive_fill(&f_s, &mask, &m_bs, &darker, &phi, &options()).unwrap();

        let p0 = base.p_bs.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let p1 = halved.p_bs.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let s0 = base.scale.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let s1 = halved.scale.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        for ch in 0..3 {
            assert_abs_diff_eq!(p1[ch], 0.5 * p0[ch], epsilon = 1e-5);
            // Valid as long as neither scale sits on the clamp boundary.
            assert!(s0[ch] > SCALE_MIN as f32 && s0[ch] < SCALE_MAX as f32);
            assert_abs_diff_eq!(s1[ch], 0.5 * s0[ch], epsilon = 1e-5);
        }
    }

    #[test]
    fn paper_literal_mean_divides_by_count() {
        let (f_s, mask, m_bs, i_c, _) = fixture();
        let mut store = ParamStore::new(&dev());
        let phi = identity_phi(&mut store, 4);
        let plain = attentive_fill(&f_s, &mask, &m_bs, &i_c, &phi, &options()).unwrap();
        let literal = attentive_fill(
            &f_s,
            &mask,
            &m_bs,
            &i_c,
            &phi,
            &FillOptions {
                paper_literal_mean: true,
                fallback_scale: 0.5,
            },
        )
        .unwrap();
        let a = plain.p_bs.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let b = literal.p_bs.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        for ch in 0..3 {
            assert_abs_diff_eq!(b[ch], a[ch] / 3.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn entropy_of_uniform_weights() {
        let w = vec![0.25f32; 4];
        assert_abs_diff_eq!(attention_entropy(&w), (4.0f64).ln(), epsilon = 1e-9);
    }
}
