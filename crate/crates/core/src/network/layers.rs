//! Parameter registry and the small set of layers and tensor helpers the
//! network is built from. All parameters are created from an explicitly
//! seeded generator so construction is reproducible.

use candle_core::{CpuStorage, Device, Layout, Shape, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::NetError;

pub type Result<T> = std::result::Result<T, NetError>;

#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// Normal with std `sqrt(2 / fan_in)`.
    Kaiming { fan_in: usize },
    Zeros,
}

/// Owns every learnable tensor, keyed by a dotted path.
pub struct ParamStore {
    device: Device,
    vars: Vec<(String, Var)>,
}

impl ParamStore {
    pub fn new(device: &Device) -> Self {
        Self {
            device: device.clone(),
            vars: Vec::new(),
        }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn param(
        &mut self,
        name: &str,
        dims: &[usize],
        init: Init,
        rng: &mut ChaCha8Rng,
    ) -> Result<Tensor> {
        let count: usize = dims.iter().product();
        let data: Vec<f32> = match init {
            Init::Zeros => vec![0.0; count],
            Init::Kaiming { fan_in } => {
                let std = (2.0 / fan_in as f64).sqrt();
                (0..count).map(|_| (gauss(rng) * std) as f32).collect()
            }
        };
        let tensor = Tensor::from_vec(data, dims, &self.device)?;
        let var = Var::from_tensor(&tensor)?;
        let out = var.as_tensor().clone();
        self.vars.push((name.to_string(), var));
        Ok(out)
    }

    /// Total learnable scalar count.
    pub fn count(&self) -> usize {
        self.vars.iter().map(|(_, v)| v.elem_count()).sum()
    }

    /// Learnable scalar count under a dotted prefix.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.vars
            .iter()
            .filter(|(n, _)| n == prefix || n.starts_with(&format!("{prefix}.")))
            .map(|(_, v)| v.elem_count())
            .sum()
    }

    pub fn named_vars(&self) -> &[(String, Var)] {
        &self.vars
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    /// Overwrites every parameter from `name -> tensor` pairs; every
    /// parameter must be present with a matching shape.
    pub fn load(&mut self, tensors: &std::collections::HashMap<String, Tensor>) -> Result<()> {
        for (name, var) in &self.vars {
            let t = tensors.get(name).ok_or_else(|| {
                NetError::ShapeMismatch(format!("checkpoint is missing parameter {name}"))
            })?;
            if t.dims() != var.dims() {
                return Err(NetError::ShapeMismatch(format!(
                    "parameter {name}: checkpoint shape {:?} vs model {:?}",
                    t.dims(),
                    var.dims()
                )));
            }
            var.set(t)?;
        }
        Ok(())
    }
}

/// Standard normal draw via Box-Muller.
fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u1: f64 = rng.gen();
        if u1 <= f64::MIN_POSITIVE {
            continue;
        }
        let u2: f64 = rng.gen();
        return (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
    }
}

pub struct Conv2d {
    weight: Tensor,
    bias: Option<Tensor>,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let weight = store.param(
            &format!("{name}.weight"),
            &[out_ch, in_ch, kernel, kernel],
            Init::Kaiming {
                fan_in: in_ch * kernel * kernel,
            },
            rng,
        )?;
        let bias = if bias {
            Some(store.param(&format!("{name}.bias"), &[out_ch], Init::Zeros, rng)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(&self.weight, self.padding, self.stride, 1, 1)?;
        match &self.bias {
            Some(b) => {
                let b = b.reshape((1, b.elem_count(), 1, 1))?;
                Ok(y.broadcast_add(&b)?)
            }
            None => Ok(y),
        }
    }
}

pub struct Linear {
    weight: Tensor,
    bias: Option<Tensor>,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        init: Init,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let weight = store.param(&format!("{name}.weight"), &[out_dim, in_dim], init, rng)?;
        let bias = if bias {
            Some(store.param(&format!("{name}.bias"), &[out_dim], Init::Zeros, rng)?)
        } else {
            None
        };
        Ok(Self { weight, bias })
    }

    /// `x` has shape `(.., in_dim)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let wt = self.weight.t()?;
        let y = if x.dims().len() == 2 {
            x.matmul(&wt)?
        } else {
            x.broadcast_matmul(&wt.unsqueeze(0)?)?
        };
        match &self.bias {
            Some(b) => Ok(y.broadcast_add(b)?),
            None => Ok(y),
        }
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }
}

/// Instance normalization without affine parameters: each `(sample,
/// channel)` plane is standardized over its spatial extent.
pub fn instance_norm(x: &Tensor) -> Result<Tensor> {
    let mu = x.mean_keepdim(3)?.mean_keepdim(2)?;
    let centered = x.broadcast_sub(&mu)?;
    let var = centered.sqr()?.mean_keepdim(3)?.mean_keepdim(2)?;
    Ok(centered.broadcast_div(&(var + 1e-5)?.sqrt()?)?)
}

/// Nearest-neighbor 2x upsampling through a broadcast, so gradients flow.
pub fn upsample2x(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    Ok(x
        .reshape((b, c, h, 1, w, 1))?
        .broadcast_as((b, c, h, 2, w, 2))?
        .reshape((b, c, 2 * h, 2 * w))?)
}

/// Row-interpolation matrix for a bilinear resize from `n_in` to `n_out`
/// samples (half-pixel-center convention, edges clamped).
fn interp_matrix(n_in: usize, n_out: usize, device: &Device) -> Result<Tensor> {
    let mut data = vec![0.0f32; n_out * n_in];
    for i in 0..n_out {
        let t = ((i as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5)
            .clamp(0.0, (n_in - 1) as f64);
        let j0 = t.floor() as usize;
        let f = t - j0 as f64;
        data[i * n_in + j0] += (1.0 - f) as f32;
        if j0 + 1 < n_in {
            data[i * n_in + j0 + 1] += f as f32;
        } else {
            data[i * n_in + j0] += f as f32;
        }
    }
    Ok(Tensor::from_vec(data, (n_out, n_in), device)?)
}

/// Bilinear resize of a `(B, C, H, W)` tensor to `(out_h, out_w)`.
pub fn resize_bilinear(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    if (h, w) == (out_h, out_w) {
        return Ok(x.clone());
    }
    let device = x.device();
    let left = interp_matrix(h, out_h, device)?.unsqueeze(0)?;
    let right = interp_matrix(w, out_w, device)?.t()?.unsqueeze(0)?;
    let flat = x.reshape((b * c, h, w))?;
    let rows = left.broadcast_matmul(&flat)?;
    let out = rows.broadcast_matmul(&right)?;
    Ok(out.reshape((b, c, out_h, out_w))?)
}

/// Clamp via min/max selection, so in-range values pass through bitwise and
/// gradients vanish exactly on the clamped side.
pub fn clamp_finite(x: &Tensor, lo: f64, hi: f64) -> Result<Tensor> {
    let lo_t = Tensor::full(lo as f32, (1,), x.device())?;
    let hi_t = Tensor::full(hi as f32, (1,), x.device())?;
    Ok(x.broadcast_maximum(&lo_t)?.broadcast_minimum(&hi_t)?)
}

/// Lower bound only: `max(x, lo)`.
pub fn lower_bound(x: &Tensor, lo: f64) -> Result<Tensor> {
    let lo_t = Tensor::full(lo as f32, (1,), x.device())?;
    Ok(x.broadcast_maximum(&lo_t)?)
}

/// Elementwise arctangent with the exact derivative `1 / (1 + x^2)`.
struct Atan;

impl candle_core::CustomOp1 for Atan {
    fn name(&self) -> &'static str {
        "atan"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let data = storage.as_slice::<f32>()?;
        let out: Vec<f32> = match layout.contiguous_offsets() {
            Some((a, b)) => data[a..b].iter().map(|v| v.atan()).collect(),
            None => candle_core::bail!("atan expects contiguous input"),
        };
        Ok((CpuStorage::F32(out), layout.shape().clone()))
    }

    fn bwd(
        &self,
        arg: &Tensor,
        _res: &Tensor,
        grad_res: &Tensor,
    ) -> candle_core::Result<Option<Tensor>> {
        let denom = (arg.sqr()? + 1.0)?;
        Ok(Some(grad_res.div(&denom)?))
    }
}

pub fn atan(x: &Tensor) -> Result<Tensor> {
    Ok(x.contiguous()?.apply_op1(Atan)?)
}

/// Softmax over dimension 1 restricted to `mask == 1` entries. Rows whose
/// mask is all zero come back as all-zero weights.
pub fn masked_softmax(logits: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let neg = ((mask - 1.0)? * 1e9)?;
    let shifted = (logits + neg)?;
    let mx = shifted.max_keepdim(1)?.detach();
    let e = (shifted.broadcast_sub(&mx)?.exp()? * mask)?;
    let denom = e.sum_keepdim(1)?;
    Ok(e.broadcast_div(&(denom + 1e-12)?)?)
}
