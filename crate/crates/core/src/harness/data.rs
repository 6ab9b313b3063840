//! Dataset loading and deterministic batching for the trainer.
//!
//! Batch order is a pure function of `(seed, step)`: each epoch's
//! permutation is drawn from a generator seeded by the epoch index, so a
//! resumed run sees exactly the batches the uninterrupted run would have.

use crate::geometry::BBox;
use crate::losses::shape_target;
use crate::network::BatchInputs;
use crate::synthdata::{read_dataset, DataError, ShadowTuple};
use candle_core::{Device, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

use super::HarnessError;

/// One tuple flattened into tensor-ready buffers.
pub struct PreparedTuple {
    pub id: String,
    pub i_c: Vec<f32>,
    pub m_fo: Vec<f32>,
    pub m_bo: Vec<f32>,
    pub m_bs: Vec<f32>,
    pub i_g: Vec<f32>,
    pub m_fs: Vec<f32>,
    pub m_s: Vec<f32>,
    pub b_o: BBox,
    pub b_s: BBox,
}

pub struct PreparedDataset {
    pub resolution: usize,
    pub shape_size: usize,
    pub tuples: Vec<PreparedTuple>,
}

fn image_chw(img: &crate::synthdata::Image) -> Vec<f32> {
    let (h, w) = img.resolution();
    let mut out = Vec::with_capacity(3 * h * w);
    for ch in 0..3 {
        for r in 0..h {
            for c in 0..w {
                out.push(img.data()[(r, c, ch)]);
            }
        }
    }
    out
}

pub fn prepare_tuple(
    id: String,
    tuple: &ShadowTuple,
    shape_size: usize,
) -> Result<PreparedTuple, HarnessError> {
    let m_s = shape_target(&tuple.m_fs, &tuple.meta.shadow_box, shape_size)?;
    Ok(PreparedTuple {
        id,
        i_c: image_chw(&tuple.composite),
        m_fo: tuple.m_fo.data().iter().copied().collect(),
        m_bo: tuple.m_bo.data().iter().copied().collect(),
        m_bs: tuple.m_bs.data().iter().copied().collect(),
        i_g: image_chw(&tuple.ground_truth),
        m_fs: tuple.m_fs.data().iter().copied().collect(),
        m_s: m_s.data().iter().copied().collect(),
        b_o: tuple.meta.object_box,
        b_s: tuple.meta.shadow_box,
    })
}

/// Loads a dataset directory and flattens every tuple.
pub fn load_prepared(
    dir: &Path,
    expected_resolution: usize,
    shape_size: usize,
) -> Result<PreparedDataset, HarnessError> {
    let entries = read_dataset(dir)?;
    if entries.is_empty() {
        return Err(HarnessError::Data(DataError::CorruptDataset(format!(
            "dataset at {} holds no tuples",
            dir.display()
        ))));
    }
    let mut tuples = Vec::with_capacity(entries.len());
    for entry in &entries {
        let (h, w) = entry.tuple.composite.resolution();
        if h != expected_resolution || w != expected_resolution {
            return Err(HarnessError::Config(format!(
                "tuple {} is {h}x{w} but the run is configured for {expected_resolution}",
                entry.id
            )));
        }
        tuples.push(prepare_tuple(entry.id.clone(), &entry.tuple, shape_size)?);
    }
    Ok(PreparedDataset {
        resolution: expected_resolution,
        shape_size,
        tuples,
    })
}

/// Permutation of `0..n` for one epoch, a pure function of `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(
        seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(epoch as u64),
    );
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Tuple indices making up one training step's batch.
pub fn batch_indices(n: usize, batch_size: usize, seed: u64, step: usize) -> Vec<usize> {
    let per_epoch = n.div_ceil(batch_size);
    let epoch = step / per_epoch;
    let slot = step % per_epoch;
    let order = epoch_order(n, seed, epoch);
    order[slot * batch_size..((slot + 1) * batch_size).min(n)].to_vec()
}

/// Tensors for one batch: network inputs plus loss targets.
pub struct Batch {
    pub ids: Vec<String>,
    pub inputs: BatchInputs,
    pub b_s: Tensor,
    pub m_s: Tensor,
    pub m_fs: Tensor,
    pub i_g: Tensor,
}

pub fn assemble_batch(
    data: &PreparedDataset,
    indices: &[usize],
    device: &Device,
) -> Result<Batch, HarnessError> {
    let n = data.resolution;
    let s = data.shape_size;
    let b = indices.len();
    let mut i_c = Vec::with_capacity(b * 3 * n * n);
    let mut m_fo = Vec::with_capacity(b * n * n);
    let mut m_bo = Vec::with_capacity(b * n * n);
    let mut m_bs = Vec::with_capacity(b * n * n);
    let mut i_g = Vec::with_capacity(b * 3 * n * n);
    let mut m_fs = Vec::with_capacity(b * n * n);
    let mut m_s = Vec::with_capacity(b * s * s);
    let mut boxes_o = Vec::with_capacity(b);
    let mut boxes_s = Vec::with_capacity(b * 4);
    let mut ids = Vec::with_capacity(b);
    for &i in indices {
        let t = &data.tuples[i];
        ids.push(t.id.clone());
        i_c.extend_from_slice(&t.i_c);
        m_fo.extend_from_slice(&t.m_fo);
        m_bo.extend_from_slice(&t.m_bo);
        m_bs.extend_from_slice(&t.m_bs);
        i_g.extend_from_slice(&t.i_g);
        m_fs.extend_from_slice(&t.m_fs);
        m_s.extend_from_slice(&t.m_s);
        boxes_o.push(t.b_o);
        boxes_s.extend_from_slice(&[
            t.b_s.x as f32,
            t.b_s.y as f32,
            t.b_s.w as f32,
            t.b_s.h as f32,
        ]);
    }
    let inputs = BatchInputs {
        i_c: Tensor::from_vec(i_c, (b, 3, n, n), device).map_err(crate::network::NetError::from)?,
        m_fo: Tensor::from_vec(m_fo, (b, 1, n, n), device)
            .map_err(crate::network::NetError::from)?,
        m_bo: Tensor::from_vec(m_bo, (b, 1, n, n), device)
            .map_err(crate::network::NetError::from)?,
        m_bs: Tensor::from_vec(m_bs, (b, 1, n, n), device)
            .map_err(crate::network::NetError::from)?,
        b_o: boxes_o,
    };
    Ok(Batch {
        ids,
        inputs,
        b_s: Tensor::from_vec(boxes_s, (b, 4), device).map_err(crate::network::NetError::from)?,
        m_s: Tensor::from_vec(m_s, (b, 1, s, s), device)
            .map_err(crate::network::NetError::from)?,
        m_fs: Tensor::from_vec(m_fs, (b, 1, n, n), device)
            .map_err(crate::network::NetError::from)?,
        i_g: Tensor::from_vec(i_g, (b, 3, n, n), device)
            .map_err(crate::network::NetError::from)?,
    })
}
