//! Residual backbone in the ResNet-34 pattern: a two-conv stem replacing
//! the 7x7 layer, then stages of two-conv basic blocks with instance
//! normalization. The stem downsamples by 4 and every stage after the first
//! by 2, so three stages land at 1/16 resolution.

use candle_core::Tensor;
use rand_chacha::ChaCha8Rng;

use super::layers::{instance_norm, Conv2d, ParamStore, Result};

pub struct BasicBlock {
    conv1: Conv2d,
    conv2: Conv2d,
    shortcut: Option<Conv2d>,
}

impl BasicBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        stride: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let conv1 = Conv2d::new(
            store,
            &format!("{name}.conv1"),
            in_ch,
            out_ch,
            3,
            stride,
            1,
            false,
            rng,
        )?;
        let conv2 = Conv2d::new(
            store,
            &format!("{name}.conv2"),
            out_ch,
            out_ch,
            3,
            1,
            1,
            false,
            rng,
        )?;
        let shortcut = if stride != 1 || in_ch != out_ch {
            Some(Conv2d::new(
                store,
                &format!("{name}.shortcut"),
                in_ch,
                out_ch,
                1,
                stride,
                0,
                false,
                rng,
            )?)
        } else {
            None
        };
        Ok(Self {
            conv1,
            conv2,
            shortcut,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = instance_norm(&self.conv1.forward(x)?)?.relu()?;
        let y = instance_norm(&self.conv2.forward(&y)?)?;
        let residual = match &self.shortcut {
            Some(s) => instance_norm(&s.forward(x)?)?,
            None => x.clone(),
        };
        Ok((y + residual)?.relu()?)
    }
}

/// Stage widths and block counts for a backbone.
#[derive(Debug, Clone, Copy)]
pub struct StagePlan {
    pub channels: usize,
    pub blocks: usize,
}

pub struct Backbone {
    stem1: Conv2d,
    stem2: Conv2d,
    stages: Vec<Vec<BasicBlock>>,
}

impl Backbone {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        stem_ch: usize,
        plan: &[StagePlan],
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let stem1 = Conv2d::new(
            store,
            &format!("{name}.stem1"),
            in_ch,
            stem_ch,
            3,
            2,
            1,
            false,
            rng,
        )?;
        let stem2 = Conv2d::new(
            store,
            &format!("{name}.stem2"),
            stem_ch,
            stem_ch,
            3,
            2,
            1,
            false,
            rng,
        )?;
        let mut stages = Vec::with_capacity(plan.len());
        let mut prev = stem_ch;
        for (si, stage) in plan.iter().enumerate() {
            let mut blocks = Vec::with_capacity(stage.blocks);
            for bi in 0..stage.blocks {
                let stride = if si > 0 && bi == 0 { 2 } else { 1 };
                let in_ch = if bi == 0 { prev } else { stage.channels };
                blocks.push(BasicBlock::new(
                    store,
                    &format!("{name}.stage{si}.block{bi}"),
                    in_ch,
                    stage.channels,
                    stride,
                    rng,
                )?);
            }
            prev = stage.channels;
            stages.push(blocks);
        }
        Ok(Self {
            stem1,
            stem2,
            stages,
        })
    }

    /// Runs the backbone and returns every stage output, shallow to deep.
    pub fn forward(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut y = instance_norm(&self.stem1.forward(x)?)?.relu()?;
        y = instance_norm(&self.stem2.forward(&y)?)?.relu()?;
        let mut outputs = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            for block in stage {
                y = block.forward(&y)?;
            }
            outputs.push(y.clone());
        }
        Ok(outputs)
    }

    /// Closed-form parameter count for this backbone configuration.
    #[cfg(test)]
    pub fn expected_params(in_ch: usize, stem_ch: usize, plan: &[StagePlan]) -> usize {
        let mut total = in_ch * stem_ch * 9 + stem_ch * stem_ch * 9;
        let mut prev = stem_ch;
        for (si, stage) in plan.iter().enumerate() {
            for bi in 0..stage.blocks {
                let stride = if si > 0 && bi == 0 { 2 } else { 1 };
                let input = if bi == 0 { prev } else { stage.channels };
                total += input * stage.channels * 9 + stage.channels * stage.channels * 9;
                if stride != 1 || input != stage.channels {
                    total += input * stage.channels;
                }
            }
            prev = stage.channels;
        }
        total
    }
}
