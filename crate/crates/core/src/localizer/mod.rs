//! Fine localizer: template-derived channel attention, exact integral
//! pooling and a linear GIoU regressor over template/proposal interaction
//! features.

mod head;
mod pairs;
mod pool;

use crate::error::{Error, Result};
use crate::features::FeatureStack;
use crate::geometry::BoundingBox;

pub use head::{
    feature_hash, load_head, loss_and_gradient, save_head, score, train_head,
    train_head_with_report, ScorerHead, TrainReport,
};
pub use pairs::{
    sample_pair_geometry, sample_training_pairs, FeatureSource, FrameFeatures, GriddedFeatures,
    PairGeometry, PairSampling, TrainingPair,
};
pub use pool::proi_pool;

/// Output sizes of the two pooling branches.
pub const POOL_SIZES: [usize; 2] = [3, 5];

const ATTENTION_EPS: f64 = 1e-6;

/// Descriptor length for a `channels`-channel stack.
pub fn descriptor_dim(channels: usize) -> usize {
    channels * POOL_SIZES.iter().map(|k| k * k).sum::<usize>()
}

/// Per-channel attention weights, strictly positive with mean 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelWeights(Vec<f64>);

impl ChannelWeights {
    pub fn uniform(channels: usize) -> Self {
        Self(vec![1.0; channels])
    }

    /// Normalizes `raw` to mean 1. Entries must be positive and finite.
    pub fn from_raw(raw: Vec<f64>) -> Result<Self> {
        if raw.is_empty() || raw.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidArgument(
                "channel weights must be positive and finite".into(),
            ));
        }
        let mean = raw.iter().sum::<f64>() / raw.len() as f64;
        Ok(Self(raw.into_iter().map(|w| w / mean).collect()))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Energy ratio of each channel inside vs. outside `target` (grid
/// coordinates; sample `(r, c)` sits at `(c, r)`).
pub fn channel_weights(template: &FeatureStack, target: &BoundingBox) -> ChannelWeights {
    let (c, h, w) = template.dims();
    let mut inside = Vec::new();
    let mut outside = Vec::new();
    for r in 0..h {
        for col in 0..w {
            if target.contains_point(col as f64, r as f64) {
                inside.push(r * w + col);
            } else {
                outside.push(r * w + col);
            }
        }
    }
    if inside.is_empty() || outside.is_empty() {
        return ChannelWeights::uniform(c);
    }
    let mean_abs = |plane: &[f64], idx: &[usize]| {
        idx.iter().map(|&i| plane[i].abs()).sum::<f64>() / idx.len() as f64
    };
    let raw = (0..c)
        .map(|ch| {
            let plane = template.channel(ch);
            (mean_abs(plane, &inside) + ATTENTION_EPS) / (mean_abs(plane, &outside) + ATTENTION_EPS)
        })
        .collect();
    ChannelWeights::from_raw(raw).expect("energy ratios are positive")
}

/// Channel-weighted 3×3 and 5×5 pooled descriptor of `bbox`.
pub fn describe(
    stack: &FeatureStack,
    weights: &ChannelWeights,
    bbox: &BoundingBox,
) -> Result<Vec<f64>> {
    let c = stack.channels();
    if weights.len() != c {
        return Err(Error::mismatch("channel weights", c, weights.len()));
    }
    let mut out = Vec::with_capacity(descriptor_dim(c));
    for k in POOL_SIZES {
        let pooled = proi_pool(stack, bbox, k)?;
        for (ch, block) in pooled.chunks(k * k).enumerate() {
            let wt = weights.as_slice()[ch];
            out.extend(block.iter().map(|v| v * wt));
        }
    }
    Ok(out)
}
