//! Training-pair sampling: template/search frame pairs within a maximum
//! gap, Gaussian proposals around the search-frame ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{channel_weights, describe};
use crate::error::{Error, Result};
use crate::features::{extract_features, FeatureConfig, FeatureStack, FrameProvider, GridMapping};
use crate::geometry::{giou, BoundingBox};
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairSampling {
    pub max_gap: usize,
    /// Proposals per template/search frame pair.
    pub n_proposals: usize,
    pub min_giou: f64,
    /// Center noise as a fraction of the box diagonal.
    pub center_sigma: f64,
    pub log_scale_sigma: f64,
    pub max_rejections: usize,
    /// Template/search frame pairs drawn per sequence.
    pub frame_pairs: usize,
    /// Gaussian offset of the search-window center from the search-frame
    /// ground truth, as a fraction of the box's mean side.
    pub search_jitter: f64,
}

impl Default for PairSampling {
    fn default() -> Self {
        Self {
            max_gap: 50,
            n_proposals: 16,
            min_giou: 0.1,
            center_sigma: 0.1,
            log_scale_sigma: 0.2,
            max_rejections: 100,
            frame_pairs: 64,
            search_jitter: 0.1,
        }
    }
}

impl PairSampling {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("pair sampling: {m}")));
        if self.max_gap == 0 {
            return bad("max_gap must be at least 1");
        }
        if self.n_proposals == 0 || self.frame_pairs == 0 {
            return bad("n_proposals and frame_pairs must be positive");
        }
        if !(-1.0..=1.0).contains(&self.min_giou) {
            return bad("min_giou must lie in [-1, 1]");
        }
        if !(self.center_sigma >= 0.0 && self.log_scale_sigma >= 0.0 && self.search_jitter >= 0.0) {
            return bad("noise sigmas must be non-negative");
        }
        Ok(())
    }
}

/// One template/search frame pair and its proposals (0-based frames).
#[derive(Debug, Clone, PartialEq)]
pub struct PairGeometry {
    pub template_frame: usize,
    pub search_frame: usize,
    /// Box the search window is centered on.
    pub search_anchor: BoundingBox,
    pub proposals: Vec<BoundingBox>,
    pub targets: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub template_desc: Vec<f64>,
    pub proposal_desc: Vec<f64>,
    pub proposal: BoundingBox,
    pub ground_truth: BoundingBox,
    /// `giou(proposal, ground_truth)`.
    pub target: f64,
}

fn jitter(gt: &BoundingBox, cfg: &PairSampling, rng: &mut ChaCha8Rng) -> BoundingBox {
    let diag = gt.diagonal();
    let (cx, cy) = gt.center();
    for _ in 0..=cfg.max_rejections {
        let n: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let cand = BoundingBox::from_center(
            cx + cfg.center_sigma * diag * n[0],
            cy + cfg.center_sigma * diag * n[1],
            gt.width() * (cfg.log_scale_sigma * n[2]).exp(),
            gt.height() * (cfg.log_scale_sigma * n[3]).exp(),
        );
        if let Ok(b) = cand {
            if giou(&b, gt) >= cfg.min_giou {
                return b;
            }
        }
    }
    *gt
}

/// Frame pairs and proposal boxes for one sequence. Pair `i` draws from
/// its own stream of the seeded generator, so the result does not depend
/// on evaluation order.
pub fn sample_pair_geometry(
    annotations: &[BoundingBox],
    cfg: &PairSampling,
    seed: u64,
) -> Result<Vec<PairGeometry>> {
    cfg.validate()?;
    let len = annotations.len();
    if len < 2 {
        return Err(Error::InvalidArgument(format!(
            "pair sampling needs at least 2 annotated frames, got {len}"
        )));
    }
    Ok(par::map_range(cfg.frame_pairs, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let t = rng.random_range(0..len);
        let lo = t.saturating_sub(cfg.max_gap);
        let hi = (t + cfg.max_gap).min(len - 1);
        // Uniform over the window without `t` itself.
        let mut s = rng.random_range(lo..hi);
        if s >= t {
            s += 1;
        }
        let gt = annotations[s];
        let jitter_px = cfg.search_jitter * gt.mean_side();
        let (jx, jy): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
        let search_anchor = gt
            .translated(jitter_px * jx, jitter_px * jy)
            .expect("finite offset of a valid box");
        let proposals: Vec<BoundingBox> = (0..cfg.n_proposals)
            .map(|_| jitter(&gt, cfg, &mut rng))
            .collect();
        let targets = proposals.iter().map(|p| giou(p, &gt)).collect();
        PairGeometry {
            template_frame: t,
            search_frame: s,
            search_anchor,
            proposals,
            targets,
        }
    }))
}

/// A feature stack with the frame-to-grid mapping it was sampled under.
#[derive(Debug, Clone)]
pub struct GriddedFeatures {
    pub mapping: GridMapping,
    pub stack: FeatureStack,
}

/// Per-frame feature regions around a target box.
pub trait FeatureSource: Sync {
    fn frame_count(&self) -> usize;
    /// Template region: `template_factor`× the target's mean side.
    fn template(&self, frame: usize, target: &BoundingBox) -> Result<GriddedFeatures>;
    /// Search region: `search_factor`× the target's mean side, centered on
    /// `anchor`.
    fn search(
        &self,
        frame: usize,
        target: &BoundingBox,
        anchor: &BoundingBox,
    ) -> Result<GriddedFeatures>;
}

/// Hand-crafted features at the fine cell size, computed on demand from
/// decoded frames.
pub struct FrameFeatures<'a, P: FrameProvider + ?Sized> {
    frames: &'a P,
    config: FeatureConfig,
}

impl<'a, P: FrameProvider + ?Sized> FrameFeatures<'a, P> {
    pub fn new(frames: &'a P, config: FeatureConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { frames, config })
    }

    fn region(
        &self,
        frame: usize,
        target: &BoundingBox,
        center: (f64, f64),
        factor: f64,
        grid: usize,
    ) -> Result<GriddedFeatures> {
        let mapping = GridMapping {
            center,
            side: factor * target.mean_side(),
            grid: self.config.fine_grid(grid),
        };
        let f = self.frames.frame(frame)?;
        let stack = extract_features(&f, &mapping, self.config.fine_cell_size)?;
        Ok(GriddedFeatures { mapping, stack })
    }
}

impl<P: FrameProvider + ?Sized> FeatureSource for FrameFeatures<'_, P> {
    fn frame_count(&self) -> usize {
        self.frames.frame_count()
    }

    fn template(&self, frame: usize, target: &BoundingBox) -> Result<GriddedFeatures> {
        let grid = self
            .config
            .template_grid_side(self.config.grid_side(target));
        self.region(
            frame,
            target,
            target.center(),
            self.config.template_factor,
            grid,
        )
    }

    fn search(
        &self,
        frame: usize,
        target: &BoundingBox,
        anchor: &BoundingBox,
    ) -> Result<GriddedFeatures> {
        let grid = self.config.grid_side(target);
        self.region(
            frame,
            target,
            anchor.center(),
            self.config.search_factor,
            grid,
        )
    }
}

/// Samples pair geometry and describes every proposal against its
/// template. Output order follows [`sample_pair_geometry`].
pub fn sample_training_pairs<S: FeatureSource + ?Sized>(
    annotations: &[BoundingBox],
    features: &S,
    cfg: &PairSampling,
    seed: u64,
) -> Result<Vec<TrainingPair>> {
    if features.frame_count() != annotations.len() {
        return Err(Error::mismatch(
            "annotated frames",
            annotations.len(),
            features.frame_count(),
        ));
    }
    let geometry = sample_pair_geometry(annotations, cfg, seed)?;
    let per_pair = par::map(&geometry, |g| -> Result<Vec<TrainingPair>> {
        let gt_t = annotations[g.template_frame];
        let gt_s = annotations[g.search_frame];
        let tpl = features.template(g.template_frame, &gt_t)?;
        let tpl_box = tpl.mapping.to_grid(&gt_t)?;
        let weights = channel_weights(&tpl.stack, &tpl_box);
        let template_desc = describe(&tpl.stack, &weights, &tpl_box)?;
        let search = features.search(g.search_frame, &gt_s, &g.search_anchor)?;
        g.proposals
            .iter()
            .zip(&g.targets)
            .map(|(p, &target)| {
                let proposal_desc = describe(&search.stack, &weights, &search.mapping.to_grid(p)?)?;
                Ok(TrainingPair {
                    template_desc: template_desc.clone(),
                    proposal_desc,
                    proposal: *p,
                    ground_truth: gt_s,
                    target,
                })
            })
            .collect()
    });
    let mut out = Vec::with_capacity(geometry.len() * cfg.n_proposals);
    for pairs in per_pair {
        out.extend(pairs?);
    }
    Ok(out)
}
