//! The tracking loop: correlation-filter coarse estimate, Gaussian
//! proposals around it, fine ranking against the first-frame template,
//! then a filter update at the chosen state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dcf::{
    detect_spectrum, gaussian_label, label_sigma, select_scale, train_filter, update_filter,
    DcfConfig, FrequencyFilter, GaussianLabel, LevelResponse, ResponseMap, SampleMemory,
};
use crate::error::{Error, Result};
use crate::features::{
    apply_window, extract_features, extract_pyramid, normalize_energy, FeatureConfig, FeatureStack,
    Frame, GridMapping, ScalePyramid,
};
use crate::geometry::{BoundingBox, TargetState};
use crate::localizer::{
    channel_weights, describe, sample_training_pairs, score, train_head, ChannelWeights,
    FrameFeatures, PairSampling, ScorerHead,
};
use crate::par;
use crate::spectrum::{to_spectrum, Spectrum};

/// How a scorer head is fitted on the first frame when none is supplied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BootstrapConfig {
    pub sampling: PairSampling,
    pub steps: usize,
    pub step_size: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            sampling: PairSampling {
                frame_pairs: 32,
                center_sigma: 0.05,
                log_scale_sigma: 0.05,
                ..PairSampling::default()
            },
            steps: 3000,
            step_size: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerConfig {
    pub dcf: DcfConfig,
    pub features: FeatureConfig,
    pub pyramid: ScalePyramid,
    /// Proposals per frame, including the unperturbed coarse box.
    pub n_proposals: usize,
    /// Proposal center noise as a fraction of the box diagonal.
    pub proposal_pos_sigma: f64,
    pub proposal_scale_sigma: f64,
    /// Responses of pyramid level `k` steps from the unit level are
    /// multiplied by `scale_penalty^k` before the scale is selected.
    pub scale_penalty: f64,
    pub seed: u64,
    /// Coarse peaks below this value flag the frame as low-confidence.
    pub confidence_floor: f64,
    /// Re-train the filter every this many frames.
    pub update_interval: usize,
    /// When false the coarse estimate is emitted as is.
    pub fine_stage: bool,
    pub bootstrap: BootstrapConfig,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            dcf: DcfConfig::default(),
            features: FeatureConfig::default(),
            pyramid: ScalePyramid::default(),
            n_proposals: 64,
            proposal_pos_sigma: 0.05,
            proposal_scale_sigma: 0.03,
            scale_penalty: 0.98,
            seed: 0,
            confidence_floor: 0.1,
            update_interval: 1,
            fine_stage: true,
            bootstrap: BootstrapConfig::default(),
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        self.dcf.validate()?;
        self.features.validate()?;
        self.bootstrap.sampling.validate()?;
        let bad = |m: &str| Err(Error::InvalidArgument(format!("tracker: {m}")));
        if self.n_proposals == 0 {
            return bad("n_proposals must be at least 1");
        }
        if !(self.proposal_pos_sigma > 0.0 && self.proposal_scale_sigma > 0.0) {
            return bad("proposal sigmas must be positive");
        }
        if !(self.scale_penalty > 0.0 && self.scale_penalty <= 1.0) {
            return bad("scale_penalty must lie in (0, 1]");
        }
        if self.update_interval == 0 {
            return bad("update_interval must be at least 1");
        }
        if !(self.bootstrap.step_size > 0.0) {
            return bad("bootstrap step_size must be positive");
        }
        Ok(())
    }
}

/// `n_proposals` boxes around `coarse`: index 0 is the coarse box itself,
/// the rest have Gaussian center offsets and a log-normal size factor.
pub fn sample_proposals(
    coarse: &TargetState,
    config: &TrackerConfig,
    rng: &mut impl Rng,
) -> Vec<BoundingBox> {
    let b = coarse.bbox;
    let (cx, cy) = b.center();
    let pos = config.proposal_pos_sigma * b.diagonal();
    let mut out = Vec::with_capacity(config.n_proposals);
    out.push(b);
    while out.len() < config.n_proposals {
        let n: [f64; 3] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let s = (config.proposal_scale_sigma * n[2]).exp();
        out.push(
            BoundingBox::from_center(
                cx + pos * n[0],
                cy + pos * n[1],
                b.width() * s,
                b.height() * s,
            )
            .expect("finite positive perturbation of a valid box"),
        );
    }
    out
}

/// Result of one tracking step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub state: TargetState,
    pub coarse: TargetState,
    /// Coarse response peak.
    pub peak: f64,
    pub low_confidence: bool,
    /// Index of the winning proposal (0 is the coarse box).
    pub proposal: usize,
}

#[derive(Debug, Clone)]
pub struct TrackerState {
    config: TrackerConfig,
    filter: FrequencyFilter,
    memory: SampleMemory,
    label: GaussianLabel,
    grid: usize,
    channel_wts: ChannelWeights,
    template_desc: Vec<f64>,
    head: ScorerHead,
    last_state: TargetState,
    frame_dims: (usize, usize),
    frames_seen: usize,
    rng: ChaCha8Rng,
}

fn check_inside(frame: &Frame, b: &BoundingBox) -> Result<()> {
    let (cx, cy) = b.center();
    let (w, h) = (frame.width() as f64, frame.height() as f64);
    if !(0.0..=w).contains(&cx) || !(0.0..=h).contains(&cy) {
        return Err(Error::TargetLost {
            x: cx,
            y: cy,
            width: frame.width(),
            height: frame.height(),
        });
    }
    Ok(())
}

fn dcf_sample(stack: &FeatureStack) -> Spectrum {
    to_spectrum(&normalize_energy(&apply_window(stack)))
}

impl TrackerState {
    /// Trains the initial filter and template at `gt`. Without a `head` one
    /// is fitted on proposals drawn around `gt` in this frame.
    pub fn init(
        frame: &Frame,
        gt: BoundingBox,
        config: TrackerConfig,
        head: Option<ScorerHead>,
    ) -> Result<Self> {
        config.validate()?;
        check_inside(frame, &gt)?;
        let fc = &config.features;
        let grid = fc.grid_side(&gt);
        let mapping = Self::window(&config, &gt, grid);
        let stack = extract_features(frame, &mapping, fc.cell_size)?;
        let target_cells = gt.mean_side() / mapping.cell_px();
        let label = gaussian_label((grid, grid), label_sigma(&config.dcf, target_cells), (0, 0))?;
        let mut memory = SampleMemory::new(config.dcf.memory_capacity)?;
        memory.insert(dcf_sample(&stack), config.dcf.sample_decay)?;
        let (filter, _) = train_filter(&memory, &label, &config.dcf, None)?;

        let tpl_mapping = GridMapping {
            center: gt.center(),
            side: fc.template_factor * gt.mean_side(),
            grid: fc.fine_grid(fc.template_grid_side(grid)),
        };
        let tpl = extract_features(frame, &tpl_mapping, fc.fine_cell_size)?;
        let tpl_box = tpl_mapping.to_grid(&gt)?;
        let channel_wts = channel_weights(&tpl, &tpl_box);
        let template_desc = describe(&tpl, &channel_wts, &tpl_box)?;

        let head = match head {
            Some(h) if h.descriptor_dim() != template_desc.len() => {
                return Err(Error::mismatch(
                    "scorer head",
                    template_desc.len(),
                    h.descriptor_dim(),
                ))
            }
            Some(h) => h,
            // The head is never consulted without the fine stage.
            None if !config.fine_stage => ScorerHead::zeros(template_desc.len()),
            None => Self::bootstrap_head(frame, &gt, &config)?,
        };

        Ok(Self {
            last_state: TargetState::new(
                gt,
                config.pyramid.center_index(),
                config.pyramid.levels(),
            )?,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            frame_dims: (frame.width(), frame.height()),
            frames_seen: 1,
            config,
            filter,
            memory,
            label,
            grid,
            channel_wts,
            template_desc,
            head,
        })
    }

    fn bootstrap_head(
        frame: &Frame,
        gt: &BoundingBox,
        config: &TrackerConfig,
    ) -> Result<ScorerHead> {
        let frames = [frame.clone(), frame.clone()];
        let source = FrameFeatures::new(&frames[..], config.features.clone())?;
        let bs = &config.bootstrap;
        let pairs = sample_training_pairs(&[*gt, *gt], &source, &bs.sampling, config.seed)?;
        train_head(&pairs, bs.steps, bs.step_size)
    }

    fn window(config: &TrackerConfig, b: &BoundingBox, grid: usize) -> GridMapping {
        GridMapping {
            center: b.center(),
            side: config.features.search_factor * b.mean_side(),
            grid,
        }
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn last_state(&self) -> &TargetState {
        &self.last_state
    }

    pub fn filter(&self) -> &FrequencyFilter {
        &self.filter
    }

    pub fn memory(&self) -> &SampleMemory {
        &self.memory
    }

    pub fn head(&self) -> &ScorerHead {
        &self.head
    }

    pub fn channel_weights(&self) -> &ChannelWeights {
        &self.channel_wts
    }

    pub fn template_descriptor(&self) -> &[f64] {
        &self.template_desc
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    /// Coarse estimate for `frame` around the last state.
    pub fn coarse(
        &self,
        frame: &Frame,
    ) -> Result<(TargetState, f64, Vec<(GridMapping, FeatureStack)>)> {
        let last = self.last_state.bbox;
        let fc = &self.config.features;
        let levels = extract_pyramid(
            frame,
            last.center(),
            fc.search_factor * last.mean_side(),
            self.grid,
            &self.config.pyramid,
            fc.cell_size,
        )?;
        let center = self.config.pyramid.center_index() - 1;
        let responses = par::map_range(levels.len(), |k| {
            let (mapping, stack) = &levels[k];
            let response = detect_spectrum(&self.filter, &dcf_sample(stack))?;
            let response = if k == center {
                response
            } else {
                let p = self.config.scale_penalty.powi(k.abs_diff(center) as i32);
                let data = response.data().iter().map(|v| v * p).collect();
                ResponseMap::from_vec(response.height(), response.width(), data)?
            };
            Ok(LevelResponse {
                mapping: *mapping,
                response,
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let (coarse, peak) = select_scale(&responses, &self.config.pyramid, &last)?;
        Ok((coarse, peak, levels))
    }

    /// Runs one frame: coarse estimate, fine ranking, model update.
    pub fn step(&mut self, frame: &Frame) -> Result<StepOutput> {
        if (frame.width(), frame.height()) != self.frame_dims {
            return Err(Error::mismatch(
                "frame size",
                format!("{}x{}", self.frame_dims.0, self.frame_dims.1),
                format!("{}x{}", frame.width(), frame.height()),
            ));
        }
        let (coarse, peak, levels) = self.coarse(frame)?;
        let mut low_confidence = peak < self.config.confidence_floor;

        let (mut chosen, proposal) = if self.config.fine_stage {
            let proposals = sample_proposals(&coarse, &self.config, &mut self.rng);
            let fc = &self.config.features;
            let level = levels[coarse.scale_index - 1].0;
            let mapping = &GridMapping {
                grid: fc.fine_grid(level.grid),
                ..level
            };
            let stack = &extract_features(frame, mapping, fc.fine_cell_size)?;
            let scores = par::map(&proposals, |p| -> Result<f64> {
                let Ok(grid_box) = mapping.to_grid(p) else {
                    return Ok(f64::NEG_INFINITY);
                };
                match describe(stack, &self.channel_wts, &grid_box) {
                    Ok(d) => score(&self.head, &self.template_desc, &d),
                    Err(Error::BoxOutsideGrid { .. }) => Ok(f64::NEG_INFINITY),
                    Err(e) => Err(e),
                }
            });
            let mut best = (0, f64::NEG_INFINITY);
            for (i, s) in scores.into_iter().enumerate() {
                let s = s?;
                if s > best.1 {
                    best = (i, s);
                }
            }
            (
                TargetState {
                    bbox: proposals[best.0],
                    ..coarse
                },
                best.0,
            )
        } else {
            (coarse, 0)
        };

        // Keep the window center on the frame so the next crop stays valid.
        let (cx, cy) = chosen.bbox.center();
        let (w, h) = (frame.width() as f64, frame.height() as f64);
        if !(0.0..=w).contains(&cx) || !(0.0..=h).contains(&cy) {
            chosen.bbox = chosen
                .bbox
                .with_center(cx.clamp(0.0, w), cy.clamp(0.0, h))?;
            low_confidence = true;
        }

        self.frames_seen += 1;
        if (self.frames_seen - 1).is_multiple_of(self.config.update_interval) {
            self.update(frame, &chosen.bbox)?;
        }
        self.last_state = chosen;
        Ok(StepOutput {
            state: chosen,
            coarse,
            peak,
            low_confidence,
            proposal,
        })
    }

    fn update(&mut self, frame: &Frame, at: &BoundingBox) -> Result<()> {
        let mapping = Self::window(&self.config, at, self.grid);
        let stack = extract_features(frame, &mapping, self.config.features.cell_size)?;
        let dcf = &self.config.dcf;
        self.memory.insert(dcf_sample(&stack), dcf.sample_decay)?;
        let (fresh, _) = train_filter(&self.memory, &self.label, dcf, Some(&self.filter))?;
        self.filter = update_filter(&self.filter, &fresh, dcf.learning_rate)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests;
