//! Discriminative correlation filter: frequency-domain ridge regression over
//! a weighted memory of past samples, detection by multi-channel circular
//! correlation, and the online update rules.
//!
//! The score of a filter `W` on a sample `X` is, per frequency bin,
//! `Σ_c conj(X_c)·W_c`; in the spatial domain this is the circular
//! cross-correlation `r[τ] = Σ_c Σ_n x_c[n]·w_c[n + τ]`.

mod solver;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureStack, GridMapping, ScalePyramid};
use crate::geometry::{BoundingBox, TargetState};
use crate::par;
use crate::spectrum::{self, plane_inverse, Spectrum};

pub use solver::SolveReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DcfConfig {
    /// Tikhonov weight; the penalty is `λ²‖W‖²`.
    pub lambda: f64,
    /// Iteration budget for a cold start (no previous filter).
    pub cg_init_iterations: usize,
    /// Iteration budget when warm-started from the previous filter.
    pub cg_iterations: usize,
    pub cg_tolerance: f64,
    pub memory_capacity: usize,
    pub sample_decay: f64,
    /// Label σ as a fraction of the target side (in cells).
    pub label_sigma_factor: f64,
    pub learning_rate: f64,
}

impl Default for DcfConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            cg_init_iterations: 50,
            cg_iterations: 5,
            cg_tolerance: 1e-6,
            memory_capacity: 30,
            sample_decay: 0.02,
            label_sigma_factor: 1.0 / 16.0,
            learning_rate: 0.01,
        }
    }
}

impl DcfConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("dcf: {m}")));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be finite and >= 0");
        }
        if self.cg_init_iterations == 0 || self.cg_iterations == 0 {
            return bad("iteration budgets must be positive");
        }
        if !(self.cg_tolerance > 0.0) {
            return bad("cg_tolerance must be positive");
        }
        if self.memory_capacity == 0 {
            return bad("memory_capacity must be positive");
        }
        if !(self.sample_decay > 0.0 && self.sample_decay < 1.0) {
            return bad("sample_decay must lie in (0, 1)");
        }
        if !(self.label_sigma_factor > 0.0) {
            return bad("label_sigma_factor must be positive");
        }
        if !(0.0..=1.0).contains(&self.learning_rate) {
            return bad("learning_rate must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Desired correlation output: a Gaussian bump with circular distance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLabel {
    height: usize,
    width: usize,
    sigma: f64,
    peak: (usize, usize),
    map: Vec<f64>,
}

impl GaussianLabel {
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn peak(&self) -> (usize, usize) {
        self.peak
    }

    pub fn map(&self) -> &[f64] {
        &self.map
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.map[row * self.width + col]
    }

    pub fn spectrum(&self) -> Vec<Complex64> {
        spectrum::plane_spectrum(&self.map, self.height, self.width)
    }
}

/// Shortest wrapped distance between two indices on a ring of length `n`.
#[inline]
fn ring_distance(a: usize, b: usize, n: usize) -> f64 {
    let d = a.abs_diff(b);
    d.min(n - d) as f64
}

/// `dims` is (rows, cols); `peak` is (row, col).
pub fn gaussian_label(
    dims: (usize, usize),
    sigma: f64,
    peak: (usize, usize),
) -> Result<GaussianLabel> {
    let (h, w) = dims;
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument(
            "label grid must be non-empty".into(),
        ));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "label sigma {sigma} must be positive"
        )));
    }
    if peak.0 >= h || peak.1 >= w {
        return Err(Error::InvalidArgument(format!(
            "label peak {peak:?} outside {h}x{w} grid"
        )));
    }
    let denom = 2.0 * sigma * sigma;
    let map = (0..h * w)
        .map(|i| {
            let dy = ring_distance(i / w, peak.0, h);
            let dx = ring_distance(i % w, peak.1, w);
            (-(dx * dx + dy * dy) / denom).exp()
        })
        .collect();
    Ok(GaussianLabel {
        height: h,
        width: w,
        sigma,
        peak,
        map,
    })
}

/// Learned filter coefficients, one spectrum per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyFilter {
    coeffs: Spectrum,
}

impl FrequencyFilter {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            coeffs: Spectrum::zeros(channels, height, width),
        }
    }

    pub fn from_spectrum(coeffs: Spectrum) -> Result<Self> {
        if coeffs
            .data()
            .iter()
            .any(|v| !(v.re.is_finite() && v.im.is_finite()))
        {
            return Err(Error::InvalidArgument(
                "filter coefficients must be finite".into(),
            ));
        }
        Ok(Self { coeffs })
    }

    /// Filter whose spatial taps are the given real stack.
    pub fn from_spatial(taps: &FeatureStack) -> Self {
        Self {
            coeffs: spectrum::to_spectrum(taps),
        }
    }

    pub fn coeffs(&self) -> &Spectrum {
        &self.coeffs
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.coeffs.dims()
    }

    pub fn norm(&self) -> f64 {
        self.coeffs.norm_sqr().sqrt()
    }
}

/// Weighted training samples (feature spectra). Weights are positive and
/// sum to one after every insertion.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMemory {
    capacity: usize,
    samples: Vec<Spectrum>,
    weights: Vec<f64>,
    // Running weighted statistics over the bins a symmetric solve needs,
    // kept while every sample is real. Evicted samples are subtracted; the
    // rounding this leaves is damped by the decay on every insertion.
    cache: Option<solver::GramCache>,
}

impl SampleMemory {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument(
                "memory capacity must be positive".into(),
            ));
        }
        Ok(Self {
            capacity,
            samples: Vec::with_capacity(capacity),
            weights: Vec::with_capacity(capacity),
            cache: None,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Spectrum] {
        &self.samples
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Inserts `sample` with weight `decay` after scaling the existing
    /// weights by `1 - decay`. When full, the lowest-weight sample (the
    /// oldest among equals) is evicted first and the survivors renormalized.
    pub fn insert(&mut self, sample: Spectrum, decay: f64) -> Result<()> {
        if !(decay > 0.0 && decay < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "sample decay {decay} outside (0, 1)"
            )));
        }
        if let Some(first) = self.samples.first() {
            if first.dims() != sample.dims() {
                return Err(Error::mismatch(
                    "memory sample",
                    format!("{:?}", first.dims()),
                    format!("{:?}", sample.dims()),
                ));
            }
        }
        if sample
            .data()
            .iter()
            .any(|v| !(v.re.is_finite() && v.im.is_finite()))
        {
            return Err(Error::InvalidArgument(
                "memory sample must be finite".into(),
            ));
        }
        if self.samples.is_empty() {
            self.cache = sample.is_real().then(|| {
                let (c, h, w) = sample.dims();
                let mut cache = solver::GramCache::zeros(c, solver::symmetric_bins(h, w));
                cache.add(&sample, 0, 1.0);
                cache
            });
            self.samples.push(sample);
            self.weights.push(1.0);
            return Ok(());
        }
        if !sample.is_real() {
            self.cache = None;
        }
        if self.samples.len() == self.capacity {
            let victim = self.weights.iter().enumerate().fold(0, |best, (i, &w)| {
                if w < self.weights[best] {
                    i
                } else {
                    best
                }
            });
            let removed = self.samples.remove(victim);
            let mu = self.weights.remove(victim);
            let total = normalize(&mut self.weights);
            if let Some(cache) = &mut self.cache {
                cache.add(&removed, 0, -mu);
                cache.scale(1.0 / total);
            }
        }
        self.weights.iter_mut().for_each(|w| *w *= 1.0 - decay);
        self.weights.push(decay);
        let total = normalize(&mut self.weights);
        if let Some(cache) = &mut self.cache {
            cache.scale(1.0 - decay);
            cache.add(&sample, 0, decay);
            cache.scale(1.0 / total);
        }
        self.samples.push(sample);
        Ok(())
    }
}

/// Rescales to unit sum and returns the previous sum (1 if it was zero).
fn normalize(weights: &mut [f64]) -> f64 {
    let total: f64 = weights.iter().sum();
    if total > 0.0 {
        weights.iter_mut().for_each(|w| *w /= total);
        total
    } else {
        1.0
    }
}

/// Functional form of [`SampleMemory::insert`].
pub fn update_memory(
    memory: &SampleMemory,
    new_sample: Spectrum,
    decay: f64,
) -> Result<SampleMemory> {
    let mut next = memory.clone();
    next.insert(new_sample, decay)?;
    Ok(next)
}

/// Solves the weighted ridge problem
/// `Σ_j μ_j ‖Σ_c conj(X_jc)·W_c − Y‖² + λ²‖W‖²` bin by bin.
///
/// A cold start uses `cg_init_iterations`; a warm start from `warm_start`
/// uses `cg_iterations`.
pub fn train_filter(
    memory: &SampleMemory,
    label: &GaussianLabel,
    config: &DcfConfig,
    warm_start: Option<&FrequencyFilter>,
) -> Result<(FrequencyFilter, SolveReport)> {
    let first = memory
        .samples()
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot train on an empty sample memory".into()))?;
    let (c, h, w) = first.dims();
    if label.dims() != (h, w) {
        return Err(Error::mismatch(
            "label grid",
            format!("{h}x{w}"),
            format!("{:?}", label.dims()),
        ));
    }
    let (mut start, budget) = match warm_start {
        Some(f) if f.dims() != (c, h, w) => {
            return Err(Error::mismatch(
                "warm-start filter",
                format!("{:?}", (c, h, w)),
                format!("{:?}", f.dims()),
            ))
        }
        Some(f) => (f.coeffs.data().to_vec(), config.cg_iterations),
        None => (
            vec![Complex64::default(); c * h * w],
            config.cg_init_iterations,
        ),
    };
    let label_spec = label.spectrum();
    // Real samples and a real start keep every iterate conjugate-symmetric.
    let real = memory.samples().iter().all(Spectrum::is_real)
        && warm_start.is_none_or(|f| f.coeffs.is_real());
    let eq = solver::NormalEquations {
        samples: memory.samples(),
        weights: memory.weights(),
        cache: memory.cache.as_ref().filter(|_| real),
        label: &label_spec,
        reg: config.lambda * config.lambda,
        channels: c,
        height: h,
        width: w,
    };
    let report = solver::solve(&eq, &mut start, budget, config.cg_tolerance, real);
    let coeffs = Spectrum::from_vec(c, h, w, start)?.assume_real(real);
    Ok((FrequencyFilter { coeffs }, report))
}

/// Real-valued correlation response over the search grid. Index `(0, 0)`
/// is zero displacement; a peak at index `p` means the target moved by `-p`
/// (circularly wrapped).
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ResponseMap {
    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width || data.is_empty() {
            return Err(Error::mismatch("response map", height * width, data.len()));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    /// Index and value of the maximum; the smallest index wins ties.
    pub fn argmax(&self) -> (usize, f64) {
        self.data.iter().enumerate().fold(
            (0, self.data[0]),
            |best, (i, &v)| if v > best.1 { (i, v) } else { best },
        )
    }

    /// Target displacement in cells (rows, cols) implied by response index `idx`.
    pub fn displacement(&self, idx: usize) -> (f64, f64) {
        let wrap = |i: usize, n: usize| {
            if i <= n / 2 {
                i as f64
            } else {
                i as f64 - n as f64
            }
        };
        let (r, c) = (idx / self.width, idx % self.width);
        (-wrap(r, self.height), -wrap(c, self.width))
    }
}

/// Correlates `stack` with `filter`: `Re(IFFT(Σ_c conj(Z_c)·W_c))`.
pub fn detect(filter: &FrequencyFilter, stack: &FeatureStack) -> Result<ResponseMap> {
    if filter.dims() != stack.dims() {
        return Err(Error::mismatch(
            "detection features",
            format!("{:?}", filter.dims()),
            format!("{:?}", stack.dims()),
        ));
    }
    let z = spectrum::to_spectrum(stack);
    detect_spectrum(filter, &z)
}

pub fn detect_spectrum(filter: &FrequencyFilter, z: &Spectrum) -> Result<ResponseMap> {
    if filter.dims() != z.dims() {
        return Err(Error::mismatch(
            "detection spectrum",
            format!("{:?}", filter.dims()),
            format!("{:?}", z.dims()),
        ));
    }
    let (c, h, w) = z.dims();
    let n = h * w;
    let mut acc = vec![Complex64::default(); n];
    for ch in 0..c {
        for ((a, x), f) in acc
            .iter_mut()
            .zip(z.channel(ch))
            .zip(filter.coeffs.channel(ch))
        {
            *a += x.conj() * f;
        }
    }
    let data = plane_inverse(&acc, h, w)
        .into_iter()
        .map(|v| v.re)
        .collect();
    ResponseMap::from_vec(h, w, data)
}

/// One pyramid level's detection result, with the window it was sampled from.
#[derive(Debug, Clone)]
pub struct LevelResponse {
    pub mapping: GridMapping,
    pub response: ResponseMap,
}

/// Picks the global maximum over all levels and maps it back to frame
/// pixels. `previous` is the box the pyramid was built around; the chosen
/// level's factor rescales it. Ties go to the factor closest to 1, then to
/// the smallest grid index (zero displacement).
pub fn select_scale(
    levels: &[LevelResponse],
    pyramid: &ScalePyramid,
    previous: &BoundingBox,
) -> Result<(TargetState, f64)> {
    if levels.is_empty() {
        return Err(Error::InvalidArgument(
            "select_scale needs at least one response".into(),
        ));
    }
    if levels.len() != pyramid.levels() {
        return Err(Error::mismatch(
            "pyramid responses",
            pyramid.levels(),
            levels.len(),
        ));
    }
    let mut order: Vec<usize> = (0..levels.len()).collect();
    let factors = pyramid.factors();
    order.sort_by(|&a, &b| {
        (factors[a] - 1.0)
            .abs()
            .total_cmp(&(factors[b] - 1.0).abs())
            .then(a.cmp(&b))
    });

    let mut best: Option<(usize, usize, f64)> = None;
    for &lvl in &order {
        let (idx, value) = levels[lvl].response.argmax();
        if best.is_none_or(|(_, _, v)| value > v) {
            best = Some((lvl, idx, value));
        }
    }
    let (lvl, idx, value) = best.expect("at least one level");
    let level = &levels[lvl];
    let (dr, dc) = level.response.displacement(idx);
    let cell = level.mapping.cell_px();
    let (cx, cy) = level.mapping.center;
    let factor = factors[lvl];
    let bbox = BoundingBox::from_center(
        cx + dc * cell,
        cy + dr * cell,
        previous.width() * factor,
        previous.height() * factor,
    )?;
    Ok((TargetState::new(bbox, lvl + 1, pyramid.levels())?, value))
}

/// `(1 − lr)·previous + lr·fresh`, element-wise.
pub fn update_filter(
    previous: &FrequencyFilter,
    fresh: &FrequencyFilter,
    lr: f64,
) -> Result<FrequencyFilter> {
    if previous.dims() != fresh.dims() {
        return Err(Error::mismatch(
            "filter update",
            format!("{:?}", previous.dims()),
            format!("{:?}", fresh.dims()),
        ));
    }
    if !(0.0..=1.0).contains(&lr) {
        return Err(Error::InvalidArgument(format!(
            "learning rate {lr} outside [0, 1]"
        )));
    }
    let data = previous
        .coeffs
        .data()
        .iter()
        .zip(fresh.coeffs.data())
        .map(|(p, f)| p * (1.0 - lr) + f * lr)
        .collect();
    let (c, h, w) = previous.dims();
    let real = previous.coeffs.is_real() && fresh.coeffs.is_real();
    Ok(FrequencyFilter {
        coeffs: Spectrum::from_vec(c, h, w, data)?.assume_real(real),
    })
}

/// Spectra of several stacks at once.
pub fn spectra(stacks: &[FeatureStack]) -> Vec<Spectrum> {
    par::map(stacks, spectrum::to_spectrum)
}

/// Label σ in cells: `label_sigma_factor` times the target's
/// geometric-mean side measured in cells.
pub fn label_sigma(config: &DcfConfig, target_cells: f64) -> f64 {
    config.label_sigma_factor * target_cells
}
