//! Patch sampling and hand-crafted multi-channel features.
//!
//! Every stack produced here has one normalized grayscale channel followed by
//! [`ORIENTATION_BINS`] gradient-orientation channels, all on one cell grid.

mod external;
mod frame;

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::par;

pub use external::{
    decode_features, encode_features, load_external_features, save_external_features,
};
pub use frame::{Frame, FrameProvider, Patch};

pub const ORIENTATION_BINS: usize = 8;
pub const CHANNELS: usize = 1 + ORIENTATION_BINS;

/// C×H×W real array, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    channels: usize,
    height: usize,
    width: usize,
    cell_size: usize,
    data: Vec<f64>,
}

impl FeatureStack {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            cell_size: 1,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "feature stack dimensions must be positive, got {channels}x{height}x{width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::mismatch(
                "feature stack payload",
                channels * height * width,
                data.len(),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite feature value at element {i}"
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            cell_size: 1,
            data,
        })
    }

    pub fn with_cell_size(mut self, cell_size: usize) -> Self {
        self.cell_size = cell_size.max(1);
        self
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn cell_size(&self) -> usize {
        self.cell_size
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, row: usize, col: usize) -> f64 {
        self.data[(c * self.height + row) * self.width + col]
    }

    /// Copy with every channel multiplied by its own factor.
    pub fn scale_channels(&self, factors: &[f64]) -> Result<Self> {
        if factors.len() != self.channels {
            return Err(Error::mismatch(
                "channel factors",
                self.channels,
                factors.len(),
            ));
        }
        let mut out = self.clone();
        for (c, &f) in factors.iter().enumerate() {
            out.channel_mut(c).iter_mut().for_each(|v| *v *= f);
        }
        Ok(out)
    }
}

/// Feature and region-of-interest settings shared by the coarse and fine stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    /// Patch pixels per feature cell side.
    pub cell_size: usize,
    /// Search-region side as a multiple of the target's geometric-mean side.
    pub search_factor: f64,
    /// Template-region side as a multiple of the target's geometric-mean side.
    pub template_factor: f64,
    pub min_grid: usize,
    pub max_grid: usize,
    /// Cell side of the fine localizer's features; divides `cell_size`.
    pub fine_cell_size: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            cell_size: 4,
            search_factor: 4.0,
            template_factor: 2.0,
            min_grid: 16,
            max_grid: 64,
            fine_cell_size: 1,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("features: {m}")));
        if self.cell_size == 0 {
            return bad("cell_size must be positive");
        }
        if !(self.search_factor > 0.0) || !(self.template_factor > 0.0) {
            return bad("region factors must be positive");
        }
        if self.template_factor > self.search_factor {
            return bad("template_factor must not exceed search_factor");
        }
        if self.min_grid < 4 || self.max_grid < self.min_grid {
            return bad("need 4 <= min_grid <= max_grid");
        }
        if self.fine_cell_size == 0 || !self.cell_size.is_multiple_of(self.fine_cell_size) {
            return bad("fine_cell_size must divide cell_size");
        }
        Ok(())
    }

    /// Feature grid side for a target: the native-resolution cell count of
    /// the search region, rounded to even and clamped to the grid bounds.
    pub fn grid_side(&self, target: &BoundingBox) -> usize {
        let cells = self.search_factor * target.mean_side() / self.cell_size as f64;
        let even = 2 * ((cells / 2.0).round() as usize);
        even.clamp(self.min_grid, self.max_grid)
    }

    /// Template grid side that keeps the template's cell size equal to the
    /// search region's.
    pub fn template_grid_side(&self, search_grid: usize) -> usize {
        let side =
            (search_grid as f64 * self.template_factor / self.search_factor).round() as usize;
        side.max(2)
    }

    /// Grid side of the fine features over the same window as a
    /// `grid`-cell coarse grid.
    pub fn fine_grid(&self, grid: usize) -> usize {
        grid * self.cell_size / self.fine_cell_size
    }

    /// Canonical description of everything a trained scorer depends on.
    pub fn fingerprint(&self) -> String {
        format!(
            "channels={CHANNELS};bins={ORIENTATION_BINS};cell={};fine_cell={};search={};template={};grid={}..{};pool=3+5",
            self.cell_size,
            self.fine_cell_size,
            self.search_factor,
            self.template_factor,
            self.min_grid,
            self.max_grid
        )
    }
}

/// Square sampling window in frame pixels, mapped onto a `grid`×`grid` cell array.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridMapping {
    pub center: (f64, f64),
    pub side: f64,
    pub grid: usize,
}

impl GridMapping {
    pub fn cell_px(&self) -> f64 {
        self.side / self.grid as f64
    }

    pub fn left(&self) -> f64 {
        self.center.0 - 0.5 * self.side
    }

    pub fn top(&self) -> f64 {
        self.center.1 - 0.5 * self.side
    }

    /// Frame-pixel box to feature-grid coordinates, where sample `(r, c)`
    /// sits at the point `(c, r)`.
    pub fn to_grid(&self, b: &BoundingBox) -> Result<BoundingBox> {
        let s = self.cell_px();
        BoundingBox::new(
            (b.x() - self.left()) / s - 0.5,
            (b.y() - self.top()) / s - 0.5,
            b.width() / s,
            b.height() / s,
        )
    }

    /// Frame-pixel position of a grid point.
    pub fn to_frame(&self, col: f64, row: f64) -> (f64, f64) {
        let s = self.cell_px();
        (self.left() + (col + 0.5) * s, self.top() + (row + 0.5) * s)
    }
}

/// Samples a `grid`×`grid` feature stack over `mapping`.
pub fn extract_features(
    frame: &Frame,
    mapping: &GridMapping,
    cell_size: usize,
) -> Result<FeatureStack> {
    let out = mapping.grid * cell_size;
    let side = (mapping.side, mapping.side);
    let taps = SamplingTaps::new(frame, mapping.center, side, 1.0, (out, out))?;
    Ok(gray_channels(&taps.gray(frame), out, out, cell_size))
}

/// Per-row and per-column bilinear taps `(index0, index1, weight of index1)`
/// for resampling a window of a frame.
struct SamplingTaps {
    cols: Vec<(usize, usize, f64)>,
    rows: Vec<(usize, usize, f64)>,
}

impl SamplingTaps {
    fn new(
        frame: &Frame,
        center: (f64, f64),
        size: (f64, f64),
        scale: f64,
        out_size: (usize, usize),
    ) -> Result<Self> {
        let (cx, cy) = center;
        let (fw, fh) = (frame.width() as f64, frame.height() as f64);
        if !(cx >= 0.0 && cx <= fw && cy >= 0.0 && cy <= fh) {
            return Err(Error::TargetLost {
                x: cx,
                y: cy,
                width: frame.width(),
                height: frame.height(),
            });
        }
        if !(scale > 0.0) || !(size.0 > 0.0) || !(size.1 > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "patch size {size:?} and scale {scale} must be positive"
            )));
        }
        let (ow, oh) = out_size;
        if ow == 0 || oh == 0 {
            return Err(Error::InvalidArgument(
                "patch output size must be positive".into(),
            ));
        }
        let (sw, sh) = (size.0 * scale, size.1 * scale);
        let taps = |n: usize, origin: f64, step: f64, max: usize| -> Vec<(usize, usize, f64)> {
            (0..n)
                .map(|j| {
                    let u = origin + (j as f64 + 0.5) * step - 0.5;
                    let u0 = u.floor();
                    (clamp_index(u0, max), clamp_index(u0 + 1.0, max), u - u0)
                })
                .collect()
        };
        Ok(Self {
            cols: taps(ow, cx - 0.5 * sw, sw / ow as f64, frame.width() - 1),
            rows: taps(oh, cy - 0.5 * sh, sh / oh as f64, frame.height() - 1),
        })
    }

    fn rgb(&self, frame: &Frame) -> Vec<f64> {
        let src = frame.pixels();
        let stride = frame.width() * 3;
        let mut data = vec![0.0; self.cols.len() * self.rows.len() * 3];
        for (row, &(y0, y1, t)) in data.chunks_exact_mut(self.cols.len() * 3).zip(&self.rows) {
            let r0 = &src[y0 * stride..][..stride];
            let r1 = &src[y1 * stride..][..stride];
            for (px, &(i0, i1, s)) in row.chunks_exact_mut(3).zip(&self.cols) {
                for ch in 0..3 {
                    let a = r0[i0 * 3 + ch] as f64;
                    let b = r0[i1 * 3 + ch] as f64;
                    let c = r1[i0 * 3 + ch] as f64;
                    let d = r1[i1 * 3 + ch] as f64;
                    let top_row = a + (b - a) * s;
                    let bottom_row = c + (d - c) * s;
                    px[ch] = top_row + (bottom_row - top_row) * t;
                }
            }
        }
        data
    }

    /// Resampled channel mean in `[0, 1]`. Interpolation is linear, so this
    /// equals the gray value of the resampled RGB patch.
    fn gray(&self, frame: &Frame) -> Vec<f64> {
        let src = frame.pixels();
        let w = frame.width();
        let sum = |row: &[u8], i: usize| {
            (row[i * 3] as u32 + row[i * 3 + 1] as u32 + row[i * 3 + 2] as u32) as f64
        };
        let norm = 1.0 / (3.0 * 255.0);
        // Horizontal pass per source row, reused when consecutive output
        // rows share a source row.
        let horizontal = |y: usize, out: &mut Vec<f64>| {
            let r = &src[y * w * 3..][..w * 3];
            out.clear();
            out.extend(self.cols.iter().map(|&(i0, i1, s)| {
                let (a, b) = (sum(r, i0), sum(r, i1));
                a + (b - a) * s
            }));
        };
        let (mut h0, mut h1) = (Vec::new(), Vec::new());
        let (mut k0, mut k1) = (usize::MAX, usize::MAX);
        let mut data = Vec::with_capacity(self.cols.len() * self.rows.len());
        for &(y0, y1, t) in &self.rows {
            if k0 != y0 {
                if k1 == y0 {
                    std::mem::swap(&mut h0, &mut h1);
                    k1 = usize::MAX;
                } else {
                    horizontal(y0, &mut h0);
                }
                k0 = y0;
            }
            if k1 != y1 {
                horizontal(y1, &mut h1);
                k1 = y1;
            }
            data.extend(
                h0.iter()
                    .zip(&h1)
                    .map(|(&top_row, &bottom_row)| (top_row + (bottom_row - top_row) * t) * norm),
            );
        }
        data
    }
}

/// Crops a `size·scale` window centered at `center` and resamples it to
/// `out_size` (width, height) bilinearly. Samples outside the frame replicate
/// the nearest border pixel.
pub fn extract_patch(
    frame: &Frame,
    center: (f64, f64),
    size: (f64, f64),
    scale: f64,
    out_size: (usize, usize),
) -> Result<Patch> {
    let taps = SamplingTaps::new(frame, center, size, scale, out_size)?;
    Ok(Patch::new(out_size.0, out_size.1, taps.rgb(frame)))
}

#[inline]
fn clamp_index(v: f64, max: usize) -> usize {
    if v <= 0.0 {
        0
    } else {
        (v as usize).min(max)
    }
}

/// Grayscale plus soft-binned gradient orientation channels pooled over
/// `cell_size`×`cell_size` cells, each channel mean-subtracted.
pub fn feature_channels(patch: &Patch, cell_size: usize) -> FeatureStack {
    gray_channels(&patch.gray(), patch.width(), patch.height(), cell_size)
}

fn gray_channels(gray: &[f64], pw: usize, ph: usize, cell_size: usize) -> FeatureStack {
    let cell = cell_size.max(1);
    let wf = (pw / cell).max(1);
    let hf = (ph / cell).max(1);
    let plane = hf * wf;
    let mut data = vec![0.0; CHANNELS * plane];
    let bins_per_rad = ORIENTATION_BINS as f64 / PI;

    let col_cell: Vec<usize> = (0..pw).map(|x| (x / cell).min(wf - 1)).collect();
    // Row buffers: gradients first, then magnitude and fractional bin
    // position, computed branch-free so the loops vectorize.
    let mut gx = vec![0.0; pw];
    let mut gy = vec![0.0; pw];
    let mut mag = vec![0.0; pw];
    let mut pos = vec![0.0; pw];
    for y in 0..ph {
        let cy = (y / cell).min(hf - 1);
        let row = &gray[y * pw..(y + 1) * pw];
        let up = &gray[y.saturating_sub(1) * pw..][..pw];
        let down = &gray[(y + 1).min(ph - 1) * pw..][..pw];
        for x in 0..pw {
            gx[x] = 0.5 * (row[(x + 1).min(pw - 1)] - row[x.saturating_sub(1)]);
        }
        for ((g, d), u) in gy.iter_mut().zip(down).zip(up) {
            *g = 0.5 * (d - u);
        }
        for (((m, p), &dx), &dy) in mag.iter_mut().zip(pos.iter_mut()).zip(&gx).zip(&gy) {
            *m = (dx * dx + dy * dy).sqrt();
            *p = unsigned_orientation(dx, dy) * bins_per_rad;
        }
        let cells = &mut data[..plane];
        for (x, &v) in row.iter().enumerate() {
            cells[cy * wf + col_cell[x]] += v;
        }
        for x in 0..pw {
            let m = mag[x];
            if m == 0.0 {
                continue;
            }
            let cidx = cy * wf + col_cell[x];
            let p = pos[x];
            let base = p as usize;
            let frac = p - base as f64;
            let b0 = base.min(ORIENTATION_BINS - 1);
            let b1 = if b0 + 1 == ORIENTATION_BINS {
                0
            } else {
                b0 + 1
            };
            data[(1 + b0) * plane + cidx] += m * (1.0 - frac);
            data[(1 + b1) * plane + cidx] += m * frac;
        }
    }

    // Border pixels beyond the last full cell are folded into it; divide by
    // the actual pixel count per cell.
    let mut row_counts = vec![0.0f64; hf];
    for y in 0..ph {
        row_counts[(y / cell).min(hf - 1)] += 1.0;
    }
    let mut col_counts = vec![0.0f64; wf];
    for &cx in &col_cell {
        col_counts[cx] += 1.0;
    }
    let inv_counts: Vec<f64> = row_counts
        .iter()
        .flat_map(|r| col_counts.iter().map(move |c| 1.0 / (r * c)))
        .collect();
    for ch in data.chunks_exact_mut(plane) {
        for (v, n) in ch.iter_mut().zip(&inv_counts) {
            *v *= n;
        }
        let mean = ch.iter().sum::<f64>() / plane as f64;
        ch.iter_mut().for_each(|v| *v -= mean);
    }
    FeatureStack {
        channels: CHANNELS,
        height: hf,
        width: wf,
        cell_size: cell,
        data,
    }
}

/// Gradient orientation folded into `[0, π)`. Uses an octant-reduced
/// polynomial arctangent (absolute error below 1e-7 rad), far cheaper than
/// `atan2` and well inside the soft binning's resolution.
/// Even-power series for `atan(a)/a - 1` on `[0, 1]` in powers of `a²`
/// (Abramowitz and Stegun).
const ATAN_COEFFS: [f64; 8] = [
    -0.333_331_452_8,
    0.199_935_508_5,
    -0.142_088_994_4,
    0.106_562_639_3,
    -0.075_289_640_0,
    0.042_909_613_8,
    -0.016_165_736_7,
    0.002_866_225_7,
];

#[inline]
fn unsigned_orientation(gx: f64, gy: f64) -> f64 {
    let (ax, ay) = (gx.abs(), gy.abs());
    let a = ax.min(ay) / ax.max(ay);
    let s = a * a;
    let poly = ATAN_COEFFS.iter().rev().fold(0.0, |acc, &c| acc * s + c);
    let r = a * (1.0 + s * poly);
    let r = if ay > ax { FRAC_PI_2 - r } else { r };
    // Orientation is unsigned, so only the relative sign of the components
    // matters: opposite signs put the gradient in the second quadrant.
    let r = if (gx < 0.0) != (gy < 0.0) { PI - r } else { r };
    if r >= PI {
        0.0
    } else {
        r
    }
}

/// One-dimensional raised-cosine taper: 1 at index `n / 2`, 0 at both ends.
pub fn hann_taper(n: usize) -> Vec<f64> {
    if n <= 2 {
        let mut w = vec![0.0; n];
        if n > 0 {
            w[n / 2] = 1.0;
        }
        return w;
    }
    let c = n / 2;
    let right = (n - 1 - c) as f64;
    (0..n)
        .map(|i| {
            if i <= c {
                0.5 * (1.0 - (PI * i as f64 / c as f64).cos())
            } else {
                0.5 * (1.0 - (PI * (n - 1 - i) as f64 / right).cos())
            }
        })
        .collect()
}

/// Multiplies every channel by the separable 2-D raised-cosine window.
pub fn apply_window(stack: &FeatureStack) -> FeatureStack {
    let wy = hann_taper(stack.height);
    let wx = hann_taper(stack.width);
    let mut out = stack.clone();
    let w = stack.width;
    for c in 0..stack.channels {
        for (idx, v) in out.channel_mut(c).iter_mut().enumerate() {
            *v *= wy[idx / w] * wx[idx % w];
        }
    }
    out
}

/// Rescales the whole stack so its mean squared value per grid cell, summed
/// over channels, is 1. An all-zero stack is returned unchanged.
pub fn normalize_energy(stack: &FeatureStack) -> FeatureStack {
    let energy: f64 = stack.data.iter().map(|v| v * v).sum();
    let mut out = stack.clone();
    if energy > 0.0 {
        let scale = (stack.plane_len() as f64 / energy).sqrt();
        out.data.iter_mut().for_each(|v| *v *= scale);
    }
    out
}

/// Relative window sizes searched around the current scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ScalePyramid {
    factors: Vec<f64>,
}

impl TryFrom<Vec<f64>> for ScalePyramid {
    type Error = Error;

    fn try_from(factors: Vec<f64>) -> Result<Self> {
        Self::new(factors)
    }
}

impl From<ScalePyramid> for Vec<f64> {
    fn from(p: ScalePyramid) -> Self {
        p.factors
    }
}

impl ScalePyramid {
    pub fn new(factors: Vec<f64>) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("scale pyramid: {m}")));
        if factors.is_empty() || factors.len().is_multiple_of(2) {
            return bad(format!(
                "need an odd number of levels, got {}",
                factors.len()
            ));
        }
        if factors.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return bad("factors must be positive and finite".into());
        }
        if factors.windows(2).any(|w| w[1] <= w[0]) {
            return bad("factors must be strictly increasing".into());
        }
        if factors[factors.len() / 2] != 1.0 {
            return bad("middle factor must be exactly 1.0".into());
        }
        Ok(Self { factors })
    }

    /// `levels` factors `step^k` for `k = -(levels-1)/2 ..= (levels-1)/2`.
    pub fn geometric(levels: usize, step: f64) -> Result<Self> {
        if !(step > 1.0) {
            return Err(Error::InvalidArgument(format!(
                "pyramid step {step} must exceed 1"
            )));
        }
        let half = levels as i32 / 2;
        Self::new((0..levels as i32).map(|k| step.powi(k - half)).collect())
    }

    pub fn factors(&self) -> &[f64] {
        &self.factors
    }

    pub fn levels(&self) -> usize {
        self.factors.len()
    }

    /// 1-based index of the unit level.
    pub fn center_index(&self) -> usize {
        self.factors.len() / 2 + 1
    }

    /// Factor of a 1-based level.
    pub fn factor(&self, index: usize) -> f64 {
        self.factors[index - 1]
    }
}

impl Default for ScalePyramid {
    fn default() -> Self {
        Self::geometric(5, 1.05).expect("default pyramid is valid")
    }
}

/// Feature stacks for every pyramid level around `center`, each level's
/// window `base_side · factor` wide.
pub fn extract_pyramid(
    frame: &Frame,
    center: (f64, f64),
    base_side: f64,
    grid: usize,
    pyramid: &ScalePyramid,
    cell_size: usize,
) -> Result<Vec<(GridMapping, FeatureStack)>> {
    par::map(pyramid.factors(), |&f| {
        let mapping = GridMapping {
            center,
            side: base_side * f,
            grid,
        };
        extract_features(frame, &mapping, cell_size).map(|s| (mapping, s))
    })
    .into_iter()
    .collect()
}
