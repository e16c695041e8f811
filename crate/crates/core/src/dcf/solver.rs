//! Per-frequency-bin solver for the multi-sample ridge normal equations.
//!
//! For every bin `k` the unknown is the C-vector of filter coefficients and
//! the system is
//!
//! ```text
//! (Σ_j μ_j x_jk x_jkᴴ + λ² I) w_k = Σ_j μ_j x_jk y_k
//! ```
//!
//! Bins are independent, so each is solved by its own Krylov iteration. The
//! iteration is the conjugate-residual form of conjugate gradients: it takes
//! one operator application per step, terminates in at most C steps in exact
//! arithmetic, and its residual norm never increases.

use rustfft::num_complex::Complex64;

use crate::par;
use crate::spectrum::Spectrum;

const BIN_CHUNK: usize = 128;

/// Weighted sample statistics for a run of bins: the upper triangle of
/// `Σ_j μ_j x_j x_jᴴ` (pairs `a ≤ b` in row order) and `Σ_j μ_j x_j`, both
/// entry-major (entry `e` of bin `i` at `e·n + i`) so every accumulation
/// runs over contiguous bins.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct GramCache {
    channels: usize,
    bins: usize,
    gram: Vec<Complex64>,
    sums: Vec<Complex64>,
}

impl GramCache {
    pub fn zeros(channels: usize, bins: usize) -> Self {
        let zero = Complex64::default();
        Self {
            channels,
            bins,
            gram: vec![zero; channels * (channels + 1) / 2 * bins],
            sums: vec![zero; channels * bins],
        }
    }

    /// Adds `mu` times the statistics of bins `lo..lo + self.bins` of
    /// `sample`. A negative `mu` removes a sample.
    pub fn add(&mut self, sample: &Spectrum, lo: usize, mu: f64) {
        let c = self.channels;
        let n = self.bins;
        let stride = sample.bins();
        let data = sample.data();
        let mut e = 0;
        for a in 0..c {
            let xa = &data[a * stride + lo..a * stride + lo + n];
            for (r, x) in self.sums[a * n..(a + 1) * n].iter_mut().zip(xa) {
                *r += x * mu;
            }
            for b in a..c {
                let xb = &data[b * stride + lo..b * stride + lo + n];
                for ((g, x), z) in self.gram[e * n..(e + 1) * n].iter_mut().zip(xa).zip(xb) {
                    *g += x * z.conj() * mu;
                }
                e += 1;
            }
        }
    }

    pub fn scale(&mut self, f: f64) {
        self.gram
            .iter_mut()
            .chain(self.sums.iter_mut())
            .for_each(|v| *v *= f);
    }

    /// Copies out the statistics of bins `lo..hi`.
    fn slice(&self, lo: usize, hi: usize) -> Self {
        let n = self.bins;
        let take = |v: &[Complex64]| {
            v.chunks_exact(n)
                .flat_map(|e| &e[lo..hi])
                .copied()
                .collect()
        };
        Self {
            channels: self.channels,
            bins: hi - lo,
            gram: take(&self.gram),
            sums: take(&self.sums),
        }
    }
}

/// Number of leading bins a conjugate-symmetric solve touches: rows
/// `0..=h/2`. The remaining rows mirror solved ones.
pub(crate) fn symmetric_bins(height: usize, width: usize) -> usize {
    (height / 2 + 1) * width
}

/// Normal-equation data borrowed from the sample memory.
pub(crate) struct NormalEquations<'a> {
    pub samples: &'a [Spectrum],
    pub weights: &'a [f64],
    /// Precomputed statistics of the first `cache.bins` bins, if available.
    pub cache: Option<&'a GramCache>,
    pub label: &'a [Complex64],
    pub reg: f64,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

/// Convergence record of one solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    /// Largest number of iterations used by any bin.
    pub iterations: usize,
    /// Global residual norm after each iteration; entry 0 is the initial
    /// residual. Bins that have converged contribute their final residual.
    pub residual_history: Vec<f64>,
}

impl SolveReport {
    pub fn initial_residual(&self) -> f64 {
        self.residual_history[0]
    }

    pub fn final_residual(&self) -> f64 {
        *self
            .residual_history
            .last()
            .expect("history is never empty")
    }
}

impl NormalEquations<'_> {
    fn statistics(&self, lo: usize, hi: usize) -> GramCache {
        match self.cache {
            Some(cache) if hi <= cache.bins => cache.slice(lo, hi),
            _ => {
                let mut stats = GramCache::zeros(self.channels, hi - lo);
                for (sample, &mu) in self.samples.iter().zip(self.weights) {
                    stats.add(sample, lo, mu);
                }
                stats
            }
        }
    }
}

#[inline]
fn matvec(g: &[Complex64], v: &[Complex64], out: &mut [Complex64]) {
    for (row, o) in g.chunks_exact(v.len()).zip(out.iter_mut()) {
        *o = row.iter().zip(v).map(|(a, x)| a * x).sum();
    }
}

#[inline]
fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

#[inline]
fn norm_sqr(a: &[Complex64]) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum()
}

/// Solves every bin, starting from `start` (channel-major, `channels·bins`),
/// writing the solution back into it.
///
/// With `real` set, samples, label and start are conjugate-symmetric, so
/// only rows `0..=h/2` are solved and the rest are filled by conjugation.
pub(crate) fn solve(
    eq: &NormalEquations<'_>,
    start: &mut [Complex64],
    max_iterations: usize,
    tolerance: f64,
    real: bool,
) -> SolveReport {
    let c = eq.channels;
    let (h, w) = (eq.height, eq.width);
    let bins = h * w;
    let solved_bins = if real { symmetric_bins(h, w) } else { bins };
    let solved_rows = solved_bins / w;
    // A solved row whose mirror row is filled by conjugation stands for two.
    let multiplicity = |k: usize| {
        let r = k / w;
        if real && r != 0 && 2 * r != h {
            2.0
        } else {
            1.0
        }
    };
    let n_chunks = solved_bins.div_ceil(BIN_CHUNK);

    // Solve chunks of bins independently, then scatter into the channel-major output.
    let results = par::map_range(n_chunks, |chunk| {
        let lo = chunk * BIN_CHUNK;
        let hi = (lo + BIN_CHUNK).min(solved_bins);
        let mut history = vec![0.0; max_iterations + 1];
        let mut solved = Vec::with_capacity((hi - lo) * c);
        let mut used = 0;
        let mut x = vec![Complex64::default(); c];
        let stats = eq.statistics(lo, hi);
        let n = hi - lo;
        let mut g = vec![Complex64::default(); c * c];
        let mut b = vec![Complex64::default(); c];
        for k in lo..hi {
            let i = k - lo;
            for (ch, v) in x.iter_mut().enumerate() {
                *v = start[ch * bins + k];
            }
            let mut e = 0;
            for a in 0..c {
                b[a] = stats.sums[a * n + i] * eq.label[k];
                for col in a..c {
                    let v = stats.gram[e * n + i];
                    g[a * c + col] = v;
                    g[col * c + a] = v.conj();
                    e += 1;
                }
                g[a * c + a].re += eq.reg;
            }
            let (iters, hist) = solve_bin(&g, &b, &mut x, max_iterations, tolerance);
            used = used.max(iters);
            let m = multiplicity(k);
            for (h, r) in history.iter_mut().zip(hist) {
                *h += m * r;
            }
            solved.extend_from_slice(&x);
        }
        (lo, solved, history, used)
    });

    let mut history = vec![0.0; max_iterations + 1];
    let mut iterations = 0;
    for (lo, solved, hist, used) in results {
        for (i, xs) in solved.chunks_exact(c).enumerate() {
            for (ch, v) in xs.iter().enumerate() {
                start[ch * bins + lo + i] = *v;
            }
        }
        for (h, r) in history.iter_mut().zip(hist) {
            *h += r;
        }
        iterations = iterations.max(used);
    }
    for r in solved_rows..h {
        let mr = h - r;
        for col in 0..w {
            let src = mr * w + (w - col) % w;
            for ch in 0..c {
                start[ch * bins + r * w + col] = start[ch * bins + src].conj();
            }
        }
    }
    history.truncate(iterations + 1);
    SolveReport {
        iterations,
        residual_history: history.into_iter().map(f64::sqrt).collect(),
    }
}

/// Conjugate-residual iteration on a single bin. Returns the iteration count
/// and the squared residual after each iteration, padded with the final
/// value to `max_iterations + 1` entries.
fn solve_bin(
    g: &[Complex64],
    b: &[Complex64],
    x: &mut [Complex64],
    max_iterations: usize,
    tolerance: f64,
) -> (usize, Vec<f64>) {
    let c = x.len();
    let zero = Complex64::default();
    let mut ax = vec![zero; c];
    matvec(g, x, &mut ax);
    let mut r: Vec<Complex64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();

    let mut history = Vec::with_capacity(max_iterations + 1);
    let r0 = norm_sqr(&r);
    history.push(r0);
    let stop = tolerance * tolerance * r0;

    let mut ar = vec![zero; c];
    matvec(g, &r, &mut ar);
    let mut p = r.clone();
    let mut ap = ar.clone();
    let mut rar = dot(&r, &ar).re;
    let mut iterations = 0;

    while iterations < max_iterations && *history.last().unwrap() > stop && rar > 0.0 {
        let app = norm_sqr(&ap);
        if app == 0.0 {
            break;
        }
        let alpha = rar / app;
        for i in 0..c {
            x[i] += p[i] * alpha;
            r[i] -= ap[i] * alpha;
        }
        iterations += 1;
        history.push(norm_sqr(&r));

        matvec(g, &r, &mut ar);
        let next = dot(&r, &ar).re;
        let beta = next / rar;
        rar = next;
        for i in 0..c {
            p[i] = r[i] + p[i] * beta;
            ap[i] = ar[i] + ap[i] * beta;
        }
    }
    let last = *history.last().unwrap();
    history.resize(max_iterations + 1, last);
    (iterations, history)
}
