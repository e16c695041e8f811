//! Per-channel 2-D discrete Fourier transforms.

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::features::FeatureStack;
use crate::par;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    })
}

/// Unnormalized in-place 2-D FFT of a row-major `height`×`width` plane.
pub fn fft2_in_place(plane: &mut [Complex64], height: usize, width: usize, inverse: bool) {
    debug_assert_eq!(plane.len(), height * width);
    let rows = plan(width, inverse);
    rows.process(plane);
    let cols = plan(height, inverse);
    let mut column = vec![Complex64::default(); height];
    for c in 0..width {
        for r in 0..height {
            column[r] = plane[r * width + c];
        }
        cols.process(&mut column);
        for r in 0..height {
            plane[r * width + c] = column[r];
        }
    }
}

/// C×H×W complex array, channel-major.
#[derive(Debug, Clone)]
pub struct Spectrum {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<Complex64>,
    // Known to be the transform of real data, so bin `-k` holds the
    // conjugate of bin `k`. Lets solvers skip half the bins.
    real: bool,
}

impl PartialEq for Spectrum {
    fn eq(&self, other: &Self) -> bool {
        self.dims() == other.dims() && self.data == other.data
    }
}

impl Spectrum {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![Complex64::default(); channels * height * width],
            real: true,
        }
    }

    pub fn from_vec(
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<Complex64>,
    ) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::mismatch(
                "spectrum payload",
                channels * height * width,
                data.len(),
            ));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
            real: false,
        })
    }

    /// Marks the payload as conjugate-symmetric. Only for data built from
    /// operations that preserve symmetry of symmetric inputs.
    pub(crate) fn assume_real(mut self, real: bool) -> Self {
        self.real = real;
        self
    }

    /// True when the spectrum is known to come from real data.
    pub fn is_real(&self) -> bool {
        self.real
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn bins(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        self.real = false;
        &mut self.data
    }

    pub fn channel(&self, c: usize) -> &[Complex64] {
        let n = self.bins();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }

    /// Inverse transform of every channel, normalized so that
    /// `inverse(to_spectrum(x)) == x`.
    pub fn inverse(&self) -> Vec<Vec<Complex64>> {
        let (h, w) = (self.height, self.width);
        let scale = 1.0 / (h * w) as f64;
        par::map_range(self.channels, |c| {
            let mut plane = self.channel(c).to_vec();
            fft2_in_place(&mut plane, h, w, true);
            plane.iter_mut().for_each(|v| *v *= scale);
            plane
        })
    }
}

pub fn to_spectrum(stack: &FeatureStack) -> Spectrum {
    let (c, h, w) = stack.dims();
    let planes = par::map_range(c, |ch| {
        let mut plane: Vec<Complex64> = stack
            .channel(ch)
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .collect();
        fft2_in_place(&mut plane, h, w, false);
        plane
    });
    Spectrum {
        channels: c,
        height: h,
        width: w,
        data: planes.concat(),
        real: true,
    }
}

/// Forward transform of a single real plane.
pub fn plane_spectrum(plane: &[f64], height: usize, width: usize) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = plane.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2_in_place(&mut buf, height, width, false);
    buf
}

/// Normalized inverse transform of a single plane.
pub fn plane_inverse(spectrum: &[Complex64], height: usize, width: usize) -> Vec<Complex64> {
    let mut buf = spectrum.to_vec();
    fft2_in_place(&mut buf, height, width, true);
    let scale = 1.0 / (height * width) as f64;
    buf.iter_mut().for_each(|v| *v *= scale);
    buf
}
