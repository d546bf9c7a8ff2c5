//! Low-pass "sieve" filters: Gaussian smoothing and median filtering with
//! replicate (edge-clamp) borders.

use std::fmt;

use crate::error::{Error, Result};
use crate::image::Image;

/// Odd, positive filter window side length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct KernelSize(usize);

impl KernelSize {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 || k % 2 == 0 {
            return Err(Error::InvalidKernel(format!("kernel size must be odd and positive, got {k}")));
        }
        Ok(Self(k))
    }

    pub fn get(self) -> usize {
        self.0
    }

    pub fn radius(self) -> usize {
        self.0 / 2
    }

    /// Default Gaussian σ for the detector's window sizes: 0.8 for 3×3 and
    /// 1.1 for 5×5; other sizes scale as `(k - 1) / 2.5`.
    pub fn default_sigma(self) -> f64 {
        match self.0 {
            3 => 0.8,
            5 => 1.1,
            k => (k - 1) as f64 / 2.5,
        }
    }
}

impl fmt::Display for KernelSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Continuous 2-D Gaussian density `exp(-(i²+j²)/2σ²) / 2πσ²`.
pub fn gaussian_density(i: f64, j: f64, sigma: f64) -> f64 {
    (-(i * i + j * j) / (2.0 * sigma * sigma)).exp() / (2.0 * std::f64::consts::PI * sigma * sigma)
}

/// Square Gaussian kernel sampled at integer offsets and renormalized to unit
/// mass (the continuous normalizer does not make a discrete window sum to 1).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel {
    size: KernelSize,
    sigma: f64,
    weights: Vec<f64>,
}

pub fn gaussian_kernel(size: KernelSize, sigma: f64) -> Result<GaussianKernel> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::InvalidKernel(format!("sigma must be positive, got {sigma}")));
    }
    let k = size.get();
    let r = size.radius() as f64;
    let mut weights = Vec::with_capacity(k * k);
    for row in 0..k {
        for col in 0..k {
            weights.push(gaussian_density(row as f64 - r, col as f64 - r, sigma));
        }
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidKernel(format!("sigma {sigma} underflows the kernel")));
    }
    for w in &mut weights {
        *w /= total;
    }
    Ok(GaussianKernel {
        size,
        sigma,
        weights,
    })
}

impl GaussianKernel {
    pub fn size(&self) -> KernelSize {
        self.size
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Row-major `k × k` weights.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.size.get() + col]
    }
}

fn check_fits(x: &Image, size: KernelSize) -> Result<()> {
    if size.get() > x.height() || size.get() > x.width() {
        return Err(Error::InvalidKernel(format!(
            "{k}x{k} kernel larger than {}x{} image",
            x.height(),
            x.width(),
            k = size.get()
        )));
    }
    Ok(())
}

#[inline]
fn clamp_index(base: usize, offset: usize, radius: usize, len: usize) -> usize {
    (base + offset).saturating_sub(radius).min(len - 1)
}

/// Per-channel correlation with replicate padding, without clamping the result.
pub fn correlate(x: &Image, kernel: &GaussianKernel) -> Result<Vec<f64>> {
    check_fits(x, kernel.size)?;
    let (h, w, c) = x.shape();
    let k = kernel.size.get();
    let r = kernel.size.radius();
    let mut out = vec![0.0; x.len()];
    for row in 0..h {
        for col in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for u in 0..k {
                    let src_row = clamp_index(row, u, r, h);
                    for v in 0..k {
                        let src_col = clamp_index(col, v, r, w);
                        acc += kernel.weight(u, v) * x.get(src_row, src_col, ch);
                    }
                }
                out[(row * w + col) * c + ch] = acc;
            }
        }
    }
    Ok(out)
}

/// Gaussian smoothing; output clamped to `[0, 1]`.
pub fn gaussian_filter(x: &Image, kernel: &GaussianKernel) -> Result<Image> {
    let (h, w, c) = x.shape();
    Image::from_clamped(h, w, c, correlate(x, kernel)?)
}

/// Replaces each pixel by the median of its `k × k` replicate-padded
/// neighborhood, per channel. `k²` is odd so the median is a single element.
pub fn median_filter(x: &Image, size: KernelSize) -> Result<Image> {
    check_fits(x, size)?;
    let (h, w, c) = x.shape();
    let k = size.get();
    let r = size.radius();
    let mid = k * k / 2;
    let mut window = Vec::with_capacity(k * k);
    let mut out = vec![0.0; x.len()];
    for row in 0..h {
        for col in 0..w {
            for ch in 0..c {
                window.clear();
                for u in 0..k {
                    let src_row = clamp_index(row, u, r, h);
                    for v in 0..k {
                        window.push(x.get(src_row, clamp_index(col, v, r, w), ch));
                    }
                }
                let (_, median, _) = window.select_nth_unstable_by(mid, f64::total_cmp);
                out[(row * w + col) * c + ch] = *median;
            }
        }
    }
    Image::new(h, w, c, out)
}

/// A filtering pass applied before the sieve-side classification.
pub trait Sieve: Send + Sync {
    fn kernel_size(&self) -> KernelSize;
    fn apply(&self, x: &Image) -> Result<Image>;
}

#[derive(Debug, Clone)]
pub struct GaussianSieve(pub GaussianKernel);

impl Sieve for GaussianSieve {
    fn kernel_size(&self) -> KernelSize {
        self.0.size()
    }

    fn apply(&self, x: &Image) -> Result<Image> {
        gaussian_filter(x, &self.0)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MedianSieve(pub KernelSize);

impl Sieve for MedianSieve {
    fn kernel_size(&self) -> KernelSize {
        self.0
    }

    fn apply(&self, x: &Image) -> Result<Image> {
        median_filter(x, self.0)
    }
}
