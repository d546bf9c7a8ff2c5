//! Sample representation shared by every stage: images, labels and class
//! probability vectors.

use std::fmt;

use crate::error::{Error, Result};

/// Number of classes of the digit task.
pub const NUM_CLASSES: usize = 10;

/// Height × width × channels grid of intensities in `[0, 1]`, row-major with
/// channels innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidImage(format!(
                "dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::shape(
                format!("{} values for {height}x{width}x{channels}", height * width * channels),
                format!("{} values", data.len()),
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::InvalidImage(format!(
                "pixel {pos} = {} outside [0, 1]",
                data[pos]
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds an image from values that may leave `[0, 1]`, clamping each one.
    /// NaN is rejected.
    pub fn from_clamped(height: usize, width: usize, channels: usize, mut data: Vec<f64>) -> Result<Self> {
        if let Some(pos) = data.iter().position(|v| v.is_nan()) {
            return Err(Error::InvalidImage(format!("pixel {pos} is NaN")));
        }
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Self::new(height, width, channels, data)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    /// Single-channel image from raw 8-bit intensities.
    pub fn from_bytes(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        let data = bytes.iter().map(|&b| f64::from(b) / 255.0).collect();
        Self::new(height, width, 1, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub(crate) fn ensure_same_shape(&self, other: &Image) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                format_shape(self.shape()),
                format_shape(other.shape()),
            ));
        }
        Ok(())
    }
}

pub(crate) fn format_shape((h, w, c): (usize, usize, usize)) -> String {
    format!("{h}x{w}x{c}")
}

/// Class index in `[0, NUM_CLASSES)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Label(u8);

impl Label {
    pub fn new(index: usize) -> Result<Self> {
        if index >= NUM_CLASSES {
            return Err(Error::InvalidLabel {
                index,
                classes: NUM_CLASSES,
            });
        }
        Ok(Self(index as u8))
    }

    pub fn index(self) -> usize {
        usize::from(self.0)
    }

    /// All labels of the task in ascending order.
    pub fn all() -> impl Iterator<Item = Label> {
        (0..NUM_CLASSES as u8).map(Label)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Softmax output of the classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector([f64; NUM_CLASSES]);

impl ProbVector {
    /// Wraps probabilities; they must lie in `[0, 1]` and sum to 1 within 1e-6.
    pub fn new(probs: [f64; NUM_CLASSES]) -> Result<Self> {
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidImage(format!(
                "not a probability vector (sum {sum})"
            )));
        }
        Ok(Self(probs))
    }

    /// Numerically stable softmax of raw logits.
    pub fn softmax(logits: &[f64; NUM_CLASSES]) -> Self {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut out = [0.0; NUM_CLASSES];
        let mut sum = 0.0;
        for (o, &z) in out.iter_mut().zip(logits) {
            *o = (z - max).exp();
            sum += *o;
        }
        for o in &mut out {
            *o /= sum;
        }
        Self(out)
    }

    pub fn probs(&self) -> &[f64; NUM_CLASSES] {
        &self.0
    }

    pub fn prob(&self, label: Label) -> f64 {
        self.0[label.index()]
    }

    /// Highest-probability class; ties go to the lowest index.
    pub fn argmax(&self) -> Label {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate().skip(1) {
            if p > self.0[best] {
                best = i;
            }
        }
        Label(best as u8)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_pixels() {
        assert!(Image::new(1, 2, 1, vec![0.5, 1.5]).is_err());
        assert!(Image::new(1, 2, 1, vec![0.5, f64::NAN]).is_err());
        assert!(Image::new(1, 2, 1, vec![0.5]).is_err());
        assert!(Image::new(0, 2, 1, vec![]).is_err());
    }

    #[test]
    fn byte_normalization_endpoints() {
        let img = Image::from_bytes(1, 3, &[0, 255, 51]).unwrap();
        assert_eq!(img.data(), &[0.0, 1.0, 0.2]);
    }

    #[test]
    fn label_bounds() {
        assert!(Label::new(9).is_ok());
        assert!(Label::new(10).is_err());
    }

    #[test]
    fn argmax_ties_pick_lowest_index() {
        let p = ProbVector::new([0.0, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(p.argmax().index(), 1);
        let uniform = ProbVector::softmax(&[0.0; NUM_CLASSES]);
        assert_eq!(uniform.argmax().index(), 0);
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let mut z = [0.0; NUM_CLASSES];
        z[3] = 1e4;
        let p = ProbVector::softmax(&z);
        assert_eq!(p.prob(Label::new(3).unwrap()), 1.0);
        assert!(p.probs().iter().all(|v| v.is_finite()));
    }
}
