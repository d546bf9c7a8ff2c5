//! Labeled image collections, the IDX loader, and the detection benchmark.

mod benchmark;
mod idx;

pub use benchmark::{
    build_benchmark, AdversarialRecord, BenchmarkSample, BenchmarkSet, GroundTruth, IMAGE_MAGIC,
    MANIFEST_FILE,
};
pub(crate) use benchmark::parse_manifest;
pub use idx::{
    encode_idx_images, encode_idx_labels, load_idx, parse_images, parse_labels, IDX_IMAGES_MAGIC,
    IDX_LABELS_MAGIC,
};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{format_shape, Image, Label};

/// Images paired with labels, all of one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    images: Vec<Image>,
    labels: Vec<Label>,
    provenance: Vec<String>,
}

impl LabeledSet {
    pub fn new(images: Vec<Image>, labels: Vec<Label>, provenance: Vec<String>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::IdxCountMismatch {
                images: images.len(),
                labels: labels.len(),
            });
        }
        let set = Self {
            images,
            labels,
            provenance,
        };
        set.check_uniform_shape()?;
        Ok(set)
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn provenance(&self) -> &[String] {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Image, Label)> {
        self.images.iter().zip(self.labels.iter().copied())
    }

    /// First `n` samples (or all of them when `n` exceeds the length).
    pub fn truncated(&self, n: usize) -> LabeledSet {
        let n = n.min(self.len());
        let mut provenance = self.provenance.clone();
        provenance.push(format!("first {n}"));
        LabeledSet {
            images: self.images[..n].to_vec(),
            labels: self.labels[..n].to_vec(),
            provenance,
        }
    }

    pub(crate) fn check_uniform_shape(&self) -> Result<()> {
        if let Some(first) = self.images.first() {
            if let Some(bad) = self.images.iter().find(|img| img.shape() != first.shape()) {
                return Err(Error::shape(format_shape(first.shape()), format_shape(bad.shape())));
            }
        }
        Ok(())
    }
}

/// Draws `count` images labeled `digit` without replacement, in an order
/// determined by `seed`.
pub fn select_digit(set: &LabeledSet, digit: Label, count: usize, seed: u64) -> Result<LabeledSet> {
    let mut candidates: Vec<usize> = set
        .labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == digit)
        .map(|(i, _)| i)
        .collect();
    if candidates.len() < count {
        return Err(Error::InsufficientImages {
            digit: digit.index(),
            requested: count,
            available: candidates.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (chosen, _) = candidates.partial_shuffle(&mut rng, count);
    let mut provenance = set.provenance.clone();
    provenance.push(format!("select digit={digit} count={count} seed={seed}"));
    Ok(LabeledSet {
        images: chosen.iter().map(|&i| set.images[i].clone()).collect(),
        labels: vec![digit; count],
        provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mixed_set() -> LabeledSet {
        let images = (0..50)
            .map(|i| Image::filled(2, 2, 1, i as f64 / 50.0).unwrap())
            .collect();
        let labels = (0..50).map(|i| Label::new(i % 5).unwrap()).collect();
        LabeledSet::new(images, labels, vec!["mixed".into()]).unwrap()
    }

    #[test]
    fn select_returns_requested_digit_only() {
        let set = mixed_set();
        let three = Label::new(3).unwrap();
        let picked = select_digit(&set, three, 7, 11).unwrap();
        assert_eq!(picked.len(), 7);
        assert!(picked.labels().iter().all(|&l| l == three));
        // every pick is a distinct source image
        let mut values: Vec<u64> = picked.images().iter().map(|i| i.data()[0].to_bits()).collect();
        values.sort_unstable();
        values.dedup();
        assert_eq!(values.len(), 7);
    }

    #[test]
    fn select_is_seeded() {
        let set = mixed_set();
        let d = Label::new(1).unwrap();
        assert_eq!(select_digit(&set, d, 5, 9).unwrap(), select_digit(&set, d, 5, 9).unwrap());
        assert_ne!(
            select_digit(&set, d, 5, 9).unwrap().images(),
            select_digit(&set, d, 5, 10).unwrap().images()
        );
    }

    #[test]
    fn select_zero_and_too_many() {
        let set = mixed_set();
        let d = Label::new(0).unwrap();
        assert!(select_digit(&set, d, 0, 1).unwrap().is_empty());
        let err = select_digit(&set, d, 11, 1).unwrap_err();
        assert!(matches!(err, Error::InsufficientImages { available: 10, .. }));
        assert!(err.to_string().contains("available 10"));
    }

    #[test]
    fn mixed_shapes_are_rejected() {
        let images = vec![Image::filled(2, 2, 1, 0.0).unwrap(), Image::filled(3, 2, 1, 0.0).unwrap()];
        let labels = vec![Label::new(0).unwrap(); 2];
        assert!(matches!(LabeledSet::new(images, labels, vec![]), Err(Error::Shape { .. })));
    }
}
