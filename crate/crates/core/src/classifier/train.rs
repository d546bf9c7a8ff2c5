use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{check_input, softmax_minus_onehot, ClassifierParams, TrainingMetadata};
use crate::dataset::LabeledSet;
use crate::error::{Error, Result};
use crate::image::ProbVector;

/// Mini-batch SGD hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 5,
            batch_size: 32,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Trains the reference architecture from a seeded initialization.
///
/// Batches are visited in an order drawn from `config.seed`, and updates are
/// applied sequentially, so identical inputs give bit-identical parameters.
pub fn train(data: &LabeledSet, config: &TrainConfig) -> Result<ClassifierParams> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    data.check_uniform_shape()?;
    check_input(&data.images()[0])?;

    let mut params = ClassifierParams::init(config.seed);
    // Separate stream so the init and the batch order don't alias.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_ba7c);
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grads = ClassifierParams::zero_grads();
            for &i in batch {
                let x = &data.images()[i];
                let y = data.labels()[i];
                let act = params.forward(x.data());
                let probs = ProbVector::softmax(&act.logits);
                total_loss += super::cross_entropy(&probs, y);
                let dlogits = softmax_minus_onehot(&probs, y);
                params.backward(x.data(), &act, &dlogits, Some(&mut grads));
            }
            let step = config.learning_rate / batch.len() as f64;
            for (tensor, grad) in params.tensors.iter_mut().zip(&grads) {
                for (w, g) in tensor.iter_mut().zip(grad) {
                    *w -= step * g;
                }
            }
        }
        log::info!(
            "epoch {}/{}: mean training loss {:.5}",
            epoch + 1,
            config.epochs,
            total_loss / data.len() as f64
        );
    }
    if params.tensors.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Config(
            "training diverged to non-finite weights; lower the learning rate".into(),
        ));
    }
    params.metadata = TrainingMetadata {
        epochs_trained: config.epochs as u32,
        test_accuracy: None,
    };
    Ok(params)
}

/// Fraction of `data` whose argmax prediction equals its label.
pub fn accuracy(params: &ClassifierParams, data: &LabeledSet) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0usize;
    for (x, &y) in data.images().iter().zip(data.labels()) {
        if params.predict(x)? == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}
