//! Fixtures shared by the criterion benches.

use natgrad_core::harness::{make_synthetic, SyntheticKind};
use natgrad_core::{Activation, BatchCache, Matrix, Network};

/// One regression batch pushed through a tanh net: the network, its batch
/// cache with output gradients filled in, and the mean gradients.
pub struct StepFixture {
    pub net: Network,
    pub cache: BatchCache,
    pub grads: Vec<Matrix>,
}

impl StepFixture {
    /// `depth` hidden layers of `width` units on `input_dim` features.
    pub fn new(depth: usize, width: usize, input_dim: usize, batch_size: usize) -> Self {
        let ds = make_synthetic(SyntheticKind::LinregGaussian, batch_size, input_dim, 0).expect("synthetic data");
        let mut sizes = vec![input_dim];
        sizes.extend(std::iter::repeat_n(width, depth));
        sizes.push(1);
        let net = Network::seeded(&sizes, Activation::Tanh, ds.task.head(), 0).expect("network");
        let (_, mut cache) = net.forward(&ds.x).expect("forward");
        let grads = net.backward(&mut cache, &ds.y).expect("backward");
        StepFixture { net, cache, grads }
    }

    pub fn params(&self) -> usize {
        self.net.param_count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_shapes() {
        let f = StepFixture::new(2, 5, 3, 16);
        assert_eq!(f.params(), 4 * 5 + 6 * 5 + 6);
        assert_eq!(f.cache.batch_size(), 16);
        assert_eq!(f.grads.len(), 3);
    }
}
