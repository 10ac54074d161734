//! Deterministic parameter initialization.

use rand::Rng;
use visocc_core::rng::{keyed_rng, Stream};

use crate::layers::LinearLayer;
use crate::Real;

/// Kaiming-uniform fan-in weights with the `a = √5` leaky gain used by common
/// framework defaults, i.e. `U(−1/√fan_in, 1/√fan_in)`, and zero
/// biases. Values are drawn in 64-bit and depend only on `(seed, layer_index)`.
pub fn kaiming_uniform<T: Real>(
    inputs: usize,
    outputs: usize,
    seed: u64,
    layer_index: u64,
) -> LinearLayer<T> {
    let mut layer = LinearLayer::zeros(inputs, outputs);
    let bound = 1.0 / (inputs.max(1) as f64).sqrt();
    let mut rng = keyed_rng(seed, Stream::Init, layer_index);
    for w in layer.weight.data_mut() {
        *w = T::from_f64(rng.random_range(-bound..bound));
    }
    layer
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounded_keyed_and_zero_bias() {
        let a = kaiming_uniform::<f64>(24, 16, 7, 2);
        let bound = 1.0 / 24f64.sqrt();
        assert!(a.weight.data().iter().all(|w| w.abs() < bound));
        assert!(a.bias.iter().all(|&b| b == 0.0));
        assert_eq!(a, kaiming_uniform(24, 16, 7, 2));
        assert_ne!(a, kaiming_uniform(24, 16, 7, 3));
        let f32_layer = kaiming_uniform::<f32>(24, 16, 7, 2);
        assert_eq!(f32_layer, a.cast::<f32>());
    }
}
