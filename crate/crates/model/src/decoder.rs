//! Occupancy and intensity decoder: a 4-layer MLP on `z_s ⊕ (q − s)`.

use visocc_nn::init::kaiming_uniform;
use visocc_nn::layers::{relu_backward, relu_forward};
use visocc_nn::{LinearLayer, Real, Tensor2};

use crate::encoder::LATENT_DIM;
use crate::Result;

/// Decoder input width: latent plus relative query coordinates.
pub const DECODER_INPUT: usize = LATENT_DIM + 3;
const HIDDEN: usize = 128;
/// Output channel 0 is the occupancy logit, channel 1 the raw intensity.
pub const DECODER_OUTPUT: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct Decoder<T> {
    pub layers: [LinearLayer<T>; 4],
}

#[derive(Clone, Debug)]
pub struct DecoderCache<T> {
    x: Tensor2<T>,
    a: [Tensor2<T>; 3],
}

impl<T: Real> Decoder<T> {
    /// Kaiming-initialized decoder; layers use init keys `first_layer..first_layer + 4`.
    pub fn init(seed: u64, first_layer: u64) -> Self {
        let widths = [DECODER_INPUT, HIDDEN, HIDDEN, HIDDEN, DECODER_OUTPUT];
        Self {
            layers: std::array::from_fn(|i| {
                kaiming_uniform(widths[i], widths[i + 1], seed, first_layer + i as u64)
            }),
        }
    }

    pub fn forward(&self, x: &Tensor2<T>) -> Result<(Tensor2<T>, DecoderCache<T>)> {
        let [l0, l1, l2, l3] = &self.layers;
        let a0 = relu_forward(&l0.forward(x)?);
        let a1 = relu_forward(&l1.forward(&a0)?);
        let a2 = relu_forward(&l2.forward(&a1)?);
        let out = l3.forward(&a2)?;
        Ok((
            out,
            DecoderCache {
                x: x.clone(),
                a: [a0, a1, a2],
            },
        ))
    }

    /// Accumulates parameter gradients and returns the gradient w.r.t. the input.
    pub fn backward(&mut self, cache: &DecoderCache<T>, dout: &Tensor2<T>) -> Result<Tensor2<T>> {
        let [a0, a1, a2] = &cache.a;
        let [l0, l1, l2, l3] = &mut self.layers;
        let d2 = l3.backward(a2, dout)?;
        let d1 = l2.backward(a1, &relu_backward(a2, &d2))?;
        let d0 = l1.backward(a0, &relu_backward(a1, &d1))?;
        Ok(l0.backward(&cache.x, &relu_backward(a0, &d0))?)
    }

    pub fn cast<U: Real>(&self) -> Decoder<U> {
        Decoder {
            layers: self.layers.each_ref().map(LinearLayer::cast),
        }
    }
}
