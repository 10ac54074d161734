//! Local point encoder: k nearest neighbors, a shared per-neighbor MLP,
//! max-pool over the neighborhood, and a post-pool MLP.

use rayon::prelude::*;
use visocc_core::Vec3;
use visocc_nn::init::kaiming_uniform;
use visocc_nn::layers::{maxpool_rows, relu_backward, relu_forward, MaxPool};
use visocc_nn::{LinearLayer, Real, Tensor2};

use crate::{ModelError, Result};

/// Width of per-neighbor features: `(Δx, Δy, Δz, intensity)`.
pub const FEATURE_DIM: usize = 4;
/// Latent size.
pub const LATENT_DIM: usize = 128;
const POINT_WIDTHS: [usize; 4] = [FEATURE_DIM, 64, 64, LATENT_DIM];

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder<T> {
    pub k: usize,
    pub point_mlp: [LinearLayer<T>; 3],
    pub post_mlp: [LinearLayer<T>; 2],
}

/// Input points in the encoder's frame, with the intensity channel already
/// resolved (zero when absent or disabled).
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderInput {
    pub points: Vec<Vec3>,
    pub intensities: Vec<f64>,
}

impl EncoderInput {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Forward activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct EncoderCache<T> {
    x: Tensor2<T>,
    h1: Tensor2<T>,
    h2: Tensor2<T>,
    h3: Tensor2<T>,
    pool: MaxPool<T>,
    g: Tensor2<T>,
}

/// Indices of the `k` nearest points to `points[s]` for each `s` in
/// `supports`, nearest first; equal distances are ordered by index.
pub fn knn(points: &[Vec3], supports: &[usize], k: usize) -> Vec<usize> {
    let rows: Vec<Vec<usize>> = supports
        .par_iter()
        .map(|&s| {
            let c = points[s];
            let mut d: Vec<(f64, usize)> = points
                .iter()
                .enumerate()
                .map(|(j, &p)| {
                    let v = p - c;
                    (v.dot(v), j)
                })
                .collect();
            let by_key =
                |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if k < d.len() {
                d.select_nth_unstable_by(k - 1, by_key);
                d.truncate(k);
            }
            d.sort_unstable_by(by_key);
            d.into_iter().map(|(_, j)| j).collect()
        })
        .collect();
    rows.concat()
}

impl<T: Real> Encoder<T> {
    /// Kaiming-initialized encoder; layers use init keys `first_layer..first_layer + 5`.
    pub fn init(k: usize, seed: u64, first_layer: u64) -> Self {
        let l = |i: usize, inp: usize, out: usize| {
            kaiming_uniform(inp, out, seed, first_layer + i as u64)
        };
        Self {
            k,
            point_mlp: [
                l(0, POINT_WIDTHS[0], POINT_WIDTHS[1]),
                l(1, POINT_WIDTHS[1], POINT_WIDTHS[2]),
                l(2, POINT_WIDTHS[2], POINT_WIDTHS[3]),
            ],
            post_mlp: [l(3, LATENT_DIM, LATENT_DIM), l(4, LATENT_DIM, LATENT_DIM)],
        }
    }

    pub fn layers(&self) -> impl Iterator<Item = &LinearLayer<T>> {
        self.point_mlp.iter().chain(&self.post_mlp)
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut LinearLayer<T>> {
        self.point_mlp.iter_mut().chain(&mut self.post_mlp)
    }

    fn check(&self, input: &EncoderInput) -> Result<()> {
        if input.len() < self.k || self.k == 0 {
            return Err(ModelError::TooFewPoints {
                needed: self.k.max(1),
                got: input.len(),
            });
        }
        Ok(())
    }

    /// Neighbor feature rows, `k` per support.
    fn features(&self, input: &EncoderInput, supports: &[usize]) -> Tensor2<T> {
        let neighbors = knn(&input.points, supports, self.k);
        let mut x = Tensor2::zeros(supports.len() * self.k, FEATURE_DIM);
        for (si, &s) in supports.iter().enumerate() {
            let c = input.points[s];
            for j in 0..self.k {
                let n = neighbors[si * self.k + j];
                let d = input.points[n] - c;
                let row = x.row_mut(si * self.k + j);
                row[0] = T::from_f64(d.x);
                row[1] = T::from_f64(d.y);
                row[2] = T::from_f64(d.z);
                row[3] = T::from_f64(input.intensities[n]);
            }
        }
        x
    }

    /// Latents for the listed supports, keeping activations for [`Self::backward`].
    pub fn forward(
        &self,
        input: &EncoderInput,
        supports: &[usize],
    ) -> Result<(Tensor2<T>, EncoderCache<T>)> {
        self.check(input)?;
        let x = self.features(input, supports);
        let [l1, l2, l3] = &self.point_mlp;
        let h1 = relu_forward(&l1.forward(&x)?);
        let h2 = relu_forward(&l2.forward(&h1)?);
        let h3 = relu_forward(&l3.forward(&h2)?);
        let offsets: Vec<usize> = (0..=supports.len()).map(|i| i * self.k).collect();
        let pool = maxpool_rows(&h3, &offsets)?;
        let g = relu_forward(&self.post_mlp[0].forward(&pool.output)?);
        let z = self.post_mlp[1].forward(&g)?;
        Ok((
            z,
            EncoderCache {
                x,
                h1,
                h2,
                h3,
                pool,
                g,
            },
        ))
    }

    /// Accumulates parameter gradients for upstream `dz`.
    pub fn backward(&mut self, cache: &EncoderCache<T>, dz: &Tensor2<T>) -> Result<()> {
        let dg = self.post_mlp[1].backward(&cache.g, dz)?;
        let dpooled =
            self.post_mlp[0].backward(&cache.pool.output, &relu_backward(&cache.g, &dg))?;
        let dh3 = cache.pool.backward(&dpooled);
        let [l1, l2, l3] = &mut self.point_mlp;
        let dh2 = l3.backward(&cache.h2, &relu_backward(&cache.h3, &dh3))?;
        let dh1 = l2.backward(&cache.h1, &relu_backward(&cache.h2, &dh2))?;
        l1.accumulate_grads(&cache.x, &relu_backward(&cache.h1, &dh1))?;
        Ok(())
    }

    /// Latents for every input point, computed in chunks without caching.
    pub fn encode_all(&self, input: &EncoderInput) -> Result<Tensor2<T>> {
        self.check(input)?;
        const CHUNK: usize = 512;
        let mut out = Tensor2::zeros(input.len(), LATENT_DIM);
        let all: Vec<usize> = (0..input.len()).collect();
        for (c, chunk) in all.chunks(CHUNK).enumerate() {
            let (z, _) = self.forward(input, chunk)?;
            for i in 0..chunk.len() {
                out.row_mut(c * CHUNK + i).copy_from_slice(z.row(i));
            }
        }
        Ok(out)
    }

    pub fn cast<U: Real>(&self) -> Encoder<U> {
        Encoder {
            k: self.k,
            point_mlp: self.point_mlp.each_ref().map(LinearLayer::cast),
            post_mlp: self.post_mlp.each_ref().map(LinearLayer::cast),
        }
    }
}
