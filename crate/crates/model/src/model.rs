//! Encoder + decoder with the scan-level forward and backward passes.

use visocc_core::{PointCloud, QuerySet, Vec3};
use visocc_nn::layers::{avgpool_rows, avgpool_rows_backward, maxpool_rows, sigmoid, MaxPool};
use visocc_nn::{LinearLayer, Real, Tensor2};

use crate::decoder::{Decoder, DecoderCache};
use crate::encoder::{Encoder, EncoderCache, EncoderInput, LATENT_DIM};
use crate::objective::{objective, LossParts, ObjectiveConfig, RowTargets, RowWeights};
use crate::plan::{DecodePlan, Head, SupportMode, Supports};
use crate::{ModelError, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    /// Neighbors per support in the encoder.
    pub k: usize,
    /// Radius of the ball (or cylinder) each latent decodes.
    pub radius: f64,
    pub head: Head,
    pub support: SupportMode,
    /// Feed point intensity to the encoder; when off the channel is zero.
    pub use_intensity: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            k: 16,
            radius: 1.0,
            head: Head::PerPointBall,
            support: SupportMode::Points,
            use_intensity: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let pitch_ok = match self.support {
            SupportMode::Points => true,
            SupportMode::Bev { pitch } => pitch > 0.0 && pitch.is_finite(),
        };
        if self.k == 0 || !(self.radius > 0.0 && self.radius.is_finite()) || !pitch_ok {
            return Err(ModelError::InvalidConfig(format!("{self:?}")));
        }
        Ok(())
    }
}

/// Latents attached to support positions.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentField<T> {
    pub support_positions: Vec<Vec3>,
    pub latents: Tensor2<T>,
    pub mode: SupportMode,
}

/// Everything about one scan that does not depend on parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedScan {
    pub input: EncoderInput,
    pub supports: Supports,
    pub plan: DecodePlan,
    pub targets: RowTargets,
}

enum RowPool<T> {
    PerPair,
    Avg,
    Max(MaxPool<T>),
}

pub struct ForwardCache<T> {
    encoder: EncoderCache<T>,
    cell_pool: Option<MaxPool<T>>,
    used: usize,
    pair_rows: Vec<usize>,
    row_pool: RowPool<T>,
    decoder: DecoderCache<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub encoder: Encoder<T>,
    pub decoder: Decoder<T>,
}

/// Encoder input for a cloud, with the intensity channel on or off.
pub fn encoder_input(cloud: &PointCloud, use_intensity: bool) -> EncoderInput {
    let intensities = (0..cloud.len())
        .map(|i| {
            if use_intensity {
                cloud.intensity_or_zero(i)
            } else {
                0.0
            }
        })
        .collect();
    EncoderInput {
        points: cloud.points().to_vec(),
        intensities,
    }
}

/// One latent per input point.
pub fn encode<T: Real>(encoder: &Encoder<T>, input: &EncoderInput) -> Result<LatentField<T>> {
    Ok(LatentField {
        support_positions: input.points.clone(),
        latents: encoder.encode_all(input)?,
        mode: SupportMode::Points,
    })
}

/// Point latents max-pooled into occupied bird's-eye-view cells.
pub fn encode_bev<T: Real>(
    encoder: &Encoder<T>,
    input: &EncoderInput,
    pitch: f64,
) -> Result<LatentField<T>> {
    let mode = SupportMode::Bev { pitch };
    let supports = Supports::new(&input.points, mode);
    let z = encoder.encode_all(input)?.gather_rows(&supports.members);
    let pooled = maxpool_rows(&z, &supports.offsets)?;
    Ok(LatentField {
        support_positions: supports.positions,
        latents: pooled.output,
        mode,
    })
}

impl<T: Real> Model<T> {
    /// Encoder layers take init keys 0..5, decoder layers 5..9.
    pub fn init(config: ModelConfig, seed: u64) -> Self {
        Self {
            config,
            encoder: Encoder::init(config.k, seed, 0),
            decoder: Decoder::init(seed, 5),
        }
    }

    pub fn layers(&self) -> impl Iterator<Item = &LinearLayer<T>> {
        self.encoder.layers().chain(&self.decoder.layers)
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut LinearLayer<T>> {
        self.encoder.layers_mut().chain(&mut self.decoder.layers)
    }

    pub fn zero_grad(&mut self) {
        self.layers_mut().for_each(LinearLayer::zero_grad);
    }

    pub fn add_grads(&mut self, other: &Self) {
        for (a, b) in self.layers_mut().zip(other.layers()) {
            a.add_grads(b);
        }
    }

    /// `(value, gradient)` slices of every parameter tensor, in layer order.
    pub fn params_mut(&mut self) -> Vec<(&mut [T], &[T])> {
        self.layers_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config,
            encoder: self.encoder.cast(),
            decoder: self.decoder.cast(),
        }
    }

    pub fn encoder_input(&self, cloud: &PointCloud) -> EncoderInput {
        encoder_input(cloud, self.config.use_intensity)
    }

    pub fn latent_field(&self, cloud: &PointCloud) -> Result<LatentField<T>> {
        let input = self.encoder_input(cloud);
        match self.config.support {
            SupportMode::Points => encode(&self.encoder, &input),
            SupportMode::Bev { pitch } => encode_bev(&self.encoder, &input, pitch),
        }
    }

    /// Supports, pairs and row targets of a scan with its queries.
    pub fn prepare(&self, cloud: &PointCloud, queries: &QuerySet) -> PreparedScan {
        let input = self.encoder_input(cloud);
        let supports = Supports::new(&input.points, self.config.support);
        let plan = DecodePlan::new(
            &supports.positions,
            self.config.support.search_mode(),
            &queries.positions,
            self.config.radius,
            self.config.head,
        );
        let targets = RowTargets {
            group: plan.rows.iter().map(|&(_, s)| s).collect(),
            occupancy: plan
                .rows
                .iter()
                .map(|&(q, _)| queries.occupancy[q])
                .collect(),
            intensity: plan
                .rows
                .iter()
                .map(|&(q, _)| queries.intensity_target[q])
                .collect(),
        };
        PreparedScan {
            input,
            supports,
            plan,
            targets,
        }
    }

    /// Decoder outputs (`rows × 2`) for the scan's prediction rows.
    pub fn forward(&self, scan: &PreparedScan) -> Result<(Tensor2<T>, ForwardCache<T>)> {
        let plan = &scan.plan;
        let used = plan.used_supports();
        let mut compact = vec![usize::MAX; scan.supports.len()];
        for (i, &s) in used.iter().enumerate() {
            compact[s] = i;
        }
        let (z_used, encoder, cell_pool) = match self.config.support {
            SupportMode::Points => {
                let (z, cache) = self.encoder.forward(&scan.input, &used)?;
                (z, cache, None)
            }
            SupportMode::Bev { .. } => {
                let (mut members, mut offsets) = (Vec::new(), vec![0]);
                for &c in &used {
                    members.extend_from_slice(
                        &scan.supports.members
                            [scan.supports.offsets[c]..scan.supports.offsets[c + 1]],
                    );
                    offsets.push(members.len());
                }
                let (z, cache) = self.encoder.forward(&scan.input, &members)?;
                let pool = maxpool_rows(&z, &offsets)?;
                (pool.output.clone(), cache, Some(pool))
            }
        };
        let pair_rows: Vec<usize> = plan.pairs.iter().map(|&(_, s)| compact[s]).collect();
        let z_pairs = z_used.gather_rows(&pair_rows);
        let (z_rows, row_pool) = match plan.head {
            Head::PerPointBall => (z_pairs, RowPool::PerPair),
            Head::BallAvg => (avgpool_rows(&z_pairs, &plan.offsets)?, RowPool::Avg),
            Head::BallMax => {
                let pool = maxpool_rows(&z_pairs, &plan.offsets)?;
                (pool.output.clone(), RowPool::Max(pool))
            }
        };
        let mut rel = Tensor2::zeros(plan.rows.len(), 3);
        for (i, d) in plan.relative.iter().enumerate() {
            rel.row_mut(i)
                .copy_from_slice(&[T::from_f64(d.x), T::from_f64(d.y), T::from_f64(d.z)]);
        }
        let (out, decoder) = self.decoder.forward(&z_rows.hcat(&rel)?)?;
        Ok((
            out,
            ForwardCache {
                encoder,
                cell_pool,
                used: used.len(),
                pair_rows,
                row_pool,
                decoder,
            },
        ))
    }

    /// Accumulates all parameter gradients for upstream `dout`.
    pub fn backward(
        &mut self,
        cache: &ForwardCache<T>,
        dout: &Tensor2<T>,
        plan: &DecodePlan,
    ) -> Result<()> {
        let dx = self.decoder.backward(&cache.decoder, dout)?;
        let (dz_rows, _) = dx.split_cols(LATENT_DIM);
        let dz_pairs = match &cache.row_pool {
            RowPool::PerPair => dz_rows,
            RowPool::Avg => avgpool_rows_backward(&dz_rows, &plan.offsets),
            RowPool::Max(pool) => pool.backward(&dz_rows),
        };
        let mut dz_used = Tensor2::zeros(cache.used, LATENT_DIM);
        for (p, &u) in cache.pair_rows.iter().enumerate() {
            for (a, &b) in dz_used.row_mut(u).iter_mut().zip(dz_pairs.row(p)) {
                *a += b;
            }
        }
        let dz = match &cache.cell_pool {
            None => dz_used,
            Some(pool) => pool.backward(&dz_used),
        };
        self.encoder.backward(&cache.encoder, &dz)
    }

    /// Adds this scan's share of the objective and its gradients into the
    /// accumulators. Scans without any pair contribute nothing.
    pub fn accumulate(
        &mut self,
        scan: &PreparedScan,
        weights: &RowWeights,
        objective_config: &ObjectiveConfig,
    ) -> Result<LossParts> {
        if scan.plan.rows.is_empty() {
            return Ok(LossParts::default());
        }
        let (out, cache) = self.forward(scan)?;
        let (loss, dout) = objective(&out, &scan.targets, weights, objective_config)?;
        if !loss.total.is_finite() {
            return Err(ModelError::Nn(visocc_nn::NnError::NonFinite {
                op: "objective",
            }));
        }
        self.backward(&cache, &dout, &scan.plan)?;
        Ok(loss)
    }

    /// Per prediction row: occupancy probability and intensity clamped to [0, 1].
    pub fn predict(&self, scan: &PreparedScan) -> Result<Vec<(f64, f64)>> {
        if scan.plan.rows.is_empty() {
            return Ok(Vec::new());
        }
        let (out, _) = self.forward(scan)?;
        Ok((0..out.rows())
            .map(|i| {
                (
                    sigmoid(out.get(i, 0)).as_f64(),
                    out.get(i, 1).as_f64().clamp(0.0, 1.0),
                )
            })
            .collect())
    }

    /// Mean occupancy probability over each query's rows; `None` when no support is in range.
    pub fn query_occupancy(
        &self,
        scan: &PreparedScan,
        n_queries: usize,
    ) -> Result<Vec<Option<f64>>> {
        let preds = self.predict(scan)?;
        let mut sum = vec![0.0; n_queries];
        let mut count = vec![0usize; n_queries];
        for (&(q, _), &(o, _)) in scan.plan.rows.iter().zip(&preds) {
            sum[q] += o;
            count[q] += 1;
        }
        Ok(sum
            .iter()
            .zip(&count)
            .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
            .collect())
    }
}
