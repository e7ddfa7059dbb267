//! Supervised contrastive training of the projection head on frozen part
//! embeddings.

pub mod adam;
pub mod balance;
pub mod loss;

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Axis};
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use balance::{balance_dataset, Augmentation, BalanceConfig, MeshInventory, SampleRef};
pub use loss::supcon_loss;

use crate::encode::{ProjectionHead, HIDDEN_DIM, PROJECTED_DIM};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub temperature: f64,
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Samples drawn per material key when filling a batch (at least 2).
    pub samples_per_key: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            temperature: 0.07,
            learning_rate: 1e-5,
            steps: 20_000,
            batch_size: 256,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            samples_per_key: 4,
            hidden_dim: HIDDEN_DIM,
            output_dim: PROJECTED_DIM,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch size must be at least 2".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

/// Material identity is mesh-local: parts of different meshes never share a key.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MaterialKey {
    pub mesh_id: String,
    pub material_id: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub key: MaterialKey,
    pub part_id: u32,
    pub augmentation: Augmentation,
    pub x: Vec<f32>,
}

/// Parameter gradients, same shapes as [`ProjectionHead`].
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrad {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl HeadGrad {
    /// Flattened in checkpoint order (W1, b1, W2, b2).
    pub fn flatten(&self) -> Vec<f64> {
        self.w1
            .iter()
            .chain(self.b1.iter())
            .chain(self.w2.iter())
            .chain(self.b2.iter())
            .copied()
            .collect()
    }
}

/// Forward pass through head, normalisation and loss, then exact backprop to
/// every head parameter. Rows of `x` are inputs.
pub fn loss_and_grad<L: PartialEq>(
    head: &ProjectionHead,
    x: &Array2<f64>,
    labels: &[L],
    tau: f64,
) -> Result<(f64, HeadGrad)> {
    let pre = x.dot(&head.w1.t()) + &head.b1;
    let act = pre.mapv(|v| v.max(0.0));
    let u = act.dot(&head.w2.t()) + &head.b2;

    let mut z = u.clone();
    let mut norms = Vec::with_capacity(u.nrows());
    for mut row in z.rows_mut() {
        let n = row.dot(&row).sqrt();
        norms.push(n);
        if n < 1e-12 {
            row.fill(0.0);
            row[0] = 1.0;
        } else {
            row /= n;
        }
    }

    let (loss, dz) = supcon_loss(z.view(), labels, tau)?;

    // dL/du = (dz − z (z·dz)) / ‖u‖; the degenerate guard is constant.
    let mut du = Array2::<f64>::zeros(u.raw_dim());
    for (b, &n) in norms.iter().enumerate() {
        if n < 1e-12 {
            continue;
        }
        let zb = z.row(b);
        let gb = dz.row(b);
        let proj = zb.dot(&gb);
        let mut out = du.row_mut(b);
        out.assign(&((&gb - &(&zb * proj)) / n));
    }

    let w2 = du.t().dot(&act);
    let b2 = du.sum_axis(Axis(0));
    let mut dpre = du.dot(&head.w2);
    dpre.zip_mut_with(&pre, |g, &p| {
        if p <= 0.0 {
            *g = 0.0;
        }
    });
    let w1 = dpre.t().dot(x);
    let b1 = dpre.sum_axis(Axis(0));
    Ok((loss, HeadGrad { w1, b1, w2, b2 }))
}

/// Loss only; used for finite-difference checks.
pub fn batch_loss<L: PartialEq>(
    head: &ProjectionHead,
    x: &Array2<f64>,
    labels: &[L],
    tau: f64,
) -> Result<f64> {
    let mut z = x.dot(&head.w1.t()) + &head.b1;
    z.mapv_inplace(|v| v.max(0.0));
    let u = z.dot(&head.w2.t()) + &head.b2;
    let mut zs = Array2::<f64>::zeros(u.raw_dim());
    for (b, row) in u.rows().into_iter().enumerate() {
        let n = crate::encode::normalize_or_e1(&row.to_vec());
        zs.row_mut(b).assign(&Array1::from(n));
    }
    Ok(supcon_loss(zs.view(), labels, tau)?.0)
}

/// Fills a batch by visiting material keys in shuffled order and drawing
/// `samples_per_key` (at least 2) samples from each, without replacement.
pub struct BatchSampler {
    keys: Vec<Vec<usize>>,
    rng: ChaCha8Rng,
    batch_size: usize,
    per_key: usize,
}

impl BatchSampler {
    pub fn new(samples: &[TrainSample], cfg: &TrainConfig) -> Self {
        let mut by_key: BTreeMap<&MaterialKey, Vec<usize>> = BTreeMap::new();
        for (i, s) in samples.iter().enumerate() {
            by_key.entry(&s.key).or_default().push(i);
        }
        BatchSampler {
            keys: by_key.into_values().filter(|v| v.len() >= 2).collect(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5a5a_5a5a),
            batch_size: cfg.batch_size,
            per_key: cfg.samples_per_key.max(2),
        }
    }

    pub fn usable_keys(&self) -> usize {
        self.keys.len()
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.keys.len()).collect();
        order.shuffle(&mut self.rng);
        let mut batch = Vec::with_capacity(self.batch_size);
        for k in order {
            let remaining = self.batch_size - batch.len();
            if remaining < 2 {
                break;
            }
            let pool = &self.keys[k];
            let take = self.per_key.min(pool.len()).min(remaining);
            for i in sample(&mut self.rng, pool.len(), take) {
                batch.push(pool[i]);
            }
        }
        batch
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub head: ProjectionHead,
    /// (step, loss) for every step.
    pub losses: Vec<(usize, f64)>,
}

impl TrainOutcome {
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("step,loss\n");
        for (s, l) in &self.losses {
            out.push_str(&format!("{s},{l}\n"));
        }
        out
    }
}

pub fn train_projection_head(samples: &[TrainSample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let input = samples
        .first()
        .map(|s| s.x.len())
        .ok_or_else(|| Error::Data("no training samples".into()))?;
    if let Some(bad) = samples.iter().find(|s| s.x.len() != input) {
        return Err(Error::Dimension {
            expected: input,
            actual: bad.x.len(),
        });
    }
    let mut head = ProjectionHead::init(input, cfg.hidden_dim, cfg.output_dim, cfg.seed);
    let mut losses = Vec::with_capacity(cfg.steps);
    if cfg.steps == 0 {
        return Ok(TrainOutcome { head, losses });
    }

    let mut sampler = BatchSampler::new(samples, cfg);
    if sampler.usable_keys() == 0 {
        return Err(Error::Data("no material key has two samples".into()));
    }
    let mut state = AdamState::new(head.param_count());
    let adam = cfg.adam();
    for step in 0..cfg.steps {
        let batch = sampler.next_batch();
        let mut x = Array2::<f64>::zeros((batch.len(), input));
        for (r, &i) in batch.iter().enumerate() {
            for (dst, &src) in x.row_mut(r).iter_mut().zip(&samples[i].x) {
                *dst = src as f64;
            }
        }
        let labels: Vec<&MaterialKey> = batch.iter().map(|&i| &samples[i].key).collect();
        let (loss, grad) = loss_and_grad(&head, &x, &labels, cfg.temperature)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        losses.push((step, loss));
        adam_step(head.params_mut(), &grad.flatten(), &mut state, &adam);
    }
    Ok(TrainOutcome { head, losses })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_samples() -> Vec<TrainSample> {
        let mut out = Vec::new();
        for m in 0..2u32 {
            for i in 0..6 {
                let mut x = vec![0.1 * i as f32; 8];
                x[m as usize] += 3.0;
                out.push(TrainSample {
                    key: MaterialKey { mesh_id: "a".into(), material_id: m },
                    part_id: m * 10 + i,
                    augmentation: Augmentation::Base,
                    x,
                });
            }
        }
        out
    }

    #[test]
    fn zero_steps_returns_init() {
        let cfg = TrainConfig { steps: 0, hidden_dim: 4, output_dim: 3, seed: 3, ..Default::default() };
        let out = train_projection_head(&toy_samples(), &cfg).unwrap();
        assert_eq!(out.head, ProjectionHead::init(8, 4, 3, 3));
        assert!(out.losses.is_empty());
    }

    #[test]
    fn batches_always_have_positives() {
        let samples = toy_samples();
        let cfg = TrainConfig { batch_size: 5, samples_per_key: 2, ..Default::default() };
        let mut sampler = BatchSampler::new(&samples, &cfg);
        for _ in 0..20 {
            let b = sampler.next_batch();
            assert!(b.len() >= 2 && b.len() <= 5);
            for &i in &b {
                assert!(b.iter().any(|&j| j != i && samples[j].key == samples[i].key));
            }
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = TrainConfig { batch_size: 1, ..Default::default() };
        assert!(train_projection_head(&toy_samples(), &cfg).is_err());
        let cfg = TrainConfig { temperature: 0.0, ..Default::default() };
        assert!(train_projection_head(&toy_samples(), &cfg).is_err());
    }

    #[test]
    fn csv_log() {
        let cfg = TrainConfig { steps: 3, hidden_dim: 4, output_dim: 3, batch_size: 8, learning_rate: 1e-3, ..Default::default() };
        let out = train_projection_head(&toy_samples(), &cfg).unwrap();
        let csv = out.loss_csv();
        assert!(csv.starts_with("step,loss\n0,"));
        assert_eq!(csv.lines().count(), 4);
    }
}
