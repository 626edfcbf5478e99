use std::collections::HashMap;

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::network::{Gradient, Network};
use crate::catalog::Corpus;
use crate::embedding::hinge;
use crate::error::{Error, Result};
use crate::image::Image;

/// Anything that can resolve a triplet's item ids to images.
pub trait ImageSource: Sync {
    fn image(&self, id: &str) -> Result<&Image>;
}

impl ImageSource for Corpus {
    fn image(&self, id: &str) -> Result<&Image> {
        Corpus::image(self, id)
    }
}

impl ImageSource for HashMap<String, Image> {
    fn image(&self, id: &str) -> Result<&Image> {
        self.get(id).ok_or_else(|| Error::UnknownId(id.to_string()))
    }
}

/// Item-id references of one training triplet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripletIds {
    pub q: String,
    pub p: String,
    pub n: String,
}

/// Training hyperparameters. Defaults follow the desk-scale recipe:
/// SGD with momentum 0.9, lr 0.01, step decay.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Hyper {
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Multiplier applied to the learning rate every `lr_decay_every` epochs.
    pub lr_decay: f64,
    pub lr_decay_every: usize,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            lr: 0.01,
            momentum: 0.9,
            epochs: 10,
            batch_size: 32,
            seed: 0,
            lr_decay: 0.5,
            lr_decay_every: 8,
        }
    }
}

impl Hyper {
    fn validate(&self) -> Result<()> {
        if self.lr < 0.0 {
            return Err(Error::Config(format!("negative learning rate {}", self.lr)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("zero epochs or batch size".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} not in [0,1)", self.momentum)));
        }
        Ok(())
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.lr_decay_every.max(1)) as i32)
    }
}

/// Per-epoch mean loss trajectory.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainReport {
    pub epoch_mean_loss: Vec<f64>,
}

fn resolve<'a>(
    images: &'a dyn ImageSource,
    triplets: &[TripletIds],
) -> Result<Vec<(&'a Image, &'a Image, &'a Image)>> {
    triplets
        .iter()
        .map(|t| Ok((images.image(&t.q)?, images.image(&t.p)?, images.image(&t.n)?)))
        .collect()
}

/// Trains all parameters with SGD + momentum over shuffled mini-batches.
/// Bit-for-bit reproducible for a fixed seed.
pub fn train(
    net: &mut Network,
    images: &dyn ImageSource,
    triplets: &[TripletIds],
    hyper: &Hyper,
) -> Result<TrainReport> {
    hyper.validate()?;
    if triplets.is_empty() {
        return Err(Error::Config("empty triplet stream".into()));
    }
    let resolved = resolve(images, triplets)?;
    let margin = net.config().margin;
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut velocity = Gradient::zeros_like(net);
    let mut order: Vec<usize> = (0..resolved.len()).collect();
    let mut report = TrainReport {
        epoch_mean_loss: Vec::with_capacity(hyper.epochs),
    };

    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let lr = hyper.lr_at(epoch);
        let mut loss_sum = 0.0;
        for (batch_no, chunk) in order.chunks(hyper.batch_size).enumerate() {
            let batch: Vec<_> = chunk.iter().map(|&i| resolved[i]).collect();
            let (grad, mean_loss) = net.batch_gradient(&batch, margin)?;
            if !mean_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_no,
                });
            }
            net.sgd_step(&grad, &mut velocity, lr, hyper.momentum);
            loss_sum += mean_loss * batch.len() as f64;
        }
        let epoch_mean = loss_sum / resolved.len() as f64;
        if !epoch_mean.is_finite() {
            return Err(Error::Diverged { epoch, batch: 0 });
        }
        report.epoch_mean_loss.push(epoch_mean);
    }
    Ok(report)
}

/// Trains only the linear projection on top of a frozen base network.
///
/// Base-path outputs are computed once per unique image and cached, so the
/// epochs run over small dense vectors. Reduced embeddings are re-normalized
/// when the config asks for normalization.
pub fn train_projection(
    net: &mut Network,
    images: &dyn ImageSource,
    triplets: &[TripletIds],
    hyper: &Hyper,
) -> Result<TrainReport> {
    hyper.validate()?;
    if triplets.is_empty() {
        return Err(Error::Config("empty triplet stream".into()));
    }
    if !net.has_projection() {
        return Err(Error::Config(
            "projection not attached; call attach_projection first".into(),
        ));
    }

    // Cache frozen concat vectors per unique id, in parallel.
    let mut ids: Vec<&str> = Vec::new();
    for t in triplets {
        ids.push(&t.q);
        ids.push(&t.p);
        ids.push(&t.n);
    }
    ids.sort_unstable();
    ids.dedup();
    use rayon::prelude::*;
    let concats: Vec<(String, Array1<f64>)> = ids
        .par_iter()
        .map(|&id| Ok((id.to_string(), net.concat_vector(images.image(id)?)?)))
        .collect::<Result<Vec<_>>>()?;
    let cache: HashMap<&str, &Array1<f64>> = concats
        .iter()
        .map(|(id, v)| (id.as_str(), v))
        .collect();

    let margin = net.config().margin;
    let normalize = net.config().normalize;
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut velocity = Gradient::zeros_like(net);
    let mut order: Vec<usize> = (0..triplets.len()).collect();
    let mut report = TrainReport {
        epoch_mean_loss: Vec::with_capacity(hyper.epochs),
    };

    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let lr = hyper.lr_at(epoch);
        let mut loss_sum = 0.0;
        for (batch_no, chunk) in order.chunks(hyper.batch_size).enumerate() {
            let mut grad = Gradient::zeros_like(net);
            let mut batch_loss = 0.0;
            for &i in chunk {
                let t = &triplets[i];
                let (cq, cp, cn) = (cache[t.q.as_str()], cache[t.p.as_str()], cache[t.n.as_str()]);
                batch_loss += projection_triplet_gradient(net, cq, cp, cn, margin, normalize, &mut grad)?;
            }
            let scale = 1.0 / chunk.len() as f64;
            grad.scale(scale);
            let mean_loss = batch_loss * scale;
            if !mean_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_no,
                });
            }
            net.sgd_step_projection_only(&grad, &mut velocity, lr, hyper.momentum);
            loss_sum += mean_loss * chunk.len() as f64;
        }
        report
            .epoch_mean_loss
            .push(loss_sum / triplets.len() as f64);
    }
    Ok(report)
}

/// One projection-only triplet gradient over cached concat vectors.
fn projection_triplet_gradient(
    net: &Network,
    cq: &Array1<f64>,
    cp: &Array1<f64>,
    cn: &Array1<f64>,
    margin: f64,
    normalize: bool,
    grad: &mut Gradient,
) -> Result<f64> {
    let fq = net.project_vector(cq, normalize)?;
    let fp = net.project_vector(cp, normalize)?;
    let fn_ = net.project_vector(cn, normalize)?;

    let d_qp = (&fq.out - &fp.out).mapv(|v| v * v).sum().sqrt();
    let d_qn = (&fq.out - &fn_.out).mapv(|v| v * v).sum().sqrt();
    let loss = hinge(d_qp, d_qn, margin);
    if loss == 0.0 {
        return Ok(loss);
    }
    let dim = fq.out.len();
    let unit_qp = if d_qp > 0.0 {
        (&fq.out - &fp.out) / d_qp
    } else {
        Array1::zeros(dim)
    };
    let unit_qn = if d_qn > 0.0 {
        (&fq.out - &fn_.out) / d_qn
    } else {
        Array1::zeros(dim)
    };
    net.projection_backward(&fq, &(&unit_qp - &unit_qn), grad);
    net.projection_backward(&fp, &(-&unit_qp), grad);
    net.projection_backward(&fn_, &unit_qn, grad);
    Ok(loss)
}
