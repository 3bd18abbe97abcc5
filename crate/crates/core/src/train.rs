//! Identity-balanced mini-batch training shared by both ensemble members.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Binding, Graph, Var};
use crate::losses::{self, LossConfig};
use crate::nn::{self, Linear};
use crate::optim::{AdamWConfig, LrSchedule, OptimizerState};
use crate::tensor::ParamSet;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub schedule: LrSchedule,
    pub adamw: AdamWConfig,
    pub loss: LossConfig,
    /// Identities per batch.
    pub batch_ids: usize,
    /// Images per identity per batch.
    pub batch_imgs: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.batch_ids < 2 || self.batch_imgs < 1 {
            return Err(Error::contract(format!(
                "batches need >= 2 identities and >= 1 image each, got {} x {}",
                self.batch_ids, self.batch_imgs
            )));
        }
        if self.schedule.total_epochs() == 0 {
            return Err(Error::contract("training needs at least one epoch"));
        }
        Ok(())
    }
}

/// Mean loss components over one epoch's batches.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub id: f64,
    pub triplet: f64,
    pub diversity: f64,
    pub total: f64,
}

pub const LOG_HEADER: &str = "epoch\tlr\tid_loss\ttriplet_loss\tdiversity_loss\ttotal_loss";

impl EpochLog {
    pub fn tsv_row(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.epoch, self.lr, self.id, self.triplet, self.diversity, self.total
        )
    }
}

/// A model trainable with ID + batch-hard triplet + diversity losses.
pub trait Trainable {
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;
    fn classifier(&self) -> Linear;
    /// Builds `(descriptor, class scores)` for training sample `index`.
    fn forward_sample(&self, g: &mut Graph, b: &Binding, index: usize) -> Result<(Var, Var)>;
}

/// Batches of `batch_ids` random identities with `batch_imgs` images each.
pub fn identity_batches(labels: &[usize], cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let classes: Vec<usize> = (0..n_classes).filter(|&c| !by_class[c].is_empty()).collect();
    let per_batch = cfg.batch_ids.min(classes.len());
    let n_batches = labels.len().div_ceil(per_batch * cfg.batch_imgs).max(1);
    (0..n_batches)
        .map(|_| {
            let mut batch = Vec::with_capacity(per_batch * cfg.batch_imgs);
            for &c in classes.choose_multiple(rng, per_batch) {
                let pool = &by_class[c];
                if pool.len() >= cfg.batch_imgs {
                    batch.extend(pool.choose_multiple(rng, cfg.batch_imgs));
                } else {
                    batch.extend((0..cfg.batch_imgs).map(|_| *pool.choose(rng).expect("non-empty class")));
                }
            }
            batch
        })
        .collect()
}

fn mean_of(g: &mut Graph, terms: &[Var]) -> Result<Var> {
    if terms.is_empty() {
        return g.constant(&[1], vec![0.0]);
    }
    let all = g.concat_last(terms)?;
    Ok(g.mean(all))
}

/// Loss components for one batch; the graph's last node is the total.
pub struct BatchLoss {
    pub total: Var,
    pub id: f64,
    pub triplet: f64,
    pub diversity: f64,
}

pub fn batch_loss<M: Trainable + ?Sized>(
    model: &M,
    g: &mut Graph,
    b: &Binding,
    batch: &[usize],
    labels: &[usize],
    loss: &LossConfig,
) -> Result<BatchLoss> {
    let mut descs = Vec::with_capacity(batch.len());
    let mut ids = Vec::with_capacity(batch.len());
    for &i in batch {
        let (d, s) = model.forward_sample(g, b, i)?;
        ids.push(losses::id_loss(g, s, labels[i], loss.lambda_id)?);
        descs.push(d);
    }
    let values: Vec<Vec<f64>> = descs.iter().map(|&d| g.value(d).to_vec()).collect();
    let batch_labels: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
    let mut tris = Vec::new();
    for (a, p, n) in losses::batch_hard_triplets(&values, &batch_labels) {
        tris.push(losses::triplet_loss(g, descs[a], descs[p], descs[n], loss.alpha_margin)?);
    }
    let id = mean_of(g, &ids)?;
    let tri = mean_of(g, &tris)?;
    let dis = losses::discriminative_loss(g, id, tri)?;
    let rows = nn::class_rows(g, b, &model.classifier())?;
    let div = losses::diversity_loss(g, rows)?;
    let total = losses::total_loss(g, dis, div, loss.lambda_div)?;
    Ok(BatchLoss {
        total,
        id: g.scalar_value(id),
        triplet: g.scalar_value(tri),
        diversity: g.scalar_value(div),
    })
}

/// Runs the full schedule. Batches with a degenerate global feature are
/// skipped. On a non-finite loss or parameter the parameters are restored to
/// the end of the last completed epoch and a numerical error is returned.
pub fn train<M: Trainable + ?Sized>(
    model: &mut M,
    labels: &[usize],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    if labels.is_empty() {
        return Err(Error::contract("no training samples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = OptimizerState::new(model.params(), cfg.adamw.clone());
    let mut logs = Vec::new();
    let mut last_good = model.params().clone();
    for epoch in 0..cfg.schedule.total_epochs() {
        let lr = cfg.schedule.lr_at(epoch)?;
        let batches = identity_batches(labels, cfg, &mut rng);
        let mut sums = [0.0; 4];
        let mut done = 0usize;
        for batch in &batches {
            let step = (|| -> Result<()> {
                let mut g = Graph::new();
                let b = g.bind(model.params());
                let l = batch_loss(&*model, &mut g, &b, batch, labels, &cfg.loss)?;
                let total = g.scalar_value(l.total);
                if !total.is_finite() {
                    return Err(Error::Numerical(format!("loss is {total} at epoch {epoch}")));
                }
                g.backward(l.total, &b, model.params_mut())?;
                opt.step(model.params_mut(), lr)?;
                if !model.params().all_finite() {
                    return Err(Error::Numerical(format!("parameters diverged at epoch {epoch}")));
                }
                for (s, v) in sums.iter_mut().zip([l.id, l.triplet, l.diversity, total]) {
                    *s += v;
                }
                Ok(())
            })();
            match step {
                Ok(()) => done += 1,
                Err(Error::DegenerateGlobal { norm_sq }) => {
                    eprintln!("epoch {epoch}: batch skipped, global feature norm^2 = {norm_sq:e}");
                }
                Err(e @ Error::Numerical(_)) => {
                    *model.params_mut() = last_good;
                    return Err(e);
                }
                Err(e) => return Err(e),
            }
        }
        let n = done.max(1) as f64;
        let log = EpochLog {
            epoch,
            lr,
            id: sums[0] / n,
            triplet: sums[1] / n,
            diversity: sums[2] / n,
            total: sums[3] / n,
        };
        on_epoch(&log);
        logs.push(log);
        last_good = model.params().clone();
    }
    Ok(logs)
}
