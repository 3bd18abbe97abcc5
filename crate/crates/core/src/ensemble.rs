//! Prediction-score voting and stacked generalization over the two members.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::graph::{Binding, Graph, Var};
use crate::losses::{self, LossConfig};
use crate::metrics::DistanceMatrix;
use crate::nn::{self, Linear};
use crate::optim::{AdamWConfig, OptimizerState};
use crate::tensor::{ParamSet, Tensor};

pub const PREFIX: &str = "stack.";

/// Elementwise mean of member prediction scores.
pub fn vote(members: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = members
        .first()
        .ok_or_else(|| Error::contract("voting needs at least one member"))?;
    if members.iter().any(|m| m.len() != first.len()) {
        return Err(Error::contract("member predictions differ in length"));
    }
    let n = members.len() as f64;
    Ok((0..first.len())
        .map(|j| members.iter().map(|m| m[j]).sum::<f64>() / n)
        .collect())
}

/// One hidden ReLU layer of width `2 n` and the output classifier.
#[derive(Clone, Debug)]
pub struct StackingModel {
    params: ParamSet,
    pub hidden: Linear,
    pub out: Linear,
    pub n_classes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StackConfig {
    pub loss: LossConfig,
    pub epochs: usize,
    pub lr: f64,
    pub adamw: AdamWConfig,
    pub seed: u64,
}

impl StackConfig {
    pub fn new(loss: LossConfig) -> Self {
        Self {
            loss,
            epochs: 200,
            lr: 1e-2,
            adamw: AdamWConfig::default(),
            seed: 0,
        }
    }
}

impl StackingModel {
    pub fn new(n_classes: usize, seed: u64) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::contract("stacking needs at least two classes"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let width = 2 * n_classes;
        let hidden = Linear::new(&mut params, "hidden", width, width, &mut rng);
        let out = Linear::new(&mut params, "out", width, n_classes, &mut rng);
        Ok(Self {
            params,
            hidden,
            out,
            n_classes,
        })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// `W_classifier` with one row per class.
    pub fn classifier_rows(&self) -> Vec<f64> {
        let w = self.params.get(self.out.w);
        let (h, n) = (w.shape()[0], w.shape()[1]);
        let mut rows = vec![0.0; h * n];
        for i in 0..h {
            for j in 0..n {
                rows[j * h + i] = w.data()[i * n + j];
            }
        }
        rows
    }

    fn scores(&self, g: &mut Graph, b: &Binding, x: Var) -> Result<Var> {
        let h = self.hidden.forward(g, b, x)?;
        let h = g.relu(h);
        nn::softmax_head(g, b, &self.out, h)
    }

    pub fn to_checkpoint(&self) -> Vec<(String, Tensor)> {
        checkpoint::prefixed(&self.params, PREFIX)
    }

    pub fn from_checkpoint(n_classes: usize, entries: &[(String, Tensor)]) -> Result<Self> {
        let mut m = Self::new(n_classes, 0)?;
        m.params.load_values(&checkpoint::strip_prefix(entries, PREFIX))?;
        Ok(m)
    }

    /// Share of first-layer weight mass attached to each member's inputs.
    pub fn member_weights(&self) -> [f64; 2] {
        let w = self.params.get(self.hidden.w);
        let width = w.shape()[1];
        let n = self.n_classes;
        let mass = |rows: std::ops::Range<usize>| -> f64 {
            rows.map(|r| w.data()[r * width..(r + 1) * width].iter().map(|x| x.abs()).sum::<f64>())
                .sum()
        };
        let (a, b) = (mass(0..n), mass(n..2 * n));
        [a / (a + b), b / (a + b)]
    }
}

fn check_inputs(member_preds: &[Vec<f64>], labels: &[usize], n_classes: usize) -> Result<()> {
    if member_preds.len() != labels.len() || member_preds.is_empty() {
        return Err(Error::contract("stacking needs one label per non-empty prediction row"));
    }
    if let Some(row) = member_preds.iter().find(|r| r.len() != 2 * n_classes) {
        return Err(Error::contract(format!(
            "prediction rows must have {} entries, got {}",
            2 * n_classes,
            row.len()
        )));
    }
    if labels.iter().any(|&l| l >= n_classes) {
        return Err(Error::contract("label out of range"));
    }
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(Error::contract("labels contain a single class"));
    }
    Ok(())
}

/// Full-batch training on concatenated member predictions. Returns the model
/// and the training loss at every epoch (before that epoch's update).
pub fn stack_train(
    member_preds: &[Vec<f64>],
    labels: &[usize],
    n_classes: usize,
    cfg: &StackConfig,
) -> Result<(StackingModel, Vec<f64>)> {
    fit(member_preds, labels, n_classes, cfg, true)
}

/// Same as [`stack_train`] with the diversity term left out of the graph.
pub fn stack_train_unregularized(
    member_preds: &[Vec<f64>],
    labels: &[usize],
    n_classes: usize,
    cfg: &StackConfig,
) -> Result<(StackingModel, Vec<f64>)> {
    fit(member_preds, labels, n_classes, cfg, false)
}

fn fit(
    member_preds: &[Vec<f64>],
    labels: &[usize],
    n_classes: usize,
    cfg: &StackConfig,
    with_div: bool,
) -> Result<(StackingModel, Vec<f64>)> {
    check_inputs(member_preds, labels, n_classes)?;
    cfg.loss.validate()?;
    let mut model = StackingModel::new(n_classes, cfg.seed)?;
    let mut opt = OptimizerState::new(&model.params, cfg.adamw.clone());
    let x_data: Vec<f64> = member_preds.iter().flatten().copied().collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut g = Graph::new();
        let b = g.bind(&model.params);
        let x = g.constant(&[labels.len(), 2 * n_classes], x_data.clone())?;
        let h = model.hidden.forward(&mut g, &b, x)?;
        let h = g.relu(h);
        let logits = model.out.forward(&mut g, &b, h)?;
        let p = g.softmax_rows(logits)?;
        let mut terms = Vec::with_capacity(labels.len());
        for (i, &l) in labels.iter().enumerate() {
            let pi = g.pick(p, i * n_classes + l)?;
            let lp = g.ln_clamped(pi, losses::PROB_FLOOR);
            terms.push(g.scale(lp, -1.0));
        }
        let all = g.concat_last(&terms)?;
        let ce = g.mean(all);
        let loss = if with_div {
            let rows = nn::class_rows(&mut g, &b, &model.out)?;
            let div = losses::diversity_loss(&mut g, rows)?;
            losses::total_loss(&mut g, ce, div, cfg.loss.lambda_div)?
        } else {
            ce
        };
        let value = g.scalar_value(loss);
        if !value.is_finite() {
            return Err(Error::Numerical(format!("stacking loss is {value} at epoch {epoch}")));
        }
        curve.push(value);
        g.backward(loss, &b, &mut model.params)?;
        opt.step(&mut model.params, cfg.lr)?;
    }
    Ok((model, curve))
}

pub fn stack_predict(model: &StackingModel, member_preds: &[f64]) -> Result<Vec<f64>> {
    if member_preds.len() != 2 * model.n_classes {
        return Err(Error::contract(format!(
            "stacking input must have {} entries, got {}",
            2 * model.n_classes,
            member_preds.len()
        )));
    }
    let mut g = Graph::new();
    let b = g.bind(&model.params);
    let x = g.constant(&[1, member_preds.len()], member_preds.to_vec())?;
    let s = model.scores(&mut g, &b, x)?;
    Ok(g.value(s).to_vec())
}

/// Weighted sum of member distance matrices, each first divided by its mean
/// entry so that members on different scales contribute comparably.
pub fn fuse_distances(members: &[&DistanceMatrix], weights: &[f64]) -> Result<DistanceMatrix> {
    let first = members
        .first()
        .ok_or_else(|| Error::contract("fusion needs at least one member"))?;
    if members.len() != weights.len() {
        return Err(Error::contract("one weight per member is required"));
    }
    if members
        .iter()
        .any(|m| m.n_queries != first.n_queries || m.n_gallery != first.n_gallery)
    {
        return Err(Error::shape("member distance matrices differ in shape"));
    }
    let mut data = vec![0.0; first.data.len()];
    for (m, &w) in members.iter().zip(weights) {
        let mean = m.data.iter().sum::<f64>() / m.data.len().max(1) as f64;
        let scale = if mean > 0.0 { w / mean } else { 0.0 };
        for (d, &v) in data.iter_mut().zip(&m.data) {
            *d += scale * v;
        }
    }
    Ok(DistanceMatrix {
        n_queries: first.n_queries,
        n_gallery: first.n_gallery,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vote_examples() {
        assert_eq!(vote(&[vec![0.6, 0.4], vec![0.4, 0.6]]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(vote(&[vec![0.2, 0.8], vec![0.2, 0.8]]).unwrap(), vec![0.2, 0.8]);
        let v = vote(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert!((v[0] - 2.0 / 3.0).abs() < 1e-15 && (v[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!(vote(&[]).is_err());
        assert!(vote(&[vec![1.0], vec![0.5, 0.5]]).is_err());
    }

    fn one_hot_set(n: usize, reps: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..reps {
            for c in 0..n {
                let mut row = vec![0.0; 2 * n];
                row[c] = 1.0;
                row[n + c] = 1.0;
                x.push(row);
                y.push(c);
            }
        }
        (x, y)
    }

    #[test]
    fn separable_set_is_learned() {
        let (x, y) = one_hot_set(4, 3);
        let cfg = StackConfig::new(LossConfig::default());
        let (model, curve) = stack_train(&x, &y, 4, &cfg).unwrap();
        assert!(curve.last().unwrap() < &curve[0]);
        for (row, &label) in x.iter().zip(&y) {
            let p = stack_predict(&model, row).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let arg = (0..4).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
            assert_eq!(arg, label);
            assert_eq!(p, stack_predict(&model, row).unwrap());
        }
        assert!(stack_predict(&model, &[0.0; 3]).is_err());
    }

    #[test]
    fn zero_lambda_matches_unregularized_run() {
        let (x, y) = one_hot_set(3, 2);
        let mut cfg = StackConfig::new(LossConfig {
            lambda_div: 0.0,
            ..LossConfig::default()
        });
        cfg.epochs = 30;
        let (a, ca) = stack_train(&x, &y, 3, &cfg).unwrap();
        let (b, cb) = stack_train_unregularized(&x, &y, 3, &cfg).unwrap();
        assert_eq!(ca, cb);
        assert_eq!(a.params(), b.params());
    }

    #[test]
    fn single_class_labels_are_rejected() {
        let x = vec![vec![0.5; 4]; 3];
        let cfg = StackConfig::new(LossConfig::default());
        assert!(matches!(stack_train(&x, &[1, 1, 1], 2, &cfg), Err(Error::Contract(_))));
        assert_eq!(cfg.loss.lambda_div, 0.01);
    }

    #[test]
    fn fusion_normalizes_scale() {
        let a = DistanceMatrix { n_queries: 1, n_gallery: 2, data: vec![1.0, 3.0] };
        let b = DistanceMatrix { n_queries: 1, n_gallery: 2, data: vec![30.0, 10.0] };
        let f = fuse_distances(&[&a, &b], &[0.5, 0.5]).unwrap();
        assert!((f.data[0] - (0.25 + 0.75)).abs() < 1e-12);
        assert!((f.data[1] - (0.75 + 0.25)).abs() < 1e-12);
    }
}
