//! Training objective: ID loss, triplet loss, and the angular diversity regularizer.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};

/// Probabilities are clamped below at this value before the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;
/// Rows with a smaller norm are rejected by the diversity loss.
pub const MIN_ROW_NORM: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub lambda_id: f64,
    pub alpha_margin: f64,
    pub lambda_div: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_id: 1.0,
            alpha_margin: 0.3,
            lambda_div: 0.01,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lambda_id > 0.0
            && self.lambda_id.is_finite()
            && self.alpha_margin >= 0.0
            && self.alpha_margin.is_finite()
            && self.lambda_div >= 0.0
            && self.lambda_div.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::contract(format!("invalid loss constants {self:?}")))
        }
    }
}

/// `-lambda_id * ln(max(scores[true_class], 1e-12))`.
pub fn id_loss(g: &mut Graph, scores: Var, true_class: usize, lambda_id: f64) -> Result<Var> {
    let n = g.value(scores).len();
    if true_class >= n {
        return Err(Error::contract(format!(
            "class {true_class} out of range for {n} scores"
        )));
    }
    let p = g.pick(scores, true_class)?;
    let lp = g.ln_clamped(p, PROB_FLOOR);
    Ok(g.scale(lp, -lambda_id))
}

/// Euclidean distance between two equal-shape tensors.
pub fn euclidean(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    let sq = g.mul(d, d)?;
    let s = g.sum(sq);
    g.sqrt(s)
}

/// `max(0, d(f, f_p) - d(f, f_n) + alpha)`.
pub fn triplet_loss(g: &mut Graph, f: Var, f_p: Var, f_n: Var, alpha: f64) -> Result<Var> {
    let dp = euclidean(g, f, f_p)?;
    let dn = euclidean(g, f, f_n)?;
    let diff = g.sub(dp, dn)?;
    let margin = g.constant(&[1], vec![alpha])?;
    let shifted = g.add(diff, margin)?;
    Ok(g.relu(shifted))
}

pub fn discriminative_loss(g: &mut Graph, id: Var, tri: Var) -> Result<Var> {
    g.add(id, tri)
}

/// `-(1/n) sum_i min_{j != i} arccos(<w_i, w_j> / (|w_i| |w_j|))` over the rows of `w`.
pub fn diversity_loss(g: &mut Graph, w: Var) -> Result<Var> {
    let s = g.shape(w);
    if s.len() != 2 || s[0] < 2 {
        return Err(Error::shape(format!(
            "diversity loss needs at least two rows, got {s:?}"
        )));
    }
    let sq = g.mul(w, w)?;
    let norms_sq = g.row_sum(sq);
    if let Some(i) = g.value(norms_sq).iter().position(|&v| v.sqrt() < MIN_ROW_NORM) {
        return Err(Error::contract(format!("row {i} of the weight matrix is zero")));
    }
    let norms = g.sqrt(norms_sq)?;
    let unit = g.div_col(w, norms)?;
    let unit_t = g.transpose(unit)?;
    let gram = g.matmul(unit, unit_t)?;
    let theta = g.acos(gram);
    let min_theta = g.row_min_offdiag(theta)?;
    let m = g.mean(min_theta);
    Ok(g.scale(m, -1.0))
}

pub fn total_loss(g: &mut Graph, dis: Var, div: Var, lambda_div: f64) -> Result<Var> {
    let weighted = g.scale(div, lambda_div);
    g.add(dis, weighted)
}

/// Batch-hard mining: for each anchor, the farthest same-label sample and the
/// nearest different-label sample. Anchors lacking either are skipped.
/// Returns `(anchor, positive, negative)` index triples.
pub fn batch_hard_triplets(descriptors: &[Vec<f64>], labels: &[usize]) -> Vec<(usize, usize, usize)> {
    let n = descriptors.len();
    let dist = |a: usize, b: usize| -> f64 {
        descriptors[a]
            .iter()
            .zip(&descriptors[b])
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
    };
    let mut out = Vec::new();
    for a in 0..n {
        let mut pos: Option<(usize, f64)> = None;
        let mut neg: Option<(usize, f64)> = None;
        for b in 0..n {
            if b == a {
                continue;
            }
            let d = dist(a, b);
            if labels[b] == labels[a] {
                if pos.is_none_or(|(_, best)| d > best) {
                    pos = Some((b, d));
                }
            } else if neg.is_none_or(|(_, best)| d < best) {
                neg = Some((b, d));
            }
        }
        if let (Some((p, _)), Some((q, _))) = (pos, neg) {
            out.push((a, p, q));
        }
    }
    out
}

/// Smallest pairwise angle between rows of a row-major `n x d` matrix.
pub fn min_pairwise_angle(rows: &[f64], n: usize, d: usize) -> f64 {
    let unit: Vec<Vec<f64>> = rows
        .chunks(d)
        .take(n)
        .map(|r| {
            let norm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            r.iter().map(|x| x / norm).collect()
        })
        .collect();
    let mut best = f64::INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            let c: f64 = unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum();
            best = best.min(c.clamp(-1.0, 1.0).acos());
        }
    }
    best
}
