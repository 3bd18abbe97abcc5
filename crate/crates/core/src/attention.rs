//! Scaled dot-product attention with softmax or sparsemax normalization.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};

/// Row normalizer used to turn attention scores into weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Normalizer {
    Softmax,
    Sparsemax,
}

impl Normalizer {
    pub const ALLOWED: &'static str = "softmax, sparsemax";
}

impl fmt::Display for Normalizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Normalizer::Softmax => "softmax",
            Normalizer::Sparsemax => "sparsemax",
        })
    }
}

impl FromStr for Normalizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(Normalizer::Softmax),
            "sparsemax" => Ok(Normalizer::Sparsemax),
            other => Err(Error::contract(format!(
                "unknown attention normalizer {other:?} (allowed: {})",
                Normalizer::ALLOWED
            ))),
        }
    }
}

fn check_finite(z: &[f64], what: &str) -> Result<()> {
    if z.iter().any(|v| v.is_nan()) {
        return Err(Error::contract(format!("{what} input contains NaN")));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::contract(format!("{what} input is not finite")));
    }
    Ok(())
}

/// Max-shifted softmax of one row.
pub fn softmax(z: &[f64]) -> Result<Vec<f64>> {
    check_finite(z, "softmax")?;
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Euclidean projection of `z` onto the probability simplex.
///
/// Sorts descending (stable, so ties keep index order), finds the support
/// size `k = max{k : 1 + k z_(k) > sum_{t<=k} z_(t)}`, the threshold
/// `tau = (sum_{t<=k} z_(t) - 1) / k`, then clips `z - tau` at zero.
pub fn sparsemax(z: &[f64]) -> Result<Vec<f64>> {
    check_finite(z, "sparsemax")?;
    if z.is_empty() {
        return Err(Error::contract("sparsemax of an empty vector"));
    }
    let tau = sparsemax_threshold(z);
    Ok(z.iter().map(|&v| (v - tau).max(0.0)).collect())
}

fn sparsemax_threshold(z: &[f64]) -> f64 {
    let mut sorted = z.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut support = 0;
    let mut support_sum = 0.0;
    for (i, &v) in sorted.iter().enumerate() {
        cumsum += v;
        let k = (i + 1) as f64;
        if 1.0 + k * v > cumsum {
            support = i + 1;
            support_sum = cumsum;
        }
    }
    (support_sum - 1.0) / support as f64
}

/// Vector-Jacobian product of sparsemax at output `p`.
///
/// On the support `S = {i : p_i > 0}` the Jacobian is `I - 11^T/|S|`;
/// off the support it is zero.
pub fn sparsemax_backward(p: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
    if p.len() != upstream.len() {
        return Err(Error::shape(format!(
            "sparsemax_backward of lengths {} and {}",
            p.len(),
            upstream.len()
        )));
    }
    let (count, total) = p
        .iter()
        .zip(upstream)
        .filter(|(&pi, _)| pi > 0.0)
        .fold((0usize, 0.0), |(c, s), (_, &u)| (c + 1, s + u));
    if count == 0 {
        return Err(Error::contract("sparsemax output has empty support"));
    }
    let mean = total / count as f64;
    Ok(p
        .iter()
        .zip(upstream)
        .map(|(&pi, &u)| if pi > 0.0 { u - mean } else { 0.0 })
        .collect())
}

/// `q k^T / sqrt(d_k)`.
pub fn scaled_scores(g: &mut Graph, q: Var, k: Var, d_k: usize) -> Result<Var> {
    if d_k == 0 {
        return Err(Error::contract("d_k must be positive"));
    }
    let (sq, sk) = (g.shape(q), g.shape(k));
    if sq.len() != 2 || sk.len() != 2 || sq[1] != sk[1] {
        return Err(Error::shape(format!(
            "query {sq:?} and key {sk:?} must share their last dimension"
        )));
    }
    let kt = g.transpose(k)?;
    let s = g.matmul(q, kt)?;
    Ok(g.scale(s, 1.0 / (d_k as f64).sqrt()))
}

pub fn normalize_rows(g: &mut Graph, scores: Var, normalizer: Normalizer) -> Result<Var> {
    match normalizer {
        Normalizer::Softmax => g.softmax_rows(scores),
        Normalizer::Sparsemax => g.sparsemax_rows(scores),
    }
}

/// Tolerance for accepting a weight row as a simplex vector.
pub const SIMPLEX_TOL: f64 = 1e-6;

/// `weights · v`, where each weight row must lie on the simplex.
pub fn attend(g: &mut Graph, weights: Var, v: Var) -> Result<Var> {
    let s = g.shape(weights);
    if s.len() != 2 {
        return Err(Error::shape(format!("attention weights must be 2-D, got {s:?}")));
    }
    let m = s[1];
    for (i, row) in g.value(weights).chunks(m).enumerate() {
        let total: f64 = row.iter().sum();
        if row.iter().any(|&w| w < -SIMPLEX_TOL) || (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::contract(format!(
                "attention row {i} is not on the simplex (sum {total})"
            )));
        }
    }
    g.matmul(weights, v)
}

/// Full attention `normalize(q k^T / sqrt(d_k)) v`; returns `(output, weights)`.
pub fn attention(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    normalizer: Normalizer,
) -> Result<(Var, Var)> {
    let d_k = g.shape(q)[1];
    if g.shape(k)[0] != g.shape(v)[0] {
        return Err(Error::shape(format!(
            "key rows {:?} and value rows {:?} must align",
            g.shape(k),
            g.shape(v)
        )));
    }
    let s = scaled_scores(g, q, k, d_k)?;
    let w = normalize_rows(g, s, normalizer)?;
    let out = attend(g, w, v)?;
    Ok((out, w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn softmax_examples() {
        assert!(close(&softmax(&[0.0, 0.0]).unwrap(), &[0.5, 0.5], 1e-15));
        let c = softmax(&[7.5; 4]).unwrap();
        assert!(close(&c, &[0.25; 4], 1e-15));
        let p = softmax(&[1f64.ln(), 3f64.ln()]).unwrap();
        assert!(close(&p, &[0.25, 0.75], 1e-15));
        assert!(softmax(&[0.0, f64::NAN]).is_err());
        // large logits must not overflow
        let p = softmax(&[1000.0, 1000.0]).unwrap();
        assert!(close(&p, &[0.5, 0.5], 1e-15));
    }

    #[test]
    fn sparsemax_examples() {
        assert!(close(&sparsemax(&[2.0; 5]).unwrap(), &[0.2; 5], 1e-15));
        assert_eq!(sparsemax(&[3.0, 1.0]).unwrap(), vec![1.0, 0.0]);
        let p = sparsemax(&[1.5, 1.0, 0.5]).unwrap();
        assert!(close(&p, &[0.75, 0.25, 0.0], 1e-15));
        assert_eq!(p[2], 0.0);
        assert!(sparsemax(&[f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn sparsemax_backward_examples() {
        let p = sparsemax(&[0.3, 0.2, 0.1]).unwrap();
        assert!(p.iter().all(|&x| x > 0.0));
        let d = sparsemax_backward(&p, &[1.0; 3]).unwrap();
        assert!(close(&d, &[0.0; 3], 1e-15));

        let p = sparsemax(&[5.0, 0.0, 1.0]).unwrap();
        assert_eq!(p, vec![1.0, 0.0, 0.0]);
        let d = sparsemax_backward(&p, &[0.3, -2.0, 4.0]).unwrap();
        assert_eq!(d, vec![0.0, 0.0, 0.0]);

        assert!(sparsemax_backward(&[0.0, 0.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn scores_examples() {
        let mut g = Graph::new();
        let eye = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let q = g.input(&eye);
        let k = g.input(&eye);
        let s = scaled_scores(&mut g, q, k, 4).unwrap();
        assert_eq!(g.value(s), &[0.5, 0.0, 0.0, 0.5]);

        let qo = g.input(&Tensor::from_vec(&[1, 2], vec![0.0, 1.0]).unwrap());
        let ko = g.input(&Tensor::from_vec(&[2, 2], vec![1.0, 0.0, -3.0, 0.0]).unwrap());
        let s = scaled_scores(&mut g, qo, ko, 2).unwrap();
        assert_eq!(g.value(s), &[0.0, 0.0]);

        let z = g.input(&Tensor::zeros(&[3, 2]));
        let s = scaled_scores(&mut g, z, ko, 2).unwrap();
        assert!(g.value(s).iter().all(|&v| v == 0.0));
        assert!(scaled_scores(&mut g, z, ko, 0).is_err());
    }

    #[test]
    fn attend_examples() {
        let mut g = Graph::new();
        let rows = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let v = g.input(&Tensor::from_vec(&[3, 2], rows.to_vec()).unwrap());
        let one_hot = g.input(&Tensor::from_vec(&[1, 3], vec![0.0, 1.0, 0.0]).unwrap());
        let y = attend(&mut g, one_hot, v).unwrap();
        assert_eq!(g.value(y), &[3.0, 4.0]);

        let uni = g.input(&Tensor::full(&[1, 3], 1.0 / 3.0));
        let y = attend(&mut g, uni, v).unwrap();
        assert!(close(g.value(y), &[3.0, 4.0], 1e-12));

        let w = g.input(&Tensor::from_vec(&[1, 3], vec![0.75, 0.25, 0.0]).unwrap());
        let y = attend(&mut g, w, v).unwrap();
        assert!(close(g.value(y), &[0.75 + 0.75, 1.5 + 1.0], 1e-12));

        let bad = g.input(&Tensor::from_vec(&[1, 3], vec![0.5, 0.6, 0.0]).unwrap());
        assert!(matches!(attend(&mut g, bad, v), Err(Error::Contract(_))));
    }

    #[test]
    fn parse_normalizer() {
        assert_eq!("sparsemax".parse::<Normalizer>().unwrap(), Normalizer::Sparsemax);
        let err = "tanh".parse::<Normalizer>().unwrap_err().to_string();
        assert!(err.contains("softmax, sparsemax"));
    }
}
