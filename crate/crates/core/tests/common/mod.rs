//! Independent oracles shared by the acceptance and property targets.
#![allow(dead_code)]

pub mod grad;

use ofoh::metrics::DistanceMatrix;
use rand::Rng;

/// Euclidean projection onto the simplex by exhaustive support search: the
/// support `S` is valid when every `z_i - tau` on `S` is non-negative and every
/// entry off `S` is at most `tau`, with `tau = (sum_S z - 1) / |S|`.
pub fn kkt_sparsemax(z: &[f64]) -> Vec<f64> {
    let k = z.len();
    assert!((1..=16).contains(&k));
    for bits in 1u32..(1 << k) {
        let s: Vec<usize> = (0..k).filter(|i| bits & (1 << i) != 0).collect();
        let tau = (s.iter().map(|&i| z[i]).sum::<f64>() - 1.0) / s.len() as f64;
        let inside = s.iter().all(|&i| z[i] - tau >= -1e-12);
        let outside = (0..k).filter(|i| bits & (1 << i) == 0).all(|j| z[j] <= tau + 1e-12);
        if inside && outside {
            return (0..k)
                .map(|i| if bits & (1 << i) != 0 { (z[i] - tau).max(0.0) } else { 0.0 })
                .collect();
        }
    }
    unreachable!("the simplex projection always exists")
}

/// A random retrieval instance with coarse distances (so ties occur) and at
/// least one valid match per query.
pub struct Instance {
    pub d: DistanceMatrix,
    pub q_ids: Vec<usize>,
    pub q_cams: Vec<usize>,
    pub g_ids: Vec<usize>,
    pub g_cams: Vec<usize>,
}

pub fn random_instance<R: Rng>(rng: &mut R) -> Instance {
    loop {
        let nq = rng.gen_range(1..=10);
        let ng = rng.gen_range(1..=50);
        let n_ids = rng.gen_range(1..=6);
        let q_ids: Vec<usize> = (0..nq).map(|_| rng.gen_range(0..n_ids)).collect();
        let q_cams: Vec<usize> = (0..nq).map(|_| rng.gen_range(0..3)).collect();
        let g_ids: Vec<usize> = (0..ng).map(|_| rng.gen_range(0..n_ids)).collect();
        let g_cams: Vec<usize> = (0..ng).map(|_| rng.gen_range(0..3)).collect();
        let valid = (0..nq).all(|q| (0..ng).any(|g| g_ids[g] == q_ids[q] && g_cams[g] != q_cams[q]));
        if !valid {
            continue;
        }
        let data = (0..nq * ng).map(|_| rng.gen_range(0..8) as f64 * 0.25).collect();
        return Instance {
            d: DistanceMatrix {
                n_queries: nq,
                n_gallery: ng,
                data,
            },
            q_ids,
            q_cams,
            g_ids,
            g_cams,
        };
    }
}

/// Valid gallery entries of query `q`, fully re-sorted by (distance, index).
fn brute_order(x: &Instance, q: usize) -> Vec<usize> {
    let mut items: Vec<(f64, usize)> = (0..x.d.n_gallery)
        .filter(|&g| !(x.g_ids[g] == x.q_ids[q] && x.g_cams[g] == x.q_cams[q]))
        .map(|g| (x.d.data[q * x.d.n_gallery + g], g))
        .collect();
    items.sort_by(|a, b| a.partial_cmp(b).unwrap());
    items.into_iter().map(|(_, g)| g).collect()
}

pub fn brute_cmc(x: &Instance, k: usize) -> Vec<f64> {
    let nq = x.d.n_queries;
    let mut hits = vec![0usize; k];
    for q in 0..nq {
        let order = brute_order(x, q);
        let first = order.iter().position(|&g| x.g_ids[g] == x.q_ids[q]).unwrap();
        for (r, h) in hits.iter_mut().enumerate() {
            if first <= r {
                *h += 1;
            }
        }
    }
    hits.into_iter().map(|h| h as f64 / nq as f64).collect()
}

pub fn brute_map(x: &Instance) -> f64 {
    let nq = x.d.n_queries;
    let mut total = 0.0;
    for q in 0..nq {
        let order = brute_order(x, q);
        let (mut found, mut sum) = (0usize, 0.0);
        for (pos, &g) in order.iter().enumerate() {
            if x.g_ids[g] == x.q_ids[q] {
                found += 1;
                sum += found as f64 / (pos + 1) as f64;
            }
        }
        total += sum / found as f64;
    }
    total / nq as f64
}
