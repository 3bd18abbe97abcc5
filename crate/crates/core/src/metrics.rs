//! Retrieval evaluation under same-identity-same-camera exclusion.
//!
//! For each query, gallery entries sharing both its identity and camera are
//! dropped; the rest are ranked by ascending distance with ties broken by
//! gallery index.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major `n_q x n_g` distance matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    pub n_queries: usize,
    pub n_gallery: usize,
    pub data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn row(&self, q: usize) -> &[f64] {
        &self.data[q * self.n_gallery..(q + 1) * self.n_gallery]
    }

    pub fn at(&self, q: usize, g: usize) -> f64 {
        self.data[q * self.n_gallery + g]
    }
}

/// Identity and camera labels of one side of the retrieval problem.
#[derive(Clone, Copy, Debug)]
pub struct Labels<'a> {
    pub ids: &'a [usize],
    pub cams: &'a [usize],
}

pub fn pairwise_distances(queries: &[Vec<f64>], gallery: &[Vec<f64>]) -> Result<DistanceMatrix> {
    let dim = queries.first().or(gallery.first()).map_or(0, Vec::len);
    if let Some(bad) = queries.iter().chain(gallery).find(|v| v.len() != dim) {
        return Err(Error::shape(format!(
            "descriptor of length {} among descriptors of length {dim}",
            bad.len()
        )));
    }
    let mut data = Vec::with_capacity(queries.len() * gallery.len());
    for q in queries {
        for g in gallery {
            let s: f64 = q.iter().zip(g).map(|(a, b)| (a - b) * (a - b)).sum();
            data.push(s.sqrt());
        }
    }
    Ok(DistanceMatrix {
        n_queries: queries.len(),
        n_gallery: gallery.len(),
        data,
    })
}

/// Scales each descriptor to unit length (zero vectors stay zero).
pub fn l2_normalize(descriptors: &[Vec<f64>]) -> Vec<Vec<f64>> {
    descriptors
        .iter()
        .map(|d| {
            let n = d.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.0 {
                d.iter().map(|x| x / n).collect()
            } else {
                d.clone()
            }
        })
        .collect()
}

fn check_labels(d: &DistanceMatrix, q: Labels<'_>, g: Labels<'_>) -> Result<()> {
    if q.ids.len() != d.n_queries || q.cams.len() != d.n_queries {
        return Err(Error::shape("query labels do not match the distance matrix rows"));
    }
    if g.ids.len() != d.n_gallery || g.cams.len() != d.n_gallery {
        return Err(Error::shape("gallery labels do not match the distance matrix columns"));
    }
    if d.data.len() != d.n_queries * d.n_gallery {
        return Err(Error::shape("distance matrix data has the wrong length"));
    }
    Ok(())
}

/// Gallery indices for query `qi`, after exclusion, nearest first.
pub fn ranked_gallery(d: &DistanceMatrix, qi: usize, q: Labels<'_>, g: Labels<'_>) -> Vec<usize> {
    let row = d.row(qi);
    let mut idx: Vec<usize> = (0..d.n_gallery)
        .filter(|&j| !(g.ids[j] == q.ids[qi] && g.cams[j] == q.cams[qi]))
        .collect();
    idx.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
    idx
}

/// Cumulative match characteristic at ranks `1..=k`.
pub fn cmc(d: &DistanceMatrix, q: Labels<'_>, g: Labels<'_>, k: usize) -> Result<Vec<f64>> {
    check_labels(d, q, g)?;
    if k == 0 {
        return Err(Error::contract("CMC needs at least rank 1"));
    }
    let mut hits = vec![0usize; k];
    for qi in 0..d.n_queries {
        let ranked = ranked_gallery(d, qi, q, g);
        let first = ranked
            .iter()
            .position(|&j| g.ids[j] == q.ids[qi])
            .ok_or(Error::NoValidMatch { query: qi })?;
        for h in hits.iter_mut().skip(first) {
            *h += 1;
        }
    }
    let n = d.n_queries.max(1) as f64;
    Ok(hits.into_iter().map(|h| h as f64 / n).collect())
}

/// Mean over queries of average precision.
pub fn map_score(d: &DistanceMatrix, q: Labels<'_>, g: Labels<'_>) -> Result<f64> {
    check_labels(d, q, g)?;
    let mut total = 0.0;
    for qi in 0..d.n_queries {
        let ranked = ranked_gallery(d, qi, q, g);
        let mut found = 0usize;
        let mut precision_sum = 0.0;
        for (rank, &j) in ranked.iter().enumerate() {
            if g.ids[j] == q.ids[qi] {
                found += 1;
                precision_sum += found as f64 / (rank + 1) as f64;
            }
        }
        if found == 0 {
            return Err(Error::NoValidMatch { query: qi });
        }
        total += precision_sum / found as f64;
    }
    Ok(total / d.n_queries.max(1) as f64)
}

/// The `k` nearest gallery indices per query; with labels, excluded entries
/// are skipped first.
pub fn topk_retrieval(
    d: &DistanceMatrix,
    k: usize,
    labels: Option<(Labels<'_>, Labels<'_>)>,
) -> Result<Vec<Vec<usize>>> {
    if k > d.n_gallery {
        return Err(Error::contract(format!(
            "k = {k} exceeds the gallery size {}",
            d.n_gallery
        )));
    }
    (0..d.n_queries)
        .map(|qi| {
            let ranked = match labels {
                Some((q, g)) => {
                    check_labels(d, q, g)?;
                    ranked_gallery(d, qi, q, g)
                }
                None => {
                    let row = d.row(qi);
                    let mut idx: Vec<usize> = (0..d.n_gallery).collect();
                    idx.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
                    idx
                }
            };
            if ranked.len() < k {
                return Err(Error::contract(format!(
                    "query {qi} has only {} gallery entries after exclusion",
                    ranked.len()
                )));
            }
            Ok(ranked[..k].to_vec())
        })
        .collect()
}

/// Descriptors with identity and camera labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Embeddings {
    pub ids: Vec<usize>,
    pub cams: Vec<usize>,
    pub descriptors: Vec<Vec<f64>>,
}

impl Embeddings {
    pub fn labels(&self) -> Labels<'_> {
        Labels {
            ids: &self.ids,
            cams: &self.cams,
        }
    }

    /// TSV: `identity, camera, d0..d{C-1}`, with a header row. Floats use the
    /// shortest representation that parses back to the same value.
    pub fn to_tsv(&self) -> String {
        let dim = self.descriptors.first().map_or(0, Vec::len);
        let mut out = String::from("identity\tcamera");
        for c in 0..dim {
            let _ = write!(out, "\td{c}");
        }
        out.push('\n');
        for ((id, cam), d) in self.ids.iter().zip(&self.cams).zip(&self.descriptors) {
            let _ = write!(out, "{id}\t{cam}");
            for v in d {
                let _ = write!(out, "\t{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::load("embeddings", "empty file"))?;
        let dim = header.split('\t').count().saturating_sub(2);
        let mut e = Embeddings {
            ids: Vec::new(),
            cams: Vec::new(),
            descriptors: Vec::new(),
        };
        for (i, line) in lines.enumerate() {
            let what = format!("embeddings line {}", i + 2);
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != dim + 2 {
                return Err(Error::load(&what, format!("expected {} columns", dim + 2)));
            }
            let int = |s: &str| s.parse::<usize>().map_err(|_| Error::load(&what, format!("bad integer {s:?}")));
            e.ids.push(int(cols[0])?);
            e.cams.push(int(cols[1])?);
            let d = cols[2..]
                .iter()
                .map(|s| s.parse::<f64>().map_err(|_| Error::load(&what, format!("bad float {s:?}"))))
                .collect::<Result<Vec<f64>>>()?;
            e.descriptors.push(d);
        }
        Ok(e)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&text)
    }
}

pub fn cmc_to_tsv(curve: &[f64]) -> String {
    let mut out = String::from("rank\taccuracy\n");
    for (i, v) in curve.iter().enumerate() {
        let _ = writeln!(out, "{}\t{v}", i + 1);
    }
    out
}

/// Rank-1, rank-5, mAP and the full CMC curve for one model.
#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalReport {
    pub rank1: f64,
    pub rank5: f64,
    pub map: f64,
    pub cmc: Vec<f64>,
}

pub fn evaluate(queries: &Embeddings, gallery: &Embeddings, cosine: bool) -> Result<RetrievalReport> {
    let (qd, gd) = if cosine {
        (l2_normalize(&queries.descriptors), l2_normalize(&gallery.descriptors))
    } else {
        (queries.descriptors.clone(), gallery.descriptors.clone())
    };
    let d = pairwise_distances(&qd, &gd)?;
    evaluate_distances(&d, queries.labels(), gallery.labels())
}

pub fn evaluate_distances(d: &DistanceMatrix, q: Labels<'_>, g: Labels<'_>) -> Result<RetrievalReport> {
    let k = d.n_gallery.max(1);
    let curve = cmc(d, q, g, k)?;
    Ok(RetrievalReport {
        rank1: curve[0],
        rank5: curve[4.min(k - 1)],
        map: map_score(d, q, g)?,
        cmc: curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dm(nq: usize, ng: usize, data: &[f64]) -> DistanceMatrix {
        DistanceMatrix {
            n_queries: nq,
            n_gallery: ng,
            data: data.to_vec(),
        }
    }

    #[test]
    fn distance_examples() {
        let d = pairwise_distances(&[vec![0.0, 0.0]], &[vec![3.0, 4.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(d.data, vec![5.0, 0.0]);
        assert!(pairwise_distances(&[vec![0.0]], &[vec![0.0, 1.0]]).is_err());
    }

    #[test]
    fn perfect_retrieval_gives_ones() {
        let d = dm(2, 3, &[0.1, 0.5, 0.9, 0.9, 0.5, 0.1]);
        let q = Labels { ids: &[0, 2], cams: &[0, 0] };
        let g = Labels { ids: &[0, 1, 2], cams: &[1, 1, 1] };
        assert_eq!(cmc(&d, q, g, 3).unwrap(), vec![1.0, 1.0, 1.0]);
        assert_eq!(map_score(&d, q, g).unwrap(), 1.0);
    }

    #[test]
    fn match_at_position_three() {
        let d = dm(1, 5, &[0.1, 0.2, 0.3, 0.4, 0.5]);
        let q = Labels { ids: &[7], cams: &[0] };
        let g = Labels { ids: &[1, 2, 7, 3, 4], cams: &[1; 5] };
        assert_eq!(cmc(&d, q, g, 5).unwrap(), vec![0.0, 0.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn hand_average_precision() {
        let d = dm(1, 4, &[0.1, 0.2, 0.3, 0.4]);
        let q = Labels { ids: &[7], cams: &[0] };
        let g = Labels { ids: &[7, 1, 7, 2], cams: &[1; 4] };
        let ap = map_score(&d, q, g).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn same_camera_matches_are_excluded() {
        let d = dm(1, 3, &[0.0, 0.5, 0.9]);
        let q = Labels { ids: &[1], cams: &[0] };
        let g = Labels { ids: &[1, 2, 1], cams: &[0, 1, 1] };
        assert_eq!(cmc(&d, q, g, 2).unwrap(), vec![0.0, 1.0]);
        let only_same_cam = Labels { ids: &[1, 2, 2], cams: &[0, 1, 1] };
        assert!(matches!(
            cmc(&d, q, only_same_cam, 2),
            Err(Error::NoValidMatch { query: 0 })
        ));
        assert!(map_score(&d, q, only_same_cam).is_err());
    }

    #[test]
    fn ties_break_by_gallery_index() {
        let d = dm(1, 3, &[0.5, 0.5, 0.5]);
        let top = topk_retrieval(&d, 3, None).unwrap();
        assert_eq!(top, vec![vec![0, 1, 2]]);
        assert_eq!(topk_retrieval(&d, 1, None).unwrap(), vec![vec![0]]);
        assert!(topk_retrieval(&d, 4, None).is_err());
    }

    #[test]
    fn tsv_roundtrip_is_exact() {
        let e = Embeddings {
            ids: vec![3, 4],
            cams: vec![0, 1],
            descriptors: vec![vec![0.1, -1.0 / 3.0], vec![1e-300, 12345.678901234]],
        };
        let back = Embeddings::from_tsv(&e.to_tsv()).unwrap();
        assert_eq!(back, e);
        assert!(cmc_to_tsv(&[0.5, 1.0]).starts_with("rank\taccuracy\n1\t0.5\n"));
    }
}
