mod common;

use common::{brute_cmc, brute_map, kkt_sparsemax, random_instance};
use ofoh::attention::{softmax, sparsemax};
use ofoh::config::RunConfig;
use ofoh::dem1::orthogonal_decompose;
use ofoh::ensemble::vote;
use ofoh::metrics::{self, DistanceMatrix, Embeddings, Labels};
use ofoh::{checkpoint, losses, Graph, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn vec_in(lo: f64, hi: f64, len: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(lo..hi, len)
}

fn on_simplex(p: &[f64]) -> bool {
    p.iter().all(|&x| x >= 0.0) && (p.iter().sum::<f64>() - 1.0).abs() <= 1e-9
}

proptest! {
    #[test]
    fn sparsemax_matches_kkt_and_is_on_simplex(z in vec_in(-3.0, 3.0, 1..=8)) {
        let p = sparsemax(&z).unwrap();
        prop_assert!(on_simplex(&p));
        for (a, b) in p.iter().zip(kkt_sparsemax(&z)) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn sparsemax_is_shift_invariant(z in vec_in(-3.0, 3.0, 1..=8), c in -4.0f64..4.0) {
        let p = sparsemax(&z).unwrap();
        let shifted: Vec<f64> = z.iter().map(|x| x + c).collect();
        for (a, b) in p.iter().zip(sparsemax(&shifted).unwrap()) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn sparsemax_rows_agrees_with_the_vector_form(z in vec_in(-3.0, 3.0, 6..=6)) {
        let mut g = Graph::new();
        let x = g.constant(&[2, 3], z.clone()).unwrap();
        let y = g.sparsemax_rows(x).unwrap();
        let rows: Vec<f64> = z.chunks(3).flat_map(|r| sparsemax(r).unwrap()).collect();
        prop_assert_eq!(g.value(y), rows.as_slice());
    }

    #[test]
    fn softmax_is_on_simplex(z in vec_in(-30.0, 30.0, 1..=12)) {
        prop_assert!(on_simplex(&softmax(&z).unwrap()));
    }

    #[test]
    fn vote_preserves_simplex_and_shared_argmax(raw in prop::collection::vec(vec_in(0.01, 1.0, 4..=4), 1..=5)) {
        let members: Vec<Vec<f64>> = raw
            .iter()
            .map(|r| {
                let s: f64 = r.iter().sum();
                r.iter().map(|x| x / s).collect()
            })
            .collect();
        let v = vote(&members).unwrap();
        prop_assert!((v.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let argmax = |p: &[f64]| (0..p.len()).max_by(|&i, &j| p[i].total_cmp(&p[j])).unwrap();
        let first = argmax(&members[0]);
        if members.iter().all(|m| argmax(m) == first) {
            prop_assert_eq!(argmax(&v), first);
        }
    }

    #[test]
    fn orthogonal_part_is_orthogonal(f_l in vec_in(-5.0, 5.0, 8..=8), f_g in vec_in(-5.0, 5.0, 8..=8)) {
        let ng: f64 = f_g.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assume!(ng >= 1e-6);
        let (proj, orth) = orthogonal_decompose(&f_l, &f_g).unwrap();
        let nl: f64 = f_l.iter().map(|x| x * x).sum::<f64>().sqrt();
        let dot: f64 = orth.iter().zip(&f_g).map(|(a, b)| a * b).sum();
        prop_assert!(dot.abs() <= 1e-8 * nl.max(1e-300) * ng);
        for ((p, o), l) in proj.iter().zip(&orth).zip(&f_l) {
            prop_assert!((p + o - l).abs() <= 1e-12 * (1.0 + l.abs()));
        }
    }

    #[test]
    fn diversity_loss_is_bounded(w in vec_in(-1.0, 1.0, 12..=12)) {
        prop_assume!(w.chunks(4).all(|r| r.iter().map(|x| x * x).sum::<f64>() > 1e-6));
        let mut g = Graph::new();
        let v = g.constant(&[3, 4], w).unwrap();
        let l = losses::diversity_loss(&mut g, v).unwrap();
        let l = g.scalar_value(l);
        prop_assert!((-std::f64::consts::PI..=0.0).contains(&l));
    }

    #[test]
    fn triplet_loss_is_translation_invariant(
        f in vec_in(-2.0, 2.0, 5..=5),
        p in vec_in(-2.0, 2.0, 5..=5),
        n in vec_in(-2.0, 2.0, 5..=5),
        c in vec_in(-3.0, 3.0, 5..=5),
    ) {
        let eval = |shift: &[f64]| {
            let mut g = Graph::new();
            let mk = |g: &mut Graph, v: &[f64]| {
                let data = v.iter().zip(shift).map(|(a, b)| a + b).collect();
                g.constant(&[5], data).unwrap()
            };
            let (a, b, d) = (mk(&mut g, &f), mk(&mut g, &p), mk(&mut g, &n));
            let l = losses::triplet_loss(&mut g, a, b, d, 0.3).unwrap();
            g.scalar_value(l)
        };
        prop_assert!((eval(&[0.0; 5]) - eval(&c)).abs() <= 1e-9);
    }

    #[test]
    fn checkpoints_reencode_identically(vals in vec_in(-1e6, 1e6, 2..=40), split in 1usize..40) {
        let split = split.min(vals.len() - 1);
        let entries = vec![
            ("a.w".to_string(), Tensor::from_vec(&[split], vals[..split].to_vec()).unwrap()),
            ("b".to_string(), Tensor::from_vec(&[vals.len() - split], vals[split..].to_vec()).unwrap()),
        ];
        let bytes = checkpoint::encode(&entries);
        let back = checkpoint::decode(&bytes).unwrap();
        prop_assert_eq!(checkpoint::encode(&back), bytes);
        for ((_, t), (_, u)) in entries.iter().zip(&back) {
            for (a, b) in t.data().iter().zip(u.data()) {
                prop_assert_eq!((*a as f32) as f64, *b);
            }
        }
    }

    #[test]
    fn embeddings_tsv_roundtrip_is_exact(d in prop::collection::vec(vec_in(-1e9, 1e9, 3..=3), 1..=6)) {
        let e = Embeddings {
            ids: (0..d.len()).collect(),
            cams: vec![1; d.len()],
            descriptors: d,
        };
        prop_assert_eq!(Embeddings::from_tsv(&e.to_tsv()).unwrap(), e);
    }

    #[test]
    fn resolved_config_parses_back(seed in any::<u64>(), lambda in 0.0f64..1.0, cosine in any::<bool>()) {
        let mut cfg = RunConfig::default();
        cfg.seed = seed;
        cfg.set("lambda_div", &lambda.to_string()).unwrap();
        cfg.cosine = cosine;
        let back = RunConfig::parse_with(&cfg.to_text(), &[]).unwrap();
        prop_assert_eq!(back.to_text(), cfg.to_text());
    }

    #[test]
    fn retrieval_metrics_invariants(seed in any::<u64>()) {
        let x = random_instance(&mut ChaCha8Rng::seed_from_u64(seed));
        let q = Labels { ids: &x.q_ids, cams: &x.q_cams };
        let g = Labels { ids: &x.g_ids, cams: &x.g_cams };
        let k = x.d.n_gallery;
        let c = metrics::cmc(&x.d, q, g, k).unwrap();
        prop_assert!(c.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(c.last().copied(), Some(1.0));
        let m = metrics::map_score(&x.d, q, g).unwrap();
        prop_assert!(m > 0.0 && m <= 1.0);
        prop_assert_eq!(&c, &brute_cmc(&x, k));
        prop_assert!((m - brute_map(&x)).abs() <= 1e-12);

        // Top-k lists agree with the ordering used by the CMC.
        let top = metrics::topk_retrieval(&x.d, 1, Some((q, g))).unwrap();
        let r1 = top.iter().zip(&x.q_ids).filter(|(t, id)| t.first().map(|&j| x.g_ids[j]) == Some(**id)).count();
        prop_assert_eq!(r1 as f64 / x.d.n_queries as f64, c[0]);

        // Scaling every distance by a power of two changes no ranking.
        let scaled = DistanceMatrix { data: x.d.data.iter().map(|v| v * 4.0).collect(), ..x.d.clone() };
        prop_assert_eq!(metrics::cmc(&scaled, q, g, k).unwrap(), c);
    }

    #[test]
    fn descriptor_scaling_preserves_retrieval(
        raw in prop::collection::vec(vec_in(-1.0, 1.0, 4..=4), 8..=8),
        c in 0.1f64..10.0,
    ) {
        let ids = vec![0, 1, 2, 3, 0, 1, 2, 3];
        let cams = vec![0, 0, 0, 0, 1, 1, 1, 1];
        let q = Embeddings { ids: ids[..4].to_vec(), cams: cams[..4].to_vec(), descriptors: raw[..4].to_vec() };
        let g = Embeddings { ids: ids[4..].to_vec(), cams: cams[4..].to_vec(), descriptors: raw[4..].to_vec() };
        let scale = |e: &Embeddings| Embeddings {
            descriptors: e.descriptors.iter().map(|d| d.iter().map(|x| x * c).collect()).collect(),
            ..e.clone()
        };
        let a = metrics::evaluate(&q, &g, false).unwrap();
        let b = metrics::evaluate(&scale(&q), &scale(&g), false).unwrap();
        // Non-power-of-two scales may perturb exact ties, which random data avoids.
        prop_assert_eq!(a.cmc, b.cmc);
        prop_assert!((a.map - b.map).abs() <= 1e-12);
    }
}
