//! Central finite differences against reverse mode, 100 seeds per op.
//! Each check panics on failure.

use ofoh::attention::{sparsemax, Normalizer};
use ofoh::dem1::{self, Dem1Config, Dem1Input, Dem1Model};
use ofoh::dem2::{Dem2Config, Dem2Model};
use ofoh::gradcheck::{check, GradCheckReport};
use ofoh::image::{Image, PartMask};
use ofoh::losses;
use ofoh::masking::{MaskStrategy, MeanFill};
use ofoh::nn::Linear;
use ofoh::{Binding, Graph, ParamSet, Result, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;
const SEEDS: u64 = 100;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, r)
}

/// `sum(y * R)` for a fixed random `R`, so every output element matters.
fn weighted(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let r = Tensor::uniform(&shape, -1.0, 1.0, &mut rng(seed ^ 0x5eed));
    let c = g.constant(&shape, r.into_data())?;
    let p = g.mul(y, c)?;
    Ok(g.sum(p))
}

fn assert_ok(op: &str, seed: u64, r: GradCheckReport) {
    assert!(
        r.max_rel_error <= TOL,
        "{op} seed {seed}: rel error {:e} at {:?} (analytic {}, numeric {})",
        r.max_rel_error,
        r.worst,
        r.analytic,
        r.numeric
    );
}

fn each_seed(op: &str, mut f: impl FnMut(u64) -> Result<GradCheckReport>) {
    for seed in 0..SEEDS {
        assert_ok(op, seed, f(seed).unwrap());
    }
}

pub fn matmul() {
    each_seed("matmul", |s| {
        let mut r = rng(s);
        let ins = [uniform(&[3, 4], &mut r), uniform(&[4, 2], &mut r)];
        check(&ins, EPS, |g, v| {
            let y = g.matmul(v[0], v[1])?;
            weighted(g, y, s)
        })
    });
}

pub fn conv2d() {
    each_seed("conv2d", |s| {
        let mut r = rng(s);
        let stride = 1 + (s % 2) as usize;
        let ins = [uniform(&[5, 6, 2], &mut r), uniform(&[3, 3, 2, 3], &mut r)];
        check(&ins, EPS, |g, v| {
            let y = g.conv2d(v[0], v[1], stride, 1)?;
            weighted(g, y, s)
        })
    });
}

pub fn global_avg_pool() {
    each_seed("gap", |s| {
        let ins = [uniform(&[4, 3, 5], &mut rng(s))];
        check(&ins, EPS, |g, v| {
            let y = g.global_avg_pool(v[0])?;
            weighted(g, y, s)
        })
    });
}

pub fn softmax_rows() {
    each_seed("softmax", |s| {
        let ins = [Tensor::uniform(&[3, 5], -3.0, 3.0, &mut rng(s))];
        check(&ins, EPS, |g, v| {
            let y = g.softmax_rows(v[0])?;
            weighted(g, y, s)
        })
    });
}

/// Smallest distance from any entry of a row to the sparsemax threshold.
fn boundary_margin(row: &[f64]) -> f64 {
    let p = sparsemax(row).unwrap();
    let (i, _) = p
        .iter()
        .enumerate()
        .find(|(_, &x)| x > 0.0)
        .expect("non-empty support");
    let tau = row[i] - p[i];
    row.iter().map(|z| (z - tau).abs()).fold(f64::INFINITY, f64::min)
}

pub fn sparsemax_rows_away_from_support_boundaries() {
    let mut checked = 0;
    let mut seed = 0;
    while checked < SEEDS {
        seed += 1;
        let t = Tensor::uniform(&[3, 5], -1.5, 1.5, &mut rng(seed));
        if t.data().chunks(5).any(|row| boundary_margin(row) < 1e-3) {
            continue;
        }
        let r = check(&[t], EPS, |g, v| {
            let y = g.sparsemax_rows(v[0])?;
            weighted(g, y, seed)
        })
        .unwrap();
        assert_ok("sparsemax", seed, r);
        checked += 1;
    }
}

pub fn orthogonal_fuse() {
    each_seed("orthogonal_fuse", |s| {
        let mut r = rng(s);
        let c = 5;
        let mut params = ParamSet::new();
        let fc = Linear::new(&mut params, "fc", 2 * c, c, &mut r);
        let ins = [
            uniform(&[c], &mut r),
            uniform(&[c], &mut r),
            params.get(fc.w).clone(),
            uniform(&[c], &mut r),
        ];
        check(&ins, EPS, |g, v| {
            let b = Binding::from_vars(vec![v[2], v[3]]);
            let y = dem1::orthogonal_fuse(g, &b, &fc, v[0], v[1])?;
            weighted(g, y, s)
        })
    });
}

pub fn id_loss() {
    each_seed("id_loss", |s| {
        let class = (s % 6) as usize;
        let ins = [Tensor::uniform(&[1, 6], -2.0, 2.0, &mut rng(s))];
        check(&ins, EPS, |g, v| {
            let p = g.softmax_rows(v[0])?;
            let p = g.reshape(p, &[6])?;
            losses::id_loss(g, p, class, 1.0)
        })
    });
}

/// Descriptor triples whose hinge argument is at least `1e-3` from the kink.
fn triple(seed: u64) -> [Tensor; 3] {
    let mut s = seed;
    loop {
        let mut r = rng(s);
        let t = [uniform(&[6], &mut r), uniform(&[6], &mut r), uniform(&[6], &mut r)];
        let d = |a: &Tensor, b: &Tensor| {
            a.data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()
        };
        let arg = d(&t[0], &t[1]) - d(&t[0], &t[2]) + 0.3;
        if arg.abs() > 1e-3 {
            return t;
        }
        s += 1_000_000;
    }
}

pub fn triplet_loss() {
    each_seed("triplet", |s| {
        check(&triple(s), EPS, |g, v| losses::triplet_loss(g, v[0], v[1], v[2], 0.3))
    });
}

pub fn discriminative_loss() {
    each_seed("discriminative", |s| {
        let [a, p, n] = triple(s);
        let logits = Tensor::uniform(&[1, 4], -2.0, 2.0, &mut rng(s + 7));
        check(&[a, p, n, logits], EPS, |g, v| {
            let sm = g.softmax_rows(v[3])?;
            let sm = g.reshape(sm, &[4])?;
            let id = losses::id_loss(g, sm, 1, 1.0)?;
            let tri = losses::triplet_loss(g, v[0], v[1], v[2], 0.3)?;
            losses::discriminative_loss(g, id, tri)
        })
    });
}

pub fn diversity_loss() {
    each_seed("diversity", |s| {
        let ins = [uniform(&[4, 8], &mut rng(s))];
        check(&ins, EPS, |g, v| losses::diversity_loss(g, v[0]))
    });
}

pub fn total_loss() {
    each_seed("total", |s| {
        let [a, p, n] = triple(s);
        let mut r = rng(s + 11);
        let w = uniform(&[4, 8], &mut r);
        let logits = Tensor::uniform(&[1, 4], -2.0, 2.0, &mut r);
        check(&[a, p, n, w, logits], EPS, |g, v| {
            let sm = g.softmax_rows(v[4])?;
            let sm = g.reshape(sm, &[4])?;
            let id = losses::id_loss(g, sm, 2, 1.0)?;
            let tri = losses::triplet_loss(g, v[0], v[1], v[2], 0.3)?;
            let dis = losses::discriminative_loss(g, id, tri)?;
            let div = losses::diversity_loss(g, v[3])?;
            losses::total_loss(g, dis, div, 0.01)
        })
    });
}

/// Binds `checked` leaves for the named parameters and constants for the rest.
fn partial_binding(g: &mut Graph, params: &ParamSet, names: &[String], checked: &[Var]) -> Result<Binding> {
    let mut vars = Vec::with_capacity(params.len());
    for (name, t) in params.iter() {
        match names.iter().position(|n| n == name) {
            Some(i) => vars.push(checked[i]),
            None => vars.push(g.constant(t.shape(), t.data().to_vec())?),
        }
    }
    Ok(Binding::from_vars(vars))
}

pub fn encoder_block() {
    each_seed("encoder block", |s| {
        let mut cfg = Dem2Config::new(3, 16, 8);
        cfg.depth = 2;
        cfg.dim = 16;
        cfg.heads = 2;
        cfg.max_shift = 1;
        let model = Dem2Model::new(cfg, s).unwrap();
        let names: Vec<String> = model
            .params()
            .iter()
            .map(|(n, _)| n.to_string())
            .filter(|n| n.starts_with("block0."))
            .collect();
        let mut ins = vec![Tensor::uniform(&[5, 16], -1.0, 1.0, &mut rng(s))];
        ins.extend(names.iter().map(|n| {
            let mut t = model.params().get(model.params().find(n).unwrap()).clone();
            // Perturb LN affine terms away from their 1/0 init.
            t.data_mut().iter_mut().for_each(|x| *x += 0.01);
            t
        }));
        let block = model.blocks[0];
        check(&ins, EPS, |g, v| {
            let b = partial_binding(g, model.params(), &names, &v[1..])?;
            let y = model.block_forward(g, &b, &block, v[0])?;
            weighted(g, y, s)
        })
    });
}

fn dem1_sample(seed: u64) -> (Dem1Model, Dem1Input) {
    let cfg = Dem1Config {
        channels: 4,
        n_classes: 3,
        normalizer: Normalizer::Sparsemax,
        mae: true,
        stem_widths: [4, 4],
    };
    let model = Dem1Model::new(cfg, seed).unwrap();
    let mut r = rng(seed);
    let img = Image::new(16, 8, 3, (0..16 * 8 * 3).map(|_| r.gen()).collect()).unwrap();
    let labels = (0..16 * 8).map(|i| 1 + (i / 32) as u8).collect();
    let mask = PartMask::new(16, 8, labels).unwrap();
    let input = Dem1Input::prepare(&img, &mask, &MeanFill, &MaskStrategy::defaults(4), seed, true).unwrap();
    (model, input)
}

/// The whole context CNN on a 16x8 input, over every parameter from the
/// last conv stage on. A failing coordinate whose one-sided differences
/// disagree sits on a ReLU or sparsemax kink; such samples are skipped,
/// at most two of them.
pub fn dem1_composite() {
    let mut kinks = 0;
    for seed in 0..20 {
        let (model, input) = dem1_sample(seed);
        let names: Vec<String> = model
            .params()
            .iter()
            .map(|(n, _)| n.to_string())
            .filter(|n| !n.contains(".conv1.") && !n.contains(".conv2."))
            .collect();
        let ins: Vec<Tensor> = names
            .iter()
            .map(|n| model.params().get(model.params().find(n).unwrap()).clone())
            .collect();
        let f = |g: &mut Graph, v: &[Var]| -> Result<Var> {
            let b = partial_binding(g, model.params(), &names, v)?;
            let out = model.forward_graph(g, &b, &input)?;
            let d = weighted(g, out.descriptor, seed)?;
            let id = losses::id_loss(g, out.scores, 1, 1.0)?;
            g.add(d, id)
        };
        let r = check(&ins, EPS, f).unwrap();
        if r.max_rel_error <= TOL {
            continue;
        }
        let eval = |delta: f64| {
            let mut t = ins.clone();
            t[r.worst.0].data_mut()[r.worst.1] += delta;
            let mut g = Graph::new();
            let v: Vec<Var> = t.iter().map(|x| g.input(x)).collect();
            let out = f(&mut g, &v).unwrap();
            g.scalar_value(out)
        };
        let f0 = eval(0.0);
        let left = (f0 - eval(-EPS)) / EPS;
        let right = (eval(EPS) - f0) / EPS;
        let kink = (left - right).abs() > 10.0 * TOL * left.abs().max(right.abs()).max(1e-3);
        assert!(kink, "dem1 composite seed {seed}: smooth point with rel error {:e}", r.max_rel_error);
        kinks += 1;
    }
    assert!(kinks <= 2, "{kinks} of 20 samples hit kinks");
}
