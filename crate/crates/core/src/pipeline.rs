//! End-to-end verbs over a run directory:
//! `config.resolved`, `checkpoints/`, `logs/`, `metrics/`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::augment;
use crate::checkpoint;
use crate::config::RunConfig;
use crate::data::{self, RenderedRecord, Split};
use crate::dem1::{Dem1Input, Dem1Model, Dem1Trainer};
use crate::dem2::{Dem1Verifier, Dem2Input, Dem2Model, Dem2Trainer, Verifier};
use crate::ensemble::{self, StackingModel};
use crate::error::{Error, Result};
use crate::masking::MeanFill;
use crate::metrics::{self, DistanceMatrix, Embeddings, RetrievalReport};
use crate::train::{self, EpochLog};

/// Caps the evaluation worker pool.
pub const THREADS_ENV: &str = "OFOH_THREADS";

pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        b = b.num_threads(n);
    }
    b.build()
        .map_err(|e| Error::contract(format!("cannot start worker pool: {e}")))
}

/// SplitMix64 over the parts, for per-record and per-view seeds.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut z = 0x9e37_79b9_7f4a_7c15u64;
    for &p in parts {
        z = z.wrapping_add(p).wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

pub struct RunDirs {
    pub root: PathBuf,
    pub checkpoints: PathBuf,
    pub logs: PathBuf,
    pub metrics: PathBuf,
}

/// Creates the run layout and echoes the resolved configuration.
pub fn run_dirs(cfg: &RunConfig) -> Result<RunDirs> {
    let root = cfg.out.clone();
    let dirs = RunDirs {
        checkpoints: root.join("checkpoints"),
        logs: root.join("logs"),
        metrics: root.join("metrics"),
        root,
    };
    for d in [&dirs.root, &dirs.checkpoints, &dirs.logs, &dirs.metrics] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    write(&dirs.root.join("config.resolved"), &cfg.to_text())?;
    Ok(dirs)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingPrerequisite(format!(
            "{what} not found at {}",
            path.display()
        )))
    }
}

pub fn gen_data(cfg: &RunConfig) -> Result<Vec<RenderedRecord>> {
    run_dirs(cfg)?;
    data::generate_dataset(&cfg.dataset(), &cfg.data_dir())
}

/// The loaded dataset and the sorted training identities (class `k` is
/// `train_ids[k]`).
pub struct Corpus {
    pub records: Vec<RenderedRecord>,
    pub train_ids: Vec<usize>,
}

impl Corpus {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let dir = cfg.data_dir();
        require(&dir.join("index.tsv"), "dataset (run gen-data first)")?;
        let records = data::load_dataset(&dir)?;
        let mut train_ids: Vec<usize> = records
            .iter()
            .filter(|r| r.split == Split::Train)
            .map(|r| r.identity)
            .collect();
        train_ids.sort_unstable();
        train_ids.dedup();
        Ok(Self { records, train_ids })
    }

    pub fn n_classes(&self) -> usize {
        self.train_ids.len()
    }

    pub fn class_of(&self, identity: usize) -> usize {
        self.train_ids
            .binary_search(&identity)
            .expect("training identity")
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.records.len())
            .filter(|&i| self.records[i].split == split)
            .collect()
    }
}

fn log_text(logs: &[EpochLog]) -> String {
    let mut s = format!("{}\n", train::LOG_HEADER);
    for l in logs {
        s.push_str(&l.tsv_row());
        s.push('\n');
    }
    s
}

fn dem1_input(cfg: &RunConfig, r: &RenderedRecord, idx: usize, view: usize) -> Result<Dem1Input> {
    let seed = derive_seed(&[cfg.seed, 1, idx as u64, view as u64]);
    let (img, mask) = augment::view(&r.image, &r.part_mask, &cfg.augment(cfg.dem1_views), view, seed);
    Dem1Input::prepare(&img, &mask, &MeanFill, &cfg.strategies(), seed, cfg.mae)
}

fn dem2_input(
    cfg: &RunConfig,
    r: &RenderedRecord,
    idx: usize,
    view: usize,
    verifier: &dyn Verifier,
) -> Result<Dem2Input> {
    let seed = derive_seed(&[cfg.seed, 2, idx as u64, view as u64]);
    let (img, mask) = augment::view(&r.image, &r.part_mask, &cfg.augment(cfg.dem2_views), view, seed);
    let c = cfg.dem2_config(2);
    Dem2Input::prepare(&img, &mask, &c, Some(verifier), seed)
}

fn verifier_for<'a>(cfg: &RunConfig, model: &'a Dem1Model) -> Dem1Verifier<'a> {
    Dem1Verifier {
        model,
        reconstructor: &MeanFill,
        strategies: cfg.strategies(),
        seed: derive_seed(&[cfg.seed, 3]),
    }
}

fn save_or_keep(path: &Path, entries: &[(String, crate::Tensor)], result: Result<Vec<EpochLog>>) -> Result<Vec<EpochLog>> {
    match result {
        Ok(logs) => {
            checkpoint::save(path, entries)?;
            Ok(logs)
        }
        Err(e @ Error::Numerical(_)) => {
            checkpoint::save(path, entries)?;
            Err(e)
        }
        Err(e) => Err(e),
    }
}

pub fn load_dem1(cfg: &RunConfig, path: &Path, n_classes: usize) -> Result<Dem1Model> {
    require(path, "DEM1 checkpoint (run train-dem1 first)")?;
    Dem1Model::from_checkpoint(cfg.dem1_config(n_classes), &checkpoint::load(path)?)
}

pub fn load_dem2(cfg: &RunConfig, path: &Path, n_classes: usize) -> Result<Dem2Model> {
    require(path, "DEM2 checkpoint (run train-dem2 first)")?;
    Dem2Model::from_checkpoint(cfg.dem2_config(n_classes), &checkpoint::load(path)?)
}

pub fn load_stack(path: &Path, n_classes: usize) -> Result<StackingModel> {
    require(path, "stacking checkpoint (run train-stack first)")?;
    StackingModel::from_checkpoint(n_classes, &checkpoint::load(path)?)
}

pub fn train_dem1(cfg: &RunConfig) -> Result<Vec<EpochLog>> {
    let dirs = run_dirs(cfg)?;
    let corpus = Corpus::load(cfg)?;
    let pool = worker_pool()?;
    let jobs: Vec<(usize, usize)> = corpus
        .indices(Split::Train)
        .into_iter()
        .flat_map(|i| (0..cfg.dem1_views).map(move |v| (i, v)))
        .collect();
    let inputs = pool.install(|| {
        jobs.par_iter()
            .map(|&(i, v)| dem1_input(cfg, &corpus.records[i], i, v))
            .collect::<Result<Vec<_>>>()
    })?;
    let labels: Vec<usize> = jobs
        .iter()
        .map(|&(i, _)| corpus.class_of(corpus.records[i].identity))
        .collect();
    let mut model = Dem1Model::new(cfg.dem1_config(corpus.n_classes()), derive_seed(&[cfg.seed, 11]))?;
    let result = {
        let mut t = Dem1Trainer {
            model: &mut model,
            inputs: &inputs,
        };
        train::train(&mut t, &labels, &cfg.dem1_train(), |_| {})
    };
    if let Ok(logs) = &result {
        write(&dirs.logs.join("dem1.tsv"), &log_text(logs))?;
    }
    save_or_keep(&dirs.checkpoints.join("dem1.ckpt"), &model.to_checkpoint(), result)
}

pub fn train_dem2(cfg: &RunConfig) -> Result<Vec<EpochLog>> {
    let dirs = run_dirs(cfg)?;
    let corpus = Corpus::load(cfg)?;
    let dem1 = load_dem1(cfg, &cfg.verifier_path(), corpus.n_classes())?;
    let verifier = verifier_for(cfg, &dem1);
    let pool = worker_pool()?;
    let jobs: Vec<(usize, usize)> = corpus
        .indices(Split::Train)
        .into_iter()
        .flat_map(|i| (0..cfg.dem2_views).map(move |v| (i, v)))
        .collect();
    let inputs = pool.install(|| {
        jobs.par_iter()
            .map(|&(i, v)| dem2_input(cfg, &corpus.records[i], i, v, &verifier))
            .collect::<Result<Vec<_>>>()
    })?;
    let labels: Vec<usize> = jobs
        .iter()
        .map(|&(i, _)| corpus.class_of(corpus.records[i].identity))
        .collect();
    let mut model = Dem2Model::new(cfg.dem2_config(corpus.n_classes()), derive_seed(&[cfg.seed, 22]))?;
    let result = {
        let mut t = Dem2Trainer {
            model: &mut model,
            inputs: &inputs,
        };
        train::train(&mut t, &labels, &cfg.dem2_train(), |_| {})
    };
    if let Ok(logs) = &result {
        write(&dirs.logs.join("dem2.tsv"), &log_text(logs))?;
    }
    save_or_keep(&dirs.checkpoints.join("dem2.ckpt"), &model.to_checkpoint(), result)
}

/// Descriptors and prediction scores of both members for a set of records.
pub struct MemberOutputs {
    pub dem1: Vec<(Vec<f64>, Vec<f64>)>,
    pub dem2: Vec<(Vec<f64>, Vec<f64>)>,
}

pub fn member_outputs(
    cfg: &RunConfig,
    corpus: &Corpus,
    indices: &[usize],
    dem1: &Dem1Model,
    verifier_model: &Dem1Model,
    dem2: &Dem2Model,
) -> Result<MemberOutputs> {
    let pool = worker_pool()?;
    let verifier = verifier_for(cfg, verifier_model);
    pool.install(|| {
        let d1 = indices
            .par_iter()
            .map(|&i| dem1.forward(&dem1_input(cfg, &corpus.records[i], i, 0)?))
            .collect::<Result<Vec<_>>>()?;
        let d2 = indices
            .par_iter()
            .map(|&i| dem2.forward(&dem2_input(cfg, &corpus.records[i], i, 0, &verifier)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(MemberOutputs { dem1: d1, dem2: d2 })
    })
}

/// DEM2 descriptor of one image, with candidates ranked by `verifier`.
pub fn dem2_descriptor(
    cfg: &RunConfig,
    dem2: &Dem2Model,
    verifier: &Dem1Model,
    image: &crate::image::Image,
    mask: &crate::image::PartMask,
    seed: u64,
) -> Result<Vec<f64>> {
    let v = verifier_for(cfg, verifier);
    let input = Dem2Input::prepare(image, mask, &cfg.dem2_config(2), Some(&v), seed)?;
    Ok(dem2.forward(&input)?.0)
}

struct Members {
    dem1: Dem1Model,
    verifier: Option<Dem1Model>,
    dem2: Dem2Model,
}

impl Members {
    fn load(cfg: &RunConfig, corpus: &Corpus) -> Result<Self> {
        let n = corpus.n_classes();
        let own = cfg.out.join("checkpoints").join("dem1.ckpt");
        let dem1 = load_dem1(cfg, &own, n)?;
        let vpath = cfg.verifier_path();
        let verifier = if vpath == own {
            None
        } else {
            Some(load_dem1(cfg, &vpath, n)?)
        };
        let dem2 = load_dem2(cfg, &cfg.out.join("checkpoints").join("dem2.ckpt"), n)?;
        Ok(Self { dem1, verifier, dem2 })
    }

    fn outputs(&self, cfg: &RunConfig, corpus: &Corpus, indices: &[usize]) -> Result<MemberOutputs> {
        let v = self.verifier.as_ref().unwrap_or(&self.dem1);
        member_outputs(cfg, corpus, indices, &self.dem1, v, &self.dem2)
    }
}

fn stack_rows(out: &MemberOutputs) -> Vec<Vec<f64>> {
    out.dem1
        .iter()
        .zip(&out.dem2)
        .map(|((_, p1), (_, p2))| p1.iter().chain(p2).copied().collect())
        .collect()
}

/// Trains the meta-learner on training-split member predictions; returns the loss curve.
pub fn train_stack(cfg: &RunConfig) -> Result<Vec<f64>> {
    let dirs = run_dirs(cfg)?;
    let corpus = Corpus::load(cfg)?;
    let members = Members::load(cfg, &corpus)?;
    let idx = corpus.indices(Split::Train);
    let out = members.outputs(cfg, &corpus, &idx)?;
    let labels: Vec<usize> = idx
        .iter()
        .map(|&i| corpus.class_of(corpus.records[i].identity))
        .collect();
    let (model, curve) = ensemble::stack_train(&stack_rows(&out), &labels, corpus.n_classes(), &cfg.stack())?;
    let mut log = String::from("epoch\tlr\tloss\n");
    for (e, l) in curve.iter().enumerate() {
        let _ = writeln!(log, "{e}\t{}\t{l}", cfg.stack_lr);
    }
    write(&dirs.logs.join("stack.tsv"), &log)?;
    checkpoint::save(&dirs.checkpoints.join("stack.ckpt"), &model.to_checkpoint())?;
    Ok(curve)
}

pub const MODELS: [&str; 4] = ["DEM1", "DEM2", "DEMV", "DEMS"];

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// In the order of [`MODELS`].
    pub rows: Vec<(String, RetrievalReport)>,
    pub stack_weights: [f64; 2],
}

impl EvalReport {
    pub fn get(&self, model: &str) -> Option<&RetrievalReport> {
        self.rows.iter().find(|(m, _)| m == model).map(|(_, r)| r)
    }

    pub fn table(&self) -> String {
        let mut s = String::from("model\trank1\trank5\tmAP\n");
        for (m, r) in &self.rows {
            let _ = writeln!(s, "{m}\t{:.4}\t{:.4}\t{:.4}", r.rank1, r.rank5, r.map);
        }
        s
    }
}

fn embeddings(corpus: &Corpus, idx: &[usize], outs: &[(Vec<f64>, Vec<f64>)]) -> Embeddings {
    Embeddings {
        ids: idx.iter().map(|&i| corpus.records[i].identity).collect(),
        cams: idx.iter().map(|&i| corpus.records[i].camera).collect(),
        descriptors: outs.iter().map(|(d, _)| d.clone()).collect(),
    }
}

fn distances(cfg: &RunConfig, q: &Embeddings, g: &Embeddings) -> Result<DistanceMatrix> {
    if cfg.cosine {
        metrics::pairwise_distances(
            &metrics::l2_normalize(&q.descriptors),
            &metrics::l2_normalize(&g.descriptors),
        )
    } else {
        metrics::pairwise_distances(&q.descriptors, &g.descriptors)
    }
}

/// Retrieval on the held-out identities for both members and both ensembles.
/// DEMV averages the members' scale-normalized distance matrices; DEMS
/// weights them by the stacking model's first-layer reliance on each member.
pub fn eval(cfg: &RunConfig) -> Result<EvalReport> {
    let dirs = run_dirs(cfg)?;
    let corpus = Corpus::load(cfg)?;
    let members = Members::load(cfg, &corpus)?;
    let stack = load_stack(&cfg.out.join("checkpoints").join("stack.ckpt"), corpus.n_classes())?;
    let qi = corpus.indices(Split::Query);
    let gi = corpus.indices(Split::Gallery);
    let qo = members.outputs(cfg, &corpus, &qi)?;
    let go = members.outputs(cfg, &corpus, &gi)?;

    let mut mats = Vec::new();
    for (name, q, g) in [("dem1", &qo.dem1, &go.dem1), ("dem2", &qo.dem2, &go.dem2)] {
        let qe = embeddings(&corpus, &qi, q);
        let ge = embeddings(&corpus, &gi, g);
        qe.save(&dirs.metrics.join(format!("embeddings_{name}_query.tsv")))?;
        ge.save(&dirs.metrics.join(format!("embeddings_{name}_gallery.tsv")))?;
        mats.push((distances(cfg, &qe, &ge)?, qe, ge));
    }
    let (ql, gl) = (mats[0].1.clone(), mats[0].2.clone());
    let weights = stack.member_weights();
    let demv = ensemble::fuse_distances(&[&mats[0].0, &mats[1].0], &[0.5, 0.5])?;
    let dems = ensemble::fuse_distances(&[&mats[0].0, &mats[1].0], &weights)?;
    let all = [&mats[0].0, &mats[1].0, &demv, &dems];
    let mut rows = Vec::new();
    let mut summary = String::from("model\trank1\trank5\tmAP\n");
    for (name, d) in MODELS.iter().zip(all) {
        let r = metrics::evaluate_distances(d, ql.labels(), gl.labels())?;
        write(
            &dirs.metrics.join(format!("cmc_{}.tsv", name.to_lowercase())),
            &metrics::cmc_to_tsv(&r.cmc),
        )?;
        let _ = writeln!(summary, "{name}\t{}\t{}\t{}", r.rank1, r.rank5, r.map);
        rows.push((name.to_string(), r));
    }
    write(&dirs.metrics.join("summary.tsv"), &summary)?;
    Ok(EvalReport {
        rows,
        stack_weights: weights,
    })
}

/// gen-data (if the corpus is absent), then every training stage and eval.
pub fn run_all(cfg: &RunConfig) -> Result<EvalReport> {
    if !cfg.data_dir().join("index.tsv").exists() {
        gen_data(cfg)?;
    }
    train_dem1(cfg)?;
    train_dem2(cfg)?;
    train_stack(cfg)?;
    eval(cfg)
}

pub const LAMBDA_SWEEP: [f64; 4] = [0.0, 0.001, 0.01, 0.1];

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub study: &'static str,
    pub variant: String,
    pub model: &'static str,
    pub seed: u64,
    pub rank1: f64,
    pub map: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub best_lambda: f64,
}

impl AblationReport {
    pub fn study(&self, name: &str) -> Vec<&AblationRow> {
        self.rows.iter().filter(|r| r.study == name).collect()
    }

    pub fn table(&self) -> String {
        let mut s = String::from("study\tvariant\tmodel\tseed\trank1\tmAP\tdelta_rank1\n");
        let mut studies: Vec<&str> = self.rows.iter().map(|r| r.study).collect();
        studies.dedup();
        for st in studies {
            let rows = self.study(st);
            let base = rows[0].rank1;
            for r in rows {
                let _ = writeln!(
                    s,
                    "{}\t{}\t{}\t{}\t{:.4}\t{:.4}\t{:+.4}",
                    r.study,
                    r.variant,
                    r.model,
                    r.seed,
                    r.rank1,
                    r.map,
                    r.rank1 - base
                );
            }
        }
        let _ = writeln!(s, "# lambda maximizing DEMS rank-1: {}", self.best_lambda);
        s
    }
}

/// Seed-matched comparisons: sparsemax vs softmax and MAE on vs off (DEM1),
/// verifier on vs off (DEM2), and a lambda sweep (DEMS). Variants share the
/// corpus and, where applicable, the baseline verifier.
pub fn ablate(cfg: &RunConfig) -> Result<AblationReport> {
    let dirs = run_dirs(cfg)?;
    let data_dir = cfg.data_dir();
    require(&data_dir.join("index.tsv"), "dataset (run gen-data first)")?;
    let root = cfg.out.join("ablate");
    let variant = |name: &str, f: &dyn Fn(&mut RunConfig)| {
        let mut c = cfg.clone();
        c.out = root.join(name);
        c.data_dir = data_dir.clone();
        f(&mut c);
        c
    };
    let base = variant("base", &|c| {
        c.attention = crate::attention::Normalizer::Sparsemax;
        c.mae = true;
        c.verifier = true;
        c.verifier_checkpoint = PathBuf::new();
    });
    let base_verifier = base.verifier_path();
    let base_report = run_all(&base)?;
    let row = |study, variant: &str, model, r: &RetrievalReport| AblationRow {
        study,
        variant: variant.to_string(),
        model,
        seed: cfg.seed,
        rank1: r.rank1,
        map: r.map,
    };
    let dem1_only = |c: &RunConfig| -> Result<RetrievalReport> {
        train_dem1(c)?;
        let corpus = Corpus::load(c)?;
        let m = load_dem1(c, &c.out.join("checkpoints").join("dem1.ckpt"), corpus.n_classes())?;
        let (qi, gi) = (corpus.indices(Split::Query), corpus.indices(Split::Gallery));
        let emb = |idx: &[usize]| -> Result<Embeddings> {
            let outs = idx
                .iter()
                .map(|&i| m.forward(&dem1_input(c, &corpus.records[i], i, 0)?))
                .collect::<Result<Vec<_>>>()?;
            Ok(embeddings(&corpus, idx, &outs))
        };
        let (q, g) = (emb(&qi)?, emb(&gi)?);
        metrics::evaluate_distances(&distances(c, &q, &g)?, q.labels(), g.labels())
    };
    let base_dem1 = base_report.get("DEM1").expect("DEM1 row").clone();
    let mut rows = vec![row("attention", "sparsemax", "DEM1", &base_dem1)];
    let softmax = variant("softmax", &|c| {
        c.attention = crate::attention::Normalizer::Softmax;
        c.mae = true;
    });
    rows.push(row("attention", "softmax", "DEM1", &dem1_only(&softmax)?));
    rows.push(row("mae", "on", "DEM1", &base_dem1));
    let no_mae = variant("mae_off", &|c| {
        c.attention = crate::attention::Normalizer::Sparsemax;
        c.mae = false;
    });
    rows.push(row("mae", "off", "DEM1", &dem1_only(&no_mae)?));

    rows.push(row("verifier", "on", "DEM2", base_report.get("DEM2").expect("DEM2 row")));
    let no_ver = variant("verifier_off", &|c| {
        c.attention = crate::attention::Normalizer::Sparsemax;
        c.mae = true;
        c.verifier = false;
        c.verifier_checkpoint = base_verifier.clone();
    });
    train_dem2(&no_ver)?;
    {
        let corpus = Corpus::load(&no_ver)?;
        let n = corpus.n_classes();
        let verifier = load_dem1(&no_ver, &base_verifier, n)?;
        let dem2 = load_dem2(&no_ver, &no_ver.out.join("checkpoints").join("dem2.ckpt"), n)?;
        let (qi, gi) = (corpus.indices(Split::Query), corpus.indices(Split::Gallery));
        let q = member_outputs(&no_ver, &corpus, &qi, &verifier, &verifier, &dem2)?;
        let g = member_outputs(&no_ver, &corpus, &gi, &verifier, &verifier, &dem2)?;
        let (qe, ge) = (embeddings(&corpus, &qi, &q.dem2), embeddings(&corpus, &gi, &g.dem2));
        let r = metrics::evaluate_distances(&distances(&no_ver, &qe, &ge)?, qe.labels(), ge.labels())?;
        rows.push(row("verifier", "off", "DEM2", &r));
    }

    let corpus = Corpus::load(&base)?;
    let members = Members::load(&base, &corpus)?;
    let ti = corpus.indices(Split::Train);
    let train_out = members.outputs(&base, &corpus, &ti)?;
    let labels: Vec<usize> = ti
        .iter()
        .map(|&i| corpus.class_of(corpus.records[i].identity))
        .collect();
    let x = stack_rows(&train_out);
    let (qi, gi) = (corpus.indices(Split::Query), corpus.indices(Split::Gallery));
    let (qo, go) = (members.outputs(&base, &corpus, &qi)?, members.outputs(&base, &corpus, &gi)?);
    let mut mats = Vec::new();
    for (q, g) in [(&qo.dem1, &go.dem1), (&qo.dem2, &go.dem2)] {
        let (qe, ge) = (embeddings(&corpus, &qi, q), embeddings(&corpus, &gi, g));
        mats.push((distances(&base, &qe, &ge)?, qe, ge));
    }
    let mut best = (f64::NEG_INFINITY, LAMBDA_SWEEP[0]);
    for &lambda in &LAMBDA_SWEEP {
        let mut sc = base.stack();
        sc.loss.lambda_div = lambda;
        let (model, _) = ensemble::stack_train(&x, &labels, corpus.n_classes(), &sc)?;
        let d = ensemble::fuse_distances(&[&mats[0].0, &mats[1].0], &model.member_weights())?;
        let r = metrics::evaluate_distances(&d, mats[0].1.labels(), mats[0].2.labels())?;
        if r.rank1 > best.0 {
            best = (r.rank1, lambda);
        }
        rows.push(row("lambda", &lambda.to_string(), "DEMS", &r));
    }
    let report = AblationReport {
        rows,
        best_lambda: best.1,
    };
    write(&dirs.metrics.join("ablation.tsv"), &report.table())?;
    Ok(report)
}
