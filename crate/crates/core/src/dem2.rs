//! Part-occluded token transformer: occluded variants of an image are
//! selected by a frozen verifier, channel-stacked with the original,
//! patch-tokenized and encoded by a pre-norm transformer.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{self, Normalizer};
use crate::checkpoint;
use crate::dem1::Dem1Model;
use crate::error::{Error, Result};
use crate::graph::{Binding, Graph, Var};
use crate::image::{Image, PartMask, NUM_PARTS};
use crate::masking::{MaskStrategy, Reconstructor};
use crate::nn::{self, LayerNorm, Linear};
use crate::tensor::{ParamId, ParamSet, Tensor};
use crate::train::Trainable;

pub const PREFIX: &str = "dem2.";

#[derive(Clone, Debug, PartialEq)]
pub struct Dem2Config {
    pub depth: usize,
    /// Token width `D`.
    pub dim: usize,
    pub heads: usize,
    /// Selected occluded images per input.
    pub m: usize,
    /// Patch side `P`.
    pub patch: usize,
    pub mlp_ratio: usize,
    pub n_classes: usize,
    pub height: usize,
    pub width: usize,
    pub max_shift: usize,
    /// Verifier-guided selection; random selection when off.
    pub verifier: bool,
}

impl Dem2Config {
    pub fn new(n_classes: usize, height: usize, width: usize) -> Self {
        Self {
            depth: 3,
            dim: 64,
            heads: 4,
            m: 2,
            patch: 8,
            mlp_ratio: 2,
            n_classes,
            height,
            width,
            max_shift: 2,
            verifier: true,
        }
    }

    pub fn n_patches(&self) -> usize {
        (self.height / self.patch) * (self.width / self.patch)
    }

    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch * 3 * (self.m + 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || self.height % self.patch != 0 || self.width % self.patch != 0 {
            return Err(Error::contract(format!(
                "patch size {} must divide {}x{}",
                self.patch, self.height, self.width
            )));
        }
        if self.heads == 0 || self.dim % self.heads != 0 {
            return Err(Error::contract(format!(
                "{} heads do not divide D = {}",
                self.heads, self.dim
            )));
        }
        if self.n_classes < 2 || self.mlp_ratio == 0 {
            return Err(Error::contract("need >= 2 classes and a positive MLP ratio"));
        }
        check_shift(self.max_shift, self.height, self.width)
    }
}

/// Zeroes the pixels labelled `part_id`.
pub fn gen_part_occluded(image: &Image, mask: &PartMask, part_id: u8) -> Result<Image> {
    if part_id == 0 || part_id as usize > NUM_PARTS {
        return Err(Error::contract(format!(
            "part id {part_id} outside 1..={NUM_PARTS}"
        )));
    }
    if image.height() != mask.height() || image.width() != mask.width() {
        return Err(Error::shape("image and part mask differ in size"));
    }
    let mut out = image.clone();
    let c = image.channels();
    for (px, &l) in out.data_mut().chunks_mut(c).zip(mask.labels()) {
        if l == part_id {
            px.fill(0.0);
        }
    }
    Ok(out)
}

/// The mask with `part_id` relabelled as background.
pub fn occlude_mask(mask: &PartMask, part_id: u8) -> PartMask {
    let labels = mask
        .labels()
        .iter()
        .map(|&l| if l == part_id { 0 } else { l })
        .collect();
    PartMask::new(mask.height(), mask.width(), labels).expect("relabelling keeps labels valid")
}

fn check_shift(max_shift: usize, h: usize, w: usize) -> Result<()> {
    if 4 * max_shift >= h.min(w) {
        return Err(Error::contract(format!(
            "max shift {max_shift} must be below min({h}, {w}) / 4"
        )));
    }
    Ok(())
}

/// Offset drawn uniformly from `[-max_shift, max_shift]^2`, as `(dx, dy)`.
pub fn shift_offset(max_shift: usize, seed: u64) -> (isize, isize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = max_shift as isize;
    let dx = rng.gen_range(-s..=s);
    let dy = rng.gen_range(-s..=s);
    (dx, dy)
}

fn translate<T: Copy>(src: &[T], h: usize, w: usize, c: usize, dx: isize, dy: isize, fill: T) -> Vec<T> {
    let mut out = vec![fill; src.len()];
    for y in 0..h {
        let sy = y as isize - dy;
        if sy < 0 || sy >= h as isize {
            continue;
        }
        for x in 0..w {
            let sx = x as isize - dx;
            if sx < 0 || sx >= w as isize {
                continue;
            }
            let from = (sy as usize * w + sx as usize) * c;
            out[(y * w + x) * c..][..c].copy_from_slice(&src[from..from + c]);
        }
    }
    out
}

/// Moves content by `dx` columns and `dy` rows, zero-filling what is vacated.
pub fn shift_image(image: &Image, dx: isize, dy: isize) -> Image {
    let (h, w, c) = (image.height(), image.width(), image.channels());
    Image::new(h, w, c, translate(image.data(), h, w, c, dx, dy, 0.0)).expect("same dims")
}

pub fn shift_mask(mask: &PartMask, dx: isize, dy: isize) -> PartMask {
    let (h, w) = (mask.height(), mask.width());
    PartMask::new(h, w, translate(mask.labels(), h, w, 1, dx, dy, 0)).expect("same dims")
}

pub fn random_shift(image: &Image, max_shift: usize, seed: u64) -> Result<Image> {
    check_shift(max_shift, image.height(), image.width())?;
    let (dx, dy) = shift_offset(max_shift, seed);
    Ok(shift_image(image, dx, dy))
}

/// One occluded, shifted copy per part present in the mask, with its mask.
pub fn part_candidates(image: &Image, mask: &PartMask, max_shift: usize, seed: u64) -> Result<Vec<(Image, PartMask)>> {
    check_shift(max_shift, image.height(), image.width())?;
    mask.present_parts()
        .into_iter()
        .map(|p| {
            let (dx, dy) = shift_offset(max_shift, seed.wrapping_mul(31).wrapping_add(p as u64));
            let occ = gen_part_occluded(image, mask, p)?;
            Ok((shift_image(&occ, dx, dy), shift_mask(&occlude_mask(mask, p), dx, dy)))
        })
        .collect()
}

/// A frozen embedding model used to score candidates.
pub trait Verifier: Sync {
    fn is_trained(&self) -> bool;
    fn embed(&self, image: &Image, mask: &PartMask) -> Result<Vec<f64>>;
}

/// DEM1 as the verifier's embedding function.
pub struct Dem1Verifier<'a> {
    pub model: &'a Dem1Model,
    pub reconstructor: &'a dyn Reconstructor,
    pub strategies: [MaskStrategy; 3],
    pub seed: u64,
}

impl Verifier for Dem1Verifier<'_> {
    fn is_trained(&self) -> bool {
        self.model.is_trained()
    }

    fn embed(&self, image: &Image, mask: &PartMask) -> Result<Vec<f64>> {
        let (d, _) = self
            .model
            .forward_image(image, mask, self.reconstructor, &self.strategies, self.seed)?;
        Ok(d)
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Indices of the `m` highest similarities, descending, ties by index.
pub fn top_m_by_similarity(similarities: &[f64], m: usize) -> Result<Vec<usize>> {
    if m > similarities.len() {
        return Err(Error::contract(format!(
            "cannot select {m} of {} candidates",
            similarities.len()
        )));
    }
    let mut idx: Vec<usize> = (0..similarities.len()).collect();
    idx.sort_by(|&a, &b| similarities[b].total_cmp(&similarities[a]).then(a.cmp(&b)));
    idx.truncate(m);
    Ok(idx)
}

/// Indices of the `m` candidates closest to the original in verifier
/// cosine similarity. Candidates without any visible part rank last.
pub fn verifier_select(
    original: (&Image, &PartMask),
    candidates: &[(Image, PartMask)],
    verifier: &dyn Verifier,
    m: usize,
) -> Result<Vec<usize>> {
    if !verifier.is_trained() {
        return Err(Error::contract("verifier has not been trained"));
    }
    if m > candidates.len() {
        return Err(Error::contract(format!(
            "cannot select {m} of {} candidates",
            candidates.len()
        )));
    }
    let reference = verifier.embed(original.0, original.1)?;
    let sims = candidates
        .iter()
        .map(|(img, mask)| {
            if mask.present_parts().is_empty() {
                Ok(f64::NEG_INFINITY)
            } else {
                Ok(cosine(&reference, &verifier.embed(img, mask)?))
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    top_m_by_similarity(&sims, m)
}

/// The original and the `m` occluded images that are tokenized together.
#[derive(Clone, Debug, PartialEq)]
pub struct Dem2Input {
    pub original: Image,
    pub selected: Vec<Image>,
}

impl Dem2Input {
    /// Builds candidates and selects `m` of them, by verifier or at random.
    /// Short pools are padded with copies of the original.
    pub fn prepare(
        image: &Image,
        mask: &PartMask,
        cfg: &Dem2Config,
        verifier: Option<&dyn Verifier>,
        seed: u64,
    ) -> Result<Self> {
        let cands = part_candidates(image, mask, cfg.max_shift, seed)?;
        let take = cfg.m.min(cands.len());
        let picked = match (cfg.verifier, verifier) {
            (true, Some(v)) => verifier_select((image, mask), &cands, v, take)?,
            (true, None) => {
                return Err(Error::MissingPrerequisite(
                    "verifier-guided selection needs a trained DEM1 verifier".into(),
                ))
            }
            (false, _) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
                index::sample(&mut rng, cands.len(), take).into_vec()
            }
        };
        let mut selected: Vec<Image> = picked.into_iter().map(|i| cands[i].0.clone()).collect();
        while selected.len() < cfg.m {
            selected.push(image.clone());
        }
        Ok(Self {
            original: image.clone(),
            selected,
        })
    }
}

/// Non-overlapping `P x P` patches of an `H x W x C` image, row-major over
/// patches, each flattened row-major with channels last.
pub fn patchify(image: &Image, p: usize) -> Result<(usize, usize, Vec<f64>)> {
    let (h, w, c) = (image.height(), image.width(), image.channels());
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(Error::contract(format!("patch size {p} must divide {h}x{w}")));
    }
    let n = (h / p) * (w / p);
    let dim = p * p * c;
    let mut out = Vec::with_capacity(n * dim);
    for py in 0..h / p {
        for px in 0..w / p {
            for y in 0..p {
                for x in 0..p {
                    out.extend_from_slice(image.pixel(py * p + y, px * p + x));
                }
            }
        }
    }
    Ok((n, dim, out))
}

#[derive(Clone, Copy, Debug)]
pub struct Block {
    pub ln1: LayerNorm,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub ln2: LayerNorm,
    pub mlp1: Linear,
    pub mlp2: Linear,
}

#[derive(Clone, Debug)]
pub struct Dem2Model {
    pub config: Dem2Config,
    params: ParamSet,
    pub embed: Linear,
    pub cls: ParamId,
    pub pos: ParamId,
    pub blocks: Vec<Block>,
    pub head_ln: LayerNorm,
    pub head: Linear,
}

impl Dem2Model {
    pub fn new(config: Dem2Config, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let d = config.dim;
        let embed = Linear::new(&mut params, "embed", config.patch_dim(), d, &mut rng);
        let cls = params.add("cls", Tensor::randn(&[1, d], 0.02, &mut rng));
        let pos = params.add("pos", Tensor::randn(&[config.n_patches() + 1, d], 0.02, &mut rng));
        let blocks = (0..config.depth)
            .map(|i| {
                let n = |s: &str| format!("block{i}.{s}");
                Block {
                    ln1: LayerNorm::new(&mut params, &n("ln1"), d),
                    wq: Linear::new(&mut params, &n("wq"), d, d, &mut rng),
                    wk: Linear::new(&mut params, &n("wk"), d, d, &mut rng),
                    wv: Linear::new(&mut params, &n("wv"), d, d, &mut rng),
                    wo: Linear::new(&mut params, &n("wo"), d, d, &mut rng),
                    ln2: LayerNorm::new(&mut params, &n("ln2"), d),
                    mlp1: Linear::new(&mut params, &n("mlp1"), d, config.mlp_ratio * d, &mut rng),
                    mlp2: Linear::new(&mut params, &n("mlp2"), config.mlp_ratio * d, d, &mut rng),
                }
            })
            .collect();
        let head_ln = LayerNorm::new(&mut params, "head_ln", d);
        let head = Linear::new(&mut params, "head", d, config.n_classes, &mut rng);
        Ok(Self {
            config,
            params,
            embed,
            cls,
            pos,
            blocks,
            head_ln,
            head,
        })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// `[x_cls; LN(patches) E] + E_pos` as an `(N+1) x D` sequence.
    pub fn tokenize(&self, g: &mut Graph, b: &Binding, input: &Dem2Input) -> Result<Var> {
        if input.selected.len() != self.config.m {
            return Err(Error::contract(format!(
                "expected {} selected images, got {}",
                self.config.m,
                input.selected.len()
            )));
        }
        let mut stack: Vec<&Image> = vec![&input.original];
        stack.extend(input.selected.iter());
        let cat = Image::concat_channels(&stack)?;
        let (n, dim, patches) = patchify(&cat, self.config.patch)?;
        if n != self.config.n_patches() || dim != self.config.patch_dim() {
            return Err(Error::shape(format!(
                "input gives {n} patches of {dim} values, model expects {} of {}",
                self.config.n_patches(),
                self.config.patch_dim()
            )));
        }
        let x = g.constant(&[n, dim], patches)?;
        let normed = g.layer_norm_rows(x, nn::LN_EPS);
        let tokens = self.embed.forward(g, b, normed)?;
        let seq = g.concat_rows(&[b.var(self.cls), tokens])?;
        g.add(seq, b.var(self.pos))
    }

    pub fn block_forward(&self, g: &mut Graph, b: &Binding, block: &Block, x: Var) -> Result<Var> {
        let h = block.ln1.forward(g, b, x)?;
        let q = block.wq.forward(g, b, h)?;
        let k = block.wk.forward(g, b, h)?;
        let v = block.wv.forward(g, b, h)?;
        let dh = self.config.dim / self.config.heads;
        let mut heads = Vec::with_capacity(self.config.heads);
        for i in 0..self.config.heads {
            let qi = g.slice_last(q, i * dh, dh)?;
            let ki = g.slice_last(k, i * dh, dh)?;
            let vi = g.slice_last(v, i * dh, dh)?;
            heads.push(attention::attention(g, qi, ki, vi, Normalizer::Softmax)?.0);
        }
        let att = g.concat_last(&heads)?;
        let att = block.wo.forward(g, b, att)?;
        let x = g.add(x, att)?;
        let h = block.ln2.forward(g, b, x)?;
        let h = block.mlp1.forward(g, b, h)?;
        let h = g.gelu(h);
        let h = block.mlp2.forward(g, b, h)?;
        g.add(x, h)
    }

    /// Runs every block and returns token 0 as a `[D]` vector.
    pub fn encoder_forward(&self, g: &mut Graph, b: &Binding, seq: Var) -> Result<Var> {
        let mut x = seq;
        for block in &self.blocks {
            x = self.block_forward(g, b, block, x)?;
        }
        let cls = g.slice_rows(x, 0, 1)?;
        g.reshape(cls, &[self.config.dim])
    }

    /// `(descriptor, scores)` graph handles.
    pub fn forward_graph(&self, g: &mut Graph, b: &Binding, input: &Dem2Input) -> Result<(Var, Var)> {
        let seq = self.tokenize(g, b, input)?;
        let desc = self.encoder_forward(g, b, seq)?;
        let row = g.reshape(desc, &[1, self.config.dim])?;
        let normed = self.head_ln.forward(g, b, row)?;
        let scores = nn::softmax_head(g, b, &self.head, normed)?;
        Ok((desc, scores))
    }

    pub fn forward(&self, input: &Dem2Input) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut g = Graph::new();
        let b = g.bind(&self.params);
        let (d, s) = self.forward_graph(&mut g, &b, input)?;
        Ok((g.value(d).to_vec(), g.value(s).to_vec()))
    }

    /// Candidate generation, selection, tokenization, encoder and head.
    pub fn forward_image(
        &self,
        image: &Image,
        mask: &PartMask,
        verifier: Option<&dyn Verifier>,
        seed: u64,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let input = Dem2Input::prepare(image, mask, &self.config, verifier, seed)?;
        self.forward(&input)
    }

    pub fn to_checkpoint(&self) -> Vec<(String, Tensor)> {
        checkpoint::prefixed(&self.params, PREFIX)
    }

    pub fn from_checkpoint(config: Dem2Config, entries: &[(String, Tensor)]) -> Result<Self> {
        let mut m = Self::new(config, 0)?;
        m.params.load_values(&checkpoint::strip_prefix(entries, PREFIX))?;
        Ok(m)
    }
}

pub struct Dem2Trainer<'a> {
    pub model: &'a mut Dem2Model,
    pub inputs: &'a [Dem2Input],
}

impl Trainable for Dem2Trainer<'_> {
    fn params(&self) -> &ParamSet {
        &self.model.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.model.params
    }

    fn classifier(&self) -> Linear {
        self.model.head
    }

    fn forward_sample(&self, g: &mut Graph, b: &Binding, index: usize) -> Result<(Var, Var)> {
        self.model.forward_graph(g, b, &self.inputs[index])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> Image {
        let data = (0..h * w * 3).map(|i| (i % 97) as f64 / 97.0 + 0.01).collect();
        Image::new(h, w, 3, data).unwrap()
    }

    fn striped_mask(h: usize, w: usize) -> PartMask {
        let labels = (0..h * w).map(|i| ((i / w) * 5 / h) as u8).collect();
        PartMask::new(h, w, labels).unwrap()
    }

    #[test]
    fn occlusion_bookkeeping() {
        let img = ramp(16, 8);
        let mask = striped_mask(16, 8);
        let absent = PartMask::new(16, 8, vec![1; 128]).unwrap();
        assert_eq!(gen_part_occluded(&img, &absent, 2).unwrap(), img);
        let once = gen_part_occluded(&img, &mask, 3).unwrap();
        assert_eq!(gen_part_occluded(&once, &mask, 3).unwrap(), once);
        let mut all = img.clone();
        for p in 1..=4 {
            all = gen_part_occluded(&all, &mask, p).unwrap();
        }
        for (i, &l) in mask.labels().iter().enumerate() {
            let (orig, now) = (&img.data()[i * 3..i * 3 + 3], &all.data()[i * 3..i * 3 + 3]);
            if l == 0 {
                assert_eq!(orig, now);
            } else {
                assert!(now.iter().all(|&v| v == 0.0));
            }
        }
        assert!(gen_part_occluded(&img, &mask, 0).is_err());
        assert!(gen_part_occluded(&img, &mask, 5).is_err());
    }

    #[test]
    fn shift_examples() {
        let img = ramp(16, 8);
        assert_eq!(random_shift(&img, 0, 4).unwrap(), img);
        assert_eq!(random_shift(&img, 1, 4).unwrap(), random_shift(&img, 1, 4).unwrap());
        assert!(random_shift(&img, 2, 0).is_err());
        let mut hot = Image::zeros(4, 4, 1);
        hot.pixel_mut(1, 1)[0] = 1.0;
        let moved = shift_image(&hot, 1, 0);
        assert_eq!(moved.pixel(1, 2)[0], 1.0);
        assert_eq!(moved.data().iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn selection_sorts_by_similarity() {
        assert_eq!(top_m_by_similarity(&[0.9, 0.2, 0.7], 2).unwrap(), vec![0, 2]);
        assert_eq!(top_m_by_similarity(&[0.5, 0.5, 0.9], 3).unwrap(), vec![2, 0, 1]);
        assert!(top_m_by_similarity(&[0.1], 2).is_err());
    }

    #[test]
    fn patch_arithmetic() {
        let mut cfg = Dem2Config::new(3, 32, 16);
        cfg.dim = 16;
        cfg.depth = 1;
        assert_eq!(cfg.n_patches(), 8);
        assert_eq!(cfg.patch_dim(), 576);
        let m = Dem2Model::new(cfg, 1).unwrap();
        let img = ramp(32, 16);
        let input = Dem2Input {
            original: img.clone(),
            selected: vec![img.clone(), img],
        };
        let mut g = Graph::new();
        let b = g.bind(m.params());
        let seq = m.tokenize(&mut g, &b, &input).unwrap();
        assert_eq!(g.shape(seq), &[9, 16]);
        let mut bad = Dem2Config::new(3, 30, 16);
        bad.max_shift = 0;
        assert!(Dem2Model::new(bad, 1).is_err());
    }

    #[test]
    fn empty_encoder_returns_cls_plus_pos() {
        let mut cfg = Dem2Config::new(3, 16, 16);
        cfg.depth = 0;
        cfg.dim = 8;
        cfg.heads = 2;
        cfg.max_shift = 1;
        let m = Dem2Model::new(cfg, 2).unwrap();
        let img = ramp(16, 16);
        let input = Dem2Input {
            original: img.clone(),
            selected: vec![img.clone(), img],
        };
        let mut g = Graph::new();
        let b = g.bind(m.params());
        let seq = m.tokenize(&mut g, &b, &input).unwrap();
        let out = m.encoder_forward(&mut g, &b, seq).unwrap();
        let cls = m.params().get(m.cls).data();
        let pos = m.params().get(m.pos).data();
        for i in 0..8 {
            assert_eq!(g.value(out)[i], cls[i] + pos[i]);
        }
    }

    #[test]
    fn residual_identity_with_zero_outputs() {
        let mut cfg = Dem2Config::new(3, 16, 16);
        cfg.dim = 8;
        cfg.heads = 2;
        cfg.max_shift = 1;
        let mut m = Dem2Model::new(cfg, 3).unwrap();
        for blk in m.blocks.clone() {
            for id in [blk.wo.w, blk.wo.b, blk.mlp2.w, blk.mlp2.b] {
                m.params_mut().get_mut(id).data_mut().fill(0.0);
            }
        }
        let img = ramp(16, 16);
        let input = Dem2Input {
            original: img.clone(),
            selected: vec![img.clone(), img],
        };
        let mut g = Graph::new();
        let b = g.bind(m.params());
        let seq = m.tokenize(&mut g, &b, &input).unwrap();
        let first: Vec<f64> = g.value(seq)[..8].to_vec();
        let out = m.encoder_forward(&mut g, &b, seq).unwrap();
        assert_eq!(g.value(out), first.as_slice());
        let (_, s) = m.forward(&input).unwrap();
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn random_selection_pads_short_pools() {
        let mut cfg = Dem2Config::new(3, 16, 8);
        cfg.verifier = false;
        cfg.m = 2;
        cfg.max_shift = 1;
        let img = ramp(16, 8);
        let one_part = PartMask::new(16, 8, vec![2; 128]).unwrap();
        let input = Dem2Input::prepare(&img, &one_part, &cfg, None, 5).unwrap();
        assert_eq!(input.selected.len(), 2);
        assert_eq!(input.selected[1], img);
        cfg.verifier = true;
        assert!(matches!(
            Dem2Input::prepare(&img, &one_part, &cfg, None, 5),
            Err(Error::MissingPrerequisite(_))
        ));
    }
}
