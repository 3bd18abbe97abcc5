//! Context CNN: a small strided backbone, part-mask local features,
//! attention-pooled global features and orthogonal fusion.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{self, Normalizer};
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::graph::{Binding, Graph, Var};
use crate::image::{Image, PartMask, NUM_PARTS};
use crate::masking::{self, MaskStrategy, Reconstructor};
use crate::nn::{self, Conv, Linear};
use crate::tensor::{ParamId, ParamSet, Tensor};
use crate::train::Trainable;

/// Guard on `|f_g|` below which orthogonal fusion is undefined.
pub const EPS_G: f64 = 1e-8;
pub const PREFIX: &str = "dem1.";
/// Spatial downsampling of the backbone per dimension.
pub const DOWNSAMPLE: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct Dem1Config {
    /// Feature channels `C`, also the descriptor length.
    pub channels: usize,
    pub n_classes: usize,
    pub normalizer: Normalizer,
    /// Whether the reconstruction stem feeds the global path.
    pub mae: bool,
    /// Widths of the first two backbone stages.
    pub stem_widths: [usize; 2],
}

impl Dem1Config {
    pub fn new(n_classes: usize) -> Self {
        Self {
            channels: 32,
            n_classes,
            normalizer: Normalizer::Sparsemax,
            mae: true,
            stem_widths: [16, 32],
        }
    }
}

/// Three 3x3 conv stages with strides 2, 2, 1 and ReLU after each.
#[derive(Clone, Copy, Debug)]
pub struct Stem {
    pub convs: [Conv; 3],
    pub in_channels: usize,
}

impl Stem {
    pub fn new(params: &mut ParamSet, name: &str, cin: usize, cfg: &Dem1Config, rng: &mut ChaCha8Rng) -> Self {
        let [w1, w2] = cfg.stem_widths;
        Self {
            convs: [
                Conv::new(params, &format!("{name}.conv1"), 3, cin, w1, 2, 1, rng),
                Conv::new(params, &format!("{name}.conv2"), 3, w1, w2, 2, 1, rng),
                Conv::new(params, &format!("{name}.conv3"), 3, w2, cfg.channels, 1, 1, rng),
            ],
            in_channels: cin,
        }
    }
}

pub fn backbone_features(g: &mut Graph, b: &Binding, stem: &Stem, image: Var) -> Result<Var> {
    let s = g.shape(image);
    if s.len() != 3 || s[2] != stem.in_channels {
        return Err(Error::contract(format!(
            "stem expects {} input channels, got shape {s:?}",
            stem.in_channels
        )));
    }
    let mut x = image;
    for conv in &stem.convs {
        let y = conv.forward(g, b, x)?;
        x = g.relu(y);
    }
    Ok(x)
}

/// Per-part 1x1 convs and the 1x1 fusion conv over their concatenation.
#[derive(Clone, Copy, Debug)]
pub struct PartBranch {
    pub per_part: [Linear; NUM_PARTS],
    pub fuse: Linear,
}

/// Masked-average-pooling weights `[P, h*w]`; rows of absent parts are zero.
pub fn part_pool_weights(mask: &PartMask, h: usize, w: usize) -> (Vec<f64>, [bool; NUM_PARTS]) {
    let m = mask.downsample(h, w);
    let mut counts = [0usize; NUM_PARTS];
    for &l in m.labels() {
        if l > 0 {
            counts[l as usize - 1] += 1;
        }
    }
    let mut weights = vec![0.0; NUM_PARTS * h * w];
    for (pos, &l) in m.labels().iter().enumerate() {
        if l > 0 {
            let p = l as usize - 1;
            weights[p * h * w + pos] = 1.0 / counts[p] as f64;
        }
    }
    (weights, counts.map(|c| c > 0))
}

/// Masked average pool per part, per-part 1x1 conv, then the fusion conv;
/// absent parts contribute zero vectors.
pub fn part_local_features(
    g: &mut Graph,
    b: &Binding,
    branch: &PartBranch,
    fmap: Var,
    mask: &PartMask,
) -> Result<Var> {
    let pooled = part_pooled(g, fmap, mask)?;
    let (present, pooled) = pooled;
    let c = g.shape(pooled)[1];
    let mut rows = Vec::with_capacity(NUM_PARTS);
    for (p, &here) in present.iter().enumerate() {
        if here {
            let row = g.slice_rows(pooled, p, 1)?;
            rows.push(branch.per_part[p].forward(g, b, row)?);
        } else {
            rows.push(g.constant(&[1, c], vec![0.0; c])?);
        }
    }
    let cat = g.concat_last(&rows)?;
    let fused = branch.fuse.forward(g, b, cat)?;
    g.reshape(fused, &[c])
}

/// `[P, C]` masked averages of `fmap` over each part's downsampled region.
pub fn part_pooled(g: &mut Graph, fmap: Var, mask: &PartMask) -> Result<([bool; NUM_PARTS], Var)> {
    let s = g.shape(fmap).to_vec();
    if s.len() != 3 {
        return Err(Error::shape(format!("feature map must be [h, w, C], got {s:?}")));
    }
    let (h, w, c) = (s[0], s[1], s[2]);
    let (weights, present) = part_pool_weights(mask, h, w);
    if !present.iter().any(|&p| p) {
        return Err(Error::contract("part mask has no body part at feature resolution"));
    }
    let m = g.constant(&[NUM_PARTS, h * w], weights)?;
    let flat = g.reshape(fmap, &[h * w, c])?;
    Ok((present, g.matmul(m, flat)?))
}

/// 1x1 projection of the concatenated maps and self-attention parameters.
#[derive(Clone, Copy, Debug)]
pub struct GlobalBranch {
    pub proj: Linear,
    pub wq: ParamId,
    pub wk: ParamId,
}

/// Channel-concat, project to `C`, self-attend over positions, then GAP.
pub fn global_feature(
    g: &mut Graph,
    b: &Binding,
    branch: &GlobalBranch,
    fmap_orig: Var,
    fmap_recon: Option<Var>,
    normalizer: Normalizer,
) -> Result<Var> {
    let x = match fmap_recon {
        Some(r) => {
            if g.shape(r)[..2] != g.shape(fmap_orig)[..2] {
                return Err(Error::shape(format!(
                    "feature maps {:?} and {:?} differ spatially",
                    g.shape(fmap_orig),
                    g.shape(r)
                )));
            }
            g.concat_last(&[fmap_orig, r])?
        }
        None => fmap_orig,
    };
    let s = g.shape(x).to_vec();
    let flat = g.reshape(x, &[s[0] * s[1], s[2]])?;
    let v = branch.proj.forward(g, b, flat)?;
    let q = g.matmul(v, b.var(branch.wq))?;
    let k = g.matmul(v, b.var(branch.wk))?;
    let (out, _) = attention::attention(g, q, k, v, normalizer)?;
    Ok(g.mean_rows(out))
}

/// `(f_lproj, f_orth)` of plain vectors.
pub fn orthogonal_decompose(f_l: &[f64], f_g: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if f_l.len() != f_g.len() {
        return Err(Error::shape(format!(
            "local feature of length {} and global of length {}",
            f_l.len(),
            f_g.len()
        )));
    }
    let norm_sq: f64 = f_g.iter().map(|x| x * x).sum();
    if norm_sq.sqrt() < EPS_G {
        return Err(Error::DegenerateGlobal { norm_sq });
    }
    let coef = f_l.iter().zip(f_g).map(|(a, b)| a * b).sum::<f64>() / norm_sq;
    let proj: Vec<f64> = f_g.iter().map(|x| coef * x).collect();
    let orth = f_l.iter().zip(&proj).map(|(a, p)| a - p).collect();
    Ok((proj, orth))
}

/// `concat(f_l - f_lproj, f_g)` as a `[1, 2C]` row.
pub fn orthogonal_concat(g: &mut Graph, f_l: Var, f_g: Var) -> Result<Var> {
    let norm_sq: f64 = g.value(f_g).iter().map(|x| x * x).sum();
    if norm_sq.sqrt() < EPS_G {
        return Err(Error::DegenerateGlobal { norm_sq });
    }
    let lg = g.dot(f_l, f_g)?;
    let gg = g.dot(f_g, f_g)?;
    let coef = g.div_scalar(lg, gg)?;
    let proj = g.mul_scalar(f_g, coef)?;
    let orth = g.sub(f_l, proj)?;
    let cat = g.concat_last(&[orth, f_g])?;
    let n = g.value(cat).len();
    g.reshape(cat, &[1, n])
}

/// Orthogonal fusion followed by the final fully-connected layer.
pub fn orthogonal_fuse(g: &mut Graph, b: &Binding, fc: &Linear, f_l: Var, f_g: Var) -> Result<Var> {
    let cat = orthogonal_concat(g, f_l, f_g)?;
    let d = fc.forward(g, b, cat)?;
    let n = g.value(d).len();
    g.reshape(d, &[n])
}

/// One image prepared for the network: the original, its 9-channel
/// reconstruction stack (when the MAE branch is on) and its part mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Dem1Input {
    pub image: Image,
    pub recon: Option<Image>,
    pub mask: PartMask,
}

impl Dem1Input {
    pub fn prepare(
        image: &Image,
        mask: &PartMask,
        reconstructor: &dyn Reconstructor,
        strategies: &[MaskStrategy; 3],
        seed: u64,
        mae: bool,
    ) -> Result<Self> {
        let recon = if mae {
            Some(masking::mae_stack(image, reconstructor, strategies, seed)?)
        } else {
            None
        };
        Ok(Self {
            image: image.clone(),
            recon,
            mask: mask.clone(),
        })
    }
}

/// Graph handles of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Dem1Vars {
    pub f_l: Var,
    pub f_g: Var,
    pub descriptor: Var,
    pub scores: Var,
}

#[derive(Clone, Debug)]
pub struct Dem1Model {
    pub config: Dem1Config,
    params: ParamSet,
    pub stem_orig: Stem,
    pub stem_recon: Option<Stem>,
    pub parts: PartBranch,
    pub global: GlobalBranch,
    pub fc: Linear,
    pub head: Linear,
    trained: bool,
}

impl Dem1Model {
    pub fn new(config: Dem1Config, seed: u64) -> Result<Self> {
        if config.channels == 0 || config.n_classes < 2 {
            return Err(Error::contract(format!(
                "need C >= 1 and >= 2 classes, got C = {} and {} classes",
                config.channels, config.n_classes
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let c = config.channels;
        let stem_orig = Stem::new(&mut params, "stem_orig", 3, &config, &mut rng);
        let stem_recon = config
            .mae
            .then(|| Stem::new(&mut params, "stem_recon", 9, &config, &mut rng));
        let per_part = std::array::from_fn(|p| {
            Linear::new(&mut params, &format!("part{}", p + 1), c, c, &mut rng)
        });
        let fuse = Linear::new(&mut params, "local_fuse", NUM_PARTS * c, c, &mut rng);
        let proj_in = if config.mae { 2 * c } else { c };
        let proj = Linear::new(&mut params, "global_proj", proj_in, c, &mut rng);
        let bound = (3.0 / c as f64).sqrt();
        let wq = params.add("attn.wq", Tensor::uniform(&[c, c], -bound, bound, &mut rng));
        let wk = params.add("attn.wk", Tensor::uniform(&[c, c], -bound, bound, &mut rng));
        let fc = Linear::new(&mut params, "fc", 2 * c, c, &mut rng);
        let head = Linear::new(&mut params, "head", c, config.n_classes, &mut rng);
        Ok(Self {
            config,
            params,
            stem_orig,
            stem_recon,
            parts: PartBranch { per_part, fuse },
            global: GlobalBranch { proj, wq, wk },
            fc,
            head,
            trained: false,
        })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn mark_trained(&mut self) {
        self.trained = true;
    }

    pub fn forward_graph(&self, g: &mut Graph, b: &Binding, input: &Dem1Input) -> Result<Dem1Vars> {
        let img = g.input(&input.image.to_tensor());
        let f_orig = backbone_features(g, b, &self.stem_orig, img)?;
        let f_recon = match (&self.stem_recon, &input.recon) {
            (Some(stem), Some(r)) => {
                let x = g.input(&r.to_tensor());
                Some(backbone_features(g, b, stem, x)?)
            }
            (None, _) => None,
            (Some(_), None) => {
                return Err(Error::contract("MAE branch is on but the input has no reconstruction stack"))
            }
        };
        let f_l = part_local_features(g, b, &self.parts, f_orig, &input.mask)?;
        let f_g = global_feature(g, b, &self.global, f_orig, f_recon, self.config.normalizer)?;
        let descriptor = orthogonal_fuse(g, b, &self.fc, f_l, f_g)?;
        let row = g.reshape(descriptor, &[1, self.config.channels])?;
        let scores = nn::softmax_head(g, b, &self.head, row)?;
        Ok(Dem1Vars {
            f_l,
            f_g,
            descriptor,
            scores,
        })
    }

    /// `(descriptor, prediction scores)` for a prepared input.
    pub fn forward(&self, input: &Dem1Input) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut g = Graph::new();
        let b = g.bind(&self.params);
        let v = self.forward_graph(&mut g, &b, input)?;
        Ok((g.value(v.descriptor).to_vec(), g.value(v.scores).to_vec()))
    }

    /// Full pipeline from a raw image: mask sampling, reconstruction,
    /// both stems, fusion and the identity head.
    pub fn forward_image(
        &self,
        image: &Image,
        mask: &PartMask,
        reconstructor: &dyn Reconstructor,
        strategies: &[MaskStrategy; 3],
        seed: u64,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let input = Dem1Input::prepare(image, mask, reconstructor, strategies, seed, self.config.mae)?;
        self.forward(&input)
    }

    pub fn to_checkpoint(&self) -> Vec<(String, Tensor)> {
        checkpoint::prefixed(&self.params, PREFIX)
    }

    /// Rebuilds a model of `config` from checkpoint entries; the result counts as trained.
    pub fn from_checkpoint(config: Dem1Config, entries: &[(String, Tensor)]) -> Result<Self> {
        let mut m = Self::new(config, 0)?;
        m.params.load_values(&checkpoint::strip_prefix(entries, PREFIX))?;
        m.trained = true;
        Ok(m)
    }
}

/// A model paired with its prepared training inputs and class labels.
pub struct Dem1Trainer<'a> {
    pub model: &'a mut Dem1Model,
    pub inputs: &'a [Dem1Input],
}

impl Trainable for Dem1Trainer<'_> {
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
        let v = self.model.forward_graph(g, b, &self.inputs[index])?;
        Ok((v.descriptor, v.scores))
    }
}
