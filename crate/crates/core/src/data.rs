//! Procedural occluded-person corpus.
//!
//! Each identity is a stylized figure with four coloured, optionally striped
//! body parts. Records vary by camera (global colour/contrast), pose offset,
//! background noise and, for the occluded fraction, a gray polygon drawn over
//! the body. The stored part mask always describes the unoccluded body.
//!
//! On disk a dataset directory holds `images/*.ppm` (P6), `masks/*.pgm` (P5,
//! raw label values), `index.tsv` and `manifest.tsv`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::image::{Image, PartMask, NUM_PARTS};

/// Colour/texture parameters of one identity.
#[derive(Clone, Debug, PartialEq)]
pub struct IdentitySpec {
    pub id: usize,
    /// Per part: `[r, g, b, stripe]`.
    pub parts: [[f64; 4]; NUM_PARTS],
    /// `[torso_width, leg_length]` as multipliers around 1.
    pub proportions: [f64; 2],
}

impl IdentitySpec {
    fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.parts.iter().flatten().copied()
    }

    /// Largest parameter difference between two identities.
    pub fn max_param_diff(&self, other: &IdentitySpec) -> f64 {
        self.params()
            .zip(other.params())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Query,
    Gallery,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Query => "query",
            Split::Gallery => "gallery",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "query" => Ok(Split::Query),
            "gallery" => Ok(Split::Gallery),
            _ => Err(Error::contract(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedRecord {
    pub image: Image,
    pub part_mask: PartMask,
    pub identity: usize,
    pub camera: usize,
    pub occluded: bool,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetParams {
    pub n_ids: usize,
    pub imgs_per_id: usize,
    pub n_cameras: usize,
    pub occlusion_rate: f64,
    pub height: usize,
    pub width: usize,
    pub query_frac: f64,
    pub seed: u64,
}

impl Default for DatasetParams {
    fn default() -> Self {
        Self {
            n_ids: 32,
            imgs_per_id: 10,
            n_cameras: 4,
            occlusion_rate: 0.5,
            height: 64,
            width: 32,
            query_frac: 0.2,
            seed: 0,
        }
    }
}

impl DatasetParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::contract(m));
        if self.n_ids < 2 {
            return bad(format!("n_ids must be >= 2, got {}", self.n_ids));
        }
        if self.imgs_per_id < 4 {
            return bad(format!("imgs_per_id must be >= 4, got {}", self.imgs_per_id));
        }
        if self.n_cameras < 2 {
            return bad(format!("n_cameras must be >= 2, got {}", self.n_cameras));
        }
        if !(0.0..=1.0).contains(&self.occlusion_rate) {
            return bad(format!(
                "occlusion_rate must lie in [0, 1], got {}",
                self.occlusion_rate
            ));
        }
        if self.height < 32 || self.width < 16 || self.height % 8 != 0 || self.width % 8 != 0 {
            return bad(format!(
                "image size {}x{} must be at least 32x16 and a multiple of 8",
                self.height, self.width
            ));
        }
        if !(self.query_frac > 0.0 && self.query_frac < 1.0) {
            return bad(format!("query_frac must lie in (0, 1), got {}", self.query_frac));
        }
        Ok(())
    }
}

/// Minimum fraction of body pixels an occluder must hide.
pub const MIN_OCCLUSION: f64 = 0.10;

fn record_rng(seed: u64, stream: u64, a: usize, b: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream ^ ((a as u64) << 32) ^ b as u64);
    rng
}

/// Identities with pairwise parameter differences of at least 0.1.
pub fn sample_identities(n_ids: usize, seed: u64) -> Vec<IdentitySpec> {
    let mut rng = record_rng(seed, 0x1d, 0, 0);
    let mut out: Vec<IdentitySpec> = Vec::with_capacity(n_ids);
    while out.len() < n_ids {
        let mut parts = [[0.0; 4]; NUM_PARTS];
        for p in parts.iter_mut() {
            for c in p.iter_mut().take(3) {
                *c = rng.gen_range(0.05..0.95);
            }
            p[3] = if rng.gen_bool(0.5) { rng.gen_range(0.3..1.0) } else { 0.0 };
        }
        let spec = IdentitySpec {
            id: out.len(),
            parts,
            proportions: [rng.gen_range(0.85..1.15), rng.gen_range(0.9..1.1)],
        };
        if out.iter().all(|o| o.max_param_diff(&spec) >= 0.1) {
            out.push(spec);
        }
    }
    out
}

#[derive(Clone, Copy, Debug)]
struct CameraStyle {
    contrast: f64,
    brightness: f64,
    cast: [f64; 3],
}

fn camera_styles(n: usize, seed: u64) -> Vec<CameraStyle> {
    let mut rng = record_rng(seed, 0xca, 0, 0);
    (0..n)
        .map(|_| CameraStyle {
            contrast: rng.gen_range(0.85..1.15),
            brightness: rng.gen_range(-0.08..0.08),
            cast: [
                rng.gen_range(-0.05..0.05),
                rng.gen_range(-0.05..0.05),
                rng.gen_range(-0.05..0.05),
            ],
        })
        .collect()
}

/// Body-part label at pixel `(y, x)` for a figure offset by `(dy, dx)`.
fn body_label(spec: &IdentitySpec, h: usize, w: usize, y: f64, x: f64) -> u8 {
    // Layout in units of the 64x32 reference frame.
    let sy = h as f64 / 64.0;
    let sx = w as f64 / 32.0;
    let (y, x) = (y / sy, x / sx);
    let cx = 16.0;
    let tw = 7.0 * spec.proportions[0];
    let leg_end = (36.0 + 23.0 * spec.proportions[1]).min(62.0);
    let head = ((y - 9.0) / 6.5).powi(2) + ((x - cx) / 5.0).powi(2) <= 1.0;
    if head {
        return 1;
    }
    if (16.0..36.0).contains(&y) && (x - cx).abs() < tw {
        return 2;
    }
    if (17.0..35.0).contains(&y) && (x - cx).abs() >= tw && (x - cx).abs() < tw + 3.5 {
        return 3;
    }
    if y >= 36.0 && y < leg_end && (x - cx).abs() >= 0.8 && (x - cx).abs() < 6.0 {
        return 4;
    }
    0
}

fn point_in_polygon(poly: &[(f64, f64)], y: f64, x: f64) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (yi, xi) = poly[i];
        let (yj, xj) = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// Renders one record; pure in `(spec, camera style, occluded, rng)`.
fn render(
    spec: &IdentitySpec,
    style: &CameraStyle,
    occluded: bool,
    h: usize,
    w: usize,
    rng: &mut ChaCha8Rng,
) -> (Image, PartMask, bool) {
    let dy = rng.gen_range(-2.0..=2.0_f64).round();
    let dx = rng.gen_range(-2.0..=2.0_f64).round();
    let bg_level = rng.gen_range(0.25..0.75);
    let bg_tint: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-0.08..0.08));
    let stripe_phase = rng.gen_range(0..4usize);

    let mut labels = vec![0u8; h * w];
    let mut data = vec![0.0; h * w * 3];
    for y in 0..h {
        for x in 0..w {
            let label = body_label(spec, h, w, y as f64 - dy, x as f64 - dx);
            labels[y * w + x] = label;
            let px = &mut data[(y * w + x) * 3..][..3];
            if label == 0 {
                for (c, v) in px.iter_mut().enumerate() {
                    let n: f64 = rng.sample(StandardNormal);
                    *v = bg_level + bg_tint[c] + 0.08 * n;
                }
            } else {
                let part = &spec.parts[label as usize - 1];
                let stripe = if (y + stripe_phase) % 4 < 2 { 1.0 } else { -1.0 };
                for (c, v) in px.iter_mut().enumerate() {
                    let n: f64 = rng.sample(StandardNormal);
                    *v = part[c] + 0.12 * part[3] * stripe + 0.025 * n;
                }
            }
        }
    }
    for px in data.chunks_mut(3) {
        for (c, v) in px.iter_mut().enumerate() {
            *v = (*v - 0.5) * style.contrast + 0.5 + style.brightness + style.cast[c];
        }
    }

    let body: Vec<usize> = (0..h * w).filter(|&i| labels[i] != 0).collect();
    let mut is_occluded = false;
    if occluded && !body.is_empty() {
        for _ in 0..256 {
            let &anchor = body.choose(rng).expect("non-empty");
            let (ay, ax) = ((anchor / w) as f64, (anchor % w) as f64);
            let half_h = rng.gen_range(6.0..14.0) * h as f64 / 64.0;
            let half_w = rng.gen_range(5.0..11.0) * w as f64 / 32.0;
            let poly: Vec<(f64, f64)> = [(-1.0, -1.0), (-1.0, 1.0), (1.0, 1.0), (1.0, -1.0)]
                .iter()
                .map(|&(sy, sx)| {
                    (
                        ay + sy * half_h + rng.gen_range(-2.5..2.5),
                        ax + sx * half_w + rng.gen_range(-2.5..2.5),
                    )
                })
                .collect();
            let covered = body
                .iter()
                .filter(|&&i| point_in_polygon(&poly, (i / w) as f64 + 0.5, (i % w) as f64 + 0.5))
                .count();
            if (covered as f64) < MIN_OCCLUSION * body.len() as f64 {
                continue;
            }
            let gray = rng.gen_range(0.3..0.7);
            for y in 0..h {
                for x in 0..w {
                    if point_in_polygon(&poly, y as f64 + 0.5, x as f64 + 0.5) {
                        let n: f64 = rng.sample(StandardNormal);
                        let v = gray + 0.02 * n;
                        data[(y * w + x) * 3..][..3].iter_mut().for_each(|p| *p = v);
                    }
                }
            }
            is_occluded = true;
            break;
        }
    }
    data.iter_mut().for_each(|v| *v = quantize(*v));
    let image = Image::new(h, w, 3, data).expect("dims are consistent");
    let mask = PartMask::new(h, w, labels).expect("labels are in range");
    (image, mask, is_occluded)
}

/// Renders every record, identity-major, with splits assigned.
pub fn generate_records(params: &DatasetParams) -> Result<Vec<RenderedRecord>> {
    params.validate()?;
    let ids = sample_identities(params.n_ids, params.seed);
    let styles = camera_styles(params.n_cameras, params.seed);
    let n_occ = (params.occlusion_rate * params.imgs_per_id as f64).round() as usize;
    let mut records = Vec::with_capacity(params.n_ids * params.imgs_per_id);
    for spec in &ids {
        let mut order: Vec<usize> = (0..params.imgs_per_id).collect();
        order.shuffle(&mut record_rng(params.seed, 0x0c, spec.id, 0));
        let occluded_set = &order[..n_occ];
        for k in 0..params.imgs_per_id {
            let camera = k % params.n_cameras;
            let occluded = occluded_set.contains(&k);
            let mut rng = record_rng(params.seed, 0x7e, spec.id, k);
            let (image, part_mask, occluded) = render(
                spec,
                &styles[camera],
                occluded,
                params.height,
                params.width,
                &mut rng,
            );
            records.push(RenderedRecord {
                image,
                part_mask,
                identity: spec.id,
                camera,
                occluded,
                split: Split::Train,
            });
        }
    }
    split_dataset(&mut records, params.query_frac, params.seed)?;
    Ok(records)
}

/// Identity-disjoint train/test split; test identities are further divided
/// into query and gallery so every query has a cross-camera gallery match.
pub fn split_dataset(records: &mut [RenderedRecord], query_frac: f64, seed: u64) -> Result<()> {
    let mut ids: Vec<usize> = records.iter().map(|r| r.identity).collect();
    ids.sort_unstable();
    ids.dedup();
    for &id in &ids {
        let mut cams: Vec<usize> = records
            .iter()
            .filter(|r| r.identity == id)
            .map(|r| r.camera)
            .collect();
        let n = cams.len();
        cams.sort_unstable();
        cams.dedup();
        if n < 2 || cams.len() < 2 {
            return Err(Error::contract(format!(
                "identity {id} needs at least 2 images in at least 2 cameras"
            )));
        }
    }
    let mut rng = record_rng(seed, 0x5b, 0, 0);
    let mut shuffled = ids.clone();
    shuffled.shuffle(&mut rng);
    let n_train = shuffled.len() / 2;
    let train: Vec<usize> = shuffled[..n_train].to_vec();
    for &id in &ids {
        let members: Vec<usize> = (0..records.len())
            .filter(|&i| records[i].identity == id)
            .collect();
        if train.contains(&id) {
            for &i in &members {
                records[i].split = Split::Train;
            }
            continue;
        }
        let n_query = ((query_frac * members.len() as f64).round() as usize)
            .clamp(1, members.len() - 1);
        let mut order = members.clone();
        order.shuffle(&mut record_rng(seed, 0x9e, id, 0));
        let mut queries: Vec<usize> = Vec::with_capacity(n_query);
        for &i in &order {
            if queries.len() == n_query {
                break;
            }
            let mut trial = queries.clone();
            trial.push(i);
            if cross_camera_ok(records, &members, &trial) {
                queries = trial;
            }
        }
        if queries.len() < n_query {
            return Err(Error::contract(format!(
                "identity {id}: cannot choose {n_query} queries with a cross-camera gallery match"
            )));
        }
        for &i in &members {
            records[i].split = if queries.contains(&i) {
                Split::Query
            } else {
                Split::Gallery
            };
        }
    }
    Ok(())
}

fn cross_camera_ok(records: &[RenderedRecord], members: &[usize], queries: &[usize]) -> bool {
    queries.iter().all(|&q| {
        members
            .iter()
            .any(|&g| !queries.contains(&g) && records[g].camera != records[q].camera)
    })
}

/// Nearest-centroid rank-1 on 4x-downsampled raw pixels over the unoccluded
/// test queries, with gallery centroids per identity. Returns `(rank1, chance)`.
pub fn identifiability_floor(records: &[RenderedRecord]) -> (f64, f64) {
    let feat = |im: &Image| -> Vec<f64> {
        let (h, w) = (im.height() / 4, im.width() / 4);
        let mut out = vec![0.0; h * w * 3];
        for y in 0..im.height() {
            for x in 0..im.width() {
                let o = ((y / 4).min(h - 1) * w + (x / 4).min(w - 1)) * 3;
                for c in 0..3 {
                    out[o + c] += im.pixel(y, x)[c] / 16.0;
                }
            }
        }
        out
    };
    let mut gallery_ids: Vec<usize> = records
        .iter()
        .filter(|r| r.split == Split::Gallery)
        .map(|r| r.identity)
        .collect();
    gallery_ids.sort_unstable();
    gallery_ids.dedup();
    let centroids: Vec<Vec<f64>> = gallery_ids
        .iter()
        .map(|&id| {
            let feats: Vec<Vec<f64>> = records
                .iter()
                .filter(|r| r.split == Split::Gallery && r.identity == id)
                .map(|r| feat(&r.image))
                .collect();
            let mut c = vec![0.0; feats[0].len()];
            for f in &feats {
                for (a, b) in c.iter_mut().zip(f) {
                    *a += b / feats.len() as f64;
                }
            }
            c
        })
        .collect();
    let queries: Vec<&RenderedRecord> = records
        .iter()
        .filter(|r| r.split == Split::Query && !r.occluded)
        .collect();
    if queries.is_empty() || gallery_ids.is_empty() {
        return (0.0, 0.0);
    }
    let correct = queries
        .iter()
        .filter(|q| {
            let f = feat(&q.image);
            let best = centroids
                .iter()
                .enumerate()
                .map(|(i, c)| (i, c.iter().zip(&f).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()))
                .fold((0, f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b });
            gallery_ids[best.0] == q.identity
        })
        .count();
    (
        correct as f64 / queries.len() as f64,
        1.0 / gallery_ids.len() as f64,
    )
}

/// One line of `index.tsv`.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexRow {
    pub image_path: String,
    pub mask_path: String,
    pub identity: usize,
    pub camera: usize,
    pub occluded: bool,
    pub split: Split,
}

pub const INDEX_HEADER: &str = "relative_path\tmask_path\tidentity\tcamera\toccluded\tsplit";

fn record_paths(r: &RenderedRecord, k: usize) -> (String, String) {
    let stem = format!("{:03}_c{}_{:02}", r.identity, r.camera, k);
    (format!("images/{stem}.ppm"), format!("masks/{stem}.pgm"))
}

pub fn encode_ppm(image: &Image) -> Result<Vec<u8>> {
    if image.channels() != 3 {
        return Err(Error::shape("PPM needs a 3-channel image"));
    }
    let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

pub fn encode_pgm(mask: &PartMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend_from_slice(mask.labels());
    out
}

/// Parses a binary netpbm header; returns `(width, height, payload offset)`.
fn parse_netpbm(bytes: &[u8], magic: &str, what: &str) -> Result<(usize, usize, usize)> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::load(what, "truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != magic {
        return Err(Error::load(what, format!("expected {magic}, found {}", fields[0])));
    }
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::load(what, format!("bad header field {s:?}")))
    };
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval != 255 {
        return Err(Error::load(what, format!("maxval {maxval} is not 255")));
    }
    Ok((w, h, pos))
}

pub fn decode_ppm(bytes: &[u8], what: &str) -> Result<Image> {
    let (w, h, off) = parse_netpbm(bytes, "P6", what)?;
    let payload = &bytes[off.min(bytes.len())..];
    if payload.len() != w * h * 3 {
        return Err(Error::load(
            what,
            format!("expected {} pixel bytes, found {}", w * h * 3, payload.len()),
        ));
    }
    Image::new(h, w, 3, payload.iter().map(|&b| b as f64 / 255.0).collect())
        .map_err(|e| Error::load(what, e.to_string()))
}

pub fn decode_pgm(bytes: &[u8], what: &str) -> Result<PartMask> {
    let (w, h, off) = parse_netpbm(bytes, "P5", what)?;
    let payload = &bytes[off.min(bytes.len())..];
    if payload.len() != w * h {
        return Err(Error::load(
            what,
            format!("expected {} label bytes, found {}", w * h, payload.len()),
        ));
    }
    PartMask::new(h, w, payload.to_vec()).map_err(|e| Error::load(what, e.to_string()))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Generates, splits and writes a dataset; returns the records.
pub fn generate_dataset(params: &DatasetParams, dir: &Path) -> Result<Vec<RenderedRecord>> {
    let records = generate_records(params)?;
    write_dataset(dir, &records, params)?;
    Ok(records)
}

pub fn write_dataset(dir: &Path, records: &[RenderedRecord], params: &DatasetParams) -> Result<()> {
    for sub in ["images", "masks"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut index = String::from(INDEX_HEADER);
    index.push('\n');
    let mut per_id = std::collections::HashMap::new();
    for r in records {
        let k = per_id.entry(r.identity).or_insert(0usize);
        let (ip, mp) = record_paths(r, *k);
        *k += 1;
        write(&dir.join(&ip), &encode_ppm(&r.image)?)?;
        write(&dir.join(&mp), &encode_pgm(&r.part_mask))?;
        index.push_str(&format!(
            "{ip}\t{mp}\t{}\t{}\t{}\t{}\n",
            r.identity,
            r.camera,
            u8::from(r.occluded),
            r.split
        ));
    }
    let (floor, chance) = identifiability_floor(records);
    let manifest = format!(
        "key\tvalue\nn_ids\t{}\nimgs_per_id\t{}\nn_cameras\t{}\nocclusion_rate\t{}\nheight\t{}\nwidth\t{}\nquery_frac\t{}\nseed\t{}\nrecords\t{}\nidentifiability_rank1\t{floor:.6}\nchance_rank1\t{chance:.6}\n",
        params.n_ids,
        params.imgs_per_id,
        params.n_cameras,
        params.occlusion_rate,
        params.height,
        params.width,
        params.query_frac,
        params.seed,
        records.len(),
    );
    write(&dir.join("manifest.tsv"), manifest.as_bytes())?;
    write(&dir.join("index.tsv"), index.as_bytes())
}

pub fn read_index(dir: &Path) -> Result<Vec<IndexRow>> {
    let path = dir.join("index.tsv");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(INDEX_HEADER) {
        return Err(Error::load("index.tsv", "missing or wrong header row"));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let what = format!("index.tsv line {}", i + 2);
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 6 {
                return Err(Error::load(&what, format!("expected 6 columns, got {}", cols.len())));
            }
            let num = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::load(&what, format!("bad integer {s:?}")))
            };
            Ok(IndexRow {
                image_path: cols[0].to_string(),
                mask_path: cols[1].to_string(),
                identity: num(cols[2])?,
                camera: num(cols[3])?,
                occluded: match cols[4] {
                    "0" => false,
                    "1" => true,
                    s => return Err(Error::load(&what, format!("bad occluded flag {s:?}"))),
                },
                split: cols[5]
                    .parse()
                    .map_err(|_| Error::load(&what, format!("bad split {:?}", cols[5])))?,
            })
        })
        .collect()
}

/// Decodes one record and checks it against its index row.
pub fn load_record(dir: &Path, row: &IndexRow) -> Result<RenderedRecord> {
    let read = |rel: &str| -> Result<Vec<u8>> {
        let p: PathBuf = dir.join(rel);
        fs::read(&p).map_err(|e| Error::io(&p, e))
    };
    let image = decode_ppm(&read(&row.image_path)?, &row.image_path)?;
    let part_mask = decode_pgm(&read(&row.mask_path)?, &row.mask_path)?;
    if image.height() != part_mask.height() || image.width() != part_mask.width() {
        return Err(Error::load(&row.image_path, "image and mask dimensions differ"));
    }
    if part_mask.present_parts().is_empty() {
        return Err(Error::load(&row.mask_path, "mask has no body pixels"));
    }
    Ok(RenderedRecord {
        image,
        part_mask,
        identity: row.identity,
        camera: row.camera,
        occluded: row.occluded,
        split: row.split,
    })
}

pub fn load_dataset(dir: &Path) -> Result<Vec<RenderedRecord>> {
    read_index(dir)?
        .iter()
        .map(|row| load_record(dir, row))
        .collect()
}
