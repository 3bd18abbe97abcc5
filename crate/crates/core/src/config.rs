//! Run configuration: `key=value` lines with `#` comments, layered as
//! profile defaults, then file values, then command-line overrides.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::attention::Normalizer;
use crate::augment::AugmentConfig;
use crate::data::DatasetParams;
use crate::dem1::Dem1Config;
use crate::dem2::Dem2Config;
use crate::ensemble::StackConfig;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::masking::MaskStrategy;
use crate::optim::{AdamWConfig, LrSchedule};
use crate::train::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Profile {
    Desk,
    Paper,
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Desk => "desk",
            Profile::Paper => "paper",
        })
    }
}

impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            _ => Err(format!("unknown profile {s:?}; allowed: desk, paper")),
        }
    }
}

/// Every tunable of a run. Defaults are the desk profile.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub profile: Profile,
    /// Master seed; data, initialization and batching seeds derive from it.
    pub seed: u64,
    /// Run directory.
    pub out: PathBuf,
    /// Dataset directory; empty means `<out>/data`.
    pub data_dir: PathBuf,
    /// DEM1 checkpoint used as the DEM2 verifier; empty means the run's own.
    pub verifier_checkpoint: PathBuf,

    pub n_ids: usize,
    pub imgs_per_id: usize,
    pub n_cameras: usize,
    pub occlusion_rate: f64,
    pub height: usize,
    pub width: usize,
    pub query_frac: f64,

    pub attention: Normalizer,
    pub mae: bool,
    pub mae_patch: usize,
    pub verifier: bool,
    /// Rank by distances between unit-normalized descriptors.
    pub cosine: bool,

    pub lambda_id: f64,
    pub alpha_margin: f64,
    pub lambda_div: f64,
    pub weight_decay: f64,

    pub batch_ids: usize,
    pub batch_imgs: usize,
    pub aug_max_shift: usize,
    pub aug_gain: f64,
    pub aug_offset: f64,

    pub dem1_channels: usize,
    pub dem1_epochs: usize,
    pub dem1_lr: f64,
    /// Epochs at which the DEM1 rate is multiplied by a further 0.1.
    pub dem1_lr_milestones: Vec<usize>,
    pub dem1_views: usize,

    pub dem2_depth: usize,
    pub dem2_dim: usize,
    pub dem2_heads: usize,
    pub dem2_m: usize,
    pub dem2_patch: usize,
    pub dem2_mlp_ratio: usize,
    pub dem2_max_shift: usize,
    pub dem2_epochs: usize,
    pub dem2_lr: f64,
    pub dem2_views: usize,

    pub stack_epochs: usize,
    pub stack_lr: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::for_profile(Profile::Desk)
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("cannot parse {value:?} for {key}"))
}

fn parse_switch(key: &str, value: &str) -> std::result::Result<bool, String> {
    match value {
        "on" | "true" | "1" => Ok(true),
        "off" | "false" | "0" => Ok(false),
        _ => Err(format!("{key} must be on or off, got {value:?}")),
    }
}

fn switch(b: bool) -> String {
    if b { "on" } else { "off" }.to_string()
}

impl RunConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let desk = Self {
            profile,
            seed: 0,
            out: PathBuf::from("runs/default"),
            data_dir: PathBuf::new(),
            verifier_checkpoint: PathBuf::new(),
            n_ids: 32,
            imgs_per_id: 10,
            n_cameras: 4,
            occlusion_rate: 0.5,
            height: 64,
            width: 32,
            query_frac: 0.2,
            attention: Normalizer::Sparsemax,
            mae: true,
            mae_patch: 4,
            verifier: true,
            cosine: false,
            lambda_id: 1.0,
            alpha_margin: 0.3,
            lambda_div: 0.01,
            weight_decay: 1e-4,
            batch_ids: 8,
            batch_imgs: 4,
            aug_max_shift: 2,
            aug_gain: 0.2,
            aug_offset: 0.1,
            dem1_channels: 32,
            dem1_epochs: 20,
            dem1_lr: 1e-3,
            dem1_lr_milestones: vec![14],
            dem1_views: 1,
            dem2_depth: 3,
            dem2_dim: 64,
            dem2_heads: 4,
            dem2_m: 2,
            dem2_patch: 8,
            dem2_mlp_ratio: 2,
            dem2_max_shift: 2,
            dem2_epochs: 12,
            dem2_lr: 1e-3,
            dem2_views: 8,
            stack_epochs: 200,
            stack_lr: 1e-2,
        };
        match profile {
            Profile::Desk => desk,
            Profile::Paper => Self {
                height: 256,
                width: 128,
                batch_ids: 16,
                batch_imgs: 4,
                dem1_lr: 2.5e-4,
                dem1_lr_milestones: vec![30, 90],
                dem1_epochs: 150,
                dem2_depth: 9,
                dem2_dim: 199,
                dem2_heads: 1,
                dem2_patch: 16,
                dem2_lr: 0.008,
                dem2_epochs: 350,
                mae_patch: 16,
                ..desk
            },
        }
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let v = value;
        match key {
            "profile" => self.profile = v.parse()?,
            "seed" => self.seed = parse(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "data_dir" => self.data_dir = PathBuf::from(v),
            "verifier_checkpoint" => self.verifier_checkpoint = PathBuf::from(v),
            "n_ids" => self.n_ids = parse(key, v)?,
            "imgs_per_id" => self.imgs_per_id = parse(key, v)?,
            "n_cameras" => self.n_cameras = parse(key, v)?,
            "occlusion_rate" => self.occlusion_rate = parse(key, v)?,
            "height" => self.height = parse(key, v)?,
            "width" => self.width = parse(key, v)?,
            "query_frac" => self.query_frac = parse(key, v)?,
            "attention" => self.attention = v.parse().map_err(|e: Error| e.to_string())?,
            "mae" => self.mae = parse_switch(key, v)?,
            "mae_patch" => self.mae_patch = parse(key, v)?,
            "verifier" => self.verifier = parse_switch(key, v)?,
            "cosine" => self.cosine = parse_switch(key, v)?,
            "lambda_id" => self.lambda_id = parse(key, v)?,
            "alpha_margin" => self.alpha_margin = parse(key, v)?,
            "lambda_div" => self.lambda_div = parse(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            "batch_ids" => self.batch_ids = parse(key, v)?,
            "batch_imgs" => self.batch_imgs = parse(key, v)?,
            "aug_max_shift" => self.aug_max_shift = parse(key, v)?,
            "aug_gain" => self.aug_gain = parse(key, v)?,
            "aug_offset" => self.aug_offset = parse(key, v)?,
            "dem1_channels" => self.dem1_channels = parse(key, v)?,
            "dem1_epochs" => self.dem1_epochs = parse(key, v)?,
            "dem1_lr" => self.dem1_lr = parse(key, v)?,
            "dem1_lr_milestones" => {
                self.dem1_lr_milestones = if v.is_empty() {
                    Vec::new()
                } else {
                    v.split(',')
                        .map(|s| parse(key, s.trim()))
                        .collect::<std::result::Result<_, _>>()?
                }
            }
            "dem1_views" => self.dem1_views = parse(key, v)?,
            "dem2_depth" => self.dem2_depth = parse(key, v)?,
            "dem2_dim" => self.dem2_dim = parse(key, v)?,
            "dem2_heads" => self.dem2_heads = parse(key, v)?,
            "dem2_m" => self.dem2_m = parse(key, v)?,
            "dem2_patch" => self.dem2_patch = parse(key, v)?,
            "dem2_mlp_ratio" => self.dem2_mlp_ratio = parse(key, v)?,
            "dem2_max_shift" => self.dem2_max_shift = parse(key, v)?,
            "dem2_epochs" => self.dem2_epochs = parse(key, v)?,
            "dem2_lr" => self.dem2_lr = parse(key, v)?,
            "dem2_views" => self.dem2_views = parse(key, v)?,
            "stack_epochs" => self.stack_epochs = parse(key, v)?,
            "stack_lr" => self.stack_lr = parse(key, v)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Every key with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let p = |p: &Path| p.display().to_string();
        vec![
            ("profile", self.profile.to_string()),
            ("seed", self.seed.to_string()),
            ("out", p(&self.out)),
            ("data_dir", p(&self.data_dir)),
            ("verifier_checkpoint", p(&self.verifier_checkpoint)),
            ("n_ids", self.n_ids.to_string()),
            ("imgs_per_id", self.imgs_per_id.to_string()),
            ("n_cameras", self.n_cameras.to_string()),
            ("occlusion_rate", self.occlusion_rate.to_string()),
            ("height", self.height.to_string()),
            ("width", self.width.to_string()),
            ("query_frac", self.query_frac.to_string()),
            ("attention", self.attention.to_string()),
            ("mae", switch(self.mae)),
            ("mae_patch", self.mae_patch.to_string()),
            ("verifier", switch(self.verifier)),
            ("cosine", switch(self.cosine)),
            ("lambda_id", self.lambda_id.to_string()),
            ("alpha_margin", self.alpha_margin.to_string()),
            ("lambda_div", self.lambda_div.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("batch_ids", self.batch_ids.to_string()),
            ("batch_imgs", self.batch_imgs.to_string()),
            ("aug_max_shift", self.aug_max_shift.to_string()),
            ("aug_gain", self.aug_gain.to_string()),
            ("aug_offset", self.aug_offset.to_string()),
            ("dem1_channels", self.dem1_channels.to_string()),
            ("dem1_epochs", self.dem1_epochs.to_string()),
            ("dem1_lr", self.dem1_lr.to_string()),
            (
                "dem1_lr_milestones",
                self.dem1_lr_milestones
                    .iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("dem1_views", self.dem1_views.to_string()),
            ("dem2_depth", self.dem2_depth.to_string()),
            ("dem2_dim", self.dem2_dim.to_string()),
            ("dem2_heads", self.dem2_heads.to_string()),
            ("dem2_m", self.dem2_m.to_string()),
            ("dem2_patch", self.dem2_patch.to_string()),
            ("dem2_mlp_ratio", self.dem2_mlp_ratio.to_string()),
            ("dem2_max_shift", self.dem2_max_shift.to_string()),
            ("dem2_epochs", self.dem2_epochs.to_string()),
            ("dem2_lr", self.dem2_lr.to_string()),
            ("dem2_views", self.dem2_views.to_string()),
            ("stack_epochs", self.stack_epochs.to_string()),
            ("stack_lr", self.stack_lr.to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    /// Parses config text over the defaults of its profile, then applies
    /// `overrides` (reported as line 0). A second `profile` line with a
    /// different value, or a profile override disagreeing with the file, is
    /// a conflict.
    pub fn parse_with(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut lines = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config {
                line: i + 1,
                msg: format!("expected key=value, got {line:?}"),
            })?;
            lines.push((i + 1, k.trim().to_string(), v.trim().to_string()));
        }
        let mut profile: Option<(usize, Profile)> = None;
        for (line, k, v) in &lines {
            if k == "profile" {
                let p: Profile = v.parse().map_err(|msg| Error::Config { line: *line, msg })?;
                if let Some((first, q)) = profile {
                    if q != p {
                        return Err(Error::Config {
                            line: *line,
                            msg: format!("profile {p} conflicts with profile {q} on line {first}"),
                        });
                    }
                }
                profile = Some((*line, p));
            }
        }
        if let Some((_, v)) = overrides.iter().find(|(k, _)| k == "profile") {
            let p: Profile = v.parse().map_err(|msg| Error::Config { line: 0, msg })?;
            if let Some((line, q)) = profile {
                if q != p {
                    return Err(Error::Config {
                        line,
                        msg: format!("file profile {q} conflicts with --profile {p}"),
                    });
                }
            }
            profile = Some((0, p));
        }
        let mut cfg = Self::for_profile(profile.map_or(Profile::Desk, |(_, p)| p));
        for (line, k, v) in &lines {
            cfg.set(k, v).map_err(|msg| Error::Config { line: *line, msg })?;
        }
        for (k, v) in overrides {
            cfg.set(k, v).map_err(|msg| Error::Config { line: 0, msg })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse_file(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_with(&text, overrides)
    }

    /// Cross-field checks, reported against line 0.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config { line: 0, msg });
        if self.dem2_heads == 0 || self.dem2_dim % self.dem2_heads != 0 {
            return bad(format!(
                "dem2_heads = {} must divide dem2_dim = {}",
                self.dem2_heads, self.dem2_dim
            ));
        }
        if self.dem1_views == 0 || self.dem2_views == 0 {
            return bad("view counts must be >= 1".into());
        }
        if self.dem2_m == 0 {
            return bad("dem2_m must be >= 1".into());
        }
        self.dataset()
            .validate()
            .and_then(|_| self.loss().validate())
            .and_then(|_| self.dem2_config(2).validate())
            .map_err(|e| Error::Config {
                line: 0,
                msg: e.to_string(),
            })
    }

    pub fn data_dir(&self) -> PathBuf {
        if self.data_dir.as_os_str().is_empty() {
            self.out.join("data")
        } else {
            self.data_dir.clone()
        }
    }

    pub fn verifier_path(&self) -> PathBuf {
        if self.verifier_checkpoint.as_os_str().is_empty() {
            self.out.join("checkpoints").join("dem1.ckpt")
        } else {
            self.verifier_checkpoint.clone()
        }
    }

    pub fn dataset(&self) -> DatasetParams {
        DatasetParams {
            n_ids: self.n_ids,
            imgs_per_id: self.imgs_per_id,
            n_cameras: self.n_cameras,
            occlusion_rate: self.occlusion_rate,
            height: self.height,
            width: self.width,
            query_frac: self.query_frac,
            seed: self.seed,
        }
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            lambda_id: self.lambda_id,
            alpha_margin: self.alpha_margin,
            lambda_div: self.lambda_div,
        }
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }

    pub fn strategies(&self) -> [MaskStrategy; 3] {
        MaskStrategy::defaults(self.mae_patch)
    }

    pub fn augment(&self, views: usize) -> AugmentConfig {
        AugmentConfig {
            views,
            max_shift: self.aug_max_shift,
            gain: self.aug_gain,
            offset: self.aug_offset,
        }
    }

    pub fn dem1_config(&self, n_classes: usize) -> Dem1Config {
        Dem1Config {
            channels: self.dem1_channels,
            n_classes,
            normalizer: self.attention,
            mae: self.mae,
            stem_widths: [16, 32],
        }
    }

    pub fn dem2_config(&self, n_classes: usize) -> Dem2Config {
        Dem2Config {
            depth: self.dem2_depth,
            dim: self.dem2_dim,
            heads: self.dem2_heads,
            m: self.dem2_m,
            patch: self.dem2_patch,
            mlp_ratio: self.dem2_mlp_ratio,
            n_classes,
            height: self.height,
            width: self.width,
            max_shift: self.dem2_max_shift,
            verifier: self.verifier,
        }
    }

    pub fn dem1_train(&self) -> TrainConfig {
        TrainConfig {
            schedule: LrSchedule::StepDecay {
                base_lr: self.dem1_lr,
                milestones: self
                    .dem1_lr_milestones
                    .iter()
                    .enumerate()
                    .map(|(i, &e)| (e, 0.1f64.powi(i as i32 + 1)))
                    .collect(),
                total_epochs: self.dem1_epochs,
            },
            adamw: self.adamw(),
            loss: self.loss(),
            batch_ids: self.batch_ids,
            batch_imgs: self.batch_imgs,
            seed: self.seed.wrapping_add(101),
        }
    }

    pub fn dem2_train(&self) -> TrainConfig {
        TrainConfig {
            schedule: LrSchedule::Cosine {
                base_lr: self.dem2_lr,
                total_epochs: self.dem2_epochs,
            },
            seed: self.seed.wrapping_add(202),
            ..self.dem1_train()
        }
    }

    pub fn stack(&self) -> StackConfig {
        StackConfig {
            loss: self.loss(),
            epochs: self.stack_epochs,
            lr: self.stack_lr,
            adamw: self.adamw(),
            seed: self.seed.wrapping_add(303),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_desk_defaults() {
        let cfg = RunConfig::parse_with("", &[]).unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.profile, Profile::Desk);
    }

    #[test]
    fn lambda_div_is_read() {
        let cfg = RunConfig::parse_with("# stacking\nlambda_div=0.01\n", &[]).unwrap();
        assert_eq!(cfg.loss().lambda_div, 0.01);
        let cfg = RunConfig::parse_with("lambda_div = 0.1 # sweep\n", &[]).unwrap();
        assert_eq!(cfg.lambda_div, 0.1);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = RunConfig::parse_with("seed=1\n\nattention=tanh\n", &[]).unwrap_err();
        match e {
            Error::Config { line, msg } => {
                assert_eq!(line, 3);
                assert!(msg.contains("softmax") && msg.contains("sparsemax"), "{msg}");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            RunConfig::parse_with("colour=red\n", &[]),
            Err(Error::Config { line: 1, .. })
        ));
        assert!(matches!(
            RunConfig::parse_with("seed=x\n", &[]),
            Err(Error::Config { line: 1, .. })
        ));
        assert!(matches!(
            RunConfig::parse_with("profile=desk\nprofile=paper\n", &[]),
            Err(Error::Config { line: 2, .. })
        ));
    }

    #[test]
    fn overrides_beat_file_values() {
        let o = vec![("seed".to_string(), "9".to_string())];
        let cfg = RunConfig::parse_with("seed=3\n", &o).unwrap();
        assert_eq!(cfg.seed, 9);
        let p = vec![("profile".to_string(), "paper".to_string())];
        assert!(RunConfig::parse_with("profile=desk\n", &p).is_err());
    }

    #[test]
    fn paper_profile_embeds_reported_settings() {
        let cfg = RunConfig::for_profile(Profile::Paper);
        assert_eq!((cfg.height, cfg.width), (256, 128));
        assert_eq!(cfg.batch_ids * cfg.batch_imgs, 64);
        assert_eq!(cfg.dem1_lr, 2.5e-4);
        assert_eq!(cfg.dem1_lr_milestones, vec![30, 90]);
        assert_eq!(cfg.dem1_epochs, 150);
        assert_eq!((cfg.dem2_depth, cfg.dem2_dim, cfg.dem2_heads), (9, 199, 1));
        assert_eq!((cfg.dem2_lr, cfg.dem2_epochs), (0.008, 350));
        assert!(cfg.validate().is_ok());
        let lr = cfg.dem1_train().schedule;
        assert!((lr.lr_at(90).unwrap() - 2.5e-6).abs() < 1e-18);
    }

    #[test]
    fn resolved_text_parses_back() {
        let mut cfg = RunConfig::for_profile(Profile::Paper);
        cfg.seed = 77;
        cfg.dem1_lr_milestones = vec![];
        cfg.mae = false;
        let back = RunConfig::parse_with(&cfg.to_text(), &[]).unwrap();
        assert_eq!(back, cfg);
    }
}
