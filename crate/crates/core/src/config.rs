//! Flat `key=value` run configuration covering every tunable default.
//!
//! ```text
//! # comment
//! seed=3
//! train.epochs=10
//! severity.jitter_sigma=0.01,0.02,0.03,0.04,0.05
//! ```

use std::fmt::Display;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::corruptions::SeverityTable;
use crate::data_io::{ShapeClass, SyntheticConfig};
use crate::error::{Error, Result};
use crate::training::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data: SyntheticConfig,
    pub train: TrainConfig,
    pub severity: SeverityTable,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: SyntheticConfig::default(),
            train: TrainConfig::default(),
            severity: SeverityTable::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {v:?}"))),
    }
}

fn parse_list<T: FromStr, const K: usize>(key: &str, v: &str) -> Result<[T; K]> {
    let items = v
        .split(',')
        .map(|s| parse::<T>(key, s))
        .collect::<Result<Vec<T>>>()?;
    let n = items.len();
    items
        .try_into()
        .map_err(|_| Error::Config(format!("{key}: expected {K} comma-separated values, got {n}")))
}

fn join<T: Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Every key with its current value, in a stable order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let d = &self.data;
        let t = &self.train;
        let i = &t.imitator;
        let b = &t.backbone;
        let s = &self.severity;
        let classes: Vec<&str> = d.classes.iter().map(|c| c.name()).collect();
        vec![
            ("seed", self.seed.to_string()),
            ("n_points", d.n_points.to_string()),
            ("data.classes", classes.join(",")),
            ("data.samples_per_class", d.samples_per_class.to_string()),
            ("data.max_rotation_deg", d.max_rotation_deg.to_string()),
            ("data.scale_min", d.scale_range.0.to_string()),
            ("data.scale_max", d.scale_range.1.to_string()),
            ("data.test_fraction", d.test_fraction.to_string()),
            ("imitator.n_sampled", i.n_sampled.to_string()),
            ("imitator.anchors", i.anchors.to_string()),
            ("imitator.width", i.width.to_string()),
            ("imitator.neighbors", i.neighbors.to_string()),
            ("imitator.heads", i.heads.to_string()),
            ("imitator.tau", i.tau.to_string()),
            ("imitator.s_max", i.s_max.to_string()),
            ("imitator.theta_max", i.theta_max.to_string()),
            ("imitator.t_max", i.t_max.to_string()),
            ("imitator.mask_budget", i.mask_budget.to_string()),
            ("imitator.keep_bias", i.keep_bias.to_string()),
            ("imitator.bandwidth", i.fusion.bandwidth.to_string()),
            ("backbone.centers", join(&b.centers)),
            ("backbone.neighbors", b.neighbors.to_string()),
            ("backbone.widths", join(&b.widths)),
            ("train.lambda", t.lambda.to_string()),
            ("train.beta_start", t.beta_start.to_string()),
            ("train.beta_end", t.beta_end.to_string()),
            ("train.lr_imitator", t.lr_imitator.to_string()),
            ("train.lr_discriminator", t.lr_discriminator.to_string()),
            ("train.lr_classifier", t.lr_classifier.to_string()),
            ("train.epochs", t.epochs.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.use_feedback", t.use_feedback.to_string()),
            ("train.use_adversarial", t.use_adversarial.to_string()),
            ("train.use_deformation", t.use_deformation.to_string()),
            ("train.use_mask", t.use_mask.to_string()),
            ("severity.scale_bound", join(&s.scale_bound)),
            ("severity.jitter_sigma", join(&s.jitter_sigma)),
            ("severity.rotate_deg", join(&s.rotate_deg)),
            ("severity.drop_global_frac", join(&s.drop_global_frac)),
            ("severity.drop_local_frac", join(&s.drop_local_frac)),
            ("severity.drop_local_centers", join(&s.drop_local_centers)),
            ("severity.add_global_frac", join(&s.add_global_frac)),
            ("severity.add_local_frac", join(&s.add_local_frac)),
            ("severity.add_local_centers", join(&s.add_local_centers)),
            ("severity.add_local_sigma", s.add_local_sigma.to_string()),
            ("severity.add_local_clip", s.add_local_clip.to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let d = &mut self.data;
        let t = &mut self.train;
        let s = &mut self.severity;
        match key {
            "seed" => self.seed = parse(key, v)?,
            "n_points" => d.n_points = parse(key, v)?,
            "data.classes" => {
                d.classes = v
                    .split(',')
                    .map(|c| c.trim().parse::<ShapeClass>().map_err(|e| Error::Config(format!("{key}: {e}"))))
                    .collect::<Result<_>>()?
            }
            "data.samples_per_class" => d.samples_per_class = parse(key, v)?,
            "data.max_rotation_deg" => d.max_rotation_deg = parse(key, v)?,
            "data.scale_min" => d.scale_range.0 = parse(key, v)?,
            "data.scale_max" => d.scale_range.1 = parse(key, v)?,
            "data.test_fraction" => d.test_fraction = parse(key, v)?,
            "imitator.n_sampled" => t.imitator.n_sampled = parse(key, v)?,
            "imitator.anchors" => t.imitator.anchors = parse(key, v)?,
            "imitator.width" => t.imitator.width = parse(key, v)?,
            "imitator.neighbors" => t.imitator.neighbors = parse(key, v)?,
            "imitator.heads" => t.imitator.heads = parse(key, v)?,
            "imitator.tau" => t.imitator.tau = parse(key, v)?,
            "imitator.s_max" => t.imitator.s_max = parse(key, v)?,
            "imitator.theta_max" => t.imitator.theta_max = parse(key, v)?,
            "imitator.t_max" => t.imitator.t_max = parse(key, v)?,
            "imitator.mask_budget" => t.imitator.mask_budget = parse(key, v)?,
            "imitator.keep_bias" => t.imitator.keep_bias = parse(key, v)?,
            "imitator.bandwidth" => t.imitator.fusion.bandwidth = parse(key, v)?,
            "backbone.centers" => t.backbone.centers = parse_list(key, v)?,
            "backbone.neighbors" => t.backbone.neighbors = parse(key, v)?,
            "backbone.widths" => t.backbone.widths = parse_list(key, v)?,
            "train.lambda" => t.lambda = parse(key, v)?,
            "train.beta_start" => t.beta_start = parse(key, v)?,
            "train.beta_end" => t.beta_end = parse(key, v)?,
            "train.lr_imitator" => t.lr_imitator = parse(key, v)?,
            "train.lr_discriminator" => t.lr_discriminator = parse(key, v)?,
            "train.lr_classifier" => t.lr_classifier = parse(key, v)?,
            "train.epochs" => t.epochs = parse(key, v)?,
            "train.batch_size" => t.batch_size = parse(key, v)?,
            "train.use_feedback" => t.use_feedback = parse_bool(key, v)?,
            "train.use_adversarial" => t.use_adversarial = parse_bool(key, v)?,
            "train.use_deformation" => t.use_deformation = parse_bool(key, v)?,
            "train.use_mask" => t.use_mask = parse_bool(key, v)?,
            "severity.scale_bound" => s.scale_bound = parse_list(key, v)?,
            "severity.jitter_sigma" => s.jitter_sigma = parse_list(key, v)?,
            "severity.rotate_deg" => s.rotate_deg = parse_list(key, v)?,
            "severity.drop_global_frac" => s.drop_global_frac = parse_list(key, v)?,
            "severity.drop_local_frac" => s.drop_local_frac = parse_list(key, v)?,
            "severity.drop_local_centers" => s.drop_local_centers = parse_list(key, v)?,
            "severity.add_global_frac" => s.add_global_frac = parse_list(key, v)?,
            "severity.add_local_frac" => s.add_local_frac = parse_list(key, v)?,
            "severity.add_local_centers" => s.add_local_centers = parse_list(key, v)?,
            "severity.add_local_sigma" => s.add_local_sigma = parse(key, v)?,
            "severity.add_local_clip" => s.add_local_clip = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        self.sync();
        Ok(())
    }

    /// Propagates the shared seed and point count into the sub-configs.
    pub fn sync(&mut self) {
        self.data.seed = self.seed;
        self.train.seed = self.seed;
        self.train.imitator.n_points = self.data.n_points;
        self.train.backbone.n_points = self.data.n_points;
    }

    /// Applies `key=value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (ln, line) in text.lines().enumerate() {
            let body = line.split('#').next().unwrap_or_default().trim();
            if body.is_empty() {
                continue;
            }
            let (k, v) = body
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{origin}:{}: expected key=value, got {body:?}", ln + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("{origin}:{}: {}", ln + 1, strip(e))))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text, &path.display().to_string())?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.train.validate()
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}
