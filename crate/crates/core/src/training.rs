//! Losses, the β schedule and the imitator / discriminator / classifier
//! co-training loop.
//!
//! Every step runs three updates in order: the discriminator on clean versus
//! imitated clouds, the imitator on `L_adv + λ·L_feed` with the other two
//! players frozen, and the classifier on the mean of the clean and
//! augmented cross-entropies. Per-sample work runs on the rayon pool and
//! gradients are reduced in sample order, so results do not depend on the
//! number of threads.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::data_io::Dataset;
use crate::error::{Error, Result};
use crate::geom::PointCloud;
use crate::imitator::{ImitateOptions, Imitator, ImitatorConfig, ImitatorTrace};
use crate::models::{BackboneConfig, Classifier, ClassifierConfig, Discriminator, DiscriminatorConfig};
use crate::nn::checkpoint::{load_into, read_checkpoint, write_checkpoint};
use crate::nn::{Adam, Bound, GradStore, Graph, ParamStore, Var};
use crate::rng::RngStream;

/// Gap clamp applied before exponentiation in the feedback loss.
pub const FEEDBACK_CLAMP: f64 = 20.0;
/// Probability clamp for the adversarial logs.
pub const PROB_EPS: f64 = 1e-7;

const INIT_TAG: u64 = 0x696e6974;
const SHUFFLE_TAG: u64 = 0x73687566;
const GUMBEL_TAG: u64 = 0x67756d62;

/// `|1 - exp(clamp(lc_aug - β·lc_clean, ±20))|`.
pub fn feedback_loss(lc_aug: f64, lc_clean: f64, beta: f64) -> f64 {
    let gap = (lc_aug - beta * lc_clean).clamp(-FEEDBACK_CLAMP, FEEDBACK_CLAMP);
    (1.0 - gap.exp()).abs()
}

/// `(imitator term, discriminator term)` from the discriminator's outputs on
/// an augmented and a clean cloud.
pub fn adversarial_losses(d_on_aug: f64, d_on_clean: f64) -> (f64, f64) {
    let a = d_on_aug.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let c = d_on_clean.clamp(PROB_EPS, 1.0 - PROB_EPS);
    (-a.ln(), -(c.ln() + (1.0 - a).ln()) / 2.0)
}

pub(crate) fn feedback_var(g: &mut Graph, lc_aug: Var, lc_clean: f64, beta: f64) -> Var {
    let gap = g.add_scalar(lc_aug, -beta * lc_clean);
    let gap = g.clamp(gap, -FEEDBACK_CLAMP, FEEDBACK_CLAMP);
    let e = g.exp(gap);
    let d = g.scale(e, -1.0);
    let d = g.add_scalar(d, 1.0);
    g.abs(d)
}

fn neg_log_clamped(g: &mut Graph, p: Var) -> Var {
    let p = g.clamp(p, PROB_EPS, 1.0 - PROB_EPS);
    let l = g.log(p);
    g.scale(l, -1.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    pub beta_start: f64,
    pub beta_end: f64,
    pub lr_imitator: f64,
    pub lr_discriminator: f64,
    pub lr_classifier: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub use_feedback: bool,
    pub use_adversarial: bool,
    pub use_deformation: bool,
    pub use_mask: bool,
    pub imitator: ImitatorConfig,
    pub backbone: BackboneConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            beta_start: 1.0,
            beta_end: 2.0,
            lr_imitator: 1e-4,
            lr_discriminator: 4e-4,
            lr_classifier: 2e-3,
            epochs: 30,
            batch_size: 16,
            seed: 0,
            use_feedback: true,
            use_adversarial: true,
            use_deformation: true,
            use_mask: true,
            imitator: ImitatorConfig::default(),
            backbone: BackboneConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Classifier-only training on clean data.
    pub fn baseline() -> Self {
        Self {
            use_deformation: false,
            use_mask: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.beta_start >= 1.0 && self.beta_end >= 1.0) {
            return Err(Error::Config("beta must stay >= 1".into()));
        }
        for (name, lr) in [
            ("lr_imitator", self.lr_imitator),
            ("lr_discriminator", self.lr_discriminator),
            ("lr_classifier", self.lr_classifier),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("{name} must be > 0, got {lr}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if self.imitator.n_points != self.backbone.n_points {
            return Err(Error::Config(format!(
                "imitator expects {} points but models expect {}",
                self.imitator.n_points, self.backbone.n_points
            )));
        }
        self.imitator.validate()?;
        self.backbone.validate()
    }

    pub fn imitate_options(&self) -> ImitateOptions {
        ImitateOptions {
            hard_mask: true,
            use_deformation: self.use_deformation,
            use_mask: self.use_mask,
        }
    }

    fn augments(&self) -> bool {
        !self.imitate_options().is_identity()
    }

    fn trains_imitator(&self) -> bool {
        self.augments() && (self.use_feedback || self.use_adversarial)
    }

    fn trains_discriminator(&self) -> bool {
        self.augments() && self.use_adversarial
    }
}

/// β for a 0-based epoch: linear from `beta_start` at the first epoch to
/// `beta_end` at the last.
pub fn beta_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    if cfg.epochs <= 1 {
        return cfg.beta_start;
    }
    let t = epoch.min(cfg.epochs - 1) as f64 / (cfg.epochs - 1) as f64;
    cfg.beta_start + (cfg.beta_end - cfg.beta_start) * t
}

/// Batch means of one step. Terms of disabled players are reported as 0.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub lc_clean: f64,
    pub lc_aug: f64,
    pub l_feed: f64,
    pub l_adv: f64,
    pub l_disc: f64,
    pub beta: f64,
    /// Correct clean predictions before the classifier update.
    pub correct: usize,
    pub samples: usize,
}

impl LossReport {
    fn values(&self) -> [(&'static str, f64); 6] {
        [
            ("lc_clean", self.lc_clean),
            ("lc_aug", self.lc_aug),
            ("l_feed", self.l_feed),
            ("l_adv", self.l_adv),
            ("l_disc", self.l_disc),
            ("beta", self.beta),
        ]
    }

    pub fn all_finite(&self) -> bool {
        self.values().iter().all(|(_, v)| v.is_finite())
    }
}

/// The three players.
#[derive(Clone, Debug)]
pub struct Models {
    pub imitator: Imitator,
    pub discriminator: Discriminator,
    pub classifier: Classifier,
}

impl Models {
    pub fn new(cfg: &TrainConfig, classes: usize) -> Result<Self> {
        let init = |k: u64| RngStream::derive(cfg.seed, &[INIT_TAG, k]);
        Ok(Self {
            imitator: Imitator::new(cfg.imitator.clone(), &mut init(0))?,
            discriminator: Discriminator::new(
                DiscriminatorConfig {
                    backbone: cfg.backbone.clone(),
                    ..DiscriminatorConfig::default()
                },
                &mut init(1),
            )?,
            classifier: Classifier::new(
                ClassifierConfig {
                    backbone: cfg.backbone.clone(),
                    ..ClassifierConfig::new(classes)
                },
                &mut init(2),
            )?,
        })
    }

    pub fn stores(&self) -> [&ParamStore; 3] {
        [
            self.imitator.params(),
            self.discriminator.params(),
            self.classifier.params(),
        ]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_checkpoint(path, &self.stores())
    }

    /// Builds fresh models for `cfg` and overwrites them from a checkpoint.
    pub fn load(path: &Path, cfg: &TrainConfig, classes: usize) -> Result<Self> {
        let records = read_checkpoint(path)?;
        let mut m = Self::new(cfg, classes)?;
        load_into(&records, m.imitator.params_mut())?;
        load_into(&records, m.discriminator.params_mut())?;
        load_into(&records, m.classifier.params_mut())?;
        Ok(m)
    }
}

/// Models plus optimizer state.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub models: Models,
    opt_imitator: Adam,
    opt_discriminator: Adam,
    opt_classifier: Adam,
}

struct Augmented {
    graph: Graph,
    bound: Bound,
    trace: ImitatorTrace,
    cloud: PointCloud,
}

fn mean_grads(store: &ParamStore, parts: Vec<GradStore>, n: usize) -> GradStore {
    let mut total = GradStore::zeros_like(store);
    for p in &parts {
        total.add(p);
    }
    total.scale(1.0 / n as f64);
    total
}

impl Trainer {
    pub fn new(cfg: TrainConfig, classes: usize) -> Result<Self> {
        cfg.validate()?;
        let models = Models::new(&cfg, classes)?;
        Ok(Self::from_models(cfg, models))
    }

    pub fn from_models(cfg: TrainConfig, models: Models) -> Self {
        Self {
            opt_imitator: Adam::new(models.imitator.params(), cfg.lr_imitator),
            opt_discriminator: Adam::new(models.discriminator.params(), cfg.lr_discriminator),
            opt_classifier: Adam::new(models.classifier.params(), cfg.lr_classifier),
            cfg,
            models,
        }
    }

    /// One co-training step on labelled clouds. `keys` identify the samples
    /// (their gumbel streams are derived from `(seed, epoch, key)`).
    pub fn train_step(&mut self, batch: &[&PointCloud], keys: &[u64], epoch: usize) -> Result<LossReport> {
        if batch.is_empty() || batch.len() != keys.len() {
            return Err(Error::invalid("train step needs a non-empty batch with one key per sample"));
        }
        let labels = batch
            .iter()
            .map(|c| c.label().ok_or_else(|| Error::invalid("training cloud without a label")))
            .collect::<Result<Vec<_>>>()?;
        let n = batch.len();
        let beta = beta_at(epoch, &self.cfg);
        let cfg = &self.cfg;
        let seed = cfg.seed;
        let opts = cfg.imitate_options();
        let mut report = LossReport {
            beta,
            samples: n,
            ..LossReport::default()
        };

        // Imitator forward, kept for the imitator update.
        let imitator = &self.models.imitator;
        let trains_imitator = cfg.trains_imitator();
        let augmented: Vec<Option<Augmented>> = if cfg.augments() {
            batch
                .par_iter()
                .zip(keys.par_iter())
                .map(|(cloud, &key)| {
                    let mut graph = Graph::new();
                    let bound = imitator.params().bind(&mut graph, trains_imitator);
                    let mut rng = RngStream::derive(seed, &[GUMBEL_TAG, epoch as u64, key]);
                    let trace = imitator.forward(&mut graph, &bound, cloud, opts, &mut rng)?;
                    let mut out = PointCloud::from_matrix(graph.value(trace.augmented))?;
                    out.set_label(cloud.label());
                    Ok(Some(Augmented {
                        graph,
                        bound,
                        trace,
                        cloud: out,
                    }))
                })
                .collect::<Result<_>>()?
        } else {
            (0..n).map(|_| None).collect()
        };
        let aug_cloud = |i: usize| -> &PointCloud { augmented[i].as_ref().map_or(batch[i], |a| &a.cloud) };

        // (1) discriminator: clean vs. imitated.
        if cfg.trains_discriminator() {
            let disc = &self.models.discriminator;
            let parts: Vec<(f64, GradStore)> = (0..n)
                .into_par_iter()
                .map(|i| {
                    let mut g = Graph::new();
                    let p = disc.params().bind(&mut g, true);
                    let clean = g.constant(batch[i].to_matrix());
                    let fake = g.constant(aug_cloud(i).to_matrix());
                    let dc = disc.forward(&mut g, &p, clean)?;
                    let da = disc.forward(&mut g, &p, fake)?;
                    let lc = neg_log_clamped(&mut g, dc);
                    let one_minus = g.scale(da, -1.0);
                    let one_minus = g.add_scalar(one_minus, 1.0);
                    let la = neg_log_clamped(&mut g, one_minus);
                    let sum = g.add(lc, la)?;
                    let loss = g.scale(sum, 0.5);
                    let grads = g.backward(loss)?;
                    let mut gs = GradStore::zeros_like(disc.params());
                    gs.accumulate(&p, &grads, 1.0);
                    Ok((g.value(loss).item(), gs))
                })
                .collect::<Result<_>>()?;
            let (losses, grads): (Vec<f64>, Vec<GradStore>) = parts.into_iter().unzip();
            report.l_disc = losses.iter().sum::<f64>() / n as f64;
            self.check_finite("l_disc", report.l_disc, keys)?;
            let grads = mean_grads(self.models.discriminator.params(), grads, n);
            self.opt_discriminator
                .step(self.models.discriminator.params_mut(), &grads);
        }

        // Classifier gradients against the pre-update classifier; the
        // augmented clouds enter as constants.
        let classifier = &self.models.classifier;
        let with_aug = cfg.augments();
        let cls_parts: Vec<(f64, f64, bool, GradStore)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut g = Graph::new();
                let p = classifier.params().bind(&mut g, true);
                let clean = g.constant(batch[i].to_matrix());
                let lo_clean = classifier.forward(&mut g, &p, clean)?;
                let ce_clean = g.cross_entropy(lo_clean, &[labels[i]])?;
                let lv = g.value(lo_clean).data();
                let pred = (0..lv.len()).fold(0, |b, j| if lv[j] > lv[b] { j } else { b });
                let (loss, ce_aug) = if with_aug {
                    let aug = g.constant(aug_cloud(i).to_matrix());
                    let lo_aug = classifier.forward(&mut g, &p, aug)?;
                    let ce_aug = g.cross_entropy(lo_aug, &[labels[i]])?;
                    let s = g.add(ce_clean, ce_aug)?;
                    (g.scale(s, 0.5), ce_aug)
                } else {
                    (ce_clean, ce_clean)
                };
                let grads = g.backward(loss)?;
                let mut gs = GradStore::zeros_like(classifier.params());
                gs.accumulate(&p, &grads, 1.0);
                Ok((g.value(ce_clean).item(), g.value(ce_aug).item(), pred == labels[i], gs))
            })
            .collect::<Result<_>>()?;
        let mut cls_grads = Vec::with_capacity(n);
        let mut lc_clean = Vec::with_capacity(n);
        for (c, a, ok, gs) in cls_parts {
            report.lc_clean += c / n as f64;
            report.lc_aug += a / n as f64;
            report.l_feed += feedback_loss(a, c, beta) / n as f64;
            report.correct += usize::from(ok);
            lc_clean.push(c);
            cls_grads.push(gs);
        }
        self.check_finite("lc_clean", report.lc_clean, keys)?;
        self.check_finite("lc_aug", report.lc_aug, keys)?;

        // (2) imitator against the updated discriminator and the frozen
        // classifier.
        if trains_imitator {
            let disc = &self.models.discriminator;
            let use_adv = cfg.use_adversarial;
            let use_feed = cfg.use_feedback;
            let lambda = cfg.lambda;
            let parts: Vec<(f64, f64, GradStore)> = augmented
                .into_par_iter()
                .enumerate()
                .map(|(i, a)| {
                    let Augmented {
                        mut graph,
                        bound,
                        trace,
                        ..
                    } = a.expect("augmented when training the imitator");
                    let g = &mut graph;
                    let mut terms = Vec::new();
                    let mut adv = 0.0;
                    if use_adv {
                        let cp = disc.params().bind(g, false);
                        let d = disc.forward(g, &cp, trace.augmented)?;
                        let l = neg_log_clamped(g, d);
                        adv = g.value(l).item();
                        terms.push(l);
                    }
                    if use_feed {
                        let cp = classifier.params().bind(g, false);
                        let lo = classifier.forward(g, &cp, trace.augmented)?;
                        let ce = g.cross_entropy(lo, &[labels[i]])?;
                        let f = feedback_var(g, ce, lc_clean[i], beta);
                        terms.push(g.scale(f, lambda));
                    }
                    let mut loss = terms[0];
                    for &t in &terms[1..] {
                        loss = g.add(loss, t)?;
                    }
                    let grads = g.backward(loss)?;
                    let mut gs = GradStore::zeros_like(imitator.params());
                    gs.accumulate(&bound, &grads, 1.0);
                    Ok((adv, g.value(loss).item(), gs))
                })
                .collect::<Result<_>>()?;
            let mut grads = Vec::with_capacity(n);
            let mut total = 0.0;
            for (adv, loss, gs) in parts {
                report.l_adv += adv / n as f64;
                total += loss / n as f64;
                grads.push(gs);
            }
            self.check_finite("l_adv", report.l_adv, keys)?;
            self.check_finite("imitator loss", total, keys)?;
            let grads = mean_grads(self.models.imitator.params(), grads, n);
            self.opt_imitator.step(self.models.imitator.params_mut(), &grads);
        }

        // (3) classifier.
        let grads = mean_grads(self.models.classifier.params(), cls_grads, n);
        if !grads.all_finite() {
            return Err(self.non_finite("classifier gradient", f64::NAN, keys));
        }
        self.opt_classifier.step(self.models.classifier.params_mut(), &grads);
        Ok(report)
    }

    fn check_finite(&self, what: &str, v: f64, keys: &[u64]) -> Result<()> {
        if v.is_finite() {
            Ok(())
        } else {
            Err(self.non_finite(what, v, keys))
        }
    }

    fn non_finite(&self, what: &str, v: f64, keys: &[u64]) -> Error {
        let [i, d, c] = self.models.stores();
        Error::NonFinite(format!(
            "{what} = {v} on batch samples {keys:?}; parameter norms: imitator {:.6e}, discriminator {:.6e}, classifier {:.6e}",
            i.l2_norm(),
            d.l2_norm(),
            c.l2_norm()
        ))
    }
}

/// Per-epoch means of the step reports.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lc_clean: f64,
    pub lc_aug: f64,
    pub l_feed: f64,
    pub l_adv: f64,
    pub l_disc: f64,
    pub beta: f64,
    pub train_acc: f64,
}

pub const METRICS_HEADER: &str = "epoch\tlc_clean\tlc_aug\tl_feed\tl_adv\tl_disc\tbeta\ttrain_acc";

impl EpochMetrics {
    fn from_reports(epoch: usize, reports: &[LossReport]) -> Self {
        let total: usize = reports.iter().map(|r| r.samples).sum();
        let w = |f: fn(&LossReport) -> f64| {
            reports.iter().map(|r| f(r) * r.samples as f64).sum::<f64>() / total.max(1) as f64
        };
        Self {
            epoch,
            lc_clean: w(|r| r.lc_clean),
            lc_aug: w(|r| r.lc_aug),
            l_feed: w(|r| r.l_feed),
            l_adv: w(|r| r.l_adv),
            l_disc: w(|r| r.l_disc),
            beta: reports.first().map_or(0.0, |r| r.beta),
            train_acc: reports.iter().map(|r| r.correct).sum::<usize>() as f64 / total.max(1) as f64,
        }
    }

    pub fn tsv_line(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.4}\t{:.4}",
            self.epoch, self.lc_clean, self.lc_aug, self.l_feed, self.l_adv, self.l_disc, self.beta, self.train_acc
        )
    }
}

/// Result of [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub models: Models,
    pub history: Vec<EpochMetrics>,
    pub checkpoints: Vec<PathBuf>,
}

pub fn checkpoint_name(epoch: usize) -> String {
    format!("epoch_{epoch:03}.ckpt")
}

pub const METRICS_FILE: &str = "metrics.tsv";

/// Runs `cfg.epochs` epochs over the training split. With `out_dir`, writes
/// `epoch_000.ckpt` (initial weights), one checkpoint per finished epoch and
/// `metrics.tsv`.
pub fn train(dataset: &Dataset, cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    if dataset.train.is_empty() {
        return Err(Error::invalid("dataset has no training samples"));
    }
    let mut trainer = Trainer::new(cfg.clone(), dataset.num_classes())?;
    let mut checkpoints = Vec::new();
    let mut log = String::from(METRICS_HEADER);
    log.push('\n');
    let save = |trainer: &Trainer, epoch: usize, log: &str, checkpoints: &mut Vec<PathBuf>| -> Result<()> {
        if let Some(dir) = out_dir {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(checkpoint_name(epoch));
            trainer.models.save(&path)?;
            checkpoints.push(path);
            let mpath = dir.join(METRICS_FILE);
            fs::write(&mpath, log).map_err(|e| Error::io(&mpath, e))?;
        }
        Ok(())
    };
    save(&trainer, 0, &log, &mut checkpoints)?;

    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..dataset.train.len()).collect();
        RngStream::derive(cfg.seed, &[SHUFFLE_TAG, epoch as u64]).shuffle(&mut order);
        let mut reports = Vec::new();
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&PointCloud> = chunk.iter().map(|&i| &dataset.train[i]).collect();
            let keys: Vec<u64> = chunk.iter().map(|&i| i as u64).collect();
            reports.push(trainer.train_step(&batch, &keys, epoch)?);
        }
        let m = EpochMetrics::from_reports(epoch, &reports);
        log::info!("{}", m.tsv_line());
        let _ = writeln!(log, "{}", m.tsv_line());
        history.push(m);
        save(&trainer, epoch + 1, &log, &mut checkpoints)?;
    }
    Ok(TrainOutcome {
        models: trainer.models,
        history,
        checkpoints,
    })
}
