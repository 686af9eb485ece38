//! Sample-adaptive corruption imitator.
//!
//! A single set-abstraction level encodes the cloud. The deformation
//! controller pools features around `M` anchors, mixes them with attention
//! and predicts a scale/rotation/translation per anchor. The mask controller
//! interpolates the features back to every point, mixes them with attention
//! and samples a keep/drop decision per point with gumbel-softmax.

use crate::error::{Error, Result};
use crate::geom::{fps, knn_points, IdwWeights, Point, PointCloud};
use crate::matrix::Matrix;
use crate::nn::functional::{gumbel_noise, gumbel_softmax_soft, one_hot_argmax};
use crate::nn::{Bound, Graph, Init, Mlp, MlpSpec, MultiHeadAttention, ParamStore, Var};
use crate::rng::RngStream;
use crate::simulator::{
    apply_mask_multiply, fuse_anchor_sets, fusion_weights, per_anchor_deform, DeformVars, FusionConfig,
};

pub const PREFIX: &str = "imitator";

#[derive(Clone, Debug, PartialEq)]
pub struct ImitatorConfig {
    pub n_points: usize,
    pub n_sampled: usize,
    pub anchors: usize,
    pub width: usize,
    pub neighbors: usize,
    pub heads: usize,
    pub tau: f64,
    pub s_max: f64,
    pub theta_max: f64,
    pub t_max: f64,
    /// Largest fraction of points a hard mask may drop.
    pub mask_budget: f64,
    /// Initial bias of the keep logit.
    pub keep_bias: f64,
    pub fusion: FusionConfig,
}

impl Default for ImitatorConfig {
    fn default() -> Self {
        Self {
            n_points: 256,
            n_sampled: 64,
            anchors: 4,
            width: 32,
            neighbors: 8,
            heads: 4,
            tau: 1.0,
            s_max: 2.0,
            theta_max: std::f64::consts::FRAC_PI_6,
            t_max: 0.25,
            mask_budget: 0.5,
            keep_bias: 3.0,
            fusion: FusionConfig::default(),
        }
    }
}

impl ImitatorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.anchors == 0 || self.anchors > self.n_sampled || self.n_sampled > self.n_points {
            return bad(format!(
                "need 1 <= anchors ({}) <= sampled ({}) <= points ({})",
                self.anchors, self.n_sampled, self.n_points
            ));
        }
        if self.neighbors == 0 || self.neighbors > self.n_sampled {
            return bad(format!("neighbors {} must be in 1..={}", self.neighbors, self.n_sampled));
        }
        if self.n_sampled < 3 {
            return bad("at least 3 sampled points are needed for interpolation".into());
        }
        if self.heads == 0 || self.width % self.heads != 0 {
            return bad(format!("width {} not divisible by heads {}", self.width, self.heads));
        }
        if !(self.s_max > 1.0) || !(self.theta_max > 0.0) || !(self.t_max > 0.0) || !(self.tau > 0.0) {
            return bad("s_max must exceed 1; theta_max, t_max and tau must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.mask_budget) {
            return bad(format!("mask budget {} outside [0, 1]", self.mask_budget));
        }
        self.fusion.validate()
    }

    fn max_drops(&self, n: usize) -> usize {
        (self.mask_budget * n as f64 + 1e-9).floor() as usize
    }
}

/// Raw head outputs and their physical values, each `[M × 3]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformationParams {
    pub raw_scale: Matrix,
    pub raw_rotation: Matrix,
    pub raw_translation: Matrix,
    pub scale: Matrix,
    pub angles: Matrix,
    pub offset: Matrix,
}

impl DeformationParams {
    pub fn identity(m: usize) -> Self {
        Self {
            raw_scale: Matrix::filled(m, 3, 0.5),
            raw_rotation: Matrix::zeros(m, 3),
            raw_translation: Matrix::zeros(m, 3),
            scale: Matrix::filled(m, 3, 1.0),
            angles: Matrix::zeros(m, 3),
            offset: Matrix::zeros(m, 3),
        }
    }

    /// Largest absolute difference over every raw and mapped entry.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let pairs = [
            (&self.raw_scale, &other.raw_scale),
            (&self.raw_rotation, &other.raw_rotation),
            (&self.raw_translation, &other.raw_translation),
            (&self.scale, &other.scale),
            (&self.angles, &other.angles),
            (&self.offset, &other.offset),
        ];
        pairs
            .iter()
            .flat_map(|(a, b)| a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }
}

/// Per-point keep values. `keep_prob` is the relaxed keep channel.
#[derive(Clone, Debug, PartialEq)]
pub struct PointMask {
    pub values: Vec<f64>,
    pub keep_prob: Vec<f64>,
    pub hard: bool,
}

impl PointMask {
    pub fn keep_all(n: usize) -> Self {
        Self {
            values: vec![1.0; n],
            keep_prob: vec![1.0; n],
            hard: true,
        }
    }

    pub fn drop_fraction(&self) -> f64 {
        self.values.iter().filter(|&&v| v < 0.5).count() as f64 / self.values.len().max(1) as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ImitateOptions {
    pub hard_mask: bool,
    pub use_deformation: bool,
    pub use_mask: bool,
}

impl Default for ImitateOptions {
    fn default() -> Self {
        Self {
            hard_mask: true,
            use_deformation: true,
            use_mask: true,
        }
    }
}

impl ImitateOptions {
    pub fn is_identity(&self) -> bool {
        !self.use_deformation && !self.use_mask
    }
}

/// Sampled centers and their encoded features.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub centers: Vec<Point>,
    pub feats: Var,
}

/// Graph handles of the deformation prediction.
#[derive(Clone, Copy, Debug)]
pub struct DeformHeads {
    pub raw_scale: Var,
    pub raw_rotation: Var,
    pub raw_translation: Var,
    pub mapped: DeformVars,
}

/// Graph handles of the mask prediction.
#[derive(Clone, Copy, Debug)]
pub struct MaskHeads {
    pub logits: Var,
    /// Relaxed `[N × 2]` keep/drop sample.
    pub soft: Var,
    /// `[N × 1]` keep channel (hard values in hard mode).
    pub mask: Var,
}

/// Everything produced by one forward pass.
#[derive(Clone, Debug)]
pub struct ImitatorTrace {
    pub augmented: Var,
    /// Output before the mask is applied.
    pub deformed: Var,
    pub anchors: Vec<Point>,
    pub deform: Option<DeformHeads>,
    pub mask: Option<MaskHeads>,
}

impl ImitatorTrace {
    pub fn deformation(&self, g: &Graph, m: usize) -> DeformationParams {
        match &self.deform {
            None => DeformationParams::identity(m),
            Some(d) => DeformationParams {
                raw_scale: g.value(d.raw_scale).clone(),
                raw_rotation: g.value(d.raw_rotation).clone(),
                raw_translation: g.value(d.raw_translation).clone(),
                scale: g.value(d.mapped.scale).clone(),
                angles: g.value(d.mapped.angles).clone(),
                offset: g.value(d.mapped.offset).clone(),
            },
        }
    }

    pub fn point_mask(&self, g: &Graph, n: usize, hard: bool) -> PointMask {
        match &self.mask {
            None => PointMask::keep_all(n),
            Some(h) => {
                let soft = g.value(h.soft);
                PointMask {
                    values: g.value(h.mask).data().to_vec(),
                    keep_prob: (0..soft.rows()).map(|r| soft.get(r, 0)).collect(),
                    hard,
                }
            }
        }
    }
}

/// Result of [`Imitator::imitate`].
#[derive(Clone, Debug)]
pub struct Imitation {
    /// Deformed and masked (masked points multiplied to the origin).
    pub cloud: PointCloud,
    /// Deformed only.
    pub deformed: PointCloud,
    pub deformation: DeformationParams,
    pub mask: PointMask,
}

#[derive(Clone, Debug)]
pub struct Imitator {
    cfg: ImitatorConfig,
    params: ParamStore,
    extractor: Mlp,
    phi_local: Mlp,
    anchor_attn: MultiHeadAttention,
    phi_global: Mlp,
    head_scale: Mlp,
    head_rotation: Mlp,
    head_translation: Mlp,
    point_attn: MultiHeadAttention,
    point_global: Mlp,
    mask_head: Mlp,
}

impl Imitator {
    /// Prediction heads end in zero-initialised layers, so a fresh imitator
    /// applies the identity deformation.
    pub fn new(cfg: ImitatorConfig, rng: &mut RngStream) -> Result<Self> {
        Self::build(cfg, Init::Zeros, rng)
    }

    /// Same architecture with small random final layers.
    pub fn with_random_heads(cfg: ImitatorConfig, rng: &mut RngStream) -> Result<Self> {
        Self::build(cfg, Init::FanIn(1.0), rng)
    }

    fn build(cfg: ImitatorConfig, head_init: Init, rng: &mut RngStream) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.width;
        let mut s = ParamStore::new();
        let name = |part: &str| format!("{PREFIX}.{part}");
        let extractor = Mlp::new(
            &mut s,
            &name("encoder.mlp"),
            MlpSpec::new(&[6, c, c]).layer_norm(true).activate_last(true),
            rng,
        )?;
        let phi_local = Mlp::new(
            &mut s,
            &name("deform.phi_local"),
            MlpSpec::new(&[c, c]).layer_norm(true).activate_last(true),
            rng,
        )?;
        let anchor_attn = MultiHeadAttention::new(&mut s, &name("deform.attn"), c, cfg.heads, rng)?;
        let phi_global = Mlp::new(
            &mut s,
            &name("deform.phi_global"),
            MlpSpec::new(&[c, c]).layer_norm(true).activate_last(true),
            rng,
        )?;
        let head = |s: &mut ParamStore, part: &str, rng: &mut RngStream| {
            Mlp::new(
                s,
                &name(part),
                MlpSpec::new(&[2 * c, c, 3]).layer_norm(true).last_init(head_init),
                rng,
            )
        };
        let head_scale = head(&mut s, "deform.head_sca", rng)?;
        let head_rotation = head(&mut s, "deform.head_rot", rng)?;
        let head_translation = head(&mut s, "deform.head_trl", rng)?;
        let point_attn = MultiHeadAttention::new(&mut s, &name("mask.attn"), c, cfg.heads, rng)?;
        let point_global = Mlp::new(
            &mut s,
            &name("mask.phi_global"),
            MlpSpec::new(&[c, c]).layer_norm(true).activate_last(true),
            rng,
        )?;
        let mask_head = Mlp::new(
            &mut s,
            &name("mask.head"),
            MlpSpec::new(&[2 * c, c, 2]).layer_norm(true).last_init(head_init),
            rng,
        )?;
        let bias = mask_head.last().b;
        s.get_mut(bias).value.data_mut()[0] += cfg.keep_bias;
        Ok(Self {
            cfg,
            params: s,
            extractor,
            phi_local,
            anchor_attn,
            phi_global,
            head_scale,
            head_rotation,
            head_translation,
            point_attn,
            point_global,
            mask_head,
        })
    }

    pub fn config(&self) -> &ImitatorConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn check_cloud(&self, cloud: &PointCloud) -> Result<()> {
        if cloud.len() < self.cfg.n_sampled {
            return Err(Error::invalid(format!(
                "cloud has {} points, fewer than the {} sampled centers",
                cloud.len(),
                self.cfg.n_sampled
            )));
        }
        Ok(())
    }

    /// One set-abstraction level with the FPS start at index 0.
    pub fn extract_features(&self, g: &mut Graph, p: &Bound, cloud: &PointCloud) -> Result<Encoded> {
        self.extract_features_from(g, p, cloud, 0)
    }

    pub fn extract_features_from(
        &self,
        g: &mut Graph,
        p: &Bound,
        cloud: &PointCloud,
        start: usize,
    ) -> Result<Encoded> {
        self.check_cloud(cloud)?;
        let k = self.cfg.neighbors.min(cloud.len());
        let idx = fps(cloud, self.cfg.n_sampled, start)?;
        let centers: Vec<Point> = idx.iter().map(|&i| cloud.point(i)).collect();
        let nb = knn_points(&centers, cloud.points(), k)?;
        let mut input = Matrix::zeros(centers.len() * k, 6);
        for (ci, c) in centers.iter().enumerate() {
            for (t, &j) in nb.row(ci).iter().enumerate() {
                let q = cloud.point(j);
                let row = input.row_mut(ci * k + t);
                row[..3].copy_from_slice(&[q[0] - c[0], q[1] - c[1], q[2] - c[2]]);
                row[3..].copy_from_slice(c);
            }
        }
        let x = g.constant(input);
        let h = self.extractor.forward(g, p, x)?;
        let feats = g.max_pool_groups(h, k)?;
        Ok(Encoded { centers, feats })
    }

    pub fn select_anchors(cloud: &PointCloud, m: usize) -> Result<Vec<Point>> {
        Ok(fps(cloud, m, 0)?.into_iter().map(|i| cloud.point(i)).collect())
    }

    /// `H`: per anchor, max over its `K` nearest centers of `Φ(F)`.
    pub fn aggregate_anchor_features(
        &self,
        g: &mut Graph,
        p: &Bound,
        anchors: &[Point],
        enc: &Encoded,
    ) -> Result<Var> {
        let k = self.cfg.neighbors.min(enc.centers.len());
        let nb = knn_points(anchors, &enc.centers, k)?;
        let phi = self.phi_local.forward(g, p, enc.feats)?;
        let grouped = g.gather_rows(phi, &nb.idx)?;
        g.max_pool_groups(grouped, k)
    }

    pub fn cross_anchor_interaction(&self, g: &mut Graph, p: &Bound, h: Var, anchors: &[Point]) -> Result<Var> {
        self.anchor_attn.forward(g, p, h, &points_matrix(anchors))
    }

    /// `g = max_i φ(h_i)`.
    pub fn global_anchor_feature(&self, g: &mut Graph, p: &Bound, h: Var) -> Result<Var> {
        let e = self.phi_global.forward(g, p, h)?;
        g.max_pool_rows(e)
    }

    pub fn predict_deformation(&self, g: &mut Graph, p: &Bound, h_prime: Var, global: Var) -> Result<DeformHeads> {
        let m = g.shape(h_prime).0;
        let gb = g.broadcast_rows(global, m)?;
        let x = g.concat_cols(&[h_prime, gb])?;
        let a = self.head_scale.forward(g, p, x)?;
        let raw_scale = g.sigmoid(a);
        let b = self.head_rotation.forward(g, p, x)?;
        let raw_rotation = g.tanh(b);
        let c = self.head_translation.forward(g, p, x)?;
        let raw_translation = g.tanh(c);

        let ln_s = self.cfg.s_max.ln();
        let e = g.scale(raw_scale, 2.0 * ln_s);
        let e = g.add_scalar(e, -ln_s);
        let scale = g.exp(e);
        let angles = g.scale(raw_rotation, self.cfg.theta_max);
        let offset = g.scale(raw_translation, self.cfg.t_max);
        Ok(DeformHeads {
            raw_scale,
            raw_rotation,
            raw_translation,
            mapped: DeformVars { scale, angles, offset },
        })
    }

    /// Three-neighbour inverse-distance interpolation of center features.
    pub fn upsample_point_features(&self, g: &mut Graph, enc: &Encoded, cloud: &PointCloud) -> Result<Var> {
        let w = IdwWeights::compute(&enc.centers, cloud.points(), 3)?;
        let w = g.constant(w.to_dense());
        g.matmul(w, enc.feats)
    }

    pub fn cross_point_interaction(&self, g: &mut Graph, p: &Bound, e: Var, cloud: &PointCloud) -> Result<Var> {
        self.point_attn.forward(g, p, e, &cloud.to_matrix())
    }

    /// Keep/drop logits followed by gumbel-softmax with the given noise.
    /// In hard mode at most `mask_budget · N` points are dropped: the most
    /// confident drops are kept and the rest restored.
    pub fn predict_mask(
        &self,
        g: &mut Graph,
        p: &Bound,
        e_prime: Var,
        noise: &Matrix,
        hard: bool,
    ) -> Result<MaskHeads> {
        let n = g.shape(e_prime).0;
        let z = self.point_global.forward(g, p, e_prime)?;
        let z = g.max_pool_rows(z)?;
        let zb = g.broadcast_rows(z, n)?;
        let x = g.concat_cols(&[e_prime, zb])?;
        let logits = self.mask_head.forward(g, p, x)?;
        let soft = gumbel_softmax_soft(g, logits, noise, self.cfg.tau)?;
        let chosen = if hard {
            let sv = g.value(soft);
            let mut onehot = one_hot_argmax(sv);
            let mut dropped: Vec<usize> = (0..n).filter(|&r| onehot.get(r, 0) == 0.0).collect();
            let budget = self.cfg.max_drops(n);
            if dropped.len() > budget {
                dropped.sort_by(|&a, &b| sv.get(a, 0).total_cmp(&sv.get(b, 0)).then(a.cmp(&b)));
                for &r in &dropped[budget..] {
                    onehot.set(r, 0, 1.0);
                    onehot.set(r, 1, 0.0);
                }
            }
            g.straight_through(soft, onehot)?
        } else {
            soft
        };
        let mask = g.slice_cols(chosen, 0, 1)?;
        Ok(MaskHeads { logits, soft, mask })
    }

    /// Full pipeline on `g`. Gumbel noise is drawn from `rng` only when the
    /// mask is enabled.
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        cloud: &PointCloud,
        opts: ImitateOptions,
        rng: &mut RngStream,
    ) -> Result<ImitatorTrace> {
        let noise = if opts.use_mask {
            Some(gumbel_noise((cloud.len(), 2), rng))
        } else {
            None
        };
        self.forward_with_noise(g, p, cloud, opts, noise.as_ref())
    }

    /// As [`Imitator::forward`] with explicit `[N × 2]` gumbel noise.
    pub fn forward_with_noise(
        &self,
        g: &mut Graph,
        p: &Bound,
        cloud: &PointCloud,
        opts: ImitateOptions,
        noise: Option<&Matrix>,
    ) -> Result<ImitatorTrace> {
        self.check_cloud(cloud)?;
        let anchors = Self::select_anchors(cloud, self.cfg.anchors)?;
        let input = g.constant(cloud.to_matrix());
        if opts.is_identity() {
            return Ok(ImitatorTrace {
                augmented: input,
                deformed: input,
                anchors,
                deform: None,
                mask: None,
            });
        }
        let enc = self.extract_features(g, p, cloud)?;

        let mut out = input;
        let mut deform = None;
        if opts.use_deformation {
            let h = self.aggregate_anchor_features(g, p, &anchors, &enc)?;
            let h_prime = self.cross_anchor_interaction(g, p, h, &anchors)?;
            let global = self.global_anchor_feature(g, p, h)?;
            let heads = self.predict_deformation(g, p, h_prime, global)?;
            let sets = per_anchor_deform(g, input, &anchors, &heads.mapped)?;
            let (w, _) = fusion_weights(cloud.points(), &anchors, &self.cfg.fusion)?;
            out = fuse_anchor_sets(g, &sets, &w)?;
            deform = Some(heads);
        }
        let deformed = out;
        let mut mask = None;
        if opts.use_mask {
            let noise = noise.ok_or_else(|| Error::invalid("mask enabled but no gumbel noise given"))?;
            if noise.shape() != (cloud.len(), 2) {
                return Err(Error::shape("predict_mask", format!("noise {:?}", noise.shape())));
            }
            let e = self.upsample_point_features(g, &enc, cloud)?;
            let e_prime = self.cross_point_interaction(g, p, e, cloud)?;
            let heads = self.predict_mask(g, p, e_prime, noise, opts.hard_mask)?;
            out = apply_mask_multiply(g, out, heads.mask)?;
            mask = Some(heads);
        }
        Ok(ImitatorTrace {
            augmented: out,
            deformed,
            anchors,
            deform,
            mask,
        })
    }

    /// Runs the imitator without gradients and returns plain values.
    pub fn imitate(&self, cloud: &PointCloud, opts: ImitateOptions, rng: &mut RngStream) -> Result<Imitation> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let trace = self.forward(&mut g, &p, cloud, opts, rng)?;
        let mut out = PointCloud::from_matrix(g.value(trace.augmented))?;
        out.set_label(cloud.label());
        let mut deformed = PointCloud::from_matrix(g.value(trace.deformed))?;
        deformed.set_label(cloud.label());
        Ok(Imitation {
            cloud: out,
            deformed,
            deformation: trace.deformation(&g, self.cfg.anchors),
            mask: trace.point_mask(&g, cloud.len(), opts.hard_mask),
        })
    }
}

pub(crate) fn points_matrix(points: &[Point]) -> Matrix {
    Matrix::from_vec(points.len(), 3, points.iter().flatten().copied().collect()).expect("n×3")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::normalize_unit_sphere;
    use crate::nn::{gradcheck_params, GradStore, GradcheckConfig};

    fn small_cfg() -> ImitatorConfig {
        ImitatorConfig {
            n_points: 48,
            n_sampled: 16,
            anchors: 3,
            width: 8,
            neighbors: 4,
            heads: 2,
            ..ImitatorConfig::default()
        }
    }

    fn cloud(n: usize, seed: u64) -> PointCloud {
        let mut r = RngStream::new(seed, 11);
        normalize_unit_sphere(
            &PointCloud::new((0..n).map(|_| [r.normal(), 0.5 * r.normal(), r.normal()]).collect()).unwrap(),
        )
    }

    #[test]
    fn config_validation() {
        assert!(ImitatorConfig::default().validate().is_ok());
        let bad = ImitatorConfig {
            heads: 5,
            ..ImitatorConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = ImitatorConfig {
            anchors: 100,
            ..ImitatorConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn fresh_imitator_without_mask_is_identity() {
        let imi = Imitator::new(ImitatorConfig::default(), &mut RngStream::new(1, 0)).unwrap();
        let c = cloud(256, 2);
        let opts = ImitateOptions {
            use_mask: false,
            ..ImitateOptions::default()
        };
        let out = imi.imitate(&c, opts, &mut RngStream::new(0, 0)).unwrap();
        for (p, q) in c.points().iter().zip(out.cloud.points()) {
            for k in 0..3 {
                assert!((p[k] - q[k]).abs() <= 1e-9);
            }
        }
        assert_eq!(out.deformation, DeformationParams::identity(4));
    }

    #[test]
    fn shapes_and_ranges() {
        let cfg = small_cfg();
        let imi = Imitator::with_random_heads(cfg.clone(), &mut RngStream::new(3, 0)).unwrap();
        let c = cloud(48, 4);
        let out = imi.imitate(&c, ImitateOptions::default(), &mut RngStream::new(0, 1)).unwrap();
        assert_eq!(out.cloud.len(), 48);
        let d = &out.deformation;
        assert_eq!(d.scale.shape(), (3, 3));
        for &s in d.scale.data() {
            assert!(s >= 1.0 / cfg.s_max && s <= cfg.s_max);
        }
        for &u in d.raw_scale.data() {
            assert!(u > 0.0 && u < 1.0);
        }
        for &a in d.angles.data() {
            assert!(a.abs() <= cfg.theta_max);
        }
        for &t in d.offset.data() {
            assert!(t.abs() <= cfg.t_max);
        }
        assert!(out.mask.values.iter().all(|&v| v == 0.0 || v == 1.0));
        assert!(out.mask.drop_fraction() <= cfg.mask_budget);
    }

    #[test]
    fn mask_budget_is_enforced() {
        let cfg = ImitatorConfig {
            mask_budget: 0.25,
            keep_bias: -8.0,
            ..small_cfg()
        };
        let imi = Imitator::new(cfg, &mut RngStream::new(5, 0)).unwrap();
        let c = cloud(48, 6);
        let out = imi.imitate(&c, ImitateOptions::default(), &mut RngStream::new(0, 2)).unwrap();
        assert_eq!(out.mask.values.iter().filter(|&&v| v == 0.0).count(), 12);
        let cut = out
            .mask
            .values
            .iter()
            .zip(&out.mask.keep_prob)
            .filter(|(v, _)| **v == 0.0)
            .map(|(_, p)| *p)
            .fold(0.0, f64::max);
        for (v, p) in out.mask.values.iter().zip(&out.mask.keep_prob) {
            if *v == 1.0 && *p < 0.5 {
                assert!(*p >= cut);
            }
        }
    }

    #[test]
    fn large_keep_logit_keeps_everything() {
        let cfg = ImitatorConfig {
            keep_bias: 60.0,
            ..small_cfg()
        };
        let imi = Imitator::new(cfg, &mut RngStream::new(5, 0)).unwrap();
        let out = imi.imitate(&cloud(48, 7), ImitateOptions::default(), &mut RngStream::new(0, 3)).unwrap();
        assert!(out.mask.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn soft_mask_rows_sum_to_one() {
        let imi = Imitator::with_random_heads(small_cfg(), &mut RngStream::new(8, 0)).unwrap();
        let c = cloud(48, 9);
        let mut g = Graph::new();
        let p = imi.params().bind(&mut g, false);
        let opts = ImitateOptions {
            hard_mask: false,
            use_deformation: false,
            use_mask: true,
        };
        let t = imi.forward(&mut g, &p, &c, opts, &mut RngStream::new(1, 1)).unwrap();
        let soft = g.value(t.mask.unwrap().soft);
        for r in 0..soft.rows() {
            assert!((soft.get(r, 0) + soft.get(r, 1) - 1.0).abs() <= 1e-12);
            assert!(soft.get(r, 0) > 0.0 && soft.get(r, 0) < 1.0);
        }
    }

    #[test]
    fn features_ignore_point_order() {
        let imi = Imitator::with_random_heads(small_cfg(), &mut RngStream::new(10, 0)).unwrap();
        let c = cloud(48, 12);
        let mut perm: Vec<usize> = (0..48).collect();
        RngStream::new(0, 9).shuffle(&mut perm);
        let shuffled = c.select(&perm);
        let start = perm.iter().position(|&i| i == 0).unwrap();
        let mut g = Graph::new();
        let p = imi.params().bind(&mut g, false);
        let a = imi.extract_features(&mut g, &p, &c).unwrap();
        let b = imi.extract_features_from(&mut g, &p, &shuffled, start).unwrap();
        assert_eq!(a.centers, b.centers);
        let (fa, fb) = (g.value(a.feats), g.value(b.feats));
        assert_eq!(fa.shape(), (16, 8));
        for (x, y) in fa.data().iter().zip(fb.data()) {
            assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn coincident_points_give_identical_features() {
        let imi = Imitator::with_random_heads(small_cfg(), &mut RngStream::new(10, 0)).unwrap();
        let c = PointCloud::new(vec![[0.2, -0.1, 0.3]; 48]).unwrap();
        let mut g = Graph::new();
        let p = imi.params().bind(&mut g, false);
        let f = imi.extract_features(&mut g, &p, &c).unwrap();
        let f = g.value(f.feats);
        for r in 1..f.rows() {
            assert_eq!(f.row(r), f.row(0));
        }
    }

    #[test]
    fn global_feature_is_rowwise_max() {
        let imi = Imitator::with_random_heads(small_cfg(), &mut RngStream::new(13, 0)).unwrap();
        let mut g = Graph::new();
        let p = imi.params().bind(&mut g, false);
        let mut r = RngStream::new(1, 2);
        let h = g.constant(Matrix::from_vec(3, 8, (0..24).map(|_| r.normal()).collect()).unwrap());
        let gv = imi.global_anchor_feature(&mut g, &p, h).unwrap();
        let e = imi.phi_global.forward(&mut g, &p, h).unwrap();
        let (gv, e) = (g.value(gv).clone(), g.value(e).clone());
        for j in 0..8 {
            let m = (0..3).map(|i| e.get(i, j)).fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(gv.get(0, j), m);
        }
    }

    #[test]
    fn scale_mapping_limits() {
        let imi = Imitator::new(small_cfg(), &mut RngStream::new(1, 0)).unwrap();
        let mut g = Graph::new();
        let p = imi.params().bind(&mut g, false);
        let h = g.constant(Matrix::zeros(3, 8));
        let gl = g.constant(Matrix::zeros(1, 8));
        let d = imi.predict_deformation(&mut g, &p, h, gl).unwrap();
        assert!(g.value(d.mapped.scale).data().iter().all(|&s| s == 1.0));
        assert!(g.value(d.mapped.angles).data().iter().all(|&s| s == 0.0));
        let ln = 2f64.ln();
        for (u, want) in [(1.0 - 1e-12, 2.0), (1e-12, 0.5)] {
            assert!(((2.0 * u - 1.0) * ln).exp() - want < 1e-9);
        }
    }

    #[test]
    fn different_shapes_get_different_deformations() {
        let imi = Imitator::with_random_heads(small_cfg(), &mut RngStream::new(14, 0)).unwrap();
        let mut r = RngStream::new(3, 3);
        let sphere: Vec<Point> = (0..48)
            .map(|_| {
                let v = [r.normal(), r.normal(), r.normal()];
                let n = crate::geom::norm(&v);
                [v[0] / n, v[1] / n, v[2] / n]
            })
            .collect();
        let bx: Vec<Point> = (0..48)
            .map(|_| [r.uniform_range(-1.0, 1.0), r.uniform_range(-0.1, 0.1), r.uniform_range(-0.2, 0.2)])
            .collect();
        let opts = ImitateOptions {
            use_mask: false,
            ..ImitateOptions::default()
        };
        let a = imi.imitate(&PointCloud::new(sphere).unwrap(), opts, &mut RngStream::new(0, 0)).unwrap();
        let b = imi.imitate(&normalize_unit_sphere(&PointCloud::new(bx).unwrap()), opts, &mut RngStream::new(0, 0))
            .unwrap();
        assert!(a.deformation.max_abs_diff(&b.deformation) > 0.0);
    }

    #[test]
    fn loss_through_imitate_gradcheck() {
        let cfg = small_cfg();
        let mut imi = Imitator::with_random_heads(cfg, &mut RngStream::new(15, 0)).unwrap();
        let c = cloud(48, 16);
        let noise = gumbel_noise((48, 2), &mut RngStream::new(2, 2));
        let mut r = RngStream::new(4, 4);
        let target = Matrix::from_vec(48, 3, (0..144).map(|_| r.normal()).collect()).unwrap();
        let opts = ImitateOptions {
            hard_mask: false,
            ..ImitateOptions::default()
        };
        let this = imi.clone();
        let rep = gradcheck_params(
            imi.params_mut(),
            |store| {
                let mut g = Graph::new();
                let p = store.bind(&mut g, true);
                let t = this.forward_with_noise(&mut g, &p, &c, opts, Some(&noise))?;
                let tv = g.constant(target.clone());
                let prod = g.mul(t.augmented, tv)?;
                let loss = g.sum_all(prod);
                Ok((g, loss, p))
            },
            GradcheckConfig {
                max_coords: 12,
                ..GradcheckConfig::default()
            },
            &mut RngStream::new(0, 5),
        )
        .unwrap();
        assert!(rep.max_rel_err <= 1e-4, "{rep:?}");
    }

    #[test]
    fn every_parameter_receives_gradient() {
        let imi = Imitator::with_random_heads(small_cfg(), &mut RngStream::new(17, 0)).unwrap();
        let c = cloud(48, 18);
        let mut g = Graph::new();
        let p = imi.params().bind(&mut g, true);
        let opts = ImitateOptions::default();
        let t = imi.forward(&mut g, &p, &c, opts, &mut RngStream::new(3, 3)).unwrap();
        let mut r = RngStream::new(5, 5);
        let tv = g.constant(Matrix::from_vec(48, 3, (0..144).map(|_| r.normal()).collect()).unwrap());
        let prod = g.mul(t.augmented, tv).unwrap();
        let loss = g.sum_all(prod);
        let grads = g.backward(loss).unwrap();
        let mut gs = GradStore::zeros_like(imi.params());
        gs.accumulate(&p, &grads, 1.0);
        for (id, param) in imi.params().iter() {
            assert!(gs.get(id).max_abs() > 0.0, "{} has no gradient", param.name);
        }
    }
}
