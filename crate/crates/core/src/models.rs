//! Reference perception networks: a two-level set-abstraction classifier
//! and a discriminator with the same backbone and a sigmoid output.
//!
//! Grouping indices come from FPS and kNN on the input coordinates. They
//! are treated as constants under differentiation, while the grouped
//! coordinates themselves are gathered from the input variable so that
//! gradients reach whatever produced the cloud.

use crate::error::{Error, Result};
use crate::geom::{canonical_start, fps_points, knn_points, Point, PointCloud};
use crate::matrix::Matrix;
use crate::nn::{Bound, Graph, Init, Mlp, MlpSpec, ParamStore, Var};
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneConfig {
    pub n_points: usize,
    /// Centers of the two set-abstraction levels.
    pub centers: [usize; 2],
    pub neighbors: usize,
    pub widths: [usize; 2],
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            n_points: 256,
            centers: [128, 32],
            neighbors: 16,
            widths: [32, 64],
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        let [c1, c2] = self.centers;
        if !(c1 <= self.n_points && c2 < c1 && c2 >= 1) {
            return Err(Error::Config(format!(
                "set-abstraction centers must decrease: {} -> {c1} -> {c2}",
                self.n_points
            )));
        }
        if self.neighbors == 0 || self.neighbors > c2.min(c1) {
            return Err(Error::Config(format!("neighbors {} out of range", self.neighbors)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierConfig {
    pub backbone: BackboneConfig,
    pub hidden: usize,
    pub classes: usize,
}

impl ClassifierConfig {
    pub fn new(classes: usize) -> Self {
        Self {
            backbone: BackboneConfig::default(),
            hidden: 32,
            classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.classes)));
        }
        self.backbone.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorConfig {
    pub backbone: BackboneConfig,
    pub hidden: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneConfig::default(),
            hidden: 32,
        }
    }
}

/// Frozen grouping decisions of one backbone pass.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grouping {
    centers1: Vec<usize>,
    nb1: Vec<usize>,
    centers2: Vec<usize>,
    nb2: Vec<usize>,
}

fn repeat_each(idx: &[usize], k: usize) -> Vec<usize> {
    idx.iter().flat_map(|&i| std::iter::repeat(i).take(k)).collect()
}

fn rows_as_points(m: &Matrix) -> Vec<Point> {
    (0..m.rows()).map(|r| [m.get(r, 0), m.get(r, 1), m.get(r, 2)]).collect()
}

#[derive(Clone, Debug)]
struct Backbone {
    cfg: BackboneConfig,
    sa1: Mlp,
    sa2: Mlp,
}

impl Backbone {
    fn new(store: &mut ParamStore, prefix: &str, cfg: BackboneConfig, rng: &mut RngStream) -> Result<Self> {
        cfg.validate()?;
        let [w1, w2] = cfg.widths;
        let sa1 = Mlp::new(
            store,
            &format!("{prefix}.sa1"),
            MlpSpec::new(&[6, w1, w1]).layer_norm(true).activate_last(true),
            rng,
        )?;
        let sa2 = Mlp::new(
            store,
            &format!("{prefix}.sa2"),
            MlpSpec::new(&[3 + w1, w2, w2]).layer_norm(true).activate_last(true),
            rng,
        )?;
        Ok(Self { cfg, sa1, sa2 })
    }

    fn group(&self, points: &[Point]) -> Result<Grouping> {
        let k = self.cfg.neighbors;
        let [c1, c2] = self.cfg.centers;
        let centers1 = fps_points(points, c1, canonical_start(points))?;
        let pts1: Vec<Point> = centers1.iter().map(|&i| points[i]).collect();
        let nb1 = knn_points(&pts1, points, k)?.idx;
        let centers2 = fps_points(&pts1, c2, canonical_start(&pts1))?;
        let pts2: Vec<Point> = centers2.iter().map(|&i| pts1[i]).collect();
        let nb2 = knn_points(&pts2, &pts1, k)?.idx;
        Ok(Grouping {
            centers1,
            nb1,
            centers2,
            nb2,
        })
    }

    /// `[1 × widths[1]]` global feature. With `grouping` the stored
    /// selections are reused instead of recomputed.
    fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        cloud: Var,
        grouping: Option<&Grouping>,
    ) -> Result<(Var, Grouping)> {
        let (n, d) = g.shape(cloud);
        if n != self.cfg.n_points || d != 3 {
            return Err(Error::invalid(format!(
                "model expects {}×3 points, got {n}×{d}",
                self.cfg.n_points
            )));
        }
        let grp = match grouping {
            Some(s) => s.clone(),
            None => self.group(&rows_as_points(g.value(cloud)))?,
        };
        let k = self.cfg.neighbors;

        let nbrs = g.gather_rows(cloud, &grp.nb1)?;
        let ctr = g.gather_rows(cloud, &repeat_each(&grp.centers1, k))?;
        let rel = g.sub(nbrs, ctr)?;
        let x = g.concat_cols(&[rel, ctr])?;
        let h = self.sa1.forward(g, p, x)?;
        let f1 = g.max_pool_groups(h, k)?;
        let pos1 = g.gather_rows(cloud, &grp.centers1)?;

        let nbrs = g.gather_rows(pos1, &grp.nb2)?;
        let ctr = g.gather_rows(pos1, &repeat_each(&grp.centers2, k))?;
        let rel = g.sub(nbrs, ctr)?;
        let feats = g.gather_rows(f1, &grp.nb2)?;
        let x = g.concat_cols(&[rel, feats])?;
        let h = self.sa2.forward(g, p, x)?;
        let f2 = g.max_pool_groups(h, k)?;
        Ok((g.max_pool_rows(f2)?, grp))
    }
}

#[derive(Clone, Debug)]
pub struct Classifier {
    cfg: ClassifierConfig,
    params: ParamStore,
    backbone: Backbone,
    head: Mlp,
}

impl Classifier {
    pub const PREFIX: &'static str = "classifier";

    pub fn new(cfg: ClassifierConfig, rng: &mut RngStream) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let backbone = Backbone::new(&mut params, Self::PREFIX, cfg.backbone.clone(), rng)?;
        let w = cfg.backbone.widths[1];
        let head = Mlp::new(
            &mut params,
            &format!("{}.head", Self::PREFIX),
            MlpSpec::new(&[w, cfg.hidden, cfg.classes]).layer_norm(true),
            rng,
        )?;
        Ok(Self {
            cfg,
            params,
            backbone,
            head,
        })
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// `[1 × K]` logits for an `[N × 3]` cloud variable.
    pub fn forward(&self, g: &mut Graph, p: &Bound, cloud: Var) -> Result<Var> {
        Ok(self.forward_grouped(g, p, cloud, None)?.0)
    }

    pub fn forward_grouped(
        &self,
        g: &mut Graph,
        p: &Bound,
        cloud: Var,
        grouping: Option<&Grouping>,
    ) -> Result<(Var, Grouping)> {
        let (f, grp) = self.backbone.forward(g, p, cloud, grouping)?;
        Ok((self.head.forward(g, p, f)?, grp))
    }

    pub fn logits(&self, cloud: &PointCloud) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let x = g.constant(cloud.to_matrix());
        let out = self.forward(&mut g, &p, x)?;
        Ok(g.value(out).data().to_vec())
    }

    /// Arg-max class, ties to the lowest id.
    pub fn predict(&self, cloud: &PointCloud) -> Result<usize> {
        let l = self.logits(cloud)?;
        Ok((0..l.len()).fold(0, |best, j| if l[j] > l[best] { j } else { best }))
    }
}

#[derive(Clone, Debug)]
pub struct Discriminator {
    cfg: DiscriminatorConfig,
    params: ParamStore,
    backbone: Backbone,
    head: Mlp,
}

impl Discriminator {
    pub const PREFIX: &'static str = "discriminator";

    /// The output layer is initialised small so the initial probabilities
    /// stay near 0.5.
    pub fn new(cfg: DiscriminatorConfig, rng: &mut RngStream) -> Result<Self> {
        let mut params = ParamStore::new();
        let backbone = Backbone::new(&mut params, Self::PREFIX, cfg.backbone.clone(), rng)?;
        let w = cfg.backbone.widths[1];
        let head = Mlp::new(
            &mut params,
            &format!("{}.head", Self::PREFIX),
            MlpSpec::new(&[w, cfg.hidden, 1])
                .layer_norm(true)
                .last_init(Init::FanIn(0.1)),
            rng,
        )?;
        Ok(Self {
            cfg,
            params,
            backbone,
            head,
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// `[1 × 1]` probability that the cloud is clean.
    pub fn forward(&self, g: &mut Graph, p: &Bound, cloud: Var) -> Result<Var> {
        Ok(self.forward_grouped(g, p, cloud, None)?.0)
    }

    pub fn forward_grouped(
        &self,
        g: &mut Graph,
        p: &Bound,
        cloud: Var,
        grouping: Option<&Grouping>,
    ) -> Result<(Var, Grouping)> {
        let (f, grp) = self.backbone.forward(g, p, cloud, grouping)?;
        let logit = self.head.forward(g, p, f)?;
        Ok((g.sigmoid(logit), grp))
    }

    pub fn probability(&self, cloud: &PointCloud) -> Result<f64> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let x = g.constant(cloud.to_matrix());
        let out = self.forward(&mut g, &p, x)?;
        Ok(g.value(out).item())
    }
}
