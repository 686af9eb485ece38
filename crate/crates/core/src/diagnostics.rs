//! Finite-difference checks of every differentiable op and of the full
//! imitator → classifier feedback-loss path.

use crate::data_io::synthetic::{make_sample, SyntheticConfig};
use crate::error::Result;
use crate::imitator::{ImitateOptions, Imitator, ImitatorConfig};
use crate::matrix::Matrix;
use crate::models::{BackboneConfig, Classifier, ClassifierConfig};
use crate::nn::functional::{gumbel_noise, gumbel_softmax_soft};
use crate::nn::{gradcheck_inputs, gradcheck_params, GradcheckConfig, GradcheckReport, Graph, Var};
use crate::rng::RngStream;
use crate::training::feedback_var;

type OpCase = (&'static str, Vec<Matrix>, Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>);

fn rand_mat(r: usize, c: usize, rng: &mut RngStream) -> Matrix {
    Matrix::from_vec(r, c, (0..r * c).map(|_| rng.normal()).collect()).expect("shape")
}

fn op_cases(rng: &mut RngStream) -> Vec<OpCase> {
    let a = rand_mat(4, 3, rng);
    let b = rand_mat(3, 5, rng);
    let bt = rand_mat(5, 3, rng);
    let x = rand_mat(3, 4, rng);
    let y = rand_mat(3, 4, rng);
    let pos = x.map(|v| v.abs() + 0.5);
    let tall = rand_mat(5, 3, rng);
    let row = rand_mat(1, 3, rng);
    let col = rand_mat(5, 1, rng);
    let side = rand_mat(4, 2, rng);
    let wide = rand_mat(4, 6, rng);
    let gamma = rand_mat(1, 6, rng);
    let beta = rand_mat(1, 6, rng);
    let logits = rand_mat(3, 4, rng);
    let angles = rand_mat(3, 3, rng);
    let two = rand_mat(5, 2, rng);
    let noise = gumbel_noise((5, 2), rng);
    vec![
        ("matmul", vec![a.clone(), b], Box::new(|g, v| g.matmul(v[0], v[1]))),
        ("matmul_nt", vec![a.clone(), bt], Box::new(|g, v| g.matmul_nt(v[0], v[1]))),
        ("add", vec![x.clone(), y.clone()], Box::new(|g, v| g.add(v[0], v[1]))),
        ("sub", vec![x.clone(), y.clone()], Box::new(|g, v| g.sub(v[0], v[1]))),
        ("mul", vec![x.clone(), y], Box::new(|g, v| g.mul(v[0], v[1]))),
        ("scale", vec![x.clone()], Box::new(|g, v| Ok(g.scale(v[0], -2.5)))),
        ("add_scalar", vec![x.clone()], Box::new(|g, v| Ok(g.add_scalar(v[0], 0.7)))),
        ("relu", vec![x.clone()], Box::new(|g, v| Ok(g.relu(v[0])))),
        ("tanh", vec![x.clone()], Box::new(|g, v| Ok(g.tanh(v[0])))),
        ("sigmoid", vec![x.clone()], Box::new(|g, v| Ok(g.sigmoid(v[0])))),
        ("exp", vec![x.clone()], Box::new(|g, v| Ok(g.exp(v[0])))),
        ("abs", vec![x.clone()], Box::new(|g, v| Ok(g.abs(v[0])))),
        ("clamp", vec![x], Box::new(|g, v| Ok(g.clamp(v[0], -0.5, 0.5)))),
        ("log", vec![pos], Box::new(|g, v| Ok(g.log(v[0])))),
        ("add_row", vec![tall.clone(), row.clone()], Box::new(|g, v| g.add_row(v[0], v[1]))),
        ("mul_row", vec![tall.clone(), row.clone()], Box::new(|g, v| g.mul_row(v[0], v[1]))),
        ("mul_col", vec![tall, col], Box::new(|g, v| g.mul_col(v[0], v[1]))),
        ("broadcast_rows", vec![row], Box::new(|g, v| g.broadcast_rows(v[0], 4))),
        ("concat_cols", vec![a.clone(), side], Box::new(|g, v| g.concat_cols(&[v[0], v[1], v[0]]))),
        ("slice_cols", vec![a.clone()], Box::new(|g, v| g.slice_cols(v[0], 1, 2))),
        ("slice_rows", vec![a.clone()], Box::new(|g, v| g.slice_rows(v[0], 1, 2))),
        ("reshape", vec![a.clone()], Box::new(|g, v| g.reshape(v[0], 2, 6))),
        ("gather_rows", vec![a.clone()], Box::new(|g, v| g.gather_rows(v[0], &[3, 0, 0, 2]))),
        ("max_pool_groups", vec![a.clone()], Box::new(|g, v| g.max_pool_groups(v[0], 2))),
        ("max_pool_rows", vec![a], Box::new(|g, v| g.max_pool_rows(v[0]))),
        ("sum_all", vec![wide.clone()], Box::new(|g, v| Ok(g.sum_all(v[0])))),
        ("mean_all", vec![wide.clone()], Box::new(|g, v| Ok(g.mean_all(v[0])))),
        ("mean_rows", vec![wide.clone()], Box::new(|g, v| Ok(g.mean_rows(v[0])))),
        ("softmax_rows", vec![wide.clone()], Box::new(|g, v| Ok(g.softmax_rows(v[0])))),
        ("layer_norm", vec![wide, gamma, beta], Box::new(|g, v| g.layer_norm(v[0], v[1], v[2]))),
        ("cross_entropy", vec![logits], Box::new(|g, v| g.cross_entropy(v[0], &[1, 3, 0]))),
        ("euler_rotation", vec![angles], Box::new(|g, v| g.euler_rotation(v[0]))),
        (
            "gumbel_softmax",
            vec![two],
            Box::new(move |g, v| gumbel_softmax_soft(g, v[0], &noise, 0.7)),
        ),
    ]
}

/// Per-op reports; each output is projected onto a fixed random matrix so
/// every coordinate contributes.
pub fn gradcheck_ops(seed: u64) -> Result<Vec<(String, GradcheckReport)>> {
    let mut rng = RngStream::new(seed, 0x6f70);
    let mut out = Vec::new();
    for (name, inputs, f) in op_cases(&mut rng) {
        let prng = RngStream::new(seed, 0x7072);
        let mut crng = RngStream::new(seed, 0x636f);
        let rep = gradcheck_inputs(
            &inputs,
            |g, v| {
                let y = f(g, v)?;
                let (r, c) = g.shape(y);
                let w = g.constant(rand_mat(r, c, &mut prng.clone()));
                let p = g.mul(y, w)?;
                Ok(g.sum_all(p))
            },
            GradcheckConfig::default(),
            &mut crng,
        )?;
        out.push((name.to_string(), rep));
    }
    Ok(out)
}

/// Imitator parameters through the soft-mask imitation, a classifier with a
/// frozen grouping, cross-entropy and the feedback loss.
pub fn gradcheck_feedback(seed: u64) -> Result<GradcheckReport> {
    let n = 64;
    let icfg = ImitatorConfig {
        n_points: n,
        n_sampled: 16,
        anchors: 3,
        width: 16,
        neighbors: 6,
        heads: 2,
        ..ImitatorConfig::default()
    };
    let ccfg = ClassifierConfig {
        backbone: BackboneConfig {
            n_points: n,
            centers: [24, 8],
            neighbors: 6,
            widths: [16, 24],
        },
        hidden: 16,
        classes: 6,
    };
    let mut imi = Imitator::with_random_heads(icfg, &mut RngStream::new(seed, 1))?;
    let clf = Classifier::new(ccfg, &mut RngStream::new(seed, 2))?;
    let data = SyntheticConfig {
        n_points: n,
        seed,
        ..SyntheticConfig::default()
    };
    let label = (seed % 6) as usize;
    let cloud = make_sample(&data, label, 0);
    let noise = gumbel_noise((n, 2), &mut RngStream::new(seed, 3));
    let opts = ImitateOptions {
        hard_mask: false,
        ..ImitateOptions::default()
    };
    let lc_clean = {
        let lo = clf.logits(&cloud)?;
        let mut g = Graph::new();
        let l = g.constant(Matrix::from_vec(1, lo.len(), lo)?);
        let ce = g.cross_entropy(l, &[label])?;
        g.value(ce).item()
    };
    let beta = 1.5;
    let grouping = {
        let mut g = Graph::new();
        let p = imi.params().bind(&mut g, false);
        let t = imi.forward_with_noise(&mut g, &p, &cloud, opts, Some(&noise))?;
        let cp = clf.params().bind(&mut g, false);
        clf.forward_grouped(&mut g, &cp, t.augmented, None)?.1
    };
    let frozen = imi.clone();
    gradcheck_params(
        imi.params_mut(),
        |store| {
            let mut g = Graph::new();
            let p = store.bind(&mut g, true);
            let t = frozen.forward_with_noise(&mut g, &p, &cloud, opts, Some(&noise))?;
            let cp = clf.params().bind(&mut g, false);
            let (lo, _) = clf.forward_grouped(&mut g, &cp, t.augmented, Some(&grouping))?;
            let ce = g.cross_entropy(lo, &[label])?;
            let loss = feedback_var(&mut g, ce, lc_clean, beta);
            Ok((g, loss, p))
        },
        GradcheckConfig {
            max_coords: 24,
            ..GradcheckConfig::default()
        },
        &mut RngStream::new(seed, 4),
    )
}

#[derive(Clone, Debug)]
pub struct GradcheckSuite {
    pub entries: Vec<(String, GradcheckReport)>,
}

impl GradcheckSuite {
    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|(_, r)| r.max_rel_err).fold(0.0, f64::max)
    }

    pub fn coords(&self) -> usize {
        self.entries.iter().map(|(_, r)| r.coords).sum()
    }

    pub fn worst(&self) -> Option<&(String, GradcheckReport)> {
        self.entries.iter().max_by(|a, b| a.1.max_rel_err.total_cmp(&b.1.max_rel_err))
    }
}

/// Every op plus the end-to-end feedback path.
pub fn gradcheck_suite(seed: u64) -> Result<GradcheckSuite> {
    let mut entries = gradcheck_ops(seed)?;
    entries.push(("imitator_feedback".to_string(), gradcheck_feedback(seed)?));
    Ok(GradcheckSuite { entries })
}
