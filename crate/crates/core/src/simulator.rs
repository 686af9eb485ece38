//! Corruption simulator: per-anchor scale/rotate/translate, kernel-weighted
//! fusion of the anchor sets and point masking.
//!
//! Everything that depends on learned parameters is expressed on a
//! [`Graph`], so gradients reach the deformation and mask predictions.
//! Fusion weights depend only on the input cloud and the anchors and are
//! constants of the graph.

use crate::data_io::resample_to_n;
use crate::error::{Error, Result};
use crate::geom::{dist2, Point, PointCloud};
use crate::matrix::Matrix;
use crate::nn::{Graph, Var};
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FusionConfig {
    /// Gaussian kernel bandwidth in model units.
    pub bandwidth: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { bandwidth: 0.5 }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bandwidth > 0.0 && self.bandwidth.is_finite() {
            Ok(())
        } else {
            Err(Error::invalid(format!("fusion bandwidth must be > 0, got {}", self.bandwidth)))
        }
    }
}

/// Physical per-anchor deformation on the graph, each `[M × 3]`:
/// scale factors, Euler angles (radians) and offsets.
#[derive(Clone, Copy, Debug)]
pub struct DeformVars {
    pub scale: Var,
    pub angles: Var,
    pub offset: Var,
}

impl DeformVars {
    /// Constant deformation from plain matrices.
    pub fn constant(g: &mut Graph, scale: Matrix, angles: Matrix, offset: Matrix) -> Self {
        Self {
            scale: g.constant(scale),
            angles: g.constant(angles),
            offset: g.constant(offset),
        }
    }

    /// Scale 1, angle 0, offset 0 for `m` anchors.
    pub fn identity(g: &mut Graph, m: usize) -> Self {
        Self::constant(g, Matrix::filled(m, 3, 1.0), Matrix::zeros(m, 3), Matrix::zeros(m, 3))
    }
}

/// The `M` deformed copies of the cloud in world coordinates.
#[derive(Clone, Debug)]
pub struct AnchorSets {
    pub candidates: Vec<Var>,
    pub anchors: Vec<Point>,
}

fn row_const(g: &mut Graph, p: Point, sign: f64) -> Var {
    g.constant(Matrix::from_vec(1, 3, vec![sign * p[0], sign * p[1], sign * p[2]]).expect("1x3"))
}

/// For anchor `i`: `((P - d_i) ⊙ s_i)·R_iᵀ + t_i + d_i`, i.e. the scaled
/// points are rotated by `R_i` about the anchor, shifted, and moved back to
/// the world frame.
pub fn per_anchor_deform(
    g: &mut Graph,
    cloud: Var,
    anchors: &[Point],
    params: &DeformVars,
) -> Result<AnchorSets> {
    let m = anchors.len();
    for v in [params.scale, params.angles, params.offset] {
        if g.shape(v) != (m, 3) {
            return Err(Error::shape(
                "per_anchor_deform",
                format!("{m} anchors but parameter shape {:?}", g.shape(v)),
            ));
        }
    }
    if g.shape(cloud).1 != 3 {
        return Err(Error::shape("per_anchor_deform", "cloud must be N×3"));
    }
    let rot = g.euler_rotation(params.angles)?;
    let mut candidates = Vec::with_capacity(m);
    for (i, &d) in anchors.iter().enumerate() {
        let neg_d = row_const(g, d, -1.0);
        let pos_d = row_const(g, d, 1.0);
        let q = g.add_row(cloud, neg_d)?;
        let s = g.slice_rows(params.scale, i, 1)?;
        let q = g.mul_row(q, s)?;
        let r = g.slice_rows(rot, i, 1)?;
        let r = g.reshape(r, 3, 3)?;
        let q = g.matmul_nt(q, r)?;
        let t = g.slice_rows(params.offset, i, 1)?;
        let q = g.add_row(q, t)?;
        candidates.push(g.add_row(q, pos_d)?);
    }
    Ok(AnchorSets {
        candidates,
        anchors: anchors.to_vec(),
    })
}

/// Normalised Gaussian kernel weights `[N × M]` of every point to every
/// anchor. Points whose weights all underflow are assigned to their nearest
/// anchor; the second value counts such points.
pub fn fusion_weights(points: &[Point], anchors: &[Point], fcfg: &FusionConfig) -> Result<(Matrix, usize)> {
    fcfg.validate()?;
    if anchors.is_empty() {
        return Err(Error::invalid("fusion needs at least one anchor"));
    }
    let m = anchors.len();
    let two_h2 = 2.0 * fcfg.bandwidth * fcfg.bandwidth;
    let mut w = Matrix::zeros(points.len(), m);
    let mut fallback = 0;
    for (r, p) in points.iter().enumerate() {
        let row = w.row_mut(r);
        let mut total = 0.0;
        for (j, a) in anchors.iter().enumerate() {
            row[j] = (-dist2(p, a) / two_h2).exp();
            total += row[j];
        }
        if total > 0.0 && total.is_finite() {
            for v in row.iter_mut() {
                *v /= total;
            }
        } else {
            fallback += 1;
            let nearest = (0..m)
                .min_by(|&a, &b| dist2(p, &anchors[a]).total_cmp(&dist2(p, &anchors[b])))
                .expect("m >= 1");
            row.fill(0.0);
            row[nearest] = 1.0;
        }
    }
    if fallback > 0 {
        log::warn!(
            "fusion kernel underflowed for {fallback} points (bandwidth {}); using nearest-anchor assignment",
            fcfg.bandwidth
        );
    }
    Ok((w, fallback))
}

/// Per-point convex combination of the anchor candidates.
pub fn fuse_anchor_sets(g: &mut Graph, sets: &AnchorSets, weights: &Matrix) -> Result<Var> {
    let m = sets.candidates.len();
    if m == 0 || weights.cols() != m {
        return Err(Error::shape(
            "fuse_anchor_sets",
            format!("{m} candidate sets, weights {:?}", weights.shape()),
        ));
    }
    if m == 1 {
        return Ok(sets.candidates[0]);
    }
    let mut acc: Option<Var> = None;
    for (i, &c) in sets.candidates.iter().enumerate() {
        let col: Vec<f64> = (0..weights.rows()).map(|r| weights.get(r, i)).collect();
        let w = g.constant(Matrix::from_vec(weights.rows(), 1, col)?);
        let term = g.mul_col(c, w)?;
        acc = Some(match acc {
            None => term,
            Some(a) => g.add(a, term)?,
        });
    }
    Ok(acc.expect("m >= 1"))
}

/// How a mask is applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskMode {
    /// Scale each point by its mask value (differentiable).
    Multiply,
    /// Drop points with mask below 0.5 and resample back to the input size.
    Filter,
}

impl std::str::FromStr for MaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multiply" => Ok(MaskMode::Multiply),
            "filter" => Ok(MaskMode::Filter),
            other => Err(Error::invalid(format!("unknown mask mode {other}"))),
        }
    }
}

/// Multiply mode on the graph: row `j` of the fused cloud scaled by `mask[j]`.
pub fn apply_mask_multiply(g: &mut Graph, fused: Var, mask: Var) -> Result<Var> {
    g.mul_col(fused, mask)
}

/// Filter mode on plain values.
pub fn apply_mask_filter(cloud: &PointCloud, mask: &[f64], rng: &mut RngStream) -> Result<PointCloud> {
    if mask.len() != cloud.len() {
        return Err(Error::shape(
            "apply_mask",
            format!("{} mask values for {} points", mask.len(), cloud.len()),
        ));
    }
    let mut keep: Vec<usize> = (0..cloud.len()).filter(|&i| mask[i] >= 0.5).collect();
    if keep.is_empty() {
        let best = (0..mask.len())
            .max_by(|&a, &b| mask[a].total_cmp(&mask[b]).then(b.cmp(&a)))
            .expect("non-empty cloud");
        keep.push(best);
    }
    Ok(resample_to_n(&cloud.select(&keep), cloud.len(), rng))
}

/// Applies a mask in either mode on plain values.
pub fn apply_mask(cloud: &PointCloud, mask: &[f64], mode: MaskMode, rng: &mut RngStream) -> Result<PointCloud> {
    match mode {
        MaskMode::Filter => apply_mask_filter(cloud, mask, rng),
        MaskMode::Multiply => {
            if mask.len() != cloud.len() {
                return Err(Error::shape("apply_mask", "mask length differs from cloud"));
            }
            let pts = cloud
                .points()
                .iter()
                .zip(mask)
                .map(|(p, &m)| [p[0] * m, p[1] * m, p[2] * m])
                .collect();
            let mut out = PointCloud::new(pts)?;
            out.set_label(cloud.label());
            Ok(out)
        }
    }
}

/// Deform, fuse and mask a cloud with fixed physical parameters (no learned
/// components). `scale`, `angles` and `offset` are `[M × 3]`.
pub fn simulate(
    cloud: &PointCloud,
    anchors: &[Point],
    scale: &Matrix,
    angles: &Matrix,
    offset: &Matrix,
    mask: Option<&[f64]>,
    fcfg: &FusionConfig,
) -> Result<PointCloud> {
    let mut g = Graph::new();
    let p = g.constant(cloud.to_matrix());
    let params = DeformVars::constant(&mut g, scale.clone(), angles.clone(), offset.clone());
    let sets = per_anchor_deform(&mut g, p, anchors, &params)?;
    let (w, _) = fusion_weights(cloud.points(), anchors, fcfg)?;
    let mut out = fuse_anchor_sets(&mut g, &sets, &w)?;
    if let Some(m) = mask {
        let mv = g.constant(Matrix::from_vec(m.len(), 1, m.to_vec())?);
        out = apply_mask_multiply(&mut g, out, mv)?;
    }
    let mut pc = PointCloud::from_matrix(g.value(out))?;
    pc.set_label(cloud.label());
    Ok(pc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{fps, normalize_unit_sphere};
    use crate::nn::{gradcheck_inputs, GradcheckConfig};

    fn cloud(n: usize, seed: u64) -> PointCloud {
        let mut r = RngStream::new(seed, 3);
        normalize_unit_sphere(
            &PointCloud::new((0..n).map(|_| [r.normal(), r.normal(), r.normal()]).collect()).unwrap(),
        )
    }

    fn anchors_of(c: &PointCloud, m: usize) -> Vec<Point> {
        fps(c, m, 0).unwrap().into_iter().map(|i| c.point(i)).collect()
    }

    fn rand_mat(r: usize, c: usize, lo: f64, hi: f64, rng: &mut RngStream) -> Matrix {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.uniform_range(lo, hi)).collect()).unwrap()
    }

    #[test]
    fn identity_params_reproduce_input() {
        let c = cloud(80, 1);
        for m in [1, 3, 6] {
            for h in [0.1, 0.5, 3.0] {
                let a = anchors_of(&c, m);
                let out = simulate(
                    &c,
                    &a,
                    &Matrix::filled(m, 3, 1.0),
                    &Matrix::zeros(m, 3),
                    &Matrix::zeros(m, 3),
                    Some(&vec![1.0; 80]),
                    &FusionConfig { bandwidth: h },
                )
                .unwrap();
                for (p, q) in c.points().iter().zip(out.points()) {
                    for k in 0..3 {
                        assert!((p[k] - q[k]).abs() <= 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn scale_doubles_x_about_origin_anchor() {
        let c = cloud(20, 2);
        let anchors = [[0.0, 0.0, 0.0]];
        let scale = Matrix::from_vec(1, 3, vec![2.0, 1.0, 1.0]).unwrap();
        let out = simulate(&c, &anchors, &scale, &Matrix::zeros(1, 3), &Matrix::zeros(1, 3), None, &FusionConfig::default())
            .unwrap();
        for (p, q) in c.points().iter().zip(out.points()) {
            assert!((q[0] - 2.0 * p[0]).abs() < 1e-15);
            assert_eq!(q[1], p[1]);
        }
    }

    #[test]
    fn rotation_preserves_pairwise_distances() {
        let c = cloud(40, 3);
        let anchors = anchors_of(&c, 1);
        let angles = Matrix::from_vec(1, 3, vec![0.3, -0.7, 1.1]).unwrap();
        let out = simulate(&c, &anchors, &Matrix::filled(1, 3, 1.0), &angles, &Matrix::zeros(1, 3), None, &FusionConfig::default())
            .unwrap();
        for i in 0..40 {
            for j in 0..40 {
                let a = dist2(&c.point(i), &c.point(j)).sqrt();
                let b = dist2(&out.point(i), &out.point(j)).sqrt();
                assert!((a - b).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn weights_partition_unity_and_hull() {
        let c = cloud(100, 4);
        let a = anchors_of(&c, 4);
        let (w, fb) = fusion_weights(c.points(), &a, &FusionConfig::default()).unwrap();
        assert_eq!(fb, 0);
        for r in 0..w.rows() {
            let s: f64 = w.row(r).iter().sum();
            assert!((s - 1.0).abs() <= 1e-12);
            assert!(w.row(r).iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn single_anchor_fusion_is_exact() {
        let c = cloud(30, 5);
        let a = anchors_of(&c, 1);
        let mut g = Graph::new();
        let p = g.constant(c.to_matrix());
        let mut rng = RngStream::new(1, 1);
        let params = DeformVars::constant(
            &mut g,
            rand_mat(1, 3, 0.5, 2.0, &mut rng),
            rand_mat(1, 3, -0.5, 0.5, &mut rng),
            rand_mat(1, 3, -0.2, 0.2, &mut rng),
        );
        let sets = per_anchor_deform(&mut g, p, &a, &params).unwrap();
        let (w, _) = fusion_weights(c.points(), &a, &FusionConfig::default()).unwrap();
        let fused = fuse_anchor_sets(&mut g, &sets, &w).unwrap();
        assert_eq!(g.value(fused), g.value(sets.candidates[0]));
    }

    #[test]
    fn bandwidth_limits() {
        // two anchors on the x axis, one point near the first
        let pts = [[-0.9, 0.0, 0.0]];
        let anchors = [[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        let (wide, _) = fusion_weights(&pts, &anchors, &FusionConfig { bandwidth: 1e6 }).unwrap();
        assert!((wide.get(0, 0) - 0.5).abs() < 1e-9);
        let (narrow, fb) = fusion_weights(&pts, &anchors, &FusionConfig { bandwidth: 1e-3 }).unwrap();
        assert_eq!(narrow.row(0), &[1.0, 0.0]);
        assert_eq!(fb, 1);
        let (small, _) = fusion_weights(&pts, &anchors, &FusionConfig { bandwidth: 0.05 }).unwrap();
        assert!(small.get(0, 0) > 1.0 - 1e-12);
    }

    #[test]
    fn masks() {
        let c = cloud(10, 6);
        let out = apply_mask(&c, &[1.0; 10], MaskMode::Multiply, &mut RngStream::new(0, 0)).unwrap();
        assert_eq!(out, c);
        let out = apply_mask(&c, &[0.0; 10], MaskMode::Multiply, &mut RngStream::new(0, 0)).unwrap();
        assert!(out.points().iter().all(|p| *p == [0.0; 3]));
        let mut m = vec![1.0; 10];
        m[2] = 0.0;
        m[7] = 0.0;
        let out = apply_mask(&c, &m, MaskMode::Filter, &mut RngStream::new(0, 0)).unwrap();
        assert_eq!(out.len(), 10);
        for p in out.points() {
            assert!(p != &c.point(2) && p != &c.point(7));
            assert!(c.points().contains(p));
        }
    }

    #[test]
    fn gradients_through_deform_fuse_mask() {
        let c = cloud(12, 7);
        let a = anchors_of(&c, 3);
        let (w, _) = fusion_weights(c.points(), &a, &FusionConfig::default()).unwrap();
        let mut rng = RngStream::new(2, 2);
        let inputs = vec![
            rand_mat(3, 3, 0.6, 1.6, &mut rng),
            rand_mat(3, 3, -0.5, 0.5, &mut rng),
            rand_mat(3, 3, -0.2, 0.2, &mut rng),
            rand_mat(12, 1, 0.0, 1.0, &mut rng),
        ];
        let target = rand_mat(12, 3, -1.0, 1.0, &mut rng);
        let cm = c.to_matrix();
        let rep = gradcheck_inputs(
            &inputs,
            |g, v| {
                let p = g.constant(cm.clone());
                let params = DeformVars {
                    scale: v[0],
                    angles: v[1],
                    offset: v[2],
                };
                let sets = per_anchor_deform(g, p, &a, &params)?;
                let fused = fuse_anchor_sets(g, &sets, &w)?;
                let out = apply_mask_multiply(g, fused, v[3])?;
                let t = g.constant(target.clone());
                let prod = g.mul(out, t)?;
                Ok(g.sum_all(prod))
            },
            GradcheckConfig::default(),
            &mut rng,
        )
        .unwrap();
        assert!(rep.max_rel_err <= 1e-5, "{rep:?}");
    }
}
