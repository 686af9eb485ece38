//! Geometric primitives: point clouds, farthest point sampling, k-nearest
//! neighbours, Euler rotations, unit-sphere normalisation and inverse-distance
//! interpolation.
//!
//! Everything here is brute force and deterministic. Distance ties are always
//! broken by the lowest index.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub type Point = [f64; 3];

/// Ordered list of 3-D points with an optional class label.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<Point>,
    label: Option<usize>,
}

impl PointCloud {
    /// Builds a cloud, rejecting empty input and non-finite coordinates.
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("point cloud must contain at least one point"));
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite(format!("point {i} has a non-finite coordinate")));
        }
        Ok(Self {
            points,
            label: None,
        })
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    pub fn set_label(&mut self, label: Option<usize>) {
        self.label = label;
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn point(&self, i: usize) -> Point {
        self.points[i]
    }

    pub fn into_points(self) -> Vec<Point> {
        self.points
    }

    /// `N×3` matrix view of the coordinates.
    pub fn to_matrix(&self) -> Matrix {
        let data = self.points.iter().flat_map(|p| p.iter().copied()).collect();
        Matrix::from_vec(self.points.len(), 3, data).expect("n×3 buffer")
    }

    pub fn from_matrix(m: &Matrix) -> Result<Self> {
        if m.cols() != 3 {
            return Err(Error::shape("PointCloud::from_matrix", format!("{} columns", m.cols())));
        }
        let pts = (0..m.rows())
            .map(|r| {
                let row = m.row(r);
                [row[0], row[1], row[2]]
            })
            .collect();
        Self::new(pts)
    }

    /// Subset by index, keeping the label.
    pub fn select(&self, idx: &[usize]) -> PointCloud {
        PointCloud {
            points: idx.iter().map(|&i| self.points[i]).collect(),
            label: self.label,
        }
    }

    pub fn centroid(&self) -> Point {
        let n = self.points.len() as f64;
        let mut c = [0.0; 3];
        for p in &self.points {
            for k in 0..3 {
                c[k] += p[k];
            }
        }
        [c[0] / n, c[1] / n, c[2] / n]
    }
}

#[inline]
pub fn dist2(a: &Point, b: &Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[inline]
pub fn norm(p: &Point) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

/// Farthest point sampling over a raw point slice.
pub fn fps_points(points: &[Point], m: usize, start: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if n == 0 {
        return Err(Error::invalid("fps on an empty cloud"));
    }
    if m == 0 || m > n {
        return Err(Error::invalid(format!("fps needs 1 <= m <= N, got m={m}, N={n}")));
    }
    if start >= n {
        return Err(Error::invalid(format!("fps start {start} out of range for N={n}")));
    }
    let mut selected = Vec::with_capacity(m);
    let mut min_d = vec![f64::INFINITY; n];
    let mut taken = vec![false; n];
    let mut current = start;
    for _ in 0..m {
        selected.push(current);
        taken[current] = true;
        let c = points[current];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            let d = dist2(p, &c);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if !taken[i] && min_d[i] > best_d {
                best_d = min_d[i];
                best = i;
            }
        }
        current = best;
    }
    Ok(selected)
}

/// Greedy max-min selection of `m` indices, starting from `start`.
///
/// Ties go to the lowest index. Already-selected points are never chosen
/// again, so `m == N` yields a permutation even with duplicate points.
pub fn fps(cloud: &PointCloud, m: usize, start: usize) -> Result<Vec<usize>> {
    fps_points(&cloud.points, m, start)
}

/// Start index that does not depend on point order: the point farthest from
/// the centroid, ties broken by lexicographic coordinate order.
pub fn canonical_start(points: &[Point]) -> usize {
    let n = points.len() as f64;
    let mut c = [0.0; 3];
    for p in points {
        for k in 0..3 {
            c[k] += p[k];
        }
    }
    let c = [c[0] / n, c[1] / n, c[2] / n];
    let mut best = 0;
    let mut best_d = f64::NEG_INFINITY;
    for (i, p) in points.iter().enumerate() {
        let d = dist2(p, &c);
        let better = d > best_d
            || (d == best_d
                && p.partial_cmp(&points[best]) == Some(std::cmp::Ordering::Less));
        if better {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Row-major `queries × k` neighbour index table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Neighbors {
    pub k: usize,
    pub idx: Vec<usize>,
}

impl Neighbors {
    pub fn row(&self, q: usize) -> &[usize] {
        &self.idx[q * self.k..(q + 1) * self.k]
    }

    pub fn rows(&self) -> usize {
        if self.k == 0 {
            0
        } else {
            self.idx.len() / self.k
        }
    }
}

pub fn knn_points(queries: &[Point], reference: &[Point], k: usize) -> Result<Neighbors> {
    if k > reference.len() {
        return Err(Error::invalid(format!(
            "knn k={k} exceeds reference size {}",
            reference.len()
        )));
    }
    let mut idx = Vec::with_capacity(queries.len() * k);
    let mut scratch: Vec<(f64, usize)> = Vec::with_capacity(reference.len());
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    for q in queries {
        scratch.clear();
        scratch.extend(reference.iter().enumerate().map(|(i, r)| (dist2(q, r), i)));
        if k == 0 {
            continue;
        }
        if k < scratch.len() {
            scratch.select_nth_unstable_by(k - 1, cmp);
        }
        let head = &mut scratch[..k];
        head.sort_unstable_by(cmp);
        idx.extend(head.iter().map(|&(_, i)| i));
    }
    Ok(Neighbors { k, idx })
}

/// For every query, the indices of its `k` nearest reference points sorted by
/// ascending distance.
pub fn knn(queries: &PointCloud, reference: &PointCloud, k: usize) -> Result<Neighbors> {
    knn_points(&queries.points, &reference.points, k)
}

/// Rotation angles about x, y and z (radians).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EulerAngles {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl EulerAngles {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Self {
        Self { alpha, beta, gamma }
    }
}

pub type Mat3 = [[f64; 3]; 3];

/// `Rz(γ)·Ry(β)·Rx(α)`.
pub fn euler_to_rotation(a: EulerAngles) -> Mat3 {
    let (sa, ca) = a.alpha.sin_cos();
    let (sb, cb) = a.beta.sin_cos();
    let (sg, cg) = a.gamma.sin_cos();
    [
        [cg * cb, cg * sb * sa - sg * ca, cg * sb * ca + sg * sa],
        [sg * cb, sg * sb * sa + cg * ca, sg * sb * ca - cg * sa],
        [-sb, cb * sa, cb * ca],
    ]
}

#[inline]
pub fn rotate(r: &Mat3, p: &Point) -> Point {
    [
        r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2],
        r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2],
        r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2],
    ]
}

pub fn det3(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Centre on the centroid and scale so the farthest point has norm 1.
pub fn normalize_unit_sphere(cloud: &PointCloud) -> PointCloud {
    let c = cloud.centroid();
    let mut pts: Vec<Point> = cloud
        .points
        .iter()
        .map(|p| [p[0] - c[0], p[1] - c[1], p[2] - c[2]])
        .collect();
    let r = pts.iter().map(norm).fold(0.0, f64::max);
    if r > 0.0 {
        for p in &mut pts {
            for v in p.iter_mut() {
                *v /= r;
            }
        }
    }
    PointCloud {
        points: pts,
        label: cloud.label,
    }
}

/// Distance guard used by inverse-distance weighting.
pub const IDW_EPS: f64 = 1e-8;

/// Sparse inverse-distance weights: for each destination point, `k` source
/// indices and convex weights.
#[derive(Clone, Debug)]
pub struct IdwWeights {
    pub k: usize,
    pub idx: Vec<usize>,
    pub weights: Vec<f64>,
    pub n_src: usize,
}

impl IdwWeights {
    pub fn compute(src: &[Point], dst: &[Point], k: usize) -> Result<Self> {
        if src.is_empty() {
            return Err(Error::invalid("idw interpolation from an empty source"));
        }
        if k == 0 || k > src.len() {
            return Err(Error::invalid(format!(
                "idw needs 1 <= k <= |src|, got k={k}, |src|={}",
                src.len()
            )));
        }
        let nb = knn_points(dst, src, k)?;
        let mut weights = Vec::with_capacity(nb.idx.len());
        for (q, p) in dst.iter().enumerate() {
            let row = nb.row(q);
            let raw: Vec<f64> = row
                .iter()
                .map(|&j| 1.0 / (dist2(p, &src[j]).sqrt() + IDW_EPS))
                .collect();
            let total: f64 = raw.iter().sum();
            weights.extend(raw.iter().map(|w| w / total));
        }
        Ok(Self {
            k,
            idx: nb.idx,
            weights,
            n_src: src.len(),
        })
    }

    pub fn dst_len(&self) -> usize {
        self.idx.len() / self.k
    }

    /// Dense `dst × src` interpolation matrix.
    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.dst_len(), self.n_src);
        for q in 0..self.dst_len() {
            for t in 0..self.k {
                let j = self.idx[q * self.k + t];
                let cur = m.get(q, j);
                m.set(q, j, cur + self.weights[q * self.k + t]);
            }
        }
        m
    }

    pub fn apply(&self, feats: &Matrix) -> Result<Matrix> {
        if feats.rows() != self.n_src {
            return Err(Error::shape(
                "idw_interpolate",
                format!("{} feature rows for {} source points", feats.rows(), self.n_src),
            ));
        }
        let c = feats.cols();
        let mut out = Matrix::zeros(self.dst_len(), c);
        for q in 0..self.dst_len() {
            let dst = out.row_mut(q);
            for t in 0..self.k {
                let w = self.weights[q * self.k + t];
                let src = feats.row(self.idx[q * self.k + t]);
                for (o, s) in dst.iter_mut().zip(src) {
                    *o += w * s;
                }
            }
        }
        Ok(out)
    }
}

/// Inverse-distance interpolation of per-point features from `src_pts` onto
/// `dst_pts` using the `k` nearest sources.
pub fn idw_interpolate(
    src_pts: &PointCloud,
    src_feats: &Matrix,
    dst_pts: &PointCloud,
    k: usize,
) -> Result<Matrix> {
    IdwWeights::compute(&src_pts.points, &dst_pts.points, k)?.apply(src_feats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut r = RngStream::new(seed, 0);
        PointCloud::new(
            (0..n)
                .map(|_| [r.normal(), r.normal(), r.normal()])
                .collect(),
        )
        .unwrap()
    }

    fn line(xs: &[f64]) -> PointCloud {
        PointCloud::new(xs.iter().map(|&x| [x, 0.0, 0.0]).collect()).unwrap()
    }

    #[test]
    fn rejects_empty_and_nan() {
        assert!(PointCloud::new(vec![]).is_err());
        assert!(PointCloud::new(vec![[0.0, f64::NAN, 0.0]]).is_err());
    }

    #[test]
    fn fps_single_is_start() {
        let c = random_cloud(10, 1);
        assert_eq!(fps(&c, 1, 4).unwrap(), vec![4]);
    }

    #[test]
    fn fps_exhaustion_is_permutation() {
        let c = random_cloud(17, 2);
        let mut s = fps(&c, 17, 0).unwrap();
        s.sort_unstable();
        assert_eq!(s, (0..17).collect::<Vec<_>>());
    }

    #[test]
    fn fps_picks_far_end_of_line() {
        let c = line(&[0.0, 1.0, 0.1, 2.0]);
        assert_eq!(fps(&c, 2, 0).unwrap(), vec![0, 3]);
    }

    #[test]
    fn fps_errors() {
        let c = random_cloud(5, 3);
        assert!(fps(&c, 6, 0).is_err());
        assert!(fps(&c, 0, 0).is_err());
        assert!(fps(&c, 2, 5).is_err());
    }

    #[test]
    fn fps_tie_goes_to_lowest_index() {
        let c = line(&[0.0, 1.0, -1.0]);
        assert_eq!(fps(&c, 2, 0).unwrap(), vec![0, 1]);
    }

    #[test]
    fn knn_examples() {
        let r = line(&[0.0, 3.0, 1.0]);
        let q = line(&[0.9]);
        assert_eq!(knn(&q, &r, 2).unwrap().row(0), &[2, 0]);
        assert_eq!(knn(&q, &r, 3).unwrap().row(0), &[2, 0, 1]);
        let self_q = line(&[3.0]);
        assert_eq!(knn(&self_q, &r, 1).unwrap().row(0), &[1]);
        assert!(knn(&q, &r, 4).is_err());
    }

    #[test]
    fn knn_ties_by_index() {
        let r = line(&[1.0, -1.0, 1.0]);
        let q = line(&[0.0]);
        assert_eq!(knn(&q, &r, 3).unwrap().row(0), &[0, 1, 2]);
    }

    #[test]
    fn rotation_examples() {
        let id = euler_to_rotation(EulerAngles::new(0.0, 0.0, 0.0));
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(id[i][j], if i == j { 1.0 } else { 0.0 });
            }
        }
        let r = euler_to_rotation(EulerAngles::new(0.0, 0.0, std::f64::consts::FRAC_PI_2));
        let p = rotate(&r, &[1.0, 0.0, 0.0]);
        assert!((p[0]).abs() < 1e-15 && (p[1] - 1.0).abs() < 1e-15 && p[2].abs() < 1e-15);
    }

    #[test]
    fn normalize_examples() {
        let c = line(&[2.0, -2.0]);
        let n = normalize_unit_sphere(&c);
        assert_eq!(n.points(), &[[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]);
        let single = PointCloud::new(vec![[3.0, 4.0, 5.0]]).unwrap();
        assert_eq!(normalize_unit_sphere(&single).points(), &[[0.0, 0.0, 0.0]]);
        let r = random_cloud(50, 9);
        let once = normalize_unit_sphere(&r);
        let twice = normalize_unit_sphere(&once);
        for (a, b) in once.points().iter().zip(twice.points()) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn idw_examples() {
        let src = line(&[0.0, 2.0, 5.0]);
        let feats = Matrix::from_vec(3, 2, vec![1.0, 10.0, 3.0, 30.0, 7.0, 70.0]).unwrap();
        let on_src = line(&[2.0]);
        let out = idw_interpolate(&src, &feats, &on_src, 3).unwrap();
        assert!((out.get(0, 0) - 3.0).abs() < 1e-6);
        assert!((out.get(0, 1) - 30.0).abs() < 1e-6);

        let mid = line(&[1.0]);
        let out = idw_interpolate(&src, &feats, &mid, 2).unwrap();
        assert!((out.get(0, 0) - 2.0).abs() < 1e-12);
        assert!((out.get(0, 1) - 20.0).abs() < 1e-12);
    }

    #[test]
    fn idw_rejects_small_source() {
        let src = line(&[0.0, 1.0]);
        let feats = Matrix::zeros(2, 1);
        assert!(idw_interpolate(&src, &feats, &src, 3).is_err());
    }

    #[test]
    fn canonical_start_ignores_order() {
        let c = random_cloud(40, 5);
        let s = canonical_start(c.points());
        let mut rev = c.points().to_vec();
        rev.reverse();
        let s2 = canonical_start(&rev);
        assert_eq!(c.point(s), rev[s2]);
    }
}
