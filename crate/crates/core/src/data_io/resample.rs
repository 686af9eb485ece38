use crate::geom::{fps, PointCloud};
use crate::rng::RngStream;

/// Brings a cloud to exactly `n` points: farthest-point subsampling when it
/// is larger, random duplication when it is smaller, identity otherwise.
///
/// `n == 0` is treated as `n == 1`.
pub fn resample_to_n(cloud: &PointCloud, n: usize, rng: &mut RngStream) -> PointCloud {
    let n = n.max(1);
    let len = cloud.len();
    if len == n {
        return cloud.clone();
    }
    if len > n {
        let idx = fps(cloud, n, 0).expect("1 <= n < len");
        return cloud.select(&idx);
    }
    let mut idx: Vec<usize> = (0..len).collect();
    idx.extend((len..n).map(|_| rng.below(len)));
    cloud.select(&idx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(n: usize) -> PointCloud {
        let mut r = RngStream::new(2, 2);
        PointCloud::new((0..n).map(|_| [r.normal(), r.normal(), r.normal()]).collect())
            .unwrap()
            .with_label(4)
    }

    #[test]
    fn identity_when_sizes_match() {
        let c = cloud(20);
        assert_eq!(resample_to_n(&c, 20, &mut RngStream::new(0, 0)), c);
    }

    #[test]
    fn single_point() {
        let c = cloud(20);
        let out = resample_to_n(&c, 1, &mut RngStream::new(0, 0));
        assert_eq!(out.len(), 1);
        assert!(c.points().contains(&out.point(0)));
    }

    #[test]
    fn shrink_is_subset_and_grow_covers_input() {
        let c = cloud(30);
        let small = resample_to_n(&c, 12, &mut RngStream::new(0, 0));
        let mut seen = std::collections::HashSet::new();
        for p in small.points() {
            assert!(c.points().contains(p));
            assert!(seen.insert(p.map(f64::to_bits)));
        }
        let big = resample_to_n(&c, 50, &mut RngStream::new(0, 0));
        assert_eq!(big.len(), 50);
        assert_eq!(&big.points()[..30], c.points());
        assert!(big.points().iter().all(|p| c.points().contains(p)));
        assert_eq!(big.label(), Some(4));
    }
}
