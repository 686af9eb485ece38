use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geom::{dist2, euler_to_rotation, norm, rotate, EulerAngles, Point, PointCloud};
use crate::rng::RngStream;

/// The seven corruption families, in report column order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Scale,
    Jitter,
    DropGlobal,
    DropLocal,
    AddGlobal,
    AddLocal,
    Rotate,
}

impl Family {
    pub const ALL: [Family; 7] = [
        Family::Scale,
        Family::Jitter,
        Family::DropGlobal,
        Family::DropLocal,
        Family::AddGlobal,
        Family::AddLocal,
        Family::Rotate,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Scale => "scale",
            Family::Jitter => "jitter",
            Family::DropGlobal => "drop_global",
            Family::DropLocal => "drop_local",
            Family::AddGlobal => "add_global",
            Family::AddLocal => "add_local",
            Family::Rotate => "rotate",
        }
    }

    /// Short column label used in reports.
    pub fn label(self) -> &'static str {
        match self {
            Family::Scale => "Sca",
            Family::Jitter => "Jit",
            Family::DropGlobal => "Drop-G",
            Family::DropLocal => "Drop-L",
            Family::AddGlobal => "Add-G",
            Family::AddLocal => "Add-L",
            Family::Rotate => "Rot",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s || f.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown corruption family {s}")))
    }
}

/// Severity level 1..=5.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Severity(u8);

impl Severity {
    pub const ALL: [Severity; 5] = [Severity(1), Severity(2), Severity(3), Severity(4), Severity(5)];

    pub fn new(level: u8) -> Result<Self> {
        if (1..=5).contains(&level) {
            Ok(Severity(level))
        } else {
            Err(Error::invalid(format!("severity must be in 1..=5, got {level}")))
        }
    }

    pub fn level(self) -> u8 {
        self.0
    }

    /// Zero-based position in per-severity tables.
    pub fn index(self) -> usize {
        usize::from(self.0 - 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CorruptionSpec {
    pub family: Family,
    pub severity: Severity,
}

impl CorruptionSpec {
    pub fn new(family: Family, severity: u8) -> Result<Self> {
        Ok(Self {
            family,
            severity: Severity::new(severity)?,
        })
    }
}

/// Per-severity parameters of every family.
#[derive(Clone, Debug, PartialEq)]
pub struct SeverityTable {
    /// Per-axis factors are log-uniform in `[1/s, s]`.
    pub scale_bound: [f64; 5],
    /// Gaussian σ per coordinate.
    pub jitter_sigma: [f64; 5],
    /// Each Euler angle uniform in `±deg`.
    pub rotate_deg: [f64; 5],
    pub drop_global_frac: [f64; 5],
    pub drop_local_frac: [f64; 5],
    pub drop_local_centers: [usize; 5],
    pub add_global_frac: [f64; 5],
    pub add_local_frac: [f64; 5],
    pub add_local_centers: [usize; 5],
    pub add_local_sigma: f64,
    /// Added local points are pulled back inside this radius.
    pub add_local_clip: f64,
}

impl Default for SeverityTable {
    fn default() -> Self {
        let by = |f: fn(f64) -> f64| -> [f64; 5] { std::array::from_fn(|i| f((i + 1) as f64)) };
        let centers: [usize; 5] = std::array::from_fn(|i| (i + 2).min(8));
        Self {
            scale_bound: by(|l| 1.0 + 0.2 * l),
            jitter_sigma: by(|l| 0.01 * l),
            rotate_deg: by(|l| 15.0 * l),
            drop_global_frac: by(|l| 0.125 + 0.125 * l),
            drop_local_frac: by(|l| 0.05 * l * 1.5),
            drop_local_centers: centers,
            add_global_frac: by(|l| 0.1 * l),
            add_local_frac: by(|l| 0.1 * l),
            add_local_centers: centers,
            add_local_sigma: 0.075,
            add_local_clip: 1.1,
        }
    }
}

fn strictly_increasing<T: PartialOrd + Copy>(name: &str, v: &[T; 5]) -> Result<()> {
    if v.windows(2).all(|w| w[0] < w[1]) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be strictly increasing in severity")))
    }
}

impl SeverityTable {
    pub fn validate(&self) -> Result<()> {
        strictly_increasing("scale_bound", &self.scale_bound)?;
        strictly_increasing("jitter_sigma", &self.jitter_sigma)?;
        strictly_increasing("rotate_deg", &self.rotate_deg)?;
        strictly_increasing("drop_global_frac", &self.drop_global_frac)?;
        strictly_increasing("drop_local_frac", &self.drop_local_frac)?;
        strictly_increasing("drop_local_centers", &self.drop_local_centers)?;
        strictly_increasing("add_global_frac", &self.add_global_frac)?;
        strictly_increasing("add_local_frac", &self.add_local_frac)?;
        strictly_increasing("add_local_centers", &self.add_local_centers)?;
        if self.scale_bound[0] < 1.0 {
            return Err(Error::Config("scale_bound must be >= 1".into()));
        }
        if self.drop_global_frac[4] >= 1.0 || self.drop_local_frac[4] >= 1.0 {
            return Err(Error::Config("drop fractions must stay below 1".into()));
        }
        if !(self.add_local_sigma >= 0.0 && self.add_local_clip > 0.0) {
            return Err(Error::Config("add_local sigma/clip must be non-negative/positive".into()));
        }
        Ok(())
    }
}

fn count_of(n: usize, frac: f64) -> usize {
    // small epsilon so that e.g. 1024·0.5 is not floored to 511 by rounding
    ((n as f64) * frac + 1e-9).floor() as usize
}

/// Applies one corruption. The result is a pure function of the inputs.
///
/// Drop families keep a sub-multiset of the input (in input order); add
/// families append to an unchanged copy of the input.
pub fn apply_corruption(
    cloud: &PointCloud,
    spec: CorruptionSpec,
    table: &SeverityTable,
    rng: &mut RngStream,
) -> Result<PointCloud> {
    let s = spec.severity.index();
    let pts = cloud.points();
    let n = pts.len();
    let out: Vec<Point> = match spec.family {
        Family::Scale => {
            let ln_s = table.scale_bound[s].ln();
            let f: [f64; 3] = std::array::from_fn(|_| rng.uniform_range(-ln_s, ln_s).exp());
            pts.iter().map(|p| [p[0] * f[0], p[1] * f[1], p[2] * f[2]]).collect()
        }
        Family::Jitter => {
            let sigma = table.jitter_sigma[s];
            pts.iter()
                .map(|p| {
                    [
                        p[0] + sigma * rng.normal(),
                        p[1] + sigma * rng.normal(),
                        p[2] + sigma * rng.normal(),
                    ]
                })
                .collect()
        }
        Family::Rotate => {
            let bound = table.rotate_deg[s].to_radians();
            let mut a = || rng.uniform_range(-bound, bound);
            let angles = EulerAngles::new(a(), a(), a());
            let r = euler_to_rotation(angles);
            pts.iter().map(|p| rotate(&r, p)).collect()
        }
        Family::DropGlobal => {
            let drop = count_of(n, table.drop_global_frac[s]).min(n - 1);
            let mut removed = vec![false; n];
            for i in rng.choose_distinct(n, drop) {
                removed[i] = true;
            }
            keep_unremoved(pts, &removed)
        }
        Family::DropLocal => {
            let total = count_of(n, table.drop_local_frac[s]).min(n - 1);
            let centers = table.drop_local_centers[s].min(n);
            let center_idx = rng.choose_distinct(n, centers);
            let counts = rng.split_count(total, centers);
            let mut removed = vec![false; n];
            for (&c, &k) in center_idx.iter().zip(&counts) {
                let mut near: Vec<(f64, usize)> = (0..n)
                    .filter(|&i| !removed[i])
                    .map(|i| (dist2(&pts[i], &pts[c]), i))
                    .collect();
                near.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                for &(_, i) in near.iter().take(k) {
                    removed[i] = true;
                }
            }
            keep_unremoved(pts, &removed)
        }
        Family::AddGlobal => {
            let extra = count_of(n, table.add_global_frac[s]);
            let mut v = pts.to_vec();
            v.extend((0..extra).map(|_| rng.in_ball(1.0)));
            v
        }
        Family::AddLocal => {
            let extra = count_of(n, table.add_local_frac[s]);
            let centers = table.add_local_centers[s].min(n);
            let center_idx = rng.choose_distinct(n, centers);
            let counts = rng.split_count(extra, centers);
            let sigma = table.add_local_sigma;
            let clip = table.add_local_clip;
            let mut v = pts.to_vec();
            for (&c, &k) in center_idx.iter().zip(&counts) {
                let ctr = pts[c];
                for _ in 0..k {
                    let mut p = [
                        ctr[0] + sigma * rng.normal(),
                        ctr[1] + sigma * rng.normal(),
                        ctr[2] + sigma * rng.normal(),
                    ];
                    let r = norm(&p);
                    if r > clip {
                        for x in &mut p {
                            *x *= clip / r;
                        }
                    }
                    v.push(p);
                }
            }
            v
        }
    };
    let mut pc = PointCloud::new(out)?;
    pc.set_label(cloud.label());
    Ok(pc)
}

fn keep_unremoved(pts: &[Point], removed: &[bool]) -> Vec<Point> {
    pts.iter()
        .zip(removed)
        .filter(|(_, &r)| !r)
        .map(|(p, _)| *p)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::normalize_unit_sphere;

    fn cloud(n: usize, seed: u64) -> PointCloud {
        let mut r = RngStream::new(seed, 1);
        normalize_unit_sphere(
            &PointCloud::new((0..n).map(|_| [r.normal(), r.normal(), r.normal()]).collect()).unwrap(),
        )
    }

    fn spec(f: Family, l: u8) -> CorruptionSpec {
        CorruptionSpec::new(f, l).unwrap()
    }

    fn bits(p: &Point) -> [u64; 3] {
        p.map(f64::to_bits)
    }

    #[test]
    fn severity_bounds() {
        assert!(CorruptionSpec::new(Family::Jitter, 0).is_err());
        assert!(CorruptionSpec::new(Family::Jitter, 6).is_err());
        assert!(CorruptionSpec::new(Family::Jitter, 5).is_ok());
    }

    #[test]
    fn default_table_is_monotone() {
        SeverityTable::default().validate().unwrap();
        let t = SeverityTable::default();
        assert_eq!(t.drop_local_centers, [2, 3, 4, 5, 6]);
        assert!((t.scale_bound[4] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn zero_jitter_is_identity() {
        let c = cloud(100, 1);
        let t = SeverityTable {
            jitter_sigma: [0.0; 5],
            ..SeverityTable::default()
        };
        let out = apply_corruption(&c, spec(Family::Jitter, 3), &t, &mut RngStream::new(0, 0)).unwrap();
        assert_eq!(out, c);
    }

    #[test]
    fn drop_global_half() {
        let c = cloud(1024, 2);
        let out =
            apply_corruption(&c, spec(Family::DropGlobal, 3), &SeverityTable::default(), &mut RngStream::new(0, 0))
                .unwrap();
        assert_eq!(out.len(), 512);
        let input: std::collections::HashSet<_> = c.points().iter().map(bits).collect();
        assert!(out.points().iter().all(|p| input.contains(&bits(p))));
    }

    #[test]
    fn drop_local_counts() {
        let c = cloud(1000, 3);
        for l in 1..=5u8 {
            let out =
                apply_corruption(&c, spec(Family::DropLocal, l), &SeverityTable::default(), &mut RngStream::new(1, 0))
                    .unwrap();
            let want = 1000 - (1000.0 * 0.075 * f64::from(l) + 1e-9).floor() as usize;
            assert_eq!(out.len(), want);
        }
    }

    #[test]
    fn add_families_keep_input_prefix() {
        let c = cloud(200, 4);
        for f in [Family::AddGlobal, Family::AddLocal] {
            let out = apply_corruption(&c, spec(f, 2), &SeverityTable::default(), &mut RngStream::new(2, 0)).unwrap();
            assert_eq!(out.len(), 240);
            assert_eq!(&out.points()[..200], c.points());
            assert!(out.points()[200..].iter().all(|p| norm(p) <= 1.1 + 1e-12));
        }
    }

    #[test]
    fn scale_factors_recoverable() {
        let c = cloud(128, 5);
        for l in 1..=5u8 {
            let out = apply_corruption(&c, spec(Family::Scale, l), &SeverityTable::default(), &mut RngStream::new(l as u64, 0))
                .unwrap();
            let bound = 1.0 + 0.2 * f64::from(l);
            for k in 0..3 {
                let f0 = out.point(0)[k] / c.point(0)[k];
                assert!(f0 >= 1.0 / bound - 1e-12 && f0 <= bound + 1e-12);
                for (a, b) in c.points().iter().zip(out.points()) {
                    assert!((b[k] / a[k] - f0).abs() <= 1e-9);
                    assert_eq!(a[k].signum(), b[k].signum());
                }
            }
        }
    }

    #[test]
    fn rotation_preserves_distances() {
        let c = cloud(64, 6);
        let out = apply_corruption(&c, spec(Family::Rotate, 5), &SeverityTable::default(), &mut RngStream::new(3, 0)).unwrap();
        for i in 0..64 {
            for j in 0..64 {
                let a = dist2(&c.point(i), &c.point(j)).sqrt();
                let b = dist2(&out.point(i), &out.point(j)).sqrt();
                assert!((a - b).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn deterministic_given_stream() {
        let c = cloud(128, 7);
        for f in Family::ALL {
            let a = apply_corruption(&c, spec(f, 4), &SeverityTable::default(), &mut RngStream::new(9, 9)).unwrap();
            let b = apply_corruption(&c, spec(f, 4), &SeverityTable::default(), &mut RngStream::new(9, 9)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn family_names_roundtrip() {
        for f in Family::ALL {
            assert_eq!(f.name().parse::<Family>().unwrap(), f);
            assert_eq!(f.label().parse::<Family>().unwrap(), f);
        }
        assert!("smudge".parse::<Family>().is_err());
    }
}
