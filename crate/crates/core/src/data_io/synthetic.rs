//! Parametric shape dataset: uniform surface samples of six primitive
//! shapes under a random upright pose.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geom::{euler_to_rotation, normalize_unit_sphere, rotate, EulerAngles, Point, PointCloud};
use crate::rng::RngStream;

pub const TORUS_MAJOR: f64 = 1.0;
pub const TORUS_MINOR: f64 = 0.35;
pub const CONE_HALF_ANGLE_DEG: f64 = 30.0;
/// Cone apex at z = +1, base disc at z = -1.
pub const CONE_HEIGHT: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ShapeClass {
    Sphere,
    Cube,
    Cylinder,
    Cone,
    Torus,
    Plane,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 6] = [
        ShapeClass::Sphere,
        ShapeClass::Cube,
        ShapeClass::Cylinder,
        ShapeClass::Cone,
        ShapeClass::Torus,
        ShapeClass::Plane,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeClass::Sphere => "sphere",
            ShapeClass::Cube => "cube",
            ShapeClass::Cylinder => "cylinder",
            ShapeClass::Cone => "cone",
            ShapeClass::Torus => "torus",
            ShapeClass::Plane => "plane",
        }
    }

    /// Uniform surface sample in the canonical frame.
    pub fn sample(self, n: usize, rng: &mut RngStream) -> Vec<Point> {
        (0..n).map(|_| self.sample_one(rng)).collect()
    }

    fn sample_one(self, rng: &mut RngStream) -> Point {
        match self {
            ShapeClass::Sphere => loop {
                let p = [rng.normal(), rng.normal(), rng.normal()];
                let r = crate::geom::norm(&p);
                if r > 1e-12 {
                    break [p[0] / r, p[1] / r, p[2] / r];
                }
            },
            ShapeClass::Cube => {
                let face = rng.below(6);
                let axis = face / 2;
                let side = if face % 2 == 0 { 1.0 } else { -1.0 };
                let a = rng.uniform_range(-1.0, 1.0);
                let b = rng.uniform_range(-1.0, 1.0);
                match axis {
                    0 => [side, a, b],
                    1 => [a, side, b],
                    _ => [a, b, side],
                }
            }
            ShapeClass::Cylinder => {
                // lateral area 4π, each cap π
                let u = rng.uniform() * 6.0;
                let theta = rng.uniform() * TAU;
                if u < 4.0 {
                    [theta.cos(), theta.sin(), rng.uniform_range(-1.0, 1.0)]
                } else {
                    let r = rng.uniform().sqrt();
                    let z = if u < 5.0 { 1.0 } else { -1.0 };
                    [r * theta.cos(), r * theta.sin(), z]
                }
            }
            ShapeClass::Cone => {
                let base_r = CONE_HEIGHT * CONE_HALF_ANGLE_DEG.to_radians().tan();
                let slant = (CONE_HEIGHT * CONE_HEIGHT + base_r * base_r).sqrt();
                let lateral = PI * base_r * slant;
                let base = PI * base_r * base_r;
                let theta = rng.uniform() * TAU;
                if rng.uniform() * (lateral + base) < lateral {
                    let t = rng.uniform().sqrt();
                    let r = base_r * t;
                    [r * theta.cos(), r * theta.sin(), 1.0 - CONE_HEIGHT * t]
                } else {
                    let r = base_r * rng.uniform().sqrt();
                    [r * theta.cos(), r * theta.sin(), 1.0 - CONE_HEIGHT]
                }
            }
            ShapeClass::Torus => loop {
                let u = rng.uniform() * TAU;
                let v = rng.uniform() * TAU;
                let ring = TORUS_MAJOR + TORUS_MINOR * v.cos();
                if rng.uniform() * (TORUS_MAJOR + TORUS_MINOR) <= ring {
                    break [ring * u.cos(), ring * u.sin(), TORUS_MINOR * v.sin()];
                }
            },
            ShapeClass::Plane => [rng.uniform_range(-1.0, 1.0), rng.uniform_range(-1.0, 1.0), 0.0],
        }
    }
}

impl fmt::Display for ShapeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShapeClass::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown shape class {s}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub classes: Vec<ShapeClass>,
    pub samples_per_class: usize,
    pub n_points: usize,
    /// Yaw about the z axis is uniform in `±max_rotation_deg`.
    pub max_rotation_deg: f64,
    /// Per-axis anisotropic scale range.
    pub scale_range: (f64, f64),
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            classes: ShapeClass::ALL.to_vec(),
            samples_per_class: 100,
            n_points: 256,
            max_rotation_deg: 180.0,
            scale_range: (0.8, 1.2),
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 {
            return Err(Error::invalid("synthetic data needs at least two classes"));
        }
        let mut uniq = self.classes.clone();
        uniq.sort_by_key(|c| c.name());
        uniq.dedup();
        if uniq.len() != self.classes.len() {
            return Err(Error::invalid("duplicate class in synthetic config"));
        }
        if self.n_points < 64 {
            return Err(Error::invalid(format!("n_points must be >= 64, got {}", self.n_points)));
        }
        if self.samples_per_class == 0 {
            return Err(Error::invalid("samples_per_class must be positive"));
        }
        if !(0.0..=180.0).contains(&self.max_rotation_deg) {
            return Err(Error::invalid("max_rotation_deg must be within [0, 180]"));
        }
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::invalid("scale range must satisfy 0 < lo <= hi"));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::invalid("test_fraction must be in [0, 1)"));
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name().to_string()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split {other}"))),
        }
    }
}

/// One generated sample.
#[derive(Clone, Debug)]
pub struct Sample {
    pub cloud: PointCloud,
    pub class_id: usize,
    pub index_in_class: usize,
    pub split: Split,
}

const POSE_STREAM: u64 = 0x706f7365;
const SPLIT_STREAM: u64 = 0x73706c69;

/// Generates sample `index` of class `class_id` (posed and normalised).
pub fn make_sample(cfg: &SyntheticConfig, class_id: usize, index: usize) -> PointCloud {
    let class = cfg.classes[class_id];
    let mut rng = RngStream::derive(cfg.seed, &[POSE_STREAM, class_id as u64, index as u64]);
    let raw = class.sample(cfg.n_points, &mut rng);
    let (lo, hi) = cfg.scale_range;
    let scale = [
        rng.uniform_range(lo, hi),
        rng.uniform_range(lo, hi),
        rng.uniform_range(lo, hi),
    ];
    let yaw = rng.uniform_range(-1.0, 1.0) * cfg.max_rotation_deg.to_radians();
    let rot = euler_to_rotation(EulerAngles::new(0.0, 0.0, yaw));
    let posed = raw
        .iter()
        .map(|p| rotate(&rot, &[p[0] * scale[0], p[1] * scale[1], p[2] * scale[2]]))
        .collect();
    let cloud = PointCloud::new(posed).expect("finite parametric samples");
    normalize_unit_sphere(&cloud).with_label(class_id)
}

/// Test-split indices of one class: a seeded shuffle, first `fraction`.
fn test_indices(cfg: &SyntheticConfig, class_id: usize) -> Vec<bool> {
    let n = cfg.samples_per_class;
    let mut order: Vec<usize> = (0..n).collect();
    RngStream::derive(cfg.seed, &[SPLIT_STREAM, class_id as u64]).shuffle(&mut order);
    let n_test = (n as f64 * cfg.test_fraction).round() as usize;
    let mut is_test = vec![false; n];
    for &i in &order[..n_test] {
        is_test[i] = true;
    }
    is_test
}

/// Every sample, class-major, with its split.
pub fn generate_samples(cfg: &SyntheticConfig) -> Result<Vec<Sample>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(cfg.classes.len() * cfg.samples_per_class);
    for class_id in 0..cfg.classes.len() {
        let is_test = test_indices(cfg, class_id);
        for (i, &t) in is_test.iter().enumerate() {
            out.push(Sample {
                cloud: make_sample(cfg, class_id, i),
                class_id,
                index_in_class: i,
                split: if t { Split::Test } else { Split::Train },
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_points_on_unit_sphere() {
        let mut r = RngStream::new(0, 0);
        for p in ShapeClass::Sphere.sample(500, &mut r) {
            assert!((crate::geom::norm(&p) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn canonical_shapes_satisfy_their_equations() {
        let mut r = RngStream::new(1, 0);
        for p in ShapeClass::Cube.sample(200, &mut r) {
            let m = p.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            assert!((m - 1.0).abs() < 1e-12);
        }
        for p in ShapeClass::Torus.sample(200, &mut r) {
            let ring = (p[0] * p[0] + p[1] * p[1]).sqrt() - TORUS_MAJOR;
            assert!((ring * ring + p[2] * p[2] - TORUS_MINOR * TORUS_MINOR).abs() < 1e-9);
        }
        for p in ShapeClass::Plane.sample(50, &mut r) {
            assert_eq!(p[2], 0.0);
        }
    }

    #[test]
    fn split_counts() {
        let cfg = SyntheticConfig {
            samples_per_class: 20,
            n_points: 64,
            ..SyntheticConfig::default()
        };
        let s = generate_samples(&cfg).unwrap();
        assert_eq!(s.len(), 120);
        assert_eq!(s.iter().filter(|x| x.split == Split::Test).count(), 24);
    }

    #[test]
    fn samples_are_normalized_and_labelled() {
        let cfg = SyntheticConfig {
            n_points: 64,
            ..SyntheticConfig::default()
        };
        let c = make_sample(&cfg, 3, 7);
        assert_eq!(c.label(), Some(3));
        let r = c.points().iter().map(crate::geom::norm).fold(0.0, f64::max);
        assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn validation() {
        let mut cfg = SyntheticConfig::default();
        cfg.classes.truncate(1);
        assert!(cfg.validate().is_err());
        let cfg = SyntheticConfig {
            n_points: 32,
            ..SyntheticConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
