use std::f64::consts::PI;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::geometry::{normalize, Point, PointCloud};
use crate::{Error, Result};

/// Analytic shape families of the synthetic dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeClass {
    SphereSurface,
    BoxSurface,
    Cylinder,
    Cone,
    LineFrame,
    Plane,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 6] = [
        Self::SphereSurface,
        Self::BoxSurface,
        Self::Cylinder,
        Self::Cone,
        Self::LineFrame,
        Self::Plane,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::SphereSurface => "sphere-surface",
            Self::BoxSurface => "box-surface",
            Self::Cylinder => "cylinder",
            Self::Cone => "cone",
            Self::LineFrame => "line-frame",
            Self::Plane => "plane",
        }
    }
}

impl FromStr for ShapeClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::arg(format!("unknown shape class {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub classes: Vec<ShapeClass>,
    pub per_class: usize,
    /// How many of each class's samples are tagged `test`.
    pub test_per_class: usize,
    pub points: usize,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            classes: ShapeClass::ALL.to_vec(),
            per_class: 50,
            test_per_class: 10,
            points: crate::geometry::DEFAULT_POINTS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub classes: Vec<ShapeClass>,
    pub samples: Vec<PointCloud>,
    pub splits: Vec<Split>,
    pub seed: u64,
}

impl SyntheticDataset {
    pub fn split(&self, which: Split) -> Vec<&PointCloud> {
        self.samples.iter().zip(&self.splits).filter(|(_, s)| **s == which).map(|(c, _)| c).collect()
    }

    pub fn train(&self) -> Vec<&PointCloud> {
        self.split(Split::Train)
    }

    pub fn test(&self) -> Vec<&PointCloud> {
        self.split(Split::Test)
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Up to `count` test clouds taken round-robin over labels, so small
    /// subsets still cover every class.
    pub fn balanced_test(&self, count: usize) -> Vec<&PointCloud> {
        let test = self.test();
        let mut by_label: Vec<Vec<&PointCloud>> = vec![vec![]; self.num_classes().max(1)];
        for c in test {
            let last = by_label.len() - 1;
            by_label[c.label.unwrap_or(0).min(last)].push(c);
        }
        let mut out = Vec::with_capacity(count);
        let mut k = 0;
        while out.len() < count && by_label.iter().any(|b| k < b.len()) {
            for b in &by_label {
                if out.len() < count && k < b.len() {
                    out.push(b[k]);
                }
            }
            k += 1;
        }
        out
    }
}

/// Gaussian jitter added to every sampled surface point.
pub const JITTER_SIGMA: f64 = 0.01;

/// Samples labelled clouds class by class; sample `k` of class `c` draws from
/// its own seed substream, so the dataset is identical for any worker count.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<SyntheticDataset> {
    if spec.per_class == 0 {
        return Err(Error::arg("per_class must be at least 1"));
    }
    if spec.points < 64 {
        return Err(Error::arg("clouds need at least 64 points"));
    }
    if spec.test_per_class > spec.per_class {
        return Err(Error::arg("test_per_class exceeds per_class"));
    }
    if spec.classes.is_empty() {
        return Err(Error::arg("no classes"));
    }
    let jobs: Vec<(usize, usize)> = (0..spec.classes.len())
        .flat_map(|c| (0..spec.per_class).map(move |k| (c, k)))
        .collect();
    let samples = crate::par::try_map_indexed(jobs.len(), |j| {
        let (c, k) = jobs[j];
        let mut rng = crate::seed::rng(spec.seed, &[c as u64, k as u64]);
        let raw = sample_shape(spec.classes[c], spec.points, &mut rng);
        let theta = rng.random_range(0.0..2.0 * PI);
        let (s, co) = theta.sin_cos();
        let rotated: Vec<Point> = raw.iter().map(|p| [co * p[0] + s * p[2], p[1], -s * p[0] + co * p[2]]).collect();
        let cloud = PointCloud::new(rotated)?;
        Ok(normalize(&cloud)?
            .with_label(c)
            .with_id(format!("{}_{k:04}", spec.classes[c].name())))
    })?;
    let splits = jobs
        .iter()
        .map(|&(_, k)| if k + spec.test_per_class >= spec.per_class { Split::Test } else { Split::Train })
        .collect();
    Ok(SyntheticDataset {
        classes: spec.classes.clone(),
        samples,
        splits,
        seed: spec.seed,
    })
}

pub(crate) fn unit_vector(rng: &mut impl Rng) -> Point {
    loop {
        let v: Point = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let n = crate::geometry::norm(&v);
        if n > 1e-9 {
            return v.map(|c| c / n);
        }
    }
}

/// Raw surface samples with jitter, before orientation and normalization.
pub(crate) fn sample_shape(class: ShapeClass, p: usize, rng: &mut impl Rng) -> Vec<Point> {
    let jitter = Normal::new(0.0, JITTER_SIGMA).expect("valid sigma");
    let mut pts: Vec<Point> = match class {
        ShapeClass::SphereSurface => (0..p).map(|_| unit_vector(rng)).collect(),
        ShapeClass::BoxSurface => {
            let h = [rng.random_range(0.4..1.0), rng.random_range(0.4..1.0), rng.random_range(0.4..1.0)];
            // faces weighted by area
            let areas = [h[1] * h[2], h[0] * h[2], h[0] * h[1]];
            let total: f64 = areas.iter().sum();
            (0..p)
                .map(|_| {
                    let mut u = rng.random_range(0.0..total);
                    let mut axis = 0;
                    while axis < 2 && u >= areas[axis] {
                        u -= areas[axis];
                        axis += 1;
                    }
                    let mut q = [0.0; 3];
                    for (c, qc) in q.iter_mut().enumerate() {
                        *qc = if c == axis {
                            if rng.random_bool(0.5) { h[c] } else { -h[c] }
                        } else {
                            rng.random_range(-h[c]..h[c])
                        };
                    }
                    q
                })
                .collect()
        }
        ShapeClass::Cylinder => {
            let r = rng.random_range(0.3..0.6);
            let half = rng.random_range(0.5..1.0);
            let side = 2.0 * PI * r * 2.0 * half;
            let cap = PI * r * r;
            (0..p)
                .map(|_| {
                    let a = rng.random_range(0.0..2.0 * PI);
                    let u = rng.random_range(0.0..side + 2.0 * cap);
                    if u < side {
                        [r * a.cos(), rng.random_range(-half..half), r * a.sin()]
                    } else {
                        let rr = r * rng.random_range(0.0f64..1.0).sqrt();
                        let y = if u < side + cap { half } else { -half };
                        [rr * a.cos(), y, rr * a.sin()]
                    }
                })
                .collect()
        }
        ShapeClass::Cone => {
            let r: f64 = rng.random_range(0.4..0.8);
            let height: f64 = rng.random_range(1.0..2.0);
            let slant = (r * r + height * height).sqrt();
            let side = PI * r * slant;
            let base = PI * r * r;
            (0..p)
                .map(|_| {
                    let a = rng.random_range(0.0..2.0 * PI);
                    if rng.random_range(0.0..side + base) < side {
                        // uniform on the lateral surface: radius ∝ sqrt(u)
                        let t = rng.random_range(0.0f64..1.0).sqrt();
                        [t * r * a.cos(), height * (1.0 - t), t * r * a.sin()]
                    } else {
                        let rr = r * rng.random_range(0.0f64..1.0).sqrt();
                        [rr * a.cos(), 0.0, rr * a.sin()]
                    }
                })
                .collect()
        }
        ShapeClass::LineFrame => {
            let h = [rng.random_range(0.4..1.0), rng.random_range(0.4..1.0), rng.random_range(0.4..1.0)];
            let lengths = [h[0], h[1], h[2]];
            let total: f64 = lengths.iter().map(|l| 4.0 * l).sum();
            (0..p)
                .map(|_| {
                    let mut u = rng.random_range(0.0..total);
                    let mut axis = 0;
                    while axis < 2 && u >= 4.0 * lengths[axis] {
                        u -= 4.0 * lengths[axis];
                        axis += 1;
                    }
                    let mut q = [0.0; 3];
                    for (c, qc) in q.iter_mut().enumerate() {
                        *qc = if c == axis {
                            rng.random_range(-h[c]..h[c])
                        } else if rng.random_bool(0.5) {
                            h[c]
                        } else {
                            -h[c]
                        };
                    }
                    q
                })
                .collect()
        }
        ShapeClass::Plane => {
            let w = rng.random_range(0.5..1.0);
            let hgt = rng.random_range(0.5..1.0);
            (0..p).map(|_| [rng.random_range(-w..w), rng.random_range(-hgt..hgt), 0.0]).collect()
        }
    };
    for q in &mut pts {
        for c in q.iter_mut() {
            *c += jitter.sample(rng);
        }
    }
    pts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_points_near_unit_norm() {
        let mut rng = crate::seed::rng(1, &[]);
        let pts = sample_shape(ShapeClass::SphereSurface, 2000, &mut rng);
        // each coordinate carries N(0, σ²) jitter; the radial part is within a few σ
        let bad = pts.iter().filter(|p| (crate::geometry::norm(p) - 1.0).abs() > 3.0 * JITTER_SIGMA).count();
        assert!(bad < 2000 / 100, "{bad} points outside 3σ");
        assert!(pts.iter().all(|p| (crate::geometry::norm(p) - 1.0).abs() < 6.0 * JITTER_SIGMA));
    }

    #[test]
    fn deterministic_and_balanced() {
        let spec = DatasetSpec {
            per_class: 50,
            test_per_class: 10,
            points: 64,
            seed: 9,
            ..Default::default()
        };
        let a = generate_dataset(&spec).unwrap();
        let b = generate_dataset(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.samples.len(), 300);
        let mut counts = [0; 6];
        for s in &a.samples {
            counts[s.label.unwrap()] += 1;
            assert_eq!(s.len(), 64);
            let max = s.points.iter().map(crate::geometry::norm).fold(0.0, f64::max);
            assert!((max - 1.0).abs() < 1e-12);
        }
        assert_eq!(counts, [50; 6]);
        assert_eq!(a.test().len(), 60);
        assert_eq!(a.train().len(), 240);
    }

    #[test]
    fn unknown_class_is_rejected() {
        assert!("torus".parse::<ShapeClass>().is_err());
        assert_eq!("line-frame".parse::<ShapeClass>().unwrap(), ShapeClass::LineFrame);
        let spec = DatasetSpec { points: 32, ..Default::default() };
        assert!(generate_dataset(&spec).is_err());
    }
}
