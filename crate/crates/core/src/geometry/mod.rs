//! Point clouds, rigid and scale transforms, region partitioning, coalition
//! masking and region neighborhoods.

mod region;
mod transform;

pub use region::{
    build_neighbor_graph, farthest_point_sample, mask_coalition, partition, Coalition,
    NeighborGraph, RegionPartition, MAX_REGIONS,
};
pub use transform::{
    apply_transform, rotation_matrix, EditDirection, EditRef, GridKind, RigidParams, Transform,
    TransformGrid, ROTATION_BOUND, SCALE_RANGE, TRANSLATION_BOUND,
};
pub(crate) use region::mask_with_point;
pub(crate) use transform::{mat_mul as transform_mat_mul, mat_vec as transform_mat_vec};

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type Point = [f64; 3];

/// Default number of points per cloud.
pub const DEFAULT_POINTS: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Point>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
}

impl PointCloud {
    /// Builds a cloud, rejecting non-finite coordinates.
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if let Some(k) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::Parse(format!("point {k} has a non-finite coordinate")));
        }
        Ok(Self {
            points,
            label: None,
            id: None,
        })
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = Some(id.into());
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Same metadata, new coordinates.
    pub fn with_points(&self, points: Vec<Point>) -> Self {
        Self {
            points,
            label: self.label,
            id: self.id.clone(),
        }
    }

    pub fn centroid(&self) -> Point {
        centroid(&self.points)
    }

    /// Parses the text format: optional `#label <int>` header, then one
    /// whitespace-separated `x y z` triple per line. Other `#` lines are comments.
    pub fn parse(text: &str) -> Result<Self> {
        let mut label = None;
        let mut points = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let mut parts = rest.split_whitespace();
                if parts.next() == Some("label") {
                    let v = parts
                        .next()
                        .ok_or_else(|| Error::Parse(format!("line {}: missing label value", lineno + 1)))?;
                    label = Some(v.parse::<usize>().map_err(|e| {
                        Error::Parse(format!("line {}: bad label {v:?}: {e}", lineno + 1))
                    })?);
                }
                continue;
            }
            let mut coords = [0.0; 3];
            let mut fields = line.split_whitespace();
            for c in coords.iter_mut() {
                let f = fields
                    .next()
                    .ok_or_else(|| Error::Parse(format!("line {}: expected 3 coordinates", lineno + 1)))?;
                *c = f
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {}: {f:?}: {e}", lineno + 1)))?;
                if !c.is_finite() {
                    return Err(Error::Parse(format!("line {}: non-finite coordinate", lineno + 1)));
                }
            }
            if fields.next().is_some() {
                return Err(Error::Parse(format!("line {}: expected 3 coordinates", lineno + 1)));
            }
            points.push(coords);
        }
        Ok(Self {
            points,
            label,
            id: None,
        })
    }

    /// Serializes to the text format. Coordinates use shortest round-trip formatting.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.points.len() * 48);
        if let Some(l) = self.label {
            let _ = writeln!(out, "#label {l}");
        }
        for p in &self.points {
            let _ = writeln!(out, "{} {} {}", p[0], p[1], p[2]);
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cloud = Self::parse(&text)?;
        cloud.id = path.file_stem().map(|s| s.to_string_lossy().into_owned());
        Ok(cloud)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

pub fn centroid(points: &[Point]) -> Point {
    let mut c = [0.0; 3];
    for p in points {
        for k in 0..3 {
            c[k] += p[k];
        }
    }
    let n = points.len().max(1) as f64;
    c.map(|v| v / n)
}

#[inline]
pub fn norm(p: &Point) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

#[inline]
pub fn dist2(a: &Point, b: &Point) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

/// Centers the cloud at the origin and scales it so the farthest point has norm 1.
///
/// A cloud that is already normalized (to 1e-12) is returned unchanged.
pub fn normalize(cloud: &PointCloud) -> Result<PointCloud> {
    if cloud.is_empty() {
        return Err(Error::DegenerateCloud("empty cloud".into()));
    }
    let c = cloud.centroid();
    let max_norm = cloud.points.iter().map(norm).fold(0.0, f64::max);
    if norm(&c) < 1e-12 && (max_norm - 1.0).abs() < 1e-12 {
        return Ok(cloud.clone());
    }
    let radius = cloud
        .points
        .iter()
        .map(|p| norm(&[p[0] - c[0], p[1] - c[1], p[2] - c[2]]))
        .fold(0.0, f64::max);
    if radius < 1e-12 {
        return Err(Error::DegenerateCloud("all points identical".into()));
    }
    let points = cloud
        .points
        .iter()
        .map(|p| [(p[0] - c[0]) / radius, (p[1] - c[1]) / radius, (p[2] - c[2]) / radius])
        .collect();
    Ok(cloud.with_points(points))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn normalize_symmetric_pair() {
        let c = PointCloud::new(vec![[2.0, 0.0, 0.0], [-2.0, 0.0, 0.0]]).unwrap();
        let n = normalize(&c).unwrap();
        assert_eq!(n.points, vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]);
    }

    #[test]
    fn normalize_is_idempotent() {
        let mut rng = crate::seed::rng(3, &[]);
        let pts: Vec<Point> = (0..1024)
            .map(|_| [rng.random_range(-3.0..5.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..2.0)])
            .collect();
        let once = normalize(&PointCloud::new(pts).unwrap()).unwrap();
        assert!(norm(&once.centroid()) < 1e-12);
        let max = once.points.iter().map(norm).fold(0.0, f64::max);
        assert!((max - 1.0).abs() < 1e-12);
        let twice = normalize(&once).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn normalize_rejects_identical_points() {
        let c = PointCloud::new(vec![[0.3, 0.3, 0.3]; 5]).unwrap();
        assert!(matches!(normalize(&c), Err(Error::DegenerateCloud(_))));
    }

    #[test]
    fn text_format_round_trip() {
        let c = PointCloud::new(vec![[0.1, -2.5e-7, 3.0], [1.0 / 3.0, 0.0, -1.0]])
            .unwrap()
            .with_label(4);
        let parsed = PointCloud::parse(&c.to_text()).unwrap();
        assert_eq!(parsed, c);
    }

    #[test]
    fn loader_rejects_nan_and_inf() {
        assert!(PointCloud::parse("0 0 NaN\n").is_err());
        assert!(PointCloud::parse("#label 1\n0 inf 0\n").is_err());
        assert!(PointCloud::parse("0 0\n").is_err());
        assert!(PointCloud::parse("0 0 0 0\n").is_err());
    }
}
