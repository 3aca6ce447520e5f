use std::f64::consts::FRAC_PI_4;

use serde::{Deserialize, Serialize};

use super::{Point, PointCloud};
use crate::{Error, Result};

/// Per-axis rotation bound in radians.
pub const ROTATION_BOUND: f64 = FRAC_PI_4;
/// Per-axis translation bound.
pub const TRANSLATION_BOUND: f64 = 0.5;
/// Allowed scale factors.
pub const SCALE_RANGE: (f64, f64) = (0.5, 2.0);

const RANGE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EditDirection {
    Ascent,
    Descent,
}

/// Points at one snapshot of a structure-edit trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditRef {
    pub direction: EditDirection,
    pub step: usize,
}

/// Combined rotation-then-translation parameters, the search space of the
/// adversarial attack.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RigidParams {
    pub theta: [f64; 3],
    pub delta: [f64; 3],
}

impl RigidParams {
    pub fn from_vec(u: &[f64; 6]) -> Self {
        Self {
            theta: [u[0], u[1], u[2]],
            delta: [u[3], u[4], u[5]],
        }
    }

    pub fn to_vec(self) -> [f64; 6] {
        [
            self.theta[0],
            self.theta[1],
            self.theta[2],
            self.delta[0],
            self.delta[1],
            self.delta[2],
        ]
    }

    /// Applies without range checks.
    pub fn apply_points(&self, points: &[Point]) -> Vec<Point> {
        let r = rotation_matrix(self.theta);
        let d = self.delta;
        points
            .iter()
            .map(|p| {
                let q = mat_vec(&r, p);
                [q[0] + d[0], q[1] + d[1], q[2] + d[2]]
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Transform {
    Identity,
    Rotation { theta: [f64; 3] },
    Translation { delta: [f64; 3] },
    Scale { alpha: f64 },
    StructureEdit { edit: EditRef },
    Rigid { params: RigidParams },
}

impl Transform {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Transform::Identity => "identity",
            Transform::Rotation { .. } => "rotation",
            Transform::Translation { .. } => "translation",
            Transform::Scale { .. } => "scale",
            Transform::StructureEdit { .. } => "structure-edit",
            Transform::Rigid { .. } => "rigid",
        }
    }

    /// Checks the enumeration ranges.
    pub fn validate(&self) -> Result<()> {
        let within = |v: &[f64; 3], b: f64| v.iter().all(|x| x.is_finite() && x.abs() <= b + RANGE_SLACK);
        let ok = match self {
            Transform::Identity | Transform::StructureEdit { .. } => true,
            Transform::Rotation { theta } => within(theta, ROTATION_BOUND),
            Transform::Translation { delta } => within(delta, TRANSLATION_BOUND),
            Transform::Scale { alpha } => {
                *alpha >= SCALE_RANGE.0 - RANGE_SLACK && *alpha <= SCALE_RANGE.1 + RANGE_SLACK
            }
            Transform::Rigid { params } => {
                within(&params.theta, ROTATION_BOUND) && within(&params.delta, TRANSLATION_BOUND)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::arg(format!("transform out of range: {self:?}")))
        }
    }

    /// Short human-readable parameter string, used in CSV exports.
    pub fn describe(&self) -> String {
        match self {
            Transform::Identity => "identity".into(),
            Transform::Rotation { theta } => format!("rot({:.4},{:.4},{:.4})", theta[0], theta[1], theta[2]),
            Transform::Translation { delta } => format!("trans({:.4},{:.4},{:.4})", delta[0], delta[1], delta[2]),
            Transform::Scale { alpha } => format!("scale({alpha:.4})"),
            Transform::StructureEdit { edit } => {
                let d = match edit.direction {
                    EditDirection::Ascent => "up",
                    EditDirection::Descent => "down",
                };
                format!("edit({d},{})", edit.step)
            }
            Transform::Rigid { params } => format!(
                "rigid({:.4},{:.4},{:.4};{:.4},{:.4},{:.4})",
                params.theta[0], params.theta[1], params.theta[2], params.delta[0], params.delta[1], params.delta[2]
            ),
        }
    }
}

/// R = Rz(θ3)·Ry(θ2)·Rx(θ1): rotate about x first, then y, then z, all about the origin.
pub fn rotation_matrix(theta: [f64; 3]) -> [[f64; 3]; 3] {
    let (sx, cx) = theta[0].sin_cos();
    let (sy, cy) = theta[1].sin_cos();
    let (sz, cz) = theta[2].sin_cos();
    let rx = [[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]];
    let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
    let rz = [[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]];
    mat_mul(&rz, &mat_mul(&ry, &rx))
}

pub(crate) fn mat_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    c
}

#[inline]
pub(crate) fn mat_vec(m: &[[f64; 3]; 3], p: &Point) -> Point {
    [
        m[0][0] * p[0] + m[0][1] * p[1] + m[0][2] * p[2],
        m[1][0] * p[0] + m[1][1] * p[1] + m[1][2] * p[2],
        m[2][0] * p[0] + m[2][1] * p[1] + m[2][2] * p[2],
    ]
}

/// Applies a rigid or scale transform. Structure edits are not parametric and
/// are materialized by the structure editor instead.
pub fn apply_transform(cloud: &PointCloud, t: &Transform) -> Result<PointCloud> {
    t.validate()?;
    let points = match t {
        Transform::Identity => cloud.points.clone(),
        Transform::Rotation { theta } => {
            let r = rotation_matrix(*theta);
            cloud.points.iter().map(|p| mat_vec(&r, p)).collect()
        }
        Transform::Translation { delta } => cloud
            .points
            .iter()
            .map(|p| [p[0] + delta[0], p[1] + delta[1], p[2] + delta[2]])
            .collect(),
        Transform::Scale { alpha } => cloud.points.iter().map(|p| p.map(|c| c * alpha)).collect(),
        Transform::Rigid { params } => params.apply_points(&cloud.points),
        Transform::StructureEdit { .. } => {
            return Err(Error::arg("structure edits are taken from an edit trajectory"))
        }
    };
    Ok(cloud.with_points(points))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridKind {
    Rotation,
    Translation,
    Scale,
}

/// A deterministic family of transforms of one kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformGrid {
    pub kind: GridKind,
    /// One value list per axis (a single list for scale).
    pub axis_values: Vec<Vec<f64>>,
    pub include_identity: bool,
}

fn linspace(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    match steps {
        0 => vec![],
        1 => vec![0.5 * (lo + hi)],
        _ => (0..steps)
            .map(|k| {
                if k == steps - 1 {
                    hi
                } else {
                    lo + (hi - lo) * k as f64 / (steps - 1) as f64
                }
            })
            .collect(),
    }
}

impl TransformGrid {
    /// `steps` evenly spaced angles per axis over [−π/4, π/4].
    pub fn rotation(steps: usize) -> Self {
        let v = linspace(-ROTATION_BOUND, ROTATION_BOUND, steps);
        Self {
            kind: GridKind::Rotation,
            axis_values: vec![v.clone(), v.clone(), v],
            include_identity: true,
        }
    }

    /// `steps` evenly spaced offsets per axis over [−0.5, 0.5].
    pub fn translation(steps: usize) -> Self {
        let v = linspace(-TRANSLATION_BOUND, TRANSLATION_BOUND, steps);
        Self {
            kind: GridKind::Translation,
            axis_values: vec![v.clone(), v.clone(), v],
            include_identity: true,
        }
    }

    /// `steps` log-spaced factors over [0.5, 2].
    pub fn scale(steps: usize) -> Self {
        let (lo, hi) = (SCALE_RANGE.0.ln(), SCALE_RANGE.1.ln());
        let v = linspace(lo, hi, steps)
            .into_iter()
            .enumerate()
            .map(|(k, l)| match k {
                0 => SCALE_RANGE.0,
                _ if k == steps - 1 => SCALE_RANGE.1,
                _ => l.exp(),
            })
            .collect();
        Self {
            kind: GridKind::Scale,
            axis_values: vec![v],
            include_identity: true,
        }
    }

    /// Only the identity transform.
    pub fn identity_only(kind: GridKind) -> Self {
        Self {
            kind,
            axis_values: vec![],
            include_identity: true,
        }
    }

    pub fn transforms(&self) -> Vec<Transform> {
        let mut out = Vec::new();
        match self.kind {
            GridKind::Scale => {
                if let Some(vals) = self.axis_values.first() {
                    out.extend(vals.iter().map(|&alpha| Transform::Scale { alpha }));
                }
            }
            GridKind::Rotation | GridKind::Translation => {
                if self.axis_values.len() == 3 {
                    for &a in &self.axis_values[0] {
                        for &b in &self.axis_values[1] {
                            for &c in &self.axis_values[2] {
                                let v = [a, b, c];
                                out.push(match self.kind {
                                    GridKind::Rotation => Transform::Rotation { theta: v },
                                    _ => Transform::Translation { delta: v },
                                });
                            }
                        }
                    }
                }
            }
        }
        let has_identity = out.iter().any(|t| match t {
            Transform::Rotation { theta: v } | Transform::Translation { delta: v } => v.iter().all(|x| *x == 0.0),
            Transform::Scale { alpha } => *alpha == 1.0,
            _ => false,
        });
        if self.include_identity && !has_identity {
            out.insert(0, Transform::Identity);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let ts = self.transforms();
        if ts.is_empty() {
            return Err(Error::arg("empty transform grid"));
        }
        ts.iter().try_for_each(|t| t.validate())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::dist2;
    use proptest::prelude::*;

    fn cloud(points: Vec<Point>) -> PointCloud {
        PointCloud::new(points).unwrap()
    }

    #[test]
    fn zero_rotation_is_identity() {
        let c = cloud(vec![[0.1, 0.2, 0.3], [-1.0, 0.5, 2.0]]);
        let r = apply_transform(&c, &Transform::Rotation { theta: [0.0; 3] }).unwrap();
        assert_eq!(r, c);
        assert_eq!(apply_transform(&c, &Transform::Identity).unwrap(), c);
    }

    #[test]
    fn single_axis_rotation() {
        let c = cloud(vec![[0.0, 1.0, 0.0]]);
        let r = apply_transform(&c, &Transform::Rotation { theta: [FRAC_PI_4, 0.0, 0.0] }).unwrap();
        let h = 0.5f64.sqrt();
        let p = r.points[0];
        assert!(p[0].abs() < 1e-15 && (p[1] - h).abs() < 1e-15 && (p[2] - h).abs() < 1e-15);
    }

    #[test]
    fn out_of_range_rejected() {
        let c = cloud(vec![[0.0; 3]]);
        assert!(apply_transform(&c, &Transform::Rotation { theta: [1.0, 0.0, 0.0] }).is_err());
        assert!(apply_transform(&c, &Transform::Translation { delta: [0.0, 0.6, 0.0] }).is_err());
        assert!(apply_transform(&c, &Transform::Scale { alpha: 0.4 }).is_err());
        assert!(apply_transform(&c, &Transform::Scale { alpha: 2.0 }).is_ok());
    }

    #[test]
    fn grids_are_in_range_and_anchored() {
        for g in [TransformGrid::rotation(3), TransformGrid::translation(3), TransformGrid::scale(7)] {
            g.validate().unwrap();
            let ts = g.transforms();
            // odd resolutions contain the identity point, so nothing is prepended
            assert!(!ts.contains(&Transform::Identity));
        }
        assert_eq!(TransformGrid::rotation(3).transforms().len(), 27);
        assert_eq!(TransformGrid::rotation(2).transforms().len(), 9);
        assert_eq!(TransformGrid::rotation(2).transforms()[0], Transform::Identity);
        let s = TransformGrid::scale(7).axis_values[0].clone();
        assert_eq!(s[0], 0.5);
        assert_eq!(s[6], 2.0);
        assert!((s[3] - 1.0).abs() < 1e-15);
        assert_eq!(TransformGrid::identity_only(GridKind::Rotation).transforms(), vec![Transform::Identity]);
    }

    proptest! {
        #[test]
        fn rotations_are_proper_isometries(a in -FRAC_PI_4..FRAC_PI_4, b in -FRAC_PI_4..FRAC_PI_4, c in -FRAC_PI_4..FRAC_PI_4,
                                           pts in prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 2..20)) {
            let r = rotation_matrix([a, b, c]);
            for i in 0..3 {
                for j in 0..3 {
                    let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                    let expect = if i == j { 1.0 } else { 0.0 };
                    prop_assert!((dot - expect).abs() < 1e-12);
                }
            }
            let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
                - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
                + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
            prop_assert!((det - 1.0).abs() < 1e-12);
            let c0 = cloud(pts);
            let c1 = apply_transform(&c0, &Transform::Rotation { theta: [a, b, c] }).unwrap();
            for i in 0..c0.len() {
                for j in 0..c0.len() {
                    let d0 = dist2(&c0.points[i], &c0.points[j]).sqrt();
                    let d1 = dist2(&c1.points[i], &c1.points[j]).sqrt();
                    prop_assert!((d0 - d1).abs() < 1e-12);
                }
            }
        }
    }
}
