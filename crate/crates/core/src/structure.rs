//! Local structure measures from region covariance eigenvalues, their analytic
//! gradients, and the constrained gradient-ascent editor that produces the
//! structure-edit transform family.
//!
//! With sorted eigenvalues λ1 ≥ λ2 ≥ λ3 of the (1/m) covariance of a region:
//!
//! ```text
//! linearity  = (λ1 − λ2) / λ1
//! planarity  = (λ2 − λ3) / λ1
//! scattering =  λ3 / λ1
//! ```
//!
//! For a simple eigenvalue λ with unit eigenvector v, the derivative with
//! respect to point p_a is (2/m)·(v·(p_a − μ))·v.

use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::geometry::{EditDirection, Point, PointCloud, RegionPartition};
use crate::{Error, Result};

/// Eigenvalue gaps below this switch the gradient to finite differences.
pub const EIGEN_GAP_TOL: f64 = 1e-9;
const DEGENERATE_LAMBDA: f64 = 1e-24;
const FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StructureTarget {
    Linearity,
    Planarity,
    Scattering,
}

impl StructureTarget {
    pub const ALL: [StructureTarget; 3] = [Self::Linearity, Self::Planarity, Self::Scattering];

    pub fn name(self) -> &'static str {
        match self {
            Self::Linearity => "linearity",
            Self::Planarity => "planarity",
            Self::Scattering => "scattering",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructureMeasures {
    /// Descending.
    pub lambdas: [f64; 3],
    pub linearity: f64,
    pub planarity: f64,
    pub scattering: f64,
}

impl StructureMeasures {
    pub fn get(&self, target: StructureTarget) -> f64 {
        match target {
            StructureTarget::Linearity => self.linearity,
            StructureTarget::Planarity => self.planarity,
            StructureTarget::Scattering => self.scattering,
        }
    }
}

struct Eigen {
    values: [f64; 3],
    vectors: [[f64; 3]; 3],
    mean: Point,
}

fn eigen(points: &[Point]) -> Eigen {
    let m = points.len() as f64;
    let mut mean = [0.0; 3];
    for p in points {
        for k in 0..3 {
            mean[k] += p[k];
        }
    }
    mean = mean.map(|v| v / m);
    let mut c = Matrix3::<f64>::zeros();
    for p in points {
        let d = [p[0] - mean[0], p[1] - mean[1], p[2] - mean[2]];
        for r in 0..3 {
            for s in 0..3 {
                c[(r, s)] += d[r] * d[s];
            }
        }
    }
    c /= m;
    let eig = SymmetricEigen::new(c);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut values = [0.0; 3];
    let mut vectors = [[0.0; 3]; 3];
    for (slot, &k) in order.iter().enumerate() {
        values[slot] = eig.eigenvalues[k].max(0.0);
        let col = eig.eigenvectors.column(k);
        vectors[slot] = [col[0], col[1], col[2]];
    }
    Eigen { values, vectors, mean }
}

fn measures_from(l: [f64; 3]) -> StructureMeasures {
    StructureMeasures {
        lambdas: l,
        linearity: (l[0] - l[1]) / l[0],
        planarity: (l[1] - l[2]) / l[0],
        scattering: l[2] / l[0],
    }
}

/// Measures of an arbitrary point set.
pub fn point_measures(points: &[Point]) -> Option<StructureMeasures> {
    if points.is_empty() {
        return None;
    }
    let e = eigen(points);
    (e.values[0] > DEGENERATE_LAMBDA).then(|| measures_from(e.values))
}

pub fn region_measures(cloud: &PointCloud, part: &RegionPartition, region: usize) -> Result<StructureMeasures> {
    if region >= part.n() {
        return Err(Error::arg(format!("region {region} out of range")));
    }
    point_measures(&part.region_points(cloud, region)).ok_or(Error::DegenerateRegion { region })
}

/// How a gradient was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientKind {
    Analytic,
    /// Eigenvalues (near-)repeated: central differences stand in, which picks
    /// one subgradient of the non-smooth measure.
    FiniteDifference,
}

/// Per-point gradient of `target` for one region's points.
pub fn measure_gradient(points: &[Point], target: StructureTarget) -> Result<(Vec<Point>, GradientKind)> {
    let e = eigen(points);
    let l = e.values;
    if l[0] <= DEGENERATE_LAMBDA {
        return Err(Error::DegenerateRegion { region: usize::MAX });
    }
    // every measure involves eigenvectors of both gaps
    let degenerate = l[0] - l[1] < EIGEN_GAP_TOL || l[1] - l[2] < EIGEN_GAP_TOL;
    if degenerate {
        return Ok((fd_gradient(points, target), GradientKind::FiniteDifference));
    }
    let m = points.len() as f64;
    // coefficients c_k such that ∇measure = Σ_k c_k ∇λ_k
    let coef = match target {
        StructureTarget::Linearity => [l[1] / (l[0] * l[0]), -1.0 / l[0], 0.0],
        StructureTarget::Planarity => [-(l[1] - l[2]) / (l[0] * l[0]), 1.0 / l[0], -1.0 / l[0]],
        StructureTarget::Scattering => [-l[2] / (l[0] * l[0]), 0.0, 1.0 / l[0]],
    };
    let grads = points
        .iter()
        .map(|p| {
            let d = [p[0] - e.mean[0], p[1] - e.mean[1], p[2] - e.mean[2]];
            let mut g = [0.0; 3];
            for k in 0..3 {
                if coef[k] == 0.0 {
                    continue;
                }
                let v = e.vectors[k];
                let s = coef[k] * 2.0 / m * (v[0] * d[0] + v[1] * d[1] + v[2] * d[2]);
                for c in 0..3 {
                    g[c] += s * v[c];
                }
            }
            g
        })
        .collect();
    Ok((grads, GradientKind::Analytic))
}

fn fd_gradient(points: &[Point], target: StructureTarget) -> Vec<Point> {
    let mut work = points.to_vec();
    let mut out = vec![[0.0; 3]; points.len()];
    let f = |pts: &[Point]| point_measures(pts).map(|m| m.get(target)).unwrap_or(0.0);
    for a in 0..points.len() {
        for c in 0..3 {
            let orig = work[a][c];
            work[a][c] = orig + FD_STEP;
            let up = f(&work);
            work[a][c] = orig - FD_STEP;
            let down = f(&work);
            work[a][c] = orig;
            out[a][c] = (up - down) / (2.0 * FD_STEP);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditConfig {
    pub eta: f64,
    pub gamma: f64,
    pub d: f64,
    pub direction: EditDirection,
    pub target: StructureTarget,
    pub max_steps: usize,
}

impl Default for EditConfig {
    fn default() -> Self {
        Self {
            eta: 0.001,
            gamma: 0.003,
            d: 0.03,
            direction: EditDirection::Ascent,
            target: StructureTarget::Linearity,
            max_steps: 100,
        }
    }
}

impl EditConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.gamma > 0.0 && self.d > 0.0) {
            return Err(Error::arg("eta, gamma and d must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    /// The next step would push an eigenvalue outside its ±γ band.
    EigenBand,
    /// Every point is pinned by the displacement cap.
    DisplacementCap,
    MaxSteps,
    /// The clipped step no longer improves the target.
    Stationary,
    /// Region has collocated points; never edited.
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionTermination {
    pub reason: Termination,
    /// Number of accepted steps for this region.
    pub accepted_steps: usize,
}

/// Trajectory of simultaneous edits over all regions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureEdit {
    pub config: EditConfig,
    #[serde(skip)]
    pub snapshots: Vec<Vec<Point>>,
    /// `measures[step][region]`; `None` for degenerate regions.
    pub measures: Vec<Vec<Option<StructureMeasures>>>,
    pub termination: Vec<RegionTermination>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl StructureEdit {
    pub fn steps(&self) -> usize {
        self.snapshots.len() - 1
    }

    /// Up to `max` snapshot indices (excluding 0), evenly spread and always
    /// including the last one.
    pub fn subsample(&self, max: usize) -> Vec<usize> {
        let last = self.steps();
        if last == 0 || max == 0 {
            return vec![];
        }
        if last <= max {
            return (1..=last).collect();
        }
        let mut idx: Vec<usize> = (1..=max).map(|k| (k * last).div_ceil(max)).collect();
        idx.dedup();
        idx
    }
}

/// Runs gradient ascent or descent on `cfg.target` for all regions at once.
///
/// Each step computes every active region's gradient from the same snapshot,
/// moves points by ±η·∇, and radially clips every point back into the
/// d-ball around its original position. A region whose tentative step leaves
/// any eigenvalue outside its initial ±γ band is reverted and frozen.
pub fn enumerate_structure_edits(cloud: &PointCloud, part: &RegionPartition, cfg: &EditConfig) -> Result<StructureEdit> {
    cfg.validate()?;
    if !part.fits(cloud) {
        return Err(Error::Partition("partition does not match cloud".into()));
    }
    let n = part.n();
    let sign = match cfg.direction {
        EditDirection::Ascent => 1.0,
        EditDirection::Descent => -1.0,
    };
    let original = cloud.points.clone();
    let mut current = original.clone();
    let initial: Vec<Option<StructureMeasures>> =
        (0..n).map(|r| point_measures(&part.region_points(cloud, r))).collect();
    let mut active: Vec<bool> = initial.iter().map(Option::is_some).collect();
    let mut termination: Vec<RegionTermination> = initial
        .iter()
        .map(|m| RegionTermination {
            reason: if m.is_some() { Termination::MaxSteps } else { Termination::Degenerate },
            accepted_steps: 0,
        })
        .collect();
    let mut last_measures = initial.clone();
    let mut snapshots = vec![original.clone()];
    let mut measures = vec![initial.clone()];
    let d2 = cfg.d * cfg.d;

    for _ in 0..cfg.max_steps {
        if !active.iter().any(|&a| a) {
            break;
        }
        let mut next = current.clone();
        let mut changed = false;
        for r in 0..n {
            if !active[r] {
                continue;
            }
            let idx = part.members(r);
            let pts: Vec<Point> = idx.iter().map(|&k| current[k]).collect();
            let (grad, _) = measure_gradient(&pts, cfg.target)?;
            let mut moved = false;
            let mut tentative = pts.clone();
            for (slot, &k) in idx.iter().enumerate() {
                let o = original[k];
                let mut q = [0.0; 3];
                for c in 0..3 {
                    q[c] = pts[slot][c] + sign * cfg.eta * grad[slot][c];
                }
                let off = [q[0] - o[0], q[1] - o[1], q[2] - o[2]];
                let r2 = off[0] * off[0] + off[1] * off[1] + off[2] * off[2];
                if r2 > d2 {
                    let s = cfg.d / r2.sqrt();
                    q = [o[0] + off[0] * s, o[1] + off[1] * s, o[2] + off[2] * s];
                }
                if q != pts[slot] {
                    moved = true;
                }
                tentative[slot] = q;
            }
            let Some(base) = initial[r] else { continue };
            let prev = last_measures[r].expect("active region has measures");
            let new = point_measures(&tentative);
            let verdict = match new {
                _ if !moved => Err(Termination::DisplacementCap),
                None => Err(Termination::EigenBand),
                Some(m) if (0..3).any(|k| (m.lambdas[k] - base.lambdas[k]).abs() > cfg.gamma) => {
                    Err(Termination::EigenBand)
                }
                Some(m) if sign * (m.get(cfg.target) - prev.get(cfg.target)) < 0.0 => Err(Termination::Stationary),
                Some(m) => Ok(m),
            };
            match verdict {
                Ok(m) => {
                    for (slot, &k) in idx.iter().enumerate() {
                        next[k] = tentative[slot];
                    }
                    last_measures[r] = Some(m);
                    termination[r].accepted_steps += 1;
                    changed = true;
                }
                Err(reason) => {
                    active[r] = false;
                    termination[r].reason = reason;
                }
            }
        }
        if !changed {
            break;
        }
        current = next;
        snapshots.push(current.clone());
        measures.push(last_measures.clone());
    }

    let mut warnings = Vec::new();
    if snapshots.len() == 1 {
        warnings.push("no step was accepted; trajectory is empty".to_string());
    }
    Ok(StructureEdit {
        config: *cfg,
        snapshots,
        measures,
        termination,
        warnings,
    })
}
