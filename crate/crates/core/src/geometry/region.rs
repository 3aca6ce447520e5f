use serde::{Deserialize, Serialize};

use super::{dist2, norm, Point, PointCloud};
use crate::{Error, Result};

/// Coalitions are 64-bit sets, so a partition has at most this many regions.
pub const MAX_REGIONS: usize = 64;

/// A subset of region indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct Coalition(pub u64);

impl Coalition {
    pub const EMPTY: Coalition = Coalition(0);

    pub fn full(n: usize) -> Self {
        assert!(n <= MAX_REGIONS);
        if n == 64 {
            Coalition(u64::MAX)
        } else {
            Coalition((1u64 << n) - 1)
        }
    }

    pub fn from_members(members: impl IntoIterator<Item = usize>) -> Self {
        Coalition(members.into_iter().fold(0u64, |acc, i| acc | (1u64 << i)))
    }

    #[inline]
    pub fn contains(self, i: usize) -> bool {
        self.0 >> i & 1 == 1
    }

    #[inline]
    pub fn with(self, i: usize) -> Self {
        Coalition(self.0 | (1u64 << i))
    }

    #[inline]
    pub fn without(self, i: usize) -> Self {
        Coalition(self.0 & !(1u64 << i))
    }

    #[inline]
    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_subset_of(self, other: Coalition) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn members(self) -> impl Iterator<Item = usize> {
        let bits = self.0;
        (0..64).filter(move |i| bits >> i & 1 == 1)
    }
}

/// Assignment of every point to one of `n` regions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionPartition {
    pub centers: Vec<usize>,
    pub assignment: Vec<usize>,
    /// Point indices per region, ascending.
    #[serde(skip)]
    members: Vec<Vec<usize>>,
}

impl RegionPartition {
    pub fn n(&self) -> usize {
        self.centers.len()
    }

    pub fn members(&self, region: usize) -> &[usize] {
        &self.members[region]
    }

    pub fn region_points(&self, cloud: &PointCloud, region: usize) -> Vec<Point> {
        self.members[region].iter().map(|&k| cloud.points[k]).collect()
    }

    fn from_assignment(centers: Vec<usize>, assignment: Vec<usize>) -> Result<Self> {
        let n = centers.len();
        let mut members = vec![Vec::new(); n];
        for (k, &r) in assignment.iter().enumerate() {
            if r >= n {
                return Err(Error::Partition(format!("point {k} assigned to region {r} >= {n}")));
            }
            members[r].push(k);
        }
        if let Some(r) = members.iter().position(|m| m.is_empty()) {
            return Err(Error::Partition(format!("region {r} is empty")));
        }
        Ok(Self {
            centers,
            assignment,
            members,
        })
    }

    /// Re-validates a deserialized partition against a cloud.
    pub fn rebuild(centers: Vec<usize>, assignment: Vec<usize>, cloud: &PointCloud) -> Result<Self> {
        if assignment.len() != cloud.len() {
            return Err(Error::Partition("assignment length differs from cloud size".into()));
        }
        Self::from_assignment(centers, assignment)
    }

    /// True if the partition's assignment matches the cloud's point count.
    pub fn fits(&self, cloud: &PointCloud) -> bool {
        self.assignment.len() == cloud.len()
    }
}

/// Greedy farthest point sampling. The first center is the point of largest
/// norm; every later center maximizes its distance to the chosen set. Ties go
/// to the lowest index.
pub fn farthest_point_sample(cloud: &PointCloud, n: usize) -> Result<Vec<usize>> {
    let p = cloud.len();
    if n == 0 || n > p {
        return Err(Error::arg(format!("cannot sample {n} centers from {p} points")));
    }
    let mut first = 0;
    let mut best = f64::NEG_INFINITY;
    for (k, pt) in cloud.points.iter().enumerate() {
        let r = norm(pt);
        if r > best {
            best = r;
            first = k;
        }
    }
    let mut chosen = Vec::with_capacity(n);
    let mut taken = vec![false; p];
    let mut min_d = vec![f64::INFINITY; p];
    let mut next = first;
    for _ in 0..n {
        chosen.push(next);
        taken[next] = true;
        let c = cloud.points[next];
        let mut far = f64::NEG_INFINITY;
        for k in 0..p {
            let d = dist2(&cloud.points[k], &c);
            if d < min_d[k] {
                min_d[k] = d;
            }
            if !taken[k] && min_d[k] > far {
                far = min_d[k];
                next = k;
            }
        }
    }
    Ok(chosen)
}

/// Assigns every point to its nearest center (lowest index on ties). Center
/// points always belong to their own region.
pub fn partition(cloud: &PointCloud, centers: &[usize]) -> Result<RegionPartition> {
    if centers.is_empty() {
        return Err(Error::arg("no centers"));
    }
    if centers.len() > MAX_REGIONS {
        return Err(Error::Size {
            what: "regions",
            got: centers.len(),
            limit: MAX_REGIONS,
        });
    }
    let mut seen = std::collections::HashSet::new();
    for &c in centers {
        if c >= cloud.len() || !seen.insert(c) {
            return Err(Error::arg(format!("center index {c} invalid or repeated")));
        }
    }
    let cpts: Vec<Point> = centers.iter().map(|&c| cloud.points[c]).collect();
    let mut assignment: Vec<usize> = cloud
        .points
        .iter()
        .map(|p| {
            let mut best = 0;
            let mut bd = f64::INFINITY;
            for (r, c) in cpts.iter().enumerate() {
                let d = dist2(p, c);
                if d < bd {
                    bd = d;
                    best = r;
                }
            }
            best
        })
        .collect();
    for (r, &c) in centers.iter().enumerate() {
        assignment[c] = r;
    }
    RegionPartition::from_assignment(centers.to_vec(), assignment)
}

/// Keeps the points of regions in `s` and moves every other point to the
/// centroid of the full cloud.
pub fn mask_coalition(cloud: &PointCloud, part: &RegionPartition, s: Coalition) -> PointCloud {
    let c = cloud.centroid();
    mask_with_point(cloud, part, s, c)
}

pub(crate) fn mask_with_point(cloud: &PointCloud, part: &RegionPartition, s: Coalition, at: Point) -> PointCloud {
    let points = cloud
        .points
        .iter()
        .zip(&part.assignment)
        .map(|(p, &r)| if s.contains(r) { *p } else { at })
        .collect();
    cloud.with_points(points)
}

/// Ball-query neighborhoods over region centers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborGraph {
    pub radius: f64,
    pub neighbors: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl NeighborGraph {
    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn mean_degree(&self) -> f64 {
        let n = self.neighbors.len().max(1);
        self.neighbors.iter().map(Vec::len).sum::<usize>() as f64 / n as f64
    }

    pub fn isolated(&self) -> Vec<usize> {
        (0..self.neighbors.len()).filter(|&i| self.neighbors[i].is_empty()).collect()
    }
}

/// Default radius: twice the mean nearest-neighbor distance among centers.
pub fn default_radius(cpts: &[Point]) -> f64 {
    if cpts.len() < 2 {
        return 0.0;
    }
    let total: f64 = cpts
        .iter()
        .enumerate()
        .map(|(i, a)| {
            cpts.iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, b)| dist2(a, b))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .sum();
    2.0 * total / cpts.len() as f64
}

pub fn build_neighbor_graph(part: &RegionPartition, cloud: &PointCloud, radius: Option<f64>) -> Result<NeighborGraph> {
    if !part.fits(cloud) {
        return Err(Error::Partition("partition does not match cloud".into()));
    }
    let cpts: Vec<Point> = part.centers.iter().map(|&c| cloud.points[c]).collect();
    let radius = radius.unwrap_or_else(|| default_radius(&cpts));
    if !(radius >= 0.0) {
        return Err(Error::arg("radius must be non-negative"));
    }
    let r2 = radius * radius;
    let neighbors: Vec<Vec<usize>> = (0..cpts.len())
        .map(|i| {
            (0..cpts.len())
                .filter(|&j| j != i && dist2(&cpts[i], &cpts[j]) <= r2)
                .collect()
        })
        .collect();
    let mut graph = NeighborGraph {
        radius,
        neighbors,
        warnings: Vec::new(),
    };
    let iso = graph.isolated();
    if !iso.is_empty() {
        graph
            .warnings
            .push(format!("radius {radius:.4} leaves {} isolated region(s): {iso:?}", iso.len()));
    }
    Ok(graph)
}
