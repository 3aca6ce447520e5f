//! Transformation and structure sensitivity, spatial non-smoothness,
//! attribution/sensitivity correlation and the empty-input bias probe.

use serde::{Deserialize, Serialize};

use crate::attribution::{exact_shapley, sampled_shapley, AttributionResult, GameContext};
use crate::geometry::{
    apply_transform, farthest_point_sample, mask_coalition, partition, Coalition, EditDirection, EditRef,
    NeighborGraph, PointCloud, RegionPartition, Transform, TransformGrid,
};
use crate::model::{argmax, ModelOracle, RewardKind, RewardSpec};
use crate::seed::derive;
use crate::structure::{enumerate_structure_edits, EditConfig, StructureTarget};
use crate::{Error, Result};

/// Normalizers below this are treated as zero.
pub const NORMALIZER_EPS: f64 = 1e-12;

/// The six transformation families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricKind {
    Rotation,
    Translation,
    Scale,
    Linearity,
    Planarity,
    Scattering,
}

impl MetricKind {
    pub const ALL: [MetricKind; 6] = [
        MetricKind::Rotation,
        MetricKind::Translation,
        MetricKind::Scale,
        MetricKind::Linearity,
        MetricKind::Planarity,
        MetricKind::Scattering,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Rotation => "rotation",
            MetricKind::Translation => "translation",
            MetricKind::Scale => "scale",
            MetricKind::Linearity => "linearity",
            MetricKind::Planarity => "planarity",
            MetricKind::Scattering => "scattering",
        }
    }

    pub fn structure_target(self) -> Option<StructureTarget> {
        match self {
            MetricKind::Linearity => Some(StructureTarget::Linearity),
            MetricKind::Planarity => Some(StructureTarget::Planarity),
            MetricKind::Scattering => Some(StructureTarget::Scattering),
            _ => None,
        }
    }
}

impl std::str::FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown metric {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShapleyConfig {
    pub permutations: usize,
    /// Enumerate all coalitions instead of sampling (n ≤ 12).
    pub exact: bool,
    /// Reuse one permutation stream for every transform of a cloud.
    pub shared_seeds: bool,
}

impl Default for ShapleyConfig {
    fn default() -> Self {
        Self {
            permutations: 100,
            exact: false,
            shared_seeds: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FamilyConfig {
    pub rotation_steps: usize,
    pub translation_steps: usize,
    pub scale_steps: usize,
    /// Step size, band and cap for the structure families; the target and
    /// direction are set per family.
    pub edit: EditConfig,
    /// Snapshots kept per edit direction.
    pub max_snapshots: usize,
}

impl Default for FamilyConfig {
    fn default() -> Self {
        Self {
            rotation_steps: 3,
            translation_steps: 3,
            scale_steps: 7,
            edit: EditConfig::default(),
            max_snapshots: 20,
        }
    }
}

impl FamilyConfig {
    pub fn grid(&self, kind: MetricKind) -> Option<TransformGrid> {
        match kind {
            MetricKind::Rotation => Some(TransformGrid::rotation(self.rotation_steps)),
            MetricKind::Translation => Some(TransformGrid::translation(self.translation_steps)),
            MetricKind::Scale => Some(TransformGrid::scale(self.scale_steps)),
            _ => None,
        }
    }
}

/// One transformed version of a cloud; point indices match the original.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilyMember {
    pub transform: Transform,
    pub cloud: PointCloud,
}

/// Clouds for one metric family. Structure families hold the original cloud
/// followed by the subsampled ascent and descent trajectories.
pub fn build_family(
    cloud: &PointCloud,
    part: &RegionPartition,
    kind: MetricKind,
    cfg: &FamilyConfig,
) -> Result<Vec<FamilyMember>> {
    if let Some(grid) = cfg.grid(kind) {
        return family_from_grid(cloud, &grid);
    }
    let target = kind.structure_target().expect("non-grid kinds are structure families");
    let mut out = vec![FamilyMember {
        transform: Transform::Identity,
        cloud: cloud.clone(),
    }];
    for direction in [EditDirection::Ascent, EditDirection::Descent] {
        let edit_cfg = EditConfig {
            target,
            direction,
            ..cfg.edit
        };
        let edit = enumerate_structure_edits(cloud, part, &edit_cfg)?;
        for step in edit.subsample(cfg.max_snapshots) {
            out.push(FamilyMember {
                transform: Transform::StructureEdit {
                    edit: EditRef { direction, step },
                },
                cloud: cloud.with_points(edit.snapshots[step].clone()),
            });
        }
    }
    Ok(out)
}

pub fn family_from_grid(cloud: &PointCloud, grid: &TransformGrid) -> Result<Vec<FamilyMember>> {
    grid.validate()?;
    grid.transforms()
        .into_iter()
        .map(|t| {
            Ok(FamilyMember {
                cloud: apply_transform(cloud, &t)?,
                transform: t,
            })
        })
        .collect()
}

/// FPS partition of every cloud into `regions` regions.
pub fn partition_clouds(clouds: &[PointCloud], regions: usize) -> Result<Vec<RegionPartition>> {
    crate::par::try_map_indexed(clouds.len(), |k| {
        partition(&clouds[k], &farthest_point_sample(&clouds[k], regions)?)
    })
}

pub fn sample_id(cloud: &PointCloud, index: usize) -> String {
    cloud.id.clone().unwrap_or_else(|| format!("cloud_{index:04}"))
}

pub fn reward_for(cloud: &PointCloud, kind: RewardKind) -> Result<RewardSpec> {
    match kind {
        RewardKind::ClassificationLogit => cloud
            .label
            .map(RewardSpec::classification)
            .ok_or_else(|| Error::arg("classification reward needs a labelled cloud")),
        RewardKind::EmbeddingProjection => Ok(RewardSpec::embedding()),
    }
}

/// Shapley attributions of one cloud under every member of a family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudAttributions {
    pub sample_id: String,
    pub transforms: Vec<Transform>,
    pub results: Vec<AttributionResult>,
}

impl CloudAttributions {
    pub fn regions(&self) -> usize {
        self.results.first().map_or(0, |r| r.phi.len())
    }
}

/// Attributes every family member with its own game; masking uses the
/// centroid of the member cloud.
pub fn attribute_family(
    oracle: &dyn ModelOracle,
    sample_id: String,
    part: &RegionPartition,
    reward: RewardSpec,
    members: &[FamilyMember],
    cfg: &ShapleyConfig,
    seed: u64,
) -> Result<CloudAttributions> {
    if members.is_empty() {
        return Err(Error::arg("empty transform family"));
    }
    let results = crate::par::try_map_indexed(members.len(), |t| {
        let ctx = GameContext::new(oracle, reward, members[t].cloud.clone(), part)?;
        if cfg.exact {
            exact_shapley(&ctx)
        } else {
            let s = if cfg.shared_seeds {
                derive(seed, &[0])
            } else {
                derive(seed, &[1 + t as u64])
            };
            sampled_shapley(&ctx, cfg.permutations, s)
        }
    })?;
    Ok(CloudAttributions {
        sample_id,
        transforms: members.iter().map(|m| m.transform).collect(),
        results,
    })
}

/// Builds the `kind` family for each cloud and attributes it. Cloud `k` uses
/// seed substream `k` of `seed`.
#[allow(clippy::too_many_arguments)]
pub fn attribute_clouds(
    oracle: &dyn ModelOracle,
    clouds: &[PointCloud],
    parts: &[RegionPartition],
    kind: MetricKind,
    reward: RewardKind,
    family: &FamilyConfig,
    shapley: &ShapleyConfig,
    seed: u64,
) -> Result<Vec<CloudAttributions>> {
    if clouds.len() != parts.len() {
        return Err(Error::arg("one partition per cloud is required"));
    }
    (0..clouds.len())
        .map(|k| {
            let members = build_family(&clouds[k], &parts[k], kind, family)?;
            attribute_family(
                oracle,
                sample_id(&clouds[k], k),
                &parts[k],
                reward_for(&clouds[k], reward)?,
                &members,
                shapley,
                derive(seed, &[k as u64]),
            )
        })
        .collect()
}

/// Partition, attribute and aggregate in one call.
#[allow(clippy::too_many_arguments)]
pub fn sensitivity_of(
    oracle: &dyn ModelOracle,
    clouds: &[PointCloud],
    regions: usize,
    kind: MetricKind,
    reward: RewardKind,
    family: &FamilyConfig,
    shapley: &ShapleyConfig,
    seed: u64,
) -> Result<SensitivityResult> {
    let parts = partition_clouds(clouds, regions)?;
    let attr = attribute_clouds(oracle, clouds, &parts, kind, reward, family, shapley, seed)?;
    sensitivity(kind.name(), &attr)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudSensitivity {
    pub sample_id: String,
    /// a_i: normalized attribution range per region.
    pub a: Vec<f64>,
    /// Z = E_T[Σ_i |φ_T(i)|].
    pub z: f64,
    /// max_T φ − min_T φ per region, before normalization.
    pub raw_range: Vec<f64>,
    /// E_T|φ_T(i)|.
    pub mean_abs_phi: Vec<f64>,
    pub argmax: Vec<Transform>,
    pub argmin: Vec<Transform>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityResult {
    pub family: String,
    pub clouds: Vec<CloudSensitivity>,
    /// Mean of a_i over all regions and clouds.
    pub mean: f64,
    /// Population standard deviation of the same values.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub sample_id: String,
    pub region: usize,
    pub metric: String,
    pub a_i: f64,
    #[serde(rename = "Z")]
    pub z: f64,
    pub argmax: String,
    pub argmin: String,
}

impl SensitivityResult {
    pub fn rows(&self) -> Vec<SensitivityRow> {
        self.clouds
            .iter()
            .flat_map(|c| {
                (0..c.a.len()).map(move |i| SensitivityRow {
                    sample_id: c.sample_id.clone(),
                    region: i,
                    metric: self.family.clone(),
                    a_i: c.a[i],
                    z: c.z,
                    argmax: c.argmax[i].describe(),
                    argmin: c.argmin[i].describe(),
                })
            })
            .collect()
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn cloud_sensitivity(c: &CloudAttributions) -> Result<CloudSensitivity> {
    let n = c.regions();
    let nt = c.results.len();
    if nt == 0 || c.transforms.len() != nt {
        return Err(Error::arg("attribution table needs one result per transform"));
    }
    let z = c.results.iter().map(|r| r.phi.iter().map(|p| p.abs()).sum::<f64>()).sum::<f64>() / nt as f64;
    if !(z >= NORMALIZER_EPS) {
        return Err(Error::DegenerateNormalizer(format!(
            "{}: mean total |phi| is {z:e}; the model ignores every region",
            c.sample_id
        )));
    }
    let mut out = CloudSensitivity {
        sample_id: c.sample_id.clone(),
        a: Vec::with_capacity(n),
        z,
        raw_range: Vec::with_capacity(n),
        mean_abs_phi: Vec::with_capacity(n),
        argmax: Vec::with_capacity(n),
        argmin: Vec::with_capacity(n),
    };
    for i in 0..n {
        let (mut hi, mut lo) = (0, 0);
        for t in 1..nt {
            if c.results[t].phi[i] > c.results[hi].phi[i] {
                hi = t;
            }
            if c.results[t].phi[i] < c.results[lo].phi[i] {
                lo = t;
            }
        }
        let range = c.results[hi].phi[i] - c.results[lo].phi[i];
        out.raw_range.push(range);
        out.a.push(range / z);
        out.mean_abs_phi.push(c.results.iter().map(|r| r.phi[i].abs()).sum::<f64>() / nt as f64);
        out.argmax.push(c.transforms[hi]);
        out.argmin.push(c.transforms[lo]);
    }
    Ok(out)
}

/// a_i(x) = (max_T φ_T(i) − min_T φ_T(i)) / E_T[Σ_i |φ_T(i)|], aggregated over
/// regions and clouds.
pub fn sensitivity(family: &str, attribs: &[CloudAttributions]) -> Result<SensitivityResult> {
    if attribs.is_empty() {
        return Err(Error::arg("no clouds"));
    }
    let clouds = attribs.iter().map(cloud_sensitivity).collect::<Result<Vec<_>>>()?;
    let all: Vec<f64> = clouds.iter().flat_map(|c| c.a.iter().copied()).collect();
    let (mean, std) = mean_std(&all);
    Ok(SensitivityResult {
        family: family.to_string(),
        clouds,
        mean,
        std,
    })
}

/// Region with the largest a_i (lowest index on ties) and the transforms at
/// which its attribution peaks and bottoms out.
pub fn most_sensitive_region(sens: &SensitivityResult, cloud: usize) -> Result<(usize, Transform, Transform)> {
    let c = sens
        .clouds
        .get(cloud)
        .ok_or_else(|| Error::arg(format!("no cloud {cloud}")))?;
    if c.a.is_empty() {
        return Err(Error::arg("no regions"));
    }
    let mut best = 0;
    for i in 1..c.a.len() {
        if c.a[i] > c.a[best] {
            best = i;
        }
    }
    Ok((best, c.argmax[best], c.argmin[best]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudSmoothness {
    pub sample_id: String,
    pub value: f64,
    /// E_T|v_T(N) − v_T(∅)|.
    pub z_smooth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessResult {
    pub family: String,
    pub clouds: Vec<CloudSmoothness>,
    pub mean: f64,
    pub std: f64,
    pub radius: Vec<f64>,
    pub mean_degree: Vec<f64>,
}

/// E_T E_i E_{j∈N(i)} |φ_T(i) − φ_T(j)| / Z_smooth per cloud; regions without
/// neighbours are skipped in the region mean.
pub fn non_smoothness(family: &str, attribs: &[CloudAttributions], graphs: &[NeighborGraph]) -> Result<SmoothnessResult> {
    if attribs.is_empty() || attribs.len() != graphs.len() {
        return Err(Error::arg("one neighbour graph per cloud is required"));
    }
    let mut clouds = Vec::with_capacity(attribs.len());
    for (c, g) in attribs.iter().zip(graphs) {
        if g.neighbors.len() != c.regions() {
            return Err(Error::arg("neighbour graph does not match the partition"));
        }
        if g.edge_count() == 0 {
            return Err(Error::arg(format!("{}: neighbour graph has no edges", c.sample_id)));
        }
        let nt = c.results.len() as f64;
        let z_smooth = c.results.iter().map(|r| (r.v_full - r.v_empty).abs()).sum::<f64>() / nt;
        if !(z_smooth >= NORMALIZER_EPS) {
            return Err(Error::DegenerateNormalizer(format!(
                "{}: |v(N) - v(empty)| averages {z_smooth:e}",
                c.sample_id
            )));
        }
        let mut total = 0.0;
        for r in &c.results {
            let mut acc = 0.0;
            let mut counted = 0;
            for (i, nb) in g.neighbors.iter().enumerate() {
                if nb.is_empty() {
                    continue;
                }
                acc += nb.iter().map(|&j| (r.phi[i] - r.phi[j]).abs()).sum::<f64>() / nb.len() as f64;
                counted += 1;
            }
            total += acc / counted as f64;
        }
        clouds.push(CloudSmoothness {
            sample_id: c.sample_id.clone(),
            value: total / nt / z_smooth,
            z_smooth,
        });
    }
    let (mean, std) = mean_std(&clouds.iter().map(|c| c.value).collect::<Vec<_>>());
    Ok(SmoothnessResult {
        family: family.to_string(),
        clouds,
        mean,
        std,
        radius: graphs.iter().map(|g| g.radius).collect(),
        mean_degree: graphs.iter().map(|g| g.mean_degree()).collect(),
    })
}

/// Pearson correlation; `None` when either vector has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    // relative to the raw second moments so rounding in the mean is not mistaken for spread
    let flat = |s: f64, v: &[f64]| s <= 1e-20 * v.iter().map(|a| a * a).sum::<f64>();
    if flat(sxx, x) || flat(syy, y) {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub family: String,
    /// Per cloud; `None` where r is undefined.
    pub r: Vec<Option<f64>>,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Per-cloud Pearson r between E_T|φ_T(i)| and a_i over regions.
pub fn attribution_sensitivity_correlation(sens: &SensitivityResult) -> Result<CorrelationResult> {
    let mut r = Vec::with_capacity(sens.clouds.len());
    let mut warnings = Vec::new();
    for c in &sens.clouds {
        if c.a.len() < 3 {
            return Err(Error::arg("correlation needs at least three regions"));
        }
        let v = pearson(&c.mean_abs_phi, &c.a);
        if v.is_none() {
            warnings.push(format!("{}: zero variance, excluded", c.sample_id));
        }
        r.push(v);
    }
    let defined: Vec<f64> = r.iter().flatten().copied().collect();
    let (mean, std) = if defined.is_empty() {
        (None, None)
    } else {
        let (m, s) = mean_std(&defined);
        (Some(m), Some(s))
    };
    Ok(CorrelationResult {
        family: sens.family.clone(),
        r,
        mean,
        std,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasProbe {
    pub probs: Vec<f64>,
    pub top_class: usize,
    pub top_prob: f64,
    pub biased: bool,
}

/// Classifies the fully masked cloud: every point moved to the centroid.
pub fn bias_probe(oracle: &dyn ModelOracle, cloud: &PointCloud) -> Result<BiasProbe> {
    let empty = cloud.with_points(vec![cloud.centroid(); cloud.len()]);
    let probs = oracle.evaluate(std::slice::from_ref(&empty))?.remove(0);
    let top_class = argmax(&probs);
    let top_prob = probs[top_class];
    Ok(BiasProbe {
        top_class,
        top_prob,
        biased: top_prob > 0.5,
        probs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapRow {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub region: usize,
    pub value: f64,
}

/// One row per point carrying its region's value.
pub fn heatmap_rows(cloud: &PointCloud, part: &RegionPartition, values: &[f64]) -> Result<Vec<HeatmapRow>> {
    if !part.fits(cloud) || values.len() != part.n() {
        return Err(Error::arg("heatmap values do not match the partition"));
    }
    Ok(cloud
        .points
        .iter()
        .zip(&part.assignment)
        .map(|(p, &r)| HeatmapRow {
            x: p[0],
            y: p[1],
            z: p[2],
            region: r,
            value: values[r],
        })
        .collect())
}

/// The fully masked and fully kept clouds, for reports.
pub fn extreme_coalitions(cloud: &PointCloud, part: &RegionPartition) -> (PointCloud, PointCloud) {
    (
        mask_coalition(cloud, part, Coalition::EMPTY),
        mask_coalition(cloud, part, Coalition::full(part.n())),
    )
}
