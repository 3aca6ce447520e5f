//! Adversarial rotations and translations found by clipped sign-gradient
//! ascent in the six transform parameters, min-max adversarial training, and
//! augmentation/adversarial training comparisons.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{Point, PointCloud, RigidParams, Transform, ROTATION_BOUND, TRANSLATION_BOUND};
use crate::metrics::{sensitivity_of, FamilyConfig, MetricKind, SensitivityResult, ShapleyConfig};
use crate::model::{
    argmax, fit_with, AugmentFlags, BuiltinClassifier, ClassifierShape, ModelOracle, RewardKind, SyntheticDataset,
    TrainConfig, TrainReport,
};
use crate::seed::{derive, rng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientMode {
    FiniteDifference,
    /// Chain rule through the oracle's input gradient; needs `loss_gradient`.
    Analytic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    /// η_adv, applied to every parameter.
    pub step: f64,
    /// t_max.
    pub iterations: usize,
    /// Restart 0 starts at the identity, the others at random points of the box.
    pub restarts: usize,
    pub gradient: GradientMode,
    pub fd_step: f64,
    pub rotation: bool,
    pub translation: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            step: 0.01,
            iterations: 20,
            restarts: 3,
            gradient: GradientMode::FiniteDifference,
            fd_step: 1e-3,
            rotation: true,
            translation: true,
        }
    }
}

impl AttackConfig {
    /// Inner attack used during adversarial training.
    pub fn training() -> Self {
        Self {
            iterations: 5,
            gradient: GradientMode::Analytic,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step >= 0.0 && self.step.is_finite()) {
            return Err(Error::arg("attack step must be finite and non-negative"));
        }
        if !(self.fd_step > 0.0) {
            return Err(Error::arg("finite-difference step must be positive"));
        }
        if self.restarts == 0 {
            return Err(Error::arg("at least one restart is required"));
        }
        if !(self.rotation || self.translation) {
            return Err(Error::arg("attack needs rotation, translation or both"));
        }
        Ok(())
    }

    fn active(&self) -> Vec<usize> {
        let mut a = Vec::with_capacity(6);
        if self.rotation {
            a.extend(0..3);
        }
        if self.translation {
            a.extend(3..6);
        }
        a
    }
}

fn bound(k: usize) -> f64 {
    if k < 3 {
        ROTATION_BOUND
    } else {
        TRANSLATION_BOUND
    }
}

fn clip(u: &mut [f64; 6]) {
    for (k, v) in u.iter_mut().enumerate() {
        *v = v.clamp(-bound(k), bound(k));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iter: usize,
    pub theta: [f64; 3],
    pub delta: [f64; 3],
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub best: RigidParams,
    pub best_loss: f64,
    pub clean_loss: f64,
    pub clean_prediction: usize,
    /// Prediction at `best`.
    pub prediction: usize,
    /// The prediction at `best` differs from the label.
    pub success: bool,
    /// Some iterate had an all-zero gradient.
    pub plateau: bool,
    /// Restart that produced `best`; `trace` belongs to it.
    pub restart: usize,
    /// Iterates 0..=t_max of that restart.
    pub trace: Vec<TraceEntry>,
}

impl AttackResult {
    pub fn transform(&self) -> Transform {
        Transform::Rigid { params: self.best }
    }
}

/// Softmax cross-entropy of `label` given probabilities.
pub fn cross_entropy(probs: &[f64], label: usize) -> f64 {
    -probs[label].max(f64::MIN_POSITIVE).ln()
}

fn transformed(cloud: &PointCloud, u: &[f64; 6]) -> PointCloud {
    cloud.with_points(RigidParams::from_vec(u).apply_points(&cloud.points))
}

/// Losses and predictions at several parameter vectors, in one oracle call.
fn evaluate_at(oracle: &dyn ModelOracle, cloud: &PointCloud, label: usize, us: &[[f64; 6]]) -> Result<Vec<(f64, usize)>> {
    let batch: Vec<PointCloud> = us.iter().map(|u| transformed(cloud, u)).collect();
    Ok(oracle
        .evaluate(&batch)?
        .iter()
        .map(|p| (cross_entropy(p, label), argmax(p)))
        .collect())
}

/// ∂R/∂θ_k for R = Rz·Ry·Rx.
fn rotation_derivatives(theta: [f64; 3]) -> [[[f64; 3]; 3]; 3] {
    use crate::geometry::transform_mat_mul as mm;
    let (sx, cx) = theta[0].sin_cos();
    let (sy, cy) = theta[1].sin_cos();
    let (sz, cz) = theta[2].sin_cos();
    let rx = [[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]];
    let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
    let rz = [[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]];
    let dx = [[0.0, 0.0, 0.0], [0.0, -sx, -cx], [0.0, cx, -sx]];
    let dy = [[-sy, 0.0, cy], [0.0, 0.0, 0.0], [-cy, 0.0, -sy]];
    let dz = [[-sz, -cz, 0.0], [cz, -sz, 0.0], [0.0, 0.0, 0.0]];
    [mm(&rz, &mm(&ry, &dx)), mm(&rz, &mm(&dy, &rx)), mm(&dz, &mm(&ry, &rx))]
}

/// Loss and its gradient with respect to the six transform parameters.
pub fn parameter_gradient(
    oracle: &dyn ModelOracle,
    cloud: &PointCloud,
    label: usize,
    u: &[f64; 6],
    mode: GradientMode,
    fd_step: f64,
) -> Result<(f64, [f64; 6])> {
    match mode {
        GradientMode::Analytic => {
            let params = RigidParams::from_vec(u);
            let (loss, g) = oracle.loss_gradient(&params.apply_points(&cloud.points), label)?;
            let d = rotation_derivatives(params.theta);
            let mut out = [0.0; 6];
            for (p, gp) in cloud.points.iter().zip(&g) {
                for k in 0..3 {
                    let q = crate::geometry::transform_mat_vec(&d[k], p);
                    out[k] += gp[0] * q[0] + gp[1] * q[1] + gp[2] * q[2];
                    out[3 + k] += gp[k];
                }
            }
            Ok((loss, out))
        }
        GradientMode::FiniteDifference => {
            let mut us = vec![*u];
            for k in 0..6 {
                for s in [1.0, -1.0] {
                    let mut v = *u;
                    v[k] += s * fd_step;
                    us.push(v);
                }
            }
            let l = evaluate_at(oracle, cloud, label, &us)?;
            let mut out = [0.0; 6];
            for k in 0..6 {
                out[k] = (l[1 + 2 * k].0 - l[2 + 2 * k].0) / (2.0 * fd_step);
            }
            Ok((l[0].0, out))
        }
    }
}

/// u ← Clip(u + η·sign(∇_u Loss(T_u(x), label))) from each restart; returns
/// the iterate with the highest loss.
pub fn adversarial_transform(
    oracle: &dyn ModelOracle,
    cloud: &PointCloud,
    label: usize,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<AttackResult> {
    cfg.validate()?;
    if label >= oracle.num_classes() {
        return Err(Error::arg(format!("label {label} out of range")));
    }
    let active = cfg.active();
    let (clean_loss, clean_prediction) = evaluate_at(oracle, cloud, label, &[[0.0; 6]])?[0];
    // random starts only matter when there are steps to take
    let restarts = if cfg.iterations == 0 { 1 } else { cfg.restarts };
    let mut best: Option<(f64, [f64; 6], usize)> = None;
    let mut traces = Vec::with_capacity(restarts);
    let mut plateau = false;
    for r in 0..restarts {
        let mut u = [0.0; 6];
        if r > 0 {
            let mut g = rng(seed, &[r as u64]);
            for &k in &active {
                u[k] = g.random_range(-bound(k)..=bound(k));
            }
        }
        let mut trace = Vec::with_capacity(cfg.iterations + 1);
        for t in 0..=cfg.iterations {
            let (loss, grad) = if t < cfg.iterations {
                parameter_gradient(oracle, cloud, label, &u, cfg.gradient, cfg.fd_step)?
            } else {
                (evaluate_at(oracle, cloud, label, &[u])?[0].0, [0.0; 6])
            };
            if !loss.is_finite() {
                return Err(Error::oracle(format!("non-finite attack loss at iteration {t}"), None));
            }
            let p = RigidParams::from_vec(&u);
            trace.push(TraceEntry {
                iter: t,
                theta: p.theta,
                delta: p.delta,
                loss,
            });
            if best.is_none_or(|(b, _, _)| loss > b) {
                best = Some((loss, u, r));
            }
            if t == cfg.iterations {
                break;
            }
            if active.iter().all(|&k| grad[k] == 0.0) {
                plateau = true;
            }
            for &k in &active {
                // sign(0) = 0
                if grad[k] != 0.0 {
                    u[k] += cfg.step * grad[k].signum();
                }
            }
            clip(&mut u);
        }
        traces.push(trace);
    }
    let (best_loss, u, restart) = best.expect("at least one iterate");
    let prediction = evaluate_at(oracle, cloud, label, &[u])?[0].1;
    Ok(AttackResult {
        best: RigidParams::from_vec(&u),
        best_loss,
        clean_loss,
        clean_prediction,
        prediction,
        success: prediction != label,
        plateau,
        restart,
        trace: traces.swap_remove(restart),
    })
}

/// Attacks every labelled cloud; cloud `k` uses seed substream `k`.
pub fn attack_clouds(oracle: &dyn ModelOracle, clouds: &[PointCloud], cfg: &AttackConfig, seed: u64) -> Result<Vec<AttackResult>> {
    crate::par::try_map_indexed(clouds.len(), |k| {
        let label = clouds[k]
            .label
            .ok_or_else(|| Error::arg(format!("cloud {k} has no label")))?;
        adversarial_transform(oracle, &clouds[k], label, cfg, derive(seed, &[k as u64]))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomSearch {
    pub losses: Vec<f64>,
    pub best_loss: f64,
    pub best: RigidParams,
    /// Number of sampled transforms that change the prediction.
    pub flips: usize,
}

impl RandomSearch {
    pub fn any_flip(&self) -> bool {
        self.flips > 0
    }
}

/// Baseline: `count` uniform transforms from the same parameter box.
pub fn random_transform_baseline(
    oracle: &dyn ModelOracle,
    cloud: &PointCloud,
    label: usize,
    cfg: &AttackConfig,
    count: usize,
    seed: u64,
) -> Result<RandomSearch> {
    cfg.validate()?;
    if count == 0 {
        return Err(Error::arg("at least one random transform is required"));
    }
    let active = cfg.active();
    let mut g = rng(seed, &[0x7a4d]);
    let us: Vec<[f64; 6]> = (0..count)
        .map(|_| {
            let mut u = [0.0; 6];
            for &k in &active {
                u[k] = g.random_range(-bound(k)..=bound(k));
            }
            u
        })
        .collect();
    let res = evaluate_at(oracle, cloud, label, &us)?;
    let mut b = 0;
    for k in 1..count {
        if res[k].0 > res[b].0 {
            b = k;
        }
    }
    Ok(RandomSearch {
        losses: res.iter().map(|r| r.0).collect(),
        best_loss: res[b].0,
        best: RigidParams::from_vec(&us[b]),
        flips: res.iter().filter(|r| r.1 != label).count(),
    })
}

/// Trains on per-sample worst-case transforms: each (augmented) training
/// sample is replaced by its adversarial transform under the current weights
/// before the descent step. With zero attack iterations this is plain
/// training.
pub fn adversarial_train(
    model: &mut BuiltinClassifier,
    data: &SyntheticDataset,
    train_cfg: &TrainConfig,
    attack: &AttackConfig,
    seed: u64,
) -> Result<TrainReport> {
    attack.validate()?;
    let hook = |m: &BuiltinClassifier, sample: &PointCloud, label: usize, s: u64| -> Result<(Vec<Point>, bool)> {
        if attack.iterations == 0 {
            return Ok((sample.points.clone(), argmax(&m.probs(&sample.points)) == label));
        }
        let r = adversarial_transform(m, sample, label, attack, s)?;
        Ok((r.best.apply_points(&sample.points), !r.success))
    };
    fit_with(model, data, train_cfg, seed, Some(&hook))
}

/// One training variant of a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Recipe {
    pub name: String,
    #[serde(default)]
    pub augment: AugmentFlags,
    /// Adversarial training with this inner attack when present.
    #[serde(default)]
    pub adversarial: Option<AttackConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonConfig {
    /// `augment` is replaced by each recipe's flags.
    pub train: TrainConfig,
    pub shape: ClassifierShape,
    pub regions: usize,
    /// Test clouds analysed, balanced over classes.
    pub clouds: usize,
    pub metrics: Vec<MetricKind>,
    pub family: FamilyConfig,
    pub shapley: ShapleyConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub recipe: String,
    pub test_accuracy: f64,
    pub sensitivity: Vec<MetricSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
    #[serde(skip)]
    pub models: Vec<BuiltinClassifier>,
    #[serde(skip)]
    pub training: Vec<TrainReport>,
    #[serde(skip)]
    pub sensitivities: Vec<Vec<SensitivityResult>>,
}

impl ComparisonReport {
    pub fn mean(&self, recipe: &str, metric: MetricKind) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.recipe == recipe)?
            .sensitivity
            .iter()
            .find(|s| s.metric == metric.name())
            .map(|s| s.mean)
    }
}

/// Trains every recipe from the same initial weights and seed, then measures
/// the requested sensitivities on the same test clouds with the same
/// analysis seed.
pub fn augmentation_comparison(
    data: &SyntheticDataset,
    recipes: &[Recipe],
    cfg: &ComparisonConfig,
    seed: u64,
) -> Result<ComparisonReport> {
    let init = BuiltinClassifier::new(&cfg.shape, &mut rng(seed, &[0]))?;
    let clouds: Vec<PointCloud> = data.balanced_test(cfg.clouds).into_iter().cloned().collect();
    if clouds.is_empty() {
        return Err(Error::arg("dataset has no test clouds"));
    }
    let mut report = ComparisonReport {
        rows: vec![],
        models: vec![],
        training: vec![],
        sensitivities: vec![],
    };
    for recipe in recipes {
        let mut model = init.clone();
        let train_cfg = TrainConfig {
            augment: recipe.augment,
            ..cfg.train
        };
        let log = match &recipe.adversarial {
            Some(a) => adversarial_train(&mut model, data, &train_cfg, a, derive(seed, &[1]))?,
            None => crate::model::train(&mut model, data, &train_cfg, derive(seed, &[1]))?,
        };
        let sens = cfg
            .metrics
            .iter()
            .map(|&m| {
                sensitivity_of(
                    &model,
                    &clouds,
                    cfg.regions,
                    m,
                    RewardKind::ClassificationLogit,
                    &cfg.family,
                    &cfg.shapley,
                    derive(seed, &[2]),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        report.rows.push(ComparisonRow {
            recipe: recipe.name.clone(),
            test_accuracy: log.test_accuracy,
            sensitivity: sens
                .iter()
                .map(|s| MetricSummary {
                    metric: s.family.clone(),
                    mean: s.mean,
                    std: s.std,
                })
                .collect(),
        });
        report.models.push(model);
        report.training.push(log);
        report.sensitivities.push(sens);
    }
    Ok(report)
}
