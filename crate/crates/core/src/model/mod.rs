//! The game function: model oracles, the built-in classifier, synthetic data,
//! rewards and the subprocess wire protocol for external models.

mod classifier;
mod dataset;
mod external;
mod train;

pub use classifier::{BuiltinClassifier, ClassifierShape, Dense, WeightFile};
pub(crate) use dataset::unit_vector as dataset_unit_vector;
pub use dataset::{generate_dataset, DatasetSpec, ShapeClass, Split, SyntheticDataset};
pub use external::{serve, ExternalOracle, ProtocolConfig};
pub use train::{
    accuracy, fit_with, train, AugmentFlags, EpochLog, SampleHook, TrainConfig, TrainReport,
};

use serde::{Deserialize, Serialize};

use crate::geometry::{Point, PointCloud};
use crate::{Error, Result};

/// Probabilities must sum to one within this tolerance.
pub const SIMPLEX_TOL: f64 = 1e-6;

/// A black-box classifier: clouds in, class probabilities out.
///
/// Implementations must be deterministic and safe to call from several
/// workers at once.
pub trait ModelOracle: Send + Sync {
    fn num_classes(&self) -> usize;

    fn evaluate(&self, batch: &[PointCloud]) -> Result<Vec<Vec<f64>>>;

    /// Pooled encoder features, for the embedding-projection reward.
    fn embed(&self, _batch: &[PointCloud]) -> Result<Vec<Vec<f64>>> {
        Err(Error::Unsupported("this oracle exposes no embedding"))
    }

    /// Cross-entropy loss of `label` and its gradient with respect to every input point.
    fn loss_gradient(&self, _points: &[Point], _label: usize) -> Result<(f64, Vec<Point>)> {
        Err(Error::Unsupported("this oracle exposes no gradients"))
    }

    /// Models whose output depends on the input only through a max-pool of
    /// per-point features can expose that structure; games over region masks
    /// then evaluate without re-running the per-point layers.
    fn pooled(&self) -> Option<&dyn PooledModel> {
        None
    }
}

/// Per-point feature map followed by a max-pool and a head.
pub trait PooledModel: Sync {
    fn feature_dim(&self) -> usize;
    /// Row-major `points.len() × feature_dim` features.
    fn point_features(&self, points: &[Point]) -> Vec<f64>;
    /// Class probabilities from a pooled feature vector.
    fn head_probs(&self, pooled: &[f64]) -> Vec<f64>;
}

impl<T: ModelOracle + ?Sized> ModelOracle for &T {
    fn num_classes(&self) -> usize {
        (**self).num_classes()
    }
    fn evaluate(&self, batch: &[PointCloud]) -> Result<Vec<Vec<f64>>> {
        (**self).evaluate(batch)
    }
    fn embed(&self, batch: &[PointCloud]) -> Result<Vec<Vec<f64>>> {
        (**self).embed(batch)
    }
    fn loss_gradient(&self, points: &[Point], label: usize) -> Result<(f64, Vec<Point>)> {
        (**self).loss_gradient(points, label)
    }
    fn pooled(&self) -> Option<&dyn PooledModel> {
        (**self).pooled()
    }
}

/// Checks a probability vector against the simplex.
pub fn validate_probs(probs: &[f64], classes: usize) -> std::result::Result<(), String> {
    if probs.len() != classes {
        return Err(format!("expected {classes} probabilities, got {}", probs.len()));
    }
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err("negative or non-finite probability".into());
    }
    let s: f64 = probs.iter().sum();
    if (s - 1.0).abs() > SIMPLEX_TOL {
        return Err(format!("probabilities sum to {s}"));
    }
    Ok(())
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = k;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RewardKind {
    /// log(p / (1 − p)) of the labelled class.
    ClassificationLogit,
    /// Projection of the pooled embedding onto z(N) − z(∅).
    EmbeddingProjection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub kind: RewardKind,
    pub label: Option<usize>,
    /// Probabilities are clamped to [clamp, 1 − clamp].
    pub clamp: f64,
}

pub const DEFAULT_PROB_CLAMP: f64 = 1e-6;

impl RewardSpec {
    pub fn classification(label: usize) -> Self {
        Self {
            kind: RewardKind::ClassificationLogit,
            label: Some(label),
            clamp: DEFAULT_PROB_CLAMP,
        }
    }

    pub fn embedding() -> Self {
        Self {
            kind: RewardKind::EmbeddingProjection,
            label: None,
            clamp: DEFAULT_PROB_CLAMP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.clamp > 0.0 && self.clamp < 0.5) {
            return Err(Error::arg("probability clamp must lie in (0, 0.5)"));
        }
        if self.kind == RewardKind::ClassificationLogit && self.label.is_none() {
            return Err(Error::arg("classification reward needs a label"));
        }
        Ok(())
    }

    /// Logit reward of one probability vector.
    pub fn from_probs(&self, probs: &[f64]) -> Result<f64> {
        let label = self.label.ok_or_else(|| Error::arg("classification reward needs a label"))?;
        let p = *probs
            .get(label)
            .ok_or_else(|| Error::arg(format!("label {label} out of range for {} classes", probs.len())))?;
        Ok(logit(p, self.clamp))
    }
}

/// log(p / (1 − p)) with p clamped to [eps, 1 − eps].
pub fn logit(p: f64, eps: f64) -> f64 {
    let p = p.clamp(eps, 1.0 - eps);
    (p / (1.0 - p)).ln()
}

/// v(S) = (z(N) − z(∅))ᵀ (z(S) − z(∅)) / ‖z(N) − z(∅)‖.
#[derive(Debug, Clone)]
pub struct EmbeddingProjection {
    empty: Vec<f64>,
    direction: Vec<f64>,
}

impl EmbeddingProjection {
    pub fn new(z_full: &[f64], z_empty: &[f64]) -> Result<Self> {
        let diff: Vec<f64> = z_full.iter().zip(z_empty).map(|(a, b)| a - b).collect();
        let norm = diff.iter().map(|d| d * d).sum::<f64>().sqrt();
        if norm < 1e-9 {
            return Err(Error::DegenerateEmbedding(norm));
        }
        Ok(Self {
            empty: z_empty.to_vec(),
            direction: diff.into_iter().map(|d| d / norm).collect(),
        })
    }

    pub fn value(&self, z: &[f64]) -> f64 {
        z.iter()
            .zip(&self.empty)
            .zip(&self.direction)
            .map(|((z, e), d)| (z - e) * d)
            .sum()
    }
}

/// Reward of a single cloud. The embedding-projection kind needs the
/// reference embeddings and is evaluated through a game context instead.
pub fn reward(oracle: &dyn ModelOracle, cloud: &PointCloud, spec: &RewardSpec) -> Result<f64> {
    spec.validate()?;
    match spec.kind {
        RewardKind::ClassificationLogit => {
            let probs = oracle.evaluate(std::slice::from_ref(cloud))?;
            spec.from_probs(&probs[0])
        }
        RewardKind::EmbeddingProjection => Err(Error::arg(
            "embedding-projection reward is defined relative to a game; use GameContext",
        )),
    }
}

/// An oracle that returns the same probabilities for every input.
#[derive(Debug, Clone)]
pub struct ConstantOracle {
    pub probs: Vec<f64>,
}

impl ConstantOracle {
    pub fn uniform(classes: usize) -> Self {
        Self {
            probs: vec![1.0 / classes as f64; classes],
        }
    }
}

impl ModelOracle for ConstantOracle {
    fn num_classes(&self) -> usize {
        self.probs.len()
    }
    fn evaluate(&self, batch: &[PointCloud]) -> Result<Vec<Vec<f64>>> {
        Ok(vec![self.probs.clone(); batch.len()])
    }
}
