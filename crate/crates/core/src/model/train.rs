use std::f64::consts::PI;

use rand::Rng;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{argmax, BuiltinClassifier, SyntheticDataset};
use crate::geometry::{Point, PointCloud, SCALE_RANGE, TRANSLATION_BOUND};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentFlags {
    /// Uniform offset in [−0.5, 0.5]³.
    pub translation: bool,
    /// Uniform factor in [0.5, 2].
    pub scale: bool,
    /// Uniform angle about the y axis.
    pub rotation_y: bool,
    /// Uniform angle about a uniformly random axis.
    pub rotation_random: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub augment: AugmentFlags,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            learning_rate: 2e-3,
            augment: AugmentFlags::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    /// Accuracy on the (augmented, possibly attacked) batches seen this epoch.
    pub train_accuracy: f64,
    /// Fraction of attacked training samples still classified correctly.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adversarial_accuracy: Option<f64>,
    /// Clean accuracy on the held-out split after the epoch.
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    pub test_accuracy: f64,
}

/// Replaces one (augmented) training sample before the gradient step. Gets the
/// current weights, the sample, its label and a per-sample seed; returns the
/// points to train on and whether the model classified them correctly.
pub type SampleHook<'a> = dyn Fn(&BuiltinClassifier, &PointCloud, usize, u64) -> Result<(Vec<Point>, bool)> + Sync + 'a;

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for k in 0..params.len() {
            self.m[k] = Self::B1 * self.m[k] + (1.0 - Self::B1) * grad[k];
            self.v[k] = Self::B2 * self.v[k] + (1.0 - Self::B2) * grad[k] * grad[k];
            params[k] -= lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + Self::EPS);
        }
    }
}

fn rodrigues(axis: Point, angle: f64) -> [[f64; 3]; 3] {
    let (s, c) = angle.sin_cos();
    let [x, y, z] = axis;
    let t = 1.0 - c;
    [
        [c + x * x * t, x * y * t - z * s, x * z * t + y * s],
        [y * x * t + z * s, c + y * y * t, y * z * t - x * s],
        [z * x * t - y * s, z * y * t + x * s, c + z * z * t],
    ]
}

pub(crate) fn augment(points: &[Point], flags: &AugmentFlags, rng: &mut impl Rng) -> Vec<Point> {
    let mut m = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    if flags.scale {
        let a = rng.random_range(SCALE_RANGE.0..=SCALE_RANGE.1);
        m = m.map(|row| row.map(|v| v * a));
    }
    if flags.rotation_y {
        m = crate::geometry::transform_mat_mul(&rodrigues([0.0, 1.0, 0.0], rng.random_range(0.0..2.0 * PI)), &m);
    }
    if flags.rotation_random {
        let axis = super::dataset_unit_vector(rng);
        m = crate::geometry::transform_mat_mul(&rodrigues(axis, rng.random_range(0.0..2.0 * PI)), &m);
    }
    let mut d = [0.0; 3];
    if flags.translation {
        d = std::array::from_fn(|_| rng.random_range(-TRANSLATION_BOUND..=TRANSLATION_BOUND));
    }
    if !(flags.scale || flags.rotation_y || flags.rotation_random || flags.translation) {
        return points.to_vec();
    }
    points
        .iter()
        .map(|p| {
            let q = crate::geometry::transform_mat_vec(&m, p);
            [q[0] + d[0], q[1] + d[1], q[2] + d[2]]
        })
        .collect()
}

/// Clean accuracy of `model` on labelled clouds.
pub fn accuracy(model: &BuiltinClassifier, clouds: &[&PointCloud]) -> f64 {
    if clouds.is_empty() {
        return 0.0;
    }
    let hits = crate::par::map_indexed(clouds.len(), |k| {
        let c = clouds[k];
        c.label == Some(argmax(&model.probs(&c.points)))
    });
    hits.iter().filter(|&&h| h).count() as f64 / clouds.len() as f64
}

/// Mini-batch softmax cross-entropy training with Adam.
pub fn train(model: &mut BuiltinClassifier, data: &SyntheticDataset, cfg: &TrainConfig, seed: u64) -> Result<TrainReport> {
    fit_with(model, data, cfg, seed, None)
}

/// Training loop shared by plain and adversarial training. Randomness is drawn
/// from per-(epoch, sample) substreams; per-sample gradients are summed in
/// batch order, so the weight trajectory is the same for any worker count.
pub fn fit_with(
    model: &mut BuiltinClassifier,
    data: &SyntheticDataset,
    cfg: &TrainConfig,
    seed: u64,
    hook: Option<&SampleHook>,
) -> Result<TrainReport> {
    let train: Vec<&PointCloud> = data.train();
    if train.is_empty() {
        return Err(Error::arg("dataset has no training split"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::arg("batch size must be positive"));
    }
    if train.iter().any(|c| c.label.is_none_or(|l| l >= model.classes())) {
        return Err(Error::arg("training sample without a valid label"));
    }
    let test = data.test();
    let mut adam = Adam::new(model.param_count());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut logs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut crate::seed::rng(seed, &[0, epoch as u64]));
        let mut loss_sum = 0.0;
        let mut hits = 0usize;
        let mut adv_hits = 0usize;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let snapshot = &*model;
            let results = crate::par::try_map_indexed(batch.len(), |j| {
                let idx = batch[j];
                let sample = train[idx];
                let label = sample.label.expect("checked above");
                let mut rng = crate::seed::rng(seed, &[1, epoch as u64, idx as u64]);
                let mut pts = augment(&sample.points, &cfg.augment, &mut rng);
                let mut adv_ok = None;
                if let Some(h) = hook {
                    let sample_seed = crate::seed::derive(seed, &[2, epoch as u64, idx as u64]);
                    let (p, ok) = h(snapshot, &sample.with_points(pts), label, sample_seed)?;
                    pts = p;
                    adv_ok = Some(ok);
                }
                let tr = snapshot.trace(&pts);
                let mut grad = snapshot.zeros_like();
                let (loss, _) = snapshot.backward(&tr, label, &mut grad);
                Ok((grad, loss, argmax(&tr.probs) == label, adv_ok))
            })?;
            let mut total = model.zeros_like();
            for (grad, loss, hit, adv_ok) in &results {
                if !loss.is_finite() {
                    return Err(Error::Training(format!("non-finite loss at epoch {epoch}, batch {b}")));
                }
                total.add_assign(grad);
                loss_sum += loss;
                hits += *hit as usize;
                adv_hits += adv_ok.unwrap_or(false) as usize;
            }
            let scale = 1.0 / batch.len() as f64;
            let g: Vec<f64> = total.flat().into_iter().map(|v| v * scale).collect();
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Training(format!("non-finite gradient at epoch {epoch}, batch {b}")));
            }
            let mut params = model.flat();
            adam.step(&mut params, &g, cfg.learning_rate);
            model.set_flat(&params);
        }
        let n = train.len() as f64;
        logs.push(EpochLog {
            epoch,
            loss: loss_sum / n,
            train_accuracy: hits as f64 / n,
            adversarial_accuracy: hook.map(|_| adv_hits as f64 / n),
            test_accuracy: accuracy(model, &test),
        });
    }
    Ok(TrainReport {
        test_accuracy: accuracy(model, &test),
        epochs: logs,
    })
}
