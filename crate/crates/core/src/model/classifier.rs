use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{softmax, ModelOracle, PooledModel};
use crate::geometry::{Point, PointCloud};
use crate::{Error, Result};

/// Fully connected layer. Weights are stored input-major (`w[k * out + o]`)
/// so the inner loop runs over independent outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub input: usize,
    pub output: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    fn zeros(input: usize, output: usize) -> Self {
        Self {
            input,
            output,
            w: vec![0.0; input * output],
            b: vec![0.0; output],
        }
    }

    fn he_uniform(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / input as f64).sqrt();
        Self {
            input,
            output,
            w: (0..input * output).map(|_| rng.random_range(-bound..bound)).collect(),
            b: vec![0.0; output],
        }
    }

    /// `out = b + xᵀW`, optionally rectified.
    #[inline]
    fn forward_into(&self, x: &[f64], out: &mut [f64], relu: bool) {
        out.copy_from_slice(&self.b);
        for (k, &xk) in x.iter().enumerate() {
            if xk == 0.0 {
                continue;
            }
            let row = &self.w[k * self.output..(k + 1) * self.output];
            for (o, w) in out.iter_mut().zip(row) {
                *o += xk * w;
            }
        }
        if relu {
            for o in out.iter_mut() {
                if *o < 0.0 {
                    *o = 0.0;
                }
            }
        }
    }

    /// Accumulates dW, db for upstream gradient `g` at input `x`, and returns dx.
    fn backward(&self, x: &[f64], g: &[f64], grad: &mut Dense) -> Vec<f64> {
        let mut dx = vec![0.0; self.input];
        for (k, &xk) in x.iter().enumerate() {
            let row = &self.w[k * self.output..(k + 1) * self.output];
            let grow = &mut grad.w[k * self.output..(k + 1) * self.output];
            let mut acc = 0.0;
            for o in 0..self.output {
                grow[o] += xk * g[o];
                acc += row[o] * g[o];
            }
            dx[k] = acc;
        }
        for (db, gv) in grad.b.iter_mut().zip(g) {
            *db += gv;
        }
        dx
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierShape {
    /// Widths of the shared per-point layers, starting with the input width 3.
    pub point_dims: Vec<usize>,
    /// Widths of the head after pooling, ending with the class count.
    pub head_dims: Vec<usize>,
}

impl ClassifierShape {
    pub fn standard(classes: usize) -> Self {
        Self {
            point_dims: vec![3, 64, 128],
            head_dims: vec![128, 64, classes],
        }
    }

    fn validate(&self) -> Result<()> {
        if self.point_dims.len() < 2 || self.point_dims[0] != 3 {
            return Err(Error::arg("point layers must start at width 3"));
        }
        if self.head_dims.len() < 2 || self.head_dims[0] != *self.point_dims.last().unwrap() {
            return Err(Error::arg("head input must equal the pooled feature width"));
        }
        if self.point_dims.iter().chain(&self.head_dims).any(|&d| d == 0) || *self.head_dims.last().unwrap() < 2 {
            return Err(Error::arg("layer widths must be positive and classes >= 2"));
        }
        Ok(())
    }
}

/// Shared per-point MLP, max-pool over points, dense head, softmax. The
/// forward pass is invariant to point order.
#[derive(Debug, Clone, PartialEq)]
pub struct BuiltinClassifier {
    pub point_layers: Vec<Dense>,
    pub head_layers: Vec<Dense>,
}

/// Intermediate values of one forward pass.
pub(crate) struct Trace {
    /// Per point-layer activations, row-major P × width, starting with the input.
    acts: Vec<Vec<f64>>,
    argmax: Vec<usize>,
    /// Head activations starting with the pooled vector.
    head_acts: Vec<Vec<f64>>,
    pub probs: Vec<f64>,
}

impl BuiltinClassifier {
    pub fn new(shape: &ClassifierShape, rng: &mut impl Rng) -> Result<Self> {
        shape.validate()?;
        let point_layers = shape.point_dims.windows(2).map(|w| Dense::he_uniform(w[0], w[1], rng)).collect();
        let head_layers = shape.head_dims.windows(2).map(|w| Dense::he_uniform(w[0], w[1], rng)).collect();
        Ok(Self {
            point_layers,
            head_layers,
        })
    }

    pub fn shape(&self) -> ClassifierShape {
        let mut point_dims = vec![self.point_layers[0].input];
        point_dims.extend(self.point_layers.iter().map(|l| l.output));
        let mut head_dims = vec![self.head_layers[0].input];
        head_dims.extend(self.head_layers.iter().map(|l| l.output));
        ClassifierShape { point_dims, head_dims }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            point_layers: self.point_layers.iter().map(|l| Dense::zeros(l.input, l.output)).collect(),
            head_layers: self.head_layers.iter().map(|l| Dense::zeros(l.input, l.output)).collect(),
        }
    }

    fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.point_layers.iter().chain(&self.head_layers)
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.point_layers.iter_mut().chain(self.head_layers.iter_mut())
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        for l in self.layers() {
            v.extend_from_slice(&l.w);
            v.extend_from_slice(&l.b);
        }
        v
    }

    pub fn set_flat(&mut self, v: &[f64]) {
        let mut at = 0;
        for l in self.layers_mut() {
            let (nw, nb) = (l.w.len(), l.b.len());
            l.w.copy_from_slice(&v[at..at + nw]);
            at += nw;
            l.b.copy_from_slice(&v[at..at + nb]);
            at += nb;
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.layers_mut().zip(other.layers()) {
            a.w.iter_mut().zip(&b.w).for_each(|(x, y)| *x += y);
            a.b.iter_mut().zip(&b.b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn classes(&self) -> usize {
        self.head_layers.last().unwrap().output
    }

    fn feature_width(&self) -> usize {
        self.point_layers.last().unwrap().output
    }

    fn point_pass(&self, points: &[Point], keep: bool) -> Vec<Vec<f64>> {
        let p = points.len();
        let mut acts = Vec::with_capacity(self.point_layers.len() + 1);
        let mut cur: Vec<f64> = points.iter().flat_map(|q| q.iter().copied()).collect();
        let mut width = 3;
        for layer in &self.point_layers {
            let mut next = vec![0.0; p * layer.output];
            for r in 0..p {
                layer.forward_into(
                    &cur[r * width..(r + 1) * width],
                    &mut next[r * layer.output..(r + 1) * layer.output],
                    true,
                );
            }
            width = layer.output;
            if keep {
                acts.push(std::mem::replace(&mut cur, next));
            } else {
                cur = next;
            }
        }
        acts.push(cur);
        acts
    }

    fn head_pass(&self, pooled: Vec<f64>) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut acts = vec![pooled];
        let last = self.head_layers.len() - 1;
        for (k, layer) in self.head_layers.iter().enumerate() {
            let mut out = vec![0.0; layer.output];
            layer.forward_into(acts.last().unwrap(), &mut out, k != last);
            acts.push(out);
        }
        let logits = acts.pop().unwrap();
        (acts, softmax(&logits))
    }

    fn max_pool(features: &[f64], width: usize) -> (Vec<f64>, Vec<usize>) {
        let mut pooled = vec![f64::NEG_INFINITY; width];
        let mut arg = vec![0; width];
        for (r, row) in features.chunks_exact(width).enumerate() {
            for c in 0..width {
                if row[c] > pooled[c] {
                    pooled[c] = row[c];
                    arg[c] = r;
                }
            }
        }
        (pooled, arg)
    }

    pub(crate) fn trace(&self, points: &[Point]) -> Trace {
        let acts = self.point_pass(points, true);
        let (pooled, argmax) = Self::max_pool(acts.last().unwrap(), self.feature_width());
        let (head_acts, probs) = self.head_pass(pooled);
        Trace {
            acts,
            argmax,
            head_acts,
            probs,
        }
    }

    /// Max-pool winners plus the sign pattern of every rectified unit that can
    /// reach the output (the winners' point features and the head); the
    /// network is smooth wherever this stays fixed.
    #[cfg(test)]
    pub(crate) fn activation_pattern(&self, points: &[Point]) -> (Vec<usize>, Vec<bool>) {
        let tr = self.trace(points);
        let mut winners = tr.argmax.clone();
        winners.sort_unstable();
        winners.dedup();
        let mut signs = Vec::new();
        for a in &tr.acts[1..] {
            let w = a.len() / points.len();
            for &p in &winners {
                signs.extend(a[p * w..(p + 1) * w].iter().map(|v| *v > 0.0));
            }
        }
        for a in &tr.head_acts[1..tr.head_acts.len().saturating_sub(1)] {
            signs.extend(a.iter().map(|v| *v > 0.0));
        }
        (tr.argmax, signs)
    }

    pub fn probs(&self, points: &[Point]) -> Vec<f64> {
        self.head_probs(&self.pooled_features(points))
    }

    pub fn pooled_features(&self, points: &[Point]) -> Vec<f64> {
        let feats = self.point_pass(points, false).pop().unwrap();
        Self::max_pool(&feats, self.feature_width()).0
    }

    /// Accumulates the cross-entropy gradient of one sample into `grad` and
    /// returns (loss, d loss / d point).
    pub(crate) fn backward(&self, tr: &Trace, label: usize, grad: &mut Self) -> (f64, Vec<Point>) {
        let loss = -tr.probs[label].max(1e-300).ln();
        let mut g: Vec<f64> = tr.probs.clone();
        g[label] -= 1.0;
        let last = self.head_layers.len() - 1;
        for k in (0..self.head_layers.len()).rev() {
            if k != last {
                // rectified activation: gradient flows only where the output was positive
                let post = &tr.head_acts[k + 1];
                for (gv, a) in g.iter_mut().zip(post) {
                    if *a <= 0.0 {
                        *gv = 0.0;
                    }
                }
            }
            g = self.head_layers[k].backward(&tr.head_acts[k], &g, &mut grad.head_layers[k]);
        }
        // max-pool routes each channel's gradient to its argmax point only
        let width = self.feature_width();
        let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
        for c in 0..width {
            if g[c] == 0.0 {
                continue;
            }
            let r = tr.argmax[c];
            match rows.iter_mut().find(|(row, _)| *row == r) {
                Some((_, v)) => v[c] += g[c],
                None => {
                    let mut v = vec![0.0; width];
                    v[c] = g[c];
                    rows.push((r, v));
                }
            }
        }
        rows.sort_by_key(|(r, _)| *r);
        let p = tr.acts[0].len() / 3;
        let mut dpoints = vec![[0.0; 3]; p];
        for (r, mut gr) in rows {
            for k in (0..self.point_layers.len()).rev() {
                let layer = &self.point_layers[k];
                let post = &tr.acts[k + 1][r * layer.output..(r + 1) * layer.output];
                for (gv, a) in gr.iter_mut().zip(post) {
                    if *a <= 0.0 {
                        *gv = 0.0;
                    }
                }
                let input = &tr.acts[k][r * layer.input..(r + 1) * layer.input];
                gr = layer.backward(input, &gr, &mut grad.point_layers[k]);
            }
            dpoints[r] = [gr[0], gr[1], gr[2]];
        }
        (loss, dpoints)
    }

    pub fn to_weight_file(&self) -> WeightFile {
        let dump = |kind: &str, idx: usize, l: &Dense| {
            // stored row-major as out × in
            let mut weights = vec![0.0; l.w.len()];
            for k in 0..l.input {
                for o in 0..l.output {
                    weights[o * l.input + k] = l.w[k * l.output + o];
                }
            }
            LayerRecord {
                name: format!("{kind}{idx}"),
                kind: kind.to_string(),
                shape: [l.output, l.input],
                weights,
                bias: l.b.clone(),
            }
        };
        let mut layers: Vec<LayerRecord> =
            self.point_layers.iter().enumerate().map(|(i, l)| dump("point", i, l)).collect();
        layers.extend(self.head_layers.iter().enumerate().map(|(i, l)| dump("head", i, l)));
        WeightFile {
            version: 1,
            activation: "relu".into(),
            pooling: "max".into(),
            layers,
        }
    }

    pub fn from_weight_file(file: &WeightFile) -> Result<Self> {
        if file.version != 1 {
            return Err(Error::Parse(format!("unsupported weight file version {}", file.version)));
        }
        if file.activation != "relu" || file.pooling != "max" {
            return Err(Error::Parse("only relu activation with max pooling is supported".into()));
        }
        let mut point_layers = Vec::new();
        let mut head_layers = Vec::new();
        for rec in &file.layers {
            let [out, inp] = rec.shape;
            if rec.weights.len() != out * inp || rec.bias.len() != out {
                return Err(Error::Parse(format!("layer {} has inconsistent shape", rec.name)));
            }
            if rec.weights.iter().chain(&rec.bias).any(|v| !v.is_finite()) {
                return Err(Error::Parse(format!("layer {} has non-finite values", rec.name)));
            }
            let mut w = vec![0.0; out * inp];
            for o in 0..out {
                for k in 0..inp {
                    w[k * out + o] = rec.weights[o * inp + k];
                }
            }
            let dense = Dense {
                input: inp,
                output: out,
                w,
                b: rec.bias.clone(),
            };
            match rec.kind.as_str() {
                "point" => point_layers.push(dense),
                "head" => head_layers.push(dense),
                other => return Err(Error::Parse(format!("unknown layer kind {other:?}"))),
            }
        }
        if point_layers.is_empty() || head_layers.is_empty() {
            return Err(Error::Parse("weight file needs point and head layers".into()));
        }
        let model = Self {
            point_layers,
            head_layers,
        };
        let shape = model.shape();
        shape.validate()?;
        let chained = |ls: &[Dense]| ls.windows(2).all(|w| w[0].output == w[1].input);
        if !chained(&model.point_layers) || !chained(&model.head_layers) {
            return Err(Error::Parse("layer widths do not chain".into()));
        }
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_weight_file())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_weight_file(&serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Versioned, language-neutral weight persistence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightFile {
    pub version: u32,
    pub activation: String,
    pub pooling: String,
    pub layers: Vec<LayerRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerRecord {
    pub name: String,
    /// "point" (shared per-point layer) or "head" (after pooling).
    pub kind: String,
    /// [out, in]
    pub shape: [usize; 2],
    /// Row-major out × in.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl PooledModel for BuiltinClassifier {
    fn feature_dim(&self) -> usize {
        self.feature_width()
    }

    fn point_features(&self, points: &[Point]) -> Vec<f64> {
        self.point_pass(points, false).pop().unwrap()
    }

    fn head_probs(&self, pooled: &[f64]) -> Vec<f64> {
        self.head_pass(pooled.to_vec()).1
    }
}

impl ModelOracle for BuiltinClassifier {
    fn num_classes(&self) -> usize {
        self.classes()
    }

    fn evaluate(&self, batch: &[PointCloud]) -> Result<Vec<Vec<f64>>> {
        Ok(crate::par::map_indexed(batch.len(), |k| self.probs(&batch[k].points)))
    }

    fn embed(&self, batch: &[PointCloud]) -> Result<Vec<Vec<f64>>> {
        Ok(crate::par::map_indexed(batch.len(), |k| self.pooled_features(&batch[k].points)))
    }

    fn loss_gradient(&self, points: &[Point], label: usize) -> Result<(f64, Vec<Point>)> {
        if label >= self.classes() {
            return Err(Error::arg(format!("label {label} out of range")));
        }
        let tr = self.trace(points);
        let mut scratch = self.zeros_like();
        Ok(self.backward(&tr, label, &mut scratch))
    }

    fn pooled(&self) -> Option<&dyn PooledModel> {
        Some(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;

    fn small() -> BuiltinClassifier {
        let shape = ClassifierShape {
            point_dims: vec![3, 8, 16],
            head_dims: vec![16, 8, 3],
        };
        BuiltinClassifier::new(&shape, &mut crate::seed::rng(1, &[])).unwrap()
    }

    fn cloud(seed: u64, p: usize) -> Vec<Point> {
        let mut rng = crate::seed::rng(seed, &[]);
        (0..p).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect()
    }

    #[test]
    fn permutation_invariant() {
        let m = BuiltinClassifier::new(&ClassifierShape::standard(4), &mut crate::seed::rng(2, &[])).unwrap();
        let mut pts = cloud(3, 256);
        let a = m.probs(&pts);
        pts.shuffle(&mut crate::seed::rng(4, &[]));
        let b = m.probs(&pts);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9);
        }
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weight_file_round_trip() {
        let m = small();
        let json = m.to_json().unwrap();
        let back = BuiltinClassifier::from_json(&json).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json().unwrap(), json);
        assert!(json.starts_with("{\"version\":1"));
    }

    #[test]
    fn weight_file_rejects_bad_shapes() {
        let mut f = small().to_weight_file();
        f.layers[1].bias.pop();
        assert!(BuiltinClassifier::from_weight_file(&f).is_err());
        let mut f = small().to_weight_file();
        f.version = 2;
        assert!(BuiltinClassifier::from_weight_file(&f).is_err());
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        let m = small();
        let pts = cloud(5, 40);
        let mut grad = m.zeros_like();
        let tr = m.trace(&pts);
        m.backward(&tr, 1, &mut grad);
        let base = m.flat();
        let g = grad.flat();
        let loss = |v: &[f64]| {
            let mut mm = m.clone();
            mm.set_flat(v);
            -mm.probs(&pts)[1].ln()
        };
        let h = 1e-6;
        let mut checked = 0;
        for k in (0..base.len()).step_by(7) {
            let mut up = base.clone();
            up[k] += h;
            let mut dn = base.clone();
            dn[k] -= h;
            let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-5 * (1.0 + fd.abs()), "param {k}: {fd} vs {}", g[k]);
            checked += 1;
        }
        assert!(checked > 20);
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let m = small();
        let pts = cloud(6, 30);
        let (_, dx) = m.loss_gradient(&pts, 2).unwrap();
        let h = 1e-6;
        for a in [0, 7, 13, 29] {
            for c in 0..3 {
                let mut up = pts.clone();
                up[a][c] += h;
                let mut dn = pts.clone();
                dn[a][c] -= h;
                let fd = (-m.probs(&up)[2].ln() + m.probs(&dn)[2].ln()) / (2.0 * h);
                assert!((fd - dx[a][c]).abs() < 1e-5 * (1.0 + fd.abs()));
            }
        }
    }
}
