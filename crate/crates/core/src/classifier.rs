//! Desk-scale image classifiers, the hinge adversarial loss, and the
//! query-counting black-box oracle.
//!
//! Four trainable architectures of genuinely different depth/width stand in
//! for the usual large-model families; a fifth minimal `Linear` head exists
//! for closed-form oracles in tests and toy constructions.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::{BoundParams, NdArray, NodeId, ParamStore, Tape};
use crate::util::linf_norm;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Architecture descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Arch {
    /// flatten -> dense(nc); closed-form oracle head.
    Linear,
    /// flatten -> dense(32) -> tanh -> dense(nc).
    Mlp2,
    /// conv3x3x4 -> relu -> dense(nc).
    CnnSmall,
    /// conv3x3x8 -> relu -> dense(nc).
    CnnWide,
    /// conv3x3x4 -> relu -> conv3x3x6 -> relu -> dense(nc).
    CnnDeep,
}

impl Arch {
    pub fn tag(&self) -> u32 {
        match self {
            Arch::Linear => 0,
            Arch::Mlp2 => 1,
            Arch::CnnSmall => 2,
            Arch::CnnWide => 3,
            Arch::CnnDeep => 4,
        }
    }

    pub fn from_tag(tag: u32) -> Result<Self> {
        Ok(match tag {
            0 => Arch::Linear,
            1 => Arch::Mlp2,
            2 => Arch::CnnSmall,
            3 => Arch::CnnWide,
            4 => Arch::CnnDeep,
            other => return Err(Error::invalid(format!("unknown arch tag {other}"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Arch::Linear => "linear",
            Arch::Mlp2 => "mlp-2",
            Arch::CnnSmall => "cnn-small",
            Arch::CnnWide => "cnn-wide",
            Arch::CnnDeep => "cnn-deep",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "linear" => Arch::Linear,
            "mlp-2" => Arch::Mlp2,
            "cnn-small" => Arch::CnnSmall,
            "cnn-wide" => Arch::CnnWide,
            "cnn-deep" => Arch::CnnDeep,
            other => return Err(Error::invalid(format!("unknown arch `{other}`"))),
        })
    }
}

/// Attack goal for the adversarial loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttackMode {
    Untargeted,
    Targeted(usize),
}

impl AttackMode {
    pub fn parse(s: &str) -> Result<Self> {
        if s == "untargeted" {
            return Ok(AttackMode::Untargeted);
        }
        if let Some(t) = s.strip_prefix("targeted:") {
            let t: usize = t
                .parse()
                .map_err(|_| Error::invalid(format!("bad target class in `{s}`")))?;
            return Ok(AttackMode::Targeted(t));
        }
        Err(Error::invalid(format!(
            "mode `{s}` is not `untargeted` or `targeted:<t>`"
        )))
    }

    pub fn describe(&self) -> String {
        match self {
            AttackMode::Untargeted => "untargeted".into(),
            AttackMode::Targeted(t) => format!("targeted:{t}"),
        }
    }
}

/// The l-inf hinge loss specification of the attack objective.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdvLossSpec {
    pub mode: AttackMode,
    pub epsilon: f64,
}

impl AdvLossSpec {
    pub fn new(mode: AttackMode, epsilon: f64) -> Result<Self> {
        if epsilon <= 0.0 {
            return Err(Error::invalid("epsilon must be positive"));
        }
        Ok(AdvLossSpec { mode, epsilon })
    }

    fn check_target(&self, num_classes: usize) -> Result<()> {
        if let AttackMode::Targeted(t) = self.mode {
            if t >= num_classes {
                return Err(Error::invalid(format!(
                    "target class {t} out of range [0, {num_classes})"
                )));
            }
        }
        Ok(())
    }
}

/// A trained (or initialized) classifier.
#[derive(Debug, Clone)]
pub struct ClassifierModel {
    pub arch: Arch,
    /// (H, W, C)
    pub input_shape: (usize, usize, usize),
    pub num_classes: usize,
    pub params: ParamStore,
}

impl ClassifierModel {
    /// Fresh model with seeded He/Xavier-style initialization.
    pub fn init(arch: Arch, input_shape: (usize, usize, usize), num_classes: usize, seed: u64) -> Self {
        let (h, w, c) = input_shape;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let dense = |params: &mut ParamStore, name: &str, din: usize, dout: usize, rng: &mut ChaCha8Rng| {
            let s = (1.0 / din as f64).sqrt();
            let data: Vec<f64> = (0..din * dout)
                .map(|_| s * rng.sample::<f64, _>(StandardNormal))
                .collect();
            params.insert(format!("{name}.w"), NdArray::from_vec(vec![dout, din], data).unwrap());
            params.insert(format!("{name}.b"), NdArray::zeros(&[dout]));
        };
        let conv = |params: &mut ParamStore, name: &str, cin: usize, cout: usize, rng: &mut ChaCha8Rng| {
            let fan_in = cin * 9;
            let s = (2.0 / fan_in as f64).sqrt();
            let data: Vec<f64> = (0..cout * cin * 9)
                .map(|_| s * rng.sample::<f64, _>(StandardNormal))
                .collect();
            params.insert(
                format!("{name}.k"),
                NdArray::from_vec(vec![cout, cin, 3, 3], data).unwrap(),
            );
            params.insert(format!("{name}.b"), NdArray::zeros(&[cout]));
        };
        let flat = h * w * c;
        match arch {
            Arch::Linear => dense(&mut params, "out", flat, num_classes, &mut rng),
            Arch::Mlp2 => {
                dense(&mut params, "fc0", flat, 32, &mut rng);
                dense(&mut params, "out", 32, num_classes, &mut rng);
            }
            Arch::CnnSmall => {
                conv(&mut params, "conv0", c, 4, &mut rng);
                dense(&mut params, "out", 4 * (h - 2) * (w - 2), num_classes, &mut rng);
            }
            Arch::CnnWide => {
                conv(&mut params, "conv0", c, 8, &mut rng);
                dense(&mut params, "out", 8 * (h - 2) * (w - 2), num_classes, &mut rng);
            }
            Arch::CnnDeep => {
                conv(&mut params, "conv0", c, 4, &mut rng);
                conv(&mut params, "conv1", 4, 6, &mut rng);
                dense(&mut params, "out", 6 * (h - 4) * (w - 4), num_classes, &mut rng);
            }
        }
        ClassifierModel {
            arch,
            input_shape,
            num_classes,
            params,
        }
    }

    /// Internal image shape `[C, H, W]`.
    pub fn chw(&self) -> Vec<usize> {
        let (h, w, c) = self.input_shape;
        vec![c, h, w]
    }

    /// Build the logits subgraph on `tape` for input node `x` using the given
    /// parameter bindings. Used both for training (bind trainable) and for
    /// white-box gradient paths (bind frozen).
    pub fn build_logits(&self, tape: &mut Tape, bound: &BoundParams, x: NodeId) -> Result<NodeId> {
        let (h, w, _c) = self.input_shape;
        let dense = |tape: &mut Tape, name: &str, v: NodeId| -> Result<NodeId> {
            let wn = bound.node(&format!("{name}.w"));
            let bn = bound.node(&format!("{name}.b"));
            let lin = tape.matvec(wn, v)?;
            tape.add(lin, bn)
        };
        let conv_relu = |tape: &mut Tape, name: &str, v: NodeId| -> Result<NodeId> {
            let kn = bound.node(&format!("{name}.k"));
            let bn = bound.node(&format!("{name}.b"));
            let y = tape.conv2d(v, kn, 0)?;
            let y = tape.channel_bias(y, bn)?;
            Ok(tape.relu(y))
        };
        let flatten = |tape: &mut Tape, v: NodeId| -> Result<NodeId> {
            let n = tape.value(v).len();
            tape.reshape(v, &[n])
        };
        match self.arch {
            Arch::Linear => {
                let v = flatten(tape, x)?;
                dense(tape, "out", v)
            }
            Arch::Mlp2 => {
                let v = flatten(tape, x)?;
                let hid = dense(tape, "fc0", v)?;
                let hid = tape.tanh(hid);
                dense(tape, "out", hid)
            }
            Arch::CnnSmall | Arch::CnnWide => {
                let y = conv_relu(tape, "conv0", x)?;
                let v = flatten(tape, y)?;
                dense(tape, "out", v)
            }
            Arch::CnnDeep => {
                let y = conv_relu(tape, "conv0", x)?;
                let y = conv_relu(tape, "conv1", y)?;
                let v = flatten(tape, y)?;
                dense(tape, "out", v)
            }
        }
        .map(|logits| {
            debug_assert_eq!(tape.value(logits).len(), self.num_classes);
            let _ = (h, w);
            logits
        })
    }

    /// Per-class logits for an image shaped `[C,H,W]`.
    pub fn logits(&self, x: &NdArray) -> Result<Vec<f64>> {
        if x.shape() != self.chw().as_slice() {
            return Err(Error::invalid(format!(
                "input shape {:?} != model shape {:?}",
                x.shape(),
                self.chw()
            )));
        }
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let xn = tape.leaf(x.clone());
        let out = self.build_logits(&mut tape, &bound, xn)?;
        Ok(tape.value(out).data().to_vec())
    }

    pub fn predict(&self, x: &NdArray) -> Result<usize> {
        Ok(argmax(&self.logits(x)?))
    }

    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        if data.len() == 0 {
            return Err(Error::EmptyDataset);
        }
        let mut hits = 0usize;
        for i in 0..data.len() {
            if self.predict(data.image(i))? == data.labels[i] {
                hits += 1;
            }
        }
        Ok(hits as f64 / data.len() as f64)
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// The margin term of the attack objective, from raw logits.
pub fn margin(logits: &[f64], y: usize, mode: AttackMode) -> f64 {
    let max_excluding = |skip: usize| {
        logits
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != skip)
            .map(|(_, &v)| v)
            .fold(f64::NEG_INFINITY, f64::max)
    };
    match mode {
        AttackMode::Untargeted => logits[y] - max_excluding(y),
        AttackMode::Targeted(t) => max_excluding(t) - logits[t],
    }
}

/// Adversarial loss: ball indicator plus hinge margin. Returns the
/// `f64::INFINITY` sentinel for out-of-ball perturbations; the sentinel
/// orders above every finite loss, so rank-based consumers need no special
/// casing. Zero iff the in-ball perturbation flips the prediction as asked.
pub fn adv_loss(
    model: &ClassifierModel,
    x: &NdArray,
    y: usize,
    eta: &NdArray,
    spec: &AdvLossSpec,
) -> Result<f64> {
    if eta.shape() != x.shape() {
        return Err(Error::invalid(format!(
            "perturbation shape {:?} != image shape {:?}",
            eta.shape(),
            x.shape()
        )));
    }
    spec.check_target(model.num_classes)?;
    if linf_norm(eta.data()) > spec.epsilon {
        return Ok(f64::INFINITY);
    }
    let perturbed = NdArray::from_vec(
        x.shape().to_vec(),
        x.data().iter().zip(eta.data()).map(|(a, b)| a + b).collect(),
    )?;
    let logits = model.logits(&perturbed)?;
    Ok(margin(&logits, y, spec.mode).max(0.0))
}

/// Mean adversarial loss over a surrogate ensemble; any out-of-ball member
/// short-circuits to the sentinel (the indicator is shared).
pub fn ensemble_adv_loss(
    models: &[&ClassifierModel],
    x: &NdArray,
    y: usize,
    eta: &NdArray,
    spec: &AdvLossSpec,
) -> Result<f64> {
    if models.is_empty() {
        return Err(Error::invalid("empty surrogate ensemble"));
    }
    if linf_norm(eta.data()) > spec.epsilon {
        return Ok(f64::INFINITY);
    }
    let mut total = 0.0;
    for m in models {
        let l = adv_loss(m, x, y, eta, spec)?;
        if l.is_infinite() {
            return Ok(f64::INFINITY);
        }
        total += l;
    }
    Ok(total / models.len() as f64)
}

/// Score-based black-box access: hides the model, counts every loss query.
pub struct QueryOracle<'a> {
    model: &'a ClassifierModel,
    count: u64,
}

impl<'a> QueryOracle<'a> {
    pub fn new(model: &'a ClassifierModel) -> Self {
        QueryOracle { model, count: 0 }
    }

    /// One adversarial-loss evaluation; increments the counter by exactly 1.
    pub fn query(&mut self, x: &NdArray, y: usize, eta: &NdArray, spec: &AdvLossSpec) -> Result<f64> {
        self.count += 1;
        adv_loss(self.model, x, y, eta, spec)
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn num_classes(&self) -> usize {
        self.model.num_classes
    }

    /// Benign prediction; not a loss query (used for skip policies).
    pub fn predict_benign(&self, x: &NdArray) -> Result<usize> {
        self.model.predict(x)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 12,
            lr: 0.05,
            batch: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub final_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

/// Cross-entropy SGD training; deterministic given `cfg.seed`.
pub fn train_classifier(
    train: &Dataset,
    test: Option<&Dataset>,
    arch: Arch,
    cfg: &TrainConfig,
) -> Result<(ClassifierModel, TrainReport)> {
    if train.len() == 0 {
        return Err(Error::EmptyDataset);
    }
    if train.labels.iter().any(|&l| l >= train.num_classes) {
        return Err(Error::invalid("label out of range"));
    }
    let (h, w, c) = (train.height, train.width, train.channels);
    let mut model = ClassifierModel::init(arch, (h, w, c), train.num_classes, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let n = train.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut last_loss = f64::INFINITY;

    for _epoch in 0..cfg.epochs {
        // Fisher-Yates with the run RNG keeps epochs deterministic.
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(cfg.batch.max(1)) {
            let mut tape = Tape::new();
            let bound = model.params.bind(&mut tape);
            let mut per_example = Vec::with_capacity(chunk.len());
            for &idx in chunk {
                let xn = tape.leaf(train.image(idx).clone());
                let logits = model.build_logits(&mut tape, &bound, xn)?;
                per_example.push(cross_entropy(&mut tape, logits, train.labels[idx])?);
            }
            let total = if per_example.len() == 1 {
                per_example[0]
            } else {
                let cells = reshape_all(&mut tape, &per_example)?;
                let stacked = tape.concat_axis0(&cells)?;
                tape.sum(stacked)
            };
            let loss = tape.scale(total, 1.0 / chunk.len() as f64);
            last_loss = tape.value(loss).item();
            let grads = tape.backward(loss)?;
            let flat = bound.flat_gradient(&grads);
            model.params.step(&flat, cfg.lr)?;
        }
    }

    let train_accuracy = model.accuracy(train)?;
    let test_accuracy = match test {
        Some(t) => Some(model.accuracy(t)?),
        None => None,
    };
    Ok((
        model,
        TrainReport {
            final_loss: last_loss,
            train_accuracy,
            test_accuracy,
        },
    ))
}

fn reshape_all(tape: &mut Tape, scalars: &[NodeId]) -> Result<Vec<NodeId>> {
    scalars.iter().map(|&s| tape.reshape(s, &[1])).collect()
}

/// `logsumexp(logits) - logits[y]`, with a constant max shift for stability.
fn cross_entropy(tape: &mut Tape, logits: NodeId, y: usize) -> Result<NodeId> {
    let m = tape
        .value(logits)
        .data()
        .iter()
        .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let shifted = tape.add_scalar(logits, -m);
    let e = tape.exp(shifted);
    let s = tape.sum(e);
    let lse = tape.log(s);
    let lse = tape.add_scalar(lse, m);
    let nc = tape.value(logits).len();
    let mut onehot = vec![0.0; nc];
    onehot[y] = 1.0;
    let oh = tape.leaf(NdArray::from_vec(vec![nc], onehot)?);
    let ly = tape.dot(logits, oh)?;
    tape.sub(lse, ly)
}

/// Hinge margin as a tape subgraph (used by the energy trainer's white-box
/// path): `relu(margin)` with the margin assembled from masked max and a
/// one-hot dot, exactly mirroring [`margin`].
pub fn build_hinge(
    tape: &mut Tape,
    logits: NodeId,
    y: usize,
    mode: AttackMode,
) -> Result<NodeId> {
    let nc = tape.value(logits).len();
    let onehot = |tape: &mut Tape, idx: usize| -> Result<NodeId> {
        let mut v = vec![0.0; nc];
        v[idx] = 1.0;
        let leaf = tape.leaf(NdArray::from_vec(vec![nc], v)?);
        Ok(leaf)
    };
    let masked_max = |tape: &mut Tape, skip: usize| -> Result<NodeId> {
        let mut mask = vec![0.0; nc];
        mask[skip] = -1e30;
        let m = tape.leaf(NdArray::from_vec(vec![nc], mask)?);
        let masked = tape.add(logits, m)?;
        Ok(tape.max(masked))
    };
    let delta = match mode {
        AttackMode::Untargeted => {
            let oh = onehot(tape, y)?;
            let fy = tape.dot(logits, oh)?;
            let other = masked_max(tape, y)?;
            tape.sub(fy, other)?
        }
        AttackMode::Targeted(t) => {
            let oh = onehot(tape, t)?;
            let ft = tape.dot(logits, oh)?;
            let other = masked_max(tape, t)?;
            tape.sub(other, ft)?
        }
    };
    Ok(tape.relu(delta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic_dataset, DatasetConfig};

    fn tiny_image(vals: &[f64], h: usize, w: usize) -> NdArray {
        NdArray::from_vec(vec![1, h, w], vals.to_vec()).unwrap()
    }

    fn linear_model(weights: Vec<Vec<f64>>, bias: Vec<f64>, h: usize, w: usize) -> ClassifierModel {
        let nc = weights.len();
        let din = h * w;
        let mut model = ClassifierModel::init(Arch::Linear, (h, w, 1), nc, 0);
        let flat: Vec<f64> = weights.into_iter().flatten().collect();
        *model.params.get_mut("out.w").unwrap() = NdArray::from_vec(vec![nc, din], flat).unwrap();
        *model.params.get_mut("out.b").unwrap() = NdArray::from_vec(vec![nc], bias).unwrap();
        model
    }

    #[test]
    fn zero_weight_linear_model_gives_zero_logits() {
        let model = linear_model(vec![vec![0.0; 4]; 3], vec![0.0; 3], 2, 2);
        let x = tiny_image(&[0.1, 0.9, 0.4, 0.3], 2, 2);
        assert_eq!(model.logits(&x).unwrap(), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn bias_only_final_layer_returns_bias() {
        let model = linear_model(vec![vec![0.0; 4]; 3], vec![1.5, -2.0, 0.25], 2, 2);
        let x = tiny_image(&[0.7, 0.2, 0.0, 1.0], 2, 2);
        assert_eq!(model.logits(&x).unwrap(), vec![1.5, -2.0, 0.25]);
    }

    #[test]
    fn adv_loss_zero_when_already_misclassified() {
        // Class 1 dominates everywhere; true label 0 => margin negative.
        let model = linear_model(
            vec![vec![0.0; 4], vec![1.0, 1.0, 1.0, 1.0]],
            vec![0.0, 1.0],
            2,
            2,
        );
        let x = tiny_image(&[0.5; 4], 2, 2);
        let eta = NdArray::zeros(&[1, 2, 2]);
        let spec = AdvLossSpec::new(AttackMode::Untargeted, 0.1).unwrap();
        assert_eq!(adv_loss(&model, &x, 0, &eta, &spec).unwrap(), 0.0);
    }

    #[test]
    fn out_of_ball_returns_sentinel() {
        let model = linear_model(vec![vec![0.0; 4]; 2], vec![0.0; 2], 2, 2);
        let x = tiny_image(&[0.5; 4], 2, 2);
        let spec = AdvLossSpec::new(AttackMode::Untargeted, 0.2).unwrap();
        let eta = NdArray::filled(&[1, 2, 2], 1.5 * 0.2);
        let loss = adv_loss(&model, &x, 0, &eta, &spec).unwrap();
        assert!(loss.is_infinite() && loss > 0.0);
    }

    #[test]
    fn two_class_linear_loss_matches_hand_computed_margin() {
        // F(v, y) = w_y . v; loss = max(0, (w_y - w_j)^T (x + eta)).
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for trial in 0..20 {
            let w0: Vec<f64> = (0..9).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let w1: Vec<f64> = (0..9).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let model = linear_model(vec![w0.clone(), w1.clone()], vec![0.0; 2], 3, 3);
            let xv: Vec<f64> = (0..9).map(|_| rng.random::<f64>()).collect();
            let ev: Vec<f64> = (0..9).map(|_| (rng.random::<f64>() - 0.5) * 0.1).collect();
            let x = tiny_image(&xv, 3, 3);
            let eta = tiny_image(&ev, 3, 3);
            let spec = AdvLossSpec::new(AttackMode::Untargeted, 0.06).unwrap();
            let got = adv_loss(&model, &x, 0, &eta, &spec).unwrap();
            let want = if ev.iter().fold(0.0f64, |m, v| m.max(v.abs())) > 0.06 {
                f64::INFINITY
            } else {
                let dot: f64 = w0
                    .iter()
                    .zip(&w1)
                    .zip(xv.iter().zip(&ev))
                    .map(|((a, b), (x, e))| (a - b) * (x + e))
                    .sum();
                dot.max(0.0)
            };
            if want.is_infinite() {
                assert!(got.is_infinite(), "trial {trial}");
            } else {
                assert!((got - want).abs() < 1e-10, "trial {trial}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn loss_zero_iff_argmax_flipped_and_in_ball() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = ClassifierModel::init(Arch::Mlp2, (4, 4, 1), 3, 7);
        let spec = AdvLossSpec::new(AttackMode::Untargeted, 0.3).unwrap();
        for _ in 0..1000 {
            let x = NdArray::from_vec(
                vec![1, 4, 4],
                (0..16).map(|_| rng.random::<f64>()).collect(),
            )
            .unwrap();
            let eta = NdArray::from_vec(
                vec![1, 4, 4],
                (0..16).map(|_| (rng.random::<f64>() - 0.5) * 0.8).collect(),
            )
            .unwrap();
            let y = rng.random_range(0..3);
            let loss = adv_loss(&model, &x, y, &eta, &spec).unwrap();
            let in_ball = linf_norm(eta.data()) <= 0.3;
            let perturbed = NdArray::from_vec(
                vec![1, 4, 4],
                x.data().iter().zip(eta.data()).map(|(a, b)| a + b).collect(),
            )
            .unwrap();
            let flipped = model.predict(&perturbed).unwrap() != y;
            assert_eq!(loss == 0.0, in_ball && flipped);
            assert!(loss >= 0.0);
        }
    }

    #[test]
    fn ensemble_loss_is_mean_and_sentinel_dominates() {
        let m1 = linear_model(vec![vec![1.0; 4], vec![0.0; 4]], vec![0.0; 2], 2, 2);
        let m2 = linear_model(vec![vec![3.0; 4], vec![0.0; 4]], vec![0.0; 2], 2, 2);
        let x = tiny_image(&[0.25; 4], 2, 2);
        let eta = NdArray::zeros(&[1, 2, 2]);
        let spec = AdvLossSpec::new(AttackMode::Untargeted, 0.1).unwrap();
        let l1 = adv_loss(&m1, &x, 0, &eta, &spec).unwrap();
        let l2 = adv_loss(&m2, &x, 0, &eta, &spec).unwrap();
        let le = ensemble_adv_loss(&[&m1, &m2], &x, 0, &eta, &spec).unwrap();
        assert!((le - 0.5 * (l1 + l2)).abs() < 1e-12);

        let eta_out = NdArray::filled(&[1, 2, 2], 0.2);
        assert!(ensemble_adv_loss(&[&m1, &m2], &x, 0, &eta_out, &spec)
            .unwrap()
            .is_infinite());
    }

    #[test]
    fn oracle_counter_tracks_every_query() {
        let model = linear_model(vec![vec![0.0; 4]; 2], vec![0.0; 2], 2, 2);
        let mut oracle = QueryOracle::new(&model);
        let x = tiny_image(&[0.5; 4], 2, 2);
        let eta = NdArray::zeros(&[1, 2, 2]);
        let spec = AdvLossSpec::new(AttackMode::Untargeted, 0.1).unwrap();
        assert_eq!(oracle.count(), 0);
        for i in 1..=17 {
            oracle.query(&x, 0, &eta, &spec).unwrap();
            assert_eq!(oracle.count(), i);
        }
    }

    #[test]
    fn targeted_margin_uses_target_class() {
        let logits = vec![2.0, -1.0, 5.0];
        assert_eq!(margin(&logits, 0, AttackMode::Untargeted), 2.0 - 5.0);
        assert_eq!(margin(&logits, 0, AttackMode::Targeted(1)), 5.0 - (-1.0));
        assert_eq!(margin(&logits, 0, AttackMode::Targeted(2)), 2.0 - 5.0);
    }

    #[test]
    fn build_hinge_matches_numeric_margin() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let logits: Vec<f64> = (0..5).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let y = rng.random_range(0..5);
            for mode in [AttackMode::Untargeted, AttackMode::Targeted((y + 1) % 5)] {
                let mut tape = Tape::new();
                let l = tape.leaf(NdArray::from_vec(vec![5], logits.clone()).unwrap());
                let h = build_hinge(&mut tape, l, y, mode).unwrap();
                let want = margin(&logits, y, mode).max(0.0);
                assert!((tape.value(h).item() - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn overfits_a_single_batch() {
        let data = gen_synthetic_dataset(&DatasetConfig {
            num_classes: 4,
            n_per_class: 4,
            height: 8,
            width: 8,
            channels: 1,
            seed: 5,
        })
        .unwrap();
        let cfg = TrainConfig {
            epochs: 500,
            lr: 0.2,
            batch: 16,
            seed: 0,
        };
        let (_, report) = train_classifier(&data, None, Arch::Mlp2, &cfg).unwrap();
        assert!(report.final_loss < 1e-3, "loss {}", report.final_loss);
    }

    #[test]
    fn linearly_separable_reaches_full_accuracy() {
        // Two constant-intensity classes; mlp-2 should separate them exactly.
        let mut images = Vec::new();
        let mut labels = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for i in 0..40 {
            let dark = i % 2 == 0;
            let base = if dark { 0.15 } else { 0.85 };
            let vals: Vec<f64> = (0..64)
                .map(|_| (base + 0.05 * (rng.random::<f64>() - 0.5)).clamp(0.0, 1.0))
                .collect();
            images.push(NdArray::from_vec(vec![1, 8, 8], vals).unwrap());
            labels.push(usize::from(!dark));
        }
        let data = Dataset::new(images, labels, 2, 8, 8, 1, "train").unwrap();
        let cfg = TrainConfig {
            epochs: 30,
            lr: 0.1,
            batch: 8,
            seed: 0,
        };
        let (_, report) = train_classifier(&data, Some(&data), Arch::Mlp2, &cfg).unwrap();
        assert_eq!(report.test_accuracy, Some(1.0));
    }

    #[test]
    fn training_is_seed_deterministic() {
        let data = gen_synthetic_dataset(&DatasetConfig {
            num_classes: 3,
            n_per_class: 10,
            height: 8,
            width: 8,
            channels: 1,
            seed: 9,
        })
        .unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            lr: 0.05,
            batch: 8,
            seed: 4,
        };
        let (m1, _) = train_classifier(&data, None, Arch::CnnSmall, &cfg).unwrap();
        let (m2, _) = train_classifier(&data, None, Arch::CnnSmall, &cfg).unwrap();
        assert_eq!(m1.params.checksum(), m2.params.checksum());
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let data = Dataset::new(vec![], vec![], 2, 8, 8, 1, "train");
        assert!(data.is_err());
    }

    #[test]
    fn architectures_are_structurally_distinct() {
        let archs = [Arch::Mlp2, Arch::CnnSmall, Arch::CnnWide, Arch::CnnDeep];
        let sigs: Vec<Vec<(String, Vec<usize>)>> = archs
            .iter()
            .map(|&a| {
                ClassifierModel::init(a, (16, 16, 1), 8, 0)
                    .params
                    .iter()
                    .map(|(n, v)| (n.to_string(), v.shape().to_vec()))
                    .collect()
            })
            .collect();
        for i in 0..sigs.len() {
            for j in i + 1..sigs.len() {
                assert_ne!(sigs[i], sigs[j], "arch {i} vs {j}");
            }
        }
    }
}
