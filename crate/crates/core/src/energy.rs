//! Flow pretraining against the energy-based adversarial distribution.
//!
//! The unnormalized energy density is exp(-lambda * L_adv) on the epsilon
//! ball and zero outside. Training minimizes the forward KL divergence from
//! that density to the flow with a self-normalized importance-weighted
//! Monte-Carlo gradient: draws come from the flow itself, carry weights
//! exp(-lambda * L_adv) / p_flow(eta) (zero outside the ball, where the
//! surrogates are never queried), and each draw contributes the parameter
//! gradient of
//!
//!   w * ( logdet_forward(theta; z0) + log p_frozen(g_theta(z0)) )
//!
//! which equals -w * d/dtheta log p_theta(eta)|eta fixed, the exact
//! importance-sampled gradient of the forward KL: the first term is the
//! direct log-det dependence, the second routes through eta into a
//! frozen-parameter density so only the eta path contributes.

use crate::classifier::{build_hinge, ensemble_adv_loss, AdvLossSpec, ClassifierModel};
use crate::data::Dataset;
use crate::dct::DctSubspace;
use crate::error::{Error, Result};
use crate::flow::CondFlow;
use crate::tensor::{NdArray, NodeId, Tape};
use crate::util::{l2_norm, linf_norm};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// How reduced-space perturbations map into the classifier input space.
pub enum SpaceMap {
    /// Reduced space is the full space (toy constructions).
    Identity,
    /// DCT low-frequency subspace: expand with zero padding, then inverse DCT.
    Dct(DctSubspace),
}

impl SpaceMap {
    /// Numeric expansion of a reduced tensor to the full input shape.
    pub fn expand(&self, reduced: &NdArray, full_shape: &[usize]) -> Result<NdArray> {
        match self {
            SpaceMap::Identity => reduced.reshaped(full_shape),
            SpaceMap::Dct(sub) => sub.from_reduced(&reduced.reshaped(&sub.reduced_shape())?),
        }
    }

    /// Numeric reduction of a full-space image (the flow's condition).
    pub fn reduce(&self, full: &NdArray) -> Result<NdArray> {
        match self {
            SpaceMap::Identity => Ok(full.clone()),
            SpaceMap::Dct(sub) => sub.to_reduced(full),
        }
    }

    /// Tape twin of [`Self::expand`] from a flat reduced node.
    pub fn build_expand(
        &self,
        tape: &mut Tape,
        reduced_flat: NodeId,
        full_shape: &[usize],
    ) -> Result<NodeId> {
        match self {
            SpaceMap::Identity => tape.reshape(reduced_flat, full_shape),
            SpaceMap::Dct(sub) => {
                let (c, d, dr) = (sub.channels, sub.d, sub.d_r);
                let a = sub.expansion_matrix(); // [d, dr]
                let mut at = NdArray::zeros(&[dr, d]);
                for i in 0..d {
                    for j in 0..dr {
                        at.data_mut()[j * d + i] = a.data()[i * dr + j];
                    }
                }
                let a_node = tape.leaf(a);
                let at_node = tape.leaf(at);
                let mut planes = Vec::with_capacity(c);
                for ch in 0..c {
                    let v = tape.slice_axis0(reduced_flat, ch * dr * dr, dr * dr)?;
                    let vm = tape.reshape(v, &[dr, dr])?;
                    let av = tape.matmul(a_node, vm)?;
                    let avat = tape.matmul(av, at_node)?;
                    planes.push(tape.reshape(avat, &[1, d, d])?);
                }
                let full = tape.concat_axis0(&planes)?;
                tape.reshape(full, full_shape)
            }
        }
    }
}

/// Unnormalized energy model over perturbations around a benign example.
pub struct EnergyModel<'a> {
    pub surrogates: Vec<&'a ClassifierModel>,
    pub lambda: f64,
    pub spec: AdvLossSpec,
}

impl<'a> EnergyModel<'a> {
    pub fn new(surrogates: Vec<&'a ClassifierModel>, lambda: f64, spec: AdvLossSpec) -> Result<Self> {
        if surrogates.is_empty() {
            return Err(Error::invalid("energy model needs at least one surrogate"));
        }
        if lambda <= 0.0 {
            return Err(Error::invalid("lambda must be positive"));
        }
        Ok(EnergyModel {
            surrogates,
            lambda,
            spec,
        })
    }

    /// `log P_E(eta|x) ~= -lambda * L_adv(eta, x)`, with the negative-infinity
    /// sentinel outside the ball. Surrogates are never evaluated out of ball.
    pub fn energy_log(&self, x: &NdArray, y: usize, eta_full: &NdArray) -> Result<f64> {
        if linf_norm(eta_full.data()) > self.spec.epsilon {
            return Ok(f64::NEG_INFINITY);
        }
        let loss = ensemble_adv_loss(&self.surrogates, x, y, eta_full, &self.spec)?;
        Ok(-self.lambda * loss)
    }
}

/// One Monte-Carlo KL gradient estimate at a single condition.
pub struct KlGradient {
    /// d KL / d theta over the flow's canonical flat parameter layout.
    pub grad: Vec<f64>,
    /// True when every draw fell outside the ball (gradient is zero).
    pub degenerate: bool,
    pub in_ball: usize,
    /// Importance-weighted mean adversarial loss of the in-ball draws.
    pub weighted_adv_loss: f64,
}

/// Self-normalized Monte-Carlo estimate of the forward-KL gradient.
pub fn kl_gradient(
    flow: &CondFlow,
    em: &EnergyModel,
    space: &SpaceMap,
    x_full: &NdArray,
    x_cond: &NdArray,
    y: usize,
    k_draws: usize,
    rng: &mut ChaCha8Rng,
) -> Result<KlGradient> {
    if k_draws < 2 {
        return Err(Error::invalid("K must be at least 2"));
    }
    let d = flow.layout.latent_len();
    let n_params = flow.params.total_len();

    // Pass 1: draw latents, push them forward numerically, score the in-ball
    // ones. Out-of-ball draws have -inf energy and weight zero; the
    // surrogates are only ever queried inside the ball.
    struct Draw {
        z0: NdArray,
        log_weight: f64,
        adv_loss: f64,
    }
    let mut draws: Vec<Option<Draw>> = Vec::with_capacity(k_draws);
    for _ in 0..k_draws {
        let z0 = NdArray::from_vec(
            flow.layout.latent_shape(),
            (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
        )?;
        let out = flow.forward(x_cond, &z0)?;
        let eta_full = space.expand(&out.eta, x_full.shape())?;
        if linf_norm(eta_full.data()) > em.spec.epsilon {
            draws.push(None);
            continue;
        }
        let adv = ensemble_adv_loss(&em.surrogates, x_full, y, &eta_full, &em.spec)?;
        debug_assert!(adv.is_finite());
        let log_p = std_normal_logpdf(z0.data()) - out.logdet;
        draws.push(Some(Draw {
            z0,
            log_weight: -em.lambda * adv - log_p,
            adv_loss: adv,
        }));
    }

    let in_ball = draws.iter().filter(|d| d.is_some()).count();
    if in_ball == 0 {
        return Ok(KlGradient {
            grad: vec![0.0; n_params],
            degenerate: true,
            in_ball: 0,
            weighted_adv_loss: 0.0,
        });
    }

    // Self-normalize the weights across the K draws.
    let max_lw = draws
        .iter()
        .flatten()
        .map(|d| d.log_weight)
        .fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = draws
        .iter()
        .flatten()
        .map(|d| (d.log_weight - max_lw).exp())
        .sum();

    // Pass 2: per in-ball draw, differentiate
    //   s = -lambda * L_adv(x + expand(g(z0))) - log p_frozen(g(z0))
    // and average with the normalized weights. The returned gradient carries
    // the estimator's leading minus sign.
    let mut acc = vec![0.0; n_params];
    let mut weighted_loss = 0.0;
    for draw in draws.iter().flatten() {
        let w = (draw.log_weight - max_lw).exp() / total;
        weighted_loss += w * draw.adv_loss;
        if w == 0.0 {
            continue;
        }
        let mut tape = Tape::new();
        let bound = flow.params.bind(&mut tape);
        let eta_flat = flow.build_forward(&mut tape, &bound, x_cond, &draw.z0)?;
        let eta_full = space.build_expand(&mut tape, eta_flat, x_full.shape())?;
        let x_node = tape.leaf(x_full.clone());
        let perturbed = tape.add(x_node, eta_full)?;

        let mut hinges = Vec::with_capacity(em.surrogates.len());
        for model in &em.surrogates {
            let frozen = model.params.bind(&mut tape);
            let logits = model.build_logits(&mut tape, &frozen, perturbed)?;
            hinges.push(build_hinge(&mut tape, logits, y, em.spec.mode)?);
        }
        let mut l_adv = hinges[0];
        for &h in &hinges[1..] {
            l_adv = tape.add(l_adv, h)?;
        }
        let l_adv = tape.scale(l_adv, 1.0 / em.surrogates.len() as f64);

        let log_p = flow.build_frozen_log_prob(&mut tape, x_cond, eta_flat)?;
        let neg_energy = tape.scale(l_adv, -em.lambda);
        let s = tape.sub(neg_energy, log_p)?;

        let grads = tape.backward(s)?;
        let flat = bound.flat_gradient(&grads);
        for (a, g) in acc.iter_mut().zip(&flat) {
            *a += w * g;
        }
    }
    for a in acc.iter_mut() {
        *a = -*a;
    }
    Ok(KlGradient {
        grad: acc,
        degenerate: false,
        in_ball,
        weighted_adv_loss: weighted_loss,
    })
}

/// Training hyper-parameters for flow pretraining.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KlTrainConfig {
    /// Latent draws per condition per step.
    pub k_draws: usize,
    pub steps: usize,
    pub lr: f64,
    /// Conditions sampled per step; gradients are averaged across them.
    pub batch_images: usize,
    pub grad_norm_cap: f64,
    pub seed: u64,
}

impl Default for KlTrainConfig {
    fn default() -> Self {
        KlTrainConfig {
            k_draws: 16,
            steps: 400,
            lr: 0.05,
            batch_images: 4,
            grad_norm_cap: 1.0,
            seed: 0,
        }
    }
}

/// Newline-delimited training log record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub step: usize,
    pub loss_proxy: Option<f64>,
    pub grad_norm: f64,
    pub degenerate_batches: usize,
}

pub struct PretrainOutcome {
    pub flow: CondFlow,
    pub log: Vec<TrainLogRecord>,
    /// Step at which parameters left the finite range, if training aborted;
    /// the returned flow is the last finite checkpoint.
    pub diverged_at: Option<usize>,
}

/// When every draw of every batch image is out of ball the estimator is
/// uninformative; contract the base Gaussian toward the ball instead.
const DEGENERATE_SIGMA_SHIFT: f64 = 0.1;

/// Pretrain `flow` (typically identity-initialized) against the surrogate
/// energy. Deterministic given `cfg.seed`; zero steps returns the flow
/// untouched.
pub fn pretrain_flow(
    mut flow: CondFlow,
    surrogates: &[&ClassifierModel],
    dataset: &Dataset,
    space: &SpaceMap,
    lambda: f64,
    spec: AdvLossSpec,
    cfg: &KlTrainConfig,
) -> Result<PretrainOutcome> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let em = EnergyModel::new(surrogates.to_vec(), lambda, spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9E37_79B9).wrapping_add(17));
    let mut log = Vec::with_capacity(cfg.steps);
    let mut degenerate_batches = 0usize;
    let mut snapshot = flow.params.clone();

    for step in 0..cfg.steps {
        let mut grad = vec![0.0; flow.params.total_len()];
        let mut contributing = 0usize;
        let mut proxy = 0.0;
        for _ in 0..cfg.batch_images.max(1) {
            let idx = rng.random_range(0..dataset.len());
            let x_full = dataset.image(idx);
            let x_cond = space.reduce(x_full)?;
            let kg = kl_gradient(
                &flow,
                &em,
                space,
                x_full,
                &x_cond,
                dataset.labels[idx],
                cfg.k_draws,
                &mut rng,
            )?;
            if kg.degenerate {
                continue;
            }
            contributing += 1;
            proxy += kg.weighted_adv_loss;
            for (a, g) in grad.iter_mut().zip(&kg.grad) {
                *a += g;
            }
        }

        if contributing == 0 {
            degenerate_batches += 1;
            let ls = flow.params.get_mut("log_sigma").expect("log_sigma");
            for v in ls.data_mut() {
                *v -= DEGENERATE_SIGMA_SHIFT;
            }
            log.push(TrainLogRecord {
                step,
                loss_proxy: None,
                grad_norm: 0.0,
                degenerate_batches,
            });
            continue;
        }

        for g in grad.iter_mut() {
            *g /= contributing as f64;
        }
        let mut norm = l2_norm(&grad);
        if norm > cfg.grad_norm_cap {
            let scale = cfg.grad_norm_cap / norm;
            for g in grad.iter_mut() {
                *g *= scale;
            }
            norm = cfg.grad_norm_cap;
        }
        flow.params.step(&grad, cfg.lr)?;
        if !flow.params.all_finite() {
            flow.params = snapshot;
            log.push(TrainLogRecord {
                step,
                loss_proxy: None,
                grad_norm: norm,
                degenerate_batches,
            });
            return Ok(PretrainOutcome {
                flow,
                log,
                diverged_at: Some(step),
            });
        }
        snapshot = flow.params.clone();
        log.push(TrainLogRecord {
            step,
            loss_proxy: Some(proxy / contributing as f64),
            grad_norm: norm,
            degenerate_batches,
        });
    }

    Ok(PretrainOutcome {
        flow,
        log,
        diverged_at: None,
    })
}

fn std_normal_logpdf(z: &[f64]) -> f64 {
    let ssq: f64 = z.iter().map(|v| v * v).sum();
    -0.5 * (z.len() as f64) * (2.0 * std::f64::consts::PI).ln() - 0.5 * ssq
}


#[cfg(test)]
mod tests {
    use super::toy::*;
    use super::*;
    use crate::classifier::AttackMode;
    use crate::util::cosine;

    #[test]
    fn energy_log_zero_for_successful_perturbation() {
        // Class 1 wins everywhere around x, so with true label 0 the hinge is 0.
        let m = toy_surrogate([0.0, 0.0], [1.0, 1.0]);
        let em = EnergyModel::new(vec![&m], 10.0, toy_spec(0.5)).unwrap();
        let eta = NdArray::from_vec(vec![1, 1, 2], vec![0.3, 0.3]).unwrap();
        assert_eq!(em.energy_log(&toy_x(), 0, &eta).unwrap(), 0.0);
    }

    #[test]
    fn energy_log_out_of_ball_is_neg_infinity_without_model_eval() {
        // NaN weights would poison any logits evaluation; the sentinel path
        // must return before touching the model.
        let mut m = toy_surrogate([1.0, 0.0], [0.0, 1.0]);
        *m.params.get_mut("out.w").unwrap() = NdArray::filled(&[2, 2], f64::NAN);
        let em = EnergyModel::new(vec![&m], 5.0, toy_spec(0.2)).unwrap();
        let eta = NdArray::from_vec(vec![1, 1, 2], vec![0.5, 0.0]).unwrap();
        let e = em.energy_log(&toy_x(), 0, &eta).unwrap();
        assert!(e.is_infinite() && e < 0.0);
    }

    #[test]
    fn energy_log_matches_closed_form_linear_margin() {
        // Margin = (w0 - w1) . (x + eta); lambda = 10, margin 0.3 -> -3.0.
        let m = toy_surrogate([1.0, 0.0], [0.0, 0.0]);
        let x = NdArray::from_vec(vec![1, 1, 2], vec![0.25, 0.0]).unwrap();
        let eta = NdArray::from_vec(vec![1, 1, 2], vec![0.05, 0.0]).unwrap();
        let em = EnergyModel::new(vec![&m], 10.0, toy_spec(0.5)).unwrap();
        let e = em.energy_log(&x, 0, &eta).unwrap();
        assert!((e - (-3.0)).abs() < 1e-10, "energy {e}");
    }

    #[test]
    fn degenerate_batch_flag_when_everything_is_out_of_ball() {
        let m = toy_surrogate([1.0, 0.0], [0.0, 1.0]);
        // Tiny ball: standard-normal draws essentially never land inside.
        let em = EnergyModel::new(vec![&m], 5.0, toy_spec(1e-6)).unwrap();
        let flow = toy_flow(0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let kg = kl_gradient(
            &flow,
            &em,
            &SpaceMap::Identity,
            &toy_x(),
            &toy_cond(),
            0,
            32,
            &mut rng,
        )
        .unwrap();
        assert!(kg.degenerate);
        assert!(kg.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn estimator_direction_matches_uniform_ball_kl_at_lambda_near_zero() {
        // With near-zero lambda the target is uniform on the ball, whose KL
        // gradient in mu points from the ball centre toward mu. Shift mu and
        // check the sign of the estimate.
        let m = toy_surrogate([0.0, 0.0], [0.0, 0.0]);
        let em = EnergyModel::new(vec![&m], 1e-12, toy_spec(0.8)).unwrap();
        let mut flow = toy_flow(0);
        let mu_idx = {
            let mut off = 0;
            let mut found = None;
            for (name, v) in flow.params.iter() {
                if name == "mu" {
                    found = Some(off);
                }
                off += v.len();
            }
            found.unwrap()
        };
        *flow.params.get_mut("mu").unwrap() =
            NdArray::from_vec(vec![2], vec![0.3, -0.25]).unwrap();
        *flow.params.get_mut("log_sigma").unwrap() = NdArray::filled(&[2], (0.4f64).ln());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let kg = kl_gradient(
            &flow,
            &em,
            &SpaceMap::Identity,
            &toy_x(),
            &toy_cond(),
            0,
            8192,
            &mut rng,
        )
        .unwrap();
        assert!(!kg.degenerate);
        assert!(kg.grad[mu_idx] > 0.0, "d/d mu_0 = {}", kg.grad[mu_idx]);
        assert!(kg.grad[mu_idx + 1] < 0.0, "d/d mu_1 = {}", kg.grad[mu_idx + 1]);
    }

    #[test]
    fn estimator_cosine_against_grid_kl_gradient() {
        let m = toy_surrogate([1.2, -0.4], [-0.3, 0.8]);
        let em = EnergyModel::new(vec![&m], 6.0, toy_spec(0.6)).unwrap();
        let mut flow = toy_flow(0);
        flow.randomize(0.15, 11);
        *flow.params.get_mut("log_sigma").unwrap() = NdArray::filled(&[2], (0.35f64).ln());
        let x = toy_x();

        let fd = grid_kl_fd_gradient(&flow, &em, &x, 0, 160, 1e-4);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let kg = kl_gradient(
            &flow,
            &em,
            &SpaceMap::Identity,
            &x,
            &toy_cond(),
            0,
            4096,
            &mut rng,
        )
        .unwrap();
        let cos = cosine(&kg.grad, &fd);
        assert!(cos > 0.9, "cosine {cos}");
    }

    #[test]
    fn pretrain_zero_steps_returns_identity_flow_unchanged() {
        let m = toy_surrogate([1.0, 0.0], [0.0, 1.0]);
        let data = toy_dataset();
        let flow = toy_flow(0);
        let before = flow.params.checksum();
        let out = pretrain_flow(
            flow,
            &[&m],
            &data,
            &SpaceMap::Identity,
            5.0,
            toy_spec(0.5),
            &KlTrainConfig {
                steps: 0,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(out.flow.params.checksum(), before);
        assert!(out.log.is_empty());
        assert!(out.diverged_at.is_none());
    }

    #[test]
    fn pretrain_halves_grid_kl_on_toy() {
        let m = toy_surrogate([1.1, -0.6], [-0.5, 0.9]);
        let data = toy_dataset();
        let spec = toy_spec(0.6);
        let lambda = 6.0;
        let flow0 = toy_flow(0);
        let em = EnergyModel::new(vec![&m], lambda, spec).unwrap();
        let kl_before = grid_kl(&flow0, &em, data.image(0), data.labels[0], 120);

        let cfg = KlTrainConfig {
            k_draws: 64,
            steps: 2000,
            lr: 0.02,
            batch_images: 1,
            grad_norm_cap: 1.0,
            seed: 0,
        };
        let out = pretrain_flow(flow0, &[&m], &data, &SpaceMap::Identity, lambda, spec, &cfg)
            .unwrap();
        assert!(out.diverged_at.is_none());
        let kl_after = grid_kl(&out.flow, &em, data.image(0), data.labels[0], 120);
        assert!(
            kl_after < 0.5 * kl_before,
            "grid KL {kl_before} -> {kl_after}"
        );
    }

    #[test]
    fn weights_are_normalized_and_bounded() {
        // Reconstruct the weight computation path: probe through the public
        // estimator by checking its internal invariant indirectly is weak, so
        // recompute weights the way the estimator defines them.
        let m = toy_surrogate([0.9, 0.2], [-0.2, 0.5]);
        let em = EnergyModel::new(vec![&m], 4.0, toy_spec(0.7)).unwrap();
        let flow = toy_flow(0);
        let x = toy_x();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut lws = Vec::new();
        for _ in 0..256 {
            let z0 = NdArray::from_vec(
                vec![2, 1, 1],
                vec![rng.sample(StandardNormal), rng.sample(StandardNormal)],
            )
            .unwrap();
            let out = flow.forward(&toy_cond(), &z0).unwrap();
            let eta_full = out.eta.reshaped(&[1, 1, 2]).unwrap();
            if linf_norm(eta_full.data()) > 0.7 {
                continue;
            }
            let adv = ensemble_adv_loss(&[&m], &x, 0, &eta_full, &em.spec).unwrap();
            let lp = flow.log_prob(&toy_cond(), &out.eta).unwrap();
            lws.push(-4.0 * adv - lp);
        }
        let mx = lws.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = lws.iter().map(|l| (l - mx).exp()).sum();
        let mut sum = 0.0;
        for l in &lws {
            let w = (l - mx).exp() / total;
            assert!((0.0..=1.0).contains(&w));
            sum += w;
        }
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tape_ensemble_loss_matches_numeric_ensemble_loss() {
        let m1 = toy_surrogate([1.0, -0.2], [0.1, 0.7]);
        let m2 = toy_surrogate([-0.4, 0.9], [0.6, -0.1]);
        let x = toy_x();
        let spec = toy_spec(0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..30 {
            let ev = vec![
                (rng.random::<f64>() - 0.5) * 0.8,
                (rng.random::<f64>() - 0.5) * 0.8,
            ];
            let eta = NdArray::from_vec(vec![1, 1, 2], ev).unwrap();
            if linf_norm(eta.data()) > 0.5 {
                continue;
            }
            let want = ensemble_adv_loss(&[&m1, &m2], &x, 0, &eta, &spec).unwrap();

            let mut tape = Tape::new();
            let x_node = tape.leaf(x.clone());
            let e_node = tape.leaf(eta.clone());
            let perturbed = tape.add(x_node, e_node).unwrap();
            let mut hinges = Vec::new();
            for m in [&m1, &m2] {
                let b = m.params.bind(&mut tape);
                let logits = m.build_logits(&mut tape, &b, perturbed).unwrap();
                hinges.push(build_hinge(&mut tape, logits, 0, AttackMode::Untargeted).unwrap());
            }
            let s = tape.add(hinges[0], hinges[1]).unwrap();
            let mean = tape.scale(s, 0.5);
            assert!((tape.value(mean).item() - want).abs() < 1e-12);
        }
    }

    fn toy_dataset() -> Dataset {
        Dataset::new(
            vec![toy_x()],
            vec![0],
            2,
            1,
            2,
            1,
            "train",
        )
        .unwrap()
    }
}
