//! The query-and-transfer attack loop.
//!
//! Partial transfer keeps the pretrained mapping blocks frozen and runs
//! CMA-ES over the flow's latent z-space, initialized at the transferred base
//! mean with identity covariance. Every candidate is pushed through the
//! blocks, upsampled by inverse DCT, clamped into the feasible set and only
//! then spent as one oracle query, in ask order, stopping at the first zero
//! loss. Truncated generations are never fed back to the optimizer.

use crate::classifier::{AdvLossSpec, AttackMode, QueryOracle};
use crate::cmaes::{cma_init, CmaConfig};
use crate::dct::DctSubspace;
use crate::error::{Error, Result};
use crate::flow::CondFlow;
use crate::tensor::NdArray;
use crate::util::linf_norm;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// What is carried over from surrogate pretraining.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransferMode {
    /// Mapping blocks transferred; base Gaussian re-learned via CMA-ES.
    Partial,
    /// Whole flow transferred; the sampler stays at N(mu_s, sigma_s^2) and
    /// never adapts (ablation).
    Full,
    /// No transfer: identity flow, CMA-ES from the zero mean (pure query).
    None,
}

impl TransferMode {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "partial" => TransferMode::Partial,
            "full" => TransferMode::Full,
            "none" => TransferMode::None,
            other => return Err(Error::invalid(format!("unknown transfer mode `{other}`"))),
        })
    }

    pub fn describe(&self) -> &'static str {
        match self {
            TransferMode::Partial => "partial",
            TransferMode::Full => "full",
            TransferMode::None => "none",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackConfig {
    /// Query budget T.
    pub budget: usize,
    pub epsilon: f64,
    pub mode: AttackMode,
    /// Population size k per generation.
    pub pop: usize,
    /// DCT keep ratio r.
    pub ratio: f64,
    pub transfer: TransferMode,
    pub seed: u64,
    /// Initial CMA-ES step size.
    pub step0: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            budget: 10_000,
            epsilon: 0.03125,
            mode: AttackMode::Untargeted,
            pop: 20,
            ratio: 0.5,
            transfer: TransferMode::Partial,
            seed: 0,
            step0: 0.3,
        }
    }
}

/// Outcome of a single attack.
#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub success: bool,
    pub queries_used: u64,
    /// Full-space perturbation achieving zero loss, when successful.
    pub perturbation: Option<NdArray>,
    /// Loss value of every query, in order.
    pub loss_trace: Vec<f64>,
    pub generations: usize,
}

/// Clamp a full-space perturbation into the feasible set: first into the
/// epsilon ball, then so that x + eta stays a valid image, re-deriving eta.
/// The trailing clamp removes the one-ulp ball violations the re-derivation
/// can introduce; it cannot push x + eta back outside [0,1].
pub fn project_ball(x: &NdArray, eta_full: &NdArray, epsilon: f64) -> NdArray {
    debug_assert_eq!(x.shape(), eta_full.shape());
    let data: Vec<f64> = x
        .data()
        .iter()
        .zip(eta_full.data())
        .map(|(&xv, &ev)| {
            let e = ev.clamp(-epsilon, epsilon);
            ((xv + e).clamp(0.0, 1.0) - xv).clamp(-epsilon, epsilon)
        })
        .collect();
    NdArray::from_vec(x.shape().to_vec(), data).expect("projection preserves shape")
}

/// Run one attack against `oracle` for benign image `x` with true label `y`.
///
/// `flow` must be present for partial and full transfer; its latent shape has
/// to match the DCT-reduced geometry implied by `cfg.ratio` and the image
/// dimensions, and that is validated before any query is spent.
pub fn cg_attack(
    oracle: &mut QueryOracle,
    flow: Option<&CondFlow>,
    x: &NdArray,
    y: usize,
    cfg: &AttackConfig,
) -> Result<AttackOutcome> {
    if cfg.budget == 0 {
        return Err(Error::invalid("budget must be at least 1"));
    }
    let shape = x.shape();
    if shape.len() != 3 || shape[1] != shape[2] {
        return Err(Error::invalid(format!(
            "attack expects square [C,d,d] images, got {:?}",
            shape
        )));
    }
    let (channels, d) = (shape[0], shape[1]);
    let sub = DctSubspace::new(d, cfg.ratio, channels)?;
    let dim = sub.reduced_len();
    if let AttackMode::Targeted(t) = cfg.mode {
        if t >= oracle.num_classes() {
            return Err(Error::invalid(format!("target class {t} out of range")));
        }
    }

    let flow = match cfg.transfer {
        TransferMode::Partial | TransferMode::Full => {
            let f = flow.ok_or_else(|| {
                Error::invalid("partial/full transfer requires a pretrained flow")
            })?;
            if f.layout.latent_shape() != sub.reduced_shape() {
                return Err(Error::invalid(format!(
                    "flow latent {:?} incompatible with ratio {} on {:?} images (wants {:?})",
                    f.layout.latent_shape(),
                    cfg.ratio,
                    shape,
                    sub.reduced_shape()
                )));
            }
            Some(f)
        }
        TransferMode::None => None,
    };

    let spec = AdvLossSpec::new(cfg.mode, cfg.epsilon)?;
    let x_cond = sub.to_reduced(x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let start_count = oracle.count();
    let mut trace: Vec<f64> = Vec::new();
    let mut generations = 0usize;

    // Evaluate one latent candidate; returns Some(outcome) on success.
    let evaluate = |z: &[f64],
                        oracle: &mut QueryOracle,
                        trace: &mut Vec<f64>|
     -> Result<(f64, Option<NdArray>)> {
        let z_arr = NdArray::from_vec(sub.reduced_shape(), z.to_vec())?;
        let eta_r = match flow {
            Some(f) => f.forward_from_z(&x_cond, &z_arr)?.eta,
            None => z_arr,
        };
        let eta_full = sub.from_reduced(&eta_r)?;
        let eta = project_ball(x, &eta_full, cfg.epsilon);
        debug_assert!(linf_norm(eta.data()) <= cfg.epsilon);
        let loss = oracle.query(x, y, &eta, &spec)?;
        trace.push(loss);
        if loss == 0.0 {
            Ok((loss, Some(eta)))
        } else {
            Ok((loss, None))
        }
    };

    let finish = |success: bool,
                  perturbation: Option<NdArray>,
                  oracle: &QueryOracle,
                  trace: Vec<f64>,
                  generations: usize| AttackOutcome {
        success,
        queries_used: oracle.count() - start_count,
        perturbation,
        loss_trace: trace,
        generations,
    };

    match cfg.transfer {
        TransferMode::Full => {
            // Frozen sampler: z = mu_s + sigma_s * zeta, no adaptation.
            let f = flow.expect("checked above");
            let mu = f.mu().data().to_vec();
            let sigma = f.sigma().into_data();
            loop {
                generations += 1;
                for _ in 0..cfg.pop {
                    if trace.len() >= cfg.budget {
                        return Ok(finish(false, None, oracle, trace, generations));
                    }
                    let z: Vec<f64> = (0..dim)
                        .map(|i| mu[i] + sigma[i] * rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    let (_, hit) = evaluate(&z, oracle, &mut trace)?;
                    if let Some(eta) = hit {
                        return Ok(finish(true, Some(eta), oracle, trace, generations));
                    }
                }
            }
        }
        TransferMode::Partial | TransferMode::None => {
            let mean0 = match flow {
                Some(f) => f.mu().data().to_vec(),
                None => vec![0.0; dim],
            };
            let parents = (cfg.pop / 2).max(1);
            let cma_cfg = CmaConfig::with_sizes(dim, cfg.pop, parents, cfg.step0)?;
            let mut state = cma_init(cma_cfg, &mean0)?;
            loop {
                generations += 1;
                let candidates = state.ask(&mut rng);
                let mut fitness = Vec::with_capacity(candidates.len());
                for z in &candidates {
                    if trace.len() >= cfg.budget {
                        // Budget expired mid-generation: truncate, no tell.
                        return Ok(finish(false, None, oracle, trace, generations));
                    }
                    let (loss, hit) = evaluate(z, oracle, &mut trace)?;
                    if let Some(eta) = hit {
                        return Ok(finish(true, Some(eta), oracle, trace, generations));
                    }
                    fitness.push(loss);
                }
                state.tell(&candidates, &fitness)?;
            }
        }
    }
}
