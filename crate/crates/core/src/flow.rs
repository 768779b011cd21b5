//! Conditional normalizing flow over the reduced perturbation space.
//!
//! The flow composes M blocks, each a conditional actnorm, a conditional
//! channel mixing and a conditional affine coupling, on top of a diagonal
//! base Gaussian treated as layer M+1. The normalizing direction (perturbation
//! to latent) applies actnorm, mixing, coupling per block in block order; the
//! generative direction runs the exact inverses in reverse. Conditioning
//! networks are small MLPs fed the flattened condition; identity
//! initialization zeroes their final layers so training starts at the
//! standard normal.
//!
//! Two evaluation paths exist: plain numeric (attack loop, sampling,
//! densities) and tape-built (training gradients). Twin tests pin them
//! together.

use crate::error::{Error, Result};
use crate::tensor::{BoundParams, NdArray, NodeId, ParamStore, Tape};
use crate::util::{determinant, invert};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// tanh cap on coupling log-scales.
const COUPLING_ALPHA: f64 = 2.0;
/// Mixing matrices with |det| below this are treated as singular.
const MIN_MIX_DET: f64 = 1e-12;

const LN_2PI: f64 = 1.837877066409345483560659472811;

/// Shape and wiring of a conditional flow; parameters live separately.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowLayout {
    pub channels: usize,
    pub d_r: usize,
    /// Flattened condition length.
    pub cond_len: usize,
    /// Number of blocks M.
    pub blocks: usize,
    /// Hidden widths of the conditioning MLPs (shared across net kinds).
    pub hidden: Vec<usize>,
    /// Condition values are multiplied by this before entering the nets.
    pub cond_scale: f64,
    /// When set, every conditioning net is a learnable constant (no input);
    /// used by tiny toy flows.
    pub bias_only: bool,
}

impl FlowLayout {
    pub fn new(channels: usize, d_r: usize, cond_len: usize, blocks: usize, hidden: Vec<usize>) -> Result<Self> {
        let layout = FlowLayout {
            channels,
            d_r,
            cond_len,
            blocks,
            hidden,
            cond_scale: 1.0,
            bias_only: false,
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 {
            return Err(Error::invalid("flow needs at least one block"));
        }
        if self.latent_len() < 2 {
            return Err(Error::invalid("latent must have at least 2 dimensions"));
        }
        if !self.bias_only && self.cond_len == 0 {
            return Err(Error::invalid("conditioned flow needs cond_len > 0"));
        }
        Ok(())
    }

    pub fn latent_len(&self) -> usize {
        self.channels * self.d_r * self.d_r
    }

    pub fn latent_shape(&self) -> Vec<usize> {
        vec![self.channels, self.d_r, self.d_r]
    }

    /// Coupling split point over the channel-major flat layout; for an even
    /// channel count this is exactly the first half of the channels.
    pub fn split_at(&self) -> usize {
        self.latent_len() / 2
    }

    fn spatial(&self) -> usize {
        self.d_r * self.d_r
    }

    fn net_specs(&self) -> [NetSpec; 3] {
        let d = self.latent_len();
        let h = self.split_at();
        let input = |base: usize| if self.bias_only { 0 } else { base };
        [
            NetSpec {
                input: input(self.cond_len),
                hidden: self.hidden.clone(),
                output: 2 * self.channels,
            },
            NetSpec {
                input: input(self.cond_len),
                hidden: self.hidden.clone(),
                output: self.channels * self.channels,
            },
            NetSpec {
                input: input(h + self.cond_len),
                hidden: self.hidden.clone(),
                output: 2 * (d - h),
            },
        ]
    }
}

/// MLP wiring for one conditioning net.
#[derive(Debug, Clone)]
struct NetSpec {
    input: usize,
    hidden: Vec<usize>,
    output: usize,
}

impl NetSpec {
    fn layer_dims(&self) -> Vec<(usize, usize)> {
        if self.input == 0 {
            return vec![(0, self.output)];
        }
        let mut dims = Vec::new();
        let mut prev = self.input;
        for &h in &self.hidden {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.output));
        dims
    }

    fn init_params(&self, store: &mut ParamStore, prefix: &str, rng: &mut ChaCha8Rng) {
        let dims = self.layer_dims();
        let last = dims.len() - 1;
        for (l, &(din, dout)) in dims.iter().enumerate() {
            if din == 0 {
                store.insert(format!("{prefix}.b{l}"), NdArray::zeros(&[dout]));
                continue;
            }
            let final_layer = l == last;
            let s = if final_layer { 0.0 } else { (1.0 / din as f64).sqrt() };
            let data: Vec<f64> = (0..dout * din)
                .map(|_| s * rng.sample::<f64, _>(StandardNormal))
                .collect();
            store.insert(
                format!("{prefix}.w{l}"),
                NdArray::from_vec(vec![dout, din], data).unwrap(),
            );
            store.insert(format!("{prefix}.b{l}"), NdArray::zeros(&[dout]));
        }
    }

    fn eval(&self, params: &ParamStore, prefix: &str, input: &[f64]) -> Vec<f64> {
        let dims = self.layer_dims();
        if self.input == 0 {
            return params
                .get(&format!("{prefix}.b0"))
                .expect("bias-only net param")
                .data()
                .to_vec();
        }
        debug_assert_eq!(input.len(), self.input);
        let mut v = input.to_vec();
        let last = dims.len() - 1;
        for (l, &(din, dout)) in dims.iter().enumerate() {
            let w = params.get(&format!("{prefix}.w{l}")).expect("net weight");
            let b = params.get(&format!("{prefix}.b{l}")).expect("net bias");
            let mut out = b.data().to_vec();
            for o in 0..dout {
                let row = &w.data()[o * din..(o + 1) * din];
                let mut acc = 0.0;
                for (x, wv) in v.iter().zip(row) {
                    acc += x * wv;
                }
                out[o] += acc;
            }
            if l != last {
                for x in out.iter_mut() {
                    *x = x.tanh();
                }
            }
            v = out;
        }
        v
    }

    /// Tape twin of [`Self::eval`]; weights come from `resolve`, the input is
    /// a live node (ignored for bias-only nets).
    fn build(
        &self,
        tape: &mut Tape,
        resolve: &dyn Fn(&mut Tape, &str) -> NodeId,
        prefix: &str,
        input: Option<NodeId>,
    ) -> Result<NodeId> {
        let dims = self.layer_dims();
        if self.input == 0 {
            return Ok(resolve(tape, &format!("{prefix}.b0")));
        }
        let mut v = input.expect("conditioned net needs an input node");
        let last = dims.len() - 1;
        for l in 0..dims.len() {
            let w = resolve(tape, &format!("{prefix}.w{l}"));
            let b = resolve(tape, &format!("{prefix}.b{l}"));
            let lin = tape.matvec(w, v)?;
            v = tape.add(lin, b)?;
            if l != last {
                v = tape.tanh(v);
            }
        }
        Ok(v)
    }
}

/// Conditional flow: layout plus named parameters.
///
/// Parameter names beginning with `block` are the mapping parameters phi;
/// `mu` and `log_sigma` are the base Gaussian. The partition is exact.
#[derive(Debug, Clone)]
pub struct CondFlow {
    pub layout: FlowLayout,
    pub params: ParamStore,
}

/// Result of a generative pass.
#[derive(Debug, Clone)]
pub struct FlowOut {
    pub eta: NdArray,
    pub logdet: f64,
}

impl CondFlow {
    /// Identity initialization: zero final net layers, mu = 0, sigma = 1.
    /// The flow is then exactly the identity on z0 with zero log-det.
    pub fn identity_init(layout: FlowLayout, seed: u64) -> Result<Self> {
        layout.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let specs = layout.net_specs();
        for block in 0..layout.blocks {
            specs[0].init_params(&mut params, &format!("block{block}.act"), &mut rng);
            specs[1].init_params(&mut params, &format!("block{block}.mix"), &mut rng);
            specs[2].init_params(&mut params, &format!("block{block}.coup"), &mut rng);
        }
        let d = layout.latent_len();
        params.insert("mu", NdArray::zeros(&[d]));
        params.insert("log_sigma", NdArray::zeros(&[d]));
        Ok(CondFlow { layout, params })
    }

    /// Perturb every parameter by N(0, scale^2); test/toy helper for
    /// non-degenerate flows.
    pub fn randomize(&mut self, scale: f64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut flat = self.params.flatten();
        for v in flat.iter_mut() {
            *v += scale * rng.sample::<f64, _>(StandardNormal);
        }
        self.params.assign_flat(&flat).expect("same layout");
    }

    pub fn is_phi(name: &str) -> bool {
        name.starts_with("block")
    }

    /// Checksum of the mapping parameters phi only.
    pub fn phi_checksum(&self) -> u64 {
        self.params.checksum_filtered(Self::is_phi)
    }

    pub fn mu(&self) -> &NdArray {
        self.params.get("mu").expect("mu")
    }

    pub fn sigma(&self) -> NdArray {
        self.params.get("log_sigma").expect("log_sigma").map(f64::exp)
    }

    fn cond_input(&self, x_cond: &NdArray) -> Result<Vec<f64>> {
        if self.layout.bias_only {
            return Ok(Vec::new());
        }
        if x_cond.len() != self.layout.cond_len {
            return Err(Error::invalid(format!(
                "condition length {} != {}",
                x_cond.len(),
                self.layout.cond_len
            )));
        }
        Ok(x_cond.data().iter().map(|v| v * self.layout.cond_scale).collect())
    }

    fn check_latent(&self, z: &NdArray, what: &str) -> Result<()> {
        let d = self.layout.latent_len();
        let ok = z.len() == d
            && (z.shape() == [d] || z.shape() == self.layout.latent_shape().as_slice());
        if !ok {
            return Err(Error::invalid(format!(
                "{what} shape {:?} incompatible with latent {:?}",
                z.shape(),
                self.layout.latent_shape()
            )));
        }
        Ok(())
    }

    /// Full generative pass z0 -> eta through the base layer and all blocks.
    pub fn forward(&self, x_cond: &NdArray, z0: &NdArray) -> Result<FlowOut> {
        self.check_latent(z0, "z0")?;
        let mu = self.mu().data();
        let ls = self.params.get("log_sigma").unwrap().data();
        let mut v: Vec<f64> = z0
            .data()
            .iter()
            .zip(mu.iter().zip(ls))
            .map(|(&z, (&m, &l))| m + l.exp() * z)
            .collect();
        let mut logdet: f64 = ls.iter().sum();
        logdet += self.blocks_forward(x_cond, &mut v)?;
        Ok(FlowOut {
            eta: NdArray::from_vec(self.layout.latent_shape(), v)?,
            logdet,
        })
    }

    /// Generative pass through the mapping blocks only (z -> eta); the base
    /// Gaussian is bypassed, which is how attack-time search uses the flow.
    /// Never reads mu or sigma.
    pub fn forward_from_z(&self, x_cond: &NdArray, z: &NdArray) -> Result<FlowOut> {
        self.check_latent(z, "z")?;
        let mut v = z.data().to_vec();
        let logdet = self.blocks_forward(x_cond, &mut v)?;
        Ok(FlowOut {
            eta: NdArray::from_vec(self.layout.latent_shape(), v)?,
            logdet,
        })
    }

    fn blocks_forward(&self, x_cond: &NdArray, v: &mut Vec<f64>) -> Result<f64> {
        let cond = self.cond_input(x_cond)?;
        let mut logdet = 0.0;
        for block in (0..self.layout.blocks).rev() {
            logdet += self.block_generative(block, &cond, v)?;
        }
        Ok(logdet)
    }

    /// Normalizing pass eta -> z0 plus the inverse-direction log-det (the
    /// exact negative of the generative log-det).
    pub fn inverse(&self, x_cond: &NdArray, eta: &NdArray) -> Result<(NdArray, f64)> {
        let (z, mut logdet_inv) = self.inverse_to_z(x_cond, eta)?;
        let mu = self.mu().data();
        let ls = self.params.get("log_sigma").unwrap().data();
        let z0: Vec<f64> = z
            .data()
            .iter()
            .zip(mu.iter().zip(ls))
            .map(|(&zv, (&m, &l))| (zv - m) * (-l).exp())
            .collect();
        logdet_inv -= ls.iter().sum::<f64>();
        Ok((NdArray::from_vec(self.layout.latent_shape(), z0)?, logdet_inv))
    }

    /// Normalizing pass through the blocks only (eta -> z).
    pub fn inverse_to_z(&self, x_cond: &NdArray, eta: &NdArray) -> Result<(NdArray, f64)> {
        self.check_latent(eta, "eta")?;
        let cond = self.cond_input(x_cond)?;
        let mut v = eta.data().to_vec();
        let mut logdet_inv = 0.0;
        for block in 0..self.layout.blocks {
            logdet_inv += self.block_normalizing(block, &cond, &mut v)?;
        }
        Ok((NdArray::from_vec(self.layout.latent_shape(), v)?, logdet_inv))
    }

    /// Exact conditional log-density: standard-normal log-density of the
    /// recovered z0 plus the inverse-direction log-dets of all M+1 layers.
    pub fn log_prob(&self, x_cond: &NdArray, eta: &NdArray) -> Result<f64> {
        let (z0, logdet_inv) = self.inverse(x_cond, eta)?;
        Ok(std_normal_logpdf(z0.data()) + logdet_inv)
    }

    /// Log-density using a standard-normal base in place of (mu, sigma);
    /// used when two flows are compared under a common base Gaussian.
    pub fn log_prob_with_standard_base(&self, x_cond: &NdArray, eta: &NdArray) -> Result<f64> {
        let (z, logdet_inv) = self.inverse_to_z(x_cond, eta)?;
        Ok(std_normal_logpdf(z.data()) + logdet_inv)
    }

    /// Draw n perturbations: fresh z0 ~ N(0, I) pushed through the full flow.
    pub fn sample<R: Rng>(&self, x_cond: &NdArray, rng: &mut R, n: usize) -> Result<Vec<NdArray>> {
        if n == 0 {
            return Err(Error::invalid("sample count must be at least 1"));
        }
        let d = self.layout.latent_len();
        (0..n)
            .map(|_| {
                let z0: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let z0 = NdArray::from_vec(self.layout.latent_shape(), z0)?;
                Ok(self.forward(x_cond, &z0)?.eta)
            })
            .collect()
    }

    // Generative direction within one block: coupling, then mixing, then
    // actnorm (the inverse composition of the normalizing order).
    fn block_generative(&self, block: usize, cond: &[f64], v: &mut Vec<f64>) -> Result<f64> {
        let specs = self.layout.net_specs();
        let d = self.layout.latent_len();
        let h = self.layout.split_at();
        let spatial = self.layout.spatial();
        let channels = self.layout.channels;
        let mut logdet = 0.0;

        // Conditional affine coupling.
        let mut net_in = Vec::with_capacity(h + cond.len());
        net_in.extend_from_slice(&v[..h]);
        net_in.extend_from_slice(cond);
        let out = specs[2].eval(&self.params, &format!("block{block}.coup"), &net_in);
        let half = d - h;
        for i in 0..half {
            let log_s = COUPLING_ALPHA * out[i].tanh();
            v[h + i] = v[h + i] * log_s.exp() + out[half + i];
            logdet += log_s;
        }

        // Conditional channel mixing: W = I + U(x), applied per position.
        let u = specs[1].eval(&self.params, &format!("block{block}.mix"), cond);
        let w = add_identity(&u, channels);
        let det = determinant(&w, channels);
        if det.abs() < MIN_MIX_DET {
            return Err(Error::SingularMixing { block, det });
        }
        *v = mix_apply(&w, v, channels, spatial);
        logdet += spatial as f64 * det.abs().ln();

        // Conditional actnorm: per-channel scale exp(tanh(a)) and bias.
        let ab = specs[0].eval(&self.params, &format!("block{block}.act"), cond);
        for c in 0..channels {
            let log_s = ab[c].tanh();
            let s = log_s.exp();
            let b = ab[channels + c];
            for e in &mut v[c * spatial..(c + 1) * spatial] {
                *e = s * *e + b;
            }
            logdet += spatial as f64 * log_s;
        }
        Ok(logdet)
    }

    // Normalizing direction within one block: actnorm, mixing, coupling.
    fn block_normalizing(&self, block: usize, cond: &[f64], v: &mut Vec<f64>) -> Result<f64> {
        let specs = self.layout.net_specs();
        let d = self.layout.latent_len();
        let h = self.layout.split_at();
        let spatial = self.layout.spatial();
        let channels = self.layout.channels;
        let mut logdet_inv = 0.0;

        let ab = specs[0].eval(&self.params, &format!("block{block}.act"), cond);
        for c in 0..channels {
            let log_s = ab[c].tanh();
            let inv_s = (-log_s).exp();
            let b = ab[channels + c];
            for e in &mut v[c * spatial..(c + 1) * spatial] {
                *e = (*e - b) * inv_s;
            }
            logdet_inv -= spatial as f64 * log_s;
        }

        let u = specs[1].eval(&self.params, &format!("block{block}.mix"), cond);
        let w = add_identity(&u, channels);
        let (det, w_inv) = invert(&w, channels)
            .ok_or(Error::SingularMixing { block, det: 0.0 })?;
        if det.abs() < MIN_MIX_DET {
            return Err(Error::SingularMixing { block, det });
        }
        *v = mix_apply(&w_inv, v, channels, spatial);
        logdet_inv -= spatial as f64 * det.abs().ln();

        let mut net_in = Vec::with_capacity(h + cond.len());
        net_in.extend_from_slice(&v[..h]);
        net_in.extend_from_slice(cond);
        let out = specs[2].eval(&self.params, &format!("block{block}.coup"), &net_in);
        let half = d - h;
        for i in 0..half {
            let log_s = COUPLING_ALPHA * out[i].tanh();
            v[h + i] = (v[h + i] - out[half + i]) * (-log_s).exp();
            logdet_inv -= log_s;
        }
        Ok(logdet_inv)
    }

    /// Tape twin of [`Self::forward`]: generative pass with live parameters
    /// from `bound`; returns the flat eta node and the scalar log-det node.
    /// Used for training gradients.
    pub fn build_forward(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        x_cond: &NdArray,
        z0: &NdArray,
    ) -> Result<(NodeId, NodeId)> {
        self.check_latent(z0, "z0")?;
        let d = self.layout.latent_len();
        let resolve: Box<dyn Fn(&mut Tape, &str) -> NodeId> = {
            let pairs: Vec<(String, NodeId)> = bound.nodes.clone();
            Box::new(move |_t: &mut Tape, name: &str| {
                pairs
                    .iter()
                    .find(|(n, _)| n == name)
                    .map(|(_, id)| *id)
                    .unwrap_or_else(|| panic!("unbound flow parameter {name}"))
            })
        };
        let cond_vals = self.cond_input(x_cond)?;
        let cond_node = if cond_vals.is_empty() {
            None
        } else {
            Some(tape.leaf(NdArray::from_vec(vec![cond_vals.len()], cond_vals.clone())?))
        };

        let z0n = tape.leaf(z0.reshaped(&[d])?);
        let mu = resolve(tape, "mu");
        let ls = resolve(tape, "log_sigma");
        let sigma = tape.exp(ls);
        let scaled = tape.mul(sigma, z0n)?;
        let mut v = tape.add(scaled, mu)?;
        let mut logdet = tape.sum(ls);

        for block in (0..self.layout.blocks).rev() {
            let (next, ld) = self.build_block_generative(tape, &resolve, cond_node, block, v)?;
            v = next;
            logdet = tape.add(logdet, ld)?;
        }
        Ok((v, logdet))
    }

    fn build_block_generative(
        &self,
        tape: &mut Tape,
        resolve: &dyn Fn(&mut Tape, &str) -> NodeId,
        cond_node: Option<NodeId>,
        block: usize,
        v: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let specs = self.layout.net_specs();
        let d = self.layout.latent_len();
        let h = self.layout.split_at();
        let spatial = self.layout.spatial();
        let channels = self.layout.channels;

        // Coupling.
        let (v1, v2) = tape.split_axis0(v, h)?;
        let net_in = match cond_node {
            Some(c) if !self.layout.bias_only => Some(tape.concat_axis0(&[v1, c])?),
            _ if self.layout.bias_only => None,
            _ => Some(v1),
        };
        let out = specs[2].build(tape, resolve, &format!("block{block}.coup"), net_in)?;
        let (ls_raw, t) = tape.split_axis0(out, d - h)?;
        let tanh_ls = tape.tanh(ls_raw);
        let log_s = tape.scale(tanh_ls, COUPLING_ALPHA);
        let ld_coup = tape.sum(log_s);
        let s = tape.exp(log_s);
        let scaled = tape.mul(v2, s)?;
        let v2p = tape.add(scaled, t)?;
        let v = tape.concat_axis0(&[v1, v2p])?;

        // Mixing: W = I + U.
        let u = specs[1].build(tape, resolve, &format!("block{block}.mix"), cond_node)?;
        let u_mat = tape.reshape(u, &[channels, channels])?;
        let eye = tape.leaf(NdArray::eye(channels));
        let w = tape.add(u_mat, eye)?;
        let ld_mix_unit = tape.log_abs_det(w)?;
        let ld_mix = tape.scale(ld_mix_unit, spatial as f64);
        let v_mat = tape.reshape(v, &[channels, spatial])?;
        let mixed = tape.matmul(w, v_mat)?;

        // Actnorm.
        let ab = specs[0].build(tape, resolve, &format!("block{block}.act"), cond_node)?;
        let (a_raw, b) = tape.split_axis0(ab, channels)?;
        let log_s = tape.tanh(a_raw);
        let ld_act_unit = tape.sum(log_s);
        let ld_act = tape.scale(ld_act_unit, spatial as f64);
        let s = tape.exp(log_s);
        let scaled = tape.channel_scale(mixed, s)?;
        let shifted = tape.channel_bias(scaled, b)?;
        let out_v = tape.reshape(shifted, &[d])?;

        let partial = tape.add(ld_coup, ld_mix)?;
        let ld_total = tape.add(partial, ld_act)?;
        Ok((out_v, ld_total))
    }

    /// Frozen-parameter log-density of a live eta node: the normalizing pass
    /// is built with all flow parameters as constants, so gradients reach eta
    /// (and anything upstream of it) but never the parameters. This is the
    /// density term whose eta-dependence the KL estimator differentiates.
    pub fn build_frozen_log_prob(
        &self,
        tape: &mut Tape,
        x_cond: &NdArray,
        eta: NodeId,
    ) -> Result<NodeId> {
        let d = self.layout.latent_len();
        if tape.value(eta).len() != d {
            return Err(Error::invalid(format!(
                "eta node has {} values, latent wants {d}",
                tape.value(eta).len()
            )));
        }
        let specs = self.layout.net_specs();
        let h = self.layout.split_at();
        let spatial = self.layout.spatial();
        let channels = self.layout.channels;
        let cond = self.cond_input(x_cond)?;
        let cond_node = if cond.is_empty() {
            None
        } else {
            Some(tape.leaf(NdArray::from_vec(vec![cond.len()], cond.clone())?))
        };

        let mut v = tape.reshape(eta, &[d])?;
        let mut const_logdet = 0.0;
        let mut live_logdets: Vec<NodeId> = Vec::new();

        for block in 0..self.layout.blocks {
            // Actnorm inverse with constant scale/bias.
            let ab = specs[0].eval(&self.params, &format!("block{block}.act"), &cond);
            let mut inv_s = vec![0.0; channels];
            let mut neg_b = vec![0.0; channels];
            for c in 0..channels {
                let log_s = ab[c].tanh();
                inv_s[c] = (-log_s).exp();
                neg_b[c] = -ab[channels + c];
                const_logdet -= spatial as f64 * log_s;
            }
            let v_mat = tape.reshape(v, &[channels, spatial])?;
            let nb = tape.leaf(NdArray::from_vec(vec![channels], neg_b)?);
            let is = tape.leaf(NdArray::from_vec(vec![channels], inv_s)?);
            let shifted = tape.channel_bias(v_mat, nb)?;
            let unscaled = tape.channel_scale(shifted, is)?;

            // Mixing inverse with a constant matrix.
            let u = specs[1].eval(&self.params, &format!("block{block}.mix"), &cond);
            let w = add_identity(&u, channels);
            let (det, w_inv) = invert(&w, channels)
                .ok_or(Error::SingularMixing { block, det: 0.0 })?;
            if det.abs() < MIN_MIX_DET {
                return Err(Error::SingularMixing { block, det });
            }
            const_logdet -= spatial as f64 * det.abs().ln();
            let w_inv_node = tape.leaf(NdArray::from_vec(vec![channels, channels], w_inv)?);
            let mixed = tape.matmul(w_inv_node, unscaled)?;
            v = tape.reshape(mixed, &[d])?;

            // Coupling inverse: the net reads the live first half, so this
            // log-det depends on eta and stays on the tape.
            let (v1, v2p) = tape.split_axis0(v, h)?;
            let net_in = match cond_node {
                Some(c) if !self.layout.bias_only => Some(tape.concat_axis0(&[v1, c])?),
                _ if self.layout.bias_only => None,
                _ => Some(v1),
            };
            let frozen = |t: &mut Tape, name: &str| -> NodeId {
                t.leaf(self.params.get(name).expect("flow param").clone())
            };
            let out = specs[2].build(tape, &frozen, &format!("block{block}.coup"), net_in)?;
            let (ls_raw, t_node) = tape.split_axis0(out, d - h)?;
            let tanh_ls = tape.tanh(ls_raw);
            let log_s = tape.scale(tanh_ls, COUPLING_ALPHA);
            let neg_ls = tape.neg(log_s);
            let inv_s = tape.exp(neg_ls);
            let centered = tape.sub(v2p, t_node)?;
            let v2 = tape.mul(centered, inv_s)?;
            v = tape.concat_axis0(&[v1, v2])?;
            let ld = tape.sum(log_s);
            live_logdets.push(tape.neg(ld));
        }

        // Base layer inverse with constant mu/sigma.
        let mu = self.mu().clone();
        let ls = self.params.get("log_sigma").unwrap();
        const_logdet -= ls.data().iter().sum::<f64>();
        let inv_sigma = ls.map(|l| (-l).exp());
        let mu_node = tape.leaf(mu);
        let isn = tape.leaf(inv_sigma);
        let centered = tape.sub(v, mu_node)?;
        let z0 = tape.mul(centered, isn)?;

        // log N(z0; 0, I)
        let sq = tape.mul(z0, z0)?;
        let ssq = tape.sum(sq);
        let half = tape.scale(ssq, -0.5);
        let logn = tape.add_scalar(half, -0.5 * d as f64 * LN_2PI);

        let mut acc = tape.add_scalar(logn, const_logdet);
        for ld in live_logdets {
            let ld_s = tape.reshape(ld, &[])?;
            acc = tape.add(acc, ld_s)?;
        }
        Ok(acc)
    }
}

fn std_normal_logpdf(z: &[f64]) -> f64 {
    let ssq: f64 = z.iter().map(|v| v * v).sum();
    -0.5 * (z.len() as f64) * LN_2PI - 0.5 * ssq
}

fn add_identity(u: &[f64], n: usize) -> Vec<f64> {
    let mut w = u.to_vec();
    for i in 0..n {
        w[i * n + i] += 1.0;
    }
    w
}

/// Apply the channel-mixing matrix at every spatial position.
fn mix_apply(w: &[f64], v: &[f64], channels: usize, spatial: usize) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for ci in 0..channels {
        for cj in 0..channels {
            let wv = w[ci * channels + cj];
            if wv == 0.0 {
                continue;
            }
            for s in 0..spatial {
                out[ci * spatial + s] += wv * v[cj * spatial + s];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_layout() -> FlowLayout {
        FlowLayout::new(2, 2, 8, 2, vec![6]).unwrap()
    }

    fn random_cond(len: usize, seed: u64) -> NdArray {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        NdArray::from_vec(vec![len], (0..len).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    fn random_latent(layout: &FlowLayout, seed: u64) -> NdArray {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        NdArray::from_vec(
            layout.latent_shape(),
            (0..layout.latent_len())
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn identity_init_is_exact_identity() {
        let flow = CondFlow::identity_init(small_layout(), 0).unwrap();
        let x = random_cond(8, 1);
        let z0 = random_latent(&flow.layout, 2);
        let out = flow.forward(&x, &z0).unwrap();
        assert_eq!(out.eta.data(), z0.data());
        assert_eq!(out.logdet, 0.0);
        let (back, ld) = flow.inverse(&x, &out.eta).unwrap();
        assert_eq!(back.data(), z0.data());
        assert_eq!(ld, 0.0);
    }

    #[test]
    fn translation_only_flow_shifts_by_mu() {
        let mut flow = CondFlow::identity_init(small_layout(), 0).unwrap();
        let m: Vec<f64> = (0..8).map(|i| 0.1 * i as f64).collect();
        *flow.params.get_mut("mu").unwrap() = NdArray::from_vec(vec![8], m.clone()).unwrap();
        let x = random_cond(8, 1);
        let z0 = random_latent(&flow.layout, 3);
        let out = flow.forward(&x, &z0).unwrap();
        for i in 0..8 {
            assert!((out.eta.data()[i] - (z0.data()[i] + m[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn roundtrip_on_random_flows() {
        for trial in 0..100 {
            let mut flow = CondFlow::identity_init(small_layout(), trial).unwrap();
            flow.randomize(0.4, 1000 + trial);
            let x = random_cond(8, 2000 + trial);
            let eta = random_latent(&flow.layout, 3000 + trial);
            let (z0, ld_inv) = flow.inverse(&x, &eta).unwrap();
            let out = flow.forward(&x, &z0).unwrap();
            assert!(
                out.eta.max_abs_diff(&eta) < 1e-5,
                "trial {trial}: {}",
                out.eta.max_abs_diff(&eta)
            );
            assert!(
                (ld_inv + out.logdet).abs() < 1e-8,
                "trial {trial}: logdets {} vs {}",
                ld_inv,
                out.logdet
            );
        }
    }

    #[test]
    fn log_prob_matches_change_of_variables_identity() {
        for trial in 0..20 {
            let mut flow = CondFlow::identity_init(small_layout(), trial).unwrap();
            flow.randomize(0.3, 77 + trial);
            let x = random_cond(8, trial);
            let z0 = random_latent(&flow.layout, 9000 + trial);
            let out = flow.forward(&x, &z0).unwrap();
            let lp = flow.log_prob(&x, &out.eta).unwrap();
            let want = std_normal_logpdf(z0.data()) - out.logdet;
            assert!((lp - want).abs() < 1e-6, "trial {trial}: {lp} vs {want}");
        }
    }

    #[test]
    fn closed_form_gaussian_cases() {
        // Identity blocks, eta = 0: standard normal at the mode.
        let flow = CondFlow::identity_init(small_layout(), 0).unwrap();
        let x = random_cond(8, 0);
        let zero = NdArray::zeros(&[2, 2, 2]);
        let d = 8.0;
        let lp = flow.log_prob(&x, &zero).unwrap();
        assert!((lp - (-0.5 * d * LN_2PI)).abs() < 1e-12);

        // General (mu, sigma), eta = mu: -(D/2) ln 2pi - sum ln sigma.
        let mut flow = CondFlow::identity_init(small_layout(), 0).unwrap();
        let mu: Vec<f64> = (0..8).map(|i| 0.2 * i as f64 - 0.5).collect();
        let ls: Vec<f64> = (0..8).map(|i| 0.1 * i as f64 - 0.3).collect();
        *flow.params.get_mut("mu").unwrap() = NdArray::from_vec(vec![8], mu.clone()).unwrap();
        *flow.params.get_mut("log_sigma").unwrap() =
            NdArray::from_vec(vec![8], ls.clone()).unwrap();
        let eta = NdArray::from_vec(vec![2, 2, 2], mu).unwrap();
        let lp = flow.log_prob(&x, &eta).unwrap();
        let want = -0.5 * d * LN_2PI - ls.iter().sum::<f64>();
        assert!((lp - want).abs() < 1e-12, "{lp} vs {want}");
    }

    #[test]
    fn analytic_logdet_matches_numerical_jacobian() {
        // Central differences on z0 -> eta assemble the Jacobian; its
        // log|det| must match the analytic total within rel 1e-3.
        let layout = FlowLayout::new(2, 2, 8, 2, vec![5]).unwrap();
        let d = layout.latent_len();
        for trial in 0..5 {
            let mut flow = CondFlow::identity_init(layout.clone(), trial).unwrap();
            flow.randomize(0.35, 500 + trial);
            let x = random_cond(8, 600 + trial);
            let z0 = random_latent(&layout, 700 + trial);
            let out = flow.forward(&x, &z0).unwrap();

            let step = 1e-6;
            let mut jac = vec![0.0; d * d];
            for j in 0..d {
                let mut zp = z0.clone();
                zp.data_mut()[j] += step;
                let mut zm = z0.clone();
                zm.data_mut()[j] -= step;
                let fp = flow.forward(&x, &zp).unwrap().eta;
                let fm = flow.forward(&x, &zm).unwrap().eta;
                for i in 0..d {
                    jac[i * d + j] = (fp.data()[i] - fm.data()[i]) / (2.0 * step);
                }
            }
            let det = determinant(&jac, d).abs();
            let rel = (det - out.logdet.exp()).abs() / det.abs().max(1e-300);
            assert!(rel < 1e-3, "trial {trial}: |J| {det} vs exp(logdet) {}", out.logdet.exp());
        }
    }

    #[test]
    fn two_dim_grid_mass_integrates_to_one() {
        let layout = FlowLayout::new(2, 1, 2, 1, vec![4]).unwrap();
        let mut flow = CondFlow::identity_init(layout.clone(), 0).unwrap();
        flow.randomize(0.3, 42);
        let x = random_cond(2, 9);

        // Empirical spread of pushed-forward mass fixes the grid window.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let samples = flow.sample(&x, &mut rng, 4000).unwrap();
        let mut mean = [0.0f64; 2];
        for s in &samples {
            mean[0] += s.data()[0];
            mean[1] += s.data()[1];
        }
        mean[0] /= samples.len() as f64;
        mean[1] /= samples.len() as f64;
        let mut var = [0.0f64; 2];
        for s in &samples {
            var[0] += (s.data()[0] - mean[0]).powi(2);
            var[1] += (s.data()[1] - mean[1]).powi(2);
        }
        var[0] = (var[0] / samples.len() as f64).sqrt();
        var[1] = (var[1] / samples.len() as f64).sqrt();

        let n = 400;
        let mut mass = 0.0;
        let (w0, w1) = (12.0 * var[0], 12.0 * var[1]);
        let (da, db) = (w0 / n as f64, w1 / n as f64);
        for i in 0..n {
            for j in 0..n {
                let a = mean[0] - 6.0 * var[0] + (i as f64 + 0.5) * da;
                let b = mean[1] - 6.0 * var[1] + (j as f64 + 0.5) * db;
                let eta = NdArray::from_vec(vec![2, 1, 1], vec![a, b]).unwrap();
                mass += flow.log_prob(&x, &eta).unwrap().exp() * da * db;
            }
        }
        assert!((0.99..=1.01).contains(&mass), "grid mass {mass}");
    }

    #[test]
    fn sampling_contracts() {
        // sigma -> 0: samples collapse to mu.
        let mut flow = CondFlow::identity_init(small_layout(), 0).unwrap();
        let mu: Vec<f64> = (0..8).map(|i| i as f64 * 0.05).collect();
        *flow.params.get_mut("mu").unwrap() = NdArray::from_vec(vec![8], mu.clone()).unwrap();
        *flow.params.get_mut("log_sigma").unwrap() = NdArray::filled(&[8], (1e-12f64).ln());
        let x = random_cond(8, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for s in flow.sample(&x, &mut rng, 10).unwrap() {
            for (a, b) in s.data().iter().zip(&mu) {
                assert!((a - b).abs() < 1e-9);
            }
        }

        // Seeded identity flow: samples are exactly the recorded normal draws.
        let flow = CondFlow::identity_init(small_layout(), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let got = flow.sample(&x, &mut rng, 3).unwrap();
        let mut replay = ChaCha8Rng::seed_from_u64(11);
        for s in got {
            for v in s.data() {
                let draw: f64 = replay.sample(StandardNormal);
                assert_eq!(*v, draw);
            }
        }
    }

    #[test]
    fn empirical_mean_converges_to_mu() {
        let mut flow = CondFlow::identity_init(small_layout(), 0).unwrap();
        let mu: Vec<f64> = (0..8).map(|i| 0.3 - 0.07 * i as f64).collect();
        *flow.params.get_mut("mu").unwrap() = NdArray::from_vec(vec![8], mu.clone()).unwrap();
        let x = random_cond(8, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let mut acc = vec![0.0; 8];
        let n = 100_000;
        for s in flow.sample(&x, &mut rng, n).unwrap() {
            for (a, v) in acc.iter_mut().zip(s.data()) {
                *a += v;
            }
        }
        for (a, m) in acc.iter().zip(&mu) {
            assert!((a / n as f64 - m).abs() < 0.02);
        }
    }

    #[test]
    fn conditioning_changes_output() {
        let mut hits = 0;
        for trial in 0..100 {
            let mut flow = CondFlow::identity_init(small_layout(), trial).unwrap();
            flow.randomize(0.4, 50 + trial);
            let x1 = random_cond(8, 2 * trial);
            let x2 = random_cond(8, 2 * trial + 1);
            let z0 = random_latent(&flow.layout, 4000 + trial);
            let e1 = flow.forward(&x1, &z0).unwrap().eta;
            let e2 = flow.forward(&x2, &z0).unwrap().eta;
            if e1.max_abs_diff(&e2) > 0.0 {
                hits += 1;
            }
        }
        assert!(hits >= 95, "conditioning mattered in only {hits}/100 trials");
    }

    #[test]
    fn mu_sigma_never_touch_block_outputs() {
        let mut flow = CondFlow::identity_init(small_layout(), 1).unwrap();
        flow.randomize(0.3, 8);
        let x = random_cond(8, 4);
        let z = random_latent(&flow.layout, 5);
        let before = flow.forward_from_z(&x, &z).unwrap();
        *flow.params.get_mut("mu").unwrap() = NdArray::filled(&[8], 3.7);
        *flow.params.get_mut("log_sigma").unwrap() = NdArray::filled(&[8], -1.2);
        let after = flow.forward_from_z(&x, &z).unwrap();
        assert_eq!(before.eta.data(), after.eta.data());
        assert_eq!(before.logdet, after.logdet);
    }

    #[test]
    fn phi_partition_is_exact() {
        let flow = CondFlow::identity_init(small_layout(), 0).unwrap();
        let mut phi = 0usize;
        let mut base = 0usize;
        for (name, v) in flow.params.iter() {
            if CondFlow::is_phi(name) {
                phi += v.len();
            } else {
                assert!(name == "mu" || name == "log_sigma");
                base += v.len();
            }
        }
        assert_eq!(base, 16);
        assert_eq!(phi + base, flow.params.total_len());
    }

    #[test]
    fn singular_mixing_is_reported_with_block_index() {
        let layout = FlowLayout {
            channels: 2,
            d_r: 1,
            cond_len: 0,
            blocks: 2,
            hidden: vec![],
            cond_scale: 1.0,
            bias_only: true,
        };
        let mut flow = CondFlow::identity_init(layout, 0).unwrap();
        // U = -I makes W = I + U singular in block 1.
        *flow.params.get_mut("block1.mix.b0").unwrap() =
            NdArray::from_vec(vec![4], vec![-1.0, 0.0, 0.0, -1.0]).unwrap();
        let x = NdArray::zeros(&[0]);
        let z = NdArray::from_vec(vec![2, 1, 1], vec![0.3, -0.2]).unwrap();
        match flow.forward_from_z(&x, &z) {
            Err(Error::SingularMixing { block, .. }) => assert_eq!(block, 1),
            other => panic!("expected singular mixing, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn tape_forward_matches_numeric_forward() {
        for trial in 0..10 {
            let mut flow = CondFlow::identity_init(small_layout(), trial).unwrap();
            flow.randomize(0.35, 90 + trial);
            let x = random_cond(8, 91 + trial);
            let z0 = random_latent(&flow.layout, 92 + trial);
            let numeric = flow.forward(&x, &z0).unwrap();

            let mut tape = Tape::new();
            let bound = flow.params.bind(&mut tape);
            let (eta, logdet) = flow.build_forward(&mut tape, &bound, &x, &z0).unwrap();
            let tv = tape.value(eta);
            for (a, b) in tv.data().iter().zip(numeric.eta.data()) {
                assert!((a - b).abs() < 1e-12);
            }
            assert!(
                (tape.value(logdet).item() - numeric.logdet).abs() < 1e-12,
                "trial {trial}: tape logdet {} vs numeric {}",
                tape.value(logdet).item(),
                numeric.logdet
            );
        }
    }

    #[test]
    fn frozen_log_prob_matches_numeric_log_prob() {
        for trial in 0..10 {
            let mut flow = CondFlow::identity_init(small_layout(), trial).unwrap();
            flow.randomize(0.35, 70 + trial);
            let x = random_cond(8, 71 + trial);
            let eta = random_latent(&flow.layout, 72 + trial);
            let numeric = flow.log_prob(&x, &eta).unwrap();

            let mut tape = Tape::new();
            let eta_node = tape.leaf(eta.reshaped(&[8]).unwrap());
            let lp = flow.build_frozen_log_prob(&mut tape, &x, eta_node).unwrap();
            assert!(
                (tape.value(lp).item() - numeric).abs() < 1e-9,
                "trial {trial}: {} vs {numeric}",
                tape.value(lp).item()
            );
        }
    }
}
