//! Covariance matrix adaptation evolution strategy.
//!
//! Standard (mu/mu_w, lambda) CMA-ES with cumulative step-size adaptation,
//! rank-one and rank-mu covariance updates, Hansen's default learning rates
//! derived from the dimension, and a positive-definiteness repair that clamps
//! eigenvalues to a trace-scaled floor. Fitness values are minimized; the
//! `f64::INFINITY` sentinel ranks after every finite value, ties broken by
//! candidate index.

use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::StandardNormal;

/// Eigenvalue floor: `PD_FLOOR * trace / dim`.
const PD_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone)]
pub struct CmaConfig {
    pub dim: usize,
    /// Population size k.
    pub pop_size: usize,
    /// Number of recombination parents.
    pub parents: usize,
    /// Initial global step size.
    pub step0: f64,
    /// Log-decreasing recombination weights, positive, summing to 1.
    pub weights: Vec<f64>,
    pub mu_eff: f64,
    pub c_sigma: f64,
    pub d_sigma: f64,
    pub c_c: f64,
    pub c_1: f64,
    pub c_mu: f64,
    pub chi_n: f64,
}

impl CmaConfig {
    /// Defaults: population 20, parents 10, step 0.3, Hansen learning rates.
    pub fn new(dim: usize) -> Result<Self> {
        Self::with_sizes(dim, 20, 10, 0.3)
    }

    pub fn with_sizes(dim: usize, pop_size: usize, parents: usize, step0: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("CMA-ES dimension must be positive"));
        }
        if parents == 0 || parents > pop_size {
            return Err(Error::invalid(format!(
                "parents {parents} must lie in [1, pop_size = {pop_size}]"
            )));
        }
        if step0 <= 0.0 {
            return Err(Error::invalid("step0 must be positive"));
        }
        let n = dim as f64;
        // w_i proportional to ln(parents + 1) - ln(i); positive and
        // non-increasing for every parents <= pop_size.
        let raw: Vec<f64> = (1..=parents)
            .map(|i| ((parents + 1) as f64).ln() - (i as f64).ln())
            .collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();

        let c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (n + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n);
        let c_1 = 2.0 / ((n + 1.3).powi(2) + mu_eff);
        let c_mu =
            (2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((n + 2.0).powi(2) + mu_eff)).min(1.0 - c_1);
        let chi_n = n.sqrt() * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));

        Ok(CmaConfig {
            dim,
            pop_size,
            parents,
            step0,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_n,
        })
    }
}

/// Evolution-strategy search state over R^dim.
#[derive(Debug, Clone)]
pub struct CmaState {
    pub cfg: CmaConfig,
    pub mean: Vec<f64>,
    pub step: f64,
    /// Covariance, row-major dim x dim, kept symmetric.
    pub cov: Vec<f64>,
    pub path_sigma: Vec<f64>,
    pub path_c: Vec<f64>,
    pub generation: usize,
    eigen_basis: Vec<f64>,   // B, columns are eigenvectors
    eigen_sqrt: Vec<f64>,    // D = sqrt(eigenvalues)
    eigen_generation: usize, // generation the cache was computed at
    eigen_stale: bool,
}

/// Initialize per the attack contract: mean from the caller, identity
/// covariance, zero evolution paths, step = cfg.step0.
pub fn cma_init(cfg: CmaConfig, mean0: &[f64]) -> Result<CmaState> {
    if mean0.len() != cfg.dim {
        return Err(Error::invalid(format!(
            "mean0 length {} != dim {}",
            mean0.len(),
            cfg.dim
        )));
    }
    let n = cfg.dim;
    let mut cov = vec![0.0; n * n];
    let mut basis = vec![0.0; n * n];
    for i in 0..n {
        cov[i * n + i] = 1.0;
        basis[i * n + i] = 1.0;
    }
    Ok(CmaState {
        mean: mean0.to_vec(),
        step: cfg.step0,
        cov,
        path_sigma: vec![0.0; n],
        path_c: vec![0.0; n],
        generation: 0,
        eigen_basis: basis,
        eigen_sqrt: vec![1.0; n],
        eigen_generation: 0,
        eigen_stale: false,
        cfg,
    })
}

impl CmaState {
    /// Sample a generation of `pop_size` candidates: `mean + step * B D z`.
    pub fn ask<R: Rng>(&mut self, rng: &mut R) -> Vec<Vec<f64>> {
        self.refresh_eigen_if_stale();
        let n = self.cfg.dim;
        (0..self.cfg.pop_size)
            .map(|_| {
                let z: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let mut x = self.mean.clone();
                for i in 0..n {
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += self.eigen_basis[i * n + j] * self.eigen_sqrt[j] * z[j];
                    }
                    x[i] += self.step * acc;
                }
                x
            })
            .collect()
    }

    /// Rank candidates (ascending fitness, +inf last, ties by index) and apply
    /// the standard mean/path/covariance/step updates.
    pub fn tell(&mut self, candidates: &[Vec<f64>], fitness: &[f64]) -> Result<()> {
        let n = self.cfg.dim;
        let k = self.cfg.pop_size;
        if candidates.len() != k || fitness.len() != k {
            return Err(Error::invalid(format!(
                "tell expects {} candidates and fitnesses, got {} / {}",
                k,
                candidates.len(),
                fitness.len()
            )));
        }
        if fitness.iter().any(|f| f.is_nan()) {
            return Err(Error::invalid("NaN fitness; use the +inf sentinel"));
        }

        if fitness.iter().all(|f| f.is_infinite()) {
            // Nothing to rank: keep the mean, shrink the step.
            self.step *= 0.8;
            self.generation += 1;
            return Ok(());
        }

        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| fitness[a].total_cmp(&fitness[b]).then(a.cmp(&b)));

        self.refresh_eigen_if_stale();
        let cfg = &self.cfg;
        let old_mean = self.mean.clone();

        // Weighted recombination of the top parents, expressed as steps
        // y_i = (x_i - m) / sigma.
        let mut y_w = vec![0.0; n];
        for (rank, &idx) in order.iter().take(cfg.parents).enumerate() {
            let w = cfg.weights[rank];
            for i in 0..n {
                y_w[i] += w * (candidates[idx][i] - old_mean[i]) / self.step;
            }
        }

        // C^{-1/2} y_w = B D^{-1} B^T y_w for the sigma path.
        let mut bty = vec![0.0; n];
        for j in 0..n {
            let mut acc = 0.0;
            for i in 0..n {
                acc += self.eigen_basis[i * n + j] * y_w[i];
            }
            bty[j] = acc / self.eigen_sqrt[j].max(1e-300);
        }
        let mut c_inv_sqrt_yw = vec![0.0; n];
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += self.eigen_basis[i * n + j] * bty[j];
            }
            c_inv_sqrt_yw[i] = acc;
        }

        let cs_norm = (cfg.c_sigma * (2.0 - cfg.c_sigma) * cfg.mu_eff).sqrt();
        for i in 0..n {
            self.path_sigma[i] =
                (1.0 - cfg.c_sigma) * self.path_sigma[i] + cs_norm * c_inv_sqrt_yw[i];
        }
        let ps_norm = self.path_sigma.iter().map(|v| v * v).sum::<f64>().sqrt();

        let gen1 = (self.generation + 1) as i32;
        let denom = (1.0 - (1.0 - cfg.c_sigma).powi(2 * gen1)).sqrt();
        let h_sigma = if ps_norm / denom / cfg.chi_n < 1.4 + 2.0 / (n as f64 + 1.0) {
            1.0
        } else {
            0.0
        };

        let cc_norm = (cfg.c_c * (2.0 - cfg.c_c) * cfg.mu_eff).sqrt();
        for i in 0..n {
            self.path_c[i] = (1.0 - cfg.c_c) * self.path_c[i] + h_sigma * cc_norm * y_w[i];
        }

        // Covariance: decay + rank-1 + rank-mu.
        let delta_h = (1.0 - h_sigma) * cfg.c_c * (2.0 - cfg.c_c);
        let decay = 1.0 - cfg.c_1 - cfg.c_mu + cfg.c_1 * delta_h;
        for v in self.cov.iter_mut() {
            *v *= decay;
        }
        for i in 0..n {
            for j in 0..n {
                self.cov[i * n + j] += cfg.c_1 * self.path_c[i] * self.path_c[j];
            }
        }
        for (rank, &idx) in order.iter().take(cfg.parents).enumerate() {
            let w = cfg.c_mu * cfg.weights[rank];
            for i in 0..n {
                let yi = (candidates[idx][i] - old_mean[i]) / self.step;
                for j in 0..n {
                    let yj = (candidates[idx][j] - old_mean[j]) / self.step;
                    self.cov[i * n + j] += w * yi * yj;
                }
            }
        }
        // Re-symmetrize against drift.
        for i in 0..n {
            for j in 0..i {
                let avg = 0.5 * (self.cov[i * n + j] + self.cov[j * n + i]);
                self.cov[i * n + j] = avg;
                self.cov[j * n + i] = avg;
            }
        }

        for i in 0..n {
            self.mean[i] = old_mean[i] + self.step * y_w[i];
        }
        self.step *= ((cfg.c_sigma / cfg.d_sigma) * (ps_norm / cfg.chi_n - 1.0)).exp();

        self.generation += 1;
        self.eigen_stale = true;
        // Lazy refresh: recompute once enough generations have passed that the
        // distribution has materially moved.
        let lag = 1.0 / ((cfg.c_1 + cfg.c_mu) * n as f64 * 10.0);
        if (self.generation - self.eigen_generation) as f64 >= lag.max(1.0) {
            self.refresh_eigen();
        }
        Ok(())
    }

    /// Force the eigendecomposition (with PD repair) to be current.
    pub fn refresh_eigen(&mut self) {
        let n = self.cfg.dim;
        let (mut vals, basis) = jacobi_eigen(&self.cov, n);
        // PD repair: clamp tiny/negative eigenvalues to a trace-scaled floor
        // and write the repaired matrix back.
        let trace: f64 = (0..n).map(|i| self.cov[i * n + i]).sum();
        let floor = PD_FLOOR * (trace / n as f64).max(f64::MIN_POSITIVE);
        let mut repaired = false;
        for v in vals.iter_mut() {
            if *v < floor {
                *v = floor;
                repaired = true;
            }
        }
        if repaired {
            for i in 0..n {
                for j in 0..n {
                    let mut acc = 0.0;
                    for m in 0..n {
                        acc += basis[i * n + m] * vals[m] * basis[j * n + m];
                    }
                    self.cov[i * n + j] = acc;
                }
            }
        }
        self.eigen_basis = basis;
        self.eigen_sqrt = vals.iter().map(|v| v.sqrt()).collect();
        self.eigen_generation = self.generation;
        self.eigen_stale = false;
    }

    fn refresh_eigen_if_stale(&mut self) {
        // The cache is allowed to lag `tell` by a few generations; sampling
        // drift stays within numerical tolerance of the true covariance.
        if self.eigen_sqrt.len() != self.cfg.dim {
            self.refresh_eigen();
        }
    }

    pub fn eigenvalues(&mut self) -> Vec<f64> {
        self.refresh_eigen();
        self.eigen_sqrt.iter().map(|v| v * v).collect()
    }

    pub fn max_asymmetry(&self) -> f64 {
        let n = self.cfg.dim;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..i {
                worst = worst.max((self.cov[i * n + j] - self.cov[j * n + i]).abs());
            }
        }
        worst
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
/// Returns (eigenvalues, eigenvector matrix with eigenvectors as columns).
fn jacobi_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    if n == 1 {
        return (vec![m[0]], v);
    }
    let frob: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tol = (1e-15 * frob).max(f64::MIN_POSITIVE);
    for _sweep in 0..64 {
        let mut off = 0.0f64;
        for p in 0..n - 1 {
            for q in p + 1..n {
                off = off.max(m[p * n + q].abs());
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq.abs() <= tol * 1e-2 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = 0.5 * (aqq - app) / apq;
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // Rotate rows/columns p and q of m.
                for i in 0..n {
                    let mip = m[i * n + p];
                    let miq = m[i * n + q];
                    m[i * n + p] = c * mip - s * miq;
                    m[i * n + q] = s * mip + c * miq;
                }
                for j in 0..n {
                    let mpj = m[p * n + j];
                    let mqj = m[q * n + j];
                    m[p * n + j] = c * mpj - s * mqj;
                    m[q * n + j] = s * mpj + c * mqj;
                }
                for i in 0..n {
                    let vip = v[i * n + p];
                    let viq = v[i * n + q];
                    v[i * n + p] = c * vip - s * viq;
                    v[i * n + q] = s * vip + c * viq;
                }
            }
        }
    }
    let vals: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    (vals, v)
}
