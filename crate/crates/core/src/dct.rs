//! Orthonormal 2-D DCT, low-frequency reduction and IDCT upsampling.
//!
//! Transforms are applied per channel; colour channels are never mixed.
//! The naive matrix-product evaluation is plenty at desk scale.

use crate::error::{Error, Result};
use crate::tensor::NdArray;

/// Low-frequency subspace of the 2-D DCT with keep ratio `r` per side.
#[derive(Debug, Clone)]
pub struct DctSubspace {
    /// Full spatial side length (planes are square).
    pub d: usize,
    /// Keep ratio in (0, 1].
    pub r: f64,
    /// Reduced side length, `max(1, round(r*d))`.
    pub d_r: usize,
    /// Channel count.
    pub channels: usize,
    basis: Vec<f64>, // orthonormal DCT-II matrix T, row-major d x d
}

impl DctSubspace {
    pub fn new(d: usize, r: f64, channels: usize) -> Result<Self> {
        if d == 0 || channels == 0 {
            return Err(Error::invalid("DCT plane size and channels must be positive"));
        }
        if !(r > 0.0 && r <= 1.0) {
            return Err(Error::invalid(format!("ratio r = {r} outside (0, 1]")));
        }
        let d_r = ((r * d as f64).round() as usize).clamp(1, d);
        Ok(DctSubspace {
            d,
            r,
            d_r,
            channels,
            basis: dct_matrix(d),
        })
    }

    /// Number of reduced coefficients per image.
    pub fn reduced_len(&self) -> usize {
        self.channels * self.d_r * self.d_r
    }

    pub fn reduced_shape(&self) -> Vec<usize> {
        vec![self.channels, self.d_r, self.d_r]
    }

    /// Orthonormal forward DCT of one square plane.
    pub fn dct2(&self, plane: &[f64]) -> Vec<f64> {
        let d = self.d;
        debug_assert_eq!(plane.len(), d * d);
        // T * P * T^T
        let tp = mat_mul(&self.basis, plane, d);
        mat_mul_bt(&tp, &self.basis, d)
    }

    /// Exact inverse of [`Self::dct2`].
    pub fn idct2(&self, coeffs: &[f64]) -> Vec<f64> {
        let d = self.d;
        debug_assert_eq!(coeffs.len(), d * d);
        // T^T * V * T
        let tv = mat_at_mul(&self.basis, coeffs, d);
        mat_mul(&tv, &self.basis, d)
    }

    /// Keep the top-left `d_r x d_r` block of a `d x d` coefficient plane.
    pub fn reduce(&self, coeffs: &[f64]) -> Vec<f64> {
        let (d, dr) = (self.d, self.d_r);
        let mut out = vec![0.0; dr * dr];
        for i in 0..dr {
            out[i * dr..(i + 1) * dr].copy_from_slice(&coeffs[i * d..i * d + dr]);
        }
        out
    }

    /// Zero-pad a reduced block back to `d x d`.
    pub fn expand(&self, reduced: &[f64]) -> Vec<f64> {
        let (d, dr) = (self.d, self.d_r);
        debug_assert_eq!(reduced.len(), dr * dr);
        let mut out = vec![0.0; d * d];
        for i in 0..dr {
            out[i * d..i * d + dr].copy_from_slice(&reduced[i * dr..(i + 1) * dr]);
        }
        out
    }

    /// Full image `[C,d,d]` -> reduced coefficients `[C,d_r,d_r]`.
    pub fn to_reduced(&self, image: &NdArray) -> Result<NdArray> {
        self.check_full(image)?;
        let plane = self.d * self.d;
        let mut out = Vec::with_capacity(self.reduced_len());
        for c in 0..self.channels {
            let coeffs = self.dct2(&image.data()[c * plane..(c + 1) * plane]);
            out.extend_from_slice(&self.reduce(&coeffs));
        }
        NdArray::from_vec(self.reduced_shape(), out)
    }

    /// Reduced coefficients `[C,d_r,d_r]` -> full-space image `[C,d,d]`.
    pub fn from_reduced(&self, reduced: &NdArray) -> Result<NdArray> {
        if reduced.shape() != self.reduced_shape().as_slice() {
            return Err(Error::invalid(format!(
                "reduced shape {:?} != {:?}",
                reduced.shape(),
                self.reduced_shape()
            )));
        }
        let rlen = self.d_r * self.d_r;
        let mut out = Vec::with_capacity(self.channels * self.d * self.d);
        for c in 0..self.channels {
            let coeffs = self.expand(&reduced.data()[c * rlen..(c + 1) * rlen]);
            out.extend_from_slice(&self.idct2(&coeffs));
        }
        NdArray::from_vec(vec![self.channels, self.d, self.d], out)
    }

    /// The `d x d_r` matrix `A` with `from_reduced(V) = A V A^T` per channel.
    ///
    /// Columns are the first `d_r` rows of the DCT basis transposed; the map
    /// is an isometric embedding of the reduced space into the full space.
    pub fn expansion_matrix(&self) -> NdArray {
        let (d, dr) = (self.d, self.d_r);
        let mut a = vec![0.0; d * dr];
        for i in 0..d {
            for j in 0..dr {
                a[i * dr + j] = self.basis[j * d + i];
            }
        }
        NdArray::from_vec(vec![d, dr], a).expect("expansion matrix shape")
    }

    fn check_full(&self, image: &NdArray) -> Result<()> {
        let want = [self.channels, self.d, self.d];
        if image.shape() != want {
            return Err(Error::invalid(format!(
                "image shape {:?} != {:?}",
                image.shape(),
                want
            )));
        }
        Ok(())
    }
}

/// Orthonormal DCT-II basis: `T[j,i] = N_j cos(pi (i + 1/2) j / d)` with
/// `N_0 = sqrt(1/d)` and `N_j = sqrt(2/d)` otherwise.
fn dct_matrix(d: usize) -> Vec<f64> {
    let mut t = vec![0.0; d * d];
    let norm0 = (1.0 / d as f64).sqrt();
    let norm = (2.0 / d as f64).sqrt();
    for j in 0..d {
        let nj = if j == 0 { norm0 } else { norm };
        for i in 0..d {
            t[j * d + i] =
                nj * (std::f64::consts::PI * (i as f64 + 0.5) * j as f64 / d as f64).cos();
        }
    }
    t
}

fn mat_mul(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for k in 0..d {
            let x = a[i * d + k];
            if x == 0.0 {
                continue;
            }
            for j in 0..d {
                out[i * d + j] += x * b[k * d + j];
            }
        }
    }
    out
}

/// `A * B^T`
fn mat_mul_bt(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            let mut acc = 0.0;
            for k in 0..d {
                acc += a[i * d + k] * b[j * d + k];
            }
            out[i * d + j] = acc;
        }
    }
    out
}

/// `A^T * B`
fn mat_at_mul(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for k in 0..d {
        for i in 0..d {
            let x = a[k * d + i];
            if x == 0.0 {
                continue;
            }
            for j in 0..d {
                out[i * d + j] += x * b[k * d + j];
            }
        }
    }
    out
}
