//! Small shared helpers: stable hashing, seed derivation, order statistics.

/// SplitMix64 step; stable across platforms and releases.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic per-item seed derived from a master seed and an item id.
pub fn derive_seed(master: u64, item: u64) -> u64 {
    splitmix64(master ^ splitmix64(item.wrapping_add(0xA5A5_5A5A_0F0F_F0F0)))
}

/// FNV-1a over the raw bit patterns of a float slice.
pub fn checksum_f64(data: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in data {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
    }
    h
}

/// Lower median of an unsorted slice: element at index (n-1)/2 after sorting.
pub fn lower_median(values: &[u64]) -> Option<u64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    Some(v[(v.len() - 1) / 2])
}

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Max-abs over a slice.
pub fn linf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, &x| m.max(x.abs()))
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

/// Determinant of a small row-major square matrix via partially pivoted LU.
pub fn determinant(m: &[f64], n: usize) -> f64 {
    let mut a = m.to_vec();
    let mut det = 1.0;
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if a[r * n + col].abs() > a[piv * n + col].abs() {
                piv = r;
            }
        }
        if a[piv * n + col] == 0.0 {
            return 0.0;
        }
        if piv != col {
            for c in 0..n {
                a.swap(piv * n + c, col * n + c);
            }
            det = -det;
        }
        det *= a[col * n + col];
        let inv = 1.0 / a[col * n + col];
        for r in col + 1..n {
            let f = a[r * n + col] * inv;
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                a[r * n + c] -= f * a[col * n + c];
            }
        }
    }
    det
}

/// Gauss-Jordan inverse with partial pivoting; returns (det, inverse), or
/// None when singular.
pub fn invert(m: &[f64], n: usize) -> Option<(f64, Vec<f64>)> {
    let mut a = m.to_vec();
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        inv[i * n + i] = 1.0;
    }
    let mut det = 1.0;
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if a[r * n + col].abs() > a[piv * n + col].abs() {
                piv = r;
            }
        }
        let p = a[piv * n + col];
        if p == 0.0 {
            return None;
        }
        if piv != col {
            for c in 0..n {
                a.swap(piv * n + c, col * n + c);
                inv.swap(piv * n + c, col * n + c);
            }
            det = -det;
        }
        det *= a[col * n + col];
        let f = 1.0 / a[col * n + col];
        for c in 0..n {
            a[col * n + c] *= f;
            inv[col * n + c] *= f;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let g = a[r * n + col];
            if g == 0.0 {
                continue;
            }
            for c in 0..n {
                a[r * n + c] -= g * a[col * n + c];
                inv[r * n + c] -= g * inv[col * n + c];
            }
        }
    }
    Some((det, inv))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_seed_is_stable() {
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
        assert_ne!(derive_seed(7, 3), derive_seed(7, 4));
        assert_ne!(derive_seed(7, 3), derive_seed(8, 3));
    }

    #[test]
    fn lower_median_even_count_takes_lower() {
        assert_eq!(lower_median(&[4, 1, 3, 2]), Some(2));
        assert_eq!(lower_median(&[5, 1]), Some(1));
        assert_eq!(lower_median(&[9]), Some(9));
        assert_eq!(lower_median(&[]), None);
    }

    #[test]
    fn checksum_distinguishes_sign_and_order() {
        assert_ne!(checksum_f64(&[1.0, 2.0]), checksum_f64(&[2.0, 1.0]));
        assert_ne!(checksum_f64(&[0.0]), checksum_f64(&[-0.0]));
    }
}
