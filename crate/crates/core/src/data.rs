//! Synthetic datasets and open-set splits.

use crate::error::{Error, Result};
use crate::tensor::NdArray;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// A labelled image set. Images are stored channel-major `[C,H,W]` in [0,1].
#[derive(Debug, Clone)]
pub struct Dataset {
    images: Vec<NdArray>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub class_names: Vec<String>,
    /// "train" or "test".
    pub split: String,
}

impl Dataset {
    pub fn new(
        images: Vec<NdArray>,
        labels: Vec<usize>,
        num_classes: usize,
        height: usize,
        width: usize,
        channels: usize,
        split: &str,
    ) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if images.len() != labels.len() {
            return Err(Error::invalid("images/labels length mismatch"));
        }
        if labels.iter().any(|&l| l >= num_classes) {
            return Err(Error::invalid("label out of range"));
        }
        let want = [channels, height, width];
        for (i, img) in images.iter().enumerate() {
            if img.shape() != want {
                return Err(Error::invalid(format!(
                    "image {i} shape {:?} != {:?}",
                    img.shape(),
                    want
                )));
            }
        }
        let class_names = (0..num_classes).map(|c| format!("class{c}")).collect();
        Ok(Dataset {
            images,
            labels,
            num_classes,
            height,
            width,
            channels,
            class_names,
            split: split.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image(&self, i: usize) -> &NdArray {
        &self.images[i]
    }

    pub fn images(&self) -> &[NdArray] {
        &self.images
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub num_classes: usize,
    pub n_per_class: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub seed: u64,
}

/// Procedurally rendered class-distinct patterns: bar, disk, cross and
/// checker families with randomized position/scale/intensity plus Gaussian
/// pixel noise (sigma 0.05), clamped to [0,1]. Classes are balanced and the
/// output is byte-deterministic for a given seed.
pub fn gen_synthetic_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    if cfg.height < 8 || cfg.width < 8 {
        return Err(Error::invalid("image sides must be at least 8"));
    }
    if cfg.n_per_class == 0 {
        return Err(Error::invalid("n_per_class must be positive"));
    }
    if cfg.num_classes == 0 || cfg.num_classes > 8 {
        return Err(Error::invalid("num_classes must be in [1, 8]"));
    }
    let (h, w) = (cfg.height, cfg.width);
    let mut images = Vec::with_capacity(cfg.num_classes * cfg.n_per_class);
    let mut labels = Vec::with_capacity(images.capacity());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    for class in 0..cfg.num_classes {
        for _ in 0..cfg.n_per_class {
            let bg = 0.05 + 0.15 * rng.random::<f64>();
            let fg = 0.65 + 0.30 * rng.random::<f64>();
            let mut plane = vec![bg; h * w];
            draw_pattern(&mut plane, h, w, class, fg, &mut rng);
            for v in plane.iter_mut() {
                let noise: f64 = rng.sample::<f64, _>(StandardNormal);
                *v = (*v + 0.05 * noise).clamp(0.0, 1.0);
            }
            // Replicate the plane across channels (desk scale is grayscale).
            let mut data = Vec::with_capacity(cfg.channels * h * w);
            for _ in 0..cfg.channels {
                data.extend_from_slice(&plane);
            }
            images.push(NdArray::from_vec(vec![cfg.channels, h, w], data)?);
            labels.push(class);
        }
    }
    Dataset::new(
        images,
        labels,
        cfg.num_classes,
        h,
        w,
        cfg.channels,
        "train",
    )
}

fn draw_pattern(plane: &mut [f64], h: usize, w: usize, class: usize, fg: f64, rng: &mut ChaCha8Rng) {
    let set = |plane: &mut [f64], r: usize, c: usize, v: f64| {
        if r < h && c < w {
            plane[r * w + c] = v;
        }
    };
    match class {
        // Horizontal bars.
        0 => {
            let period = rng.random_range(3..=4);
            let phase = rng.random_range(0..period);
            let thick = rng.random_range(1..=2);
            for r in 0..h {
                if (r + phase) % period < thick {
                    for c in 0..w {
                        set(plane, r, c, fg);
                    }
                }
            }
        }
        // Vertical bars.
        1 => {
            let period = rng.random_range(3..=4);
            let phase = rng.random_range(0..period);
            let thick = rng.random_range(1..=2);
            for c in 0..w {
                if (c + phase) % period < thick {
                    for r in 0..h {
                        set(plane, r, c, fg);
                    }
                }
            }
        }
        // Filled disk.
        2 => {
            let cr = h as f64 / 2.0 + (rng.random::<f64>() - 0.5) * h as f64 * 0.25;
            let cc = w as f64 / 2.0 + (rng.random::<f64>() - 0.5) * w as f64 * 0.25;
            let rad = h.min(w) as f64 * (0.2 + 0.12 * rng.random::<f64>());
            for r in 0..h {
                for c in 0..w {
                    let d2 = (r as f64 - cr).powi(2) + (c as f64 - cc).powi(2);
                    if d2 <= rad * rad {
                        set(plane, r, c, fg);
                    }
                }
            }
        }
        // Ring.
        3 => {
            let cr = h as f64 / 2.0 + (rng.random::<f64>() - 0.5) * h as f64 * 0.2;
            let cc = w as f64 / 2.0 + (rng.random::<f64>() - 0.5) * w as f64 * 0.2;
            let rad = h.min(w) as f64 * (0.28 + 0.10 * rng.random::<f64>());
            let band = 1.4;
            for r in 0..h {
                for c in 0..w {
                    let d = ((r as f64 - cr).powi(2) + (c as f64 - cc).powi(2)).sqrt();
                    if (d - rad).abs() <= band {
                        set(plane, r, c, fg);
                    }
                }
            }
        }
        // Plus cross.
        4 => {
            let cr = rng.random_range(h / 3..=2 * h / 3);
            let cc = rng.random_range(w / 3..=2 * w / 3);
            let thick = rng.random_range(1..=2);
            for r in 0..h {
                for dt in 0..thick {
                    set(plane, r, cc + dt, fg);
                    if cc >= dt + 1 {
                        set(plane, r, cc - dt - 1, fg);
                    }
                }
            }
            for c in 0..w {
                for dt in 0..thick {
                    set(plane, cr + dt, c, fg);
                    if cr >= dt + 1 {
                        set(plane, cr - dt - 1, c, fg);
                    }
                }
            }
        }
        // Diagonal X.
        5 => {
            let off = rng.random_range(0..3) as i64 - 1;
            for r in 0..h as i64 {
                for dc in -1..=0i64 {
                    let c1 = r + off + dc;
                    let c2 = w as i64 - 1 - r + off + dc;
                    if c1 >= 0 {
                        set(plane, r as usize, c1 as usize, fg);
                    }
                    if c2 >= 0 {
                        set(plane, r as usize, c2 as usize, fg);
                    }
                }
            }
        }
        // Checkerboard.
        6 => {
            let block = rng.random_range(2..=3);
            let phase = rng.random_range(0..2);
            for r in 0..h {
                for c in 0..w {
                    if ((r / block) + (c / block) + phase) % 2 == 0 {
                        set(plane, r, c, fg);
                    }
                }
            }
        }
        // Diagonal stripes.
        _ => {
            let period = rng.random_range(4..=5);
            let phase = rng.random_range(0..period);
            for r in 0..h {
                for c in 0..w {
                    if (r + c + phase) % period < 2 {
                        set(plane, r, c, fg);
                    }
                }
            }
        }
    }
}

/// Which open-set regime a split models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OpenSetCase {
    /// Disjoint images, same classes.
    Case1,
    /// Disjoint images from disjoint classes.
    Case2,
}

#[derive(Debug, Clone)]
pub struct OpenSetSplit {
    pub case: OpenSetCase,
    pub surrogate_set: Dataset,
    pub target_set: Dataset,
}

/// Split a dataset for open-set experiments.
///
/// Case 1 halves the images of every class; Case 2 halves the class set and
/// remaps each side's labels to a contiguous range (original class ids stay
/// visible through `class_names`).
pub fn split_openset(full: &Dataset, case: OpenSetCase, seed: u64) -> Result<OpenSetSplit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match case {
        OpenSetCase::Case1 => {
            let mut surrogate = (Vec::new(), Vec::new());
            let mut target = (Vec::new(), Vec::new());
            for class in 0..full.num_classes {
                let mut idx: Vec<usize> = (0..full.len())
                    .filter(|&i| full.labels[i] == class)
                    .collect();
                for i in (1..idx.len()).rev() {
                    let j = rng.random_range(0..=i);
                    idx.swap(i, j);
                }
                let half = idx.len() / 2;
                for (pos, &i) in idx.iter().enumerate() {
                    let side = if pos < half {
                        &mut surrogate
                    } else {
                        &mut target
                    };
                    side.0.push(full.image(i).clone());
                    side.1.push(class);
                }
            }
            let mk = |(images, labels): (Vec<NdArray>, Vec<usize>)| {
                Dataset::new(
                    images,
                    labels,
                    full.num_classes,
                    full.height,
                    full.width,
                    full.channels,
                    &full.split,
                )
            };
            Ok(OpenSetSplit {
                case,
                surrogate_set: mk(surrogate)?,
                target_set: mk(target)?,
            })
        }
        OpenSetCase::Case2 => {
            if full.num_classes < 2 || full.num_classes % 2 != 0 {
                return Err(Error::invalid(
                    "case 2 requires an even class count of at least 2",
                ));
            }
            let mut classes: Vec<usize> = (0..full.num_classes).collect();
            for i in (1..classes.len()).rev() {
                let j = rng.random_range(0..=i);
                classes.swap(i, j);
            }
            let half = full.num_classes / 2;
            let build = |chosen: &[usize]| -> Result<Dataset> {
                let mut sorted = chosen.to_vec();
                sorted.sort_unstable();
                let mut images = Vec::new();
                let mut labels = Vec::new();
                for i in 0..full.len() {
                    if let Some(new) = sorted.iter().position(|&c| c == full.labels[i]) {
                        images.push(full.image(i).clone());
                        labels.push(new);
                    }
                }
                let mut ds = Dataset::new(
                    images,
                    labels,
                    half,
                    full.height,
                    full.width,
                    full.channels,
                    &full.split,
                )?;
                ds.class_names = sorted.iter().map(|&c| format!("class{c}")).collect();
                Ok(ds)
            };
            Ok(OpenSetSplit {
                case,
                surrogate_set: build(&classes[..half])?,
                target_set: build(&classes[half..])?,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::checksum_f64;

    fn small_cfg(seed: u64) -> DatasetConfig {
        DatasetConfig {
            num_classes: 8,
            n_per_class: 6,
            height: 16,
            width: 16,
            channels: 1,
            seed,
        }
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let a = gen_synthetic_dataset(&small_cfg(3)).unwrap();
        let b = gen_synthetic_dataset(&small_cfg(3)).unwrap();
        let sum = |d: &Dataset| {
            d.images()
                .iter()
                .map(|img| checksum_f64(img.data()))
                .fold(0u64, |acc, h| acc.rotate_left(9) ^ h)
        };
        assert_eq!(sum(&a), sum(&b));
        let c = gen_synthetic_dataset(&small_cfg(4)).unwrap();
        assert_ne!(sum(&a), sum(&c));
    }

    #[test]
    fn zero_per_class_and_small_images_are_rejected() {
        let mut cfg = small_cfg(0);
        cfg.n_per_class = 0;
        assert!(gen_synthetic_dataset(&cfg).is_err());
        let mut cfg = small_cfg(0);
        cfg.height = 7;
        assert!(gen_synthetic_dataset(&cfg).is_err());
    }

    #[test]
    fn classes_are_balanced_and_in_range() {
        let d = gen_synthetic_dataset(&small_cfg(1)).unwrap();
        for class in 0..8 {
            assert_eq!(d.labels.iter().filter(|&&l| l == class).count(), 6);
        }
        for img in d.images() {
            assert!(img.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn classes_are_learnable_by_cnn_small() {
        // Training-run oracle: a small conv net must separate the pattern
        // families with >= 90% held-out accuracy.
        let train = gen_synthetic_dataset(&DatasetConfig {
            num_classes: 8,
            n_per_class: 60,
            height: 16,
            width: 16,
            channels: 1,
            seed: 100,
        })
        .unwrap();
        let test = gen_synthetic_dataset(&DatasetConfig {
            num_classes: 8,
            n_per_class: 15,
            height: 16,
            width: 16,
            channels: 1,
            seed: 200,
        })
        .unwrap();
        let cfg = crate::classifier::TrainConfig {
            epochs: 12,
            lr: 0.05,
            batch: 16,
            seed: 0,
        };
        let (_, report) =
            crate::classifier::train_classifier(&train, Some(&test), crate::classifier::Arch::CnnSmall, &cfg)
                .unwrap();
        assert!(
            report.test_accuracy.unwrap() >= 0.90,
            "test accuracy {:?}",
            report.test_accuracy
        );
    }

    #[test]
    fn case1_split_is_a_partition_with_shared_classes() {
        let full = gen_synthetic_dataset(&DatasetConfig {
            num_classes: 4,
            n_per_class: 10,
            height: 8,
            width: 8,
            channels: 1,
            seed: 5,
        })
        .unwrap();
        let split = split_openset(&full, OpenSetCase::Case1, 0).unwrap();
        assert_eq!(split.surrogate_set.len(), 20);
        assert_eq!(split.target_set.len(), 20);
        assert_eq!(split.surrogate_set.num_classes, 4);
        assert_eq!(split.target_set.num_classes, 4);
        // No image appears on both sides, and the union is the original set.
        let key = |img: &NdArray| checksum_f64(img.data());
        let mut left: Vec<u64> = split.surrogate_set.images().iter().map(key).collect();
        let right: Vec<u64> = split.target_set.images().iter().map(key).collect();
        for k in &right {
            assert!(!left.contains(k), "image shared across the split");
        }
        left.extend(right);
        left.sort_unstable();
        let mut all: Vec<u64> = full.images().iter().map(key).collect();
        all.sort_unstable();
        assert_eq!(left, all);
    }

    #[test]
    fn case2_split_has_disjoint_classes() {
        let full = gen_synthetic_dataset(&small_cfg(6)).unwrap();
        let split = split_openset(&full, OpenSetCase::Case2, 1).unwrap();
        assert_eq!(split.surrogate_set.num_classes, 4);
        assert_eq!(split.target_set.num_classes, 4);
        let a: Vec<&String> = split.surrogate_set.class_names.iter().collect();
        for name in &split.target_set.class_names {
            assert!(!a.contains(&name), "class {name} on both sides");
        }
        // Remapped labels stay contiguous.
        for &l in &split.surrogate_set.labels {
            assert!(l < 4);
        }
    }

    #[test]
    fn case2_rejects_odd_class_counts() {
        let mut cfg = small_cfg(0);
        cfg.num_classes = 5;
        let full = gen_synthetic_dataset(&cfg).unwrap();
        assert!(split_openset(&full, OpenSetCase::Case2, 0).is_err());
    }
}
