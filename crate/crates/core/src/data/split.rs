use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::patches::{window_origin, Center, PatchSet};
use crate::error::{invalid, Error, Result};

/// Disjoint train/validation/test partition of patch centers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub ratios: [f64; 3],
    pub strict_spatial: bool,
    pub train: Vec<Center>,
    pub val: Vec<Center>,
    pub test: Vec<Center>,
    pub discarded: usize,
    #[serde(skip)]
    pub warnings: Vec<String>,
}

impl SplitAssignment {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string(self).map_err(|e| Error::json(path, e))?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}

/// Per-class part sizes for `n` centers. The shuffled list is cut at the
/// rounded-down cumulative boundaries `n * r0` and `n * (r0 + r1)` (train
/// kept at one or more), so every part stays within one of its share.
pub fn part_sizes(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    if n < 3 {
        // fewer centers than parts: train first, then validation
        return [n.min(1), n.saturating_sub(1).min(1), 0];
    }
    let cut = |r: f64| ((r * n as f64 + 1e-9).floor() as usize).min(n);
    let train = cut(ratios[0]).max(1);
    let second = cut(ratios[0] + ratios[1]).max(train);
    [train, second - train, n - second]
}

/// Shuffles each class's centers with a seeded generator and cuts them at
/// the ratio boundaries. With `strict_spatial`, validation and test centers
/// whose window shares a pixel with any training window are dropped.
pub fn disjoint_split(patches: &PatchSet, ratios: [f64; 3], seed: u64, strict_spatial: bool) -> Result<SplitAssignment> {
    if ratios.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
        return Err(invalid!("split ratios must be positive, got {ratios:?}"));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(invalid!("split ratios must sum to 1, got {sum}"));
    }

    let mut by_class: BTreeMap<u16, Vec<Center>> = BTreeMap::new();
    for (&c, &l) in patches.centers.iter().zip(&patches.center_labels) {
        by_class.entry(l).or_default().push(c);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut warnings = Vec::new();
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (class, mut centers) in by_class {
        centers.shuffle(&mut rng);
        if centers.len() < 3 {
            warnings.push(format!(
                "class {class} has only {} centers; assigned to train first",
                centers.len()
            ));
        }
        let [a, b, _] = part_sizes(centers.len(), ratios);
        train.extend_from_slice(&centers[..a]);
        val.extend_from_slice(&centers[a..a + b]);
        test.extend_from_slice(&centers[a + b..]);
    }

    let mut discarded = 0;
    if strict_spatial {
        let cover = TrainCoverage::new(patches.height, patches.width, patches.patch_size, &train);
        let before = val.len() + test.len();
        val.retain(|&c| !cover.intersects(c));
        test.retain(|&c| !cover.intersects(c));
        discarded = before - val.len() - test.len();
    }
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(SplitAssignment { seed, ratios, strict_spatial, train, val, test, discarded, warnings })
}

/// Pixels covered by any training window, with a summed-area table for
/// constant-time window queries.
struct TrainCoverage {
    width: usize,
    side: usize,
    sums: Vec<u32>,
}

impl TrainCoverage {
    fn new(height: usize, width: usize, side: usize, train: &[Center]) -> Self {
        let mut covered = vec![false; height * width];
        for &c in train {
            let (r0, c0) = window_origin(c, side);
            for r in r0..r0 + side {
                covered[r * width + c0..r * width + c0 + side].iter_mut().for_each(|v| *v = true);
            }
        }
        let w1 = width + 1;
        let mut sums = vec![0u32; (height + 1) * w1];
        for r in 0..height {
            for c in 0..width {
                sums[(r + 1) * w1 + c + 1] =
                    covered[r * width + c] as u32 + sums[r * w1 + c + 1] + sums[(r + 1) * w1 + c] - sums[r * w1 + c];
            }
        }
        TrainCoverage { width, side, sums }
    }

    fn intersects(&self, center: Center) -> bool {
        let (r0, c0) = window_origin(center, self.side);
        let (r1, c1) = (r0 + self.side, c0 + self.side);
        let w1 = self.width + 1;
        let s = self.sums[r1 * w1 + c1] + self.sums[r0 * w1 + c0] - self.sums[r0 * w1 + c1] - self.sums[r1 * w1 + c0];
        s > 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn fake_patches(per_class: &[usize], side: usize) -> PatchSet {
        let total: usize = per_class.iter().sum();
        let width = 200;
        let mut centers = Vec::new();
        let mut labels = Vec::new();
        for (k, &n) in per_class.iter().enumerate() {
            for _ in 0..n {
                let i = centers.len();
                centers.push((side / 2 + i / 150, side / 2 + i % 150));
                labels.push(k as u16 + 1);
            }
        }
        PatchSet {
            patch_size: side,
            b_star: 1,
            height: total / 150 + side + 1,
            width,
            num_classes: per_class.len(),
            patches: vec![Tensor::zeros(vec![1]).unwrap(); total],
            centers,
            center_labels: labels,
            total_positions: total,
        }
    }

    #[test]
    fn five_five_ninety() {
        let p = fake_patches(&[100, 100, 100], 1);
        let s = disjoint_split(&p, [0.05, 0.05, 0.90], 1, false).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (15, 15, 270));
        assert_eq!(part_sizes(100, [0.05, 0.05, 0.9]), [5, 5, 90]);
    }

    #[test]
    fn every_part_within_one_of_its_share() {
        for n in 3..400 {
            for ratios in [[0.05, 0.05, 0.9], [0.33, 0.33, 0.34], [0.6, 0.3, 0.1], [0.01, 0.01, 0.98]] {
                let sizes = part_sizes(n, ratios);
                assert_eq!(sizes.iter().sum::<usize>(), n);
                for (got, r) in sizes.iter().zip(ratios) {
                    assert!((*got as f64 - r * n as f64).abs() < 1.0, "{n} {ratios:?} -> {sizes:?}");
                }
            }
        }
    }

    #[test]
    fn seeds_change_membership_not_counts() {
        let p = fake_patches(&[40, 60], 1);
        let a = disjoint_split(&p, [0.2, 0.2, 0.6], 5, false).unwrap();
        let b = disjoint_split(&p, [0.2, 0.2, 0.6], 5, false).unwrap();
        let c = disjoint_split(&p, [0.2, 0.2, 0.6], 6, false).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.train, c.train);
        assert_eq!(a.train.len(), c.train.len());
        assert_eq!(a.test.len(), c.test.len());
    }

    #[test]
    fn tiny_class_goes_to_train_with_warning() {
        let p = fake_patches(&[1, 2, 50], 1);
        let s = disjoint_split(&p, [0.1, 0.1, 0.8], 0, false).unwrap();
        assert_eq!(s.warnings.len(), 2);
        assert!(s.train.contains(&p.centers[0]));
    }

    #[test]
    fn bad_ratios_rejected() {
        let p = fake_patches(&[10], 1);
        assert!(disjoint_split(&p, [0.5, 0.5, 0.5], 0, false).is_err());
        assert!(disjoint_split(&p, [0.0, 0.5, 0.5], 0, false).is_err());
    }

    #[test]
    fn json_shape() {
        let p = fake_patches(&[5], 1);
        let s = disjoint_split(&p, [0.2, 0.2, 0.6], 3, false).unwrap();
        let v: serde_json::Value = serde_json::to_value(&s).unwrap();
        assert!(v["train"][0].is_array());
        assert_eq!(v["discarded"], 0);
        assert_eq!(v["seed"], 3);
    }
}
