//! Seeded synthetic scenes: one contiguous region per class, each labeled
//! pixel carrying its class signature plus Gaussian noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::HsiCube;
use crate::error::{invalid, Result};

/// Shape of the smooth spectra generated for each class when explicit
/// signatures are not supplied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignatureParams {
    /// Baseline reflectance range.
    pub base: (f64, f64),
    /// Gaussian features per signature.
    pub features: usize,
    /// Feature amplitude range (sign chosen at random).
    pub amplitude: (f64, f64),
    /// Feature width as a fraction of the band count.
    pub width: (f64, f64),
}

impl Default for SignatureParams {
    fn default() -> Self {
        SignatureParams { base: (0.2, 0.6), features: 3, amplitude: (0.1, 0.4), width: (0.05, 0.2) }
    }
}

/// How class regions tile the scene.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// Nearest-seed cells around one random seed pixel per class.
    #[default]
    Voronoi,
    /// Equal-height horizontal bands, class 1 on top.
    Stripes,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub noise: f64,
    pub seed: u64,
    #[serde(default)]
    pub layout: Layout,
    /// Fraction of pixels that keep their ground-truth label; the rest are
    /// marked unlabeled (their spectra are unchanged).
    #[serde(default = "full_coverage")]
    pub labeled_fraction: f64,
    #[serde(default)]
    pub signature: SignatureParams,
    /// Optional explicit per-class spectra; overrides `signature`.
    #[serde(default)]
    pub signatures: Option<Vec<Vec<f32>>>,
}

fn full_coverage() -> f64 {
    1.0
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            classes: 3,
            height: 80,
            width: 80,
            bands: 32,
            noise: 0.0,
            seed: 7,
            layout: Layout::default(),
            labeled_fraction: 0.08,
            signature: SignatureParams::default(),
            signatures: None,
        }
    }
}

/// A generated scene together with the signatures used to draw it.
#[derive(Clone, Debug)]
pub struct SynthScene {
    pub cube: HsiCube,
    pub signatures: Vec<Vec<f32>>,
}

fn make_signature(rng: &mut ChaCha8Rng, bands: usize, p: &SignatureParams) -> Vec<f32> {
    let base = rng.gen_range(p.base.0..=p.base.1);
    let slope = rng.gen_range(-0.1..=0.1);
    let feats: Vec<(f64, f64, f64)> = (0..p.features)
        .map(|_| {
            let center = rng.gen_range(0.0..bands as f64);
            let width = rng.gen_range(p.width.0..=p.width.1) * bands as f64;
            let amp = rng.gen_range(p.amplitude.0..=p.amplitude.1) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            (center, width.max(0.5), amp)
        })
        .collect();
    (0..bands)
        .map(|b| {
            let t = b as f64;
            let mut v = base + slope * t / bands as f64;
            for &(c, w, a) in &feats {
                v += a * (-(t - c).powi(2) / (2.0 * w * w)).exp();
            }
            v as f32
        })
        .collect()
}

/// One distinct seed pixel per class; every pixel joins its nearest seed,
/// which keeps each class region a single connected cell.
fn voronoi_labels(rng: &mut ChaCha8Rng, height: usize, width: usize, classes: usize) -> Vec<u16> {
    let mut seeds: Vec<(usize, usize)> = Vec::with_capacity(classes);
    while seeds.len() < classes {
        let p = (rng.gen_range(0..height), rng.gen_range(0..width));
        if !seeds.contains(&p) {
            seeds.push(p);
        }
    }
    let mut labels = vec![0u16; height * width];
    for r in 0..height {
        for c in 0..width {
            let (best, _) = seeds
                .iter()
                .enumerate()
                .map(|(k, &(sr, sc))| {
                    let dr = r as i64 - sr as i64;
                    let dc = c as i64 - sc as i64;
                    (k, dr * dr + dc * dc)
                })
                .min_by_key(|&(k, d)| (d, k))
                .expect("at least two seeds");
            labels[r * width + c] = best as u16 + 1;
        }
    }
    labels
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<SynthScene> {
    let SynthSpec { classes, height, width, bands, noise, seed, .. } = *spec;
    if classes < 2 {
        return Err(invalid!("synthetic scene needs at least 2 classes, got {classes}"));
    }
    if height == 0 || width == 0 || bands == 0 {
        return Err(invalid!("extents must be positive, got {height}x{width}x{bands}"));
    }
    if height * width < classes {
        return Err(invalid!("{height}x{width} scene cannot hold {classes} regions"));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(invalid!("noise level must be finite and nonnegative, got {noise}"));
    }
    let labeled_fraction = spec.labeled_fraction;
    if !(labeled_fraction > 0.0 && labeled_fraction <= 1.0) {
        return Err(invalid!("labeled fraction must lie in (0, 1], got {labeled_fraction}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let signatures = match &spec.signatures {
        Some(s) => {
            if s.len() != classes || s.iter().any(|v| v.len() != bands) {
                return Err(invalid!("explicit signatures must be {classes} spectra of {bands} bands"));
            }
            s.clone()
        }
        None => (0..classes).map(|_| make_signature(&mut rng, bands, &spec.signature)).collect(),
    };

    let labels = match spec.layout {
        Layout::Voronoi => voronoi_labels(&mut rng, height, width, classes),
        Layout::Stripes => (0..height * width)
            .map(|i| ((i / width) * classes / height) as u16 + 1)
            .collect(),
    };

    let normal = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).expect("valid std");
    let mut reflectance = Vec::with_capacity(height * width * bands);
    for &l in &labels {
        let sig = &signatures[l as usize - 1];
        for &s in sig {
            let v = if noise > 0.0 { (s as f64 + normal.sample(&mut rng)) as f32 } else { s };
            reflectance.push(v);
        }
    }
    let mut labels = labels;
    if labeled_fraction < 1.0 {
        for l in labels.iter_mut() {
            if !rng.gen_bool(labeled_fraction) {
                *l = 0;
            }
        }
    }
    let names = (1..=classes).map(|k| format!("class_{k}")).collect();
    let cube = HsiCube::new(height, width, bands, reflectance, labels, names)?;
    Ok(SynthScene { cube, signatures })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_pixels_equal_their_signature() {
        let spec = SynthSpec { classes: 3, height: 12, width: 9, bands: 10, labeled_fraction: 1.0, ..SynthSpec::default() };
        let scene = generate_synthetic(&spec).unwrap();
        let cube = &scene.cube;
        for r in 0..cube.height() {
            for c in 0..cube.width() {
                let l = cube.label(r, c) as usize;
                assert_eq!(cube.spectrum(r, c), scene.signatures[l - 1].as_slice());
            }
        }
        assert!(cube.class_counts()[1..].iter().all(|&n| n > 0));
    }

    #[test]
    fn same_seed_same_cube() {
        let spec = SynthSpec { noise: 0.05, ..SynthSpec::default() };
        let a = generate_synthetic(&spec).unwrap().cube;
        let b = generate_synthetic(&spec).unwrap().cube;
        assert_eq!(a, b);
        let c = generate_synthetic(&SynthSpec { seed: 8, ..spec }).unwrap().cube;
        assert_ne!(a, c);
    }

    #[test]
    fn partial_coverage_keeps_spectra() {
        let full = SynthSpec { labeled_fraction: 1.0, ..SynthSpec::default() };
        let a = generate_synthetic(&full).unwrap().cube;
        let b = generate_synthetic(&SynthSpec { labeled_fraction: 0.1, ..full }).unwrap().cube;
        assert_eq!(a.reflectance(), b.reflectance());
        let labeled = b.labels().iter().filter(|&&l| l > 0).count();
        assert!(labeled > 400 && labeled < 900, "{labeled}");
        for (x, y) in a.labels().iter().zip(b.labels()) {
            assert!(*y == 0 || x == y);
        }
    }

    #[test]
    fn one_class_rejected() {
        assert!(generate_synthetic(&SynthSpec { classes: 1, ..SynthSpec::default() }).is_err());
    }

    #[test]
    fn regions_are_connected() {
        let spec = SynthSpec { classes: 5, height: 20, width: 20, labeled_fraction: 1.0, ..SynthSpec::default() };
        let cube = generate_synthetic(&spec).unwrap().cube;
        for k in 1..=5u16 {
            let cells: Vec<(usize, usize)> = (0..20)
                .flat_map(|r| (0..20).map(move |c| (r, c)))
                .filter(|&(r, c)| cube.label(r, c) == k)
                .collect();
            let mut seen = vec![false; 400];
            let mut stack = vec![cells[0]];
            seen[cells[0].0 * 20 + cells[0].1] = true;
            let mut reached = 0;
            while let Some((r, c)) = stack.pop() {
                reached += 1;
                let nbrs = [(r.wrapping_sub(1), c), (r + 1, c), (r, c.wrapping_sub(1)), (r, c + 1)];
                for (nr, nc) in nbrs {
                    if nr < 20 && nc < 20 && !seen[nr * 20 + nc] && cube.label(nr, nc) == k {
                        seen[nr * 20 + nc] = true;
                        stack.push((nr, nc));
                    }
                }
            }
            assert_eq!(reached, cells.len(), "class {k} region is split");
        }
    }
}
