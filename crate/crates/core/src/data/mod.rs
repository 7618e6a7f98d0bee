//! Synthetic blob images, noise synthesis, augmentation and dataset files.

mod manifest;
mod pgm;

use std::f64::consts::{LN_2, PI};

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{invalid, Result};
use crate::rng::{rng_from, Rng};
use crate::tensor::Tensor;

pub use manifest::{
    load_dataset, read_manifest, write_dataset, LoadedSample, ManifestEntry, MANIFEST_NAME,
};
pub use pgm::{decode_pgm, encode_pgm, load_pgm, save_pgm};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlobStyle {
    /// Compact round blobs.
    Soma,
    /// Irregular blobs made of 2–4 overlapping offset lobes.
    Plaque,
}

impl BlobStyle {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "soma" => Some(BlobStyle::Soma),
            "plaque" => Some(BlobStyle::Plaque),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BlobStyle::Soma => "soma",
            BlobStyle::Plaque => "plaque",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageSample {
    pub clean: Tensor,
    /// Clean plus noise, unclamped. Equal to `clean` until noise is added.
    pub noisy: Tensor,
    pub label: Tensor,
    pub seed: u64,
    pub sigma: f64,
}

struct Lobe {
    row: f64,
    col: f64,
    spread: f64,
}

/// Generates `count` images of `size`×`size` pixels with a dark uniform
/// background and Gaussian-profile bright blobs. The label marks pixels where
/// a blob's own contribution exceeds half of that blob's peak.
pub fn gen_blobs(
    count: usize,
    size: usize,
    blob_count_range: (usize, usize),
    style: BlobStyle,
    seed: u64,
) -> Result<Vec<ImageSample>> {
    let (lo, hi) = blob_count_range;
    if lo > hi {
        return Err(invalid!("blob count range ({lo}, {hi}) is empty"));
    }
    if size < 8 {
        return Err(invalid!("image size {size} too small, need at least 8"));
    }
    Ok((0..count)
        .map(|i| {
            gen_one(
                size,
                lo,
                hi,
                style,
                crate::rng::derive_seed(seed, &[i as u64]),
            )
        })
        .collect())
}

fn gen_one(size: usize, lo: usize, hi: usize, style: BlobStyle, seed: u64) -> ImageSample {
    let mut rng = rng_from(seed, &[]);
    let scale = size as f64 / 64.0;
    let background = rng.gen_range(0.05..0.15);
    let blobs = rng.gen_range(lo..=hi);
    let n = size * size;
    let mut clean = vec![background; n];
    let mut label = vec![0.0; n];
    let mut field = vec![0.0; n];
    for _ in 0..blobs {
        let amplitude = rng.gen_range(0.5..0.9);
        let radius = rng.gen_range(3.0..6.0) * scale;
        let margin = (radius * 1.5).min(size as f64 / 2.0 - 1.0);
        let center = (
            rng.gen_range(margin..size as f64 - 1.0 - margin),
            rng.gen_range(margin..size as f64 - 1.0 - margin),
        );
        let lobes = match style {
            BlobStyle::Soma => vec![Lobe {
                row: center.0,
                col: center.1,
                spread: radius,
            }],
            BlobStyle::Plaque => plaque_lobes(&mut rng, center, radius),
        };
        blob_field(&lobes, size, &mut field);
        let peak = field.iter().cloned().fold(0.0, f64::max);
        for i in 0..n {
            clean[i] += amplitude * field[i];
            if peak > 0.0 && field[i] > 0.5 * peak {
                label[i] = 1.0;
            }
        }
    }
    for v in &mut clean {
        *v = v.min(1.0);
    }
    let clean = Tensor::image(size, size, clean).expect("size checked");
    ImageSample {
        noisy: clean.clone(),
        clean,
        label: Tensor::image(size, size, label).expect("size checked"),
        seed,
        sigma: 0.0,
    }
}

fn plaque_lobes(rng: &mut Rng, center: (f64, f64), radius: f64) -> Vec<Lobe> {
    let count = rng.gen_range(2..=4);
    (0..count)
        .map(|_| {
            let angle = rng.gen_range(0.0..2.0 * PI);
            let offset = rng.gen_range(0.3..0.9) * radius;
            Lobe {
                row: center.0 + offset * angle.sin(),
                col: center.1 + offset * angle.cos(),
                spread: radius * rng.gen_range(0.5..0.9),
            }
        })
        .collect()
}

/// Unit-peak Gaussian lobes summed into `field`. A lobe with half-maximum
/// radius `r` has standard deviation r / sqrt(2 ln 2).
fn blob_field(lobes: &[Lobe], size: usize, field: &mut [f64]) {
    field.fill(0.0);
    for lobe in lobes {
        let sd = lobe.spread / (2.0 * LN_2).sqrt();
        let denom = 2.0 * sd * sd;
        for r in 0..size {
            let dr = r as f64 - lobe.row;
            for c in 0..size {
                let dc = c as f64 - lobe.col;
                field[r * size + c] += (-(dr * dr + dc * dc) / denom).exp();
            }
        }
    }
}

/// Standard normal pair via Box–Muller.
fn box_muller(rng: &mut Rng) -> (f64, f64) {
    // 1 - U lies in (0, 1], keeping the logarithm finite
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    let r = (-2.0 * u1.ln()).sqrt();
    let t = 2.0 * PI * u2;
    (r * t.cos(), r * t.sin())
}

/// Fills `noisy` with clean + N(0, sigma²) per pixel.
pub fn add_gaussian_noise(sample: &ImageSample, sigma: f64, seed: u64) -> Result<ImageSample> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(invalid!("noise sigma must be >= 0, got {sigma}"));
    }
    let mut rng = rng_from(seed, &[0x006e_6f69_7365]);
    let mut noisy = sample.clean.clone();
    let data = noisy.data_mut();
    let mut i = 0;
    while i < data.len() {
        let (a, b) = box_muller(&mut rng);
        data[i] += sigma * a;
        if i + 1 < data.len() {
            data[i + 1] += sigma * b;
        }
        i += 2;
    }
    Ok(ImageSample {
        noisy,
        sigma,
        ..sample.clone()
    })
}

/// Pixel index permutation of one dihedral variant: `variant % 4` quarter
/// turns counter-clockwise, preceded by a horizontal flip when `variant >= 4`.
pub fn dihedral_permutation(size: usize, variant: usize) -> Vec<usize> {
    let flip = variant >= 4;
    let turns = variant % 4;
    let mut out = Vec::with_capacity(size * size);
    let last = size - 1;
    for r in 0..size {
        for c in 0..size {
            // source coordinate for output (r, c) after `turns` CCW rotations
            let (mut sr, mut sc) = (r, c);
            for _ in 0..turns {
                (sr, sc) = (sc, last - sr);
            }
            if flip {
                sc = last - sc;
            }
            out.push(sr * size + sc);
        }
    }
    out
}

fn permute(t: &Tensor, perm: &[usize]) -> Tensor {
    let src = t.data();
    let data = perm.iter().map(|&i| src[i]).collect();
    Tensor::new(t.shape().to_vec(), data).expect("same shape")
}

/// The 8 rotation/flip variants of a square sample; variant 0 is the input.
pub fn augment(sample: &ImageSample) -> Result<Vec<ImageSample>> {
    let (h, w) = sample.clean.image_dims()?;
    if h != w {
        return Err(invalid!("augmentation needs a square image, got {h}×{w}"));
    }
    Ok((0..8)
        .map(|v| {
            let perm = dihedral_permutation(h, v);
            ImageSample {
                clean: permute(&sample.clean, &perm),
                noisy: permute(&sample.noisy, &perm),
                label: permute(&sample.label, &perm),
                ..sample.clone()
            }
        })
        .collect())
}

/// Shuffled train/test split of `n` indices; `test_fraction` of them (rounded)
/// go to the test side.
pub fn split_indices(n: usize, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..=1.0).contains(&test_fraction) {
        return Err(invalid!("test fraction {test_fraction} outside [0, 1]"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from(seed, &[0x5017]));
    let n_test = (n as f64 * test_fraction).round() as usize;
    let test = idx.split_off(n - n_test);
    Ok((idx, test))
}

/// Generates `count` noisy samples in one call, deriving the noise seed from
/// the sample index.
pub fn synthetic_set(
    count: usize,
    size: usize,
    style: BlobStyle,
    sigma: f64,
    seed: u64,
) -> Result<Vec<ImageSample>> {
    let clean = gen_blobs(count, size, (1, 4), style, seed)?;
    clean
        .iter()
        .enumerate()
        .map(|(i, s)| {
            add_gaussian_noise(s, sigma, crate::rng::derive_seed(seed, &[0xA0, i as u64]))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blank_images_for_zero_blobs() {
        let set = gen_blobs(3, 32, (0, 0), BlobStyle::Plaque, 1).unwrap();
        for s in &set {
            assert!(s.label.data().iter().all(|&v| v == 0.0));
            let bg = s.clean.data()[0];
            assert!((0.05..0.15).contains(&bg));
            assert!(s.clean.data().iter().all(|&v| v == bg));
        }
        assert!(gen_blobs(1, 32, (3, 2), BlobStyle::Soma, 0).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let a = gen_blobs(4, 32, (1, 3), BlobStyle::Plaque, 9).unwrap();
        let b = gen_blobs(4, 32, (1, 3), BlobStyle::Plaque, 9).unwrap();
        assert_eq!(a, b);
        let c = gen_blobs(4, 32, (1, 3), BlobStyle::Plaque, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn noise_statistics() {
        let s = &gen_blobs(1, 64, (1, 2), BlobStyle::Soma, 2).unwrap()[0];
        assert_eq!(add_gaussian_noise(s, 0.0, 5).unwrap().noisy, s.clean);
        let n = add_gaussian_noise(s, 0.2, 5).unwrap();
        assert_eq!(n, add_gaussian_noise(s, 0.2, 5).unwrap());
        let diff: Vec<f64> = n
            .noisy
            .data()
            .iter()
            .zip(s.clean.data())
            .map(|(a, b)| a - b)
            .collect();
        let mean = diff.iter().sum::<f64>() / diff.len() as f64;
        let sd = (diff.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / diff.len() as f64).sqrt();
        assert!((sd / 0.2 - 1.0).abs() < 0.1, "sd {sd}");
        assert!(add_gaussian_noise(s, -1.0, 0).is_err());
    }

    #[test]
    fn dihedral_group_properties() {
        let size = 5;
        let id: Vec<usize> = (0..size * size).collect();
        assert_eq!(dihedral_permutation(size, 0), id);
        let rot = dihedral_permutation(size, 1);
        let mut p = id.clone();
        for _ in 0..4 {
            p = rot.iter().map(|&i| p[i]).collect();
        }
        assert_eq!(p, id);
        let mut perms: Vec<Vec<usize>> = (0..8).map(|v| dihedral_permutation(size, v)).collect();
        perms.sort();
        perms.dedup();
        assert_eq!(perms.len(), 8);
    }

    #[test]
    fn augment_rejects_non_square_and_keeps_identity() {
        let s = &gen_blobs(1, 16, (1, 1), BlobStyle::Soma, 3).unwrap()[0];
        let v = augment(s).unwrap();
        assert_eq!(v.len(), 8);
        assert_eq!(&v[0], s);
        let mut bad = s.clone();
        bad.clean = Tensor::image(8, 32, vec![0.0; 256]).unwrap();
        assert!(augment(&bad).is_err());
    }

    #[test]
    fn split_is_disjoint_and_exhaustive() {
        let (train, test) = split_indices(40, 0.2, 7).unwrap();
        assert_eq!(test.len(), 8);
        let mut all: Vec<usize> = train.iter().chain(&test).cloned().collect();
        all.sort();
        assert_eq!(all, (0..40).collect::<Vec<_>>());
    }
}
