//! Dataset ingestion: decoding, grayscale conversion, resizing, random
//! patches, train/validation splits and a synthetic blob generator.

mod image;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use image::{
    decode_image, decode_pnm, encode_png, encode_pnm, load_image, load_probability_map, save_image,
    save_probability_map,
};

use crate::error::{Error, Result};
use crate::ops::bilinear_resize;
use crate::rng::{self, Stream};
use crate::tensor::{Shape4, Tensor4};

/// ITU-R BT.601 luma weights.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// An image with its binary mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    /// `(1, h, w, c)`, values in `[0, 1]`.
    pub image: Tensor4,
    /// `(1, h, w, 1)`, values in `{0, 1}`.
    pub mask: Tensor4,
    pub source_id: String,
}

impl SamplePair {
    pub fn new(image: Tensor4, mask: Tensor4, source_id: impl Into<String>) -> Result<Self> {
        let source_id = source_id.into();
        let (si, sm) = (image.shape(), mask.shape());
        if si.n != 1 || sm != si.with_channels(1) {
            return Err(Error::Shape(format!(
                "{source_id}: image {si} and mask {sm} do not describe one aligned sample"
            )));
        }
        if let Some(v) = image.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Validation(format!("{source_id}: image value {v} outside [0, 1]")));
        }
        if mask.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Validation(format!("{source_id}: mask is not binary")));
        }
        Ok(Self { image, mask, source_id })
    }
}

/// `y = 0.299 r + 0.587 g + 0.114 b` per pixel.
pub fn to_grayscale(rgb: &Tensor4) -> Result<Tensor4> {
    let s = rgb.shape();
    if s.c != 3 {
        return Err(Error::Shape(format!("grayscale conversion needs 3 channels, got {s}")));
    }
    let data = rgb
        .data()
        .chunks_exact(3)
        .map(|p| LUMA[0] * p[0] + LUMA[1] * p[1] + LUMA[2] * p[2])
        .collect();
    Tensor4::from_vec(s.with_channels(1), data)
}

/// Thresholds at 0.5 (inclusive) into `{0, 1}`.
pub fn binarize_mask(t: &Tensor4) -> Tensor4 {
    t.map(|v| if v >= 0.5 { 1.0 } else { 0.0 })
}

/// A crop drawn by [`extract_random_patches`].
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub pair: SamplePair,
    pub source: usize,
    /// Top-left `(y, x)`.
    pub corner: (usize, usize),
}

/// `(source, y, x)` for each draw: a uniform source, then a uniform corner
/// with the patch fully inside. Draw `i` uses its own stream, so the list
/// is independent of evaluation order.
pub fn sample_patch_corners(
    sizes: &[(usize, usize)],
    patch: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<(usize, usize, usize)>> {
    if sizes.is_empty() || patch == 0 {
        return Err(Error::Config("patch extraction needs sources and a positive patch size".into()));
    }
    if let Some(i) = sizes.iter().position(|&(h, w)| h < patch || w < patch) {
        return Err(Error::Config(format!(
            "source {i} ({}x{}) is smaller than the {patch}x{patch} patch",
            sizes[i].0, sizes[i].1
        )));
    }
    (0..count)
        .map(|i| {
            let mut r = rng::stream(seed, Stream::Patches, i as u64);
            let src = r.gen_range(0..sizes.len());
            let (h, w) = sizes[src];
            Ok((src, r.gen_range(0..=h - patch), r.gen_range(0..=w - patch)))
        })
        .collect()
}

pub fn extract_random_patches(pairs: &[SamplePair], patch: usize, count: usize, seed: u64) -> Result<Vec<Patch>> {
    for p in pairs {
        let s = p.image.shape();
        if s.h < patch || s.w < patch {
            return Err(Error::Config(format!(
                "image '{}' ({}x{}) is smaller than the {patch}x{patch} patch",
                p.source_id, s.h, s.w
            )));
        }
    }
    let sizes: Vec<_> = pairs.iter().map(|p| (p.image.shape().h, p.image.shape().w)).collect();
    sample_patch_corners(&sizes, patch, count, seed)?
        .into_iter()
        .map(|(src, y, x)| {
            let p = &pairs[src];
            Ok(Patch {
                pair: SamplePair {
                    image: p.image.crop(y, x, patch, patch)?,
                    mask: p.mask.crop(y, x, patch, patch)?,
                    source_id: format!("{}@{y},{x}", p.source_id),
                },
                source: src,
                corner: (y, x),
            })
        })
        .collect()
}

/// Seeded shuffle, then the last `round(val_fraction · N)` items become validation.
pub fn split_train_val<T>(items: Vec<T>, val_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if items.len() < 2 {
        return Err(Error::Config(format!("cannot split {} item(s)", items.len())));
    }
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Config(format!("val_fraction {val_fraction} outside (0, 1)")));
    }
    let n_val = (val_fraction * items.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut rng::stream(seed, Stream::Split, 0));
    let mut slots: Vec<Option<T>> = items.into_iter().map(Some).collect();
    let mut shuffled: Vec<T> = order.iter().map(|&i| slots[i].take().unwrap()).collect();
    let val = shuffled.split_off(shuffled.len() - n_val);
    Ok((shuffled, val))
}

/// Bilinear resize of images and masks; masks are re-binarized at 0.5.
pub fn resize_dataset(pairs: &[SamplePair], target: (usize, usize)) -> Result<Vec<SamplePair>> {
    let (h, w) = target;
    if h == 0 || w == 0 {
        return Err(Error::Config(format!("resize target {h}x{w} must be positive")));
    }
    pairs
        .iter()
        .map(|p| {
            Ok(SamplePair {
                image: bilinear_resize(&p.image, h, w)?,
                mask: binarize_mask(&bilinear_resize(&p.mask, h, w)?),
                source_id: p.source_id.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StructureScale {
    /// Many radius 2..4 ellipses.
    Small,
    /// One ellipse of radius about `size / 4`.
    Large,
}

impl std::str::FromStr for StructureScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small" => Ok(Self::Small),
            "large" => Ok(Self::Large),
            other => Err(Error::Config(format!("structure scale must be small or large, got '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    angle: f64,
}

impl Ellipse {
    fn contains(&self, y: f64, x: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (dy, dx) = (y - self.cy, x - self.cx);
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.rx).powi(2) + (v / self.ry).powi(2) <= 1.0
    }
}

const BACKGROUND: f64 = 0.25;
const FOREGROUND: f64 = 0.75;
const NOISE_STD: f64 = 0.05;

fn synthetic_sample(index: usize, size: usize, scale: StructureScale, seed: u64) -> SamplePair {
    let mut r = rng::stream(seed, Stream::Synthetic, index as u64);
    let s = size as f64;
    let blobs: Vec<Ellipse> = match scale {
        StructureScale::Small => {
            let count = (size * size / 160).max(1);
            (0..count)
                .map(|_| Ellipse {
                    cy: r.gen_range(0.0..s),
                    cx: r.gen_range(0.0..s),
                    ry: r.gen_range(2.0..=4.0),
                    rx: r.gen_range(2.0..=4.0),
                    angle: r.gen_range(0.0..std::f64::consts::PI),
                })
                .collect()
        }
        StructureScale::Large => {
            let base = (s / 4.0).ceil();
            let (ry, rx) = (base * r.gen_range(0.8..=1.2), base * r.gen_range(0.8..=1.2));
            let margin = ry.max(rx);
            vec![Ellipse {
                cy: r.gen_range(margin..=s - margin),
                cx: r.gen_range(margin..=s - margin),
                ry,
                rx,
                angle: r.gen_range(0.0..std::f64::consts::PI),
            }]
        }
    };
    let shape = Shape4::new(1, size, size, 1);
    let mask = Tensor4::from_fn(shape, |_, y, x, _| {
        let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
        if blobs.iter().any(|b| b.contains(py, px)) {
            1.0
        } else {
            0.0
        }
    });
    let noise = Normal::new(0.0, NOISE_STD).expect("finite std");
    let values = mask
        .data()
        .iter()
        .map(|&m| {
            let base = if m == 1.0 { FOREGROUND } else { BACKGROUND };
            (base + noise.sample(&mut r)).clamp(0.0, 1.0)
        })
        .collect();
    let image = Tensor4::from_vec(shape, values).expect("mask-sized buffer");
    SamplePair {
        image,
        mask,
        source_id: format!("synthetic_{index:05}"),
    }
}

/// Noisy gray images with bright elliptical blobs; the mask is the blob support
/// at pixel centers.
pub fn generate_synthetic(count: usize, size: usize, scale: StructureScale, seed: u64) -> Result<Vec<SamplePair>> {
    if size == 0 || size % 8 != 0 {
        return Err(Error::Config(format!("synthetic size {size} must be a positive multiple of 8")));
    }
    Ok((0..count).map(|i| synthetic_sample(i, size, scale, seed)).collect())
}

/// Files directly inside `dir`, keyed by stem.
pub fn file_stems(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), path);
            }
        }
    }
    Ok(out)
}

/// Loads `<root>/images/*` and `<root>/masks/*` matched by file stem.
pub fn load_directory(root: &Path) -> Result<Vec<SamplePair>> {
    let images = file_stems(&root.join("images"))?;
    let masks = file_stems(&root.join("masks"))?;
    let unmatched: Vec<&str> = images
        .keys()
        .filter(|k| !masks.contains_key(*k))
        .chain(masks.keys().filter(|k| !images.contains_key(*k)))
        .map(String::as_str)
        .collect();
    if !unmatched.is_empty() {
        return Err(Error::Validation(format!(
            "images and masks without a partner: {}",
            unmatched.join(", ")
        )));
    }
    images
        .iter()
        .map(|(stem, path)| {
            let image = load_image(path)?;
            let mut mask = load_image(&masks[stem])?;
            if mask.shape().c == 3 {
                mask = to_grayscale(&mask)?;
            }
            SamplePair::new(image, binarize_mask(&mask), stem.clone())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Patching {
    pub patch_size: usize,
    pub total_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSource {
    pub count: usize,
    pub size: usize,
    pub scale: StructureScale,
}

/// How a dataset is read and preprocessed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub name: String,
    /// `(h, w, c)` the network sees after preprocessing.
    pub input_size: [usize; 3],
    pub grayscale: bool,
    pub val_fraction: f64,
    /// Directory with `images/` and `masks/`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resize: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patching: Option<Patching>,
    /// Explicit validation stems; overrides `val_fraction`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_stems: Option<Vec<String>>,
}

impl DatasetSpec {
    pub fn synthetic(count: usize, size: usize, scale: StructureScale) -> Self {
        Self {
            name: format!("synthetic-{}", if scale == StructureScale::Small { "small" } else { "large" }),
            input_size: [size, size, 1],
            grayscale: false,
            val_fraction: 0.2,
            root: None,
            synthetic: Some(SyntheticSource { count, size, scale }),
            resize: None,
            patching: None,
            val_stems: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!("val_fraction {} outside (0, 1)", self.val_fraction)));
        }
        match (&self.root, &self.synthetic) {
            (Some(_), Some(_)) | (None, None) => {
                return Err(Error::Config("dataset needs exactly one of root or synthetic".into()))
            }
            (Some(root), None) if !root.is_dir() => {
                return Err(Error::Config(format!("dataset root {} is not a directory", root.display())))
            }
            _ => {}
        }
        if self.patching.is_some() && self.val_stems.is_some() {
            return Err(Error::Config("explicit validation stems cannot be combined with patching".into()));
        }
        Ok(())
    }

    /// Reads every sample, with grayscale conversion and resizing applied.
    pub fn load(&self, seed: u64) -> Result<Vec<SamplePair>> {
        self.validate()?;
        let mut pairs = match (&self.root, &self.synthetic) {
            (Some(root), _) => load_directory(root)?,
            (_, Some(s)) => generate_synthetic(s.count, s.size, s.scale, seed)?,
            _ => unreachable!("validated"),
        };
        if self.grayscale {
            for p in &mut pairs {
                if p.image.shape().c == 3 {
                    p.image = to_grayscale(&p.image)?;
                }
            }
        }
        if let Some([h, w]) = self.resize {
            pairs = resize_dataset(&pairs, (h, w))?;
        }
        Ok(pairs)
    }

    /// Loads, patches (if configured) and splits into `(train, val)`.
    pub fn prepare(&self, seed: u64) -> Result<(Vec<SamplePair>, Vec<SamplePair>)> {
        let pairs = self.load(seed)?;
        let (train, val) = if let Some(stems) = &self.val_stems {
            let (val, train): (Vec<_>, Vec<_>) = pairs.into_iter().partition(|p| stems.contains(&p.source_id));
            (train, val)
        } else if let Some(p) = self.patching {
            let patches = extract_random_patches(&pairs, p.patch_size, p.total_count, seed)?;
            split_train_val(patches.into_iter().map(|p| p.pair).collect(), self.val_fraction, seed)?
        } else {
            split_train_val(pairs, self.val_fraction, seed)?
        };
        let [h, w, c] = self.input_size;
        let expected = Shape4::new(1, h, w, c);
        if let Some(p) = train.iter().chain(&val).find(|p| p.image.shape() != expected) {
            return Err(Error::Config(format!(
                "sample '{}' has shape {} but the dataset declares {expected}",
                p.source_id,
                p.image.shape()
            )));
        }
        Ok((train, val))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn luma_of_primaries() {
        let t = Tensor4::from_vec(Shape4::new(1, 1, 3, 3), vec![1., 1., 1., 1., 0., 0., 0.3, 0.3, 0.3]).unwrap();
        let g = to_grayscale(&t).unwrap();
        assert!((g.data()[0] - 1.0).abs() < 1e-15);
        assert_eq!(g.data()[1], 0.299);
        assert!((g.data()[2] - 0.3).abs() < 1e-15);
        assert!(to_grayscale(&g).is_err());
    }

    #[test]
    fn split_sizes() {
        let (t, v) = split_train_val((0..200).collect(), 0.2, 1).unwrap();
        assert_eq!((t.len(), v.len()), (160, 40));
        let (t, v) = split_train_val(vec![1, 2], 0.5, 1).unwrap();
        assert_eq!((t.len(), v.len()), (1, 1));
        assert!(split_train_val(vec![1], 0.5, 1).is_err());
    }

    #[test]
    fn patch_corners_in_bounds() {
        let corners = sample_patch_corners(&[(584, 565)], 64, 10, 3).unwrap();
        assert_eq!(corners.len(), 10);
        assert!(corners.iter().all(|&(_, y, x)| y <= 520 && x <= 501));
        assert_eq!(corners, sample_patch_corners(&[(584, 565)], 64, 10, 3).unwrap());
    }

    #[test]
    fn small_image_named_in_error() {
        let pair = generate_synthetic(1, 16, StructureScale::Small, 0).unwrap();
        let err = extract_random_patches(&pair, 32, 1, 0).unwrap_err();
        assert!(err.to_string().contains("synthetic_00000"));
    }

    #[test]
    fn large_blob_covers_expected_fraction() {
        for p in generate_synthetic(20, 64, StructureScale::Large, 5).unwrap() {
            let frac = p.mask.sum() / p.mask.data().len() as f64;
            assert!((0.1..=0.4).contains(&frac), "{frac}");
            SamplePair::new(p.image, p.mask, p.source_id).unwrap();
        }
    }
}
