//! Folder-per-class corpora: ingest, class balancing, stratified splits,
//! batch loading and a synthetic stand-in corpus.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageReader, Luma};
use log::warn;
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    #[default]
    Unassigned,
    Train,
    Validation,
    Test,
}

impl Split {
    /// Stable index used to derive per-split random streams.
    pub fn stream_id(self) -> u64 {
        match self {
            Split::Unassigned => 3,
            Split::Train => 0,
            Split::Validation => 1,
            Split::Test => 2,
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub path: PathBuf,
    pub label: String,
    #[serde(default)]
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub class_names: Vec<String>,
    pub records: Vec<Record>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestSummary {
    pub accepted: usize,
    pub skipped: Vec<PathBuf>,
}

impl DatasetManifest {
    pub fn new(class_names: Vec<String>, records: Vec<Record>) -> Result<Self> {
        let m = Self { class_names, records };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(&r.path) {
                return Err(Error::Dataset(format!("duplicate path {}", r.path.display())));
            }
            if !self.class_names.contains(&r.label) {
                return Err(Error::Dataset(format!(
                    "record {} has unknown class {:?}",
                    r.path.display(),
                    r.label
                )));
            }
        }
        Ok(())
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == label)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_names.len()];
        for r in &self.records {
            if let Some(i) = self.class_index(&r.label) {
                counts[i] += 1;
            }
        }
        counts
    }

    /// Per-class counts within one split.
    pub fn split_counts(&self, split: Split) -> Vec<usize> {
        let mut counts = vec![0; self.class_names.len()];
        for r in self.records.iter().filter(|r| r.split == split) {
            if let Some(i) = self.class_index(&r.label) {
                counts[i] += 1;
            }
        }
        counts
    }

    pub fn records_in(&self, split: Split) -> Vec<&Record> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }

    fn by_class(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.class_names.len()];
        for (i, r) in self.records.iter().enumerate() {
            if let Some(c) = self.class_index(&r.label) {
                groups[c].push(i);
            }
        }
        groups
    }
}

fn has_image_extension(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn readable(path: &Path) -> bool {
    ImageReader::open(path)
        .ok()
        .and_then(|r| r.with_guessed_format().ok())
        .and_then(|r| r.into_dimensions().ok())
        .is_some()
}

/// One record per decodable PNG/JPEG under each immediate subdirectory of
/// `root`; classes sorted lexicographically, files sorted by path.
pub fn ingest(root: &Path) -> Result<(DatasetManifest, IngestSummary)> {
    let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut class_dirs: Vec<(String, PathBuf)> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let path = entry.path();
        if path.is_dir() {
            class_dirs.push((entry.file_name().to_string_lossy().into_owned(), path));
        }
    }
    if class_dirs.is_empty() {
        return Err(Error::Dataset(format!("{} has no class directories", root.display())));
    }
    class_dirs.sort();

    let mut summary = IngestSummary::default();
    let mut records = Vec::new();
    for (class, dir) in &class_dirs {
        let mut files: Vec<PathBuf> = walkdir::WalkDir::new(dir)
            .min_depth(1)
            .max_depth(1)
            .into_iter()
            .filter_map(|e| e.ok())
            .map(|e| e.into_path())
            .filter(|p| p.is_file() && has_image_extension(p))
            .collect();
        files.sort();
        let before = records.len();
        for path in files {
            if readable(&path) {
                records.push(Record {
                    path,
                    label: class.clone(),
                    split: Split::Unassigned,
                });
            } else {
                warn!("skipping unreadable image {}", path.display());
                summary.skipped.push(path);
            }
        }
        if records.len() == before {
            return Err(Error::Dataset(format!("class directory {} holds no readable images", dir.display())));
        }
    }
    summary.accepted = records.len();
    let names = class_dirs.into_iter().map(|(c, _)| c).collect();
    Ok((DatasetManifest::new(names, records)?, summary))
}

/// Downsamples every class, uniformly without replacement, to the smallest
/// class size. Surviving records keep their original relative order.
pub fn balance(manifest: &DatasetManifest, seed: u64) -> Result<DatasetManifest> {
    let groups = manifest.by_class();
    let target = groups.iter().map(Vec::len).min().unwrap_or(0);
    if target == 0 {
        return Err(Error::Dataset("cannot balance: some class has no records".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; manifest.records.len()];
    for group in &groups {
        let mut picked = index::sample(&mut rng, group.len(), target).into_vec();
        picked.sort_unstable();
        for p in picked {
            keep[group[p]] = true;
        }
    }
    let records = manifest
        .records
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(r, _)| r.clone())
        .collect();
    Ok(DatasetManifest {
        class_names: manifest.class_names.clone(),
        records,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SplitSpec {
    /// Test takes `round(n · test_fraction)` per class, validation
    /// `round(rest · validation_fraction_of_trainval)`; halves round up.
    Ratios {
        test_fraction: f64,
        validation_fraction_of_trainval: f64,
        seed: u64,
    },
    /// Exact per-class counts; must sum to the class size.
    Counts {
        train: usize,
        validation: usize,
        test: usize,
        seed: u64,
    },
}

impl SplitSpec {
    pub fn seed(&self) -> u64 {
        match *self {
            SplitSpec::Ratios { seed, .. } | SplitSpec::Counts { seed, .. } => seed,
        }
    }

    /// (train, validation, test) for a class of `n` records.
    pub fn counts_for(&self, n: usize) -> Result<(usize, usize, usize)> {
        match *self {
            SplitSpec::Ratios {
                test_fraction,
                validation_fraction_of_trainval,
                ..
            } => {
                for f in [test_fraction, validation_fraction_of_trainval] {
                    if !(f > 0.0 && f < 1.0) {
                        return Err(Error::InvalidArgument(format!("split fraction {f} outside (0, 1)")));
                    }
                }
                let test = round_half_up(n as f64 * test_fraction);
                let validation = round_half_up((n - test) as f64 * validation_fraction_of_trainval);
                Ok((n - test - validation, validation, test))
            }
            SplitSpec::Counts {
                train,
                validation,
                test,
                ..
            } => {
                if train + validation + test != n {
                    return Err(Error::InvalidArgument(format!(
                        "split counts {train}+{validation}+{test} do not sum to the class size {n}"
                    )));
                }
                Ok((train, validation, test))
            }
        }
    }
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Stratified assignment: each class is shuffled with a class-specific seeded
/// stream and cut into test, validation, then train.
pub fn split(manifest: &DatasetManifest, spec: &SplitSpec) -> Result<DatasetManifest> {
    let mut out = manifest.clone();
    for (class, group) in manifest.by_class().into_iter().enumerate() {
        let (_, validation, test) = spec.counts_for(group.len())?;
        let mut order = group;
        let mut rng = ChaCha8Rng::seed_from_u64(crate::augment::derive_seed(&[spec.seed(), class as u64]));
        order.shuffle(&mut rng);
        for (pos, &i) in order.iter().enumerate() {
            out.records[i].split = if pos < test {
                Split::Test
            } else if pos < test + validation {
                Split::Validation
            } else {
                Split::Train
            };
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelPolicy {
    Gray1,
    #[default]
    Replicate3,
}

impl ChannelPolicy {
    pub fn channels(self) -> usize {
        match self {
            ChannelPolicy::Gray1 => 1,
            ChannelPolicy::Replicate3 => 3,
        }
    }
}

/// Bilinear resize with half-pixel centers and edge clamping.
pub fn resize_bilinear(src: &[f32], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f32> {
    if (h, w) == (out_h, out_w) {
        return src.to_vec();
    }
    let axis = |out: usize, len: usize| -> Vec<(usize, usize, f32)> {
        let scale = len as f64 / out as f64;
        (0..out)
            .map(|i| {
                let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
                let i0 = s.floor() as usize;
                (i0, (i0 + 1).min(len - 1), (s - i0 as f64) as f32)
            })
            .collect()
    };
    let ys = axis(out_h, h);
    let xs = axis(out_w, w);
    let mut out = Vec::with_capacity(out_h * out_w);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// One image as `size × size × channels`, values in [0, 1]. Colour sources
/// are converted to luma first.
pub fn load_image(path: &Path, size: usize, policy: ChannelPolicy) -> Result<Tensor<f32>> {
    let img = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .into_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let gray: Vec<f32> = img.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
    let resized = resize_bilinear(&gray, h, w, size, size);
    let c = policy.channels();
    let data = resized.into_iter().flat_map(|v| std::iter::repeat_n(v, c)).collect();
    Tensor::new(vec![size, size, c], data)
}

/// One-hot rows in class order.
pub fn one_hot(labels: &[usize], num_classes: usize) -> Result<Tensor<f32>> {
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::InvalidArgument(format!("label {bad} out of range for {num_classes} classes")));
    }
    let mut data = vec![0.0; labels.len() * num_classes];
    for (row, &l) in labels.iter().enumerate() {
        data[row * num_classes + l] = 1.0;
    }
    Tensor::new(vec![labels.len(), num_classes], data)
}

/// Stacks NHWC images and one-hot labels for `records`.
pub fn load_batch(
    manifest: &DatasetManifest,
    records: &[&Record],
    size: usize,
    policy: ChannelPolicy,
) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let mut data = Vec::with_capacity(records.len() * size * size * policy.channels());
    let mut labels = Vec::with_capacity(records.len());
    for r in records {
        data.extend_from_slice(load_image(&r.path, size, policy)?.data());
        labels.push(manifest.class_index(&r.label).ok_or_else(|| {
            Error::Dataset(format!("record {} has unknown class {:?}", r.path.display(), r.label))
        })?);
    }
    let images = Tensor::new(vec![records.len(), size, size, policy.channels()], data)?;
    Ok((images, one_hot(&labels, manifest.class_names.len())?))
}

pub const SYNTHETIC_CLASSES: [&str; 3] = ["COVID", "Normal", "Viral_Pneumonia"];

/// Renders one synthetic radiograph-like image: a dim noisy background with a
/// bright Gaussian blob whose vertical band encodes the class.
fn synthetic_image(class: usize, size: usize, rng: &mut ChaCha8Rng) -> GrayImage {
    let s = size as f64;
    let band = (class as f64 + 0.5) / SYNTHETIC_CLASSES.len() as f64;
    let cy = s * (band + rng.random_range(-0.04..=0.04));
    let cx = s * (0.5 + rng.random_range(-0.12..=0.12));
    let sigma = s * rng.random_range(0.07..=0.10);
    let background = rng.random_range(0.15..=0.30);
    let amplitude = rng.random_range(0.55..=0.70);
    let noise = Normal::new(0.0, 0.04).expect("positive std");
    let mut img = GrayImage::new(size as u32, size as u32);
    for y in 0..size {
        for x in 0..size {
            let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
            let v = background + amplitude * (-d2 / (2.0 * sigma * sigma)).exp() + noise.sample(rng);
            img.put_pixel(x as u32, y as u32, Luma([(v.clamp(0.0, 1.0) * 255.0).round() as u8]));
        }
    }
    img
}

/// Writes `num_per_class` PNGs per class under `out_dir/<class>/`.
/// Output bytes depend only on the arguments.
pub fn generate_synthetic(num_per_class: usize, image_size: usize, seed: u64, out_dir: &Path) -> Result<usize> {
    if num_per_class == 0 || image_size == 0 {
        return Err(Error::InvalidArgument("synthetic corpus needs at least one image of positive size".into()));
    }
    let mut written = 0;
    for (class, name) in SYNTHETIC_CLASSES.iter().enumerate() {
        let dir = out_dir.join(name);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for i in 0..num_per_class {
            let mut rng = ChaCha8Rng::seed_from_u64(crate::augment::derive_seed(&[seed, class as u64, i as u64]));
            let img = synthetic_image(class, image_size, &mut rng);
            let path = dir.join(format!("{name}-{i:05}.png"));
            img.save(&path).map_err(|e| Error::Image {
                path: path.clone(),
                message: e.to_string(),
            })?;
            written += 1;
        }
    }
    Ok(written)
}

/// Per-class mean images, for a quick learnability baseline.
pub fn class_centroids(images: &[Tensor<f32>], labels: &[usize], num_classes: usize) -> Vec<Vec<f64>> {
    let len = images.first().map_or(0, Tensor::len);
    let mut sums = vec![vec![0.0; len]; num_classes];
    let mut counts = vec![0usize; num_classes];
    for (img, &l) in images.iter().zip(labels) {
        counts[l] += 1;
        for (s, &v) in sums[l].iter_mut().zip(img.data()) {
            *s += v as f64;
        }
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        s.iter_mut().for_each(|v| *v /= n.max(1) as f64);
    }
    sums
}

/// Index of the nearest centroid in squared Euclidean distance.
pub fn nearest_centroid(image: &Tensor<f32>, centroids: &[Vec<f64>]) -> usize {
    let dist = |c: &Vec<f64>| -> f64 { c.iter().zip(image.data()).map(|(a, &b)| (a - b as f64).powi(2)).sum() };
    (0..centroids.len())
        .min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b])))
        .unwrap_or(0)
}

/// Counts of records per `(class, split)`.
pub fn split_table(manifest: &DatasetManifest) -> BTreeMap<(String, Split), usize> {
    let mut t = BTreeMap::new();
    for r in &manifest.records {
        *t.entry((r.label.clone(), r.split)).or_insert(0) += 1;
    }
    t
}
