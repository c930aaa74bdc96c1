//! On-the-fly image augmentation: rotation, translation, horizontal flip,
//! intensity shift and zoom, combined into one affine resampling pass.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Transform order used for flags, labels and subset enumeration.
pub const TRANSFORMS: [&str; 5] = ["rotation", "translation", "horizontal_flip", "intensity_shift", "zoom"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationRanges {
    /// Rotation drawn from ±`rotation_deg` degrees.
    pub rotation_deg: f64,
    /// Shift per axis as a fraction of that axis' length.
    pub translation_frac: f64,
    /// Additive shift in normalized intensity units.
    pub intensity_frac: f64,
    /// Zoom factor drawn from `1 ± zoom_frac`.
    pub zoom_frac: f64,
}

impl Default for AugmentationRanges {
    fn default() -> Self {
        Self {
            rotation_deg: 10.0,
            translation_frac: 0.10,
            intensity_frac: 0.10,
            zoom_frac: 0.15,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationPolicy {
    pub rotation: bool,
    pub translation: bool,
    pub horizontal_flip: bool,
    pub intensity_shift: bool,
    pub zoom: bool,
    pub ranges: AugmentationRanges,
}

impl AugmentationPolicy {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn all() -> Self {
        Self::from_flags([true; 5])
    }

    /// Flags in [`TRANSFORMS`] order, default ranges.
    pub fn from_flags(flags: [bool; 5]) -> Self {
        Self {
            rotation: flags[0],
            translation: flags[1],
            horizontal_flip: flags[2],
            intensity_shift: flags[3],
            zoom: flags[4],
            ranges: AugmentationRanges::default(),
        }
    }

    pub fn flags(&self) -> [bool; 5] {
        [
            self.rotation,
            self.translation,
            self.horizontal_flip,
            self.intensity_shift,
            self.zoom,
        ]
    }

    pub fn with_flags(mut self, flags: [bool; 5]) -> Self {
        let ranges = self.ranges;
        self = Self::from_flags(flags);
        self.ranges = ranges;
        self
    }

    pub fn is_identity(&self) -> bool {
        self.flags().iter().all(|f| !f)
    }

    /// `none`, `all`, or the enabled transforms joined by `+`.
    pub fn label(&self) -> String {
        let flags = self.flags();
        if flags.iter().all(|&f| !f) {
            return "none".into();
        }
        if flags.iter().all(|&f| f) {
            return "all".into();
        }
        TRANSFORMS
            .iter()
            .zip(flags)
            .filter(|(_, f)| *f)
            .map(|(n, _)| *n)
            .collect::<Vec<_>>()
            .join("+")
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.ranges;
        let ok = [r.rotation_deg, r.translation_frac, r.intensity_frac, r.zoom_frac]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0)
            && r.zoom_frac < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid augmentation ranges {r:?}")))
        }
    }
}

impl fmt::Display for AugmentationPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationParams {
    pub theta_deg: f64,
    pub shift_x: f64,
    pub shift_y: f64,
    pub flip: bool,
    pub delta_intensity: f64,
    pub zoom_factor: f64,
}

impl AugmentationParams {
    pub const IDENTITY: Self = Self {
        theta_deg: 0.0,
        shift_x: 0.0,
        shift_y: 0.0,
        flip: false,
        delta_intensity: 0.0,
        zoom_factor: 1.0,
    };

    fn identity_geometry(&self) -> bool {
        self.theta_deg == 0.0 && self.shift_x == 0.0 && self.shift_y == 0.0 && !self.flip && self.zoom_factor == 1.0
    }
}

impl Default for AugmentationParams {
    fn default() -> Self {
        Self::IDENTITY
    }
}

/// Mixes a tuple of integers into one 64-bit stream seed (splitmix64 finalizer per part).
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        let mut z = h ^ p.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

/// Random stream for one image of one epoch of one split.
pub fn image_stream(seed: u64, epoch: u64, split: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(&[seed, epoch, split, index]))
}

fn symmetric<R: Rng + ?Sized>(rng: &mut R, half_width: f64) -> f64 {
    if half_width > 0.0 {
        rng.random_range(-half_width..=half_width)
    } else {
        0.0
    }
}

/// Draws all six values in a fixed order regardless of which flags are set,
/// then pins the disabled ones to identity.
pub fn sample_params<R: Rng + ?Sized>(policy: &AugmentationPolicy, rng: &mut R) -> AugmentationParams {
    let r = &policy.ranges;
    let theta = symmetric(rng, r.rotation_deg);
    let sx = symmetric(rng, r.translation_frac);
    let sy = symmetric(rng, r.translation_frac);
    let flip = rng.random_bool(0.5);
    let delta = symmetric(rng, r.intensity_frac);
    let zoom = 1.0 + symmetric(rng, r.zoom_frac);
    AugmentationParams {
        theta_deg: if policy.rotation { theta } else { 0.0 },
        shift_x: if policy.translation { sx } else { 0.0 },
        shift_y: if policy.translation { sy } else { 0.0 },
        flip: policy.horizontal_flip && flip,
        delta_intensity: if policy.intensity_shift { delta } else { 0.0 },
        zoom_factor: if policy.zoom { zoom } else { 1.0 },
    }
}

fn image_dims<T: Scalar>(image: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match *image.shape() {
        [h, w, c] => Ok((h, w, c)),
        [1, h, w, c] => Ok((h, w, c)),
        _ => Err(Error::InvalidArgument(format!(
            "augmentation expects an H×W×C image, got shape {:?}",
            image.shape()
        ))),
    }
}

/// Warps `image` (H×W×C or 1×H×W×C, values in [0,1]) by the forward map
/// `rotate ∘ zoom ∘ translate ∘ flip` about the image center, sampling
/// bilinearly with edge replication, then adds `delta_intensity` and clips to [0,1].
pub fn apply<T: Scalar>(image: &Tensor<T>, params: &AugmentationParams) -> Result<Tensor<T>> {
    let (h, w, c) = image_dims(image)?;
    let src = image.data();
    let mut out: Vec<T> = if params.identity_geometry() {
        src.to_vec()
    } else {
        let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        let (sin, cos) = params.theta_deg.to_radians().sin_cos();
        let inv_zoom = 1.0 / params.zoom_factor;
        let (tx, ty) = (params.shift_x * w as f64, params.shift_y * h as f64);
        let mut out = Vec::with_capacity(src.len());
        for y in 0..h {
            for x in 0..w {
                let (u, v) = (x as f64 - cx, y as f64 - cy);
                // undo rotation, zoom, translation, flip in that order
                let (u, v) = (cos * u + sin * v, -sin * u + cos * v);
                let (u, v) = (u * inv_zoom - tx, v * inv_zoom - ty);
                let u = if params.flip { -u } else { u };
                let sx = (u + cx).clamp(0.0, (w - 1) as f64);
                let sy = (v + cy).clamp(0.0, (h - 1) as f64);
                let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
                let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
                let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
                for ch in 0..c {
                    let at = |yy: usize, xx: usize| src[(yy * w + xx) * c + ch].as_f64();
                    let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                    let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                    out.push(T::from_f64(top * (1.0 - fy) + bottom * fy));
                }
            }
        }
        out
    };
    let delta = T::from_f64(params.delta_intensity);
    for v in &mut out {
        *v = (*v + delta).max(T::zero()).min(T::one());
    }
    Tensor::new(image.shape().to_vec(), out)
}

/// All 32 flag subsets: none, all, then the 1-, 2-, 3- and 4-element subsets,
/// each group in lexicographic order over [`TRANSFORMS`].
pub fn enumerate_policies() -> Vec<AugmentationPolicy> {
    let mut out = vec![AugmentationPolicy::none(), AugmentationPolicy::all()];
    for k in 1..=4 {
        let mut subsets: Vec<Vec<usize>> = Vec::new();
        combinations(5, k, 0, &mut Vec::new(), &mut subsets);
        for s in subsets {
            let mut flags = [false; 5];
            for i in s {
                flags[i] = true;
            }
            out.push(AugmentationPolicy::from_flags(flags));
        }
    }
    out
}

fn combinations(n: usize, k: usize, start: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if current.len() == k {
        out.push(current.clone());
        return;
    }
    for i in start..n {
        current.push(i);
        combinations(n, k, i + 1, current, out);
        current.pop();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_image(seed: u64, h: usize, w: usize, c: usize) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(&[h, w, c], |_| rng.random::<f32>())
    }

    #[test]
    fn all_off_samples_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            assert_eq!(sample_params(&AugmentationPolicy::none(), &mut rng), AugmentationParams::IDENTITY);
        }
    }

    #[test]
    fn identity_params_are_exact() {
        let img = random_image(1, 9, 7, 3);
        assert_eq!(apply(&img, &AugmentationParams::IDENTITY).unwrap(), img);
    }

    #[test]
    fn intensity_shift_on_constant_image() {
        let img = Tensor::<f64>::full(&[8, 8, 1], 0.5);
        let p = AugmentationParams {
            delta_intensity: 0.10,
            ..AugmentationParams::IDENTITY
        };
        let out = apply(&img, &p).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.6).abs() < 1e-12));
    }

    #[test]
    fn flip_twice_restores() {
        let img = random_image(2, 6, 5, 2);
        let p = AugmentationParams {
            flip: true,
            ..AugmentationParams::IDENTITY
        };
        let once = apply(&img, &p).unwrap();
        assert_ne!(once, img);
        assert_eq!(apply(&once, &p).unwrap(), img);
    }

    #[test]
    fn flip_mirrors_columns() {
        let img = Tensor::<f32>::new(vec![1, 3, 1], vec![0.1, 0.2, 0.3]).unwrap();
        let p = AugmentationParams {
            flip: true,
            ..AugmentationParams::IDENTITY
        };
        assert_eq!(apply(&img, &p).unwrap().data(), &[0.3, 0.2, 0.1]);
    }

    #[test]
    fn translation_moves_content() {
        // shift right by one pixel on a 10-wide image: out[x] = in[x − 1]
        let img = Tensor::<f64>::from_fn(&[1, 10, 1], |i| i as f64 / 10.0);
        let p = AugmentationParams {
            shift_x: 0.1,
            ..AugmentationParams::IDENTITY
        };
        let out = apply(&img, &p).unwrap();
        assert!((out.data()[5] - 0.4).abs() < 1e-12);
        assert_eq!(out.data()[0], 0.0);
    }

    #[test]
    fn enumeration_order() {
        let all = enumerate_policies();
        assert_eq!(all.len(), 32);
        assert_eq!(all[0].label(), "none");
        assert_eq!(all[1].label(), "all");
        assert_eq!(all[2].label(), "rotation");
        assert_eq!(all[6].label(), "zoom");
        assert_eq!(all[7].label(), "rotation+translation");
        assert_eq!(all[16].label(), "intensity_shift+zoom");
        assert_eq!(all[31].label(), "translation+horizontal_flip+intensity_shift+zoom");
        let mut labels: Vec<String> = all.iter().map(|p| p.label()).collect();
        labels.sort();
        labels.dedup();
        assert_eq!(labels.len(), 32);
    }

    #[test]
    fn derived_seeds_differ_per_part() {
        let a = derive_seed(&[10, 0, 0, 1]);
        assert_ne!(a, derive_seed(&[10, 0, 0, 2]));
        assert_ne!(a, derive_seed(&[10, 1, 0, 1]));
        assert_eq!(a, derive_seed(&[10, 0, 0, 1]));
    }
}
