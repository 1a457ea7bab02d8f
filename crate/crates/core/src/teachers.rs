//! Sources of per-stage teacher feature maps.
//!
//! Three synthetic emulators stand in for large frozen vision models. Each
//! reproduces one spatial specialisation: [`synth_dino`] is smooth and
//! centre-weighted, [`synth_sam`] concentrates on edges, and [`synth_depth`]
//! carries (noisy) depth structure derived from the ground truth. A
//! [`FileTeacher`] serves features precomputed offline in FTC files.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::ftc;
use crate::imgproc::{hash_str, hash_unit, planes, Plane};
use crate::sample::StereoSample;

/// Channel count of every synthetic teacher.
pub const SYNTH_CHANNELS: usize = 16;

/// Identity of a teacher model.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum TeacherKind {
    Dino,
    Sam,
    DepthAnything,
    /// A file-backed teacher outside the default trio.
    Custom(String),
}

impl TeacherKind {
    pub const DEFAULT: [TeacherKind; 3] = [TeacherKind::Dino, TeacherKind::Sam, TeacherKind::DepthAnything];

    pub fn as_str(&self) -> &str {
        match self {
            TeacherKind::Dino => "dino",
            TeacherKind::Sam => "sam",
            TeacherKind::DepthAnything => "depth_anything",
            TeacherKind::Custom(s) => s,
        }
    }
}

impl fmt::Display for TeacherKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TeacherKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "dino" => TeacherKind::Dino,
            "sam" => TeacherKind::Sam,
            "depth_anything" | "depth" => TeacherKind::DepthAnything,
            other if !other.is_empty() && other.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') => {
                TeacherKind::Custom(other.to_string())
            }
            other => return Err(Error::Config(format!("invalid teacher name `{other}`"))),
        })
    }
}

impl From<TeacherKind> for String {
    fn from(k: TeacherKind) -> String {
        k.as_str().to_string()
    }
}

impl TryFrom<String> for TeacherKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// One teacher's feature map for one context stage.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherFeatures {
    pub kind: TeacherKind,
    /// 1-based stage index matching the student context block.
    pub stage: usize,
    /// `[C_t, h_t, w_t]`.
    pub map: Tensor<f32>,
}

impl TeacherFeatures {
    pub fn new(kind: TeacherKind, stage: usize, map: Tensor<f32>) -> Result<Self> {
        if !(1..=3).contains(&stage) {
            return Err(Error::contract(format!("teacher stage {stage} outside 1..=3")));
        }
        if map.rank() != 3 || map.numel() == 0 {
            return Err(Error::contract(format!(
                "teacher map must be a non-empty [C, h, w] tensor, got {:?}",
                map.shape()
            )));
        }
        if !map.is_finite() {
            return Err(Error::contract(format!("{kind} stage {stage} map has non-finite values")));
        }
        Ok(TeacherFeatures { kind, stage, map })
    }

    pub fn channels(&self) -> usize {
        self.map.shape()[0]
    }
}

/// A deterministic source of teacher features.
pub trait TeacherProvider: Send + Sync {
    fn kind(&self) -> TeacherKind;

    fn stage_features(&self, sample: &StereoSample, stage: usize) -> Result<TeacherFeatures>;
}

fn check_stage(stage: usize) -> Result<()> {
    if (1..=3).contains(&stage) {
        Ok(())
    } else {
        Err(Error::contract(format!("teacher stage {stage} outside 1..=3")))
    }
}

fn image_planes(img: &Tensor<f32>) -> Vec<Plane> {
    let s = img.shape();
    planes(img.data(), s[0], s[1], s[2])
}

fn gray(rgb: &[Plane]) -> Plane {
    let inv = 1.0 / rgb.len() as f32;
    let mut g = Plane::filled(rgb[0].h, rgb[0].w, 0.0);
    for p in rgb {
        g.data.iter_mut().zip(&p.data).for_each(|(a, &b)| *a += b);
    }
    g.map(|v| v * inv)
}

/// Seeded per-channel gains in `[0.5, 1.5)`.
fn channel_gain(tag: u64, seed: u64, channel: usize) -> f32 {
    0.5 + hash_unit(&[tag, seed, channel as u64]) as f32
}

fn stack(kind: TeacherKind, stage: usize, chans: Vec<Plane>) -> Result<TeacherFeatures> {
    let (h, w) = (chans[0].h, chans[0].w);
    let mut data = Vec::with_capacity(chans.len() * h * w);
    for c in &chans {
        data.extend_from_slice(&c.data);
    }
    TeacherFeatures::new(kind, stage, Tensor::new(&[chans.len(), h, w], data)?)
}

/// Gaussian centre-saliency profile with standard deviation of a quarter of
/// each image side.
pub fn saliency_mask(h: usize, w: usize) -> Plane {
    let (cy, cx) = ((h as f32 - 1.0) / 2.0, (w as f32 - 1.0) / 2.0);
    let (sy, sx) = (h as f32 / 4.0, w as f32 / 4.0);
    let mut data = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let dy = (y as f32 - cy) / sy;
            let dx = (x as f32 - cx) / sx;
            data.push((-0.5 * (dy * dy + dx * dx)).exp());
        }
    }
    Plane::new(h, w, data)
}

const DINO_TAG: u64 = 0xD1;
const SAM_TAG: u64 = 0x5A;
const DEPTH_TAG: u64 = 0xDE;

/// Foreground-weighted, low-pass colour statistics.
///
/// Channel `4 * s + j` is signal `s` (red, green, blue, grey) box-blurred
/// with radius `[0, 1, 2, 4][j]`, multiplied by [`saliency_mask`] and a
/// seeded gain.
pub fn synth_dino(sample: &StereoSample, stage: usize, seed: u64) -> Result<TeacherFeatures> {
    check_stage(stage)?;
    let rgb: Vec<Plane> = image_planes(&sample.left).iter().map(|p| p.to_stage(stage)).collect();
    let mut signals = rgb.clone();
    signals.push(gray(&rgb));
    let mask = saliency_mask(signals[0].h, signals[0].w);
    let mut chans = Vec::with_capacity(SYNTH_CHANNELS);
    for s in &signals {
        for r in [0, 1, 2, 4] {
            let k = chans.len();
            let gain = channel_gain(DINO_TAG, seed, k);
            chans.push(s.box_blur(r).zip(&mask, |v, m| v * m * gain));
        }
    }
    stack(TeacherKind::Dino, stage, chans)
}

/// Forward differences `I(y+dy, x+dx) - I(y, x)` with zero past the border.
fn forward_diff(p: &Plane, dy: isize, dx: isize) -> Plane {
    let mut data = Vec::with_capacity(p.data.len());
    for y in 0..p.h as isize {
        for x in 0..p.w as isize {
            let (ny, nx) = (y + dy, x + dx);
            let v = if ny < 0 || nx < 0 || ny >= p.h as isize || nx >= p.w as isize {
                0.0
            } else {
                p.at(ny as usize, nx as usize) - p.at(y as usize, x as usize)
            };
            data.push(v);
        }
    }
    Plane::new(p.h, p.w, data)
}

/// Edge-concentrated gradient statistics of the left image, computed at
/// full resolution and pooled to the stage resolution.
///
/// Channels: |gx|, |gy|, the two diagonal magnitudes, gradient magnitude,
/// magnitude-weighted `cos 2θ` / `sin 2θ`, per-colour |gx| (3) and |gy| (3),
/// squared magnitude, `max(|gx|, |gy|)`, and radius-1 blurred magnitude.
pub fn synth_sam(sample: &StereoSample, stage: usize, seed: u64) -> Result<TeacherFeatures> {
    check_stage(stage)?;
    let rgb = image_planes(&sample.left);
    let lum = gray(&rgb);
    let gx = forward_diff(&lum, 0, 1);
    let gy = forward_diff(&lum, 1, 0);
    let gd1 = forward_diff(&lum, 1, 1);
    let gd2 = forward_diff(&lum, -1, 1);
    let mag = gx.zip(&gy, |a, b| (a * a + b * b).sqrt());
    // cos 2θ = (gx² - gy²)/|g|², sin 2θ = 2 gx gy/|g|²; times |g| stays finite
    let cos2 = gx.zip(&gy, |a, b| {
        let m2 = a * a + b * b;
        if m2 > 0.0 {
            (a * a - b * b) / m2.sqrt()
        } else {
            0.0
        }
    });
    let sin2 = gx.zip(&gy, |a, b| {
        let m2 = a * a + b * b;
        if m2 > 0.0 {
            2.0 * a * b / m2.sqrt()
        } else {
            0.0
        }
    });
    let abs = |p: &Plane| p.map(f32::abs);
    let mut full = vec![abs(&gx), abs(&gy), abs(&gd1), abs(&gd2), mag.clone(), cos2, sin2];
    for c in &rgb {
        full.push(abs(&forward_diff(c, 0, 1)));
    }
    for c in &rgb {
        full.push(abs(&forward_diff(c, 1, 0)));
    }
    full.push(mag.map(|m| m * m));
    full.push(gx.zip(&gy, |a, b| a.abs().max(b.abs())));
    full.push(mag.box_blur(1));
    let chans = full
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let gain = channel_gain(SAM_TAG, seed, k);
            p.to_stage(stage).map(|v| v * gain)
        })
        .collect();
    stack(TeacherKind::Sam, stage, chans)
}

/// Min-max normalisation to `[0, 1]`; a constant plane maps to zero.
pub fn min_max_normalize(p: &Plane) -> Plane {
    let lo = p.data.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = p.data.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if hi > lo {
        p.map(|v| (v - lo) / (hi - lo))
    } else {
        p.map(|_| 0.0)
    }
}

fn central_diff(p: &Plane, horizontal: bool) -> Plane {
    let mut data = Vec::with_capacity(p.data.len());
    for y in 0..p.h as isize {
        for x in 0..p.w as isize {
            let v = if horizontal {
                p.at_clamped(y, x + 1) - p.at_clamped(y, x - 1)
            } else {
                p.at_clamped(y + 1, x) - p.at_clamped(y - 1, x)
            };
            data.push(0.5 * v);
        }
    }
    Plane::new(p.h, p.w, data)
}

/// Smooth unit-variance noise field for one channel.
fn smooth_noise(h: usize, w: usize, words: [u64; 4]) -> Plane {
    let mut data = Vec::with_capacity(h * w);
    for k in 0..h * w {
        // sum of two uniforms: cheap, symmetric, zero-mean after centring
        let u = hash_unit(&[words[0], words[1], words[2], words[3], k as u64, 0]);
        let v = hash_unit(&[words[0], words[1], words[2], words[3], k as u64, 1]);
        data.push((u + v - 1.0) as f32);
    }
    let p = Plane::new(h, w, data).box_blur(2);
    let m = p.mean();
    let s = p.std();
    if s > 0.0 {
        p.map(|v| (v - m) / s)
    } else {
        p.map(|_| 0.0)
    }
}

/// Depth-informative features from the ground-truth disparity.
///
/// The disparity is pooled to the stage resolution and min-max normalised
/// (channel 0). Further channels are smoothed copies, spatial gradients and
/// simple non-linear transforms. Each channel except none receives smooth
/// seeded noise with standard deviation `noise * std(channel)`.
pub fn synth_depth(sample: &StereoSample, stage: usize, seed: u64, noise: f32) -> Result<TeacherFeatures> {
    check_stage(stage)?;
    let gt = sample.gt()?;
    let (h, w) = (gt.shape()[0], gt.shape()[1]);
    let disp = Plane::new(h, w, gt.data().to_vec()).to_stage(stage);
    let n = min_max_normalize(&disp);
    let gx = central_diff(&n, true);
    let gy = central_diff(&n, false);
    let gm = gx.zip(&gy, |a, b| (a * a + b * b).sqrt());
    let clean = vec![
        n.clone(),
        n.box_blur(1),
        n.box_blur(2),
        n.box_blur(4),
        gx.clone(),
        gy.clone(),
        gm.clone(),
        n.map(|v| v * v),
        n.map(|v| 1.0 - v),
        n.map(f32::sqrt),
        gx.box_blur(1),
        gy.box_blur(1),
        gm.box_blur(2),
        n.zip(&n.box_blur(2), |a, b| a * b),
        gm.box_blur(4),
        n.map(|v| (std::f32::consts::PI * v).sin()),
    ];
    let sid = hash_str(&sample.id);
    let chans = clean
        .into_iter()
        .enumerate()
        .map(|(k, c)| {
            let amp = noise * c.std();
            if amp == 0.0 {
                return c;
            }
            let field = smooth_noise(c.h, c.w, [DEPTH_TAG, seed, sid, (stage * 64 + k) as u64]);
            c.zip(&field, |v, z| v + amp * z)
        })
        .collect();
    stack(TeacherKind::DepthAnything, stage, chans)
}

#[derive(Clone, Debug)]
pub struct SynthDino {
    pub seed: u64,
}

impl TeacherProvider for SynthDino {
    fn kind(&self) -> TeacherKind {
        TeacherKind::Dino
    }

    fn stage_features(&self, sample: &StereoSample, stage: usize) -> Result<TeacherFeatures> {
        synth_dino(sample, stage, self.seed)
    }
}

#[derive(Clone, Debug)]
pub struct SynthSam {
    pub seed: u64,
}

impl TeacherProvider for SynthSam {
    fn kind(&self) -> TeacherKind {
        TeacherKind::Sam
    }

    fn stage_features(&self, sample: &StereoSample, stage: usize) -> Result<TeacherFeatures> {
        synth_sam(sample, stage, self.seed)
    }
}

#[derive(Clone, Debug)]
pub struct SynthDepth {
    pub seed: u64,
    /// Noise standard deviation relative to each channel's spread.
    pub noise: f32,
}

impl TeacherProvider for SynthDepth {
    fn kind(&self) -> TeacherKind {
        TeacherKind::DepthAnything
    }

    fn stage_features(&self, sample: &StereoSample, stage: usize) -> Result<TeacherFeatures> {
        synth_depth(sample, stage, self.seed, self.noise)
    }
}

/// Default relative noise of the depth emulator.
pub const DEPTH_NOISE: f32 = 0.1;

/// The synthetic stand-in for `kind`, or `None` for custom teachers.
pub fn synthetic(kind: &TeacherKind, seed: u64, depth_noise: f32) -> Option<Box<dyn TeacherProvider>> {
    match kind {
        TeacherKind::Dino => Some(Box::new(SynthDino { seed })),
        TeacherKind::Sam => Some(Box::new(SynthSam { seed })),
        TeacherKind::DepthAnything => Some(Box::new(SynthDepth { seed, noise: depth_noise })),
        TeacherKind::Custom(_) => None,
    }
}

/// Loads one FTC teacher map and validates it as stage features.
pub fn load_teacher_file(path: impl AsRef<Path>, kind: TeacherKind, stage: usize) -> Result<TeacherFeatures> {
    check_stage(stage)?;
    let map = ftc::read(path.as_ref())?;
    TeacherFeatures::new(kind, stage, map)
}

/// File name `<kind>_stage<i>_<sampleid>.ftc`.
pub fn teacher_file_name(kind: &TeacherKind, stage: usize, sample_id: &str) -> String {
    format!("{kind}_stage{stage}_{sample_id}.ftc")
}

/// Serves precomputed features from a directory of FTC files.
#[derive(Clone, Debug)]
pub struct FileTeacher {
    pub dir: PathBuf,
    pub kind: TeacherKind,
}

impl TeacherProvider for FileTeacher {
    fn kind(&self) -> TeacherKind {
        self.kind.clone()
    }

    fn stage_features(&self, sample: &StereoSample, stage: usize) -> Result<TeacherFeatures> {
        let path = self.dir.join(teacher_file_name(&self.kind, stage, &sample.id));
        load_teacher_file(path, self.kind.clone(), stage)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_from_gray(g: Plane, disp: Option<Plane>) -> StereoSample {
        let mut data = Vec::new();
        for _ in 0..3 {
            data.extend_from_slice(&g.data);
        }
        let img = Tensor::new(&[3, g.h, g.w], data).unwrap();
        let gt = disp.map(|d| Tensor::new(&[d.h, d.w], d.data).unwrap());
        StereoSample::new("t0", img.clone(), img, gt, None).unwrap()
    }

    #[test]
    fn kinds_round_trip_through_strings() {
        for k in TeacherKind::DEFAULT {
            assert_eq!(k.as_str().parse::<TeacherKind>().unwrap(), k);
        }
        assert_eq!("clip".parse::<TeacherKind>().unwrap(), TeacherKind::Custom("clip".into()));
        assert!("bad name".parse::<TeacherKind>().is_err());
    }

    #[test]
    fn dino_on_constant_image_follows_saliency_profile() {
        let s = sample_from_gray(Plane::filled(16, 24, 0.4), None);
        let f = synth_dino(&s, 1, 3).unwrap();
        assert_eq!(f.map.shape(), &[16, 16, 24]);
        let (h, w) = (16usize, 24usize);
        for c in 0..16 {
            let gain = channel_gain(DINO_TAG, 3, c);
            for y in 0..h {
                for x in 0..w {
                    let dy = (y as f64 - 7.5) / 4.0;
                    let dx = (x as f64 - 11.5) / 6.0;
                    let profile = (-0.5 * (dy * dy + dx * dx)).exp();
                    let want = 0.4 * gain as f64 * profile;
                    assert!((f.map.at(&[c, y, x]) as f64 - want).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn stage_resolution_halves() {
        let s = sample_from_gray(Plane::filled(16, 24, 0.4), Some(Plane::filled(16, 24, 1.0)));
        for stage in 1..=3 {
            let div = 1 << (stage - 1);
            for f in [synth_dino(&s, stage, 0).unwrap(), synth_sam(&s, stage, 0).unwrap(), synth_depth(&s, stage, 0, 0.1).unwrap()] {
                assert_eq!(f.map.shape(), &[16, 16 / div, 24 / div]);
            }
        }
        assert!(synth_dino(&s, 4, 0).is_err());
    }

    #[test]
    fn sam_is_zero_on_constant_image() {
        let s = sample_from_gray(Plane::filled(8, 8, 0.7), None);
        for stage in 1..=3 {
            assert!(synth_sam(&s, stage, 9).unwrap().map.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn sam_energy_concentrates_on_step_edge() {
        let (h, w, col) = (12usize, 20usize, 9usize);
        let img = Plane::new(h, w, (0..h * w).map(|k| if k % w >= col { 1.0 } else { 0.0 }).collect());
        let s = sample_from_gray(img.clone(), None);
        let f = synth_sam(&s, 1, 5).unwrap();
        // direct oracle for channel 0: |I(x+1) - I(x)|
        for y in 0..h {
            for x in 0..w {
                let want = if x + 1 < w { (img.at(y, x + 1) - img.at(y, x)).abs() } else { 0.0 };
                let gain = channel_gain(SAM_TAG, 5, 0);
                assert!((f.map.at(&[0, y, x]) - gain * want).abs() < 1e-6);
            }
        }
        for c in 0..SYNTH_CHANNELS {
            let (mut near, mut total) = (0.0f64, 0.0f64);
            for y in 0..h {
                for x in 0..w {
                    let e = (f.map.at(&[c, y, x]) as f64).powi(2);
                    total += e;
                    if (x as isize - col as isize).abs() <= 2 {
                        near += e;
                    }
                }
            }
            if total > 0.0 {
                assert!(near / total >= 0.9, "channel {c}: {}", near / total);
            }
        }
    }

    #[test]
    fn depth_requires_ground_truth() {
        let s = sample_from_gray(Plane::filled(8, 8, 0.5), None);
        assert!(matches!(synth_depth(&s, 1, 0, 0.1), Err(Error::Contract(_))));
    }

    #[test]
    fn depth_zero_scene_gives_constant_channels() {
        let s = sample_from_gray(Plane::filled(8, 8, 0.5), Some(Plane::filled(8, 8, 0.0)));
        let f = synth_depth(&s, 1, 0, 0.0).unwrap();
        for c in 0..SYNTH_CHANNELS {
            let first = f.map.at(&[c, 0, 0]);
            assert!(f.map.data()[c * 64..(c + 1) * 64].iter().all(|&v| v == first));
        }
    }

    #[test]
    fn depth_channel_zero_is_normalized_disparity_without_noise() {
        let d = Plane::new(8, 12, (0..96).map(|k| ((k * 7) % 13) as f32).collect());
        let s = sample_from_gray(Plane::filled(8, 12, 0.5), Some(d.clone()));
        let f = synth_depth(&s, 1, 4, 0.0).unwrap();
        let lo = d.data.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = d.data.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        for k in 0..96 {
            assert_eq!(f.map.data()[k], (d.data[k] - lo) / (hi - lo));
        }
    }

    #[test]
    fn depth_seeds_differ_but_share_statistics() {
        let d = Plane::new(32, 48, (0..32 * 48).map(|k| ((k % 48) / 6) as f32).collect());
        let s = sample_from_gray(Plane::filled(32, 48, 0.5), Some(d));
        let a = synth_depth(&s, 1, 1, DEPTH_NOISE).unwrap();
        let b = synth_depth(&s, 1, 2, DEPTH_NOISE).unwrap();
        assert_ne!(a.map, b.map);
        let clean = synth_depth(&s, 1, 1, 0.0).unwrap();
        let n = 32 * 48;
        for c in 0..SYNTH_CHANNELS {
            let cp = Plane::new(32, 48, clean.map.data()[c * n..(c + 1) * n].to_vec());
            let pa = Plane::new(32, 48, a.map.data()[c * n..(c + 1) * n].to_vec());
            let pb = Plane::new(32, 48, b.map.data()[c * n..(c + 1) * n].to_vec());
            let sigma = DEPTH_NOISE * cp.std();
            assert!((pa.mean() - pb.mean()).abs() <= 3.0 * sigma + 1e-6, "channel {c} mean");
            assert!((pa.std() - pb.std()).abs() <= 3.0 * sigma + 1e-6, "channel {c} std");
        }
    }

    #[test]
    fn providers_are_deterministic() {
        let d = Plane::new(8, 8, (0..64).map(|k| (k % 5) as f32).collect());
        let g = Plane::new(8, 8, (0..64).map(|k| ((k * 31) % 17) as f32 / 17.0).collect());
        let s = sample_from_gray(g, Some(d));
        for kind in TeacherKind::DEFAULT {
            let p = synthetic(&kind, 11, DEPTH_NOISE).unwrap();
            for stage in 1..=3 {
                let a = p.stage_features(&s, stage).unwrap();
                let b = p.stage_features(&s, stage).unwrap();
                let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
                assert_eq!(bits(&a.map), bits(&b.map));
                assert!(a.map.is_finite());
            }
        }
    }

    #[test]
    fn file_teacher_reads_named_files() {
        let dir = tempfile::tempdir().unwrap();
        let map = Tensor::from_fn(&[5, 4, 4], |i| i as f32 * 0.5);
        let name = teacher_file_name(&TeacherKind::Sam, 2, "s7");
        assert_eq!(name, "sam_stage2_s7.ftc");
        ftc::write(dir.path().join(&name), &map).unwrap();
        let t = FileTeacher {
            dir: dir.path().to_path_buf(),
            kind: TeacherKind::Sam,
        };
        let mut s = sample_from_gray(Plane::filled(8, 8, 0.5), None);
        s.id = "s7".into();
        let f = t.stage_features(&s, 2).unwrap();
        assert_eq!(f.map, map);
        assert_eq!(f.channels(), 5);
        assert!(t.stage_features(&s, 1).is_err());
    }
}
