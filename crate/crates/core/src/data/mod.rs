//! Random-dot stereogram scenes with exact ground truth, plus the on-disk
//! dataset layout (PGM images, PFM disparities, JSON manifests).

pub mod pfm;
pub mod pgm;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::config::DataConfig;
use crate::error::{Error, Result};
use crate::imgproc::hash_unit;
use crate::sample::StereoSample;

pub use pfm::{read_pfm, write_pfm};
pub use pgm::Gray8;

/// Axis-aligned fronto-parallel layer, bounds in left-image pixels
/// (`x0..x1`, `y0..y1`).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layer {
    pub disparity: u32,
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Layer {
    fn contains(&self, x: isize, y: usize) -> bool {
        x >= self.x0 as isize && x < self.x1 as isize && y >= self.y0 && y < self.y1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub density: f64,
    /// Disparity of the plane behind every layer.
    pub background: u32,
    /// Front-to-back; disparities must not increase along the list.
    pub layers: Vec<Layer>,
    pub d_max: u32,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::contract("scene must be non-empty"));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::contract(format!("dot density {} outside (0, 1]", self.density)));
        }
        if self.d_max > 64 {
            return Err(Error::contract(format!("d_max {} exceeds 64", self.d_max)));
        }
        if self.background > self.d_max {
            return Err(Error::contract("background disparity exceeds d_max"));
        }
        let mut prev = u32::MAX;
        for (i, l) in self.layers.iter().enumerate() {
            if l.x0 >= l.x1 || l.y0 >= l.y1 || l.x1 > self.width || l.y1 > self.height {
                return Err(Error::contract(format!(
                    "layer {i} bounds x {}..{} y {}..{} outside the {}x{} frame",
                    l.x0, l.x1, l.y0, l.y1, self.height, self.width
                )));
            }
            if l.disparity > self.d_max {
                return Err(Error::contract(format!("layer {i} disparity {} exceeds d_max", l.disparity)));
            }
            if l.disparity > prev || l.disparity < self.background {
                return Err(Error::contract(format!("layer {i} breaks front-to-back disparity order")));
            }
            prev = l.disparity;
        }
        Ok(())
    }

    /// Random scene: 1..=`max_layers` rectangles in front of a background,
    /// sorted by decreasing disparity.
    pub fn random(seed: u64, cfg: &DataConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (cfg.height, cfg.width);
        let d_max = cfg.d_max as u32;
        let background = rng.gen_range(0..=d_max / 4);
        let n = rng.gen_range(1..=cfg.max_layers);
        let mut layers: Vec<Layer> = (0..n)
            .map(|_| {
                let lw = rng.gen_range((w / 6).max(1)..=(w / 2).max(1));
                let lh = rng.gen_range((h / 4).max(1)..=(3 * h / 4).max(1));
                let x0 = rng.gen_range(0..=w - lw);
                let y0 = rng.gen_range(0..=h - lh);
                Layer {
                    disparity: rng.gen_range(background..=d_max),
                    x0,
                    y0,
                    x1: x0 + lw,
                    y1: y0 + lh,
                }
            })
            .collect();
        layers.sort_by_key(|l| std::cmp::Reverse(l.disparity));
        SceneSpec {
            seed,
            height: h,
            width: w,
            density: cfg.density,
            background,
            layers,
            d_max,
        }
    }

    /// Index of the frontmost layer covering left pixel `(x, y)`; `None`
    /// is the background.
    fn left_owner(&self, x: isize, y: usize) -> Option<usize> {
        self.layers.iter().position(|l| l.contains(x, y))
    }

    /// Frontmost surface seen at right pixel `(xr, y)`.
    fn right_owner(&self, xr: isize, y: usize) -> Option<usize> {
        self.layers
            .iter()
            .position(|l| l.contains(xr + l.disparity as isize, y))
    }

    fn disparity_of(&self, owner: Option<usize>) -> u32 {
        owner.map_or(self.background, |i| self.layers[i].disparity)
    }

    /// Intensity of surface `owner` at left-image texture coordinates.
    fn texture(&self, owner: Option<usize>, tx: isize, y: usize) -> f32 {
        let id = owner.map_or(0, |i| i as u64 + 1);
        let d = self.disparity_of(owner);
        let base = 0.2 + 0.5 * d as f64 / self.d_max.max(1) as f64;
        let key = [self.seed, id, tx as u64, y as u64];
        let v = if hash_unit(&key) < self.density {
            let sign = if hash_unit(&[self.seed, id, tx as u64, y as u64, 1]) < 0.5 { -1.0 } else { 1.0 };
            base + sign * 0.2
        } else {
            base
        };
        ((v.clamp(0.0, 1.0) * 255.0).round() / 255.0) as f32
    }
}

/// Renders a scene into a stereo pair with exact disparity and validity.
pub fn gen_rds(spec: &SceneSpec, id: impl Into<String>) -> Result<StereoSample> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let mut left = vec![0.0f32; h * w];
    let mut right = vec![0.0f32; h * w];
    let mut gt = vec![0.0f32; h * w];
    let mut valid = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let xi = x as isize;
            let owner = spec.left_owner(xi, y);
            let d = spec.disparity_of(owner);
            left[y * w + x] = spec.texture(owner, xi, y);
            gt[y * w + x] = d as f32;
            let xr = xi - d as isize;
            if xr >= 0 && spec.right_owner(xr, y) == owner {
                valid[y * w + x] = 1.0;
            }
            let r_owner = spec.right_owner(xi, y);
            let rd = spec.disparity_of(r_owner) as isize;
            right[y * w + x] = spec.texture(r_owner, xi + rd, y);
        }
    }
    let rgb = |p: &[f32]| {
        let mut v = Vec::with_capacity(3 * p.len());
        for _ in 0..3 {
            v.extend_from_slice(p);
        }
        Tensor::new(&[3, h, w], v)
    };
    StereoSample::new(
        id,
        rgb(&left)?,
        rgb(&right)?,
        Some(Tensor::new(&[h, w], gt)?),
        Some(Tensor::new(&[h, w], valid)?),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }

    /// First scene seed of the split; the two ranges never overlap.
    fn seed_base(self, data_seed: u64) -> u64 {
        let offset = match self {
            Split::Train => 0,
            Split::Val => 1 << 32,
        };
        data_seed.wrapping_mul(1 << 33).wrapping_add(offset)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestItem {
    pub id: String,
    pub left: PathBuf,
    pub right: PathBuf,
    pub gt: PathBuf,
    pub valid: PathBuf,
}

/// One split of a dataset. Item paths are relative to the manifest's
/// directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub split: Split,
    pub items: Vec<ManifestItem>,
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn file_name(split: Split) -> String {
        format!("{}.json", split.as_str())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: DatasetManifest = serde_json::from_str(&text)?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for it in &self.items {
            if !ids.insert(&it.id) {
                return Err(Error::contract(format!("duplicate sample id `{}`", it.id)));
            }
            for p in [&it.left, &it.right, &it.gt, &it.valid] {
                let full = self.root.join(p);
                if !full.is_file() {
                    return Err(Error::io(
                        full,
                        std::io::Error::new(std::io::ErrorKind::NotFound, "manifest entry is missing"),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)? + "\n";
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn load_sample(&self, index: usize) -> Result<StereoSample> {
        let it = self
            .items
            .get(index)
            .ok_or_else(|| Error::contract(format!("sample index {index} out of range")))?;
        load_item(&self.root, it)
    }

    pub fn load_all(&self) -> Result<Vec<StereoSample>> {
        (0..self.items.len()).map(|i| self.load_sample(i)).collect()
    }
}

fn load_image(path: &Path) -> Result<Tensor<f32>> {
    let g = Gray8::read(path)?;
    let plane = g.to_unit();
    let mut v = Vec::with_capacity(3 * plane.len());
    for _ in 0..3 {
        v.extend_from_slice(&plane);
    }
    Tensor::new(&[3, g.height, g.width], v)
}

pub fn load_item(root: &Path, it: &ManifestItem) -> Result<StereoSample> {
    let left = load_image(&root.join(&it.left))?;
    let right = load_image(&root.join(&it.right))?;
    let gt = read_pfm(root.join(&it.gt))?;
    let mask = Gray8::read(root.join(&it.valid))?;
    let valid = Tensor::new(
        &[mask.height, mask.width],
        mask.data.iter().map(|&b| if b > 0 { 1.0 } else { 0.0 }).collect(),
    )?;
    StereoSample::new(it.id.clone(), left, right, Some(gt), Some(valid))
}

fn plane_of(t: &Tensor<f32>) -> (usize, usize, &[f32]) {
    let s = t.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    (h, w, &t.data()[..h * w])
}

/// Writes one sample under `root/<split>/` and returns its manifest entry.
pub fn write_sample(root: &Path, split: Split, s: &StereoSample) -> Result<ManifestItem> {
    let rel = PathBuf::from(split.as_str());
    let dir = root.join(&rel);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let item = ManifestItem {
        id: s.id.clone(),
        left: rel.join(format!("{}_left.pgm", s.id)),
        right: rel.join(format!("{}_right.pgm", s.id)),
        gt: rel.join(format!("{}_gt.pfm", s.id)),
        valid: rel.join(format!("{}_valid.pgm", s.id)),
    };
    let (h, w, l) = plane_of(&s.left);
    Gray8::from_unit(h, w, l).write(root.join(&item.left))?;
    let (_, _, r) = plane_of(&s.right);
    Gray8::from_unit(h, w, r).write(root.join(&item.right))?;
    write_pfm(root.join(&item.gt), s.gt()?)?;
    let (_, _, v) = plane_of(s.valid.as_ref().ok_or_else(|| Error::contract("sample lacks a validity mask"))?);
    Gray8::from_unit(h, w, v).write(root.join(&item.valid))?;
    Ok(item)
}

/// Scene for sample `index` of `split`.
pub fn scene_for(cfg: &DataConfig, split: Split, index: usize) -> (String, SceneSpec) {
    let id = format!("{}_{index:04}", split.as_str());
    let seed = split.seed_base(cfg.seed).wrapping_add(index as u64);
    (id, SceneSpec::random(seed, cfg))
}

/// Generates both splits into `cfg.dir` and writes `train.json` and
/// `val.json`.
pub fn build_dataset(cfg: &DataConfig) -> Result<(DatasetManifest, DatasetManifest)> {
    cfg.validate()?;
    let root = &cfg.dir;
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut out = Vec::with_capacity(2);
    for (split, n) in [(Split::Train, cfg.n_train), (Split::Val, cfg.n_val)] {
        let mut items = Vec::with_capacity(n);
        for i in 0..n {
            let (id, spec) = scene_for(cfg, split, i);
            let sample = gen_rds(&spec, id)?;
            items.push(write_sample(root, split, &sample)?);
        }
        let m = DatasetManifest {
            split,
            items,
            root: root.clone(),
        };
        m.save(root.join(DatasetManifest::file_name(split)))?;
        out.push(m);
    }
    let val = out.pop().unwrap();
    let train = out.pop().unwrap();
    Ok((train, val))
}
