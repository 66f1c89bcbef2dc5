//! On-disk dataset layout and loading.
//!
//! ```text
//! <root>/manifest.json
//! <root>/images/<modality>/<id>.png   16-bit grayscale, v -> (v / 65535) * 2 - 1
//! <root>/masks/<modality>/<id>.png    8-bit, 0 or 255
//! ```

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma};
use serde::{Deserialize, Serialize};

use super::{BinaryMask, ImageTensor, Modality, Sample};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub id: String,
    pub modality: String,
    /// Paths relative to the dataset root.
    pub image: String,
    pub mask: String,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(skip)]
    pub root: PathBuf,
    pub modalities: Vec<String>,
    pub samples: Vec<SampleRecord>,
}

impl DatasetManifest {
    pub fn path(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn write(&self) -> Result<()> {
        let path = self.path();
        let text = serde_json::to_string_pretty(self).expect("manifest serialises");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::io(path, e),
        })?;
        let mut manifest: DatasetManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Json { path: path.to_path_buf(), source: e })?;
        manifest.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        manifest.validate()?;
        Ok(manifest)
    }

    fn validate(&self) -> Result<()> {
        if self.modalities.len() < 2 {
            return Err(Error::Config("a dataset needs at least two modalities".into()));
        }
        let names: HashSet<&str> = self.modalities.iter().map(String::as_str).collect();
        if names.len() != self.modalities.len() {
            return Err(Error::Config("duplicate modality names".into()));
        }
        let mut seen = HashSet::new();
        let mut split_of: HashMap<&str, Split> = HashMap::new();
        for s in &self.samples {
            if !names.contains(s.modality.as_str()) {
                return Err(Error::Config(format!(
                    "sample {} references unknown modality {}",
                    s.id, s.modality
                )));
            }
            if !seen.insert((s.id.as_str(), s.modality.as_str())) {
                return Err(Error::Config(format!("duplicate sample {}/{}", s.modality, s.id)));
            }
            // one subject never straddles the split
            if let Some(prev) = split_of.insert(s.id.as_str(), s.split) {
                if prev != s.split {
                    return Err(Error::Config(format!("sample id {} is in both splits", s.id)));
                }
            }
        }
        Ok(())
    }
}

/// Immutable in-memory dataset.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub modalities: Vec<Modality>,
    pub samples: Vec<Sample>,
    pub manifest: DatasetManifest,
    train: Vec<usize>,
    test: Vec<usize>,
}

impl Dataset {
    pub fn new(modalities: Vec<Modality>, samples: Vec<Sample>, manifest: DatasetManifest) -> Self {
        let train = (0..samples.len()).filter(|&i| samples[i].split == Split::Train).collect();
        let test = (0..samples.len()).filter(|&i| samples[i].split == Split::Test).collect();
        Self { modalities, samples, manifest, train, test }
    }

    pub fn n_modalities(&self) -> usize {
        self.modalities.len()
    }

    pub fn resolution(&self) -> usize {
        self.samples.first().map(|s| s.x.height()).unwrap_or(0)
    }

    pub fn train_indices(&self) -> &[usize] {
        &self.train
    }

    pub fn test_indices(&self) -> &[usize] {
        &self.test
    }

    pub fn split(&self, split: Split, modality: Option<usize>) -> impl Iterator<Item = &Sample> {
        let idx = match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        };
        idx.iter()
            .map(|&i| &self.samples[i])
            .filter(move |s| modality.map_or(true, |m| s.modality.id == m))
    }

    /// The sample with the same id rendered in another modality.
    pub fn counterpart(&self, id: &str, modality: usize) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id && s.modality.id == modality)
    }

    pub fn modality_by_name(&self, name: &str) -> Option<&Modality> {
        self.modalities.iter().find(|m| m.name == name)
    }
}

/// Loads and normalises every sample listed in the manifest.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let manifest = DatasetManifest::read(manifest_path)?;
    let modalities: Vec<Modality> = manifest
        .modalities
        .iter()
        .enumerate()
        .map(|(i, n)| Modality::new(i, n.clone()))
        .collect();
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for rec in &manifest.samples {
        let x = read_image_png(&manifest.root.join(&rec.image))?;
        let mask_path = manifest.root.join(&rec.mask);
        let y = read_mask_png(&mask_path)?;
        if (x.height(), x.width()) != (y.height(), y.width()) {
            return Err(Error::Shape(format!(
                "{}: image {}x{} but mask {}x{}",
                mask_path.display(),
                x.height(),
                x.width(),
                y.height(),
                y.width()
            )));
        }
        if rec.split == Split::Train && y.count() == 0 {
            return Err(Error::Config(format!(
                "training sample {}/{} has an empty target mask",
                rec.modality, rec.id
            )));
        }
        let modality = modalities
            .iter()
            .find(|m| m.name == rec.modality)
            .cloned()
            .expect("validated modality");
        samples.push(Sample { id: rec.id.clone(), x, y, modality, split: rec.split });
    }
    let res = samples.first().map(|s| s.x.height());
    if samples.iter().any(|s| Some(s.x.height()) != res || s.x.width() != s.x.height()) {
        return Err(Error::Shape("all images must be square with one resolution".into()));
    }
    Ok(Dataset::new(modalities, samples, manifest))
}

fn open_png(path: &Path) -> Result<image::DynamicImage> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    image::open(path).map_err(|e| Error::CorruptImage {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

pub fn read_image_png(path: &Path) -> Result<ImageTensor> {
    let img = match open_png(path)? {
        image::DynamicImage::ImageLuma16(buf) => buf,
        other => {
            return Err(Error::CorruptImage {
                path: path.to_path_buf(),
                reason: format!("expected 16-bit grayscale, found {:?}", other.color()),
            })
        }
    };
    let (w, h) = img.dimensions();
    let values = img.pixels().map(|p| p.0[0] as f64 / 65535.0 * 2.0 - 1.0).collect();
    ImageTensor::new(h as usize, w as usize, values)
}

pub fn read_mask_png(path: &Path) -> Result<BinaryMask> {
    let img = match open_png(path)? {
        image::DynamicImage::ImageLuma8(buf) => buf,
        other => {
            return Err(Error::CorruptImage {
                path: path.to_path_buf(),
                reason: format!("expected 8-bit grayscale mask, found {:?}", other.color()),
            })
        }
    };
    let (w, h) = img.dimensions();
    let mut values = Vec::with_capacity((w * h) as usize);
    for p in img.pixels() {
        match p.0[0] {
            0 => values.push(0),
            255 => values.push(1),
            v => {
                return Err(Error::CorruptImage {
                    path: path.to_path_buf(),
                    reason: format!("mask value {v} is neither 0 nor 255"),
                })
            }
        }
    }
    BinaryMask::new(h as usize, w as usize, values)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

pub fn write_image_png(path: &Path, img: &ImageTensor) -> Result<()> {
    ensure_parent(path)?;
    let raw: Vec<u16> = img
        .values()
        .iter()
        .map(|&v| ((v.clamp(-1.0, 1.0) + 1.0) * 0.5 * 65535.0).round() as u16)
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(img.width() as u32, img.height() as u32, raw).expect("dims");
    buf.save(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(other.to_string())),
    })
}

pub fn write_mask_png(path: &Path, mask: &BinaryMask) -> Result<()> {
    ensure_parent(path)?;
    let raw: Vec<u8> = mask.values().iter().map(|&v| v * 255).collect();
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(mask.width() as u32, mask.height() as u32, raw).expect("dims");
    buf.save(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(other.to_string())),
    })
}
