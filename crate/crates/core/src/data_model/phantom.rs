//! Ellipse phantoms rendered under several modality intensity maps.
//!
//! An anatomy assigns every body pixel a tissue level in `[0, 1]`. Each
//! modality renders the same anatomy through its own strictly increasing
//! piecewise-linear transfer map, so the ground-truth translation between two
//! modalities is `T_t ∘ T_s⁻¹` on the body and identity on the background.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::{write_image_png, write_mask_png, DatasetManifest, SampleRecord, Split};
use super::{BinaryMask, ImageTensor, Modality};
use crate::error::{Error, Result};

/// Strictly increasing piecewise-linear bijection of `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferMap {
    /// `(input, output)` knots, starting at `(0, 0)` and ending at `(1, 1)`.
    pub knots: Vec<(f64, f64)>,
}

impl TransferMap {
    pub fn identity() -> Self {
        Self { knots: vec![(0.0, 0.0), (1.0, 1.0)] }
    }

    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self> {
        let map = Self { knots };
        map.validate()?;
        Ok(map)
    }

    pub fn validate(&self) -> Result<()> {
        let k = &self.knots;
        if k.len() < 2 || k[0] != (0.0, 0.0) || k[k.len() - 1] != (1.0, 1.0) {
            return Err(Error::Config("transfer map must run from (0, 0) to (1, 1)".into()));
        }
        if k.windows(2).any(|w| !(w[1].0 > w[0].0 && w[1].1 > w[0].1)) {
            return Err(Error::Config("transfer map knots must be strictly increasing".into()));
        }
        Ok(())
    }

    fn interp(pairs: impl Iterator<Item = (f64, f64)> + Clone, v: f64) -> f64 {
        let v = v.clamp(0.0, 1.0);
        let mut prev = (0.0, 0.0);
        for (x, y) in pairs {
            if v <= x {
                let t = if x > prev.0 { (v - prev.0) / (x - prev.0) } else { 0.0 };
                return prev.1 + t * (y - prev.1);
            }
            prev = (x, y);
        }
        1.0
    }

    pub fn apply(&self, level: f64) -> f64 {
        Self::interp(self.knots.iter().copied(), level)
    }

    pub fn invert(&self, intensity: f64) -> f64 {
        Self::interp(self.knots.iter().map(|&(x, y)| (y, x)), intensity)
    }
}

/// Parameters of the phantom corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub resolution: usize,
    pub n_modalities: usize,
    pub n_anatomies: usize,
    /// Inclusive range of organs per anatomy, target organ included.
    pub organ_count_range: (usize, usize),
    /// Tissue level of the target organ; rendered per modality through its transfer map.
    pub target_organ_level: f64,
    pub modality_transfer: Vec<TransferMap>,
    /// Standard deviation of additive noise in normalised units, truncated at 3 sigma.
    pub noise_sigma: f64,
    pub train_fraction: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self::with_modalities(3)
    }
}

impl PhantomSpec {
    /// Default corpus with `n` modalities: 64x64, 60 anatomies, 2-5 organs.
    pub fn with_modalities(n: usize) -> Self {
        Self {
            resolution: 64,
            n_modalities: n,
            n_anatomies: 60,
            organ_count_range: (2, 5),
            target_organ_level: 0.68,
            modality_transfer: (0..n).map(default_transfer).collect(),
            noise_sigma: 0.02,
            train_fraction: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_modalities < 2 {
            return fail("n_modalities must be at least 2");
        }
        if self.modality_transfer.len() != self.n_modalities {
            return fail("modality_transfer needs one map per modality");
        }
        for map in &self.modality_transfer {
            map.validate()?;
        }
        if self.resolution < 8 {
            return fail("resolution must be at least 8");
        }
        if self.n_anatomies == 0 {
            return fail("n_anatomies must be positive");
        }
        let (lo, hi) = self.organ_count_range;
        if lo < 1 || hi < lo {
            return fail("organ_count_range must be a nonempty interval starting at >= 1");
        }
        if !(0.0..0.1).contains(&self.noise_sigma) {
            return fail("noise_sigma must lie in [0, 0.1)");
        }
        if !(0.4..=0.9).contains(&self.target_organ_level) {
            return fail("target_organ_level must lie in [0.4, 0.9]");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return fail("train_fraction must lie in (0, 1)");
        }
        Ok(())
    }

    /// Rendered target-organ intensity of modality `m` in `[0, 1]` units.
    pub fn target_organ_intensity(&self, m: usize) -> f64 {
        self.modality_transfer[m].apply(self.target_organ_level)
    }

    pub fn modalities(&self) -> Vec<Modality> {
        Modality::default_set(self.n_modalities)
    }
}

fn default_transfer(m: usize) -> TransferMap {
    let knots = match m {
        0 => vec![(0.0, 0.0), (1.0, 1.0)],
        1 => vec![(0.0, 0.0), (0.3, 0.55), (0.6, 0.8), (1.0, 1.0)],
        2 => vec![(0.0, 0.0), (0.4, 0.2), (0.7, 0.4), (1.0, 1.0)],
        _ => {
            // gamma-like curves alternating between brightening and darkening
            let gamma = if m % 2 == 1 { 0.75 / (1.0 + 0.1 * m as f64) } else { 1.5 + 0.1 * m as f64 };
            (0..=4)
                .map(|i| {
                    let x = i as f64 / 4.0;
                    (x, x.powf(gamma))
                })
                .collect()
        }
    };
    TransferMap { knots }
}

/// Tissue layout shared by every modality rendering of one subject.
#[derive(Clone, Debug, PartialEq)]
pub struct Anatomy {
    pub resolution: usize,
    /// Tissue level per pixel; `None` outside the body.
    pub levels: Vec<Option<f64>>,
    pub body: BinaryMask,
    pub target: BinaryMask,
}

#[derive(Clone, Copy)]
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
        let dy = y - self.cy;
        let dx = x - self.cx;
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.rx).powi(2) + (v / self.ry).powi(2) <= 1.0
    }
}

/// Draws one anatomy: an elliptical body with 2-5 elliptical organs, one of
/// which (painted last, fully visible) is the target.
pub fn generate_phantom_anatomy(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> Anatomy {
    let r = spec.resolution as f64;
    let centre = r / 2.0 - 0.5;
    let body = Ellipse {
        cy: centre + rng.gen_range(-0.03..0.03) * r,
        cx: centre + rng.gen_range(-0.03..0.03) * r,
        ry: rng.gen_range(0.36..0.44) * r,
        rx: rng.gen_range(0.40..0.47) * r,
        angle: rng.gen_range(-0.2..0.2),
    };
    let body_level = rng.gen_range(0.25..0.35);

    let inside_body = |rng: &mut ChaCha8Rng, shrink: f64| {
        let t = rng.gen_range(0.0..2.0 * PI);
        let rad = rng.gen_range(0.0..1.0f64).sqrt() * shrink;
        let (s, c) = body.angle.sin_cos();
        let u = rad * body.rx * t.cos();
        let v = rad * body.ry * t.sin();
        (body.cy + s * u + c * v, body.cx + c * u - s * v)
    };

    let (lo, hi) = spec.organ_count_range;
    let n_organs = rng.gen_range(lo..=hi);
    let mut organs: Vec<(Ellipse, f64)> = Vec::new();
    for _ in 0..n_organs.saturating_sub(1) {
        let (cy, cx) = inside_body(rng, 0.7);
        let e = Ellipse {
            cy,
            cx,
            ry: rng.gen_range(0.05..0.11) * r,
            rx: rng.gen_range(0.05..0.11) * r,
            angle: rng.gen_range(0.0..PI),
        };
        // keep other tissue levels clear of the target level
        let level = if rng.gen_bool(0.5) {
            rng.gen_range(0.40..0.54)
        } else {
            rng.gen_range(0.82..0.95)
        };
        organs.push((e, level));
    }
    let (cy, cx) = inside_body(rng, 0.45);
    let target = Ellipse {
        cy,
        cx,
        ry: rng.gen_range(0.12..0.18) * r,
        rx: rng.gen_range(0.14..0.22) * r,
        angle: rng.gen_range(0.0..PI),
    };

    let n = spec.resolution;
    let mut levels = vec![None; n * n];
    let mut body_mask = vec![0u8; n * n];
    let mut target_mask = vec![0u8; n * n];
    for row in 0..n {
        for col in 0..n {
            let (y, x) = (row as f64, col as f64);
            if !body.contains(y, x) {
                continue;
            }
            let i = row * n + col;
            body_mask[i] = 1;
            let mut level = body_level;
            for (e, l) in &organs {
                if e.contains(y, x) {
                    level = *l;
                }
            }
            if target.contains(y, x) {
                level = spec.target_organ_level;
                target_mask[i] = 1;
            }
            levels[i] = Some(level);
        }
    }
    // the target centre lies inside the body, so the mask is never empty
    let (tr, tc) = (target.cy.round() as usize, target.cx.round() as usize);
    if target_mask.iter().all(|&v| v == 0) && body_mask[tr * n + tc] == 1 {
        target_mask[tr * n + tc] = 1;
        levels[tr * n + tc] = Some(spec.target_organ_level);
    }

    Anatomy {
        resolution: n,
        levels,
        body: BinaryMask::new(n, n, body_mask).expect("binary"),
        target: BinaryMask::new(n, n, target_mask).expect("binary"),
    }
}

/// Quantises a normalised value onto the 16-bit grid used on disk.
pub(crate) fn quantize16(v: f64) -> f64 {
    let q = ((v.clamp(-1.0, 1.0) + 1.0) * 0.5 * 65535.0).round();
    q / 65535.0 * 2.0 - 1.0
}

impl Anatomy {
    /// Noise-free rendering in modality `m`.
    pub fn render_clean(&self, spec: &PhantomSpec, m: usize) -> ImageTensor {
        let map = &spec.modality_transfer[m];
        let values = self
            .levels
            .iter()
            .map(|l| match l {
                Some(level) => 2.0 * map.apply(*level) - 1.0,
                None => -1.0,
            })
            .collect();
        ImageTensor::new(self.resolution, self.resolution, values).expect("in range")
    }

    /// Rendering with truncated Gaussian noise on the body, quantised to 16 bits.
    pub fn render(&self, spec: &PhantomSpec, m: usize, rng: &mut ChaCha8Rng) -> ImageTensor {
        let clean = self.render_clean(spec, m);
        let sigma = spec.noise_sigma;
        let normal = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
        let values = clean
            .values()
            .iter()
            .zip(self.body.values())
            .map(|(&v, &inside)| {
                if inside == 0 {
                    return -1.0;
                }
                let noise = if sigma > 0.0 {
                    normal.sample(rng).clamp(-3.0 * sigma, 3.0 * sigma)
                } else {
                    0.0
                };
                quantize16(v + noise)
            })
            .collect();
        ImageTensor::new(self.resolution, self.resolution, values).expect("in range")
    }
}

/// Per-anatomy random stream, independent of how many anatomies precede it.
fn anatomy_rng(seed: u64, anatomy: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(anatomy as u64 + 1);
    rng
}

pub(crate) fn anatomy_id(a: usize) -> String {
    format!("a{a:04}")
}

/// Writes the phantom corpus under `root` and returns its manifest.
///
/// Every anatomy is rendered once per modality under the same sample id, so
/// ground-truth cross-modality pairs are recovered by id. Splits are by
/// anatomy.
pub fn generate_phantom_dataset(
    spec: &PhantomSpec,
    seed: u64,
    root: &Path,
) -> Result<DatasetManifest> {
    spec.validate()?;
    let modalities = spec.modalities();
    for m in &modalities {
        for sub in ["images", "masks"] {
            let dir = root.join(sub).join(&m.name);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
    }

    let mut split_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..spec.n_anatomies).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut split_rng);
    let n_train = ((spec.n_anatomies as f64) * spec.train_fraction).round() as usize;
    let n_train = n_train.clamp(1.min(spec.n_anatomies), spec.n_anatomies);
    let mut split_of = vec![Split::Test; spec.n_anatomies];
    for &a in &order[..n_train] {
        split_of[a] = Split::Train;
    }

    let mut samples = Vec::with_capacity(spec.n_anatomies * spec.n_modalities);
    for a in 0..spec.n_anatomies {
        let mut rng = anatomy_rng(seed, a);
        let anatomy = generate_phantom_anatomy(spec, &mut rng);
        let id = anatomy_id(a);
        for m in &modalities {
            let image = anatomy.render(spec, m.id, &mut rng);
            let image_rel = format!("images/{}/{id}.png", m.name);
            let mask_rel = format!("masks/{}/{id}.png", m.name);
            write_image_png(&root.join(&image_rel), &image)?;
            write_mask_png(&root.join(&mask_rel), &anatomy.target)?;
            samples.push(SampleRecord {
                id: id.clone(),
                modality: m.name.clone(),
                image: image_rel,
                mask: mask_rel,
                split: split_of[a],
            });
        }
    }

    let manifest = DatasetManifest {
        root: root.to_path_buf(),
        modalities: modalities.iter().map(|m| m.name.clone()).collect(),
        samples,
    };
    manifest.write()?;
    let spec_path = root.join("phantom.json");
    let meta = serde_json::json!({ "spec": spec, "seed": seed });
    fs::write(&spec_path, serde_json::to_string_pretty(&meta).expect("serialisable"))
        .map_err(|e| Error::io(&spec_path, e))?;
    Ok(manifest)
}

/// Reads the generator parameters stored next to a phantom manifest.
pub fn read_phantom_spec(root: &Path) -> Result<(PhantomSpec, u64)> {
    #[derive(Deserialize)]
    struct Meta {
        spec: PhantomSpec,
        seed: u64,
    }
    let path = root.join("phantom.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: Meta = serde_json::from_str(&text).map_err(|e| Error::Json { path, source: e })?;
    Ok((meta.spec, meta.seed))
}
