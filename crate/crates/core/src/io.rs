//! Image files, dataset manifests and the model directory format.
//!
//! Raw images: two little-endian u32 (height, width) followed by height x width
//! little-endian f32 values, row-major.
//!
//! A model directory holds `model.json` (version, config, shapes and counts),
//! `tensors.bin` and `diagnostics.json`. `tensors.bin` is little-endian:
//! 1. codebook centroids (k x 16 f64), then output patches if present (k x 16 f64)
//! 2. per level, coarsest first:
//!    - LDCT Saab kernels (C x W^2 f64) and eigenvalues (C f64), then the same for the difference bank
//!    - selected column indices (u32 each)
//!    - per LNT projection: subset indices (u32), weights (f64), intercept (f64)
//!    - per tree, preorder nodes as two f64: feature index (-1 for leaves) and threshold or leaf weight

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, ImageFormat, ImageReader, Luma};
use serde::{Deserialize, Serialize};

use crate::codebook::Codebook;
use crate::error::{GuslError, Result};
use crate::gbrt::{GbrtModel, PreorderNode, Tree};
use crate::generate::{LntProjection, SfgModel};
use crate::image::Image;
use crate::pipeline::{GuslModel, LevelDiagnostics, LevelModel, TrainConfig, MODEL_VERSION};
use crate::saab::{SaabKernels, SaabShape};

pub const MODEL_FILE: &str = "model.json";
pub const TENSOR_FILE: &str = "tensors.bin";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";

/// Intensity window mapped affinely onto [0, 1].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub lo: f64,
    pub hi: f64,
}

impl Normalization {
    pub fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(GuslError::InvalidConfig(format!("normalization window [{}, {}] is empty", self.lo, self.hi)));
        }
        Ok(())
    }

    #[inline]
    fn map(&self, v: f64) -> f64 {
        ((v - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FileKind {
    Png,
    Pgm,
    Raw,
}

pub fn file_kind(path: &Path) -> Result<FileKind> {
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("png") => Ok(FileKind::Png),
        Some("pgm" | "pnm") => Ok(FileKind::Pgm),
        Some("raw" | "f32") => Ok(FileKind::Raw),
        _ => Err(GuslError::Format(format!("unsupported image extension: {}", path.display()))),
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name =
        path.file_name().ok_or_else(|| GuslError::InvalidInput(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn decode_raw(bytes: &[u8], window: Normalization) -> Result<Image> {
    if bytes.len() < 8 {
        return Err(GuslError::Format("raw image shorter than its header".into()));
    }
    let h = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let expected = h.checked_mul(w).and_then(|n| n.checked_mul(4)).and_then(|n| n.checked_add(8));
    if expected != Some(bytes.len()) || h == 0 || w == 0 {
        return Err(GuslError::Format(format!("raw header {h}x{w} does not match {} bytes", bytes.len())));
    }
    let data = bytes[8..]
        .chunks_exact(4)
        .map(|c| {
            let v = f32::from_le_bytes(c.try_into().unwrap()) as f64;
            if v.is_finite() {
                Ok(window.map(v))
            } else {
                Err(GuslError::Format("non-finite raw sample".into()))
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    Image::new(h, w, data)
}

fn decoded_to_image(img: DynamicImage, window: Option<Normalization>) -> Result<Image> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (values, native): (Vec<f64>, f64) = match img {
        DynamicImage::ImageLuma8(b) => (b.into_raw().into_iter().map(f64::from).collect(), u8::MAX as f64),
        DynamicImage::ImageLuma16(b) => (b.into_raw().into_iter().map(f64::from).collect(), u16::MAX as f64),
        other => return Err(GuslError::Format(format!("expected 8- or 16-bit grayscale, got {:?}", other.color()))),
    };
    let window = window.unwrap_or(Normalization { lo: 0.0, hi: native });
    Image::new(h, w, values.into_iter().map(|v| window.map(v)).collect())
}

/// Loads a grayscale PNG/PGM (8 or 16 bit) or raw f32 image, mapping `window`
/// (default: the format's native range, [0, 1] for raw) onto [0, 1].
pub fn load_image(path: &Path, window: Option<Normalization>) -> Result<Image> {
    if let Some(w) = window {
        w.validate()?;
    }
    match file_kind(path)? {
        FileKind::Raw => decode_raw(&fs::read(path)?, window.unwrap_or(Normalization { lo: 0.0, hi: 1.0 })),
        kind => {
            let format = if kind == FileKind::Png { ImageFormat::Png } else { ImageFormat::Pnm };
            let reader = ImageReader::with_format(std::io::BufReader::new(fs::File::open(path)?), format);
            let img = reader.decode().map_err(|e| GuslError::Format(format!("{}: {e}", path.display())))?;
            decoded_to_image(img, window)
        }
    }
}

pub fn encode_raw(img: &Image) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * img.len());
    out.extend_from_slice(&(img.height() as u32).to_le_bytes());
    out.extend_from_slice(&(img.width() as u32).to_le_bytes());
    for &v in img.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

/// Writes `img` (values in [0, 1]) by extension: raw f32, or 16-bit PNG/PGM.
pub fn save_image(path: &Path, img: &Image) -> Result<()> {
    let kind = file_kind(path)?;
    let bytes = match kind {
        FileKind::Raw => encode_raw(img),
        FileKind::Png | FileKind::Pgm => {
            let pixels: Vec<u16> =
                img.data().iter().map(|v| (v.clamp(0.0, 1.0) * u16::MAX as f64).round() as u16).collect();
            let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
                ImageBuffer::from_raw(img.width() as u32, img.height() as u32, pixels).expect("buffer matches dims");
            let mut out = Cursor::new(Vec::new());
            let format = if kind == FileKind::Png { ImageFormat::Png } else { ImageFormat::Pnm };
            DynamicImage::ImageLuma16(buf).write_to(&mut out, format).map_err(|e| GuslError::Format(e.to_string()))?;
            out.into_inner()
        }
    };
    write_atomic(path, &bytes)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub ldct_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ndct_path: Option<PathBuf>,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<Normalization>,
}

impl Manifest {
    /// Reads a manifest; relative paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut m: Manifest = serde_json::from_slice(&fs::read(path)?)?;
        if let Some(n) = m.normalization {
            n.validate()?;
        }
        let base = path.parent().unwrap_or(Path::new("."));
        for e in &mut m.entries {
            e.ldct_path = base.join(&e.ldct_path);
            if let Some(p) = &mut e.ndct_path {
                *p = base.join(&*p);
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &serde_json::to_vec_pretty(self)?)
    }

    pub fn entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// (LDCT, NDCT) pairs of the training split.
    pub fn training_pairs(&self) -> Result<Vec<(Image, Image)>> {
        let pairs: Vec<(Image, Image)> = self
            .entries(Split::Train)
            .map(|e| {
                let nd = e.ndct_path.as_ref().ok_or_else(|| {
                    GuslError::InvalidInput(format!("training entry {} has no ndct_path", e.ldct_path.display()))
                })?;
                Ok((load_image(&e.ldct_path, self.normalization)?, load_image(nd, self.normalization)?))
            })
            .collect::<Result<_>>()?;
        if pairs.is_empty() {
            return Err(GuslError::InsufficientData("manifest has no training entries".into()));
        }
        Ok(pairs)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LevelHeader {
    level: usize,
    saab_ldct: SaabShape,
    saab_diff: SaabShape,
    candidate_width: usize,
    selected: usize,
    /// Subset size per LNT projection; absent when feature generation was degenerate.
    projections: Option<Vec<usize>>,
    learning_rate: f64,
    base_score: f64,
    /// Preorder node count per tree.
    tree_nodes: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelHeader {
    version: String,
    config: TrainConfig,
    codebook_k: usize,
    codebook_targets: bool,
    levels: Vec<LevelHeader>,
    warnings: Vec<String>,
    tensor_bytes: usize,
}

#[derive(Default)]
struct TensorWriter {
    buf: Vec<u8>,
}

impl TensorWriter {
    fn f64s(&mut self, values: &[f64]) {
        for v in values {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn u32s(&mut self, values: &[usize]) {
        for &v in values {
            self.buf.extend_from_slice(&(v as u32).to_le_bytes());
        }
    }
}

struct TensorReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl TensorReader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            GuslError::Corruption(format!("{TENSOR_FILE} ends at byte {} while {} more are needed", self.buf.len(), n))
        })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self.take(n * 8)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(self.f64s(1)?[0])
    }

    fn u32s(&mut self, n: usize) -> Result<Vec<usize>> {
        Ok(self.take(n * 4)?.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize).collect())
    }
}

fn write_saab(t: &mut TensorWriter, s: &SaabKernels) {
    t.f64s(s.kernels());
    t.f64s(s.eigenvalues());
}

fn read_saab(r: &mut TensorReader, shape: &SaabShape) -> Result<SaabKernels> {
    let kernels = r.f64s(shape.channels * shape.window * shape.window)?;
    let eigenvalues = r.f64s(shape.channels)?;
    SaabKernels::from_parts(shape.window, kernels, eigenvalues, shape.degenerate)
}

fn encode_model(model: &GuslModel) -> (ModelHeader, Vec<u8>) {
    let mut t = TensorWriter::default();
    t.f64s(model.codebook.centroids());
    if let Some(targets) = model.codebook.targets() {
        t.f64s(targets);
    }
    let mut levels = Vec::with_capacity(model.levels.len());
    for lm in &model.levels {
        write_saab(&mut t, &lm.saab_ldct);
        write_saab(&mut t, &lm.saab_diff);
        t.u32s(&lm.selected);
        if let Some(sfg) = &lm.sfg {
            for p in sfg.projections() {
                t.u32s(&p.subset);
                t.f64s(&p.weights);
                t.f64s(&[p.intercept]);
            }
        }
        let mut tree_nodes = Vec::with_capacity(lm.regressor.trees().len());
        for tree in lm.regressor.trees() {
            let nodes = tree.preorder();
            tree_nodes.push(nodes.len());
            for n in nodes {
                t.f64s(&[n.feature.map_or(-1.0, |f| f as f64), n.value]);
            }
        }
        levels.push(LevelHeader {
            level: lm.level,
            saab_ldct: lm.saab_ldct.shape(),
            saab_diff: lm.saab_diff.shape(),
            candidate_width: lm.candidate_width,
            selected: lm.selected.len(),
            projections: lm.sfg.as_ref().map(|s| s.projections().iter().map(|p| p.subset.len()).collect()),
            learning_rate: lm.regressor.learning_rate(),
            base_score: lm.regressor.base_score(),
            tree_nodes,
        });
    }
    let header = ModelHeader {
        version: model.version.clone(),
        config: model.config.clone(),
        codebook_k: model.codebook.k(),
        codebook_targets: model.codebook.targets().is_some(),
        levels,
        warnings: model.warnings.clone(),
        tensor_bytes: t.buf.len(),
    };
    (header, t.buf)
}

pub fn save_model(model: &GuslModel, dir: &Path) -> Result<()> {
    model.check()?;
    fs::create_dir_all(dir)?;
    let (header, tensors) = encode_model(model);
    write_atomic(&dir.join(TENSOR_FILE), &tensors)?;
    write_atomic(&dir.join(DIAGNOSTICS_FILE), &serde_json::to_vec_pretty(&model.diagnostics)?)?;
    write_atomic(&dir.join(MODEL_FILE), &serde_json::to_vec_pretty(&header)?)
}

fn decode_node(pair: &[f64]) -> Result<PreorderNode> {
    let f = pair[0];
    let feature = if f == -1.0 {
        None
    } else if f >= 0.0 && f.fract() == 0.0 && f < u32::MAX as f64 {
        Some(f as usize)
    } else {
        return Err(GuslError::Corruption(format!("bad tree feature index {f}")));
    };
    Ok(PreorderNode { feature, value: pair[1] })
}

fn decode_model(header: ModelHeader, tensors: &[u8], diagnostics: Vec<LevelDiagnostics>) -> Result<GuslModel> {
    if tensors.len() != header.tensor_bytes {
        return Err(GuslError::Corruption(format!(
            "{TENSOR_FILE} has {} bytes, header records {}",
            tensors.len(),
            header.tensor_bytes
        )));
    }
    let mut r = TensorReader { buf: tensors, pos: 0 };
    let dim = crate::codebook::DIM;
    let centroids = r.f64s(header.codebook_k * dim)?;
    let targets = if header.codebook_targets { Some(r.f64s(header.codebook_k * dim)?) } else { None };
    let codebook = Codebook::from_parts(centroids, targets)?;
    let mut levels = Vec::with_capacity(header.levels.len());
    for lh in &header.levels {
        let saab_ldct = read_saab(&mut r, &lh.saab_ldct)?;
        let saab_diff = read_saab(&mut r, &lh.saab_diff)?;
        let selected = r.u32s(lh.selected)?;
        let sfg = match &lh.projections {
            Some(sizes) => {
                let mut projections = Vec::with_capacity(sizes.len());
                for &len in sizes {
                    let subset = r.u32s(len)?;
                    let weights = r.f64s(len)?;
                    let intercept = r.f64()?;
                    projections.push(LntProjection::new(subset, weights, intercept)?);
                }
                Some(SfgModel::new(projections, selected.len())?)
            }
            None => None,
        };
        let mut trees = Vec::with_capacity(lh.tree_nodes.len());
        for &count in &lh.tree_nodes {
            let flat = r.f64s(2 * count)?;
            let nodes = flat.chunks_exact(2).map(decode_node).collect::<Result<Vec<_>>>()?;
            let (tree, used) = Tree::from_preorder(&nodes)?;
            if used != count {
                return Err(GuslError::Corruption(format!("tree records {count} nodes but parses {used}")));
            }
            trees.push(tree);
        }
        let regressor = GbrtModel::from_parts(trees, lh.learning_rate, lh.base_score, header.config.residual.clone());
        levels.push(LevelModel {
            level: lh.level,
            saab_ldct,
            saab_diff,
            selected,
            candidate_width: lh.candidate_width,
            sfg,
            regressor,
        });
    }
    if r.pos != tensors.len() {
        return Err(GuslError::Corruption(format!("{} trailing bytes in {TENSOR_FILE}", tensors.len() - r.pos)));
    }
    let model = GuslModel {
        version: header.version,
        config: header.config,
        codebook,
        levels,
        diagnostics,
        warnings: header.warnings,
    };
    model.check()?;
    Ok(model)
}

pub fn load_model(dir: &Path) -> Result<GuslModel> {
    let raw: serde_json::Value = serde_json::from_slice(&fs::read(dir.join(MODEL_FILE))?)?;
    match raw.get("version").and_then(|v| v.as_str()) {
        Some(MODEL_VERSION) => {}
        other => {
            return Err(GuslError::IncompatibleModel(format!(
                "model version {} (expected {MODEL_VERSION})",
                other.unwrap_or("<missing>")
            )))
        }
    }
    let header: ModelHeader = serde_json::from_value(raw)?;
    let tensors = fs::read(dir.join(TENSOR_FILE))?;
    let diag_path = dir.join(DIAGNOSTICS_FILE);
    let diagnostics = if diag_path.exists() { serde_json::from_slice(&fs::read(diag_path)?)? } else { Vec::new() };
    decode_model(header, &tensors, diagnostics)
}
