//! CSV exports of training diagnostics and evaluation tables.

use std::path::Path;

use crate::error::{GuslError, Result};
use crate::image::Image;
use crate::io::{write_atomic, Normalization};
use crate::metrics::{psnr, ssim};
use crate::pipeline::LevelDiagnostics;

fn finish(w: csv::Writer<Vec<u8>>, path: &Path) -> Result<()> {
    let bytes = w.into_inner().map_err(|e| GuslError::Io(e.into_error()))?;
    write_atomic(path, &bytes)
}

/// One row per candidate column: losses and ranks on both subsets, joint score
/// and whether the column was kept.
pub fn write_candidates_csv(d: &LevelDiagnostics, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "column",
        "origin",
        "train_loss",
        "train_rank",
        "val_loss",
        "val_rank",
        "joint_score",
        "radius",
        "selected",
    ])?;
    let s = &d.selection;
    let (rt, rv) = (s.train.ranks(), s.validation.ranks());
    let mut kept = vec![false; d.candidates.len()];
    for &j in &s.selected {
        kept[j] = true;
    }
    for (j, origin) in d.candidates.iter().enumerate() {
        w.write_record([
            j.to_string(),
            origin.describe(),
            s.train.losses[j].to_string(),
            rt[j].to_string(),
            s.validation.losses[j].to_string(),
            rv[j].to_string(),
            s.joint[j].to_string(),
            s.radius.to_string(),
            u8::from(kept[j]).to_string(),
        ])?;
    }
    finish(w, path)
}

/// RFT loss of every generated feature, in generation order.
pub fn write_lnt_csv(d: &LevelDiagnostics, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["projection", "loss"])?;
    for (i, l) in d.lnt_losses.iter().enumerate() {
        w.write_record([i.to_string(), l.to_string()])?;
    }
    finish(w, path)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageScore {
    /// `None` when the two images are identical.
    pub psnr: Option<f64>,
    pub ssim: f64,
}

impl ImageScore {
    pub fn compute(img: &Image, reference: &Image) -> Result<Self> {
        let psnr = match psnr(img, reference, 1.0) {
            Ok(v) => Some(v),
            Err(GuslError::IdenticalImages) => None,
            Err(e) => return Err(e),
        };
        Ok(Self { psnr, ssim: ssim(img, reference)? })
    }

    fn psnr_text(&self) -> String {
        self.psnr.map_or("inf".to_string(), |v| v.to_string())
    }

    fn status(&self) -> &'static str {
        if self.psnr.is_none() {
            "identical-images"
        } else {
            "ok"
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub name: String,
    pub input: ImageScore,
    pub restored: ImageScore,
}

fn mean_psnr(scores: &[&ImageScore]) -> String {
    if scores.iter().any(|s| s.psnr.is_none()) {
        return "inf".into();
    }
    (scores.iter().map(|s| s.psnr.unwrap()).sum::<f64>() / scores.len() as f64).to_string()
}

fn mean_ssim(scores: &[&ImageScore]) -> f64 {
    scores.iter().map(|s| s.ssim).sum::<f64>() / scores.len() as f64
}

/// Per-image PSNR/SSIM of the input and restored images against the reference,
/// followed by a `mean` row.
pub fn write_eval_csv(rows: &[EvalRow], window: Option<Normalization>, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "image",
        "ldct_psnr",
        "ldct_ssim",
        "ldct_status",
        "restored_psnr",
        "restored_ssim",
        "restored_status",
        "window_lo",
        "window_hi",
    ])?;
    let (lo, hi) =
        window.map_or(("native".to_string(), "native".to_string()), |n| (n.lo.to_string(), n.hi.to_string()));
    for r in rows {
        w.write_record([
            r.name.clone(),
            r.input.psnr_text(),
            r.input.ssim.to_string(),
            r.input.status().to_string(),
            r.restored.psnr_text(),
            r.restored.ssim.to_string(),
            r.restored.status().to_string(),
            lo.clone(),
            hi.clone(),
        ])?;
    }
    if !rows.is_empty() {
        let inputs: Vec<&ImageScore> = rows.iter().map(|r| &r.input).collect();
        let restored: Vec<&ImageScore> = rows.iter().map(|r| &r.restored).collect();
        w.write_record([
            "mean".to_string(),
            mean_psnr(&inputs),
            mean_ssim(&inputs).to_string(),
            String::new(),
            mean_psnr(&restored),
            mean_ssim(&restored).to_string(),
            String::new(),
            lo,
            hi,
        ])?;
    }
    finish(w, path)
}
