use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gusl_core::diagnostics::{write_candidates_csv, write_eval_csv, write_lnt_csv, EvalRow, ImageScore};
use gusl_core::io::{file_kind, ManifestEntry, Split};
use gusl_core::synth::{phantom, synth_degrade, DegradeParams};
use gusl_core::{
    load_image, load_model, report_complexity, restore, save_image, save_model, train, GuslError, Manifest,
    Normalization, Result, TrainConfig,
};
use log::info;

#[derive(Parser)]
#[command(name = "gusl", version, about = "Coarse-to-fine residual image restoration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model on the training split of a manifest.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// JSON file with TrainConfig keys; omitted keys take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Restore one image.
    Restore {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        window: WindowArgs,
    },
    /// PSNR/SSIM of inputs and restorations on the test split of a manifest.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Degrade clean images (or generated phantoms) and write a manifest.
    Synth {
        /// Directory of clean images.
        #[arg(long = "in", conflicts_with = "phantoms", required_unless_present = "phantoms")]
        input: Option<PathBuf>,
        /// Number of procedural phantoms to generate instead of reading --in.
        #[arg(long)]
        phantoms: Option<usize>,
        /// Phantom edge length.
        #[arg(long, default_value_t = 128)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        blur: f64,
        #[arg(long, default_value_t = 0.04)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Share of images (taken from the end) placed in the test split.
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
    },
    /// Export the feature-selection diagnostics of one level.
    Inspect {
        #[arg(long)]
        model: PathBuf,
        /// Pyramid level, 1 = finest.
        #[arg(long)]
        level: usize,
        /// Candidate table; LNT losses go to a sibling `<stem>_lnt.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print parameter count and MACs per pixel.
    Complexity {
        #[arg(long)]
        model: PathBuf,
        /// Full per-level breakdown as JSON.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct WindowArgs {
    /// Intensity mapped to 0; native range when omitted.
    #[arg(long, requires = "hi", allow_hyphen_values = true)]
    lo: Option<f64>,
    /// Intensity mapped to 1.
    #[arg(long, requires = "lo", allow_hyphen_values = true)]
    hi: Option<f64>,
}

impl WindowArgs {
    fn normalization(&self) -> Result<Option<Normalization>> {
        match (self.lo, self.hi) {
            (Some(lo), Some(hi)) => {
                let n = Normalization { lo, hi };
                n.validate()?;
                Ok(Some(n))
            }
            _ => Ok(None),
        }
    }
}

fn cmd_train(manifest: &Path, config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut cfg: TrainConfig = match config {
        Some(p) => serde_json::from_slice(&fs::read(p)?)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let pairs = Manifest::load(manifest)?.training_pairs()?;
    info!("training on {} pairs", pairs.len());
    let model = train(&pairs, &cfg)?.model;
    save_model(&model, out)?;
    for w in &model.warnings {
        log::warn!("{w}");
    }
    println!("model written to {}", out.display());
    Ok(())
}

fn cmd_restore(model: &Path, input: &Path, out: &Path, window: &WindowArgs) -> Result<()> {
    let model = load_model(model)?;
    let img = load_image(input, window.normalization()?)?;
    save_image(out, &restore(&model, &img)?)
}

fn entry_name(e: &ManifestEntry) -> String {
    e.ldct_path.file_name().map_or_else(|| e.ldct_path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn cmd_eval(model: &Path, manifest: &Path, report: &Path) -> Result<()> {
    let model = load_model(model)?;
    let m = Manifest::load(manifest)?;
    let mut rows = Vec::new();
    for e in m.entries(Split::Test) {
        let Some(nd) = &e.ndct_path else {
            log::warn!("skipping {}: no reference image", e.ldct_path.display());
            continue;
        };
        let ldct = load_image(&e.ldct_path, m.normalization)?;
        let ndct = load_image(nd, m.normalization)?;
        let restored = restore(&model, &ldct)?;
        rows.push(EvalRow {
            name: entry_name(e),
            input: ImageScore::compute(&ldct, &ndct)?,
            restored: ImageScore::compute(&restored, &ndct)?,
        });
    }
    if rows.is_empty() {
        return Err(GuslError::InsufficientData("manifest has no test entries with a reference".into()));
    }
    write_eval_csv(&rows, m.normalization, report)?;
    let mean = |f: &dyn Fn(&EvalRow) -> f64| rows.iter().map(f).sum::<f64>() / rows.len() as f64;
    let psnr = |s: &ImageScore| s.psnr.unwrap_or(f64::INFINITY);
    println!(
        "{} images: PSNR {:.2} -> {:.2} dB, SSIM {:.4} -> {:.4}",
        rows.len(),
        mean(&|r| psnr(&r.input)),
        mean(&|r| psnr(&r.restored)),
        mean(&|r| r.input.ssim),
        mean(&|r| r.restored.ssim),
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_synth(
    input: Option<&Path>,
    phantoms: Option<usize>,
    size: usize,
    out: &Path,
    blur: f64,
    noise: f64,
    seed: u64,
    test_fraction: f64,
) -> Result<()> {
    if !(0.0..=1.0).contains(&test_fraction) {
        return Err(GuslError::InvalidConfig(format!("test fraction must lie in [0, 1], got {test_fraction}")));
    }
    let clean: Vec<(String, gusl_core::Image)> = match (input, phantoms) {
        (Some(dir), _) => {
            let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<Vec<_>>>()?
                .into_iter()
                .filter(|p| p.is_file() && file_kind(p).is_ok())
                .collect();
            paths.sort();
            paths
                .iter()
                .map(|p| Ok((p.file_name().unwrap().to_string_lossy().into_owned(), load_image(p, None)?)))
                .collect::<Result<_>>()?
        }
        (None, Some(n)) => {
            (0..n).map(|i| (format!("phantom_{i:04}.png"), phantom(size, seed.wrapping_add(i as u64)))).collect()
        }
        (None, None) => unreachable!("clap requires --in or --phantoms"),
    };
    if clean.is_empty() {
        return Err(GuslError::InsufficientData("no input images".into()));
    }
    let (ldct_dir, ndct_dir) = (out.join("ldct"), out.join("ndct"));
    fs::create_dir_all(&ldct_dir)?;
    fs::create_dir_all(&ndct_dir)?;
    let test_count = (clean.len() as f64 * test_fraction).round() as usize;
    let mut entries = Vec::with_capacity(clean.len());
    for (i, (name, img)) in clean.iter().enumerate() {
        let p = DegradeParams { blur_sigma: blur, noise_sigma: noise, seed: seed.wrapping_add(i as u64) };
        let degraded = synth_degrade(img, &p)?;
        save_image(&ldct_dir.join(name), &degraded)?;
        save_image(&ndct_dir.join(name), img)?;
        let split = if i + test_count >= clean.len() { Split::Test } else { Split::Train };
        entries.push(ManifestEntry {
            ldct_path: Path::new("ldct").join(name),
            ndct_path: Some(Path::new("ndct").join(name)),
            split,
        });
    }
    Manifest { entries, normalization: None }.save(&out.join("manifest.json"))?;
    println!("{} images ({} test) written to {}", clean.len(), test_count, out.display());
    Ok(())
}

fn cmd_inspect(model: &Path, level: usize, out: &Path) -> Result<()> {
    let model = load_model(model)?;
    let d = model
        .diagnostics
        .iter()
        .find(|d| d.level == level)
        .ok_or_else(|| GuslError::InvalidInput(format!("model has no diagnostics for level {level}")))?;
    write_candidates_csv(d, out)?;
    let stem = out.file_stem().map_or_else(|| "inspect".into(), |s| s.to_string_lossy().into_owned());
    write_lnt_csv(d, &out.with_file_name(format!("{stem}_lnt.csv")))
}

fn cmd_complexity(model: &Path, json: bool) -> Result<()> {
    let c = report_complexity(&load_model(model)?);
    if json {
        println!("{}", serde_json::to_string_pretty(&c)?);
    } else {
        println!("param_count {}", c.param_count);
        println!("macs_per_pixel {}", c.macs_per_pixel);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { manifest, config, seed, out } => cmd_train(&manifest, config.as_deref(), seed, &out),
        Command::Restore { model, input, out, window } => cmd_restore(&model, &input, &out, &window),
        Command::Eval { model, manifest, report } => cmd_eval(&model, &manifest, &report),
        Command::Synth { input, phantoms, size, out, blur, noise, seed, test_fraction } => {
            cmd_synth(input.as_deref(), phantoms, size, &out, blur, noise, seed, test_fraction)
        }
        Command::Inspect { model, level, out } => cmd_inspect(&model, level, &out),
        Command::Complexity { model, json } => cmd_complexity(&model, json),
    }
}

fn error_line(category: &str, message: &str) -> String {
    serde_json::json!({ "error": category, "message": message }).to_string()
}

fn configure_threads() -> std::result::Result<(), String> {
    let Ok(v) = std::env::var("GUSL_THREADS") else { return Ok(()) };
    let n: usize = v.trim().parse().map_err(|_| format!("GUSL_THREADS must be a non-negative integer, got {v:?}"))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(msg) = configure_threads() {
        eprintln!("{}", error_line("usage", &msg));
        return ExitCode::from(2);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(e.category(), &e.to_string()));
            ExitCode::FAILURE
        }
    }
}
