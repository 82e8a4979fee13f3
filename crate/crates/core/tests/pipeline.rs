mod common;

use std::fs;

use common::{phantom_set, quick_config};
use gusl_core::image::{upscale, Pyramid};
use gusl_core::metrics::psnr;
use gusl_core::pipeline::restore_levels;
use gusl_core::{load_model, restore, save_model, train, GuslError, Image};

fn pairs(count: usize, size: usize, seed: u64) -> Vec<(Image, Image)> {
    let (clean, noisy) = phantom_set(count, size, seed, 1.0, 0.04);
    noisy.into_iter().zip(clean).collect()
}

#[test]
fn model_structure_follows_config() {
    let data = pairs(4, 64, 1);
    let out = train(&data, &quick_config(3)).unwrap();
    let m = &out.model;
    assert_eq!(m.levels.len(), 3);
    assert_eq!(m.levels.iter().map(|l| l.level).collect::<Vec<_>>(), vec![3, 2, 1]);
    // 16x16 coarsest level: 16 patches per image, 64 in total, k = 32
    assert_eq!(m.codebook.k(), 32);
    assert_eq!(out.predictions.len(), 3);
    assert_eq!(out.predictions[0][0].dims(), (16, 16));
    assert_eq!(out.predictions[2][3].dims(), (64, 64));
    for lm in &m.levels {
        assert_eq!(lm.candidate_width, 25 * (25 + 49 + 2));
        assert!(!lm.selected.is_empty());
    }
    assert_eq!(m.diagnostics.len(), 3);
    assert_eq!(m.diagnostics[0].candidates.len(), m.levels[0].candidate_width);
}

#[test]
fn inference_reproduces_training_predictions() {
    let data = pairs(3, 64, 2);
    let out = train(&data, &quick_config(3)).unwrap();
    for (j, (ldct, _)) in data.iter().enumerate() {
        let (seed, levels) = restore_levels(&out.model, ldct).unwrap();
        assert_eq!(seed, out.seeds[j]);
        for (k, p) in levels.iter().enumerate() {
            assert_eq!(p, &out.predictions[k][j]);
        }
    }
}

#[test]
fn identical_seeds_give_identical_model_directories() {
    let data = pairs(3, 64, 3);
    let cfg = quick_config(2);
    let a = train(&data, &cfg).unwrap().model;
    let b = train(&data, &cfg).unwrap().model;
    let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    save_model(&a, da.path()).unwrap();
    save_model(&b, db.path()).unwrap();
    for name in ["model.json", "tensors.bin", "diagnostics.json"] {
        assert_eq!(fs::read(da.path().join(name)).unwrap(), fs::read(db.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn saved_model_restores_bit_identically_and_guards_format() {
    let data = pairs(3, 48, 4);
    let model = train(&data, &quick_config(2)).unwrap().model;
    let dir = tempfile::tempdir().unwrap();
    save_model(&model, dir.path()).unwrap();
    let loaded = load_model(dir.path()).unwrap();
    assert_eq!(loaded, model);
    let (_, held_out) = phantom_set(2, 48, 90, 1.0, 0.04);
    for img in &held_out {
        let a = restore(&model, img).unwrap();
        let b = restore(&loaded, img).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    let tensors = dir.path().join("tensors.bin");
    let bytes = fs::read(&tensors).unwrap();
    fs::write(&tensors, &bytes[..bytes.len() - 8]).unwrap();
    assert!(matches!(load_model(dir.path()), Err(GuslError::Corruption(_))));
    fs::write(&tensors, &bytes).unwrap();

    let meta = dir.path().join("model.json");
    let text = fs::read_to_string(&meta).unwrap();
    fs::write(&meta, text.replace("gusl-model/1", "gusl-model/0")).unwrap();
    assert!(matches!(load_model(dir.path()), Err(GuslError::IncompatibleModel(_))));
}

#[test]
fn clean_inputs_beat_the_seed_chain() {
    let (clean, _) = phantom_set(4, 64, 5, 0.0, 0.0);
    let data: Vec<(Image, Image)> = clean.iter().map(|c| (c.clone(), c.clone())).collect();
    let cfg = quick_config(3);
    let out = train(&data, &cfg).unwrap();
    for (j, img) in clean.iter().enumerate() {
        let pyr = Pyramid::build(img, 3).unwrap();
        let mut chain = out.seeds[j].clone();
        for level in (1..3).rev() {
            let l = pyr.level(level);
            chain = upscale(&chain, l.height(), l.width()).unwrap();
        }
        let restored = restore(&out.model, img).unwrap();
        let seed_psnr = psnr(&chain, img, 1.0).unwrap();
        let restored_psnr = psnr(&restored, img, 1.0).unwrap_or(f64::INFINITY);
        assert!(restored_psnr >= seed_psnr, "{restored_psnr} < {seed_psnr}");
    }
}

#[test]
fn restore_is_total_and_pure() {
    let data = pairs(2, 64, 6);
    let model = train(&data, &quick_config(3)).unwrap().model;
    let flat = Image::filled(40, 56, 0.4);
    let out = restore(&model, &flat).unwrap();
    assert_eq!(out.dims(), (40, 56));
    assert!(out.data().iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
    assert_eq!(out, restore(&model, &flat).unwrap());
    let small = Image::from_fn(20, 9, |r, c| ((r + c) % 5) as f64 / 5.0);
    let out = restore(&model, &small).unwrap();
    assert_eq!(out.dims(), (20, 9));
    assert!(out.data().iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
}

#[test]
fn training_rejects_mismatched_pairs() {
    let mut data = pairs(2, 32, 7);
    data[1].1 = Image::filled(32, 30, 0.0);
    assert!(matches!(train(&data, &quick_config(2)), Err(GuslError::Shape(_))));
    let mut data = pairs(2, 32, 7);
    data[1] = (Image::filled(40, 40, 0.0), Image::filled(40, 40, 0.0));
    assert!(matches!(train(&data, &quick_config(2)), Err(GuslError::Shape(_))));
    assert!(matches!(train(&[], &quick_config(2)), Err(GuslError::InsufficientData(_))));
}
