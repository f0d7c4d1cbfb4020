//! Procedural desk-scale scenes for smoke runs and tests.

use std::path::Path;

use patchfield::attack::AttackConfig;
use patchfield::encoder::{EncoderKind, EncoderSpec};
use patchfield::image::Image;
use patchfield::region::{Region, RegionSet, SelectionPolicy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ExperimentConfig;
use crate::error::CliError;

pub struct DeskScene {
    pub scene: Image,
    pub target: Image,
    pub regions: RegionSet,
}

/// Smooth background plus a few flat rectangles.
fn paint(rng: &mut ChaCha8Rng, height: usize, width: usize) -> Image {
    let base: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.2..0.8));
    let tilt: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-0.2..0.2));
    let freq = rng.gen_range(1.0..3.0);
    let mut data = Vec::with_capacity(height * width * 3);
    for y in 0..height {
        let fy = y as f64 / height as f64;
        for x in 0..width {
            let fx = x as f64 / width as f64;
            let wave = 0.08 * (std::f64::consts::TAU * freq * (fx + 0.5 * fy)).sin();
            for c in 0..3 {
                data.push(base[c] + tilt[c] * (fy - 0.5) + wave);
            }
        }
    }
    for _ in 0..rng.gen_range(3..6) {
        let w = rng.gen_range(width / 8..width / 3).max(1);
        let h = rng.gen_range(height / 8..height / 3).max(1);
        let x0 = rng.gen_range(0..width - w);
        let y0 = rng.gen_range(0..height - h);
        let color: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.05..0.95));
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                let i = (y * width + x) * 3;
                data[i..i + 3].copy_from_slice(&color);
            }
        }
    }
    Image::from_clamped(height, width, data).expect("positive dims")
}

/// Scene, unrelated target, and three candidate regions; the second one sits
/// at a random position, is selected, and carries the highest score.
pub fn desk_scene(seed: u64, height: usize, width: usize) -> DeskScene {
    assert!(height >= 16 && width >= 16, "desk scenes need at least 16x16");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene = paint(&mut rng, height, width);
    let target = paint(&mut rng, height, width);

    let (wf, hf) = (width as f64, height as f64);
    let bw = (wf / 4.0).floor();
    let bh = (hf / 4.0).floor();
    let sx = rng.gen_range(0.0..=wf - bw).floor();
    let sy = rng.gen_range(0.0..=hf - bh).floor();
    let boxes = [[0.0, 0.0, bw, bh], [sx, sy, bw, bh], [wf - bw, hf - bh, bw, bh]];
    let labels = ["corner", "desk", "floor"];
    let scores = [0.2, 0.9, 0.4];
    let regions = boxes
        .iter()
        .zip(labels)
        .zip(scores)
        .enumerate()
        .map(|(i, ((bbox, label), score))| Region {
            id: i as i64 + 1,
            bbox: *bbox,
            label: label.to_string(),
            score: Some(score),
        })
        .collect();
    DeskScene {
        scene,
        target,
        regions: RegionSet {
            image_id: format!("desk-{seed}"),
            width,
            height,
            selected: Some(2),
            regions,
        },
    }
}

/// Two-member toy ensemble used by the generated configs.
pub fn desk_ensemble() -> Vec<EncoderSpec> {
    vec![
        EncoderSpec::toy(EncoderKind::ToyLinear, 0, 0, 1),
        EncoderSpec::toy(EncoderKind::ToyConv, 0, 0, 2),
    ]
}

pub fn desk_heldout() -> Vec<EncoderSpec> {
    vec![EncoderSpec::toy(EncoderKind::ToyLinear, 0, 0, 101)]
}

/// Writes `scene.png`, `target.png`, `regions.json` and `config.json` into
/// `dir`. The area threshold is `(size / 4)²` so the mask has room to shrink.
pub fn write_desk(dir: &Path, seed: u64, size: usize) -> Result<ExperimentConfig, CliError> {
    if size < 16 || !size.is_multiple_of(8) {
        return Err(CliError::config(format!(
            "desk size {size} must be a multiple of 8, at least 16"
        )));
    }
    std::fs::create_dir_all(dir).map_err(|e| CliError::runtime(format!("{}: {e}", dir.display())))?;
    let desk = desk_scene(seed, size, size);
    desk.scene.save_png(&dir.join("scene.png"))?;
    desk.target.save_png(&dir.join("target.png"))?;
    let write = |name: &str, text: String| {
        std::fs::write(dir.join(name), text + "\n").map_err(|e| CliError::runtime(format!("{name}: {e}")))
    };
    write(
        "regions.json",
        serde_json::to_string_pretty(&desk.regions).expect("serializable"),
    )?;
    let cfg = ExperimentConfig {
        scene: "scene.png".into(),
        target: "target.png".into(),
        regions: "regions.json".into(),
        selection: SelectionPolicy::Explicit,
        scorer_endpoint: None,
        palette: None,
        ensemble: desk_ensemble(),
        heldout: desk_heldout(),
        attack: AttackConfig {
            seed,
            area_threshold: (size / 4) * (size / 4),
            ..AttackConfig::default()
        },
    };
    write("config.json", serde_json::to_string_pretty(&cfg).expect("serializable"))?;
    Ok(cfg)
}
