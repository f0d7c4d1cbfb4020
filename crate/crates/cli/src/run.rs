use std::path::{Path, PathBuf};

use patchfield::attack::{
    eval_transfer, run_attack, Ablation, AttackError, AttackResult, Mode, Palette, TransferMetric,
};
use patchfield::encoder::{build_encoder, BridgeClient, BridgeScorer, Encoder, EncoderSpec};
use patchfield::image::{mask_area, Image, CHANNELS};
use patchfield::region::{load_regions, select_region, Region, RegionScorer};

use crate::config::{load_heldout, sized_spec, ExperimentConfig};
use crate::error::CliError;
use crate::report::*;

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub mode: Option<Mode>,
    pub ablation: Ablation,
    pub out: PathBuf,
    /// Replace an existing output directory.
    pub force: bool,
}

/// Inputs loaded and checked, ready for the optimizer.
pub struct Prepared {
    pub scene: Image,
    pub target: Image,
    pub region: Region,
    pub specs: Vec<EncoderSpec>,
    pub ensemble: Vec<Box<dyn Encoder>>,
    pub palette: Option<Palette>,
}

pub fn apply_overrides(cfg: &mut ExperimentConfig, opts: &RunOptions) {
    if let Some(seed) = opts.seed {
        cfg.attack.seed = seed;
    }
    if let Some(mode) = opts.mode {
        cfg.attack.mode = mode;
    }
    cfg.attack.ablation = opts.ablation;
}

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::input(format!("{what} {} does not exist", path.display())))
    }
}

pub fn build_ensemble(specs: &[EncoderSpec]) -> Result<Vec<Box<dyn Encoder>>, CliError> {
    specs.iter().map(|s| build_encoder(s).map_err(CliError::from)).collect()
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared, CliError> {
    require_file(&cfg.scene, "scene image")?;
    require_file(&cfg.target, "target image")?;
    require_file(&cfg.regions, "region file")?;
    let scene = Image::load_png(&cfg.scene)?;
    let target = Image::load_png(&cfg.target)?;
    if scene.dims() != target.dims() {
        return Err(CliError::input(format!(
            "scene is {:?} but target is {:?}",
            scene.dims(),
            target.dims()
        )));
    }
    let (h, w) = scene.dims();
    let regions = load_regions(&cfg.regions)?;
    if (regions.height, regions.width) != (h, w) {
        return Err(CliError::input(format!(
            "region file describes {}x{} but the scene is {w}x{h}",
            regions.width, regions.height
        )));
    }

    let client = cfg
        .scorer_endpoint
        .as_deref()
        .and_then(|ep| match BridgeClient::connect(ep) {
            Ok(c) => Some(c),
            Err(e) => {
                log::warn!("region scorer at {ep} unavailable: {e}");
                None
            }
        });
    let scorer = client.as_ref().map(|client| BridgeScorer { client, image: &scene });
    let region = select_region(&regions, cfg.selection, scorer.as_ref().map(|s| s as &dyn RegionScorer))?;

    let specs: Vec<EncoderSpec> = cfg.ensemble.iter().map(|s| sized_spec(s, h, w)).collect();
    let ensemble = build_ensemble(&specs)?;
    let palette = match &cfg.palette {
        Some(p) => {
            require_file(p, "palette")?;
            Some(Palette::load(p).map_err(|e| CliError::input(format!("{}: {e}", p.display())))?)
        }
        None => None,
    };
    Ok(Prepared {
        scene,
        target,
        region,
        specs,
        ensemble,
        palette,
    })
}

fn linf(a: &Image, b: &Image) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn build_report(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    res: &AttackResult,
    transfer: Vec<TransferMetric>,
    error: Option<String>,
) -> Report {
    let completed = error.is_none();
    let encoders = prep
        .specs
        .iter()
        .enumerate()
        .map(|(i, s)| EncoderSummary {
            index: i,
            kind: s.kind,
            seed: s.seed,
            clean: res.clean_cosines[i],
            adversarial: res.adversarial_cosines.get(i).copied(),
        })
        .collect();
    let r = &prep.region;
    Report {
        schema_version: REPORT_SCHEMA_VERSION,
        variant: res.config.ablation.name().to_string(),
        local_loss_mode: res.config.local_mode(),
        mode: res.config.mode,
        seed: res.seed,
        stop_reason: res.stop_reason,
        error,
        iterations_run: res.trace.len(),
        region: RegionSummary {
            id: r.id,
            label: r.label.clone(),
            bbox: r.bbox,
            centroid: [res.center.0, res.center.1],
        },
        summary: Summary {
            initial_loss: res.initial_loss,
            final_loss: completed.then_some(res.final_loss),
            mask_area_initial: res.initial_mask_area,
            mask_area_final: mask_area(&res.mask),
            area_threshold: res.config.area_threshold,
            iterations_to_freeze: res.freeze_iteration,
            mask_updates: res.mask_updates,
            tau_final: res.field.threshold,
            linf_distance: linf(&res.patch, &prep.scene),
            guarded_pairs: res.guarded_pairs,
            encoders,
            transfer,
        },
        files: [ADV_FILE, PATCH_FILE, MASK_FILE, FIELD_FILE, TRACE_FILE, REPORT_FILE]
            .map(String::from)
            .to_vec(),
        config: cfg.clone(),
    }
}

fn io_err(what: &str, e: impl std::fmt::Display) -> CliError {
    CliError::runtime(format!("writing {what}: {e}"))
}

fn write_artifacts(dir: &Path, res: &AttackResult, report: &Report) -> Result<(), CliError> {
    res.adversarial
        .save_png(&dir.join(ADV_FILE))
        .map_err(|e| io_err(ADV_FILE, e))?;
    // Patch content on its support; black elsewhere.
    let mut patch = res.patch.data().to_vec();
    for (px, &on) in res.mask.data().iter().enumerate() {
        if !on {
            patch[px * CHANNELS..(px + 1) * CHANNELS].fill(0.0);
        }
    }
    let (h, w) = res.patch.dims();
    Image::new(h, w, patch)
        .and_then(|p| p.save_png(&dir.join(PATCH_FILE)))
        .map_err(|e| io_err(PATCH_FILE, e))?;
    res.mask
        .save_png(&dir.join(MASK_FILE))
        .map_err(|e| io_err(MASK_FILE, e))?;
    res.field
        .save_png(&dir.join(FIELD_FILE))
        .map_err(|e| io_err(FIELD_FILE, e))?;

    let mut csv = csv::Writer::from_path(dir.join(TRACE_FILE)).map_err(|e| io_err(TRACE_FILE, e))?;
    for row in &res.trace {
        csv.serialize(row).map_err(|e| io_err(TRACE_FILE, e))?;
    }
    if res.trace.is_empty() {
        csv.write_record(["iter", "loss_total", "loss_global", "loss_local", "mask_area", "tau"])
            .map_err(|e| io_err(TRACE_FILE, e))?;
    }
    csv.flush().map_err(|e| io_err(TRACE_FILE, e))?;

    let json = serde_json::to_string_pretty(report).map_err(|e| io_err(REPORT_FILE, e))?;
    std::fs::write(dir.join(REPORT_FILE), json + "\n").map_err(|e| io_err(REPORT_FILE, e))
}

/// Writes into a sibling staging directory, then renames it into place, so a
/// failed run never leaves a half-written `out`.
pub fn export(out: &Path, force: bool, res: &AttackResult, report: &Report) -> Result<(), CliError> {
    if out.exists() && !force {
        return Err(CliError::input(format!(
            "output directory {} already exists (use --force to replace it)",
            out.display()
        )));
    }
    let parent = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&parent).map_err(|e| io_err("output parent", e))?;
    let staging = tempfile::Builder::new()
        .prefix(".patchfield-staging-")
        .tempdir_in(&parent)
        .map_err(|e| io_err("staging directory", e))?;
    write_artifacts(staging.path(), res, report)?;

    let staged = staging.keep();
    if out.exists() {
        let old = parent.join(format!(".patchfield-replaced-{}", std::process::id()));
        std::fs::rename(out, &old).map_err(|e| io_err("previous output", e))?;
        std::fs::rename(&staged, out).map_err(|e| io_err("output directory", e))?;
        std::fs::remove_dir_all(&old).map_err(|e| io_err("previous output", e))?;
    } else {
        std::fs::rename(&staged, out).map_err(|e| io_err("output directory", e))?;
    }
    Ok(())
}

/// `attack` and `ablate`: run, export artifacts, return the report.
pub fn run_experiment(config_path: &Path, opts: &RunOptions) -> Result<Report, CliError> {
    let mut cfg = ExperimentConfig::load(config_path)?;
    apply_overrides(&mut cfg, opts);
    cfg.validate()?;
    if opts.out.exists() && !opts.force {
        return Err(CliError::input(format!(
            "output directory {} already exists (use --force to replace it)",
            opts.out.display()
        )));
    }
    let prep = prepare(&cfg)?;
    let (h, w) = prep.scene.dims();

    match run_attack(
        &prep.scene,
        &prep.target,
        &prep.region,
        &prep.ensemble,
        &cfg.attack,
        prep.palette.as_ref(),
    ) {
        Ok(res) => {
            let transfer = if cfg.heldout.is_empty() {
                Vec::new()
            } else {
                let specs: Vec<EncoderSpec> = cfg.heldout.iter().map(|s| sized_spec(s, h, w)).collect();
                eval_transfer(&prep.scene, &res.adversarial, &prep.target, &build_ensemble(&specs)?)?
            };
            let report = build_report(&cfg, &prep, &res, transfer, None);
            export(&opts.out, opts.force, &res, &report)?;
            Ok(report)
        }
        Err(AttackError::Setup(e)) => Err(e.into()),
        Err(AttackError::Aborted {
            iteration,
            source,
            partial,
        }) => {
            let msg = format!("aborted at iteration {iteration}: {source}");
            let report = build_report(&cfg, &prep, &partial, Vec::new(), Some(msg.clone()));
            // Keep the partial trace for diagnosis.
            export(&opts.out, opts.force, &partial, &report)?;
            Err(CliError::runtime(msg))
        }
    }
}

/// `eval-transfer`: Δcos of the exported adversarial image on held-out encoders.
pub fn eval_transfer_dir(result: &Path, heldout: &Path) -> Result<Vec<TransferMetric>, CliError> {
    let report_path = result.join(REPORT_FILE);
    let text = std::fs::read_to_string(&report_path)
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", report_path.display())))?;
    let report: Report =
        serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", report_path.display())))?;
    let adv_path = result.join(ADV_FILE);
    require_file(&adv_path, "adversarial image")?;
    let adv = Image::load_png(&adv_path)?;
    let scene = Image::load_png(&report.config.scene)?;
    let target = Image::load_png(&report.config.target)?;
    if adv.dims() != scene.dims() || target.dims() != scene.dims() {
        return Err(CliError::input("result images and scene differ in size"));
    }
    let (h, w) = scene.dims();
    let specs: Vec<EncoderSpec> = load_heldout(heldout)?.iter().map(|s| sized_spec(s, h, w)).collect();
    for s in &specs {
        if report.config.ensemble.iter().any(|e| sized_spec(e, h, w) == *s) {
            return Err(CliError::config(format!(
                "held-out encoder {:?} seed {} is part of the attack ensemble",
                s.kind, s.seed
            )));
        }
    }
    Ok(eval_transfer(&scene, &adv, &target, &build_ensemble(&specs)?)?)
}
