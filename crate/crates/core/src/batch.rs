//! File-level commands: batch detection, masking and removal, standalone
//! inpainting, corpus synthesis and evaluation against a manifest.
//!
//! Every command writes its artifacts under the configured output
//! directory. Results are gathered in input order, so artifacts depend only
//! on the inputs and the configuration.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{InpaintSettings, RunConfig};
use crate::error::{FlareError, Result};
use crate::evaluate::{self, EvalReport, GroundTruth};
use crate::io;
use crate::lightsource;
use crate::pipeline::{self, ImageReport};
use crate::scalespace;
use crate::synthgen::{self, SceneConfig};

/// Name of the per-batch summary written next to the per-file artifacts.
pub const SUMMARY_FILE: &str = "summary.json";
pub const EVAL_REPORT_FILE: &str = "eval_report.json";
pub const FP_HISTOGRAM_FILE: &str = "fp_histogram.csv";
pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Report only.
    Detect,
    /// Report and flare mask.
    Mask,
    /// Report, mask and restored image.
    Remove,
}

#[derive(Debug, Clone, Serialize)]
pub struct FileOutcome {
    pub input: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<ImageReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BatchSummary {
    pub files: Vec<FileOutcome>,
}

impl BatchSummary {
    pub fn failures(&self) -> usize {
        self.files.iter().filter(|f| f.error.is_some()).count()
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| FlareError::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| FlareError::io(path, e))
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "image".to_string(), |s| s.to_string_lossy().into_owned())
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| FlareError::Config(format!("cannot start worker pool: {e}")))
}

fn process_file(cfg: &RunConfig, stage: Stage, input: &Path) -> Result<ImageReport> {
    let img = io::load_rgb(input)?;
    let analysis = pipeline::analyze(&img, &cfg.params)?;
    let name = stem(input);
    let out = |suffix: &str| cfg.output_dir.join(format!("{name}{suffix}"));
    let report = ImageReport::new(input.display().to_string(), &analysis);
    log::info!(
        "{}: {} light source(s), {} flare(s)",
        input.display(),
        report.light_sources.len(),
        report.detection_count()
    );
    if stage != Stage::Detect && cfg.emit.mask {
        io::save_mask(&out("_mask.png"), &analysis.mask)?;
    }
    if stage != Stage::Detect && cfg.emit.overlay {
        io::save_rgb(&out("_overlay.png"), &io::overlay(&img, &analysis.mask)?)?;
    }
    if stage == Stage::Remove && cfg.emit.inpainted {
        let restored = pipeline::restore(&img, &analysis.mask, &cfg.inpaint, cfg.seed)?;
        io::save_rgb(&out(".png"), &restored)?;
    }
    if cfg.emit.debug {
        let p = &cfg.params;
        io::save_mask(&out("_sources.png"), &lightsource::bright_mask(&analysis.lab, p.iota, p.opening_radius))?;
        if !analysis.outcome.sources.is_empty() {
            let ss = scalespace::build_scalespace(&analysis.lab.l, p.sigma_min, p.sigma_max, p.k)?;
            for (i, dog) in ss.dogs.iter().enumerate() {
                io::save_plane(&out(&format!("_dog_{i:02}.png")), &dog.plane)?;
            }
        }
    }
    if cfg.emit.report {
        write_json(&out(".json"), &report)?;
    }
    Ok(report)
}

/// Runs `stage` on every input. Per-file failures are recorded in the
/// summary; only configuration problems abort the batch.
pub fn run_stage(cfg: &RunConfig, stage: Stage) -> Result<BatchSummary> {
    cfg.validate()?;
    let mut seen = HashSet::new();
    for input in &cfg.inputs {
        if !seen.insert(stem(input)) {
            return Err(FlareError::Config(format!(
                "inputs share the file name {:?}; outputs would collide",
                stem(input)
            )));
        }
    }
    create_dir(&cfg.output_dir)?;
    let files = pool(cfg.jobs)?.install(|| {
        cfg.inputs
            .par_iter()
            .map(|input| match process_file(cfg, stage, input) {
                Ok(report) => FileOutcome {
                    input: input.clone(),
                    report: Some(report),
                    error: None,
                },
                Err(e) => {
                    log::error!("{}: {e}", input.display());
                    FileOutcome {
                        input: input.clone(),
                        report: None,
                        error: Some(e.to_string()),
                    }
                }
            })
            .collect()
    });
    let summary = BatchSummary { files };
    write_json(&cfg.output_dir.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

pub fn run_detect(cfg: &RunConfig) -> Result<BatchSummary> {
    run_stage(cfg, Stage::Detect)
}

pub fn run_mask(cfg: &RunConfig) -> Result<BatchSummary> {
    run_stage(cfg, Stage::Mask)
}

pub fn run_remove(cfg: &RunConfig) -> Result<BatchSummary> {
    run_stage(cfg, Stage::Remove)
}

/// Inpaints `image` inside `mask` and writes the result to `output`.
pub fn run_inpaint(image: &Path, mask: &Path, output: &Path, settings: &InpaintSettings, seed: u64) -> Result<()> {
    let img = io::load_rgb(image)?;
    let hole = io::load_mask(mask)?;
    if img.dims() != hole.dims() {
        return Err(FlareError::DimensionMismatch {
            left: img.dims(),
            right: hole.dims(),
        });
    }
    let restored = pipeline::restore(&img, &hole, settings, seed)?;
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    io::save_rgb(output, &restored)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub image: PathBuf,
    pub mask: PathBuf,
}

/// Image and ground-truth mask pairs. Paths in the file are relative to the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
    pub base: PathBuf,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| FlareError::Manifest(format!("{}: {e}", path.display())))?;
        let rows = reader
            .deserialize()
            .collect::<std::result::Result<Vec<ManifestRow>, _>>()
            .map_err(|e| FlareError::Manifest(format!("{}: {e}", path.display())))?;
        if rows.is_empty() {
            return Err(FlareError::Manifest(format!("{} lists no images", path.display())));
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let manifest = Self { rows, base };
        for row in &manifest.rows {
            for p in [&row.image, &row.mask] {
                if !manifest.resolve(p).is_file() {
                    return Err(FlareError::Manifest(format!("{} does not exist", manifest.resolve(p).display())));
                }
            }
        }
        Ok(manifest)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base.join(p)
    }
}

/// Extra detections added to an image during evaluation, keyed by the
/// manifest image entry.
pub type Injection<'a> = &'a (dyn Fn(&str) -> Vec<((usize, usize), f64)> + Sync);

pub fn run_eval(cfg: &RunConfig, manifest: &Path) -> Result<EvalReport> {
    run_eval_with(cfg, manifest, &|_| Vec::new())
}

/// Evaluation with `inject` supplying additional detections per image.
pub fn run_eval_with(cfg: &RunConfig, manifest: &Path, inject: Injection) -> Result<EvalReport> {
    cfg.validate()?;
    let manifest = Manifest::load(manifest)?;
    create_dir(&cfg.output_dir)?;
    let scores = pool(cfg.jobs)?.install(|| {
        manifest
            .rows
            .par_iter()
            .map(|row| {
                let name = row.image.display().to_string();
                let img = io::load_rgb(&manifest.resolve(&row.image))?;
                let gt = GroundTruth::from_mask(io::load_mask(&manifest.resolve(&row.mask))?);
                if gt.flare_mask.dims() != img.dims() {
                    return Err(FlareError::DimensionMismatch {
                        left: img.dims(),
                        right: gt.flare_mask.dims(),
                    });
                }
                let analysis = pipeline::analyze(&img, &cfg.params)?;
                let mut points = analysis.scored_points();
                points.extend(inject(&name));
                evaluate::score_image(name, &points, &analysis.mask, &gt)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let report = evaluate::aggregate(&scores)?;
    write_json(&cfg.output_dir.join(EVAL_REPORT_FILE), &report)?;
    let hist_path = cfg.output_dir.join(FP_HISTOGRAM_FILE);
    let mut writer = csv::Writer::from_path(&hist_path).map_err(|e| FlareError::Manifest(e.to_string()))?;
    let csv_err = |e: csv::Error| FlareError::Config(format!("{}: {e}", hist_path.display()));
    writer.write_record(["false_positives", "images", "percent"]).map_err(csv_err)?;
    for bin in &report.fp_histogram {
        writer
            .write_record([bin.label.clone(), bin.count.to_string(), format!("{:.4}", bin.percent)])
            .map_err(csv_err)?;
    }
    writer.flush().map_err(|e| FlareError::io(&hist_path, e))?;
    Ok(report)
}

/// Writes `count` random scenes (images, masks, scene descriptions) and a
/// manifest; returns the manifest path.
pub fn run_synth(out_dir: &Path, count: usize, seed: u64, scene: &SceneConfig) -> Result<PathBuf> {
    for sub in ["images", "masks", "specs"] {
        create_dir(&out_dir.join(sub))?;
    }
    let rows = (0..count)
        .into_par_iter()
        .map(|i| {
            let name = format!("scene_{i:04}");
            let spec = synthgen::random_scene(seed.wrapping_add(i as u64), scene)?;
            let (img, gt) = synthgen::render(&spec)?;
            let row = ManifestRow {
                image: PathBuf::from("images").join(format!("{name}.png")),
                mask: PathBuf::from("masks").join(format!("{name}.png")),
            };
            io::save_rgb(&out_dir.join(&row.image), &img)?;
            io::save_mask(&out_dir.join(&row.mask), &gt.flare_mask)?;
            write_json(&out_dir.join("specs").join(format!("{name}.json")), &spec)?;
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    let path = out_dir.join(MANIFEST_FILE);
    let mut writer = csv::Writer::from_path(&path).map_err(|e| FlareError::Manifest(e.to_string()))?;
    for row in &rows {
        writer.serialize(row).map_err(|e| FlareError::Manifest(e.to_string()))?;
    }
    writer.flush().map_err(|e| FlareError::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_manifest_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        fs::write(&path, "image,mask\n").unwrap();
        assert!(matches!(Manifest::load(&path), Err(FlareError::Manifest(_))));
    }

    #[test]
    fn unresolvable_rows_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        fs::write(&path, "image,mask\na.png,b.png\n").unwrap();
        assert!(matches!(Manifest::load(&path), Err(FlareError::Manifest(_))));
    }

    #[test]
    fn duplicate_stems_are_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::new(vec!["a/x.png".into(), "b/x.jpg".into()], dir.path());
        assert!(matches!(run_detect(&cfg), Err(FlareError::Config(_))));
    }

    #[test]
    fn synth_then_eval_scores_a_small_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let scene = SceneConfig {
            max_sources: 1,
            ..Default::default()
        };
        let manifest = run_synth(&dir.path().join("corpus"), 2, 11, &scene).unwrap();
        let m = Manifest::load(&manifest).unwrap();
        assert_eq!(m.rows.len(), 2);
        let cfg = RunConfig::new(vec![], dir.path().join("eval"));
        let report = run_eval(&cfg, &manifest).unwrap();
        assert_eq!(report.aggregate.images, 2);
        assert_eq!(report.aggregate.recall, 1.0);
        assert!(dir.path().join("eval").join(EVAL_REPORT_FILE).is_file());
        let csv = fs::read_to_string(dir.path().join("eval").join(FP_HISTOGRAM_FILE)).unwrap();
        assert_eq!(csv.lines().count(), 17);
    }
}
