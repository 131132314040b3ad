use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use cloudloc::cloud::{extract_features_3d, load_ply, read_features_3d, write_features_3d, FeatureSet3D, SpatialIndex};
use cloudloc::dataset::{assemble_from_features, read_dataset, write_dataset, DatasetError};
use cloudloc::eval::{emit_table, summarize, EvalRecord, Report, TableFormat};
use cloudloc::geometry::ViewRecord;
use cloudloc::image::{extract_features_2d, load_image, read_features_2d, write_features_2d, FeatureSet2D};
use cloudloc::matcher::{grid_search, read_model, write_model, MatcherError};
use cloudloc::pose::{localize, LocalizationRecord, LocalizeConfig};
use cloudloc::synth::{make_benchmark, BenchmarkConfig, Manifest};

use crate::config::RunConfig;

/// Command failure: bad input or configuration (exit 2) or a pipeline error (exit 3).
#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Pipeline(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Pipeline(_) => 3,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Config(e) | Failure::Pipeline(e) => e,
        }
    }
}

pub type CmdResult<T = ()> = Result<T, Failure>;

trait Classify<T> {
    fn config(self) -> CmdResult<T>;
    fn pipeline(self) -> CmdResult<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn config(self) -> CmdResult<T> {
        self.map_err(|e| Failure::Config(e.into()))
    }

    fn pipeline(self) -> CmdResult<T> {
        self.map_err(|e| Failure::Pipeline(e.into()))
    }
}

fn config_err<T>(msg: String) -> CmdResult<T> {
    Err(Failure::Config(anyhow!(msg)))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CmdResult<T> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .config()?;
    serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .config()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CmdResult {
    let mut text = serde_json::to_string_pretty(value).pipeline()?;
    text.push('\n');
    fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .pipeline()
}

fn create(path: &Path) -> CmdResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .with_context(|| format!("creating {}", path.display()))
        .pipeline()
}

fn open(path: &Path) -> CmdResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .with_context(|| format!("opening {}", path.display()))
        .config()
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default()
}

pub fn load_config(path: Option<&Path>) -> CmdResult<RunConfig> {
    let cfg = RunConfig::load(path).config()?;
    cfg.validate().config()?;
    Ok(cfg)
}

pub fn synth(spec: &Path, out: &Path) -> CmdResult {
    let cfg: BenchmarkConfig = read_json(spec)?;
    cfg.validate().config()?;
    fs::create_dir_all(out).pipeline()?;
    make_benchmark(&cfg, out).pipeline()?;
    Ok(())
}

pub fn extract_2d(input: &Path, out: &Path, cfg: &RunConfig) -> CmdResult {
    if !matches!(extension(input).as_str(), "pgm" | "ppm") {
        return config_err(format!("2d extraction reads .pgm or .ppm images, got {}", input.display()));
    }
    let img = load_image(input).config()?;
    let set = extract_features_2d(&img, &cfg.dataset.detect2d).pipeline()?;
    let mut w = create(out)?;
    write_features_2d(&set, &mut w).pipeline()?;
    w.flush().pipeline()
}

pub fn extract_3d(input: &Path, out: &Path, cfg: &RunConfig) -> CmdResult {
    if extension(input) != "ply" {
        return config_err(format!("3d extraction reads .ply clouds, got {}", input.display()));
    }
    let cloud = load_ply(input).config()?;
    let set = extract_features_3d(&cloud, &SpatialIndex::from_cloud(&cloud), &cfg.dataset.extract3d);
    let mut w = create(out)?;
    write_features_3d(&set, &mut w).pipeline()?;
    w.flush().pipeline()
}

fn load_features_3d(path: &Path) -> CmdResult<FeatureSet3D> {
    read_features_3d(&mut open(path)?)
        .with_context(|| format!("reading {}", path.display()))
        .config()
}

pub fn build_dataset(bundle: &Path, cloud_features: Option<&Path>, out: &Path, cfg: &RunConfig) -> CmdResult {
    let poses_path = bundle.join("poses.json");
    if !poses_path.is_file() {
        return config_err(format!("bundle {} has no poses.json", bundle.display()));
    }
    let records: Vec<ViewRecord> = read_json(&poses_path)?;
    let train: Vec<u32> = if bundle.join("manifest.json").is_file() {
        read_json::<Manifest>(&bundle.join("manifest.json"))?.train
    } else {
        records.iter().map(|r| r.image_id).collect()
    };
    let cloud = load_ply(bundle.join("cloud.ply"))
        .context("reading the bundle cloud")
        .config()?;
    let features3d = match cloud_features {
        Some(p) => load_features_3d(p)?,
        None => extract_features_3d(&cloud, &SpatialIndex::from_cloud(&cloud), &cfg.dataset.extract3d),
    };
    let views = train
        .par_iter()
        .map(|&id| {
            let rec = records
                .iter()
                .find(|r| r.image_id == id)
                .ok_or_else(|| Failure::Config(anyhow!("training image {id} has no pose record")))?;
            let view = rec.to_view().config()?;
            let img = load_image(bundle.join("images").join(format!("{id:03}.pgm"))).config()?;
            let feats = extract_features_2d(&img, &cfg.dataset.detect2d).pipeline()?;
            Ok((view, feats))
        })
        .collect::<CmdResult<Vec<_>>>()?;
    let mut ds = assemble_from_features(&views, &cloud, &features3d, &cfg.dataset).map_err(|e| match e {
        DatasetError::InvalidParameter(_) => Failure::Config(e.into()),
        _ => Failure::Pipeline(e.into()),
    })?;
    ds.metadata = Some(json!({
        "config": cfg.dataset,
        "train_images": train,
        "n_keypoints_3d": features3d.len(),
        "cloud_features": cloud_features.is_some(),
    }));
    let mut w = create(out)?;
    write_dataset(&ds, &mut w).pipeline()?;
    w.flush().pipeline()
}

pub fn train(dataset: &Path, out: &Path, cfg: &RunConfig) -> CmdResult {
    let ds = read_dataset(&mut open(dataset)?)
        .with_context(|| format!("reading {}", dataset.display()))
        .config()?;
    let (mut model, record) = grid_search(&ds, &cfg.grid, cfg.train_seed).map_err(|e| match e {
        MatcherError::InvalidParameter(_) => Failure::Config(e.into()),
        _ => Failure::Pipeline(e.into()),
    })?;
    model.metadata = json!({
        "grid": cfg.grid,
        "seed": cfg.train_seed,
        "search": record,
        "dataset": ds.metadata,
    });
    let mut w = create(out)?;
    write_model(&model, &mut w).pipeline()?;
    w.flush().pipeline()
}

/// Localization result with the settings that produced it.
#[derive(Debug, Serialize, Deserialize)]
pub struct LocalizeOutput {
    #[serde(flatten)]
    pub record: LocalizationRecord,
    pub config: LocalizeConfig,
}

pub fn localize_image(
    model: &Path,
    cloud_features: &Path,
    image: &Path,
    intrinsics: &Path,
    out: &Path,
    cfg: &RunConfig,
) -> CmdResult {
    let model = read_model(&mut open(model)?)
        .with_context(|| format!("reading {}", model.display()))
        .config()?;
    let features3d = load_features_3d(cloud_features)?;
    let view: ViewRecord = read_json(intrinsics)?;
    let k = view.intrinsics().config()?;
    let ground_truth = view.pose().config()?;
    let feats: FeatureSet2D = match extension(image).as_str() {
        "pgm" | "ppm" => {
            let img = load_image(image).config()?;
            if (img.width(), img.height()) != (view.width, view.height) {
                return config_err(format!(
                    "image is {}x{} but the intrinsics record says {}x{}",
                    img.width(),
                    img.height(),
                    view.width,
                    view.height
                ));
            }
            extract_features_2d(&img, &cfg.dataset.detect2d).pipeline()?
        }
        "c2df" => read_features_2d(&mut open(image)?).config()?,
        _ => return config_err(format!("query must be .pgm, .ppm or .c2df, got {}", image.display())),
    };
    let outcome = localize(&feats, &features3d, &model, &k, &cfg.localize);
    let record = LocalizationRecord::from_outcome(view.image_id, &outcome, ground_truth.as_ref());
    write_json(
        out,
        &LocalizeOutput {
            record,
            config: cfg.localize,
        },
    )
}

pub fn evaluate(results: &Path, out: &Path, format: TableFormat) -> CmdResult {
    let mut paths: Vec<PathBuf> = fs::read_dir(results)
        .with_context(|| format!("listing {}", results.display()))
        .config()?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && extension(p) == "json")
        .collect();
    paths.sort();
    if paths.is_empty() {
        return config_err(format!("no result files in {}", results.display()));
    }
    let mut records = Vec::with_capacity(paths.len());
    for p in &paths {
        let result: LocalizeOutput = read_json(p)?;
        records.push(
            EvalRecord::from_localization(&result.record)
                .with_context(|| format!("in {}", p.display()))
                .config()?,
        );
    }
    let report = if records.iter().any(|r| r.success) {
        summarize(&records).pipeline()?
    } else {
        Report::without_successes(records.len())
    };
    fs::write(out, emit_table(&report, format))
        .with_context(|| format!("writing {}", out.display()))
        .pipeline()
}

pub fn check_output_parent(out: &Path) -> CmdResult {
    match out.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => {
            config_err(format!("output directory {} does not exist", dir.display()))
        }
        _ => Ok(()),
    }
}
