use std::fs;
use std::path::{Path, PathBuf};

use matting::checkpoint::Checkpoint;
use matting::data::{resize_cap, resize_trimap, write_dataset, DatasetManifest, Split, SynthConfig, MIN_SYNTH_SIZE};
use matting::io;
use matting::net::network_input;
use matting::selfcheck::{self, SelfCheckConfig};
use matting::tensor::{Image, Tensor};
use matting::train::{self, evaluate_predictions, predict_sample, write_metrics_csv, Ablation, TrainConfig};
use matting::trimap::{binarize, generate_trimap, Trimap, TrimapConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{self, beside, set, write_resolved};
use crate::{EvalArgs, ExportArgs, GenDataArgs, GradcheckArgs, InferArgs, TrainArgs, TrimapArgs, TrimapSource};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_CHECK: u8 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] matting::Error),
    #[error("{0}")]
    Mismatch(String),
    #[error("{0}")]
    Check(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) | CliError::Mismatch(_) => EXIT_DATA,
            CliError::Check(_) => EXIT_CHECK,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn usage(e: matting::Error) -> CliError {
    CliError::Usage(e.to_string())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| CliError::Data(matting::Error::Io { path: dir.to_path_buf(), source }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenDataConfig {
    pub count: usize,
    /// Defaults to `count / 9` (at least one sample when `count ≥ 2`).
    pub test_count: Option<usize>,
    pub seed: u64,
    pub synth: SynthConfig,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        GenDataConfig {
            count: 576,
            test_count: None,
            seed: 2024,
            synth: SynthConfig::default(),
        }
    }
}

pub fn default_test_count(count: usize) -> usize {
    if count < 2 {
        0
    } else {
        (count / 9).max(1)
    }
}

pub fn gen_data(a: GenDataArgs) -> Result<()> {
    let mut cfg: GenDataConfig = config::load(a.config.as_deref())?;
    set(&mut cfg.count, a.count);
    set(&mut cfg.test_count, a.test_count.map(Some));
    set(&mut cfg.synth.size, a.size);
    set(&mut cfg.seed, a.seed);
    set(&mut cfg.synth.trimap.rate, a.rate);
    if cfg.count == 0 {
        return Err(CliError::Usage("--count must be at least 1: an empty dataset is useless".into()));
    }
    if cfg.synth.size < MIN_SYNTH_SIZE {
        return Err(CliError::Usage(format!(
            "--size must be at least {}, got {}",
            MIN_SYNTH_SIZE,
            cfg.synth.size
        )));
    }
    cfg.synth.trimap.validate().map_err(usage)?;
    let test_count = cfg.test_count.unwrap_or_else(|| default_test_count(cfg.count));
    cfg.test_count = Some(test_count);
    let manifest = DatasetManifest::plan(cfg.seed, cfg.count, test_count).map_err(usage)?;

    create_dir(&a.out)?;
    write_dataset(&a.out, &manifest, &cfg.synth)?;
    write_resolved(&a.out.join("gen_data_config.json"), "gen-data", &[("out", Some(&a.out))], &cfg)?;
    log::info!(
        "wrote {} samples ({} test) to {}",
        cfg.count,
        test_count,
        a.out.display()
    );
    Ok(())
}

pub fn trimap(a: TrimapArgs) -> Result<()> {
    let mut cfg: TrimapConfig = config::load(a.config.as_deref())?;
    set(&mut cfg.rate, a.rate);
    set(&mut cfg.min_radius, a.min_radius);
    cfg.validate().map_err(usage)?;
    let mask = binarize(&io::read_gray(&a.mask)?);
    let trimap = generate_trimap(&mask, &cfg).map_err(|e| match e {
        matting::Error::EmptyObject => CliError::Mismatch(format!("{}: {e}", a.mask.display())),
        e => e.into(),
    })?;
    io::write_trimap(&a.out, &trimap)?;
    write_resolved(
        &beside(&a.out),
        "trimap",
        &[("mask", Some(&a.mask)), ("out", Some(&a.out))],
        &cfg,
    )
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut cfg: TrainConfig = config::load(a.config.as_deref())?;
    set(&mut cfg.epochs, a.epochs);
    set(&mut cfg.lr, a.lr);
    set(&mut cfg.batch_size, a.batch_size);
    set(&mut cfg.seed, a.seed);
    set(&mut cfg.crop, a.crop.map(Some));
    if a.no_crop {
        cfg.crop = None;
    }
    if a.no_attention {
        cfg.ablation = Ablation::NoAttention;
    }
    set(&mut cfg.stages, a.stages);
    set(&mut cfg.base_channels, a.base_channels);
    set(&mut cfg.convs_per_stage, a.convs_per_stage);
    set(&mut cfg.gamma, a.gamma);
    if a.freeze_norm {
        cfg.freeze_norm = true;
    }
    cfg.validate().map_err(usage)?;

    let outputs = train::train(&cfg, &a.data, &a.out)?;
    if let (Some(first), Some(last)) = (outputs.epoch_losses.first(), outputs.epoch_losses.last()) {
        log::info!("mean total loss {first:.6} after the first epoch, {last:.6} after the last");
    }
    println!("{}", outputs.final_checkpoint.display());
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferConfig {
    pub max_edge: usize,
    /// Used when the trimap is derived from a mask.
    pub trimap: TrimapConfig,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig {
            max_edge: train::MAX_EDGE,
            trimap: TrimapConfig::default(),
        }
    }
}

impl InferConfig {
    fn resolve(path: Option<&Path>, max_edge: Option<usize>, rate: Option<f64>) -> Result<Self> {
        let mut cfg: InferConfig = config::load(path)?;
        set(&mut cfg.max_edge, max_edge);
        set(&mut cfg.trimap.rate, rate);
        if cfg.max_edge == 0 {
            return Err(CliError::Usage("--max-edge must be at least 1".into()));
        }
        cfg.trimap.validate().map_err(usage)?;
        Ok(cfg)
    }
}

/// The image and a trimap of the same size, read or derived from a mask.
fn image_and_trimap(image: &Path, source: &TrimapSource, cfg: &TrimapConfig) -> Result<(Image, Trimap)> {
    let img = io::read_rgb(image)?;
    let (path, trimap) = match (&source.trimap, &source.mask) {
        (Some(t), _) => (t, io::read_trimap(t)?),
        (None, Some(m)) => {
            let mask = binarize(&io::read_gray(m)?);
            let trimap = generate_trimap(&mask, cfg).map_err(|e| match e {
                matting::Error::EmptyObject => CliError::Mismatch(format!("{}: {e}", m.display())),
                e => e.into(),
            })?;
            (m, trimap)
        }
        (None, None) => return Err(CliError::Usage("pass --trimap or --mask".into())),
    };
    if (trimap.height(), trimap.width()) != (img.height(), img.width()) {
        return Err(CliError::Mismatch(format!(
            "{} is {}x{} but {} is {}x{}",
            path.display(),
            trimap.height(),
            trimap.width(),
            image.display(),
            img.height(),
            img.width()
        )));
    }
    Ok((img, trimap))
}

fn source_paths(source: &TrimapSource) -> [(&'static str, Option<&Path>); 2] {
    [("trimap", source.trimap.as_deref()), ("mask", source.mask.as_deref())]
}

pub fn infer(a: InferArgs) -> Result<()> {
    let cfg = InferConfig::resolve(a.config.as_deref(), a.max_edge, a.rate)?;
    let ck = Checkpoint::load(&a.checkpoint)?;
    let (image, trimap) = image_and_trimap(&a.image, &a.source, &cfg.trimap)?;
    let matte = ck.params.predict_capped(&image, &trimap, cfg.max_edge)?;
    io::write_gray(&a.out, &matte)?;
    let mut paths = vec![("checkpoint", Some(a.checkpoint.as_path())), ("image", Some(a.image.as_path()))];
    paths.extend(source_paths(&a.source));
    paths.push(("out", Some(a.out.as_path())));
    write_resolved(&beside(&a.out), "infer", &paths, &cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub split: Split,
    pub max_edge: usize,
    /// Method name in the CSV row; defaults to the checkpoint file stem or
    /// `predictions`.
    pub name: Option<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            split: Split::Test,
            max_edge: train::MAX_EDGE,
            name: None,
        }
    }
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let mut cfg: EvalConfig = config::load(a.config.as_deref())?;
    if let Some(s) = &a.split {
        cfg.split = s.parse().map_err(usage)?;
    }
    set(&mut cfg.max_edge, a.max_edge);
    set(&mut cfg.name, a.name.clone().map(Some));
    if cfg.max_edge == 0 {
        return Err(CliError::Usage("--max-edge must be at least 1".into()));
    }
    let manifest = DatasetManifest::load(&a.data)?;
    let evaluation = match (&a.checkpoint, &a.pred_dir) {
        (Some(ck), _) => {
            let params = Checkpoint::load(ck)?.params;
            if cfg.name.is_none() {
                cfg.name = ck.file_stem().map(|s| s.to_string_lossy().into_owned());
            }
            evaluate_predictions(&a.data, &manifest, cfg.split, |_, s| predict_sample(&params, s, cfg.max_edge))?
        }
        (None, Some(dir)) => {
            let dir: PathBuf = dir.clone();
            evaluate_predictions(&a.data, &manifest, cfg.split, |e, _| {
                io::read_gray(dir.join(format!("{}.png", e.id)))
            })?
        }
        (None, None) => return Err(CliError::Usage("pass --checkpoint or --pred-dir".into())),
    };
    let name = cfg.name.clone().unwrap_or_else(|| "predictions".into());
    write_metrics_csv(&a.out, &[(&name, &evaluation.report)])?;
    write_resolved(
        &beside(&a.out),
        "eval",
        &[
            ("data", Some(&a.data)),
            ("checkpoint", a.checkpoint.as_deref()),
            ("pred_dir", a.pred_dir.as_deref()),
            ("out", Some(&a.out)),
        ],
        &cfg,
    )?;
    if !evaluation.skipped.is_empty() {
        log::warn!(
            "skipped {} sample(s) with mismatched sizes: {}",
            evaluation.skipped.len(),
            evaluation.skipped.join(", ")
        );
    }
    println!("{}", evaluation.report.csv_row(&name));
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let mut cfg: SelfCheckConfig = config::load(a.config.as_deref())?;
    set(&mut cfg.seeds, a.seeds);
    set(&mut cfg.eps, a.eps);
    if cfg.seeds == 0 || !(cfg.eps > 0.0) {
        return Err(CliError::Usage("--seeds must be at least 1 and --eps positive".into()));
    }
    let checks = selfcheck::run(&cfg)?;
    let mut csv = String::from("operator,max_relative_error,worst_seed,checked,skipped\n");
    let mut failed = Vec::new();
    for c in &checks {
        let ok = c.max_relative_error <= a.tol;
        println!(
            "{:<22} {:>10.3e}  seed {:<3} {:>6} checked {:>4} skipped  {}",
            c.name,
            c.max_relative_error,
            c.worst_seed,
            c.checked,
            c.skipped,
            if ok { "ok" } else { "FAIL" }
        );
        csv.push_str(&format!(
            "{},{:e},{},{},{}\n",
            c.name, c.max_relative_error, c.worst_seed, c.checked, c.skipped
        ));
        if !ok {
            failed.push(c.name);
        }
    }
    if let Some(out) = &a.out {
        io::write_atomic(out, csv.as_bytes())?;
        write_resolved(
            &beside(out),
            "gradcheck",
            &[("out", Some(out))],
            &serde_json::json!({ "selfcheck": cfg, "tol": a.tol }),
        )?;
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Check(format!(
            "relative error above {:e} for: {}",
            a.tol,
            failed.join(", ")
        )))
    }
}

/// Stretch `t` to span [0, 1]; a constant map becomes all zeros.
pub fn min_max_normalize(t: &Tensor) -> Tensor {
    let (lo, hi) = t.min_max();
    if hi > lo {
        t.map(|v| (v - lo) / (hi - lo))
    } else {
        t.map(|_| 0.0)
    }
}

pub fn export_attention(a: ExportArgs) -> Result<()> {
    let cfg = InferConfig::resolve(a.config.as_deref(), a.max_edge, a.rate)?;
    let ck = Checkpoint::load(&a.checkpoint)?;
    if !ck.params.config.attention {
        return Err(CliError::Mismatch(format!(
            "{}: checkpoint was trained without attention",
            a.checkpoint.display()
        )));
    }
    let (image, trimap) = image_and_trimap(&a.image, &a.source, &cfg.trimap)?;
    let (small, _) = resize_cap(&image, cfg.max_edge)?;
    let small_trimap = resize_trimap(&trimap, small.height(), small.width())?;
    let maps = ck.params.attention_maps(&network_input(&small, &small_trimap)?)?;

    create_dir(&a.out)?;
    for (stage, pair) in maps.iter().enumerate() {
        io::write_gray(a.out.join(format!("stage{stage}_enc.png")), &min_max_normalize(&pair.enc))?;
        io::write_gray(a.out.join(format!("stage{stage}_dec.png")), &min_max_normalize(&pair.dec))?;
    }
    let mut paths = vec![("checkpoint", Some(a.checkpoint.as_path())), ("image", Some(a.image.as_path()))];
    paths.extend(source_paths(&a.source));
    paths.push(("out", Some(a.out.as_path())));
    write_resolved(&a.out.join("export_attention_config.json"), "export-attention", &paths, &cfg)?;
    log::info!("wrote {} stage(s) of attention maps to {}", maps.len(), a.out.display());
    Ok(())
}
