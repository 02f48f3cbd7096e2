//! Command-line surface. Each subcommand is a plain function so it can be
//! driven from tests as well as from `main`.

use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::{grad_check, GradCheckOptions, GradCheckReport, Graph};
use crate::degradation::{degrade_bd, degrade_td};
use crate::image::Image;
use crate::io::{read_image, write_image, Checkpoint, Config, Degradation, ImageFormat, ImageType, Manifest, ManifestEntry, Split};
use crate::metrics::{ImageScore, MetricReport};
use crate::model::{CsnModel, ModelConfig};
use crate::resize::bicubic_resize;
use crate::tensor::Tensor4;
use crate::training::{super_resolve, Trainer};

#[derive(Debug, Parser)]
#[command(name = "csn", version, about = "Channel splitting network for MR super-resolution")]
pub struct Cli {
    /// Worker threads for the convolution kernels.
    #[arg(long, env = "CSN_THREADS", global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate LR slices and a manifest from a directory of HR slices.
    Degrade(DegradeArgs),
    /// Train a model on the `train` split of a manifest.
    Train(TrainArgs),
    /// Score a checkpoint (or the bicubic baseline) on a manifest.
    Eval(EvalArgs),
    /// Upscale one LR slice.
    Infer(InferArgs),
    /// Print parameter count and depth of a configuration.
    Params(ParamsArgs),
    /// Finite-difference check of the tiny network's gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DegradeModel {
    Bd,
    Td,
}

impl From<DegradeModel> for Degradation {
    fn from(m: DegradeModel) -> Self {
        match m {
            DegradeModel::Bd => Degradation::Bd,
            DegradeModel::Td => Degradation::Td,
        }
    }
}

#[derive(Debug, Args)]
pub struct DegradeArgs {
    /// Directory of HR `.pgm` / `.f32i` slices.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "bd")]
    pub model: DegradeModel,
    #[arg(long, default_value_t = 2)]
    pub scale: usize,
    /// PD, T1, T2 or SYNTHETIC.
    #[arg(long, default_value = "SYNTHETIC")]
    pub image_type: String,
    /// train, val or test.
    #[arg(long, default_value = "train")]
    pub split: String,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Resume from this checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iterations: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Trained weights; omit together with `--bicubic`.
    #[arg(long, required_unless_present = "bicubic")]
    pub checkpoint: Option<PathBuf>,
    /// Score plain bicubic upsampling instead of a model.
    #[arg(long, conflicts_with = "checkpoint")]
    pub bicubic: bool,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Expected configuration; checked against the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Restrict to one split (train, val, test).
    #[arg(long)]
    pub split: Option<String>,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub scale: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Variant, scale and skip mode are taken from here; widths are tiny.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub eps: f64,
}

pub fn run(cli: Cli) -> Result<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        ensure!(n > 0, "--threads must be positive");
        pool = pool.num_threads(n);
    }
    let pool = pool.build().context("building thread pool")?;
    pool.install(|| dispatch(cli.command))
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Degrade(a) => {
            let report = cmd_degrade(&a.input, &a.out, a.model, a.scale, a.image_type.parse()?, a.split.parse()?)?;
            println!("wrote {} pairs to {}", report.manifest.entries.len(), a.out.display());
            for (path, reason) in &report.skipped {
                eprintln!("skipped {}: {reason}", path.display());
            }
        }
        Command::Train(a) => {
            let summary = cmd_train(&TrainOptions {
                config: a.config,
                manifest: a.manifest,
                out: a.out,
                checkpoint: a.checkpoint,
                seed: a.seed,
                iterations: a.iterations,
            })?;
            println!("{}", summary.final_checkpoint.display());
        }
        Command::Eval(a) => {
            let source = match a.checkpoint {
                Some(p) => EvalSource::Checkpoint(p),
                None => EvalSource::Bicubic,
            };
            let expected = a.config.map(Config::load).transpose()?;
            let split = a.split.map(|s| s.parse()).transpose()?;
            let report = cmd_eval(&source, &a.manifest, split, expected.as_ref())?;
            let csv = report.to_csv();
            match a.out {
                Some(p) => std::fs::write(&p, csv).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{csv}"),
            }
        }
        Command::Infer(a) => {
            let expected = a.config.map(Config::load).transpose()?;
            let sr = cmd_infer(&a.checkpoint, &a.input, expected.as_ref())?;
            write_image(&sr, &a.out)?;
        }
        Command::Params(a) => {
            let mut cfg = load_config(a.config.as_deref())?;
            if let Some(r) = a.scale {
                cfg.model.scale = r;
            }
            println!("{}", cmd_params(&cfg.model)?);
        }
        Command::Gradcheck(a) => {
            let cfg = load_config(a.config.as_deref())?;
            let report = cmd_gradcheck(&cfg.model, a.seed, a.eps)?;
            println!(
                "max relative error {:.3e} over {} coordinates ({} skipped at kinks)",
                report.max_rel_error, report.checked, report.skipped
            );
            if let Some((name, i, an, nu)) = &report.worst {
                println!("worst: {name}[{i}] analytic {an:.9e} numeric {nu:.9e}");
            }
        }
    }
    Ok(())
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(Config::default()),
    }
}

/// Fails when a checkpoint's architecture differs from the expected one.
pub fn check_compatible(expected: &ModelConfig, found: &ModelConfig) -> Result<()> {
    ensure!(
        expected.scale == found.scale,
        "checkpoint scale {} does not match configured scale {}",
        found.scale,
        expected.scale
    );
    ensure!(
        expected.variant == found.variant,
        "checkpoint variant {} does not match configured variant {}",
        found.variant,
        expected.variant
    );
    ensure!(
        expected == found,
        "checkpoint architecture {found:?} does not match configuration {expected:?}"
    );
    Ok(())
}

#[derive(Debug)]
pub struct DegradeReport {
    pub manifest: Manifest,
    pub skipped: Vec<(PathBuf, String)>,
}

/// Writes `hr/` copies, `lr/` degraded slices and `manifest.tsv` under
/// `out`. Files whose size is not divisible by `scale` are skipped and
/// reported. Inputs are processed in file-name order.
pub fn cmd_degrade(
    input: &Path,
    out: &Path,
    model: DegradeModel,
    scale: usize,
    image_type: ImageType,
    split: Split,
) -> Result<DegradeReport> {
    ensure!(scale > 0, "scale must be positive");
    let mut files: Vec<PathBuf> = std::fs::read_dir(input)
        .with_context(|| format!("reading {}", input.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.is_file() && ImageFormat::from_path(p).is_ok());
    files.sort();

    std::fs::create_dir_all(out.join("hr"))?;
    std::fs::create_dir_all(out.join("lr"))?;
    let mut manifest = Manifest::new(out);
    let mut skipped = Vec::new();
    for path in files {
        let name = path.file_name().expect("file").to_owned();
        let id = path.file_stem().expect("file").to_string_lossy().into_owned();
        let hr = match read_image(&path) {
            Ok(img) => img,
            Err(e) => {
                skipped.push((path, e.to_string()));
                continue;
            }
        };
        let lr = match model {
            DegradeModel::Bd => degrade_bd(&hr, scale),
            DegradeModel::Td => degrade_td(&hr, scale),
        };
        let lr = match lr {
            Ok(img) => img,
            Err(e) => {
                skipped.push((path, e.to_string()));
                continue;
            }
        };
        let hr_rel = Path::new("hr").join(&name);
        let lr_rel = Path::new("lr").join(&name);
        std::fs::copy(&path, out.join(&hr_rel)).with_context(|| format!("copying {}", path.display()))?;
        write_image(&lr, out.join(&lr_rel))?;
        manifest.entries.push(ManifestEntry {
            id,
            hr_path: hr_rel,
            lr_path: lr_rel,
            degradation: model.into(),
            scale,
            image_type,
            split,
        });
    }
    manifest.save(out.join("manifest.tsv"))?;
    Ok(DegradeReport { manifest, skipped })
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    pub config: Option<PathBuf>,
    pub manifest: PathBuf,
    pub out: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub seed: Option<u64>,
    pub iterations: Option<u64>,
}

#[derive(Debug)]
pub struct TrainSummary {
    pub iterations: u64,
    pub final_loss: Option<f64>,
    pub final_checkpoint: PathBuf,
    pub log_path: PathBuf,
}

/// Trains on the `train` split, validating on `val` when present. Appends
/// to `out/train.log`, writes `out/ckpt_<iteration>.ckpt` periodically and
/// `out/final.ckpt` at the end.
pub fn cmd_train(opts: &TrainOptions) -> Result<TrainSummary> {
    let mut cfg = load_config(opts.config.as_deref())?;
    if let Some(seed) = opts.seed {
        cfg.train.seed = seed;
    }
    if let Some(it) = opts.iterations {
        cfg.train.iterations = it;
    }
    cfg.train.validate()?;

    let manifest = Manifest::load(&opts.manifest)?;
    let has_split = |s| manifest.entries_in(Some(s)).next().is_some();
    ensure!(has_split(Split::Train), "manifest has no train entries");
    let scale = manifest.entries_in(Some(Split::Train)).next().expect("non-empty").scale;
    ensure!(
        scale == cfg.model.scale,
        "manifest scale {scale} does not match configured scale {}",
        cfg.model.scale
    );

    let mut trainer = match &opts.checkpoint {
        Some(path) => {
            let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
            check_compatible(&cfg.model, &ck.config.model)?;
            let mut ck = ck;
            ck.config.train = cfg.train.clone();
            ck.into_trainer()?
        }
        None => Trainer::new(CsnModel::build(cfg.model.clone(), cfg.train.seed)?, cfg.train.clone())?,
    };

    let train = manifest.dataset(Some(Split::Train))?;
    let val = if has_split(Split::Val) {
        manifest.dataset(Some(Split::Val))?.pairs
    } else {
        Vec::new()
    };

    std::fs::create_dir_all(&opts.out)?;
    let log_path = opts.out.join("train.log");
    let mut log_file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .with_context(|| format!("opening {}", log_path.display()))?;
    let out = opts.out.clone();
    let log = trainer.run(
        &train,
        &val,
        |rec| {
            writeln!(log_file, "{rec}").map_err(|e| crate::Error::Io {
                path: log_path.display().to_string(),
                source: e,
            })
        },
        |t| Checkpoint::from_trainer(t).save(out.join(format!("ckpt_{:08}.ckpt", t.iteration))),
    )?;
    let final_checkpoint = opts.out.join("final.ckpt");
    Checkpoint::from_trainer(&trainer).save(&final_checkpoint)?;
    Ok(TrainSummary {
        iterations: trainer.iteration,
        final_loss: log.last().map(|r| r.loss),
        final_checkpoint,
        log_path,
    })
}

#[derive(Clone, Debug)]
pub enum EvalSource {
    Checkpoint(PathBuf),
    Bicubic,
}

/// Scores every selected manifest entry; images are processed in parallel
/// and reported in manifest order.
pub fn cmd_eval(
    source: &EvalSource,
    manifest_path: &Path,
    split: Option<Split>,
    expected: Option<&Config>,
) -> Result<MetricReport> {
    let manifest = Manifest::load(manifest_path)?;
    let entries: Vec<&ManifestEntry> = manifest.entries_in(split).collect();
    ensure!(!entries.is_empty(), "no manifest entries selected");
    let model = match source {
        EvalSource::Checkpoint(path) => {
            let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
            if let Some(cfg) = expected {
                check_compatible(&cfg.model, &ck.config.model)?;
            }
            Some(ck.model()?)
        }
        EvalSource::Bicubic => None,
    };
    if let Some(m) = &model {
        if let Some(e) = entries.iter().find(|e| e.scale != m.config.scale) {
            bail!(
                "entry `{}` has scale {}, checkpoint expects {}",
                e.id,
                e.scale,
                m.config.scale
            );
        }
    }
    let scores: Vec<ImageScore> = entries
        .par_iter()
        .map(|e| -> Result<ImageScore> {
            let pair = manifest.load_pair(e)?;
            let sr = match &model {
                Some(m) => super_resolve(m, &pair.lr)?,
                None => bicubic_upsample(&pair.lr, e.scale)?,
            };
            Ok(MetricReport::score(e.id.clone(), &pair.hr, &sr)?)
        })
        .collect::<Result<_>>()?;
    Ok(MetricReport::from_scores(scores))
}

pub fn bicubic_upsample(lr: &Image, scale: usize) -> crate::Result<Image> {
    let (h, w) = lr.dims();
    let up = bicubic_resize(&lr.to_tensor::<f64>(), h * scale, w * scale)?;
    Ok(Image::from_tensor(&up, 0, 0))
}

pub fn cmd_infer(checkpoint: &Path, input: &Path, expected: Option<&Config>) -> Result<Image> {
    let ck = Checkpoint::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    if let Some(cfg) = expected {
        check_compatible(&cfg.model, &ck.config.model)?;
    }
    let model = ck.model()?;
    let lr = read_image(input)?;
    Ok(super_resolve(&model, &lr)?)
}

/// `"<parameter count>, depth <depth>"`.
pub fn cmd_params(cfg: &ModelConfig) -> Result<String> {
    Ok(format!("{}, depth {}", crate::model::param_count(cfg)?, crate::model::depth(cfg)?))
}

/// Builds the tiny network (n = m = 1, C = 16, g = 4) with the variant,
/// scale and skip mode of `cfg`, and checks the L1 loss gradient on a
/// random 8x8 input in double precision.
pub fn cmd_gradcheck(cfg: &ModelConfig, seed: u64, eps: f64) -> Result<GradCheckReport> {
    let tiny = ModelConfig {
        variant: cfg.variant,
        scale: cfg.scale,
        esc: cfg.esc,
        in_channels: cfg.in_channels,
        ..ModelConfig::tiny()
    };
    let mut model = CsnModel::<f64>::build(tiny.clone(), seed)?;
    // Nonzero biases so the check also covers the bias paths.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for p in model.params.iter_mut() {
        if p.name.ends_with(".bias") {
            for v in p.value.data_mut() {
                *v = rng.gen_range(-0.1..0.1);
            }
        }
    }
    let (s, c) = (tiny.scale, tiny.in_channels);
    let x = Tensor4::from_fn([1, c, 8, 8], |_| rng.gen_range(0.0..1.0));
    let target = Tensor4::from_fn([1, c, 8 * s, 8 * s], |_| rng.gen_range(0.0..1.0));
    let net = model.clone();
    let report = grad_check(
        |tape| {
            let out = net.forward_graph(tape, x.clone())?;
            let t = tape.constant(target.clone());
            tape.l1_loss(out, t)
        },
        &mut model.params,
        GradCheckOptions { eps, seed, ..GradCheckOptions::default() },
    )?;
    Ok(report)
}
