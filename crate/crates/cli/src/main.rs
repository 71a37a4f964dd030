use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use fallsense::audio_io::{build_manifest, synth_corpus, DatasetManifest, Split, SynthSpec};
use fallsense::augmentation::{default_fall_plan, default_nofall_plan, expand_corpus, read_plan};
use fallsense::experiments::{
    baseline_dnn, baseline_svm, evaluate, pairwise_analysis, run_ablation, train_on_manifest,
    AblationAxis, Kernel, ManifestDataset, SvmParams,
};
use fallsense::features::{write_cache, FeatureSpec, MelParams};
use fallsense::transformer::{
    load_checkpoint, save_checkpoint, ConfigId, Dataset, ModelConfig, TrainHyper,
};

mod sentinel_cmd;

#[derive(Parser)]
#[command(name = "fallsense", version, about = "Audio fall detection toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Corpus generation, manifests and augmentation.
    #[command(subcommand)]
    Dataset(DatasetCmd),
    /// Feature extraction to cache files.
    #[command(subcommand)]
    Features(FeaturesCmd),
    /// Training, evaluation, ablations and baselines.
    #[command(subcommand)]
    Exp(ExpCmd),
    /// Streaming inference with fall alerts.
    #[command(subcommand)]
    Sentinel(sentinel_cmd::SentinelCmd),
}

#[derive(Subcommand)]
enum DatasetCmd {
    /// Render the synthetic corpus into `<out>/<category>/clip_NNN.wav`.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Scan a `<corpus>/<category>/*.wav` tree and write a split manifest.
    Build {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Expand a manifest with augmentation plans.
    Augment {
        #[arg(long)]
        manifest: PathBuf,
        /// Directory for the expanded corpus; its manifest is written to `<out>/manifest.jsonl`.
        #[arg(long)]
        out: PathBuf,
        /// JSON-lines plan for fall clips (default plan when omitted).
        #[arg(long)]
        fall_plan: Option<PathBuf>,
        #[arg(long)]
        nofall_plan: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum FeaturesCmd {
    /// Write one feature cache file per clip of a split.
    Extract {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        features: FeatureArgs,
        #[arg(long, value_enum, default_value_t = SplitArg::Train)]
        split: SplitArg,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FeatureName {
    Raw,
    Diff,
    Logmel,
    Combined,
}

#[derive(Args, Clone)]
struct FeatureArgs {
    #[arg(long, value_enum, default_value_t = FeatureName::Diff)]
    features: FeatureName,
    /// Segment length in milliseconds (raw, Diff, combined).
    #[arg(long, default_value_t = 100)]
    t_seg_ms: u32,
    #[arg(long, default_value_t = 64)]
    n_mels: usize,
    #[arg(long, default_value_t = 2048)]
    n_fft: usize,
    #[arg(long, default_value_t = 1600)]
    hop: usize,
}

impl FeatureArgs {
    fn spec(&self) -> FeatureSpec {
        let mel = MelParams {
            n_fft: self.n_fft,
            hop: self.hop,
            n_mels: self.n_mels,
        };
        match self.features {
            FeatureName::Raw => FeatureSpec::Raw {
                t_seg_ms: self.t_seg_ms,
            },
            FeatureName::Diff => FeatureSpec::Diff {
                t_seg_ms: self.t_seg_ms,
            },
            FeatureName::Logmel => FeatureSpec::LogMel(mel),
            FeatureName::Combined => FeatureSpec::Combined {
                t_seg_ms: self.t_seg_ms,
                mel,
            },
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ConfigArg {
    A,
    B,
    C,
}

#[derive(Args, Clone)]
struct HyperArgs {
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 20)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-5)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl HyperArgs {
    fn hyper(&self) -> TrainHyper {
        TrainHyper {
            batch_size: self.batch_size,
            epochs: self.epochs,
            lr: self.lr,
            class_weights: None,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    HeadsLayers,
    Combined,
    Mels,
    Hop,
    Tseg,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineArg {
    Dnn,
    SvmLinear,
    SvmRbf,
}

#[derive(Subcommand)]
enum ExpCmd {
    /// Train a Transformer configuration and save the best-validation checkpoint.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        config: ConfigArg,
        #[command(flatten)]
        features: FeatureArgs,
        #[command(flatten)]
        hyper: HyperArgs,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch JSON-lines log.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on one split; prints the report as JSON.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        /// Also write per-clip predictions as JSON.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Run one ablation axis; writes `<out>/<axis>.csv` and `<out>/<axis>_epochs.csv`.
    Ablate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        axis: AxisArg,
        /// Feature family for the heads x layers axis.
        #[command(flatten)]
        features: FeatureArgs,
        #[command(flatten)]
        hyper: HyperArgs,
        /// Run only this cell (for parallel processes); the tables are rebuilt from all finished cells.
        #[arg(long)]
        cell: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fall recall for every (fall category, no-fall category) pair of the test split, as CSV.
    Pairwise {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate a DNN or SVM baseline.
    Baseline {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        model: BaselineArg,
        #[command(flatten)]
        features: FeatureArgs,
        #[command(flatten)]
        hyper: HyperArgs,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Dataset(cmd) => dataset(cmd),
        Command::Features(cmd) => features(cmd),
        Command::Exp(cmd) => exp(cmd),
        Command::Sentinel(cmd) => sentinel_cmd::run(cmd),
    }
}

fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    DatasetManifest::read(path).with_context(|| format!("reading manifest {}", path.display()))
}

fn dataset(cmd: DatasetCmd) -> Result<()> {
    match cmd {
        DatasetCmd::Synth { out, seed } => {
            let n = synth_corpus(&SynthSpec::standard(seed), &out)?;
            println!("wrote {n} clips to {}", out.display());
        }
        DatasetCmd::Build { corpus, out, seed } => {
            let m = build_manifest(&corpus, seed)?;
            m.write(&out)?;
            for split in Split::ALL {
                println!("{split}: {} clips", m.split(split).count());
            }
        }
        DatasetCmd::Augment {
            manifest,
            out,
            fall_plan,
            nofall_plan,
            seed,
        } => {
            let m = read_manifest(&manifest)?;
            let fall = match fall_plan {
                Some(p) => read_plan(&p)?,
                None => default_fall_plan(seed),
            };
            let nofall = match nofall_plan {
                Some(p) => read_plan(&p)?,
                None => default_nofall_plan(seed),
            };
            let expanded = expand_corpus(&m, &fall, &nofall, &out)?;
            let path = out.join("manifest.jsonl");
            expanded.write(&path)?;
            println!(
                "wrote {} clips; manifest {}",
                expanded.entries.len(),
                path.display()
            );
        }
    }
    Ok(())
}

fn features(cmd: FeaturesCmd) -> Result<()> {
    let FeaturesCmd::Extract {
        manifest,
        features,
        split,
        out,
    } = cmd;
    let m = read_manifest(&manifest)?;
    let data = ManifestDataset::new(&m, split.into(), features.spec(), m.max_len_samples)?;
    std::fs::create_dir_all(&out)?;
    for i in 0..data.len() {
        let rel = Path::new(&data.entry(i).path).with_extension("fsfc");
        let path = out.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        write_cache(&path, &data.features(i)?)?;
    }
    println!("wrote {} feature files to {}", data.len(), out.display());
    Ok(())
}

fn config_for(config: ConfigArg, spec: FeatureSpec, target_len: usize) -> Result<ModelConfig> {
    let cfg = ModelConfig::for_features(spec, target_len);
    let wanted = match config {
        ConfigArg::A => ConfigId::A,
        ConfigArg::B => ConfigId::B,
        ConfigArg::C => ConfigId::C,
    };
    if cfg.config_id != wanted {
        bail!(
            "configuration {wanted:?} does not fit {:?} features (use {:?})",
            spec.kind(),
            cfg.config_id
        );
    }
    Ok(cfg)
}

fn exp(cmd: ExpCmd) -> Result<()> {
    match cmd {
        ExpCmd::Train {
            manifest,
            config,
            features,
            hyper,
            out,
            log,
        } => {
            let m = read_manifest(&manifest)?;
            let cfg = config_for(config, features.spec(), m.max_len_samples)?;
            let mut log_file = log
                .map(|p| File::create(p).map(BufWriter::new))
                .transpose()?;
            let outcome = train_on_manifest(
                &m,
                cfg,
                &hyper.hyper(),
                hyper.seed,
                log_file.as_mut().map(|w| w as &mut dyn Write),
            )?;
            save_checkpoint(&outcome.model, &out)?;
            println!(
                "best epoch {:?}; checkpoint {}",
                outcome.best_epoch,
                out.display()
            );
        }
        ExpCmd::Evaluate {
            checkpoint,
            manifest,
            split,
            predictions,
        } => {
            let model = load_checkpoint(&checkpoint)?;
            let m = read_manifest(&manifest)?;
            let eval = evaluate(&model, &m, split.into())?;
            if let Some(p) = predictions {
                std::fs::write(p, serde_json::to_string_pretty(&eval.predictions)?)?;
            }
            println!("{}", serde_json::to_string_pretty(&eval.report)?);
        }
        ExpCmd::Ablate {
            manifest,
            axis,
            features,
            hyper,
            cell,
            out,
        } => {
            let m = read_manifest(&manifest)?;
            let axis = match axis {
                AxisArg::HeadsLayers => AblationAxis::HeadsLayers,
                AxisArg::Combined => AblationAxis::Combined,
                AxisArg::Mels => AblationAxis::Mels,
                AxisArg::Hop => AblationAxis::Hop,
                AxisArg::Tseg => AblationAxis::TSeg,
            };
            let rows = run_ablation(
                axis,
                &m,
                features.spec(),
                &hyper.hyper(),
                hyper.seed,
                &|_| {},
                cell,
                &out,
            )?;
            for r in rows {
                println!(
                    "{}\t{}x{}\t{:?}\t{:?}",
                    r.setting, r.rows, r.cols, r.accuracy, r.f1
                );
            }
        }
        ExpCmd::Pairwise {
            checkpoint,
            manifest,
            out,
        } => {
            let model = load_checkpoint(&checkpoint)?;
            let m = read_manifest(&manifest)?;
            let pairs = pairwise_analysis(&model, &m)?;
            let mut text = String::from("fall_category,nofall_category,recall\n");
            for ((f, n), r) in pairs {
                text.push_str(&format!("{f},{n},{r:.4}\n"));
            }
            match out {
                Some(p) => std::fs::write(p, text)?,
                None => print!("{text}"),
            }
        }
        ExpCmd::Baseline {
            manifest,
            model,
            features,
            hyper,
        } => {
            let m = read_manifest(&manifest)?;
            let spec = features.spec();
            let report = match model {
                BaselineArg::Dnn => baseline_dnn(&m, spec, &hyper.hyper(), hyper.seed)?.report,
                BaselineArg::SvmLinear | BaselineArg::SvmRbf => {
                    let kernel = match model {
                        BaselineArg::SvmLinear => Kernel::Linear,
                        _ => Kernel::Rbf { gamma: None },
                    };
                    let (eval, fit) = baseline_svm(&m, spec, &SvmParams::new(kernel))?;
                    if let Err(e) = fit.check_converged() {
                        log::warn!("{e}; reporting the partial model");
                    }
                    eval.report
                }
            };
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}
