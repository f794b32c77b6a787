//! `gasl` command-line entry point.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use gasl_core::benchmarks;
use gasl_core::datamodel::container::{read_features, read_semantics, write_features, write_semantics};
use gasl_core::datamodel::{BasePartition, ClassId, DataSource, ExperimentConfig, SyntheticDatasetSpec, VisualProvenance};
use gasl_core::embeddings::semantic::{self, CoreKind, TextEncoderConfig};
use gasl_core::embeddings::visual::{self, Backbone, ToyBackbone, VisualFinetuneConfig};
use gasl_core::error::Error;
use gasl_core::harness::report::{emit_report, Layout};
use gasl_core::harness::synthetic::make_synthetic_dataset;
use gasl_core::harness::{self, load_dataset, run_experiment, store};
use gasl_core::splits::{build_split, parse_task};
use log::info;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_PROTOCOL: u8 = 3;
const EXIT_INGEST: u8 = 4;

#[derive(Parser)]
#[command(name = "gasl", version, about = "Any-shot learning benchmark for embedding-aware generative models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and print its result record.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write a synthetic dataset as containers plus a base partition.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a task split for a benchmark layout or a container directory.
    Splits {
        /// Benchmark id (FLO, CUB, SUN, AWA2, AWA) or a directory written by `synth`.
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        task: String,
        #[arg(long)]
        shots: Option<usize>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize stored result records.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = LayoutArg::Flat)]
        layout: LayoutArg,
    },
    /// Extract visual features with the toy backbone.
    EmbedVisual {
        #[arg(long, value_enum)]
        variant: VisualVariant,
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Base partition over the loaded images; finetuning uses its training rows.
        #[arg(long)]
        partition: Option<PathBuf>,
        /// Semantic container for the regularized variant.
        #[arg(long)]
        semantics: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "images")]
        dataset_id: String,
    },
    /// Train a text encoder and write class descriptions.
    EmbedSemantic {
        #[arg(long, value_enum)]
        variant: SemanticVariant,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        visual: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Base partition over the visual container; training uses its training rows.
        #[arg(long)]
        partition: Option<PathBuf>,
        #[arg(long, default_value_t = semantic::DEFAULT_HIDDEN)]
        hidden: usize,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum LayoutArg {
    Flat,
    Grid,
}

#[derive(Clone, Copy, ValueEnum)]
enum VisualVariant {
    Naive,
    Finetune,
    Regularized,
}

#[derive(Clone, Copy, ValueEnum)]
enum SemanticVariant {
    Naive,
    Gru,
    ImbGru,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    let Some(err) = e.chain().find_map(|c| c.downcast_ref::<Error>()) else {
        return EXIT_FAILURE;
    };
    match err.root() {
        Error::Config(_) | Error::InvalidTask(_) | Error::ShotOverflow { .. } | Error::Json(_) => EXIT_CONFIG,
        Error::ProtocolViolation(_) => EXIT_PROTOCOL,
        Error::Ingest { .. } | Error::MissingDescription(_) => EXIT_INGEST,
        _ => EXIT_FAILURE,
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let v = serde_json::from_slice(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Ok(v)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_vec_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run { config } => run(&config),
        Command::Synth { spec, out } => synth(&spec, &out),
        Command::Splits {
            dataset,
            task,
            shots,
            seed,
            out,
        } => splits(&dataset, &task, shots, seed, &out),
        Command::Report { input, out, layout } => {
            let records = store::load_all(&input)?;
            let layout = match layout {
                LayoutArg::Flat => Layout::Flat,
                LayoutArg::Grid => Layout::Grid,
            };
            let report = emit_report(&records, layout, &out)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            print!("{}", fs::read_to_string(&report.table)?);
            Ok(())
        }
        Command::EmbedVisual {
            variant,
            images,
            out,
            partition,
            semantics,
            epochs,
            seed,
            dataset_id,
        } => embed_visual(variant, &images, &out, partition.as_deref(), semantics.as_deref(), epochs, seed, &dataset_id),
        Command::EmbedSemantic {
            variant,
            alpha,
            corpus,
            visual,
            out,
            partition,
            hidden,
            epochs,
            seed,
        } => {
            let (core, default_alpha) = match variant {
                SemanticVariant::Naive => (CoreKind::LstmLike, 0.5),
                SemanticVariant::Gru => (CoreKind::GruLike, 0.5),
                SemanticVariant::ImbGru => (CoreKind::GruLike, 0.8),
            };
            let cfg = TextEncoderConfig {
                core,
                alpha: alpha.unwrap_or(default_alpha),
                hidden,
                epochs,
                seed,
                ..Default::default()
            };
            embed_semantic(&cfg, &corpus, &visual, &out, partition.as_deref())
        }
    }
}

fn run(config: &Path) -> Result<()> {
    let cfg: ExperimentConfig = read_json(config)?;
    cfg.validate()?;
    let data = load_dataset(&cfg.data)?;
    let record = run_experiment(&cfg, &data)?;
    if let Some(dir) = harness::results_dir(&cfg) {
        info!("record stored under {}", dir.display());
    }
    println!("{}", serde_json::to_string_pretty(&record)?);
    Ok(())
}

const FEATURES_DIR: &str = "features";
const SEMANTICS_DIR: &str = "semantics";
const PARTITION_FILE: &str = "partition.json";
const SOURCE_FILE: &str = "source.json";

fn synth(spec: &Path, out: &Path) -> Result<()> {
    let spec: SyntheticDatasetSpec = read_json(spec)?;
    let ds = make_synthetic_dataset(&spec)?;
    fs::create_dir_all(out)?;
    write_features(&out.join(FEATURES_DIR), &ds.features)?;
    write_semantics(&out.join(SEMANTICS_DIR), &ds.semantics)?;
    write_json(&out.join(PARTITION_FILE), &ds.base)?;
    let source = DataSource::Containers {
        features: out.join(FEATURES_DIR),
        semantics: out.join(SEMANTICS_DIR),
        partition: out.join(PARTITION_FILE),
        p: spec.p,
    };
    write_json(&out.join(SOURCE_FILE), &source)?;
    println!("{} samples, {} seen + {} unseen classes -> {}", ds.features.len(), ds.meta.p, ds.meta.q, out.display());
    Ok(())
}

fn splits(dataset: &str, task: &str, shots: Option<usize>, seed: u64, out: &Path) -> Result<()> {
    let task = parse_task(task)?;
    let dir = Path::new(dataset);
    let spec = if dir.is_dir() {
        let source: DataSource = read_json(&dir.join(SOURCE_FILE))?;
        let ds = load_dataset(&source)?;
        build_split(&ds.meta, &ds.features.y, &ds.base, task, shots, seed)?
    } else {
        let layout = benchmarks::layout(benchmarks::stats(dataset).map_err(|e| Error::Config(e.to_string()))?)?;
        build_split(&layout.meta, &layout.labels, &layout.base, task, shots, seed)?
    };
    write_json(out, &spec)
}

/// Rows of the training partition and their classes, or every row.
fn training_rows(partition: Option<&Path>, labels: &[ClassId]) -> Result<(Vec<usize>, Vec<ClassId>)> {
    let rows = match partition {
        Some(p) => {
            let base: BasePartition = read_json(p)?;
            if let Some(&i) = base.train_seen.iter().find(|&&i| i >= labels.len()) {
                return Err(Error::ingest(p, format!("index {i} out of range for {} samples", labels.len())).into());
            }
            base.train_seen
        }
        None => (0..labels.len()).collect(),
    };
    let mut seen: Vec<ClassId> = rows.iter().map(|&i| labels[i]).collect();
    seen.sort_unstable();
    seen.dedup();
    Ok((rows, seen))
}

#[allow(clippy::too_many_arguments)]
fn embed_visual(
    variant: VisualVariant,
    images: &Path,
    out: &Path,
    partition: Option<&Path>,
    semantics: Option<&Path>,
    epochs: usize,
    seed: u64,
    dataset_id: &str,
) -> Result<()> {
    let mut backbone = ToyBackbone::standard(seed);
    let set = visual::load_images(images, &backbone)?;
    let provenance = match variant {
        VisualVariant::Naive => VisualProvenance::Naive,
        VisualVariant::Finetune | VisualVariant::Regularized => {
            let Some(part) = partition else {
                return Err(Error::Config("finetuning needs --partition to pick its training images".into()).into());
            };
            let (rows, seen) = training_rows(Some(part), &set.y)?;
            let train = visual::ImageSet {
                x: set.x.select(ndarray::Axis(0), &rows),
                y: rows.iter().map(|&i| set.y[i]).collect(),
                files: rows.iter().map(|&i| set.files[i].clone()).collect(),
            };
            let cfg = VisualFinetuneConfig {
                epochs,
                seed,
                ..Default::default()
            };
            if let VisualVariant::Regularized = variant {
                let Some(sem) = semantics else {
                    return Err(Error::Config("the regularized variant needs --semantics".into()).into());
                };
                let table = read_semantics(sem)?;
                visual::finetune_regularized(&mut backbone, &train, &seen, &table, &cfg)?;
                VisualProvenance::Regularized
            } else {
                visual::finetune_ce(&mut backbone, &train, &seen, &cfg)?;
                VisualProvenance::Finetuned
            }
        }
    };
    let fs_ = visual::extract(&backbone, &set, provenance, dataset_id)?;
    write_features(out, &fs_)?;
    println!("{} x {} features -> {}", fs_.len(), backbone.output_dim(), out.display());
    Ok(())
}

fn embed_semantic(cfg: &TextEncoderConfig, corpus: &Path, visual: &Path, out: &Path, partition: Option<&Path>) -> Result<()> {
    let corpus = semantic::load_corpus(corpus)?;
    let feats = read_features(visual)?;
    let (rows, _) = training_rows(partition, &feats.y)?;
    let train = feats.subset(&rows);
    let (enc, _) = semantic::train_text_encoder(&corpus, &train, cfg)?;
    let table = semantic::class_embeddings(&enc, &corpus, cfg.provenance(), &feats.dataset_id)?;
    write_semantics(out, &table)?;
    println!("{} x {} descriptions -> {}", table.num_classes(), table.dim(), out.display());
    Ok(())
}
