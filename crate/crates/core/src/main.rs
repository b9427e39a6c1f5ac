use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use crossface::classify::{ClassifierKind, TrainedModel};
use crossface::config::{EmbedConfig, PipelineConfig};
use crossface::embed::EmbeddingStore;
use crossface::manifest::Manifest;
use crossface::synth::{self, SynthSpec};
use crossface::tensor::ImageTensor;
use crossface::{evaluate, pairs, pipeline};

#[derive(Parser)]
#[command(name = "crossface", version, about = "Selfie vs ID-document face matching toolkit")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the configuration file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-image stages.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ManifestOut {
    /// Input manifest (JSON lines).
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory for images and the new manifest.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Align, crop, resize and ACE-normalize raw face images.
    Preprocess(ManifestOut),
    /// Expand each chip into its eight augmentation variants.
    Augment(ManifestOut),
    /// Build an embedding store for every manifest row.
    Embed {
        #[arg(long)]
        manifest: PathBuf,
        /// Output store file.
        #[arg(long)]
        out: PathBuf,
        /// Precomputed store files to import.
        #[arg(long, num_args = 1.., conflicts_with = "extractor", required_unless_present = "extractor")]
        from_files: Vec<PathBuf>,
        /// Extractor command line; split on whitespace.
        #[arg(long)]
        extractor: Option<String>,
    },
    /// Split subjects and write train/test difference-vector pair files.
    Pairs {
        #[arg(long)]
        manifest: PathBuf,
        /// Store files holding every manifest image.
        #[arg(long, num_args = 1.., required = true)]
        embeddings: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a classifier on a pair file.
    Train {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        classifier: ClassifierKind,
        /// Output model file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a model on a pair file; writes report, ROC CSV and timing.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the ROC curve of a model on a pair file.
    Roc {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        /// CSV of threshold, FMR, TMR.
        #[arg(long)]
        out: PathBuf,
        /// Optional SVG plot with the EER marked.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Render synthetic selfie/ID images and their raw manifest.
    SynthImages {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        subjects: Option<usize>,
        #[arg(long)]
        image_size: Option<usize>,
    },
    /// Generate synthetic embedding stores and a matching manifest.
    SynthEmbeddings {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        subjects: Option<usize>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        noise_sigma: Option<f64>,
        #[arg(long)]
        shift: Option<f64>,
    },
    /// Run every stage inside a work directory, skipping stages that are current.
    Run {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        work_dir: PathBuf,
    },
    /// Deterministic extractor speaking the embedding protocol on stdin/stdout.
    ExtractSynthetic {
        #[arg(long)]
        dim: usize,
    },
}

fn load_config(cli: &Cli) -> anyhow::Result<PipelineConfig> {
    let config = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let seed = cli.seed.unwrap_or(config.seed);
    let config = config.with_seed(seed);
    config.validate()?;
    Ok(config)
}

fn base_dir(manifest: &Path) -> &Path {
    manifest.parent().unwrap_or(Path::new("."))
}

fn read_model_and_pairs(model: &Path, pairs_path: &Path) -> anyhow::Result<(TrainedModel, crossface::dataset::Dataset)> {
    let m = TrainedModel::load(model).with_context(|| format!("loading model {}", model.display()))?;
    let d = pairs::read_pairs(pairs_path).with_context(|| format!("loading pairs {}", pairs_path.display()))?;
    Ok((m, d))
}

fn extract_synthetic(dim: usize) -> anyhow::Result<()> {
    let stdin = std::io::stdin();
    let mut out = BufWriter::new(std::io::stdout().lock());
    for line in stdin.lock().lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let Some((id, path)) = line.split_once('\t') else {
            bail!("malformed request line {line:?}");
        };
        let img = ImageTensor::load(Path::new(path))?;
        let v = synth::synthetic_features(&img, dim)?;
        write!(out, "{id}")?;
        for x in v {
            write!(out, " {x}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    let config = load_config(&cli)?;
    let backend = config.backend;
    match cli.command {
        Command::Preprocess(io) => {
            let m = Manifest::read(&io.manifest)?;
            let out = pipeline::preprocess_manifest(
                &m,
                base_dir(&io.manifest),
                &io.out,
                backend.chip_size(),
                config.geometry.roi_factor,
                &config.ace,
            )?;
            eprintln!("{} chips written to {}", out.len(), io.out.display());
        }
        Command::Augment(io) => {
            let m = Manifest::read(&io.manifest)?;
            let out = pipeline::augment_manifest(&m, base_dir(&io.manifest), &io.out, &config.augment, config.seed)?;
            eprintln!("{} variants written to {}", out.len(), io.out.display());
        }
        Command::Embed {
            manifest,
            out,
            from_files,
            extractor,
        } => {
            let m = Manifest::read(&manifest)?;
            let source = EmbedConfig {
                extractor: extractor.map(|c| c.split_whitespace().map(str::to_owned).collect()),
                files: from_files,
            };
            let store = pipeline::embed_manifest(&m, base_dir(&manifest), &source, backend.dim(), backend.name())?;
            store.save(&out)?;
            eprintln!("{} embeddings written to {}", store.len(), out.display());
        }
        Command::Pairs {
            manifest,
            embeddings,
            out,
        } => {
            let m = Manifest::read(&manifest)?;
            let mut parts = embeddings.iter().map(|p| EmbeddingStore::load(p));
            let mut store = parts.next().expect("clap requires one store")?;
            for p in parts {
                store.merge(&p?)?;
            }
            let (split, train, test) = pipeline::build_pairs(&m, &store, &config.pairs, config.seed)?;
            std::fs::create_dir_all(&out)?;
            pairs::write_pairs(&out.join("train.pairs"), &train)?;
            pairs::write_pairs(&out.join("test.pairs"), &test)?;
            eprintln!(
                "{} train subjects / {} test subjects -> {} / {} pairs",
                split.train.len(),
                split.test.len(),
                train.len(),
                test.len()
            );
        }
        Command::Train {
            pairs: pairs_path,
            classifier,
            out,
        } => {
            let data = pairs::read_pairs(&pairs_path)?;
            let model = pipeline::train_model(classifier, &data, &config.classify.params)?;
            model.save(&out)?;
            eprintln!("{} model trained on {} pairs", classifier.name(), data.len());
        }
        Command::Eval {
            model,
            pairs: pairs_path,
            out,
        } => {
            let (m, d) = read_model_and_pairs(&model, &pairs_path)?;
            let mut report = evaluate::evaluate(&m, &d)?;
            let reps = config.evaluate.timing_repetitions;
            let timing = (reps > 0).then(|| evaluate::timing_report(&m, &d, reps)).transpose()?;
            pipeline::write_eval_outputs(&out, &report, config.evaluate.plot)?;
            if let Some(t) = &timing {
                std::fs::write(out.join("timing.txt"), t.to_text())?;
                report.mean_predict_latency = Some(t.mean);
            }
            print!("{}", report.to_text());
        }
        Command::Roc {
            model,
            pairs: pairs_path,
            out,
            plot,
        } => {
            let (m, d) = read_model_and_pairs(&model, &pairs_path)?;
            let roc = evaluate::roc_curve(&m.score_all(&d)?, d.labels())?;
            std::fs::write(&out, roc.to_csv())?;
            if let Some(p) = plot {
                std::fs::write(p, roc.to_svg())?;
            }
            println!("eer={:.6}", evaluate::eer(&roc));
        }
        Command::SynthImages {
            out,
            subjects,
            image_size,
        } => {
            let spec = SynthSpec {
                n_subjects: subjects.unwrap_or(config.synth.n_subjects),
                image_size: image_size.unwrap_or(config.synth.image_size),
                ..config.synth.clone()
            };
            let m = synth::synth_images(&spec, &out)?;
            m.write(&out.join(pipeline::MANIFEST_FILE))?;
            eprintln!("{} images written to {}", m.len(), out.display());
        }
        Command::SynthEmbeddings {
            out,
            subjects,
            dim,
            noise_sigma,
            shift,
        } => {
            let spec = SynthSpec {
                n_subjects: subjects.unwrap_or(config.synth.n_subjects),
                embedding_dim: dim.unwrap_or(config.synth.embedding_dim),
                noise_sigma: noise_sigma.unwrap_or(config.synth.noise_sigma),
                domain_shift_strength: shift.unwrap_or(config.synth.domain_shift_strength),
                ..config.synth.clone()
            };
            let (selfies, ids) = synth::synth_embeddings(&spec)?;
            std::fs::create_dir_all(&out)?;
            selfies.save(&out.join("selfie.emb"))?;
            ids.save(&out.join("id.emb"))?;
            synth::embedding_manifest(&spec).write(&out.join(pipeline::MANIFEST_FILE))?;
            eprintln!("{} subjects written to {}", spec.n_subjects, out.display());
        }
        Command::Run { manifest, work_dir } => {
            let result = pipeline::run_pipeline(&config, &manifest, &work_dir)?;
            eprintln!("stages run: {}", result.executed.join(", "));
            print!("{}", result.report.to_text());
        }
        Command::ExtractSynthetic { dim } => extract_synthetic(dim)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e
                .chain()
                .find_map(|c| c.downcast_ref::<crossface::Error>())
                .map_or(2, crossface::Error::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
