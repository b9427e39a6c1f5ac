//! Stage functions shared by the command-line tool, and the end-to-end runner
//! that chains them inside a work directory.
//!
//! Each stage of `run_pipeline` records a stamp holding the hash of its inputs
//! (upstream outputs plus the relevant configuration) and the hash of what it
//! wrote. A stage is skipped when both still match.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::augment::{self, AugmentParams};
use crate::classify::{self, ClassifierKind, ClassifyParams, TrainedModel};
use crate::config::{EmbedConfig, PipelineConfig};
use crate::dataset::Dataset;
use crate::embed::{self, EmbeddingStore, ExtractRequest};
use crate::error::{Error, Result};
use crate::evaluate::{self, EvalReport};
use crate::geometry;
use crate::manifest::{Manifest, ManifestRow, Stage};
use crate::pairs::{self, PairRecord, Split, SplitSpec};
use crate::photometric::{self, AceParams};
use crate::seed;
use crate::tensor::ImageTensor;

pub const MANIFEST_FILE: &str = "manifest.jsonl";

fn stage_err<'a>(stage: &'static str, image_id: Option<&'a str>) -> impl Fn(Error) -> Error + 'a {
    move |e| match e {
        e @ Error::Stage { .. } => e,
        e => e.in_stage(stage, image_id),
    }
}

/// Aligns, crops and ACE-normalizes every raw row into `out_dir`, writing the chip manifest there.
pub fn preprocess_manifest(
    manifest: &Manifest,
    base_dir: &Path,
    out_dir: &Path,
    chip_size: usize,
    roi_factor: f64,
    ace: &AceParams,
) -> Result<Manifest> {
    manifest.validate()?;
    fs::create_dir_all(out_dir)?;
    let rows = manifest
        .rows
        .par_iter()
        .map(|row| {
            let wrap = stage_err("preprocess", Some(&row.image_id));
            if row.stage != Stage::Raw {
                return Err(wrap(Error::ManifestIncomplete(format!(
                    "expected a raw image, found stage {:?}",
                    row.stage
                ))));
            }
            let img = ImageTensor::load(&Manifest::resolve(base_dir, row)).map_err(&wrap)?;
            let chip = geometry::preprocess_face(&img, &row.annotation(), chip_size, roi_factor).map_err(&wrap)?;
            let params = AceParams {
                seed: seed::derive(ace.seed, seed::stream::ACE, seed::hash_str(&row.image_id)),
                ..ace.clone()
            };
            let normalized = photometric::ace_normalize(&chip.pixels, &params).map_err(&wrap)?;
            let file = format!("{}.png", row.image_id);
            normalized.save(&out_dir.join(&file)).map_err(&wrap)?;
            Ok(ManifestRow {
                path: file,
                bbox: chip.annotation.bbox,
                left_eye: chip.annotation.left_eye,
                right_eye: chip.annotation.right_eye,
                stage: Stage::Normalized,
                ..row.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let out = Manifest::new(rows);
    out.write(&out_dir.join(MANIFEST_FILE))?;
    Ok(out)
}

/// Expands every chip into its eight variants under `out_dir`, writing their manifest there.
pub fn augment_manifest(
    manifest: &Manifest,
    base_dir: &Path,
    out_dir: &Path,
    params: &AugmentParams,
    master_seed: u64,
) -> Result<Manifest> {
    manifest.validate()?;
    fs::create_dir_all(out_dir)?;
    let groups = manifest
        .rows
        .par_iter()
        .map(|row| {
            let wrap = stage_err("augment", Some(&row.image_id));
            let img = ImageTensor::load(&Manifest::resolve(base_dir, row)).map_err(&wrap)?;
            let variants = augment::augment_source(&img, row, params, master_seed).map_err(&wrap)?;
            variants
                .into_iter()
                .map(|(r, pixels)| {
                    pixels.save(&out_dir.join(&r.path)).map_err(&wrap)?;
                    Ok(r)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let out = Manifest::new(groups.into_iter().flatten().collect());
    out.write(&out_dir.join(MANIFEST_FILE))?;
    Ok(out)
}

/// Embeddings for every manifest row, from an extractor process or precomputed stores.
pub fn embed_manifest(manifest: &Manifest, base_dir: &Path, source: &EmbedConfig, dim: usize, backend_tag: &str) -> Result<EmbeddingStore> {
    let ids = manifest.rows.iter().map(|r| r.image_id.as_str());
    if let Some(command) = &source.extractor {
        let requests: Vec<ExtractRequest> = manifest
            .rows
            .iter()
            .map(|r| ExtractRequest {
                image_id: r.image_id.clone(),
                path: Manifest::resolve(base_dir, r),
            })
            .collect();
        return embed::extract_via_external(command, &requests, dim, backend_tag);
    }
    if source.files.is_empty() {
        return Err(Error::InvalidParameter(
            "no embedding source: set an extractor command or store files".into(),
        ));
    }
    let mut store = EmbeddingStore::new(backend_tag, dim);
    for f in &source.files {
        let part = EmbeddingStore::load(f)?;
        store.merge(&part)?;
    }
    store.check_complete(ids)?;
    Ok(store)
}

/// Train and test pairs from a subject-disjoint split of the manifest's base subjects.
pub fn build_pairs(
    manifest: &Manifest,
    store: &EmbeddingStore,
    split: &SplitSpec,
    pair_seed: u64,
) -> Result<(Split, Vec<PairRecord>, Vec<PairRecord>)> {
    manifest.validate()?;
    let split = pairs::split_subjects(&manifest.subjects(), split)?;
    let units = pairs::units_from_rows(&manifest.rows)?;
    let train_set: HashSet<&str> = split.train.iter().map(String::as_str).collect();
    let (train_units, test_units): (Vec<_>, Vec<_>) =
        units.into_iter().partition(|u| train_set.contains(u.subject.as_str()));
    let train = pairs::generate_pairs(&train_units, store, pair_seed)?;
    let test = pairs::generate_pairs(&test_units, store, pair_seed)?;
    Ok((split, train, test))
}

/// Report, ROC CSV and optional SVG next to each other in `dir`.
pub fn write_eval_outputs(dir: &Path, report: &EvalReport, plot: bool) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.txt"), report.to_text())?;
    fs::write(dir.join("roc.csv"), report.roc.to_csv())?;
    if plot {
        fs::write(dir.join("roc.svg"), report.roc.to_svg())?;
    }
    Ok(())
}

#[derive(Default)]
struct Hasher(Sha256);

impl Hasher {
    fn part(&mut self, bytes: &[u8]) -> &mut Self {
        self.0.update((bytes.len() as u64).to_le_bytes());
        self.0.update(bytes);
        self
    }

    fn value<T: Serialize>(&mut self, v: &T) -> &mut Self {
        let json = serde_json::to_vec(v).expect("config values serialize");
        self.part(&json)
    }

    fn file(&mut self, path: &Path) -> Result<&mut Self> {
        let bytes = fs::read(path)?;
        self.part(path.file_name().map(|n| n.as_encoded_bytes()).unwrap_or_default());
        Ok(self.part(&bytes))
    }

    fn finish(&mut self) -> String {
        hex::encode(std::mem::take(&mut self.0).finalize())
    }
}

fn hash_outputs(paths: &[PathBuf]) -> Result<Option<String>> {
    let mut h = Hasher::default();
    for p in paths {
        if !p.is_file() {
            return Ok(None);
        }
        h.file(p)?;
    }
    Ok(Some(h.finish()))
}

struct Stamps {
    dir: PathBuf,
}

impl Stamps {
    fn path(&self, stage: &str) -> PathBuf {
        self.dir.join(format!("{stage}.stamp"))
    }

    /// Output hash of a stage whose recorded input hash and outputs are still current.
    fn fresh(&self, stage: &str, input: &str, outputs: &[PathBuf]) -> Result<Option<String>> {
        let Ok(text) = fs::read_to_string(self.path(stage)) else {
            return Ok(None);
        };
        let mut lines = text.lines();
        let (Some(i), Some(o)) = (lines.next(), lines.next()) else {
            return Ok(None);
        };
        if i != format!("input={input}") {
            return Ok(None);
        }
        match hash_outputs(outputs)? {
            Some(h) if o == format!("output={h}") => Ok(Some(h)),
            _ => Ok(None),
        }
    }

    fn record(&self, stage: &str, input: &str, outputs: &[PathBuf]) -> Result<String> {
        let out = hash_outputs(outputs)?
            .ok_or_else(|| Error::Invariant(format!("stage {stage} did not write all of its outputs")))?;
        fs::create_dir_all(&self.dir)?;
        fs::write(self.path(stage), format!("input={input}\noutput={out}\n"))?;
        Ok(out)
    }
}

/// Result of an end-to-end run.
#[derive(Clone, Debug)]
pub struct PipelineRun {
    pub report: EvalReport,
    /// Stages that actually ran, in order; the rest were current and skipped.
    pub executed: Vec<&'static str>,
    pub work_dir: PathBuf,
}

pub const STAGES: [&str; 6] = ["preprocess", "augment", "embed", "pairs", "train", "eval"];

fn manifest_outputs(dir: &Path, m: &Manifest) -> Vec<PathBuf> {
    let mut v = vec![dir.join(MANIFEST_FILE)];
    let files: BTreeSet<&str> = m.rows.iter().map(|r| r.path.as_str()).collect();
    v.extend(files.into_iter().map(|f| dir.join(f)));
    v
}

fn planned_outputs(dir: &Path) -> Result<Vec<PathBuf>> {
    match Manifest::read(&dir.join(MANIFEST_FILE)) {
        Ok(m) => Ok(manifest_outputs(dir, &m)),
        Err(_) => Ok(vec![dir.join(MANIFEST_FILE)]),
    }
}

/// Runs preprocess → augment → embed → pairs → train → eval under `work_dir`.
pub fn run_pipeline(config: &PipelineConfig, manifest_path: &Path, work_dir: &Path) -> Result<PipelineRun> {
    config.validate()?;
    let manifest = Manifest::read(manifest_path)?;
    manifest.validate()?;
    let base_dir = manifest_path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(work_dir)?;
    let stamps = Stamps {
        dir: work_dir.join("stamps"),
    };
    let mut executed = Vec::new();
    let backend = config.backend;

    // preprocess
    let chips_dir = work_dir.join("chips");
    let input = {
        let mut h = Hasher::default();
        h.part(b"preprocess")
            .value(&backend)
            .value(&config.geometry)
            .value(&config.ace)
            .value(&config.seed)
            .file(manifest_path)?;
        for row in &manifest.rows {
            h.part(row.image_id.as_bytes());
            h.file(&Manifest::resolve(base_dir, row))
                .map_err(stage_err("preprocess", Some(&row.image_id)))?;
        }
        h.finish()
    };
    let chips_hash = match stamps.fresh("preprocess", &input, &planned_outputs(&chips_dir)?)? {
        Some(h) => h,
        None => {
            let ace = AceParams {
                seed: config.seed,
                ..config.ace.clone()
            };
            let m = preprocess_manifest(
                &manifest,
                base_dir,
                &chips_dir,
                backend.chip_size(),
                config.geometry.roi_factor,
                &ace,
            )?;
            executed.push("preprocess");
            stamps.record("preprocess", &input, &manifest_outputs(&chips_dir, &m))?
        }
    };

    // augment
    let aug_dir = work_dir.join("augmented");
    let input = Hasher::default()
        .part(b"augment")
        .part(chips_hash.as_bytes())
        .value(&config.augment)
        .value(&config.seed)
        .finish();
    let aug_hash = match stamps.fresh("augment", &input, &planned_outputs(&aug_dir)?)? {
        Some(h) => h,
        None => {
            let chips = Manifest::read(&chips_dir.join(MANIFEST_FILE))?;
            let m = augment_manifest(&chips, &chips_dir, &aug_dir, &config.augment, config.seed)?;
            executed.push("augment");
            stamps.record("augment", &input, &manifest_outputs(&aug_dir, &m))?
        }
    };
    let augmented = Manifest::read(&aug_dir.join(MANIFEST_FILE))?;

    // embed
    let store_path = work_dir.join("embeddings.emb");
    let mut h = Hasher::default();
    h.part(b"embed").part(aug_hash.as_bytes()).value(&config.embed).value(&backend);
    for f in &config.embed.files {
        h.file(f)?;
    }
    let input = h.finish();
    let store_outputs = [store_path.clone()];
    let store_hash = match stamps.fresh("embed", &input, &store_outputs)? {
        Some(h) => h,
        None => {
            let store = embed_manifest(&augmented, &aug_dir, &config.embed, backend.dim(), backend.name())
                .map_err(stage_err("embed", None))?;
            store.save(&store_path)?;
            executed.push("embed");
            stamps.record("embed", &input, &store_outputs)?
        }
    };

    // pairs
    let pairs_dir = work_dir.join("pairs");
    let train_path = pairs_dir.join("train.pairs");
    let test_path = pairs_dir.join("test.pairs");
    let input = Hasher::default()
        .part(b"pairs")
        .part(store_hash.as_bytes())
        .part(aug_hash.as_bytes())
        .value(&config.pairs)
        .value(&config.seed)
        .finish();
    let pair_outputs = [train_path.clone(), test_path.clone()];
    let pairs_hash = match stamps.fresh("pairs", &input, &pair_outputs)? {
        Some(h) => h,
        None => {
            let store = EmbeddingStore::load(&store_path)?;
            let split = SplitSpec {
                seed: config.seed,
                ..config.pairs.clone()
            };
            let (_, train, test) =
                build_pairs(&augmented, &store, &split, config.seed).map_err(stage_err("pairs", None))?;
            fs::create_dir_all(&pairs_dir)?;
            pairs::write_pairs(&train_path, &train)?;
            pairs::write_pairs(&test_path, &test)?;
            executed.push("pairs");
            stamps.record("pairs", &input, &pair_outputs)?
        }
    };

    // train
    let model_path = work_dir.join("model.bin");
    let params = config.classify.params.clone().with_seed(config.seed);
    let input = Hasher::default()
        .part(b"train")
        .part(pairs_hash.as_bytes())
        .value(&config.classify.classifier)
        .value(&params)
        .finish();
    let model_outputs = [model_path.clone()];
    let model_hash = match stamps.fresh("train", &input, &model_outputs)? {
        Some(h) => h,
        None => {
            let data = pairs::read_pairs(&train_path)?;
            let model = train_model(config.classify.classifier, &data, &params).map_err(stage_err("train", None))?;
            model.save(&model_path)?;
            executed.push("train");
            stamps.record("train", &input, &model_outputs)?
        }
    };

    // eval
    let eval_dir = work_dir.join("eval");
    let input = Hasher::default()
        .part(b"eval")
        .part(model_hash.as_bytes())
        .part(pairs_hash.as_bytes())
        .value(&config.evaluate)
        .finish();
    let mut eval_outputs = vec![eval_dir.join("report.txt"), eval_dir.join("roc.csv")];
    if config.evaluate.plot {
        eval_outputs.push(eval_dir.join("roc.svg"));
    }
    let model = TrainedModel::load(&model_path)?;
    let test = pairs::read_pairs(&test_path)?;
    let report = evaluate::evaluate(&model, &test).map_err(stage_err("eval", None))?;
    if stamps.fresh("eval", &input, &eval_outputs)?.is_none() {
        write_eval_outputs(&eval_dir, &report, config.evaluate.plot)?;
        if config.evaluate.timing_repetitions > 0 {
            let timing = evaluate::timing_report(&model, &test, config.evaluate.timing_repetitions)?;
            fs::write(eval_dir.join("timing.txt"), timing.to_text())?;
        }
        executed.push("eval");
        stamps.record("eval", &input, &eval_outputs)?;
    }

    Ok(PipelineRun {
        report,
        executed,
        work_dir: work_dir.to_path_buf(),
    })
}

pub fn train_model(kind: ClassifierKind, data: &Dataset, params: &ClassifyParams) -> Result<TrainedModel> {
    classify::train(kind, data, params)
}
