use std::path::{Path, PathBuf};

use crossface::classify::ClassifierKind;
use crossface::config::{Backend, PipelineConfig};
use crossface::manifest::{Manifest, Role};
use crossface::pipeline::{self, STAGES};
use crossface::synth::{self, SynthSpec};
use crossface::Error;

fn config(classifier: ClassifierKind) -> PipelineConfig {
    let mut c = PipelineConfig::default().with_seed(11);
    c.backend = Backend::OpenFace128;
    c.classify.classifier = classifier;
    c.classify.params.rf.n_trees = 31;
    c.embed.extractor = Some(vec![
        env!("CARGO_BIN_EXE_crossface").to_owned(),
        "extract-synthetic".to_owned(),
        "--dim".to_owned(),
        "128".to_owned(),
    ]);
    c.evaluate.timing_repetitions = 1;
    c
}

fn dataset(root: &Path, subjects: usize) -> PathBuf {
    let data = root.join("data");
    let spec = SynthSpec {
        n_subjects: subjects,
        seed: 8,
        ..SynthSpec::default()
    };
    let m = synth::synth_images(&spec, &data).unwrap();
    let path = data.join(pipeline::MANIFEST_FILE);
    m.write(&path).unwrap();
    path
}

#[test]
fn rerun_is_incremental_and_reproducible() {
    let root = tempfile::tempdir().unwrap();
    let manifest = dataset(root.path(), 40);
    let work = root.path().join("work");
    let report_path = work.join("eval/report.txt");

    let first = pipeline::run_pipeline(&config(ClassifierKind::Rf), &manifest, &work).unwrap();
    assert_eq!(first.executed, STAGES.to_vec());
    assert!(first.report.accuracy > 0.9, "accuracy {}", first.report.accuracy);
    for f in ["embeddings.emb", "pairs/train.pairs", "pairs/test.pairs", "model.bin", "eval/roc.csv", "eval/roc.svg", "eval/timing.txt"] {
        assert!(work.join(f).is_file(), "{f} missing");
    }
    let report = std::fs::read(&report_path).unwrap();

    let again = pipeline::run_pipeline(&config(ClassifierKind::Rf), &manifest, &work).unwrap();
    assert!(again.executed.is_empty(), "{:?}", again.executed);
    assert_eq!(std::fs::read(&report_path).unwrap(), report);
    assert_eq!(again.report, first.report);

    let switched = pipeline::run_pipeline(&config(ClassifierKind::LinearSvm), &manifest, &work).unwrap();
    assert_eq!(switched.executed, vec!["train", "eval"]);

    std::fs::remove_file(work.join("model.bin")).unwrap();
    let rebuilt = pipeline::run_pipeline(&config(ClassifierKind::LinearSvm), &manifest, &work).unwrap();
    assert_eq!(rebuilt.executed, vec!["train"]);
    assert_eq!(rebuilt.report, switched.report);
}

#[test]
fn manifest_without_id_image_names_the_subject() {
    let root = tempfile::tempdir().unwrap();
    let path = dataset(root.path(), 4);
    let mut m = Manifest::read(&path).unwrap();
    let victim = synth::subject_id(2);
    m.rows.retain(|r| !(r.subject_id == victim && r.role == Role::Id));
    m.write(&path).unwrap();
    let err = pipeline::run_pipeline(&config(ClassifierKind::Rf), &path, &root.path().join("work")).unwrap_err();
    assert!(
        matches!(err.root(), Error::ManifestIncomplete(msg) if msg.contains(&victim)),
        "{err}"
    );
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn failing_extractor_is_reported_with_its_exit_code() {
    let root = tempfile::tempdir().unwrap();
    let path = dataset(root.path(), 3);
    let mut c = config(ClassifierKind::Rf);
    c.embed.extractor = Some(vec!["false".to_owned()]);
    let err = pipeline::run_pipeline(&c, &path, &root.path().join("work")).unwrap_err();
    assert!(matches!(err.root(), Error::ExtractorFailed(_)), "{err}");
    assert_eq!(err.exit_code(), 3);
}
