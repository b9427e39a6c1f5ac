use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crossface::classify::{self, ClassifierKind, ClassifyParams, ForestParams, TrainedModel};
use crossface::dataset::{Dataset, Label};
use crossface::embed::euclidean;
use crossface::evaluate::{self, eer, roc_curve};
use crossface::manifest::{Role, Stage};
use crossface::pairs::{self, SplitSpec};
use crossface::pipeline;
use crossface::synth::{self, SynthSpec};
use crossface::tensor::ImageTensor;

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

#[test]
fn genuine_and_impostor_distances_are_well_separated() {
    let spec = SynthSpec {
        n_subjects: 2_000,
        noise_sigma: 0.1,
        domain_shift_strength: 0.2,
        seed: 5,
        ..SynthSpec::default()
    };
    let (selfies, ids) = synth::synth_embeddings(&spec).unwrap();
    let dist = |i: usize, j: usize| {
        let s = selfies.get(&synth::image_id(&synth::subject_id(i), Role::Selfie)).unwrap();
        let d = ids.get(&synth::image_id(&synth::subject_id(j), Role::Id)).unwrap();
        euclidean(s, d)
    };
    let n = spec.n_subjects;
    let genuine: Vec<f64> = (0..n).map(|i| dist(i, i)).collect();
    let impostor: Vec<f64> = (0..n).map(|i| dist(i, (i + 1 + i * 7 % (n - 1)) % n)).collect();
    let (mg, sg) = mean_std(&genuine);
    let (mi, si) = mean_std(&impostor);
    let pooled = ((sg * sg + si * si) / 2.0).sqrt();
    assert!(mi - mg > 3.0 * pooled, "genuine {mg}±{sg}, impostor {mi}±{si}");
}

fn accuracy_at(noise_sigma: f64) -> f64 {
    let spec = SynthSpec {
        n_subjects: 400,
        noise_sigma,
        seed: 9,
        ..SynthSpec::default()
    };
    let (mut store, ids) = synth::synth_embeddings(&spec).unwrap();
    store.merge(&ids).unwrap();
    let manifest = synth::embedding_manifest(&spec);
    let (_, train, test) = pipeline::build_pairs(&manifest, &store, &SplitSpec::default(), 9).unwrap();
    let (train, test) = (pairs::to_dataset(&train).unwrap(), pairs::to_dataset(&test).unwrap());
    let m = classify::train(ClassifierKind::LinearSvm, &train, &ClassifyParams::default()).unwrap();
    evaluate::accuracy(&m.predict_all(&test).unwrap(), test.labels()).unwrap()
}

#[test]
fn less_noise_is_no_harder_to_separate() {
    let (quiet, loud) = (accuracy_at(0.05), accuracy_at(0.5));
    assert!(quiet >= loud, "sigma 0.05: {quiet}, sigma 0.5: {loud}");
}

fn correlation(a: &ImageTensor, b: &ImageTensor) -> f64 {
    let x: Vec<f64> = a.as_raw().iter().map(|&v| f64::from(v)).collect();
    let y: Vec<f64> = b.as_raw().iter().map(|&v| f64::from(v)).collect();
    let (mx, _) = mean_std(&x);
    let (my, _) = mean_std(&y);
    let cov: f64 = x.iter().zip(&y).map(|(p, q)| (p - mx) * (q - my)).sum();
    let vx: f64 = x.iter().map(|p| (p - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|q| (q - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

#[test]
fn synthetic_images_resemble_their_own_subject() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        n_subjects: 6,
        image_size: 64,
        seed: 4,
        ..SynthSpec::default()
    };
    let m = synth::synth_images(&spec, dir.path()).unwrap();
    assert_eq!(m.len(), 12);
    assert!(m.rows.iter().all(|r| r.stage == Stage::Raw));
    m.validate().unwrap();
    let load = |s: usize, role: Role| {
        let id = synth::image_id(&synth::subject_id(s), role);
        let row = m.rows.iter().find(|r| r.image_id == id).unwrap();
        ImageTensor::load(&dir.path().join(&row.path)).unwrap()
    };
    for s in 0..spec.n_subjects {
        let own = correlation(&load(s, Role::Selfie), &load(s, Role::Id));
        let other = correlation(&load(s, Role::Selfie), &load((s + 1) % spec.n_subjects, Role::Id));
        assert!(own > other, "subject {s}: own {own}, other {other}");
    }
}

#[test]
fn synthetic_extractor_covers_every_request() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        n_subjects: 5,
        image_size: 64,
        ..SynthSpec::default()
    };
    let m = synth::synth_images(&spec, dir.path()).unwrap();
    let requests: Vec<_> = m
        .rows
        .iter()
        .map(|r| crossface::embed::ExtractRequest {
            image_id: r.image_id.clone(),
            path: dir.path().join(&r.path),
        })
        .collect();
    let cmd = vec![
        env!("CARGO_BIN_EXE_crossface").to_owned(),
        "extract-synthetic".to_owned(),
        "--dim".to_owned(),
        "128".to_owned(),
    ];
    let store = crossface::embed::extract_via_external(&cmd, &requests, 128, "synthetic").unwrap();
    assert_eq!(store.len(), 10);
    for r in &m.rows {
        assert_eq!(store.get(&r.image_id).unwrap().len(), 128);
    }
}

#[test]
fn random_scores_sit_near_equal_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let labels: Vec<Label> = (0..4000).map(|_| Label::from_bool(rng.random())).collect();
    let scores: Vec<f64> = (0..4000).map(|_| rng.random()).collect();
    let e = eer(&roc_curve(&scores, &labels).unwrap());
    assert!((e - 0.5).abs() <= 0.05, "eer {e}");
}

fn small_problem() -> (Dataset, Dataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut make = |n: usize| {
        let mut d = Dataset::new(8);
        for i in 0..n {
            let g = i % 2 == 0;
            let row: Vec<f32> = (0..8)
                .map(|_| rng.random_range(0.0f32..1.0) * if g { 0.6 } else { 1.0 })
                .collect();
            d.push(&row, Label::from_bool(g)).unwrap();
        }
        d
    };
    (make(200), make(100))
}

#[test]
fn timing_collects_one_measurement_per_prediction() {
    let (train, test) = small_problem();
    let m = classify::train(ClassifierKind::LinearSvm, &train, &ClassifyParams::default()).unwrap();
    let t = evaluate::timing_report(&m, &test, 3).unwrap();
    assert_eq!(t.measurements, 300);
    assert!(t.mean >= 0.0 && t.p50 >= 0.0);
    assert!(t.p50 <= t.p95);
    assert!(t.to_text().contains("mean"));
}

#[test]
fn voting_and_single_forest_latencies_are_measured() {
    let (train, test) = small_problem();
    let p = ClassifyParams {
        rf: ForestParams {
            n_trees: 25,
            ..ForestParams::default()
        },
        ..ClassifyParams::default()
    };
    let single = classify::train(ClassifierKind::Rf, &train, &p).unwrap();
    let voting = classify::train(ClassifierKind::VotingRf, &train, &p).unwrap();
    assert!(matches!(voting, TrainedModel::VotingRf(_)));
    let a = evaluate::timing_report(&single, &test, 3).unwrap();
    let b = evaluate::timing_report(&voting, &test, 3).unwrap();
    println!("mean predict latency: rf {:.3e}s, voting-rf {:.3e}s", a.mean, b.mean);
}

#[test]
fn report_text_lists_every_field() {
    let (train, test) = small_problem();
    let m = classify::train(ClassifierKind::PmSvm, &train, &ClassifyParams::default()).unwrap();
    let r = evaluate::evaluate(&m, &test).unwrap();
    let text = r.to_text();
    for key in ["accuracy=", "eer=", "n_test=100", "n_genuine=50", "n_impostor=50", "roc_points="] {
        assert!(text.contains(key), "{key} missing from {text}");
    }
    assert!(!text.contains("latency"));
}
