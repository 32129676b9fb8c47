use eppf_core::datasets::{
    run_ablation, run_classification, run_noise_curve, run_retrieval_experiment, run_training, synthetic_corpus,
    CorpusSpec, Dataset, ExperimentKind, ExperimentSpec, Sample, Split,
};
use eppf_core::nn::LayerSpec;
use eppf_core::pointcloud::{generate_synthetic, SyntheticShape};
use eppf_core::{DescriptorConfig, NetworkConfig, PpfDim, Variant};

fn corpus(per_class: usize, n_points: usize, seed: u64) -> Dataset {
    Dataset::from_samples(synthetic_corpus(&CorpusSpec::standard(per_class, n_points, seed)).unwrap()).unwrap()
}

fn small_cfg() -> DescriptorConfig {
    DescriptorConfig { n_pairs: 3000, ..DescriptorConfig::full() }
}

fn population_std(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

#[test]
fn retrieval_report_records_seeds_and_statistics() {
    let ds = corpus(3, 800, 1);
    let mut spec = ExperimentSpec::new(ExperimentKind::LooRetrieval, small_cfg(), 40);
    spec.repeats = 3;
    spec.sigma = 0.02;
    let r = run_retrieval_experiment(&ds, &spec).unwrap();
    assert_eq!(r.seeds, vec![40, 41, 42]);
    assert_eq!(r.n_objects, 18);
    assert_eq!(r.spec, spec);
    assert_eq!(r.scale, ds.scale);
    let acc: Vec<f64> = r.repeats.iter().map(|x| x.metrics.total_accuracy).collect();
    let f1: Vec<f64> = r.repeats.iter().map(|x| x.metrics.f1).collect();
    assert!((r.mean.total_accuracy - acc.iter().sum::<f64>() / 3.0).abs() < 1e-12);
    assert!((r.std.total_accuracy - population_std(&acc)).abs() < 1e-12);
    assert!((r.std.f1 - population_std(&f1)).abs() < 1e-12);
    assert!(r.repeats.iter().all(|x| x.confusion.total() == 18 && x.floor > 0.0));

    assert_eq!(run_retrieval_experiment(&ds, &spec).unwrap(), r);
    let csv = r.to_csv().unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 + 2);

    spec.repeats = 1;
    let one = run_retrieval_experiment(&ds, &spec).unwrap();
    assert_eq!(one.std.total_accuracy, 0.0);
    assert_eq!(one.std.f1, 0.0);
}

#[test]
fn ablation_rows_and_clean_baseline() {
    let ds = corpus(4, 1500, 2);
    let mut spec = ExperimentSpec::new(ExperimentKind::Ablation, small_cfg(), 5);
    spec.repeats = 2;
    let r = run_ablation(&ds, &spec).unwrap();
    assert_eq!(r.baseline.removed, None);
    assert_eq!(r.ablations.len(), 4);
    let removed: Vec<PpfDim> = r.ablations.iter().map(|a| a.removed.unwrap()).collect();
    assert_eq!(removed, PpfDim::ALL.to_vec());
    assert_eq!(r.ablations[0].bins, [1, 4, 5, 3]);
    assert_eq!(r.ablations[3].bins, [20, 4, 5, 1]);
    for a in &r.ablations {
        assert_eq!(a.f1.len(), 2);
        assert!((a.f1_delta - (a.f1_mean - r.baseline.f1_mean)).abs() < 1e-15);
        assert!(r.baseline.f1_mean >= a.f1_mean, "{a:?} vs baseline {:?}", r.baseline);
    }
    assert_eq!(r.to_csv().unwrap().lines().count(), 6);
}

#[test]
fn ablating_a_constant_function_changes_nothing() {
    // Flat panels: every normal is +z, so f3 is identically zero.
    let mut samples = Vec::new();
    for (label, w, h) in [("wide", 1.0, 0.4), ("square", 0.6, 0.6)] {
        for i in 0..4 {
            let f = 1.0 + 0.05 * i as f64;
            let cloud = generate_synthetic(&SyntheticShape::PlanePanel { width: w * f, height: h * f }, 600, i).unwrap();
            samples.push(Sample { object_id: format!("{label}_{i}"), label: label.into(), split: Split::All, cloud });
        }
    }
    let ds = Dataset::from_samples(samples).unwrap();
    let mut spec = ExperimentSpec::new(ExperimentKind::Ablation, small_cfg(), 9);
    spec.repeats = 3;
    let r = run_ablation(&ds, &spec).unwrap();
    let f3 = r.ablations.iter().find(|a| a.removed == Some(PpfDim::F3)).unwrap();
    assert!(f3.f1_delta.abs() <= r.baseline.f1_std.max(f3.f1_std), "{f3:?}");
    assert_eq!(f3.f1, r.baseline.f1);
}

fn tiny_network(n_classes: usize) -> (DescriptorConfig, NetworkConfig) {
    let layout = DescriptorConfig { bins: [6, 2, 2, 1], n_pairs: 3000, ..DescriptorConfig::full() };
    let mut net = NetworkConfig::new(Variant::Net4d, n_classes);
    net.input_shape = vec![6, 2, 2, 1, 1];
    net.layers = vec![
        LayerSpec::Conv { kernel: vec![3, 2, 1, 1], filters: 4 },
        LayerSpec::Relu,
        LayerSpec::Flatten,
        LayerSpec::Dense { units: 16 },
        LayerSpec::Relu,
        LayerSpec::Dense { units: n_classes },
    ];
    net.learning_rate = 1e-2;
    net.epochs = 40;
    net.batch_size = Some(4);
    (layout, net)
}

#[test]
fn noise_curve_rows_and_clean_row_matches_training() {
    let ds = corpus(5, 800, 3);
    let (layout, net) = tiny_network(6);
    let mut spec = ExperimentSpec::new(ExperimentKind::NoiseCurve, layout.clone(), 12);
    spec.sigmas = vec![0.0, 0.05];
    spec.network = Some(net.clone());
    let curve = run_noise_curve(&ds, &spec).unwrap();
    assert_eq!(curve.rows.len(), 2);
    assert_eq!(curve.train_objects + curve.test_objects, 30);
    assert_eq!(curve.test_objects, 12);

    let mut tspec = ExperimentSpec::new(ExperimentKind::TrainClassifier, layout, 12);
    tspec.network = Some(net);
    let (mut model, report) = run_training(&ds, &tspec, None).unwrap();
    assert_eq!(curve.rows[0].accuracies[0], report.test_metrics.unwrap().total_accuracy);
    assert_eq!(model.dataset_scale, Some(ds.scale));

    let mut cspec = ExperimentSpec::new(ExperimentKind::Classify, model.descriptor.clone(), 12);
    cspec.network = Some(model.config.clone());
    let cls = run_classification(&mut model, &ds, &cspec).unwrap();
    assert_eq!(cls.predictions.len(), 30);
    assert_eq!(cls.confusion.as_ref().unwrap().total(), 30);
    for p in &cls.predictions {
        assert!((p.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn mismatched_specs_are_rejected() {
    let ds = corpus(2, 300, 4);
    let spec = ExperimentSpec::new(ExperimentKind::Ablation, small_cfg(), 1);
    assert!(run_retrieval_experiment(&ds, &spec).is_err());
    let spec = ExperimentSpec::new(ExperimentKind::NoiseCurve, small_cfg(), 1);
    assert!(run_noise_curve(&ds, &spec).is_err());
    let mut spec = ExperimentSpec::new(ExperimentKind::LooRetrieval, small_cfg(), 1);
    spec.repeats = 0;
    assert!(run_retrieval_experiment(&ds, &spec).is_err());
}
