use pointprobe::metrics::{sensitivity_of, FamilyConfig, MetricKind, ShapleyConfig};
use pointprobe::model::{generate_dataset, train, BuiltinClassifier, ClassifierShape, DatasetSpec, RewardKind, TrainConfig};
use pointprobe::par::with_workers;
use pointprobe::seed::rng;

#[test]
fn train_then_measure_sensitivity_independent_of_workers() {
    let data = generate_dataset(&DatasetSpec {
        per_class: 6,
        test_per_class: 2,
        points: 256,
        seed: 3,
        ..Default::default()
    })
    .unwrap();
    let mut model = BuiltinClassifier::new(&ClassifierShape::standard(data.num_classes()), &mut rng(1, &[])).unwrap();
    let log = train(
        &mut model,
        &data,
        &TrainConfig {
            epochs: 2,
            ..Default::default()
        },
        2,
    )
    .unwrap();
    assert_eq!(log.epochs.len(), 2);
    let clouds: Vec<_> = data.balanced_test(4).into_iter().cloned().collect();
    let shapley = ShapleyConfig {
        permutations: 20,
        ..Default::default()
    };
    let run = |w| {
        with_workers(w, || {
            sensitivity_of(
                &model,
                &clouds,
                8,
                MetricKind::Rotation,
                RewardKind::ClassificationLogit,
                &FamilyConfig::default(),
                &shapley,
                9,
            )
            .unwrap()
        })
    };
    let one = run(Some(1));
    assert_eq!(one.clouds.len(), 4);
    assert!(one.clouds.iter().all(|c| c.a.len() == 8 && c.a.iter().all(|v| v.is_finite() && *v >= 0.0)));
    assert_eq!(one, run(Some(3)));
    assert_eq!(one, run(None));
}
