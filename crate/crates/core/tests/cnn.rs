use ekm_core::cnn::{
    evaluate_set, init_model, load_model, model_from_bytes, model_to_bytes, save_model, train, train_epochs, Model,
    ModelConfig, TrainConfig,
};
use ekm_core::dataset::{LabelVocab, SampleSet};
use ekm_core::ekm::EkmImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noise_set(classes: usize, per_class: usize, seed: u64) -> (SampleSet, LabelVocab) {
    let names: Vec<String> = (0..classes).map(|c| format!("s{c}")).collect();
    let vocab = LabelVocab::new(names.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let images: Vec<EkmImage> = (0..classes * per_class)
        .map(|i| EkmImage {
            height: 25,
            width: 37,
            pixels: (0..25 * 37 * 3).map(|_| rng.random()).collect(),
            label: names[i % classes].clone(),
        })
        .collect();
    (SampleSet::from_images(&images, &vocab).unwrap(), vocab)
}

fn empty(classes: usize) -> SampleSet {
    let vocab = LabelVocab::new((0..classes).map(|c| format!("s{c}")).collect());
    SampleSet::from_images(&[], &vocab).unwrap()
}

#[test]
fn memorizes_sixteen_images_within_two_hundred_steps() {
    let (set, _) = noise_set(2, 8, 1);
    let mut model: Model<f32> = init_model(&ModelConfig::new(2), 7).unwrap();
    let cfg = TrainConfig {
        epochs: 100,
        batch_size: 8,
        seed: 3,
        ..Default::default()
    };
    let mut reached = None;
    for epoch in 1..=cfg.epochs {
        train_epochs(&mut model, &set, &empty(2), &cfg, epoch..=epoch).unwrap();
        if evaluate_set(&model, &set, 16).unwrap().accuracy() == 1.0 {
            reached = Some(model.adam.step);
            break;
        }
    }
    let steps = reached.expect("never reached full training accuracy");
    assert!(steps <= 200, "{steps} steps");
}

#[test]
fn training_is_bitwise_reproducible() {
    let (set, _) = noise_set(3, 4, 2);
    let (val, _) = noise_set(3, 2, 9);
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 5,
        seed: 11,
        ..Default::default()
    };
    let run = || {
        let mut m: Model<f32> = init_model(&ModelConfig::new(3), 4).unwrap();
        let h = train(&mut m, &set, &val, &cfg).unwrap();
        (model_to_bytes(&m), h)
    };
    let (a, ha) = run();
    let (b, hb) = run();
    assert_eq!(ha, hb);
    assert!(a == b);
}

#[test]
fn split_epochs_equal_one_run() {
    let (set, _) = noise_set(2, 3, 5);
    let cfg = TrainConfig {
        epochs: 4,
        batch_size: 4,
        seed: 1,
        ..Default::default()
    };
    let mut whole: Model<f32> = init_model(&ModelConfig::new(2), 2).unwrap();
    train(&mut whole, &set, &empty(2), &cfg).unwrap();
    let mut parts: Model<f32> = init_model(&ModelConfig::new(2), 2).unwrap();
    train_epochs(&mut parts, &set, &empty(2), &cfg, 1..=2).unwrap();
    let bytes = model_to_bytes(&parts);
    let mut parts = model_from_bytes(&bytes).unwrap();
    train_epochs(&mut parts, &set, &empty(2), &cfg, 3..=4).unwrap();
    assert!(model_to_bytes(&whole) == model_to_bytes(&parts));
}

#[test]
fn trained_model_survives_disk_round_trip() {
    let (set, vocab) = noise_set(2, 2, 8);
    let mut m: Model<f32> = init_model(&ModelConfig::new(2), 6).unwrap();
    m.vocab = vocab.names().to_vec();
    m.set_metadata("bpf", "3");
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 4,
        ..Default::default()
    };
    train(&mut m, &set, &empty(2), &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ekmn");
    save_model(&m, &path).unwrap();
    let back = load_model(&path).unwrap();
    assert_eq!(back.vocab, m.vocab);
    assert_eq!(back.metadata("bpf"), Some("3"));
    assert_eq!(back.adam.step, m.adam.step);
    assert!(model_to_bytes(&back) == model_to_bytes(&m));
    let before = evaluate_set(&m, &set, 4).unwrap();
    let after = evaluate_set(&back, &set, 4).unwrap();
    assert_eq!(before, after);
}

#[test]
fn mismatched_set_is_rejected() {
    let (set, _) = noise_set(3, 1, 0);
    let m: Model<f32> = init_model(&ModelConfig::new(2), 0).unwrap();
    assert!(evaluate_set(&m, &set, 2).is_err());
}

#[test]
fn thread_count_does_not_change_the_model() {
    let (set, _) = noise_set(3, 4, 12);
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 6,
        seed: 2,
        ..Default::default()
    };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut m: Model<f32> = init_model(&ModelConfig::new(3), 1).unwrap();
            train(&mut m, &set, &empty(3), &cfg).unwrap();
            model_to_bytes(&m)
        })
    };
    assert!(run(1) == run(4));
}
