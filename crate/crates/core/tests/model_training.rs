use specsyn::model::{self, prepare, train, ModelConfig, SpecModel, TrainConfig, Vocab};
use specsyn::synthdata::{build_dataset, Composer, DatasetConfig, LabeledSample, SeedLibrary};

fn small_config() -> ModelConfig {
    ModelConfig {
        d_model: 16,
        n_blocks: 1,
        n_heads: 2,
        max_len: 64,
        d_pool: 16,
        head_hidden: 50,
        gen_hidden: 20,
        gen_embed: 8,
    }
}

fn toy_samples(n: usize) -> Vec<LabeledSample> {
    let cfg = DatasetConfig {
        n_train: n,
        n_test: 10,
        ..DatasetConfig::default()
    };
    build_dataset(&SeedLibrary::shipped(), &Composer::shipped(64), &cfg)
        .unwrap()
        .train
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let samples = toy_samples(20);
    let vocab = Vocab::build(&samples);
    let data = prepare(&samples, &vocab);
    let mut m = SpecModel::new(&small_config(), vocab.len(), 3);
    let before = m.clone();
    let cfg = TrainConfig {
        epochs: 2,
        lr: 0.0,
        ..TrainConfig::default()
    };
    train(&mut m, &data, &cfg, |_| {}).unwrap();
    assert_eq!(m, before);
}

#[test]
fn toy_set_is_memorized() {
    let samples = toy_samples(20);
    let vocab = Vocab::build(&samples);
    let data = prepare(&samples, &vocab);
    let mut m = SpecModel::new(&small_config(), vocab.len(), 5);
    let cfg = TrainConfig {
        epochs: 200,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let logs = train(&mut m, &data, &cfg, |_| {}).unwrap();
    assert!(logs.last().unwrap().loss < logs[0].loss);
    let correct = data
        .iter()
        .filter(|e| m.predict(&e.input, 24).unwrap().is_spec() == e.label)
        .count();
    assert_eq!(correct, data.len());
}

#[test]
fn training_is_deterministic_and_checkpoints_round_trip() {
    let samples = toy_samples(12);
    let vocab = Vocab::build(&samples);
    let data = prepare(&samples, &vocab);
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 4,
        seed: 9,
        ..TrainConfig::default()
    };
    let run = || {
        let mut m = SpecModel::new(&small_config(), vocab.len(), cfg.seed);
        train(&mut m, &data, &cfg, |_| {}).unwrap();
        m
    };
    let (a, b) = (run(), run());
    let bytes = model::to_bytes(&a, &vocab);
    assert_eq!(bytes, model::to_bytes(&b, &vocab));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    model::save(&a, &vocab, &path).unwrap();
    let (loaded, v2) = model::load(&path).unwrap();
    assert_eq!(v2, vocab);
    for e in &data {
        let p = a.predict(&e.input, 24).unwrap();
        let q = loaded.predict(&e.input, 24).unwrap();
        assert_eq!(p.detection.map(f64::to_bits), q.detection.map(f64::to_bits));
        assert_eq!(p.category_probs.map(f64::to_bits), q.category_probs.map(f64::to_bits));
        assert_eq!(p.generation, q.generation);
    }
}
