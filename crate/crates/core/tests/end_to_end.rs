use aoi_core::model::{evaluate_model, load_checkpoint, save_checkpoint, train, Aoitr, ForwardOptions, ModelConfig, TrainOptions};
use aoi_core::pipeline::{build_examples, evaluate_roadcut, reliability_features};
use aoi_core::synthgen::{Dataset, WorldConfig};

fn small_world() -> Dataset {
    Dataset::generate(&WorldConfig { samples: 24, image_size: 32, lbs_points: 40, ..WorldConfig::default() }).unwrap()
}

fn small_model() -> ModelConfig {
    ModelConfig {
        n_points: 8,
        d_model: 16,
        heads: 2,
        encoder_layers: 1,
        decoder_layers: 1,
        ffn_hidden: 32,
        stem_hidden: 8,
        ..ModelConfig::default()
    }
}

#[test]
fn training_improves_fit_on_a_small_world() {
    let ds = small_world();
    let set = build_examples(&ds.train[..4], 8).unwrap();
    let mut model = Aoitr::new(&small_model()).unwrap();
    let before = evaluate_model(&model, &set, ForwardOptions::default()).unwrap().summary.miou;
    let opts = TrainOptions { epochs: 150, batch_size: 4, learning_rate: 3e-3, ..TrainOptions::default() };
    let log = train(&mut model, &set, None, &opts, |_| {}).unwrap();
    let after = log.rows.last().unwrap().miou;
    assert!(after > 0.8 && after > before, "mIoU {before} -> {after}");
    assert!(log.rows.last().unwrap().loss < log.rows[0].loss);
}

#[test]
fn dataset_and_checkpoint_round_trips_preserve_results() {
    let ds = small_world();
    let dir = tempfile::tempdir().unwrap();
    ds.write(dir.path()).unwrap();
    let back = Dataset::read(dir.path()).unwrap();
    assert_eq!(evaluate_roadcut(&ds.val).unwrap(), evaluate_roadcut(&back.val).unwrap());

    let model = Aoitr::new(&small_model()).unwrap();
    let path = dir.path().join("ck.json");
    save_checkpoint(&model, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    let val = build_examples(&back.val, 8).unwrap();
    for ex in &val {
        assert_eq!(model.predict(&ex.input).unwrap(), loaded.predict(&ex.input).unwrap());
    }
    let a = reliability_features(Some(&model), &ds.val, 8).unwrap();
    let b = reliability_features(Some(&loaded), &back.val, 8).unwrap();
    assert_eq!(a, b);
    assert!(a.iter().all(|f| f.embedding.len() == 16));
}
