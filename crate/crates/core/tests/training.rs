use gcgrnn::data::{line_coupling, make_windows, split_chronological, synth_generate, Normalizer, SplitRatios, SynthParams};
use gcgrnn::model::{ModelConfig, ModelDims, ModelKind, SeqModel};
use gcgrnn::training::{train, validation_mae, TrainConfig};
use gcgrnn::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_run(seed: u64, epochs: usize) -> (SeqModel, gcgrnn::training::TrainHistory, f64) {
    let mut p = SynthParams::new(3, 150, 24, 5.0, 1);
    p.noise_ar = 0.8;
    let s = synth_generate(&p, &line_coupling(3, 1).unwrap()).unwrap();
    let split = split_chronological(make_windows(&s, 4, 3).unwrap(), SplitRatios::default()).unwrap();
    let norm = Normalizer::fit(&split.train).unwrap();
    let dims = ModelDims {
        nodes: 3,
        hidden: 4,
        input_steps: 4,
        forecast_steps: 3,
    };
    let model = SeqModel::init(ModelConfig::new(ModelKind::GraphConvGru, dims), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let cfg = TrainConfig {
        max_epochs: epochs,
        seed,
        ..TrainConfig::default()
    };
    let (best, history) = train(model, &split, &norm, &cfg).unwrap();
    let val = validation_mae(&best, &norm, &split.validation).unwrap();
    (best, history, val)
}

#[test]
fn best_checkpoint_matches_history_minimum() {
    let (_, history, val) = small_run(3, 8);
    let min = history.records.iter().map(|r| r.val_mae).fold(f64::INFINITY, f64::min);
    assert_eq!(history.best().unwrap().val_mae, min);
    assert_eq!(val, min);
    assert!(history.records[0].lr == 0.01);
}

#[test]
fn same_seed_same_run() {
    let (a, ha, _) = small_run(5, 4);
    let (b, hb, _) = small_run(5, 4);
    assert_eq!(a, b);
    let strip = |h: &gcgrnn::training::TrainHistory| {
        h.records.iter().map(|r| (r.epoch, r.train_mae.to_bits(), r.val_mae.to_bits(), r.lr.to_bits())).collect::<Vec<_>>()
    };
    assert_eq!(strip(&ha), strip(&hb));
}

#[test]
fn training_improves_on_initialization() {
    let (_, history, _) = small_run(9, 10);
    assert!(history.best().unwrap().val_mae < history.records[0].val_mae);
}

#[test]
fn empty_split_part_rejected() {
    let p = SynthParams::new(2, 60, 24, 1.0, 1);
    let s = synth_generate(&p, &line_coupling(2, 1).unwrap()).unwrap();
    let mut split = split_chronological(make_windows(&s, 4, 2).unwrap(), SplitRatios::default()).unwrap();
    let norm = Normalizer::fit(&split.train).unwrap();
    split.test.clear();
    let dims = ModelDims {
        nodes: 2,
        hidden: 2,
        input_steps: 4,
        forecast_steps: 2,
    };
    let model = SeqModel::zeros(ModelConfig::new(ModelKind::PlainGru, dims)).unwrap();
    assert!(matches!(train(model, &split, &norm, &TrainConfig::default()), Err(Error::Contract(_))));
}

#[test]
fn divergence_is_reported() {
    let p = SynthParams::new(2, 60, 24, 1.0, 1);
    let s = synth_generate(&p, &line_coupling(2, 1).unwrap()).unwrap();
    let split = split_chronological(make_windows(&s, 4, 2).unwrap(), SplitRatios::default()).unwrap();
    let norm = Normalizer::fit(&split.train).unwrap();
    let dims = ModelDims {
        nodes: 2,
        hidden: 2,
        input_steps: 4,
        forecast_steps: 2,
    };
    let mut model = SeqModel::zeros(ModelConfig::new(ModelKind::PlainGru, dims)).unwrap();
    model.set_param("output.w_f", gcgrnn::Matrix::filled(2, 1, f64::NAN)).unwrap();
    let err = train(model, &split, &norm, &TrainConfig::default()).unwrap_err();
    assert!(matches!(err, Error::Divergence { epoch: 0, batch: 0, .. }), "{err}");
}
