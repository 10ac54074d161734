//! Pretraining, evaluation and probe contracts on small synthetic corpora.

use visocc_core::{subsample_queries, OffsetMode, SensorModel};
use visocc_model::{Model, ModelConfig};
use visocc_train::data::{
    assert_disjoint, make_frames, simulate_scans, SceneRange, HELD_OUT_START, PROBE_EVAL_START,
    PROBE_TRAIN_START,
};
use visocc_train::eval::{held_out_frames, occupancy_metrics, score_queries};
use visocc_train::{
    pretrain, separability_probes, threshold_sweep, DataConfig, Frame, PretrainConfig, ProbeConfig,
    ProbeMode, TrainError,
};

fn small_data(seed: u64) -> DataConfig {
    DataConfig {
        sensor: SensorModel::with_channels(16, -25.0, 5.0, 512),
        seed,
        ..Default::default()
    }
}

fn small_pretrain(epochs: usize, seed: u64) -> PretrainConfig {
    PretrainConfig {
        epochs,
        max_points: 192,
        max_queries: 192,
        seed,
        ..Default::default()
    }
}

fn frames(data: &DataConfig, n: u64, cfg: &PretrainConfig) -> Vec<Frame> {
    let scans = simulate_scans(data, SceneRange::new(0, n), cfg.max_points).unwrap();
    make_frames(&scans, data.seed, cfg.delta, cfg.offset_mode)
}

fn param_bits(m: &Model<f32>) -> Vec<u32> {
    m.layers()
        .flat_map(|l| {
            l.weight
                .data()
                .iter()
                .chain(&l.bias)
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        })
        .collect()
}

#[test]
fn one_epoch_one_scene_is_bitwise_repeatable() {
    let data = small_data(1);
    let cfg = small_pretrain(1, 5);
    let f = frames(&data, 1, &cfg);
    let a = pretrain(&cfg, &f).unwrap();
    let b = pretrain(&cfg, &f).unwrap();
    assert_eq!(param_bits(&a.model), param_bits(&b.model));
    assert_eq!(a.report.to_json(), b.report.to_json());
}

#[test]
fn thread_count_does_not_change_training() {
    let data = small_data(2);
    let cfg = small_pretrain(2, 9);
    let f = frames(&data, 6, &cfg);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| pretrain(&cfg, &f).unwrap())
    };
    let (one, four) = (run(1), run(4));
    assert_eq!(param_bits(&one.model), param_bits(&four.model));
    assert_eq!(one.optimizer, four.optimizer);
    assert_eq!(one.report.to_csv(), four.report.to_csv());
}

#[test]
fn initial_occupancy_loss_is_near_ln2() {
    let data = small_data(3);
    let cfg = small_pretrain(1, 0);
    let f = frames(&data, 8, &cfg);
    for (seed, frame) in f.iter().enumerate() {
        let model = Model::<f32>::init(ModelConfig::default(), seed as u64);
        let queries = subsample_queries(&frame.queries, 192, seed as u64);
        let scan = model.prepare(&frame.cloud, &queries);
        let w = visocc_model::objective_weights(&[&scan.targets], cfg.objective.weighting).unwrap();
        let mut m = model.clone();
        let parts = m.accumulate(&scan, &w[0], &cfg.objective).unwrap();
        assert!(
            (parts.occupancy - std::f64::consts::LN_2).abs() <= 0.15,
            "seed {seed}: {}",
            parts.occupancy
        );
    }
}

#[test]
fn zero_logit_model_scores_the_majority_fraction() {
    let data = small_data(4);
    let frames = held_out_frames(
        &data,
        SceneRange::new(HELD_OUT_START, 4),
        192,
        256,
        0.1,
        OffsetMode::Uniform,
    )
    .unwrap();
    let mut model = Model::<f32>::init(ModelConfig::default(), 0);
    let last = model.decoder.layers.last_mut().unwrap();
    last.weight.fill(0.0);
    last.bias.fill(0.0);
    let scores = score_queries(&model, &frames).unwrap();
    assert!(scores.probability.iter().all(|&p| p == 0.5));
    let m = occupancy_metrics(&scores, 0.5);
    let empty = scores.label.iter().filter(|&&l| !l).count() as f64 / scores.label.len() as f64;
    assert_eq!(m.vs_labels.accuracy, empty);
    assert!(empty > 0.5, "empty queries dominate the visibility labels");
    assert_eq!(m.majority_fraction, empty);
}

#[test]
fn threshold_sweep_and_label_noise_bounds() {
    let data = small_data(5);
    let cfg = small_pretrain(3, 1);
    let model = pretrain(&cfg, &frames(&data, 8, &cfg)).unwrap().model;
    let held = held_out_frames(
        &data,
        SceneRange::new(HELD_OUT_START, 6),
        192,
        512,
        0.1,
        OffsetMode::Uniform,
    )
    .unwrap();
    let scores = score_queries(&model, &held).unwrap();
    let thresholds: Vec<f64> = (1..20).map(|i| i as f64 / 20.0).collect();
    let sweep = threshold_sweep(&scores, &thresholds);
    for w in sweep.windows(2) {
        let (a, b) = (w[0].1.recall.unwrap(), w[1].1.recall.unwrap());
        assert!(
            b <= a,
            "recall rose from {a} to {b} between thresholds {} and {}",
            w[0].0,
            w[1].0
        );
    }
    let m = occupancy_metrics(&scores, 0.5);
    assert!(m.label_noise_rate > 0.0);
    assert!((m.vs_labels.accuracy - m.vs_truth.accuracy).abs() <= m.label_noise_rate + 1e-12);
}

fn probe_clouds(data: &DataConfig, start: u64, n: u64) -> Vec<visocc_core::PointCloud> {
    simulate_scans(data, SceneRange::new(start, n), 192)
        .unwrap()
        .into_iter()
        .map(|s| s.cloud)
        .collect()
}

#[test]
fn single_class_probe_is_perfect() {
    let mut data = small_data(6);
    data.scene.class_ids = [7; 4];
    let train = probe_clouds(&data, PROBE_TRAIN_START, 2);
    let encoder = Model::<f32>::init(ModelConfig::default(), 0).encoder;
    let cfg = ProbeConfig {
        epochs: 3,
        ..Default::default()
    };
    let m = visocc_train::probe(&encoder, true, &cfg, &train, &train, &data.classes()).unwrap();
    assert_eq!(m.miou, 1.0);
    assert_eq!(m.accuracy, 1.0);
}

#[test]
fn probes_on_a_few_pretrained_encoders() {
    let data = small_data(7);
    let train = probe_clouds(&data, PROBE_TRAIN_START, 8);
    let eval = probe_clouds(&data, PROBE_EVAL_START, 6);
    let classes = data.classes();
    let (mut linear, mut finetune) = (Vec::new(), Vec::new());
    let (mut ground_margin, mut side_margin) = (Vec::new(), Vec::new());
    for seed in 0..5u64 {
        let cfg = small_pretrain(6, seed);
        let model = pretrain(&cfg, &frames(&data, 16, &cfg)).unwrap().model;
        let random = Model::<f32>::init(cfg.model, seed).encoder;
        let probe_cfg = ProbeConfig {
            epochs: 20,
            seed,
            ..Default::default()
        };
        linear.push(
            visocc_train::probe(&model.encoder, true, &probe_cfg, &train, &eval, &classes)
                .unwrap()
                .accuracy,
        );
        let ft = ProbeConfig {
            mode: ProbeMode::Finetune,
            ..probe_cfg
        };
        finetune.push(
            visocc_train::probe(&model.encoder, true, &ft, &train, &eval, &classes)
                .unwrap()
                .accuracy,
        );

        let s = separability_probes(&model.encoder, &random, true, &probe_cfg, &train, &eval, 0)
            .unwrap();
        ground_margin.push(s.ground_vs_other.margin);
        side_margin.push(s.left_right.margin);
        // Coin-flip labels carry no signal: accuracy within 3 binomial sigma of 1/2.
        let sigma = (0.25 / s.eval_points as f64).sqrt();
        assert!(
            (s.random_labels - 0.5).abs() <= 3.0 * sigma,
            "seed {seed}: {}",
            s.random_labels
        );
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    eprintln!(
        "linear {linear:?}\nfinetune {finetune:?}\nground {ground_margin:?}\nside {side_margin:?}"
    );
    assert!(
        mean(&finetune) >= mean(&linear),
        "finetune {} < linear {}",
        mean(&finetune),
        mean(&linear)
    );
    assert!(mean(&ground_margin) > 0.0);
    assert!(mean(&side_margin) > 0.0);
}

#[test]
fn overlapping_splits_are_rejected() {
    let err = assert_disjoint(&[
        ("pretrain", SceneRange::new(0, 10)),
        ("held-out", SceneRange::new(5, 10)),
    ])
    .unwrap_err();
    assert!(matches!(err, TrainError::OverlappingScenes(..)), "{err}");
    assert_disjoint(&[
        ("pretrain", SceneRange::new(0, 256)),
        ("probe-train", SceneRange::new(PROBE_TRAIN_START, 32)),
        ("probe-eval", SceneRange::new(PROBE_EVAL_START, 16)),
        ("held-out", SceneRange::new(HELD_OUT_START, 32)),
    ])
    .unwrap();
}
