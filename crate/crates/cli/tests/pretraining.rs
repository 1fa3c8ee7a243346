use tsc_core::evalkit::run_probe;
use tsc_core::nn::WeightState;
use tsc_core::seed;
use tsc_lab::experiment::{pretrain, SeedData};
use tsc_lab::RunConfig;

#[test]
fn zero_epochs_returns_the_initialisation() {
    let mut cfg = RunConfig::default();
    cfg.set("pretrain.epochs", "0").unwrap();
    let data = SeedData::generate(&cfg, 3).unwrap();
    let (spec, weights) = pretrain(&cfg, &data.pool, 3).unwrap();

    let full = cfg
        .network_spec(seed::derive(3, "network-init"))
        .with_output_classes(data.pool.classes.len());
    let (init, init_spec) = WeightState::init(&full).unwrap().without_head(&full);
    assert_eq!(spec, init_spec);
    assert_eq!(weights, init);
}

#[test]
fn pretrained_embedding_beats_random_on_novel_classes() {
    let mut cfg = RunConfig::default();
    cfg.set("probe.bc", "false").unwrap();
    let mut random = cfg.clone();
    random.set("pretrain.epochs", "0").unwrap();

    let seeds = 0..10u64;
    let (mut trained_acc, mut random_acc) = (0.0, 0.0);
    for s in seeds.clone() {
        let data = SeedData::generate(&cfg, s).unwrap();
        let (train, test) = data.nc_probe.as_ref().unwrap();
        let probe = |c: &RunConfig| {
            let (spec, w) = pretrain(c, &data.pool, s).unwrap();
            run_probe(&w, &spec, train, test, &data.seen, &c.probe_config(), seed::derive(s, "probe-nc-fit")).unwrap()
        };
        trained_acc += probe(&cfg);
        random_acc += probe(&random);
    }
    let n = seeds.count() as f64;
    let (trained_acc, random_acc) = (trained_acc / n, random_acc / n);
    assert!(trained_acc > random_acc, "pretrained {trained_acc} vs random {random_acc}");
}
