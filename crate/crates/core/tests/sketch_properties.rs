use hbrick::sketch::error_bound;
use hbrick::traces::{exact_counts, gen_zipf, ZipfSpec};
use hbrick::{BackendConfig, BackendKind, CountMinSketch, SketchConfig, UpdateStrategy};

fn backend(kind: BackendKind, w: usize) -> BackendConfig {
    match kind {
        BackendKind::Flat => BackendConfig::Flat { width_bits: 64 },
        _ => BackendConfig::default_for(kind, w),
    }
}

#[test]
fn one_sided_for_every_backend_and_strategy() {
    let trace = gen_zipf(&ZipfSpec::new(100_000, 10_000, 1.0, 21)).unwrap();
    let oracle = exact_counts(&trace);
    let w = 1 << 12;
    for kind in [BackendKind::Flat, BackendKind::Brick, BackendKind::Hbrick] {
        for strategy in [UpdateStrategy::Plain, UpdateStrategy::Conservative] {
            let cfg = SketchConfig::new(4, w, backend(kind, w)).with_strategy(strategy).with_seed(4);
            let mut sk = CountMinSketch::new(&cfg).unwrap();
            for p in &trace {
                sk.update(&p.key, p.size).unwrap();
            }
            for (k, &t) in &oracle.flows {
                assert!(sk.query(k).unwrap().value as u128 >= t, "{kind} {strategy}");
            }
        }
    }
}

#[test]
fn backends_are_interchangeable() {
    let trace = gen_zipf(&ZipfSpec::new(50_000, 5000, 1.1, 8)).unwrap();
    let w = 1 << 11;
    for strategy in [UpdateStrategy::Plain, UpdateStrategy::Conservative] {
        let sketches: Vec<CountMinSketch> = [BackendKind::Flat, BackendKind::Hbrick]
            .into_iter()
            .map(|k| {
                let cfg = SketchConfig::new(4, w, backend(k, w)).with_strategy(strategy).with_seed(77);
                let mut sk = CountMinSketch::new(&cfg).unwrap();
                for p in &trace {
                    sk.update(&p.key, p.size).unwrap();
                }
                sk
            })
            .collect();
        for k in exact_counts(&trace).flows.keys() {
            assert_eq!(sketches[0].query(k).unwrap(), sketches[1].query(k).unwrap());
        }
    }
}

#[test]
fn heavy_registry_has_no_false_negatives() {
    let trace = gen_zipf(&ZipfSpec::new(100_000, 10_000, 1.0, 13)).unwrap();
    let oracle = exact_counts(&trace);
    let phi = (oracle.total_bytes / 1000) as u64;
    let w = 1 << 12;
    let cfg = SketchConfig::new(4, w, backend(BackendKind::Hbrick, w)).with_threshold(phi).with_seed(2);
    let mut sk = CountMinSketch::new(&cfg).unwrap();
    let mut flagged = 0;
    for p in &trace {
        flagged += sk.process_packet(p).unwrap().1 as u64;
    }
    assert!(flagged > 0);
    let (eps, _) = error_bound(4, w);
    let slack = eps * oracle.total_bytes as f64;
    for (k, &t) in &oracle.flows {
        if t > phi as u128 {
            assert!(sk.registry().contains_key(k));
        }
    }
    for k in sk.registry().keys() {
        assert!(oracle.get(k) as f64 > phi as f64 - slack);
    }
}

#[test]
fn empirical_tail_respects_delta() {
    let depth = 4;
    let w = 1 << 15;
    let (eps, delta) = error_bound(depth, w);
    let mut within = 0;
    for seed in 0..30u64 {
        let trace = gen_zipf(&ZipfSpec::new(100_000, 10_000, 1.0, 1000 + seed)).unwrap();
        let oracle = exact_counts(&trace);
        let cfg = SketchConfig::new(depth, w, BackendConfig::Flat { width_bits: 64 }).with_seed(seed);
        let mut sk = CountMinSketch::new(&cfg).unwrap();
        for p in &trace {
            sk.update(&p.key, p.size).unwrap();
        }
        let limit = eps * oracle.total_bytes as f64;
        let bad = oracle
            .flows
            .iter()
            .filter(|(k, &t)| (sk.query(k).unwrap().value as u128 - t) as f64 > limit)
            .count();
        if (bad as f64 / oracle.flow_count() as f64) <= delta {
            within += 1;
        }
    }
    assert!(within >= 29, "{within}/30");
}
