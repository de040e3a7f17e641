//! Acceptance suite: one test per exit criterion, each printing a pass line
//! (visible with `--nocapture`). Budgets and tolerances are pinned in the
//! asserts.

mod common;

use std::collections::BTreeSet;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use posrank::clustering::{fit_kmeans, save_clusters, KmeansConfig};
use posrank::config::ExperimentConfig;
use posrank::corpus::TokenizerConfig;
use posrank::evaluation::{
    average_precision, generate_synthetic, read_run, run_experiment, write_run, PatternRule,
    RunEntry, SyntheticSpec,
};
use posrank::index::PositionalIndex;
use posrank::models::{
    bm25_weight, Bm25Params, LearnableBm25, MlpParams, ModelParams, ModelVariant,
};
use posrank::scalar::to_f64;
use posrank::training::{loss_and_gradient, ranknet_loss, TrainSetup};
use posrank::transport::{
    quantize_positions, quantize_values, w2_squared, w2_squared_exact, DiscreteDist,
    PositionConfig,
};

fn pass(n: u32, name: &str, detail: &str) {
    println!("criterion {n:02} ({name}): PASS — {detail}");
}

fn random_positions(rng: &mut ChaCha8Rng, max_len: u32, max_n: usize) -> (Vec<u32>, u32) {
    let len = rng.gen_range(2..=max_len);
    let n = rng.gen_range(1..=max_n.min(len as usize));
    let mut set = BTreeSet::new();
    while set.len() < n {
        set.insert(rng.gen_range(0..len));
    }
    (set.into_iter().collect(), len)
}

#[test]
fn c01_transport_oracle_equivalence() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for case in 0..500 {
        let d = rng.gen_range(1..=8usize);
        let cfg = PositionConfig { d, normalize: true };
        let (pos_a, len_a) = random_positions(&mut rng, 60, 10);
        let (pos_b, len_b) = random_positions(&mut rng, 60, 10);
        let qa = quantize_positions::<f64>(&pos_a, len_a, &cfg).unwrap();
        let qb = quantize_positions::<f64>(&pos_b, len_b, &cfg).unwrap();

        // Squared quantile-vector distance equals the exact monotone-coupling
        // cost between the two D-point equal-mass distributions.
        let fast = w2_squared(&qa, &qb).unwrap();
        let exact = w2_squared_exact(
            &DiscreteDist::equal_mass(qa.values()).unwrap(),
            &DiscreteDist::equal_mass(qb.values()).unwrap(),
        );
        assert!(
            (fast - exact).abs() <= 1e-12,
            "case {case}: fast {fast} vs oracle {exact}"
        );

        // The quantizer is optimal: no random sorted candidate comes closer
        // to the source empirical distribution.
        let source_vals: Vec<f64> = pos_a
            .iter()
            .map(|&p| (p as f64 + 0.5) / len_a as f64)
            .collect();
        let source = DiscreteDist::equal_mass(&source_vals).unwrap();
        let ours = w2_squared_exact(&source, &DiscreteDist::equal_mass(qa.values()).unwrap());
        for _ in 0..1000 {
            let mut cand: Vec<f64> = (0..d).map(|_| rng.gen_range(0.0..1.0)).collect();
            cand.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let cost = w2_squared_exact(&source, &DiscreteDist::equal_mass(&cand).unwrap());
            assert!(
                cost >= ours - 1e-12,
                "case {case}: candidate beats quantizer ({cost} < {ours})"
            );
        }
    }
    let elapsed = t0.elapsed().as_secs_f64();
    assert!(elapsed < 30.0, "took {elapsed:.1}s, budget 30s");
    pass(
        1,
        "transport oracle equivalence",
        &format!("500 cases, 1000 candidates each, {elapsed:.1}s"),
    );
}

#[test]
fn c02_quantizer_hand_cases() {
    for d in [1, 2, 3, 5, 100] {
        let q = quantize_values(&[0.25_f64], d, true).unwrap();
        assert!(q.values().iter().all(|&v| v == 0.25), "d={d}");
    }
    let q = quantize_values(&[0.0_f64, 1.0], 4, true).unwrap();
    assert_eq!(q.values(), &[0.0, 0.0, 1.0, 1.0]);
    pass(2, "quantizer hand cases", "point mass and {0,1}->D=4 exact");
}

#[test]
fn c03_kmeans_exactness_on_tiny_instances() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for case in 0..100 {
        let n = rng.gen_range(3..=8usize);
        let k = rng.gen_range(1..=3.min(n));
        let d = rng.gen_range(2..=4usize);
        let position = PositionConfig { d, normalize: true };
        let points: Vec<_> = (0..n)
            .map(|_| {
                let m = rng.gen_range(1..=3usize);
                let mut vals: Vec<f64> = (0..m).map(|_| rng.gen::<f64>()).collect();
                vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
                quantize_values(&vals, d, true).unwrap()
            })
            .collect();
        // Lloyd inertia monotonicity is asserted inside every iteration of
        // the fit itself; a violation would panic here.
        let cfg = KmeansConfig {
            k,
            seed: case as u64,
            rel_tol: 0.0,
            n_init: 30,
            ..KmeansConfig::default()
        };
        let model = fit_kmeans(&points, position, &cfg).unwrap();
        let best = common::exhaustive_partition_inertia(&points, k);
        assert!(
            to_f64(model.inertia) <= best + 1e-9,
            "case {case}: fit {} vs exhaustive {best}",
            to_f64(model.inertia)
        );
    }
    let elapsed = t0.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "took {elapsed:.1}s, budget 60s");
    pass(
        3,
        "k-means exactness",
        &format!("100 instances within 1e-9 of exhaustive optimum, {elapsed:.1}s"),
    );
}

#[test]
fn c04_bm25_hand_values_and_monotonicity() {
    let p = Bm25Params::<f64>::default();
    // Absent term.
    assert_eq!(bm25_weight(0, 10, 50, 100.0, 100, &p).unwrap(), 0.0);
    // N=2, df=1 forces idf = ln(1) = 0.
    assert_eq!(bm25_weight(1, 1, 100, 100.0, 2, &p).unwrap(), 0.0);
    // tf=2, N=100, df=10, l_d = l_mean: (2*2.2/3.2) * ln(90.5/10.5).
    // The value is frozen from independent 30-digit evaluation of the
    // formula (the spec's in-line arithmetic for this example is off by
    // 2.6e-4; see the formula itself, which is authoritative).
    let w = bm25_weight(2, 10, 100, 100.0, 100, &p).unwrap();
    assert!((w - 2.9617150661208045).abs() < 1e-12, "{w}");
    assert!((w - 2.96172).abs() < 1e-5, "{w}");

    // Strictly increasing in tf while the idf is positive.
    let mut prev = bm25_weight(1, 10, 100, 100.0, 100, &p).unwrap();
    for tf in 2..=100 {
        let cur = bm25_weight(tf, 10, 100, 100.0, 100, &p).unwrap();
        assert!(cur > prev, "tf={tf}: {cur} <= {prev}");
        prev = cur;
    }
    // Strictly decreasing in df over [1, N-1].
    let mut prev = bm25_weight(2, 1, 100, 100.0, 100, &p).unwrap();
    for df in 2..=99 {
        let cur = bm25_weight(2, df, 100, 100.0, 100, &p).unwrap();
        assert!(cur < prev, "df={df}: {cur} >= {prev}");
        prev = cur;
    }
    pass(4, "bm25 hand values", "three values at 1e-5; tf/df monotone on a 100-point grid");
}

struct GradFixture {
    index: PositionalIndex,
    topics: Vec<posrank::corpus::Topic>,
    qrels: posrank::corpus::Qrels,
    clusters: posrank::Clusters,
    store: posrank::RepStore,
}

fn grad_fixture(k: usize, d: usize) -> GradFixture {
    let (index, topics, qrels) = common::judged_fixture();
    let position = PositionConfig { d, normalize: true };
    let points =
        posrank::clustering::collect_cluster_points::<f64>(&index, &position, None, 5).unwrap();
    let clusters = fit_kmeans(
        &points,
        position,
        &KmeansConfig {
            k,
            seed: 5,
            ..KmeansConfig::default()
        },
    )
    .unwrap();
    let store = posrank::RepStore::build(&index, &clusters, posrank::clustering::Aggregation::Mean)
        .unwrap();
    GradFixture {
        index,
        topics,
        qrels,
        clusters,
        store,
    }
}

#[test]
fn c05_gradient_fidelity() {
    let t0 = Instant::now();
    let fx = grad_fixture(5, 16);
    let _ = &fx.clusters;
    let mut rng = ChaCha8Rng::seed_from_u64(909);

    // MLP variant: 20 random parameter points.
    let setup =
        TrainSetup::new(&fx.index, Some(&fx.store), &fx.topics, &fx.qrels, false).unwrap();
    let triples = setup.sample_triples(40, 99);
    for point in 0..20 {
        let mut mlp = MlpParams::<f64>::init(5, 1000 + point).unwrap();
        let scale = rng.gen_range(0.5..2.0);
        for w in mlp.w1.iter_mut().chain(mlp.w2.iter_mut()) {
            *w *= scale;
        }
        let params = ModelParams::Mlp(mlp);
        let err = common::gradient_relative_error(&setup, &params, &triples, 1e-5);
        assert!(err <= 1e-4, "mlp point {point}: relative error {err}");
    }

    // Learnable-BM25 variant: 20 random (kappa, beta) points.
    let setup_bm25 = TrainSetup::new(&fx.index, None, &fx.topics, &fx.qrels, false).unwrap();
    let triples_bm25 = setup_bm25.sample_triples(40, 77);
    for point in 0..20 {
        let params = ModelParams::LearnedBm25(LearnableBm25 {
            kappa: rng.gen_range(-2.0..2.0),
            beta: rng.gen_range(-2.0..2.0),
        });
        let err = common::gradient_relative_error(&setup_bm25, &params, &triples_bm25, 1e-5);
        assert!(err <= 1e-4, "bm25 point {point}: relative error {err}");
    }
    let elapsed = t0.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "took {elapsed:.1}s, budget 60s");
    pass(
        5,
        "gradient fidelity",
        &format!("40 parameter points vs central differences at 1e-4, {elapsed:.1}s"),
    );
}

#[test]
fn c06_loss_sanity_and_descent() {
    // Identical documents force delta = 0 and loss = ln 2.
    let index = PositionalIndex::build(
        &[common::doc("A", "fox den"), common::doc("B", "fox den")],
        TokenizerConfig::default(),
    )
    .unwrap();
    let topics = vec![posrank::corpus::Topic {
        qid: "q".into(),
        terms: vec!["fox".into()],
    }];
    let qrels = posrank::corpus::Qrels::from_entries([
        posrank::corpus::QrelEntry { qid: "q".into(), docno: "A".into(), relevant: true },
        posrank::corpus::QrelEntry { qid: "q".into(), docno: "B".into(), relevant: false },
    ])
    .unwrap();
    let setup = TrainSetup::new(&index, None, &topics, &qrels, false).unwrap();
    let params = ModelParams::Bm25(Bm25Params::<f64>::default());
    let triples = setup.sample_triples(16, 3);
    let loss = ranknet_loss(&setup, &params, &triples).unwrap();
    assert!((loss - std::f64::consts::LN_2).abs() <= 1e-12, "{loss}");

    // Full-batch gradient descent with lr = 1e-4 is non-increasing over 50
    // steps on a fixed triple set, for both trainable variants.
    let fx = grad_fixture(4, 12);
    let _ = &fx.clusters;
    let mlp_setup =
        TrainSetup::new(&fx.index, Some(&fx.store), &fx.topics, &fx.qrels, false).unwrap();
    let bm_setup = TrainSetup::new(&fx.index, None, &fx.topics, &fx.qrels, false).unwrap();
    let variants: Vec<(&str, ModelParams<f64>, &TrainSetup<f64>)> = vec![
        ("mlp", ModelParams::Mlp(MlpParams::init(4, 8).unwrap()), &mlp_setup),
        (
            "learned-bm25",
            ModelParams::LearnedBm25(LearnableBm25::from_k1_b(1.2, 0.75).unwrap()),
            &bm_setup,
        ),
    ];
    for (name, mut params, setup) in variants {
        let triples = setup.sample_triples(64, 11);
        let mut prev = f64::INFINITY;
        for step in 0..50 {
            let (loss, grad) = loss_and_gradient(setup, &params, &triples).unwrap();
            assert!(
                loss <= prev + 1e-12,
                "{name} step {step}: loss {loss} > {prev}"
            );
            prev = loss;
            let mut flat = params.flatten();
            for (p, g) in flat.iter_mut().zip(&grad) {
                *p -= 1e-4 * g;
            }
            params.assign_flat(&flat).unwrap();
        }
    }
    pass(6, "loss sanity", "ln 2 at delta=0 (1e-12); 50 descent steps non-increasing");
}

fn synth_mlp_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.model = ModelVariant::Mlp;
    // k = 10, D = 100, normalized positions, mean aggregation: defaults.
    cfg.cluster.subsample_cap = Some(20_000);
    cfg.train.iterations = 150;
    cfg.train.triples_per_iteration = 4096;
    cfg.train.learning_rate = 1e-3;
    cfg
}

fn make_bundle(
    dir: &std::path::Path,
    spec: &SyntheticSpec,
) -> posrank::evaluation::BundlePaths {
    generate_synthetic(spec).unwrap().write_to_dir(dir).unwrap()
}

#[test]
fn c07_end_to_end_synthetic_separation() {
    let t0 = Instant::now();
    let seeds = [1000u64, 1001, 1002, 1003, 1004];

    // Default BM25 stays at chance: the classes share tf, df, and length.
    for &seed in &seeds {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = synth_mlp_config();
        cfg.model = ModelVariant::Bm25;
        let cfg = cfg.effective(Some(seed));
        let spec = SyntheticSpec { seed, ..cfg.synthetic_spec() };
        let bundle = make_bundle(&dir.path().join("b"), &spec);
        let out = run_experiment(&cfg, &bundle, &bundle, dir.path()).unwrap();
        assert!(
            (0.35..=0.65).contains(&out.eval.map),
            "seed {seed}: BM25 MAP {} outside chance band",
            out.eval.map
        );
    }

    // The trained MLP separates the classes on held-out queries.
    let mut hits = 0;
    let mut maps = Vec::new();
    for &seed in &seeds {
        let dir = tempfile::tempdir().unwrap();
        let cfg = synth_mlp_config().effective(Some(seed));
        let train_spec = SyntheticSpec { seed, ..cfg.synthetic_spec() };
        let test_spec = SyntheticSpec { seed: seed + 500, ..cfg.synthetic_spec() };
        let train_b = make_bundle(&dir.path().join("train"), &train_spec);
        let test_b = make_bundle(&dir.path().join("test"), &test_spec);
        let out = run_experiment(&cfg, &train_b, &test_b, dir.path()).unwrap();
        maps.push(out.eval.map);
        if out.eval.map >= 0.90 {
            hits += 1;
        }
    }
    assert!(hits >= 4, "MLP reached MAP >= 0.90 in only {hits}/5 seeds: {maps:?}");
    let elapsed = t0.elapsed().as_secs_f64();
    assert!(elapsed < 600.0, "took {elapsed:.1}s, budget 600s");
    pass(
        7,
        "end-to-end synthetic separation",
        &format!("BM25 at chance, MLP held-out MAPs {maps:?}, {elapsed:.1}s"),
    );
}

#[test]
fn c08_learned_bm25_harness() {
    let t0 = Instant::now();
    for seed in [2000u64, 2001, 2002, 2003, 2004] {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = synth_mlp_config();
        cfg.synthetic.rule = PatternRule::TermFrequency {
            relevant_tf: 8,
            nonrelevant_tf: 2,
        };
        cfg.train.iterations = 100;
        cfg.train.triples_per_iteration = 2048;

        let run_with = |model, sub: &str| {
            let mut c = cfg.clone();
            c.model = model;
            let c = c.effective(Some(seed));
            let spec = SyntheticSpec { seed, ..c.synthetic_spec() };
            let d = dir.path().join(sub);
            let bundle = make_bundle(&d.join("b"), &spec);
            run_experiment(&c, &bundle, &bundle, &d).unwrap()
        };
        let baseline = run_with(ModelVariant::Bm25, "base");
        let learned = run_with(ModelVariant::LearnedBm25, "learned");
        let losses = learned.train_log.as_ref().unwrap().losses();
        assert!(
            losses.last().unwrap() < losses.first().unwrap(),
            "seed {seed}: loss did not decrease ({losses:?})"
        );
        assert!(
            learned.eval.map >= baseline.eval.map - 0.01,
            "seed {seed}: learned MAP {} below baseline {}",
            learned.eval.map,
            baseline.eval.map
        );
    }
    let elapsed = t0.elapsed().as_secs_f64();
    pass(
        8,
        "learned-bm25 harness",
        &format!("loss decreased and MAP held across 5 seeds, {elapsed:.1}s"),
    );
}

fn with_threads<T>(n: usize, f: impl FnOnce() -> T + Send) -> T
where
    T: Send,
{
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .unwrap()
        .install(f)
}

#[test]
fn c09_determinism_across_thread_counts() {
    let t0 = Instant::now();

    // Criterion 3 computation: a k-means fit serializes identically.
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let position = PositionConfig { d: 8, normalize: true };
    let points: Vec<_> = (0..300)
        .map(|_| {
            let m = rng.gen_range(1..=4usize);
            let mut vals: Vec<f64> = (0..m).map(|_| rng.gen::<f64>()).collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            quantize_values(&vals, 8, true).unwrap()
        })
        .collect();
    let fit_bytes = |threads: usize| -> Vec<u8> {
        with_threads(threads, || {
            let model = fit_kmeans(
                &points,
                position,
                &KmeansConfig {
                    k: 3,
                    seed: 7,
                    ..KmeansConfig::default()
                },
            )
            .unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("clusters.bin");
            save_clusters(&path, &model, "hash").unwrap();
            std::fs::read(&path).unwrap()
        })
    };
    assert_eq!(fit_bytes(1), fit_bytes(3), "k-means artifact differs by thread count");

    // Criterion 5 computation: losses and gradients are bit-identical.
    let fx = grad_fixture(5, 16);
    let _ = &fx.clusters;
    let grad_bits = |threads: usize| -> (u64, Vec<u64>) {
        with_threads(threads, || {
            let setup =
                TrainSetup::new(&fx.index, Some(&fx.store), &fx.topics, &fx.qrels, false)
                    .unwrap();
            let triples = setup.sample_triples(200, 5);
            let params = ModelParams::Mlp(MlpParams::<f64>::init(5, 3).unwrap());
            let (loss, grad) = loss_and_gradient(&setup, &params, &triples).unwrap();
            (loss.to_bits(), grad.iter().map(|g| g.to_bits()).collect())
        })
    };
    assert_eq!(grad_bits(1), grad_bits(3), "gradient differs by thread count");

    // Criterion 7 pipeline: run files, checkpoints, cluster models, and the
    // timing-free train-log projection are byte-identical.
    let pipeline = |threads: usize| -> Vec<Vec<u8>> {
        with_threads(threads, || {
            let dir = tempfile::tempdir().unwrap();
            let cfg = synth_mlp_config().effective(Some(1000));
            let train_spec = SyntheticSpec { seed: 1000, ..cfg.synthetic_spec() };
            let test_spec = SyntheticSpec { seed: 1500, ..cfg.synthetic_spec() };
            let train_b = make_bundle(&dir.path().join("train"), &train_spec);
            let test_b = make_bundle(&dir.path().join("test"), &test_spec);
            let out = run_experiment(&cfg, &train_b, &test_b, dir.path()).unwrap();
            vec![
                std::fs::read(dir.path().join("out.run")).unwrap(),
                std::fs::read(dir.path().join("checkpoint.bin")).unwrap(),
                std::fs::read(dir.path().join("clusters.bin")).unwrap(),
                std::fs::read(dir.path().join("eval.json")).unwrap(),
                out.train_log.unwrap().to_jsonl(false).into_bytes(),
            ]
        })
    };
    let a = pipeline(1);
    let b = pipeline(3);
    for (i, name) in ["out.run", "checkpoint.bin", "clusters.bin", "eval.json", "train log"]
        .iter()
        .enumerate()
    {
        assert_eq!(a[i], b[i], "{name} differs by thread count");
    }
    let elapsed = t0.elapsed().as_secs_f64();
    pass(
        9,
        "determinism",
        &format!("fits, gradients, and pipeline artifacts byte-identical at 1 vs 3 threads, {elapsed:.1}s"),
    );
}

#[test]
fn c10_evaluation_oracle() {
    // Brute-force AP: precision-at-r recomputed from scratch at every rank.
    fn brute_force_ap(ranking: &[String], relevant: &BTreeSet<String>) -> f64 {
        let mut acc = 0.0;
        for r in 1..=ranking.len() {
            if relevant.contains(&ranking[r - 1]) {
                let hits = ranking[..r].iter().filter(|d| relevant.contains(*d)).count();
                acc += hits as f64 / r as f64;
            }
        }
        acc / relevant.len() as f64
    }

    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for case in 0..1000 {
        let n = rng.gen_range(1..=20usize);
        let n_rel = rng.gen_range(1..=n);
        let mut docs: Vec<String> = (0..n).map(|i| format!("D{i}")).collect();
        // Rotate deterministically so relevant docs land at varied ranks.
        let rot = rng.gen_range(0..n);
        docs.rotate_left(rot);
        let relevant: BTreeSet<String> = (0..n_rel)
            .map(|_| format!("D{}", rng.gen_range(0..n)))
            .collect();
        let hidden = rng.gen_range(0..3usize); // relevant docs never retrieved
        let relevant: BTreeSet<String> = relevant
            .into_iter()
            .chain((0..hidden).map(|i| format!("X{i}")))
            .collect();
        let fast = average_precision(&docs, &relevant);
        let brute = brute_force_ap(&docs, &relevant);
        assert_eq!(fast, brute, "case {case}");
    }

    // Run-file round trip is the identity.
    let entries = vec![
        RunEntry { qid: "q1".into(), docno: "B".into(), rank: 1, score: 2.25, tag: "t".into() },
        RunEntry { qid: "q1".into(), docno: "A".into(), rank: 2, score: -0.5, tag: "t".into() },
        RunEntry { qid: "q2".into(), docno: "C".into(), rank: 1, score: 1e-7, tag: "t".into() },
    ];
    let text = write_run(&entries).unwrap();
    let parsed = read_run(&text).unwrap();
    assert_eq!(parsed, entries);
    assert_eq!(write_run(&parsed).unwrap(), text);
    pass(10, "evaluation oracle", "1000 AP cases exact; run round trip identity");
}
