//! Acceptance gates for the whole workspace: one test per numbered criterion.
//!
//! Each test prints a single `criterion NN ...: PASS (...)` line with its
//! measured values; run with `cargo test --test acceptance -- --nocapture` to
//! see them. Criteria 5, 6, and 7 share one training fixture (30 federated
//! runs) built lazily behind a `OnceLock`.

use std::collections::HashSet;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use fedhap::data::{generate_synthetic, Split, SyntheticSpec};
use fedhap::eval::{cross_silo_query, mean_average_precision, rank_database, CodeDatabase};
use fedhap::federation::{Ablation, FederationConfig, PartitionKind};
use fedhap::loss::{
    generator_total_loss, mine_local_triplets, plan_global_triplets, quantization_loss,
    triplet_loss_local, ActiveTerms, GeneratorLossMode,
};
use fedhap::model::{
    binarize, distance, Discriminator, DistanceMetric, HashCode, HashHead, LossWeights,
};
use fedhap::nn::{finite_diff_check, FdOptions, GradientBundle, Network};
use fedhap::prototypes::{aggregate_prototypes, ClassMeanReport, PrototypeSet};
use fedhap::runner::{execute_run, RunConfig};
use fedhap::seeding::derive_rng;
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::Rng;

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

// ---------------------------------------------------------------------------
// Shared benchmark fixture for criteria 5-7: the ablation grid on the default
// synthetic benchmark, five seeds, plus IID counterparts for the robustness
// and progress checks. Seed s uses dataset seed 1000+s and federation seed s.
// ---------------------------------------------------------------------------

const BENCH_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn bench_config(ablation: Ablation, seed: u64, iid: bool) -> RunConfig {
    RunConfig {
        federation: FederationConfig {
            clients: 8,
            rounds: 30,
            local_epochs: 3,
            code_bits: 24,
            partition: if iid {
                PartitionKind::Iid
            } else {
                PartitionKind::ShardByClass {
                    classes_per_client: 3,
                }
            },
            ablation,
            seed,
            ..FederationConfig::default()
        },
        dataset_csv: None,
        synthetic: Some(SyntheticSpec::benchmark(1000 + seed)),
        eval_every: 0,
        map_topn: None,
        snapshot_every: None,
        out: None,
    }
}

#[derive(Debug, Clone, Copy)]
struct BenchCell {
    round0_map: f64,
    final_map: f64,
}

struct Fixture {
    /// (ablation, seed) -> result on the non-IID shard partition.
    noniid: Vec<(Ablation, u64, BenchCell)>,
    /// (ablation, seed) -> result on the IID partition (Full and NoPrototypes).
    iid: Vec<(Ablation, u64, BenchCell)>,
    /// Wall time of the 20 non-IID runs alone.
    noniid_elapsed: Duration,
}

impl Fixture {
    fn noniid_finals(&self, ablation: Ablation) -> Vec<f64> {
        BENCH_SEEDS
            .iter()
            .map(|&s| {
                self.noniid
                    .iter()
                    .find(|(a, seed, _)| *a == ablation && *seed == s)
                    .expect("fixture cell")
                    .2
                    .final_map
            })
            .collect()
    }

    fn iid_cell(&self, ablation: Ablation, seed: u64) -> BenchCell {
        self.iid
            .iter()
            .find(|(a, s, _)| *a == ablation && *s == seed)
            .expect("fixture cell")
            .2
    }

    fn noniid_cell(&self, ablation: Ablation, seed: u64) -> BenchCell {
        self.noniid
            .iter()
            .find(|(a, s, _)| *a == ablation && *s == seed)
            .expect("fixture cell")
            .2
    }
}

fn run_bench(ablation: Ablation, seed: u64, iid: bool) -> BenchCell {
    let dir = tempfile::tempdir().expect("tempdir");
    let cfg = bench_config(ablation, seed, iid);
    let summary = execute_run(&cfg, dir.path(), None).expect("benchmark run");
    BenchCell {
        round0_map: summary.round0_map,
        final_map: summary.final_map,
    }
}

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let started = Instant::now();
        let mut noniid = Vec::new();
        for ablation in Ablation::ALL {
            for &seed in &BENCH_SEEDS {
                noniid.push((ablation, seed, run_bench(ablation, seed, false)));
            }
        }
        let noniid_elapsed = started.elapsed();
        let mut iid = Vec::new();
        for ablation in [Ablation::Full, Ablation::NoPrototypes] {
            for &seed in &BENCH_SEEDS {
                iid.push((ablation, seed, run_bench(ablation, seed, true)));
            }
        }
        Fixture {
            noniid,
            iid,
            noniid_elapsed,
        }
    })
}

// ---------------------------------------------------------------------------
// Criterion 1: analytic gradients of the full four-term objective match
// central finite differences on >= 20 non-degenerate probe points.
// ---------------------------------------------------------------------------

struct Probe {
    head: HashHead,
    disc: Discriminator,
    features: Vec<Vec<f64>>,
    labels: Vec<Vec<u8>>,
    plan_local: Vec<fedhap::loss::Triplet>,
    plan_global: Vec<fedhap::loss::GlobalTriplet>,
    protos: PrototypeSet,
    weights: LossWeights,
}

/// Smallest distance any piecewise definition boundary may sit from the probe:
/// ReLU preactivations, hinge arguments, and code entries (the quantization
/// target flips at zero) must all clear it.
const PROBE_CLEARANCE: f64 = 5e-3;

fn build_probe(attempt: u64) -> Option<Probe> {
    const IN_DIM: usize = 16;
    const HIDDEN: usize = 8;
    const BITS: usize = 12;
    const CLASSES: usize = 4;
    const BATCH: usize = 8;

    let mut rng = derive_rng(0xACCE97, &[attempt]);
    let head = HashHead::new(IN_DIM, HIDDEN, BITS, &mut rng).unwrap();
    let disc = Discriminator::new(BITS, CLASSES, HIDDEN, &mut rng).unwrap();
    let protos = PrototypeSet::random(CLASSES, BITS, &mut rng).unwrap();
    let weights = LossWeights::new(0.05, 0.1, 0.4, DistanceMetric::Cosine).unwrap();

    let mut features: Vec<Vec<f64>> = Vec::with_capacity(BATCH);
    let mut labels: Vec<Vec<u8>> = Vec::with_capacity(BATCH);
    for _ in 0..BATCH {
        features.push((0..IN_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let mut y = vec![0u8; CLASSES];
        y[rng.gen_range(0..CLASSES)] = 1;
        if rng.gen_bool(0.25) {
            y[rng.gen_range(0..CLASSES)] = 1;
        }
        labels.push(y);
    }
    let label_refs: Vec<&[u8]> = labels.iter().map(|l| l.as_slice()).collect();
    let plan_local = mine_local_triplets(&label_refs, &mut rng);
    let plan_global = plan_global_triplets(&label_refs, &protos, &mut rng);
    if plan_local.is_empty() || plan_global.is_empty() {
        return None;
    }

    // Reject any probe within PROBE_CLEARANCE of a piecewise boundary so the
    // central difference stays on one smooth branch.
    let mut batch_b = Vec::with_capacity(BATCH);
    for (x, y) in features.iter().zip(&labels) {
        let (b, tape) = head.forward(x).unwrap();
        if head.net().min_abs_relu_preact(&tape).unwrap_or(f64::INFINITY) < PROBE_CLEARANCE {
            return None;
        }
        if b.iter().any(|v| v.abs() < PROBE_CLEARANCE) {
            return None;
        }
        let (_, disc_tape) = disc.score(&b, y).unwrap();
        if disc
            .net()
            .min_abs_relu_preact(&disc_tape)
            .unwrap_or(f64::INFINITY)
            < PROBE_CLEARANCE
        {
            return None;
        }
        batch_b.push(b);
    }
    let terms = generator_total_loss(
        &batch_b,
        &label_refs,
        &plan_local,
        &plan_global,
        Some(&protos),
        Some(&disc),
        &weights,
        ActiveTerms {
            tl_global: true,
            adv: true,
        },
        GeneratorLossMode::Nonsaturating,
        None,
    )
    .unwrap();
    let global = terms.tl_global.unwrap();
    if terms.tl_local.used == 0 || global.used == 0 || terms.adv.is_none() {
        return None;
    }
    if terms.tl_local.min_abs_hinge_arg < PROBE_CLEARANCE
        || global.min_abs_hinge_arg < PROBE_CLEARANCE
    {
        return None;
    }

    Some(Probe {
        head,
        disc,
        features,
        labels,
        plan_local,
        plan_global,
        protos,
        weights,
    })
}

#[test]
fn criterion_01_full_objective_gradients_match_finite_differences() {
    let started = Instant::now();
    let opts = FdOptions::default();
    assert_eq!(opts.step, 1e-4);

    let mut accepted = 0usize;
    let mut worst: f64 = 0.0;
    let mut attempt = 0u64;
    while accepted < 20 {
        attempt += 1;
        assert!(attempt < 500, "probe rejection sampling failed to converge");
        let Some(probe) = build_probe(attempt) else {
            continue;
        };
        accepted += 1;

        let label_refs: Vec<&[u8]> = probe.labels.iter().map(|l| l.as_slice()).collect();
        let active = ActiveTerms {
            tl_global: true,
            adv: true,
        };

        // Analytic path: dL/db per sample, then backward through the head.
        let mut tapes = Vec::new();
        let mut batch_b = Vec::new();
        for x in &probe.features {
            let (b, tape) = probe.head.forward(x).unwrap();
            batch_b.push(b);
            tapes.push(tape);
        }
        let mut grad_b: Vec<Vec<f64>> = batch_b.iter().map(|b| vec![0.0; b.len()]).collect();
        generator_total_loss(
            &batch_b,
            &label_refs,
            &probe.plan_local,
            &probe.plan_global,
            Some(&probe.protos),
            Some(&probe.disc),
            &probe.weights,
            active,
            GeneratorLossMode::Nonsaturating,
            Some(&mut grad_b),
        )
        .unwrap();
        let mut analytic = GradientBundle::zeros_for(probe.head.net());
        for (tape, g) in tapes.iter().zip(&grad_b) {
            probe
                .head
                .net()
                .backward_into(tape, g, &mut analytic)
                .unwrap();
        }

        // Finite differences of the identical scalar objective.
        let loss_of = |net: &Network| {
            let mut bb = Vec::with_capacity(probe.features.len());
            for x in &probe.features {
                bb.push(net.infer(x)?);
            }
            generator_total_loss(
                &bb,
                &label_refs,
                &probe.plan_local,
                &probe.plan_global,
                Some(&probe.protos),
                Some(&probe.disc),
                &probe.weights,
                active,
                GeneratorLossMode::Nonsaturating,
                None,
            )
            .map(|t| t.total)
        };
        let report = finite_diff_check(probe.head.net(), &analytic, loss_of, &opts).unwrap();
        assert!(
            report.skipped.is_empty(),
            "probe {attempt}: {} coordinates sat on a kink despite clearance checks",
            report.skipped.len()
        );
        assert!(report.checked > 0);
        assert!(
            report.max_rel_err < 1e-3,
            "probe {attempt}: max relative error {} (worst {:?})",
            report.max_rel_err,
            report.worst
        );
        worst = worst.max(report.max_rel_err);
    }

    let elapsed = started.elapsed();
    assert!(
        elapsed < Duration::from_secs(30),
        "gradient check took {elapsed:?}"
    );
    println!(
        "criterion 01 gradient correctness: PASS (probes={accepted}, max rel err={worst:.3e}, elapsed={elapsed:.2?})"
    );
}

// ---------------------------------------------------------------------------
// Criterion 2: mean_average_precision equals an independent brute-force
// implementation to within 1e-12.
// ---------------------------------------------------------------------------

fn random_code(bits: usize, rng: &mut impl Rng) -> HashCode {
    let soft: Vec<f64> = (0..bits).map(|_| rng.gen_range(-1.0..1.0)).collect();
    binarize(&soft)
}

fn random_labels(classes: usize, rng: &mut impl Rng) -> Vec<u8> {
    (0..classes).map(|_| u8::from(rng.gen_bool(0.3))).collect()
}

fn hamming_u32(a: &HashCode, b: &HashCode) -> u32 {
    a.bits()
        .iter()
        .zip(b.bits())
        .map(|(x, y)| u32::from(x != y))
        .sum()
}

#[test]
fn criterion_02_map_matches_brute_force_oracle() {
    let started = Instant::now();
    let mut rng = derive_rng(0xACCE97, &[2]);
    const BITS: usize = 16;
    const CLASSES: usize = 5;

    let mut queries = CodeDatabase::empty(BITS, CLASSES);
    for _ in 0..30 {
        queries
            .push(random_code(BITS, &mut rng), random_labels(CLASSES, &mut rng))
            .unwrap();
    }
    let mut db = CodeDatabase::empty(BITS, CLASSES);
    for _ in 0..100 {
        db.push(random_code(BITS, &mut rng), random_labels(CLASSES, &mut rng))
            .unwrap();
    }

    // Brute force, written from the ranking definition alone: sort by
    // (distance, index), AP = mean over relevant positions of hits/rank,
    // denominator = number of relevant items inside the ranking; queries with
    // no relevant item are skipped.
    let mut ap_sum = 0.0;
    let mut evaluated = 0usize;
    let mut skipped = 0usize;
    for qi in 0..queries.len() {
        let qcode = queries.code(qi);
        let qlabels = queries.labels_of(qi);
        let mut order: Vec<(u32, usize)> = (0..db.len())
            .map(|di| (hamming_u32(qcode, db.code(di)), di))
            .collect();
        order.sort();
        let mut hits = 0u64;
        let mut precision_sum = 0.0;
        for (rank0, &(_, di)) in order.iter().enumerate() {
            let relevant = qlabels
                .iter()
                .zip(db.labels_of(di))
                .any(|(a, b)| *a != 0 && *b != 0);
            if relevant {
                hits += 1;
                precision_sum += hits as f64 / (rank0 + 1) as f64;
            }
        }
        if hits == 0 {
            skipped += 1;
        } else {
            evaluated += 1;
            ap_sum += precision_sum / hits as f64;
        }
    }
    assert!(evaluated > 0, "degenerate oracle instance");
    let brute_map = ap_sum / evaluated as f64;

    let report = mean_average_precision(&queries, &db, None).unwrap();
    assert_eq!(report.evaluated, evaluated);
    assert_eq!(report.skipped_no_relevant, skipped);
    let diff = (report.map - brute_map).abs();
    assert!(
        diff < 1e-12,
        "mAP {} vs brute force {brute_map} (diff {diff:e})",
        report.map
    );

    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(5));
    println!(
        "criterion 02 mAP oracle equivalence: PASS (map={:.6}, diff={diff:.2e}, elapsed={elapsed:.2?})",
        report.map
    );
}

// ---------------------------------------------------------------------------
// Criterion 3: cross-silo queries equal ranking the union database, exact
// ranked-id equality under the (distance, silo, index) tie-break.
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_cross_silo_equals_union_ranking() {
    let started = Instant::now();
    let mut rng = derive_rng(0xACCE97, &[3]);
    const BITS: usize = 16;
    const CLASSES: usize = 4;
    const K: usize = 20;
    let sizes = [40usize, 35, 25];

    let mut silos = Vec::new();
    let mut union = CodeDatabase::empty(BITS, CLASSES);
    for (silo_id, &n) in sizes.iter().enumerate() {
        let mut silo = CodeDatabase::empty(BITS, CLASSES);
        for _ in 0..n {
            let code = random_code(BITS, &mut rng);
            let labels = random_labels(CLASSES, &mut rng);
            silo.push(code.clone(), labels.clone()).unwrap();
            union.push(code, labels).unwrap();
        }
        silos.push(silo.with_owner(silo_id));
    }
    // Union index -> (silo, local index), in concatenation order, so the
    // union's (distance, index) tie-break coincides with (distance, silo,
    // local index).
    let mut flat: Vec<(usize, usize)> = Vec::new();
    for (silo_id, &n) in sizes.iter().enumerate() {
        for i in 0..n {
            flat.push((silo_id, i));
        }
    }

    for q in 0..50 {
        let qcode = random_code(BITS, &mut rng);
        let qlabels = random_labels(CLASSES, &mut rng);
        let merged = cross_silo_query(&qcode, Some(&qlabels), &silos, K).unwrap();
        let full = rank_database(&qcode, Some(&qlabels), &union).unwrap();
        assert_eq!(merged.len(), K.min(union.len()));
        for (rank, item) in merged.items().iter().enumerate() {
            let reference = &full.items()[rank];
            let (exp_silo, exp_idx) = flat[reference.index];
            assert_eq!(
                (item.silo, item.index),
                (Some(exp_silo), exp_idx),
                "query {q} rank {rank}"
            );
            assert_eq!(item.distance, reference.distance, "query {q} rank {rank}");
            assert_eq!(item.relevant, reference.relevant, "query {q} rank {rank}");
        }
    }

    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(5));
    println!("criterion 03 cross-silo oracle equivalence: PASS (queries=50, k={K}, elapsed={elapsed:.2?})");
}

// ---------------------------------------------------------------------------
// Criterion 4: prototype aggregation reproduces the two-client hand example
// and the single-client reduction sign(mean) on 100 random cases.
// ---------------------------------------------------------------------------

#[test]
fn criterion_04_prototype_aggregation_hand_example_and_single_client() {
    // Two clients report means (0.5, -0.2) and (-0.1, -0.4) for one class:
    // the averaged mean (0.2, -0.3) binarizes to (+1, -1).
    let r1 = ClassMeanReport::new(vec![Some(vec![0.5, -0.2])], vec![3], 2).unwrap();
    let r2 = ClassMeanReport::new(vec![Some(vec![-0.1, -0.4])], vec![2], 2).unwrap();
    let protos = aggregate_prototypes(&[r1, r2], 1).unwrap();
    assert_eq!(protos.code(0).unwrap().bits(), &[1, -1]);

    // Single-client reduction: the prototype is sign of that client's mean.
    let mut rng = derive_rng(0xACCE97, &[4]);
    for case in 0..100 {
        let classes = rng.gen_range(1..5);
        let bits = rng.gen_range(1..9);
        let mut means = Vec::new();
        let mut counts = Vec::new();
        for _ in 0..classes {
            if rng.gen_bool(0.8) {
                means.push(Some(
                    (0..bits).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>(),
                ));
                counts.push(rng.gen_range(1..50));
            } else {
                means.push(None);
                counts.push(0);
            }
        }
        let report = ClassMeanReport::new(means.clone(), counts, bits).unwrap();
        let protos = aggregate_prototypes(std::slice::from_ref(&report), 1).unwrap();
        for (c, mean) in means.iter().enumerate() {
            match mean {
                Some(m) => {
                    let expected = binarize(m);
                    assert_eq!(
                        protos.code(c).unwrap().bits(),
                        expected.bits(),
                        "case {case} class {c}"
                    );
                }
                None => assert!(!protos.is_valid(c), "case {case} class {c}"),
            }
        }
    }
    println!("criterion 04 prototype aggregation: PASS (hand example + 100 single-client cases)");
}

// ---------------------------------------------------------------------------
// Criteria 5-7: the shared benchmark fixture.
// ---------------------------------------------------------------------------

#[test]
fn criterion_05_ablation_ordering_on_default_benchmark() {
    let fx = fixture();
    let full = median(&fx.noniid_finals(Ablation::Full));
    let triplet = median(&fx.noniid_finals(Ablation::TripletOnly));
    let adversarial = median(&fx.noniid_finals(Ablation::AdversarialOnly));
    let none = median(&fx.noniid_finals(Ablation::NoPrototypes));
    const EPS: f64 = 0.01;

    assert!(
        full > triplet,
        "median mAP: full {full:.4} must exceed triplet-only {triplet:.4}"
    );
    assert!(
        triplet >= none - EPS,
        "median mAP: triplet-only {triplet:.4} must reach no-prototypes {none:.4} - {EPS}"
    );
    assert!(
        full > adversarial,
        "median mAP: full {full:.4} must exceed adversarial-only {adversarial:.4}"
    );
    assert!(
        adversarial >= none - EPS,
        "median mAP: adversarial-only {adversarial:.4} must reach no-prototypes {none:.4} - {EPS}"
    );
    assert!(
        full - none >= 0.03,
        "median mAP gap full-vs-no-prototypes {:.4} must be >= 0.03",
        full - none
    );
    assert!(
        fx.noniid_elapsed < Duration::from_secs(600),
        "ablation grid took {:?}",
        fx.noniid_elapsed
    );
    println!(
        "criterion 05 ablation ordering: PASS (full={full:.4} > triplet={triplet:.4}, adv={adversarial:.4} >= none={none:.4}-0.01, gap={:.4}, elapsed={:.1?})",
        full - none,
        fx.noniid_elapsed
    );
}

#[test]
fn criterion_06_prototypes_reduce_noniid_degradation() {
    let fx = fixture();
    let mut deg_full = Vec::new();
    let mut deg_none = Vec::new();
    for &s in &BENCH_SEEDS {
        deg_full.push(
            fx.iid_cell(Ablation::Full, s).final_map - fx.noniid_cell(Ablation::Full, s).final_map,
        );
        deg_none.push(
            fx.iid_cell(Ablation::NoPrototypes, s).final_map
                - fx.noniid_cell(Ablation::NoPrototypes, s).final_map,
        );
    }
    let med_full = median(&deg_full);
    let med_none = median(&deg_none);
    assert!(
        med_full <= med_none,
        "median IID-to-non-IID drop with prototypes {med_full:.4} must not exceed {med_none:.4} without"
    );
    println!(
        "criterion 06 non-IID robustness: PASS (median degradation full={med_full:.4} <= no-prototypes={med_none:.4})"
    );
}

#[test]
fn criterion_07_training_lifts_map_over_round0() {
    let fx = fixture();
    let improvements: Vec<f64> = BENCH_SEEDS
        .iter()
        .map(|&s| {
            let cell = fx.iid_cell(Ablation::Full, s);
            cell.final_map - cell.round0_map
        })
        .collect();
    let med = median(&improvements);
    assert!(
        med >= 0.15,
        "median final-over-round0 improvement {med:.4} must be >= 0.15"
    );
    println!("criterion 07 training progress: PASS (median improvement {med:.4} >= 0.15)");
}

// ---------------------------------------------------------------------------
// Criterion 8: byte-identical rounds.csv for identical config and seed, at
// any --jobs value, through the real CLI binary.
// ---------------------------------------------------------------------------

#[test]
fn criterion_08_rounds_csv_byte_identical_across_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        federation: FederationConfig {
            clients: 6,
            rounds: 6,
            local_epochs: 2,
            code_bits: 16,
            partition: PartitionKind::ShardByClass {
                classes_per_client: 2,
            },
            seed: 3,
            ..FederationConfig::default()
        },
        dataset_csv: None,
        synthetic: Some(SyntheticSpec {
            classes: 4,
            dim: 12,
            per_class: 40,
            sigma: 0.8,
            overlap_p: 0.1,
            seed: 77,
            train_frac: 0.6,
            query_frac: 0.1,
        }),
        eval_every: 2,
        map_topn: None,
        snapshot_every: None,
        out: None,
    };
    let cfg_path = dir.path().join("config.json");
    std::fs::write(&cfg_path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();

    let mut outputs = Vec::new();
    for (name, jobs) in [("j1", "1"), ("j2", "2"), ("j5", "5"), ("j2-again", "2")] {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_fedhap"))
            .args(["run", "--config"])
            .arg(&cfg_path)
            .args(["--jobs", jobs, "--out"])
            .arg(&out)
            .status()
            .expect("spawn fedhap binary");
        assert!(status.success(), "run --jobs {jobs} failed");
        outputs.push(std::fs::read(out.join("rounds.csv")).unwrap());
    }
    assert!(
        outputs.windows(2).all(|w| w[0] == w[1]),
        "rounds.csv differed across --jobs values or repeats"
    );
    println!(
        "criterion 08 determinism: PASS (rounds.csv identical over --jobs 1/2/5 and a repeat, {} bytes)",
        outputs[0].len()
    );
}

// ---------------------------------------------------------------------------
// Criterion 9: the six documented invariant families hold as property tests
// with >= 1000 random cases each.
// ---------------------------------------------------------------------------

fn prop_config() -> PropConfig {
    PropConfig {
        cases: 1000,
        // One-shot acceptance gates have no use for regression files.
        failure_persistence: None,
        ..PropConfig::default()
    }
}

fn code_strategy(bits: usize) -> impl Strategy<Value = HashCode> {
    proptest::collection::vec(any::<bool>(), bits)
        .prop_map(|bools| binarize(&bools.iter().map(|&b| if b { 1.0 } else { -1.0 }).collect::<Vec<f64>>()))
}

fn hamming_axioms_suite() -> Result<(), proptest::test_runner::TestError<(HashCode, HashCode, HashCode)>> {
    let mut runner = TestRunner::new(prop_config());
    runner.run(
        &(8usize..=48).prop_flat_map(|bits| {
            (
                code_strategy(bits),
                code_strategy(bits),
                code_strategy(bits),
            )
        }),
        |(x, y, z)| {
            let dxx = x.hamming(&x).unwrap();
            let dxy = x.hamming(&y).unwrap();
            let dyx = y.hamming(&x).unwrap();
            let dxz = x.hamming(&z).unwrap();
            let dyz = y.hamming(&z).unwrap();
            prop_assert_eq!(dxx, 0);
            prop_assert_eq!(dxy, dyx);
            prop_assert!(dxz <= dxy + dyz, "triangle inequality");
            prop_assert!((dxy as usize) <= x.len());
            if dxy == 0 {
                prop_assert_eq!(x.bits(), y.bits());
            }
            Ok(())
        },
    )
}

type PartitionCase = (usize, usize, u64);

fn partition_axioms_suite() -> Result<(), proptest::test_runner::TestError<PartitionCase>> {
    let mut runner = TestRunner::new(prop_config());
    runner.run(
        &(1usize..=12).prop_flat_map(|m| (m..=400usize, Just(m), any::<u64>())),
        |(n, m, seed)| {
            let indices: Vec<usize> = (0..n).collect();
            let parts = fedhap::federation::partition_iid(&indices, m, seed).unwrap();
            prop_assert_eq!(parts.len(), m);
            let mut seen = vec![false; n];
            let mut sizes = Vec::new();
            for part in &parts {
                prop_assert!(!part.is_empty());
                sizes.push(part.len());
                for &i in part {
                    prop_assert!(!seen[i], "index {} assigned twice", i);
                    seen[i] = true;
                }
            }
            prop_assert!(seen.iter().all(|&s| s), "partition must cover all indices");
            let max = *sizes.iter().max().unwrap();
            let min = *sizes.iter().min().unwrap();
            prop_assert!(max - min <= 1, "IID partition must be even");
            // Same seed reproduces the identical partition.
            let again = fedhap::federation::partition_iid(&indices, m, seed).unwrap();
            prop_assert_eq!(parts, again);
            Ok(())
        },
    )
}

type ShardCase = (u64, usize, usize, usize);

fn shard_partition_axioms_suite() -> Result<(), proptest::test_runner::TestError<ShardCase>> {
    let mut runner = TestRunner::new(prop_config());
    runner.run(
        &(2usize..=4).prop_flat_map(|classes| {
            (
                any::<u64>(),
                Just(classes),
                1usize..=classes,
                1usize..=4usize,
            )
        }),
        |(seed, classes, k, m)| {
            let spec = SyntheticSpec {
                classes,
                dim: 4,
                per_class: 12,
                sigma: 0.5,
                overlap_p: 0.1,
                seed,
                train_frac: 0.6,
                query_frac: 0.1,
            };
            let dataset = generate_synthetic(&spec).unwrap();
            let indices: Vec<usize> = (0..dataset.len())
                .filter(|&i| dataset.split(i) == Split::Train)
                .collect();
            let parts =
                fedhap::federation::partition_shard_noniid(&dataset, &indices, m, k, seed)
                    .unwrap();
            prop_assert_eq!(parts.len(), m);
            let mut seen = HashSet::new();
            for part in &parts {
                prop_assert!(!part.is_empty());
                for &i in part {
                    prop_assert!(seen.insert(i), "index {} assigned twice", i);
                }
            }
            let all: HashSet<usize> = indices.iter().copied().collect();
            prop_assert_eq!(seen, all);
            Ok(())
        },
    )
}

type LossCase = (Vec<Vec<f64>>, Vec<Vec<u8>>, u64);

fn loss_nonnegativity_suite() -> Result<(), proptest::test_runner::TestError<LossCase>> {
    let mut runner = TestRunner::new(prop_config());
    let strategy = (2usize..=8, 2usize..=12, 2usize..=4).prop_flat_map(|(n, bits, classes)| {
        (
            proptest::collection::vec(
                proptest::collection::vec(-2.0f64..2.0, bits),
                n,
            ),
            proptest::collection::vec(
                proptest::collection::vec(0u8..=1, classes),
                n,
            ),
            any::<u64>(),
        )
    });
    runner.run(&strategy, |(batch_b, mut labels, seed)| {
        // Every sample needs at least one label for the mining helpers.
        for l in &mut labels {
            if l.iter().all(|&b| b == 0) {
                l[0] = 1;
            }
        }
        let classes = labels[0].len();
        let bits = batch_b[0].len();
        let label_refs: Vec<&[u8]> = labels.iter().map(|l| l.as_slice()).collect();
        let mut rng = derive_rng(seed, &[9]);
        let w = LossWeights::new(0.05, 0.1, 0.4, DistanceMetric::Euclidean).unwrap();

        let plan = mine_local_triplets(&label_refs, &mut rng);
        let local = triplet_loss_local(&batch_b, &plan, &w).unwrap();
        prop_assert!(local.value.is_finite() && local.value >= 0.0);

        let protos = PrototypeSet::random(classes, bits, &mut rng).unwrap();
        let plan_g = plan_global_triplets(&label_refs, &protos, &mut rng);
        let global =
            fedhap::loss::triplet_loss_global(&batch_b, &plan_g, &protos, &w).unwrap();
        prop_assert!(global.value.is_finite() && global.value >= 0.0);

        let quan = quantization_loss(&batch_b);
        prop_assert!(quan.is_finite() && quan >= 0.0);

        let disc = Discriminator::new(bits, classes, 6, &mut rng).unwrap();
        let hard: Vec<(HashCode, &[u8])> = batch_b
            .iter()
            .zip(&label_refs)
            .map(|(b, l)| (binarize(b), *l))
            .collect();
        let d_loss = fedhap::loss::discriminator_loss(&disc, &hard, &protos).unwrap();
        prop_assert!(d_loss.is_finite() && d_loss >= 0.0);

        for mode in [GeneratorLossMode::Nonsaturating, GeneratorLossMode::Shared] {
            let g_loss =
                fedhap::loss::generator_adversarial_loss(&disc, &batch_b, &label_refs, mode)
                    .unwrap();
            prop_assert!(g_loss.is_finite() && g_loss >= 0.0);
        }
        Ok(())
    })
}

fn binarize_idempotence_suite() -> Result<(), proptest::test_runner::TestError<Vec<f64>>> {
    let mut runner = TestRunner::new(prop_config());
    runner.run(
        &proptest::collection::vec(-3.0f64..3.0, 1..=64),
        |soft| {
            let once = binarize(&soft);
            let twice = binarize(&once.as_f64_vec());
            prop_assert_eq!(once.bits(), twice.bits());
            prop_assert!(once.bits().iter().all(|&b| b == 1 || b == -1));
            Ok(())
        },
    )
}

type ScaleCase = (Vec<Vec<f64>>, Vec<Vec<u8>>, f64, usize, u64);

fn cosine_scale_invariance_suite() -> Result<(), proptest::test_runner::TestError<ScaleCase>> {
    let mut runner = TestRunner::new(prop_config());
    let strategy = (3usize..=8, 2usize..=12).prop_flat_map(|(n, bits)| {
        (
            proptest::collection::vec(
                proptest::collection::vec(0.1f64..2.0, bits).prop_map(|v| {
                    // Random signs while keeping magnitudes away from zero, so
                    // no code comes near the cosine singularity.
                    v.into_iter()
                        .enumerate()
                        .map(|(i, x)| if i % 2 == 0 { x } else { -x })
                        .collect::<Vec<f64>>()
                }),
                n,
            ),
            proptest::collection::vec(proptest::collection::vec(0u8..=1, 3), n),
            0.05f64..20.0,
            0usize..n,
            any::<u64>(),
        )
    });
    runner.run(&strategy, |(mut batch_b, mut labels, alpha, target, seed)| {
        for l in &mut labels {
            if l.iter().all(|&b| b == 0) {
                l[0] = 1;
            }
        }
        let label_refs: Vec<&[u8]> = labels.iter().map(|l| l.as_slice()).collect();
        let mut rng = derive_rng(seed, &[10]);
        let w = LossWeights::new(0.05, 0.1, 0.4, DistanceMetric::Cosine).unwrap();
        let plan = mine_local_triplets(&label_refs, &mut rng);

        let u = &batch_b[target];
        let v = &batch_b[(target + 1) % batch_b.len()];
        let scaled: Vec<f64> = u.iter().map(|x| x * alpha).collect();
        let d_orig = distance(u, v, DistanceMetric::Cosine).unwrap();
        let d_scaled = distance(&scaled, v, DistanceMetric::Cosine).unwrap();
        prop_assert!((d_orig - d_scaled).abs() < 1e-9);

        let before = triplet_loss_local(&batch_b, &plan, &w).unwrap().value;
        for x in batch_b[target].iter_mut() {
            *x *= alpha;
        }
        let after = triplet_loss_local(&batch_b, &plan, &w).unwrap().value;
        prop_assert!(
            (before - after).abs() < 1e-9 * before.abs().max(1.0),
            "cosine triplet loss changed under rescaling: {} -> {}",
            before,
            after
        );
        Ok(())
    })
}

type QuanCase = (Vec<Vec<f64>>, bool);

fn quantization_zero_iff_binary_suite() -> Result<(), proptest::test_runner::TestError<QuanCase>> {
    let mut runner = TestRunner::new(prop_config());
    let strategy = (1usize..=6, 1usize..=12).prop_flat_map(|(n, bits)| {
        (
            proptest::collection::vec(
                proptest::collection::vec(-1.5f64..1.5, bits),
                n,
            ),
            any::<bool>(),
        )
    });
    runner.run(&strategy, |(batch, make_binary)| {
        let batch: Vec<Vec<f64>> = if make_binary {
            batch
                .iter()
                .map(|b| binarize(b).as_f64_vec())
                .collect()
        } else {
            batch
        };
        let loss = quantization_loss(&batch);
        let is_binary = batch
            .iter()
            .all(|b| b.iter().all(|&x| x == 1.0 || x == -1.0));
        if is_binary {
            prop_assert_eq!(loss, 0.0);
        } else {
            prop_assert!(loss > 0.0);
        }
        Ok(())
    })
}

#[test]
fn criterion_09_property_suites_hold() {
    let started = Instant::now();
    hamming_axioms_suite().unwrap();
    partition_axioms_suite().unwrap();
    shard_partition_axioms_suite().unwrap();
    loss_nonnegativity_suite().unwrap();
    binarize_idempotence_suite().unwrap();
    cosine_scale_invariance_suite().unwrap();
    quantization_zero_iff_binary_suite().unwrap();
    let elapsed = started.elapsed();
    assert!(
        elapsed < Duration::from_secs(120),
        "property suites took {elapsed:?}"
    );
    println!(
        "criterion 09 invariant suites: PASS (7 suites x 1000 cases, elapsed={elapsed:.2?})"
    );
}

// ---------------------------------------------------------------------------
// Criterion 10: the distance sweep runs both metrics to completion through
// the CLI, emits the combined CSV, and its cosine run reproduces the
// benchmark fixture's Full seed-1 result exactly.
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_distance_sweep_completes_with_benchmark_level_cosine() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = bench_config(Ablation::Full, 1, false);
    let cfg_path = dir.path().join("config.json");
    std::fs::write(&cfg_path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    let out = dir.path().join("sweep");

    let status = Command::new(env!("CARGO_BIN_EXE_fedhap"))
        .args(["sweep", "--config"])
        .arg(&cfg_path)
        .args(["--axis", "distance", "--values", "cosine,euclidean", "--out"])
        .arg(&out)
        .status()
        .expect("spawn fedhap binary");
    assert!(status.success(), "distance sweep failed");

    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("value,final_map,status"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("cosine,") && rows[0].ends_with(",ok"), "{csv}");
    assert!(rows[1].starts_with("euclidean,") && rows[1].ends_with(",ok"), "{csv}");

    let read_final = |value: &str| -> f64 {
        let metrics: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(out.join(format!("distance-{value}")).join("metrics.json"))
                .unwrap(),
        )
        .unwrap();
        metrics["final_map"].as_f64().unwrap()
    };
    let cosine = read_final("cosine");
    let euclidean = read_final("euclidean");
    assert!(euclidean.is_finite() && (0.0..=1.0).contains(&euclidean));

    // The cosine leg is configured identically to the fixture's Full seed-1
    // run, so determinism makes "benchmark-level" an exact equality.
    let reference = fixture().noniid_cell(Ablation::Full, 1).final_map;
    assert_eq!(
        cosine, reference,
        "sweep cosine run must reproduce the benchmark fixture"
    );
    println!(
        "criterion 10 distance sweep: PASS (cosine={cosine:.4} == benchmark, euclidean={euclidean:.4})"
    );
}
