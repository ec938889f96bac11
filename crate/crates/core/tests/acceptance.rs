//! Acceptance suite: one test per release criterion, each printing a
//! `[acceptance]` verdict line. Criteria 5-7 share one set of paired
//! training runs over five seeds on the planted-ties benchmark.

use std::collections::BTreeSet;
use std::sync::OnceLock;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tieforge_core::corpus::{
    expand_training_units, generate_synthetic, Bag, SentenceInstance, SynthSpec,
};
use tieforge_core::encoder::{bag_attention, embed_sentence, pcnn_encode};
use tieforge_core::eval::{collect_predictions, pr_curve, pr_curve_csv, ties_recovery_report, PredictionRecord};
use tieforge_core::gradcheck::{analytic_gradients, compare_gradients, grad_check, numeric_gradients, FD_STEP};
use tieforge_core::graph::{
    build_cooccurrence, build_exclusion, build_transition, exclusion_penalty, exclusion_penalty_on,
    gcn_forward, gcn_forward_on,
};
use tieforge_core::trainer::{
    checkpoint_bytes, forward_loss, forward_loss_parts, train, ModelParams, TrainConfig,
};
use tieforge_core::{Activation, Tape, Tensor, TiesGraph, VarId};

fn verdict(criterion: usize, name: &str, passed: bool) {
    println!(
        "[acceptance] criterion {criterion} ({name}): {}",
        if passed { "PASS" } else { "FAIL" }
    );
    assert!(passed, "criterion {criterion} ({name}) failed");
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let len: usize = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

// ---------------------------------------------------------------------------
// Criterion 1: gradient integrity
// ---------------------------------------------------------------------------

#[test]
fn criterion_1_gradient_integrity() {
    let start = Instant::now();
    let tolerance = 1e-4;
    let mut all_pass = true;

    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);

        let (m, n, p) = (
            rng.gen_range(1..=5),
            rng.gen_range(1..=5),
            rng.gen_range(1..=5),
        );
        let a = random_tensor(&mut rng, &[m, n]);
        let b = random_tensor(&mut rng, &[n, p]);
        all_pass &= grad_check("matmul", &[a, b], tolerance, |t, ids| t.matmul(ids[0], ids[1]))
            .unwrap()
            .passed;

        let a = random_tensor(&mut rng, &[m, n]);
        let b = random_tensor(&mut rng, &[p, n]);
        all_pass &= grad_check("matmul_nt", &[a, b], tolerance, |t, ids| {
            t.matmul_nt(ids[0], ids[1])
        })
        .unwrap()
        .passed;

        let t_len = rng.gen_range(1..=9);
        let d_in = rng.gen_range(1..=5);
        let d_out = rng.gen_range(1..=4);
        let width = [1usize, 3, 5][rng.gen_range(0..3)];
        let seq = random_tensor(&mut rng, &[t_len, d_in]);
        let filters = random_tensor(&mut rng, &[width, d_in, d_out]);
        let bias = random_tensor(&mut rng, &[d_out]);
        all_pass &= grad_check("conv1d_same", &[seq, filters, bias], tolerance, |t, ids| {
            t.conv1d_same(ids[0], ids[1], ids[2])
        })
        .unwrap()
        .passed;

        let rows = rng.gen_range(3..=9);
        let channels = rng.gen_range(1..=4);
        let split2 = rng.gen_range(1..rows);
        let split1 = rng.gen_range(0..=split2);
        let fm = random_tensor(&mut rng, &[rows, channels]);
        all_pass &= grad_check("piecewise_max_pool", &[fm], tolerance, |t, ids| {
            t.piecewise_max_pool(ids[0], split1, split2)
        })
        .unwrap()
        .passed;

        let k_logits = rng.gen_range(2..=7);
        let gold = rng.gen_range(0..k_logits);
        let mix: Vec<f64> = (0..k_logits).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let logits = random_tensor(&mut rng, &[k_logits]);
        all_pass &= grad_check("softmax_row", std::slice::from_ref(&logits), tolerance, |t, ids| {
            let s = t.softmax_row(ids[0])?;
            let w = t.leaf_from(vec![k_logits], mix.clone())?;
            t.mul(s, w)
        })
        .unwrap()
        .passed;
        all_pass &= grad_check("nll_from_logits", &[logits], tolerance, |t, ids| {
            t.nll_from_logits(ids[0], gold)
        })
        .unwrap()
        .passed;

        let x_shape = [rng.gen_range(1..=5), rng.gen_range(1..=4)];
        let x = random_tensor(&mut rng, &x_shape);
        all_pass &= grad_check("tanh", std::slice::from_ref(&x), tolerance, |t, ids| Ok(t.tanh(ids[0])))
            .unwrap()
            .passed;

        let table_rows = rng.gen_range(3..=8);
        let ids_list: Vec<usize> = (0..rng.gen_range(1..=6))
            .map(|_| rng.gen_range(0..table_rows))
            .collect();
        let table_shape = [table_rows, rng.gen_range(1..=4)];
        let table = random_tensor(&mut rng, &table_shape);
        all_pass &= grad_check("embed_rows", &[table], tolerance, |t, ids| {
            t.embed_rows(ids[0], &ids_list)
        })
        .unwrap()
        .passed;

        let k_rel = rng.gen_range(2..=5);
        let d_rel = rng.gen_range(1..=5);
        let h = random_tensor(&mut rng, &[k_rel, d_rel]);
        let mut mask = vec![0.0; k_rel * k_rel];
        for i in 0..k_rel {
            for j in i..k_rel {
                if i == j || rng.gen_bool(0.5) {
                    mask[i * k_rel + j] = 1.0;
                    mask[j * k_rel + i] = 1.0;
                }
            }
        }
        all_pass &= grad_check("exclusion_penalty", &[h], tolerance, |t, ids| {
            exclusion_penalty_on(t, ids[0], &mask, k_rel)
        })
        .unwrap()
        .passed;
    }

    // full composite model on tiny dims
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let word = random_tensor(&mut rng, &[10, 4]);
    let pos1 = random_tensor(&mut rng, &[11, 2]);
    let pos2 = random_tensor(&mut rng, &[11, 2]);
    let filters = random_tensor(&mut rng, &[3, 8, 2]);
    let fbias = random_tensor(&mut rng, &[2]);
    let h0 = random_tensor(&mut rng, &[3, 6]);
    let w0 = random_tensor(&mut rng, &[6, 6]);
    let w1 = random_tensor(&mut rng, &[6, 6]);
    let cbias = random_tensor(&mut rng, &[3]);
    let transition = vec![1.0, 0.6, 0.0, 0.0, 1.0, 0.4, 0.3, 0.0, 1.0];
    let exclusion = vec![1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0];
    let insts = [sentence(vec![3, 1, 7, 2, 4], 1, 3),
        sentence(vec![5, 0, 9], 0, 2)];
    let build = |t: &mut Tape, ids: &[VarId]| {
        let h = gcn_forward_on(t, &transition, 3, ids[5], &[ids[6], ids[7]], Activation::Tanh)?;
        let bias_row = t.reshape(ids[8], vec![1, 3])?;
        let reps = insts
            .iter()
            .map(|inst| {
                let emb = embed_sentence(t, ids[0], ids[1], ids[2], inst)?;
                pcnn_encode(t, emb, ids[3], ids[4], inst.head_pos, inst.tail_pos)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let query = t.row(h, 1)?;
        let (bag_rep, _) = bag_attention(t, &reps, query)?;
        let raw = t.matmul_nt(bag_rep, h)?;
        let logits = t.add(raw, bias_row)?;
        let nll = t.nll_from_logits(logits, 1)?;
        let omega = exclusion_penalty_on(t, h, &exclusion, 3)?;
        let weighted = t.scale(omega, 0.25);
        t.add(nll, weighted)
    };
    let inputs = vec![word, pos1, pos2, filters, fbias, h0, w0, w1, cbias];
    let analytic = analytic_gradients(&inputs, &build).unwrap();
    let numeric = numeric_gradients(&inputs, &build, FD_STEP).unwrap();
    let report = compare_gradients("composite_model", &analytic, &numeric, tolerance);
    all_pass &= report.passed;

    let elapsed = start.elapsed();
    all_pass &= elapsed.as_secs() < 60;
    println!("[acceptance] criterion 1 runtime: {elapsed:?}");
    verdict(1, "gradient integrity", all_pass);
}

fn sentence(token_ids: Vec<usize>, head_pos: usize, tail_pos: usize) -> SentenceInstance {
    let (pos1_ids, pos2_ids) =
        tieforge_core::corpus::encode_positions(token_ids.len(), head_pos, tail_pos, 5);
    SentenceInstance {
        token_ids,
        head_pos,
        tail_pos,
        pos1_ids,
        pos2_ids,
    }
}

// ---------------------------------------------------------------------------
// Criterion 2: graph-construction oracle
// ---------------------------------------------------------------------------

fn reference_counts(label_sets: &[BTreeSet<usize>], k: usize) -> (Vec<u64>, Vec<u64>) {
    let mut m = vec![0u64; k * k];
    let mut n = vec![0u64; k];
    for labels in label_sets {
        for i in 0..k {
            if labels.contains(&i) {
                n[i] += 1;
            }
            for j in 0..k {
                if labels.contains(&i) && labels.contains(&j) {
                    m[i * k + j] += 1;
                }
            }
        }
    }
    (m, n)
}

fn reference_transition(m: &[u64], n: &[u64], k: usize, theta: f64) -> Vec<f64> {
    let mut p = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            if i == j {
                p[i * k + j] = 1.0;
            } else if n[i] > 0 {
                let prob = m[i * k + j] as f64 / n[i] as f64;
                p[i * k + j] = if prob < theta { 0.0 } else { prob };
            }
        }
    }
    p
}

fn reference_exclusion(m: &[u64], k: usize) -> Vec<f64> {
    (0..k * k)
        .map(|idx| {
            let (i, j) = (idx / k, idx % k);
            if i == j || m[idx] == 0 {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

#[test]
fn criterion_2_graph_construction_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut all_pass = true;
    for _ in 0..100 {
        let k = rng.gen_range(2..=8);
        let pair_count = rng.gen_range(1..=50);
        let mut label_sets = Vec::new();
        let mut bags = Vec::new();
        for p in 0..pair_count {
            let mut labels = BTreeSet::new();
            let size = rng.gen_range(1..=k.min(4));
            while labels.len() < size {
                labels.insert(rng.gen_range(0..k));
            }
            bags.push(Bag {
                bag_id: format!("h{p}|t{p}"),
                head: format!("h{p}"),
                tail: format!("t{p}"),
                sentences: Vec::new(),
                labels: labels.clone(),
            });
            label_sets.push(labels);
        }
        let theta = rng.gen_range(0.0..0.9);
        let (m, n) = build_cooccurrence(&bags, k);
        let p_hat = build_transition(&m, &n, k, theta).unwrap();
        let u = build_exclusion(&m, k);
        let (rm, rn) = reference_counts(&label_sets, k);
        all_pass &= m == rm && n == rn;
        all_pass &= p_hat == reference_transition(&rm, &rn, k, theta);
        all_pass &= u == reference_exclusion(&rm, k);
    }
    let elapsed = start.elapsed();
    all_pass &= elapsed.as_secs() < 10;
    println!("[acceptance] criterion 2 runtime: {elapsed:?}");
    verdict(2, "graph-construction oracle", all_pass);
}

// ---------------------------------------------------------------------------
// Criterion 3: equation fidelity
// ---------------------------------------------------------------------------

#[test]
fn criterion_3_equation_fidelity() {
    let mut all_pass = true;
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    // (a) penalty * (k*k*d) equals the raw masked sum
    for _ in 0..25 {
        let k = rng.gen_range(2..=6);
        let d = rng.gen_range(1..=8);
        let h = random_tensor(&mut rng, &[k, d]);
        let mut graph = TiesGraph::identity(k);
        for i in 0..k {
            for j in (i + 1)..k {
                if rng.gen_bool(0.5) {
                    graph.exclusion[i * k + j] = 1.0;
                    graph.exclusion[j * k + i] = 1.0;
                }
            }
        }
        let omega = exclusion_penalty(&h, &graph).unwrap();
        let mut raw = 0.0;
        for i in 0..k {
            for j in 0..k {
                if graph.exclusion[i * k + j] == 1.0 {
                    raw += h.row(i).iter().zip(h.row(j)).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
        all_pass &= (omega * (k * k * d) as f64 - raw).abs() < 1e-9;
    }

    // (b) forward_loss(lambda) - forward_loss(0) == lambda * penalty
    let out = generate_synthetic(&SynthSpec {
        num_bags: 60,
        seed: 31,
        ..SynthSpec::default()
    })
    .unwrap();
    let base = TrainConfig {
        word_dim: 8,
        pos_dim: 2,
        feature_maps: 4,
        ..TrainConfig::default()
    };
    let graph = TiesGraph::build(&out.train, 12, base.theta).unwrap();
    let mut prng = ChaCha8Rng::seed_from_u64(32);
    let params = ModelParams::init(&base, out.vocab.len(), 12, &mut prng);
    let units = expand_training_units(&out.train);
    let batch = &units[..10];
    let with = TrainConfig { lambda: 0.25, ..base.clone() };
    let without = TrainConfig { lambda: 0.0, ..base.clone() };
    let (loss_with, _) = forward_loss(batch, &out.train, &params, &graph, &with).unwrap();
    let (loss_without, _) = forward_loss(batch, &out.train, &params, &graph, &without).unwrap();
    let (_, omega) = forward_loss_parts(batch, &out.train, &params, &graph, &with).unwrap();
    all_pass &= (loss_with - loss_without - 0.25 * omega).abs() < 1e-9;

    // (c) off-diagonal transition entries are exactly zero below theta
    for trial in 0..20 {
        let out = generate_synthetic(&SynthSpec {
            num_bags: 150,
            seed: 100 + trial,
            ..SynthSpec::default()
        })
        .unwrap();
        let graph = TiesGraph::build(&out.train, 12, 0.18).unwrap();
        for i in 0..12 {
            for j in 0..12 {
                if i != j {
                    let p = graph.transition_prob(i, j);
                    all_pass &= p == 0.0 || p >= 0.18;
                }
            }
        }
    }

    verdict(3, "equation fidelity", all_pass);
}

// ---------------------------------------------------------------------------
// Criterion 4: defaults fidelity
// ---------------------------------------------------------------------------

#[test]
fn criterion_4_defaults_fidelity() {
    let c = TrainConfig::default();
    let mut all_pass = c.kernel == 3
        && c.feature_maps == 320
        && c.word_dim == 50
        && c.pos_dim == 5
        && c.learning_rate == 0.19
        && c.theta == 0.18
        && c.lambda == 0.25
        && c.gcn_layers == 2
        && c.rel_dim() == 960;

    // a sentence encoded at the default dimensions is exactly 3 * 320 long
    let params = ModelParams::init_seeded(&c, 40, 12);
    let inst = {
        let (pos1_ids, pos2_ids) =
            tieforge_core::corpus::encode_positions(9, 2, 6, c.max_pos_distance);
        SentenceInstance {
            token_ids: vec![5, 1, 2, 8, 9, 3, 4, 0, 7],
            head_pos: 2,
            tail_pos: 6,
            pos1_ids,
            pos2_ids,
        }
    };
    let mut tape = Tape::new();
    let word = tape.leaf(&params.tables.word);
    let pos1 = tape.leaf(&params.tables.pos1);
    let pos2 = tape.leaf(&params.tables.pos2);
    let filters = tape.leaf(&params.pcnn.filters);
    let bias = tape.leaf(&params.pcnn.bias);
    let embedded = embed_sentence(&mut tape, word, pos1, pos2, &inst).unwrap();
    let rep = pcnn_encode(&mut tape, embedded, filters, bias, 2, 6).unwrap();
    all_pass &= tape.values(rep).len() == 960;

    verdict(4, "defaults fidelity", all_pass);
}

// ---------------------------------------------------------------------------
// Criteria 5-7: paired training runs on the planted benchmark
// ---------------------------------------------------------------------------

struct SeedRun {
    margin_full: f64,
    margin_ablation: f64,
    masked_full: f64,
    masked_no_repulsion: f64,
    auc_full: f64,
    auc_ablation: f64,
    seconds: f64,
}

fn benchmark_config(seed: u64) -> TrainConfig {
    TrainConfig {
        word_dim: 16,
        pos_dim: 4,
        feature_maps: 24,
        epochs: 10,
        batch_size: 50,
        seed,
        ..TrainConfig::default()
    }
}

fn seed_runs() -> &'static [SeedRun] {
    static RUNS: OnceLock<Vec<SeedRun>> = OnceLock::new();
    RUNS.get_or_init(|| {
        (1..=5u64)
            .map(|seed| {
                let start = Instant::now();
                let out = generate_synthetic(&SynthSpec {
                    seed,
                    ..SynthSpec::default()
                })
                .unwrap();
                let base = benchmark_config(seed);
                let full_cfg = TrainConfig { lambda: 0.25, graph_enabled: true, ..base.clone() };
                let norep_cfg = TrainConfig { lambda: 0.0, graph_enabled: true, ..base.clone() };
                let abl_cfg = TrainConfig { graph_enabled: false, ..base };

                let graph = TiesGraph::build(&out.train, 12, full_cfg.theta).unwrap();
                let full = train(&out.train, out.vocab.len(), &graph, &full_cfg).unwrap();
                let norep = train(&out.train, out.vocab.len(), &graph, &norep_cfg).unwrap();
                let ablation = train(&out.train, out.vocab.len(), &graph, &abl_cfg).unwrap();

                let h_full = gcn_forward(&graph, &full.params.gcn, full_cfg.activation).unwrap();
                let h_norep = gcn_forward(&graph, &norep.params.gcn, norep_cfg.activation).unwrap();
                let identity_graph = graph.clone().with_identity_transition();
                let h_abl =
                    gcn_forward(&identity_graph, &ablation.params.gcn, abl_cfg.activation).unwrap();

                let report_full = ties_recovery_report(&h_full, &out.ties, &graph);
                let report_norep = ties_recovery_report(&h_norep, &out.ties, &graph);
                let report_abl = ties_recovery_report(&h_abl, &out.ties, &graph);

                let auc_full = pr_curve(
                    &collect_predictions(&out.test, &full.params, &graph, &full_cfg).unwrap(),
                )
                .unwrap()
                .auc;
                let auc_ablation = pr_curve(
                    &collect_predictions(&out.test, &ablation.params, &graph, &abl_cfg).unwrap(),
                )
                .unwrap()
                .auc;

                SeedRun {
                    margin_full: report_full.margin,
                    margin_ablation: report_abl.margin,
                    masked_full: report_full.masked_mean_cosine,
                    masked_no_repulsion: report_norep.masked_mean_cosine,
                    auc_full,
                    auc_ablation,
                    seconds: start.elapsed().as_secs_f64(),
                }
            })
            .collect()
    })
}

#[test]
fn criterion_5_ties_recovery() {
    let runs = seed_runs();
    let wins = runs
        .iter()
        .filter(|r| r.margin_full > r.margin_ablation)
        .count();
    let positive = runs.iter().filter(|r| r.margin_full > 0.0).count();
    let within_budget = runs.iter().all(|r| r.seconds < 600.0);
    for (i, r) in runs.iter().enumerate() {
        println!(
            "[acceptance]   seed {}: margin full={:.4} ablation={:.4} ({:.1}s)",
            i + 1,
            r.margin_full,
            r.margin_ablation,
            r.seconds
        );
    }
    verdict(
        5,
        "ties recovery margin",
        wins >= 4 && positive == 5 && within_budget,
    );
}

#[test]
fn criterion_6_repulsion_direction() {
    let runs = seed_runs();
    let wins = runs
        .iter()
        .filter(|r| r.masked_full <= r.masked_no_repulsion)
        .count();
    for (i, r) in runs.iter().enumerate() {
        println!(
            "[acceptance]   seed {}: masked cosine lambda=0.25 {:.4} vs lambda=0 {:.4}",
            i + 1,
            r.masked_full,
            r.masked_no_repulsion
        );
    }
    verdict(6, "repulsion direction", wins >= 4);
}

#[test]
fn criterion_7_extraction_quality() {
    let runs = seed_runs();
    let wins = runs
        .iter()
        .filter(|r| r.auc_full >= r.auc_ablation)
        .count();
    for (i, r) in runs.iter().enumerate() {
        println!(
            "[acceptance]   seed {}: auc full={:.4} ablation={:.4}",
            i + 1,
            r.auc_full,
            r.auc_ablation
        );
    }
    verdict(7, "extraction quality", wins >= 4);
}

// ---------------------------------------------------------------------------
// Criterion 8: evaluation oracle
// ---------------------------------------------------------------------------

#[test]
fn criterion_8_evaluation_oracle() {
    let mut all_pass = true;

    // hand example
    let hand = vec![
        PredictionRecord { bag_id: "a".into(), relation: 1, score: 0.9, is_correct: true },
        PredictionRecord { bag_id: "b".into(), relation: 1, score: 0.8, is_correct: false },
        PredictionRecord { bag_id: "c".into(), relation: 1, score: 0.7, is_correct: true },
    ];
    let curve = pr_curve(&hand).unwrap();
    let expect = [(1.0, 0.5), (0.5, 0.5), (0.667, 1.0)];
    for ((p, r), (ep, er)) in curve.points.iter().zip(expect) {
        all_pass &= (p - ep).abs() < 1e-3 && (r - er).abs() < 1e-9;
    }

    // brute-force reference on 1000 random records
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let records: Vec<PredictionRecord> = (0..1000)
        .map(|i| PredictionRecord {
            bag_id: format!("bag{:04}", i % 173),
            relation: 1 + (i % 9),
            score: (rng.gen_range(0..500) as f64) / 500.0,
            is_correct: rng.gen_bool(0.35),
        })
        .collect();
    let fast = pr_curve(&records).unwrap();

    let mut sorted: Vec<&PredictionRecord> = records.iter().collect();
    sorted.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then_with(|| a.bag_id.cmp(&b.bag_id))
            .then_with(|| a.relation.cmp(&b.relation))
    });
    let total_gold = records.iter().filter(|r| r.is_correct).count();
    for n in 1..=sorted.len() {
        let correct = sorted[..n].iter().filter(|r| r.is_correct).count();
        let point = (
            correct as f64 / n as f64,
            correct as f64 / total_gold as f64,
        );
        all_pass &= fast.points[n - 1] == point;
        all_pass &= fast.thresholds[n - 1] == sorted[n - 1].score;
    }

    verdict(8, "evaluation oracle", all_pass);
}

// ---------------------------------------------------------------------------
// Criterion 9: determinism
// ---------------------------------------------------------------------------

#[test]
fn criterion_9_determinism() {
    let out = generate_synthetic(&SynthSpec {
        num_bags: 120,
        seed: 9,
        ..SynthSpec::default()
    })
    .unwrap();
    let config = TrainConfig {
        word_dim: 8,
        pos_dim: 2,
        feature_maps: 4,
        epochs: 2,
        seed: 9,
        ..TrainConfig::default()
    };
    let graph = TiesGraph::build(&out.train, 12, config.theta).unwrap();

    let run = || {
        let outcome = train(&out.train, out.vocab.len(), &graph, &config).unwrap();
        let bytes = checkpoint_bytes(&outcome.params, &config);
        let records =
            collect_predictions(&out.test, &outcome.params, &graph, &config).unwrap();
        let csv = pr_curve_csv(&pr_curve(&records).unwrap());
        (bytes, csv)
    };
    let (bytes_a, csv_a) = run();
    let (bytes_b, csv_b) = run();
    verdict(9, "determinism", bytes_a == bytes_b && csv_a == csv_b);
}

// ---------------------------------------------------------------------------
// Criterion 10: robustness fixtures
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_robustness() {
    // k=6 but relation 5 never occurs: an unseen relation with N=0.
    // Bags include single-sentence bags, entities at both sentence
    // boundaries, adjacent entities and multi-label bags.
    let k = 6;
    let mk_bag = |id: usize, labels: &[usize], shapes: &[(usize, usize, usize)]| Bag {
        bag_id: format!("h{id}|t{id}"),
        head: format!("h{id}"),
        tail: format!("t{id}"),
        sentences: shapes
            .iter()
            .map(|&(len, head, tail)| sentence((0..len).map(|t| (t * 7 + id) % 10).collect(), head, tail))
            .collect(),
        labels: labels.iter().copied().collect(),
    };
    let bags = vec![
        mk_bag(0, &[0], &[(5, 0, 4)]),                 // entities at both boundaries
        mk_bag(1, &[1], &[(1, 0, 0)]),                 // one-token sentence
        mk_bag(2, &[1, 2], &[(6, 2, 3), (7, 0, 6)]),   // multi-label
        mk_bag(3, &[3], &[(8, 7, 0)]),                 // reversed entity order
        mk_bag(4, &[2, 4], &[(9, 4, 5)]),
        mk_bag(5, &[4], &[(4, 1, 2), (5, 3, 4), (6, 0, 5)]),
        mk_bag(6, &[1], &[(3, 0, 2)]),
        mk_bag(7, &[3], &[(2, 0, 1), (2, 1, 0)]),
    ];
    let config = TrainConfig {
        word_dim: 4,
        pos_dim: 2,
        max_pos_distance: 5,
        feature_maps: 3,
        epochs: 2,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let graph = TiesGraph::build(&bags, k, config.theta).unwrap();
    let all_pass = (|| -> Result<bool, Box<dyn std::error::Error>> {
        if graph.occurrence_count(5) != 0 {
            return Ok(false);
        }
        if graph.transition_prob(5, 5) != 1.0 {
            return Ok(false);
        }
        let outcome = train(&bags, 10, &graph, &config)?;
        let records = collect_predictions(&bags, &outcome.params, &graph, &config)?;
        if records.len() != bags.len() * (k - 1) {
            return Ok(false);
        }
        let curve = pr_curve(&records)?;
        Ok(curve.points.iter().all(|&(p, r)| (0.0..=1.0).contains(&p) && (0.0..=1.0).contains(&r))
            && outcome.params.all_finite())
    })()
    .unwrap_or(false);
    verdict(10, "robustness fixtures", all_pass);
}
