//! End-to-end acceptance checks. Each test prints one pass/fail line so a
//! full run doubles as a conformance report.

use std::collections::BTreeSet;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use causalsum::config::RunConfig;
use causalsum::eval::{f1, select_summary, SegmentScores, SummarySelection};
use causalsum::extractor::{Extractor, ExtractorConfig};
use causalsum::graph::Graph;
use causalsum::model::{CausalModel, Example, ModelConfig};
use causalsum::nn::{Binder, ParamStore};
use causalsum::runner;
use causalsum::synth::{generate_corpus, CorpusMode, SynthConfig};

fn report(n: usize, name: &str, ok: bool) {
    println!("ACCEPTANCE {n} {name}: {}", if ok { "pass" } else { "FAIL" });
    assert!(ok, "acceptance criterion {n} ({name}) failed");
}

// ---------------------------------------------------------------- 1 ----

fn fd_check(
    eval_loss: &mut dyn FnMut(&ParamStore) -> f64,
    store: &mut ParamStore,
    group_idx: usize,
    coord: usize,
    analytic: f64,
) -> bool {
    for h in [1e-5, 1e-6, 1e-4] {
        let name = store.groups().nth(group_idx).unwrap().name.clone();
        let id = store.find(&name).unwrap();
        let orig = store.get(id).data[coord];
        store.get_mut(id).data[coord] = orig + h;
        let up = eval_loss(store);
        store.get_mut(id).data[coord] = orig - h;
        let down = eval_loss(store);
        store.get_mut(id).data[coord] = orig;
        let fd = (up - down) / (2.0 * h);
        let diff = (analytic - fd).abs();
        let scale = analytic.abs().max(fd.abs());
        if diff < 1e-7 || diff / scale < 1e-4 {
            return true;
        }
    }
    false
}

fn model_loss(model: &CausalModel, batch: &[Example], eps: &[Vec<f64>]) -> f64 {
    let (_, _, _, b) = model.causal_loss(batch, eps).unwrap();
    b.total
}

#[test]
fn criterion_1_gradient_correctness() {
    let start = Instant::now();
    per_op_gradients();

    let cfg = ModelConfig {
        d_x: 4,
        d_z: 2,
        k_classes: 3,
        hidden: 5,
        multimodal: true,
        extractor: ExtractorConfig {
            vocab_size: 10,
            d_m: 4,
            d_attn: 4,
            d_v: 4,
            d_x: 4,
            max_len: 8,
            kappa: None,
            single_stage: false,
        },
        ..ModelConfig::default()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let mut all_ok = true;
    for draw in 0..100u64 {
        let mut model = CausalModel::new(cfg.clone(), draw);
        let batch = vec![Example {
            video_id: 0,
            frame_index: 0,
            features: (0..4).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
            query: vec![
                rng.random_range(0..10),
                rng.random_range(0..10),
                rng.random_range(0..10),
            ],
            t: u8::from(rng.random::<bool>()),
            y: rng.random_range(0..3),
        }];
        let eps = vec![(0..2).map(|_| rng.sample::<f64, _>(StandardNormal)).collect::<Vec<f64>>()];

        let (mut g, binder, loss, _) = model.causal_loss(&batch, &eps).unwrap();
        g.backward(loss).unwrap();
        let grads = binder.collect_grads(&g);
        let n_groups = model.store.len();

        for _ in 0..3 {
            let gi = rng.random_range(0..n_groups);
            let group_len = model.store.groups().nth(gi).unwrap().data.len();
            let ci = rng.random_range(0..group_len);
            let analytic = grads[gi].as_ref().map(|v| v[ci]).unwrap_or(0.0);
            let batch2 = batch.clone();
            let eps2 = eps.clone();
            let cfg2 = cfg.clone();
            let mut eval_loss = |store: &ParamStore| {
                let mut m = CausalModel::new(cfg2.clone(), 0);
                m.store = store.clone();
                model_loss(&m, &batch2, &eps2)
            };
            if !fd_check(&mut eval_loss, &mut model.store, gi, ci, analytic) {
                eprintln!("fd mismatch: draw {draw}, group {gi}, coord {ci}");
                all_ok = false;
            }
        }
    }

    let elapsed = start.elapsed().as_secs_f64();
    report(1, "gradient-correctness", all_ok && elapsed < 120.0);
}

/// Finite-difference check for every differentiable op over random inputs.
fn per_op_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    type BuildFn = Box<dyn Fn(&mut Graph, Vec<causalsum::graph::TensorId>) -> causalsum::graph::TensorId>;
    // each case: input shapes, positive-only flag, op builder -> scalar
    let cases: Vec<(&str, Vec<Vec<usize>>, bool, BuildFn)> = vec![
        ("matmul", vec![vec![2, 3], vec![3, 2]], false, Box::new(|g, v| {
            let m = g.matmul(v[0], v[1]).unwrap();
            g.sum(m)
        })),
        ("matvec", vec![vec![3, 4], vec![4]], false, Box::new(|g, v| {
            let m = g.matvec(v[0], v[1]).unwrap();
            g.sum(m)
        })),
        ("add", vec![vec![5], vec![5]], false, Box::new(|g, v| {
            let m = g.add(v[0], v[1]).unwrap();
            let sq = g.mul(m, m).unwrap();
            g.sum(sq)
        })),
        ("sub", vec![vec![5], vec![5]], false, Box::new(|g, v| {
            let m = g.sub(v[0], v[1]).unwrap();
            let sq = g.mul(m, m).unwrap();
            g.sum(sq)
        })),
        ("mul", vec![vec![4], vec![4]], false, Box::new(|g, v| {
            let m = g.mul(v[0], v[1]).unwrap();
            g.sum(m)
        })),
        ("scale_addscalar_neg", vec![vec![4]], false, Box::new(|g, v| {
            let a = g.scale(v[0], 1.7);
            let b = g.add_scalar(a, 0.3);
            let c = g.neg(b);
            let sq = g.mul(c, c).unwrap();
            g.sum(sq)
        })),
        ("sigmoid", vec![vec![6]], false, Box::new(|g, v| {
            let s = g.sigmoid(v[0]);
            g.sum(s)
        })),
        ("relu", vec![vec![6]], false, Box::new(|g, v| {
            let s = g.relu(v[0]);
            let sq = g.mul(s, s).unwrap();
            g.sum(sq)
        })),
        ("exp", vec![vec![4]], false, Box::new(|g, v| {
            let s = g.exp(v[0]);
            g.sum(s)
        })),
        ("ln", vec![vec![4]], true, Box::new(|g, v| {
            let s = g.ln(v[0]).unwrap();
            g.sum(s)
        })),
        ("sqrt", vec![vec![4]], true, Box::new(|g, v| {
            let s = g.sqrt(v[0]).unwrap();
            g.sum(s)
        })),
        ("softplus", vec![vec![6]], false, Box::new(|g, v| {
            let s = g.softplus(v[0]);
            g.sum(s)
        })),
        ("softmax_rows", vec![vec![2, 4]], false, Box::new(|g, v| {
            let s = g.softmax_rows(v[0]).unwrap();
            let sq = g.mul(s, s).unwrap();
            g.sum(sq)
        })),
        ("logsumexp", vec![vec![5]], false, Box::new(|g, v| {
            g.logsumexp(v[0]).unwrap()
        })),
        ("mean_axis0", vec![vec![3, 4]], false, Box::new(|g, v| {
            let s = g.mean_axis0(v[0]).unwrap();
            let sq = g.mul(s, s).unwrap();
            g.sum(sq)
        })),
        ("concat_index", vec![vec![3], vec![2]], false, Box::new(|g, v| {
            let c = g.concat(v[0], v[1]).unwrap();
            let i = g.index(c, 3).unwrap();
            let sq = g.mul(c, c).unwrap();
            let s = g.sum(sq);
            g.add(s, i).unwrap()
        })),
        ("gather_transpose_reshape", vec![vec![3, 4]], false, Box::new(|g, v| {
            let t = g.transpose(v[0]).unwrap();
            let r = g.reshape(t, vec![3, 4]).unwrap();
            let p = g.gather_rows(r, vec![2, 0]).unwrap();
            let sq = g.mul(p, p).unwrap();
            g.sum(sq)
        })),
        ("topk_softmax", vec![vec![2, 5]], false, Box::new(|g, v| {
            let m = g.topk_mask(v[0], 3).unwrap();
            let s = g.softmax_rows(m).unwrap();
            let sq = g.mul(s, s).unwrap();
            g.sum(sq)
        })),
        ("layer_norm", vec![vec![5]], false, Box::new(|g, v| {
            let gain = g.constant(vec![1.2; 5], vec![5]).unwrap();
            let bias = g.constant(vec![0.1; 5], vec![5]).unwrap();
            let s = g.layer_norm(v[0], gain, bias, 1e-5).unwrap();
            let sq = g.mul(s, s).unwrap();
            g.sum(sq)
        })),
    ];

    for (name, shapes, positive, build) in &cases {
        for _ in 0..5 {
            let inputs: Vec<Vec<f64>> = shapes
                .iter()
                .map(|s| {
                    (0..s.iter().product::<usize>())
                        .map(|_| {
                            let v: f64 = rng.sample(StandardNormal);
                            if *positive {
                                v.abs() + 0.5
                            } else {
                                v
                            }
                        })
                        .collect()
                })
                .collect();

            let eval = |inputs: &[Vec<f64>]| -> (f64, Option<Vec<Vec<f64>>>) {
                let mut g = Graph::new();
                let ids: Vec<_> = inputs
                    .iter()
                    .zip(shapes.iter())
                    .map(|(d, s)| g.leaf(d.clone(), s.clone(), true).unwrap())
                    .collect();
                let loss = build(&mut g, ids.clone());
                g.backward(loss).unwrap();
                let grads = ids.iter().map(|&id| g.grad(id).unwrap().to_vec()).collect();
                (g.tensor(loss).data[0], Some(grads))
            };
            let (_, grads) = eval(&inputs);
            let grads = grads.unwrap();

            for (ti, shape) in shapes.iter().enumerate() {
                let numel: usize = shape.iter().product();
                for ci in 0..numel {
                    let h = 1e-5;
                    let mut up = inputs.clone();
                    up[ti][ci] += h;
                    let mut down = inputs.clone();
                    down[ti][ci] -= h;
                    let fd = (eval(&up).0 - eval(&down).0) / (2.0 * h);
                    let analytic = grads[ti][ci];
                    let diff = (analytic - fd).abs();
                    let scale = analytic.abs().max(fd.abs());
                    assert!(
                        diff < 1e-7 || diff / scale < 1e-4,
                        "op {name}: input {ti} coord {ci}: analytic {analytic} vs fd {fd}"
                    );
                }
            }
        }
    }
}

// ---------------------------------------------------------------- 2 ----

#[test]
fn criterion_2_objective_fidelity() {
    let cfg = ModelConfig {
        d_x: 4,
        d_z: 2,
        k_classes: 3,
        hidden: 6,
        ..ModelConfig::default()
    };
    let mut model = CausalModel::new(cfg, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let batch: Vec<Example> = (0..4)
        .map(|i| Example {
            video_id: 0,
            frame_index: i,
            features: (0..4).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
            query: vec![],
            t: (i % 2) as u8,
            y: i % 3,
        })
        .collect();

    let n_draws = 10_000;
    let mut diffs = Vec::with_capacity(n_draws);
    for _ in 0..n_draws {
        let eps: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..2).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        model.cfg.analytic_kl = true;
        let analytic = model_loss(&model, &batch, &eps);
        model.cfg.analytic_kl = false;
        let mc = model_loss(&model, &batch, &eps);
        diffs.push(mc - analytic);
    }
    let n = n_draws as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    println!("  kl agreement: mean diff {mean:.6}, se {se:.6}");
    report(2, "objective-fidelity", mean.abs() <= 3.0 * se.max(1e-12));
}

// ---------------------------------------------------------------- 3 ----

#[test]
fn criterion_3_training_progress() {
    // loss decreases on the default-scale corpus for at least 19/20 seeds
    let corpus = generate_corpus(&SynthConfig::default(), 0).unwrap();
    let mut decreased = 0;
    for seed in 0..20u64 {
        let run = RunConfig {
            seed,
            epochs: 2,
            learning_rate: 1e-3,
            d_z: 8,
            hidden: 32,
            ..RunConfig::default()
        };
        let (_, metrics) = runner::train_on_corpus(&corpus, &run, None, seed).unwrap();
        if metrics.last().unwrap().loss.total < metrics.first().unwrap().loss.total {
            decreased += 1;
        }
    }
    println!("  loss decreased for {decreased}/20 seeds");

    // helper intervention accuracy on a linearly separable configuration:
    // salt-and-pepper marks treated frames with extreme coordinates
    let sep_cfg = SynthConfig {
        n_videos: 30,
        frames_min: 30,
        frames_max: 40,
        d_v: 16,
        d_z: 4,
        mode: CorpusMode::Confounded,
        gamma: 4.0,
        ..SynthConfig::default()
    };
    let sep_corpus = generate_corpus(&sep_cfg, 0).unwrap();
    let run = RunConfig {
        seed: 0,
        epochs: 12,
        learning_rate: 1e-3,
        d_z: 4,
        hidden: 32,
        ..RunConfig::default()
    };
    let (_, metrics) = runner::train_on_corpus(&sep_corpus, &run, None, 0).unwrap();
    let acc = metrics.last().unwrap().loss.helper_t_acc;
    println!("  helper intervention accuracy {acc:.3}");

    report(3, "training-progress", decreased >= 19 && acc >= 0.90);
}

// ---------------------------------------------------------------- 4 ----

#[test]
fn criterion_4_causal_recovery() {
    let start = Instant::now();
    let cfg = SynthConfig {
        n_videos: 60,
        frames_min: 40,
        frames_max: 60,
        d_v: 16,
        d_z: 4,
        mode: CorpusMode::Confounded,
        ..SynthConfig::default()
    };
    let corpus = generate_corpus(&cfg, 0).unwrap();
    let oracle = corpus.oracle.unwrap();
    println!("  oracle ate {:.4} (stderr {:.5})", oracle.ate, oracle.stderr);
    assert!(oracle.stderr < 0.005);

    let run = RunConfig {
        seed: 0,
        epochs: 300,
        learning_rate: 1e-3,
        d_z: 4,
        hidden: 32,
        ..RunConfig::default()
    };
    let (model, _) = runner::train_on_corpus(&corpus, &run, None, 0).unwrap();
    let est = runner::estimate_corpus_effect(&model, &corpus, &run, 256, 8).unwrap();
    let err = (est - oracle.ate).abs();
    let elapsed = start.elapsed().as_secs_f64();
    println!("  ate estimate {est:.4}, abs error {err:.4}, {elapsed:.0}s");
    report(4, "causal-recovery", err <= 0.15 && elapsed < 900.0);
}

// ---------------------------------------------------------------- 5 ----

#[test]
fn criterion_5_attention_correctness() {
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let mut ok = true;
    for n in [1usize, 2, 5, 8] {
        let base = ExtractorConfig {
            vocab_size: 20,
            d_m: 6,
            d_attn: 6,
            d_v: 8,
            d_x: 8,
            max_len: 16,
            kappa: None,
            single_stage: false,
        };
        let tokens: Vec<usize> = (0..n).map(|_| rng.random_range(0..20)).collect();

        // kappa = n matches the dense two-stage product
        let mut store = ParamStore::new();
        let ext = Extractor::new(
            &mut store,
            ExtractorConfig { kappa: Some(n), ..base.clone() },
            &mut ChaCha8Rng::seed_from_u64(n as u64),
        );
        let mut g = Graph::new();
        let mut binder = Binder::new(&store);
        let t = ext.embed_query(&mut g, &mut binder, &store, &tokens).unwrap();
        let sparse = ext.causal_attention(&mut g, &mut binder, &store, t).unwrap();
        // dense two-stage product: softmax(scores) applied to attn . V
        let (attn, v_new) = ext.dense_attention(&mut g, &mut binder, &store, t).unwrap();
        let dense = g.matmul(attn, v_new).unwrap();
        let max_diff = g
            .data(sparse)
            .iter()
            .zip(g.data(dense))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        ok &= max_diff < 1e-9;

        // sparse softmax rows: stochastic with support exactly min(kappa, n)
        for kappa in 1..=n + 2 {
            let mut store = ParamStore::new();
            let ext = Extractor::new(
                &mut store,
                ExtractorConfig { kappa: Some(kappa), ..base.clone() },
                &mut ChaCha8Rng::seed_from_u64(77),
            );
            let mut g = Graph::new();
            let mut binder = Binder::new(&store);
            let t = ext.embed_query(&mut g, &mut binder, &store, &tokens).unwrap();
            let scores = {
                let wq = binder.bind(&mut g, &store, ext.w_q).unwrap();
                let wk = binder.bind(&mut g, &store, ext.w_k).unwrap();
                let q = g.matmul(t, wq).unwrap();
                let k = g.matmul(t, wk).unwrap();
                let kt = g.transpose(k).unwrap();
                let s = g.matmul(q, kt).unwrap();
                g.scale(s, 1.0 / (ext.cfg.d_attn as f64).sqrt())
            };
            let masked = g.topk_mask(scores, kappa).unwrap();
            let soft = g.softmax_rows(masked).unwrap();
            let data = g.data(soft);
            for row in 0..n {
                let row_vals = &data[row * n..(row + 1) * n];
                let sum: f64 = row_vals.iter().sum();
                let support = row_vals.iter().filter(|&&v| v > 0.0).count();
                ok &= (sum - 1.0).abs() < 1e-12 && support == kappa.min(n);
            }
        }
    }

    // masked-score perturbation invariance: changing a masked entry's
    // pre-mask score (without reordering the top-k) leaves output exact
    let raw = vec![5.0, 4.0, 1.0, 0.5, 3.0];
    let perturbed = vec![5.0, 4.0, 0.2, -1.0, 3.0];
    let out = |scores: &Vec<f64>| {
        let mut g = Graph::new();
        let s = g.constant(scores.clone(), vec![1, 5]).unwrap();
        let m = g.topk_mask(s, 3).unwrap();
        let soft = g.softmax_rows(m).unwrap();
        g.data(soft).to_vec()
    };
    ok &= out(&raw) == out(&perturbed);

    report(5, "attention-correctness", ok);
}

// ---------------------------------------------------------------- 6 ----

fn brute_force_knapsack(scores: &[f64], costs: &[usize], budget: usize) -> f64 {
    let n = scores.len();
    let mut best = 0.0f64;
    for mask in 0..(1usize << n) {
        let cost: usize = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| costs[i]).sum();
        if cost > budget {
            continue;
        }
        let val: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| scores[i]).sum();
        best = best.max(val);
    }
    best
}

#[test]
fn criterion_6_selection_optimality() {
    let mut rng = ChaCha8Rng::seed_from_u64(600);
    let mut ok = true;
    for _ in 0..1000 {
        let n = rng.random_range(1..=15);
        let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 10.0).collect();
        let costs: Vec<usize> = (0..n).map(|_| rng.random_range(1..=4)).collect();
        let budget = rng.random_range(0..=costs.iter().sum::<usize>() + 2);
        let seg = SegmentScores {
            scores: scores.clone(),
            segment_length_frames: 2,
            frame_counts: costs.clone(),
        };
        let sel = select_summary(&seg, budget);
        let value: f64 = sel
            .selected
            .iter()
            .zip(&scores)
            .filter(|(s, _)| **s)
            .map(|(_, v)| v)
            .sum();
        if value != brute_force_knapsack(&scores, &costs, budget) {
            ok = false;
        }
    }
    report(6, "selection-optimality", ok);
}

// ---------------------------------------------------------------- 7 ----

#[test]
fn criterion_7_f1_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(700);
    let mut ok = true;
    for _ in 0..1000 {
        let n = rng.random_range(1..=12);
        let counts: Vec<usize> = (0..n).map(|_| rng.random_range(1..=3)).collect();
        let pick = |rng: &mut ChaCha8Rng| -> Vec<bool> {
            (0..n).map(|_| rng.random::<bool>()).collect()
        };
        let pa = pick(&mut rng);
        let pb = pick(&mut rng);
        let mk = |sel: &[bool]| SummarySelection {
            selected: sel.to_vec(),
            budget_frames: counts.iter().sum(),
            total_selected_frames: sel
                .iter()
                .zip(&counts)
                .filter(|(s, _)| **s)
                .map(|(_, c)| c)
                .sum(),
        };
        let got = f1(&mk(&pa), &mk(&pb), &counts).unwrap();

        // brute force with explicit frame sets
        let frames = |sel: &[bool]| -> BTreeSet<usize> {
            let mut set = BTreeSet::new();
            let mut start = 0;
            for (s, &c) in sel.iter().zip(&counts) {
                if *s {
                    set.extend(start..start + c);
                }
                start += c;
            }
            set
        };
        let fa = frames(&pa);
        let fb = frames(&pb);
        let want = if fa.is_empty() || fb.is_empty() {
            0.0
        } else {
            let overlap = fa.intersection(&fb).count() as f64;
            let p = overlap / fa.len() as f64;
            let r = overlap / fb.len() as f64;
            if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) }
        };
        if got != want {
            ok = false;
        }
        ok &= (0.0..=1.0).contains(&got);
    }

    // budget never violated across 1e5 random knapsack instances
    for _ in 0..100_000 {
        let n = rng.random_range(1..=10);
        let seg = SegmentScores {
            scores: (0..n).map(|_| rng.random::<f64>() * 5.0 - 1.0).collect(),
            segment_length_frames: 2,
            frame_counts: (0..n).map(|_| rng.random_range(1..=3)).collect(),
        };
        let budget = rng.random_range(0..=2 * n);
        let sel = select_summary(&seg, budget);
        if sel.total_selected_frames > budget {
            ok = false;
        }
    }
    report(7, "f1-oracle", ok);
}

// ---------------------------------------------------------------- 8 ----

#[test]
fn criterion_8_protocol_echo() {
    let corpus = generate_corpus(&SynthConfig::default(), 0).unwrap();
    let run = RunConfig {
        seed: 0,
        epochs: 6,
        learning_rate: 1e-3,
        d_z: 8,
        hidden: 32,
        ..RunConfig::default()
    };
    let (model, _) = runner::train_on_corpus(&corpus, &run, None, 0).unwrap();
    let report_out = runner::evaluate_with_model(&corpus, &model, &run).unwrap();

    let five = report_out.splits.len() == 5;
    let gap = report_out.mean_f1 - report_out.mean_baseline_f1;
    println!(
        "  mean f1 {:.4} vs baseline {:.4} (gap {:.4})",
        report_out.mean_f1, report_out.mean_baseline_f1, gap
    );
    report(8, "protocol-echo", five && gap >= 0.05);
}

// ---------------------------------------------------------------- 9 ----

#[test]
fn criterion_9_determinism() {
    let bin = env!("CARGO_BIN_EXE_causalsum");
    let root = tempfile::tempdir().unwrap();
    let read_dir_bytes = |dir: &std::path::Path| -> Vec<(String, Vec<u8>)> {
        let mut entries: Vec<_> = std::fs::read_dir(dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        entries.sort();
        entries
            .into_iter()
            .map(|p| {
                (
                    p.file_name().unwrap().to_string_lossy().into_owned(),
                    std::fs::read(&p).unwrap(),
                )
            })
            .collect()
    };

    let mut ok = true;
    let mut artifacts: Vec<Vec<(String, Vec<u8>)>> = Vec::new();
    for round in 0..2 {
        let dir = root.path().join(format!("round{round}"));
        std::fs::create_dir(&dir).unwrap();
        let corpus_dir = dir.join("corpus");
        let run = |args: &[&str]| {
            let out = Command::new(bin).args(args).output().unwrap();
            assert!(
                out.status.success(),
                "command {:?} failed: {}",
                args,
                String::from_utf8_lossy(&out.stderr)
            );
            out.stdout
        };
        run(&[
            "synth",
            "--out",
            corpus_dir.to_str().unwrap(),
            "--videos",
            "10",
            "--frames-min",
            "15",
            "--frames-max",
            "20",
            "--seed",
            "3",
            "--mode",
            "confounded",
        ]);
        let ckpt = dir.join("model.ckpt");
        let metrics = dir.join("metrics.csv");
        run(&[
            "train",
            "--corpus",
            corpus_dir.to_str().unwrap(),
            "--out",
            ckpt.to_str().unwrap(),
            "--metrics",
            metrics.to_str().unwrap(),
            "--set",
            "epochs=2",
            "--set",
            "learning_rate=0.001",
            "--set",
            "d_z=4",
            "--set",
            "hidden=16",
        ]);
        let evaldoc = dir.join("eval.txt");
        run(&[
            "eval",
            "--corpus",
            corpus_dir.to_str().unwrap(),
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--ate",
            "--out",
            evaldoc.to_str().unwrap(),
            "--set",
            "splits=2",
            "--set",
            "d_z=4",
            "--set",
            "hidden=16",
        ]);

        let mut files = read_dir_bytes(&corpus_dir);
        files.push(("model.ckpt".into(), std::fs::read(&ckpt).unwrap()));
        files.push(("metrics.csv".into(), std::fs::read(&metrics).unwrap()));
        files.push(("eval.txt".into(), std::fs::read(&evaldoc).unwrap()));
        artifacts.push(files);
    }
    ok &= artifacts[0] == artifacts[1];
    report(9, "determinism", ok);
}

// --------------------------------------------------------------- 10 ----

#[test]
fn criterion_10_intervention_protocol_exactness() {
    let mut ok = true;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xbeef);
        let cfg = SynthConfig {
            n_videos: rng.random_range(4..=14),
            frames_min: 10,
            frames_max: 40,
            d_v: 4,
            d_z: 2,
            ..SynthConfig::default()
        };
        let corpus = generate_corpus(&cfg, seed).unwrap();
        let selected: BTreeSet<u32> = corpus.frame_records.iter().map(|r| r.video_id).collect();
        if selected.len() != (0.5 * cfg.n_videos as f64).round() as usize {
            ok = false;
        }
        for &vid in &selected {
            let n = corpus.videos[vid as usize].frames.len();
            let labeled = corpus.frame_records.iter().filter(|r| r.video_id == vid).count();
            if labeled != (0.3 * n as f64).round() as usize {
                ok = false;
            }
        }
    }
    report(10, "intervention-protocol-exactness", ok);
}
