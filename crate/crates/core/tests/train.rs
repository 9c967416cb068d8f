mod common;

use proptest::prelude::*;

use ctglab_core::train::*;
use ctglab_core::autodiff::{finite_diff_check, FD_STEP};
use ctglab_core::corpus::Document;
use ctglab_core::model::ModelConfig;
use ctglab_core::tensor::Tensor;
use common::{random_ids, random_tensor};
use ctglab_core::autodiff::Tape;
use ctglab_core::corpus::{Corpus, Split};
use ctglab_core::model::TransformerLM;
use ctglab_core::{Error, Execution, Result};

fn eval(f: impl FnOnce(&mut Tape) -> Result<ctglab_core::autodiff::Var>) -> f64 {
    let mut tape = Tape::new();
    let v = f(&mut tape).unwrap();
    tape.value(v).item()
}

/// Rows clustered around a common direction so that high-similarity hinge
/// terms are active.
fn clustered(t: usize, d: usize, spread: f64, seed: u64) -> Tensor {
    let base = random_tensor(&[d], seed ^ 0xabc);
    let noise = random_tensor(&[t, d], seed);
    let data = noise
        .data()
        .iter()
        .enumerate()
        .map(|(i, n)| base.data()[i % d] + spread * n)
        .collect();
    Tensor::new(&[t, d], data).unwrap()
}

#[test]
fn cosine_examples() {
    assert_eq!(cosine_similarity(&[1.0, 0.0], &[1.0, 0.0]), 1.0);
    assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
    assert!((cosine_similarity(&[3.0, 4.0], &[4.0, 3.0]) - 0.96).abs() < 1e-15);
    assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 2.0]), 0.0);
}

#[test]
fn mle_examples() {
    let onehot = Tensor::from_rows(&[vec![0.0, 900.0, 0.0], vec![900.0, 0.0, 0.0]]).unwrap();
    let loss = eval(|t| {
        let l = t.constant(onehot.clone());
        mle_loss(t, l, &[1, 0])
    });
    assert!(loss.abs() < 1e-12);
    let uniform = Tensor::zeros(&[5, 4]);
    let loss = eval(|t| {
        let l = t.constant(uniform.clone());
        mle_loss(t, l, &[0, 1, 2, 3, 0])
    });
    assert!((loss - 4f64.ln()).abs() < 1e-12);
    for seed in 0..10 {
        let logits = random_tensor(&[6, 9], seed);
        let targets = random_ids(6, 9, seed);
        let a = eval(|t| {
            let l = t.constant(logits.clone());
            mle_loss(t, l, &targets)
        });
        let b = eval(|t| {
            let l = t.constant(logits.clone());
            t.cross_entropy(l, &targets)
        });
        assert_eq!(a.to_bits(), b.to_bits());
    }
    let mut tape = Tape::new();
    let l = tape.constant(uniform);
    assert!(mle_loss(&mut tape, l, &[0, 1]).is_err());
}

#[test]
fn contrastive_examples() {
    let ortho = Tensor::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
    let loss = |h: &Tensor, rho: f64| {
        eval(|t| {
            let v = t.constant(h.clone());
            contrastive_loss(t, v, rho)
        })
    };
    assert_eq!(loss(&ortho, 0.5), 0.0);
    let same = Tensor::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
    assert!((loss(&same, 0.5) - 0.5).abs() < 1e-12);
    for seed in 0..10 {
        assert_eq!(loss(&random_tensor(&[7, 4], seed), 0.0), 0.0);
    }
    assert_eq!(loss(&Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap(), 0.5), 0.0);
    let mut tape = Tape::new();
    let v = tape.constant(same);
    assert!(matches!(contrastive_loss(&mut tape, v, 1.5), Err(Error::Config(_))));
}

#[test]
fn contrastive_matches_loop_oracle() {
    for seed in 0..20 {
        let h = clustered(9, 5, 0.6, seed);
        let rows: Vec<&[f64]> = h.row_iter().collect();
        for rho in [-0.5, 0.1, 0.5, 1.0] {
            let taped = eval(|t| {
                let v = t.constant(h.clone());
                contrastive_loss(t, v, rho)
            });
            assert!((taped - contrastive_loss_value(&rows, rho)).abs() < 1e-12);
        }
    }
}

#[test]
fn simctg_examples() {
    for seed in 0..20 {
        let logits = random_tensor(&[6, 7], seed);
        let hidden = clustered(6, 4, 0.3, seed);
        let targets = random_ids(6, 7, seed + 1);
        let simctg = |rho: f64| {
            eval(|t| {
                let l = t.constant(logits.clone());
                let h = t.constant(hidden.clone());
                simctg_loss(t, l, &targets, h, rho)
            })
        };
        let mle = eval(|t| {
            let l = t.constant(logits.clone());
            mle_loss(t, l, &targets)
        });
        assert_eq!(simctg(0.0).to_bits(), mle.to_bits());
        let rows: Vec<&[f64]> = hidden.row_iter().collect();
        assert!((simctg(0.5) - (mle + contrastive_loss_value(&rows, 0.5))).abs() < 1e-12);
    }
    let ortho = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let logits = random_tensor(&[2, 3], 1);
    let a = eval(|t| {
        let l = t.constant(logits.clone());
        let h = t.constant(ortho.clone());
        simctg_loss(t, l, &[0, 1], h, 0.5)
    });
    let b = eval(|t| {
        let l = t.constant(logits.clone());
        mle_loss(t, l, &[0, 1])
    });
    assert_eq!(a, b);
}

#[test]
fn unlikelihood_examples() {
    // T=2, targets [a, b]: step 2 negatives {a} with p(a) = 0.5.
    let logits = Tensor::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
    let loss = eval(|t| {
        let l = t.constant(logits.clone());
        unlikelihood_token_loss(t, l, &[0, 1])
    });
    assert!((loss - 0.5f64.ln().abs() / 2.0).abs() < 1e-12);
    assert!((loss - 0.3466).abs() < 1e-4);
    // First step alone contributes nothing.
    let one = Tensor::from_rows(&[vec![0.3, -1.0, 2.0]]).unwrap();
    let loss = eval(|t| {
        let l = t.constant(one.clone());
        unlikelihood_token_loss(t, l, &[2])
    });
    assert_eq!(loss, 0.0);
    // Context tokens with near-zero probability.
    let confident = Tensor::from_rows(&[vec![-50.0, 0.0, 50.0], vec![-50.0, -50.0, 50.0], vec![-50.0, -50.0, 50.0]]).unwrap();
    let loss = eval(|t| {
        let l = t.constant(confident.clone());
        unlikelihood_token_loss(t, l, &[0, 1, 2])
    });
    assert!(loss < 1e-20);
}

fn gradient_cases() -> Vec<(String, Box<dyn Fn(u64) -> f64>)> {
    let mut cases: Vec<(String, Box<dyn Fn(u64) -> f64>)> = Vec::new();
    cases.push((
        "mle".into(),
        Box::new(|seed| {
            let targets = random_ids(5, 6, seed);
            finite_diff_check(|t, x| mle_loss(t, x, &targets), &random_tensor(&[5, 6], seed), FD_STEP).unwrap()
        }),
    ));
    for rho in [0.1, 0.5, 1.0] {
        cases.push((
            format!("contrastive rho={rho}"),
            Box::new(move |seed| {
                let h = clustered(6, 5, 0.35, seed);
                finite_diff_check(|t, x| contrastive_loss(t, x, rho), &h, FD_STEP).unwrap()
            }),
        ));
    }
    cases.push((
        "simctg logits".into(),
        Box::new(|seed| {
            let targets = random_ids(5, 6, seed);
            let hidden = clustered(5, 4, 0.35, seed);
            finite_diff_check(
                |t, x| {
                    let h = t.constant(hidden.clone());
                    simctg_loss(t, x, &targets, h, 0.5)
                },
                &random_tensor(&[5, 6], seed),
                FD_STEP,
            )
            .unwrap()
        }),
    ));
    cases.push((
        "simctg hidden".into(),
        Box::new(|seed| {
            let targets = random_ids(5, 6, seed);
            let logits = random_tensor(&[5, 6], seed);
            finite_diff_check(
                |t, x| {
                    let l = t.constant(logits.clone());
                    simctg_loss(t, l, &targets, x, 0.5)
                },
                &clustered(5, 4, 0.35, seed),
                FD_STEP,
            )
            .unwrap()
        }),
    ));
    cases.push((
        "unlikelihood".into(),
        Box::new(|seed| {
            let targets = random_ids(7, 4, seed);
            finite_diff_check(|t, x| unlikelihood_token_loss(t, x, &targets), &random_tensor(&[7, 4], seed), FD_STEP)
                .unwrap()
        }),
    ));
    cases
}

#[test]
fn objective_gradients_pass_finite_differences() {
    for (name, check) in gradient_cases() {
        for seed in 0..10 {
            let err = check(seed);
            assert!(err < 1e-4, "{name} seed {seed}: {err}");
        }
    }
}

fn tiny_model(seed: u64) -> TransformerLM {
    TransformerLM::new(ModelConfig {
        vocab_size: 11,
        n_layers: 2,
        n_heads: 2,
        d_model: 8,
        d_ff: 16,
        max_seq_len: 8,
        seed,
        ..ModelConfig::default()
    })
    .unwrap()
}

/// Perturbs initial weights so gains and biases are not at their special values.
fn jitter(model: &mut TransformerLM, seed: u64) {
    for (i, p) in model.parameters_mut().iter_mut().enumerate() {
        let noise = random_tensor(p.shape(), seed * 1000 + i as u64);
        for (x, n) in p.data_mut().iter_mut().zip(noise.data()) {
            *x += 0.3 * n;
        }
    }
}

/// Smaller than the default step: through two blocks of GELU and layer norm
/// the third derivative is large enough that O(h^2) truncation shows at 1e-4.
const MODEL_FD_STEP: f64 = 1e-5;

#[test]
fn full_model_gradients_pass_finite_differences() {
    for objective in [Objective::Mle, Objective::SimCtg, Objective::Unlikelihood] {
        for seed in 0..10 {
            let mut m = tiny_model(seed);
            jitter(&mut m, seed);
            let window = random_ids(7, 11, seed + 40);
            let err = model_gradient_check(&m, &window, objective, 0.5, MODEL_FD_STEP).unwrap();
            assert!(err < 1e-4, "{objective:?} seed {seed}: {err}");
        }
    }
}

#[test]
fn adam_matches_hand_evaluation_and_zero_grad() {
    let mut p = vec![Tensor::scalar(1.0)];
    let mut adam = Adam::new(&p, 0.1, AdamConfig::default());
    adam.step(&mut p, &[vec![1.0]]).unwrap();
    assert!((p[0].item() - 0.9).abs() < 1e-8);

    let mut q = vec![Tensor::vector(vec![0.5, -2.0])];
    let before = q.clone();
    let mut adam = Adam::new(&q, 0.1, AdamConfig::default());
    adam.step(&mut q, &[vec![0.0, 0.0]]).unwrap();
    assert_eq!(q, before);
    assert!(adam.step(&mut q, &[vec![0.0]]).is_err());
}

fn repeating_corpus() -> Corpus {
    let tokens: Vec<usize> = (0..400).map(|i| i % 4).collect();
    Corpus::new(
        4,
        vec![Document {
            split: Split::Train,
            tokens,
        }],
    )
    .unwrap()
}

fn toy_lm(seed: u64) -> TransformerLM {
    TransformerLM::new(ModelConfig {
        vocab_size: 4,
        n_layers: 1,
        n_heads: 2,
        d_model: 16,
        d_ff: 32,
        max_seq_len: 16,
        seed,
        ..ModelConfig::default()
    })
    .unwrap()
}

fn toy_config(steps: usize) -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-2,
        batch_size: 4,
        max_steps: steps,
        seq_len: 16,
        seed: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn repeating_corpus_is_learned() {
    let mut m = toy_lm(0);
    let history = train(&mut m, &repeating_corpus(), &toy_config(500), &mut ()).unwrap();
    assert_eq!(history.len(), 500);
    let last = history.last().unwrap();
    assert!(last.mle < 0.1, "final mle {}", last.mle);
    assert_eq!(history[0].step, 1);
}

#[test]
fn training_is_deterministic_across_execution_modes() {
    let corpus = repeating_corpus();
    let run = |execution| {
        let mut m = toy_lm(1);
        let cfg = TrainConfig {
            objective: Objective::SimCtg,
            execution,
            ..toy_config(15)
        };
        let h = train(&mut m, &corpus, &cfg, &mut ()).unwrap();
        (h, m.parameters().to_vec())
    };
    let (h1, p1) = run(Execution::Sequential);
    let (h2, p2) = run(Execution::Sequential);
    let (h3, p3) = run(Execution::Parallel);
    assert_eq!(h1, h2);
    assert_eq!(p1, p2);
    assert_eq!(h1, h3);
    assert_eq!(p1, p3);
}

#[test]
fn zero_margin_total_equals_mle() {
    let mut m = toy_lm(2);
    let cfg = TrainConfig {
        objective: Objective::SimCtg,
        margin: 0.0,
        ..toy_config(10)
    };
    for r in train(&mut m, &repeating_corpus(), &cfg, &mut ()).unwrap() {
        assert_eq!(r.aux, 0.0);
        assert_eq!(r.total, r.mle);
    }
}

#[test]
fn training_errors() {
    let short = Corpus::new(
        4,
        vec![Document {
            split: Split::Train,
            tokens: vec![0, 1, 2],
        }],
    )
    .unwrap();
    let mut m = toy_lm(0);
    assert!(matches!(train(&mut m, &short, &toy_config(1), &mut ()), Err(Error::Data(_))));
    let bad = TrainConfig {
        margin: 2.0,
        ..toy_config(1)
    };
    assert!(matches!(train(&mut m, &repeating_corpus(), &bad, &mut ()), Err(Error::Config(_))));
    let too_long = TrainConfig {
        seq_len: 17,
        ..toy_config(1)
    };
    assert!(matches!(train(&mut m, &repeating_corpus(), &too_long, &mut ()), Err(Error::Config(_))));
    let two_docs = Corpus::new(
        4,
        vec![
            Document {
                split: Split::Train,
                tokens: vec![0; 20],
            },
            Document {
                split: Split::Train,
                tokens: vec![1; 20],
            },
        ],
    )
    .unwrap();
    assert!(matches!(train(&mut m, &two_docs, &toy_config(1), &mut ()), Err(Error::Config(_))));
}

#[test]
fn checkpoint_cadence_and_csv() {
    struct Recorder(Vec<usize>, usize);
    impl ProgressSink for Recorder {
        fn on_step(&mut self, _r: &LossRecord) {
            self.1 += 1;
        }
        fn on_checkpoint(&mut self, step: usize, _m: &TransformerLM) -> Result<()> {
            self.0.push(step);
            Ok(())
        }
    }
    let mut m = toy_lm(0);
    let cfg = TrainConfig {
        checkpoint_every: 3,
        ..toy_config(10)
    };
    let mut rec = Recorder(Vec::new(), 0);
    let h = train(&mut m, &repeating_corpus(), &cfg, &mut rec).unwrap();
    assert_eq!(rec.0, vec![3, 6, 9]);
    assert_eq!(rec.1, 10);
    let mut out = Vec::new();
    write_loss_csv(&mut out, Objective::SimCtg, &h).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert!(text.starts_with("step,mle,cl,total\n1,"));
    assert_eq!(text.lines().count(), 11);
    assert_eq!(loss_csv_header(Objective::Unlikelihood), "step,mle,ul,total");
}

#[test]
fn clip_global_norm_caps() {
    let mut g = vec![vec![3.0], vec![4.0]];
    assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
    assert!((g[0][0] - 0.6).abs() < 1e-15 && (g[1][0] - 0.8).abs() < 1e-15);
    let mut small = vec![vec![0.1]];
    clip_global_norm(&mut small, 1.0);
    assert_eq!(small, vec![vec![0.1]]);
}

proptest! {
    #[test]
    fn contrastive_nonnegative_and_scale_invariant(seed in 0u64..500, rho in -1.0f64..=1.0, scale in 0.01f64..50.0, row in 0usize..5) {
        let h = clustered(5, 4, 0.5, seed);
        let mut scaled = h.clone();
        let d = 4;
        for x in &mut scaled.data_mut()[row * d..(row + 1) * d] {
            *x *= scale;
        }
        let a = eval(|t| { let v = t.constant(h.clone()); contrastive_loss(t, v, rho) });
        let b = eval(|t| { let v = t.constant(scaled.clone()); contrastive_loss(t, v, rho) });
        prop_assert!(a >= 0.0);
        prop_assert!((a - b).abs() < 1e-12);
        let rows: Vec<&[f64]> = h.row_iter().collect();
        let max_cos = (0..5).flat_map(|i| (0..5).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| cosine_similarity(rows[i], rows[j]))
            .fold(f64::NEG_INFINITY, f64::max);
        if max_cos <= 1.0 - rho {
            prop_assert_eq!(a, 0.0);
        }
    }

    #[test]
    fn zero_margin_identity(seed in 0u64..10_000) {
        let logits = random_tensor(&[4, 5], seed);
        let hidden = random_tensor(&[4, 3], seed + 1);
        let targets = random_ids(4, 5, seed);
        let s = eval(|t| {
            let l = t.constant(logits.clone());
            let h = t.constant(hidden.clone());
            simctg_loss(t, l, &targets, h, 0.0)
        });
        let m = eval(|t| { let l = t.constant(logits.clone()); mle_loss(t, l, &targets) });
        prop_assert_eq!(s.to_bits(), m.to_bits());
    }
}


