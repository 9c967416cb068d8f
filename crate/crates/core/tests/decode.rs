mod common;

use ctglab_core::decode::*;
use ctglab_core::model::ModelConfig;
use common::random_ids;
use ctglab_core::toy::BigramModel;
use ctglab_core::model::TransformerLM;
use ctglab_core::Error;

fn tiny_lm(seed: u64) -> TransformerLM {
    TransformerLM::new(ModelConfig {
        vocab_size: 40,
        n_layers: 2,
        n_heads: 2,
        d_model: 16,
        d_ff: 32,
        max_seq_len: 48,
        seed,
        ..ModelConfig::default()
    })
    .unwrap()
}

fn one_hot(v: usize) -> Vec<Vec<f64>> {
    (0..v).map(|i| (0..v).map(|j| f64::from(u8::from(i == j))).collect()).collect()
}

fn constant_model(probs: &[f64], max_positions: usize) -> BigramModel {
    let v = probs.len();
    BigramModel::from_probabilities(vec![probs.to_vec(); v], one_hot(v), max_positions).unwrap()
}

#[test]
fn constant_logits_repeat_one_token() {
    let m = constant_model(&[0.1, 0.6, 0.3], 100);
    let t = greedy_decode(&m, &[0], 20).unwrap();
    assert_eq!(t.generated, vec![1; 20]);
    assert_eq!(t.steps.len(), 20);
}

#[test]
fn greedy_breaks_ties_by_lowest_id() {
    let m = constant_model(&[0.2, 0.4, 0.4], 10);
    assert_eq!(greedy_decode(&m, &[0], 3).unwrap().generated, vec![1, 1, 1]);
}

#[test]
fn degenerate_settings_reduce_to_greedy() {
    for seed in 0..8 {
        let m = tiny_lm(seed);
        let prefix = random_ids(1 + seed as usize, 40, seed + 100);
        let g = greedy_decode(&m, &prefix, 16).unwrap();
        let b = beam_decode(&m, &prefix, 1, 16).unwrap();
        let k = top_k_sample(&m, &prefix, 1, 16, seed).unwrap();
        let c = contrastive_search(&m, &prefix, 8, 0.0, 16, false).unwrap();
        assert_eq!(g.generated, b.generated);
        assert_eq!(g.generated, k.generated);
        assert_eq!(g.generated, c.generated);
        assert_eq!(contrastive_search(&m, &prefix, 1, 0.9, 16, false).unwrap().generated, g.generated);
    }
}

#[test]
fn beam_finds_global_optimum_when_exhaustive() {
    // Greedy takes token 0 first, but starting with 1 gives a better total.
    let probs = vec![vec![0.5, 0.4, 0.1], vec![0.95, 0.03, 0.02], vec![0.2, 0.3, 0.5]];
    let m = BigramModel::from_probabilities(probs.clone(), one_hot(3), 10).unwrap();
    let best = beam_decode(&m, &[0], 3, 2).unwrap();
    assert_eq!(best.generated, vec![1, 0]);
    let greedy = greedy_decode(&m, &[0], 2).unwrap();
    assert_eq!(greedy.generated, vec![0, 0]);
    assert!(best.log_prob > greedy.log_prob);

    for seed in 0..30 {
        let m = BigramModel::random(3, 2, 1.5, 10, seed);
        let prefix = [seed as usize % 3];
        let mut best_lp = f64::NEG_INFINITY;
        let mut best_seq = vec![];
        for a in 0..3 {
            for b in 0..3 {
                let lp1 = ctglab_core::kernels::log_softmax(m.logit_row(prefix[0]))[a];
                let lp2 = ctglab_core::kernels::log_softmax(m.logit_row(a))[b];
                if lp1 + lp2 > best_lp {
                    best_lp = lp1 + lp2;
                    best_seq = vec![a, b];
                }
            }
        }
        let t = beam_decode(&m, &prefix, 3, 2).unwrap();
        assert_eq!(t.generated, best_seq, "seed {seed}");
        assert!((t.log_prob - best_lp).abs() < 1e-12);
    }
}

#[test]
fn beam_score_is_path_log_prob() {
    for seed in 0..5 {
        let m = BigramModel::random(6, 2, 2.0, 20, seed);
        let t = beam_decode(&m, &[1], 4, 6).unwrap();
        let mut prev = 1;
        let mut lp = 0.0;
        for &tok in &t.generated {
            lp += ctglab_core::kernels::log_softmax(m.logit_row(prev))[tok];
            prev = tok;
        }
        assert!((lp - t.log_prob).abs() < 1e-12);
    }
}

#[test]
fn top_k_frequencies_match_renormalized_distribution() {
    let m = constant_model(&[0.5, 0.3, 0.2], 20_001);
    let t = top_k_sample(&m, &[0], 2, 20_000, 11).unwrap();
    let mut counts = [0usize; 3];
    for &tok in &t.generated {
        counts[tok] += 1;
    }
    let n = t.generated.len() as f64;
    assert!((counts[0] as f64 / n - 0.625).abs() < 0.02);
    assert!((counts[1] as f64 / n - 0.375).abs() < 0.02);
    assert_eq!(counts[2], 0);
}

#[test]
fn top_k_stays_in_support() {
    let m = BigramModel::random(12, 2, 1.0, 10_001, 3);
    let t = top_k_sample(&m, &[0], 4, 10_000, 5).unwrap();
    let mut prev = 0;
    for &tok in &t.generated {
        let probs = ctglab_core::kernels::softmax(m.logit_row(prev));
        let rank = probs.iter().filter(|&&q| q > probs[tok]).count();
        assert!(rank < 4);
        prev = tok;
    }
}

#[test]
fn top_k_rejects_out_of_range_k() {
    let m = constant_model(&[0.5, 0.5], 10);
    assert!(matches!(top_k_sample(&m, &[0], 0, 1, 0), Err(Error::Config(_))));
    assert!(matches!(top_k_sample(&m, &[0], 3, 1, 0), Err(Error::Config(_))));
}

#[test]
fn nucleus_set_examples() {
    assert_eq!(nucleus_set(&[0.5, 0.3, 0.2], 0.7), vec![0, 1]);
    assert_eq!(nucleus_set(&[0.2, 0.3, 0.5], 0.7), vec![2, 1]);
    assert_eq!(nucleus_set(&[0.5, 0.3, 0.2], 1.0).len(), 3);
    assert_eq!(nucleus_set(&[0.9, 0.05, 0.05], 0.8), vec![0]);
    assert_eq!(nucleus_set(&[0.25, 0.25, 0.25, 0.25], 0.5), vec![0, 1]);
    assert_eq!(nucleus_set(&[0.5, 0.0, 0.5], 1.0), vec![0, 2]);
}

#[test]
fn nucleus_with_dominant_token_is_greedy() {
    let m = constant_model(&[0.05, 0.96, 0.01].map(|x: f64| x / 1.02), 30);
    let t = nucleus_sample(&m, &[0], 0.9, 20, 9).unwrap();
    assert_eq!(t.generated, vec![1; 20]);
}

#[test]
fn nucleus_seeded_reproducibility() {
    let m = tiny_lm(2);
    let a = nucleus_sample(&m, &[1, 2, 3], 0.95, 20, 7).unwrap();
    let b = nucleus_sample(&m, &[1, 2, 3], 0.95, 20, 7).unwrap();
    assert_eq!(a, b);
    assert!(a.steps.iter().all(|s| s.candidates.iter().any(|c| c.token == s.chosen)));
}

#[test]
fn contrastive_selection_example() {
    let (best, scored) = select_contrastive(&[(3, 0.6, 0.9), (7, 0.4, 0.1)], 0.6);
    assert_eq!(best, 1);
    assert!((scored[0].score + 0.30).abs() < 1e-12);
    assert!((scored[1].score - 0.10).abs() < 1e-12);
}

#[test]
fn contrastive_ties_prefer_confidence_then_low_id() {
    // Equal scores: 0.5*0.75 - 0.5*0.25 = 0.25 = 0.5*0.5 - 0.5*0.0.
    let (best, _) = select_contrastive(&[(5, 0.5, 0.0), (9, 0.75, 0.25)], 0.5);
    assert_eq!(best, 1);
    let (best, _) = select_contrastive(&[(9, 0.5, 0.1), (2, 0.5, 0.1)], 0.5);
    assert_eq!(best, 1);
}

#[test]
fn degeneration_penalty_is_max_cosine() {
    let ctx = vec![vec![1.0, 0.0], vec![1.0, 1.0]];
    let p = degeneration_penalty(&[0.0, 1.0], &ctx);
    assert!((p - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    assert_eq!(degeneration_penalty(&[1.0, 0.0], &[]), 0.0);
}

#[test]
fn contrastive_chosen_scores_are_maximal() {
    let m = tiny_lm(4);
    let t = contrastive_search(&m, &[5, 6, 7, 8], 8, 0.6, 24, false).unwrap();
    assert_eq!(t.generated.len(), 24);
    for s in &t.steps {
        assert_eq!(s.candidates.len(), 8);
        let chosen = s.candidates.iter().find(|c| c.token == s.chosen).unwrap();
        assert!(s.candidates.iter().all(|c| c.score <= chosen.score));
        assert!(s.candidates.iter().all(|c| (-1.0..=1.0).contains(&c.penalty)));
    }
}

#[test]
fn contrastive_is_invariant_to_representation_scale() {
    for seed in 0..5 {
        let m = BigramModel::random(20, 6, 1.0, 60, seed);
        let base = contrastive_search(&m, &[0, 1], 5, 0.6, 40, false).unwrap();
        for factor in [0.25, 3.7, 1e3] {
            let scaled = contrastive_search(&m.with_scaled_embeddings(factor), &[0, 1], 5, 0.6, 40, false).unwrap();
            assert_eq!(base.generated, scaled.generated);
        }
    }
}

#[test]
fn renormalized_confidence_changes_only_the_scale() {
    let m = tiny_lm(6);
    let plain = contrastive_search(&m, &[1, 2], 4, 0.0, 10, true).unwrap();
    assert_eq!(plain.generated, greedy_decode(&m, &[1, 2], 10).unwrap().generated);
    for s in &plain.steps {
        let total: f64 = s.candidates.iter().map(|c| c.confidence).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}

#[test]
fn diverse_contrastive_degenerate_and_seeded() {
    let m = tiny_lm(8);
    let prefix = [3, 1, 4, 1, 5];
    let cs = contrastive_search(&m, &prefix, 8, 0.6, 20, false).unwrap();
    let d0 = diverse_contrastive_search(&m, &prefix, &DecodeConfig::diverse_contrastive(0, 0.95, 8, 0.6, 20, 1)).unwrap();
    assert_eq!(cs.generated, d0.generated);
    assert_eq!(cs.steps, d0.steps);

    let cfg = |seed| DecodeConfig::diverse_contrastive(2, 0.95, 8, 0.6, 20, seed);
    let a = diverse_contrastive_search(&m, &prefix, &cfg(1)).unwrap();
    assert_eq!(a, diverse_contrastive_search(&m, &prefix, &cfg(1)).unwrap());
    let differs = (2..10).any(|s| diverse_contrastive_search(&m, &prefix, &cfg(s)).unwrap().generated != a.generated);
    assert!(differs);
    assert!(matches!(
        diverse_contrastive_search(&m, &prefix, &DecodeConfig::diverse_contrastive(30, 0.95, 8, 0.6, 20, 1)),
        Err(Error::Config(_))
    ));
}

#[test]
fn length_and_prefix_errors() {
    let m = tiny_lm(0);
    assert!(matches!(greedy_decode(&m, &[], 4), Err(Error::Data(_))));
    assert!(matches!(
        greedy_decode(&m, &[1; 40], 9),
        Err(Error::SequenceTooLong { len: 49, max: 48 })
    ));
    assert!(greedy_decode(&m, &[1; 40], 8).is_ok());
    assert!(contrastive_search(&m, &[1; 40], 8, 0.6, 8, false).is_ok());
    assert!(matches!(greedy_decode(&m, &[99], 1), Err(Error::Index { .. })));
}

#[test]
fn config_validation() {
    let mut c = DecodeConfig::default();
    assert!(c.validate().is_ok());
    c.alpha = 1.2;
    assert!(c.validate().is_err());
    c = DecodeConfig { p: 0.0, ..DecodeConfig::default() };
    assert!(c.validate().is_err());
    c = DecodeConfig { k: 0, ..DecodeConfig::default() };
    assert!(c.validate().is_err());
    c = DecodeConfig { beam_width: 0, ..DecodeConfig::default() };
    assert!(c.validate().is_err());
    assert_eq!("top-k".parse::<Method>().unwrap(), Method::TopK);
    assert!("typical".parse::<Method>().is_err());
}

#[test]
fn deterministic_methods_are_bitwise_reproducible() {
    let m = tiny_lm(10);
    for cfg in [DecodeConfig::greedy(12), DecodeConfig::beam(4, 12), DecodeConfig::contrastive(8, 0.6, 12)] {
        let a = generate(&m, &[1, 2, 3], &cfg).unwrap();
        let b = generate(&m, &[1, 2, 3], &cfg).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}

#[test]
fn trace_json_round_trip() {
    let m = tiny_lm(1);
    let t = generate(&m, &[1, 2], &DecodeConfig::top_k(5, 6, 3)).unwrap();
    let json = serde_json::to_string(&t).unwrap();
    let back: GenerationTrace = serde_json::from_str(&json).unwrap();
    assert_eq!(back, t);
    assert!(json.contains("\"confidence\""));
}

#[test]
fn latency_report_shape() {
    let m = tiny_lm(3);
    let prefixes = vec![vec![1, 2, 3], vec![4, 5]];
    let configs = vec![DecodeConfig::contrastive(4, 0.6, 6), DecodeConfig::greedy(6), DecodeConfig::beam(3, 6)];
    let rows = latency_benchmark(&m, &prefixes, &configs, 3).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[1].ratio_to_greedy, 1.0);
    assert!(rows.iter().all(|r| r.mean_ms > 0.0));
    assert!(latency_benchmark(&m, &prefixes, &configs, 2).is_err());
    let no_greedy = latency_benchmark(&m, &prefixes, &configs[..1], 3).unwrap();
    assert_eq!(no_greedy.len(), 1);
}
