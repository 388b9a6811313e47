//! Property tests over random inputs: softmax, attention normalisation and
//! permutation behaviour, variant wiring, data invariants, optimiser steps.

#![allow(clippy::needless_range_loop)]

mod common;

use mvan::autodiff::{softmax_rows, Tape};
use mvan::data::{
    encode_tweet, impute_user_features, normalize_features, truncate_by_deadline, Adjacency, CorpusPaths, RawCorpus,
    Vocabulary,
};
use mvan::graph_encoder::{
    gat_attention_coeffs, gat_hidden_layer, gat_output_layer, graph_readout, GatHead, GatLayerParams, Readout,
};
use mvan::metrics::{aggregate_runs, metrics, Confusion, CONFIDENCE_LEVELS};
use mvan::model::{EncodedExample, Model, ModelConfig, Variant};
use mvan::ops::LEAKY_SLOPE;
use mvan::optim::{AdamConfig, AdamState};
use mvan::rng::SeedStream;
use mvan::selfcheck::{toy_examples, toy_model, toy_vocab};
use mvan::train::{encode_all, fit};
use mvan::Tensor;
use proptest::prelude::*;

/// Adjacency lists with self-loops plus random extra edges.
fn graph_strategy(max_nodes: usize) -> impl Strategy<Value = Vec<Vec<usize>>> {
    (1..=max_nodes).prop_flat_map(|n| {
        proptest::collection::vec(proptest::collection::vec(any::<bool>(), n), n).prop_map(move |bits| {
            (0..n)
                .map(|i| (0..n).filter(|&j| j == i || bits[i][j]).collect())
                .collect()
        })
    })
}

fn matrix(rows: usize, cols: usize, values: &[f64]) -> Tensor {
    let data: Vec<f64> = (0..rows * cols).map(|k| values[k % values.len()]).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

fn layer(f_in: usize, f_out: usize, values: &[f64]) -> GatLayerParams {
    GatLayerParams {
        heads: (0..2)
            .map(|h| GatHead {
                w: matrix(f_in, f_out, &values[h..]),
                a: matrix(2 * f_out, 1, &values[h + 3..]),
            })
            .collect(),
    }
}

fn loss_of(model: &Model, batch: &[EncodedExample]) -> (Tape, mvan::autodiff::Var) {
    let mut tape = Tape::new();
    let mut losses = Vec::new();
    for ex in batch {
        let f = model.forward(&mut tape, ex, None).unwrap();
        losses.push(tape.cross_entropy(f.logits, ex.label.index()).unwrap());
    }
    let s = tape.concat_rows(&losses).unwrap();
    let s = tape.sum(s).unwrap();
    let l = tape.scale(s, 1.0 / batch.len() as f64).unwrap();
    (tape, l)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_normalised_and_shift_invariant(row in proptest::collection::vec(-30.0f64..30.0, 1..12), shift in -100.0f64..100.0) {
        let p = softmax_rows(&Tensor::row(row.clone()));
        let q = softmax_rows(&Tensor::row(row.iter().map(|v| v + shift).collect()));
        prop_assert!(p.data().iter().all(|&v| v >= 0.0));
        prop_assert!((p.data().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(p.max_abs_diff(&q) < 1e-9);
    }

    #[test]
    fn gat_coefficients_normalised_and_masked(adj in graph_strategy(7), values in proptest::collection::vec(-2.0f64..2.0, 16)) {
        let n = adj.len();
        let x = matrix(n, 3, &values);
        let p = layer(3, 2, &values[1..]);
        let coeffs = gat_attention_coeffs(&x, &Adjacency::from_lists(&adj), &p.heads[0].w, &p.heads[0].a, LEAKY_SLOPE).unwrap();
        for (i, row) in coeffs.iter().enumerate() {
            prop_assert_eq!(row.len(), adj[i].len());
            prop_assert!(row.iter().all(|&c| c >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn gat_permutation_equivariant(
        (adj, perm) in graph_strategy(6).prop_flat_map(|adj| {
            let n = adj.len();
            (Just(adj), Just((0..n).collect::<Vec<usize>>()).prop_shuffle())
        }),
        values in proptest::collection::vec(-2.0f64..2.0, 24),
    ) {
        let n = adj.len();
        let x: Vec<Vec<f64>> = (0..n).map(|i| (0..4).map(|k| values[(i * 4 + k) % 24]).collect()).collect();
        // node i of the original graph becomes node perm[i]
        let mut inv = vec![0; n];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        let px: Vec<Vec<f64>> = (0..n).map(|k| x[inv[k]].clone()).collect();
        let padj: Vec<Vec<usize>> = (0..n)
            .map(|k| {
                let mut l: Vec<usize> = adj[inv[k]].iter().map(|&j| perm[j]).collect();
                l.sort_unstable();
                l
            })
            .collect();
        let l1 = layer(4, 3, &values[5..]);
        let l2 = layer(6, 2, &values[2..]);
        let run = |x: &[Vec<f64>], adj: &[Vec<usize>]| {
            let a = Adjacency::from_lists(adj);
            let h = gat_hidden_layer(&Tensor::from_rows(x).unwrap(), &a, &l1).unwrap();
            gat_output_layer(&h, &a, &l2).unwrap()
        };
        let out = run(&x, &adj);
        let pout = run(&px, &padj);
        for i in 0..n {
            for c in 0..out.cols() {
                prop_assert!((out.get(i, c) - pout.get(perm[i], c)).abs() < 1e-10);
            }
        }
        let v = graph_readout(&out, Readout::Mean).unwrap();
        let pv = graph_readout(&pout, Readout::Mean).unwrap();
        prop_assert!(v.max_abs_diff(&pv) < 1e-10);
    }

    #[test]
    fn encode_tweet_has_fixed_length(words in proptest::collection::vec("[a-d]{1,3}", 0..40), max_len in 1usize..35) {
        let vocab = Vocabulary::from_tokens(["<pad>", "<unk>", "a", "b", "ab"].iter().map(|s| s.to_string()).collect());
        let (ids, len) = encode_tweet(&words, &vocab, max_len);
        prop_assert_eq!(ids.len(), max_len);
        prop_assert_eq!(len, words.len().min(max_len));
        prop_assert!(ids[len..].iter().all(|&i| i == 0));
        prop_assert!(ids[..len].iter().all(|&i| i != 0));
    }

    #[test]
    fn metric_spread_grows_with_confidence(accs in proptest::collection::vec(0usize..=10, 2..12)) {
        let reports: Vec<_> = accs
            .iter()
            .map(|&k| metrics(&Confusion { tp: k, tn: 10 - k, fp: 5, fn_: 5 }).unwrap())
            .collect();
        prop_assert!(reports.iter().all(|r| r.confusion.total() == 20));
        let agg = aggregate_runs(&reports, &CONFIDENCE_LEVELS).unwrap();
        for (_, s) in agg.summaries() {
            let h: Vec<f64> = s.half_widths.iter().map(|p| p.1).collect();
            prop_assert!(h.windows(2).all(|w| w[0] <= w[1]));
            if s.std > 0.0 {
                prop_assert!(h.windows(2).all(|w| w[0] < w[1]));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn tsan_ignores_graph_and_psan_ignores_text(seed in 0u64..1000, donor in 1usize..6) {
        let vocab = toy_vocab();
        let examples = toy_examples(&vocab, 6, seed).unwrap();
        let base = &examples[0];
        let other = &examples[donor];
        let mut new_graph = base.clone();
        new_graph.graph = other.graph.clone();
        new_graph.features = other.features.map(|v| v * 3.0 - 1.0);
        new_graph.edges = other.edges.clone();
        let mut new_text = base.clone();
        new_text.tokens = other.tokens.clone();
        new_text.token_ids = other.token_ids.clone();

        let stream = SeedStream::new(seed);
        let tsan = Model::new(mvan::selfcheck::toy_config(Variant::Tsan), vocab.clone(), None, &stream).unwrap();
        let psan = Model::new(mvan::selfcheck::toy_config(Variant::Psan), vocab, None, &stream).unwrap();
        prop_assert_eq!(tsan.predict(base).unwrap().probabilities, tsan.predict(&new_graph).unwrap().probabilities);
        prop_assert_eq!(psan.predict(base).unwrap().probabilities, psan.predict(&new_text).unwrap().probabilities);
    }

    #[test]
    fn truncation_keeps_self_loops_and_imputation_keeps_present_values(seed in 0u64..500, fraction in 0.01f64..1.0) {
        let c = common::corpus(12, 0.5, 0.5, seed);
        let ds = mvan::data::assemble(&c.raw, &Default::default()).unwrap();
        for ex in &ds.examples {
            let g = truncate_by_deadline(&ex.graph, fraction).unwrap();
            prop_assert!(g.num_nodes() >= 1 && g.num_nodes() <= ex.graph.num_nodes());
            prop_assert!((0..g.num_nodes()).all(|i| g.has_edge(i, i)));
            let imputed = impute_user_features(&g);
            for (a, b) in g.nodes().iter().zip(imputed.nodes()) {
                for (x, y) in a.features.values.iter().zip(&b.features.values) {
                    if x.is_some() {
                        prop_assert_eq!(x, y);
                    }
                }
            }
        }
    }
}

#[test]
fn normalisation_is_idempotent() {
    let c = common::corpus(30, 0.5, 0.5, 3);
    let (tr, te) = common::splits(&c, 1);
    let (a, b) = normalize_features(&tr, &te).unwrap();
    let (a2, b2) = normalize_features(&a, &b).unwrap();
    for (x, y) in a
        .examples
        .iter()
        .chain(&b.examples)
        .zip(a2.examples.iter().chain(&b2.examples))
    {
        for (n, m) in x.graph.nodes().iter().zip(y.graph.nodes()) {
            for (p, q) in n.features.values.iter().zip(&m.features.values) {
                assert!((p.unwrap() - q.unwrap()).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn corpus_files_round_trip() {
    let c = common::corpus(15, 0.5, 0.5, 4);
    let dir = tempfile::tempdir().unwrap();
    let paths = CorpusPaths::in_dir(dir.path());
    c.raw.write(&paths).unwrap();
    assert_eq!(RawCorpus::read(&paths).unwrap(), c.raw);
}

#[test]
fn one_adam_step_lowers_batch_loss() {
    let mut wins = 0;
    for seed in 0..20 {
        let (mut model, batch) = toy_model(Variant::Mvan, seed).unwrap();
        let (tape, loss) = loss_of(&model, &batch);
        let before = tape.value(loss).item();
        let grads = tape.backward(loss).unwrap().into_params();
        let mut adam = AdamState::new(AdamConfig::default());
        adam.step(&mut model.params, &grads).unwrap();
        assert_eq!(adam.step, 1);
        let (tape, loss) = loss_of(&model, &batch);
        wins += usize::from(tape.value(loss).item() < before);
    }
    assert!(wins >= 19, "{wins}/20 steps lowered the loss");
}

#[test]
fn zero_learning_rate_leaves_parameters() {
    let c = common::corpus(20, 0.5, 0.5, 5);
    let (tr, _) = common::splits(&c, 0);
    let mut cfg = ModelConfig::compact();
    cfg.trainer.learning_rate = 0.0;
    cfg.trainer.epochs = 3;
    cfg.trainer.patience = None;
    let vocab = mvan::data::build_vocab(tr.examples.iter().map(|e| e.tokens.as_slice()), 1000);
    let model = Model::new(cfg, vocab, None, &SeedStream::new(0)).unwrap();
    let encoded = encode_all(&model, &tr).unwrap();
    let trained = fit(model.clone(), &encoded).unwrap();
    assert_eq!(trained.history.len(), 3);
    assert_eq!(trained.model.params, model.params);
}

#[test]
fn strong_text_signal_is_linearly_separable() {
    let c = common::corpus(400, 0.9, 0.9, 6);
    let (tr, te) = common::splits(&c, 0);
    let (x, xt) = common::bag_of_words(&tr, &te);
    let acc =
        common::Logistic::fit(&x, &common::fake_flags(&tr), 500, 0.5, 1e-2).accuracy(&xt, &common::fake_flags(&te));
    assert!(acc >= 0.8, "bag-of-words accuracy {acc}");
}
