use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::model::{ModelConfig, PixelModel};
use crate::numerics::{check_gradients_many, kernels::gelu, Tensor};
use crate::render::{render_words, RenderConfig};

fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape.to_vec(), 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn randomize<T: Scalar>(store: &mut ParamStore<T>, std: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in store.tensors_mut() {
        *t = Tensor::randn(t.shape().to_vec(), std, &mut rng);
    }
}

/// All `(n+1)^n` head assignments, keeping trees; lowest-scoring ties lose
/// to the first maximum found.
fn brute_force_best(scores: &[Vec<f64>]) -> (f64, Vec<usize>) {
    let n = scores.len() - 1;
    let mut heads = vec![0; n];
    let mut best = (f64::NEG_INFINITY, vec![]);
    loop {
        if is_tree(&heads) {
            let s = tree_score(scores, &heads);
            if s > best.0 {
                best = (s, heads.clone());
            }
        }
        let mut k = 0;
        while k < n {
            heads[k] += 1;
            if heads[k] <= n {
                break;
            }
            heads[k] = 0;
            k += 1;
        }
        if k == n {
            return best;
        }
    }
}

fn random_scores(n: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..=n)
        .map(|_| (0..=n).map(|_| rng.random_range(-5.0..5.0)).collect())
        .collect()
}

#[test]
fn pool_single_and_identical() {
    let mut g = Graph::<f64>::new();
    let h = g.constant(Tensor::from_rows(&[vec![9.0, 9.0], vec![1.0, 2.0], vec![3.0, 4.0], vec![3.0, 4.0]]).unwrap());
    let words = pool_words(&mut g, h, &[(0, 1), (1, 3)], Pooling::Mean).unwrap();
    assert_eq!(g.value(words).data(), [1.0, 2.0, 3.0, 4.0]);
    let first = pool_words(&mut g, h, &[(0, 1), (1, 3)], Pooling::First).unwrap();
    assert_eq!(g.value(first).data(), [1.0, 2.0, 3.0, 4.0]);
    assert!(matches!(
        pool_words(&mut g, h, &[(0, 1), (2, 2)], Pooling::Mean),
        Err(HeadError::EmptySpan { index: 1 })
    ));
    assert!(matches!(pool_words(&mut g, h, &[(2, 4)], Pooling::Mean), Err(HeadError::EmptySpan { index: 0 })));
    assert!(matches!(pool_words(&mut g, h, &[], Pooling::Mean), Err(HeadError::EmptyInput)));
    assert_eq!("first".parse::<Pooling>().unwrap(), Pooling::First);
    assert!("max".parse::<Pooling>().is_err());
}

#[test]
fn classifier_pooling_cases() {
    let mut clf = SequenceClassifier::<f64>::new(3, 2, 0).unwrap();
    let mut g = Graph::new();
    let p = clf.params().bind(&mut g);
    let v = [0.5, -1.0, 2.0];
    let hidden = g.constant(Tensor::from_fn([6, 3], |k| v[k % 3]));
    let w = clf.params().get(clf.linear().weight).clone();
    for attended in 1..=5 {
        let logits = clf.logits(&mut g, &p, hidden, attended).unwrap();
        let expect: Vec<f64> = (0..2).map(|c| (0..3).map(|i| v[i] * w.at(&[i, c])).sum()).collect();
        for c in 0..2 {
            assert_abs_diff_eq!(g.value(logits).data()[c], expect[c], epsilon = 1e-12);
        }
    }
    assert!(matches!(clf.logits(&mut g, &p, hidden, 0), Err(HeadError::AllPadding)));

    // zero weights: logits are the bias
    let (wid, bid) = (clf.linear().weight, clf.linear().bias.unwrap());
    *clf.params_mut().get_mut(wid) = Tensor::zeros([3, 2]);
    *clf.params_mut().get_mut(bid) = Tensor::new([2], vec![0.25, -3.0]).unwrap();
    let mut g = Graph::new();
    let p = clf.params().bind(&mut g);
    let hidden = g.constant(rand_tensor(&[4, 3], 1));
    let logits = clf.logits(&mut g, &p, hidden, 3).unwrap();
    assert_eq!(g.value(logits).data(), [0.25, -3.0]);

    // (u + w) / 2 by hand
    let mut g = Graph::new();
    let hidden = g.constant(Tensor::from_rows(&[vec![7.0, 7.0], vec![1.0, 3.0], vec![2.0, -5.0], vec![100.0, 100.0]]).unwrap());
    let pooled = pool_sequence(&mut g, hidden, 2).unwrap();
    assert_eq!(g.value(pooled).data(), [1.5, -1.0]);
}

#[test]
fn classifier_ignores_padding() {
    let model = PixelModel::<f64>::new(ModelConfig::tiny(24), 1).unwrap();
    let clf = SequenceClassifier::<f64>::new(32, 3, 2).unwrap();
    let logits_for = |max_patches: usize, pad_fill: f32| {
        let mut seq = render_words(&["pad", "test"], &RenderConfig::default().with_max_patches(max_patches)).unwrap();
        for q in seq.attended_len()..seq.num_patches() {
            seq.patch_mut(q).fill(pad_fill);
        }
        let mut g = Graph::no_grad();
        let mp = model.bind_frozen(&mut g);
        let hp = clf.params().bind_frozen(&mut g);
        let enc = model.encode_unmasked(&mut g, &mp, &seq).unwrap();
        let l = clf.logits(&mut g, &hp, enc.last(), seq.attended_len()).unwrap();
        g.value(l).clone()
    };
    let base = logits_for(24, 1.0);
    assert_eq!(logits_for(12, 1.0), base);
    assert_eq!(logits_for(24, 0.3), base);
}

#[test]
fn tagger_cases() {
    let mut tagger = TokenTagger::<f64>::new(4, 3, 0).unwrap();
    let (wid, bid) = (tagger.linear().weight, tagger.linear().bias.unwrap());
    *tagger.params_mut().get_mut(wid) = Tensor::zeros([4, 3]);
    let mut g = Graph::new();
    let p = tagger.params().bind(&mut g);
    let words = g.constant(rand_tensor(&[5, 4], 3));
    assert_eq!(tagger.predict(&mut g, &p, words).unwrap(), vec![0; 5]);
    let empty = g.constant(Tensor::zeros([0, 4]));
    assert!(matches!(tagger.predict(&mut g, &p, empty), Err(HeadError::EmptyInput)));

    // label 1 scores component 2, label 0 is fixed at zero, label 2 never wins
    *tagger.params_mut().get_mut(wid) = Tensor::from_fn([4, 3], |k| if k == 2 * 3 + 1 { 1.0 } else { 0.0 });
    *tagger.params_mut().get_mut(bid) = Tensor::new([3], vec![0.0, 0.0, -1.0]).unwrap();
    let mut g = Graph::new();
    let p = tagger.params().bind(&mut g);
    let x = rand_tensor(&[8, 4], 4);
    let words = g.constant(x.clone());
    let tags = tagger.predict(&mut g, &p, words).unwrap();
    for (i, &t) in tags.iter().enumerate() {
        assert_eq!(t, usize::from(x.at(&[i, 2]) > 0.0));
    }
    assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    assert_eq!(argmax(&[0.0, 0.0]), 0);
}

#[test]
fn edmonds_fixtures() {
    // ROOT -> 1 -> 2
    let ninf = f64::NEG_INFINITY;
    let s = vec![vec![ninf, 10.0, 1.0], vec![ninf, 0.0, 10.0], vec![ninf, 2.0, 0.0]];
    assert_eq!(max_arborescence(&s), vec![0, 1]);
    assert_eq!(brute_force_best(&s).1, vec![0, 1]);

    let flat = vec![vec![0.0; 4]; 4];
    let a = max_arborescence(&flat);
    assert_eq!(a, vec![0, 0, 0]);
    assert_eq!(a, max_arborescence(&flat));

    // greedy picks the 1 <-> 2 cycle; contraction must break it
    let s = vec![
        vec![ninf, 1.0, 1.0, 0.0],
        vec![ninf, 0.0, 9.0, 0.0],
        vec![ninf, 9.0, 0.0, 8.0],
        vec![ninf, 0.0, 0.0, 0.0],
    ];
    let heads = max_arborescence(&s);
    assert!(is_tree(&heads));
    assert_eq!(tree_score(&s, &heads), brute_force_best(&s).0);
    assert_eq!(max_arborescence(&[vec![0.0]]), Vec::<usize>::new());
}

#[test]
fn edmonds_matches_brute_force_sweep() {
    for seed in 0..200 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 1 + seed as usize % 5;
        let s = random_scores(n, &mut rng);
        let heads = max_arborescence(&s);
        assert!(is_tree(&heads), "seed {seed}: {heads:?}");
        assert_eq!(tree_score(&s, &heads), brute_force_best(&s).0, "seed {seed}");
    }
}

#[test]
fn is_tree_rejects_cycles() {
    assert!(is_tree(&[0, 1, 1]));
    assert!(!is_tree(&[2, 1]));
    assert!(!is_tree(&[1]));
    assert!(!is_tree(&[0, 3]));
    assert!(is_tree(&[]));
}

/// Plain nested loops over the parser's formulas.
fn naive_parser_scores(parser: &BiaffineParser<f64>, words: &Tensor<f64>, heads: &[usize]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let ps = parser.params();
    let t = |name: &str| ps.by_name(name).unwrap().clone();
    let n = words.rows();
    let d = words.last_dim();
    let root = t("parser.root");
    let input = |i: usize| -> Vec<f64> {
        if i == 0 {
            root.data().to_vec()
        } else {
            words.row(i - 1).to_vec()
        }
    };
    let mlp = |name: &str, x: &[f64]| -> Vec<f64> {
        let w = t(&format!("{name}.weight"));
        let b = t(&format!("{name}.bias"));
        (0..w.shape()[1])
            .map(|o| gelu((0..d).map(|k| x[k] * w.at(&[k, o])).sum::<f64>() + b.data()[o]))
            .collect()
    };
    let (u, bvec) = (t("parser.arc_u"), t("parser.arc_b"));
    let a = u.shape()[0];
    let mut arcs = vec![vec![0.0; n]; n + 1];
    for (i, row) in arcs.iter_mut().enumerate() {
        let h = mlp("parser.arc_head", &input(i));
        for (j, cell) in row.iter_mut().enumerate() {
            let dv = mlp("parser.arc_dep", &input(j + 1));
            let mut s = 0.0;
            for x in 0..a {
                for y in 0..a {
                    s += h[x] * u.at(&[x, y]) * dv[y];
                }
                s += h[x] * bvec.data()[x];
            }
            *cell = s;
        }
    }
    let (v, w1, w2, c) = (t("parser.label_u"), t("parser.label_w_dep"), t("parser.label_w_head"), t("parser.label_c"));
    let l = parser.config.label_dim;
    let nl = parser.num_labels;
    let labels = (0..n)
        .map(|j| {
            let dv = mlp("parser.label_dep", &input(j + 1));
            let h = mlp("parser.label_head", &input(heads[j]));
            (0..nl)
                .map(|lab| {
                    let mut s = c.data()[lab];
                    for x in 0..l {
                        for y in 0..l {
                            s += dv[x] * v.at(&[x, lab * l + y]) * h[y];
                        }
                        s += dv[x] * w1.at(&[x, lab]) + h[x] * w2.at(&[x, lab]);
                    }
                    s
                })
                .collect()
        })
        .collect();
    (arcs, labels)
}

fn small_parser(seed: u64) -> BiaffineParser<f64> {
    let cfg = BiaffineConfig {
        arc_dim: 5,
        label_dim: 4,
    };
    let mut p = BiaffineParser::new(6, 3, cfg, seed).unwrap();
    randomize(p.params_mut(), 0.5, seed + 100);
    p
}

#[test]
fn biaffine_matches_nested_loops() {
    let parser = small_parser(1);
    let words = rand_tensor(&[3, 6], 7);
    let heads = [2, 0, 2];
    let mut g = Graph::new();
    let p = parser.params().bind(&mut g);
    let wv = g.constant(words.clone());
    let arcs = parser.arc_scores(&mut g, &p, wv).unwrap();
    let labels = parser.label_scores(&mut g, &p, wv, &heads).unwrap();
    let (na, nl) = naive_parser_scores(&parser, &words, &heads);
    assert_eq!(g.shape(arcs), [4, 3]);
    for i in 0..4 {
        for j in 0..3 {
            assert_abs_diff_eq!(g.value(arcs).at(&[i, j]), na[i][j], epsilon = 1e-5);
        }
    }
    for j in 0..3 {
        for lab in 0..3 {
            assert_abs_diff_eq!(g.value(labels).at(&[j, lab]), nl[j][lab], epsilon = 1e-5);
        }
    }
}

#[test]
fn biaffine_degenerate_cases() {
    let mut parser = small_parser(2);
    let mut g = Graph::new();
    let p = parser.params().bind(&mut g);
    let one = g.constant(rand_tensor(&[1, 6], 8));
    assert_eq!(parser.predict(&mut g, &p, one).unwrap().0, vec![0]);
    let none = g.constant(Tensor::zeros([0, 6]));
    assert!(matches!(parser.arc_scores(&mut g, &p, none), Err(HeadError::EmptyInput)));

    let zero = |name: &str, parser: &mut BiaffineParser<f64>| {
        let i = parser.params().position(name).unwrap();
        let t = parser.params_mut().tensors_mut().nth(i).unwrap();
        *t = Tensor::zeros(t.shape().to_vec());
    };
    zero("parser.arc_u", &mut parser);
    zero("parser.arc_b", &mut parser);
    let mut g = Graph::new();
    let p = parser.params().bind(&mut g);
    let words = g.constant(rand_tensor(&[4, 6], 9));
    let arcs = parser.arc_scores(&mut g, &p, words).unwrap();
    assert!(g.value(arcs).data().iter().all(|&v| v == 0.0));
    let (heads, _) = parser.predict(&mut g, &p, words).unwrap();
    assert!(is_tree(&heads));
    assert_eq!(heads, parser.predict(&mut g, &p, words).unwrap().0);
}

#[test]
fn biaffine_permutation_equivariance() {
    let parser = small_parser(3);
    let words = rand_tensor(&[4, 6], 10);
    let perm = [2, 0, 3, 1];
    let permuted = Tensor::from_rows(&perm.iter().map(|&i| words.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
    let mut g = Graph::new();
    let p = parser.params().bind(&mut g);
    let a = g.constant(words);
    let b = g.constant(permuted);
    let sa = parser.arc_scores(&mut g, &p, a).unwrap();
    let sb = parser.arc_scores(&mut g, &p, b).unwrap();
    let (sa, sb) = (g.value(sa).clone(), g.value(sb).clone());
    // head index h > 0 of the permuted input is original word perm[h-1]
    let orig = |h: usize| if h == 0 { 0 } else { perm[h - 1] + 1 };
    for h in 0..5 {
        for j in 0..4 {
            assert_abs_diff_eq!(sb.at(&[h, j]), sa.at(&[orig(h), perm[j]]), epsilon = 1e-12);
        }
    }
}

#[test]
fn heads_gradcheck_through_frozen_encoder() {
    let model = PixelModel::<f64>::new(ModelConfig::tiny(16), 4).unwrap();
    let seq = render_words(&["ab", "cdef", "g"], &RenderConfig::default().with_max_patches(16)).unwrap();
    let mut g0 = Graph::no_grad();
    let mp = model.bind_frozen(&mut g0);
    let enc = model.encode_unmasked(&mut g0, &mp, &seq).unwrap();
    let hidden = g0.value(enc.last()).clone();
    let spans = seq.word_spans.clone();

    let mut clf = SequenceClassifier::<f64>::new(32, 3, 5).unwrap();
    randomize(clf.params_mut(), 0.5, 6);
    let err = check_gradients_many(
        |g, vars| {
            let p = BoundParams::from_vars(vars.to_vec());
            let h = g.constant(hidden.clone());
            let l = clf.logits(g, &p, h, seq.attended_len()).map_err(to_num)?;
            g.cross_entropy(l, &[2])
        },
        &clf.params().tensors().cloned().collect::<Vec<_>>(),
        1e-5,
        None,
    )
    .unwrap();
    assert!(err < 1e-4, "classifier {err}");

    let mut tagger = TokenTagger::<f64>::new(32, 5, 7).unwrap();
    randomize(tagger.params_mut(), 0.5, 8);
    let err = check_gradients_many(
        |g, vars| {
            let p = BoundParams::from_vars(vars.to_vec());
            let h = g.constant(hidden.clone());
            let words = pool_words(g, h, &spans, Pooling::Mean).map_err(to_num)?;
            let l = tagger.logits(g, &p, words).map_err(to_num)?;
            g.cross_entropy(l, &[1, 2, 0])
        },
        &tagger.params().tensors().cloned().collect::<Vec<_>>(),
        1e-5,
        None,
    )
    .unwrap();
    assert!(err < 1e-4, "tagger {err}");

    let mut parser = BiaffineParser::<f64>::new(32, 3, BiaffineConfig { arc_dim: 6, label_dim: 4 }, 9).unwrap();
    randomize(parser.params_mut(), 0.5, 10);
    let err = check_gradients_many(
        |g, vars| {
            let p = BoundParams::from_vars(vars.to_vec());
            let h = g.constant(hidden.clone());
            let words = pool_words(g, h, &spans, Pooling::Mean).map_err(to_num)?;
            parser.loss(g, &p, words, &[2, 0, 2], &[1, 0, 2]).map_err(to_num)
        },
        &parser.params().tensors().cloned().collect::<Vec<_>>(),
        1e-5,
        None,
    )
    .unwrap();
    assert!(err < 1e-4, "parser {err}");
}

fn to_num(e: HeadError) -> NumericsError {
    match e {
        HeadError::Numerics(n) => n,
        other => NumericsError::Shape(other.to_string()),
    }
}

proptest! {
    #[test]
    fn mean_pool_matches_summation(rows in 2usize..12, d in 1usize..5, cuts in prop::collection::vec(any::<bool>(), 11), seed: u64) {
        let x = rand_tensor(&[rows, d], seed);
        // spans partitioning patches 0..rows-1 at the chosen cut points
        let patches = rows - 1;
        let mut spans = vec![];
        let mut lo = 0;
        for q in 1..=patches {
            if q == patches || cuts[q - 1] {
                spans.push((lo, q));
                lo = q;
            }
        }
        let mut g = Graph::new();
        let h = g.constant(x.clone());
        let out = pool_words(&mut g, h, &spans, Pooling::Mean).unwrap();
        let out = g.value(out);
        for (s, &(lo, hi)) in spans.iter().enumerate() {
            for k in 0..d {
                let mut acc = 0.0;
                for r in lo..hi {
                    acc += x.at(&[r + 1, k]);
                }
                prop_assert!((out.at(&[s, k]) - acc / (hi - lo) as f64).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn edmonds_always_returns_trees(n in 1usize..8, seed: u64) {
        let s = random_scores(n, &mut ChaCha8Rng::seed_from_u64(seed));
        let heads = max_arborescence(&s);
        prop_assert_eq!(heads.len(), n);
        prop_assert!(is_tree(&heads));
    }
}
