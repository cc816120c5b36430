use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::data::toy;
use crate::model::ModelConfig;

fn unit_vectors(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            l2_normalize(&v, i).unwrap()
        })
        .collect()
}

/// Sorts every candidate by (score desc, index asc) and finds the gold rank.
fn brute_force_recall(q: &[Vec<f64>], c: &[Vec<f64>], k: usize) -> f64 {
    let mut hits = 0;
    for (i, qi) in q.iter().enumerate() {
        let mut ranked: Vec<(f64, usize)> = c
            .iter()
            .enumerate()
            .map(|(j, cj)| (qi.iter().zip(cj).map(|(a, b)| a * b).sum(), j))
            .collect();
        ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        if ranked.iter().take(k).any(|&(_, j)| j == i) {
            hits += 1;
        }
    }
    hits as f64 / q.len() as f64
}

fn tiny_model() -> PixelModel<f32> {
    PixelModel::new(ModelConfig::tiny(64), 5).unwrap()
}

#[test]
fn recall_matches_brute_force_oracle() {
    for seed in 0..20 {
        let q = unit_vectors(50, 8, seed);
        let c = unit_vectors(50, 8, seed + 100);
        for k in [1, 5, 10] {
            assert_eq!(recall_at_k(&q, &c, k).unwrap(), brute_force_recall(&q, &c, k));
        }
    }
}

#[test]
fn recall_trivial_cases() {
    let q = unit_vectors(30, 6, 1);
    let c = unit_vectors(30, 6, 2);
    assert_eq!(recall_at_k(&q, &q, 5).unwrap(), 1.0);
    assert_eq!(recall_at_k(&q, &c, 30).unwrap(), 1.0);
    assert!(matches!(
        recall_at_k(&q, &c[..29], 5),
        Err(AnalysisError::SizeMismatch { queries: 30, candidates: 29 })
    ));
}

#[test]
fn recall_ties_go_to_lower_index() {
    // every candidate identical: query i is ranked i-th
    let q = vec![vec![1.0, 0.0]; 8];
    let c = vec![vec![1.0, 0.0]; 8];
    assert_eq!(recall_at_k(&q, &c, 5).unwrap(), 5.0 / 8.0);
    assert_eq!(recall_at_k(&q, &c, 5).unwrap(), brute_force_recall(&q, &c, 5));
}

#[test]
fn normalization_and_zero_norm() {
    let v = l2_normalize(&[3.0, 4.0], 0).unwrap();
    assert_eq!(v, [0.6, 0.8]);
    assert!(matches!(l2_normalize(&[0.0, 0.0], 7), Err(AnalysisError::ZeroNorm { index: 7 })));
}

#[test]
fn mean_pool_matches_summation_oracle() {
    let m = tiny_model();
    let r = renderer_for(&m, &RenderConfig::default()).unwrap();
    let texts = ["the cat sees a dog", "кіт бачить", "猫看见狗"];
    let layers = [0, 1, 2];
    let pooled = pooled_sentences(&m, &RenderConfig::default(), &texts, &layers).unwrap();
    for (t, per_layer) in texts.iter().zip(&pooled) {
        let seq = r.render_text(t);
        let hidden = m.hidden_states(&seq).unwrap();
        let n = seq.attended_len();
        for (&l, got) in layers.iter().zip(per_layer) {
            for (j, &g) in got.iter().enumerate() {
                let mut s = 0.0f64;
                for row in 1..=n {
                    s += hidden[l].row(row)[j] as f64;
                }
                assert_abs_diff_eq!(g, s / n as f64, epsilon = 1e-6);
            }
        }
    }
    let unit = embed_sentences(&m, &RenderConfig::default(), &texts, 2).unwrap();
    for v in unit {
        assert_abs_diff_eq!(v.iter().map(|x| x * x).sum::<f64>().sqrt(), 1.0, epsilon = 1e-6);
    }
}

#[test]
fn embedding_layer_bounds() {
    let m = tiny_model();
    let n = m.config().num_layers;
    assert!(matches!(
        embed_sentences(&m, &RenderConfig::default(), &["a"], n + 1),
        Err(AnalysisError::Layer { .. })
    ));
    assert!(embed_sentences(&m, &RenderConfig::default(), &["a"], n).is_ok());
}

#[test]
fn embed_corpus_counts_rows_and_indices() {
    let m = tiny_model();
    let recs: Vec<(String, String)> = toy::smoke_corpus().into_iter().map(|r| (r.lang, r.text)).collect();
    let layers: Vec<usize> = (0..=m.config().num_layers).collect();
    let e = embed_corpus(&m, &RenderConfig::default(), &recs, &layers).unwrap();
    assert_eq!(e.len(), recs.len() * layers.len());
    let eng: Vec<usize> = e.iter().filter(|x| x.lang == "eng" && x.layer == 0).map(|x| x.index).collect();
    assert_eq!(eng, [0, 1]);
}

#[test]
fn centroid_cases() {
    let one = language_centroids(&[("eng".into(), vec![vec![1.0, 2.0]])]).unwrap();
    assert_eq!(one[0].1, [1.0, 2.0]);
    let anti = language_centroids(&[("x".into(), vec![vec![0.6, -0.8], vec![-0.6, 0.8]])]).unwrap();
    assert_eq!(anti[0].1, [0.0, 0.0]);
    assert!(matches!(
        language_centroids(&[("hin".into(), vec![])]),
        Err(AnalysisError::EmptyGroup { lang }) if lang == "hin"
    ));

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let groups: Vec<(String, Vec<Vec<f64>>)> = (0..4)
        .map(|g| {
            let n = rng.random_range(1..20);
            (format!("l{g}"), (0..n).map(|_| (0..5).map(|_| rng.random_range(-3.0..3.0)).collect()).collect())
        })
        .collect();
    for ((lang, c), (l2, vecs)) in language_centroids(&groups).unwrap().iter().zip(&groups) {
        assert_eq!(lang, l2);
        for j in 0..5 {
            let mut s = 0.0;
            for v in vecs {
                s += v[j];
            }
            assert_abs_diff_eq!(c[j], s / vecs.len() as f64, epsilon = 1e-6);
        }
    }
}

#[test]
fn embeddings_tsv_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let e: Vec<SentenceEmbedding> = (0..6)
        .map(|i| SentenceEmbedding {
            lang: if i < 3 { "eng" } else { "zho" }.into(),
            index: i % 3,
            layer: i % 2,
            vector: (0..4).map(|_| rng.random_range(-10.0f32..10.0) as f64).collect(),
        })
        .collect();
    let mut buf = Vec::new();
    assert_eq!(write_embeddings_tsv(&mut buf, &e).unwrap(), 6);
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("lang\tsentence_index\tlayer\td0\td1\td2\td3\n"));
    assert_eq!(text.lines().count(), 7);
    let back = read_embeddings_tsv(buf.as_slice()).unwrap();
    for (a, b) in e.iter().zip(&back) {
        assert_eq!((&a.lang, a.index, a.layer), (&b.lang, b.index, b.layer));
        // f32 values survive 9 significant digits exactly
        let af: Vec<f32> = a.vector.iter().map(|&x| x as f32).collect();
        let bf: Vec<f32> = b.vector.iter().map(|&x| x as f32).collect();
        assert_eq!(af, bf);
    }

    let mut empty = Vec::new();
    write_embeddings_tsv(&mut empty, &[]).unwrap();
    assert_eq!(String::from_utf8(empty).unwrap(), "lang\tsentence_index\tlayer\n");

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("e.tsv");
    export_embeddings(&p, &e).unwrap();
    assert_eq!(std::fs::read_to_string(dir.path().join("e.tsv.meta")).unwrap(), "rows\t6\ndim\t4\n");
    assert!(read_embeddings_tsv("nope\n".as_bytes()).is_err());
}

#[test]
fn report_csv_headers() {
    let mut buf = Vec::new();
    write_retrieval_csv(
        &mut buf,
        &[RetrievalRow {
            lang_pair: "eng-ukr".into(),
            layer: 3,
            recall_at_5: 0.5,
        }],
    )
    .unwrap();
    assert_eq!(String::from_utf8(buf).unwrap(), "lang_pair,layer,recall_at_5\neng-ukr,3,0.5\n");
    let mut buf = Vec::new();
    write_probe_csv(
        &mut buf,
        &[ProbeRow {
            task: "case".into(),
            lang: "ukr".into(),
            layer: 0,
            accuracy: 1.0,
        }],
    )
    .unwrap();
    assert_eq!(String::from_utf8(buf).unwrap(), "task,lang,layer,accuracy\ncase,ukr,0,1.0\n");
}

#[test]
fn probe_tsv_reader() {
    let rows = read_probe_tsv("кота\tAcc\n\nкіт\tNom\n".as_bytes()).unwrap();
    assert_eq!(rows, [("кота".to_string(), "Acc".to_string()), ("кіт".to_string(), "Nom".to_string())]);
    assert!(matches!(read_probe_tsv("a b\n".as_bytes()), Err(AnalysisError::Format { line: 1, .. })));
}

fn separable(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    // class = sign pattern of the first two coordinates, pushed away from the boundary
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for _ in 0..n {
        let y = rng.random_range(0..3usize);
        let center = [[2.0, 0.0], [-1.0, 1.7], [-1.0, -1.7]][y];
        let mut x: Vec<f64> = (0..6).map(|_| rng.random_range(-0.3..0.3)).collect();
        x[0] += center[0];
        x[1] += center[1];
        xs.push(x);
        ys.push(y);
    }
    (xs, ys)
}

#[test]
fn probe_separates_constructed_classes() {
    let (tx, ty) = separable(300, 1);
    let (vx, vy) = separable(100, 2);
    let (sx, sy) = separable(100, 3);
    let r = train_probe((&tx, &ty), (&vx, &vy), (&sx, &sy), 3, &ProbeConfig::default()).unwrap();
    assert_eq!(r.test_accuracy, 1.0);
    assert_eq!(r.val_accuracy, 1.0);
}

#[test]
fn probe_on_random_labels_is_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut gen = |n| -> (Vec<Vec<f64>>, Vec<usize>) {
        (0..n)
            .map(|_| ((0..8).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(), rng.random_range(0..2)))
            .unzip()
    };
    let (tx, ty) = gen(1000);
    let (vx, vy) = gen(300);
    let (sx, sy) = gen(1000);
    let cfg = ProbeConfig {
        steps: 200,
        ..ProbeConfig::default()
    };
    let r = train_probe((&tx, &ty), (&vx, &vy), (&sx, &sy), 2, &cfg).unwrap();
    // 1000 Bernoulli(1/2) trials: ±0.05 is more than 3 standard deviations
    assert!((0.45..=0.55).contains(&r.test_accuracy), "{}", r.test_accuracy);
}

#[test]
fn probe_is_label_permutation_invariant() {
    let (tx, ty) = separable(120, 4);
    let (vx, vy) = separable(40, 5);
    let (sx, sy) = separable(40, 6);
    let perm = [2usize, 0, 1];
    let p = |ys: &[usize]| ys.iter().map(|&y| perm[y]).collect::<Vec<_>>();
    let cfg = ProbeConfig {
        steps: 40,
        eval_every: 5,
        ..ProbeConfig::default()
    };
    let a = train_probe((&tx, &ty), (&vx, &vy), (&sx, &sy), 3, &cfg).unwrap();
    let b = train_probe((&tx, &p(&ty)), (&vx, &p(&vy)), (&sx, &p(&sy)), 3, &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn probe_layerwise_constant_labels() {
    let m = tiny_model();
    let split = |ws: &[&str]| ws.iter().map(|w| (w.to_string(), "Nom".to_string())).collect::<Vec<_>>();
    let data = ProbeDataset {
        task: "case".into(),
        lang: "ukr".into(),
        train: split(&["кіт", "пес", "дім"]),
        val: split(&["ліс"]),
        test: split(&["сад", "міст"]),
    };
    let layers: Vec<usize> = (0..=m.config().num_layers).collect();
    let cfg = ProbeConfig {
        steps: 5,
        ..ProbeConfig::default()
    };
    let rows = probe_layerwise(&m, &data, &layers, &RenderConfig::default(), &cfg).unwrap();
    assert_eq!(rows.len(), layers.len());
    assert!(rows.iter().all(|r| r.accuracy == 1.0 && r.task == "case"));
    let empty = ProbeDataset { val: vec![], ..data };
    assert!(probe_layerwise(&m, &empty, &layers, &RenderConfig::default(), &cfg).is_err());
}

#[test]
fn probe_layer_zero_sees_projected_patches() {
    // layer 0 features are the patch-projection output plus positions, so a
    // word's feature equals the mean of its embedding rows
    let m = tiny_model();
    let feats = probe_features(&m, &RenderConfig::default(), &["хата"], &[0]).unwrap();
    let r = renderer_for(&m, &RenderConfig::default()).unwrap();
    let seq = r.render_words(&["хата"]).unwrap();
    let mut g = crate::numerics::Graph::no_grad();
    let p = m.bind_frozen(&mut g);
    let emb = m.embed_patches(&mut g, &p, &seq).unwrap();
    let (lo, hi) = seq.word_spans[0];
    let want = mean_rows(g.value(emb), 1 + lo, 1 + hi);
    for (a, b) in feats[0][0].iter().zip(&want) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-6);
    }
}

#[test]
fn layer_list_parsing() {
    assert_eq!(parse_layers("0..12").unwrap().len(), 13);
    assert_eq!(parse_layers("0..=2").unwrap(), [0, 1, 2]);
    assert_eq!(parse_layers("1, 3").unwrap(), [1, 3]);
    assert!(parse_layers("3..1").is_err());
    assert!(parse_layers("x").is_err());
}

#[test]
fn layerwise_retrieval_self_pairs() {
    let m = tiny_model();
    let eng = toy::parallel_side("eng").unwrap();
    let rows = layerwise_retrieval(&m, &RenderConfig::default(), &eng[..20], &eng[..20], &[0, 2], RECALL_K).unwrap();
    assert_eq!(rows, [(0, 1.0), (2, 1.0)]);
}

proptest! {
    #[test]
    fn retrieval_is_rotation_invariant(seed in 0u64..500, angle in 0.0f64..6.28) {
        // rotate the first two coordinates of every vector
        let q = unit_vectors(12, 3, seed);
        let c = unit_vectors(12, 3, seed ^ 0xff);
        let rot = |v: &Vec<f64>| {
            let (s, co) = angle.sin_cos();
            vec![co * v[0] - s * v[1], s * v[0] + co * v[1], v[2]]
        };
        let rq: Vec<_> = q.iter().map(rot).collect();
        let rc: Vec<_> = c.iter().map(rot).collect();
        for k in [1, 3, 5] {
            let a = recall_at_k(&q, &c, k).unwrap();
            let b = recall_at_k(&rq, &rc, k).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn recall_is_monotone_in_k(seed in 0u64..500, n in 1usize..25) {
        let q = unit_vectors(n, 4, seed);
        let c = unit_vectors(n, 4, seed + 7);
        let mut prev = 0.0;
        for k in 0..=n {
            let r = recall_at_k(&q, &c, k).unwrap();
            prop_assert!(r >= prev);
            prev = r;
        }
        prop_assert_eq!(prev, 1.0);
    }
}
