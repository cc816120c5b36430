use std::collections::HashMap;

use proptest::prelude::*;

use super::*;

const CONLLU: &str = "# sent_id = 1
# text = Don't go
1-2\tDon't\t_\t_\t_\t_\t_\t_\t_\t_
1\tDo\tdo\tAUX\t_\t_\t3\taux\t_\t_
2\tn't\tnot\tPART\t_\t_\t3\tadvmod\t_\t_
3\tgo\tgo\tVERB\t_\t_\t0\troot\t_\tSpaceAfter=No
3.1\tgone\t_\t_\t_\t_\t_\t_\t_\t_

1\tHi\thi\tINTJ\t_\t_\t0\troot\t_\t_
";

#[test]
fn conllu_skips_ranges_and_empty_nodes() {
    let s = parse_conllu(CONLLU.as_bytes()).unwrap();
    assert_eq!(s.len(), 2);
    assert_eq!(s[0].forms(), ["Do", "n't", "go"]);
    assert_eq!(s[0].heads(), [3, 3, 0]);
    assert_eq!(s[0].deprels(), ["aux", "advmod", "root"]);
    assert_eq!(s[0].comments, [" sent_id = 1", " text = Don't go"]);
    assert_eq!(s[0].tokens[2].misc, "SpaceAfter=No");
    assert_eq!(s[1].forms(), ["Hi"]);
}

#[test]
fn conllu_round_trip() {
    let s = parse_conllu(CONLLU.as_bytes()).unwrap();
    let mut buf = Vec::new();
    write_conllu(&mut buf, &s).unwrap();
    assert_eq!(parse_conllu(buf.as_slice()).unwrap(), s);

    let tb = toy::treebank();
    let mut buf = Vec::new();
    write_conllu(&mut buf, &tb).unwrap();
    assert_eq!(parse_conllu(buf.as_slice()).unwrap(), tb);
}

#[test]
fn conllu_errors_carry_line_numbers() {
    let cases = [
        ("1\tA\t_\t_\t_\t_\t0\troot\t_\n", 1),
        ("# c\n1\tA\t_\t_\t_\t_\tx\troot\t_\t_\n", 2),
        ("1\tA\t_\t_\t_\t_\t0\troot\t_\t_\n3\tB\t_\t_\t_\t_\t1\tdep\t_\t_\n", 2),
        ("1\tA\t_\t_\t_\t_\t1\troot\t_\t_\n", 1),
    ];
    for (text, line) in cases {
        match parse_conllu(text.as_bytes()) {
            Err(DataError::Format { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
            other => panic!("{text:?}: {other:?}"),
        }
    }
    assert!(matches!(
        parse_conllu("1\tA\t_\t_\t_\t_\t5\troot\t_\t_\n".as_bytes()),
        Err(DataError::Format { .. })
    ));
}

#[test]
fn bio_repairs_orphan_inside_tags() {
    let text = "Anna\tI-PER\nlives\tO\nin\tO\nNew\tB-LOC\nDelhi\tI-LOC\nand\tO\nRome\tI-PER\n\nx\tI-LOC\ny\tI-PER\n";
    let f = read_bio(text.as_bytes()).unwrap();
    assert_eq!(f.examples.len(), 2);
    assert_eq!(f.repairs, 4);
    assert_eq!(f.examples[0].tags, ["B-PER", "O", "O", "B-LOC", "I-LOC", "O", "B-PER"]);
    assert_eq!(f.examples[1].tags, ["B-LOC", "B-PER"]);
}

#[test]
fn bio_edge_cases() {
    let f = read_bio("".as_bytes()).unwrap();
    assert!(f.examples.is_empty());
    assert_eq!(f.repairs, 0);
    assert!(matches!(read_bio("word\n".as_bytes()), Err(DataError::Format { line: 1, .. })));
    assert!(matches!(read_bio("a\tO\nb\tX-PER\n".as_bytes()), Err(DataError::Format { line: 2, .. })));
    let (t, r) = repair_bio(&["B-PER", "I-PER", "I-PER", "O", "I-LOC", "I-LOC"]);
    assert_eq!(t, ["B-PER", "I-PER", "I-PER", "O", "B-LOC", "I-LOC"]);
    assert_eq!(r, 1);
}

#[test]
fn cls_tsv() {
    let ex = read_cls_tsv("pos\tgreat film\n\nneg\tdull\tand long\n".as_bytes()).unwrap();
    assert_eq!(ex.len(), 2);
    assert_eq!(ex[1].label, "neg");
    assert_eq!(ex[1].text, "dull\tand long");
    assert!(matches!(read_cls_tsv("a\nb\tc\n".as_bytes()), Err(DataError::Format { line: 1, .. })));
}

#[test]
fn corpus_jsonl() {
    let recs = toy::smoke_corpus();
    let mut buf = Vec::new();
    write_corpus(&mut buf, &recs).unwrap();
    assert_eq!(read_corpus(buf.as_slice()).unwrap(), recs);
    let bad = "{\"text\":\"a\",\"lang\":\"eng\"}\n{\"text\":\"b\"}\n";
    assert!(matches!(read_corpus(bad.as_bytes()), Err(DataError::Format { line: 2, .. })));
    let groups = group_by_lang(recs);
    assert_eq!(groups.len(), 4);
    assert!(groups.iter().all(|(_, v)| v.len() == 2));
}

#[test]
fn subsample_basics() {
    let items: Vec<usize> = (0..50).collect();
    let s = subsample(&items, 20, 3).unwrap();
    assert_eq!(s.len(), 20);
    assert!(s.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(s, subsample(&items, 20, 3).unwrap());
    assert_ne!(s, subsample(&items, 20, 4).unwrap());
    assert_eq!(subsample(&items, 50, 9).unwrap(), items);
    assert!(subsample(&items, 0, 9).unwrap().is_empty());
    assert!(matches!(
        subsample(&items, 51, 0),
        Err(DataError::Size { requested: 51, available: 50 })
    ));
}

#[test]
fn subsample_is_uniform() {
    // Each of 20 items should be kept with probability 5/20 over 10k seeds.
    let items: Vec<usize> = (0..20).collect();
    let mut counts = [0usize; 20];
    let draws = 10_000;
    for seed in 0..draws {
        for i in subsample(&items, 5, seed).unwrap() {
            counts[i] += 1;
        }
    }
    let expected = draws as f64 * 0.25;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // χ²(19) at p = 0.001 is 43.8.
    assert!(chi2 < 43.8, "chi2 {chi2}, counts {counts:?}");
}

fn four_langs(n: usize) -> Vec<(String, Vec<(usize, usize)>)> {
    (0..4).map(|l| (format!("l{l}"), (0..n).map(|i| (l, i)).collect())).collect()
}

#[test]
fn mixer_epoch_covers_every_sample_once() {
    let mut m = BatchMixer::new(four_langs(1000), 8, 11).unwrap();
    let mut seen = HashMap::new();
    let mut batches = 0;
    for batch in m.by_ref() {
        batches += 1;
        assert_eq!(batch.len(), 8);
        for s in &batch {
            assert_eq!(s.lang, s.item.0);
            *seen.entry(s.item).or_insert(0) += 1;
        }
        for l in 0..4 {
            assert_eq!(batch.iter().filter(|s| s.lang == l).count(), 2);
        }
    }
    assert_eq!(batches, 500);
    assert_eq!(seen.len(), 4000);
    assert!(seen.values().all(|&c| c == 1));
    assert!(matches!(m.next_batch(), Err(DataError::ExhaustedCorpus { .. })));
}

#[test]
fn mixer_equal_share_and_remainder() {
    let mut m = BatchMixer::new(four_langs(300), 256, 0).unwrap();
    let b = m.next_batch().unwrap();
    for l in 0..4 {
        assert_eq!(b.iter().filter(|s| s.lang == l).count(), 64);
    }
    // 10 = 3·3 + 1: one language gets a fourth slot, rotating with the seed.
    let mut extra = [0usize; 3];
    let corpora: Vec<_> = (0..3).map(|l| (format!("l{l}"), (0..10_000).collect::<Vec<usize>>())).collect();
    let mut m = BatchMixer::new(corpora, 10, 5).unwrap();
    for _ in 0..300 {
        let b = m.next_batch().unwrap();
        let counts: Vec<usize> = (0..3).map(|l| b.iter().filter(|s| s.lang == l).count()).collect();
        assert_eq!(counts.iter().sum::<usize>(), 10);
        let big = counts.iter().position(|&c| c == 4).unwrap();
        assert!(counts.iter().all(|&c| c == 3 || c == 4));
        extra[big] += 1;
    }
    assert!(extra.iter().all(|&e| e > 60), "{extra:?}");
}

#[test]
fn mixer_exhaustion_and_config() {
    let corpora = vec![("a".to_string(), vec![1, 2, 3]), ("b".to_string(), vec![4])];
    let mut m = BatchMixer::new(corpora.clone(), 2, 0).unwrap();
    m.next_batch().unwrap();
    match m.next_batch() {
        Err(DataError::ExhaustedCorpus { lang }) => assert_eq!(lang, "b"),
        other => panic!("{other:?}"),
    }
    let b = m.next_batch_cycling();
    assert_eq!(b.len(), 2);
    // Pools smaller than their share are cycled within a batch.
    let mut m = BatchMixer::new(vec![("a".to_string(), vec![1, 2]), ("b".to_string(), vec![3])], 8, 1).unwrap();
    for _ in 0..5 {
        let b = m.next_batch_cycling();
        assert_eq!(b.iter().filter(|s| s.lang == 0).count(), 4);
        assert_eq!(b.iter().filter(|s| s.item == 3).count(), 4);
    }
    assert!(matches!(BatchMixer::new(corpora.clone(), 1, 0), Err(DataError::Config(_))));
    assert!(matches!(BatchMixer::new(corpora, 0, 0), Err(DataError::Config(_))));
    assert!(matches!(
        BatchMixer::new(vec![("a".to_string(), Vec::<u8>::new())], 4, 0),
        Err(DataError::Config(_))
    ));
}

#[test]
fn mixer_single_language_is_plain() {
    let m = BatchMixer::new(vec![("eng".to_string(), (0..10).collect::<Vec<u32>>())], 4, 2).unwrap();
    let batches: Vec<_> = m.collect();
    assert_eq!(batches.iter().map(Vec::len).collect::<Vec<_>>(), [4, 4, 2]);
    let mut all: Vec<u32> = batches.into_iter().flatten().map(|s| s.item).collect();
    all.sort_unstable();
    assert_eq!(all, (0..10).collect::<Vec<_>>());
}

#[test]
fn mixer_is_seeded() {
    let a: Vec<_> = BatchMixer::new(four_langs(40), 8, 7).unwrap().collect();
    let b: Vec<_> = BatchMixer::new(four_langs(40), 8, 7).unwrap().collect();
    let c: Vec<_> = BatchMixer::new(four_langs(40), 8, 8).unwrap().collect();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn toy_corpora_shapes() {
    let p = toy::parallel_corpus();
    assert_eq!(p.len(), 100);
    for l in toy::PARALLEL_LANGS {
        let side = toy::parallel_side(l).unwrap();
        let mut uniq = side.clone();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), 100, "{l}");
    }
    assert!(toy::parallel_side("deu").is_none());
    assert_eq!(toy::smoke_corpus().len(), 8);
    assert_eq!(toy::treebank().len(), 16);
    assert_eq!(toy::classification().len(), 32);
    let ner = toy::ner();
    assert_eq!(ner.len(), 16);
    for ex in &ner {
        assert_eq!(ex.words.len(), ex.tags.len());
        assert_eq!(repair_bio(&ex.tags).1, 0);
    }
}

proptest! {
    #[test]
    fn subsample_is_ordered_subset(n in 0usize..200, frac in 0.0f64..=1.0, seed in any::<u64>()) {
        let items: Vec<usize> = (0..n).collect();
        let k = (n as f64 * frac) as usize;
        let s = subsample(&items, k, seed).unwrap();
        prop_assert_eq!(s.len(), k);
        prop_assert!(s.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn repair_is_idempotent(tags in prop::collection::vec(prop::sample::select(vec!["O", "B-A", "I-A", "B-B", "I-B"]), 0..20)) {
        let (once, _) = repair_bio(&tags);
        let (twice, r) = repair_bio(&once);
        prop_assert_eq!(r, 0);
        prop_assert_eq!(once, twice);
    }
}
