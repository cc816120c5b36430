//! Small built-in corpora for smoke tests, the acceptance suite and CLI
//! fallbacks. Sentences are templated, not real corpus data.

use super::{ClsExample, ConlluSentence, ConlluToken, CorpusRecord, NerExample};

pub const PARALLEL_LANGS: [&str; 4] = ["eng", "ukr", "hin", "zho"];

// (eng, ukr, hin, zho)
const SUBJECTS: [(&str, &str, &str, &str); 5] = [
    ("the cat", "кіт", "बिल्ली", "猫"),
    ("the dog", "собака", "कुत्ता", "狗"),
    ("the teacher", "вчитель", "शिक्षक", "老师"),
    ("my brother", "мій брат", "मेरा भाई", "我哥哥"),
    ("the child", "дитина", "बच्चा", "孩子"),
];
const VERBS: [(&str, &str, &str, &str); 5] = [
    ("sees", "бачить", "देखता है", "看"),
    ("likes", "любить", "पसंद करता है", "喜欢"),
    ("eats", "їсть", "खाता है", "吃"),
    ("finds", "знаходить", "ढूंढता है", "找到"),
    ("wants", "хоче", "चाहता है", "想要"),
];
const OBJECTS: [(&str, &str, &str, &str); 4] = [
    ("an apple", "яблуко", "सेब", "苹果"),
    ("the bread", "хліб", "रोटी", "面包"),
    ("a book", "книгу", "किताब", "书"),
    ("the water", "воду", "पानी", "水"),
];

/// 100 aligned sentences; entry `i` of every language is a translation of
/// entry `i` of the others. Hindi is verb-final, Chinese unspaced.
pub fn parallel_corpus() -> Vec<[String; 4]> {
    let mut out = Vec::with_capacity(100);
    for s in SUBJECTS {
        for v in VERBS {
            for o in OBJECTS {
                out.push([
                    format!("{} {} {}", s.0, v.0, o.0),
                    format!("{} {} {}", s.1, v.1, o.1),
                    format!("{} {} {}", s.2, o.2, v.2),
                    format!("{}{}{}", s.3, v.3, o.3),
                ]);
            }
        }
    }
    out
}

/// Column of [`parallel_corpus`] for one language code.
pub fn parallel_side(lang: &str) -> Option<Vec<String>> {
    let col = PARALLEL_LANGS.iter().position(|l| *l == lang)?;
    Some(parallel_corpus().into_iter().map(|row| row[col].clone()).collect())
}

/// Eight short sentences, two per language.
pub fn smoke_corpus() -> Vec<CorpusRecord> {
    let rows = parallel_corpus();
    let mut out = Vec::new();
    for i in [0, 37] {
        for (l, lang) in PARALLEL_LANGS.iter().enumerate() {
            out.push(CorpusRecord::new(rows[i][l].clone(), *lang));
        }
    }
    out
}

/// Sixteen dependency-annotated sentences over four tree shapes.
pub fn treebank() -> Vec<ConlluSentence> {
    let nouns = ["cat", "dog", "teacher", "child"];
    let verbs = ["sleeps", "sees", "likes", "finds"];
    let objs = ["bread", "water", "book", "apple"];
    let mut out = Vec::new();
    for i in 0..16 {
        let n = nouns[i % 4];
        let v = verbs[(i / 4) % 4];
        let o = objs[(i + 1) % 4];
        let words: Vec<(&str, usize, &str)> = match i % 4 {
            0 => vec![(n, 2, "nsubj"), (v, 0, "root")],
            1 => vec![("the", 2, "det"), (n, 3, "nsubj"), (v, 0, "root"), ("a", 5, "det"), (o, 3, "obj")],
            2 => vec![(n, 2, "nsubj"), (v, 0, "root"), (o, 2, "obj")],
            _ => vec![("the", 2, "det"), (n, 3, "nsubj"), (v, 0, "root")],
        };
        let text = words.iter().map(|w| w.0).collect::<Vec<_>>().join(" ");
        out.push(ConlluSentence {
            comments: vec![format!(" sent_id = toy-{i}"), format!(" text = {text}")],
            tokens: words
                .iter()
                .enumerate()
                .map(|(k, &(f, h, r))| ConlluToken::new(k + 1, f, h, r))
                .collect(),
        });
    }
    out
}

/// Thirty-two topic-labelled sentences, eight per label.
pub fn classification() -> Vec<ClsExample> {
    let topics: [(&str, [&str; 8]); 4] = [
        ("sport", ["football", "tennis", "the match", "the goal", "a race", "the coach", "the team", "a medal"]),
        ("food", ["soup", "rice", "the bread", "cheese", "an apple", "the cake", "fresh fish", "hot tea"]),
        ("music", ["a song", "the piano", "guitar", "the choir", "a concert", "the drums", "violin", "an opera"]),
        ("travel", ["the train", "a flight", "the hotel", "a passport", "the airport", "a map", "the harbor", "a ticket"]),
    ];
    let frames = ["we talked about", "she loves", "they wrote about", "he asked about"];
    let mut out = Vec::new();
    for k in 0..8 {
        for (label, words) in &topics {
            out.push(ClsExample {
                text: format!("{} {}", frames[k % 4], words[k]),
                label: (*label).to_string(),
            });
        }
    }
    out
}

/// Sixteen BIO-tagged sentences with PER and LOC entities.
pub fn ner() -> Vec<NerExample> {
    let people = [("Anna", None), ("Olek", Some("Shevchenko")), ("Ravi", None), ("Mei", Some("Lin"))];
    let places = [("Paris", None), ("Kyiv", None), ("New", Some("Delhi")), ("Hong", Some("Kong"))];
    let mut out = Vec::new();
    for i in 0..16 {
        let (p0, p1) = people[i % 4];
        let (l0, l1) = places[(i / 4) % 4];
        let mut words = vec![p0.to_string()];
        let mut tags = vec!["B-PER".to_string()];
        if let Some(p1) = p1 {
            words.push(p1.into());
            tags.push("I-PER".into());
        }
        let verb = if i % 2 == 0 { ["visited"].as_slice() } else { ["lives", "in"].as_slice() };
        for w in verb {
            words.push((*w).into());
            tags.push("O".into());
        }
        words.push(l0.into());
        tags.push("B-LOC".into());
        if let Some(l1) = l1 {
            words.push(l1.into());
            tags.push("I-LOC".into());
        }
        out.push(NerExample { words, tags });
    }
    out
}
