use std::io::{BufRead, Write};

use super::{format_err, DataError};

/// One syntactic word; the ten CoNLL-U columns kept verbatim except for the
/// parsed `id` and `head`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConlluToken {
    pub id: usize,
    pub form: String,
    pub lemma: String,
    pub upos: String,
    pub xpos: String,
    pub feats: String,
    /// 0 = ROOT.
    pub head: usize,
    pub deprel: String,
    pub deps: String,
    pub misc: String,
}

impl ConlluToken {
    /// Token with `_` in every column that is not given.
    pub fn new(id: usize, form: &str, head: usize, deprel: &str) -> Self {
        Self {
            id,
            form: form.to_string(),
            lemma: "_".into(),
            upos: "_".into(),
            xpos: "_".into(),
            feats: "_".into(),
            head,
            deprel: deprel.to_string(),
            deps: "_".into(),
            misc: "_".into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConlluSentence {
    /// Comment lines without the leading `#`.
    pub comments: Vec<String>,
    pub tokens: Vec<ConlluToken>,
}

impl ConlluSentence {
    pub fn forms(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.form.as_str()).collect()
    }

    pub fn heads(&self) -> Vec<usize> {
        self.tokens.iter().map(|t| t.head).collect()
    }

    pub fn deprels(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.deprel.as_str()).collect()
    }
}

/// Parses CoNLL-U. Multiword-token ranges (`1-2`) and empty nodes (`1.1`)
/// are skipped; comments are kept; a blank line ends a sentence.
pub fn parse_conllu<R: BufRead>(reader: R) -> Result<Vec<ConlluSentence>, DataError> {
    let mut out = Vec::new();
    let mut cur = ConlluSentence::default();
    let mut start = 1;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let n = i + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            if !cur.tokens.is_empty() || !cur.comments.is_empty() {
                finish(std::mem::take(&mut cur), start, &mut out)?;
            }
            start = n + 1;
            continue;
        }
        if let Some(c) = line.strip_prefix('#') {
            cur.comments.push(c.to_string());
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(format_err(n, format!("expected 10 tab-separated columns, found {}", cols.len())));
        }
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        let id = cols[0]
            .parse::<usize>()
            .map_err(|_| format_err(n, format!("token id `{}` is not an integer", cols[0])))?;
        let head = cols[6]
            .parse::<usize>()
            .map_err(|_| format_err(n, format!("head `{}` is not an integer", cols[6])))?;
        if id != cur.tokens.len() + 1 {
            return Err(format_err(n, format!("token id {id} breaks the 1..n sequence")));
        }
        if head == id {
            return Err(format_err(n, format!("token {id} is its own head")));
        }
        cur.tokens.push(ConlluToken {
            id,
            form: cols[1].into(),
            lemma: cols[2].into(),
            upos: cols[3].into(),
            xpos: cols[4].into(),
            feats: cols[5].into(),
            head,
            deprel: cols[7].into(),
            deps: cols[8].into(),
            misc: cols[9].into(),
        });
    }
    if !cur.tokens.is_empty() || !cur.comments.is_empty() {
        finish(cur, start, &mut out)?;
    }
    Ok(out)
}

fn finish(s: ConlluSentence, line: usize, out: &mut Vec<ConlluSentence>) -> Result<(), DataError> {
    if s.tokens.is_empty() {
        return Err(format_err(line, "sentence without tokens"));
    }
    let n = s.tokens.len();
    if let Some(t) = s.tokens.iter().find(|t| t.head > n) {
        return Err(format_err(line, format!("head {} of token {} exceeds sentence length {n}", t.head, t.id)));
    }
    out.push(s);
    Ok(())
}

pub fn write_conllu<W: Write>(mut w: W, sentences: &[ConlluSentence]) -> Result<(), DataError> {
    for s in sentences {
        for c in &s.comments {
            writeln!(w, "#{c}")?;
        }
        for t in &s.tokens {
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                t.id, t.form, t.lemma, t.upos, t.xpos, t.feats, t.head, t.deprel, t.deps, t.misc
            )?;
        }
        writeln!(w)?;
    }
    Ok(())
}
