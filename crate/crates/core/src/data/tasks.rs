use std::io::BufRead;

use super::{format_err, DataError};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NerExample {
    pub words: Vec<String>,
    pub tags: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClsExample {
    pub text: String,
    pub label: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NerFile {
    pub examples: Vec<NerExample>,
    /// `I-X` tags rewritten to `B-X` because no `B-X`/`I-X` preceded them.
    pub repairs: usize,
}

fn valid_tag(tag: &str) -> bool {
    tag == "O" || tag.strip_prefix("B-").or_else(|| tag.strip_prefix("I-")).is_some_and(|t| !t.is_empty())
}

/// Rewrites every `I-X` that does not continue an `X` entity into `B-X`.
pub fn repair_bio<S: AsRef<str>>(tags: &[S]) -> (Vec<String>, usize) {
    let mut out: Vec<String> = Vec::with_capacity(tags.len());
    let mut repairs = 0;
    for tag in tags {
        let tag = tag.as_ref();
        match tag.strip_prefix("I-") {
            Some(ty) => {
                let continues = out
                    .last()
                    .and_then(|prev| prev.strip_prefix("B-").or_else(|| prev.strip_prefix("I-")))
                    .is_some_and(|p| p == ty);
                if continues {
                    out.push(tag.to_string());
                } else {
                    out.push(format!("B-{ty}"));
                    repairs += 1;
                }
            }
            None => out.push(tag.to_string()),
        }
    }
    (out, repairs)
}

/// `word<TAB>tag` lines, examples separated by blank lines.
pub fn read_bio<R: BufRead>(reader: R) -> Result<NerFile, DataError> {
    let mut file = NerFile::default();
    let mut words = Vec::new();
    let mut tags: Vec<String> = Vec::new();
    let flush = |words: &mut Vec<String>, tags: &mut Vec<String>, file: &mut NerFile| {
        if !words.is_empty() {
            let (fixed, r) = repair_bio(tags);
            file.repairs += r;
            file.examples.push(NerExample {
                words: std::mem::take(words),
                tags: fixed,
            });
            tags.clear();
        }
    };
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let n = i + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(&mut words, &mut tags, &mut file);
            continue;
        }
        let (word, tag) = line
            .split_once('\t')
            .ok_or_else(|| format_err(n, "expected `word<TAB>tag`"))?;
        if word.is_empty() || tag.contains('\t') || !valid_tag(tag) {
            return Err(format_err(n, format!("malformed BIO line `{line}`")));
        }
        words.push(word.to_string());
        tags.push(tag.to_string());
    }
    flush(&mut words, &mut tags, &mut file);
    Ok(file)
}

/// `label<TAB>text` lines; blank lines are skipped.
pub fn read_cls_tsv<R: BufRead>(reader: R) -> Result<Vec<ClsExample>, DataError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let n = i + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let (label, text) = line
            .split_once('\t')
            .ok_or_else(|| format_err(n, "expected `label<TAB>text`"))?;
        if label.trim().is_empty() || text.trim().is_empty() {
            return Err(format_err(n, "empty label or text"));
        }
        out.push(ClsExample {
            text: text.to_string(),
            label: label.to_string(),
        });
    }
    Ok(out)
}
