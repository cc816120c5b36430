use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{AnalysisError, SentenceEmbedding};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub task: String,
    pub lang: String,
    pub layer: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRow {
    pub lang_pair: String,
    pub layer: usize,
    pub recall_at_5: f64,
}

fn write_rows<W: Write, R: Serialize>(w: W, rows: &[R]) -> Result<(), AnalysisError> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_probe_csv<W: Write>(w: W, rows: &[ProbeRow]) -> Result<(), AnalysisError> {
    write_rows(w, rows)
}

pub fn write_retrieval_csv<W: Write>(w: W, rows: &[RetrievalRow]) -> Result<(), AnalysisError> {
    write_rows(w, rows)
}

// 9 significant digits round-trip every f32 exactly.
fn fmt_component(x: f64) -> String {
    format!("{x:.8e}")
}

fn header(prefix: &str, dim: usize) -> String {
    let mut h = prefix.to_string();
    for i in 0..dim {
        h.push_str(&format!("\td{i}"));
    }
    h
}

/// TSV with columns `lang, sentence_index, layer, d0..`; returns the number
/// of data rows written.
pub fn write_embeddings_tsv<W: Write>(mut w: W, embeddings: &[SentenceEmbedding]) -> Result<usize, AnalysisError> {
    let dim = embeddings.first().map_or(0, |e| e.vector.len());
    writeln!(w, "{}", header("lang\tsentence_index\tlayer", dim))?;
    for e in embeddings {
        if e.vector.len() != dim {
            return Err(AnalysisError::Config("embeddings of mixed dimension".into()));
        }
        write!(w, "{}\t{}\t{}", e.lang, e.index, e.layer)?;
        for &x in &e.vector {
            write!(w, "\t{}", fmt_component(x))?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(embeddings.len())
}

pub fn read_embeddings_tsv<R: BufRead>(r: R) -> Result<Vec<SentenceEmbedding>, AnalysisError> {
    let mut out = Vec::new();
    let mut lines = r.lines().enumerate();
    match lines.next().map(|(_, h)| h).transpose()? {
        Some(h) if h.starts_with("lang\tsentence_index\tlayer") => {}
        _ => {
            return Err(AnalysisError::Format {
                line: 1,
                msg: "missing embeddings header".into(),
            })
        }
    }
    for (i, line) in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let bad = |msg: &str| AnalysisError::Format {
            line: i + 1,
            msg: msg.to_string(),
        };
        let mut cols = line.split('\t');
        let lang = cols.next().ok_or_else(|| bad("missing lang"))?.to_string();
        let index = cols.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad sentence_index"))?;
        let layer = cols.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad layer"))?;
        let vector = cols
            .map(|s| s.parse::<f64>().map_err(|_| bad("bad component")))
            .collect::<Result<_, _>>()?;
        out.push(SentenceEmbedding {
            lang,
            index,
            layer,
            vector,
        });
    }
    Ok(out)
}

/// Centroid TSV: `lang, layer, d0..`.
pub fn write_centroids_tsv<W: Write>(mut w: W, centroids: &[(String, usize, Vec<f64>)]) -> Result<(), AnalysisError> {
    let dim = centroids.first().map_or(0, |c| c.2.len());
    writeln!(w, "{}", header("lang\tlayer", dim))?;
    for (lang, layer, v) in centroids {
        write!(w, "{lang}\t{layer}")?;
        for &x in v {
            write!(w, "\t{}", fmt_component(x))?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// `word<TAB>label` lines; blank lines skipped.
pub fn read_probe_tsv<R: BufRead>(r: R) -> Result<Vec<(String, String)>, AnalysisError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (w, l) = line.split_once('\t').ok_or(AnalysisError::Format {
            line: i + 1,
            msg: "expected word<TAB>label".into(),
        })?;
        if l.trim().is_empty() {
            return Err(AnalysisError::Format {
                line: i + 1,
                msg: "empty label".into(),
            });
        }
        out.push((w.to_string(), l.trim().to_string()));
    }
    Ok(out)
}

/// Writes the embeddings TSV plus a `<path>.meta` sidecar holding the row
/// count and dimension.
pub fn export_embeddings(path: &std::path::Path, embeddings: &[SentenceEmbedding]) -> Result<(), AnalysisError> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let rows = write_embeddings_tsv(f, embeddings)?;
    let dim = embeddings.first().map_or(0, |e| e.vector.len());
    let mut meta = path.as_os_str().to_owned();
    meta.push(".meta");
    std::fs::write(meta, format!("rows\t{rows}\ndim\t{dim}\n"))?;
    Ok(())
}
