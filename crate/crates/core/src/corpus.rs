//! SSRE embedding file: magic "SSRE", u32 version=1, u32 d, u64 doc_count,
//! then per document: u64 doc_id, u32 token_count, token_count x d f32
//! values, little-endian. The same container carries query embeddings
//! (query ids in the doc_id slot).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read};
use std::path::Path;

use crate::binio::{CheckedReader, CheckedWriter};
use crate::error::{Error, Result};
use crate::sparse::{DenseTokenBag, DenseVector};

const MAGIC: &[u8; 4] = b"SSRE";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub d: u32,
    pub docs: Vec<(u64, DenseTokenBag)>,
}

pub fn write_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = CheckedWriter::new(BufWriter::new(file));
    w.write_all(MAGIC)?;
    w.write_u32(VERSION)?;
    w.write_u32(corpus.d)?;
    w.write_u64(corpus.docs.len() as u64)?;
    for (doc_id, bag) in &corpus.docs {
        if bag.dim() != corpus.d as usize {
            return Err(Error::invalid_argument(format!(
                "doc {doc_id} has dim {} but corpus d={}",
                bag.dim(),
                corpus.d
            )));
        }
        w.write_u64(*doc_id)?;
        w.write_u32(bag.len() as u32)?;
        for token in bag.vectors() {
            for &v in token.values() {
                w.write_f32(v as f32)?;
            }
        }
    }
    w.flush_without_crc()
}

pub fn read_corpus(path: &Path) -> Result<Corpus> {
    let file = File::open(path)?;
    let mut r = CheckedReader::new(BufReader::new(file));
    r.set_section("corpus header");
    r.expect_magic(MAGIC)?;
    r.expect_version(VERSION)?;
    let d = r.read_u32()?;
    if d == 0 {
        return Err(Error::corrupt("corpus header", "d must be >= 1"));
    }
    let doc_count = r.read_u64()?;
    r.set_section("corpus docs");
    let mut docs = Vec::with_capacity(doc_count.min(1 << 20) as usize);
    let mut prev: Option<u64> = None;
    for _ in 0..doc_count {
        let doc_id = r.read_u64()?;
        if let Some(p) = prev {
            if doc_id <= p {
                return Err(Error::corrupt(
                    "corpus docs",
                    format!("doc ids not strictly increasing at {doc_id}"),
                ));
            }
        }
        prev = Some(doc_id);
        let token_count = r.read_u32()? as usize;
        if token_count == 0 {
            return Err(Error::corrupt(
                "corpus docs",
                format!("doc {doc_id} has zero tokens"),
            ));
        }
        let mut tokens = Vec::with_capacity(token_count);
        for _ in 0..token_count {
            let mut values = Vec::with_capacity(d as usize);
            for _ in 0..d {
                let v = r.read_f32()?;
                if !v.is_finite() {
                    return Err(Error::corrupt(
                        "corpus docs",
                        format!("doc {doc_id}: non-finite embedding value"),
                    ));
                }
                values.push(f64::from(v));
            }
            tokens.push(
                DenseVector::new(values)
                    .map_err(|e| Error::corrupt("corpus docs", format!("doc {doc_id}: {e}")))?,
            );
        }
        docs.push((
            doc_id,
            DenseTokenBag::new(tokens)
                .map_err(|e| Error::corrupt("corpus docs", format!("doc {doc_id}: {e}")))?,
        ));
    }
    r.expect_eof("corpus docs")?;
    Ok(Corpus { d, docs })
}

/// Text labels file: one `query_id<TAB>doc_id` line per relevant pair.
pub fn write_labels(labels: &[(u64, u64)], path: &Path) -> Result<()> {
    use std::io::Write;
    let mut out = BufWriter::new(File::create(path)?);
    for (query_id, doc_id) in labels {
        writeln!(out, "{query_id}\t{doc_id}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<Vec<(u64, u64)>> {
    let mut text = String::new();
    BufReader::new(File::open(path)?).read_to_string(&mut text)?;
    let mut labels = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let parse = |s: Option<&str>| -> Result<u64> {
            s.and_then(|x| x.trim().parse().ok()).ok_or_else(|| {
                Error::corrupt("labels", format!("line {}: expected two ids", lineno + 1))
            })
        };
        let q = parse(parts.next())?;
        let d = parse(parts.next())?;
        labels.push((q, d));
    }
    Ok(labels)
}
