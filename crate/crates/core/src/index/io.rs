//! SSRI index file: magic "SSRI", u32 version=1, u32 h, u32 block_size,
//! u64 doc_count; a posting-list section (u32 list count, then per list:
//! u32 neuron id, u32 block count, per block: u32 length, f32 upper bound,
//! postings as (u64 doc id, f32 impact)); a doc-store section (per doc:
//! u64 id, u32 token count, u8 global flag, per token: u32 nnz, nnz x
//! (u32 id, f32 value), then the global code if flagged); and a CRC32
//! footer. All little-endian. Lists and docs are written in ascending order,
//! so save -> load -> save is byte-identical.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::binio::{CheckedReader, CheckedWriter};
use crate::error::{Error, Result};
use crate::index::{Block, DocStore, InvertedIndex, Posting, PostingList, StoredCode, StoredDoc};

const MAGIC: &[u8; 4] = b"SSRI";
const VERSION: u32 = 1;

pub fn save_index(index: &InvertedIndex, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = CheckedWriter::new(BufWriter::new(file));
    w.write_all(MAGIC)?;
    w.write_u32(VERSION)?;
    w.write_u32(index.h())?;
    w.write_u32(index.block_size())?;
    w.write_u64(index.doc_count())?;

    w.write_u32(index.lists().count() as u32)?;
    for list in index.lists() {
        w.write_u32(list.neuron_id())?;
        w.write_u32(list.blocks().len() as u32)?;
        for block in list.blocks() {
            w.write_u32(block.postings().len() as u32)?;
            w.write_f32(block.upper_bound())?;
            for p in block.postings() {
                w.write_u64(p.doc_id)?;
                w.write_f32(p.mu)?;
            }
        }
    }

    for doc in index.store().docs() {
        w.write_u64(doc.doc_id)?;
        w.write_u32(doc.tokens.len() as u32)?;
        w.write_u8(u8::from(doc.global.is_some()))?;
        for token in &doc.tokens {
            write_code(&mut w, token)?;
        }
        if let Some(g) = &doc.global {
            write_code(&mut w, g)?;
        }
    }
    w.finish_with_crc()
}

fn write_code(w: &mut CheckedWriter<BufWriter<File>>, code: &StoredCode) -> Result<()> {
    w.write_u32(code.nnz() as u32)?;
    for (i, &id) in code.ids().iter().enumerate() {
        w.write_u32(id)?;
        w.write_f32(code.values()[i])?;
    }
    Ok(())
}

pub fn load_index(path: &Path) -> Result<InvertedIndex> {
    let file = File::open(path)?;
    let mut r = CheckedReader::new(BufReader::new(file));
    r.set_section("index header");
    r.expect_magic(MAGIC)?;
    r.expect_version(VERSION)?;
    let h = r.read_u32()?;
    let block_size = r.read_u32()?;
    let doc_count = r.read_u64()?;
    if h == 0 || block_size == 0 {
        return Err(Error::corrupt(
            "index header",
            format!("implausible h={h}, block_size={block_size}"),
        ));
    }

    r.set_section("posting lists");
    let list_count = r.read_u32()?;
    let mut lists: BTreeMap<u32, PostingList> = BTreeMap::new();
    let mut prev_neuron: Option<u32> = None;
    for _ in 0..list_count {
        let neuron_id = r.read_u32()?;
        if neuron_id >= h {
            return Err(Error::corrupt(
                "posting lists",
                format!("neuron id {neuron_id} out of range for h={h}"),
            ));
        }
        if let Some(prev) = prev_neuron {
            if neuron_id <= prev {
                return Err(Error::corrupt(
                    "posting lists",
                    format!("neuron ids not strictly increasing at {neuron_id}"),
                ));
            }
        }
        prev_neuron = Some(neuron_id);
        let block_count = r.read_u32()? as usize;
        if block_count == 0 {
            return Err(Error::corrupt(
                "posting lists",
                format!("neuron {neuron_id} has zero blocks"),
            ));
        }
        let mut blocks = Vec::with_capacity(block_count);
        let mut prev_doc: Option<u64> = None;
        for bi in 0..block_count {
            let len = r.read_u32()? as usize;
            let is_tail = bi + 1 == block_count;
            if len == 0 || (!is_tail && len != block_size as usize) || len > block_size as usize {
                return Err(Error::corrupt(
                    "posting lists",
                    format!("neuron {neuron_id} block {bi} has bad length {len}"),
                ));
            }
            let upper_bound = r.read_f32()?;
            let mut postings = Vec::with_capacity(len);
            let mut max_mu = f32::NEG_INFINITY;
            for _ in 0..len {
                let doc_id = r.read_u64()?;
                let mu = r.read_f32()?;
                if let Some(prev) = prev_doc {
                    if doc_id <= prev {
                        return Err(Error::corrupt(
                            "posting lists",
                            format!(
                                "neuron {neuron_id}: doc ids not strictly increasing at {doc_id}"
                            ),
                        ));
                    }
                }
                prev_doc = Some(doc_id);
                if mu <= 0.0 || !mu.is_finite() {
                    return Err(Error::corrupt(
                        "posting lists",
                        format!("neuron {neuron_id} doc {doc_id}: bad impact {mu}"),
                    ));
                }
                max_mu = max_mu.max(mu);
                postings.push(Posting { doc_id, mu });
            }
            if upper_bound != max_mu {
                return Err(Error::corrupt(
                    "posting lists",
                    format!(
                        "neuron {neuron_id} block {bi}: upper bound {upper_bound} != max {max_mu}"
                    ),
                ));
            }
            blocks.push(Block {
                postings,
                upper_bound,
            });
        }
        lists.insert(neuron_id, PostingList { neuron_id, blocks });
    }

    r.set_section("doc store");
    let mut store = DocStore::default();
    let mut prev_doc: Option<u64> = None;
    for _ in 0..doc_count {
        let doc_id = r.read_u64()?;
        if let Some(prev) = prev_doc {
            if doc_id <= prev {
                return Err(Error::corrupt(
                    "doc store",
                    format!("doc ids not strictly increasing at {doc_id}"),
                ));
            }
        }
        prev_doc = Some(doc_id);
        let token_count = r.read_u32()? as usize;
        if token_count == 0 {
            return Err(Error::corrupt(
                "doc store",
                format!("doc {doc_id} has zero tokens"),
            ));
        }
        let has_global = match r.read_u8()? {
            0 => false,
            1 => true,
            other => {
                return Err(Error::corrupt(
                    "doc store",
                    format!("doc {doc_id}: bad global flag {other}"),
                ))
            }
        };
        let mut tokens = Vec::with_capacity(token_count);
        for _ in 0..token_count {
            tokens.push(read_code(&mut r, h, doc_id)?);
        }
        let global = if has_global {
            Some(read_code(&mut r, h, doc_id)?)
        } else {
            None
        };
        store.push(StoredDoc {
            doc_id,
            tokens,
            global,
        });
    }
    r.finish_with_crc()?;

    // Posting/doc cross-references.
    for list in lists.values() {
        for p in list.postings() {
            if store.get(p.doc_id).is_none() {
                return Err(Error::corrupt(
                    "doc store",
                    format!(
                        "neuron {}: posting references missing doc {}",
                        list.neuron_id(),
                        p.doc_id
                    ),
                ));
            }
        }
    }
    Ok(InvertedIndex::from_parts(h, block_size, lists, store))
}

fn read_code(r: &mut CheckedReader<BufReader<File>>, h: u32, doc_id: u64) -> Result<StoredCode> {
    let nnz = r.read_u32()? as usize;
    if nnz > h as usize {
        return Err(Error::corrupt(
            "doc store",
            format!("doc {doc_id}: code nnz {nnz} exceeds h={h}"),
        ));
    }
    let mut ids = Vec::with_capacity(nnz);
    let mut values = Vec::with_capacity(nnz);
    let mut prev: Option<u32> = None;
    for _ in 0..nnz {
        let id = r.read_u32()?;
        let v = r.read_f32()?;
        if id >= h {
            return Err(Error::corrupt(
                "doc store",
                format!("doc {doc_id}: neuron id {id} out of range"),
            ));
        }
        if let Some(p) = prev {
            if id <= p {
                return Err(Error::corrupt(
                    "doc store",
                    format!("doc {doc_id}: code ids not strictly increasing"),
                ));
            }
        }
        prev = Some(id);
        if v <= 0.0 || !v.is_finite() {
            return Err(Error::corrupt(
                "doc store",
                format!("doc {doc_id}: bad code value {v} at neuron {id}"),
            ));
        }
        ids.push(id);
        values.push(v);
    }
    Ok(StoredCode::from_raw(ids, values))
}
