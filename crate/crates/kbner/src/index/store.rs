//! On-disk index layout.
//!
//! `<dir>/manifest.json` records the format version, document count, average
//! field lengths, and a sha256 checksum of the document store.
//! `<dir>/docs.jsonl` holds one [`KbDocument`] per line in ordinal order, and
//! `<dir>/sentence.idx` / `<dir>/title.idx` are little-endian binary posting
//! files. Readers reject version mismatches and checksum failures.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Field, FieldIndex, IndexError, Posting, SearchIndex};
use crate::corpus::KbDocument;

pub const INDEX_FORMAT_VERSION: u32 = 1;
const IDX_MAGIC: &[u8; 4] = b"KBNI";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    doc_count: u64,
    corpus_checksum: String,
    sentence_avg_length: f64,
    title_avg_length: f64,
}

/// Path of the manifest inside an index directory.
pub fn index_manifest_path(dir: &Path) -> PathBuf {
    dir.join("manifest.json")
}

fn corrupt(msg: impl Into<String>) -> IndexError {
    IndexError::Corrupt(msg.into())
}

fn write_field(path: &Path, field: &FieldIndex) -> Result<(), IndexError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(IDX_MAGIC)?;
    w.write_all(&INDEX_FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(field.doc_count() as u64).to_le_bytes())?;
    w.write_all(&field.avg_doc_length().to_le_bytes())?;
    for &len in field.doc_lengths() {
        w.write_all(&len.to_le_bytes())?;
    }
    w.write_all(&(field.postings().len() as u64).to_le_bytes())?;
    for (term, postings) in field.postings() {
        w.write_all(&(term.len() as u32).to_le_bytes())?;
        w.write_all(term.as_bytes())?;
        w.write_all(&(postings.len() as u64).to_le_bytes())?;
        for p in postings {
            w.write_all(&p.doc.to_le_bytes())?;
            w.write_all(&p.tf.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct FieldReader<R> {
    inner: R,
}

impl<R: Read> FieldReader<R> {
    fn u32(&mut self) -> Result<u32, IndexError> {
        let mut buf = [0u8; 4];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| corrupt("truncated index file"))?;
        Ok(u32::from_le_bytes(buf))
    }

    fn u64(&mut self) -> Result<u64, IndexError> {
        let mut buf = [0u8; 8];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| corrupt("truncated index file"))?;
        Ok(u64::from_le_bytes(buf))
    }

    fn f64(&mut self) -> Result<f64, IndexError> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn string(&mut self, len: usize) -> Result<String, IndexError> {
        let mut buf = vec![0u8; len];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| corrupt("truncated index file"))?;
        String::from_utf8(buf).map_err(|_| corrupt("term is not valid utf-8"))
    }
}

fn read_field(path: &Path, expect_docs: u64) -> Result<FieldIndex, IndexError> {
    let mut r = FieldReader {
        inner: BufReader::new(fs::File::open(path)?),
    };
    let mut magic = [0u8; 4];
    r.inner
        .read_exact(&mut magic)
        .map_err(|_| corrupt("truncated index file"))?;
    if &magic != IDX_MAGIC {
        return Err(corrupt(format!("{} is not an index file", path.display())));
    }
    let version = r.u32()?;
    if version != INDEX_FORMAT_VERSION {
        return Err(IndexError::VersionMismatch {
            found: version,
            expected: INDEX_FORMAT_VERSION,
        });
    }
    let doc_count = r.u64()?;
    if doc_count != expect_docs {
        return Err(corrupt(format!(
            "index file lists {doc_count} documents, manifest says {expect_docs}"
        )));
    }
    let avg = r.f64()?;
    let mut doc_lengths = Vec::with_capacity(doc_count as usize);
    for _ in 0..doc_count {
        doc_lengths.push(r.u32()?);
    }
    let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
    let recomputed = if doc_lengths.is_empty() {
        0.0
    } else {
        total as f64 / doc_lengths.len() as f64
    };
    if recomputed != avg {
        return Err(corrupt(
            "stored average length disagrees with document lengths",
        ));
    }

    let n_terms = r.u64()?;
    let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
    for _ in 0..n_terms {
        let len = r.u32()? as usize;
        let term = r.string(len)?;
        let n_postings = r.u64()?;
        let mut ps = Vec::with_capacity(n_postings as usize);
        let mut prev: Option<u32> = None;
        for _ in 0..n_postings {
            let doc = r.u32()?;
            let tf = r.u32()?;
            if doc as u64 >= doc_count || tf == 0 {
                return Err(corrupt("posting out of range"));
            }
            if prev.is_some_and(|p| p >= doc) {
                return Err(corrupt("postings are not sorted by ordinal"));
            }
            prev = Some(doc);
            ps.push(Posting { doc, tf });
        }
        if postings.insert(term, ps).is_some() {
            return Err(corrupt("duplicate term in index file"));
        }
    }
    Ok(FieldIndex::from_parts(postings, doc_lengths, avg))
}

fn docs_jsonl_bytes(docs: &[KbDocument]) -> Result<Vec<u8>, IndexError> {
    let mut bytes = Vec::new();
    for doc in docs {
        serde_json::to_writer(&mut bytes, doc)
            .map_err(|e| corrupt(format!("cannot serialize document: {e}")))?;
        bytes.push(b'\n');
    }
    Ok(bytes)
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in digest {
        hex.push_str(&format!("{byte:02x}"));
    }
    hex
}

impl SearchIndex {
    /// Writes the index into `dir` (created if missing).
    pub fn save(&self, dir: &Path) -> Result<(), IndexError> {
        fs::create_dir_all(dir)?;
        let docs_bytes = docs_jsonl_bytes(self.docs())?;
        fs::write(dir.join("docs.jsonl"), &docs_bytes)?;
        write_field(&dir.join("sentence.idx"), self.field(Field::Sentence))?;
        write_field(&dir.join("title.idx"), self.field(Field::Title))?;
        let manifest = Manifest {
            format_version: INDEX_FORMAT_VERSION,
            doc_count: self.doc_count() as u64,
            corpus_checksum: sha256_hex(&docs_bytes),
            sentence_avg_length: self.field(Field::Sentence).avg_doc_length(),
            title_avg_length: self.field(Field::Title).avg_doc_length(),
        };
        let mut manifest_json = serde_json::to_vec_pretty(&manifest)
            .map_err(|e| corrupt(format!("cannot serialize manifest: {e}")))?;
        manifest_json.push(b'\n');
        fs::write(index_manifest_path(dir), manifest_json)?;
        Ok(())
    }

    /// Reads an index directory written by [`SearchIndex::save`], verifying
    /// the format version and document checksum.
    pub fn load(dir: &Path) -> Result<Self, IndexError> {
        let manifest_bytes = fs::read(index_manifest_path(dir))?;
        let manifest: Manifest = serde_json::from_slice(&manifest_bytes)
            .map_err(|e| corrupt(format!("bad manifest: {e}")))?;
        if manifest.format_version != INDEX_FORMAT_VERSION {
            return Err(IndexError::VersionMismatch {
                found: manifest.format_version,
                expected: INDEX_FORMAT_VERSION,
            });
        }

        let docs_bytes = fs::read(dir.join("docs.jsonl"))?;
        if sha256_hex(&docs_bytes) != manifest.corpus_checksum {
            return Err(corrupt("document store does not match manifest checksum"));
        }
        let mut docs = Vec::new();
        for (i, line) in BufReader::new(&docs_bytes[..]).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let doc: KbDocument = serde_json::from_str(&line)
                .map_err(|e| corrupt(format!("bad document on line {}: {e}", i + 1)))?;
            docs.push(doc);
        }
        if docs.len() as u64 != manifest.doc_count {
            return Err(corrupt(format!(
                "manifest lists {} documents, store has {}",
                manifest.doc_count,
                docs.len()
            )));
        }

        let sentence = read_field(&dir.join("sentence.idx"), manifest.doc_count)?;
        let title = read_field(&dir.join("title.idx"), manifest.doc_count)?;
        if sentence.avg_doc_length() != manifest.sentence_avg_length
            || title.avg_doc_length() != manifest.title_avg_length
        {
            return Err(corrupt(
                "manifest average lengths disagree with index files",
            ));
        }

        let mut ids = std::collections::HashMap::with_capacity(docs.len());
        for (ordinal, doc) in docs.iter().enumerate() {
            if ids.insert(doc.doc_id.clone(), ordinal as u32).is_some() {
                return Err(IndexError::DuplicateId(doc.doc_id.clone()));
            }
        }
        Ok(SearchIndex {
            sentence,
            title,
            docs,
            ids,
        })
    }
}
