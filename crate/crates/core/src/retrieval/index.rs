use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{tokenize, Document, RetrievalError};

/// File signature of a saved index.
pub const INDEX_MAGIC: &[u8; 8] = b"UQRAGIDX";
/// Bumped whenever the serialized layout changes.
pub const INDEX_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    /// Ordinal into the document table.
    pub doc: u32,
    pub tf: u32,
}

/// Term → postings map plus per-document lengths. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvertedIndex {
    postings: BTreeMap<String, Vec<Posting>>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
    docs: Vec<Document>,
}

impl InvertedIndex {
    /// Indexes title and body of every document. Ids must be unique and non-empty.
    pub fn build<I: IntoIterator<Item = Document>>(corpus: I) -> Result<Self, RetrievalError> {
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_lengths = Vec::new();
        let mut docs = Vec::new();
        let mut ids = HashSet::new();

        for (ord, doc) in corpus.into_iter().enumerate() {
            if doc.id.is_empty() {
                return Err(RetrievalError::EmptyId(ord));
            }
            if !ids.insert(doc.id.clone()) {
                return Err(RetrievalError::DuplicateId(doc.id));
            }
            let ord = u32::try_from(ord).map_err(|_| RetrievalError::IndexFormat("corpus exceeds u32 documents".into()))?;
            let mut tfs: BTreeMap<String, u32> = BTreeMap::new();
            let mut len = 0u32;
            for term in tokenize(&doc.title).into_iter().chain(tokenize(&doc.body)) {
                *tfs.entry(term).or_insert(0) += 1;
                len += 1;
            }
            // Ordinals only grow, so every postings list stays sorted.
            for (term, tf) in tfs {
                postings.entry(term).or_default().push(Posting { doc: ord, tf });
            }
            doc_lengths.push(len);
            docs.push(doc);
        }

        let avg_doc_length = if doc_lengths.is_empty() {
            0.0
        } else {
            doc_lengths.iter().map(|&l| l as f64).sum::<f64>() / doc_lengths.len() as f64
        };
        Ok(InvertedIndex { postings, doc_lengths, avg_doc_length, docs })
    }

    pub fn doc_count(&self) -> usize {
        self.docs.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_length(&self, ord: u32) -> u32 {
        self.doc_lengths[ord as usize]
    }

    pub fn document(&self, ord: u32) -> &Document {
        &self.docs[ord as usize]
    }

    pub fn documents(&self) -> &[Document] {
        &self.docs
    }

    pub fn postings(&self, term: &str) -> Option<&[Posting]> {
        self.postings.get(term).map(Vec::as_slice)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&str, &[Posting])> {
        self.postings.iter().map(|(t, p)| (t.as_str(), p.as_slice()))
    }

    /// Writes the magic, the format version (u32 LE), then the bincode payload.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), RetrievalError> {
        let fmt = |e: &dyn std::fmt::Display| RetrievalError::IndexFormat(e.to_string());
        w.write_all(INDEX_MAGIC).map_err(|e| fmt(&e))?;
        w.write_all(&INDEX_FORMAT_VERSION.to_le_bytes()).map_err(|e| fmt(&e))?;
        bincode::serialize_into(&mut w, self).map_err(|e| fmt(&e))?;
        w.flush().map_err(|e| fmt(&e))
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, RetrievalError> {
        let mut header = [0u8; 12];
        r.read_exact(&mut header)
            .map_err(|_| RetrievalError::IndexFormat("file too short for header".into()))?;
        if &header[..8] != INDEX_MAGIC {
            return Err(RetrievalError::IndexFormat("not an index file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(header[8..12].try_into().unwrap());
        if version != INDEX_FORMAT_VERSION {
            return Err(RetrievalError::IndexFormat(format!(
                "unsupported index version {version} (expected {INDEX_FORMAT_VERSION})"
            )));
        }
        bincode::deserialize_from(r).map_err(|e| RetrievalError::IndexFormat(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), RetrievalError> {
        let file = File::create(path).map_err(|source| RetrievalError::Io { path: path.into(), source })?;
        self.write_to(BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self, RetrievalError> {
        let file = File::open(path).map_err(|source| RetrievalError::Io { path: path.into(), source })?;
        Self::read_from(BufReader::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn docs() -> Vec<Document> {
        vec![
            Document::new("a", "Cat Facts", "cat cat naps"),
            Document::new("b", "", "dog runs"),
            Document::new("c", "Birds", "a bird sings to a cat"),
        ]
    }

    #[test]
    fn invariants_hold() {
        let idx = InvertedIndex::build(docs()).unwrap();
        assert_eq!(idx.doc_count(), 3);
        let mut per_doc = vec![0u32; 3];
        for (_, postings) in idx.terms() {
            assert!(postings.windows(2).all(|w| w[0].doc < w[1].doc));
            for p in postings {
                per_doc[p.doc as usize] += p.tf;
            }
        }
        let lengths: Vec<u32> = (0..3).map(|d| idx.doc_length(d)).collect();
        assert_eq!(per_doc, lengths);
        assert_eq!(lengths, vec![5, 2, 7]);
        assert!((idx.avg_doc_length() - 14.0 / 3.0).abs() < 1e-12);
        assert_eq!(idx.postings("cat").unwrap(), &[Posting { doc: 0, tf: 3 }, Posting { doc: 2, tf: 1 }]);
    }

    #[test]
    fn disjoint_vocabularies_and_tf() {
        let idx = InvertedIndex::build(vec![Document::new("1", "", "cat cat"), Document::new("2", "", "dog")]).unwrap();
        assert_eq!(idx.postings("cat").unwrap(), &[Posting { doc: 0, tf: 2 }]);
        assert_eq!(idx.postings("dog").unwrap().len(), 1);
    }

    #[test]
    fn empty_corpus() {
        let idx = InvertedIndex::build(Vec::new()).unwrap();
        assert_eq!(idx.doc_count(), 0);
        assert_eq!(idx.avg_doc_length(), 0.0);
    }

    #[test]
    fn rejects_duplicate_and_empty_ids() {
        let mut d = docs();
        d.push(Document::new("b", "", "again"));
        match InvertedIndex::build(d) {
            Err(RetrievalError::DuplicateId(id)) => assert_eq!(id, "b"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(InvertedIndex::build(vec![Document::new("", "", "x")]), Err(RetrievalError::EmptyId(0))));
    }

    #[test]
    fn save_load_round_trip() {
        let idx = InvertedIndex::build(docs()).unwrap();
        let mut buf = Vec::new();
        idx.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..8], INDEX_MAGIC);
        let back = InvertedIndex::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, idx);
        assert_eq!(back.search("cat bird", 3), idx.search("cat bird", 3));
    }

    #[test]
    fn rejects_foreign_files() {
        assert!(InvertedIndex::read_from(&b"short"[..]).is_err());
        assert!(InvertedIndex::read_from(&b"NOTANIDX\x01\0\0\0"[..]).is_err());
        let mut buf = INDEX_MAGIC.to_vec();
        buf.extend_from_slice(&99u32.to_le_bytes());
        let err = InvertedIndex::read_from(buf.as_slice()).unwrap_err();
        assert!(err.to_string().contains("version 99"));
    }
}
