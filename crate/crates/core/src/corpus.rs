//! Corpus metadata, row alignment of description/code vectors, and
//! train/valid/test splits.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingMatrix;
use crate::{Error, Result};

/// One description/code pair. Serialized as a JSONL line
/// `{"id", "doc", "code", "lang"}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub id: String,
    #[serde(rename = "doc")]
    pub doc_text: String,
    #[serde(rename = "code")]
    pub code_text: String,
    #[serde(rename = "lang")]
    pub language_tag: String,
}

impl CorpusEntry {
    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::InvalidInput("entry id is empty".into()));
        }
        if self.doc_text.is_empty() || self.code_text.is_empty() {
            return Err(Error::InvalidInput(format!(
                "entry {:?} has empty doc or code text",
                self.id
            )));
        }
        Ok(())
    }
}

/// Reads corpus metadata, one JSON object per line. Blank lines are not
/// allowed since line i must correspond to matrix row i.
pub fn read_corpus_jsonl(path: impl AsRef<Path>) -> Result<Vec<CorpusEntry>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io_at(path, e))?;
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io_at(path, e))?;
        let entry: CorpusEntry = serde_json::from_str(&line).map_err(|e| Error::Metadata {
            line: i + 1,
            message: e.to_string(),
        })?;
        entry.validate().map_err(|e| Error::Metadata {
            line: i + 1,
            message: e.to_string(),
        })?;
        entries.push(entry);
    }
    check_unique(entries.iter().map(|e| e.id.as_str()))?;
    Ok(entries)
}

pub fn write_corpus_jsonl(entries: &[CorpusEntry], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io_at(path, e))?;
    let mut w = BufWriter::new(file);
    for e in entries {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn check_unique<'a>(ids: impl IntoIterator<Item = &'a str>) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(Error::DuplicateId(id.to_string()));
        }
    }
    Ok(())
}

/// Entries with their description (NL) and code vectors, row-aligned.
#[derive(Debug, Clone)]
pub struct PairedCorpus {
    entries: Vec<CorpusEntry>,
    nl_vectors: EmbeddingMatrix,
    code_vectors: EmbeddingMatrix,
    rows: HashMap<String, usize>,
}

/// Pairs metadata with both vector matrices; row i of each matrix belongs
/// to `entries[i]`.
pub fn align_corpus(
    entries: Vec<CorpusEntry>,
    nl: EmbeddingMatrix,
    code: EmbeddingMatrix,
) -> Result<PairedCorpus> {
    for m in [&nl, &code] {
        if m.count() != entries.len() {
            return Err(Error::CountMismatch {
                expected: entries.len(),
                found: m.count(),
            });
        }
    }
    let mut rows = HashMap::with_capacity(entries.len());
    for (i, e) in entries.iter().enumerate() {
        if rows.insert(e.id.clone(), i).is_some() {
            return Err(Error::DuplicateId(e.id.clone()));
        }
    }
    Ok(PairedCorpus {
        entries,
        nl_vectors: nl,
        code_vectors: code,
        rows,
    })
}

impl PairedCorpus {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[CorpusEntry] {
        &self.entries
    }

    pub fn nl_vectors(&self) -> &EmbeddingMatrix {
        &self.nl_vectors
    }

    pub fn code_vectors(&self) -> &EmbeddingMatrix {
        &self.code_vectors
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> + '_ {
        self.entries.iter().map(|e| e.id.as_str())
    }

    pub fn row_of(&self, id: &str) -> Option<usize> {
        self.rows.get(id).copied()
    }

    pub fn require_row(&self, id: &str) -> Result<usize> {
        self.row_of(id).ok_or_else(|| Error::UnknownId(id.to_string()))
    }

    /// Row indices for `ids`, failing on the first unknown id.
    pub fn rows_for<S: AsRef<str>>(&self, ids: &[S]) -> Result<Vec<usize>> {
        ids.iter().map(|id| self.require_row(id.as_ref())).collect()
    }
}

/// Disjoint train/valid/test id sets. Serialized as
/// `{"train": [...], "valid": [...], "test": [...], "seed": n}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    #[serde(rename = "train")]
    pub train_ids: Vec<String>,
    #[serde(rename = "valid")]
    pub valid_ids: Vec<String>,
    #[serde(rename = "test")]
    pub test_ids: Vec<String>,
    pub seed: u64,
}

impl SplitSpec {
    /// Checks disjointness and that every id exists in `corpus`.
    pub fn validate(&self, corpus: &PairedCorpus) -> Result<()> {
        check_unique(
            self.train_ids
                .iter()
                .chain(&self.valid_ids)
                .chain(&self.test_ids)
                .map(String::as_str),
        )?;
        for id in self.train_ids.iter().chain(&self.valid_ids).chain(&self.test_ids) {
            corpus.require_row(id)?;
        }
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io_at(path, e))?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io_at(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }
}

/// Seeded split of the corpus ids.
///
/// Ids are sorted lexicographically, shuffled with a ChaCha8 generator
/// seeded by `seed`, then cut into valid and test sets of
/// `floor(fraction * N)` items each; train receives the rest. The result
/// does not depend on entry order in the corpus.
pub fn split_corpus(corpus: &PairedCorpus, fractions: (f64, f64, f64), seed: u64) -> Result<SplitSpec> {
    let ids: Vec<&str> = corpus.ids().collect();
    split_ids(&ids, fractions, seed)
}

pub fn split_ids<S: AsRef<str>>(ids: &[S], fractions: (f64, f64, f64), seed: u64) -> Result<SplitSpec> {
    let (train, valid, test) = fractions;
    if [train, valid, test].iter().any(|f| !f.is_finite() || *f < 0.0) {
        return Err(Error::InvalidConfig(format!(
            "split fractions must be non-negative, got {fractions:?}"
        )));
    }
    if (train + valid + test - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!(
            "split fractions must sum to 1, got {}",
            train + valid + test
        )));
    }
    if ids.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    let mut sorted: Vec<String> = ids.iter().map(|s| s.as_ref().to_string()).collect();
    sorted.sort_unstable();
    check_unique(sorted.iter().map(String::as_str))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sorted.shuffle(&mut rng);

    let n = sorted.len();
    // The slack absorbs products such as 0.29 * 100 = 28.999999999999996.
    let size = |f: f64| ((f * n as f64 + 1e-9).floor() as usize).min(n);
    let n_valid = size(valid);
    let n_test = size(test).min(n - n_valid);
    let n_train = n - n_valid - n_test;

    let test_ids = sorted.split_off(n_train + n_valid);
    let valid_ids = sorted.split_off(n_train);
    Ok(SplitSpec {
        train_ids: sorted,
        valid_ids,
        test_ids,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str) -> CorpusEntry {
        CorpusEntry {
            id: id.into(),
            doc_text: format!("doc {id}"),
            code_text: format!("fn {id}() {{}}"),
            language_tag: "java".into(),
        }
    }

    fn corpus(n: usize) -> PairedCorpus {
        let entries: Vec<_> = (0..n).map(|i| entry(&format!("f{i}"))).collect();
        let nl = EmbeddingMatrix::new(2, vec![0.5; n * 2]).unwrap();
        let code = EmbeddingMatrix::new(3, vec![0.25; n * 3]).unwrap();
        align_corpus(entries, nl, code).unwrap()
    }

    #[test]
    fn align_three() {
        let c = corpus(3);
        assert_eq!(c.len(), 3);
        assert_eq!(c.row_of("f2"), Some(2));
    }

    #[test]
    fn align_count_mismatch() {
        let entries = vec![entry("a"), entry("b"), entry("c")];
        let nl = EmbeddingMatrix::new(2, vec![0.0; 4]).unwrap();
        let code = EmbeddingMatrix::new(2, vec![0.0; 6]).unwrap();
        assert!(matches!(
            align_corpus(entries, nl, code),
            Err(Error::CountMismatch { expected: 3, found: 2 })
        ));
    }

    #[test]
    fn align_duplicate_id() {
        let entries = vec![entry("f1"), entry("f1"), entry("f2")];
        let m = EmbeddingMatrix::new(1, vec![0.0; 3]).unwrap();
        assert!(matches!(
            align_corpus(entries, m.clone(), m),
            Err(Error::DuplicateId(id)) if id == "f1"
        ));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let c = corpus(10);
        let a = split_corpus(&c, (0.8, 0.1, 0.1), 7).unwrap();
        assert_eq!((a.train_ids.len(), a.valid_ids.len(), a.test_ids.len()), (8, 1, 1));
        assert_eq!(a, split_corpus(&c, (0.8, 0.1, 0.1), 7).unwrap());
        a.validate(&c).unwrap();
    }

    #[test]
    fn split_all_train() {
        let c = corpus(5);
        let s = split_corpus(&c, (1.0, 0.0, 0.0), 1).unwrap();
        assert_eq!(s.train_ids.len(), 5);
        assert!(s.valid_ids.is_empty() && s.test_ids.is_empty());
    }

    #[test]
    fn split_rejects_bad_fractions() {
        let c = corpus(5);
        assert!(matches!(
            split_corpus(&c, (0.7, 0.1, 0.1), 1),
            Err(Error::InvalidConfig(_))
        ));
        assert!(split_corpus(&c, (1.1, -0.1, 0.0), 1).is_err());
    }

    #[test]
    fn split_empty_corpus() {
        let ids: Vec<String> = Vec::new();
        assert!(matches!(split_ids(&ids, (1.0, 0.0, 0.0), 0), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn split_remainder_goes_to_train() {
        let ids: Vec<String> = (0..7).map(|i| format!("x{i}")).collect();
        let s = split_ids(&ids, (0.5, 0.25, 0.25), 3).unwrap();
        // floor(1.75) = 1 for valid and test; train takes 5.
        assert_eq!((s.train_ids.len(), s.valid_ids.len(), s.test_ids.len()), (5, 1, 1));
    }

    #[test]
    fn split_overlap_detected() {
        let c = corpus(3);
        let s = SplitSpec {
            train_ids: vec!["f0".into(), "f1".into()],
            valid_ids: vec!["f1".into()],
            test_ids: vec![],
            seed: 0,
        };
        assert!(matches!(s.validate(&c), Err(Error::DuplicateId(_))));
        let s = SplitSpec {
            train_ids: vec!["nope".into()],
            valid_ids: vec![],
            test_ids: vec![],
            seed: 0,
        };
        assert!(matches!(s.validate(&c), Err(Error::UnknownId(_))));
    }

    #[test]
    fn jsonl_round_trip_and_field_names() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let entries = vec![entry("a"), entry("b")];
        write_corpus_jsonl(&entries, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(r#"{"id":"a","doc":"doc a","code":"fn a() {}","lang":"java"}"#));
        assert_eq!(read_corpus_jsonl(&path).unwrap(), entries);
    }

    #[test]
    fn jsonl_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        std::fs::write(
            &path,
            "{\"id\":\"a\",\"doc\":\"d\",\"code\":\"c\",\"lang\":\"java\"}\nnot json\n",
        )
        .unwrap();
        assert!(matches!(read_corpus_jsonl(&path), Err(Error::Metadata { line: 2, .. })));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn split_ignores_input_order(n in 1usize..60, seed: u64, rot in 0usize..60) {
                let mut ids: Vec<String> = (0..n).map(|i| format!("id{i:03}")).collect();
                let a = split_ids(&ids, (0.6, 0.2, 0.2), seed).unwrap();
                ids.rotate_left(rot % n);
                ids.reverse();
                let b = split_ids(&ids, (0.6, 0.2, 0.2), seed).unwrap();
                prop_assert_eq!(&a, &b);
                prop_assert_eq!(a.train_ids.len() + a.valid_ids.len() + a.test_ids.len(), n);
            }
        }
    }
}
