//! Knowledge corpus storage and the injection-only mutation API.
//!
//! Snapshots are immutable; the only way to change a corpus is to inject a
//! new adversarial document, which yields a fresh snapshot with a bumped
//! version. Originals are never edited or removed.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Original,
    Adversarial,
}

/// The five attack methods a forged document can carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMethod {
    Na,
    Npa,
    Pha,
    Prag,
    Cot,
}

impl AttackMethod {
    pub const ALL: [AttackMethod; 5] = [
        AttackMethod::Na,
        AttackMethod::Npa,
        AttackMethod::Pha,
        AttackMethod::Prag,
        AttackMethod::Cot,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AttackMethod::Na => "na",
            AttackMethod::Npa => "npa",
            AttackMethod::Pha => "pha",
            AttackMethod::Prag => "prag",
            AttackMethod::Cot => "cot",
        }
    }

    pub fn parse(s: &str) -> Option<AttackMethod> {
        match s.to_ascii_lowercase().as_str() {
            "na" => Some(AttackMethod::Na),
            "npa" => Some(AttackMethod::Npa),
            "pha" => Some(AttackMethod::Pha),
            "prag" => Some(AttackMethod::Prag),
            "cot" => Some(AttackMethod::Cot),
            _ => None,
        }
    }
}

impl fmt::Display for AttackMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A corpus passage with provenance and, for forged documents, attack lineage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub provenance: Provenance,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attack_method: Option<AttackMethod>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_query_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub round: Option<u32>,
}

impl Document {
    pub fn original(id: impl Into<String>, text: impl Into<String>) -> Document {
        Document {
            id: id.into(),
            text: text.into(),
            provenance: Provenance::Original,
            attack_method: None,
            target_query_id: None,
            round: None,
        }
    }

    pub fn adversarial(
        method: AttackMethod,
        query_id: &str,
        round: u32,
        text: impl Into<String>,
    ) -> Document {
        Document {
            id: adversarial_id(method, query_id, round),
            text: text.into(),
            provenance: Provenance::Adversarial,
            attack_method: Some(method),
            target_query_id: Some(query_id.to_string()),
            round: Some(round),
        }
    }

    /// Checks the provenance/lineage coupling invariant.
    pub fn validate(&self) -> Result<()> {
        match self.provenance {
            Provenance::Original => {
                if self.attack_method.is_some()
                    || self.target_query_id.is_some()
                    || self.round.is_some()
                {
                    return Err(Error::UnexpectedLineage(self.id.clone()));
                }
            }
            Provenance::Adversarial => {
                if self.attack_method.is_none()
                    || self.target_query_id.is_none()
                    || self.round.is_none()
                {
                    return Err(Error::MissingLineage(self.id.clone()));
                }
            }
        }
        Ok(())
    }
}

/// Id convention for forged documents: `adv-{method}-{query_id}-r{round}`.
pub fn adversarial_id(method: AttackMethod, query_id: &str, round: u32) -> String {
    format!("adv-{}-{}-r{}", method.as_str(), query_id, round)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusFormat {
    Jsonl,
    MsmarcoTsv,
}

/// An immutable corpus version. Injection produces a new snapshot sharing
/// the prior documents (cheap clone via `Arc`).
#[derive(Debug, Clone)]
pub struct CorpusSnapshot {
    documents: Arc<Vec<Document>>,
    version: u64,
}

impl CorpusSnapshot {
    pub fn empty() -> CorpusSnapshot {
        CorpusSnapshot {
            documents: Arc::new(Vec::new()),
            version: 1,
        }
    }

    pub fn from_documents(documents: Vec<Document>) -> Result<CorpusSnapshot> {
        let mut seen = HashSet::new();
        for doc in &documents {
            doc.validate()?;
            if !seen.insert(doc.id.clone()) {
                return Err(Error::DuplicateId(doc.id.clone()));
            }
        }
        Ok(CorpusSnapshot {
            documents: Arc::new(documents),
            version: 1,
        })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn contains_id(&self, id: &str) -> bool {
        self.documents.iter().any(|d| d.id == id)
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.id == id)
    }

    /// Adds an adversarial document, yielding version + 1. Originals may not
    /// be forged and ids may not collide.
    pub fn inject(&self, doc: Document) -> Result<CorpusSnapshot> {
        if doc.provenance == Provenance::Original {
            return Err(Error::ForgedOriginal(doc.id.clone()));
        }
        doc.validate()?;
        if self.contains_id(&doc.id) {
            return Err(Error::IdCollision(doc.id));
        }
        let mut documents = (*self.documents).clone();
        documents.push(doc);
        Ok(CorpusSnapshot {
            documents: Arc::new(documents),
            version: self.version + 1,
        })
    }
}

/// Loads a corpus file into snapshot version 1, preserving record order.
pub fn ingest(path: impl AsRef<Path>, format: CorpusFormat) -> Result<CorpusSnapshot> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut documents = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.is_empty() {
            continue;
        }
        let doc = match format {
            CorpusFormat::Jsonl => {
                serde_json::from_str::<Document>(&line).map_err(|e| Error::MalformedRecord {
                    format: "jsonl".into(),
                    line: lineno,
                    detail: e.to_string(),
                })?
            }
            CorpusFormat::MsmarcoTsv => {
                let (id, text) = line.split_once('\t').ok_or_else(|| Error::MalformedRecord {
                    format: "msmarco_tsv".into(),
                    line: lineno,
                    detail: "expected id<TAB>text".into(),
                })?;
                Document::original(id, text)
            }
        };
        doc.validate()?;
        if !seen.insert(doc.id.clone()) {
            return Err(Error::DuplicateId(doc.id.clone()));
        }
        documents.push(doc);
    }
    Ok(CorpusSnapshot {
        documents: Arc::new(documents),
        version: 1,
    })
}

/// Writes a snapshot out. JSONL is lossless; TSV drops lineage and is
/// therefore refused for snapshots containing adversarial documents.
pub fn export(
    snapshot: &CorpusSnapshot,
    path: impl AsRef<Path>,
    format: CorpusFormat,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut writer = BufWriter::new(file);
    for doc in snapshot.documents() {
        match format {
            CorpusFormat::Jsonl => {
                serde_json::to_writer(&mut writer, doc)?;
                writer
                    .write_all(b"\n")
                    .map_err(|e| Error::io(path.display().to_string(), e))?;
            }
            CorpusFormat::MsmarcoTsv => {
                if doc.provenance == Provenance::Adversarial {
                    return Err(Error::LossyExport(doc.id.clone()));
                }
                writeln!(writer, "{}\t{}", doc.id, doc.text)
                    .map_err(|e| Error::io(path.display().to_string(), e))?;
            }
        }
    }
    writer
        .flush()
        .map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn write_file(dir: &tempfile::TempDir, name: &str, contents: &str) -> std::path::PathBuf {
        let path = dir.path().join(name);
        std::fs::write(&path, contents).unwrap();
        path
    }

    #[test]
    fn ingest_empty_file() {
        let dir = tempdir().unwrap();
        let path = write_file(&dir, "empty.tsv", "");
        let snap = ingest(&path, CorpusFormat::MsmarcoTsv).unwrap();
        assert_eq!(snap.len(), 0);
        assert_eq!(snap.version(), 1);
    }

    #[test]
    fn ingest_three_line_tsv() {
        let dir = tempdir().unwrap();
        let path = write_file(&dir, "c.tsv", "d1\ttextA\nd2\ttextB\nd3\ttextC\n");
        let snap = ingest(&path, CorpusFormat::MsmarcoTsv).unwrap();
        assert_eq!(snap.len(), 3);
        let ids: Vec<_> = snap.documents().iter().map(|d| d.id.as_str()).collect();
        assert_eq!(ids, ["d1", "d2", "d3"]);
        assert!(snap
            .documents()
            .iter()
            .all(|d| d.provenance == Provenance::Original));
    }

    #[test]
    fn ingest_duplicate_id() {
        let dir = tempdir().unwrap();
        let path = write_file(&dir, "dup.tsv", "d1\ta\nd1\tb\n");
        let err = ingest(&path, CorpusFormat::MsmarcoTsv).unwrap_err();
        assert!(matches!(err, Error::DuplicateId(id) if id == "d1"));
    }

    #[test]
    fn ingest_malformed_line_carries_line_number() {
        let dir = tempdir().unwrap();
        let path = write_file(&dir, "bad.tsv", "d1\ta\nnotab\n");
        let err = ingest(&path, CorpusFormat::MsmarcoTsv).unwrap_err();
        assert!(matches!(err, Error::MalformedRecord { line: 2, .. }));
    }

    #[test]
    fn inject_into_empty() {
        let snap = CorpusSnapshot::empty();
        let doc = Document::adversarial(AttackMethod::Na, "q1", 1, "poison");
        let next = snap.inject(doc).unwrap();
        assert_eq!(next.len(), 1);
        assert_eq!(next.version(), 2);
    }

    #[test]
    fn inject_sequentially_counts_up() {
        let mut snap = CorpusSnapshot::empty();
        for round in 1..=5u32 {
            let doc = Document::adversarial(AttackMethod::Na, "q1", round, "poison");
            snap = snap.inject(doc).unwrap();
            assert_eq!(snap.version(), 1 + round as u64);
            assert_eq!(snap.len(), round as usize);
        }
    }

    #[test]
    fn inject_rejects_original_provenance() {
        let snap = CorpusSnapshot::empty();
        let err = snap.inject(Document::original("d1", "legit")).unwrap_err();
        assert!(matches!(err, Error::ForgedOriginal(_)));
    }

    #[test]
    fn inject_rejects_id_collision() {
        let snap = CorpusSnapshot::from_documents(vec![Document::original("d1", "a")]).unwrap();
        let mut doc = Document::adversarial(AttackMethod::Pha, "q1", 1, "p");
        doc.id = "d1".into();
        assert!(matches!(snap.inject(doc), Err(Error::IdCollision(_))));
    }

    #[test]
    fn injection_preserves_prior_documents() {
        let base =
            CorpusSnapshot::from_documents(vec![Document::original("d1", "a"), Document::original("d2", "b")])
                .unwrap();
        let next = base
            .inject(Document::adversarial(AttackMethod::Cot, "q9", 2, "x"))
            .unwrap();
        assert_eq!(&next.documents()[..2], base.documents());
        assert_eq!(next.len(), base.len() + 1);
    }

    #[test]
    fn jsonl_round_trip_preserves_lineage() {
        let dir = tempdir().unwrap();
        let mut docs = vec![Document::original("d1", "plain text")];
        for i in 0..100 {
            if i % 2 == 0 {
                docs.push(Document::original(format!("o{i}"), format!("passage {i}")));
            } else {
                docs.push(Document::adversarial(
                    AttackMethod::ALL[i % 5],
                    &format!("q{i}"),
                    (i % 5) as u32 + 1,
                    format!("forged {i}"),
                ));
            }
        }
        let snap = CorpusSnapshot::from_documents(docs).unwrap();
        let path = dir.path().join("out.jsonl");
        export(&snap, &path, CorpusFormat::Jsonl).unwrap();
        let back = ingest(&path, CorpusFormat::Jsonl).unwrap();
        assert_eq!(back.documents(), snap.documents());
    }

    #[test]
    fn export_empty_snapshot() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        export(&CorpusSnapshot::empty(), &path, CorpusFormat::Jsonl).unwrap();
        let back = ingest(&path, CorpusFormat::Jsonl).unwrap();
        assert!(back.is_empty());
    }

    #[test]
    fn tsv_export_refuses_adversarial_docs() {
        let dir = tempdir().unwrap();
        let snap = CorpusSnapshot::empty()
            .inject(Document::adversarial(AttackMethod::Na, "q1", 1, "p"))
            .unwrap();
        let err = export(&snap, dir.path().join("x.tsv"), CorpusFormat::MsmarcoTsv).unwrap_err();
        assert!(matches!(err, Error::LossyExport(_)));
    }
}
