//! Dataset ingestion and label statistics.
//!
//! Corpora are stored as line-delimited JSON records with the keys `text`,
//! `domain`, and optionally `label` (`"positive"` / `"negative"`) and `id`.
//! Records carrying a label land in the labeled split, the rest are treated
//! as unlabeled.

use std::collections::HashSet;
use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary sentiment class. Class index 0 is negative, 1 is positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Negative, Label::Positive];

    pub fn index(self) -> usize {
        match self {
            Label::Negative => 0,
            Label::Positive => 1,
        }
    }

    pub fn from_index(index: usize) -> Option<Label> {
        match index {
            0 => Some(Label::Negative),
            1 => Some(Label::Positive),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Negative => "negative",
            Label::Positive => "positive",
        }
    }

    pub fn parse(s: &str) -> Option<Label> {
        match s {
            "positive" => Some(Label::Positive),
            "negative" => Some(Label::Negative),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub domain: String,
}

impl Document {
    /// Builds a document, rejecting text that is empty after trimming.
    pub fn new(id: impl Into<String>, text: impl Into<String>, domain: impl Into<String>) -> Result<Self> {
        let text = text.into();
        let id = id.into();
        if text.trim().is_empty() {
            return Err(Error::Validation(format!("document {id} has empty text")));
        }
        Ok(Document {
            id,
            text,
            domain: domain.into(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledDocument {
    pub base: Document,
    pub label: Label,
}

impl LabeledDocument {
    pub fn new(base: Document, label: Label) -> Self {
        LabeledDocument { base, label }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainCorpus {
    pub domain: String,
    pub labeled: Vec<LabeledDocument>,
    pub unlabeled: Vec<Document>,
}

impl DomainCorpus {
    pub fn new(domain: impl Into<String>, labeled: Vec<LabeledDocument>, unlabeled: Vec<Document>) -> Result<Self> {
        let corpus = DomainCorpus {
            domain: domain.into(),
            labeled,
            unlabeled,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    /// Checks domain tags, text, and id uniqueness across both splits.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        let docs = self
            .labeled
            .iter()
            .map(|d| &d.base)
            .chain(self.unlabeled.iter());
        for doc in docs {
            if doc.domain != self.domain {
                return Err(Error::Validation(format!(
                    "document {} has domain {:?}, corpus is {:?}",
                    doc.id, doc.domain, self.domain
                )));
            }
            if doc.text.trim().is_empty() {
                return Err(Error::Validation(format!("document {} has empty text", doc.id)));
            }
            if !seen.insert(doc.id.as_str()) {
                return Err(Error::Validation(format!("duplicate document id {}", doc.id)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labeled.len() + self.unlabeled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All documents, labeled first, without labels.
    pub fn documents(&self) -> impl Iterator<Item = &Document> {
        self.labeled.iter().map(|d| &d.base).chain(self.unlabeled.iter())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelDistribution {
    pub n_pos: u64,
    pub n_neg: u64,
}

impl LabelDistribution {
    pub fn new(n_pos: u64, n_neg: u64) -> Result<Self> {
        if n_pos + n_neg == 0 {
            return Err(Error::EmptyInput("label distribution with no documents"));
        }
        Ok(LabelDistribution { n_pos, n_neg })
    }

    /// `n_pos / n_neg`, or `None` when there are no negatives.
    pub fn ratio(&self) -> Option<f64> {
        (self.n_neg > 0).then(|| self.n_pos as f64 / self.n_neg as f64)
    }

    pub fn total(&self) -> u64 {
        self.n_pos + self.n_neg
    }
}

pub fn label_distribution(docs: &[LabeledDocument]) -> Result<LabelDistribution> {
    if docs.is_empty() {
        return Err(Error::EmptyInput("label_distribution needs at least one document"));
    }
    let n_pos = docs.iter().filter(|d| d.label == Label::Positive).count() as u64;
    LabelDistribution::new(n_pos, docs.len() as u64 - n_pos)
}

/// On-disk record shape.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Record {
    pub text: String,
    pub domain: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
}

/// Reads a line-delimited corpus file. Blank lines are skipped; missing ids
/// become `<domain>-<line>`.
pub fn load_corpus(path: impl AsRef<Path>, domain: &str) -> Result<DomainCorpus> {
    let path = path.as_ref();
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&content, domain)
}

pub fn parse_corpus(content: &str, domain: &str) -> Result<DomainCorpus> {
    let mut labeled = Vec::new();
    let mut unlabeled = Vec::new();
    let mut ids = HashSet::new();

    for (idx, line) in content.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if record.domain != domain {
            return Err(Error::Validation(format!(
                "line {line_no}: record domain {:?} does not match {:?}",
                record.domain, domain
            )));
        }
        let id = record.id.unwrap_or_else(|| format!("{domain}-{line_no}"));
        if !ids.insert(id.clone()) {
            return Err(Error::Validation(format!("line {line_no}: duplicate id {id}")));
        }
        let doc = Document::new(id, record.text, record.domain)
            .map_err(|e| Error::Validation(format!("line {line_no}: {e}")))?;
        match record.label.as_deref() {
            None => unlabeled.push(doc),
            Some(raw) => {
                let label = Label::parse(raw).ok_or_else(|| {
                    Error::Validation(format!(
                        "line {line_no}: label {raw:?} is not \"positive\" or \"negative\""
                    ))
                })?;
                labeled.push(LabeledDocument::new(doc, label));
            }
        }
    }

    if labeled.is_empty() && unlabeled.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(DomainCorpus {
        domain: domain.to_string(),
        labeled,
        unlabeled,
    })
}

pub fn write_corpus(path: impl AsRef<Path>, corpus: &DomainCorpus) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let records = corpus
        .labeled
        .iter()
        .map(|d| (&d.base, Some(d.label)))
        .chain(corpus.unlabeled.iter().map(|d| (d, None)));
    for (doc, label) in records {
        let record = Record {
            text: doc.text.clone(),
            domain: doc.domain.clone(),
            label: label.map(|l| l.as_str().to_string()),
            id: Some(doc.id.clone()),
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Draws exactly `n_per_class` documents of each class uniformly without
/// replacement. The output order is shuffled and fixed by `seed`.
pub fn balanced_labeled_sample(
    corpus: &DomainCorpus,
    n_per_class: usize,
    seed: u64,
) -> Result<Vec<LabeledDocument>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(2 * n_per_class);
    for class in [Label::Positive, Label::Negative] {
        let pool: Vec<&LabeledDocument> = corpus.labeled.iter().filter(|d| d.label == class).collect();
        if pool.len() < n_per_class {
            return Err(Error::Capacity {
                class,
                needed: n_per_class,
                available: pool.len(),
            });
        }
    }
    for class in [Label::Positive, Label::Negative] {
        let pool: Vec<&LabeledDocument> = corpus.labeled.iter().filter(|d| d.label == class).collect();
        let picked = rand::seq::index::sample(&mut rng, pool.len(), n_per_class);
        out.extend(picked.into_iter().map(|i| pool[i].clone()));
    }
    out.shuffle(&mut rng);
    Ok(out)
}

/// Published label statistics of the standard benchmark domains: labeled
/// count, unlabeled count, and the unlabeled positive:negative ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchmarkDomain {
    pub name: &'static str,
    pub labeled: usize,
    pub unlabeled: usize,
    pub unlabeled_pos_neg: f64,
}

pub const BENCHMARK_DOMAINS: [BenchmarkDomain; 5] = [
    BenchmarkDomain { name: "books", labeled: 2000, unlabeled: 6000, unlabeled_pos_neg: 6.43 },
    BenchmarkDomain { name: "dvd", labeled: 2000, unlabeled: 34741, unlabeled_pos_neg: 7.39 },
    BenchmarkDomain { name: "electronics", labeled: 2000, unlabeled: 13153, unlabeled_pos_neg: 3.65 },
    BenchmarkDomain { name: "kitchen", labeled: 2000, unlabeled: 16785, unlabeled_pos_neg: 4.61 },
    BenchmarkDomain { name: "airlines", labeled: 2000, unlabeled: 39396, unlabeled_pos_neg: 1.15 },
];

pub fn benchmark_domain(name: &str) -> Option<&'static BenchmarkDomain> {
    let name = name.to_ascii_lowercase();
    BENCHMARK_DOMAINS.iter().find(|d| d.name == name)
}
