//! Line coverage in one shape, whatever format it came from.
//!
//! All three parsers ([`v8`], [`jacoco`], [`lcov`]) produce
//! [`FileLineCoverage`] values: the set of lines the tooling tracks for a
//! file, and the subset that executed.

pub mod jacoco;
pub mod lcov;
pub mod v8;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use jacoco::parse_jacoco_xml;
pub use lcov::parse_lcov;
pub use v8::{parse_v8_coverage, V8Parse};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("malformed document: {0}")]
    MalformedDocument(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("file `{file}`: covered lines {lines:?} are not instrumented")]
    CoveredNotInstrumented { file: String, lines: Vec<u32> },
}

/// Per-file line sets. `covered` is always a subset of `instrumented`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "FileLineCoverageRepr", into = "FileLineCoverageRepr")]
pub struct FileLineCoverage {
    file_id: String,
    instrumented: BTreeSet<u32>,
    covered: BTreeSet<u32>,
}

#[derive(Serialize, Deserialize)]
struct FileLineCoverageRepr {
    id: String,
    instrumented: Vec<u32>,
    covered: Vec<u32>,
}

impl TryFrom<FileLineCoverageRepr> for FileLineCoverage {
    type Error = FormatError;

    fn try_from(r: FileLineCoverageRepr) -> Result<Self, Self::Error> {
        FileLineCoverage::new(r.id, r.instrumented, r.covered)
    }
}

impl From<FileLineCoverage> for FileLineCoverageRepr {
    fn from(f: FileLineCoverage) -> Self {
        FileLineCoverageRepr {
            id: f.file_id,
            instrumented: f.instrumented.into_iter().collect(),
            covered: f.covered.into_iter().collect(),
        }
    }
}

impl FileLineCoverage {
    pub fn new(
        file_id: impl Into<String>,
        instrumented: impl IntoIterator<Item = u32>,
        covered: impl IntoIterator<Item = u32>,
    ) -> Result<Self, FormatError> {
        let file_id = file_id.into();
        let instrumented: BTreeSet<u32> = instrumented.into_iter().collect();
        let covered: BTreeSet<u32> = covered.into_iter().collect();
        let stray: Vec<u32> = covered.difference(&instrumented).copied().collect();
        if !stray.is_empty() {
            return Err(FormatError::CoveredNotInstrumented {
                file: file_id,
                lines: stray,
            });
        }
        Ok(FileLineCoverage {
            file_id,
            instrumented,
            covered,
        })
    }

    pub fn empty(file_id: impl Into<String>) -> Self {
        FileLineCoverage {
            file_id: file_id.into(),
            instrumented: BTreeSet::new(),
            covered: BTreeSet::new(),
        }
    }

    pub fn file_id(&self) -> &str {
        &self.file_id
    }

    pub fn instrumented(&self) -> &BTreeSet<u32> {
        &self.instrumented
    }

    pub fn covered(&self) -> &BTreeSet<u32> {
        &self.covered
    }

    /// Marks a line instrumented, and covered when `hit`.
    pub(crate) fn record(&mut self, line: u32, hit: bool) {
        self.instrumented.insert(line);
        if hit {
            self.covered.insert(line);
        }
    }

    /// Set union of both line sets; ids are expected to match.
    pub fn absorb(&mut self, other: &FileLineCoverage) {
        self.instrumented.extend(other.instrumented.iter().copied());
        self.covered.extend(other.covered.iter().copied());
    }

    pub fn ratio(&self) -> Ratio {
        Ratio::from_counts(self.covered.len() as u64, self.instrumented.len() as u64)
    }
}

/// Coverage keyed by file id, kept sorted.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CoverageStore {
    files: BTreeMap<String, FileLineCoverage>,
}

impl CoverageStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn merge_file(&mut self, file: &FileLineCoverage) {
        match self.files.get_mut(file.file_id()) {
            Some(existing) => existing.absorb(file),
            None => {
                self.files.insert(file.file_id.clone(), file.clone());
            }
        }
    }

    pub fn merge_all<'a>(&mut self, files: impl IntoIterator<Item = &'a FileLineCoverage>) {
        for f in files {
            self.merge_file(f);
        }
    }

    pub fn clear(&mut self) {
        self.files.clear();
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    pub fn files(&self) -> impl Iterator<Item = &FileLineCoverage> {
        self.files.values()
    }

    pub fn get(&self, id: &str) -> Option<&FileLineCoverage> {
        self.files.get(id)
    }

    pub fn to_vec(&self) -> Vec<FileLineCoverage> {
        self.files.values().cloned().collect()
    }

    pub fn ratio(&self) -> Ratio {
        ratio(self.files.values())
    }

    pub fn instrumented_total(&self) -> u64 {
        self.files.values().map(|f| f.instrumented.len() as u64).sum()
    }
}

impl FromIterator<FileLineCoverage> for CoverageStore {
    fn from_iter<I: IntoIterator<Item = FileLineCoverage>>(iter: I) -> Self {
        let mut store = CoverageStore::new();
        for f in iter {
            store.merge_file(&f);
        }
        store
    }
}

/// Union of two coverage lists, matched by file id, sorted by id.
pub fn merge_coverage(a: &[FileLineCoverage], b: &[FileLineCoverage]) -> Vec<FileLineCoverage> {
    let mut store = CoverageStore::new();
    store.merge_all(a);
    store.merge_all(b);
    store.to_vec()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub percent: f64,
    pub covered: u64,
    pub total: u64,
    pub no_data: bool,
}

impl Ratio {
    pub fn from_counts(covered: u64, total: u64) -> Self {
        if total == 0 {
            return Ratio {
                percent: 0.0,
                covered,
                total,
                no_data: true,
            };
        }
        Ratio {
            percent: 100.0 * covered as f64 / total as f64,
            covered,
            total,
            no_data: false,
        }
    }
}

pub fn ratio<'a>(files: impl IntoIterator<Item = &'a FileLineCoverage>) -> Ratio {
    let (covered, total) = files.into_iter().fold((0u64, 0u64), |(c, t), f| {
        (c + f.covered.len() as u64, t + f.instrumented.len() as u64)
    });
    Ratio::from_counts(covered, total)
}

/// The `{"files":[...]}` document written by the `parse` subcommand.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnifiedCoverage {
    pub files: Vec<FileLineCoverage>,
}

impl UnifiedCoverage {
    pub fn new(files: impl IntoIterator<Item = FileLineCoverage>) -> Self {
        UnifiedCoverage {
            files: files.into_iter().collect::<CoverageStore>().to_vec(),
        }
    }
}
