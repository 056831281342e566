//! Patients, notes, the keyword lexicon and corpus ingestion.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl::{self, LineError};

/// Sequence class. The declaration order is the canonical class order used
/// for probability vectors and weight rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    Yes,
    No,
    Neither,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Yes, Label::No, Label::Neither];

    pub fn index(self) -> usize {
        match self {
            Label::Yes => 0,
            Label::No => 1,
            Label::Neither => 2,
        }
    }

    pub fn from_index(idx: usize) -> Label {
        Label::ALL[idx]
    }

    pub fn is_yes(self) -> bool {
        self == Label::Yes
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Yes => "Yes",
            Label::No => "No",
            Label::Neither => "Neither",
        })
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "yes" | "y" => Ok(Label::Yes),
            "no" | "n" => Ok(Label::No),
            "neither" | "ntr" => Ok(Label::Neither),
            _ => Err(Error::InvalidInput(format!("unknown label {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gender {
    Male,
    Female,
    #[serde(alias = "other", alias = "unknown")]
    OtherUnknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Apoe {
    E2,
    E3,
    E4,
    Unknown,
}

impl Apoe {
    /// Genotyped alleles, in report order.
    pub const GENOTYPED: [Apoe; 3] = [Apoe::E2, Apoe::E3, Apoe::E4];
}

impl fmt::Display for Apoe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Apoe::E2 => "APOE e2",
            Apoe::E3 => "APOE e3",
            Apoe::E4 => "APOE e4",
            Apoe::Unknown => "APOE unknown",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatientRecord {
    pub patient_id: String,
    pub age_years: f64,
    pub gender: Gender,
    pub apoe: Apoe,
    pub med_icd_flag: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Note {
    pub note_id: String,
    pub patient_id: String,
    pub timestamp: String,
    pub text: String,
}

/// An ingested corpus. Immutable once built.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    patients: Vec<PatientRecord>,
    notes: Vec<Note>,
    patient_index: BTreeMap<String, usize>,
    note_index: BTreeMap<String, usize>,
}

impl Corpus {
    /// Builds a corpus from already-validated records. Duplicate patients are a
    /// hard error; notes that fail validation are returned as rejections.
    pub fn build(
        patients: Vec<PatientRecord>,
        notes: Vec<Note>,
    ) -> Result<(Corpus, Vec<Rejection>)> {
        let mut patient_index = BTreeMap::new();
        for (i, p) in patients.iter().enumerate() {
            validate_patient(p)?;
            if patient_index.insert(p.patient_id.clone(), i).is_some() {
                return Err(Error::DuplicatePatient(p.patient_id.clone()));
            }
        }
        let mut rejected = Vec::new();
        let mut kept = Vec::with_capacity(notes.len());
        let mut seen = BTreeMap::new();
        for (i, note) in notes.into_iter().enumerate() {
            let reason = if !patient_index.contains_key(&note.patient_id) {
                Some(format!("unknown patient_id {:?}", note.patient_id))
            } else if note.text.trim().is_empty() {
                Some("empty text".to_string())
            } else if !is_iso_date(&note.timestamp) {
                Some(format!("timestamp {:?} is not ISO-8601", note.timestamp))
            } else if seen.contains_key(&note.note_id) {
                Some(format!("duplicate note_id {:?}", note.note_id))
            } else {
                None
            };
            match reason {
                Some(message) => rejected.push(Rejection {
                    file: RecordFile::Notes,
                    line: i + 1,
                    message,
                }),
                None => {
                    seen.insert(note.note_id.clone(), kept.len());
                    kept.push(note);
                }
            }
        }
        Ok((
            Corpus {
                patients,
                notes: kept,
                patient_index,
                note_index: seen,
            },
            rejected,
        ))
    }

    pub fn patients(&self) -> &[PatientRecord] {
        &self.patients
    }

    pub fn notes(&self) -> &[Note] {
        &self.notes
    }

    pub fn patient(&self, patient_id: &str) -> Option<&PatientRecord> {
        self.patient_index.get(patient_id).map(|&i| &self.patients[i])
    }

    pub fn note(&self, note_id: &str) -> Option<&Note> {
        self.note_index.get(note_id).map(|&i| &self.notes[i])
    }
}

fn validate_patient(p: &PatientRecord) -> Result<()> {
    if p.patient_id.is_empty() {
        return Err(Error::InvalidInput("empty patient_id".into()));
    }
    if !(p.age_years.is_finite() && p.age_years >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "patient {:?}: age_years must be a non-negative number",
            p.patient_id
        )));
    }
    Ok(())
}

fn is_iso_date(s: &str) -> bool {
    chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d").is_ok()
        || chrono::DateTime::parse_from_rfc3339(s).is_ok()
        || chrono::NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S").is_ok()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordFile {
    Patients,
    Notes,
}

/// A record dropped during ingestion, with its 1-based line number.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Rejection {
    pub file: RecordFile,
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub patients_accepted: usize,
    pub notes_accepted: usize,
    pub rejected: Vec<Rejection>,
}

/// Reads the patients and notes files. Malformed lines are reported and
/// skipped; a duplicated patient_id aborts ingestion.
pub fn ingest_corpus(patients_path: &Path, notes_path: &Path) -> Result<(Corpus, IngestReport)> {
    let (patients, patient_errors) = jsonl::read_lenient::<PatientRecord>(patients_path)?;
    let (notes, note_errors) = jsonl::read_lenient::<Note>(notes_path)?;

    // Line numbers for note-level rejections must refer to the file, not to the
    // parsed vector, so remember where every parsed note came from.
    let note_lines = parsed_line_numbers(notes_path)?;

    let (corpus, mut rejected) = Corpus::build(patients, notes)?;
    for r in rejected.iter_mut() {
        r.line = note_lines.get(r.line - 1).copied().unwrap_or(r.line);
    }
    rejected.extend(to_rejections(RecordFile::Patients, patient_errors));
    rejected.extend(to_rejections(RecordFile::Notes, note_errors));
    rejected.sort_by_key(|r| (r.file == RecordFile::Notes, r.line));

    let report = IngestReport {
        patients_accepted: corpus.patients.len(),
        notes_accepted: corpus.notes.len(),
        rejected,
    };
    Ok((corpus, report))
}

fn parsed_line_numbers(path: &Path) -> Result<Vec<usize>> {
    use std::io::BufRead;
    let reader = jsonl::open(path)?;
    let mut lines = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        if serde_json::from_str::<Note>(&line).is_ok() {
            lines.push(idx + 1);
        }
    }
    Ok(lines)
}

fn to_rejections(file: RecordFile, errors: Vec<LineError>) -> impl Iterator<Item = Rejection> {
    errors.into_iter().map(move |e| Rejection {
        file,
        line: e.line,
        message: e.message,
    })
}

/// Writes the corpus back out in the ingestion formats.
pub fn write_corpus(corpus: &Corpus, patients_path: &Path, notes_path: &Path) -> Result<()> {
    jsonl::write(patients_path, corpus.patients())?;
    jsonl::write(notes_path, corpus.notes())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    /// Match must start and end on a word boundary.
    WordBoundary,
    /// Plain substring match.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub keyword: String,
    pub match_mode: MatchMode,
    pub case_sensitive: bool,
}

impl LexiconEntry {
    pub fn new(keyword: &str, match_mode: MatchMode, case_sensitive: bool) -> Self {
        LexiconEntry {
            keyword: keyword.to_string(),
            match_mode,
            case_sensitive,
        }
    }

    /// Regex implementing this entry's match rule. Internal whitespace in a
    /// multi-word keyword matches any run of whitespace.
    pub fn pattern(&self) -> String {
        let body = self
            .keyword
            .split_whitespace()
            .map(regex::escape)
            .collect::<Vec<_>>()
            .join(r"\s+");
        let body = match self.match_mode {
            MatchMode::WordBoundary => format!(r"\b{body}\b"),
            MatchMode::Exact => body,
        };
        if self.case_sensitive {
            body
        } else {
            format!("(?i){body}")
        }
    }
}

/// One keyword hit, in byte offsets into the note text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeywordMatch {
    pub entry: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone)]
pub struct Lexicon {
    entries: Vec<LexiconEntry>,
    compiled: Vec<Regex>,
}

impl PartialEq for Lexicon {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

impl Lexicon {
    pub fn new(entries: Vec<LexiconEntry>) -> Result<Lexicon> {
        let mut folded = BTreeSet::new();
        let mut compiled = Vec::with_capacity(entries.len());
        for e in &entries {
            let key = e
                .keyword
                .split_whitespace()
                .collect::<Vec<_>>()
                .join(" ")
                .to_lowercase();
            if key.is_empty() {
                return Err(Error::InvalidInput("empty lexicon keyword".into()));
            }
            if !folded.insert(key) {
                return Err(Error::InvalidInput(format!(
                    "duplicate lexicon keyword {:?} after case folding",
                    e.keyword
                )));
            }
            compiled.push(Regex::new(&e.pattern()).map_err(|err| {
                Error::InvalidInput(format!("keyword {:?}: {err}", e.keyword))
            })?);
        }
        Ok(Lexicon { entries, compiled })
    }

    pub fn entries(&self) -> &[LexiconEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, keyword: &str) -> Option<&LexiconEntry> {
        self.entries.iter().find(|e| e.keyword == keyword)
    }

    /// All matches of all entries, ordered by (start, entry index).
    pub fn find_all(&self, text: &str) -> Vec<KeywordMatch> {
        let mut out = Vec::new();
        for (entry, re) in self.compiled.iter().enumerate() {
            out.extend(re.find_iter(text).map(|m| KeywordMatch {
                entry,
                start: m.start(),
                end: m.end(),
            }));
        }
        out.sort_by_key(|m| (m.start, m.entry));
        out
    }

    /// Whether entry `entry` matches `text` starting exactly at byte `start`.
    pub fn matches_at(&self, entry: usize, text: &str, start: usize) -> Option<usize> {
        let re = self.compiled.get(entry)?;
        if !text.is_char_boundary(start) {
            return None;
        }
        re.find_at(text, start)
            .filter(|m| m.start() == start)
            .map(|m| m.end())
    }

    /// Parses the override file: one keyword per line, optionally followed by
    /// `|` and comma-separated flags (`case_sensitive`, `case_insensitive`,
    /// `word_boundary`, `exact`). Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Lexicon> {
        let mut entries = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (keyword, flags) = match line.split_once('|') {
                Some((k, f)) => (k.trim(), f.trim()),
                None => (line, ""),
            };
            let mut entry = LexiconEntry::new(keyword, MatchMode::WordBoundary, false);
            for flag in flags.split(',').map(str::trim).filter(|f| !f.is_empty()) {
                match flag {
                    "case_sensitive" => entry.case_sensitive = true,
                    "case_insensitive" => entry.case_sensitive = false,
                    "word_boundary" => entry.match_mode = MatchMode::WordBoundary,
                    "exact" => entry.match_mode = MatchMode::Exact,
                    other => {
                        return Err(Error::InvalidInput(format!(
                            "lexicon line {}: unknown flag {other:?}",
                            idx + 1
                        )))
                    }
                }
            }
            entries.push(entry);
        }
        Lexicon::new(entries)
    }

    pub fn load(path: &Path) -> Result<Lexicon> {
        if !path.exists() {
            return Err(Error::MissingInput(path.display().to_string()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Lexicon::parse(&text)
    }
}

/// Short all-caps acronyms that must match case-sensitively on word boundaries.
const ACRONYMS: [&str; 5] = ["MOCA", "MCI", "AD", "MMSE", "LBD"];

/// The 18 cognitive-impairment keywords, in descending order of their
/// reference match counts.
pub const DEFAULT_KEYWORDS: [&str; 18] = [
    "Memory",
    "Cognition",
    "Dementia",
    "Cerebral",
    "Cerebrovascular",
    "Cerebellar",
    "Cognitive Impairment",
    "Alzheimer",
    "MOCA",
    "Neurocognitive",
    "MCI",
    "Amnesia",
    "AD",
    "Lewy",
    "MMSE",
    "LBD",
    "Corticobasal",
    "Picks",
];

pub fn default_lexicon() -> Lexicon {
    let entries = DEFAULT_KEYWORDS
        .iter()
        .map(|&k| LexiconEntry::new(k, MatchMode::WordBoundary, ACRONYMS.contains(&k)))
        .collect();
    Lexicon::new(entries).expect("default lexicon is valid")
}
