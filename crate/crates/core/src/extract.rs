//! Keyword-anchored window extraction.
//!
//! Offsets in a [`Sequence`] are counted in Unicode scalar values, not bytes.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Lexicon, Note};

pub const DEFAULT_WINDOW: usize = 800;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sequence {
    pub sequence_id: String,
    pub patient_id: String,
    pub note_id: String,
    pub keyword: String,
    pub match_offset: usize,
    pub match_length: usize,
    pub window_start: usize,
    pub window_end: usize,
    pub text: String,
}

impl Sequence {
    pub fn window_len(&self) -> usize {
        self.window_end - self.window_start
    }
}

/// Stable identifier for a match: note, character offset and match length.
pub fn sequence_id(note_id: &str, match_offset: usize, match_length: usize) -> String {
    format!("{note_id}@{match_offset}+{match_length}")
}

/// Centered window of at most `window` characters around a match, clipped to
/// the note. The start never passes the match offset, so the window always
/// contains the first character of the match.
pub fn window_bounds(
    match_offset: usize,
    match_length: usize,
    note_len: usize,
    window: usize,
) -> (usize, usize) {
    let center = match_offset + match_length / 2;
    let start = center.saturating_sub(window / 2).min(match_offset);
    let end = (start + window).min(note_len);
    (start, end)
}

/// Byte/char offset conversion for one note.
struct CharIndex<'a> {
    text: &'a str,
    // byte offset of every char start; empty when the text is ASCII
    starts: Vec<usize>,
}

impl<'a> CharIndex<'a> {
    fn new(text: &'a str) -> Self {
        let starts = if text.is_ascii() {
            Vec::new()
        } else {
            text.char_indices().map(|(b, _)| b).collect()
        };
        CharIndex { text, starts }
    }

    fn char_len(&self) -> usize {
        if self.starts.is_empty() {
            self.text.len()
        } else {
            self.starts.len()
        }
    }

    fn to_char(&self, byte: usize) -> usize {
        if self.starts.is_empty() {
            byte
        } else {
            self.starts.partition_point(|&b| b < byte)
        }
    }

    fn to_byte(&self, ch: usize) -> usize {
        if self.starts.is_empty() {
            ch
        } else {
            self.starts.get(ch).copied().unwrap_or(self.text.len())
        }
    }

    fn slice(&self, start: usize, end: usize) -> &'a str {
        &self.text[self.to_byte(start)..self.to_byte(end)]
    }
}

/// Character-indexed slice of `text`.
pub fn char_slice(text: &str, start: usize, end: usize) -> &str {
    CharIndex::new(text).slice(start, end)
}

fn extract_note(note: &Note, lexicon: &Lexicon, window: usize) -> Vec<Sequence> {
    let index = CharIndex::new(&note.text);
    let len = index.char_len();
    lexicon
        .find_all(&note.text)
        .into_iter()
        .map(|m| {
            let offset = index.to_char(m.start);
            let mlen = index.to_char(m.end) - offset;
            let (start, end) = window_bounds(offset, mlen, len, window);
            Sequence {
                sequence_id: sequence_id(&note.note_id, offset, mlen),
                patient_id: note.patient_id.clone(),
                note_id: note.note_id.clone(),
                keyword: lexicon.entries()[m.entry].keyword.clone(),
                match_offset: offset,
                match_length: mlen,
                window_start: start,
                window_end: end,
                text: index.slice(start, end).to_string(),
            }
        })
        .collect()
}

/// One sequence per lexicon match, ordered by (note_id, match offset, lexicon order).
pub fn extract_sequences(corpus: &Corpus, lexicon: &Lexicon, window: usize) -> Vec<Sequence> {
    assert!(window >= 1, "window must be at least one character");
    let mut per_note: Vec<(&str, Vec<Sequence>)> = corpus
        .notes()
        .par_iter()
        .map(|n| (n.note_id.as_str(), extract_note(n, lexicon, window)))
        .collect();
    per_note.sort_by(|a, b| a.0.cmp(b.0));
    per_note.into_iter().flat_map(|(_, s)| s).collect()
}

/// Collapses sequences of the same note with identical windows, keeping the
/// first one seen. Overlapping but distinct windows are all kept.
pub fn dedupe_overlapping(sequences: Vec<Sequence>) -> Vec<Sequence> {
    let mut seen = BTreeSet::new();
    sequences
        .into_iter()
        .filter(|s| seen.insert((s.note_id.clone(), s.window_start, s.window_end)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordCount {
    pub keyword: String,
    pub count: usize,
}

/// Matches per keyword, most frequent first; ties by keyword.
pub fn extraction_report(sequences: &[Sequence]) -> Vec<KeywordCount> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for s in sequences {
        *counts.entry(&s.keyword).or_default() += 1;
    }
    let mut rows: Vec<_> = counts
        .into_iter()
        .map(|(k, count)| KeywordCount {
            keyword: k.to_string(),
            count,
        })
        .collect();
    rows.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.keyword.cmp(&b.keyword)));
    rows
}

pub fn render_report(rows: &[KeywordCount]) -> String {
    let width = rows.iter().map(|r| r.keyword.len()).max().unwrap_or(7).max(7);
    let mut out = format!("{:<width$}  {:>11}\n", "Keyword", "Match Count");
    for r in rows {
        out.push_str(&format!("{:<width$}  {:>11}\n", r.keyword, r.count));
    }
    out
}

/// Why a sequence failed the offset round-trip check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RoundTripFailure {
    UnknownKeyword,
    WindowTooLong,
    OffsetOutsideWindow,
    TextMismatch,
    KeywordDoesNotMatch,
}

/// Re-checks a sequence against its source note: the window text must be the
/// note substring and the keyword must match at the recorded offset.
pub fn verify_sequence(
    seq: &Sequence,
    note: &Note,
    lexicon: &Lexicon,
    window: usize,
) -> Result<(), RoundTripFailure> {
    let entry = lexicon
        .entries()
        .iter()
        .position(|e| e.keyword == seq.keyword)
        .ok_or(RoundTripFailure::UnknownKeyword)?;
    if seq.window_len() > window {
        return Err(RoundTripFailure::WindowTooLong);
    }
    if !(seq.window_start <= seq.match_offset && seq.match_offset < seq.window_end) {
        return Err(RoundTripFailure::OffsetOutsideWindow);
    }
    let index = CharIndex::new(&note.text);
    if seq.window_end > index.char_len() || index.slice(seq.window_start, seq.window_end) != seq.text
    {
        return Err(RoundTripFailure::TextMismatch);
    }
    let byte = index.to_byte(seq.match_offset);
    let end = lexicon
        .matches_at(entry, &note.text, byte)
        .ok_or(RoundTripFailure::KeywordDoesNotMatch)?;
    if index.to_char(end) - seq.match_offset != seq.match_length {
        return Err(RoundTripFailure::KeywordDoesNotMatch);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{default_lexicon, Apoe, Gender, LexiconEntry, MatchMode, PatientRecord};

    fn corpus_of(texts: &[&str]) -> Corpus {
        let patients = vec![PatientRecord {
            patient_id: "p".into(),
            age_years: 70.0,
            gender: Gender::Male,
            apoe: Apoe::E4,
            med_icd_flag: false,
        }];
        let notes = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Note {
                note_id: format!("n{i}"),
                patient_id: "p".into(),
                timestamp: "2021-07-13".into(),
                text: t.to_string(),
            })
            .collect();
        Corpus::build(patients, notes).unwrap().0
    }

    #[test]
    fn short_note_window_is_whole_note() {
        let mut text = "x".repeat(200);
        text.push_str(" memory ");
        text.push_str(&"y".repeat(400 - text.len()));
        let seqs = extract_sequences(&corpus_of(&[&text]), &default_lexicon(), 800);
        assert_eq!(seqs.len(), 1);
        assert_eq!(seqs[0].text, text);
        assert_eq!(seqs[0].window_len(), 400);
    }

    #[test]
    fn long_note_window_is_exactly_800() {
        let mut text = "a ".repeat(500);
        text.push_str("dementia ");
        while text.len() < 2000 {
            text.push_str("b ");
        }
        let seqs = extract_sequences(&corpus_of(&[&text]), &default_lexicon(), 800);
        assert_eq!(seqs.len(), 1);
        let s = &seqs[0];
        assert_eq!(s.match_offset, 1000);
        assert_eq!(s.window_len(), 800);
        assert!(s.window_start <= 1000 && 1000 < s.window_end);
        assert!(s.text.contains("dementia"));
        assert_eq!(s.window_start, 1000 + 4 - 400);
    }

    #[test]
    fn no_match_no_sequences() {
        let seqs = extract_sequences(
            &corpus_of(&["no relevant terms here"]),
            &default_lexicon(),
            800,
        );
        assert!(seqs.is_empty());
    }

    #[test]
    fn window_never_passes_match_offset() {
        // window smaller than the match
        let (s, e) = window_bounds(10, 20, 100, 4);
        assert!(s <= 10 && 10 < e);
        assert_eq!(window_bounds(0, 6, 3, 800), (0, 3));
    }

    #[test]
    fn unicode_offsets_are_characters() {
        let text = "ééé Memory ñ";
        let seqs = extract_sequences(&corpus_of(&[text]), &default_lexicon(), 5);
        assert_eq!(seqs.len(), 1);
        assert_eq!(seqs[0].match_offset, 4);
        assert_eq!(seqs[0].match_length, 6);
        let c = corpus_of(&[text]);
        verify_sequence(&seqs[0], &c.notes()[0], &default_lexicon(), 5).unwrap();
    }

    #[test]
    fn dedupe_identical_windows() {
        // two keywords starting at the same offset in a short note: both windows
        // clip to the whole note
        let lex = Lexicon::new(vec![
            LexiconEntry::new("memory", MatchMode::WordBoundary, false),
            LexiconEntry::new("memory loss", MatchMode::WordBoundary, false),
        ])
        .unwrap();
        let seqs = extract_sequences(&corpus_of(&["some memory loss"]), &lex, 800);
        assert_eq!(seqs.len(), 2);
        let deduped = dedupe_overlapping(seqs);
        assert_eq!(deduped.len(), 1);
        assert_eq!(deduped[0].keyword, "memory");
    }

    #[test]
    fn dedupe_keeps_distinct_windows() {
        let mut text = "z ".repeat(600);
        text.push_str("memory");
        text.push_str(&" q".repeat(47));
        text.push_str(" dementia");
        text.push_str(&" w".repeat(600));
        let seqs = extract_sequences(&corpus_of(&[&text]), &default_lexicon(), 800);
        assert_eq!(seqs.len(), 2);
        assert_eq!(dedupe_overlapping(seqs).len(), 2);
        assert!(dedupe_overlapping(Vec::new()).is_empty());
    }

    #[test]
    fn report_counts_sorted() {
        let c = corpus_of(&["memory and memory", "Memory; dementia", "nothing"]);
        let seqs = extract_sequences(&c, &default_lexicon(), 800);
        let rep = extraction_report(&seqs);
        assert_eq!(rep[0], KeywordCount { keyword: "Memory".into(), count: 3 });
        assert_eq!(rep[1].keyword, "Dementia");
        assert!(extraction_report(&[]).is_empty());
        assert!(render_report(&rep).starts_with("Keyword"));
    }

    #[test]
    fn extraction_is_order_independent() {
        let texts = ["memory and MCI", "the AD case", "dementia, Lewy"];
        let a = extract_sequences(&corpus_of(&texts), &default_lexicon(), 10);
        let rev: Vec<&str> = texts.iter().rev().copied().collect();
        let mut b = extract_sequences(&corpus_of(&rev), &default_lexicon(), 10);
        // note ids follow input position, so compare without them
        let strip = |v: &mut Vec<Sequence>| {
            let mut out: Vec<_> = v
                .iter()
                .map(|s| (s.text.clone(), s.keyword.clone(), s.match_offset))
                .collect();
            out.sort();
            out
        };
        assert_eq!(strip(&mut a.clone()), strip(&mut b));
    }

    #[test]
    fn round_trip_detects_tampering() {
        let c = corpus_of(&["patient with dementia today"]);
        let lex = default_lexicon();
        let mut s = extract_sequences(&c, &lex, 800).remove(0);
        verify_sequence(&s, &c.notes()[0], &lex, 800).unwrap();
        s.match_offset += 1;
        assert!(verify_sequence(&s, &c.notes()[0], &lex, 800).is_err());
    }
}
