//! Three-class sequence labels with provenance, always-pattern propagation,
//! the stratified patient-disjoint split, and uncertainty ranking.
//!
//! The store keeps an append-only event log. The current label of a sequence
//! is derived from it: a manual annotation if one exists, otherwise the label
//! of the earliest-created active always pattern matching the sequence text.
//! Because the state is a function of (manual labels, active patterns),
//! retiring a pattern exactly undoes adding it.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::extract::Sequence;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Manual { annotator: String },
    AlwaysPattern { pattern_id: String },
}

impl Provenance {
    pub fn kind(&self) -> ProvenanceKind {
        match self {
            Provenance::Manual { .. } => ProvenanceKind::Manual,
            Provenance::AlwaysPattern { .. } => ProvenanceKind::AlwaysPattern,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProvenanceKind {
    Manual,
    AlwaysPattern,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub sequence_id: String,
    pub label: Label,
    pub provenance: Provenance,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlwaysPattern {
    pub pattern_id: String,
    pub regex: String,
    pub label: Label,
    pub author: String,
    pub created_at: DateTime<Utc>,
}

/// One line of the annotations file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Annotate {
        sequence_id: String,
        label: Label,
        annotator: String,
        overwrite: bool,
        at: DateTime<Utc>,
    },
    AddPattern {
        pattern_id: String,
        regex: String,
        label: Label,
        author: String,
        at: DateTime<Utc>,
    },
    RetirePattern {
        pattern_id: String,
        at: DateTime<Utc>,
    },
}

/// Source of event timestamps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clock {
    System,
    Fixed(DateTime<Utc>),
}

impl Clock {
    pub fn now(self) -> DateTime<Utc> {
        match self {
            Clock::System => Utc::now(),
            Clock::Fixed(t) => t,
        }
    }

    /// Unix epoch; used wherever output must be byte-reproducible.
    pub fn epoch() -> Clock {
        Clock::Fixed(DateTime::<Utc>::UNIX_EPOCH)
    }
}

#[derive(Debug, Clone)]
struct PatternState {
    pattern: AlwaysPattern,
    matches: Vec<usize>,
    active: bool,
}

#[derive(Debug, Clone)]
struct ManualLabel {
    label: Label,
    annotator: String,
    at: DateTime<Utc>,
}

/// A labeled sequence as consumed by training and splitting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSequence {
    pub sequence_id: String,
    pub patient_id: String,
    pub text: String,
    pub label: Label,
    pub provenance: ProvenanceKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternSummary {
    pub pattern: AlwaysPattern,
    pub active: bool,
    pub match_count: usize,
    /// Sequences currently labeled by this pattern.
    pub labeled_count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub total: usize,
    pub labeled: usize,
    pub unlabeled: usize,
    /// Keys are `"<label>/<provenance>"`, e.g. `"Yes/manual"`.
    pub counts: BTreeMap<String, usize>,
}

#[derive(Debug, Clone)]
pub struct AnnotationStore {
    sequences: Vec<Sequence>,
    index: HashMap<String, usize>,
    manual: Vec<Option<ManualLabel>>,
    patterns: Vec<PatternState>,
    // all patterns ever matching each sequence, in creation order
    seq_patterns: Vec<Vec<usize>>,
    // earliest active pattern matching each sequence
    owner: Vec<Option<usize>>,
    scope: Option<Vec<bool>>,
    events: Vec<Event>,
    clock: Clock,
}

/// Parses a pattern, reporting the byte offset of any syntax error.
pub fn compile_pattern(regex: &str) -> Result<Regex> {
    if let Err(e) = regex_syntax::Parser::new().parse(regex) {
        let (position, message) = match &e {
            regex_syntax::Error::Parse(p) => (p.span().start.offset, p.kind().to_string()),
            regex_syntax::Error::Translate(t) => (t.span().start.offset, t.kind().to_string()),
            other => (0, other.to_string()),
        };
        return Err(Error::InvalidRegex { position, message });
    }
    Regex::new(regex).map_err(|e| Error::InvalidRegex {
        position: 0,
        message: e.to_string(),
    })
}

impl AnnotationStore {
    pub fn new(sequences: Vec<Sequence>) -> Self {
        let n = sequences.len();
        let index = sequences
            .iter()
            .enumerate()
            .map(|(i, s)| (s.sequence_id.clone(), i))
            .collect();
        AnnotationStore {
            sequences,
            index,
            manual: vec![None; n],
            patterns: Vec::new(),
            seq_patterns: vec![Vec::new(); n],
            owner: vec![None; n],
            scope: None,
            events: Vec::new(),
            clock: Clock::System,
        }
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    /// Restricts pattern propagation to the given sequences. By default
    /// patterns propagate over every sequence in the store.
    pub fn with_propagation_scope<'a>(mut self, ids: impl IntoIterator<Item = &'a str>) -> Self {
        let mut mask = vec![false; self.sequences.len()];
        for id in ids {
            if let Some(&i) = self.index.get(id) {
                mask[i] = true;
            }
        }
        self.scope = Some(mask);
        self
    }

    /// Rebuilds a store by applying a saved event log in order.
    pub fn replay(sequences: Vec<Sequence>, events: &[Event]) -> Result<Self> {
        let mut store = AnnotationStore::new(sequences);
        for e in events {
            store.apply(e.clone())?;
        }
        Ok(store)
    }

    pub fn sequences(&self) -> &[Sequence] {
        &self.sequences
    }

    pub fn sequence(&self, id: &str) -> Option<&Sequence> {
        self.index.get(id).map(|&i| &self.sequences[i])
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn patterns(&self) -> impl Iterator<Item = &AlwaysPattern> {
        self.patterns.iter().map(|p| &p.pattern)
    }

    fn in_scope(&self, i: usize) -> bool {
        self.scope.as_ref().is_none_or(|m| m[i])
    }

    /// Applies one event. The event is appended to the log only if it succeeds.
    pub fn apply(&mut self, event: Event) -> Result<EventOutcome> {
        let outcome = match &event {
            Event::Annotate {
                sequence_id,
                label,
                annotator,
                overwrite,
                at,
            } => EventOutcome::Annotated(self.apply_annotate(
                sequence_id,
                *label,
                annotator,
                *overwrite,
                *at,
            )?),
            Event::AddPattern {
                pattern_id,
                regex,
                label,
                author,
                at,
            } => {
                let (p, n) = self.apply_add_pattern(pattern_id, regex, *label, author, *at)?;
                EventOutcome::PatternAdded(p, n)
            }
            Event::RetirePattern { pattern_id, .. } => {
                EventOutcome::PatternRetired(self.apply_retire(pattern_id)?)
            }
        };
        self.events.push(event);
        Ok(outcome)
    }

    pub fn annotate(
        &mut self,
        sequence_id: &str,
        label: Label,
        annotator: &str,
        overwrite: bool,
    ) -> Result<Annotation> {
        let event = Event::Annotate {
            sequence_id: sequence_id.to_string(),
            label,
            annotator: annotator.to_string(),
            overwrite,
            at: self.clock.now(),
        };
        match self.apply(event)? {
            EventOutcome::Annotated(a) => Ok(a),
            _ => unreachable!(),
        }
    }

    /// Stores the pattern and labels every unannotated in-scope sequence it
    /// matches. Returns the pattern and the number of newly labeled sequences.
    pub fn add_always_pattern(
        &mut self,
        regex: &str,
        label: Label,
        author: &str,
    ) -> Result<(AlwaysPattern, usize)> {
        let event = Event::AddPattern {
            pattern_id: format!("p{}", self.patterns.len() + 1),
            regex: regex.to_string(),
            label,
            author: author.to_string(),
            at: self.clock.now(),
        };
        match self.apply(event)? {
            EventOutcome::PatternAdded(p, n) => Ok((p, n)),
            _ => unreachable!(),
        }
    }

    /// Retires a pattern; returns how many sequences lost its label.
    pub fn retire_pattern(&mut self, pattern_id: &str) -> Result<usize> {
        let event = Event::RetirePattern {
            pattern_id: pattern_id.to_string(),
            at: self.clock.now(),
        };
        match self.apply(event)? {
            EventOutcome::PatternRetired(n) => Ok(n),
            _ => unreachable!(),
        }
    }

    fn apply_annotate(
        &mut self,
        sequence_id: &str,
        label: Label,
        annotator: &str,
        overwrite: bool,
        at: DateTime<Utc>,
    ) -> Result<Annotation> {
        let i = *self
            .index
            .get(sequence_id)
            .ok_or_else(|| Error::UnknownSequence(sequence_id.to_string()))?;
        if self.manual[i].is_some() && !overwrite {
            return Err(Error::ManualConflict(sequence_id.to_string()));
        }
        self.manual[i] = Some(ManualLabel {
            label,
            annotator: annotator.to_string(),
            at,
        });
        Ok(self.annotation_at(i).expect("just annotated"))
    }

    fn apply_add_pattern(
        &mut self,
        pattern_id: &str,
        regex: &str,
        label: Label,
        author: &str,
        at: DateTime<Utc>,
    ) -> Result<(AlwaysPattern, usize)> {
        let re = compile_pattern(regex)?;
        if self.patterns.iter().any(|p| p.pattern.pattern_id == pattern_id) {
            return Err(Error::InvalidInput(format!("pattern id {pattern_id:?} already used")));
        }
        if let Some(existing) = self
            .patterns
            .iter()
            .find(|p| p.active && p.pattern.regex == regex && p.pattern.label != label)
        {
            return Err(Error::PatternConflict {
                existing: existing.pattern.pattern_id.clone(),
                label: existing.pattern.label.to_string(),
            });
        }
        let k = self.patterns.len();
        let matches: Vec<usize> = (0..self.sequences.len())
            .filter(|&i| self.in_scope(i) && re.is_match(&self.sequences[i].text))
            .collect();
        let mut newly = 0;
        for &i in &matches {
            self.seq_patterns[i].push(k);
            if self.owner[i].is_none() {
                self.owner[i] = Some(k);
                if self.manual[i].is_none() {
                    newly += 1;
                }
            }
        }
        let pattern = AlwaysPattern {
            pattern_id: pattern_id.to_string(),
            regex: regex.to_string(),
            label,
            author: author.to_string(),
            created_at: at,
        };
        self.patterns.push(PatternState {
            pattern: pattern.clone(),
            matches,
            active: true,
        });
        Ok((pattern, newly))
    }

    fn apply_retire(&mut self, pattern_id: &str) -> Result<usize> {
        let k = self
            .patterns
            .iter()
            .position(|p| p.active && p.pattern.pattern_id == pattern_id)
            .ok_or_else(|| Error::UnknownPattern(pattern_id.to_string()))?;
        self.patterns[k].active = false;
        let mut reverted = 0;
        for idx in 0..self.patterns[k].matches.len() {
            let i = self.patterns[k].matches[idx];
            if self.owner[i] != Some(k) {
                continue;
            }
            if self.manual[i].is_none() {
                reverted += 1;
            }
            self.owner[i] = self.seq_patterns[i]
                .iter()
                .copied()
                .find(|&p| self.patterns[p].active);
        }
        Ok(reverted)
    }

    fn annotation_at(&self, i: usize) -> Option<Annotation> {
        let sequence_id = self.sequences[i].sequence_id.clone();
        if let Some(m) = &self.manual[i] {
            return Some(Annotation {
                sequence_id,
                label: m.label,
                provenance: Provenance::Manual {
                    annotator: m.annotator.clone(),
                },
                created_at: m.at,
            });
        }
        self.owner[i].map(|k| {
            let p = &self.patterns[k].pattern;
            Annotation {
                sequence_id,
                label: p.label,
                provenance: Provenance::AlwaysPattern {
                    pattern_id: p.pattern_id.clone(),
                },
                created_at: p.created_at,
            }
        })
    }

    pub fn annotation(&self, sequence_id: &str) -> Option<Annotation> {
        self.index.get(sequence_id).and_then(|&i| self.annotation_at(i))
    }

    pub fn is_labeled(&self, sequence_id: &str) -> bool {
        self.index
            .get(sequence_id)
            .is_some_and(|&i| self.manual[i].is_some() || self.owner[i].is_some())
    }

    /// Current annotation of every labeled sequence, keyed by sequence id.
    pub fn current(&self) -> BTreeMap<String, Annotation> {
        (0..self.sequences.len())
            .filter_map(|i| self.annotation_at(i))
            .map(|a| (a.sequence_id.clone(), a))
            .collect()
    }

    /// Labeled sequences in store order.
    pub fn labeled(&self) -> Vec<LabeledSequence> {
        (0..self.sequences.len())
            .filter_map(|i| {
                self.annotation_at(i).map(|a| {
                    let s = &self.sequences[i];
                    LabeledSequence {
                        sequence_id: s.sequence_id.clone(),
                        patient_id: s.patient_id.clone(),
                        text: s.text.clone(),
                        label: a.label,
                        provenance: a.provenance.kind(),
                    }
                })
            })
            .collect()
    }

    pub fn unlabeled_ids(&self) -> Vec<&str> {
        (0..self.sequences.len())
            .filter(|&i| self.manual[i].is_none() && self.owner[i].is_none())
            .map(|i| self.sequences[i].sequence_id.as_str())
            .collect()
    }

    pub fn pattern_summaries(&self) -> Vec<PatternSummary> {
        self.patterns
            .iter()
            .enumerate()
            .map(|(k, p)| PatternSummary {
                pattern: p.pattern.clone(),
                active: p.active,
                match_count: p.matches.len(),
                labeled_count: p
                    .matches
                    .iter()
                    .filter(|&&i| self.owner[i] == Some(k) && self.manual[i].is_none())
                    .count(),
            })
            .collect()
    }

    pub fn progress(&self) -> Progress {
        let mut counts = BTreeMap::new();
        for label in Label::ALL {
            for kind in ["manual", "always_pattern"] {
                counts.insert(format!("{label}/{kind}"), 0);
            }
        }
        let mut labeled = 0;
        for i in 0..self.sequences.len() {
            if let Some(a) = self.annotation_at(i) {
                labeled += 1;
                let kind = match a.provenance.kind() {
                    ProvenanceKind::Manual => "manual",
                    ProvenanceKind::AlwaysPattern => "always_pattern",
                };
                *counts.entry(format!("{}/{kind}", a.label)).or_default() += 1;
            }
        }
        Progress {
            total: self.sequences.len(),
            labeled,
            unlabeled: self.sequences.len() - labeled,
            counts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventOutcome {
    Annotated(Annotation),
    PatternAdded(AlwaysPattern, usize),
    PatternRetired(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub warnings: Vec<String>,
}

type Cell = (Label, ProvenanceKind);

const SPLIT_ATTEMPTS: usize = 64;

/// Adds whole patients to the test side in the given order: first toward each
/// cell's target, then topping up cells still under their lower bound. A
/// patient is only added if no cell would exceed its upper bound.
fn greedy_fill<'a>(
    patients: &[&'a str],
    by_patient: &BTreeMap<&'a str, BTreeMap<Cell, usize>>,
    bounds: &BTreeMap<Cell, (usize, usize, usize)>,
) -> (BTreeSet<&'a str>, BTreeMap<Cell, usize>) {
    let mut counts: BTreeMap<Cell, usize> = BTreeMap::new();
    let mut in_test = BTreeSet::new();
    for pass in 0..2 {
        for &pid in patients {
            if in_test.contains(pid) {
                continue;
            }
            let p = &by_patient[pid];
            let wanted = p.keys().any(|c| {
                let have = counts.get(c).copied().unwrap_or(0);
                let (lo, target, _) = bounds[c];
                have < if pass == 0 { target } else { lo }
            });
            let fits = p
                .iter()
                .all(|(c, k)| counts.get(c).copied().unwrap_or(0) + k <= bounds[c].2);
            if wanted && fits {
                for (c, k) in p {
                    *counts.entry(*c).or_default() += k;
                }
                in_test.insert(pid);
            }
        }
    }
    (in_test, counts)
}

/// Splits labeled sequences into train and test, patient-disjoint, with the
/// train share of every (label, provenance) cell within one item of
/// `train_fraction`. Cells with fewer than two items go wholly to train.
pub fn stratified_split(items: &[LabeledSequence], train_fraction: f64, seed: u64) -> Split {
    assert!((0.0..=1.0).contains(&train_fraction));
    let mut warnings = Vec::new();
    let mut cell_sizes: BTreeMap<Cell, usize> = BTreeMap::new();
    let mut by_patient: BTreeMap<&str, BTreeMap<Cell, usize>> = BTreeMap::new();
    for it in items {
        let cell = (it.label, it.provenance);
        *cell_sizes.entry(cell).or_default() += 1;
        *by_patient
            .entry(&it.patient_id)
            .or_default()
            .entry(cell)
            .or_default() += 1;
    }

    // admissible test counts per cell
    let mut bounds: BTreeMap<Cell, (usize, usize, usize)> = BTreeMap::new();
    for (&cell, &n) in &cell_sizes {
        if n < 2 {
            warnings.push(format!(
                "cell {}/{:?} has {n} item(s); assigned wholly to train",
                cell.0, cell.1
            ));
            bounds.insert(cell, (0, 0, 0));
            continue;
        }
        let x = n as f64 - train_fraction * n as f64;
        let lo = (x - 1.0 - 1e-9).ceil().max(0.0) as usize;
        let hi = ((x + 1.0 + 1e-9).floor() as usize).min(n);
        let target = (x.round() as usize).clamp(lo, hi);
        bounds.insert(cell, (lo, target, hi));
    }

    let mut patients: Vec<&str> = by_patient.keys().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(usize, BTreeSet<&str>, BTreeMap<Cell, usize>)> = None;
    // Greedy fill under fresh shuffles until one lands every cell inside its
    // bounds; otherwise keep the attempt that misses by the fewest items.
    for _ in 0..SPLIT_ATTEMPTS {
        patients.shuffle(&mut rng);
        let (in_test, counts) = greedy_fill(&patients, &by_patient, &bounds);
        let miss: usize = bounds
            .iter()
            .map(|(c, &(lo, _, hi))| {
                let have = counts.get(c).copied().unwrap_or(0);
                lo.saturating_sub(have) + have.saturating_sub(hi)
            })
            .sum();
        if best.as_ref().is_none_or(|b| miss < b.0) {
            best = Some((miss, in_test, counts));
        }
        if miss == 0 {
            break;
        }
    }
    let (_, in_test, test_counts) = best.expect("at least one attempt");

    for (cell, &(lo, _, hi)) in &bounds {
        let have = test_counts.get(cell).copied().unwrap_or(0);
        if have < lo || have > hi {
            warnings.push(format!(
                "cell {}/{:?}: {have} test items outside [{lo}, {hi}]",
                cell.0, cell.1
            ));
        }
    }

    let mut train = Vec::new();
    let mut test = Vec::new();
    for it in items {
        if in_test.contains(it.patient_id.as_str()) {
            test.push(it.sequence_id.clone());
        } else {
            train.push(it.sequence_id.clone());
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Split {
        train,
        test,
        warnings,
    }
}

/// Shannon entropy in nats; `0 · ln 0` is taken as 0.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.ln())
        .sum::<f64>()
}

pub fn check_distribution(id: &str, p: &[f64], tolerance: f64) -> Result<()> {
    let sum: f64 = p.iter().sum();
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) || (sum - 1.0).abs() > tolerance {
        return Err(Error::NotNormalized(id.to_string()));
    }
    Ok(())
}

/// Unlabeled sequences that have a predicted distribution, most uncertain
/// first; ties broken by sequence id.
pub fn rank_uncertain(
    store: &AnnotationStore,
    probabilities: &BTreeMap<String, [f64; 3]>,
) -> Result<Vec<String>> {
    for (id, p) in probabilities {
        check_distribution(id, p, 1e-6)?;
    }
    let mut ranked: Vec<(f64, &str)> = store
        .unlabeled_ids()
        .into_iter()
        .filter_map(|id| probabilities.get(id).map(|p| (entropy(p), id)))
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    Ok(ranked.into_iter().map(|(_, id)| id.to_string()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(id: &str, patient: &str, text: &str) -> Sequence {
        Sequence {
            sequence_id: id.into(),
            patient_id: patient.into(),
            note_id: format!("{patient}-n"),
            keyword: "Memory".into(),
            match_offset: 0,
            match_length: 6,
            window_start: 0,
            window_end: text.chars().count(),
            text: text.into(),
        }
    }

    fn store() -> AnnotationStore {
        let mut seqs: Vec<_> = (0..5)
            .map(|i| seq(&format!("s{i}"), &format!("p{i}"), "memory grossly intact"))
            .collect();
        seqs.push(seq("s5", "p5", "dementia, moderate"));
        seqs.push(seq("s6", "p6", "caregiver for wife with dementia"));
        AnnotationStore::new(seqs).with_clock(Clock::epoch())
    }

    #[test]
    fn annotate_and_precedence() {
        let mut st = store();
        st.annotate("s5", Label::Yes, "ann", false).unwrap();
        assert_eq!(st.current().len(), 1);
        assert_eq!(st.current()["s5"].label, Label::Yes);

        let (p, n) = st.add_always_pattern("grossly intact", Label::No, "ann").unwrap();
        assert_eq!(n, 5);
        assert_eq!(
            st.annotation("s0").unwrap().provenance,
            Provenance::AlwaysPattern { pattern_id: p.pattern_id.clone() }
        );
        st.annotate("s0", Label::Yes, "ann", false).unwrap();
        assert_eq!(st.annotation("s0").unwrap().provenance.kind(), ProvenanceKind::Manual);
        assert_eq!(st.retire_pattern(&p.pattern_id).unwrap(), 4);
        assert_eq!(st.annotation("s0").unwrap().label, Label::Yes);
        assert!(st.annotation("s1").is_none());
    }

    #[test]
    fn annotate_errors() {
        let mut st = store();
        assert!(matches!(
            st.annotate("nope", Label::Yes, "a", false),
            Err(Error::UnknownSequence(_))
        ));
        st.annotate("s1", Label::No, "a", false).unwrap();
        assert!(matches!(
            st.annotate("s1", Label::Yes, "b", false),
            Err(Error::ManualConflict(_))
        ));
        st.annotate("s1", Label::Yes, "b", true).unwrap();
        assert_eq!(st.annotation("s1").unwrap().label, Label::Yes);
        // failed events are not logged
        assert_eq!(st.events().len(), 2);
    }

    #[test]
    fn pattern_matching_nothing() {
        let mut st = store();
        let (_, n) = st.add_always_pattern("zzz", Label::Neither, "a").unwrap();
        assert_eq!(n, 0);
    }

    #[test]
    fn pattern_conflict_and_retire_twice() {
        let mut st = store();
        let (p, _) = st.add_always_pattern("dementia", Label::Yes, "a").unwrap();
        assert!(matches!(
            st.add_always_pattern("dementia", Label::No, "a"),
            Err(Error::PatternConflict { .. })
        ));
        assert_eq!(st.retire_pattern(&p.pattern_id).unwrap(), 2);
        assert!(matches!(
            st.retire_pattern(&p.pattern_id),
            Err(Error::UnknownPattern(_))
        ));
        // after retirement the regex may be reused with another label
        st.add_always_pattern("dementia", Label::No, "a").unwrap();
    }

    #[test]
    fn invalid_regex_reports_position() {
        let mut st = store();
        match st.add_always_pattern("ab(c", Label::Yes, "a") {
            Err(Error::InvalidRegex { position, .. }) => assert_eq!(position, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn retire_falls_back_to_next_active_pattern() {
        let mut st = store();
        let (p1, n1) = st.add_always_pattern("dementia", Label::Yes, "a").unwrap();
        let (_, n2) = st.add_always_pattern("caregiver", Label::Neither, "a").unwrap();
        assert_eq!((n1, n2), (2, 0));
        assert_eq!(st.retire_pattern(&p1.pattern_id).unwrap(), 2);
        assert_eq!(st.annotation("s6").unwrap().label, Label::Neither);
        assert!(st.annotation("s5").is_none());
    }

    #[test]
    fn replay_reproduces_state() {
        let mut st = store();
        st.annotate("s2", Label::Yes, "a", false).unwrap();
        let (p, _) = st.add_always_pattern("intact", Label::No, "a").unwrap();
        st.add_always_pattern("dementia", Label::Yes, "b").unwrap();
        st.retire_pattern(&p.pattern_id).unwrap();
        let again = AnnotationStore::replay(st.sequences().to_vec(), st.events()).unwrap();
        assert_eq!(again.current(), st.current());
        let json: Vec<String> = st.events().iter().map(|e| serde_json::to_string(e).unwrap()).collect();
        assert!(json[0].starts_with(r#"{"event":"annotate""#));
    }

    #[test]
    fn propagation_scope_limits_patterns() {
        let mut st = store().with_propagation_scope(["s0", "s1"]);
        let (_, n) = st.add_always_pattern("intact", Label::No, "a").unwrap();
        assert_eq!(n, 2);
    }

    #[test]
    fn progress_counts() {
        let mut st = store();
        st.annotate("s6", Label::Neither, "a", false).unwrap();
        st.add_always_pattern("intact", Label::No, "a").unwrap();
        let pr = st.progress();
        assert_eq!(pr.total, 7);
        assert_eq!(pr.labeled, 6);
        assert_eq!(pr.counts["No/always_pattern"], 5);
        assert_eq!(pr.counts["Neither/manual"], 1);
        assert_eq!(pr.counts["Yes/manual"], 0);
    }

    fn items(cells: &[(Label, ProvenanceKind, usize)]) -> Vec<LabeledSequence> {
        let mut out = Vec::new();
        for &(label, prov, n) in cells {
            for _ in 0..n {
                let i = out.len();
                out.push(LabeledSequence {
                    sequence_id: format!("s{i}"),
                    patient_id: format!("p{i}"),
                    text: String::new(),
                    label,
                    provenance: prov,
                });
            }
        }
        out
    }

    #[test]
    fn split_hundred_items_ten_per_cell() {
        let mut cells = Vec::new();
        for l in Label::ALL {
            for p in [ProvenanceKind::Manual, ProvenanceKind::AlwaysPattern] {
                cells.push((l, p, 10));
            }
        }
        // 60 items in six cells plus 40 more in two of them
        cells[0].2 = 30;
        cells[1].2 = 30;
        let its = items(&cells);
        assert_eq!(its.len(), 100);
        let s = stratified_split(&its, 0.9, 7);
        assert_eq!(s.test.len(), 10);
        assert_eq!(s.train.len(), 90);
        assert!(s.warnings.is_empty());
        assert_eq!(stratified_split(&its, 0.9, 7), s);
    }

    #[test]
    fn split_keeps_patients_together() {
        let mut its = items(&[(Label::Yes, ProvenanceKind::Manual, 30)]);
        for it in its.iter_mut().take(3) {
            it.patient_id = "shared".into();
        }
        let s = stratified_split(&its, 0.9, 3);
        let side: BTreeSet<bool> = its[..3]
            .iter()
            .map(|it| s.test.contains(&it.sequence_id))
            .collect();
        assert_eq!(side.len(), 1);
    }

    #[test]
    fn split_tiny_cell_goes_to_train() {
        let its = items(&[(Label::Yes, ProvenanceKind::Manual, 1), (Label::No, ProvenanceKind::Manual, 20)]);
        let s = stratified_split(&its, 0.9, 1);
        assert!(s.train.contains(&"s0".to_string()));
        assert_eq!(s.warnings.len(), 1);
    }

    #[test]
    fn entropy_ranking() {
        let mut st = store();
        st.annotate("s0", Label::No, "a", false).unwrap();
        let mut probs = BTreeMap::new();
        probs.insert("s0".to_string(), [1.0 / 3.0; 3]);
        probs.insert("s1".to_string(), [0.8, 0.1, 0.1]);
        probs.insert("s2".to_string(), [1.0 / 3.0; 3]);
        probs.insert("s3".to_string(), [1.0, 0.0, 0.0]);
        let r = rank_uncertain(&st, &probs).unwrap();
        assert_eq!(r, vec!["s2", "s1", "s3"]);
        assert_eq!(entropy(&[1.0, 0.0, 0.0]), 0.0);

        probs.insert("s4".to_string(), [0.5, 0.4, 0.2]);
        assert!(matches!(rank_uncertain(&st, &probs), Err(Error::NotNormalized(_))));
    }

    #[test]
    fn entropy_order_matches_independent_formula() {
        let st = store();
        let dists = [[0.5, 0.3, 0.2], [0.7, 0.2, 0.1], [0.4, 0.35, 0.25]];
        let mut probs = BTreeMap::new();
        for (i, d) in dists.iter().enumerate() {
            probs.insert(format!("s{i}"), *d);
        }
        // -Σ p ln p evaluated by hand:
        // s0: 1.0296530140645737, s1: 0.8018185525433372, s2: 1.080527626604172
        let h = |d: &[f64; 3]| -(d[0] * d[0].ln() + d[1] * d[1].ln() + d[2] * d[2].ln());
        assert!((h(&dists[0]) - 1.0296530140645737).abs() < 1e-12);
        assert!((h(&dists[1]) - 0.8018185525433372).abs() < 1e-12);
        assert!((h(&dists[2]) - 1.080527626604172).abs() < 1e-12);
        assert_eq!(rank_uncertain(&st, &probs).unwrap(), vec!["s2", "s0", "s1"]);
    }
}
