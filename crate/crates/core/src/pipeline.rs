//! In-memory wiring of the stages: gold annotation of a synthetic corpus and
//! the end-to-end holdout benchmark.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::annotation::{stratified_split, AnnotationStore, Clock, LabeledSequence};
use crate::corpus::default_lexicon;
use crate::error::{Error, Result};
use crate::evaluation::{metric_report, MetricReport};
use crate::extract::{dedupe_overlapping, extract_sequences, Sequence, DEFAULT_WINDOW};
use crate::manifest::{config_hash, derive_seed};
use crate::synth::{default_patterns, generate_synthetic_corpus, GoldLabel, PatternSpec, SynthConfig};
use crate::training::{train, ModelArtifact, TrainConfig};

/// Builds a store the way the annotators would: patterns first, then manual
/// labels for whatever the patterns left unlabeled. Timestamps use the epoch
/// so the event log is reproducible.
pub fn gold_store(sequences: Vec<Sequence>, gold: &[GoldLabel], patterns: &[PatternSpec]) -> Result<AnnotationStore> {
    let mut store = AnnotationStore::new(sequences).with_clock(Clock::epoch());
    for p in patterns {
        store.add_always_pattern(&p.regex, p.label, "pattern-author")?;
    }
    for g in gold {
        if store.sequence(&g.sequence_id).is_none() {
            return Err(Error::UnknownSequence(g.sequence_id.clone()));
        }
        if !store.is_labeled(&g.sequence_id) {
            store.annotate(&g.sequence_id, g.label, "gold", false)?;
        }
    }
    Ok(store)
}

/// Stratified patient-disjoint split of labeled items into (train, test,
/// warnings), each side in input order.
pub fn split_labeled(
    labeled: &[LabeledSequence],
    train_fraction: f64,
    seed: u64,
) -> (Vec<LabeledSequence>, Vec<LabeledSequence>, Vec<String>) {
    let split = stratified_split(labeled, train_fraction, seed);
    let train: BTreeSet<&str> = split.train.iter().map(String::as_str).collect();
    let (train_items, test_items) = labeled
        .iter()
        .cloned()
        .partition(|l| train.contains(l.sequence_id.as_str()));
    (train_items, test_items, split.warnings)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub synth: SynthConfig,
    pub window: usize,
    pub train_fraction: f64,
    pub train: TrainConfig,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            synth: SynthConfig::default(),
            window: DEFAULT_WINDOW,
            train_fraction: 0.9,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkOutcome {
    pub sequences: usize,
    pub train_items: usize,
    pub test_items: usize,
    pub split_warnings: Vec<String>,
    pub report: MetricReport,
    pub artifact: ModelArtifact,
}

/// Synthetic corpus → extraction → gold annotation → split → CV training →
/// holdout metrics. Every random choice derives from `seed`.
pub fn run_benchmark(config: &BenchmarkConfig, seed: u64) -> Result<BenchmarkOutcome> {
    let synth = generate_synthetic_corpus(&config.synth, derive_seed(seed, "synth"))?;
    let sequences = dedupe_overlapping(extract_sequences(&synth.corpus, &default_lexicon(), config.window));
    let n_sequences = sequences.len();
    let store = gold_store(sequences, &synth.gold_labels(config.window), &default_patterns())?;
    let labeled = store.labeled();
    let (train_items, test_items, split_warnings) =
        split_labeled(&labeled, config.train_fraction, derive_seed(seed, "split"));

    let mut train_config = config.train.clone();
    train_config.plan.seed = derive_seed(seed, "cv");
    let hash = config_hash(&(config, seed))?;
    let artifact = train(&train_items, &train_config, &hash)?;

    let texts: Vec<&str> = test_items.iter().map(|i| i.text.as_str()).collect();
    let probs = artifact.score(&texts)?;
    let truth: Vec<_> = test_items.iter().map(|i| i.label).collect();
    let report = metric_report("TF-IDF", &probs, &truth, artifact.model.decision_threshold)?;

    Ok(BenchmarkOutcome {
        sequences: n_sequences,
        train_items: train_items.len(),
        test_items: test_items.len(),
        split_warnings,
        report,
        artifact,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::ProvenanceKind;

    #[test]
    fn gold_store_labels_everything_and_agrees_with_gold() {
        let synth = generate_synthetic_corpus(&SynthConfig { patients: 60, ..SynthConfig::default() }, 4).unwrap();
        let seqs = dedupe_overlapping(extract_sequences(&synth.corpus, &default_lexicon(), DEFAULT_WINDOW));
        let gold = synth.gold_labels(DEFAULT_WINDOW);
        let store = gold_store(seqs, &gold, &default_patterns()).unwrap();
        assert_eq!(store.progress().unlabeled, 0);
        let current = store.current();
        for g in &gold {
            assert_eq!(current[&g.sequence_id].label, g.label, "{}", g.sequence_id);
        }
        let labeled = store.labeled();
        assert!(labeled.iter().any(|l| l.provenance == ProvenanceKind::AlwaysPattern));
        assert!(labeled.iter().any(|l| l.provenance == ProvenanceKind::Manual));
    }

    #[test]
    fn unknown_gold_id_is_error() {
        let gold = [GoldLabel {
            sequence_id: "nope@0+1".into(),
            label: crate::Label::Yes,
        }];
        assert!(matches!(gold_store(Vec::new(), &gold, &[]), Err(Error::UnknownSequence(_))));
    }
}
