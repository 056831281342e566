//! Independent reference implementations and random instance generators
//! shared by the property and acceptance suites.

#![allow(dead_code)]

use std::collections::BTreeMap;

use cogscan::annotation::{LabeledSequence, ProvenanceKind};
use cogscan::extract::Sequence;
use cogscan::Label;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- metrics

/// AUC by direct comparison of every positive/negative pair; ties count 1/2.
pub fn pair_auc(scores: &[f64], positive: &[bool]) -> f64 {
    let (mut twice, mut np, mut nn) = (0u64, 0u64, 0u64);
    for (i, &pi) in positive.iter().enumerate() {
        if pi {
            np += 1;
        } else {
            nn += 1;
        }
        if !pi {
            continue;
        }
        for (j, &pj) in positive.iter().enumerate() {
            if pj {
                continue;
            }
            if scores[i] > scores[j] {
                twice += 2;
            } else if scores[i] == scores[j] {
                twice += 1;
            }
        }
    }
    twice as f64 / (2 * np * nn) as f64
}

/// Scores drawn from a handful of values so that ties are common, with at
/// least one positive and one negative.
pub fn tied_scores(r: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<bool>) {
    let levels = r.gen_range(2..6);
    let scores: Vec<f64> = (0..n).map(|_| r.gen_range(0..levels) as f64 / levels as f64).collect();
    let mut pos: Vec<bool> = (0..n).map(|_| r.gen_bool(0.4)).collect();
    pos[0] = true;
    pos[1] = false;
    (scores, pos)
}

// ---------------------------------------------------------------- tf-idf

pub const TOY_WORDS: [&str; 10] = ["aa", "bb", "cc", "dd", "ee", "ff", "gg", "hh", "ii", "jj"];

/// Up to 10 documents of up to 30 tokens over a small vocabulary.
pub fn toy_corpus(r: &mut ChaCha8Rng) -> (Vec<Vec<&'static str>>, Vec<bool>) {
    let n_docs = r.gen_range(2..=10);
    let vocab = r.gen_range(1..=TOY_WORDS.len());
    let mut docs: Vec<Vec<&str>> = (0..n_docs)
        .map(|_| {
            let len = r.gen_range(0..=30);
            (0..len).map(|_| TOY_WORDS[r.gen_range(0..vocab)]).collect()
        })
        .collect();
    if docs.iter().all(|d| d.is_empty()) {
        docs[0].push(TOY_WORDS[0]);
    }
    let mut y: Vec<bool> = (0..n_docs).map(|_| r.gen_bool(0.5)).collect();
    y[0] = true;
    y[1] = false;
    y.shuffle(r);
    (docs, y)
}

/// TF-IDF straight from the definitions: sorted vocabulary, raw counts,
/// idf = ln((1+N)/(1+df)) + 1, unit L2 rows. Returns (vocabulary, dense rows).
pub fn brute_tfidf(docs: &[Vec<&str>]) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut vocab: Vec<String> = docs.iter().flatten().map(|t| t.to_string()).collect();
    vocab.sort();
    vocab.dedup();
    let n = docs.len() as f64;
    let idf: Vec<f64> = vocab
        .iter()
        .map(|t| {
            let df = docs.iter().filter(|d| d.iter().any(|w| w == t)).count() as f64;
            ((1.0 + n) / (1.0 + df)).ln() + 1.0
        })
        .collect();
    let rows = docs
        .iter()
        .map(|d| {
            let raw: Vec<f64> = vocab
                .iter()
                .zip(&idf)
                .map(|(t, w)| d.iter().filter(|x| *x == t).count() as f64 * w)
                .collect();
            let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
            raw.iter().map(|v| if norm > 0.0 { v / norm } else { 0.0 }).collect()
        })
        .collect();
    (vocab, rows)
}

/// Textbook two-pass Pearson correlation; `None` for a constant column.
pub fn brute_pearson(x: &[f64], y: &[bool]) -> Option<f64> {
    if x.iter().all(|v| *v == x[0]) {
        return None;
    }
    let n = x.len() as f64;
    let yv: Vec<f64> = y.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let mx = x.iter().sum::<f64>() / n;
    let my = yv.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(&yv).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = yv.iter().map(|b| (b - my) * (b - my)).sum();
    Some(sxy / (sxx * syy).sqrt())
}

// ---------------------------------------------------------------- solver

/// Dense random problem with every class present: (rows, labels, lambda).
pub fn solver_instance(r: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<usize>, f64) {
    let n = r.gen_range(6..=50);
    let d = r.gen_range(1..=10);
    let x: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..d)
                .map(|_| if r.gen_bool(0.3) { 0.0 } else { r.gen_range(-1.0..1.0) })
                .collect()
        })
        .collect();
    let mut y: Vec<usize> = (0..n).map(|_| r.gen_range(0..3)).collect();
    y[0] = 0;
    y[1] = 1;
    y[2] = 2;
    let lambda = 10f64.powf(r.gen_range(-3.0..0.0));
    (x, y, lambda)
}

/// Mean multinomial NLL of `W` (class-major, 3×d) and `b`, with its gradient.
pub fn dense_nll(x: &[Vec<f64>], y: &[usize], w: &[f64], b: &[f64; 3]) -> (f64, Vec<f64>, [f64; 3]) {
    let d = x[0].len();
    let n = x.len() as f64;
    let mut f = 0.0;
    let mut gw = vec![0.0; 3 * d];
    let mut gb = [0.0; 3];
    for (row, &yi) in x.iter().zip(y) {
        let z: Vec<f64> = (0..3)
            .map(|k| b[k] + (0..d).map(|j| w[k * d + j] * row[j]).sum::<f64>())
            .collect();
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        f += lse - z[yi];
        for k in 0..3 {
            let r = (z[k] - lse).exp() - if k == yi { 1.0 } else { 0.0 };
            gb[k] += r / n;
            for j in 0..d {
                gw[k * d + j] += r * row[j] / n;
            }
        }
    }
    (f / n, gw, gb)
}

/// Minimizes NLL(W, b) + λ‖W‖₁ by writing W = U − V with U, V ≥ 0 and running
/// spectral projected gradient (Barzilai–Borwein steps, nonmonotone Armijo
/// search) on the smooth bound-constrained problem. Returns the objective.
pub fn spg_oracle(x: &[Vec<f64>], y: &[usize], lambda: f64) -> f64 {
    let d = x[0].len();
    let m = 3 * d;
    // z = [u (m), v (m), b (3)]
    let dim = 2 * m + 3;
    let eval = |z: &[f64]| -> (f64, Vec<f64>) {
        let w: Vec<f64> = (0..m).map(|i| z[i] - z[m + i]).collect();
        let b = [z[2 * m], z[2 * m + 1], z[2 * m + 2]];
        let (f, gw, gb) = dense_nll(x, y, &w, &b);
        let pen: f64 = z[..2 * m].iter().sum::<f64>() * lambda;
        let mut g = vec![0.0; dim];
        for i in 0..m {
            g[i] = gw[i] + lambda;
            g[m + i] = -gw[i] + lambda;
        }
        g[2 * m..].copy_from_slice(&gb);
        (f + pen, g)
    };
    let project = |z: &mut [f64]| z[..2 * m].iter_mut().for_each(|v| *v = v.max(0.0));

    let mut z = vec![0.0; dim];
    let (mut f, mut g) = eval(&z);
    let mut recent = [f; 10];
    let mut alpha = 1.0;
    for it in 0..500_000 {
        let mut pg = z.iter().zip(&g).map(|(a, b)| a - b).collect::<Vec<_>>();
        project(&mut pg);
        let opt = pg.iter().zip(&z).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if opt < 1e-12 {
            break;
        }
        let mut trial: Vec<f64> = z.iter().zip(&g).map(|(a, b)| a - alpha * b).collect();
        project(&mut trial);
        let dir: Vec<f64> = trial.iter().zip(&z).map(|(a, b)| a - b).collect();
        let slope: f64 = dir.iter().zip(&g).map(|(a, b)| a * b).sum();
        let f_ref = recent.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut t = 1.0;
        let (z_new, f_new, g_new) = loop {
            let cand: Vec<f64> = z.iter().zip(&dir).map(|(a, b)| a + t * b).collect();
            let (fc, gc) = eval(&cand);
            if fc <= f_ref + 1e-4 * t * slope || t < 1e-20 {
                break (cand, fc, gc);
            }
            t *= 0.5;
        };
        let s: Vec<f64> = z_new.iter().zip(&z).map(|(a, b)| a - b).collect();
        let yk: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&yk).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|a| a * a).sum();
        alpha = if sy > 0.0 { (ss / sy).clamp(1e-10, 1e10) } else { 1e10 };
        z = z_new;
        f = f_new;
        g = g_new;
        recent[it % 10] = f;
    }
    f
}

// ---------------------------------------------------------------- annotation

pub const STORE_WORDS: [&str; 8] = ["memory", "intact", "dementia", "loss", "normal", "mother", "clinic", "mci"];

pub fn random_sequences(r: &mut ChaCha8Rng, n: usize) -> Vec<Sequence> {
    (0..n)
        .map(|i| {
            let words = r.gen_range(2..=6);
            let text = (0..words)
                .map(|_| *STORE_WORDS.choose(r).unwrap())
                .collect::<Vec<_>>()
                .join(" ");
            let len = text.chars().count();
            Sequence {
                sequence_id: format!("s{i:03}"),
                patient_id: format!("p{}", i / 2),
                note_id: format!("n{i}"),
                keyword: "memory".into(),
                match_offset: 0,
                match_length: 1,
                window_start: 0,
                window_end: len,
                text,
            }
        })
        .collect()
}

pub fn random_regex(r: &mut ChaCha8Rng) -> String {
    if r.gen_bool(0.3) {
        format!("{}|{}", STORE_WORDS.choose(r).unwrap(), STORE_WORDS.choose(r).unwrap())
    } else {
        format!(r"\b{}\b", STORE_WORDS.choose(r).unwrap())
    }
}

pub fn random_label(r: &mut ChaCha8Rng) -> Label {
    Label::from_index(r.gen_range(0..3))
}

/// Straightforward model of the labeling rule: a manual label if present,
/// else the label of the earliest-created active pattern matching the text.
#[derive(Default)]
pub struct ReferenceStore {
    pub manual: BTreeMap<String, Label>,
    /// (pattern id, regex, label, active) in creation order
    pub patterns: Vec<(String, regex::Regex, Label, bool)>,
}

impl ReferenceStore {
    pub fn expected(&self, seqs: &[Sequence]) -> BTreeMap<String, (Label, ProvenanceKind)> {
        seqs.iter()
            .filter_map(|s| {
                if let Some(&l) = self.manual.get(&s.sequence_id) {
                    return Some((s.sequence_id.clone(), (l, ProvenanceKind::Manual)));
                }
                self.patterns
                    .iter()
                    .find(|p| p.3 && p.1.is_match(&s.text))
                    .map(|p| (s.sequence_id.clone(), (p.2, ProvenanceKind::AlwaysPattern)))
            })
            .collect()
    }
}

// ---------------------------------------------------------------- split

/// Random store of labeled items: 5..80 patients with 1..4 sequences each.
pub fn random_labeled(r: &mut ChaCha8Rng) -> Vec<LabeledSequence> {
    let patients = r.gen_range(5..80);
    let mut items = Vec::new();
    for p in 0..patients {
        for k in 0..r.gen_range(1..5) {
            items.push(LabeledSequence {
                sequence_id: format!("p{p}-s{k}"),
                patient_id: format!("p{p}"),
                text: String::new(),
                label: random_label(r),
                provenance: if r.gen_bool(0.5) {
                    ProvenanceKind::Manual
                } else {
                    ProvenanceKind::AlwaysPattern
                },
            });
        }
    }
    items
}
