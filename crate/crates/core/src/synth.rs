//! Synthetic note corpus with planted keyword evidence and gold labels.
//!
//! Every keyword occurrence in the generated text comes from a template in
//! which it is explicitly marked, so the generator knows each planted match's
//! offset independently of the extractor. Keyword-bearing segments are
//! separated by at least [`MIN_GAP`] characters of keyword-free filler, which
//! keeps each default-width window to the evidence of a single segment.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Apoe, Corpus, Gender, Label, Note, PatientRecord, DEFAULT_KEYWORDS};
use crate::error::{Error, Result};
use crate::extract::{sequence_id, window_bounds, DEFAULT_WINDOW};

/// Minimum filler between two keyword-bearing segments.
pub const MIN_GAP: usize = 450;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub patients: usize,
    /// Expected fraction of patients with cognitive impairment.
    pub ci_fraction: f64,
    /// Probability that a segment is a third-party mention.
    pub confounder_rate: f64,
    pub max_notes_per_patient: usize,
    pub max_segments_per_note: usize,
    /// Plant every default keyword at least once.
    pub cover_all_keywords: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            patients: 2000,
            ci_fraction: 0.2,
            confounder_rate: 0.15,
            max_notes_per_patient: 4,
            max_segments_per_note: 2,
            cover_all_keywords: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Yes,
    No,
    Neither,
    /// Keyword about someone other than the patient; labeled Neither.
    ThirdParty,
}

impl SegmentKind {
    pub fn label(self) -> Label {
        match self {
            SegmentKind::Yes => Label::Yes,
            SegmentKind::No => Label::No,
            SegmentKind::Neither | SegmentKind::ThirdParty => Label::Neither,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedMatch {
    pub sequence_id: String,
    pub note_id: String,
    pub patient_id: String,
    pub keyword: String,
    pub match_offset: usize,
    pub match_length: usize,
    pub kind: SegmentKind,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldLabel {
    pub sequence_id: String,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientGold {
    pub patient_id: String,
    pub cognitive_impairment: bool,
}

/// An always pattern that agrees with the generator's gold labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternSpec {
    pub regex: String,
    pub label: Label,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub corpus: Corpus,
    pub patient_gold: Vec<PatientGold>,
    pub planted: Vec<PlantedMatch>,
}

impl SynthCorpus {
    /// One gold label per planted match whose window survives identical-window
    /// dedup at the given width; within a collapsed group the earliest match
    /// is kept, as extraction does.
    pub fn gold_labels(&self, window: usize) -> Vec<GoldLabel> {
        gold_labels(&self.corpus, &self.planted, window)
    }

    pub fn gold_file(&self) -> GoldFile {
        GoldFile {
            planted: self.planted.clone(),
            patients: self.patient_gold.clone(),
        }
    }
}

/// Generator ground truth as written by `cogscan synth`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldFile {
    pub planted: Vec<PlantedMatch>,
    pub patients: Vec<PatientGold>,
}

/// See [`SynthCorpus::gold_labels`]; `corpus` supplies the note lengths.
pub fn gold_labels(corpus: &Corpus, planted: &[PlantedMatch], window: usize) -> Vec<GoldLabel> {
    let mut seen = BTreeSet::new();
    planted
        .iter()
        .filter(|p| {
            let len = corpus.note(&p.note_id).map_or(0, |n| n.text.chars().count());
            let bounds = window_bounds(p.match_offset, p.match_length, len, window);
            seen.insert((p.note_id.as_str(), bounds))
        })
        .map(|p| GoldLabel {
            sequence_id: p.sequence_id.clone(),
            label: p.label,
        })
        .collect()
}

// Keywords are wrapped in [brackets]; {placeholders} are filled per use.
const YES_TEMPLATES: &[&str] = &[
    "Patient reports progressive [memory] loss over the past year. [MOCA] today {low}/30, consistent with [MCI].",
    "Assessment: mild [cognitive impairment], amnestic type. Daughter reports repeated questions and getting lost while driving.",
    "[Neurocognitive] testing shows deficits in recall and executive function with impaired daily living; consistent with [dementia].",
    "Diagnosis: [Alzheimer] type [dementia], moderate stage. Started donepezil 5 mg daily and home safety review.",
    "[MMSE] {low}/30 with impaired delayed recall and disorientation to date; cannot manage own medications.",
    "Impression: probable [Lewy] body [dementia] ([LBD]) given visual hallucinations and fluctuating attention.",
    "Known [AD] diagnosed two years ago, now requires assistance with finances, cooking and medications.",
    "Exam suggests [corticobasal] syndrome with limb apraxia and progressive decline in reasoning.",
    "Behavioral features of [Picks] disease with disinhibition, apathy and impaired judgment noted by family.",
    "Persistent anterograde [amnesia] with impaired new learning; unable to recall events from this morning.",
    "Worsening short term [memory] and word finding difficulty; consistent with [MCI] progressing to early [dementia].",
    "Impaired [cognition] on bedside screening, disoriented to place and time, unable to perform serial sevens.",
];

const NO_TEMPLATES: &[&str] = &[
    "Mental status: alert and oriented x3, [memory] grossly intact, fund of knowledge appropriate.",
    "[Cognition] intact. Attention and concentration normal; insight and judgment good.",
    "[MOCA] {high}/30, no evidence of [cognitive impairment] on today's screening.",
    "Patient denies [memory] problems; orientation and recall intact, sensorium clear.",
    "[MMSE] {high}/30, thought content appropriate, abstract reasoning intact.",
    "[Neurocognitive] screen within normal limits; no concern for [dementia] at this time.",
    "Alert, oriented to person, place and time, [cognition] grossly intact, perceptions normal.",
];

const NEITHER_TEMPLATES: &[&str] = &[
    "[Cerebral] angiogram showed no aneurysm; follow up with vascular surgery in six months.",
    "[Cerebrovascular] risk factors include hypertension and hyperlipidemia; continue statin therapy.",
    "[Cerebellar] exam: finger to nose and heel to shin testing without dysmetria.",
    "Provided educational handout on [Alzheimer] research studies and healthy aging programs.",
    "[Memory] clinic referral form faxed on behalf of primary team; awaiting scheduling call.",
    "Prior head CT showed chronic [cerebral] small vessel changes; no acute hemorrhage.",
    "Screening questionnaire for [MCI] study eligibility mailed to the household.",
];

const THIRD_PARTY_TEMPLATES: &[&str] = &[
    "Patient is caregiver for {relative} who has [dementia]; reports caregiver stress and poor sleep.",
    "Family history: {relative} had [Alzheimer] disease in her seventies; patient asks about genetic risk.",
    "Patient's {relative} with advanced [dementia] recently moved to a [memory] care facility.",
    "{relative} diagnosed with [Lewy] body [dementia] last spring; patient accompanies to visits.",
];

const RELATIVES: &[&str] = &["wife", "husband", "mother", "father", "sister", "brother"];

const FILLER: &[&str] = &[
    "Patient presents for routine follow up of hypertension.",
    "Blood pressure well controlled on lisinopril 10 mg daily.",
    "Denies chest pain, shortness of breath, or palpitations.",
    "Lungs clear to auscultation bilaterally without wheezes.",
    "Abdomen soft, nontender, nondistended, bowel sounds present.",
    "Hemoglobin A1c improved to 6.8 percent since last visit.",
    "Continue metformin and reinforce dietary counseling.",
    "Reports mild knee pain after walking more than a mile.",
    "Physical therapy referral placed for right shoulder stiffness.",
    "Influenza vaccine administered in the left deltoid today.",
    "Lipid panel reviewed with the patient in detail.",
    "No fevers, chills, nausea, or vomiting reported.",
    "Skin warm and dry with no rashes or lesions noted.",
    "Sleeping reasonably well with occasional nighttime urination.",
    "Weight stable compared with the visit three months ago.",
    "Follow up in the primary care office in three months.",
    "Discussed colon cancer screening options and preferences.",
    "Extremities without edema; pulses palpable throughout.",
    "Medication list reconciled and refills sent to pharmacy.",
    "Heart regular rate and rhythm without murmurs or gallops.",
    "Vision screening deferred to the ophthalmology appointment.",
    "Patient walks daily with a neighbor and enjoys gardening.",
];

const YES_PATTERNS: &[(&str, Label)] = &[
    (r"consistent with (MCI|early dementia|dementia)", Label::Yes),
    (r"(?i)grossly intact", Label::No),
    (r"caregiver for (wife|husband|mother|father|sister|brother)", Label::Neither),
    (r"(?i)cerebellar exam", Label::Neither),
];

/// Always patterns whose labels agree with the templates they match.
pub fn default_patterns() -> Vec<PatternSpec> {
    YES_PATTERNS
        .iter()
        .map(|&(r, label)| PatternSpec {
            regex: r.to_string(),
            label,
        })
        .collect()
}

/// A template after placeholder substitution and markup removal.
struct Rendered {
    text: String,
    /// (character offset, character length, keyword as written)
    marks: Vec<(usize, usize, String)>,
}

fn render(template: &str, rng: &mut ChaCha8Rng) -> Rendered {
    let filled = template
        .replace("{low}", &rng.gen_range(12..=23).to_string())
        .replace("{high}", &rng.gen_range(27..=30).to_string())
        .replace("{relative}", RELATIVES.choose(rng).unwrap());
    let mut text = String::with_capacity(filled.len());
    let mut marks = Vec::new();
    let mut chars = 0usize;
    let mut open: Option<(usize, String)> = None;
    for c in filled.chars() {
        match c {
            '[' => open = Some((chars, String::new())),
            ']' => {
                let (start, word) = open.take().expect("balanced template markup");
                marks.push((start, chars - start, word));
            }
            _ => {
                if let Some((_, word)) = open.as_mut() {
                    word.push(c);
                }
                text.push(c);
                chars += 1;
            }
        }
    }
    Rendered { text, marks }
}

fn canonical_keyword(written: &str) -> &'static str {
    let folded = written.to_lowercase();
    DEFAULT_KEYWORDS
        .iter()
        .find(|k| k.to_lowercase() == folded)
        .copied()
        .unwrap_or_else(|| panic!("template keyword {written:?} is not in the default lexicon"))
}

fn templates(kind: SegmentKind) -> &'static [&'static str] {
    match kind {
        SegmentKind::Yes => YES_TEMPLATES,
        SegmentKind::No => NO_TEMPLATES,
        SegmentKind::Neither => NEITHER_TEMPLATES,
        SegmentKind::ThirdParty => THIRD_PARTY_TEMPLATES,
    }
}

fn filler(rng: &mut ChaCha8Rng, min_len: usize) -> String {
    let mut out = String::new();
    while out.len() < min_len {
        out.push_str(FILLER.choose(rng).unwrap());
        out.push(' ');
    }
    for _ in 0..rng.gen_range(0..3) {
        out.push_str(FILLER.choose(rng).unwrap());
        out.push(' ');
    }
    out
}

struct NoteBuilder {
    note_id: String,
    patient_id: String,
    text: String,
    len: usize,
    planted: Vec<PlantedMatch>,
}

impl NoteBuilder {
    fn push_text(&mut self, s: &str) {
        self.len += s.chars().count();
        self.text.push_str(s);
    }

    fn push_segment(&mut self, kind: SegmentKind, template: &str, rng: &mut ChaCha8Rng) {
        let r = render(template, rng);
        for (off, len, word) in r.marks {
            let offset = self.len + off;
            self.planted.push(PlantedMatch {
                sequence_id: sequence_id(&self.note_id, offset, len),
                note_id: self.note_id.clone(),
                patient_id: self.patient_id.clone(),
                keyword: canonical_keyword(&word).to_string(),
                match_offset: offset,
                match_length: len,
                kind,
                label: kind.label(),
            });
        }
        self.push_text(&r.text);
        self.push_text(" ");
    }
}

const APOE_FREQ: [(Apoe, f64); 3] = [(Apoe::E2, 0.123), (Apoe::E3, 0.620), (Apoe::E4, 0.257)];
const APOE_RISK: [f64; 3] = [0.8, 1.0, 1.6];

fn draw_apoe(rng: &mut ChaCha8Rng) -> (Apoe, usize) {
    let total: f64 = APOE_FREQ.iter().map(|(_, f)| f).sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, (a, f)) in APOE_FREQ.iter().enumerate() {
        if u < *f {
            return (*a, i);
        }
        u -= f;
    }
    (Apoe::E4, 2)
}

/// CI probability per allele, scaled so the population mean is `ci_fraction`.
fn ci_probability(ci_fraction: f64, allele: usize) -> f64 {
    let total: f64 = APOE_FREQ.iter().map(|(_, f)| f).sum();
    let mean_risk: f64 = APOE_FREQ
        .iter()
        .zip(APOE_RISK)
        .map(|((_, f), r)| f / total * r)
        .sum();
    (ci_fraction * APOE_RISK[allele] / mean_risk).min(1.0)
}

fn draw_kind(rng: &mut ChaCha8Rng, ci: bool, confounder_rate: f64) -> SegmentKind {
    if rng.gen::<f64>() < confounder_rate {
        return SegmentKind::ThirdParty;
    }
    let u = rng.gen::<f64>();
    match (ci, u) {
        (true, u) if u < 0.65 => SegmentKind::Yes,
        (true, _) => SegmentKind::Neither,
        (false, u) if u < 0.55 => SegmentKind::No,
        (false, _) => SegmentKind::Neither,
    }
}

pub fn generate_synthetic_corpus(config: &SynthConfig, seed: u64) -> Result<SynthCorpus> {
    if config.patients == 0 {
        return Err(Error::InvalidInput("synthetic corpus needs at least one patient".into()));
    }
    if !(0.0..=1.0).contains(&config.ci_fraction) || !(0.0..=1.0).contains(&config.confounder_rate)
    {
        return Err(Error::InvalidInput("rates must lie in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let age = Normal::new(73.01f64, 7.96).expect("valid normal");
    let width = config.patients.to_string().len().max(5);

    let mut patients = Vec::with_capacity(config.patients);
    let mut patient_gold = Vec::with_capacity(config.patients);
    let mut builders: Vec<NoteBuilder> = Vec::new();

    for i in 0..config.patients {
        let patient_id = format!("P{:0width$}", i + 1);
        let (apoe, allele) = draw_apoe(&mut rng);
        let ci = rng.gen::<f64>() < ci_probability(config.ci_fraction, allele);
        let med_icd_flag = rng.gen::<f64>() < if ci { 0.6 } else { 0.03 };
        let gender = match rng.gen::<f64>() {
            u if u < 0.532 => Gender::Male,
            u if u < 0.995 => Gender::Female,
            _ => Gender::OtherUnknown,
        };
        let age_years: f64 = age.sample(&mut rng).max(60.0);
        patients.push(PatientRecord {
            patient_id: patient_id.clone(),
            age_years: (age_years * 10.0).round() / 10.0,
            gender,
            apoe,
            med_icd_flag,
        });
        patient_gold.push(PatientGold {
            patient_id: patient_id.clone(),
            cognitive_impairment: ci,
        });

        let n_notes = rng.gen_range(1..=config.max_notes_per_patient.max(1));
        let mut has_yes = false;
        for n in 0..n_notes {
            let mut b = NoteBuilder {
                note_id: format!("{patient_id}-N{}", n + 1),
                patient_id: patient_id.clone(),
                text: String::new(),
                len: 0,
                planted: Vec::new(),
            };
            // Occasionally start with a short lead so some windows clip at the start.
            let lead = if rng.gen::<f64>() < 0.25 { 0 } else { MIN_GAP };
            b.push_text(&filler(&mut rng, lead));
            let n_segments = rng.gen_range(1..=config.max_segments_per_note.max(1));
            for s in 0..n_segments {
                let mut kind = draw_kind(&mut rng, ci, config.confounder_rate);
                if ci && !has_yes && n == n_notes - 1 && s == n_segments - 1 {
                    kind = SegmentKind::Yes;
                }
                has_yes |= kind == SegmentKind::Yes;
                let template = templates(kind).choose(&mut rng).unwrap();
                b.push_segment(kind, template, &mut rng);
                // a window clipped at the note start spans [0, window), so the
                // next segment must start past it
                let gap = if lead == 0 && s == 0 { DEFAULT_WINDOW } else { MIN_GAP };
                b.push_text(&filler(&mut rng, gap));
            }
            builders.push(b);
        }
    }

    if config.cover_all_keywords {
        cover_keywords(&mut builders, &patient_gold, config, &mut rng);
    }

    let mut planted = Vec::new();
    let mut notes = Vec::with_capacity(builders.len());
    for b in builders {
        planted.extend(b.planted);
        let day = rng.gen_range(0..4000);
        let date = chrono::NaiveDate::from_ymd_opt(2010, 1, 1).unwrap()
            + chrono::Duration::days(day);
        notes.push(Note {
            note_id: b.note_id,
            patient_id: b.patient_id,
            timestamp: date.format("%Y-%m-%d").to_string(),
            text: b.text.trim_end().to_string(),
        });
    }
    let (corpus, rejected) = Corpus::build(patients, notes)?;
    debug_assert!(rejected.is_empty());
    Ok(SynthCorpus {
        corpus,
        patient_gold,
        planted,
    })
}

/// Appends a segment for every default keyword that was never planted.
fn cover_keywords(
    builders: &mut [NoteBuilder],
    gold: &[PatientGold],
    config: &SynthConfig,
    rng: &mut ChaCha8Rng,
) {
    let planted: BTreeSet<String> = builders
        .iter()
        .flat_map(|b| b.planted.iter().map(|p| p.keyword.clone()))
        .collect();
    let ci: BTreeMap<&str, bool> = gold
        .iter()
        .map(|g| (g.patient_id.as_str(), g.cognitive_impairment))
        .collect();
    let mut kinds = vec![SegmentKind::Neither, SegmentKind::No, SegmentKind::Yes];
    if config.confounder_rate > 0.0 {
        kinds.push(SegmentKind::ThirdParty);
    }
    for keyword in DEFAULT_KEYWORDS.iter().filter(|k| !planted.contains(**k)) {
        let choice = kinds.iter().find_map(|&kind| {
            templates(kind)
                .iter()
                .find(|t| render_keywords(t).contains(keyword))
                .map(|t| (kind, *t))
        });
        let Some((kind, template)) = choice else { continue };
        let target = builders.iter_mut().find(|b| match kind {
            SegmentKind::Yes => ci[b.patient_id.as_str()],
            SegmentKind::No => !ci[b.patient_id.as_str()],
            _ => true,
        });
        if let Some(b) = target {
            b.push_text(&filler(rng, MIN_GAP));
            b.push_segment(kind, template, rng);
            b.push_text(&filler(rng, MIN_GAP));
        }
    }
}

fn render_keywords(template: &str) -> Vec<&'static str> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    render(template, &mut rng)
        .marks
        .into_iter()
        .map(|(_, _, w)| canonical_keyword(&w))
        .collect()
}

/// All template texts for every segment kind, rendered with a fixed seed.
pub fn rendered_templates() -> Vec<(SegmentKind, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    [
        SegmentKind::Yes,
        SegmentKind::No,
        SegmentKind::Neither,
        SegmentKind::ThirdParty,
    ]
    .into_iter()
    .flat_map(|k| templates(k).iter().map(move |t| (k, *t)))
    .map(|(k, t)| (k, render(t, &mut rng).text))
    .collect()
}

pub fn filler_sentences() -> &'static [&'static str] {
    FILLER
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::default_lexicon;

    fn small(patients: usize) -> SynthConfig {
        SynthConfig {
            patients,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn markup_positions_match_lexicon() {
        let lex = default_lexicon();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for kind in [
            SegmentKind::Yes,
            SegmentKind::No,
            SegmentKind::Neither,
            SegmentKind::ThirdParty,
        ] {
            for t in templates(kind) {
                let r = render(t, &mut rng);
                assert!(r.text.is_ascii());
                let found: Vec<(usize, usize)> = lex
                    .find_all(&r.text)
                    .iter()
                    .map(|m| (m.start, m.end - m.start))
                    .collect();
                let marked: Vec<(usize, usize)> = r.marks.iter().map(|m| (m.0, m.1)).collect();
                assert_eq!(found, marked, "template {t:?}");
            }
        }
    }

    #[test]
    fn filler_has_no_keywords() {
        let lex = default_lexicon();
        for f in FILLER {
            assert!(lex.find_all(f).is_empty(), "{f}");
        }
    }

    #[test]
    fn patterns_agree_with_templates() {
        for p in default_patterns() {
            let re = regex::Regex::new(&p.regex).unwrap();
            let mut hits = 0;
            for (kind, text) in rendered_templates() {
                if re.is_match(&text) {
                    hits += 1;
                    assert_eq!(kind.label(), p.label, "{} matched {text:?}", p.regex);
                }
            }
            assert!(hits > 0, "{} matches no template", p.regex);
            for f in FILLER {
                assert!(!re.is_match(f));
            }
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let a = generate_synthetic_corpus(&small(50), 1).unwrap();
        let b = generate_synthetic_corpus(&small(50), 1).unwrap();
        assert_eq!(a.corpus, b.corpus);
        assert_eq!(a.planted, b.planted);
        let c = generate_synthetic_corpus(&small(50), 2).unwrap();
        assert_ne!(a.corpus, c.corpus);
    }

    #[test]
    fn zero_patients_is_an_error() {
        assert!(generate_synthetic_corpus(&small(0), 1).is_err());
    }

    #[test]
    fn no_confounders_when_rate_is_zero() {
        let cfg = SynthConfig {
            confounder_rate: 0.0,
            ..small(300)
        };
        let s = generate_synthetic_corpus(&cfg, 9).unwrap();
        assert!(s.planted.iter().all(|p| p.kind != SegmentKind::ThirdParty));
        assert!(s
            .corpus
            .notes()
            .iter()
            .all(|n| !n.text.contains("caregiver for") && !n.text.contains("Family history")));
    }

    #[test]
    fn every_ci_patient_has_yes_evidence() {
        let s = generate_synthetic_corpus(&small(400), 5).unwrap();
        let with_yes: BTreeSet<&str> = s
            .planted
            .iter()
            .filter(|p| p.label == Label::Yes)
            .map(|p| p.patient_id.as_str())
            .collect();
        for g in &s.patient_gold {
            if g.cognitive_impairment {
                assert!(with_yes.contains(g.patient_id.as_str()));
            } else {
                assert!(!with_yes.contains(g.patient_id.as_str()));
            }
        }
    }

    #[test]
    fn every_keyword_is_planted() {
        let s = generate_synthetic_corpus(&small(40), 11).unwrap();
        let kws: BTreeSet<&str> = s.planted.iter().map(|p| p.keyword.as_str()).collect();
        for k in DEFAULT_KEYWORDS {
            assert!(kws.contains(k), "{k} missing");
        }
    }

    #[test]
    fn ci_fraction_within_binomial_interval() {
        let n = 1000;
        let s = generate_synthetic_corpus(&small(n), 21).unwrap();
        let k = s.patient_gold.iter().filter(|g| g.cognitive_impairment).count();
        // normal approximation to the binomial 95% interval around p = 0.2
        let half = 1.96 * (0.2f64 * 0.8 / n as f64).sqrt();
        let frac = k as f64 / n as f64;
        assert!((frac - 0.2).abs() <= half, "fraction {frac} outside 0.2 ± {half}");
    }

    #[test]
    fn planted_offsets_point_at_keywords() {
        let s = generate_synthetic_corpus(&small(30), 4).unwrap();
        let notes: BTreeMap<&str, &Note> =
            s.corpus.notes().iter().map(|n| (n.note_id.as_str(), n)).collect();
        for p in &s.planted {
            let text = &notes[p.note_id.as_str()].text;
            let word = &text[p.match_offset..p.match_offset + p.match_length];
            assert_eq!(word.to_lowercase().split_whitespace().collect::<Vec<_>>(),
                p.keyword.to_lowercase().split_whitespace().collect::<Vec<_>>());
        }
    }
}
