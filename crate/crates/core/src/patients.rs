//! Patient-level roll-up of sequence calls, the count threshold sweep against
//! Med/ICD prevalence per APOE allele, and the allele comparison report.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::corpus::{Apoe, PatientRecord};
use crate::error::{Error, Result};

/// One sequence-level Yes-vs-rest decision.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceCall {
    pub patient_id: String,
    pub positive: bool,
}

/// How the positive-sequence count is compared with the threshold `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountRule {
    /// count ≥ t
    #[default]
    AtLeast,
    /// count > t
    GreaterThan,
}

impl CountRule {
    pub fn assigns(self, count: usize, t: usize) -> bool {
        match self {
            CountRule::AtLeast => count >= t,
            CountRule::GreaterThan => count > t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientAssignment {
    pub patient_id: String,
    pub apoe: Apoe,
    pub med_icd_flag: bool,
    pub positive_sequence_count: usize,
    pub total_sequence_count: usize,
    pub threshold: usize,
    pub cognitive_impairment: bool,
}

/// (positive, total) sequence counts per patient in the table; patients with
/// no sequences count (0, 0).
fn counts(calls: &[SequenceCall], patients: &[PatientRecord]) -> Result<BTreeMap<String, (usize, usize)>> {
    let mut out: BTreeMap<String, (usize, usize)> =
        patients.iter().map(|p| (p.patient_id.clone(), (0, 0))).collect();
    for c in calls {
        let e = out.get_mut(&c.patient_id).ok_or_else(|| {
            Error::InvalidInput(format!("sequence call for unknown patient {:?}", c.patient_id))
        })?;
        e.0 += usize::from(c.positive);
        e.1 += 1;
    }
    Ok(out)
}

/// One assignment per patient in `patients`, in table order.
pub fn aggregate_patients(
    calls: &[SequenceCall],
    patients: &[PatientRecord],
    t: usize,
    rule: CountRule,
) -> Result<Vec<PatientAssignment>> {
    let counts = counts(calls, patients)?;
    Ok(patients
        .iter()
        .map(|p| {
            let (pos, total) = counts[&p.patient_id];
            PatientAssignment {
                patient_id: p.patient_id.clone(),
                apoe: p.apoe,
                med_icd_flag: p.med_icd_flag,
                positive_sequence_count: pos,
                total_sequence_count: total,
                threshold: t,
                cognitive_impairment: rule.assigns(pos, t),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlleleFractions {
    pub apoe: Apoe,
    pub patients: usize,
    pub predicted: f64,
    pub med_icd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub t: usize,
    pub alleles: Vec<AlleleFractions>,
    /// Σ over alleles of |predicted − med_icd|.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTuning {
    pub best_t: usize,
    pub rule: CountRule,
    pub rows: Vec<ThresholdRow>,
    pub warnings: Vec<String>,
}

/// Picks the `t` whose per-allele predicted-Yes fractions are closest, in L1
/// distance, to the per-allele Med/ICD fractions. Ties go to the smaller `t`.
/// Patients of unknown genotype are left out; empty alleles are skipped with
/// a warning.
pub fn tune_threshold(
    calls: &[SequenceCall],
    patients: &[PatientRecord],
    range: RangeInclusive<usize>,
    rule: CountRule,
) -> Result<ThresholdTuning> {
    if range.is_empty() {
        return Err(Error::InvalidInput("threshold range is empty".into()));
    }
    let counts = counts(calls, patients)?;
    let mut warnings = Vec::new();
    let mut strata: Vec<(Apoe, Vec<(usize, bool)>)> = Vec::new();
    for apoe in Apoe::GENOTYPED {
        let members: Vec<(usize, bool)> = patients
            .iter()
            .filter(|p| p.apoe == apoe)
            .map(|p| (counts[&p.patient_id].0, p.med_icd_flag))
            .collect();
        if members.is_empty() {
            let w = format!("{apoe}: no patients, left out of threshold tuning");
            log::warn!("{w}");
            warnings.push(w);
        } else {
            strata.push((apoe, members));
        }
    }
    if strata.is_empty() {
        return Err(Error::InvalidInput("no genotyped patients to tune the threshold on".into()));
    }

    let rows: Vec<ThresholdRow> = range
        .map(|t| {
            let alleles: Vec<AlleleFractions> = strata
                .iter()
                .map(|(apoe, members)| {
                    let n = members.len() as f64;
                    AlleleFractions {
                        apoe: *apoe,
                        patients: members.len(),
                        predicted: members.iter().filter(|m| rule.assigns(m.0, t)).count() as f64 / n,
                        med_icd: members.iter().filter(|m| m.1).count() as f64 / n,
                    }
                })
                .collect();
            let score = alleles.iter().map(|a| (a.predicted - a.med_icd).abs()).sum();
            ThresholdRow { t, alleles, score }
        })
        .collect();
    let best = rows
        .iter()
        .fold(None::<&ThresholdRow>, |best, r| match best {
            Some(b) if b.score <= r.score => Some(b),
            _ => Some(r),
        })
        .expect("range is non-empty");
    Ok(ThresholdTuning {
        best_t: best.t,
        rule,
        rows,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlleleRow {
    pub apoe: Apoe,
    pub patients: usize,
    pub yes: f64,
    pub no_ntr: f64,
    pub med_icd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub threshold: Option<usize>,
    pub rows: Vec<AlleleRow>,
    /// Patients assigned cognitive impairment without a Med/ICD flag.
    pub discovery: Vec<String>,
}

/// Per-allele Yes / No-or-Neither / Med/ICD fractions (alleles with no
/// patients are omitted) and the discovery list.
pub fn compare_to_codes(assignments: &[PatientAssignment]) -> ComparisonReport {
    let mut by_allele: BTreeMap<Apoe, Vec<&PatientAssignment>> = BTreeMap::new();
    for a in assignments {
        by_allele.entry(a.apoe).or_default().push(a);
    }
    let rows = by_allele
        .into_iter()
        .map(|(apoe, members)| {
            let n = members.len();
            let yes = members.iter().filter(|a| a.cognitive_impairment).count();
            let flagged = members.iter().filter(|a| a.med_icd_flag).count();
            AlleleRow {
                apoe,
                patients: n,
                yes: yes as f64 / n as f64,
                no_ntr: (n - yes) as f64 / n as f64,
                med_icd: flagged as f64 / n as f64,
            }
        })
        .collect();
    let mut thresholds = assignments.iter().map(|a| a.threshold);
    let first = thresholds.next();
    ComparisonReport {
        threshold: first.filter(|&t| thresholds.all(|u| u == t)),
        rows,
        discovery: assignments
            .iter()
            .filter(|a| a.cognitive_impairment && !a.med_icd_flag)
            .map(|a| a.patient_id.clone())
            .collect(),
    }
}

pub fn render_comparison(report: &ComparisonReport) -> String {
    let mut out = String::new();
    if let Some(t) = report.threshold {
        out.push_str(&format!("sequence threshold: {t}\n"));
    }
    out.push_str(&format!(
        "{:<14} {:>9} {:>7} {:>8} {:>7}\n",
        "Allele", "Patients", "Yes", "No/Ntr", "M/I"
    ));
    for r in &report.rows {
        out.push_str(&format!(
            "{:<14} {:>9} {:>7.2} {:>8.2} {:>7.2}\n",
            r.apoe.to_string(),
            r.patients,
            r.yes,
            r.no_ntr,
            r.med_icd
        ));
    }
    out.push_str(&format!(
        "patients assigned Yes without a Med/ICD code: {}\n",
        report.discovery.len()
    ));
    out
}

pub fn render_tuning(tuning: &ThresholdTuning) -> String {
    let mut out = String::from("   t    score");
    if let Some(r) = tuning.rows.first() {
        for a in &r.alleles {
            out.push_str(&format!(" {:>14}", a.apoe.to_string()));
        }
    }
    out.push('\n');
    for r in &tuning.rows {
        out.push_str(&format!("{:>4} {:>8.4}", r.t, r.score));
        for a in &r.alleles {
            out.push_str(&format!(" {:>6.3} vs {:>4.2}", a.predicted, a.med_icd));
        }
        if r.t == tuning.best_t {
            out.push_str("  *");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Gender;

    fn patient(id: &str, apoe: Apoe, flag: bool) -> PatientRecord {
        PatientRecord {
            patient_id: id.into(),
            age_years: 70.0,
            gender: Gender::Female,
            apoe,
            med_icd_flag: flag,
        }
    }

    fn calls(spec: &[(&str, usize, usize)]) -> Vec<SequenceCall> {
        let mut out = Vec::new();
        for &(id, pos, neg) in spec {
            for _ in 0..pos {
                out.push(SequenceCall { patient_id: id.into(), positive: true });
            }
            for _ in 0..neg {
                out.push(SequenceCall { patient_id: id.into(), positive: false });
            }
        }
        out
    }

    #[test]
    fn three_positives_at_t2() {
        let ps = [patient("a", Apoe::E4, false), patient("b", Apoe::E3, true)];
        let c = calls(&[("a", 3, 1), ("b", 1, 0)]);
        let a = aggregate_patients(&c, &ps, 2, CountRule::AtLeast).unwrap();
        assert!(a[0].cognitive_impairment);
        assert_eq!((a[0].positive_sequence_count, a[0].total_sequence_count), (3, 4));
        assert!(!a[1].cognitive_impairment);
        // exactly t positives: in under count ≥ t, out under count > t
        let c = calls(&[("a", 2, 0)]);
        assert!(aggregate_patients(&c, &ps, 2, CountRule::AtLeast).unwrap()[0].cognitive_impairment);
        assert!(!aggregate_patients(&c, &ps, 2, CountRule::GreaterThan).unwrap()[0].cognitive_impairment);
    }

    #[test]
    fn unknown_patient_in_calls_is_error() {
        let ps = [patient("a", Apoe::E4, false)];
        assert!(aggregate_patients(&calls(&[("zz", 1, 0)]), &ps, 1, CountRule::AtLeast).is_err());
    }

    #[test]
    fn patients_without_sequences_are_no() {
        let ps = [patient("a", Apoe::E2, false)];
        let a = aggregate_patients(&[], &ps, 1, CountRule::AtLeast).unwrap();
        assert_eq!(a[0].total_sequence_count, 0);
        assert!(!a[0].cognitive_impairment);
    }

    #[test]
    fn tuning_hand_example() {
        // e2: 2 patients, half flagged; e4: 2 patients, both flagged
        let ps = [
            patient("a", Apoe::E2, true),
            patient("b", Apoe::E2, false),
            patient("c", Apoe::E4, true),
            patient("d", Apoe::E4, true),
            patient("u", Apoe::Unknown, true),
        ];
        let c = calls(&[("a", 1, 0), ("b", 3, 0), ("c", 3, 0), ("d", 2, 0), ("u", 9, 0)]);
        let r = tune_threshold(&c, &ps, 1..=4, CountRule::AtLeast).unwrap();
        // t=1: e2 1.0 vs 0.5, e4 1.0 vs 1 → 0.5
        // t=2: e2 0.5, e4 1.0 → 0.0
        // t=3: e2 0.5, e4 0.5 → 0.5
        // t=4: e2 0, e4 0 → 1.5
        let scores: Vec<f64> = r.rows.iter().map(|r| r.score).collect();
        assert_eq!(scores, vec![0.5, 0.0, 0.5, 1.5]);
        assert_eq!(r.best_t, 2);
        // e3 is empty
        assert_eq!(r.warnings.len(), 1);
        assert_eq!(r.rows[0].alleles.len(), 2);
    }

    #[test]
    fn tuning_ties_prefer_smaller_t() {
        let ps = [patient("a", Apoe::E3, false)];
        let r = tune_threshold(&[], &ps, 1..=10, CountRule::AtLeast).unwrap();
        assert!(r.rows.iter().all(|r| r.score == 0.0));
        assert_eq!(r.best_t, 1);
    }

    #[test]
    fn tuning_errors() {
        let ps = [patient("a", Apoe::Unknown, false)];
        assert!(tune_threshold(&[], &ps, 1..=10, CountRule::AtLeast).is_err());
        let ps = [patient("a", Apoe::E2, false)];
        #[allow(clippy::reversed_empty_ranges)]
        let empty = 5..=1;
        assert!(tune_threshold(&[], &ps, empty, CountRule::AtLeast).is_err());
    }

    #[test]
    fn comparison_rows_and_discovery() {
        let ps = [
            patient("a", Apoe::E4, true),
            patient("b", Apoe::E4, false),
            patient("c", Apoe::E3, false),
            patient("d", Apoe::Unknown, false),
        ];
        let c = calls(&[("a", 2, 0), ("b", 2, 0), ("c", 0, 3)]);
        let a = aggregate_patients(&c, &ps, 2, CountRule::AtLeast).unwrap();
        let r = compare_to_codes(&a);
        assert_eq!(r.threshold, Some(2));
        assert_eq!(r.rows.iter().map(|r| r.patients).sum::<usize>(), 4);
        for row in &r.rows {
            assert_eq!(row.yes + row.no_ntr, 1.0);
        }
        let e4 = r.rows.iter().find(|r| r.apoe == Apoe::E4).unwrap();
        assert_eq!((e4.yes, e4.med_icd), (1.0, 0.5));
        assert_eq!(r.discovery, vec!["b".to_string()]);
        let text = render_comparison(&r);
        assert!(text.contains("APOE e4"));
    }

    #[test]
    fn all_flagged_yes_means_empty_discovery() {
        let ps = [patient("a", Apoe::E4, true), patient("b", Apoe::E2, false)];
        let c = calls(&[("a", 5, 0)]);
        let a = aggregate_patients(&c, &ps, 2, CountRule::AtLeast).unwrap();
        assert!(compare_to_codes(&a).discovery.is_empty());
    }
}
