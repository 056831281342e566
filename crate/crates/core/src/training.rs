//! Patient-grouped cross-validation over (lambda, correlation threshold),
//! final model fitting and the bundled model artifact.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotation::LabeledSequence;
use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::evaluation::roc_auc;
use crate::jsonl;
use crate::linear::{self, fit_path, tune_decision_threshold, LinearModel, SolverOptions};
use crate::tfidf::{column_correlations, select_from, SparseMatrix, TfidfModel, TokenizerConfig};

/// Which items count as positive for the binary AUC and feature correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinaryTarget {
    /// Yes against No and Neither.
    #[default]
    YesVsRest,
    /// Yes against No only; Neither items are left out of the AUC.
    YesVsNo,
}

impl BinaryTarget {
    fn outcome(self, label: Label) -> Option<bool> {
        match (self, label) {
            (_, Label::Yes) => Some(true),
            (BinaryTarget::YesVsRest, _) | (BinaryTarget::YesVsNo, Label::No) => Some(false),
            (BinaryTarget::YesVsNo, Label::Neither) => None,
        }
    }
}

/// Ten log-spaced values from 1e1 down to 1e-4.
pub fn default_lambda_grid() -> Vec<f64> {
    (0..10).map(|i| 10f64.powf(1.0 - 5.0 * i as f64 / 9.0)).collect()
}

pub fn default_threshold_grid() -> Vec<f64> {
    vec![0.0, 0.05, 0.1, 0.15, 0.2]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvPlan {
    pub folds: usize,
    /// Sorted descending before use so warm starts run from sparse to dense.
    pub lambda_grid: Vec<f64>,
    pub threshold_grid: Vec<f64>,
    pub seed: u64,
    #[serde(default)]
    pub target: BinaryTarget,
}

impl Default for CvPlan {
    fn default() -> Self {
        CvPlan {
            folds: 10,
            lambda_grid: default_lambda_grid(),
            threshold_grid: default_threshold_grid(),
            seed: 0,
            target: BinaryTarget::YesVsRest,
        }
    }
}

impl CvPlan {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 folds, got {}", self.folds)));
        }
        if self.lambda_grid.is_empty() || self.threshold_grid.is_empty() {
            return Err(Error::InvalidInput("lambda and threshold grids must be non-empty".into()));
        }
        if let Some(l) = self.lambda_grid.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::InvalidInput(format!("lambda must be positive, got {l}")));
        }
        if let Some(t) = self.threshold_grid.iter().find(|t| !(t.is_finite() && (0.0..=1.0).contains(*t))) {
            return Err(Error::InvalidInput(format!("correlation threshold must be in [0, 1], got {t}")));
        }
        Ok(())
    }

    fn lambdas_descending(&self) -> Vec<f64> {
        let mut l = self.lambda_grid.clone();
        l.sort_by(|a, b| b.total_cmp(a));
        l.dedup();
        l
    }

    fn thresholds_ascending(&self) -> Vec<f64> {
        let mut t = self.threshold_grid.clone();
        t.sort_by(f64::total_cmp);
        t.dedup();
        t
    }
}

/// Fold index per item. Patients are shuffled with the seed and each goes,
/// whole, to the fold currently holding the fewest items.
pub fn patient_folds(items: &[LabeledSequence], folds: usize, seed: u64) -> Vec<usize> {
    let mut by_patient: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, it) in items.iter().enumerate() {
        by_patient.entry(it.patient_id.as_str()).or_default().push(i);
    }
    let mut patients: Vec<(&str, Vec<usize>)> = by_patient.into_iter().collect();
    patients.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut size = vec![0usize; folds.max(1)];
    let mut out = vec![0usize; items.len()];
    for (_, members) in patients {
        let f = (0..size.len()).min_by_key(|&f| (size[f], f)).unwrap_or(0);
        size[f] += members.len();
        for i in members {
            out[i] = f;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvCell {
    pub lambda: f64,
    pub corr_threshold: f64,
    /// Mean validation AUC over the folds that were not skipped.
    pub mean_auc: f64,
    pub fold_aucs: Vec<Option<f64>>,
    pub mean_selected_features: f64,
    pub mean_nonzero_weights: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub plan: CvPlan,
    pub cells: Vec<CvCell>,
    pub best_lambda: f64,
    pub best_threshold: f64,
    pub best_mean_auc: f64,
    pub skipped_folds: Vec<usize>,
    pub warnings: Vec<String>,
    /// Out-of-fold P(Yes) of the best cell, aligned with the training items;
    /// `None` for items in skipped folds.
    pub oof_yes: Vec<Option<f64>>,
}

impl CvResult {
    pub fn best_cell(&self) -> &CvCell {
        self.cells
            .iter()
            .find(|c| c.lambda == self.best_lambda && c.corr_threshold == self.best_threshold)
            .expect("best cell is in the table")
    }
}

struct FoldData {
    train: Vec<usize>,
    val: Vec<usize>,
    x_train: SparseMatrix,
    x_val: SparseMatrix,
    correlations: Vec<Option<f64>>,
}

/// Per (fold, threshold): for each lambda, the validation AUC, P(Yes) for the
/// validation items, and the fitted nonzero count.
struct PathOutcome {
    fold: usize,
    threshold_index: usize,
    selected: usize,
    per_lambda: Vec<(f64, Vec<f64>, usize)>,
}

fn binary_outcome(items: &[&LabeledSequence], target: BinaryTarget) -> Vec<Option<bool>> {
    items.iter().map(|it| target.outcome(it.label)).collect()
}

fn auc_on(scores: &[f64], outcome: &[Option<bool>]) -> Result<f64> {
    let (s, y): (Vec<f64>, Vec<bool>) = scores
        .iter()
        .zip(outcome)
        .filter_map(|(&s, o)| o.map(|y| (s, y)))
        .unzip();
    roc_auc(&s, &y)
}

fn prepare_fold(
    items: &[LabeledSequence],
    assignment: &[usize],
    fold: usize,
    tokenizer: &TokenizerConfig,
    target: BinaryTarget,
) -> std::result::Result<FoldData, String> {
    let (train, val): (Vec<usize>, Vec<usize>) = (0..items.len()).partition(|&i| assignment[i] != fold);
    let val_outcome: Vec<Option<bool>> = val.iter().map(|&i| target.outcome(items[i].label)).collect();
    if !val_outcome.contains(&Some(true)) {
        return Err(format!("fold {fold}: validation split has no Yes items, skipped"));
    }
    if !val_outcome.contains(&Some(false)) {
        return Err(format!("fold {fold}: validation split has no negative items, skipped"));
    }
    let train_texts: Vec<&str> = train.iter().map(|&i| items[i].text.as_str()).collect();
    let val_texts: Vec<&str> = val.iter().map(|&i| items[i].text.as_str()).collect();
    let tfidf = TfidfModel::fit(&train_texts, tokenizer.clone()).map_err(|e| format!("fold {fold}: {e}"))?;
    let x_train = tfidf.transform(&train_texts);
    let x_val = tfidf.transform(&val_texts);
    let train_refs: Vec<&LabeledSequence> = train.iter().map(|&i| &items[i]).collect();
    let corr_outcome: Vec<bool> = binary_outcome(&train_refs, BinaryTarget::YesVsRest)
        .into_iter()
        .map(|o| o.unwrap_or(false))
        .collect();
    let correlations = column_correlations(&x_train, &corr_outcome).map_err(|e| format!("fold {fold}: {e}"))?;
    Ok(FoldData {
        train,
        val,
        x_train,
        x_val,
        correlations,
    })
}

fn run_path(
    items: &[LabeledSequence],
    data: &FoldData,
    fold: usize,
    threshold_index: usize,
    threshold: f64,
    lambdas: &[f64],
    options: &SolverOptions,
) -> Result<PathOutcome> {
    let selection = select_from(&data.correlations, threshold);
    let columns: Vec<usize> = selection.columns.iter().map(|c| c.0).collect();
    let xt = data.x_train.select_columns(&columns);
    let xv = data.x_val.select_columns(&columns);
    let y: Vec<usize> = data.train.iter().map(|&i| items[i].label.index()).collect();
    let path = fit_path(&xt, &y, lambdas, options)?;
    let per_lambda = path
        .into_iter()
        .zip(lambdas)
        .map(|(report, &lambda)| {
            let nonzero = report.params.nonzero_weights();
            let model = LinearModel::from_fit(report, lambda);
            let yes: Vec<f64> = xv
                .rows
                .iter()
                .map(|r| model.predict_proba_row(r).map(|p| p[0]))
                .collect::<Result<_>>()?;
            Ok((lambda, yes, nonzero))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PathOutcome {
        fold,
        threshold_index,
        selected: columns.len(),
        per_lambda,
    })
}

/// K-fold patient-grouped cross-validation. TF-IDF and feature selection are
/// re-fit on the training folds of every split. The best cell maximizes mean
/// validation AUC; ties prefer the larger lambda, then the larger threshold.
pub fn cross_validate(
    items: &[LabeledSequence],
    tokenizer: &TokenizerConfig,
    plan: &CvPlan,
    options: &SolverOptions,
) -> Result<CvResult> {
    plan.validate()?;
    if items.is_empty() {
        return Err(Error::InvalidInput("no training items".into()));
    }
    let lambdas = plan.lambdas_descending();
    let thresholds = plan.thresholds_ascending();
    let assignment = patient_folds(items, plan.folds, plan.seed);

    let prepared: Vec<std::result::Result<FoldData, String>> = (0..plan.folds)
        .into_par_iter()
        .map(|f| prepare_fold(items, &assignment, f, tokenizer, plan.target))
        .collect();
    let mut warnings = Vec::new();
    let mut skipped = Vec::new();
    let mut folds: Vec<(usize, FoldData)> = Vec::new();
    for (f, p) in prepared.into_iter().enumerate() {
        match p {
            Ok(d) => folds.push((f, d)),
            Err(w) => {
                log::warn!("{w}");
                warnings.push(w);
                skipped.push(f);
            }
        }
    }
    if folds.is_empty() {
        return Err(Error::DegenerateLabels("every cross-validation fold was skipped".into()));
    }

    let jobs: Vec<(usize, usize)> = (0..folds.len())
        .flat_map(|fi| (0..thresholds.len()).map(move |ti| (fi, ti)))
        .collect();
    let outcomes: Vec<Result<PathOutcome>> = jobs
        .par_iter()
        .map(|&(fi, ti)| {
            let (f, data) = &folds[fi];
            run_path(items, data, *f, ti, thresholds[ti], &lambdas, options)
        })
        .collect();
    let outcomes: Vec<PathOutcome> = outcomes.into_iter().collect::<Result<_>>()?;

    // (threshold index, lambda index) -> per-fold stats
    let n_folds = plan.folds;
    let mut cells = Vec::with_capacity(lambdas.len() * thresholds.len());
    for (ti, &threshold) in thresholds.iter().enumerate() {
        for (li, &lambda) in lambdas.iter().enumerate() {
            let mut fold_aucs = vec![None; n_folds];
            let (mut sel, mut nz, mut count) = (0.0, 0.0, 0.0);
            for o in outcomes.iter().filter(|o| o.threshold_index == ti) {
                let data = &folds.iter().find(|(f, _)| *f == o.fold).expect("fold present").1;
                let val_refs: Vec<&LabeledSequence> = data.val.iter().map(|&i| &items[i]).collect();
                let outcome = binary_outcome(&val_refs, plan.target);
                let (_, yes, nonzero) = &o.per_lambda[li];
                fold_aucs[o.fold] = Some(auc_on(yes, &outcome)?);
                sel += o.selected as f64;
                nz += *nonzero as f64;
                count += 1.0;
            }
            let present: Vec<f64> = fold_aucs.iter().flatten().copied().collect();
            cells.push(CvCell {
                lambda,
                corr_threshold: threshold,
                mean_auc: present.iter().sum::<f64>() / present.len() as f64,
                fold_aucs,
                mean_selected_features: sel / count,
                mean_nonzero_weights: nz / count,
            });
        }
    }

    let best = cells
        .iter()
        .enumerate()
        .max_by(|(_, a), (_, b)| {
            a.mean_auc
                .total_cmp(&b.mean_auc)
                .then(a.lambda.total_cmp(&b.lambda))
                .then(a.corr_threshold.total_cmp(&b.corr_threshold))
        })
        .map(|(i, _)| i)
        .expect("grid is non-empty");
    let best_cell = cells[best].clone();
    let (bti, bli) = (best / lambdas.len(), best % lambdas.len());

    let mut oof_yes = vec![None; items.len()];
    for o in outcomes.iter().filter(|o| o.threshold_index == bti) {
        let data = &folds.iter().find(|(f, _)| *f == o.fold).expect("fold present").1;
        for (&i, &p) in data.val.iter().zip(&o.per_lambda[bli].1) {
            oof_yes[i] = Some(p);
        }
    }

    Ok(CvResult {
        plan: plan.clone(),
        cells,
        best_lambda: best_cell.lambda,
        best_threshold: best_cell.corr_threshold,
        best_mean_auc: best_cell.mean_auc,
        skipped_folds: skipped,
        warnings,
        oof_yes,
    })
}

/// Tokens in a vocabulary fitted on `train_texts` that occur in none of the
/// training texts. Non-empty output means validation text leaked into the fit.
pub fn leaked_tokens(model: &TfidfModel, train_texts: &[&str]) -> Vec<String> {
    let seen: BTreeSet<String> = train_texts
        .iter()
        .flat_map(|t| model.tokenizer.tokenize(t).collect::<Vec<_>>())
        .collect();
    model
        .vocabulary
        .iter()
        .filter(|t| !seen.contains(*t))
        .cloned()
        .collect()
}

pub const ARTIFACT_VERSION: u32 = 1;

/// Everything needed to score new sequences, plus the record of how the
/// model was chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub version: u32,
    pub config_hash: String,
    pub tfidf: TfidfModel,
    pub model: LinearModel,
    pub cv: Option<CvResult>,
}

impl ModelArtifact {
    pub fn load(path: &Path) -> Result<ModelArtifact> {
        let mut a: ModelArtifact = jsonl::read_json(path)?;
        if a.version != ARTIFACT_VERSION {
            return Err(Error::ArtifactMismatch(format!(
                "artifact version {} is not supported (expected {ARTIFACT_VERSION})",
                a.version
            )));
        }
        a.tfidf.reindex();
        a.check()?;
        Ok(a)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        jsonl::write_json(path, self)
    }

    pub fn check(&self) -> Result<()> {
        if self.tfidf.selected.len() != self.model.n_features() {
            return Err(Error::ArtifactMismatch(format!(
                "model has {} features but the feature selection has {}",
                self.model.n_features(),
                self.tfidf.selected.len()
            )));
        }
        if self.tfidf.idf.len() != self.tfidf.vocabulary.len() {
            return Err(Error::ArtifactMismatch("idf and vocabulary lengths differ".into()));
        }
        Ok(())
    }

    /// Class distributions in (Yes, No, Neither) order, one per text.
    pub fn score<S: AsRef<str> + Sync>(&self, texts: &[S]) -> Result<Vec<[f64; 3]>> {
        let x = self.tfidf.transform_selected(texts);
        x.rows.par_iter().map(|r| self.model.predict_proba_row(r)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[derive(Default)]
pub struct TrainConfig {
    pub tokenizer: TokenizerConfig,
    pub plan: CvPlan,
    pub solver: SolverOptions,
}


/// Cross-validates, then refits TF-IDF, selection and the classifier on all
/// of `items` at the chosen cell. The decision threshold maximizes accuracy
/// of the pooled out-of-fold P(Yes) of that cell.
pub fn train(items: &[LabeledSequence], config: &TrainConfig, config_hash: &str) -> Result<ModelArtifact> {
    let cv = cross_validate(items, &config.tokenizer, &config.plan, &config.solver)?;
    let texts: Vec<&str> = items.iter().map(|i| i.text.as_str()).collect();
    let tfidf = TfidfModel::fit(&texts, config.tokenizer.clone())?;
    let x = tfidf.transform(&texts);
    let is_yes: Vec<bool> = items.iter().map(|i| i.label.is_yes()).collect();
    let correlations = column_correlations(&x, &is_yes)?;
    let selection = select_from(&correlations, cv.best_threshold);
    let tfidf = tfidf.with_selection(&selection);
    let xs = x.select_columns(&tfidf.selected_columns());
    let labels: Vec<Label> = items.iter().map(|i| i.label).collect();
    let y: Vec<usize> = labels.iter().map(|l| l.index()).collect();
    let report = linear::solve(&xs, &y, cv.best_lambda, None, &config.solver)?;
    let mut model = LinearModel::from_fit(report, cv.best_lambda);

    let (scores, positive): (Vec<f64>, Vec<bool>) = cv
        .oof_yes
        .iter()
        .zip(items)
        .filter_map(|(p, it)| p.map(|p| (p, it.label.is_yes())))
        .unzip();
    model.decision_threshold = tune_decision_threshold(&scores, &positive)?.threshold;

    let artifact = ModelArtifact {
        version: ARTIFACT_VERSION,
        config_hash: config_hash.to_string(),
        tfidf,
        model,
        cv: Some(cv),
    };
    artifact.check()?;
    Ok(artifact)
}

/// Fixed-width text view of the CV table, one row per cell.
pub fn render_cv_table(cv: &CvResult) -> String {
    let mut out = format!(
        "{:>10} {:>9} {:>9} {:>10} {:>9}\n",
        "lambda", "corr_thr", "mean_auc", "features", "nonzero"
    );
    for c in &cv.cells {
        let mark = if c.lambda == cv.best_lambda && c.corr_threshold == cv.best_threshold {
            " *"
        } else {
            ""
        };
        out.push_str(&format!(
            "{:>10.3e} {:>9.3} {:>9.4} {:>10.1} {:>9.1}{mark}\n",
            c.lambda, c.corr_threshold, c.mean_auc, c.mean_selected_features, c.mean_nonzero_weights
        ));
    }
    out
}
