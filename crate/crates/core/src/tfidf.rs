//! TF-IDF vectorization and Pearson-correlation feature selection.
//!
//! Weights: `tf` is the raw token count in a document, `idf = ln((1+N)/(1+df)) + 1`,
//! and each document vector is scaled to unit L2 norm over the full vocabulary.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub lowercase: bool,
    /// Minimum token length in characters.
    pub min_len: usize,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            lowercase: true,
            min_len: 2,
        }
    }
}

impl TokenizerConfig {
    /// Maximal runs of letters and digits.
    pub fn tokenize<'a>(&'a self, text: &'a str) -> impl Iterator<Item = String> + 'a {
        text.split(|c: char| !c.is_alphanumeric())
            .filter(move |t| t.chars().count() >= self.min_len)
            .map(move |t| {
                if self.lowercase {
                    t.to_lowercase()
                } else {
                    t.to_string()
                }
            })
    }
}

/// A sparse row: parallel column indices (strictly increasing) and values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseRow {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseRow {
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn to_dense(&self, n_cols: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_cols];
        for (j, v) in self.iter() {
            out[j] = v;
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    pub n_cols: usize,
    pub rows: Vec<SparseRow>,
}

impl SparseMatrix {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let n_cols = rows.first().map_or(0, Vec::len);
        let rows = rows
            .iter()
            .map(|r| {
                assert_eq!(r.len(), n_cols, "ragged dense matrix");
                let mut row = SparseRow::default();
                for (j, &v) in r.iter().enumerate() {
                    if v != 0.0 {
                        row.indices.push(j);
                        row.values.push(v);
                    }
                }
                row
            })
            .collect();
        SparseMatrix { n_cols, rows }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.to_dense(self.n_cols)).collect()
    }

    /// Keeps the listed columns, renumbered 0..k in the given order.
    pub fn select_columns(&self, columns: &[usize]) -> SparseMatrix {
        let remap: BTreeMap<usize, usize> =
            columns.iter().enumerate().map(|(new, &old)| (old, new)).collect();
        let rows = self
            .rows
            .iter()
            .map(|r| {
                let mut pairs: Vec<(usize, f64)> = r
                    .iter()
                    .filter_map(|(j, v)| remap.get(&j).map(|&nj| (nj, v)))
                    .collect();
                pairs.sort_by_key(|p| p.0);
                SparseRow {
                    indices: pairs.iter().map(|p| p.0).collect(),
                    values: pairs.iter().map(|p| p.1).collect(),
                }
            })
            .collect();
        SparseMatrix {
            n_cols: columns.len(),
            rows,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedFeature {
    pub column: usize,
    pub token: String,
    pub correlation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfModel {
    pub tokenizer: TokenizerConfig,
    /// Column order: tokens sorted lexicographically.
    pub vocabulary: Vec<String>,
    pub idf: Vec<f64>,
    /// Columns kept by feature selection, in column order. Empty until
    /// [`TfidfModel::with_selection`] is called.
    pub selected: Vec<SelectedFeature>,
    pub correlation_threshold: Option<f64>,
    #[serde(skip)]
    lookup: BTreeMap<String, usize>,
}

impl TfidfModel {
    pub fn fit<S: AsRef<str>>(docs: &[S], tokenizer: TokenizerConfig) -> Result<TfidfModel> {
        if docs.is_empty() {
            return Err(Error::InvalidInput("TF-IDF needs at least one document".into()));
        }
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        for d in docs {
            let uniq: BTreeSet<String> = tokenizer.tokenize(d.as_ref()).collect();
            for t in uniq {
                *df.entry(t).or_default() += 1;
            }
        }
        if df.is_empty() {
            return Err(Error::InvalidInput(
                "all documents are empty after tokenization".into(),
            ));
        }
        let n = docs.len() as f64;
        let vocabulary: Vec<String> = df.keys().cloned().collect();
        let idf = df
            .values()
            .map(|&d| ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0)
            .collect();
        Ok(TfidfModel {
            tokenizer,
            lookup: index_of(&vocabulary),
            vocabulary,
            idf,
            selected: Vec::new(),
            correlation_threshold: None,
        })
    }

    /// Rebuilds the token lookup after deserialization.
    pub fn reindex(&mut self) {
        self.lookup = index_of(&self.vocabulary);
    }

    pub fn n_features(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn column(&self, token: &str) -> Option<usize> {
        self.lookup.get(token).copied()
    }

    /// L2-normalized TF-IDF vector over the whole vocabulary. Documents with no
    /// vocabulary tokens map to the zero vector.
    pub fn transform_one(&self, doc: &str) -> SparseRow {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for t in self.tokenizer.tokenize(doc) {
            if let Some(&j) = self.lookup.get(&t) {
                *counts.entry(j).or_default() += 1.0;
            }
        }
        let mut row = SparseRow {
            indices: counts.keys().copied().collect(),
            values: counts.iter().map(|(&j, &c)| c * self.idf[j]).collect(),
        };
        let norm = row.norm();
        if norm > 0.0 {
            row.values.iter_mut().for_each(|v| *v /= norm);
        }
        row
    }

    pub fn transform<S: AsRef<str> + Sync>(&self, docs: &[S]) -> SparseMatrix {
        SparseMatrix {
            n_cols: self.n_features(),
            rows: docs.par_iter().map(|d| self.transform_one(d.as_ref())).collect(),
        }
    }

    /// Attaches a feature selection computed on this model's columns.
    pub fn with_selection(mut self, selection: &Selection) -> TfidfModel {
        self.selected = selection
            .columns
            .iter()
            .map(|&(column, correlation)| SelectedFeature {
                column,
                token: self.vocabulary[column].clone(),
                correlation,
            })
            .collect();
        self.correlation_threshold = Some(selection.threshold);
        self
    }

    pub fn selected_columns(&self) -> Vec<usize> {
        self.selected.iter().map(|f| f.column).collect()
    }

    /// TF-IDF vectors restricted to the selected columns (not renormalized).
    pub fn transform_selected<S: AsRef<str> + Sync>(&self, docs: &[S]) -> SparseMatrix {
        self.transform(docs).select_columns(&self.selected_columns())
    }
}

fn index_of(vocabulary: &[String]) -> BTreeMap<String, usize> {
    vocabulary
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i))
        .collect()
}

/// Per-column Pearson correlation with a binary outcome. Zero-variance columns
/// yield `None`.
pub fn column_correlations(matrix: &SparseMatrix, outcome: &[bool]) -> Result<Vec<Option<f64>>> {
    let n = matrix.n_rows();
    if outcome.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: outcome.len(),
        });
    }
    let positives = outcome.iter().filter(|&&y| y).count();
    if positives == 0 || positives == n {
        return Err(Error::DegenerateLabels(
            "all outcome labels are identical; correlation is undefined".into(),
        ));
    }
    let nf = n as f64;
    let y_mean = positives as f64 / nf;
    let syy: f64 = outcome
        .iter()
        .map(|&y| {
            let d = f64::from(u8::from(y)) - y_mean;
            d * d
        })
        .sum();

    let m = matrix.n_cols;
    let mut sum = vec![0.0; m];
    let mut nnz = vec![0usize; m];
    let mut min = vec![f64::INFINITY; m];
    let mut max = vec![f64::NEG_INFINITY; m];
    for row in &matrix.rows {
        for (j, v) in row.iter() {
            sum[j] += v;
            nnz[j] += 1;
            min[j] = min[j].min(v);
            max[j] = max[j].max(v);
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
    let mut sxx: Vec<f64> = (0..m).map(|j| (n - nnz[j]) as f64 * mean[j] * mean[j]).collect();
    let mut sxy = vec![0.0; m];
    for (row, &y) in matrix.rows.iter().zip(outcome) {
        let dy = f64::from(u8::from(y)) - y_mean;
        for (j, v) in row.iter() {
            let dx = v - mean[j];
            sxx[j] += dx * dx;
            sxy[j] += v * dy;
        }
    }
    Ok((0..m)
        .map(|j| {
            let (lo, hi) = if nnz[j] < n {
                (min[j].min(0.0), max[j].max(0.0))
            } else {
                (min[j], max[j])
            };
            if nnz[j] == 0 || lo == hi {
                None
            } else {
                Some(sxy[j] / (sxx[j] * syy).sqrt())
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub threshold: f64,
    /// (column, correlation) for every retained column, in column order.
    pub columns: Vec<(usize, f64)>,
}

/// Keeps non-constant columns with `|r| >= threshold`.
pub fn pearson_select(matrix: &SparseMatrix, outcome: &[bool], threshold: f64) -> Result<Selection> {
    let corr = column_correlations(matrix, outcome)?;
    Ok(select_from(&corr, threshold))
}

/// Applies a threshold to precomputed correlations.
pub fn select_from(correlations: &[Option<f64>], threshold: f64) -> Selection {
    Selection {
        threshold,
        columns: correlations
            .iter()
            .enumerate()
            .filter_map(|(j, r)| r.filter(|r| r.abs() >= threshold).map(|r| (j, r)))
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub token: String,
    pub correlation: f64,
}

/// Top `top_k` selected tokens by |r|, ties ordered by token.
pub fn feature_report(model: &TfidfModel, top_k: usize) -> Vec<FeatureRow> {
    let mut rows: Vec<FeatureRow> = model
        .selected
        .iter()
        .map(|f| FeatureRow {
            token: f.token.clone(),
            correlation: f.correlation,
        })
        .collect();
    rows.sort_by(|a, b| {
        b.correlation
            .abs()
            .total_cmp(&a.correlation.abs())
            .then_with(|| a.token.cmp(&b.token))
    });
    rows.truncate(top_k);
    rows
}

/// Two-column layout of the feature report.
pub fn render_feature_report(rows: &[FeatureRow]) -> String {
    let half = rows.len().div_ceil(2);
    let mut out = format!("{:<18} {:>6}   {:<18} {:>6}\n", "Word", "Corr", "Word", "Corr");
    for i in 0..half {
        let left = &rows[i];
        out.push_str(&format!("{:<18} {:>6.2}", left.token, left.correlation));
        if let Some(right) = rows.get(i + half) {
            out.push_str(&format!("   {:<18} {:>6.2}", right.token, right.correlation));
        }
        out.push('\n');
    }
    out
}
