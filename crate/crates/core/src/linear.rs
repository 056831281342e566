//! L1-regularized multinomial logistic regression.
//!
//! Minimizes `(1/n) Σ_i [logsumexp(W x_i + b) − (W x_i + b)_{y_i}] + λ Σ|W|`
//! with unpenalized intercepts `b`. The default solver is a proximal Newton
//! method: for each class in turn, a weighted-lasso quadratic model of the
//! loss is minimized by soft-thresholding coordinate descent and the step is
//! accepted through an Armijo line search, so the objective never increases.
//! Fixed-step proximal gradient (plain, or monotone accelerated) is available
//! as an alternative.

use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::tfidf::{SparseMatrix, SparseRow};

pub const N_CLASSES: usize = 3;

/// Model parameters: `weights` is class-major (`weights[k * d + j]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub n_features: usize,
    pub weights: Vec<f64>,
    pub intercepts: [f64; N_CLASSES],
}

impl Params {
    pub fn zeros(n_features: usize) -> Self {
        Params {
            n_features,
            weights: vec![0.0; N_CLASSES * n_features],
            intercepts: [0.0; N_CLASSES],
        }
    }

    pub fn l1_norm(&self) -> f64 {
        self.weights.iter().map(|w| w.abs()).sum()
    }

    pub fn nonzero_weights(&self) -> usize {
        self.weights.iter().filter(|w| **w != 0.0).count()
    }

    fn scores(&self, row: &SparseRow) -> [f64; N_CLASSES] {
        let d = self.n_features;
        let mut z = self.intercepts;
        for (j, v) in row.iter() {
            for (k, zk) in z.iter_mut().enumerate() {
                *zk += self.weights[k * d + j] * v;
            }
        }
        z
    }

    fn max_abs_diff(&self, other: &Params) -> f64 {
        self.weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b).abs())
            .chain(
                self.intercepts
                    .iter()
                    .zip(&other.intercepts)
                    .map(|(a, b)| (a - b).abs()),
            )
            .fold(0.0, f64::max)
    }

    /// `self + s * (a - b)`
    fn extrapolate(&self, a: &Params, b: &Params, s: f64) -> Params {
        let mut out = self.clone();
        for ((o, x), y) in out.weights.iter_mut().zip(&a.weights).zip(&b.weights) {
            *o += s * (x - y);
        }
        for k in 0..N_CLASSES {
            out.intercepts[k] += s * (a.intercepts[k] - b.intercepts[k]);
        }
        out
    }
}

/// Numerically stable softmax.
pub fn softmax(z: &[f64; N_CLASSES]) -> [f64; N_CLASSES] {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut e = [0.0; N_CLASSES];
    let mut s = 0.0;
    for k in 0..N_CLASSES {
        e[k] = (z[k] - m).exp();
        s += e[k];
    }
    e.map(|v| v / s)
}

fn log_sum_exp(z: &[f64; N_CLASSES]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// The smooth part of the objective: mean multinomial negative log-likelihood.
pub struct MultinomialLoss<'a> {
    x: &'a SparseMatrix,
    y: &'a [usize],
}

impl<'a> MultinomialLoss<'a> {
    pub fn new(x: &'a SparseMatrix, y: &'a [usize]) -> Result<Self> {
        if x.n_rows() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.n_rows(),
                got: y.len(),
            });
        }
        if x.n_rows() == 0 {
            return Err(Error::InvalidInput("no training samples".into()));
        }
        for (i, row) in x.rows.iter().enumerate() {
            for (j, v) in row.iter() {
                if !v.is_finite() {
                    return Err(Error::NonFinite { row: i, column: j });
                }
                if j >= x.n_cols {
                    return Err(Error::DimensionMismatch {
                        expected: x.n_cols,
                        got: j + 1,
                    });
                }
            }
        }
        if let Some(&bad) = y.iter().find(|&&k| k >= N_CLASSES) {
            return Err(Error::InvalidInput(format!("class index {bad} out of range")));
        }
        Ok(MultinomialLoss { x, y })
    }

    pub fn n_features(&self) -> usize {
        self.x.n_cols
    }

    pub fn value(&self, p: &Params) -> f64 {
        let n = self.y.len() as f64;
        self.x
            .rows
            .iter()
            .zip(self.y)
            .map(|(row, &yi)| {
                let z = p.scores(row);
                log_sum_exp(&z) - z[yi]
            })
            .sum::<f64>()
            / n
    }

    pub fn value_and_gradient(&self, p: &Params) -> (f64, Params) {
        let d = self.x.n_cols;
        let n = self.y.len() as f64;
        let mut g = Params::zeros(d);
        let mut f = 0.0;
        for (row, &yi) in self.x.rows.iter().zip(self.y) {
            let z = p.scores(row);
            f += log_sum_exp(&z) - z[yi];
            let mut r = softmax(&z);
            r[yi] -= 1.0;
            for k in 0..N_CLASSES {
                g.intercepts[k] += r[k];
            }
            for (j, v) in row.iter() {
                for k in 0..N_CLASSES {
                    g.weights[k * d + j] += r[k] * v;
                }
            }
        }
        g.weights.iter_mut().for_each(|w| *w /= n);
        g.intercepts.iter_mut().for_each(|b| *b /= n);
        (f / n, g)
    }

    pub fn gradient(&self, p: &Params) -> Params {
        self.value_and_gradient(p).1
    }

    /// Penalized objective.
    pub fn objective(&self, p: &Params, lambda: f64) -> f64 {
        self.value(p) + lambda * p.l1_norm()
    }

    /// Upper bound on the gradient's Lipschitz constant:
    /// `0.5 · λ_max([X 1]ᵀ[X 1]) / n`, with λ_max from power iteration and
    /// a safety margin, capped by the trace bound.
    pub fn lipschitz(&self) -> f64 {
        let n = self.y.len() as f64;
        let d = self.x.n_cols;
        let trace: f64 = self.x.rows.iter().map(|r| r.norm().powi(2) + 1.0).sum();
        let mut v = vec![1.0; d + 1];
        let mut lambda = 0.0;
        for _ in 0..200 {
            let mut w = vec![0.0; d + 1];
            for row in &self.x.rows {
                let dot = row.iter().map(|(j, x)| x * v[j]).sum::<f64>() + v[d];
                for (j, x) in row.iter() {
                    w[j] += dot * x;
                }
                w[d] += dot;
            }
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                break;
            }
            let next = norm / v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v = w.into_iter().map(|x| x / norm).collect();
            let done = (next - lambda).abs() <= 1e-10 * next;
            lambda = next;
            if done {
                break;
            }
        }
        0.5 * (lambda * 1.1).min(trace) / n
    }
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Optimization method used by [`solve`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Proximal Newton: per class, a weighted-lasso quadratic model solved by
    /// coordinate descent over an active set, then an Armijo line search.
    #[default]
    NewtonCd,
    /// Monotone accelerated proximal gradient with fixed step `1/L`.
    Fista,
    /// Plain proximal gradient with fixed step `1/L`.
    Ista,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Stop when an iteration changes no parameter by more than this.
    pub tolerance: f64,
    pub max_iterations: usize,
    #[serde(default)]
    pub method: Method,
    pub record_history: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tolerance: 1e-7,
            max_iterations: 20_000,
            method: Method::NewtonCd,
            record_history: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub params: Params,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after every iteration, starting with the initial point.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub history: Vec<f64>,
}

/// Intercept pinned on classes absent from the training labels, whose
/// likelihood-optimal intercept is −∞. Their weights stay zero.
pub const ABSENT_INTERCEPT: f64 = -40.0;

/// Solves from `init` (zeros when `None`).
pub fn solve(
    x: &SparseMatrix,
    y: &[usize],
    lambda: f64,
    init: Option<&Params>,
    options: &SolverOptions,
) -> Result<FitReport> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidInput(format!("lambda must be >= 0, got {lambda}")));
    }
    let loss = MultinomialLoss::new(x, y)?;
    let mut present = [false; N_CLASSES];
    y.iter().for_each(|&k| present[k] = true);
    if present.iter().filter(|p| **p).count() < 2 {
        return Err(Error::DegenerateLabels(
            "training data must contain at least two classes".into(),
        ));
    }
    let d = x.n_cols;
    let mut start = match init {
        Some(p) if p.n_features == d => p.clone(),
        Some(p) => {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: p.n_features,
            })
        }
        None => Params::zeros(d),
    };
    for k in (0..N_CLASSES).filter(|&k| !present[k]) {
        start.weights[k * d..(k + 1) * d].fill(0.0);
        start.intercepts[k] = ABSENT_INTERCEPT;
    }
    let report = match options.method {
        Method::NewtonCd => newton_cd(&loss, lambda, start, &present, options),
        Method::Fista | Method::Ista => proximal_gradient(&loss, lambda, start, &present, options),
    };
    if !report.converged {
        log::warn!(
            "{:?} solver stopped at the iteration cap ({}) before converging",
            options.method,
            options.max_iterations
        );
    }
    Ok(report)
}

fn proximal_gradient(
    loss: &MultinomialLoss,
    lambda: f64,
    mut current: Params,
    present: &[bool; N_CLASSES],
    options: &SolverOptions,
) -> FitReport {
    let d = loss.n_features();
    let accelerated = options.method == Method::Fista;
    let step = 1.0 / loss.lipschitz();
    let shrink = step * lambda;
    let prox_step = |point: &Params, grad: &Params| -> Params {
        let mut out = point.clone();
        for k in (0..N_CLASSES).filter(|&k| present[k]) {
            for j in k * d..(k + 1) * d {
                out.weights[j] = soft_threshold(out.weights[j] - step * grad.weights[j], shrink);
            }
            out.intercepts[k] -= step * grad.intercepts[k];
        }
        out
    };

    let mut f_current = loss.objective(&current, lambda);
    let mut history = Vec::new();
    if options.record_history {
        history.push(f_current);
    }
    let mut momentum_point = current.clone();
    let mut t = 1.0f64;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < options.max_iterations {
        iterations += 1;
        let base = if accelerated { &momentum_point } else { &current };
        let (_, grad) = loss.value_and_gradient(base);
        let candidate = prox_step(base, &grad);
        let change = candidate.max_abs_diff(base);
        let f_candidate = loss.objective(&candidate, lambda);

        if accelerated {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let previous = current.clone();
            if f_candidate <= f_current {
                current = candidate;
                f_current = f_candidate;
                // y = x + (t/t')(z - x) + ((t-1)/t')(x - x_prev), with x = z
                momentum_point = current.extrapolate(&current, &previous, (t - 1.0) / t_next);
                t = t_next;
            } else {
                // rejected step: restart momentum from the incumbent
                momentum_point = current.clone();
                t = 1.0;
            }
        } else {
            current = candidate;
            f_current = f_candidate;
        }
        if options.record_history {
            history.push(f_current);
        }
        if change < options.tolerance {
            converged = true;
            break;
        }
    }
    FitReport {
        params: current,
        objective: f_current,
        iterations,
        converged,
        history,
    }
}

/// Column-major copy of a sparse matrix.
struct Columns {
    start: Vec<usize>,
    row: Vec<usize>,
    value: Vec<f64>,
}

impl Columns {
    fn new(x: &SparseMatrix) -> Self {
        let mut start = vec![0usize; x.n_cols + 1];
        for r in &x.rows {
            for &j in &r.indices {
                start[j + 1] += 1;
            }
        }
        for j in 0..x.n_cols {
            start[j + 1] += start[j];
        }
        let nnz = start[x.n_cols];
        let mut fill = start.clone();
        let mut row = vec![0; nnz];
        let mut value = vec![0.0; nnz];
        for (i, r) in x.rows.iter().enumerate() {
            for (j, v) in r.iter() {
                row[fill[j]] = i;
                value[fill[j]] = v;
                fill[j] += 1;
            }
        }
        Columns { start, row, value }
    }

    fn col(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.start[j]..self.start[j + 1];
        self.row[r.clone()].iter().copied().zip(self.value[r].iter().copied())
    }
}

// Lower bound on p(1 − p) in the quadratic model, as in glmnet.
const CURVATURE_FLOOR: f64 = 1e-5;
const ARMIJO: f64 = 1e-4;
const MAX_SWEEPS: usize = 100;
const MAX_HALVINGS: usize = 60;

fn penalized(eta: &[[f64; N_CLASSES]], y: &[usize], l1: f64, lambda: f64) -> f64 {
    let n = y.len() as f64;
    eta.iter().zip(y).map(|(z, &yi)| log_sum_exp(z) - z[yi]).sum::<f64>() / n + lambda * l1
}

/// Per class, the features whose weight is nonzero or whose gradient
/// violates the optimality condition `|g| ≤ λ` at zero.
fn kkt_violations(loss: &MultinomialLoss, p: &Params, lambda: f64, present: &[bool; N_CLASSES]) -> Vec<Vec<usize>> {
    let d = p.n_features;
    let g = loss.gradient(p);
    (0..N_CLASSES)
        .map(|k| {
            if !present[k] {
                return Vec::new();
            }
            (0..d)
                .filter(|&j| p.weights[k * d + j] != 0.0 || g.weights[k * d + j].abs() > lambda + KKT_SLACK)
                .collect()
        })
        .collect()
}

const KKT_SLACK: f64 = 1e-10;

fn newton_cd(
    loss: &MultinomialLoss,
    lambda: f64,
    mut p: Params,
    present: &[bool; N_CLASSES],
    options: &SolverOptions,
) -> FitReport {
    let (x, y) = (loss.x, loss.y);
    let n = y.len();
    let nf = n as f64;
    let d = x.n_cols;
    let cols = Columns::new(x);
    let mut eta: Vec<[f64; N_CLASSES]> = x.rows.iter().map(|r| p.scores(r)).collect();
    let mut f = penalized(&eta, y, p.l1_norm(), lambda);
    let mut history = Vec::new();
    if options.record_history {
        history.push(f);
    }
    let inner_tol = 0.1 * options.tolerance;
    let mut working = kkt_violations(loss, &p, lambda, present);
    let mut resid = vec![0.0; n];
    let mut h = vec![0.0; n];
    // s = resid + h ∘ u is the gradient of the quadratic model along rows
    let mut s = vec![0.0; n];
    let mut u = vec![0.0; n];
    let mut curv = vec![0.0; d];
    let mut hx = vec![0.0; d];
    let mut beta = vec![0.0; d];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < options.max_iterations {
        iterations += 1;
        let mut max_change = 0.0f64;
        for k in (0..N_CLASSES).filter(|&k| present[k]) {
            let ws = &working[k];
            for i in 0..n {
                let pk = softmax(&eta[i])[k];
                resid[i] = pk - if y[i] == k { 1.0 } else { 0.0 };
                h[i] = (pk * (1.0 - pk)).max(CURVATURE_FLOOR);
                s[i] = resid[i];
                u[i] = 0.0;
            }
            for &j in ws {
                let (a, c) = cols
                    .col(j)
                    .fold((0.0, 0.0), |(a, c), (i, v)| (a + h[i] * v * v, c + h[i] * v));
                curv[j] = a / nf;
                hx[j] = c / nf;
            }
            let h_mean = h.iter().sum::<f64>() / nf;
            // running Σ_i s_i / n, excluding the intercept shift db
            let mut s_mean = resid.iter().sum::<f64>() / nf;
            let block = &p.weights[k * d..(k + 1) * d];
            beta.copy_from_slice(block);
            let mut db = 0.0;

            // s and u omit the intercept shift db; the true model gradient
            // along row i is s_i + h_i·db
            let mut full = true;
            for _ in 0..MAX_SWEEPS {
                let mut sweep_max = 0.0f64;
                for &j in ws {
                    if curv[j] == 0.0 || (!full && beta[j] == 0.0) {
                        continue;
                    }
                    let g = cols.col(j).map(|(i, v)| v * s[i]).sum::<f64>() / nf + db * hx[j];
                    let old = beta[j];
                    let new = soft_threshold(curv[j] * old - g, lambda) / curv[j];
                    if new != old {
                        let delta = new - old;
                        for (i, v) in cols.col(j) {
                            u[i] += v * delta;
                            s[i] += h[i] * v * delta;
                        }
                        s_mean += delta * hx[j];
                        beta[j] = new;
                        sweep_max = sweep_max.max(delta.abs());
                    }
                }
                let delta = -(s_mean + db * h_mean) / h_mean;
                if delta != 0.0 {
                    db += delta;
                    sweep_max = sweep_max.max(delta.abs());
                }
                if sweep_max < inner_tol {
                    if full {
                        break;
                    }
                    full = true;
                } else {
                    full = false;
                }
            }
            u.iter_mut().for_each(|v| *v += db);

            let step_max = ws
                .iter()
                .map(|&j| (block[j] - beta[j]).abs())
                .fold(db.abs(), f64::max);
            if step_max == 0.0 {
                continue;
            }
            let block_l1: f64 = ws.iter().map(|&j| block[j].abs()).sum();
            let l1_rest = p.l1_norm() - block_l1;
            let descent = resid.iter().zip(&u).map(|(r, u)| r * u).sum::<f64>() / nf
                + lambda * (ws.iter().map(|&j| beta[j].abs()).sum::<f64>() - block_l1);
            if descent >= 0.0 {
                continue;
            }
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..MAX_HALVINGS {
                let l1_block: f64 = ws.iter().map(|&j| (block[j] + t * (beta[j] - block[j])).abs()).sum();
                let smooth = eta
                    .iter()
                    .zip(y)
                    .zip(&u)
                    .map(|((z, &yi), ui)| {
                        let mut z = *z;
                        z[k] += t * ui;
                        log_sum_exp(&z) - z[yi]
                    })
                    .sum::<f64>()
                    / nf;
                let f_new = smooth + lambda * (l1_rest + l1_block);
                if f_new <= f + ARMIJO * t * descent {
                    accepted = Some((t, f_new));
                    break;
                }
                t *= 0.5;
            }
            let Some((t, f_new)) = accepted else { continue };
            for &j in ws {
                let w = &mut p.weights[k * d + j];
                *w += t * (beta[j] - *w);
            }
            p.intercepts[k] += t * db;
            for (z, ui) in eta.iter_mut().zip(&u) {
                z[k] += t * ui;
            }
            f = f_new;
            max_change = max_change.max(t * step_max);
        }
        if options.record_history {
            history.push(f);
        }
        if max_change < options.tolerance {
            // converged on the working set; done unless a feature outside
            // it now violates optimality
            let next = kkt_violations(loss, &p, lambda, present);
            let grew = next
                .iter()
                .zip(&working)
                .any(|(a, b)| a.iter().any(|j| b.binary_search(j).is_err()));
            if !grew {
                converged = true;
                break;
            }
            for (w, extra) in working.iter_mut().zip(next) {
                w.extend(extra);
                w.sort_unstable();
                w.dedup();
            }
        }
    }
    FitReport {
        objective: loss.objective(&p, lambda),
        params: p,
        iterations,
        converged,
        history,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub classes: [Label; N_CLASSES],
    pub params: Params,
    pub lambda: f64,
    /// Cutoff on P(Yes) for the Yes-vs-rest decision.
    pub decision_threshold: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl LinearModel {
    pub fn from_fit(report: FitReport, lambda: f64) -> Self {
        LinearModel {
            classes: Label::ALL,
            params: report.params,
            lambda,
            decision_threshold: 0.5,
            converged: report.converged,
            iterations: report.iterations,
        }
    }

    pub fn n_features(&self) -> usize {
        self.params.n_features
    }

    pub fn predict_proba_row(&self, row: &SparseRow) -> Result<[f64; N_CLASSES]> {
        if let Some(&j) = row.indices.iter().find(|&&j| j >= self.n_features()) {
            return Err(Error::DimensionMismatch {
                expected: self.n_features(),
                got: j + 1,
            });
        }
        Ok(softmax(&self.params.scores(row)))
    }

    pub fn predict_proba(&self, features: &[f64]) -> Result<[f64; N_CLASSES]> {
        if features.len() != self.n_features() {
            return Err(Error::DimensionMismatch {
                expected: self.n_features(),
                got: features.len(),
            });
        }
        let d = self.n_features();
        let mut z = self.params.intercepts;
        for (k, zk) in z.iter_mut().enumerate() {
            *zk += features
                .iter()
                .zip(&self.params.weights[k * d..(k + 1) * d])
                .map(|(x, w)| x * w)
                .sum::<f64>();
        }
        Ok(softmax(&z))
    }
}

/// Fits one model from zero initialization.
pub fn fit(x: &SparseMatrix, labels: &[Label], lambda: f64) -> Result<LinearModel> {
    let y: Vec<usize> = labels.iter().map(|l| l.index()).collect();
    let report = solve(x, &y, lambda, None, &SolverOptions::default())?;
    Ok(LinearModel::from_fit(report, lambda))
}

/// Fits a descending lambda path, warm-starting each fit from the previous one.
pub fn fit_path(
    x: &SparseMatrix,
    y: &[usize],
    lambdas: &[f64],
    options: &SolverOptions,
) -> Result<Vec<FitReport>> {
    let mut out: Vec<FitReport> = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let init = out.last().map(|r| &r.params);
        out.push(solve(x, y, lambda, init, options)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice {
    pub threshold: f64,
    pub accuracy: f64,
}

/// Accuracy-maximizing cutoff for `score >= threshold ⇒ positive`, scanned
/// over midpoints between consecutive distinct scores; ties go to the lowest
/// threshold. With a single distinct score the cutoff is that score.
pub fn tune_decision_threshold(scores: &[f64], positive: &[bool]) -> Result<ThresholdChoice> {
    if scores.len() != positive.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            got: positive.len(),
        });
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    if n_pos == 0 || n_pos == positive.len() {
        return Err(Error::DegenerateLabels(
            "threshold tuning needs positive and negative examples".into(),
        ));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidInput("non-finite score".into()));
    }
    let n = scores.len() as f64;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Everything predicted positive: correct = positives.
    let mut correct = n_pos as i64;
    let mut best: Option<ThresholdChoice> = None;
    let mut i = 0;
    while i < order.len() {
        let v = scores[order[i]];
        let mut j = i;
        while j < order.len() && scores[order[j]] == v {
            // this score now falls below the threshold
            correct += if positive[order[j]] { -1 } else { 1 };
            j += 1;
        }
        if j < order.len() {
            let threshold = v + (scores[order[j]] - v) / 2.0;
            let accuracy = correct as f64 / n;
            if best.is_none_or(|b| accuracy > b.accuracy) {
                best = Some(ThresholdChoice { threshold, accuracy });
            }
        }
        i = j;
    }
    Ok(best.unwrap_or(ThresholdChoice {
        threshold: scores[0],
        accuracy: n_pos as f64 / n,
    }))
}
