mod common;

use cogscan::linear::{solve, Method, MultinomialLoss, Params, SolverOptions};
use cogscan::tfidf::SparseMatrix;
use common::*;
use rand::Rng;

fn history_opts(method: Method) -> SolverOptions {
    SolverOptions {
        method,
        record_history: true,
        ..SolverOptions::default()
    }
}

#[test]
fn objective_matches_projected_gradient_oracle() {
    let mut r = rng(11);
    for case in 0..20 {
        let (x, y, lambda) = solver_instance(&mut r);
        let oracle = spg_oracle(&x, &y, lambda);
        let fit = solve(&SparseMatrix::from_dense(&x), &y, lambda, None, &SolverOptions::default()).unwrap();
        assert!(fit.converged, "case {case}");
        assert!(
            (fit.objective - oracle).abs() <= 1e-6,
            "case {case}: solver {} oracle {oracle}",
            fit.objective
        );
    }
}

#[test]
fn solver_objective_agrees_with_dense_evaluation() {
    let mut r = rng(12);
    for _ in 0..10 {
        let (x, y, lambda) = solver_instance(&mut r);
        let fit = solve(&SparseMatrix::from_dense(&x), &y, lambda, None, &SolverOptions::default()).unwrap();
        let b = fit.params.intercepts;
        let (nll, _, _) = dense_nll(&x, &y, &fit.params.weights, &b);
        let dense = nll + lambda * fit.params.weights.iter().map(|w| w.abs()).sum::<f64>();
        assert!((dense - fit.objective).abs() < 1e-10, "{dense} vs {}", fit.objective);
    }
}

/// Norm-wise relative error of the analytic gradient against central differences.
pub fn gradient_error(x: &[Vec<f64>], y: &[usize], p: &Params) -> f64 {
    let xm = SparseMatrix::from_dense(x);
    let loss = MultinomialLoss::new(&xm, y).unwrap();
    let (_, g) = loss.value_and_gradient(p);
    let analytic: Vec<f64> = g.weights.iter().chain(&g.intercepts).copied().collect();
    let h = 1e-6;
    let mut numeric = Vec::new();
    for i in 0..p.weights.len() + 3 {
        let bump = |s: f64| {
            let mut q = p.clone();
            if i < p.weights.len() {
                q.weights[i] += s;
            } else {
                q.intercepts[i - p.weights.len()] += s;
            }
            loss.value(&q)
        };
        numeric.push((bump(h) - bump(-h)) / (2.0 * h));
    }
    let diff = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-8);
    diff / scale
}

#[test]
fn gradient_matches_central_differences() {
    let mut r = rng(13);
    for _ in 0..20 {
        let (x, y, _) = solver_instance(&mut r);
        let d = x[0].len();
        let p = Params {
            n_features: d,
            weights: (0..3 * d).map(|_| r.gen_range(-2.0..2.0)).collect(),
            intercepts: [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)],
        };
        let err = gradient_error(&x, &y, &p);
        assert!(err <= 1e-5, "relative gradient error {err}");
        // the library gradient also agrees with the dense reference
        let xm = SparseMatrix::from_dense(&x);
        let (_, g) = MultinomialLoss::new(&xm, &y).unwrap().value_and_gradient(&p);
        let (_, gw, gb) = dense_nll(&x, &y, &p.weights, &p.intercepts);
        for (a, b) in g.weights.iter().zip(&gw).chain(g.intercepts.iter().zip(&gb)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn huge_lambda_zeroes_every_weight() {
    let mut r = rng(14);
    for method in [Method::NewtonCd, Method::Fista, Method::Ista] {
        for _ in 0..5 {
            let (x, y, _) = solver_instance(&mut r);
            let fit = solve(&SparseMatrix::from_dense(&x), &y, 1e6, None, &history_opts(method)).unwrap();
            assert!(fit.params.weights.iter().all(|&w| w == 0.0), "{method:?}");
        }
    }
}

#[test]
fn objective_never_increases() {
    let mut r = rng(15);
    for method in [Method::NewtonCd, Method::Fista, Method::Ista] {
        for _ in 0..10 {
            let (x, y, lambda) = solver_instance(&mut r);
            let fit = solve(&SparseMatrix::from_dense(&x), &y, lambda, None, &history_opts(method)).unwrap();
            assert!(fit.history.len() >= 2);
            for w in fit.history.windows(2) {
                assert!(w[1] <= w[0], "{method:?}: {} then {}", w[0], w[1]);
            }
        }
    }
}
