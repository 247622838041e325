//! Budgeted Nelder–Mead minimizer with seeded restarts.
//!
//! Coefficients follow the dimension-adaptive choice of Gao and Han, which
//! behaves better than the classic (1, 2, 1/2, 1/2) set once the search space
//! has more than a handful of coordinates. Non-finite objective values are
//! treated as infeasible and always lose comparisons.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct SimplexOptions {
    /// Total objective evaluations across the initial run and all restarts.
    pub max_evals: usize,
    /// Number of restarts after the initial run.
    pub restarts: usize,
    /// Edge length of the initial simplex in each coordinate.
    pub initial_step: f64,
    /// A run stops once every vertex is within this distance of the best one.
    pub x_tolerance: f64,
    pub seed: u64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self { max_evals: 2000, restarts: 3, initial_step: 0.25, x_tolerance: 1e-5, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    /// The evaluation budget ran out before the last run converged.
    pub exhausted: bool,
}

#[inline]
fn better(a: f64, b: f64) -> bool {
    // NaN and +inf never win
    a < b || (a.is_finite() && !b.is_finite())
}

struct Counter<F> {
    f: F,
    evals: usize,
    limit: usize,
}

impl<F: FnMut(&[f64]) -> f64> Counter<F> {
    fn eval(&mut self, x: &[f64]) -> Option<f64> {
        if self.evals >= self.limit {
            return None;
        }
        self.evals += 1;
        let v = (self.f)(x);
        Some(if v.is_nan() { f64::INFINITY } else { v })
    }
}

/// Minimizes `f` starting from `x0`, whose value `f0` is already known.
/// The returned point is never worse than `x0`.
pub fn minimize<F>(f: F, x0: &[f64], f0: f64, opts: &SimplexOptions) -> SimplexResult
where
    F: FnMut(&[f64]) -> f64,
{
    let mut counter = Counter { f, evals: 0, limit: opts.max_evals };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best_x = x0.to_vec();
    let mut best_f = if f0.is_nan() { f64::INFINITY } else { f0 };
    let mut exhausted = false;
    let runs = opts.restarts + 1;

    for run in 0..runs {
        let remaining = opts.max_evals.saturating_sub(counter.evals);
        if remaining == 0 {
            exhausted = true;
            break;
        }
        let share = remaining / (runs - run);
        let steps: Vec<f64> = if run == 0 {
            vec![opts.initial_step; x0.len()]
        } else {
            (0..x0.len())
                .map(|_| {
                    let scale = rng.random_range(0.5..1.5) * opts.initial_step;
                    if rng.random_bool(0.5) { scale } else { -scale }
                })
                .collect()
        };
        counter.limit = counter.evals + share.max(x0.len() + 2);
        let (x, v, converged) = nelder_mead(&mut counter, &best_x, best_f, &steps, opts.x_tolerance);
        counter.limit = opts.max_evals;
        if better(v, best_f) {
            best_x = x;
            best_f = v;
        }
        exhausted = !converged;
    }

    SimplexResult { x: best_x, value: best_f, evaluations: counter.evals, exhausted }
}

/// One Nelder–Mead run. Returns the best vertex, its value and whether the
/// run converged before its budget ran out.
fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    counter: &mut Counter<F>,
    start: &[f64],
    f_start: f64,
    steps: &[f64],
    x_tolerance: f64,
) -> (Vec<f64>, f64, bool) {
    let n = start.len();
    let nf = n as f64;
    let (alpha, gamma) = (1.0, 1.0 + 2.0 / nf);
    let (rho, sigma) = (0.75 - 1.0 / (2.0 * nf), 1.0 - 1.0 / nf.max(2.0));

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((start.to_vec(), f_start));
    for i in 0..n {
        let mut v = start.to_vec();
        v[i] += steps[i];
        match counter.eval(&v) {
            Some(fv) => simplex.push((v, fv)),
            None => return best_of(simplex, false),
        }
    }

    loop {
        simplex.sort_by(|a, b| order(a.1, b.1));
        let diameter = simplex[1..]
            .iter()
            .map(|(v, _)| v.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if diameter <= x_tolerance {
            return best_of(simplex, true);
        }

        let mut centroid = vec![0.0; n];
        for (v, _) in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / nf;
            }
        }
        let worst = simplex[n].clone();
        let toward = |t: f64| -> Vec<f64> {
            centroid.iter().zip(&worst.0).map(|(c, w)| c + t * (c - w)).collect()
        };

        let xr = toward(alpha);
        let Some(fr) = counter.eval(&xr) else { return best_of(simplex, false) };
        if better(fr, simplex[0].1) {
            let xe = toward(alpha * gamma);
            let Some(fe) = counter.eval(&xe) else {
                simplex[n] = (xr, fr);
                return best_of(simplex, false);
            };
            simplex[n] = if better(fe, fr) { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if better(fr, simplex[n - 1].1) {
            simplex[n] = (xr, fr);
            continue;
        }
        // contraction, outside if the reflection beat the worst vertex
        let (xc, fc_ref) = if better(fr, worst.1) {
            (toward(alpha * rho), fr)
        } else {
            (toward(-rho), worst.1)
        };
        let Some(fc) = counter.eval(&xc) else { return best_of(simplex, false) };
        if !better(fc_ref, fc) {
            simplex[n] = (xc, fc);
            continue;
        }
        // shrink toward the best vertex
        let best = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            let v: Vec<f64> = best.iter().zip(&vertex.0).map(|(b, x)| b + sigma * (x - b)).collect();
            let Some(fv) = counter.eval(&v) else { return best_of(simplex, false) };
            *vertex = (v, fv);
        }
    }
}

fn order(a: f64, b: f64) -> std::cmp::Ordering {
    if better(a, b) {
        std::cmp::Ordering::Less
    } else if better(b, a) {
        std::cmp::Ordering::Greater
    } else {
        std::cmp::Ordering::Equal
    }
}

fn best_of(mut simplex: Vec<(Vec<f64>, f64)>, converged: bool) -> (Vec<f64>, f64, bool) {
    simplex.sort_by(|a, b| order(a.1, b.1));
    let (x, f) = simplex.swap_remove(0);
    (x, f, converged)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_bowl() {
        let f = |x: &[f64]| (x[0] - 1.0).powi(2) + 10.0 * (x[1] + 2.0).powi(2);
        let x0 = [0.0, 0.0];
        let r = minimize(f, &x0, f(&x0), &SimplexOptions { max_evals: 2000, ..Default::default() });
        assert!((r.x[0] - 1.0).abs() < 1e-4, "{:?}", r.x);
        assert!((r.x[1] + 2.0).abs() < 1e-4);
    }

    #[test]
    fn rosenbrock_within_budget() {
        let f = |x: &[f64]| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2);
        let x0 = [-1.2, 1.0];
        let opts = SimplexOptions { max_evals: 4000, initial_step: 0.5, x_tolerance: 1e-8, ..Default::default() };
        let r = minimize(f, &x0, f(&x0), &opts);
        assert!(r.value < 1e-6, "{r:?}");
    }

    #[test]
    fn never_worse_than_start_and_respects_budget() {
        let mut calls = 0;
        let f = |x: &[f64]| {
            calls += 1;
            x.iter().map(|v| (v * 3.0).sin()).sum::<f64>()
        };
        let x0 = vec![0.3; 6];
        let f0 = x0.iter().map(|v: &f64| (v * 3.0).sin()).sum::<f64>();
        let r = minimize(f, &x0, f0, &SimplexOptions { max_evals: 50, ..Default::default() });
        assert!(r.value <= f0);
        assert!(r.evaluations <= 50);
        assert!(r.exhausted);
        assert_eq!(calls, r.evaluations);
    }

    #[test]
    fn infeasible_points_never_win() {
        let f = |x: &[f64]| if x[0] < 0.0 { f64::INFINITY } else { (x[0] - 0.01).abs() };
        let r = minimize(f, &[0.5], 0.49, &SimplexOptions::default());
        assert!(r.x[0] >= 0.0);
        assert!(r.value < 1e-4);
    }

    #[test]
    fn deterministic_given_seed() {
        let f = |x: &[f64]| x.iter().enumerate().map(|(i, v)| (v - i as f64).abs().floor()).sum::<f64>();
        let opts = SimplexOptions { max_evals: 300, seed: 9, ..Default::default() };
        let a = minimize(f, &[5.0, 5.0, 5.0], 12.0, &opts);
        let b = minimize(f, &[5.0, 5.0, 5.0], 12.0, &opts);
        assert_eq!(a, b);
    }
}
