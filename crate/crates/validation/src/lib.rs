//! Acceptance checks for `mcnnm`: a small runner that times each criterion
//! and prints one verdict line, plus seeded instance generators shared by the
//! checks.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use mcnnm::{ObservationMask, PanelMatrix};
use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Outcome of one criterion body.
#[derive(Clone, Debug)]
pub struct Verdict {
    pub passed: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(passed: bool, detail: impl Into<String>) -> Self {
        Verdict {
            passed,
            detail: detail.into(),
        }
    }
}

/// A finished criterion: the body's verdict combined with its time budget.
#[derive(Clone, Debug)]
pub struct Row {
    pub id: u32,
    pub title: String,
    pub passed: bool,
    pub elapsed: Duration,
    pub detail: String,
}

#[derive(Debug, Default)]
pub struct Runner {
    rows: Vec<Row>,
}

impl Runner {
    pub fn new() -> Self {
        Self::default()
    }

    /// Runs `body`, fails it if it panics or exceeds `budget`, and prints the
    /// verdict line immediately.
    pub fn check(&mut self, id: u32, title: &str, budget: Option<Duration>, body: impl FnOnce() -> Verdict) -> &Row {
        let start = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(body)).unwrap_or_else(|payload| {
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "non-string panic".into());
            Verdict::new(false, format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let mut detail = verdict.detail;
        let mut passed = verdict.passed;
        if let Some(b) = budget {
            if elapsed > b {
                passed = false;
                detail.push_str(&format!("; over the {:.0} s budget", b.as_secs_f64()));
            }
        }
        let row = Row {
            id,
            title: title.to_string(),
            passed,
            elapsed,
            detail,
        };
        println!("{}", format_row(&row));
        self.rows.push(row);
        self.rows.last().expect("just pushed")
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn all_passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }
}

pub fn format_row(row: &Row) -> String {
    format!(
        "criterion {:>2}  {}  {}  [{:.1} s]  {}",
        row.id,
        if row.passed { "PASS" } else { "FAIL" },
        row.title,
        row.elapsed.as_secs_f64(),
        row.detail
    )
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn gaussian_matrix(rng: &mut impl Rng, n: usize, t: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, t, |_, _| normal(rng))
}

/// `scale * u v^T` with `u`, `v` unit vectors, so its Frobenius norm is `scale`.
pub fn rank_one(rng: &mut impl Rng, n: usize, t: usize, scale: f64) -> PanelMatrix {
    let mut u: Vec<f64> = (0..n).map(|_| normal(rng)).collect();
    let mut v: Vec<f64> = (0..t).map(|_| normal(rng)).collect();
    for w in [&mut u, &mut v] {
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        w.iter_mut().for_each(|x| *x /= norm);
    }
    PanelMatrix::from_fn(n, t, |i, p| scale * u[i] * v[p]).expect("finite")
}

/// Mask with exactly `n_missing` cells hidden, chosen uniformly.
pub fn uniform_missing_mask(rng: &mut impl Rng, n: usize, t: usize, n_missing: usize) -> ObservationMask {
    let hidden = sample(rng, n * t, n_missing).into_vec();
    let mut observed = vec![true; n * t];
    for k in hidden {
        observed[k] = false;
    }
    ObservationMask::from_fn(n, t, |i, p| observed[i * t + p]).expect("valid shape")
}

/// `Y_it = mu + a_i + b_t`.
pub fn additive_panel(rng: &mut impl Rng, n: usize, t: usize) -> PanelMatrix {
    let mu: f64 = rng.random_range(-5.0..5.0);
    let a: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
    let b: Vec<f64> = (0..t).map(|_| rng.random_range(-3.0..3.0)).collect();
    PanelMatrix::from_fn(n, t, |i, p| mu + a[i] + b[p]).expect("finite")
}

/// True when the bipartite unit-period graph of observed cells is connected.
pub fn is_connected(mask: &ObservationMask) -> bool {
    let (n, t) = mask.shape();
    let mut parent: Vec<usize> = (0..n + t).collect();
    fn root(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for &(i, p) in mask.observed_pairs() {
        let (a, b) = (root(&mut parent, i), root(&mut parent, n + p));
        parent[a] = b;
    }
    let r = root(&mut parent, 0);
    (0..n + t).all(|x| root(&mut parent, x) == r)
}

/// Every simplex point of a 3-component grid with `steps` divisions; there
/// are `(steps + 1)(steps + 2) / 2` of them.
pub fn simplex_grid_3(steps: usize) -> impl Iterator<Item = [f64; 3]> {
    let h = 1.0 / steps as f64;
    (0..=steps)
        .flat_map(move |i| (0..=steps - i).map(move |j| [i as f64 * h, j as f64 * h, (steps - i - j) as f64 * h]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn runner_records_panics_and_budgets() {
        let mut r = Runner::new();
        assert!(r.check(1, "ok", None, || Verdict::new(true, "")).passed);
        assert!(!r.check(2, "boom", None, || panic!("nope")).passed);
        assert!(r.rows()[1].detail.contains("nope"));
        let slow = r.check(3, "slow", Some(Duration::ZERO), || {
            std::thread::sleep(Duration::from_millis(2));
            Verdict::new(true, "")
        });
        assert!(!slow.passed);
        assert!(!r.all_passed());
    }

    #[test]
    fn simplex_grid_size_and_membership() {
        let pts: Vec<[f64; 3]> = simplex_grid_3(10).collect();
        assert_eq!(pts.len(), 66);
        assert!(pts
            .iter()
            .all(|p| p.iter().all(|&w| w >= 0.0) && (p.iter().sum::<f64>() - 1.0).abs() < 1e-12));
        assert_eq!(simplex_grid_3(1413).count(), 1_000_405);
    }

    #[test]
    fn generators_match_their_contracts() {
        let mut g = rng(1);
        let l = rank_one(&mut g, 20, 20, 20.0);
        assert!((l.frobenius() - 20.0).abs() < 1e-10);
        let m = uniform_missing_mask(&mut g, 20, 20, 120);
        assert_eq!(m.n_missing(), 120);
        let split = ObservationMask::from_fn(4, 4, |i, t| (i < 2) == (t < 2)).unwrap();
        assert!(!is_connected(&split));
        assert!(is_connected(&ObservationMask::full(3, 5).unwrap()));
    }
}
