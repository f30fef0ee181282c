use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::trace::GradientTrace;
use crate::error::ensure;
use crate::numcore::Tensor;
use crate::parallel;
use crate::{Error, Result};

const MAX_ITERS: usize = 300;
const EXHAUSTIVE_LIMIT: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeakageResult {
    pub assignments: Vec<usize>,
    /// Matched accuracy in `[0, 100]`.
    pub accuracy: f64,
    pub m_u: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Clustering {
    pub assignments: Vec<usize>,
    pub centers: Tensor,
    /// Sum of squared distances to the assigned centers.
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest center; ties go to the lower index.
fn nearest(p: &[f64], centers: &Tensor) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centers.iter_rows().enumerate() {
        let d = sq_dist(p, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init(points: &Tensor, k: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let n = points.rows();
    let mut chosen = vec![rng.gen_range(0..n)];
    let mut d2: Vec<f64> = points.iter_rows().map(|p| sq_dist(p, points.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        chosen.push(next);
        for (i, p) in points.iter_rows().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, points.row(next)));
        }
    }
    points.select_rows(&chosen).expect("chosen rows are in range")
}

fn lloyd(points: &Tensor, mut centers: Tensor) -> Clustering {
    let (n, d, k) = (points.rows(), points.cols(), centers.rows());
    let mut assignments = vec![usize::MAX; n];
    for _ in 0..MAX_ITERS {
        let mut changed = false;
        for (i, p) in points.iter_rows().enumerate() {
            let (c, _) = nearest(p, &centers);
            if assignments[i] != c {
                assignments[i] = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter_rows().enumerate() {
            let c = assignments[i];
            counts[c] += 1;
            for (s, x) in sums[c * d..(c + 1) * d].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let row = centers.row_mut(c);
                for (j, v) in row.iter_mut().enumerate() {
                    *v = sums[c * d + j] / counts[c] as f64;
                }
            }
        }
    }
    let inertia = points
        .iter_rows()
        .zip(&assignments)
        .map(|(p, &c)| sq_dist(p, centers.row(c)))
        .sum();
    Clustering {
        assignments,
        centers,
        inertia,
    }
}

/// Lloyd's k-means with k-means++ seeding. Restart `r` uses stream `r` of
/// `seed`; the lowest-inertia run wins, ties to the lower restart.
pub fn kmeans(points: &Tensor, k: usize, restarts: usize, seed: u64) -> Result<Clustering> {
    ensure!(k >= 1, Contract, "need at least one cluster");
    ensure!(restarts >= 1, Contract, "need at least one restart");
    ensure!(k <= points.rows(), Contract, "{} clusters for {} points", k, points.rows());
    let runs = parallel::map_range(restarts, |r| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64);
        lloyd(points, plus_plus_init(points, k, &mut rng))
    });
    let mut best: Option<Clustering> = None;
    for run in runs {
        if best.as_ref().map_or(true, |b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Maximum-weight perfect matching on a square matrix; `result[row] = col`.
pub fn best_assignment(weights: &[Vec<f64>]) -> Vec<usize> {
    let n = weights.len();
    if n <= EXHAUSTIVE_LIMIT {
        exhaustive(weights)
    } else {
        hungarian(weights)
    }
}

fn exhaustive(w: &[Vec<f64>]) -> Vec<usize> {
    fn go(w: &[Vec<f64>], row: usize, used: &mut Vec<bool>, cur: &mut Vec<usize>, best: &mut (f64, Vec<usize>)) {
        if row == w.len() {
            let score: f64 = cur.iter().enumerate().map(|(r, &c)| w[r][c]).sum();
            if score > best.0 {
                *best = (score, cur.clone());
            }
            return;
        }
        for c in 0..w.len() {
            if !used[c] {
                used[c] = true;
                cur.push(c);
                go(w, row + 1, used, cur, best);
                cur.pop();
                used[c] = false;
            }
        }
    }
    let mut best = (f64::NEG_INFINITY, Vec::new());
    go(w, 0, &mut vec![false; w.len()], &mut Vec::new(), &mut best);
    best.1
}

fn hungarian(w: &[Vec<f64>]) -> Vec<usize> {
    // Shortest augmenting path on costs -w, 1-based potentials.
    let n = w.len();
    let cost = |i: usize, j: usize| -w[i - 1][j - 1];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    out
}

/// Fraction (%) of points whose cluster maps to their label under the best
/// one-to-one cluster/label matching.
pub fn matched_accuracy(assignments: &[usize], labels: &[usize]) -> Result<f64> {
    ensure!(
        assignments.len() == labels.len() && !labels.is_empty(),
        Shape,
        "{} assignments for {} labels",
        assignments.len(),
        labels.len()
    );
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let k = assignments.iter().max().map_or(0, |m| m + 1);
    let size = k.max(classes.len());
    let mut counts = vec![vec![0.0; size]; size];
    for (&a, y) in assignments.iter().zip(labels) {
        let l = classes.binary_search(y).expect("label present");
        counts[a][l] += 1.0;
    }
    let matching = best_assignment(&counts);
    let hits: f64 = matching.iter().enumerate().map(|(r, &c)| counts[r][c]).sum();
    Ok(100.0 * hits / labels.len() as f64)
}

/// Clusters the trace into `m_u` groups and scores them against the held-out
/// labels. The labels are never seen by the clustering.
pub fn cluster_label_inference(trace: &GradientTrace, m_u: usize, restarts: usize, seed: u64) -> Result<LeakageResult> {
    ensure!(!trace.is_empty(), Contract, "empty gradient trace");
    ensure!(m_u >= 1, Contract, "m_u must be at least 1");
    ensure!(m_u <= trace.len(), Contract, "m_u = {} exceeds {} samples", m_u, trace.len());
    let labels = trace
        .labels
        .as_ref()
        .ok_or_else(|| Error::Contract("trace carries no labels to score against".into()))?;
    let clustering = kmeans(&trace.gradients, m_u, restarts, seed)?;
    let accuracy = matched_accuracy(&clustering.assignments, labels)?;
    Ok(LeakageResult {
        assignments: clustering.assignments,
        accuracy,
        m_u,
    })
}
