use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{sq_dist, EmbeddingSet};
use crate::error::{Error, Result};

pub const DEFAULT_RESTARTS: usize = 5;
pub const DEFAULT_MAX_ITER: usize = 300;

/// Smallest normalised distance below the chord that still counts as an
/// elbow. Both axes are scaled to `[0, 1]` before measuring.
pub const ELBOW_MIN_DEVIATION: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    /// Lloyd iterations of the winning restart.
    pub iterations: usize,
    pub seed: u64,
    /// Inertia after every assignment step of the winning restart; the last
    /// entry equals `inertia`.
    pub history: Vec<f64>,
}

/// Index of the nearest centroid; ties go to the lowest index.
fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn assign(e: &EmbeddingSet, centroids: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let mut total = 0.0;
    let labels = e
        .rows()
        .map(|x| {
            let (j, d) = nearest(x, centroids);
            total += d;
            j
        })
        .collect();
    (labels, total)
}

fn seed_plus_plus(e: &EmbeddingSet, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = e.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = e.rows().map(|x| sq_dist(x, e.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave `target` past the final sum
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap_or(0))
        } else {
            // fewer distinct points than k: take unused rows in order
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(pick);
        for (i, x) in e.rows().enumerate() {
            d2[i] = d2[i].min(sq_dist(x, e.row(pick)));
        }
    }
    chosen.iter().map(|&i| e.row(i).to_vec()).collect()
}

fn lloyd(e: &EmbeddingSet, mut centroids: Vec<Vec<f64>>, max_iter: usize) -> (Vec<Vec<f64>>, Vec<usize>, Vec<f64>, usize) {
    let m = e.dim();
    let (mut labels, first) = assign(e, &centroids);
    let mut history = vec![first];
    let mut iterations = 0;
    for it in 1..=max_iter {
        let mut sums = vec![vec![0.0; m]; centroids.len()];
        let mut counts = vec![0usize; centroids.len()];
        for (x, &j) in e.rows().zip(&labels) {
            counts[j] += 1;
            for (s, v) in sums[j].iter_mut().zip(x) {
                *s += v;
            }
        }
        for (j, c) in centroids.iter_mut().enumerate() {
            // an emptied cluster keeps its previous centroid
            if counts[j] > 0 {
                for (cv, s) in c.iter_mut().zip(&sums[j]) {
                    *cv = s / counts[j] as f64;
                }
            }
        }
        let (next, total) = assign(e, &centroids);
        history.push(total);
        iterations = it;
        let done = next == labels;
        labels = next;
        if done {
            break;
        }
    }
    (centroids, labels, history, iterations)
}

/// Best of `restarts` k-means++ seeded Lloyd runs by inertia. Restarts draw
/// from one generator seeded with `seed`; equal inertias keep the earlier run.
pub fn kmeans(e: &EmbeddingSet, k: usize, seed: u64, max_iter: usize, restarts: usize) -> Result<KMeansResult> {
    if k == 0 || k > e.len() {
        return Err(Error::InvalidArgument(format!("k = {k} needs 1 <= k <= {} (number of rows)", e.len())));
    }
    if restarts == 0 {
        return Err(Error::InvalidArgument("restarts must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..restarts {
        let init = seed_plus_plus(e, k, &mut rng);
        let (centroids, assignments, history, iterations) = lloyd(e, init, max_iter);
        let inertia = *history.last().unwrap_or(&0.0);
        if best.as_ref().is_none_or(|b| inertia < b.inertia) {
            best = Some(KMeansResult {
                centroids,
                assignments,
                inertia,
                iterations,
                seed,
                history,
            });
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Within-cluster sum of squared distances of `e` under `r`.
pub fn inertia(e: &EmbeddingSet, r: &KMeansResult) -> f64 {
    e.rows().zip(&r.assignments).map(|(x, &j)| sq_dist(x, &r.centroids[j])).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ElbowCurve {
    pub points: Vec<(usize, f64)>,
    pub selected_k: usize,
    /// False when no point lies far enough below the endpoint chord.
    pub has_elbow: bool,
    /// Values of k whose inertia exceeds that of k − 1.
    pub restart_failures: Vec<usize>,
}

pub fn elbow(e: &EmbeddingSet, k_min: usize, k_max: usize, seed: u64) -> Result<ElbowCurve> {
    elbow_with(e, k_min, k_max, seed, DEFAULT_MAX_ITER, DEFAULT_RESTARTS)
}

/// Runs k-means for every k in `k_min..=k_max` with the same seed and picks
/// the point furthest below the chord joining the curve's endpoints.
pub fn elbow_with(
    e: &EmbeddingSet,
    k_min: usize,
    k_max: usize,
    seed: u64,
    max_iter: usize,
    restarts: usize,
) -> Result<ElbowCurve> {
    if k_min == 0 || k_min >= k_max || k_max > e.len() {
        return Err(Error::InvalidArgument(format!(
            "elbow range {k_min}..{k_max} needs 1 <= k_min < k_max <= {}",
            e.len()
        )));
    }
    let mut points = Vec::new();
    for k in k_min..=k_max {
        points.push((k, kmeans(e, k, seed, max_iter, restarts)?.inertia));
    }
    let restart_failures = points.windows(2).filter(|w| w[1].1 > w[0].1).map(|w| w[1].0).collect();
    let (selected_k, has_elbow) = select_elbow(&points);
    Ok(ElbowCurve {
        points,
        selected_k,
        has_elbow,
        restart_failures,
    })
}

/// The k furthest below the chord joining the first and last points, after
/// scaling both axes to `[0, 1]`, and whether that distance reaches
/// [`ELBOW_MIN_DEVIATION`]. Ties keep the smaller k.
pub fn select_elbow(points: &[(usize, f64)]) -> (usize, bool) {
    let Some((&(k_min, first), &(k_max, last))) = points.first().zip(points.last()) else {
        return (0, false);
    };
    let span = first - last;
    let mut selected = (k_min, 0.0);
    if span > 0.0 && k_max > k_min {
        for &(k, v) in points {
            let x = (k - k_min) as f64 / (k_max - k_min) as f64;
            let y = (v - last) / span;
            // chord runs from (0, 1) to (1, 0); positive means below it
            let dev = (1.0 - x - y) / std::f64::consts::SQRT_2;
            if dev > selected.1 {
                selected = (k, dev);
            }
        }
    }
    (selected.0, selected.1 >= ELBOW_MIN_DEVIATION)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn set(rows: Vec<Vec<f64>>) -> EmbeddingSet {
        let ids = (0..rows.len()).map(|i| format!("r{i}")).collect();
        EmbeddingSet::new(ids, rows).unwrap()
    }

    fn random_set(n: usize, m: usize, seed: u64) -> EmbeddingSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        set((0..n).map(|_| (0..m).map(|_| rng.random_range(-3.0..3.0)).collect()).collect())
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let e = random_set(20, 3, 1);
        let r = kmeans(&e, 1, 0, 50, 2).unwrap();
        for j in 0..3 {
            let mean = e.rows().map(|x| x[j]).sum::<f64>() / 20.0;
            assert!((r.centroids[0][j] - mean).abs() < 1e-12);
        }
        let var: f64 = (0..3)
            .map(|j| {
                let mean = r.centroids[0][j];
                e.rows().map(|x| (x[j] - mean).powi(2)).sum::<f64>()
            })
            .sum();
        assert!((r.inertia - var).abs() < 1e-9);
    }

    #[test]
    fn k_equals_n_gives_zero_inertia() {
        let e = random_set(7, 2, 3);
        let r = kmeans(&e, 7, 0, 50, 5).unwrap();
        assert_eq!(r.inertia, 0.0);
    }

    #[test]
    fn invalid_k_rejected() {
        let e = random_set(4, 2, 0);
        assert!(kmeans(&e, 0, 0, 10, 1).is_err());
        assert!(kmeans(&e, 5, 0, 10, 1).is_err());
    }

    #[test]
    fn inertia_examples() {
        let e = set(vec![vec![0.0], vec![2.0]]);
        let r = KMeansResult {
            centroids: vec![vec![1.0]],
            assignments: vec![0, 0],
            inertia: 2.0,
            iterations: 0,
            seed: 0,
            history: vec![],
        };
        assert_eq!(inertia(&e, &r), 2.0);
        let one = set(vec![vec![4.0, 1.0]]);
        assert_eq!(kmeans(&one, 1, 0, 10, 1).unwrap().inertia, 0.0);
    }

    #[test]
    fn ties_go_to_the_lowest_centroid() {
        let c = vec![vec![-1.0], vec![1.0], vec![1.0]];
        assert_eq!(nearest(&[0.0], &c).0, 0);
        assert_eq!(nearest(&[1.0], &c).0, 1);
    }

    #[test]
    fn duplicate_points_with_large_k() {
        let e = set(vec![vec![1.0, 1.0]; 4]);
        let r = kmeans(&e, 3, 0, 10, 2).unwrap();
        assert_eq!(r.inertia, 0.0);
        assert!(r.assignments.iter().all(|&a| a < 3));
    }

    #[test]
    fn collinear_curve_has_no_elbow() {
        let line: Vec<(usize, f64)> = (1..=8).map(|k| (k, 100.0 - 10.0 * k as f64)).collect();
        assert!(!select_elbow(&line).1);
        let flat: Vec<(usize, f64)> = (1..=4).map(|k| (k, 3.0)).collect();
        assert_eq!(select_elbow(&flat), (1, false));
        let knee = [(1, 100.0), (2, 20.0), (3, 15.0), (4, 10.0)];
        assert_eq!(select_elbow(&knee), (2, true));
    }

    #[test]
    fn elbow_range_checked() {
        let e = random_set(5, 2, 0);
        assert!(elbow(&e, 3, 3, 0).is_err());
        assert!(elbow(&e, 1, 6, 0).is_err());
        let c = elbow(&e, 1, 5, 0).unwrap();
        assert_eq!(c.points.iter().map(|p| p.0).collect::<Vec<_>>(), vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn three_blobs_select_three() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let centres = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
        let rows = (0..60)
            .map(|i| {
                let c = centres[i % 3];
                vec![c[0] + rng.random_range(-0.5..0.5), c[1] + rng.random_range(-0.5..0.5)]
            })
            .collect();
        let c = elbow(&set(rows), 1, 8, 0).unwrap();
        assert_eq!(c.selected_k, 3);
        assert!(c.has_elbow);
        assert!(c.restart_failures.is_empty());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn lloyd_invariants(n in 3usize..30, k in 1usize..4, seed in 0u64..1000) {
            let e = random_set(n, 3, seed);
            let k = k.min(n);
            let r = kmeans(&e, k, seed, 100, 2).unwrap();
            for w in r.history.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0));
            }
            prop_assert!((inertia(&e, &r) - r.inertia).abs() < 1e-6);
            for (x, &a) in e.rows().zip(&r.assignments) {
                let own = sq_dist(x, &r.centroids[a]);
                for c in &r.centroids {
                    prop_assert!(own <= sq_dist(x, c) + 1e-9);
                }
            }
            let again = kmeans(&e, k, seed, 100, 2).unwrap();
            prop_assert_eq!(again, r);
        }

        #[test]
        fn row_permutation_keeps_the_partition(seed in 0u64..200) {
            // well separated blobs make the optimum unique
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<f64>> = (0..12)
                .map(|i| vec![(i % 3) as f64 * 20.0 + rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)])
                .collect();
            let mut perm: Vec<usize> = (0..12).collect();
            perm.reverse();
            perm.swap(2, 7);
            let a = kmeans(&set(rows.clone()), 3, 1, 100, 5).unwrap();
            let b = kmeans(&set(perm.iter().map(|&i| rows[i].clone()).collect()), 3, 1, 100, 5).unwrap();
            prop_assert!((a.inertia - b.inertia).abs() < 1e-9);
            for (pi, &i) in perm.iter().enumerate() {
                for (pj, &j) in perm.iter().enumerate() {
                    let same_a = a.assignments[i] == a.assignments[j];
                    let same_b = b.assignments[pi] == b.assignments[pj];
                    prop_assert_eq!(same_a, same_b);
                }
            }
        }
    }
}
