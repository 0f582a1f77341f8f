//! Principal components by power iteration with deflation.
//!
//! Each component is found by iterating on a repeatedly squared copy of the
//! deflated covariance, which has the same eigenvectors but separates close
//! eigenvalues much faster. Iterates are re-orthogonalised against the
//! components already found.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{norm, EmbeddingSet};
use crate::error::{Error, Result};

pub const PCA_TOL: f64 = 1e-9;
pub const PCA_MAX_ITER: usize = 1000;
const SQUARINGS: usize = 4;
const START_SEED: u64 = 0x5eed;

#[derive(Clone, Debug, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit-norm, mutually orthogonal directions, largest variance first.
    pub components: Vec<Vec<f64>>,
    /// Sample variance along each component.
    pub variances: Vec<f64>,
}

impl Pca {
    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.iter().zip(x).zip(&self.mean).map(|((c, x), m)| c * (x - m)).sum())
            .collect()
    }

    pub fn reconstruct(&self, scores: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, s) in self.components.iter().zip(scores) {
            for (o, cv) in out.iter_mut().zip(c) {
                *o += s * cv;
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub coords: Vec<[f64; 2]>,
    pub pca: Pca,
}

type Mat = Vec<Vec<f64>>;

fn matmul(a: &Mat, b: &Mat) -> Mat {
    let n = a.len();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i][k];
            if aik != 0.0 {
                for j in 0..n {
                    out[i][j] += aik * b[k][j];
                }
            }
        }
    }
    out
}

fn matvec(a: &Mat, v: &[f64]) -> Vec<f64> {
    a.iter().map(|r| r.iter().zip(v).map(|(x, y)| x * y).sum()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn orthogonalise(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let p = dot(v, b);
        for (x, y) in v.iter_mut().zip(b) {
            *x -= p * y;
        }
    }
}

fn normalise(v: &mut [f64]) -> f64 {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Covariance (divided by N − 1) of the centred rows.
fn covariance(e: &EmbeddingSet, mean: &[f64]) -> Mat {
    let m = e.dim();
    let mut c = vec![vec![0.0; m]; m];
    for x in e.rows() {
        let d: Vec<f64> = x.iter().zip(mean).map(|(a, b)| a - b).collect();
        for i in 0..m {
            for j in i..m {
                c[i][j] += d[i] * d[j];
            }
        }
    }
    let denom = (e.len() - 1) as f64;
    for i in 0..m {
        for j in i..m {
            c[i][j] /= denom;
            c[j][i] = c[i][j];
        }
    }
    c
}

/// Top `rank` principal components of the rows of `e`.
pub fn principal_components(e: &EmbeddingSet, rank: usize) -> Result<Pca> {
    let (n, m) = (e.len(), e.dim());
    if n < 2 {
        return Err(Error::InvalidArgument(format!("principal components need at least 2 rows, got {n}")));
    }
    if rank == 0 || rank > m {
        return Err(Error::InvalidArgument(format!("rank {rank} must lie in 1..={m}")));
    }
    let mean: Vec<f64> = (0..m).map(|j| e.rows().map(|x| x[j]).sum::<f64>() / n as f64).collect();
    let mut cov = covariance(e, &mean);
    let trace: f64 = (0..m).map(|i| cov[i][i]).sum();
    let scale = e.rows().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    let floor = (f64::EPSILON * scale.max(f64::MIN_POSITIVE)).powi(2) * m as f64;
    if trace <= floor {
        return Err(Error::InvalidArgument("rank-0 data: every row is identical".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(START_SEED);
    let mut components: Vec<Vec<f64>> = Vec::new();
    let mut variances = Vec::new();
    for _ in 0..rank {
        let mut start: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        orthogonalise(&mut start, &components);
        normalise(&mut start);

        let mut power = cov.clone();
        for _ in 0..SQUARINGS {
            power = matmul(&power, &power);
            let f = power.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
            if f > 0.0 {
                power.iter_mut().flatten().for_each(|v| *v /= f);
            }
        }

        let mut v = start.clone();
        for _ in 0..PCA_MAX_ITER {
            let mut next = matvec(&power, &v);
            orthogonalise(&mut next, &components);
            if normalise(&mut next) <= trace * 1e-14 {
                // remaining variance is numerically zero
                next = start.clone();
                break;
            }
            if dot(&next, &v) < 0.0 {
                next.iter_mut().for_each(|x| *x = -*x);
            }
            let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            v = next;
            if delta < PCA_TOL {
                break;
            }
        }
        // fix the sign so the largest coordinate is positive
        let lead = v.iter().copied().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
        if lead < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        let lambda = dot(&v, &matvec(&cov, &v)).max(0.0);
        for i in 0..m {
            for j in 0..m {
                cov[i][j] -= lambda * v[i] * v[j];
            }
        }
        components.push(v);
        variances.push(lambda);
    }
    Ok(Pca {
        mean,
        components,
        variances,
    })
}

/// Rows of `e` replaced by their scores on the top `rank` components.
pub fn reduce(e: &EmbeddingSet, rank: usize) -> Result<EmbeddingSet> {
    let pca = principal_components(e, rank)?;
    EmbeddingSet::new(e.ids().to_vec(), e.rows().map(|x| pca.scores(x)).collect())
}

/// Scores of every row on the top two principal components.
pub fn project2d(e: &EmbeddingSet) -> Result<Projection> {
    if e.dim() < 2 {
        return Err(Error::InvalidArgument(format!(
            "a 2D projection needs at least 2 dimensions, got {}",
            e.dim()
        )));
    }
    let pca = principal_components(e, 2)?;
    let coords = e
        .rows()
        .map(|x| {
            let s = pca.scores(x);
            [s[0], s[1]]
        })
        .collect();
    Ok(Projection { coords, pca })
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

    #[test]
    fn planar_data_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|_| vec![rng.random_range(-5.0..5.0), 0.0, rng.random_range(-1.0..1.0), 0.0])
            .collect();
        let e = set(rows.clone());
        let p = project2d(&e).unwrap();
        for (x, c) in rows.iter().zip(&p.coords) {
            let back = p.pca.reconstruct(c);
            for (a, b) in x.iter().zip(&back) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rank_zero_rejected() {
        let e = set(vec![vec![1.5, -2.0]; 5]);
        assert!(project2d(&e).is_err());
        assert!(project2d(&set(vec![vec![1.0, 2.0]])).is_err());
        assert!(principal_components(&set(vec![vec![1.0], vec![2.0]]), 2).is_err());
    }

    #[test]
    fn rank_one_data_pads_with_an_orthogonal_direction() {
        let e = set((0..6).map(|i| vec![i as f64, 2.0 * i as f64]).collect());
        let p = project2d(&e).unwrap();
        let c = &p.pca.components;
        assert!((dot(&c[0], &c[1])).abs() < 1e-9);
        assert!(p.pca.variances[1] < 1e-12);
        assert!(p.coords.iter().all(|c| c[1].abs() < 1e-9));
    }

    #[test]
    fn variances_of_axis_aligned_data() {
        // columns with variances 4 and 1
        let e = set(vec![vec![2.0, 0.0], vec![-2.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]]);
        let p = principal_components(&e, 2).unwrap();
        assert!((p.variances[0] - 8.0 / 3.0).abs() < 1e-9);
        assert!((p.variances[1] - 2.0 / 3.0).abs() < 1e-9);
        assert!((p.components[0][0].abs() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn reduce_keeps_ids() {
        let e = set((0..5).map(|i| vec![i as f64, (i * i) as f64, 1.0]).collect());
        let r = reduce(&e, 2).unwrap();
        assert_eq!(r.dim(), 2);
        assert_eq!(r.ids(), e.ids());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn components_are_orthonormal(seed in 0u64..10_000, m in 2usize..9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows = (0..20).map(|_| (0..m).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let p = principal_components(&set(rows), m).unwrap();
            for (i, a) in p.components.iter().enumerate() {
                prop_assert!((norm(a) - 1.0).abs() < 1e-6);
                for b in &p.components[i + 1..] {
                    prop_assert!(dot(a, b).abs() < 1e-6);
                }
            }
            for w in p.variances.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-9) + 1e-12);
            }
        }
    }
}
