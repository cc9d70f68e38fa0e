//! Background dataset construction: full data, random subsample, k-means
//! summary or a single reference row.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::coalition::BackgroundData;
use crate::error::{GeoShapError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reference {
    Mean,
    Median,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackgroundSpec {
    Full,
    Sample { k: usize, seed: u64 },
    KMeans { k: usize, seed: u64 },
    Single(Reference),
}

impl fmt::Display for BackgroundSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackgroundSpec::Full => write!(f, "full"),
            BackgroundSpec::Sample { k, seed } => write!(f, "sample:{k}:{seed}"),
            BackgroundSpec::KMeans { k, seed } => write!(f, "kmeans:{k}:{seed}"),
            BackgroundSpec::Single(Reference::Mean) => write!(f, "single:mean"),
            BackgroundSpec::Single(Reference::Median) => write!(f, "single:median"),
        }
    }
}

impl FromStr for BackgroundSpec {
    type Err = GeoShapError;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let bad = || GeoShapError::Config(format!("invalid background spec '{s}'"));
        let num = |t: &str| t.parse::<u64>().map_err(|_| bad());
        let spec = match parts.as_slice() {
            ["full"] => BackgroundSpec::Full,
            ["sample", k, seed] => BackgroundSpec::Sample {
                k: num(k)? as usize,
                seed: num(seed)?,
            },
            ["kmeans", k, seed] => BackgroundSpec::KMeans {
                k: num(k)? as usize,
                seed: num(seed)?,
            },
            ["single", "mean"] => BackgroundSpec::Single(Reference::Mean),
            ["single", "median"] => BackgroundSpec::Single(Reference::Median),
            _ => return Err(bad()),
        };
        if let BackgroundSpec::Sample { k: 0, .. } | BackgroundSpec::KMeans { k: 0, .. } = spec {
            return Err(GeoShapError::Config("background size must be at least 1".into()));
        }
        Ok(spec)
    }
}

pub fn select_background(x: ArrayView2<'_, f64>, spec: &BackgroundSpec) -> Result<BackgroundData> {
    let n = x.nrows();
    if n == 0 {
        return Err(GeoShapError::Data("cannot build a background from no rows".into()));
    }
    let check_k = |k: usize| {
        if k == 0 || k > n {
            Err(GeoShapError::Config(format!(
                "background size {k} must be in 1..={n}"
            )))
        } else {
            Ok(())
        }
    };
    let bg = match *spec {
        BackgroundSpec::Full => BackgroundData::uniform(x.to_owned())?,
        BackgroundSpec::Sample { k, seed } => {
            check_k(k)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx = index::sample(&mut rng, n, k).into_vec();
            idx.sort_unstable();
            BackgroundData::uniform(x.select(Axis(0), &idx))?
        }
        BackgroundSpec::KMeans { k, seed } => {
            check_k(k)?;
            let fit = kmeans(x, k, seed, DEFAULT_MAX_ITER, DEFAULT_TOL)?;
            let mut counts = vec![0usize; k];
            for &a in &fit.assignment {
                counts[a] += 1;
            }
            let weights = counts.iter().map(|&c| c as f64 / n as f64).collect();
            BackgroundData::new(fit.centroids, weights)?
        }
        BackgroundSpec::Single(reference) => {
            let row: Vec<f64> = x
                .columns()
                .into_iter()
                .map(|col| match reference {
                    Reference::Mean => col.sum() / n as f64,
                    Reference::Median => lower_median(col),
                })
                .collect();
            BackgroundData::uniform(Array2::from_shape_vec((1, row.len()), row).unwrap())?
        }
    };
    Ok(bg.with_descriptor(spec.to_string()))
}

fn lower_median(col: ArrayView1<'_, f64>) -> f64 {
    let mut v = col.to_vec();
    v.sort_by(f64::total_cmp);
    v[(v.len() - 1) / 2]
}

pub const DEFAULT_MAX_ITER: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub centroids: Array2<f64>,
    pub assignment: Vec<usize>,
    /// Within-cluster sum of squares after each assignment step.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

impl KMeansFit {
    pub fn inertia(&self) -> f64 {
        *self.inertia_history.last().unwrap_or(&0.0)
    }
}

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: ArrayView1<'_, f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init(x: ArrayView2<'_, f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = x.nrows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = x.rows().into_iter().map(|r| sq_dist(r, x.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if *d > 0.0 && target < *d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            while d2[pick] == 0.0 {
                pick -= 1;
            }
            pick
        } else {
            // all remaining points coincide with a centroid
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (i, r) in x.rows().into_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(r, x.row(next)));
        }
    }
    x.select(Axis(0), &chosen)
}

/// Lloyd's algorithm from a k-means++ start. Empty clusters are reseeded at
/// the point farthest from its centroid.
pub fn kmeans(x: ArrayView2<'_, f64>, k: usize, seed: u64, max_iter: usize, tol: f64) -> Result<KMeansFit> {
    let (n, p) = x.dim();
    if k == 0 || k > n {
        return Err(GeoShapError::Config(format!("k = {k} must be in 1..={n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(x, k, &mut rng);
    let mut assignment = vec![0usize; n];
    let mut dists = vec![0.0; n];
    let mut history = Vec::new();
    let mut iterations = 0;
    let assign = |centroids: &Array2<f64>, assignment: &mut [usize], dists: &mut [f64]| {
        for (i, r) in x.rows().into_iter().enumerate() {
            let (c, d) = nearest(r, centroids);
            assignment[i] = c;
            dists[i] = d;
        }
        dists.iter().sum::<f64>()
    };
    for _ in 0..max_iter {
        iterations += 1;
        history.push(assign(&centroids, &mut assignment, &mut dists));
        let mut sums = Array2::<f64>::zeros((k, p));
        let mut counts = vec![0usize; k];
        for (i, r) in x.rows().into_iter().enumerate() {
            let mut s = sums.row_mut(assignment[i]);
            s += &r;
            counts[assignment[i]] += 1;
        }
        let mut shift = 0.0f64;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let mean = sums.row(c).mapv(|v| v / counts[c] as f64);
            shift = shift.max(sq_dist(mean.view(), centroids.row(c)).sqrt());
            centroids.row_mut(c).assign(&mean);
        }
        let mut reseeded = false;
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                    .unwrap();
                centroids.row_mut(c).assign(&x.row(far));
                dists[far] = 0.0;
                reseeded = true;
            }
        }
        if !reseeded && shift < tol {
            break;
        }
    }
    history.push(assign(&centroids, &mut assignment, &mut dists));
    Ok(KMeansFit {
        centroids,
        assignment,
        inertia_history: history,
        iterations,
    })
}
