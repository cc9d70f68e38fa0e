//! Ground-truth simulation on a 50 x 50 grid with an intrinsic location
//! surface, two spatially varying slopes, one linear and one quadratic term.

use std::io::Write;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand::seq::index;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{GeoShapError, Result};

pub const GRID: usize = 50;
pub const GRID_MAX: f64 = 49.0;
pub const N_CELLS: usize = GRID * GRID;

pub const CSV_HEADER: [&str; 11] = [
    "u", "v", "X1", "X2", "X3", "X4", "y_signal", "y", "f0", "beta1", "beta2",
];

/// The five additive pieces of the true model at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Components {
    pub f0: f64,
    pub f1: f64,
    pub f2: f64,
    pub f3: f64,
    pub f4: f64,
}

impl Components {
    pub fn total(&self) -> f64 {
        self.f0 + self.f1 + self.f2 + self.f3 + self.f4
    }
}

fn check_coord(name: &str, c: f64) -> Result<()> {
    if !(0.0..=GRID_MAX).contains(&c) {
        return Err(GeoShapError::Data(format!(
            "coordinate {name} = {c} outside [0, 49]"
        )));
    }
    Ok(())
}

/// Dome-shaped intrinsic location effect, zero along `u = 0` and `v = 0`.
pub fn f0(u: f64, v: f64) -> f64 {
    let bracket = |c: f64| 12.5f64.powi(2) - (12.5 - c / 2.0).powi(2);
    6.0 / 12f64.powi(4) * bracket(u) * bracket(v)
}

pub fn beta1(u: f64, v: f64) -> f64 {
    1.0 + 2.0 / 49.0 * (u + v)
}

/// Mirror image of [`beta1`] across `u`.
pub fn beta2(u: f64, v: f64) -> f64 {
    1.0 + 2.0 / 49.0 * ((GRID_MAX - u) + v)
}

pub fn dgp_components(u: f64, v: f64, x1: f64, x2: f64, x3: f64, x4: f64) -> Result<Components> {
    check_coord("u", u)?;
    check_coord("v", v)?;
    Ok(Components {
        f0: f0(u, v),
        f1: beta1(u, v) * x1,
        f2: beta2(u, v) * x2,
        f3: 2.0 * x3,
        f4: x4 * x4,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedDataset {
    /// Grid cell index `u * 50 + v` of each row.
    pub cells: Vec<usize>,
    /// `(u, v)` per row.
    pub coords: Array2<f64>,
    /// `X1..X4` per row.
    pub x: Array2<f64>,
    pub y_signal: Vec<f64>,
    pub y: Vec<f64>,
    pub f0: Vec<f64>,
    pub beta1: Vec<f64>,
    pub beta2: Vec<f64>,
    pub seed: u64,
    pub noise_sd: f64,
}

impl SimulatedDataset {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Model inputs `(u, v, X1, X2, X3, X4)`.
    pub fn features(&self) -> Array2<f64> {
        ndarray::concatenate![ndarray::Axis(1), self.coords, self.x]
    }

    pub fn feature_names() -> Vec<String> {
        CSV_HEADER[..6].iter().map(|s| s.to_string()).collect()
    }

    /// `Var(signal) / (Var(signal) + noise_sd^2)` on this sample.
    pub fn true_r2(&self) -> f64 {
        let var = variance(&self.y_signal);
        var / (var + self.noise_sd * self.noise_sd)
    }

    pub fn component(&self, i: usize) -> Components {
        let (u, v) = (self.coords[[i, 0]], self.coords[[i, 1]]);
        let x = self.x.row(i);
        dgp_components(u, v, x[0], x[1], x[2], x[3]).expect("grid coordinates")
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        for i in 0..self.len() {
            let x = self.x.row(i);
            let row = [
                self.coords[[i, 0]],
                self.coords[[i, 1]],
                x[0],
                x[1],
                x[2],
                x[3],
                self.y_signal[i],
                self.y[i],
                self.f0[i],
                self.beta1[i],
                self.beta2[i],
            ];
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Draws the dataset. Each cell has its own generator stream, so a
/// subsample carries exactly the values of the same cells on the full grid.
pub fn generate_dataset(seed: u64, noise_sd: f64, n_override: Option<usize>) -> Result<SimulatedDataset> {
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(GeoShapError::Config(format!("noise sd {noise_sd} must be >= 0")));
    }
    let cells: Vec<usize> = match n_override {
        None => (0..N_CELLS).collect(),
        Some(n) if n == 0 || n > N_CELLS => {
            return Err(GeoShapError::Config(format!(
                "subsample size {n} must be in 1..={N_CELLS}"
            )))
        }
        Some(n) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(u64::MAX);
            let mut picked = index::sample(&mut rng, N_CELLS, n).into_vec();
            picked.sort_unstable();
            picked
        }
    };
    let n = cells.len();
    let mut coords = Array2::zeros((n, 2));
    let mut x = Array2::zeros((n, 4));
    let mut y_signal = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let (mut f0s, mut b1, mut b2) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for (i, &cell) in cells.iter().enumerate() {
        let u = (cell / GRID) as f64;
        let v = (cell % GRID) as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(cell as u64);
        let xs: [f64; 4] = std::array::from_fn(|_| rng.random_range(-2.0..2.0));
        let eps: f64 = rng.sample(StandardNormal);
        let c = dgp_components(u, v, xs[0], xs[1], xs[2], xs[3])?;
        coords[[i, 0]] = u;
        coords[[i, 1]] = v;
        for (k, xv) in xs.iter().enumerate() {
            x[[i, k]] = *xv;
        }
        y_signal.push(c.total());
        y.push(c.total() + noise_sd * eps);
        f0s.push(c.f0);
        b1.push(beta1(u, v));
        b2.push(beta2(u, v));
    }
    Ok(SimulatedDataset {
        cells,
        coords,
        x,
        y_signal,
        y,
        f0: f0s,
        beta1: b1,
        beta2: b2,
        seed,
        noise_sd,
    })
}

/// Agreement between a recovered surface and the truth on masked-in entries.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Fidelity {
    pub r2: f64,
    pub rmse: f64,
    pub n: usize,
}

pub const MIN_FIDELITY_POINTS: usize = 30;

/// `R^2 = 1 - SSE/SST` and RMSE over entries where `mask` is true.
pub fn surface_fidelity(recovered: &[f64], truth: &[f64], mask: &[bool]) -> Result<Fidelity> {
    if recovered.len() != truth.len() || mask.len() != truth.len() {
        return Err(GeoShapError::Dimension {
            what: "surface length",
            expected: truth.len(),
            got: recovered.len().min(mask.len()),
        });
    }
    let pairs: Vec<(f64, f64)> = recovered
        .iter()
        .zip(truth)
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((&r, &t), _)| (r, t))
        .collect();
    if pairs.len() < MIN_FIDELITY_POINTS {
        return Err(GeoShapError::Data(format!(
            "only {} defined points, need at least {MIN_FIDELITY_POINTS}",
            pairs.len()
        )));
    }
    if pairs.iter().any(|(r, t)| !r.is_finite() || !t.is_finite()) {
        return Err(GeoShapError::Numerical("non-finite surface value".into()));
    }
    let n = pairs.len() as f64;
    let mean = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let sst: f64 = pairs.iter().map(|p| (p.1 - mean).powi(2)).sum();
    let sse: f64 = pairs.iter().map(|p| (p.0 - p.1).powi(2)).sum();
    if sst <= f64::EPSILON * n * mean.abs().max(1.0) {
        return Err(GeoShapError::Numerical("truth surface has no variance".into()));
    }
    Ok(Fidelity {
        r2: 1.0 - sse / sst,
        rmse: (sse / n).sqrt(),
        n: pairs.len(),
    })
}
