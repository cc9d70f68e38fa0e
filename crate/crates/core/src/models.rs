//! Prediction functions: the [`Predictor`] abstraction, an in-process
//! least-squares model and the closed-form simulation model.

use std::fmt;

use ndarray::{Array2, ArrayView2};

use crate::error::{GeoShapError, Result};
use crate::linalg::PivotedQr;
use crate::simulation;

/// A batch prediction function over `arity` input columns.
pub trait Predictor: Send + Sync {
    fn arity(&self) -> usize;

    /// One output per input row.
    fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>>;

    fn descriptor(&self) -> String;

    /// Whether concurrent `predict` calls are allowed.
    fn concurrency_safe(&self) -> bool {
        true
    }
}

pub(crate) fn check_arity(x: &ArrayView2<'_, f64>, arity: usize) -> Result<()> {
    if x.ncols() != arity {
        return Err(GeoShapError::Dimension {
            what: "predictor input columns",
            expected: arity,
            got: x.ncols(),
        });
    }
    Ok(())
}

/// Row-wise closure predictor.
pub struct FnPredictor<F> {
    arity: usize,
    f: F,
    name: String,
}

impl<F: Fn(&[f64]) -> f64 + Send + Sync> FnPredictor<F> {
    pub fn new(arity: usize, f: F) -> Self {
        Self {
            arity,
            f,
            name: "fn".into(),
        }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

impl<F: Fn(&[f64]) -> f64 + Send + Sync> Predictor for FnPredictor<F> {
    fn arity(&self) -> usize {
        self.arity
    }

    fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        check_arity(&x, self.arity)?;
        let mut row = vec![0.0; self.arity];
        Ok(x
            .rows()
            .into_iter()
            .map(|r| {
                for (d, s) in row.iter_mut().zip(r) {
                    *d = *s;
                }
                (self.f)(&row)
            })
            .collect())
    }

    fn descriptor(&self) -> String {
        self.name.clone()
    }
}

impl<F> fmt::Debug for FnPredictor<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnPredictor")
            .field("arity", &self.arity)
            .field("name", &self.name)
            .finish()
    }
}

/// Ordinary least squares with an intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct OlsModel {
    /// Intercept first, then one slope per column.
    pub coefficients: Vec<f64>,
    pub r2: f64,
    pub residual_variance: f64,
}

impl OlsModel {
    pub fn from_coefficients(coefficients: Vec<f64>) -> Self {
        Self {
            coefficients,
            r2: f64::NAN,
            residual_variance: f64::NAN,
        }
    }

    pub fn intercept(&self) -> f64 {
        self.coefficients[0]
    }

    pub fn slopes(&self) -> &[f64] {
        &self.coefficients[1..]
    }

    fn eval(&self, row: impl IntoIterator<Item = f64>) -> f64 {
        self.coefficients[0]
            + row
                .into_iter()
                .zip(&self.coefficients[1..])
                .map(|(x, b)| x * b)
                .sum::<f64>()
    }
}

impl Predictor for OlsModel {
    fn arity(&self) -> usize {
        self.coefficients.len() - 1
    }

    fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        check_arity(&x, self.arity())?;
        Ok(x.rows().into_iter().map(|r| self.eval(r.iter().copied())).collect())
    }

    fn descriptor(&self) -> String {
        let coefs: Vec<String> = self.coefficients.iter().map(|c| c.to_string()).collect();
        format!("builtin:ols[{}]", coefs.join(","))
    }
}

/// Least-squares fit of `y` on `[1, X]` by pivoted QR.
///
/// Rank deficiency reports design columns, where column 0 is the intercept
/// and column `c + 1` is input column `c`.
pub fn ols_fit(x: ArrayView2<'_, f64>, y: &[f64]) -> Result<OlsModel> {
    let (n, p) = x.dim();
    if y.len() != n {
        return Err(GeoShapError::Dimension {
            what: "response length",
            expected: n,
            got: y.len(),
        });
    }
    if n <= p {
        return Err(GeoShapError::Data(format!(
            "ols needs more rows than columns ({n} rows, {p} columns)"
        )));
    }
    let design = Array2::from_shape_fn((n, p + 1), |(i, j)| if j == 0 { 1.0 } else { x[[i, j - 1]] });
    let qr = PivotedQr::new(design.view());
    if qr.rank() < p + 1 {
        return Err(GeoShapError::RankDeficient {
            columns: qr.deficient_columns(),
        });
    }
    let coefficients = qr.solve(y);
    let model = OlsModel::from_coefficients(coefficients);
    let fitted = model.predict(x)?;
    let mean = y.iter().sum::<f64>() / n as f64;
    let sse: f64 = y.iter().zip(&fitted).map(|(a, b)| (a - b).powi(2)).sum();
    let sst: f64 = y.iter().map(|a| (a - mean).powi(2)).sum();
    Ok(OlsModel {
        r2: if sst > 0.0 { 1.0 - sse / sst } else { 1.0 },
        residual_variance: sse / (n - p - 1).max(1) as f64,
        ..model
    })
}

/// Noiseless data-generating model over `(u, v, x1, x2, x3, x4)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrueModel;

impl Predictor for TrueModel {
    fn arity(&self) -> usize {
        6
    }

    fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        true_model_predict(x)
    }

    fn descriptor(&self) -> String {
        "builtin:truemodel".into()
    }
}

pub fn true_model_predict(x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    check_arity(&x, 6)?;
    x.rows()
        .into_iter()
        .map(|r| {
            let c = simulation::dgp_components(r[0], r[1], r[2], r[3], r[4], r[5])?;
            Ok(c.total())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ols_recovers_noiseless_plane() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array2::from_shape_fn((50, 2), |_| rng.random_range(0.0..4.0));
        let y: Vec<f64> = x.rows().into_iter().map(|r| 3.0 + 2.0 * r[0] + r[1]).collect();
        let m = ols_fit(x.view(), &y).unwrap();
        for (got, want) in m.coefficients.iter().zip([3.0, 2.0, 1.0]) {
            assert!((got - want).abs() < 1e-10);
        }
        assert!((m.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ols_constant_response() {
        let x = array![[1.0, 0.0], [2.0, 5.0], [3.0, 1.0], [4.0, 4.0]];
        let m = ols_fit(x.view(), &[7.0; 4]).unwrap();
        assert!((m.intercept() - 7.0).abs() < 1e-12);
        assert!(m.slopes().iter().all(|b| b.abs() < 1e-12));
    }

    #[test]
    fn ols_single_predictor_closed_form() {
        let xs = [1.0, 2.0, 4.0, 5.0, 8.0];
        let ys = [2.0, 3.0, 7.0, 8.0, 12.0];
        let xm = xs.iter().sum::<f64>() / 5.0;
        let ym = ys.iter().sum::<f64>() / 5.0;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - xm).powi(2)).sum();
        let slope = sxy / sxx;
        let x = Array2::from_shape_vec((5, 1), xs.to_vec()).unwrap();
        let m = ols_fit(x.view(), &ys).unwrap();
        assert!((m.slopes()[0] - slope).abs() < 1e-12);
        assert!((m.intercept() - (ym - slope * xm)).abs() < 1e-12);
    }

    #[test]
    fn ols_rank_deficiency() {
        let x = array![[1.0, 2.0], [2.0, 4.0], [3.0, 6.0], [4.0, 8.0]];
        match ols_fit(x.view(), &[1.0, 2.0, 3.0, 4.0]) {
            Err(GeoShapError::RankDeficient { columns }) => assert_eq!(columns.len(), 1),
            other => panic!("{other:?}"),
        }
        assert!(ols_fit(x.view(), &[1.0, 2.0]).is_err());
    }

    #[test]
    fn ols_predict_is_affine() {
        let m = OlsModel::from_coefficients(vec![0.5, -1.0, 2.0]);
        let a = array![[1.0, 2.0], [0.0, -3.0]];
        let b = array![[4.0, -1.0], [2.0, 2.0]];
        let t = 0.3;
        let mix = &a * t + &b * (1.0 - t);
        let pa = m.predict(a.view()).unwrap();
        let pb = m.predict(b.view()).unwrap();
        let pm = m.predict(mix.view()).unwrap();
        for i in 0..2 {
            assert!((pm[i] - (t * pa[i] + (1.0 - t) * pb[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn true_model_points() {
        let x = array![
            [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            [25.0, 25.0, 0.0, 0.0, 1.0, 0.0],
            [10.0, 3.0, 0.0, 0.0, 0.0, 2.0],
        ];
        let y = true_model_predict(x.view()).unwrap();
        assert_eq!(y[0], 0.0);
        let f0 = 6.0 / 20736.0 * 156.25 * 156.25;
        assert!((y[1] - (f0 + 2.0)).abs() < 1e-12);
        assert!((f0 - 7.064254).abs() < 1e-6);
        let f0_10_3 = simulation::dgp_components(10.0, 3.0, 0.0, 0.0, 0.0, 0.0).unwrap().f0;
        assert!((y[2] - (f0_10_3 + 4.0)).abs() < 1e-12);
        assert!(true_model_predict(array![[50.0, 0.0, 0.0, 0.0, 0.0, 0.0]].view()).is_err());
        assert!(true_model_predict(array![[1.0, 2.0]].view()).is_err());
    }
}
