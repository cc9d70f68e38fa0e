//! Per-instance and batch GeoShapley explanations.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coalition::{
    build_design_matrix, coalition_values, enumerate_coalitions, BackgroundData, DesignSystem,
    GeoSpec, DEFAULT_MAX_BATCH_ROWS,
};
use crate::error::{GeoShapError, Result};
use crate::floats;
use crate::models::Predictor;
use crate::solver::ConstrainedWls;

/// Attribution of one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceExplanation {
    pub base_value: f64,
    pub phi_geo: f64,
    pub phi_main: Vec<f64>,
    pub phi_geo_interaction: Vec<f64>,
    /// Predictor output at the raw instance.
    pub prediction: f64,
    /// Full-coalition value.
    pub full_value: f64,
    /// Sum of all components minus the full-coalition value.
    pub reconstruction_residual: f64,
    pub residual_norm: f64,
}

impl InstanceExplanation {
    /// `phi_0 + phi_GEO + sum(phi_j) + sum(phi_GEO,j)`.
    pub fn total(&self) -> f64 {
        self.base_value
            + self.phi_geo
            + self.phi_main.iter().sum::<f64>()
            + self.phi_geo_interaction.iter().sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultMetadata {
    /// Every input column, in order.
    pub column_names: Vec<String>,
    pub geo_indices: Vec<usize>,
    /// Non-location feature names.
    pub feature_names: Vec<String>,
    pub geo_names: Vec<String>,
    pub background: String,
    pub background_size: usize,
    pub predictor: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedInstance {
    pub index: usize,
    pub message: String,
}

/// GeoShapley values for a batch of instances. Skipped instances carry NaN
/// (serialized as `null`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoShapleyResult {
    pub base_value: f64,
    #[serde(with = "floats::vec")]
    pub prediction: Vec<f64>,
    #[serde(with = "floats::vec")]
    pub phi_geo: Vec<f64>,
    /// `n x (p - g)`
    #[serde(with = "floats::matrix")]
    pub phi_main: Vec<Vec<f64>>,
    /// `n x (p - g)`
    #[serde(with = "floats::matrix")]
    pub phi_geo_interaction: Vec<Vec<f64>>,
    #[serde(with = "floats::vec")]
    pub full_value: Vec<f64>,
    #[serde(with = "floats::vec")]
    pub reconstruction_residual: Vec<f64>,
    /// Explained input rows, `n x p`.
    pub instances: Vec<Vec<f64>>,
    #[serde(default)]
    pub skipped: Vec<SkippedInstance>,
    pub metadata: ResultMetadata,
}

impl GeoShapleyResult {
    pub fn len(&self) -> usize {
        self.phi_geo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi_geo.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.metadata.feature_names.len()
    }

    pub fn instances_array(&self) -> Array2<f64> {
        let p = self.metadata.column_names.len();
        Array2::from_shape_fn((self.len(), p), |(i, j)| self.instances[i][j])
    }

    /// Main effect column of feature `j` across instances.
    pub fn main_column(&self, j: usize) -> Vec<f64> {
        self.phi_main.iter().map(|r| r[j]).collect()
    }

    pub fn interaction_column(&self, j: usize) -> Vec<f64> {
        self.phi_geo_interaction.iter().map(|r| r[j]).collect()
    }

    pub fn instance(&self, i: usize) -> InstanceExplanation {
        InstanceExplanation {
            base_value: self.base_value,
            phi_geo: self.phi_geo[i],
            phi_main: self.phi_main[i].clone(),
            phi_geo_interaction: self.phi_geo_interaction[i].clone(),
            prediction: self.prediction[i],
            full_value: self.full_value[i],
            reconstruction_residual: self.reconstruction_residual[i],
            residual_norm: f64::NAN,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExplainOptions {
    /// Worker threads; 0 picks the number of available cores.
    pub workers: usize,
    pub seed: u64,
    pub max_batch_rows: usize,
    /// Flag failing instances instead of aborting the batch.
    pub skip_failures: bool,
}

impl Default for ExplainOptions {
    fn default() -> Self {
        Self {
            workers: 1,
            seed: 0,
            max_batch_rows: DEFAULT_MAX_BATCH_ROWS,
            skip_failures: false,
        }
    }
}

/// Routes every call through one lock for predictors that are not reentrant.
struct Serialized<'a> {
    inner: &'a dyn Predictor,
    lock: Mutex<()>,
}

impl Predictor for Serialized<'_> {
    fn arity(&self) -> usize {
        self.inner.arity()
    }

    fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        let _guard = self.lock.lock().unwrap_or_else(|e| e.into_inner());
        self.inner.predict(x)
    }

    fn descriptor(&self) -> String {
        self.inner.descriptor()
    }
}

/// Shared state for explaining many instances against one background.
pub struct Explainer<'a> {
    predictor: &'a dyn Predictor,
    spec: GeoSpec,
    background: BackgroundData,
    design: DesignSystem,
    wls: ConstrainedWls,
    base_value: f64,
    max_batch_rows: usize,
}

impl<'a> Explainer<'a> {
    pub fn new(predictor: &'a dyn Predictor, spec: GeoSpec, background: BackgroundData) -> Result<Self> {
        if predictor.arity() != spec.p() {
            return Err(GeoShapError::Dimension {
                what: "predictor arity",
                expected: spec.p(),
                got: predictor.arity(),
            });
        }
        if background.n_cols() != spec.p() {
            return Err(GeoShapError::Dimension {
                what: "background column count",
                expected: spec.p(),
                got: background.n_cols(),
            });
        }
        let design = build_design_matrix(enumerate_coalitions(spec.q())?, &spec)?;
        let wls = ConstrainedWls::new(&design)?;
        let preds = predictor.predict(background.rows())?;
        if preds.len() != background.len() {
            return Err(GeoShapError::Dimension {
                what: "prediction count",
                expected: background.len(),
                got: preds.len(),
            });
        }
        let base_value = background.weighted_average(&preds);
        if !base_value.is_finite() {
            return Err(GeoShapError::Predictor("non-finite background prediction".into()));
        }
        Ok(Self {
            predictor,
            spec,
            background,
            design,
            wls,
            base_value,
            max_batch_rows: DEFAULT_MAX_BATCH_ROWS,
        })
    }

    pub fn with_max_batch_rows(mut self, rows: usize) -> Self {
        self.max_batch_rows = rows.max(1);
        self
    }

    /// Background-weighted mean prediction with every player masked.
    pub fn base_value(&self) -> f64 {
        self.base_value
    }

    pub fn spec(&self) -> &GeoSpec {
        &self.spec
    }

    pub fn background(&self) -> &BackgroundData {
        &self.background
    }

    pub fn design(&self) -> &DesignSystem {
        &self.design
    }

    pub fn explain_instance(&self, instance: &[f64]) -> Result<InstanceExplanation> {
        self.explain_with(self.predictor, instance)
    }

    fn explain_with(&self, predictor: &dyn Predictor, instance: &[f64]) -> Result<InstanceExplanation> {
        if instance.len() != self.spec.p() {
            return Err(GeoShapError::Dimension {
                what: "instance length",
                expected: self.spec.p(),
                got: instance.len(),
            });
        }
        if instance.iter().any(|v| !v.is_finite()) {
            return Err(GeoShapError::Data("instance contains non-finite values".into()));
        }
        // the empty coalition does not depend on the instance
        let coalitions = &self.design.coalitions()[1..];
        let mut values = Vec::with_capacity(coalitions.len() + 1);
        values.push(self.base_value);
        values.extend(coalition_values(
            predictor,
            instance,
            coalitions,
            &self.spec,
            &self.background,
            self.max_batch_rows,
        )?);
        let row = ndarray::ArrayView2::from_shape((1, instance.len()), instance).expect("row shape");
        let prediction = predictor.predict(row)?;
        let prediction = *prediction
            .first()
            .ok_or_else(|| GeoShapError::Predictor("empty prediction".into()))?;
        let sol = self.wls.solve(&values)?;
        let k = self.spec.n_features();
        let full_value = *values.last().unwrap();
        let mut out = InstanceExplanation {
            base_value: sol.phi[2 * k + 1],
            phi_geo: sol.phi[2 * k],
            phi_main: sol.phi[..k].to_vec(),
            phi_geo_interaction: sol.phi[k..2 * k].to_vec(),
            prediction,
            full_value,
            reconstruction_residual: 0.0,
            residual_norm: sol.residual_norm,
        };
        out.reconstruction_residual = out.total() - full_value;
        Ok(out)
    }

    /// Explains every row of `x`. Output order follows input order for any
    /// worker count.
    pub fn explain_batch(&self, x: ArrayView2<'_, f64>, options: &ExplainOptions) -> Result<GeoShapleyResult> {
        let n = x.nrows();
        if n == 0 {
            return Err(GeoShapError::Data("no instances to explain".into()));
        }
        if x.ncols() != self.spec.p() {
            return Err(GeoShapError::Dimension {
                what: "input column count",
                expected: self.spec.p(),
                got: x.ncols(),
            });
        }
        let serialized = Serialized {
            inner: self.predictor,
            lock: Mutex::new(()),
        };
        let predictor: &dyn Predictor = if self.predictor.concurrency_safe() {
            self.predictor
        } else {
            &serialized
        };
        let first_failure = AtomicUsize::new(usize::MAX);
        let run = |i: usize| -> Option<Result<InstanceExplanation>> {
            if !options.skip_failures && i > first_failure.load(Ordering::Acquire) {
                return None;
            }
            let row = x.row(i).to_vec();
            let res = self.explain_with(predictor, &row);
            if res.is_err() {
                first_failure.fetch_min(i, Ordering::AcqRel);
            }
            Some(res)
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.workers)
            .build()
            .map_err(|e| GeoShapError::Config(format!("thread pool: {e}")))?;
        let outcomes: Vec<Option<Result<InstanceExplanation>>> =
            pool.install(|| (0..n).into_par_iter().map(run).collect());

        let k = self.spec.n_features();
        let mut result = GeoShapleyResult {
            base_value: self.base_value,
            prediction: Vec::with_capacity(n),
            phi_geo: Vec::with_capacity(n),
            phi_main: Vec::with_capacity(n),
            phi_geo_interaction: Vec::with_capacity(n),
            full_value: Vec::with_capacity(n),
            reconstruction_residual: Vec::with_capacity(n),
            instances: x.rows().into_iter().map(|r| r.to_vec()).collect(),
            skipped: Vec::new(),
            metadata: ResultMetadata {
                column_names: self.spec.column_names().to_vec(),
                geo_indices: self.spec.geo_indices().to_vec(),
                feature_names: self.spec.feature_names(),
                geo_names: self.spec.geo_names(),
                background: self.background.descriptor().to_string(),
                background_size: self.background.len(),
                predictor: self.predictor.descriptor(),
                seed: options.seed,
            },
        };
        for (i, outcome) in outcomes.into_iter().enumerate() {
            match outcome {
                Some(Ok(e)) => {
                    result.prediction.push(e.prediction);
                    result.phi_geo.push(e.phi_geo);
                    result.phi_main.push(e.phi_main);
                    result.phi_geo_interaction.push(e.phi_geo_interaction);
                    result.full_value.push(e.full_value);
                    result.reconstruction_residual.push(e.reconstruction_residual);
                }
                Some(Err(e)) if options.skip_failures => {
                    result.skipped.push(SkippedInstance {
                        index: i,
                        message: e.to_string(),
                    });
                    result.prediction.push(f64::NAN);
                    result.phi_geo.push(f64::NAN);
                    result.phi_main.push(vec![f64::NAN; k]);
                    result.phi_geo_interaction.push(vec![f64::NAN; k]);
                    result.full_value.push(f64::NAN);
                    result.reconstruction_residual.push(f64::NAN);
                }
                Some(Err(e)) => {
                    return Err(GeoShapError::Instance {
                        index: i,
                        source: Box::new(e),
                    })
                }
                None => unreachable!("instances after the first failure are skipped only when a failure exists"),
            }
        }
        Ok(result)
    }
}

pub fn explain_instance(
    predictor: &dyn Predictor,
    instance: &[f64],
    spec: &GeoSpec,
    background: &BackgroundData,
) -> Result<InstanceExplanation> {
    Explainer::new(predictor, spec.clone(), background.clone())?.explain_instance(instance)
}

pub fn explain_batch(
    predictor: &dyn Predictor,
    x: ArrayView2<'_, f64>,
    spec: &GeoSpec,
    background: &BackgroundData,
    options: &ExplainOptions,
) -> Result<GeoShapleyResult> {
    Explainer::new(predictor, spec.clone(), background.clone())?
        .with_max_batch_rows(options.max_batch_rows)
        .explain_batch(x, options)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{FnPredictor, OlsModel};
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(n: usize, p: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, p), |_| rng.random_range(-2.0..2.0))
    }

    fn nonlinear() -> FnPredictor<impl Fn(&[f64]) -> f64 + Send + Sync> {
        FnPredictor::new(5, |r: &[f64]| {
            r[0] * r[3] + (r[1] * r[4]).sin() + r[2].powi(2) + r[3] * r[4] * r[0]
        })
    }

    fn spec5() -> GeoSpec {
        GeoSpec::anonymous(5, vec![3, 4]).unwrap()
    }

    #[test]
    fn ignoring_location_reduces_to_plain_shapley() {
        // exact when the model is additive across non-location features; see
        // solver::tests::feature_synergy_leaks_into_geo for the general case
        let f = FnPredictor::new(5, |r: &[f64]| r[0] * r[0].abs() - 2.0 * r[1] + r[2].exp());
        let bg = BackgroundData::uniform(random_matrix(6, 5, 1)).unwrap();
        let ex = Explainer::new(&f, spec5(), bg).unwrap();
        for row in random_matrix(5, 5, 2).rows() {
            let e = ex.explain_instance(row.as_slice().unwrap()).unwrap();
            assert!(e.phi_geo.abs() < 1e-8);
            assert!(e.phi_geo_interaction.iter().all(|v| v.abs() < 1e-8));
            assert!(e.reconstruction_residual.abs() < 1e-10);
        }
    }

    #[test]
    fn linear_model_closed_form() {
        // y = 3 + 2 x1 + x2 with one ignored location column
        let ols = OlsModel::from_coefficients(vec![3.0, 2.0, 1.0, 0.0]);
        let spec = GeoSpec::anonymous(3, vec![2]).unwrap();
        let bg = BackgroundData::uniform(array![[2.0, 1.0, 5.0]]).unwrap();
        let e = explain_instance(&ols, &[3.0, 4.0, 0.0], &spec, &bg).unwrap();
        assert!((e.phi_main[0] - 2.0).abs() < 1e-12);
        assert!((e.phi_main[1] - 3.0).abs() < 1e-12);
        assert!((e.base_value - 8.0).abs() < 1e-12);
    }

    #[test]
    fn instance_equal_to_background() {
        let x = [0.5, -1.0, 2.0, 1.0, 3.0];
        let bg = BackgroundData::uniform(array![[0.5, -1.0, 2.0, 1.0, 3.0]]).unwrap();
        let e = explain_instance(&nonlinear(), &x, &spec5(), &bg).unwrap();
        assert_eq!(e.phi_geo, 0.0);
        assert!(e.phi_main.iter().chain(&e.phi_geo_interaction).all(|v| *v == 0.0));
        assert_eq!(e.base_value, e.prediction);
    }

    #[test]
    fn batch_matches_instances_and_is_worker_independent() {
        let f = nonlinear();
        let bg = BackgroundData::uniform(random_matrix(7, 5, 3)).unwrap();
        let x = random_matrix(23, 5, 4);
        let one = explain_batch(&f, x.view(), &spec5(), &bg, &ExplainOptions::default()).unwrap();
        let many = explain_batch(
            &f,
            x.view(),
            &spec5(),
            &bg,
            &ExplainOptions {
                workers: 8,
                max_batch_rows: 10,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(one, many);
        let single = explain_instance(&f, x.row(5).as_slice().unwrap(), &spec5(), &bg).unwrap();
        assert_eq!(one.instance(5).phi_main, single.phi_main);
        assert_eq!(one.phi_geo[5], single.phi_geo);
        for (r, v) in one.reconstruction_residual.iter().zip(&one.full_value) {
            assert!(r.abs() <= 1e-8 * v.abs().max(1.0));
        }
    }

    #[test]
    fn duplicate_features_get_equal_values() {
        let f = FnPredictor::new(4, |r: &[f64]| (r[0] + r[1]) * r[3] + r[0] * r[1] + r[2]);
        let spec = GeoSpec::anonymous(4, vec![3]).unwrap();
        let mut bg = random_matrix(5, 4, 7);
        for mut r in bg.rows_mut() {
            r[1] = r[0];
        }
        let bg = BackgroundData::uniform(bg).unwrap();
        let e = explain_instance(&f, &[1.3, 1.3, -0.2, 0.7], &spec, &bg).unwrap();
        assert!((e.phi_main[0] - e.phi_main[1]).abs() < 1e-8);
        assert!((e.phi_geo_interaction[0] - e.phi_geo_interaction[1]).abs() < 1e-8);
    }

    struct Flaky;

    impl Predictor for Flaky {
        fn arity(&self) -> usize {
            2
        }
        fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
            if x.rows().into_iter().any(|r| r[0] > 100.0) {
                return Err(GeoShapError::Predictor("boom".into()));
            }
            Ok(x.rows().into_iter().map(|r| r[0] + r[1]).collect())
        }
        fn descriptor(&self) -> String {
            "flaky".into()
        }
        fn concurrency_safe(&self) -> bool {
            false
        }
    }

    #[test]
    fn fail_fast_and_skip_modes() {
        let spec = GeoSpec::anonymous(2, vec![1]).unwrap();
        let bg = BackgroundData::uniform(array![[0.0, 0.0]]).unwrap();
        let x = array![[1.0, 1.0], [200.0, 1.0], [2.0, 2.0], [300.0, 0.0]];
        let opts = ExplainOptions {
            workers: 4,
            ..Default::default()
        };
        match explain_batch(&Flaky, x.view(), &spec, &bg, &opts) {
            Err(GeoShapError::Instance { index, .. }) => assert_eq!(index, 1),
            other => panic!("{other:?}"),
        }
        let skip = ExplainOptions {
            skip_failures: true,
            ..opts
        };
        let r = explain_batch(&Flaky, x.view(), &spec, &bg, &skip).unwrap();
        assert_eq!(r.skipped.iter().map(|s| s.index).collect::<Vec<_>>(), vec![1, 3]);
        assert!(r.phi_geo[1].is_nan());
        assert!((r.phi_main[2][0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_mismatched_shapes() {
        let f = nonlinear();
        let bg = BackgroundData::uniform(random_matrix(3, 4, 1)).unwrap();
        assert!(Explainer::new(&f, spec5(), bg).is_err());
        let bg = BackgroundData::uniform(random_matrix(3, 5, 1)).unwrap();
        let ex = Explainer::new(&f, spec5(), bg).unwrap();
        assert!(ex.explain_instance(&[0.0; 4]).is_err());
        assert!(ex.explain_instance(&[f64::NAN, 0., 0., 0., 0.]).is_err());
    }
}
