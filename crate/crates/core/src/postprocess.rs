//! Interpretable quantities derived from raw GeoShapley values: local
//! coefficients, the intrinsic location surface, percent effects for
//! log10 targets, rankings and bootstrap intervals.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::background::{select_background, BackgroundSpec};
use crate::coalition::{BackgroundData, GeoSpec};
use crate::error::{GeoShapError, Result};
use crate::explainer::{ExplainOptions, Explainer, GeoShapleyResult};
use crate::floats;
use crate::models::{ols_fit, Predictor};

pub const DEFAULT_REL_TOL: f64 = 0.1;
pub const GEO_LABEL: &str = "GEO";

/// Local coefficients of one feature; undefined entries are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct SvcSurface {
    pub feature: usize,
    pub name: String,
    pub beta_hat: Vec<f64>,
    pub defined: Vec<bool>,
}

/// `(phi_j + phi_GEO,j) / (x_j - E[x_j])` per instance, with `E` the
/// background-weighted mean. Entries whose centered value is within
/// `rel_tol` standard deviations of zero are left undefined.
pub fn svc_recover(
    result: &GeoShapleyResult,
    x: ArrayView2<'_, f64>,
    j: usize,
    spec: &GeoSpec,
    background: &BackgroundData,
    rel_tol: f64,
) -> Result<SvcSurface> {
    if j >= spec.n_features() {
        return Err(GeoShapError::Config(format!(
            "feature {j} is not a non-location feature"
        )));
    }
    if x.nrows() != result.len() || x.ncols() != spec.p() {
        return Err(GeoShapError::Dimension {
            what: "instance rows",
            expected: result.len(),
            got: x.nrows(),
        });
    }
    let col = spec.feature_indices()[j];
    let column = x.column(col);
    let n = column.len() as f64;
    let mean = column.sum() / n;
    let sd = (column.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    if sd.is_nan() || sd == 0.0 {
        return Err(GeoShapError::Numerical(format!(
            "feature '{}' has zero variance",
            spec.column_names()[col]
        )));
    }
    let expected = background.weighted_mean()[col];
    let mut beta_hat = Vec::with_capacity(result.len());
    let mut defined = Vec::with_capacity(result.len());
    for (i, xv) in column.iter().enumerate() {
        let centered = xv - expected;
        let num = result.phi_main[i][j] + result.phi_geo_interaction[i][j];
        if centered.abs() < rel_tol * sd || !num.is_finite() {
            beta_hat.push(f64::NAN);
            defined.push(false);
        } else {
            beta_hat.push(num / centered);
            defined.push(true);
        }
    }
    Ok(SvcSurface {
        feature: j,
        name: spec.feature_names()[j].clone(),
        beta_hat,
        defined,
    })
}

/// `phi_0 + phi_GEO` per instance.
pub fn intrinsic_effect(result: &GeoShapleyResult) -> Vec<f64> {
    result.phi_geo.iter().map(|g| result.base_value + g).collect()
}

/// Percent change implied by an additive effect on a base-10 log target.
pub fn log10_to_percent(phi: f64) -> f64 {
    (10f64.powf(phi) - 1.0) * 100.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EffectKind {
    Main,
    Interaction,
    Geo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub label: String,
    pub kind: EffectKind,
    /// Feature index for main and interaction entries.
    pub feature: Option<usize>,
    pub mean_abs: f64,
}

pub fn interaction_label(name: &str) -> String {
    format!("{name} x {GEO_LABEL}")
}

fn mean_abs(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values
        .filter(|v| v.is_finite())
        .fold((0.0, 0usize), |(s, c), v| (s + v.abs(), c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Effects ordered by descending mean absolute value. Ties keep the design
/// column order: mains, interactions, then GEO.
pub fn rank_features(result: &GeoShapleyResult) -> Vec<RankEntry> {
    let names = &result.metadata.feature_names;
    let mut entries = Vec::with_capacity(2 * names.len() + 1);
    for (j, name) in names.iter().enumerate() {
        entries.push(RankEntry {
            label: name.clone(),
            kind: EffectKind::Main,
            feature: Some(j),
            mean_abs: mean_abs(result.phi_main.iter().map(|r| r[j])),
        });
    }
    for (j, name) in names.iter().enumerate() {
        entries.push(RankEntry {
            label: interaction_label(name),
            kind: EffectKind::Interaction,
            feature: Some(j),
            mean_abs: mean_abs(result.phi_geo_interaction.iter().map(|r| r[j])),
        });
    }
    entries.push(RankEntry {
        label: GEO_LABEL.into(),
        kind: EffectKind::Geo,
        feature: None,
        mean_abs: mean_abs(result.phi_geo.iter().copied()),
    });
    entries.sort_by(|a, b| b.mean_abs.total_cmp(&a.mean_abs));
    entries
}

/// Values of one ranked effect across instances.
pub fn effect_values(result: &GeoShapleyResult, entry: &RankEntry) -> Vec<f64> {
    match (entry.kind, entry.feature) {
        (EffectKind::Main, Some(j)) => result.main_column(j),
        (EffectKind::Interaction, Some(j)) => result.interaction_column(j),
        _ => result.phi_geo.clone(),
    }
}

/// Sample quantile with linear interpolation between order statistics
/// (Hyndman-Fan type 7). `sorted` must be ascending.
pub fn percentile_type7(sorted: &[f64], prob: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * prob.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Model families that can be refitted on resampled rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trainer {
    Ols,
}

impl Trainer {
    /// Resolves a predictor spec string; only built-in fitted models qualify.
    pub fn from_predictor_spec(spec: &str) -> Result<Self> {
        match spec {
            "builtin:ols" => Ok(Trainer::Ols),
            other => Err(GeoShapError::Config(format!(
                "predictor '{other}' cannot be refitted; bootstrap intervals need a trainer such as builtin:ols"
            ))),
        }
    }

    pub fn fit(&self, x: ArrayView2<'_, f64>, y: &[f64]) -> Result<Box<dyn Predictor>> {
        match self {
            Trainer::Ols => Ok(Box::new(ols_fit(x, y)?)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub replicates: usize,
    pub alpha: f64,
    pub replicate_seeds: Vec<u64>,
    pub base_value_lo: f64,
    pub base_value_hi: f64,
    #[serde(with = "floats::vec")]
    pub phi_geo_lo: Vec<f64>,
    #[serde(with = "floats::vec")]
    pub phi_geo_hi: Vec<f64>,
    #[serde(with = "floats::matrix")]
    pub phi_main_lo: Vec<Vec<f64>>,
    #[serde(with = "floats::matrix")]
    pub phi_main_hi: Vec<Vec<f64>>,
    #[serde(with = "floats::matrix")]
    pub phi_geo_interaction_lo: Vec<Vec<f64>>,
    #[serde(with = "floats::matrix")]
    pub phi_geo_interaction_hi: Vec<Vec<f64>>,
    pub feature_names: Vec<String>,
}

pub const MIN_REPLICATES: usize = 20;

#[derive(Debug, Clone, Copy)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub alpha: f64,
    pub seed: u64,
    pub workers: usize,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            replicates: 100,
            alpha: 0.05,
            seed: 0,
            workers: 1,
        }
    }
}

/// Percentile intervals from refitting on row resamples of `(x, y)`.
///
/// The evaluation instances and the background (built once from `x`) stay
/// fixed across replicates, so only model-fit variability enters.
pub fn bootstrap_ci(
    x: ArrayView2<'_, f64>,
    y: &[f64],
    eval: ArrayView2<'_, f64>,
    trainer: Trainer,
    spec: &GeoSpec,
    background_spec: &BackgroundSpec,
    config: &BootstrapConfig,
) -> Result<BootstrapResult> {
    if config.replicates < MIN_REPLICATES {
        return Err(GeoShapError::Config(format!(
            "bootstrap needs at least {MIN_REPLICATES} replicates"
        )));
    }
    if !(config.alpha > 0.0 && config.alpha < 1.0) {
        return Err(GeoShapError::Config(format!("alpha {} outside (0, 1)", config.alpha)));
    }
    let n = x.nrows();
    if y.len() != n {
        return Err(GeoShapError::Dimension {
            what: "response length",
            expected: n,
            got: y.len(),
        });
    }
    let background = select_background(x, background_spec)?;
    let mut master = ChaCha8Rng::seed_from_u64(config.seed);
    let seeds: Vec<u64> = (0..config.replicates).map(|_| master.random()).collect();
    let rows: Vec<usize> = (0..n).collect();

    let replicate = |seed: u64| -> Result<GeoShapleyResult> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let idx: Vec<usize> = (0..n).map(|_| *rows.choose(&mut rng).unwrap()).collect();
        let xb = x.select(Axis(0), &idx);
        let yb: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        let model = trainer.fit(xb.view(), &yb)?;
        Explainer::new(model.as_ref(), spec.clone(), background.clone())?
            .explain_batch(eval, &ExplainOptions::default())
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| GeoShapError::Config(format!("thread pool: {e}")))?;
    let results: Vec<GeoShapleyResult> =
        pool.install(|| seeds.par_iter().map(|&s| replicate(s)).collect::<Result<_>>())?;

    let (lo_p, hi_p) = (config.alpha / 2.0, 1.0 - config.alpha / 2.0);
    let bounds = |extract: &dyn Fn(&GeoShapleyResult) -> f64| {
        let mut draws: Vec<f64> = results.iter().map(extract).collect();
        draws.sort_by(f64::total_cmp);
        (percentile_type7(&draws, lo_p), percentile_type7(&draws, hi_p))
    };
    let m = eval.nrows();
    let k = spec.n_features();
    let (base_lo, base_hi) = bounds(&|r| r.base_value);
    let mut out = BootstrapResult {
        replicates: config.replicates,
        alpha: config.alpha,
        replicate_seeds: seeds.clone(),
        base_value_lo: base_lo,
        base_value_hi: base_hi,
        phi_geo_lo: Vec::with_capacity(m),
        phi_geo_hi: Vec::with_capacity(m),
        phi_main_lo: vec![vec![0.0; k]; m],
        phi_main_hi: vec![vec![0.0; k]; m],
        phi_geo_interaction_lo: vec![vec![0.0; k]; m],
        phi_geo_interaction_hi: vec![vec![0.0; k]; m],
        feature_names: spec.feature_names(),
    };
    for i in 0..m {
        let (lo, hi) = bounds(&|r| r.phi_geo[i]);
        out.phi_geo_lo.push(lo);
        out.phi_geo_hi.push(hi);
        for j in 0..k {
            let (lo, hi) = bounds(&|r| r.phi_main[i][j]);
            out.phi_main_lo[i][j] = lo;
            out.phi_main_hi[i][j] = hi;
            let (lo, hi) = bounds(&|r| r.phi_geo_interaction[i][j]);
            out.phi_geo_interaction_lo[i][j] = lo;
            out.phi_geo_interaction_hi[i][j] = hi;
        }
    }
    Ok(out)
}

/// True where the interval excludes zero; an endpoint at zero counts as
/// including it.
pub fn significance_mask(point: &[f64], lower: &[f64], upper: &[f64]) -> Result<Vec<bool>> {
    if lower.len() != point.len() || upper.len() != point.len() {
        return Err(GeoShapError::Dimension {
            what: "interval length",
            expected: point.len(),
            got: lower.len().min(upper.len()),
        });
    }
    Ok(lower.iter().zip(upper).map(|(&l, &u)| l > 0.0 || u < 0.0).collect())
}

/// Least-squares `y = slope * x + intercept`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    let design = Array2::from_shape_fn((x.len(), 1), |(i, _)| x[i]);
    let m = ols_fit(design.view(), y)?;
    Ok((m.slopes()[0], m.intercept()))
}
