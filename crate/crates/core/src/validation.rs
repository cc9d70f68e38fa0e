//! Ground-truth validation on the simulated grid, the WLS/oracle interaction
//! comparison and the background-size variance experiment.

use ndarray::Axis;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::background::{select_background, BackgroundSpec};
use crate::coalition::{enumerate_coalitions, DesignSystem, GeoSpec, Layout};
use crate::error::{GeoShapError, Result};
use crate::explainer::{ExplainOptions, Explainer, GeoShapleyResult};
use crate::models::TrueModel;
use crate::oracle::{exact_geo_interaction, ValueFunction};
use crate::postprocess::{
    intrinsic_effect, linear_fit, rank_features, svc_recover, RankEntry, DEFAULT_REL_TOL,
};
use crate::simulation::{generate_dataset, N_CELLS, surface_fidelity, Fidelity, SimulatedDataset};
use crate::solver::ConstrainedWls;

/// Location columns of the simulated data are `u`, `v`.
pub fn simulation_spec() -> GeoSpec {
    GeoSpec::from_names(SimulatedDataset::feature_names(), &["u", "v"]).expect("fixed schema")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationConfig {
    pub seed: u64,
    pub noise_sd: f64,
    /// Dataset size; `None` is the full 2,500-cell grid.
    pub n: Option<usize>,
    /// Number of cells to explain; `None` explains every row. The explained
    /// cells are the same ones `generate_dataset(seed, _, Some(m))` draws.
    pub eval: Option<usize>,
    pub background: BackgroundSpec,
    pub workers: usize,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            noise_sd: 1.0,
            n: None,
            eval: None,
            background: BackgroundSpec::KMeans { k: 50, seed: 0 },
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub q: usize,
    pub feature: usize,
    pub coefficient: f64,
    pub wls: f64,
    pub oracle: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioSummary {
    pub q: usize,
    pub ratio: f64,
    /// Largest absolute deviation from `ratio` within this `q`.
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionStudy {
    pub rows: Vec<RatioRow>,
    pub by_q: Vec<RatioSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub seed: u64,
    pub noise_sd: f64,
    pub n_data: usize,
    pub n_explained: usize,
    pub background: String,
    pub true_r2: f64,
    pub base_value: f64,
    pub max_relative_residual: f64,
    /// Intrinsic effect against `f0`, both mean-centered.
    pub intrinsic: Fidelity,
    pub beta1: Fidelity,
    pub beta2: Fidelity,
    /// Negative control: recovered X1 coefficients against the X2 surface.
    pub beta1_vs_beta2: Fidelity,
    pub f3_slope: f64,
    pub f4_quadratic: f64,
    pub ranking: Vec<RankEntry>,
    pub interaction_study: InteractionStudy,
}

/// Output of [`run_validation`]: the report plus the underlying data.
#[derive(Debug, Clone)]
pub struct ValidationRun {
    pub report: ValidationReport,
    pub dataset: SimulatedDataset,
    pub explained_rows: Vec<usize>,
    pub result: GeoShapleyResult,
}

fn centered(xs: &[f64]) -> Vec<f64> {
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| x - mean).collect()
}

/// Rows of the dataset to explain.
fn eval_rows(data: &SimulatedDataset, seed: u64, eval: Option<usize>) -> Result<Vec<usize>> {
    match eval {
        None => Ok((0..data.len()).collect()),
        Some(_) if data.len() != N_CELLS => Err(GeoShapError::Config(
            "an evaluation subset can only be drawn from the full grid".into(),
        )),
        Some(m) => {
            let cells = generate_dataset(seed, 0.0, Some(m))?.cells;
            cells
                .iter()
                .map(|c| {
                    data.cells.binary_search(c).map_err(|_| {
                        GeoShapError::Config(format!("evaluation cell {c} is not in the dataset"))
                    })
                })
                .collect()
        }
    }
}

/// Explains the simulated data with the true model and compares every
/// recovered component with its known surface.
pub fn run_validation(config: &ValidationConfig) -> Result<ValidationRun> {
    let data = generate_dataset(config.seed, config.noise_sd, config.n)?;
    let rows = eval_rows(&data, config.seed, config.eval)?;
    let x = data.features();
    let spec = simulation_spec();
    let background = select_background(x.view(), &config.background)?;
    let model = TrueModel;
    let explainer = Explainer::new(&model, spec.clone(), background.clone())?;
    let xe = x.select(Axis(0), &rows);
    let options = ExplainOptions {
        workers: config.workers,
        seed: config.seed,
        ..Default::default()
    };
    let mut result = explainer.explain_batch(xe.view(), &options)?;
    result.metadata.predictor = "builtin:truemodel".into();

    let pick = |v: &[f64]| rows.iter().map(|&r| v[r]).collect::<Vec<f64>>();
    let all = vec![true; rows.len()];
    let intrinsic = surface_fidelity(
        &centered(&intrinsic_effect(&result)),
        &centered(&pick(&data.f0)),
        &all,
    )?;
    let svc1 = svc_recover(&result, xe.view(), 0, &spec, &background, DEFAULT_REL_TOL)?;
    let svc2 = svc_recover(&result, xe.view(), 1, &spec, &background, DEFAULT_REL_TOL)?;
    let beta1 = surface_fidelity(&svc1.beta_hat, &pick(&data.beta1), &svc1.defined)?;
    let beta2 = surface_fidelity(&svc2.beta_hat, &pick(&data.beta2), &svc2.defined)?;
    let beta1_vs_beta2 = surface_fidelity(&svc1.beta_hat, &pick(&data.beta2), &svc1.defined)?;

    let x3 = xe.column(4).to_vec();
    let (f3_slope, _) = linear_fit(&x3, &result.main_column(2))?;
    let bg_sq = background.weighted_average(&background.rows().column(5).mapv(|v| v * v).to_vec());
    let x4sq: Vec<f64> = xe.column(5).iter().map(|v| v * v - bg_sq).collect();
    let (f4_quadratic, _) = linear_fit(&x4sq, &result.main_column(3))?;

    let max_relative_residual = result
        .reconstruction_residual
        .iter()
        .zip(&result.full_value)
        .map(|(r, f)| r.abs() / f.abs().max(1.0))
        .fold(0.0, f64::max);

    let report = ValidationReport {
        seed: config.seed,
        noise_sd: config.noise_sd,
        n_data: data.len(),
        n_explained: rows.len(),
        background: config.background.to_string(),
        true_r2: data.true_r2(),
        base_value: result.base_value,
        max_relative_residual,
        intrinsic,
        beta1,
        beta2,
        beta1_vs_beta2,
        f3_slope,
        f4_quadratic,
        ranking: rank_features(&result),
        interaction_study: interaction_ratio_study(&[3, 4, 5, 6], &[0.5, 1.0, 2.0, -3.0])?,
    };
    Ok(ValidationRun {
        report,
        dataset: data,
        explained_rows: rows,
        result,
    })
}

/// Compares the WLS interaction estimate with the oracle value on bilinear
/// games `v(S) = a * [GEO in S] * [j in S]` for each `q`, feature `j` and
/// coefficient `a`.
pub fn interaction_ratio_study(qs: &[usize], coefficients: &[f64]) -> Result<InteractionStudy> {
    let mut rows = Vec::new();
    let mut by_q = Vec::new();
    for &q in qs {
        if q < 2 {
            return Err(GeoShapError::Config("interaction study needs q >= 2".into()));
        }
        let design = DesignSystem::new(enumerate_coalitions(q)?, Layout::GeoShapley)?;
        let wls = ConstrainedWls::new(&design)?;
        let k = q - 1;
        let first = rows.len();
        for j in 0..k {
            for &a in coefficients {
                let game = ValueFunction::from_fn(q, |s| {
                    if s.has_geo() && s.contains(j) {
                        a
                    } else {
                        0.0
                    }
                })?;
                let w = wls.solve(game.values())?.phi[k + j];
                let o = exact_geo_interaction(&game, j)?;
                rows.push(RatioRow {
                    q,
                    feature: j,
                    coefficient: a,
                    wls: w,
                    oracle: o,
                    ratio: w / o,
                });
            }
        }
        let group = &rows[first..];
        let ratio = group.iter().map(|r| r.ratio).sum::<f64>() / group.len() as f64;
        let spread = group.iter().map(|r| (r.ratio - ratio).abs()).fold(0.0, f64::max);
        by_q.push(RatioSummary { q, ratio, spread });
    }
    Ok(InteractionStudy { rows, by_q })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DrawMethod {
    Sample,
    KMeans,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundVarianceConfig {
    pub seed: u64,
    pub sizes: Vec<usize>,
    pub replicates: usize,
    /// Cells explained in every replicate.
    pub eval: usize,
    pub method: DrawMethod,
    pub workers: usize,
}

impl Default for BackgroundVarianceConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            sizes: vec![5, 10, 20, 50, 100],
            replicates: 20,
            eval: 100,
            method: DrawMethod::Sample,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub k: usize,
    /// Mean over instances of the across-replicate variance of phi_GEO.
    pub mean_variance: f64,
    pub max_variance: f64,
}

/// Sampling variance of phi_GEO as a function of background size on the
/// simulated grid with the true model.
pub fn background_variance(config: &BackgroundVarianceConfig) -> Result<Vec<VarianceRow>> {
    if config.replicates < 2 {
        return Err(GeoShapError::Config("need at least 2 replicates".into()));
    }
    let data = generate_dataset(config.seed, 0.0, None)?;
    let x = data.features();
    let rows = eval_rows(&data, config.seed, Some(config.eval))?;
    let xe = x.select(Axis(0), &rows);
    let spec = simulation_spec();
    let mut master = ChaCha8Rng::seed_from_u64(config.seed);
    let seeds: Vec<u64> = (0..config.replicates).map(|_| master.random()).collect();
    let options = ExplainOptions {
        workers: config.workers,
        ..Default::default()
    };
    let mut out = Vec::with_capacity(config.sizes.len());
    for &k in &config.sizes {
        let mut draws: Vec<Vec<f64>> = Vec::with_capacity(config.replicates);
        for &s in &seeds {
            let bspec = match config.method {
                DrawMethod::Sample => BackgroundSpec::Sample { k, seed: s },
                DrawMethod::KMeans => BackgroundSpec::KMeans { k, seed: s },
            };
            let bg = select_background(x.view(), &bspec)?;
            let res = Explainer::new(&TrueModel, spec.clone(), bg)?.explain_batch(xe.view(), &options)?;
            draws.push(res.phi_geo);
        }
        let r = config.replicates as f64;
        let variances: Vec<f64> = (0..rows.len())
            .map(|i| {
                let mean = draws.iter().map(|d| d[i]).sum::<f64>() / r;
                draws.iter().map(|d| (d[i] - mean).powi(2)).sum::<f64>() / (r - 1.0)
            })
            .collect();
        out.push(VarianceRow {
            k,
            mean_variance: variances.iter().sum::<f64>() / variances.len() as f64,
            max_variance: variances.iter().copied().fold(0.0, f64::max),
        });
    }
    Ok(out)
}
