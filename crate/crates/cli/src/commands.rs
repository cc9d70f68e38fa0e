use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::time::Duration;

use geoshapley::bridge::{bridge_connect, BridgeCommand};
use geoshapley::io::{
    read_csv_path, require_finite, write_bootstrap_csv, write_bootstrap_json, write_result_csv,
    write_result_json, DataTable,
};
use geoshapley::postprocess::significance_mask;
use geoshapley::validation::{
    background_variance as variance_experiment, run_validation, BackgroundVarianceConfig, DrawMethod,
    ValidationConfig,
};
use geoshapley::{
    bootstrap_ci, generate_dataset, ols_fit, select_background, BackgroundSpec, BootstrapConfig,
    ExplainOptions, Explainer, GeoShapError, GeoShapleyResult, GeoSpec, Predictor, Result, Trainer,
    TrueModel,
};

use crate::{BackgroundVarianceArgs, BootstrapArgs, ExplainArgs, InputArgs, SimulateArgs, ValidateArgs};

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| GeoShapError::Data(format!("cannot write {}: {e}", path.display())))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(io::stdout().lock()),
    })
}

struct Loaded {
    features: DataTable,
    y: Option<Vec<f64>>,
    spec: GeoSpec,
}

fn load(args: &InputArgs) -> Result<Loaded> {
    let table = read_csv_path(&args.input)?;
    for col in &args.location_cols {
        table.column_index(col)?;
    }
    let (features, y) = match &args.target {
        Some(t) => {
            if args.location_cols.contains(t) {
                return Err(GeoShapError::Config(format!("target '{t}' is also a location column")));
            }
            (table.without(t)?, Some(table.column(t)?))
        }
        None => (table, None),
    };
    require_finite(&features)?;
    if let Some(y) = &y {
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(GeoShapError::Data(format!("target is missing or not finite on row {}", i + 1)));
        }
    }
    let geo: Vec<&str> = args.location_cols.iter().map(String::as_str).collect();
    let spec = GeoSpec::from_names(features.names.clone(), &geo)?;
    Ok(Loaded { features, y, spec })
}

fn build_predictor(args: &InputArgs, data: &Loaded) -> Result<Box<dyn Predictor>> {
    let arity = data.features.names.len();
    match args.predictor.as_str() {
        "builtin:ols" => {
            let y = data
                .y
                .as_ref()
                .ok_or_else(|| GeoShapError::Config("builtin:ols needs --target to fit".into()))?;
            Ok(Box::new(ols_fit(data.features.data.view(), y)?))
        }
        "builtin:truemodel" => {
            if arity != 6 {
                return Err(GeoShapError::Config(format!(
                    "builtin:truemodel takes 6 inputs (u, v, X1..X4), the input has {arity} model columns"
                )));
            }
            Ok(Box::new(TrueModel))
        }
        other => match other.strip_prefix("cmd:") {
            Some(cmd) if !cmd.trim().is_empty() => {
                if !(args.timeout_secs > 0.0 && args.timeout_secs.is_finite()) {
                    return Err(GeoShapError::Config("--timeout-secs must be positive".into()));
                }
                let timeout = Duration::from_secs_f64(args.timeout_secs);
                Ok(Box::new(bridge_connect(&BridgeCommand::shell(cmd), &data.features.names, timeout)?))
            }
            _ => Err(GeoShapError::Config(format!(
                "unknown predictor '{other}'; use builtin:ols, builtin:truemodel or cmd:\"...\""
            ))),
        },
    }
}

pub fn explain(args: &ExplainArgs) -> Result<()> {
    let data = load(&args.input)?;
    let bg_spec: BackgroundSpec = args.input.background.parse()?;
    let predictor = build_predictor(&args.input, &data)?;
    let background = select_background(data.features.data.view(), &bg_spec)?;
    let explainer = Explainer::new(predictor.as_ref(), data.spec.clone(), background)?;
    let options = ExplainOptions {
        workers: args.common.workers,
        seed: args.common.seed,
        skip_failures: args.skip_failures,
        ..Default::default()
    };
    let result = explainer.explain_batch(data.features.data.view(), &options)?;
    write_result_json(&result, create(&args.out_json)?)?;
    write_result_csv(&result, create(&args.out_csv)?)?;
    if !result.skipped.is_empty() {
        eprintln!("geoshap: {} instance(s) skipped", result.skipped.len());
    }
    Ok(())
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let data = generate_dataset(args.seed, args.noise_sd, args.n)?;
    data.write_csv(output(args.out.as_deref())?)
}

fn fidelity_line(out: &mut dyn Write, name: &str, f: &geoshapley::Fidelity) -> io::Result<()> {
    writeln!(out, "{name:<24} {:>10.6} {:>10.6} {:>6}", f.r2, f.rmse, f.n)
}

pub fn validate(args: &ValidateArgs) -> Result<()> {
    let config = ValidationConfig {
        seed: args.common.seed,
        noise_sd: args.noise_sd,
        n: args.n,
        eval: args.eval,
        background: args.background.parse()?,
        workers: args.common.workers,
    };
    let run = run_validation(&config)?;
    let rep = &run.report;
    if let Some(p) = &args.out_json {
        let mut w = create(p)?;
        serde_json::to_writer_pretty(&mut w, rep)?;
        writeln!(w)?;
        w.flush()?;
    }
    if let Some(p) = &args.out_result {
        write_result_json(&run.result, create(p)?)?;
    }
    let mut out = io::stdout().lock();
    writeln!(
        out,
        "seed {}  cells {}  explained {}  background {}  true R2 {:.4}",
        rep.seed, rep.n_data, rep.n_explained, rep.background, rep.true_r2
    )?;
    writeln!(out, "{:<24} {:>10} {:>10} {:>6}", "component", "r2", "rmse", "n")?;
    fidelity_line(&mut out, "intrinsic (centered)", &rep.intrinsic)?;
    fidelity_line(&mut out, "beta1", &rep.beta1)?;
    fidelity_line(&mut out, "beta2", &rep.beta2)?;
    fidelity_line(&mut out, "beta1 vs beta2 (control)", &rep.beta1_vs_beta2)?;
    writeln!(out, "{:<24} {:>10.6}", "f3 slope", rep.f3_slope)?;
    writeln!(out, "{:<24} {:>10.6}", "f4 quadratic coef", rep.f4_quadratic)?;
    writeln!(out, "{:<24} {:>10.1e}", "max relative residual", rep.max_relative_residual)?;
    let ratios: Vec<String> = rep
        .interaction_study
        .by_q
        .iter()
        .map(|s| format!("q={} {:.6}", s.q, s.ratio))
        .collect();
    writeln!(out, "interaction WLS/oracle ratio: {}", ratios.join(", "))?;
    Ok(())
}

fn mask_column(point: &[f64], lo: &[f64], hi: &[f64]) -> Result<Vec<f64>> {
    let sig = significance_mask(point, lo, hi)?;
    Ok(point.iter().zip(sig).map(|(&v, s)| if s { v } else { f64::NAN }).collect())
}

fn column(m: &[Vec<f64>], j: usize) -> Vec<f64> {
    m.iter().map(|r| r[j]).collect()
}

fn set_column(m: &mut [Vec<f64>], j: usize, values: &[f64]) {
    for (row, v) in m.iter_mut().zip(values) {
        row[j] = *v;
    }
}

pub fn bootstrap(args: &BootstrapArgs) -> Result<()> {
    let trainer = Trainer::from_predictor_spec(&args.input.predictor)?;
    let data = load(&args.input)?;
    let y = data
        .y
        .as_ref()
        .ok_or_else(|| GeoShapError::Config("bootstrap needs --target".into()))?;
    let bg_spec: BackgroundSpec = args.input.background.parse()?;
    let x = data.features.data.view();
    let config = BootstrapConfig {
        replicates: args.replicates,
        alpha: args.alpha,
        seed: args.common.seed,
        workers: args.common.workers,
    };
    let ci = bootstrap_ci(x, y, x, trainer, &data.spec, &bg_spec, &config)?;

    let model = trainer.fit(x, y)?;
    let background = select_background(x, &bg_spec)?;
    let options = ExplainOptions {
        workers: args.common.workers,
        seed: args.common.seed,
        ..Default::default()
    };
    let point = Explainer::new(model.as_ref(), data.spec.clone(), background)?.explain_batch(x, &options)?;
    let masked = masked_result(&point, &ci)?;

    write_bootstrap_csv(&ci, create(&args.out_ci)?)?;
    write_result_csv(&masked, create(&args.out_masked)?)?;
    if let Some(p) = &args.out_json {
        write_bootstrap_json(&ci, create(p)?)?;
    }
    Ok(())
}

fn masked_result(point: &GeoShapleyResult, ci: &geoshapley::BootstrapResult) -> Result<GeoShapleyResult> {
    let mut masked = point.clone();
    masked.phi_geo = mask_column(&point.phi_geo, &ci.phi_geo_lo, &ci.phi_geo_hi)?;
    for j in 0..point.n_features() {
        let m = mask_column(&point.main_column(j), &column(&ci.phi_main_lo, j), &column(&ci.phi_main_hi, j))?;
        set_column(&mut masked.phi_main, j, &m);
        let m = mask_column(
            &point.interaction_column(j),
            &column(&ci.phi_geo_interaction_lo, j),
            &column(&ci.phi_geo_interaction_hi, j),
        )?;
        set_column(&mut masked.phi_geo_interaction, j, &m);
    }
    Ok(masked)
}

pub fn background_variance(args: &BackgroundVarianceArgs) -> Result<()> {
    let method = match args.method.as_str() {
        "sample" => DrawMethod::Sample,
        "kmeans" => DrawMethod::KMeans,
        other => return Err(GeoShapError::Config(format!("unknown method '{other}'"))),
    };
    if args.sizes.is_empty() {
        return Err(GeoShapError::Config("no background sizes given".into()));
    }
    let rows = variance_experiment(&BackgroundVarianceConfig {
        seed: args.common.seed,
        sizes: args.sizes.clone(),
        replicates: args.replicates,
        eval: args.eval,
        method,
        workers: args.common.workers,
    })?;
    let mut w = csv::Writer::from_writer(output(args.out.as_deref())?);
    w.write_record(["k", "mean_variance", "max_variance"])?;
    for r in rows {
        w.write_record([r.k.to_string(), r.mean_variance.to_string(), r.max_variance.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
