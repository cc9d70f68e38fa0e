//! Plot data exports and minimal static SVG renderings.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, Write};

use geoshapley::io::{fmt_float, read_result_json};
use geoshapley::postprocess::{effect_values, intrinsic_effect, rank_features, EffectKind, RankEntry};
use geoshapley::{GeoShapError, GeoShapleyResult, Result};

use crate::commands::create;
use crate::PlotArgs;

const WIDTH: f64 = 720.0;
const MARGIN_LEFT: f64 = 150.0;
const MARGIN: f64 = 30.0;

pub fn run(args: &PlotArgs) -> Result<()> {
    let file = File::open(&args.result)
        .map_err(|e| GeoShapError::Data(format!("cannot open {}: {e}", args.result.display())))?;
    let result = read_result_json(BufReader::new(file))?;
    match args.kind.as_str() {
        "summary" => summary(&result, args),
        "surface" => surface(&result, args),
        "dependence" => dependence(&result, args),
        other => Err(GeoShapError::Config(format!(
            "unknown plot kind '{other}'; use summary, surface or dependence"
        ))),
    }
}

/// Column of the instance matrix holding non-location feature `j`.
fn feature_column(result: &GeoShapleyResult, j: usize) -> usize {
    let name = &result.metadata.feature_names[j];
    result.metadata.column_names.iter().position(|c| c == name).expect("feature in columns")
}

fn feature_values(result: &GeoShapleyResult, entry: &RankEntry) -> Vec<f64> {
    match entry.feature {
        Some(j) => {
            let c = feature_column(result, j);
            result.instances.iter().map(|r| r[c]).collect()
        }
        None => vec![f64::NAN; result.len()],
    }
}

fn finite_range(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    values.filter(|v| v.is_finite()).fold(None, |acc, v| match acc {
        None => Some((v, v)),
        Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
    })
}

/// Blue to red through white; `t` in [0, 1].
fn color(t: f64) -> String {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.5 };
    let (r, g, b) = if t < 0.5 {
        let s = t / 0.5;
        (40.0 + 215.0 * s, 90.0 + 165.0 * s, 220.0 + 35.0 * s)
    } else {
        let s = (t - 0.5) / 0.5;
        (255.0 - 35.0 * s, 255.0 - 205.0 * s, 255.0 - 215.0 * s)
    };
    format!("#{:02x}{:02x}{:02x}", r as u8, g as u8, b as u8)
}

fn svg_open(height: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"11\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn write_svg(path: &std::path::Path, body: String) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(body.as_bytes())?;
    w.write_all(b"</svg>\n")?;
    w.flush()?;
    Ok(())
}

fn summary(result: &GeoShapleyResult, args: &PlotArgs) -> Result<()> {
    let ranked = rank_features(result);
    let mut w = csv::Writer::from_writer(create(&args.out_csv)?);
    w.write_record(["label", "rank", "mean_abs", "instance", "phi", "feature_value"])?;
    let columns: Vec<(Vec<f64>, Vec<f64>)> = ranked
        .iter()
        .map(|e| (effect_values(result, e), feature_values(result, e)))
        .collect();
    for (rank, (entry, (phi, fv))) in ranked.iter().zip(&columns).enumerate() {
        for i in 0..result.len() {
            w.write_record([
                entry.label.clone(),
                (rank + 1).to_string(),
                fmt_float(entry.mean_abs),
                i.to_string(),
                fmt_float(phi[i]),
                fmt_float(fv[i]),
            ])?;
        }
    }
    w.flush()?;

    if let Some(path) = &args.out_svg {
        let row_h = 28.0;
        let height = 2.0 * MARGIN + row_h * ranked.len() as f64 + 20.0;
        let (lo, hi) = finite_range(columns.iter().flat_map(|c| c.0.iter().copied())).unwrap_or((-1.0, 1.0));
        let span = (hi - lo).max(1e-12);
        let x_of = |v: f64| MARGIN_LEFT + (v - lo) / span * (WIDTH - MARGIN_LEFT - MARGIN);
        let mut svg = svg_open(height);
        let zero = x_of(0.0);
        if (lo..=hi).contains(&0.0) {
            let _ = writeln!(
                svg,
                "<line x1=\"{zero:.1}\" y1=\"{MARGIN}\" x2=\"{zero:.1}\" y2=\"{:.1}\" stroke=\"#999\"/>",
                height - MARGIN - 20.0
            );
        }
        for (rank, (entry, (phi, fv))) in ranked.iter().zip(&columns).enumerate() {
            let y = MARGIN + row_h * (rank as f64 + 0.5);
            let _ = writeln!(
                svg,
                "<text class=\"label\" x=\"{:.1}\" y=\"{y:.1}\" text-anchor=\"end\" dominant-baseline=\"middle\">{}</text>",
                MARGIN_LEFT - 8.0,
                escape(&entry.label)
            );
            let range = finite_range(fv.iter().copied());
            for (i, (&p, &f)) in phi.iter().zip(fv).enumerate() {
                if !p.is_finite() {
                    continue;
                }
                let t = match (entry.kind, range) {
                    (EffectKind::Geo, _) | (_, None) => 0.5,
                    (_, Some((a, b))) => (f - a) / (b - a).max(1e-12),
                };
                // deterministic jitter within the row
                let jitter = ((i * 7919) % 17) as f64 / 16.0 - 0.5;
                let _ = writeln!(
                    svg,
                    "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2\" fill=\"{}\" fill-opacity=\"0.8\"/>",
                    x_of(p),
                    y + jitter * row_h * 0.6,
                    color(t)
                );
            }
        }
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">GeoShapley value</text>",
            (MARGIN_LEFT + WIDTH - MARGIN) / 2.0,
            height - MARGIN / 2.0
        );
        write_svg(path, svg)?;
    }
    Ok(())
}

fn surface(result: &GeoShapleyResult, args: &PlotArgs) -> Result<()> {
    let geo = &result.metadata.geo_indices;
    if geo.len() < 2 {
        return Err(GeoShapError::Config("surface plots need two location columns".into()));
    }
    let values = match args.value.as_str() {
        "geo" => result.phi_geo.clone(),
        "intrinsic" => intrinsic_effect(result),
        name => {
            let j = result
                .metadata
                .feature_names
                .iter()
                .position(|f| f == name)
                .ok_or_else(|| GeoShapError::Config(format!("unknown surface value '{name}'")))?;
            result.interaction_column(j)
        }
    };
    let (cu, cv) = (geo[0], geo[1]);
    let mut w = csv::Writer::from_writer(create(&args.out_csv)?);
    w.write_record([
        result.metadata.column_names[cu].as_str(),
        result.metadata.column_names[cv].as_str(),
        "value",
    ])?;
    for (row, v) in result.instances.iter().zip(&values) {
        w.write_record([fmt_float(row[cu]), fmt_float(row[cv]), fmt_float(*v)])?;
    }
    w.flush()?;

    if let Some(path) = &args.out_svg {
        let (ulo, uhi) = finite_range(result.instances.iter().map(|r| r[cu])).unwrap_or((0.0, 1.0));
        let (vlo, vhi) = finite_range(result.instances.iter().map(|r| r[cv])).unwrap_or((0.0, 1.0));
        let vmax = values.iter().filter(|v| v.is_finite()).fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
        let side = WIDTH - 2.0 * MARGIN;
        let mut svg = svg_open(WIDTH);
        for (row, v) in result.instances.iter().zip(&values) {
            if !v.is_finite() {
                continue;
            }
            let x = MARGIN + (row[cu] - ulo) / (uhi - ulo).max(1e-12) * side;
            let y = WIDTH - MARGIN - (row[cv] - vlo) / (vhi - vlo).max(1e-12) * side;
            let _ = writeln!(
                svg,
                "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"4\" fill=\"{}\"/>",
                color(0.5 + 0.5 * v / vmax)
            );
        }
        write_svg(path, svg)?;
    }
    Ok(())
}

fn dependence(result: &GeoShapleyResult, args: &PlotArgs) -> Result<()> {
    let name = args
        .feature
        .as_deref()
        .ok_or_else(|| GeoShapError::Config("dependence plots need --feature".into()))?;
    let j = result
        .metadata
        .feature_names
        .iter()
        .position(|f| f == name)
        .ok_or_else(|| GeoShapError::Config(format!("'{name}' is not a non-location feature")))?;
    let c = feature_column(result, j);
    let xs: Vec<f64> = result.instances.iter().map(|r| r[c]).collect();
    let main = result.main_column(j);
    let inter = result.interaction_column(j);
    let mut w = csv::Writer::from_writer(create(&args.out_csv)?);
    w.write_record(["feature_value", "phi_main", "phi_geo_interaction", "phi_combined"])?;
    for i in 0..xs.len() {
        w.write_record([
            fmt_float(xs[i]),
            fmt_float(main[i]),
            fmt_float(inter[i]),
            fmt_float(main[i] + inter[i]),
        ])?;
    }
    w.flush()?;

    if let Some(path) = &args.out_svg {
        let height = WIDTH * 0.75;
        let (xlo, xhi) = finite_range(xs.iter().copied()).unwrap_or((0.0, 1.0));
        let (ylo, yhi) = finite_range(main.iter().chain(&inter).copied().chain(main.iter().zip(&inter).map(|(a, b)| a + b)))
            .unwrap_or((-1.0, 1.0));
        let px = |x: f64| MARGIN_LEFT + (x - xlo) / (xhi - xlo).max(1e-12) * (WIDTH - MARGIN_LEFT - MARGIN);
        let py = |y: f64| height - MARGIN - (y - ylo) / (yhi - ylo).max(1e-12) * (height - 2.0 * MARGIN);
        let mut svg = svg_open(height);
        for i in 0..xs.len() {
            if !(main[i].is_finite() && inter[i].is_finite()) {
                continue;
            }
            let _ = writeln!(
                svg,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2\" fill=\"#999999\"/>",
                px(xs[i]),
                py(main[i] + inter[i])
            );
            let _ = writeln!(
                svg,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2\" fill=\"#2060c0\"/>",
                px(xs[i]),
                py(main[i])
            );
        }
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
            (MARGIN_LEFT + WIDTH - MARGIN) / 2.0,
            height - 8.0,
            escape(name)
        );
        write_svg(path, svg)?;
    }
    Ok(())
}
