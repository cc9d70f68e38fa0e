//! Coalitions over the effective players, the binary design matrix, Shapley
//! kernel weights and background-masked coalition values.
//!
//! Effective players are the `p - g` non-location features (indices
//! `0..q-1`, in column order) plus the joint location player GEO, which
//! always takes the last index `q - 1`.

use ndarray::{Array2, ArrayView2};

use crate::error::{GeoShapError, Result};
use crate::models::Predictor;

/// Hard cap on the number of effective players for exhaustive enumeration.
pub const MAX_PLAYERS: usize = 25;

/// Default cap on rows handed to the predictor in one call.
pub const DEFAULT_MAX_BATCH_ROWS: usize = 65_536;

/// Which feature columns jointly form the location player.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoSpec {
    names: Vec<String>,
    geo: Vec<usize>,
    nongeo: Vec<usize>,
    // effective player index of every input column
    column_player: Vec<usize>,
}

impl GeoSpec {
    pub fn new(names: Vec<String>, geo_indices: Vec<usize>) -> Result<Self> {
        let p = names.len();
        if geo_indices.is_empty() {
            return Err(GeoShapError::Config(
                "at least one location column is required".into(),
            ));
        }
        let mut seen = vec![false; p];
        for &c in &geo_indices {
            if c >= p {
                return Err(GeoShapError::Config(format!(
                    "location column index {c} out of range for {p} columns"
                )));
            }
            if seen[c] {
                return Err(GeoShapError::Config(format!(
                    "location column index {c} listed twice"
                )));
            }
            seen[c] = true;
        }
        if geo_indices.len() >= p {
            return Err(GeoShapError::Config(
                "at least one non-location feature is required".into(),
            ));
        }
        let nongeo: Vec<usize> = (0..p).filter(|c| !seen[*c]).collect();
        let k = nongeo.len();
        let mut column_player = vec![k; p];
        for (j, &c) in nongeo.iter().enumerate() {
            column_player[c] = j;
        }
        Ok(Self {
            names,
            geo: geo_indices,
            nongeo,
            column_player,
        })
    }

    /// Builds a spec from column names, resolving the location columns by name.
    pub fn from_names(names: Vec<String>, geo_names: &[&str]) -> Result<Self> {
        let mut idx = Vec::with_capacity(geo_names.len());
        for g in geo_names {
            match names.iter().position(|n| n == g) {
                Some(i) => idx.push(i),
                None => {
                    return Err(GeoShapError::Config(format!(
                        "location column '{g}' not found"
                    )))
                }
            }
        }
        Self::new(names, idx)
    }

    /// Builds a spec with generated names `x0..x{p-1}`.
    pub fn anonymous(p: usize, geo_indices: Vec<usize>) -> Result<Self> {
        Self::new((0..p).map(|i| format!("x{i}")).collect(), geo_indices)
    }

    /// Total number of input columns.
    pub fn p(&self) -> usize {
        self.names.len()
    }

    /// Number of location columns.
    pub fn g(&self) -> usize {
        self.geo.len()
    }

    /// Effective player count `p - g + 1`.
    pub fn q(&self) -> usize {
        self.nongeo.len() + 1
    }

    /// Number of non-location features.
    pub fn n_features(&self) -> usize {
        self.nongeo.len()
    }

    pub fn column_names(&self) -> &[String] {
        &self.names
    }

    pub fn geo_indices(&self) -> &[usize] {
        &self.geo
    }

    pub fn feature_indices(&self) -> &[usize] {
        &self.nongeo
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.nongeo.iter().map(|&c| self.names[c].clone()).collect()
    }

    pub fn geo_names(&self) -> Vec<String> {
        self.geo.iter().map(|&c| self.names[c].clone()).collect()
    }

    /// Effective player owning input column `c`.
    pub fn player_of_column(&self, c: usize) -> usize {
        self.column_player[c]
    }
}

/// A subset of the effective players, bit `i` set when player `i` is present.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Coalition {
    bits: u32,
    q: u8,
}

impl Coalition {
    pub fn new(bits: u32, q: usize) -> Self {
        debug_assert!(q <= MAX_PLAYERS && (q == 32 || bits >> q == 0));
        Self { bits, q: q as u8 }
    }

    pub fn empty(q: usize) -> Self {
        Self::new(0, q)
    }

    pub fn full(q: usize) -> Self {
        Self::new(((1u64 << q) - 1) as u32, q)
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn players(&self) -> usize {
        self.q as usize
    }

    pub fn size(&self) -> usize {
        self.bits.count_ones() as usize
    }

    pub fn contains(&self, player: usize) -> bool {
        self.bits >> player & 1 == 1
    }

    /// Whether the joint location player is present.
    pub fn has_geo(&self) -> bool {
        self.contains(self.players() - 1)
    }

    pub fn is_empty(&self) -> bool {
        self.bits == 0
    }

    pub fn is_full(&self) -> bool {
        self.size() == self.players()
    }

    /// Presence flags in player order.
    pub fn to_vec(&self) -> Vec<u8> {
        (0..self.players()).map(|i| self.contains(i) as u8).collect()
    }
}

/// All `2^q` coalitions in ascending order of their little-endian bit value.
pub fn enumerate_coalitions(q: usize) -> Result<Vec<Coalition>> {
    if q == 0 {
        return Err(GeoShapError::Config("player count must be positive".into()));
    }
    if q > MAX_PLAYERS {
        return Err(GeoShapError::Capacity {
            what: "effective player count",
            value: q,
            limit: MAX_PLAYERS,
        });
    }
    Ok((0..1u32 << q).map(|b| Coalition::new(b, q)).collect())
}

/// Shapley kernel weight of a coalition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelWeight {
    /// Empty and full coalitions, enforced as exact constraints.
    Infinite,
    Finite(f64),
}

impl KernelWeight {
    pub fn is_infinite(&self) -> bool {
        matches!(self, KernelWeight::Infinite)
    }

    pub fn finite(&self) -> Option<f64> {
        match *self {
            KernelWeight::Finite(w) => Some(w),
            KernelWeight::Infinite => None,
        }
    }
}

pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `(q - 1) / (C(q, s) * s * (q - s))`, with the joint location set counted
/// as one player.
pub fn kernel_weight(q: usize, s: usize) -> KernelWeight {
    assert!(s <= q, "coalition size {s} exceeds player count {q}");
    if s == 0 || s == q {
        return KernelWeight::Infinite;
    }
    let c = binomial(q, s).round();
    KernelWeight::Finite((q - 1) as f64 / (c * s as f64 * (q - s) as f64))
}

/// Column layout of the design matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// `[mains | GEO x feature interactions | GEO | intercept]`
    GeoShapley,
    /// `[mains | GEO | intercept]`, plain Kernel SHAP with GEO as one player.
    Classic,
}

/// Binary design matrix `Z` and kernel weights over all coalitions.
///
/// Rows of `Z` are generated on demand from the coalitions, which keeps the
/// memory footprint at one word per coalition.
#[derive(Debug, Clone)]
pub struct DesignSystem {
    coalitions: Vec<Coalition>,
    weights: Vec<KernelWeight>,
    layout: Layout,
    q: usize,
}

impl DesignSystem {
    pub fn new(coalitions: Vec<Coalition>, layout: Layout) -> Result<Self> {
        let q = match coalitions.first() {
            Some(c) => c.players(),
            None => return Err(GeoShapError::Config("no coalitions".into())),
        };
        if q < 2 {
            return Err(GeoShapError::Config(
                "the design needs at least two effective players".into(),
            ));
        }
        if coalitions.len() != 1 << q {
            return Err(GeoShapError::Dimension {
                what: "coalition count",
                expected: 1 << q,
                got: coalitions.len(),
            });
        }
        let weights = coalitions
            .iter()
            .map(|c| kernel_weight(q, c.size()))
            .collect();
        Ok(Self {
            coalitions,
            weights,
            layout,
            q,
        })
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn n_features(&self) -> usize {
        self.q - 1
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn coalitions(&self) -> &[Coalition] {
        &self.coalitions
    }

    pub fn weights(&self) -> &[KernelWeight] {
        &self.weights
    }

    pub fn n_rows(&self) -> usize {
        self.coalitions.len()
    }

    pub fn n_cols(&self) -> usize {
        match self.layout {
            Layout::GeoShapley => 2 * self.n_features() + 2,
            Layout::Classic => self.n_features() + 2,
        }
    }

    /// Column index of the GEO main effect.
    pub fn geo_col(&self) -> usize {
        self.n_cols() - 2
    }

    pub fn intercept_col(&self) -> usize {
        self.n_cols() - 1
    }

    pub fn z_row(&self, row: usize) -> Vec<f64> {
        let c = self.coalitions[row];
        let k = self.n_features();
        let geo = c.has_geo();
        let mut z = Vec::with_capacity(self.n_cols());
        z.extend((0..k).map(|j| c.contains(j) as u8 as f64));
        if self.layout == Layout::GeoShapley {
            z.extend((0..k).map(|j| (c.contains(j) && geo) as u8 as f64));
        }
        z.push(geo as u8 as f64);
        z.push(1.0);
        z
    }

    pub fn z_matrix(&self) -> Array2<f64> {
        let mut z = Array2::zeros((self.n_rows(), self.n_cols()));
        for (i, mut row) in z.rows_mut().into_iter().enumerate() {
            for (dst, v) in row.iter_mut().zip(self.z_row(i)) {
                *dst = v;
            }
        }
        z
    }
}

/// GeoShapley design over every coalition of `spec`'s effective players.
pub fn build_design_matrix(coalitions: Vec<Coalition>, spec: &GeoSpec) -> Result<DesignSystem> {
    if let Some(c) = coalitions.first() {
        if c.players() != spec.q() {
            return Err(GeoShapError::Dimension {
                what: "coalition player count",
                expected: spec.q(),
                got: c.players(),
            });
        }
    }
    DesignSystem::new(coalitions, Layout::GeoShapley)
}

/// Reference rows standing in for absent features.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundData {
    rows: Array2<f64>,
    weights: Vec<f64>,
    descriptor: String,
}

impl BackgroundData {
    pub fn new(rows: Array2<f64>, weights: Vec<f64>) -> Result<Self> {
        if rows.nrows() == 0 {
            return Err(GeoShapError::Data("background has no rows".into()));
        }
        if weights.len() != rows.nrows() {
            return Err(GeoShapError::Dimension {
                what: "background weight count",
                expected: rows.nrows(),
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(GeoShapError::Data(
                "background weights must be finite and non-negative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(GeoShapError::Data(format!(
                "background weights sum to {total}, not 1"
            )));
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(GeoShapError::Data("background contains non-finite values".into()));
        }
        Ok(Self {
            rows,
            weights,
            descriptor: String::from("custom"),
        })
    }

    /// Equal weight on every row.
    pub fn uniform(rows: Array2<f64>) -> Result<Self> {
        let m = rows.nrows();
        Self::new(rows, vec![1.0 / m.max(1) as f64; m])
    }

    pub fn with_descriptor(mut self, descriptor: impl Into<String>) -> Self {
        self.descriptor = descriptor.into();
        self
    }

    pub fn rows(&self) -> ArrayView2<'_, f64> {
        self.rows.view()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    pub fn n_cols(&self) -> usize {
        self.rows.ncols()
    }

    pub fn descriptor(&self) -> &str {
        &self.descriptor
    }

    /// Weighted column means.
    pub fn weighted_mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.n_cols()];
        for (row, w) in self.rows.rows().into_iter().zip(&self.weights) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += w * v;
            }
        }
        mean
    }

    /// Weighted mean of `values`, one entry per background row.
    pub fn weighted_average(&self, values: &[f64]) -> f64 {
        values.iter().zip(&self.weights).map(|(v, w)| v * w).sum()
    }
}

fn check_dims(instance: &[f64], spec: &GeoSpec, background: &BackgroundData) -> Result<()> {
    if instance.len() != spec.p() {
        return Err(GeoShapError::Dimension {
            what: "instance length",
            expected: spec.p(),
            got: instance.len(),
        });
    }
    if background.n_cols() != spec.p() {
        return Err(GeoShapError::Dimension {
            what: "background column count",
            expected: spec.p(),
            got: background.n_cols(),
        });
    }
    Ok(())
}

fn write_masked(
    out: &mut ndarray::ArrayViewMut2<'_, f64>,
    instance: &[f64],
    coalition: Coalition,
    spec: &GeoSpec,
    background: &BackgroundData,
) {
    let present: Vec<bool> = (0..spec.p())
        .map(|c| coalition.contains(spec.player_of_column(c)))
        .collect();
    for (mut dst, src) in out.rows_mut().into_iter().zip(background.rows.rows()) {
        for c in 0..present.len() {
            dst[c] = if present[c] { instance[c] } else { src[c] };
        }
    }
}

/// One row per background row: instance values on columns whose effective
/// player is in `coalition`, background values elsewhere.
pub fn synthesize_masked_samples(
    instance: &[f64],
    coalition: Coalition,
    spec: &GeoSpec,
    background: &BackgroundData,
) -> Result<Array2<f64>> {
    check_dims(instance, spec, background)?;
    if coalition.players() != spec.q() {
        return Err(GeoShapError::Dimension {
            what: "coalition player count",
            expected: spec.q(),
            got: coalition.players(),
        });
    }
    let mut out = Array2::zeros((background.len(), spec.p()));
    write_masked(&mut out.view_mut(), instance, coalition, spec, background);
    Ok(out)
}

/// Background-weighted mean prediction over the masked samples of one coalition.
pub fn coalition_value(
    predictor: &dyn Predictor,
    instance: &[f64],
    coalition: Coalition,
    spec: &GeoSpec,
    background: &BackgroundData,
) -> Result<f64> {
    let v = coalition_values(
        predictor,
        instance,
        &[coalition],
        spec,
        background,
        DEFAULT_MAX_BATCH_ROWS,
    )?;
    Ok(v[0])
}

/// Values of many coalitions, batching masked samples into predictor calls
/// of at most `max_batch_rows` rows (at least one coalition per call).
pub fn coalition_values(
    predictor: &dyn Predictor,
    instance: &[f64],
    coalitions: &[Coalition],
    spec: &GeoSpec,
    background: &BackgroundData,
    max_batch_rows: usize,
) -> Result<Vec<f64>> {
    check_dims(instance, spec, background)?;
    let m = background.len();
    let per_call = (max_batch_rows / m).max(1);
    let mut values = Vec::with_capacity(coalitions.len());
    for chunk in coalitions.chunks(per_call) {
        let mut batch = Array2::zeros((chunk.len() * m, spec.p()));
        for (i, &c) in chunk.iter().enumerate() {
            let mut view = batch.slice_mut(ndarray::s![i * m..(i + 1) * m, ..]);
            write_masked(&mut view, instance, c, spec, background);
        }
        let wrap = |e: GeoShapError| GeoShapError::Coalition {
            coalition: chunk[0].bits() as u64,
            source: Box::new(e),
        };
        let preds = predictor.predict(batch.view()).map_err(wrap)?;
        if preds.len() != batch.nrows() {
            return Err(wrap(GeoShapError::Dimension {
                what: "prediction count",
                expected: batch.nrows(),
                got: preds.len(),
            }));
        }
        for (i, &c) in chunk.iter().enumerate() {
            let slice = &preds[i * m..(i + 1) * m];
            if slice.iter().any(|v| !v.is_finite()) {
                return Err(GeoShapError::Coalition {
                    coalition: c.bits() as u64,
                    source: Box::new(GeoShapError::Predictor(
                        "non-finite prediction".into(),
                    )),
                });
            }
            values.push(background.weighted_average(slice));
        }
    }
    Ok(values)
}
