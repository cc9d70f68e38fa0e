//! Constrained weighted least squares for one instance.
//!
//! The empty and full coalitions carry infinite kernel weight. They are
//! enforced exactly: the intercept is fixed to `v(empty)` and the GEO
//! coefficient is eliminated through the efficiency constraint, leaving an
//! ordinary weighted problem over the finite-weight rows.

use ndarray::Array2;

use crate::coalition::DesignSystem;
use crate::error::{GeoShapError, Result};
use crate::linalg::PivotedQr;

#[derive(Debug, Clone, PartialEq)]
pub struct WlsSolution {
    /// Coefficients in design-column order; GEO and intercept are last.
    pub phi: Vec<f64>,
    /// Weighted residual norm of the reduced system.
    pub residual_norm: f64,
    /// Estimated condition number of the reduced system.
    pub condition_hint: f64,
}

/// Factorization of the reduced system. It depends only on the design, so
/// one instance serves every explained row.
#[derive(Debug, Clone)]
pub struct ConstrainedWls {
    n_cols: usize,
    geo_col: usize,
    empty_row: usize,
    full_row: usize,
    // (design row, sqrt weight, geo present) for every finite-weight row
    rows: Vec<(usize, f64, bool)>,
    reduced: Array2<f64>,
    qr: PivotedQr,
}

impl ConstrainedWls {
    pub fn new(design: &DesignSystem) -> Result<Self> {
        let n_cols = design.n_cols();
        let geo_col = design.geo_col();
        let n_free = n_cols - 2;
        let mut empty_row = None;
        let mut full_row = None;
        let mut rows = Vec::new();
        for (i, (c, w)) in design.coalitions().iter().zip(design.weights()).enumerate() {
            match w.finite() {
                Some(w) => rows.push((i, w.sqrt(), c.has_geo())),
                None if c.is_empty() => empty_row = Some(i),
                None if c.is_full() => full_row = Some(i),
                None => {
                    return Err(GeoShapError::Config(format!(
                        "infinite weight on intermediate coalition {:#b}",
                        c.bits()
                    )))
                }
            }
        }
        let (Some(empty_row), Some(full_row)) = (empty_row, full_row) else {
            return Err(GeoShapError::Config(
                "design lacks the empty or full coalition".into(),
            ));
        };
        if rows.len() < n_free {
            return Err(GeoShapError::RankDeficient {
                columns: (0..n_free).collect(),
            });
        }
        let mut reduced = Array2::zeros((rows.len(), n_free));
        for (r, &(i, sw, geo)) in rows.iter().enumerate() {
            let z = design.z_row(i);
            let zg = geo as u8 as f64;
            for c in 0..n_free {
                reduced[[r, c]] = sw * (z[c] - zg);
            }
        }
        let qr = PivotedQr::new(reduced.view());
        if qr.rank() < n_free {
            return Err(GeoShapError::RankDeficient {
                columns: qr.deficient_columns(),
            });
        }
        Ok(Self {
            n_cols,
            geo_col,
            empty_row,
            full_row,
            rows,
            reduced,
            qr,
        })
    }

    /// Coefficients for one vector of coalition values (design row order).
    pub fn solve(&self, values: &[f64]) -> Result<WlsSolution> {
        let expected = self.rows.len() + 2;
        if values.len() != expected {
            return Err(GeoShapError::Dimension {
                what: "coalition value count",
                expected,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GeoShapError::Numerical("non-finite coalition value".into()));
        }
        let base = values[self.empty_row];
        let total = values[self.full_row] - base;
        let target: Vec<f64> = self
            .rows
            .iter()
            .map(|&(i, sw, geo)| sw * (values[i] - base - if geo { total } else { 0.0 }))
            .collect();
        let x = self.qr.solve(&target);
        let residual_norm = self
            .reduced
            .rows()
            .into_iter()
            .zip(&target)
            .map(|(row, t)| {
                let fit: f64 = row.iter().zip(&x).map(|(a, b)| a * b).sum();
                (fit - t).powi(2)
            })
            .sum::<f64>()
            .sqrt();
        let mut phi = Vec::with_capacity(self.n_cols);
        phi.extend_from_slice(&x);
        let geo = total - x.iter().sum::<f64>();
        debug_assert_eq!(phi.len(), self.geo_col);
        phi.push(geo);
        phi.push(base);
        Ok(WlsSolution {
            phi,
            residual_norm,
            condition_hint: self.qr.condition_hint(),
        })
    }
}

/// One-shot constrained solve; prefer [`ConstrainedWls`] when many value
/// vectors share a design.
pub fn solve_constrained_wls(design: &DesignSystem, values: &[f64]) -> Result<WlsSolution> {
    ConstrainedWls::new(design)?.solve(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coalition::{enumerate_coalitions, Coalition, DesignSystem, Layout};
    use crate::oracle::{exact_shapley, ValueFunction};
    use proptest::prelude::*;

    fn design(q: usize, layout: Layout) -> DesignSystem {
        DesignSystem::new(enumerate_coalitions(q).unwrap(), layout).unwrap()
    }

    fn values(q: usize, f: impl Fn(Coalition) -> f64) -> Vec<f64> {
        enumerate_coalitions(q).unwrap().into_iter().map(f).collect()
    }

    #[test]
    fn recovers_representable_game() {
        // p = 3, g = 2: players X1 (0) and GEO (1)
        let (a, b, c, d) = (1.5, -2.0, 0.75, 3.25);
        let v = values(2, |s| {
            let x = s.contains(0) as u8 as f64;
            let g = s.contains(1) as u8 as f64;
            c + a * x + b * g + d * x * g
        });
        let sol = solve_constrained_wls(&design(2, Layout::GeoShapley), &v).unwrap();
        let want = [a, d, b, c];
        for (got, want) in sol.phi.iter().zip(want) {
            assert!((got - want).abs() < 1e-12, "{:?}", sol.phi);
        }
        assert!(sol.residual_norm < 1e-12);
    }

    #[test]
    fn null_game() {
        let v = vec![2.5; 16];
        let sol = solve_constrained_wls(&design(4, Layout::GeoShapley), &v).unwrap();
        assert_eq!(sol.phi[..7], [0.0; 7]);
        assert_eq!(sol.phi[7], 2.5);
    }

    #[test]
    fn feature_synergy_leaks_into_geo() {
        // v = 1 iff players 0 and 1 are both present; GEO (player 3) and
        // player 2 are null. The interaction columns absorb the synergy.
        let v: Vec<f64> = (0..16u32).map(|b| if b & 3 == 3 { 1.0 } else { 0.0 }).collect();
        let sol = solve_constrained_wls(&design(4, Layout::GeoShapley), &v).unwrap();
        let third = 1.0 / 3.0;
        let expected = [third, third, 0.0, third, third, 0.0, -third, 0.0];
        for (got, want) in sol.phi.iter().zip(expected) {
            assert!((got - want).abs() < 1e-12, "{:?}", sol.phi);
        }
    }

    #[test]
    fn three_player_classic_mode() {
        // A = player 0, B = player 1, C = GEO (player 2)
        let table = [0.0, 5.0, 10.0, 5.0, 100.0, 120.0, 140.0, 150.0];
        let sol = solve_constrained_wls(&design(3, Layout::Classic), &table).unwrap();
        let expected = [7.5, 20.0, 122.5, 0.0];
        for (got, want) in sol.phi.iter().zip(expected) {
            assert!((got - want).abs() < 1e-10, "{:?}", sol.phi);
        }
    }

    #[test]
    fn rejects_wrong_value_count() {
        let wls = ConstrainedWls::new(&design(3, Layout::GeoShapley)).unwrap();
        assert!(wls.solve(&[0.0; 7]).is_err());
        assert!(wls.solve(&[f64::NAN; 8]).is_err());
    }

    #[test]
    fn reduced_system_is_well_conditioned() {
        for q in 2..=10 {
            let wls = ConstrainedWls::new(&design(q, Layout::GeoShapley)).unwrap();
            let sol = wls.solve(&vec![0.0; 1 << q]).unwrap();
            assert!(sol.condition_hint.is_finite() && sol.condition_hint < 1e6);
        }
    }

    fn game_strategy() -> impl Strategy<Value = (usize, Vec<f64>)> {
        (2usize..=7).prop_flat_map(|q| (Just(q), prop::collection::vec(-50.0f64..50.0, 1 << q)))
    }

    proptest! {
        #[test]
        fn constraints_hold_exactly((q, v) in game_strategy()) {
            let sol = solve_constrained_wls(&design(q, Layout::GeoShapley), &v).unwrap();
            let full = v[(1 << q) - 1];
            prop_assert_eq!(*sol.phi.last().unwrap(), v[0]);
            let sum: f64 = sol.phi.iter().sum();
            prop_assert!((sum - full).abs() <= 1e-10 * full.abs().max(1.0));
        }

        #[test]
        fn scale_equivariance((q, v) in game_strategy(), c in -10.0f64..10.0) {
            let d = design(q, Layout::GeoShapley);
            let a = solve_constrained_wls(&d, &v).unwrap();
            let scaled: Vec<f64> = v.iter().map(|x| c * x).collect();
            let b = solve_constrained_wls(&d, &scaled).unwrap();
            let norm = a.phi.iter().fold(1.0f64, |m, x| m.max(x.abs()));
            for (x, y) in a.phi.iter().zip(&b.phi) {
                prop_assert!((c * x - y).abs() <= 1e-10 * norm * c.abs().max(1.0));
            }
        }

        #[test]
        fn permutation_equivariance((q, v) in game_strategy(), swap in any::<prop::sample::Index>()) {
            // swap non-location players i and i+1
            let k = q - 1;
            prop_assume!(k >= 2);
            let i = swap.index(k - 1);
            let d = design(q, Layout::GeoShapley);
            let perm = |bits: u32| {
                let bi = bits >> i & 1;
                let bj = bits >> (i + 1) & 1;
                (bits & !(0b11 << i)) | bj << i | bi << (i + 1)
            };
            let swapped: Vec<f64> = (0..1u32 << q).map(|b| v[perm(b) as usize]).collect();
            let a = solve_constrained_wls(&d, &v).unwrap();
            let b = solve_constrained_wls(&d, &swapped).unwrap();
            for (x, y) in [(i, i + 1), (k + i, k + i + 1)] {
                prop_assert!((a.phi[x] - b.phi[y]).abs() < 1e-9);
                prop_assert!((a.phi[y] - b.phi[x]).abs() < 1e-9);
            }
        }

        #[test]
        fn classic_mode_matches_brute_force((q, v) in game_strategy()) {
            let sol = solve_constrained_wls(&design(q, Layout::Classic), &v).unwrap();
            let game = ValueFunction::from_table(q, v.clone()).unwrap();
            for j in 0..q {
                let exact = exact_shapley(&game, j).unwrap();
                prop_assert!((sol.phi[j] - exact).abs() < 1e-8);
            }
        }
    }
}
