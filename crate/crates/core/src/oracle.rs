//! Brute-force Shapley, joint-location and interaction values by full
//! enumeration of coalitions.
//!
//! Combinatorial weights are exact rationals. Games valued in
//! `Ratio<i128>` are evaluated exactly end to end; `f64` games accumulate
//! marginal contributions per coalition size and convert each exact weight
//! once.
//!
//! Player layout matches [`crate::coalition`]: players `0..q-1` are the
//! non-location features and player `q - 1` is the joint location player,
//! standing for `g` original columns.

use std::ops::{Add, Sub};

use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};

use crate::coalition::{enumerate_coalitions, Coalition};
use crate::error::{GeoShapError, Result};

pub type Rational = Ratio<i128>;

/// Player cap for the single-player oracles.
pub const MAX_ORACLE_PLAYERS: usize = 20;
/// Player cap for the interaction oracles.
pub const MAX_INTERACTION_PLAYERS: usize = 18;

/// Value type of a game.
pub trait GameValue: Clone + Add<Output = Self> + Sub<Output = Self> {
    fn zero() -> Self;
    fn scaled(&self, w: &Rational) -> Self;
}

impl GameValue for f64 {
    fn zero() -> Self {
        0.0
    }

    fn scaled(&self, w: &Rational) -> Self {
        self * w.to_f64().expect("finite weight")
    }
}

impl GameValue for Rational {
    fn zero() -> Self {
        Zero::zero()
    }

    fn scaled(&self, w: &Rational) -> Self {
        self * w
    }
}

/// A coalition game tabulated on all `2^q` subsets of its players.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction<T = f64> {
    q: usize,
    g: usize,
    values: Vec<T>,
}

impl<T: GameValue> ValueFunction<T> {
    /// Table indexed by the little-endian coalition bit pattern.
    pub fn from_table(q: usize, values: Vec<T>) -> Result<Self> {
        if q == 0 || q > MAX_ORACLE_PLAYERS {
            return Err(GeoShapError::Capacity {
                what: "oracle player count",
                value: q,
                limit: MAX_ORACLE_PLAYERS,
            });
        }
        if values.len() != 1 << q {
            return Err(GeoShapError::Dimension {
                what: "game table length",
                expected: 1 << q,
                got: values.len(),
            });
        }
        Ok(Self { q, g: 1, values })
    }

    pub fn from_fn(q: usize, f: impl FnMut(Coalition) -> T) -> Result<Self> {
        if q > MAX_ORACLE_PLAYERS {
            return Err(GeoShapError::Capacity {
                what: "oracle player count",
                value: q,
                limit: MAX_ORACLE_PLAYERS,
            });
        }
        let values = enumerate_coalitions(q)?.into_iter().map(f).collect();
        Self::from_table(q, values)
    }

    /// Declares how many original columns the location player stands for.
    pub fn with_geo_size(mut self, g: usize) -> Self {
        assert!(g >= 1);
        self.g = g;
        self
    }

    pub fn players(&self) -> usize {
        self.q
    }

    pub fn geo_size(&self) -> usize {
        self.g
    }

    /// Original feature count `p = q + g - 1`.
    pub fn feature_count(&self) -> usize {
        self.q + self.g - 1
    }

    pub fn geo_player(&self) -> usize {
        self.q - 1
    }

    pub fn value(&self, bits: u32) -> &T {
        &self.values[bits as usize]
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn negated(&self) -> Self {
        Self {
            q: self.q,
            g: self.g,
            values: self.values.iter().map(|v| T::zero() - v.clone()).collect(),
        }
    }
}

fn factorial(n: usize) -> i128 {
    (1..=n as i128).product()
}

/// `s!(p-s-1)!/p!`
fn classic_weight(p: usize, s: usize) -> Rational {
    Rational::new(factorial(s) * factorial(p - s - 1), factorial(p))
}

/// `s!(p-s-g)!/(p-g+1)!`
fn joint_weight(p: usize, g: usize, s: usize) -> Rational {
    Rational::new(factorial(s) * factorial(p - s - g), factorial(p - g + 1))
}

/// `s!(p-s-g-1)!/(p-g+1)!`
fn joint_interaction_weight(p: usize, g: usize, s: usize) -> Rational {
    Rational::new(factorial(s) * factorial(p - s - g - 1), factorial(p - g + 1))
}

/// `s!(p-s-2)!/(2(p-1)!)`
fn pairwise_weight(p: usize, s: usize) -> Rational {
    Rational::new(factorial(s) * factorial(p - s - 2), 2 * factorial(p - 1))
}

fn check_player(q: usize, j: usize) -> Result<()> {
    if j >= q {
        return Err(GeoShapError::Config(format!(
            "player {j} out of range for {q} players"
        )));
    }
    Ok(())
}

fn check_cap(q: usize, limit: usize) -> Result<()> {
    if q > limit {
        return Err(GeoShapError::Capacity {
            what: "oracle player count",
            value: q,
            limit,
        });
    }
    Ok(())
}

/// Sums `weight(|S|) * delta(S)` over subsets `S` of the players not in
/// `excluded`, grouping by `|S|` so each weight is applied once.
fn weighted_sum<T: GameValue>(
    q: usize,
    excluded: u32,
    weight: impl Fn(usize) -> Rational,
    delta: impl Fn(u32) -> T,
) -> T {
    let mut by_size: Vec<T> = vec![T::zero(); q + 1];
    let full = (1u32 << q) - 1;
    let free = full & !excluded;
    // iterate subsets of `free`
    let mut s = 0u32;
    loop {
        let k = s.count_ones() as usize;
        by_size[k] = by_size[k].clone() + delta(s);
        if s == free {
            break;
        }
        s = (s.wrapping_sub(free)) & free;
    }
    let n_free = free.count_ones() as usize;
    by_size
        .iter()
        .take(n_free + 1)
        .enumerate()
        .fold(T::zero(), |acc, (k, d)| acc + d.scaled(&weight(k)))
}

/// Classic Shapley value of player `j`, treating every player individually.
pub fn exact_shapley<T: GameValue>(v: &ValueFunction<T>, j: usize) -> Result<T> {
    let q = v.players();
    check_player(q, j)?;
    let bit = 1u32 << j;
    Ok(weighted_sum(
        q,
        bit,
        |s| classic_weight(q, s),
        |s| v.value(s | bit).clone() - v.value(s).clone(),
    ))
}

/// Joint Shapley value of the location player.
pub fn exact_joint_geo<T: GameValue>(v: &ValueFunction<T>) -> Result<T> {
    let q = v.players();
    let (p, g) = (v.feature_count(), v.geo_size());
    let bit = 1u32 << v.geo_player();
    Ok(weighted_sum(
        q,
        bit,
        |s| joint_weight(p, g, s),
        |s| v.value(s | bit).clone() - v.value(s).clone(),
    ))
}

/// Location-invariant value of non-location feature `j`.
pub fn exact_geo_feature<T: GameValue>(v: &ValueFunction<T>, j: usize) -> Result<T> {
    let q = v.players();
    check_player(q - 1, j)?;
    let (p, g) = (v.feature_count(), v.geo_size());
    let bit = 1u32 << j;
    Ok(weighted_sum(
        q,
        bit,
        |s| joint_weight(p, g, s),
        |s| v.value(s | bit).clone() - v.value(s).clone(),
    ))
}

fn second_difference<T: GameValue>(v: &ValueFunction<T>, a: u32, b: u32, s: u32) -> T {
    v.value(s | a | b).clone() - v.value(s | a).clone() - v.value(s | b).clone()
        + v.value(s).clone()
}

/// Location x feature `j` interaction, with the normalization exactly as
/// `s!(p-s-g-1)!/(p-g+1)!`.
pub fn exact_geo_interaction<T: GameValue>(v: &ValueFunction<T>, j: usize) -> Result<T> {
    let q = v.players();
    check_cap(q, MAX_INTERACTION_PLAYERS)?;
    check_player(q - 1, j)?;
    let (p, g) = (v.feature_count(), v.geo_size());
    let geo = 1u32 << v.geo_player();
    let bit = 1u32 << j;
    Ok(weighted_sum(
        q,
        geo | bit,
        |s| joint_interaction_weight(p, g, s),
        |s| second_difference(v, geo, bit, s),
    ))
}

/// Pairwise Shapley interaction between individual players `i` and `j`.
pub fn exact_pairwise_interaction<T: GameValue>(
    v: &ValueFunction<T>,
    i: usize,
    j: usize,
) -> Result<T> {
    let q = v.players();
    check_cap(q, MAX_INTERACTION_PLAYERS)?;
    check_player(q, i)?;
    check_player(q, j)?;
    if i == j || q < 2 {
        return Err(GeoShapError::Config(
            "pairwise interaction needs two distinct players".into(),
        ));
    }
    let (a, b) = (1u32 << i, 1u32 << j);
    Ok(weighted_sum(
        q,
        a | b,
        |s| pairwise_weight(q, s),
        |s| second_difference(v, a, b, s),
    ))
}

/// Sum of the interaction weights over all subsets excluding GEO and one
/// feature; equals the oracle interaction of a unit bilinear game.
pub fn geo_interaction_weight_total(q: usize, g: usize) -> Rational {
    let p = q + g - 1;
    (0..=q - 2)
        .map(|s| {
            let count = factorial(q - 2) / (factorial(s) * factorial(q - 2 - s));
            joint_interaction_weight(p, g, s) * count
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn r(n: i128) -> Rational {
        Rational::from_integer(n)
    }

    fn three_player_game() -> ValueFunction<Rational> {
        // A = 0, B = 1, C = 2
        let t = [0, 5, 10, 5, 100, 120, 140, 150];
        ValueFunction::from_table(3, t.iter().map(|&x| r(x)).collect()).unwrap()
    }

    #[test]
    fn three_player_shapley_values() {
        let v = three_player_game();
        assert_eq!(exact_shapley(&v, 0).unwrap(), Rational::new(15, 2));
        assert_eq!(exact_shapley(&v, 1).unwrap(), r(20));
        assert_eq!(exact_shapley(&v, 2).unwrap(), Rational::new(245, 2));
        assert_eq!(exact_joint_geo(&v).unwrap(), Rational::new(245, 2));
    }

    #[test]
    fn additive_game() {
        let c = [1.5, -2.0, 4.0, 0.25];
        let v = ValueFunction::from_fn(4, |s| (0..4).filter(|&k| s.contains(k)).map(|k| c[k]).sum::<f64>())
            .unwrap();
        for k in 0..4 {
            assert_eq!(exact_shapley(&v, k).unwrap(), c[k]);
        }
        for k in 0..3 {
            assert_eq!(exact_geo_interaction(&v, k).unwrap(), 0.0);
        }
        assert_eq!(exact_pairwise_interaction(&v, 0, 1).unwrap(), 0.0);
    }

    #[test]
    fn joint_geo_weights_sum_to_one() {
        // p = 4, g = 2 -> q = 3
        let v = ValueFunction::from_fn(3, |s| if s.has_geo() { r(1) } else { r(0) })
            .unwrap()
            .with_geo_size(2);
        assert_eq!(exact_joint_geo(&v).unwrap(), r(1));
        let ignores_geo =
            ValueFunction::from_fn(3, |s| r(s.contains(0) as i128 * 3)).unwrap().with_geo_size(2);
        assert_eq!(exact_joint_geo(&ignores_geo).unwrap(), r(0));
        assert_eq!(exact_geo_feature(&ignores_geo, 0).unwrap(), r(3));
        assert_eq!(exact_geo_feature(&ignores_geo, 1).unwrap(), r(0));
    }

    #[test]
    fn pairwise_two_player_bilinear() {
        let v = ValueFunction::from_fn(2, |s| (s.contains(0) && s.contains(1)) as u8 as f64).unwrap();
        assert_eq!(exact_pairwise_interaction(&v, 0, 1).unwrap(), 0.5);
    }

    #[test]
    fn bilinear_geo_interaction_matches_weight_total() {
        for q in 2..=8 {
            for g in 1..=3 {
                let v = ValueFunction::from_fn(q, |s| r((s.has_geo() && s.contains(0)) as i128))
                    .unwrap()
                    .with_geo_size(g);
                let got = exact_geo_interaction(&v, 0).unwrap();
                assert_eq!(got, geo_interaction_weight_total(q, g));
                assert_eq!(got, Rational::new(1, q as i128));
            }
        }
    }

    #[test]
    fn capacity_errors() {
        assert!(ValueFunction::<f64>::from_table(21, vec![]).is_err());
        let v = ValueFunction::from_fn(19, |_| 0.0).unwrap();
        assert!(exact_shapley(&v, 0).is_ok());
        assert!(matches!(
            exact_geo_interaction(&v, 0),
            Err(GeoShapError::Capacity { limit: 18, .. })
        ));
    }

    fn random_game(rng: &mut ChaCha8Rng, q: usize) -> ValueFunction<Rational> {
        ValueFunction::from_fn(q, |_| r(rng.random_range(-100..=100))).unwrap()
    }

    #[test]
    fn axioms_on_random_games() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..40 {
            let q = rng.random_range(2..=8);
            let v = random_game(&mut rng, q);
            let full = v.value((1 << q) - 1).clone() - v.value(0).clone();
            // efficiency
            let total: Rational = (0..q).map(|j| exact_shapley(&v, j).unwrap()).sum();
            assert_eq!(total, full);
            // g = 1 identity
            assert_eq!(exact_joint_geo(&v).unwrap(), exact_shapley(&v, q - 1).unwrap());
            // antisymmetry of the interaction and symmetry of the pairwise index
            let j = rng.random_range(0..q - 1);
            assert_eq!(
                exact_geo_interaction(&v.negated(), j).unwrap(),
                -exact_geo_interaction(&v, j).unwrap()
            );
            assert_eq!(
                exact_pairwise_interaction(&v, j, q - 1).unwrap(),
                exact_pairwise_interaction(&v, q - 1, j).unwrap()
            );
            // linearity
            let w = random_game(&mut rng, q);
            let sum = ValueFunction::from_table(
                q,
                v.values().iter().zip(w.values()).map(|(a, b)| a + b).collect(),
            )
            .unwrap();
            assert_eq!(
                exact_shapley(&sum, j).unwrap(),
                exact_shapley(&v, j).unwrap() + exact_shapley(&w, j).unwrap()
            );
        }
    }

    #[test]
    fn dummy_and_symmetry_axioms() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let q = rng.random_range(3..=8);
            let base = random_game(&mut rng, q - 1);
            // player q-1 is a dummy
            let mask = (1u32 << (q - 1)) - 1;
            let v = ValueFunction::from_fn(q, |s| base.value(s.bits() & mask).clone()).unwrap();
            assert_eq!(exact_shapley(&v, q - 1).unwrap(), r(0));
            // players 0 and 1 symmetric: value depends on their count only
            let sym = ValueFunction::from_fn(q, |s| {
                let k = s.contains(0) as u32 + s.contains(1) as u32;
                let rest = s.bits() >> 2;
                base.value((rest << 1 | (k > 0) as u32) & mask).clone() + r(k as i128 * 3)
            })
            .unwrap();
            assert_eq!(exact_shapley(&sym, 0).unwrap(), exact_shapley(&sym, 1).unwrap());
        }
    }
}
