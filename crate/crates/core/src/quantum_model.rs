//! Match probabilities of a maximally entangled spin pair.
//!
//! For measurement axes separated by `delta` the two spins agree with
//! probability `sin²(delta / 2)`; at equal axes they never agree.

use std::f64::consts::{PI, TAU};
use std::fmt;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::setting::{Setting, SettingPair, Spin};

/// Measurement axis, stored in radians and normalized to `[0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Angle(f64);

impl Angle {
    pub fn from_radians(radians: f64) -> Self {
        let mut r = radians.rem_euclid(TAU);
        // rem_euclid can round up to exactly TAU for tiny negative inputs
        if r >= TAU {
            r = 0.0;
        }
        Angle(r)
    }

    pub fn from_degrees(degrees: f64) -> Self {
        Angle::from_radians(degrees.to_radians())
    }

    pub fn radians(self) -> f64 {
        self.0
    }

    pub fn degrees(self) -> f64 {
        self.0.to_degrees()
    }

    /// Unsigned separation between the two axes, wrapped to `[0, π]`.
    pub fn separation(self, other: Angle) -> f64 {
        let d = (self.0 - other.0).abs();
        if d > PI {
            TAU - d
        } else {
            d
        }
    }

    pub fn approx_eq(self, other: Angle, tol: f64) -> bool {
        self.separation(other) <= tol
    }
}

/// Axis assigned to each of the three settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleTriple {
    pub theta: [Angle; 3],
}

impl AngleTriple {
    pub fn new(theta: [Angle; 3]) -> Self {
        AngleTriple { theta }
    }

    pub fn from_degrees(deg: [f64; 3]) -> Self {
        AngleTriple {
            theta: deg.map(Angle::from_degrees),
        }
    }

    pub fn degrees(&self) -> [f64; 3] {
        self.theta.map(Angle::degrees)
    }

    pub fn get(&self, x: Setting) -> Angle {
        self.theta[x.index()]
    }

    /// `Δ_ij`, the axis separation between settings `i` and `j`.
    pub fn delta(&self, i: Setting, j: Setting) -> f64 {
        self.get(i).separation(self.get(j))
    }
}

/// 3×3 grid of match probabilities `p[x1][x2] = E[M(x1, x2)]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchProbabilityTable {
    pub p: [[f64; 3]; 3],
}

impl MatchProbabilityTable {
    pub fn new(p: [[f64; 3]; 3]) -> Result<Self> {
        for (i, row) in p.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::domain(format!(
                        "match probability p[{i}][{j}] = {v} is outside [0,1]"
                    )));
                }
            }
        }
        Ok(MatchProbabilityTable { p })
    }

    pub fn zeros() -> Self {
        MatchProbabilityTable { p: [[0.0; 3]; 3] }
    }

    pub fn get(&self, pair: SettingPair) -> f64 {
        self.p[pair.x1.index()][pair.x2.index()]
    }

    /// The four entries of the Bell statistic in the order
    /// `(e12, e02, e10, e00)`.
    pub fn statistic_entries(&self) -> [f64; 4] {
        SettingPair::statistic_pairs().map(|pair| self.get(pair))
    }

    /// `e12 - e02 - e10 - e00`.
    pub fn bell_statistic(&self) -> f64 {
        let [e12, e02, e10, e00] = self.statistic_entries();
        e12 - e02 - e10 - e00
    }
}

impl fmt::Display for MatchProbabilityTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "x1\\x2        0          1          2")?;
        for (i, row) in self.p.iter().enumerate() {
            write!(f, "{i}    ")?;
            for v in row {
                write!(f, " {v:>10.6}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// `sin²(delta / 2)` for an axis separation in `[0, π]`.
pub fn match_probability(delta: f64) -> Result<f64> {
    if !(0.0..=PI).contains(&delta) {
        return Err(Error::domain(format!(
            "axis separation {delta} is outside [0, π]"
        )));
    }
    let s = (delta / 2.0).sin();
    Ok(s * s)
}

/// Quantum match table for the given axes. The diagonal is exactly zero.
pub fn match_table(angles: &AngleTriple) -> MatchProbabilityTable {
    let mut p = [[0.0; 3]; 3];
    for i in Setting::ALL {
        for j in Setting::ALL {
            if i != j {
                p[i.index()][j.index()] = match_probability(angles.delta(i, j))
                    .expect("separation is always wrapped into [0, π]");
            }
        }
    }
    MatchProbabilityTable { p }
}

/// Draws `(y1, y2)` for one trial.
///
/// `y1` is a fair coin; `y2` equals `y1` with probability `p[x1][x2]` and is
/// flipped otherwise. Consumes exactly two uniform draws, `y1` first.
pub fn sample_outcome_pair<R: Rng + ?Sized>(
    pair: SettingPair,
    table: &MatchProbabilityTable,
    rng: &mut R,
) -> (Spin, Spin) {
    let y1 = Spin::from_bit(rng::bernoulli(rng, 0.5));
    let agree = rng::bernoulli(rng, table.get(pair));
    (y1, if agree { y1 } else { -y1 })
}

/// Two-qubit pure state over the basis `(↑↑, ↑↓, ↓↑, ↓↓)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoQubitState {
    pub amplitudes: [Complex64; 4],
}

impl TwoQubitState {
    /// `(|↑↓⟩ − |↓↑⟩) / √2`: perfectly anti-correlated along every axis.
    pub fn singlet() -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        TwoQubitState {
            amplitudes: [
                Complex64::new(0.0, 0.0),
                Complex64::new(h, 0.0),
                Complex64::new(-h, 0.0),
                Complex64::new(0.0, 0.0),
            ],
        }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    fn apply(&self, op: &[[Complex64; 4]; 4]) -> [Complex64; 4] {
        let mut out = [Complex64::new(0.0, 0.0); 4];
        for (r, row) in op.iter().enumerate() {
            out[r] = row.iter().zip(&self.amplitudes).map(|(m, a)| m * a).sum();
        }
        out
    }
}

type Mat2 = [[Complex64; 2]; 2];

/// Projector onto spin `outcome` along the in-plane axis at `theta`:
/// `(I ± (cos θ · Z + sin θ · X)) / 2`.
fn spin_projector(theta: f64, outcome: Spin) -> Mat2 {
    let sign = f64::from(outcome.value());
    let (s, c) = theta.sin_cos();
    let z = |v: f64| Complex64::new(v, 0.0);
    [
        [z(0.5 * (1.0 + sign * c)), z(0.5 * sign * s)],
        [z(0.5 * sign * s), z(0.5 * (1.0 - sign * c))],
    ]
}

fn kron(a: &Mat2, b: &Mat2) -> [[Complex64; 4]; 4] {
    let mut out = [[Complex64::new(0.0, 0.0); 4]; 4];
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    out[2 * i + k][2 * j + l] = a[i][j] * b[k][l];
                }
            }
        }
    }
    out
}

/// Independent check of the correlation law: the probability that spins
/// measured along `theta_a` and `theta_b` agree, computed from the singlet
/// statevector and explicit projectors.
pub fn singlet_match_probability_oracle(theta_a: Angle, theta_b: Angle) -> f64 {
    let psi = TwoQubitState::singlet();
    [Spin::Up, Spin::Down]
        .into_iter()
        .map(|s| {
            let op = kron(
                &spin_projector(theta_a.radians(), s),
                &spin_projector(theta_b.radians(), s),
            );
            psi.apply(&op).iter().map(|a| a.norm_sqr()).sum::<f64>()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn pair(a: u8, b: u8) -> SettingPair {
        SettingPair::new(a, b).unwrap()
    }

    #[test]
    fn match_probability_examples() {
        assert_eq!(match_probability(0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(match_probability(PI).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            match_probability(2.0 * PI / 3.0).unwrap(),
            0.75,
            epsilon = 1e-15
        );
        assert!(matches!(match_probability(-0.1), Err(Error::Domain(_))));
        assert!(match_probability(PI + 1e-9).is_err());
        assert!(match_probability(f64::NAN).is_err());
    }

    #[test]
    fn match_table_examples() {
        let t = match_table(&AngleTriple::from_degrees([60.0, 0.0, 120.0]));
        assert_abs_diff_eq!(t.get(pair(1, 2)), 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(t.get(pair(0, 2)), 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(t.get(pair(1, 0)), 0.25, epsilon = 1e-12);
        for i in 0..3 {
            assert_eq!(t.p[i][i], 0.0);
        }

        let t = match_table(&AngleTriple::from_degrees([0.0, 0.0, 0.0]));
        assert_eq!(t, MatchProbabilityTable::zeros());

        let t = match_table(&AngleTriple::from_degrees([0.0, 90.0, 180.0]));
        assert_abs_diff_eq!(t.get(pair(0, 1)), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(t.get(pair(0, 2)), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(t.get(pair(1, 2)), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn separation_wraps() {
        let a = Angle::from_degrees(350.0);
        let b = Angle::from_degrees(10.0);
        assert_abs_diff_eq!(a.separation(b), 20f64.to_radians(), epsilon = 1e-12);
        assert_abs_diff_eq!(b.separation(a), 20f64.to_radians(), epsilon = 1e-12);
        assert_eq!(Angle::from_radians(-1e-300).radians(), 0.0);
    }

    #[test]
    fn table_rejects_out_of_range() {
        let mut p = [[0.0; 3]; 3];
        p[2][1] = 1.5;
        assert!(MatchProbabilityTable::new(p).is_err());
    }

    #[test]
    fn oracle_examples() {
        let o = |a: f64, b: f64| {
            singlet_match_probability_oracle(Angle::from_radians(a), Angle::from_radians(b))
        };
        assert_abs_diff_eq!(o(0.0, 0.0), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(o(0.0, PI), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(o(0.0, 2.0 * PI / 3.0), 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(TwoQubitState::singlet().norm_sqr(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn oracle_agrees_on_degree_grid() {
        let mut worst: f64 = 0.0;
        for a in 0..360 {
            for b in 0..360 {
                let (ta, tb) = (Angle::from_degrees(a as f64), Angle::from_degrees(b as f64));
                let law = match_probability(ta.separation(tb)).unwrap();
                worst = worst.max((singlet_match_probability_oracle(ta, tb) - law).abs());
            }
        }
        assert!(worst <= 1e-10, "max deviation {worst}");
    }

    #[test]
    fn equal_settings_always_anticorrelate() {
        let t = match_table(&AngleTriple::from_degrees([60.0, 0.0, 120.0]));
        let mut r = rng::root(3);
        for x in 0..3 {
            for _ in 0..2000 {
                let (y1, y2) = sample_outcome_pair(pair(x, x), &t, &mut r);
                assert_eq!(y2, -y1);
            }
        }
    }

    #[test]
    fn degenerate_match_always_agrees() {
        let mut p = [[0.0; 3]; 3];
        p[1][2] = 1.0;
        let t = MatchProbabilityTable::new(p).unwrap();
        let mut r = rng::root(4);
        for _ in 0..2000 {
            let (y1, y2) = sample_outcome_pair(pair(1, 2), &t, &mut r);
            assert_eq!(y1, y2);
        }
    }

    #[test]
    fn sampled_match_frequency_converges() {
        let t = match_table(&AngleTriple::from_degrees([60.0, 0.0, 120.0]));
        let mut r = rng::root(11);
        let n = 1_000_000;
        let mut matches = 0usize;
        let mut ups = 0usize;
        for _ in 0..n {
            let (y1, y2) = sample_outcome_pair(pair(1, 2), &t, &mut r);
            matches += usize::from(y1 == y2);
            ups += usize::from(y1 == Spin::Up);
        }
        let freq = matches as f64 / n as f64;
        assert!((freq - 0.75).abs() <= 0.002, "match frequency {freq}");
        // marginal within 5 binomial sigmas of 1/2
        let sigma = (0.25 / n as f64).sqrt();
        assert!((ups as f64 / n as f64 - 0.5).abs() <= 5.0 * sigma);
    }

    proptest! {
        #[test]
        fn normalization_is_idempotent(a in -100.0f64..100.0) {
            let once = Angle::from_radians(a);
            prop_assert_eq!(Angle::from_radians(once.radians()), once);
            prop_assert!((0.0..TAU).contains(&once.radians()));
            prop_assert!(once.approx_eq(Angle::from_radians(a + TAU), 1e-12));
        }

        #[test]
        fn match_table_symmetric_zero_diagonal(a in 0.0f64..360.0, b in 0.0f64..360.0, c in 0.0f64..360.0) {
            let t = match_table(&AngleTriple::from_degrees([a, b, c]));
            for i in 0..3 {
                prop_assert_eq!(t.p[i][i], 0.0);
                for j in 0..3 {
                    prop_assert_eq!(t.p[i][j], t.p[j][i]);
                    prop_assert!((0.0..=1.0).contains(&t.p[i][j]));
                }
            }
        }

        #[test]
        fn match_probability_monotone(a in 0.0f64..PI, b in 0.0f64..PI) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(match_probability(lo).unwrap() <= match_probability(hi).unwrap());
        }

        #[test]
        fn marginal_is_fair(seed in any::<u64>(), x1 in 0u8..3, x2 in 0u8..3) {
            let t = match_table(&AngleTriple::from_degrees([60.0, 0.0, 120.0]));
            let mut r = rng::root(seed);
            let n = 10_000;
            let ups = (0..n)
                .filter(|_| sample_outcome_pair(pair(x1, x2), &t, &mut r).0 == Spin::Up)
                .count();
            let sigma = (0.25 / n as f64).sqrt();
            prop_assert!((ups as f64 / n as f64 - 0.5).abs() <= 5.0 * sigma);
        }
    }
}
