//! Local hidden-variable models used as data generators.
//!
//! A [`DeterministicLhv`] is a weighted mixture of local counterfactual
//! tables. A [`StochasticLocalModel`] gives each particle a success
//! probability per setting, `p1(x1)` and `p2(x2)`, with the two spins drawn
//! independently. The Bell statistic of a stochastic model is multilinear in
//! its six probabilities, so its maximum over the unit box sits at a vertex,
//! where the model is one of the 64 deterministic tables; the exhaustive grid
//! search in [`stochastic_bell_supremum`] checks this numerically.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::counterfactuals::{CounterfactualTable, Population};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::quantum_model::MatchProbabilityTable;
use crate::rng;
use crate::setting::{Setting, SettingPair, Spin};

/// Mixture over deterministic local tables.
#[derive(Debug, Clone, PartialEq)]
pub struct DeterministicLhv {
    mixture: Population<CounterfactualTable>,
    cumulative: Vec<f64>,
}

impl DeterministicLhv {
    pub fn new(mixture: Population<CounterfactualTable>) -> Self {
        let cumulative = rng::cumulative(&mixture.weights);
        DeterministicLhv {
            mixture,
            cumulative,
        }
    }

    pub fn single(table: CounterfactualTable) -> Self {
        DeterministicLhv::new(Population::new(vec![table], vec![1.0]).expect("single unit"))
    }

    pub fn mixture(&self) -> &Population<CounterfactualTable> {
        &self.mixture
    }

    /// Table drawn by cumulative-weight inversion on one uniform draw.
    pub fn draw_table<R: Rng + ?Sized>(&self, rng: &mut R) -> &CounterfactualTable {
        let u = rng::uniform(rng);
        &self.mixture.units[rng::invert_cumulative(&self.cumulative, u)]
    }

    /// Spins of a randomly drawn unit at `pair`.
    pub fn sample<R: Rng + ?Sized>(&self, pair: SettingPair, rng: &mut R) -> (Spin, Spin) {
        let t = self.draw_table(rng);
        (t.spin1(pair.x1), t.spin2(pair.x2))
    }
}

/// Independent per-particle spin probabilities `P(Y_i = +1)` by setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StochasticLocalModel {
    pub p1: [f64; 3],
    pub p2: [f64; 3],
}

impl StochasticLocalModel {
    pub fn new(p1: [f64; 3], p2: [f64; 3]) -> Result<Self> {
        for (name, v) in p1
            .iter()
            .map(|v| ("p1", v))
            .chain(p2.iter().map(|v| ("p2", v)))
        {
            if !(0.0..=1.0).contains(v) {
                return Err(Error::domain(format!("{name} entry {v} is outside [0,1]")));
            }
        }
        Ok(StochasticLocalModel { p1, p2 })
    }

    /// Two independent Bernoulli spins; particle 1 is drawn first.
    pub fn sample<R: Rng + ?Sized>(&self, pair: SettingPair, rng: &mut R) -> (Spin, Spin) {
        let y1 = Spin::from_bit(rng::bernoulli(rng, self.p1[pair.x1.index()]));
        let y2 = Spin::from_bit(rng::bernoulli(rng, self.p2[pair.x2.index()]));
        (y1, y2)
    }
}

/// Either kind of local model.
#[derive(Debug, Clone, PartialEq)]
pub enum LhvModel {
    Deterministic(DeterministicLhv),
    Stochastic(StochasticLocalModel),
}

impl LhvModel {
    pub fn sample<R: Rng + ?Sized>(&self, pair: SettingPair, rng: &mut R) -> (Spin, Spin) {
        sample_from_lhv(self, pair, rng)
    }

    pub fn expected_match_table(&self) -> MatchProbabilityTable {
        match self {
            LhvModel::Deterministic(m) => lhv_match_table(m),
            LhvModel::Stochastic(m) => {
                let mut p = [[0.0; 3]; 3];
                for pair in SettingPair::all() {
                    p[pair.x1.index()][pair.x2.index()] =
                        stochastic_expected_match(m, pair.x1, pair.x2);
                }
                MatchProbabilityTable { p }
            }
        }
    }
}

/// On-disk model document: `{"tables": [...], "weights": [...]}` or
/// `{"p1": [...], "p2": [...]}`. Weights default to uniform.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum LhvModelFile {
    Mixture {
        tables: Vec<CounterfactualTable>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weights: Option<Vec<f64>>,
    },
    Stochastic {
        p1: [f64; 3],
        p2: [f64; 3],
    },
}

impl LhvModelFile {
    pub fn into_model(self) -> Result<LhvModel> {
        match self {
            LhvModelFile::Mixture { tables, weights } => {
                let pop = match weights {
                    Some(w) => Population::new(tables, w),
                    None => Population::uniform(tables),
                }
                .map_err(|e| Error::config(format!("mixture model: {e}")))?;
                Ok(LhvModel::Deterministic(DeterministicLhv::new(pop)))
            }
            LhvModelFile::Stochastic { p1, p2 } => StochasticLocalModel::new(p1, p2)
                .map(LhvModel::Stochastic)
                .map_err(|e| Error::config(format!("stochastic model: {e}"))),
        }
    }

    pub fn from_model(model: &LhvModel) -> Self {
        match model {
            LhvModel::Deterministic(m) => LhvModelFile::Mixture {
                tables: m.mixture.units.clone(),
                weights: Some(m.mixture.weights.clone()),
            },
            LhvModel::Stochastic(m) => LhvModelFile::Stochastic { p1: m.p1, p2: m.p2 },
        }
    }

    pub fn parse(json: &str) -> Result<LhvModel> {
        let file: LhvModelFile =
            serde_json::from_str(json).map_err(|e| Error::config(format!("model file: {e}")))?;
        file.into_model()
    }
}

/// `p[i][j]` = weighted fraction of units with `y1[i] == y2[j]`.
pub fn lhv_match_table(model: &DeterministicLhv) -> MatchProbabilityTable {
    let mut p = [[0.0; 3]; 3];
    for (unit, w) in model.mixture.iter() {
        for pair in SettingPair::all() {
            if unit.matches(pair) {
                p[pair.x1.index()][pair.x2.index()] += w;
            }
        }
    }
    // summation can overshoot 1 by an ulp
    for v in p.iter_mut().flatten() {
        *v = v.clamp(0.0, 1.0);
    }
    MatchProbabilityTable { p }
}

/// Probability that two independent spin draws agree at `(x1, x2)`.
pub fn stochastic_expected_match(model: &StochasticLocalModel, x1: Setting, x2: Setting) -> f64 {
    agree(model.p1[x1.index()], model.p2[x2.index()])
}

fn agree(a: f64, b: f64) -> f64 {
    a * b + (1.0 - a) * (1.0 - b)
}

/// Bell statistic of a stochastic model given as
/// `[p1[0], p1[1], p1[2], p2[0], p2[1], p2[2]]`.
pub fn stochastic_bell_statistic(q: &[f64; 6]) -> f64 {
    let [a0, a1, _a2, b0, _b1, b2] = *q;
    agree(a1, b2) - agree(a0, b2) - agree(a1, b0) - agree(a0, b0)
}

/// Result of the exhaustive grid search over stochastic local models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSupremum {
    pub grid_steps: usize,
    pub points: usize,
    /// Maximum statistic over the grid.
    pub max: f64,
    /// Lowest-lexicographic grid point within [`GridSupremum::TIE_TOL`] of
    /// the maximum, as probabilities `[p1[0..3], p2[0..3]]`.
    pub argmax: [f64; 6],
    pub argmax_is_vertex: bool,
    /// Maximum over the 64 box vertices alone.
    pub vertex_max: f64,
}

impl GridSupremum {
    pub const TIE_TOL: f64 = 1e-12;
}

/// Maximum of the Bell statistic over the grid `{0, 1/(g-1), ..., 1}^6`.
pub fn stochastic_bell_supremum(grid_steps: usize) -> Result<GridSupremum> {
    stochastic_bell_supremum_with(grid_steps, Execution::default())
}

pub fn stochastic_bell_supremum_with(grid_steps: usize, exec: Execution) -> Result<GridSupremum> {
    if grid_steps < 2 {
        return Err(Error::domain(format!(
            "grid_steps must be at least 2, got {grid_steps}"
        )));
    }
    let g = grid_steps;
    let points = g
        .checked_pow(6)
        .ok_or_else(|| Error::domain(format!("grid of {g}^6 points is too large")))?;
    let step = 1.0 / (g - 1) as f64;
    let coords = |mut idx: usize| {
        let mut c = [0usize; 6];
        for slot in c.iter_mut().rev() {
            *slot = idx % g;
            idx /= g;
        }
        c
    };
    let probs = |c: [usize; 6]| c.map(|k| if k == g - 1 { 1.0 } else { k as f64 * step });
    let value = |idx: usize| stochastic_bell_statistic(&probs(coords(idx)));

    let max = exec::max_over(exec, points, value);
    let first = exec::find_first(exec, points, |idx| {
        value(idx) >= max - GridSupremum::TIE_TOL
    })
    .expect("the maximum is attained on the grid");
    let argmax_coords = coords(first);
    let vertex_max = (0..64)
        .map(|bits: usize| {
            let q = std::array::from_fn(|k| f64::from(u8::from(bits >> (5 - k) & 1 == 1)));
            stochastic_bell_statistic(&q)
        })
        .fold(f64::NEG_INFINITY, f64::max);

    Ok(GridSupremum {
        grid_steps: g,
        points,
        max,
        argmax: probs(argmax_coords),
        argmax_is_vertex: argmax_coords.iter().all(|&k| k == 0 || k == g - 1),
        vertex_max,
    })
}

/// Draws `(y1, y2)` from a local model at `pair`.
pub fn sample_from_lhv<R: Rng + ?Sized>(
    model: &LhvModel,
    pair: SettingPair,
    rng: &mut R,
) -> (Spin, Spin) {
    match model {
        LhvModel::Deterministic(m) => m.sample(pair, rng),
        LhvModel::Stochastic(m) => m.sample(pair, rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::counterfactuals::bell_statistic;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn s(x: u8) -> Setting {
        Setting::new(x).unwrap()
    }

    fn t(y1: [i64; 3], y2: [i64; 3]) -> CounterfactualTable {
        CounterfactualTable::from_values(y1, y2).unwrap()
    }

    #[test]
    fn match_table_examples() {
        let never = DeterministicLhv::single(t([1, 1, 1], [-1, -1, -1]));
        assert_eq!(lhv_match_table(&never), MatchProbabilityTable::zeros());

        let all = DeterministicLhv::new(
            Population::uniform(CounterfactualTable::all().collect()).unwrap(),
        );
        for v in lhv_match_table(&all).p.iter().flatten() {
            assert_abs_diff_eq!(*v, 0.5, epsilon = 1e-12);
        }

        let half = DeterministicLhv::new(
            Population::new(
                vec![t([1, 1, 1], [1, 1, 1]), t([1, 1, 1], [-1, -1, -1])],
                vec![0.5, 0.5],
            )
            .unwrap(),
        );
        for v in lhv_match_table(&half).p.iter().flatten() {
            assert_abs_diff_eq!(*v, 0.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn expected_match_examples() {
        let m = |a: f64, b: f64| {
            stochastic_expected_match(
                &StochasticLocalModel::new([a; 3], [b; 3]).unwrap(),
                s(0),
                s(1),
            )
        };
        assert_eq!(m(1.0, 1.0), 1.0);
        assert_eq!(m(1.0, 0.0), 0.0);
        for b in [0.0, 0.2, 0.9, 1.0] {
            assert_abs_diff_eq!(m(0.5, b), 0.5, epsilon = 1e-15);
        }
        assert!(StochasticLocalModel::new([1.2, 0.0, 0.0], [0.0; 3]).is_err());
    }

    #[test]
    fn supremum_rejects_small_grid() {
        assert!(matches!(stochastic_bell_supremum(1), Err(Error::Domain(_))));
        assert!(stochastic_bell_supremum(0).is_err());
    }

    #[test]
    fn supremum_is_zero_at_a_vertex() {
        for g in [2, 5, 11] {
            let r = stochastic_bell_supremum(g).unwrap();
            assert_eq!(r.points, g.pow(6));
            assert!(r.max.abs() <= 1e-12, "g={g} max={}", r.max);
            assert!(r.argmax_is_vertex, "g={g} argmax={:?}", r.argmax);
            assert_eq!(r.vertex_max, 0.0);
            assert!(stochastic_bell_statistic(&r.argmax) >= r.max - GridSupremum::TIE_TOL);
        }
    }

    #[test]
    fn supremum_sequential_matches_parallel() {
        let a = stochastic_bell_supremum_with(5, Execution::Sequential).unwrap();
        let b = stochastic_bell_supremum_with(5, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn vertex_values_equal_deterministic_tables() {
        // at a vertex the stochastic statistic is the table's integer statistic
        for table in CounterfactualTable::all() {
            let q: [f64; 6] = std::array::from_fn(|k| {
                let spin = if k < 3 { table.y1[k] } else { table.y2[k - 3] };
                if spin == Spin::Up {
                    1.0
                } else {
                    0.0
                }
            });
            let expected = crate::counterfactuals::MPattern::of_table(&table).statistic();
            assert_eq!(stochastic_bell_statistic(&q), f64::from(expected));
        }
    }

    #[test]
    fn single_table_sampling_is_deterministic() {
        let m = LhvModel::Deterministic(DeterministicLhv::single(t([1, -1, 1], [-1, -1, 1])));
        let mut r = rng::root(5);
        let pair = SettingPair::new(2, 0).unwrap();
        for _ in 0..100 {
            assert_eq!(m.sample(pair, &mut r), (Spin::Up, Spin::Down));
        }
    }

    #[test]
    fn stochastic_half_matches_half() {
        let m = LhvModel::Stochastic(StochasticLocalModel::new([0.5; 3], [0.5; 3]).unwrap());
        let mut r = rng::root(6);
        let pair = SettingPair::new(1, 2).unwrap();
        let n = 100_000;
        let hits = (0..n).filter(|_| {
            let (a, b) = m.sample(pair, &mut r);
            a == b
        });
        let f = hits.count() as f64 / n as f64;
        assert!((f - 0.5).abs() <= 0.01, "{f}");
    }

    #[test]
    fn anticorrelated_mixture_never_matches_on_diagonal() {
        let tables: Vec<_> = CounterfactualTable::all()
            .filter(|t| t.has_anticorrelated_diagonal())
            .collect();
        let m =
            LhvModel::Deterministic(DeterministicLhv::new(Population::uniform(tables).unwrap()));
        let mut r = rng::root(9);
        for x in 0..3 {
            let pair = SettingPair::new(x, x).unwrap();
            for _ in 0..1000 {
                let (a, b) = m.sample(pair, &mut r);
                assert_eq!(b, -a);
            }
        }
    }

    #[test]
    fn model_file_parsing() {
        let m =
            LhvModelFile::parse(r#"{"tables":[{"y1":[1,1,1],"y2":[-1,-1,-1]}],"weights":[1.0]}"#)
                .unwrap();
        assert!(matches!(m, LhvModel::Deterministic(_)));
        let m = LhvModelFile::parse(
            r#"{"tables":[{"y1":[1,1,1],"y2":[-1,-1,-1]},{"y1":[1,1,1],"y2":[1,1,1]}]}"#,
        )
        .unwrap();
        let LhvModel::Deterministic(d) = &m else {
            panic!()
        };
        assert_eq!(d.mixture().weights, vec![0.5, 0.5]);
        let m = LhvModelFile::parse(r#"{"p1":[0.5,0.5,0.5],"p2":[1,0,1]}"#).unwrap();
        assert!(matches!(m, LhvModel::Stochastic(_)));

        assert!(matches!(
            LhvModelFile::parse(r#"{"tables":[{"y1":[1,0,1],"y2":[1,1,1]}]}"#),
            Err(Error::Config(_))
        ));
        assert!(
            LhvModelFile::parse(r#"{"tables":[{"y1":[1,1,1],"y2":[1,1,1]}],"weights":[0.3]}"#)
                .is_err()
        );
        assert!(LhvModelFile::parse(r#"{"p1":[2,0,0],"p2":[0,0,0]}"#).is_err());

        let json = serde_json::to_string(&LhvModelFile::from_model(&m)).unwrap();
        assert_eq!(LhvModelFile::parse(&json).unwrap(), m);
    }

    fn mixture_strategy() -> impl Strategy<Value = DeterministicLhv> {
        proptest::collection::vec((0usize..64, 1u32..1000), 1..12).prop_map(|entries| {
            let total: u32 = entries.iter().map(|e| e.1).sum();
            let units = entries
                .iter()
                .map(|e| CounterfactualTable::from_index(e.0))
                .collect();
            let mut w: Vec<f64> = entries.iter().map(|e| e.1 as f64 / total as f64).collect();
            let head: f64 = w[..w.len() - 1].iter().sum();
            *w.last_mut().unwrap() = 1.0 - head;
            DeterministicLhv::new(Population::new(units, w).unwrap())
        })
    }

    proptest! {
        #[test]
        fn mixtures_respect_local_bound(model in mixture_strategy()) {
            let [e12, e02, e10, e00] = lhv_match_table(&model).statistic_entries();
            prop_assert!(bell_statistic(e12, e02, e10, e00).unwrap() <= 1e-12);
        }

        #[test]
        fn expected_match_flip_symmetry(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let m = StochasticLocalModel::new([a; 3], [b; 3]).unwrap();
            let f = StochasticLocalModel::new([1.0 - a; 3], [1.0 - b; 3]).unwrap();
            prop_assert!((stochastic_expected_match(&m, s(0), s(2)) - stochastic_expected_match(&f, s(0), s(2))).abs() <= 1e-15);
        }

        #[test]
        fn stochastic_models_respect_local_bound(q in proptest::array::uniform6(0.0f64..=1.0)) {
            prop_assert!(stochastic_bell_statistic(&q) <= 1e-12);
        }
    }
}
