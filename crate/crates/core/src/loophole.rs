//! Detection loophole as a linear program.
//!
//! A local model whose spins also decide whether each particle is detected is
//! a mixture of deterministic *augmented strategies*: a counterfactual table
//! plus detection bits `d1(x1)`, `d2(x2)`. Writing `w_s` for the mixture
//! weights, the model reproduces a target match table among coincidences iff
//!
//! ```text
//! sum_s w_s = 1,  w_s >= 0
//! sum_s w_s d1_s(i) d2_s(j) (match_s(i,j) - target[i][j]) = 0   for all (i,j)
//! ```
//!
//! The coincidence rate of pair `(i,j)` is `sum_s w_s d1_s(i) d2_s(j)`; the
//! faking LP also imposes a floor on every rate and maximizes the smallest
//! rate through an epigraph variable `t <= rate(i,j)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::counterfactuals::{CounterfactualTable, TABLE_COUNT};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::quantum_model::MatchProbabilityTable;
use crate::rng;
use crate::setting::{Setting, SettingPair, Spin};
use crate::simplex::{solve_lp, LinearProgram, LpStatus, Sense};

/// `2^6` tables times `2^6` detection patterns.
pub const STRATEGY_COUNT: usize = 4096;

/// Bisection tolerance on the efficiency floor.
pub const EFFICIENCY_TOL: f64 = 1e-4;

mod bits {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(d: &[bool; 3], s: S) -> Result<S::Ok, S::Error> {
        d.map(u8::from).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[bool; 3], D::Error> {
        let v = <[u8; 3]>::deserialize(d)?;
        if v.iter().any(|&b| b > 1) {
            return Err(serde::de::Error::custom("detection flags must be 0 or 1"));
        }
        Ok(v.map(|b| b == 1))
    }
}

/// Deterministic local strategy with setting-dependent detection.
///
/// Index layout (12 bits): the table index in bits 11..6, then `d1[0..3]` in
/// bits 5..3 and `d2[0..3]` in bits 2..0, most significant first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AugmentedStrategy {
    pub table: CounterfactualTable,
    #[serde(with = "bits")]
    pub d1: [bool; 3],
    #[serde(with = "bits")]
    pub d2: [bool; 3],
}

impl AugmentedStrategy {
    pub fn from_index(index: usize) -> Self {
        assert!(
            index < STRATEGY_COUNT,
            "strategy index {index} out of range"
        );
        let bit = |b: usize| index >> b & 1 == 1;
        AugmentedStrategy {
            table: CounterfactualTable::from_index(index >> 6),
            d1: [bit(5), bit(4), bit(3)],
            d2: [bit(2), bit(1), bit(0)],
        }
    }

    pub fn index(&self) -> usize {
        let det = self
            .d1
            .iter()
            .chain(&self.d2)
            .fold(0, |acc, &b| acc << 1 | usize::from(b));
        self.table.index() << 6 | det
    }

    pub fn coincident(&self, pair: SettingPair) -> bool {
        self.d1[pair.x1.index()] && self.d2[pair.x2.index()]
    }

    pub fn always_detects(&self) -> bool {
        self.d1.iter().chain(&self.d2).all(|&d| d)
    }
}

/// All 4096 strategies in index order.
pub fn enumerate_augmented_strategies() -> Vec<AugmentedStrategy> {
    (0..STRATEGY_COUNT)
        .map(AugmentedStrategy::from_index)
        .collect()
}

/// Targets plus the minimum coincidence rate demanded at every pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FakingProblem {
    pub targets: MatchProbabilityTable,
    pub efficiency_floor: f64,
}

impl FakingProblem {
    pub fn new(targets: MatchProbabilityTable, efficiency_floor: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&efficiency_floor) {
            return Err(Error::domain(format!(
                "efficiency floor {efficiency_floor} is outside [0,1]"
            )));
        }
        let targets = MatchProbabilityTable::new(targets.p)?;
        Ok(FakingProblem {
            targets,
            efficiency_floor,
        })
    }
}

/// Per-strategy coefficients: coincidence and coincident-match indicators for
/// the nine pairs, `x1` major.
fn strategy_columns(exec: Execution) -> Vec<([f64; 9], [f64; 9])> {
    exec::map_range(exec, STRATEGY_COUNT, |s| {
        let st = AugmentedStrategy::from_index(s);
        let mut coinc = [0.0; 9];
        let mut matched = [0.0; 9];
        for (k, pair) in SettingPair::all().enumerate() {
            if st.coincident(pair) {
                coinc[k] = 1.0;
                if st.table.matches(pair) {
                    matched[k] = 1.0;
                }
            }
        }
        (coinc, matched)
    })
}

/// Builds the faking LP. Variables are `w_0..w_4095` followed by the
/// epigraph variable `t`; the objective maximizes `t`.
///
/// Rows, in order: normalization, nine conditional-match equalities, nine
/// floor inequalities, nine epigraph inequalities.
pub fn build_faking_lp(problem: &FakingProblem) -> LinearProgram {
    build_faking_lp_with(problem, Execution::default())
}

pub fn build_faking_lp_with(problem: &FakingProblem, exec: Execution) -> LinearProgram {
    let n = STRATEGY_COUNT + 1;
    let t = STRATEGY_COUNT;
    let columns = strategy_columns(exec);
    let mut lp = LinearProgram::new(n);
    lp.objective[t] = 1.0;

    let mut norm = vec![1.0; n];
    norm[t] = 0.0;
    lp.push("normalization", norm, Sense::Eq, 1.0);

    let pairs: Vec<SettingPair> = SettingPair::all().collect();
    for (k, pair) in pairs.iter().enumerate() {
        let target = problem.targets.get(*pair);
        let mut row: Vec<f64> = columns.iter().map(|(c, m)| m[k] - target * c[k]).collect();
        row.push(0.0);
        lp.push(format!("conditional match {pair}"), row, Sense::Eq, 0.0);
    }
    for (k, pair) in pairs.iter().enumerate() {
        let mut row: Vec<f64> = columns.iter().map(|(c, _)| c[k]).collect();
        row.push(0.0);
        lp.push(
            format!("coincidence floor {pair}"),
            row,
            Sense::Ge,
            problem.efficiency_floor,
        );
    }
    for (k, pair) in pairs.iter().enumerate() {
        let mut row: Vec<f64> = columns.iter().map(|(c, _)| -c[k]).collect();
        row.push(1.0);
        lp.push(format!("epigraph {pair}"), row, Sense::Le, 0.0);
    }
    lp
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FakingStatus {
    Feasible,
    Infeasible,
    UnboundedError,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyWeight {
    pub index: usize,
    pub weight: f64,
}

/// Outcome of a faking LP solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: FakingStatus,
    pub problem: FakingProblem,
    /// Strategies with positive weight, ascending by index.
    pub weights: Vec<StrategyWeight>,
    /// Coincidence rate per pair, `[x1][x2]`.
    pub coincidence: [[f64; 3]; 3],
    /// Optimal value of the smallest coincidence rate.
    pub objective: f64,
    pub iterations: usize,
}

impl LpSolution {
    pub fn is_feasible(&self) -> bool {
        self.status == FakingStatus::Feasible
    }

    pub fn min_coincidence(&self) -> f64 {
        self.coincidence
            .iter()
            .flatten()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Recomputes coincidence rates and coincident-match rates from the weights.
    pub fn rescore(&self) -> Rescore {
        let mut coincidence = [[0.0; 3]; 3];
        let mut coincident_match = [[0.0; 3]; 3];
        let mut hidden_match = [[0.0; 3]; 3];
        let mut total = 0.0;
        for sw in &self.weights {
            let st = AugmentedStrategy::from_index(sw.index);
            total += sw.weight;
            for pair in SettingPair::all() {
                let (i, j) = (pair.x1.index(), pair.x2.index());
                if st.table.matches(pair) {
                    hidden_match[i][j] += sw.weight;
                }
                if st.coincident(pair) {
                    coincidence[i][j] += sw.weight;
                    if st.table.matches(pair) {
                        coincident_match[i][j] += sw.weight;
                    }
                }
            }
        }
        Rescore {
            total_weight: total,
            coincidence,
            coincident_match,
            hidden_match,
        }
    }

    /// Expected match table when a missing spin of particle `i` is replaced
    /// by `fill[i]`.
    pub fn imputed_match_table(&self, fill: [Spin; 2]) -> MatchProbabilityTable {
        let mut p = [[0.0; 3]; 3];
        for sw in &self.weights {
            let st = AugmentedStrategy::from_index(sw.index);
            for pair in SettingPair::all() {
                let y1 = if st.d1[pair.x1.index()] {
                    st.table.spin1(pair.x1)
                } else {
                    fill[0]
                };
                let y2 = if st.d2[pair.x2.index()] {
                    st.table.spin2(pair.x2)
                } else {
                    fill[1]
                };
                if y1 == y2 {
                    p[pair.x1.index()][pair.x2.index()] += sw.weight;
                }
            }
        }
        for v in p.iter_mut().flatten() {
            *v = v.clamp(0.0, 1.0);
        }
        MatchProbabilityTable { p }
    }
}

/// Rates recomputed from a solution's weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rescore {
    pub total_weight: f64,
    pub coincidence: [[f64; 3]; 3],
    /// `P(coincident and match)`.
    pub coincident_match: [[f64; 3]; 3],
    /// Match rate of the hidden spins over all pairs, detected or not.
    pub hidden_match: [[f64; 3]; 3],
}

impl Rescore {
    /// `P(match | coincident)`, `None` where no coincidences occur.
    pub fn conditional_match(&self) -> [[Option<f64>; 3]; 3] {
        std::array::from_fn(|i| {
            std::array::from_fn(|j| {
                let c = self.coincidence[i][j];
                (c > 0.0).then(|| self.coincident_match[i][j] / c)
            })
        })
    }
}

/// Weights at or below this are dropped from a reported solution.
const WEIGHT_EPS: f64 = 1e-13;

/// Builds and solves the faking LP.
pub fn solve_faking(problem: &FakingProblem) -> Result<LpSolution> {
    let lp = build_faking_lp(problem);
    solve_faking_lp(problem, &lp)
}

fn solve_faking_lp(problem: &FakingProblem, lp: &LinearProgram) -> Result<LpSolution> {
    let result = solve_lp(lp)?;
    let status = match result.status {
        LpStatus::Optimal => FakingStatus::Feasible,
        LpStatus::Infeasible => FakingStatus::Infeasible,
        LpStatus::Unbounded => FakingStatus::UnboundedError,
    };
    let weights: Vec<StrategyWeight> = if status == FakingStatus::Feasible {
        result.x[..STRATEGY_COUNT]
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > WEIGHT_EPS)
            .map(|(index, &weight)| StrategyWeight { index, weight })
            .collect()
    } else {
        Vec::new()
    };
    let mut sol = LpSolution {
        status,
        problem: *problem,
        weights,
        coincidence: [[0.0; 3]; 3],
        objective: if status == FakingStatus::Feasible {
            result.objective
        } else {
            0.0
        },
        iterations: result.iterations,
    };
    sol.coincidence = sol.rescore().coincidence;
    Ok(sol)
}

/// Feasibility at a given floor, without the epigraph objective.
pub fn is_fakeable(targets: &MatchProbabilityTable, floor: f64) -> Result<bool> {
    let problem = FakingProblem::new(*targets, floor)?;
    let mut lp = build_faking_lp(&problem);
    lp.objective.iter_mut().for_each(|c| *c = 0.0);
    Ok(solve_lp(&lp)?.status == LpStatus::Optimal)
}

/// Both routes to the largest fakeable coincidence floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    /// Largest feasible floor found by bisection (within [`EFFICIENCY_TOL`]).
    pub bisection: f64,
    /// Epigraph objective of the floor-0 LP.
    pub direct: f64,
    pub bisection_steps: usize,
}

/// Largest coincidence floor at which the targets can still be faked, by
/// bisection on the floor.
pub fn max_faking_efficiency(targets: &MatchProbabilityTable) -> Result<f64> {
    Ok(bisect_efficiency(targets)?.0)
}

fn bisect_efficiency(targets: &MatchProbabilityTable) -> Result<(f64, usize)> {
    if is_fakeable(targets, 1.0)? {
        return Ok((1.0, 1));
    }
    if !is_fakeable(targets, 0.0)? {
        return Err(Error::Usage(
            "faking LP is infeasible even at floor 0".into(),
        ));
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut steps = 2;
    while hi - lo > EFFICIENCY_TOL {
        let mid = 0.5 * (lo + hi);
        if is_fakeable(targets, mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
        steps += 1;
    }
    Ok((lo, steps))
}

/// Bisection value alongside the directly optimized epigraph objective.
pub fn efficiency_report(targets: &MatchProbabilityTable) -> Result<EfficiencyReport> {
    let (bisection, bisection_steps) = bisect_efficiency(targets)?;
    let direct = solve_faking(&FakingProblem::new(*targets, 0.0)?)?.objective;
    Ok(EfficiencyReport {
        bisection,
        direct,
        bisection_steps,
    })
}

/// Outcome of one loophole-model trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DetectedPair {
    pub y1: Option<Spin>,
    pub y2: Option<Spin>,
}

impl DetectedPair {
    pub fn d1(&self) -> bool {
        self.y1.is_some()
    }

    pub fn d2(&self) -> bool {
        self.y2.is_some()
    }
}

/// Sampler over a feasible faking solution.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopholeModel {
    strategies: Vec<AugmentedStrategy>,
    cumulative: Vec<f64>,
}

impl LoopholeModel {
    pub fn new(solution: &LpSolution) -> Result<Self> {
        if !solution.is_feasible() {
            return Err(Error::Usage(format!(
                "cannot sample from a {:?} faking solution",
                solution.status
            )));
        }
        if solution.weights.is_empty() {
            return Err(Error::Usage(
                "faking solution has no weighted strategies".into(),
            ));
        }
        let strategies = solution
            .weights
            .iter()
            .map(|w| {
                if w.index >= STRATEGY_COUNT || w.weight.is_nan() || w.weight < 0.0 {
                    return Err(Error::config(format!("bad strategy weight {w:?}")));
                }
                Ok(AugmentedStrategy::from_index(w.index))
            })
            .collect::<Result<Vec<_>>>()?;
        let weights: Vec<f64> = solution.weights.iter().map(|w| w.weight).collect();
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("strategy weights sum to {total}")));
        }
        let cumulative = rng::cumulative(&weights.iter().map(|w| w / total).collect::<Vec<_>>());
        Ok(LoopholeModel {
            strategies,
            cumulative,
        })
    }

    /// Draws one strategy by cumulative-weight inversion and reports spins
    /// for detected particles.
    pub fn sample<R: Rng + ?Sized>(&self, pair: SettingPair, rng: &mut R) -> DetectedPair {
        let u = rng::uniform(rng);
        let st = &self.strategies[rng::invert_cumulative(&self.cumulative, u)];
        let (x1, x2): (Setting, Setting) = (pair.x1, pair.x2);
        DetectedPair {
            y1: st.d1[x1.index()].then(|| st.table.spin1(x1)),
            y2: st.d2[x2.index()].then(|| st.table.spin2(x2)),
        }
    }
}

/// One trial from a faking solution.
pub fn sample_loophole_model<R: Rng + ?Sized>(
    solution: &LpSolution,
    pair: SettingPair,
    rng: &mut R,
) -> Result<DetectedPair> {
    Ok(LoopholeModel::new(solution)?.sample(pair, rng))
}

/// Checks that always-detecting strategies restrict to the plain tables.
pub fn always_detect_tables() -> Vec<CounterfactualTable> {
    let v: Vec<CounterfactualTable> = enumerate_augmented_strategies()
        .into_iter()
        .filter(AugmentedStrategy::always_detects)
        .map(|s| s.table)
        .collect();
    debug_assert_eq!(v.len(), TABLE_COUNT);
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::counterfactuals::Population;
    use crate::lhv_models::{lhv_match_table, DeterministicLhv};
    use crate::quantum_model::{match_table, AngleTriple};
    use approx::assert_abs_diff_eq;
    use std::collections::HashSet;

    fn quantum_targets() -> MatchProbabilityTable {
        match_table(&AngleTriple::from_degrees([60.0, 0.0, 120.0]))
    }

    #[test]
    fn enumeration_examples() {
        let all = enumerate_augmented_strategies();
        assert_eq!(all.len(), 4096);
        assert_eq!(all.iter().collect::<HashSet<_>>().len(), 4096);
        let first = all[0];
        assert!(first
            .table
            .y1
            .iter()
            .chain(&first.table.y2)
            .all(|&s| s == Spin::Down));
        assert!(first.d1.iter().chain(&first.d2).all(|&d| !d));
        for (i, s) in all.iter().enumerate() {
            assert_eq!(s.index(), i);
        }
        let tables = always_detect_tables();
        assert_eq!(tables, CounterfactualTable::all().collect::<Vec<_>>());
    }

    #[test]
    fn lp_shape() {
        let lp = build_faking_lp(&FakingProblem::new(quantum_targets(), 0.0).unwrap());
        assert_eq!(lp.n_vars, 4097);
        assert_eq!(lp.count(Sense::Eq), 10);
        assert_eq!(lp.constraints[0].label, "normalization");
        assert_eq!(lp.count(Sense::Ge), 9);
        assert_eq!(lp.count(Sense::Le), 9);
        assert_eq!(lp.inequalities().count(), 18);
        assert_eq!(
            build_faking_lp_with(
                &FakingProblem::new(quantum_targets(), 0.3).unwrap(),
                Execution::Sequential
            ),
            build_faking_lp_with(
                &FakingProblem::new(quantum_targets(), 0.3).unwrap(),
                Execution::Parallel
            ),
        );
    }

    #[test]
    fn floor_one_forces_full_detection() {
        let lp = build_faking_lp(&FakingProblem::new(MatchProbabilityTable::zeros(), 1.0).unwrap());
        // every floor row has coefficient 1 exactly on strategies detecting that pair
        for (k, pair) in SettingPair::all().enumerate() {
            let row = &lp.constraints[10 + k];
            for s in 0..STRATEGY_COUNT {
                let st = AugmentedStrategy::from_index(s);
                assert_eq!(row.coeffs[s] == 1.0, st.coincident(pair));
            }
        }
        let sol = solve_faking(&FakingProblem::new(MatchProbabilityTable::zeros(), 1.0).unwrap())
            .unwrap();
        assert!(sol.is_feasible());
        for w in &sol.weights {
            assert!(AugmentedStrategy::from_index(w.index).always_detects());
        }
    }

    #[test]
    fn explicit_witness_is_optimal() {
        let sol = solve_faking(&FakingProblem::new(MatchProbabilityTable::zeros(), 0.0).unwrap())
            .unwrap();
        assert!(sol.is_feasible());
        assert_abs_diff_eq!(sol.objective, 1.0, epsilon = 1e-9);
        // the explicit witness: y1 all +1, y2 all -1, always detected
        let witness = AugmentedStrategy {
            table: CounterfactualTable::from_values([1, 1, 1], [-1, -1, -1]).unwrap(),
            d1: [true; 3],
            d2: [true; 3],
        };
        let lp = build_faking_lp(&sol.problem);
        let mut x = vec![0.0; 4097];
        x[witness.index()] = 1.0;
        x[4096] = 1.0;
        assert_eq!(lp.max_violation(&x), 0.0);
    }

    #[test]
    fn quantum_targets_floor_endpoints() {
        let targets = quantum_targets();
        let full = solve_faking(&FakingProblem::new(targets, 1.0).unwrap()).unwrap();
        assert_eq!(full.status, FakingStatus::Infeasible);
        let open = solve_faking(&FakingProblem::new(targets, 0.0).unwrap()).unwrap();
        assert!(open.is_feasible());
        assert!(
            open.objective > 0.0 && open.objective < 1.0,
            "{}",
            open.objective
        );
    }

    #[test]
    fn feasible_solution_rescores_to_targets() {
        let targets = quantum_targets();
        let sol = solve_faking(&FakingProblem::new(targets, 0.0).unwrap()).unwrap();
        let r = sol.rescore();
        assert!((r.total_weight - 1.0).abs() <= 1e-9);
        assert!(sol.weights.iter().all(|w| w.weight >= 0.0));
        for pair in SettingPair::all() {
            let (i, j) = (pair.x1.index(), pair.x2.index());
            assert!(
                (r.coincident_match[i][j] - targets.p[i][j] * r.coincidence[i][j]).abs() <= 1e-9
            );
            let cond = r.conditional_match()[i][j].unwrap();
            assert!((cond - targets.p[i][j]).abs() <= 1e-9, "{pair}: {cond}");
            assert!(r.coincidence[i][j] >= sol.objective - 1e-9);
        }
        // hidden spins form a local mixture, so their statistic obeys the bound
        let hidden = MatchProbabilityTable { p: r.hidden_match };
        assert!(hidden.bell_statistic() <= 1e-12);
    }

    #[test]
    fn lhv_targets_are_fully_fakeable() {
        let tables = vec![
            CounterfactualTable::from_index(7),
            CounterfactualTable::from_index(42),
            CounterfactualTable::from_index(13),
        ];
        let model = DeterministicLhv::new(Population::new(tables, vec![0.5, 0.25, 0.25]).unwrap());
        let targets = lhv_match_table(&model);
        assert_eq!(max_faking_efficiency(&targets).unwrap(), 1.0);
        assert_eq!(
            max_faking_efficiency(&MatchProbabilityTable::zeros()).unwrap(),
            1.0
        );
    }

    #[test]
    fn sampling_requires_feasible_solution() {
        let sol = solve_faking(&FakingProblem::new(quantum_targets(), 1.0).unwrap()).unwrap();
        let mut r = rng::root(1);
        assert!(matches!(
            sample_loophole_model(&sol, SettingPair::new(0, 0).unwrap(), &mut r),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn always_detect_solution_always_detects() {
        let sol = solve_faking(&FakingProblem::new(MatchProbabilityTable::zeros(), 1.0).unwrap())
            .unwrap();
        let model = LoopholeModel::new(&sol).unwrap();
        let mut r = rng::root(2);
        for pair in SettingPair::all() {
            for _ in 0..200 {
                let out = model.sample(pair, &mut r);
                assert!(out.d1() && out.d2());
            }
        }
    }

    #[test]
    fn strategy_json_uses_bits() {
        let s = AugmentedStrategy::from_index((1 << 6) | (0b101 << 3) | 0b011);
        let json = serde_json::to_string(&s).unwrap();
        assert!(json.contains(r#""d1":[1,0,1]"#), "{json}");
        assert!(json.contains(r#""d2":[0,1,1]"#), "{json}");
        assert_eq!(serde_json::from_str::<AugmentedStrategy>(&json).unwrap(), s);
    }

    #[test]
    fn floor_validation() {
        assert!(FakingProblem::new(MatchProbabilityTable::zeros(), 1.5).is_err());
        assert!(FakingProblem::new(MatchProbabilityTable::zeros(), -0.1).is_err());
    }
}
