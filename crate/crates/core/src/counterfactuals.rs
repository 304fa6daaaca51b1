//! Deterministic counterfactual units and the interaction pattern that no
//! local unit can realize.
//!
//! Under locality a unit is fully described by six spins `Y1(x)` and `Y2(x)`.
//! The match indicator is `M(x1, x2) = 1{Y1(x1) = Y2(x2)}`. The pattern
//! `M(0,0)=0, M(1,2)=1, M(0,2)=0, M(1,0)=0` is a causal interaction for `M`;
//! if a population has `E[M12] - E[M02] - E[M10] - E[M00] > 0` some unit must
//! carry it, and no local table does.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantum_model::{match_probability, AngleTriple};
use crate::setting::{Setting, SettingPair, Spin};

/// Number of deterministic local tables, `2^6`.
pub const TABLE_COUNT: usize = 64;

/// Counterfactual spins of one local unit.
///
/// Tables are enumerated by a 6-bit index: bit 5 is `y1[0]`, then `y1[1]`,
/// `y1[2]`, `y2[0]`, `y2[1]`, and bit 0 is `y2[2]`; a set bit means `+1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CounterfactualTable {
    pub y1: [Spin; 3],
    pub y2: [Spin; 3],
}

impl CounterfactualTable {
    pub fn new(y1: [Spin; 3], y2: [Spin; 3]) -> Self {
        CounterfactualTable { y1, y2 }
    }

    /// Builds a table from `±1` integers.
    pub fn from_values(y1: [i64; 3], y2: [i64; 3]) -> Result<Self> {
        let conv = |v: [i64; 3]| -> Result<[Spin; 3]> {
            Ok([
                Spin::from_value(v[0])?,
                Spin::from_value(v[1])?,
                Spin::from_value(v[2])?,
            ])
        };
        Ok(CounterfactualTable {
            y1: conv(y1)?,
            y2: conv(y2)?,
        })
    }

    pub fn from_index(index: usize) -> Self {
        assert!(index < TABLE_COUNT, "table index {index} out of range");
        let bit = |b: usize| Spin::from_bit(index >> b & 1 == 1);
        CounterfactualTable {
            y1: [bit(5), bit(4), bit(3)],
            y2: [bit(2), bit(1), bit(0)],
        }
    }

    pub fn index(&self) -> usize {
        self.y1
            .iter()
            .chain(&self.y2)
            .fold(0, |acc, s| acc << 1 | usize::from(s.bit()))
    }

    /// All 64 tables in index order.
    pub fn all() -> impl Iterator<Item = CounterfactualTable> {
        (0..TABLE_COUNT).map(CounterfactualTable::from_index)
    }

    pub fn spin1(&self, x: Setting) -> Spin {
        self.y1[x.index()]
    }

    pub fn spin2(&self, x: Setting) -> Spin {
        self.y2[x.index()]
    }

    pub fn matches(&self, pair: SettingPair) -> bool {
        self.spin1(pair.x1) == self.spin2(pair.x2)
    }

    /// `y1[i] = -y2[i]` for every setting.
    pub fn has_anticorrelated_diagonal(&self) -> bool {
        (0..3).all(|i| self.y1[i] == -self.y2[i])
    }

    pub fn satisfies(&self, filter: TableFilter) -> bool {
        match filter {
            TableFilter::All => true,
            TableFilter::AntiCorrelatedDiagonal => self.has_anticorrelated_diagonal(),
            TableFilter::EqualSpins => self.y1 == self.y2,
            TableFilter::AllSpinsEqual => {
                self.y1 == self.y2 && self.y1.iter().all(|&s| s == self.y1[0])
            }
        }
    }
}

impl fmt::Display for CounterfactualTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Y1=({},{},{}) Y2=({},{},{})",
            self.y1[0], self.y1[1], self.y1[2], self.y2[0], self.y2[1], self.y2[2]
        )
    }
}

/// Subsets of the 64 local tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFilter {
    All,
    /// The 8 tables with `y1[i] = -y2[i]`, i.e. `M(i,i) = 0`.
    AntiCorrelatedDiagonal,
    /// The 8 tables with `y1 = y2`.
    EqualSpins,
    /// The 2 tables whose six spins are identical, so every `M` is 1.
    AllSpinsEqual,
}

/// `M(x1, x2)` for a local unit.
pub fn match_indicator(unit: &CounterfactualTable, x1: u8, x2: u8) -> Result<u8> {
    let pair = SettingPair::new(x1, x2)?;
    Ok(u8::from(unit.matches(pair)))
}

/// The four match values entering the Bell statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MPattern {
    pub m00: bool,
    pub m12: bool,
    pub m02: bool,
    pub m10: bool,
}

impl MPattern {
    /// The causal-interaction pattern `(m00, m12, m02, m10) = (0, 1, 0, 0)`.
    pub const INTERACTION: MPattern = MPattern {
        m00: false,
        m12: true,
        m02: false,
        m10: false,
    };

    /// Pattern from 0/1 values in the order `(m00, m12, m02, m10)`.
    pub fn from_bits(m00: u8, m12: u8, m02: u8, m10: u8) -> Result<Self> {
        let b = |v: u8, name: &str| match v {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(Error::domain(format!("{name} must be 0 or 1, got {v}"))),
        };
        Ok(MPattern {
            m00: b(m00, "m00")?,
            m12: b(m12, "m12")?,
            m02: b(m02, "m02")?,
            m10: b(m10, "m10")?,
        })
    }

    pub fn of_table(t: &CounterfactualTable) -> Self {
        let m = |a: u8, b: u8| t.matches(SettingPair::new(a, b).expect("static pair"));
        MPattern {
            m00: m(0, 0),
            m12: m(1, 2),
            m02: m(0, 2),
            m10: m(1, 0),
        }
    }

    /// `m12 - m02 - m10 - m00` as an integer in `[-3, 1]`.
    pub fn statistic(&self) -> i8 {
        i8::from(self.m12) - i8::from(self.m02) - i8::from(self.m10) - i8::from(self.m00)
    }
}

/// Anything that carries a match pattern over the four statistic cells.
pub trait PatternUnit {
    fn m_pattern(&self) -> MPattern;
}

impl PatternUnit for CounterfactualTable {
    fn m_pattern(&self) -> MPattern {
        MPattern::of_table(self)
    }
}

impl PatternUnit for MPattern {
    fn m_pattern(&self) -> MPattern {
        *self
    }
}

/// True iff `p` is exactly the interaction pattern whose existence refutes
/// locality.
pub fn theorem1_witness_check(p: MPattern) -> bool {
    p == MPattern::INTERACTION
}

/// Weighted collection of units; the weights define `E[·]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population<U> {
    pub units: Vec<U>,
    pub weights: Vec<f64>,
}

impl<U> Population<U> {
    pub const WEIGHT_SUM_TOL: f64 = 1e-12;

    pub fn new(units: Vec<U>, weights: Vec<f64>) -> Result<Self> {
        if units.is_empty() {
            return Err(Error::domain("population has no units"));
        }
        if units.len() != weights.len() {
            return Err(Error::domain(format!(
                "{} units but {} weights",
                units.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::domain(format!(
                "weight {w} is not a nonnegative real"
            )));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > Self::WEIGHT_SUM_TOL {
            return Err(Error::domain(format!("weights sum to {total}, not 1")));
        }
        Ok(Population { units, weights })
    }

    pub fn uniform(units: Vec<U>) -> Result<Self> {
        let n = units.len();
        if n == 0 {
            return Err(Error::domain("population has no units"));
        }
        // put the 1/n rounding residue on the last weight
        let mut weights = vec![1.0 / n as f64; n];
        let head: f64 = weights[..n - 1].iter().sum();
        weights[n - 1] = 1.0 - head;
        Population::new(units, weights)
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&U, f64)> {
        self.units.iter().zip(self.weights.iter().copied())
    }
}

impl<U: PatternUnit> Population<U> {
    /// `E[M12] - E[M02] - E[M10] - E[M00]` under the population weights.
    pub fn bell_statistic(&self) -> f64 {
        self.iter()
            .map(|(u, w)| w * f64::from(u.m_pattern().statistic()))
            .sum()
    }
}

/// `e12 - e02 - e10 - e00` for match expectations in `[0, 1]`.
pub fn bell_statistic(e12: f64, e02: f64, e10: f64, e00: f64) -> Result<f64> {
    for (name, v) in [("e12", e12), ("e02", e02), ("e10", e10), ("e00", e00)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::domain(format!("{name} = {v} is outside [0,1]")));
        }
    }
    Ok(e12 - e02 - e10 - e00)
}

/// Index of the first unit carrying the interaction pattern, provided the
/// weighted statistic is strictly positive. Returns `None` at a statistic of
/// exactly zero.
pub fn find_interaction_unit<U: PatternUnit>(pop: &Population<U>) -> Option<usize> {
    if pop.bell_statistic() <= 0.0 {
        return None;
    }
    pop.units
        .iter()
        .position(|u| theorem1_witness_check(u.m_pattern()))
}

/// First local table (in index order) whose four statistic matches equal `p`.
pub fn exists_local_table_with_pattern(
    p: MPattern,
    require_anticorrelated_diagonal: bool,
) -> Option<CounterfactualTable> {
    let filter = if require_anticorrelated_diagonal {
        TableFilter::AntiCorrelatedDiagonal
    } else {
        TableFilter::All
    };
    CounterfactualTable::all().find(|t| t.satisfies(filter) && MPattern::of_table(t) == p)
}

/// Maximum of the Bell statistic over the 64 local tables. Always `0`.
pub fn lhv_max_bell_statistic() -> f64 {
    lhv_max_bell_statistic_over(TableFilter::All).0
}

/// Maximum over a filtered subset, with the first maximizing table.
pub fn lhv_max_bell_statistic_over(filter: TableFilter) -> (f64, CounterfactualTable) {
    let mut best: Option<(i8, CounterfactualTable)> = None;
    for t in CounterfactualTable::all().filter(|t| t.satisfies(filter)) {
        let s = MPattern::of_table(&t).statistic();
        if best.is_none_or(|(b, _)| s > b) {
            best = Some((s, t));
        }
    }
    let (s, t) = best.expect("every filter admits at least one table");
    (f64::from(s), t)
}

/// `sin²(Δ12/2) - sin²(Δ02/2) - sin²(Δ10/2)`: the quantum Bell statistic at
/// these axes. Positive values refute local hidden variables.
pub fn violation_margin(angles: &AngleTriple) -> f64 {
    let s = |i: u8, j: u8| {
        let (i, j) = (
            Setting::new(i).expect("static"),
            Setting::new(j).expect("static"),
        );
        match_probability(angles.delta(i, j)).expect("separation in [0, π]")
    };
    s(1, 2) - s(0, 2) - s(1, 0)
}

// ---------------------------------------------------------------------------
// Mechanized proof by contradiction
// ---------------------------------------------------------------------------

/// Which particle a spin variable belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Particle {
    #[serde(rename = "Y1")]
    One,
    #[serde(rename = "Y2")]
    Two,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpinVar {
    pub particle: Particle,
    pub setting: Setting,
}

impl SpinVar {
    pub fn y1(x: u8) -> Self {
        SpinVar {
            particle: Particle::One,
            setting: Setting::new(x).expect("setting"),
        }
    }

    pub fn y2(x: u8) -> Self {
        SpinVar {
            particle: Particle::Two,
            setting: Setting::new(x).expect("setting"),
        }
    }

    fn slot(self) -> usize {
        match self.particle {
            Particle::One => self.setting.index(),
            Particle::Two => 3 + self.setting.index(),
        }
    }
}

impl fmt::Display for SpinVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = match self.particle {
            Particle::One => 1,
            Particle::Two => 2,
        };
        write!(f, "Y{p}({})", self.setting)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Assignment {
    pub var: SpinVar,
    pub spin: Spin,
}

impl fmt::Display for Assignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={}", self.var, self.spin)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepKind {
    Assumed,
    Derived,
    Contradiction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub kind: StepKind,
    pub statement: Vec<Assignment>,
    pub justification: String,
}

/// The two ways `M(1,2) = 1` can hold under locality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    /// `Y1(1) = Y2(2) = +1`
    A,
    /// `Y1(1) = Y2(2) = -1`
    B,
}

impl Branch {
    pub const BOTH: [Branch; 2] = [Branch::A, Branch::B];

    pub fn spin(self) -> Spin {
        match self {
            Branch::A => Spin::Up,
            Branch::B => Spin::Down,
        }
    }

    pub fn label(self) -> char {
        match self {
            Branch::A => 'a',
            Branch::B => 'b',
        }
    }
}

impl std::str::FromStr for Branch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a" | "A" => Ok(Branch::A),
            "b" | "B" => Ok(Branch::B),
            _ => Err(Error::domain(format!(
                "unknown branch '{s}', expected a or b"
            ))),
        }
    }
}

/// Every `(Y1(1), Y2(2))` assignment compatible with `M(1,2) = 1`, as branches.
pub fn branches_forced_by_match() -> Vec<Branch> {
    let mut out = Vec::new();
    for y1 in [Spin::Up, Spin::Down] {
        for y2 in [Spin::Up, Spin::Down] {
            if y1 == y2 {
                out.push(if y1 == Spin::Up { Branch::A } else { Branch::B });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DerivationTrace {
    pub branch: Branch,
    pub steps: Vec<TraceStep>,
}

impl DerivationTrace {
    /// The incompatible pair of assignments closing the trace, if any.
    pub fn contradiction(&self) -> Option<(Assignment, Assignment)> {
        let last = self.steps.last()?;
        match (last.kind, last.statement.as_slice()) {
            (StepKind::Contradiction, [a, b]) if a.var == b.var && a.spin != b.spin => {
                Some((*a, *b))
            }
            _ => None,
        }
    }

    pub fn ends_in_contradiction(&self) -> bool {
        self.contradiction().is_some()
    }
}

impl fmt::Display for DerivationTrace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = self.branch.spin();
        writeln!(f, "Branch ({}): Y1(1) = Y2(2) = {s}", self.branch.label())?;
        for (n, step) in self.steps.iter().enumerate() {
            let stmt = step
                .statement
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(", ");
            match step.kind {
                StepKind::Contradiction => writeln!(
                    f,
                    "  {:>2}. contradiction: {stmt}  [{}]",
                    n + 1,
                    step.justification
                )?,
                kind => writeln!(
                    f,
                    "  {:>2}. {:<8} {stmt}  [{}]",
                    n + 1,
                    format!("{kind:?}").to_lowercase(),
                    step.justification
                )?,
            }
        }
        Ok(())
    }
}

/// Match constraints used by the proof, in the order it applies them.
const PROOF_CONSTRAINTS: [(u8, u8, bool); 3] = [(0, 2, false), (1, 0, false), (0, 0, false)];

/// Replays the proof of the interaction pattern's impossibility for one
/// branch of `M(1,2) = 1`.
pub fn theorem1_contradiction_trace(branch: Branch) -> DerivationTrace {
    let s = branch.spin();
    let assumptions = [
        Assignment {
            var: SpinVar::y1(1),
            spin: s,
        },
        Assignment {
            var: SpinVar::y2(2),
            spin: s,
        },
    ];
    let constraints =
        PROOF_CONSTRAINTS.map(|(a, b, m)| (SettingPair::new(a, b).expect("static pair"), m));
    let mut steps = vec![TraceStep {
        kind: StepKind::Assumed,
        statement: assumptions.to_vec(),
        justification: format!("M(1,2)=1, case ({})", branch.label()),
    }];
    steps.extend(propagate(&assumptions, &constraints));
    DerivationTrace { branch, steps }
}

/// Unit propagation of match constraints over spin variables.
///
/// Constraints are visited in the given order, repeatedly, until each has been
/// used or none can fire. A constraint with one side known fixes the other. A
/// constraint with both sides known and violated derives the value of the
/// earlier-assigned variable from the later one and closes with a
/// contradiction step.
fn propagate(assumptions: &[Assignment], constraints: &[(SettingPair, bool)]) -> Vec<TraceStep> {
    // (spin, order of assignment)
    let mut known: [Option<(Spin, usize)>; 6] = [None; 6];
    let mut clock = 0;
    for a in assumptions {
        known[a.var.slot()] = Some((a.spin, clock));
        clock += 1;
    }
    let mut used = vec![false; constraints.len()];
    let mut steps = Vec::new();

    loop {
        let mut progressed = false;
        for (k, &(pair, must_match)) in constraints.iter().enumerate() {
            if used[k] {
                continue;
            }
            let (v1, v2) = (
                SpinVar {
                    particle: Particle::One,
                    setting: pair.x1,
                },
                SpinVar {
                    particle: Particle::Two,
                    setting: pair.x2,
                },
            );
            let implied = |s: Spin| if must_match { s } else { -s };
            let m = u8::from(must_match);
            match (known[v1.slot()], known[v2.slot()]) {
                (None, None) => continue,
                (Some((s, _)), None) | (None, Some((s, _))) => {
                    let (from, to) = if known[v1.slot()].is_some() {
                        (v1, v2)
                    } else {
                        (v2, v1)
                    };
                    let value = implied(s);
                    known[to.slot()] = Some((value, clock));
                    clock += 1;
                    steps.push(TraceStep {
                        kind: StepKind::Derived,
                        statement: vec![Assignment {
                            var: to,
                            spin: value,
                        }],
                        justification: format!("M{pair}={m} and {from}={s}"),
                    });
                }
                (Some((s1, t1)), Some((s2, t2))) => {
                    if implied(s1) != s2 {
                        let ((older, old_spin), (newer, new_spin)) = if t1 < t2 {
                            ((v1, s1), (v2, s2))
                        } else {
                            ((v2, s2), (v1, s1))
                        };
                        let derived = Assignment {
                            var: older,
                            spin: implied(new_spin),
                        };
                        steps.push(TraceStep {
                            kind: StepKind::Derived,
                            statement: vec![derived],
                            justification: format!("M{pair}={m} and {newer}={new_spin}"),
                        });
                        steps.push(TraceStep {
                            kind: StepKind::Contradiction,
                            statement: vec![
                                Assignment {
                                    var: older,
                                    spin: old_spin,
                                },
                                derived,
                            ],
                            justification: format!(
                                "{older} cannot be both {old_spin} and {}",
                                derived.spin
                            ),
                        });
                        return steps;
                    }
                }
            }
            used[k] = true;
            progressed = true;
        }
        if !progressed {
            return steps;
        }
    }
}
