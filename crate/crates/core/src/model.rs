//! Trait catalog, rate kernels, scaling knobs and the fitness landscape they
//! induce.
//!
//! The trait space is a finite catalog. Pairwise kernels are dense square
//! matrices indexed by declaration order; the fitness order (`x ≺ y` when `y`
//! invades the equilibrium of `x` but not conversely) is computed from the
//! rates, never assumed from the declaration order.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{strict_sign, NumericPolicy};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("catalog must contain at least one trait")]
    EmptyCatalog,
    #[error("trait index {index} out of range for a catalog of {len} traits")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("{what} must be finite and nonnegative, got {value}")]
    InvalidRate { what: String, value: f64 },
    #[error("{what} has dimension {got}, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("duplicate trait id {0:?}")]
    DuplicateId(String),
    #[error("trait {0} has zero self-competition; its equilibrium mass is undefined")]
    SingularModel(usize),
    #[error(
        "traits {x} and {y} violate the fitness order: f({x},{y}) = {f_xy}, f({y},{x}) = {f_yx}"
    )]
    OrderViolation {
        x: usize,
        y: usize,
        f_xy: f64,
        f_yx: f64,
    },
    #[error("the invasion relation does not chain the catalog into one sequence: {0}")]
    NoFitnessChain(String),
    #[error("invalid scaling regime: {0}")]
    InvalidRegime(String),
    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),
}

/// Dense row-major square matrix of nonnegative rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    /// Every entry, diagonal included, equal to `value`.
    pub fn uniform(n: usize, value: f64) -> Self {
        Self {
            n,
            data: vec![value; n * n],
        }
    }

    /// `diagonal` on the diagonal, `neighbor` on the first off-diagonals and
    /// zero elsewhere.
    pub fn nearest_neighbor(n: usize, diagonal: f64, neighbor: f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.set(i, i, diagonal);
            if i + 1 < n {
                m.set(i, i + 1, neighbor);
                m.set(i + 1, i, neighbor);
            }
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, ModelError> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for row in rows {
            if row.len() != n {
                return Err(ModelError::DimensionMismatch {
                    what: "matrix row",
                    got: row.len(),
                    expected: n,
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self { n, data })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.n + j] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.n.max(1)).map(<[f64]>::to_vec).collect()
    }

    /// Copy with rows and columns reordered so that new index `k` is old index `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut m = Self::zeros(self.n);
        for (a, &i) in perm.iter().enumerate() {
            for (b, &j) in perm.iter().enumerate() {
                m.set(a, b, self.get(i, j));
            }
        }
        m
    }
}

/// Demographic rates of one trait.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitParams {
    pub id: String,
    /// Clonal birth rate per individual.
    pub birth: f64,
    /// Natural death rate per individual.
    pub death: f64,
}

impl TraitParams {
    pub fn new(id: impl Into<String>, birth: f64, death: f64) -> Self {
        Self {
            id: id.into(),
            birth,
            death,
        }
    }

    /// Malthusian growth rate `b - d`.
    #[inline]
    pub fn net_growth(&self) -> f64 {
        self.birth - self.death
    }
}

/// How a mutation picks the innovation among catalog traits not yet seen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MutantPolicy {
    /// The next trait up the fitness ladder above every discovered trait.
    FitterThanAll,
    /// The first undiscovered trait in declaration order.
    NextInCatalog,
    /// The first undiscovered trait of a scripted arrival order.
    ExplicitSequence(Vec<usize>),
}

impl MutantPolicy {
    /// The mutant the next mutation would produce, or `None` once the policy
    /// has nothing left to introduce. `rank[x]` is the fitness rank of `x`;
    /// only [`MutantPolicy::FitterThanAll`] reads it.
    pub fn next_mutant(&self, discovered: &[bool], rank: &[usize]) -> Option<usize> {
        match self {
            MutantPolicy::FitterThanAll => {
                let top = (0..discovered.len())
                    .filter(|&x| discovered[x])
                    .map(|x| rank[x])
                    .max();
                let wanted = top.map_or(0, |r| r + 1);
                (0..discovered.len()).find(|&x| rank[x] == wanted && !discovered[x])
            }
            MutantPolicy::NextInCatalog => (0..discovered.len()).find(|&x| !discovered[x]),
            MutantPolicy::ExplicitSequence(seq) => seq
                .iter()
                .copied()
                .find(|&x| x < discovered.len() && !discovered[x]),
        }
    }
}

/// The model's parameter space: traits with their rates and the pairwise
/// competition and migration kernels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitCatalog {
    traits: Vec<TraitParams>,
    /// Macroscopic competition kernel `alpha_0(x, y)`: pressure on `x` from `y`.
    competition: SquareMatrix,
    /// Migration kernel `m(x, y)`: rate at which an `x` individual switches to `y`.
    migration: SquareMatrix,
    /// Mutation weight `mu(x)`.
    mutation: Vec<f64>,
    policy: MutantPolicy,
}

impl TraitCatalog {
    /// Checks only structure (dimensions, finiteness, nonnegativity, policy
    /// indices). Demographic assumptions are reported by
    /// [`validate_assumptions`], not enforced here.
    pub fn new(
        traits: Vec<TraitParams>,
        competition: SquareMatrix,
        migration: SquareMatrix,
        mutation: Vec<f64>,
        policy: MutantPolicy,
    ) -> Result<Self, ModelError> {
        let n = traits.len();
        if n == 0 {
            return Err(ModelError::EmptyCatalog);
        }
        for (what, got) in [
            ("competition kernel", competition.dim()),
            ("migration kernel", migration.dim()),
            ("mutation weights", mutation.len()),
        ] {
            if got != n {
                return Err(ModelError::DimensionMismatch {
                    what,
                    got,
                    expected: n,
                });
            }
        }
        for (i, t) in traits.iter().enumerate() {
            check_rate(&format!("birth rate of trait {i}"), t.birth)?;
            check_rate(&format!("death rate of trait {i}"), t.death)?;
            if traits[..i].iter().any(|o| o.id == t.id) {
                return Err(ModelError::DuplicateId(t.id.clone()));
            }
        }
        for i in 0..n {
            check_rate(&format!("mutation weight of trait {i}"), mutation[i])?;
            for j in 0..n {
                check_rate(&format!("competition({i},{j})"), competition.get(i, j))?;
                check_rate(&format!("migration({i},{j})"), migration.get(i, j))?;
            }
        }
        if let MutantPolicy::ExplicitSequence(seq) = &policy {
            if let Some(&bad) = seq.iter().find(|&&x| x >= n) {
                return Err(ModelError::IndexOutOfRange { index: bad, len: n });
            }
        }
        Ok(Self {
            traits,
            competition,
            migration,
            mutation,
            policy,
        })
    }

    /// Traits `x_0, x_1, ...` with the given birth rates and a common death
    /// rate, nearest-neighbor competition `alpha` (diagonal included) and
    /// nearest-neighbor migration `m` in declaration order, uniform mutation
    /// weight `mu` and the [`MutantPolicy::FitterThanAll`] policy.
    pub fn ladder(births: &[f64], death: f64, alpha: f64, m: f64, mu: f64) -> Result<Self, ModelError> {
        let n = births.len();
        let traits = births
            .iter()
            .enumerate()
            .map(|(i, &b)| TraitParams::new(format!("x{i}"), b, death))
            .collect();
        let migration = SquareMatrix::nearest_neighbor(n, 0.0, m);
        Self::new(
            traits,
            SquareMatrix::nearest_neighbor(n, alpha, alpha),
            migration,
            vec![mu; n],
            MutantPolicy::FitterThanAll,
        )
    }

    pub fn len(&self) -> usize {
        self.traits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traits.is_empty()
    }

    pub fn traits(&self) -> &[TraitParams] {
        &self.traits
    }

    pub fn trait_params(&self, x: usize) -> &TraitParams {
        &self.traits[x]
    }

    pub fn competition(&self) -> &SquareMatrix {
        &self.competition
    }

    pub fn migration(&self) -> &SquareMatrix {
        &self.migration
    }

    pub fn mutation(&self) -> &[f64] {
        &self.mutation
    }

    pub fn policy(&self) -> &MutantPolicy {
        &self.policy
    }

    pub fn with_policy(mut self, policy: MutantPolicy) -> Result<Self, ModelError> {
        if let MutantPolicy::ExplicitSequence(seq) = &policy {
            if let Some(&bad) = seq.iter().find(|&&x| x >= self.len()) {
                return Err(ModelError::IndexOutOfRange {
                    index: bad,
                    len: self.len(),
                });
            }
        }
        self.policy = policy;
        Ok(self)
    }

    pub fn with_mutation(mut self, mutation: Vec<f64>) -> Result<Self, ModelError> {
        if mutation.len() != self.len() {
            return Err(ModelError::DimensionMismatch {
                what: "mutation weights",
                got: mutation.len(),
                expected: self.len(),
            });
        }
        for (i, &mu) in mutation.iter().enumerate() {
            check_rate(&format!("mutation weight of trait {i}"), mu)?;
        }
        self.mutation = mutation;
        Ok(self)
    }

    /// True when no trait can ever mutate.
    pub fn is_mutation_free(&self) -> bool {
        self.mutation.iter().all(|&mu| mu == 0.0)
    }

    /// Copy with traits reordered so that new index `k` is old index `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self, ModelError> {
        let mut inverse = vec![0; perm.len()];
        for (k, &i) in perm.iter().enumerate() {
            inverse[i] = k;
        }
        let policy = match &self.policy {
            MutantPolicy::ExplicitSequence(seq) => {
                MutantPolicy::ExplicitSequence(seq.iter().map(|&x| inverse[x]).collect())
            }
            other => other.clone(),
        };
        Self::new(
            perm.iter().map(|&i| self.traits[i].clone()).collect(),
            self.competition.permuted(perm),
            self.migration.permuted(perm),
            perm.iter().map(|&i| self.mutation[i]).collect(),
            policy,
        )
    }

    fn check_index(&self, x: usize) -> Result<(), ModelError> {
        if x < self.len() {
            Ok(())
        } else {
            Err(ModelError::IndexOutOfRange {
                index: x,
                len: self.len(),
            })
        }
    }

    /// Stable point `(b - d) / alpha_0(x, x)` of the single-trait logistic equation.
    pub fn equilibrium_mass(&self, x: usize) -> Result<f64, ModelError> {
        self.check_index(x)?;
        let alpha = self.competition.get(x, x);
        if alpha <= 0.0 {
            return Err(ModelError::SingularModel(x));
        }
        Ok(self.traits[x].net_growth() / alpha)
    }

    /// Invasion fitness `f(x, y) = b(x) - d(x) - alpha_0(x, y) * n(y)`: growth
    /// rate of a rare `x` in a resident `y` population at equilibrium.
    pub fn invasion_fitness(&self, x: usize, y: usize) -> Result<f64, ModelError> {
        self.check_index(x)?;
        let resident = self.equilibrium_mass(y)?;
        Ok(self.traits[x].net_growth() - self.competition.get(x, y) * resident)
    }

    /// Whether `x` and `y` compete in at least one direction.
    pub fn interacts(&self, x: usize, y: usize) -> bool {
        self.competition.get(x, y) > 0.0 || self.competition.get(y, x) > 0.0
    }
}

fn check_rate(what: &str, value: f64) -> Result<(), ModelError> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(ModelError::InvalidRate {
            what: what.to_string(),
            value,
        })
    }
}

/// Population scale `K`, migration scale `epsilon` and mutation scale `sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingRegime {
    k: u64,
    epsilon: f64,
    sigma: f64,
}

impl ScalingRegime {
    pub fn new(k: u64, epsilon: f64, sigma: f64) -> Result<Self, ModelError> {
        if k < 1 {
            return Err(ModelError::InvalidRegime("K must be at least 1".into()));
        }
        for (name, v) in [("epsilon", epsilon), ("sigma", sigma)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(ModelError::InvalidRegime(format!(
                    "{name} must lie in (0, 1], got {v}"
                )));
            }
        }
        Ok(Self { k, epsilon, sigma })
    }

    /// `epsilon = K^-a`, `sigma = K^-c`.
    pub fn from_exponents(k: u64, a: f64, c: f64) -> Result<Self, ModelError> {
        let kf = k as f64;
        Self::new(k, kf.powf(-a), kf.powf(-c))
    }

    #[inline]
    pub fn k(&self) -> u64 {
        self.k
    }

    #[inline]
    pub fn k_f64(&self) -> f64 {
        self.k as f64
    }

    #[inline]
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    #[inline]
    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

/// Nonnegative mass per trait: the coefficient of each Dirac mass in a finite
/// point measure on the catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Configuration(Vec<f64>);

impl Configuration {
    pub fn new(density: Vec<f64>) -> Result<Self, ModelError> {
        if let Some(v) = density.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(ModelError::InvalidConfiguration(format!(
                "densities must be finite and nonnegative, got {v}"
            )));
        }
        Ok(Self(density))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    /// Mass `mass` on trait `x` alone.
    pub fn dirac(len: usize, x: usize, mass: f64) -> Result<Self, ModelError> {
        let mut d = vec![0.0; len];
        if x >= len {
            return Err(ModelError::IndexOutOfRange { index: x, len });
        }
        d[x] = mass;
        Self::new(d)
    }

    pub fn density(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, x: usize) -> f64 {
        self.0.get(x).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, v)| **v > 0.0)
            .map(|(i, _)| i)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// The chain `x_0 ≺ x_1 ≺ ... ≺ x_L` in which every adjacent pair satisfies
/// `f(x_i, x_{i+1}) < 0 < f(x_{i+1}, x_i)`.
///
/// Sign tests ignore pairs that do not compete in either direction; such pairs
/// always coexist and are linked only through the traits between them.
pub fn fitness_order(catalog: &TraitCatalog, policy: &NumericPolicy) -> Result<Vec<usize>, ModelError> {
    let n = catalog.len();
    let masses = (0..n)
        .map(|x| catalog.equilibrium_mass(x))
        .collect::<Result<Vec<_>, _>>()?;
    let fitness = |x: usize, y: usize| {
        catalog.traits[x].net_growth() - catalog.competition.get(x, y) * masses[y]
    };

    // precedes[x][y]: x ≺ y
    let mut precedes = vec![vec![false; n]; n];
    for x in 0..n {
        for y in (x + 1)..n {
            let (f_xy, f_yx) = (fitness(x, y), fitness(y, x));
            let (s_xy, s_yx) = (strict_sign(f_xy, policy.tau_sign), strict_sign(f_yx, policy.tau_sign));
            if s_xy * s_yx < 0 {
                if s_xy < 0 {
                    precedes[x][y] = true;
                } else {
                    precedes[y][x] = true;
                }
            } else if catalog.interacts(x, y) {
                return Err(ModelError::OrderViolation { x, y, f_xy, f_yx });
            }
        }
    }

    // A DAG has a Hamiltonian path iff Kahn's algorithm finds exactly one
    // source at every step; the path is then unique.
    let mut indegree: Vec<usize> = (0..n)
        .map(|y| (0..n).filter(|&x| precedes[x][y]).count())
        .collect();
    let mut removed = vec![false; n];
    let mut order = Vec::with_capacity(n);
    for _ in 0..n {
        let sources: Vec<usize> = (0..n).filter(|&x| !removed[x] && indegree[x] == 0).collect();
        match sources.as_slice() {
            [v] => {
                let v = *v;
                removed[v] = true;
                order.push(v);
                for y in 0..n {
                    if precedes[v][y] {
                        indegree[y] -= 1;
                    }
                }
            }
            [] => {
                return Err(ModelError::NoFitnessChain(
                    "the invasion relation contains a cycle".into(),
                ))
            }
            many => {
                return Err(ModelError::NoFitnessChain(format!(
                    "traits {many:?} are not ordered relative to each other"
                )))
            }
        }
    }
    Ok(order)
}

/// A catalog whose fitness order exists, with the quantities every limit
/// process needs precomputed.
#[derive(Debug, Clone)]
pub struct Landscape {
    catalog: TraitCatalog,
    policy: NumericPolicy,
    order: Vec<usize>,
    rank: Vec<usize>,
    masses: Vec<f64>,
}

impl Landscape {
    pub fn new(catalog: TraitCatalog, policy: NumericPolicy) -> Result<Self, ModelError> {
        let order = fitness_order(&catalog, &policy)?;
        let mut rank = vec![0; catalog.len()];
        for (r, &x) in order.iter().enumerate() {
            rank[x] = r;
        }
        let masses = (0..catalog.len())
            .map(|x| catalog.equilibrium_mass(x))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            catalog,
            policy,
            order,
            rank,
            masses,
        })
    }

    pub fn catalog(&self) -> &TraitCatalog {
        &self.catalog
    }

    pub fn numeric_policy(&self) -> &NumericPolicy {
        &self.policy
    }

    /// Traits from least to most fit.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Position of each trait in [`Landscape::order`].
    pub fn ranks(&self) -> &[usize] {
        &self.rank
    }

    pub fn rank(&self, x: usize) -> usize {
        self.rank[x]
    }

    pub fn mass(&self, x: usize) -> f64 {
        self.masses[x]
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn fitness(&self, x: usize, y: usize) -> f64 {
        self.catalog.traits[x].net_growth() - self.catalog.competition.get(x, y) * self.masses[y]
    }

    /// `x` sits strictly below `y` on the fitness ladder.
    pub fn precedes(&self, x: usize, y: usize) -> bool {
        self.rank[x] < self.rank[y]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AssumptionKind {
    /// Positive birth, nonnegative death, positive growth `b - d` and positive
    /// self-competition.
    RatePositivity,
    /// `f(x, y) * f(y, x) < 0` for every competing pair.
    NonCoexistence,
    /// The invasion relation chains the catalog into one increasing sequence.
    OrderConsistency,
    /// `2 / (b(x2) - d(x2)) >= 1 / f(x1, x0) + 1 / f(x2, x1)` on every
    /// consecutive triple; only sharpens the fixation-time bound.
    GrowthCondition,
    /// Competition and migration vanish between traits more than one rank apart.
    KernelSupport,
}

impl fmt::Display for AssumptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AssumptionKind::RatePositivity => "A1 rate positivity",
            AssumptionKind::NonCoexistence => "A2 non-coexistence",
            AssumptionKind::OrderConsistency => "fitness order",
            AssumptionKind::GrowthCondition => "B3 growth condition",
            AssumptionKind::KernelSupport => "nearest-neighbor kernel support",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Pass,
    Fail,
    /// Could not be evaluated because a prerequisite check failed.
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub traits: Vec<usize>,
    pub values: Vec<f64>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionCheck {
    pub kind: AssumptionKind,
    pub severity: Severity,
    pub outcome: Outcome,
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportStatus {
    Pass,
    /// Every hard check passed but a warning-level check did not.
    Warn,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub checks: Vec<AssumptionCheck>,
    pub fitness_order: Option<Vec<usize>>,
}

impl AssumptionReport {
    pub fn status(&self) -> ReportStatus {
        let failed = |sev| {
            self.checks
                .iter()
                .any(|c| c.severity == sev && c.outcome != Outcome::Pass)
        };
        if failed(Severity::Error) {
            ReportStatus::Fail
        } else if failed(Severity::Warning) {
            ReportStatus::Warn
        } else {
            ReportStatus::Pass
        }
    }

    /// True only when every check, warnings included, passed.
    pub fn is_pass(&self) -> bool {
        self.status() == ReportStatus::Pass
    }

    pub fn check(&self, kind: AssumptionKind) -> &AssumptionCheck {
        self.checks
            .iter()
            .find(|c| c.kind == kind)
            .expect("report carries every assumption kind")
    }
}

fn finish(kind: AssumptionKind, severity: Severity, violations: Vec<Violation>) -> AssumptionCheck {
    AssumptionCheck {
        kind,
        severity,
        outcome: if violations.is_empty() {
            Outcome::Pass
        } else {
            Outcome::Fail
        },
        violations,
    }
}

fn skipped(kind: AssumptionKind, severity: Severity) -> AssumptionCheck {
    AssumptionCheck {
        kind,
        severity,
        outcome: Outcome::Skipped,
        violations: Vec::new(),
    }
}

/// Evaluates every modelling assumption; failures are recorded, never raised.
pub fn validate_assumptions(catalog: &TraitCatalog, policy: &NumericPolicy) -> AssumptionReport {
    let n = catalog.len();
    let mut checks = Vec::with_capacity(5);

    let mut a1 = Vec::new();
    for (x, t) in catalog.traits().iter().enumerate() {
        let alpha = catalog.competition().get(x, x);
        if t.birth <= 0.0 {
            a1.push(Violation {
                traits: vec![x],
                values: vec![t.birth],
                message: format!("birth rate of {} must be positive", t.id),
            });
        }
        if t.net_growth() <= 0.0 {
            a1.push(Violation {
                traits: vec![x],
                values: vec![t.birth, t.death],
                message: format!("b - d of {} must be positive", t.id),
            });
        }
        if alpha <= 0.0 {
            a1.push(Violation {
                traits: vec![x],
                values: vec![alpha],
                message: format!("self-competition of {} must be positive", t.id),
            });
        }
    }
    checks.push(finish(AssumptionKind::RatePositivity, Severity::Error, a1));

    let masses_ok = (0..n).all(|x| catalog.competition().get(x, x) > 0.0);
    if masses_ok {
        let mut a2 = Vec::new();
        for x in 0..n {
            for y in (x + 1)..n {
                if !catalog.interacts(x, y) {
                    continue;
                }
                let f_xy = catalog.invasion_fitness(x, y).expect("checked diagonal");
                let f_yx = catalog.invasion_fitness(y, x).expect("checked diagonal");
                let product = strict_sign(f_xy, policy.tau_sign) * strict_sign(f_yx, policy.tau_sign);
                if product >= 0 {
                    a2.push(Violation {
                        traits: vec![x, y],
                        values: vec![f_xy, f_yx],
                        message: format!(
                            "{} and {} can coexist or are bistable",
                            catalog.traits()[x].id,
                            catalog.traits()[y].id
                        ),
                    });
                }
            }
        }
        checks.push(finish(AssumptionKind::NonCoexistence, Severity::Error, a2));
    } else {
        checks.push(skipped(AssumptionKind::NonCoexistence, Severity::Error));
    }

    let order = if masses_ok {
        fitness_order(catalog, policy)
    } else {
        Err(ModelError::SingularModel(
            (0..n).find(|&x| catalog.competition().get(x, x) <= 0.0).unwrap_or(0),
        ))
    };
    match &order {
        Ok(_) => checks.push(finish(AssumptionKind::OrderConsistency, Severity::Error, Vec::new())),
        Err(e) => {
            let (traits, values) = match e {
                ModelError::OrderViolation { x, y, f_xy, f_yx } => (vec![*x, *y], vec![*f_xy, *f_yx]),
                _ => (Vec::new(), Vec::new()),
            };
            checks.push(finish(
                AssumptionKind::OrderConsistency,
                Severity::Error,
                vec![Violation {
                    traits,
                    values,
                    message: e.to_string(),
                }],
            ));
        }
    }

    match &order {
        Ok(order) => {
            let mut b3 = Vec::new();
            for w in order.windows(3) {
                let (x0, x1, x2) = (w[0], w[1], w[2]);
                let f10 = catalog.invasion_fitness(x1, x0).expect("ordered");
                let f21 = catalog.invasion_fitness(x2, x1).expect("ordered");
                let lhs = 2.0 / catalog.trait_params(x2).net_growth();
                let rhs = 1.0 / f10 + 1.0 / f21;
                if lhs < rhs {
                    b3.push(Violation {
                        traits: vec![x0, x1, x2],
                        values: vec![lhs, rhs],
                        message: format!(
                            "2/(b-d) of {} is {lhs} < {rhs}; the fixation-time bound may be loose",
                            catalog.traits()[x2].id
                        ),
                    });
                }
            }
            checks.push(finish(AssumptionKind::GrowthCondition, Severity::Warning, b3));

            let mut rank = vec![0usize; n];
            for (r, &x) in order.iter().enumerate() {
                rank[x] = r;
            }
            let mut support = Vec::new();
            for x in 0..n {
                for y in 0..n {
                    if rank[x].abs_diff(rank[y]) <= 1 {
                        continue;
                    }
                    let (a, m) = (catalog.competition().get(x, y), catalog.migration().get(x, y));
                    if a != 0.0 || m != 0.0 {
                        support.push(Violation {
                            traits: vec![x, y],
                            values: vec![a, m],
                            message: format!(
                                "{} and {} are {} ranks apart but interact",
                                catalog.traits()[x].id,
                                catalog.traits()[y].id,
                                rank[x].abs_diff(rank[y])
                            ),
                        });
                    }
                }
            }
            checks.push(finish(AssumptionKind::KernelSupport, Severity::Error, support));
        }
        Err(_) => {
            checks.push(skipped(AssumptionKind::GrowthCondition, Severity::Warning));
            checks.push(skipped(AssumptionKind::KernelSupport, Severity::Error));
        }
    }

    AssumptionReport {
        checks,
        fitness_order: order.ok(),
    }
}
