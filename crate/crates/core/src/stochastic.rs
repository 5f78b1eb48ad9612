//! Exact event-driven simulation of the individual-based process.
//!
//! Individuals of trait `x` give clonal birth at rate `b(x)`, die naturally at
//! rate `d(x)`, die from competition at rate `sum_y alpha_0(x, y) n_y / K`,
//! migrate to a discovered trait `y` at rate `epsilon * m(x, y)` and produce a
//! mutant at rate `sigma * mu(x)`. Per-individual clocks are aggregated per
//! trait (Gillespie direct method), which is the same law by superposition of
//! independent exponential clocks.
//!
//! # Random streams
//!
//! Stream version 1: replicate `r` of base seed `s` draws from
//! `ChaCha8Rng::seed_from_u64(s)` switched to stream `r`. A single run with
//! seed `s` is replicate 0. Each event consumes one `Exp(1)` variate for the
//! waiting time followed by one uniform for the event choice.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{fitness_order, Configuration, ModelError, MutantPolicy, ScalingRegime, TraitCatalog};
use crate::numeric::NumericPolicy;

pub const RNG_STREAM_VERSION: u32 = 1;

pub const DEFAULT_POPULATION_CAP: u64 = 100_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("population exceeded the cap of {cap} individuals at t = {time}")]
    Explosion { cap: u64, time: f64 },
    #[error("total event rate is not finite at t = {time}")]
    RateOverflow { time: f64 },
    #[error("absorbing state reached at t = {time}: no event can occur")]
    Absorbing { time: f64 },
    #[error("invalid sample grid: {0}")]
    InvalidGrid(String),
    #[error("invalid initial state: {0}")]
    InvalidInitial(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error)]
#[error("replicate {replicate} failed: {source}")]
pub struct EnsembleError {
    pub replicate: u64,
    #[source]
    pub source: SimError,
}

/// Generator for replicate `replicate` of `base_seed` (stream version 1).
pub fn replicate_rng(base_seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(replicate);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EventKind {
    ClonalBirth,
    NaturalDeath,
    CompetitionDeath,
    Migration { from: usize, to: usize },
    Mutation { from: usize, to: usize },
}

impl EventKind {
    pub fn label(&self) -> &'static str {
        match self {
            EventKind::ClonalBirth => "clonal_birth",
            EventKind::NaturalDeath => "natural_death",
            EventKind::CompetitionDeath => "competition_death",
            EventKind::Migration { .. } => "migration",
            EventKind::Mutation { .. } => "mutation",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub time: f64,
    pub kind: EventKind,
    /// The acting individual's trait (the parent for mutations, the emigrant's
    /// trait for migrations).
    pub trait_index: usize,
}

impl EventRecord {
    /// `(from, to)` trait pair; equal for events that stay within one trait.
    pub fn endpoints(&self) -> (usize, usize) {
        match self.kind {
            EventKind::Migration { from, to } | EventKind::Mutation { from, to } => (from, to),
            _ => (self.trait_index, self.trait_index),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounts {
    pub clonal_birth: u64,
    pub natural_death: u64,
    pub competition_death: u64,
    pub migration: u64,
    pub mutation: u64,
}

impl EventCounts {
    pub fn total(&self) -> u64 {
        self.clonal_birth + self.natural_death + self.competition_death + self.migration + self.mutation
    }

    fn record(&mut self, kind: &EventKind) {
        match kind {
            EventKind::ClonalBirth => self.clonal_birth += 1,
            EventKind::NaturalDeath => self.natural_death += 1,
            EventKind::CompetitionDeath => self.competition_death += 1,
            EventKind::Migration { .. } => self.migration += 1,
            EventKind::Mutation { .. } => self.mutation += 1,
        }
    }
}

/// Which traits migration may target at time zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Discovery {
    /// Every trait when no trait can mutate, otherwise the initial support.
    #[default]
    Auto,
    /// Only traits with a positive initial count.
    Support,
    /// The whole catalog.
    AllTraits,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub population_cap: u64,
    pub record_events: bool,
    pub discovery: Discovery,
    /// Time simulated before the recording clock starts.
    pub burn_in: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            population_cap: DEFAULT_POPULATION_CAP,
            record_events: false,
            discovery: Discovery::Auto,
            burn_in: 0.0,
        }
    }
}

/// Counts per trait, the current time and the traits ever present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationState {
    pub counts: Vec<u64>,
    pub time: f64,
    pub discovered: Vec<bool>,
}

impl PopulationState {
    /// Rounds `density * K` to whole individuals.
    pub fn from_configuration(
        initial: &Configuration,
        catalog: &TraitCatalog,
        regime: &ScalingRegime,
        discovery: Discovery,
    ) -> Result<Self, SimError> {
        if initial.len() != catalog.len() {
            return Err(SimError::InvalidInitial(format!(
                "configuration has {} entries for {} traits",
                initial.len(),
                catalog.len()
            )));
        }
        let counts: Vec<u64> = initial
            .density()
            .iter()
            .map(|d| (d * regime.k_f64()).round() as u64)
            .collect();
        let all = match discovery {
            Discovery::AllTraits => true,
            Discovery::Support => false,
            Discovery::Auto => catalog.is_mutation_free(),
        };
        let discovered = counts.iter().map(|&c| all || c > 0).collect();
        Ok(Self {
            counts,
            time: 0.0,
            discovered,
        })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn densities(&self, k: f64) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64 / k).collect()
    }
}

/// Catalog and regime flattened into the sparse form the event loop reads.
#[derive(Debug, Clone)]
struct RateContext {
    k: f64,
    epsilon: f64,
    sigma: f64,
    birth: Vec<f64>,
    death: Vec<f64>,
    mutation: Vec<f64>,
    competition: Vec<Vec<(usize, f64)>>,
    migration: Vec<Vec<(usize, f64)>>,
    policy: MutantPolicy,
    rank: Vec<usize>,
    /// Traits whose rates depend on the count of each trait.
    dependents: Vec<Vec<usize>>,
}

impl RateContext {
    fn new(catalog: &TraitCatalog, regime: &ScalingRegime) -> Result<Self, ModelError> {
        let n = catalog.len();
        let sparse = |m: &crate::model::SquareMatrix, skip_diag: bool| -> Vec<Vec<(usize, f64)>> {
            (0..n)
                .map(|x| {
                    (0..n)
                        .filter(|&y| !(skip_diag && x == y) && m.get(x, y) != 0.0)
                        .map(|y| (y, m.get(x, y)))
                        .collect()
                })
                .collect()
        };
        let needs_order =
            matches!(catalog.policy(), MutantPolicy::FitterThanAll) && !catalog.is_mutation_free();
        let rank = if needs_order {
            let order = fitness_order(catalog, &NumericPolicy::default())?;
            let mut rank = vec![0; n];
            for (r, &x) in order.iter().enumerate() {
                rank[x] = r;
            }
            rank
        } else {
            (0..n).collect()
        };
        Ok(Self {
            k: regime.k_f64(),
            epsilon: regime.epsilon(),
            sigma: regime.sigma(),
            birth: catalog.traits().iter().map(|t| t.birth).collect(),
            death: catalog.traits().iter().map(|t| t.death).collect(),
            mutation: catalog.mutation().to_vec(),
            competition: sparse(catalog.competition(), false),
            migration: sparse(catalog.migration(), true),
            policy: catalog.policy().clone(),
            dependents: (0..n)
                .map(|x| {
                    let mut d: Vec<usize> = (0..n)
                        .filter(|&y| y == x || catalog.competition().get(y, x) != 0.0)
                        .collect();
                    d.dedup();
                    d
                })
                .collect(),
            rank,
        })
    }

    fn len(&self) -> usize {
        self.birth.len()
    }
}

/// Per-trait channel rates for one state. All rate arithmetic of the
/// simulator goes through [`RateTable::refresh`] so that the reference
/// functions and the event loop agree to the last bit.
#[derive(Debug, Clone, Default)]
struct RateTable {
    pressure: Vec<f64>,
    migration_out: Vec<f64>,
    per_trait: Vec<f64>,
    mutant: Option<usize>,
    total: f64,
}

impl RateTable {
    fn refresh(&mut self, ctx: &RateContext, counts: &[u64], discovered: &[bool]) {
        let n = ctx.len();
        self.pressure.resize(n, 0.0);
        self.migration_out.resize(n, 0.0);
        self.per_trait.resize(n, 0.0);
        self.mutant = ctx.policy.next_mutant(discovered, &ctx.rank);
        for x in 0..n {
            let mut out = 0.0;
            for &(y, m) in &ctx.migration[x] {
                if discovered[y] {
                    out += m;
                }
            }
            self.migration_out[x] = out;
            self.update_trait(ctx, counts, x);
        }
        self.sum_total();
    }

    /// Recomputes the traits affected by a count change of `changed`; the
    /// discovered set and the pending mutant must be unchanged.
    fn refresh_after(&mut self, ctx: &RateContext, counts: &[u64], changed: &[usize]) {
        for &c in changed {
            for &x in &ctx.dependents[c] {
                self.update_trait(ctx, counts, x);
            }
        }
        self.sum_total();
    }

    #[inline]
    fn update_trait(&mut self, ctx: &RateContext, counts: &[u64], x: usize) {
        let mut p = 0.0;
        for &(y, a) in &ctx.competition[x] {
            p += a * counts[y] as f64;
        }
        self.pressure[x] = p;
        self.per_trait[x] = self.channels(ctx, counts, x).iter().sum::<f64>();
    }

    #[inline]
    fn sum_total(&mut self) {
        self.total = self.per_trait.iter().sum();
    }

    /// Birth, natural death, competition death, migration and mutation rates of trait `x`.
    #[inline]
    fn channels(&self, ctx: &RateContext, counts: &[u64], x: usize) -> [f64; 5] {
        let n = counts[x] as f64;
        let mutation = if self.mutant.is_some() {
            n * ctx.sigma * ctx.mutation[x]
        } else {
            0.0
        };
        [
            n * ctx.birth[x],
            n * ctx.death[x],
            n * self.pressure[x] / ctx.k,
            n * ctx.epsilon * self.migration_out[x],
            mutation,
        ]
    }

    /// Event whose cumulative-rate interval contains `target` in `[0, total)`.
    fn select(&self, ctx: &RateContext, counts: &[u64], discovered: &[bool], target: f64) -> (usize, EventKind) {
        let n = ctx.len();
        let mut r = target;
        let mut x = n;
        for y in 0..n {
            if self.per_trait[y] <= 0.0 {
                continue;
            }
            x = y;
            if r < self.per_trait[y] {
                break;
            }
            r -= self.per_trait[y];
        }
        debug_assert!(x < n, "select called with zero total rate");
        let ch = self.channels(ctx, counts, x);
        let last = (0..5).rev().find(|&c| ch[c] > 0.0).unwrap_or(0);
        let mut channel = last;
        for (c, &rate) in ch.iter().enumerate() {
            if rate > 0.0 && r < rate {
                channel = c;
                break;
            }
            r -= rate;
        }
        let kind = match channel {
            0 => EventKind::ClonalBirth,
            1 => EventKind::NaturalDeath,
            2 => EventKind::CompetitionDeath,
            3 => {
                let count = counts[x] as f64;
                let targets: Vec<(usize, f64)> = ctx.migration[x]
                    .iter()
                    .filter(|(y, _)| discovered[*y])
                    .map(|&(y, m)| (y, count * ctx.epsilon * m))
                    .collect();
                let mut to = targets.last().map(|t| t.0).unwrap_or(x);
                for &(y, rate) in &targets {
                    if r < rate {
                        to = y;
                        break;
                    }
                    r -= rate;
                }
                EventKind::Migration { from: x, to }
            }
            _ => EventKind::Mutation {
                from: x,
                to: self.mutant.expect("mutation channel requires a mutant"),
            },
        };
        (x, kind)
    }
}

fn apply(counts: &mut [u64], discovered: &mut [bool], x: usize, kind: &EventKind) {
    match *kind {
        EventKind::ClonalBirth => counts[x] += 1,
        EventKind::NaturalDeath | EventKind::CompetitionDeath => counts[x] -= 1,
        EventKind::Migration { from, to } => {
            counts[from] -= 1;
            counts[to] += 1;
        }
        EventKind::Mutation { to, .. } => {
            counts[to] += 1;
            discovered[to] = true;
        }
    }
}

/// Rates of every channel of one trait.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitRates {
    pub clonal_birth: f64,
    pub natural_death: f64,
    pub competition_death: f64,
    /// `(target, rate)` for every discovered migration target.
    pub migration: Vec<(usize, f64)>,
    pub mutation: f64,
}

impl TraitRates {
    pub fn total(&self) -> f64 {
        self.clonal_birth
            + self.natural_death
            + self.competition_death
            + self.migration.iter().map(|m| m.1).sum::<f64>()
            + self.mutation
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRates {
    pub per_trait: Vec<TraitRates>,
    /// The mutant a mutation would introduce now, if any.
    pub mutant: Option<usize>,
    pub total: f64,
}

/// Rates of every event channel in `state`.
pub fn event_rates(
    state: &PopulationState,
    catalog: &TraitCatalog,
    regime: &ScalingRegime,
) -> Result<EventRates, SimError> {
    let ctx = RateContext::new(catalog, regime)?;
    let mut table = RateTable::default();
    table.refresh(&ctx, &state.counts, &state.discovered);
    if !table.total.is_finite() {
        return Err(SimError::RateOverflow { time: state.time });
    }
    let per_trait = (0..ctx.len())
        .map(|x| {
            let ch = table.channels(&ctx, &state.counts, x);
            let count = state.counts[x] as f64;
            TraitRates {
                clonal_birth: ch[0],
                natural_death: ch[1],
                competition_death: ch[2],
                migration: ctx.migration[x]
                    .iter()
                    .filter(|(y, _)| state.discovered[*y])
                    .map(|&(y, m)| (y, count * ctx.epsilon * m))
                    .collect(),
                mutation: ch[4],
            }
        })
        .collect();
    Ok(EventRates {
        per_trait,
        mutant: table.mutant,
        total: table.total,
    })
}

/// Draws the next event from `state` and returns it with the updated state.
pub fn step<R: Rng + ?Sized>(
    state: &PopulationState,
    catalog: &TraitCatalog,
    regime: &ScalingRegime,
    rng: &mut R,
) -> Result<(EventRecord, PopulationState), SimError> {
    let ctx = RateContext::new(catalog, regime)?;
    let mut table = RateTable::default();
    table.refresh(&ctx, &state.counts, &state.discovered);
    if !table.total.is_finite() {
        return Err(SimError::RateOverflow { time: state.time });
    }
    if table.total <= 0.0 {
        return Err(SimError::Absorbing { time: state.time });
    }
    let wait: f64 = rng.sample::<f64, _>(Exp1) / table.total;
    let target = rng.random::<f64>() * table.total;
    let (x, kind) = table.select(&ctx, &state.counts, &state.discovered, target);
    let mut next = state.clone();
    next.time += wait;
    apply(&mut next.counts, &mut next.discovered, x, &kind);
    Ok((
        EventRecord {
            time: next.time,
            kind,
            trait_index: x,
        },
        next,
    ))
}

/// Times at which a trajectory is recorded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleGrid {
    /// `count` evenly spaced times from 0 to the horizon inclusive.
    Uniform { count: usize },
    Explicit { times: Vec<f64> },
}

impl SampleGrid {
    pub fn resolve(&self, horizon: f64) -> Result<Vec<f64>, SimError> {
        if !(horizon.is_finite() && horizon >= 0.0) {
            return Err(SimError::InvalidGrid(format!("horizon must be finite and nonnegative, got {horizon}")));
        }
        match self {
            SampleGrid::Uniform { count } => match *count {
                0 => Err(SimError::InvalidGrid("sample count must be positive".into())),
                1 => Ok(vec![horizon]),
                c => Ok((0..c)
                    .map(|i| if i + 1 == c { horizon } else { horizon * i as f64 / (c - 1) as f64 })
                    .collect()),
            },
            SampleGrid::Explicit { times } => {
                if times.is_empty() {
                    return Err(SimError::InvalidGrid("no sample times".into()));
                }
                if times.windows(2).any(|w| !(w[0] < w[1])) {
                    return Err(SimError::InvalidGrid("sample times must increase strictly".into()));
                }
                if times[0] < 0.0 || times[times.len() - 1] > horizon || times.iter().any(|t| !t.is_finite()) {
                    return Err(SimError::InvalidGrid(format!("sample times must lie in [0, {horizon}]")));
                }
                Ok(times.clone())
            }
        }
    }
}

/// Recorded densities of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub sample_times: Vec<f64>,
    /// `states[i][x]`: density of trait `x` just before `sample_times[i]`.
    pub states: Vec<Vec<f64>>,
    pub events_total: EventCounts,
    /// Every mutation, in order.
    pub innovations: Vec<EventRecord>,
    /// Full event log when requested.
    pub events: Option<Vec<EventRecord>>,
    /// Time at which no further event was possible, if that happened.
    pub absorbed_at: Option<f64>,
}

impl Trajectory {
    pub fn trait_count(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn terminal(&self) -> Option<&[f64]> {
        self.states.last().map(Vec::as_slice)
    }
}

/// Stateful event loop. Time advances in calls to [`Simulator::advance`]; the
/// path does not depend on how the horizon is split across calls.
pub struct Simulator {
    ctx: RateContext,
    table: RateTable,
    state: PopulationState,
    rng: ChaCha8Rng,
    next_event: Option<f64>,
    options: SimOptions,
    counts: EventCounts,
    innovations: Vec<EventRecord>,
    events: Option<Vec<EventRecord>>,
    absorbed_at: Option<f64>,
}

impl Simulator {
    pub fn new(
        catalog: &TraitCatalog,
        regime: &ScalingRegime,
        state: PopulationState,
        rng: ChaCha8Rng,
        options: SimOptions,
    ) -> Result<Self, SimError> {
        if state.counts.len() != catalog.len() || state.discovered.len() != catalog.len() {
            return Err(SimError::InvalidInitial("state does not match the catalog".into()));
        }
        if state.total() >= options.population_cap {
            return Err(SimError::Explosion {
                cap: options.population_cap,
                time: state.time,
            });
        }
        let ctx = RateContext::new(catalog, regime)?;
        let mut table = RateTable::default();
        table.refresh(&ctx, &state.counts, &state.discovered);
        Ok(Self {
            ctx,
            table,
            state,
            rng,
            next_event: None,
            events: options.record_events.then(Vec::new),
            options,
            counts: EventCounts::default(),
            innovations: Vec::new(),
            absorbed_at: None,
        })
    }

    pub fn state(&self) -> &PopulationState {
        &self.state
    }

    pub fn densities(&self) -> Vec<f64> {
        self.state.densities(self.ctx.k)
    }

    pub fn event_counts(&self) -> EventCounts {
        self.counts
    }

    pub fn innovations(&self) -> &[EventRecord] {
        &self.innovations
    }

    pub fn absorbed_at(&self) -> Option<f64> {
        self.absorbed_at
    }

    /// Whether the mutant policy still has a trait to introduce.
    pub fn has_pending_mutant(&self) -> bool {
        self.table.mutant.is_some()
    }

    /// Runs every event up to time `until`, writing the left limit of the state
    /// at each time in `samples` that is `<= until` and not yet recorded.
    /// `recorded` counts samples already written to `out`.
    pub fn advance(
        &mut self,
        until: f64,
        samples: &[f64],
        recorded: &mut usize,
        out: &mut Vec<Vec<f64>>,
    ) -> Result<(), SimError> {
        loop {
            let next = match self.next_event {
                Some(t) => t,
                None => {
                    let total = self.table.total;
                    if !total.is_finite() {
                        return Err(SimError::RateOverflow { time: self.state.time });
                    }
                    if total <= 0.0 {
                        if self.absorbed_at.is_none() {
                            self.absorbed_at = Some(self.state.time);
                        }
                        f64::INFINITY
                    } else {
                        let wait: f64 = self.rng.sample::<f64, _>(Exp1) / total;
                        let t = self.state.time + wait;
                        self.next_event = Some(t);
                        t
                    }
                }
            };
            let horizon = next.min(until);
            while *recorded < samples.len() && samples[*recorded] <= horizon {
                out.push(self.densities());
                *recorded += 1;
            }
            if next > until {
                return Ok(());
            }
            self.fire(next)?;
        }
    }

    fn fire(&mut self, time: f64) -> Result<(), SimError> {
        let target = self.rng.random::<f64>() * self.table.total;
        let (x, kind) = self
            .table
            .select(&self.ctx, &self.state.counts, &self.state.discovered, target);
        apply(&mut self.state.counts, &mut self.state.discovered, x, &kind);
        self.state.time = time;
        self.next_event = None;
        self.counts.record(&kind);
        let record = EventRecord {
            time,
            kind,
            trait_index: x,
        };
        if matches!(kind, EventKind::Mutation { .. }) {
            self.innovations.push(record);
        }
        if let Some(log) = self.events.as_mut() {
            log.push(record);
        }
        if matches!(kind, EventKind::ClonalBirth | EventKind::Mutation { .. })
            && self.state.total() >= self.options.population_cap
        {
            return Err(SimError::Explosion {
                cap: self.options.population_cap,
                time,
            });
        }
        match kind {
            EventKind::Mutation { .. } => self
                .table
                .refresh(&self.ctx, &self.state.counts, &self.state.discovered),
            EventKind::Migration { from, to } => {
                self.table.refresh_after(&self.ctx, &self.state.counts, &[from, to])
            }
            _ => self.table.refresh_after(&self.ctx, &self.state.counts, &[x]),
        }
        Ok(())
    }

    fn into_parts(self) -> (EventCounts, Vec<EventRecord>, Option<Vec<EventRecord>>, Option<f64>) {
        (self.counts, self.innovations, self.events, self.absorbed_at)
    }
}

/// One run from `initial` to `horizon`, recorded on `grid`.
pub fn simulate(
    catalog: &TraitCatalog,
    regime: &ScalingRegime,
    initial: &Configuration,
    horizon: f64,
    grid: &SampleGrid,
    seed: u64,
    options: &SimOptions,
) -> Result<Trajectory, SimError> {
    simulate_replicate(catalog, regime, initial, horizon, grid, seed, 0, options)
}

#[allow(clippy::too_many_arguments)]
fn simulate_replicate(
    catalog: &TraitCatalog,
    regime: &ScalingRegime,
    initial: &Configuration,
    horizon: f64,
    grid: &SampleGrid,
    base_seed: u64,
    replicate: u64,
    options: &SimOptions,
) -> Result<Trajectory, SimError> {
    let sample_times = grid.resolve(horizon)?;
    if !(options.burn_in.is_finite() && options.burn_in >= 0.0) {
        return Err(SimError::InvalidInitial(format!("burn-in must be nonnegative, got {}", options.burn_in)));
    }
    let state = PopulationState::from_configuration(initial, catalog, regime, options.discovery)?;
    let mut sim = Simulator::new(catalog, regime, state, replicate_rng(base_seed, replicate), *options)?;
    let shifted: Vec<f64> = sample_times.iter().map(|t| t + options.burn_in).collect();
    let mut states = Vec::with_capacity(shifted.len());
    let mut recorded = 0;
    sim.advance(horizon + options.burn_in, &shifted, &mut recorded, &mut states)?;
    let (events_total, innovations, mut events, absorbed_at) = sim.into_parts();
    if options.burn_in > 0.0 {
        let shift = |r: &mut EventRecord| r.time -= options.burn_in;
        let mut innovations = innovations;
        innovations.retain(|r| r.time >= options.burn_in);
        innovations.iter_mut().for_each(shift);
        if let Some(log) = events.as_mut() {
            log.retain(|r| r.time >= options.burn_in);
            log.iter_mut().for_each(shift);
        }
        return Ok(Trajectory {
            sample_times,
            states,
            events_total,
            innovations,
            events,
            absorbed_at: absorbed_at.map(|t| (t - options.burn_in).max(0.0)),
        });
    }
    Ok(Trajectory {
        sample_times,
        states,
        events_total,
        innovations,
        events,
        absorbed_at,
    })
}

/// Independent replicates `0..replicates` of `base_seed`, run in parallel and
/// returned in replicate order.
#[allow(clippy::too_many_arguments)]
pub fn run_replicates(
    catalog: &TraitCatalog,
    regime: &ScalingRegime,
    initial: &Configuration,
    horizon: f64,
    grid: &SampleGrid,
    replicates: u64,
    base_seed: u64,
    options: &SimOptions,
) -> Result<Vec<Trajectory>, EnsembleError> {
    (0..replicates)
        .into_par_iter()
        .map(|r| {
            simulate_replicate(catalog, regime, initial, horizon, grid, base_seed, r, options)
                .map_err(|source| EnsembleError { replicate: r, source })
        })
        .collect()
}

/// Across-replicate summaries per sample time and trait.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub sample_times: Vec<f64>,
    pub replicates: u64,
    pub mean: Vec<Vec<f64>>,
    /// Unbiased sample variance; zero for a single replicate.
    pub variance: Vec<Vec<f64>>,
    pub p05: Vec<Vec<f64>>,
    pub p95: Vec<Vec<f64>>,
}

impl EnsembleStats {
    pub fn from_trajectories(runs: &[Trajectory]) -> Option<Self> {
        let first = runs.first()?;
        let times = first.sample_times.clone();
        let traits = first.trait_count();
        let r = runs.len();
        let mut stats = EnsembleStats {
            sample_times: times.clone(),
            replicates: r as u64,
            mean: Vec::with_capacity(times.len()),
            variance: Vec::with_capacity(times.len()),
            p05: Vec::with_capacity(times.len()),
            p95: Vec::with_capacity(times.len()),
        };
        let mut column = vec![0.0; r];
        let mut dev = vec![0.0; r];
        for i in 0..times.len() {
            let (mut m, mut v, mut lo, mut hi) = (
                Vec::with_capacity(traits),
                Vec::with_capacity(traits),
                Vec::with_capacity(traits),
                Vec::with_capacity(traits),
            );
            for x in 0..traits {
                for (slot, run) in column.iter_mut().zip(runs) {
                    *slot = run.states[i][x];
                }
                let mean = pairwise_sum(&column) / r as f64;
                let var = if r > 1 {
                    for (d, c) in dev.iter_mut().zip(&column) {
                        *d = (c - mean) * (c - mean);
                    }
                    pairwise_sum(&dev) / (r - 1) as f64
                } else {
                    0.0
                };
                let mut sorted = column.clone();
                sorted.sort_by(f64::total_cmp);
                m.push(mean);
                v.push(var);
                lo.push(quantile_sorted(&sorted, 0.05));
                hi.push(quantile_sorted(&sorted, 0.95));
            }
            stats.mean.push(m);
            stats.variance.push(v);
            stats.p05.push(lo);
            stats.p95.push(hi);
        }
        Some(stats)
    }
}

/// Replicated runs reduced to [`EnsembleStats`].
#[allow(clippy::too_many_arguments)]
pub fn run_ensemble(
    catalog: &TraitCatalog,
    regime: &ScalingRegime,
    initial: &Configuration,
    horizon: f64,
    grid: &SampleGrid,
    replicates: u64,
    base_seed: u64,
    options: &SimOptions,
) -> Result<EnsembleStats, EnsembleError> {
    if replicates == 0 {
        return Err(EnsembleError {
            replicate: 0,
            source: SimError::InvalidInitial("at least one replicate is required".into()),
        });
    }
    let runs = run_replicates(catalog, regime, initial, horizon, grid, replicates, base_seed, options)?;
    Ok(EnsembleStats::from_trajectories(&runs).expect("at least one replicate"))
}

/// Pairwise (cascade) summation; error grows as `O(log n)` rather than `O(n)`.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 8;
    if values.len() <= BLOCK {
        values.iter().sum()
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}

/// Linear-interpolation quantile of ascending `sorted`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = p.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            let frac = pos - lo as f64;
            sorted[lo] + (sorted[hi] - sorted[lo]) * frac
        }
    }
}
