//! Jump processes on the mutation timescale.
//!
//! The trait substitution sequence keeps the population monomorphic and jumps
//! from resident `z` to mutant `y` at rate `n(z) [f(y, z)]+ / b(y) * w(z, y)`.
//! The trait substitution tree keeps every trait that ever appeared on the
//! fitness ladder and alternates presence from the top: the fittest trait is
//! present, the next one absent, and so on. A mutant joins the ladder, the
//! traits above it keep their status and the traits below it switch.

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Configuration, Landscape, ModelError};
use crate::stochastic::replicate_rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum JumpError {
    #[error("trait {0} is not present in the configuration")]
    ParentAbsent(usize),
    #[error("trait {0} already belongs to the configuration")]
    AlreadyPresent(usize),
    #[error("configuration is not an alternating equilibrium: {0}")]
    InvalidConfiguration(String),
    #[error("insertion position {position} out of range for {len} traits")]
    InvalidPosition { position: usize, len: usize },
    #[error("horizon must be finite and nonnegative, got {0}")]
    InvalidHorizon(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Where the weight `w(z, y)` of a substitution comes from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TssKernel {
    /// `mu(z)` times the mutant policy's weight of `y`.
    #[default]
    Mutation,
    /// The migration kernel entry `m(z, y)`.
    Migration,
}

/// Rates `(y, rate)` of every candidate substitution from resident `current`,
/// given the traits discovered so far.
pub fn tss_jump_rates(
    landscape: &Landscape,
    current: usize,
    discovered: &[bool],
    kernel: TssKernel,
) -> Result<Vec<(usize, f64)>, JumpError> {
    let catalog = landscape.catalog();
    if current >= catalog.len() {
        return Err(ModelError::IndexOutOfRange {
            index: current,
            len: catalog.len(),
        }
        .into());
    }
    if discovered.len() != catalog.len() {
        return Err(ModelError::DimensionMismatch {
            what: "discovered set",
            got: discovered.len(),
            expected: catalog.len(),
        }
        .into());
    }
    let Some(y) = catalog.policy().next_mutant(discovered, landscape.ranks()) else {
        return Ok(Vec::new());
    };
    let weight = match kernel {
        TssKernel::Mutation => catalog.mutation()[current],
        TssKernel::Migration => catalog.migration().get(current, y),
    };
    let fitness = landscape.fitness(y, current).max(0.0);
    let rate = landscape.mass(current) * fitness / catalog.trait_params(y).birth * weight;
    Ok(vec![(y, rate)])
}

/// Monomorphic path: `times[i]` is when `states[i]` took over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TssPath {
    pub times: Vec<f64>,
    /// `(trait, equilibrium mass)` per segment.
    pub states: Vec<(usize, f64)>,
    /// Every further substitution has rate zero.
    pub absorbed: bool,
}

impl TssPath {
    /// Resident trait at time `t`.
    pub fn state_at(&self, t: f64) -> (usize, f64) {
        let i = self.times.partition_point(|&s| s <= t).saturating_sub(1);
        self.states[i]
    }
}

/// Jump chain of [`tss_jump_rates`] from `start` until `horizon`. A mutant
/// that fails to invade is still discovered and cannot be drawn again.
pub fn simulate_tss(
    landscape: &Landscape,
    start: usize,
    horizon: f64,
    seed: u64,
    kernel: TssKernel,
) -> Result<TssPath, JumpError> {
    if !(horizon.is_finite() && horizon >= 0.0) {
        return Err(JumpError::InvalidHorizon(horizon));
    }
    let n = landscape.catalog().len();
    let mut discovered = vec![false; n];
    if start >= n {
        return Err(ModelError::IndexOutOfRange { index: start, len: n }.into());
    }
    discovered[start] = true;
    let mut rng = replicate_rng(seed, 0);
    let mut path = TssPath {
        times: vec![0.0],
        states: vec![(start, landscape.mass(start))],
        absorbed: false,
    };
    let mut t = 0.0;
    let mut current = start;
    loop {
        let rates = tss_jump_rates(landscape, current, &discovered, kernel)?;
        let total: f64 = rates.iter().map(|r| r.1).sum();
        if total <= 0.0 {
            path.absorbed = true;
            return Ok(path);
        }
        t += rng.sample::<f64, _>(Exp1) / total;
        if t > horizon {
            return Ok(path);
        }
        let mut target = rng.random::<f64>() * total;
        let mut next = rates[rates.len() - 1].0;
        for &(y, r) in &rates {
            if target < r {
                next = y;
                break;
            }
            target -= r;
        }
        discovered[next] = true;
        current = next;
        path.times.push(t);
        path.states.push((next, landscape.mass(next)));
    }
}

/// Every trait seen so far, least fit first, with the presence pattern of the
/// alternating equilibrium.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TstConfiguration {
    pub ordered_traits: Vec<usize>,
    pub present: Vec<bool>,
    /// Equilibrium mass of present traits, zero for absent ones.
    pub masses: Vec<f64>,
    /// Number of mutations since the ancestor.
    pub generation: usize,
}

impl TstConfiguration {
    /// A single trait at its equilibrium mass.
    pub fn ancestor(landscape: &Landscape, x: usize) -> Result<Self, JumpError> {
        Self::alternating(landscape, vec![x], 0)
    }

    /// `traits` in fitness order with presence alternating from the top.
    pub fn alternating(landscape: &Landscape, mut traits: Vec<usize>, generation: usize) -> Result<Self, JumpError> {
        let n = landscape.catalog().len();
        if let Some(&bad) = traits.iter().find(|&&x| x >= n) {
            return Err(ModelError::IndexOutOfRange { index: bad, len: n }.into());
        }
        traits.sort_by_key(|&x| landscape.rank(x));
        if traits.windows(2).any(|w| w[0] == w[1]) {
            return Err(JumpError::InvalidConfiguration("repeated trait".into()));
        }
        let top = traits.len().saturating_sub(1);
        let present: Vec<bool> = (0..traits.len()).map(|i| (top - i) % 2 == 0).collect();
        let masses = traits
            .iter()
            .zip(&present)
            .map(|(&x, &p)| if p { landscape.mass(x) } else { 0.0 })
            .collect();
        Ok(Self {
            ordered_traits: traits,
            present,
            masses,
            generation,
        })
    }

    pub fn len(&self) -> usize {
        self.ordered_traits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ordered_traits.is_empty()
    }

    pub fn contains(&self, x: usize) -> bool {
        self.ordered_traits.contains(&x)
    }

    pub fn is_present(&self, x: usize) -> bool {
        self.ordered_traits
            .iter()
            .position(|&y| y == x)
            .is_some_and(|i| self.present[i])
    }

    pub fn present_traits(&self) -> impl Iterator<Item = usize> + '_ {
        self.ordered_traits
            .iter()
            .zip(&self.present)
            .filter(|(_, &p)| p)
            .map(|(&x, _)| x)
    }

    /// Number of traits below `mutant` on the ladder.
    pub fn insertion_position(&self, landscape: &Landscape, mutant: usize) -> usize {
        let r = landscape.rank(mutant);
        self.ordered_traits.partition_point(|&x| landscape.rank(x) < r)
    }

    /// The configuration as a point measure on the catalog.
    pub fn to_configuration(&self, catalog_len: usize) -> Configuration {
        let mut density = vec![0.0; catalog_len];
        for (&x, &m) in self.ordered_traits.iter().zip(&self.masses) {
            density[x] = m;
        }
        Configuration::new(density).expect("equilibrium masses are finite and nonnegative")
    }

    /// Checks ordering, alternation from the top and masses.
    pub fn validate(&self, landscape: &Landscape) -> Result<(), JumpError> {
        if self.is_empty() {
            return Err(JumpError::InvalidConfiguration("no traits".into()));
        }
        let expected = Self::alternating(landscape, self.ordered_traits.clone(), self.generation)?;
        if expected.ordered_traits != self.ordered_traits {
            return Err(JumpError::InvalidConfiguration("traits are not in fitness order".into()));
        }
        if expected.present != self.present {
            return Err(JumpError::InvalidConfiguration(
                "presence does not alternate from the top".into(),
            ));
        }
        if expected.masses != self.masses {
            return Err(JumpError::InvalidConfiguration("masses differ from equilibrium".into()));
        }
        Ok(())
    }
}

fn check_transition(config: &TstConfiguration, parent: usize, mutant: usize, landscape: &Landscape) -> Result<(), JumpError> {
    let n = landscape.catalog().len();
    if mutant >= n {
        return Err(ModelError::IndexOutOfRange { index: mutant, len: n }.into());
    }
    if !config.is_present(parent) {
        return Err(JumpError::ParentAbsent(parent));
    }
    if config.contains(mutant) {
        return Err(JumpError::AlreadyPresent(mutant));
    }
    Ok(())
}

fn with_presence(
    config: &TstConfiguration,
    landscape: &Landscape,
    position: usize,
    mutant: usize,
    old_present: &[bool],
    mutant_present: bool,
) -> TstConfiguration {
    let mut traits = config.ordered_traits.clone();
    traits.insert(position, mutant);
    let mut present = old_present.to_vec();
    present.insert(position, mutant_present);
    let masses = traits
        .iter()
        .zip(&present)
        .map(|(&x, &p)| if p { landscape.mass(x) } else { 0.0 })
        .collect();
    TstConfiguration {
        ordered_traits: traits,
        present,
        masses,
        generation: config.generation + 1,
    }
}

/// Configuration after `parent` produces `mutant`, following the two
/// displayed cases for even and odd generations. Labels `x_i` are positions
/// in the current ladder; the mutant sits between `x_{p-1}` and `x_p`.
pub fn tst_transition(
    config: &TstConfiguration,
    parent: usize,
    mutant: usize,
    landscape: &Landscape,
) -> Result<TstConfiguration, JumpError> {
    config.validate(landscape)?;
    check_transition(config, parent, mutant, landscape)?;
    let top = config.len() - 1;
    let p = config.insertion_position(landscape, mutant);
    let mut keep = vec![false; config.len()];
    let mut set_range = |idx: &mut dyn Iterator<Item = usize>| {
        for i in idx {
            keep[i] = true;
        }
    };
    let mutant_present;
    if top % 2 == 0 {
        // Present: x_0, x_2, ..., x_{2l}.
        let l = top / 2;
        if p % 2 == 1 {
            // x_{2j} < h < x_{2j+1}: x_{2i-1} for i = 1..=j, h, x_{2i} for i = j+1..=l.
            let j = (p - 1) / 2;
            set_range(&mut (1..=j).map(|i| 2 * i - 1));
            set_range(&mut (j + 1..=l).map(|i| 2 * i));
            mutant_present = true;
        } else {
            // x_{2j-1} < h < x_{2j}: x_{2i-1} for i = 1..=j, x_{2i} for i = j..=l.
            let j = p / 2;
            set_range(&mut (1..=j).map(|i| 2 * i - 1));
            set_range(&mut (j..=l).map(|i| 2 * i));
            mutant_present = false;
        }
    } else {
        // Present: x_1, x_3, ..., x_{2l+1}.
        let l = (top - 1) / 2;
        if p % 2 == 0 {
            // x_{2j-1} < h < x_{2j}, with j = 0 when h is below x_0:
            // x_{2i-2} for i = 1..=j, h, x_{2i-1} for i = j+1..=l+1.
            let j = p / 2;
            set_range(&mut (1..=j).map(|i| 2 * i - 2));
            set_range(&mut (j + 1..=l + 1).map(|i| 2 * i - 1));
            mutant_present = true;
        } else {
            // x_{2j-2} < h < x_{2j-1}: x_{2i-2} for i = 1..=j, x_{2i-1} for i = j..=l+1.
            let j = p.div_ceil(2);
            set_range(&mut (1..=j).map(|i| 2 * i - 2));
            set_range(&mut (j..=l + 1).map(|i| 2 * i - 1));
            mutant_present = false;
        }
    }
    Ok(with_presence(config, landscape, p, mutant, &keep, mutant_present))
}

/// Reference transition: traits above the insertion keep their presence,
/// traits below switch, and the mutant is present exactly when its fitter
/// neighbor was absent (or when it tops the ladder).
pub fn parity_flip_oracle(
    config: &TstConfiguration,
    position: usize,
    mutant: usize,
    landscape: &Landscape,
) -> Result<TstConfiguration, JumpError> {
    if position > config.len() {
        return Err(JumpError::InvalidPosition {
            position,
            len: config.len(),
        });
    }
    if config.contains(mutant) {
        return Err(JumpError::AlreadyPresent(mutant));
    }
    let bits: Vec<bool> = config
        .present
        .iter()
        .enumerate()
        .map(|(i, &b)| if i < position { !b } else { b })
        .collect();
    let mutant_present = config.present.get(position).map_or(true, |&above| !above);
    Ok(with_presence(config, landscape, position, mutant, &bits, mutant_present))
}

/// `(parent, mutant, rate)` for every present trait that can mutate now.
pub fn tst_mutation_rates(config: &TstConfiguration, landscape: &Landscape) -> Vec<(usize, usize, f64)> {
    let catalog = landscape.catalog();
    let mut discovered = vec![false; catalog.len()];
    for &x in &config.ordered_traits {
        discovered[x] = true;
    }
    let Some(mutant) = catalog.policy().next_mutant(&discovered, landscape.ranks()) else {
        return Vec::new();
    };
    config
        .present_traits()
        .map(|x| (x, mutant, landscape.mass(x) * catalog.mutation()[x]))
        .filter(|r| r.2 > 0.0)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TstPath {
    /// `times[i]` is when `configurations[i]` began; `times[0] = 0`.
    pub times: Vec<f64>,
    pub configurations: Vec<TstConfiguration>,
    /// The trait that produced each mutant (one entry per jump).
    pub parents: Vec<usize>,
    /// No mutation was possible any more before the horizon.
    pub exhausted: bool,
}

/// Tree chain from `initial` until `horizon` in mutation-timescale units.
pub fn simulate_tst(
    initial: &TstConfiguration,
    horizon: f64,
    landscape: &Landscape,
    seed: u64,
) -> Result<TstPath, JumpError> {
    if !(horizon.is_finite() && horizon >= 0.0) {
        return Err(JumpError::InvalidHorizon(horizon));
    }
    initial.validate(landscape)?;
    let mut rng = replicate_rng(seed, 0);
    let mut path = TstPath {
        times: vec![0.0],
        configurations: vec![initial.clone()],
        parents: Vec::new(),
        exhausted: false,
    };
    let mut t = 0.0;
    loop {
        let current = path.configurations.last().expect("nonempty");
        let rates = tst_mutation_rates(current, landscape);
        let total: f64 = rates.iter().map(|r| r.2).sum();
        if total <= 0.0 {
            path.exhausted = true;
            return Ok(path);
        }
        t += rng.sample::<f64, _>(Exp1) / total;
        if t > horizon {
            return Ok(path);
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = rates[rates.len() - 1];
        for &r in &rates {
            if target < r.2 {
                pick = r;
                break;
            }
            target -= r.2;
        }
        let next = tst_transition(current, pick.0, pick.1, landscape)?;
        path.times.push(t);
        path.configurations.push(next);
        path.parents.push(pick.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MutantPolicy, TraitCatalog};
    use crate::numeric::NumericPolicy;

    fn ladder(births: &[f64], m: f64, mu: f64) -> Landscape {
        Landscape::new(TraitCatalog::ladder(births, 0.0, 1.0, m, mu).unwrap(), NumericPolicy::default()).unwrap()
    }

    fn uniform(births: &[f64], mu: f64) -> Landscape {
        let n = births.len();
        let traits = births
            .iter()
            .enumerate()
            .map(|(i, &b)| crate::model::TraitParams::new(format!("x{i}"), b, 0.0))
            .collect();
        let c = TraitCatalog::new(
            traits,
            crate::model::SquareMatrix::uniform(n, 1.0),
            crate::model::SquareMatrix::uniform(n, 0.5),
            vec![mu; n],
            MutantPolicy::FitterThanAll,
        )
        .unwrap();
        Landscape::new(c, NumericPolicy::default()).unwrap()
    }

    #[test]
    fn tss_rate_example() {
        let l = uniform(&[3.0, 6.0], 0.5);
        let rates = tss_jump_rates(&l, 0, &[true, false], TssKernel::Mutation).unwrap();
        assert_eq!(rates.len(), 1);
        assert!((rates[0].1 - 0.75).abs() < 1e-15);
        let rates = tss_jump_rates(&l, 0, &[true, false], TssKernel::Migration).unwrap();
        assert!((rates[0].1 - 0.75).abs() < 1e-15);
    }

    #[test]
    fn unfit_or_unweighted_candidates_have_zero_rate() {
        let l = uniform(&[3.0, 6.0], 0.5)
            .catalog()
            .clone()
            .with_policy(MutantPolicy::NextInCatalog)
            .unwrap();
        let l = Landscape::new(l, NumericPolicy::default()).unwrap();
        // Resident 1 (b = 6), candidate 0 cannot invade.
        let rates = tss_jump_rates(&l, 1, &[false, true], TssKernel::Mutation).unwrap();
        assert_eq!(rates, vec![(0, 0.0)]);
        let l = uniform(&[3.0, 6.0], 0.0);
        let rates = tss_jump_rates(&l, 0, &[true, false], TssKernel::Mutation).unwrap();
        assert_eq!(rates[0].1, 0.0);
    }

    #[test]
    fn tss_climbs_the_ladder() {
        let l = uniform(&[3.0, 6.0, 8.0, 10.0], 0.5);
        let path = simulate_tss(&l, 0, 1e6, 11, TssKernel::Mutation).unwrap();
        let visited: Vec<usize> = path.states.iter().map(|s| s.0).collect();
        assert_eq!(visited, vec![0, 1, 2, 3]);
        assert!(path.absorbed);
        assert!(path.states.iter().all(|&(x, m)| m == l.mass(x)));
        assert!(path.times.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn single_trait_tss_is_constant() {
        let l = uniform(&[3.0], 0.5);
        let path = simulate_tss(&l, 0, 10.0, 1, TssKernel::Mutation).unwrap();
        assert_eq!(path.states, vec![(0, 3.0)]);
        assert!(path.absorbed);
    }

    #[test]
    fn first_mutation_replaces_ancestor() {
        let l = ladder(&[3.0, 6.0], 0.5, 1.0);
        let g0 = TstConfiguration::ancestor(&l, 0).unwrap();
        let g1 = tst_transition(&g0, 0, 1, &l).unwrap();
        assert_eq!(g1.ordered_traits, vec![0, 1]);
        assert_eq!(g1.present, vec![false, true]);
        assert_eq!(g1.masses, vec![0.0, 6.0]);
        assert_eq!(g1.generation, 1);
    }

    #[test]
    fn ladder_generations_alternate() {
        let l = ladder(&[3.0, 6.0, 8.0, 10.0], 0.5, 1.0);
        let mut g = TstConfiguration::ancestor(&l, 0).unwrap();
        for mutant in 1..4 {
            let parent = g.present_traits().last().unwrap();
            g = tst_transition(&g, parent, mutant, &l).unwrap();
            if mutant == 2 {
                assert_eq!(g.masses, vec![3.0, 0.0, 8.0]);
            }
        }
        assert_eq!(g.masses, vec![0.0, 6.0, 0.0, 10.0]);
        assert_eq!(g.generation, 3);
    }

    #[test]
    fn insertion_at_the_top_flips_everything() {
        let l = ladder(&[3.0, 6.0, 8.0, 10.0], 0.5, 1.0);
        let g = TstConfiguration::alternating(&l, vec![0, 1, 2], 2).unwrap();
        let o = parity_flip_oracle(&g, 3, 3, &l).unwrap();
        assert_eq!(o.present, vec![false, true, false, true]);
        let o = parity_flip_oracle(&g, 0, 3, &l).unwrap();
        // Nothing below the insertion point: old bits unchanged.
        assert_eq!(&o.present[1..], &g.present[..]);
    }

    #[test]
    fn transition_preconditions() {
        let l = ladder(&[3.0, 6.0, 8.0], 0.5, 1.0);
        let g = TstConfiguration::alternating(&l, vec![0, 1, 2], 2).unwrap();
        assert_eq!(tst_transition(&g, 1, 2, &l).unwrap_err(), JumpError::ParentAbsent(1));
        let g1 = TstConfiguration::alternating(&l, vec![0, 1], 1).unwrap();
        assert_eq!(tst_transition(&g1, 1, 0, &l).unwrap_err(), JumpError::AlreadyPresent(0));
        let mut bad = g.clone();
        bad.present = vec![true, true, true];
        assert!(matches!(tst_transition(&bad, 0, 1, &l), Err(JumpError::InvalidConfiguration(_))));
    }

    #[test]
    fn mutation_rates_follow_masses() {
        let l = ladder(&[3.0, 6.0, 8.0, 10.0], 0.5, 1.0);
        let g0 = TstConfiguration::ancestor(&l, 0).unwrap();
        assert_eq!(tst_mutation_rates(&g0, &l), vec![(0, 1, 3.0)]);
        let g2 = TstConfiguration::alternating(&l, vec![0, 1, 2], 2).unwrap();
        assert_eq!(tst_mutation_rates(&g2, &l), vec![(0, 3, 3.0), (2, 3, 8.0)]);
        let frozen = ladder(&[3.0, 6.0], 0.5, 0.0);
        let g = TstConfiguration::ancestor(&frozen, 0).unwrap();
        assert!(tst_mutation_rates(&g, &frozen).is_empty());
        let path = simulate_tst(&g, 100.0, &frozen, 1).unwrap();
        assert!(path.exhausted);
        assert_eq!(path.configurations.len(), 1);
    }

    #[test]
    fn zero_horizon_keeps_initial() {
        let l = ladder(&[3.0, 6.0], 0.5, 1.0);
        let g = TstConfiguration::ancestor(&l, 0).unwrap();
        let path = simulate_tst(&g, 0.0, &l, 5).unwrap();
        assert_eq!(path.configurations, vec![g]);
        assert!(!path.exhausted);
    }

    #[test]
    fn tree_reaches_the_top_of_the_ladder() {
        let l = ladder(&[3.0, 6.0, 8.0, 10.0, 12.0], 0.5, 1.0);
        let g = TstConfiguration::ancestor(&l, 0).unwrap();
        let path = simulate_tst(&g, 1e6, &l, 9).unwrap();
        assert!(path.exhausted);
        let last = path.configurations.last().unwrap();
        assert_eq!(last.masses, vec![3.0, 0.0, 8.0, 0.0, 12.0]);
        for (i, c) in path.configurations.iter().enumerate() {
            assert_eq!(c.generation, i);
            c.validate(&l).unwrap();
        }
    }
}
