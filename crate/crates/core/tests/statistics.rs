use innodyn_core::jump::{simulate_tss, simulate_tst, tss_jump_rates, TssKernel, TstConfiguration};
use innodyn_core::model::{Configuration, Landscape, ScalingRegime, TraitCatalog};
use innodyn_core::stochastic::{
    event_rates, replicate_rng, run_ensemble, run_replicates, simulate, step, Discovery, EventKind, PopulationState,
    SampleGrid, SimOptions, Simulator,
};
use innodyn_core::NumericPolicy;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Asymptotic p-value of the one-sample Kolmogorov-Smirnov statistic.
fn ks_p_value(mut sample: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    sample.sort_by(f64::total_cmp);
    let n = sample.len() as f64;
    let d = sample.iter().enumerate().fold(0.0_f64, |d, (i, &x)| {
        let f = cdf(x);
        d.max(f - i as f64 / n).max((i + 1) as f64 / n - f)
    });
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let p: f64 = (1..=100)
        .map(|k| {
            let k = k as f64;
            2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp()
        })
        .sum();
    p.clamp(0.0, 1.0)
}

fn fig1() -> Landscape {
    let catalog = TraitCatalog::ladder(&[3.0, 6.0, 8.0, 10.0], 0.0, 1.0, 0.5, 0.5).unwrap();
    Landscape::new(catalog, NumericPolicy::default()).unwrap()
}

#[test]
fn tss_holding_time_is_exponential() {
    let landscape = fig1();
    let mut discovered = vec![false; 4];
    discovered[0] = true;
    let rates = tss_jump_rates(&landscape, 0, &discovered, TssKernel::Mutation).unwrap();
    assert_eq!(rates, vec![(1, 0.75)]);
    let holding: Vec<f64> = (0..10_000)
        .map(|seed| simulate_tss(&landscape, 0, 1e9, seed, TssKernel::Mutation).unwrap().times[1])
        .collect();
    let p = ks_p_value(holding.clone(), |t| 1.0 - (-0.75 * t).exp());
    assert!(p > 0.01, "p = {p}");
    let mean = holding.iter().sum::<f64>() / holding.len() as f64;
    assert!((mean - 1.0 / 0.75).abs() < 0.05, "{mean}");
}

#[test]
fn tst_first_jump_is_exponential() {
    let landscape = fig1();
    let ancestor = TstConfiguration::ancestor(&landscape, 0).unwrap();
    // Mass 3 times mutation weight 0.5.
    let firsts: Vec<f64> = (0..10_000)
        .map(|seed| simulate_tst(&ancestor, 1e9, &landscape, seed).unwrap().times[1])
        .collect();
    let p = ks_p_value(firsts, |t| 1.0 - (-1.5 * t).exp());
    assert!(p > 0.01, "p = {p}");
}

#[test]
fn event_selection_follows_rates() {
    let catalog = TraitCatalog::ladder(&[3.0, 6.0, 8.0], 0.2, 1.0, 0.5, 0.3).unwrap();
    let regime = ScalingRegime::new(50, 0.2, 0.4).unwrap();
    let state = PopulationState {
        counts: vec![40, 25, 0],
        time: 0.0,
        discovered: vec![true, true, false],
    };
    let rates = event_rates(&state, &catalog, &regime).unwrap();
    // Categories: per trait birth, natural death, competition death,
    // migration, mutation.
    let mut expected = Vec::new();
    for r in &rates.per_trait[..2] {
        expected.extend([
            r.clonal_birth,
            r.natural_death,
            r.competition_death,
            r.migration.iter().map(|m| m.1).sum(),
            r.mutation,
        ]);
    }
    let mut observed = vec![0u64; expected.len()];
    let mut rng = replicate_rng(11, 0);
    let draws = 200_000;
    let mut waits = 0.0;
    for _ in 0..draws {
        let (ev, _) = step(&state, &catalog, &regime, &mut rng).unwrap();
        waits += ev.time;
        let channel = match ev.kind {
            EventKind::ClonalBirth => 0,
            EventKind::NaturalDeath => 1,
            EventKind::CompetitionDeath => 2,
            EventKind::Migration { .. } => 3,
            EventKind::Mutation { .. } => 4,
        };
        observed[ev.trait_index * 5 + channel] += 1;
    }
    let mut chi2 = 0.0;
    let mut dof = 0;
    for (o, r) in observed.iter().zip(&expected) {
        let e = draws as f64 * r / rates.total;
        if e > 0.0 {
            chi2 += (*o as f64 - e).powi(2) / e;
            dof += 1;
        } else {
            assert_eq!(*o, 0);
        }
    }
    let p = 1.0 - ChiSquared::new((dof - 1) as f64).unwrap().cdf(chi2);
    assert!(p > 0.001, "chi2 {chi2} p {p} observed {observed:?}");
    let mean_wait = waits / draws as f64;
    assert!((mean_wait * rates.total - 1.0).abs() < 0.01, "{mean_wait}");
}

#[test]
fn stepping_reproduces_the_simulator_path() {
    let catalog = TraitCatalog::ladder(&[3.0, 6.0, 8.0], 0.0, 1.0, 0.5, 0.2).unwrap();
    let regime = ScalingRegime::new(30, 0.3, 0.5).unwrap();
    let init = Configuration::new(vec![3.0, 0.0, 0.0]).unwrap();
    let state = PopulationState::from_configuration(&init, &catalog, &regime, Discovery::Auto).unwrap();
    let options = SimOptions {
        record_events: true,
        ..SimOptions::default()
    };
    let mut sim = Simulator::new(&catalog, &regime, state.clone(), replicate_rng(5, 0), options).unwrap();
    let (mut recorded, mut out) = (0, Vec::new());
    sim.advance(20.0, &[], &mut recorded, &mut out).unwrap();
    let traj = simulate(&catalog, &regime, &init, 20.0, &SampleGrid::Uniform { count: 2 }, 5, &options).unwrap();
    let log = traj.events.clone().unwrap();
    assert!(log.len() > 1000);
    assert!(log.iter().any(|e| matches!(e.kind, EventKind::Mutation { .. })));

    let mut rng = replicate_rng(5, 0);
    let mut s = state;
    for expected in &log {
        let (ev, next) = step(&s, &catalog, &regime, &mut rng).unwrap();
        assert_eq!(&ev, expected);
        s = next;
    }
    assert_eq!(&s.counts, &sim.state().counts);
    assert_eq!(traj.terminal().unwrap(), sim.densities().as_slice());
}

#[test]
fn chunked_advance_matches_a_single_call() {
    let catalog = TraitCatalog::ladder(&[3.0, 6.0, 8.0], 0.0, 1.0, 0.5, 0.1).unwrap();
    let regime = ScalingRegime::new(100, 0.05, 0.2).unwrap();
    let init = Configuration::new(vec![3.0, 0.0, 0.0]).unwrap();
    let samples: Vec<f64> = (0..=40).map(|i| i as f64 * 0.5).collect();
    let run = |chunks: &[f64]| {
        let state = PopulationState::from_configuration(&init, &catalog, &regime, Discovery::Auto).unwrap();
        let mut sim = Simulator::new(&catalog, &regime, state, replicate_rng(9, 3), SimOptions::default()).unwrap();
        let (mut recorded, mut out) = (0, Vec::new());
        for &c in chunks {
            sim.advance(c, &samples, &mut recorded, &mut out).unwrap();
        }
        (out, sim.event_counts(), sim.innovations().to_vec())
    };
    let whole = run(&[20.0]);
    let pieces = run(&[0.3, 1.0, 1.7, 5.0, 5.0, 12.25, 20.0]);
    assert_eq!(whole, pieces);
    assert_eq!(whole.0.len(), samples.len());
}

#[test]
fn ensembles_do_not_depend_on_worker_count() {
    let catalog = TraitCatalog::ladder(&[3.0, 6.0], 0.0, 1.0, 0.5, 0.0).unwrap();
    let regime = ScalingRegime::new(200, 0.01, 1.0).unwrap();
    let init = Configuration::new(vec![3.0, 0.0]).unwrap();
    let grid = SampleGrid::Uniform { count: 21 };
    let go = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_ensemble(&catalog, &regime, &init, 5.0, &grid, 12, 77, &SimOptions::default()).unwrap())
    };
    let one = go(1);
    assert_eq!(one, go(4));
    assert_eq!(one.replicates, 12);

    let runs = run_replicates(&catalog, &regime, &init, 5.0, &grid, 3, 77, &SimOptions::default()).unwrap();
    let single = simulate(&catalog, &regime, &init, 5.0, &grid, 77, &SimOptions::default()).unwrap();
    assert_eq!(runs[0], single);
    assert_ne!(runs[0].states, runs[1].states);
}

#[test]
fn logistic_ensemble_mean_follows_the_deterministic_limit() {
    let catalog = TraitCatalog::ladder(&[3.0], 0.0, 1.0, 0.0, 0.0).unwrap();
    let regime = ScalingRegime::new(500, 1.0, 1.0).unwrap();
    let init = Configuration::new(vec![0.5]).unwrap();
    let stats = run_ensemble(&catalog, &regime, &init, 4.0, &SampleGrid::Uniform { count: 9 }, 40, 1, &SimOptions::default()).unwrap();
    for (t, m) in stats.sample_times.iter().zip(&stats.mean) {
        let exact = 3.0 / (1.0 + 5.0 * (-3.0 * t).exp());
        assert!((m[0] - exact).abs() < 0.05 * exact + 0.02, "t={t}: {} vs {exact}", m[0]);
    }
}
