//! End-to-end acceptance checks on the shipped scenarios. Prints one line per
//! criterion and exits nonzero if any fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use innodyn_cli::commands::ode_system;
use innodyn_cli::Scenario;
use innodyn_core::analysis::{measure_fixation_time, predicted_fixation_time, total_variation_distance, tv_slices};
use innodyn_core::deterministic::{integrate, integrate_on_grid, OdeSystem, Tolerances};
use innodyn_core::jump::{
    parity_flip_oracle, simulate_tss, simulate_tst, tss_jump_rates, tst_transition, TssKernel, TstConfiguration,
};
use innodyn_core::model::{Configuration, Landscape, ScalingRegime, TraitCatalog};
use innodyn_core::stochastic::{
    replicate_rng, run_ensemble, run_replicates, EventKind, PopulationState, Simulator, Trajectory,
};
use innodyn_core::NumericPolicy;
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn scenario(name: &str) -> Scenario {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name);
    Scenario::load(&path).unwrap_or_else(|e| panic!("{e}"))
}

fn replicates(s: &Scenario, count: u64) -> Vec<Trajectory> {
    let catalog = s.catalog().unwrap();
    let initial = s.initial(&catalog).unwrap();
    run_replicates(
        &catalog,
        &s.regime().unwrap(),
        &initial,
        s.run.horizon,
        &s.grid(),
        count,
        s.run.seed,
        &s.sim_options(false),
    )
    .unwrap()
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn logistic_equilibrium() -> Outcome {
    let s = scenario("logistic.toml");
    let catalog = s.catalog().unwrap();
    let start = Instant::now();
    let stats = run_ensemble(
        &catalog,
        &s.regime().unwrap(),
        &s.initial(&catalog).unwrap(),
        10.0,
        &s.grid(),
        200,
        s.run.seed,
        &s.sim_options(false),
    )
    .unwrap();
    let elapsed = start.elapsed();
    let mean = stats.mean.last().unwrap()[0];
    let rel = (mean - 3.0).abs() / 3.0;
    outcome(
        rel <= 0.10 && elapsed < Duration::from_secs(10),
        format!("terminal mean {mean:.4} (relative error {rel:.4}, limit 0.10), {:.2} s (limit 10 s)", secs(elapsed)),
    )
}

fn lv_substitution() -> Outcome {
    let s = scenario("lv2.toml");
    let runs = replicates(&s, 100);
    let terminal: Vec<&[f64]> = runs.iter().map(|r| r.terminal().unwrap()).collect();
    let extinct = terminal.iter().filter(|t| t[0] == 0.0).count();
    let invaded: Vec<_> = terminal.iter().filter(|t| t[1] > 0.0).collect();
    let extinct_given_invasion = invaded.iter().filter(|t| t[0] == 0.0).count();

    let system = ode_system(&s).unwrap();
    let catalog = s.catalog().unwrap();
    let ode = integrate(&system, s.initial(&catalog).unwrap().density(), 30.0, &Tolerances::default()).unwrap();
    let end = ode.terminal();
    let ode_gap = end[0].abs().max((end[1] - 6.0).abs());
    outcome(
        extinct >= 95 && ode_gap <= 1e-4,
        format!(
            "weaker trait extinct by t=30 in {extinct}/100 seeds (need 95); invader survived in {}/100 and the \
             weaker trait is extinct in {extinct_given_invasion} of those; ODE terminal ({:.3e}, {:.8}) gap {ode_gap:.2e}",
            invaded.len(),
            end[0],
            end[1]
        ),
    )
}

fn fraction_near(runs: &[Trajectory], target: &[f64], delta: f64) -> usize {
    runs.iter()
        .filter(|r| tv_slices(r.terminal().unwrap(), target).unwrap() <= delta)
        .count()
}

fn figure_two(left: &[Trajectory], right: &[Trajectory], elapsed: Duration) -> Outcome {
    let l = fraction_near(left, &[3.0, 0.0, 8.0], 1.0);
    let r = fraction_near(right, &[0.0, 6.0, 0.0, 10.0], 1.0);
    outcome(
        l >= 45 && r >= 45 && elapsed < Duration::from_secs(120),
        format!(
            "left within TV 1 of (3,0,8) in {l}/50, right within TV 1 of (0,6,0,10) in {r}/50 (need 45 each), \
             {:.1} s (limit 120 s)",
            secs(elapsed)
        ),
    )
}

fn fixation_timescale(left: &[Trajectory]) -> Outcome {
    let s = scenario("fig2_left.toml");
    let catalog = s.catalog().unwrap();
    let eps = s.regime().unwrap().epsilon();
    // Bound from the invasion fitnesses: 1/f(x1,x0) + 1/f(x2,x1) + c1/r(x0),
    // c1 = min(|f(x0,x1)| / f(x2,x1), 1).
    let (f10, f21, f01) = (6.0 - 3.0, 8.0 - 6.0, 3.0 - 6.0_f64);
    let oracle = 1.0 / f10 + 1.0 / f21 + (f01.abs() / f21).min(1.0) / 3.0;
    let predicted = predicted_fixation_time(&catalog, [0, 1, 2], &NumericPolicy::default())
        .unwrap()
        .predicted_time_units;
    let limit = 2.0 * oracle;
    let target = Configuration::new(vec![3.0, 0.0, 8.0]).unwrap();
    let scaled: Vec<Option<f64>> = left
        .iter()
        .map(|r| {
            measure_fixation_time(&r.sample_times, &r.states, &target, 1.0, eps)
                .unwrap()
                .map(|f| f.scaled)
        })
        .collect();
    let ok = scaled.iter().filter(|v| v.is_some_and(|v| v <= limit)).count();
    let mut seen: Vec<f64> = scaled.iter().flatten().copied().collect();
    seen.sort_by(f64::total_cmp);
    let median = seen.get(seen.len() / 2).copied().unwrap_or(f64::NAN);
    outcome(
        ok >= 45 && (predicted - 7.0 / 6.0).abs() < 1e-12 && (oracle - 7.0 / 6.0).abs() < 1e-12,
        format!(
            "predicted bound {predicted:.6} (independent 7/6 = {oracle:.6}); fixation time / ln(1/eps) <= {limit:.4} \
             in {ok}/50 seeds (need 45), median {median:.3}"
        ),
    )
}

fn ladder(n: usize) -> Landscape {
    let births: Vec<f64> = (0..n).map(|i| 3.0 + 2.0 * i as f64).collect();
    Landscape::new(TraitCatalog::ladder(&births, 0.0, 1.0, 0.5, 0.5).unwrap(), NumericPolicy::default()).unwrap()
}

fn tree_algebra() -> Outcome {
    let n = 7;
    let landscape = ladder(n);
    let start = Instant::now();
    let (mut checked, mut mismatches) = (0usize, 0usize);
    for mask in 1u32..1 << n {
        let size = mask.count_ones() as usize;
        if size > 6 {
            continue;
        }
        let traits: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
        let config = TstConfiguration::alternating(&landscape, traits.clone(), size - 1).unwrap();
        for mutant in (0..n).filter(|m| !traits.contains(m)) {
            let p = config.insertion_position(&landscape, mutant);
            let oracle = parity_flip_oracle(&config, p, mutant, &landscape).unwrap();
            for parent in config.present_traits() {
                checked += 1;
                if tst_transition(&config, parent, mutant, &landscape).unwrap() != oracle {
                    mismatches += 1;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        mismatches == 0 && elapsed < Duration::from_secs(1),
        format!("{checked} transitions, {mismatches} mismatches, {:.3} s (limit 1 s)", secs(elapsed)),
    )
}

/// The alternating equilibrium on the first `n + 1` traits of the ladder.
fn gamma(births: &[f64], n: usize, len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| if i <= n && (n - i) % 2 == 0 { births[i] } else { 0.0 })
        .collect()
}

/// Follows the tree configuration through the mutation log of one stochastic
/// run and records which generations were seen within `delta` of their
/// alternating equilibrium.
fn visits_every_generation(s: &Scenario, landscape: &Landscape, replicate: u64, delta: f64) -> bool {
    let catalog = s.catalog().unwrap();
    let regime = s.regime().unwrap();
    let n = catalog.len();
    let initial = s.initial(&catalog).unwrap();
    let state = PopulationState::from_configuration(&initial, &catalog, &regime, s.run.discovery).unwrap();
    let mut sim = Simulator::new(&catalog, &regime, state, replicate_rng(s.run.seed, replicate), s.sim_options(false)).unwrap();
    let mut tree = TstConfiguration::ancestor(landscape, 0).unwrap();
    let mut hit = vec![false; n];
    let (mut t, mut seen, mut after_last) = (0.0, 0, 0.0);
    let (mut recorded, mut out) = (0, Vec::new());
    while t < 20_000.0 {
        t += 0.5;
        sim.advance(t, &[], &mut recorded, &mut out).unwrap();
        let log = sim.innovations();
        while seen < log.len() {
            if let EventKind::Mutation { from, to } = log[seen].kind {
                if !hit[tree.generation] {
                    return false;
                }
                let parent = if tree.is_present(from) {
                    from
                } else {
                    tree.present_traits().next().unwrap()
                };
                tree = tst_transition(&tree, parent, to, landscape).unwrap();
            }
            seen += 1;
        }
        let target = tree.to_configuration(n);
        if tv_slices(&sim.densities(), target.density()).unwrap() <= delta {
            hit[tree.generation] = true;
        }
        if hit[n - 1] {
            return true;
        }
        if tree.generation == n - 1 {
            after_last += 0.5;
            if after_last > 60.0 {
                return false;
            }
        }
    }
    false
}

fn figure_three() -> Outcome {
    let s = scenario("fig3.toml");
    let catalog = s.catalog().unwrap();
    let births: Vec<f64> = catalog.traits().iter().map(|t| t.birth).collect();
    let landscape = Landscape::new(catalog.clone(), NumericPolicy::default()).unwrap();
    let ancestor = TstConfiguration::ancestor(&landscape, 0).unwrap();
    let path = simulate_tst(&ancestor, 1e9, &landscape, s.run.seed).unwrap();
    let exact = path.configurations.len() == births.len()
        && path
            .configurations
            .iter()
            .enumerate()
            .all(|(g, c)| c.to_configuration(births.len()).density() == gamma(&births, g, births.len()).as_slice());
    let start = Instant::now();
    let visited = (0..30).filter(|&r| visits_every_generation(&s, &landscape, r, 1.5)).count();
    outcome(
        exact && visited >= 24,
        format!(
            "tree sequence {} the alternating equilibria for generations 0..4; stochastic runs near every \
             generation in {visited}/30 seeds (need 24), {:.1} s",
            if exact { "matches" } else { "does not match" },
            secs(start.elapsed())
        ),
    )
}

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

fn substitution_rates() -> Outcome {
    let s = scenario("fig1_tss.toml");
    let landscape = Landscape::new(s.catalog().unwrap(), NumericPolicy::default()).unwrap();
    let mut discovered = vec![false; 4];
    discovered[0] = true;
    let rates = tss_jump_rates(&landscape, 0, &discovered, s.run.tss_kernel).unwrap();
    // n(x0) * f(x1, x0) / b(x1) * mu(x0) = 3 * 3 / 6 * 0.5.
    let expected = 3.0 * 3.0 / 6.0 * 0.5;
    let rate_ok = rates.len() == 1 && rates[0].0 == 1 && (rates[0].1 - expected).abs() < 1e-12;
    let holding: Vec<f64> = (0..10_000)
        .map(|seed| simulate_tss(&landscape, 0, 1e9, seed, TssKernel::Mutation).unwrap().times[1])
        .collect();
    let p = ks_p_value(holding, |t| 1.0 - (-0.75 * t).exp());
    outcome(
        rate_ok && p > 0.01,
        format!("rate {:?} (expected 0.75); KS p-value {p:.4} over 10^4 holding times (need > 0.01)", rates),
    )
}

fn numerical_checks() -> Outcome {
    let mut rng = replicate_rng(2024, 0);
    let mut worst_jac = 0.0_f64;
    for _ in 0..100 {
        let births: Vec<f64> = (0..3).map(|_| rng.random_range(1.0..10.0)).collect();
        let catalog = TraitCatalog::ladder(&births, 0.1, rng.random_range(0.2..2.0), rng.random_range(0.0..1.0), 0.0)
            .unwrap();
        let regime = ScalingRegime::new(1000, rng.random_range(0.001..1.0), 1.0).unwrap();
        let system = OdeSystem::nearest_neighbor(&catalog, &regime, true);
        let n: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..10.0)).collect();
        let analytic = system.jacobian(&n).unwrap();
        let scale = analytic.iter().flatten().fold(1.0_f64, |m, v| m.max(v.abs()));
        for j in 0..3 {
            let h = 1e-5 * n[j].abs().max(1.0);
            let (mut up, mut down) = (n.clone(), n.clone());
            up[j] += h;
            down[j] -= h;
            let (fu, fd) = (system.rhs(&up).unwrap(), system.rhs(&down).unwrap());
            for i in 0..3 {
                let numeric = (fu[i] - fd[i]) / (2.0 * h);
                worst_jac = worst_jac.max((analytic[i][j] - numeric).abs() / scale);
            }
        }
    }

    let logistic = OdeSystem::logistic(3.0, 0.0, 1.0).unwrap();
    let grid: Vec<f64> = (0..=100).map(|i| i as f64 * 0.1).collect();
    let traj = integrate_on_grid(&logistic, &[0.5], &grid, &Tolerances::default()).unwrap();
    let worst_logistic = traj
        .times
        .iter()
        .zip(&traj.states)
        .map(|(t, s)| {
            let exact = 3.0 / (1.0 + 5.0 * (-3.0 * t).exp());
            (s[0] - exact).abs() / exact
        })
        .fold(0.0_f64, f64::max);

    let mut violations = 0;
    for _ in 0..10_000 {
        let mut draw = || {
            Configuration::new((0..5).map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.0..20.0) }).collect())
                .unwrap()
        };
        let (a, b, c) = (draw(), draw(), draw());
        let d = |x: &Configuration, y: &Configuration| total_variation_distance(x, y).unwrap();
        let (ab, ba, ac, cb) = (d(&a, &b), d(&b, &a), d(&a, &c), d(&c, &b));
        let ok = d(&a, &a) == 0.0 && ab >= 0.0 && ab == ba && ab <= (ac + cb) * (1.0 + 1e-12) && (ab > 0.0 || a == b);
        if !ok {
            violations += 1;
        }
    }
    outcome(
        worst_jac <= 1e-6 && worst_logistic <= 1e-6 && violations == 0,
        format!(
            "worst Jacobian relative error {worst_jac:.2e}, logistic relative error {worst_logistic:.2e} (limits 1e-6); \
             {violations} metric-axiom violations in 10^4 triples"
        ),
    )
}

fn cli(args: &[&str], out: &Path) -> bool {
    Command::new(env!("CARGO_BIN_EXE_innodyn"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("INNODYN_OUT_DIR")
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn same_files(a: &Path, b: &Path) -> Result<usize, String> {
    let mut names: Vec<PathBuf> = std::fs::read_dir(a)
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().path())
        .collect();
    names.sort();
    for p in &names {
        let name = p.file_name().unwrap();
        let left = std::fs::read(p).map_err(|e| e.to_string())?;
        let right = std::fs::read(b.join(name)).map_err(|e| format!("{}: {e}", name.to_string_lossy()))?;
        if left != right {
            return Err(format!("{} differs", name.to_string_lossy()));
        }
    }
    Ok(names.len())
}

fn determinism() -> Outcome {
    let dir = tempfile::TempDir::new().unwrap();
    let sc = |name: &str| {
        Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("../../scenarios")
            .join(name)
            .display()
            .to_string()
    };
    let runs: Vec<(&str, Vec<String>)> = vec![
        ("simulate-fig2-left", vec!["simulate".into(), sc("fig2_left.toml"), "--events".into()]),
        ("simulate-fig3", vec!["simulate".into(), sc("fig3.toml"), "--horizon".into(), "300".into()]),
        ("ensemble-logistic", vec!["ensemble".into(), sc("logistic.toml")]),
        ("ensemble-fig2-right", vec!["ensemble".into(), sc("fig2_right.toml"), "--replicates".into(), "6".into()]),
        ("ode-fig2-left", vec!["ode".into(), sc("fig2_left.toml")]),
        ("tss-fig1", vec!["tss".into(), sc("fig1_tss.toml"), "--format".into(), "json".into()]),
        ("tst-fig3", vec!["tst".into(), sc("fig3.toml")]),
    ];
    let mut files = 0;
    for (label, args) in &runs {
        let mut outs = Vec::new();
        for threads in ["1", "3"] {
            let out = dir.path().join(format!("{label}-{threads}"));
            let mut full = vec!["--threads", threads];
            full.extend(args.iter().map(String::as_str));
            if !cli(&full, &out) {
                return outcome(false, format!("{label} with {threads} threads did not succeed"));
            }
            outs.push(out);
        }
        match same_files(&outs[0], &outs[1]) {
            Ok(n) => files += n,
            Err(e) => return outcome(false, format!("{label}: {e}")),
        }
    }
    outcome(true, format!("{files} output files byte-identical across reruns with 1 and 3 worker threads"))
}

fn main() {
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut record = |n, name, o: Outcome| {
        println!("[{}] criterion {n} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };
    record(1, "logistic equilibrium", logistic_equilibrium());
    record(2, "two-trait substitution", lv_substitution());
    let start = Instant::now();
    let left = replicates(&scenario("fig2_left.toml"), 50);
    let right = replicates(&scenario("fig2_right.toml"), 50);
    let elapsed = start.elapsed();
    record(3, "alternating equilibria under migration", figure_two(&left, &right, elapsed));
    record(4, "fixation timescale", fixation_timescale(&left));
    record(5, "substitution tree algebra", tree_algebra());
    record(6, "substitution tree ladder", figure_three());
    record(7, "substitution sequence rates", substitution_rates());
    record(8, "numerical checks", numerical_checks());
    record(9, "determinism", determinism());
    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!("{} of {} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}
