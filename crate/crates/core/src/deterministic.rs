//! Deterministic limits of the rescaled population: the logistic equation,
//! the two-trait Lotka-Volterra system and the nearest-neighbor system over a
//! whole catalog, optionally with a linear migration flux.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, ScalingRegime, TraitCatalog};
use crate::numeric::NumericPolicy;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("state has {got} components, system has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("initial state must be finite and nonnegative")]
    InvalidInitial,
    #[error("integration time must be finite and nonnegative, got {0}")]
    InvalidTime(f64),
    #[error("step size underflow at t = {time}: system too stiff for the explicit integrator")]
    StepSizeUnderflow { time: f64 },
    #[error("step budget of {0} exhausted")]
    TooManySteps(usize),
    #[error("degenerate competition kernel: determinant {0} too close to zero")]
    DegenerateKernel(f64),
    #[error("not a fixed point: vector field sup norm {residual} exceeds {tolerance}")]
    NotAFixedPoint { residual: f64, tolerance: f64 },
    #[error("operation requires a two-trait Lotka-Volterra system")]
    NotLv2,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// The right-hand side of a deterministic limit system.
#[derive(Debug, Clone, PartialEq)]
pub enum OdeSystem {
    /// `n' = (b - d - alpha n) n`.
    Logistic { birth: f64, death: f64, alpha: f64 },
    /// Two competing traits, `alpha[i][j]` the pressure of `j` on `i`.
    Lv2 {
        birth: [f64; 2],
        death: [f64; 2],
        alpha: [[f64; 2]; 2],
    },
    /// Every trait of a catalog, with migration flux
    /// `epsilon * sum_y (m(y, x) n(y) - m(x, y) n(x))` when enabled.
    NearestNeighbor {
        catalog: TraitCatalog,
        epsilon: f64,
        include_migration: bool,
    },
}

impl OdeSystem {
    pub fn logistic(birth: f64, death: f64, alpha: f64) -> Result<Self, OdeError> {
        for (what, value) in [("birth rate", birth), ("death rate", death), ("self-competition", alpha)] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(ModelError::InvalidRate { what: what.into(), value }.into());
            }
        }
        Ok(OdeSystem::Logistic { birth, death, alpha })
    }

    pub fn lv2(birth: [f64; 2], death: [f64; 2], alpha: [[f64; 2]; 2]) -> Result<Self, OdeError> {
        let all = birth.iter().chain(&death).chain(alpha.iter().flatten());
        if let Some(&value) = all.into_iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(ModelError::InvalidRate {
                what: "Lotka-Volterra parameter".into(),
                value,
            }
            .into());
        }
        Ok(OdeSystem::Lv2 { birth, death, alpha })
    }

    /// The pair `(x, y)` of a catalog as a two-trait system.
    pub fn lv2_from_catalog(catalog: &TraitCatalog, x: usize, y: usize) -> Result<Self, OdeError> {
        let n = catalog.len();
        if x >= n || y >= n {
            return Err(ModelError::IndexOutOfRange { index: x.max(y), len: n }.into());
        }
        let (tx, ty) = (catalog.trait_params(x), catalog.trait_params(y));
        let a = catalog.competition();
        Self::lv2(
            [tx.birth, ty.birth],
            [tx.death, ty.death],
            [[a.get(x, x), a.get(x, y)], [a.get(y, x), a.get(y, y)]],
        )
    }

    pub fn nearest_neighbor(catalog: &TraitCatalog, regime: &ScalingRegime, include_migration: bool) -> Self {
        OdeSystem::NearestNeighbor {
            catalog: catalog.clone(),
            epsilon: regime.epsilon(),
            include_migration,
        }
    }

    pub fn dimension(&self) -> usize {
        match self {
            OdeSystem::Logistic { .. } => 1,
            OdeSystem::Lv2 { .. } => 2,
            OdeSystem::NearestNeighbor { catalog, .. } => catalog.len(),
        }
    }

    fn check_dim(&self, n: &[f64]) -> Result<(), OdeError> {
        if n.len() != self.dimension() {
            return Err(OdeError::DimensionMismatch {
                expected: self.dimension(),
                got: n.len(),
            });
        }
        Ok(())
    }

    pub fn rhs(&self, n: &[f64]) -> Result<Vec<f64>, OdeError> {
        self.check_dim(n)?;
        let mut out = vec![0.0; n.len()];
        self.rhs_into(n, &mut out);
        Ok(out)
    }

    fn rhs_into(&self, n: &[f64], out: &mut [f64]) {
        match self {
            OdeSystem::Logistic { birth, death, alpha } => {
                out[0] = (birth - death - alpha * n[0]) * n[0];
            }
            OdeSystem::Lv2 { birth, death, alpha } => {
                for i in 0..2 {
                    out[i] = (birth[i] - death[i] - alpha[i][0] * n[0] - alpha[i][1] * n[1]) * n[i];
                }
            }
            OdeSystem::NearestNeighbor {
                catalog,
                epsilon,
                include_migration,
            } => {
                let a = catalog.competition();
                let m = catalog.migration();
                for x in 0..n.len() {
                    let t = catalog.trait_params(x);
                    let pressure: f64 = a.row(x).iter().zip(n).map(|(a, n)| a * n).sum();
                    let mut v = (t.birth - t.death - pressure) * n[x];
                    if *include_migration {
                        let mut flux = 0.0;
                        for y in 0..n.len() {
                            if y != x {
                                flux += m.get(y, x) * n[y] - m.get(x, y) * n[x];
                            }
                        }
                        v += epsilon * flux;
                    }
                    out[x] = v;
                }
            }
        }
    }

    /// Analytic Jacobian, `jac[i][j] = d rhs_i / d n_j`.
    pub fn jacobian(&self, n: &[f64]) -> Result<Vec<Vec<f64>>, OdeError> {
        self.check_dim(n)?;
        Ok(match self {
            OdeSystem::Logistic { birth, death, alpha } => vec![vec![birth - death - 2.0 * alpha * n[0]]],
            OdeSystem::Lv2 { birth, death, alpha } => {
                let g = |i: usize| birth[i] - death[i] - alpha[i][0] * n[0] - alpha[i][1] * n[1];
                vec![
                    vec![g(0) - alpha[0][0] * n[0], -alpha[0][1] * n[0]],
                    vec![-alpha[1][0] * n[1], g(1) - alpha[1][1] * n[1]],
                ]
            }
            OdeSystem::NearestNeighbor {
                catalog,
                epsilon,
                include_migration,
            } => {
                let a = catalog.competition();
                let m = catalog.migration();
                let dim = n.len();
                let mut jac = vec![vec![0.0; dim]; dim];
                for x in 0..dim {
                    let t = catalog.trait_params(x);
                    let pressure: f64 = a.row(x).iter().zip(n).map(|(a, n)| a * n).sum();
                    for y in 0..dim {
                        jac[x][y] = -a.get(x, y) * n[x];
                    }
                    jac[x][x] += t.birth - t.death - pressure;
                    if *include_migration {
                        for y in 0..dim {
                            if y != x {
                                jac[x][y] += epsilon * m.get(y, x);
                                jac[x][x] -= epsilon * m.get(x, y);
                            }
                        }
                    }
                }
                jac
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-10,
            max_steps: 10_000_000,
        }
    }
}

/// States at the accepted integration steps (or at requested grid times).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdeTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl OdeTrajectory {
    pub fn terminal(&self) -> &[f64] {
        self.states.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

// Dormand-Prince 5(4) tableau.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// Fifth-order weights minus the embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

struct Stepper<'a> {
    system: &'a OdeSystem,
    tol: Tolerances,
    k: [Vec<f64>; 7],
    stage: Vec<f64>,
    trial: Vec<f64>,
    steps: usize,
}

impl<'a> Stepper<'a> {
    fn new(system: &'a OdeSystem, tol: Tolerances) -> Self {
        let n = system.dimension();
        Self {
            system,
            tol,
            k: std::array::from_fn(|_| vec![0.0; n]),
            stage: vec![0.0; n],
            trial: vec![0.0; n],
            steps: 0,
        }
    }

    fn initial_step(&self, y: &[f64], f0: &[f64], span: f64) -> f64 {
        let scale = |i: usize| self.tol.atol + self.tol.rtol * y[i].abs();
        let rms = |v: &[f64]| (v.iter().enumerate().map(|(i, x)| (x / scale(i)).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
        let d0 = rms(y);
        let d1 = rms(f0);
        let h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        h.min(span).max(1e-12 * span.max(1.0))
    }

    /// Integrates `y` from `t` to `t_end` in place; `h` carries the step size
    /// between calls. Calls `on_step` after every accepted step.
    fn run(
        &mut self,
        t: &mut f64,
        y: &mut Vec<f64>,
        t_end: f64,
        h: &mut f64,
        mut on_step: impl FnMut(f64, &[f64]),
    ) -> Result<(), OdeError> {
        let n = y.len();
        self.system.rhs_into(y, &mut self.k[0]);
        if *h <= 0.0 {
            *h = self.initial_step(y, &self.k[0], t_end - *t);
        }
        while *t < t_end {
            if self.steps >= self.tol.max_steps {
                return Err(OdeError::TooManySteps(self.tol.max_steps));
            }
            let remaining = t_end - *t;
            let last = *h >= remaining;
            let step = if last { remaining } else { *h };
            if step <= 1e-14 * t.abs().max(1.0) {
                return Err(OdeError::StepSizeUnderflow { time: *t });
            }
            for s in 1..7 {
                for i in 0..n {
                    let mut acc = y[i];
                    for j in 0..s {
                        acc += step * A[s][j] * self.k[j][i];
                    }
                    self.stage[i] = acc;
                }
                self.system.rhs_into(&self.stage, &mut self.k[s]);
            }
            // Stage 7 was evaluated at the fifth-order solution (FSAL).
            self.trial.copy_from_slice(&self.stage);
            let mut err = 0.0;
            for i in 0..n {
                let mut e = 0.0;
                for s in 0..7 {
                    e += E[s] * self.k[s][i];
                }
                e *= step;
                let sc = self.tol.atol + self.tol.rtol * y[i].abs().max(self.trial[i].abs());
                err += (e / sc).powi(2);
            }
            let err = (err / n.max(1) as f64).sqrt();
            self.steps += 1;
            if err <= 1.0 {
                *t = if last { t_end } else { *t + step };
                for (yi, &ti) in y.iter_mut().zip(&self.trial) {
                    *yi = if ti < 0.0 && ti > -self.tol.atol { 0.0 } else { ti };
                }
                self.k.swap(0, 6);
                if y.iter().zip(&self.trial).any(|(a, b)| a != b) {
                    self.system.rhs_into(y, &mut self.k[0]);
                }
                on_step(*t, y);
                let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                if !last || factor < 1.0 {
                    *h = step * factor;
                }
            } else {
                let factor = if err.is_finite() { (0.9 * err.powf(-0.2)).clamp(0.2, 1.0) } else { 0.2 };
                *h = step * factor;
            }
        }
        Ok(())
    }
}

fn check_initial(system: &OdeSystem, y0: &[f64]) -> Result<(), OdeError> {
    system.check_dim(y0)?;
    if y0.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(OdeError::InvalidInitial);
    }
    Ok(())
}

/// Adaptive Dormand-Prince 5(4) integration from `t = 0` to `t_end`,
/// recording every accepted step.
pub fn integrate(system: &OdeSystem, y0: &[f64], t_end: f64, tol: &Tolerances) -> Result<OdeTrajectory, OdeError> {
    check_initial(system, y0)?;
    if !(t_end.is_finite() && t_end >= 0.0) {
        return Err(OdeError::InvalidTime(t_end));
    }
    let mut times = vec![0.0];
    let mut states = vec![y0.to_vec()];
    let mut y = y0.to_vec();
    let mut t = 0.0;
    let mut h = 0.0;
    Stepper::new(system, *tol).run(&mut t, &mut y, t_end, &mut h, |t, y| {
        times.push(t);
        states.push(y.to_vec());
    })?;
    Ok(OdeTrajectory { times, states })
}

/// Integration that lands exactly on each of the increasing, nonnegative
/// `grid` times.
pub fn integrate_on_grid(system: &OdeSystem, y0: &[f64], grid: &[f64], tol: &Tolerances) -> Result<OdeTrajectory, OdeError> {
    check_initial(system, y0)?;
    if let Some(bad) = grid.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
        return Err(OdeError::InvalidTime(*bad));
    }
    if let Some(w) = grid.windows(2).find(|w| w[1] < w[0]) {
        return Err(OdeError::InvalidTime(w[1]));
    }
    let mut stepper = Stepper::new(system, *tol);
    let mut y = y0.to_vec();
    let mut t = 0.0;
    let mut h = 0.0;
    let mut states = Vec::with_capacity(grid.len());
    for &target in grid {
        stepper.run(&mut t, &mut y, target, &mut h, |_, _| {})?;
        states.push(y.clone());
    }
    Ok(OdeTrajectory {
        times: grid.to_vec(),
        states,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stability {
    Stable,
    Unstable,
    Marginal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointReport {
    pub point: Vec<f64>,
    pub eigenvalues: Vec<Complex64>,
    pub classification: Stability,
    /// All coordinates nonnegative.
    pub admissible: bool,
}

fn eigenvalues(jac: &[Vec<f64>]) -> Vec<Complex64> {
    match jac.len() {
        0 => Vec::new(),
        1 => vec![Complex64::new(jac[0][0], 0.0)],
        2 => {
            let tr = jac[0][0] + jac[1][1];
            let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
            let half = tr / 2.0;
            let disc = half * half - det;
            if disc >= 0.0 {
                let s = disc.sqrt();
                // Avoid cancellation in the smaller root.
                let big = if half >= 0.0 { half + s } else { half - s };
                let small = if big != 0.0 { det / big } else { 0.0 };
                let (hi, lo) = if big >= small { (big, small) } else { (small, big) };
                vec![Complex64::new(hi, 0.0), Complex64::new(lo, 0.0)]
            } else {
                let s = (-disc).sqrt();
                vec![Complex64::new(half, s), Complex64::new(half, -s)]
            }
        }
        n => {
            let m = DMatrix::from_fn(n, n, |i, j| jac[i][j]);
            m.complex_eigenvalues()
                .iter()
                .map(|c| Complex64::new(c.re, c.im))
                .collect()
        }
    }
}

fn classify(eigs: &[Complex64], policy: &NumericPolicy) -> Stability {
    if eigs.iter().any(|e| e.re > policy.tau_eig) {
        Stability::Unstable
    } else if eigs.iter().all(|e| e.re < -policy.tau_eig) {
        Stability::Stable
    } else {
        Stability::Marginal
    }
}

fn report(system: &OdeSystem, point: Vec<f64>, policy: &NumericPolicy) -> Result<FixedPointReport, OdeError> {
    let eigenvalues = eigenvalues(&system.jacobian(&point)?);
    Ok(FixedPointReport {
        classification: classify(&eigenvalues, policy),
        admissible: point.iter().all(|v| *v >= 0.0),
        eigenvalues,
        point,
    })
}

/// Linear stability of the fixed point `point`.
pub fn classify_stability(system: &OdeSystem, point: &[f64], policy: &NumericPolicy) -> Result<FixedPointReport, OdeError> {
    let residual = system.rhs(point)?.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if !(residual < policy.tau_fp) {
        return Err(OdeError::NotAFixedPoint {
            residual,
            tolerance: policy.tau_fp,
        });
    }
    report(system, point.to_vec(), policy)
}

/// The four fixed points of a two-trait system: extinction, either trait
/// alone at equilibrium, and the interior solution of the linear system.
pub fn fixed_points_lv(system: &OdeSystem, policy: &NumericPolicy) -> Result<Vec<FixedPointReport>, OdeError> {
    let OdeSystem::Lv2 { birth, death, alpha } = system else {
        return Err(OdeError::NotLv2);
    };
    let r = [birth[0] - death[0], birth[1] - death[1]];
    let det = alpha[0][0] * alpha[1][1] - alpha[0][1] * alpha[1][0];
    for d in [alpha[0][0], alpha[1][1], det] {
        if d.abs() <= policy.tau_den {
            return Err(OdeError::DegenerateKernel(d));
        }
    }
    let interior = vec![
        (alpha[1][1] * r[0] - alpha[0][1] * r[1]) / det,
        (alpha[0][0] * r[1] - alpha[1][0] * r[0]) / det,
    ];
    [
        vec![0.0, 0.0],
        vec![r[0] / alpha[0][0], 0.0],
        vec![0.0, r[1] / alpha[1][1]],
        interior,
    ]
    .into_iter()
    .map(|p| report(system, p, policy))
    .collect()
}
