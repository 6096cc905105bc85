//! Finite-dimensional Galerkin truncation in the lowest `n` eigenmodes,
//! integrated with an explicit embedded Runge-Kutta pair.
//!
//! With the orthonormal basis the system reads
//!
//! ```text
//! c_j  = (lambda_j - 1) a_j + <psi'(phi_n), w_j> - chi_phi b_j
//! a_j' = -<m(phi_n) grad mu_n, grad w_j> + <p(phi_n)(N_n - mu_n), w_j>
//! b_j' = -<n(phi_n) grad(chi_sigma sigma_n - chi_phi phi_n), grad w_j> - <p(phi_n)(N_n - mu_n), w_j>
//! ```
//!
//! Nonlinear inner products use a refined quadrature grid that integrates
//! polynomial nonlinearities exactly.

use std::sync::Arc;

use crate::potentials::{MobilitySpec, PotentialFamily};
use crate::solver::{run, EnergyReport, ModelParams, RunOptions, SchemeOpts, SolverError, State, TimeOrder};
use crate::spectral::{Field, Grid, GridError, Quadrature};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GalerkinError {
    #[error("truncation size must be at least 1")]
    NoModes,
    #[error("requested {requested} modes but the grid only carries {capacity}")]
    TooManyModes { requested: usize, capacity: usize },
    #[error("coefficient vectors have lengths {a} and {b}, expected {n}")]
    Shape { n: usize, a: usize, b: usize },
    #[error(
        "integrator gave up at t = {t} after {steps} steps (h = {h:e}); stiffest component is {field}-mode {mode} (eigenvalue {lambda})"
    )]
    Stiff {
        t: f64,
        h: f64,
        steps: usize,
        mode: usize,
        field: char,
        lambda: f64,
    },
    #[error("trajectory became non-finite at t = {0}")]
    NonFinite(f64),
    #[error("horizon and sample spacing must be non-negative and finite")]
    InvalidHorizon,
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Galerkin coefficients against the `n` lowest eigenmodes of a grid,
/// ordered by eigenvalue (the constant mode first).
#[derive(Debug, Clone, PartialEq)]
pub struct GalerkinState {
    pub grid: Arc<Grid>,
    /// Flat grid indices of the retained modes.
    pub modes: Vec<usize>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub t: f64,
}

impl GalerkinState {
    pub fn n(&self) -> usize {
        self.a.len()
    }

    fn embed(&self, coefficients: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.grid.len()];
        for (&k, &c) in self.modes.iter().zip(coefficients) {
            full[k] = c;
        }
        full
    }

    /// The truncated fields sampled on the grid.
    pub fn to_state(&self) -> State {
        let phi = self.grid.inverse(&self.embed(&self.a));
        let sigma = self.grid.inverse(&self.embed(&self.b));
        State {
            t: self.t,
            phi: Field::from_raw(self.grid.clone(), phi),
            sigma: Field::from_raw(self.grid.clone(), sigma),
        }
    }

    /// `a_0 + b_0`, proportional to the total mass.
    pub fn constant_mode_sum(&self) -> f64 {
        self.a[0] + self.b[0]
    }
}

/// Flat indices of the `n` lowest eigenvalues, ties broken by index.
pub fn mode_order(grid: &Grid, n: usize) -> Result<Vec<usize>, GalerkinError> {
    if n == 0 {
        return Err(GalerkinError::NoModes);
    }
    if n > grid.len() {
        return Err(GalerkinError::TooManyModes {
            requested: n,
            capacity: grid.len(),
        });
    }
    let ev = grid.eigenvalues();
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&i, &j| ev[i].total_cmp(&ev[j]).then(i.cmp(&j)));
    order.truncate(n);
    Ok(order)
}

/// Orthogonal projection onto the first `n` modes.
pub fn project_initial(state: &State, n: usize) -> Result<GalerkinState, GalerkinError> {
    let grid = state.grid().clone();
    let modes = mode_order(&grid, n)?;
    let phi = state.phi.to_modes();
    let sigma = state.sigma.to_modes();
    Ok(GalerkinState {
        a: modes.iter().map(|&k| phi.coefficients()[k]).collect(),
        b: modes.iter().map(|&k| sigma.coefficients()[k]).collect(),
        modes,
        grid,
        t: state.t,
    })
}

/// Refinement factor that makes every polynomial integrand exact: an
/// integrand of degree `D` in the fields has frequencies below `D N / 2`.
/// Non-polynomial ingredients fall back to 3.
pub fn dealias_factor(params: &ModelParams) -> usize {
    let psi = match &params.psi.family {
        PotentialFamily::Truncated { .. } => None,
        f => f.derivative_degree().map(|d| d + 1),
    };
    let exchange = if params.p.is_identically_zero() {
        Some(0)
    } else {
        params.p.degree().map(|d| d + 2)
    };
    let smooth_mobility = params.mobility_m.is_unit() && params.mobility_n.is_unit();
    match (psi, exchange, smooth_mobility) {
        (Some(p), Some(e), true) => p.max(e).div_ceil(2).max(2),
        _ => 3,
    }
}

/// Evaluates the truncated system; build once, call many times.
pub struct GalerkinSystem {
    params: ModelParams,
    grid: Arc<Grid>,
    modes: Vec<usize>,
    kappa: Vec<f64>,
    quad: Quadrature,
}

/// Right-hand side together with the pieces the energy report needs.
struct Evaluation {
    da: Vec<f64>,
    db: Vec<f64>,
    d_mu: f64,
    d_n: f64,
    d_exchange: f64,
}

impl GalerkinSystem {
    pub fn new(grid: Arc<Grid>, n: usize, params: &ModelParams) -> Result<Self, GalerkinError> {
        let factor = dealias_factor(params);
        Self::with_factor(grid, n, params, factor)
    }

    pub fn with_factor(grid: Arc<Grid>, n: usize, params: &ModelParams, factor: usize) -> Result<Self, GalerkinError> {
        let modes = mode_order(&grid, n)?;
        let kappa = modes.iter().map(|&k| grid.eigenvalue(k) - 1.0).collect();
        let quad = Quadrature::new(grid.clone(), factor)?;
        Ok(Self {
            params: params.clone(),
            grid,
            modes,
            kappa,
            quad,
        })
    }

    pub fn n(&self) -> usize {
        self.modes.len()
    }

    pub fn modes(&self) -> &[usize] {
        &self.modes
    }

    fn lift(&self, coefficients: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.grid.len()];
        for (&k, &c) in self.modes.iter().zip(coefficients) {
            full[k] = c;
        }
        self.quad.lift(&full)
    }

    fn project(&self, values: &[f64]) -> Vec<f64> {
        let full = self.quad.project(values);
        self.modes.iter().map(|&k| full[k]).collect()
    }

    /// `<w(phi) grad f, grad w_j>` for every retained mode.
    fn stiffness(&self, f: &[f64], phi: &[f64], weight: &MobilitySpec) -> Vec<f64> {
        let fine = self.quad.fine();
        let mut grad = fine.gradient(f);
        for component in &mut grad {
            for (g, &s) in component.iter_mut().zip(phi) {
                *g *= weight.eval(s);
            }
        }
        let div = self.quad.truncate(&fine.divergence_modes(&grad));
        self.modes.iter().map(|&k| -div[k]).collect()
    }

    fn weighted_square(&self, f: &[f64], phi: &[f64], weight: &MobilitySpec) -> f64 {
        let fine = self.quad.fine();
        let grad = fine.gradient(f);
        let total: f64 = phi
            .iter()
            .enumerate()
            .map(|(i, &s)| weight.eval(s) * grad.iter().map(|c| c[i] * c[i]).sum::<f64>())
            .sum();
        total * fine.cell_volume()
    }

    fn evaluate(&self, a: &[f64], b: &[f64]) -> Evaluation {
        let p = &self.params;
        let n = self.n();
        let phi = self.lift(a);
        let sigma = self.lift(b);
        let dpsi: Vec<f64> = phi.iter().map(|&s| p.psi.eval(s).d1).collect();
        let dpsi_j = self.project(&dpsi);
        let c: Vec<f64> = (0..n)
            .map(|j| self.kappa[j] * a[j] + dpsi_j[j] - p.chi_phi * b[j])
            .collect();
        let mu = self.lift(&c);
        let nutrient: Vec<f64> = phi
            .iter()
            .zip(&sigma)
            .map(|(&f, &s)| p.chi_sigma * s + p.chi_phi * (1.0 - f))
            .collect();
        let gap: Vec<f64> = nutrient.iter().zip(&mu).map(|(n, m)| n - m).collect();
        let rate: Vec<f64> = phi.iter().map(|&f| p.p.eval(f).0).collect();
        let source: Vec<f64> = rate.iter().zip(&gap).map(|(r, g)| r * g).collect();
        let source_j = self.project(&source);
        let d_exchange = self.quad.fine().cell_volume()
            * rate.iter().zip(&gap).map(|(r, g)| r * g * g).sum::<f64>();

        // coefficients of chi_sigma sigma - chi_phi phi, i.e. N up to a constant
        let drive: Vec<f64> = (0..n).map(|j| p.chi_sigma * b[j] - p.chi_phi * a[j]).collect();

        let (flux_a, d_mu) = if p.mobility_m.is_unit() {
            let flux: Vec<f64> = (0..n).map(|j| self.kappa[j] * c[j]).collect();
            let d = (0..n).map(|j| self.kappa[j] * c[j] * c[j]).sum();
            (flux, d)
        } else {
            (
                self.stiffness(&mu, &phi, &p.mobility_m),
                self.weighted_square(&mu, &phi, &p.mobility_m),
            )
        };
        let (flux_b, d_n) = if p.mobility_n.is_unit() {
            let flux: Vec<f64> = (0..n).map(|j| self.kappa[j] * drive[j]).collect();
            let d = (0..n).map(|j| self.kappa[j] * drive[j] * drive[j]).sum();
            (flux, d)
        } else {
            let field = self.lift(&drive);
            (
                self.stiffness(&field, &phi, &p.mobility_n),
                self.weighted_square(&field, &phi, &p.mobility_n),
            )
        };

        Evaluation {
            da: (0..n).map(|j| -flux_a[j] + source_j[j]).collect(),
            db: (0..n).map(|j| -flux_b[j] - source_j[j]).collect(),
            d_mu,
            d_n,
            d_exchange,
        }
    }

    pub fn rhs(&self, a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let e = self.evaluate(a, b);
        (e.da, e.db)
    }

    /// Energy and dissipation of the truncated fields, integrals exact
    /// for polynomial data.
    pub fn report(&self, g: &GalerkinState) -> EnergyReport {
        let p = &self.params;
        let phi = self.lift(&g.a);
        let sigma = self.lift(&g.b);
        let h = self.quad.fine().cell_volume();
        let gradient_term = 0.5 * (0..self.n()).map(|j| self.kappa[j] * g.a[j] * g.a[j]).sum::<f64>();
        let potential_term = h * phi.iter().map(|&s| p.psi.eval(s).value).sum::<f64>();
        let sigma_term = 0.5 * p.chi_sigma * g.b.iter().map(|v| v * v).sum::<f64>();
        let cross_term = p.chi_phi * h * phi.iter().zip(&sigma).map(|(f, s)| s * (1.0 - f)).sum::<f64>();
        let e = self.evaluate(&g.a, &g.b);
        let state = g.to_state();
        let lambda = |k: usize| self.grid.eigenvalue(k);
        EnergyReport {
            t: g.t,
            dt_used: 0.0,
            energy: gradient_term + potential_term + sigma_term + cross_term,
            gradient_term,
            potential_term,
            sigma_term,
            cross_term,
            d_mu: e.d_mu,
            d_n: e.d_n,
            d_exchange: e.d_exchange,
            mass: state.mass(),
            phi_min: state.phi.min(),
            phi_max: state.phi.max(),
            h1_phi: self.modes.iter().zip(&g.a).map(|(&k, a)| lambda(k) * a * a).sum::<f64>().sqrt(),
            l2_sigma: g.b.iter().map(|v| v * v).sum::<f64>().sqrt(),
            h1dual_phit: self.modes.iter().zip(&e.da).map(|(&k, v)| v * v / lambda(k)).sum::<f64>().sqrt(),
            h1dual_sigmat: self.modes.iter().zip(&e.db).map(|(&k, v)| v * v / lambda(k)).sum::<f64>().sqrt(),
        }
    }
}

/// The right-hand side of a Galerkin state for one-off use.
pub fn galerkin_rhs(g: &GalerkinState, params: &ModelParams) -> Result<(Vec<f64>, Vec<f64>), GalerkinError> {
    let sys = GalerkinSystem::new(g.grid.clone(), g.n(), params)?;
    Ok(sys.rhs(&g.a, &g.b))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GalerkinOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Output spacing; also the first trial step.
    pub sample_dt: f64,
    pub max_steps: usize,
    /// `None` uses [`dealias_factor`].
    pub dealias: Option<usize>,
}

impl Default for GalerkinOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-9,
            atol: 1e-12,
            sample_dt: 1e-2,
            max_steps: 5_000_000,
            dealias: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GalerkinTrajectory {
    pub samples: Vec<GalerkinState>,
    pub reports: Vec<EnergyReport>,
    /// `int_0^t (D_mu + D_N + D_exchange)` at each sample.
    pub dissipated: Vec<f64>,
    pub steps: usize,
    pub rejected: usize,
}

impl GalerkinTrajectory {
    pub fn last(&self) -> &GalerkinState {
        self.samples.last().expect("trajectory holds the initial sample")
    }

    /// Largest `|E(t) + int_0^t D - E(0)|` over the samples.
    pub fn energy_identity_defect(&self) -> f64 {
        let e0 = self.reports[0].energy;
        self.reports
            .iter()
            .zip(&self.dissipated)
            .map(|(r, d)| (r.energy + d - e0).abs())
            .fold(0.0, f64::max)
    }
}

// Dormand-Prince 5(4) tableau
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Outcome of an adaptive integration to a fixed end time.
struct Dopri {
    steps: usize,
    rejected: usize,
    h: f64,
}

/// Adaptive DOPRI5 from `t0` to `t1`. On failure returns the component
/// with the largest scaled error of the last attempt.
fn dopri5(
    f: &mut impl FnMut(&[f64]) -> Vec<f64>,
    y: &mut [f64],
    t0: f64,
    t1: f64,
    h0: f64,
    opts: &GalerkinOptions,
    budget: usize,
) -> Result<Dopri, (f64, f64, usize, usize)> {
    let dim = y.len();
    let mut t = t0;
    let mut h = h0.min(t1 - t0);
    let mut steps = 0;
    let mut rejected = 0;
    let mut k = vec![vec![0.0; dim]; 7];
    k[0] = f(y);
    let mut stage = vec![0.0; dim];
    let mut worst = 0;
    while t1 - t > 1e-14 * t1.abs().max(1.0) {
        if steps + rejected >= budget || h < 1e-14 * t1.abs().max(1.0) {
            return Err((t, h, steps, worst));
        }
        let last = t + h >= t1;
        if last {
            h = t1 - t;
        }
        for s in 1..7 {
            for i in 0..dim {
                let mut acc = 0.0;
                for (r, kr) in k.iter().enumerate().take(s) {
                    acc += A[s][r] * kr[i];
                }
                stage[i] = y[i] + h * acc;
            }
            k[s] = f(&stage);
        }
        // stage now holds the fifth-order solution (FSAL row)
        let mut err = 0.0f64;
        let mut worst_err = 0.0;
        for i in 0..dim {
            let e: f64 = h * E.iter().zip(&k).map(|(c, kr)| c * kr[i]).sum::<f64>();
            let scale = opts.atol + opts.rtol * y[i].abs().max(stage[i].abs());
            let ratio = (e / scale).powi(2);
            if ratio > worst_err {
                worst_err = ratio;
                worst = i;
            }
            err += ratio;
        }
        let err = (err / dim as f64).sqrt();
        if !err.is_finite() {
            h *= 0.1;
            rejected += 1;
            continue;
        }
        if err <= 1.0 {
            y.copy_from_slice(&stage);
            t = if last { t1 } else { t + h };
            k.swap(0, 6);
            steps += 1;
        } else {
            rejected += 1;
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= if err <= 1.0 { factor } else { factor.min(1.0) };
    }
    Ok(Dopri { steps, rejected, h })
}

/// Integrates to `t_end` with samples every `opts.sample_dt` and at the end.
pub fn integrate_galerkin(
    g0: &GalerkinState,
    params: &ModelParams,
    t_end: f64,
    opts: &GalerkinOptions,
) -> Result<GalerkinTrajectory, GalerkinError> {
    if !(t_end.is_finite() && t_end >= 0.0 && opts.sample_dt.is_finite() && opts.sample_dt > 0.0) {
        return Err(GalerkinError::InvalidHorizon);
    }
    let n = g0.n();
    if g0.b.len() != n || g0.modes.len() != n {
        return Err(GalerkinError::Shape {
            n: g0.modes.len(),
            a: g0.a.len(),
            b: g0.b.len(),
        });
    }
    let factor = opts.dealias.unwrap_or_else(|| dealias_factor(params));
    let sys = GalerkinSystem::with_factor(g0.grid.clone(), n, params, factor)?;
    if sys.modes != g0.modes {
        return Err(GalerkinError::Shape { n, a: g0.a.len(), b: g0.b.len() });
    }

    let mut rhs = |y: &[f64]| -> Vec<f64> {
        let e = sys.evaluate(&y[..n], &y[n..2 * n]);
        let mut out = e.da;
        out.extend(e.db);
        out.push(e.d_mu + e.d_n + e.d_exchange);
        out
    };

    let mut y: Vec<f64> = g0.a.iter().chain(&g0.b).copied().chain([0.0]).collect();
    let mut samples = vec![g0.clone()];
    let mut reports = vec![sys.report(g0)];
    let mut dissipated = vec![0.0];
    let mut steps = 0;
    let mut rejected = 0;
    let mut h = opts.sample_dt.min(1e-3);
    let mut t = g0.t;
    let t_final = g0.t + t_end;
    while t_final - t > 1e-12 * opts.sample_dt {
        let next = (t + opts.sample_dt).min(t_final);
        let budget = opts.max_steps.saturating_sub(steps + rejected);
        match dopri5(&mut rhs, &mut y, t, next, h, opts, budget) {
            Ok(out) => {
                steps += out.steps;
                rejected += out.rejected;
                h = out.h;
            }
            Err((t_fail, h_fail, done, component)) => {
                if y.iter().any(|v| !v.is_finite()) {
                    return Err(GalerkinError::NonFinite(t_fail));
                }
                let mode = component % n;
                return Err(GalerkinError::Stiff {
                    t: t_fail,
                    h: h_fail,
                    steps: steps + done,
                    mode,
                    field: if component < n { 'a' } else if component < 2 * n { 'b' } else { 'D' },
                    lambda: g0.grid.eigenvalue(g0.modes[mode]),
                });
            }
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(GalerkinError::NonFinite(next));
        }
        t = next;
        let g = GalerkinState {
            grid: g0.grid.clone(),
            modes: g0.modes.clone(),
            a: y[..n].to_vec(),
            b: y[n..2 * n].to_vec(),
            t,
        };
        reports.push(sys.report(&g));
        dissipated.push(y[2 * n]);
        samples.push(g);
    }
    Ok(GalerkinTrajectory {
        samples,
        reports,
        dissipated,
        steps,
        rejected,
    })
}

#[derive(Debug, thiserror::Error)]
pub enum CrossvalError {
    #[error(transparent)]
    Galerkin(#[from] GalerkinError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossvalOptions {
    /// Fixed step of the grid solver (second-order extrapolated IMEX).
    pub dt: f64,
    pub samples: usize,
    pub threshold: f64,
    pub galerkin: GalerkinOptions,
}

impl Default for CrossvalOptions {
    fn default() -> Self {
        Self {
            dt: 1e-5,
            samples: 10,
            threshold: 1e-6,
            galerkin: GalerkinOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossvalPoint {
    pub t: f64,
    pub gap_phi: f64,
    pub gap_sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossvalReport {
    pub n: usize,
    pub points: Vec<CrossvalPoint>,
    pub max_gap: f64,
    pub passed: bool,
    pub galerkin_steps: usize,
}

/// Runs the Galerkin system on every mode of the grid next to the grid
/// solver with the same quadrature, and records the `L2` gaps.
pub fn cross_validate(
    initial: &State,
    params: &ModelParams,
    t_end: f64,
    opts: &CrossvalOptions,
) -> Result<CrossvalReport, CrossvalError> {
    let grid = initial.grid().clone();
    let n = grid.len();
    let g0 = project_initial(initial, n)?;
    let factor = opts.galerkin.dealias.unwrap_or_else(|| dealias_factor(params));
    let samples = opts.samples.max(1);
    let gopts = GalerkinOptions {
        sample_dt: t_end / samples as f64,
        dealias: Some(factor),
        ..opts.galerkin
    };
    let traj = integrate_galerkin(&g0, params, t_end, &gopts)?;
    let run_opts = RunOptions {
        dt: opts.dt,
        scheme: SchemeOpts {
            guard: false,
            order: TimeOrder::Extrapolated,
            dealias: factor,
            ..SchemeOpts::default()
        },
        snapshot_every: None,
    };
    let mut state = g0.to_state();
    let mut points = Vec::new();
    for sample in traj.samples.iter().skip(1) {
        state = run(&state, params, sample.t - state.t, &run_opts)?.final_state;
        let reference = sample.to_state();
        points.push(CrossvalPoint {
            t: sample.t,
            gap_phi: state.phi.zip_map(&reference.phi, |a, b| a - b).l2_norm(),
            gap_sigma: state.sigma.zip_map(&reference.sigma, |a, b| a - b).l2_norm(),
        });
    }
    let max_gap = points.iter().map(|p| p.gap_phi.max(p.gap_sigma)).fold(0.0, f64::max);
    Ok(CrossvalReport {
        n,
        points,
        max_gap,
        passed: max_gap <= opts.threshold,
        galerkin_steps: traj.steps,
    })
}
