//! Time integration of the coupled phase-field / nutrient system
//!
//! ```text
//! phi_t   = div(m(phi) grad mu) + p(phi) (N - mu)
//! mu      = -Laplace phi + psi'(phi) - chi_phi sigma
//! sigma_t = div(n(phi) (chi_sigma grad sigma - chi_phi grad phi)) - p(phi) (N - mu)
//! N       = chi_sigma sigma + chi_phi (1 - phi)
//! ```
//!
//! with homogeneous Neumann data, which the cosine basis enforces exactly.
//!
//! One step is first-order IMEX with a convex-splitting shift: the
//! biharmonic part and an `S * dt * (-Laplace)` stabiliser are implicit,
//! everything nonlinear is frozen at the old level. All solves are diagonal
//! in mode space.

use std::sync::Arc;

use crate::potentials::{
    validate_assumptions, AssumptionReport, MobilitySpec, PotentialSpec, ProliferationSpec,
    SamplingOptions,
};
use crate::spectral::{Field, Grid, GridError, ModeRep, Quadrature};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub chi_phi: f64,
    pub chi_sigma: f64,
    pub psi: PotentialSpec,
    pub p: ProliferationSpec,
    pub mobility_m: MobilitySpec,
    pub mobility_n: MobilitySpec,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            chi_phi: 1.0,
            chi_sigma: 1.0,
            psi: PotentialSpec::quartic(),
            p: ProliferationSpec::default(),
            mobility_m: MobilitySpec::Unit,
            mobility_n: MobilitySpec::Unit,
        }
    }
}

impl ModelParams {
    pub fn validate(&self, sampling: &SamplingOptions) -> AssumptionReport {
        validate_assumptions(
            self.chi_phi,
            self.chi_sigma,
            &self.psi,
            &self.p,
            &self.mobility_m,
            &self.mobility_n,
            sampling,
        )
    }

    pub fn unit_mobilities(&self) -> bool {
        self.mobility_m.is_unit() && self.mobility_n.is_unit()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub t: f64,
    pub phi: Field,
    pub sigma: Field,
}

impl State {
    pub fn new(t: f64, phi: Field, sigma: Field) -> Result<Self, GridError> {
        if !phi.same_grid(&sigma) {
            return Err(GridError::Mismatch);
        }
        Ok(Self { t, phi, sigma })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.phi.grid()
    }

    /// `integral(phi + sigma)`.
    pub fn mass(&self) -> f64 {
        self.phi.integral() + self.sigma.integral()
    }

    pub fn is_finite(&self) -> bool {
        self.phi.is_finite() && self.sigma.is_finite()
    }

    fn combine(&self, a: f64, other: &State, b: f64) -> State {
        State {
            t: other.t,
            phi: self.phi.zip_map(&other.phi, |x, y| a * x + b * y),
            sigma: self.sigma.zip_map(&other.sigma, |x, y| a * x + b * y),
        }
    }
}

/// Energy, its four summands, the three dissipation integrals and the
/// diagnostics written per row of the energy CSV.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnergyReport {
    pub t: f64,
    pub dt_used: f64,
    pub energy: f64,
    pub gradient_term: f64,
    pub potential_term: f64,
    pub sigma_term: f64,
    pub cross_term: f64,
    pub d_mu: f64,
    pub d_n: f64,
    pub d_exchange: f64,
    pub mass: f64,
    pub phi_min: f64,
    pub phi_max: f64,
    pub h1_phi: f64,
    pub l2_sigma: f64,
    pub h1dual_phit: f64,
    pub h1dual_sigmat: f64,
}

impl EnergyReport {
    pub const CSV_HEADER: [&'static str; 17] = [
        "t",
        "dt_used",
        "E",
        "gradient_term",
        "potential_term",
        "sigma_term",
        "cross_term",
        "D_mu",
        "D_N",
        "D_exchange",
        "mass",
        "phi_min",
        "phi_max",
        "h1_phi",
        "l2_sigma",
        "h1dual_phit",
        "h1dual_sigmat",
    ];

    pub fn csv_values(&self) -> [f64; 17] {
        [
            self.t,
            self.dt_used,
            self.energy,
            self.gradient_term,
            self.potential_term,
            self.sigma_term,
            self.cross_term,
            self.d_mu,
            self.d_n,
            self.d_exchange,
            self.mass,
            self.phi_min,
            self.phi_max,
            self.h1_phi,
            self.l2_sigma,
            self.h1dual_phit,
            self.h1dual_sigmat,
        ]
    }

    pub fn dissipation(&self) -> f64 {
        self.d_mu + self.d_n + self.d_exchange
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolverError {
    #[error("step rejected at t = {t} after {attempts} attempts (last dt = {dt}, E rose from {energy_before} to {})", report.energy)]
    StepRejected {
        t: f64,
        dt: f64,
        attempts: usize,
        energy_before: f64,
        report: Box<EnergyReport>,
    },
    #[error("state became non-finite at t = {0}")]
    NonFinite(f64),
    #[error("time step must be positive and finite (got {0})")]
    InvalidStep(f64),
    #[error("final time must be non-negative and finite (got {0})")]
    InvalidHorizon(f64),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Everything the step and the energy report need from one state. Modal
/// quantities live on the state's grid, pointwise ones on the quadrature
/// grid.
pub(crate) struct Derived {
    pub phi_modes: Vec<f64>,
    pub sigma_modes: Vec<f64>,
    pub mu_modes: Vec<f64>,
    pub exchange_modes: Vec<f64>,
    pub phi_q: Vec<f64>,
    pub sigma_q: Vec<f64>,
    pub mu_q: Vec<f64>,
    pub n_q: Vec<f64>,
}

fn kappa(grid: &Grid) -> impl Iterator<Item = f64> + '_ {
    grid.eigenvalues().iter().map(|l| l - 1.0)
}

pub(crate) fn derive(phi: &Field, sigma: &Field, params: &ModelParams, quad: &Quadrature) -> Derived {
    let grid = quad.coarse();
    let phi_modes = phi.to_modes().coefficients().to_vec();
    let sigma_modes = sigma.to_modes().coefficients().to_vec();
    let (phi_q, sigma_q) = if quad.is_collocation() {
        (phi.values().to_vec(), sigma.values().to_vec())
    } else {
        (quad.lift(&phi_modes), quad.lift(&sigma_modes))
    };

    let dpsi: Vec<f64> = phi_q.iter().map(|&f| params.psi.eval(f).d1).collect();
    let dpsi_modes = quad.project(&dpsi);
    let mu_modes: Vec<f64> = kappa(grid)
        .zip(&phi_modes)
        .zip(&dpsi_modes)
        .zip(&sigma_modes)
        .map(|(((k, a), d), b)| k * a + d - params.chi_phi * b)
        .collect();
    let mu_q = quad.lift(&mu_modes);

    let n_q: Vec<f64> = phi_q
        .iter()
        .zip(&sigma_q)
        .map(|(&f, &s)| params.chi_sigma * s + params.chi_phi * (1.0 - f))
        .collect();
    let exchange_q: Vec<f64> = phi_q
        .iter()
        .zip(&n_q)
        .zip(&mu_q)
        .map(|((&f, &n), &m)| params.p.eval(f).0 * (n - m))
        .collect();
    let exchange_modes = quad.project(&exchange_q);
    Derived {
        phi_modes,
        sigma_modes,
        mu_modes,
        exchange_modes,
        phi_q,
        sigma_q,
        mu_q,
        n_q,
    }
}

pub fn chemical_potential(phi: &Field, sigma: &Field, params: &ModelParams) -> Field {
    let quad = Quadrature::collocation(phi.grid().clone());
    let d = derive(phi, sigma, params, &quad);
    Field::from_raw(phi.grid().clone(), d.mu_q)
}

/// `integral(w(phi) |grad f|^2)` on the quadrature grid.
fn weighted_gradient_square(f: &[f64], phi: &[f64], weight: &MobilitySpec, quad: &Quadrature) -> f64 {
    let fine = quad.fine();
    let grad = fine.gradient(f);
    let mut total = 0.0;
    for (i, &s) in phi.iter().enumerate() {
        let g2: f64 = grad.iter().map(|c| c[i] * c[i]).sum();
        total += weight.eval(s) * g2;
    }
    total * fine.cell_volume()
}

fn energy_from(state: &State, d: &Derived, params: &ModelParams, quad: &Quadrature) -> EnergyReport {
    let grid = quad.coarse();
    let hq = quad.fine().cell_volume();

    let gradient_term = 0.5 * kappa(grid).zip(&d.phi_modes).map(|(k, a)| k * a * a).sum::<f64>();
    let potential_term = hq * d.phi_q.iter().map(|&f| params.psi.eval(f).value).sum::<f64>();
    let sigma_term = 0.5 * params.chi_sigma * d.sigma_modes.iter().map(|b| b * b).sum::<f64>();
    let cross_term = params.chi_phi
        * hq
        * d.phi_q
            .iter()
            .zip(&d.sigma_q)
            .map(|(&f, &s)| s * (1.0 - f))
            .sum::<f64>();

    let d_mu = if params.mobility_m.is_unit() {
        kappa(grid).zip(&d.mu_modes).map(|(k, c)| k * c * c).sum()
    } else {
        weighted_gradient_square(&d.mu_q, &d.phi_q, &params.mobility_m, quad)
    };
    let d_n = if params.mobility_n.is_unit() {
        kappa(grid)
            .zip(d.sigma_modes.iter().zip(&d.phi_modes))
            .map(|(k, (b, a))| {
                let n = params.chi_sigma * b - params.chi_phi * a;
                k * n * n
            })
            .sum()
    } else {
        weighted_gradient_square(&d.n_q, &d.phi_q, &params.mobility_n, quad)
    };
    let d_exchange = hq
        * d.phi_q
            .iter()
            .zip(&d.n_q)
            .zip(&d.mu_q)
            .map(|((&f, &n), &m)| params.p.eval(f).0 * (n - m) * (n - m))
            .sum::<f64>();

    let phi_rep = ModeRep::new(grid.clone(), d.phi_modes.clone()).expect("grid-sized modes");
    EnergyReport {
        t: state.t,
        dt_used: 0.0,
        energy: gradient_term + potential_term + sigma_term + cross_term,
        gradient_term,
        potential_term,
        sigma_term,
        cross_term,
        d_mu,
        d_n,
        d_exchange,
        mass: state.mass(),
        phi_min: state.phi.min(),
        phi_max: state.phi.max(),
        h1_phi: phi_rep.sobolev_norm(1.0),
        l2_sigma: d.sigma_modes.iter().map(|b| b * b).sum::<f64>().sqrt(),
        h1dual_phit: 0.0,
        h1dual_sigmat: 0.0,
    }
}

pub fn energy(state: &State, params: &ModelParams) -> EnergyReport {
    let quad = Quadrature::collocation(state.grid().clone());
    energy_with(state, params, &quad)
}

/// Energy with nonlinear integrals taken on `quad`'s grid.
pub fn energy_with(state: &State, params: &ModelParams, quad: &Quadrature) -> EnergyReport {
    let d = derive(&state.phi, &state.sigma, params, quad);
    energy_from(state, &d, params, quad)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeOrder {
    /// The plain first-order IMEX step.
    #[default]
    First,
    /// Local Richardson extrapolation of one full and two half IMEX steps;
    /// second order, still mass conserving.
    Extrapolated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeOpts {
    pub guard: bool,
    /// Relative tolerance of the energy guard.
    pub guard_tol: f64,
    pub max_retries: usize,
    /// `None` picks `max psi''` over `[min phi - 1, max phi + 1]`.
    pub stabilization: Option<f64>,
    pub order: TimeOrder,
    /// Refinement factor of the grid on which nonlinear terms are
    /// evaluated; 1 is plain collocation.
    pub dealias: usize,
}

impl Default for SchemeOpts {
    fn default() -> Self {
        Self {
            guard: true,
            guard_tol: 1e-10,
            max_retries: 20,
            stabilization: None,
            order: TimeOrder::First,
            dealias: 1,
        }
    }
}

impl SchemeOpts {
    pub fn quadrature(&self, grid: &Arc<Grid>) -> Result<Quadrature, GridError> {
        if self.dealias <= 1 {
            Ok(Quadrature::collocation(grid.clone()))
        } else {
            Quadrature::new(grid.clone(), self.dealias)
        }
    }
}

fn stabilization(phi: &Field, params: &ModelParams, fixed: Option<f64>) -> f64 {
    if let Some(s) = fixed {
        return s;
    }
    let (lo, hi) = (phi.min() - 1.0, phi.max() + 1.0);
    let n = 201;
    (0..n)
        .map(|i| params.psi.eval(lo + (hi - lo) * i as f64 / (n - 1) as f64).d2)
        .fold(0.0, f64::max)
}

fn weighted_flux(field_q: &[f64], phi_q: &[f64], weight: &MobilitySpec, quad: &Quadrature) -> Vec<f64> {
    let fine = quad.fine();
    let mut grad = fine.gradient(field_q);
    for component in &mut grad {
        for (g, &s) in component.iter_mut().zip(phi_q) {
            *g *= weight.eval(s);
        }
    }
    quad.truncate(&fine.divergence_modes(&grad))
}

/// One unguarded IMEX step.
fn imex_step(state: &State, d: &Derived, params: &ModelParams, dt: f64, opts: &SchemeOpts, quad: &Quadrature) -> State {
    let grid = quad.coarse();
    let kappa: Vec<f64> = kappa(grid).collect();
    let s = stabilization(&state.phi, params, opts.stabilization);
    let m1 = params.mobility_m.upper();
    let n1 = params.mobility_n.upper();

    let flux_phi: Vec<f64> = if params.mobility_m.is_unit() {
        d.mu_modes.iter().zip(&kappa).map(|(c, k)| -k * c).collect()
    } else {
        weighted_flux(&d.mu_q, &d.phi_q, &params.mobility_m, quad)
    };
    let phi_new: Vec<f64> = (0..grid.len())
        .map(|i| {
            let k = kappa[i];
            d.phi_modes[i] + dt * (flux_phi[i] + d.exchange_modes[i]) / (1.0 + dt * m1 * k * (k + s))
        })
        .collect();

    let chi_phi = params.chi_phi;
    let chi_sigma = params.chi_sigma;
    let flux_sigma: Vec<f64> = if params.mobility_n.is_unit() {
        (0..grid.len())
            .map(|i| -kappa[i] * (chi_sigma * d.sigma_modes[i] - chi_phi * phi_new[i]))
            .collect()
    } else {
        let driver: Vec<f64> = d
            .sigma_modes
            .iter()
            .zip(&phi_new)
            .map(|(b, a)| chi_sigma * b - chi_phi * a)
            .collect();
        weighted_flux(&quad.lift(&driver), &d.phi_q, &params.mobility_n, quad)
    };
    let sigma_new: Vec<f64> = (0..grid.len())
        .map(|i| {
            let rhs = flux_sigma[i] - d.exchange_modes[i];
            d.sigma_modes[i] + dt * rhs / (1.0 + dt * n1 * chi_sigma * kappa[i])
        })
        .collect();

    State {
        t: state.t + dt,
        phi: Field::from_raw(grid.clone(), grid.inverse(&phi_new)),
        sigma: Field::from_raw(grid.clone(), grid.inverse(&sigma_new)),
    }
}

fn advance(state: &State, d: &Derived, params: &ModelParams, dt: f64, opts: &SchemeOpts, quad: &Quadrature) -> State {
    match opts.order {
        TimeOrder::First => imex_step(state, d, params, dt, opts, quad),
        TimeOrder::Extrapolated => {
            let full = imex_step(state, d, params, dt, opts, quad);
            let half = imex_step(state, d, params, 0.5 * dt, opts, quad);
            let dh = derive(&half.phi, &half.sigma, params, quad);
            let two_half = imex_step(&half, &dh, params, 0.5 * dt, opts, quad);
            let mut out = two_half.combine(2.0, &full, -1.0);
            out.t = state.t + dt;
            out
        }
    }
}

fn finish_report(old: &State, new: &State, d_new: &Derived, params: &ModelParams, dt: f64, quad: &Quadrature) -> EnergyReport {
    let mut report = energy_from(new, d_new, params, quad);
    report.dt_used = dt;
    let dual = |new: &[f64], old: &[f64]| -> f64 {
        new.iter()
            .zip(old)
            .zip(quad.coarse().eigenvalues())
            .map(|((a, b), l)| (a - b) * (a - b) / (dt * dt * l))
            .sum::<f64>()
            .sqrt()
    };
    let old_phi = old.phi.to_modes();
    let old_sigma = old.sigma.to_modes();
    report.h1dual_phit = dual(&d_new.phi_modes, old_phi.coefficients());
    report.h1dual_sigmat = dual(&d_new.sigma_modes, old_sigma.coefficients());
    report
}

/// One accepted step, halving `dt` while the energy guard rejects.
pub fn step(
    state: &State,
    params: &ModelParams,
    dt: f64,
    opts: &SchemeOpts,
) -> Result<(State, EnergyReport), SolverError> {
    let quad = opts.quadrature(state.grid())?;
    let d = derive(&state.phi, &state.sigma, params, &quad);
    let e_old = energy_from(state, &d, params, &quad).energy;
    step_from(state, &d, e_old, params, dt, opts, &quad).map(|(s, r, _, _)| (s, r))
}

/// Returns the accepted state, its report and derived data, and the
/// number of rejections.
fn step_from(
    state: &State,
    d: &Derived,
    e_old: f64,
    params: &ModelParams,
    dt: f64,
    opts: &SchemeOpts,
    quad: &Quadrature,
) -> Result<(State, EnergyReport, Derived, usize), SolverError> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(SolverError::InvalidStep(dt));
    }
    if !state.is_finite() {
        return Err(SolverError::NonFinite(state.t));
    }
    let mut trial = dt;
    let mut attempts = 0;
    loop {
        attempts += 1;
        let new = advance(state, d, params, trial, opts, quad);
        let (report, d_new) = if new.is_finite() {
            let d_new = derive(&new.phi, &new.sigma, params, quad);
            (finish_report(state, &new, &d_new, params, trial, quad), Some(d_new))
        } else {
            let report = EnergyReport {
                t: new.t,
                dt_used: trial,
                energy: f64::NAN,
                ..EnergyReport::default()
            };
            (report, None)
        };
        let rises = !(report.energy <= e_old + opts.guard_tol * (1.0 + e_old.abs()));
        if !(opts.guard && rises) {
            return match d_new {
                Some(d_new) => Ok((new, report, d_new, attempts - 1)),
                None => Err(SolverError::NonFinite(new.t)),
            };
        }
        if attempts > opts.max_retries {
            return Err(SolverError::StepRejected {
                t: state.t,
                dt: trial,
                attempts,
                energy_before: e_old,
                report: Box::new(report),
            });
        }
        trial *= 0.5;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub dt: f64,
    pub scheme: SchemeOpts,
    /// Keep a snapshot every this many accepted steps (`None`: only the
    /// initial and final states).
    pub snapshot_every: Option<usize>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            scheme: SchemeOpts::default(),
            snapshot_every: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub final_state: State,
    /// Row 0 describes the initial state.
    pub reports: Vec<EnergyReport>,
    pub snapshots: Vec<State>,
    pub phi_min: f64,
    pub phi_max: f64,
    pub monotonicity_violations: usize,
    pub mass_drift: f64,
    pub steps: usize,
    pub rejections: usize,
}

/// Steps where `E` rose by more than `tol * (1 + |E|)`.
pub fn count_energy_increases(reports: &[EnergyReport], tol: f64) -> usize {
    reports
        .windows(2)
        .filter(|w| w[1].energy > w[0].energy + tol * (1.0 + w[0].energy.abs()))
        .count()
}

pub fn run(
    initial: &State,
    params: &ModelParams,
    t_end: f64,
    opts: &RunOptions,
) -> Result<RunSummary, SolverError> {
    run_with(initial, params, t_end, opts, |_, _| {})
}

/// [`run`] with a callback invoked after every accepted step.
pub fn run_with(
    initial: &State,
    params: &ModelParams,
    t_end: f64,
    opts: &RunOptions,
    mut on_step: impl FnMut(&State, &EnergyReport),
) -> Result<RunSummary, SolverError> {
    if !(t_end.is_finite() && t_end >= 0.0) {
        return Err(SolverError::InvalidHorizon(t_end));
    }
    if !(opts.dt.is_finite() && opts.dt > 0.0) {
        return Err(SolverError::InvalidStep(opts.dt));
    }
    let quad = opts.scheme.quadrature(initial.grid())?;
    let mut state = initial.clone();
    let mut d = derive(&state.phi, &state.sigma, params, &quad);
    let first = energy_from(&state, &d, params, &quad);
    let mass0 = first.mass;
    let mut reports = vec![first];
    let mut snapshots = vec![state.clone()];
    let mut steps = 0;
    let mut rejections = 0;
    let t_final = initial.t + t_end;
    // relative slack so rounding in t does not create a sliver step
    let eps = 1e-9 * opts.dt;

    while t_final - state.t > eps {
        let dt = opts.dt.min(t_final - state.t);
        let e_old = reports.last().map_or(f64::NAN, |r| r.energy);
        let (new, report, d_new, rejected) = step_from(&state, &d, e_old, params, dt, &opts.scheme, &quad)?;
        rejections += rejected;
        steps += 1;
        state = new;
        d = d_new;
        on_step(&state, &report);
        reports.push(report);
        if let Some(every) = opts.snapshot_every {
            if every > 0 && steps % every == 0 {
                snapshots.push(state.clone());
            }
        }
    }
    if snapshots.last().map(|s| s.t) != Some(state.t) {
        snapshots.push(state.clone());
    }

    let phi_min = reports.iter().map(|r| r.phi_min).fold(f64::INFINITY, f64::min);
    let phi_max = reports.iter().map(|r| r.phi_max).fold(f64::NEG_INFINITY, f64::max);
    let monotonicity_violations = count_energy_increases(&reports, opts.scheme.guard_tol);
    let mass_drift = state.mass() - mass0;
    Ok(RunSummary {
        final_state: state,
        reports,
        snapshots,
        phi_min,
        phi_max,
        monotonicity_violations,
        mass_drift,
        steps,
        rejections,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::initial::InitialData;
    use crate::potentials::{ProliferationFamily, ProliferationSpec};
    use crate::spectral::build_grid;
    use std::f64::consts::PI;

    fn grid1(n: usize) -> Arc<Grid> {
        build_grid(1, &[1.0], &[n]).unwrap()
    }

    fn constant_state(grid: &Arc<Grid>, c: f64, d: f64) -> State {
        InitialData::Constant { phi: c, sigma: d }.generate(grid)
    }

    #[test]
    fn chemical_potential_of_constants() {
        let g = grid1(16);
        let p = ModelParams::default();
        let s = constant_state(&g, 1.0, 0.0);
        let mu = chemical_potential(&s.phi, &s.sigma, &p);
        assert!(mu.values().iter().all(|v| v.abs() < 1e-14));
        let s = constant_state(&g, 0.0, 1.0);
        let mu = chemical_potential(&s.phi, &s.sigma, &p);
        assert!(mu.values().iter().all(|v| (v + 1.0).abs() < 1e-14));
    }

    #[test]
    fn chemical_potential_leading_mode_against_quadrature() {
        // phi = a cos(pi x) on [0,1]: mu_1 = pi^2 a_1 + <psi'(phi), w_1>,
        // the inner product evaluated by a dense midpoint rule.
        let g = grid1(64);
        let a = 0.3;
        let p = ModelParams { chi_phi: 0.0, ..ModelParams::default() };
        let phi = Field::from_fn(g.clone(), |x| a * (PI * x[0]).cos());
        let sigma = Field::zeros(g.clone());
        let mu = chemical_potential(&phi, &sigma, &p).to_modes();
        let n = 20000;
        let quad: f64 = (0..n)
            .map(|i| {
                let x = (i as f64 + 0.5) / n as f64;
                let f = a * (PI * x).cos();
                (f * f * f - f) * 2f64.sqrt() * (PI * x).cos()
            })
            .sum::<f64>()
            / n as f64;
        let a1 = a / 2f64.sqrt();
        let expected = PI * PI * a1 + quad;
        assert!((mu.coefficients()[1] - expected).abs() < 1e-9, "{} {}", mu.coefficients()[1], expected);
    }

    #[test]
    fn energy_of_constant_states() {
        let g = grid1(8);
        let p = ModelParams::default();
        let e = energy(&constant_state(&g, 1.0, 0.0), &p);
        assert!(e.energy.abs() < 1e-15);
        let e = energy(&constant_state(&g, 0.0, 1.0), &p);
        assert!((e.energy - 1.75).abs() < 1e-14);
        assert_eq!((e.gradient_term, e.d_mu, e.d_n), (0.0, 0.0, 0.0));
        let sum = e.gradient_term + e.potential_term + e.sigma_term + e.cross_term;
        assert!((sum - e.energy).abs() <= 1e-12 * e.energy.abs());
    }

    #[test]
    fn zero_coupling_zero_nutrient_stays_zero() {
        let g = grid1(32);
        let params = ModelParams {
            chi_phi: 0.0,
            p: ProliferationSpec::constant(0.0),
            ..ModelParams::default()
        };
        let s0 = InitialData::Random {
            phi_mean: 0.0,
            phi_amplitude: 0.2,
            sigma_mean: 0.0,
            sigma_amplitude: 0.0,
            seed: 1,
        }
        .generate(&g);
        let (s1, _) = step(&s0, &params, 1e-3, &SchemeOpts::default()).unwrap();
        assert!(s1.sigma.values().iter().all(|v| *v == 0.0));
        assert_ne!(s1.phi, s0.phi);
    }

    #[test]
    fn mass_is_conserved_per_step() {
        let g = build_grid(2, &[2.0, 1.0], &[16, 8]).unwrap();
        let s0 = InitialData::Random {
            phi_mean: 0.1,
            phi_amplitude: 0.5,
            sigma_mean: 0.3,
            sigma_amplitude: 0.2,
            seed: 5,
        }
        .generate(&g);
        let params = ModelParams::default();
        let (s1, r) = step(&s0, &params, 1e-2, &SchemeOpts::default()).unwrap();
        assert!((s1.mass() - s0.mass()).abs() <= 1e-12 * s0.mass().abs().max(1.0));
        assert!(r.d_mu >= 0.0 && r.d_n >= 0.0 && r.d_exchange >= 0.0);
    }

    #[test]
    fn diffusion_modes_decay_in_closed_form() {
        // chi_phi = 0, p = 0: the implicit sigma solve is exact per mode up
        // to backward-Euler error, so compare against the closed form with
        // the extrapolated scheme and a fine step.
        let g = grid1(32);
        let params = ModelParams {
            chi_phi: 0.0,
            chi_sigma: 0.7,
            p: ProliferationSpec::constant(0.0),
            ..ModelParams::default()
        };
        let s0 = InitialData::Cosine {
            phi_mean: 0.0,
            phi_amplitude: 0.0,
            sigma_mean: 0.2,
            sigma_amplitude: 0.1,
            mode: 2,
        }
        .generate(&g);
        let opts = RunOptions {
            dt: 1e-5,
            scheme: SchemeOpts {
                order: TimeOrder::Extrapolated,
                guard: false,
                ..SchemeOpts::default()
            },
            snapshot_every: None,
        };
        let out = run(&s0, &params, 0.1, &opts).unwrap();
        let m0 = s0.sigma.to_modes();
        let m1 = out.final_state.sigma.to_modes();
        for k in 0..g.len() {
            let rate = params.chi_sigma * (g.eigenvalue(k) - 1.0);
            let exact = m0.coefficients()[k] * (-rate * 0.1).exp();
            assert!((m1.coefficients()[k] - exact).abs() < 1e-8, "mode {k}");
        }
    }

    #[test]
    fn constant_state_is_preserved_spatially() {
        let g = grid1(8);
        let params = ModelParams::default();
        let (s1, _) = step(&constant_state(&g, 0.3, 0.2), &params, 1e-2, &SchemeOpts::default()).unwrap();
        let c = s1.phi.values()[0];
        assert!(s1.phi.values().iter().all(|v| (v - c).abs() < 1e-14));
        assert!((c - 0.3).abs() > 1e-6);
    }

    #[test]
    fn run_with_zero_horizon_reports_initial_state() {
        let g = grid1(16);
        let params = ModelParams::default();
        let s0 = InitialData::default().generate(&g);
        let out = run(&s0, &params, 0.0, &RunOptions::default()).unwrap();
        assert_eq!(out.steps, 0);
        assert_eq!(out.reports.len(), 1);
        assert_eq!(out.final_state, s0);
        assert_eq!(out.reports[0], energy(&s0, &params));
        assert_eq!(out.mass_drift, 0.0);
    }

    #[test]
    fn guard_rejects_and_halves() {
        // a huge step with a strong exchange overshoots; the guard must
        // recover with a smaller step, or report rejection when not allowed to
        let g = grid1(32);
        let params = ModelParams { p: ProliferationSpec::constant(50.0), ..ModelParams::default() };
        let s0 = InitialData::Random {
            phi_mean: 0.0,
            phi_amplitude: 0.9,
            sigma_mean: 0.0,
            sigma_amplitude: 0.5,
            seed: 3,
        }
        .generate(&g);
        let opts = SchemeOpts {
            stabilization: Some(0.0),
            ..SchemeOpts::default()
        };
        let (s1, r) = step(&s0, &params, 10.0, &opts).unwrap();
        assert!(r.dt_used < 10.0);
        assert!(r.energy <= energy(&s0, &params).energy);
        assert!(s1.is_finite());

        let strict = SchemeOpts {
            max_retries: 0,
            stabilization: Some(0.0),
            ..SchemeOpts::default()
        };
        match step(&s0, &params, 10.0, &strict) {
            Err(SolverError::StepRejected { attempts, .. }) => assert_eq!(attempts, 1),
            other => panic!("expected rejection, got {other:?}"),
        }
    }

    #[test]
    fn variable_mobility_reduces_to_unit_when_flat() {
        use crate::potentials::{MobilityShape, MobilitySpec};
        let g = build_grid(2, &[1.0, 1.0], &[16, 16]).unwrap();
        let s0 = InitialData::Random {
            phi_mean: 0.0,
            phi_amplitude: 0.3,
            sigma_mean: 0.2,
            sigma_amplitude: 0.1,
            seed: 8,
        }
        .generate(&g);
        let flat = MobilitySpec::Bounded { m0: 1.0, m1: 1.0, shape: MobilityShape::Logistic };
        let unit = ModelParams::default();
        let bounded = ModelParams { mobility_m: flat, mobility_n: flat, ..ModelParams::default() };
        let opts = SchemeOpts::default();
        let (a, ra) = step(&s0, &unit, 1e-3, &opts).unwrap();
        let (b, rb) = step(&s0, &bounded, 1e-3, &opts).unwrap();
        for (x, y) in a.phi.values().iter().zip(b.phi.values()) {
            assert!((x - y).abs() < 1e-10);
        }
        assert!((ra.d_mu - rb.d_mu).abs() < 1e-8 * ra.d_mu.max(1.0));
    }

    #[test]
    fn bounded_mobility_run_dissipates() {
        use crate::potentials::{MobilityShape, MobilitySpec};
        let g = build_grid(1, &[2.0], &[64]).unwrap();
        let params = ModelParams {
            mobility_m: MobilitySpec::Bounded { m0: 0.5, m1: 1.5, shape: MobilityShape::Bump },
            mobility_n: MobilitySpec::Bounded { m0: 0.8, m1: 1.2, shape: MobilityShape::Logistic },
            p: ProliferationSpec {
                family: ProliferationFamily::RationalBump { p0: 0.5, delta: 0.1 },
                ..ProliferationSpec::default()
            },
            ..ModelParams::default()
        };
        let s0 = InitialData::default().generate(&g);
        let out = run(&s0, &params, 0.5, &RunOptions::default()).unwrap();
        assert_eq!(out.monotonicity_violations, 0);
        assert!(out.mass_drift.abs() < 1e-12);
    }

    #[test]
    fn neumann_faces_have_zero_normal_derivative() {
        let g = build_grid(2, &[1.0, 1.5], &[16, 12]).unwrap();
        let s0 = InitialData::Random {
            phi_mean: 0.0,
            phi_amplitude: 0.5,
            sigma_mean: 0.1,
            sigma_amplitude: 0.1,
            seed: 2,
        }
        .generate(&g);
        let params = ModelParams::default();
        let (s1, _) = step(&s0, &params, 1e-3, &SchemeOpts::default()).unwrap();
        let mu = chemical_potential(&s1.phi, &s1.sigma, &params);
        for f in [&s1.phi, &s1.sigma, &mu] {
            let modes = f.to_modes();
            // even reflection across x = 0 and x = L leaves the interpolant unchanged,
            // so its normal derivative (a sine series) vanishes on every face
            for axis in 0..2 {
                let l = g.lengths()[axis];
                for face in [0.0, l] {
                    for probe in [0.1, 0.37, 0.8] {
                        let mut x = vec![probe * g.lengths()[0], probe * g.lengths()[1]];
                        x[axis] = face;
                        let h = 1e-5;
                        let eval = |x: &[f64]| -> f64 {
                            (0..g.len())
                                .map(|k| modes.coefficients()[k] * g.basis_function(&g.multi_index(k), x))
                                .sum()
                        };
                        let mut xp = x.clone();
                        xp[axis] += h;
                        let mut xm = x.clone();
                        xm[axis] -= h;
                        let normal = (eval(&xp) - eval(&xm)) / (2.0 * h);
                        assert!(normal.abs() < 1e-6, "axis {axis} face {face}: {normal}");
                    }
                }
            }
        }
    }
}
