//! Stationary states on the mass level set
//! `Z_M = { (phi, sigma) : integral(phi + sigma) = |Omega| M }`.
//!
//! Critical points satisfy
//!
//! ```text
//! -Laplace phi + psi'(phi) - chi_phi sigma = mu0
//! chi_sigma sigma + chi_phi (1 - phi)      = mu0
//! ```
//!
//! for one constant `mu0`. The minimizer alternates an exact minimization
//! over `sigma` (the energy is quadratic in it) with a proximal gradient
//! step in `phi` that treats the Laplacian implicitly.

use std::sync::Arc;

use rayon::prelude::*;

use crate::initial::InitialData;
use crate::solver::{energy, ModelParams, State};
use crate::spectral::{Field, Grid};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Residuals {
    /// `L2` norm of `-Laplace phi + psi'(phi) - chi_phi sigma - mu0`.
    pub r1: f64,
    /// Sup norm of `chi_sigma sigma + chi_phi (1 - phi) - mu0`.
    pub r2: f64,
    /// `|integral(phi + sigma) - |Omega| M|`.
    pub r3: f64,
    pub mu0: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationaryPoint {
    pub phi_star: Field,
    pub sigma_star: Field,
    pub mu0: f64,
    pub m: f64,
    pub e_value: f64,
    pub residuals: Residuals,
    pub iterations: usize,
    pub converged: bool,
    /// Norm of the energy gradient tangent to `Z_M` at the returned point.
    pub gradient_norm: f64,
    /// Energy after every accepted iteration, starting with the initial value.
    pub trace: Vec<f64>,
}

impl StationaryPoint {
    pub fn state(&self) -> State {
        State {
            t: 0.0,
            phi: self.phi_star.clone(),
            sigma: self.sigma_star.clone(),
        }
    }

    /// `||phi*||_{H1} + ||sigma*||_{L2}`.
    pub fn size(&self) -> f64 {
        self.phi_star.norms().h1 + self.sigma_star.l2_norm()
    }
}

/// Equal constant shift of both fields onto `Z_M`.
pub fn project_z_m(state: &State, m: f64) -> State {
    let mean = state.phi.mean_value() + state.sigma.mean_value();
    let shift = 0.5 * (mean - m);
    State {
        t: state.t,
        phi: state.phi.map(|v| v - shift),
        sigma: state.sigma.map(|v| v - shift),
    }
}

fn mu_field(state: &State, params: &ModelParams) -> Field {
    crate::solver::chemical_potential(&state.phi, &state.sigma, params)
}

fn nutrient(state: &State, params: &ModelParams) -> Field {
    state
        .phi
        .zip_map(&state.sigma, |f, s| params.chi_sigma * s + params.chi_phi * (1.0 - f))
}

pub fn stationary_residual(state: &State, m: f64, params: &ModelParams) -> Residuals {
    let grid = state.grid();
    let dpsi_mean = state.phi.map(|f| params.psi.eval(f).d1).mean_value();
    let mu0 = dpsi_mean - params.chi_phi * state.sigma.mean_value();
    let mu = mu_field(state, params);
    let r1 = mu.map(|v| v - mu0).l2_norm();
    let r2 = nutrient(state, params)
        .values()
        .iter()
        .map(|v| (v - mu0).abs())
        .fold(0.0, f64::max);
    let r3 = (state.mass() - grid.volume() * m).abs();
    Residuals { r1, r2, r3, mu0 }
}

/// `L2 x L2` norm of the energy gradient `(mu, N)` minus its component
/// normal to `Z_M`.
pub fn tangential_gradient_norm(state: &State, params: &ModelParams) -> f64 {
    let mu = mu_field(state, params);
    let n = nutrient(state, params);
    let c = 0.5 * (mu.mean_value() + n.mean_value());
    let a = mu.map(|v| v - c).l2_norm();
    let b = n.map(|v| v - c).l2_norm();
    a.hypot(b)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinimizeOptions {
    pub tol: f64,
    pub max_iterations: usize,
    pub initial_step: f64,
    pub max_step: f64,
    /// Sufficient-decrease constant of the backtracking test.
    pub armijo: f64,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iterations: 200_000,
            initial_step: 1.0,
            max_step: 1e8,
            armijo: 1e-4,
        }
    }
}

/// The `sigma` minimizing the energy for fixed `phi` on `Z_M`.
fn optimal_sigma(phi: &Field, m: f64, params: &ModelParams) -> Field {
    let mean = phi.mean_value();
    let nu = params.chi_sigma * (m - mean) + params.chi_phi * (1.0 - mean);
    phi.map(|f| (nu - params.chi_phi * (1.0 - f)) / params.chi_sigma)
}

fn finish(state: State, m: f64, params: &ModelParams, iterations: usize, trace: Vec<f64>, tol: f64) -> StationaryPoint {
    let residuals = stationary_residual(&state, m, params);
    let gradient_norm = tangential_gradient_norm(&state, params);
    StationaryPoint {
        e_value: energy(&state, params).energy,
        mu0: residuals.mu0,
        m,
        residuals,
        iterations,
        converged: gradient_norm <= tol,
        gradient_norm,
        trace,
        phi_star: state.phi,
        sigma_star: state.sigma,
    }
}

pub fn minimize_energy(initial: &State, m: f64, params: &ModelParams, opts: &MinimizeOptions) -> StationaryPoint {
    let mut state = project_z_m(initial, m);
    let e0 = energy(&state, params).energy;
    if tangential_gradient_norm(&state, params) <= opts.tol {
        return finish(state, m, params, 0, vec![e0], opts.tol);
    }

    state.sigma = optimal_sigma(&state.phi, m, params);
    state = project_z_m(&state, m);
    let grid: Arc<Grid> = state.grid().clone();
    let kappa: Vec<f64> = grid.eigenvalues().iter().map(|l| l - 1.0).collect();
    let mut e = energy(&state, params).energy;
    let mut trace = vec![e0, e];
    let mut tau = opts.initial_step;

    let mut gnorm = tangential_gradient_norm(&state, params);
    let noise = 4.0 * f64::EPSILON * (grid.len() as f64).sqrt() * (1.0 + e.abs());
    for iteration in 1..=opts.max_iterations {
        if gnorm <= opts.tol {
            return finish(state, m, params, iteration - 1, trace, opts.tol);
        }
        // explicit part of the reduced gradient: psi'(phi) - chi_phi sigma - nu
        let nu = params.chi_sigma * state.sigma.mean_value() + params.chi_phi * (1.0 - state.phi.mean_value());
        let explicit = state
            .phi
            .zip_map(&state.sigma, |f, s| params.psi.eval(f).d1 - params.chi_phi * s - nu)
            .to_modes();
        let phi_modes = state.phi.to_modes();

        let mut accepted = None;
        while tau > 1e-16 {
            let next: Vec<f64> = (0..grid.len())
                .map(|k| {
                    (phi_modes.coefficients()[k] - tau * explicit.coefficients()[k]) / (1.0 + tau * kappa[k])
                })
                .collect();
            let phi = Field::from_raw(grid.clone(), grid.inverse(&next));
            let sigma = optimal_sigma(&phi, m, params);
            let trial = project_z_m(&State { t: 0.0, phi, sigma }, m);
            let e_trial = energy(&trial, params).energy;
            let moved: f64 = next
                .iter()
                .zip(phi_modes.coefficients())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if e_trial.is_finite() && e_trial <= e - opts.armijo / tau * moved {
                let g = tangential_gradient_norm(&trial, params);
                accepted = Some((trial, e_trial, g));
                break;
            }
            // Close to a minimum the decrease drops below the rounding of E
            // (a sum over all nodes); there a step is taken if E holds still
            // within that noise and the gradient shrinks.
            if e_trial.is_finite() && e_trial <= e + noise {
                let g = tangential_gradient_norm(&trial, params);
                if g < gnorm {
                    accepted = Some((trial, e_trial, g));
                    break;
                }
            }
            tau *= 0.5;
        }
        match accepted {
            Some((trial, e_trial, g)) => {
                state = trial;
                e = e_trial;
                gnorm = g;
                trace.push(e);
                tau = (tau * 2.0).min(opts.max_step);
            }
            // no descent left at machine precision
            None => return finish(state, m, params, iteration, trace, opts.tol),
        }
    }
    finish(state, m, params, opts.max_iterations, trace, opts.tol)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootOptions {
    pub lo: f64,
    pub hi: f64,
    pub subintervals: usize,
}

impl Default for RootOptions {
    fn default() -> Self {
        Self {
            lo: -3.0,
            hi: 3.0,
            subintervals: 600,
        }
    }
}

/// `psi'(c) - chi_phi d - (chi_sigma d + chi_phi (1 - c))` with `d = M - c`.
pub fn constant_state_equation(c: f64, m: f64, params: &ModelParams) -> f64 {
    let d = m - c;
    params.psi.eval(c).d1 - params.chi_phi * d - (params.chi_sigma * d + params.chi_phi * (1.0 - c))
}

/// Roots `c` of [`constant_state_equation`] in the bracket, ascending.
pub fn constant_roots(m: f64, params: &ModelParams, opts: &RootOptions) -> Vec<f64> {
    let f = |c: f64| constant_state_equation(c, m, params);
    let n = opts.subintervals.max(1);
    let node = |i: usize| opts.lo + (opts.hi - opts.lo) * i as f64 / n as f64;
    let mut roots: Vec<f64> = Vec::new();
    for i in 0..n {
        let (a, b) = (node(i), node(i + 1));
        let (fa, fb) = (f(a), f(b));
        if fa == 0.0 {
            roots.push(a);
        }
        if i + 1 == n && fb == 0.0 {
            roots.push(b);
        }
        if fa * fb < 0.0 {
            let (mut lo, mut hi, mut flo) = (a, b, fa);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                let fm = f(mid);
                if fm == 0.0 {
                    lo = mid;
                    hi = mid;
                    break;
                }
                if (fm < 0.0) == (flo < 0.0) {
                    lo = mid;
                    flo = fm;
                } else {
                    hi = mid;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
    }
    roots.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    roots
}

/// Spatially constant stationary points at mass level `m`.
pub fn constant_states(grid: &Arc<Grid>, m: f64, params: &ModelParams, opts: &RootOptions) -> Vec<StationaryPoint> {
    constant_roots(m, params, opts)
        .into_iter()
        .map(|c| {
            let state = InitialData::Constant { phi: c, sigma: m - c }.generate(grid);
            finish(state, m, params, 0, Vec::new(), f64::INFINITY)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct BoundednessReport {
    pub points: Vec<StationaryPoint>,
    /// Largest `||phi*||_{H1} + ||sigma*||_{L2}` among converged points.
    pub bound: f64,
    pub converged: usize,
}

/// Minimizes from `seeds.len()` random starts in parallel.
pub fn boundedness_sweep(
    grid: &Arc<Grid>,
    m: f64,
    params: &ModelParams,
    amplitude: f64,
    seeds: &[u64],
    opts: &MinimizeOptions,
) -> BoundednessReport {
    let points: Vec<StationaryPoint> = seeds
        .par_iter()
        .map(|&seed| {
            let init = InitialData::Random {
                phi_mean: m / 2.0,
                phi_amplitude: amplitude,
                sigma_mean: m / 2.0,
                sigma_amplitude: amplitude,
                seed,
            }
            .generate(grid);
            minimize_energy(&init, m, params, opts)
        })
        .collect();
    let converged = points.iter().filter(|p| p.converged).count();
    let bound = points
        .iter()
        .filter(|p| p.converged)
        .map(StationaryPoint::size)
        .fold(0.0, f64::max);
    BoundednessReport { points, bound, converged }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::build_grid;
    use std::f64::consts::PI;

    fn params(chi_phi: f64, chi_sigma: f64) -> ModelParams {
        ModelParams {
            chi_phi,
            chi_sigma,
            ..ModelParams::default()
        }
    }

    #[test]
    fn projection_examples() {
        let g = build_grid(1, &[1.0], &[8]).unwrap();
        let s = InitialData::Constant { phi: 1.0, sigma: 0.0 }.generate(&g);
        let p = project_z_m(&s, 0.5);
        assert!(p.phi.values().iter().all(|v| (v - 0.75).abs() < 1e-15));
        assert!(p.sigma.values().iter().all(|v| (v + 0.25).abs() < 1e-15));
        assert_eq!(project_z_m(&p, 0.5), p);
    }

    #[test]
    fn constant_roots_of_known_cubics() {
        let r = constant_roots(0.0, &params(0.0, 1.0), &RootOptions::default());
        assert_eq!(r, vec![0.0]);
        let r = constant_roots(0.0, &params(0.0, 0.5), &RootOptions::default());
        assert_eq!(r.len(), 3);
        let h = 0.5f64.sqrt();
        for (x, y) in r.iter().zip([-h, 0.0, h]) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_states_have_zero_residual() {
        let g = build_grid(2, &[1.0, 2.0], &[8, 8]).unwrap();
        for (chi_phi, chi_sigma, m) in [(0.0, 0.5, 0.0), (1.0, 1.0, 0.3), (0.5, 2.0, -0.4)] {
            let p = params(chi_phi, chi_sigma);
            let pts = constant_states(&g, m, &p, &RootOptions::default());
            assert!(!pts.is_empty());
            for pt in pts {
                let r = pt.residuals;
                assert!(r.r1 < 1e-10 && r.r2 < 1e-10 && r.r3 < 1e-10, "{r:?}");
            }
        }
    }

    #[test]
    fn residual_grows_linearly_with_mode_perturbation() {
        let g = build_grid(1, &[1.0], &[64]).unwrap();
        let p = params(0.0, 1.0);
        let base = constant_states(&g, 0.0, &p, &RootOptions::default()).remove(0).state();
        let w2 = Field::from_fn(g.clone(), |x| 2f64.sqrt() * (2.0 * PI * x[0]).cos());
        let slope = |eps: f64| {
            let s = State { phi: base.phi.zip_map(&w2, |a, b| a + eps * b), ..base.clone() };
            stationary_residual(&s, 0.0, &p).r1 / eps
        };
        // (lambda - 1) + psi''(0) = 4 pi^2 - 1, and ||w_2|| = 1
        let expected = 4.0 * PI * PI - 1.0;
        assert!((slope(1e-6) - expected).abs() < 1e-3 * expected);
        assert!((slope(1e-7) - expected).abs() < 1e-3 * expected);
    }

    #[test]
    fn wrong_mass_shows_in_r3() {
        let g = build_grid(1, &[2.0], &[16]).unwrap();
        let s = InitialData::Constant { phi: 0.0, sigma: 0.0 }.generate(&g);
        let r = stationary_residual(&s, 0.25, &params(0.0, 1.0));
        assert!((r.r3 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn minimizer_finds_symmetric_constant_state() {
        let g = build_grid(1, &[1.0], &[64]).unwrap();
        let p = params(0.0, 1.0);
        let init = InitialData::Random {
            phi_mean: 0.0,
            phi_amplitude: 0.1,
            sigma_mean: 0.0,
            sigma_amplitude: 0.1,
            seed: 11,
        }
        .generate(&g);
        let pt = minimize_energy(&init, 0.0, &p, &MinimizeOptions::default());
        assert!(pt.converged, "{pt:?}");
        assert!((pt.e_value - 0.25).abs() < 1e-9);
        assert!(pt.phi_star.max().abs() < 1e-2 && pt.phi_star.min().abs() < 1e-2);
        assert!(pt.residuals.r1 <= 1e-8 && pt.residuals.r2 <= 1e-8 && pt.residuals.r3 <= 1e-10);
        for w in pt.trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-14);
        }
    }

    #[test]
    fn stationary_start_needs_no_iterations() {
        let g = build_grid(1, &[1.0], &[32]).unwrap();
        let p = params(1.0, 1.0);
        let c = constant_states(&g, 0.2, &p, &RootOptions::default()).remove(0);
        let pt = minimize_energy(&c.state(), 0.2, &p, &MinimizeOptions::default());
        assert_eq!(pt.iterations, 0);
        assert!(pt.converged);
    }

    #[test]
    fn chemotactic_minimizer_satisfies_relations() {
        let g = build_grid(1, &[4.0], &[64]).unwrap();
        let p = params(1.0, 1.0);
        let init = InitialData::Random {
            phi_mean: 0.1,
            phi_amplitude: 0.3,
            sigma_mean: 0.0,
            sigma_amplitude: 0.2,
            seed: 3,
        }
        .generate(&g);
        let pt = minimize_energy(&init, 0.1, &p, &MinimizeOptions::default());
        assert!(pt.converged, "{} iterations, gradient {}", pt.iterations, pt.gradient_norm);
        let r = pt.residuals;
        assert!(r.r1 <= 1e-8 && r.r2 <= 1e-8 && r.r3 <= 1e-10 * 4.0, "{r:?}");
        for (s, f) in pt.sigma_star.values().iter().zip(pt.phi_star.values()) {
            let predicted = (pt.mu0 - p.chi_phi * (1.0 - f)) / p.chi_sigma;
            assert!((s - predicted).abs() < 1e-8);
        }
    }

    #[test]
    fn energy_is_coercive_along_rays() {
        let g = build_grid(1, &[1.0], &[32]).unwrap();
        let p = params(1.0, 1.0);
        let s = InitialData::Random {
            phi_mean: 0.2,
            phi_amplitude: 0.5,
            sigma_mean: 0.1,
            sigma_amplitude: 0.5,
            seed: 9,
        }
        .generate(&g);
        let at = |t: f64| {
            let st = State { t: 0.0, phi: s.phi.map(|v| t * v), sigma: s.sigma.map(|v| t * v) };
            energy(&st, &p).energy
        };
        let (e2, e4, e8) = (at(2.0), at(4.0), at(8.0));
        assert!(e4 > 3.0 * e2 && e8 > 3.0 * e4);
    }
}
